//! Physics, detector and gradient checks behind the `selftest` command.

use std::fmt;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dsp::{cfar_detect, CfarParams, Grid, RsaPipeline, DOPPLER_BINS, RANGE_BINS, RSA_RANGE_BINS};
use crate::nn::gradcheck::{gradient_suite, OpSummary};
use crate::radar_sim::{noise_std_for_sample_snr, synthesize_frame, ChirpConfig, ScattererState};
use crate::{Result, SPEED_OF_LIGHT};

/// Random single-scatterer trials.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub trials: usize,
    /// Per-sample SNR of the raw returns.
    pub snr_db: f64,
    pub range: (f64, f64),
    pub max_speed: f64,
    /// Largest |azimuth| (rad).
    pub max_azimuth: f64,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            snr_db: 20.0,
            range: (0.1, 1.2),
            max_speed: 1.5,
            max_azimuth: 45f64.to_radians(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepTrial {
    pub truth: ScattererState,
    /// Nearest (Doppler, range) bin from the beat and Doppler frequencies.
    pub expected_bin: (usize, usize),
    pub peak_bin: (usize, usize),
    pub azimuth: f64,
}

impl SweepTrial {
    pub fn bins_ok(&self) -> bool {
        self.peak_bin.0.abs_diff(self.expected_bin.0) <= 1 && self.peak_bin.1.abs_diff(self.expected_bin.1) <= 1
    }

    pub fn azimuth_error_deg(&self) -> f64 {
        (self.azimuth - self.truth.azimuth).abs().to_degrees()
    }
}

/// Analytic (Doppler, range) bin of a scatterer in the padded 64x256 map.
pub fn analytic_bin(cfg: &ChirpConfig, range: f64, velocity: f64) -> (usize, usize) {
    let f_d = 2.0 * velocity * cfg.center_frequency() / SPEED_OF_LIGHT;
    let f_beat = 2.0 * cfg.slope() * range / SPEED_OF_LIGHT + f_d;
    let range_bin = (f_beat / cfg.sample_rate() * RANGE_BINS as f64).round();
    let doppler_bin = (f_d * cfg.chirp_interval() * DOPPLER_BINS as f64).round() + (DOPPLER_BINS / 2) as f64;
    (doppler_bin as usize, range_bin as usize)
}

pub fn target_sweep(chirp: &ChirpConfig, sweep: &SweepConfig) -> Result<Vec<SweepTrial>> {
    let mut cfg = chirp.clone();
    cfg.noise_std = noise_std_for_sample_snr(cfg.amplitude, sweep.snr_db);
    let mut pipeline = RsaPipeline::new(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sweep.seed);
    (0..sweep.trials)
        .map(|_| {
            let truth = ScattererState::new(
                rng.random_range(sweep.range.0..=sweep.range.1),
                rng.random_range(-sweep.max_speed..=sweep.max_speed),
                rng.random_range(-sweep.max_azimuth..=sweep.max_azimuth),
                1.0,
            );
            let cube = synthesize_frame(&cfg, &[truth], rng.random())?;
            let est = pipeline.estimate_target(&cube)?;
            Ok(SweepTrial {
                truth,
                expected_bin: analytic_bin(&cfg, truth.range, truth.radial_velocity),
                peak_bin: (est.doppler_bin, est.range_bin),
                azimuth: est.azimuth,
            })
        })
        .collect()
}

/// CA-CFAR on maps of squared complex Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FalseAlarmTrial {
    pub cells: usize,
    pub alarms: usize,
}

impl FalseAlarmTrial {
    pub fn rate(&self) -> f64 {
        self.alarms as f64 / self.cells as f64
    }
}

pub fn cfar_false_alarms(min_cells: usize, params: &CfarParams, seed: u64) -> Result<FalseAlarmTrial> {
    let (rows, cols) = (DOPPLER_BINS, RANGE_BINS);
    let maps = min_cells.div_ceil(rows * cols);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut alarms = 0;
    for _ in 0..maps {
        let power = (0..rows * cols)
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                re * re + im * im
            })
            .collect();
        alarms += cfar_detect(&Grid::from_vec(rows, cols, power), params)?.count();
    }
    Ok(FalseAlarmTrial {
        cells: maps * rows * cols,
        alarms,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeStage {
    pub name: &'static str,
    pub expected: Vec<usize>,
    pub actual: Vec<usize>,
}

impl ShapeStage {
    pub fn ok(&self) -> bool {
        self.expected == self.actual
    }
}

/// Shapes observed along the pipeline for one 128-frame recording.
pub fn shape_contract(chirp: &ChirpConfig, seed: u64) -> Result<Vec<ShapeStage>> {
    let mut cfg = chirp.clone();
    cfg.noise_std = noise_std_for_sample_snr(cfg.amplitude, 20.0);
    let target = ScattererState::new(0.5, 0.4, 0.2, 1.0);
    let cubes = (0..crate::dsp::RSA_FRAMES as u64)
        .map(|k| synthesize_frame(&cfg, &[target], seed.wrapping_add(k)))
        .collect::<Result<Vec<_>>>()?;
    let mut pipeline = RsaPipeline::new(&cfg)?;
    let analysis = pipeline.analyze(&cubes[0])?;
    let (_, chirps, samples) = cubes[0].shape();
    let map = &analysis.maps[0];
    let cropped = map.crop_range(RSA_RANGE_BINS);
    let (t, r, c) = analysis.frame.shape();
    let (it, ir, ic) = pipeline.rsa_image(&cubes)?.shape();
    let stage = |name, expected: &[usize], actual: Vec<usize>| ShapeStage {
        name,
        expected: expected.to_vec(),
        actual,
    };
    Ok(vec![
        stage("raw frame", &[16, 128], vec![chirps, samples]),
        stage("range-Doppler map", &[64, 256], vec![map.shape().0, map.shape().1]),
        stage("cropped map", &[64, 128], vec![cropped.shape().0, cropped.shape().1]),
        stage("RSA frame", &[1, 128, 3], vec![t, r, c]),
        stage("RSA image", &[128, 128, 3], vec![it, ir, ic]),
    ])
}

/// One named pass/fail line.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {} ({:.1} s)", self.name, self.detail, self.elapsed.as_secs_f64())
    }
}

/// Thresholds of the built-in checks.
pub const SWEEP_MIN_HITS: usize = 95;
pub const AOA_TOLERANCE_DEG: f64 = 2.0;
pub const CFAR_PFA: f64 = 1e-3;
pub const CFAR_MIN_CELLS: usize = 1_000_000;
pub const CFAR_RATE_BAND: (f64, f64) = (0.5e-3, 2e-3);
pub const GRADCHECK_INSTANCES: usize = 20;

pub fn check_range_doppler(trials: &[SweepTrial], elapsed: Duration) -> CheckResult {
    let hits = trials.iter().filter(|t| t.bins_ok()).count();
    CheckResult {
        name: "range/Doppler peak",
        passed: trials.len() >= 100 && hits >= SWEEP_MIN_HITS * trials.len() / 100,
        detail: format!("{hits}/{} peaks within +-1 bin", trials.len()),
        elapsed,
    }
}

pub fn check_azimuth(trials: &[SweepTrial], elapsed: Duration) -> CheckResult {
    let hits = trials.iter().filter(|t| t.azimuth_error_deg() <= AOA_TOLERANCE_DEG).count();
    let worst = trials.iter().map(SweepTrial::azimuth_error_deg).fold(0.0, f64::max);
    CheckResult {
        name: "azimuth",
        passed: trials.len() >= 100 && hits >= SWEEP_MIN_HITS * trials.len() / 100,
        detail: format!("{hits}/{} within 2 deg, worst {worst:.3} deg", trials.len()),
        elapsed,
    }
}

pub fn check_false_alarms(trial: FalseAlarmTrial, elapsed: Duration) -> CheckResult {
    let rate = trial.rate();
    CheckResult {
        name: "CFAR false-alarm rate",
        passed: trial.cells >= CFAR_MIN_CELLS && rate >= CFAR_RATE_BAND.0 && rate <= CFAR_RATE_BAND.1,
        detail: format!("{} alarms in {} cells, rate {rate:.3e}", trial.alarms, trial.cells),
        elapsed,
    }
}

pub fn check_gradients(summaries: &[OpSummary], elapsed: Duration) -> CheckResult {
    let failed: Vec<String> = summaries.iter().filter(|s| !s.passed()).map(|s| s.op.to_string()).collect();
    let worst = summaries.iter().map(|s| s.result.max_rel_error).fold(0.0, f64::max);
    let enough = summaries.iter().all(|s| s.instances >= GRADCHECK_INSTANCES);
    CheckResult {
        name: "gradient check",
        passed: failed.is_empty() && enough && !summaries.is_empty(),
        detail: if failed.is_empty() {
            format!("{} ops, worst relative error {worst:.2e}", summaries.len())
        } else {
            format!("failed: {}", failed.join(", "))
        },
        elapsed,
    }
}

pub fn check_shapes(stages: &[ShapeStage], elapsed: Duration) -> CheckResult {
    let chain: Vec<String> = stages
        .iter()
        .map(|s| s.actual.iter().map(usize::to_string).collect::<Vec<_>>().join("x"))
        .collect();
    CheckResult {
        name: "shape contract",
        passed: stages.len() == 5 && stages.iter().all(ShapeStage::ok),
        detail: chain.join(" -> "),
        elapsed,
    }
}

/// Runs every check; errors inside a check are reported as failures.
pub fn run_selftest(seed: u64) -> Vec<CheckResult> {
    let chirp = ChirpConfig::default();
    let mut results = Vec::new();
    let failed = |name, e: &crate::Error, elapsed| CheckResult {
        name,
        passed: false,
        detail: e.to_string(),
        elapsed,
    };

    let t = Instant::now();
    let sweep = SweepConfig {
        seed,
        ..SweepConfig::default()
    };
    match target_sweep(&chirp, &sweep) {
        Ok(trials) => {
            let elapsed = t.elapsed();
            results.push(check_range_doppler(&trials, elapsed));
            results.push(check_azimuth(&trials, elapsed));
        }
        Err(e) => {
            results.push(failed("range/Doppler peak", &e, t.elapsed()));
            results.push(failed("azimuth", &e, t.elapsed()));
        }
    }

    let t = Instant::now();
    let params = CfarParams {
        pfa: CFAR_PFA,
        ..CfarParams::default()
    };
    results.push(match cfar_false_alarms(CFAR_MIN_CELLS, &params, seed ^ 0xcfa) {
        Ok(trial) => check_false_alarms(trial, t.elapsed()),
        Err(e) => failed("CFAR false-alarm rate", &e, t.elapsed()),
    });

    let t = Instant::now();
    results.push(match gradient_suite(GRADCHECK_INSTANCES, seed) {
        Ok(s) => check_gradients(&s, t.elapsed()),
        Err(e) => failed("gradient check", &e, t.elapsed()),
    });

    let t = Instant::now();
    results.push(match shape_contract(&chirp, seed) {
        Ok(s) => check_shapes(&s, t.elapsed()),
        Err(e) => failed("shape contract", &e, t.elapsed()),
    });
    results
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_bins_for_static_target() {
        let cfg = ChirpConfig::default();
        // 1.07 cm per padded range bin, so 0.5 m sits near bin 46.7
        let (d, r) = analytic_bin(&cfg, 0.5, 0.0);
        assert_eq!(d, 32);
        let exact = 0.5 / (SPEED_OF_LIGHT / (2.0 * 7.0e9) * 128.0 / 256.0);
        assert_eq!(r, exact.round() as usize);
    }

    #[test]
    fn noiseless_sweep_hits_every_bin() {
        let sweep = SweepConfig {
            trials: 20,
            snr_db: 80.0,
            seed: 3,
            ..SweepConfig::default()
        };
        let trials = target_sweep(&ChirpConfig::default(), &sweep).unwrap();
        assert!(trials.iter().all(SweepTrial::bins_ok));
        assert!(trials.iter().all(|t| t.azimuth_error_deg() < 0.5));
    }

    #[test]
    fn false_alarms_near_pfa_on_small_run() {
        let trial = cfar_false_alarms(200_000, &CfarParams::default(), 1).unwrap();
        assert_eq!(trial.cells, 13 * 64 * 256);
        assert!(trial.rate() > 0.4e-3 && trial.rate() < 2.5e-3, "rate {}", trial.rate());
    }

    #[test]
    fn shapes_follow_the_pipeline() {
        let stages = shape_contract(&ChirpConfig::default(), 0).unwrap();
        assert!(stages.iter().all(ShapeStage::ok), "{stages:?}");
        let line = check_shapes(&stages, Duration::ZERO).to_string();
        assert!(line.contains("16x128 -> 64x256 -> 64x128 -> 1x128x3 -> 128x128x3"), "{line}");
    }

    #[test]
    fn failing_lines_say_fail() {
        let trial = FalseAlarmTrial { cells: 10, alarms: 5 };
        let r = check_false_alarms(trial, Duration::ZERO);
        assert!(!r.passed);
        assert!(r.to_string().starts_with("FAIL"));
    }
}
