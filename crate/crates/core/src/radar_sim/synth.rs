use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{gesture_trajectory, ChirpConfig, GestureClass, GestureParams, ScattererState};
use crate::{Error, Result, SPEED_OF_LIGHT};

/// One frame of complex baseband samples, shape `(rx, chirp, sample)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarCube {
    rx_count: usize,
    chirps: usize,
    samples: usize,
    data: Vec<Complex64>,
    /// Start time of the frame (s).
    pub timestamp: f64,
}

impl RadarCube {
    pub fn zeros(rx_count: usize, chirps: usize, samples: usize) -> Self {
        Self {
            rx_count,
            chirps,
            samples,
            data: vec![Complex64::new(0.0, 0.0); rx_count * chirps * samples],
            timestamp: 0.0,
        }
    }

    pub fn from_vec(rx_count: usize, chirps: usize, samples: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rx_count * chirps * samples {
            return Err(Error::invalid(format!(
                "cube data length {} does not match shape ({rx_count}, {chirps}, {samples})",
                data.len()
            )));
        }
        Ok(Self {
            rx_count,
            chirps,
            samples,
            data,
            timestamp: 0.0,
        })
    }

    /// `(L, P, N)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rx_count, self.chirps, self.samples)
    }

    pub fn get(&self, rx: usize, chirp: usize, sample: usize) -> Complex64 {
        self.data[(rx * self.chirps + chirp) * self.samples + sample]
    }

    /// Chirp-by-sample matrix of one receiver, row major.
    pub fn receiver(&self, rx: usize) -> &[Complex64] {
        let len = self.chirps * self.samples;
        &self.data[rx * len..(rx + 1) * len]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn matches(&self, cfg: &ChirpConfig) -> bool {
        self.shape() == (cfg.rx_count, cfg.chirps_per_frame, cfg.samples_per_chirp)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Adds one noise-free point scatterer.
    pub fn add_scatterer(&mut self, cfg: &ChirpConfig, s: &ScattererState) {
        let amplitude = cfg.amplitude * s.reflectivity;
        if amplitude == 0.0 {
            return;
        }
        let f_d = cfg.doppler_frequency(s.radial_velocity);
        let fast = (2.0 * cfg.slope() * s.range / SPEED_OF_LIGHT + f_d) / cfg.sample_rate();
        let spatial = cfg.center_frequency() * cfg.rx_spacing * s.azimuth.sin() / SPEED_OF_LIGHT;
        let slow = f_d * cfg.chirp_interval();
        let constant = 2.0 * cfg.center_frequency() * s.range / SPEED_OF_LIGHT;

        // the phase is separable in (l, p, n); reduce every term mod 1 before exponentiation
        let cis = |cycles: f64| Complex64::from_polar(1.0, 2.0 * PI * cycles.rem_euclid(1.0));
        let fast_terms: Vec<Complex64> = (0..self.samples).map(|n| cis(fast * n as f64)).collect();
        let base = cis(constant) * amplitude;
        for l in 0..self.rx_count {
            let rx_term = base * cis(spatial * l as f64);
            for p in 0..self.chirps {
                let row_term = rx_term * cis(slow * p as f64);
                let start = (l * self.chirps + p) * self.samples;
                for (out, f) in self.data[start..start + self.samples].iter_mut().zip(&fast_terms) {
                    *out += row_term * f;
                }
            }
        }
    }

    /// Adds circular complex Gaussian noise with `E|n|^2 = std^2`.
    pub fn add_noise(&mut self, std: f64, rng: &mut ChaCha8Rng) {
        if std <= 0.0 {
            return;
        }
        let sigma = std * std::f64::consts::FRAC_1_SQRT_2;
        for z in &mut self.data {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            *z += Complex64::new(sigma * re, sigma * im);
        }
    }
}

/// Noise standard deviation giving `snr_db` per raw sample for a scatterer of `amplitude`.
pub fn noise_std_for_sample_snr(amplitude: f64, snr_db: f64) -> f64 {
    amplitude / 10f64.powf(snr_db / 20.0)
}

/// Noise standard deviation giving `snr_db` at the unwindowed range-Doppler
/// peak, i.e. after the `N * P` coherent integration gain.
pub fn noise_std_for_peak_snr(cfg: &ChirpConfig, amplitude: f64, snr_db: f64) -> f64 {
    let gain = (cfg.samples_per_chirp * cfg.chirps_per_frame) as f64;
    amplitude * gain.sqrt() / 10f64.powf(snr_db / 20.0)
}

fn frame_with_rng(cfg: &ChirpConfig, scatterers: &[ScattererState], rng: &mut ChaCha8Rng) -> RadarCube {
    let mut cube = RadarCube::zeros(cfg.rx_count, cfg.chirps_per_frame, cfg.samples_per_chirp);
    for s in scatterers {
        cube.add_scatterer(cfg, s);
    }
    cube.add_noise(cfg.noise_std, rng);
    cube
}

/// Synthesises one frame for a set of scatterers plus noise of `cfg.noise_std`.
pub fn synthesize_frame(cfg: &ChirpConfig, scatterers: &[ScattererState], rng_seed: u64) -> Result<RadarCube> {
    cfg.validate()?;
    for s in scatterers {
        s.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok(frame_with_rng(cfg, scatterers, &mut rng))
}

/// Static torso return in front of the radar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyClutter {
    pub range: f64,
    pub reflectivity: f64,
}

impl Default for BodyClutter {
    fn default() -> Self {
        Self {
            range: 0.5,
            reflectivity: 3.0,
        }
    }
}

impl BodyClutter {
    pub fn scatterer(&self) -> ScattererState {
        ScattererState::new(self.range, 0.0, 0.0, self.reflectivity)
    }
}

/// Frame-by-frame generator for one gesture recording.
///
/// Frame `k` is taken at `t = k * T_f`. The generator owns its RNG, so the
/// sequence is a pure function of its inputs.
pub struct RecordingSynth {
    cfg: ChirpConfig,
    gesture: GestureClass,
    params: GestureParams,
    body: Option<BodyClutter>,
    frames: usize,
    next: usize,
    rng: ChaCha8Rng,
}

impl RecordingSynth {
    pub fn new(
        cfg: &ChirpConfig,
        gesture: GestureClass,
        params: &GestureParams,
        body: Option<BodyClutter>,
        frames: usize,
        rng_seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        params.validate(gesture)?;
        if frames == 0 {
            return Err(Error::invalid("a recording needs at least one frame"));
        }
        if let Some(b) = &body {
            b.scatterer().validate()?;
        }
        Ok(Self {
            cfg: cfg.clone(),
            gesture,
            params: *params,
            body,
            frames,
            next: 0,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        })
    }

    /// Hand state of frame `k`.
    pub fn hand_at(&self, k: usize) -> ScattererState {
        let t = k as f64 * self.cfg.frame_period;
        gesture_trajectory(self.gesture, &self.params, t).expect("parameters validated on construction")
    }
}

impl Iterator for RecordingSynth {
    type Item = RadarCube;

    fn next(&mut self) -> Option<RadarCube> {
        if self.next >= self.frames {
            return None;
        }
        let k = self.next;
        self.next += 1;
        let mut scatterers = vec![self.hand_at(k)];
        scatterers.extend(self.body.map(|b| b.scatterer()));
        let mut cube = frame_with_rng(&self.cfg, &scatterers, &mut self.rng);
        cube.timestamp = k as f64 * self.cfg.frame_period;
        Some(cube)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.frames - self.next;
        (left, Some(left))
    }
}

/// Synthesises `frames` consecutive frames of a gesture with optional body clutter.
pub fn synthesize_recording(
    cfg: &ChirpConfig,
    gesture: GestureClass,
    params: &GestureParams,
    body: Option<BodyClutter>,
    frames: usize,
    rng_seed: u64,
) -> Result<Vec<RadarCube>> {
    Ok(RecordingSynth::new(cfg, gesture, params, body, frames, rng_seed)?.collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rustfft::FftPlanner;

    fn quiet() -> ChirpConfig {
        ChirpConfig::default()
    }

    /// Direct evaluation of the per-index phase, independent of the separable implementation.
    fn model_phase(cfg: &ChirpConfig, s: &ScattererState, l: usize, n: usize, p: usize) -> f64 {
        let c = SPEED_OF_LIGHT;
        let f_d = 2.0 * s.radial_velocity / (c / cfg.center_frequency());
        let f_s = cfg.samples_per_chirp as f64 / cfg.chirp_duration;
        let k = (cfg.f_max - cfg.f_min) / cfg.chirp_duration;
        let cycles = (2.0 * k * s.range / c + f_d) * n as f64 / f_s
            + cfg.center_frequency() * l as f64 * cfg.rx_spacing * s.azimuth.sin() / c
            + f_d * p as f64 * cfg.chirp_duration
            + 2.0 * cfg.center_frequency() * s.range / c;
        2.0 * PI * cycles
    }

    fn wrap(x: f64) -> f64 {
        let y = x.rem_euclid(2.0 * PI);
        if y > PI {
            y - 2.0 * PI
        } else {
            y
        }
    }

    #[test]
    fn empty_scene_without_noise_is_zero() {
        let cube = synthesize_frame(&quiet(), &[], 1).unwrap();
        assert!(cube.as_slice().iter().all(|z| z.norm() == 0.0));
        assert_eq!(cube.shape(), (4, 16, 128));
    }

    #[test]
    fn static_target_repeats_every_chirp() {
        let cfg = quiet();
        let s = ScattererState::new(0.5, 0.0, 0.0, 1.0);
        let cube = synthesize_frame(&cfg, &[s], 3).unwrap();
        for l in 0..cfg.rx_count {
            for p in 1..cfg.chirps_per_frame {
                for n in 0..cfg.samples_per_chirp {
                    assert_eq!(cube.get(l, p, n), cube.get(l, 0, n));
                }
            }
        }
    }

    #[test]
    fn fast_time_tone_lands_on_beat_frequency_bin() {
        let cfg = quiet();
        let s = ScattererState::new(0.7, 1.1, 0.2, 1.0);
        let cube = synthesize_frame(&cfg, &[s], 0).unwrap();
        let pad = 4096;
        let mut row: Vec<Complex64> = cube.receiver(0)[..cfg.samples_per_chirp].to_vec();
        row.resize(pad, Complex64::new(0.0, 0.0));
        FftPlanner::new().plan_fft_forward(pad).process(&mut row);
        let peak = (0..pad).max_by(|&a, &b| row[a].norm().total_cmp(&row[b].norm())).unwrap();
        let measured = peak as f64 * cfg.sample_rate() / pad as f64;
        // n-coefficient of the phase expression
        let expected = 2.0 * cfg.slope() * s.range / SPEED_OF_LIGHT + 2.0 * s.radial_velocity / cfg.wavelength();
        let native_bin = cfg.sample_rate() / cfg.samples_per_chirp as f64;
        assert!((measured - expected).abs() < native_bin, "{measured} vs {expected}");
    }

    #[test]
    fn phase_matches_signal_model() {
        let cfg = quiet();
        let s = ScattererState::new(0.42, -0.9, -0.35, 1.0);
        let cube = synthesize_frame(&cfg, &[s], 0).unwrap();
        let mut worst: f64 = 0.0;
        for l in 0..cfg.rx_count {
            for p in 0..cfg.chirps_per_frame {
                for n in 0..cfg.samples_per_chirp {
                    let got = cube.get(l, p, n).arg();
                    worst = worst.max(wrap(got - model_phase(&cfg, &s, l, n, p)).abs());
                    assert!((cube.get(l, p, n).norm() - 1.0).abs() < 1e-12);
                }
            }
        }
        assert!(worst < 1e-9, "max phase error {worst}");
    }

    #[test]
    fn noise_has_requested_power() {
        let cfg = ChirpConfig {
            noise_std: 2.0,
            ..quiet()
        };
        let cube = synthesize_frame(&cfg, &[], 11).unwrap();
        let power = cube.as_slice().iter().map(|z| z.norm_sqr()).sum::<f64>() / cube.as_slice().len() as f64;
        assert!((power - 4.0).abs() < 0.25, "{power}");
    }

    #[test]
    fn recording_is_deterministic_and_has_body() {
        let cfg = ChirpConfig {
            noise_std: 0.5,
            ..quiet()
        };
        let p = GestureParams::nominal(GestureClass::Left);
        let a = synthesize_recording(&cfg, GestureClass::Left, &p, Some(BodyClutter::default()), 128, 9).unwrap();
        let b = synthesize_recording(&cfg, GestureClass::Left, &p, Some(BodyClutter::default()), 128, 9).unwrap();
        assert_eq!(a.len(), 128);
        assert_eq!(a, b);
        assert!((a[5].timestamp - 0.05).abs() < 1e-15);
    }

    #[test]
    fn click_recording_range_decreases_during_approach() {
        let cfg = quiet();
        let p = GestureParams::nominal(GestureClass::Click);
        let synth = RecordingSynth::new(&cfg, GestureClass::Click, &p, None, 128, 0).unwrap();
        let approach_frames = (0.5 * p.duration / cfg.frame_period) as usize;
        for k in 1..=approach_frames {
            assert!(synth.hand_at(k).range < synth.hand_at(k - 1).range, "frame {k}");
        }
    }

    #[test]
    fn zero_frames_rejected() {
        let p = GestureParams::nominal(GestureClass::Wrist);
        assert!(synthesize_recording(&quiet(), GestureClass::Wrist, &p, None, 0, 0).is_err());
    }

    proptest! {
        #[test]
        fn superposition_is_exact(r1 in 0.1..1.2f64, r2 in 0.1..1.2f64, v in -1.5..1.5f64, th in -0.8..0.8f64) {
            let cfg = quiet();
            let a = ScattererState::new(r1, v, th, 1.0);
            let b = ScattererState::new(r2, -v, -th, 0.5);
            let both = synthesize_frame(&cfg, &[a, b], 0).unwrap();
            let ca = synthesize_frame(&cfg, &[a], 0).unwrap();
            let cb = synthesize_frame(&cfg, &[b], 0).unwrap();
            for ((x, y), z) in both.as_slice().iter().zip(ca.as_slice()).zip(cb.as_slice()) {
                prop_assert_eq!(*x, *y + *z);
            }
        }
    }
}
