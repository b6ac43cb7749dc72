use num_complex::Complex64;

use super::{Fft2d, Grid};
use crate::radar_sim::{ChirpConfig, RadarCube};
use crate::{Error, Result, SPEED_OF_LIGHT};

/// Padded Doppler bins per map.
pub const DOPPLER_BINS: usize = 64;
/// Padded range bins per map.
pub const RANGE_BINS: usize = 256;
/// Doppler row holding zero velocity.
pub const ZERO_DOPPLER_BIN: usize = DOPPLER_BINS / 2;

/// Physical units of the map axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdmAxes {
    /// Metres per range bin.
    pub range_resolution: f64,
    /// Metres per second per Doppler bin.
    pub velocity_resolution: f64,
    pub zero_doppler_bin: usize,
}

impl RdmAxes {
    pub fn new(cfg: &ChirpConfig, doppler_bins: usize, range_bins: usize) -> Self {
        let range_resolution =
            SPEED_OF_LIGHT / (2.0 * cfg.bandwidth()) * cfg.samples_per_chirp as f64 / range_bins as f64;
        let velocity_resolution = cfg.prf() / doppler_bins as f64 * cfg.wavelength() / 2.0;
        Self {
            range_resolution,
            velocity_resolution,
            zero_doppler_bin: doppler_bins / 2,
        }
    }

    pub fn range_of(&self, bin: usize) -> f64 {
        bin as f64 * self.range_resolution
    }

    pub fn velocity_of(&self, bin: usize) -> f64 {
        (bin as f64 - self.zero_doppler_bin as f64) * self.velocity_resolution
    }
}

/// Complex range-Doppler spectrum of one receiver, rows = Doppler, columns = range.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeDopplerMap {
    pub cells: Grid<Complex64>,
    pub axes: RdmAxes,
}

impl RangeDopplerMap {
    pub fn shape(&self) -> (usize, usize) {
        self.cells.shape()
    }

    pub fn magnitude(&self) -> Grid<f64> {
        self.cells.map(|z| z.norm())
    }

    pub fn power(&self) -> Grid<f64> {
        self.cells.map(|z| z.norm_sqr())
    }

    /// Cell with the largest magnitude as `(doppler, range)`.
    pub fn peak(&self) -> (usize, usize) {
        argmax(&self.power())
    }

    pub fn crop_range(&self, bins: usize) -> Self {
        Self {
            cells: self.cells.crop_cols(0..bins),
            axes: self.axes,
        }
    }
}

pub(crate) fn argmax(g: &Grid<f64>) -> (usize, usize) {
    let mut best = 0;
    for (i, v) in g.as_slice().iter().enumerate() {
        if *v > g.as_slice()[best] {
            best = i;
        }
    }
    (best / g.cols(), best % g.cols())
}

/// Mean power over receivers.
pub fn noncoherent_power(maps: &[RangeDopplerMap]) -> Result<Grid<f64>> {
    let first = maps.first().ok_or_else(|| Error::invalid("no receiver maps"))?;
    let mut acc = Grid::filled(first.shape().0, first.shape().1, 0.0);
    for m in maps {
        if m.shape() != first.shape() {
            return Err(Error::invalid("receiver maps differ in shape"));
        }
        for (a, z) in acc.as_mut_slice().iter_mut().zip(m.cells.as_slice()) {
            *a += z.norm_sqr();
        }
    }
    let scale = 1.0 / maps.len() as f64;
    acc.as_mut_slice().iter_mut().for_each(|a| *a *= scale);
    Ok(acc)
}

/// Reusable per-receiver 64x256 map builder.
pub struct RangeDopplerProcessor {
    cfg: ChirpConfig,
    fft: Fft2d,
    axes: RdmAxes,
}

impl RangeDopplerProcessor {
    pub fn new(cfg: &ChirpConfig, window: bool) -> Result<Self> {
        cfg.validate()?;
        let fft = Fft2d::new(
            (cfg.chirps_per_frame, cfg.samples_per_chirp),
            (DOPPLER_BINS, RANGE_BINS),
            window,
        )?;
        Ok(Self {
            cfg: cfg.clone(),
            fft,
            axes: RdmAxes::new(cfg, DOPPLER_BINS, RANGE_BINS),
        })
    }

    pub fn axes(&self) -> RdmAxes {
        self.axes
    }

    pub fn process(&mut self, cube: &RadarCube) -> Result<Vec<RangeDopplerMap>> {
        if !cube.matches(&self.cfg) {
            return Err(Error::invalid(format!(
                "cube shape {:?} does not match configuration",
                cube.shape()
            )));
        }
        (0..self.cfg.rx_count)
            .map(|rx| {
                Ok(RangeDopplerMap {
                    cells: self.fft.process(cube.receiver(rx))?,
                    axes: self.axes,
                })
            })
            .collect()
    }
}

/// Hann-windowed range-Doppler maps for every receiver of a cube.
pub fn range_doppler_map(cfg: &ChirpConfig, cube: &RadarCube) -> Result<Vec<RangeDopplerMap>> {
    RangeDopplerProcessor::new(cfg, true)?.process(cube)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radar_sim::{synthesize_frame, ScattererState};
    use std::f64::consts::PI;

    /// Bins predicted by inverting f_b = 2*alpha*R/c + f_d and f_d = 2v/lambda, written out from scratch.
    fn analytic_bins(cfg: &ChirpConfig, r: f64, v: f64) -> (i64, i64) {
        let lambda = SPEED_OF_LIGHT / ((cfg.f_min + cfg.f_max) / 2.0);
        let fd = 2.0 * v / lambda;
        let alpha = (cfg.f_max - cfg.f_min) / cfg.chirp_duration;
        let fs = cfg.samples_per_chirp as f64 / cfg.chirp_duration;
        let range_bin = ((2.0 * alpha * r / SPEED_OF_LIGHT + fd) / fs * 256.0).round() as i64;
        let doppler_bin = 32 + (fd * cfg.chirp_duration * 64.0).round() as i64;
        (doppler_bin, range_bin)
    }

    fn peak_for(s: ScattererState) -> ((usize, usize), (i64, i64)) {
        let cfg = ChirpConfig::default();
        let cube = synthesize_frame(&cfg, &[s], 0).unwrap();
        let maps = range_doppler_map(&cfg, &cube).unwrap();
        assert_eq!(maps.len(), 4);
        assert_eq!(maps[0].shape(), (64, 256));
        (maps[0].peak(), analytic_bins(&cfg, s.range, s.radial_velocity))
    }

    #[test]
    fn static_target_sits_at_zero_doppler() {
        let ((d, r), (_, er)) = peak_for(ScattererState::new(0.5, 0.0, 0.0, 1.0));
        assert_eq!(d, 32);
        assert!((r as i64 - er).abs() <= 1);
    }

    #[test]
    fn moving_target_doppler_bin() {
        let ((d, _), (ed, _)) = peak_for(ScattererState::new(0.5, 0.8, 0.0, 1.0));
        assert_eq!(ed, 33);
        assert!((d as i64 - ed).abs() <= 1);
    }

    #[test]
    fn range_bin_at_half_metre() {
        let ((_, r), (_, er)) = peak_for(ScattererState::new(0.5, 0.0, 0.3, 1.0));
        assert_eq!(er, 47);
        assert!((r as i64 - er).abs() <= 1);
    }

    #[test]
    fn peak_invariant_to_global_phase() {
        let cfg = ChirpConfig {
            noise_std: 0.3,
            ..ChirpConfig::default()
        };
        let cube = synthesize_frame(&cfg, &[ScattererState::new(0.8, -0.6, 0.2, 1.0)], 5).unwrap();
        let peak = range_doppler_map(&cfg, &cube).unwrap()[0].peak();
        for phi in [0.3, 1.7, PI, -2.2] {
            let mut rotated = cube.clone();
            let rot = Complex64::from_polar(1.0, phi);
            rotated.as_mut_slice().iter_mut().for_each(|z| *z *= rot);
            assert_eq!(range_doppler_map(&cfg, &rotated).unwrap()[0].peak(), peak);
        }
    }

    #[test]
    fn axes_resolution() {
        let cfg = ChirpConfig::default();
        let axes = RdmAxes::new(&cfg, 64, 256);
        assert!((axes.range_resolution - SPEED_OF_LIGHT / 14.0e9 / 2.0).abs() < 1e-12);
        assert!((axes.velocity_of(64) - 32.0 * axes.velocity_resolution).abs() < 1e-12);
        assert!((axes.velocity_resolution * 32.0 - cfg.max_velocity()).abs() < 1e-9);
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let cfg = ChirpConfig::default();
        let cube = RadarCube::zeros(2, 16, 128);
        assert!(range_doppler_map(&cfg, &cube).is_err());
    }
}
