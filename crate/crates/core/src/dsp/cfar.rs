//! Two-dimensional cell-averaging CFAR.
//!
//! For each cell under test the training region is the rectangle of
//! half-size `guard + train` minus the guard rectangle of half-size `guard`,
//! truncated at the map edges. With `M` training cells the threshold is
//! `T * mean`, `T = M * (pfa^(-1/M) - 1)`, which holds the false-alarm rate
//! at `pfa` for exponentially distributed (square-law) noise.

use serde::{Deserialize, Serialize};

use super::Grid;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfarParams {
    pub pfa: f64,
    /// Guard cells per side along (Doppler, range).
    pub guard: (usize, usize),
    /// Training cells per side along (Doppler, range), outside the guard cells.
    pub train: (usize, usize),
}

impl Default for CfarParams {
    fn default() -> Self {
        Self {
            pfa: 1e-3,
            guard: (1, 2),
            train: (4, 8),
        }
    }
}

impl CfarParams {
    /// Training-cell count of an interior cell.
    pub fn interior_training_cells(&self) -> usize {
        let outer = (2 * (self.guard.0 + self.train.0) + 1) * (2 * (self.guard.1 + self.train.1) + 1);
        let inner = (2 * self.guard.0 + 1) * (2 * self.guard.1 + 1);
        outer - inner
    }

    fn validate(&self) -> Result<()> {
        if !(self.pfa > 0.0 && self.pfa < 0.5) {
            return Err(Error::invalid(format!("pfa must lie in (0, 0.5), got {}", self.pfa)));
        }
        if self.interior_training_cells() == 0 {
            return Err(Error::invalid("CFAR window has no training cells"));
        }
        Ok(())
    }
}

/// Threshold multiplier `T` for `m` training cells.
pub fn ca_cfar_scale(m: usize, pfa: f64) -> f64 {
    let m = m as f64;
    m * (pfa.powf(-1.0 / m) - 1.0)
}

/// Detections plus the local noise estimate of every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionMask {
    pub detected: Grid<bool>,
    /// Mean training-cell power.
    pub noise: Grid<f64>,
}

impl DetectionMask {
    pub fn count(&self) -> usize {
        self.detected.as_slice().iter().filter(|&&d| d).count()
    }

    pub fn crop_range(&self, bins: usize) -> Self {
        Self {
            detected: self.detected.crop_cols(0..bins),
            noise: self.noise.crop_cols(0..bins),
        }
    }
}

/// Summed-area table with a zero border: `table[(r, c)]` is the sum of `power[..r, ..c]`.
fn integral(power: &Grid<f64>) -> Grid<f64> {
    let (rows, cols) = power.shape();
    let mut table = Grid::filled(rows + 1, cols + 1, 0.0);
    for r in 0..rows {
        let mut running = 0.0;
        for c in 0..cols {
            running += power[(r, c)];
            table[(r + 1, c + 1)] = table[(r, c + 1)] + running;
        }
    }
    table
}

fn rect(table: &Grid<f64>, r0: usize, r1: usize, c0: usize, c1: usize) -> f64 {
    table[(r1, c1)] - table[(r0, c1)] - table[(r1, c0)] + table[(r0, c0)]
}

/// Runs CA-CFAR on a square-law (power) map.
pub fn cfar_detect(power: &Grid<f64>, params: &CfarParams) -> Result<DetectionMask> {
    params.validate()?;
    let (rows, cols) = power.shape();
    let table = integral(power);
    let span = |centre: usize, half: usize, len: usize| (centre.saturating_sub(half), (centre + half + 1).min(len));
    let (gd, gr) = params.guard;
    let (od, or) = (gd + params.train.0, gr + params.train.1);

    // edge truncation leaves only a handful of distinct training-cell counts
    let mut scales = vec![f64::NAN; (2 * od + 1) * (2 * or + 1) + 1];
    let mut detected = Grid::filled(rows, cols, false);
    let mut noise = Grid::filled(rows, cols, 0.0);
    for r in 0..rows {
        let (or0, or1) = span(r, od, rows);
        let (ir0, ir1) = span(r, gd, rows);
        for c in 0..cols {
            let (oc0, oc1) = span(c, or, cols);
            let (ic0, ic1) = span(c, gr, cols);
            let m = (or1 - or0) * (oc1 - oc0) - (ir1 - ir0) * (ic1 - ic0);
            if m == 0 {
                continue;
            }
            let sum = (rect(&table, or0, or1, oc0, oc1) - rect(&table, ir0, ir1, ic0, ic1)).max(0.0);
            let mean = sum / m as f64;
            noise[(r, c)] = mean;
            if scales[m].is_nan() {
                scales[m] = ca_cfar_scale(m, params.pfa);
            }
            detected[(r, c)] = power[(r, c)] > scales[m] * mean;
        }
    }
    Ok(DetectionMask { detected, noise })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp1};

    fn exponential_map(rows: usize, cols: usize, seed: u64) -> Grid<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid::from_vec(rows, cols, (0..rows * cols).map(|_| Exp1.sample(&mut rng)).collect())
    }

    #[test]
    fn default_window_has_216_training_cells() {
        assert_eq!(CfarParams::default().interior_training_cells(), 216);
    }

    #[test]
    fn constant_map_is_never_detected() {
        let params = CfarParams {
            pfa: 1e-3,
            guard: (0, 0),
            train: (1, 5),
        };
        assert_eq!(params.interior_training_cells(), 32);
        // T = 32 * (1000^(1/32) - 1) = 7.710...; a cell equal to the mean needs T < 1 to fire
        let t = ca_cfar_scale(32, 1e-3);
        assert!((t - 7.710008344055026).abs() < 1e-9);
        let mask = cfar_detect(&Grid::filled(64, 256, 3.5), &params).unwrap();
        assert_eq!(mask.count(), 0);
    }

    #[test]
    fn strong_cell_is_detected() {
        let mut map = exponential_map(64, 256, 4);
        map[(20, 100)] = 100.0;
        let mask = cfar_detect(&map, &CfarParams::default()).unwrap();
        assert!(mask.detected[(20, 100)]);
        let t = ca_cfar_scale(216, 1e-3);
        assert!(100.0 > t * mask.noise[(20, 100)]);
    }

    #[test]
    fn degenerate_window_rejected() {
        let params = CfarParams {
            train: (0, 0),
            ..CfarParams::default()
        };
        assert!(matches!(
            cfar_detect(&Grid::filled(8, 8, 1.0), &params),
            Err(Error::InvalidArgument(_))
        ));
        let bad_pfa = CfarParams {
            pfa: 0.7,
            ..CfarParams::default()
        };
        assert!(cfar_detect(&Grid::filled(8, 8, 1.0), &bad_pfa).is_err());
    }

    #[test]
    fn noise_estimate_matches_brute_force() {
        let map = exponential_map(12, 30, 8);
        let params = CfarParams::default();
        let mask = cfar_detect(&map, &params).unwrap();
        for (r, c) in [(0, 0), (5, 15), (11, 29), (3, 1)] {
            let mut sum = 0.0;
            let mut m = 0;
            for rr in 0..12i64 {
                for cc in 0..30i64 {
                    let (dr, dc) = ((rr - r as i64).abs(), (cc - c as i64).abs());
                    let in_outer = dr <= 5 && dc <= 10;
                    let in_guard = dr <= 1 && dc <= 2;
                    if in_outer && !in_guard {
                        sum += map[(rr as usize, cc as usize)];
                        m += 1;
                    }
                }
            }
            assert!((mask.noise[(r, c)] - sum / m as f64).abs() < 1e-12);
            assert_eq!(mask.detected[(r, c)], map[(r, c)] > ca_cfar_scale(m, 1e-3) * sum / m as f64);
        }
    }

    proptest! {
        #[test]
        fn scale_invariance(seed in any::<u64>(), k in 1e-3..1e3f64) {
            let mut map = exponential_map(32, 64, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            for _ in 0..5 {
                map[(rng.random_range(0..32), rng.random_range(0..64))] = 60.0;
            }
            let scaled = map.map(|v| v * k);
            let a = cfar_detect(&map, &CfarParams::default()).unwrap();
            let b = cfar_detect(&scaled, &CfarParams::default()).unwrap();
            prop_assert_eq!(a.detected, b.detected);
        }
    }
}
