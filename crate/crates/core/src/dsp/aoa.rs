use std::f64::consts::PI;

use num_complex::Complex64;

use super::RangeDopplerMap;
use crate::radar_sim::ChirpConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoaEstimate {
    /// Azimuth (rad).
    pub azimuth: f64,
    /// True when noise pushed the arcsine argument outside [-1, 1].
    pub clamped: bool,
}

/// Wraps a phase to (-pi, pi].
pub fn wrap_phase(phi: f64) -> f64 {
    if phi > -PI && phi <= PI {
        return phi;
    }
    if phi > PI && phi <= 3.0 * PI {
        return phi - 2.0 * PI;
    }
    if phi > -3.0 * PI && phi <= -PI {
        return phi + 2.0 * PI;
    }
    let w = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Azimuth from the phasors of the same cell on two receivers spaced `spacing` apart.
///
/// `a` is the receiver further along the array, so a positive azimuth gives
/// a positive phase difference `arg(a) - arg(b)`.
pub fn aoa_from_phasors(a: Complex64, b: Complex64, wavelength: f64, spacing: f64) -> AoaEstimate {
    let delta = wrap_phase(a.arg() - b.arg());
    let s = delta * wavelength / (2.0 * PI * spacing);
    AoaEstimate {
        azimuth: s.clamp(-1.0, 1.0).asin(),
        clamped: s.abs() > 1.0,
    }
}

/// Azimuth at cell `(doppler, range)` from maps of two receivers.
pub fn aoa_estimate(
    rdm_a: &RangeDopplerMap,
    rdm_b: &RangeDopplerMap,
    cell: (usize, usize),
    cfg: &ChirpConfig,
) -> AoaEstimate {
    aoa_from_phasors(rdm_a.cells[cell], rdm_b.cells[cell], cfg.wavelength(), cfg.rx_spacing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_phasors_give_broadside() {
        let z = Complex64::new(0.3, -1.2);
        let est = aoa_from_phasors(z, z, 0.005, 0.0025);
        assert_eq!(est.azimuth, 0.0);
        assert!(!est.clamped);
    }

    #[test]
    fn quarter_cycle_at_half_wavelength_is_thirty_degrees() {
        let lambda = 0.005;
        let a = Complex64::from_polar(1.0, 0.4 + PI / 2.0);
        let b = Complex64::from_polar(1.0, 0.4);
        let est = aoa_from_phasors(a, b, lambda, lambda / 2.0);
        assert!((est.azimuth - PI / 6.0).abs() < 1e-12);
    }

    #[test]
    fn overflow_is_clamped_and_flagged() {
        let lambda = 0.005;
        let a = Complex64::from_polar(1.0, 2.0);
        let est = aoa_from_phasors(a, Complex64::new(1.0, 0.0), lambda, lambda);
        assert!(!est.clamped);
        let est = aoa_from_phasors(a, Complex64::new(1.0, 0.0), lambda, lambda / 4.0);
        assert!(est.clamped);
        assert_eq!(est.azimuth, PI / 2.0);
    }

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_phase(PI), PI);
        assert_eq!(wrap_phase(-PI), PI);
        assert!((wrap_phase(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn swapping_receivers_negates(pa in -PI..PI, pb in -PI..PI, ma in 0.1..10.0f64, mb in 0.1..10.0f64) {
            let a = Complex64::from_polar(ma, pa);
            let b = Complex64::from_polar(mb, pb);
            let fwd = aoa_from_phasors(a, b, 0.005, 0.0025);
            let rev = aoa_from_phasors(b, a, 0.005, 0.0025);
            // exact except on the branch point where the wrapped difference is pi
            prop_assume!((wrap_phase(pa - pb).abs() - PI).abs() > 1e-9);
            prop_assert_eq!(fwd.azimuth, -rev.azimuth);
        }
    }
}
