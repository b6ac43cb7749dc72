use serde::{Deserialize, Serialize};

use crate::{Error, Result, SPEED_OF_LIGHT};

/// Waveform and receive-array parameters.
///
/// Samples are complex (I/Q), the sample rate is `N / T_c` and chirps are
/// transmitted back to back, so the chirp repetition interval equals `T_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChirpConfig {
    /// Sweep start frequency (Hz).
    pub f_min: f64,
    /// Sweep stop frequency (Hz).
    pub f_max: f64,
    /// Chirp duration `T_c` (s).
    pub chirp_duration: f64,
    /// Fast-time samples per chirp `N`.
    pub samples_per_chirp: usize,
    /// Chirps per frame `P`.
    pub chirps_per_frame: usize,
    /// Frame period `T_f` (s).
    pub frame_period: f64,
    /// Number of receive antennas `L`.
    pub rx_count: usize,
    /// Receive antenna spacing `d` (m).
    pub rx_spacing: f64,
    /// Global amplitude scale applied to every scatterer.
    pub amplitude: f64,
    /// Standard deviation of the circular complex noise (`E|n|^2 = noise_std^2`).
    pub noise_std: f64,
}

impl Default for ChirpConfig {
    fn default() -> Self {
        let f_min = 57.0e9;
        let f_max = 64.0e9;
        let wavelength = SPEED_OF_LIGHT / (0.5 * (f_min + f_max));
        Self {
            f_min,
            f_max,
            chirp_duration: 64.0e-6,
            samples_per_chirp: 128,
            chirps_per_frame: 16,
            frame_period: 10.0e-3,
            rx_count: 4,
            rx_spacing: 0.5 * wavelength,
            amplitude: 1.0,
            noise_std: 0.0,
        }
    }
}

impl ChirpConfig {
    pub fn bandwidth(&self) -> f64 {
        self.f_max - self.f_min
    }

    /// Chirp slope `B / T_c` (Hz/s).
    pub fn slope(&self) -> f64 {
        self.bandwidth() / self.chirp_duration
    }

    pub fn center_frequency(&self) -> f64 {
        0.5 * (self.f_min + self.f_max)
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.center_frequency()
    }

    /// Complex sample rate `N / T_c` (Hz).
    pub fn sample_rate(&self) -> f64 {
        self.samples_per_chirp as f64 / self.chirp_duration
    }

    /// Chirp repetition interval `T_0`; chirps are back to back.
    pub fn chirp_interval(&self) -> f64 {
        self.chirp_duration
    }

    /// Pulse repetition frequency `1 / T_0`.
    pub fn prf(&self) -> f64 {
        1.0 / self.chirp_interval()
    }

    /// Beat frequency of a target at `range` moving at `velocity`.
    pub fn beat_frequency(&self, range: f64, velocity: f64) -> f64 {
        2.0 * self.slope() * range / SPEED_OF_LIGHT + self.doppler_frequency(velocity)
    }

    /// Doppler shift `2 v / lambda`.
    pub fn doppler_frequency(&self, velocity: f64) -> f64 {
        2.0 * velocity / self.wavelength()
    }

    /// Largest unambiguous radial speed `PRF * lambda / 4`.
    pub fn max_velocity(&self) -> f64 {
        self.prf() * self.wavelength() / 4.0
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("f_min", self.f_min),
            ("chirp_duration", self.chirp_duration),
            ("frame_period", self.frame_period),
            ("rx_spacing", self.rx_spacing),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.f_max > self.f_min) {
            return Err(Error::invalid(format!(
                "f_max ({}) must exceed f_min ({})",
                self.f_max, self.f_min
            )));
        }
        if self.samples_per_chirp == 0 || self.chirps_per_frame == 0 || self.rx_count == 0 {
            return Err(Error::invalid("cube dimensions must be non-zero"));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::invalid("noise_std must be finite and non-negative"));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::invalid("amplitude must be finite"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_band_and_derived_quantities() {
        let cfg = ChirpConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.bandwidth(), 7.0e9);
        assert!((cfg.slope() - 7.0e9 / 64.0e-6).abs() < 1.0);
        assert!((cfg.sample_rate() - 2.0e6).abs() < 1e-6);
        assert!((cfg.rx_spacing - cfg.wavelength() / 2.0).abs() < 1e-15);
        assert_eq!((cfg.chirps_per_frame, cfg.samples_per_chirp), (16, 128));
    }

    #[test]
    fn rejects_inverted_band() {
        let cfg = ChirpConfig {
            f_max: 50.0e9,
            ..ChirpConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidArgument(_))));
    }
}
