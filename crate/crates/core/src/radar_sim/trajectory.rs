use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// The four hand gestures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum GestureClass {
    Left,
    Right,
    Click,
    Wrist,
}

impl GestureClass {
    pub const ALL: [GestureClass; 4] = [Self::Left, Self::Right, Self::Click, Self::Wrist];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown gesture class index {index}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Left => "LEFT",
            Self::Right => "RIGHT",
            Self::Click => "CLICK",
            Self::Wrist => "WRIST",
        }
    }
}

impl fmt::Display for GestureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GestureClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown gesture class {s:?}")))
    }
}

/// Instantaneous state of one point scatterer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScattererState {
    /// Range (m).
    pub range: f64,
    /// Radial velocity, the time derivative of `range` (m/s).
    pub radial_velocity: f64,
    /// Azimuth (rad), positive towards increasing receiver index phase.
    pub azimuth: f64,
    /// Amplitude factor.
    pub reflectivity: f64,
}

impl ScattererState {
    pub fn new(range: f64, radial_velocity: f64, azimuth: f64, reflectivity: f64) -> Self {
        Self {
            range,
            radial_velocity,
            azimuth,
            reflectivity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.range.is_finite() && self.range > 0.0) {
            return Err(Error::invalid(format!("scatterer range must be > 0, got {}", self.range)));
        }
        if !(self.azimuth.abs() < PI / 2.0) {
            return Err(Error::invalid(format!(
                "scatterer azimuth must lie in (-pi/2, pi/2), got {}",
                self.azimuth
            )));
        }
        if !(self.radial_velocity.is_finite() && self.radial_velocity.abs() < 1.0e3) {
            return Err(Error::invalid("scatterer velocity must be finite and small"));
        }
        if !self.reflectivity.is_finite() {
            return Err(Error::invalid("scatterer reflectivity must be finite"));
        }
        Ok(())
    }
}

/// Kinematic parameters of one gesture performance.
///
/// The hand rests at its start pose until `onset`, moves for `duration`
/// seconds and then rests at its end pose. `extent` is interpreted per class:
/// the half sweep angle (rad) for LEFT/RIGHT, the push depth (m) for CLICK and
/// the oscillation half amplitude (m) for WRIST.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GestureParams {
    pub onset: f64,
    pub duration: f64,
    pub start_range: f64,
    pub extent: f64,
    /// WRIST oscillation frequency (Hz); ignored by the other classes.
    pub wrist_frequency: f64,
    /// Lateral hand position expressed as an azimuth (rad); its sign models handedness.
    pub azimuth_offset: f64,
    pub reflectivity: f64,
}

impl GestureParams {
    /// Nominal kinematics: 30 degree sweeps, 10 cm click, 3 cm peak-to-peak wrist motion at 4 Hz.
    pub fn nominal(gesture: GestureClass) -> Self {
        let extent = match gesture {
            GestureClass::Left | GestureClass::Right => 30f64.to_radians(),
            GestureClass::Click => 0.10,
            GestureClass::Wrist => 0.015,
        };
        Self {
            onset: 0.0,
            duration: 0.8,
            start_range: 0.3,
            extent,
            wrist_frequency: 4.0,
            azimuth_offset: 0.0,
            reflectivity: 1.0,
        }
    }

    /// Draws parameters emulating variation between people and repetitions.
    ///
    /// The motion is placed so that it starts no earlier than `earliest_onset`
    /// and finishes no later than `latest_end`.
    pub fn randomized<R: Rng + ?Sized>(
        gesture: GestureClass,
        rng: &mut R,
        earliest_onset: f64,
        latest_end: f64,
    ) -> Self {
        let window = (latest_end - earliest_onset).max(0.2);
        let duration = rng.random_range(0.6..=0.9f64).min(window);
        let onset = earliest_onset + rng.random_range(0.0..=1.0f64) * (window - duration);
        let extent = match gesture {
            GestureClass::Left | GestureClass::Right => rng.random_range(20.0..=40.0f64).to_radians(),
            GestureClass::Click => rng.random_range(0.06..=0.14),
            GestureClass::Wrist => rng.random_range(0.010..=0.020),
        };
        let handedness = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        Self {
            onset,
            duration,
            start_range: rng.random_range(0.22..=0.36),
            extent,
            wrist_frequency: rng.random_range(3.0..=5.0),
            azimuth_offset: handedness * rng.random_range(0.0..=10.0f64).to_radians(),
            reflectivity: rng.random_range(0.8..=1.2),
        }
    }

    /// Time at which the motion ends.
    pub fn end_time(&self) -> f64 {
        self.onset + self.duration
    }

    pub fn validate(&self, gesture: GestureClass) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::invalid("gesture duration must be positive"));
        }
        if !(self.onset >= 0.0 && self.onset.is_finite()) {
            return Err(Error::invalid("gesture onset must be non-negative"));
        }
        if !(self.start_range > 0.0 && self.start_range.is_finite()) {
            return Err(Error::invalid("gesture start range must be positive"));
        }
        if !(self.azimuth_offset.abs() < PI / 2.0) {
            return Err(Error::invalid("azimuth offset must lie in (-pi/2, pi/2)"));
        }
        let ok = match gesture {
            GestureClass::Left | GestureClass::Right => {
                self.extent >= 0.0 && (self.azimuth_offset.abs() + self.extent) < PI / 2.0
            }
            GestureClass::Click => self.extent >= 0.0 && self.extent < self.start_range,
            GestureClass::Wrist => {
                self.extent >= 0.0 && self.extent < self.start_range && self.wrist_frequency > 0.0
            }
        };
        if !ok {
            return Err(Error::invalid(format!("extent {} is out of range for {gesture}", self.extent)));
        }
        Ok(())
    }
}

/// Hand state at time `t` for the given gesture.
///
/// LEFT moves the hand along a straight lateral line at perpendicular distance
/// `start_range`, from positive to negative azimuth with a cosine ease; RIGHT
/// is its mirror image. CLICK pushes the hand towards the radar by `extent`
/// and back (`sin^2` profile). WRIST oscillates the range at
/// `wrist_frequency` under a `sin^2` envelope. Velocities are the analytic
/// derivatives of the ranges. Times outside the motion window clamp to the
/// rest poses.
pub fn gesture_trajectory(gesture: GestureClass, params: &GestureParams, t: f64) -> Result<ScattererState> {
    params.validate(gesture)?;
    if !t.is_finite() {
        return Err(Error::invalid("trajectory time must be finite"));
    }
    let d = params.duration;
    let raw = (t - params.onset) / d;
    let moving = raw > 0.0 && raw < 1.0;
    let s = raw.clamp(0.0, 1.0);
    let r0 = params.start_range;

    let state = match gesture {
        GestureClass::Left | GestureClass::Right => {
            let sign = if gesture == GestureClass::Left { 1.0 } else { -1.0 };
            let centre = r0 * params.azimuth_offset.tan();
            let half_width = r0 * params.extent.tan();
            let x = sign * (centre + half_width * (PI * s).cos());
            let x_dot = if moving {
                -sign * half_width * PI * (PI * s).sin() / d
            } else {
                0.0
            };
            let range = r0.hypot(x);
            ScattererState::new(range, x * x_dot / range, x.atan2(r0), params.reflectivity)
        }
        GestureClass::Click => {
            let depth = params.extent;
            let range = r0 - depth * (PI * s).sin().powi(2);
            let velocity = if moving {
                -depth * PI * (2.0 * PI * s).sin() / d
            } else {
                0.0
            };
            ScattererState::new(range, velocity, params.azimuth_offset, params.reflectivity)
        }
        GestureClass::Wrist => {
            let a = params.extent;
            let w = 2.0 * PI * params.wrist_frequency;
            let tau = s * d;
            let envelope = (PI * s).sin().powi(2);
            let range = r0 + a * (w * tau).sin() * envelope;
            let velocity = if moving {
                a * (w * (w * tau).cos() * envelope + (w * tau).sin() * PI * (2.0 * PI * s).sin() / d)
            } else {
                0.0
            };
            ScattererState::new(range, velocity, params.azimuth_offset, params.reflectivity)
        }
    };
    Ok(state)
}
