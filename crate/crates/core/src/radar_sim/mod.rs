//! Forward model: complex baseband FMCW returns for parametric hand gestures.
//!
//! A frame is indexed `(rx l, chirp p, sample n)`. Each point scatterer `q`
//! contributes
//!
//! ```text
//! a_q * exp(j*2*pi*[ (2*K*R_q/c + f_d,q) * n/f_s + f_c*l*d*sin(theta_q)/c + f_d,q*p*T_0 + 2*f_c*R_q/c ])
//! ```
//!
//! with `K` the chirp slope and `f_d,q = 2*v_q/lambda`. Ranges are frozen for
//! the duration of one frame; motion between frames comes from the gesture
//! trajectory.

mod config;
mod cube_io;
mod synth;
mod trajectory;

pub use config::ChirpConfig;
pub use cube_io::{read_cubes, write_cube, write_cubes, CUBE_MAGIC};
pub use synth::{
    noise_std_for_peak_snr, noise_std_for_sample_snr, synthesize_frame, synthesize_recording,
    BodyClutter, RadarCube, RecordingSynth,
};
pub use trajectory::{gesture_trajectory, GestureClass, GestureParams, ScattererState};
