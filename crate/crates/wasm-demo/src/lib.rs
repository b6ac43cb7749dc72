//! Browser bindings for the demo page in `www/`.

use gesturekit::dataset::{plan_recordings, render_recording, DatasetConfig};
use gesturekit::dsp::{CfarParams, RsaPipeline};
use gesturekit::radar_sim::{noise_std_for_sample_snr, synthesize_frame, ChirpConfig, ScattererState};
use gesturekit::GestureClass;
use wasm_bindgen::prelude::*;

fn js_err(e: gesturekit::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// One processed radar frame of a single point target.
#[wasm_bindgen]
pub struct RadarFrame {
    power_db: Vec<f32>,
    detections: Vec<u8>,
    estimate: Vec<f64>,
}

#[wasm_bindgen]
impl RadarFrame {
    /// Receiver-averaged power in dB, 64 Doppler rows x 256 range columns.
    #[wasm_bindgen(getter)]
    pub fn power_db(&self) -> Vec<f32> {
        self.power_db.clone()
    }

    /// CFAR mask in the same layout, 1 for a detection.
    #[wasm_bindgen(getter)]
    pub fn detections(&self) -> Vec<u8> {
        self.detections.clone()
    }

    /// `[range m, velocity m/s, azimuth deg, doppler bin, range bin]` at the strongest detection.
    #[wasm_bindgen(getter)]
    pub fn estimate(&self) -> Vec<f64> {
        self.estimate.clone()
    }
}

/// Simulates and processes one frame with a target at the given range, radial velocity and azimuth.
#[wasm_bindgen]
pub fn simulate_frame(
    range_m: f64,
    velocity: f64,
    azimuth_deg: f64,
    snr_db: f64,
    pfa: f64,
    seed: u64,
) -> Result<RadarFrame, JsError> {
    let mut cfg = ChirpConfig::default();
    cfg.noise_std = noise_std_for_sample_snr(cfg.amplitude, snr_db);
    let target = ScattererState::new(range_m, velocity, azimuth_deg.to_radians(), 1.0);
    let cube = synthesize_frame(&cfg, &[target], seed).map_err(js_err)?;
    let cfar = CfarParams {
        pfa,
        ..CfarParams::default()
    };
    let mut pipeline = RsaPipeline::with_cfar(&cfg, cfar).map_err(js_err)?;
    let analysis = pipeline.analyze(&cube).map_err(js_err)?;
    let est = pipeline.estimate_target(&cube).map_err(js_err)?;
    Ok(RadarFrame {
        power_db: analysis
            .power
            .as_slice()
            .iter()
            .map(|p| (10.0 * p.max(1e-12).log10()) as f32)
            .collect(),
        detections: analysis.mask.detected.as_slice().iter().map(|&d| d as u8).collect(),
        estimate: vec![
            est.range,
            est.velocity,
            est.azimuth.to_degrees(),
            est.doppler_bin as f64,
            est.range_bin as f64,
        ],
    })
}

/// RSA image (128 frames x 128 range bins x 3 channels, row-major) of one synthetic gesture.
#[wasm_bindgen]
pub fn gesture_rsa(gesture: &str, seed: u64) -> Result<Vec<f32>, JsError> {
    let gesture: GestureClass = gesture.parse().map_err(js_err)?;
    let cfg = DatasetConfig {
        per_class: 1,
        crops: 1,
        ..DatasetConfig::default()
    };
    let plan = plan_recordings(&cfg, seed)
        .map_err(js_err)?
        .into_iter()
        .find(|p| p.gesture == gesture)
        .ok_or_else(|| JsError::new("no plan for gesture"))?;
    let mut records = render_recording(&cfg, &plan).map_err(js_err)?;
    Ok(records.remove(0).image.into_vec())
}

/// Analytic (Doppler, range) bin of a target, for comparison with the detected peak.
#[wasm_bindgen]
pub fn expected_bins(range_m: f64, velocity: f64) -> Vec<u32> {
    let (d, r) = gesturekit::selftest::analytic_bin(&ChirpConfig::default(), range_m, velocity);
    vec![d as u32, r as u32]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_peaks_at_expected_bins() {
        let f = simulate_frame(0.6, 0.9, 15.0, 20.0, 1e-3, 7).unwrap();
        assert_eq!(f.power_db().len(), 64 * 256);
        assert_eq!(f.detections().len(), 64 * 256);
        let e = f.estimate();
        let exp = expected_bins(0.6, 0.9);
        assert!((e[3] - exp[0] as f64).abs() <= 1.0 && (e[4] - exp[1] as f64).abs() <= 1.0, "{e:?} {exp:?}");
        assert!((e[2] - 15.0).abs() < 2.0);
    }

    #[test]
    fn gesture_image_shape() {
        let img = gesture_rsa("WRIST", 3).unwrap();
        assert_eq!(img.len(), 128 * 128 * 3);
        assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
