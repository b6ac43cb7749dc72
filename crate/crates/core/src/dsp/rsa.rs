//! Range/speed/azimuth (RSA) frames and images.
//!
//! Each processed radar frame collapses to one row of 128 range bins with
//! three channels:
//!
//! * 0, range intensity: `ln(1 + max_doppler |X|)`, min-max normalised over
//!   the recording by [`normalize_range_channel`];
//! * 1, speed: velocity of the strongest detected cell mapped affinely from
//!   `[-v_max, v_max]` to `[0, 1]`;
//! * 2, azimuth: mean azimuth of the detected cells mapped from
//!   `[-pi/2, pi/2]` to `[0, 1]`.
//!
//! Columns without CFAR detections read 0.5 on channels 1 and 2.

use std::f64::consts::PI;

use super::{
    aoa_from_phasors, cfar_detect, noncoherent_power, CfarParams, DetectionMask, Grid, RangeDopplerMap,
    RangeDopplerProcessor, RdmAxes,
};
use crate::radar_sim::{ChirpConfig, GestureClass, RadarCube};
use crate::{Error, Result};

/// Range bins kept after cropping, also the RSA image width.
pub const RSA_RANGE_BINS: usize = 128;
/// Frames merged into one RSA image.
pub const RSA_FRAMES: usize = 128;
pub const RSA_CHANNELS: usize = 3;
/// Values in one RSA image.
pub const RSA_LEN: usize = RSA_FRAMES * RSA_RANGE_BINS * RSA_CHANNELS;

/// Neutral value for channels without information.
pub const NEUTRAL: f32 = 0.5;

/// One `1 x 128 x 3` row, stored `(range, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RsaFrame {
    values: Vec<f32>,
}

impl RsaFrame {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() != RSA_RANGE_BINS * RSA_CHANNELS {
            return Err(Error::invalid(format!("RSA frame needs 384 values, got {}", values.len())));
        }
        Ok(Self { values })
    }

    pub fn neutral() -> Self {
        let mut values = vec![NEUTRAL; RSA_RANGE_BINS * RSA_CHANNELS];
        values.iter_mut().step_by(RSA_CHANNELS).for_each(|v| *v = 0.0);
        Self { values }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (1, RSA_RANGE_BINS, RSA_CHANNELS)
    }

    pub fn get(&self, range_bin: usize, channel: usize) -> f32 {
        self.values[range_bin * RSA_CHANNELS + channel]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Affine speed encoding.
pub fn encode_velocity(v: f64, v_max: f64) -> f32 {
    (0.5 + 0.5 * v / v_max).clamp(0.0, 1.0) as f32
}

pub fn decode_velocity(x: f32, v_max: f64) -> f64 {
    (x as f64 - 0.5) * 2.0 * v_max
}

pub fn encode_azimuth(theta: f64) -> f32 {
    (theta / PI + 0.5).clamp(0.0, 1.0) as f32
}

pub fn decode_azimuth(x: f32) -> f64 {
    (x as f64 - 0.5) * PI
}

/// Reduces cropped per-receiver maps and their detection mask to one frame.
///
/// Receivers 1 and 0 provide the azimuth; all receivers feed the magnitude.
/// Channel 0 is left un-normalised (`ln(1 + magnitude)`).
pub fn rsa_frame(maps: &[RangeDopplerMap], mask: &DetectionMask, cfg: &ChirpConfig) -> Result<RsaFrame> {
    if maps.len() < 2 {
        return Err(Error::invalid("azimuth needs at least two receivers"));
    }
    let power = noncoherent_power(maps)?;
    let (doppler_bins, range_bins) = power.shape();
    if range_bins != RSA_RANGE_BINS || mask.detected.shape() != power.shape() {
        return Err(Error::invalid(format!(
            "expected cropped {doppler_bins}x{RSA_RANGE_BINS} maps and mask, got {:?} / {:?}",
            power.shape(),
            mask.detected.shape()
        )));
    }
    let axes: RdmAxes = maps[0].axes;
    let v_max = cfg.max_velocity();
    let mut values = Vec::with_capacity(RSA_RANGE_BINS * RSA_CHANNELS);
    for r in 0..range_bins {
        let mut peak = 0.0f64;
        let mut best: Option<(usize, f64)> = None;
        let mut azimuth_sum = 0.0;
        let mut hits = 0usize;
        for d in 0..doppler_bins {
            let p = power[(d, r)];
            peak = peak.max(p);
            if mask.detected[(d, r)] {
                if best.is_none_or(|(_, bp)| p > bp) {
                    best = Some((d, p));
                }
                let est = aoa_from_phasors(maps[1].cells[(d, r)], maps[0].cells[(d, r)], cfg.wavelength(), cfg.rx_spacing);
                azimuth_sum += est.azimuth;
                hits += 1;
            }
        }
        values.push(peak.sqrt().ln_1p() as f32);
        values.push(match best {
            Some((d, _)) => encode_velocity(axes.velocity_of(d), v_max),
            None => NEUTRAL,
        });
        values.push(if hits > 0 {
            encode_azimuth(azimuth_sum / hits as f64)
        } else {
            NEUTRAL
        });
    }
    RsaFrame::new(values)
}

/// Min-max normalises channel 0 over a whole recording. A constant channel maps to 0.
pub fn normalize_range_channel(frames: &mut [RsaFrame]) {
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for f in frames.iter() {
        for v in f.values.iter().step_by(RSA_CHANNELS) {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    let span = hi - lo;
    for f in frames.iter_mut() {
        for v in f.values.iter_mut().step_by(RSA_CHANNELS) {
            *v = if span > 0.0 { ((*v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
        }
    }
}

/// A time-ordered stack of RSA frames, `(time, range, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RsaBlock {
    frames: usize,
    data: Vec<f32>,
}

impl RsaBlock {
    pub fn from_frames(frames: &[RsaFrame]) -> Self {
        let mut data = Vec::with_capacity(frames.len() * RSA_RANGE_BINS * RSA_CHANNELS);
        for f in frames {
            data.extend_from_slice(&f.values);
        }
        Self {
            frames: frames.len(),
            data,
        }
    }

    pub fn from_vec(frames: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != frames * RSA_RANGE_BINS * RSA_CHANNELS {
            return Err(Error::invalid("RSA block data length does not match frame count"));
        }
        Ok(Self { frames, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn row(&self, t: usize) -> &[f32] {
        let w = RSA_RANGE_BINS * RSA_CHANNELS;
        &self.data[t * w..(t + 1) * w]
    }

    pub fn get(&self, t: usize, range_bin: usize, channel: usize) -> f32 {
        self.data[(t * RSA_RANGE_BINS + range_bin) * RSA_CHANNELS + channel]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// The `128 x 128 x 3` classifier input, stored `(time, range, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RsaImage {
    data: Vec<f32>,
    pub label: Option<GestureClass>,
}

impl RsaImage {
    pub fn from_vec(data: Vec<f32>, label: Option<GestureClass>) -> Result<Self> {
        if data.len() != RSA_LEN {
            return Err(Error::invalid(format!("RSA image needs {RSA_LEN} values, got {}", data.len())));
        }
        Ok(Self { data, label })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (RSA_FRAMES, RSA_RANGE_BINS, RSA_CHANNELS)
    }

    pub fn get(&self, t: usize, range_bin: usize, channel: usize) -> f32 {
        self.data[(t * RSA_RANGE_BINS + range_bin) * RSA_CHANNELS + channel]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// One channel as a `time x range` plane.
    pub fn channel(&self, channel: usize) -> Vec<f32> {
        self.data.iter().skip(channel).step_by(RSA_CHANNELS).copied().collect()
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// Stacks exactly 128 frames along time.
pub fn merge_rsa(frames: &[RsaFrame]) -> Result<RsaImage> {
    if frames.len() != RSA_FRAMES {
        return Err(Error::invalid(format!("merge needs {RSA_FRAMES} frames, got {}", frames.len())));
    }
    RsaImage::from_vec(RsaBlock::from_frames(frames).data, None)
}

/// Per-frame detail from the full pipeline.
#[derive(Debug, Clone)]
pub struct FrameAnalysis {
    /// Full 64x256 maps, one per receiver.
    pub maps: Vec<RangeDopplerMap>,
    /// Receiver-averaged power, 64x256.
    pub power: Grid<f64>,
    /// CFAR result on `power`, 64x256.
    pub mask: DetectionMask,
    pub frame: RsaFrame,
}

impl FrameAnalysis {
    /// Strongest detected cell, or the strongest cell overall when nothing was detected.
    pub fn peak_cell(&self) -> (usize, usize) {
        let mut best: Option<(usize, f64)> = None;
        for (i, (&p, &hit)) in self.power.as_slice().iter().zip(self.mask.detected.as_slice()).enumerate() {
            if hit && best.is_none_or(|(_, bp)| p > bp) {
                best = Some((i, p));
            }
        }
        match best {
            Some((i, _)) => (i / self.power.cols(), i % self.power.cols()),
            None => super::rdm::argmax(&self.power),
        }
    }
}

/// Range, velocity and azimuth read off the strongest detected cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetEstimate {
    pub doppler_bin: usize,
    pub range_bin: usize,
    pub range: f64,
    pub velocity: f64,
    pub azimuth: f64,
}

/// Radar frames to RSA frames: 2D FFT, CFAR, crop, per-range-bin reduction.
pub struct RsaPipeline {
    cfg: ChirpConfig,
    rdm: RangeDopplerProcessor,
    cfar: CfarParams,
}

impl RsaPipeline {
    pub fn new(cfg: &ChirpConfig) -> Result<Self> {
        Self::with_cfar(cfg, CfarParams::default())
    }

    pub fn with_cfar(cfg: &ChirpConfig, cfar: CfarParams) -> Result<Self> {
        Ok(Self {
            cfg: cfg.clone(),
            rdm: RangeDopplerProcessor::new(cfg, true)?,
            cfar,
        })
    }

    pub fn config(&self) -> &ChirpConfig {
        &self.cfg
    }

    pub fn analyze(&mut self, cube: &RadarCube) -> Result<FrameAnalysis> {
        let maps = self.rdm.process(cube)?;
        let power = noncoherent_power(&maps)?;
        let mask = cfar_detect(&power, &self.cfar)?;
        let cropped: Vec<_> = maps.iter().map(|m| m.crop_range(RSA_RANGE_BINS)).collect();
        let frame = rsa_frame(&cropped, &mask.crop_range(RSA_RANGE_BINS), &self.cfg)?;
        Ok(FrameAnalysis {
            maps,
            power,
            mask,
            frame,
        })
    }

    pub fn estimate_target(&mut self, cube: &RadarCube) -> Result<TargetEstimate> {
        let analysis = self.analyze(cube)?;
        let (d, r) = analysis.peak_cell();
        let axes = analysis.maps[0].axes;
        let aoa = super::aoa_estimate(&analysis.maps[1], &analysis.maps[0], (d, r), &self.cfg);
        Ok(TargetEstimate {
            doppler_bin: d,
            range_bin: r,
            range: axes.range_of(r),
            velocity: axes.velocity_of(d),
            azimuth: aoa.azimuth,
        })
    }

    /// Processes a recording and normalises its range channel.
    pub fn process_recording<'a, I>(&mut self, cubes: I) -> Result<Vec<RsaFrame>>
    where
        I: IntoIterator<Item = &'a RadarCube>,
    {
        let mut frames = cubes
            .into_iter()
            .map(|c| self.analyze(c).map(|a| a.frame))
            .collect::<Result<Vec<_>>>()?;
        normalize_range_channel(&mut frames);
        Ok(frames)
    }

    /// Same as [`Self::process_recording`] for owned frames, e.g. a live generator.
    pub fn process_stream<I>(&mut self, cubes: I) -> Result<Vec<RsaFrame>>
    where
        I: IntoIterator<Item = RadarCube>,
    {
        let mut frames = cubes
            .into_iter()
            .map(|c| self.analyze(&c).map(|a| a.frame))
            .collect::<Result<Vec<_>>>()?;
        normalize_range_channel(&mut frames);
        Ok(frames)
    }

    /// Exactly 128 cubes to one RSA image.
    pub fn rsa_image(&mut self, cubes: &[RadarCube]) -> Result<RsaImage> {
        if cubes.len() != RSA_FRAMES {
            return Err(Error::invalid(format!("RSA image needs {RSA_FRAMES} frames, got {}", cubes.len())));
        }
        merge_rsa(&self.process_recording(cubes)?)
    }
}
