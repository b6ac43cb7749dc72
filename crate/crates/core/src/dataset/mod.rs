//! Synthetic labelled RSA datasets: recording plans, rendering, random crops and splits.

mod io;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{RsaBlock, RsaImage, RsaPipeline, RSA_CHANNELS, RSA_FRAMES, RSA_RANGE_BINS};
use crate::radar_sim::{noise_std_for_peak_snr, BodyClutter, ChirpConfig, GestureParams, RecordingSynth};
use crate::{Error, GestureClass, Result};

pub use io::{load_dataset, save_dataset, Dataset, DatasetWriter, Manifest, ManifestEntry, MANIFEST_FILE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub per_class: usize,
    /// Random 128-frame crops taken from each recording.
    pub crops: usize,
    /// Frames rendered per recording; the gesture lies inside every 128-frame window.
    pub block_frames: usize,
    /// Largest random range shift of a crop, in bins.
    pub max_range_shift: usize,
    /// Hand SNR at its range-Doppler peak.
    pub snr_db: f64,
    /// Torso clutter range is drawn from this interval; `None` disables clutter.
    pub body_range: Option<(f64, f64)>,
    pub chirp: ChirpConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            per_class: 250,
            crops: 8,
            block_frames: 160,
            max_range_shift: 4,
            snr_db: 20.0,
            body_range: Some((0.4, 0.6)),
            chirp: ChirpConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.chirp.validate()?;
        if self.per_class == 0 || self.crops == 0 {
            return Err(Error::invalid("per-class count and crops must be at least 1"));
        }
        if self.block_frames < RSA_FRAMES {
            return Err(Error::invalid(format!("blocks need at least {RSA_FRAMES} frames")));
        }
        if self.max_range_shift >= RSA_RANGE_BINS / 2 || !self.snr_db.is_finite() {
            return Err(Error::invalid("range shift or SNR out of range"));
        }
        if let Some((lo, hi)) = self.body_range {
            if !(lo > 0.0 && hi >= lo) {
                return Err(Error::invalid("body range interval must be positive and ordered"));
            }
        }
        Ok(())
    }

    /// Interval (s) in which every gesture starts and ends: the central part of the block
    /// shared by all 128-frame windows.
    pub fn motion_window(&self) -> (f64, f64) {
        let margin = (self.block_frames - RSA_FRAMES) as f64 * self.chirp.frame_period;
        (margin, RSA_FRAMES as f64 * self.chirp.frame_period)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Split::Train, Split::Val, Split::Test]
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown split '{s}'")))
    }
}

/// Everything needed to re-render one recording; the seed doubles as the subject surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingPlan {
    pub recording: usize,
    pub gesture: GestureClass,
    pub seed: u64,
    pub params: GestureParams,
    pub body: Option<BodyClutter>,
}

/// One labelled crop.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub image: RsaImage,
    pub label: GestureClass,
    pub recording: usize,
    pub seed: u64,
    pub params: GestureParams,
    pub split: Option<Split>,
}

fn recording_seed(seed: u64, recording: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(recording as u64 + 1);
    rng.next_u64()
}

/// Draws per-recording kinematics. Classes are interleaved: recording `i` is class `i % 4`.
pub fn plan_recordings(cfg: &DatasetConfig, seed: u64) -> Result<Vec<RecordingPlan>> {
    cfg.validate()?;
    let (earliest, latest) = cfg.motion_window();
    Ok((0..cfg.per_class * GestureClass::ALL.len())
        .map(|recording| {
            let gesture = GestureClass::ALL[recording % GestureClass::ALL.len()];
            let seed = recording_seed(seed, recording);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = GestureParams::randomized(gesture, &mut rng, earliest, latest);
            let body = cfg.body_range.map(|(lo, hi)| BodyClutter {
                range: rng.random_range(lo..=hi),
                ..BodyClutter::default()
            });
            RecordingPlan {
                recording,
                gesture,
                seed,
                params,
                body,
            }
        })
        .collect())
}

/// Synthesises and processes a whole recording into a normalised RSA block.
pub fn render_block(cfg: &DatasetConfig, plan: &RecordingPlan) -> Result<RsaBlock> {
    let mut chirp = cfg.chirp.clone();
    chirp.noise_std = noise_std_for_peak_snr(&chirp, chirp.amplitude, cfg.snr_db);
    let synth = RecordingSynth::new(&chirp, plan.gesture, &plan.params, plan.body, cfg.block_frames, plan.seed ^ 0x5eed)?;
    let frames = RsaPipeline::new(&chirp)?.process_stream(synth)?;
    Ok(RsaBlock::from_frames(&frames))
}

/// One crop: frames `start..start + 128`, range axis shifted by `shift` bins with edge replication.
pub fn crop_block(block: &RsaBlock, start: usize, shift: isize, label: Option<GestureClass>) -> Result<RsaImage> {
    if start + RSA_FRAMES > block.frames() {
        return Err(Error::invalid(format!(
            "crop at {start} exceeds a {}-frame block",
            block.frames()
        )));
    }
    let last = RSA_RANGE_BINS as isize - 1;
    let mut data = Vec::with_capacity(RSA_FRAMES * RSA_RANGE_BINS * RSA_CHANNELS);
    for t in start..start + RSA_FRAMES {
        let row = block.row(t);
        for r in 0..RSA_RANGE_BINS as isize {
            let src = (r - shift).clamp(0, last) as usize;
            data.extend_from_slice(&row[src * RSA_CHANNELS..][..RSA_CHANNELS]);
        }
    }
    RsaImage::from_vec(data, label)
}

/// Random 128-frame windows of a block, each with a random range shift in `-max_shift..=max_shift`.
pub fn random_crop_augment<R: Rng + ?Sized>(
    block: &RsaBlock,
    label: GestureClass,
    crops: usize,
    max_shift: usize,
    rng: &mut R,
) -> Result<Vec<RsaImage>> {
    if block.frames() < RSA_FRAMES {
        return Err(Error::invalid(format!(
            "block has {} frames, crops need {RSA_FRAMES}",
            block.frames()
        )));
    }
    let margin = block.frames() - RSA_FRAMES;
    (0..crops)
        .map(|_| {
            let start = rng.random_range(0..=margin);
            let m = max_shift as i64;
            let shift = rng.random_range(-m..=m) as isize;
            crop_block(block, start, shift, Some(label))
        })
        .collect()
}

/// Renders one recording and its crops.
pub fn render_recording(cfg: &DatasetConfig, plan: &RecordingPlan) -> Result<Vec<SampleRecord>> {
    let block = render_block(cfg, plan)?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0xc0ffee);
    Ok(random_crop_augment(&block, plan.gesture, cfg.crops, cfg.max_range_shift, &mut rng)?
        .into_iter()
        .map(|image| SampleRecord {
            image,
            label: plan.gesture,
            recording: plan.recording,
            seed: plan.seed,
            params: plan.params,
            split: None,
        })
        .collect())
}

/// Renders plans in order; recordings are independent, so this runs in parallel when
/// the `parallel` feature is on without changing the output.
pub fn render_all(cfg: &DatasetConfig, plans: &[RecordingPlan]) -> Result<Vec<Vec<SampleRecord>>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        plans.par_iter().map(|p| render_recording(cfg, p)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        plans.iter().map(|p| render_recording(cfg, p)).collect()
    }
}

/// `per_class` recordings per class, `crops` samples each, deterministic in `seed`.
pub fn generate_dataset(cfg: &DatasetConfig, seed: u64) -> Result<Vec<SampleRecord>> {
    let plans = plan_recordings(cfg, seed)?;
    Ok(render_all(cfg, &plans)?.into_iter().flatten().collect())
}

/// Assigns `val` to about `val_ratio` of each class's recordings (at least one, never all),
/// `train` to the rest. All crops of a recording share its split.
pub fn assign_splits(
    recordings: &[(usize, GestureClass)],
    val_ratio: f64,
    seed: u64,
) -> Result<BTreeMap<usize, Split>> {
    if !(val_ratio > 0.0 && val_ratio < 1.0) {
        return Err(Error::invalid(format!("validation ratio must be in (0, 1), got {val_ratio}")));
    }
    let mut by_class: BTreeMap<GestureClass, Vec<usize>> = BTreeMap::new();
    for &(id, g) in recordings {
        by_class.entry(g).or_default().push(id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    for (g, mut ids) in by_class {
        ids.sort_unstable();
        ids.dedup();
        if ids.len() < 2 {
            return Err(Error::invalid(format!("class {g} needs at least 2 recordings to split")));
        }
        ids.shuffle(&mut rng);
        let n_val = ((ids.len() as f64 * val_ratio).round() as usize).clamp(1, ids.len() - 1);
        for (k, id) in ids.into_iter().enumerate() {
            out.insert(id, if k < n_val { Split::Val } else { Split::Train });
        }
    }
    Ok(out)
}

/// Stratified, recording-grouped train/val split.
pub fn split_dataset(records: &mut [SampleRecord], val_ratio: f64, seed: u64) -> Result<()> {
    let recs: Vec<(usize, GestureClass)> = records.iter().map(|r| (r.recording, r.label)).collect();
    let splits = assign_splits(&recs, val_ratio, seed)?;
    for r in records.iter_mut() {
        r.split = Some(splits[&r.recording]);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny_cfg() -> DatasetConfig {
        DatasetConfig {
            per_class: 1,
            crops: 2,
            ..Default::default()
        }
    }

    fn ramp_block(frames: usize) -> RsaBlock {
        let data = (0..frames * RSA_RANGE_BINS * RSA_CHANNELS)
            .map(|i| (i % 997) as f32 / 997.0)
            .collect();
        RsaBlock::from_vec(frames, data).unwrap()
    }

    #[test]
    fn zero_margin_crop_is_identity() {
        let block = ramp_block(RSA_FRAMES);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let crops = random_crop_augment(&block, GestureClass::Click, 3, 0, &mut rng).unwrap();
        for c in crops {
            assert_eq!(c.as_slice(), block.as_slice());
            assert_eq!(c.label, Some(GestureClass::Click));
        }
    }

    #[test]
    fn many_crops_keep_label() {
        let block = ramp_block(160);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let crops = random_crop_augment(&block, GestureClass::Wrist, 32, 4, &mut rng).unwrap();
        assert_eq!(crops.len(), 32);
        assert!(crops.iter().all(|c| c.label == Some(GestureClass::Wrist) && c.in_unit_range()));
    }

    #[test]
    fn short_block_is_rejected() {
        let block = ramp_block(100);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(random_crop_augment(&block, GestureClass::Left, 1, 0, &mut rng).is_err());
    }

    #[test]
    fn shift_replicates_edges() {
        let block = ramp_block(RSA_FRAMES);
        let c = crop_block(&block, 0, 2, None).unwrap();
        assert_eq!(c.get(0, 0, 1), block.get(0, 0, 1));
        assert_eq!(c.get(0, 1, 1), block.get(0, 0, 1));
        assert_eq!(c.get(5, 10, 2), block.get(5, 8, 2));
        let c = crop_block(&block, 0, -3, None).unwrap();
        assert_eq!(c.get(7, 127, 0), block.get(7, 127, 0));
        assert_eq!(c.get(7, 125, 0), block.get(7, 127, 0));
    }

    #[test]
    fn plans_interleave_classes_and_fit_window() {
        let cfg = DatasetConfig {
            per_class: 10,
            ..Default::default()
        };
        let plans = plan_recordings(&cfg, 3).unwrap();
        assert_eq!(plans.len(), 40);
        let (lo, hi) = cfg.motion_window();
        for (i, p) in plans.iter().enumerate() {
            assert_eq!(p.gesture.index(), i % 4);
            assert!(p.params.onset >= lo - 1e-12 && p.params.end_time() <= hi + 1e-12);
        }
        assert_eq!(plans, plan_recordings(&cfg, 3).unwrap());
        assert_ne!(plans, plan_recordings(&cfg, 4).unwrap());
    }

    #[test]
    fn renders_small_dataset_deterministically() {
        let cfg = tiny_cfg();
        let a = generate_dataset(&cfg, 11).unwrap();
        assert_eq!(a.len(), 8);
        for (k, g) in GestureClass::ALL.iter().enumerate() {
            assert_eq!(a.iter().filter(|r| r.label == *g).count(), 2, "class {k}");
        }
        assert!(a.iter().all(|r| r.image.in_unit_range()));
        let b = generate_dataset(&cfg, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_needs_two_recordings_per_class() {
        let recs = [(0, GestureClass::Left), (1, GestureClass::Left), (2, GestureClass::Right)];
        assert!(assign_splits(&recs, 0.3, 0).is_err());
        assert!(assign_splits(&recs[..2], 1.0, 0).is_err());
    }

    #[test]
    fn hundred_records_give_thirty_val() {
        let recs: Vec<_> = (0..100).map(|i| (i, GestureClass::ALL[i % 4])).collect();
        let s = assign_splits(&recs, 0.3, 5).unwrap();
        let val = s.values().filter(|&&x| x == Split::Val).count();
        // 25 per class -> round(7.5) = 8 each
        assert!((28..=32).contains(&val), "{val}");
        assert_eq!(s, assign_splits(&recs, 0.3, 5).unwrap());
    }

    proptest! {
        #[test]
        fn split_is_stratified(per_class in prop::collection::vec(2usize..40, 4), ratio in 0.1f64..0.9, seed in any::<u64>()) {
            let mut recs = Vec::new();
            for (k, &n) in per_class.iter().enumerate() {
                for _ in 0..n {
                    recs.push((recs.len(), GestureClass::ALL[k]));
                }
            }
            let s = assign_splits(&recs, ratio, seed).unwrap();
            prop_assert_eq!(s.len(), recs.len());
            for (k, &n) in per_class.iter().enumerate() {
                let val = recs.iter().filter(|(id, g)| g.index() == k && s[id] == Split::Val).count();
                prop_assert!((val as f64 - ratio * n as f64).abs() <= 1.0);
                prop_assert!(val >= 1 && val < n);
            }
        }
    }
}
