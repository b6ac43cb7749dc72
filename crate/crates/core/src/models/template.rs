//! Nearest-template baseline: per-class mean trajectory profiles compared by dynamic time warping.

use crate::dsp::{NEUTRAL, RSA_CHANNELS, RSA_FRAMES, RSA_LEN, RSA_RANGE_BINS};
use crate::{Error, GestureClass, Result, NUM_CLASSES};

/// Cost added for every non-diagonal warping step, so only identical sequences are at distance 0.
pub const DTW_STEP_PENALTY: f64 = 1e-3;

/// Dynamic-time-warping distance with absolute-difference cost.
pub fn dtw_distance(a: &[f32], b: &[f32]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.len() == b.len() { 0.0 } else { f64::INFINITY };
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &x in a {
        cur[0] = f64::INFINITY;
        for (j, &y) in b.iter().enumerate() {
            let cost = (x as f64 - y as f64).abs();
            let step = (prev[j]).min(prev[j + 1] + DTW_STEP_PENALTY).min(cur[j] + DTW_STEP_PENALTY);
            cur[j + 1] = cost + step;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// Reduces an RSA image to three length-128 profiles over time: range, speed and azimuth of the
/// moving hand.
///
/// Each row is reduced with weights `ch0 * (|ch1 - 0.5| + |ch2 - 0.5|)`, which ignores static
/// returns straight ahead such as the torso. Rows with zero weight keep speed and azimuth
/// neutral and hold the nearest weighted row's range (the whole-image magnitude centroid when
/// no row has weight). The range profile is then centred on 0.5, since where the hand is
/// matters less than how it moves.
pub fn rsa_profiles(image: &[f32]) -> Result<[Vec<f32>; 3]> {
    if image.len() != RSA_LEN {
        return Err(Error::invalid(format!("RSA image must hold {RSA_LEN} values, got {}", image.len())));
    }
    let norm = (RSA_RANGE_BINS - 1) as f64;
    let mut range: Vec<Option<f32>> = Vec::with_capacity(RSA_FRAMES);
    let mut speed = Vec::with_capacity(RSA_FRAMES);
    let mut azimuth = Vec::with_capacity(RSA_FRAMES);
    let (mut c_num, mut c_den) = (0.0f64, 0.0f64);
    for row in image.chunks_exact(RSA_RANGE_BINS * RSA_CHANNELS) {
        let (mut w_sum, mut r, mut v, mut th) = (0.0f64, 0.0, 0.0, 0.0);
        for (bin, px) in row.chunks_exact(RSA_CHANNELS).enumerate() {
            let mag = px[0] as f64;
            c_num += mag * bin as f64;
            c_den += mag;
            let w = mag * ((px[1] - NEUTRAL).abs() + (px[2] - NEUTRAL).abs()) as f64;
            w_sum += w;
            r += w * bin as f64;
            v += w * px[1] as f64;
            th += w * px[2] as f64;
        }
        if w_sum > 0.0 {
            range.push(Some((r / w_sum / norm) as f32));
            speed.push((v / w_sum) as f32);
            azimuth.push((th / w_sum) as f32);
        } else {
            range.push(None);
            speed.push(NEUTRAL);
            azimuth.push(NEUTRAL);
        }
    }
    let fallback = if c_den > 0.0 { (c_num / c_den / norm) as f32 } else { NEUTRAL };
    let mut range = hold_nearest(&range, fallback);
    let mean = range.iter().sum::<f32>() / range.len() as f32;
    range.iter_mut().for_each(|r| *r = (*r - mean + NEUTRAL).clamp(0.0, 1.0));
    Ok([range, speed, azimuth])
}

/// Fills gaps by holding the previous value, back-filling a leading gap.
fn hold_nearest(values: &[Option<f32>], fallback: f32) -> Vec<f32> {
    let first = values.iter().flatten().next().copied().unwrap_or(fallback);
    let mut last = first;
    values
        .iter()
        .map(|v| {
            if let Some(v) = v {
                last = *v;
            }
            last
        })
        .collect()
}

/// Per-class mean profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    /// `profiles[class][channel]`, each of length 128.
    pub profiles: Vec<[Vec<f32>; 3]>,
}

impl TemplateSet {
    pub fn new(profiles: Vec<[Vec<f32>; 3]>) -> Result<Self> {
        let ok = profiles.len() == NUM_CLASSES
            && profiles
                .iter()
                .flatten()
                .all(|p| p.len() == RSA_FRAMES && p.iter().all(|v| (0.0..=1.0).contains(v)));
        if !ok {
            return Err(Error::invalid("templates need 4 classes x 3 profiles of 128 values in [0, 1]"));
        }
        Ok(Self { profiles })
    }

    /// DTW distance summed over channels, one per class.
    pub fn distances(&self, image: &[f32]) -> Result<[f64; NUM_CLASSES]> {
        let probe = rsa_profiles(image)?;
        let mut out = [0.0; NUM_CLASSES];
        for (d, tmpl) in out.iter_mut().zip(&self.profiles) {
            *d = probe.iter().zip(tmpl).map(|(a, b)| dtw_distance(a, b)).sum();
        }
        Ok(out)
    }

    /// Scores in `[0, 1]` summing to 1, decreasing with template distance.
    pub fn scores(&self, image: &[f32]) -> Result<[f64; NUM_CLASSES]> {
        let d = self.distances(image)?;
        let best = d.iter().copied().fold(f64::INFINITY, f64::min);
        let scale = best.max(1e-9);
        let mut s = d.map(|x| (-(x - best) / scale).exp());
        let total: f64 = s.iter().sum();
        s.iter_mut().for_each(|v| *v /= total);
        Ok(s)
    }
}

/// Averages the profiles of each class.
pub fn fit_templates<'a, I>(samples: I) -> Result<TemplateSet>
where
    I: IntoIterator<Item = (&'a [f32], GestureClass)>,
{
    let mut sums = vec![[vec![0.0f64; RSA_FRAMES], vec![0.0; RSA_FRAMES], vec![0.0; RSA_FRAMES]]; NUM_CLASSES];
    let mut counts = [0usize; NUM_CLASSES];
    for (image, class) in samples {
        let p = rsa_profiles(image)?;
        let k = class.index();
        counts[k] += 1;
        for (acc, prof) in sums[k].iter_mut().zip(&p) {
            for (a, v) in acc.iter_mut().zip(prof) {
                *a += *v as f64;
            }
        }
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!(
            "no training samples for class {}",
            GestureClass::from_index(k)?
        )));
    }
    let profiles = sums
        .into_iter()
        .zip(counts)
        .map(|(chs, n)| chs.map(|acc| acc.into_iter().map(|v| (v / n as f64) as f32).collect()))
        .collect();
    TemplateSet::new(profiles)
}

/// Nearest template; ties go to the lower class index.
pub fn template_classify(image: &[f32], templates: &TemplateSet) -> Result<GestureClass> {
    let d = templates.distances(image)?;
    let best = d
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |b, (i, &v)| if v < b.1 { (i, v) } else { b });
    GestureClass::from_index(best.0)
}
