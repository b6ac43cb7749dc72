//! Radar frames to range/speed/azimuth images.
//!
//! Shapes through the chain: `16x128` chirps x samples per receiver,
//! `64x256` range-Doppler map, CFAR mask on the same grid, `64x128` after the
//! range crop, `1x128x3` per frame and `128x128x3` after merging 128 frames.

mod aoa;
mod cfar;
mod fft;
mod grid;
mod rdm;
mod rsa;
mod rsa_io;

pub use aoa::{aoa_estimate, aoa_from_phasors, wrap_phase, AoaEstimate};
pub use cfar::{ca_cfar_scale, cfar_detect, CfarParams, DetectionMask};
pub use fft::{fft_2d, hann, ifft_2d, Fft2d};
pub use grid::Grid;
pub use rdm::{
    noncoherent_power, range_doppler_map, RangeDopplerMap, RangeDopplerProcessor, RdmAxes, DOPPLER_BINS,
    RANGE_BINS, ZERO_DOPPLER_BIN,
};
pub use rsa::{
    decode_azimuth, decode_velocity, encode_azimuth, encode_velocity, merge_rsa, normalize_range_channel,
    rsa_frame, FrameAnalysis, RsaBlock, RsaFrame, RsaImage, RsaPipeline, TargetEstimate, NEUTRAL, RSA_CHANNELS,
    RSA_FRAMES, RSA_LEN, RSA_RANGE_BINS,
};
pub use rsa_io::{channel_pgm, decode_rsa, encode_rsa, load_rsa, save_rsa, RSA_FILE_LEN, RSA_MAGIC, UNLABELLED};

/// Crops a map and its mask to the near `RSA_RANGE_BINS` range bins.
pub fn crop_rdm(rdm: &RangeDopplerMap, mask: &DetectionMask) -> (RangeDopplerMap, DetectionMask) {
    (rdm.crop_range(RSA_RANGE_BINS), mask.crop_range(RSA_RANGE_BINS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radar_sim::{synthesize_frame, ChirpConfig, ScattererState};

    #[test]
    fn crop_keeps_near_half() {
        let cfg = ChirpConfig::default();
        let cube = synthesize_frame(&cfg, &[ScattererState::new(0.3, 0.0, 0.0, 1.0)], 0).unwrap();
        let maps = range_doppler_map(&cfg, &cube).unwrap();
        let mut mask = cfar_detect(&maps[0].power(), &CfarParams::default()).unwrap();
        mask.detected[(10, 200)] = true;
        let (cropped, cmask) = crop_rdm(&maps[0], &mask);
        assert_eq!(cropped.shape(), (64, 128));
        assert_eq!(cmask.detected.shape(), (64, 128));
        for d in 0..64 {
            for r in 0..128 {
                assert_eq!(cropped.cells[(d, r)], maps[0].cells[(d, r)]);
            }
        }
        let near = (0..64)
            .flat_map(|d| (0..128).map(move |r| (d, r)))
            .filter(|&c| mask.detected[c])
            .count();
        assert_eq!(cmask.count(), near);
        let (d, r) = maps[0].peak();
        assert!(r < 128 && cmask.detected[(d, r)]);
    }
}
