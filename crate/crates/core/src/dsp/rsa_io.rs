//! RSA sample files (`RSA1`, u8 label, little-endian f32 `(time, range, channel)`)
//! and 8-bit PGM previews.

use std::fs;
use std::path::Path;

use super::{RsaImage, RSA_CHANNELS, RSA_FRAMES, RSA_LEN, RSA_RANGE_BINS};
use crate::radar_sim::GestureClass;
use crate::{Error, Result};

pub const RSA_MAGIC: &[u8; 4] = b"RSA1";
/// Label byte of an unlabelled image.
pub const UNLABELLED: u8 = 0xFF;
pub const RSA_FILE_LEN: usize = 5 + RSA_LEN * 4;

pub fn encode_rsa(image: &RsaImage) -> Vec<u8> {
    let mut buf = Vec::with_capacity(RSA_FILE_LEN);
    buf.extend_from_slice(RSA_MAGIC);
    buf.push(image.label.map_or(UNLABELLED, |g| g.index() as u8));
    for v in image.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_rsa(bytes: &[u8], file: &Path) -> Result<RsaImage> {
    if bytes.len() < 5 || &bytes[..4] != RSA_MAGIC {
        return Err(Error::format(file, 0, "bad magic, expected RSA1"));
    }
    let label = match bytes[4] {
        UNLABELLED => None,
        b => Some(GestureClass::from_index(b as usize).map_err(|_| Error::format(file, 4, format!("bad label byte {b}")))?),
    };
    if bytes.len() != RSA_FILE_LEN {
        let offset = bytes.len().min(RSA_FILE_LEN) as u64;
        return Err(Error::format(
            file,
            offset,
            format!("expected {RSA_FILE_LEN} bytes for a 128x128x3 image, found {}", bytes.len()),
        ));
    }
    let data = bytes[5..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    RsaImage::from_vec(data, label)
}

pub fn save_rsa(path: &Path, image: &RsaImage) -> Result<()> {
    fs::write(path, encode_rsa(image)).map_err(|e| Error::io(path, e))
}

pub fn load_rsa(path: &Path) -> Result<RsaImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_rsa(&bytes, path)
}

/// Binary PGM (`P5`) of one channel, time down the rows.
pub fn channel_pgm(image: &RsaImage, channel: usize) -> Result<Vec<u8>> {
    if channel >= RSA_CHANNELS {
        return Err(Error::invalid(format!("channel must be 0..3, got {channel}")));
    }
    let mut buf = format!("P5\n{RSA_RANGE_BINS} {RSA_FRAMES}\n255\n").into_bytes();
    buf.extend(
        image
            .channel(channel)
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u32>(), label in 0usize..5) {
            let data: Vec<f32> = (0..RSA_LEN).map(|i| ((i as u32).wrapping_mul(2654435761) ^ seed) as f32 / u32::MAX as f32).collect();
            let label = GestureClass::from_index(label).ok();
            let image = RsaImage::from_vec(data, label).unwrap();
            let back = decode_rsa(&encode_rsa(&image), Path::new("mem")).unwrap();
            prop_assert_eq!(back.label, image.label);
            prop_assert!(back.as_slice().iter().zip(image.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn truncated_file_reports_offset() {
        let image = RsaImage::from_vec(vec![0.25; RSA_LEN], Some(GestureClass::Click)).unwrap();
        let bytes = encode_rsa(&image);
        match decode_rsa(&bytes[..1000], Path::new("x.rsa")) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 1000),
            other => panic!("{other:?}"),
        }
        assert!(matches!(decode_rsa(b"RSA2\x00", Path::new("x")), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn pgm_header_and_size() {
        let image = RsaImage::from_vec(vec![1.0; RSA_LEN], None).unwrap();
        let pgm = channel_pgm(&image, 2).unwrap();
        let header = b"P5\n128 128\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(pgm.len(), header.len() + 128 * 128);
        assert!(pgm[header.len()..].iter().all(|&b| b == 255));
        assert!(channel_pgm(&image, 3).is_err());
    }
}
