use crate::error::{Error, Result};
use crate::image::Image;
use crate::models::NormalizedPose;
use crate::phantom::Pose;

/// Target pixel spacing of network images.
pub const TARGET_SPACING_MM: f64 = 0.5;

/// 8-bit scanner frame, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "raw image {width}x{height} with {} bytes",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }
}

/// Bilinear resample to 0.5 mm pixels (pixel-centre aligned, edge clamped),
/// centre crop or zero pad to `size x size`, then scale by 1/255.
pub fn preprocess_image(raw: &RawImage, raw_spacing_mm: f64, size: usize) -> Result<Image> {
    if !(raw_spacing_mm > 0.0) || !raw_spacing_mm.is_finite() {
        return Err(Error::InvalidArgument(format!("raw spacing must be positive, got {raw_spacing_mm}")));
    }
    if size == 0 {
        return Err(Error::InvalidArgument("output size must be positive".into()));
    }
    let ratio = raw_spacing_mm / TARGET_SPACING_MM;
    let rw = ((raw.width as f64 * ratio).round() as usize).max(1);
    let rh = ((raw.height as f64 * ratio).round() as usize).max(1);
    let step = 1.0 / ratio;
    let coord = |dst: usize, n: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) * step - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let px = |r: usize, c: usize| raw.data[r * raw.width + c] as f64;

    let mut out = vec![0f32; size * size];
    // offset of the crop window inside the resampled frame (negative: pad)
    let off_r = (rh as isize - size as isize) / 2;
    let off_c = (rw as isize - size as isize) / 2;
    for r in 0..size {
        let rr = r as isize + off_r;
        if rr < 0 || rr >= rh as isize {
            continue;
        }
        let (r0, r1, fr) = coord(rr as usize, raw.height);
        for c in 0..size {
            let cc = c as isize + off_c;
            if cc < 0 || cc >= rw as isize {
                continue;
            }
            let (c0, c1, fc) = coord(cc as usize, raw.width);
            let top = px(r0, c0) * (1.0 - fc) + px(r0, c1) * fc;
            let bottom = px(r1, c0) * (1.0 - fc) + px(r1, c1) * fc;
            out[r * size + c] = ((top * (1.0 - fr) + bottom * fr) / 255.0) as f32;
        }
    }
    Image::new(size, size, out)
}

/// `[qw, qx, qy, qz, x/250, y/250, z/500]` of a valid pose.
pub fn normalize_pose(pose: &Pose) -> Result<NormalizedPose> {
    NormalizedPose::from_pose(pose)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_white() {
        let raw = RawImage::new(7, 5, vec![255; 35]).unwrap();
        let img = preprocess_image(&raw, 0.8, 4).unwrap();
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn identity_geometry() {
        let data: Vec<u8> = (0..64).map(|i| (i * 4) as u8).collect();
        let raw = RawImage::new(8, 8, data.clone()).unwrap();
        let img = preprocess_image(&raw, 0.5, 8).unwrap();
        for (a, b) in img.data().iter().zip(&data) {
            assert_eq!(*a, (*b as f64 / 255.0) as f32);
        }
    }

    #[test]
    fn checkerboard_upsample() {
        let raw = RawImage::new(2, 2, vec![255, 0, 0, 255]).unwrap();
        let img = preprocess_image(&raw, 1.0, 4).unwrap();
        // source coordinate of output index d is clamp((d + 0.5) / 2 - 0.5)
        // = [0, 0.25, 0.75, 1]
        let w = [0.0, 0.25, 0.75, 1.0];
        for r in 0..4 {
            for c in 0..4 {
                let (a, b) = (w[r], w[c]);
                let want = (1.0 - a) * (1.0 - b) + a * b;
                assert!((img.get(r, c) as f64 - want).abs() < 1e-6, "({r},{c})");
            }
        }
        assert!((img.get(1, 1) - 0.625).abs() < 1e-6);
    }

    #[test]
    fn crop_and_pad() {
        let raw = RawImage::new(4, 4, vec![255; 16]).unwrap();
        let padded = preprocess_image(&raw, 0.5, 8).unwrap();
        assert_eq!(padded.get(0, 0), 0.0);
        assert_eq!(padded.get(3, 3), 1.0);
        let cropped = preprocess_image(&raw, 0.5, 2).unwrap();
        assert!(cropped.data().iter().all(|&v| v == 1.0));
        assert!(preprocess_image(&raw, 0.0, 2).is_err());
    }
}
