//! Single-channel float images, row-major with the origin at the top-left.
//! Row 0 is the transducer face; rows grow with depth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::shape(
                "image",
                format!("{width}x{height} image needs {} values, got {}", width * height, data.len()),
            ));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.data[row * self.width + col] = value;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn clamped(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Averages non-overlapping `factor` x `factor` blocks.
    pub fn box_downsample(&self, factor: usize) -> Result<Image> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::shape(
                "box_downsample",
                format!("{}x{} not divisible by {factor}", self.width, self.height),
            ));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let norm = 1.0 / (factor * factor) as f64;
        let mut out = Vec::with_capacity(w * h);
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0f64;
                for dr in 0..factor {
                    let row = &self.data[(r * factor + dr) * self.width + c * factor..][..factor];
                    acc += row.iter().map(|&v| v as f64).sum::<f64>();
                }
                out.push((acc * norm) as f32);
            }
        }
        Image::new(w, h, out)
    }

    /// Binary portable graymap (P5, maxval 255) of the clamped image.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| quantize(v)));
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Image> {
        let bad = |detail: &str| Error::Parse(format!("pgm: {detail}"));
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header not ascii"))?);
        }
        if fields[0] != "P5" {
            return Err(bad("not a binary graymap"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
        let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        if maxval != 255 {
            return Err(bad("only maxval 255 is supported"));
        }
        let body = bytes.get(pos + 1..).ok_or_else(|| bad("missing pixel data"))?;
        if body.len() != w * h {
            return Err(bad("pixel data length does not match header"));
        }
        Image::new(w, h, body.iter().map(|&b| b as f32 / 255.0).collect())
    }

    /// Little-endian f32 bytes, row-major.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Image> {
        if bytes.len() != width * height * 4 {
            return Err(Error::shape(
                "image",
                format!("{width}x{height} f32 image needs {} bytes, got {}", width * height * 4, bytes.len()),
            ));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Image::new(width, height, data)
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_downsample_averages() {
        let img = Image::new(4, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
        let d = img.box_downsample(2).unwrap();
        assert_eq!(d.data(), &[2.5, 4.5]);
        assert!(img.box_downsample(3).is_err());
    }

    #[test]
    fn pgm_round_trip_within_quantization() {
        let img = Image::new(3, 2, vec![0.0, 0.1, 0.5, 0.77, 1.0, 0.333]).unwrap();
        let back = Image::from_pgm(&img.to_pgm()).unwrap();
        assert!(back.same_shape(&img));
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-7);
        }
    }

    #[test]
    fn le_bytes_round_trip() {
        let img = Image::new(2, 2, vec![0.25, -0.0, 1.0, 3.5e-8]).unwrap();
        let back = Image::from_le_bytes(2, 2, &img.to_le_bytes()).unwrap();
        assert_eq!(back, img);
    }
}
