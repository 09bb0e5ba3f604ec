//! Wire format shared by `/simulate` and `/stream`.
//!
//! A response is one line of JSON ([`ResponseHeader`]) terminated by `\n`,
//! followed by the image blocks back to back. Each block's byte range is
//! given by its [`BlockInfo`]. Images are row-major with the origin at the
//! top-left pixel (transducer face at the top). `pgm` blocks are complete
//! binary PGM files (`P5`, maxval 255); `f32` blocks are raw little-endian
//! floats.

use serde::{Deserialize, Serialize};
use ussim_core::Image;

use crate::error::ApiError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    #[default]
    Pgm,
    F32,
}

impl Encoding {
    pub fn encode(self, image: &Image) -> Vec<u8> {
        match self {
            Encoding::Pgm => image.to_pgm(),
            Encoding::F32 => image.to_le_bytes(),
        }
    }

    pub fn decode(self, bytes: &[u8], width: usize, height: usize) -> Result<Image, ApiError> {
        let image = match self {
            Encoding::Pgm => Image::from_pgm(bytes),
            Encoding::F32 => Image::from_le_bytes(width, height, bytes),
        }
        .map_err(|e| ApiError::bad_request("bad_block", e.to_string()))?;
        if image.width() != width || image.height() != height {
            return Err(ApiError::bad_request("bad_block", "block size disagrees with header"));
        }
        Ok(image)
    }
}

/// `pose` is `[qw, qx, qy, qz, x, y, z]` with the position in millimetres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimRequest {
    pub pose: [f64; 7],
    /// Also render the phantom slice at the same pose.
    #[serde(default)]
    pub oracle: bool,
    #[serde(default)]
    pub encoding: Encoding,
}

/// A [`SimRequest`] on the stream channel, tagged by the client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamRequest {
    pub seq: u64,
    pub pose: [f64; 7],
    #[serde(default)]
    pub oracle: bool,
    #[serde(default)]
    pub encoding: Encoding,
}

impl StreamRequest {
    pub fn request(&self) -> SimRequest {
        SimRequest {
            pose: self.pose,
            oracle: self.oracle,
            encoding: self.encoding,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    /// `simulated` or `oracle`.
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub encoding: Encoding,
    /// Byte offset after the header line.
    pub offset: usize,
    pub length: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseHeader {
    pub model_id: String,
    pub image_size: usize,
    /// Decoder forward pass only.
    pub inference_ms: f64,
    /// Pose actually simulated, quaternion renormalized.
    pub pose: [f64; 7],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    pub blocks: Vec<BlockInfo>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub model_id: String,
    pub arch: String,
    pub image_size: usize,
    pub parameter_count: usize,
    pub phantom_hash: String,
    pub pixel_spacing_mm: f64,
}

/// Joins a header and its blocks, filling in block offsets and lengths.
pub fn encode_response(mut header: ResponseHeader, blocks: Vec<Vec<u8>>) -> Vec<u8> {
    let mut offset = 0;
    for (info, b) in header.blocks.iter_mut().zip(&blocks) {
        info.offset = offset;
        info.length = b.len();
        offset += b.len();
    }
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for b in blocks {
        out.extend(b);
    }
    out
}

/// Splits a response into its header and decoded images, in block order.
pub fn decode_response(bytes: &[u8]) -> Result<(ResponseHeader, Vec<Image>), ApiError> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| ApiError::bad_request("bad_response", "missing header line"))?;
    let header: ResponseHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| ApiError::bad_request("bad_response", e.to_string()))?;
    let body = &bytes[nl + 1..];
    let images = header
        .blocks
        .iter()
        .map(|b| {
            let chunk = body
                .get(b.offset..b.offset + b.length)
                .ok_or_else(|| ApiError::bad_request("bad_response", format!("block {} out of range", b.name)))?;
            b.encoding.decode(chunk, b.width, b.height)
        })
        .collect::<Result<_, _>>()?;
    Ok((header, images))
}
