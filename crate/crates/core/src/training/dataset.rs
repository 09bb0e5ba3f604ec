use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::phantom::{Frame, ImagingParams, Pose};
use crate::rng::Rng;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const IMAGES_FILE: &str = "images.f32";
const FORMAT_VERSION: u32 = 1;
const SPLIT_STREAM: u64 = 0x5350_4c49_54;

/// Smallest dataset that can be split.
pub const MIN_SPLIT_FRAMES: usize = 20;
pub const VAL_FRACTION: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// Deterministic 95/5 partition of `0..n`, both halves sorted.
pub fn split_indices(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < MIN_SPLIT_FRAMES {
        return Err(Error::DatasetTooSmall {
            have: n,
            need: MIN_SPLIT_FRAMES,
        });
    }
    let n_val = (VAL_FRACTION * n as f64).round() as usize;
    let perm = Rng::derive(seed, SPLIT_STREAM).permutation(n);
    let mut val = perm[..n_val].to_vec();
    let mut train = perm[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// Image/pose pairs with a per-frame split assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameDataset {
    pub image_size: usize,
    pub seed: u64,
    pub phantom_hash: String,
    pub imaging: Option<ImagingParams>,
    /// False for pretraining sets whose poses must not be used.
    pub tracked: bool,
    pub frames: Vec<Frame>,
    pub splits: Vec<Split>,
}

/// `(train, val)` frame positions of `ds`, re-drawn from `seed`.
pub fn split_dataset(ds: &FrameDataset, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    split_indices(ds.len(), seed)
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    count: usize,
    image_size: usize,
    seed: u64,
    phantom_hash: String,
    tracked: bool,
    train_count: usize,
    val_count: usize,
    images_file: String,
    images_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    imaging: Option<ImagingParams>,
    frames: Vec<FrameRecord>,
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    index: usize,
    split: Split,
    /// `[qw, qx, qy, qz, x, y, z]`, millimetres.
    pose: [f64; 7],
}

impl FrameDataset {
    /// Wraps generated frames and assigns the seeded 95/5 split.
    pub fn from_frames(frames: Vec<Frame>, seed: u64, phantom_hash: impl Into<String>) -> Result<Self> {
        let (_, val) = split_indices(frames.len(), seed)?;
        let mut splits = vec![Split::Train; frames.len()];
        for i in val {
            splits[i] = Split::Val;
        }
        Self::with_splits(frames, splits, seed, phantom_hash)
    }

    /// Frames with an explicit split (e.g. all-train memorization sets).
    pub fn with_splits(
        frames: Vec<Frame>,
        splits: Vec<Split>,
        seed: u64,
        phantom_hash: impl Into<String>,
    ) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::InvalidArgument("dataset has no frames".into()));
        };
        let image_size = first.image.width();
        let ds = Self {
            image_size,
            seed,
            phantom_hash: phantom_hash.into(),
            imaging: None,
            tracked: true,
            frames,
            splits,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.splits.len() != self.frames.len() {
            return Err(Error::InvalidArgument(format!(
                "{} split labels for {} frames",
                self.splits.len(),
                self.frames.len()
            )));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.image.width() != self.image_size || f.image.height() != self.image_size {
                return Err(Error::shape(
                    "dataset",
                    format!("frame {i} is {}x{}, expected {}", f.image.width(), f.image.height(), self.image_size),
                ));
            }
            if !f.image.in_unit_range() {
                return Err(Error::InvalidArgument(format!("frame {i} has pixels outside [0, 1]")));
            }
            f.pose.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    fn positions(&self, which: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == which).collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.positions(Split::Train)
    }

    pub fn val_indices(&self) -> Vec<usize> {
        self.positions(Split::Val)
    }

    pub fn train_frames(&self) -> Vec<&Frame> {
        self.train_indices().into_iter().map(|i| &self.frames[i]).collect()
    }

    pub fn val_frames(&self) -> Vec<&Frame> {
        self.val_indices().into_iter().map(|i| &self.frames[i]).collect()
    }

    /// Copy without the frames at positions `drop`.
    pub fn without(&self, drop: &[usize]) -> Self {
        let mut keep = vec![true; self.len()];
        for &i in drop {
            keep[i] = false;
        }
        let mut out = self.clone();
        out.frames = Vec::new();
        out.splits = Vec::new();
        for (i, k) in keep.into_iter().enumerate() {
            if k {
                out.frames.push(self.frames[i].clone());
                out.splits.push(self.splits[i]);
            }
        }
        out
    }

    fn image_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(self.len() * self.image_size * self.image_size * 4);
        for f in &self.frames {
            bytes.extend(f.image.to_le_bytes());
        }
        bytes
    }

    /// Writes `manifest.toml` and `images.f32` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let bytes = self.image_bytes();
        let manifest = Manifest {
            version: FORMAT_VERSION,
            count: self.len(),
            image_size: self.image_size,
            seed: self.seed,
            phantom_hash: self.phantom_hash.clone(),
            tracked: self.tracked,
            train_count: self.train_indices().len(),
            val_count: self.val_indices().len(),
            images_file: IMAGES_FILE.into(),
            images_sha256: hex::encode(Sha256::digest(&bytes)),
            imaging: self.imaging,
            frames: self
                .frames
                .iter()
                .zip(&self.splits)
                .map(|(f, s)| FrameRecord {
                    index: f.index,
                    split: *s,
                    pose: f.pose.to_array(),
                })
                .collect(),
        };
        let images_path = dir.join(IMAGES_FILE);
        std::fs::write(&images_path, &bytes).map_err(|e| Error::io(&images_path, e))?;
        let text = toml::to_string(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
        Ok(manifest_path)
    }

    /// Loads from a dataset directory or its manifest path.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let manifest_path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let m: Manifest =
            toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", manifest_path.display())))?;
        if m.version != FORMAT_VERSION {
            return Err(Error::Parse(format!("unsupported dataset version {}", m.version)));
        }
        if m.frames.len() != m.count {
            return Err(Error::Parse(format!("manifest lists {} frames, count says {}", m.frames.len(), m.count)));
        }
        let images_path = dir.join(&m.images_file);
        let bytes = std::fs::read(&images_path).map_err(|e| Error::io(&images_path, e))?;
        let per_frame = m.image_size * m.image_size * 4;
        if bytes.len() != per_frame * m.count {
            return Err(Error::Format {
                path: images_path,
                offset: bytes.len().min(per_frame * m.count) as u64,
                detail: format!("expected {} bytes of image data, found {}", per_frame * m.count, bytes.len()),
            });
        }
        if hex::encode(Sha256::digest(&bytes)) != m.images_sha256 {
            return Err(Error::Format {
                path: images_path,
                offset: 0,
                detail: "image data hash does not match the manifest".into(),
            });
        }
        let mut frames = Vec::with_capacity(m.count);
        let mut splits = Vec::with_capacity(m.count);
        for (rec, chunk) in m.frames.iter().zip(bytes.chunks_exact(per_frame)) {
            frames.push(Frame {
                index: rec.index,
                image: Image::from_le_bytes(m.image_size, m.image_size, chunk)?,
                pose: Pose::from_array(rec.pose)?,
            });
            splits.push(rec.split);
        }
        let ds = Self {
            image_size: m.image_size,
            seed: m.seed,
            phantom_hash: m.phantom_hash,
            imaging: m.imaging,
            tracked: m.tracked,
            frames,
            splits,
        };
        ds.validate()?;
        Ok(ds)
    }
}
