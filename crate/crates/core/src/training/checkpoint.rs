//! Versioned binary checkpoint.
//!
//! ```text
//! offset  size  content
//! 0       8     magic "USSIMCK\0"
//! 8       4     format version, u32 LE
//! 12      8     header length H, u64 LE
//! 20      H     JSON header: config, metadata, tensor directory, data hash
//! 20+H    ...   tensor data, f32 LE, in directory order
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::models::layers::{BN_EPS, BN_MOMENTUM};
use crate::models::{
    build_autoencoder, build_decoder, Autoencoder, AutoencoderConfig, Decoder, DecoderConfig, NormalizedPose,
};
use crate::phantom::ImagingParams;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"USSIMCK\0";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Decoder,
    Autoencoder,
    /// Decoder initialized from a reconstruction-pretrained autoencoder.
    Pretrained,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Decoder => "decoder",
            Arch::Autoencoder => "autoencoder",
            Arch::Pretrained => "pretrained",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decoder" => Ok(Arch::Decoder),
            "autoencoder" => Ok(Arch::Autoencoder),
            "pretrained" => Ok(Arch::Pretrained),
            other => Err(Error::InvalidArgument(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Decoder(DecoderConfig),
    Autoencoder(AutoencoderConfig),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Decoder(Decoder),
    Autoencoder(Autoencoder),
}

impl Model {
    pub fn config(&self) -> ModelConfig {
        match self {
            Model::Decoder(d) => ModelConfig::Decoder(d.config().clone()),
            Model::Autoencoder(a) => ModelConfig::Autoencoder(a.config().clone()),
        }
    }

    /// The pose-to-image network (the decoder half for an autoencoder).
    pub fn decoder(&self) -> &Decoder {
        match self {
            Model::Decoder(d) => d,
            Model::Autoencoder(a) => a.decoder(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Model::Decoder(d) => d.parameter_count(),
            Model::Autoencoder(a) => a.parameter_count(),
        }
    }

    pub fn state(&self) -> Vec<(String, &Tensor)> {
        match self {
            Model::Decoder(d) => d.network().state("decoder"),
            Model::Autoencoder(a) => a.state(),
        }
    }

    fn state_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match self {
            Model::Decoder(d) => d.network_mut().state_mut("decoder"),
            Model::Autoencoder(a) => a.state_mut(),
        }
    }

    fn build(config: &ModelConfig) -> Result<Model> {
        Ok(match config {
            ModelConfig::Decoder(c) => Model::Decoder(build_decoder(c, 0)?),
            ModelConfig::Autoencoder(c) => Model::Autoencoder(build_autoencoder(c, 0)?),
        })
    }
}

/// One row of the loss history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: Arch,
    /// Epoch whose weights were kept (1-based; 0 = untrained).
    pub epoch: usize,
    pub seed: u64,
    pub shuffle_seed: u64,
    pub history: Vec<EpochLoss>,
    pub phantom_hash: String,
    pub imaging: Option<ImagingParams>,
    pub bn_momentum: f32,
    pub bn_eps: f32,
}

impl CheckpointMeta {
    pub fn new(arch: Arch, seed: u64) -> Self {
        Self {
            arch,
            epoch: 0,
            seed,
            shuffle_seed: seed,
            history: Vec::new(),
            phantom_hash: String::new(),
            imaging: None,
            bn_momentum: BN_MOMENTUM,
            bn_eps: BN_EPS,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub model: Model,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    meta: CheckpointMeta,
    data_sha256: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset within the data section.
    offset: u64,
}

impl ModelCheckpoint {
    pub fn new(model: Model, meta: CheckpointMeta) -> Self {
        Self { model, meta }
    }

    pub fn decoder(&self) -> &Decoder {
        self.model.decoder()
    }

    pub fn output_size(&self) -> usize {
        self.decoder().output_size()
    }

    /// Short stable identifier: architecture, size and parameter hash prefix.
    pub fn model_id(&self) -> String {
        format!(
            "{}-{}-{}",
            self.meta.arch.name(),
            self.output_size(),
            &self.decoder().parameter_hash()[..12]
        )
    }

    pub fn simulate(&self, pose: &NormalizedPose) -> Result<Image> {
        self.decoder().simulate(pose)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let state = self.model.state();
        let mut data = Vec::with_capacity(state.iter().map(|(_, t)| t.numel() * 4).sum());
        let mut tensors = Vec::with_capacity(state.len());
        for (name, t) in &state {
            tensors.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset: data.len() as u64,
            });
            for v in t.data() {
                data.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            config: self.model.config(),
            meta: self.meta.clone(),
            data_sha256: hex::encode(Sha256::digest(&data)),
            tensors,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(PREAMBLE + header.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&data);
        out
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let err = |offset: usize, detail: String| Error::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            detail,
        };
        if bytes.len() < PREAMBLE {
            return Err(err(bytes.len(), format!("file too short for the {PREAMBLE}-byte preamble")));
        }
        if &bytes[..8] != MAGIC {
            return Err(err(0, "bad magic; not a checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(err(8, format!("unsupported format version {version}, expected {FORMAT_VERSION}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let data_start = PREAMBLE
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| err(12, format!("header length {header_len} runs past end of file ({} bytes)", bytes.len())))?;
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE..data_start])
            .map_err(|e| err(PREAMBLE, format!("header: {e}")))?;
        let data = &bytes[data_start..];
        if hex::encode(Sha256::digest(data)) != header.data_sha256 {
            return Err(err(data_start, "tensor data hash mismatch (corrupt or truncated)".into()));
        }

        let mut model = Model::build(&header.config).map_err(|e| err(PREAMBLE, format!("config: {e}")))?;
        let mut state = model.state_mut();
        if state.len() != header.tensors.len() {
            return Err(err(
                PREAMBLE,
                format!("directory lists {} tensors, model has {}", header.tensors.len(), state.len()),
            ));
        }
        let mut expected_offset = 0usize;
        for ((name, t), entry) in state.iter_mut().zip(&header.tensors) {
            if *name != entry.name || t.shape() != entry.shape.as_slice() {
                return Err(err(
                    PREAMBLE,
                    format!("tensor {} {:?} does not match model tensor {name} {:?}", entry.name, entry.shape, t.shape()),
                ));
            }
            let len = t.numel() * 4;
            let start = entry.offset as usize;
            if start != expected_offset || start + len > data.len() {
                return Err(err(data_start + start, format!("tensor {name} out of bounds")));
            }
            for (v, chunk) in t.data_mut().iter_mut().zip(data[start..start + len].chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            }
            if !t.all_finite() {
                return Err(err(data_start + start, format!("tensor {name} has non-finite values")));
            }
            expected_offset = start + len;
        }
        if expected_offset != data.len() {
            return Err(err(data_start + expected_offset, "trailing bytes after tensor data".into()));
        }
        drop(state);
        Ok(Self {
            model,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path: PathBuf = path.as_ref().to_path_buf();
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_bytes(&bytes, &path)
    }
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    ModelCheckpoint::load(path)
}
