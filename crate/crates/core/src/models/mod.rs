//! Pose-to-image decoder, multi-input autoencoder and weight transfer.

mod autoencoder;
mod decoder;
pub mod layers;
mod loss;
mod pose;

use sha2::{Digest, Sha256};

pub use autoencoder::{
    build_autoencoder, transfer_decoder_weights, Autoencoder, AutoencoderConfig, AutoencoderOutput,
};
pub use decoder::{build_decoder, Decoder, DecoderConfig, FC_LAYERS, UPSAMPLING_LAYERS};
pub use loss::{multi_input_loss, multi_input_loss_tape, LossTerms};
pub use pose::{NormalizedPose, POSE_DIM};

use crate::tensor::Tensor;

/// Hex SHA-256 over tensor names, shapes and little-endian values.
/// Names are hashed without their leading component so a decoder and the
/// decoder half of an autoencoder agree.
pub(crate) fn state_hash(state: &[(String, &Tensor)]) -> String {
    let mut h = Sha256::new();
    for (name, t) in state {
        let local = name.split_once('.').map_or(name.as_str(), |(_, rest)| rest);
        h.update(local.as_bytes());
        for d in t.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
