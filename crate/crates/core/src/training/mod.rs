//! Data pipeline, training loops and checkpoints.

mod checkpoint;
mod dataset;
mod preprocess;
mod train;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Arch, CheckpointMeta, EpochLoss, Model, ModelCheckpoint, ModelConfig,
};
pub use dataset::{split_dataset, split_indices, FrameDataset, Split, IMAGES_FILE, MANIFEST_FILE};
pub use preprocess::{normalize_pose, preprocess_image, RawImage, TARGET_SPACING_MM};
pub use train::{
    pretrain_then_finetune, pretrain_then_finetune_with, train_autoencoder, train_autoencoder_with, train_decoder,
    train_decoder_with, Batch, EpochRecord, PretrainOutcome, TensorSet, TrainConfig, TrainReport,
};
