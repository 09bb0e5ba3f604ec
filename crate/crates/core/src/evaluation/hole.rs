use super::lossmap::{relative_map, LossMap, MapGrid};
use super::quality::evaluate_model;
use crate::error::{Error, Result};
use crate::models::DecoderConfig;
use crate::phantom::{carve_hole, Frame};
use crate::training::{
    pretrain_then_finetune, train_autoencoder, train_decoder, Arch, FrameDataset, ModelCheckpoint, TrainConfig,
};

/// Spherical region of probe positions withheld from training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hole {
    pub center_mm: [f64; 3],
    pub radius_mm: f64,
}

impl Hole {
    /// Whether a map bin centre lies in the hole's x/y footprint.
    pub fn covers_bin(&self, center: [f64; 2]) -> bool {
        let dx = center[0] - self.center_mm[0];
        let dy = center[1] - self.center_mm[1];
        (dx * dx + dy * dy).sqrt() <= self.radius_mm
    }
}

/// Training set minus the hole.
#[derive(Clone, Debug)]
pub struct CarvedDataset {
    pub dataset: FrameDataset,
    /// Positions in the source dataset of the removed training frames.
    pub removed: Vec<usize>,
    pub train_frames: usize,
    pub removed_fraction: f64,
}

/// Removes every training frame whose probe position falls inside `hole`.
/// Validation frames are kept. Errors if half or more of the training
/// frames would go.
pub fn carve_training_set(ds: &FrameDataset, hole: &Hole) -> Result<CarvedDataset> {
    let train = ds.train_indices();
    let positions: Vec<[f64; 3]> = train.iter().map(|&i| ds.frames[i].pose.position).collect();
    let carve = carve_hole(&positions, hole.center_mm, hole.radius_mm)?;
    if carve.removed.len() * 2 >= train.len() {
        return Err(Error::InvalidArgument(format!(
            "hole removes {} of {} training frames; must be under half",
            carve.removed.len(),
            train.len()
        )));
    }
    let removed: Vec<usize> = carve.removed.iter().map(|&k| train[k]).collect();
    Ok(CarvedDataset {
        dataset: ds.without(&removed),
        removed,
        train_frames: train.len(),
        removed_fraction: carve.removed_fraction,
    })
}

/// Per-frame validation MSE of `model` binned on `grid`.
pub fn loss_map(model: &ModelCheckpoint, frames: &[&Frame], grid: MapGrid) -> Result<LossMap> {
    let report = evaluate_model(model, frames, "val")?;
    let positions: Vec<[f64; 3]> = frames.iter().map(|f| f.pose.position).collect();
    LossMap::build(grid, &positions, &report.mse)
}

#[derive(Clone, Debug)]
pub struct HoleStudy {
    pub hole: Hole,
    pub full: LossMap,
    pub holed: LossMap,
    /// Percent change per bin; `None` where undefined.
    pub relative: Vec<Option<f64>>,
    pub removed: Vec<usize>,
    pub train_frames: usize,
    pub removed_fraction: f64,
    /// Mean relative change over defined bins inside / outside the footprint.
    pub inside_mean: Option<f64>,
    pub outside_mean: Option<f64>,
    pub full_checkpoint: ModelCheckpoint,
    pub holed_checkpoint: ModelCheckpoint,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Trains on the full and on the carved training set with the same seed,
/// then compares both on the shared validation frames. `trainer` turns a
/// dataset into a model; `full` reuses an already trained full model.
pub fn hole_study_with(
    ds: &FrameDataset,
    hole: Hole,
    bin_mm: f64,
    full: Option<ModelCheckpoint>,
    trainer: &mut dyn FnMut(&FrameDataset) -> Result<ModelCheckpoint>,
) -> Result<HoleStudy> {
    let carved = carve_training_set(ds, &hole)?;
    let val = ds.val_frames();
    if val.is_empty() {
        return Err(Error::InvalidArgument("hole study needs validation frames".into()));
    }
    let positions: Vec<[f64; 3]> = ds.frames.iter().map(|f| f.pose.position).collect();
    let grid = MapGrid::covering(&positions, bin_mm)?;

    let full_checkpoint = match full {
        Some(c) => c,
        None => trainer(ds)?,
    };
    let holed_checkpoint = trainer(&carved.dataset)?;
    let full_map = loss_map(&full_checkpoint, &val, grid)?;
    let holed_map = loss_map(&holed_checkpoint, &val, grid)?;
    let relative = relative_map(&full_map, &holed_map)?;

    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            if let Some(r) = relative[iy * grid.nx + ix] {
                if hole.covers_bin(grid.bin_center(ix, iy)) {
                    inside.push(r);
                } else {
                    outside.push(r);
                }
            }
        }
    }
    Ok(HoleStudy {
        hole,
        full: full_map,
        holed: holed_map,
        relative,
        removed: carved.removed,
        train_frames: carved.train_frames,
        removed_fraction: carved.removed_fraction,
        inside_mean: mean(&inside),
        outside_mean: mean(&outside),
        full_checkpoint,
        holed_checkpoint,
    })
}

/// [`hole_study_with`] using the standard trainer for `arch`. The
/// pretrained variant pretrains on the same frames with poses withheld.
pub fn hole_study(
    ds: &FrameDataset,
    hole: Hole,
    bin_mm: f64,
    arch: Arch,
    cfg: &TrainConfig,
    model: &DecoderConfig,
    seed: u64,
) -> Result<HoleStudy> {
    let mut trainer = |d: &FrameDataset| -> Result<ModelCheckpoint> {
        match arch {
            Arch::Decoder => Ok(train_decoder(d, cfg, model, seed)?.0),
            Arch::Autoencoder => Ok(train_autoencoder(d, cfg, model, true, seed)?.0),
            Arch::Pretrained => {
                let mut untracked = d.clone();
                untracked.tracked = false;
                Ok(pretrain_then_finetune(&untracked, d, cfg, model, seed)?.checkpoint)
            }
        }
    };
    hole_study_with(ds, hole, bin_mm, None, &mut trainer)
}
