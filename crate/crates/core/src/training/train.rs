use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::checkpoint::{Arch, CheckpointMeta, EpochLoss, Model, ModelCheckpoint};
use super::dataset::FrameDataset;
use crate::error::{Error, Result};
use crate::models::{
    build_autoencoder, build_decoder, multi_input_loss, multi_input_loss_tape, transfer_decoder_weights,
    Autoencoder, AutoencoderConfig, Decoder, DecoderConfig, NormalizedPose,
};
use crate::rng::Rng;
use crate::tensor::ops;
use crate::tensor::{AdamConfig, AdamState, Tape, Tensor, Var};

const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub val_batch_size: usize,
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub adam: AdamConfig,
    pub shuffle_seed: u64,
    /// Tracker-loss weight for the multi-input autoencoder.
    pub k: f32,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            val_batch_size: 16,
            epochs: 200,
            pretrain_epochs: 40,
            adam: AdamConfig::default(),
            shuffle_seed: 0,
            k: 1.0,
            patience: None,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.val_batch_size == 0 {
            return Err(Error::InvalidConfig("batch sizes must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        let lr = self.adam.learning_rate;
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::InvalidConfig(format!("learning rate must be finite and >= 0, got {lr}")));
        }
        if !(self.k >= 0.0) || !self.k.is_finite() {
            return Err(Error::InvalidConfig(format!("K must be >= 0, got {}", self.k)));
        }
        if self.patience == Some(0) || self.max_steps == Some(0) {
            return Err(Error::InvalidConfig("patience and max_steps must be positive when set".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Reconstruction part of `train_loss` (equal to it for plain decoders).
    pub train_recon: f64,
    /// Unweighted tracker MSE, when the tracker term is active.
    pub train_tracker: Option<f64>,
    pub val_loss: Option<f64>,
    pub steps: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    pub total_steps: usize,
    pub seconds: f64,
}

impl TrainReport {
    /// One line per epoch: `epoch,train_loss,val_loss,seconds`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,seconds\n");
        for r in &self.epochs {
            let val = r.val_loss.map_or_else(String::new, |v| v.to_string());
            out.push_str(&format!("{},{},{},{:.3}\n", r.epoch, r.train_loss, val, r.seconds));
        }
        out
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|r| r.train_loss).collect()
    }

    pub fn val_losses(&self) -> Vec<Option<f64>> {
        self.epochs.iter().map(|r| r.val_loss).collect()
    }

    fn history(&self) -> Vec<EpochLoss> {
        self.epochs
            .iter()
            .map(|r| EpochLoss {
                epoch: r.epoch,
                train_loss: r.train_loss,
                val_loss: r.val_loss,
            })
            .collect()
    }
}

/// A mini-batch in network layout.
pub struct Batch {
    pub poses: Tensor,
    pub images: Tensor,
}

/// Dense copy of a dataset split, ready for batching.
pub struct TensorSet {
    size: usize,
    poses: Vec<[f32; 7]>,
    images: Vec<f32>,
}

impl TensorSet {
    pub fn new(ds: &FrameDataset, indices: &[usize]) -> Result<Self> {
        let size = ds.image_size;
        let mut poses = Vec::with_capacity(indices.len());
        let mut images = Vec::with_capacity(indices.len() * size * size);
        for &i in indices {
            let f = &ds.frames[i];
            poses.push(NormalizedPose::from_pose(&f.pose)?.0.map(|v| v as f32));
            images.extend_from_slice(f.image.data());
        }
        Ok(Self { size, poses, images })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn batch(&self, members: &[usize]) -> Batch {
        let px = self.size * self.size;
        let mut poses = Vec::with_capacity(members.len() * 7);
        let mut images = Vec::with_capacity(members.len() * px);
        for &m in members {
            poses.extend_from_slice(&self.poses[m]);
            images.extend_from_slice(&self.images[m * px..(m + 1) * px]);
        }
        Batch {
            poses: Tensor::new(vec![members.len(), 7], poses).expect("consistent"),
            images: Tensor::new(vec![members.len(), 1, self.size, self.size], images).expect("consistent"),
        }
    }

    /// Per-pixel mean image of the set.
    pub fn mean_image(&self) -> Vec<f32> {
        let px = self.size * self.size;
        let mut acc = vec![0f64; px];
        for chunk in self.images.chunks_exact(px) {
            for (a, &v) in acc.iter_mut().zip(chunk) {
                *a += v as f64;
            }
        }
        acc.iter().map(|a| (a / self.len() as f64) as f32).collect()
    }
}

/// Scalars produced by one training step.
struct StepLoss {
    total: f64,
    recon: f64,
    tracker: Option<f64>,
}

/// Model-specific part of the training loop.
trait Objective {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
    /// Records the train-mode loss; returns the loss var and parameter vars.
    fn record(&mut self, tape: &mut Tape, batch: &Batch) -> Result<(Var, Vec<Var>, Option<Var>, Var)>;
    /// Eval-mode mean loss over the batch.
    fn eval(&self, batch: &Batch) -> Result<f64>;
}

impl Objective for Decoder {
    fn params(&self) -> Vec<&Tensor> {
        self.network().params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.network_mut().params_mut()
    }

    fn record(&mut self, tape: &mut Tape, batch: &Batch) -> Result<(Var, Vec<Var>, Option<Var>, Var)> {
        let x = tape.constant(batch.poses.clone());
        let target = tape.constant(batch.images.clone());
        let mut params = Vec::new();
        let y = self.forward_train(tape, x, &mut params)?;
        let loss = tape.mse(target, y)?;
        Ok((loss, params, None, loss))
    }

    fn eval(&self, batch: &Batch) -> Result<f64> {
        let y = self.forward(&batch.poses)?;
        Ok(ops::mse_forward(&batch.images, &y)? as f64)
    }
}

#[derive(Clone)]
struct AutoencoderObjective {
    model: Autoencoder,
    use_tracker: bool,
    k: f32,
}

impl Objective for AutoencoderObjective {
    fn params(&self) -> Vec<&Tensor> {
        self.model.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.model.params_mut()
    }

    fn record(&mut self, tape: &mut Tape, batch: &Batch) -> Result<(Var, Vec<Var>, Option<Var>, Var)> {
        let images = tape.constant(batch.images.clone());
        let tracker = self.use_tracker.then(|| tape.constant(batch.poses.clone()));
        let mut params = Vec::new();
        let (z, recon) = self.model.forward_train(tape, images, &mut params)?;
        let terms = multi_input_loss_tape(tape, recon, images, z, tracker, self.k)?;
        Ok((terms.total, params, terms.tracker, terms.reconstruction))
    }

    fn eval(&self, batch: &Batch) -> Result<f64> {
        let out = self.model.forward(&batch.images)?;
        let k = if self.use_tracker { self.k } else { 0.0 };
        multi_input_loss(&out.reconstruction, &batch.images, &out.latent, &batch.poses, k)
    }
}

fn train_step<O: Objective>(obj: &mut O, adam: &mut AdamState, batch: &Batch) -> Result<StepLoss> {
    let mut tape = Tape::new();
    let (loss, params, tracker, recon) = obj.record(&mut tape, batch)?;
    let value = |v: Var, tape: &Tape| tape.value(v).item().expect("scalar") as f64;
    let step = StepLoss {
        total: value(loss, &tape),
        recon: value(recon, &tape),
        tracker: tracker.map(|t| value(t, &tape)),
    };
    tape.backward(loss)?;
    let grads: Vec<Vec<f32>> = params
        .iter()
        .map(|&p| tape.take_grad(p).unwrap_or_else(|| vec![0.0; tape.value(p).numel()]))
        .collect();
    drop(tape);
    let grad_refs: Vec<&[f32]> = grads.iter().map(|g| g.as_slice()).collect();
    adam.step(&mut obj.params_mut(), &grad_refs)?;
    Ok(step)
}

/// Sample-weighted eval-mode loss over `set`.
fn evaluate<O: Objective>(obj: &O, set: &TensorSet, batch_size: usize) -> Result<Option<f64>> {
    if set.is_empty() {
        return Ok(None);
    }
    let order: Vec<usize> = (0..set.len()).collect();
    let mut acc = 0.0;
    for chunk in order.chunks(batch_size) {
        acc += obj.eval(&set.batch(chunk))? * chunk.len() as f64;
    }
    Ok(Some(acc / set.len() as f64))
}

fn fit<O: Objective + Clone>(
    mut obj: O,
    ds: &FrameDataset,
    cfg: &TrainConfig,
    epochs: usize,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<(O, TrainReport)> {
    cfg.validate()?;
    let train = TensorSet::new(ds, &ds.train_indices())?;
    let val = TensorSet::new(ds, &ds.val_indices())?;
    if train.is_empty() {
        return Err(Error::DatasetTooSmall { have: 0, need: 1 });
    }
    let mut adam = AdamState::new(cfg.adam, obj.params());
    let started = Instant::now();
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        total_steps: 0,
        seconds: 0.0,
    };
    let mut best: Option<(f64, O)> = None;
    let mut since_best = 0;

    'epochs: for epoch in 1..=epochs {
        let t0 = Instant::now();
        let order = Rng::derive(cfg.shuffle_seed, SHUFFLE_STREAM ^ epoch as u64).permutation(train.len());
        let (mut sum, mut sum_recon, mut sum_trk, mut seen, mut steps) = (0.0, 0.0, 0.0, 0usize, 0usize);
        let mut has_tracker = false;
        for (step, members) in order.chunks(cfg.batch_size).enumerate() {
            if cfg.max_steps.is_some_and(|m| report.total_steps >= m) {
                break;
            }
            let loss = train_step(&mut obj, &mut adam, &train.batch(members))?;
            if !loss.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    value: loss.total,
                });
            }
            let n = members.len() as f64;
            sum += loss.total * n;
            sum_recon += loss.recon * n;
            if let Some(t) = loss.tracker {
                sum_trk += t * n;
                has_tracker = true;
            }
            seen += members.len();
            steps += 1;
            report.total_steps += 1;
        }
        if steps == 0 {
            break;
        }
        let val_loss = evaluate(&obj, &val, cfg.val_batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: sum / seen as f64,
            train_recon: sum_recon / seen as f64,
            train_tracker: has_tracker.then(|| sum_trk / seen as f64),
            val_loss,
            steps,
            seconds: t0.elapsed().as_secs_f64(),
        };
        progress(&record);
        report.epochs.push(record);

        // without a validation split the latest weights are kept
        let improved = match val_loss {
            None => true,
            Some(v) => best.as_ref().is_none_or(|(b, _)| v < *b),
        };
        if improved {
            best = Some((val_loss.unwrap_or(f64::NAN), obj.clone()));
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                break 'epochs;
            }
        }
        if cfg.max_steps.is_some_and(|m| report.total_steps >= m) {
            break;
        }
    }
    report.seconds = started.elapsed().as_secs_f64();
    let model = best.map_or(obj, |(_, m)| m);
    Ok((model, report))
}

fn meta_for(arch: Arch, ds: &FrameDataset, cfg: &TrainConfig, seed: u64, report: &TrainReport) -> CheckpointMeta {
    let mut meta = CheckpointMeta::new(arch, seed);
    meta.epoch = report.best_epoch;
    meta.shuffle_seed = cfg.shuffle_seed;
    meta.history = report.history();
    meta.phantom_hash = ds.phantom_hash.clone();
    meta.imaging = ds.imaging;
    meta
}

fn check_size(ds: &FrameDataset, size: usize) -> Result<()> {
    if ds.image_size != size {
        return Err(Error::InvalidConfig(format!(
            "model output {size} does not match dataset images {}",
            ds.image_size
        )));
    }
    Ok(())
}

/// Trains a fresh decoder on the dataset's train split.
pub fn train_decoder(
    ds: &FrameDataset,
    cfg: &TrainConfig,
    model: &DecoderConfig,
    seed: u64,
) -> Result<(ModelCheckpoint, TrainReport)> {
    train_decoder_with(ds, cfg, model, seed, &mut |_| {})
}

pub fn train_decoder_with(
    ds: &FrameDataset,
    cfg: &TrainConfig,
    model: &DecoderConfig,
    seed: u64,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<(ModelCheckpoint, TrainReport)> {
    let decoder = build_decoder(model, seed)?;
    finetune_decoder(decoder, Arch::Decoder, ds, cfg, seed, progress)
}

fn finetune_decoder(
    decoder: Decoder,
    arch: Arch,
    ds: &FrameDataset,
    cfg: &TrainConfig,
    seed: u64,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<(ModelCheckpoint, TrainReport)> {
    check_size(ds, decoder.output_size())?;
    if !ds.tracked {
        return Err(Error::InvalidArgument("decoder training needs a tracked dataset".into()));
    }
    let (decoder, report) = fit(decoder, ds, cfg, cfg.epochs, progress)?;
    let meta = meta_for(arch, ds, cfg, seed, &report);
    Ok((ModelCheckpoint::new(Model::Decoder(decoder), meta), report))
}

/// Trains the autoencoder; with `use_tracker_loss` off only the
/// reconstruction term is optimized and poses are never read.
pub fn train_autoencoder(
    ds: &FrameDataset,
    cfg: &TrainConfig,
    model: &DecoderConfig,
    use_tracker_loss: bool,
    seed: u64,
) -> Result<(ModelCheckpoint, TrainReport)> {
    train_autoencoder_with(ds, cfg, model, use_tracker_loss, seed, cfg.epochs, &mut |_| {})
}

pub fn train_autoencoder_with(
    ds: &FrameDataset,
    cfg: &TrainConfig,
    model: &DecoderConfig,
    use_tracker_loss: bool,
    seed: u64,
    epochs: usize,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<(ModelCheckpoint, TrainReport)> {
    check_size(ds, model.output_size)?;
    if use_tracker_loss && !ds.tracked {
        return Err(Error::InvalidArgument("tracker loss needs a tracked dataset".into()));
    }
    let mut ae_cfg = AutoencoderConfig::new(model.clone());
    ae_cfg.k = cfg.k;
    let obj = AutoencoderObjective {
        model: build_autoencoder(&ae_cfg, seed)?,
        use_tracker: use_tracker_loss,
        k: cfg.k,
    };
    let (obj, report) = if epochs == 0 {
        (obj, TrainReport {
            epochs: Vec::new(),
            best_epoch: 0,
            total_steps: 0,
            seconds: 0.0,
        })
    } else {
        fit(obj, ds, cfg, epochs, progress)?
    };
    let meta = meta_for(Arch::Autoencoder, ds, cfg, seed, &report);
    Ok((ModelCheckpoint::new(Model::Autoencoder(obj.model), meta), report))
}

/// Everything produced by [`pretrain_then_finetune`].
pub struct PretrainOutcome {
    pub pretrained: ModelCheckpoint,
    pub pretrain_report: TrainReport,
    /// Decoder parameter hash right after the weight transfer.
    pub transferred_hash: String,
    pub checkpoint: ModelCheckpoint,
    pub report: TrainReport,
}

/// Reconstruction-only autoencoder pretraining on `untracked`, weight
/// transfer into a decoder, then decoder training on `tracked`.
pub fn pretrain_then_finetune(
    untracked: &FrameDataset,
    tracked: &FrameDataset,
    cfg: &TrainConfig,
    model: &DecoderConfig,
    seed: u64,
) -> Result<PretrainOutcome> {
    pretrain_then_finetune_with(untracked, tracked, cfg, model, seed, &mut |_| {})
}

pub fn pretrain_then_finetune_with(
    untracked: &FrameDataset,
    tracked: &FrameDataset,
    cfg: &TrainConfig,
    model: &DecoderConfig,
    seed: u64,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<PretrainOutcome> {
    let (pretrained, pretrain_report) =
        train_autoencoder_with(untracked, cfg, model, false, seed, cfg.pretrain_epochs, progress)?;
    let Model::Autoencoder(ae) = &pretrained.model else {
        unreachable!("autoencoder training returns an autoencoder")
    };
    let mut decoder = build_decoder(model, seed)?;
    transfer_decoder_weights(ae, &mut decoder)?;
    let transferred_hash = decoder.parameter_hash();
    let (checkpoint, report) = finetune_decoder(decoder, Arch::Pretrained, tracked, cfg, seed, progress)?;
    Ok(PretrainOutcome {
        pretrained,
        pretrain_report,
        transferred_hash,
        checkpoint,
        report,
    })
}
