use serde::{Deserialize, Serialize};

use super::metrics::{mse, psnr_with, ssim, PsnrPeak, SsimConstants};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::models::{Decoder, NormalizedPose};
use crate::phantom::{Frame, PhantomOracle, Pose};
use crate::training::ModelCheckpoint;

/// Anything that maps a pose to an image.
pub trait Simulator {
    fn image_size(&self) -> usize;

    fn simulate_pose(&self, pose: &Pose) -> Result<Image>;

    fn simulate_poses(&self, poses: &[Pose]) -> Result<Vec<Image>> {
        poses.iter().map(|p| self.simulate_pose(p)).collect()
    }
}

const EVAL_BATCH: usize = 16;

impl Simulator for Decoder {
    fn image_size(&self) -> usize {
        self.output_size()
    }

    fn simulate_pose(&self, pose: &Pose) -> Result<Image> {
        Decoder::simulate(self, &NormalizedPose::from_pose(pose)?)
    }

    fn simulate_poses(&self, poses: &[Pose]) -> Result<Vec<Image>> {
        let mut out = Vec::with_capacity(poses.len());
        for chunk in poses.chunks(EVAL_BATCH) {
            let norm = chunk.iter().map(NormalizedPose::from_pose).collect::<Result<Vec<_>>>()?;
            out.extend(self.simulate_batch(&norm)?);
        }
        Ok(out)
    }
}

impl Simulator for ModelCheckpoint {
    fn image_size(&self) -> usize {
        self.output_size()
    }

    fn simulate_pose(&self, pose: &Pose) -> Result<Image> {
        self.decoder().simulate_pose(pose)
    }

    fn simulate_poses(&self, poses: &[Pose]) -> Result<Vec<Image>> {
        self.decoder().simulate_poses(poses)
    }
}

impl Simulator for PhantomOracle {
    fn image_size(&self) -> usize {
        self.params.size
    }

    fn simulate_pose(&self, pose: &Pose) -> Result<Image> {
        Ok(self.render(pose)?.image)
    }
}

/// Predicts the same image for every pose.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantModel {
    pub image: Image,
}

impl ConstantModel {
    pub fn filled(size: usize, value: f32) -> Self {
        Self {
            image: Image::filled(size, size, value),
        }
    }

    /// Pixelwise mean of `frames`.
    pub fn mean_of(frames: &[&Frame]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("mean image of an empty set".into()))?;
        let (w, h) = (first.image.width(), first.image.height());
        let mut acc = vec![0f64; w * h];
        for f in frames {
            if !f.image.same_shape(&first.image) {
                return Err(Error::shape("mean image", "frames differ in size"));
            }
            for (a, &v) in acc.iter_mut().zip(f.image.data()) {
                *a += v as f64;
            }
        }
        let n = frames.len() as f64;
        let image = Image::new(w, h, acc.into_iter().map(|a| (a / n) as f32).collect())?;
        Ok(Self { image })
    }
}

impl Simulator for ConstantModel {
    fn image_size(&self) -> usize {
        self.image.width()
    }

    fn simulate_pose(&self, _pose: &Pose) -> Result<Image> {
        Ok(self.image.clone())
    }
}

/// Per-frame metrics plus their averages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub split: String,
    pub mse: Vec<f64>,
    pub ssim: Vec<f64>,
    pub psnr: Vec<f64>,
    pub mean_mse: f64,
    pub mean_ssim: f64,
    /// `+inf` if any frame is reproduced exactly.
    pub mean_psnr: f64,
}

impl QualityReport {
    pub fn len(&self) -> usize {
        self.mse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mse.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame,mse,ssim,psnr\n");
        for i in 0..self.len() {
            s.push_str(&format!("{i},{},{},{}\n", self.mse[i], self.ssim[i], self.psnr[i]));
        }
        s.push_str(&format!("mean,{},{},{}\n", self.mean_mse, self.mean_ssim, self.mean_psnr));
        s
    }
}

fn average(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Scores `model` against each frame's stored oracle image.
pub fn evaluate_model(model: &dyn Simulator, frames: &[&Frame], split: &str) -> Result<QualityReport> {
    evaluate_model_with(model, frames, split, &SsimConstants::default(), PsnrPeak::default())
}

pub fn evaluate_model_with(
    model: &dyn Simulator,
    frames: &[&Frame],
    split: &str,
    consts: &SsimConstants,
    peak: PsnrPeak,
) -> Result<QualityReport> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument(format!("no frames in split {split:?}")));
    }
    let poses: Vec<Pose> = frames.iter().map(|f| f.pose).collect();
    let sims = model.simulate_poses(&poses)?;
    let mut report = QualityReport {
        split: split.to_string(),
        mse: Vec::with_capacity(frames.len()),
        ssim: Vec::with_capacity(frames.len()),
        psnr: Vec::with_capacity(frames.len()),
        mean_mse: 0.0,
        mean_ssim: 0.0,
        mean_psnr: 0.0,
    };
    for (f, sim) in frames.iter().zip(&sims) {
        report.mse.push(mse(&f.image, sim)?);
        report.ssim.push(ssim(&f.image, sim, consts)?);
        report.psnr.push(psnr_with(&f.image, sim, peak)?);
    }
    report.mean_mse = average(&report.mse);
    report.mean_ssim = average(&report.ssim);
    report.mean_psnr = average(&report.psnr);
    Ok(report)
}
