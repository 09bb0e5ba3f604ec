use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimConstants {
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of pixel values.
    pub l: f64,
}

impl Default for SsimConstants {
    fn default() -> Self {
        Self {
            k1: 0.01,
            k2: 0.03,
            l: 1.0,
        }
    }
}

impl SsimConstants {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.l).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.l).powi(2)
    }
}

fn check_pair(op: &'static str, a: &Image, b: &Image) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::shape(
            op,
            format!("{}x{} vs {}x{}", a.width(), a.height(), b.width(), b.height()),
        ))
    }
}

fn mean(x: &[f32]) -> f64 {
    x.iter().map(|&v| v as f64).sum::<f64>() / x.len() as f64
}

fn covariance(a: &[f32], ma: f64, b: &[f32], mb: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - ma) * (y as f64 - mb))
        .sum::<f64>()
        / a.len() as f64
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_pair("mse", a, b)?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.data().len() as f64)
}

/// Single-window SSIM from whole-image means, population variances and
/// covariance. Symmetric, and exactly 1 for identical inputs.
pub fn ssim(a: &Image, b: &Image, consts: &SsimConstants) -> Result<f64> {
    check_pair("ssim", a, b)?;
    if !(consts.l > 0.0) {
        return Err(Error::InvalidArgument(format!("dynamic range must be positive, got {}", consts.l)));
    }
    let (c1, c2) = (consts.c1(), consts.c2());
    let (x, y) = (a.data(), b.data());
    let (mx, my) = (mean(x), mean(y));
    let vx = covariance(x, mx, x, mx);
    let vy = covariance(y, my, y, my);
    let cxy = covariance(x, mx, y, my);
    Ok(((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsnrPeak {
    /// Maximum of the simulated image.
    #[default]
    SimulatedMax,
    /// Fixed dynamic range `L = 1`.
    DynamicRange,
}

/// `10 log10(peak^2 / mse(reference, simulated))`; `+inf` for identical
/// images, `-inf` when the peak is zero but the images differ.
pub fn psnr(reference: &Image, simulated: &Image) -> Result<f64> {
    psnr_with(reference, simulated, PsnrPeak::SimulatedMax)
}

pub fn psnr_with(reference: &Image, simulated: &Image, peak: PsnrPeak) -> Result<f64> {
    let err = mse(reference, simulated)?;
    let peak = match peak {
        PsnrPeak::SimulatedMax => simulated.data().iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64,
        PsnrPeak::DynamicRange => 1.0,
    };
    Ok(psnr_from(peak, err))
}

pub fn psnr_from(peak: f64, mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}
