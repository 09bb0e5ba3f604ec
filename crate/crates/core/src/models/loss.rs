use crate::error::{Error, Result};
use crate::tensor::ops;
use crate::tensor::{Tape, Tensor, Var};

fn check_k(k: f32) -> Result<()> {
    if k >= 0.0 && k.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("tracker weight K must be >= 0, got {k}")))
    }
}

/// Reconstruction MSE plus `k` times the latent-vs-tracker MSE.
pub fn multi_input_loss(recon: &Tensor, input: &Tensor, latent: &Tensor, tracker: &Tensor, k: f32) -> Result<f64> {
    check_k(k)?;
    let image = ops::mse_forward(input, recon)? as f64;
    let tracker = ops::mse_forward(tracker, latent)? as f64;
    Ok(image + k as f64 * tracker)
}

/// Terms of the multi-input loss as recorded on a tape.
pub struct LossTerms {
    pub total: Var,
    pub reconstruction: Var,
    pub tracker: Option<Var>,
}

/// Taped loss; `tracker = None` drops the pose term (pretraining).
pub fn multi_input_loss_tape(
    tape: &mut Tape,
    recon: Var,
    input: Var,
    latent: Var,
    tracker: Option<Var>,
    k: f32,
) -> Result<LossTerms> {
    check_k(k)?;
    let reconstruction = tape.mse(input, recon)?;
    let Some(t) = tracker else {
        return Ok(LossTerms {
            total: reconstruction,
            reconstruction,
            tracker: None,
        });
    };
    let trk = tape.mse(t, latent)?;
    let weighted = tape.scale(trk, k)?;
    let total = tape.add(reconstruction, weighted)?;
    Ok(LossTerms {
        total,
        reconstruction,
        tracker: Some(trk),
    })
}
