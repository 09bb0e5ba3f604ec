use std::path::Path;
use std::time::Instant;

use ussim_core::models::NormalizedPose;
use ussim_core::phantom::{ImagingParams, PhantomOracle, PhantomSpec, Pose, TRACKER_MAX_MM};
use ussim_core::training::ModelCheckpoint;

use crate::error::ApiError;
use crate::protocol::{encode_response, BlockInfo, Meta, ResponseHeader, SimRequest};

/// Requests whose quaternion norm is further than this from 1 are rejected;
/// closer ones are renormalized.
pub const QUATERNION_TOLERANCE: f64 = 1e-3;

/// A loaded model and phantom, immutable for the server's lifetime.
#[derive(Debug)]
pub struct AppState {
    checkpoint: ModelCheckpoint,
    oracle: PhantomOracle,
    meta: Meta,
}

impl AppState {
    /// Pairs a checkpoint with a phantom, using the checkpoint's recorded
    /// scan geometry when present.
    pub fn new(checkpoint: ModelCheckpoint, spec: PhantomSpec) -> ussim_core::Result<Self> {
        let size = checkpoint.output_size();
        let params = match checkpoint.meta.imaging {
            Some(p) => p,
            None => ImagingParams::for_size(size)?,
        };
        if params.size != size {
            return Err(ussim_core::Error::InvalidConfig(format!(
                "checkpoint outputs {size} px but its scan geometry is {} px",
                params.size
            )));
        }
        let oracle = PhantomOracle::new(spec, params)?;
        Ok(Self::with_oracle(checkpoint, oracle))
    }

    /// Reuses an existing oracle; its image size must match the model.
    pub fn with_oracle(checkpoint: ModelCheckpoint, oracle: PhantomOracle) -> Self {
        let meta = Meta {
            model_id: checkpoint.model_id(),
            arch: checkpoint.meta.arch.name().to_string(),
            image_size: checkpoint.output_size(),
            parameter_count: checkpoint.model.parameter_count(),
            phantom_hash: oracle.spec_hash(),
            pixel_spacing_mm: oracle.params.pixel_spacing_mm(),
        };
        Self {
            checkpoint,
            oracle,
            meta,
        }
    }

    /// Loads a checkpoint and, if given, a phantom spec (default phantom otherwise).
    pub fn load(ckpt: &Path, phantom: Option<&Path>) -> ussim_core::Result<Self> {
        let checkpoint = ModelCheckpoint::load(ckpt)?;
        let spec = match phantom {
            Some(p) => PhantomSpec::load(p)?,
            None => PhantomSpec::default(),
        };
        if !checkpoint.meta.phantom_hash.is_empty() && checkpoint.meta.phantom_hash != spec.hash() {
            tracing::warn!("checkpoint was trained on a different phantom than the one served");
        }
        Self::new(checkpoint, spec)
    }

    pub fn meta(&self) -> &Meta {
        &self.meta
    }

    pub fn checkpoint(&self) -> &ModelCheckpoint {
        &self.checkpoint
    }

    pub fn oracle(&self) -> &PhantomOracle {
        &self.oracle
    }

    /// Runs one request and returns the encoded response.
    pub fn simulate(&self, req: &SimRequest, seq: Option<u64>) -> Result<Vec<u8>, ApiError> {
        let pose = validate_pose(req.pose)?;
        let input = NormalizedPose::from_pose(&pose).map_err(|e| ApiError::unprocessable("invalid_pose", e.to_string()))?;
        let start = Instant::now();
        let simulated = self
            .checkpoint
            .simulate(&input)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        let inference_ms = start.elapsed().as_secs_f64() * 1e3;

        let size = self.meta.image_size;
        let block = |name: &str| BlockInfo {
            name: name.to_string(),
            width: size,
            height: size,
            encoding: req.encoding,
            offset: 0,
            length: 0,
        };
        let mut blocks = vec![block("simulated")];
        let mut payloads = vec![req.encoding.encode(&simulated)];
        if req.oracle {
            let slice = self
                .oracle
                .render(&pose)
                .map_err(|e| ApiError::unprocessable("invalid_pose", e.to_string()))?;
            blocks.push(block("oracle"));
            payloads.push(req.encoding.encode(&slice.image));
        }
        let header = ResponseHeader {
            model_id: self.meta.model_id.clone(),
            image_size: size,
            inference_ms,
            pose: pose.to_array(),
            seq,
            blocks,
        };
        Ok(encode_response(header, payloads))
    }
}

/// Checks a raw `[qw, qx, qy, qz, x, y, z]` pose, renormalizing a nearly
/// unit quaternion. Positions must lie in the tracker volume.
pub fn validate_pose(raw: [f64; 7]) -> Result<Pose, ApiError> {
    if !raw.iter().all(|v| v.is_finite()) {
        return Err(ApiError::unprocessable("invalid_pose", "pose has non-finite components"));
    }
    let norm = raw[..4].iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > QUATERNION_TOLERANCE {
        return Err(ApiError::unprocessable(
            "invalid_quaternion",
            format!("quaternion norm {norm} is not within {QUATERNION_TOLERANCE} of 1"),
        ));
    }
    let mut v = raw;
    for q in &mut v[..4] {
        *q /= norm;
    }
    let [mx, my, mz] = TRACKER_MAX_MM;
    let (x, y, z) = (v[4], v[5], v[6]);
    if x.abs() > mx || y.abs() > my || !(0.0..=mz).contains(&z) {
        return Err(ApiError::unprocessable(
            "out_of_volume",
            format!("position ({x}, {y}, {z}) mm outside the tracker volume"),
        ));
    }
    Pose::from_array(v).map_err(|e| ApiError::unprocessable("invalid_pose", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_validation() {
        let p = validate_pose([1.0005, 0.0, 0.0, 0.0, 10.0, -5.0, 100.0]).unwrap();
        assert!((p.quaternion_norm() - 1.0).abs() < 1e-12);
        assert_eq!(p.position, [10.0, -5.0, 100.0]);
        assert_eq!(validate_pose([1.01, 0.0, 0.0, 0.0, 0.0, 0.0, 100.0]).unwrap_err().code, "invalid_quaternion");
        assert_eq!(validate_pose([1.0, 0.0, 0.0, 0.0, 300.0, 0.0, 100.0]).unwrap_err().code, "out_of_volume");
        assert_eq!(validate_pose([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0]).unwrap_err().code, "out_of_volume");
        assert_eq!(validate_pose([f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap_err().code, "invalid_pose");
    }
}
