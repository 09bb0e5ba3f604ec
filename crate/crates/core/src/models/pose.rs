use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::{Pose, TRACKER_MAX_MM, UNIT_NORM_TOL};
use crate::tensor::Tensor;

pub const POSE_DIM: usize = 7;

/// Network input `[qw, qx, qy, qz, x/250, y/250, z/500]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPose(pub [f64; POSE_DIM]);

impl NormalizedPose {
    pub fn new(v: [f64; POSE_DIM]) -> Result<Self> {
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidPose("non-finite component".into()));
        }
        let qn = v[..4].iter().map(|x| x * x).sum::<f64>().sqrt();
        if (qn - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::InvalidPose(format!("quaternion norm {qn} is not 1")));
        }
        let bounds_ok = v[4].abs() <= 1.0 && v[5].abs() <= 1.0 && (0.0..=1.0).contains(&v[6]);
        if !bounds_ok {
            return Err(Error::InvalidPose(format!("scaled position {:?} outside the unit box", &v[4..])));
        }
        Ok(Self(v))
    }

    pub fn from_pose(pose: &Pose) -> Result<Self> {
        pose.validate()?;
        let [qw, qx, qy, qz] = pose.orientation;
        let [x, y, z] = pose.position;
        let [mx, my, mz] = TRACKER_MAX_MM;
        Self::new([qw, qx, qy, qz, x / mx, y / my, z / mz])
    }

    pub fn to_pose(&self) -> Result<Pose> {
        let v = self.0;
        let [mx, my, mz] = TRACKER_MAX_MM;
        Pose::new([v[4] * mx, v[5] * my, v[6] * mz], [v[0], v[1], v[2], v[3]])
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_fn(&[1, POSE_DIM], |i| self.0[i] as f32)
    }

    pub fn batch(poses: &[NormalizedPose]) -> Result<Tensor> {
        let data = poses.iter().flat_map(|p| p.0.map(|v| v as f32)).collect();
        Tensor::new(vec![poses.len(), POSE_DIM], data)
    }
}
