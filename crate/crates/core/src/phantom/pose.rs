use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tracker working volume: |x|, |y| up to 250 mm, z in [0, 500] mm.
pub const TRACKER_MAX_MM: [f64; 3] = [250.0, 250.0, 500.0];

/// Allowed deviation of a pose quaternion from unit norm.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Transducer pose in tracker coordinates.
///
/// The probe frame has the lateral image axis along local +x, the elevation
/// (slice normal) along local +y and the beam along local -z, so the identity
/// orientation looks straight down.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Millimetres.
    pub position: [f64; 3],
    /// `[qw, qx, qy, qz]`.
    pub orientation: [f64; 4],
}

impl Pose {
    pub fn new(position: [f64; 3], orientation: [f64; 4]) -> Result<Self> {
        let pose = Self {
            position,
            orientation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn from_rotation(position: [f64; 3], rotation: UnitQuaternion<f64>) -> Result<Self> {
        let q = rotation.quaternion();
        Self::new(position, [q.w, q.i, q.j, q.k])
    }

    /// `[qw, qx, qy, qz, x, y, z]`.
    pub fn from_array(v: [f64; 7]) -> Result<Self> {
        Self::new([v[4], v[5], v[6]], [v[0], v[1], v[2], v[3]])
    }

    pub fn to_array(&self) -> [f64; 7] {
        let [qw, qx, qy, qz] = self.orientation;
        let [x, y, z] = self.position;
        [qw, qx, qy, qz, x, y, z]
    }

    pub fn quaternion_norm(&self) -> f64 {
        self.orientation.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.position.iter().chain(&self.orientation).all(|v| v.is_finite()) {
            return Err(Error::InvalidPose("non-finite component".into()));
        }
        let norm = self.quaternion_norm();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::InvalidPose(format!("quaternion norm {norm} is not 1")));
        }
        let [x, y, z] = self.position;
        let [mx, my, mz] = TRACKER_MAX_MM;
        if x.abs() > mx || y.abs() > my || !(0.0..=mz).contains(&z) {
            return Err(Error::InvalidPose(format!(
                "position ({x}, {y}, {z}) mm outside the tracker volume"
            )));
        }
        Ok(())
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        let [w, i, j, k] = self.orientation;
        UnitQuaternion::new_normalize(Quaternion::new(w, i, j, k))
    }

    pub fn position_vec(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }

    pub fn lateral_axis(&self) -> Vector3<f64> {
        self.rotation() * Vector3::x()
    }

    pub fn elevation_axis(&self) -> Vector3<f64> {
        self.rotation() * Vector3::y()
    }

    pub fn beam_axis(&self) -> Vector3<f64> {
        self.rotation() * -Vector3::z()
    }

    /// Rotates the probe about its own beam axis.
    pub fn rolled(&self, angle: f64) -> Result<Pose> {
        let roll = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle);
        Pose::from_rotation(self.position, self.rotation() * roll)
    }

    /// True when both quaternions describe the same rotation (`q` or `-q`).
    pub fn same_orientation(&self, other: &Pose, tol: f64) -> bool {
        let dot: f64 = self.orientation.iter().zip(&other.orientation).map(|(a, b)| a * b).sum();
        (dot.abs() - 1.0).abs() <= tol
    }

    pub fn distance_to(&self, point: [f64; 3]) -> f64 {
        (self.position_vec() - Vector3::from(point)).norm()
    }
}

/// Probe placement on the half-ellipsoid phantom surface, in radians.
///
/// `u` swings the contact point about the y axis and `v` about the x axis,
/// so `u = v = 0` is the apex and the whole open range `(-pi/2, pi/2)^2`
/// covers the upper half. `tilt` rocks the beam about the lateral axis and
/// `roll` spins the probe about its beam.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCoords {
    pub u: f64,
    pub v: f64,
    pub tilt: f64,
    pub roll: f64,
}

pub const MAX_TILT_DEG: f64 = 30.0;
pub const MAX_ROLL_DEG: f64 = 180.0;

impl SurfaceCoords {
    pub fn from_degrees(u: f64, v: f64, tilt: f64, roll: f64) -> Self {
        Self {
            u: u.to_radians(),
            v: v.to_radians(),
            tilt: tilt.to_radians(),
            roll: roll.to_radians(),
        }
    }

    fn validate(&self) -> Result<()> {
        let half_pi = std::f64::consts::FRAC_PI_2;
        let eps = 1e-12;
        if !(self.u.abs() < half_pi && self.v.abs() < half_pi) {
            return Err(Error::InvalidArgument(format!(
                "surface angles ({}, {}) must lie strictly inside (-90, 90) degrees",
                self.u.to_degrees(),
                self.v.to_degrees()
            )));
        }
        if self.tilt.abs() > MAX_TILT_DEG.to_radians() + eps {
            return Err(Error::InvalidArgument(format!(
                "tilt {} deg outside +-{MAX_TILT_DEG}",
                self.tilt.to_degrees()
            )));
        }
        if self.roll.abs() > MAX_ROLL_DEG.to_radians() + eps {
            return Err(Error::InvalidArgument(format!(
                "roll {} deg outside +-{MAX_ROLL_DEG}",
                self.roll.to_degrees()
            )));
        }
        Ok(())
    }
}

/// Point on the upper half-ellipsoid with semi-axes `semi_axes`.
pub fn surface_point(u: f64, v: f64, semi_axes: [f64; 3]) -> Vector3<f64> {
    let dir = Vector3::new(u.sin() * v.cos(), v.sin(), u.cos() * v.cos());
    Vector3::new(semi_axes[0] * dir.x, semi_axes[1] * dir.y, semi_axes[2] * dir.z)
}

/// Outward unit normal of the ellipsoid at `p`.
pub fn surface_normal(p: &Vector3<f64>, semi_axes: [f64; 3]) -> Unit<Vector3<f64>> {
    let [a, b, c] = semi_axes;
    Unit::new_normalize(Vector3::new(p.x / (a * a), p.y / (b * b), p.z / (c * c)))
}

/// Probe pose touching the phantom surface with the beam pointing inward
/// along the surface normal, then tilted and finally spun about its own beam.
pub fn surface_pose(coords: SurfaceCoords, semi_axes: [f64; 3]) -> Result<Pose> {
    if semi_axes.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Geometry(format!("semi-axes must be positive, got {semi_axes:?}")));
    }
    coords.validate()?;
    let p = surface_point(coords.u, coords.v, semi_axes);
    let n = surface_normal(&p, semi_axes);
    let base = UnitQuaternion::rotation_between(&Vector3::z(), &n)
        .ok_or_else(|| Error::Geometry("normal opposite to +z on the upper half".into()))?;
    let roll = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), coords.roll);
    let tilt = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), coords.tilt);
    let mut q = base * tilt * roll;
    q.renormalize();
    Pose::from_rotation([p.x, p.y, p.z], q)
}
