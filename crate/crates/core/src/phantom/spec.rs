use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Procedural phantom: a half-ellipsoid resting on the bed plane `z = 0`,
/// filled with background tissue and a list of interior primitives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    /// Semi-axes `(a, b, c)` in mm; the phantom spans `|x| <= a`, `|y| <= b`,
    /// `0 <= z <= c`.
    pub semi_axes_mm: [f64; 3],
    pub background_intensity: f32,
    /// Per-mm attenuation coefficient of the background tissue.
    pub background_attenuation: f32,
    pub speckle: Speckle,
    #[serde(default)]
    pub primitives: Vec<Primitive>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Speckle {
    /// Correlation length of the baked texture.
    pub scale_mm: f64,
    /// Multiplicative swing in [0, 1]; 0 disables speckle.
    pub amplitude: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    pub intensity: f32,
    pub attenuation: f32,
    /// Emits a single ghost echo of its first interface along each beam.
    #[serde(default)]
    pub reverberant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Ellipsoid {
        center_mm: [f64; 3],
        semi_axes_mm: [f64; 3],
    },
    Tube {
        start_mm: [f64; 3],
        end_mm: [f64; 3],
        radius_mm: f64,
    },
}

impl Shape {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        match self {
            Shape::Ellipsoid {
                center_mm,
                semi_axes_mm,
            } => {
                let d = p - Vector3::from(*center_mm);
                (0..3).map(|i| (d[i] / semi_axes_mm[i]).powi(2)).sum::<f64>() <= 1.0
            }
            Shape::Tube {
                start_mm,
                end_mm,
                radius_mm,
            } => {
                let (a, b) = (Vector3::from(*start_mm), Vector3::from(*end_mm));
                let ab = b - a;
                let t = ((p - a).dot(&ab) / ab.norm_squared().max(f64::MIN_POSITIVE)).clamp(0.0, 1.0);
                (p - (a + ab * t)).norm() <= *radius_mm
            }
        }
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        match self {
            Shape::Ellipsoid {
                center_mm,
                semi_axes_mm,
            } => (
                [0, 1, 2].map(|i| center_mm[i] - semi_axes_mm[i]),
                [0, 1, 2].map(|i| center_mm[i] + semi_axes_mm[i]),
            ),
            Shape::Tube {
                start_mm,
                end_mm,
                radius_mm,
            } => (
                [0, 1, 2].map(|i| start_mm[i].min(end_mm[i]) - radius_mm),
                [0, 1, 2].map(|i| start_mm[i].max(end_mm[i]) + radius_mm),
            ),
        }
    }

    /// Points that must all lie inside the phantom for the shape to fit.
    fn extreme_points(&self) -> Vec<Vector3<f64>> {
        let axes = [Vector3::x(), Vector3::y(), Vector3::z()];
        let (centers, radii): (Vec<Vector3<f64>>, [f64; 3]) = match self {
            Shape::Ellipsoid {
                center_mm,
                semi_axes_mm,
            } => (vec![Vector3::from(*center_mm)], *semi_axes_mm),
            Shape::Tube {
                start_mm,
                end_mm,
                radius_mm,
            } => (
                vec![Vector3::from(*start_mm), Vector3::from(*end_mm)],
                [*radius_mm; 3],
            ),
        };
        let mut pts = Vec::new();
        for c in centers {
            pts.push(c);
            for (axis, r) in axes.iter().zip(radii) {
                pts.push(c + axis * r);
                pts.push(c - axis * r);
            }
        }
        pts
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Ellipsoid { semi_axes_mm, .. } => semi_axes_mm.iter().all(|&s| s > 0.0),
            Shape::Tube { radius_mm, .. } => *radius_mm > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Geometry(format!("degenerate primitive {self:?}")))
        }
    }
}

impl PhantomSpec {
    pub fn inside_phantom(&self, p: &Vector3<f64>) -> bool {
        let [a, b, c] = self.semi_axes_mm;
        p.z >= 0.0 && (p.x / a).powi(2) + (p.y / b).powi(2) + (p.z / c).powi(2) <= 1.0
    }

    pub fn validate(&self) -> Result<()> {
        if !self.semi_axes_mm.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::Geometry(format!(
                "semi-axes must be positive, got {:?}",
                self.semi_axes_mm
            )));
        }
        let unit = |v: f32| (0.0..=1.0).contains(&v);
        if !unit(self.background_intensity) || !(self.background_attenuation >= 0.0) {
            return Err(Error::InvalidConfig("background intensity must be in [0,1] and attenuation >= 0".into()));
        }
        if !unit(self.speckle.amplitude) || (self.speckle.amplitude > 0.0 && !(self.speckle.scale_mm > 0.0)) {
            return Err(Error::InvalidConfig("speckle amplitude must be in [0,1] with a positive scale".into()));
        }
        for (i, prim) in self.primitives.iter().enumerate() {
            prim.shape.validate()?;
            if !unit(prim.intensity) || !(prim.attenuation >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "primitive {i}: intensity must be in [0,1] and attenuation >= 0"
                )));
            }
            if let Some(p) = prim.shape.extreme_points().iter().find(|p| !self.inside_phantom(p)) {
                return Err(Error::Geometry(format!(
                    "primitive {i} reaches outside the phantom at ({:.1}, {:.1}, {:.1}) mm",
                    p.x, p.y, p.z
                )));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: PhantomSpec = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("spec serializes to toml")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    /// Empty phantom of the given size, no speckle.
    pub fn plain(semi_axes_mm: [f64; 3], background_intensity: f32) -> Self {
        Self {
            seed: 0,
            semi_axes_mm,
            background_intensity,
            background_attenuation: 0.0,
            speckle: Speckle {
                scale_mm: 1.0,
                amplitude: 0.0,
            },
            primitives: Vec::new(),
        }
    }

    /// The stock 200 x 200 x 120 mm phantom with 4 to 8 seeded interior
    /// structures: bright attenuating blobs that cast shadows, dark cysts,
    /// mid-grey tubes, and one reverberating interface.
    pub fn default_with_seed(seed: u64) -> Self {
        let semi_axes_mm = [100.0, 100.0, 120.0];
        let mut spec = Self {
            seed,
            semi_axes_mm,
            background_intensity: 0.35,
            background_attenuation: 0.003,
            speckle: Speckle {
                scale_mm: 1.0,
                amplitude: 0.4,
            },
            primitives: Vec::new(),
        };
        let mut rng = Rng::derive(seed, 0x5048_414e_544f_4d);
        let count = 4 + rng.below(5);
        let mut attempts = 0;
        while spec.primitives.len() < count {
            attempts += 1;
            assert!(attempts < 10_000, "primitive placement did not converge");
            let k = spec.primitives.len();
            let center = [
                rng.uniform_range(-55.0, 55.0),
                rng.uniform_range(-55.0, 55.0),
                rng.uniform_range(25.0, 85.0),
            ];
            let kind = k % 4;
            let shape = if kind == 3 {
                let dir = [rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0), rng.uniform_range(-0.3, 0.3)];
                let len = rng.uniform_range(25.0, 45.0);
                let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-6);
                Shape::Tube {
                    start_mm: [0, 1, 2].map(|i| center[i] - dir[i] / norm * len / 2.0),
                    end_mm: [0, 1, 2].map(|i| center[i] + dir[i] / norm * len / 2.0),
                    radius_mm: rng.uniform_range(5.0, 9.0),
                }
            } else {
                Shape::Ellipsoid {
                    center_mm: center,
                    semi_axes_mm: [
                        rng.uniform_range(12.0, 26.0),
                        rng.uniform_range(12.0, 26.0),
                        rng.uniform_range(8.0, 18.0),
                    ],
                }
            };
            let (intensity, attenuation) = match kind {
                // bright, shadowing
                0 => (rng.uniform_range(0.85, 1.0) as f32, rng.uniform_range(0.08, 0.15) as f32),
                // dark cyst
                1 => (rng.uniform_range(0.02, 0.08) as f32, 0.0),
                // mid-grey soft tissue
                2 => (rng.uniform_range(0.6, 0.75) as f32, rng.uniform_range(0.005, 0.02) as f32),
                _ => (rng.uniform_range(0.75, 0.9) as f32, rng.uniform_range(0.01, 0.03) as f32),
            };
            let candidate = Primitive {
                shape,
                intensity,
                attenuation,
                reverberant: k == 0,
            };
            if candidate.shape.extreme_points().iter().all(|p| spec.inside_phantom(p)) {
                spec.primitives.push(candidate);
            }
        }
        spec
    }
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self::default_with_seed(7)
    }
}
