use nalgebra::Vector3;
use sha2::{Digest, Sha256};

use super::spec::PhantomSpec;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Native isotropic voxel spacing.
pub const VOXEL_MM: f64 = 0.5;

const SPECKLE_STREAM: u64 = 0x5350_454b;

/// Intensity, attenuation and reverberation grids on a shared lattice.
/// Voxel `(i, j, k)` sits at `origin + VOXEL_MM * (i, j, k)`; x varies fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    origin: [f64; 3],
    intensity: Vec<f32>,
    attenuation: Vec<f32>,
    reverb: Vec<u8>,
}

/// Seeded value-noise lattice, trilinearly interpolated.
struct ValueNoise {
    dims: [usize; 3],
    scale: f64,
    origin: [f64; 3],
    values: Vec<f32>,
}

impl ValueNoise {
    fn new(seed: u64, scale: f64, origin: [f64; 3], extent: [f64; 3]) -> Self {
        let dims = extent.map(|e| (e / scale).ceil() as usize + 2);
        let mut rng = Rng::derive(seed, SPECKLE_STREAM);
        let values = (0..dims.iter().product::<usize>()).map(|_| rng.uniform() as f32).collect();
        Self {
            dims,
            scale,
            origin,
            values,
        }
    }

    fn at(&self, p: [f64; 3]) -> f32 {
        let mut base = [0usize; 3];
        let mut frac = [0f32; 3];
        for a in 0..3 {
            let t = ((p[a] - self.origin[a]) / self.scale).max(0.0);
            let i = (t.floor() as usize).min(self.dims[a] - 2);
            base[a] = i;
            frac[a] = (t - i as f64).min(1.0) as f32;
        }
        let [nx, ny, _] = self.dims;
        let idx = |i: usize, j: usize, k: usize| self.values[(k * ny + j) * nx + i];
        let [i, j, k] = base;
        let [fx, fy, fz] = frac;
        let lerp = |a: f32, b: f32, t: f32| a + (b - a) * t;
        let c00 = lerp(idx(i, j, k), idx(i + 1, j, k), fx);
        let c10 = lerp(idx(i, j + 1, k), idx(i + 1, j + 1, k), fx);
        let c01 = lerp(idx(i, j, k + 1), idx(i + 1, j, k + 1), fx);
        let c11 = lerp(idx(i, j + 1, k + 1), idx(i + 1, j + 1, k + 1), fx);
        lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)
    }
}

/// Voxelizes a phantom: background inside the half-ellipsoid, primitives
/// painted in order (later ones win), then the speckle factor
/// `1 + amplitude * (2n - 1)` applied to intensity.
pub fn build_phantom(spec: &PhantomSpec) -> Result<Volume> {
    spec.validate()?;
    let [a, b, c] = spec.semi_axes_mm;
    let origin = [-a, -b, 0.0];
    let dims = [2.0 * a, 2.0 * b, c].map(|e| (e / VOXEL_MM).round() as usize + 1);
    let n = dims.iter().product::<usize>();
    let mut vol = Volume {
        dims,
        origin,
        intensity: vec![0.0; n],
        attenuation: vec![0.0; n],
        reverb: vec![0; n],
    };
    let mut inside = vec![false; n];

    let [nx, ny, nz] = dims;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let p = vol.voxel_center(i, j, k);
                if spec.inside_phantom(&Vector3::from(p)) {
                    let idx = (k * ny + j) * nx + i;
                    inside[idx] = true;
                    vol.intensity[idx] = spec.background_intensity;
                    vol.attenuation[idx] = spec.background_attenuation;
                }
            }
        }
    }

    for prim in &spec.primitives {
        let (lo, hi) = prim.shape.bounds();
        let range = |axis: usize| {
            let first = ((lo[axis] - origin[axis]) / VOXEL_MM).floor().max(0.0) as usize;
            let last = (((hi[axis] - origin[axis]) / VOXEL_MM).ceil().max(0.0) as usize).min(dims[axis] - 1);
            first..=last
        };
        for k in range(2) {
            for j in range(1) {
                for i in range(0) {
                    let idx = (k * ny + j) * nx + i;
                    if inside[idx] && prim.shape.contains(&Vector3::from(vol.voxel_center(i, j, k))) {
                        vol.intensity[idx] = prim.intensity;
                        vol.attenuation[idx] = prim.attenuation;
                        vol.reverb[idx] = prim.reverberant as u8;
                    }
                }
            }
        }
    }

    if spec.speckle.amplitude > 0.0 {
        let noise = ValueNoise::new(spec.seed, spec.speckle.scale_mm, origin, [2.0 * a, 2.0 * b, c]);
        let amp = spec.speckle.amplitude;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let idx = (k * ny + j) * nx + i;
                    if inside[idx] {
                        let factor = 1.0 + amp * (2.0 * noise.at(vol.voxel_center(i, j, k)) - 1.0);
                        vol.intensity[idx] = (vol.intensity[idx] * factor).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    Ok(vol)
}

impl Volume {
    /// Grid filled voxel by voxel from `f(position) -> (intensity, attenuation, reverberant)`.
    pub fn from_fn(
        dims: [usize; 3],
        origin: [f64; 3],
        mut f: impl FnMut([f64; 3]) -> (f32, f32, bool),
    ) -> Result<Volume> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::Geometry(format!("volume needs at least 2 voxels per axis, got {dims:?}")));
        }
        let n = dims.iter().product::<usize>();
        let mut vol = Volume {
            dims,
            origin,
            intensity: Vec::with_capacity(n),
            attenuation: Vec::with_capacity(n),
            reverb: Vec::with_capacity(n),
        };
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let (int, att, rev) = f(vol.voxel_center(i, j, k));
                    if !(0.0..=1.0).contains(&int) || !(att >= 0.0) {
                        return Err(Error::InvalidArgument(format!(
                            "voxel ({i}, {j}, {k}): intensity {int} or attenuation {att} out of range"
                        )));
                    }
                    vol.intensity.push(int);
                    vol.attenuation.push(att);
                    vol.reverb.push(rev as u8);
                }
            }
        }
        Ok(vol)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn spacing(&self) -> f64 {
        VOXEL_MM
    }

    pub fn intensity(&self) -> &[f32] {
        &self.intensity
    }

    pub fn attenuation(&self) -> &[f32] {
        &self.attenuation
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + i as f64 * VOXEL_MM,
            self.origin[1] + j as f64 * VOXEL_MM,
            self.origin[2] + k as f64 * VOXEL_MM,
        ]
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    /// Voxel holding `p`, if inside the grid.
    pub fn voxel_at(&self, p: &Vector3<f64>) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let t = ((p[a] - self.origin[a]) / VOXEL_MM).round();
            if t < 0.0 || t > (self.dims[a] - 1) as f64 {
                return None;
            }
            out[a] = t as usize;
        }
        Some(out)
    }

    pub fn voxel(&self, i: usize, j: usize, k: usize) -> (f32, f32, bool) {
        let idx = self.index(i, j, k);
        (self.intensity[idx], self.attenuation[idx], self.reverb[idx] != 0)
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| {
            let t = (p[a] - self.origin[a]) / VOXEL_MM;
            t >= 0.0 && t <= (self.dims[a] - 1) as f64
        })
    }

    /// Trilinear `(intensity, attenuation)` at `p`, plus the reverberation
    /// flag of the nearest voxel. Zero outside the grid.
    pub fn sample(&self, p: &Vector3<f64>) -> (f32, f32, bool) {
        let mut base = [0usize; 3];
        let mut frac = [0f32; 3];
        for a in 0..3 {
            let t = (p[a] - self.origin[a]) / VOXEL_MM;
            let max = (self.dims[a] - 1) as f64;
            if !(t >= 0.0 && t <= max) {
                return (0.0, 0.0, false);
            }
            let i = (t.floor() as usize).min(self.dims[a] - 2);
            base[a] = i;
            frac[a] = (t - i as f64) as f32;
        }
        let [i, j, k] = base;
        let [fx, fy, fz] = frac;
        let (nx, nxy) = (self.dims[0], self.dims[0] * self.dims[1]);
        let i000 = self.index(i, j, k);
        let corners = [i000, i000 + 1, i000 + nx, i000 + nx + 1];
        let weights = [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ];
        let mut int = 0.0f32;
        let mut att = 0.0f32;
        for (c, w) in corners.iter().zip(weights) {
            int += w * ((1.0 - fz) * self.intensity[*c] + fz * self.intensity[c + nxy]);
            att += w * ((1.0 - fz) * self.attenuation[*c] + fz * self.attenuation[c + nxy]);
        }
        let near = [fx, fy, fz].map(|f| (f >= 0.5) as usize);
        let rev = self.reverb[self.index(i + near[0], j + near[1], k + near[2])] != 0;
        (int, att, rev)
    }

    /// Hex SHA-256 over geometry and all grids.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for d in self.dims {
            h.update((d as u64).to_le_bytes());
        }
        for o in self.origin {
            h.update(o.to_le_bytes());
        }
        for v in &self.intensity {
            h.update(v.to_le_bytes());
        }
        for v in &self.attenuation {
            h.update(v.to_le_bytes());
        }
        h.update(&self.reverb);
        hex::encode(h.finalize())
    }
}
