use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::pose::{surface_pose, Pose, SurfaceCoords};
use super::render::{render_slice, ImagingParams, RenderedSlice};
use super::spec::PhantomSpec;
use super::volume::{build_phantom, Volume};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;

/// Uniform ranges, in degrees, for each surface coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSampler {
    pub u_deg: [f64; 2],
    pub v_deg: [f64; 2],
    pub tilt_deg: [f64; 2],
    pub roll_deg: [f64; 2],
}

impl Default for PoseSampler {
    fn default() -> Self {
        Self {
            u_deg: [-40.0, 40.0],
            v_deg: [-40.0, 40.0],
            tilt_deg: [-15.0, 15.0],
            roll_deg: [-15.0, 15.0],
        }
    }
}

impl PoseSampler {
    pub fn draw(&self, rng: &mut Rng) -> SurfaceCoords {
        let mut pick = |r: [f64; 2]| rng.uniform_range(r[0], r[1]);
        let u = pick(self.u_deg);
        let v = pick(self.v_deg);
        let tilt = pick(self.tilt_deg);
        let roll = pick(self.roll_deg);
        SurfaceCoords::from_degrees(u, v, tilt, roll)
    }

    /// The coordinate sequence `generate_dataset` uses for this seed.
    pub fn draw_many(&self, n: usize, seed: u64) -> Vec<SurfaceCoords> {
        let mut rng = Rng::derive(seed, 0x504f_5345);
        (0..n).map(|_| self.draw(&mut rng)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub image: Image,
    pub pose: Pose,
}

/// A built phantom together with its scan geometry: image = f(pose).
#[derive(Clone, Debug)]
pub struct PhantomOracle {
    pub spec: PhantomSpec,
    pub volume: Arc<Volume>,
    pub params: ImagingParams,
}

impl PhantomOracle {
    pub fn new(spec: PhantomSpec, params: ImagingParams) -> Result<Self> {
        params.validate()?;
        let volume = Arc::new(build_phantom(&spec)?);
        Ok(Self { spec, volume, params })
    }

    /// Reuses an already built volume with different scan geometry.
    pub fn with_params(&self, params: ImagingParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            spec: self.spec.clone(),
            volume: Arc::clone(&self.volume),
            params,
        })
    }

    pub fn render(&self, pose: &Pose) -> Result<RenderedSlice> {
        render_slice(&self.volume, pose, &self.params)
    }

    pub fn surface_pose(&self, coords: SurfaceCoords) -> Result<Pose> {
        surface_pose(coords, self.spec.semi_axes_mm)
    }

    pub fn spec_hash(&self) -> String {
        self.spec.hash()
    }
}

pub fn generate_dataset(oracle: &PhantomOracle, n: usize, sampler: &PoseSampler, seed: u64) -> Result<Vec<Frame>> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset needs at least one frame".into()));
    }
    sampler
        .draw_many(n, seed)
        .into_iter()
        .enumerate()
        .map(|(index, coords)| {
            let pose = oracle.surface_pose(coords)?;
            let image = oracle.render(&pose)?.image;
            Ok(Frame { index, image, pose })
        })
        .collect()
}

/// Index partition produced by [`carve_hole`].
#[derive(Clone, Debug, PartialEq)]
pub struct HoleCarve {
    pub kept: Vec<usize>,
    pub removed: Vec<usize>,
    pub removed_fraction: f64,
}

/// Splits `positions` by Euclidean distance to `center` (inside: `<= radius`).
pub fn carve_hole(positions: &[[f64; 3]], center: [f64; 3], radius: f64) -> Result<HoleCarve> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("hole radius must be positive, got {radius}")));
    }
    let (removed, kept): (Vec<usize>, Vec<usize>) = (0..positions.len()).partition(|&i| {
        let d2: f64 = (0..3).map(|a| (positions[i][a] - center[a]).powi(2)).sum();
        d2.sqrt() <= radius
    });
    let removed_fraction = if positions.is_empty() {
        0.0
    } else {
        removed.len() as f64 / positions.len() as f64
    };
    Ok(HoleCarve {
        kept,
        removed,
        removed_fraction,
    })
}
