use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bin edge length.
pub const MAP_BIN_MM: f64 = 10.0;

/// Regular x/y grid over probe positions. Bin `(ix, iy)` covers
/// `[x0 + ix*bin, x0 + (ix+1)*bin)` and likewise in y.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapGrid {
    pub origin_mm: [f64; 2],
    pub bin_mm: f64,
    pub nx: usize,
    pub ny: usize,
}

impl MapGrid {
    /// Smallest bin-aligned grid containing `[-half[0], half[0]] x [-half[1], half[1]]`.
    pub fn centered(half_extent_mm: [f64; 2], bin_mm: f64) -> Result<Self> {
        Self::spanning([-half_extent_mm[0], -half_extent_mm[1]], half_extent_mm, bin_mm)
    }

    /// Smallest bin-aligned grid containing every position's x/y.
    pub fn covering(positions: &[[f64; 3]], bin_mm: f64) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidArgument("no positions to cover".into()));
        }
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in positions {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        Self::spanning(lo, hi, bin_mm)
    }

    fn spanning(lo: [f64; 2], hi: [f64; 2], bin_mm: f64) -> Result<Self> {
        if !(bin_mm > 0.0) || !bin_mm.is_finite() {
            return Err(Error::InvalidArgument(format!("bin size must be positive, got {bin_mm}")));
        }
        if !lo.iter().chain(&hi).all(|v| v.is_finite()) || lo[0] > hi[0] || lo[1] > hi[1] {
            return Err(Error::InvalidArgument("invalid grid extent".into()));
        }
        let start = |v: f64| (v / bin_mm).floor();
        let count = |l: f64, h: f64| ((h / bin_mm).floor() - start(l)) as usize + 1;
        Ok(Self {
            origin_mm: [start(lo[0]) * bin_mm, start(lo[1]) * bin_mm],
            bin_mm,
            nx: count(lo[0], hi[0]),
            ny: count(lo[1], hi[1]),
        })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(ix, iy)` of the bin holding `(x, y)`, if inside the grid.
    pub fn bin_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = ((x - self.origin_mm[0]) / self.bin_mm).floor();
        let fy = ((y - self.origin_mm[1]) / self.bin_mm).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.nx as f64 || fy >= self.ny as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    pub fn bin_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.origin_mm[0] + (ix as f64 + 0.5) * self.bin_mm,
            self.origin_mm[1] + (iy as f64 + 0.5) * self.bin_mm,
        ]
    }
}

/// Mean per-frame loss binned by probe x/y.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossMap {
    pub grid: MapGrid,
    /// Row-major over `iy`, then `ix`.
    pub sums: Vec<f64>,
    pub counts: Vec<usize>,
}

impl LossMap {
    pub fn empty(grid: MapGrid) -> Self {
        Self {
            grid,
            sums: vec![0.0; grid.len()],
            counts: vec![0; grid.len()],
        }
    }

    /// Bins `(position, loss)` pairs; positions outside the grid are an error.
    pub fn build(grid: MapGrid, positions: &[[f64; 3]], losses: &[f64]) -> Result<Self> {
        if positions.len() != losses.len() {
            return Err(Error::shape(
                "loss map",
                format!("{} positions vs {} losses", positions.len(), losses.len()),
            ));
        }
        let mut map = Self::empty(grid);
        for (p, &l) in positions.iter().zip(losses) {
            let (ix, iy) = grid
                .bin_of(p[0], p[1])
                .ok_or_else(|| Error::InvalidArgument(format!("position ({}, {}) outside map grid", p[0], p[1])))?;
            let k = iy * grid.nx + ix;
            map.sums[k] += l;
            map.counts[k] += 1;
        }
        Ok(map)
    }

    pub fn count(&self, ix: usize, iy: usize) -> usize {
        self.counts[iy * self.grid.nx + ix]
    }

    /// `None` for bins without samples.
    pub fn mean(&self, ix: usize, iy: usize) -> Option<f64> {
        let k = iy * self.grid.nx + ix;
        (self.counts[k] > 0).then(|| self.sums[k] / self.counts[k] as f64)
    }

    pub fn means(&self) -> Vec<Option<f64>> {
        (0..self.sums.len())
            .map(|k| (self.counts[k] > 0).then(|| self.sums[k] / self.counts[k] as f64))
            .collect()
    }

    pub fn total_count(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Count-weighted mean over bins; equals the mean of all binned losses.
    pub fn global_mean(&self) -> Option<f64> {
        let n = self.total_count();
        (n > 0).then(|| {
            self.means()
                .iter()
                .zip(&self.counts)
                .filter_map(|(m, &c)| m.map(|m| m * c as f64))
                .sum::<f64>()
                / n as f64
        })
    }
}

/// Per-bin `100 (holed - full) / full`; `None` unless both bins have
/// samples and the full-model mean is positive.
pub fn relative_map(full: &LossMap, holed: &LossMap) -> Result<Vec<Option<f64>>> {
    if full.grid != holed.grid {
        return Err(Error::shape("relative map", "loss maps use different grids"));
    }
    Ok(full
        .means()
        .into_iter()
        .zip(holed.means())
        .map(|(f, h)| match (f, h) {
            (Some(f), Some(h)) if f > 0.0 => Some(100.0 * (h - f) / f),
            _ => None,
        })
        .collect())
}

/// One line per grid row (largest y first), `.` for empty bins.
pub fn grid_to_text(grid: &MapGrid, values: &[Option<f64>]) -> String {
    let mut s = format!(
        "# origin_mm {} {} bin_mm {} nx {} ny {}\n",
        grid.origin_mm[0], grid.origin_mm[1], grid.bin_mm, grid.nx, grid.ny
    );
    for iy in (0..grid.ny).rev() {
        let row: Vec<String> = (0..grid.nx)
            .map(|ix| match values[iy * grid.nx + ix] {
                Some(v) => format!("{v:.6e}"),
                None => ".".to_string(),
            })
            .collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

/// Binary PGM heat map, `scale` pixels per bin, empty bins black and the
/// populated range stretched over 1..=255.
pub fn grid_to_pgm(grid: &MapGrid, values: &[Option<f64>], scale: usize) -> Vec<u8> {
    let scale = scale.max(1);
    let (lo, hi) = values
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let (w, h) = (grid.nx * scale, grid.ny * scale);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for r in 0..h {
        let iy = grid.ny - 1 - r / scale;
        for c in 0..w {
            let ix = c / scale;
            let px = match values[iy * grid.nx + ix] {
                None => 0u8,
                Some(v) if hi > lo => (1.0 + 254.0 * (v - lo) / (hi - lo)).round() as u8,
                Some(_) => 255,
            };
            out.push(px);
        }
    }
    out
}
