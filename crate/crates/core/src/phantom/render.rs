use serde::{Deserialize, Serialize};

use super::pose::Pose;
use super::volume::Volume;
use crate::error::{Error, Result};
use crate::image::Image;

/// Scan geometry of the virtual probe.
///
/// The beam is sampled on a fine `size * supersample` square grid at
/// `sample_spacing_mm`; each output pixel averages a `supersample` block, so
/// the output spacing is `sample_spacing_mm * supersample`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagingParams {
    pub size: usize,
    pub sample_spacing_mm: f64,
    pub supersample: usize,
    pub sector_half_angle_deg: f64,
    /// Distance from the virtual fan apex to the transducer face.
    pub near_field_offset_mm: f64,
    /// Multiplier on the per-mm attenuation when accumulating shadows.
    pub shadow_strength: f64,
    pub reverb_gain: f32,
}

impl Default for ImagingParams {
    fn default() -> Self {
        Self {
            size: 256,
            sample_spacing_mm: 0.5,
            supersample: 1,
            sector_half_angle_deg: 35.0,
            near_field_offset_mm: 20.0,
            shadow_strength: 1.0,
            reverb_gain: 0.5,
        }
    }
}

impl ImagingParams {
    /// 64 x 64 output covering the same 128 mm field as the full-size frame.
    pub fn desk() -> Self {
        Self {
            size: 64,
            supersample: 4,
            ..Self::default()
        }
    }

    /// `size x size` output over the full-size field of view; `size` must
    /// divide 256.
    pub fn for_size(size: usize) -> Result<Self> {
        let full = Self::default().size;
        if size == 0 || full % size != 0 {
            return Err(Error::InvalidConfig(format!("image size {size} does not divide {full}")));
        }
        Ok(Self {
            size,
            supersample: full / size,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.supersample == 0 {
            return Err(Error::InvalidConfig("image size and supersample must be positive".into()));
        }
        if !(self.sample_spacing_mm > 0.0) {
            return Err(Error::InvalidConfig("sample spacing must be positive".into()));
        }
        if !(self.sector_half_angle_deg > 0.0 && self.sector_half_angle_deg < 90.0) {
            return Err(Error::InvalidConfig(format!(
                "sector half-angle {} must lie in (0, 90) degrees",
                self.sector_half_angle_deg
            )));
        }
        if !(self.near_field_offset_mm >= 0.0) || !(self.shadow_strength >= 0.0) || !(self.reverb_gain >= 0.0) {
            return Err(Error::InvalidConfig("offset, shadow strength and reverb gain must be >= 0".into()));
        }
        Ok(())
    }

    pub fn pixel_spacing_mm(&self) -> f64 {
        self.sample_spacing_mm * self.supersample as f64
    }

    fn fine_size(&self) -> usize {
        self.size * self.supersample
    }

    /// Lateral offset and depth (mm) of fine-grid sample `(row, col)`.
    fn fine_coords(&self, row: usize, col: usize) -> (f64, f64) {
        let n = self.fine_size() as f64;
        let sp = self.sample_spacing_mm;
        ((col as f64 + 0.5 - n / 2.0) * sp, (row as f64 + 0.5) * sp)
    }

    fn in_sector(&self, lateral: f64, depth: f64) -> bool {
        lateral.abs().atan2(depth + self.near_field_offset_mm) <= self.sector_half_angle_deg.to_radians()
    }

    /// Fan mask on the fine grid.
    pub fn fine_mask(&self) -> Vec<bool> {
        let n = self.fine_size();
        (0..n * n)
            .map(|i| {
                let (lat, depth) = self.fine_coords(i / n, i % n);
                self.in_sector(lat, depth)
            })
            .collect()
    }

    /// Fraction of each output pixel covered by the fan.
    pub fn sector_coverage(&self) -> Image {
        let n = self.fine_size();
        let fine = self.fine_mask().into_iter().map(|m| m as u8 as f32).collect();
        Image::new(n, n, fine)
            .and_then(|img| img.box_downsample(self.supersample))
            .expect("mask geometry is consistent")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedSlice {
    pub image: Image,
    /// No sector sample fell inside the volume grid; the image is all zeros.
    pub blank: bool,
}

/// Renders the B-mode slice seen from `pose`.
///
/// Columns run parallel to the beam. Walking down each column the displayed
/// value is `intensity * T`, after which the transmission `T` decays by
/// `exp(-strength * mu * ds)`. The first reverberant sample at row `r` echoes
/// a ghost of its displayed value at twice its depth.
pub fn render_slice(vol: &Volume, pose: &Pose, params: &ImagingParams) -> Result<RenderedSlice> {
    params.validate()?;
    pose.validate()?;
    let n = params.fine_size();
    let sp = params.sample_spacing_mm;
    let origin = pose.position_vec();
    let lateral_axis = pose.lateral_axis();
    let beam_axis = pose.beam_axis();
    let mask = params.fine_mask();
    let ghost_rows = (2.0 / sp).round().max(1.0) as usize;

    let mut fine = vec![0f32; n * n];
    let mut any_inside = false;
    let mut column = vec![0f32; n];
    let mut trans = vec![0f64; n];
    for col in 0..n {
        let mut transmission = 1.0f64;
        let mut echo: Option<(usize, f32)> = None;
        for row in 0..n {
            let (lat, depth) = params.fine_coords(row, col);
            let p = origin + lateral_axis * lat + beam_axis * depth;
            let (int, att, rev) = vol.sample(&p);
            let shown = mask[row * n + col];
            if shown && vol.contains(&p) {
                any_inside = true;
            }
            trans[row] = transmission;
            let value = (int as f64 * transmission) as f32;
            column[row] = if shown { value } else { 0.0 };
            if rev && shown && echo.is_none() {
                echo = Some((row, value));
            }
            transmission *= (-params.shadow_strength * att as f64 * sp).exp();
        }
        if let Some((r0, v0)) = echo {
            for row in (2 * r0 + 1..=2 * r0 + ghost_rows).filter(|&r| r < n) {
                if mask[row * n + col] {
                    column[row] += params.reverb_gain * v0 * trans[row] as f32;
                }
            }
        }
        for row in 0..n {
            fine[row * n + col] = column[row].clamp(0.0, 1.0);
        }
    }

    if !any_inside {
        return Ok(RenderedSlice {
            image: Image::zeros(params.size, params.size),
            blank: true,
        });
    }
    let image = Image::new(n, n, fine)?.box_downsample(params.supersample)?;
    Ok(RenderedSlice { image, blank: false })
}
