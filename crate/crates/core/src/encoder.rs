//! Groundtruth field rendering: Gaussian heatmaps, part affinity fields and
//! block-inside offsets.
//!
//! Every cell `(i, j)` is represented by its input-space center
//! `((j + 0.5) f_d, (i + 0.5) f_d)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{FieldError, FieldSet, FieldTensor, GridMeta};
use crate::skeleton::{Scene, SkeletonSpec};

/// Exponent beyond which a Gaussian contribution is dropped (e^-36 ≈ 2.3e-16).
const GAUSSIAN_CUTOFF: f64 = 36.0;

pub const SUPPORTED_FD: [u32; 6] = [1, 2, 4, 8, 16, 32];

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("encoder config: {0}")]
    Config(String),
    #[error("scene {image_id}: {reason}")]
    Scene { image_id: u64, reason: String },
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapCombine {
    /// Sum over persons, then clamp to 1.
    SumClamped,
    /// Maximum over persons.
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub fd: u32,
    /// Heatmap Gaussian width in input pixels.
    pub sigma_heat: f64,
    /// On-limb distance threshold in output cells.
    pub limb_halfwidth: f64,
    /// Heatmap value above which offsets are encoded.
    pub offset_validity: f64,
    pub heatmap_combine: HeatmapCombine,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            fd: 8,
            sigma_heat: 7.0,
            limb_halfwidth: 1.0,
            offset_validity: 0.4,
            heatmap_combine: HeatmapCombine::SumClamped,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncodeError> {
        if !SUPPORTED_FD.contains(&self.fd) {
            return Err(EncodeError::Config(format!(
                "unsupported downsample factor {} (expected one of {SUPPORTED_FD:?})",
                self.fd
            )));
        }
        if !(self.sigma_heat > 0.0) || !self.sigma_heat.is_finite() {
            return Err(EncodeError::Config(format!(
                "sigma_heat must be positive, got {}",
                self.sigma_heat
            )));
        }
        if !(self.limb_halfwidth >= 0.0) {
            return Err(EncodeError::Config(format!(
                "limb_halfwidth must be non-negative, got {}",
                self.limb_halfwidth
            )));
        }
        if !(self.offset_validity > 0.0 && self.offset_validity < 1.0) {
            return Err(EncodeError::Config(format!(
                "offset_validity must lie in (0, 1), got {}",
                self.offset_validity
            )));
        }
        Ok(())
    }

    pub fn grid_for(&self, scene: &Scene) -> Result<GridMeta, EncodeError> {
        Ok(GridMeta::new(self.fd, scene.image_size.0, scene.image_size.1)?)
    }
}

fn prepare(scene: &Scene, spec: &SkeletonSpec, cfg: &EncoderConfig) -> Result<GridMeta, EncodeError> {
    cfg.validate()?;
    scene.validate(spec).map_err(|reason| EncodeError::Scene {
        image_id: scene.image_id,
        reason,
    })?;
    cfg.grid_for(scene)
}

/// Inclusive cell range whose centers may lie within `radius` of `v`.
fn cell_span(v: f64, radius: f64, fd: f64, n: usize) -> (usize, usize) {
    let lo = ((v - radius) / fd - 0.5).floor().max(0.0);
    let hi = ((v + radius) / fd - 0.5).ceil();
    if hi < 0.0 || lo >= n as f64 {
        return (1, 0);
    }
    (lo as usize, (hi as usize).min(n - 1))
}

/// Renders one Gaussian channel per joint plus the optional background channel.
pub fn encode_heatmaps(
    scene: &Scene,
    spec: &SkeletonSpec,
    cfg: &EncoderConfig,
) -> Result<FieldTensor, EncodeError> {
    let grid = prepare(scene, spec, cfg)?;
    let (h, w) = (grid.height(), grid.width());
    let plane = h * w;
    let nj = spec.num_joints();
    let fd = cfg.fd as f64;
    let s2 = cfg.sigma_heat * cfg.sigma_heat;
    let radius = cfg.sigma_heat * GAUSSIAN_CUTOFF.sqrt();

    let mut acc = vec![0f64; nj * plane];
    for person in &scene.persons {
        for (c, joint) in person.joints.iter().enumerate() {
            let Some(k) = joint else { continue };
            let (i0, i1) = cell_span(k.y, radius, fd, h);
            let (j0, j1) = cell_span(k.x, radius, fd, w);
            for i in i0..=i1 {
                for j in j0..=j1 {
                    let (cx, cy) = grid.cell_center(i, j);
                    let d2 = (cx - k.x).powi(2) + (cy - k.y).powi(2);
                    let e = d2 / s2;
                    if e > GAUSSIAN_CUTOFF {
                        continue;
                    }
                    let g = (-e).exp();
                    let slot = &mut acc[c * plane + i * w + j];
                    *slot = match cfg.heatmap_combine {
                        HeatmapCombine::SumClamped => *slot + g,
                        HeatmapCombine::Max => slot.max(g),
                    };
                }
            }
        }
    }

    let channels = spec.heatmap_channels();
    let mut data = Vec::with_capacity(channels * plane);
    data.extend(acc.iter().map(|&v| v.min(1.0) as f32));
    if spec.background_channel() {
        for cell in 0..plane {
            let peak = (0..nj).map(|c| data[c * plane + cell]).fold(0f32, f32::max);
            data.push(1.0 - peak);
        }
    }
    Ok(FieldTensor::new(channels, grid, data)?)
}

/// Renders parent→child unit vectors into each limb's `(m, n)` channel pair.
///
/// Overlapping instances of the same limb type are averaged and renormalized.
pub fn encode_pafs(
    scene: &Scene,
    spec: &SkeletonSpec,
    cfg: &EncoderConfig,
) -> Result<FieldTensor, EncodeError> {
    let grid = prepare(scene, spec, cfg)?;
    let (h, w) = (grid.height(), grid.width());
    let plane = h * w;
    let fd = cfg.fd as f64;
    let threshold = cfg.limb_halfwidth * fd;

    let mut data = vec![0f32; spec.paf_channels() * plane];
    let mut sum = vec![(0f64, 0f64); plane];
    let mut hits = vec![0u32; plane];
    for (l, &(parent, child)) in spec.limbs().iter().enumerate() {
        sum.iter_mut().for_each(|s| *s = (0.0, 0.0));
        hits.iter_mut().for_each(|n| *n = 0);
        let mut any = false;
        for person in &scene.persons {
            let (Some(a), Some(b)) = (person.joints[parent], person.joints[child]) else {
                continue;
            };
            let (dx, dy) = (b.x - a.x, b.y - a.y);
            let len = dx.hypot(dy);
            if len == 0.0 {
                continue;
            }
            let (ux, uy) = (dx / len, dy / len);
            let (i0, i1) = cell_span(
                0.5 * (a.y + b.y),
                0.5 * (a.y - b.y).abs() + threshold,
                fd,
                h,
            );
            let (j0, j1) = cell_span(
                0.5 * (a.x + b.x),
                0.5 * (a.x - b.x).abs() + threshold,
                fd,
                w,
            );
            for i in i0..=i1 {
                for j in j0..=j1 {
                    let (cx, cy) = grid.cell_center(i, j);
                    let (px, py) = (cx - a.x, cy - a.y);
                    let along = px * ux + py * uy;
                    let across = (px * uy - py * ux).abs();
                    if along >= 0.0 && along <= len && across <= threshold {
                        let cell = i * w + j;
                        sum[cell].0 += ux;
                        sum[cell].1 += uy;
                        hits[cell] += 1;
                        any = true;
                    }
                }
            }
        }
        if !any {
            continue;
        }
        for cell in 0..plane {
            if hits[cell] == 0 {
                continue;
            }
            let (sx, sy) = sum[cell];
            let norm = sx.hypot(sy);
            if norm > 1e-9 * hits[cell] as f64 {
                data[2 * l * plane + cell] = (sx / norm) as f32;
                data[(2 * l + 1) * plane + cell] = (sy / norm) as f32;
            }
        }
    }
    Ok(FieldTensor::new(spec.paf_channels(), grid, data)?)
}

/// Encodes `(x, y)` block-inside offsets wherever the joint heatmap exceeds
/// `cfg.offset_validity`.
///
/// Offsets point from the cell center to the nearest person's joint, in units
/// of `f_d`, clamped to `[-0.5, 0.5]`.
pub fn encode_offsets(
    scene: &Scene,
    spec: &SkeletonSpec,
    cfg: &EncoderConfig,
    heatmaps: &FieldTensor,
) -> Result<FieldTensor, EncodeError> {
    let grid = prepare(scene, spec, cfg)?;
    if heatmaps.grid() != grid || heatmaps.channels() != spec.heatmap_channels() {
        return Err(EncodeError::Config(format!(
            "heatmaps {:?} do not match scene grid {:?}",
            heatmaps.dims(),
            (spec.heatmap_channels(), grid.height(), grid.width())
        )));
    }
    let (h, w) = (grid.height(), grid.width());
    let plane = h * w;
    let fd = cfg.fd as f64;
    let mut data = vec![0f32; spec.offset_channels() * plane];
    for c in 0..spec.num_joints() {
        let joints: Vec<(f64, f64)> = scene
            .persons
            .iter()
            .filter_map(|p| p.joints[c].map(|k| (k.x, k.y)))
            .collect();
        if joints.is_empty() {
            continue;
        }
        let heat = heatmaps.channel(c);
        for i in 0..h {
            for j in 0..w {
                if (heat[i * w + j] as f64) <= cfg.offset_validity {
                    continue;
                }
                let (cx, cy) = grid.cell_center(i, j);
                let mut best = (f64::INFINITY, 0.0, 0.0);
                for &(x, y) in &joints {
                    let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                    if d2 < best.0 {
                        best = (d2, x, y);
                    }
                }
                let ox = ((best.1 - cx) / fd).clamp(-0.5, 0.5);
                let oy = ((best.2 - cy) / fd).clamp(-0.5, 0.5);
                data[2 * c * plane + i * w + j] = ox as f32;
                data[(2 * c + 1) * plane + i * w + j] = oy as f32;
            }
        }
    }
    Ok(FieldTensor::new(spec.offset_channels(), grid, data)?)
}

/// Encodes the full groundtruth bundle for one scene.
pub fn encode_scene(
    scene: &Scene,
    spec: &SkeletonSpec,
    cfg: &EncoderConfig,
) -> Result<FieldSet, EncodeError> {
    let heatmaps = encode_heatmaps(scene, spec, cfg)?;
    let pafs = encode_pafs(scene, spec, cfg)?;
    let offsets = encode_offsets(scene, spec, cfg, &heatmaps)?;
    Ok(FieldSet::new(heatmaps, pafs, offsets)?)
}
