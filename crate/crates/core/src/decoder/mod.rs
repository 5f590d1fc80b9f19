//! Bottom-up decoding of a [`FieldSet`] into per-person poses.
//!
//! The pipeline is: heatmap peaks, sub-cell refinement from block-inside
//! offsets, PAF alignment scoring of every candidate pair per limb type,
//! node-disjoint matching, and union-find assembly.

mod assemble;
pub mod matching;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::fields::{FieldSet, FieldTensor};
use crate::skeleton::{coco_keypoint_names, SkeletonSpec};

pub use assemble::{assemble, DecodedJoint, DecodedPose};
use matching::{exact_matching, greedy_matching, WeightedEdge};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("decoder config: {0}")]
    Config(String),
    #[error("fields do not match skeleton: {0}")]
    Layout(String),
    #[error("detection results: {0}")]
    Results(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    Greedy,
    Exact,
}

impl std::str::FromStr for Matcher {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "exact" => Ok(Self::Exact),
            other => Err(format!("unknown matcher {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PafSampling {
    Nearest,
    Bilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub peak_threshold: f64,
    /// Samples taken along each candidate segment.
    pub num_samples: usize,
    /// Largest direction bias still counted as aligned.
    pub bias_threshold: f64,
    pub min_aligned_fraction: f64,
    pub matcher: Matcher,
    /// When false, joints stay at their cell centers.
    pub use_offsets: bool,
    pub paf_sampling: PafSampling,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            peak_threshold: 0.1,
            num_samples: 10,
            bias_threshold: 0.5,
            min_aligned_fraction: 0.8,
            matcher: Matcher::Greedy,
            use_offsets: true,
            paf_sampling: PafSampling::Nearest,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.num_samples < 2 {
            return Err(DecodeError::Config(format!(
                "num_samples must be >= 2, got {}",
                self.num_samples
            )));
        }
        if !(self.bias_threshold > 0.0) {
            return Err(DecodeError::Config(format!(
                "bias_threshold must be > 0, got {}",
                self.bias_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.min_aligned_fraction) {
            return Err(DecodeError::Config(format!(
                "min_aligned_fraction must lie in [0, 1], got {}",
                self.min_aligned_fraction
            )));
        }
        if !(self.peak_threshold >= 0.0) {
            return Err(DecodeError::Config(format!(
                "peak_threshold must be >= 0, got {}",
                self.peak_threshold
            )));
        }
        Ok(())
    }

    /// Smallest aligned-sample count that accepts a connection.
    pub fn min_aligned_samples(&self) -> usize {
        let raw = self.min_aligned_fraction * self.num_samples as f64;
        (raw - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointCandidate {
    pub joint_type: usize,
    /// `(row, column)` on the output grid.
    pub cell: (usize, usize),
    pub score: f64,
    /// `(x, y)` in input pixels.
    pub position: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConnectionCandidate {
    pub limb_type: usize,
    /// Index of the parent in the candidate list.
    pub parent: usize,
    pub child: usize,
    /// Number of aligned samples.
    pub score: usize,
    /// Unit direction parent → child.
    pub direction: (f64, f64),
    pub length: f64,
}

/// Local maxima of every joint heatmap channel.
///
/// A cell is a peak when it reaches `peak_threshold` and beats its eight
/// neighbours; against an equal neighbour the lexicographically smaller cell
/// wins. Candidates come out ordered by channel, then row, then column, and
/// sit at their cell centers.
pub fn extract_peaks(
    heatmaps: &FieldTensor,
    spec: &SkeletonSpec,
    cfg: &DecoderConfig,
) -> Vec<JointCandidate> {
    let grid = heatmaps.grid();
    let (h, w) = (heatmaps.height(), heatmaps.width());
    let mut out = Vec::new();
    for c in 0..spec.num_joints().min(heatmaps.channels()) {
        let ch = heatmaps.channel(c);
        for i in 0..h {
            for j in 0..w {
                let v = ch[i * w + j];
                if (v as f64) < cfg.peak_threshold {
                    continue;
                }
                let mut is_peak = true;
                'scan: for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        if di == 0 && dj == 0 {
                            continue;
                        }
                        let (ni, nj) = (i as i64 + di, j as i64 + dj);
                        if ni < 0 || nj < 0 || ni >= h as i64 || nj >= w as i64 {
                            continue;
                        }
                        let n = ch[ni as usize * w + nj as usize];
                        let neighbour_first = (ni, nj) < (i as i64, j as i64);
                        if n > v || (n == v && neighbour_first) {
                            is_peak = false;
                            break 'scan;
                        }
                    }
                }
                if is_peak {
                    out.push(JointCandidate {
                        joint_type: c,
                        cell: (i, j),
                        score: v as f64,
                        position: grid.cell_center(i, j),
                    });
                }
            }
        }
    }
    out
}

/// Moves a candidate to `cell_center + f_d · offset`, offsets clamped to ±0.5.
pub fn refine_peak(candidate: &JointCandidate, offsets: &FieldTensor, fd: u32) -> JointCandidate {
    let (i, j) = candidate.cell;
    let fd = fd as f64;
    let cx = (j as f64 + 0.5) * fd;
    let cy = (i as f64 + 0.5) * fd;
    let ox = (offsets.get(2 * candidate.joint_type, i, j) as f64).clamp(-0.5, 0.5);
    let oy = (offsets.get(2 * candidate.joint_type + 1, i, j) as f64).clamp(-0.5, 0.5);
    JointCandidate {
        position: (cx + fd * ox, cy + fd * oy),
        ..*candidate
    }
}

/// `|v_f × v_t|`, the sine-weighted misalignment between a field vector and a
/// unit direction.
pub fn direction_bias(v_f: (f64, f64), v_t: (f64, f64)) -> f64 {
    (v_f.0 * v_t.1 - v_f.1 * v_t.0).abs()
}

fn sample_paf(pafs: &FieldTensor, limb: usize, x: f64, y: f64, mode: PafSampling) -> (f64, f64) {
    let grid = pafs.grid();
    match mode {
        PafSampling::Nearest => {
            let (i, j) = grid.cell_of(x, y);
            (
                pafs.get(2 * limb, i, j) as f64,
                pafs.get(2 * limb + 1, i, j) as f64,
            )
        }
        PafSampling::Bilinear => {
            let fd = grid.fd as f64;
            let (h, w) = (pafs.height() as i64, pafs.width() as i64);
            let u = x / fd - 0.5;
            let v = y / fd - 0.5;
            let (j0, i0) = (u.floor(), v.floor());
            let (fu, fv) = (u - j0, v - i0);
            let at = |c: usize, i: f64, j: f64| -> f64 {
                let ii = (i as i64).clamp(0, h - 1) as usize;
                let jj = (j as i64).clamp(0, w - 1) as usize;
                pafs.get(c, ii, jj) as f64
            };
            let lerp = |c: usize| -> f64 {
                let top = at(c, i0, j0) * (1.0 - fu) + at(c, i0, j0 + 1.0) * fu;
                let bottom = at(c, i0 + 1.0, j0) * (1.0 - fu) + at(c, i0 + 1.0, j0 + 1.0) * fu;
                top * (1.0 - fv) + bottom * fv
            };
            (lerp(2 * limb), lerp(2 * limb + 1))
        }
    }
}

/// Counts aligned PAF samples along the segment `parent → child`.
///
/// Samples sit at the midpoints of `num_samples` equal sub-segments. A sample
/// is aligned when the field is nonzero, points the same way
/// (`v_f · v_t > 0`), and its direction bias is at most `bias_threshold`.
pub fn score_connection(
    pafs: &FieldTensor,
    candidates: &[JointCandidate],
    parent: usize,
    child: usize,
    limb_type: usize,
    cfg: &DecoderConfig,
) -> ConnectionCandidate {
    let (ax, ay) = candidates[parent].position;
    let (bx, by) = candidates[child].position;
    let (dx, dy) = (bx - ax, by - ay);
    let length = dx.hypot(dy);
    let mut conn = ConnectionCandidate {
        limb_type,
        parent,
        child,
        score: 0,
        direction: (0.0, 0.0),
        length,
    };
    if length == 0.0 {
        return conn;
    }
    let v_t = (dx / length, dy / length);
    conn.direction = v_t;
    let n = cfg.num_samples;
    for k in 0..n {
        let t = (k as f64 + 0.5) / n as f64;
        let v_f = sample_paf(pafs, limb_type, ax + t * dx, ay + t * dy, cfg.paf_sampling);
        let magnitude = v_f.0.hypot(v_f.1);
        let dot = v_f.0 * v_t.0 + v_f.1 * v_t.1;
        if magnitude > 0.0 && dot > 0.0 && direction_bias(v_f, v_t) <= cfg.bias_threshold {
            conn.score += 1;
        }
    }
    conn
}

/// Selects node-disjoint connections per limb type.
///
/// Connections below the aligned-sample acceptance count are discarded
/// before matching. The result is ordered by limb type, then parent, then child.
pub fn match_limbs(
    candidates: &[ConnectionCandidate],
    cfg: &DecoderConfig,
) -> Vec<ConnectionCandidate> {
    let min = cfg.min_aligned_samples().max(1);
    let mut by_limb: std::collections::BTreeMap<usize, Vec<ConnectionCandidate>> =
        Default::default();
    for c in candidates.iter().filter(|c| c.score >= min) {
        by_limb.entry(c.limb_type).or_default().push(*c);
    }
    let mut accepted = Vec::new();
    for group in by_limb.into_values() {
        let edges: Vec<WeightedEdge> = group
            .iter()
            .map(|c| WeightedEdge {
                row: c.parent,
                col: c.child,
                weight: c.score as f64,
                length: c.length,
            })
            .collect();
        let picked = match cfg.matcher {
            Matcher::Greedy => greedy_matching(&edges),
            Matcher::Exact => exact_matching(&edges),
        };
        let mut chosen: Vec<ConnectionCandidate> = picked.into_iter().map(|e| group[e]).collect();
        chosen.sort_by_key(|c| (c.parent, c.child));
        accepted.extend(chosen);
    }
    accepted
}

/// Full decode of one image.
pub fn decode(
    fields: &FieldSet,
    spec: &SkeletonSpec,
    cfg: &DecoderConfig,
) -> Result<Vec<DecodedPose>, DecodeError> {
    cfg.validate()?;
    if fields.heatmaps.channels() < spec.num_joints()
        || fields.pafs.channels() != spec.paf_channels()
        || fields.offsets.channels() != spec.offset_channels()
    {
        return Err(DecodeError::Layout(format!(
            "channels ({}, {}, {}) vs skeleton ({}, {}, {})",
            fields.heatmaps.channels(),
            fields.pafs.channels(),
            fields.offsets.channels(),
            spec.heatmap_channels(),
            spec.paf_channels(),
            spec.offset_channels()
        )));
    }
    let fd = fields.grid().fd;
    let mut candidates = extract_peaks(&fields.heatmaps, spec, cfg);
    if cfg.use_offsets {
        for c in candidates.iter_mut() {
            *c = refine_peak(c, &fields.offsets, fd);
        }
    }

    let mut by_type: Vec<Vec<usize>> = vec![Vec::new(); spec.num_joints()];
    for (k, c) in candidates.iter().enumerate() {
        by_type[c.joint_type].push(k);
    }
    let mut connections = Vec::new();
    for (limb, &(a, b)) in spec.limbs().iter().enumerate() {
        for &p in &by_type[a] {
            for &q in &by_type[b] {
                let conn = score_connection(&fields.pafs, &candidates, p, q, limb, cfg);
                if conn.score > 0 {
                    connections.push(conn);
                }
            }
        }
    }
    let accepted = match_limbs(&connections, cfg);
    Ok(assemble(&accepted, &candidates, spec, cfg))
}

/// COCO results entries (`category_id` 1) for one image. Joints outside the
/// 17 COCO keypoints, such as the neck, are dropped.
pub fn to_coco_results(image_id: u64, poses: &[DecodedPose], spec: &SkeletonSpec) -> Vec<Value> {
    poses
        .iter()
        .map(|pose| {
            let mut keypoints = Vec::with_capacity(51);
            for name in coco_keypoint_names() {
                match spec.joint_index(name).and_then(|j| pose.joints[j]) {
                    Some(jt) => keypoints.extend([jt.x, jt.y, jt.confidence]),
                    None => keypoints.extend([0.0, 0.0, 0.0]),
                }
            }
            serde_json::json!({
                "image_id": image_id,
                "category_id": 1,
                "keypoints": keypoints,
                "score": pose.score,
            })
        })
        .collect()
}

/// Parses COCO keypoint results into `(image_id, pose)` pairs.
///
/// A keypoint is present when its third value is positive. The neck, when
/// the skeleton has one, is rebuilt as the shoulder midpoint.
pub fn from_coco_results(
    results: &str,
    spec: &SkeletonSpec,
) -> Result<Vec<(u64, DecodedPose)>, DecodeError> {
    #[derive(Deserialize)]
    struct Entry {
        image_id: u64,
        keypoints: Vec<f64>,
        score: f64,
    }
    let raw: Vec<Value> =
        serde_json::from_str(results).map_err(|e| DecodeError::Results(e.to_string()))?;
    let names = coco_keypoint_names();
    let neck = spec.joint_index("neck");
    let shoulders = (
        spec.joint_index("left_shoulder"),
        spec.joint_index("right_shoulder"),
    );
    let mut out = Vec::with_capacity(raw.len());
    for (k, v) in raw.into_iter().enumerate() {
        let e: Entry = serde_json::from_value(v)
            .map_err(|err| DecodeError::Results(format!("results[{k}]: {err}")))?;
        if e.keypoints.len() != 3 * names.len() {
            return Err(DecodeError::Results(format!(
                "results[{k}]: expected {} keypoint values, got {}",
                3 * names.len(),
                e.keypoints.len()
            )));
        }
        let mut joints = vec![None; spec.num_joints()];
        for (n, t) in e.keypoints.chunks_exact(3).enumerate() {
            if t[2] > 0.0 {
                if let Some(j) = spec.joint_index(names[n]) {
                    joints[j] = Some(DecodedJoint {
                        x: t[0],
                        y: t[1],
                        confidence: t[2],
                    });
                }
            }
        }
        if let (Some(n), (Some(l), Some(r))) = (neck, shoulders) {
            if let (Some(a), Some(b)) = (joints[l], joints[r]) {
                joints[n] = Some(DecodedJoint {
                    x: 0.5 * (a.x + b.x),
                    y: 0.5 * (a.y + b.y),
                    confidence: a.confidence.min(b.confidence),
                });
            }
        }
        out.push((
            e.image_id,
            DecodedPose {
                joints,
                score: e.score,
            },
        ));
    }
    Ok(out)
}
