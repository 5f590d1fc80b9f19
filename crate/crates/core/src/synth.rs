//! Synthetic scenes, field corruptions, brute-force oracles and the
//! upsampling-error benchmark.
//!
//! Every generator draws from ChaCha8 seeded with `seed_from_u64`, so outputs
//! are reproducible from the seed and parameters alone.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::refine_peak;
use crate::decoder::JointCandidate;
use crate::encoder::{encode_heatmaps, encode_offsets, EncodeError, EncoderConfig};
use crate::fields::{FieldError, FieldSet, FieldTensor};
use crate::skeleton::{Keypoint, PoseInstance, Scene, SkeletonSpec};

/// Identifier of the generator behind every seeded output.
pub const RNG_ALGORITHM: &str = "chacha8";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{0}")]
    Config(String),
    #[error("placed {placed} of {requested} persons after {attempts} attempts; try fewer persons, a larger image or smaller separations")]
    Exhausted {
        placed: usize,
        requested: usize,
        attempts: usize,
    },
    #[error("matrix {rows}x{cols} exceeds the {limit}x{limit} brute-force limit")]
    TooLarge {
        rows: usize,
        cols: usize,
        limit: usize,
    },
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for trial `k` of a run seeded with `seed`.
fn trial_rng(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = rng_for(seed);
    rng.set_stream(k);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    /// Minimum distance between any two joints of different persons.
    pub min_separation: f64,
    /// Minimum distance between same-type limbs of different persons.
    pub limb_clearance: f64,
    /// Neck-to-hip length range in pixels; sets the person scale.
    pub torso: (f64, f64),
    /// Joints stay at least this far inside the image border.
    pub margin: f64,
    pub max_attempts: usize,
    pub max_tilt_deg: f64,
    pub limb_jitter_deg: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            min_separation: 32.0,
            limb_clearance: 20.0,
            torso: (160.0, 190.0),
            margin: 8.0,
            max_attempts: 10_000,
            max_tilt_deg: 10.0,
            limb_jitter_deg: 15.0,
        }
    }
}

impl SceneParams {
    fn validate(&self) -> Result<(), SynthError> {
        let (lo, hi) = self.torso;
        if !(lo > 0.0 && lo <= hi) {
            return Err(SynthError::Config(format!("invalid torso range {lo}..{hi}")));
        }
        if self.min_separation < 0.0 || self.limb_clearance < 0.0 || self.margin < 0.0 {
            return Err(SynthError::Config("separations and margin must be >= 0".into()));
        }
        Ok(())
    }
}

/// Upright frontal pose in torso units, neck at the origin, y down. The
/// person's right side appears on the image left.
fn template(name: &str) -> Option<(f64, f64)> {
    Some(match name {
        "nose" => (0.0, -0.45),
        "neck" => (0.0, 0.0),
        "right_shoulder" => (-0.38, 0.0),
        "right_elbow" => (-0.5, 0.5),
        "right_wrist" => (-0.55, 0.95),
        "left_shoulder" => (0.38, 0.0),
        "left_elbow" => (0.5, 0.5),
        "left_wrist" => (0.55, 0.95),
        "right_hip" => (-0.22, 1.0),
        "right_knee" => (-0.25, 1.5),
        "right_ankle" => (-0.27, 2.0),
        "left_hip" => (0.22, 1.0),
        "left_knee" => (0.25, 1.5),
        "left_ankle" => (0.27, 2.0),
        "right_eye" => (-0.2, -0.65),
        "left_eye" => (0.2, -0.65),
        "right_ear" => (-0.45, -0.5),
        "left_ear" => (0.45, -0.5),
        _ => return None,
    })
}

fn rotate((x, y): (f64, f64), a: f64) -> (f64, f64) {
    let (s, c) = a.sin_cos();
    (c * x - s * y, s * x + c * y)
}

/// Joint layout relative to a root joint, in pixels.
fn sample_body(rng: &mut ChaCha8Rng, spec: &SkeletonSpec, p: &SceneParams) -> Vec<(f64, f64)> {
    let n = spec.num_joints();
    let torso = rng.gen_range(p.torso.0..=p.torso.1);
    let jitter = p.limb_jitter_deg.to_radians();
    let tmpl: Option<Vec<(f64, f64)>> = spec.joint_names().iter().map(|s| template(s)).collect();
    let mut pos: Vec<Option<(f64, f64)>> = vec![None; n];
    let root = spec
        .joint_index("neck")
        .filter(|_| tmpl.is_some())
        .unwrap_or(0);
    pos[root] = Some((0.0, 0.0));
    // Repeated passes so limb order does not have to be topological.
    loop {
        let mut progressed = false;
        for &(a, b) in spec.limbs() {
            let (from, to) = match (pos[a], pos[b]) {
                (Some(_), None) => (a, b),
                (None, Some(_)) => (b, a),
                _ => continue,
            };
            let base = match &tmpl {
                Some(t) => (t[to].0 - t[from].0, t[to].1 - t[from].1),
                None => {
                    let ang = rng.gen_range(0.0..std::f64::consts::TAU);
                    let len = rng.gen_range(0.3..0.6);
                    (len * ang.cos(), len * ang.sin())
                }
            };
            let phi = if jitter > 0.0 { rng.gen_range(-jitter..=jitter) } else { 0.0 };
            let scale = torso * rng.gen_range(0.9..=1.1);
            let (dx, dy) = rotate(base, phi);
            let origin = pos[from].unwrap();
            pos[to] = Some((origin.0 + scale * dx, origin.1 + scale * dy));
            progressed = true;
        }
        if !progressed {
            break;
        }
    }
    // Joints unreachable through limbs fall back to their template spot.
    for (j, slot) in pos.iter_mut().enumerate() {
        if slot.is_none() {
            *slot = Some(match &tmpl {
                Some(t) => (t[j].0 * torso, t[j].1 * torso),
                None => (
                    rng.gen_range(-0.5..0.5) * torso,
                    rng.gen_range(-0.5..0.5) * torso,
                ),
            });
        }
    }
    let tilt = p.max_tilt_deg.to_radians();
    let theta = if tilt > 0.0 { rng.gen_range(-tilt..=tilt) } else { 0.0 };
    pos.into_iter().map(|q| rotate(q.unwrap(), theta)).collect()
}

fn segment_distance(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> f64 {
    let cross = |o: (f64, f64), p: (f64, f64), q: (f64, f64)| {
        (p.0 - o.0) * (q.1 - o.1) - (p.1 - o.1) * (q.0 - o.0)
    };
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return 0.0;
    }
    point_segment_distance(a, c, d)
        .min(point_segment_distance(b, c, d))
        .min(point_segment_distance(c, a, b))
        .min(point_segment_distance(d, a, b))
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0)
    };
    (p.0 - a.0 - t * vx).hypot(p.1 - a.1 - t * vy)
}

fn compatible(new: &[(f64, f64)], other: &[(f64, f64)], spec: &SkeletonSpec, p: &SceneParams) -> bool {
    for a in new {
        for b in other {
            if (a.0 - b.0).hypot(a.1 - b.1) < p.min_separation {
                return false;
            }
        }
    }
    spec.limbs().iter().all(|&(s, t)| {
        segment_distance(new[s], new[t], other[s], other[t]) >= p.limb_clearance
    })
}

/// A seeded scene of `num_persons` fully labeled, visible persons.
///
/// Persons are placed one at a time by rejection sampling; every placement
/// attempt counts toward `max_attempts`. Each person's area is its keypoint
/// bounding-box area.
pub fn random_scene(
    seed: u64,
    num_persons: usize,
    image_size: (u32, u32),
    spec: &SkeletonSpec,
    params: &SceneParams,
) -> Result<Scene, SynthError> {
    params.validate()?;
    if image_size.0 < 64 || image_size.1 < 64 {
        return Err(SynthError::Config(format!(
            "image must be at least 64x64, got {}x{}",
            image_size.0, image_size.1
        )));
    }
    let mut rng = rng_for(seed);
    let (w, h) = (image_size.0 as f64, image_size.1 as f64);
    let m = params.margin;
    let mut placed: Vec<Vec<(f64, f64)>> = Vec::with_capacity(num_persons);
    let mut attempts = 0;
    while placed.len() < num_persons {
        if attempts == params.max_attempts {
            return Err(SynthError::Exhausted {
                placed: placed.len(),
                requested: num_persons,
                attempts,
            });
        }
        attempts += 1;
        let body = sample_body(&mut rng, spec, params);
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for &(x, y) in &body {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        // Translation range keeping every joint in [m, size - m).
        let (tx0, tx1) = (m - x0, w - m - x1);
        let (ty0, ty1) = (m - y0, h - m - y1);
        if tx0 >= tx1 || ty0 >= ty1 {
            continue;
        }
        let (tx, ty) = (rng.gen_range(tx0..tx1), rng.gen_range(ty0..ty1));
        let person: Vec<(f64, f64)> = body.iter().map(|&(x, y)| (x + tx, y + ty)).collect();
        if placed.iter().all(|o| compatible(&person, o, spec, params)) {
            placed.push(person);
        }
    }
    let mut scene = Scene::new(0, image_size);
    for person in placed {
        let pose = PoseInstance {
            joints: person.iter().map(|&(x, y)| Some(Keypoint::visible(x, y))).collect(),
        };
        let area = pose.keypoint_box_area();
        scene.push(pose, Some(area));
    }
    Ok(scene)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Corruption {
    /// Additive N(0, σ²) noise on every field value.
    GaussianNoise { sigma: f64 },
    /// Exchanges the heatmap channels of each listed joint and its mirror.
    MirrorSwap { joints: Vec<usize> },
    /// Zeroes each field value independently with probability `p`.
    Dropout { p: f64 },
}

/// Applies a seeded corruption to a copy of `fields`.
///
/// For `MirrorSwap`, naming both sides of a pair swaps it once.
pub fn corrupt(
    fields: &FieldSet,
    kind: &Corruption,
    seed: u64,
    spec: &SkeletonSpec,
) -> Result<FieldSet, SynthError> {
    let mut rng = rng_for(seed);
    let mut tensors = [
        fields.heatmaps.clone(),
        fields.pafs.clone(),
        fields.offsets.clone(),
    ];
    match kind {
        Corruption::GaussianNoise { sigma } => {
            if !(*sigma >= 0.0) || !sigma.is_finite() {
                return Err(SynthError::Config(format!("noise sigma must be >= 0, got {sigma}")));
            }
            if *sigma > 0.0 {
                let normal = Normal::new(0.0, *sigma)
                    .map_err(|e| SynthError::Config(e.to_string()))?;
                for t in tensors.iter_mut() {
                    let data = t.data().iter().map(|&v| v + normal.sample(&mut rng) as f32).collect();
                    *t = FieldTensor::new(t.channels(), t.grid(), data)?;
                }
            }
        }
        Corruption::Dropout { p } => {
            if !(0.0..=1.0).contains(p) {
                return Err(SynthError::Config(format!("dropout p must lie in [0, 1], got {p}")));
            }
            for t in tensors.iter_mut() {
                let data = t
                    .data()
                    .iter()
                    .map(|&v| if rng.gen_bool(*p) { 0.0 } else { v })
                    .collect();
                *t = FieldTensor::new(t.channels(), t.grid(), data)?;
            }
        }
        Corruption::MirrorSwap { joints } => {
            let mut pairs = BTreeSet::new();
            for &j in joints {
                if j >= spec.num_joints() || j >= fields.heatmaps.channels() {
                    return Err(SynthError::Config(format!("mirror_swap: unknown channel {j}")));
                }
                let Some(m) = spec.mirror(j) else {
                    return Err(SynthError::Config(format!(
                        "mirror_swap: channel {j} ({}) has no mirror partner",
                        spec.joint_names()[j]
                    )));
                };
                pairs.insert((j.min(m), j.max(m)));
            }
            let hm = &tensors[0];
            let plane = hm.height() * hm.width();
            let mut data = hm.data().to_vec();
            for (a, b) in pairs {
                for k in 0..plane {
                    data.swap(a * plane + k, b * plane + k);
                }
            }
            tensors[0] = FieldTensor::new(hm.channels(), hm.grid(), data)?;
        }
    }
    let [heatmaps, pafs, offsets] = tensors;
    Ok(FieldSet::new(heatmaps, pafs, offsets)?)
}

/// Largest side handled by [`brute_force_matching`].
pub const BRUTE_FORCE_LIMIT: usize = 8;

/// Exhaustive maximum-weight matching over a dense score matrix.
///
/// Only positive entries are edges. Among optimal matchings the one whose
/// sorted `(row, col)` list is lexicographically smallest wins.
pub fn brute_force_matching(scores: &[Vec<f64>]) -> Result<(Vec<(usize, usize)>, f64), SynthError> {
    let rows = scores.len();
    let cols = scores.first().map_or(0, Vec::len);
    if scores.iter().any(|r| r.len() != cols) {
        return Err(SynthError::Config("score matrix rows differ in length".into()));
    }
    if rows > BRUTE_FORCE_LIMIT || cols > BRUTE_FORCE_LIMIT {
        return Err(SynthError::TooLarge {
            rows,
            cols,
            limit: BRUTE_FORCE_LIMIT,
        });
    }

    struct Search<'a> {
        scores: &'a [Vec<f64>],
        used: Vec<bool>,
        current: Vec<(usize, usize)>,
        best: Vec<(usize, usize)>,
        best_weight: f64,
    }

    impl Search<'_> {
        fn visit(&mut self, row: usize, weight: f64) {
            if row == self.scores.len() {
                let better = weight > self.best_weight
                    || (weight == self.best_weight && self.current < self.best);
                if better {
                    self.best_weight = weight;
                    self.best = self.current.clone();
                }
                return;
            }
            for c in 0..self.used.len() {
                let w = self.scores[row][c];
                if self.used[c] || !(w > 0.0) {
                    continue;
                }
                self.used[c] = true;
                self.current.push((row, c));
                self.visit(row + 1, weight + w);
                self.current.pop();
                self.used[c] = false;
            }
            self.visit(row + 1, weight);
        }
    }

    let mut s = Search {
        scores,
        used: vec![false; cols],
        current: Vec::new(),
        best: Vec::new(),
        best_weight: 0.0,
    };
    s.visit(0, 0.0);
    Ok((s.best, s.best_weight))
}

/// Random integer score matrix with sides in `1..=max_side` and entries in
/// `0..=max_score`, like aligned-sample counts.
pub fn random_score_matrix(seed: u64, max_side: usize, max_score: u32) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed);
    let rows = rng.gen_range(1..=max_side);
    let cols = rng.gen_range(1..=max_side);
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(0..=max_score) as f64).collect())
        .collect()
}

/// Score matrix with a planted matching covering the smaller side whose
/// every entry exceeds every other entry. The planted matching is the unique
/// optimum and greedy selection recovers it. Returns the matrix and the
/// planted pairs, sorted.
pub fn strictly_dominant_matrix(seed: u64, max_side: usize) -> (Vec<Vec<f64>>, Vec<(usize, usize)>) {
    let mut rng = rng_for(seed);
    let rows = rng.gen_range(1..=max_side);
    let cols = rng.gen_range(1..=max_side);
    let mut m: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(0..=5) as f64).collect())
        .collect();
    let mut col_order: Vec<usize> = (0..cols).collect();
    let mut row_order: Vec<usize> = (0..rows).collect();
    for i in (1..cols).rev() {
        col_order.swap(i, rng.gen_range(0..=i));
    }
    for i in (1..rows).rev() {
        row_order.swap(i, rng.gen_range(0..=i));
    }
    let mut planted: Vec<(usize, usize)> = row_order
        .iter()
        .zip(&col_order)
        .map(|(&r, &c)| {
            m[r][c] = rng.gen_range(6..=10) as f64;
            (r, c)
        })
        .collect();
    planted.sort_unstable();
    (m, planted)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Nearest,
    Bilinear,
    Bicubic,
    /// Heatmap argmax cell refined by block-inside offsets.
    Rie,
}

impl Kernel {
    pub fn name(self) -> &'static str {
        match self {
            Kernel::Nearest => "nearest",
            Kernel::Bilinear => "bilinear",
            Kernel::Bicubic => "bicubic",
            Kernel::Rie => "rie",
        }
    }
}

impl std::str::FromStr for Kernel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nearest" => Ok(Kernel::Nearest),
            "bilinear" => Ok(Kernel::Bilinear),
            "bicubic" => Ok(Kernel::Bicubic),
            "rie" => Ok(Kernel::Rie),
            other => Err(format!("unknown kernel {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchParams {
    /// Heatmap Gaussian width in output cells; σ in pixels is this times f_d.
    pub sigma_cells: f64,
    /// Refine the argmax pixel with a per-axis parabola through its neighbours.
    pub subpixel: bool,
    /// Output grid side in cells.
    pub grid_cells: usize,
}

impl Default for BenchParams {
    fn default() -> Self {
        Self {
            sigma_cells: 2.0,
            subpixel: false,
            grid_cells: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub fd: u32,
    pub kernel: Kernel,
    pub trials: usize,
    pub mean_px: f64,
    pub p95_px: f64,
    pub seed: u64,
}

impl BenchResult {
    pub const CSV_HEADER: &'static str = "f_d,kernel,trials,mean_px,p95_px,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{}",
            self.fd,
            self.kernel.name(),
            self.trials,
            self.mean_px,
            self.p95_px,
            self.seed
        )
    }
}

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn keys_cubic(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Source taps and weights for output pixel `p` along one axis of length
/// `n` cells; borders replicate.
fn taps(p: usize, fd: u32, n: usize, kernel: Kernel) -> Vec<(usize, f64)> {
    let u = (p as f64 + 0.5) / fd as f64 - 0.5;
    let clamp = |k: i64| k.clamp(0, n as i64 - 1) as usize;
    match kernel {
        Kernel::Nearest => vec![(clamp(((p as f64 + 0.5) / fd as f64).floor() as i64), 1.0)],
        Kernel::Bilinear => {
            let k0 = u.floor();
            let f = u - k0;
            vec![(clamp(k0 as i64), 1.0 - f), (clamp(k0 as i64 + 1), f)]
        }
        Kernel::Bicubic => {
            let k0 = u.floor() as i64;
            (-1..=2)
                .map(|d| (clamp(k0 + d), keys_cubic(u - (k0 + d) as f64)))
                .collect()
        }
        Kernel::Rie => unreachable!("offset refinement has no upsampling kernel"),
    }
}

/// Argmax of a full-resolution window; exact ties resolve to the centroid of
/// the tied pixels. Returns pixel-center coordinates.
fn window_argmax(
    values: &[f64],
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
    subpixel: bool,
) -> (f64, f64) {
    let w = cols.len();
    let at = |r: usize, c: usize| values[(r - rows.start) * w + (c - cols.start)];
    let best = values.iter().copied().fold(f64::MIN, f64::max);
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    let mut first = (rows.start, cols.start);
    for r in rows.clone() {
        for c in cols.clone() {
            if at(r, c) == best {
                if n == 0.0 {
                    first = (r, c);
                }
                sx += c as f64 + 0.5;
                sy += r as f64 + 0.5;
                n += 1.0;
            }
        }
    }
    let (mut x, mut y) = (sx / n, sy / n);
    if subpixel && n == 1.0 {
        let (r, c) = first;
        let fit = |m: f64, z: f64, p: f64| {
            let den = m - 2.0 * z + p;
            if den < 0.0 { (0.5 * (m - p) / den).clamp(-0.5, 0.5) } else { 0.0 }
        };
        if c > cols.start && c + 1 < cols.end {
            x += fit(at(r, c - 1), at(r, c), at(r, c + 1));
        }
        if r > rows.start && r + 1 < rows.end {
            y += fit(at(r - 1, c), at(r, c), at(r + 1, c));
        }
    }
    (x, y)
}

fn one_joint_spec() -> SkeletonSpec {
    SkeletonSpec::new(vec!["joint".into()], false, vec![], vec![], vec![0.1])
        .expect("single-joint skeleton is valid")
}

fn bench_trial(
    fd: u32,
    kernel: Kernel,
    seed: u64,
    k: u64,
    spec: &SkeletonSpec,
    cfg: &EncoderConfig,
    params: &BenchParams,
) -> Result<f64, SynthError> {
    let g = params.grid_cells;
    let side = (g as u32) * fd;
    let mut rng = trial_rng(seed, k);
    let lo = 2.0 * fd as f64;
    let hi = (g - 2) as f64 * fd as f64;
    let (x, y) = (rng.gen_range(lo..hi), rng.gen_range(lo..hi));
    let mut scene = Scene::new(0, (side, side));
    scene.push(
        PoseInstance {
            joints: vec![Some(Keypoint::visible(x, y))],
        },
        None,
    );
    let heat = encode_heatmaps(&scene, spec, cfg)?;
    let plane = heat.channel(0);
    let (pi, pj) = {
        let mut best = 0;
        for (n, v) in plane.iter().enumerate() {
            if *v > plane[best] {
                best = n;
            }
        }
        (best / g, best % g)
    };

    let (ex, ey) = if kernel == Kernel::Rie {
        let offsets = encode_offsets(&scene, spec, cfg, &heat)?;
        let cand = JointCandidate {
            joint_type: 0,
            cell: (pi, pj),
            score: plane[pi * g + pj] as f64,
            position: heat.grid().cell_center(pi, pj),
        };
        refine_peak(&cand, &offsets, fd).position
    } else {
        // Upsample only the window of cells around the coarse peak.
        let f = fd as usize;
        let rows = pi.saturating_sub(2) * f..((pi + 3).min(g)) * f;
        let cols = pj.saturating_sub(2) * f..((pj + 3).min(g)) * f;
        let col_taps: Vec<Vec<(usize, f64)>> = cols.clone().map(|c| taps(c, fd, g, kernel)).collect();
        // Horizontal pass over every coarse row, then vertical.
        let horiz: Vec<Vec<f64>> = (0..g)
            .map(|i| {
                col_taps
                    .iter()
                    .map(|t| t.iter().map(|&(j, w)| w * plane[i * g + j] as f64).sum())
                    .collect()
            })
            .collect();
        let mut values = Vec::with_capacity(rows.len() * cols.len());
        for r in rows.clone() {
            let rt = taps(r, fd, g, kernel);
            for c in 0..cols.len() {
                values.push(rt.iter().map(|&(i, w)| w * horiz[i][c]).sum());
            }
        }
        window_argmax(&values, rows, cols, params.subpixel)
    };
    Ok((ex - x).hypot(ey - y))
}

/// Localization error of recovering a joint from a heatmap at 1/f_d
/// resolution.
///
/// Each trial places a joint uniformly at random at least two cells inside a
/// `grid_cells`² grid, encodes its heatmap, upsamples with the chosen kernel
/// and takes the argmax pixel (or, for [`Kernel::Rie`], refines the argmax
/// cell with encoded offsets). Trials run in parallel on independent
/// per-trial streams, so results do not depend on the thread count.
pub fn bench_upsample_error(
    fd: u32,
    kernel: Kernel,
    trials: usize,
    seed: u64,
    params: &BenchParams,
) -> Result<BenchResult, SynthError> {
    if trials == 0 {
        return Err(SynthError::Config("trials must be positive".into()));
    }
    if params.grid_cells < 5 {
        return Err(SynthError::Config("grid_cells must be >= 5".into()));
    }
    if !(params.sigma_cells > 0.0) {
        return Err(SynthError::Config("sigma_cells must be > 0".into()));
    }
    let cfg = EncoderConfig {
        fd,
        sigma_heat: params.sigma_cells * fd as f64,
        ..EncoderConfig::default()
    };
    cfg.validate()?;
    let spec = one_joint_spec();
    let mut errors = (0..trials as u64)
        .into_par_iter()
        .map(|k| bench_trial(fd, kernel, seed, k, &spec, &cfg, params))
        .collect::<Result<Vec<f64>, _>>()?;
    let mean_px = errors.iter().sum::<f64>() / trials as f64;
    errors.sort_by(f64::total_cmp);
    let rank = ((0.95 * trials as f64).ceil() as usize).clamp(1, trials);
    Ok(BenchResult {
        fd,
        kernel,
        trials,
        mean_px,
        p95_px: errors[rank - 1],
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::encode_scene;
    use crate::skeleton::default_coco_skeleton;

    #[test]
    fn scenes_are_reproducible() {
        let spec = default_coco_skeleton();
        let p = SceneParams::default();
        let a = random_scene(7, 1, (1280, 960), &spec, &p).unwrap();
        let b = random_scene(7, 1, (1280, 960), &spec, &p).unwrap();
        assert_eq!(a, b);
        assert!(random_scene(7, 0, (64, 64), &spec, &p).unwrap().persons.is_empty());
    }

    #[test]
    fn persons_keep_min_separation() {
        let spec = default_coco_skeleton();
        let p = SceneParams {
            min_separation: 16.0,
            ..SceneParams::default()
        };
        let s = random_scene(7, 3, (1280, 960), &spec, &p).unwrap();
        assert_eq!(s.persons.len(), 3);
        for a in 0..3 {
            for b in a + 1..3 {
                for ja in s.persons[a].joints.iter().flatten() {
                    for jb in s.persons[b].joints.iter().flatten() {
                        assert!((ja.x - jb.x).hypot(ja.y - jb.y) >= 16.0);
                    }
                }
            }
        }
        s.validate(&spec).unwrap();
    }

    #[test]
    fn overcrowded_scene_exhausts_budget() {
        let spec = default_coco_skeleton();
        let p = SceneParams {
            max_attempts: 200,
            ..SceneParams::default()
        };
        let err = random_scene(1, 40, (640, 640), &spec, &p).unwrap_err();
        assert!(matches!(err, SynthError::Exhausted { .. }));
        assert!(err.to_string().contains("fewer persons"));
    }

    #[test]
    fn segment_distance_cases() {
        assert_eq!(segment_distance((0.0, 0.0), (2.0, 2.0), (0.0, 2.0), (2.0, 0.0)), 0.0);
        assert_eq!(segment_distance((0.0, 0.0), (1.0, 0.0), (0.0, 3.0), (1.0, 3.0)), 3.0);
        assert_eq!(segment_distance((0.0, 0.0), (1.0, 0.0), (4.0, 4.0), (4.0, 4.0)), 5.0);
    }

    fn fields() -> (SkeletonSpec, FieldSet) {
        let spec = default_coco_skeleton();
        let scene = random_scene(3, 1, (640, 640), &spec, &SceneParams {
            torso: (100.0, 120.0),
            ..SceneParams::default()
        })
        .unwrap();
        let fs = encode_scene(&scene, &spec, &EncoderConfig::default()).unwrap();
        (spec, fs)
    }

    #[test]
    fn corruption_identities() {
        let (spec, fs) = fields();
        let same = corrupt(&fs, &Corruption::GaussianNoise { sigma: 0.0 }, 1, &spec).unwrap();
        assert_eq!(same, fs);
        let swap = Corruption::MirrorSwap { joints: vec![5, 9] };
        let once = corrupt(&fs, &swap, 1, &spec).unwrap();
        assert_ne!(once, fs);
        assert_eq!(corrupt(&once, &swap, 1, &spec).unwrap(), fs);
        let zero = corrupt(&fs, &Corruption::Dropout { p: 1.0 }, 1, &spec).unwrap();
        assert!(zero.heatmaps.data().iter().chain(zero.pafs.data()).all(|&v| v == 0.0));
        let noisy = corrupt(&fs, &Corruption::GaussianNoise { sigma: 0.1 }, 4, &spec).unwrap();
        assert_eq!(noisy, corrupt(&fs, &Corruption::GaussianNoise { sigma: 0.1 }, 4, &spec).unwrap());
    }

    #[test]
    fn mirror_swap_rejects_unknown_channels() {
        let (spec, fs) = fields();
        for joints in [vec![99], vec![0]] {
            let err = corrupt(&fs, &Corruption::MirrorSwap { joints }, 0, &spec).unwrap_err();
            assert!(matches!(err, SynthError::Config(_)));
        }
    }

    #[test]
    fn brute_force_examples() {
        let (m, w) = brute_force_matching(&[vec![10.0, 1.0], vec![1.0, 10.0]]).unwrap();
        assert_eq!((m, w), (vec![(0, 0), (1, 1)], 20.0));
        assert_eq!(brute_force_matching(&[vec![5.0]]).unwrap(), (vec![(0, 0)], 5.0));
        assert_eq!(brute_force_matching(&vec![vec![0.0; 3]; 3]).unwrap(), (vec![], 0.0));
        assert!(matches!(
            brute_force_matching(&vec![vec![1.0; 9]; 2]),
            Err(SynthError::TooLarge { .. })
        ));
        // Ties resolve to the lexicographically smallest edge list.
        let (m, _) = brute_force_matching(&[vec![3.0, 3.0], vec![3.0, 3.0]]).unwrap();
        assert_eq!(m, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn dominant_matrices_have_planted_optimum() {
        for seed in 0..50 {
            let (m, planted) = strictly_dominant_matrix(seed, 6);
            let (best, _) = brute_force_matching(&m).unwrap();
            assert_eq!(best, planted);
        }
    }

    #[test]
    fn keys_kernel_is_interpolating() {
        assert_eq!(keys_cubic(0.0), 1.0);
        assert_eq!(keys_cubic(1.0), 0.0);
        assert_eq!(keys_cubic(2.0), 0.0);
        let s: f64 = (-1..=2).map(|k| keys_cubic(0.3 - k as f64)).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_downsampling_is_near_exact() {
        for k in [Kernel::Nearest, Kernel::Bilinear, Kernel::Bicubic] {
            let r = bench_upsample_error(1, k, 200, 5, &BenchParams {
                sigma_cells: 2.0,
                ..BenchParams::default()
            })
            .unwrap();
            assert!(r.mean_px < 0.5, "{k:?}: {}", r.mean_px);
        }
    }

    #[test]
    fn bench_is_seed_deterministic() {
        let p = BenchParams::default();
        let a = bench_upsample_error(8, Kernel::Bicubic, 100, 9, &p).unwrap();
        let b = bench_upsample_error(8, Kernel::Bicubic, 100, 9, &p).unwrap();
        assert_eq!(a, b);
        assert!(a.csv_row().starts_with("8,bicubic,100,"));
    }
}
