//! OKS-based keypoint mAP following the COCO keypoint protocol.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::DecodedPose;
use crate::skeleton::{PoseInstance, Scene, SkeletonSpec};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("duplicate image id {0} in {1}")]
    DuplicateImage(u64, &'static str),
    #[error("detections reference image id {0} with no ground truth")]
    UnknownImage(u64),
    #[error("invalid evaluation parameters: {0}")]
    Params(String),
}

/// Object-area bands for the medium/large breakdown, in squared pixels.
pub const MEDIUM_AREA: (f64, f64) = (32.0 * 32.0, 96.0 * 96.0);
pub const LARGE_AREA: (f64, f64) = (96.0 * 96.0, f64::INFINITY);
/// Degenerate keypoint boxes have area 0, so the lower bound sits below it.
const ALL_AREAS: (f64, f64) = (-1.0, f64::INFINITY);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    pub oks_thresholds: Vec<f64>,
    pub recall_points: usize,
    /// Highest-scoring detections kept per image.
    pub max_dets: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            oks_thresholds: (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect(),
            recall_points: 101,
            max_dets: 20,
        }
    }
}

impl EvalParams {
    fn validate(&self) -> Result<(), EvalError> {
        if self.oks_thresholds.is_empty()
            || self.oks_thresholds.iter().any(|t| !(0.0..=1.0).contains(t))
        {
            return Err(EvalError::Params("OKS thresholds must lie in [0, 1]".into()));
        }
        if self.recall_points < 2 {
            return Err(EvalError::Params("need at least 2 recall points".into()));
        }
        if self.max_dets == 0 {
            return Err(EvalError::Params("max_dets must be positive".into()));
        }
        Ok(())
    }

    fn recall_grid(&self) -> Vec<f64> {
        let n = self.recall_points - 1;
        (0..=n).map(|k| k as f64 / n as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub oks_threshold: f64,
    /// `None` when no ground truth is eligible.
    pub ap: Option<f64>,
    pub recall: Vec<f64>,
    /// Interpolated precision at each recall point.
    pub precision: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ap: f64,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_m: Option<f64>,
    pub ap_l: Option<f64>,
    pub curves: Vec<PrCurve>,
}

impl EvalResult {
    /// `oks_threshold,recall,precision` rows for every curve.
    pub fn pr_csv(&self) -> String {
        let mut out = String::from("oks_threshold,recall,precision\n");
        for c in &self.curves {
            for (r, p) in c.recall.iter().zip(&c.precision) {
                out.push_str(&format!("{:.2},{r:.2},{p:.6}\n", c.oks_threshold));
            }
        }
        out
    }
}

/// Object keypoint similarity between a ground-truth person of the given
/// area and a detection. Joints missing from the detection contribute zero.
/// `None` when the ground truth has no labeled joints.
pub fn oks(gt: &PoseInstance, area: f64, dt: &DecodedPose, spec: &SkeletonSpec) -> Option<f64> {
    let kappa = spec.oks_kappa();
    let mut labeled = 0usize;
    let mut total = 0.0;
    for (j, g) in gt.joints.iter().enumerate() {
        let Some(g) = g else { continue };
        labeled += 1;
        if let Some(Some(d)) = dt.joints.get(j) {
            let d2 = (d.x - g.x).powi(2) + (d.y - g.y).powi(2);
            total += (-d2 / (2.0 * area * kappa[j] * kappa[j])).exp();
        }
    }
    (labeled > 0).then(|| total / labeled as f64)
}

/// Area used for OKS scale: the annotated area, else the keypoint box
/// area floored at one square pixel.
fn gt_area(scene: &Scene, k: usize) -> f64 {
    scene.person_areas[k].unwrap_or_else(|| scene.persons[k].keypoint_box_area().max(1.0))
}

fn dt_area(dt: &DecodedPose) -> f64 {
    let pts: Vec<(f64, f64)> = dt.joints.iter().flatten().map(|j| (j.x, j.y)).collect();
    if pts.is_empty() {
        return 0.0;
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for (x, y) in pts {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    (x1 - x0) * (y1 - y0)
}

/// Per-image matching outcome at every threshold for one area band.
struct ImageEval {
    scores: Vec<f64>,
    /// `[threshold][detection]`
    matched: Vec<Vec<bool>>,
    ignored: Vec<Vec<bool>>,
    eligible_gt: usize,
}

fn evaluate_image(
    scene: &Scene,
    dets: &[&DecodedPose],
    spec: &SkeletonSpec,
    params: &EvalParams,
    band: (f64, f64),
) -> ImageEval {
    let in_band = |a: f64| a > band.0 && a <= band.1;
    // Ground truth: non-ignored first, stable within each group.
    let mut gts: Vec<(usize, bool)> = (0..scene.persons.len())
        .map(|k| {
            let ignore =
                scene.persons[k].labeled_count() == 0 || !in_band(gt_area(scene, k));
            (k, ignore)
        })
        .collect();
    gts.sort_by_key(|&(_, ig)| ig);

    let ious: Vec<Vec<f64>> = dets
        .iter()
        .map(|d| {
            gts.iter()
                .map(|&(k, _)| oks(&scene.persons[k], gt_area(scene, k), d, spec).unwrap_or(0.0))
                .collect()
        })
        .collect();

    let mut matched = Vec::with_capacity(params.oks_thresholds.len());
    let mut ignored = Vec::with_capacity(params.oks_thresholds.len());
    for &t in &params.oks_thresholds {
        let mut gt_taken = vec![false; gts.len()];
        let mut dm = vec![false; dets.len()];
        let mut di = vec![false; dets.len()];
        for (d, row) in ious.iter().enumerate() {
            let mut best = t.min(1.0 - 1e-10);
            let mut m: Option<usize> = None;
            for (g, &(_, g_ignore)) in gts.iter().enumerate() {
                if gt_taken[g] {
                    continue;
                }
                // Once matched to a regular gt, never switch to an ignored one.
                if let Some(prev) = m {
                    if !gts[prev].1 && g_ignore {
                        break;
                    }
                }
                if row[g] < best {
                    continue;
                }
                best = row[g];
                m = Some(g);
            }
            if let Some(g) = m {
                gt_taken[g] = true;
                dm[d] = true;
                di[d] = gts[g].1;
            } else if !in_band(dt_area(dets[d])) {
                di[d] = true;
            }
        }
        matched.push(dm);
        ignored.push(di);
    }
    ImageEval {
        scores: dets.iter().map(|d| d.score).collect(),
        matched,
        ignored,
        eligible_gt: gts.iter().filter(|(_, ig)| !ig).count(),
    }
}

fn accumulate(evals: &[ImageEval], params: &EvalParams) -> Vec<PrCurve> {
    let recall_grid = params.recall_grid();
    let eligible: usize = evals.iter().map(|e| e.eligible_gt).sum();
    // Global order by score; stable so equal scores keep image order.
    let mut order: Vec<(usize, usize)> = evals
        .iter()
        .enumerate()
        .flat_map(|(i, e)| (0..e.scores.len()).map(move |d| (i, d)))
        .collect();
    order.sort_by(|a, b| evals[b.0].scores[b.1].total_cmp(&evals[a.0].scores[a.1]));

    params
        .oks_thresholds
        .iter()
        .enumerate()
        .map(|(t, &thr)| {
            if eligible == 0 {
                return PrCurve {
                    oks_threshold: thr,
                    ap: None,
                    recall: recall_grid.clone(),
                    precision: vec![0.0; recall_grid.len()],
                };
            }
            let (mut tp, mut fp) = (0usize, 0usize);
            let mut rc = Vec::new();
            let mut pr = Vec::new();
            for &(i, d) in &order {
                if evals[i].ignored[t][d] {
                    continue;
                }
                if evals[i].matched[t][d] {
                    tp += 1;
                } else {
                    fp += 1;
                }
                rc.push(tp as f64 / eligible as f64);
                pr.push(tp as f64 / (tp + fp) as f64);
            }
            for k in (1..pr.len()).rev() {
                if pr[k] > pr[k - 1] {
                    pr[k - 1] = pr[k];
                }
            }
            let precision: Vec<f64> = recall_grid
                .iter()
                .map(|&r| {
                    let idx = rc.partition_point(|&x| x < r);
                    pr.get(idx).copied().unwrap_or(0.0)
                })
                .collect();
            let ap = precision.iter().sum::<f64>() / precision.len() as f64;
            PrCurve {
                oks_threshold: thr,
                ap: Some(ap),
                recall: recall_grid.clone(),
                precision,
            }
        })
        .collect()
}

fn mean_ap(curves: &[PrCurve]) -> Option<f64> {
    let aps: Vec<f64> = curves.iter().filter_map(|c| c.ap).collect();
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

fn run_band(
    scenes: &[&Scene],
    dets: &[Vec<&DecodedPose>],
    spec: &SkeletonSpec,
    params: &EvalParams,
    band: (f64, f64),
) -> Vec<PrCurve> {
    let evals: Vec<ImageEval> = scenes
        .par_iter()
        .zip(dets.par_iter())
        .map(|(s, d)| evaluate_image(s, d, spec, params, band))
        .collect();
    accumulate(&evals, params)
}

/// COCO-style evaluation over a set of images.
///
/// `detections` pairs image ids with decoded poses; images absent from it
/// have no detections. Per image only the `max_dets` highest-scoring poses
/// count. The headline AP is the mean over OKS thresholds, 0 when no ground
/// truth is eligible at all.
pub fn evaluate(
    gt_scenes: &[Scene],
    detections: &[(u64, Vec<DecodedPose>)],
    spec: &SkeletonSpec,
    params: &EvalParams,
) -> Result<EvalResult, EvalError> {
    params.validate()?;
    let mut seen = BTreeSet::new();
    for s in gt_scenes {
        if !seen.insert(s.image_id) {
            return Err(EvalError::DuplicateImage(s.image_id, "ground truth"));
        }
    }
    let mut by_image: BTreeMap<u64, Vec<&DecodedPose>> = BTreeMap::new();
    let mut det_seen = BTreeSet::new();
    for (id, poses) in detections {
        if !det_seen.insert(*id) {
            return Err(EvalError::DuplicateImage(*id, "detections"));
        }
        if !seen.contains(id) {
            return Err(EvalError::UnknownImage(*id));
        }
        let mut sorted: Vec<&DecodedPose> = poses.iter().collect();
        sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
        sorted.truncate(params.max_dets);
        by_image.insert(*id, sorted);
    }

    let mut scenes: Vec<&Scene> = gt_scenes.iter().collect();
    scenes.sort_by_key(|s| s.image_id);
    let dets: Vec<Vec<&DecodedPose>> = scenes
        .iter()
        .map(|s| by_image.remove(&s.image_id).unwrap_or_default())
        .collect();

    let curves = run_band(&scenes, &dets, spec, params, ALL_AREAS);
    let at = |thr: f64| {
        curves
            .iter()
            .find(|c| (c.oks_threshold - thr).abs() < 1e-9)
            .and_then(|c| c.ap)
    };
    Ok(EvalResult {
        ap: mean_ap(&curves).unwrap_or(0.0),
        ap50: at(0.5),
        ap75: at(0.75),
        ap_m: mean_ap(&run_band(&scenes, &dets, spec, params, MEDIUM_AREA)),
        ap_l: mean_ap(&run_band(&scenes, &dets, spec, params, LARGE_AREA)),
        curves,
    })
}
