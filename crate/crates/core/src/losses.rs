//! Loss stack over predicted fields with analytic gradients.
//!
//! Per stage `t` with direction-distinction weight `β_t`:
//!
//! ```text
//! L = γ·L_s + L_ps + δ·(L_m + L_n) + L_kl + L_x + L_y
//! ```
//!
//! `L_s` is the heatmap L2 weighted by the direction-distinction map,
//! `L_m`/`L_n` the PAF L2 weighted by the spatial attention mask times the
//! direction-distinction map, `L_x`/`L_y` the offset L2 restricted to cells
//! whose target heatmap exceeds the activation threshold, `L_ps` the plain L2
//! between the PAF-branch heatmaps and the heatmap target, and `L_kl` the
//! KL divergence between predicted and PAF-branch heatmaps. All sums are
//! totals, never means. The report total is the sum over stages.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::EncoderConfig;
use crate::fields::{FieldError, FieldSet, FieldTensor, GridMeta};
use crate::skeleton::{Scene, SkeletonSpec};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("loss config: {0}")]
    Config(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    QuadraticA,
    QuadraticB,
}

impl std::str::FromStr for ScheduleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Self::Linear),
            "quadratic_a" | "quadratic-a" => Ok(Self::QuadraticA),
            "quadratic_b" | "quadratic-b" => Ok(Self::QuadraticB),
            other => Err(format!("unknown schedule {other:?}")),
        }
    }
}

const QUADRATIC_A: [f64; 6] = [0.00, 0.45, 0.69, 0.85, 0.95, 1.00];
const QUADRATIC_B: [f64; 6] = [0.00, 0.05, 0.15, 0.31, 0.65, 1.00];

/// Per-stage β values for a named progression.
///
/// Six stages give the canonical tables; other counts sample the same curve
/// by piecewise-linear interpolation over normalized stage position.
pub fn pdd_schedule(kind: ScheduleKind, num_stages: usize) -> Result<Vec<f64>, LossError> {
    if num_stages < 2 {
        return Err(LossError::Config(format!(
            "a schedule needs at least 2 stages, got {num_stages}"
        )));
    }
    let knots = match kind {
        ScheduleKind::Linear => {
            return Ok((0..num_stages)
                .map(|t| {
                    if num_stages == 6 {
                        [0.0, 0.2, 0.4, 0.6, 0.8, 1.0][t]
                    } else {
                        t as f64 / (num_stages - 1) as f64
                    }
                })
                .collect())
        }
        ScheduleKind::QuadraticA => QUADRATIC_A,
        ScheduleKind::QuadraticB => QUADRATIC_B,
    };
    if num_stages == knots.len() {
        return Ok(knots.to_vec());
    }
    let last = (knots.len() - 1) as f64;
    Ok((0..num_stages)
        .map(|t| {
            let pos = t as f64 / (num_stages - 1) as f64 * last;
            let k = (pos.floor() as usize).min(knots.len() - 2);
            let frac = pos - k as f64;
            knots[k] + frac * (knots[k + 1] - knots[k])
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub gamma: f64,
    pub delta: f64,
    pub alpha: f64,
    /// When false the PAF loss skips the spatial attention mask entirely.
    pub use_salm: bool,
    pub beta_schedule: Vec<f64>,
    pub kl_epsilon: f64,
    pub offset_mask_threshold: f64,
    pub pdd_high: f64,
    pub pdd_low: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: 9.0,
            delta: 10.0,
            alpha: 10.0,
            use_salm: true,
            beta_schedule: QUADRATIC_B.to_vec(),
            kl_epsilon: 1e-8,
            offset_mask_threshold: 0.4,
            pdd_high: 0.4,
            pdd_low: 0.4,
        }
    }
}

impl LossConfig {
    /// Config with `δ = γ + 1`.
    pub fn with_gamma(gamma: f64) -> Self {
        Self {
            gamma,
            delta: gamma + 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let bad = |msg: String| Err(LossError::Config(msg));
        if !(self.gamma >= 0.0) {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if (self.delta - (self.gamma + 1.0)).abs() > 1e-12 {
            return bad(format!(
                "delta must equal gamma + 1 ({}), got {}",
                self.gamma + 1.0,
                self.delta
            ));
        }
        if !(self.alpha >= 0.0) {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.kl_epsilon > 0.0) {
            return bad(format!("kl_epsilon must be > 0, got {}", self.kl_epsilon));
        }
        let s = &self.beta_schedule;
        if s.is_empty() {
            return bad("beta_schedule is empty".into());
        }
        if s.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return bad(format!("beta values must lie in [0, 1]: {s:?}"));
        }
        if s.windows(2).any(|w| w[1] < w[0]) {
            return bad(format!("beta_schedule must be nondecreasing: {s:?}"));
        }
        if *s.last().unwrap() != 1.0 {
            return bad(format!("beta_schedule must end at 1.0: {s:?}"));
        }
        Ok(())
    }

    pub fn thresholds(&self) -> PddThresholds {
        PddThresholds {
            high: self.pdd_high,
            low: self.pdd_low,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PddThresholds {
    pub high: f64,
    pub low: f64,
}

impl Default for PddThresholds {
    fn default() -> Self {
        Self {
            high: 0.4,
            low: 0.4,
        }
    }
}

fn check_shape(what: &str, a: &FieldTensor, b: &FieldTensor) -> Result<(), LossError> {
    if a.dims() != b.dims() {
        return Err(LossError::Dimension(format!(
            "{what}: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Summed squared error `Σ w (p - t)²` and its gradient `2 w (p - t)`.
pub fn l2_loss(
    pred: &FieldTensor,
    target: &FieldTensor,
    weights: Option<&FieldTensor>,
) -> Result<(f64, FieldTensor), LossError> {
    check_shape("l2 prediction/target", pred, target)?;
    if let Some(w) = weights {
        check_shape("l2 weights", pred, w)?;
        if let Some(v) = w.data().iter().find(|&&v| v < 0.0) {
            return Err(LossError::Config(format!("negative loss weight {v}")));
        }
    }
    let (loss, grad) = weighted_l2(pred.data(), target.data(), weights.map(|w| w.data()));
    Ok((loss, FieldTensor::new(pred.channels(), pred.grid(), to_f32(&grad))?))
}

/// Neumaier-compensated accumulator. Loss totals are sums over many cells;
/// compensation keeps them within an ulp or so of the exact sum, so that
/// perturbing one element changes the total by exactly its own contribution.
#[derive(Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.carry
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Loss and f64 gradient; callers compose gradients before rounding to f32.
fn weighted_l2(pred: &[f32], target: &[f32], weights: Option<&[f32]>) -> (f64, Vec<f64>) {
    let mut loss = CompensatedSum::default();
    let mut grad = Vec::with_capacity(pred.len());
    for k in 0..pred.len() {
        let diff = pred[k] as f64 - target[k] as f64;
        let w = weights.map_or(1.0, |w| w[k] as f64);
        loss.add(w * diff * diff);
        grad.push(2.0 * w * diff);
    }
    (loss.value(), grad)
}

/// Predicted heatmaps paired with heatmaps regressed from the PAF branch.
#[derive(Debug, Clone, Copy)]
pub struct SelfSupervisionPair<'a> {
    pub heatmaps: &'a FieldTensor,
    pub paf_heatmaps: &'a FieldTensor,
}

impl<'a> SelfSupervisionPair<'a> {
    pub fn new(heatmaps: &'a FieldTensor, paf_heatmaps: &'a FieldTensor) -> Result<Self, LossError> {
        check_shape("self-supervision pair", heatmaps, paf_heatmaps)?;
        Ok(Self {
            heatmaps,
            paf_heatmaps,
        })
    }
}

#[derive(Debug, Clone)]
pub struct KlOutput {
    pub loss: f64,
    pub grad_heatmaps: FieldTensor,
    pub grad_paf_heatmaps: FieldTensor,
}

/// `Σ p log(p / q)` over values clamped to `[epsilon, ∞)`.
///
/// Gradients are those of the clamped expression, so elements at or below
/// `epsilon` receive zero gradient.
pub fn kl_loss(pair: &SelfSupervisionPair<'_>, epsilon: f64) -> Result<KlOutput, LossError> {
    check_shape("kl", pair.heatmaps, pair.paf_heatmaps)?;
    let (loss, gp, gq) = kl_parts(pair, epsilon);
    let grid = pair.heatmaps.grid();
    let c = pair.heatmaps.channels();
    Ok(KlOutput {
        loss,
        grad_heatmaps: FieldTensor::new(c, grid, to_f32(&gp))?,
        grad_paf_heatmaps: FieldTensor::new(c, grid, to_f32(&gq))?,
    })
}

fn kl_parts(pair: &SelfSupervisionPair<'_>, epsilon: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let p = pair.heatmaps.data();
    let q = pair.paf_heatmaps.data();
    let mut loss = CompensatedSum::default();
    let mut gp = Vec::with_capacity(p.len());
    let mut gq = Vec::with_capacity(p.len());
    for k in 0..p.len() {
        let (pv, qv) = (p[k] as f64, q[k] as f64);
        let (pc, qc) = (pv.max(epsilon), qv.max(epsilon));
        let ratio = pc / qc;
        loss.add(pc * ratio.ln());
        gp.push(if pv > epsilon { ratio.ln() + 1.0 } else { 0.0 });
        gq.push(if qv > epsilon { -ratio } else { 0.0 });
    }
    (loss.value(), gp, gq)
}

/// Spatial attention weights, one map per limb (PAF channel pair).
///
/// `w = α exp(-d² / σ²) + 1` with `d` the distance from the cell center to the
/// limb segment and `σ = |limb| / (4 f_d)`. Instances of one limb type combine
/// by maximum; limbs without an instance get weight 1 everywhere.
pub fn salm_weights(
    scene: &Scene,
    spec: &SkeletonSpec,
    enc_cfg: &EncoderConfig,
    alpha: f64,
) -> Result<FieldTensor, LossError> {
    if !(alpha >= 0.0) {
        return Err(LossError::Config(format!("alpha must be >= 0, got {alpha}")));
    }
    let grid = GridMeta::new(enc_cfg.fd, scene.image_size.0, scene.image_size.1)?;
    let (h, w) = (grid.height(), grid.width());
    let plane = h * w;
    let fd = enc_cfg.fd as f64;
    let mut data = vec![1f32; spec.num_limbs() * plane];
    if alpha == 0.0 {
        return Ok(FieldTensor::new(spec.num_limbs(), grid, data)?);
    }
    for (l, &(parent, child)) in spec.limbs().iter().enumerate() {
        let mut best = vec![f64::NEG_INFINITY; plane];
        let mut any = false;
        for person in &scene.persons {
            let (Some(a), Some(b)) = (person.joints[parent], person.joints[child]) else {
                continue;
            };
            let (dx, dy) = (b.x - a.x, b.y - a.y);
            let len2 = dx * dx + dy * dy;
            if len2 == 0.0 {
                continue;
            }
            any = true;
            let sigma = len2.sqrt() / (4.0 * fd);
            let s2 = sigma * sigma;
            for i in 0..h {
                for j in 0..w {
                    let (cx, cy) = grid.cell_center(i, j);
                    let t = (((cx - a.x) * dx + (cy - a.y) * dy) / len2).clamp(0.0, 1.0);
                    let (px, py) = (a.x + t * dx, a.y + t * dy);
                    let d2 = (cx - px).powi(2) + (cy - py).powi(2);
                    let wv = alpha * (-d2 / s2).exp() + 1.0;
                    let slot = &mut best[i * w + j];
                    if wv > *slot {
                        *slot = wv;
                    }
                }
            }
        }
        if any {
            for (cell, v) in best.into_iter().enumerate() {
                data[l * plane + cell] = v as f32;
            }
        }
    }
    Ok(FieldTensor::new(spec.num_limbs(), grid, data)?)
}

/// Direction-distinction weights for heatmap channels.
///
/// Cell `(c, i, j)` gets `β` when `target(c) < low` and
/// `target(mirror(c)) ≥ high`: the cell belongs to the mirrored joint's
/// groundtruth region. Everything else, including channels without a mirror
/// partner, gets 1.
pub fn pdd_weights(
    target_heatmaps: &FieldTensor,
    spec: &SkeletonSpec,
    beta: f64,
    thresholds: PddThresholds,
) -> Result<FieldTensor, LossError> {
    check_beta(beta)?;
    if target_heatmaps.channels() != spec.heatmap_channels() {
        return Err(LossError::Dimension(format!(
            "expected {} heatmap channels, got {}",
            spec.heatmap_channels(),
            target_heatmaps.channels()
        )));
    }
    let plane = target_heatmaps.height() * target_heatmaps.width();
    let mut data = vec![1f32; target_heatmaps.len()];
    for c in 0..spec.num_joints() {
        let Some(m) = spec.mirror(c) else { continue };
        let own = target_heatmaps.channel(c);
        let other = target_heatmaps.channel(m);
        for cell in 0..plane {
            if (own[cell] as f64) < thresholds.low && (other[cell] as f64) >= thresholds.high {
                data[c * plane + cell] = beta as f32;
            }
        }
    }
    Ok(FieldTensor::new(
        target_heatmaps.channels(),
        target_heatmaps.grid(),
        data,
    )?)
}

/// Direction-distinction weights for PAF channels, via mirrored limbs.
///
/// A limb cell is in the confusion zone when its own target vector norm is
/// below `low` and the mirrored limb's target norm reaches `high`.
pub fn pdd_paf_weights(
    target_pafs: &FieldTensor,
    spec: &SkeletonSpec,
    beta: f64,
    thresholds: PddThresholds,
) -> Result<FieldTensor, LossError> {
    check_beta(beta)?;
    if target_pafs.channels() != spec.paf_channels() {
        return Err(LossError::Dimension(format!(
            "expected {} PAF channels, got {}",
            spec.paf_channels(),
            target_pafs.channels()
        )));
    }
    let plane = target_pafs.height() * target_pafs.width();
    let norm = |l: usize, cell: usize| -> f64 {
        let m = target_pafs.channel(2 * l)[cell] as f64;
        let n = target_pafs.channel(2 * l + 1)[cell] as f64;
        m.hypot(n)
    };
    let mut data = vec![1f32; target_pafs.len()];
    for l in 0..spec.num_limbs() {
        let Some(ml) = spec.limb_mirror(l) else { continue };
        for cell in 0..plane {
            if norm(l, cell) < thresholds.low && norm(ml, cell) >= thresholds.high {
                data[2 * l * plane + cell] = beta as f32;
                data[(2 * l + 1) * plane + cell] = beta as f32;
            }
        }
    }
    Ok(FieldTensor::new(target_pafs.channels(), target_pafs.grid(), data)?)
}

/// Direction-distinction weights for offset channels, using the heatmap rule
/// of the owning joint for both components.
pub fn pdd_offset_weights(
    target_heatmaps: &FieldTensor,
    spec: &SkeletonSpec,
    beta: f64,
    thresholds: PddThresholds,
) -> Result<FieldTensor, LossError> {
    let heat = pdd_weights(target_heatmaps, spec, beta, thresholds)?;
    let plane = heat.height() * heat.width();
    let mut data = Vec::with_capacity(spec.offset_channels() * plane);
    for c in 0..spec.num_joints() {
        let ch = heat.channel(c);
        data.extend_from_slice(ch);
        data.extend_from_slice(ch);
    }
    Ok(FieldTensor::new(spec.offset_channels(), heat.grid(), data)?)
}

fn check_beta(beta: f64) -> Result<(), LossError> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(LossError::Config(format!("beta must lie in [0, 1], got {beta}")));
    }
    Ok(())
}

/// Predictions of one network stage.
#[derive(Debug, Clone)]
pub struct StagePrediction {
    pub fields: FieldSet,
    /// Heatmaps regressed from the PAF branch.
    pub paf_heatmaps: FieldTensor,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub l_s: f64,
    pub l_m: f64,
    pub l_n: f64,
    pub l_x: f64,
    pub l_y: f64,
    pub l_ps: f64,
    pub l_kl: f64,
}

impl LossTerms {
    /// `γ L_s + L_ps + δ (L_m + L_n) + L_kl + L_x + L_y`.
    pub fn combine(&self, gamma: f64, delta: f64) -> f64 {
        gamma * self.l_s + self.l_ps + delta * (self.l_m + self.l_n) + self.l_kl + self.l_x + self.l_y
    }

    fn add(&mut self, o: &LossTerms) {
        self.l_s += o.l_s;
        self.l_m += o.l_m;
        self.l_n += o.l_n;
        self.l_x += o.l_x;
        self.l_y += o.l_y;
        self.l_ps += o.l_ps;
        self.l_kl += o.l_kl;
    }
}

/// Gradients of the report total with respect to one stage's predictions.
#[derive(Debug, Clone)]
pub struct StageGradients {
    pub heatmaps: FieldTensor,
    pub pafs: FieldTensor,
    pub offsets: FieldTensor,
    pub paf_heatmaps: FieldTensor,
}

#[derive(Debug, Clone)]
pub struct LossReport {
    pub total: f64,
    /// Terms summed over stages.
    pub terms: LossTerms,
    pub stage_terms: Vec<LossTerms>,
    pub stage_totals: Vec<f64>,
    pub gradients: Vec<StageGradients>,
}

/// Evaluates the full multi-stage loss against the groundtruth `target`.
///
/// `scene` drives the spatial attention mask and must be the scene `target`
/// was encoded from.
pub fn total_loss(
    stages: &[StagePrediction],
    target: &FieldSet,
    scene: &Scene,
    spec: &SkeletonSpec,
    enc_cfg: &EncoderConfig,
    cfg: &LossConfig,
) -> Result<LossReport, LossError> {
    cfg.validate()?;
    if stages.len() != cfg.beta_schedule.len() {
        return Err(LossError::Config(format!(
            "{} stages but beta_schedule has {} entries",
            stages.len(),
            cfg.beta_schedule.len()
        )));
    }
    if target.heatmaps.channels() != spec.heatmap_channels()
        || target.pafs.channels() != spec.paf_channels()
        || target.offsets.channels() != spec.offset_channels()
    {
        return Err(LossError::Dimension(format!(
            "target channels ({}, {}, {}) do not match skeleton ({}, {}, {})",
            target.heatmaps.channels(),
            target.pafs.channels(),
            target.offsets.channels(),
            spec.heatmap_channels(),
            spec.paf_channels(),
            spec.offset_channels()
        )));
    }
    for (t, stage) in stages.iter().enumerate() {
        check_shape(&format!("stage {t} heatmaps"), &stage.fields.heatmaps, &target.heatmaps)?;
        check_shape(&format!("stage {t} pafs"), &stage.fields.pafs, &target.pafs)?;
        check_shape(&format!("stage {t} offsets"), &stage.fields.offsets, &target.offsets)?;
        check_shape(&format!("stage {t} paf heatmaps"), &stage.paf_heatmaps, &target.heatmaps)?;
    }

    let grid = target.grid();
    let plane = grid.height() * grid.width();
    let salm = salm_weights(scene, spec, enc_cfg, cfg.alpha)?;
    if salm.grid() != grid {
        return Err(LossError::Dimension(format!(
            "scene grid {:?} differs from target grid {:?}",
            salm.grid(),
            grid
        )));
    }
    let salm = cfg.use_salm.then_some(salm);
    let offset_mask: Vec<f32> = {
        let mut m = Vec::with_capacity(spec.offset_channels() * plane);
        for c in 0..spec.num_joints() {
            let heat = target.heatmaps.channel(c);
            let ch: Vec<f32> = heat
                .iter()
                .map(|&v| if (v as f64) > cfg.offset_mask_threshold { 1.0 } else { 0.0 })
                .collect();
            m.extend_from_slice(&ch);
            m.extend_from_slice(&ch);
        }
        m
    };

    let mut report = LossReport {
        total: 0.0,
        terms: LossTerms::default(),
        stage_terms: Vec::with_capacity(stages.len()),
        stage_totals: Vec::with_capacity(stages.len()),
        gradients: Vec::with_capacity(stages.len()),
    };
    for (stage, &beta) in stages.iter().zip(&cfg.beta_schedule) {
        let th = cfg.thresholds();
        let heat_w = pdd_weights(&target.heatmaps, spec, beta, th)?;
        let paf_pdd = pdd_paf_weights(&target.pafs, spec, beta, th)?;
        let off_pdd = pdd_offset_weights(&target.heatmaps, spec, beta, th)?;

        let paf_w: Vec<f32> = match &salm {
            Some(salm) => (0..spec.paf_channels())
                .flat_map(|c| {
                    let s = salm.channel(c / 2);
                    let p = paf_pdd.channel(c);
                    s.iter().zip(p).map(|(a, b)| a * b).collect::<Vec<_>>()
                })
                .collect(),
            None => paf_pdd.data().to_vec(),
        };
        let off_w: Vec<f32> = off_pdd
            .data()
            .iter()
            .zip(&offset_mask)
            .map(|(a, b)| a * b)
            .collect();

        let f = &stage.fields;
        let (l_s, g_s) = weighted_l2(
            f.heatmaps.data(),
            target.heatmaps.data(),
            Some(heat_w.data()),
        );
        let (l_ps, g_ps) = weighted_l2(
            stage.paf_heatmaps.data(),
            target.heatmaps.data(),
            None,
        );
        let (l_kl, kl_gp, kl_gq) = kl_parts(
            &SelfSupervisionPair::new(&f.heatmaps, &stage.paf_heatmaps)?,
            cfg.kl_epsilon,
        );
        let (paf_loss, g_paf) =
            weighted_l2(f.pafs.data(), target.pafs.data(), Some(&paf_w));
        let (off_loss, g_off) = weighted_l2(
            f.offsets.data(),
            target.offsets.data(),
            Some(&off_w),
        );

        let (l_m, l_n) = split_pairs(f.pafs.data(), target.pafs.data(), &paf_w, plane);
        let (l_x, l_y) = split_pairs(f.offsets.data(), target.offsets.data(), &off_w, plane);
        debug_assert!((l_m + l_n - paf_loss).abs() <= 1e-9 * paf_loss.abs().max(1.0));
        debug_assert!((l_x + l_y - off_loss).abs() <= 1e-9 * off_loss.abs().max(1.0));

        let terms = LossTerms {
            l_s,
            l_m,
            l_n,
            l_x,
            l_y,
            l_ps,
            l_kl,
        };
        let stage_total = terms.combine(cfg.gamma, cfg.delta);

        let heat_grad: Vec<f32> = g_s
            .iter()
            .zip(&kl_gp)
            .map(|(a, b)| (cfg.gamma * a + b) as f32)
            .collect();
        let ps_grad: Vec<f32> = g_ps.iter().zip(&kl_gq).map(|(a, b)| (a + b) as f32).collect();
        let paf_grad: Vec<f32> = g_paf.iter().map(|g| (cfg.delta * g) as f32).collect();

        report.gradients.push(StageGradients {
            heatmaps: FieldTensor::new(f.heatmaps.channels(), grid, heat_grad)?,
            pafs: FieldTensor::new(f.pafs.channels(), grid, paf_grad)?,
            offsets: FieldTensor::new(f.offsets.channels(), grid, to_f32(&g_off))?,
            paf_heatmaps: FieldTensor::new(stage.paf_heatmaps.channels(), grid, ps_grad)?,
        });
        report.terms.add(&terms);
        report.stage_terms.push(terms);
        report.stage_totals.push(stage_total);
        report.total += stage_total;
    }
    Ok(report)
}

/// Splits a weighted L2 over interleaved channel pairs into its even and odd parts.
fn split_pairs(pred: &[f32], target: &[f32], w: &[f32], plane: usize) -> (f64, f64) {
    let mut parts = [CompensatedSum::default(); 2];
    for (c, ((p, t), wc)) in pred
        .chunks(plane)
        .zip(target.chunks(plane))
        .zip(w.chunks(plane))
        .enumerate()
    {
        for k in 0..p.len() {
            let diff = p[k] as f64 - t[k] as f64;
            parts[c % 2].add(wc[k] as f64 * diff * diff);
        }
    }
    (parts[0].value(), parts[1].value())
}
