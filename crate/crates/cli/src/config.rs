//! Flat key-value config file.
//!
//! Every key is optional; missing keys keep their defaults and command-line
//! flags override whatever the file sets. `delta` defaults to `gamma + 1`.

use std::fs;
use std::path::Path;

use posefield::decoder::{DecoderConfig, Matcher, PafSampling};
use posefield::encoder::{EncoderConfig, HeatmapCombine};
use posefield::losses::{pdd_schedule, LossConfig, ScheduleKind};
use posefield::synth::BenchParams;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaSchedule {
    Named(ScheduleKind),
    Explicit(Vec<f64>),
}

impl BetaSchedule {
    /// Per-stage β for `stages` stages. A single stage is the final stage.
    pub fn resolve(&self, stages: usize) -> Result<Vec<f64>, CliError> {
        match self {
            BetaSchedule::Named(_) if stages == 1 => Ok(vec![1.0]),
            BetaSchedule::Named(kind) => pdd_schedule(*kind, stages).map_err(CliError::usage),
            BetaSchedule::Explicit(v) if v.len() == stages => Ok(v.clone()),
            BetaSchedule::Explicit(v) => Err(CliError::usage(format!(
                "beta_schedule lists {} values but {stages} stages were given",
                v.len()
            ))),
        }
    }
}

/// The file format: one optional key per tunable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    // encoder
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fd: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_heat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limb_halfwidth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset_validity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heatmap_combine: Option<HeatmapCombine>,
    // loss
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_salm: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_schedule: Option<BetaSchedule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl_epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset_mask_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pdd_high: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pdd_low: Option<f64>,
    // decoder
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_aligned_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matcher: Option<Matcher>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_offsets: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paf_sampling: Option<PafSampling>,
    // bench
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_cells: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subpixel: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_cells: Option<usize>,
    // eval
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_dets: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossSettings {
    pub gamma: f64,
    pub delta: f64,
    pub alpha: f64,
    pub use_salm: bool,
    pub beta_schedule: BetaSchedule,
    pub kl_epsilon: f64,
    pub offset_mask_threshold: f64,
    pub pdd_high: f64,
    pub pdd_low: f64,
}

impl Default for LossSettings {
    fn default() -> Self {
        let d = LossConfig::default();
        Self {
            gamma: d.gamma,
            delta: d.delta,
            alpha: d.alpha,
            use_salm: d.use_salm,
            beta_schedule: BetaSchedule::Named(ScheduleKind::QuadraticB),
            kl_epsilon: d.kl_epsilon,
            offset_mask_threshold: d.offset_mask_threshold,
            pdd_high: d.pdd_high,
            pdd_low: d.pdd_low,
        }
    }
}

impl LossSettings {
    pub fn to_config(&self, stages: usize) -> Result<LossConfig, CliError> {
        let cfg = LossConfig {
            gamma: self.gamma,
            delta: self.delta,
            alpha: self.alpha,
            use_salm: self.use_salm,
            beta_schedule: self.beta_schedule.resolve(stages)?,
            kl_epsilon: self.kl_epsilon,
            offset_mask_threshold: self.offset_mask_threshold,
            pdd_high: self.pdd_high,
            pdd_low: self.pdd_low,
        };
        cfg.validate().map_err(CliError::usage)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub encoder: EncoderConfig,
    pub loss: LossSettings,
    pub decoder: DecoderConfig,
    pub seed: u64,
    pub trials: usize,
    pub bench: BenchParams,
    pub max_dets: usize,
    /// 0 lets the thread pool pick.
    pub jobs: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            loss: LossSettings::default(),
            decoder: DecoderConfig::default(),
            seed: 42,
            trials: 10_000,
            bench: BenchParams::default(),
            max_dets: 20,
            jobs: 0,
        }
    }
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut s = Settings::default();
        if let Some(path) = path {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let file: FileConfig = toml::from_str(&text)
                .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            s.apply(&file);
        }
        Ok(s)
    }

    pub fn apply(&mut self, f: &FileConfig) {
        fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
        let e = &mut self.encoder;
        set(&mut e.fd, &f.fd);
        set(&mut e.sigma_heat, &f.sigma_heat);
        set(&mut e.limb_halfwidth, &f.limb_halfwidth);
        set(&mut e.offset_validity, &f.offset_validity);
        set(&mut e.heatmap_combine, &f.heatmap_combine);

        let l = &mut self.loss;
        if let Some(g) = f.gamma {
            l.gamma = g;
            l.delta = g + 1.0;
        }
        set(&mut l.delta, &f.delta);
        set(&mut l.alpha, &f.alpha);
        set(&mut l.use_salm, &f.use_salm);
        set(&mut l.beta_schedule, &f.beta_schedule);
        set(&mut l.kl_epsilon, &f.kl_epsilon);
        set(&mut l.offset_mask_threshold, &f.offset_mask_threshold);
        set(&mut l.pdd_high, &f.pdd_high);
        set(&mut l.pdd_low, &f.pdd_low);

        let d = &mut self.decoder;
        set(&mut d.peak_threshold, &f.peak_threshold);
        set(&mut d.num_samples, &f.num_samples);
        set(&mut d.bias_threshold, &f.bias_threshold);
        set(&mut d.min_aligned_fraction, &f.min_aligned_fraction);
        set(&mut d.matcher, &f.matcher);
        set(&mut d.use_offsets, &f.use_offsets);
        set(&mut d.paf_sampling, &f.paf_sampling);

        set(&mut self.seed, &f.seed);
        set(&mut self.trials, &f.trials);
        set(&mut self.bench.sigma_cells, &f.sigma_cells);
        set(&mut self.bench.subpixel, &f.subpixel);
        set(&mut self.bench.grid_cells, &f.grid_cells);
        set(&mut self.max_dets, &f.max_dets);
        set(&mut self.jobs, &f.jobs);
    }

    /// Every effective value, in file form.
    pub fn to_file(&self) -> FileConfig {
        let (e, l, d) = (&self.encoder, &self.loss, &self.decoder);
        FileConfig {
            fd: Some(e.fd),
            sigma_heat: Some(e.sigma_heat),
            limb_halfwidth: Some(e.limb_halfwidth),
            offset_validity: Some(e.offset_validity),
            heatmap_combine: Some(e.heatmap_combine),
            gamma: Some(l.gamma),
            delta: Some(l.delta),
            alpha: Some(l.alpha),
            use_salm: Some(l.use_salm),
            beta_schedule: Some(l.beta_schedule.clone()),
            kl_epsilon: Some(l.kl_epsilon),
            offset_mask_threshold: Some(l.offset_mask_threshold),
            pdd_high: Some(l.pdd_high),
            pdd_low: Some(l.pdd_low),
            peak_threshold: Some(d.peak_threshold),
            num_samples: Some(d.num_samples),
            bias_threshold: Some(d.bias_threshold),
            min_aligned_fraction: Some(d.min_aligned_fraction),
            matcher: Some(d.matcher),
            use_offsets: Some(d.use_offsets),
            paf_sampling: Some(d.paf_sampling),
            seed: Some(self.seed),
            trials: Some(self.trials),
            sigma_cells: Some(self.bench.sigma_cells),
            subpixel: Some(self.bench.subpixel),
            grid_cells: Some(self.bench.grid_cells),
            max_dets: Some(self.max_dets),
            jobs: Some(self.jobs),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_tuned_settings() {
        let s = Settings::default();
        assert_eq!(s.loss.gamma, 9.0);
        assert_eq!(s.loss.delta, 10.0);
        assert_eq!(s.loss.alpha, 10.0);
        assert_eq!(s.loss.beta_schedule, BetaSchedule::Named(ScheduleKind::QuadraticB));
        assert_eq!(s.encoder.fd, 8);
    }

    #[test]
    fn gamma_drags_delta_unless_set() {
        let mut s = Settings::default();
        s.apply(&toml::from_str("gamma = 4.0").unwrap());
        assert_eq!((s.loss.gamma, s.loss.delta), (4.0, 5.0));
        let mut s = Settings::default();
        s.apply(&toml::from_str("gamma = 4.0\ndelta = 7.0").unwrap());
        assert_eq!(s.loss.delta, 7.0);
        assert!(s.loss.to_config(6).is_err());
    }

    #[test]
    fn beta_schedule_forms() {
        let f: FileConfig = toml::from_str("beta_schedule = \"linear\"").unwrap();
        assert_eq!(f.beta_schedule, Some(BetaSchedule::Named(ScheduleKind::Linear)));
        let f: FileConfig = toml::from_str("beta_schedule = [0.5, 1.0]").unwrap();
        let b = f.beta_schedule.unwrap();
        assert_eq!(b.resolve(2).unwrap(), vec![0.5, 1.0]);
        assert!(b.resolve(3).is_err());
        assert_eq!(
            BetaSchedule::Named(ScheduleKind::QuadraticB).resolve(1).unwrap(),
            vec![1.0]
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("gama = 9").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let s = Settings::default();
        let text = toml::to_string(&s.to_file()).unwrap();
        assert!(text.contains("beta_schedule = \"quadratic_b\""));
        let mut back = Settings::default();
        back.apply(&toml::from_str(&text).unwrap());
        assert_eq!(back, s);
    }
}
