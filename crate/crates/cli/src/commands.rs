use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use posefield::decoder::{decode, from_coco_results, to_coco_results, DecodeError, DecodedPose};
use posefield::encoder::{encode_scene, EncodeError};
use posefield::evalkit::{evaluate, EvalParams};
use posefield::fields::{FieldError, FieldSet};
use posefield::losses::{total_loss, LossError, StagePrediction};
use posefield::skeleton::{default_coco_skeleton, ingest_coco, Scene, SkeletonSpec};
use posefield::synth::{bench_upsample_error, BenchResult, SynthError};
use rayon::prelude::*;
use serde_json::json;

use crate::bundle::{self, Sidecar};
use crate::config::{BetaSchedule, Settings};
use crate::svg::{self, Overlay};
use crate::{BenchArgs, Cli, CliError, Command, DecodeArgs, EncodeArgs, EvalArgs, LossArgs, VizArgs};

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let mut settings = Settings::load(cli.config.as_deref())?;
    if let Some(j) = cli.jobs {
        settings.jobs = j;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.jobs)
        .build()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Encode(a) => encode_cmd(a, settings),
        Command::Decode(a) => decode_cmd(a, settings),
        Command::Loss(a) => loss_cmd(a, settings),
        Command::Eval(a) => eval_cmd(a, settings),
        Command::Bench(a) => bench_cmd(a, settings),
        Command::Viz(a) => viz_cmd(a, settings),
        Command::Config => {
            let text = toml::to_string(&settings.to_file())
                .map_err(|e| CliError::Internal(format!("config echo: {e}")))?;
            print!("{text}");
            Ok(())
        }
    })
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn load_annotations(path: &Path, spec: &SkeletonSpec) -> Result<Vec<Scene>, CliError> {
    ingest_coco(&read_text(path)?, spec).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn load_results(path: &Path, spec: &SkeletonSpec) -> Result<BTreeMap<u64, Vec<DecodedPose>>, CliError> {
    let entries = from_coco_results(&read_text(path)?, spec)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let mut by_image: BTreeMap<u64, Vec<DecodedPose>> = BTreeMap::new();
    for (id, pose) in entries {
        by_image.entry(id).or_default().push(pose);
    }
    Ok(by_image)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Internal(format!("serialization: {e}")))?;
    text.push('\n');
    bundle::write_atomic(path, text.as_bytes())
}

fn encode_error(ann: &Path, e: EncodeError) -> CliError {
    match e {
        EncodeError::Field(FieldError::Grid(_)) | EncodeError::Config(_) | EncodeError::Scene { .. } => {
            CliError::usage(format!("{}: {e}", ann.display()))
        }
        EncodeError::Field(other) => CliError::Internal(other.to_string()),
    }
}

fn encode_cmd(a: EncodeArgs, mut settings: Settings) -> Result<(), CliError> {
    let spec = default_coco_skeleton();
    if let Some(fd) = a.fd {
        settings.encoder.fd = fd;
    }
    let enc = settings.encoder;
    enc.validate().map_err(CliError::usage)?;
    let mut scenes = load_annotations(&a.ann, &spec)?;
    if let Some(size) = a.image_size {
        for s in scenes.iter_mut() {
            s.image_size = size;
        }
    }
    fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let persons = scenes
        .par_iter()
        .map(|scene| {
            let fields = encode_scene(scene, &spec, &enc).map_err(|e| encode_error(&a.ann, e))?;
            let dir = a.out.join(bundle::dir_name(scene.image_id));
            bundle::write_bundle(&dir, &fields, &Sidecar::new(scene, &spec, &enc))?;
            Ok(scene.persons.len())
        })
        .collect::<Result<Vec<_>, CliError>>()?
        .into_iter()
        .sum::<usize>();
    println!(
        "encoded {} images ({persons} persons) at f_d={} into {}",
        scenes.len(),
        enc.fd,
        a.out.display()
    );
    Ok(())
}

fn decode_cmd(a: DecodeArgs, mut settings: Settings) -> Result<(), CliError> {
    let spec = default_coco_skeleton();
    let cfg = &mut settings.decoder;
    if a.no_offsets {
        cfg.use_offsets = false;
    }
    if let Some(m) = a.matcher {
        cfg.matcher = m;
    }
    if let Some(t) = a.bias_threshold {
        cfg.bias_threshold = t;
    }
    if let Some(t) = a.peak_threshold {
        cfg.peak_threshold = t;
    }
    let cfg = settings.decoder;
    cfg.validate().map_err(CliError::usage)?;
    let dirs = bundle::find_bundles(&a.fields)?;
    let mut decoded = dirs
        .par_iter()
        .map(|dir| {
            let (sc, fields) = bundle::read_bundle(dir, &spec)?;
            let poses = decode(&fields, &spec, &cfg).map_err(|e| match e {
                DecodeError::Config(_) | DecodeError::Layout(_) => {
                    CliError::usage(format!("{}: {e}", dir.display()))
                }
                DecodeError::Results(_) => CliError::Internal(e.to_string()),
            })?;
            let finite = poses.iter().all(|p| {
                p.score.is_finite()
                    && p.joints.iter().flatten().all(|j| j.x.is_finite() && j.y.is_finite())
            });
            if !finite {
                return Err(CliError::Internal(format!("{}: non-finite pose", dir.display())));
            }
            Ok((sc.image_id, poses))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    decoded.sort_by_key(|(id, _)| *id);
    if let Some(w) = decoded.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(CliError::usage(format!(
            "{}: image id {} appears in more than one bundle",
            a.fields.display(),
            w[0].0
        )));
    }
    let results: Vec<_> = decoded
        .iter()
        .flat_map(|(id, poses)| to_coco_results(*id, poses, &spec))
        .collect();
    write_json(&a.out, &results)?;
    println!(
        "decoded {} poses from {} bundles into {}",
        results.len(),
        dirs.len(),
        a.out.display()
    );
    Ok(())
}

fn loss_error(e: LossError) -> CliError {
    match e {
        LossError::Field(FieldError::Io { .. }) => CliError::Io(e.to_string()),
        other => CliError::usage(other),
    }
}

fn read_stage(dir: &Path) -> Result<StagePrediction, CliError> {
    let fields: FieldSet = bundle::read_fields(dir)?;
    let extra = dir.join(bundle::PAF_HEATMAPS);
    let paf_heatmaps = if extra.is_file() {
        bundle::read_tensor_file(&extra)?
    } else {
        fields.heatmaps.clone()
    };
    Ok(StagePrediction {
        fields,
        paf_heatmaps,
    })
}

fn loss_cmd(a: LossArgs, mut settings: Settings) -> Result<(), CliError> {
    let spec = default_coco_skeleton();
    let l = &mut settings.loss;
    if let Some(g) = a.gamma {
        l.gamma = g;
        l.delta = g + 1.0;
    }
    if let Some(al) = a.alpha {
        l.alpha = al;
    }
    if let Some(kind) = a.beta_schedule {
        l.beta_schedule = BetaSchedule::Named(kind);
    }
    let (sc, target) = bundle::read_bundle(&a.target, &spec)?;
    let stages = a.pred.iter().map(|d| read_stage(d)).collect::<Result<Vec<_>, _>>()?;
    let cfg = settings.loss.to_config(stages.len())?;
    let report = total_loss(&stages, &target, &sc.scene, &spec, &sc.encoder, &cfg).map_err(loss_error)?;
    let out = json!({
        "total": report.total,
        "terms": report.terms,
        "stage_terms": report.stage_terms,
        "stage_totals": report.stage_totals,
        "config": {
            "gamma": settings.loss.gamma,
            "delta": settings.loss.delta,
            "alpha": settings.loss.alpha,
            "use_salm": settings.loss.use_salm,
            "beta_schedule": settings.loss.beta_schedule,
            "beta": cfg.beta_schedule,
            "kl_epsilon": cfg.kl_epsilon,
            "offset_mask_threshold": cfg.offset_mask_threshold,
            "pdd_high": cfg.pdd_high,
            "pdd_low": cfg.pdd_low,
        },
    });
    match &a.out {
        Some(path) => {
            write_json(path, &out)?;
            println!("loss {} over {} stages into {}", report.total, stages.len(), path.display());
        }
        None => println!(
            "{}",
            serde_json::to_string_pretty(&out).map_err(|e| CliError::Internal(e.to_string()))?
        ),
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs, settings: Settings) -> Result<(), CliError> {
    let spec = default_coco_skeleton();
    let scenes = load_annotations(&a.gt, &spec)?;
    let dets: Vec<(u64, Vec<DecodedPose>)> = load_results(&a.dets, &spec)?.into_iter().collect();
    let params = EvalParams {
        max_dets: a.max_dets.unwrap_or(settings.max_dets),
        ..EvalParams::default()
    };
    let result = evaluate(&scenes, &dets, &spec, &params)
        .map_err(|e| CliError::usage(format!("{}: {e}", a.dets.display())))?;
    let band = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "AP {:.4}  AP50 {}  AP75 {}  AP_M {}  AP_L {}  ({} images)",
        result.ap,
        band(result.ap50),
        band(result.ap75),
        band(result.ap_m),
        band(result.ap_l),
        scenes.len()
    );
    if let Some(path) = &a.out {
        write_json(path, &result)?;
    }
    if let Some(path) = &a.pr_csv {
        bundle::write_atomic(path, result.pr_csv().as_bytes())?;
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs, mut settings: Settings) -> Result<(), CliError> {
    let trials = a.trials.unwrap_or(settings.trials);
    let seed = a.seed.unwrap_or(settings.seed);
    let params = &mut settings.bench;
    if let Some(s) = a.sigma_cells {
        params.sigma_cells = s;
    }
    if a.subpixel {
        params.subpixel = true;
    }
    if let Some(g) = a.grid_cells {
        params.grid_cells = g;
    }
    let mut csv = format!("{}\n", BenchResult::CSV_HEADER);
    for &fd in &a.fd {
        for &kernel in &a.kernel {
            let r = bench_upsample_error(fd, kernel, trials, seed, &settings.bench).map_err(|e| match e {
                SynthError::Field(FieldError::Io { .. }) => CliError::Io(e.to_string()),
                other => CliError::usage(other),
            })?;
            csv.push_str(&r.csv_row());
            csv.push('\n');
        }
    }
    print!("{csv}");
    if let Some(path) = &a.out {
        bundle::write_atomic(path, csv.as_bytes())?;
    }
    Ok(())
}

fn viz_cmd(a: VizArgs, _settings: Settings) -> Result<(), CliError> {
    let spec = default_coco_skeleton();
    let dets = load_results(&a.dets, &spec)?;
    let scenes: BTreeMap<u64, Scene> = match &a.gt {
        Some(p) => load_annotations(p, &spec)?.into_iter().map(|s| (s.image_id, s)).collect(),
        None => BTreeMap::new(),
    };
    let mut heat = BTreeMap::new();
    if let Some(dir) = &a.fields {
        for b in bundle::find_bundles(dir)? {
            let (sc, fields) = bundle::read_bundle(&b, &spec)?;
            heat.insert(sc.image_id, fields.heatmaps);
        }
    }
    let ids: BTreeSet<u64> = scenes
        .keys()
        .chain(dets.keys())
        .chain(heat.keys())
        .chain(&a.image_id)
        .copied()
        .collect();
    fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let written = ids
        .par_iter()
        .map(|&id| {
            let size = scenes
                .get(&id)
                .map(|s| s.image_size)
                .or_else(|| heat.get(&id).map(|h| (h.grid().image_width, h.grid().image_height)))
                .or(a.image_size)
                .unwrap_or_else(|| extent(dets.get(&id).map_or(&[][..], |d| d)));
            let svg = svg::render(
                &Overlay {
                    image_id: id,
                    size,
                    detections: dets.get(&id).map_or(&[][..], |d| d),
                    groundtruth: scenes.get(&id).map_or(&[][..], |s| &s.persons),
                    heat: heat.get(&id),
                },
                &spec,
            );
            bundle::write_atomic(&a.out.join(format!("{}.svg", bundle::dir_name(id))), svg.as_bytes())
        })
        .collect::<Result<Vec<_>, CliError>>()?
        .len();
    println!("wrote {written} overlays into {}", a.out.display());
    Ok(())
}

/// Canvas just large enough for the poses, when nothing else sets a size.
fn extent(poses: &[DecodedPose]) -> (u32, u32) {
    let (mut w, mut h) = (1.0f64, 1.0f64);
    for j in poses.iter().flat_map(|p| p.joints.iter().flatten()) {
        w = w.max(j.x + 16.0);
        h = h.max(j.y + 16.0);
    }
    (w.ceil() as u32, h.ceil() as u32)
}
