use posefield::encoder::{encode_scene, EncoderConfig};
use posefield::fields::{FieldSet, FieldTensor};
use posefield::losses::{
    kl_loss, l2_loss, pdd_weights, salm_weights, total_loss, LossConfig, PddThresholds,
    SelfSupervisionPair, StagePrediction,
};
use posefield::skeleton::{Keypoint, PoseInstance, Scene, SkeletonSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two mirrored joints and one limb: 3 heatmap, 2 PAF and 4 offset channels.
fn pair_spec() -> SkeletonSpec {
    SkeletonSpec::new(
        vec!["left".into(), "right".into()],
        true,
        vec![(0, 1)],
        vec![(0, 1)],
        vec![0.1, 0.1],
    )
    .unwrap()
}

fn random_scene(rng: &mut ChaCha8Rng) -> Scene {
    let mut scene = Scene::new(0, (64, 64));
    loop {
        let a = (rng.gen_range(4.0..60.0), rng.gen_range(4.0..60.0));
        let b = (rng.gen_range(4.0..60.0), rng.gen_range(4.0..60.0));
        if f64::hypot(a.0 - b.0, a.1 - b.1) >= 16.0 {
            scene.push(
                PoseInstance {
                    joints: vec![Some(Keypoint::visible(a.0, a.1)), Some(Keypoint::visible(b.0, b.1))],
                },
                None,
            );
            return scene;
        }
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, like: &FieldTensor, lo: f32, hi: f32) -> FieldTensor {
    let data = (0..like.len()).map(|_| rng.gen_range(lo..hi)).collect();
    FieldTensor::new(like.channels(), like.grid(), data).unwrap()
}

fn random_stage(rng: &mut ChaCha8Rng, target: &FieldSet) -> StagePrediction {
    // Heatmap-like values stay away from the KL clamp.
    StagePrediction {
        fields: FieldSet::new(
            random_tensor(rng, &target.heatmaps, 0.2, 1.0),
            random_tensor(rng, &target.pafs, -1.0, 1.0),
            random_tensor(rng, &target.offsets, -0.5, 0.5),
        )
        .unwrap(),
        paf_heatmaps: random_tensor(rng, &target.heatmaps, 0.2, 1.0),
    }
}

fn tensor_mut(stage: &mut StagePrediction, which: usize) -> &mut FieldTensor {
    match which {
        0 => &mut stage.fields.heatmaps,
        1 => &mut stage.fields.pafs,
        2 => &mut stage.fields.offsets,
        _ => &mut stage.paf_heatmaps,
    }
}

fn with_value(t: &FieldTensor, k: usize, v: f32) -> FieldTensor {
    let mut data = t.data().to_vec();
    data[k] = v;
    FieldTensor::new(t.channels(), t.grid(), data).unwrap()
}

fn perturbed_total(
    stages: &[StagePrediction],
    s: usize,
    which: usize,
    k: usize,
    v: f32,
    target: &FieldSet,
    scene: &Scene,
    spec: &SkeletonSpec,
    cfg: &LossConfig,
) -> f64 {
    let mut work = stages.to_vec();
    let t = tensor_mut(&mut work[s], which).clone();
    *tensor_mut(&mut work[s], which) = with_value(&t, k, v);
    total_loss(&work, target, scene, spec, &EncoderConfig::default(), cfg)
        .unwrap()
        .total
}

/// Central difference of the total along one element, using the step that
/// survives rounding to f32.
fn central(stages: &[StagePrediction], s: usize, which: usize, k: usize, h: f64,
    target: &FieldSet, scene: &Scene, spec: &SkeletonSpec, cfg: &LossConfig) -> f64 {
    let x = tensor_mut(&mut stages.to_vec()[s], which).data()[k] as f64;
    let (up, down) = ((x + h) as f32, (x - h) as f32);
    let lp = perturbed_total(stages, s, which, k, up, target, scene, spec, cfg);
    let lm = perturbed_total(stages, s, which, k, down, target, scene, spec, cfg);
    (lp - lm) / (up as f64 - down as f64)
}

/// Worst relative error between analytic gradients and Richardson-extrapolated
/// central differences (steps 1e-3 and 5e-4, which cancels the h² truncation
/// term of the logarithmic KL part). Elements whose analytic gradient is below
/// `floor` are skipped: there the absolute round-off of the difference
/// quotient, about 1e-9, dominates.
fn worst_fd_error(
    stages: &[StagePrediction],
    target: &FieldSet,
    scene: &Scene,
    spec: &SkeletonSpec,
    cfg: &LossConfig,
    floor: f64,
) -> f64 {
    let report = total_loss(stages, target, scene, spec, &EncoderConfig::default(), cfg).unwrap();
    let mut worst = 0f64;
    for s in 0..stages.len() {
        let grads = &report.gradients[s];
        for (which, g) in [&grads.heatmaps, &grads.pafs, &grads.offsets, &grads.paf_heatmaps]
            .into_iter()
            .enumerate()
        {
            for k in 0..g.len() {
                let an = g.data()[k] as f64;
                if an.abs() <= floor {
                    continue;
                }
                let d1 = central(stages, s, which, k, 1e-3, target, scene, spec, cfg);
                let d2 = central(stages, s, which, k, 5e-4, target, scene, spec, cfg);
                let fd = (4.0 * d2 - d1) / 3.0;
                worst = worst.max((fd - an).abs() / an.abs().max(fd.abs()));
            }
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn gradients_match_central_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = pair_spec();
        let scene = random_scene(&mut rng);
        let target = encode_scene(&scene, &spec, &EncoderConfig::default()).unwrap();
        let stages = vec![random_stage(&mut rng, &target), random_stage(&mut rng, &target)];
        let cfg = LossConfig { beta_schedule: vec![0.3, 1.0], ..LossConfig::default() };
        let worst = worst_fd_error(&stages, &target, &scene, &spec, &cfg, 1e-4);
        prop_assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn kl_is_nonnegative_on_distributions(seed in any::<u64>(), n in 1usize..64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = posefield::fields::GridMeta::new(8, 8 * n as u32, 8).unwrap();
        let mut draw = || {
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let total: f64 = raw.iter().sum::<f64>().max(1e-12);
            FieldTensor::new(1, g, raw.iter().map(|v| (v / total) as f32).collect()).unwrap()
        };
        let (p, q) = (draw(), draw());
        let pair = SelfSupervisionPair::new(&p, &q).unwrap();
        let kl = kl_loss(&pair, 1e-8).unwrap().loss;
        // Normalization happens in f32, so masses differ from 1 by rounding;
        // the log-sum bound absorbs that exactly.
        let clamp = |t: &FieldTensor| t.data().iter().map(|&v| (v as f64).max(1e-8)).sum::<f64>();
        let (mp, mq) = (clamp(&p), clamp(&q));
        prop_assert!(kl >= mp * (mp / mq).ln() - 1e-12);
        prop_assert!(kl >= -1e-6);
        let same = SelfSupervisionPair::new(&p, &p).unwrap();
        prop_assert!(kl_loss(&same, 1e-8).unwrap().loss.abs() < 1e-9);
    }

    #[test]
    fn salm_is_bounded(seed in any::<u64>(), alpha in 0.0f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = pair_spec();
        let scene = random_scene(&mut rng);
        let w = salm_weights(&scene, &spec, &EncoderConfig::default(), alpha).unwrap();
        for &v in w.data() {
            prop_assert!(v >= 1.0);
            prop_assert!((v as f64) <= alpha + 1.0 + 1e-6);
        }
    }

    #[test]
    fn pdd_weights_match_zone_oracle(seed in any::<u64>(), beta in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = pair_spec();
        let scene = random_scene(&mut rng);
        let target = encode_scene(&scene, &spec, &EncoderConfig::default()).unwrap();
        let th = PddThresholds::default();
        let w = pdd_weights(&target.heatmaps, &spec, beta, th).unwrap();
        let plane = target.heatmaps.height() * target.heatmaps.width();
        let hm = target.heatmaps.data();
        let mut zone = 0usize;
        let mut beta_cells = 0usize;
        for c in 0..target.heatmaps.channels() {
            for k in 0..plane {
                let in_zone = c < 2
                    && (hm[c * plane + k] as f64) < th.low
                    && (hm[(1 - c) * plane + k] as f64) >= th.high;
                zone += in_zone as usize;
                let v = w.data()[c * plane + k];
                prop_assert!(v == beta as f32 || v == 1.0);
                if in_zone {
                    prop_assert_eq!(v, beta as f32);
                    beta_cells += 1;
                } else {
                    prop_assert_eq!(v, 1.0);
                }
            }
        }
        prop_assert_eq!(zone, beta_cells);
    }

    #[test]
    fn total_is_additive_over_stages(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = pair_spec();
        let scene = random_scene(&mut rng);
        let enc = EncoderConfig::default();
        let target = encode_scene(&scene, &spec, &enc).unwrap();
        let a = random_stage(&mut rng, &target);
        let b = random_stage(&mut rng, &target);
        let cfg = LossConfig { beta_schedule: vec![0.5, 1.0], ..LossConfig::default() };
        let both = total_loss(&[a.clone(), b.clone()], &target, &scene, &spec, &enc, &cfg).unwrap();
        let only_a = total_loss(&[a], &target, &scene, &spec, &enc,
            &LossConfig { beta_schedule: vec![1.0], ..cfg.clone() }).unwrap();
        let only_b = total_loss(&[b], &target, &scene, &spec, &enc,
            &LossConfig { beta_schedule: vec![1.0], ..cfg.clone() }).unwrap();
        prop_assert_eq!(both.total, both.stage_totals[0] + both.stage_totals[1]);
        prop_assert_eq!(both.stage_totals[1], only_b.total);
        // Stage a ran with β = 0.5 inside the pair, 1.0 alone.
        prop_assert!(both.stage_totals[0] <= only_a.total + 1e-9);
    }

    #[test]
    fn total_is_permutation_covariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = pair_spec();
        let scene = random_scene(&mut rng);
        let enc = EncoderConfig::default();
        let target = encode_scene(&scene, &spec, &enc).unwrap();
        let stages = vec![random_stage(&mut rng, &target), random_stage(&mut rng, &target)];
        let cfg = LossConfig { beta_schedule: vec![0.2, 1.0], ..LossConfig::default() };
        let base = total_loss(&stages, &target, &scene, &spec, &enc, &cfg).unwrap();

        let perm = [1usize, 0];
        let pspec = spec.permuted(&perm).unwrap();
        let mut pscene = scene.clone();
        for p in pscene.persons.iter_mut() {
            let mut joints = vec![None; 2];
            for (old, &new) in perm.iter().enumerate() {
                joints[new] = p.joints[old];
            }
            p.joints = joints;
        }
        let ptarget = encode_scene(&pscene, &pspec, &enc).unwrap();
        let swap_heat = |t: &FieldTensor| permute_channels(t, &[1, 0, 2]);
        let swap_off = |t: &FieldTensor| permute_channels(t, &[2, 3, 0, 1]);
        prop_assert_eq!(&ptarget.heatmaps, &swap_heat(&target.heatmaps));
        prop_assert_eq!(&ptarget.offsets, &swap_off(&target.offsets));
        // The limb now runs from new joint 1 to new joint 0: same geometry.
        prop_assert_eq!(&ptarget.pafs, &target.pafs);
        let pstages: Vec<StagePrediction> = stages
            .iter()
            .map(|s| StagePrediction {
                fields: FieldSet::new(
                    swap_heat(&s.fields.heatmaps),
                    s.fields.pafs.clone(),
                    swap_off(&s.fields.offsets),
                ).unwrap(),
                paf_heatmaps: swap_heat(&s.paf_heatmaps),
            })
            .collect();
        let permuted = total_loss(&pstages, &ptarget, &pscene, &pspec, &enc, &cfg).unwrap();
        prop_assert!((permuted.total - base.total).abs() <= 1e-12 * base.total.abs());
        for (g, pg) in base.gradients.iter().zip(&permuted.gradients) {
            prop_assert_eq!(&swap_heat(&g.heatmaps), &pg.heatmaps);
            prop_assert_eq!(&swap_off(&g.offsets), &pg.offsets);
        }
    }

    #[test]
    fn zero_alpha_matches_disabled_mask_bitwise(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = pair_spec();
        let scene = random_scene(&mut rng);
        let enc = EncoderConfig::default();
        let target = encode_scene(&scene, &spec, &enc).unwrap();
        let stages = vec![random_stage(&mut rng, &target), random_stage(&mut rng, &target)];
        let zero = LossConfig { alpha: 0.0, beta_schedule: vec![0.4, 1.0], ..LossConfig::default() };
        let off = LossConfig { use_salm: false, ..zero.clone() };
        let a = total_loss(&stages, &target, &scene, &spec, &enc, &zero).unwrap();
        let b = total_loss(&stages, &target, &scene, &spec, &enc, &off).unwrap();
        prop_assert_eq!(a.total.to_bits(), b.total.to_bits());
        for (x, y) in a.gradients.iter().zip(&b.gradients) {
            prop_assert_eq!(&x.pafs, &y.pafs);
        }
    }
}

fn permute_channels(t: &FieldTensor, order: &[usize]) -> FieldTensor {
    // Output channel `order[c]` takes input channel `c`.
    let plane = t.height() * t.width();
    let mut data = vec![0f32; t.len()];
    for (c, &dst) in order.iter().enumerate() {
        data[dst * plane..(dst + 1) * plane].copy_from_slice(t.channel(c));
    }
    FieldTensor::new(t.channels(), t.grid(), data).unwrap()
}

#[test]
fn degenerate_config_reduces_to_plain_l2() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let spec = pair_spec();
    let scene = random_scene(&mut rng);
    let enc = EncoderConfig::default();
    let target = encode_scene(&scene, &spec, &enc).unwrap();
    let pafs = random_tensor(&mut rng, &target.pafs, -1.0, 1.0);
    let offsets = random_tensor(&mut rng, &target.offsets, -0.5, 0.5);
    let stage = StagePrediction {
        fields: FieldSet::new(target.heatmaps.clone(), pafs.clone(), offsets.clone()).unwrap(),
        paf_heatmaps: target.heatmaps.clone(),
    };
    let cfg = LossConfig {
        gamma: 0.0,
        delta: 1.0,
        alpha: 0.0,
        beta_schedule: vec![1.0],
        ..LossConfig::default()
    };
    let report = total_loss(&[stage], &target, &scene, &spec, &enc, &cfg).unwrap();

    let (paf_l2, _) = l2_loss(&pafs, &target.pafs, None).unwrap();
    let mask = FieldTensor::from_fn(4, target.grid(), |c, i, j| {
        if target.heatmaps.get(c / 2, i, j) > 0.4 { 1.0 } else { 0.0 }
    })
    .unwrap();
    let (off_l2, _) = l2_loss(&offsets, &target.offsets, Some(&mask)).unwrap();
    let expected = paf_l2 + off_l2;
    assert!((report.total - expected).abs() <= 1e-12 * expected);
    assert_eq!(report.terms.l_kl, 0.0);
    assert_eq!(report.terms.l_ps, 0.0);
}
