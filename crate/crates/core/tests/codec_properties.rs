use posefield::decoder::{decode, DecoderConfig, DecodedPose, Matcher};
use posefield::encoder::{encode_scene, EncoderConfig};
use posefield::fields::FieldTensor;
use posefield::skeleton::{
    default_coco_skeleton, ingest_coco, scenes_to_coco, Keypoint, PoseInstance, Scene,
};
use posefield::synth::{random_scene, SceneParams};
use proptest::prelude::*;

fn max_joint_error(scene: &Scene, poses: &[DecodedPose]) -> Option<f64> {
    if poses.len() != scene.persons.len() {
        return None;
    }
    let mut worst = 0f64;
    for person in &scene.persons {
        // Match each person to the decoded pose holding its first joint.
        let first = person.joints[0].unwrap();
        let pose = poses.iter().find(|p| {
            p.joints[0].is_some_and(|j| (j.x - first.x).abs() < 1e-3 && (j.y - first.y).abs() < 1e-3)
        })?;
        for (g, d) in person.joints.iter().zip(&pose.joints) {
            match (g, d) {
                (Some(g), Some(d)) => worst = worst.max((g.x - d.x).hypot(g.y - d.y)),
                (None, None) => {}
                _ => return None,
            }
        }
    }
    Some(worst)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn decode_inverts_encode(seed in any::<u64>(), persons in 0usize..4) {
        let spec = default_coco_skeleton();
        let scene = random_scene(seed, persons, (1280, 960), &spec, &SceneParams::default()).unwrap();
        let fields = encode_scene(&scene, &spec, &EncoderConfig::default()).unwrap();
        for matcher in [Matcher::Greedy, Matcher::Exact] {
            let cfg = DecoderConfig { matcher, ..DecoderConfig::default() };
            let poses = decode(&fields, &spec, &cfg).unwrap();
            let err = max_joint_error(&scene, &poses);
            prop_assert!(err.is_some_and(|e| e <= 1e-4), "error {err:?}");
        }
    }

    #[test]
    fn bias_threshold_perturbation_is_harmless(seed in any::<u64>(), persons in 1usize..4) {
        let spec = default_coco_skeleton();
        let scene = random_scene(seed, persons, (1280, 960), &spec, &SceneParams::default()).unwrap();
        let fields = encode_scene(&scene, &spec, &EncoderConfig::default()).unwrap();
        let base = decode(&fields, &spec, &DecoderConfig::default()).unwrap();
        for t in [0.3, 0.7] {
            let cfg = DecoderConfig { bias_threshold: t, ..DecoderConfig::default() };
            prop_assert_eq!(&decode(&fields, &spec, &cfg).unwrap(), &base);
        }
    }

    #[test]
    fn paf_norms_and_offset_ranges(seed in any::<u64>(), persons in 1usize..4) {
        let spec = default_coco_skeleton();
        let scene = random_scene(seed, persons, (1280, 960), &spec, &SceneParams::default()).unwrap();
        let f = encode_scene(&scene, &spec, &EncoderConfig::default()).unwrap();
        let plane = f.pafs.height() * f.pafs.width();
        for l in 0..spec.num_limbs() {
            let (m, n) = (f.pafs.channel(2 * l), f.pafs.channel(2 * l + 1));
            for k in 0..plane {
                let norm = (m[k] as f64).hypot(n[k] as f64);
                prop_assert!(norm == 0.0 || (norm - 1.0).abs() <= 1e-6, "norm {norm}");
            }
        }
        prop_assert!(f.offsets.data().iter().all(|v| (-0.5..=0.5).contains(v)));
    }

    /// Shifting by whole cells moves every field by the same number of cells.
    /// Coordinates are dyadic so the shift is exact in floating point.
    #[test]
    fn encoding_is_translation_covariant(
        raw in proptest::collection::vec((0u32..512, 0u32..512), 2),
        di in 0usize..4,
        dj in 0usize..4,
    ) {
        let spec = posefield::skeleton::SkeletonSpec::new(
            vec!["a".into(), "b".into()], true, vec![(0, 1)], vec![], vec![0.1, 0.1],
        ).unwrap();
        let fd = 8.0;
        let place = |(x, y): (u32, u32), si: usize, sj: usize| {
            Keypoint::visible(16.0 + x as f64 / 8.0 + sj as f64 * fd, 16.0 + y as f64 / 8.0 + si as f64 * fd)
        };
        let build = |si: usize, sj: usize| {
            let mut s = Scene::new(0, (160, 160));
            s.push(PoseInstance { joints: raw.iter().map(|&p| Some(place(p, si, sj))).collect() }, None);
            s
        };
        let cfg = EncoderConfig::default();
        let a = encode_scene(&build(0, 0), &spec, &cfg).unwrap();
        let b = encode_scene(&build(di, dj), &spec, &cfg).unwrap();
        let check = |ta: &FieldTensor, tb: &FieldTensor| {
            let (h, w) = (ta.height(), ta.width());
            for c in 0..ta.channels() {
                for i in 0..h - di {
                    for j in 0..w - dj {
                        if ta.get(c, i, j).to_bits() != tb.get(c, i + di, j + dj).to_bits() {
                            return false;
                        }
                    }
                }
            }
            true
        };
        prop_assert!(check(&a.heatmaps, &b.heatmaps));
        prop_assert!(check(&a.pafs, &b.pafs));
        prop_assert!(check(&a.offsets, &b.offsets));
    }

    #[test]
    fn coco_round_trip_preserves_scenes(seed in any::<u64>(), persons in 0usize..4) {
        let spec = default_coco_skeleton();
        let mut scene = random_scene(seed, persons, (1280, 960), &spec, &SceneParams::default()).unwrap();
        scene.image_id = 3;
        // The neck is not a COCO keypoint; ingestion rebuilds it from the shoulders.
        let (neck, l, r) = (1, 5, 2);
        for p in scene.persons.iter_mut() {
            let (a, b) = (p.joints[l].unwrap(), p.joints[r].unwrap());
            p.joints[neck] = Some(Keypoint::visible(0.5 * (a.x + b.x), 0.5 * (a.y + b.y)));
        }
        let doc = serde_json::to_string(&scenes_to_coco(std::slice::from_ref(&scene), &spec)).unwrap();
        let back = ingest_coco(&doc, &spec).unwrap();
        prop_assert_eq!(back.len(), 1);
        prop_assert_eq!(&back[0], &scene);
        prop_assert_eq!(&ingest_coco(&doc, &spec).unwrap(), &back);
    }
}

#[test]
fn offsets_disabled_fall_back_to_cell_centers() {
    // Expected distance from a uniform point in a unit square to its center
    // is (√2 + ln(1 + √2)) / 6 ≈ 0.3826 cells.
    let spec = default_coco_skeleton();
    let expected = (2f64.sqrt() + (1.0 + 2f64.sqrt()).ln()) / 6.0 * 8.0;
    let cfg = DecoderConfig {
        use_offsets: false,
        ..DecoderConfig::default()
    };
    let (mut total, mut n) = (0.0, 0usize);
    for seed in 0..60 {
        let scene = random_scene(seed, 3, (1280, 960), &spec, &SceneParams::default()).unwrap();
        let fields = encode_scene(&scene, &spec, &EncoderConfig::default()).unwrap();
        let poses = decode(&fields, &spec, &cfg).unwrap();
        for person in &scene.persons {
            for (t, g) in person.joints.iter().enumerate() {
                let g = g.unwrap();
                let d = poses
                    .iter()
                    .filter_map(|p| p.joints[t])
                    .map(|j| (j.x - g.x).hypot(j.y - g.y))
                    .fold(f64::MAX, f64::min);
                total += d;
                n += 1;
            }
        }
    }
    let mean = total / n as f64;
    // 3240 joints: the standard error of the mean is about 0.03 px.
    assert!((mean - expected).abs() < 0.15, "mean {mean} vs {expected}");
}
