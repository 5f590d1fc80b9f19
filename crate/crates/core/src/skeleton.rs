//! Joint/limb taxonomy and COCO keypoint ingestion.
//!
//! The default taxonomy is the 18-part COCO layout with a synthesized neck.
//! Heatmaps carry one channel per joint plus an optional trailing background
//! channel; offsets carry an interleaved `(x, y)` pair per joint and nothing
//! for the background.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SkeletonError {
    #[error("limb {index} references joint {joint} but only {num_joints} joints exist")]
    LimbOutOfRange {
        index: usize,
        joint: usize,
        num_joints: usize,
    },
    #[error("limb {index} connects joint {joint} to itself")]
    SelfLimb { index: usize, joint: usize },
    #[error("mirror pair {index} is invalid: {reason}")]
    BadMirror { index: usize, reason: String },
    #[error("expected {expected} OKS constants, got {got}")]
    KappaLength { expected: usize, got: usize },
    #[error("OKS constant for joint {0} must be positive")]
    KappaNonPositive(usize),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed annotation document: {0}")]
    Document(String),
    #[error("{record}: {reason}")]
    Record { record: String, reason: String },
    #[error("{record}: image_id {image_id} does not match any image")]
    UnknownImage { record: String, image_id: u64 },
    #[error("duplicate image id {0}")]
    DuplicateImage(u64),
}

/// Immutable joint/limb description shared by every stage of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSpec {
    joint_names: Vec<String>,
    background_channel: bool,
    limbs: Vec<(usize, usize)>,
    mirror_pairs: Vec<(usize, usize)>,
    oks_kappa: Vec<f64>,
    mirror_of: Vec<Option<usize>>,
    limb_mirror_of: Vec<Option<usize>>,
}

impl SkeletonSpec {
    pub fn new(
        joint_names: Vec<String>,
        background_channel: bool,
        limbs: Vec<(usize, usize)>,
        mirror_pairs: Vec<(usize, usize)>,
        oks_kappa: Vec<f64>,
    ) -> Result<Self, SkeletonError> {
        let num_joints = joint_names.len();
        for (index, &(parent, child)) in limbs.iter().enumerate() {
            for joint in [parent, child] {
                if joint >= num_joints {
                    return Err(SkeletonError::LimbOutOfRange {
                        index,
                        joint,
                        num_joints,
                    });
                }
            }
            if parent == child {
                return Err(SkeletonError::SelfLimb {
                    index,
                    joint: parent,
                });
            }
        }

        let mut mirror_of = vec![None; num_joints];
        for (index, &(left, right)) in mirror_pairs.iter().enumerate() {
            if left >= num_joints || right >= num_joints {
                return Err(SkeletonError::BadMirror {
                    index,
                    reason: format!("joint index out of range ({left}, {right})"),
                });
            }
            if left == right {
                return Err(SkeletonError::BadMirror {
                    index,
                    reason: format!("joint {left} mirrored onto itself"),
                });
            }
            if mirror_of[left].is_some() || mirror_of[right].is_some() {
                return Err(SkeletonError::BadMirror {
                    index,
                    reason: "joint already appears in another pair".into(),
                });
            }
            mirror_of[left] = Some(right);
            mirror_of[right] = Some(left);
        }

        if oks_kappa.len() != num_joints {
            return Err(SkeletonError::KappaLength {
                expected: num_joints,
                got: oks_kappa.len(),
            });
        }
        if let Some(bad) = oks_kappa.iter().position(|&k| !(k > 0.0)) {
            return Err(SkeletonError::KappaNonPositive(bad));
        }

        let limb_mirror_of = limbs
            .iter()
            .map(|&(parent, child)| {
                let mp = mirror_of[parent].unwrap_or(parent);
                let mc = mirror_of[child].unwrap_or(child);
                if (mp, mc) == (parent, child) {
                    return None;
                }
                limbs.iter().position(|&l| l == (mp, mc))
            })
            .collect();

        Ok(Self {
            joint_names,
            background_channel,
            limbs,
            mirror_pairs,
            oks_kappa,
            mirror_of,
            limb_mirror_of,
        })
    }

    pub fn num_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn num_limbs(&self) -> usize {
        self.limbs.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    pub fn background_channel(&self) -> bool {
        self.background_channel
    }

    pub fn limbs(&self) -> &[(usize, usize)] {
        &self.limbs
    }

    pub fn mirror_pairs(&self) -> &[(usize, usize)] {
        &self.mirror_pairs
    }

    pub fn oks_kappa(&self) -> &[f64] {
        &self.oks_kappa
    }

    /// Left/right partner of `joint`, if it has one.
    pub fn mirror(&self, joint: usize) -> Option<usize> {
        self.mirror_of.get(joint).copied().flatten()
    }

    /// Limb whose endpoints are the mirrored endpoints of `limb`.
    pub fn limb_mirror(&self, limb: usize) -> Option<usize> {
        self.limb_mirror_of.get(limb).copied().flatten()
    }

    pub fn heatmap_channels(&self) -> usize {
        self.num_joints() + usize::from(self.background_channel)
    }

    pub fn paf_channels(&self) -> usize {
        2 * self.num_limbs()
    }

    pub fn offset_channels(&self) -> usize {
        2 * self.num_joints()
    }

    /// Relabels joints so that old joint `j` becomes `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, SkeletonError> {
        assert_eq!(perm.len(), self.num_joints(), "permutation length");
        let mut names = vec![String::new(); perm.len()];
        let mut kappa = vec![0.0; perm.len()];
        for (old, &new) in perm.iter().enumerate() {
            names[new] = self.joint_names[old].clone();
            kappa[new] = self.oks_kappa[old];
        }
        let limbs = self.limbs.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let mirrors = self
            .mirror_pairs
            .iter()
            .map(|&(a, b)| (perm[a], perm[b]))
            .collect();
        Self::new(names, self.background_channel, limbs, mirrors, kappa)
    }
}

const COCO_KEYPOINTS: [&str; 17] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Names of the 17 COCO keypoints in annotation order.
pub fn coco_keypoint_names() -> &'static [&'static str; 17] {
    &COCO_KEYPOINTS
}

/// The 18-part COCO taxonomy with a neck, 17 tree limbs and a background channel.
pub fn default_coco_skeleton() -> SkeletonSpec {
    let names = [
        "nose",
        "neck",
        "right_shoulder",
        "right_elbow",
        "right_wrist",
        "left_shoulder",
        "left_elbow",
        "left_wrist",
        "right_hip",
        "right_knee",
        "right_ankle",
        "left_hip",
        "left_knee",
        "left_ankle",
        "right_eye",
        "left_eye",
        "right_ear",
        "left_ear",
    ];
    let limbs = vec![
        (1, 2),
        (1, 5),
        (2, 3),
        (3, 4),
        (5, 6),
        (6, 7),
        (1, 8),
        (8, 9),
        (9, 10),
        (1, 11),
        (11, 12),
        (12, 13),
        (1, 0),
        (0, 14),
        (14, 16),
        (0, 15),
        (15, 17),
    ];
    let mirrors = vec![
        (5, 2),
        (6, 3),
        (7, 4),
        (11, 8),
        (12, 9),
        (13, 10),
        (15, 14),
        (17, 16),
    ];
    // COCO per-keypoint sigmas, doubled so that OKS matches the reference
    // evaluator; the neck reuses the shoulder value.
    let sigmas = [
        0.026, 0.079, 0.079, 0.072, 0.062, 0.079, 0.072, 0.062, 0.107, 0.087, 0.089, 0.107, 0.087,
        0.089, 0.025, 0.025, 0.035, 0.035,
    ];
    SkeletonSpec::new(
        names.iter().map(|s| s.to_string()).collect(),
        true,
        limbs,
        mirrors,
        sigmas.iter().map(|s| 2.0 * s).collect(),
    )
    .expect("default skeleton is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Occluded,
    Visible,
}

impl Visibility {
    /// COCO `v` flag (1 = labeled but occluded, 2 = visible).
    pub fn coco_flag(self) -> u8 {
        match self {
            Visibility::Occluded => 1,
            Visibility::Visible => 2,
        }
    }
}

/// A labeled joint in continuous input-resolution pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub visibility: Visibility,
}

impl Keypoint {
    pub fn visible(x: f64, y: f64) -> Self {
        Self {
            x,
            y,
            visibility: Visibility::Visible,
        }
    }
}

/// Groundtruth joints of one person; `None` marks an absent joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseInstance {
    pub joints: Vec<Option<Keypoint>>,
}

impl PoseInstance {
    pub fn empty(num_joints: usize) -> Self {
        Self {
            joints: vec![None; num_joints],
        }
    }

    pub fn labeled_count(&self) -> usize {
        self.joints.iter().flatten().count()
    }

    /// Area of the axis-aligned box around the labeled joints.
    pub fn keypoint_box_area(&self) -> f64 {
        let mut it = self.joints.iter().flatten();
        let Some(first) = it.next() else {
            return 0.0;
        };
        let (mut x0, mut y0, mut x1, mut y1) = (first.x, first.y, first.x, first.y);
        for k in it {
            x0 = x0.min(k.x);
            y0 = y0.min(k.y);
            x1 = x1.max(k.x);
            y1 = y1.max(k.y);
        }
        (x1 - x0) * (y1 - y0)
    }
}

/// One image worth of groundtruth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub image_id: u64,
    /// (width, height) in input pixels.
    pub image_size: (u32, u32),
    pub persons: Vec<PoseInstance>,
    /// Segmentation or box area per person, used as the OKS scale.
    pub person_areas: Vec<Option<f64>>,
}

impl Scene {
    pub fn new(image_id: u64, image_size: (u32, u32)) -> Self {
        Self {
            image_id,
            image_size,
            persons: Vec::new(),
            person_areas: Vec::new(),
        }
    }

    pub fn push(&mut self, person: PoseInstance, area: Option<f64>) {
        self.persons.push(person);
        self.person_areas.push(area);
    }

    /// Checks joint counts, coordinate bounds and area positivity.
    pub fn validate(&self, spec: &SkeletonSpec) -> Result<(), String> {
        let (w, h) = self.image_size;
        if self.person_areas.len() != self.persons.len() {
            return Err(format!(
                "{} persons but {} areas",
                self.persons.len(),
                self.person_areas.len()
            ));
        }
        for (p, person) in self.persons.iter().enumerate() {
            if person.joints.len() != spec.num_joints() {
                return Err(format!(
                    "person {p} has {} joints, skeleton has {}",
                    person.joints.len(),
                    spec.num_joints()
                ));
            }
            for (j, k) in person.joints.iter().enumerate() {
                if let Some(k) = k {
                    let inside = k.x >= 0.0 && k.x < w as f64 && k.y >= 0.0 && k.y < h as f64;
                    if !inside {
                        return Err(format!(
                            "person {p} joint {j} at ({}, {}) outside {w}x{h}",
                            k.x, k.y
                        ));
                    }
                }
            }
            if let Some(area) = self.person_areas[p] {
                if !(area > 0.0) {
                    return Err(format!("person {p} has non-positive area {area}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct CocoImage {
    id: u64,
    width: u32,
    height: u32,
}

#[derive(Debug, Deserialize)]
struct CocoAnnotation {
    image_id: u64,
    keypoints: Vec<f64>,
    #[serde(default)]
    area: Option<f64>,
}

fn records<'a>(doc: &'a Value, key: &str) -> Result<&'a Vec<Value>, IngestError> {
    doc.get(key)
        .ok_or_else(|| IngestError::Document(format!("missing top-level \"{key}\" array")))?
        .as_array()
        .ok_or_else(|| IngestError::Document(format!("\"{key}\" is not an array")))
}

/// Parses a COCO person-keypoints document into one [`Scene`] per image.
///
/// Scenes follow the order of `images`; persons follow annotation order. The
/// neck, when the skeleton has one, is the midpoint of both shoulders and is
/// only visible if both shoulders are.
pub fn ingest_coco(document: &str, spec: &SkeletonSpec) -> Result<Vec<Scene>, IngestError> {
    let doc: Value =
        serde_json::from_str(document).map_err(|e| IngestError::Document(e.to_string()))?;

    let mut scenes = Vec::new();
    let mut by_id = HashMap::new();
    for (i, raw) in records(&doc, "images")?.iter().enumerate() {
        let img: CocoImage =
            serde_json::from_value(raw.clone()).map_err(|e| IngestError::Record {
                record: format!("images[{i}]"),
                reason: e.to_string(),
            })?;
        if img.width == 0 || img.height == 0 {
            return Err(IngestError::Record {
                record: format!("images[{i}]"),
                reason: "zero image dimension".into(),
            });
        }
        if by_id.insert(img.id, scenes.len()).is_some() {
            return Err(IngestError::DuplicateImage(img.id));
        }
        scenes.push(Scene::new(img.id, (img.width, img.height)));
    }

    let coco_to_spec: Vec<Option<usize>> = COCO_KEYPOINTS
        .iter()
        .map(|name| spec.joint_index(name))
        .collect();
    let neck = spec.joint_index("neck");
    let shoulders = (
        spec.joint_index("left_shoulder"),
        spec.joint_index("right_shoulder"),
    );

    for (i, raw) in records(&doc, "annotations")?.iter().enumerate() {
        let record = format!("annotations[{i}]");
        let ann: CocoAnnotation =
            serde_json::from_value(raw.clone()).map_err(|e| IngestError::Record {
                record: record.clone(),
                reason: e.to_string(),
            })?;
        let scene_index = *by_id
            .get(&ann.image_id)
            .ok_or_else(|| IngestError::UnknownImage {
                record: record.clone(),
                image_id: ann.image_id,
            })?;
        if ann.keypoints.len() != 3 * COCO_KEYPOINTS.len() {
            return Err(IngestError::Record {
                record,
                reason: format!(
                    "expected {} keypoint values, got {}",
                    3 * COCO_KEYPOINTS.len(),
                    ann.keypoints.len()
                ),
            });
        }
        let scene = &mut scenes[scene_index];
        let (w, h) = scene.image_size;

        let mut person = PoseInstance::empty(spec.num_joints());
        for (k, triple) in ann.keypoints.chunks_exact(3).enumerate() {
            let (x, y, v) = (triple[0], triple[1], triple[2]);
            let visibility = match v as i64 {
                0 => continue,
                1 => Visibility::Occluded,
                2 => Visibility::Visible,
                _ => {
                    return Err(IngestError::Record {
                        record,
                        reason: format!("keypoint {} has visibility {v}", COCO_KEYPOINTS[k]),
                    })
                }
            };
            if !(x >= 0.0 && x < w as f64 && y >= 0.0 && y < h as f64) {
                return Err(IngestError::Record {
                    record,
                    reason: format!(
                        "keypoint {} at ({x}, {y}) outside {w}x{h}",
                        COCO_KEYPOINTS[k]
                    ),
                });
            }
            if let Some(j) = coco_to_spec[k] {
                person.joints[j] = Some(Keypoint { x, y, visibility });
            }
        }

        if let (Some(n), (Some(l), Some(r))) = (neck, shoulders) {
            if let (Some(a), Some(b)) = (person.joints[l], person.joints[r]) {
                let visibility = if a.visibility == Visibility::Visible
                    && b.visibility == Visibility::Visible
                {
                    Visibility::Visible
                } else {
                    Visibility::Occluded
                };
                person.joints[n] = Some(Keypoint {
                    x: 0.5 * (a.x + b.x),
                    y: 0.5 * (a.y + b.y),
                    visibility,
                });
            }
        }

        let area = match ann.area {
            Some(a) if !(a > 0.0) => {
                return Err(IngestError::Record {
                    record,
                    reason: format!("non-positive area {a}"),
                })
            }
            other => other,
        };
        scene.push(person, area);
    }

    Ok(scenes)
}

/// Serializes scenes back to a COCO keypoint document (neck dropped).
pub fn scenes_to_coco(scenes: &[Scene], spec: &SkeletonSpec) -> Value {
    let images: Vec<Value> = scenes
        .iter()
        .map(|s| {
            serde_json::json!({
                "id": s.image_id,
                "width": s.image_size.0,
                "height": s.image_size.1,
            })
        })
        .collect();
    let mut annotations = Vec::new();
    let mut next_id = 1u64;
    for scene in scenes {
        for (person, area) in scene.persons.iter().zip(&scene.person_areas) {
            let mut keypoints = Vec::with_capacity(3 * COCO_KEYPOINTS.len());
            let mut labeled = 0;
            for name in COCO_KEYPOINTS {
                match spec.joint_index(name).and_then(|j| person.joints[j]) {
                    Some(k) => {
                        keypoints.extend([
                            Value::from(k.x),
                            Value::from(k.y),
                            Value::from(k.visibility.coco_flag()),
                        ]);
                        labeled += 1;
                    }
                    None => keypoints.extend([Value::from(0), Value::from(0), Value::from(0)]),
                }
            }
            let mut ann = serde_json::json!({
                "id": next_id,
                "image_id": scene.image_id,
                "category_id": 1,
                "iscrowd": 0,
                "num_keypoints": labeled,
                "keypoints": keypoints,
            });
            if let Some(a) = area {
                ann["area"] = Value::from(*a);
            }
            annotations.push(ann);
            next_id += 1;
        }
    }
    serde_json::json!({
        "images": images,
        "annotations": annotations,
        "categories": [{
            "id": 1,
            "name": "person",
            "keypoints": COCO_KEYPOINTS,
        }],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn annotation(image_id: u64, kp: &[(usize, f64, f64, u8)]) -> Value {
        let mut flat = vec![0.0; 51];
        for &(k, x, y, v) in kp {
            flat[3 * k] = x;
            flat[3 * k + 1] = y;
            flat[3 * k + 2] = v as f64;
        }
        serde_json::json!({"image_id": image_id, "keypoints": flat, "area": 400.0})
    }

    fn document(anns: Vec<Value>) -> String {
        serde_json::json!({
            "images": [{"id": 1, "width": 64, "height": 48}],
            "annotations": anns,
        })
        .to_string()
    }

    #[test]
    fn default_layout_channel_counts() {
        let spec = default_coco_skeleton();
        assert_eq!(spec.num_joints(), 18);
        assert_eq!(spec.heatmap_channels(), 19);
        assert_eq!(spec.offset_channels(), 36);
        assert_eq!(spec.num_limbs(), 17);
        assert_eq!(spec.paf_channels(), 34);
    }

    #[test]
    fn mirror_is_involution() {
        let spec = default_coco_skeleton();
        let lk = spec.joint_index("left_knee").unwrap();
        let rk = spec.joint_index("right_knee").unwrap();
        assert_eq!(spec.mirror(lk), Some(rk));
        assert_eq!(spec.mirror(rk), Some(lk));
        for j in 0..spec.num_joints() {
            if let Some(m) = spec.mirror(j) {
                assert_eq!(spec.mirror(m), Some(j));
            }
        }
        assert_eq!(spec.mirror(spec.joint_index("nose").unwrap()), None);
        assert_eq!(spec.mirror(spec.joint_index("neck").unwrap()), None);
    }

    #[test]
    fn limb_mirrors_pair_up() {
        let spec = default_coco_skeleton();
        let upper_left = spec.limbs().iter().position(|&l| l == (5, 6)).unwrap();
        let upper_right = spec.limbs().iter().position(|&l| l == (2, 3)).unwrap();
        assert_eq!(spec.limb_mirror(upper_left), Some(upper_right));
        assert_eq!(spec.limb_mirror(upper_right), Some(upper_left));
        let neck_nose = spec.limbs().iter().position(|&l| l == (1, 0)).unwrap();
        assert_eq!(spec.limb_mirror(neck_nose), None);
    }

    #[test]
    fn rejects_bad_specs() {
        let names = || vec!["a".to_string(), "b".to_string()];
        assert!(matches!(
            SkeletonSpec::new(names(), true, vec![(0, 0)], vec![], vec![1.0, 1.0]),
            Err(SkeletonError::SelfLimb { .. })
        ));
        assert!(matches!(
            SkeletonSpec::new(names(), true, vec![(0, 2)], vec![], vec![1.0, 1.0]),
            Err(SkeletonError::LimbOutOfRange { .. })
        ));
        assert!(matches!(
            SkeletonSpec::new(names(), true, vec![], vec![(0, 1), (1, 0)], vec![1.0, 1.0]),
            Err(SkeletonError::BadMirror { .. })
        ));
        assert!(matches!(
            SkeletonSpec::new(names(), true, vec![], vec![], vec![1.0]),
            Err(SkeletonError::KappaLength { .. })
        ));
    }

    #[test]
    fn neck_is_shoulder_midpoint() {
        let spec = default_coco_skeleton();
        let doc = document(vec![annotation(1, &[(5, 10.0, 10.0, 2), (6, 20.0, 10.0, 2)])]);
        let scenes = ingest_coco(&doc, &spec).unwrap();
        let neck = scenes[0].persons[0].joints[spec.joint_index("neck").unwrap()].unwrap();
        assert_eq!((neck.x, neck.y), (15.0, 10.0));
        assert_eq!(neck.visibility, Visibility::Visible);
    }

    #[test]
    fn neck_absent_with_one_shoulder() {
        let spec = default_coco_skeleton();
        let doc = document(vec![annotation(1, &[(5, 10.0, 10.0, 1)])]);
        let scenes = ingest_coco(&doc, &spec).unwrap();
        let person = &scenes[0].persons[0];
        assert!(person.joints[spec.joint_index("neck").unwrap()].is_none());
        let ls = person.joints[spec.joint_index("left_shoulder").unwrap()].unwrap();
        assert_eq!(ls.visibility, Visibility::Occluded);
    }

    #[test]
    fn all_absent_keypoints() {
        let spec = default_coco_skeleton();
        let scenes = ingest_coco(&document(vec![annotation(1, &[])]), &spec).unwrap();
        assert_eq!(scenes[0].persons.len(), 1);
        assert_eq!(scenes[0].persons[0].labeled_count(), 0);
    }

    #[test]
    fn unknown_image_is_reference_error() {
        let spec = default_coco_skeleton();
        let err = ingest_coco(&document(vec![annotation(9, &[])]), &spec).unwrap_err();
        assert!(matches!(err, IngestError::UnknownImage { image_id: 9, .. }));
        assert!(err.to_string().contains("annotations[0]"));
    }

    #[test]
    fn malformed_record_is_named() {
        let spec = default_coco_skeleton();
        let doc = serde_json::json!({
            "images": [{"id": 1, "width": 64, "height": 48}],
            "annotations": [
                {"image_id": 1, "keypoints": vec![0.0; 51]},
                {"image_id": 1, "keypoints": "oops"},
            ],
        })
        .to_string();
        let err = ingest_coco(&doc, &spec).unwrap_err();
        assert!(err.to_string().starts_with("annotations[1]"), "{err}");
        assert!(matches!(
            ingest_coco("{not json", &spec),
            Err(IngestError::Document(_))
        ));
    }

    #[test]
    fn out_of_bounds_keypoint_rejected() {
        let spec = default_coco_skeleton();
        let doc = document(vec![annotation(1, &[(0, 64.0, 1.0, 2)])]);
        assert!(matches!(
            ingest_coco(&doc, &spec),
            Err(IngestError::Record { .. })
        ));
    }

    #[test]
    fn serialize_round_trip() {
        let spec = default_coco_skeleton();
        let doc = document(vec![
            annotation(1, &[(0, 3.5, 4.25, 2), (5, 10.0, 10.0, 2), (6, 20.0, 12.0, 1)]),
            annotation(1, &[(16, 60.0, 40.0, 1)]),
        ]);
        let scenes = ingest_coco(&doc, &spec).unwrap();
        let again = ingest_coco(&scenes_to_coco(&scenes, &spec).to_string(), &spec).unwrap();
        assert_eq!(scenes, again);
    }
}
