use serde::{Deserialize, Serialize};

use super::{ConnectionCandidate, DecoderConfig, JointCandidate};
use crate::skeleton::SkeletonSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodedJoint {
    pub x: f64,
    pub y: f64,
    /// Heatmap value at the peak.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedPose {
    /// Indexed by joint type.
    pub joints: Vec<Option<DecodedJoint>>,
    pub score: f64,
}

impl DecodedPose {
    pub fn joint_count(&self) -> usize {
        self.joints.iter().filter(|j| j.is_some()).count()
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller root wins so the result does not depend on edge order.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Groups candidates linked by accepted connections into poses.
///
/// Unconnected candidates become single-joint poses only when their peak
/// reaches twice the peak threshold. A pose scores the mean of its joint
/// confidences and its connections' aligned fractions. Poses are ordered by
/// score, ties broken by the smallest `(cell, joint type)` they contain.
pub fn assemble(
    accepted: &[ConnectionCandidate],
    candidates: &[JointCandidate],
    spec: &SkeletonSpec,
    cfg: &DecoderConfig,
) -> Vec<DecodedPose> {
    let mut uf = UnionFind::new(candidates.len());
    let mut connected = vec![false; candidates.len()];
    for c in accepted {
        uf.union(c.parent, c.child);
        connected[c.parent] = true;
        connected[c.child] = true;
    }

    // root -> (members, connection fractions)
    let mut groups: std::collections::BTreeMap<usize, (Vec<usize>, Vec<f64>)> = Default::default();
    for (k, cand) in candidates.iter().enumerate() {
        if !connected[k] && cand.score < 2.0 * cfg.peak_threshold {
            continue;
        }
        groups.entry(uf.find(k)).or_default().0.push(k);
    }
    for c in accepted {
        let root = uf.find(c.parent);
        if let Some(g) = groups.get_mut(&root) {
            g.1.push(c.score as f64 / cfg.num_samples as f64);
        }
    }

    let mut poses: Vec<((usize, usize, usize), DecodedPose)> = Vec::with_capacity(groups.len());
    for (members, fractions) in groups.into_values() {
        let mut best: Vec<Option<usize>> = vec![None; spec.num_joints()];
        for &k in &members {
            let t = candidates[k].joint_type;
            match best[t] {
                Some(b) if candidates[b].score >= candidates[k].score => {}
                _ => best[t] = Some(k),
            }
        }
        let joints: Vec<Option<DecodedJoint>> = best
            .iter()
            .map(|b| {
                b.map(|k| DecodedJoint {
                    x: candidates[k].position.0,
                    y: candidates[k].position.1,
                    confidence: candidates[k].score,
                })
            })
            .collect();
        let parts: Vec<f64> = best
            .iter()
            .flatten()
            .map(|&k| candidates[k].score)
            .chain(fractions)
            .collect();
        let score = parts.iter().sum::<f64>() / parts.len() as f64;
        let key = members
            .iter()
            .map(|&k| (candidates[k].cell.0, candidates[k].cell.1, candidates[k].joint_type))
            .min()
            .expect("groups are never empty");
        poses.push((key, DecodedPose { joints, score }));
    }
    poses.sort_by(|a, b| b.1.score.total_cmp(&a.1.score).then(a.0.cmp(&b.0)));
    poses.into_iter().map(|(_, p)| p).collect()
}
