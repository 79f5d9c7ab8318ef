//! Pose normalization and template clustering: Lloyd's k-means with k-means++
//! seeding over normalized 17x3 pose vectors, producing the template bank used
//! by the alignment stage.

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Rect;
use crate::pose::{
    joint_names, valid_count, CoordinateSpace, EncodedKeypoint, Pose, KEYPOINT_COUNT,
};

/// Poses entering the clustering must carry more than this many valid joints.
pub const MIN_VALID_JOINTS: usize = 8;

/// Templates need at least this many valid joints to support transform fitting.
pub const MIN_TEMPLATE_JOINTS: usize = 3;

/// Default number of templates.
pub const DEFAULT_K: usize = 3;

/// Default iteration cap for Lloyd's algorithm.
pub const DEFAULT_MAX_ITER: usize = 300;

/// A pose mapped into the unit square by [`normalize_pose`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPose(Pose);

impl NormalizedPose {
    /// Wrap a unit-square pose, checking the normalization invariants:
    /// coordinates in [0, 1]^2 and absent keypoints at the placeholder.
    pub fn from_unit_pose(pose: Pose) -> Result<Self> {
        if pose.space() != CoordinateSpace::UnitSquare {
            return Err(Error::Format("normalized pose must be unit-square".into()));
        }
        for kp in pose.keypoints() {
            if !kp.is_valid() && (kp.x != 0.5 || kp.y != 0.5) {
                return Err(Error::InvalidKeypoint {
                    x: kp.x,
                    y: kp.y,
                    v: kp.v,
                });
            }
        }
        Ok(NormalizedPose(pose))
    }

    pub fn pose(&self) -> &Pose {
        &self.0
    }
}

/// Map a pixel-space pose into the unit square through the square RoI of
/// `bbox` (the bbox expanded along its shorter side, centered on the bbox
/// center). Absent keypoints become (0.5, 0.5, 0); valid keypoints landing
/// outside the RoI are clamped to the unit square.
pub fn normalize_pose(pose: &Pose, bbox: &Rect) -> Result<NormalizedPose> {
    if bbox.w <= 0.0 || bbox.h <= 0.0 {
        return Err(Error::InvalidBbox {
            w: bbox.w,
            h: bbox.h,
        });
    }
    let square = bbox.expanded_to_square();
    let mut keypoints = [EncodedKeypoint::ABSENT; KEYPOINT_COUNT];
    for (out, kp) in keypoints.iter_mut().zip(pose.keypoints()) {
        if kp.is_valid() {
            *out = EncodedKeypoint {
                x: ((kp.x - square.x) / square.w).clamp(0.0, 1.0),
                y: ((kp.y - square.y) / square.h).clamp(0.0, 1.0),
                v: kp.v,
            };
        }
    }
    Ok(NormalizedPose(Pose::new_unchecked(
        keypoints,
        CoordinateSpace::UnitSquare,
    )))
}

/// Squared Euclidean distance between two poses seen as 17 stacked
/// (x, y, v) vectors.
pub fn pose_distance(a: &NormalizedPose, b: &NormalizedPose) -> f64 {
    point_distance(&pose_points(a), &pose_points(b))
}

type PosePoints = [[f64; 3]; KEYPOINT_COUNT];

fn pose_points(p: &NormalizedPose) -> PosePoints {
    let mut out = [[0.0; 3]; KEYPOINT_COUNT];
    for (o, kp) in out.iter_mut().zip(p.0.keypoints()) {
        *o = [kp.x, kp.y, kp.v];
    }
    out
}

fn point_distance(a: &PosePoints, b: &PosePoints) -> f64 {
    let mut sum = 0.0;
    for (pa, pb) in a.iter().zip(b.iter()) {
        for c in 0..3 {
            let d = pa[c] - pb[c];
            sum += d * d;
        }
    }
    sum
}

/// Cluster-mean pose plus its valid-joint mask (mean visibility > 0.5).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseTemplate {
    mean: [[f64; 3]; KEYPOINT_COUNT],
    valid_mask: [bool; KEYPOINT_COUNT],
}

impl PoseTemplate {
    /// Build a template from a real-valued mean pose. Fails when fewer than
    /// three joints pass the v > 0.5 validity threshold.
    pub fn from_mean(mean: [[f64; 3]; KEYPOINT_COUNT]) -> std::result::Result<Self, usize> {
        let mut valid_mask = [false; KEYPOINT_COUNT];
        let mut valid = 0;
        for (m, out) in mean.iter().zip(valid_mask.iter_mut()) {
            *out = m[2] > 0.5;
            valid += usize::from(*out);
        }
        if valid < MIN_TEMPLATE_JOINTS {
            return Err(valid);
        }
        Ok(PoseTemplate { mean, valid_mask })
    }

    pub fn mean(&self) -> &[[f64; 3]; KEYPOINT_COUNT] {
        &self.mean
    }

    pub fn valid_mask(&self) -> &[bool; KEYPOINT_COUNT] {
        &self.valid_mask
    }

    pub fn valid_joint_count(&self) -> usize {
        self.valid_mask.iter().filter(|&&v| v).count()
    }
}

/// Outcome of [`kmeans_templates`].
#[derive(Debug, Clone)]
pub struct ClusteringResult {
    pub templates: Vec<PoseTemplate>,
    /// Cluster index per input pose; `None` for poses dropped by the
    /// valid-joint filter.
    pub assignments: Vec<Option<usize>>,
    /// Final sum of pose distances to assigned means.
    pub objective: f64,
    pub iterations: usize,
    /// Objective after each Lloyd iteration; non-increasing.
    pub objective_history: Vec<f64>,
}

/// Lloyd's k-means over normalized poses with k-means++ seeding. Input poses
/// with 8 or fewer valid joints are dropped before clustering; empty clusters
/// are re-seeded from the pose farthest from its assigned mean. Deterministic
/// for a given seed.
pub fn kmeans_templates(
    poses: &[NormalizedPose],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<ClusteringResult> {
    let survivors: Vec<usize> = poses
        .iter()
        .enumerate()
        .filter(|(_, p)| valid_count(p.pose()) > MIN_VALID_JOINTS)
        .map(|(i, _)| i)
        .collect();
    let filtered: Vec<PosePoints> = survivors.iter().map(|&i| pose_points(&poses[i])).collect();
    if k == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if filtered.len() < k {
        return Err(Error::InsufficientData {
            needed: k,
            got: filtered.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = seed_means_plus_plus(&filtered, k, &mut rng);
    let mut assignments = vec![0usize; filtered.len()];
    let mut history = Vec::new();

    for _ in 0..max_iter.max(1) {
        let changed = assign(&filtered, &means, &mut assignments);
        update_means(&filtered, &assignments, &mut means);
        reseed_empty_clusters(&filtered, &assignments, &mut means);
        history.push(objective(&filtered, &means, &assignments));
        if !changed && history.len() > 1 {
            break;
        }
    }

    let templates = means
        .iter()
        .enumerate()
        .map(|(index, mean)| {
            PoseTemplate::from_mean(*mean).map_err(|valid| Error::SparseTemplate { index, valid })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut full_assignments = vec![None; poses.len()];
    for (&input_index, &cluster) in survivors.iter().zip(&assignments) {
        full_assignments[input_index] = Some(cluster);
    }

    Ok(ClusteringResult {
        templates,
        assignments: full_assignments,
        objective: *history.last().expect("at least one iteration"),
        iterations: history.len(),
        objective_history: history,
    })
}

fn seed_means_plus_plus(points: &[PosePoints], k: usize, rng: &mut ChaCha8Rng) -> Vec<PosePoints> {
    let mut means = Vec::with_capacity(k);
    means.push(points[rng.gen_range(0..points.len())]);
    let mut best_dist: Vec<f64> = points
        .iter()
        .map(|p| point_distance(p, &means[0]))
        .collect();
    while means.len() < k {
        let total: f64 = best_dist.iter().sum();
        let next = if total <= 0.0 {
            // All points coincide with existing means; any choice is equivalent.
            rng.gen_range(0..points.len())
        } else {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, d) in best_dist.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        means.push(points[next]);
        for (dist, p) in best_dist.iter_mut().zip(points) {
            let d = point_distance(p, means.last().unwrap());
            if d < *dist {
                *dist = d;
            }
        }
    }
    means
}

fn assign(points: &[PosePoints], means: &[PosePoints], assignments: &mut [usize]) -> bool {
    let mut changed = false;
    for (p, slot) in points.iter().zip(assignments.iter_mut()) {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, m) in means.iter().enumerate() {
            let d = point_distance(p, m);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        if best != *slot {
            *slot = best;
            changed = true;
        }
    }
    changed
}

fn update_means(points: &[PosePoints], assignments: &[usize], means: &mut [PosePoints]) {
    let mut counts = vec![0usize; means.len()];
    let mut sums = vec![[[0.0f64; 3]; KEYPOINT_COUNT]; means.len()];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            for c in 0..3 {
                s[c] += v[c];
            }
        }
    }
    for ((mean, sum), &count) in means.iter_mut().zip(&sums).zip(&counts) {
        if count > 0 {
            for (m, s) in mean.iter_mut().zip(sum) {
                for c in 0..3 {
                    m[c] = s[c] / count as f64;
                }
            }
        }
    }
}

fn reseed_empty_clusters(points: &[PosePoints], assignments: &[usize], means: &mut [PosePoints]) {
    let mut counts = vec![0usize; means.len()];
    for &a in assignments {
        counts[a] += 1;
    }
    for cluster in 0..means.len() {
        if counts[cluster] > 0 {
            continue;
        }
        // Farthest point from its assigned mean becomes the new seed.
        let mut far_idx = 0;
        let mut far_d = -1.0;
        for (i, (p, &a)) in points.iter().zip(assignments).enumerate() {
            let d = point_distance(p, &means[a]);
            if d > far_d {
                far_d = d;
                far_idx = i;
            }
        }
        means[cluster] = points[far_idx];
    }
}

fn objective(points: &[PosePoints], means: &[PosePoints], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| point_distance(p, &means[a]))
        .sum()
}

/// Versioned on-disk template bank.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateBank {
    pub version: u32,
    #[serde(rename = "K")]
    pub k: usize,
    pub joint_names: Vec<String>,
    pub templates: Vec<TemplateRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateRecord {
    pub mean: Vec<[f64; 3]>,
    pub valid_mask: Vec<bool>,
}

pub const TEMPLATE_BANK_VERSION: u32 = 1;

impl TemplateBank {
    pub fn from_templates(templates: &[PoseTemplate]) -> Self {
        TemplateBank {
            version: TEMPLATE_BANK_VERSION,
            k: templates.len(),
            joint_names: joint_names(),
            templates: templates
                .iter()
                .map(|t| TemplateRecord {
                    mean: t.mean.to_vec(),
                    valid_mask: t.valid_mask.to_vec(),
                })
                .collect(),
        }
    }

    pub fn to_templates(&self) -> Result<Vec<PoseTemplate>> {
        if self.version != TEMPLATE_BANK_VERSION {
            return Err(Error::Format(format!(
                "unsupported template bank version {}",
                self.version
            )));
        }
        self.templates
            .iter()
            .enumerate()
            .map(|(index, rec)| {
                if rec.mean.len() != KEYPOINT_COUNT {
                    return Err(Error::Format(format!(
                        "template {index} has {} joints, expected {KEYPOINT_COUNT}",
                        rec.mean.len()
                    )));
                }
                let mut mean = [[0.0; 3]; KEYPOINT_COUNT];
                mean.copy_from_slice(&rec.mean);
                let template = PoseTemplate::from_mean(mean)
                    .map_err(|valid| Error::SparseTemplate { index, valid })?;
                if rec.valid_mask.len() == KEYPOINT_COUNT
                    && rec.valid_mask != template.valid_mask.to_vec()
                {
                    return Err(Error::Format(format!(
                        "template {index}: stored valid_mask disagrees with mean visibility"
                    )));
                }
                Ok(template)
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
