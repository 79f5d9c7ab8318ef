//! Canonical 17-joint pose representation: keypoint taxonomy, visibility
//! encoding, and left-right flip semantics shared by the whole pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of body joints in the COCO convention.
pub const KEYPOINT_COUNT: usize = 17;

/// Number of limbs (joint pairs) in the COCO skeleton.
pub const LIMB_COUNT: usize = 19;

/// Machine-readable keypoint taxonomy shipped with the library
/// (names, mirror indices, limb list). Matches [`keypoint_specs`] and
/// [`SkeletonSpec::coco`]; see the `taxonomy_asset_matches_tables` test.
pub const TAXONOMY_JSON: &str = include_str!("../assets/coco_keypoints.json");

/// One joint in the taxonomy: stable index, name, and the index of its
/// left/right counterpart (the nose maps to itself).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeypointSpec {
    pub index: usize,
    pub name: &'static str,
    pub mirror_index: usize,
}

const KEYPOINT_SPECS: [KeypointSpec; KEYPOINT_COUNT] = {
    const fn kp(index: usize, name: &'static str, mirror_index: usize) -> KeypointSpec {
        KeypointSpec {
            index,
            name,
            mirror_index,
        }
    }
    [
        kp(0, "nose", 0),
        kp(1, "left_eye", 2),
        kp(2, "right_eye", 1),
        kp(3, "left_ear", 4),
        kp(4, "right_ear", 3),
        kp(5, "left_shoulder", 6),
        kp(6, "right_shoulder", 5),
        kp(7, "left_elbow", 8),
        kp(8, "right_elbow", 7),
        kp(9, "left_wrist", 10),
        kp(10, "right_wrist", 9),
        kp(11, "left_hip", 12),
        kp(12, "right_hip", 11),
        kp(13, "left_knee", 14),
        kp(14, "right_knee", 13),
        kp(15, "left_ankle", 16),
        kp(16, "right_ankle", 15),
    ]
};

pub fn keypoint_specs() -> &'static [KeypointSpec; KEYPOINT_COUNT] {
    &KEYPOINT_SPECS
}

pub fn joint_names() -> Vec<String> {
    KEYPOINT_SPECS.iter().map(|k| k.name.to_string()).collect()
}

/// Index of the left/right counterpart joint.
pub fn mirror_index(index: usize) -> usize {
    KEYPOINT_SPECS[index].mirror_index
}

/// The 19 limbs connecting COCO joints, in the standard annotation order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonSpec {
    limbs: [(usize, usize); LIMB_COUNT],
}

const COCO_LIMBS: [(usize, usize); LIMB_COUNT] = [
    (15, 13),
    (13, 11),
    (16, 14),
    (14, 12),
    (11, 12),
    (5, 11),
    (6, 12),
    (5, 6),
    (5, 7),
    (6, 8),
    (7, 9),
    (8, 10),
    (1, 2),
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (3, 5),
    (4, 6),
];

static COCO_SKELETON: SkeletonSpec = SkeletonSpec { limbs: COCO_LIMBS };

impl SkeletonSpec {
    pub fn coco() -> &'static SkeletonSpec {
        &COCO_SKELETON
    }

    pub fn limbs(&self) -> &[(usize, usize); LIMB_COUNT] {
        &self.limbs
    }
}

/// Coordinate frame a pose lives in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CoordinateSpace {
    Pixel { width: f64, height: f64 },
    UnitSquare,
}

impl CoordinateSpace {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            CoordinateSpace::Pixel { width, height } => {
                (0.0..=width).contains(&x) && (0.0..=height).contains(&y)
            }
            CoordinateSpace::UnitSquare => (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y),
        }
    }
}

/// Coordinates plus visibility weight. Weights follow the encoding
/// visible -> 2, labeled-but-not-visible -> 1, absent -> 0; absent
/// keypoints carry the (0.5, 0.5) placeholder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodedKeypoint {
    pub x: f64,
    pub y: f64,
    pub v: f64,
}

impl EncodedKeypoint {
    pub const ABSENT: EncodedKeypoint = EncodedKeypoint {
        x: 0.5,
        y: 0.5,
        v: 0.0,
    };

    pub fn is_valid(&self) -> bool {
        self.v > 0.0
    }
}

/// Encode a raw COCO keypoint triple. Visibility codes: 0 = not labeled,
/// 1 = labeled but not visible, 2 = labeled and visible. Code 0 maps to the
/// (0.5, 0.5, 0) placeholder; valid coordinates must lie inside `space`.
pub fn encode_keypoint(
    x: f64,
    y: f64,
    visibility_code: u8,
    space: &CoordinateSpace,
) -> Result<EncodedKeypoint> {
    match visibility_code {
        0 => Ok(EncodedKeypoint::ABSENT),
        1 | 2 => {
            if !space.contains(x, y) {
                return Err(Error::InvalidKeypoint {
                    x,
                    y,
                    v: visibility_code as f64,
                });
            }
            Ok(EncodedKeypoint {
                x,
                y,
                v: visibility_code as f64,
            })
        }
        other => Err(Error::InvalidVisibilityCode(other)),
    }
}

/// A single person's pose: exactly 17 encoded keypoints plus the coordinate
/// frame they live in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    keypoints: [EncodedKeypoint; KEYPOINT_COUNT],
    space: CoordinateSpace,
}

impl Pose {
    /// Build a pose, validating that every valid keypoint lies inside `space`.
    pub fn new(
        keypoints: [EncodedKeypoint; KEYPOINT_COUNT],
        space: CoordinateSpace,
    ) -> Result<Self> {
        for kp in &keypoints {
            if kp.is_valid() && !space.contains(kp.x, kp.y) {
                return Err(Error::InvalidKeypoint {
                    x: kp.x,
                    y: kp.y,
                    v: kp.v,
                });
            }
        }
        Ok(Pose { keypoints, space })
    }

    /// Build a pose without bounds validation. Used for geometric results
    /// (aligned poses may land slightly outside the target window).
    pub fn new_unchecked(
        keypoints: [EncodedKeypoint; KEYPOINT_COUNT],
        space: CoordinateSpace,
    ) -> Self {
        Pose { keypoints, space }
    }

    /// Encode a flat COCO keypoints array `[x0, y0, v0, x1, y1, v1, ...]`.
    pub fn from_coco_keypoints(flat: &[f64], space: CoordinateSpace) -> Result<Self> {
        if flat.len() != KEYPOINT_COUNT * 3 {
            return Err(Error::Format(format!(
                "keypoints array has {} values, expected {}",
                flat.len(),
                KEYPOINT_COUNT * 3
            )));
        }
        let mut keypoints = [EncodedKeypoint::ABSENT; KEYPOINT_COUNT];
        for (i, chunk) in flat.chunks_exact(3).enumerate() {
            let code = chunk[2];
            if !(0.0..=2.0).contains(&code) || code.fract() != 0.0 {
                return Err(Error::InvalidVisibilityCode(code as u8));
            }
            keypoints[i] = encode_keypoint(chunk[0], chunk[1], code as u8, &space)?;
        }
        Ok(Pose { keypoints, space })
    }

    pub fn keypoints(&self) -> &[EncodedKeypoint; KEYPOINT_COUNT] {
        &self.keypoints
    }

    pub fn space(&self) -> CoordinateSpace {
        self.space
    }

    pub fn keypoint(&self, index: usize) -> &EncodedKeypoint {
        &self.keypoints[index]
    }
}

/// Number of keypoints with v > 0.
pub fn valid_count(pose: &Pose) -> usize {
    pose.keypoints.iter().filter(|k| k.is_valid()).count()
}

/// Left-right flip of a unit-square pose: x becomes 1 - x and keypoint
/// channels are permuted by [`mirror_index`]. Absent keypoints keep the
/// (0.5, 0.5, 0) placeholder, which is a fixed point of the reflection.
pub fn flip_pose(pose: &Pose) -> Pose {
    assert!(
        pose.space == CoordinateSpace::UnitSquare,
        "flip_pose requires a unit-square pose"
    );
    let mut flipped = [EncodedKeypoint::ABSENT; KEYPOINT_COUNT];
    for (i, out) in flipped.iter_mut().enumerate() {
        let src = &pose.keypoints[mirror_index(i)];
        *out = if src.is_valid() {
            EncodedKeypoint {
                x: 1.0 - src.x,
                y: src.y,
                v: src.v,
            }
        } else {
            *src
        };
    }
    Pose {
        keypoints: flipped,
        space: CoordinateSpace::UnitSquare,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mirror_is_an_involution_with_one_fixed_point() {
        let mut fixed = 0;
        for spec in keypoint_specs() {
            assert_eq!(mirror_index(spec.mirror_index), spec.index);
            if spec.mirror_index == spec.index {
                fixed += 1;
            }
        }
        assert_eq!(fixed, 1);
        assert_eq!(keypoint_specs()[0].name, "nose");
    }

    #[test]
    fn skeleton_has_19_distinct_in_range_limbs() {
        let limbs = SkeletonSpec::coco().limbs();
        assert_eq!(limbs.len(), LIMB_COUNT);
        for &(a, b) in limbs {
            assert!(a < KEYPOINT_COUNT && b < KEYPOINT_COUNT);
            assert_ne!(a, b);
        }
        let mut seen = std::collections::HashSet::new();
        for &(a, b) in limbs {
            assert!(seen.insert((a, b)), "duplicate limb ({a}, {b})");
        }
    }

    #[test]
    fn taxonomy_asset_matches_tables() {
        let doc: serde_json::Value = serde_json::from_str(TAXONOMY_JSON).unwrap();
        let kps = doc["keypoints"].as_array().unwrap();
        assert_eq!(kps.len(), KEYPOINT_COUNT);
        for spec in keypoint_specs() {
            let entry = &kps[spec.index];
            assert_eq!(entry["name"].as_str().unwrap(), spec.name);
            assert_eq!(
                entry["mirror_index"].as_u64().unwrap() as usize,
                spec.mirror_index
            );
        }
        let limbs = doc["limbs"].as_array().unwrap();
        assert_eq!(limbs.len(), LIMB_COUNT);
        for (i, &(a, b)) in SkeletonSpec::coco().limbs().iter().enumerate() {
            assert_eq!(limbs[i][0].as_u64().unwrap() as usize, a);
            assert_eq!(limbs[i][1].as_u64().unwrap() as usize, b);
        }
    }

    #[test]
    fn encode_keypoint_follows_visibility_codes() {
        let space = CoordinateSpace::UnitSquare;
        let visible = encode_keypoint(0.30, 0.40, 2, &space).unwrap();
        assert_eq!(
            visible,
            EncodedKeypoint {
                x: 0.30,
                y: 0.40,
                v: 2.0
            }
        );
        let occluded = encode_keypoint(0.30, 0.40, 1, &space).unwrap();
        assert_eq!(
            occluded,
            EncodedKeypoint {
                x: 0.30,
                y: 0.40,
                v: 1.0
            }
        );
        let absent = encode_keypoint(123.0, -7.0, 0, &space).unwrap();
        assert_eq!(absent, EncodedKeypoint::ABSENT);
    }

    #[test]
    fn encode_keypoint_rejects_out_of_space_and_bad_codes() {
        let space = CoordinateSpace::UnitSquare;
        assert!(matches!(
            encode_keypoint(1.5, 0.5, 2, &space),
            Err(Error::InvalidKeypoint { .. })
        ));
        assert!(matches!(
            encode_keypoint(0.5, 0.5, 3, &space),
            Err(Error::InvalidVisibilityCode(3))
        ));
        let pixel = CoordinateSpace::Pixel {
            width: 100.0,
            height: 50.0,
        };
        assert!(encode_keypoint(100.0, 50.0, 2, &pixel).is_ok());
        assert!(encode_keypoint(100.1, 50.0, 2, &pixel).is_err());
    }

    #[test]
    fn encode_keypoint_is_idempotent_on_encoded_triples() {
        let space = CoordinateSpace::UnitSquare;
        for (x, y, code) in [(0.3, 0.4, 2u8), (0.9, 0.1, 1), (0.5, 0.5, 0)] {
            let once = encode_keypoint(x, y, code, &space).unwrap();
            let twice = encode_keypoint(once.x, once.y, once.v as u8, &space).unwrap();
            assert_eq!(once, twice);
        }
    }

    fn pose_with_valid(n: usize) -> Pose {
        let mut kps = [EncodedKeypoint::ABSENT; KEYPOINT_COUNT];
        for (i, kp) in kps.iter_mut().enumerate().take(n) {
            *kp = EncodedKeypoint {
                x: 0.1 + 0.04 * i as f64,
                y: 0.2 + 0.03 * i as f64,
                v: 2.0,
            };
        }
        Pose::new(kps, CoordinateSpace::UnitSquare).unwrap()
    }

    #[test]
    fn valid_count_counts_positive_visibility() {
        assert_eq!(valid_count(&pose_with_valid(0)), 0);
        assert_eq!(valid_count(&pose_with_valid(17)), 17);
        assert_eq!(valid_count(&pose_with_valid(9)), 9);
    }

    #[test]
    fn flip_moves_left_shoulder_to_right_channel() {
        let mut kps = [EncodedKeypoint::ABSENT; KEYPOINT_COUNT];
        kps[5] = EncodedKeypoint {
            x: 0.2,
            y: 0.3,
            v: 2.0,
        }; // left_shoulder
        let pose = Pose::new(kps, CoordinateSpace::UnitSquare).unwrap();
        let flipped = flip_pose(&pose);
        assert_eq!(
            *flipped.keypoint(6),
            EncodedKeypoint {
                x: 0.8,
                y: 0.3,
                v: 2.0
            }
        );
        assert!(!flipped.keypoint(5).is_valid());
    }

    #[test]
    fn flip_keeps_nose_on_axis() {
        let mut kps = [EncodedKeypoint::ABSENT; KEYPOINT_COUNT];
        kps[0] = EncodedKeypoint {
            x: 0.5,
            y: 0.1,
            v: 2.0,
        };
        let pose = Pose::new(kps, CoordinateSpace::UnitSquare).unwrap();
        let flipped = flip_pose(&pose);
        assert_eq!(
            *flipped.keypoint(0),
            EncodedKeypoint {
                x: 0.5,
                y: 0.1,
                v: 2.0
            }
        );
    }

    proptest! {
        #[test]
        fn flip_is_involution_preserving_visibility(raw in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0, 0u8..=2), KEYPOINT_COUNT)) {
            let mut kps = [EncodedKeypoint::ABSENT; KEYPOINT_COUNT];
            for (i, &(x, y, code)) in raw.iter().enumerate() {
                kps[i] = encode_keypoint(x, y, code, &CoordinateSpace::UnitSquare).unwrap();
            }
            let pose = Pose::new(kps, CoordinateSpace::UnitSquare).unwrap();
            let back = flip_pose(&flip_pose(&pose));
            for i in 0..KEYPOINT_COUNT {
                prop_assert!((back.keypoint(i).x - pose.keypoint(i).x).abs() < 1e-12);
                prop_assert!((back.keypoint(i).y - pose.keypoint(i).y).abs() < 1e-12);
                prop_assert_eq!(back.keypoint(i).v, pose.keypoint(i).v);
            }
            prop_assert_eq!(valid_count(&flip_pose(&pose)), valid_count(&pose));

            // The multiset of visibility values is flip-invariant.
            let mut vs: Vec<u8> = pose.keypoints().iter().map(|k| k.v as u8).collect();
            let mut fs: Vec<u8> = flip_pose(&pose).keypoints().iter().map(|k| k.v as u8).collect();
            vs.sort_unstable();
            fs.sort_unstable();
            prop_assert_eq!(vs, fs);
        }
    }
}
