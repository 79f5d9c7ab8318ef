//! Skeleton feature rasterization in the aligned window: 17 per-joint
//! Gaussian confidence maps plus 19 two-channel limb vector fields, 55
//! channels total.

use crate::pose::{Pose, SkeletonSpec, KEYPOINT_COUNT, LIMB_COUNT};
use crate::raster::Raster;

/// Channels in a full skeleton feature map: 17 confidence + 38 vector field.
pub const SKELETON_CHANNELS: usize = KEYPOINT_COUNT + 2 * LIMB_COUNT;

/// Rasterization knobs, as window-size fractions turned into pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkeletonConfig {
    /// Gaussian radius of the confidence maps, pixels.
    pub sigma: f64,
    /// Half-width of each limb's support band, pixels.
    pub limb_width: f64,
}

impl SkeletonConfig {
    /// Defaults proportional to the window: sigma 0.06*S, limb width 0.03*S
    /// (about 4 px and 2 px at S = 64).
    pub fn for_size(size: u32) -> Self {
        SkeletonConfig {
            sigma: 0.06 * size as f64,
            limb_width: 0.03 * size as f64,
        }
    }
}

/// 55-channel raster: channels 0-16 are per-joint confidence maps in joint
/// order; channels 17-54 hold two consecutive channels (x then y) per limb in
/// skeleton order.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonFeatureMap {
    raster: Raster,
}

impl SkeletonFeatureMap {
    pub fn raster(&self) -> &Raster {
        &self.raster
    }

    pub fn into_raster(self) -> Raster {
        self.raster
    }

    pub fn size(&self) -> usize {
        self.raster.width()
    }

    pub fn confidence_channel(&self, joint: usize) -> &[f32] {
        self.raster.channel(joint)
    }

    /// The (x, y) channel pair of one limb.
    pub fn paf_channels(&self, limb: usize) -> (&[f32], &[f32]) {
        (
            self.raster.channel(KEYPOINT_COUNT + 2 * limb),
            self.raster.channel(KEYPOINT_COUNT + 2 * limb + 1),
        )
    }
}

/// Per-joint Gaussian confidence maps, `exp(-d^2 / sigma^2)` around each valid
/// joint; channels of absent joints stay zero.
pub fn part_confidence_maps(pose: &Pose, size: u32, sigma: f64) -> Raster {
    let s = size as usize;
    let mut out = Raster::zeros(KEYPOINT_COUNT, s, s);
    let inv_sigma2 = 1.0 / (sigma * sigma);
    for (j, kp) in pose.keypoints().iter().enumerate() {
        if !kp.is_valid() {
            continue;
        }
        let channel = out.channel_mut(j);
        for y in 0..s {
            let dy = y as f64 - kp.y;
            for x in 0..s {
                let dx = x as f64 - kp.x;
                channel[y * s + x] = (-(dx * dx + dy * dy) * inv_sigma2).exp() as f32;
            }
        }
    }
    out
}

/// Limb vector fields: pixels within `limb_width` of a limb's segment
/// (perpendicular distance, longitudinal extent clamped to the segment)
/// receive the limb's unit direction vector. Limbs with an absent endpoint or
/// zero length produce zero channels. Coinciding contributions within one
/// channel pair are averaged and left unnormalized.
pub fn paf_maps(pose: &Pose, skeleton: &SkeletonSpec, size: u32, limb_width: f64) -> Raster {
    let s = size as usize;
    let mut out = Raster::zeros(2 * LIMB_COUNT, s, s);
    let mut counts = vec![0u32; s * s];

    for (limb, &(a, b)) in skeleton.limbs().iter().enumerate() {
        let ka = pose.keypoint(a);
        let kb = pose.keypoint(b);
        if !ka.is_valid() || !kb.is_valid() {
            continue;
        }
        let dx = kb.x - ka.x;
        let dy = kb.y - ka.y;
        let len = (dx * dx + dy * dy).sqrt();
        if len == 0.0 {
            continue;
        }
        let ux = dx / len;
        let uy = dy / len;

        // Bounding box of the support rectangle, clipped to the window.
        let x_min = (ka.x.min(kb.x) - limb_width).floor().max(0.0) as usize;
        let x_max = (ka.x.max(kb.x) + limb_width).ceil().min(s as f64 - 1.0) as usize;
        let y_min = (ka.y.min(kb.y) - limb_width).floor().max(0.0) as usize;
        let y_max = (ka.y.max(kb.y) + limb_width).ceil().min(s as f64 - 1.0) as usize;
        if x_min > x_max || y_min > y_max {
            continue;
        }

        counts.iter_mut().for_each(|c| *c = 0);
        for y in y_min..=y_max {
            for x in x_min..=x_max {
                let px = x as f64 - ka.x;
                let py = y as f64 - ka.y;
                let along = px * ux + py * uy;
                if along < 0.0 || along > len {
                    continue;
                }
                let perp = (px * uy - py * ux).abs();
                if perp > limb_width {
                    continue;
                }
                counts[y * s + x] += 1;
                out.set(2 * limb, y, x, ux as f32);
                out.set(2 * limb + 1, y, x, uy as f32);
            }
        }
        // counts stay at most 1 for a single segment; kept for the averaging
        // contract if a channel ever accumulates several contributions.
        debug_assert!(counts.iter().all(|&c| c <= 1));
    }
    out
}

/// Full skeleton feature map with default knobs for the window size.
pub fn skeleton_features(pose: &Pose, size: u32) -> SkeletonFeatureMap {
    skeleton_features_with(pose, size, &SkeletonConfig::for_size(size))
}

pub fn skeleton_features_with(
    pose: &Pose,
    size: u32,
    config: &SkeletonConfig,
) -> SkeletonFeatureMap {
    let confidence = part_confidence_maps(pose, size, config.sigma);
    let pafs = paf_maps(pose, SkeletonSpec::coco(), size, config.limb_width);
    let s = size as usize;
    let mut data = Vec::with_capacity(SKELETON_CHANNELS * s * s);
    data.extend_from_slice(confidence.data());
    data.extend_from_slice(pafs.data());
    SkeletonFeatureMap {
        raster: Raster::from_data(SKELETON_CHANNELS, s, s, data).expect("channel layout is fixed"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{CoordinateSpace, EncodedKeypoint};
    use approx::assert_relative_eq;

    fn window_pose(points: &[(usize, f64, f64)], size: u32) -> Pose {
        let mut kps = [EncodedKeypoint::ABSENT; KEYPOINT_COUNT];
        for &(j, x, y) in points {
            kps[j] = EncodedKeypoint { x, y, v: 2.0 };
        }
        Pose::new_unchecked(
            kps,
            CoordinateSpace::Pixel {
                width: size as f64,
                height: size as f64,
            },
        )
    }

    #[test]
    fn confidence_peaks_at_joint_and_decays() {
        let pose = window_pose(&[(0, 32.0, 32.0)], 64);
        let maps = part_confidence_maps(&pose, 64, 4.0);
        assert_relative_eq!(maps.get(0, 32, 32) as f64, 1.0);
        // (distance/sigma)^2 = 1 four pixels away.
        assert_relative_eq!(maps.get(0, 32, 36) as f64, (-1.0f64).exp(), epsilon = 1e-6);
        // Absent joints leave all-zero channels.
        assert!(maps.channel(1).iter().all(|&v| v == 0.0));
        // Channels stay within [0, 1].
        assert!(maps.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn confidence_channels_are_independent() {
        let pose = window_pose(&[(0, 10.0, 10.0), (5, 50.0, 50.0)], 64);
        let only_nose = part_confidence_maps(&window_pose(&[(0, 10.0, 10.0)], 64), 64, 4.0);
        let both = part_confidence_maps(&pose, 64, 4.0);
        assert_eq!(both.channel(0), only_nose.channel(0));
    }

    #[test]
    fn paf_horizontal_limb_support() {
        // Limb 7 is (5, 6): left to right shoulder.
        let pose = window_pose(&[(5, 10.0, 32.0), (6, 50.0, 32.0)], 64);
        let maps = paf_maps(&pose, SkeletonSpec::coco(), 64, 2.0);
        let limb = 7usize;
        assert_eq!(maps.get(2 * limb, 32, 30), 1.0);
        assert_eq!(maps.get(2 * limb + 1, 32, 30), 0.0);
        // Four pixels off-axis is outside the width-2 band.
        assert_eq!(maps.get(2 * limb, 36, 30), 0.0);
        assert_eq!(maps.get(2 * limb + 1, 36, 30), 0.0);
        // Beyond the endpoints along the axis is off-support too.
        assert_eq!(maps.get(2 * limb, 32, 7), 0.0);
        assert_eq!(maps.get(2 * limb, 32, 53), 0.0);
    }

    #[test]
    fn paf_missing_endpoint_and_zero_length() {
        let one_end = window_pose(&[(5, 10.0, 32.0)], 64);
        let maps = paf_maps(&one_end, SkeletonSpec::coco(), 64, 2.0);
        assert!(maps.data().iter().all(|&v| v == 0.0));

        let coincident = window_pose(&[(5, 10.0, 32.0), (6, 10.0, 32.0)], 64);
        let maps = paf_maps(&coincident, SkeletonSpec::coco(), 64, 2.0);
        assert!(maps.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn paf_vectors_are_unit_on_support() {
        let pose = window_pose(&[(5, 12.0, 14.0), (6, 43.0, 51.0), (11, 20.0, 60.0)], 64);
        let maps = paf_maps(&pose, SkeletonSpec::coco(), 64, 2.0);
        for limb in 0..LIMB_COUNT {
            for idx in 0..64 * 64 {
                let x = maps.channel(2 * limb)[idx] as f64;
                let y = maps.channel(2 * limb + 1)[idx] as f64;
                let norm = (x * x + y * y).sqrt();
                assert!(
                    norm == 0.0 || (norm - 1.0).abs() < 1e-6,
                    "limb {limb} pixel {idx}: norm {norm}"
                );
            }
        }
    }

    #[test]
    fn feature_map_layout() {
        let empty = window_pose(&[], 32);
        let features = skeleton_features(&empty, 32);
        assert_eq!(features.raster().channels(), SKELETON_CHANNELS);
        assert_eq!(SKELETON_CHANNELS, 55);
        assert!(features.raster().data().iter().all(|&v| v == 0.0));

        // A full pose activates all 17 confidence channels and exactly the
        // limbs whose endpoints are both valid (all of them here).
        let full_points: Vec<(usize, f64, f64)> = (0..KEYPOINT_COUNT)
            .map(|j| (j, 8.0 + (j % 5) as f64 * 10.0, 4.0 + (j / 5) as f64 * 12.0))
            .collect();
        let full = window_pose(&full_points, 64);
        let features = skeleton_features(&full, 64);
        for j in 0..KEYPOINT_COUNT {
            assert!(features.confidence_channel(j).iter().any(|&v| v > 0.9));
        }
        for limb in 0..LIMB_COUNT {
            let (x, y) = features.paf_channels(limb);
            assert!(
                x.iter().chain(y).any(|&v| v != 0.0),
                "limb {limb} has empty channels despite valid endpoints"
            );
        }
    }

    #[test]
    fn channel_support_follows_pose_validity() {
        // Valid joints: nose, shoulders, left elbow. Active limbs are exactly
        // those with both endpoints in that set.
        let valid = [0usize, 5, 6, 7];
        let points: Vec<(usize, f64, f64)> = valid
            .iter()
            .map(|&j| (j, 12.0 + 9.0 * j as f64 % 40.0, 8.0 + 3.0 * j as f64))
            .collect();
        let features = skeleton_features(&window_pose(&points, 64), 64);
        for j in 0..KEYPOINT_COUNT {
            let has_signal = features.confidence_channel(j).iter().any(|&v| v > 0.0);
            assert_eq!(has_signal, valid.contains(&j), "confidence channel {j}");
        }
        for (limb, &(a, b)) in SkeletonSpec::coco().limbs().iter().enumerate() {
            let (x, y) = features.paf_channels(limb);
            let has_signal = x.iter().chain(y).any(|&v| v != 0.0);
            let expected = valid.contains(&a) && valid.contains(&b);
            assert_eq!(has_signal, expected, "limb {limb} ({a},{b})");
        }
    }

    #[test]
    fn translation_equivariance_on_interior() {
        let pose = window_pose(&[(5, 20.0, 20.0), (6, 36.0, 28.0), (0, 28.0, 10.0)], 64);
        let shifted = window_pose(&[(5, 25.0, 23.0), (6, 41.0, 31.0), (0, 33.0, 13.0)], 64);
        let base = skeleton_features(&pose, 64);
        let moved = skeleton_features(&shifted, 64);
        for c in 0..SKELETON_CHANNELS {
            for y in 0..61 {
                for x in 0..59 {
                    assert_eq!(
                        base.raster().get(c, y, x),
                        moved.raster().get(c, y + 3, x + 5),
                        "channel {c} at ({x}, {y})"
                    );
                }
            }
        }
    }
}
