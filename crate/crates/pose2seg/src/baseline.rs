//! Non-neural stand-in segmenter (thickened skeleton support) and the
//! receptive-field analyzer for stacked convolution / residual-unit layers.

use crate::pose::{KEYPOINT_COUNT, LIMB_COUNT};
use crate::raster::Raster;
use crate::skeleton::SkeletonFeatureMap;

/// Default dilation radius of the baseline segmenter at a 64-px window.
pub const DEFAULT_DILATION_RADIUS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ResidualUnit,
    Upsample,
}

/// One layer of a segmentation head for receptive-field analysis. For
/// residual units the stride applies to the first expanded convolution; for
/// upsample layers the stride is the upsampling factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kernel: u32,
    pub stride: u32,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn conv(kernel: u32, stride: u32) -> Self {
        assert!(kernel >= 1 && stride >= 1, "kernel and stride must be >= 1");
        LayerSpec {
            kernel,
            stride,
            kind: LayerKind::Conv,
        }
    }

    pub fn residual_unit() -> Self {
        LayerSpec {
            kernel: 3,
            stride: 1,
            kind: LayerKind::ResidualUnit,
        }
    }

    pub fn upsample(factor: u32) -> Self {
        assert!(factor >= 1, "upsampling factor must be >= 1");
        LayerSpec {
            kernel: 1,
            stride: factor,
            kind: LayerKind::Upsample,
        }
    }
}

/// The segmentation head layout analyzed in the depth ablation: a 7x7
/// stride-2 stem followed by `residual_units` units.
pub fn seg_module_layers(residual_units: usize) -> Vec<LayerSpec> {
    let mut layers = vec![LayerSpec::conv(7, 2)];
    layers.extend(std::iter::repeat_n(
        LayerSpec::residual_unit(),
        residual_units,
    ));
    layers
}

/// Receptive field in input pixels of a stacked layer list, by the standard
/// recursion: each convolution grows the field by (k - 1) * jump and
/// multiplies the jump by its stride. Residual units expand to
/// `residual_conv_count` convolutions of `residual_kernel` (stride on the
/// first); upsampling divides the jump.
pub fn receptive_field(
    layers: &[LayerSpec],
    residual_conv_count: u32,
    residual_kernel: u32,
) -> f64 {
    let mut rf = 1.0f64;
    let mut jump = 1.0f64;
    for layer in layers {
        match layer.kind {
            LayerKind::Conv => {
                rf += (layer.kernel as f64 - 1.0) * jump;
                jump *= layer.stride as f64;
            }
            LayerKind::ResidualUnit => {
                for i in 0..residual_conv_count {
                    rf += (residual_kernel as f64 - 1.0) * jump;
                    if i == 0 {
                        jump *= layer.stride as f64;
                    }
                }
            }
            LayerKind::Upsample => {
                jump /= layer.stride as f64;
            }
        }
    }
    rf
}

/// Segment by geometry alone: the union of limb-field support and confidence
/// above 0.5, dilated by a disk of `radius` pixels. Output is a 1-channel
/// probability raster with values in {0, 1}.
pub fn baseline_segment(features: &SkeletonFeatureMap, radius: u32) -> Raster {
    let s = features.size();
    let raster = features.raster();
    let mut support = vec![false; s * s];
    for j in 0..KEYPOINT_COUNT {
        for (idx, &v) in raster.channel(j).iter().enumerate() {
            if v >= 0.5 {
                support[idx] = true;
            }
        }
    }
    for limb in 0..LIMB_COUNT {
        let cx = raster.channel(KEYPOINT_COUNT + 2 * limb);
        let cy = raster.channel(KEYPOINT_COUNT + 2 * limb + 1);
        for idx in 0..s * s {
            if cx[idx] != 0.0 || cy[idx] != 0.0 {
                support[idx] = true;
            }
        }
    }

    let mut out = Raster::zeros(1, s, s);
    let r = radius as i64;
    let r2 = r * r;
    for y in 0..s as i64 {
        for x in 0..s as i64 {
            if !support[(y * s as i64 + x) as usize] {
                continue;
            }
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx * dx + dy * dy > r2 {
                        continue;
                    }
                    let nx = x + dx;
                    let ny = y + dy;
                    if nx >= 0 && ny >= 0 && nx < s as i64 && ny < s as i64 {
                        out.set(0, ny as usize, nx as usize, 1.0);
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{CoordinateSpace, EncodedKeypoint, Pose};
    use crate::skeleton::skeleton_features;

    #[test]
    fn receptive_field_single_conv() {
        assert_eq!(receptive_field(&[LayerSpec::conv(3, 1)], 1, 3), 3.0);
    }

    #[test]
    fn receptive_field_stem_plus_one_conv() {
        // 7x7 stride-2 then 3x3: 7 + 2*2 = 11.
        let layers = [LayerSpec::conv(7, 2), LayerSpec::conv(3, 1)];
        assert_eq!(receptive_field(&layers, 1, 3), 11.0);
    }

    #[test]
    fn receptive_field_monotone_in_depth_and_kernel() {
        let mut last = 0.0;
        for units in [5, 10, 15, 20] {
            let rf = receptive_field(&seg_module_layers(units), 1, 3);
            assert!(rf > last);
            last = rf;
        }
        let small = receptive_field(&[LayerSpec::conv(3, 1)], 1, 3);
        let big = receptive_field(&[LayerSpec::conv(5, 1)], 1, 3);
        assert!(big > small);
    }

    #[test]
    fn upsample_shrinks_jump() {
        let layers = [
            LayerSpec::conv(7, 2),
            LayerSpec::upsample(2),
            LayerSpec::conv(3, 1),
        ];
        // After upsampling the jump is back to 1, so the 3x3 adds 2.
        assert_eq!(receptive_field(&layers, 1, 3), 9.0);
    }

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
    fn empty_features_give_empty_mask() {
        let features = skeleton_features(&window_pose(&[], 64), 64);
        let mask = baseline_segment(&features, DEFAULT_DILATION_RADIUS);
        assert!(mask.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stick_figure_overlaps_hand_drawn_silhouette() {
        use crate::dataset::mask_iou;
        use crate::raster::BinaryMask;

        // Full standing figure in the 64px window.
        let joints: [(usize, f64, f64); KEYPOINT_COUNT] = [
            (0, 32.0, 6.0),
            (1, 30.0, 4.0),
            (2, 34.0, 4.0),
            (3, 28.0, 6.0),
            (4, 36.0, 6.0),
            (5, 24.0, 16.0),
            (6, 40.0, 16.0),
            (7, 20.0, 26.0),
            (8, 44.0, 26.0),
            (9, 18.0, 36.0),
            (10, 46.0, 36.0),
            (11, 27.0, 36.0),
            (12, 37.0, 36.0),
            (13, 26.0, 48.0),
            (14, 38.0, 48.0),
            (15, 25.0, 60.0),
            (16, 39.0, 60.0),
        ];
        let pose = window_pose(&joints, 64);
        let features = skeleton_features(&pose, 64);
        let predicted = baseline_segment(&features, DEFAULT_DILATION_RADIUS);

        // Hand-drawn silhouette: capsules of radius 4 along every limb.
        let mut silhouette = BinaryMask::zeros(64, 64);
        let radius = 4.0f64;
        for &(a, b) in crate::pose::SkeletonSpec::coco().limbs() {
            let pa = (joints[a].1, joints[a].2);
            let pb = (joints[b].1, joints[b].2);
            let dx = pb.0 - pa.0;
            let dy = pb.1 - pa.1;
            let len2 = dx * dx + dy * dy;
            for y in 0..64 {
                for x in 0..64 {
                    let px = x as f64 - pa.0;
                    let py = y as f64 - pa.1;
                    let t = if len2 > 0.0 {
                        ((px * dx + py * dy) / len2).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    let cx = px - t * dx;
                    let cy = py - t * dy;
                    if cx * cx + cy * cy <= radius * radius {
                        silhouette.set(x, y, true);
                    }
                }
            }
        }

        let mut predicted_mask = BinaryMask::zeros(64, 64);
        for y in 0..64 {
            for x in 0..64 {
                predicted_mask.set(x, y, predicted.get(0, y, x) >= 0.5);
            }
        }
        let iou = mask_iou(&predicted_mask, &silhouette).unwrap();
        assert!(iou >= 0.3, "stick-figure IoU {iou}");
    }

    #[test]
    fn horizontal_limb_becomes_a_bar() {
        let features = skeleton_features(&window_pose(&[(5, 10.0, 32.0), (6, 50.0, 32.0)], 64), 64);
        let mask = baseline_segment(&features, DEFAULT_DILATION_RADIUS);
        // On the limb axis the mask is set across the span.
        for x in 12..48 {
            assert_eq!(mask.get(0, 32, x), 1.0, "x={x}");
        }
        // Far off-axis stays empty.
        for x in 0..64 {
            assert_eq!(mask.get(0, 10, x), 0.0);
        }
        // Values are a probability raster in [0, 1].
        assert!(mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}
