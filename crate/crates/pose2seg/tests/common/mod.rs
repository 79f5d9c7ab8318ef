//! Shared fixtures for the integration suites: a synthetic two-person scene
//! with poses and thick stick-figure ground-truth masks.

#![allow(dead_code)]

use pose2seg::dataset::{encode_rle, Rle};
use pose2seg::pose::{SkeletonSpec, KEYPOINT_COUNT};
use pose2seg::raster::BinaryMask;
use serde_json::{json, Value};

/// A standing full-body joint layout in a unit body frame.
pub fn stock_shape() -> [(f64, f64); KEYPOINT_COUNT] {
    [
        (0.50, 0.04), // nose
        (0.46, 0.02), // left_eye
        (0.54, 0.02), // right_eye
        (0.42, 0.04), // left_ear
        (0.58, 0.04), // right_ear
        (0.35, 0.20), // left_shoulder
        (0.65, 0.20), // right_shoulder
        (0.28, 0.36), // left_elbow
        (0.72, 0.36), // right_elbow
        (0.25, 0.52), // left_wrist
        (0.75, 0.52), // right_wrist
        (0.40, 0.52), // left_hip
        (0.60, 0.52), // right_hip
        (0.38, 0.74), // left_knee
        (0.62, 0.74), // right_knee
        (0.37, 0.96), // left_ankle
        (0.63, 0.96), // right_ankle
    ]
}

/// The stock shape scaled into a person box at `origin` with size `(w, h)`.
pub fn person_points(origin: (f64, f64), size: (f64, f64)) -> Vec<(f64, f64)> {
    stock_shape()
        .iter()
        .map(|&(x, y)| (origin.0 + x * size.0, origin.1 + y * size.1))
        .collect()
}

/// Flat COCO keypoints array with every joint marked visible.
pub fn keypoints_flat(points: &[(f64, f64)]) -> Vec<f64> {
    points.iter().flat_map(|&(x, y)| [x, y, 2.0]).collect()
}

fn stamp_capsule(mask: &mut BinaryMask, a: (f64, f64), b: (f64, f64), radius: f64) {
    let (w, h) = (mask.width(), mask.height());
    let x_min = (a.0.min(b.0) - radius).floor().max(0.0) as usize;
    let x_max = (a.0.max(b.0) + radius).ceil().min(w as f64 - 1.0) as usize;
    let y_min = (a.1.min(b.1) - radius).floor().max(0.0) as usize;
    let y_max = (a.1.max(b.1) + radius).ceil().min(h as f64 - 1.0) as usize;
    let dx = b.0 - a.0;
    let dy = b.1 - a.1;
    let len2 = dx * dx + dy * dy;
    for y in y_min..=y_max {
        for x in x_min..=x_max {
            let px = x as f64 - a.0;
            let py = y as f64 - a.1;
            let t = if len2 > 0.0 {
                ((px * dx + py * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let cx = px - t * dx;
            let cy = py - t * dy;
            if cx * cx + cy * cy <= radius * radius {
                mask.set(x, y, true);
            }
        }
    }
}

/// Thick stick-figure silhouette: capsules along every limb plus a head disk.
pub fn stick_silhouette(
    width: usize,
    height: usize,
    points: &[(f64, f64)],
    radius: f64,
) -> BinaryMask {
    let mut mask = BinaryMask::zeros(width, height);
    for &(a, b) in SkeletonSpec::coco().limbs() {
        stamp_capsule(&mut mask, points[a], points[b], radius);
    }
    // head disk around the nose
    stamp_capsule(&mut mask, points[0], points[0], radius * 1.6);
    mask
}

fn rle_json(rle: &Rle) -> Value {
    json!({ "size": [rle.height, rle.width], "counts": rle.counts })
}

/// A single-image, two-person COCO document with full poses and silhouette
/// masks. `mask_radius_factor` scales the silhouette thickness relative to
/// person height.
pub fn two_person_scene(mask_radius_factor: f64) -> Value {
    let (img_w, img_h) = (160usize, 120usize);
    let persons = [((20.0, 10.0), (52.0, 100.0)), ((88.0, 14.0), (48.0, 92.0))];
    let mut annotations = Vec::new();
    for (i, &(origin, size)) in persons.iter().enumerate() {
        let points = person_points(origin, size);
        let mask = stick_silhouette(img_w, img_h, &points, mask_radius_factor * size.1);
        let area = mask.area() as f64;
        annotations.push(json!({
            "id": i as u64 + 1,
            "image_id": 1,
            "category_id": 1,
            "bbox": [origin.0, origin.1, size.0, size.1],
            "area": area,
            "iscrowd": 0,
            "keypoints": keypoints_flat(&points),
            "segmentation": rle_json(&encode_rle(&mask)),
        }));
    }
    json!({
        "images": [{"id": 1, "width": img_w, "height": img_h, "file_name": "scene.png"}],
        "annotations": annotations,
        "categories": [{"id": 1, "name": "person"}],
    })
}
