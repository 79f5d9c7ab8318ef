//! Pose-driven alignment: closed-form similarity estimation between pose and
//! template joints (with a left-right flip candidate), template selection by
//! fit score, and the forward/inverse bilinear warps that move image windows
//! and masks between image and aligned frames.

use serde::{Deserialize, Serialize};

use crate::clustering::PoseTemplate;
use crate::error::{Error, Result};
use crate::geom::AffineMat;
use crate::pose::{mirror_index, CoordinateSpace, EncodedKeypoint, Pose, KEYPOINT_COUNT};
use crate::raster::{BinaryMask, Raster};

/// Default side length of the aligned window.
pub const DEFAULT_ALIGN_SIZE: u32 = 64;

/// Default threshold when binarizing inverse-warped masks.
pub const DEFAULT_MASK_THRESHOLD: f64 = 0.5;

/// A resolved alignment: the matrix maps source pixel coordinates into the
/// aligned window. `score = exp(-residual)`; the whole-image fallback carries
/// an infinite residual so its score is the 0 sentinel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignTransform {
    pub matrix: AffineMat,
    pub flipped: bool,
    pub residual: f64,
    pub score: f64,
    /// Index into the template bank; `None` for the whole-image fallback.
    pub template_index: Option<usize>,
}

/// An aligned window raster together with the transform that produced it.
#[derive(Debug, Clone)]
pub struct AlignedWindow {
    pub raster: Raster,
    pub transform: AlignTransform,
    pub image_id: Option<u64>,
}

/// Least-squares similarity transform (rotation, uniform scale, translation)
/// mapping `src` onto `dst`, solved in closed form. Returns the 2x3 matrix and
/// the minimized sum of squared point distances.
pub fn estimate_similarity(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Result<(AffineMat, f64)> {
    if src.len() != dst.len() {
        return Err(Error::DimensionMismatch {
            left: format!("{} source points", src.len()),
            right: format!("{} destination points", dst.len()),
        });
    }
    if src.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: src.len(),
        });
    }
    let n = src.len() as f64;
    let (mut mx, mut my, mut nx, mut ny) = (0.0, 0.0, 0.0, 0.0);
    for (p, q) in src.iter().zip(dst) {
        mx += p[0];
        my += p[1];
        nx += q[0];
        ny += q[1];
    }
    mx /= n;
    my /= n;
    nx /= n;
    ny /= n;

    // Centered second moments: src energy, dot and cross sums.
    let (mut sp, mut dot, mut cross) = (0.0, 0.0, 0.0);
    for (p, q) in src.iter().zip(dst) {
        let px = p[0] - mx;
        let py = p[1] - my;
        let qx = q[0] - nx;
        let qy = q[1] - ny;
        sp += px * px + py * py;
        dot += px * qx + py * qy;
        cross += px * qy - py * qx;
    }
    if sp <= 0.0 {
        return Err(Error::DegenerateConfiguration);
    }

    // The rotation maximizing dot*cos + cross*sin; the scale follows.
    let theta = cross.atan2(dot);
    let gain = (dot * dot + cross * cross).sqrt();
    let scale = gain / sp;
    let (sin, cos) = theta.sin_cos();
    let tx = nx - scale * (cos * mx - sin * my);
    let ty = ny - scale * (sin * mx + cos * my);
    let matrix = AffineMat([
        [scale * cos, -scale * sin, tx],
        [scale * sin, scale * cos, ty],
    ]);
    // Evaluate the objective at the optimum directly; the algebraic shortcut
    // cancels catastrophically for large translations.
    let mut residual = 0.0;
    for (p, q) in src.iter().zip(dst) {
        let (x, y) = matrix.apply(p[0], p[1]);
        residual += (x - q[0]) * (x - q[0]) + (y - q[1]) * (y - q[1]);
    }
    Ok((matrix, residual))
}

/// Joints valid in both the pose and the template, under an optional mirror
/// permutation of the pose channels.
fn common_points(
    pose: &Pose,
    template: &PoseTemplate,
    mirrored: bool,
) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for j in 0..KEYPOINT_COUNT {
        if !template.valid_mask()[j] {
            continue;
        }
        let pose_joint = if mirrored { mirror_index(j) } else { j };
        let kp = pose.keypoint(pose_joint);
        if !kp.is_valid() {
            continue;
        }
        // The mirrored candidate reflects source x about a fixed axis; the
        // axis choice is absorbed by the fitted translation.
        let x = if mirrored { -kp.x } else { kp.x };
        src.push([x, kp.y]);
        dst.push([template.mean()[j][0], template.mean()[j][1]]);
    }
    (src, dst)
}

/// Fit a pose to one template, trying both the direct and the left-right
/// flipped candidate and keeping the smaller residual. Residuals are measured
/// in the template's unit-square frame so scores compare across templates;
/// the returned matrix maps pixels into the S x S window. Returns `None` when
/// fewer than three joints are valid in both pose and template.
pub fn fit_to_template(
    pose: &Pose,
    template: &PoseTemplate,
    target_size: u32,
) -> Option<AlignTransform> {
    let mut best: Option<(AffineMat, f64, bool)> = None;
    for mirrored in [false, true] {
        let (src, dst) = common_points(pose, template, mirrored);
        if src.len() < 3 {
            continue;
        }
        let Ok((unit_matrix, residual)) = estimate_similarity(&src, &dst) else {
            continue;
        };
        let better = match &best {
            Some((_, best_res, _)) => residual < *best_res,
            None => true,
        };
        if better {
            // Fold the source reflection into the matrix, then rescale the
            // output from the unit square to the window.
            let mut m = unit_matrix;
            if mirrored {
                m.0[0][0] = -m.0[0][0];
                m.0[1][0] = -m.0[1][0];
            }
            best = Some((m.scaled(target_size as f64), residual, mirrored));
        }
    }
    best.map(|(matrix, residual, flipped)| AlignTransform {
        matrix,
        flipped,
        residual,
        score: (-residual).exp(),
        template_index: None,
    })
}

/// Fit against every template in the bank and return the best-scoring
/// candidate (ties: lowest template index). When no template shares three
/// valid joints with the pose, falls back to aligning the whole image.
pub fn select_template(pose: &Pose, bank: &[PoseTemplate], target_size: u32) -> AlignTransform {
    let mut best: Option<AlignTransform> = None;
    for (index, template) in bank.iter().enumerate() {
        let Some(mut fit) = fit_to_template(pose, template, target_size) else {
            continue;
        };
        fit.template_index = Some(index);
        let better = match &best {
            Some(current) => fit.score > current.score,
            None => true,
        };
        if better {
            best = Some(fit);
        }
    }
    best.unwrap_or_else(|| {
        let (width, height) = match pose.space() {
            CoordinateSpace::Pixel { width, height } => (width, height),
            CoordinateSpace::UnitSquare => (1.0, 1.0),
        };
        whole_image_fallback(width, height, target_size)
    })
}

/// Similarity mapping the centered square of side max(W, H) onto the S x S
/// window. Carries the 0-score sentinel so it loses to any template fit.
pub fn whole_image_fallback(width: f64, height: f64, target_size: u32) -> AlignTransform {
    let side = width.max(height);
    let scale = target_size as f64 / side;
    let tx = (target_size as f64 - width * scale) / 2.0;
    let ty = (target_size as f64 - height * scale) / 2.0;
    AlignTransform {
        matrix: AffineMat([[scale, 0.0, tx], [0.0, scale, ty]]),
        flipped: false,
        residual: f64::INFINITY,
        score: 0.0,
        template_index: None,
    }
}

/// Box-driven alignment: maps the square RoI of `bbox` (expanded along its
/// shorter side, centered) onto the S x S window. Used by the
/// keypoint-to-bbox alignment ablation; carries the 0-score sentinel since no
/// template fit backs it.
pub fn bbox_align(bbox: &crate::geom::Rect, target_size: u32) -> AlignTransform {
    let square = bbox.expanded_to_square();
    let scale = target_size as f64 / square.w;
    AlignTransform {
        matrix: AffineMat([
            [scale, 0.0, -square.x * scale],
            [0.0, scale, -square.y * scale],
        ]),
        flipped: false,
        residual: f64::INFINITY,
        score: 0.0,
        template_index: None,
    }
}

/// Warp an image into the aligned window: each output pixel samples the
/// source at the inverse-mapped location with bilinear interpolation;
/// out-of-bounds samples are zero.
pub fn warp_window(image: &Raster, transform: &AlignTransform, size: u32) -> Result<Raster> {
    let inverse = transform.matrix.inverse()?;
    let size = size as usize;
    let mut out = Raster::zeros(image.channels(), size, size);
    for c in 0..image.channels() {
        for v in 0..size {
            for u in 0..size {
                let (sx, sy) = inverse.apply(u as f64, v as f64);
                out.set(c, v, u, image.sample_bilinear(c, sx, sy));
            }
        }
    }
    Ok(out)
}

/// Map an aligned-window probability mask back onto the image: each image
/// pixel samples the window at its forward-mapped location, then the result
/// is thresholded. Pixels mapping outside the window come out as zero.
pub fn inverse_warp_mask(
    mask: &Raster,
    transform: &AlignTransform,
    width: u32,
    height: u32,
    threshold: f64,
) -> Result<BinaryMask> {
    if transform.matrix.inverse().is_err() {
        return Err(Error::SingularTransform);
    }
    let mut out = BinaryMask::zeros(width as usize, height as usize);
    for y in 0..height as usize {
        for x in 0..width as usize {
            let (u, v) = transform.matrix.apply(x as f64, y as f64);
            let value = mask.sample_bilinear(0, u, v) as f64;
            if value > threshold {
                out.set(x, y, true);
            }
        }
    }
    Ok(out)
}

/// Apply an alignment to a pose, producing the pose in window coordinates.
/// Flipped alignments permute the joint channels by their mirror index so the
/// aligned pose matches the template's left/right layout.
pub fn transform_pose_to_window(pose: &Pose, transform: &AlignTransform, size: u32) -> Pose {
    let mut keypoints = [EncodedKeypoint::ABSENT; KEYPOINT_COUNT];
    for (j, out) in keypoints.iter_mut().enumerate() {
        let src = if transform.flipped {
            pose.keypoint(mirror_index(j))
        } else {
            pose.keypoint(j)
        };
        if src.is_valid() {
            let (x, y) = transform.matrix.apply(src.x, src.y);
            *out = EncodedKeypoint { x, y, v: src.v };
        }
    }
    Pose::new_unchecked(
        keypoints,
        CoordinateSpace::Pixel {
            width: size as f64,
            height: size as f64,
        },
    )
}
