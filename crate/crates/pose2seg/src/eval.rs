//! Mask average precision with size- and occlusion-stratified bins, plus the
//! keypoint-derived bounding box used by the box-alignment ablation.
//!
//! Matching is the standard greedy score-order assignment; out-of-bin and
//! crowd ground truths act as ignore regions: predictions matched to them are
//! excluded from the precision/recall accumulation rather than penalized.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Severity;
use crate::error::{Error, Result};
use crate::geom::Rect;
use crate::pose::{CoordinateSpace, Pose};
use crate::raster::BinaryMask;

/// Area bounds of the size bins, in pixels squared.
pub const SMALL_AREA_MAX: f64 = 32.0 * 32.0;
pub const MEDIUM_AREA_MAX: f64 = 96.0 * 96.0;

/// The standard mask-AP IoU threshold grid 0.50:0.05:0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Number of recall samples in the interpolated precision grid.
pub const RECALL_SAMPLES: usize = 101;

#[derive(Debug, Clone)]
pub struct Prediction {
    pub id: u64,
    pub image_id: u64,
    pub mask: BinaryMask,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct GtInstance {
    pub id: u64,
    pub image_id: u64,
    pub mask: BinaryMask,
    pub area: f64,
    pub iscrowd: bool,
}

/// How ground truths are stratified into report bins.
#[derive(Debug, Clone)]
pub enum Binning {
    /// Single overall bin.
    None,
    /// Medium/Large area bins; `exclude_small` additionally ignores
    /// small ground truths (and small unmatched predictions) everywhere.
    Size { exclude_small: bool },
    /// Moderate/Hard occlusion bins from per-gt severity.
    Occlusion(HashMap<u64, Severity>),
}

/// Outcome of greedy matching at one IoU threshold.
#[derive(Debug, Clone, Default)]
pub struct Matching {
    /// (prediction id, ground truth id, iou) triples.
    pub pairs: Vec<(u64, u64, f64)>,
    pub unmatched_predictions: Vec<u64>,
    pub unmatched_gts: Vec<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PrCurve {
    pub threshold: f64,
    /// Recall and precision at each accepted prediction, in rank order.
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    /// Interpolated precision on the 101-point recall grid.
    pub interpolated: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BinAp {
    pub name: String,
    pub label: String,
    /// `None` when the bin holds no ground truths (undefined, not zero).
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ApReport {
    pub schema_version: u32,
    pub thresholds: Vec<f64>,
    /// Mean AP over the thresholds, `None` when undefined.
    pub overall: Option<f64>,
    pub bins: Vec<BinAp>,
    pub curves: Vec<PrCurve>,
}

impl ApReport {
    /// Text table with one column per AP value.
    pub fn to_table(&self) -> String {
        let mut header = String::from("AP");
        let mut values = vec![format_ap(self.overall)];
        for bin in &self.bins {
            header.push_str(&format!("\t{}", bin.label));
            values.push(format_ap(bin.ap));
        }
        format!("{header}\n{}\n", values.join("\t"))
    }
}

fn format_ap(ap: Option<f64>) -> String {
    match ap {
        Some(v) => format!("{v:.3}"),
        None => "n/a".into(),
    }
}

/// Rank order: descending score, ascending id on ties.
fn rank_order(a_score: f64, a_id: u64, b_score: f64, b_id: u64) -> std::cmp::Ordering {
    b_score.total_cmp(&a_score).then(a_id.cmp(&b_id))
}

/// Pairwise mask IoU between same-image predictions and ground truths.
fn iou_matrix(preds: &[&Prediction], gts: &[&GtInstance]) -> Result<Vec<Vec<f64>>> {
    preds
        .par_iter()
        .map(|p| {
            gts.iter()
                .map(|g| crate::dataset::mask_iou(&p.mask, &g.mask))
                .collect()
        })
        .collect()
}

/// Greedy per-image matching core. `gt_ignored` marks ignore regions:
/// non-ignored ground truths are always preferred, and a prediction whose best
/// match is ignored becomes ignored itself. Returns, per prediction (in the
/// given order): matched gt index and whether the prediction is ignored.
fn greedy_match(
    iou: &[Vec<f64>],
    order: &[usize],
    gt_ids: &[u64],
    gt_ignored: &[bool],
    threshold: f64,
) -> Vec<(Option<usize>, bool)> {
    let mut gt_taken = vec![false; gt_ids.len()];
    let mut out = vec![(None, false); order.len()];
    for (rank, &pi) in order.iter().enumerate() {
        let mut best: Option<usize> = None;
        let mut best_iou = threshold;
        for gi in 0..gt_ids.len() {
            if gt_taken[gi] {
                continue;
            }
            let value = iou[pi][gi];
            if value < threshold {
                continue;
            }
            let better = match best {
                None => true,
                Some(prev) => {
                    // A non-ignored candidate always beats an ignored one.
                    match (gt_ignored[prev], gt_ignored[gi]) {
                        (true, false) => value >= threshold,
                        (false, true) => false,
                        _ => value > best_iou || (value == best_iou && gt_ids[gi] < gt_ids[prev]),
                    }
                }
            };
            if better {
                best = Some(gi);
                best_iou = value;
            }
        }
        if let Some(gi) = best {
            gt_taken[gi] = true;
            out[rank] = (Some(gi), gt_ignored[gi]);
        }
    }
    out
}

/// Greedy one-to-one matching of predictions to ground truths at a single IoU
/// threshold: predictions in descending score order (ties by id) each take the
/// unmatched ground truth with the highest IoU at or above the threshold
/// (ties by lowest gt id).
pub fn match_instances(
    preds: &[Prediction],
    gts: &[GtInstance],
    iou_threshold: f64,
) -> Result<Matching> {
    let mut result = Matching::default();
    let image_ids: std::collections::BTreeSet<u64> = preds
        .iter()
        .map(|p| p.image_id)
        .chain(gts.iter().map(|g| g.image_id))
        .collect();
    for image_id in image_ids {
        let preds_img: Vec<&Prediction> = preds.iter().filter(|p| p.image_id == image_id).collect();
        let mut gts_img: Vec<&GtInstance> = gts.iter().filter(|g| g.image_id == image_id).collect();
        gts_img.sort_by_key(|g| g.id);

        let iou = iou_matrix(&preds_img, &gts_img)?;
        let mut order: Vec<usize> = (0..preds_img.len()).collect();
        order.sort_by(|&a, &b| {
            rank_order(
                preds_img[a].score,
                preds_img[a].id,
                preds_img[b].score,
                preds_img[b].id,
            )
        });
        let gt_ids: Vec<u64> = gts_img.iter().map(|g| g.id).collect();
        let ignored = vec![false; gts_img.len()];
        let matches = greedy_match(&iou, &order, &gt_ids, &ignored, iou_threshold);

        let mut gt_matched = vec![false; gts_img.len()];
        for (rank, &pi) in order.iter().enumerate() {
            match matches[rank].0 {
                Some(gi) => {
                    gt_matched[gi] = true;
                    result
                        .pairs
                        .push((preds_img[pi].id, gt_ids[gi], iou[pi][gi]));
                }
                None => result.unmatched_predictions.push(preds_img[pi].id),
            }
        }
        for (gi, &taken) in gt_matched.iter().enumerate() {
            if !taken {
                result.unmatched_gts.push(gt_ids[gi]);
            }
        }
    }
    Ok(result)
}

/// One report bin's gt filter and optional prediction area gate.
struct BinDef {
    name: &'static str,
    label: &'static str,
    gt_in_bin: Box<dyn Fn(&GtInstance) -> bool + Sync>,
    dt_area_range: Option<(f64, f64)>,
}

fn bin_defs(binning: &Binning) -> Vec<BinDef> {
    match binning {
        Binning::None => vec![BinDef {
            name: "all",
            label: "AP",
            gt_in_bin: Box::new(|_| true),
            dt_area_range: None,
        }],
        Binning::Size { exclude_small } => {
            let small_floor = if *exclude_small { SMALL_AREA_MAX } else { 0.0 };
            vec![
                BinDef {
                    name: "all",
                    label: "AP",
                    gt_in_bin: Box::new(move |g| g.area >= small_floor),
                    dt_area_range: Some((small_floor, f64::INFINITY)),
                },
                BinDef {
                    name: "medium",
                    label: "AP_M",
                    gt_in_bin: Box::new(|g| g.area >= SMALL_AREA_MAX && g.area <= MEDIUM_AREA_MAX),
                    dt_area_range: Some((SMALL_AREA_MAX, MEDIUM_AREA_MAX)),
                },
                BinDef {
                    name: "large",
                    label: "AP_L",
                    gt_in_bin: Box::new(|g| g.area > MEDIUM_AREA_MAX),
                    dt_area_range: Some((MEDIUM_AREA_MAX, f64::INFINITY)),
                },
            ]
        }
        Binning::Occlusion(severity) => {
            let moderate = severity.clone();
            let hard = severity.clone();
            vec![
                BinDef {
                    name: "all",
                    label: "AP",
                    gt_in_bin: Box::new(|_| true),
                    dt_area_range: None,
                },
                BinDef {
                    name: "moderate",
                    label: "AP_M",
                    gt_in_bin: Box::new(move |g| moderate.get(&g.id) == Some(&Severity::Moderate)),
                    dt_area_range: None,
                },
                BinDef {
                    name: "hard",
                    label: "AP_H",
                    gt_in_bin: Box::new(move |g| hard.get(&g.id) == Some(&Severity::Hard)),
                    dt_area_range: None,
                },
            ]
        }
    }
}

/// Per-prediction record accumulated across images for one (bin, threshold).
struct DtRecord {
    score: f64,
    id: u64,
    matched: bool,
    ignored: bool,
}

fn ap_for_bin(
    preds_by_image: &BTreeMap<u64, Vec<&Prediction>>,
    gts_by_image: &BTreeMap<u64, Vec<&GtInstance>>,
    ious: &HashMap<u64, Vec<Vec<f64>>>,
    bin: &BinDef,
    thresholds: &[f64],
) -> (Option<f64>, Vec<PrCurve>) {
    let mut active_gts = 0usize;
    for gts in gts_by_image.values() {
        active_gts += gts
            .iter()
            .filter(|g| !g.iscrowd && (bin.gt_in_bin)(g))
            .count();
    }
    if active_gts == 0 {
        return (None, Vec::new());
    }

    let mut per_threshold_ap = Vec::with_capacity(thresholds.len());
    let mut curves = Vec::with_capacity(thresholds.len());
    for &threshold in thresholds {
        let mut records: Vec<DtRecord> = Vec::new();
        for (image_id, preds_img) in preds_by_image {
            let empty = Vec::new();
            let gts_img = gts_by_image.get(image_id).unwrap_or(&empty);
            let iou = &ious[image_id];

            // Ignored gts sort after active ones by construction of the
            // matcher's preference; ordering here is by id for tie-breaks.
            let gt_ids: Vec<u64> = gts_img.iter().map(|g| g.id).collect();
            let gt_ignored: Vec<bool> = gts_img
                .iter()
                .map(|g| g.iscrowd || !(bin.gt_in_bin)(g))
                .collect();
            let mut order: Vec<usize> = (0..preds_img.len()).collect();
            order.sort_by(|&a, &b| {
                rank_order(
                    preds_img[a].score,
                    preds_img[a].id,
                    preds_img[b].score,
                    preds_img[b].id,
                )
            });
            let matches = greedy_match(iou, &order, &gt_ids, &gt_ignored, threshold);
            for (rank, &pi) in order.iter().enumerate() {
                let pred = preds_img[pi];
                let (matched_gt, matched_ignored) = matches[rank];
                let ignored = match matched_gt {
                    Some(_) => matched_ignored,
                    None => match bin.dt_area_range {
                        Some((lo, hi)) => {
                            let area = pred.mask.area() as f64;
                            area < lo || area > hi
                        }
                        None => false,
                    },
                };
                records.push(DtRecord {
                    score: pred.score,
                    id: pred.id,
                    matched: matched_gt.is_some() && !matched_ignored,
                    ignored,
                });
            }
        }

        records.sort_by(|a, b| rank_order(a.score, a.id, b.score, b.id));
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut recall = Vec::new();
        let mut precision = Vec::new();
        for rec in &records {
            if rec.ignored {
                continue;
            }
            if rec.matched {
                tp += 1;
            } else {
                fp += 1;
            }
            recall.push(tp as f64 / active_gts as f64);
            precision.push(tp as f64 / (tp + fp) as f64);
        }

        // Right-to-left running max, then sample the 101-point recall grid.
        let mut interp = precision.clone();
        for i in (0..interp.len().saturating_sub(1)).rev() {
            if interp[i] < interp[i + 1] {
                interp[i] = interp[i + 1];
            }
        }
        let mut grid = vec![0.0f64; RECALL_SAMPLES];
        let mut idx = 0usize;
        for (g, slot) in grid.iter_mut().enumerate() {
            let r = g as f64 / (RECALL_SAMPLES - 1) as f64;
            while idx < recall.len() && recall[idx] < r {
                idx += 1;
            }
            if idx < recall.len() {
                *slot = interp[idx];
            }
        }
        per_threshold_ap.push(grid.iter().sum::<f64>() / RECALL_SAMPLES as f64);
        curves.push(PrCurve {
            threshold,
            recall,
            precision,
            interpolated: grid,
        });
    }
    let ap = per_threshold_ap.iter().sum::<f64>() / per_threshold_ap.len() as f64;
    (Some(ap), curves)
}

/// COCO-style average precision over the given IoU thresholds, overall and
/// per bin. Returns an undefined (None) AP rather than zero when a bin holds
/// no ground truths; errors when there are no ground truths at all.
pub fn average_precision(
    preds: &[Prediction],
    gts: &[GtInstance],
    thresholds: &[f64],
    binning: &Binning,
) -> Result<ApReport> {
    if gts.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut preds_by_image: BTreeMap<u64, Vec<&Prediction>> = BTreeMap::new();
    for p in preds {
        preds_by_image.entry(p.image_id).or_default().push(p);
    }
    let mut gts_by_image: BTreeMap<u64, Vec<&GtInstance>> = BTreeMap::new();
    for g in gts {
        gts_by_image.entry(g.image_id).or_default().push(g);
    }
    for gts_img in gts_by_image.values_mut() {
        gts_img.sort_by_key(|g| g.id);
    }
    // Every image with predictions needs a (possibly empty) gt list.
    for image_id in preds_by_image.keys() {
        gts_by_image.entry(*image_id).or_default();
    }

    let ious: HashMap<u64, Vec<Vec<f64>>> = preds_by_image
        .iter()
        .map(|(image_id, preds_img)| {
            let empty = Vec::new();
            let gts_img = gts_by_image.get(image_id).unwrap_or(&empty);
            Ok((*image_id, iou_matrix(preds_img, gts_img)?))
        })
        .collect::<Result<_>>()?;

    let defs = bin_defs(binning);
    let mut overall = None;
    let mut bins = Vec::new();
    let mut curves = Vec::new();
    for (i, def) in defs.iter().enumerate() {
        let (ap, bin_curves) = ap_for_bin(&preds_by_image, &gts_by_image, &ious, def, thresholds);
        if i == 0 {
            overall = ap;
            curves = bin_curves;
        } else {
            bins.push(BinAp {
                name: def.name.to_string(),
                label: def.label.to_string(),
                ap,
            });
        }
    }
    Ok(ApReport {
        schema_version: 1,
        thresholds: thresholds.to_vec(),
        overall,
        bins,
        curves,
    })
}

/// Tight bounding box over the valid keypoints, grown by `expand` (total
/// fractional growth, split evenly per side) and clamped to the pose's pixel
/// space.
pub fn keypoints_to_bbox(pose: &Pose, expand: f64) -> Result<Rect> {
    let valid: Vec<(f64, f64)> = pose
        .keypoints()
        .iter()
        .filter(|kp| kp.is_valid())
        .map(|kp| (kp.x, kp.y))
        .collect();
    if valid.is_empty() {
        return Err(Error::NoValidKeypoints);
    }
    let min_x = valid.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max_x = valid.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let min_y = valid.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max_y = valid.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let w = max_x - min_x;
    let h = max_y - min_y;
    let grown = Rect::new(
        min_x - w * expand / 2.0,
        min_y - h * expand / 2.0,
        w * (1.0 + expand),
        h * (1.0 + expand),
    );
    Ok(match pose.space() {
        CoordinateSpace::Pixel { width, height } => grown.clamped(width, height),
        CoordinateSpace::UnitSquare => grown.clamped(1.0, 1.0),
    })
}

/// The ablation sweep grid of bbox expansion factors, 30% through 100%.
pub fn bbox_expand_sweep() -> Vec<f64> {
    (3..=10).map(|i| i as f64 / 10.0).collect()
}
