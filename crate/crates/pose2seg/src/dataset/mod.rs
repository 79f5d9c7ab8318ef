//! Dataset ingestion and occlusion analysis: COCO annotation parsing, mask
//! codecs, pairwise-IoU occlusion records, heavy-occlusion filtering, and
//! reproducible dataset splits.

pub mod coco;
pub mod rle;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::Rect;
use crate::raster::BinaryMask;

pub use coco::{
    parse_annotations, parse_annotations_file, parse_segmentation, to_coco_json, CocoDataset,
    ImageInfo, InstanceAnnotation, MalformedRecord,
};
pub use rle::{
    compress_rle, decode_mask, decode_rle, decompress_rle, encode_rle, rasterize_polygons,
    MaskSource, Rle,
};

/// Heavy occlusion starts strictly above this MaxIoU.
pub const HEAVY_OCCLUSION_THRESHOLD: f64 = 0.5;

/// Boundary between the moderate and hard occlusion bins.
pub const HARD_OCCLUSION_THRESHOLD: f64 = 0.75;

/// Whether MaxIoU is measured over bounding boxes or decoded masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum IouMode {
    Bbox,
    Mask,
}

/// Occlusion severity bins: none below 0.5, moderate in [0.5, 0.75],
/// hard above 0.75.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    None,
    Moderate,
    Hard,
}

impl Severity {
    pub fn from_max_iou(max_iou: f64) -> Severity {
        if max_iou < HEAVY_OCCLUSION_THRESHOLD {
            Severity::None
        } else if max_iou <= HARD_OCCLUSION_THRESHOLD {
            Severity::Moderate
        } else {
            Severity::Hard
        }
    }
}

/// Per-instance occlusion summary: the maximum IoU against any other person
/// in the same image and the partner achieving it.
#[derive(Debug, Clone, Serialize)]
pub struct OcclusionRecord {
    pub instance_id: u64,
    pub max_iou: f64,
    pub partner_id: Option<u64>,
    pub severity: Severity,
}

/// IoU of two equally-sized binary masks; 0 when the union is empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimensionMismatch {
            left: format!("{}x{}", a.width(), a.height()),
            right: format!("{}x{}", b.width(), b.height()),
        });
    }
    let mut inter = 0u64;
    let mut union = 0u64;
    for (&va, &vb) in a.data().iter().zip(b.data()) {
        inter += u64::from(va != 0 && vb != 0);
        union += u64::from(va != 0 || vb != 0);
    }
    if union == 0 {
        Ok(0.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// IoU of two bounding boxes.
pub fn bbox_iou(a: &Rect, b: &Rect) -> f64 {
    a.iou(b)
}

/// MaxIoU records for all instances of one image. Crowd-region instances are
/// excluded as partners unless `include_crowd` is set; a lone instance gets
/// max_iou 0.
pub fn max_iou_records(
    instances: &[&InstanceAnnotation],
    image: &ImageInfo,
    mode: IouMode,
    include_crowd: bool,
) -> Result<Vec<OcclusionRecord>> {
    let masks: Vec<Option<BinaryMask>> = match mode {
        IouMode::Bbox => vec![None; instances.len()],
        IouMode::Mask => instances
            .iter()
            .map(|inst| {
                inst.mask
                    .as_ref()
                    .map(|m| decode_mask(m, image.width, image.height))
                    .transpose()
            })
            .collect::<Result<_>>()?,
    };

    let mut records = Vec::with_capacity(instances.len());
    for (i, inst) in instances.iter().enumerate() {
        let mut max_iou = 0.0f64;
        let mut partner = None;
        for (j, other) in instances.iter().enumerate() {
            if i == j || (other.iscrowd && !include_crowd) {
                continue;
            }
            let iou = match mode {
                IouMode::Bbox => bbox_iou(&inst.bbox, &other.bbox),
                IouMode::Mask => match (&masks[i], &masks[j]) {
                    (Some(a), Some(b)) => mask_iou(a, b)?,
                    _ => bbox_iou(&inst.bbox, &other.bbox),
                },
            };
            if iou > max_iou {
                max_iou = iou;
                partner = Some(other.id);
            }
        }
        records.push(OcclusionRecord {
            instance_id: inst.id,
            max_iou,
            partner_id: partner,
            severity: Severity::from_max_iou(max_iou),
        });
    }
    Ok(records)
}

/// MaxIoU records for every instance in the dataset, keyed by instance id.
pub fn compute_occlusion_records(
    dataset: &CocoDataset,
    mode: IouMode,
    include_crowd: bool,
) -> Result<HashMap<u64, OcclusionRecord>> {
    let by_image = dataset.instances_by_image();
    let images: HashMap<u64, &ImageInfo> = dataset.images.iter().map(|im| (im.id, im)).collect();
    let per_image: Vec<Result<Vec<OcclusionRecord>>> = by_image
        .par_iter()
        .map(|(image_id, instances)| {
            let Some(image) = images.get(image_id) else {
                return Ok(Vec::new());
            };
            max_iou_records(instances, image, mode, include_crowd)
        })
        .collect();
    let mut out = HashMap::with_capacity(dataset.instances.len());
    for records in per_image {
        for rec in records? {
            out.insert(rec.instance_id, rec);
        }
    }
    Ok(out)
}

/// Aggregate occlusion statistics in the shape of the benchmark comparison
/// table: instance counts, heavy-occlusion counts at 0.5 and 0.75, and the
/// average MaxIoU.
#[derive(Debug, Clone, Serialize)]
pub struct OcclusionStats {
    pub schema_version: u32,
    pub mode: IouMode,
    pub images: usize,
    pub persons: usize,
    pub oc50_count: usize,
    pub oc50_fraction: f64,
    pub oc75_count: usize,
    pub oc75_fraction: f64,
    pub average_max_iou: f64,
}

impl OcclusionStats {
    pub fn from_records(
        dataset: &CocoDataset,
        records: &HashMap<u64, OcclusionRecord>,
        mode: IouMode,
    ) -> OcclusionStats {
        let persons = dataset.instances.len();
        let mut oc50 = 0usize;
        let mut oc75 = 0usize;
        let mut sum = 0.0f64;
        for inst in &dataset.instances {
            let max_iou = records.get(&inst.id).map(|r| r.max_iou).unwrap_or(0.0);
            sum += max_iou;
            if max_iou > HEAVY_OCCLUSION_THRESHOLD {
                oc50 += 1;
            }
            if max_iou > HARD_OCCLUSION_THRESHOLD {
                oc75 += 1;
            }
        }
        let frac = |count: usize| {
            if persons == 0 {
                0.0
            } else {
                count as f64 / persons as f64
            }
        };
        OcclusionStats {
            schema_version: 1,
            mode,
            images: dataset.images.len(),
            persons,
            oc50_count: oc50,
            oc50_fraction: frac(oc50),
            oc75_count: oc75,
            oc75_fraction: frac(oc75),
            average_max_iou: if persons == 0 {
                0.0
            } else {
                sum / persons as f64
            },
        }
    }

    /// Aligned-column text table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let row = |label: &str, value: String| format!("{label:<24}{value:>16}\n");
        out.push_str(&row("#images", self.images.to_string()));
        out.push_str(&row("#persons", self.persons.to_string()));
        out.push_str(&row(
            "#persons (oc_0.5)",
            format!("{} ({:.1}%)", self.oc50_count, self.oc50_fraction * 100.0),
        ));
        out.push_str(&row(
            "#persons (oc_0.75)",
            format!("{} ({:.1}%)", self.oc75_count, self.oc75_fraction * 100.0),
        ));
        out.push_str(&row(
            "#average MaxIoU",
            format!("{:.2}", self.average_max_iou),
        ));
        out
    }
}

/// Keep instances whose MaxIoU strictly exceeds `threshold`; images without a
/// surviving instance are dropped. Also returns the stats of the *input*
/// dataset for reporting.
pub fn filter_occluded(
    dataset: &CocoDataset,
    threshold: f64,
    mode: IouMode,
    include_crowd: bool,
) -> Result<(CocoDataset, OcclusionStats)> {
    let records = compute_occlusion_records(dataset, mode, include_crowd)?;
    let stats = OcclusionStats::from_records(dataset, &records, mode);

    let instances: Vec<InstanceAnnotation> = dataset
        .instances
        .iter()
        .filter(|inst| {
            records
                .get(&inst.id)
                .map(|r| r.max_iou > threshold)
                .unwrap_or(false)
        })
        .cloned()
        .collect();
    let used: std::collections::HashSet<u64> = instances.iter().map(|inst| inst.image_id).collect();
    let images: Vec<ImageInfo> = dataset
        .images
        .iter()
        .filter(|im| used.contains(&im.id))
        .cloned()
        .collect();
    Ok((
        CocoDataset {
            images,
            instances,
            malformed: Vec::new(),
        },
        stats,
    ))
}

/// Deterministic image-level split: image ids are sorted, shuffled by the
/// seeded generator, and the first `val_fraction` share becomes the
/// validation set. Instances follow their image.
pub fn split_dataset(
    dataset: &CocoDataset,
    seed: u64,
    val_fraction: f64,
) -> (CocoDataset, CocoDataset) {
    let mut ids: Vec<u64> = dataset.images.iter().map(|im| im.id).collect();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_val = ((ids.len() as f64) * val_fraction.clamp(0.0, 1.0)).round() as usize;
    let val_ids: std::collections::HashSet<u64> = ids.iter().take(n_val).copied().collect();
    (
        dataset.retain_images(|id| val_ids.contains(&id)),
        dataset.retain_images(|id| !val_ids.contains(&id)),
    )
}

/// Split by a published manifest of validation image ids.
pub fn split_by_manifest(
    dataset: &CocoDataset,
    val_image_ids: &std::collections::HashSet<u64>,
) -> (CocoDataset, CocoDataset) {
    (
        dataset.retain_images(|id| val_image_ids.contains(&id)),
        dataset.retain_images(|id| !val_image_ids.contains(&id)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance(id: u64, image_id: u64, bbox: Rect, iscrowd: bool) -> InstanceAnnotation {
        InstanceAnnotation {
            id,
            image_id,
            bbox,
            keypoints: None,
            mask: None,
            iscrowd,
            area: bbox.area(),
        }
    }

    fn image(id: u64) -> ImageInfo {
        ImageInfo {
            id,
            width: 100,
            height: 100,
            file_name: None,
        }
    }

    #[test]
    fn mask_iou_identical_disjoint_and_mismatched() {
        let mut a = BinaryMask::zeros(4, 4);
        a.set(1, 1, true);
        a.set(2, 1, true);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);

        let mut b = BinaryMask::zeros(4, 4);
        b.set(0, 3, true);
        assert_eq!(mask_iou(&a, &b).unwrap(), 0.0);

        let empty = BinaryMask::zeros(4, 4);
        assert_eq!(mask_iou(&empty, &empty).unwrap(), 0.0);

        let c = BinaryMask::zeros(5, 4);
        assert!(mask_iou(&a, &c).is_err());
    }

    #[test]
    fn single_instance_has_zero_max_iou() {
        let inst = instance(1, 1, Rect::new(0.0, 0.0, 10.0, 10.0), false);
        let recs = max_iou_records(&[&inst], &image(1), IouMode::Bbox, false).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].max_iou, 0.0);
        assert_eq!(recs[0].partner_id, None);
        assert_eq!(recs[0].severity, Severity::None);
    }

    #[test]
    fn identical_boxes_are_hard_occlusion() {
        let a = instance(1, 1, Rect::new(0.0, 0.0, 10.0, 10.0), false);
        let b = instance(2, 1, Rect::new(0.0, 0.0, 10.0, 10.0), false);
        let recs = max_iou_records(&[&a, &b], &image(1), IouMode::Bbox, false).unwrap();
        for rec in &recs {
            assert_eq!(rec.max_iou, 1.0);
            assert_eq!(rec.severity, Severity::Hard);
        }
        assert_eq!(recs[0].partner_id, Some(2));
        assert_eq!(recs[1].partner_id, Some(1));
    }

    #[test]
    fn max_iou_picks_the_maximizing_partner() {
        // A-B IoU 0.6, A-C IoU well below: b overlaps a on 15/25 columns.
        let a = instance(1, 1, Rect::new(0.0, 0.0, 20.0, 10.0), false);
        let b = instance(2, 1, Rect::new(5.0, 0.0, 20.0, 10.0), false);
        let c = instance(3, 1, Rect::new(18.0, 0.0, 20.0, 10.0), false);
        let recs = max_iou_records(&[&a, &b, &c], &image(1), IouMode::Bbox, false).unwrap();
        assert!((recs[0].max_iou - 0.6).abs() < 1e-12);
        assert_eq!(recs[0].partner_id, Some(2));
        assert_eq!(recs[0].severity, Severity::Moderate);
    }

    #[test]
    fn severity_boundaries() {
        assert_eq!(Severity::from_max_iou(0.49), Severity::None);
        assert_eq!(Severity::from_max_iou(0.5), Severity::Moderate);
        assert_eq!(Severity::from_max_iou(0.75), Severity::Moderate);
        assert_eq!(Severity::from_max_iou(0.7500001), Severity::Hard);
    }

    #[test]
    fn crowd_partners_are_excluded_by_default() {
        let a = instance(1, 1, Rect::new(0.0, 0.0, 10.0, 10.0), false);
        let crowd = instance(2, 1, Rect::new(0.0, 0.0, 10.0, 10.0), true);
        let recs = max_iou_records(&[&a, &crowd], &image(1), IouMode::Bbox, false).unwrap();
        assert_eq!(recs[0].max_iou, 0.0);
        let recs = max_iou_records(&[&a, &crowd], &image(1), IouMode::Bbox, true).unwrap();
        assert_eq!(recs[0].max_iou, 1.0);
    }

    #[test]
    fn records_are_order_invariant() {
        let a = instance(1, 1, Rect::new(0.0, 0.0, 20.0, 10.0), false);
        let b = instance(2, 1, Rect::new(5.0, 0.0, 20.0, 10.0), false);
        let c = instance(3, 1, Rect::new(18.0, 0.0, 20.0, 10.0), false);
        let fwd = max_iou_records(&[&a, &b, &c], &image(1), IouMode::Bbox, false).unwrap();
        let rev = max_iou_records(&[&c, &b, &a], &image(1), IouMode::Bbox, false).unwrap();
        for rec in &fwd {
            let other = rev
                .iter()
                .find(|r| r.instance_id == rec.instance_id)
                .unwrap();
            assert_eq!(rec.max_iou, other.max_iou);
            assert_eq!(rec.partner_id, other.partner_id);
        }
    }

    fn toy_dataset() -> CocoDataset {
        CocoDataset {
            images: vec![image(1), image(2)],
            instances: vec![
                instance(1, 1, Rect::new(0.0, 0.0, 10.0, 10.0), false),
                instance(2, 1, Rect::new(0.0, 0.0, 10.0, 10.0), false),
                instance(3, 2, Rect::new(0.0, 0.0, 10.0, 10.0), false),
            ],
            malformed: Vec::new(),
        }
    }

    #[test]
    fn filter_retains_strictly_above_threshold() {
        let ds = toy_dataset();
        let (subset, stats) = filter_occluded(&ds, 0.5, IouMode::Bbox, false).unwrap();
        assert_eq!(subset.instances.len(), 2);
        assert_eq!(subset.images.len(), 1);
        assert_eq!(stats.persons, 3);
        assert_eq!(stats.oc50_count, 2);
        assert_eq!(stats.oc75_count, 2);
        assert!((stats.average_max_iou - 2.0 / 3.0).abs() < 1e-12);

        // Threshold 1.0 keeps nothing: max_iou must strictly exceed it.
        let (subset, _) = filter_occluded(&ds, 1.0, IouMode::Bbox, false).unwrap();
        assert!(subset.instances.is_empty());
    }

    #[test]
    fn stats_table_mentions_all_rows() {
        let ds = toy_dataset();
        let records = compute_occlusion_records(&ds, IouMode::Bbox, false).unwrap();
        let stats = OcclusionStats::from_records(&ds, &records, IouMode::Bbox);
        let table = stats.to_table();
        for needle in [
            "#images",
            "#persons",
            "#persons (oc_0.5)",
            "#persons (oc_0.75)",
            "#average MaxIoU",
        ] {
            assert!(table.contains(needle), "missing row {needle}");
        }
    }

    #[test]
    fn split_is_deterministic_and_respects_fraction() {
        let mut images: Vec<ImageInfo> = (0..20).map(image).collect();
        images.sort_by_key(|im| im.id);
        let ds = CocoDataset {
            images,
            instances: (0..40)
                .map(|i| instance(i, i % 20, Rect::new(0.0, 0.0, 5.0, 5.0), false))
                .collect(),
            malformed: Vec::new(),
        };
        let (val_a, test_a) = split_dataset(&ds, 9, 0.25);
        let (val_b, test_b) = split_dataset(&ds, 9, 0.25);
        assert_eq!(
            val_a.images.iter().map(|im| im.id).collect::<Vec<_>>(),
            val_b.images.iter().map(|im| im.id).collect::<Vec<_>>()
        );
        assert_eq!(val_a.images.len(), 5);
        assert_eq!(test_a.images.len(), 15);
        assert_eq!(
            val_a.instances.len() + test_a.instances.len(),
            ds.instances.len()
        );
        // Instances follow their image.
        for inst in &val_a.instances {
            assert!(val_a.images.iter().any(|im| im.id == inst.image_id));
        }
        let _ = test_b;

        let (val_empty, test_all) = split_dataset(&ds, 9, 0.0);
        assert!(val_empty.images.is_empty());
        assert_eq!(test_all.images.len(), 20);
    }

    #[test]
    fn manifest_split_follows_ids() {
        let ds = toy_dataset();
        let manifest: std::collections::HashSet<u64> = [2u64].into_iter().collect();
        let (val, test) = split_by_manifest(&ds, &manifest);
        assert_eq!(val.images.len(), 1);
        assert_eq!(val.instances.len(), 1);
        assert_eq!(test.instances.len(), 2);
    }

    mod mask_iou_properties {
        use super::*;
        use proptest::prelude::*;

        fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
            (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
                proptest::collection::vec(proptest::bool::ANY, w * h).prop_map(move |bits| {
                    BinaryMask::from_data(w, h, bits.into_iter().map(u8::from).collect()).unwrap()
                })
            })
        }

        proptest! {
            #[test]
            fn symmetric_bounded_one_iff_equal(a in mask_strategy(), b in mask_strategy()) {
                if a.width() == b.width() && a.height() == b.height() {
                    let ab = mask_iou(&a, &b).unwrap();
                    let ba = mask_iou(&b, &a).unwrap();
                    prop_assert_eq!(ab.to_bits(), ba.to_bits());
                    prop_assert!((0.0..=1.0).contains(&ab));
                    if !a.is_empty() || !b.is_empty() {
                        prop_assert_eq!(ab == 1.0, a == b);
                    }
                } else {
                    prop_assert!(mask_iou(&a, &b).is_err());
                }
            }
        }
    }
}
