//! COCO-format annotation ingestion and re-serialization.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::rle::{MaskSource, Rle};
use crate::error::{Error, Result};
use crate::geom::Rect;
use crate::pose::{CoordinateSpace, Pose, KEYPOINT_COUNT};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    pub file_name: Option<String>,
}

/// One person instance from an annotation file.
#[derive(Debug, Clone)]
pub struct InstanceAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub bbox: Rect,
    pub keypoints: Option<Pose>,
    pub mask: Option<MaskSource>,
    pub iscrowd: bool,
    pub area: f64,
}

/// A structurally broken annotation, kept for reporting instead of being
/// silently dropped.
#[derive(Debug, Clone, Serialize)]
pub struct MalformedRecord {
    pub annotation_id: u64,
    pub reason: String,
}

/// Parsed dataset: images, person instances, and the malformed-record report.
#[derive(Debug, Clone, Default)]
pub struct CocoDataset {
    pub images: Vec<ImageInfo>,
    pub instances: Vec<InstanceAnnotation>,
    pub malformed: Vec<MalformedRecord>,
}

impl CocoDataset {
    pub fn image_by_id(&self, id: u64) -> Option<&ImageInfo> {
        self.images.iter().find(|im| im.id == id)
    }

    /// Instances grouped by image id, in image order.
    pub fn instances_by_image(&self) -> BTreeMap<u64, Vec<&InstanceAnnotation>> {
        let mut map: BTreeMap<u64, Vec<&InstanceAnnotation>> = BTreeMap::new();
        for im in &self.images {
            map.entry(im.id).or_default();
        }
        for inst in &self.instances {
            map.entry(inst.image_id).or_default().push(inst);
        }
        map
    }

    /// Keep only the images whose ids satisfy the predicate, with their
    /// instances following.
    pub fn retain_images<F: Fn(u64) -> bool>(&self, keep: F) -> CocoDataset {
        let images: Vec<ImageInfo> = self
            .images
            .iter()
            .filter(|im| keep(im.id))
            .cloned()
            .collect();
        let ids: std::collections::HashSet<u64> = images.iter().map(|im| im.id).collect();
        CocoDataset {
            images,
            instances: self
                .instances
                .iter()
                .filter(|inst| ids.contains(&inst.image_id))
                .cloned()
                .collect(),
            malformed: Vec::new(),
        }
    }
}

fn as_array<'a>(doc: &'a Value, key: &str) -> Result<&'a Vec<Value>> {
    doc.get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Format(format!("missing required array '{key}'")))
}

fn field_u64(obj: &Value, key: &str) -> Option<u64> {
    obj.get(key).and_then(Value::as_u64)
}

fn field_f64(obj: &Value, key: &str) -> Option<f64> {
    obj.get(key).and_then(Value::as_f64)
}

/// Parse a COCO segmentation value: polygon ring list, raw-counts RLE object,
/// or compressed-string RLE object.
pub fn parse_segmentation(value: &Value) -> Option<MaskSource> {
    match value {
        Value::Array(rings) => {
            let mut polys = Vec::with_capacity(rings.len());
            for ring in rings {
                let coords: Option<Vec<f64>> = ring.as_array()?.iter().map(Value::as_f64).collect();
                polys.push(coords?);
            }
            Some(MaskSource::Polygons(polys))
        }
        Value::Object(obj) => {
            let size = obj.get("size")?.as_array()?;
            let h = size.first()?.as_u64()? as u32;
            let w = size.get(1)?.as_u64()? as u32;
            match obj.get("counts")? {
                Value::String(s) => Some(MaskSource::CompressedRle {
                    counts: s.clone(),
                    height: h,
                    width: w,
                }),
                Value::Array(arr) => {
                    let counts: Option<Vec<u32>> =
                        arr.iter().map(|v| v.as_u64().map(|c| c as u32)).collect();
                    Some(MaskSource::Rle(Rle {
                        height: h,
                        width: w,
                        counts: counts?,
                    }))
                }
                _ => None,
            }
        }
        _ => None,
    }
}

/// Parse a COCO-format JSON document, materializing person-category
/// instances. Annotations referencing unknown image or category ids are hard
/// errors; structurally broken person annotations are reported in
/// `malformed` rather than silently dropped. Valid keypoints slightly outside
/// the image are clamped into bounds.
pub fn parse_annotations(text: &str) -> Result<CocoDataset> {
    let doc: Value = serde_json::from_str(text)?;
    let images_raw = as_array(&doc, "images")?;
    let annotations_raw = as_array(&doc, "annotations")?;
    let categories_raw = as_array(&doc, "categories")?;

    let mut category_names: HashMap<u64, String> = HashMap::new();
    for cat in categories_raw {
        let id = field_u64(cat, "id")
            .ok_or_else(|| Error::Format("category without integer id".into()))?;
        let name = cat
            .get("name")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        category_names.insert(id, name);
    }

    let mut images = Vec::with_capacity(images_raw.len());
    let mut image_dims: HashMap<u64, (u32, u32)> = HashMap::new();
    for im in images_raw {
        let id =
            field_u64(im, "id").ok_or_else(|| Error::Format("image without integer id".into()))?;
        let width = field_u64(im, "width")
            .ok_or_else(|| Error::Format(format!("image {id} missing width")))?
            as u32;
        let height = field_u64(im, "height")
            .ok_or_else(|| Error::Format(format!("image {id} missing height")))?
            as u32;
        image_dims.insert(id, (width, height));
        images.push(ImageInfo {
            id,
            width,
            height,
            file_name: im
                .get("file_name")
                .and_then(Value::as_str)
                .map(str::to_string),
        });
    }

    let mut instances = Vec::new();
    let mut malformed = Vec::new();
    for ann in annotations_raw {
        let ann_id = field_u64(ann, "id")
            .ok_or_else(|| Error::Format("annotation without integer id".into()))?;
        let image_id = field_u64(ann, "image_id")
            .ok_or_else(|| Error::Format(format!("annotation {ann_id} missing image_id")))?;
        let category_id = field_u64(ann, "category_id")
            .ok_or_else(|| Error::Format(format!("annotation {ann_id} missing category_id")))?;
        let Some(&(img_w, img_h)) = image_dims.get(&image_id) else {
            return Err(Error::Reference {
                referrer: format!("annotation {ann_id}"),
                kind: "image",
                id: image_id,
            });
        };
        let Some(category) = category_names.get(&category_id) else {
            return Err(Error::Reference {
                referrer: format!("annotation {ann_id}"),
                kind: "category",
                id: category_id,
            });
        };
        if category != "person" {
            continue;
        }

        match parse_instance(ann, ann_id, image_id, img_w, img_h) {
            Ok(instance) => instances.push(instance),
            Err(reason) => malformed.push(MalformedRecord {
                annotation_id: ann_id,
                reason,
            }),
        }
    }

    Ok(CocoDataset {
        images,
        instances,
        malformed,
    })
}

fn parse_instance(
    ann: &Value,
    id: u64,
    image_id: u64,
    img_w: u32,
    img_h: u32,
) -> std::result::Result<InstanceAnnotation, String> {
    let bbox_raw = ann
        .get("bbox")
        .and_then(Value::as_array)
        .ok_or("missing bbox")?;
    if bbox_raw.len() != 4 {
        return Err(format!("bbox has {} values", bbox_raw.len()));
    }
    let b: Vec<f64> = bbox_raw.iter().filter_map(Value::as_f64).collect();
    if b.len() != 4 {
        return Err("bbox contains non-numeric values".into());
    }
    if b[2] < 0.0 || b[3] < 0.0 {
        return Err(format!("negative bbox size {}x{}", b[2], b[3]));
    }
    let bbox = Rect::new(b[0], b[1], b[2], b[3]);

    let keypoints = match ann.get("keypoints") {
        Some(Value::Array(arr)) => {
            let flat: Vec<f64> = arr.iter().filter_map(Value::as_f64).collect();
            if flat.len() != arr.len() || flat.len() != KEYPOINT_COUNT * 3 {
                return Err(format!(
                    "keypoints array has {} values, expected {}",
                    arr.len(),
                    KEYPOINT_COUNT * 3
                ));
            }
            let space = CoordinateSpace::Pixel {
                width: img_w as f64,
                height: img_h as f64,
            };
            // Clamp stray valid coordinates into the image before encoding.
            let mut clamped = flat;
            for triple in clamped.chunks_mut(3) {
                if triple[2] > 0.0 {
                    triple[0] = triple[0].clamp(0.0, img_w as f64);
                    triple[1] = triple[1].clamp(0.0, img_h as f64);
                }
            }
            Some(Pose::from_coco_keypoints(&clamped, space).map_err(|e| e.to_string())?)
        }
        Some(_) => return Err("keypoints is not an array".into()),
        None => None,
    };

    let mask = match ann.get("segmentation") {
        Some(seg) if !seg.is_null() => {
            Some(parse_segmentation(seg).ok_or("unparseable segmentation")?)
        }
        _ => None,
    };

    let iscrowd = ann
        .get("iscrowd")
        .map(|v| v.as_u64().unwrap_or(0) != 0 || v.as_bool().unwrap_or(false))
        .unwrap_or(false);
    let area = field_f64(ann, "area").unwrap_or_else(|| bbox.area());

    Ok(InstanceAnnotation {
        id,
        image_id,
        bbox,
        keypoints,
        mask,
        iscrowd,
        area,
    })
}

pub fn parse_annotations_file(path: &Path) -> Result<CocoDataset> {
    let text = std::fs::read_to_string(path)?;
    parse_annotations(&text)
}

/// Re-serialize a dataset as a COCO-format document (person category only).
pub fn to_coco_json(dataset: &CocoDataset) -> Value {
    let images: Vec<Value> = dataset
        .images
        .iter()
        .map(|im| {
            let mut obj = serde_json::json!({
                "id": im.id,
                "width": im.width,
                "height": im.height,
            });
            if let Some(name) = &im.file_name {
                obj["file_name"] = Value::from(name.clone());
            }
            obj
        })
        .collect();
    let annotations: Vec<Value> = dataset
        .instances
        .iter()
        .map(|inst| {
            let mut obj = serde_json::json!({
                "id": inst.id,
                "image_id": inst.image_id,
                "category_id": 1,
                "bbox": [inst.bbox.x, inst.bbox.y, inst.bbox.w, inst.bbox.h],
                "iscrowd": u8::from(inst.iscrowd),
                "area": inst.area,
            });
            if let Some(pose) = &inst.keypoints {
                let flat: Vec<f64> = pose
                    .keypoints()
                    .iter()
                    .flat_map(|kp| [kp.x, kp.y, kp.v])
                    .collect();
                obj["keypoints"] = serde_json::json!(flat);
            }
            if let Some(mask) = &inst.mask {
                obj["segmentation"] = match mask {
                    MaskSource::Polygons(polys) => serde_json::json!(polys),
                    MaskSource::Rle(rle) => serde_json::json!({
                        "size": [rle.height, rle.width],
                        "counts": rle.counts,
                    }),
                    MaskSource::CompressedRle {
                        counts,
                        height,
                        width,
                    } => serde_json::json!({
                        "size": [height, width],
                        "counts": counts,
                    }),
                };
            }
            obj
        })
        .collect();
    serde_json::json!({
        "images": images,
        "annotations": annotations,
        "categories": [{"id": 1, "name": "person", "supercategory": "person"}],
    })
}
