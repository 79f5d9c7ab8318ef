//! Command-line front door: template clustering, alignment, skeleton
//! rasterization, occlusion stats, filtering, splits, baseline segmentation,
//! and evaluation, behind one binary with subcommands.
//!
//! Numeric defaults can come from a JSON config file (`--config`); explicit
//! flags always win. Outputs carry no timestamps, so identical inputs and
//! configuration produce byte-identical artifacts.

use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::Value;

use crate::affine::{
    select_template, transform_pose_to_window, warp_window, whole_image_fallback, AlignTransform,
    AlignedWindow, DEFAULT_ALIGN_SIZE, DEFAULT_MASK_THRESHOLD,
};
use crate::baseline::{
    baseline_segment, receptive_field, seg_module_layers, DEFAULT_DILATION_RADIUS,
};
use crate::clustering::{
    kmeans_templates, normalize_pose, NormalizedPose, PoseTemplate, TemplateBank, DEFAULT_K,
    DEFAULT_MAX_ITER,
};
use crate::dataset::{
    self, compute_occlusion_records, decode_mask, filter_occluded, parse_annotations_file,
    split_by_manifest, split_dataset, to_coco_json, CocoDataset, IouMode, OcclusionStats, Severity,
};
use crate::error::{Error, Result};
use crate::eval::{average_precision, coco_thresholds, Binning, GtInstance, Prediction};
use crate::pose::Pose;
use crate::raster::{write_tensor_file, Raster};
use crate::skeleton::skeleton_features;

#[derive(Debug, Parser)]
#[command(
    name = "pose2seg",
    version,
    about = "Pose-template alignment, skeleton rasterization, and occlusion-aware segmentation evaluation"
)]
struct Cli {
    /// JSON config file with default parameter values; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MaxIouModeArg {
    Bbox,
    Mask,
}

impl From<MaxIouModeArg> for IouMode {
    fn from(value: MaxIouModeArg) -> Self {
        match value {
            MaxIouModeArg::Bbox => IouMode::Bbox,
            MaxIouModeArg::Mask => IouMode::Mask,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Json,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BinsArg {
    None,
    Size,
    Occlusion,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cluster pose templates from a COCO annotation file.
    Cluster {
        /// COCO annotation JSON.
        #[arg(long)]
        input: PathBuf,
        /// Template bank JSON to write.
        #[arg(long)]
        output: PathBuf,
        /// Number of templates.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Align each annotated person of one image, writing window crops and
    /// transform sidecars.
    Align {
        /// Image file.
        #[arg(long)]
        input: PathBuf,
        /// COCO annotation JSON.
        #[arg(long)]
        annotations: PathBuf,
        /// Template bank JSON.
        #[arg(long)]
        templates: PathBuf,
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
        /// Aligned window side length.
        #[arg(long)]
        size: Option<u32>,
        /// Image id inside the annotation file (needed when it holds more
        /// than one image).
        #[arg(long)]
        image_id: Option<u64>,
    },
    /// Rasterize skeleton features for every annotated person.
    Skeleton {
        #[arg(long)]
        input: PathBuf,
        /// Template bank; without it, every instance uses the whole-image
        /// alignment.
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        size: Option<u32>,
        /// Also write per-channel PNG previews into this directory.
        #[arg(long)]
        previews: Option<PathBuf>,
    },
    /// Occlusion statistics over an annotation file.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        maxiou_mode: Option<MaxIouModeArg>,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// Count crowd regions as occlusion partners.
        #[arg(long)]
        include_crowd: bool,
        /// Also write the JSON report here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Keep instances whose MaxIoU strictly exceeds the threshold.
    Filter {
        #[arg(long)]
        input: PathBuf,
        /// Filtered COCO annotation JSON to write.
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, value_enum)]
        maxiou_mode: Option<MaxIouModeArg>,
        #[arg(long)]
        include_crowd: bool,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
    },
    /// Split a dataset into val/test at the image level.
    Split {
        #[arg(long)]
        input: PathBuf,
        /// Output directory for val.json and test.json.
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        val_fraction: Option<f64>,
        /// Manifest of validation image ids (one per line) replacing the
        /// seeded split.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Run the geometric baseline segmenter, emitting COCO-results JSON.
    Segment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        templates: Option<PathBuf>,
        /// Predictions JSON to write.
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        size: Option<u32>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        dilation: Option<u32>,
        /// Align through keypoint-derived boxes grown by this factor instead
        /// of template fitting (the box-alignment ablation).
        #[arg(long)]
        expand: Option<f64>,
    },
    /// Mask average precision of predictions against ground truth.
    Evaluate {
        /// Ground-truth COCO annotation JSON.
        #[arg(long)]
        input: PathBuf,
        /// COCO-results predictions JSON.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, value_enum)]
        bins: Option<BinsArg>,
        /// MaxIoU mode for occlusion binning.
        #[arg(long, value_enum)]
        maxiou_mode: Option<MaxIouModeArg>,
        /// Keep small ground truths in size-binned evaluation.
        #[arg(long)]
        include_small: bool,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Receptive-field analysis of a stem + residual-unit head.
    Rf {
        /// Residual unit counts to analyze.
        #[arg(long, value_delimiter = ',', default_value = "10")]
        units: Vec<usize>,
        #[arg(long)]
        residual_convs: Option<u32>,
        #[arg(long)]
        residual_kernel: Option<u32>,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
    },
}

/// Defaults loadable from `--config`; every field optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    size: Option<u32>,
    k: Option<usize>,
    seed: Option<u64>,
    max_iter: Option<usize>,
    threshold: Option<f64>,
    maxiou_mode: Option<String>,
    expand: Option<f64>,
    format: Option<String>,
    val_fraction: Option<f64>,
    dilation: Option<u32>,
    residual_convs: Option<u32>,
    residual_kernel: Option<u32>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<FileConfig> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str(&text).map_err(|e| Error::Format(format!("config file: {e}")))
            }
            None => Ok(FileConfig::default()),
        }
    }

    fn maxiou_mode(&self) -> Result<Option<IouMode>> {
        match self.maxiou_mode.as_deref() {
            None => Ok(None),
            Some("bbox") => Ok(Some(IouMode::Bbox)),
            Some("mask") => Ok(Some(IouMode::Mask)),
            Some(other) => Err(Error::Format(format!(
                "config: unknown maxiou_mode '{other}'"
            ))),
        }
    }

    fn format(&self) -> Result<Option<FormatArg>> {
        match self.format.as_deref() {
            None => Ok(None),
            Some("json") => Ok(Some(FormatArg::Json)),
            Some("table") => Ok(Some(FormatArg::Table)),
            Some(other) => Err(Error::Format(format!("config: unknown format '{other}'"))),
        }
    }
}

/// Run the CLI on the given argv, returning the process exit code. Errors are
/// printed to stderr as one JSON object.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            // Help/version exit 0; usage errors exit 2, printed by clap.
            let _ = err.print();
            return err.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            let code = exit_code(&err);
            let payload = serde_json::json!({
                "error": {
                    "kind": err.kind(),
                    "message": err.to_string(),
                    "exit_code": code,
                }
            });
            eprintln!("{payload}");
            code
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => 3,
        Error::Format(_)
        | Error::Json(_)
        | Error::CorruptMask(_)
        | Error::Reference { .. }
        | Error::DimensionMismatch { .. } => 4,
        Error::InsufficientData { .. }
        | Error::InvalidBbox { .. }
        | Error::InvalidKeypoint { .. }
        | Error::InvalidVisibilityCode(_)
        | Error::NoValidKeypoints
        | Error::SparseTemplate { .. } => 5,
        Error::DegenerateConfiguration | Error::SingularTransform => 6,
    }
}

fn check_range(name: &str, value: f64, lo: f64, hi: f64) -> Result<()> {
    if !(lo..=hi).contains(&value) || !value.is_finite() {
        return Err(Error::Format(format!(
            "{name} must lie in [{lo}, {hi}], got {value}"
        )));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let config = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Cluster {
            input,
            output,
            k,
            seed,
            max_iter,
        } => cmd_cluster(
            &input,
            &output,
            k.or(config.k).unwrap_or(DEFAULT_K),
            seed.or(config.seed).unwrap_or(0),
            max_iter.or(config.max_iter).unwrap_or(DEFAULT_MAX_ITER),
        ),
        Command::Align {
            input,
            annotations,
            templates,
            output,
            size,
            image_id,
        } => cmd_align(
            &input,
            &annotations,
            &templates,
            &output,
            resolve_size(size, &config)?,
            image_id,
        ),
        Command::Skeleton {
            input,
            templates,
            output,
            size,
            previews,
        } => cmd_skeleton(
            &input,
            templates.as_deref(),
            &output,
            resolve_size(size, &config)?,
            previews.as_deref(),
        ),
        Command::Stats {
            input,
            maxiou_mode,
            format,
            include_crowd,
            output,
        } => cmd_stats(
            &input,
            resolve_mode(maxiou_mode, &config)?,
            resolve_format(format, &config)?,
            include_crowd,
            output.as_deref(),
        ),
        Command::Filter {
            input,
            output,
            threshold,
            maxiou_mode,
            include_crowd,
            format,
        } => {
            let threshold = threshold.or(config.threshold).unwrap_or(0.5);
            check_range("threshold", threshold, 0.0, 1.0)?;
            cmd_filter(
                &input,
                &output,
                threshold,
                resolve_mode(maxiou_mode, &config)?,
                include_crowd,
                resolve_format(format, &config)?,
            )
        }
        Command::Split {
            input,
            output,
            seed,
            val_fraction,
            manifest,
        } => {
            let fraction = val_fraction.or(config.val_fraction).unwrap_or(0.5);
            check_range("val-fraction", fraction, 0.0, 1.0)?;
            cmd_split(
                &input,
                &output,
                seed.or(config.seed).unwrap_or(0),
                fraction,
                manifest.as_deref(),
            )
        }
        Command::Segment {
            input,
            templates,
            output,
            size,
            threshold,
            dilation,
            expand,
        } => {
            let threshold = threshold
                .or(config.threshold)
                .unwrap_or(DEFAULT_MASK_THRESHOLD);
            check_range("threshold", threshold, 0.0, 1.0)?;
            let expand = expand.or(config.expand);
            if let Some(e) = expand {
                check_range("expand", e, 0.0, 10.0)?;
            }
            cmd_segment(
                &input,
                templates.as_deref(),
                &output,
                resolve_size(size, &config)?,
                threshold,
                dilation
                    .or(config.dilation)
                    .unwrap_or(DEFAULT_DILATION_RADIUS),
                expand,
            )
        }
        Command::Evaluate {
            input,
            predictions,
            bins,
            maxiou_mode,
            include_small,
            format,
            output,
        } => cmd_evaluate(
            &input,
            &predictions,
            bins.unwrap_or(BinsArg::None),
            resolve_mode(maxiou_mode, &config)?,
            include_small,
            resolve_format(format, &config)?,
            output.as_deref(),
        ),
        Command::Rf {
            units,
            residual_convs,
            residual_kernel,
            format,
        } => cmd_rf(
            &units,
            residual_convs.or(config.residual_convs).unwrap_or(1),
            residual_kernel.or(config.residual_kernel).unwrap_or(3),
            resolve_format(format, &config)?,
        ),
    }
}

fn resolve_size(size: Option<u32>, config: &FileConfig) -> Result<u32> {
    let size = size.or(config.size).unwrap_or(DEFAULT_ALIGN_SIZE);
    if size == 0 {
        return Err(Error::Format("size must be positive".into()));
    }
    Ok(size)
}

fn resolve_mode(mode: Option<MaxIouModeArg>, config: &FileConfig) -> Result<IouMode> {
    Ok(mode
        .map(IouMode::from)
        .or(config.maxiou_mode()?)
        .unwrap_or(IouMode::Bbox))
}

fn resolve_format(format: Option<FormatArg>, config: &FileConfig) -> Result<FormatArg> {
    Ok(format.or(config.format()?).unwrap_or(FormatArg::Table))
}

/// Poses paired with their bboxes for clustering, in annotation order.
fn normalized_training_poses(dataset: &CocoDataset) -> Vec<NormalizedPose> {
    dataset
        .instances
        .iter()
        .filter(|inst| !inst.iscrowd)
        .filter_map(|inst| {
            let pose = inst.keypoints.as_ref()?;
            if inst.bbox.w <= 0.0 || inst.bbox.h <= 0.0 {
                return None;
            }
            normalize_pose(pose, &inst.bbox).ok()
        })
        .collect()
}

fn cmd_cluster(input: &Path, output: &Path, k: usize, seed: u64, max_iter: usize) -> Result<()> {
    let dataset = parse_annotations_file(input)?;
    let poses = normalized_training_poses(&dataset);
    log::info!(
        "clustering {} poses (of {} instances) into {k} templates",
        poses.len(),
        dataset.instances.len()
    );
    let result = kmeans_templates(&poses, k, seed, max_iter)?;
    log::info!(
        "converged after {} iterations, objective {:.6}",
        result.iterations,
        result.objective
    );
    TemplateBank::from_templates(&result.templates).save(output)?;
    println!(
        "wrote {} templates to {}",
        result.templates.len(),
        output.display()
    );
    Ok(())
}

fn load_bank(path: &Path) -> Result<Vec<PoseTemplate>> {
    TemplateBank::load(path)?.to_templates()
}

fn raster_from_image(img: &image::DynamicImage) -> Raster {
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut raster = Raster::zeros(3, h, w);
    for (x, y, pixel) in rgb.enumerate_pixels() {
        for c in 0..3 {
            raster.set(c, y as usize, x as usize, pixel.0[c] as f32);
        }
    }
    raster
}

fn raster_to_rgb_image(raster: &Raster) -> image::RgbImage {
    let (w, h) = (raster.width() as u32, raster.height() as u32);
    image::RgbImage::from_fn(w, h, |x, y| {
        let px = |c: usize| raster.get(c.min(raster.channels() - 1), y as usize, x as usize);
        image::Rgb([
            px(0).clamp(0.0, 255.0) as u8,
            px(1).clamp(0.0, 255.0) as u8,
            px(2).clamp(0.0, 255.0) as u8,
        ])
    })
}

#[derive(serde::Serialize)]
struct AlignSidecar {
    schema_version: u32,
    instance_id: u64,
    image_id: u64,
    matrix: [[f64; 3]; 2],
    flipped: bool,
    residual: Option<f64>,
    score: f64,
    template_index: Option<usize>,
}

impl AlignSidecar {
    fn new(instance_id: u64, image_id: u64, t: &AlignTransform) -> Self {
        AlignSidecar {
            schema_version: 1,
            instance_id,
            image_id,
            matrix: t.matrix.0,
            flipped: t.flipped,
            residual: t.residual.is_finite().then_some(t.residual),
            score: t.score,
            template_index: t.template_index,
        }
    }
}

fn cmd_align(
    input: &Path,
    annotations: &Path,
    templates: &Path,
    output: &Path,
    size: u32,
    image_id: Option<u64>,
) -> Result<()> {
    let dataset = parse_annotations_file(annotations)?;
    let bank = load_bank(templates)?;
    let img = image::open(input).map_err(|e| Error::Format(format!("image: {e}")))?;

    let image_info = match image_id {
        Some(id) => dataset
            .image_by_id(id)
            .ok_or(Error::Reference {
                referrer: "--image-id".into(),
                kind: "image",
                id,
            })?
            .clone(),
        None => {
            if dataset.images.len() != 1 {
                return Err(Error::Format(format!(
                    "annotation file holds {} images; pass --image-id",
                    dataset.images.len()
                )));
            }
            dataset.images[0].clone()
        }
    };
    let raster = raster_from_image(&img);

    std::fs::create_dir_all(output)?;
    let mut aligned = 0usize;
    for inst in dataset
        .instances
        .iter()
        .filter(|inst| inst.image_id == image_info.id)
    {
        let Some(pose) = &inst.keypoints else {
            log::warn!("instance {} has no keypoints; skipped", inst.id);
            continue;
        };
        let transform = select_template(pose, &bank, size);
        let window = AlignedWindow {
            raster: warp_window(&raster, &transform, size)?,
            transform,
            image_id: Some(inst.image_id),
        };
        let crop_path = output.join(format!("inst_{}.png", inst.id));
        raster_to_rgb_image(&window.raster)
            .save(&crop_path)
            .map_err(|e| Error::Format(format!("writing {}: {e}", crop_path.display())))?;
        let sidecar = AlignSidecar::new(inst.id, inst.image_id, &window.transform);
        std::fs::write(
            output.join(format!("inst_{}.json", inst.id)),
            serde_json::to_string_pretty(&sidecar)?,
        )?;
        aligned += 1;
    }
    println!("aligned {aligned} instances into {}", output.display());
    Ok(())
}

fn align_instance(
    pose: &Pose,
    bank: Option<&[PoseTemplate]>,
    image: &dataset::ImageInfo,
    size: u32,
) -> AlignTransform {
    match bank {
        Some(bank) if !bank.is_empty() => select_template(pose, bank, size),
        _ => whole_image_fallback(image.width as f64, image.height as f64, size),
    }
}

fn cmd_skeleton(
    input: &Path,
    templates: Option<&Path>,
    output: &Path,
    size: u32,
    previews: Option<&Path>,
) -> Result<()> {
    let dataset = parse_annotations_file(input)?;
    let bank = templates.map(load_bank).transpose()?;
    std::fs::create_dir_all(output)?;
    if let Some(dir) = previews {
        std::fs::create_dir_all(dir)?;
    }

    let images: HashMap<u64, &dataset::ImageInfo> =
        dataset.images.iter().map(|im| (im.id, im)).collect();
    let mut written = 0usize;
    for inst in &dataset.instances {
        let Some(pose) = &inst.keypoints else {
            continue;
        };
        let Some(image) = images.get(&inst.image_id) else {
            continue;
        };
        let transform = align_instance(pose, bank.as_deref(), image, size);
        let aligned = transform_pose_to_window(pose, &transform, size);
        let features = skeleton_features(&aligned, size);
        write_tensor_file(
            &output.join(format!("inst_{}.tensor", inst.id)),
            features.raster(),
        )?;
        if let Some(dir) = previews {
            write_channel_previews(dir, inst.id, features.raster())?;
        }
        written += 1;
    }
    println!("wrote {written} skeleton tensors to {}", output.display());
    Ok(())
}

fn write_channel_previews(dir: &Path, instance_id: u64, raster: &Raster) -> Result<()> {
    for c in 0..raster.channels() {
        let (w, h) = (raster.width() as u32, raster.height() as u32);
        let img = image::GrayImage::from_fn(w, h, |x, y| {
            let v = raster.get(c, y as usize, x as usize);
            // Confidence channels live in [0,1]; vector channels in [-1,1].
            let mapped = if c < crate::pose::KEYPOINT_COUNT {
                v * 255.0
            } else {
                v * 127.0 + 128.0
            };
            image::Luma([mapped.clamp(0.0, 255.0) as u8])
        });
        let path = dir.join(format!("inst_{instance_id}_ch{c:02}.png"));
        img.save(&path)
            .map_err(|e| Error::Format(format!("writing {}: {e}", path.display())))?;
    }
    Ok(())
}

fn cmd_stats(
    input: &Path,
    mode: IouMode,
    format: FormatArg,
    include_crowd: bool,
    output: Option<&Path>,
) -> Result<()> {
    let dataset = parse_annotations_file(input)?;
    let records = compute_occlusion_records(&dataset, mode, include_crowd)?;
    let stats = OcclusionStats::from_records(&dataset, &records, mode);
    for rec in &dataset.malformed {
        log::warn!("malformed annotation {}: {}", rec.annotation_id, rec.reason);
    }
    let json = serde_json::to_string_pretty(&stats)?;
    match format {
        FormatArg::Table => print!("{}", stats.to_table()),
        FormatArg::Json => println!("{json}"),
    }
    if let Some(path) = output {
        std::fs::write(path, json)?;
    }
    Ok(())
}

fn cmd_filter(
    input: &Path,
    output: &Path,
    threshold: f64,
    mode: IouMode,
    include_crowd: bool,
    format: FormatArg,
) -> Result<()> {
    let dataset = parse_annotations_file(input)?;
    let (subset, stats) = filter_occluded(&dataset, threshold, mode, include_crowd)?;
    std::fs::write(output, serde_json::to_string(&to_coco_json(&subset))?)?;
    match format {
        FormatArg::Table => print!("{}", stats.to_table()),
        FormatArg::Json => println!("{}", serde_json::to_string_pretty(&stats)?),
    }
    println!(
        "kept {} of {} instances ({} images) at threshold {threshold}",
        subset.instances.len(),
        dataset.instances.len(),
        subset.images.len()
    );
    Ok(())
}

fn cmd_split(
    input: &Path,
    output: &Path,
    seed: u64,
    val_fraction: f64,
    manifest: Option<&Path>,
) -> Result<()> {
    let dataset = parse_annotations_file(input)?;
    let (val, test) = match manifest {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let ids: std::collections::HashSet<u64> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(|l| {
                    l.parse::<u64>()
                        .map_err(|_| Error::Format(format!("manifest line '{l}' is not an id")))
                })
                .collect::<Result<_>>()?;
            split_by_manifest(&dataset, &ids)
        }
        None => split_dataset(&dataset, seed, val_fraction),
    };
    std::fs::create_dir_all(output)?;
    std::fs::write(
        output.join("val.json"),
        serde_json::to_string(&to_coco_json(&val))?,
    )?;
    std::fs::write(
        output.join("test.json"),
        serde_json::to_string(&to_coco_json(&test))?,
    )?;
    println!(
        "val: {} images / {} instances; test: {} images / {} instances",
        val.images.len(),
        val.instances.len(),
        test.images.len(),
        test.instances.len()
    );
    Ok(())
}

fn cmd_segment(
    input: &Path,
    templates: Option<&Path>,
    output: &Path,
    size: u32,
    threshold: f64,
    dilation: u32,
    expand: Option<f64>,
) -> Result<()> {
    let dataset = parse_annotations_file(input)?;
    let bank = templates.map(load_bank).transpose()?;
    let images: HashMap<u64, &dataset::ImageInfo> =
        dataset.images.iter().map(|im| (im.id, im)).collect();

    let mut results = Vec::new();
    for inst in &dataset.instances {
        let Some(pose) = &inst.keypoints else {
            continue;
        };
        let Some(image) = images.get(&inst.image_id) else {
            continue;
        };
        let transform = match expand {
            Some(factor) => {
                let bbox = crate::eval::keypoints_to_bbox(pose, factor)?;
                crate::affine::bbox_align(&bbox, size)
            }
            None => align_instance(pose, bank.as_deref(), image, size),
        };
        let aligned = transform_pose_to_window(pose, &transform, size);
        let features = skeleton_features(&aligned, size);
        let window_mask = baseline_segment(&features, dilation);
        let mask = crate::affine::inverse_warp_mask(
            &window_mask,
            &transform,
            image.width,
            image.height,
            threshold,
        )?;
        let rle = dataset::encode_rle(&mask);
        results.push(serde_json::json!({
            "image_id": inst.image_id,
            "category_id": 1,
            "segmentation": {
                "size": [rle.height, rle.width],
                "counts": dataset::compress_rle(&rle),
            },
            "score": transform.score,
        }));
    }
    std::fs::write(
        output,
        serde_json::to_string(&Value::Array(results.clone()))?,
    )?;
    println!(
        "wrote {} predictions to {}",
        results.len(),
        output.display()
    );
    Ok(())
}

fn load_predictions(path: &Path, images: &HashMap<u64, (u32, u32)>) -> Result<Vec<Prediction>> {
    let text = std::fs::read_to_string(path)?;
    let doc: Value = serde_json::from_str(&text)?;
    let records = doc
        .as_array()
        .ok_or_else(|| Error::Format("predictions file must be a JSON array".into()))?;
    let mut out = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let image_id = rec
            .get("image_id")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Format(format!("prediction {i} missing image_id")))?;
        let Some(&(w, h)) = images.get(&image_id) else {
            return Err(Error::Reference {
                referrer: format!("prediction {i}"),
                kind: "image",
                id: image_id,
            });
        };
        let seg = rec
            .get("segmentation")
            .and_then(dataset::parse_segmentation)
            .ok_or_else(|| Error::Format(format!("prediction {i}: unparseable segmentation")))?;
        let score = rec
            .get("score")
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::Format(format!("prediction {i} missing score")))?;
        if !score.is_finite() {
            return Err(Error::Format(format!("prediction {i}: non-finite score")));
        }
        out.push(Prediction {
            id: i as u64 + 1,
            image_id,
            mask: decode_mask(&seg, w, h)?,
            score,
        });
    }
    Ok(out)
}

fn cmd_evaluate(
    input: &Path,
    predictions: &Path,
    bins: BinsArg,
    mode: IouMode,
    include_small: bool,
    format: FormatArg,
    output: Option<&Path>,
) -> Result<()> {
    let dataset = parse_annotations_file(input)?;
    let dims: HashMap<u64, (u32, u32)> = dataset
        .images
        .iter()
        .map(|im| (im.id, (im.width, im.height)))
        .collect();
    let preds = load_predictions(predictions, &dims)?;

    let mut gts = Vec::new();
    for inst in &dataset.instances {
        let Some(mask_src) = &inst.mask else {
            log::warn!("instance {} has no mask; skipped from gt", inst.id);
            continue;
        };
        let &(w, h) = dims.get(&inst.image_id).expect("parser checked references");
        gts.push(GtInstance {
            id: inst.id,
            image_id: inst.image_id,
            mask: decode_mask(mask_src, w, h)?,
            area: inst.area,
            iscrowd: inst.iscrowd,
        });
    }

    let binning = match bins {
        BinsArg::None => Binning::None,
        BinsArg::Size => Binning::Size {
            exclude_small: !include_small,
        },
        BinsArg::Occlusion => {
            let records = compute_occlusion_records(&dataset, mode, false)?;
            let severity: HashMap<u64, Severity> = records
                .into_iter()
                .map(|(id, rec)| (id, rec.severity))
                .collect();
            Binning::Occlusion(severity)
        }
    };

    let report = average_precision(&preds, &gts, &coco_thresholds(), &binning)?;
    let json = serde_json::to_string_pretty(&report)?;
    match format {
        FormatArg::Table => print!("{}", report.to_table()),
        FormatArg::Json => println!("{json}"),
    }
    if let Some(path) = output {
        std::fs::write(path, json)?;
    }
    Ok(())
}

fn cmd_rf(
    units: &[usize],
    residual_convs: u32,
    residual_kernel: u32,
    format: FormatArg,
) -> Result<()> {
    if residual_convs == 0 || residual_kernel == 0 {
        return Err(Error::Format("residual parameters must be positive".into()));
    }
    let rows: Vec<(usize, f64)> = units
        .iter()
        .map(|&n| {
            (
                n,
                receptive_field(&seg_module_layers(n), residual_convs, residual_kernel),
            )
        })
        .collect();
    match format {
        FormatArg::Table => {
            println!("{:<16}{:>16}", "residual units", "receptive field");
            for (n, rf) in &rows {
                println!("{n:<16}{rf:>16.0}");
            }
        }
        FormatArg::Json => {
            let payload: Vec<Value> = rows
                .iter()
                .map(|(n, rf)| serde_json::json!({"units": n, "receptive_field": rf}))
                .collect();
            println!("{}", serde_json::to_string_pretty(&Value::Array(payload))?);
        }
    }
    Ok(())
}
