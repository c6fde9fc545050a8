use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use image::RgbImage;
use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{read_json, usage, write_file, write_json, CliResult, RunContext};
use crate::binio::{read_vertices, write_vertices};
use crate::body_model::{load_model, save_model, synth_model, BodyModel, Mesh, PoseParams, ShapeParams};
use crate::camera_align::{
    augment, crop_image, make_ground_truth, AugmentParams, AugmentRanges, CameraExtrinsics, ColorJitter, CropSpec,
    Sample, SampleMeta, DEFAULT_CROP_MARGIN, DEFAULT_OUT_SIZE,
};
use crate::error::Error;
use crate::fitting::{fit_from_map, fit_smpl, FitConfig};
use crate::metrics::{evaluate_batch, MetricModes, RootAlign, SurfaceAlign};
use crate::objective::{model_weight_mask, total_loss, LossConfig};
use crate::uv::{random_samples, render_position_map, resolution_study, PositionMap, Resampler, WeightMaskConfig};

const DEFAULT_RESOLUTION: usize = 256;
const DEFAULT_SUBDIV: u32 = 2;
const DEFAULT_STUDY_SAMPLES: usize = 10;
const GRAY: u8 = 128;

fn req<T: Clone>(v: &Option<T>, flag: &str) -> CliResult<T> {
    v.clone().ok_or_else(|| usage(format!("--{flag} is required")))
}

fn load(dir: &Option<PathBuf>) -> CliResult<BodyModel> {
    Ok(load_model(&req(dir, "model")?)?)
}

/// Pose and shape as written by `fit`; other fields are ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseShape {
    pub theta: Vec<[f64; 3]>,
    pub beta: Vec<f64>,
}

impl PoseShape {
    fn params(&self) -> crate::Result<(PoseParams, ShapeParams)> {
        let pose = PoseParams::new(self.theta.iter().map(|r| Vector3::from(*r)).collect())?;
        Ok((pose, ShapeParams::new(self.beta.clone())?))
    }
}

fn posed_vertices(model: &BodyModel, ps: &PoseShape) -> crate::Result<Vec<Vector3<f64>>> {
    let (pose, shape) = ps.params()?;
    Ok(model.forward(&pose, &shape)?.vertices)
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ModelSynthOpts {
    /// Output model directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Icosphere subdivision level of each body part.
    #[arg(long)]
    pub subdiv: Option<u32>,
}

pub fn model_synth(o: &ModelSynthOpts, ctx: &RunContext) -> CliResult<()> {
    let out = ctx.output(&req(&o.out, "out")?);
    let model = synth_model(ctx.seed, o.subdiv.unwrap_or(DEFAULT_SUBDIV))?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    save_model(&model, &out)?;
    ctx.write_sidecar(&out)
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct UvRenderOpts {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output UVPM file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub res: Option<usize>,
    /// Vertex file to render; the template when neither this nor --params is given.
    #[arg(long)]
    pub vertices: Option<PathBuf>,
    /// JSON with `theta` and `beta` to pose the model.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Also export a 16-bit PNG.
    #[arg(long)]
    pub png: Option<PathBuf>,
}

pub fn uv_render(o: &UvRenderOpts, ctx: &RunContext) -> CliResult<()> {
    let model = load(&o.model)?;
    let out = ctx.output(&req(&o.out, "out")?);
    let vertices = match (&o.vertices, &o.params) {
        (Some(_), Some(_)) => return Err(usage("--vertices and --params are exclusive")),
        (Some(v), None) => read_vertices(v)?,
        (None, Some(p)) => posed_vertices(&model, &read_json(p)?)?,
        (None, None) => model.template().to_vec(),
    };
    let map = render_position_map(model.uv_layout(), &vertices, o.res.unwrap_or(DEFAULT_RESOLUTION))?;
    write_file(&out, &map.to_bytes())?;
    ctx.write_sidecar(&out)?;
    if let Some(png) = &o.png {
        let png = ctx.output(png);
        if let Some(dir) = png.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let range = map.save_png(&png)?;
        ctx.write_sidecar_with(&png, json!({ "range": range }))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct UvResampleOpts {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Output vertex file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn uv_resample(o: &UvResampleOpts, ctx: &RunContext) -> CliResult<()> {
    let model = load(&o.model)?;
    let map = PositionMap::load(&req(&o.map, "map")?)?;
    let out = ctx.output(&req(&o.out, "out")?);
    let res = Resampler::for_map(model.uv_layout(), model.n_vertices(), &map)?.apply(&map)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_vertices(&out, &res.vertices)?;
    ctx.write_sidecar_with(
        &out,
        json!({ "unreachable_uv": res.unreachable_uv, "unreachable_vertices": res.unreachable_vertices }),
    )
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct StudyOpts {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Comma-separated, strictly increasing resolutions.
    #[arg(long, value_delimiter = ',')]
    pub res: Option<Vec<usize>>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Output CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn study(o: &StudyOpts, ctx: &RunContext) -> CliResult<()> {
    let model = load(&o.model)?;
    let out = ctx.output(&req(&o.out, "out")?);
    let resolutions = o.res.clone().unwrap_or_else(|| vec![32, 64, 128, 256]);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let samples = random_samples(&mut rng, &model, o.samples.unwrap_or(DEFAULT_STUDY_SAMPLES));
    let report = resolution_study(&model, &samples, &resolutions)?;
    write_file(&out, report.to_csv().as_bytes())?;
    ctx.write_sidecar(&out)
}

/// One line of a preprocessing manifest. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    #[serde(default)]
    pub image: Option<PathBuf>,
    /// World-to-camera rotation, rows.
    #[serde(default)]
    pub rotation: Option<[[f64; 3]; 3]>,
    #[serde(default)]
    pub translation: Option<[f64; 3]>,
    /// World-space vertex file.
    #[serde(default)]
    pub mesh: Option<PathBuf>,
    #[serde(default)]
    pub theta: Option<Vec<[f64; 3]>>,
    #[serde(default)]
    pub beta: Option<Vec<f64>>,
    #[serde(default)]
    pub crop: Option<CropSpec>,
}

fn parse_manifest<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                Error::format(format!("{} line {}", path.display(), i + 1), e.to_string()).into()
            })
        })
        .collect()
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_relative() {
        base.join(p)
    } else {
        p.to_path_buf()
    }
}

fn check_id(id: &str) -> crate::Result<()> {
    let ok = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) && id != "." && id != "..";
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("sample id {id:?} is not a plain file name")))
    }
}

fn load_image(path: &Path) -> crate::Result<RgbImage> {
    Ok(image::open(path)?.to_rgb8())
}

fn save_sample(dir: &Path, name: &str, s: &Sample) -> CliResult<Vec<PathBuf>> {
    let map = dir.join(format!("{name}.uvpm"));
    let png = dir.join(format!("{name}.png"));
    let meta = dir.join(format!("{name}.json"));
    write_file(&map, &s.gt_map.to_bytes())?;
    s.image.save(&png).map_err(Error::from)?;
    write_json(&meta, &s.meta)?;
    Ok(vec![map, png, meta])
}

fn sample_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct PreprocessOpts {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// JSON-lines manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Map and image size for records without a crop.
    #[arg(long)]
    pub res: Option<usize>,
    /// Bounding-box margin for records without a crop.
    #[arg(long)]
    pub margin: Option<f64>,
    /// Random augmentations written per sample.
    #[arg(long)]
    pub augment: Option<usize>,
    #[arg(skip)]
    pub ranges: Option<AugmentRanges>,
}

fn preprocess_one(
    rec: &ManifestRecord,
    index: usize,
    base: &Path,
    model: &BodyModel,
    o: &PreprocessOpts,
    ctx: &RunContext,
    out: &Path,
) -> CliResult<Vec<PathBuf>> {
    check_id(&rec.id)?;
    let vertices = match (&rec.mesh, &rec.theta) {
        (Some(_), Some(_)) => {
            return Err(Error::InvalidArgument(format!("record {}: mesh and theta are exclusive", rec.id)).into())
        }
        (Some(m), None) => read_vertices(&resolve(base, m))?,
        (None, theta) => {
            let ps = PoseShape {
                theta: theta.clone().unwrap_or_else(|| vec![[0.0; 3]; model.n_pose()]),
                beta: rec.beta.clone().unwrap_or_else(|| vec![0.0; model.n_shape()]),
            };
            posed_vertices(model, &ps)?
        }
    };
    let ext = CameraExtrinsics::new(
        rec.rotation.map_or_else(Matrix3::identity, |r| Matrix3::from_fn(|i, j| r[i][j])),
        Vector3::from(rec.translation.unwrap_or([0.0; 3])),
    )?;
    let crop = match rec.crop {
        Some(c) => c,
        None => {
            let cam: Vec<_> = vertices.iter().map(|v| ext.to_camera(v)).collect();
            CropSpec::from_bbox(
                &cam,
                o.res.unwrap_or(DEFAULT_OUT_SIZE),
                o.margin.unwrap_or(DEFAULT_CROP_MARGIN),
            )?
        }
    };
    let (gt_map, frame) = make_ground_truth(&Mesh { vertices }, &ext, &crop, model)?;
    let n = crop.out_size as u32;
    let image = match &rec.image {
        Some(p) => crop_image(&load_image(&resolve(base, p))?, &crop),
        None => RgbImage::from_pixel(n, n, image::Rgb([GRAY; 3])),
    };
    let meta = SampleMeta {
        id: rec.id.clone(),
        frame: Some(frame),
        augmentations: Vec::new(),
    };
    let sample = Sample::new(image, gt_map, meta)?;
    let mut written = save_sample(out, &rec.id, &sample)?;
    let ranges = o.ranges.unwrap_or_default();
    let mut rng = sample_rng(ctx.seed, index as u64);
    for a in 0..o.augment.unwrap_or(0) {
        let p = AugmentParams::random(&mut rng, &ranges);
        let aug = augment(&sample, &p, model)?;
        written.extend(save_sample(out, &format!("{}_aug{a}", rec.id), &aug)?);
    }
    Ok(written)
}

pub fn preprocess(o: &PreprocessOpts, ctx: &RunContext) -> CliResult<()> {
    let model = load(&o.model)?;
    let manifest = req(&o.manifest, "manifest")?;
    let out = ctx.output(&req(&o.out, "out")?);
    let records: Vec<ManifestRecord> = parse_manifest(&manifest)?;
    let mut ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument(format!("duplicate sample id {:?}", w[0])).into());
    }
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let written = records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| preprocess_one(rec, i, &base, &model, o, ctx, &out))
        .collect::<CliResult<Vec<_>>>()?;
    let mut index = String::new();
    for (rec, files) in records.iter().zip(&written) {
        let names: Vec<_> = files
            .iter()
            .map(|f| f.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect();
        index.push_str(&json!({ "id": rec.id, "files": names }).to_string());
        index.push('\n');
    }
    write_file(&out.join("index.jsonl"), index.as_bytes())?;
    ctx.write_sidecar(&out)
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct AugmentOpts {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Ground-truth UVPM of the sample.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Sample image; mid-gray when absent.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Sample metadata JSON as written by `preprocess`.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of random augmentations, ignored when explicit parameters are given.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, num_args = 2, value_names = ["DX", "DY"], allow_negative_numbers = true)]
    pub translate_px: Option<Vec<f64>>,
    #[arg(long, allow_negative_numbers = true)]
    pub rotate_deg: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub flip: Option<bool>,
    /// Color gain applied to all channels.
    #[arg(long)]
    pub gain: Option<f64>,
    /// Color offset applied to all channels, in 8-bit units.
    #[arg(long, allow_negative_numbers = true)]
    pub offset: Option<f64>,
    #[arg(skip)]
    pub ranges: Option<AugmentRanges>,
}

impl AugmentOpts {
    fn explicit(&self) -> CliResult<Option<AugmentParams>> {
        if self.translate_px.is_none()
            && self.rotate_deg.is_none()
            && self.flip.is_none()
            && self.gain.is_none()
            && self.offset.is_none()
        {
            return Ok(None);
        }
        let translate_px = match self.translate_px.as_deref() {
            None => [0.0; 2],
            Some([x, y]) => [*x, *y],
            Some(_) => return Err(usage("--translate-px takes two values")),
        };
        Ok(Some(AugmentParams {
            translate_px,
            rotate_deg: self.rotate_deg.unwrap_or(0.0),
            flip: self.flip.unwrap_or(false),
            jitter: ColorJitter {
                gain: [self.gain.unwrap_or(1.0); 3],
                offset: [self.offset.unwrap_or(0.0); 3],
            },
        }))
    }
}

pub fn augment_cmd(o: &AugmentOpts, ctx: &RunContext) -> CliResult<()> {
    let model = load(&o.model)?;
    let gt_map = PositionMap::load(&req(&o.map, "map")?)?;
    let out = ctx.output(&req(&o.out, "out")?);
    let n = gt_map.resolution() as u32;
    let image = match &o.image {
        Some(p) => load_image(p)?,
        None => RgbImage::from_pixel(n, n, image::Rgb([GRAY; 3])),
    };
    let meta = match &o.meta {
        Some(p) => read_json(p)?,
        None => SampleMeta {
            id: "sample".into(),
            frame: None,
            augmentations: Vec::new(),
        },
    };
    check_id(&meta.id)?;
    let sample = Sample::new(image, gt_map, meta)?;
    let params = match o.explicit()? {
        Some(p) => vec![p],
        None => {
            let ranges = o.ranges.unwrap_or_default();
            (0..o.count.unwrap_or(1))
                .map(|k| AugmentParams::random(&mut sample_rng(ctx.seed, k as u64), &ranges))
                .collect()
        }
    };
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    params
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            let aug = augment(&sample, p, &model)?;
            save_sample(&out, &format!("{}_aug{k}", sample.meta.id), &aug).map(|_| ())
        })
        .collect::<CliResult<Vec<_>>>()?;
    ctx.write_sidecar(&out)
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct LossEvalOpts {
    /// Model whose parts and joints define the weight mask.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// TV weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub joint_gain: Option<f64>,
    /// Also write the breakdown to this JSON file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(skip)]
    pub alpha: Option<Vec<f64>>,
    #[arg(skip)]
    pub joint: Option<crate::objective::JointTerm>,
}

pub fn loss_eval(o: &LossEvalOpts, ctx: &RunContext) -> CliResult<()> {
    let model = load(&o.model)?;
    let pred = PositionMap::load(&req(&o.pred, "pred")?)?;
    let gt = PositionMap::load(&req(&o.gt, "gt")?)?;
    let mut mask_cfg = WeightMaskConfig::for_resolution(gt.resolution());
    if let Some(g) = o.joint_gain {
        mask_cfg.joint_gain = g;
    }
    let mask = model_weight_mask(&model, gt.resolution(), &mask_cfg)?;
    let cfg = LossConfig {
        lambda: o.lambda.unwrap_or(LossConfig::default().lambda),
        alpha: o.alpha.clone(),
        joint: o.joint.clone(),
    };
    let breakdown = total_loss(&pred, &gt, &cfg, &mask, Some(&model))?;
    println!("{}", serde_json::to_string(&breakdown).map_err(Error::from)?);
    if let Some(out) = &o.out {
        let out = ctx.output(out);
        write_json(&out, &breakdown)?;
        ctx.write_sidecar(&out)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct FitOpts {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// UVPM to fit; unreachable vertices get zero weight.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Raw vertex file to fit instead of a map.
    #[arg(long)]
    pub vertices: Option<PathBuf>,
    /// Output FitResult JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_outer_iters: Option<usize>,
    #[arg(long)]
    pub lm_iters: Option<usize>,
    #[arg(long)]
    pub lm_damping_init: Option<f64>,
    #[arg(long)]
    pub pose_prior_weight: Option<f64>,
    #[arg(long)]
    pub shape_prior_weight: Option<f64>,
    #[arg(long)]
    pub convergence_tol: Option<f64>,
    #[arg(skip)]
    pub weights: Option<Vec<f64>>,
}

impl FitOpts {
    fn fit_config(&self) -> FitConfig {
        let d = FitConfig::default();
        FitConfig {
            max_outer_iters: self.max_outer_iters.unwrap_or(d.max_outer_iters),
            lm_iters: self.lm_iters.unwrap_or(d.lm_iters),
            lm_damping_init: self.lm_damping_init.unwrap_or(d.lm_damping_init),
            pose_prior_weight: self.pose_prior_weight.unwrap_or(d.pose_prior_weight),
            shape_prior_weight: self.shape_prior_weight.unwrap_or(d.shape_prior_weight),
            convergence_tol: self.convergence_tol.unwrap_or(d.convergence_tol),
            weights: self.weights.clone(),
        }
    }
}

pub fn fit(o: &FitOpts, ctx: &RunContext) -> CliResult<()> {
    let model = load(&o.model)?;
    let out = ctx.output(&req(&o.out, "out")?);
    let cfg = o.fit_config();
    cfg.validate(model.n_vertices())?;
    let report = match (&o.map, &o.vertices) {
        (Some(m), None) => {
            let (result, unreachable) = fit_from_map(&model, &PositionMap::load(m)?, &cfg)?;
            let mut r = result.report();
            r.unreachable_vertices = unreachable;
            r
        }
        (None, Some(v)) => fit_smpl(&model, &read_vertices(v)?, &cfg, None)?.report(),
        _ => return Err(usage("exactly one of --map and --vertices is required")),
    };
    write_json(&out, &report)?;
    ctx.write_sidecar(&out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MetricsRecord {
    path: PathBuf,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct MetricsOpts {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// JSON-lines of `{"path": ...}` to UVPM or vertex files.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Output MetricReport JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-sample CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mpjpe_mode: Option<RootAlignArg>,
    #[arg(long, value_enum)]
    pub surface_mode: Option<SurfaceAlignArg>,
    /// Procrustes with scale (default) or rigid only.
    #[arg(long)]
    pub pa_scale: Option<bool>,
    /// Comma-separated joint indices for MPJPE; all when absent.
    #[arg(long, value_delimiter = ',')]
    pub joints: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootAlignArg {
    DepthOnly,
    FullRoot,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceAlignArg {
    Raw,
    RootDepth,
}

fn load_vertex_set(model: &BodyModel, path: &Path) -> crate::Result<Vec<Vector3<f64>>> {
    let vertices = if path.extension().is_some_and(|e| e == "uvpm") {
        let map = PositionMap::load(path)?;
        Resampler::for_map(model.uv_layout(), model.n_vertices(), &map)?.apply(&map)?.vertices
    } else {
        read_vertices(path)?
    };
    if vertices.len() != model.n_vertices() {
        return Err(Error::ShapeMismatch {
            what: path.display().to_string(),
            expected: model.n_vertices(),
            found: vertices.len(),
        });
    }
    Ok(vertices)
}

fn load_vertex_manifest(model: &BodyModel, manifest: &Path) -> CliResult<Vec<Vec<Vector3<f64>>>> {
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let records: Vec<MetricsRecord> = parse_manifest(manifest)?;
    Ok(records
        .par_iter()
        .map(|r| load_vertex_set(model, &resolve(&base, &r.path)))
        .collect::<crate::Result<Vec<_>>>()?)
}

pub fn metrics_cmd(o: &MetricsOpts, ctx: &RunContext) -> CliResult<()> {
    let model = load(&o.model)?;
    let preds = load_vertex_manifest(&model, &req(&o.pred, "pred")?)?;
    let gts = load_vertex_manifest(&model, &req(&o.gt, "gt")?)?;
    let out = ctx.output(&req(&o.out, "out")?);
    let modes = MetricModes {
        mpjpe: match o.mpjpe_mode {
            Some(RootAlignArg::FullRoot) => RootAlign::FullRoot,
            _ => RootAlign::DepthOnly,
        },
        pa_scale: o.pa_scale.unwrap_or(true),
        surface: match o.surface_mode {
            Some(SurfaceAlignArg::RootDepth) => SurfaceAlign::RootDepth,
            _ => SurfaceAlign::Raw,
        },
    };
    let report = evaluate_batch(&preds, &gts, &model, o.joints.as_deref(), modes)?;
    write_json(&out, &report)?;
    ctx.write_sidecar(&out)?;
    if let Some(csv) = &o.csv {
        let csv = ctx.output(csv);
        write_file(&csv, report.to_csv().as_bytes())?;
        ctx.write_sidecar(&csv)?;
    }
    Ok(())
}
