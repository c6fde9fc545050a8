//! Orthographic alignment of world meshes to image crops, ground-truth map
//! generation, and label-preserving augmentation.
//!
//! Image coordinates are continuous pixels with x to the right and y down; the
//! pixel with integer index `(col, row)` covers `[col, col+1) x [row, row+1)`.
//! Aligned vertices carry `(x_px, y_px, z)` with `z` the root-relative camera
//! depth in the same pixel scale.

use image::{Rgb, RgbImage};
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::body_model::{BodyModel, Mesh};
use crate::error::{Error, Result};
use crate::uv::{Coverage, PositionMap, Resampler};

pub const DEFAULT_OUT_SIZE: usize = 256;
pub const DEFAULT_CROP_MARGIN: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraExtrinsics {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraExtrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ext = CameraExtrinsics {
            rotation,
            translation,
        };
        ext.validate()?;
        Ok(ext)
    }

    pub fn identity() -> Self {
        CameraExtrinsics {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        if !r.iter().chain(self.translation.iter()).all(|x| x.is_finite()) {
            return Err(Error::InvalidArgument("extrinsics are not finite".into()));
        }
        if (r.determinant() - 1.0).abs() > 1e-9 || (r.transpose() * r - Matrix3::identity()).amax() > 1e-9 {
            return Err(Error::InvalidArgument(
                "extrinsic rotation is not a proper rotation".into(),
            ));
        }
        Ok(())
    }

    pub fn to_camera(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v + self.translation
    }

    pub fn to_world(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (v - self.translation)
    }
}

/// Maps camera-plane meters to output pixels: `px = scale * xy - center_px + out_size / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub center_px: [f64; 2],
    pub scale: f64,
    pub out_size: usize,
}

impl CropSpec {
    pub fn new(center_px: [f64; 2], scale: f64, out_size: usize) -> Result<Self> {
        let crop = CropSpec {
            center_px,
            scale,
            out_size,
        };
        crop.validate()?;
        Ok(crop)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("crop scale {} must be > 0", self.scale)));
        }
        if self.out_size < 8 {
            return Err(Error::InvalidArgument(format!(
                "crop out_size {} must be >= 8",
                self.out_size
            )));
        }
        if !self.center_px.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidArgument("crop center is not finite".into()));
        }
        Ok(())
    }

    /// Square crop around the camera-plane bounding box of `points`, each side
    /// expanded by `margin` of the box size.
    pub fn from_bbox(points_cam: &[Vector3<f64>], out_size: usize, margin: f64) -> Result<Self> {
        let (lo, hi) = bbox_xy(points_cam)?;
        let side = (hi - lo).max() * (1.0 + 2.0 * margin);
        if !(side > 0.0) {
            return Err(Error::Degenerate("mesh has zero extent in the image plane".into()));
        }
        let scale = out_size as f64 / side;
        let c = (lo + hi) * 0.5;
        Self::new([c.x * scale, c.y * scale], scale, out_size)
    }

    /// Crop with a fixed scale, centered on the bounding box of `points`.
    pub fn centered(points_cam: &[Vector3<f64>], scale: f64, out_size: usize) -> Result<Self> {
        let (lo, hi) = bbox_xy(points_cam)?;
        let c = (lo + hi) * 0.5;
        Self::new([c.x * scale, c.y * scale], scale, out_size)
    }

    pub fn project(&self, cam: &Vector3<f64>) -> Vector2<f64> {
        let half = self.out_size as f64 / 2.0;
        Vector2::new(
            self.scale * cam.x - self.center_px[0] + half,
            self.scale * cam.y - self.center_px[1] + half,
        )
    }

    pub fn unproject(&self, px: &Vector2<f64>) -> Vector2<f64> {
        let half = self.out_size as f64 / 2.0;
        Vector2::new(
            (px.x - half + self.center_px[0]) / self.scale,
            (px.y - half + self.center_px[1]) / self.scale,
        )
    }
}

fn bbox_xy(points: &[Vector3<f64>]) -> Result<(Vector2<f64>, Vector2<f64>)> {
    if points.is_empty() {
        return Err(Error::Degenerate("no points to crop".into()));
    }
    let mut lo = Vector2::repeat(f64::INFINITY);
    let mut hi = Vector2::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(&p.xy());
        hi = hi.sup(&p.xy());
    }
    Ok((lo, hi))
}

/// Everything needed to map aligned vertices back to world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignFrame {
    pub extrinsics: CameraExtrinsics,
    pub crop: CropSpec,
    /// Camera-frame depth of the root joint, meters.
    pub root_depth: f64,
}

impl AlignFrame {
    pub fn align_point(&self, world: &Vector3<f64>) -> Vector3<f64> {
        let cam = self.extrinsics.to_camera(world);
        let px = self.crop.project(&cam);
        Vector3::new(px.x, px.y, self.crop.scale * (cam.z - self.root_depth))
    }

    pub fn inverse_point(&self, aligned: &Vector3<f64>) -> Vector3<f64> {
        let xy = self.crop.unproject(&aligned.xy());
        let cam = Vector3::new(xy.x, xy.y, aligned.z / self.crop.scale + self.root_depth);
        self.extrinsics.to_world(&cam)
    }

    pub fn inverse(&self, aligned: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        aligned.iter().map(|v| self.inverse_point(v)).collect()
    }
}

fn check_finite(mesh: &Mesh) -> Result<()> {
    match mesh.vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
        Some(i) => Err(Error::InvalidArgument(format!("vertex {i} is not finite"))),
        None => Ok(()),
    }
}

/// Aligns a world mesh to the crop and returns the frame used.
pub fn align_orthographic(
    mesh: &Mesh,
    ext: &CameraExtrinsics,
    crop: &CropSpec,
    root: usize,
    model: &BodyModel,
) -> Result<(Mesh, AlignFrame)> {
    check_finite(mesh)?;
    ext.validate()?;
    crop.validate()?;
    if root >= model.n_joints() {
        return Err(Error::InvalidArgument(format!(
            "root joint {root} out of range ({} joints)",
            model.n_joints()
        )));
    }
    let joints = model.regress(&mesh.vertices)?;
    let frame = AlignFrame {
        extrinsics: *ext,
        crop: *crop,
        root_depth: ext.to_camera(&joints.positions[root]).z,
    };
    let vertices = mesh.vertices.iter().map(|v| frame.align_point(v)).collect();
    Ok((Mesh { vertices }, frame))
}

/// Ground-truth position map of a world mesh seen through `ext` and `crop`.
pub fn make_ground_truth(
    mesh_world: &Mesh,
    ext: &CameraExtrinsics,
    crop: &CropSpec,
    model: &BodyModel,
) -> Result<(PositionMap, AlignFrame)> {
    let (aligned, frame) = align_orthographic(mesh_world, ext, crop, model.root_joint(), model)?;
    let map = Coverage::new(model.uv_layout(), crop.out_size)?.render(&aligned.vertices)?;
    Ok((map, frame))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorJitter {
    pub gain: [f64; 3],
    /// In 8-bit intensity units.
    pub offset: [f64; 3],
}

impl ColorJitter {
    pub fn identity() -> Self {
        ColorJitter {
            gain: [1.0; 3],
            offset: [0.0; 3],
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    pub fn apply(&self, image: &mut RgbImage) {
        if self.is_identity() {
            return;
        }
        for px in image.pixels_mut() {
            for c in 0..3 {
                let v = self.gain[c] * px[c] as f64 + self.offset[c];
                px[c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
}

/// In-image similarity `x -> R(rotate)(F(x) - c) + c + translate` with `c`
/// the crop center and `F` the optional horizontal flip `x -> out_size - x`.
/// Positive rotation turns +x toward +y (clockwise on screen).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub translate_px: [f64; 2],
    pub rotate_deg: f64,
    pub flip: bool,
    pub jitter: ColorJitter,
}

/// Sampling ranges for [`AugmentParams::random`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentRanges {
    pub max_translate_px: f64,
    pub max_rotate_deg: f64,
    pub flip_prob: f64,
    pub max_gain_delta: f64,
    pub max_offset: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            max_translate_px: 16.0,
            max_rotate_deg: 30.0,
            flip_prob: 0.5,
            max_gain_delta: 0.2,
            max_offset: 20.0,
        }
    }
}

fn rot2(deg: f64) -> Matrix2<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix2::new(c, -s, s, c)
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            translate_px: [0.0; 2],
            rotate_deg: 0.0,
            flip: false,
            jitter: ColorJitter::identity(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self
            .translate_px
            .iter()
            .chain(&self.jitter.gain)
            .chain(&self.jitter.offset)
            .chain([&self.rotate_deg])
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("augment parameters are not finite".into()));
        }
        if self.jitter.gain.iter().any(|g| *g <= 0.0) {
            return Err(Error::InvalidArgument("jitter gains must be > 0".into()));
        }
        Ok(())
    }

    pub fn is_geometric_identity(&self) -> bool {
        self.translate_px == [0.0; 2] && self.rotate_deg == 0.0 && !self.flip
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, ranges: &AugmentRanges) -> Self {
        let mut sym = |m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
        let translate_px = [sym(ranges.max_translate_px), sym(ranges.max_translate_px)];
        let rotate_deg = sym(ranges.max_rotate_deg);
        let gain = [0; 3].map(|_| 1.0 + sym(ranges.max_gain_delta));
        let offset = [0; 3].map(|_| sym(ranges.max_offset));
        let flip = rng.random_bool(ranges.flip_prob.clamp(0.0, 1.0));
        AugmentParams {
            translate_px,
            rotate_deg,
            flip,
            jitter: ColorJitter { gain, offset },
        }
    }

    /// Parameters whose transform undoes this one.
    pub fn inverse(&self) -> Self {
        let t = Vector2::from(self.translate_px);
        let (rotate_deg, t_inv) = if self.flip {
            let m = Matrix2::new(-1.0, 0.0, 0.0, 1.0);
            (self.rotate_deg, -(rot2(self.rotate_deg) * m * t))
        } else {
            (-self.rotate_deg, -(rot2(-self.rotate_deg) * t))
        };
        AugmentParams {
            translate_px: [t_inv.x, t_inv.y],
            rotate_deg,
            flip: self.flip,
            jitter: ColorJitter {
                gain: self.jitter.gain.map(|g| 1.0 / g),
                offset: std::array::from_fn(|c| -self.jitter.offset[c] / self.jitter.gain[c]),
            },
        }
    }

    pub fn transform_point(&self, p: &Vector2<f64>, out_size: usize) -> Vector2<f64> {
        let c = Vector2::repeat(out_size as f64 / 2.0);
        let mut d = p - c;
        if self.flip {
            d.x = -d.x;
        }
        rot2(self.rotate_deg) * d + c + Vector2::from(self.translate_px)
    }

    pub fn inverse_point(&self, q: &Vector2<f64>, out_size: usize) -> Vector2<f64> {
        let c = Vector2::repeat(out_size as f64 / 2.0);
        let mut d = rot2(-self.rotate_deg) * (q - c - Vector2::from(self.translate_px));
        if self.flip {
            d.x = -d.x;
        }
        d + c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<AlignFrame>,
    /// Augmentations applied so far, oldest first.
    #[serde(default)]
    pub augmentations: Vec<AugmentParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: RgbImage,
    pub gt_map: PositionMap,
    pub meta: SampleMeta,
}

impl Sample {
    pub fn new(image: RgbImage, gt_map: PositionMap, meta: SampleMeta) -> Result<Self> {
        let (w, h) = image.dimensions();
        let r = gt_map.resolution();
        if w as usize != r || h as usize != r {
            return Err(Error::Dimension(format!(
                "image is {w}x{h} but the map resolution is {r}"
            )));
        }
        Ok(Sample {
            image,
            gt_map,
            meta,
        })
    }
}

fn sample_bilinear(image: &RgbImage, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = (image.width() as i64, image.height() as i64);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let mut out = [0.0; 3];
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let (xi, yi) = (x0 as i64 + dx, y0 as i64 + dy);
            if xi < 0 || yi < 0 || xi >= w || yi >= h || wx * wy == 0.0 {
                continue;
            }
            let p = image.get_pixel(xi as u32, yi as u32);
            for c in 0..3 {
                out[c] += wx * wy * p[c] as f64;
            }
        }
    }
    out
}

/// Cuts the crop window out of a source image whose pixel frame shares the
/// crop scale, so the window is `center_px ± out_size / 2`. Outside is black.
pub fn crop_image(image: &RgbImage, crop: &CropSpec) -> RgbImage {
    let n = crop.out_size as u32;
    let half = crop.out_size as f64 / 2.0;
    RgbImage::from_fn(n, n, |col, row| {
        let x = col as f64 + crop.center_px[0] - half;
        let y = row as f64 + crop.center_px[1] - half;
        Rgb(sample_bilinear(image, x, y).map(|v| v.round().clamp(0.0, 255.0) as u8))
    })
}

/// Resamples `image` under the geometric part of `p`; pixels from outside the
/// source are black.
pub fn warp_image(image: &RgbImage, p: &AugmentParams) -> RgbImage {
    let size = image.width() as usize;
    RgbImage::from_fn(image.width(), image.height(), |col, row| {
        let q = Vector2::new(col as f64 + 0.5, row as f64 + 0.5);
        let src = p.inverse_point(&q, size);
        let v = sample_bilinear(image, src.x - 0.5, src.y - 0.5);
        Rgb(v.map(|x| x.round().clamp(0.0, 255.0) as u8))
    })
}

/// Applies the similarity to aligned vertices; on flip, vertex `i` takes the
/// transformed position of its mirror twin.
pub fn transform_vertices(
    vertices: &[Vector3<f64>],
    p: &AugmentParams,
    out_size: usize,
    mirror_perm: Option<&[u32]>,
) -> Result<Vec<Vector3<f64>>> {
    let moved: Vec<Vector3<f64>> = vertices
        .iter()
        .map(|v| {
            let xy = p.transform_point(&v.xy(), out_size);
            Vector3::new(xy.x, xy.y, v.z)
        })
        .collect();
    if !p.flip {
        return Ok(moved);
    }
    let perm = mirror_perm
        .ok_or_else(|| Error::InvalidModel("flip requires a model with mirror_perm".into()))?;
    if perm.len() != moved.len() {
        return Err(Error::Dimension(format!(
            "mirror_perm has {} entries for {} vertices",
            perm.len(),
            moved.len()
        )));
    }
    Ok(perm.iter().map(|&src| moved[src as usize]).collect())
}

/// Augments a sample; the ground truth is regenerated by resampling,
/// transforming and re-rendering.
pub fn augment(sample: &Sample, p: &AugmentParams, model: &BodyModel) -> Result<Sample> {
    p.validate()?;
    if p.flip && model.mirror_perm().is_none() {
        return Err(Error::InvalidModel("flip requires a model with mirror_perm".into()));
    }
    let res = sample.gt_map.resolution();
    let gt_map = if p.is_geometric_identity() {
        sample.gt_map.clone()
    } else {
        let layout = model.uv_layout();
        let sampler = Resampler::for_map(layout, model.n_vertices(), &sample.gt_map)?;
        let verts = sampler.apply(&sample.gt_map)?.vertices;
        let moved = transform_vertices(&verts, p, res, model.mirror_perm())?;
        Coverage::new(layout, res)?.render(&moved)?
    };
    let mut image = if p.is_geometric_identity() {
        sample.image.clone()
    } else {
        warp_image(&sample.image, p)
    };
    p.jitter.apply(&mut image);
    let mut meta = sample.meta.clone();
    meta.augmentations.push(*p);
    Sample::new(image, gt_map, meta)
}
