//! Recovering model parameters and a similarity transform from target vertices.
//!
//! The fit alternates a closed-form similarity alignment with damped
//! Gauss-Newton (Levenberg-Marquardt) steps on pose and shape.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::body_model::{BodyModel, PoseParams, ShapeParams};
use crate::error::{Error, Result};
use crate::uv::{PositionMap, Resampler};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v * self.scale + self.translation
    }

    pub fn apply_all(&self, vs: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        vs.iter().map(|v| self.apply(v)).collect()
    }

    /// `self` after `other`.
    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        SimilarityTransform {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.apply(&other.translation),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        if !(self.scale > 0.0) || (r.determinant() - 1.0).abs() > 1e-9 || (r.transpose() * r - Matrix3::identity()).amax() > 1e-9 {
            return Err(Error::InvalidArgument("not a proper similarity transform".into()));
        }
        Ok(())
    }
}

/// Weighted least-squares similarity `(s, R, t)` taking `x` onto `y`, with the
/// rotation kept proper.
pub fn umeyama(x: &[Vector3<f64>], y: &[Vector3<f64>], w: &[f64]) -> Result<SimilarityTransform> {
    procrustes(x, y, w, true)
}

/// Like [`umeyama`] with the scale fixed to one.
pub fn umeyama_rigid(x: &[Vector3<f64>], y: &[Vector3<f64>], w: &[f64]) -> Result<SimilarityTransform> {
    procrustes(x, y, w, false)
}

fn procrustes(x: &[Vector3<f64>], y: &[Vector3<f64>], w: &[f64], with_scale: bool) -> Result<SimilarityTransform> {
    if x.len() != y.len() || x.len() != w.len() {
        return Err(Error::Dimension(format!(
            "umeyama needs equal lengths, got {}, {}, {}",
            x.len(),
            y.len(),
            w.len()
        )));
    }
    if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument("weights must be finite and >= 0".into()));
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("all alignment weights are zero".into()));
    }
    let mx: Vector3<f64> = x.iter().zip(w).map(|(p, wi)| p * *wi).sum::<Vector3<f64>>() / total;
    let my: Vector3<f64> = y.iter().zip(w).map(|(p, wi)| p * *wi).sum::<Vector3<f64>>() / total;
    let mut cov = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for ((p, q), wi) in x.iter().zip(y).zip(w) {
        let (dx, dy) = (p - mx, q - my);
        cov += dy * dx.transpose() * *wi;
        spread += dx * dx.transpose() * *wi;
    }
    cov /= total;
    spread /= total;
    let var_x = spread.trace();
    let eig = SymmetricEigen::new(spread).eigenvalues;
    let mut ev = [eig[0], eig[1], eig[2]];
    ev.sort_by(f64::total_cmp);
    if !(var_x > 0.0) || ev[1] <= 1e-12 * ev[2] {
        return Err(Error::Degenerate("points are collinear or coincident".into()));
    }
    let svd = cov.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let d = svd.singular_values;
    // singular values come sorted in decreasing order
    let mut signs = Vector3::new(1.0, 1.0, 1.0);
    if u.determinant() * v_t.determinant() < 0.0 {
        signs[2] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&signs) * v_t;
    let scale = if with_scale { d.component_mul(&signs).sum() / var_x } else { 1.0 };
    if !(scale > 0.0) {
        return Err(Error::Degenerate("alignment scale is not positive".into()));
    }
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation: my - rotation * mx * scale,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_outer_iters: usize,
    /// Step attempts per outer iteration.
    pub lm_iters: usize,
    pub lm_damping_init: f64,
    /// L2 weight on pose rows.
    pub pose_prior_weight: f64,
    /// L2 weight on shape coefficients.
    pub shape_prior_weight: f64,
    /// Relative cost decrease below which the fit is declared converged.
    pub convergence_tol: f64,
    /// Per-vertex weights; uniform when absent.
    pub weights: Option<Vec<f64>>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_outer_iters: 50,
            lm_iters: 10,
            lm_damping_init: 1e-3,
            pose_prior_weight: 1e-3,
            shape_prior_weight: 1e-4,
            convergence_tol: 1e-9,
            weights: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self, n_vertices: usize) -> Result<()> {
        if self.max_outer_iters == 0 || self.lm_iters == 0 {
            return Err(Error::InvalidArgument("iteration limits must be positive".into()));
        }
        if !(self.lm_damping_init > 0.0 && self.convergence_tol > 0.0) {
            return Err(Error::InvalidArgument("damping and tolerance must be positive".into()));
        }
        if !(self.pose_prior_weight >= 0.0 && self.shape_prior_weight >= 0.0) {
            return Err(Error::InvalidArgument("prior weights must be >= 0".into()));
        }
        if let Some(w) = &self.weights {
            if w.len() != n_vertices {
                return Err(Error::Dimension(format!(
                    "{} vertex weights for {n_vertices} vertices",
                    w.len()
                )));
            }
            if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || !w.iter().any(|v| *v > 0.0) {
                return Err(Error::InvalidArgument(
                    "vertex weights must be nonnegative and not all zero".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub pose: PoseParams,
    pub shape: ShapeParams,
    pub transform: SimilarityTransform,
    /// Weighted per-coordinate RMS of the data residuals, meters.
    pub rmse_m: f64,
    pub iters: usize,
    pub converged: bool,
}

/// Serializable summary of a [`FitResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub theta: Vec<[f64; 3]>,
    pub beta: Vec<f64>,
    pub s: f64,
    /// Row-major.
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub rmse_mm: f64,
    pub iters: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unreachable_vertices: Vec<usize>,
}

impl FitResult {
    pub fn report(&self) -> FitReport {
        let r = &self.transform.rotation;
        FitReport {
            theta: self.pose.rows().iter().map(|w| [w.x, w.y, w.z]).collect(),
            beta: self.shape.coeffs().to_vec(),
            s: self.transform.scale,
            r: std::array::from_fn(|k| r[(k / 3, k % 3)]),
            t: self.transform.translation.into(),
            rmse_mm: self.rmse_m * 1000.0,
            iters: self.iters,
            converged: self.converged,
            unreachable_vertices: Vec::new(),
        }
    }

    /// Fitted vertices in the target frame.
    pub fn vertices(&self, model: &BodyModel) -> Result<Vec<Vector3<f64>>> {
        Ok(self.transform.apply_all(&model.forward(&self.pose, &self.shape)?.vertices))
    }
}

struct Problem<'a> {
    model: &'a BodyModel,
    target: &'a [Vector3<f64>],
    sqrt_w: Vec<f64>,
    prior: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(model: &'a BodyModel, target: &'a [Vector3<f64>], weights: &[f64], cfg: &FitConfig) -> Self {
        let k3 = 3 * model.n_pose();
        let prior = (0..model.n_params())
            .map(|i| if i < k3 { cfg.pose_prior_weight } else { cfg.shape_prior_weight })
            .collect();
        Problem {
            model,
            target,
            sqrt_w: weights.iter().map(|w| w.sqrt()).collect(),
            prior,
        }
    }

    fn split(&self, p: &[f64]) -> Result<(PoseParams, ShapeParams)> {
        let k3 = 3 * self.model.n_pose();
        Ok((PoseParams::from_flat(&p[..k3])?, ShapeParams::new(p[k3..].to_vec())?))
    }

    fn data_residuals(&self, vertices: &[Vector3<f64>], tr: &SimilarityTransform) -> DVector<f64> {
        let mut r = DVector::zeros(3 * vertices.len() + self.prior.len());
        for (i, v) in vertices.iter().enumerate() {
            let d = (tr.apply(v) - self.target[i]) * self.sqrt_w[i];
            r.fixed_rows_mut::<3>(3 * i).copy_from(&d);
        }
        r
    }

    fn residuals(&self, p: &[f64], tr: &SimilarityTransform) -> Result<DVector<f64>> {
        let (pose, shape) = self.split(p)?;
        let vertices = self.model.forward(&pose, &shape)?.vertices;
        let mut r = self.data_residuals(&vertices, tr);
        let base = 3 * vertices.len();
        for (i, (x, lam)) in p.iter().zip(&self.prior).enumerate() {
            r[base + i] = lam.sqrt() * x;
        }
        Ok(r)
    }

    fn jacobian(
        &self,
        p: &[f64],
        tr: &SimilarityTransform,
    ) -> Result<(Vec<Vector3<f64>>, DVector<f64>, DMatrix<f64>)> {
        let (pose, shape) = self.split(p)?;
        let fj = self.model.forward_with_jacobian(&pose, &shape)?;
        let n = fj.vertices.len();
        let np = p.len();
        let mut r = self.data_residuals(&fj.vertices, tr);
        let mut jac = DMatrix::zeros(3 * n + np, np);
        let sr = tr.rotation * tr.scale;
        for i in 0..n {
            let block = sr * fj.jacobian.fixed_rows::<3>(3 * i) * self.sqrt_w[i];
            jac.view_mut((3 * i, 0), (3, np)).copy_from(&block);
        }
        for (i, (x, lam)) in p.iter().zip(&self.prior).enumerate() {
            r[3 * n + i] = lam.sqrt() * x;
            jac[(3 * n + i, i)] = lam.sqrt();
        }
        Ok((fj.vertices, r, jac))
    }

    fn vertices(&self, p: &[f64]) -> Result<Vec<Vector3<f64>>> {
        let (pose, shape) = self.split(p)?;
        Ok(self.model.forward(&pose, &shape)?.vertices)
    }
}

/// Stacked residuals `[sqrt(w_i) (sR V_i + t - target_i); sqrt(prior) p]`.
pub fn fit_residuals(
    model: &BodyModel,
    pose: &PoseParams,
    shape: &ShapeParams,
    transform: &SimilarityTransform,
    target: &[Vector3<f64>],
    cfg: &FitConfig,
) -> Result<DVector<f64>> {
    let w = resolve_weights(model, target, cfg)?;
    let prob = Problem::new(model, target, &w, cfg);
    let mut p = pose.to_flat();
    p.extend_from_slice(shape.coeffs());
    prob.residuals(&p, transform)
}

/// Jacobian of [`fit_residuals`] with respect to `(pose rows, shape)`.
pub fn fit_jacobian(
    model: &BodyModel,
    pose: &PoseParams,
    shape: &ShapeParams,
    transform: &SimilarityTransform,
    target: &[Vector3<f64>],
    cfg: &FitConfig,
) -> Result<DMatrix<f64>> {
    let w = resolve_weights(model, target, cfg)?;
    let prob = Problem::new(model, target, &w, cfg);
    let mut p = pose.to_flat();
    p.extend_from_slice(shape.coeffs());
    Ok(prob.jacobian(&p, transform)?.2)
}

fn resolve_weights(model: &BodyModel, target: &[Vector3<f64>], cfg: &FitConfig) -> Result<Vec<f64>> {
    let n = model.n_vertices();
    if target.len() != n {
        return Err(Error::Dimension(format!(
            "target has {} vertices, model expects {n}",
            target.len()
        )));
    }
    if let Some(i) = target.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
        return Err(Error::InvalidArgument(format!("target vertex {i} is not finite")));
    }
    cfg.validate(n)?;
    Ok(cfg.weights.clone().unwrap_or_else(|| vec![1.0; n]))
}

fn rmse(r: &DVector<f64>, n: usize, weight_sum: f64) -> f64 {
    let data = r.rows(0, 3 * n).norm_squared();
    (data / (3.0 * weight_sum)).sqrt()
}

/// Columns of the residual Jacobian for an infinitesimal similarity change
/// `(d scale, d rotation (left), d translation)`.
fn similarity_jacobian(prob: &Problem, vertices: &[Vector3<f64>], tr: &SimilarityTransform, rows: usize) -> DMatrix<f64> {
    let mut jt = DMatrix::zeros(rows, 7);
    for (i, v) in vertices.iter().enumerate() {
        let sw = prob.sqrt_w[i];
        let rv = tr.rotation * v;
        let moved = rv * tr.scale;
        let mut block = jt.view_mut((3 * i, 0), (3, 7));
        block.column_mut(0).copy_from(&(rv * sw));
        block.fixed_view_mut::<3, 3>(0, 1).copy_from(&(-crate::rotation::skew(&moved) * sw));
        block.fixed_view_mut::<3, 3>(0, 4).copy_from(&(Matrix3::identity() * sw));
    }
    jt
}

/// Fits `(pose, shape)` and a similarity so that the posed model matches `target`.
///
/// The similarity is always the closed-form optimum for the current pose and
/// shape. Damped Gauss-Newton steps on `(pose, shape)` use the residual
/// Jacobian with the similarity directions projected out, and every trial
/// point is re-aligned before its cost is compared.
pub fn fit_smpl(
    model: &BodyModel,
    target: &[Vector3<f64>],
    cfg: &FitConfig,
    init: Option<(&PoseParams, &ShapeParams)>,
) -> Result<FitResult> {
    let weights = resolve_weights(model, target, cfg)?;
    let weight_sum: f64 = weights.iter().sum();
    let prob = Problem::new(model, target, &weights, cfg);
    let n = model.n_vertices();
    let mut p: Vec<f64> = match init {
        Some((pose, shape)) => {
            if pose.len() != model.n_pose() || shape.len() != model.n_shape() {
                return Err(Error::Dimension("initial parameters do not match the model".into()));
            }
            let mut p = pose.to_flat();
            p.extend_from_slice(shape.coeffs());
            p
        }
        None => vec![0.0; model.n_params()],
    };
    let align = |p: &[f64]| -> Result<(SimilarityTransform, f64)> {
        let tr = umeyama(&prob.vertices(p)?, target, &weights)?;
        let cost = prob.residuals(p, &tr)?.norm_squared();
        Ok((tr, cost))
    };

    let (mut transform, mut cost) = align(&p)?;
    let mut mu = cfg.lm_damping_init;
    let mut iters = 0;
    let mut converged = false;

    for _ in 0..cfg.max_outer_iters {
        iters += 1;
        if rmse(&prob.residuals(&p, &transform)?, n, weight_sum) < 1e-12 {
            converged = true;
            break;
        }
        let (vertices, r, jac) = prob.jacobian(&p, &transform)?;
        let jt = similarity_jacobian(&prob, &vertices, &transform, jac.nrows());
        let jt_j = jt.tr_mul(&jac);
        let jt_r = jt.tr_mul(&r);
        let gram = jt.tr_mul(&jt);
        let Some(gram_inv) = gram.clone().cholesky() else {
            return Err(Error::Degenerate("similarity directions are degenerate".into()));
        };
        let proj_j = gram_inv.solve(&jt_j);
        let proj_r = gram_inv.solve(&jt_r);
        let hess = jac.tr_mul(&jac) - jt_j.tr_mul(&proj_j);
        let grad = jac.tr_mul(&r) - jt_j.tr_mul(&proj_r);
        if grad.amax() == 0.0 {
            converged = true;
            break;
        }

        let start_cost = cost;
        let mut accepted = false;
        for _ in 0..cfg.lm_iters {
            let mut lhs = hess.clone();
            for d in 0..lhs.nrows() {
                lhs[(d, d)] += mu * hess[(d, d)].max(1e-12);
            }
            let Some(ch) = lhs.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let step = ch.solve(&-&grad);
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            match align(&trial) {
                Ok((tr, c)) if c < cost => {
                    p = trial;
                    transform = tr;
                    cost = c;
                    mu = (mu * 0.5).max(1e-12);
                    accepted = true;
                    break;
                }
                _ => mu *= 10.0,
            }
        }
        if !accepted {
            break;
        }
        if start_cost - cost < cfg.convergence_tol * start_cost {
            converged = true;
            break;
        }
    }

    let (pose, shape) = prob.split(&p)?;
    let r = prob.residuals(&p, &transform)?;
    Ok(FitResult {
        pose,
        shape,
        transform,
        rmse_m: rmse(&r, n, weight_sum),
        iters,
        converged,
    })
}

/// Fits to vertices resampled from `map`. Vertices whose uv samples fell back
/// to the nearest valid texel get weight zero.
pub fn fit_from_map(model: &BodyModel, map: &PositionMap, cfg: &FitConfig) -> Result<(FitResult, Vec<usize>)> {
    let sampler = Resampler::for_map(model.uv_layout(), model.n_vertices(), map)?;
    let resampled = sampler.apply(map)?;
    let mut weights = cfg.weights.clone().unwrap_or_else(|| vec![1.0; model.n_vertices()]);
    if weights.len() != model.n_vertices() {
        return Err(Error::Dimension(format!(
            "{} vertex weights for {} vertices",
            weights.len(),
            model.n_vertices()
        )));
    }
    for &v in &resampled.unreachable_vertices {
        weights[v] = 0.0;
    }
    let cfg = FitConfig {
        weights: Some(weights),
        ..cfg.clone()
    };
    let fit = fit_smpl(model, &resampled.vertices, &cfg, None)?;
    Ok((fit, resampled.unreachable_vertices))
}
