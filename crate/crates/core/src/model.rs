//! The NOSTILL model: an observation GP with a non-stationary kernel whose
//! log length scales are the posterior means of three latent GPs, one per
//! input dimension, each conditioned on values at `m` latent points.
//!
//! All hyperparameters (base kernel variance, noise, latent values and the
//! latent GPs' own length scales) are learned together by maximizing the
//! observation log marginal likelihood.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{bounding_box, normalize, Dataset, Normalization, SpaceTimePoint};
use crate::error::{Error, Result};
use crate::gp::{Covariance, GpPosterior, JitteredCholesky, Prediction};
use crate::kernels::{esgp_unit_dtau2, gram_stationary, KernelFamily, KernelSpec};
use crate::nonstationary::{entry, entry_grad, gram_nonstationary, LatentLengthField};
use crate::optimize::{maximize, Bound, LogEntry, TrainConfig};

/// Noise on the latent GPs, for conditioning only.
pub const LATENT_NOISE: f64 = 1e-6;

pub const MODEL_FORMAT_VERSION: u32 = 1;

const DIMS: [&str; 3] = ["x", "y", "t"];

#[derive(Debug, Clone, PartialEq)]
pub struct NostillParams {
    /// `Ch1` or `Ch2`, evaluated on locally scaled distances.
    pub base: KernelSpec,
    pub noise_var: f64,
    /// Taper every entry with the unit exact-sparse kernel.
    pub sparse: bool,
    pub latent_points: Vec<SpaceTimePoint>,
    pub log_lbar_x: Vec<f64>,
    pub log_lbar_y: Vec<f64>,
    pub log_lbar_t: Vec<f64>,
    /// Latent GP kernels: `Esgp` with unit variance and three length scales.
    pub theta_lx: KernelSpec,
    pub theta_ly: KernelSpec,
    pub theta_lt: KernelSpec,
}

/// `Esgp` kernel with unit variance and the given length scales.
pub fn latent_kernel(scales: [f64; 3]) -> KernelSpec {
    KernelSpec::new(KernelFamily::Esgp, 1.0).with_length_scales(scales)
}

fn scales_of(spec: &KernelSpec) -> [f64; 3] {
    match spec.length_scales.as_deref() {
        Some([a, b, c]) => [*a, *b, *c],
        _ => [1.0; 3],
    }
}

impl NostillParams {
    pub fn m(&self) -> usize {
        self.latent_points.len()
    }

    pub fn log_lbar(&self, d: usize) -> &[f64] {
        match d {
            0 => &self.log_lbar_x,
            1 => &self.log_lbar_y,
            _ => &self.log_lbar_t,
        }
    }

    fn log_lbar_mut(&mut self, d: usize) -> &mut Vec<f64> {
        match d {
            0 => &mut self.log_lbar_x,
            1 => &mut self.log_lbar_y,
            _ => &mut self.log_lbar_t,
        }
    }

    pub fn theta(&self, d: usize) -> &KernelSpec {
        match d {
            0 => &self.theta_lx,
            1 => &self.theta_ly,
            _ => &self.theta_lt,
        }
    }

    fn theta_mut(&mut self, d: usize) -> &mut KernelSpec {
        match d {
            0 => &mut self.theta_lx,
            1 => &mut self.theta_ly,
            _ => &mut self.theta_lt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !self.base.family.is_space_time() {
            return Err(Error::InvalidArgument(format!(
                "base kernel must be ch1 or ch2, got {}",
                self.base.family
            )));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be non-negative, got {}",
                self.noise_var
            )));
        }
        let m = self.m();
        if m == 0 {
            return Err(Error::InvalidArgument("need at least one latent point".into()));
        }
        if self.latent_points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("latent points must be finite".into()));
        }
        for d in 0..3 {
            let v = self.log_lbar(d);
            if v.len() != m {
                return Err(Error::DimensionMismatch(format!(
                    "{} latent values for {m} latent points in dimension {}",
                    v.len(),
                    DIMS[d]
                )));
            }
            if v.iter().any(|z| !(z.exp() > 0.0 && z.exp().is_finite())) {
                return Err(Error::InvalidArgument(format!(
                    "latent log length scales in dimension {} overflow",
                    DIMS[d]
                )));
            }
            let th = self.theta(d);
            th.validate()?;
            if th.family != KernelFamily::Esgp || th.length_scales.as_ref().map(Vec::len) != Some(3) {
                return Err(Error::InvalidArgument(format!(
                    "latent kernel for {} must be esgp with 3 length scales",
                    DIMS[d]
                )));
            }
        }
        Ok(())
    }

    /// `3m + 2 + 9`: latent values, base variance, noise, latent GP scales.
    pub fn parameter_count(&self) -> usize {
        3 * self.m() + 2 + 9
    }

    /// Flat log-space parameter vector:
    /// `[log sigma_f, log sigma_n^2, v_x, v_y, v_t, log theta_x, log theta_y, log theta_t]`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.parameter_count());
        x.push(self.base.sigma_f.ln());
        x.push(self.noise_var.ln());
        for d in 0..3 {
            x.extend_from_slice(self.log_lbar(d));
        }
        for d in 0..3 {
            x.extend(scales_of(self.theta(d)).iter().map(|l| l.ln()));
        }
        x
    }

    /// Inverse of [`NostillParams::to_vector`], keeping the structure of `self`.
    pub fn with_vector(&self, x: &[f64]) -> Result<NostillParams> {
        if x.len() != self.parameter_count() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                x.len()
            )));
        }
        let m = self.m();
        let mut p = self.clone();
        p.base.sigma_f = x[0].exp();
        p.noise_var = x[1].exp();
        for d in 0..3 {
            *p.log_lbar_mut(d) = x[2 + d * m..2 + (d + 1) * m].to_vec();
            let o = 2 + 3 * m + 3 * d;
            p.theta_mut(d).length_scales = Some(x[o..o + 3].iter().map(|v| v.exp()).collect());
        }
        Ok(p)
    }
}

/// A latent GP conditioned on its latent values, with a constant prior mean
/// equal to the mean of those values.
struct LatentGp {
    scales: [f64; 3],
    mean: f64,
    factor: JitteredCholesky,
    /// `(K_mm + eps I)^-1 (v - mean)`
    weights: DVector<f64>,
}

impl LatentGp {
    fn new(params: &NostillParams, d: usize) -> Result<Self> {
        let v = params.log_lbar(d);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let kmm = gram_stationary(&params.latent_points, &params.latent_points, params.theta(d))?;
        let centered: Vec<f64> = v.iter().map(|z| z - mean).collect();
        let post = GpPosterior::fit(&kmm, &centered, LATENT_NOISE)?;
        Ok(LatentGp {
            scales: scales_of(params.theta(d)),
            mean,
            factor: post.factor().clone(),
            weights: post.alpha().clone(),
        })
    }

    fn log_scales(&self, k_nm: &DMatrix<f64>) -> DVector<f64> {
        (k_nm * &self.weights).add_scalar(self.mean)
    }
}

fn latent_cross(
    targets: &[SpaceTimePoint],
    params: &NostillParams,
    d: usize,
) -> Result<DMatrix<f64>> {
    gram_stationary(targets, &params.latent_points, params.theta(d))
}

/// Latent length scales at `targets`: the exponentiated posterior means of
/// the three latent GPs. Latent variances are discarded.
pub fn infer_latent_field(params: &NostillParams, targets: &[SpaceTimePoint]) -> Result<LatentLengthField> {
    params.validate()?;
    let mut out: [Vec<f64>; 3] = Default::default();
    for (d, slot) in out.iter_mut().enumerate() {
        let gp = LatentGp::new(params, d)?;
        let k_nm = latent_cross(targets, params, d)?;
        *slot = gp.log_scales(&k_nm).iter().map(|z| z.exp()).collect();
    }
    let [lx, ly, lt] = out;
    LatentLengthField::new(targets.to_vec(), lx, ly, lt)
}

/// Log marginal likelihood of `data` under `params`.
pub fn nostill_lml(params: &NostillParams, data: &Dataset) -> Result<f64> {
    let points = data.points();
    let field = infer_latent_field(params, &points)?;
    let k = gram_nonstationary(&points, &points, &field, &field, &params.base, params.sparse)?;
    Ok(GpPosterior::fit(&k, &data.values(), params.noise_var)?.log_marginal_likelihood())
}

/// Log marginal likelihood and its gradient with respect to
/// [`NostillParams::to_vector`].
pub fn nostill_lml_grad(params: &NostillParams, data: &Dataset) -> Result<(f64, Vec<f64>)> {
    params.validate()?;
    let points = data.points();
    let n = points.len();
    let m = params.m();

    let mut latents = Vec::with_capacity(3);
    let mut crosses = Vec::with_capacity(3);
    let mut s = vec![[0.0; 3]; n];
    for d in 0..3 {
        let gp = LatentGp::new(params, d)?;
        let k_nm = latent_cross(&points, params, d)?;
        let z = gp.log_scales(&k_nm);
        for i in 0..n {
            s[i][d] = (2.0 * z[i]).exp();
        }
        latents.push(gp);
        crosses.push(k_nm);
    }
    if s.iter().flatten().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument("latent length scales overflow".into()));
    }

    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = entry(&params.base, params.sparse, &points[i], &points[j], &s[i], &s[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    let post = GpPosterior::fit(&k, &data.values(), params.noise_var)?;
    let lml = post.log_marginal_likelihood();
    let alpha = post.alpha();
    let w = alpha * alpha.transpose() - post.factor().inverse();

    let mut grad = vec![0.0; params.parameter_count()];
    // d lml / d z_d at each training point
    let mut gz = vec![DVector::zeros(n); 3];
    for j in 0..n {
        for i in j..n {
            let e = entry_grad(&params.base, params.sparse, &points[i], &points[j], &s[i], &s[j]);
            if i == j {
                grad[0] += 0.5 * w[(i, i)] * e.d_log_sf;
                continue;
            }
            let wij = w[(i, j)];
            grad[0] += wij * e.d_log_sf;
            for d in 0..3 {
                gz[d][i] += wij * e.d_i[d];
                gz[d][j] += wij * e.d_j[d];
            }
        }
    }
    grad[1] = 0.5 * params.noise_var * w.trace();

    for d in 0..3 {
        let gp = &latents[d];
        let k_nm = &crosses[d];
        let g = &gz[d];
        let beta = gp.factor.solve_vec(&(k_nm.transpose() * g));
        let gsum = g.sum() / m as f64;
        let bmean = beta.sum() / m as f64;
        for i in 0..m {
            grad[2 + d * m + i] = gsum + beta[i] - bmean;
        }
        let kmm_pts = &params.latent_points;
        for e in 0..3 {
            let l2 = gp.scales[e] * gp.scales[e];
            let dcross = d_esgp_gram(&points, kmm_pts, &gp.scales, e, l2);
            let dkmm = d_esgp_gram(kmm_pts, kmm_pts, &gp.scales, e, l2);
            let a = &gp.weights;
            grad[2 + 3 * m + 3 * d + e] = g.dot(&(dcross * a)) - beta.dot(&(dkmm * a));
        }
    }
    Ok((lml, grad))
}

/// Derivative of a unit-variance `Esgp` gram with respect to `log l_e`.
fn d_esgp_gram(
    a: &[SpaceTimePoint],
    b: &[SpaceTimePoint],
    scales: &[f64; 3],
    e: usize,
    l2: f64,
) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| {
        let pa = a[i].coords();
        let pb = b[j].coords();
        let mut q = 0.0;
        for k in 0..3 {
            q += ((pa[k] - pb[k]) / scales[k]).powi(2);
        }
        let de = pa[e] - pb[e];
        if de == 0.0 || q >= 1.0 {
            return 0.0;
        }
        esgp_unit_dtau2(q) * (-2.0 * de * de / l2)
    })
}

/// Median gap between consecutive distinct coordinates, per dimension.
/// Zero for a dimension with a single distinct value.
pub fn median_spacing(points: &[SpaceTimePoint]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (d, slot) in out.iter_mut().enumerate() {
        let mut c: Vec<f64> = points.iter().map(|p| p.coords()[d] + 0.0).collect();
        c.sort_by(f64::total_cmp);
        c.dedup();
        let mut gaps: Vec<f64> = c.windows(2).map(|w| w[1] - w[0]).collect();
        if gaps.is_empty() {
            continue;
        }
        gaps.sort_by(f64::total_cmp);
        let k = gaps.len();
        *slot = if k % 2 == 1 {
            gaps[k / 2]
        } else {
            0.5 * (gaps[k / 2 - 1] + gaps[k / 2])
        };
    }
    out
}

fn extent(points: &[SpaceTimePoint]) -> [f64; 3] {
    let (lo, hi) = bounding_box(points);
    [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]]
}

/// Default starting point: unit base variance, noise 0.1, every latent log
/// scale at the log median spacing and latent GP scales at half the extent.
/// Dimensions without extent get unit scales.
pub fn initial_params(
    data: &Dataset,
    latent_points: &[SpaceTimePoint],
    family: KernelFamily,
    sparse: bool,
) -> Result<NostillParams> {
    let points = data.points();
    let spacing = median_spacing(&points);
    let span = extent(&points);
    let m = latent_points.len();
    let lbar = |d: usize| -> Vec<f64> {
        let l = if spacing[d] > 0.0 { spacing[d] } else { 1.0 };
        vec![l.ln(); m]
    };
    let half = span.map(|s| if s > 0.0 { 0.5 * s } else { 1.0 });
    let params = NostillParams {
        base: KernelSpec::new(family, 1.0),
        noise_var: 0.1,
        sparse,
        latent_points: latent_points.to_vec(),
        log_lbar_x: lbar(0),
        log_lbar_y: lbar(1),
        log_lbar_t: lbar(2),
        theta_lx: latent_kernel(half),
        theta_ly: latent_kernel(half),
        theta_lt: latent_kernel(half),
    };
    params.validate()?;
    Ok(params)
}

/// Box bounds and restart sampling ranges in the log parametrization.
/// Dimensions without extent in the training data are pinned.
fn parameter_bounds(params: &NostillParams, points: &[SpaceTimePoint]) -> (Vec<Bound>, Vec<Bound>) {
    let m = params.m();
    let span = extent(points);
    let x0 = params.to_vector();
    let sf_hi = if params.base.family == KernelFamily::Ch2 { 0.0 } else { 1e3f64.ln() };
    let mut bounds = vec![
        Bound::new(1e-3f64.ln(), sf_hi),
        Bound::new(1e-6f64.ln(), 10f64.ln()),
    ];
    let mut ranges = vec![
        Bound::new(0.3f64.ln(), sf_hi.min(3f64.ln())),
        Bound::new(0.01f64.ln(), 1f64.ln()),
    ];
    for d in 0..3 {
        for i in 0..m {
            if span[d] > 0.0 {
                bounds.push(Bound::new((0.01 * span[d]).ln(), (100.0 * span[d]).ln()));
                ranges.push(Bound::new((0.05 * span[d]).ln(), span[d].ln()));
            } else {
                bounds.push(Bound::fixed(x0[2 + d * m + i]));
                ranges.push(Bound::fixed(x0[2 + d * m + i]));
            }
        }
    }
    for d in 0..3 {
        for e in 0..3 {
            let v = x0[2 + 3 * m + 3 * d + e];
            if m > 1 && span[d] > 0.0 && span[e] > 0.0 {
                bounds.push(Bound::new((0.01 * span[e]).ln(), (100.0 * span[e]).ln()));
                ranges.push(Bound::new((0.25 * span[e]).ln(), span[e].ln()));
            } else {
                bounds.push(Bound::fixed(v));
                ranges.push(Bound::fixed(v));
            }
        }
    }
    (bounds, ranges)
}

/// A trained model: parameters, the normalized training data and the cached
/// observation GP.
#[derive(Debug, Clone)]
pub struct NostillModel {
    pub params: NostillParams,
    /// Training data as used for fitting (normalized).
    pub train_data: Dataset,
    /// Fingerprint of the data passed to training, before normalization.
    pub source_fingerprint: String,
    /// Accepted optimizer iterates.
    pub log: Vec<LogEntry>,
    field: LatentLengthField,
    posterior: GpPosterior,
}

fn normalized(data: &Dataset) -> Result<Dataset> {
    match data.normalization() {
        Some(_) => Ok(data.clone()),
        None => normalize(data),
    }
}

impl NostillModel {
    /// Conditions `params` on `data` without training. `data` is normalized
    /// first unless it already is.
    pub fn new(params: NostillParams, data: &Dataset) -> Result<Self> {
        let train_data = normalized(data)?;
        Self::build(params, train_data, data.fingerprint(), Vec::new())
    }

    fn build(
        params: NostillParams,
        train_data: Dataset,
        source_fingerprint: String,
        log: Vec<LogEntry>,
    ) -> Result<Self> {
        let points = train_data.points();
        let field = infer_latent_field(&params, &points)?;
        let k = gram_nonstationary(&points, &points, &field, &field, &params.base, params.sparse)?;
        let posterior = GpPosterior::fit(&k, &train_data.values(), params.noise_var)?;
        Ok(NostillModel {
            params,
            train_data,
            source_fingerprint,
            log,
            field,
            posterior,
        })
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.posterior.log_marginal_likelihood()
    }

    /// Latent length scales at the training points.
    pub fn field(&self) -> &LatentLengthField {
        &self.field
    }

    pub fn normalization(&self) -> Option<Normalization> {
        self.train_data.normalization()
    }

    /// Covariance of the trained model, usable with any point sets.
    pub fn kernel(&self) -> NostillKernel {
        NostillKernel {
            params: self.params.clone(),
        }
    }

    /// The equivalent stationary kernel when the field is constant (`m = 1`).
    pub fn stationary_spec(&self) -> Option<KernelSpec> {
        if self.params.m() != 1 {
            return None;
        }
        let l = [0, 1, 2].map(|d| self.params.log_lbar(d)[0].exp());
        Some(self.params.base.clone().with_length_scales(l))
    }

    /// Predictive mean and covariance in the units of the source data.
    pub fn predict(&self, x_star: &[SpaceTimePoint]) -> Result<Prediction> {
        predict_model(self, x_star)
    }
}

pub fn predict_model(model: &NostillModel, x_star: &[SpaceTimePoint]) -> Result<Prediction> {
    let field_star = infer_latent_field(&model.params, x_star)?;
    let points = model.train_data.points();
    let base = &model.params.base;
    let sparse = model.params.sparse;
    let ks = gram_nonstationary(x_star, &points, &field_star, &model.field, base, sparse)?;
    let kss = gram_nonstationary(x_star, x_star, &field_star, &field_star, base, sparse)?;
    let mut pred = model.posterior.predict(&ks, &kss)?;
    if let Some(n) = model.normalization() {
        pred.mean.apply(|v| *v = n.to_original(*v));
        pred.cov *= n.stddev * n.stddev;
    }
    Ok(pred)
}

/// Maximizes the log marginal likelihood starting from `init`.
pub fn train_from(data: &Dataset, init: NostillParams, config: &TrainConfig) -> Result<NostillModel> {
    init.validate()?;
    let train_data = normalized(data)?;
    let points = train_data.points();
    let (bounds, ranges) = parameter_bounds(&init, &points);
    let template = init.clone();
    let mut objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let p = template.with_vector(x)?;
        nostill_lml_grad(&p, &train_data)
    };
    let x0 = init.to_vector();
    let result = maximize(&mut objective, &x0, &bounds, &ranges, config)?;
    for e in &result.log {
        log::info!(
            "train restart={} iter={} lml={:.10}",
            e.restart,
            e.iteration,
            e.value
        );
    }
    let params = if result.x == x0 {
        init
    } else {
        init.with_vector(&result.x)?
    };
    NostillModel::build(params, train_data, data.fingerprint(), result.log)
}

/// Trains from the default initialization.
pub fn train(
    data: &Dataset,
    latent_points: &[SpaceTimePoint],
    family: KernelFamily,
    sparse: bool,
    config: &TrainConfig,
) -> Result<NostillModel> {
    let init = initial_params(data, latent_points, family, sparse)?;
    train_from(data, init, config)
}

/// Stationary model: a single latent point, so the field is constant and
/// only the base variance, noise and three length scales are learned.
pub fn fit_stationary(data: &Dataset, family: KernelFamily, config: &TrainConfig) -> Result<NostillModel> {
    let (lo, hi) = data.bounding_box();
    let centre = SpaceTimePoint::new(
        0.5 * (lo[0] + hi[0]),
        0.5 * (lo[1] + hi[1]),
        0.5 * (lo[2] + hi[2]),
    );
    train(data, &[centre], family, false, config)
}

/// Starting point for a latent model taken from a trained stationary one:
/// same base kernel and noise, every latent value at the stationary scale.
pub fn warm_start(
    stationary: &NostillModel,
    latent_points: &[SpaceTimePoint],
    sparse: bool,
) -> Result<NostillParams> {
    let mut p = initial_params(
        &stationary.train_data,
        latent_points,
        stationary.params.base.family,
        sparse,
    )?;
    p.base = stationary.params.base.clone();
    p.noise_var = stationary.params.noise_var;
    let m = latent_points.len();
    for d in 0..3 {
        let mean = stationary.params.log_lbar(d).iter().sum::<f64>()
            / stationary.params.m() as f64;
        *p.log_lbar_mut(d) = vec![mean; m];
    }
    p.validate()?;
    Ok(p)
}

/// Non-stationary covariance with latent fields inferred on the fly.
#[derive(Debug, Clone)]
pub struct NostillKernel {
    pub params: NostillParams,
}

impl Covariance for NostillKernel {
    fn cov(&self, a: &[SpaceTimePoint], b: &[SpaceTimePoint]) -> Result<DMatrix<f64>> {
        let fa = infer_latent_field(&self.params, a)?;
        let fb = if a == b {
            fa.clone()
        } else {
            infer_latent_field(&self.params, b)?
        };
        gram_nonstationary(a, b, &fa, &fb, &self.params.base, self.params.sparse)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    dataset_fingerprint: String,
    noise_var: f64,
    sparse: bool,
    latent_points: Vec<[f64; 3]>,
    log_lbar_x: Vec<f64>,
    log_lbar_y: Vec<f64>,
    log_lbar_t: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normalization: Option<Normalization>,
    base: KernelSpec,
    theta_lx: KernelSpec,
    theta_ly: KernelSpec,
    theta_lt: KernelSpec,
}

/// Serializes parameters, normalization and the training data fingerprint.
pub fn model_to_toml(model: &NostillModel) -> Result<String> {
    let p = &model.params;
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        dataset_fingerprint: model.source_fingerprint.clone(),
        noise_var: p.noise_var,
        sparse: p.sparse,
        latent_points: p.latent_points.iter().map(|q| q.coords()).collect(),
        log_lbar_x: p.log_lbar_x.clone(),
        log_lbar_y: p.log_lbar_y.clone(),
        log_lbar_t: p.log_lbar_t.clone(),
        normalization: model.normalization(),
        base: p.base.clone(),
        theta_lx: p.theta_lx.clone(),
        theta_ly: p.theta_ly.clone(),
        theta_lt: p.theta_lt.clone(),
    };
    toml::to_string(&file).map_err(|e| Error::Format(e.to_string()))
}

/// Rebuilds a model from its serialized form and the training data it was
/// fitted to. The data must match the stored fingerprint.
pub fn model_from_toml(text: &str, data: &Dataset) -> Result<NostillModel> {
    let file: ModelFile = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported model format version {}",
            file.format_version
        )));
    }
    if file.dataset_fingerprint != data.fingerprint() {
        return Err(Error::Format(
            "model was trained on different data".into(),
        ));
    }
    let train_data = normalized(data)?;
    if train_data.normalization() != file.normalization {
        return Err(Error::Format("normalization does not match the data".into()));
    }
    let params = NostillParams {
        base: file.base,
        noise_var: file.noise_var,
        sparse: file.sparse,
        latent_points: file
            .latent_points
            .into_iter()
            .map(SpaceTimePoint::from_coords)
            .collect(),
        log_lbar_x: file.log_lbar_x,
        log_lbar_y: file.log_lbar_y,
        log_lbar_t: file.log_lbar_t,
        theta_lx: file.theta_lx,
        theta_ly: file.theta_ly,
        theta_lt: file.theta_lt,
    };
    params.validate()?;
    NostillModel::build(params, train_data, file.dataset_fingerprint, Vec::new())
}

pub fn save_model(model: &NostillModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_toml(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>, data: &Dataset) -> Result<NostillModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_toml(&text, data)
}
