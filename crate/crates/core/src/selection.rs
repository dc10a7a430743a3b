//! Choosing the latent points: greedy entropy or mutual-information picks
//! over an empirical or model covariance, even strides, or pseudo inputs
//! optimized against a low-rank-plus-diagonal marginal likelihood.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::data::{bounding_box, normalize, Dataset, SpaceTimePoint, StationGrid};
use crate::error::{Error, Result};
use crate::gp::{factorize, Covariance};
use crate::kernels::{gram_stationary, KernelSpec};
use crate::model::NostillModel;
use crate::optimize::{finite_difference, maximize, Bound, TrainConfig};

/// Relative jitter added to a candidate covariance before greedy selection.
pub const SELECTION_JITTER: f64 = 1e-8;

/// Scores within this (relative) distance of the best count as tied.
const TIE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    Space,
    Time,
}

/// Sample covariance between stations (`Space`, samples are timesteps) or
/// between timesteps (`Time`, samples are stations), with an `N - 1`
/// denominator.
pub fn empirical_covariance(data: &Dataset, axis: Axis) -> Result<DMatrix<f64>> {
    let grid = StationGrid::from_dataset(data)?;
    let values = data.values();
    // rows: variables, columns: samples
    let table = DMatrix::from_fn(grid.n_stations(), grid.n_times(), |s, k| values[grid.index[s][k]]);
    let table = match axis {
        Axis::Space => table,
        Axis::Time => table.transpose(),
    };
    let samples = table.ncols();
    if samples < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 samples for a {axis:?} covariance, got {samples}"
        )));
    }
    let mut centered = table;
    for mut row in centered.row_iter_mut() {
        let mean = row.sum() / samples as f64;
        row.add_scalar_mut(-mean);
    }
    let cov = &centered * centered.transpose() / (samples - 1) as f64;
    Ok(symmetrize(cov))
}

fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for i in 0..m.nrows() {
        for j in 0..i {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    /// Minimize the entropy of the unselected candidates.
    Entropy,
    /// Maximize the mutual information between selected and unselected.
    Mi,
}

/// Conditional variances of every candidate given the selected ones, kept
/// up to date one pivot at a time (a partial pivoted Cholesky).
struct Residual {
    k: DMatrix<f64>,
    cols: Vec<DVector<f64>>,
    var: DVector<f64>,
}

impl Residual {
    fn new(k: DMatrix<f64>) -> Self {
        let var = k.diagonal();
        Residual {
            k,
            cols: Vec::new(),
            var,
        }
    }

    fn add(&mut self, p: usize) {
        let n = self.k.nrows();
        let d = self.var[p].max(f64::MIN_POSITIVE).sqrt();
        let mut col = DVector::zeros(n);
        for i in 0..n {
            let mut v = self.k[(i, p)];
            for c in &self.cols {
                v -= c[i] * c[p];
            }
            col[i] = v / d;
        }
        for i in 0..n {
            self.var[i] -= col[i] * col[i];
        }
        self.var[p] = 0.0;
        self.cols.push(col);
    }
}

fn check_candidates(cov: &DMatrix<f64>, k: usize) -> Result<(DMatrix<f64>, Cholesky<f64, Dyn>)> {
    let n = cov.nrows();
    if n != cov.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "candidate covariance is {}x{}",
            n,
            cov.ncols()
        )));
    }
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= k < {n} candidates, got k = {k}"
        )));
    }
    let scale = cov.trace() / n as f64;
    if !(scale > 0.0) || cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "candidate covariance must have a positive finite diagonal".into(),
        ));
    }
    let asym = (cov - cov.transpose()).abs().max();
    if asym > 1e-10 * scale {
        return Err(Error::InvalidArgument("candidate covariance is not symmetric".into()));
    }
    let mut jittered = symmetrize(cov.clone());
    for i in 0..n {
        jittered[(i, i)] += SELECTION_JITTER * scale;
    }
    let factor = exact_cholesky(&jittered, SELECTION_JITTER * scale)?;
    Ok((jittered, factor))
}

fn exact_cholesky(k: &DMatrix<f64>, jitter: f64) -> Result<Cholesky<f64, Dyn>> {
    k.clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { jitter })
}

/// Lowest index whose score is within tolerance of the best.
pub(crate) fn argmax_lowest(scores: &[Option<f64>]) -> usize {
    let best = scores
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let tol = TIE_TOL * best.abs().max(1.0);
    scores
        .iter()
        .position(|s| s.is_some_and(|v| v >= best - tol))
        .expect("at least one candidate")
}

/// Greedy selection of `k` candidates, in pick order.
///
/// Entropy picks, at each step, the candidate whose removal leaves the
/// smallest entropy for the rest; by the chain rule this is the candidate
/// with the largest conditional variance given the picks so far. MI picks
/// the candidate maximizing `log|P_SS| + log|K_SS|` over the enlarged set
/// `S`, with `P = K^-1`, which is the mutual information between `S` and its
/// complement up to a constant.
pub fn greedy_select(cov: &DMatrix<f64>, k: usize, criterion: Criterion) -> Result<Vec<usize>> {
    greedy_select_with(cov, k, criterion, false)
}

/// As [`greedy_select`]; with `krause` the MI score is computed as
/// `H(x | S) - H(x | complement)` through an explicit inverse of the
/// complement block.
pub fn greedy_select_with(
    cov: &DMatrix<f64>,
    k: usize,
    criterion: Criterion,
    krause: bool,
) -> Result<Vec<usize>> {
    let (kj, factor) = check_candidates(cov, k)?;
    let n = kj.nrows();
    let floor = f64::MIN_POSITIVE;
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let mut res_k = Residual::new(kj.clone());
    let mut res_p = match (criterion, krause) {
        (Criterion::Mi, false) => Some(Residual::new(symmetrize(factor.inverse()))),
        _ => None,
    };
    for _ in 0..k {
        let complement_inv = if criterion == Criterion::Mi && krause {
            let rest: Vec<usize> = (0..n).filter(|i| !taken[*i]).collect();
            let block = kj.select_rows(&rest).select_columns(&rest);
            let inv = exact_cholesky(&block, SELECTION_JITTER)?.inverse();
            let mut diag = vec![0.0; n];
            for (a, &i) in rest.iter().enumerate() {
                diag[i] = inv[(a, a)];
            }
            Some(diag)
        } else {
            None
        };
        let scores: Vec<Option<f64>> = (0..n)
            .map(|i| {
                if taken[i] {
                    return None;
                }
                let vk = res_k.var[i].max(floor).ln();
                Some(match criterion {
                    Criterion::Entropy => vk,
                    Criterion::Mi => match (&res_p, &complement_inv) {
                        (Some(rp), _) => vk + rp.var[i].max(floor).ln(),
                        // H(x | complement) has variance 1 / [K_CC^-1]_xx
                        (None, Some(diag)) => vk + diag[i].max(floor).ln(),
                        (None, None) => unreachable!(),
                    },
                })
            })
            .collect();
        let p = argmax_lowest(&scores);
        taken[p] = true;
        chosen.push(p);
        res_k.add(p);
        if let Some(rp) = res_p.as_mut() {
            rp.add(p);
        }
    }
    Ok(chosen)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMethod {
    /// Greedy entropy over the stationary model covariance of all training points.
    GreedyEntropy,
    /// Greedy MI over the stationary model covariance.
    GreedyMi,
    /// Greedy entropy over empirical space and time covariances, then their product.
    GreedyEntropyEmpirical,
    GreedyMiEmpirical,
    PseudoInput,
    Uniform,
}

impl SelectionMethod {
    pub fn is_empirical(self) -> bool {
        matches!(
            self,
            SelectionMethod::GreedyEntropyEmpirical | SelectionMethod::GreedyMiEmpirical
        )
    }

    pub fn needs_stationary(self) -> bool {
        matches!(
            self,
            SelectionMethod::GreedyEntropy | SelectionMethod::GreedyMi | SelectionMethod::PseudoInput
        )
    }

    fn criterion(self) -> Criterion {
        match self {
            SelectionMethod::GreedyMi | SelectionMethod::GreedyMiEmpirical => Criterion::Mi,
            _ => Criterion::Entropy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionPlan {
    pub method: SelectionMethod,
    #[serde(default)]
    pub m_space: Option<usize>,
    #[serde(default)]
    pub m_time: Option<usize>,
    #[serde(default)]
    pub m_total: Option<usize>,
    /// Score MI through the complement-conditional form.
    #[serde(default)]
    pub krause_mi: bool,
}

impl SelectionPlan {
    pub fn total(method: SelectionMethod, m: usize) -> Self {
        SelectionPlan {
            method,
            m_space: None,
            m_time: None,
            m_total: Some(m),
            krause_mi: false,
        }
    }

    pub fn separable(method: SelectionMethod, m_space: usize, m_time: usize) -> Self {
        SelectionPlan {
            method,
            m_space: Some(m_space),
            m_time: Some(m_time),
            m_total: None,
            krause_mi: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.method.is_empirical() {
            match (self.m_space, self.m_time) {
                (Some(a), Some(b)) if a >= 1 && b >= 1 => Ok(()),
                _ => Err(Error::InvalidArgument(format!(
                    "{:?} needs m_space >= 1 and m_time >= 1",
                    self.method
                ))),
            }
        } else {
            match self.m_total {
                Some(m) if m >= 1 => Ok(()),
                _ => Err(Error::InvalidArgument(format!(
                    "{:?} needs m_total >= 1",
                    self.method
                ))),
            }
        }
    }

    /// Number of latent points the plan produces.
    pub fn m(&self) -> Option<usize> {
        if self.method.is_empirical() {
            Some(self.m_space? * self.m_time?)
        } else {
            self.m_total
        }
    }
}

/// A trained stationary kernel together with its noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryKernel {
    /// Family, variance and the three length scales.
    pub spec: KernelSpec,
    pub noise_var: f64,
}

impl StationaryKernel {
    pub fn new(spec: KernelSpec, noise_var: f64) -> Result<Self> {
        spec.validate()?;
        if spec.length_scales.as_ref().map(Vec::len) != Some(3) {
            return Err(Error::InvalidArgument(
                "stationary kernel needs three length scales".into(),
            ));
        }
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be non-negative, got {noise_var}"
            )));
        }
        Ok(StationaryKernel { spec, noise_var })
    }

    /// From a model with a single latent point.
    pub fn from_model(model: &NostillModel) -> Result<Self> {
        let spec = model.stationary_spec().ok_or_else(|| {
            Error::InvalidArgument("model has more than one latent point".into())
        })?;
        Self::new(spec, model.params.noise_var)
    }
}

/// Picks the latent points for `data` according to `plan`.
pub fn select_latents(
    data: &Dataset,
    plan: &SelectionPlan,
    stationary: Option<&StationaryKernel>,
    config: &TrainConfig,
) -> Result<Vec<SpaceTimePoint>> {
    plan.validate()?;
    let points = data.points();
    let need = |m: usize| -> Result<()> {
        if m > points.len() {
            Err(Error::InvalidArgument(format!(
                "cannot select {m} latent points from {} observations",
                points.len()
            )))
        } else {
            Ok(())
        }
    };
    let stationary = || {
        stationary.ok_or_else(|| {
            Error::InvalidArgument(format!("{:?} needs a trained stationary kernel", plan.method))
        })
    };
    let m_total = plan.m_total.unwrap_or(0);
    match plan.method {
        SelectionMethod::GreedyEntropyEmpirical | SelectionMethod::GreedyMiEmpirical => {
            let (ms, mt) = (plan.m_space.unwrap_or(0), plan.m_time.unwrap_or(0));
            let grid = StationGrid::from_dataset(data)?;
            let crit = plan.method.criterion();
            let pick_axis = |axis: Axis, count: usize, total: usize| -> Result<Vec<usize>> {
                if count > total {
                    return Err(Error::InvalidArgument(format!(
                        "cannot select {count} of {total} along {axis:?}"
                    )));
                }
                if count == total {
                    return Ok((0..total).collect());
                }
                let cov = empirical_covariance(data, axis)?;
                greedy_select_with(&cov, count, crit, plan.krause_mi)
            };
            let stations = pick_axis(Axis::Space, ms, grid.n_stations())?;
            let times = pick_axis(Axis::Time, mt, grid.n_times())?;
            let mut out = Vec::with_capacity(ms * mt);
            for &s in &stations {
                let (x, y) = grid.locations[s];
                for &k in &times {
                    out.push(SpaceTimePoint::new(x, y, grid.times[k]));
                }
            }
            Ok(out)
        }
        SelectionMethod::GreedyEntropy | SelectionMethod::GreedyMi => {
            need(m_total)?;
            let st = stationary()?;
            if m_total == points.len() {
                return Ok(points);
            }
            let mut k = gram_stationary(&points, &points, &st.spec)?;
            for i in 0..k.nrows() {
                k[(i, i)] += st.noise_var;
            }
            let idx = greedy_select_with(&k, m_total, plan.method.criterion(), plan.krause_mi)?;
            Ok(idx.into_iter().map(|i| points[i]).collect())
        }
        SelectionMethod::Uniform => {
            need(m_total)?;
            let n = points.len();
            Ok((0..m_total).map(|i| points[i * n / m_total]).collect())
        }
        SelectionMethod::PseudoInput => {
            need(m_total)?;
            learn_pseudo_inputs(data, m_total, stationary()?, config)
        }
    }
}

/// Log marginal likelihood under the covariance
/// `Q + diag(K - Q) + noise I` with `Q = K_nm K_mm^-1 K_mn`.
pub fn fitc_lml(
    points: &[SpaceTimePoint],
    y: &[f64],
    pseudo: &[SpaceTimePoint],
    kernel: &StationaryKernel,
) -> Result<f64> {
    let n = points.len();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} values for {n} points",
            y.len()
        )));
    }
    if pseudo.is_empty() {
        return Err(Error::InvalidArgument("need at least one pseudo input".into()));
    }
    let spec = &kernel.spec;
    let kmm = spec.cov(pseudo, pseudo)?;
    let kmn = spec.cov(pseudo, points)?;
    let lm = factorize(&kmm)?;
    let v = lm.solve_lower(&kmn);
    let prior = spec.variance();
    // diagonal correction is non-negative in exact arithmetic
    let lambda: Vec<f64> = (0..n)
        .map(|i| (prior - v.column(i).norm_squared()).max(0.0) + kernel.noise_var)
        .collect();
    if lambda.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::NotPositiveDefinite { jitter: 0.0 });
    }
    let mut vl = v.clone();
    for (i, mut c) in vl.column_iter_mut().enumerate() {
        c /= lambda[i].sqrt();
    }
    let m = pseudo.len();
    let b = DMatrix::identity(m, m) + &vl * vl.transpose();
    let lb = factorize(&b)?;
    let ys = DVector::from_iterator(n, y.iter().zip(&lambda).map(|(v, l)| v / l.sqrt()));
    let beta = lb.solve_lower(&DMatrix::from_column_slice(m, 1, (&vl * &ys).as_slice()));
    let quad = ys.norm_squared() - beta.norm_squared();
    let log_det = lb.log_det() + lambda.iter().map(|l| l.ln()).sum::<f64>();
    Ok(-0.5 * quad - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Deterministic spread-out starting points: the observation nearest the
/// centroid, then repeatedly the one farthest from those already chosen.
/// Distances are measured in units of each dimension's extent.
pub fn farthest_point_init(points: &[SpaceTimePoint], m: usize) -> Vec<SpaceTimePoint> {
    if points.is_empty() || m == 0 {
        return Vec::new();
    }
    let (lo, hi) = bounding_box(points);
    let span: Vec<f64> = (0..3).map(|d| hi[d] - lo[d]).collect();
    let dist = |a: [f64; 3], b: [f64; 3]| -> f64 {
        (0..3)
            .filter(|d| span[*d] > 0.0)
            .map(|d| ((a[d] - b[d]) / span[d]).powi(2))
            .sum()
    };
    let n = points.len() as f64;
    let mut centroid = [0.0; 3];
    for p in points {
        for (c, v) in centroid.iter_mut().zip(p.coords()) {
            *c += v / n;
        }
    }
    let first = (0..points.len())
        .min_by(|a, b| {
            dist(points[*a].coords(), centroid).total_cmp(&dist(points[*b].coords(), centroid))
        })
        .expect("nonempty");
    let mut chosen = vec![first];
    let mut nearest: Vec<f64> = points
        .iter()
        .map(|p| dist(p.coords(), points[first].coords()))
        .collect();
    while chosen.len() < m.min(points.len()) {
        let mut best = 0;
        for i in 1..points.len() {
            if nearest[i] > nearest[best] {
                best = i;
            }
        }
        chosen.push(best);
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(dist(p.coords(), points[best].coords()));
        }
    }
    chosen.into_iter().map(|i| points[i]).collect()
}

/// Optimizes the coordinates of `m` pseudo inputs with the kernel frozen.
/// Coordinates along dimensions without extent stay fixed; results lie in
/// the bounding box of the data.
pub fn learn_pseudo_inputs(
    data: &Dataset,
    m: usize,
    kernel: &StationaryKernel,
    config: &TrainConfig,
) -> Result<Vec<SpaceTimePoint>> {
    let points = data.points();
    if m == 0 || m > points.len() {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= m <= {} pseudo inputs, got {m}",
            points.len()
        )));
    }
    let data = match data.normalization() {
        Some(_) => data.clone(),
        None => normalize(data)?,
    };
    let y = data.values();
    let (lo, hi) = bounding_box(&points);
    let init = farthest_point_init(&points, m);
    let x0: Vec<f64> = init.iter().flat_map(|p| p.coords()).collect();
    let bounds: Vec<Bound> = (0..3 * m)
        .map(|i| {
            let d = i % 3;
            if hi[d] > lo[d] {
                Bound::new(lo[d], hi[d])
            } else {
                Bound::fixed(x0[i])
            }
        })
        .collect();
    let to_points = |x: &[f64]| -> Vec<SpaceTimePoint> {
        x.chunks(3)
            .map(|c| SpaceTimePoint::new(c[0], c[1], c[2]))
            .collect()
    };
    let value = |x: &[f64]| fitc_lml(&points, &y, &to_points(x), kernel);
    let mut objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let f = value(x)?;
        let mut g = finite_difference(value, x, 1e-6)?;
        for (gi, b) in g.iter_mut().zip(&bounds) {
            if b.is_fixed() {
                *gi = 0.0;
            }
        }
        Ok((f, g))
    };
    let result = maximize(&mut objective, &x0, &bounds, &bounds, config)?;
    let clamped: Vec<f64> = result
        .x
        .iter()
        .enumerate()
        .map(|(i, v)| v.max(lo[i % 3]).min(hi[i % 3]))
        .collect();
    Ok(to_points(&clamped))
}

pub fn write_latents_csv<W: Write>(points: &[SpaceTimePoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let fail = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["x", "y", "t"]).map_err(fail)?;
    for p in points {
        w.write_record([p.x.to_string(), p.y.to_string(), p.t.to_string()])
            .map_err(fail)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

pub fn read_latents_csv<R: Read>(reader: R) -> Result<Vec<SpaceTimePoint>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 fields, got {}", rec.len()),
            });
        }
        let mut c = [0.0; 3];
        for (k, field) in rec.iter().enumerate() {
            c[k] = field.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad number '{field}'"),
            })?;
        }
        out.push(SpaceTimePoint::from_coords(c));
    }
    Ok(out)
}

pub fn export_latents(points: &[SpaceTimePoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_latents_csv(points, file)
}

pub fn import_latents(path: impl AsRef<Path>) -> Result<Vec<SpaceTimePoint>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_latents_csv(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use crate::gp::GpModel;
    use crate::kernels::KernelFamily;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(ns: usize, nt: usize, f: impl Fn(usize, usize) -> f64) -> Dataset {
        let mut obs = Vec::new();
        for s in 0..ns {
            for k in 0..nt {
                obs.push(Observation::new(
                    SpaceTimePoint::new(s as f64, 0.0, k as f64),
                    f(s, k),
                ));
            }
        }
        Dataset::new(obs, None).unwrap()
    }

    fn random_cov(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n + 2, |_, _| rng.gen_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.05
    }

    fn logdet(m: &DMatrix<f64>) -> f64 {
        if m.nrows() == 0 {
            return 0.0;
        }
        m.clone().cholesky().unwrap().l().diagonal().iter().map(|v| 2.0 * v.ln()).sum()
    }

    fn cond(k: &DMatrix<f64>, r: &[usize], c: &[usize]) -> DMatrix<f64> {
        let krr = k.select_rows(r).select_columns(r);
        if c.is_empty() {
            return krr;
        }
        let krc = k.select_rows(r).select_columns(c);
        let kcc = k.select_rows(c).select_columns(c);
        &krr - &krc * kcc.try_inverse().unwrap() * krc.transpose()
    }

    /// Exhaustive per-step oracle: literal log-determinants of the
    /// unselected set's posterior (entropy) or of `H(U) - H(U | S)` (MI).
    fn oracle(k: &DMatrix<f64>, steps: usize, crit: Criterion) -> Vec<usize> {
        let n = k.nrows();
        let mut sel: Vec<usize> = Vec::new();
        for _ in 0..steps {
            let mut scores = vec![None; n];
            for x in 0..n {
                if sel.contains(&x) {
                    continue;
                }
                let mut s2 = sel.clone();
                s2.push(x);
                let rest: Vec<usize> = (0..n).filter(|i| !s2.contains(i)).collect();
                let h_cond = logdet(&cond(k, &rest, &s2));
                scores[x] = Some(match crit {
                    Criterion::Entropy => -h_cond,
                    Criterion::Mi => logdet(&cond(k, &rest, &[])) - h_cond,
                });
            }
            sel.push(argmax_lowest(&scores));
        }
        sel
    }

    #[test]
    fn identical_series_are_perfectly_correlated() {
        let d = grid(2, 5, |_, k| (k as f64).sin());
        let c = empirical_covariance(&d, Axis::Space).unwrap();
        assert!((c[(0, 1)] - c[(0, 0)]).abs() < 1e-12);
        assert!((c[(1, 1)] - c[(0, 0)]).abs() < 1e-12);
    }

    #[test]
    fn white_noise_is_nearly_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = 2000;
        let vals: Vec<f64> = (0..3 * t).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d = grid(3, t, |s, k| vals[s * t + k]);
        let c = empirical_covariance(&d, Axis::Space).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(c[(i, j)].abs() < 3.0 / (t as f64).sqrt() * c[(i, i)]);
                }
            }
        }
    }

    #[test]
    fn single_timestep_has_no_space_covariance() {
        let d = grid(3, 1, |s, _| s as f64);
        assert!(empirical_covariance(&d, Axis::Space).is_err());
        assert!(empirical_covariance(&d, Axis::Time).is_ok());
    }

    #[test]
    fn empirical_covariance_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<f64> = (0..20).map(|_| rng.gen()).collect();
        let d = grid(4, 5, |s, k| vals[s * 5 + k]);
        for (axis, nv, ns) in [(Axis::Space, 4, 5), (Axis::Time, 5, 4)] {
            let c = empirical_covariance(&d, axis).unwrap();
            let at = |v: usize, s: usize| match axis {
                Axis::Space => vals[v * 5 + s],
                Axis::Time => vals[s * 5 + v],
            };
            for a in 0..nv {
                for b in 0..nv {
                    let ma = (0..ns).map(|s| at(a, s)).sum::<f64>() / ns as f64;
                    let mb = (0..ns).map(|s| at(b, s)).sum::<f64>() / ns as f64;
                    let mut acc = 0.0;
                    for s in 0..ns {
                        acc += (at(a, s) - ma) * (at(b, s) - mb);
                    }
                    assert!((c[(a, b)] - acc / (ns - 1) as f64).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn diagonal_entropy_picks_largest_variance() {
        let c = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0, 2.0, 0.5]));
        assert_eq!(greedy_select(&c, 1, Criterion::Entropy).unwrap(), vec![1]);
        assert_eq!(greedy_select(&c, 3, Criterion::Entropy).unwrap(), vec![1, 2, 0]);
    }

    #[test]
    fn duplicate_rows_tie_to_lowest_index() {
        let mut c = DMatrix::from_element(4, 4, 0.2);
        for i in 0..4 {
            c[(i, i)] = 1.0;
        }
        assert_eq!(greedy_select(&c, 1, Criterion::Entropy).unwrap(), vec![0]);
        assert_eq!(greedy_select(&c, 2, Criterion::Mi).unwrap(), vec![0, 1]);
    }

    #[test]
    fn rejects_bad_k_and_matrices() {
        let c = DMatrix::identity(3, 3);
        assert!(greedy_select(&c, 3, Criterion::Entropy).is_err());
        assert!(greedy_select(&c, 0, Criterion::Entropy).is_err());
        let mut bad = DMatrix::identity(3, 3);
        bad[(0, 1)] = 5.0;
        bad[(1, 0)] = 5.0;
        assert!(greedy_select(&bad, 1, Criterion::Entropy).is_err());
    }

    #[test]
    fn greedy_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..60 {
            let n = rng.gen_range(3..=8);
            let k = rng.gen_range(1..n.min(4));
            let c = random_cov(&mut rng, n);
            for crit in [Criterion::Entropy, Criterion::Mi] {
                assert_eq!(greedy_select(&c, k, crit).unwrap(), oracle(&c, k, crit));
            }
            let krause = greedy_select_with(&c, k, Criterion::Mi, true).unwrap();
            assert_eq!(krause, oracle(&c, k, Criterion::Mi));
        }
    }

    #[test]
    fn full_depth_entropy_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let c = random_cov(&mut rng, 6);
        let sel = greedy_select(&c, 5, Criterion::Entropy).unwrap();
        let rest: Vec<usize> = (0..6).filter(|i| !sel.contains(i)).collect();
        let h = logdet(&cond(&c, &rest, &sel));
        let brute = (0..6)
            .map(|x| {
                let s: Vec<usize> = (0..6).filter(|i| *i != x).collect();
                (x, logdet(&cond(&c, &[x], &s)))
            })
            .find(|(x, _)| *x == rest[0])
            .unwrap()
            .1;
        assert!((h - brute).abs() < 1e-9);
    }

    fn spec() -> StationaryKernel {
        StationaryKernel::new(
            KernelSpec::new(KernelFamily::Ch1, 1.0).with_length_scales([1.5, 1.0, 2.0]),
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn uniform_takes_even_strides() {
        let d = grid(2, 4, |s, k| (s + k) as f64);
        let plan = SelectionPlan::total(SelectionMethod::Uniform, 4);
        let got = select_latents(&d, &plan, None, &TrainConfig::new(0)).unwrap();
        let pts = d.points();
        assert_eq!(got, vec![pts[0], pts[2], pts[4], pts[6]]);
    }

    #[test]
    fn empirical_product_is_subset_of_training_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vals: Vec<f64> = (0..16).map(|_| rng.gen()).collect();
        let d = grid(4, 4, |s, k| vals[s * 4 + k]);
        let plan = SelectionPlan::separable(SelectionMethod::GreedyEntropyEmpirical, 2, 2);
        let got = select_latents(&d, &plan, None, &TrainConfig::new(0)).unwrap();
        assert_eq!(got.len(), 4);
        let pts = d.points();
        for p in &got {
            assert!(pts.contains(p));
        }
    }

    #[test]
    fn stationary_entropy_matches_oracle() {
        let d = grid(3, 3, |s, k| (s * k) as f64);
        let plan = SelectionPlan::total(SelectionMethod::GreedyEntropy, 3);
        let got = select_latents(&d, &plan, Some(&spec()), &TrainConfig::new(0)).unwrap();
        let pts = d.points();
        let mut k = spec().spec.cov(&pts, &pts).unwrap();
        for i in 0..pts.len() {
            k[(i, i)] += 0.1;
        }
        let want: Vec<SpaceTimePoint> = oracle(&k, 3, Criterion::Entropy)
            .into_iter()
            .map(|i| pts[i])
            .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn plan_validation() {
        let mut p = SelectionPlan::total(SelectionMethod::GreedyEntropyEmpirical, 4);
        assert!(p.validate().is_err());
        p.m_space = Some(2);
        p.m_time = Some(3);
        assert!(p.validate().is_ok());
        assert_eq!(p.m(), Some(6));
        let d = grid(3, 3, |s, k| (s + k) as f64);
        let plan = SelectionPlan::total(SelectionMethod::GreedyEntropy, 2);
        assert!(select_latents(&d, &plan, None, &TrainConfig::new(0)).is_err());
    }

    #[test]
    fn fitc_with_all_points_is_exact() {
        let d = grid(3, 3, |s, k| ((s as f64) - 0.7 * k as f64).sin());
        let pts = d.points();
        let y = d.values();
        let st = spec();
        let exact = GpModel::new(pts.clone(), y.clone(), st.spec.clone(), st.noise_var)
            .unwrap()
            .log_marginal_likelihood();
        let fitc = fitc_lml(&pts, &y, &pts, &st).unwrap();
        assert!((fitc - exact).abs() < 1e-8, "{fitc} vs {exact}");
    }

    #[test]
    fn pseudo_input_stays_in_the_box() {
        let mut obs = Vec::new();
        for (i, x) in [0.0, 0.1, 0.2, 5.0, 5.1, 5.2].iter().enumerate() {
            obs.push(Observation::new(SpaceTimePoint::new(*x, 0.0, 0.0), i as f64 % 2.0));
        }
        let d = Dataset::new(obs, None).unwrap();
        let mut cfg = TrainConfig::new(4);
        cfg.max_iters = 30;
        let got = learn_pseudo_inputs(&d, 1, &spec(), &cfg).unwrap();
        assert_eq!(got.len(), 1);
        assert!(got[0].x >= 0.0 && got[0].x <= 5.2);
        assert_eq!((got[0].y, got[0].t), (0.0, 0.0));
    }

    #[test]
    fn zero_iterations_return_farthest_point_seeds() {
        let d = grid(4, 3, |s, k| (s + k) as f64);
        let mut cfg = TrainConfig::new(0);
        cfg.max_iters = 0;
        cfg.restarts = 1;
        let got = learn_pseudo_inputs(&d, 3, &spec(), &cfg).unwrap();
        assert_eq!(got, farthest_point_init(&d.points(), 3));
    }

    #[test]
    fn latents_csv_round_trip() {
        let pts = vec![
            SpaceTimePoint::new(0.1, -2.5, 3.0),
            SpaceTimePoint::new(1.0 / 3.0, 0.0, 1e-9),
        ];
        let mut buf = Vec::new();
        write_latents_csv(&pts, &mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("x,y,t\n"));
        assert_eq!(read_latents_csv(buf.as_slice()).unwrap(), pts);
    }

    proptest! {
        #[test]
        fn selections_are_distinct_training_points(seed in 0u64..200, m in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vals: Vec<f64> = (0..24).map(|_| rng.gen()).collect();
            let d = grid(4, 6, |s, k| vals[s * 6 + k]);
            let pts = d.points();
            let (lo, hi) = bounding_box(&pts);
            for method in [SelectionMethod::GreedyEntropy, SelectionMethod::GreedyMi, SelectionMethod::Uniform] {
                let plan = SelectionPlan::total(method, m);
                let got = select_latents(&d, &plan, Some(&spec()), &TrainConfig::new(0)).unwrap();
                prop_assert_eq!(got.len(), m);
                for (i, p) in got.iter().enumerate() {
                    prop_assert!(pts.contains(p));
                    prop_assert!(!got[..i].contains(p));
                    for (d, c) in p.coords().iter().enumerate() {
                        prop_assert!(*c >= lo[d] && *c <= hi[d]);
                    }
                }
            }
        }
    }
}
