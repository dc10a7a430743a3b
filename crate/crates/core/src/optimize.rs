//! Deterministic box-constrained L-BFGS maximizer with seeded restarts.
//!
//! All positive quantities are optimized in log space by the callers, so the
//! optimizer only sees an unconstrained-looking vector with finite bounds.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_restarts() -> usize {
    3
}

fn default_max_iters() -> usize {
    200
}

fn default_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of starts; the first is the deterministic initialization.
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Stop once the relative objective change falls below this.
    #[serde(default = "default_tol")]
    pub tol: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        TrainConfig {
            restarts: default_restarts(),
            max_iters: default_max_iters(),
            tol: default_tol(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("restarts must be >= 1".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be positive, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// One accepted iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub restart: usize,
    pub iteration: usize,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    /// Index of the restart that produced `x`.
    pub best_restart: usize,
    pub log: Vec<LogEntry>,
}

/// Objective returning its value and gradient. Errors and non-finite values
/// are treated as an infinitely bad point.
pub trait Objective {
    fn value_grad(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl<F> Objective for F
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn value_grad(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

impl Bound {
    pub fn new(lo: f64, hi: f64) -> Self {
        Bound { lo, hi }
    }

    /// Pins a coordinate to one value.
    pub fn fixed(v: f64) -> Self {
        Bound { lo: v, hi: v }
    }

    pub fn is_fixed(&self) -> bool {
        self.lo == self.hi
    }

    fn clamp(&self, v: f64) -> f64 {
        v.max(self.lo).min(self.hi)
    }
}

fn evaluate<O: Objective>(obj: &mut O, x: &[f64], bounds: &[Bound]) -> Option<(f64, Vec<f64>)> {
    match obj.value_grad(x) {
        Ok((v, mut g)) if v.is_finite() && g.iter().all(|d| d.is_finite()) => {
            for (gi, b) in g.iter_mut().zip(bounds) {
                if b.is_fixed() {
                    *gi = 0.0;
                }
            }
            Some((v, g))
        }
        Ok(_) => None,
        Err(e) => {
            log::debug!("objective failed: {e}");
            None
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projected gradient: zero where a bound blocks ascent.
fn free_grad(x: &[f64], g: &[f64], bounds: &[Bound]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(bounds)
        .map(|((xi, gi), b)| {
            if b.is_fixed() || (*xi >= b.hi && *gi > 0.0) || (*xi <= b.lo && *gi < 0.0) {
                0.0
            } else {
                *gi
            }
        })
        .collect()
}

/// Ascent direction from the two-loop recursion on the negated problem.
fn lbfgs_direction(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y) in memory.iter().rev() {
        let rho = 1.0 / dot(y, s);
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push((a, rho));
    }
    if let Some((s, y)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y), (a, rho)) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q
}

const MEMORY: usize = 10;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 40;

/// Runs a single ascent from `x0` (projected into the box). Returns the final
/// point, its value and the accepted-step log, or `None` when even the start
/// point is invalid.
fn ascend<O: Objective>(
    obj: &mut O,
    x0: &[f64],
    bounds: &[Bound],
    max_iters: usize,
    tol: f64,
    restart: usize,
) -> Option<(Vec<f64>, f64, Vec<LogEntry>)> {
    let mut x: Vec<f64> = x0.iter().zip(bounds).map(|(v, b)| b.clamp(*v)).collect();
    let (mut f, mut g) = evaluate(obj, &x, bounds)?;
    let mut log = vec![LogEntry {
        restart,
        iteration: 0,
        value: f,
    }];
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();
    for iter in 1..=max_iters {
        let pg = free_grad(&x, &g, bounds);
        if pg.iter().all(|v| *v == 0.0) {
            break;
        }
        let mut dir = lbfgs_direction(&pg, &memory);
        for (d, p) in dir.iter_mut().zip(&pg) {
            if *p == 0.0 {
                *d = 0.0;
            }
        }
        if dot(&dir, &pg) <= 0.0 {
            memory.clear();
            dir = pg.clone();
        }
        let mut step = if memory.is_empty() {
            1.0 / dir.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let trial: Vec<f64> = x
                .iter()
                .zip(&dir)
                .zip(bounds)
                .map(|((xi, di), b)| b.clamp(xi + step * di))
                .collect();
            let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            if s.iter().all(|v| *v == 0.0) {
                break;
            }
            if let Some((ft, gt)) = evaluate(obj, &trial, bounds) {
                if ft >= f + ARMIJO * dot(&pg, &s).max(0.0) {
                    accepted = Some((trial, s, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((trial, s, ft, gt)) = accepted else {
            if memory.is_empty() {
                break;
            }
            memory.clear();
            continue;
        };
        // curvature pair for the minimization of -f
        let y: Vec<f64> = g.iter().zip(&gt).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if memory.len() == MEMORY {
                memory.pop_front();
            }
            memory.push_back((s, y));
        }
        let change = (ft - f).abs() / f.abs().max(1.0);
        x = trial;
        f = ft;
        g = gt;
        log.push(LogEntry {
            restart,
            iteration: iter,
            value: f,
        });
        if change < tol {
            break;
        }
    }
    Some((x, f, log))
}

/// Maximizes `obj` over the box. Restart 0 starts at `x0`; the others start
/// at points drawn uniformly inside `init_ranges` (log-uniform for the
/// log-parametrized coordinates), using a ChaCha stream seeded by `seed`.
pub fn maximize<O: Objective>(
    obj: &mut O,
    x0: &[f64],
    bounds: &[Bound],
    init_ranges: &[Bound],
    config: &TrainConfig,
) -> Result<OptimResult> {
    config.validate()?;
    if x0.len() != bounds.len() || x0.len() != init_ranges.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} parameters, {} bounds, {} init ranges",
            x0.len(),
            bounds.len(),
            init_ranges.len()
        )));
    }
    if bounds.iter().any(|b| !(b.lo <= b.hi)) {
        return Err(Error::InvalidArgument("empty parameter bound".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(Vec<f64>, f64, usize)> = None;
    let mut log = Vec::new();
    for restart in 0..config.restarts {
        let start: Vec<f64> = if restart == 0 {
            x0.to_vec()
        } else {
            init_ranges
                .iter()
                .zip(bounds)
                .zip(x0)
                .map(|((r, b), v)| {
                    if b.is_fixed() || r.is_fixed() {
                        *v
                    } else {
                        rng.gen_range(r.lo..=r.hi)
                    }
                })
                .collect()
        };
        match ascend(obj, &start, bounds, config.max_iters, config.tol, restart) {
            Some((x, f, entries)) => {
                log::info!(
                    "restart {restart}: {} accepted steps, objective {f:.6}",
                    entries.len() - 1
                );
                log.extend(entries);
                if best.as_ref().is_none_or(|(_, bf, _)| f > *bf) {
                    best = Some((x, f, restart));
                }
            }
            None => log::warn!("restart {restart}: invalid starting point"),
        }
    }
    let (x, value, best_restart) = best.ok_or_else(|| {
        Error::Optimization("no restart produced a finite objective".into())
    })?;
    Ok(OptimResult {
        x,
        value,
        best_restart,
        log,
    })
}

/// Central finite-difference gradient with relative step `rel`.
pub fn finite_difference<F>(mut f: F, x: &[f64], rel: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut g = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = rel * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f(&xp)?;
        xp[i] = x[i] - h;
        let fm = f(&xp)?;
        xp[i] = x[i];
        g.push((fp - fm) / (2.0 * h));
    }
    Ok(g)
}
