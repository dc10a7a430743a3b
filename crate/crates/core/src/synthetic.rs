//! Seeded synthetic data with two length-scale regimes along one spatial
//! axis: short spatial and temporal scales on the left, long ones on the
//! right, joined by a smooth logistic transition.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Observation, SpaceTimePoint};
use crate::error::{Error, Result};
use crate::gp::factorize;
use crate::kernels::{KernelFamily, KernelSpec};
use crate::nonstationary::{gram_nonstationary, LatentLengthField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    /// Stations evenly spaced on `x in [0, 1]`, `y = 0`.
    pub n_stations: usize,
    /// Timesteps `t = 0, 1, ..`.
    pub n_times: usize,
    /// `(l_x, l_t)` on the left.
    pub short_scales: (f64, f64),
    /// `(l_x, l_t)` on the right.
    pub long_scales: (f64, f64),
    /// Width of the logistic transition around `x = 0.5`.
    pub transition: f64,
    pub noise_sd: f64,
    pub family: KernelFamily,
}

impl SyntheticConfig {
    /// 24 stations by 30 steps. Even stations at even steps train, odd
    /// stations at every step are the test set (12 by 30).
    pub fn two_regime(seed: u64) -> Self {
        SyntheticConfig {
            seed,
            n_stations: 24,
            n_times: 30,
            short_scales: (0.15, 4.0),
            long_scales: (1.5, 30.0),
            transition: 0.05,
            noise_sd: 0.05,
            family: KernelFamily::Ch2,
        }
    }

    /// 6 stations by 10 steps, split like the two-regime default.
    pub fn toy(seed: u64) -> Self {
        SyntheticConfig {
            n_stations: 6,
            n_times: 10,
            ..Self::two_regime(seed)
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if self.n_stations < 2 || self.n_times < 1 {
            return Err(Error::InvalidArgument(
                "need at least 2 stations and 1 timestep".into(),
            ));
        }
        if ![
            self.short_scales.0,
            self.short_scales.1,
            self.long_scales.0,
            self.long_scales.1,
            self.transition,
        ]
        .into_iter()
        .all(ok)
            || !(self.noise_sd >= 0.0)
        {
            return Err(Error::InvalidArgument("synthetic scales must be positive".into()));
        }
        Ok(())
    }

    /// True `[l_x, l_y, l_t]` at spatial position `x`.
    pub fn scales_at(&self, x: f64) -> [f64; 3] {
        let w = 1.0 / (1.0 + (-(x - 0.5) / self.transition).exp());
        let mix = |a: f64, b: f64| (a.ln() * (1.0 - w) + b.ln() * w).exp();
        [
            mix(self.short_scales.0, self.long_scales.0),
            1.0,
            mix(self.short_scales.1, self.long_scales.1),
        ]
    }

    pub fn station_x(&self, s: usize) -> f64 {
        s as f64 / (self.n_stations - 1) as f64
    }
}

/// All generated observations plus the standard split.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub full: Dataset,
    /// Even stations at even timesteps.
    pub train: Dataset,
    /// Odd stations at every timestep.
    pub test: Dataset,
    pub field: LatentLengthField,
}

/// Draws one sample path of the non-stationary GP with the configured
/// field, plus white noise. Station ids are `0..n_stations`.
pub fn generate(config: &SyntheticConfig) -> Result<SyntheticData> {
    config.validate()?;
    let mut points = Vec::new();
    let mut ids = Vec::new();
    for s in 0..config.n_stations {
        for k in 0..config.n_times {
            points.push(SpaceTimePoint::new(config.station_x(s), 0.0, k as f64));
            ids.push(s as i64);
        }
    }
    let n = points.len();
    let scales: Vec<[f64; 3]> = points.iter().map(|p| config.scales_at(p.x)).collect();
    let field = LatentLengthField::new(
        points.clone(),
        scales.iter().map(|s| s[0]).collect(),
        scales.iter().map(|s| s[1]).collect(),
        scales.iter().map(|s| s[2]).collect(),
    )?;
    let base = KernelSpec::new(config.family, 1.0);
    // noisy values drawn jointly; the noise also keeps the factorization stable
    let mut k = gram_nonstationary(&points, &points, &field, &field, &base, false)?;
    for i in 0..n {
        k[(i, i)] += config.noise_sd * config.noise_sd;
    }
    let chol = factorize(&k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let z: DVector<f64> = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
    let y = chol.chol.l() * z;
    let obs: Vec<Observation> = points
        .iter()
        .zip(y.iter())
        .map(|(p, v)| Observation::new(*p, *v))
        .collect();
    let full = Dataset::new(obs, Some(ids.clone()))?;
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let s = ids[i];
        let k = p.t as i64;
        if s % 2 == 1 {
            test_idx.push(i);
        } else if k % 2 == 0 {
            train_idx.push(i);
        }
    }
    Ok(SyntheticData {
        train: full.subset(&train_idx)?,
        test: full.subset(&test_idx)?,
        full,
        field,
    })
}
