//! Stationary covariance families.
//!
//! `Ch1` and `Ch2` are non-separable space-time kernels of the Cressie–Huang
//! class, evaluated on a scaled spatial distance `h` and a scaled temporal
//! distance `u`. `Esgp` is the compactly supported "exact sparse" kernel and
//! `SqExp` the squared exponential; both act on a single scaled distance
//! `tau = sqrt(h^2 + u^2)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::SpaceTimePoint;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Ch1,
    Ch2,
    Esgp,
    SqExp,
}

impl KernelFamily {
    pub fn is_space_time(self) -> bool {
        matches!(self, KernelFamily::Ch1 | KernelFamily::Ch2)
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ch1" => Ok(KernelFamily::Ch1),
            "ch2" => Ok(KernelFamily::Ch2),
            "esgp" => Ok(KernelFamily::Esgp),
            "sqexp" => Ok(KernelFamily::SqExp),
            other => Err(Error::InvalidArgument(format!(
                "unknown kernel family '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            KernelFamily::Ch1 => "ch1",
            KernelFamily::Ch2 => "ch2",
            KernelFamily::Esgp => "esgp",
            KernelFamily::SqExp => "sqexp",
        };
        f.write_str(s)
    }
}

fn default_p() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub sigma_f: f64,
    /// Exponent `p` of the space-time families.
    #[serde(default = "default_p")]
    pub spatial_dim_p: u32,
    /// `[l_x, l_y, l_t]`, only used when distances are scaled internally.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_scales: Option<Vec<f64>>,
    /// Multiply `Ch2` by `sigma_f^2` as an overall variance.
    #[serde(default)]
    pub ch2_overall_variance: bool,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, sigma_f: f64) -> Self {
        KernelSpec {
            family,
            sigma_f,
            spatial_dim_p: 2,
            length_scales: None,
            ch2_overall_variance: false,
        }
    }

    pub fn with_length_scales(mut self, scales: [f64; 3]) -> Self {
        self.length_scales = Some(scales.to_vec());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_f > 0.0 && self.sigma_f.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma_f must be positive, got {}",
                self.sigma_f
            )));
        }
        if self.spatial_dim_p < 1 {
            return Err(Error::InvalidArgument("spatial_dim_p must be >= 1".into()));
        }
        if let Some(ls) = &self.length_scales {
            if ls.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
                return Err(Error::InvalidArgument(format!(
                    "length scales must be positive, got {ls:?}"
                )));
            }
        }
        Ok(())
    }

    /// Value at zero separation.
    pub fn variance(&self) -> f64 {
        self.eval_sq(0.0, 0.0)
    }

    /// Evaluates the family on squared scaled distances (`h^2`, `u^2`).
    pub(crate) fn eval_sq(&self, h2: f64, u2: f64) -> f64 {
        let s2 = self.sigma_f * self.sigma_f;
        let p = self.spatial_dim_p as f64;
        match self.family {
            KernelFamily::Ch1 => s2 * (u2 + 1.0).powf(-(p - 1.0) / 2.0) * (-h2 / (u2 + 1.0)).exp(),
            KernelFamily::Ch2 => {
                let k = (s2 * u2 + 1.0) / ((u2 + 1.0).powi(2) + h2).powf(p / 2.0);
                if self.ch2_overall_variance {
                    s2 * k
                } else {
                    k
                }
            }
            KernelFamily::Esgp => s2 * esgp_unit((h2 + u2).sqrt()),
            KernelFamily::SqExp => s2 * (-(h2 + u2)).exp(),
        }
    }

    /// Value and partials `(k, dk/dh2, dk/du2, dk/dlog sigma_f)`.
    pub(crate) fn eval_sq_grad(&self, h2: f64, u2: f64) -> (f64, f64, f64, f64) {
        let s2 = self.sigma_f * self.sigma_f;
        let p = self.spatial_dim_p as f64;
        match self.family {
            KernelFamily::Ch1 => {
                let a = u2 + 1.0;
                let k = s2 * a.powf(-(p - 1.0) / 2.0) * (-h2 / a).exp();
                let dh = -k / a;
                let du = k * (-(p - 1.0) / (2.0 * a) + h2 / (a * a));
                (k, dh, du, 2.0 * k)
            }
            KernelFamily::Ch2 => {
                let a = u2 + 1.0;
                let num = s2 * u2 + 1.0;
                let den = a * a + h2;
                let dpow = den.powf(-p / 2.0);
                let k = num * dpow;
                let dh = -(p / 2.0) * num * dpow / den;
                let du = s2 * dpow - p * num * dpow * a / den;
                let dsf = 2.0 * s2 * u2 * dpow;
                if self.ch2_overall_variance {
                    (s2 * k, s2 * dh, s2 * du, 2.0 * s2 * k + s2 * dsf)
                } else {
                    (k, dh, du, dsf)
                }
            }
            KernelFamily::Esgp => {
                let tau2 = h2 + u2;
                let k = s2 * esgp_unit(tau2.sqrt());
                let d = s2 * esgp_unit_dtau2(tau2);
                (k, d, d, 2.0 * k)
            }
            KernelFamily::SqExp => {
                let k = s2 * (-(h2 + u2)).exp();
                (k, -k, -k, 2.0 * k)
            }
        }
    }

    fn scales(&self) -> Result<[f64; 3]> {
        match self.length_scales.as_deref() {
            Some([lx, ly, lt]) => Ok([*lx, *ly, *lt]),
            Some(other) => Err(Error::DimensionMismatch(format!(
                "expected 3 length scales (x, y, t), got {}",
                other.len()
            ))),
            None => Err(Error::InvalidArgument(
                "stationary evaluation needs length scales".into(),
            )),
        }
    }
}

fn check_distance(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} must be finite and non-negative, got {v}"
        )))
    }
}

fn check_family(spec: &KernelSpec, family: KernelFamily) -> Result<()> {
    spec.validate()?;
    if spec.family != family {
        return Err(Error::InvalidArgument(format!(
            "expected a {family} kernel, got {}",
            spec.family
        )));
    }
    Ok(())
}

/// `sigma_f^2 / (u^2+1)^((p-1)/2) * exp(-h^2/(u^2+1))`
pub fn eval_ch1(h: f64, u: f64, spec: &KernelSpec) -> Result<f64> {
    check_distance("h", h)?;
    check_distance("u", u)?;
    check_family(spec, KernelFamily::Ch1)?;
    Ok(spec.eval_sq(h * h, u * u))
}

/// `(sigma_f^2 u^2 + 1) / ((u^2+1)^2 + h^2)^(p/2)`
///
/// Equals 1 at the origin whatever `sigma_f`. The family is only positive
/// semi-definite for `sigma_f <= 1`: beyond that `k(0, u)` exceeds `k(0, 0)`.
pub fn eval_ch2(h: f64, u: f64, spec: &KernelSpec) -> Result<f64> {
    check_distance("h", h)?;
    check_distance("u", u)?;
    check_family(spec, KernelFamily::Ch2)?;
    Ok(spec.eval_sq(h * h, u * u))
}

pub fn eval_esgp(tau: f64, spec: &KernelSpec) -> Result<f64> {
    check_distance("tau", tau)?;
    check_family(spec, KernelFamily::Esgp)?;
    Ok(spec.sigma_f * spec.sigma_f * esgp_unit(tau))
}

/// Exact-sparse kernel with unit amplitude; exactly zero for `tau >= 1`.
pub fn esgp_unit(tau: f64) -> f64 {
    if tau >= 1.0 {
        return 0.0;
    }
    let a = 2.0 * PI * tau;
    ((2.0 + a.cos()) / 3.0 * (1.0 - tau) + a.sin() / (2.0 * PI)).max(0.0)
}

/// d esgp_unit / d tau.
pub fn esgp_unit_dtau(tau: f64) -> f64 {
    if tau >= 1.0 {
        return 0.0;
    }
    let a = 2.0 * PI * tau;
    -(2.0 * PI / 3.0) * a.sin() * (1.0 - tau) + (2.0 / 3.0) * (a.cos() - 1.0)
}

/// d esgp_unit / d (tau^2), finite at the origin.
pub fn esgp_unit_dtau2(tau2: f64) -> f64 {
    let tau = tau2.sqrt();
    if tau >= 1.0 {
        return 0.0;
    }
    if tau < 1e-4 {
        // esgp'(tau) = -(4 pi^2 / 3) tau + O(tau^3)
        return -2.0 * PI * PI / 3.0;
    }
    esgp_unit_dtau(tau) / (2.0 * tau)
}

/// Squared scaled spatial and temporal distances under fixed length scales.
pub(crate) fn scaled_sq(a: &SpaceTimePoint, b: &SpaceTimePoint, scales: &[f64; 3]) -> (f64, f64) {
    let dx = (a.x - b.x) / scales[0];
    let dy = (a.y - b.y) / scales[1];
    let dt = (a.t - b.t) / scales[2];
    (dx * dx + dy * dy, dt * dt)
}

/// Gram matrix of a stationary kernel with its own length scales.
///
/// `h = sqrt((dx/l_x)^2 + (dy/l_y)^2)` and `u = |dt|/l_t`.
pub fn gram_stationary(
    a: &[SpaceTimePoint],
    b: &[SpaceTimePoint],
    spec: &KernelSpec,
) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let scales = spec.scales()?;
    let same = std::ptr::eq(a, b) || a == b;
    let mut k = DMatrix::zeros(a.len(), b.len());
    for j in 0..b.len() {
        let i0 = if same { j } else { 0 };
        for i in i0..a.len() {
            let (h2, u2) = scaled_sq(&a[i], &b[j], &scales);
            let v = spec.eval_sq(h2, u2);
            k[(i, j)] = v;
            if same {
                k[(j, i)] = v;
            }
        }
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(family: KernelFamily, sigma_f: f64) -> KernelSpec {
        KernelSpec::new(family, sigma_f)
    }

    #[test]
    fn ch1_examples() {
        let s = spec(KernelFamily::Ch1, 1.0);
        assert!((eval_ch1(0.0, 0.0, &s).unwrap() - 1.0).abs() < 1e-12);
        assert!((eval_ch1(1.0, 0.0, &s).unwrap() - (-1.0f64).exp()).abs() < 1e-12);
        assert!((eval_ch1(0.0, 1.0, &s).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ch2_examples() {
        assert!((eval_ch2(0.0, 0.0, &spec(KernelFamily::Ch2, 0.3)).unwrap() - 1.0).abs() < 1e-12);
        assert!((eval_ch2(0.0, 1.0, &spec(KernelFamily::Ch2, 1.0)).unwrap() - 0.5).abs() < 1e-12);
        assert!((eval_ch2(1.0, 0.0, &spec(KernelFamily::Ch2, 2.0)).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ch2_overall_variance_flag() {
        let mut s = spec(KernelFamily::Ch2, 2.0);
        s.ch2_overall_variance = true;
        assert!((eval_ch2(0.0, 0.0, &s).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn esgp_examples() {
        assert_eq!(eval_esgp(0.0, &spec(KernelFamily::Esgp, 1.0)).unwrap(), 1.0);
        assert_eq!(eval_esgp(1.0, &spec(KernelFamily::Esgp, 3.0)).unwrap(), 0.0);
        let v = eval_esgp(0.5, &spec(KernelFamily::Esgp, 1.0)).unwrap();
        assert!((v - 1.0 / 6.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = spec(KernelFamily::Ch1, 1.0);
        assert!(eval_ch1(-1.0, 0.0, &s).is_err());
        assert!(eval_ch1(f64::NAN, 0.0, &s).is_err());
        assert!(eval_ch1(0.0, f64::INFINITY, &s).is_err());
        assert!(eval_ch2(0.0, 0.0, &s).is_err());
        assert!(eval_esgp(-0.1, &spec(KernelFamily::Esgp, 1.0)).is_err());
        assert!(eval_ch1(0.0, 0.0, &spec(KernelFamily::Ch1, 0.0)).is_err());
    }

    #[test]
    fn gram_single_and_identical_points() {
        let s = spec(KernelFamily::Ch1, 1.5).with_length_scales([1.0, 1.0, 1.0]);
        let p = SpaceTimePoint::new(0.3, 0.1, 2.0);
        let g = gram_stationary(&[p], &[p], &s).unwrap();
        assert_eq!(g.shape(), (1, 1));
        assert!((g[(0, 0)] - 2.25).abs() < 1e-12);
        let g = gram_stationary(&[p, p], &[p, p], &s).unwrap();
        assert!(g.iter().all(|v| (v - 2.25).abs() < 1e-12));
    }

    #[test]
    fn gram_collinear_matches_scalar() {
        let s = spec(KernelFamily::Ch1, 1.2).with_length_scales([0.5, 2.0, 3.0]);
        let pts = [
            SpaceTimePoint::new(0.0, 0.0, 0.0),
            SpaceTimePoint::new(0.5, 1.0, 1.5),
            SpaceTimePoint::new(1.0, 2.0, 3.0),
        ];
        let g = gram_stationary(&pts, &pts, &s).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let dx = (pts[i].x - pts[j].x) / 0.5;
                let dy = (pts[i].y - pts[j].y) / 2.0;
                let h = (dx * dx + dy * dy).sqrt();
                let u = (pts[i].t - pts[j].t).abs() / 3.0;
                assert!((g[(i, j)] - eval_ch1(h, u, &s).unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gram_needs_three_scales() {
        let mut s = spec(KernelFamily::SqExp, 1.0);
        s.length_scales = Some(vec![1.0, 1.0]);
        let p = SpaceTimePoint::new(0.0, 0.0, 0.0);
        assert!(matches!(
            gram_stationary(&[p], &[p], &s),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn esgp_compact_support_in_gram() {
        let s = spec(KernelFamily::Esgp, 1.0).with_length_scales([1.0, 1.0, 1.0]);
        let pts = [
            SpaceTimePoint::new(0.0, 0.0, 0.0),
            SpaceTimePoint::new(0.6, 0.0, 0.8),
            SpaceTimePoint::new(3.0, 0.0, 0.0),
        ];
        let g = gram_stationary(&pts, &pts, &s).unwrap();
        assert_eq!(g[(0, 1)], 0.0);
        assert_eq!(g[(0, 2)], 0.0);
        assert_eq!(g[(1, 2)], 0.0);
    }

    #[test]
    fn esgp_derivatives_match_finite_differences() {
        for &tau in &[1e-5, 0.01, 0.2, 0.5, 0.77, 0.99] {
            let h = 1e-6;
            let fd = (esgp_unit(tau + h) - esgp_unit(tau - h)) / (2.0 * h);
            assert!((esgp_unit_dtau(tau) - fd).abs() < 1e-6, "tau={tau}");
            let t2 = tau * tau;
            let h2 = 1e-7 * t2.max(1e-6);
            let fd2 = (esgp_unit((t2 + h2).sqrt()) - esgp_unit((t2 - h2).sqrt())) / (2.0 * h2);
            assert!(
                (esgp_unit_dtau2(t2) - fd2).abs() < 1e-4 * fd2.abs().max(1.0),
                "tau={tau}: {} vs {fd2}",
                esgp_unit_dtau2(t2)
            );
        }
    }

    #[test]
    fn family_partials_match_finite_differences() {
        let families = [
            KernelFamily::Ch1,
            KernelFamily::Ch2,
            KernelFamily::Esgp,
            KernelFamily::SqExp,
        ];
        for fam in families {
            let mut s = spec(fam, 0.8);
            s.spatial_dim_p = 2;
            for &(h2, u2) in &[(0.1, 0.2), (0.3, 0.05), (1.3, 2.0)] {
                let (k, dh, du, dsf) = s.eval_sq_grad(h2, u2);
                assert!((k - s.eval_sq(h2, u2)).abs() < 1e-15);
                let e = 1e-6;
                let fdh = (s.eval_sq(h2 + e, u2) - s.eval_sq(h2 - e, u2)) / (2.0 * e);
                let fdu = (s.eval_sq(h2, u2 + e) - s.eval_sq(h2, u2 - e)) / (2.0 * e);
                let mut sp = s.clone();
                sp.sigma_f *= e.exp();
                let mut sm = s.clone();
                sm.sigma_f *= (-e).exp();
                let fds = (sp.eval_sq(h2, u2) - sm.eval_sq(h2, u2)) / (2.0 * e);
                assert!((dh - fdh).abs() < 1e-6, "{fam} dh");
                assert!((du - fdu).abs() < 1e-6, "{fam} du");
                assert!((dsf - fds).abs() < 1e-6, "{fam} dsf");
            }
        }
    }

    proptest! {
        #[test]
        fn ch1_non_increasing_in_h(u in 0.0f64..5.0, h in 0.0f64..5.0, dh in 0.0f64..2.0) {
            let s = spec(KernelFamily::Ch1, 1.3);
            prop_assert!(eval_ch1(h + dh, u, &s).unwrap() <= eval_ch1(h, u, &s).unwrap());
        }

        #[test]
        fn ch1_bounded_by_variance(h in 0.0f64..5.0, u in 0.0f64..5.0, sf in 0.1f64..3.0) {
            let s = spec(KernelFamily::Ch1, sf);
            let v = eval_ch1(h, u, &s).unwrap();
            prop_assert!(v > 0.0 || h > 5.0);
            prop_assert!(v <= sf * sf * (1.0 + 1e-15));
        }

        #[test]
        fn esgp_continuous_at_boundary(eps in 1e-12f64..1e-6, sf in 0.1f64..5.0) {
            let s = spec(KernelFamily::Esgp, sf);
            let v = eval_esgp(1.0 - eps, &s).unwrap();
            prop_assert!(v.abs() <= 10.0 * eps * sf * sf);
        }

        #[test]
        fn esgp_in_range(tau in 0.0f64..2.0) {
            let v = esgp_unit(tau);
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
