//! Non-stationary, non-separable space-time covariance built from a
//! stationary space-time family and per-point anisotropic length scales.
//!
//! For points `i`, `j` with diagonal local matrices
//! `S_i = diag(lx_i^2, ly_i^2, lt_i^2)`:
//!
//! ```text
//! k(i, j) = |S_i|^1/4 |S_j|^1/4 |(S_i + S_j)/2|^-1/2 * K(sqrt(q_s), sqrt(q_t))
//! q_s = dx^2 / ((lx_i^2 + lx_j^2)/2) + dy^2 / ((ly_i^2 + ly_j^2)/2)
//! q_t = dt^2 / ((lt_i^2 + lt_j^2)/2)
//! ```
//!
//! With the sparse flag each entry is further multiplied by the unit
//! exact-sparse kernel at `sqrt(q_s + q_t)`, so entries are exactly zero
//! once that scaled distance reaches 1.

use nalgebra::DMatrix;

use crate::data::SpaceTimePoint;
use crate::error::{Error, Result};
use crate::kernels::{esgp_unit, esgp_unit_dtau2, KernelSpec};

/// Latent length scales `(l_x, l_y, l_t)` evaluated at a list of points.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentLengthField {
    pub points: Vec<SpaceTimePoint>,
    pub lx: Vec<f64>,
    pub ly: Vec<f64>,
    pub lt: Vec<f64>,
}

impl LatentLengthField {
    pub fn new(points: Vec<SpaceTimePoint>, lx: Vec<f64>, ly: Vec<f64>, lt: Vec<f64>) -> Result<Self> {
        let n = points.len();
        if lx.len() != n || ly.len() != n || lt.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "field over {n} points has {}/{}/{} scales",
                lx.len(),
                ly.len(),
                lt.len()
            )));
        }
        if lx
            .iter()
            .chain(&ly)
            .chain(&lt)
            .any(|l| !(*l > 0.0 && l.is_finite()))
        {
            return Err(Error::InvalidArgument(
                "latent length scales must be positive and finite".into(),
            ));
        }
        Ok(LatentLengthField { points, lx, ly, lt })
    }

    /// Same scales `[l_x, l_y, l_t]` at every point.
    pub fn constant(points: Vec<SpaceTimePoint>, scales: [f64; 3]) -> Result<Self> {
        let n = points.len();
        Self::new(
            points,
            vec![scales[0]; n],
            vec![scales[1]; n],
            vec![scales[2]; n],
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn scales_at(&self, i: usize) -> [f64; 3] {
        [self.lx[i], self.ly[i], self.lt[i]]
    }

    /// Squared scales, the diagonal of the local matrix at each point.
    pub(crate) fn squared(&self) -> Vec<[f64; 3]> {
        (0..self.len())
            .map(|i| {
                let [a, b, c] = self.scales_at(i);
                [a * a, b * b, c * c]
            })
            .collect()
    }
}

fn check_scales(scales: &[f64; 3]) -> Result<()> {
    if scales.iter().all(|l| *l > 0.0 && l.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "length scales must be positive, got {scales:?}"
        )))
    }
}

/// `|S_i|^1/4 |S_j|^1/4 |(S_i+S_j)/2|^-1/2` for diagonal local matrices.
/// Lies in `(0, 1]` and equals 1 exactly when the scales agree.
pub fn prefactor(field_i: [f64; 3], field_j: [f64; 3]) -> Result<f64> {
    check_scales(&field_i)?;
    check_scales(&field_j)?;
    let si = field_i.map(|l| l * l);
    let sj = field_j.map(|l| l * l);
    Ok(prefactor_sq(&si, &sj))
}

fn prefactor_sq(si: &[f64; 3], sj: &[f64; 3]) -> f64 {
    let mut p = 1.0;
    for d in 0..3 {
        // sqrt(2 l_i l_j / (l_i^2 + l_j^2)) per dimension
        p *= (2.0 * (si[d] * sj[d]).sqrt() / (si[d] + sj[d])).sqrt();
    }
    p
}

/// Squared scaled distances `(q_s, q_t)` between two points.
pub fn scaled_sq_dists(
    p_i: &SpaceTimePoint,
    p_j: &SpaceTimePoint,
    field_i: [f64; 3],
    field_j: [f64; 3],
) -> Result<(f64, f64)> {
    check_scales(&field_i)?;
    check_scales(&field_j)?;
    let si = field_i.map(|l| l * l);
    let sj = field_j.map(|l| l * l);
    let q = axis_sq(p_i, p_j, &si, &sj);
    Ok((q[0] + q[1], q[2]))
}

fn axis_sq(p_i: &SpaceTimePoint, p_j: &SpaceTimePoint, si: &[f64; 3], sj: &[f64; 3]) -> [f64; 3] {
    let d = [p_i.x - p_j.x, p_i.y - p_j.y, p_i.t - p_j.t];
    [
        2.0 * d[0] * d[0] / (si[0] + sj[0]),
        2.0 * d[1] * d[1] / (si[1] + sj[1]),
        2.0 * d[2] * d[2] / (si[2] + sj[2]),
    ]
}

/// Entry `k(i, j)` from squared local scales.
pub(crate) fn entry(
    base: &KernelSpec,
    sparse: bool,
    p_i: &SpaceTimePoint,
    p_j: &SpaceTimePoint,
    si: &[f64; 3],
    sj: &[f64; 3],
) -> f64 {
    let q = axis_sq(p_i, p_j, si, sj);
    let qs = q[0] + q[1];
    let qt = q[2];
    let taper = if sparse {
        let s = esgp_unit((qs + qt).sqrt());
        if s == 0.0 {
            return 0.0;
        }
        s
    } else {
        1.0
    };
    prefactor_sq(si, sj) * base.eval_sq(qs, qt) * taper
}

/// Partial derivatives of one kernel entry.
#[derive(Debug, Clone, Copy)]
pub(crate) struct EntryGrad {
    /// d k / d log sigma_f
    pub d_log_sf: f64,
    /// d k / d log l_d at point i
    pub d_i: [f64; 3],
    /// d k / d log l_d at point j
    pub d_j: [f64; 3],
}

pub(crate) fn entry_grad(
    base: &KernelSpec,
    sparse: bool,
    p_i: &SpaceTimePoint,
    p_j: &SpaceTimePoint,
    si: &[f64; 3],
    sj: &[f64; 3],
) -> EntryGrad {
    let q = axis_sq(p_i, p_j, si, sj);
    let qs = q[0] + q[1];
    let qt = q[2];
    let (taper, dtaper) = if sparse {
        let tau2 = qs + qt;
        let s = esgp_unit(tau2.sqrt());
        if s == 0.0 {
            return EntryGrad {
                d_log_sf: 0.0,
                d_i: [0.0; 3],
                d_j: [0.0; 3],
            };
        }
        (s, esgp_unit_dtau2(tau2))
    } else {
        (1.0, 0.0)
    };
    let pf = prefactor_sq(si, sj);
    let (b, db_qs, db_qt, db_sf) = base.eval_sq_grad(qs, qt);
    let k = pf * b * taper;
    let mut d_i = [0.0; 3];
    let mut d_j = [0.0; 3];
    for d in 0..3 {
        let sum = si[d] + sj[d];
        // d log P / d log l_i = (s_j - s_i) / (2 (s_i + s_j))
        let dlogp_i = 0.5 * (sj[d] - si[d]) / sum;
        let db_dq = if d == 2 { db_qt } else { db_qs };
        // d q_d / d log l_i = -2 q_d s_i / (s_i + s_j)
        let dq_i = -2.0 * q[d] * si[d] / sum;
        let dq_j = -2.0 * q[d] * sj[d] / sum;
        let chain = pf * (db_dq * taper + b * dtaper);
        d_i[d] = k * dlogp_i + chain * dq_i;
        d_j[d] = -k * dlogp_i + chain * dq_j;
    }
    EntryGrad {
        d_log_sf: pf * db_sf * taper,
        d_i,
        d_j,
    }
}

fn check_aligned(points: &[SpaceTimePoint], field: &LatentLengthField, name: &str) -> Result<()> {
    if field.points.len() != points.len() {
        return Err(Error::DimensionMismatch(format!(
            "{name}: field has {} points, expected {}",
            field.points.len(),
            points.len()
        )));
    }
    if field.points.as_slice() != points {
        return Err(Error::DimensionMismatch(format!(
            "{name}: field is evaluated at different points"
        )));
    }
    Ok(())
}

/// Non-stationary gram matrix between point sets `a` and `b`.
pub fn gram_nonstationary(
    a: &[SpaceTimePoint],
    b: &[SpaceTimePoint],
    field_a: &LatentLengthField,
    field_b: &LatentLengthField,
    base: &KernelSpec,
    sparse: bool,
) -> Result<DMatrix<f64>> {
    base.validate()?;
    if !base.family.is_space_time() {
        return Err(Error::InvalidArgument(format!(
            "non-stationary base must be ch1 or ch2, got {}",
            base.family
        )));
    }
    check_aligned(a, field_a, "field_a")?;
    check_aligned(b, field_b, "field_b")?;
    let sa = field_a.squared();
    let sb = field_b.squared();
    let same = a == b && sa == sb;
    let mut k = DMatrix::zeros(a.len(), b.len());
    for j in 0..b.len() {
        let i0 = if same { j } else { 0 };
        for i in i0..a.len() {
            let v = entry(base, sparse, &a[i], &b[j], &sa[i], &sb[j]);
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
    use crate::kernels::{eval_ch1, eval_esgp, gram_stationary, KernelFamily};
    use proptest::prelude::*;

    fn pts() -> Vec<SpaceTimePoint> {
        vec![
            SpaceTimePoint::new(0.0, 0.0, 0.0),
            SpaceTimePoint::new(0.4, -0.3, 1.0),
            SpaceTimePoint::new(1.1, 0.2, 0.5),
            SpaceTimePoint::new(-0.7, 0.9, 2.5),
        ]
    }

    #[test]
    fn prefactor_examples() {
        assert_eq!(prefactor([0.5, 2.0, 3.0], [0.5, 2.0, 3.0]).unwrap(), 1.0);
        // one dimension with l_i^2 = 1, l_j^2 = 4
        let p = prefactor([1.0, 1.0, 1.0], [2.0, 1.0, 1.0]).unwrap();
        let oracle = 1.0f64 * 4.0f64.powf(0.25) * 2.5f64.powf(-0.5);
        assert!((p - oracle).abs() < 1e-12);
        assert!((p - 0.894427190999916).abs() < 1e-12);
        assert!(prefactor([0.0, 1.0, 1.0], [1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn scaled_distance_examples() {
        let a = SpaceTimePoint::new(1.0, 2.0, 3.0);
        assert_eq!(scaled_sq_dists(&a, &a, [1.0; 3], [2.0; 3]).unwrap(), (0.0, 0.0));
        let b = SpaceTimePoint::new(2.0, 2.0, 3.0);
        assert_eq!(scaled_sq_dists(&a, &b, [1.0; 3], [1.0; 3]).unwrap(), (1.0, 0.0));
        let (qs, qt) = scaled_sq_dists(&a, &b, [1.0, 1.0, 1.0], [3f64.sqrt(), 1.0, 1.0]).unwrap();
        assert!((qs - 0.5).abs() < 1e-15);
        assert_eq!(qt, 0.0);
        assert!(scaled_sq_dists(&a, &b, [1.0, -1.0, 1.0], [1.0; 3]).is_err());
    }

    #[test]
    fn constant_field_reduces_to_stationary() {
        let p = pts();
        for family in [KernelFamily::Ch1, KernelFamily::Ch2] {
            let scales = [0.7, 1.3, 2.1];
            let base = KernelSpec::new(family, 0.9);
            let field = LatentLengthField::constant(p.clone(), scales).unwrap();
            let ns = gram_nonstationary(&p, &p, &field, &field, &base, false).unwrap();
            let st = gram_stationary(&p, &p, &base.clone().with_length_scales(scales)).unwrap();
            for (a, b) in ns.iter().zip(st.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_pair_matches_scalar_composition() {
        let a = SpaceTimePoint::new(0.0, 0.5, 1.0);
        let b = SpaceTimePoint::new(0.8, -0.1, 2.2);
        let fa = [0.6, 1.4, 0.9];
        let fb = [1.1, 0.5, 2.0];
        let base = KernelSpec::new(KernelFamily::Ch1, 1.3);
        let la = LatentLengthField::new(vec![a], vec![fa[0]], vec![fa[1]], vec![fa[2]]).unwrap();
        let lb = LatentLengthField::new(vec![b], vec![fb[0]], vec![fb[1]], vec![fb[2]]).unwrap();
        let k = gram_nonstationary(&[a], &[b], &la, &lb, &base, false).unwrap()[(0, 0)];
        let (qs, qt) = scaled_sq_dists(&a, &b, fa, fb).unwrap();
        let oracle = prefactor(fa, fb).unwrap() * eval_ch1(qs.sqrt(), qt.sqrt(), &base).unwrap();
        assert!((k - oracle).abs() < 1e-12);

        let ks = gram_nonstationary(&[a], &[b], &la, &lb, &base, true).unwrap()[(0, 0)];
        let taper = eval_esgp((qs + qt).sqrt(), &KernelSpec::new(KernelFamily::Esgp, 1.0)).unwrap();
        assert!((ks - oracle * taper).abs() < 1e-12);
    }

    #[test]
    fn sparse_short_scales_give_exact_zeros() {
        let p = pts();
        let field = LatentLengthField::constant(p.clone(), [0.01, 0.01, 0.01]).unwrap();
        let base = KernelSpec::new(KernelFamily::Ch2, 1.0);
        let k = gram_nonstationary(&p, &p, &field, &field, &base, true).unwrap();
        for i in 0..p.len() {
            for j in 0..p.len() {
                if i != j {
                    assert_eq!(k[(i, j)], 0.0);
                } else {
                    assert_eq!(k[(i, i)], 1.0);
                }
            }
        }
    }

    #[test]
    fn rejects_misaligned_field_and_bad_family() {
        let p = pts();
        let field = LatentLengthField::constant(p[..2].to_vec(), [1.0; 3]).unwrap();
        let full = LatentLengthField::constant(p.clone(), [1.0; 3]).unwrap();
        let base = KernelSpec::new(KernelFamily::Ch1, 1.0);
        assert!(gram_nonstationary(&p, &p, &field, &full, &base, false).is_err());
        let esgp = KernelSpec::new(KernelFamily::Esgp, 1.0);
        assert!(gram_nonstationary(&p, &p, &full, &full, &esgp, false).is_err());
    }

    #[test]
    fn entry_gradient_matches_finite_differences() {
        let a = SpaceTimePoint::new(0.0, 0.5, 1.0);
        let b = SpaceTimePoint::new(0.3, -0.1, 1.4);
        for family in [KernelFamily::Ch1, KernelFamily::Ch2] {
            for sparse in [false, true] {
                let base = KernelSpec::new(family, 0.8);
                let li = [0.6f64, 1.4, 0.9];
                let lj = [1.1f64, 0.5, 2.0];
                let sq = |l: [f64; 3]| l.map(|v| v * v);
                let g = entry_grad(&base, sparse, &a, &b, &sq(li), &sq(lj));
                let e = 1e-6f64;
                for d in 0..3 {
                    let mut lp = li;
                    let mut lm = li;
                    lp[d] *= e.exp();
                    lm[d] *= (-e).exp();
                    let fd = (entry(&base, sparse, &a, &b, &sq(lp), &sq(lj))
                        - entry(&base, sparse, &a, &b, &sq(lm), &sq(lj)))
                        / (2.0 * e);
                    assert!((g.d_i[d] - fd).abs() < 1e-7, "{family} {sparse} i{d}");
                    let mut lp = lj;
                    let mut lm = lj;
                    lp[d] *= e.exp();
                    lm[d] *= (-e).exp();
                    let fd = (entry(&base, sparse, &a, &b, &sq(li), &sq(lp))
                        - entry(&base, sparse, &a, &b, &sq(li), &sq(lm)))
                        / (2.0 * e);
                    assert!((g.d_j[d] - fd).abs() < 1e-7, "{family} {sparse} j{d}");
                }
            }
        }
    }

    #[test]
    fn adaptive_local_sparsity_on_1d_slice() {
        let p: Vec<SpaceTimePoint> = (0..30)
            .map(|i| SpaceTimePoint::new(i as f64 * 0.1, 0.0, 0.0))
            .collect();
        let base = KernelSpec::new(KernelFamily::Ch1, 1.0);
        let row_nnz = |scale_at_10: f64| {
            let mut lx = vec![0.15; p.len()];
            lx[10] = scale_at_10;
            let field =
                LatentLengthField::new(p.clone(), lx, vec![1.0; p.len()], vec![1.0; p.len()]).unwrap();
            let k = gram_nonstationary(&p, &p, &field, &field, &base, true).unwrap();
            k.row(10).iter().filter(|v| **v != 0.0).count()
        };
        let mut last = 0;
        for s in [0.05, 0.1, 0.2, 0.4, 0.8, 1.6] {
            let nnz = row_nnz(s);
            assert!(nnz >= last, "scale {s}: {nnz} < {last}");
            last = nnz;
        }
        assert!(last > row_nnz(0.05));
    }

    proptest! {
        #[test]
        fn prefactor_at_most_one(
            a in proptest::array::uniform3(0.01f64..100.0),
            b in proptest::array::uniform3(0.01f64..100.0),
        ) {
            let p = prefactor(a, b).unwrap();
            prop_assert!(p > 0.0 && p <= 1.0 + 1e-15);
        }

        #[test]
        fn diagonal_is_base_variance(
            scales in proptest::collection::vec(proptest::array::uniform3(0.1f64..10.0), 1..8),
            sparse in any::<bool>(),
        ) {
            let p: Vec<SpaceTimePoint> = (0..scales.len())
                .map(|i| SpaceTimePoint::new(i as f64, 0.5 * i as f64, 0.0))
                .collect();
            let field = LatentLengthField::new(
                p.clone(),
                scales.iter().map(|s| s[0]).collect(),
                scales.iter().map(|s| s[1]).collect(),
                scales.iter().map(|s| s[2]).collect(),
            ).unwrap();
            let base = KernelSpec::new(KernelFamily::Ch1, 1.7);
            let k = gram_nonstationary(&p, &p, &field, &field, &base, sparse).unwrap();
            for i in 0..p.len() {
                prop_assert!((k[(i, i)] - 1.7 * 1.7).abs() < 1e-12);
                for j in 0..p.len() {
                    prop_assert_eq!(k[(i, j)], k[(j, i)]);
                }
            }
        }
    }
}
