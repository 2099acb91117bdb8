//! Null-space representations of a single linear row `a^T x = b`.
//!
//! [`HouseholderNullSpace`] stores one Householder reflector
//! `Q = I - tau u u^T` with `Q a = zeta e_1`; the remaining `n - 1` columns of
//! `Q` form an orthonormal basis `Z` of `{p : a^T p = 0}`. Products with `Z`
//! and `Z^T` cost one dot product and one axpy.

use crate::dot;
use crate::error::{Error, Result};
use crate::set::median3;

/// How the reflector pivot is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PivotRule {
    /// Entry of largest magnitude (default; best conditioned `a_p - zeta`).
    #[default]
    MaxAbs,
    /// First entry when nonzero, otherwise the largest one.
    Leading,
}

/// Compact Householder representation of the null space of `a^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct HouseholderNullSpace {
    /// Reflector vector in pivoted coordinates, `u[0] = 1`.
    u: Vec<f64>,
    tau: f64,
    zeta: f64,
    /// Index swapped with position 0 before reflecting.
    pivot: usize,
}

fn sign(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Builds the reflector for `a` with the default pivot rule.
pub fn build_householder(a: &[f64]) -> Result<HouseholderNullSpace> {
    build_householder_with(a, PivotRule::default())
}

pub fn build_householder_with(a: &[f64], rule: PivotRule) -> Result<HouseholderNullSpace> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("constraint vector"));
    }
    let mut pivot = 0;
    let mut amax = 0.0f64;
    for (i, v) in a.iter().enumerate() {
        if v.abs() > amax {
            amax = v.abs();
            pivot = i;
        }
    }
    if amax == 0.0 {
        return Err(Error::ZeroConstraint);
    }
    if rule == PivotRule::Leading && a[0] != 0.0 {
        pivot = 0;
    }
    // scaled norm avoids overflow for huge entries
    let norm = amax * a.iter().map(|v| (v / amax) * (v / amax)).sum::<f64>().sqrt();
    let a1 = a[pivot];
    let zeta = -sign(a1) * norm;
    let denom = a1 - zeta;
    let mut u: Vec<f64> = a.iter().map(|v| v / denom).collect();
    u.swap(0, pivot);
    u[0] = 1.0;
    Ok(HouseholderNullSpace {
        u,
        tau: (zeta - a1) / zeta,
        zeta,
        pivot,
    })
}

impl HouseholderNullSpace {
    pub fn n(&self) -> usize {
        self.u.len()
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn pivot(&self) -> usize {
        self.pivot
    }

    /// `Z v` for `v` of length `n - 1`.
    pub fn apply_z(&self, v: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        if v.len() + 1 != n {
            return Err(Error::DimensionMismatch {
                expected: n - 1,
                found: v.len(),
            });
        }
        let mut out = vec![0.0; n];
        self.apply_z_into(v, &mut out);
        Ok(out)
    }

    /// `Z v` written to `out` (lengths `n - 1` and `n`, unchecked).
    pub fn apply_z_into(&self, v: &[f64], out: &mut [f64]) {
        // w = (0, v); Q w = w - tau u (u^T w)
        let s = self.tau * dot(&self.u[1..], v);
        out[0] = -s;
        for i in 1..out.len() {
            out[i] = v[i - 1] - s * self.u[i];
        }
        out.swap(0, self.pivot);
    }

    /// `Z^T w` for `w` of length `n`.
    pub fn apply_zt(&self, w: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        if w.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: w.len(),
            });
        }
        let mut out = vec![0.0; n - 1];
        self.apply_zt_into(w, &mut out);
        Ok(out)
    }

    /// `Z^T w` written to `out` (lengths `n` and `n - 1`, unchecked).
    pub fn apply_zt_into(&self, w: &[f64], out: &mut [f64]) {
        let p = self.pivot;
        // permuted entry k of w
        let wp = |k: usize| -> f64 {
            if k == 0 {
                w[p]
            } else if k == p {
                w[0]
            } else {
                w[k]
            }
        };
        let mut s = wp(0);
        for k in 1..self.u.len() {
            s += self.u[k] * wp(k);
        }
        s *= self.tau;
        for k in 1..self.u.len() {
            out[k - 1] = wp(k) - s * self.u[k];
        }
    }

    /// Explicit `n x (n - 1)` matrix `Z`, row-major. For tests and small `n`.
    pub fn assemble_z(&self) -> Vec<f64> {
        let n = self.n();
        let mut z = vec![0.0; n * (n - 1)];
        let mut e = vec![0.0; n - 1];
        let mut col = vec![0.0; n];
        for j in 0..n - 1 {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            self.apply_z_into(&e, &mut col);
            for i in 0..n {
                z[i * (n - 1) + j] = col[i];
            }
        }
        z
    }
}

/// Orthogonal projector `P = I - a a^T / (a^T a)` onto `{p : a^T p = 0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoProjector {
    a: Vec<f64>,
    ata: f64,
}

impl OrthoProjector {
    pub fn new(a: &[f64]) -> Result<Self> {
        let ata = dot(a, a);
        if ata == 0.0 {
            return Err(Error::ZeroConstraint);
        }
        Ok(Self { a: a.to_vec(), ata })
    }

    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let s = dot(&self.a, v) / self.ata;
        v.iter().zip(&self.a).map(|(v, a)| v - s * a).collect()
    }
}

/// `v - a (a^T v) / (a^T a)`.
pub fn ortho_project(p: &OrthoProjector, v: &[f64]) -> Vec<f64> {
    p.project(v)
}

/// Projection of `y` onto the hyperplane `a^T x = b`, ignoring bounds.
pub fn project_line_equality(y: &[f64], a: &[f64], b: f64) -> Result<Vec<f64>> {
    let ata = dot(a, a);
    if ata == 0.0 {
        return Err(Error::ZeroConstraint);
    }
    let s = (b - dot(a, y)) / ata;
    Ok(y.iter().zip(a).map(|(y, a)| y + s * a).collect())
}

/// Projection of `y` onto the slab `b_l <= a^T x <= b_u`, ignoring bounds.
pub fn project_line_interval(y: &[f64], a: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>> {
    if lo > hi {
        return Err(Error::InvalidSet(format!(
            "interval lower end {lo} exceeds upper end {hi}"
        )));
    }
    let zl = project_line_equality(y, a, lo)?;
    let zu = project_line_equality(y, a, hi)?;
    // a true median: zl <= zu fails componentwise where a_i < 0
    Ok((0..y.len()).map(|i| median3(zl[i], y[i], zu[i])).collect())
}

/// An inequality row `a^T x >= b`.
#[derive(Debug, Clone, Copy)]
pub struct LinearRow<'a> {
    pub a: &'a [f64],
    pub b: f64,
}

impl<'a> LinearRow<'a> {
    pub fn new(a: &'a [f64], b: f64) -> Self {
        Self { a, b }
    }
}

/// Largest step `alpha` keeping every row `a_i^T (x + alpha p) >= b_i`.
///
/// Returns `(alpha, row)` with the index of the blocking row, or
/// `(inf, None)` when no row blocks.
pub fn feasible_step_cap(x: &[f64], p: &[f64], rows: &[LinearRow]) -> Result<(f64, Option<usize>)> {
    let mut cap = f64::INFINITY;
    let mut which = None;
    for (k, row) in rows.iter().enumerate() {
        let ax = dot(row.a, x);
        let slack = ax - row.b;
        let scale = row.b.abs() + row.a.iter().zip(x).map(|(a, x)| (a * x).abs()).sum::<f64>();
        if slack < -64.0 * f64::EPSILON * scale {
            return Err(Error::ConstraintViolated { slack });
        }
        let ap = dot(row.a, p);
        if ap < 0.0 {
            let t = slack.max(0.0) / -ap;
            if t < cap {
                cap = t;
                which = Some(k);
            }
        }
    }
    Ok((cap, which))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, SymmetricEigen};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn three_four_leading_pivot() {
        let ns = build_householder_with(&[3.0, 4.0], PivotRule::Leading).unwrap();
        assert!((ns.zeta() + 5.0).abs() < 1e-15);
        assert!((ns.tau() - 1.6).abs() < 1e-15);
        assert!(close(ns.u(), &[1.0, 0.5], 1e-15));
        let z = ns.apply_z(&[1.0]).unwrap();
        assert!(close(&z, &[-0.8, 0.6], 1e-15), "{z:?}");
        let back = ns.apply_zt(&[-0.8, 0.6]).unwrap();
        assert!(close(&back, &[1.0], 1e-15));
    }

    #[test]
    fn three_four_max_pivot_spans_same_line() {
        let ns = build_householder(&[3.0, 4.0]).unwrap();
        assert_eq!(ns.pivot(), 1);
        let z = ns.apply_z(&[1.0]).unwrap();
        assert!(
            close(&z, &[-0.8, 0.6], 1e-15) || close(&z, &[0.8, -0.6], 1e-15),
            "{z:?}"
        );
        assert!((ns.zeta().abs() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn axis_aligned_row() {
        let ns = build_householder(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(ns.zeta(), -1.0);
        assert_eq!(ns.tau(), 2.0);
        assert_eq!(ns.u(), &[1.0, 0.0, 0.0]);
        assert_eq!(ns.apply_z(&[1.0, 0.0]).unwrap(), vec![0.0, 1.0, 0.0]);
        assert_eq!(ns.apply_z(&[0.0, 1.0]).unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_leading_entry_pivots() {
        for rule in [PivotRule::MaxAbs, PivotRule::Leading] {
            let ns = build_householder_with(&[0.0, 5.0], rule).unwrap();
            assert_eq!(ns.pivot(), 1);
            assert!((ns.zeta() + 5.0).abs() < 1e-15);
            let z = ns.apply_z(&[1.0]).unwrap();
            assert!((z[0].abs() - 1.0).abs() < 1e-15 && z[1].abs() < 1e-15);
        }
    }

    #[test]
    fn zero_row_rejected() {
        assert_eq!(build_householder(&[0.0, 0.0]), Err(Error::ZeroConstraint));
        assert!(OrthoProjector::new(&[0.0]).is_err());
        assert!(project_line_equality(&[1.0], &[0.0], 1.0).is_err());
    }

    #[test]
    fn dimension_checks() {
        let ns = build_householder(&[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(ns.apply_z(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(ns.apply_zt(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert_eq!(ns.apply_z(&[0.0, 0.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn zt_annihilates_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [2, 3, 10, 257] {
            let a = random_vec(&mut rng, n);
            let ns = build_householder(&a).unwrap();
            let r = ns.apply_zt(&a).unwrap();
            let an = dot(&a, &a).sqrt();
            assert!(r.iter().all(|v| v.abs() <= 1e-12 * an));
            assert!((ns.zeta().abs() - an).abs() <= 1e-14 * an);
        }
    }

    #[test]
    fn assembled_z_matches_explicit_reflector() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [2usize, 5, 17, 50] {
            let a = random_vec(&mut rng, n);
            let ns = build_householder(&a).unwrap();
            // explicit Q in pivoted coordinates, then undo the swap on rows
            let u = DMatrix::from_column_slice(n, 1, ns.u());
            let q = DMatrix::identity(n, n) - (&u * u.transpose()) * ns.tau();
            let mut qs = q.clone();
            qs.swap_rows(0, ns.pivot());
            let z = ns.assemble_z();
            for i in 0..n {
                for j in 0..n - 1 {
                    assert!((z[i * (n - 1) + j] - qs[(i, j + 1)]).abs() <= 1e-12);
                }
            }
            let zm = DMatrix::from_row_slice(n, n - 1, &z);
            let g = zm.transpose() * &zm - DMatrix::identity(n - 1, n - 1);
            assert!(g.amax() <= 1e-12);
        }
    }

    #[test]
    fn reduced_rayleigh_quotients_interlace() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [3usize, 10, 30] {
            let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let h = &b + b.transpose();
            let eig = SymmetricEigen::new(h.clone()).eigenvalues;
            let (lmin, lmax) = (eig.min(), eig.max());
            let a = random_vec(&mut rng, n);
            let ns = build_householder(&a).unwrap();
            for _ in 0..20 {
                let v = random_vec(&mut rng, n - 1);
                let zv = DMatrix::from_column_slice(n, 1, &ns.apply_z(&v).unwrap());
                let rq = (zv.transpose() * &h * &zv)[(0, 0)] / dot(&v, &v);
                assert!(rq >= lmin - 1e-12 && rq <= lmax + 1e-12);
            }
        }
    }

    #[test]
    fn feasible_direction_keeps_row_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_vec(&mut rng, 40);
        let x0 = random_vec(&mut rng, 40);
        let ns = build_householder(&a).unwrap();
        for _ in 0..20 {
            let v = random_vec(&mut rng, 39);
            let zv = ns.apply_z(&v).unwrap();
            let x: Vec<f64> = x0.iter().zip(&zv).map(|(p, q)| p + q).collect();
            assert!((dot(&a, &x) - dot(&a, &x0)).abs() <= 1e-12);
        }
    }

    #[test]
    fn ortho_projector_examples() {
        let p = OrthoProjector::new(&[1.0, 1.0]).unwrap();
        assert_eq!(ortho_project(&p, &[1.0, 0.0]), vec![0.5, -0.5]);
        assert_eq!(ortho_project(&p, &[1.0, 1.0]), vec![0.0, 0.0]);
        assert_eq!(ortho_project(&p, &[1.0, -1.0]), vec![1.0, -1.0]);
    }

    #[test]
    fn line_projection_examples() {
        assert_eq!(
            project_line_equality(&[0.0, 0.0], &[1.0, 1.0], 1.0).unwrap(),
            vec![0.5, 0.5]
        );
        assert_eq!(
            project_line_equality(&[0.25, 0.75], &[1.0, 1.0], 1.0).unwrap(),
            vec![0.25, 0.75]
        );

        let a = [1.0, -2.0, 0.5];
        let y = [0.3, 0.1, 0.2];
        let ay = dot(&a, &y);
        assert_eq!(project_line_interval(&y, &a, ay - 1.0, ay + 1.0).unwrap(), y.to_vec());
        let z = project_line_interval(&y, &a, ay - 2.0, ay - 1.0).unwrap();
        let ze = project_line_equality(&y, &a, ay - 1.0).unwrap();
        assert!(close(&z, &ze, 1e-15));
        let z = project_line_interval(&y, &a, 0.7, 0.7).unwrap();
        assert!(close(&z, &project_line_equality(&y, &a, 0.7).unwrap(), 1e-15));
        assert!(project_line_interval(&y, &a, 1.0, 0.0).is_err());
    }

    #[test]
    fn step_cap_examples() {
        let a = [1.0, 1.0];
        let x = [0.5, 0.5];
        let row = [LinearRow::new(&a, 0.5)];
        assert_eq!(
            feasible_step_cap(&x, &[1.0, -1.0], &row).unwrap(),
            (f64::INFINITY, None)
        );
        assert_eq!(feasible_step_cap(&x, &[-0.5, -0.5], &row).unwrap(), (0.5, Some(0)));
        let bad = [LinearRow::new(&a, 2.0)];
        assert!(matches!(
            feasible_step_cap(&x, &[1.0, 0.0], &bad),
            Err(Error::ConstraintViolated { .. })
        ));
    }

    #[test]
    fn interval_step_cap_lands_on_face() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let a = random_vec(&mut rng, 6);
            let x = random_vec(&mut rng, 6);
            let ax = dot(&a, &x);
            let (lo, hi) = (ax - rng.gen_range(0.1..1.0), ax + rng.gen_range(0.1..1.0));
            let p = random_vec(&mut rng, 6);
            let neg: Vec<f64> = a.iter().map(|v| -v).collect();
            let rows = [LinearRow::new(&a, lo), LinearRow::new(&neg, -hi)];
            let (cap, which) = feasible_step_cap(&x, &p, &rows).unwrap();
            let ap = dot(&a, &p);
            if ap > 0.0 {
                assert_eq!(which, Some(1));
                assert!((cap - (hi - ax) / ap).abs() <= 1e-12 * (1.0 + cap));
            }
            if let Some(k) = which {
                let xn: Vec<f64> = x.iter().zip(&p).map(|(x, p)| x + cap * p).collect();
                let face = if k == 0 { lo } else { hi };
                assert!((dot(&a, &xn) - face).abs() <= 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn adjoint_identity(seed in any::<u64>(), n in 2usize..60, leading in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut a = random_vec(&mut rng, n);
            if rng.gen_bool(0.2) { a[0] = 0.0; }
            let rule = if leading { PivotRule::Leading } else { PivotRule::MaxAbs };
            let ns = build_householder_with(&a, rule).unwrap();
            let v = random_vec(&mut rng, n - 1);
            let w = random_vec(&mut rng, n);
            let lhs = dot(&ns.apply_z(&v).unwrap(), &w);
            let rhs = dot(&v, &ns.apply_zt(&w).unwrap());
            let scale = dot(&v, &v).sqrt() * dot(&w, &w).sqrt();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
        }

        #[test]
        fn z_is_an_isometry(seed in any::<u64>(), n in 2usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_vec(&mut rng, n);
            let ns = build_householder(&a).unwrap();
            let v = random_vec(&mut rng, n - 1);
            let zv = ns.apply_z(&v).unwrap();
            prop_assert!((dot(&zv, &zv).sqrt() - dot(&v, &v).sqrt()).abs() <= 1e-12);
            prop_assert!(dot(&a, &zv).abs() <= 1e-12 * dot(&a, &a).sqrt() * dot(&v, &v).sqrt());
        }

        #[test]
        fn ortho_projector_idempotent(seed in any::<u64>(), n in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_vec(&mut rng, n);
            let p = OrthoProjector::new(&a).unwrap();
            let v = random_vec(&mut rng, n);
            let pv = p.project(&v);
            let ppv = p.project(&pv);
            let vinf = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            prop_assert!(close(&pv, &ppv, 1e-12 * vinf));
            prop_assert!(dot(&a, &pv).abs() <= 1e-12 * dot(&a, &a).sqrt() * dot(&v, &v).sqrt());
        }

        #[test]
        fn line_projection_properties(seed in any::<u64>(), n in 1usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_vec(&mut rng, n);
            let y = random_vec(&mut rng, n);
            let b: f64 = rng.gen_range(-2.0..2.0);
            let z = project_line_equality(&y, &a, b).unwrap();
            prop_assert!((dot(&a, &z) - b).abs() <= 1e-12);
            // z - y parallel to a
            let k = a.iter().enumerate().max_by(|p, q| p.1.abs().total_cmp(&q.1.abs())).unwrap().0;
            let s = (z[k] - y[k]) / a[k];
            for i in 0..n {
                prop_assert!((z[i] - y[i] - s * a[i]).abs() <= 1e-12);
            }
            let lo = b - 0.5;
            let zi = project_line_interval(&y, &a, lo, b).unwrap();
            let azi = dot(&a, &zi);
            prop_assert!(azi >= lo - 1e-12 && azi <= b + 1e-12);
        }
    }
}
