//! Brute-force reference solvers for small knapsack problems.
//!
//! Everything here is exponential in `n` and intended for `n <= 10`. The
//! code deliberately shares nothing with the production solvers.

use nalgebra::{DMatrix, DVector};

/// Linear constraint right-hand side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Row {
    Eq(f64),
    Range(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Lower,
    Free,
    Upper,
}

fn patterns(n: usize) -> impl Iterator<Item = Vec<Slot>> {
    let total = 3usize.pow(n as u32);
    (0..total).map(move |mut code| {
        let mut p = Vec::with_capacity(n);
        for _ in 0..n {
            p.push(match code % 3 {
                0 => Slot::Lower,
                1 => Slot::Free,
                _ => Slot::Upper,
            });
            code /= 3;
        }
        p
    })
}

fn scale(v: &[f64]) -> f64 {
    1.0 + v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Intersection of half-lines `c_k * lam <= d_k` (or `>=`), as an interval.
#[derive(Debug, Clone, Copy)]
struct LamRange {
    lo: f64,
    hi: f64,
}

impl LamRange {
    fn all() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    /// Require `g - lam * a >= -tol`.
    fn require_nonneg(&mut self, g: f64, a: f64, tol: f64) -> bool {
        if a == 0.0 {
            return g >= -tol;
        }
        let t = (g + tol) / a;
        if a > 0.0 {
            self.hi = self.hi.min(t);
        } else {
            self.lo = self.lo.max(t);
        }
        true
    }

    fn pick(&self) -> Option<f64> {
        if self.lo > self.hi {
            return None;
        }
        Some(match (self.lo.is_finite(), self.hi.is_finite()) {
            (true, true) => 0.5 * (self.lo + self.hi),
            (true, false) => self.lo.max(0.0),
            (false, true) => self.hi.min(0.0),
            (false, false) => 0.0,
        })
    }
}

/// Euclidean projection of `y` onto `{l <= x <= u, a^T x = b}` by enumerating
/// all `3^n` lower/free/upper patterns.
pub fn oracle_project(y: &[f64], l: &[f64], u: &[f64], a: &[f64], b: f64) -> Vec<f64> {
    let n = y.len();
    let tol = 1e-11 * scale(y).max(scale(l)).max(scale(u)) * scale(a);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for pat in patterns(n) {
        if let Some(x) = try_projection_pattern(&pat, y, l, u, a, b, tol) {
            let d: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, x));
            }
        }
    }
    match best {
        Some((_, x)) => x,
        None => bisection_projection(y, l, u, a, b),
    }
}

fn try_projection_pattern(
    pat: &[Slot],
    y: &[f64],
    l: &[f64],
    u: &[f64],
    a: &[f64],
    b: f64,
    tol: f64,
) -> Option<Vec<f64>> {
    let n = y.len();
    let mut rest = b;
    let mut aa = 0.0;
    let mut ay = 0.0;
    for i in 0..n {
        match pat[i] {
            Slot::Lower => rest -= a[i] * l[i],
            Slot::Upper => rest -= a[i] * u[i],
            Slot::Free => {
                aa += a[i] * a[i];
                ay += a[i] * y[i];
            }
        }
    }
    let lam = if aa > 0.0 {
        (ay - rest) / aa
    } else {
        // free part does not move with lambda; the clamped part must already balance
        if rest.abs() > tol {
            return None;
        }
        let mut r = LamRange::all();
        for i in 0..n {
            let ok = match pat[i] {
                // y - lam a <= l   <=>   (l - y) + lam a >= 0
                Slot::Lower => r.require_nonneg(l[i] - y[i], -a[i], tol),
                Slot::Upper => r.require_nonneg(y[i] - u[i], a[i], tol),
                Slot::Free => true,
            };
            if !ok {
                return None;
            }
        }
        r.pick()?
    };
    let mut x = vec![0.0; n];
    for i in 0..n {
        let t = y[i] - lam * a[i];
        x[i] = match pat[i] {
            Slot::Lower => {
                if t > l[i] + tol {
                    return None;
                }
                l[i]
            }
            Slot::Upper => {
                if t < u[i] - tol {
                    return None;
                }
                u[i]
            }
            Slot::Free => {
                if t < l[i] - tol || t > u[i] + tol {
                    return None;
                }
                t.max(l[i]).min(u[i])
            }
        };
    }
    let ax: f64 = x.iter().zip(a).map(|(p, q)| p * q).sum();
    if (ax - b).abs() > 1e3 * tol {
        return None;
    }
    Some(x)
}

/// Slow but simple fallback: bisection on the scalar multiplier.
fn bisection_projection(y: &[f64], l: &[f64], u: &[f64], a: &[f64], b: f64) -> Vec<f64> {
    let x_of = |lam: f64| -> Vec<f64> { (0..y.len()).map(|i| (y[i] - lam * a[i]).max(l[i]).min(u[i])).collect() };
    let resid = |lam: f64| -> f64 { x_of(lam).iter().zip(a).map(|(p, q)| p * q).sum::<f64>() - b };
    let mut lo = -1.0;
    let mut hi = 1.0;
    while resid(lo) < 0.0 && lo > -1e300 {
        lo *= 2.0;
    }
    while resid(hi) > 0.0 && hi < 1e300 {
        hi *= 2.0;
    }
    for _ in 0..2000 {
        let m = 0.5 * (lo + hi);
        if m == lo || m == hi {
            break;
        }
        if resid(m) > 0.0 {
            lo = m;
        } else {
            hi = m;
        }
    }
    x_of(0.5 * (lo + hi))
}

/// Projection onto `{l <= x <= u, lo <= a^T x <= hi}`.
///
/// Either the box clamp is feasible, or one of the two rows is active and
/// the answer is the nearer of the two equality projections.
pub fn oracle_project_interval(y: &[f64], l: &[f64], u: &[f64], a: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let clamp: Vec<f64> = (0..y.len()).map(|i| y[i].max(l[i]).min(u[i])).collect();
    let ax: f64 = clamp.iter().zip(a).map(|(p, q)| p * q).sum();
    if lo <= ax && ax <= hi {
        return clamp;
    }
    let dist = |x: &[f64]| -> f64 { x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum() };
    let zl = oracle_project(y, l, u, a, lo);
    let zu = oracle_project(y, l, u, a, hi);
    if dist(&zl) <= dist(&zu) {
        zl
    } else {
        zu
    }
}

/// Which linear row is treated as active in a QP pattern.
#[derive(Debug, Clone, Copy, PartialEq)]
enum RowState {
    Inactive,
    /// active at the given value, with required multiplier sign (+1, -1 or 0 for free)
    Active(f64, i8),
}

/// Minimizer of `0.5 x^T H x + c^T x` over a knapsack set, by enumeration of
/// bound patterns and linear-row status with a dense KKT solve for each.
///
/// `h` is row-major `n x n` and must be symmetric positive definite.
pub fn oracle_qp(h: &[f64], c: &[f64], l: &[f64], u: &[f64], a: &[f64], row: Row) -> Vec<f64> {
    let n = c.len();
    assert_eq!(h.len(), n * n);
    let hm = DMatrix::from_row_slice(n, n, h);
    let states: Vec<RowState> = match row {
        Row::Eq(b) => vec![RowState::Active(b, 0)],
        Row::Range(lo, hi) => {
            let mut v = vec![RowState::Inactive, RowState::Active(lo, 1)];
            if hi != lo {
                v.push(RowState::Active(hi, -1));
            } else {
                v[1] = RowState::Active(lo, 0);
            }
            v
        }
    };
    let fval = |x: &[f64]| -> f64 {
        let xv = DVector::from_column_slice(x);
        0.5 * (xv.transpose() * &hm * &xv)[(0, 0)] + c.iter().zip(x).map(|(p, q)| p * q).sum::<f64>()
    };
    let base_tol = 1e-9 * scale(c).max(scale(h)) * scale(l).max(scale(u)) * scale(a);
    for widen in [1.0, 1e3] {
        let tol = base_tol * widen;
        let mut best: Option<(f64, Vec<f64>)> = None;
        for pat in patterns(n) {
            for &st in &states {
                if let Some(x) = try_qp_pattern(&pat, st, &hm, c, l, u, a, row, tol) {
                    let f = fval(&x);
                    if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                        best = Some((f, x));
                    }
                }
            }
        }
        if let Some((_, x)) = best {
            return x;
        }
    }
    panic!("oracle_qp: no pattern verified");
}

#[allow(clippy::too_many_arguments)]
fn try_qp_pattern(
    pat: &[Slot],
    st: RowState,
    h: &DMatrix<f64>,
    c: &[f64],
    l: &[f64],
    u: &[f64],
    a: &[f64],
    row: Row,
    tol: f64,
) -> Option<Vec<f64>> {
    let n = c.len();
    let free: Vec<usize> = (0..n).filter(|&i| pat[i] == Slot::Free).collect();
    let mut x = vec![0.0; n];
    for i in 0..n {
        x[i] = match pat[i] {
            Slot::Lower => l[i],
            Slot::Upper => u[i],
            Slot::Free => 0.0,
        };
    }
    let m = free.len();
    // right-hand side of H_FF x_F = -c_F - H_FB x_B (+ lam a_F)
    let mut r = DVector::zeros(m);
    for (k, &i) in free.iter().enumerate() {
        let mut s = -c[i];
        for j in 0..n {
            if pat[j] != Slot::Free {
                s -= h[(i, j)] * x[j];
            }
        }
        r[k] = s;
    }
    let hff = DMatrix::from_fn(m, m, |p, q| h[(free[p], free[q])]);
    let af = DVector::from_iterator(m, free.iter().map(|&i| a[i]));
    let fixed_ax: f64 = (0..n).filter(|&i| pat[i] != Slot::Free).map(|i| a[i] * x[i]).sum();

    let mut lam_range = LamRange::all();
    let lam: Option<f64>;
    match st {
        RowState::Inactive => {
            if m > 0 {
                let xf = hff.clone().lu().solve(&r)?;
                for (k, &i) in free.iter().enumerate() {
                    x[i] = xf[k];
                }
            }
            lam = Some(0.0);
        }
        RowState::Active(b, _) => {
            if af.iter().all(|v| *v == 0.0) {
                if m > 0 {
                    let xf = hff.clone().lu().solve(&r)?;
                    for (k, &i) in free.iter().enumerate() {
                        x[i] = xf[k];
                    }
                }
                if (fixed_ax - b).abs() > tol {
                    return None;
                }
                lam = None;
            } else {
                let mut k = DMatrix::zeros(m + 1, m + 1);
                k.view_mut((0, 0), (m, m)).copy_from(&hff);
                for p in 0..m {
                    k[(p, m)] = -af[p];
                    k[(m, p)] = af[p];
                }
                let mut rhs = DVector::zeros(m + 1);
                rhs.rows_mut(0, m).copy_from(&r);
                rhs[m] = b - fixed_ax;
                let sol = match k.clone().lu().solve(&rhs) {
                    Some(s) => s,
                    None => k.svd(true, true).solve(&rhs, 1e-14).ok()?,
                };
                for (p, &i) in free.iter().enumerate() {
                    x[i] = sol[p];
                }
                lam = Some(sol[m]);
            }
        }
    }

    // box membership of free coordinates
    for &i in &free {
        if x[i] < l[i] - tol || x[i] > u[i] + tol {
            return None;
        }
        x[i] = x[i].max(l[i]).min(u[i]);
    }
    // linear feasibility
    let ax: f64 = x.iter().zip(a).map(|(p, q)| p * q).sum();
    match row {
        Row::Eq(b) => {
            if (ax - b).abs() > tol {
                return None;
            }
        }
        Row::Range(lo, hi) => {
            if ax < lo - tol || ax > hi + tol {
                return None;
            }
        }
    }
    // multiplier signs: g - lam a - mu_l + mu_u = 0
    let xv = DVector::from_column_slice(&x);
    let g: Vec<f64> = (h * &xv).iter().zip(c).map(|(p, q)| p + q).collect();
    let lam = match lam {
        Some(v) => v,
        None => {
            for i in 0..n {
                let ok = match pat[i] {
                    Slot::Lower => lam_range.require_nonneg(g[i], a[i], tol),
                    Slot::Upper => lam_range.require_nonneg(-g[i], -a[i], tol),
                    Slot::Free => true,
                };
                if !ok {
                    return None;
                }
            }
            if let RowState::Active(_, sgn) = st {
                if sgn > 0 {
                    lam_range.lo = lam_range.lo.max(0.0);
                } else if sgn < 0 {
                    lam_range.hi = lam_range.hi.min(0.0);
                }
            }
            lam_range.pick()?
        }
    };
    if let RowState::Active(_, sgn) = st {
        if (sgn > 0 && lam < -tol) || (sgn < 0 && lam > tol) {
            return None;
        }
    }
    for i in 0..n {
        let r = g[i] - lam * a[i];
        let ok = match pat[i] {
            Slot::Lower => r >= -tol,
            Slot::Upper => r <= tol,
            Slot::Free => true,
        };
        if !ok {
            return None;
        }
    }
    Some(x)
}

/// Smallest achievable KKT residual at `x` for gradient `g`:
/// `min over admissible lam of max_i r_i(lam)` where `r_i` measures the
/// stationarity / complementarity violation of coordinate `i`.
///
/// `active_tol` decides which coordinates count as sitting on a bound.
pub fn kkt_residual(g: &[f64], x: &[f64], l: &[f64], u: &[f64], a: &[f64], row: Row, active_tol: f64) -> f64 {
    let ax: f64 = x.iter().zip(a).map(|(p, q)| p * q).sum();
    let (lam_lo, lam_hi) = match row {
        Row::Eq(_) => (f64::NEG_INFINITY, f64::INFINITY),
        Row::Range(lo, hi) => {
            let at_lo = (ax - lo).abs() <= active_tol * (1.0 + lo.abs());
            let at_hi = (ax - hi).abs() <= active_tol * (1.0 + hi.abs());
            match (at_lo, at_hi) {
                (true, true) => (f64::NEG_INFINITY, f64::INFINITY),
                (true, false) => (0.0, f64::INFINITY),
                (false, true) => (f64::NEG_INFINITY, 0.0),
                (false, false) => (0.0, 0.0),
            }
        }
    };
    let resid = |lam: f64| -> f64 {
        let mut worst = 0.0f64;
        for i in 0..x.len() {
            let r = g[i] - lam * a[i];
            let at_l = x[i] - l[i] <= active_tol * (1.0 + l[i].abs());
            let at_u = u[i] - x[i] <= active_tol * (1.0 + u[i].abs());
            let v = match (at_l, at_u) {
                (true, true) => 0.0,
                (true, false) => (-r).max(0.0),
                (false, true) => r.max(0.0),
                (false, false) => r.abs(),
            };
            worst = worst.max(v);
        }
        worst
    };
    // the residual is convex and piecewise linear in lam
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let amin = a
        .iter()
        .filter(|v| **v != 0.0)
        .fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let span = if amin.is_finite() { 2.0 * gmax / amin + 1.0 } else { 1.0 };
    let mut lo = lam_lo.max(-span);
    let mut hi = lam_hi.min(span);
    if lo > hi {
        return resid(lo);
    }
    for _ in 0..300 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if resid(m1) <= resid(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    resid(0.5 * (lo + hi))
}
