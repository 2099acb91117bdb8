//! Euclidean projection onto continuous knapsack sets.
//!
//! For an equality set the projection is `mid(l, y - lambda* a, u)` where
//! `lambda*` is the root of the piecewise-linear, nondecreasing residual
//!
//! ```text
//! h(lambda) = b - sum_i a_i mid(l_i, y_i - lambda a_i, u_i)
//! ```
//!
//! The root is bracketed a priori by the smallest and largest breakpoints
//! `(y_i - l_i)/a_i`, `(y_i - u_i)/a_i`, so no bracketing phase is needed.
//! It is located with a bisection / inverse quadratic interpolation hybrid.
//! Components whose clamp value is already determined by the current bracket
//! are frozen into a scalar offset and skipped by later evaluations.
//!
//! Interval sets are handled by two equality solves, `b = b_u` first and then
//! `b = b_l` warm-started from the trajectory of the first solve.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::set::{median3, mid, KnapsackSet, Rhs};

/// Default root tolerance for double precision.
pub const DEFAULT_EPS: f64 = 1e-15;

const EPS_M: f64 = f64::EPSILON;

/// Root-finder settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionOptions {
    /// Target precision `eps` on the multiplier (must exceed machine epsilon).
    pub eps: f64,
    /// Use Neumaier-compensated summation in `h`.
    pub compensated: bool,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            compensated: false,
        }
    }
}

impl ProjectionOptions {
    pub fn with_eps(eps: f64) -> Self {
        Self { eps, ..Self::default() }
    }
}

/// Result of a projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub z: Vec<f64>,
    /// Multiplier of the linear row (0 when the row is not binding).
    pub lambda: f64,
    /// Number of evaluations of `h`.
    pub evals: usize,
}

/// Per-index breakpoints of `h`.
///
/// Entries for `a_i == 0` are NaN; those indices do not depend on `lambda`.
#[derive(Debug, Clone)]
pub struct BreakpointData {
    /// `(y_i - l_i) / a_i`
    pub lambda_lo: Vec<f64>,
    /// `(y_i - u_i) / a_i`
    pub lambda_hi: Vec<f64>,
    pub lambda_left: f64,
    pub lambda_right: f64,
}

impl BreakpointData {
    pub fn new(y: &[f64], set: &KnapsackSet) -> Result<Self> {
        set.check_dim(y.len())?;
        let (l, u, a) = (set.lower(), set.upper(), set.coeffs());
        let n = y.len();
        let mut lambda_lo = vec![f64::NAN; n];
        let mut lambda_hi = vec![f64::NAN; n];
        let mut left = f64::INFINITY;
        let mut right = f64::NEG_INFINITY;
        for i in 0..n {
            if a[i] != 0.0 {
                lambda_lo[i] = (y[i] - l[i]) / a[i];
                lambda_hi[i] = (y[i] - u[i]) / a[i];
                left = left.min(lambda_lo[i]).min(lambda_hi[i]);
                right = right.max(lambda_lo[i]).max(lambda_hi[i]);
            }
        }
        if left > right {
            left = 0.0;
            right = 0.0;
        }
        Ok(Self {
            lambda_lo,
            lambda_hi,
            lambda_left: left,
            lambda_right: right,
        })
    }
}

/// `h(lambda)` for an equality set, evaluated directly over all indices.
pub fn h_eval(lambda: f64, y: &[f64], set: &KnapsackSet) -> Result<f64> {
    let b = match set.rhs() {
        Rhs::Equality { b } => b,
        Rhs::Interval { .. } => return Err(Error::WrongRhs("equality")),
    };
    set.check_dim(y.len())?;
    let (l, u, a) = (set.lower(), set.upper(), set.coeffs());
    let mut s = 0.0;
    for i in 0..y.len() {
        s += a[i] * mid(l[i], y[i] - lambda * a[i], u[i]);
    }
    Ok(b - s)
}

/// The multiplier equation `h(lambda) = 0` restricted to indices with `a_i != 0`.
///
/// Data is stored compactly (structure of arrays) for the hot evaluation loop.
#[derive(Debug, Clone)]
pub struct MultiplierEquation<'d> {
    y: &'d [f64],
    l: &'d [f64],
    u: &'d [f64],
    a: &'d [f64],
    b: f64,
    left: f64,
    right: f64,
    nonzero: usize,
    compensated: bool,
}

/// Data of the components still depending on `lambda`, compacted in place as
/// components freeze, plus the summed contribution of the frozen ones.
///
/// A fresh table refers to the full problem; it takes its own copy of the
/// live components the first time it is used for freezing.
#[derive(Debug, Clone, Default)]
pub struct FreezeTable {
    y: Vec<f64>,
    l: Vec<f64>,
    u: Vec<f64>,
    a: Vec<f64>,
    offset: f64,
    offset_abs: f64,
    started: bool,
    initial: usize,
}

impl FreezeTable {
    pub fn live_count(&self) -> usize {
        if self.started {
            self.a.len()
        } else {
            self.initial
        }
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }
}

#[inline(always)]
fn pinned(y: f64, a: f64, l: f64, u: f64, lo: f64, hi: f64) -> Option<f64> {
    let t_lo = y - lo * a;
    let t_hi = y - hi * a;
    if t_lo >= u && t_hi >= u {
        Some(u)
    } else if t_lo <= l && t_hi <= l {
        Some(l)
    } else {
        None
    }
}

impl<'d> MultiplierEquation<'d> {
    pub fn new(y: &'d [f64], set: &'d KnapsackSet, b: f64, compensated: bool) -> Result<Self> {
        set.check_dim(y.len())?;
        let (l, u, a) = (set.lower(), set.upper(), set.coeffs());
        let mut left = f64::INFINITY;
        let mut right = f64::NEG_INFINITY;
        let mut nonzero = 0;
        let mut finite = true;
        for i in 0..y.len() {
            finite &= y[i].is_finite();
            let ai = a[i];
            if ai == 0.0 {
                continue;
            }
            nonzero += 1;
            let lo = (y[i] - l[i]) / ai;
            let hi = (y[i] - u[i]) / ai;
            left = left.min(lo.min(hi));
            right = right.max(lo.max(hi));
        }
        if !finite {
            return Err(Error::NonFinite("projection point"));
        }
        if nonzero == 0 {
            left = 0.0;
            right = 0.0;
        }
        Ok(Self {
            y,
            l,
            u,
            a,
            b,
            left,
            right,
            nonzero,
            compensated,
        })
    }

    /// Number of indices with `a_i != 0`.
    pub fn len(&self) -> usize {
        self.nonzero
    }

    pub fn is_empty(&self) -> bool {
        self.nonzero == 0
    }

    /// A priori root bracket `[lambda_L, lambda_R]`.
    pub fn bracket(&self) -> (f64, f64) {
        (self.left, self.right)
    }

    pub fn rhs(&self) -> f64 {
        self.b
    }

    /// A table with nothing frozen.
    pub fn freeze_table(&self) -> FreezeTable {
        FreezeTable {
            initial: self.nonzero,
            ..FreezeTable::default()
        }
    }

    /// `h(lambda)` without freezing.
    pub fn h(&self, lambda: f64) -> f64 {
        self.h_with_scale(lambda).0
    }

    /// `h(lambda)` without freezing, together with `sum_i |a_i x_i|`.
    pub fn h_with_scale(&self, lambda: f64) -> (f64, f64) {
        let mut acc = Sum::new(self.compensated);
        let mut abs = 0.0;
        for k in 0..self.y.len() {
            let v = self.a[k] * mid(self.l[k], self.y[k] - lambda * self.a[k], self.u[k]);
            acc.add(v);
            abs += v.abs();
        }
        (self.b - acc.total(), abs)
    }

    /// `h` at two points in one pass over the data.
    fn h_pair(&self, l1: f64, l2: f64) -> ((f64, f64), (f64, f64)) {
        let mut acc1 = Sum::new(self.compensated);
        let mut acc2 = Sum::new(self.compensated);
        let (mut abs1, mut abs2) = (0.0, 0.0);
        for k in 0..self.y.len() {
            let (yk, ak, lk, uk) = (self.y[k], self.a[k], self.l[k], self.u[k]);
            let v1 = ak * mid(lk, yk - l1 * ak, uk);
            let v2 = ak * mid(lk, yk - l2 * ak, uk);
            acc1.add(v1);
            acc2.add(v2);
            abs1 += v1.abs();
            abs2 += v2.abs();
        }
        ((self.b - acc1.total(), abs1), (self.b - acc2.total(), abs2))
    }

    /// `h(lambda)` using a freeze table; returns `(h, sum_i |a_i x_i|)`.
    pub fn h_frozen(&self, lambda: f64, table: &FreezeTable) -> (f64, f64) {
        if !table.started {
            return self.h_with_scale(lambda);
        }
        let mut acc = Sum::new(self.compensated);
        let mut abs = table.offset_abs;
        acc.add(table.offset);
        for k in 0..table.a.len() {
            let v = table.a[k] * mid(table.l[k], table.y[k] - lambda * table.a[k], table.u[k]);
            acc.add(v);
            abs += v.abs();
        }
        (self.b - acc.total(), abs)
    }

    /// Freezes every live component whose clamp value is the same for all
    /// `lambda` in `[lo, hi]`, then evaluates `h(lambda)` over the rest.
    ///
    /// `x_i(lambda)` is monotone, so it is pinned to a bound over the whole
    /// bracket exactly when it is pinned to that bound at both ends. The test
    /// is done on `y_i - lambda a_i` in floating point, which is itself
    /// monotone in `lambda`, so frozen values match direct evaluation bitwise.
    fn eval_and_freeze(&self, lambda: f64, lo: f64, hi: f64, table: &mut FreezeTable) -> (f64, f64) {
        let mut acc = Sum::new(self.compensated);
        let mut frozen = Sum::new(self.compensated);
        frozen.add(table.offset);
        let mut abs = 0.0;
        let mut frozen_abs = table.offset_abs;
        let mut visit = |yk: f64, ak: f64, lk: f64, uk: f64| -> bool {
            match pinned(yk, ak, lk, uk, lo, hi) {
                Some(x) => {
                    let v = ak * x;
                    frozen.add(v);
                    frozen_abs += v.abs();
                    false
                }
                None => {
                    let v = ak * mid(lk, yk - lambda * ak, uk);
                    acc.add(v);
                    abs += v.abs();
                    true
                }
            }
        };
        if table.started {
            let mut w = 0;
            for r in 0..table.a.len() {
                let (yk, ak, lk, uk) = (table.y[r], table.a[r], table.l[r], table.u[r]);
                if visit(yk, ak, lk, uk) {
                    table.y[w] = yk;
                    table.a[w] = ak;
                    table.l[w] = lk;
                    table.u[w] = uk;
                    w += 1;
                }
            }
            table.y.truncate(w);
            table.a.truncate(w);
            table.l.truncate(w);
            table.u.truncate(w);
        } else {
            for v in [&mut table.y, &mut table.a, &mut table.l, &mut table.u] {
                v.reserve(self.nonzero);
            }
            for k in 0..self.y.len() {
                let (yk, ak, lk, uk) = (self.y[k], self.a[k], self.l[k], self.u[k]);
                if ak != 0.0 && visit(yk, ak, lk, uk) {
                    table.y.push(yk);
                    table.a.push(ak);
                    table.l.push(lk);
                    table.u.push(uk);
                }
            }
            table.started = true;
        }
        table.offset = frozen.total();
        table.offset_abs = frozen_abs;
        acc.add(table.offset);
        (self.b - acc.total(), abs + frozen_abs)
    }
}

/// Freezes the components of `table` determined by the bracket `[lo, hi]`.
pub fn freeze_components(eq: &MultiplierEquation, table: &mut FreezeTable, lo: f64, hi: f64) {
    eq.eval_and_freeze(lo, lo, hi, table);
}

/// State of the hybrid root finder.
///
/// `lambda_b` is the best approximation so far; `h_b h_c <= 0` and
/// `|h_b| <= |h_c|` hold at every accepted state.
#[derive(Debug, Clone, Copy)]
pub struct BreakpointSolverState {
    pub lambda_a: f64,
    pub lambda_b: f64,
    pub lambda_c: f64,
    pub h_a: f64,
    pub h_b: f64,
    pub h_c: f64,
    /// Size of the previous step.
    pub pq_prev: f64,
    pub eval_count: usize,
    pub eps: f64,
    pub eps_m: f64,
}

/// Evaluated `(lambda, h, sum |a_i x_i|)` triples, kept for warm starts.
type Trajectory = Vec<(f64, f64, f64)>;

/// Proposes an interpolation step from `b`, or `None` when a bisection step
/// is required instead.
fn interpolation_step(st: &BreakpointSolverState, half: f64) -> Option<f64> {
    let (a, b, c) = (st.lambda_a, st.lambda_b, st.lambda_c);
    let (ha, hb, hc) = (st.h_a, st.h_b, st.h_c);
    let (p, q) = if a == c || ha == hc {
        // two distinct points: secant through b and c
        let s = hb / hc;
        ((c - b) * s, s - 1.0)
    } else {
        let r = hb / hc;
        let s = hb / ha;
        let t = ha / hc;
        (
            s * (t * (r - t) * (c - b) - (1.0 - r) * (b - a)),
            (t - 1.0) * (r - 1.0) * (s - 1.0),
        )
    };
    let step = p / q;
    if !step.is_finite() || step == 0.0 {
        return None;
    }
    // root of the interpolant must lie between b and c
    if step.signum() != half.signum() {
        return None;
    }
    if p.abs() >= 2.0 / 3.0 * (q * half).abs() {
        return None;
    }
    if p.abs() <= st.eps * q.abs() {
        return None;
    }
    if step.abs() >= 0.5 * st.pq_prev.abs() {
        return None;
    }
    Some(step)
}

/// Solves `h = 0` from a sign-changing bracket `lo <= hi` with `h_lo <= 0 <= h_hi`.
fn solve_bracketed(
    eq: &MultiplierEquation,
    (lo, h_lo, s_lo): (f64, f64, f64),
    (hi, h_hi, s_hi): (f64, f64, f64),
    eps: f64,
    trajectory: &mut Trajectory,
) -> (f64, usize) {
    if h_lo >= 0.0 {
        return (lo, 0);
    }
    if h_hi <= 0.0 || lo == hi {
        return (hi, 0);
    }
    let mut table = eq.freeze_table();
    let (mut blo, mut bhi) = (lo, hi);
    let mut st = BreakpointSolverState {
        lambda_a: hi,
        lambda_b: lo,
        lambda_c: hi,
        h_a: h_hi,
        h_b: h_lo,
        h_c: h_hi,
        pq_prev: hi - lo,
        eval_count: 0,
        eps,
        eps_m: EPS_M,
    };
    // summation scale sum |a_i x_i| at a, b, c, for the roundoff test
    // typical accumulated rounding error of an m-term sum grows like sqrt(m)
    let noise = if eq.compensated {
        4.0 * EPS_M
    } else {
        4.0 * EPS_M * (eq.len() as f64).sqrt().max(1.0)
    };
    let (mut s_a, mut s_b, mut s_c);
    (s_b, s_c) = (s_lo, s_hi);
    loop {
        if st.h_c.abs() < st.h_b.abs() {
            st.lambda_a = st.lambda_b;
            st.h_a = st.h_b;
            s_a = s_b;
            st.lambda_b = st.lambda_c;
            st.h_b = st.h_c;
            s_b = s_c;
            st.lambda_c = st.lambda_a;
            st.h_c = st.h_a;
            s_c = s_a;
        }
        let tol = 2.0 * st.eps_m * st.lambda_b.abs() + 0.5 * st.eps;
        let half = 0.5 * (st.lambda_c - st.lambda_b);
        if half.abs() <= tol || st.h_b == 0.0 {
            break;
        }
        // h is within summation roundoff of zero; no further progress possible
        if st.h_b.abs() <= noise * (eq.b.abs() + s_b) {
            break;
        }
        let step = match interpolation_step(&st, half) {
            Some(s) => s,
            None => half,
        };
        st.pq_prev = step;
        st.lambda_a = st.lambda_b;
        st.h_a = st.h_b;
        s_a = s_b;
        let step = if step.abs() > tol { step } else { tol.copysign(half) };
        st.lambda_b += step;
        let (h, abs) = eq.eval_and_freeze(st.lambda_b, blo, bhi, &mut table);
        st.h_b = h;
        s_b = abs;
        st.eval_count += 1;
        trajectory.push((st.lambda_b, h, abs));
        if h <= 0.0 {
            blo = blo.max(st.lambda_b);
        }
        if h >= 0.0 {
            bhi = bhi.min(st.lambda_b);
        }
        if (st.h_b > 0.0) == (st.h_c > 0.0) && st.h_b != 0.0 {
            st.lambda_c = st.lambda_a;
            st.h_c = st.h_a;
            s_c = s_a;
            st.pq_prev = st.lambda_b - st.lambda_a;
        }
    }
    (st.lambda_b, st.eval_count)
}

/// Evaluates the bracket endpoints and solves, recording the trajectory.
fn solve_equation(eq: &MultiplierEquation, eps: f64, trajectory: &mut Trajectory) -> (f64, usize) {
    let (left, right) = eq.bracket();
    if eq.is_empty() || left == right {
        return (left, 0);
    }
    let ((h_left, s_left), (h_right, s_right)) = eq.h_pair(left, right);
    trajectory.push((left, h_left, s_left));
    trajectory.push((right, h_right, s_right));
    let (lambda, evals) = solve_bracketed(eq, (left, h_left, s_left), (right, h_right, s_right), eps, trajectory);
    (lambda, evals + 2)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > EPS_M) || !eps.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "projection eps {eps} must exceed machine epsilon"
        )));
    }
    Ok(())
}

fn clamp_along(y: &[f64], set: &KnapsackSet, lambda: f64) -> Vec<f64> {
    let (l, u, a) = (set.lower(), set.upper(), set.coeffs());
    (0..y.len()).map(|i| mid(l[i], y[i] - lambda * a[i], u[i])).collect()
}

/// Root `lambda*` of `h` and the number of `h` evaluations used.
pub fn find_multiplier(y: &[f64], set: &KnapsackSet, opts: ProjectionOptions) -> Result<(f64, usize)> {
    let b = match set.rhs() {
        Rhs::Equality { b } => b,
        Rhs::Interval { .. } => return Err(Error::WrongRhs("equality")),
    };
    check_eps(opts.eps)?;
    if !set.is_feasible() {
        return Err(Error::InfeasibleSet);
    }
    let eq = MultiplierEquation::new(y, set, b, opts.compensated)?;
    let mut traj = Vec::new();
    Ok(solve_equation(&eq, opts.eps, &mut traj))
}

/// Projection onto `{l <= x <= u, a^T x = b}`.
pub fn project_equality(y: &[f64], set: &KnapsackSet, opts: ProjectionOptions) -> Result<Projection> {
    let (lambda, evals) = find_multiplier(y, set, opts)?;
    Ok(Projection {
        z: clamp_along(y, set, lambda),
        lambda,
        evals,
    })
}

/// Projection onto `{l <= x <= u, b_l <= a^T x <= b_u}`.
pub fn project_interval(y: &[f64], set: &KnapsackSet, opts: ProjectionOptions) -> Result<Projection> {
    let (lo, hi) = match set.rhs() {
        Rhs::Interval { lo, hi } => (lo, hi),
        Rhs::Equality { .. } => return Err(Error::WrongRhs("interval")),
    };
    check_eps(opts.eps)?;
    set.check_dim(y.len())?;
    if !set.is_feasible() {
        return Err(Error::InfeasibleSet);
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("projection point"));
    }

    let clamped = clamp_along(y, set, 0.0);
    let ax = set.dot(&clamped);
    if lo <= ax && ax <= hi {
        return Ok(Projection {
            z: clamped,
            lambda: 0.0,
            evals: 0,
        });
    }

    // upper face first; its trajectory seeds the lower-face bracket
    let eq_u = MultiplierEquation::new(y, set, hi, opts.compensated)?;
    let mut traj = Vec::new();
    let (lambda_u, evals_u) = solve_equation(&eq_u, opts.eps, &mut traj);

    let eq_l = MultiplierEquation::new(y, set, lo, opts.compensated)?;
    let shift = lo - hi;
    let (mut left, mut right) = ((f64::NEG_INFINITY, 0.0, 0.0), (f64::INFINITY, 0.0, 0.0));
    for &(lam, h_u, s) in &traj {
        let h = h_u + shift;
        if h <= 0.0 && lam > left.0 {
            left = (lam, h, s);
        }
        if h >= 0.0 && lam < right.0 {
            right = (lam, h, s);
        }
    }
    let (lambda_l, evals_l) = if traj.is_empty() {
        // no lambda dependence at all
        (lambda_u, 0)
    } else {
        if !left.0.is_finite() {
            let (b, _) = eq_l.bracket();
            let (h, s) = eq_l.h_with_scale(b);
            left = (b, h, s);
        }
        if !right.0.is_finite() {
            let (_, b) = eq_l.bracket();
            let (h, s) = eq_l.h_with_scale(b);
            right = (b, h, s);
        }
        let mut scratch = Vec::new();
        solve_bracketed(&eq_l, left, right, opts.eps, &mut scratch)
    };

    let x_u = clamp_along(y, set, lambda_u);
    let x_l = clamp_along(y, set, lambda_l);
    let z = (0..y.len()).map(|i| median3(x_l[i], y[i], x_u[i])).collect();
    Ok(Projection {
        z,
        lambda: if ax > hi { lambda_u } else { lambda_l },
        evals: evals_u + evals_l,
    })
}

/// Projection onto any knapsack set.
pub fn project(y: &[f64], set: &KnapsackSet, opts: ProjectionOptions) -> Result<Projection> {
    match set.rhs() {
        Rhs::Equality { .. } => project_equality(y, set, opts),
        Rhs::Interval { .. } => project_interval(y, set, opts),
    }
}

/// Plain or Neumaier-compensated running sum.
struct Sum {
    s: f64,
    c: f64,
    compensated: bool,
}

impl Sum {
    #[inline(always)]
    fn new(compensated: bool) -> Self {
        Self {
            s: 0.0,
            c: 0.0,
            compensated,
        }
    }

    #[inline(always)]
    fn add(&mut self, v: f64) {
        if self.compensated {
            let t = self.s + v;
            if self.s.abs() >= v.abs() {
                self.c += (self.s - t) + v;
            } else {
                self.c += (v - t) + self.s;
            }
            self.s = t;
        } else {
            self.s += v;
        }
    }

    #[inline(always)]
    fn total(&self) -> f64 {
        self.s + self.c
    }
}
