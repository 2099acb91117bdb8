//! Reduced conjugate-gradient phase.
//!
//! Bound-active variables are frozen, the linear row (when active) is
//! eliminated with a Householder null-space basis over the free coordinates,
//! and the resulting unconstrained problem in `v` is handed to a nonlinear
//! CG method. Iterates are `x = x0 + Z v`; steps are capped so free variables
//! never leave the box and an inactive linear row is never crossed.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nullspace::{build_householder, feasible_step_cap, HouseholderNullSpace, LinearRow};
use crate::problems::Objective;
use crate::set::{mid, partition, IndexPartition, KnapsackSet, Rhs};
use crate::{dot, norm2, norm_inf};

/// Status of the linear row while the reduced phase runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearState {
    EqualityActive,
    /// Neither side binds; the reduction is the identity on free variables.
    IntervalInactive,
    IntervalLowerActive,
    IntervalUpperActive,
}

impl LinearState {
    pub fn row_active(self) -> bool {
        !matches!(self, LinearState::IntervalInactive)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Lower,
    Upper,
}

/// Affine parametrization `x = x0 + Z~ v` of the current face.
#[derive(Debug, Clone)]
pub struct ReducedSpace {
    part: IndexPartition,
    linear: LinearState,
    anchor: Vec<f64>,
    /// `None` means `Z = I` on the free coordinates.
    basis: Option<HouseholderNullSpace>,
}

impl ReducedSpace {
    pub fn new(set: &KnapsackSet, anchor: &[f64], part: IndexPartition, linear: LinearState) -> Result<Self> {
        set.check_dim(anchor.len())?;
        if part.n() != set.n() {
            return Err(Error::DimensionMismatch {
                expected: set.n(),
                found: part.n(),
            });
        }
        match (set.rhs(), linear) {
            (Rhs::Equality { .. }, LinearState::EqualityActive) => {}
            (Rhs::Interval { .. }, s) if s != LinearState::EqualityActive => {}
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "linear state {linear:?} does not match the constraint type"
                )))
            }
        }
        let a_free = part.shrink(set.coeffs())?;
        // a row with a_F = 0 is fixed by the frozen variables and needs no basis
        let basis = if linear.row_active() && a_free.iter().any(|v| *v != 0.0) {
            Some(build_householder(&a_free)?)
        } else {
            None
        };
        Ok(Self {
            part,
            linear,
            anchor: anchor.to_vec(),
            basis,
        })
    }

    /// Face of `x`: bound-active indices within `tol_scale` and the linear
    /// row active when `a^T x` is within the linear tolerance of a side.
    pub fn at_point(set: &KnapsackSet, x: &[f64], tol_scale: f64) -> Result<Self> {
        let part = partition(x, set, tol_scale)?;
        let linear = match set.rhs() {
            Rhs::Equality { .. } => LinearState::EqualityActive,
            Rhs::Interval { lo, hi } => {
                let ax = set.dot(x);
                let tol = set.linear_tolerance(x);
                if (ax - lo).abs() <= tol {
                    LinearState::IntervalLowerActive
                } else if (ax - hi).abs() <= tol {
                    LinearState::IntervalUpperActive
                } else {
                    LinearState::IntervalInactive
                }
            }
        };
        Self::new(set, x, part, linear)
    }

    /// Dimension of the reduced variable `v`.
    pub fn dim(&self) -> usize {
        let free = self.part.inactive().len();
        if self.basis.is_some() {
            free - 1
        } else {
            free
        }
    }

    pub fn partition(&self) -> &IndexPartition {
        &self.part
    }

    pub fn linear_state(&self) -> LinearState {
        self.linear
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn basis(&self) -> Option<&HouseholderNullSpace> {
        self.basis.as_ref()
    }

    fn check_reduced(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: len,
            });
        }
        Ok(())
    }

    /// Full-length direction `Z~ d` with zeros on fixed coordinates.
    pub fn lift_direction(&self, d: &[f64]) -> Result<Vec<f64>> {
        self.check_reduced(d.len())?;
        let mut out = vec![0.0; self.part.n()];
        self.lift_direction_into(d, &mut out, &mut Vec::new());
        Ok(out)
    }

    fn lift_direction_into(&self, d: &[f64], out: &mut [f64], work: &mut Vec<f64>) {
        let free = self.part.inactive();
        match &self.basis {
            Some(b) => {
                work.resize(free.len(), 0.0);
                b.apply_z_into(d, work);
                for (k, &i) in free.iter().enumerate() {
                    out[i] = work[k];
                }
            }
            None => {
                for (k, &i) in free.iter().enumerate() {
                    out[i] = d[k];
                }
            }
        }
    }

    /// `x0 + Z~ v`.
    pub fn lift(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_reduced(v.len())?;
        let mut x = vec![0.0; self.part.n()];
        self.lift_into(v, &mut x, &mut Vec::new());
        Ok(x)
    }

    fn lift_into(&self, v: &[f64], x: &mut [f64], work: &mut Vec<f64>) {
        x.copy_from_slice(&self.anchor);
        let free = self.part.inactive();
        match &self.basis {
            Some(b) => {
                work.resize(free.len(), 0.0);
                b.apply_z_into(v, work);
                for (k, &i) in free.iter().enumerate() {
                    x[i] = self.anchor[i] + work[k];
                }
            }
            None => {
                for (k, &i) in free.iter().enumerate() {
                    x[i] = self.anchor[i] + v[k];
                }
            }
        }
    }

    /// `Z~^T g`: shrink to free coordinates, then apply `Z^T` if a row is active.
    pub fn reduce_gradient(&self, g_full: &[f64]) -> Result<Vec<f64>> {
        let gf = self.part.shrink(g_full)?;
        Ok(match &self.basis {
            Some(b) => {
                let mut out = vec![0.0; self.dim()];
                b.apply_zt_into(&gf, &mut out);
                out
            }
            None => gf,
        })
    }
}

/// Largest step keeping the free coordinates of `x + alpha p` in the box,
/// with the index of the blocking coordinate.
pub fn step_cap_box(x: &[f64], p: &[f64], lower: &[f64], upper: &[f64], part: &IndexPartition) -> (f64, Option<usize>) {
    let mut cap = f64::INFINITY;
    let mut which = None;
    for &i in part.inactive() {
        let t = if p[i] > 0.0 {
            (upper[i] - x[i]).max(0.0) / p[i]
        } else if p[i] < 0.0 {
            (lower[i] - x[i]).min(0.0) / p[i]
        } else {
            continue;
        };
        if t < cap {
            cap = t;
            which = Some(i);
        }
    }
    (cap, which)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RcgdConfig {
    /// Lower truncation parameter of the Hager-Zhang update.
    pub eta: f64,
    /// Wolfe sufficient-decrease constant.
    pub delta: f64,
    /// Wolfe curvature constant.
    pub sigma: f64,
    /// Stop when `|Z~^T g|_2 <= tol`.
    pub tol: f64,
    pub max_iter: usize,
    pub max_linesearch: usize,
    /// Also accept approximate Wolfe points.
    pub approx_wolfe: bool,
    /// Relative function tolerance of the approximate Wolfe test.
    pub approx_eps: f64,
}

impl Default for RcgdConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            delta: 0.1,
            sigma: 0.9,
            tol: 1e-8,
            max_iter: 10_000,
            max_linesearch: 60,
            approx_wolfe: true,
            approx_eps: 1e-6,
        }
    }
}

impl RcgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.delta && self.delta < 0.5 && self.delta < self.sigma && self.sigma < 1.0) {
            return Err(Error::InvalidConfig(
                "rcgd requires 0 < delta < min(0.5, sigma), sigma < 1".into(),
            ));
        }
        if !(self.eta > 0.0) {
            return Err(Error::InvalidConfig("rcgd eta must be positive".into()));
        }
        if self.max_linesearch == 0 {
            return Err(Error::InvalidConfig("rcgd max_linesearch must be positive".into()));
        }
        Ok(())
    }
}

/// Reduced CG iterate.
#[derive(Debug, Clone, Default)]
pub struct CgState {
    pub v: Vec<f64>,
    pub g: Vec<f64>,
    pub d: Vec<f64>,
    pub g_prev: Vec<f64>,
    pub d_prev: Vec<f64>,
    pub restart: bool,
}

/// Hager-Zhang direction `-g + beta d_prev` with
/// `beta = max(beta_N, -1 / (|d_prev| min(eta, |g_prev|)))`; falls back to
/// `-g` on restart or when the descent test `g^T d <= -|g|^2 / 8` fails.
pub fn cg_direction(state: &CgState, eta: f64) -> Vec<f64> {
    let steepest = || state.g.iter().map(|v| -v).collect::<Vec<f64>>();
    if state.restart || state.d_prev.is_empty() || state.g_prev.is_empty() {
        return steepest();
    }
    let y: Vec<f64> = state.g.iter().zip(&state.g_prev).map(|(a, b)| a - b).collect();
    let dy = dot(&state.d_prev, &y);
    if !(dy > 0.0) {
        return steepest();
    }
    let yy = dot(&y, &y);
    let beta_n = (dot(&y, &state.g) - 2.0 * yy / dy * dot(&state.d_prev, &state.g)) / dy;
    let eta_k = -1.0 / (norm2(&state.d_prev) * eta.min(norm2(&state.g_prev)));
    let beta = beta_n.max(eta_k);
    if !beta.is_finite() {
        return steepest();
    }
    let d: Vec<f64> = state.g.iter().zip(&state.d_prev).map(|(g, p)| -g + beta * p).collect();
    if dot(&state.g, &d) > -0.125 * dot(&state.g, &state.g) {
        return steepest();
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WolfeStep {
    pub alpha: f64,
    pub phi: f64,
    pub dphi: f64,
    /// The step equals the cap.
    pub capped: bool,
    pub evals: usize,
}

/// Line search on `phi(alpha) -> (value, derivative)` over `(0, cap]`.
///
/// Returns a point satisfying the Wolfe conditions (or the approximate
/// Wolfe conditions), or the cap itself when `phi` still decreases
/// sufficiently there. A derivative secant step refines the first
/// acceptable point, which makes steps exact on quadratics.
pub fn wolfe_linesearch<F>(
    mut phi: F,
    phi0: f64,
    dphi0: f64,
    alpha0: f64,
    cap: f64,
    cfg: &RcgdConfig,
) -> Result<WolfeStep>
where
    F: FnMut(f64) -> Result<(f64, f64)>,
{
    if !(dphi0 < 0.0) {
        return Err(Error::NotDescent(dphi0));
    }
    if !(cap > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "line search cap must be positive, got {cap}"
        )));
    }
    let (delta, sigma) = (cfg.delta, cfg.sigma);
    let acceptable = |a: f64, f: f64, df: f64| -> bool {
        if !f.is_finite() || !df.is_finite() {
            return false;
        }
        let curv = df >= sigma * dphi0;
        let wolfe = f <= phi0 + delta * a * dphi0 && curv;
        let approx =
            cfg.approx_wolfe && f <= phi0 + cfg.approx_eps * phi0.abs() && df <= (2.0 * delta - 1.0) * dphi0 && curv;
        wolfe || approx
    };

    let mut lo = (0.0, phi0, dphi0);
    let mut hi: Option<(f64, f64, f64)> = None;
    let mut alpha = if alpha0.is_finite() && alpha0 > 0.0 {
        alpha0.min(cap)
    } else {
        cap.min(1.0)
    };
    let mut best = (0.0, phi0);
    let mut candidate: Option<WolfeStep> = None;

    for evals in 1..=cfg.max_linesearch {
        let (f, df) = phi(alpha)?;
        if f.is_finite() && f < best.1 {
            best = (alpha, f);
        }
        let step = WolfeStep {
            alpha,
            phi: f,
            dphi: df,
            capped: alpha == cap,
            evals,
        };
        if let Some(c) = candidate {
            // refinement evaluated: keep whichever acceptable point is lower
            let take = acceptable(alpha, f, df) && f <= c.phi;
            return Ok(if take { step } else { WolfeStep { evals, ..c } });
        }
        if acceptable(alpha, f, df) {
            let curv = df - dphi0;
            if !step.capped && curv > 0.0 {
                let s = alpha * -dphi0 / curv;
                if s.is_finite() && s > 0.0 && s <= cap && (s - alpha).abs() > 1e-10 * alpha {
                    candidate = Some(step);
                    alpha = s;
                    continue;
                }
            }
            return Ok(step);
        }
        let sufficient = f.is_finite() && f <= phi0 + delta * alpha * dphi0;
        if step.capped && sufficient && f < phi0 {
            return Ok(step);
        }
        if !sufficient || !df.is_finite() {
            hi = Some((alpha, f, df));
            let (a0, f0, d0) = lo;
            let w = alpha - a0;
            let mut t = if f.is_finite() {
                let den = f - f0 - d0 * w;
                if den > 0.0 {
                    a0 - d0 * w * w / (2.0 * den)
                } else {
                    a0 + 0.5 * w
                }
            } else {
                a0 + 0.5 * w
            };
            t = t.clamp(a0 + 0.1 * w, alpha - 0.1 * w);
            alpha = t;
        } else {
            lo = (alpha, f, df);
            alpha = match hi {
                Some((ah, _, dh)) => {
                    let w = ah - alpha;
                    let mut t = if dh.is_finite() && dh > df {
                        alpha - df * w / (dh - df)
                    } else {
                        alpha + 0.5 * w
                    };
                    t = t.clamp(alpha + 0.1 * w, ah - 0.1 * w);
                    t
                }
                None => {
                    let curv = df - dphi0;
                    let grow = if curv > 0.0 { alpha * -dphi0 / curv } else { 5.0 * alpha };
                    grow.clamp(2.0 * alpha, 10.0 * alpha).min(cap)
                }
            };
        }
        if !(alpha > 0.0) || alpha == lo.0 {
            break;
        }
    }
    Err(Error::LineSearch {
        best_alpha: best.0,
        best_value: best.1,
        evaluations: cfg.max_linesearch,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapKind {
    None,
    Box,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RcgdStatus {
    Converged,
    /// A free variable reached the bound at this index.
    BoundHit(usize),
    /// The inactive linear row became active on this side.
    LinearHit(Side),
    /// The monitor asked to leave the reduced phase.
    RestartRequested,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RcgdTraceRow {
    pub iter: usize,
    pub f: f64,
    pub norm_gred: f64,
    pub alpha: f64,
    pub cap_kind: CapKind,
}

pub fn write_trace_csv<W: Write>(rows: &[RcgdTraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Snapshot handed to the monitor before each iteration.
#[derive(Debug)]
pub struct RcgdProgress<'a> {
    pub iter: usize,
    pub x: &'a [f64],
    pub f: f64,
    pub g: &'a [f64],
    pub norm_gred: f64,
}

pub type Monitor<'m> = &'m mut dyn FnMut(&RcgdProgress) -> bool;

#[derive(Debug, Clone)]
pub struct RcgdResult {
    pub x: Vec<f64>,
    pub f: f64,
    /// Full gradient at `x`.
    pub g: Vec<f64>,
    pub status: RcgdStatus,
    pub iterations: usize,
    pub norm_gred: f64,
    pub trace: Vec<RcgdTraceRow>,
    pub n_f: usize,
    pub n_g: usize,
}

fn check_finite(iteration: usize, x: &[f64], f: f64, g: &[f64]) -> Result<()> {
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluator {
            iteration,
            x: x.to_vec(),
        });
    }
    Ok(())
}

/// Runs reduced CG from the anchor of `rs`.
///
/// `start` optionally supplies the value and full gradient at the anchor.
pub fn rcgd_solve<O: Objective + ?Sized>(
    obj: &mut O,
    set: &KnapsackSet,
    rs: &ReducedSpace,
    start: Option<(f64, &[f64])>,
    cfg: &RcgdConfig,
    mut monitor: Option<Monitor>,
) -> Result<RcgdResult> {
    cfg.validate()?;
    let n = set.n();
    let m = rs.dim();
    let (l, u) = (set.lower(), set.upper());
    let mut x = rs.anchor().to_vec();
    let mut g = vec![0.0; n];
    let (mut n_f, mut n_g) = (0, 0);
    let mut f = match start {
        Some((f0, g0)) => {
            g.copy_from_slice(g0);
            f0
        }
        None => {
            n_f += 1;
            n_g += 1;
            obj.eval_f_and_grad(&x, &mut g)
        }
    };
    check_finite(0, &x, f, &g)?;

    let mut cg = CgState {
        v: vec![0.0; m],
        g: rs.reduce_gradient(&g)?,
        ..CgState::default()
    };
    let mut norm_gred = norm2(&cg.g);
    let mut trace = vec![RcgdTraceRow {
        iter: 0,
        f,
        norm_gred,
        alpha: 0.0,
        cap_kind: CapKind::None,
    }];
    let rows_storage;
    let rows: Vec<LinearRow> = match (rs.linear_state(), set.rhs()) {
        (LinearState::IntervalInactive, Rhs::Interval { lo, hi }) => {
            rows_storage = set.coeffs().iter().map(|v| -v).collect::<Vec<f64>>();
            vec![LinearRow::new(set.coeffs(), lo), LinearRow::new(&rows_storage, -hi)]
        }
        _ => Vec::new(),
    };

    let mut p = vec![0.0; n];
    let mut work = Vec::new();
    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];
    let mut vt = vec![0.0; m];
    let mut prev_slope = f64::NAN;
    let mut prev_alpha = f64::NAN;
    let mut iter = 0;
    let finish = |x: Vec<f64>, f, g, status, iter, norm_gred, trace, n_f, n_g| RcgdResult {
        x,
        f,
        g,
        status,
        iterations: iter,
        norm_gred,
        trace,
        n_f,
        n_g,
    };

    loop {
        if norm_gred <= cfg.tol || m == 0 {
            return Ok(finish(x, f, g, RcgdStatus::Converged, iter, norm_gred, trace, n_f, n_g));
        }
        if iter >= cfg.max_iter {
            return Ok(finish(x, f, g, RcgdStatus::MaxIter, iter, norm_gred, trace, n_f, n_g));
        }
        if let Some(mon) = monitor.as_mut() {
            let info = RcgdProgress {
                iter,
                x: &x,
                f,
                g: &g,
                norm_gred,
            };
            if mon(&info) {
                return Ok(finish(
                    x,
                    f,
                    g,
                    RcgdStatus::RestartRequested,
                    iter,
                    norm_gred,
                    trace,
                    n_f,
                    n_g,
                ));
            }
        }

        cg.d = cg_direction(&cg, cfg.eta);
        let mut slope = dot(&cg.g, &cg.d);
        if !(slope < 0.0) {
            cg.d = cg.g.iter().map(|v| -v).collect();
            slope = -dot(&cg.g, &cg.g);
        }
        p.iter_mut().for_each(|v| *v = 0.0);
        rs.lift_direction_into(&cg.d, &mut p, &mut work);

        let (cap_box, box_idx) = step_cap_box(&x, &p, l, u, rs.partition());
        let (cap_lin, lin_row) = if rows.is_empty() {
            (f64::INFINITY, None)
        } else {
            feasible_step_cap(&x, &p, &rows)?
        };
        let (cap, cap_kind) = if cap_lin < cap_box {
            (cap_lin, CapKind::Linear)
        } else if cap_box.is_finite() {
            (cap_box, CapKind::Box)
        } else {
            (f64::INFINITY, CapKind::None)
        };
        let hit_status = || match cap_kind {
            CapKind::Box => RcgdStatus::BoundHit(box_idx.expect("box cap has an index")),
            _ => RcgdStatus::LinearHit(if lin_row == Some(0) { Side::Lower } else { Side::Upper }),
        };
        if cap == 0.0 {
            return Ok(finish(x, f, g, hit_status(), iter, norm_gred, trace, n_f, n_g));
        }

        let alpha0 = if prev_alpha.is_finite() {
            prev_alpha * prev_slope / slope
        } else {
            1.0 / norm_inf(&cg.g)
        };
        // evaluations at the last two trial steps, to recover the accepted one
        let mut recent: Vec<(f64, Vec<f64>, f64, Vec<f64>)> = Vec::with_capacity(2);
        let mut evals = 0;
        let ls = wolfe_linesearch(
            |alpha| {
                for k in 0..m {
                    vt[k] = cg.v[k] + alpha * cg.d[k];
                }
                rs.lift_into(&vt, &mut xt, &mut work);
                for &i in rs.partition().inactive() {
                    xt[i] = mid(l[i], xt[i], u[i]);
                }
                if alpha == cap && cap_kind == CapKind::Box {
                    let i = box_idx.expect("box cap has an index");
                    xt[i] = if p[i] > 0.0 { u[i] } else { l[i] };
                }
                let ft = obj.eval_f_and_grad(&xt, &mut gt);
                evals += 1;
                if recent.len() == 2 {
                    recent.remove(0);
                }
                recent.push((alpha, xt.clone(), ft, gt.clone()));
                Ok((ft, dot(&gt, &p)))
            },
            f,
            slope,
            alpha0,
            cap,
            cfg,
        );
        n_f += evals;
        n_g += evals;
        let ls = ls?;
        iter += 1;
        let (_, xa, fa, ga) = recent
            .into_iter()
            .rev()
            .find(|r| r.0 == ls.alpha)
            .expect("accepted step was evaluated");
        check_finite(iter, &xa, fa, &ga)?;
        for k in 0..m {
            cg.v[k] += ls.alpha * cg.d[k];
        }
        x = xa;
        f = fa;
        g = ga;
        cg.g_prev = std::mem::take(&mut cg.g);
        cg.d_prev = std::mem::take(&mut cg.d);
        cg.g = rs.reduce_gradient(&g)?;
        cg.restart = false;
        norm_gred = norm2(&cg.g);
        prev_alpha = ls.alpha;
        prev_slope = slope;
        trace.push(RcgdTraceRow {
            iter,
            f,
            norm_gred,
            alpha: ls.alpha,
            cap_kind: if ls.capped { cap_kind } else { CapKind::None },
        });
        log::trace!("rcgd iter {iter} f {f:.6e} |gred| {norm_gred:.3e}");
        if ls.capped && cap_kind != CapKind::None {
            return Ok(finish(x, f, g, hit_status(), iter, norm_gred, trace, n_f, n_g));
        }
    }
}
