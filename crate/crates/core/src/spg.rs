//! Nonmonotone spectral projected gradient method.
//!
//! Each iteration projects the scaled gradient step `x - alpha_bb g` onto
//! the feasible set and searches along the segment to that point with the
//! Grippo-Lampariello-Lucidi nonmonotone Armijo rule. The stepsize is the
//! Barzilai-Borwein quotient `s^T s / s^T y`.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::Objective;
use crate::projection::{project, ProjectionOptions};
use crate::set::KnapsackSet;
use crate::{dot, norm_inf};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpgConfig {
    /// Sufficient decrease constant.
    pub gamma: f64,
    /// Nonmonotone memory length `M`.
    pub memory: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Stepsize used when `s^T y <= 0`.
    pub sigma_neg_curv: f64,
    /// Safeguards for the quadratic backtracking step.
    pub sigma1: f64,
    pub sigma2: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
    /// Stop when `|d^1(x)|_inf <= tol`.
    pub tol: f64,
    pub projection: ProjectionOptions,
}

impl Default for SpgConfig {
    fn default() -> Self {
        Self {
            gamma: 1e-4,
            memory: 10,
            alpha_min: 1e-30,
            alpha_max: 1e30,
            sigma_neg_curv: 1.0,
            sigma1: 0.1,
            sigma2: 0.9,
            max_iter: 10_000,
            max_backtracks: 100,
            tol: 1e-8,
            projection: ProjectionOptions::default(),
        }
    }
}

impl SpgConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("spg gamma must lie in (0, 1)");
        }
        if self.memory == 0 {
            return bad("spg memory must be at least 1");
        }
        if !(self.alpha_min > 0.0 && self.alpha_min < self.alpha_max) {
            return bad("spg requires 0 < alpha_min < alpha_max");
        }
        if !(0.0 < self.sigma1 && self.sigma1 < self.sigma2 && self.sigma2 < 1.0) {
            return bad("spg requires 0 < sigma1 < sigma2 < 1");
        }
        if !(self.tol >= 0.0) {
            return bad("spg tol must be nonnegative");
        }
        Ok(())
    }
}

/// `P_D(x - alpha g) - x`.
pub fn scaled_projected_gradient(
    x: &[f64],
    alpha: f64,
    grad: &[f64],
    set: &KnapsackSet,
    opts: ProjectionOptions,
) -> Result<Vec<f64>> {
    let y: Vec<f64> = x.iter().zip(grad).map(|(x, g)| x - alpha * g).collect();
    let mut d = project(&y, set, opts)?.z;
    for i in 0..d.len() {
        d[i] -= x[i];
    }
    Ok(d)
}

/// Barzilai-Borwein stepsize `s^T s / s^T y`, safeguarded.
pub fn bb_stepsize(s: &[f64], y: &[f64], cfg: &SpgConfig) -> f64 {
    let sty = dot(s, y);
    if !(sty > 0.0) {
        return cfg.sigma_neg_curv;
    }
    (dot(s, s) / sty).clamp(cfg.alpha_min, cfg.alpha_max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchOutcome {
    pub f: f64,
    pub alpha: f64,
    pub evals: usize,
}

/// Nonmonotone backtracking along `x + t d`, `t in (0, 1]`, where `z = x + d`
/// is feasible. Writes the accepted point to `x_out`.
///
/// At `t = 1` the accepted point is `z` itself; for `t < 1` each component is
/// clamped between `x_i` and `z_i`, so box feasibility is exact.
#[allow(clippy::too_many_arguments)]
pub fn nonmonotone_linesearch<O: Objective + ?Sized>(
    obj: &mut O,
    x: &[f64],
    fx: f64,
    z: &[f64],
    f_ref: f64,
    delta: f64,
    cfg: &SpgConfig,
    x_out: &mut [f64],
) -> Result<LineSearchOutcome> {
    if !(delta < 0.0) {
        return Err(Error::NotDescent(delta));
    }
    let mut t = 1.0;
    let mut best = (f64::NAN, f64::INFINITY);
    for evals in 1..=cfg.max_backtracks {
        if t == 1.0 {
            x_out.copy_from_slice(z);
        } else {
            for i in 0..x.len() {
                let v = x[i] + t * (z[i] - x[i]);
                let (lo, hi) = if x[i] <= z[i] { (x[i], z[i]) } else { (z[i], x[i]) };
                x_out[i] = v.clamp(lo, hi);
            }
        }
        let f = obj.eval_f(x_out);
        if f.is_finite() && f < best.1 {
            best = (t, f);
        }
        if f <= f_ref + cfg.gamma * t * delta {
            return Ok(LineSearchOutcome { f, alpha: t, evals });
        }
        let next = if f.is_finite() {
            let den = f - fx - t * delta;
            let trial = -0.5 * delta * t * t / den;
            if den > 0.0 && trial >= cfg.sigma1 * t && trial <= cfg.sigma2 * t {
                trial
            } else {
                0.5 * t
            }
        } else {
            0.5 * t
        };
        t = next;
    }
    Err(Error::LineSearch {
        best_alpha: best.0,
        best_value: best.1,
        evaluations: cfg.max_backtracks,
    })
}

/// One row of the iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpgTraceRow {
    pub iter: usize,
    pub f: f64,
    pub norm_d1: f64,
    pub alpha_bb: f64,
    pub n_f: usize,
    pub n_g: usize,
    /// Reference value `max` of the last `M` objective values.
    #[serde(skip)]
    pub f_ref: f64,
    /// Accepted line-search parameter.
    #[serde(skip)]
    pub alpha_ls: f64,
    /// Directional derivative `g^T d` of the step.
    #[serde(skip)]
    pub delta: f64,
    #[serde(skip)]
    pub box_violation: f64,
    #[serde(skip)]
    pub lin_residual: f64,
    /// Linear tolerance appropriate for the iterate.
    #[serde(skip)]
    pub lin_tol: f64,
}

/// Writes trace rows as CSV with columns `iter,f,norm_d1,alpha_bb,n_f,n_g`.
pub fn write_trace_csv<W: Write>(rows: &[SpgTraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Iterate of the method, advanced one step at a time by [`SpgState::step`].
#[derive(Debug, Clone)]
pub struct SpgState {
    pub x: Vec<f64>,
    pub f: f64,
    pub g: Vec<f64>,
    /// `d^1(x) = P_D(x - g) - x`.
    pub d1: Vec<f64>,
    pub alpha_bb: f64,
    pub history: VecDeque<f64>,
    pub iter: usize,
    pub n_f: usize,
    pub n_g: usize,
    /// Linear tolerance of the current iterate.
    pub lin_tol: f64,
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

impl SpgState {
    /// Projects `x0` onto the set and evaluates the objective there.
    pub fn new<O: Objective + ?Sized>(obj: &mut O, set: &KnapsackSet, x0: &[f64], cfg: &SpgConfig) -> Result<Self> {
        cfg.validate()?;
        let x = project(x0, set, cfg.projection)?.z;
        let lin_tol = set.linear_tolerance_from(&x, x0);
        let mut g = vec![0.0; x.len()];
        let f = obj.eval_f_and_grad(&x, &mut g);
        check_finite(0, &x, f, &g)?;
        let mut st = Self::with_values(x, f, g, set, cfg)?;
        st.n_f = 1;
        st.n_g = 1;
        st.lin_tol = st.lin_tol.max(lin_tol);
        Ok(st)
    }

    /// Starts from a feasible point whose value and gradient are known.
    pub fn with_values(x: Vec<f64>, f: f64, g: Vec<f64>, set: &KnapsackSet, cfg: &SpgConfig) -> Result<Self> {
        cfg.validate()?;
        let d1 = scaled_projected_gradient(&x, 1.0, &g, set, cfg.projection)?;
        let dn = norm_inf(&d1);
        let alpha_bb = if dn > 0.0 {
            (1.0 / dn).clamp(cfg.alpha_min, cfg.alpha_max)
        } else {
            1.0
        };
        let mut history = VecDeque::with_capacity(cfg.memory);
        history.push_back(f);
        let lin_tol = set.linear_tolerance(&x);
        Ok(Self {
            x,
            f,
            g,
            d1,
            alpha_bb,
            history,
            iter: 0,
            n_f: 0,
            n_g: 0,
            lin_tol,
        })
    }

    pub fn norm_d1(&self) -> f64 {
        norm_inf(&self.d1)
    }

    pub fn converged(&self, cfg: &SpgConfig) -> bool {
        self.norm_d1() <= cfg.tol
    }

    fn row(&self, set: &KnapsackSet, f_ref: f64, alpha_ls: f64, delta: f64) -> SpgTraceRow {
        SpgTraceRow {
            iter: self.iter,
            f: self.f,
            norm_d1: self.norm_d1(),
            alpha_bb: self.alpha_bb,
            n_f: self.n_f,
            n_g: self.n_g,
            f_ref,
            alpha_ls,
            delta,
            box_violation: set.box_violation(&self.x),
            lin_residual: set.linear_violation(&self.x),
            lin_tol: self.lin_tol,
        }
    }

    /// Trace row describing the current (starting) iterate.
    pub fn initial_row(&self, set: &KnapsackSet) -> SpgTraceRow {
        self.row(set, self.f, 0.0, 0.0)
    }

    /// Performs one iteration.
    pub fn step<O: Objective + ?Sized>(
        &mut self,
        obj: &mut O,
        set: &KnapsackSet,
        cfg: &SpgConfig,
    ) -> Result<SpgTraceRow> {
        let n = self.x.len();
        let y: Vec<f64> = (0..n).map(|i| self.x[i] - self.alpha_bb * self.g[i]).collect();
        let z = project(&y, set, cfg.projection)?.z;
        let lin_tol = set.linear_tolerance_from(&z, &y);
        let d: Vec<f64> = (0..n).map(|i| z[i] - self.x[i]).collect();
        let delta = dot(&self.g, &d);
        let f_ref = self.history.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

        let mut x_new = vec![0.0; n];
        let ls = nonmonotone_linesearch(obj, &self.x, self.f, &z, f_ref, delta, cfg, &mut x_new)?;
        self.n_f += ls.evals;
        let mut g_new = vec![0.0; n];
        obj.eval_grad(&x_new, &mut g_new);
        self.n_g += 1;
        self.iter += 1;
        check_finite(self.iter, &x_new, ls.f, &g_new)?;

        let s: Vec<f64> = (0..n).map(|i| x_new[i] - self.x[i]).collect();
        let yk: Vec<f64> = (0..n).map(|i| g_new[i] - self.g[i]).collect();
        self.alpha_bb = bb_stepsize(&s, &yk, cfg);
        // a segment point inherits the larger of the two endpoint tolerances
        self.lin_tol = lin_tol.max(self.lin_tol);
        self.x = x_new;
        self.f = ls.f;
        self.g = g_new;
        self.d1 = scaled_projected_gradient(&self.x, 1.0, &self.g, set, cfg.projection)?;
        if self.history.len() == cfg.memory {
            self.history.pop_front();
        }
        self.history.push_back(self.f);
        if ls.alpha == 1.0 {
            self.lin_tol = lin_tol;
        }
        Ok(self.row(set, f_ref, ls.alpha, delta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpgStatus {
    Converged,
    MaxIter,
    /// No descent is numerically possible: `g^T d >= 0` or the line search
    /// ran out of backtracks. The iterate is the last accepted point.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct SpgResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub status: SpgStatus,
    pub iterations: usize,
    pub norm_d1: f64,
    /// Row 0 describes the starting point.
    pub trace: Vec<SpgTraceRow>,
    pub n_f: usize,
    pub n_g: usize,
}

/// Runs the method from `x0` (projected first) until `|d^1|_inf <= tol`.
pub fn spg_solve<O: Objective + ?Sized>(
    obj: &mut O,
    set: &KnapsackSet,
    x0: &[f64],
    cfg: &SpgConfig,
) -> Result<SpgResult> {
    set.check_dim(x0.len())?;
    let mut st = SpgState::new(obj, set, x0, cfg)?;
    let mut trace = vec![st.initial_row(set)];
    let mut status = SpgStatus::MaxIter;
    loop {
        if st.converged(cfg) {
            status = SpgStatus::Converged;
            break;
        }
        if st.iter >= cfg.max_iter {
            break;
        }
        let row = match st.step(obj, set, cfg) {
            Ok(row) => row,
            Err(Error::NotDescent(_)) | Err(Error::LineSearch { .. }) => {
                log::debug!("spg stalled at iter {} with |d1| {:.3e}", st.iter, st.norm_d1());
                status = SpgStatus::Stalled;
                break;
            }
            Err(e) => return Err(e),
        };
        log::debug!("spg iter {} f {:.6e} |d1| {:.3e}", row.iter, row.f, row.norm_d1);
        trace.push(row);
    }
    Ok(SpgResult {
        norm_d1: st.norm_d1(),
        x: st.x,
        f: st.f,
        status,
        iterations: st.iter,
        trace,
        n_f: st.n_f,
        n_g: st.n_g,
    })
}
