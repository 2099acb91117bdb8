//! Two-material conductor design on the unit square.
//!
//! Minimize `J(w) = 1/2 int |grad theta|^2` where
//! `-div(k(w) grad theta) = f`, `theta = theta0` on the boundary,
//! `k(w) = k_alpha + (k_beta - k_alpha) w`, over
//! `{ 0 <= w <= 1, sum w_c vol_c = R |Omega| }`.
//!
//! Everything is discrete: `J` is the two-point-flux energy of the cell
//! values and [`TopoProblem::gradient`] is its exact derivative with respect
//! to the cell values of `w`, obtained from one adjoint solve.

pub mod fv;
pub mod io;

use serde::{Deserialize, Serialize};

use crate::asa::{asa_solve, AsaConfig, AsaStatus};
use crate::error::{Error, Result};
use crate::problems::Objective;
use crate::rcgd::RcgdConfig;
use crate::set::KnapsackSet;
use crate::spg::{SpgConfig, SpgState};
use crate::{dot, norm2};
use fv::{boundary_faces, harmonic_da, pcg, FvOperator, PcgOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopoProblem {
    /// Cells per axis.
    pub n: usize,
    pub k_alpha: f64,
    pub k_beta: f64,
    /// Source per cell.
    pub load: Vec<f64>,
    pub theta0: f64,
    /// Volume fraction of the `k_beta` material.
    pub r: f64,
    pub pcg_tol: f64,
    pub pcg_max_iter: usize,
}

impl TopoProblem {
    pub fn new(n: usize, k_alpha: f64, k_beta: f64, load: Vec<f64>, theta0: f64, r: f64) -> Result<Self> {
        let p = Self {
            n,
            k_alpha,
            k_beta,
            load,
            theta0,
            r,
            pcg_tol: 1e-10,
            pcg_max_iter: 20 * n * n + 100,
        };
        p.validate()?;
        Ok(p)
    }

    /// Constant source `f`, `theta0 = 0`.
    pub fn uniform(n: usize, k_alpha: f64, k_beta: f64, f: f64, r: f64) -> Result<Self> {
        Self::new(n, k_alpha, k_beta, vec![f; n * n], 0.0, r)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n < 2 {
            return bad(format!("grid needs at least 2 cells per axis, got {}", self.n));
        }
        // equal conductivities are allowed: the design then has no effect
        if !(self.k_alpha > 0.0 && self.k_alpha <= self.k_beta && self.k_beta.is_finite()) {
            return bad(format!(
                "need 0 < k_alpha <= k_beta, got {} and {}",
                self.k_alpha, self.k_beta
            ));
        }
        if !(self.r > 0.0 && self.r <= 1.0) {
            return bad(format!("volume fraction must lie in (0, 1], got {}", self.r));
        }
        if self.load.len() != self.n * self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n * self.n,
                found: self.load.len(),
            });
        }
        if self.load.iter().any(|v| !v.is_finite()) || !self.theta0.is_finite() {
            return Err(Error::NonFinite("load"));
        }
        if !(self.pcg_tol > 0.0) {
            return bad(format!("pcg_tol must be positive, got {}", self.pcg_tol));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.n * self.n
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        let h = self.spacing();
        h * h
    }

    pub fn volumes(&self) -> Vec<f64> {
        vec![self.cell_volume(); self.cells()]
    }

    /// `|Omega|` as the sum of cell volumes, so that `w = 1` is exactly feasible for `R = 1`.
    pub fn domain_volume(&self) -> f64 {
        self.volumes().iter().sum()
    }

    pub fn conductivity(&self, w: f64) -> f64 {
        self.k_alpha + (self.k_beta - self.k_alpha) * w
    }

    /// The design set `{ 0 <= w <= 1, sum w_c vol_c = R |Omega| }`.
    pub fn design_set(&self) -> Result<KnapsackSet> {
        let m = self.cells();
        KnapsackSet::equality(
            vec![0.0; m],
            vec![1.0; m],
            self.volumes(),
            self.r * self.domain_volume(),
        )
    }

    pub fn volume_residual(&self, w: &[f64]) -> f64 {
        (dot(&self.volumes(), w) - self.r * self.domain_volume()).abs()
    }

    pub fn operator(&self, w: &[f64]) -> Result<FvOperator> {
        self.check_len(w)?;
        let k: Vec<f64> = w.iter().map(|&v| self.conductivity(v)).collect();
        Ok(FvOperator::new(self.n, &k))
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.cells() {
            return Err(Error::DimensionMismatch {
                expected: self.cells(),
                found: v.len(),
            });
        }
        Ok(())
    }

    fn state_rhs(&self, op: &FvOperator) -> Vec<f64> {
        let vol = self.cell_volume();
        (0..self.cells())
            .map(|c| self.load[c] * vol + op.boundary[c] * self.theta0)
            .collect()
    }

    /// Solves for the temperature; `guess` seeds PCG when given.
    pub fn solve_state(&self, w: &[f64], guess: Option<&[f64]>) -> Result<(Vec<f64>, PcgOutcome)> {
        let op = self.operator(w)?;
        let b = self.state_rhs(&op);
        let mut theta = match guess {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.cells()],
        };
        let out = pcg(&op, &b, &mut theta, self.pcg_tol, self.pcg_max_iter)?;
        Ok((theta, out))
    }

    /// `dJ/dtheta`: the unit-conductivity operator applied to `theta`,
    /// with boundary faces measured against `theta0`.
    pub fn objective_theta_derivative(&self, theta: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut r = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                let c = j * n + i;
                r[c] += 2.0 * boundary_faces(n, i, j) as f64 * (theta[c] - self.theta0);
                if i + 1 < n {
                    let d = theta[c] - theta[c + 1];
                    r[c] += d;
                    r[c + 1] -= d;
                }
                if j + 1 < n {
                    let d = theta[c] - theta[c + n];
                    r[c] += d;
                    r[c + n] -= d;
                }
            }
        }
        r
    }

    /// Adjoint `A(w) eta = dJ/dtheta`, homogeneous on the boundary.
    pub fn solve_adjoint(&self, w: &[f64], theta: &[f64], guess: Option<&[f64]>) -> Result<(Vec<f64>, PcgOutcome)> {
        self.check_len(theta)?;
        let op = self.operator(w)?;
        let b = self.objective_theta_derivative(theta);
        let mut eta = match guess {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.cells()],
        };
        let out = pcg(&op, &b, &mut eta, self.pcg_tol, self.pcg_max_iter)?;
        Ok((eta, out))
    }

    /// `J = 1/2 sum_faces T0 (jump theta)^2`, the discrete Dirichlet energy
    /// with unit conductivity.
    pub fn objective(&self, theta: &[f64]) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for j in 0..n {
            for i in 0..n {
                let c = j * n + i;
                let nb = boundary_faces(n, i, j) as f64;
                s += 2.0 * nb * (theta[c] - self.theta0).powi(2);
                if i + 1 < n {
                    s += (theta[c] - theta[c + 1]).powi(2);
                }
                if j + 1 < n {
                    s += (theta[c] - theta[c + n]).powi(2);
                }
            }
        }
        0.5 * s
    }

    /// `dJ/dw_c`. Divide by the cell volume for the pointwise density
    /// `-(k_beta - k_alpha) grad theta . grad eta`.
    pub fn gradient(&self, w: &[f64], theta: &[f64], eta: &[f64]) -> Vec<f64> {
        let n = self.n;
        let dk = self.k_beta - self.k_alpha;
        let k: Vec<f64> = w.iter().map(|&v| self.conductivity(v)).collect();
        let mut g = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                let c = j * n + i;
                let nb = boundary_faces(n, i, j) as f64;
                let mut s = 2.0 * nb * eta[c] * (theta[c] - self.theta0);
                let nbr = |q: usize| harmonic_da(k[c], k[q]) * (eta[c] - eta[q]) * (theta[c] - theta[q]);
                if i > 0 {
                    s += nbr(c - 1);
                }
                if i + 1 < n {
                    s += nbr(c + 1);
                }
                if j > 0 {
                    s += nbr(c - n);
                }
                if j + 1 < n {
                    s += nbr(c + n);
                }
                g[c] = -dk * s;
            }
        }
        g
    }

    /// `|sum f vol - boundary outflow|` for a computed state.
    pub fn conservation_defect(&self, w: &[f64], theta: &[f64]) -> Result<f64> {
        let op = self.operator(w)?;
        let vol = self.cell_volume();
        let source: f64 = self.load.iter().map(|f| f * vol).sum();
        let outflow: f64 = (0..self.cells())
            .map(|c| op.boundary[c] * (theta[c] - self.theta0))
            .sum();
        Ok((source - outflow).abs())
    }

    /// State, adjoint, objective and gradient at `w`.
    pub fn evaluate(&self, w: &[f64]) -> Result<TopoState> {
        let (theta, _) = self.solve_state(w, None)?;
        let (eta, _) = self.solve_adjoint(w, &theta, None)?;
        let j = self.objective(&theta);
        let g = self.gradient(w, &theta, &eta);
        Ok(TopoState {
            w: w.to_vec(),
            theta,
            eta,
            j,
            g,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopoState {
    pub w: Vec<f64>,
    pub theta: Vec<f64>,
    pub eta: Vec<f64>,
    pub j: f64,
    pub g: Vec<f64>,
}

/// [`Objective`] adapter. Remembers the last state so that value and
/// gradient at the same point cost one state solve, and warm-starts PCG.
#[derive(Debug)]
pub struct TopoObjective<'p> {
    problem: &'p TopoProblem,
    w: Vec<f64>,
    theta: Option<Vec<f64>>,
    eta: Option<Vec<f64>>,
    j: f64,
    grad: Option<Vec<f64>>,
    pub pcg_iterations: usize,
    pub state_solves: usize,
    pub adjoint_solves: usize,
    /// First solver failure; evaluations return NaN afterwards.
    pub error: Option<Error>,
}

impl<'p> TopoObjective<'p> {
    pub fn new(problem: &'p TopoProblem) -> Self {
        Self {
            problem,
            w: Vec::new(),
            theta: None,
            eta: None,
            j: f64::NAN,
            grad: None,
            pcg_iterations: 0,
            state_solves: 0,
            adjoint_solves: 0,
            error: None,
        }
    }

    pub fn theta(&self) -> Option<&[f64]> {
        self.theta.as_deref()
    }

    fn ensure_state(&mut self, w: &[f64]) -> bool {
        if self.error.is_some() {
            return false;
        }
        if self.theta.is_some() && self.w == w {
            return true;
        }
        match self.problem.solve_state(w, self.theta.as_deref()) {
            Ok((theta, out)) => {
                self.pcg_iterations += out.iterations;
                self.state_solves += 1;
                self.j = self.problem.objective(&theta);
                self.theta = Some(theta);
                self.w = w.to_vec();
                self.grad = None;
                true
            }
            Err(e) => {
                self.error = Some(e);
                false
            }
        }
    }

    fn ensure_grad(&mut self, w: &[f64]) -> bool {
        if !self.ensure_state(w) {
            return false;
        }
        if self.grad.is_some() {
            return true;
        }
        let theta = self.theta.as_deref().expect("state present");
        match self.problem.solve_adjoint(w, theta, self.eta.as_deref()) {
            Ok((eta, out)) => {
                self.pcg_iterations += out.iterations;
                self.adjoint_solves += 1;
                self.grad = Some(self.problem.gradient(w, theta, &eta));
                self.eta = Some(eta);
                true
            }
            Err(e) => {
                self.error = Some(e);
                false
            }
        }
    }
}

impl Objective for TopoObjective<'_> {
    fn n(&self) -> usize {
        self.problem.cells()
    }

    fn eval_f(&mut self, x: &[f64]) -> f64 {
        if self.ensure_state(x) {
            self.j
        } else {
            f64::NAN
        }
    }

    fn eval_grad(&mut self, x: &[f64], g: &mut [f64]) {
        if self.ensure_grad(x) {
            g.copy_from_slice(self.grad.as_deref().expect("gradient present"));
        } else {
            g.iter_mut().for_each(|v| *v = f64::NAN);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopoDriver {
    Spg,
    Asa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopoConfig {
    pub max_iter: usize,
    /// Stop when `|w_{k+1} - w_k| / |w_k| < rel_tol`.
    pub rel_tol: f64,
    pub driver: TopoDriver,
    pub spg: SpgConfig,
    /// Only used by the active-set driver.
    pub asa: AsaConfig,
}

impl Default for TopoConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            rel_tol: 1e-3,
            driver: TopoDriver::Spg,
            spg: SpgConfig::default(),
            asa: AsaConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopoStatus {
    /// Relative variation of the design fell below the threshold.
    Converged,
    /// The start point is already stationary, e.g. `R = 1`.
    Stationary,
    MaxIter,
    /// The line search could not make progress.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopoHistoryRow {
    pub iter: usize,
    pub j: f64,
    pub rel_change: f64,
    pub volume_residual: f64,
    pub norm_d1: f64,
}

#[derive(Debug, Clone)]
pub struct TopoResult {
    pub w: Vec<f64>,
    pub theta: Vec<f64>,
    pub j: f64,
    pub status: TopoStatus,
    pub iterations: usize,
    pub history: Vec<TopoHistoryRow>,
    pub pcg_iterations: usize,
}

fn relative_change(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let base = norm2(b);
    if base == 0.0 {
        norm2(&d)
    } else {
        norm2(&d) / base
    }
}

/// Runs the design loop from `w0` (projected onto the design set first).
pub fn optimize_topology(problem: &TopoProblem, w0: &[f64], cfg: &TopoConfig) -> Result<TopoResult> {
    problem.validate()?;
    problem.check_len(w0)?;
    let set = problem.design_set()?;
    let mut obj = TopoObjective::new(problem);
    let out = match cfg.driver {
        TopoDriver::Spg => run_spg(problem, &set, &mut obj, w0, cfg),
        TopoDriver::Asa => run_asa(problem, &set, &mut obj, w0, cfg),
    };
    match (out, obj.error.take()) {
        (Err(_), Some(e)) => Err(e),
        (r, _) => r,
    }
}

fn run_spg(
    problem: &TopoProblem,
    set: &KnapsackSet,
    obj: &mut TopoObjective,
    w0: &[f64],
    cfg: &TopoConfig,
) -> Result<TopoResult> {
    let mut st = SpgState::new(obj, set, w0, &cfg.spg)?;
    let mut history = vec![TopoHistoryRow {
        iter: 0,
        j: st.f,
        rel_change: f64::NAN,
        volume_residual: problem.volume_residual(&st.x),
        norm_d1: st.norm_d1(),
    }];
    let mut status = TopoStatus::MaxIter;
    if st.norm_d1() == 0.0 {
        status = TopoStatus::Stationary;
    } else {
        while st.iter < cfg.max_iter {
            let prev = st.x.clone();
            match st.step(obj, set, &cfg.spg) {
                Ok(_) => {}
                Err(Error::NotDescent(_)) | Err(Error::LineSearch { .. }) if obj.error.is_none() => {
                    status = TopoStatus::Stalled;
                    break;
                }
                Err(e) => return Err(e),
            }
            let rel = relative_change(&st.x, &prev);
            log::debug!("topopt iter {} J {:.6e} rel {:.3e}", st.iter, st.f, rel);
            history.push(TopoHistoryRow {
                iter: st.iter,
                j: st.f,
                rel_change: rel,
                volume_residual: problem.volume_residual(&st.x),
                norm_d1: st.norm_d1(),
            });
            if rel < cfg.rel_tol {
                status = TopoStatus::Converged;
                break;
            }
        }
    }
    let theta = match obj.theta() {
        Some(t) if obj.w == st.x => t.to_vec(),
        _ => problem.solve_state(&st.x, None)?.0,
    };
    Ok(TopoResult {
        j: st.f,
        theta,
        status,
        iterations: st.iter,
        history,
        pcg_iterations: obj.pcg_iterations,
        w: st.x,
    })
}

fn run_asa(
    problem: &TopoProblem,
    set: &KnapsackSet,
    obj: &mut TopoObjective,
    w0: &[f64],
    cfg: &TopoConfig,
) -> Result<TopoResult> {
    let res = asa_solve(obj, set, w0, &cfg.asa, &cfg.spg, &RcgdConfig::default())?;
    // one row per phase; the relative change is not tracked inside phases
    let mut history = Vec::new();
    for (i, e) in res.phases.entries.iter().enumerate() {
        if i == 0 {
            history.push(TopoHistoryRow {
                iter: 0,
                j: e.f_start,
                rel_change: f64::NAN,
                volume_residual: f64::NAN,
                norm_d1: f64::NAN,
            });
        }
        history.push(TopoHistoryRow {
            iter: i + 1,
            j: e.f_end,
            rel_change: f64::NAN,
            volume_residual: f64::NAN,
            norm_d1: f64::NAN,
        });
    }
    if let Some(last) = history.last_mut() {
        last.volume_residual = problem.volume_residual(&res.x);
        last.norm_d1 = res.norm_d1;
    }
    let status = match res.status {
        AsaStatus::Converged if res.phases.entries.is_empty() => TopoStatus::Stationary,
        AsaStatus::Converged => TopoStatus::Converged,
        AsaStatus::CycleLimit => TopoStatus::MaxIter,
        AsaStatus::Stalled => TopoStatus::Stalled,
    };
    let theta = problem.solve_state(&res.x, None)?.0;
    Ok(TopoResult {
        j: res.f,
        theta,
        status,
        iterations: res.phases.entries.len(),
        history,
        pcg_iterations: obj.pcg_iterations,
        w: res.x,
    })
}

/// `true` when every `J_{k+1} <= max(J_{k-m+1}, ..., J_k)`, the acceptance
/// rule of the nonmonotone line search with memory `m`.
pub fn nonmonotone_envelope_holds(js: &[f64], memory: usize) -> bool {
    (1..js.len()).all(|k| {
        let lo = k.saturating_sub(memory);
        let cap = js[lo..k].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        js[k] <= cap
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norm_inf;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn integral(p: &TopoProblem, theta: &[f64]) -> f64 {
        theta.iter().sum::<f64>() * p.cell_volume()
    }

    // int u over the unit square for -lap u = 1, u = 0 on the boundary
    fn poisson_integral_series() -> f64 {
        let pi = std::f64::consts::PI;
        let mut s = 0.0;
        for m in (1..4000).step_by(2) {
            for n in (1..4000).step_by(2) {
                let (m, n) = (m as f64, n as f64);
                s += 1.0 / (m * m * n * n * (m * m + n * n));
            }
        }
        64.0 / pi.powi(6) * s
    }

    #[test]
    fn conductivity_endpoints() {
        let p = TopoProblem::uniform(4, 1.0, 2.0, 1.0, 0.4).unwrap();
        assert_eq!(p.conductivity(0.0), 1.0);
        assert_eq!(p.conductivity(1.0), 2.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(TopoProblem::uniform(4, 2.0, 1.0, 1.0, 0.4).is_err());
        assert!(TopoProblem::uniform(4, 0.0, 1.0, 1.0, 0.4).is_err());
        assert!(TopoProblem::uniform(4, 1.0, 2.0, 1.0, 0.0).is_err());
        assert!(TopoProblem::uniform(4, 1.0, 2.0, 1.0, 1.5).is_err());
        assert!(TopoProblem::uniform(1, 1.0, 2.0, 1.0, 0.5).is_err());
        assert!(TopoProblem::new(4, 1.0, 2.0, vec![1.0; 3], 0.0, 0.5).is_err());
    }

    #[test]
    fn zero_load_gives_zero_state() {
        let p = TopoProblem::uniform(8, 1.0, 2.0, 0.0, 0.4).unwrap();
        let (theta, _) = p.solve_state(&vec![0.4; 64], None).unwrap();
        assert!(theta.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_design_converges_under_refinement() {
        let reference = poisson_integral_series();
        let w = 0.5;
        let mut vals = Vec::new();
        for n in [16, 32, 64] {
            let p = TopoProblem::uniform(n, 1.0, 2.0, 1.0, 0.5).unwrap();
            let (theta, _) = p.solve_state(&vec![w; n * n], None).unwrap();
            vals.push(integral(&p, &theta) * p.conductivity(w));
        }
        let e: Vec<f64> = vals.iter().map(|v| (v - reference).abs()).collect();
        for k in 0..2 {
            let ratio = e[k] / e[k + 1];
            assert!(ratio > 3.5 && ratio < 4.5, "errors {e:?}");
        }
        let diff_ratio = (vals[0] - vals[1]) / (vals[1] - vals[2]);
        assert!(diff_ratio > 3.5 && diff_ratio < 4.5);
        assert!(e[2] < 1e-4);
    }

    #[test]
    fn uniform_state_gives_zero_adjoint() {
        let p = TopoProblem::new(6, 1.0, 2.0, vec![0.0; 36], 3.0, 0.5).unwrap();
        let w = vec![0.5; 36];
        let (theta, _) = p.solve_state(&w, None).unwrap();
        assert!(theta.iter().all(|t| (t - 3.0).abs() < 1e-9));
        let (eta, _) = p.solve_adjoint(&w, &vec![3.0; 36], None).unwrap();
        assert!(eta.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn objective_derivative_matches_difference_quotient() {
        let p = TopoProblem::uniform(5, 1.0, 2.0, 1.0, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let theta: Vec<f64> = (0..25).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d = p.objective_theta_derivative(&theta);
        for c in [0, 7, 12, 24] {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[c] += 1e-6;
            tm[c] -= 1e-6;
            let fd = (p.objective(&tp) - p.objective(&tm)) / 2e-6;
            assert!((fd - d[c]).abs() < 1e-7);
        }
    }

    #[test]
    fn adjoint_gradient_matches_finite_differences() {
        let mut p = TopoProblem::uniform(8, 1.0, 2.0, 1.0, 0.4).unwrap();
        p.pcg_tol = 1e-14;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let st = p.evaluate(&w).unwrap();
        let gmax = norm_inf(&st.g);
        let j = |w: &[f64]| p.objective(&p.solve_state(w, None).unwrap().0);
        for _ in 0..20 {
            let c = rng.gen_range(0..64);
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[c] += 1e-6;
            wm[c] -= 1e-6;
            let fd = (j(&wp) - j(&wm)) / 2e-6;
            let rel = (fd - st.g[c]).abs() / st.g[c].abs().max(1e-3 * gmax);
            assert!(rel <= 1e-4, "cell {c}: fd {fd} adjoint {}", st.g[c]);
        }
    }

    #[test]
    fn equal_materials_give_zero_gradient() {
        let p = TopoProblem::uniform(8, 1.5, 1.5, 1.0, 0.4).unwrap();
        let st = p.evaluate(&vec![0.3; 64]).unwrap();
        assert!(st.g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn steepest_descent_step_decreases_objective() {
        let p = TopoProblem::uniform(12, 1.0, 2.0, 1.0, 0.4).unwrap();
        let set = p.design_set().unwrap();
        let w = vec![0.4; 144];
        let st = p.evaluate(&w).unwrap();
        let scale = 0.1 / norm_inf(&st.g);
        let y: Vec<f64> = w.iter().zip(&st.g).map(|(a, b)| a - scale * b).collect();
        let w1 = crate::project(&y, &set, Default::default()).unwrap().z;
        let j1 = p.objective(&p.solve_state(&w1, None).unwrap().0);
        assert!(j1 < st.j);
    }

    #[test]
    fn objective_is_nonnegative() {
        let p = TopoProblem::new(6, 1.0, 2.0, vec![-1.0; 36], 0.5, 0.4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let w: Vec<f64> = (0..36).map(|_| rng.gen_range(0.0..1.0)).collect();
            assert!(p.evaluate(&w).unwrap().j >= 0.0);
        }
    }

    #[test]
    fn flux_balances_the_source() {
        let p = TopoProblem::uniform(64, 1.0, 2.0, 1.0, 0.4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w: Vec<f64> = (0..64 * 64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let (theta, _) = p.solve_state(&w, None).unwrap();
        assert!(p.conservation_defect(&w, &theta).unwrap() <= 1e-8);
    }

    #[test]
    fn full_volume_is_immediately_stationary() {
        let p = TopoProblem::uniform(8, 1.0, 2.0, 1.0, 1.0).unwrap();
        let res = optimize_topology(&p, &vec![0.2; 64], &TopoConfig::default()).unwrap();
        assert_eq!(res.status, TopoStatus::Stationary);
        assert_eq!(res.iterations, 0);
        assert!(res.w.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn small_design_run_keeps_volume_and_envelope() {
        let p = TopoProblem::uniform(16, 1.0, 2.0, 1.0, 0.4).unwrap();
        let cfg = TopoConfig::default();
        let res = optimize_topology(&p, &vec![0.4; 256], &cfg).unwrap();
        assert_eq!(res.status, TopoStatus::Converged);
        assert!(res.iterations <= 500);
        let omega = p.domain_volume();
        assert!(res.history.iter().all(|h| h.volume_residual <= 1e-10 * omega));
        let js: Vec<f64> = res.history.iter().map(|h| h.j).collect();
        assert!(nonmonotone_envelope_holds(&js, cfg.spg.memory));
        assert!(res.j < js[0]);
        assert!(res.w.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn conductivity_contrast_changes_design() {
        let a = TopoProblem::uniform(16, 1.0, 2.0, 1.0, 0.4).unwrap();
        let b = TopoProblem::uniform(16, 1.0, 4.0, 1.0, 0.4).unwrap();
        let cfg = TopoConfig::default();
        let wa = optimize_topology(&a, &vec![0.4; 256], &cfg).unwrap().w;
        let wb = optimize_topology(&b, &vec![0.4; 256], &cfg).unwrap().w;
        assert!(relative_change(&wa, &wb) > 1e-3);
    }

    #[test]
    fn asa_driver_runs() {
        let p = TopoProblem::uniform(8, 1.0, 2.0, 1.0, 0.4).unwrap();
        let cfg = TopoConfig {
            driver: TopoDriver::Asa,
            asa: AsaConfig {
                tol: 1e-6,
                max_cycles: 50,
                ..AsaConfig::default()
            },
            ..TopoConfig::default()
        };
        let res = optimize_topology(&p, &vec![0.4; 64], &cfg).unwrap();
        assert!(p.volume_residual(&res.w) <= 1e-10 * p.domain_volume());
        assert!(res.j <= res.history[0].j);
    }

    #[test]
    fn solver_failure_is_reported() {
        let mut p = TopoProblem::uniform(16, 1.0, 2.0, 1.0, 0.4).unwrap();
        p.pcg_max_iter = 2;
        match optimize_topology(&p, &vec![0.4; 256], &TopoConfig::default()) {
            Err(Error::Pcg { history, .. }) => assert_eq!(history.len(), 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn envelope_checker() {
        assert!(nonmonotone_envelope_holds(&[4.0, 3.0, 3.5, 2.0], 2));
        assert!(!nonmonotone_envelope_holds(&[3.0, 4.0, 3.5, 4.5], 2));
        assert!(!nonmonotone_envelope_holds(&[3.0, 3.1], 1));
    }
}
