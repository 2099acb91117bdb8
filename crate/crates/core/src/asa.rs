//! Two-phase active-set driver.
//!
//! The gradient-projection phase (SPG) identifies the active bounds; the
//! reduced phase (RCGD) then runs conjugate gradients on the current face.
//! Control passes back to SPG when the face looks wrong, that is when the
//! reduced gradient is small compared with the projected gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::Objective;
use crate::projection::project;
use crate::rcgd::{rcgd_solve, RcgdConfig, RcgdProgress, RcgdStatus, RcgdTraceRow, ReducedSpace};
use crate::set::{partition, KnapsackSet, Rhs, ITERATE_ACTIVE_TOL};
use crate::spg::{scaled_projected_gradient, SpgConfig, SpgState, SpgTraceRow};
use crate::{dot, norm2, norm_inf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UndecidedNorm {
    Euclidean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AsaConfig {
    /// Exponent of the gradient threshold in `U(x)`, in (0, 1).
    pub exp_a: f64,
    /// Exponent of the distance threshold in `U(x)`, in (1, 2).
    pub exp_b: f64,
    /// Leave the reduced phase when `|Z^T g| < mu |d^1|_inf`.
    pub mu: f64,
    /// Factor applied to `mu` when `U(x)` is empty but the face test fails.
    pub mu_decay: f64,
    /// SPG iterations with an unchanged active set before switching.
    pub repeat_limit: usize,
    /// Stop when `|d^1(x)|_inf <= tol`.
    pub tol: f64,
    /// Maximum number of gradient-projection/reduced cycles.
    pub max_cycles: usize,
    pub undecided_norm: UndecidedNorm,
}

impl Default for AsaConfig {
    fn default() -> Self {
        Self {
            exp_a: 0.5,
            exp_b: 1.5,
            mu: 0.1,
            mu_decay: 0.5,
            repeat_limit: 5,
            tol: 1e-8,
            max_cycles: 1000,
            undecided_norm: UndecidedNorm::Euclidean,
        }
    }
}

impl AsaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.exp_a > 0.0 && self.exp_a < 1.0) {
            return Err(Error::InvalidConfig("asa exp_a must lie in (0, 1)".into()));
        }
        if !(self.exp_b > 1.0 && self.exp_b < 2.0) {
            return Err(Error::InvalidConfig("asa exp_b must lie in (1, 2)".into()));
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(Error::InvalidConfig("asa mu must lie in (0, 1)".into()));
        }
        if !(self.mu_decay > 0.0 && self.mu_decay < 1.0) {
            return Err(Error::InvalidConfig("asa mu_decay must lie in (0, 1)".into()));
        }
        if self.repeat_limit == 0 || self.max_cycles == 0 {
            return Err(Error::InvalidConfig(
                "asa repeat_limit and max_cycles must be positive".into(),
            ));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidConfig("asa tol must be nonnegative".into()));
        }
        Ok(())
    }
}

/// `U(x) = {i : |g_i| >= |d^1|^a and min(x_i - l_i, u_i - x_i) >= |d^1|^b}`.
pub fn undecided_set(x: &[f64], grad: &[f64], d1: &[f64], set: &KnapsackSet, cfg: &AsaConfig) -> Vec<usize> {
    let nd = match cfg.undecided_norm {
        UndecidedNorm::Euclidean => norm2(d1),
        UndecidedNorm::Max => norm_inf(d1),
    };
    let (ta, tb) = (nd.powf(cfg.exp_a), nd.powf(cfg.exp_b));
    let (l, u) = (set.lower(), set.upper());
    (0..x.len())
        .filter(|&i| grad[i].abs() >= ta && (x[i] - l[i]).min(u[i] - x[i]) >= tb)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Spg,
    Rcgd,
}

/// Why a phase ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchReason {
    Converged,
    UndecidedEmpty,
    ActiveSetRepeated,
    SpgStalled,
    SpgIterationLimit,
    /// Reduced phase converged on its face, but `d^1` is not yet small.
    FaceOptimal,
    /// Reduced gradient small relative to the projected gradient.
    WrongFace,
    BoundHit,
    LinearHit,
    RcgdStalled,
    RcgdIterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseEntry {
    pub phase: Phase,
    pub iterations: usize,
    pub f_start: f64,
    pub f_end: f64,
    pub active_set_size: usize,
    pub reason: SwitchReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PhaseTrace {
    pub entries: Vec<PhaseEntry>,
}

impl PhaseTrace {
    /// Index of the first entry after which only reduced phases occur.
    pub fn rcgd_tail_start(&self) -> Option<usize> {
        let last_spg = self.entries.iter().rposition(|e| e.phase == Phase::Spg);
        let start = last_spg.map_or(0, |k| k + 1);
        (start < self.entries.len()).then_some(start)
    }

    pub fn count(&self, phase: Phase) -> usize {
        self.entries.iter().filter(|e| e.phase == phase).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AsaStatus {
    Converged,
    CycleLimit,
    /// Neither phase could make numerical progress.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct AsaResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub g: Vec<f64>,
    pub status: AsaStatus,
    pub norm_d1: f64,
    pub phases: PhaseTrace,
    pub spg_trace: Vec<SpgTraceRow>,
    pub rcgd_trace: Vec<RcgdTraceRow>,
    /// An active bound (or linear side) carries a near-zero multiplier.
    pub degenerate: bool,
    pub n_f: usize,
    pub n_g: usize,
}

fn active_count(x: &[f64], set: &KnapsackSet) -> Result<usize> {
    Ok(partition(x, set, ITERATE_ACTIVE_TOL)?.dim_active())
}

/// Least-squares multiplier of the linear row on the free variables and a
/// check for near-zero multipliers on active constraints.
fn degeneracy(x: &[f64], g: &[f64], set: &KnapsackSet) -> Result<bool> {
    let part = partition(x, set, ITERATE_ACTIVE_TOL)?;
    let a = set.coeffs();
    let (mut ag, mut aa) = (0.0, 0.0);
    for &i in part.inactive() {
        ag += a[i] * g[i];
        aa += a[i] * a[i];
    }
    let row_active = match set.rhs() {
        Rhs::Equality { .. } => true,
        Rhs::Interval { lo, hi } => {
            let ax = set.dot(x);
            let tol = set.linear_tolerance(x);
            (ax - lo).abs() <= tol || (ax - hi).abs() <= tol
        }
    };
    let lam = if row_active && aa > 0.0 { ag / aa } else { 0.0 };
    let thresh = 1e-8 * (1.0 + norm_inf(g));
    let mut degenerate = part
        .active()
        .iter()
        .any(|&i| set.lower()[i] != set.upper()[i] && (g[i] - lam * a[i]).abs() <= thresh);
    if matches!(set.rhs(), Rhs::Interval { .. }) && row_active && lam.abs() <= thresh {
        degenerate = true;
    }
    Ok(degenerate)
}

/// Minimizes `obj` over `set` from `x0` (projected first).
pub fn asa_solve<O: Objective + ?Sized>(
    obj: &mut O,
    set: &KnapsackSet,
    x0: &[f64],
    cfg: &AsaConfig,
    spg_cfg: &SpgConfig,
    rcgd_cfg: &RcgdConfig,
) -> Result<AsaResult> {
    cfg.validate()?;
    spg_cfg.validate()?;
    rcgd_cfg.validate()?;
    set.check_dim(x0.len())?;
    let rcgd_cfg = RcgdConfig {
        tol: rcgd_cfg.tol.min(cfg.tol),
        ..*rcgd_cfg
    };

    let mut st = SpgState::new(obj, set, x0, spg_cfg)?;
    let (mut n_f, mut n_g) = (st.n_f, st.n_g);
    let mut phases = PhaseTrace::default();
    let mut spg_trace = vec![st.initial_row(set)];
    let mut rcgd_trace = Vec::new();
    let mut status = AsaStatus::CycleLimit;
    // consecutive phases that ended without lowering f
    let mut idle = 0;
    let mut mu = cfg.mu;

    let mut cycles = 0;
    'cycles: while cycles < cfg.max_cycles {
        cycles += 1;
        // gradient-projection phase
        let f_start = st.f;
        let mut iters = 0;
        let mut last_active = partition(&st.x, set, ITERATE_ACTIVE_TOL)?.active().to_vec();
        let mut repeats = 0;
        let reason = loop {
            if st.norm_d1() <= cfg.tol {
                break SwitchReason::Converged;
            }
            if iters > 0 {
                let undecided_empty = undecided_set(&st.x, &st.g, &st.d1, set, cfg).is_empty();
                if undecided_empty || repeats >= cfg.repeat_limit {
                    // branch only when the face looks right
                    let rs = ReducedSpace::at_point(set, &st.x, ITERATE_ACTIVE_TOL)?;
                    let gred = norm2(&rs.reduce_gradient(&st.g)?);
                    if gred >= mu * st.norm_d1() {
                        break if undecided_empty {
                            SwitchReason::UndecidedEmpty
                        } else {
                            SwitchReason::ActiveSetRepeated
                        };
                    }
                    if undecided_empty {
                        mu *= cfg.mu_decay;
                    }
                }
            }
            if iters >= spg_cfg.max_iter {
                break SwitchReason::SpgIterationLimit;
            }
            let (f0, g0) = (st.n_f, st.n_g);
            let step = st.step(obj, set, spg_cfg);
            n_f += st.n_f - f0;
            n_g += st.n_g - g0;
            match step {
                Ok(row) => spg_trace.push(row),
                Err(Error::NotDescent(_)) | Err(Error::LineSearch { .. }) => break SwitchReason::SpgStalled,
                Err(e) => return Err(e),
            }
            iters += 1;
            let active = partition(&st.x, set, ITERATE_ACTIVE_TOL)?.active().to_vec();
            if active == last_active {
                repeats += 1;
            } else {
                repeats = 0;
                last_active = active;
            }
        };
        phases.entries.push(PhaseEntry {
            phase: Phase::Spg,
            iterations: iters,
            f_start,
            f_end: st.f,
            active_set_size: last_active.len(),
            reason,
        });
        log::debug!("asa spg phase: {iters} iterations, f {:.6e}, {reason:?}", st.f);
        if reason == SwitchReason::Converged {
            status = AsaStatus::Converged;
            break;
        }
        idle = if st.f < f_start { 0 } else { idle + 1 };
        if idle >= 3 {
            status = AsaStatus::Stalled;
            break;
        }

        // reduced phase, possibly on a sequence of shrinking faces
        let (mut x, mut f, mut g) = (st.x.clone(), st.f, st.g.clone());
        loop {
            let rs = ReducedSpace::at_point(set, &x, ITERATE_ACTIVE_TOL)?;
            let mut monitor_err = None;
            let mut monitor = |p: &RcgdProgress| -> bool {
                match scaled_projected_gradient(p.x, 1.0, p.g, set, spg_cfg.projection) {
                    Ok(d1) => {
                        let nd = norm_inf(&d1);
                        nd > cfg.tol && p.norm_gred < mu * nd
                    }
                    Err(e) => {
                        monitor_err = Some(e);
                        true
                    }
                }
            };
            let f_start = f;
            let res = rcgd_solve(obj, set, &rs, Some((f, &g)), &rcgd_cfg, Some(&mut monitor));
            if let Some(e) = monitor_err {
                return Err(e);
            }
            let (reason, done) = match res {
                Ok(r) => {
                    n_f += r.n_f;
                    n_g += r.n_g;
                    let iters = r.iterations;
                    rcgd_trace.extend(r.trace.into_iter().skip(1));
                    x = r.x;
                    f = r.f;
                    g = r.g;
                    let reason = match r.status {
                        RcgdStatus::Converged => SwitchReason::FaceOptimal,
                        RcgdStatus::BoundHit(_) => SwitchReason::BoundHit,
                        RcgdStatus::LinearHit(_) => SwitchReason::LinearHit,
                        RcgdStatus::RestartRequested => SwitchReason::WrongFace,
                        RcgdStatus::MaxIter => SwitchReason::RcgdIterationLimit,
                    };
                    (reason, iters)
                }
                Err(Error::LineSearch { .. }) | Err(Error::NotDescent(_)) => (SwitchReason::RcgdStalled, 0),
                Err(e) => return Err(e),
            };
            let d1 = scaled_projected_gradient(&x, 1.0, &g, set, spg_cfg.projection)?;
            let converged = norm_inf(&d1) <= cfg.tol;
            phases.entries.push(PhaseEntry {
                phase: Phase::Rcgd,
                iterations: done,
                f_start,
                f_end: f,
                active_set_size: active_count(&x, set)?,
                reason: if converged { SwitchReason::Converged } else { reason },
            });
            log::debug!("asa rcgd phase: {done} iterations, f {f:.6e}, {reason:?}");
            if converged {
                st = SpgState::with_values(x, f, g, set, spg_cfg)?;
                status = AsaStatus::Converged;
                break 'cycles;
            }
            match reason {
                SwitchReason::BoundHit | SwitchReason::LinearHit => continue,
                _ => {
                    idle = if f < f_start { 0 } else { idle + 1 };
                    st = SpgState::with_values(x, f, g, set, spg_cfg)?;
                    if idle >= 3 {
                        status = AsaStatus::Stalled;
                        break 'cycles;
                    }
                    break;
                }
            }
        }
    }

    let degenerate = degeneracy(&st.x, &st.g, set)?;
    Ok(AsaResult {
        norm_d1: st.norm_d1(),
        x: st.x,
        f: st.f,
        g: st.g,
        status,
        phases,
        spg_trace,
        rcgd_trace,
        degenerate,
        n_f,
        n_g,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    Interior,
    Lower,
    Upper,
}

#[derive(Debug, Clone)]
pub struct ThreeSolveResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub which: Face,
    /// Number of driver runs performed (1 or 3, or 2 when a face is empty).
    pub solves: usize,
    pub runs: Vec<(Face, AsaResult)>,
}

/// Interval problems solved as a box problem and, if its solution violates
/// the linear row, as two equality problems at `b_l` and `b_u`.
pub fn solve_interval_by_three<O: Objective + ?Sized>(
    obj: &mut O,
    set: &KnapsackSet,
    x0: &[f64],
    cfg: &AsaConfig,
    spg_cfg: &SpgConfig,
    rcgd_cfg: &RcgdConfig,
) -> Result<ThreeSolveResult> {
    let (lo, hi) = match set.rhs() {
        Rhs::Interval { lo, hi } => (lo, hi),
        Rhs::Equality { .. } => return Err(Error::WrongRhs("three-solve needs an interval constraint")),
    };
    let relaxed = set.box_relaxation();
    let first = asa_solve(obj, &relaxed, x0, cfg, spg_cfg, rcgd_cfg)?;
    if set.linear_violation(&first.x) <= set.linear_tolerance(&first.x) {
        return Ok(ThreeSolveResult {
            x: first.x.clone(),
            f: first.f,
            which: Face::Interior,
            solves: 1,
            runs: vec![(Face::Interior, first)],
        });
    }
    let mut runs = vec![(Face::Interior, first)];
    for (face, b) in [(Face::Lower, lo), (Face::Upper, hi)] {
        let eq = match set.with_rhs(Rhs::Equality { b }) {
            Ok(s) => s,
            Err(Error::InfeasibleSet) => continue,
            Err(e) => return Err(e),
        };
        // start from the face projection of the box solution
        let start = project(&runs[0].1.x, &eq, spg_cfg.projection)?.z;
        runs.push((face, asa_solve(obj, &eq, &start, cfg, spg_cfg, rcgd_cfg)?));
    }
    // strict comparison keeps the lower face on ties
    let best = runs[1..]
        .iter()
        .fold(None::<&(Face, AsaResult)>, |acc, r| match acc {
            Some(b) if b.1.f <= r.1.f => Some(b),
            _ => Some(r),
        })
        .ok_or(Error::InfeasibleSet)?;
    Ok(ThreeSolveResult {
        x: best.1.x.clone(),
        f: best.1.f,
        which: best.0,
        solves: runs.len(),
        runs,
    })
}

/// Multiplier estimate `a_F^T g_F / a_F^T a_F` over the free set of `x`.
pub fn free_multiplier(x: &[f64], g: &[f64], set: &KnapsackSet) -> Result<f64> {
    let part = partition(x, set, ITERATE_ACTIVE_TOL)?;
    let a = part.shrink(set.coeffs())?;
    let gf = part.shrink(g)?;
    let aa = dot(&a, &a);
    Ok(if aa > 0.0 { dot(&a, &gf) / aa } else { 0.0 })
}
