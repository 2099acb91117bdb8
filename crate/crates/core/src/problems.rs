//! Objective interface and test problems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::set::{KnapsackSet, Rhs};

/// A smooth objective `f : R^n -> R`.
///
/// Implementations must be deterministic: the same `x` gives bitwise the
/// same value and gradient.
pub trait Objective {
    fn n(&self) -> usize;

    fn eval_f(&mut self, x: &[f64]) -> f64;

    /// Writes the gradient at `x` into `g`.
    fn eval_grad(&mut self, x: &[f64], g: &mut [f64]);

    /// Value and gradient together; override when sharing work pays off.
    fn eval_f_and_grad(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        self.eval_grad(x, g);
        self.eval_f(x)
    }
}

impl<T: Objective + ?Sized> Objective for &mut T {
    fn n(&self) -> usize {
        (**self).n()
    }

    fn eval_f(&mut self, x: &[f64]) -> f64 {
        (**self).eval_f(x)
    }

    fn eval_grad(&mut self, x: &[f64], g: &mut [f64]) {
        (**self).eval_grad(x, g)
    }

    fn eval_f_and_grad(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        (**self).eval_f_and_grad(x, g)
    }
}

/// Wrapper counting value and gradient evaluations.
///
/// A combined call counts once towards each counter.
#[derive(Debug, Clone)]
pub struct Counted<O> {
    pub inner: O,
    pub n_f: usize,
    pub n_g: usize,
}

impl<O> Counted<O> {
    pub fn new(inner: O) -> Self {
        Self { inner, n_f: 0, n_g: 0 }
    }
}

impl<O: Objective> Objective for Counted<O> {
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn eval_f(&mut self, x: &[f64]) -> f64 {
        self.n_f += 1;
        self.inner.eval_f(x)
    }

    fn eval_grad(&mut self, x: &[f64], g: &mut [f64]) {
        self.n_g += 1;
        self.inner.eval_grad(x, g)
    }

    fn eval_f_and_grad(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        self.n_f += 1;
        self.n_g += 1;
        self.inner.eval_f_and_grad(x, g)
    }
}

/// Largest relative discrepancy between `eval_grad` and central differences
/// with steps `h_i = rel_step (1 + |x_i|)`.
pub fn gradient_check<O: Objective + ?Sized>(obj: &mut O, x: &[f64], rel_step: f64) -> f64 {
    let n = x.len();
    let mut g = vec![0.0; n];
    obj.eval_grad(x, &mut g);
    let gscale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut xp = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..n {
        let h = rel_step * (1.0 + x[i].abs());
        xp[i] = x[i] + h;
        let fp = obj.eval_f(&xp);
        xp[i] = x[i] - h;
        let fm = obj.eval_f(&xp);
        xp[i] = x[i];
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((fd - g[i]).abs() / gscale);
    }
    worst
}

/// `f(x) = 0.5 |x - y|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionObjective {
    pub y: Vec<f64>,
}

pub fn projection_problem(y: &[f64]) -> ProjectionObjective {
    ProjectionObjective { y: y.to_vec() }
}

impl Objective for ProjectionObjective {
    fn n(&self) -> usize {
        self.y.len()
    }

    fn eval_f(&mut self, x: &[f64]) -> f64 {
        0.5 * x.iter().zip(&self.y).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
    }

    fn eval_grad(&mut self, x: &[f64], g: &mut [f64]) {
        for i in 0..x.len() {
            g[i] = x[i] - self.y[i];
        }
    }
}

/// Separable nonconvex test function `sum_i (x_i^2 - 1)^2 / 4 + c_i x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleWell {
    pub c: Vec<f64>,
}

impl Objective for DoubleWell {
    fn n(&self) -> usize {
        self.c.len()
    }

    fn eval_f(&mut self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.c)
            .map(|(x, c)| 0.25 * (x * x - 1.0).powi(2) + c * x)
            .sum()
    }

    fn eval_grad(&mut self, x: &[f64], g: &mut [f64]) {
        for i in 0..x.len() {
            g[i] = x[i] * (x[i] * x[i] - 1.0) + self.c[i];
        }
    }
}

/// Hessian storage of a quadratic program.
#[derive(Debug, Clone, PartialEq)]
pub enum Hessian {
    /// Row-major `n x n` symmetric matrix.
    Dense {
        n: usize,
        data: Vec<f64>,
    },
    Diagonal(Vec<f64>),
}

impl Hessian {
    pub fn n(&self) -> usize {
        match self {
            Hessian::Dense { n, .. } => *n,
            Hessian::Diagonal(d) => d.len(),
        }
    }

    /// `out = H x`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Hessian::Dense { n, data } => {
                for i in 0..*n {
                    out[i] = crate::dot(&data[i * n..(i + 1) * n], x);
                }
            }
            Hessian::Diagonal(d) => {
                for i in 0..d.len() {
                    out[i] = d[i] * x[i];
                }
            }
        }
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        match self {
            Hessian::Dense { data, .. } => data.clone(),
            Hessian::Diagonal(d) => {
                let n = d.len();
                let mut m = vec![0.0; n * n];
                for i in 0..n {
                    m[i * n + i] = d[i];
                }
                m
            }
        }
    }
}

/// `min 0.5 x^T H x + c^T x` over a knapsack set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawQp", into = "RawQp")]
pub struct QpProblem {
    pub h: Hessian,
    pub c: Vec<f64>,
    pub set: KnapsackSet,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianKind {
    DenseSpd,
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    Equality,
    Interval,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawHessian {
    Rows(Vec<Vec<f64>>),
    Diagonal(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
struct RawQp {
    kind: HessianKind,
    n: usize,
    h: RawHessian,
    c: Vec<f64>,
    set: KnapsackSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

impl TryFrom<RawQp> for QpProblem {
    type Error = Error;

    fn try_from(raw: RawQp) -> Result<Self> {
        let n = raw.n;
        let h = match (raw.kind, raw.h) {
            (HessianKind::DenseSpd, RawHessian::Rows(rows)) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::InvalidConfig(format!(
                        "field `h`: expected {n} rows of length {n}"
                    )));
                }
                let data: Vec<f64> = rows.into_iter().flatten().collect();
                for i in 0..n {
                    for j in 0..i {
                        if data[i * n + j] != data[j * n + i] {
                            return Err(Error::InvalidConfig(format!("field `h`: not symmetric at ({i}, {j})")));
                        }
                    }
                }
                Hessian::Dense { n, data }
            }
            (HessianKind::Diagonal, RawHessian::Diagonal(d)) => {
                if d.len() != n {
                    return Err(Error::InvalidConfig(format!(
                        "field `h`: expected {n} diagonal entries"
                    )));
                }
                if d.iter().any(|v| !(*v >= 0.0)) {
                    return Err(Error::InvalidConfig(
                        "field `h`: diagonal entries must be nonnegative".into(),
                    ));
                }
                Hessian::Diagonal(d)
            }
            (HessianKind::DenseSpd, _) => {
                return Err(Error::InvalidConfig("field `h`: dense_spd needs a list of rows".into()))
            }
            (HessianKind::Diagonal, _) => {
                return Err(Error::InvalidConfig("field `h`: diagonal needs a flat list".into()))
            }
        };
        if raw.c.len() != n {
            return Err(Error::InvalidConfig(format!(
                "field `c`: expected length {n}, found {}",
                raw.c.len()
            )));
        }
        if raw.set.n() != n {
            return Err(Error::InvalidConfig(format!(
                "field `set`: expected dimension {n}, found {}",
                raw.set.n()
            )));
        }
        if raw.c.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("field `c`: non-finite entry".into()));
        }
        Ok(QpProblem {
            h,
            c: raw.c,
            set: raw.set,
            seed: raw.seed,
        })
    }
}

impl From<QpProblem> for RawQp {
    fn from(p: QpProblem) -> Self {
        let n = p.c.len();
        let (kind, h) = match p.h {
            Hessian::Dense { n, data } => (
                HessianKind::DenseSpd,
                RawHessian::Rows(data.chunks(n).map(|r| r.to_vec()).collect()),
            ),
            Hessian::Diagonal(d) => (HessianKind::Diagonal, RawHessian::Diagonal(d)),
        };
        RawQp {
            kind,
            n,
            h,
            c: p.c,
            set: p.set,
            seed: p.seed,
        }
    }
}

impl QpProblem {
    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn kind(&self) -> HessianKind {
        match self.h {
            Hessian::Dense { .. } => HessianKind::DenseSpd,
            Hessian::Diagonal(_) => HessianKind::Diagonal,
        }
    }
}

impl Objective for QpProblem {
    fn n(&self) -> usize {
        self.c.len()
    }

    fn eval_f(&mut self, x: &[f64]) -> f64 {
        let mut hx = vec![0.0; x.len()];
        self.h.apply(x, &mut hx);
        (0..x.len()).map(|i| x[i] * (0.5 * hx[i] + self.c[i])).sum()
    }

    fn eval_grad(&mut self, x: &[f64], g: &mut [f64]) {
        self.h.apply(x, g);
        for i in 0..x.len() {
            g[i] += self.c[i];
        }
    }

    fn eval_f_and_grad(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        self.h.apply(x, g);
        let mut f = 0.0;
        for i in 0..x.len() {
            f += x[i] * (0.5 * g[i] + self.c[i]);
            g[i] += self.c[i];
        }
        f
    }
}

/// Random box, coefficient vector and feasible right-hand side.
///
/// Bounds `l ~ U(-1, 0)`, `u = l + U(0.1, 2)`; coefficients `U(-1, 1)` with
/// roughly one in ten set to zero; right-hand sides drawn strictly inside the
/// attainable range of `a^T x`.
pub fn random_set(rng: &mut ChaCha8Rng, n: usize, set_kind: SetKind) -> KnapsackSet {
    let l: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..0.0)).collect();
    let u: Vec<f64> = l.iter().map(|l| l + rng.gen_range(0.1..2.0)).collect();
    let mut a: Vec<f64> = (0..n)
        .map(|_| {
            if rng.gen_bool(0.1) {
                0.0
            } else {
                rng.gen_range(-1.0..1.0)
            }
        })
        .collect();
    if a.iter().all(|v| *v == 0.0) {
        a[0] = 1.0;
    }
    let probe = KnapsackSet::equality(l.clone(), u.clone(), a.clone(), 0.0).expect("valid box");
    let (lo, hi) = probe.attainable_range();
    let rhs = match set_kind {
        SetKind::Equality => Rhs::Equality {
            b: lo + rng.gen_range(0.05..0.95) * (hi - lo),
        },
        SetKind::Interval => {
            let p = lo + rng.gen_range(0.05..0.95) * (hi - lo);
            let q = lo + rng.gen_range(0.05..0.95) * (hi - lo);
            Rhs::Interval {
                lo: p.min(q),
                hi: p.max(q),
            }
        }
    };
    KnapsackSet::new(l, u, a, rhs).expect("feasible by construction")
}

/// Reproducible random strictly convex QP.
///
/// Dense Hessians are `B^T B + n eps I` with `B` a `2n x n` matrix of
/// `U(-1, 1)` entries; diagonal Hessians have entries `U(0.5, 5)`. The
/// linear term is `U(-2, 2)`. Uses ChaCha8 seeded with `seed`.
pub fn make_random_qp(n: usize, seed: u64, kind: HessianKind, set_kind: SetKind) -> QpProblem {
    assert!(n >= 1, "dimension must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = match kind {
        HessianKind::DenseSpd => {
            let m = 2 * n;
            let b: Vec<f64> = (0..m * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut data = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..=i {
                    let s: f64 = (0..m).map(|k| b[k * n + i] * b[k * n + j]).sum();
                    data[i * n + j] = s;
                    data[j * n + i] = s;
                }
                data[i * n + i] += n as f64 * f64::EPSILON;
            }
            let diag: Vec<f64> = (0..n).map(|i| data[i * n + i]).collect();
            log::debug!(
                "random qp n={n} seed={seed}: diagonal spread [{:.3e}, {:.3e}]",
                diag.iter().cloned().fold(f64::INFINITY, f64::min),
                diag.iter().cloned().fold(0.0, f64::max)
            );
            Hessian::Dense { n, data }
        }
        HessianKind::Diagonal => Hessian::Diagonal((0..n).map(|_| rng.gen_range(0.5..5.0)).collect()),
    };
    let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let set = random_set(&mut rng, n, set_kind);
    QpProblem {
        h,
        c,
        set,
        seed: Some(seed),
    }
}

/// Projection instance from the usual uncorrelated continuous knapsack
/// family: `a_i, y_i ~ U(10, 25)`, `l_i, u_i` a sorted pair from
/// `U(1, 15)`, `b ~ U(a^T l, a^T u)`.
pub fn uncorrelated_instance(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, KnapsackSet) {
    let mut l = vec![0.0; n];
    let mut u = vec![0.0; n];
    for i in 0..n {
        let p: f64 = rng.gen_range(1.0..15.0);
        let q: f64 = rng.gen_range(1.0..15.0);
        l[i] = p.min(q);
        u[i] = p.max(q);
    }
    let a: Vec<f64> = (0..n).map(|_| rng.gen_range(10.0..25.0)).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.gen_range(10.0..25.0)).collect();
    let lo: f64 = a.iter().zip(&l).map(|(a, l)| a * l).sum();
    let hi: f64 = a.iter().zip(&u).map(|(a, u)| a * u).sum();
    let b = lo + rng.gen_range(0.0..1.0) * (hi - lo);
    let set = KnapsackSet::equality(l, u, a, b).expect("feasible by construction");
    (y, set)
}

/// Point `y ~ U(-3, 3)` with a [`random_set`] (mixed-sign coefficients).
pub fn mixed_instance(rng: &mut ChaCha8Rng, n: usize, set_kind: SetKind) -> (Vec<f64>, KnapsackSet) {
    let set = random_set(rng, n, set_kind);
    let y = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    (y, set)
}

/// Objectives appearing in [`benchmark_suite`].
#[derive(Debug, Clone)]
pub enum SuiteObjective {
    Qp(QpProblem),
    Distance(ProjectionObjective),
    DoubleWell(DoubleWell),
}

impl Objective for SuiteObjective {
    fn n(&self) -> usize {
        match self {
            SuiteObjective::Qp(p) => Objective::n(p),
            SuiteObjective::Distance(p) => p.n(),
            SuiteObjective::DoubleWell(p) => p.n(),
        }
    }

    fn eval_f(&mut self, x: &[f64]) -> f64 {
        match self {
            SuiteObjective::Qp(p) => p.eval_f(x),
            SuiteObjective::Distance(p) => p.eval_f(x),
            SuiteObjective::DoubleWell(p) => p.eval_f(x),
        }
    }

    fn eval_grad(&mut self, x: &[f64], g: &mut [f64]) {
        match self {
            SuiteObjective::Qp(p) => p.eval_grad(x, g),
            SuiteObjective::Distance(p) => p.eval_grad(x, g),
            SuiteObjective::DoubleWell(p) => p.eval_grad(x, g),
        }
    }

    fn eval_f_and_grad(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        match self {
            SuiteObjective::Qp(p) => p.eval_f_and_grad(x, g),
            SuiteObjective::Distance(p) => p.eval_f_and_grad(x, g),
            SuiteObjective::DoubleWell(p) => p.eval_f_and_grad(x, g),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteCase {
    pub name: String,
    pub objective: SuiteObjective,
    pub set: KnapsackSet,
    /// Box midpoint; solvers project it first.
    pub x0: Vec<f64>,
}

fn suite_case(name: String, objective: SuiteObjective, set: KnapsackSet) -> SuiteCase {
    let x0 = set
        .lower()
        .iter()
        .zip(set.upper())
        .map(|(l, u)| 0.5 * (l + u))
        .collect();
    SuiteCase {
        name,
        objective,
        set,
        x0,
    }
}

/// Fixed collection of solver test cases: random QPs (dense and diagonal),
/// distance problems and a nonconvex separable function, each with an
/// equality and an interval row. Fully determined by the built-in seeds.
pub fn benchmark_suite() -> Vec<SuiteCase> {
    let mut cases = Vec::new();
    for set_kind in [SetKind::Equality, SetKind::Interval] {
        let tag = match set_kind {
            SetKind::Equality => "eq",
            SetKind::Interval => "iv",
        };
        for (n, seed) in [(10, 1), (50, 2), (200, 3)] {
            let p = make_random_qp(n, seed, HessianKind::DenseSpd, set_kind);
            let set = p.set.clone();
            cases.push(suite_case(format!("qp-dense-{n}-{tag}"), SuiteObjective::Qp(p), set));
        }
        for (n, seed) in [(100, 4), (1000, 5), (10_000, 6)] {
            let p = make_random_qp(n, seed, HessianKind::Diagonal, set_kind);
            let set = p.set.clone();
            cases.push(suite_case(format!("qp-diag-{n}-{tag}"), SuiteObjective::Qp(p), set));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (y, set) = mixed_instance(&mut rng, 1000, set_kind);
        cases.push(suite_case(
            format!("distance-1000-{tag}"),
            SuiteObjective::Distance(projection_problem(&y)),
            set,
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let set = random_set(&mut rng, 500, set_kind);
        let c = (0..500).map(|_| rng.gen_range(-0.3..0.3)).collect();
        cases.push(suite_case(
            format!("double-well-500-{tag}"),
            SuiteObjective::DoubleWell(DoubleWell { c }),
            set,
        ));
    }
    cases
}
