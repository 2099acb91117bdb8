//! Continuous knapsack sets and index-set utilities.
//!
//! A knapsack set is a box `l <= x <= u` intersected with a single linear
//! constraint `a^T x = b` (equality) or `b_l <= a^T x <= b_u` (interval).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `max(lo, min(v, hi))`, the componentwise clamp used throughout.
#[inline(always)]
pub fn mid(lo: f64, v: f64, hi: f64) -> f64 {
    lo.max(v.min(hi))
}

/// True median of three values, independent of argument order.
#[inline(always)]
pub fn median3(a: f64, b: f64, c: f64) -> f64 {
    a.min(b).max(a.max(b).min(c))
}

/// Right-hand side of the linear constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rhs {
    Equality {
        #[serde(rename = "eq")]
        b: f64,
    },
    Interval {
        #[serde(rename = "lo")]
        lo: f64,
        #[serde(rename = "hi")]
        hi: f64,
    },
}

/// Box bounds plus one linear equality or bilateral inequality constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSet", into = "RawSet")]
pub struct KnapsackSet {
    l: Vec<f64>,
    u: Vec<f64>,
    a: Vec<f64>,
    rhs: Rhs,
}

#[derive(Serialize, Deserialize)]
struct RawSet {
    n: usize,
    l: Vec<f64>,
    u: Vec<f64>,
    a: Vec<f64>,
    rhs: Rhs,
}

impl TryFrom<RawSet> for KnapsackSet {
    type Error = Error;

    fn try_from(raw: RawSet) -> Result<Self> {
        for (name, v) in [("l", &raw.l), ("u", &raw.u), ("a", &raw.a)] {
            if v.len() != raw.n {
                return Err(Error::InvalidSet(format!(
                    "field `{name}` has length {} but n = {}",
                    v.len(),
                    raw.n
                )));
            }
        }
        KnapsackSet::new(raw.l, raw.u, raw.a, raw.rhs)
    }
}

impl From<KnapsackSet> for RawSet {
    fn from(s: KnapsackSet) -> Self {
        RawSet {
            n: s.l.len(),
            l: s.l,
            u: s.u,
            a: s.a,
            rhs: s.rhs,
        }
    }
}

impl KnapsackSet {
    pub fn new(l: Vec<f64>, u: Vec<f64>, a: Vec<f64>, rhs: Rhs) -> Result<Self> {
        let n = l.len();
        if n == 0 {
            return Err(Error::InvalidSet("dimension must be at least 1".into()));
        }
        if u.len() != n {
            return Err(Error::InvalidSet(format!(
                "field `u` has length {} but n = {n}",
                u.len()
            )));
        }
        if a.len() != n {
            return Err(Error::InvalidSet(format!(
                "field `a` has length {} but n = {n}",
                a.len()
            )));
        }
        for i in 0..n {
            if !l[i].is_finite() {
                return Err(Error::InvalidSet(format!("field `l[{i}]` is not finite")));
            }
            if !u[i].is_finite() {
                return Err(Error::InvalidSet(format!("field `u[{i}]` is not finite")));
            }
            if !a[i].is_finite() {
                return Err(Error::InvalidSet(format!("field `a[{i}]` is not finite")));
            }
            if l[i] > u[i] {
                return Err(Error::InvalidSet(format!(
                    "field `l[{i}]` = {} exceeds `u[{i}]` = {}",
                    l[i], u[i]
                )));
            }
        }
        match rhs {
            Rhs::Equality { b } if !b.is_finite() => {
                return Err(Error::InvalidSet("field `rhs.eq` is not finite".into()))
            }
            Rhs::Interval { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::InvalidSet("field `rhs.lo`/`rhs.hi` is not finite".into()));
                }
                if lo > hi {
                    return Err(Error::InvalidSet(format!(
                        "field `rhs.lo` = {lo} exceeds `rhs.hi` = {hi}"
                    )));
                }
            }
            _ => {}
        }
        Ok(Self { l, u, a, rhs })
    }

    pub fn equality(l: Vec<f64>, u: Vec<f64>, a: Vec<f64>, b: f64) -> Result<Self> {
        Self::new(l, u, a, Rhs::Equality { b })
    }

    pub fn interval(l: Vec<f64>, u: Vec<f64>, a: Vec<f64>, lo: f64, hi: f64) -> Result<Self> {
        Self::new(l, u, a, Rhs::Interval { lo, hi })
    }

    pub fn n(&self) -> usize {
        self.l.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.l
    }

    pub fn upper(&self) -> &[f64] {
        &self.u
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.a
    }

    pub fn rhs(&self) -> Rhs {
        self.rhs
    }

    pub fn is_equality(&self) -> bool {
        matches!(self.rhs, Rhs::Equality { .. })
    }

    /// Same box and coefficients with a different right-hand side.
    pub fn with_rhs(&self, rhs: Rhs) -> Result<Self> {
        Self::new(self.l.clone(), self.u.clone(), self.a.clone(), rhs)
    }

    /// Interval set whose linear row can never bind: the box alone.
    pub fn box_relaxation(&self) -> Self {
        let (lo, hi) = self.attainable_range();
        let pad = 1.0 + lo.abs() + hi.abs();
        Self {
            l: self.l.clone(),
            u: self.u.clone(),
            a: self.a.clone(),
            rhs: Rhs::Interval {
                lo: lo - pad,
                hi: hi + pad,
            },
        }
    }

    /// `(min, max)` of `a^T x` over the box.
    pub fn attainable_range(&self) -> (f64, f64) {
        let mut lo = 0.0;
        let mut hi = 0.0;
        for i in 0..self.n() {
            let a = self.a[i];
            let (pos, neg) = (a.max(0.0), a.min(0.0));
            lo += self.u[i] * neg + self.l[i] * pos;
            hi += self.u[i] * pos + self.l[i] * neg;
        }
        (lo, hi)
    }

    pub fn is_feasible(&self) -> bool {
        match self.rhs {
            Rhs::Equality { .. } => feasibility_equality(self),
            Rhs::Interval { .. } => feasibility_interval(self),
        }
    }

    /// `a^T x`.
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.a.iter().zip(x).map(|(a, x)| a * x).sum()
    }

    /// Distance of `a^T x` from the admissible right-hand side (0 when satisfied).
    pub fn linear_violation(&self, x: &[f64]) -> f64 {
        let ax = self.dot(x);
        match self.rhs {
            Rhs::Equality { b } => (ax - b).abs(),
            Rhs::Interval { lo, hi } => (lo - ax).max(ax - hi).max(0.0),
        }
    }

    /// Linear-constraint tolerance `64 eps (|b| + |a|_inf n max|x_i|)`.
    pub fn linear_tolerance(&self, x: &[f64]) -> f64 {
        let b = match self.rhs {
            Rhs::Equality { b } => b.abs(),
            Rhs::Interval { lo, hi } => lo.abs().max(hi.abs()),
        };
        let a_inf = self.a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let x_inf = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        64.0 * f64::EPSILON * (b + a_inf * self.n() as f64 * x_inf)
    }

    /// [`Self::linear_tolerance`] for a point computed from `y` (for example
    /// a projection of `y`): components are formed as `y_i - lambda a_i`, so
    /// their rounding error scales with `|y|` as well as `|x|`.
    pub fn linear_tolerance_from(&self, x: &[f64], y: &[f64]) -> f64 {
        let y_inf = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let a_inf = self.a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.linear_tolerance(x) + 64.0 * f64::EPSILON * a_inf * self.n() as f64 * y_inf
    }

    /// Largest distance outside the box (0 when inside).
    pub fn box_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n() {
            worst = worst.max(self.l[i] - x[i]).max(x[i] - self.u[i]);
        }
        worst
    }

    /// Componentwise clamp of `x` into the box.
    pub fn clamp_to_box(&self, x: &mut [f64]) {
        for i in 0..self.n() {
            x[i] = mid(self.l[i], x[i], self.u[i]);
        }
    }

    pub(crate) fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                found: len,
            });
        }
        Ok(())
    }
}

/// Non-emptiness of an equality set: `b` inside the attainable range of `a^T x`.
pub fn feasibility_equality(set: &KnapsackSet) -> bool {
    match set.rhs {
        Rhs::Equality { b } => {
            let (lo, hi) = set.attainable_range();
            lo <= b && b <= hi
        }
        Rhs::Interval { .. } => false,
    }
}

/// Non-emptiness of an interval set: `[b_l, b_u]` overlaps the attainable range.
pub fn feasibility_interval(set: &KnapsackSet) -> bool {
    match set.rhs {
        Rhs::Interval { lo, hi } => {
            let (min, max) = set.attainable_range();
            lo <= max && min <= hi
        }
        Rhs::Equality { .. } => false,
    }
}

/// Active-set tolerance for a solver iterate: `1e-12 max(1, |l_i|, |u_i|)` per index.
pub const ITERATE_ACTIVE_TOL: f64 = 1e-12;

/// Partition of `0..n` into bound-active and inactive (free) indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexPartition {
    n: usize,
    active: Vec<usize>,
    inactive: Vec<usize>,
}

impl IndexPartition {
    /// Builds a partition from an explicit active list; the rest is inactive.
    pub fn from_active(n: usize, active: &[usize]) -> Result<Self> {
        let mut mask = vec![false; n];
        for &i in active {
            if i >= n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: i + 1,
                });
            }
            mask[i] = true;
        }
        Ok(Self::from_mask(&mask))
    }

    fn from_mask(mask: &[bool]) -> Self {
        let mut active = Vec::new();
        let mut inactive = Vec::new();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                active.push(i);
            } else {
                inactive.push(i);
            }
        }
        Self {
            n: mask.len(),
            active,
            inactive,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn inactive(&self) -> &[usize] {
        &self.inactive
    }

    pub fn dim_active(&self) -> usize {
        self.active.len()
    }

    /// Entries of `x` at inactive indices.
    pub fn shrink(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: x.len(),
            });
        }
        Ok(self.inactive.iter().map(|&i| x[i]).collect())
    }

    /// Scatters `v` into the inactive slots of `fill`.
    pub fn expand(&self, v: &[f64], fill: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.inactive.len() {
            return Err(Error::DimensionMismatch {
                expected: self.inactive.len(),
                found: v.len(),
            });
        }
        if fill.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: fill.len(),
            });
        }
        let mut out = fill.to_vec();
        for (k, &i) in self.inactive.iter().enumerate() {
            out[i] = v[k];
        }
        Ok(out)
    }
}

/// Splits indices of `x` into active (on a bound within `tol_scale max(1,|l|,|u|)`)
/// and inactive. Fixed variables (`l_i == u_i`) are always active.
///
/// Use `tol_scale = 0` for projection outputs and [`ITERATE_ACTIVE_TOL`] for
/// line-search iterates.
pub fn partition(x: &[f64], set: &KnapsackSet, tol_scale: f64) -> Result<IndexPartition> {
    set.check_dim(x.len())?;
    let (l, u) = (set.lower(), set.upper());
    let mut mask = vec![false; x.len()];
    for i in 0..x.len() {
        let tol = tol_scale * 1f64.max(l[i].abs()).max(u[i].abs());
        if !x[i].is_finite() || x[i] < l[i] - tol || x[i] > u[i] + tol {
            return Err(Error::InfeasiblePoint {
                index: i,
                value: x[i],
                lower: l[i],
                upper: u[i],
            });
        }
        mask[i] = l[i] == u[i] || (x[i] - l[i]).abs() <= tol || (u[i] - x[i]).abs() <= tol;
    }
    Ok(IndexPartition::from_mask(&mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_box(n: usize, a: Vec<f64>, rhs: Rhs) -> KnapsackSet {
        KnapsackSet::new(vec![0.0; n], vec![1.0; n], a, rhs).unwrap()
    }

    #[test]
    fn equality_feasibility_examples() {
        assert!(feasibility_equality(&unit_box(
            2,
            vec![1.0, 1.0],
            Rhs::Equality { b: 2.0 }
        )));
        assert!(!feasibility_equality(&unit_box(
            2,
            vec![1.0, 1.0],
            Rhs::Equality { b: 2.5 }
        )));
        assert!(feasibility_equality(&unit_box(
            2,
            vec![1.0, -1.0],
            Rhs::Equality { b: -1.0 }
        )));
    }

    #[test]
    fn interval_feasibility_examples() {
        let s = unit_box(2, vec![1.0, 1.0], Rhs::Interval { lo: 0.5, hi: 1.5 });
        assert!(feasibility_interval(&s));
        let s = unit_box(2, vec![1.0, 1.0], Rhs::Interval { lo: 3.0, hi: 4.0 });
        assert!(!feasibility_interval(&s));
        let s = unit_box(2, vec![2.0, -1.0], Rhs::Interval { lo: -1.0, hi: -0.5 });
        assert!(feasibility_interval(&s));
        // overlap test accepts a range the stricter sufficient condition rejects
        let s = unit_box(2, vec![1.0, 1.0], Rhs::Interval { lo: -5.0, hi: 0.5 });
        assert!(feasibility_interval(&s));
    }

    #[test]
    fn partition_examples() {
        let s = unit_box(3, vec![1.0; 3], Rhs::Equality { b: 1.0 });
        let p = partition(&[0.0, 0.5, 1.0], &s, 0.0).unwrap();
        assert_eq!(p.active(), &[0, 2]);
        assert_eq!(p.inactive(), &[1]);

        let s = unit_box(2, vec![1.0; 2], Rhs::Equality { b: 1.0 });
        let p = partition(&[0.5, 0.5], &s, 0.0).unwrap();
        assert!(p.active().is_empty());

        let fixed = KnapsackSet::equality(vec![0.3; 4], vec![0.3; 4], vec![1.0; 4], 1.2).unwrap();
        let p = partition(&[0.3; 4], &fixed, 0.0).unwrap();
        assert_eq!(p.dim_active(), 4);
    }

    #[test]
    fn partition_rejects_out_of_box() {
        let s = unit_box(2, vec![1.0; 2], Rhs::Equality { b: 1.0 });
        assert!(matches!(
            partition(&[1.5, 0.0], &s, ITERATE_ACTIVE_TOL),
            Err(Error::InfeasiblePoint { index: 0, .. })
        ));
        // rounding noise inside the iterate tolerance counts as active
        let p = partition(&[1.0 + 1e-14, 0.2], &s, ITERATE_ACTIVE_TOL).unwrap();
        assert_eq!(p.active(), &[0]);
    }

    #[test]
    fn shrink_expand_examples() {
        let p = IndexPartition::from_active(3, &[1]).unwrap();
        assert_eq!(p.shrink(&[7.0, 8.0, 9.0]).unwrap(), vec![7.0, 9.0]);
        assert_eq!(p.expand(&[7.0, 9.0], &[0.0, 8.0, 0.0]).unwrap(), vec![7.0, 8.0, 9.0]);
        assert!(p.shrink(&[1.0]).is_err());
        assert!(p.expand(&[1.0], &[0.0; 3]).is_err());
    }

    #[test]
    fn json_layout() {
        let s = unit_box(2, vec![1.0, -1.0], Rhs::Interval { lo: -0.5, hi: 0.5 });
        let v: serde_json::Value = serde_json::to_value(&s).unwrap();
        assert_eq!(v["n"], 2);
        assert_eq!(v["rhs"]["lo"], -0.5);
        let back: KnapsackSet = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);

        let e: KnapsackSet = serde_json::from_str(r#"{"n":1,"l":[0],"u":[1],"a":[2],"rhs":{"eq":1}}"#).unwrap();
        assert_eq!(e.rhs(), Rhs::Equality { b: 1.0 });

        let err = serde_json::from_str::<KnapsackSet>(r#"{"n":2,"l":[0],"u":[1,1],"a":[2,2],"rhs":{"eq":1}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("`l`"), "{err}");
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(KnapsackSet::equality(vec![1.0], vec![0.0], vec![1.0], 0.5).is_err());
        assert!(KnapsackSet::equality(vec![0.0], vec![f64::INFINITY], vec![1.0], 0.5).is_err());
        assert!(KnapsackSet::interval(vec![0.0], vec![1.0], vec![1.0], 0.6, 0.5).is_err());
    }

    fn vertex_range(a: &[f64], l: &[f64], u: &[f64]) -> (f64, f64) {
        let n = a.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for mask in 0u32..(1 << n) {
            let v: f64 = (0..n)
                .map(|i| a[i] * if mask >> i & 1 == 1 { u[i] } else { l[i] })
                .sum();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    proptest! {
        #[test]
        fn feasibility_matches_vertex_enumeration(
            data in (1usize..=10).prop_flat_map(|n| (
                proptest::collection::vec(-3.0f64..3.0, n),
                proptest::collection::vec(-2.0f64..0.0, n),
                proptest::collection::vec(0.0f64..2.0, n),
            )),
            b in -15.0f64..15.0,
        ) {
            let (a, l, w) = data;
            let u: Vec<f64> = l.iter().zip(&w).map(|(l, w)| l + w).collect();
            let (lo, hi) = vertex_range(&a, &l, &u);
            let s = KnapsackSet::equality(l, u, a, b).unwrap();
            let (rlo, rhi) = s.attainable_range();
            prop_assert!((rlo - lo).abs() <= 1e-12 * (1.0 + lo.abs()));
            prop_assert!((rhi - hi).abs() <= 1e-12 * (1.0 + hi.abs()));
            // away from roundoff boundaries the predicate must agree
            if (b - lo).abs() > 1e-9 && (b - hi).abs() > 1e-9 {
                prop_assert_eq!(feasibility_equality(&s), lo <= b && b <= hi);
            }
        }

        #[test]
        fn shrink_expand_round_trip(
            x in proptest::collection::vec(-10.0f64..10.0, 1..30),
            seed in any::<u64>(),
        ) {
            let n = x.len();
            let active: Vec<usize> = (0..n).filter(|i| (seed >> (i % 64)) & 1 == 1).collect();
            let p = IndexPartition::from_active(n, &active).unwrap();
            let v = p.shrink(&x).unwrap();
            prop_assert_eq!(p.expand(&v, &x).unwrap(), x.clone());
            let fill = vec![0.0; n];
            prop_assert_eq!(p.shrink(&p.expand(&v, &fill).unwrap()).unwrap(), v);
        }

        #[test]
        fn partition_is_idempotent(x in proptest::collection::vec(0.0f64..=1.0, 1..20)) {
            let n = x.len();
            let x: Vec<f64> = x.iter().map(|&v| if v < 0.2 { 0.0 } else if v > 0.8 { 1.0 } else { v }).collect();
            let s = KnapsackSet::equality(vec![0.0; n], vec![1.0; n], vec![1.0; n], 0.0).unwrap();
            let p1 = partition(&x, &s, 0.0).unwrap();
            let p2 = partition(&x, &s, 0.0).unwrap();
            prop_assert_eq!(&p1, &p2);
            for &i in p1.active() {
                prop_assert!(x[i] == 0.0 || x[i] == 1.0);
            }
        }
    }
}
