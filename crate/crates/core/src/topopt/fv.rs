//! Cell-centered finite volumes for `-div(k grad theta) = f` on the unit
//! square with Dirichlet data, and a Jacobi-preconditioned CG solver.
//!
//! Cell `(i, j)` has index `j * n + i`; `i` runs along x. Interior faces use
//! the harmonic mean of the two cell conductivities; a boundary face sits
//! half a cell from the center, so its transmissibility is `2 k`.

use crate::error::{Error, Result};

pub fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Derivative of `harmonic(a, b)` with respect to `a`.
pub fn harmonic_da(a: f64, b: f64) -> f64 {
    2.0 * b * b / ((a + b) * (a + b))
}

/// Five-point operator on an `n x n` grid.
#[derive(Debug, Clone)]
pub struct FvOperator {
    pub n: usize,
    /// Transmissibility between `(i, j)` and `(i + 1, j)`, index `j * (n - 1) + i`.
    pub east: Vec<f64>,
    /// Transmissibility between `(i, j)` and `(i, j + 1)`, index `j * n + i`.
    pub north: Vec<f64>,
    /// Sum of boundary-face transmissibilities per cell.
    pub boundary: Vec<f64>,
    pub diag: Vec<f64>,
}

/// Number of boundary faces of cell `(i, j)`.
pub fn boundary_faces(n: usize, i: usize, j: usize) -> usize {
    (i == 0) as usize + (i + 1 == n) as usize + (j == 0) as usize + (j + 1 == n) as usize
}

impl FvOperator {
    /// Operator for per-cell conductivities `k` (2D faces have unit
    /// area-over-distance ratio).
    pub fn new(n: usize, k: &[f64]) -> Self {
        assert_eq!(k.len(), n * n);
        let mut east = vec![0.0; (n - 1) * n];
        let mut north = vec![0.0; n * (n - 1)];
        let mut boundary = vec![0.0; n * n];
        let mut diag = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                let c = j * n + i;
                boundary[c] = 2.0 * k[c] * boundary_faces(n, i, j) as f64;
                diag[c] += boundary[c];
                if i + 1 < n {
                    let t = harmonic(k[c], k[c + 1]);
                    east[j * (n - 1) + i] = t;
                    diag[c] += t;
                    diag[c + 1] += t;
                }
                if j + 1 < n {
                    let t = harmonic(k[c], k[c + n]);
                    north[c] = t;
                    diag[c] += t;
                    diag[c + n] += t;
                }
            }
        }
        Self {
            n,
            east,
            north,
            boundary,
            diag,
        }
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.n;
        for c in 0..n * n {
            y[c] = self.diag[c] * x[c];
        }
        for j in 0..n {
            for i in 0..n - 1 {
                let c = j * n + i;
                let t = self.east[j * (n - 1) + i];
                y[c] -= t * x[c + 1];
                y[c + 1] -= t * x[c];
            }
        }
        for c in 0..n * (n - 1) {
            let t = self.north[c];
            y[c] -= t * x[c + n];
            y[c + n] -= t * x[c];
        }
    }
}

#[derive(Debug, Clone)]
pub struct PcgOutcome {
    pub iterations: usize,
    /// Relative residual `|r_k| / |b|` per iteration, starting at `k = 0`.
    pub history: Vec<f64>,
}

/// Jacobi-preconditioned CG for `A x = b`, starting from the contents of `x`.
/// Stops when `|b - A x|_2 <= tol |b|_2`.
pub fn pcg(op: &FvOperator, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<PcgOutcome> {
    let m = op.len();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(PcgOutcome {
            iterations: 0,
            history: vec![0.0],
        });
    }
    let mut r = vec![0.0; m];
    op.apply(x, &mut r);
    for c in 0..m {
        r[c] = b[c] - r[c];
    }
    let mut z: Vec<f64> = (0..m).map(|c| r[c] / op.diag[c]).collect();
    let mut p = z.clone();
    let mut q = vec![0.0; m];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut history = Vec::new();
    for it in 0..=max_iter {
        let rel = r.iter().map(|v| v * v).sum::<f64>().sqrt() / bnorm;
        history.push(rel);
        if rel <= tol {
            return Ok(PcgOutcome {
                iterations: it,
                history,
            });
        }
        if it == max_iter || !rel.is_finite() {
            break;
        }
        op.apply(&p, &mut q);
        let pq: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
        let alpha = rz / pq;
        for c in 0..m {
            x[c] += alpha * p[c];
            r[c] -= alpha * q[c];
            z[c] = r[c] / op.diag[c];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for c in 0..m {
            p[c] = z[c] + beta * p[c];
        }
    }
    Err(Error::Pcg {
        iterations: history.len() - 1,
        final_residual: *history.last().unwrap_or(&f64::NAN),
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn harmonic_mean_examples() {
        assert_eq!(harmonic(1.0, 1.0), 1.0);
        assert!((harmonic(1.0, 2.0) - 4.0 / 3.0).abs() < 1e-15);
        let (a, b, h) = (1.3, 0.7, 1e-6);
        let fd = (harmonic(a + h, b) - harmonic(a - h, b)) / (2.0 * h);
        assert!((fd - harmonic_da(a, b)).abs() < 1e-8);
    }

    #[test]
    fn operator_is_symmetric_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 6;
        let k: Vec<f64> = (0..n * n).map(|_| rng.gen_range(1.0..2.0)).collect();
        let op = FvOperator::new(n, &k);
        let x: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (mut ax, mut ay) = (vec![0.0; n * n], vec![0.0; n * n]);
        op.apply(&x, &mut ax);
        op.apply(&y, &mut ay);
        let xay: f64 = x.iter().zip(&ay).map(|(a, b)| a * b).sum();
        let yax: f64 = y.iter().zip(&ax).map(|(a, b)| a * b).sum();
        assert!((xay - yax).abs() < 1e-12);
        assert!(x.iter().zip(&ax).map(|(a, b)| a * b).sum::<f64>() > 0.0);
    }

    #[test]
    fn pcg_solves_to_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 20;
        let k: Vec<f64> = (0..n * n).map(|_| rng.gen_range(1.0..2.0)).collect();
        let op = FvOperator::new(n, &k);
        let b: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut x = vec![0.0; n * n];
        let out = pcg(&op, &b, &mut x, 1e-10, 1000).unwrap();
        let mut ax = vec![0.0; n * n];
        op.apply(&x, &mut ax);
        let res: f64 = ax.iter().zip(&b).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let bn: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(res <= 1e-10 * bn * 1.01);
        assert_eq!(out.history.len(), out.iterations + 1);
    }

    #[test]
    fn pcg_reports_failure_with_history() {
        let op = FvOperator::new(10, &vec![1.0; 100]);
        let mut x = vec![0.0; 100];
        match pcg(&op, &vec![1.0; 100], &mut x, 1e-14, 2) {
            Err(Error::Pcg {
                iterations, history, ..
            }) => {
                assert_eq!(iterations, 2);
                assert_eq!(history.len(), 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let op = FvOperator::new(4, &[1.0; 16]);
        let mut x = vec![1.0; 16];
        pcg(&op, &[0.0; 16], &mut x, 1e-10, 10).unwrap();
        assert!(x.iter().all(|v| *v == 0.0));
    }
}
