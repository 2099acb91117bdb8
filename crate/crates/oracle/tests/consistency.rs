use knapsack_oracle::{kkt_residual, oracle_project, oracle_project_interval, oracle_qp, Row};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    y: Vec<f64>,
    l: Vec<f64>,
    u: Vec<f64>,
    a: Vec<f64>,
    lo: f64,
    hi: f64,
}

fn instance(rng: &mut ChaCha8Rng, n: usize) -> Instance {
    let l: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..0.0)).collect();
    let u: Vec<f64> = l.iter().map(|v| v + rng.gen_range(0.1..2.0)).collect();
    let mut a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    if rng.gen_bool(0.3) {
        a[0] = 0.0;
    }
    let smin: f64 = (0..n).map(|i| (a[i] * l[i]).min(a[i] * u[i])).sum();
    let smax: f64 = (0..n).map(|i| (a[i] * l[i]).max(a[i] * u[i])).sum();
    let p = smin + rng.gen_range(0.05..0.95) * (smax - smin);
    let q = smin + rng.gen_range(0.05..0.95) * (smax - smin);
    let y = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    Instance {
        y,
        l,
        u,
        a,
        lo: p.min(q),
        hi: p.max(q),
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn max_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).fold(0.0, |m, (p, q)| m.max((p - q).abs()))
}

#[test]
fn identity_qp_reproduces_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in 0..300 {
        let n = 1 + k % 6;
        let s = instance(&mut rng, n);
        let c: Vec<f64> = s.y.iter().map(|v| -v).collect();
        let h = identity(n);
        let x = oracle_qp(&h, &c, &s.l, &s.u, &s.a, Row::Eq(s.lo));
        let z = oracle_project(&s.y, &s.l, &s.u, &s.a, s.lo);
        assert!(max_diff(&x, &z) <= 1e-12, "equality instance {k}");
        let x = oracle_qp(&h, &c, &s.l, &s.u, &s.a, Row::Range(s.lo, s.hi));
        let z = oracle_project_interval(&s.y, &s.l, &s.u, &s.a, s.lo, s.hi);
        assert!(max_diff(&x, &z) <= 1e-12, "interval instance {k}");
    }
}

#[test]
fn projections_satisfy_kkt() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in 0..300 {
        let n = 1 + k % 7;
        let s = instance(&mut rng, n);
        let z = oracle_project_interval(&s.y, &s.l, &s.u, &s.a, s.lo, s.hi);
        let g: Vec<f64> = z.iter().zip(&s.y).map(|(z, y)| z - y).collect();
        let r = kkt_residual(&g, &z, &s.l, &s.u, &s.a, Row::Range(s.lo, s.hi), 1e-10);
        assert!(r <= 1e-9, "instance {k}: residual {r}");
        let az: f64 = z.iter().zip(&s.a).map(|(p, q)| p * q).sum();
        assert!(az >= s.lo - 1e-10 && az <= s.hi + 1e-10);
    }
}

#[test]
fn two_dimensional_projection_beats_grid_search() {
    // the projection is no farther from y than any feasible grid point
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let s = instance(&mut rng, 2);
        let z = oracle_project_interval(&s.y, &s.l, &s.u, &s.a, s.lo, s.hi);
        let dz = (z[0] - s.y[0]).powi(2) + (z[1] - s.y[1]).powi(2);
        let m = 200;
        for i in 0..=m {
            for j in 0..=m {
                let p = s.l[0] + (s.u[0] - s.l[0]) * i as f64 / m as f64;
                let q = s.l[1] + (s.u[1] - s.l[1]) * j as f64 / m as f64;
                let ap = s.a[0] * p + s.a[1] * q;
                if ap >= s.lo && ap <= s.hi {
                    let d = (p - s.y[0]).powi(2) + (q - s.y[1]).powi(2);
                    assert!(dz <= d + 1e-12);
                }
            }
        }
    }
}
