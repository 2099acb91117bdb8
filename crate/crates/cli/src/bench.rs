use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use clap::ValueEnum;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use knapsack_core::asa::asa_solve;
use knapsack_core::problems::{benchmark_suite, uncorrelated_instance};
use knapsack_core::spg::spg_solve;
use knapsack_core::{project_equality, ProjectionOptions};

use crate::{CliError, CliResult};

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    /// Equality projections on the uncorrelated family; `--sizes` applies.
    Projection,
    /// Both drivers on the fixed solver suite; `--sizes` is ignored.
    Solvers,
}

pub fn parse_sizes(s: &str) -> CliResult<Vec<usize>> {
    s.split(',')
        .map(|t| {
            let v: f64 = t
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("--sizes: cannot parse {t:?}")))?;
            if !(v >= 1.0 && v.fract() == 0.0 && v <= 1e9) {
                return Err(CliError::Usage(format!("--sizes: {t:?} is not a positive integer")));
            }
            Ok(v as usize)
        })
        .collect()
}

/// Runs `work(i)` for `i in 0..count` on `jobs` threads; results in index order.
fn parallel<T: Send, F: Fn(usize) -> T + Sync>(count: usize, jobs: usize, work: F) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..count).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let r = work(i);
                slots.lock().expect("no panics while locked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("threads joined")
        .into_iter()
        .map(|r| r.expect("filled"))
        .collect()
}

fn median<T: Copy + PartialOrd>(mut v: Vec<T>) -> T {
    v.sort_by(|a, b| a.partial_cmp(b).expect("comparable"));
    v[v.len() / 2]
}

#[derive(Serialize)]
struct ProjectionRow {
    n: usize,
    median_ns: u128,
    evals: usize,
    max_evals: usize,
}

#[derive(Serialize)]
struct SolverRow {
    case: String,
    n: usize,
    solver: &'static str,
    status: String,
    f: f64,
    norm_d1: f64,
    n_f: usize,
    n_g: usize,
    median_ns: u128,
}

fn to_csv<R: Serialize>(rows: &[R]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Solver(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Solver(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

pub fn run(suite: Suite, sizes: &[usize], seed: u64, reps: usize, jobs: usize) -> CliResult<String> {
    let reps = reps.max(1);
    match suite {
        Suite::Projection => {
            let items: Vec<(usize, usize)> = sizes.iter().flat_map(|&n| (0..reps).map(move |r| (n, r))).collect();
            let results = parallel(items.len(), jobs, |i| {
                let (n, r) = items[i];
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((n as u64) << 20) ^ r as u64);
                let (y, set) = uncorrelated_instance(&mut rng, n);
                let t = Instant::now();
                let p = project_equality(&y, &set, ProjectionOptions::default());
                (t.elapsed().as_nanos(), p.map(|p| p.evals))
            });
            let mut rows = Vec::new();
            for (k, &n) in sizes.iter().enumerate() {
                let chunk = &results[k * reps..(k + 1) * reps];
                let mut ns = Vec::new();
                let mut evals = Vec::new();
                for (t, e) in chunk {
                    ns.push(*t);
                    evals.push(e.clone()?);
                }
                log::info!("projection n = {n}: {} reps", reps);
                rows.push(ProjectionRow {
                    n,
                    median_ns: median(ns),
                    max_evals: *evals.iter().max().expect("nonempty"),
                    evals: median(evals),
                });
            }
            to_csv(&rows)
        }
        Suite::Solvers => {
            let cases = benchmark_suite();
            let items: Vec<(usize, &'static str)> = (0..cases.len()).flat_map(|c| [(c, "spg"), (c, "asa")]).collect();
            let results = parallel(items.len(), jobs, |i| -> CliResult<SolverRow> {
                let (c, solver) = items[i];
                let mut times = Vec::new();
                let mut last = None;
                for _ in 0..reps {
                    let mut case = cases[c].clone();
                    let t = Instant::now();
                    let row = match solver {
                        "spg" => {
                            let r = spg_solve(&mut case.objective, &case.set, &case.x0, &Default::default())?;
                            (format!("{:?}", r.status), r.f, r.norm_d1, r.n_f, r.n_g)
                        }
                        _ => {
                            let r = asa_solve(
                                &mut case.objective,
                                &case.set,
                                &case.x0,
                                &Default::default(),
                                &Default::default(),
                                &Default::default(),
                            )?;
                            (format!("{:?}", r.status), r.f, r.norm_d1, r.n_f, r.n_g)
                        }
                    };
                    times.push(t.elapsed().as_nanos());
                    last = Some(row);
                }
                let (status, f, norm_d1, n_f, n_g) = last.expect("at least one rep");
                Ok(SolverRow {
                    case: cases[c].name.clone(),
                    n: cases[c].x0.len(),
                    solver,
                    status,
                    f,
                    norm_d1,
                    n_f,
                    n_g,
                    median_ns: median(times),
                })
            });
            let rows = results.into_iter().collect::<CliResult<Vec<_>>>()?;
            to_csv(&rows)
        }
    }
}
