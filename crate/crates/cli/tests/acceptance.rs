//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL ...` line;
//! run with `--nocapture` to see them all.

mod common;

use std::fs;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::Rng;

use common::{code, csv_rows, metric, path_str, report, sni, stderr, workspace_root};
use sni_core::completion::{sparse_residual, ObservationSet};
use sni_core::datasets::{make_synthetic, Spectrum, SyntheticSpec};
use sni_core::matcore::{
    fro_norm, gaussian_matrix, random_orthonormal, seeded_rng, sigma_min, thin_qr,
};
use sni_core::{
    evaluate_rmse, riemannian_gradient_components, run_with_trace, sni_complete, sni_run, sni_step,
    DenseMatrix, DenseTarget, GradientOracle, LowRankFactors, Method, SolverConfig,
};

fn verdict(n: u32, ok: bool, detail: &str) {
    println!(
        "criterion {n}: {} {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {n} failed: {detail}");
}

fn random_start(m: usize, n: usize, r: usize, seed: u64) -> LowRankFactors {
    let mut rng = seeded_rng(seed);
    let u = random_orthonormal(m, r, &mut rng).unwrap();
    let v = random_orthonormal(n, r, &mut rng).unwrap();
    let s = gaussian_matrix(r, r, &mut rng) + DenseMatrix::identity(r, r) * 2.0;
    LowRankFactors::new(u, s, v).unwrap()
}

/// Number of consecutive pairs with `next > prev + slack`.
fn violations(values: &[f64], slack: f64) -> usize {
    values.windows(2).filter(|w| w[1] > w[0] + slack).count()
}

/// Dimensions and rank of the `t`-th monotonicity trial: up to 60 x 40.
fn monotonicity_trial(t: u64) -> (usize, usize, usize) {
    let m = 5 + (t as usize * 13) % 56;
    let n = 3 + (t as usize * 7) % 38;
    let r = 1 + (t as usize * 3) % m.min(n).min(8);
    (m, n, r)
}

#[test]
fn criterion_1_desk_scale_accuracy_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let out = sni(&[
        "bench",
        "--methods",
        "sni,power,rsvd",
        "--m",
        "500",
        "--n",
        "400",
        "--rank",
        "20",
        "--trials",
        "3",
        "--seed",
        "0",
        "--out",
        path_str(dir.path()),
    ]);
    let elapsed = start.elapsed();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = csv_rows(&dir.path().join("bench.csv"));
    let mean = |name: &str| -> f64 {
        table[1..].iter().find(|r| r[0] == name).unwrap()[2]
            .parse()
            .unwrap()
    };
    let (sni_err, power_err, rsvd_err) = (mean("sni"), mean("power"), mean("rsvd"));
    let ok = sni_err <= 1e-8
        && power_err <= 1e-5
        && rsvd_err >= 10.0 * power_err
        && elapsed < Duration::from_secs(30);
    verdict(
        1,
        ok,
        &format!(
            "sni {sni_err:.2e}, power {power_err:.2e}, rsvd {rsvd_err:.2e}, {:.1} s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_2_monotone_matrix_error() {
    let mut bad = 0;
    let mut steps = 0;
    for t in 0..100u64 {
        let (m, n, r) = monotonicity_trial(t);
        let target = gaussian_matrix(m, n, &mut seeded_rng(t));
        let f0 = random_start(m, n, r, 1_000 + t);
        let (_, trace) = run_with_trace(
            Method::Sni,
            &DenseTarget::new(&target),
            f0,
            &SolverConfig::with_rank(r),
        )
        .unwrap();
        let obj = trace.objectives();
        steps += obj.len() - 1;
        bad += violations(&obj, 1e-10 * fro_norm(&target));
    }
    verdict(
        2,
        bad == 0,
        &format!("{bad} violations over {steps} steps in 100 trials"),
    );
}

#[test]
fn criterion_3_monotone_subspace_errors() {
    let mut located = Vec::new();
    let mut bad = 0;
    let mut steps = 0;
    for t in 0..100u64 {
        let (m, n, r) = monotonicity_trial(t);
        let target = gaussian_matrix(m, n, &mut seeded_rng(t));
        let f0 = random_start(m, n, r, 1_000 + t);
        let (_, trace) = run_with_trace(
            Method::Sni,
            &DenseTarget::new(&target),
            f0,
            &SolverConfig::with_rank(r),
        )
        .unwrap();
        let slack = 1e-10 * fro_norm(&target);
        let u: Vec<f64> = trace
            .all_records()
            .map(|x| x.u_subspace_error.unwrap())
            .collect();
        let v: Vec<f64> = trace
            .all_records()
            .map(|x| x.v_subspace_error.unwrap())
            .collect();
        steps += u.len() - 1;
        for (name, e) in [("U", &u), ("V", &v)] {
            for (k, w) in e.windows(2).enumerate() {
                if w[1] > w[0] + slack {
                    located.push(format!(
                        "trial {t} {name} step {}: {:.4} -> {:.4}",
                        k + 1,
                        w[0],
                        w[1]
                    ));
                }
            }
        }
        bad += violations(&u, slack) + violations(&v, slack);
    }
    verdict(
        3,
        bad == 0,
        &format!("{bad} violations over {steps} steps in 100 trials {located:?}"),
    );
}

#[test]
fn criterion_4_monotone_completion_objective() {
    let mut bad = 0;
    let mut steps = 0;
    for t in 0..50u64 {
        let spectrum = Spectrum::linear(200.0, 100.0, 5).unwrap();
        let problem = make_synthetic(&SyntheticSpec::new(200, 200, spectrum, 40 + t)).unwrap();
        let m = &problem.matrix;
        let mut coin = seeded_rng(90 + t);
        let draws: Vec<f64> = (0..200 * 200).map(|_| coin.random::<f64>()).collect();
        let heavy_row = (t as usize * 37) % 200;
        let obs = match t % 4 {
            0 => ObservationSet::full(m),
            1 => ObservationSet::masked(m, |i, j| draws[i * 200 + j] < 0.5),
            2 => ObservationSet::masked(m, |i, j| draws[i * 200 + j] < 0.1),
            _ => ObservationSet::masked(m, |i, j| i == heavy_row || draws[i * 200 + j] < 0.05),
        };
        let f0 = random_start(200, 200, 5, 140 + t);
        let result = sni_complete(&obs, f0, &SolverConfig::with_rank(5)).unwrap();
        let f1 = result.trace.objectives();
        steps += f1.len() - 1;
        bad += violations(&f1, 1e-10 * f1[0]);
    }
    verdict(
        4,
        bad == 0,
        &format!("{bad} violations over {steps} steps in 50 instances"),
    );
}

#[test]
fn criterion_5_exact_rank_recovery() {
    let mut worst_rel: f64 = 0.0;
    let mut worst_sv: f64 = 0.0;
    let mut failures = Vec::new();
    let shapes = [(40, 30), (120, 90), (300, 200)];
    for r in [1usize, 3, 10] {
        for (k, &(m, n)) in shapes.iter().enumerate() {
            let seed = 100 * r as u64 + k as u64;
            let spectrum = Spectrum::linear(10.0, 1.0, r).unwrap();
            let problem =
                make_synthetic(&SyntheticSpec::new(m, n, spectrum.clone(), seed)).unwrap();
            let oracle = problem.oracle(r);
            let (u_true, v_true) = (&problem.truth.u, &problem.truth.v);
            let complement = |basis: &DenseMatrix, s: u64| {
                let g = gaussian_matrix(basis.nrows(), r, &mut seeded_rng(s));
                thin_qr(&(&g - basis * basis.tr_mul(&g))).unwrap().q
            };
            let starts = [
                ("random", random_start(m, n, r, seed + 7)),
                (
                    "complement",
                    LowRankFactors::new(
                        complement(u_true, seed + 8),
                        DenseMatrix::identity(r, r),
                        complement(v_true, seed + 9),
                    )
                    .unwrap(),
                ),
            ];
            for (name, f0) in starts {
                let res = sni_run(
                    &DenseTarget::new(&problem.matrix),
                    f0,
                    &SolverConfig::with_rank(r),
                )
                .unwrap();
                let rel = res.relative_error(&oracle);
                let sv = res
                    .singular_values
                    .iter()
                    .zip(spectrum.values())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                worst_rel = worst_rel.max(rel);
                worst_sv = worst_sv.max(sv);
                if rel > 1e-8 || sv > 1e-8 {
                    failures.push(format!("r={r} {m}x{n} {name}: rel {rel:.1e} sv {sv:.1e}"));
                }
            }
        }
    }
    verdict(
        5,
        failures.is_empty(),
        &format!("worst relative error {worst_rel:.1e}, worst singular value error {worst_sv:.1e} {failures:?}"),
    );
}

#[test]
fn criterion_6_completion_exact_recovery() {
    let start = Instant::now();
    let mut spec = SyntheticSpec::new(200, 200, Spectrum::linear(200.0, 100.0, 5).unwrap(), 6);
    spec.observed_fraction = 0.5;
    let problem = make_synthetic(&spec).unwrap();
    let observed: std::collections::HashSet<(usize, usize)> = problem
        .observations
        .iter()
        .map(|e| (e.row, e.col))
        .collect();
    let held_out = ObservationSet::masked(&problem.matrix, |i, j| !observed.contains(&(i, j)));
    let cfg = SolverConfig {
        max_iterations: 500,
        ..SolverConfig::with_rank(5)
    };
    let result = sni_complete(&problem.observations, random_start(200, 200, 5, 60), &cfg).unwrap();
    let score = evaluate_rmse(&held_out, &result.factors().unwrap(), None).unwrap();
    let elapsed = start.elapsed();
    let ok = score.rmse <= 1e-4 && result.iterations <= 500 && elapsed < Duration::from_secs(10);
    verdict(
        6,
        ok,
        &format!(
            "held-out RMSE {:.2e} on {} entries after {} iterations, {:.2} s",
            score.rmse,
            score.count,
            result.iterations,
            elapsed.as_secs_f64()
        ),
    );
}

fn movielens_path() -> PathBuf {
    std::env::var_os("ML100K_PATH")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("data/ml-100k/u.data"))
}

#[test]
fn criterion_7_movielens_100k() {
    let path = movielens_path();
    if !path.is_file() {
        verdict(
            7,
            false,
            &format!(
                "MovieLens 100K ratings not found at {} (set ML100K_PATH)",
                path.display()
            ),
        );
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let out = sni(&[
        "complete",
        "--ratings",
        path_str(&path),
        "--rank",
        "10",
        "--test-fraction",
        "0.2",
        "--seed",
        "0",
        "--clamp",
        "1,5",
        "--center",
        "--validation-fraction",
        "0.1",
        "--out",
        path_str(dir.path()),
    ]);
    let elapsed = start.elapsed();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = report(dir.path());
    let rmse = metric(&r, "test_rmse");
    let ok = rmse <= 1.00 && elapsed < Duration::from_secs(60);
    verdict(
        7,
        ok,
        &format!(
            "test RMSE {rmse:.4} on {} ratings, {} iterations, {:.1} s",
            metric(&r, "test_count"),
            metric(&r, "selected_iterations"),
            elapsed.as_secs_f64()
        ),
    );
}

/// `(U S)_{i,:} . V_{j,:}` with both sums taken in ascending index order.
fn ordered_prediction(f: &LowRankFactors, i: usize, j: usize) -> f64 {
    let (u, s, v) = (f.u(), f.s(), f.v());
    let r = f.rank();
    let mut acc = 0.0;
    for k in 0..r {
        let mut us = 0.0;
        for l in 0..r {
            us += u[(i, l)] * s[(l, k)];
        }
        acc += us * v[(j, k)];
    }
    acc
}

#[test]
fn criterion_8_oracle_equivalences() {
    let mut worst_a: f64 = 0.0;
    for t in 0..50u64 {
        let (m, n, r) = (
            20 + (t as usize % 17),
            15 + (t as usize % 11),
            1 + (t as usize % 6),
        );
        let f = random_start(m, n, r, 2_000 + t);
        let b = gaussian_matrix(m, n, &mut seeded_rng(3_000 + t));
        let rebuilt = riemannian_gradient_components(&f, &b)
            .unwrap()
            .tangent_vector(&f);
        let (u, v) = (f.u(), f.v());
        let pu = u * u.transpose();
        let pv = v * v.transpose();
        let projected = &pu * &b - &pu * &b * &pv + &b * &pv;
        worst_a = worst_a.max(fro_norm(&(rebuilt - projected)));
    }

    let mut worst_b: f64 = 1.0;
    for t in 0..20u64 {
        let target = gaussian_matrix(40, 30, &mut seeded_rng(4_000 + t));
        let f0 = random_start(40, 30, 5, 5_000 + t);
        let next = sni_step(&f0, &DenseTarget::new(&target).residual(&f0)).unwrap();
        let u_power = thin_qr(&(&target * f0.v())).unwrap().q;
        let v_power = thin_qr(&target.tr_mul(&u_power)).unwrap().q;
        worst_b = worst_b
            .min(sigma_min(&next.u().tr_mul(&u_power)))
            .min(sigma_min(&next.v().tr_mul(&v_power)));
    }

    let mut mismatched = 0;
    for t in 0..20u64 {
        let mut rng = seeded_rng(6_000 + t);
        let target = gaussian_matrix(30, 25, &mut rng);
        let keep: Vec<bool> = (0..30 * 25).map(|_| rng.random::<f64>() < 0.3).collect();
        let obs = ObservationSet::masked(&target, |i, j| keep[i * 25 + j]);
        let f = random_start(30, 25, 4, 7_000 + t);
        let sparse = sparse_residual(&obs, &f).unwrap().to_dense();
        let oracle = DenseMatrix::from_fn(30, 25, |i, j| {
            if keep[i * 25 + j] {
                target[(i, j)] - ordered_prediction(&f, i, j)
            } else {
                0.0
            }
        });
        let same = sparse
            .iter()
            .zip(oracle.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        mismatched += usize::from(!same);
    }

    let ok = worst_a <= 1e-10 && worst_b >= 1.0 - 1e-9 && mismatched == 0;
    verdict(
        8,
        ok,
        &format!(
            "(a) max deviation {worst_a:.1e}, (b) min cosine 1 - {:.1e}, (c) {mismatched} of 20 inexact",
            1.0 - worst_b
        ),
    );
}

/// Runs `args` (with `--out`/output path appended by `place`) twice in fresh
/// directories and compares stdout, exit code and every written file.
fn run_twice(
    label: &str,
    args: &[&str],
    place: impl Fn(&std::path::Path) -> Vec<String>,
) -> Option<String> {
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let mut full: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        full.extend(place(dir.path()));
        let refs: Vec<&str> = full.iter().map(String::as_str).collect();
        let out = sni(&refs);
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir.path())
            .unwrap()
            .flat_map(|e| {
                let p = e.unwrap().path();
                if p.is_dir() {
                    fs::read_dir(&p)
                        .unwrap()
                        .map(|e| e.unwrap().path())
                        .collect::<Vec<_>>()
                } else {
                    vec![p]
                }
            })
            .map(|p| {
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    fs::read(&p).unwrap(),
                )
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Some(format!("{label}: wrote nothing ({})", stderr(&out)));
        }
        runs.push((code(&out), out.stdout, files));
    }
    (runs[0] != runs[1]).then(|| format!("{label}: outputs differ"))
}

#[test]
fn criterion_9_byte_identical_reruns() {
    let scratch = tempfile::tempdir().unwrap();
    let obs = scratch.path().join("obs.txt");
    let gen = sni(&[
        "generate",
        "--m",
        "80",
        "--n",
        "60",
        "--rank",
        "3",
        "--spectrum",
        "linear:30:10:3",
        "--fraction",
        "0.5",
        "--seed",
        "2",
        "--out",
        path_str(&obs),
    ]);
    assert_eq!(code(&gen), 0);
    let ratings = scratch.path().join("u.data");
    common::write_ratings_surrogate(&ratings, 120, 150, 0.15, 3);

    let out_dir =
        |d: &std::path::Path| vec!["--out".to_string(), d.join("run").display().to_string()];
    let out_file =
        |d: &std::path::Path| vec!["--out".to_string(), d.join("obs.txt").display().to_string()];
    let mut failures = Vec::new();
    let mut checked = 0;
    for method in ["sni", "dlra", "power", "rsvd"] {
        let args = [
            "approx",
            "--method",
            method,
            "--m",
            "90",
            "--n",
            "70",
            "--rank",
            "6",
            "--max-iters",
            "40",
        ];
        failures.extend(run_twice(method, &args, out_dir));
        checked += 1;
    }
    let complete_train = ["complete", "--train", path_str(&obs), "--rank", "3"];
    failures.extend(run_twice("complete --train", &complete_train, out_dir));
    let complete_ratings = [
        "complete",
        "--ratings",
        path_str(&ratings),
        "--rank",
        "4",
        "--center",
        "--clamp",
        "1,5",
        "--validation-fraction",
        "0.1",
    ];
    failures.extend(run_twice("complete --ratings", &complete_ratings, out_dir));
    let bench = [
        "bench",
        "--methods",
        "sni,power,rsvd,dlra",
        "--m",
        "70",
        "--n",
        "50",
        "--rank",
        "4",
        "--max-iters",
        "30",
    ];
    failures.extend(run_twice("bench", &bench, out_dir));
    let generate = [
        "generate",
        "--m",
        "50",
        "--n",
        "40",
        "--rank",
        "3",
        "--fraction",
        "0.4",
        "--noise",
        "0.01",
    ];
    failures.extend(run_twice("generate", &generate, out_file));
    checked += 4;
    verdict(
        9,
        failures.is_empty(),
        &format!(
            "{checked} command lines run twice, {} differing {failures:?}",
            failures.len()
        ),
    );
}
