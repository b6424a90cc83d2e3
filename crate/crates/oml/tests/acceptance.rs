//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Tolerances are pinned below. A criterion listed in `KNOWN_RED` still
//! prints FAIL when it fails but does not fail the process; set
//! `OML_ACCEPTANCE_STRICT=1` to make every failure fatal.

#[path = "../../core/tests/common/oracles.rs"]
mod oracles;

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use oml_core::evaluation::MetricsReport;
use oml_core::metric_learner::{
    cubic_coefficients, select_lambda, update_v, CubicCoeffs, Rank2Update, UpdateRule,
};
use oml_core::projection::{fit_projection, Ridge};
use oml_core::{
    generate_synthetic, prequential_run, telescoping_check, Error, Hyperparams, Matrix, Method,
    MetricV, ModelState, SynthConfig,
};
use oracles::Dense;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const CUBIC_REL_TOL: f64 = 1e-8;
const CUBIC_TIME_LIMIT: Duration = Duration::from_secs(10);
const LAMBDA_GRID_TOL: f64 = 1e-6;
const WOODBURY_TOL: f64 = 1e-10;
const PROJECTION_TOL: f64 = 1e-8;
const TELESCOPING_TOL: f64 = 1e-6;
const DIRECTIONAL_SLACK: f64 = 0.02;
const RUN_TIME_LIMIT: Duration = Duration::from_secs(60);
const COMPLEXITY_MIN_R2: f64 = 0.9;

/// Criteria expected to fail with the default hyperparameters; see the README.
const KNOWN_RED: &[u32] = &[7];

type Outcome = Result<String, String>;

fn dense(m: &Matrix) -> Dense {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_metric(rng: &mut ChaCha8Rng, q: usize, d: usize) -> MetricV {
    MetricV::from_matrix(Matrix::from_vec(q, d, gaussian(rng, q * d)).unwrap()).unwrap()
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn cubic_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let q = rng.random_range(2..=8);
        let d = rng.random_range(1..=4.min(q - 1));
        let v = random_metric(&mut rng, q, d);
        let upd = Rank2Update {
            u: gaussian(&mut rng, q),
            v: gaussian(&mut rng, q),
        };
        let delta = rng.random_range(0..=q) as f64;
        let coef = cubic_coefficients(&v, &upd, delta).map_err(|e| e.to_string())?;
        for _ in 0..5 {
            let lambda = 2.0 * (1.0 - rng.random::<f64>()); // (0, 2]
            let direct =
                oracles::lagrangian_first_order(&dense(v.matrix()), &upd.u, &upd.v, delta, lambda);
            // relative to the largest term, as the cubic's terms can cancel
            let scale = [
                coef.a * lambda.powi(3),
                coef.b * lambda * lambda,
                coef.c * lambda,
                direct,
            ]
            .iter()
            .fold(f64::MIN_POSITIVE, |m, t| m.max(t.abs()));
            let rel = (coef.eval(lambda) - direct).abs() / scale;
            worst = worst.max(rel);
            check(rel <= CUBIC_REL_TOL, || {
                format!("instance {i}, λ={lambda}: relative error {rel:.3e}")
            })?;
        }
    }
    let took = start.elapsed();
    check(took < CUBIC_TIME_LIMIT, || format!("took {took:?}"))?;
    Ok(format!(
        "1000 instances x 5 λ, max rel err {worst:.2e}, {took:.2?}"
    ))
}

fn lambda_selection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let (m, big_m) = (1e-5, 1e5);
    let (mut at_m, mut at_big_m, mut interior, mut a_zero) = (0, 0, 0, 0);
    for i in 0..1000 {
        let mag = |rng: &mut ChaCha8Rng| 10f64.powf(rng.random_range(-3.0..3.0));
        let mut coef = CubicCoeffs {
            a: rng.sample::<f64, _>(StandardNormal) * mag(&mut rng) * 1e-6,
            b: rng.sample::<f64, _>(StandardNormal) * mag(&mut rng) * 1e-2,
            c: rng.sample::<f64, _>(StandardNormal) * mag(&mut rng),
        };
        if i % 10 == 0 {
            coef.a = 0.0;
            a_zero += 1;
        }
        let lambda = select_lambda(&coef, m, big_m).map_err(|e| e.to_string())?;
        check((m..=big_m).contains(&lambda), || {
            format!("{coef:?}: λ={lambda} outside [m, M]")
        })?;
        let f = coef.eval(lambda);
        let grid = oracles::cubic_grid_max(coef.a, coef.b, coef.c, m, big_m, 10_000);
        check(f >= grid - LAMBDA_GRID_TOL * (1.0 + f.abs()), || {
            format!("{coef:?}: f({lambda})={f} below grid max {grid}")
        })?;
        if lambda == m {
            at_m += 1;
        } else if lambda == big_m {
            at_big_m += 1;
        } else {
            interior += 1;
        }
    }
    check(at_m > 0 && at_big_m > 0 && interior > 0, || {
        format!("cases not all covered: m {at_m}, M {at_big_m}, interior {interior}")
    })?;
    Ok(format!(
        "1000 triples (λ=m {at_m}, λ=M {at_big_m}, interior {interior}, a=0 {a_zero}) within grid max - {LAMBDA_GRID_TOL:e}(1+|f|)"
    ))
}

fn woodbury() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst: f64 = 0.0;
    for i in 0..500 {
        let q = rng.random_range(2..=16);
        let d = rng.random_range(1..q);
        let v = random_metric(&mut rng, q, d);
        let s = 1.0 / (q as f64).sqrt();
        let upd = Rank2Update {
            u: gaussian(&mut rng, q).into_iter().map(|x| x * s).collect(),
            v: gaussian(&mut rng, q).into_iter().map(|x| x * s).collect(),
        };
        let lambda = 10f64.powf(rng.random_range(-3.0..0.0));
        let want = oracles::exact_update_dense(&dense(v.matrix()), &upd.u, &upd.v, lambda)
            .ok_or_else(|| format!("case {i}: dense inverse singular"))?;
        let got =
            update_v(&v, lambda, &upd, UpdateRule::Exact).map_err(|e| format!("case {i}: {e}"))?;
        for (r, row) in want.iter().enumerate() {
            for (c, &w) in row.iter().enumerate() {
                let err = (got.matrix()[(r, c)] - w).abs() / (1.0 + w.abs());
                worst = worst.max(err);
                check(err <= WOODBURY_TOL, || {
                    format!("case {i} ({r},{c}): error {err:.3e}")
                })?;
            }
        }
    }
    // λ on a pole of (I − 2λA)⁻¹: the positive eigenvalue μ of A gives λ = 1/(2μ)
    let mut singular = 0;
    for i in 0..50 {
        let q = rng.random_range(2..=16);
        let d = rng.random_range(1..q);
        let v = random_metric(&mut rng, q, d);
        let upd = Rank2Update {
            u: gaussian(&mut rng, q),
            v: gaussian(&mut rng, q),
        };
        let uu: f64 = upd.u.iter().map(|x| x * x).sum();
        let vv: f64 = upd.v.iter().map(|x| x * x).sum();
        let uv: f64 = upd.u.iter().zip(&upd.v).map(|(a, b)| a * b).sum();
        let (t, det) = (uu - vv, uv * uv - uu * vv);
        let mu = 0.5 * (t + (t * t - 4.0 * det).sqrt());
        match update_v(&v, 0.5 / mu, &upd, UpdateRule::Exact) {
            Err(Error::SingularUpdate { .. }) => singular += 1,
            other => {
                return Err(format!(
                    "singular case {i}: expected SingularUpdate, got {other:?}"
                ))
            }
        }
    }
    Ok(format!(
        "500 updates, max rel err {worst:.2e}; {singular}/50 poles raise SingularUpdate"
    ))
}

fn projection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let n = rng.random_range(1..=32);
        let p = rng.random_range(1..=32);
        let q = rng.random_range(1..=32);
        let x = Matrix::from_vec(n, p, gaussian(&mut rng, n * p)).unwrap();
        let y = Matrix::from_vec(
            n,
            q,
            (0..n * q)
                .map(|_| f64::from(rng.random_bool(0.3)))
                .collect(),
        )
        .unwrap();
        let fit = fit_projection(&x, &y, Ridge::Auto).map_err(|e| format!("instance {i}: {e}"))?;
        let xd = dense(&x);
        let xt = oracles::transpose(&xd);
        let mut g = oracles::mul(&xt, &xd);
        for (j, row) in g.iter_mut().enumerate() {
            row[j] += fit.ridge();
        }
        let rhs = oracles::mul(&xt, &dense(&y));
        let lhs = oracles::mul(&g, &dense(fit.matrix()));
        let res = lhs
            .iter()
            .flatten()
            .zip(rhs.iter().flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let bound = PROJECTION_TOL * (1.0 + oracles::fro_sq(&rhs).sqrt());
        worst = worst.max(res / bound * PROJECTION_TOL);
        check(res <= bound, || {
            format!("instance {i} ({n}x{p}, q={q}): residual {res:.3e} > {bound:.3e}")
        })?;
    }
    for n in [1, 5, 17, 32] {
        let y = Matrix::from_vec(
            n,
            3,
            (0..n * 3)
                .map(|_| f64::from(rng.random_bool(0.5)))
                .collect(),
        )
        .unwrap();
        let fit = fit_projection(&Matrix::identity(n), &y, Ridge::Fixed(0.0))
            .map_err(|e| e.to_string())?;
        check(fit.matrix().as_slice() == y.as_slice(), || {
            format!("X=I (n={n}) did not return P=Y exactly")
        })?;
    }
    Ok(format!(
        "200 instances, worst scaled residual {worst:.2e}; X=I gives P=Y exactly"
    ))
}

fn lemma1() -> Outcome {
    let ds = generate_synthetic(&SynthConfig {
        n: 625,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let hp = Hyperparams {
        d: Some(4),
        ..Hyperparams::default()
    };
    let out = prequential_run(&ds, &hp, Method::Oml, 1).map_err(|e| e.to_string())?;
    check(out.stream_size == 500, || {
        format!("stream has {} rounds", out.stream_size)
    })?;
    check(out.diagnostics.snapshots.len() == 501, || {
        "expected 501 snapshots".into()
    })?;
    let v1 = &out.diagnostics.snapshots[0].1;
    let vt = &out.diagnostics.snapshots[500].1;
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let u = Matrix::from_vec(
            v1.rows(),
            v1.cols(),
            gaussian(&mut rng, v1.rows() * v1.cols()),
        )
        .unwrap();
        let first = v1.sub(&u).unwrap().frobenius_sq();
        let last = vt.sub(&u).unwrap().frobenius_sq();
        let res = telescoping_check(&out.diagnostics, &u).map_err(|e| e.to_string())?;
        let bound = TELESCOPING_TOL * (1.0 + first);
        worst = worst.max(res / (1.0 + first));
        check(res <= bound, || {
            format!("U #{i}: residual {res:.3e} > {bound:.3e}")
        })?;
        check(first - last <= first, || {
            format!("U #{i}: telescoped sum exceeds ‖V₁−U‖²")
        })?;
    }
    Ok(format!(
        "500 rounds, 10 random U, max residual/(1+‖V₁−U‖²) {worst:.2e}"
    ))
}

fn report_of(pairs: &[(&[u8], &[u8])]) -> MetricsReport {
    let mut r = MetricsReport::new(pairs[0].0.len());
    for (p, t) in pairs {
        r.update_confusion(p, t).unwrap();
    }
    r
}

fn metric_definitions() -> Outcome {
    let r = report_of(&[(&[1, 0, 1], &[1, 0, 1])]);
    check(
        r.label_counts(0) == (1, 0, 0, 0)
            && r.label_counts(1) == (0, 0, 0, 1)
            && r.label_counts(2) == (1, 0, 0, 0),
        || "exact pair counts".into(),
    )?;
    check(r.example_f1() == 1.0 && r.hamming_loss() == 0.0, || {
        "exact pair scores".into()
    })?;

    let r = report_of(&[(&[1, 0, 1], &[1, 1, 1])]);
    let tp: u64 = (0..3).map(|j| r.label_counts(j).0).sum();
    let fn_: u64 = (0..3).map(|j| r.label_counts(j).2).sum();
    check(tp == 2 && fn_ == 1, || "missed label counts".into())?;
    check(r.hamming_loss() == 1.0 / 3.0, || {
        format!("hamming {}", r.hamming_loss())
    })?;
    check(r.micro_f1() == 0.8, || format!("micro {}", r.micro_f1()))?;

    check(report_of(&[(&[0, 0], &[0, 0])]).example_f1() == 1.0, || {
        "empty-set example F1".into()
    })?;
    check(report_of(&[(&[0, 0], &[0, 0])]).micro_f1() == 0.0, || {
        "zero-division micro F1".into()
    })?;
    check(report_of(&[(&[1, 0], &[1, 0])]).macro_f1() == 0.5, || {
        "macro with silent label".into()
    })?;
    check(report_of(&[(&[1, 0], &[0, 1])]).example_f1() == 0.0, || {
        "disjoint example".into()
    })?;
    check(
        report_of(&[(&[1, 0], &[1, 0]), (&[1, 0], &[0, 1])]).example_f1() == 0.5,
        || "example mean".into(),
    )?;
    check(
        report_of(&[(&[1, 1], &[0, 0])]).hamming_loss() == 1.0,
        || "all wrong".into(),
    )?;
    let single = report_of(&[(&[1], &[1]), (&[0], &[1]), (&[1], &[0]), (&[1], &[1])]);
    check(single.macro_f1() == single.micro_f1(), || {
        "q=1 macro != micro".into()
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(106);
    for i in 0..1000 {
        let q = rng.random_range(1..=10);
        let mut r = MetricsReport::new(q);
        for _ in 0..rng.random_range(1..=40) {
            let density = rng.random::<f64>();
            let p: Vec<u8> = (0..q).map(|_| u8::from(rng.random_bool(density))).collect();
            let t: Vec<u8> = (0..q).map(|_| u8::from(rng.random_bool(density))).collect();
            r.update_confusion(&p, &t).unwrap();
        }
        for (name, v) in [
            ("micro", r.micro_f1()),
            ("macro", r.macro_f1()),
            ("example", r.example_f1()),
            ("hamming", r.hamming_loss()),
        ] {
            check((0.0..=1.0).contains(&v), || {
                format!("fuzz report {i}: {name}={v}")
            })?;
        }
    }
    Ok("hand fixtures exact; 1000 fuzzed reports in [0, 1]".into())
}

fn directional() -> Outcome {
    let seeds = 1..=5u64;
    let mut sums = [[0.0f64; 2]; 2];
    let mut slowest = Duration::ZERO;
    for seed in seeds.clone() {
        let ds = generate_synthetic(&SynthConfig {
            n: 2000,
            p: 20,
            q: 8,
            latent_dim: 4,
            rng_seed: seed,
            ..SynthConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let hp = Hyperparams {
            d: Some(4),
            rng_seed: seed,
            ..Hyperparams::default()
        };
        for (i, method) in [Method::Oml, Method::KnnEuclidean].into_iter().enumerate() {
            let start = Instant::now();
            let out =
                prequential_run(&ds, &hp, method, 10).map_err(|e| format!("seed {seed}: {e}"))?;
            slowest = slowest.max(start.elapsed());
            sums[i][0] += out.report.macro_f1();
            sums[i][1] += out.report.example_f1();
        }
    }
    let n = seeds.count() as f64;
    let [oml, knn] = sums.map(|s| s.map(|x| x / n));
    let detail = format!(
        "mean over 5 seeds: OML macro {:.4} example {:.4}; kNN macro {:.4} example {:.4}; slowest run {slowest:.2?}",
        oml[0], oml[1], knn[0], knn[1]
    );
    check(slowest < RUN_TIME_LIMIT, || {
        format!("{detail}; over time limit")
    })?;
    check(
        oml[0] >= knn[0] - DIRECTIONAL_SLACK && oml[1] >= knn[1] - DIRECTIONAL_SLACK,
        || format!("{detail}; OML below kNN - {DIRECTIONAL_SLACK}"),
    )?;
    Ok(detail)
}

fn complexity() -> Outcome {
    let sizes = [1000usize, 2000, 4000, 8000];
    let rounds = 301;
    let hp = Hyperparams {
        d: Some(4),
        ..Hyperparams::default()
    };
    let mut medians = Vec::new();
    for &n in &sizes {
        let ds = generate_synthetic(&SynthConfig {
            n: n + rounds,
            rng_seed: n as u64,
            ..SynthConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let (seed, stream) = ds.examples().split_at(n);
        // the FIFO bound keeps the store at exactly n entries
        let hp = Hyperparams {
            max_store: Some(n),
            ..hp.clone()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut state = ModelState::initialize(seed, &hp, &mut rng).map_err(|e| e.to_string())?;
        let mut times: Vec<f64> = stream
            .iter()
            .map(|e| {
                let start = Instant::now();
                state
                    .online_round(&e.features, &e.labels, &hp)
                    .map(|_| start.elapsed().as_secs_f64())
            })
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        times.sort_by(f64::total_cmp);
        medians.push(times[times.len() / 2]);
    }
    let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, medians.iter().sum::<f64>() / k);
    let sxy: f64 = xs
        .iter()
        .zip(&medians)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&medians)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let ss_tot: f64 = medians.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    let shown: Vec<String> = sizes
        .iter()
        .zip(&medians)
        .map(|(n, t)| format!("n={n}: {:.1}µs", t * 1e6))
        .collect();
    let detail = format!("{}; R²={r2:.4}", shown.join(", "));
    check(slope > 0.0 && r2 >= COMPLEXITY_MIN_R2, || {
        format!("{detail} below {COMPLEXITY_MIN_R2}")
    })?;
    Ok(detail)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut curves = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_oml"))
            .args([
                "run",
                "--synth",
                "n=400,p=10,q=5,latent_dim=3,seed=2",
                "--method",
                "oml",
                "--method",
                "knn",
            ])
            .args(["--seed", "9", "--checkpoint-every", "5", "--out"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        check(status.status.success(), || {
            String::from_utf8_lossy(&status.stderr).into_owned()
        })?;
        let mut files = Vec::new();
        for m in ["oml", "knn"] {
            files.push(
                std::fs::read(out.join(format!("curve_{m}.csv"))).map_err(|e| e.to_string())?,
            );
        }
        curves.push(files);
    }
    check(curves[0] == curves[1], || {
        "curve CSVs differ between invocations".into()
    })?;
    let bytes: usize = curves[0].iter().map(Vec::len).sum();
    Ok(format!(
        "two invocations, 2 curve files ({bytes} bytes) byte-identical"
    ))
}

fn main() -> ExitCode {
    let strict = std::env::var("OML_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    type Check = fn() -> Outcome;
    let criteria: [(u32, &str, Check); 9] = [
        (1, "cubic oracle", cubic_oracle),
        (2, "lambda selection", lambda_selection),
        (3, "woodbury exactness", woodbury),
        (4, "projection", projection),
        (5, "lemma 1 telescoping", lemma1),
        (6, "metric definitions", metric_definitions),
        (7, "directional reproduction", directional),
        (8, "complexity trend", complexity),
        (9, "determinism", determinism),
    ];
    let mut fatal = 0;
    for (id, name, f) in criteria {
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        match outcome {
            Ok(detail) => println!("PASS  {id} {name}: {detail} [{took:.2?}]"),
            Err(detail) => {
                let known = KNOWN_RED.contains(&id);
                let tag = if known && !strict { " (known red)" } else { "" };
                println!("FAIL  {id} {name}{tag}: {detail} [{took:.2?}]");
                if !known || strict {
                    fatal += 1;
                }
            }
        }
    }
    if fatal > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
