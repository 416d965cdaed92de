//! Acceptance suite. Runs every criterion, prints one verdict line each and
//! exits non-zero if any failed.
//!
//! The size-study criteria run the full replication counts by default and take
//! a long time on a single core. `SVYDB_ACCEPTANCE_REPS` scales them down for
//! a quick look; a reduced run is labelled as such and never counts as a pass.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::process::{Command, ExitCode};
use std::time::Instant;

use common::{fd_gradient, fd_jacobian, loglik, newton_mle, random_dataset, random_theta, rel_err, rng};
use nalgebra::DMatrix;
use rand::Rng;
use svydb::simulation::{population_ame_by_enumeration, Hypothesis, TestKind};
use svydb::{
    ame, debias_functional, debias_theta, fit_penalized, hessian_and_info, lambda_max, run_study, score, Dataset,
    FitOptions, FitResult, LinearFunctional, PenaltySpec, SimulationConfig, Theta,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn reps_override() -> Option<usize> {
    std::env::var("SVYDB_ACCEPTANCE_REPS").ok().and_then(|s| s.parse().ok())
}

/// Published DB empirical sizes in percent: (n, p, H₀: θ = 1, H₀: AME = 0.11).
const REFERENCE_DB: [(usize, usize, f64, f64); 8] = [
    (200, 2, 5.0, 5.4),
    (200, 5, 4.4, 5.3),
    (200, 10, 3.7, 4.6),
    (200, 20, 3.1, 3.7),
    (400, 4, 4.8, 4.5),
    (400, 10, 4.4, 4.9),
    (400, 20, 6.0, 5.8),
    (400, 40, 3.7, 5.0),
];
/// Three Monte Carlo standard errors of a 5% test at 1000 replications.
const SIZE_BAND_PP: f64 = 2.1;

fn table_reproduction() -> Verdict {
    let reps = reps_override().unwrap_or(1000);
    let config = SimulationConfig {
        p_over_n: vec![0.01, 0.025, 0.05, 0.1],
        replications: reps,
        ..SimulationConfig::default()
    };
    let report = match run_study(&config) {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("study failed: {e}")),
    };
    let mut within = 0;
    let mut misses = Vec::new();
    for (n, p, theta_ref, ame_ref) in REFERENCE_DB {
        for (h, reference) in [(Hypothesis::Theta, theta_ref), (Hypothesis::Ame, ame_ref)] {
            let row = report.row(n, p, h, TestKind::Db).expect("cell present");
            let got = 100.0 * row.frequency;
            let ok = (got - reference).abs() <= SIZE_BAND_PP && !row.unreliable;
            println!(
                "    n={n:3} p={p:2} {:5} DB {got:5.1}% (reference {reference:.1}%, failures {}) {}",
                h.label(),
                row.failures,
                if ok { "ok" } else { "OUTSIDE BAND" }
            );
            if ok {
                within += 1;
            } else {
                misses.push(format!("n={n},p={p},{}: {got:.1} vs {reference:.1}", h.label()));
            }
        }
    }
    let full = reps == 1000;
    let mut detail = format!("{within}/16 DB sizes within ±{SIZE_BAND_PP}pp at {reps} reps");
    if !misses.is_empty() {
        detail += &format!("; outside: {}", misses.join("; "));
    }
    if !full {
        detail += " (reduced run, not a verdict)";
    }
    verdict(full && misses.is_empty(), detail)
}

fn overrejection_contrast() -> Verdict {
    let reps = reps_override().unwrap_or(200);
    let config = SimulationConfig {
        designs: vec![vec![50; 4]],
        p_over_n: vec![0.25, 0.5],
        replications: reps,
        ..SimulationConfig::default()
    };
    let report = match run_study(&config) {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("study failed: {e}")),
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for (p, t_floor) in [(50, 0.30), (100, 0.85)] {
        let t = report.row(200, p, Hypothesis::Theta, TestKind::TSvy).expect("cell present");
        let db = report.row(200, p, Hypothesis::Theta, TestKind::Db).expect("cell present");
        println!(
            "    n=200 p={p:3} theta t_svy {:.3} (floor {t_floor}) DB {:.3} (ceiling 0.10); failures t_svy {} DB {}",
            t.frequency, db.frequency, t.failures, db.failures
        );
        ok &= t.frequency >= t_floor && db.frequency <= 0.10;
        parts.push(format!("p={p}: t_svy {:.3}, DB {:.3}", t.frequency, db.frequency));
    }
    verdict(ok, format!("{} at {reps} paired reps", parts.join("; ")))
}

fn true_ame_fixture() -> Verdict {
    match population_ame_by_enumeration(&[1.0, 1.0, 1.0, 0.0, 0.0, 0.0], 1) {
        Ok(a) => verdict((a - 0.1107).abs() <= 1e-4, format!("enumerated AME {a:.6}")),
        Err(e) => verdict(false, e.to_string()),
    }
}

fn kkt_certificate(data: &Dataset, fit: &FitResult) -> bool {
    let s = score(data, &fit.theta_hat).unwrap();
    let lambda = fit.lambda;
    if s[0].abs() > 1e-8 {
        return false;
    }
    (1..=data.p()).filter(|j| !fit.dropped_columns.contains(j)).all(|j| {
        let k = lambda * fit.penalty_weights[j - 1];
        let b = fit.theta_hat[j];
        if b != 0.0 {
            (s[j] - k * b.signum()).abs() <= 1e-6 * lambda.max(1.0)
        } else {
            s[j].abs() <= k + 1e-6
        }
    })
}

fn kkt_suite() -> Verdict {
    let mut r = rng(400);
    let (mut converged, mut certified) = (0, 0);
    for k in 0..200 {
        let p = 1 + k % 15;
        let n = 30 + (k * 7) % 170;
        let d = random_dataset(&mut r, n, p, p / 2, 1.0);
        let d = d.with_weights(d.w().map(|w| w * r.random_range(0.2..5.0))).unwrap();
        let omega: Vec<f64> = (0..p).map(|_| r.random_range(0.2..3.0)).collect();
        let lambda = lambda_max(&d, &omega).unwrap() * r.random::<f64>().powi(3);
        let fit = fit_penalized(&d, &PenaltySpec::weighted(lambda, omega), None, &FitOptions::default()).unwrap();
        if fit.converged {
            converged += 1;
            certified += usize::from(kkt_certificate(&d, &fit));
        }
    }
    verdict(
        certified == converged && converged > 0,
        format!("{certified}/{converged} converged fits certified ({} of 200 converged)", converged),
    )
}

fn derivative_checks() -> Verdict {
    let mut r = rng(500);
    let (mut worst_s, mut worst_h, mut worst_a) = (0.0f64, 0.0f64, 0.0f64);
    let col = |v: &nalgebra::DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    for k in 0..100 {
        let p = 2 + k % 9;
        let d = random_dataset(&mut r, 40 + 3 * k, p, 1 + k % p, 1.0);
        let t = random_theta(&mut r, p, 1.0);
        let s = score(&d, &t).unwrap();
        worst_s = worst_s.max(rel_err(&col(&s), &col(&fd_gradient(|v| loglik(&d, v), t.as_vector()))));
        let (h, _) = hessian_and_info(&d, &t).unwrap();
        let jac = fd_jacobian(|v| score(&d, &Theta::from_vector(v.clone()).unwrap()).unwrap(), t.as_vector());
        worst_h = worst_h.max(rel_err(&h, &-jac));
        let j = 1 + k % (1 + k % p);
        let a = ame(&d, &t, j).unwrap();
        let fd = fd_gradient(|v| ame(&d, &Theta::from_vector(v.clone()).unwrap(), j).unwrap().ame_hat, t.as_vector());
        worst_a = worst_a.max(rel_err(&col(&a.jacobian_column), &col(&fd)));
    }
    let worst = worst_s.max(worst_h).max(worst_a);
    verdict(
        worst <= 1e-5,
        format!("max relative error: score {worst_s:.1e}, Hessian {worst_h:.1e}, AME Jacobian {worst_a:.1e}"),
    )
}

fn tight() -> FitOptions {
    FitOptions {
        tol: 1e-14,
        kkt_tol: 1e-13,
        ..FitOptions::default()
    }
}

fn debias_identities() -> Verdict {
    let mut r = rng(600);
    let (mut worst_fixed, mut worst_comm) = (0.0f64, 0.0f64);
    let mut used = 0;
    while used < 50 {
        let p = 1 + used % 8;
        let d = random_dataset(&mut r, 200 + 10 * used, p, p / 2, 0.8);
        if newton_mle(&d).is_none() {
            continue;
        }
        let mle = fit_penalized(&d, &PenaltySpec::lasso(0.0, p), None, &tight()).unwrap();
        let est = debias_theta(&d, &mle).unwrap();
        worst_fixed = worst_fixed.max((&est.estimate - mle.theta_hat.as_vector()).amax());

        let lambda = 0.05 * lambda_max(&d, &vec![1.0; p]).unwrap();
        let fit = fit_penalized(&d, &PenaltySpec::lasso(lambda, p), None, &FitOptions::default()).unwrap();
        let full = debias_theta(&d, &fit).unwrap();
        let c = DMatrix::from_fn(p + 1, 2, |_, _| r.random_range(-1.0..1.0));
        let lin = debias_functional(&d, &fit, &LinearFunctional { coefficients: c.clone() }).unwrap();
        worst_comm = worst_comm.max((&lin.estimate - c.tr_mul(&full.estimate)).amax());
        used += 1;
    }
    verdict(
        worst_fixed <= 1e-10 && worst_comm <= 1e-10,
        format!("fixed-point shift {worst_fixed:.1e}, commutation gap {worst_comm:.1e} over 50 instances"),
    )
}

fn newton_equivalence() -> Verdict {
    let mut r = rng(700);
    let mut worst = 0.0f64;
    let mut used = 0;
    while used < 50 {
        let p = 1 + used % 10;
        let d = random_dataset(&mut r, 200 + 15 * used, p, p / 2, 0.8);
        let Some(oracle) = newton_mle(&d) else { continue };
        let fit = fit_penalized(&d, &PenaltySpec::lasso(0.0, p), None, &FitOptions::default()).unwrap();
        if !fit.converged {
            return verdict(false, format!("instance {used} did not converge"));
        }
        worst = worst.max((fit.theta_hat.as_vector() - &oracle).amax());
        used += 1;
    }
    verdict(worst <= 1e-6, format!("max coefficient gap {worst:.1e} over 50 instances"))
}

fn worker_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for workers in ["1", "8"] {
        let out = dir.path().join(format!("w{workers}.csv"));
        let status = Command::new(env!("CARGO_BIN_EXE_svydb"))
            .env("SVYDB_WORKERS", workers)
            .args(["simulate", "--reps", "40", "--n", "200", "--p-over-n", "0.01,0.025", "--seed", "8", "--quiet", "--out"])
            .arg(&out)
            .status()
            .unwrap();
        if !status.success() {
            return verdict(false, format!("simulate with {workers} workers exited with {status}"));
        }
        let csv = std::fs::read(&out).unwrap();
        let json = std::fs::read(out.with_extension("json")).unwrap();
        outputs.push((csv, json));
    }
    let same = outputs[0] == outputs[1];
    verdict(same, format!("CSV and JSON reports {} between 1 and 8 workers", if same { "identical" } else { "differ" }))
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("size-table reproduction", table_reproduction),
        ("over-rejection contrast", overrejection_contrast),
        ("true AME by enumeration", true_ame_fixture),
        ("KKT certificate suite", kkt_suite),
        ("derivative correctness", derivative_checks),
        ("debias fixed point and commutation", debias_identities),
        ("λ=0 Newton equivalence", newton_equivalence),
        ("worker-count determinism", worker_determinism),
    ];
    let only: Option<Vec<usize>> = std::env::var("SVYDB_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let id = k + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            println!("criterion {id} ({name}): SKIPPED");
            continue;
        }
        let start = Instant::now();
        let v = run();
        failed += usize::from(!v.pass);
        println!(
            "criterion {id} ({name}): {} [{:.0}s] {}",
            if v.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            v.detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
