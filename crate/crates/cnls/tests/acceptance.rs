//! Acceptance criteria A1 to A9. Prints one line per criterion and exits
//! non-zero if any of them fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cnls::commands::{build_grid, cmd_dichotomy, cmd_verify, reference_threshold, Context};
use cnls::config::DatumConfig;
use cnls::ExperimentConfig;
use cnls_core::diagnostics::{classify_outcome, Classification};
use cnls_core::functionals::{classify_membership, evaluate, mu_bar, report, Membership};
use cnls_core::solver::{evolve, Outcome};
use serde_json::Value;

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{e}"))
}

fn context(out: PathBuf) -> Context {
    let jobs = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    Context {
        jobs,
        output: Some(out),
    }
}

struct Verdict {
    id: &'static str,
    title: &'static str,
    passed: bool,
    detail: String,
}

fn line(v: &Verdict) {
    println!(
        "{} {} {}: {}",
        v.id,
        if v.passed { "PASS" } else { "FAIL" },
        v.title,
        v.detail
    );
}

/// Named checks of the verify report, all required to pass.
fn from_suite(id: &'static str, title: &'static str, checks: &[Value], names: &[&str]) -> Verdict {
    let mut passed = true;
    let mut detail = Vec::new();
    for name in names {
        match checks.iter().find(|c| c["name"] == *name) {
            Some(c) => {
                let ok = c["passed"].as_bool().unwrap_or(false);
                passed &= ok;
                detail.push(format!(
                    "{name}={:.3e}/{:.1e}",
                    c["value"].as_f64().unwrap_or(f64::NAN),
                    c["tolerance"].as_f64().unwrap_or(f64::NAN)
                ));
            }
            None => {
                passed = false;
                detail.push(format!("{name} missing"));
            }
        }
    }
    Verdict {
        id,
        title,
        passed,
        detail: detail.join(" "),
    }
}

fn blowup() -> Verdict {
    let mut cfg = config("blowup.toml");
    let grid = build_grid(&cfg).unwrap();
    let m = reference_threshold(cfg.dim).unwrap();
    // Smallest integer multiple of W below the threshold with K < 0.
    let c = (1..=20)
        .map(f64::from)
        .find(|&c| {
            let d = DatumConfig::GroundState {
                amplitude: c,
                lambda: 0.0,
                phase: 0.0,
            };
            let r = report(&evaluate(&d.spec(), &grid).unwrap());
            r.energy < m && r.k < 0.0
        })
        .expect("no multiple of W below the threshold");
    cfg.initial_data = vec![DatumConfig::GroundState {
        amplitude: c,
        lambda: 0.0,
        phase: 0.0,
    }];
    let tr = evolve(cfg.initial_data[0].spec(), &grid, &cfg.solver, &cfg.virial_radii).unwrap();
    let e0 = tr.reports[0].energy;
    let d = cfg.dim as f64;
    let t_stop = match tr.outcome {
        Outcome::BlowUp { t_stop } => Some(t_stop),
        _ => None,
    };
    let k_violations = tr.reports.iter().filter(|r| r.k > -mu_bar(cfg.dim) * (m - e0)).count();
    let g_violations = tr.reports.iter().filter(|r| r.grad_norm_sq <= d * m).count();
    let rep = classify_outcome(&tr, m);
    let passed = t_stop.is_some_and(|t| t < 10.0)
        && rep.evidence.virial_concave
        && rep.classification == Classification::BlowUpConfirmed
        && k_violations == 0
        && g_violations == 0;
    Verdict {
        id: "A4",
        title: "blow-up",
        passed,
        detail: format!(
            "c={c} E0={e0:.4e} m={m:.6} t_stop={t_stop:?} concavity={:?} {:?} k_violations={k_violations} gradient_violations={g_violations} observations={}",
            rep.concavity,
            rep.classification,
            tr.times.len()
        ),
    }
}

fn dispersion() -> Verdict {
    let cfg = config("dispersive.toml");
    let grid = build_grid(&cfg).unwrap();
    let m = reference_threshold(cfg.dim).unwrap();
    let spec = cfg.initial_data[0].spec();
    let r0 = report(&evaluate(&spec, &grid).unwrap());
    let membership = classify_membership(&r0, m);
    let tr = evolve(spec, &grid, &cfg.solver, &cfg.virial_radii).unwrap();
    let (m0, e0) = (tr.reports[0].mass, tr.reports[0].energy);
    let mass_drift = tr.reports.iter().map(|r| (r.mass - m0).abs() / m0).fold(0.0, f64::max);
    let energy_drift = tr
        .reports
        .iter()
        .map(|r| (r.energy - e0).abs() / e0.abs())
        .fold(0.0, f64::max);
    let rep = classify_outcome(&tr, m);
    let passed = membership == Membership::KPlus
        && r0.energy < m / 2.0
        && tr.outcome == Outcome::ReachedTFinal
        && (cfg.solver.t_final - 20.0).abs() < 1e-12
        && mass_drift <= 1e-8
        && energy_drift <= 1e-5
        && rep.evidence.critical_norm_halved
        && rep.evidence.st_norm_saturated
        && rep.evidence.exterior_decayed
        && rep.classification == Classification::DispersiveConfirmed;
    Verdict {
        id: "A5",
        title: "dispersion",
        passed,
        detail: format!(
            "{membership:?} E0={:.4e} T={} {:?} mass_drift={mass_drift:.2e} energy_drift={energy_drift:.2e} st_increment={:?} {:?}",
            r0.energy, cfg.solver.t_final, tr.outcome, rep.st_increment, rep.classification
        ),
    }
}

fn dichotomy(out: PathBuf) -> Verdict {
    let cfg = config("dichotomy.toml");
    match cmd_dichotomy(&cfg, &context(out)) {
        Ok(s) => {
            let below: Vec<_> = s
                .rows
                .iter()
                .filter(|r| r.membership != Membership::AboveThreshold)
                .collect();
            let plus = below.iter().filter(|r| r.membership == Membership::KPlus).count();
            let minus = below.iter().filter(|r| r.membership == Membership::KMinus).count();
            let completed = below
                .iter()
                .filter(|r| r.outcome.is_some() && r.error.is_none())
                .count();
            // Sorted by amplitude: all K+ rows precede all K- rows.
            let first_minus = below
                .iter()
                .position(|r| r.membership == Membership::KMinus)
                .unwrap_or(below.len());
            let contiguous = below[first_minus..].iter().all(|r| r.membership == Membership::KMinus);
            let passed = below.len() >= 20
                && plus > 0
                && minus > 0
                && completed == below.len()
                && contiguous
                && s.gate_violations.is_empty();
            Verdict {
                id: "A6",
                title: "dichotomy gate",
                passed,
                detail: format!(
                    "points={} KPlus={plus} KMinus={minus} completed={completed} contiguous={contiguous} violations={}",
                    below.len(),
                    s.gate_violations.len()
                ),
            }
        }
        Err(e) => Verdict {
            id: "A6",
            title: "dichotomy gate",
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("verify.toml");
    let (a, b) = (tmp.path().join("verify_a"), tmp.path().join("verify_b"));
    let first = cmd_verify(&cfg, &context(a.clone()));
    let second = cmd_verify(&cfg, &context(b.clone()));
    let text_a = std::fs::read(a.join("verify.json")).unwrap();
    let text_b = std::fs::read(b.join("verify.json")).unwrap();
    let parsed: Value = serde_json::from_slice(&text_a).unwrap();
    let checks = parsed["checks"].as_array().cloned().unwrap_or_default();
    if let Err(e) = &first {
        println!("verify: {e}");
    }

    let mut verdicts = vec![
        from_suite(
            "A1",
            "ground-state validity",
            &checks,
            &[
                "ground_state.pde_residual",
                "ground_state.kc_of_w",
                "ground_state.pohozaev",
            ],
        ),
        from_suite(
            "A2",
            "threshold cross-identities",
            &checks,
            &["threshold.m_equals_grad_over_d", "threshold.sobolev_constant"],
        ),
        from_suite(
            "A3",
            "variational suite",
            &checks,
            &[
                "scaling.mass",
                "scaling.gradient",
                "scaling.critical",
                "scaling.subcritical",
                "identity.mu_bar_e_minus_k",
                "path.second_derivative_formula",
                "bounds.violations",
                "bounds.negative_branch_samples",
                "infimum.kc_family_floor",
                "infimum.k_mixed_floor",
                "infimum.kc_mixed_floor",
                "infimum.kc_witness",
            ],
        ),
    ];
    verdicts.push(blowup());
    verdicts.push(dispersion());
    verdicts.push(dichotomy(tmp.path().join("dichotomy")));
    verdicts.push(from_suite(
        "A7",
        "virial identities",
        &checks,
        &[
            "virial.first_identity",
            "virial.second_identity",
            "virial.untruncated_limit",
        ],
    ));
    verdicts.push(from_suite(
        "A8",
        "numerical convergence",
        &checks,
        &[
            "convergence.quadrature",
            "convergence.laplacian_residual",
            "convergence.energy_drift_dt",
        ],
    ));
    let identical = text_a == text_b;
    verdicts.push(Verdict {
        id: "A9",
        title: "determinism",
        passed: identical && first.is_ok() == second.is_ok(),
        detail: format!("verify.json {} bytes, identical={identical}", text_a.len()),
    });

    for v in &verdicts {
        line(v);
    }
    let failed: Vec<_> = verdicts.iter().filter(|v| !v.passed).map(|v| v.id).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", verdicts.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
