use std::fs;
use std::path::Path;

use cnls_core::diagnostics::{classify_outcome, Classification, OutcomeReport};
use cnls_core::functionals::{classify_membership, evaluate, report, threshold, FunctionalReport, Membership};
use cnls_core::grid::{GridRef, RadialGrid};
use cnls_core::solver::{evolve, Outcome, SimulationTrace, SolverError};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, DatumConfig, ExperimentConfig, SweepParameter};
use crate::output::{fmt_float, write_json, write_trace_csv};
use crate::verify::SuiteReport;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("grid rejected: {0}")]
    Grid(String),
    #[error("solver failed on datum {index}: {source}")]
    Solver { index: usize, source: SolverError },
    #[error("dichotomy gate violated: {}", .0.join("; "))]
    Gate(Vec<String>),
    #[error("property suite failed: {}", .0.join(", "))]
    Suite(Vec<String>),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Io(_) => 1,
            HarnessError::Grid(_) => 2,
            HarnessError::Solver { .. } => 3,
            HarnessError::Gate(_) => 4,
            HarnessError::Suite(_) => 5,
        }
    }
}

pub struct Context {
    pub jobs: usize,
    pub output: Option<std::path::PathBuf>,
}

impl Context {
    fn out_dir(&self, cfg: &ExperimentConfig) -> Result<std::path::PathBuf, HarnessError> {
        let dir = self.output.clone().unwrap_or_else(|| cfg.output_dir.clone());
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    fn pool(&self) -> rayon::ThreadPool {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.max(1))
            .build()
            .expect("thread pool")
    }
}

pub fn build_grid(cfg: &ExperimentConfig) -> Result<GridRef, HarnessError> {
    RadialGrid::new(cfg.dim, cfg.grid.n, cfg.grid.r_max).map_err(|e| HarnessError::Grid(e.to_string()))
}

/// Threshold used by every command except `threshold` itself, computed on a
/// fixed reference grid so experiments on small domains still get it.
pub fn reference_threshold(dim: usize) -> Result<f64, HarnessError> {
    let g = RadialGrid::new(dim, 4096, 60.0).map_err(|e| HarnessError::Grid(e.to_string()))?;
    Ok(threshold(&g).map_err(|e| HarnessError::Grid(e.to_string()))?.m)
}

fn check_radii(cfg: &ExperimentConfig, grid: &GridRef) -> Result<(), HarnessError> {
    for &r in &cfg.virial_radii {
        if r > grid.r_max() / 3.0 {
            return Err(
                ConfigError::Invalid(format!("virial radius {r} exceeds r_max/3 = {}", grid.r_max() / 3.0)).into(),
            );
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ThresholdSummary {
    pub dim: usize,
    pub n: usize,
    pub r_max: f64,
    pub m: f64,
    pub grad_w_norm_sq: f64,
    pub critical_norm_w: f64,
    pub sobolev_constant: f64,
    pub pde_residual: f64,
    pub kc_of_w: f64,
    pub pohozaev_gap: f64,
    pub sobolev_gap: f64,
    pub invariants_hold: bool,
}

pub fn cmd_threshold(cfg: &ExperimentConfig, ctx: &Context) -> Result<ThresholdSummary, HarnessError> {
    let grid = build_grid(cfg)?;
    let t = threshold(&grid).map_err(|e| HarnessError::Grid(e.to_string()))?;
    let summary = ThresholdSummary {
        dim: cfg.dim,
        n: cfg.grid.n,
        r_max: cfg.grid.r_max,
        m: t.m,
        grad_w_norm_sq: t.grad_w_norm_sq,
        critical_norm_w: t.critical_norm_w,
        sobolev_constant: t.sobolev_constant,
        pde_residual: t.pde_residual,
        kc_of_w: t.kc_of_w,
        pohozaev_gap: t.pohozaev_gap(cfg.dim),
        sobolev_gap: t.sobolev_gap(cfg.dim),
        invariants_hold: t.invariants_hold(cfg.dim),
    };
    write_json(&ctx.out_dir(cfg)?.join("threshold.json"), &summary)?;
    if !summary.invariants_hold {
        return Err(HarnessError::Grid(format!(
            "threshold cross-checks fail on this grid (pohozaev gap {:e}, sobolev gap {:e})",
            summary.pohozaev_gap, summary.sobolev_gap
        )));
    }
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct MembershipRow {
    pub index: usize,
    pub datum: DatumConfig,
    pub mass: f64,
    pub energy: f64,
    pub k: f64,
    pub h: f64,
    pub membership: Membership,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassifySummary {
    pub m: f64,
    pub rows: Vec<MembershipRow>,
}

fn initial_report(datum: &DatumConfig, grid: &GridRef) -> Result<FunctionalReport, HarnessError> {
    let f = evaluate(&datum.spec(), grid).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(report(&f.confined()))
}

pub fn cmd_classify(cfg: &ExperimentConfig, ctx: &Context) -> Result<ClassifySummary, HarnessError> {
    let grid = build_grid(cfg)?;
    let m = reference_threshold(cfg.dim)?;
    let rows = cfg
        .initial_data
        .iter()
        .enumerate()
        .map(|(index, datum)| {
            let rep = initial_report(datum, &grid)?;
            Ok(MembershipRow {
                index,
                datum: datum.clone(),
                mass: rep.mass,
                energy: rep.energy,
                k: rep.k,
                h: rep.h,
                membership: classify_membership(&rep, m),
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let summary = ClassifySummary { m, rows };
    write_json(&ctx.out_dir(cfg)?.join("classify.json"), &summary)?;
    Ok(summary)
}

pub fn membership_table(summary: &ClassifySummary) -> String {
    let mut s = format!(
        "m = {}\n{:>5} {:>14} {:>24} {:>24} {:>24} {:>24}  membership\n",
        summary.m, "index", "kind", "mass", "energy", "k", "h"
    );
    for r in &summary.rows {
        s += &format!(
            "{:>5} {:>14} {:>24} {:>24} {:>24} {:>24}  {:?}\n",
            r.index,
            r.datum.kind(),
            fmt_float(r.mass),
            fmt_float(r.energy),
            fmt_float(r.k),
            fmt_float(r.h),
            r.membership
        );
    }
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct DatumSummary {
    pub index: usize,
    pub datum: DatumConfig,
    pub initial: FunctionalReport,
    pub membership: Membership,
    pub outcome: Option<Outcome>,
    pub t_stop: Option<f64>,
    pub steps: usize,
    pub report: Option<OutcomeReport>,
}

impl DatumSummary {
    fn classification(&self) -> Option<Classification> {
        self.report.as_ref().map(|r| r.classification)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub m: f64,
    pub runs: Vec<DatumSummary>,
    pub gate_violations: Vec<String>,
}

/// Completed runs below the threshold with `K < 0` must not look dispersive,
/// and confirmed blow-up must not start in `K ≥ 0` below the threshold.
pub fn gate_violations(runs: &[DatumSummary]) -> Vec<String> {
    let mut out = Vec::new();
    for r in runs {
        match (r.membership, r.classification()) {
            (Membership::KMinus, Some(Classification::DispersiveConfirmed)) => {
                out.push(format!("datum {} is KMinus but DispersiveConfirmed", r.index))
            }
            (Membership::KPlus, Some(Classification::BlowUpConfirmed)) => {
                out.push(format!("datum {} is KPlus but BlowUpConfirmed", r.index))
            }
            _ => {}
        }
    }
    out
}

struct Run {
    summary: DatumSummary,
    trace: Option<SimulationTrace>,
    error: Option<SolverError>,
}

fn run_datum(
    index: usize,
    datum: &DatumConfig,
    cfg: &ExperimentConfig,
    grid: &GridRef,
    m: f64,
) -> Result<Run, HarnessError> {
    let initial = initial_report(datum, grid)?;
    let membership = classify_membership(&initial, m);
    let mut summary = DatumSummary {
        index,
        datum: datum.clone(),
        initial,
        membership,
        outcome: None,
        t_stop: None,
        steps: 0,
        report: None,
    };
    match evolve(datum.spec(), grid, &cfg.solver, &cfg.virial_radii) {
        Ok(trace) => {
            summary.outcome = Some(trace.outcome);
            summary.t_stop = trace.outcome.t_stop();
            summary.steps = trace.steps;
            summary.report = Some(classify_outcome(&trace, m));
            Ok(Run {
                summary,
                trace: Some(trace),
                error: None,
            })
        }
        Err(SolverError::Breakdown { t, partial }) => {
            summary.t_stop = Some(t);
            summary.steps = partial.steps;
            let error = SolverError::Breakdown {
                t,
                partial: partial.clone(),
            };
            Ok(Run {
                summary,
                trace: Some(*partial),
                error: Some(error),
            })
        }
        Err(e) => Ok(Run {
            summary,
            trace: None,
            error: Some(e),
        }),
    }
}

pub fn cmd_simulate(cfg: &ExperimentConfig, ctx: &Context) -> Result<RunSummary, HarnessError> {
    if cfg.initial_data.is_empty() {
        return Err(ConfigError::Invalid("simulate needs at least one initial datum".into()).into());
    }
    let grid = build_grid(cfg)?;
    check_radii(cfg, &grid)?;
    let m = reference_threshold(cfg.dim)?;
    let dir = ctx.out_dir(cfg)?;
    let runs: Vec<Result<Run, HarnessError>> = ctx.pool().install(|| {
        cfg.initial_data
            .par_iter()
            .enumerate()
            .map(|(i, d)| run_datum(i, d, cfg, &grid, m))
            .collect()
    });
    let mut summaries = Vec::new();
    let mut first_error = None;
    for run in runs {
        let run = run?;
        if let Some(trace) = &run.trace {
            write_trace_csv(
                trace,
                fs::File::create(dir.join(format!("trace_{}.csv", run.summary.index)))?,
            )
            .map_err(std::io::Error::other)?;
        }
        write_json(&dir.join(format!("run_{}.json", run.summary.index)), &run.summary)?;
        if let (Some(e), None) = (run.error, &first_error) {
            first_error = Some((run.summary.index, e));
        }
        summaries.push(run.summary);
    }
    let summary = RunSummary {
        config: cfg.clone(),
        m,
        gate_violations: gate_violations(&summaries),
        runs: summaries,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    if let Some((index, source)) = first_error {
        return Err(HarnessError::Solver { index, source });
    }
    if !summary.gate_violations.is_empty() {
        return Err(HarnessError::Gate(summary.gate_violations.clone()));
    }
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct DichotomyRow {
    pub parameter: f64,
    pub energy: f64,
    pub k: f64,
    pub membership: Membership,
    pub outcome: Option<Outcome>,
    pub classification: Option<Classification>,
    pub t_stop: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DichotomySummary {
    pub parameter: SweepParameter,
    pub m: f64,
    pub rows: Vec<DichotomyRow>,
    pub gate_violations: Vec<String>,
}

pub fn cmd_dichotomy(cfg: &ExperimentConfig, ctx: &Context) -> Result<DichotomySummary, HarnessError> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid("dichotomy needs a [sweep] table".into()))?;
    let base = cfg
        .initial_data
        .first()
        .ok_or_else(|| ConfigError::Invalid("dichotomy needs initial_data[0]".into()))?;
    let grid = build_grid(cfg)?;
    check_radii(cfg, &grid)?;
    let m = reference_threshold(cfg.dim)?;
    let mut values = sweep.values.clone();
    values.sort_by(f64::total_cmp);
    let data = values
        .iter()
        .map(|&v| base.with_parameter(sweep.parameter, v))
        .collect::<Result<Vec<_>, _>>()?;

    let results: Vec<Result<(DichotomyRow, DatumSummary), HarnessError>> = ctx.pool().install(|| {
        data.par_iter()
            .enumerate()
            .map(|(i, datum)| {
                let initial = initial_report(datum, &grid)?;
                let membership = classify_membership(&initial, m);
                let mut row = DichotomyRow {
                    parameter: values[i],
                    energy: initial.energy,
                    k: initial.k,
                    membership,
                    outcome: None,
                    classification: None,
                    t_stop: None,
                    error: None,
                };
                if membership == Membership::AboveThreshold {
                    let summary = DatumSummary {
                        index: i,
                        datum: datum.clone(),
                        initial,
                        membership,
                        outcome: None,
                        t_stop: None,
                        steps: 0,
                        report: None,
                    };
                    return Ok((row, summary));
                }
                let run = run_datum(i, datum, cfg, &grid, m)?;
                row.outcome = run.summary.outcome;
                row.classification = run.summary.classification();
                row.t_stop = run.summary.t_stop;
                row.error = run.error.map(|e| e.to_string());
                Ok((row, run.summary))
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for r in results {
        let (row, s) = r?;
        rows.push(row);
        summaries.push(s);
    }
    let summary = DichotomySummary {
        parameter: sweep.parameter,
        m,
        gate_violations: gate_violations(&summaries),
        rows,
    };
    let dir = ctx.out_dir(cfg)?;
    write_dichotomy_csv(&summary, &dir.join("dichotomy.csv"))?;
    write_json(&dir.join("dichotomy.json"), &summary)?;
    if !summary.gate_violations.is_empty() {
        return Err(HarnessError::Gate(summary.gate_violations.clone()));
    }
    Ok(summary)
}

fn write_dichotomy_csv(summary: &DichotomySummary, path: &Path) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(std::io::Error::other)?;
    let opt = |x: Option<f64>| x.map(fmt_float).unwrap_or_default();
    w.write_record([
        "parameter",
        "energy",
        "k",
        "membership",
        "outcome",
        "classification",
        "t_stop",
    ])
    .map_err(std::io::Error::other)?;
    for r in &summary.rows {
        let outcome = match r.outcome {
            Some(Outcome::BlowUp { .. }) => "BlowUp",
            Some(Outcome::ReachedTFinal) => "ReachedTFinal",
            Some(Outcome::BoundaryContaminated { .. }) => "BoundaryContaminated",
            Some(Outcome::StepUnderflow { .. }) => "StepUnderflow",
            None if r.membership == Membership::AboveThreshold => "skipped",
            None => "error",
        };
        w.write_record([
            fmt_float(r.parameter),
            fmt_float(r.energy),
            fmt_float(r.k),
            format!("{:?}", r.membership),
            outcome.to_string(),
            r.classification.map(|c| format!("{c:?}")).unwrap_or_default(),
            opt(r.t_stop),
        ])
        .map_err(std::io::Error::other)?;
    }
    w.flush()
}

pub fn cmd_verify(cfg: &ExperimentConfig, ctx: &Context) -> Result<SuiteReport, HarnessError> {
    let report = ctx.pool().install(|| crate::verify::run_suite(cfg));
    write_json(&ctx.out_dir(cfg)?.join("verify.json"), &report)?;
    let failed: Vec<String> = report
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.clone())
        .collect();
    if !failed.is_empty() {
        return Err(HarnessError::Suite(failed));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(membership: Membership, classification: Classification) -> DatumSummary {
        DatumSummary {
            index: 0,
            datum: DatumConfig::Gaussian {
                amplitude: 1.0,
                width: 1.0,
                phase: 0.0,
            },
            initial: FunctionalReport::from_integrals(5, 0.0, 0.0, 0.0, 0.0),
            membership,
            outcome: Some(Outcome::ReachedTFinal),
            t_stop: None,
            steps: 0,
            report: Some(OutcomeReport {
                classification,
                evidence: cnls_core::diagnostics::Evidence {
                    gradient_exceeded: false,
                    virial_concave: false,
                    critical_norm_halved: false,
                    st_norm_saturated: false,
                    exterior_decayed: false,
                },
                below_threshold: true,
                concavity: None,
                st_increment: None,
            }),
        }
    }

    #[test]
    fn gate_rules() {
        use Classification::*;
        use Membership::*;
        assert_eq!(gate_violations(&[summary(KMinus, DispersiveConfirmed)]).len(), 1);
        assert_eq!(gate_violations(&[summary(KPlus, BlowUpConfirmed)]).len(), 1);
        assert!(gate_violations(&[
            summary(KMinus, BlowUpConfirmed),
            summary(AboveThreshold, BlowUpConfirmed)
        ])
        .is_empty());
        assert!(gate_violations(&[summary(KMinus, Undecided), summary(KPlus, DispersiveConfirmed)]).is_empty());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(HarnessError::Grid(String::new()).exit_code(), 2);
        assert_eq!(HarnessError::Gate(vec![]).exit_code(), 4);
        assert_eq!(HarnessError::Suite(vec![]).exit_code(), 5);
        assert_eq!(HarnessError::Config(ConfigError::Invalid(String::new())).exit_code(), 1);
    }
}
