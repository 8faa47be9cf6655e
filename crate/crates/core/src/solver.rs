//! Strang splitting: half a nonlinear phase rotation, a Crank–Nicolson step
//! for the free flow, then the other half of the rotation.
//!
//! The nonlinearity only rotates the phase, so its sub-flow is solved
//! exactly. Crank–Nicolson uses the flux-form Laplacian of the grid, which is
//! self-adjoint for the quadrature weights, so each linear step preserves
//! the discrete mass to rounding.

use log::debug;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cutoff::CutoffKind;
use crate::diagnostics::{
    band_mass, exterior_energy, interior_critical_mass, spacetime_densities, spacetime_norms_through, virial,
    DiagnosticsError, SpacetimeNorms, VirialSample,
};
use crate::functionals::{evaluate, report, FieldSpec, FunctionalError, FunctionalReport};
use crate::grid::{critical_exponent, GridRef, RadialField};
use crate::tridiag::{Factorization, TridiagError, Tridiagonal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_final: f64,
    pub blowup_factor: f64,
    pub dt_min: f64,
    pub observe_every: usize,
    /// Relative to the largest initial modulus.
    pub boundary_tol: f64,
    pub sponge: bool,
    /// Largest nonlinear phase increment `dt · max |u|^{4/(d-2)}` allowed in
    /// one step; the step is halved until it holds.
    pub max_phase_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_final: 1.0,
            blowup_factor: 1e4,
            dt_min: 1e-9,
            observe_every: 10,
            boundary_tol: 1e-6,
            sponge: false,
            max_phase_step: 0.05,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |msg: String| Err(SolverError::InvalidConfig(msg));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return bad(format!("t_final must be positive, got {}", self.t_final));
        }
        if self.dt > self.t_final {
            return bad(format!("dt {} exceeds t_final {}", self.dt, self.t_final));
        }
        if !(self.dt_min > 0.0 && self.dt_min < self.dt) {
            return bad(format!("dt_min must lie in (0, dt), got {}", self.dt_min));
        }
        if !(self.blowup_factor > 1.0) {
            return bad(format!("blowup_factor must exceed 1, got {}", self.blowup_factor));
        }
        if self.observe_every == 0 {
            return bad("observe_every must be at least 1".into());
        }
        if !(self.boundary_tol >= 0.0) {
            return bad(format!("boundary_tol must be non-negative, got {}", self.boundary_tol));
        }
        if !(self.max_phase_step > 0.0) {
            return bad(format!("max_phase_step must be positive, got {}", self.max_phase_step));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    BlowUp { t_stop: f64 },
    ReachedTFinal,
    BoundaryContaminated { t_stop: f64 },
    StepUnderflow { t_stop: f64 },
}

impl Outcome {
    pub fn t_stop(&self) -> Option<f64> {
        match self {
            Outcome::BlowUp { t_stop }
            | Outcome::BoundaryContaminated { t_stop }
            | Outcome::StepUnderflow { t_stop } => Some(*t_stop),
            Outcome::ReachedTFinal => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Field(#[from] FunctionalError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("non-finite input to the nonlinear step at node {0}")]
    NonFiniteInput(usize),
    #[error("Crank-Nicolson factorization failed: {0}")]
    Factorization(#[from] TridiagError),
    #[error("initial data violates the wall: |u(r_max)| = {value:e} above tolerance {tol:e}")]
    WallViolation { value: f64, tol: f64 },
    #[error("solution became non-finite at t = {t}")]
    Breakdown { t: f64, partial: Box<SimulationTrace> },
}

#[derive(Debug, Clone)]
pub enum InitialData {
    Spec(FieldSpec),
    Field(RadialField),
}

impl From<FieldSpec> for InitialData {
    fn from(spec: FieldSpec) -> Self {
        InitialData::Spec(spec)
    }
}

impl From<RadialField> for InitialData {
    fn from(field: RadialField) -> Self {
        InitialData::Field(field)
    }
}

/// Closed forms are evaluated and confined inside `0.9 r_max`; sampled
/// fields are used as given.
pub fn prepare_initial(u0: &InitialData, grid: &GridRef) -> Result<RadialField, SolverError> {
    Ok(match u0 {
        InitialData::Spec(FieldSpec::Sampled(f)) => evaluate(&FieldSpec::Sampled(f.clone()), grid)?,
        InitialData::Spec(spec) => evaluate(spec, grid)?.confined(),
        InitialData::Field(f) => evaluate(&FieldSpec::Sampled(f.clone()), grid)?,
    })
}

#[derive(Debug, Clone)]
pub struct SimulationTrace {
    pub dim: usize,
    pub virial_radii: Vec<f64>,
    pub times: Vec<f64>,
    pub step_sizes: Vec<f64>,
    pub reports: Vec<FunctionalReport>,
    /// One row per observation, one sample per virial radius, quadratic-core cutoff.
    pub virials: Vec<Vec<VirialSample>>,
    /// One row per observation, exterior energy at each virial radius.
    pub exterior: Vec<Vec<f64>>,
    /// `∫_{r <= r_max/10} |u|^{2*}` per observation.
    pub interior_critical: Vec<f64>,
    /// `(∫|u|^{q1}, ∫|u|^{q2})` per observation.
    pub spacetime_densities: Vec<[f64; 2]>,
    pub band_mass: Vec<f64>,
    /// `∫|∇u|²` after every step, with the step end times.
    pub step_times: Vec<f64>,
    pub grad_sq_series: Vec<f64>,
    pub steps: usize,
    pub sponge: bool,
    pub outcome: Outcome,
    pub final_state: RadialField,
}

impl SimulationTrace {
    pub fn critical_exponent(&self) -> f64 {
        critical_exponent(self.dim)
    }

    pub fn spacetime_norms_through(&self, count: usize) -> Result<SpacetimeNorms, DiagnosticsError> {
        spacetime_norms_through(self, self.final_state.grid(), count)
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }
}

/// `u ← u exp(i dt (|u|^{4/(d-2)} - |u|^{4/(d-1)}))` at every node.
pub fn nonlinear_phase_step(f: &RadialField, dt: f64) -> Result<RadialField, SolverError> {
    let mut values = f.values().to_vec();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(SolverError::NonFiniteInput(i));
    }
    rotate_phase(&mut values, dt, f.grid().dim(), None);
    Ok(RadialField::from_parts_unchecked(f.grid().clone(), values))
}

/// Returns the largest `| |u|^{4/(d-2)} - |u|^{4/(d-1)} |`, which the rotation
/// leaves unchanged.
fn rotate_phase(values: &mut [Complex64], dt: f64, dim: usize, damping: Option<&[f64]>) -> f64 {
    let d = dim as f64;
    let (p1, p2) = (2.0 / (d - 2.0), 2.0 / (d - 1.0));
    let mut max_rate: f64 = 0.0;
    for (i, v) in values.iter_mut().enumerate() {
        let a = v.norm_sqr();
        if a > 0.0 {
            let log_a = a.ln();
            let rate = (p1 * log_a).exp() - (p2 * log_a).exp();
            max_rate = max_rate.max(rate.abs());
            *v *= Complex64::from_polar(1.0, dt * rate);
        }
        if let Some(gamma) = damping {
            if gamma[i] > 0.0 {
                *v *= (-dt * gamma[i]).exp();
            }
        }
    }
    max_rate
}

/// Crank–Nicolson matrices for one step size.
#[derive(Debug, Clone)]
pub struct LinearPropagator {
    dt: f64,
    explicit: Tridiagonal,
    implicit: Factorization,
}

impl LinearPropagator {
    pub fn new(grid: &GridRef, dt: f64) -> Result<Self, SolverError> {
        let n = grid.n();
        let tau = Complex64::new(0.0, 0.5 * dt);
        let zero = Complex64::new(0.0, 0.0);
        let one = Complex64::new(1.0, 0.0);
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let h2 = grid.dr() * grid.dr();
        let origin = 2.0 * grid.dim() as f64 / h2;
        diag[0] = -origin;
        upper[0] = origin;
        let b = grid.couplings();
        let cells = grid.cell_volumes();
        for i in 1..n - 1 {
            lower[i] = b[i - 1] / cells[i];
            upper[i] = b[i] / cells[i];
            diag[i] = -(b[i - 1] + b[i]) / cells[i];
        }
        let build = |sign: f64| -> Tridiagonal {
            let s = tau * sign;
            let mut t = Tridiagonal {
                lower: lower.iter().map(|x| s * x).collect(),
                diag: diag.iter().map(|x| one + s * x).collect(),
                upper: upper.iter().map(|x| s * x).collect(),
            };
            t.lower[n - 1] = zero;
            t.upper[n - 1] = zero;
            t.diag[n - 1] = if sign > 0.0 { zero } else { one };
            t
        };
        let explicit = build(1.0);
        let implicit = build(-1.0).factor()?;
        Ok(Self { dt, explicit, implicit })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn apply(&self, values: &mut [Complex64], scratch: &mut [Complex64]) {
        self.explicit.apply(values, scratch);
        self.implicit.solve_in_place(scratch);
        values.copy_from_slice(scratch);
    }
}

pub fn linear_step(f: &RadialField, dt: f64) -> Result<RadialField, SolverError> {
    let prop = LinearPropagator::new(f.grid(), dt)?;
    let mut values = f.values().to_vec();
    let mut scratch = values.clone();
    prop.apply(&mut values, &mut scratch);
    Ok(RadialField::from_parts_unchecked(f.grid().clone(), values))
}

/// One Strang step on raw samples.
pub struct StrangStepper {
    grid: GridRef,
    linear: LinearPropagator,
    damping: Option<Vec<f64>>,
    scratch: Vec<Complex64>,
}

impl StrangStepper {
    pub fn new(grid: &GridRef, dt: f64, sponge: bool) -> Result<Self, SolverError> {
        let damping = sponge.then(|| sponge_profile(grid));
        Ok(Self {
            grid: grid.clone(),
            linear: LinearPropagator::new(grid, dt)?,
            damping,
            scratch: vec![Complex64::new(0.0, 0.0); grid.n()],
        })
    }

    pub fn dt(&self) -> f64 {
        self.linear.dt()
    }

    pub fn set_dt(&mut self, dt: f64) -> Result<(), SolverError> {
        if dt != self.linear.dt() {
            self.linear = LinearPropagator::new(&self.grid, dt)?;
        }
        Ok(())
    }

    /// Advances by `dt` and returns the largest nonlinear phase rate afterwards.
    pub fn step(&mut self, values: &mut [Complex64]) -> f64 {
        let half = 0.5 * self.linear.dt();
        let dim = self.grid.dim();
        rotate_phase(values, half, dim, self.damping.as_deref());
        self.linear.apply(values, &mut self.scratch);
        rotate_phase(values, half, dim, self.damping.as_deref())
    }
}

/// Quadratic ramp over the outer tenth of the domain.
fn sponge_profile(grid: &GridRef) -> Vec<f64> {
    let start = 0.9 * grid.r_max();
    let width = 0.1 * grid.r_max();
    grid.nodes()
        .iter()
        .map(|&r| {
            if r > start {
                5.0 * ((r - start) / width).powi(2)
            } else {
                0.0
            }
        })
        .collect()
}

fn max_phase_rate(values: &[Complex64], dim: usize) -> f64 {
    let d = dim as f64;
    let (p1, p2) = (2.0 / (d - 2.0), 2.0 / (d - 1.0));
    values
        .iter()
        .map(|v| {
            let a = v.norm_sqr();
            if a > 0.0 {
                let l = a.ln();
                ((p1 * l).exp() - (p2 * l).exp()).abs()
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

struct Recorder {
    trace: SimulationTrace,
    interior_radius: f64,
}

impl Recorder {
    fn record(&mut self, field: &RadialField, t: f64, dt: f64) -> Result<(), SolverError> {
        if self.trace.times.last() == Some(&t) {
            return Ok(());
        }
        let rep = report(field);
        let mut virials = Vec::with_capacity(self.trace.virial_radii.len());
        let mut exterior = Vec::with_capacity(self.trace.virial_radii.len());
        for &radius in &self.trace.virial_radii {
            virials.push(virial(field, radius, CutoffKind::QuadraticCore)?);
            exterior.push(exterior_energy(field, radius)?);
        }
        let tr = &mut self.trace;
        tr.times.push(t);
        tr.step_sizes.push(dt);
        tr.reports.push(rep);
        tr.virials.push(virials);
        tr.exterior.push(exterior);
        tr.interior_critical
            .push(interior_critical_mass(field, self.interior_radius));
        tr.spacetime_densities.push(spacetime_densities(field));
        tr.band_mass.push(band_mass(field));
        Ok(())
    }
}

pub fn evolve(
    u0: impl Into<InitialData>,
    grid: &GridRef,
    cfg: &SolverConfig,
    virial_radii: &[f64],
) -> Result<SimulationTrace, SolverError> {
    cfg.validate()?;
    let initial = prepare_initial(&u0.into(), grid)?;
    let wall = initial.values()[grid.n() - 1].norm();
    let tol = cfg.boundary_tol * initial.max_modulus();
    if wall > tol {
        return Err(SolverError::WallViolation { value: wall, tol });
    }
    let mut values = initial.values().to_vec();
    values[grid.n() - 1] = Complex64::new(0.0, 0.0);
    let dim = grid.dim();

    let mut rec = Recorder {
        trace: SimulationTrace {
            dim,
            virial_radii: virial_radii.to_vec(),
            times: Vec::new(),
            step_sizes: Vec::new(),
            reports: Vec::new(),
            virials: Vec::new(),
            exterior: Vec::new(),
            interior_critical: Vec::new(),
            spacetime_densities: Vec::new(),
            band_mass: Vec::new(),
            step_times: Vec::new(),
            grad_sq_series: Vec::new(),
            steps: 0,
            sponge: cfg.sponge,
            outcome: Outcome::ReachedTFinal,
            final_state: initial.clone(),
        },
        interior_radius: grid.r_max() / 10.0,
    };
    let field_of = |v: &[Complex64]| RadialField::from_parts_unchecked(grid.clone(), v.to_vec());

    let mut dt = cfg.dt;
    let mut t = 0.0;
    rec.record(&initial, t, dt)?;
    let mass0 = rec.trace.reports[0].mass;
    let band0 = rec.trace.band_mass[0];
    let grad0 = initial.gradient_norm_sq();
    let mut grad_ref = grad0;
    let mut rate = max_phase_rate(&values, dim);
    let mut stepper = StrangStepper::new(grid, dt, cfg.sponge)?;

    let outcome = loop {
        if t >= cfg.t_final {
            break Outcome::ReachedTFinal;
        }
        while dt * rate > cfg.max_phase_step && dt >= cfg.dt_min {
            dt *= 0.5;
        }
        if dt < cfg.dt_min {
            rec.record(&field_of(&values), t, dt)?;
            break Outcome::StepUnderflow { t_stop: t };
        }
        let remaining = cfg.t_final - t;
        let last = remaining <= dt * (1.0 + 1e-6);
        let h = if last { remaining } else { dt };
        stepper.set_dt(h)?;
        rate = stepper.step(&mut values);
        t = if last { cfg.t_final } else { t + h };
        rec.trace.steps += 1;

        if values.iter().any(|v| !v.is_finite()) {
            let mut partial = rec.trace;
            partial.outcome = Outcome::StepUnderflow { t_stop: t };
            return Err(SolverError::Breakdown {
                t,
                partial: Box::new(partial),
            });
        }
        let grad = grid.dirichlet_form(&values);
        rec.trace.step_times.push(t);
        rec.trace.grad_sq_series.push(grad);

        if grad0 > 0.0 && grad >= cfg.blowup_factor * grad0 {
            rec.record(&field_of(&values), t, h)?;
            break Outcome::BlowUp { t_stop: t };
        }
        if grad >= 2.0 * grad_ref && grad > 0.0 {
            dt *= 0.5;
            grad_ref = grad;
            debug!("t = {t:.6e}: gradient doubled, dt -> {dt:e}");
            if dt < cfg.dt_min {
                rec.record(&field_of(&values), t, h)?;
                break Outcome::StepUnderflow { t_stop: t };
            }
        }
        if rec.trace.steps.is_multiple_of(cfg.observe_every) || last {
            let field = field_of(&values);
            rec.record(&field, t, h)?;
            if !cfg.sponge {
                let band = *rec.trace.band_mass.last().unwrap();
                if band - band0 > 1e-3 * mass0 {
                    break Outcome::BoundaryContaminated { t_stop: t };
                }
            }
            if dt < cfg.dt && grad <= grad_ref && 2.0 * dt * rate <= 0.5 * cfg.max_phase_step {
                dt = (2.0 * dt).min(cfg.dt);
            }
            grad_ref = grad;
        }
    };
    rec.trace.outcome = outcome;
    rec.trace.final_state = field_of(&values);
    Ok(rec.trace)
}
