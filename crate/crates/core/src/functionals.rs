//! Mass, energy, the scaling derivative `K` and its parts, the ground state
//! `W` and the threshold `m = E^c(W)`.

use log::warn;
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::grid::{laplacian, GridError, GridRef, RadialField, RadialGrid};
use crate::quadrature::{gauss_legendre, integrate_interval, Accumulator};

/// The lower scaling exponent. It is named for completeness and never used.
pub const MU: f64 = 0.0;

/// `μ̄ = 4d/(d-1)`.
pub fn mu_bar(dim: usize) -> f64 {
    4.0 * dim as f64 / (dim as f64 - 1.0)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FunctionalError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid field description: {0}")]
    InvalidSpec(String),
    #[error("sampled field lives on a grid of dimension {field}, target grid has dimension {grid}")]
    DimensionMismatch { field: usize, grid: usize },
    #[error("sampled field lives on a different grid layout")]
    LayoutMismatch,
    #[error("sampled fields have no exact scaling")]
    NotClosedForm,
    #[error("threshold needs n >= 1024 and r_max >= 50, got n = {n}, r_max = {r_max}")]
    InadequateGrid { n: usize, r_max: f64 },
    #[error("ground-state residual {0:.3e} exceeds 1e-3; grid too coarse")]
    GridTooCoarse(f64),
}

/// Closed-form initial data, or samples on a grid.
#[derive(Debug, Clone)]
pub enum FieldSpec {
    /// `a e^{-r²/σ²}`
    Gaussian {
        amplitude: Complex64,
        width: f64,
    },
    /// `a e^{dλ} W(e^{2λ} r)`
    ScaledGroundState {
        amplitude: Complex64,
        lambda: f64,
    },
    Sampled(RadialField),
}

impl FieldSpec {
    pub fn gaussian(amplitude: f64, width: f64) -> Self {
        FieldSpec::Gaussian {
            amplitude: Complex64::new(amplitude, 0.0),
            width,
        }
    }

    pub fn ground_state(amplitude: f64, lambda: f64) -> Self {
        FieldSpec::ScaledGroundState {
            amplitude: Complex64::new(amplitude, 0.0),
            lambda,
        }
    }

    pub fn is_closed_form(&self) -> bool {
        !matches!(self, FieldSpec::Sampled(_))
    }

    pub fn validate(&self) -> Result<(), FunctionalError> {
        match self {
            FieldSpec::Gaussian { amplitude, width } => {
                if !amplitude.is_finite() {
                    return Err(FunctionalError::InvalidSpec("non-finite amplitude".into()));
                }
                if !width.is_finite() || *width <= 0.0 {
                    return Err(FunctionalError::InvalidSpec(format!(
                        "width must be positive, got {width}"
                    )));
                }
            }
            FieldSpec::ScaledGroundState { amplitude, lambda } => {
                if !amplitude.is_finite() || !lambda.is_finite() {
                    return Err(FunctionalError::InvalidSpec(
                        "non-finite ground-state parameters".into(),
                    ));
                }
            }
            FieldSpec::Sampled(_) => {}
        }
        Ok(())
    }

    /// Closed-form value at radius `r`; `None` for sampled fields.
    pub fn value_at(&self, dim: usize, r: f64) -> Option<Complex64> {
        match self {
            FieldSpec::Gaussian { amplitude, width } => {
                let s = r / width;
                Some(amplitude * (-s * s).exp())
            }
            FieldSpec::ScaledGroundState { amplitude, lambda } => {
                let lambda = *lambda;
                let factor = (dim as f64 * lambda).exp();
                Some(amplitude * factor * ground_state_profile(dim, (2.0 * lambda).exp() * r))
            }
            FieldSpec::Sampled(_) => None,
        }
    }
}

/// `W(r) = (1 + r²/(d(d-2)))^{-(d-2)/2}`.
pub fn ground_state_profile(dim: usize, r: f64) -> f64 {
    let d = dim as f64;
    (1.0 + r * r / (d * (d - 2.0))).powf(-(d - 2.0) / 2.0)
}

/// `W'(r) = -(r/d) (1 + r²/(d(d-2)))^{-d/2}`.
pub fn ground_state_slope(dim: usize, r: f64) -> f64 {
    let d = dim as f64;
    -(r / d) * (1.0 + r * r / (d * (d - 2.0))).powf(-d / 2.0)
}

pub fn evaluate(spec: &FieldSpec, grid: &GridRef) -> Result<RadialField, FunctionalError> {
    spec.validate()?;
    match spec {
        FieldSpec::Sampled(field) => {
            let source = field.grid();
            if source.dim() != grid.dim() {
                return Err(FunctionalError::DimensionMismatch {
                    field: source.dim(),
                    grid: grid.dim(),
                });
            }
            if !source.same_layout(grid) {
                return Err(FunctionalError::LayoutMismatch);
            }
            Ok(field.clone())
        }
        _ => {
            let dim = grid.dim();
            Ok(RadialField::from_fn(grid.clone(), |r| {
                spec.value_at(dim, r).expect("closed form")
            })?)
        }
    }
}

/// `φ^λ(x) = e^{dλ} φ(e^{2λ} x)` applied to the descriptor.
pub fn scale(spec: &FieldSpec, dim: usize, lambda: f64) -> Result<FieldSpec, FunctionalError> {
    spec.validate()?;
    if !lambda.is_finite() {
        return Err(FunctionalError::InvalidSpec(format!(
            "non-finite scaling parameter {lambda}"
        )));
    }
    match spec {
        FieldSpec::Gaussian { amplitude, width } => Ok(FieldSpec::Gaussian {
            amplitude: amplitude * (dim as f64 * lambda).exp(),
            width: width * (-2.0 * lambda).exp(),
        }),
        FieldSpec::ScaledGroundState { amplitude, lambda: mu } => Ok(FieldSpec::ScaledGroundState {
            amplitude: *amplitude,
            lambda: mu + lambda,
        }),
        FieldSpec::Sampled(_) => Err(FunctionalError::NotClosedForm),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalReport {
    pub mass: f64,
    pub energy: f64,
    pub critical_energy: f64,
    pub k: f64,
    pub k_quadratic: f64,
    pub k_nonlinear: f64,
    pub k_critical: f64,
    pub h: f64,
    pub grad_norm_sq: f64,
    pub norm_critical: f64,
    pub norm_subcritical: f64,
    pub momentum: Vec<f64>,
}

impl FunctionalReport {
    /// Assembles every functional from `∫|u|²`, `∫|∇u|²`, `∫|u|^{2*}` and `∫|u|^{p₂}`.
    pub fn from_integrals(dim: usize, l2: f64, grad: f64, crit: f64, sub: f64) -> Self {
        let d = dim as f64;
        let k_quadratic = 2.0 * grad;
        let k_nonlinear = -2.0 * crit + (2.0 * d / (d + 1.0)) * sub;
        let critical_energy = 0.5 * grad - (d - 2.0) / (2.0 * d) * crit;
        Self {
            mass: 0.5 * l2,
            energy: critical_energy + (d - 1.0) / (2.0 * d + 2.0) * sub,
            critical_energy,
            k: k_quadratic + k_nonlinear,
            k_quadratic,
            k_nonlinear,
            k_critical: k_quadratic - 2.0 * crit,
            h: (grad + crit) / (2.0 * d),
            grad_norm_sq: grad,
            norm_critical: crit,
            norm_subcritical: sub,
            momentum: vec![0.0; dim],
        }
    }
}

/// `(∫|u|², ∫|u|^{2*}, ∫|u|^{p₂})` by trapezoid quadrature.
pub(crate) fn potential_integrals(f: &RadialField) -> (f64, f64, f64) {
    let g = f.grid();
    let half_crit = 0.5 * g.critical_exponent();
    let half_sub = 0.5 * g.subcritical_exponent();
    let (mut l2, mut crit, mut sub) = (Accumulator::new(), Accumulator::new(), Accumulator::new());
    for (w, v) in g.weights().iter().zip(f.values()).skip(1) {
        let a = v.norm_sqr();
        if a == 0.0 {
            continue;
        }
        let log_a = a.ln();
        l2.add(w * a);
        crit.add(w * (half_crit * log_a).exp());
        sub.add(w * (half_sub * log_a).exp());
    }
    (l2.value(), crit.value(), sub.value())
}

/// Every functional of one field. Momentum is the exact zero vector because
/// its integrand is odd for radial fields.
pub fn report(f: &RadialField) -> FunctionalReport {
    let (l2, crit, sub) = potential_integrals(f);
    FunctionalReport::from_integrals(f.grid().dim(), l2, f.gradient_norm_sq(), crit, sub)
}

pub fn ground_state(grid: &GridRef) -> RadialField {
    if grid.dim() < 5 {
        warn!("the ground state is not square integrable in dimension {}", grid.dim());
    }
    let dim = grid.dim();
    RadialField::from_fn(grid.clone(), |r| Complex64::new(ground_state_profile(dim, r), 0.0))
        .expect("closed form is finite")
}

/// `max_{r <= r_max/2} |-ΔW - W^{(d+2)/(d-2)}| / max W^{(d+2)/(d-2)}` with the
/// central stencil. `W` peaks at the origin, so the normaliser is 1.
pub fn ground_state_residual(grid: &GridRef) -> f64 {
    let w = ground_state(grid);
    let lap = laplacian(&w);
    let d = grid.dim() as f64;
    let power = (d + 2.0) / (d - 2.0);
    let last = grid.index_at_or_beyond(0.5 * grid.r_max()).min(grid.n() - 2);
    (0..=last)
        .map(|i| (-lap.values()[i].re - w.values()[i].re.powf(power)).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdResult {
    pub m: f64,
    pub grad_w_norm_sq: f64,
    pub critical_norm_w: f64,
    pub sobolev_constant: f64,
    pub pde_residual: f64,
    pub kc_of_w: f64,
}

impl ThresholdResult {
    /// Relative gap between `m` and `(1/d)∫|∇W|²`.
    pub fn pohozaev_gap(&self, dim: usize) -> f64 {
        ((self.m - self.grad_w_norm_sq / dim as f64) / self.m).abs()
    }

    /// Relative gap between `m` and `(1/d)(C*)^{-d}`.
    pub fn sobolev_gap(&self, dim: usize) -> f64 {
        let from_constant = self.sobolev_constant.powi(-(dim as i32)) / dim as f64;
        ((self.m - from_constant) / self.m).abs()
    }

    pub fn invariants_hold(&self, dim: usize) -> bool {
        self.pohozaev_gap(dim) <= 1e-10
            && self.sobolev_gap(dim) <= 1e-4
            && self.kc_of_w.abs() <= 1e-4 * self.grad_w_norm_sq
    }
}

/// `∫_{R^d} |∇W|²` and `∫_{R^d} W^{2*}` from the closed form: Gauss–Legendre
/// on every grid cell, then `[r_max, ∞)` mapped onto `(0, 1]` by `s = r_max/r`.
pub fn ground_state_integrals(grid: &RadialGrid) -> (f64, f64) {
    let dim = grid.dim();
    let sigma = grid.sphere_area();
    let crit = grid.critical_exponent();
    let radial = |r: f64| r.powi(dim as i32 - 1);
    let grad_density = |r: f64| radial(r) * ground_state_slope(dim, r).powi(2);
    let crit_density = |r: f64| radial(r) * ground_state_profile(dim, r).powf(crit);

    let (x4, w4) = gauss_legendre(4);
    let (x32, w32) = gauss_legendre(32);
    let mut grad = Accumulator::new();
    let mut pot = Accumulator::new();
    for pair in grid.nodes().windows(2) {
        grad.add(integrate_interval(&grad_density, pair[0], pair[1], &x4, &w4));
        pot.add(integrate_interval(&crit_density, pair[0], pair[1], &x4, &w4));
    }
    let r_max = grid.r_max();
    let tail = |density: &dyn Fn(f64) -> f64| {
        let mapped = |s: f64| density(r_max / s) * r_max / (s * s);
        let panels = 8;
        (0..panels)
            .map(|k| {
                let a = k as f64 / panels as f64;
                let b = (k + 1) as f64 / panels as f64;
                integrate_interval(&mapped, a, b, &x32, &w32)
            })
            .sum::<f64>()
    };
    grad.add(tail(&grad_density));
    pot.add(tail(&crit_density));
    (sigma * grad.value(), sigma * pot.value())
}

pub fn threshold(grid: &GridRef) -> Result<ThresholdResult, FunctionalError> {
    if grid.n() < 1024 || grid.r_max() < 50.0 {
        return Err(FunctionalError::InadequateGrid {
            n: grid.n(),
            r_max: grid.r_max(),
        });
    }
    let pde_residual = ground_state_residual(grid);
    if pde_residual > 1e-3 {
        return Err(FunctionalError::GridTooCoarse(pde_residual));
    }
    let d = grid.dim() as f64;
    let (grad, crit) = ground_state_integrals(grid);
    Ok(ThresholdResult {
        m: 0.5 * grad - (d - 2.0) / (2.0 * d) * crit,
        grad_w_norm_sq: grad,
        critical_norm_w: crit,
        sobolev_constant: crit.powf(1.0 / grid.critical_exponent()) / grad.sqrt(),
        pde_residual,
        kc_of_w: 2.0 * (grad - crit),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Membership {
    KPlus,
    KMinus,
    AboveThreshold,
}

pub fn classify_membership(rep: &FunctionalReport, m: f64) -> Membership {
    if rep.energy < m {
        if rep.k >= 0.0 {
            Membership::KPlus
        } else {
            Membership::KMinus
        }
    } else {
        Membership::AboveThreshold
    }
}
