//! The scaling path `j(λ) = E(φ^λ)` with `φ^λ = e^{dλ} φ(e^{2λ} x)`, roots of
//! `K` along it, the two-sided bounds on `K` below the threshold, and
//! sampled infima of `H` over the constraint sets.

use serde::Serialize;
use thiserror::Error;

use crate::functionals::{evaluate, mu_bar, report, scale, FieldSpec, FunctionalError, FunctionalReport};
use crate::grid::GridRef;

#[derive(Debug, Error)]
pub enum VariationalError {
    #[error(transparent)]
    Field(#[from] FunctionalError),
    #[error("K vanishes at the base point, no root to look for")]
    ZeroK,
    #[error("K has no sign change along the scaling path in [{lo}, {hi}]")]
    NoRoot { lo: f64, hi: f64 },
    #[error("root near lambda = {lambda} is not resolved on this grid")]
    Unresolved { lambda: f64 },
    #[error("energy {energy} is not below the threshold {m}")]
    AboveThreshold { energy: f64, m: f64 },
    #[error("no family member satisfies the constraint")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingPathPoint {
    pub lambda: f64,
    pub j: f64,
    pub jp: f64,
    pub jpp_formula: f64,
    pub jpp_fd: f64,
    pub mass: f64,
}

pub const FD_STEP: f64 = 1e-4;

fn scaled_report(spec: &FieldSpec, grid: &GridRef, lambda: f64) -> Result<FunctionalReport, FunctionalError> {
    let s = scale(spec, grid.dim(), lambda)?;
    Ok(report(&evaluate(&s, grid)?))
}

/// `j'' = μ̄ j' - 8 e^{4λ} ‖∇φ‖² / (d-1) - 8d e^{4dλ/(d-2)} ‖φ‖^{2*}_{2*} / ((d-1)(d-2))`
pub fn second_derivative_formula(dim: usize, lambda: f64, jp: f64, base: &FunctionalReport) -> f64 {
    let d = dim as f64;
    mu_bar(dim) * jp
        - 8.0 * (4.0 * lambda).exp() * base.grad_norm_sq / (d - 1.0)
        - 8.0 * d * (4.0 * d * lambda / (d - 2.0)).exp() * base.norm_critical / ((d - 1.0) * (d - 2.0))
}

pub fn scaling_path(
    spec: &FieldSpec,
    grid: &GridRef,
    lambdas: &[f64],
) -> Result<Vec<ScalingPathPoint>, VariationalError> {
    if !spec.is_closed_form() {
        return Err(FunctionalError::NotClosedForm.into());
    }
    let base = report(&evaluate(spec, grid)?);
    lambdas
        .iter()
        .map(|&lambda| {
            let here = scaled_report(spec, grid, lambda)?;
            let ahead = scaled_report(spec, grid, lambda + FD_STEP)?;
            let behind = scaled_report(spec, grid, lambda - FD_STEP)?;
            Ok(ScalingPathPoint {
                lambda,
                j: here.energy,
                jp: here.k,
                jpp_formula: second_derivative_formula(grid.dim(), lambda, here.k, &base),
                jpp_fd: (ahead.k - behind.k) / (2.0 * FD_STEP),
                mass: here.mass,
            })
        })
        .collect()
}

/// `K(φ^λ)` from the base integrals and the exact scaling exponents.
pub fn k_by_scaling(dim: usize, base: &FunctionalReport, lambda: f64) -> f64 {
    let d = dim as f64;
    2.0 * (4.0 * lambda).exp() * base.grad_norm_sq - 2.0 * (4.0 * d * lambda / (d - 2.0)).exp() * base.norm_critical
        + 2.0 * d / (d + 1.0) * (4.0 * d * lambda / (d - 1.0)).exp() * base.norm_subcritical
}

pub const LAMBDA_BRACKET: f64 = 20.0;
const LAMBDA_RESOLUTION: f64 = 1e-12;

fn bisect<F: FnMut(f64) -> Result<f64, VariationalError>>(
    mut lo: f64,
    mut hi: f64,
    mut k: F,
) -> Result<f64, VariationalError> {
    let mut k_lo = k(lo)?;
    while hi - lo > LAMBDA_RESOLUTION {
        let mid = 0.5 * (lo + hi);
        let k_mid = k(mid)?;
        if k_mid == 0.0 {
            return Ok(mid);
        }
        if (k_mid > 0.0) == (k_lo > 0.0) {
            lo = mid;
            k_lo = k_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Root of `λ ↦ K(φ^λ)`: backward in `[-20, 0]` when `K(φ) < 0`, forward in
/// `[0, 20]` when `K(φ) > 0`.
///
/// The root is located on the scaling law first, then refined with `K`
/// evaluated on the grid, so the returned value is a root of the discrete
/// functional.
pub fn find_lambda0(spec: &FieldSpec, grid: &GridRef) -> Result<f64, VariationalError> {
    if !spec.is_closed_form() {
        return Err(FunctionalError::NotClosedForm.into());
    }
    let dim = grid.dim();
    let base = report(&evaluate(spec, grid)?);
    if base.k == 0.0 {
        return Err(VariationalError::ZeroK);
    }
    let (lo, hi) = if base.k < 0.0 {
        (-LAMBDA_BRACKET, 0.0)
    } else {
        (0.0, LAMBDA_BRACKET)
    };
    let samples = 4000;
    let at = |j: usize| lo + (hi - lo) * j as f64 / samples as f64;
    let start_sign = base.k > 0.0;
    let mut guess = None;
    // Walk away from the base point so the root nearest to it is found.
    for j in 0..samples {
        let (a, b) = if base.k < 0.0 {
            (at(samples - j - 1), at(samples - j))
        } else {
            (at(j), at(j + 1))
        };
        let outer = if base.k < 0.0 { a } else { b };
        if (k_by_scaling(dim, &base, outer) > 0.0) != start_sign {
            guess = Some(bisect(a, b, |l| Ok(k_by_scaling(dim, &base, l)))?);
            break;
        }
    }
    let guess = guess.ok_or(VariationalError::NoRoot { lo, hi })?;

    let grid_k = |l: f64| -> Result<f64, VariationalError> { Ok(scaled_report(spec, grid, l)?.k) };
    let mut width = 1e-3;
    while width < 1.0 {
        let (a, b) = (guess - width, guess + width);
        let (ka, kb) = (grid_k(a)?, grid_k(b)?);
        if ka == 0.0 {
            return Ok(a);
        }
        if (ka > 0.0) != (kb > 0.0) {
            return bisect(a, b, grid_k);
        }
        width *= 4.0;
    }
    Err(VariationalError::Unresolved { lambda: guess })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Branch {
    Negative,
    NonNegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    pub k: f64,
    pub e: f64,
    pub m: f64,
    pub branch: Branch,
    pub bound_value: f64,
    pub satisfied: bool,
}

pub const BOUND_SLACK: f64 = 1e-6;

/// For `E(φ) < m`:
/// `K ≤ -μ̄(m - E)` when `K < 0`, and
/// `K ≥ min(μ̄(m - E), 2‖∇φ‖²/(2d-3) + 2d‖φ‖^{p₂}_{p₂}/((d+1)(2d-3)))` otherwise.
pub fn check_threshold_bounds(rep: &FunctionalReport, m: f64, dim: usize) -> Result<BoundReport, VariationalError> {
    if !(rep.energy < m) {
        return Err(VariationalError::AboveThreshold { energy: rep.energy, m });
    }
    let d = dim as f64;
    let gap = mu_bar(dim) * (m - rep.energy);
    let slack = |a: f64, b: f64| BOUND_SLACK * a.abs().max(b.abs());
    let (branch, bound_value, satisfied) = if rep.k < 0.0 {
        let bound = -gap;
        (Branch::Negative, bound, rep.k <= bound + slack(rep.k, bound))
    } else {
        let coercive =
            2.0 * rep.grad_norm_sq / (2.0 * d - 3.0) + 2.0 * d * rep.norm_subcritical / ((d + 1.0) * (2.0 * d - 3.0));
        let bound = gap.min(coercive);
        (Branch::NonNegative, bound, rep.k >= bound - slack(rep.k, bound))
    };
    Ok(BoundReport {
        k: rep.k,
        e: rep.energy,
        m,
        branch,
        bound_value,
        satisfied,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Constraint {
    /// `K(φ) ≤ 0`
    KLe0,
    /// `K^c(φ) ≤ 0`
    KcLe0,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Infimum {
    pub value: f64,
    /// Index of the minimizing family member.
    pub argmin: usize,
    pub admissible: usize,
}

pub fn sampled_infimum(
    family: &[FieldSpec],
    grid: &GridRef,
    constraint: Constraint,
) -> Result<Infimum, VariationalError> {
    let mut best: Option<Infimum> = None;
    let mut admissible = 0;
    for (i, spec) in family.iter().enumerate() {
        let f = evaluate(spec, grid)?;
        if f.is_zero() {
            continue;
        }
        let rep = report(&f);
        let value = match constraint {
            Constraint::KLe0 => rep.k,
            Constraint::KcLe0 => rep.k_critical,
        };
        if value > 0.0 || !rep.h.is_finite() {
            continue;
        }
        admissible += 1;
        if best.is_none_or(|b| rep.h < b.value) {
            best = Some(Infimum {
                value: rep.h,
                argmin: i,
                admissible: 0,
            });
        }
    }
    best.map(|b| Infimum { admissible, ..b }).ok_or(VariationalError::Empty)
}
