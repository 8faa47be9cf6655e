//! Localized virial moments, exterior energy, discrete space-time norms and
//! the finite-time outcome classifier.
//!
//! Gradient terms are face sums with the same couplings the time stepper
//! uses, so the virial rates agree with differences of the recorded moments
//! up to time discretization only.

use serde::Serialize;
use thiserror::Error;

use crate::cutoff::CutoffKind;
use crate::functionals::{potential_integrals, FunctionalReport};
use crate::grid::{GridRef, RadialField};
use crate::quadrature::Accumulator;
use crate::solver::{Outcome, SimulationTrace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("virial radius {radius} outside (0, {limit}]")]
    RadiusOutOfRange { radius: f64, limit: f64 },
    #[error("exterior radius {radius} outside (0, {r_max})")]
    ExteriorRadius { radius: f64, r_max: f64 },
    #[error("space-time norms need at least two observations, got {0}")]
    TooFewObservations(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VirialSample {
    pub radius: f64,
    pub cutoff: CutoffKind,
    pub v: f64,
    pub dt_v: f64,
    pub dt2_v: f64,
    /// `4K(u)`
    pub k_term: f64,
    /// `dt2_v - k_term`
    pub tail_term: f64,
    /// Upper bound for `tail_term` from integrals over `r >= R`; only for the
    /// quadratic-core family, where `φ_R = r²` inside the ball.
    pub tail_bound: Option<f64>,
}

pub fn virial(f: &RadialField, radius: f64, cutoff: CutoffKind) -> Result<VirialSample, DiagnosticsError> {
    let g = f.grid();
    let limit = g.r_max() / 3.0;
    if !(radius > 0.0 && radius <= limit * (1.0 + 1e-12)) {
        return Err(DiagnosticsError::RadiusOutOfRange { radius, limit });
    }
    let dim = g.dim();
    let d = dim as f64;
    let u = f.values();
    let nodes = g.nodes();
    let half_crit = 0.5 * g.critical_exponent();
    let half_sub = 0.5 * g.subcritical_exponent();

    let phi: Vec<_> = nodes.iter().map(|&r| cutoff.evaluate(dim, radius, r)).collect();

    let mut v = Accumulator::new();
    let mut potential = Accumulator::new();
    let mut ann_mass = Accumulator::new();
    let mut ext_crit = Accumulator::new();
    let mut ext_sub = Accumulator::new();
    for i in 1..g.n() {
        let a = u[i].norm_sqr();
        if a == 0.0 {
            continue;
        }
        let w = g.weights()[i];
        let log_a = a.ln();
        let crit = (half_crit * log_a).exp();
        let sub = (half_sub * log_a).exp();
        let c = &phi[i];
        v.add(w * c.phi * a);
        potential.add(w * (-c.bilaplacian * a - 4.0 / d * c.laplacian * crit + 4.0 / (d + 1.0) * c.laplacian * sub));
        let r = nodes[i];
        if r >= radius {
            if r <= cutoff.support() * radius {
                ann_mass.add(w * a);
            }
            ext_crit.add(w * crit);
            ext_sub.add(w * sub);
        }
    }

    let mut first = Accumulator::new();
    let mut hessian = Accumulator::new();
    for (i, b) in g.couplings().iter().enumerate() {
        let (lo, hi) = (u[i], u[i + 1]);
        first.add(b * (phi[i + 1].phi - phi[i].phi) * (hi.conj() * lo).im);
        let face = 0.5 * (nodes[i] + nodes[i + 1]);
        let d2 = cutoff.evaluate(dim, radius, face).d2;
        hessian.add(b * d2 * (hi - lo).norm_sqr());
    }

    let (l2, crit, sub) = potential_integrals(f);
    let rep = FunctionalReport::from_integrals(dim, l2, f.gradient_norm_sq(), crit, sub);
    let dt2_v = 4.0 * hessian.value() + potential.value();
    let k_term = 4.0 * rep.k;
    let tail_bound = match cutoff {
        CutoffKind::QuadraticCore => {
            let bilap = cutoff.bilaplacian_bound(dim) / (radius * radius);
            let defect = cutoff.laplacian_defect_bound(dim);
            Some(bilap * ann_mass.value() + defect * (4.0 / d * ext_crit.value() + 4.0 / (d + 1.0) * ext_sub.value()))
        }
        CutoffKind::FlatTop => None,
    };
    Ok(VirialSample {
        radius,
        cutoff,
        v: v.value(),
        dt_v: -2.0 * first.value(),
        dt2_v,
        k_term,
        tail_term: dt2_v - k_term,
        tail_bound,
    })
}

/// `∫_{r >= R} (|∇u|² + |u|^{2*} + |u|^{p₂})`.
pub fn exterior_energy(f: &RadialField, radius: f64) -> Result<f64, DiagnosticsError> {
    let g = f.grid();
    if !(radius > 0.0 && radius < g.r_max()) {
        return Err(DiagnosticsError::ExteriorRadius {
            radius,
            r_max: g.r_max(),
        });
    }
    let u = f.values();
    let nodes = g.nodes();
    let half_crit = 0.5 * g.critical_exponent();
    let half_sub = 0.5 * g.subcritical_exponent();
    let mut acc = Accumulator::new();
    for (i, b) in g.couplings().iter().enumerate() {
        if 0.5 * (nodes[i] + nodes[i + 1]) >= radius {
            acc.add(b * (u[i + 1] - u[i]).norm_sqr());
        }
    }
    for i in g.index_at_or_beyond(radius).max(1)..g.n() {
        let a = u[i].norm_sqr();
        if a > 0.0 {
            acc.add(g.weights()[i] * (a.powf(half_crit) + a.powf(half_sub)));
        }
    }
    Ok(acc.value())
}

/// `∫_{r <= R} |u|^{2*}`.
pub fn interior_critical_mass(f: &RadialField, radius: f64) -> f64 {
    let g = f.grid();
    let half_crit = 0.5 * g.critical_exponent();
    let mut acc = Accumulator::new();
    for i in 1..g.n() {
        if g.nodes()[i] > radius {
            break;
        }
        acc.add(g.weights()[i] * f.values()[i].norm_sqr().powf(half_crit));
    }
    acc.value()
}

/// Half the `L²` mass carried by `r >= 0.9 r_max`.
pub fn band_mass(f: &RadialField) -> f64 {
    let g = f.grid();
    let start = g.index_at_or_beyond(0.9 * g.r_max()).max(1);
    let mut acc = Accumulator::new();
    for i in start..g.n() {
        acc.add(g.weights()[i] * f.values()[i].norm_sqr());
    }
    0.5 * acc.value()
}

/// Space-time Lebesgue exponents `2(d+2)/(d-2)` and `2(d+2)/(d-1)`.
pub fn spacetime_exponents(dim: usize) -> (f64, f64) {
    let d = dim as f64;
    (2.0 * (d + 2.0) / (d - 2.0), 2.0 * (d + 2.0) / (d - 1.0))
}

/// `(∫|u|^{q1}, ∫|u|^{q2})` at one instant.
pub fn spacetime_densities(f: &RadialField) -> [f64; 2] {
    let g = f.grid();
    let (q1, q2) = spacetime_exponents(g.dim());
    let (mut a1, mut a2) = (Accumulator::new(), Accumulator::new());
    for i in 1..g.n() {
        let a = f.values()[i].norm_sqr();
        if a > 0.0 {
            let log_a = a.ln();
            a1.add(g.weights()[i] * (0.5 * q1 * log_a).exp());
            a2.add(g.weights()[i] * (0.5 * q2 * log_a).exp());
        }
    }
    [a1.value(), a2.value()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    RadialSymmetry,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncatedPosition {
    pub vector: Vec<f64>,
    pub provenance: Provenance,
}

/// `∫ x φ(|x|/R) |u|² dx` vanishes identically for radial fields.
pub fn truncated_position(f: &RadialField, _radius: f64) -> TruncatedPosition {
    TruncatedPosition {
        vector: vec![0.0; f.grid().dim()],
        provenance: Provenance::RadialSymmetry,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpacetimeNorms {
    pub w1: f64,
    pub w2: f64,
    pub st: f64,
}

pub fn spacetime_norms(trace: &SimulationTrace, grid: &GridRef) -> Result<SpacetimeNorms, DiagnosticsError> {
    spacetime_norms_through(trace, grid, trace.times.len())
}

/// Norms over the first `count` observations, trapezoid rule in time.
pub fn spacetime_norms_through(
    trace: &SimulationTrace,
    grid: &GridRef,
    count: usize,
) -> Result<SpacetimeNorms, DiagnosticsError> {
    if count < 2 || trace.times.len() < count {
        return Err(DiagnosticsError::TooFewObservations(count.min(trace.times.len())));
    }
    let (q1, q2) = spacetime_exponents(grid.dim());
    let (mut s1, mut s2) = (Accumulator::new(), Accumulator::new());
    for k in 1..count {
        let dt = trace.times[k] - trace.times[k - 1];
        let (a, b) = (trace.spacetime_densities[k - 1], trace.spacetime_densities[k]);
        s1.add(0.5 * dt * (a[0] + b[0]));
        s2.add(0.5 * dt * (a[1] + b[1]));
    }
    let w1 = s1.value().powf(1.0 / q1);
    let w2 = s2.value().powf(1.0 / q2);
    Ok(SpacetimeNorms { w1, w2, st: w1.max(w2) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Classification {
    BlowUpConfirmed,
    DispersiveConfirmed,
    Undecided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Evidence {
    pub gradient_exceeded: bool,
    pub virial_concave: bool,
    pub critical_norm_halved: bool,
    pub st_norm_saturated: bool,
    pub exterior_decayed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeReport {
    pub classification: Classification,
    pub evidence: Evidence,
    pub below_threshold: bool,
    /// Leading coefficient of the quadratic fit to the outermost `V_R`, with
    /// its standard error.
    pub concavity: Option<(f64, f64)>,
    pub st_increment: Option<f64>,
}

/// Least-squares `a t² + b t + c` over the samples; returns `(a, se(a))`.
pub fn quadratic_fit(times: &[f64], values: &[f64]) -> Option<(f64, f64)> {
    let n = times.len();
    if n < 3 || values.len() != n {
        return None;
    }
    let t0 = times.iter().sum::<f64>() / n as f64;
    let span = times.iter().map(|t| (t - t0).abs()).fold(0.0, f64::max);
    if span == 0.0 {
        return None;
    }
    let v0 = values.iter().sum::<f64>() / n as f64;
    let vs = values
        .iter()
        .map(|v| (v - v0).abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let xs: Vec<f64> = times.iter().map(|t| (t - t0) / span).collect();
    let ys: Vec<f64> = values.iter().map(|v| (v - v0) / vs).collect();

    let mut ata = [[0.0f64; 3]; 3];
    let mut aty = [0.0f64; 3];
    for (x, y) in xs.iter().zip(&ys) {
        let row = [1.0, *x, x * x];
        for i in 0..3 {
            aty[i] += row[i] * y;
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let inv = invert3(&ata)?;
    let coef: Vec<f64> = (0..3).map(|i| (0..3).map(|j| inv[i][j] * aty[j]).sum()).collect();
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let fit = coef[0] + coef[1] * x + coef[2] * x * x;
            (y - fit).powi(2)
        })
        .sum();
    let dof = n.saturating_sub(3);
    let se = if dof > 0 {
        (rss / dof as f64 * inv[2][2]).max(0.0).sqrt()
    } else {
        0.0
    };
    let unscale = vs / (span * span);
    Some((coef[2] * unscale, se * unscale))
}

fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-300 {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (a, b) = ((j + 1) % 3, (j + 2) % 3);
            let (c, d) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (m[a][c] * m[b][d] - m[a][d] * m[b][c]) / det;
        }
    }
    Some(inv)
}

/// Final quarter of the observations, at least 20 of them when available.
pub fn fit_window(count: usize) -> std::ops::Range<usize> {
    let len = count.div_ceil(4).max(20).min(count);
    count - len..count
}

pub fn classify_outcome(trace: &SimulationTrace, m: f64) -> OutcomeReport {
    let count = trace.times.len();
    let gradient_exceeded = matches!(trace.outcome, Outcome::BlowUp { .. });

    let concavity = trace.virial_radii.len().checked_sub(1).and_then(|outer| {
        let window = fit_window(count);
        let times = &trace.times[window.clone()];
        let values: Vec<f64> = trace.virials[window].iter().map(|row| row[outer].v).collect();
        quadratic_fit(times, &values)
    });
    let virial_concave = matches!(concavity, Some((a, se)) if a < 0.0 && -a > 2.0 * se);

    let exponent = trace.critical_exponent();
    let norms: Vec<f64> = trace
        .reports
        .iter()
        .map(|r| r.norm_critical.powf(1.0 / exponent))
        .collect();
    let peak = norms.iter().cloned().fold(0.0, f64::max);
    let critical_norm_halved = count > 0 && peak > 0.0 && peak >= 2.0 * norms[count - 1];

    let st_increment = st_last_decile_increment(trace);
    let st_norm_saturated = matches!(st_increment, Some(x) if x < 0.01);

    let exterior_decayed = match (trace.interior_critical.first(), trace.interior_critical.last()) {
        (Some(&first), Some(&last)) => first > 0.0 && 2.0 * last <= first,
        _ => false,
    };

    let evidence = Evidence {
        gradient_exceeded,
        virial_concave,
        critical_norm_halved,
        st_norm_saturated,
        exterior_decayed,
    };
    let classification = if gradient_exceeded && virial_concave {
        Classification::BlowUpConfirmed
    } else if matches!(trace.outcome, Outcome::ReachedTFinal)
        && critical_norm_halved
        && st_norm_saturated
        && exterior_decayed
    {
        Classification::DispersiveConfirmed
    } else {
        Classification::Undecided
    };
    OutcomeReport {
        classification,
        evidence,
        below_threshold: trace.reports.first().is_some_and(|r| r.energy < m),
        concavity,
        st_increment,
    }
}

/// `(ST(0, T) - ST(0, t₉₀)) / ST(0, T)` where `t₉₀` is the last observation
/// inside the first nine tenths of the run.
pub fn st_last_decile_increment(trace: &SimulationTrace) -> Option<f64> {
    let count = trace.times.len();
    if count < 3 {
        return None;
    }
    let (t0, t1) = (trace.times[0], trace.times[count - 1]);
    let cut = t0 + 0.9 * (t1 - t0);
    let upto = trace.times.iter().take_while(|&&t| t <= cut).count();
    let total = trace.spacetime_norms_through(count).ok()?;
    if total.st <= 0.0 {
        return None;
    }
    let head = if upto >= 2 {
        trace.spacetime_norms_through(upto).ok()?.st
    } else {
        0.0
    };
    Some((total.st - head) / total.st)
}

/// After the first observation whose tail terms fall below a tenth of
/// `|4K|`, the second virial rate of the outermost radius stays non-positive.
pub fn concave_after_tails_settle(trace: &SimulationTrace) -> bool {
    let Some(outer) = trace.virial_radii.len().checked_sub(1) else {
        return false;
    };
    let start = trace
        .virials
        .iter()
        .position(|row| row[outer].tail_term.abs() < 0.1 * row[outer].k_term.abs());
    match start {
        Some(s) => trace.virials[s..].iter().all(|row| row[outer].dt2_v <= 0.0),
        None => false,
    }
}

/// `|∂_t V_R| <= C R M^{1/2} ‖∇u‖`.
pub fn virial_rate_within(sample: &VirialSample, rep: &FunctionalReport, constant: f64) -> bool {
    sample.dt_v.abs() <= constant * sample.radius * rep.mass.sqrt() * rep.grad_norm_sq.sqrt() * (1.0 + 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{evaluate, report, FieldSpec};
    use crate::grid::RadialGrid;
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn grid() -> GridRef {
        RadialGrid::new(5, 4096, 100.0).unwrap()
    }

    #[test]
    fn real_fields_have_zero_first_rate() {
        let g = grid();
        let f = evaluate(&FieldSpec::gaussian(1.3, 2.0), &g).unwrap();
        for kind in [CutoffKind::QuadraticCore, CutoffKind::FlatTop] {
            assert_eq!(virial(&f, 3.0, kind).unwrap().dt_v, 0.0);
        }
    }

    #[test]
    fn radius_must_fit() {
        let g = grid();
        let f = RadialField::zeros(g);
        assert!(virial(&f, 0.0, CutoffKind::QuadraticCore).is_err());
        assert!(virial(&f, 34.0, CutoffKind::QuadraticCore).is_err());
        assert!(virial(&f, 100.0 / 3.0, CutoffKind::FlatTop).is_ok());
    }

    #[test]
    fn wide_cutoff_reproduces_untruncated_identity() {
        // The Gaussian has no mass beyond r = 20, where φ_R = r² exactly.
        let g = grid();
        let f = evaluate(&FieldSpec::gaussian(2.0, 1.5), &g).unwrap();
        let s = virial(&f, 30.0, CutoffKind::QuadraticCore).unwrap();
        let k = report(&f).k;
        assert!(((s.dt2_v - 4.0 * k) / (4.0 * k)).abs() <= 1e-6);
        assert!(s.tail_term.abs() <= 1e-6 * s.k_term.abs());
        assert!(s.tail_term <= s.tail_bound.unwrap());
    }

    #[test]
    fn exterior_energy_limits() {
        let g = grid();
        let f = evaluate(&FieldSpec::gaussian(1.0, 1.0), &g).unwrap();
        let r = report(&f);
        let full = r.grad_norm_sq + r.norm_critical + r.norm_subcritical;
        let small = exterior_energy(&f, 1e-12).unwrap();
        assert!(((small - full) / full).abs() < 1e-14);
        assert_eq!(exterior_energy(&f, 60.0).unwrap(), 0.0);
        assert!(exterior_energy(&f, 0.0).is_err());
        assert!(exterior_energy(&f, 100.0).is_err());
    }

    #[test]
    fn truncated_position_is_zero() {
        let g = grid();
        let f = evaluate(&FieldSpec::gaussian(1.0, 1.0), &g).unwrap();
        let p = truncated_position(&f, 5.0);
        assert_eq!(p.vector, vec![0.0; 5]);
        assert_eq!(p.provenance, Provenance::RadialSymmetry);
        assert_eq!(truncated_position(&RadialField::zeros(g), 5.0).vector, vec![0.0; 5]);
    }

    #[test]
    fn quadratic_fit_recovers_coefficients() {
        let t: Vec<f64> = (0..50).map(|k| 0.1 * k as f64).collect();
        let v: Vec<f64> = t.iter().map(|t| -3.0 * t * t + 2.0 * t + 7.0).collect();
        let (a, se) = quadratic_fit(&t, &v).unwrap();
        assert!((a + 3.0).abs() < 1e-10);
        assert!(se < 1e-8);
        assert!(quadratic_fit(&t[..2], &v[..2]).is_none());
    }

    #[test]
    fn fit_window_sizes() {
        assert_eq!(fit_window(10), 0..10);
        assert_eq!(fit_window(100), 75..100);
        assert_eq!(fit_window(40), 20..40);
    }

    proptest! {
        #[test]
        fn tail_bound_dominates(a in 0.5f64..40.0, w in 0.5f64..12.0, radius in 1.0f64..33.0, phase in 0.0f64..3.0) {
            let g = RadialGrid::new(5, 2048, 100.0).unwrap();
            let f = RadialField::from_fn(g.clone(), |r| {
                Complex64::from_polar(a * (-(r / w).powi(2)).exp(), phase * r * r / 10.0)
            }).unwrap();
            let s = virial(&f, radius, CutoffKind::QuadraticCore).unwrap();
            prop_assert!(s.tail_term <= s.tail_bound.unwrap() + 1e-12 * s.k_term.abs());
        }

        #[test]
        fn exterior_energy_is_monotone(r1 in 0.1f64..20.0, dr in 0.0f64..20.0) {
            let g = RadialGrid::new(5, 2048, 60.0).unwrap();
            let f = evaluate(&FieldSpec::gaussian(1.5, 4.0), &g).unwrap();
            let e1 = exterior_energy(&f, r1).unwrap();
            let e2 = exterior_energy(&f, r1 + dr).unwrap();
            prop_assert!(e2 <= e1);
        }
    }
}
