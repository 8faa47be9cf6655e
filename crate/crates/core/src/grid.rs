//! Uniform radial grid on `[0, r_max]` with `d`-dimensional trapezoid quadrature.
//!
//! Two discrete Laplacians live here. [`laplacian`] is the pointwise central
//! stencil used for residual checks. The grid also carries a flux-form
//! operator whose face couplings make it self-adjoint for the quadrature
//! inner product; the time stepper and every gradient integral use that one,
//! so the discrete dynamics conserve the discrete mass and energy.

use std::sync::Arc;

use log::warn;
use num_complex::Complex64;
use thiserror::Error;

use crate::quadrature::{ball_volume, sphere_area, Accumulator};

pub type GridRef = Arc<RadialGrid>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("dimension {0} is below 3")]
    DimensionTooSmall(usize),
    #[error("grid needs at least 16 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("domain radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("expected {expected} samples, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite sample at node {0}")]
    NonFinite(usize),
    #[error("Lebesgue exponent must be at least 1, got {0}")]
    InvalidExponent(f64),
}

#[derive(Debug, Clone)]
pub struct RadialGrid {
    dim: usize,
    n: usize,
    r_max: f64,
    dr: f64,
    sphere: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// Full cell volumes `σ r_i^{d-1} Δr`, without the endpoint halving.
    cells: Vec<f64>,
    /// Face couplings between node `i` and `i + 1`.
    couplings: Vec<f64>,
}

impl RadialGrid {
    pub fn new(dim: usize, n: usize, r_max: f64) -> Result<GridRef, GridError> {
        if dim < 3 {
            return Err(GridError::DimensionTooSmall(dim));
        }
        if n < 16 {
            return Err(GridError::TooFewNodes(n));
        }
        if !r_max.is_finite() || r_max <= 0.0 {
            return Err(GridError::InvalidRadius(r_max));
        }
        if dim < 5 {
            warn!("dimension {dim} is below 5; the dichotomy results assume d >= 5");
        }
        let dr = r_max / (n - 1) as f64;
        let sphere = sphere_area(dim);
        let mut nodes: Vec<f64> = (0..n).map(|i| i as f64 * dr).collect();
        nodes[n - 1] = r_max;
        let cells: Vec<f64> = nodes.iter().map(|r| sphere * r.powi(dim as i32 - 1) * dr).collect();
        let mut weights = cells.clone();
        weights[n - 1] *= 0.5;

        // b_{i+1/2} = d V_i / (Δr r_{i+1/2}) with V_i the volume of cells 1..=i.
        // This makes the flux operator exact on r², and b_{1/2} = 0 decouples
        // the origin node, which carries zero quadrature weight.
        let mut couplings = Vec::with_capacity(n - 1);
        let mut volume = Accumulator::new();
        for i in 0..n - 1 {
            if i > 0 {
                volume.add(cells[i]);
            }
            let face = 0.5 * (nodes[i] + nodes[i + 1]);
            couplings.push(dim as f64 * volume.value() / (dr * face));
        }

        Ok(Arc::new(Self {
            dim,
            n,
            r_max,
            dr,
            sphere,
            nodes,
            weights,
            cells,
            couplings,
        }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn dr(&self) -> f64 {
        self.dr
    }

    pub fn sphere_area(&self) -> f64 {
        self.sphere
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cell_volumes(&self) -> &[f64] {
        &self.cells
    }

    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }

    /// `2* = 2d/(d-2)`.
    pub fn critical_exponent(&self) -> f64 {
        critical_exponent(self.dim)
    }

    /// `p₂ = (2d+2)/(d-1)`.
    pub fn subcritical_exponent(&self) -> f64 {
        subcritical_exponent(self.dim)
    }

    pub fn ball_volume(&self) -> f64 {
        ball_volume(self.dim, self.r_max)
    }

    /// Same node count and radius, so samples are interchangeable.
    pub fn same_layout(&self, other: &RadialGrid) -> bool {
        self.dim == other.dim && self.n == other.n && self.r_max == other.r_max
    }

    pub fn integrate(&self, samples: &[f64]) -> Result<f64, GridError> {
        if samples.len() != self.n {
            return Err(GridError::LengthMismatch {
                expected: self.n,
                got: samples.len(),
            });
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(self.weighted_sum(|i| samples[i]))
    }

    pub(crate) fn weighted_sum<F: Fn(usize) -> f64>(&self, f: F) -> f64 {
        let mut acc = Accumulator::new();
        for (i, w) in self.weights.iter().enumerate().skip(1) {
            acc.add(w * f(i));
        }
        acc.value()
    }

    /// First node index with `r_i >= r`.
    pub fn index_at_or_beyond(&self, r: f64) -> usize {
        if r <= 0.0 {
            return 0;
        }
        let i = (r / self.dr).ceil() as usize;
        let mut i = i.min(self.n);
        while i > 0 && self.nodes[i - 1] >= r {
            i -= 1;
        }
        while i < self.n && self.nodes[i] < r {
            i += 1;
        }
        i
    }

    /// Discrete `∫|∇u|²` as the face sum `Σ b_{i+1/2} |u_{i+1} - u_i|²`.
    pub fn dirichlet_form(&self, values: &[Complex64]) -> f64 {
        let mut acc = Accumulator::new();
        for (i, b) in self.couplings.iter().enumerate() {
            acc.add(b * (values[i + 1] - values[i]).norm_sqr());
        }
        acc.value()
    }

    /// Flux-form Laplacian. Row 0 uses the symmetry limit and the wall row is zero.
    pub fn apply_flux_laplacian(&self, values: &[Complex64], out: &mut [Complex64]) {
        let n = self.n;
        let h2 = self.dr * self.dr;
        out[0] = (values[1] - values[0]) * (2.0 * self.dim as f64 / h2);
        for i in 1..n - 1 {
            let flux_out = (values[i + 1] - values[i]) * self.couplings[i];
            let flux_in = (values[i] - values[i - 1]) * self.couplings[i - 1];
            out[i] = (flux_out - flux_in) / self.cells[i];
        }
        out[n - 1] = Complex64::new(0.0, 0.0);
    }
}

pub fn critical_exponent(dim: usize) -> f64 {
    2.0 * dim as f64 / (dim as f64 - 2.0)
}

pub fn subcritical_exponent(dim: usize) -> f64 {
    (2.0 * dim as f64 + 2.0) / (dim as f64 - 1.0)
}

#[derive(Debug, Clone)]
pub struct RadialField {
    grid: GridRef,
    values: Vec<Complex64>,
}

impl RadialField {
    pub fn new(grid: GridRef, values: Vec<Complex64>) -> Result<Self, GridError> {
        if values.len() != grid.n() {
            return Err(GridError::LengthMismatch {
                expected: grid.n(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: GridRef) -> Self {
        let values = vec![Complex64::new(0.0, 0.0); grid.n()];
        Self { grid, values }
    }

    pub fn from_fn<F: Fn(f64) -> Complex64>(grid: GridRef, f: F) -> Result<Self, GridError> {
        let values = grid.nodes().iter().map(|&r| f(r)).collect();
        Self::new(grid, values)
    }

    pub fn from_real(grid: GridRef, samples: &[f64]) -> Result<Self, GridError> {
        let values = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        Self::new(grid, values)
    }

    pub(crate) fn from_parts_unchecked(grid: GridRef, values: Vec<Complex64>) -> Self {
        debug_assert_eq!(values.len(), grid.n());
        Self { grid, values }
    }

    pub fn grid(&self) -> &GridRef {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn is_real(&self) -> bool {
        self.values.iter().all(|v| v.im == 0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.re == 0.0 && v.im == 0.0)
    }

    pub fn max_modulus(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn modulus_sq(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        let values = self.values.iter().map(|v| v * factor).collect();
        Self::from_parts_unchecked(self.grid.clone(), values)
    }

    /// `∫|∇u|²` in the face form shared with the time stepper.
    pub fn gradient_norm_sq(&self) -> f64 {
        self.grid.dirichlet_form(&self.values)
    }

    /// Multiplies by a smooth window that is 1 up to `0.8 r_max` and 0 from
    /// `0.9 r_max` on, so data with slowly decaying tails fits inside the
    /// Dirichlet wall and leaves the outer monitoring band empty.
    pub fn confined(&self) -> Self {
        let r_max = self.grid.r_max();
        let (a, b) = (0.8 * r_max, 0.9 * r_max);
        let values = self
            .grid
            .nodes()
            .iter()
            .zip(&self.values)
            .map(|(&r, &v)| {
                if r <= a {
                    v
                } else if r >= b {
                    Complex64::new(0.0, 0.0)
                } else {
                    let t = (r - a) / (b - a);
                    v * (1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t))
                }
            })
            .collect();
        Self::from_parts_unchecked(self.grid.clone(), values)
    }
}

/// Central differences, `∂_r u(0) = 0` from the even extension and a
/// one-sided second-order formula at the wall.
pub fn radial_derivative(f: &RadialField) -> RadialField {
    let g = f.grid();
    let u = f.values();
    let n = g.n();
    let h = g.dr();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for i in 1..n - 1 {
        out[i] = (u[i + 1] - u[i - 1]) / (2.0 * h);
    }
    out[n - 1] = (u[n - 1] * 3.0 - u[n - 2] * 4.0 + u[n - 3]) / (2.0 * h);
    RadialField::from_parts_unchecked(g.clone(), out)
}

/// Pointwise central stencil `u_rr + (d-1)/r u_r`, with `2d (u_1 - u_0)/Δr²`
/// at the origin. The wall node is pinned by the Dirichlet condition and gets 0.
pub fn laplacian(f: &RadialField) -> RadialField {
    let g = f.grid();
    let u = f.values();
    let n = g.n();
    let h = g.dr();
    let h2 = h * h;
    let d1 = g.dim() as f64 - 1.0;
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    out[0] = (u[1] - u[0]) * (2.0 * g.dim() as f64 / h2);
    for i in 1..n - 1 {
        let r = g.nodes()[i];
        let second = (u[i + 1] - u[i] * 2.0 + u[i - 1]) / h2;
        let first = (u[i + 1] - u[i - 1]) / (2.0 * h);
        out[i] = second + first * (d1 / r);
    }
    RadialField::from_parts_unchecked(g.clone(), out)
}

/// `(∫|u|^p)^{1/p}`; `p = ∞` gives the largest nodal modulus.
pub fn lp_norm(f: &RadialField, p: f64) -> Result<f64, GridError> {
    if p.is_nan() || p < 1.0 {
        return Err(GridError::InvalidExponent(p));
    }
    if p.is_infinite() {
        return Ok(f.max_modulus());
    }
    let half = 0.5 * p;
    let s = f.grid().weighted_sum(|i| f.values()[i].norm_sqr().powf(half));
    Ok(s.powf(1.0 / p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gamma_half;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid(dim: usize, n: usize, r_max: f64) -> GridRef {
        RadialGrid::new(dim, n, r_max).unwrap()
    }

    fn real_field(g: &GridRef, f: impl Fn(f64) -> f64) -> RadialField {
        RadialField::from_fn(g.clone(), |r| Complex64::new(f(r), 0.0)).unwrap()
    }

    #[test]
    fn rejects_bad_parameters() {
        assert_eq!(
            RadialGrid::new(2, 64, 1.0).unwrap_err(),
            GridError::DimensionTooSmall(2)
        );
        assert_eq!(RadialGrid::new(5, 15, 10.0).unwrap_err(), GridError::TooFewNodes(15));
        assert!(matches!(
            RadialGrid::new(5, 64, f64::NAN),
            Err(GridError::InvalidRadius(_))
        ));
        assert!(matches!(RadialGrid::new(5, 64, -1.0), Err(GridError::InvalidRadius(_))));
    }

    #[test]
    fn default_grid_volume() {
        let g = grid(5, 4096, 100.0);
        assert_eq!(g.dr(), 100.0 / 4095.0);
        let exact = PI.powf(2.5) * 100f64.powi(5) / gamma_half(7);
        let vol = g.integrate(&vec![1.0; g.n()]).unwrap();
        assert!(((vol - exact) / exact).abs() <= 1e-4);
        assert_eq!(g.weights()[0], 0.0);
        assert_eq!(g.nodes()[g.n() - 1], 100.0);
    }

    #[test]
    fn exponents_stored_exactly() {
        let g = grid(6, 1024, 50.0);
        assert_eq!(g.critical_exponent(), 3.0);
        assert_eq!(g.subcritical_exponent(), 14.0 / 5.0);
    }

    #[test]
    fn gaussian_integral() {
        let g = grid(5, 4096, 100.0);
        let s: Vec<f64> = g.nodes().iter().map(|r| (-2.0 * r * r).exp()).collect();
        let exact = (PI / 2.0).powf(2.5);
        assert!(((g.integrate(&s).unwrap() - exact) / exact).abs() <= 1e-6);
        assert_eq!(g.integrate(&vec![0.0; g.n()]).unwrap(), 0.0);
        assert!(matches!(g.integrate(&[1.0; 3]), Err(GridError::LengthMismatch { .. })));
    }

    #[test]
    fn derivative_of_quadratic_and_constant() {
        let g = grid(5, 256, 3.0);
        let d = radial_derivative(&real_field(&g, |r| r * r));
        for (i, r) in g.nodes().iter().enumerate().skip(1) {
            assert!((d.values()[i].re - 2.0 * r).abs() <= 1e-10);
        }
        let d = radial_derivative(&real_field(&g, |_| 3.5));
        assert!(d.values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn derivative_of_gaussian_is_second_order() {
        let errs: Vec<f64> = [512, 1024]
            .iter()
            .map(|&n| {
                let g = grid(5, n, 8.0);
                let d = radial_derivative(&real_field(&g, |r| (-r * r).exp()));
                g.nodes()
                    .iter()
                    .zip(d.values())
                    .map(|(r, v)| (v.re + 2.0 * r * (-r * r).exp()).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        assert!(errs[0] < 1e-3);
        // n - 1 doubles only approximately, so allow a little under 4.
        assert!(errs[0] / errs[1] > 3.5, "{errs:?}");
    }

    #[test]
    fn laplacian_of_quadratic() {
        let g = grid(5, 512, 4.0);
        let l = laplacian(&real_field(&g, |r| r * r));
        for v in &l.values()[..g.n() - 1] {
            assert!((v.re - 10.0).abs() <= 1e-8);
        }
        let l = laplacian(&RadialField::zeros(g.clone()));
        assert!(l.values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn flux_laplacian_is_exact_on_quadratic() {
        let g = grid(5, 4096, 100.0);
        let u: Vec<Complex64> = g.nodes().iter().map(|r| Complex64::new(r * r, 0.0)).collect();
        let mut out = vec![Complex64::new(0.0, 0.0); g.n()];
        g.apply_flux_laplacian(&u, &mut out);
        for v in &out[..g.n() - 1] {
            assert!((v.re - 10.0).abs() < 1e-8, "{}", v.re);
        }
    }

    #[test]
    fn flux_laplacian_is_symmetric_in_quadrature_inner_product() {
        let g = grid(5, 200, 5.0);
        let n = g.n();
        let mut u: Vec<Complex64> = g
            .nodes()
            .iter()
            .map(|r| Complex64::new((-r * r).exp(), r.sin()))
            .collect();
        let mut v: Vec<Complex64> = g
            .nodes()
            .iter()
            .map(|r| Complex64::new(r.cos() * (-r).exp(), 0.3))
            .collect();
        u[n - 1] = Complex64::new(0.0, 0.0);
        v[n - 1] = Complex64::new(0.0, 0.0);
        let mut lu = vec![Complex64::new(0.0, 0.0); n];
        let mut lv = vec![Complex64::new(0.0, 0.0); n];
        g.apply_flux_laplacian(&u, &mut lu);
        g.apply_flux_laplacian(&v, &mut lv);
        let ip = |a: &[Complex64], b: &[Complex64]| -> Complex64 {
            (1..n).map(|i| a[i].conj() * b[i] * g.weights()[i]).sum()
        };
        let lhs = ip(&lu, &v);
        let rhs = ip(&u, &lv);
        assert!((lhs - rhs).norm() < 1e-10 * lhs.norm().max(1.0));
        // and -<u, Lu> equals the face-form gradient integral
        let g2 = -ip(&u, &lu).re;
        assert!((g2 - g.dirichlet_form(&u)).abs() < 1e-10 * g2);
    }

    #[test]
    fn lp_norms() {
        let g = grid(5, 4096, 100.0);
        let f = real_field(&g, |r| (-r * r).exp());
        let exact = (PI / 2.0).powf(2.5).sqrt();
        assert!(((lp_norm(&f, 2.0).unwrap() - exact) / exact).abs() <= 1e-6);
        assert_eq!(lp_norm(&f, f64::INFINITY).unwrap(), 1.0);
        assert_eq!(lp_norm(&RadialField::zeros(g.clone()), 3.0).unwrap(), 0.0);
        assert!(matches!(lp_norm(&f, 0.5), Err(GridError::InvalidExponent(_))));
    }

    #[test]
    fn quadrature_is_second_order_on_a_short_ball() {
        // On long domains the trapezoid rule is spectrally accurate for the
        // Gaussian in odd dimension, so the truncated ball exposes the h² term.
        let exact = ball_volume(5, 2.0);
        let err = |n: usize| {
            let g = grid(5, n, 2.0);
            (g.integrate(&vec![1.0; n]).unwrap() - exact).abs()
        };
        let (e1, e2) = (err(257), err(513));
        assert!(e1 / e2 >= 3.5, "{e1} {e2}");
        let gauss = |n: usize| {
            let g = grid(5, n, 2.0);
            let s: Vec<f64> = g.nodes().iter().map(|r| (-r * r).exp()).collect();
            g.integrate(&s).unwrap()
        };
        let reference = gauss(32769);
        let (e1, e2) = ((gauss(257) - reference).abs(), (gauss(513) - reference).abs());
        assert!(e1 / e2 >= 3.5, "{e1} {e2}");
    }

    #[test]
    fn index_lookup() {
        let g = grid(5, 101, 10.0);
        assert_eq!(g.index_at_or_beyond(0.0), 0);
        assert_eq!(g.index_at_or_beyond(0.05), 1);
        assert_eq!(g.index_at_or_beyond(1.0), 10);
        assert_eq!(g.index_at_or_beyond(10.0), 100);
        assert_eq!(g.index_at_or_beyond(11.0), 101);
    }

    #[test]
    fn confined_field_vanishes_in_outer_band() {
        let g = grid(5, 1001, 10.0);
        let f = real_field(&g, |_| 1.0).confined();
        for (r, v) in g.nodes().iter().zip(f.values()) {
            if *r <= 8.0 {
                assert_eq!(v.re, 1.0);
            }
            if *r >= 9.0 {
                assert_eq!(v.re, 0.0);
            }
            assert!(v.re >= 0.0 && v.re <= 1.0);
        }
    }

    proptest! {
        #[test]
        fn integration_by_parts(a in 0.5f64..2.0, b in 0.5f64..2.0, c in -1.0f64..1.0) {
            // ∫ (Δu) v = -∫ u_r v_r up to O(Δr²) for rapidly decaying pairs.
            let mismatch = |n: usize| {
                let g = grid(5, n, 12.0);
                let u = real_field(&g, |r| (-a * r * r).exp());
                let v = real_field(&g, |r| (1.0 + c * r * r) * (-b * r * r).exp());
                let lu = laplacian(&u);
                let du = radial_derivative(&u);
                let dv = radial_derivative(&v);
                let lhs = g.weighted_sum(|i| lu.values()[i].re * v.values()[i].re);
                let rhs = -g.weighted_sum(|i| du.values()[i].re * dv.values()[i].re);
                let scale = g.weighted_sum(|i| (du.values()[i].re * dv.values()[i].re).abs());
                (lhs - rhs).abs() / scale
            };
            let (coarse, fine) = (mismatch(1025), mismatch(2049));
            prop_assert!(coarse <= 1e-3);
            prop_assert!(fine <= 1e-12 || coarse / fine >= 3.5, "{} {}", coarse, fine);
        }

        #[test]
        fn quadrature_scaling(lambda in -0.3f64..0.3, dim in 3usize..8) {
            // e^{2dλ} ∫ f(e^{2λ}x) dx = ∫ f dx
            let g = grid(dim, 4096, 40.0);
            let s = (2.0 * lambda).exp();
            let base: Vec<f64> = g.nodes().iter().map(|r| (-r * r).exp()).collect();
            let scaled: Vec<f64> = g.nodes().iter().map(|r| (-(s * r) * (s * r)).exp() * (2.0 * dim as f64 * lambda).exp()).collect();
            let i0 = g.integrate(&base).unwrap();
            let i1 = g.integrate(&scaled).unwrap();
            prop_assert!(((i1 - i0) / i0).abs() <= 1e-6);
        }

        #[test]
        fn weights_nonnegative_and_nodes_increasing(dim in 3usize..9, n in 16usize..300, r_max in 0.1f64..500.0) {
            let g = grid(dim, n, r_max);
            prop_assert!(g.weights().iter().all(|w| *w >= 0.0));
            prop_assert_eq!(g.weights()[0], 0.0);
            prop_assert!(g.nodes().windows(2).all(|p| p[1] > p[0]));
            prop_assert_eq!(g.nodes()[n - 1], r_max);
        }
    }
}
