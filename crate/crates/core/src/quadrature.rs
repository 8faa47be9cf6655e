//! Small numerical helpers shared by the grid and the threshold computation.

use std::f64::consts::PI;

/// Compensated (Neumaier) summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Accumulator {
    sum: f64,
    carry: f64,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = Accumulator::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// `Γ(k/2)` for a positive integer `k`.
pub fn gamma_half(k: usize) -> f64 {
    assert!(k > 0, "gamma_half needs a positive argument");
    let even = k.is_multiple_of(2);
    let mut g = if even { 1.0 } else { PI.sqrt() };
    let mut j = if even { 2 } else { 1 };
    while j < k {
        g *= j as f64 / 2.0;
        j += 2;
    }
    g
}

/// Area of the unit sphere `S^{d-1}` in `R^d`.
pub fn sphere_area(dim: usize) -> f64 {
    2.0 * PI.powf(dim as f64 / 2.0) / gamma_half(dim)
}

/// Volume of the ball of radius `radius` in `R^d`.
pub fn ball_volume(dim: usize, radius: f64) -> f64 {
    sphere_area(dim) * radius.powi(dim as i32) / dim as f64
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1);
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let n = order as f64;
    for i in 0..order.div_ceil(2) {
        // Tricomi's initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(order, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(order, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[order - 1 - i] = x;
        weights[i] = w;
        weights[order - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(order: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=order {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if order == 0 { 1.0 } else { p1 };
    let dp = order as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p, dp)
}

/// Gauss–Legendre rule mapped onto `[a, b]`.
pub fn integrate_interval<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, nodes: &[f64], weights: &[f64]) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    let mut acc = Accumulator::new();
    for (x, w) in nodes.iter().zip(weights) {
        acc.add(w * f(mid + half * x));
    }
    half * acc.value()
}
