//! Radial weights for the localized virial moments `∫ φ_R |u|²`.
//!
//! Both families are written as `φ_R(r) = R² φ(r/R)` with a unit profile
//! `φ`. The polynomial bridges are C³, so `Δ²φ_R` stays bounded.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffKind {
    /// `φ(ρ) = ρ²` on `ρ <= 1`, constant from `ρ = 3` on, `φ'' <= 2` throughout.
    QuadraticCore,
    /// `φ(ρ) = ψ(ρ²)` with `ψ = 1` on `[0, 1]`, `ψ = 0` on `[2, ∞)`.
    FlatTop,
}

/// Derivatives of `φ_R` at one radius together with its radial Laplacian
/// and bi-Laplacian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffValues {
    pub phi: f64,
    pub d1: f64,
    pub d2: f64,
    pub laplacian: f64,
    pub bilaplacian: f64,
}

type BoundCache = HashMap<(CutoffKind, usize), (f64, f64)>;

impl CutoffKind {
    /// Outer edge of the non-constant part, in units of `R`.
    pub fn support(&self) -> f64 {
        match self {
            CutoffKind::QuadraticCore => 3.0,
            CutoffKind::FlatTop => std::f64::consts::SQRT_2,
        }
    }

    /// `[φ, φ', φ'', φ''', φ'''']` of the unit profile.
    pub fn unit(&self, rho: f64) -> [f64; 5] {
        match self {
            CutoffKind::QuadraticCore => quadratic_core(rho),
            CutoffKind::FlatTop => flat_top(rho),
        }
    }

    pub fn evaluate(&self, dim: usize, radius: f64, r: f64) -> CutoffValues {
        let rho = r / radius;
        let [p, p1, p2, p3, p4] = self.unit(rho);
        let d = dim as f64;
        let r2 = radius * radius;
        let (lap, bilap) = if rho <= 1.0 {
            match self {
                CutoffKind::QuadraticCore => (2.0 * d, 0.0),
                CutoffKind::FlatTop => (0.0, 0.0),
            }
        } else if rho >= self.support() {
            (0.0, 0.0)
        } else {
            let lap = p2 + (d - 1.0) * p1 / rho;
            let bilap =
                p4 + 2.0 * (d - 1.0) * p3 / rho + (d - 1.0) * (d - 3.0) * (p2 / (rho * rho) - p1 / (rho * rho * rho));
            (lap, bilap / r2)
        };
        CutoffValues {
            phi: r2 * p,
            d1: radius * p1,
            d2: p2,
            laplacian: lap,
            bilaplacian: bilap,
        }
    }

    /// `sup |Δ²φ|` of the unit profile in dimension `d`, from dense sampling
    /// with a one percent margin.
    pub fn bilaplacian_bound(&self, dim: usize) -> f64 {
        self.bounds(dim).0
    }

    /// `sup |Δφ - 2d|` of the unit profile.
    pub fn laplacian_defect_bound(&self, dim: usize) -> f64 {
        self.bounds(dim).1
    }

    fn bounds(&self, dim: usize) -> (f64, f64) {
        static CACHE: OnceLock<Mutex<BoundCache>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(&b) = cache.lock().unwrap().get(&(*self, dim)) {
            return b;
        }
        let two_d = 2.0 * dim as f64;
        let bilap = self.bridge_sup(|v| v.bilaplacian.abs(), dim);
        let defect =
            self.bridge_sup(|v| (v.laplacian - two_d).abs(), dim)
                .max(if matches!(self, CutoffKind::QuadraticCore) {
                    two_d
                } else {
                    0.0
                });
        cache.lock().unwrap().insert((*self, dim), (bilap, defect));
        (bilap, defect)
    }

    /// `sup |φ'|` of the unit profile.
    pub fn slope_bound(&self) -> f64 {
        self.bridge_sup(|v| v.d1.abs(), 5)
    }

    fn bridge_sup<F: Fn(&CutoffValues) -> f64>(&self, f: F, dim: usize) -> f64 {
        let samples = 100_000;
        let (a, b) = (0.0, self.support());
        let mut best: f64 = 0.0;
        for k in 0..=samples {
            let rho = a + (b - a) * k as f64 / samples as f64;
            best = best.max(f(&self.evaluate(dim, 1.0, rho)));
        }
        1.01 * best
    }
}

// Bridge on ρ ∈ [1, 3] with t = (ρ - 1)/2:
//   φ''(ρ) = g(t) = 2 - 66t² + 124t³ - 60t⁴
// g(0) = 2, g(1) = 0, g'(0) = g'(1) = 0, and the mean of g over [0, 1] is -1,
// which brings φ' from 2 down to 0. Then φ(3) = 3.8.
fn quadratic_core(rho: f64) -> [f64; 5] {
    if rho <= 1.0 {
        return [rho * rho, 2.0 * rho, 2.0, 0.0, 0.0];
    }
    if rho >= 3.0 {
        return [3.8, 0.0, 0.0, 0.0, 0.0];
    }
    let t = 0.5 * (rho - 1.0);
    let t2 = t * t;
    let t3 = t2 * t;
    let t4 = t3 * t;
    let phi = 1.0 + 4.0 * t + 4.0 * t2 - 22.0 * t4 + 24.8 * t4 * t - 8.0 * t4 * t2;
    let d1 = 2.0 + 4.0 * t - 44.0 * t3 + 62.0 * t4 - 24.0 * t4 * t;
    let d2 = 2.0 - 66.0 * t2 + 124.0 * t3 - 60.0 * t4;
    let d3 = 0.5 * (-132.0 * t + 372.0 * t2 - 240.0 * t3);
    let d4 = 0.25 * (-132.0 + 744.0 * t - 720.0 * t2);
    [phi, d1, d2, d3, d4]
}

// ψ(s) = 1 - S(s - 1) on [1, 2] with the C³ smoothstep S(t) = 35t⁴ - 84t⁵ + 70t⁶ - 20t⁷.
fn flat_top(rho: f64) -> [f64; 5] {
    let s = rho * rho;
    if s <= 1.0 {
        return [1.0, 0.0, 0.0, 0.0, 0.0];
    }
    if s >= 2.0 {
        return [0.0; 5];
    }
    let t = s - 1.0;
    let t2 = t * t;
    let t3 = t2 * t;
    let t4 = t3 * t;
    let psi = 1.0 - (35.0 * t4 - 84.0 * t4 * t + 70.0 * t4 * t2 - 20.0 * t4 * t3);
    let p1 = -(140.0 * t3 - 420.0 * t4 + 420.0 * t4 * t - 140.0 * t4 * t2);
    let p2 = -(420.0 * t2 - 1680.0 * t3 + 2100.0 * t4 - 840.0 * t4 * t);
    let p3 = -(840.0 * t - 5040.0 * t2 + 8400.0 * t3 - 4200.0 * t4);
    let p4 = -(840.0 - 10080.0 * t + 25200.0 * t2 - 16800.0 * t3);
    let r2 = rho * rho;
    [
        psi,
        2.0 * rho * p1,
        2.0 * p1 + 4.0 * r2 * p2,
        12.0 * rho * p2 + 8.0 * r2 * rho * p3,
        12.0 * p2 + 48.0 * r2 * p3 + 16.0 * r2 * r2 * p4,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const KINDS: [CutoffKind; 2] = [CutoffKind::QuadraticCore, CutoffKind::FlatTop];

    #[test]
    fn junctions_are_c3() {
        for kind in KINDS {
            let joints = match kind {
                CutoffKind::QuadraticCore => [1.0, 3.0],
                CutoffKind::FlatTop => [1.0, std::f64::consts::SQRT_2],
            };
            for x in joints {
                let left = kind.unit(x - 1e-12);
                let right = kind.unit(x + 1e-12);
                for k in 0..4 {
                    assert!((left[k] - right[k]).abs() < 1e-6, "{kind:?} at {x}, derivative {k}");
                }
            }
        }
    }

    #[test]
    fn quadratic_core_shape() {
        assert_eq!(quadratic_core(3.0)[0], 3.8);
        assert!((quadratic_core(3.0 - 1e-12)[0] - 3.8).abs() < 1e-9);
        for k in 0..=3000 {
            let rho = 3.5 * k as f64 / 3000.0;
            let [p, p1, p2, _, _] = quadratic_core(rho);
            assert!(p2 <= 2.0 + 1e-14);
            assert!(p1 >= -1e-12, "φ' < 0 at {rho}");
            assert!(p >= 0.0);
        }
    }

    #[test]
    fn flat_top_shape() {
        for k in 0..=3000 {
            let rho = 2.0 * k as f64 / 3000.0;
            let p = flat_top(rho)[0];
            assert!((-1e-15..=1.0 + 1e-15).contains(&p));
        }
    }

    #[test]
    fn scaled_cutoff_is_quadratic_inside() {
        let v = CutoffKind::QuadraticCore.evaluate(5, 10.0, 7.0);
        assert!((v.phi - 49.0).abs() < 1e-12);
        assert!((v.d1 - 14.0).abs() < 1e-12);
        assert_eq!(v.laplacian, 10.0);
        assert_eq!(v.bilaplacian, 0.0);
    }

    #[test]
    fn bounds_are_positive_and_finite() {
        for kind in KINDS {
            for dim in 3..8 {
                let b = kind.bilaplacian_bound(dim);
                assert!(b.is_finite() && b > 0.0);
            }
        }
        // ‖∇φ_R‖_∞ = R sup|φ'| for the flat-top family.
        let s = CutoffKind::FlatTop.slope_bound();
        assert!(s > 5.0 && s < 5.5, "{s}");
    }

    fn central(kind: CutoffKind, k: usize, rho: f64) -> f64 {
        let h = 1e-5;
        (kind.unit(rho + h)[k] - kind.unit(rho - h)[k]) / (2.0 * h)
    }

    proptest! {
        #[test]
        fn derivatives_agree_with_differences(rho in 1.001f64..2.999, flat in any::<bool>()) {
            let kind = if flat { CutoffKind::FlatTop } else { CutoffKind::QuadraticCore };
            let rho = if flat { 1.0005 + (rho - 1.001) * 0.2065 } else { rho };
            let v = kind.unit(rho);
            for k in 0..4 {
                let fd = central(kind, k, rho);
                prop_assert!((fd - v[k + 1]).abs() <= 1e-5 * (1.0 + v[k + 1].abs()), "{:?} k={} {} {}", kind, k, fd, v[k + 1]);
            }
        }

        #[test]
        fn laplacian_matches_radial_formula(rho in 1.01f64..2.9, dim in 3usize..8, radius in 0.5f64..20.0) {
            // Δφ_R = φ_R'' + (d-1)/r φ_R'
            let r = rho * radius;
            let v = CutoffKind::QuadraticCore.evaluate(dim, radius, r);
            let lap = v.d2 + (dim as f64 - 1.0) * v.d1 / r;
            prop_assert!((lap - v.laplacian).abs() <= 1e-10 * (1.0 + lap.abs()));
            // Δ²φ_R by differencing Δφ_R radially.
            let h = 1e-4 * radius;
            let lap_at = |x: f64| CutoffKind::QuadraticCore.evaluate(dim, radius, x).laplacian;
            let second = (lap_at(r + h) - 2.0 * lap_at(r) + lap_at(r - h)) / (h * h);
            let first = (lap_at(r + h) - lap_at(r - h)) / (2.0 * h);
            let bilap = second + (dim as f64 - 1.0) / r * first;
            prop_assert!((bilap - v.bilaplacian).abs() <= 1e-4 * (1.0 + v.bilaplacian.abs()) / (radius * radius).min(1.0));
        }
    }
}
