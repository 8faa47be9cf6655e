//! Complex tridiagonal systems solved by the Thomas algorithm.
//!
//! The elimination factors depend only on the matrix, so they are computed
//! once and reused for every right-hand side.

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TridiagError {
    #[error("zero pivot at row {0}")]
    ZeroPivot(usize),
    #[error("diagonal lengths disagree")]
    Shape,
}

/// `lower[i]` multiplies `x[i-1]` in row `i`, `upper[i]` multiplies `x[i+1]`.
/// `lower[0]` and `upper[n-1]` are ignored.
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    pub lower: Vec<Complex64>,
    pub diag: Vec<Complex64>,
    pub upper: Vec<Complex64>,
}

#[derive(Debug, Clone)]
pub struct Factorization {
    lower: Vec<Complex64>,
    upper_scaled: Vec<Complex64>,
    pivot_inv: Vec<Complex64>,
}

impl Tridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[Complex64], out: &mut [Complex64]) {
        let n = self.len();
        assert_eq!(x.len(), n);
        assert_eq!(out.len(), n);
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.lower[i] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.upper[i] * x[i + 1];
            }
            out[i] = acc;
        }
    }

    pub fn factor(&self) -> Result<Factorization, TridiagError> {
        let n = self.len();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(TridiagError::Shape);
        }
        let mut upper_scaled = vec![Complex64::new(0.0, 0.0); n];
        let mut pivot_inv = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            let pivot = if i == 0 {
                self.diag[0]
            } else {
                self.diag[i] - self.lower[i] * upper_scaled[i - 1]
            };
            if pivot.norm() == 0.0 || !pivot.is_finite() {
                return Err(TridiagError::ZeroPivot(i));
            }
            let inv = pivot.inv();
            pivot_inv[i] = inv;
            if i + 1 < n {
                upper_scaled[i] = self.upper[i] * inv;
            }
        }
        Ok(Factorization {
            lower: self.lower.clone(),
            upper_scaled,
            pivot_inv,
        })
    }
}

impl Factorization {
    pub fn solve_in_place(&self, rhs: &mut [Complex64]) {
        let n = self.pivot_inv.len();
        assert_eq!(rhs.len(), n);
        rhs[0] *= self.pivot_inv[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.lower[i] * rhs[i - 1]) * self.pivot_inv[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= self.upper_scaled[i] * rhs[i + 1];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn solves_small_system() {
        let m = Tridiagonal {
            lower: vec![c(0.0, 0.0), c(1.0, 0.0), c(1.0, 1.0)],
            diag: vec![c(4.0, 0.0), c(4.0, 1.0), c(3.0, 0.0)],
            upper: vec![c(1.0, 0.0), c(0.5, 0.0), c(0.0, 0.0)],
        };
        let x = vec![c(1.0, 2.0), c(-1.0, 0.5), c(0.25, -3.0)];
        let mut b = vec![c(0.0, 0.0); 3];
        m.apply(&x, &mut b);
        m.factor().unwrap().solve_in_place(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).norm() < 1e-14);
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let m = Tridiagonal {
            lower: vec![c(0.0, 0.0), c(1.0, 0.0)],
            diag: vec![c(0.0, 0.0), c(1.0, 0.0)],
            upper: vec![c(1.0, 0.0), c(0.0, 0.0)],
        };
        assert_eq!(m.factor().unwrap_err(), TridiagError::ZeroPivot(0));
    }

    proptest! {
        #[test]
        fn diagonally_dominant_round_trip(
            seed in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 2..40)
        ) {
            let n = seed.len();
            let lower: Vec<_> = seed.iter().map(|s| c(s.0, s.1)).collect();
            let upper: Vec<_> = seed.iter().map(|s| c(s.1, -s.0)).collect();
            let diag: Vec<_> = seed.iter().map(|s| c(3.0 + s.2, s.3)).collect();
            let m = Tridiagonal { lower, diag, upper };
            let x: Vec<_> = seed.iter().map(|s| c(s.2, s.3)).collect();
            let mut b = vec![c(0.0, 0.0); n];
            m.apply(&x, &mut b);
            m.factor().unwrap().solve_in_place(&mut b);
            for (u, v) in b.iter().zip(&x) {
                prop_assert!((u - v).norm() < 1e-12);
            }
        }
    }
}
