//! Minimal complex polynomial / rational-function arithmetic. Everything
//! the bath algebra produces is rational in frequency, so influence
//! kernels are carried exactly as coefficient vectors (descending powers)
//! until the final root and residue extraction.

use crate::linalg::{poly_eval, poly_roots};
use num_complex::Complex64 as C64;

#[derive(Debug, Clone, PartialEq)]
pub struct Poly(pub Vec<C64>);

impl Poly {
    pub fn constant(c: C64) -> Self {
        Poly(vec![c])
    }

    pub fn from_real(coeffs: &[f64]) -> Self {
        Poly(coeffs.iter().map(|&c| C64::new(c, 0.0)).collect())
    }

    pub fn degree(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|c| c.norm() == 0.0)
    }

    /// Drop negligible leading coefficients (relative to the largest).
    pub fn trim(mut self) -> Self {
        let scale = self
            .0
            .iter()
            .map(|c| c.norm())
            .fold(0.0f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let mut start = 0;
        while start + 1 < self.0.len() && self.0[start].norm() < 1e-14 * scale {
            start += 1;
        }
        self.0.drain(..start);
        self
    }

    pub fn eval(&self, z: C64) -> C64 {
        poly_eval(&self.0, z)
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![C64::new(0.0, 0.0); self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly(out)
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.0.len().max(other.0.len());
        let mut out = vec![C64::new(0.0, 0.0); n];
        for (i, a) in self.0.iter().rev().enumerate() {
            out[n - 1 - i] += a;
        }
        for (i, b) in other.0.iter().rev().enumerate() {
            out[n - 1 - i] += b;
        }
        Poly(out)
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, s: C64) -> Poly {
        Poly(self.0.iter().map(|c| c * s).collect())
    }

    pub fn derivative(&self) -> Poly {
        let n = self.0.len();
        if n <= 1 {
            return Poly::constant(C64::new(0.0, 0.0));
        }
        Poly(
            self.0[..n - 1]
                .iter()
                .enumerate()
                .map(|(i, c)| c * C64::new((n - 1 - i) as f64, 0.0))
                .collect(),
        )
    }

    /// Coefficient-wise conjugate: q(z) = conj(p(conj z)).
    pub fn conj_coeffs(&self) -> Poly {
        Poly(self.0.iter().map(|c| c.conj()).collect())
    }

    pub fn roots(&self) -> Vec<C64> {
        let t = self.clone().trim();
        if t.0.len() <= 1 {
            return vec![];
        }
        poly_roots(&t.0)
    }
}

/// Ratio of two polynomials in z.
#[derive(Debug, Clone)]
pub struct Rational {
    pub num: Poly,
    pub den: Poly,
}

impl Rational {
    pub fn zero() -> Self {
        Rational {
            num: Poly::constant(C64::new(0.0, 0.0)),
            den: Poly::constant(C64::new(1.0, 0.0)),
        }
    }

    pub fn eval(&self, z: C64) -> C64 {
        self.num.eval(z) / self.den.eval(z)
    }

    pub fn add(&self, other: &Rational) -> Rational {
        // exact-zero operands must not smuggle their spurious poles into
        // the sum (a zero-coupling branch is a common degenerate input)
        if self.num.is_zero() {
            return other.clone().normalized();
        }
        if other.num.is_zero() {
            return self.clone().normalized();
        }
        Rational {
            num: self.num.mul(&other.den).add(&other.num.mul(&self.den)),
            den: self.den.mul(&other.den),
        }
        .normalized()
    }

    /// Conjugate-coefficient image: K~(z) = conj(K(conj z)).
    pub fn conj_coeffs(&self) -> Rational {
        Rational {
            num: self.num.conj_coeffs(),
            den: self.den.conj_coeffs(),
        }
    }

    /// Scale so the denominator is monic; trims negligible leaders.
    pub fn normalized(self) -> Rational {
        let den = self.den.trim();
        let num = self.num.trim();
        let lead = den.0[0];
        Rational {
            num: num.scale(C64::new(1.0, 0.0) / lead),
            den: den.scale(C64::new(1.0, 0.0) / lead),
        }
    }

    /// Residue at a simple pole p: num(p)/den'(p).
    pub fn residue_at(&self, p: C64) -> C64 {
        self.num.eval(p) / self.den.derivative().eval(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn polynomial_arithmetic() {
        // (z^2 + 1)(z - 2) = z^3 - 2z^2 + z - 2
        let a = Poly::from_real(&[1.0, 0.0, 1.0]);
        let b = Poly::from_real(&[1.0, -2.0]);
        let p = a.mul(&b);
        assert_eq!(p.0, vec![c(1.0, 0.0), c(-2.0, 0.0), c(1.0, 0.0), c(-2.0, 0.0)]);
        let d = p.derivative();
        assert_eq!(d.0, vec![c(3.0, 0.0), c(-4.0, 0.0), c(1.0, 0.0)]);
    }

    #[test]
    fn rational_addition_and_residue() {
        // 1/(z+1) + 1/(z-1) = 2z/(z^2-1); residue at z=1 is 1
        let r1 = Rational {
            num: Poly::from_real(&[1.0]),
            den: Poly::from_real(&[1.0, 1.0]),
        };
        let r2 = Rational {
            num: Poly::from_real(&[1.0]),
            den: Poly::from_real(&[1.0, -1.0]),
        };
        let s = r1.add(&r2);
        let z = c(0.3, 0.7);
        let expect = 2.0 * z / (z * z - c(1.0, 0.0));
        assert!((s.eval(z) - expect).norm() < 1e-14);
        assert!((s.residue_at(c(1.0, 0.0)) - c(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn conjugate_coefficients() {
        let p = Poly(vec![c(1.0, 2.0), c(0.0, -1.0)]);
        let q = p.conj_coeffs();
        let z = c(0.4, -0.9);
        assert!((q.eval(z) - p.eval(z.conj()).conj()).norm() < 1e-15);
    }

    #[test]
    fn trim_drops_tiny_leaders() {
        let p = Poly(vec![c(1e-20, 0.0), c(1.0, 0.0), c(2.0, 0.0)]).trim();
        assert_eq!(p.0.len(), 2);
    }
}
