//! Polynomials stored as coefficients in an orthonormal reference basis,
//! together with their values and derivatives on a node set.

use serde::{Deserialize, Serialize};

/// Orthonormal polynomial family used for coefficients.
///
/// Both satisfy `x φ_k = b_{k+1} φ_{k+1} + a_k φ_k + b_k φ_{k-1}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum RefBasis {
    /// Orthonormal Legendre polynomials of `t = (2x - a - b) / (b - a)`.
    Legendre { a: f64, b: f64 },
    /// `He_k(x / σ) / √k!`, orthonormal for the normal law with variance `σ²`.
    Hermite { sigma: f64 },
}

impl RefBasis {
    /// Reference basis suited to nodes on `[lo, hi]`.
    pub fn for_interval(lo: f64, hi: f64) -> Self {
        if hi > lo {
            RefBasis::Legendre { a: lo, b: hi }
        } else {
            RefBasis::Legendre { a: lo - 1.0, b: lo + 1.0 }
        }
    }

    /// `(a_k, b_k)` of the three-term recurrence; `b_0` is unused.
    pub fn recurrence(&self, k: usize) -> (f64, f64) {
        let kf = k as f64;
        match *self {
            RefBasis::Legendre { a, b } => {
                let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
                let bk = if k == 0 { 0.0 } else { h * kf / (4.0 * kf * kf - 1.0).sqrt() };
                (c, bk)
            }
            RefBasis::Hermite { sigma } => (0.0, sigma * kf.sqrt()),
        }
    }

    pub fn phi0(&self) -> f64 {
        match self {
            RefBasis::Legendre { .. } => std::f64::consts::FRAC_1_SQRT_2,
            RefBasis::Hermite { .. } => 1.0,
        }
    }

    /// `φ_0(x) .. φ_deg(x)` and their derivatives.
    pub fn eval_all(&self, deg: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
        let mut v = vec![0.0; deg + 1];
        let mut d = vec![0.0; deg + 1];
        v[0] = self.phi0();
        for k in 0..deg {
            let (ak, bk) = self.recurrence(k);
            let (_, bk1) = self.recurrence(k + 1);
            let (vm, dm) = if k > 0 { (v[k - 1], d[k - 1]) } else { (0.0, 0.0) };
            v[k + 1] = ((x - ak) * v[k] - bk * vm) / bk1;
            d[k + 1] = (v[k] + (x - ak) * d[k] - bk * dm) / bk1;
        }
        (v, d)
    }

    /// Value and derivative of `Σ c_k φ_k` at `x`.
    pub fn eval(&self, coeffs: &[f64], x: f64) -> (f64, f64) {
        if coeffs.is_empty() {
            return (0.0, 0.0);
        }
        let (v, d) = self.eval_all(coeffs.len() - 1, x);
        let val = coeffs.iter().zip(&v).map(|(c, p)| c * p).sum();
        let der = coeffs.iter().zip(&d).map(|(c, p)| c * p).sum();
        (val, der)
    }

    /// Coefficients of `x · Σ c_k φ_k`.
    pub fn mul_x(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; coeffs.len() + 1];
        for (k, &c) in coeffs.iter().enumerate() {
            let (ak, bk) = self.recurrence(k);
            let (_, bk1) = self.recurrence(k + 1);
            out[k + 1] += c * bk1;
            out[k] += c * ak;
            if k > 0 {
                out[k - 1] += c * bk;
            }
        }
        out
    }
}

/// A polynomial with cached values and derivatives on domain nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyVector {
    pub coeffs: Vec<f64>,
    pub values: Vec<f64>,
    pub derivs: Vec<f64>,
}

impl PolyVector {
    /// Constant polynomial `c`.
    pub fn constant(c: f64, basis: &RefBasis, nodes: &[f64]) -> Self {
        Self { coeffs: vec![c / basis.phi0()], values: vec![c; nodes.len()], derivs: vec![0.0; nodes.len()] }
    }

    pub fn from_coeffs(coeffs: Vec<f64>, basis: &RefBasis, nodes: &[f64]) -> Self {
        let (values, derivs) = nodes.iter().map(|&x| basis.eval(&coeffs, x)).unzip();
        Self { coeffs, values, derivs }
    }

    pub fn zero(nodes: usize) -> Self {
        Self { coeffs: Vec::new(), values: vec![0.0; nodes], derivs: vec![0.0; nodes] }
    }

    /// Degree, ignoring trailing coefficients below `tol` in magnitude.
    pub fn degree(&self, tol: f64) -> Option<usize> {
        self.coeffs.iter().rposition(|c| c.abs() > tol)
    }

    /// `x · f`.
    pub fn mul_x(&self, basis: &RefBasis, nodes: &[f64]) -> Self {
        Self {
            coeffs: basis.mul_x(&self.coeffs),
            values: self.values.iter().zip(nodes).map(|(v, x)| v * x).collect(),
            derivs: self.values.iter().zip(&self.derivs).zip(nodes).map(|((v, d), x)| v + x * d).collect(),
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &PolyVector) {
        if self.coeffs.len() < other.coeffs.len() {
            self.coeffs.resize(other.coeffs.len(), 0.0);
        }
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += alpha * b;
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        for (a, b) in self.derivs.iter_mut().zip(&other.derivs) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in self.coeffs.iter_mut().chain(self.values.iter_mut()).chain(self.derivs.iter_mut()) {
            *v *= alpha;
        }
    }
}
