//! Skew inner products, symplectic Gram–Schmidt and the symplectic Arnoldi
//! iteration generating skew-orthogonal polynomials (SOPs).
//!
//! Basis vectors come in pairs `(S_{2k}, S_{2k+1})` with
//! `⟨S_{2k}, S_{2k+1}⟩ = 1` and all other pairings zero, so the skew Gram
//! matrix of a complete basis is `J`.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{PolyVector, RefBasis};
use crate::quad::{composite_gauss_legendre, gauss_hermite, gauss_legendre};
use crate::skew::{skew_cholesky_lower, SkewMatrix};

/// Symmetry class of the inner product.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Beta {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "4")]
    Four,
}

/// A skew-symmetric bilinear form on polynomials.
#[derive(Clone, Debug)]
pub enum SkewInnerProduct {
    /// Sums over a node set.
    ///
    /// β=1: `Σ_{x,y} f(x) g(y) ε(x,y) w(x) w(y)` with `ε(x,y) = sign(y-x)/2`.
    /// β=4: `Σ_x (f(x) g'(x) - f'(x) g(x)) w(x)²`.
    Discrete { beta: Beta, nodes: Vec<f64>, weights: Vec<f64>, basis: RefBasis },
    /// Integrals, precomputed as the skew Gram matrix of the reference basis.
    Continuous { beta: Beta, basis: RefBasis, gram: DMatrix<f64> },
}

impl SkewInnerProduct {
    fn discrete(beta: Beta, nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(Error::Shape("nodes and weights must be non-empty and of equal length".into()));
        }
        if nodes.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Shape("nodes must be strictly increasing".into()));
        }
        let basis = RefBasis::for_interval(nodes[0], *nodes.last().unwrap());
        Ok(SkewInnerProduct::Discrete { beta, nodes, weights, basis })
    }

    pub fn beta1_discrete(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        Self::discrete(Beta::One, nodes, weights)
    }

    pub fn beta4_discrete(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        Self::discrete(Beta::Four, nodes, weights)
    }

    /// β=1 continuous form on `[lo, hi]` with weight `w`, for polynomials up
    /// to `max_degree`. The inner integral is split at the outer variable:
    /// `⟨f,g⟩ = ½ ∫ f w (∫_x^hi g w - ∫_lo^x g w) dx`, with composite
    /// Gauss–Legendre on panels of width at most `panel`.
    pub fn beta1_continuous<W: Fn(f64) -> f64>(basis: RefBasis, w: W, lo: f64, hi: f64, max_degree: usize, panel: f64) -> Result<Self> {
        let order = 20;
        let panels = ((hi - lo) / panel).ceil().max(1.0) as usize;
        let h = (hi - lo) / panels as f64;
        let base = gauss_legendre(order);
        let d = max_degree + 1;
        let fw = |x: f64| -> Vec<f64> {
            let (v, _) = basis.eval_all(max_degree, x);
            let wx = w(x);
            v.into_iter().map(|p| p * wx).collect()
        };
        let mut gram = DMatrix::<f64>::zeros(d, d);
        let mut before = vec![0.0; d];
        let mut outer: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::with_capacity(panels * order);
        for p in 0..panels {
            let a = lo + p as f64 * h;
            let rule = base.mapped(a, a + h);
            for (&x, &wq) in rule.nodes.iter().zip(&rule.weights) {
                // ∫_lo^x φ_j w = (full panels) + ∫_a^x.
                let mut prefix = before.clone();
                let part = base.mapped(a, x);
                for (&y, &wy) in part.nodes.iter().zip(&part.weights) {
                    for (acc, v) in prefix.iter_mut().zip(fw(y)) {
                        *acc += wy * v;
                    }
                }
                outer.push((wq, fw(x), prefix));
            }
            for (&y, &wy) in rule.nodes.iter().zip(&rule.weights) {
                for (acc, v) in before.iter_mut().zip(fw(y)) {
                    *acc += wy * v;
                }
            }
        }
        let total = before;
        for (wq, fx, prefix) in &outer {
            for i in 0..d {
                let a = 0.5 * wq * fx[i];
                for j in 0..d {
                    gram[(i, j)] += a * (total[j] - 2.0 * prefix[j]);
                }
            }
        }
        let gram = 0.5 * (&gram - gram.transpose());
        Ok(SkewInnerProduct::Continuous { beta: Beta::One, basis, gram })
    }

    /// β=4 continuous form `∫ (f g' - f' g) w² dx` on `[lo, hi]`, by
    /// composite Gauss–Legendre.
    pub fn beta4_continuous<W: Fn(f64) -> f64>(basis: RefBasis, w: W, lo: f64, hi: f64, max_degree: usize, panel: f64) -> Result<Self> {
        let panels = ((hi - lo) / panel).ceil().max(1.0) as usize;
        let rule = composite_gauss_legendre(lo, hi, panels, 20);
        let d = max_degree + 1;
        let mut gram = DMatrix::<f64>::zeros(d, d);
        for (&x, &wq) in rule.nodes.iter().zip(&rule.weights) {
            let (v, dv) = basis.eval_all(max_degree, x);
            let c = wq * w(x).powi(2);
            for i in 0..d {
                for j in i + 1..d {
                    gram[(i, j)] += c * (v[i] * dv[j] - dv[i] * v[j]);
                }
            }
        }
        let gram = &gram - gram.transpose();
        Ok(SkewInnerProduct::Continuous { beta: Beta::Four, basis, gram })
    }

    /// GOE form: β=1 on the real line with `w(x) = e^{-x²/4}`, Hermite
    /// reference basis of variance 2.
    pub fn goe(max_degree: usize) -> Result<Self> {
        let basis = RefBasis::Hermite { sigma: std::f64::consts::SQRT_2 };
        let half = 2.0 * (2.0 * (max_degree as f64 + 1.0)).sqrt() + 14.0;
        Self::beta1_continuous(basis, |x| (-0.25 * x * x).exp(), -half, half, max_degree, 0.5)
    }

    /// GSE form: β=4 with `w(x)² = e^{-2x²}`, Hermite reference basis of
    /// variance 1/4. Gauss–Hermite after `x = u/√2` is exact here.
    pub fn gse(max_degree: usize) -> Result<Self> {
        let basis = RefBasis::Hermite { sigma: 0.5 };
        let rule = gauss_hermite(max_degree + 2);
        let d = max_degree + 1;
        let mut gram = DMatrix::<f64>::zeros(d, d);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for (&u, &wq) in rule.nodes.iter().zip(&rule.weights) {
            let (v, dv) = basis.eval_all(max_degree, s * u);
            for i in 0..d {
                for j in i + 1..d {
                    gram[(i, j)] += s * wq * (v[i] * dv[j] - dv[i] * v[j]);
                }
            }
        }
        let gram = &gram - gram.transpose();
        Ok(SkewInnerProduct::Continuous { beta: Beta::Four, basis, gram })
    }

    pub fn beta(&self) -> Beta {
        match self {
            SkewInnerProduct::Discrete { beta, .. } | SkewInnerProduct::Continuous { beta, .. } => *beta,
        }
    }

    pub fn basis(&self) -> &RefBasis {
        match self {
            SkewInnerProduct::Discrete { basis, .. } | SkewInnerProduct::Continuous { basis, .. } => basis,
        }
    }

    /// Domain nodes (empty for continuous forms).
    pub fn nodes(&self) -> &[f64] {
        match self {
            SkewInnerProduct::Discrete { nodes, .. } => nodes,
            SkewInnerProduct::Continuous { .. } => &[],
        }
    }

    /// Highest degree the form can evaluate, if bounded.
    pub fn max_degree(&self) -> Option<usize> {
        match self {
            SkewInnerProduct::Discrete { .. } => None,
            SkewInnerProduct::Continuous { gram, .. } => Some(gram.nrows() - 1),
        }
    }

    pub fn constant(&self, c: f64) -> PolyVector {
        PolyVector::constant(c, self.basis(), self.nodes())
    }

    pub fn mul_x(&self, f: &PolyVector) -> PolyVector {
        f.mul_x(self.basis(), self.nodes())
    }

    pub fn inner(&self, f: &PolyVector, g: &PolyVector) -> Result<f64> {
        match self {
            SkewInnerProduct::Discrete { beta: Beta::One, nodes, weights, .. } => {
                check_len(f, g, nodes.len())?;
                // Σ_{i<j} F_i G_j / 2 - Σ_{i>j} F_i G_j / 2 via running prefix sums.
                let (mut pf, mut pg, mut acc) = (0.0, 0.0, 0.0);
                for i in 0..nodes.len() {
                    let fi = f.values[i] * weights[i];
                    let gi = g.values[i] * weights[i];
                    acc += gi * pf - fi * pg;
                    pf += fi;
                    pg += gi;
                }
                Ok(0.5 * acc)
            }
            SkewInnerProduct::Discrete { beta: Beta::Four, nodes, weights, .. } => {
                check_len(f, g, nodes.len())?;
                Ok((0..nodes.len()).map(|i| (f.values[i] * g.derivs[i] - f.derivs[i] * g.values[i]) * weights[i] * weights[i]).sum())
            }
            SkewInnerProduct::Continuous { gram, .. } => {
                let d = gram.nrows();
                if f.coeffs.len() > d || g.coeffs.len() > d {
                    return Err(Error::Shape(format!("polynomial degree exceeds the precomputed maximum {}", d - 1)));
                }
                let mut s = 0.0;
                for (i, fi) in f.coeffs.iter().enumerate() {
                    for (j, gj) in g.coeffs.iter().enumerate() {
                        s += fi * gram[(i, j)] * gj;
                    }
                }
                Ok(s)
            }
        }
    }

    /// The β=1 discrete double sum evaluated term by term.
    pub fn inner_naive(&self, f: &PolyVector, g: &PolyVector) -> Result<f64> {
        match self {
            SkewInnerProduct::Discrete { beta: Beta::One, nodes, weights, .. } => {
                check_len(f, g, nodes.len())?;
                let mut s = 0.0;
                for i in 0..nodes.len() {
                    for j in 0..nodes.len() {
                        let eps = 0.5 * (nodes[j] - nodes[i]).signum() * if i == j { 0.0 } else { 1.0 };
                        s += f.values[i] * g.values[j] * eps * weights[i] * weights[j];
                    }
                }
                Ok(s)
            }
            _ => self.inner(f, g),
        }
    }

    /// The form evaluated with every term replaced by its magnitude; the
    /// scale against which cancellation in `⟨f, g⟩` is judged.
    pub fn inner_abs(&self, f: &PolyVector, g: &PolyVector) -> Result<f64> {
        match self {
            SkewInnerProduct::Discrete { beta: Beta::One, nodes, weights, .. } => {
                check_len(f, g, nodes.len())?;
                let sf: f64 = f.values.iter().zip(weights).map(|(v, w)| (v * w).abs()).sum();
                let sg: f64 = g.values.iter().zip(weights).map(|(v, w)| (v * w).abs()).sum();
                Ok(0.5 * sf * sg)
            }
            SkewInnerProduct::Discrete { beta: Beta::Four, nodes, weights, .. } => {
                check_len(f, g, nodes.len())?;
                Ok((0..nodes.len()).map(|i| ((f.values[i] * g.derivs[i]).abs() + (f.derivs[i] * g.values[i]).abs()) * weights[i] * weights[i]).sum())
            }
            SkewInnerProduct::Continuous { gram, .. } => {
                let mut s = 0.0;
                for (i, fi) in f.coeffs.iter().enumerate().take(gram.nrows()) {
                    for (j, gj) in g.coeffs.iter().enumerate().take(gram.ncols()) {
                        s += (fi * gram[(i, j)] * gj).abs();
                    }
                }
                Ok(s)
            }
        }
    }

    /// Euclidean inner product used by the ESR policies: node values for
    /// discrete forms, reference coefficients for continuous ones.
    pub fn euclid_dot(&self, f: &PolyVector, g: &PolyVector) -> f64 {
        match self {
            SkewInnerProduct::Discrete { .. } => f.values.iter().zip(&g.values).map(|(a, b)| a * b).sum(),
            SkewInnerProduct::Continuous { .. } => f.coeffs.iter().zip(&g.coeffs).map(|(a, b)| a * b).sum(),
        }
    }

    pub fn euclid_norm(&self, f: &PolyVector) -> f64 {
        self.euclid_dot(f, f).sqrt()
    }
}

fn check_len(f: &PolyVector, g: &PolyVector, m: usize) -> Result<()> {
    if f.values.len() != m || g.values.len() != m {
        return Err(Error::Shape("polynomial is not sampled on this domain".into()));
    }
    Ok(())
}

/// Elementary SR factorization policy: the scaling `r11` of the first
/// vector of a pair and the component `r12` removed from the second.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EsrKind {
    /// `r11 = ‖x1‖`, `r12 = 0`.
    Esr1,
    /// `r11 = ‖x1‖`, `r12 = s1ᵀ x2`.
    Esr2,
    /// `r11 = √|⟨x1, x2⟩|`, `r12 = 0`.
    Esr3,
    /// `r11 = 1`, `r12 = 0`.
    Esr3m,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Classical: all projections of a sweep from the same vector.
    Csgs,
    /// Modified: the vector is updated after each pair.
    Msgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reorth {
    None,
    Twice,
    /// Repeat sweeps while a sweep shrinks `‖v‖` below `eta` times its previous norm.
    Iterated { eta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GsOptions {
    pub esr: EsrKind,
    pub scheme: Scheme,
    pub reorth: Reorth,
}

impl Default for GsOptions {
    fn default() -> Self {
        Self { esr: EsrKind::Esr2, scheme: Scheme::Csgs, reorth: Reorth::Iterated { eta: DEFAULT_ETA } }
    }
}

pub const DEFAULT_ETA: f64 = 0.75;
/// Relative size below which a normalization constant is a breakdown.
pub const BREAKDOWN_TOL: f64 = 1e-14;
const MAX_SWEEPS: usize = 10;

/// `(r11, r12)` for a pair `(x1, x2)` under the given policy. `r12` is
/// computed against `s1 = x1 / r11`; without `x2` it is 0, and ESR3 then
/// uses `x2 = x · x1`.
pub fn esr_normalize(ip: &SkewInnerProduct, kind: EsrKind, x1: &PolyVector, x2: Option<&PolyVector>) -> Result<(f64, f64)> {
    let norm = || {
        let n = ip.euclid_norm(x1);
        if n == 0.0 {
            Err(Error::Breakdown { step: 0, value: 0.0 })
        } else {
            Ok(n)
        }
    };
    Ok(match kind {
        EsrKind::Esr1 => (norm()?, 0.0),
        EsrKind::Esr2 => {
            let r11 = norm()?;
            let r12 = x2.map_or(0.0, |x2| ip.euclid_dot(x1, x2) / r11);
            (r11, r12)
        }
        EsrKind::Esr3 => {
            let look;
            let x2 = match x2 {
                Some(v) => v,
                None => {
                    look = ip.mul_x(x1);
                    &look
                }
            };
            let r11 = ip.inner(x1, x2)?.abs().sqrt();
            if r11 == 0.0 {
                return Err(Error::Breakdown { step: 0, value: 0.0 });
            }
            (r11, 0.0)
        }
        EsrKind::Esr3m => (1.0, 0.0),
    })
}

/// Removes from `v` its components along the complete pairs of `s`.
/// Returns the accumulated coefficients (length `s.len()`, the entry of an
/// unpaired last vector left at 0).
fn project_pairs(ip: &SkewInnerProduct, s: &[PolyVector], v: &mut PolyVector, opts: &GsOptions) -> Result<Vec<f64>> {
    let pairs = s.len() / 2;
    let mut h = vec![0.0; s.len()];
    if pairs == 0 {
        return Ok(h);
    }
    let mut sweeps = 0;
    loop {
        let before = ip.euclid_norm(v);
        match opts.scheme {
            Scheme::Csgs => {
                let mut coef = Vec::with_capacity(pairs);
                for k in 0..pairs {
                    coef.push((-ip.inner(&s[2 * k + 1], v)?, ip.inner(&s[2 * k], v)?));
                }
                for (k, (a, b)) in coef.into_iter().enumerate() {
                    v.axpy(-a, &s[2 * k]);
                    v.axpy(-b, &s[2 * k + 1]);
                    h[2 * k] += a;
                    h[2 * k + 1] += b;
                }
            }
            Scheme::Msgs => {
                for k in 0..pairs {
                    let a = -ip.inner(&s[2 * k + 1], v)?;
                    v.axpy(-a, &s[2 * k]);
                    let b = ip.inner(&s[2 * k], v)?;
                    v.axpy(-b, &s[2 * k + 1]);
                    h[2 * k] += a;
                    h[2 * k + 1] += b;
                }
            }
        }
        sweeps += 1;
        let after = ip.euclid_norm(v);
        let again = match opts.reorth {
            Reorth::None => false,
            Reorth::Twice => sweeps < 2,
            Reorth::Iterated { eta } => after < eta * before && sweeps < MAX_SWEEPS,
        };
        if !again {
            return Ok(h);
        }
    }
}

/// One symplectic Gram–Schmidt step: makes `v` the next basis vector.
/// Returns it with coefficients `h` (length `s.len() + 1`) such that
/// `v_in = Σ h_k S_k + h_last v_out`.
pub fn skew_orthonormalize(ip: &SkewInnerProduct, s: &[PolyVector], mut v: PolyVector, opts: &GsOptions) -> Result<(PolyVector, Vec<f64>)> {
    let n = s.len();
    let v_in = ip.euclid_norm(&v);
    let mut h = project_pairs(ip, s, &mut v, opts)?;
    if n % 2 == 1 {
        // Second vector of a pair: remove r12 · s1, then scale so ⟨s1, v⟩ = 1.
        let s1 = &s[n - 1];
        let r12 = match opts.esr {
            EsrKind::Esr2 => ip.euclid_dot(s1, &v) / ip.euclid_norm(s1).powi(2),
            _ => 0.0,
        };
        v.axpy(-r12, s1);
        h[n - 1] = r12;
        let r = ip.inner(s1, &v)?;
        if !(r.abs() > BREAKDOWN_TOL * ip.inner_abs(s1, &v)?) {
            return Err(Error::Breakdown { step: n, value: r.abs() });
        }
        v.scale(1.0 / r);
        h.push(r);
    } else {
        let v_norm = ip.euclid_norm(&v);
        if !(v_norm > BREAKDOWN_TOL * v_in) {
            return Err(Error::Breakdown { step: n, value: v_norm });
        }
        let r11 = match opts.esr {
            EsrKind::Esr1 | EsrKind::Esr2 => v_norm,
            EsrKind::Esr3 => {
                let xv = ip.mul_x(&v);
                let p = ip.inner(&v, &xv)?;
                if !(p.abs() > BREAKDOWN_TOL * ip.inner_abs(&v, &xv)?) {
                    return Err(Error::Breakdown { step: n, value: p.abs().sqrt() });
                }
                p.abs().sqrt()
            }
            EsrKind::Esr3m => 1.0,
        };
        v.scale(1.0 / r11);
        h.push(r11);
    }
    Ok((v, h))
}

/// Output of the Arnoldi iteration: `x S = S H + r e_{n-1}ᵀ`.
#[derive(Clone, Debug)]
pub struct SymplecticBasis {
    pub s: Vec<PolyVector>,
    pub h: DMatrix<f64>,
    pub r: PolyVector,
}

/// Symplectic Arnoldi for multiplication by `x`, started from the constant
/// polynomial. Produces `n` vectors `S_0 .. S_{n-1}` with `deg S_k = k`.
/// Column `j < n-1` of `H` expands `x S_j` in `S_0 .. S_{j+1}`; the last
/// column holds the projection of `x S_{n-1}` onto the complete pairs, and
/// `r` is the remainder.
pub fn symplectic_arnoldi(ip: &SkewInnerProduct, n: usize, opts: &GsOptions) -> Result<SymplecticBasis> {
    if n == 0 {
        return Err(Error::Shape("iteration count must be positive".into()));
    }
    if let SkewInnerProduct::Discrete { nodes, .. } = ip {
        if nodes.len() < n {
            return Err(Error::Shape(format!("{} nodes cannot support degree {}", nodes.len(), n - 1)));
        }
    }
    if let Some(d) = ip.max_degree() {
        if d < n {
            return Err(Error::Shape(format!("inner product precomputed up to degree {d}, need {n}")));
        }
    }
    let mut x0 = ip.constant(1.0);
    let r0 = match opts.esr {
        EsrKind::Esr1 | EsrKind::Esr2 => ip.euclid_norm(&x0),
        EsrKind::Esr3 | EsrKind::Esr3m => 1.0,
    };
    if !(r0 > 0.0) {
        return Err(Error::Breakdown { step: 0, value: r0 });
    }
    x0.scale(1.0 / r0);
    let mut s = vec![x0];
    let mut h = DMatrix::<f64>::zeros(n, n);
    for j in 0..n - 1 {
        let v = ip.mul_x(&s[j]);
        let (next, col) = skew_orthonormalize(ip, &s, v, opts)?;
        for (k, c) in col.into_iter().enumerate() {
            h[(k, j)] = c;
        }
        s.push(next);
    }
    let mut r = ip.mul_x(&s[n - 1]);
    let mut col = project_pairs(ip, &s, &mut r, opts)?;
    if n % 2 == 1 && opts.esr == EsrKind::Esr2 {
        let u = &s[n - 1];
        let r12 = ip.euclid_dot(u, &r) / ip.euclid_norm(u).powi(2);
        r.axpy(-r12, u);
        col[n - 1] = r12;
    }
    for (k, c) in col.into_iter().enumerate() {
        h[(k, n - 1)] = c;
    }
    Ok(SymplecticBasis { s, h, r })
}

/// SOPs from the moment matrix `M_ij = ⟨x^i, x^j⟩`: with `M = Bᵀ J B`,
/// `B` upper triangular, the polynomials `Σ_i x^i (B⁻¹)_ij` are
/// skew-orthonormal. `n` must be even. Ill-conditioning is not guarded
/// against beyond exactly zero pivots.
pub fn cholesky_sop(ip: &SkewInnerProduct, n: usize) -> Result<SymplecticBasis> {
    if n == 0 || n % 2 == 1 {
        return Err(Error::Shape("moment matrix order must be even and positive".into()));
    }
    let mut mono = vec![ip.constant(1.0)];
    for i in 1..n {
        let next = ip.mul_x(&mono[i - 1]);
        mono.push(next);
    }
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = ip.inner(&mono[i], &mono[j])?;
            m[(i, j)] = v;
            m[(j, i)] = -v;
        }
    }
    let m = SkewMatrix::from_dmatrix_projected(&m)?;
    // M = C J Cᵀ with C lower, so B = Cᵀ. Only exactly vanishing pivots are
    // rejected: the baseline is meant to show its loss of accuracy.
    let c = skew_cholesky_lower(&m, 0.0).map_err(|e| Error::Rank(format!("moment matrix factorization failed: {e}")))?;
    let b = c.transpose();
    let binv = b
        .solve_upper_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Rank("moment factor is singular".into()))?;
    let mut s = Vec::with_capacity(n);
    for j in 0..n {
        let mut p = PolyVector::zero(ip.nodes().len());
        for i in 0..=j {
            p.axpy(binv[(i, j)], &mono[i]);
        }
        s.push(p);
    }
    Ok(SymplecticBasis { s, h: DMatrix::zeros(0, 0), r: PolyVector::zero(ip.nodes().len()) })
}

/// Skew Gram matrix `G_ij = ⟨S_i, S_j⟩`.
pub fn skew_gram(ip: &SkewInnerProduct, s: &[PolyVector]) -> Result<DMatrix<f64>> {
    let m = s.len();
    let mut g = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            g[(i, j)] = ip.inner(&s[i], &s[j])?;
        }
    }
    Ok(g)
}

/// Max and mean of `|G - J|` over all entries (`J` pairs `2k` with `2k+1`;
/// an unpaired last vector should be skew-orthogonal to everything).
pub fn skew_orthogonality_error(ip: &SkewInnerProduct, s: &[PolyVector]) -> Result<(f64, f64)> {
    let g = skew_gram(ip, s)?;
    let m = s.len();
    let (mut max, mut sum) = (0.0f64, 0.0);
    for i in 0..m {
        for j in 0..m {
            let target = if i % 2 == 0 && j == i + 1 {
                1.0
            } else if j % 2 == 0 && i == j + 1 {
                -1.0
            } else {
                0.0
            };
            let e = (g[(i, j)] - target).abs();
            max = max.max(e);
            sum += e;
        }
    }
    Ok((max, sum / (m * m).max(1) as f64))
}

/// CSV with one row per basis vector: node values for discrete forms,
/// reference coefficients (zero padded) for continuous ones.
pub fn write_sop_csv<W: Write>(mut w: W, ip: &SkewInnerProduct, s: &[PolyVector]) -> Result<()> {
    let fmt = crate::sampler::format_real;
    match ip {
        SkewInnerProduct::Discrete { nodes, .. } => {
            let header: Vec<String> = nodes.iter().map(|&x| fmt(x)).collect();
            writeln!(w, "k,{}", header.join(","))?;
            for (k, p) in s.iter().enumerate() {
                let row: Vec<String> = p.values.iter().map(|&v| fmt(v)).collect();
                writeln!(w, "{k},{}", row.join(","))?;
            }
        }
        SkewInnerProduct::Continuous { .. } => {
            let width = s.iter().map(|p| p.coeffs.len()).max().unwrap_or(0);
            let header: Vec<String> = (0..width).map(|j| format!("c{j}")).collect();
            writeln!(w, "k,{}", header.join(","))?;
            for (k, p) in s.iter().enumerate() {
                let row: Vec<String> = (0..width).map(|j| fmt(p.coeffs.get(j).copied().unwrap_or(0.0))).collect();
                writeln!(w, "{k},{}", row.join(","))?;
            }
        }
    }
    Ok(())
}
