//! 2×2 matrix-valued kernels of β = 1, 4 ensembles, their discretization,
//! Fredholm Pfaffians and conditional kernels.
//!
//! Finite-N kernels are assembled from skew-orthogonal polynomials. With
//! per-point features `a_k(x)`, `b_k(x)` (β=1: `a = ψ_k`, `b = w R_k`;
//! β=4: `a = w Q_k`, `b = w Q'_k`) every entry is a sum over the pairs
//! `(2k, 2k+1)`:
//!
//! ```text
//! K11(x,y) = Σ a_{2k+1}(x) a_{2k}(y) - a_{2k}(x) a_{2k+1}(y)   [- sign(x-y)/2 for β=1]
//! S(x,y)   = Σ b_{2k+1}(x) a_{2k}(y) - b_{2k}(x) a_{2k+1}(y)
//! K22(x,y) = Σ b_{2k+1}(x) b_{2k}(y) - b_{2k}(x) b_{2k+1}(y)
//! K = [[K11, S(y,x)], [-S(x,y), K22]]
//! ```

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::airy::{self, AiryTables};
use crate::error::{Error, Result};
use crate::krylov::{symplectic_arnoldi, Beta, GsOptions, SkewInnerProduct};
use crate::poly::RefBasis;
use crate::quad::{composite_gauss_legendre, gauss_legendre, legendre_sign_matrix};
use crate::skew::{pfaffian, SkewMatrix};

pub type Block = [[f64; 2]; 2];

/// Box on which Airy kernels may be evaluated.
pub const AIRY_BOX: (f64, f64) = (-16.0, 14.0);

/// Corner-growth node sets run up to the first node with `q^{x/2}` below
/// this value.
pub const CORNER_WEIGHT_FLOOR: f64 = 1e-25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[serde(rename = "goe")]
    GoeN,
    #[serde(rename = "gse")]
    GseN,
    Airy1,
    Airy4,
    CornerGrowth,
    Custom,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::GoeN => "goe",
            Family::GseN => "gse",
            Family::Airy1 => "airy1",
            Family::Airy4 => "airy4",
            Family::CornerGrowth => "corner_growth",
            Family::Custom => "custom",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<usize>,
    /// Point the kernel has been conditioned on.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conditioned_at: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Ground {
    Interval { lo: f64, hi: f64 },
    Nodes { nodes: Vec<f64> },
}

/// Uniform grid `x_min, x_min + Δ, ...` up to `x_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub delta: f64,
    #[serde(skip)]
    nodes: Vec<f64>,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !(x_max >= x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::Shape(format!("invalid grid [{x_min}, {x_max}] with spacing {delta}")));
        }
        let count = ((x_max - x_min) / delta + 1e-9).floor() as usize + 1;
        let nodes = (0..count).map(|i| x_min + i as f64 * delta).collect();
        Ok(Self { x_min, x_max, delta, nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Per-point features of an SOP kernel.
#[derive(Clone, Debug)]
enum Features {
    /// `a = ψ_k`, `b = w R_k` with `w = e^{-x²/4}`, Hermite coefficients.
    Goe { basis: RefBasis, coeffs: Vec<Vec<f64>> },
    /// `a = w Q_k`, `b = w Q'_k` with `w = e^{-x²}`.
    Gse { basis: RefBasis, coeffs: Vec<Vec<f64>> },
    /// Tabulated on a node set.
    Table { nodes: Vec<f64>, a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
}

#[derive(Clone)]
enum Imp {
    Sop { features: Features, beta: Beta },
    Airy(Beta),
    Custom(Arc<dyn Fn(f64, f64) -> Block + Send + Sync>),
    Conditioned { base: Box<Kernel2x2>, s: f64, base_ss_inv: Block },
}

/// A 2×2 matrix-valued kernel `K(x, y)` with `K(x,y) = -K(y,x)ᵀ`.
#[derive(Clone)]
pub struct Kernel2x2 {
    pub family: Family,
    pub params: KernelParams,
    pub ground: Ground,
    imp: Imp,
}

impl fmt::Debug for Kernel2x2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel2x2").field("family", &self.family).field("params", &self.params).field("ground", &self.ground).finish()
    }
}

fn mat2_mul(a: &Block, b: &Block) -> Block {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn pair_sum(u: &[f64], v: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..u.len() / 2 {
        s += u[2 * k + 1] * v[2 * k] - u[2 * k] * v[2 * k + 1];
    }
    s
}

fn sop_block(beta: Beta, x: f64, (ax, bx): (&[f64], &[f64]), y: f64, (ay, by): (&[f64], &[f64])) -> Block {
    let mut k11 = pair_sum(ax, ay);
    if beta == Beta::One {
        k11 -= 0.5 * sign(x - y);
    }
    let s_xy = pair_sum(bx, ay);
    let s_yx = pair_sum(by, ax);
    [[k11, s_yx], [-s_xy, pair_sum(bx, by)]]
}

/// Closed form of `ψ_j(x) = ½ ∫ φ_j(y) sign(x-y) e^{-y²/4} dy` for the
/// Hermite basis `φ_j = He_j(x/√2)/√j!`:
/// `ψ_0 = √π erf(x/2)`, `ψ_j = -√(2/j) φ_{j-1}(x) e^{-x²/4}`.
fn goe_psi_basis(basis: &RefBasis, deg: usize, x: f64) -> Vec<f64> {
    let (phi, _) = basis.eval_all(deg.saturating_sub(1), x);
    let w = (-0.25 * x * x).exp();
    let mut out = vec![0.0; deg + 1];
    out[0] = std::f64::consts::PI.sqrt() * libm::erf(0.5 * x);
    for j in 1..=deg {
        out[j] = -(2.0 / j as f64).sqrt() * phi[j - 1] * w;
    }
    out
}

fn dot(c: &[f64], v: &[f64]) -> f64 {
    c.iter().zip(v).map(|(a, b)| a * b).sum()
}

impl Features {
    fn at(&self, x: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            Features::Goe { basis, coeffs } => {
                let deg = coeffs.iter().map(Vec::len).max().unwrap_or(1) - 1;
                let (phi, _) = basis.eval_all(deg, x);
                let psi = goe_psi_basis(basis, deg, x);
                let w = (-0.25 * x * x).exp();
                let a = coeffs.iter().map(|c| dot(c, &psi)).collect();
                let b = coeffs.iter().map(|c| w * dot(c, &phi)).collect();
                Ok((a, b))
            }
            Features::Gse { basis, coeffs } => {
                let deg = coeffs.iter().map(Vec::len).max().unwrap_or(1) - 1;
                let (phi, dphi) = basis.eval_all(deg, x);
                let w = (-x * x).exp();
                let a = coeffs.iter().map(|c| w * dot(c, &phi)).collect();
                let b = coeffs.iter().map(|c| w * dot(c, &dphi)).collect();
                Ok((a, b))
            }
            Features::Table { nodes, a, b } => {
                let i = node_index(nodes, x)?;
                Ok((a[i].clone(), b[i].clone()))
            }
        }
    }
}

fn node_index(nodes: &[f64], x: f64) -> Result<usize> {
    let i = nodes.partition_point(|&v| v < x - 1e-9);
    if i < nodes.len() && (nodes[i] - x).abs() <= 1e-9 {
        Ok(i)
    } else {
        Err(Error::Range { x, lo: nodes[0], hi: *nodes.last().unwrap() })
    }
}

impl Kernel2x2 {
    /// Kernel from an arbitrary function; only used through `eval`.
    pub fn custom<F>(ground: Ground, f: F) -> Self
    where
        F: Fn(f64, f64) -> Block + Send + Sync + 'static,
    {
        Self { family: Family::Custom, params: KernelParams::default(), ground, imp: Imp::Custom(Arc::new(f)) }
    }

    /// Nodes of a discrete ground set.
    pub fn nodes(&self) -> Option<&[f64]> {
        match &self.ground {
            Ground::Nodes { nodes } => Some(nodes),
            Ground::Interval { .. } => None,
        }
    }

    fn check_support(&self, x: f64) -> Result<()> {
        match &self.ground {
            Ground::Interval { lo, hi } => {
                if x >= *lo && x <= *hi {
                    Ok(())
                } else {
                    Err(Error::Range { x, lo: *lo, hi: *hi })
                }
            }
            Ground::Nodes { nodes } => node_index(nodes, x).map(|_| ()),
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<Block> {
        self.check_support(x)?;
        self.check_support(y)?;
        match &self.imp {
            Imp::Sop { features, beta } => {
                let (ax, bx) = features.at(x)?;
                let (ay, by) = features.at(y)?;
                Ok(sop_block(*beta, x, (&ax, &bx), y, (&ay, &by)))
            }
            Imp::Airy(beta) => {
                let (u, v) = (airy::airy_eval(x)?, airy::airy_eval(y)?);
                let k = airy::k_ai(x, y)?;
                let k_dy = airy::k_ai_dy(x, y)?;
                let (t_xy, t_yx) = (airy::k_ai_tail(x, y)?, airy::k_ai_tail(y, x)?);
                let _ = t_yx;
                Ok(airy_block(*beta, x, &u, y, &v, k, k_dy, t_xy))
            }
            Imp::Custom(f) => Ok(f(x, y)),
            Imp::Conditioned { base, s, base_ss_inv } => {
                let kxy = base.eval(x, y)?;
                let kxs = base.eval(x, *s)?;
                let ksy = base.eval(*s, y)?;
                let corr = mat2_mul(&mat2_mul(&kxs, base_ss_inv), &ksy);
                let mut out = kxy;
                for i in 0..2 {
                    for j in 0..2 {
                        out[i][j] -= corr[i][j];
                    }
                }
                Ok(out)
            }
        }
    }

    /// First intensity `ρ₁(x) = K12(x, x)`.
    pub fn rho1(&self, x: f64) -> Result<f64> {
        Ok(self.eval(x, x)?[0][1])
    }

    /// All blocks `K(x_i, x_j)`, row-major. The lower triangle is mirrored
    /// from the upper one and diagonal blocks are exactly antisymmetric.
    pub fn blocks(&self, xs: &[f64]) -> Result<Vec<Block>> {
        for &x in xs {
            self.check_support(x)?;
        }
        let n = xs.len();
        let mut out = vec![[[0.0; 2]; 2]; n * n];
        match &self.imp {
            Imp::Sop { features, beta } => {
                let feats = xs.iter().map(|&x| features.at(x)).collect::<Result<Vec<_>>>()?;
                for i in 0..n {
                    for j in i..n {
                        out[i * n + j] = sop_block(*beta, xs[i], (&feats[i].0, &feats[i].1), xs[j], (&feats[j].0, &feats[j].1));
                    }
                }
            }
            Imp::Airy(beta) => {
                let t = AiryTables::new(xs)?;
                for i in 0..n {
                    for j in i..n {
                        let p = i * n + j;
                        out[p] = airy_block(*beta, xs[i], &t.values[i], xs[j], &t.values[j], t.k[p], t.k_dy[p], t.tail[p]);
                    }
                }
            }
            Imp::Custom(f) => {
                for i in 0..n {
                    for j in i..n {
                        out[i * n + j] = f(xs[i], xs[j]);
                    }
                }
            }
            Imp::Conditioned { base, s, base_ss_inv } => {
                let mut ext = xs.to_vec();
                ext.push(*s);
                let m = n + 1;
                let b = base.blocks(&ext)?;
                for i in 0..n {
                    let left = mat2_mul(&b[i * m + n], base_ss_inv);
                    for j in i..n {
                        let corr = mat2_mul(&left, &b[n * m + j]);
                        let mut v = b[i * m + j];
                        for r in 0..2 {
                            for c in 0..2 {
                                v[r][c] -= corr[r][c];
                            }
                        }
                        out[i * n + j] = v;
                    }
                }
            }
        }
        for i in 0..n {
            let d = out[i * n + i][0][1];
            out[i * n + i] = [[0.0, d], [-d, 0.0]];
            for j in 0..i {
                let u = out[j * n + i];
                out[i * n + j] = [[-u[0][0], -u[1][0]], [-u[0][1], -u[1][1]]];
            }
        }
        Ok(out)
    }

    /// Skew matrix with blocks `√(w_i w_j) K(x_i, x_j)`.
    pub fn weighted_matrix(&self, xs: &[f64], weights: &[f64]) -> Result<SkewMatrix> {
        if xs.len() != weights.len() {
            return Err(Error::Shape("nodes and weights differ in length".into()));
        }
        let b = self.blocks(xs)?;
        let n = xs.len();
        let r: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
        Ok(SkewMatrix::from_blocks(n, |i, j| {
            let c = r[i] * r[j];
            let k = b[i * n + j];
            [[c * k[0][0], c * k[0][1]], [c * k[1][0], c * k[1][1]]]
        }))
    }

    /// Entry `e` and coefficient `c` of a `c · sign(x - y)` term in `K_ee`.
    fn jump(&self) -> Option<(usize, f64)> {
        match &self.imp {
            Imp::Sop { features: Features::Goe { .. }, .. } => Some((0, -0.5)),
            Imp::Airy(Beta::One) => Some((1, -0.25)),
            Imp::Conditioned { base, .. } => base.jump(),
            _ => None,
        }
    }

    /// Quadrature on `(s, s_max]`: Gauss–Legendre with `order` nodes on an
    /// interval ground, every node with weight 1 on a discrete one.
    pub fn quadrature(&self, s: f64, s_max: f64, order: usize) -> (Vec<f64>, Vec<f64>) {
        match &self.ground {
            Ground::Interval { .. } => {
                let r = gauss_legendre(order).mapped(s, s_max);
                (r.nodes, r.weights)
            }
            Ground::Nodes { nodes } => {
                let xs: Vec<f64> = nodes.iter().cloned().filter(|&x| x > s + 1e-9 && x <= s_max + 1e-9).collect();
                let w = vec![1.0; xs.len()];
                (xs, w)
            }
        }
    }

    /// The operator restricted to `(s, s_max]` as a skew matrix. A sign
    /// jump on the diagonal is integrated with the exact Gauss–Legendre
    /// sign matrix instead of the plain rule.
    pub fn restricted_matrix(&self, s: f64, s_max: f64, order: usize) -> Result<SkewMatrix> {
        let (xs, ws) = self.quadrature(s, s_max, order);
        let mut a = self.weighted_matrix(&xs, &ws)?;
        if let (Ground::Interval { .. }, Some((e, c))) = (&self.ground, self.jump()) {
            let rule = gauss_legendre(order);
            let sm = legendre_sign_matrix(&rule);
            let half = 0.5 * (s_max - s);
            let n = xs.len();
            for i in 0..n {
                for j in i + 1..n {
                    let plain = (ws[i] * ws[j]).sqrt() * c * sign(xs[i] - xs[j]);
                    // ½ sign(x_i - x_j) w_j  ->  E_ij, symmetrized by √(w_i / w_j).
                    let exact = 2.0 * c * half * sm[i * n + j] * (ws[i] / ws[j]).sqrt();
                    let v = a.get(2 * i + e, 2 * j + e) - plain + exact;
                    a.set(2 * i + e, 2 * j + e, v);
                }
            }
        }
        Ok(a)
    }
}

#[allow(clippy::too_many_arguments)]
fn airy_block(beta: Beta, x: f64, u: &airy::AiryValues, y: f64, v: &airy::AiryValues, k: f64, k_dy: f64, t_xy: f64) -> Block {
    match beta {
        Beta::One => {
            let k11 = 2.0 * k_dy + u.ai * v.ai;
            let s_xy = k + 0.5 * u.ai * (1.0 - v.ai_tail);
            let s_yx = k + 0.5 * v.ai * (1.0 - u.ai_tail);
            let is = -t_xy + 0.5 * (v.ai_tail - u.ai_tail) + 0.5 * u.ai_tail * v.ai_tail;
            let k22 = 0.5 * (is - 0.5 * sign(x - y));
            [[k11, s_xy], [-s_yx, k22]]
        }
        Beta::Four => {
            let k11 = AIRY4_K11_SIGN * (0.5 * k_dy + 0.25 * u.ai * v.ai);
            let s_xy = 0.5 * k - 0.25 * u.ai * v.ai_tail;
            let s_yx = 0.5 * k - 0.25 * v.ai * u.ai_tail;
            let k22 = -0.5 * t_xy + 0.25 * u.ai_tail * v.ai_tail;
            [[k11, s_xy], [-s_yx, k22]]
        }
    }
}

const AIRY4_K11_SIGN: f64 = 1.0;

/// Finite-N GOE (β=1) or GSE (β=4) kernel for even `n` (GOE) or any `n ≥ 1`
/// (GSE). The SOPs come from the symplectic Arnoldi iteration.
pub fn build_finite_kernel(family: Family, n: usize) -> Result<Kernel2x2> {
    let opts = GsOptions::default();
    let (features, beta) = match family {
        Family::GoeN => {
            if n == 0 || n % 2 == 1 {
                return Err(Error::Unsupported(format!("GOE kernel needs even N, got {n}")));
            }
            let ip = SkewInnerProduct::goe(n)?;
            let sb = symplectic_arnoldi(&ip, n, &opts)?;
            (Features::Goe { basis: *ip.basis(), coeffs: sb.s.into_iter().map(|p| p.coeffs).collect() }, Beta::One)
        }
        Family::GseN => {
            if n == 0 {
                return Err(Error::Unsupported("GSE kernel needs N >= 1".into()));
            }
            let ip = SkewInnerProduct::gse(2 * n)?;
            let sb = symplectic_arnoldi(&ip, 2 * n, &opts)?;
            (Features::Gse { basis: *ip.basis(), coeffs: sb.s.into_iter().map(|p| p.coeffs).collect() }, Beta::Four)
        }
        other => return Err(Error::Unsupported(format!("{other} is not a finite-N Gaussian family"))),
    };
    Ok(Kernel2x2 {
        family,
        params: KernelParams { n: Some(n), ..Default::default() },
        ground: Ground::Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY },
        imp: Imp::Sop { features, beta },
    })
}

/// Airy₁ (`beta = 1`) or Airy₄ (`beta = 4`) kernel.
pub fn build_airy_kernel(beta: Beta) -> Kernel2x2 {
    let family = if beta == Beta::One { Family::Airy1 } else { Family::Airy4 };
    Kernel2x2 { family, params: KernelParams::default(), ground: Ground::Interval { lo: AIRY_BOX.0, hi: AIRY_BOX.1 }, imp: Imp::Airy(beta) }
}

/// Default corner-growth cutoff: the first node with `q^{x/2}` below
/// [`CORNER_WEIGHT_FLOOR`], moved up so the node count is even.
pub fn default_corner_cutoff(q: f64) -> usize {
    let mut c = (2.0 * CORNER_WEIGHT_FLOOR.ln() / q.ln()).floor() as usize + 1;
    while q.powf(c as f64 / 2.0) >= CORNER_WEIGHT_FLOOR {
        c += 1;
    }
    if (c + 1) % 2 == 1 {
        c += 1;
    }
    c
}

/// Discrete β=1 kernel of the symmetric corner-growth model on nodes
/// `0..=cutoff` with weight `w(x) = q^{x/2}`. A configuration `h` gives
/// `F(N) = max h - N + 1`.
pub fn corner_growth_kernel(q: f64, n: usize, cutoff: Option<usize>) -> Result<Kernel2x2> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Shape(format!("q must lie in (0, 1), got {q}")));
    }
    if n == 0 || n % 2 == 1 {
        return Err(Error::Unsupported(format!("corner-growth kernel needs even N, got {n}")));
    }
    let cutoff = cutoff.unwrap_or_else(|| default_corner_cutoff(q));
    if cutoff + 1 < n {
        return Err(Error::Rank(format!("{} nodes cannot carry {n} points", cutoff + 1)));
    }
    let nodes: Vec<f64> = (0..=cutoff).map(|x| x as f64).collect();
    let weights: Vec<f64> = nodes.iter().map(|&x| q.powf(0.5 * x)).collect();
    let ip = SkewInnerProduct::beta1_discrete(nodes.clone(), weights.clone())?;
    let sb = symplectic_arnoldi(&ip, n, &GsOptions::default())?;
    let m = nodes.len();
    let mut a = vec![vec![0.0; n]; m];
    let mut b = vec![vec![0.0; n]; m];
    for (k, r) in sb.s.iter().enumerate() {
        let f: Vec<f64> = r.values.iter().zip(&weights).map(|(v, w)| v * w).collect();
        let total: f64 = f.iter().sum();
        // ψ_k(x_i) = ½ (Σ_{j<i} f_j - Σ_{j>i} f_j)
        let mut below = 0.0;
        for i in 0..m {
            a[i][k] = 0.5 * (below - (total - below - f[i]));
            b[i][k] = f[i];
            below += f[i];
        }
    }
    Ok(Kernel2x2 {
        family: Family::CornerGrowth,
        params: KernelParams { n: Some(n), q: Some(q), cutoff: Some(cutoff), conditioned_at: None },
        ground: Ground::Nodes { nodes: nodes.clone() },
        imp: Imp::Sop { features: Features::Table { nodes, a, b }, beta: Beta::One },
    })
}

/// `F(N) = max h - N + 1` for a corner-growth configuration.
pub fn corner_growth_statistic(max_node: f64, n: usize) -> i64 {
    max_node.round() as i64 - n as i64 + 1
}

/// Blocks `Δ·K(x_i, x_j)` on the grid; for discrete-ground kernels the grid
/// nodes must be kernel nodes and `Δ` is replaced by 1.
pub fn discretize(k: &Kernel2x2, grid: &Grid) -> Result<SkewMatrix> {
    let delta = if k.nodes().is_some() { 1.0 } else { grid.delta };
    k.weighted_matrix(grid.nodes(), &vec![delta; grid.len()])
}

/// The kernel on all of its nodes (discrete ground only).
pub fn discretize_nodes(k: &Kernel2x2) -> Result<SkewMatrix> {
    let nodes = k.nodes().ok_or_else(|| Error::Unsupported("kernel has a continuous ground set".into()))?.to_vec();
    let w = vec![1.0; nodes.len()];
    k.weighted_matrix(&nodes, &w)
}

/// `pf(J - K)` restricted to `(s, s_max]`, the probability of no points
/// there. Continuous grounds use `nodes` Gauss–Legendre points.
pub fn fredholm_pfaffian(k: &Kernel2x2, s: f64, s_max: f64, nodes: usize) -> Result<f64> {
    if !(s < s_max) {
        return Err(Error::Shape(format!("need s < s_max, got {s} >= {s_max}")));
    }
    let a = k.restricted_matrix(s, s_max, nodes)?;
    let m = SkewMatrix::standard_symplectic(a.order_pairs()).add_scaled(-1.0, &a)?;
    let (sg, log) = pfaffian(&m);
    let v = if sg == 0.0 { 0.0 } else { sg * log.exp() };
    if !v.is_finite() {
        return Err(Error::Numerical(format!("Fredholm Pfaffian at s = {s} is not finite")));
    }
    Ok(v)
}

/// `K(x,y) - K(x,s) K(s,s)⁻¹ K(s,y)`, the kernel given a point at `s`.
pub fn condition_at_point(k: &Kernel2x2, s: f64) -> Result<Kernel2x2> {
    let kss = k.eval(s, s)?;
    let r = kss[0][1];
    if !(r.abs() > 1e-300) || !r.is_finite() {
        return Err(Error::ConditioningImpossible);
    }
    // [[0, r], [-r, 0]]⁻¹ = [[0, -1/r], [1/r, 0]]
    let inv = [[0.0, -1.0 / r], [1.0 / r, 0.0]];
    let mut params = k.params.clone();
    params.conditioned_at = Some(s);
    Ok(Kernel2x2 { family: k.family, params, ground: k.ground.clone(), imp: Imp::Conditioned { base: Box::new(k.clone()), s, base_ss_inv: inv } })
}

/// `∫_a^b K12(x, x) dx` (a sum over nodes in `[a, b]` for discrete grounds).
pub fn skew_trace(k: &Kernel2x2, a: f64, b: f64) -> Result<f64> {
    match k.nodes() {
        Some(nodes) => nodes.iter().filter(|&&x| x >= a - 1e-9 && x <= b + 1e-9).map(|&x| k.rho1(x)).sum(),
        None => {
            let panels = ((b - a) / 0.5).ceil().max(1.0) as usize;
            let rule = composite_gauss_legendre(a, b, panels, 16);
            let mut s = 0.0;
            for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
                s += w * k.rho1(x)?;
            }
            Ok(s)
        }
    }
}

/// Probability of exactly one point in `(s, s_max]`:
/// `½ pf(J - K) tr((J - K)⁻¹ K)` on the quadrature discretization.
pub fn exactly_one_probability(k: &Kernel2x2, s: f64, s_max: f64, nodes: usize) -> Result<f64> {
    let a = k.restricted_matrix(s, s_max, nodes)?;
    if a.order_pairs() == 0 {
        return Ok(0.0);
    }
    let m = SkewMatrix::standard_symplectic(a.order_pairs()).add_scaled(-1.0, &a)?;
    let (sg, log) = pfaffian(&m);
    if sg == 0.0 {
        return Ok(0.0);
    }
    let ad = a.to_dmatrix();
    let lu = m.to_dmatrix().lu();
    let x: DMatrix<f64> = lu.solve(&ad).ok_or_else(|| Error::Numerical("J - K is singular".into()))?;
    let p = 0.5 * sg * log.exp() * x.trace();
    if !p.is_finite() {
        return Err(Error::Numerical(format!("exactly-one probability at s = {s} is not finite")));
    }
    Ok(p)
}

/// Density of the second-largest point at `s`:
/// `ρ₁(s) · P(exactly one point in (s, s_max] | point at s)`.
pub fn second_eigenvalue_density(k: &Kernel2x2, s: f64, s_max: f64, nodes: usize) -> Result<f64> {
    let rho = k.rho1(s)?;
    if rho.abs() < 1e-300 {
        return Ok(0.0);
    }
    let ks = condition_at_point(k, s)?;
    Ok(rho * exactly_one_probability(&ks, s, s_max, nodes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::exact_distribution;
    use crate::skew::PointIndexSet;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn antisymmetry_error(k: &Kernel2x2, pairs: &[(f64, f64)]) -> f64 {
        let mut worst: f64 = 0.0;
        for &(x, y) in pairs {
            let a = k.eval(x, y).unwrap();
            let b = k.eval(y, x).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    worst = worst.max((a[i][j] + b[j][i]).abs());
                }
            }
        }
        worst
    }

    fn random_pairs(lo: f64, hi: f64, count: usize, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| (rng.random_range(lo..hi), rng.random_range(lo..hi))).collect()
    }

    #[test]
    fn finite_kernels_are_block_antisymmetric() {
        let goe = build_finite_kernel(Family::GoeN, 10).unwrap();
        assert!(antisymmetry_error(&goe, &random_pairs(-8.0, 8.0, 50, 1)) < 1e-9);
        let gse = build_finite_kernel(Family::GseN, 10).unwrap();
        assert!(antisymmetry_error(&gse, &random_pairs(-6.0, 6.0, 50, 2)) < 1e-9);
    }

    #[test]
    fn odd_goe_is_unsupported() {
        assert!(matches!(build_finite_kernel(Family::GoeN, 3), Err(Error::Unsupported(_))));
        assert!(matches!(build_finite_kernel(Family::Airy1, 4), Err(Error::Unsupported(_))));
    }

    fn integral(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        composite_gauss_legendre(a, b, ((b - a) * 4.0).ceil().max(1.0) as usize, 16).integrate(f)
    }

    #[test]
    fn finite_kernels_integrate_to_n() {
        let goe = build_finite_kernel(Family::GoeN, 10).unwrap();
        let total = integral(|x| goe.rho1(x).unwrap(), -12.0, 12.0);
        assert!((total - 10.0).abs() < 1e-3, "{total}");
        let gse = build_finite_kernel(Family::GseN, 10).unwrap();
        let total = integral(|x| gse.rho1(x).unwrap(), -12.0, 12.0);
        assert!((total - 10.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn goe_psi_closed_form_matches_split_quadrature() {
        let basis = RefBasis::Hermite { sigma: std::f64::consts::SQRT_2 };
        let deg = 9;
        let w = |y: f64| (-0.25 * y * y).exp();
        for x in [-3.7, -1.0, 0.0, 0.4, 2.5, 6.0] {
            let closed = goe_psi_basis(&basis, deg, x);
            for j in 0..=deg {
                let f = |y: f64| basis.eval_all(deg, y).0[j] * w(y);
                let q = 0.5 * (integral(f, -30.0, x) - integral(f, x, 30.0));
                assert!((closed[j] - q).abs() < 1e-11, "x={x} j={j}");
            }
        }
    }

    /// One-point density of the N=2 ensemble with joint law
    /// `∝ |x-y|^β e^{-c(x²+y²)}`, by direct quadrature.
    fn two_point_oracle(beta: i32, c: f64) -> impl Fn(f64) -> f64 {
        let joint = move |x: f64, y: f64| (x - y).abs().powi(beta) * (-c * (x * x + y * y)).exp();
        // Split at the kink on the diagonal.
        let marginal = move |x: f64| integral(|y| joint(x, y), -12.0, x) + integral(|y| joint(x, y), x, 12.0);
        let z = integral(marginal, -12.0, 12.0);
        move |x| 2.0 * marginal(x) / z
    }

    #[test]
    fn n2_intensity_matches_joint_density() {
        let goe = build_finite_kernel(Family::GoeN, 2).unwrap();
        let oracle = two_point_oracle(1, 0.25);
        for x in [-3.0, -1.2, 0.0, 0.7, 2.9] {
            assert!((goe.rho1(x).unwrap() - oracle(x)).abs() < 1e-9, "GOE {x}");
        }
        let gse = build_finite_kernel(Family::GseN, 2).unwrap();
        let oracle = two_point_oracle(4, 2.0);
        for x in [-2.0, -0.8, 0.0, 0.3, 1.7] {
            assert!((gse.rho1(x).unwrap() - oracle(x)).abs() < 1e-9, "GSE {x}");
        }
    }

    #[test]
    fn n2_pair_density_matches_joint_density() {
        // ρ₂(x, y) = 2 p(x, y) = pf of the 4x4 kernel matrix.
        for (family, beta, c) in [(Family::GoeN, 1, 0.25), (Family::GseN, 4, 2.0)] {
            let k = build_finite_kernel(family, 2).unwrap();
            let joint = |x: f64, y: f64| (x - y).abs().powi(beta) * (-c * (x * x + y * y)).exp();
            let z = integral(|x| integral(|y| joint(x, y), -12.0, x) + integral(|y| joint(x, y), x, 12.0), -12.0, 12.0);
            for &(x, y) in &[(-1.0, 0.5), (0.2, 1.9), (-0.3, -0.1)] {
                let m = k.weighted_matrix(&[x, y], &[1.0, 1.0]).unwrap();
                let rho2 = crate::skew::pfaffian_value(&m);
                assert!((rho2 - 2.0 * joint(x, y) / z).abs() < 1e-9, "{family} ({x},{y})");
            }
        }
    }

    #[test]
    fn discretize_examples() {
        let zero = Kernel2x2::custom(Ground::Interval { lo: -1.0, hi: 1.0 }, |_, _| [[0.0; 2]; 2]);
        let g = Grid::new(-1.0, 1.0, 0.5).unwrap();
        assert_eq!(discretize(&zero, &g).unwrap().max_abs(), 0.0);
        let k = Kernel2x2::custom(Ground::Interval { lo: -1.0, hi: 1.0 }, |x, y| [[x - y, 2.0 + x], [-(2.0 + y), 0.0]]);
        let one = Grid::new(0.5, 0.5, 0.1).unwrap();
        let m = discretize(&k, &one).unwrap();
        assert_eq!(m.order_pairs(), 1);
        assert!((m.get(0, 1) - 0.1 * 2.5).abs() < 1e-15);
        let goe = build_finite_kernel(Family::GoeN, 2).unwrap();
        let grid = Grid::new(-6.0, 6.0, 0.05).unwrap();
        let m = discretize(&goe, &grid).unwrap();
        let count: f64 = (0..grid.len()).map(|i| m.get(2 * i, 2 * i + 1)).sum();
        assert!((count - 2.0).abs() < 0.01, "{count}");
    }

    #[test]
    fn grid_nodes_are_increasing() {
        let g = Grid::new(-10.0, 6.0, 0.05).unwrap();
        assert_eq!(g.len(), 321);
        assert!(g.nodes().windows(2).all(|w| w[0] < w[1]));
        assert!(Grid::new(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn airy_kernels_basic_properties() {
        let a1 = build_airy_kernel(Beta::One);
        let a4 = build_airy_kernel(Beta::Four);
        let pairs = random_pairs(-12.0, 8.0, 100, 3);
        assert!(antisymmetry_error(&a1, &pairs) < 1e-8);
        assert!(antisymmetry_error(&a4, &pairs) < 1e-8);
        assert!(a1.rho1(5.0).unwrap() < 1e-4);
        assert!(a1.rho1(-3.0).unwrap() > 0.0);
        // K11 of Airy₄ is continuous across the diagonal.
        let h = 1e-5;
        for x in [-4.0, -1.0, 0.5] {
            let left = a4.eval(x, x - h).unwrap()[0][0];
            let right = a4.eval(x, x + h).unwrap()[0][0];
            assert!(left.is_finite() && right.is_finite());
            assert!((left - right).abs() < 1e-4);
            assert!(left.abs() < 1e-4);
        }
        assert!(matches!(a1.eval(-20.0, 0.0), Err(Error::Range { .. })));
    }

    #[test]
    fn airy_pair_density_has_level_repulsion_of_order_beta() {
        use crate::skew::pfaffian_value;
        for (beta, power) in [(Beta::One, 1.0), (Beta::Four, 4.0)] {
            let k = build_airy_kernel(beta);
            for x in [-3.0, -1.0] {
                let rho2 = |h: f64| pfaffian_value(&k.weighted_matrix(&[x, x + h], &[1.0, 1.0]).unwrap());
                let (a, b) = (rho2(0.04), rho2(0.02));
                assert!(a > 0.0 && b > 0.0);
                let order = (a / b).log2();
                assert!((order - power).abs() < 0.15, "{beta:?} x={x} order {order}");
            }
        }
    }

    #[test]
    fn airy_blocks_match_pointwise() {
        for beta in [Beta::One, Beta::Four] {
            let k = build_airy_kernel(beta);
            let xs = [-5.0, -4.9, -2.0, 0.3, 0.31, 3.0];
            let b = k.blocks(&xs).unwrap();
            for (i, &x) in xs.iter().enumerate() {
                for (j, &y) in xs.iter().enumerate() {
                    let e = k.eval(x, y).unwrap();
                    let d = if i == j { [[0.0, e[0][1]], [-e[0][1], 0.0]] } else { e };
                    for r in 0..2 {
                        for c in 0..2 {
                            assert!((b[i * xs.len() + j][r][c] - d[r][c]).abs() < 1e-12, "{beta:?} {x} {y}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn corner_kernel_normalization_and_antisymmetry() {
        let k = corner_growth_kernel(0.8, 10, None).unwrap();
        let nodes = k.nodes().unwrap().to_vec();
        assert_eq!(nodes.len() % 2, 0);
        let total: f64 = nodes.iter().map(|&x| k.rho1(x).unwrap()).sum();
        assert!((total - 10.0).abs() < 1e-6, "{total}");
        let pairs: Vec<(f64, f64)> = (0..40).map(|i| (nodes[i * 7 % nodes.len()], nodes[(i * 13 + 5) % nodes.len()])).collect();
        assert!(antisymmetry_error(&k, &pairs) < 1e-10);
        assert!(matches!(corner_growth_kernel(0.8, 10, Some(5)), Err(Error::Rank(_))));
    }

    #[test]
    fn corner_kernel_matches_coulomb_gas_enumeration() {
        // P(h) ∝ Π|h_i - h_j| Π q^{h_i/2} over N-subsets of {0..cutoff}.
        let (q, n, cutoff) = (0.6, 2, 7);
        let k = corner_growth_kernel(q, n, Some(cutoff)).unwrap();
        let dist = exact_distribution(&discretize_nodes(&k).unwrap()).unwrap();
        let mut z = 0.0;
        let mut want = Vec::new();
        for a in 0..=cutoff {
            for b in a + 1..=cutoff {
                let p = (b - a) as f64 * q.powf(0.5 * (a + b) as f64);
                z += p;
                want.push((PointIndexSet::new(vec![a, b]).unwrap(), p));
            }
        }
        for (s, p) in want {
            assert!((dist.prob(&s) - p / z).abs() < 1e-10);
        }
        assert!((dist.total() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn fredholm_examples() {
        let zero = Kernel2x2::custom(Ground::Interval { lo: -5.0, hi: 5.0 }, |_, _| [[0.0; 2]; 2]);
        assert!((fredholm_pfaffian(&zero, -1.0, 1.0, 20).unwrap() - 1.0).abs() < 1e-14);
        let a1 = build_airy_kernel(Beta::One);
        let top = fredholm_pfaffian(&a1, 6.0, 12.0, 60).unwrap();
        assert!((top - 1.0).abs() < 1e-3);
        let mut prev = 0.0;
        for i in 0..=12 {
            let s = -4.0 + 0.5 * i as f64;
            let f = fredholm_pfaffian(&a1, s, 12.0, 120).unwrap();
            assert!(f >= prev - 1e-9 && f <= 1.0 + 1e-6);
            prev = f;
        }
        assert!(fredholm_pfaffian(&a1, 1.0, 0.0, 10).is_err());
    }

    /// `F₁(s) = det(I - B_s)` with `B_s(x, y) = Ai(x + y + s)` on `(0, ∞)`.
    fn ferrari_spohn(s: f64) -> f64 {
        let rule = gauss_legendre(60).mapped(0.0, 14.0);
        let m = rule.nodes.len();
        let a = DMatrix::from_fn(m, m, |i, j| {
            let (xi, xj) = (rule.nodes[i], rule.nodes[j]);
            let v = airy::airy_eval(xi + xj + s).unwrap().ai;
            let id = if i == j { 1.0 } else { 0.0 };
            id - (rule.weights[i] * rule.weights[j]).sqrt() * v
        });
        a.determinant()
    }

    #[test]
    fn airy1_fredholm_matches_determinant_form() {
        let k = build_airy_kernel(Beta::One);
        for s in [-4.0, -2.5, -1.0, 0.0, 1.5] {
            let pf = fredholm_pfaffian(&k, s, 12.0, 60).unwrap();
            let det = ferrari_spohn(s);
            assert!((pf - det).abs() < 1e-10, "s={s} pf={pf} det={det}");
        }
    }

    #[test]
    fn goe_n2_gap_probability_matches_joint_density() {
        let k = build_finite_kernel(Family::GoeN, 2).unwrap();
        let joint = |x: f64, y: f64| (x - y).abs() * (-0.25 * (x * x + y * y)).exp();
        let mass = |hi: f64| integral(|x| integral(|y| joint(x, y), -14.0, x) + integral(|y| joint(x, y), x, hi), -14.0, hi);
        let z = mass(14.0);
        for s in [-1.5, 0.0, 1.0, 2.5] {
            let want = mass(s) / z;
            let got = fredholm_pfaffian(&k, s, 14.0, 60).unwrap();
            assert!((got - want).abs() < 1e-10, "s={s} {got} {want}");
        }
    }

    fn moments(k: &Kernel2x2, lo: f64, hi: f64) -> (f64, f64) {
        let h = 0.04;
        let (mut m1, mut m2, mut prev) = (0.0, 0.0, 0.0);
        let steps = ((hi - lo) / h).round() as usize;
        for i in 1..=steps {
            let s = lo + i as f64 * h;
            let f = fredholm_pfaffian(k, s, 12.0, 40).unwrap();
            let mid = s - 0.5 * h;
            m1 += mid * (f - prev);
            m2 += mid * mid * (f - prev);
            prev = f;
        }
        (m1, (m2 - m1 * m1).sqrt())
    }

    #[test]
    fn airy4_distribution_moments() {
        // Largest point of Airy₄ is √2 times the standard β=4 Tracy–Widom law
        // (mean -2.30688, variance 0.51770).
        let (mean, sd) = moments(&build_airy_kernel(Beta::Four), -14.0, 4.0);
        assert!((mean + 2.0f64.sqrt() * 2.30688).abs() < 2e-3, "{mean}");
        assert!((sd - (2.0 * 0.51770f64).sqrt()).abs() < 2e-3, "{sd}");
    }

    #[test]
    fn conditioning_annihilates_the_pivot() {
        let goe = build_finite_kernel(Family::GoeN, 4).unwrap();
        let s = 1.3;
        let ks = condition_at_point(&goe, s).unwrap();
        for x in [-2.0, 0.0, 1.0, 3.0] {
            let b = ks.eval(x, s).unwrap();
            assert!(b.iter().flatten().all(|v| v.abs() < 1e-9));
        }
        assert!(antisymmetry_error(&ks, &random_pairs(-4.0, 4.0, 30, 5)) < 1e-9);
        let zero = Kernel2x2::custom(Ground::Interval { lo: -1.0, hi: 1.0 }, |_, _| [[0.0; 2]; 2]);
        assert!(matches!(condition_at_point(&zero, 0.0), Err(Error::ConditioningImpossible)));
    }

    #[test]
    fn conditioning_matches_discrete_inclusion() {
        use crate::skew::{condition, ConditionMode};
        let goe = build_finite_kernel(Family::GoeN, 4).unwrap();
        let grid = Grid::new(-5.0, 5.0, 0.01).unwrap();
        let s_idx = 640;
        let s = grid.nodes()[s_idx];
        let disc = discretize(&goe, &grid).unwrap();
        let cond = condition(&disc, &PointIndexSet::new(vec![s_idx]).unwrap(), ConditionMode::Include).unwrap();
        let ks = condition_at_point(&goe, s).unwrap();
        // `cond` is indexed by the remaining nodes.
        for (r, &i) in [10usize, 300, 639, 900].iter().enumerate() {
            let _ = r;
            let ci = if i < s_idx { i } else { i - 1 };
            let direct = grid.delta * ks.rho1(grid.nodes()[i]).unwrap();
            assert!((cond.get(2 * ci, 2 * ci + 1) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn skew_trace_examples() {
        let k = Kernel2x2::custom(Ground::Interval { lo: -5.0, hi: 5.0 }, |_, _| [[0.0, 1.0], [-1.0, 0.0]]);
        assert!((skew_trace(&k, 0.0, 2.0).unwrap() - 2.0).abs() < 1e-14);
        let k2 = Kernel2x2::custom(Ground::Interval { lo: -5.0, hi: 5.0 }, |x, _| [[0.0, 3.0 * x * x], [-3.0 * x * x, 0.0]]);
        assert!((skew_trace(&k2, 0.0, 2.0).unwrap() - 8.0).abs() < 1e-12);
        let goe = build_finite_kernel(Family::GoeN, 4).unwrap();
        let grid = Grid::new(-3.0, 2.0, 0.01).unwrap();
        let m = discretize(&goe, &grid).unwrap();
        let riemann: f64 = (0..grid.len()).map(|i| m.get(2 * i, 2 * i + 1)).sum();
        let exact = skew_trace(&goe, -3.0 - 0.005, 2.0 + 0.005).unwrap();
        assert!((riemann - exact).abs() < 1e-3);
    }
}
