//! The Airy function, its derivative and tail integral, and the Airy kernel.
//!
//! Values come from a table of anchors every 0.25 on `[-30, 30]` plus a
//! Taylor expansion from the nearest anchor, using `Ai'' = x Ai`. The table
//! is built once by stepping the ODE downwards from `x = 30`, where the
//! asymptotic series is exact to rounding. Downward stepping is stable: `Ai`
//! is the dominant solution in that direction for `x > 0`, and neither
//! solution dominates on the oscillatory side.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::quad::gauss_legendre;

pub const AIRY_MIN: f64 = -30.0;
pub const AIRY_MAX: f64 = 30.0;

/// Semi-infinite Airy integrals are cut at this argument.
pub const Z_MAX: f64 = 14.0;

const SPACING: f64 = 0.25;
const TAYLOR_TERMS: usize = 40;

/// `Ai(x)`, `Ai'(x)` and `∫_x^∞ Ai`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AiryValues {
    pub x: f64,
    pub ai: f64,
    pub ai_prime: f64,
    pub ai_tail: f64,
}

struct Table {
    ai: Vec<f64>,
    aip: Vec<f64>,
    tail: Vec<f64>,
}

fn table() -> &'static Table {
    static TABLE: OnceLock<Table> = OnceLock::new();
    TABLE.get_or_init(build_table)
}

fn anchor_count() -> usize {
    ((AIRY_MAX - AIRY_MIN) / SPACING).round() as usize + 1
}

fn build_table() -> Table {
    let n = anchor_count();
    let mut ai = vec![0.0; n];
    let mut aip = vec![0.0; n];
    let mut tail = vec![0.0; n];
    let (a, d) = asymptotic_positive(AIRY_MAX);
    ai[n - 1] = a;
    aip[n - 1] = d;
    // ∫_x^∞ Ai ≈ Ai(x)/√x to leading order; below 1e-48 here.
    tail[n - 1] = a / AIRY_MAX.sqrt();
    for k in (0..n - 1).rev() {
        let x0 = AIRY_MIN + (k + 1) as f64 * SPACING;
        let (a, d, t) = taylor(x0, ai[k + 1], aip[k + 1], tail[k + 1], -SPACING);
        ai[k] = a;
        aip[k] = d;
        tail[k] = t;
    }
    Table { ai, aip, tail }
}

/// Leading asymptotic series of `Ai` and `Ai'` for large positive `x`.
fn asymptotic_positive(x: f64) -> (f64, f64) {
    let zeta = 2.0 / 3.0 * x.powf(1.5);
    let pre = (-zeta).exp() / (2.0 * PI.sqrt());
    let (mut su, mut sv) = (1.0, 1.0);
    let mut u = 1.0;
    let mut zk = 1.0;
    for k in 1..12 {
        let kf = k as f64;
        u *= (6.0 * kf - 5.0) * (6.0 * kf - 3.0) * (6.0 * kf - 1.0) / (216.0 * kf * (2.0 * kf - 1.0));
        let v = -(6.0 * kf + 1.0) / (6.0 * kf - 1.0) * u;
        zk *= -zeta;
        su += u / zk;
        sv += v / zk;
    }
    (pre / x.powf(0.25) * su, -pre * x.powf(0.25) * sv)
}

/// Derivatives `Ai^{(n)}(x0)`, `n < count`, from `Ai(x0)` and `Ai'(x0)`.
fn derivatives_from(x0: f64, a0: f64, a1: f64, count: usize) -> Vec<f64> {
    let mut a = vec![0.0; count.max(2)];
    a[0] = a0;
    a[1] = a1;
    for n in 0..count.saturating_sub(2) {
        // (x y)^{(n)} = x y^{(n)} + n y^{(n-1)}.
        let prev = if n > 0 { a[n - 1] } else { 0.0 };
        a[n + 2] = x0 * a[n] + n as f64 * prev;
    }
    a.truncate(count);
    a
}

fn taylor(x0: f64, a0: f64, a1: f64, t0: f64, h: f64) -> (f64, f64, f64) {
    let a = derivatives_from(x0, a0, a1, TAYLOR_TERMS + 1);
    let (mut ai, mut aip, mut integral) = (0.0, 0.0, 0.0);
    // p = h^n / n!
    let mut p = 1.0;
    for n in 0..TAYLOR_TERMS {
        ai += a[n] * p;
        aip += a[n + 1] * p;
        integral += a[n] * p * h / (n + 1) as f64;
        p *= h / (n + 1) as f64;
    }
    (ai, aip, t0 - integral)
}

fn nearest_anchor(x: f64) -> (usize, f64) {
    let k = ((x - AIRY_MIN) / SPACING).round().clamp(0.0, (anchor_count() - 1) as f64) as usize;
    (k, AIRY_MIN + k as f64 * SPACING)
}

/// Values without a range check: zero above `AIRY_MAX`, where every value is
/// below 1e-48. Panics below `AIRY_MIN`.
pub(crate) fn airy_raw(x: f64) -> (f64, f64, f64) {
    if x > AIRY_MAX {
        return (0.0, 0.0, 0.0);
    }
    assert!(x >= AIRY_MIN, "Airy argument {x} below table range");
    let t = table();
    let (k, x0) = nearest_anchor(x);
    taylor(x0, t.ai[k], t.aip[k], t.tail[k], x - x0)
}

/// `Ai`, `Ai'` and `∫_x^∞ Ai` on `[-30, 30]`.
pub fn airy_eval(x: f64) -> Result<AiryValues> {
    if !(AIRY_MIN..=AIRY_MAX).contains(&x) {
        return Err(Error::Range { x, lo: AIRY_MIN, hi: AIRY_MAX });
    }
    let (ai, ai_prime, ai_tail) = airy_raw(x);
    Ok(AiryValues { x, ai, ai_prime, ai_tail })
}

/// `Ai^{(n)}(x)` for `n < count`.
pub fn airy_derivatives(x: f64, count: usize) -> Result<Vec<f64>> {
    let v = airy_eval(x)?;
    Ok(derivatives_from(x, v.ai, v.ai_prime, count))
}

const SERIES_RADIUS: f64 = 0.5;
const SERIES_TERMS: usize = 48;

/// `c_n = Ai Ai^{(n+1)} - Ai' Ai^{(n)}` at `x`, so that
/// `K_Ai(x, x+h) = -Σ_{n≥1} c_n h^{n-1} / n!`.
fn diagonal_coefficients(x: f64) -> Result<Vec<f64>> {
    let a = airy_derivatives(x, SERIES_TERMS + 2)?;
    Ok((0..=SERIES_TERMS).map(|n| a[0] * a[n + 1] - a[1] * a[n]).collect())
}

fn k_series(c: &[f64], h: f64) -> f64 {
    let mut s = 0.0;
    // p = h^{n-1} / n!
    let mut p = 1.0;
    for (n, cn) in c.iter().enumerate().skip(1) {
        p /= n as f64;
        s -= cn * p;
        p *= h;
    }
    s
}

fn k_dy_series(c: &[f64], h: f64) -> f64 {
    let mut s = 0.0;
    // p = h^{n-2} / n!
    let mut p = 0.5;
    for (n, cn) in c.iter().enumerate().skip(2) {
        s -= cn * (n - 1) as f64 * p;
        p *= h / (n + 1) as f64;
    }
    s
}

/// Closed forms of `K_Ai` and `∂_y K_Ai` from `(Ai, Ai')` at `x != y`.
fn k_closed(x: f64, (ax, dx): (f64, f64), y: f64, (ay, dy): (f64, f64)) -> (f64, f64) {
    let k = (ax * dy - dx * ay) / (x - y);
    (k, (ax * y * ay - dx * dy) / (x - y) + k / (x - y))
}

/// The Airy kernel `(Ai(x) Ai'(y) - Ai'(x) Ai(y)) / (x - y)`, with the
/// limit `Ai'(x)² - x Ai(x)²` on the diagonal.
pub fn k_ai(x: f64, y: f64) -> Result<f64> {
    if (y - x).abs() < SERIES_RADIUS {
        return Ok(k_series(&diagonal_coefficients(x)?, y - x));
    }
    let (u, v) = (airy_eval(x)?, airy_eval(y)?);
    Ok(k_closed(x, (u.ai, u.ai_prime), y, (v.ai, v.ai_prime)).0)
}

/// `∂_y K_Ai(x, y)`; equals `-Ai(x)²/2` on the diagonal.
pub fn k_ai_dy(x: f64, y: f64) -> Result<f64> {
    if (y - x).abs() < SERIES_RADIUS {
        return Ok(k_dy_series(&diagonal_coefficients(x)?, y - x));
    }
    let (u, v) = (airy_eval(x)?, airy_eval(y)?);
    Ok(k_closed(x, (u.ai, u.ai_prime), y, (v.ai, v.ai_prime)).1)
}

/// Airy quantities on a node set, for assembling kernel matrices. Pair
/// tables are row-major `n × n`.
pub struct AiryTables {
    pub values: Vec<AiryValues>,
    pub k: Vec<f64>,
    pub k_dy: Vec<f64>,
    /// `∫_{x_i}^∞ K_Ai(z, x_j) dz`.
    pub tail: Vec<f64>,
}

impl AiryTables {
    pub fn new(xs: &[f64]) -> Result<Self> {
        let values = xs.iter().map(|&x| airy_eval(x)).collect::<Result<Vec<_>>>()?;
        let coeffs = xs.iter().map(|&x| diagonal_coefficients(x)).collect::<Result<Vec<_>>>()?;
        let n = xs.len();
        let (mut k, mut k_dy) = (vec![0.0; n * n], vec![0.0; n * n]);
        for i in 0..n {
            for j in 0..n {
                let h = xs[j] - xs[i];
                let (a, b) = if h.abs() < SERIES_RADIUS {
                    (k_series(&coeffs[i], h), k_dy_series(&coeffs[i], h))
                } else {
                    let (u, v) = (&values[i], &values[j]);
                    k_closed(xs[i], (u.ai, u.ai_prime), xs[j], (v.ai, v.ai_prime))
                };
                k[i * n + j] = a;
                k_dy[i * n + j] = b;
            }
        }
        let tail = k_ai_tail_matrix(xs, xs)?;
        Ok(Self { values, k, k_dy, tail })
    }
}

const PANEL: f64 = 0.5;
const PANEL_ORDER: usize = 12;

/// Composite Gauss–Legendre nodes/weights for `u ∈ [0, upper]`.
fn u_rule(upper: f64) -> (Vec<f64>, Vec<f64>) {
    if upper <= 0.0 {
        return (Vec::new(), Vec::new());
    }
    let panels = (upper / PANEL).ceil() as usize;
    let h = upper / panels as f64;
    let base = gauss_legendre(PANEL_ORDER);
    let mut nodes = Vec::with_capacity(panels * PANEL_ORDER);
    let mut weights = Vec::with_capacity(panels * PANEL_ORDER);
    for p in 0..panels {
        let r = base.mapped(p as f64 * h, (p + 1) as f64 * h);
        nodes.extend(r.nodes);
        weights.extend(r.weights);
    }
    (nodes, weights)
}

/// `∫_x^∞ K_Ai(z, y) dz = ∫_0^∞ (∫_{x+u}^∞ Ai) Ai(y+u) du`, cut where
/// `max(x, y) + u` reaches `Z_MAX`.
pub fn k_ai_tail(x: f64, y: f64) -> Result<f64> {
    for v in [x, y] {
        if !(AIRY_MIN..=AIRY_MAX).contains(&v) {
            return Err(Error::Range { x: v, lo: AIRY_MIN, hi: AIRY_MAX });
        }
    }
    let (nodes, weights) = u_rule(Z_MAX - x.max(y));
    Ok(nodes.iter().zip(&weights).map(|(&u, &w)| w * airy_raw(x + u).2 * airy_raw(y + u).0).sum())
}

/// `T[i][j] = ∫_{xs[i]}^∞ K_Ai(z, ys[j]) dz` for all pairs, row-major, with
/// one shared `u` rule long enough for the smallest argument.
pub fn k_ai_tail_matrix(xs: &[f64], ys: &[f64]) -> Result<Vec<f64>> {
    for &v in xs.iter().chain(ys) {
        if !(AIRY_MIN..=AIRY_MAX).contains(&v) {
            return Err(Error::Range { x: v, lo: AIRY_MIN, hi: AIRY_MAX });
        }
    }
    let lowest = xs.iter().chain(ys).cloned().fold(f64::INFINITY, f64::min);
    let (nodes, weights) = u_rule(Z_MAX - lowest);
    let q = nodes.len();
    let left: Vec<f64> = xs.iter().flat_map(|&x| nodes.iter().zip(&weights).map(move |(&u, &w)| w * airy_raw(x + u).2)).collect();
    let right: Vec<f64> = ys.iter().flat_map(|&y| nodes.iter().map(move |&u| airy_raw(y + u).0)).collect();
    let mut out = vec![0.0; xs.len() * ys.len()];
    for i in 0..xs.len() {
        let li = &left[i * q..(i + 1) * q];
        for j in 0..ys.len() {
            let rj = &right[j * q..(j + 1) * q];
            out[i * ys.len() + j] = li.iter().zip(rj).map(|(a, b)| a * b).sum();
        }
    }
    Ok(out)
}
