//! Gaussian quadrature rules.

/// Nodes and weights of a quadrature rule.
#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Affine map of a rule on `[-1, 1]` onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> Rule {
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        Rule {
            nodes: self.nodes.iter().map(|t| c + h * t).collect(),
            weights: self.weights.iter().map(|w| h * w).collect(),
        }
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Gauss–Legendre rule with `n` nodes on `[-1, 1]`, ascending.
pub fn gauss_legendre(n: usize) -> Rule {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Rule { nodes, weights }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule of the given order on each of `panels` equal panels of `[a, b]`.
pub fn composite_gauss_legendre(a: f64, b: f64, panels: usize, order: usize) -> Rule {
    let base = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * order);
    let mut weights = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let r = base.mapped(a + p as f64 * h, a + (p + 1) as f64 * h);
        nodes.extend(r.nodes);
        weights.extend(r.weights);
    }
    Rule { nodes, weights }
}

/// Matrix `E` (row-major, `n × n`) with `Σ_j E_ij f(t_j) = ½ ∫ sign(t_i - t) f(t) dt`
/// over `[-1, 1]`, exact for polynomials of degree below `n` sampled at the
/// Gauss–Legendre nodes `t_j`. `diag(w) E` is exactly antisymmetric.
pub fn legendre_sign_matrix(rule: &Rule) -> Vec<f64> {
    let n = rule.len();
    // P_k at every node; ℓ_j(t) = w_j Σ_k (k + ½) P_k(t_j) P_k(t).
    let p: Vec<Vec<f64>> = rule.nodes.iter().map(|&t| legendre_values(n, t)).collect();
    // ∫_{-1}^{t} P_k = (P_{k+1} - P_{k-1}) / (2k + 1), and t + 1 for k = 0.
    let mut e = vec![0.0; n * n];
    for i in 0..n {
        let t = rule.nodes[i];
        let pi = &p[i];
        let ints: Vec<f64> = (0..n).map(|k| if k == 0 { t + 1.0 } else { (pi[k + 1] - pi[k - 1]) / (2 * k + 1) as f64 }).collect();
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += (k as f64 + 0.5) * p[j][k] * ints[k];
            }
            e[i * n + j] = rule.weights[j] * (s - 0.5);
        }
    }
    e
}

/// `P_0(t) .. P_n(t)`.
fn legendre_values(n: usize, t: f64) -> Vec<f64> {
    let mut v = vec![0.0; n + 1];
    v[0] = 1.0;
    if n > 0 {
        v[1] = t;
    }
    for k in 1..n {
        v[k + 1] = ((2 * k + 1) as f64 * t * v[k] - k as f64 * v[k - 1]) / (k + 1) as f64;
    }
    v
}

/// Gauss–Hermite rule for the weight `e^{-x²}`, by Newton iteration on the
/// orthonormal Hermite recurrence.
pub fn gauss_hermite(n: usize) -> Rule {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    let pim4 = std::f64::consts::PI.powf(-0.25);
    // Largest nodes first, following the usual asymptotic starting guesses.
    let mut z = 0.0f64;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 1.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (pim4, 0.0);
            for j in 1..=n {
                let jf = j as f64;
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    nodes.reverse();
    weights.reverse();
    Rule { nodes, weights }
}
