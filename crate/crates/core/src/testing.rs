//! Random matrices and kernels for tests and examples.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::skew::SkewMatrix;

/// Random skew-symmetric matrix with standard normal entries.
pub fn random_skew<R: Rng>(n: usize, rng: &mut R) -> SkewMatrix {
    let mut m = SkewMatrix::zeros(n);
    for i in 0..2 * n {
        for j in i + 1..2 * n {
            m.set(i, j, rng.sample(StandardNormal));
        }
    }
    m
}

pub fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// A valid Pfaffian kernel on `n` points: a symmetric determinantal kernel
/// with eigenvalues in `(0, 1)` written in 2x2 block form
/// `[[0, K(x,y)], [-K(y,x), 0]]`, then mixed by a random block-diagonal
/// `SL(2)` congruence. The congruence leaves every principal Pfaffian
/// unchanged, so the law of the process is that of the determinantal one.
pub fn random_valid_kernel<R: Rng>(n: usize, rng: &mut R) -> SkewMatrix {
    let q = random_matrix(n, n, rng).qr().q();
    let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |_, _| rng.random_range(0.05..0.95)));
    let kd = &q * lam * q.transpose();
    let mut k = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for x in 0..n {
        for y in 0..n {
            k[(2 * x, 2 * y + 1)] = kd[(x, y)];
            k[(2 * y + 1, 2 * x)] = -kd[(x, y)];
        }
    }
    let mut g = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for x in 0..n {
        let (a, b, c): (f64, f64, f64) = (rng.random_range(0.5..2.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        // [[a, b], [c, (1 + b c) / a]] has unit determinant.
        g[(2 * x, 2 * x)] = a;
        g[(2 * x, 2 * x + 1)] = b;
        g[(2 * x + 1, 2 * x)] = c;
        g[(2 * x + 1, 2 * x + 1)] = (1.0 + b * c) / a;
    }
    SkewMatrix::from_dmatrix_projected(&(&g * k * g.transpose())).expect("even square matrix")
}

/// Upper tail `P(X > x)` of the chi-square law with `k` degrees of freedom,
/// via the regularized incomplete gamma function `Q(k/2, x/2)` (series
/// below `a + 1`, Lentz continued fraction above).
pub fn chi_square_sf(x: f64, k: usize) -> f64 {
    let (a, x) = (0.5 * k as f64, 0.5 * x);
    if x <= 0.0 {
        return 1.0;
    }
    let log_prefix = a * x.ln() - x - libm::lgamma(a);
    if x < a + 1.0 {
        let (mut term, mut sum, mut ap) = (1.0 / a, 1.0 / a, a);
        for _ in 0..1000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        1.0 - sum * log_prefix.exp()
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * log_prefix.exp()
    }
}
