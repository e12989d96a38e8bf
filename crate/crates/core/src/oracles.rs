//! Ground-truth generators: dense GOE/GSE matrices, the tridiagonal
//! β-Hermite model, the corner-growth last-passage time, and the soft-edge
//! rescalings used to compare them with kernel samples.
//!
//! Weight conventions match the kernels: GOE and the tridiagonal model have
//! eigenvalue weight `e^{-λ²/4}`, GSE has `e^{-2λ²}`. A tridiagonal β=4
//! sample maps to the GSE scale by `λ / (2√2)`.

use nalgebra::{Complex, DMatrix};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Geometric, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::krylov::Beta;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSample {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub n: usize,
    pub beta: f64,
}

impl EnsembleSample {
    pub fn max(&self) -> f64 {
        *self.eigenvalues.last().expect("ensemble samples are non-empty")
    }
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// `W = (X + Xᵀ)/√2` with standard normal `X`.
pub fn dense_goe<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<EnsembleSample> {
    if n == 0 {
        return Err(Error::Shape("N must be at least 1".into()));
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    let x = DMatrix::from_fn(n, n, |_, _| normal.sample(rng));
    let w = (&x + x.transpose()) * std::f64::consts::FRAC_1_SQRT_2;
    let ev = w.symmetric_eigenvalues();
    if ev.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("GOE eigen-solver produced non-finite values".into()));
    }
    Ok(EnsembleSample { eigenvalues: sorted(ev.iter().cloned().collect()), n, beta: 1.0 })
}

/// Self-dual quaternion Hermitian matrix in its 2N×2N complex embedding,
/// `q = a + bi + cj + dk ↦ [[a + bi, c + di], [-c + di, a - bi]]`, with
/// density `∝ exp(-tr H²)`: real diagonal entries of variance 1/4 and
/// off-diagonal quaternion components of variance 1/8. This is the law of
/// `(A + A*)/(2√2)` for a quaternion Ginibre `A`. The doubled spectrum is
/// reduced to N values.
pub fn dense_gse<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<EnsembleSample> {
    if n == 0 {
        return Err(Error::Shape("N must be at least 1".into()));
    }
    let diag = Normal::new(0.0, 0.5).unwrap();
    let off = Normal::new(0.0, 0.125f64.sqrt()).unwrap();
    let mut h = DMatrix::<Complex<f64>>::zeros(2 * n, 2 * n);
    for i in 0..n {
        let a = diag.sample(rng);
        h[(2 * i, 2 * i)] = Complex::new(a, 0.0);
        h[(2 * i + 1, 2 * i + 1)] = Complex::new(a, 0.0);
        for j in i + 1..n {
            let (a, b, c, d) = (off.sample(rng), off.sample(rng), off.sample(rng), off.sample(rng));
            let block = [[Complex::new(a, b), Complex::new(c, d)], [Complex::new(-c, d), Complex::new(a, -b)]];
            for r in 0..2 {
                for s in 0..2 {
                    h[(2 * i + r, 2 * j + s)] = block[r][s];
                    h[(2 * j + s, 2 * i + r)] = block[r][s].conj();
                }
            }
        }
    }
    let ev = sorted(h.symmetric_eigenvalues().iter().cloned().collect());
    let scale = ev.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut out = Vec::with_capacity(n);
    for p in ev.chunks(2) {
        if !(p[0].is_finite() && p[1].is_finite()) || (p[1] - p[0]).abs() > 1e-8 * scale {
            return Err(Error::Numerical(format!("GSE eigenvalues do not pair: {} vs {}", p[0], p[1])));
        }
        out.push(0.5 * (p[0] + p[1]));
    }
    Ok(EnsembleSample { eigenvalues: out, n, beta: 4.0 })
}

/// Diagonal `Normal(0, 2)` and off-diagonal `χ_{β(N-k)}`, k = 1..N-1.
fn tridiagonal_entries<R: Rng + ?Sized>(n: usize, beta: f64, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 || !(beta > 0.0) {
        return Err(Error::Shape(format!("need N >= 1 and beta > 0, got N = {n}, beta = {beta}")));
    }
    let normal = Normal::new(0.0, std::f64::consts::SQRT_2).unwrap();
    let d: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
    let e: Vec<f64> = (1..n).map(|k| ChiSquared::new(beta * (n - k) as f64).unwrap().sample(rng).sqrt()).collect();
    Ok((d, e))
}

/// Full spectrum of the tridiagonal β-Hermite model, joint density
/// `∝ Π|λ_i - λ_j|^β Π e^{-λ_i²/4}`.
pub fn tridiagonal_hermite<R: Rng + ?Sized>(n: usize, beta: f64, rng: &mut R) -> Result<EnsembleSample> {
    let (d, e) = tridiagonal_entries(n, beta, rng)?;
    Ok(EnsembleSample { eigenvalues: sorted(tridiagonal_eigenvalues(d, e)?), n, beta })
}

/// Largest eigenvalue of a tridiagonal β-Hermite draw, by Sturm bisection.
/// Consumes the same random numbers as [`tridiagonal_hermite`].
pub fn tridiagonal_lambda_max<R: Rng + ?Sized>(n: usize, beta: f64, rng: &mut R) -> Result<f64> {
    let (d, e) = tridiagonal_entries(n, beta, rng)?;
    Ok(largest_eigenvalue(&d, &e))
}

/// Eigenvalues of the symmetric tridiagonal matrix with diagonal `d` and
/// off-diagonal `e`, by QL with implicit Wilkinson shifts.
pub fn tridiagonal_eigenvalues(mut d: Vec<f64>, e: Vec<f64>) -> Result<Vec<f64>> {
    let n = d.len();
    if e.len() + 1 != n.max(1) {
        return Err(Error::Shape("off-diagonal must have N - 1 entries".into()));
    }
    let mut e = e;
    e.push(0.0);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::Numerical("tridiagonal QL did not converge".into()));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(d)
}

/// Number of eigenvalues below `x` (Sturm sequence).
fn count_below(d: &[f64], e: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = d[0] - x;
    for i in 0..d.len() {
        if i > 0 {
            let denom = if q == 0.0 { f64::EPSILON * (e[i - 1].abs() + 1.0) } else { q };
            q = d[i] - x - e[i - 1] * e[i - 1] / denom;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Largest eigenvalue of a symmetric tridiagonal matrix by bisection inside
/// the Gershgorin bound.
pub fn largest_eigenvalue(d: &[f64], e: &[f64]) -> f64 {
    let n = d.len();
    let radius = |i: usize| (if i > 0 { e[i - 1].abs() } else { 0.0 }) + (if i + 1 < n { e[i].abs() } else { 0.0 });
    let mut lo = (0..n).map(|i| d[i] - radius(i)).fold(f64::INFINITY, f64::min);
    let mut hi = (0..n).map(|i| d[i] + radius(i)).fold(f64::NEG_INFINITY, f64::max);
    let tol = 4.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(1.0);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_below(d, e, mid) == n {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Symmetric waiting-time matrix: `Geometric(1 - √q)` on the diagonal and
/// `Geometric(1 - q)` above it, with `P(k) = p (1 - p)^k` on `{0, 1, ...}`.
pub fn corner_growth_waiting_times<R: Rng + ?Sized>(n: usize, q: f64, rng: &mut R) -> Result<Vec<Vec<u64>>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Shape(format!("q must lie in (0, 1), got {q}")));
    }
    let diag = Geometric::new(1.0 - q.sqrt()).unwrap();
    let off = Geometric::new(1.0 - q).unwrap();
    let mut w = vec![vec![0u64; n]; n];
    for i in 0..n {
        w[i][i] = diag.sample(rng);
        for j in i + 1..n {
            let v = off.sample(rng);
            w[i][j] = v;
            w[j][i] = v;
        }
    }
    Ok(w)
}

/// Last-passage times `G(i, j) = w(i, j) + max(G(i-1, j), G(i, j-1))`;
/// `result[k]` is `F(k + 1)`, the passage time to `(k + 1, k + 1)`.
pub fn last_passage_diagonal(w: &[Vec<u64>]) -> Vec<u64> {
    let n = w.len();
    let mut g = vec![vec![0u64; n]; n];
    for i in 0..n {
        for j in 0..n {
            let up = if i > 0 { g[i - 1][j] } else { 0 };
            let left = if j > 0 { g[i][j - 1] } else { 0 };
            g[i][j] = w[i][j] + up.max(left);
        }
    }
    (0..n).map(|k| g[k][k]).collect()
}

/// One draw of `F(N)` for the symmetric corner-growth model.
pub fn corner_growth_simulate<R: Rng + ?Sized>(n: usize, q: f64, rng: &mut R) -> Result<u64> {
    if n == 0 {
        return Err(Error::Shape("N must be at least 1".into()));
    }
    let w = corner_growth_waiting_times(n, q, rng)?;
    Ok(last_passage_diagonal(&w)[n - 1])
}

/// `N^{1/6}(λ - 2√N)` for β=1, `(2N)^{1/6}(√2 λ - 2√N)` for β=4.
pub fn soft_edge_rescale(lambda: f64, n: usize, beta: Beta) -> f64 {
    let nf = n as f64;
    match beta {
        Beta::One => nf.powf(1.0 / 6.0) * (lambda - 2.0 * nf.sqrt()),
        Beta::Four => (2.0 * nf).powf(1.0 / 6.0) * (std::f64::consts::SQRT_2 * lambda - 2.0 * nf.sqrt()),
    }
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted(a.to_vec()), sorted(b.to_vec()));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// One-sample Kolmogorov–Smirnov statistic against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let s = sorted(samples.to_vec());
    let n = s.len() as f64;
    s.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn variance(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
    }

    #[test]
    fn one_by_one_models_have_the_weight_variance() {
        let mut r = rng(1);
        let goe: Vec<f64> = (0..100_000).map(|_| dense_goe(1, &mut r).unwrap().max()).collect();
        assert!((variance(&goe) / 2.0 - 1.0).abs() < 0.03);
        let gse: Vec<f64> = (0..100_000).map(|_| dense_gse(1, &mut r).unwrap().max()).collect();
        assert!((variance(&gse) / 0.25 - 1.0).abs() < 0.03);
        for beta in [1.0, 2.5, 4.0] {
            let t: Vec<f64> = (0..100_000).map(|_| tridiagonal_hermite(1, beta, &mut r).unwrap().max()).collect();
            assert!((variance(&t) / 2.0 - 1.0).abs() < 0.03);
        }
    }

    #[test]
    fn goe_eigenvalues_sum_to_trace() {
        let mut r = rng(2);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x = DMatrix::from_fn(30, 30, |_, _| normal.sample(&mut r));
        let w = (&x + x.transpose()) * std::f64::consts::FRAC_1_SQRT_2;
        let s: f64 = w.symmetric_eigenvalues().iter().sum();
        assert!((s - w.trace()).abs() <= 1e-8 * w.trace().abs().max(1.0));
        let sample = dense_goe(30, &mut r).unwrap();
        assert_eq!(sample.eigenvalues.len(), 30);
        assert!(sample.eigenvalues.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn gse_spectrum_pairs_up() {
        let mut r = rng(3);
        for n in [1, 2, 5, 10] {
            let s = dense_gse(n, &mut r).unwrap();
            assert_eq!(s.eigenvalues.len(), n);
            assert!(s.eigenvalues.windows(2).all(|p| p[0] <= p[1]));
        }
    }

    #[test]
    fn goe_spectrum_follows_the_semicircle() {
        let n = 200;
        let mut r = rng(4);
        let edge = 2.0 * (n as f64).sqrt();
        let bins = 20;
        let mut counts = vec![0.0; bins];
        let draws = 20;
        for _ in 0..draws {
            for v in dense_goe(n, &mut r).unwrap().eigenvalues {
                let b = (((v + edge) / (2.0 * edge)) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize;
                counts[b] += 1.0;
            }
        }
        let total = (n * draws) as f64;
        let semicircle_cdf = |t: f64| {
            let t = t.clamp(-1.0, 1.0);
            0.5 + (t * (1.0 - t * t).sqrt() + t.asin()) / std::f64::consts::PI
        };
        let mut chi = 0.0;
        for (b, &c) in counts.iter().enumerate() {
            let lo = -1.0 + 2.0 * b as f64 / bins as f64;
            let hi = lo + 2.0 / bins as f64;
            let e = total * (semicircle_cdf(hi) - semicircle_cdf(lo));
            chi += (c - e) * (c - e) / e;
        }
        // Finite-N edge effects dominate; this only rules out gross errors.
        assert!(chi / (bins as f64) < 10.0, "chi2/bin {}", chi / bins as f64);
    }

    #[test]
    fn ql_matches_dense_solver() {
        let mut r = rng(5);
        for n in [1, 2, 7, 40] {
            let (d, e) = tridiagonal_entries(n, 2.0, &mut r).unwrap();
            let mut m = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                m[(i, i)] = d[i];
                if i + 1 < n {
                    m[(i, i + 1)] = e[i];
                    m[(i + 1, i)] = e[i];
                }
            }
            let want = sorted(m.symmetric_eigenvalues().iter().cloned().collect());
            let got = sorted(tridiagonal_eigenvalues(d.clone(), e.clone()).unwrap());
            for (a, b) in want.iter().zip(&got) {
                assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
            }
            assert!((largest_eigenvalue(&d, &e) - want[n - 1]).abs() < 1e-10 * (1.0 + want[n - 1].abs()));
        }
    }

    #[test]
    fn lambda_max_consumes_the_same_draws() {
        let a = tridiagonal_hermite(25, 1.0, &mut rng(6)).unwrap().max();
        let b = tridiagonal_lambda_max(25, 1.0, &mut rng(6)).unwrap();
        assert!((a - b).abs() < 1e-11);
    }

    #[test]
    fn tridiagonal_matches_dense_models_at_n10() {
        let mut r = rng(7);
        let tri: Vec<f64> = (0..10_000).map(|_| tridiagonal_lambda_max(10, 1.0, &mut r).unwrap()).collect();
        let goe: Vec<f64> = (0..10_000).map(|_| dense_goe(10, &mut r).unwrap().max()).collect();
        assert!(ks_two_sample(&tri, &goe) < 0.03);
        let scale = 1.0 / (2.0 * std::f64::consts::SQRT_2);
        let tri: Vec<f64> = (0..10_000).map(|_| scale * tridiagonal_lambda_max(10, 4.0, &mut r).unwrap()).collect();
        let gse: Vec<f64> = (0..10_000).map(|_| dense_gse(10, &mut r).unwrap().max()).collect();
        assert!(ks_two_sample(&tri, &gse) < 0.03);
    }

    #[test]
    fn gue_edge_mean_is_near_tracy_widom() {
        let mut r = rng(8);
        let n = 500;
        let m: f64 = (0..10_000)
            .map(|_| {
                // Weight e^{-λ²/4}; dividing by √2 gives e^{-λ²/2}, whose edge is 2√N.
                let l = tridiagonal_lambda_max(n, 2.0, &mut r).unwrap() / std::f64::consts::SQRT_2;
                (n as f64).powf(1.0 / 6.0) * (l - 2.0 * (n as f64).sqrt())
            })
            .sum::<f64>()
            / 10_000.0;
        assert!((-2.0..=-1.4).contains(&m), "{m}");
    }

    #[test]
    fn corner_dp_matches_path_enumeration() {
        fn best(w: &[Vec<u64>], i: usize, j: usize, n: usize) -> u64 {
            let here = w[i][j];
            if i + 1 == n && j + 1 == n {
                return here;
            }
            let mut m = 0;
            if i + 1 < n {
                m = m.max(best(w, i + 1, j, n));
            }
            if j + 1 < n {
                m = m.max(best(w, i, j + 1, n));
            }
            here + m
        }
        let mut r = rng(9);
        for n in 1..=4 {
            for _ in 0..50 {
                let w = corner_growth_waiting_times(n, 0.7, &mut r).unwrap();
                let dp = last_passage_diagonal(&w);
                assert_eq!(dp[n - 1], best(&w, 0, 0, n));
                assert!(dp.windows(2).all(|p| p[0] <= p[1]));
                for i in 0..n {
                    for j in 0..n {
                        assert_eq!(w[i][j], w[j][i]);
                    }
                }
            }
        }
    }

    #[test]
    fn f1_is_geometric() {
        let q: f64 = 0.8;
        let p = 1.0 - q.sqrt();
        let mut r = rng(10);
        let draws = 100_000;
        let mut counts = vec![0usize; 200];
        for _ in 0..draws {
            counts[(corner_growth_simulate(1, q, &mut r).unwrap() as usize).min(199)] += 1;
        }
        for k in 0..10 {
            let want = p * (1.0 - p).powi(k as i32);
            let got = counts[k] as f64 / draws as f64;
            let sd = (want * (1.0 - want) / draws as f64).sqrt();
            assert!((got - want).abs() < 5.0 * sd, "k={k} {got} {want}");
        }
    }

    #[test]
    fn soft_edge_examples() {
        assert!(soft_edge_rescale(2.0 * 10f64.sqrt(), 10, Beta::One).abs() < 1e-14);
        assert!(soft_edge_rescale(20f64.sqrt(), 10, Beta::Four).abs() < 1e-13);
        for beta in [Beta::One, Beta::Four] {
            assert!(soft_edge_rescale(1.0, 7, beta) < soft_edge_rescale(1.1, 7, beta));
        }
    }

    #[test]
    fn ks_examples() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_two_sample(&a, &a), 0.0);
        assert_eq!(ks_two_sample(&[0.0, 1.0], &[2.0, 3.0]), 1.0);
        assert!((ks_two_sample(&[0.0, 2.0], &[1.0, 3.0]) - 0.5).abs() < 1e-15);
        let u: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_one_sample(&u, |x| x) - 0.005).abs() < 1e-12);
    }
}
