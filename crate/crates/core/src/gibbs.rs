//! Slice-within-Gibbs sampling of rank-N projection processes on a
//! continuous ground set.
//!
//! Coordinate `i` is redrawn from `s ↦ pf K({s} ∪ S₋ᵢ)`. With
//! `A = K(S₋ᵢ, S₋ᵢ)` fixed during the update the bordered Pfaffian is
//! `pf(A) · (C + Bᵀ A⁻¹ B)₁₂` where `B = K(S₋ᵢ, s)` and `C = K(s, s)`, so one
//! LU factorization of `A` per coordinate makes each candidate `O(N²)`.

use nalgebra::{DMatrix, LU};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{Ground, Kernel2x2};
use crate::skew::{pfaffian, SkewMatrix};

/// Initial slice bracket width.
pub const SLICE_WIDTH: f64 = 0.5;
/// Maximum number of stepping-out steps per coordinate update.
pub const STEP_OUT_CAP: usize = 20;
/// Default number of discarded sweeps.
pub const DEFAULT_BURN_IN: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    /// Midpoints of `n` equal cells of `[lo, hi]`.
    Equispaced { lo: f64, hi: f64 },
    Explicit { points: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsState {
    pub points: Vec<f64>,
    pub step_count: usize,
}

/// One retained sweep; points ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub sweep: usize,
    pub points: Vec<f64>,
}

/// Conditional density of one coordinate given the others, up to a
/// positive factor.
struct Conditional<'a> {
    k: &'a Kernel2x2,
    others: Vec<f64>,
    lu: Option<LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    sign: f64,
}

impl<'a> Conditional<'a> {
    fn new(k: &'a Kernel2x2, others: Vec<f64>) -> Result<Self> {
        if others.is_empty() {
            return Ok(Self { k, others, lu: None, sign: 1.0 });
        }
        let a = k.weighted_matrix(&others, &vec![1.0; others.len()])?;
        let (sign, _) = pfaffian(&a);
        if sign == 0.0 {
            return Err(Error::State(format!("singular configuration of the other points: {others:?}")));
        }
        Ok(Self { k, lu: Some(a.to_dmatrix().lu()), others, sign })
    }

    /// `sign(pf A) · (C + Bᵀ A⁻¹ B)₁₂`.
    fn value(&self, s: f64) -> Result<f64> {
        let mut xs = Vec::with_capacity(self.others.len() + 1);
        xs.push(s);
        xs.extend_from_slice(&self.others);
        let blocks = self.k.blocks(&xs)?;
        let n = xs.len();
        let c = blocks[0][0][1];
        let Some(lu) = &self.lu else { return Ok(c) };
        let m = self.others.len();
        // B = K(others, s): rows 2j, 2j+1 from block (j+1, 0).
        let b = DMatrix::from_fn(2 * m, 2, |r, col| blocks[(r / 2 + 1) * n][r % 2][col]);
        let x = lu.solve(&b).ok_or_else(|| Error::State("singular conditional factor".into()))?;
        let schur = c + (b.transpose() * x)[(0, 1)];
        Ok(self.sign * schur)
    }
}

fn support(k: &Kernel2x2) -> Result<(f64, f64)> {
    match &k.ground {
        Ground::Interval { lo, hi } => Ok((*lo, *hi)),
        Ground::Nodes { .. } => Err(Error::Unsupported("slice-within-Gibbs needs a continuous ground set".into())),
    }
}

/// Initial configuration for `n` points.
pub fn initial_points(init: &Init, n: usize) -> Result<Vec<f64>> {
    match init {
        Init::Equispaced { lo, hi } => {
            if !(hi > lo) {
                return Err(Error::Shape(format!("empty initial interval [{lo}, {hi}]")));
            }
            Ok((0..n).map(|i| lo + (i as f64 + 0.5) * (hi - lo) / n as f64).collect())
        }
        Init::Explicit { points } => {
            if points.len() != n {
                return Err(Error::Shape(format!("expected {n} initial points, got {}", points.len())));
            }
            Ok(points.clone())
        }
    }
}

/// Runs `steps` sweeps and returns those after the first `burn_in`.
pub fn slice_within_gibbs<R: Rng + ?Sized>(k: &Kernel2x2, n: usize, init: &Init, steps: usize, burn_in: usize, rng: &mut R) -> Result<Vec<Sweep>> {
    if steps <= burn_in {
        return Err(Error::Shape(format!("steps ({steps}) must exceed burn-in ({burn_in})")));
    }
    let mut state = GibbsState { points: initial_points(init, n)?, step_count: 0 };
    let full = k.weighted_matrix(&state.points, &vec![1.0; n])?;
    if pfaffian(&full).0 <= 0.0 {
        return Err(Error::State(format!("initial configuration has zero density: {:?}", state.points)));
    }
    let mut out = Vec::with_capacity(steps - burn_in);
    for sweep in 0..steps {
        gibbs_sweep(k, &mut state, rng)?;
        if sweep >= burn_in {
            let mut p = state.points.clone();
            p.sort_by(f64::total_cmp);
            out.push(Sweep { sweep, points: p });
        }
    }
    Ok(out)
}

/// Updates every coordinate once.
pub fn gibbs_sweep<R: Rng + ?Sized>(k: &Kernel2x2, state: &mut GibbsState, rng: &mut R) -> Result<()> {
    let (lo, hi) = support(k)?;
    for i in 0..state.points.len() {
        let x0 = state.points[i];
        let others: Vec<f64> = state.points.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).collect();
        let cond = Conditional::new(k, others)?;
        let f0 = cond.value(x0)?;
        if !(f0 > 0.0) || !f0.is_finite() {
            return Err(Error::State(format!("conditional density {f0} at current point {x0} (coordinate {i}, sweep {})", state.step_count)));
        }
        let density = |s: f64| -> Result<f64> {
            let v = cond.value(s)?;
            if !v.is_finite() {
                return Err(Error::State(format!("non-finite conditional density at {s}")));
            }
            if v < -1e-8 * f0 {
                return Err(Error::State(format!("negative conditional density {v} at {s} (current {f0} at {x0})")));
            }
            Ok(v.max(0.0))
        };
        let log_y = f0.ln() + rng.random::<f64>().ln();
        let above = |s: f64| -> Result<bool> {
            let v = density(s)?;
            Ok(v > 0.0 && v.ln() > log_y)
        };
        // Stepping out.
        let mut left = x0 - SLICE_WIDTH * rng.random::<f64>();
        let mut right = left + SLICE_WIDTH;
        let j = (STEP_OUT_CAP as f64 * rng.random::<f64>()).floor() as usize;
        let mut kk = STEP_OUT_CAP - 1 - j;
        let mut jj = j;
        while jj > 0 && left > lo && above(left)? {
            left -= SLICE_WIDTH;
            jj -= 1;
        }
        while kk > 0 && right < hi && above(right)? {
            right += SLICE_WIDTH;
            kk -= 1;
        }
        left = left.max(lo);
        right = right.min(hi);
        // Shrinkage.
        let x1 = loop {
            let s = left + (right - left) * rng.random::<f64>();
            if above(s)? {
                break s;
            }
            if s < x0 {
                left = s;
            } else {
                right = s;
            }
            if right - left < 1e-14 * (1.0 + x0.abs()) {
                break x0;
            }
        };
        state.points[i] = x1;
    }
    state.step_count += 1;
    Ok(())
}

/// Unnormalized joint density `pf K(S)` of a configuration.
pub fn configuration_density(k: &Kernel2x2, points: &[f64]) -> Result<f64> {
    let m: SkewMatrix = k.weighted_matrix(points, &vec![1.0; points.len()])?;
    let (sg, log) = pfaffian(&m);
    Ok(if sg == 0.0 { 0.0 } else { sg * log.exp() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{build_finite_kernel, Family};
    use crate::oracles::ks_one_sample;
    use crate::quad::composite_gauss_legendre;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bordered_value_matches_full_pfaffian() {
        let k = build_finite_kernel(Family::GseN, 4).unwrap();
        let others = vec![-1.2, 0.1, 0.9];
        let cond = Conditional::new(&k, others.clone()).unwrap();
        let base = configuration_density(&k, &others).unwrap();
        for s in [-2.0, -0.5, 0.4, 1.7] {
            let mut all = vec![s];
            all.extend_from_slice(&others);
            let full = configuration_density(&k, &all).unwrap();
            assert!((cond.value(s).unwrap() * base.abs() - full).abs() < 1e-12 * (1.0 + full.abs()));
        }
    }

    #[test]
    fn one_point_chain_follows_the_intensity() {
        // For N = 1 the single point has density ρ₁.
        let k = build_finite_kernel(Family::GseN, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sweeps = slice_within_gibbs(&k, 1, &Init::Explicit { points: vec![0.0] }, 10_100, 100, &mut rng).unwrap();
        let xs: Vec<f64> = sweeps.iter().map(|s| s.points[0]).collect();
        let lo = -6.0;
        let cdf = |x: f64| {
            if x <= lo {
                return 0.0;
            }
            composite_gauss_legendre(lo, x, 8, 16).integrate(|t| k.rho1(t).unwrap())
        };
        let d = ks_one_sample(&xs, cdf);
        assert!(d < 0.03, "KS {d}");
        for s in &sweeps {
            assert!(configuration_density(&k, &s.points).unwrap() > 0.0);
        }
    }

    #[test]
    fn accepted_points_have_positive_density() {
        let k = build_finite_kernel(Family::GoeN, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let sweeps = slice_within_gibbs(&k, 4, &Init::Equispaced { lo: -3.0, hi: 3.0 }, 300, 0, &mut rng).unwrap();
        assert_eq!(sweeps.len(), 300);
        for s in sweeps {
            assert_eq!(s.points.len(), 4);
            assert!(configuration_density(&k, &s.points).unwrap() > 0.0);
        }
    }

    #[test]
    fn equal_seeds_give_identical_chains() {
        let k = build_finite_kernel(Family::GseN, 3).unwrap();
        let init = Init::Equispaced { lo: -2.0, hi: 2.0 };
        let a = slice_within_gibbs(&k, 3, &init, 50, 10, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = slice_within_gibbs(&k, 3, &init, 50, 10, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].sweep, 10);
    }

    #[test]
    fn independent_chains_agree_on_mean_configuration() {
        let k = build_finite_kernel(Family::GseN, 2).unwrap();
        let run = |seed| {
            let s = slice_within_gibbs(&k, 2, &Init::Equispaced { lo: -1.0, hi: 1.0 }, 2100, 100, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            // Batch means of each ordered coordinate: 20 batches of 100.
            (0..2)
                .map(|c| {
                    let batch: Vec<f64> = s.chunks(100).map(|b| b.iter().map(|w| w.points[c]).sum::<f64>() / b.len() as f64).collect();
                    let m = batch.iter().sum::<f64>() / batch.len() as f64;
                    let var = batch.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (batch.len() - 1) as f64;
                    (m, var / batch.len() as f64)
                })
                .collect::<Vec<_>>()
        };
        let (a, b) = (run(1), run(2));
        for c in 0..2 {
            let se = (a[c].1 + b[c].1).sqrt();
            assert!((a[c].0 - b[c].0).abs() < 3.0 * se, "coordinate {c}: {:?} vs {:?}", a[c], b[c]);
        }
    }

    #[test]
    fn invalid_arguments() {
        let k = build_finite_kernel(Family::GseN, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(slice_within_gibbs(&k, 2, &Init::Explicit { points: vec![0.0] }, 10, 1, &mut rng).is_err());
        assert!(slice_within_gibbs(&k, 2, &Init::Equispaced { lo: -1.0, hi: 1.0 }, 5, 5, &mut rng).is_err());
        // Coincident points have zero density.
        assert!(matches!(slice_within_gibbs(&k, 2, &Init::Explicit { points: vec![0.5, 0.5] }, 10, 1, &mut rng), Err(Error::State(_))));
    }
}
