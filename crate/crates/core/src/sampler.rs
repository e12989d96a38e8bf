//! Exact sampling of finite Pfaffian point processes.
//!
//! Points are visited in index order. At step `j` the current pivot entry
//! `p = W[2j, 2j+1]` is the conditional probability that `j` is present
//! given the decisions so far. On inclusion the pivot block is kept, on
//! exclusion it is shifted to `p - 1`, and the trailing block receives the
//! Schur update `W_rs += (W_ra W_bs - W_rb W_as) / q`, `(a, b) = (2j, 2j+1)`.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::skew::{pfaffian_value, PointIndexSet, SkewMatrix};

/// Allowed excursion of a conditional probability outside `[0, 1]`.
pub const PROB_TOL: f64 = 1e-8;
/// Pivots this close to 0 (inclusion) or 1 (exclusion) skip the update.
pub const DEGENERATE_TOL: f64 = 1e-12;
/// Largest ground set for [`exact_distribution`].
pub const MAX_EXACT_POINTS: usize = 12;

fn checked_probability(step: usize, p: f64) -> Result<f64> {
    if !(p >= -PROB_TOL && p <= 1.0 + PROB_TOL) {
        return Err(Error::InvalidKernel { step, p });
    }
    Ok(p.clamp(0.0, 1.0))
}

/// Inverse of the pivot after the decision, or 0 for a degenerate branch.
fn inverse_pivot(p: f64, included: bool) -> f64 {
    let q = if included { p } else { p - 1.0 };
    if q.abs() < DEGENERATE_TOL {
        0.0
    } else {
        1.0 / q
    }
}

/// Rank-2 update of the trailing block after deciding point `j`.
fn schur_step(w: &mut [f64], dim: usize, j: usize, inv_q: f64) {
    if inv_q == 0.0 {
        return;
    }
    let (a, b) = (2 * j, 2 * j + 1);
    let first = b + 1;
    let xa: Vec<f64> = (first..dim).map(|r| w[r * dim + a]).collect();
    let xb: Vec<f64> = (first..dim).map(|r| w[r * dim + b]).collect();
    for i in 0..xa.len() {
        let (bi, ai) = (xb[i] * inv_q, xa[i] * inv_q);
        let row = (first + i) * dim;
        for jj in i + 1..xa.len() {
            // W_bs = -W_sb and W_as = -W_sa.
            let v = w[row + first + jj] + bi * xa[jj] - ai * xb[jj];
            w[row + first + jj] = v;
            w[(first + jj) * dim + first + i] = -v;
        }
    }
}

/// Draws one configuration from the process with kernel `k`.
pub fn sample<R: Rng + ?Sized>(k: &SkewMatrix, rng: &mut R) -> Result<PointIndexSet> {
    sample_limited(k, rng, None)
}

/// As [`sample`], but stops once `max_points` points have been included.
/// The result is then the first `max_points` points of a full draw.
pub fn sample_limited<R: Rng + ?Sized>(k: &SkewMatrix, rng: &mut R, max_points: Option<usize>) -> Result<PointIndexSet> {
    let dim = k.dim();
    let mut w = k.as_slice().to_vec();
    let mut picked = Vec::new();
    for j in 0..k.order_pairs() {
        if max_points.is_some_and(|m| picked.len() >= m) {
            break;
        }
        let p = checked_probability(j, w[2 * j * dim + 2 * j + 1])?;
        let u: f64 = rng.random();
        let included = u < p;
        if included {
            picked.push(j);
        }
        schur_step(&mut w, dim, j, inverse_pivot(p, included));
    }
    Ok(PointIndexSet::from_unsorted(picked))
}

/// Probabilities of every subset of a small ground set.
#[derive(Clone, Debug, PartialEq)]
pub struct SubsetDistribution {
    pub n: usize,
    pub probabilities: BTreeMap<PointIndexSet, f64>,
    /// Number of draws behind an empirical distribution.
    pub draws: Option<u64>,
}

impl SubsetDistribution {
    /// Empirical distribution of a batch of draws.
    pub fn from_samples(n: usize, samples: &[PointIndexSet]) -> Self {
        let mut counts: BTreeMap<PointIndexSet, u64> = BTreeMap::new();
        for s in samples {
            *counts.entry(s.clone()).or_default() += 1;
        }
        let total = samples.len() as f64;
        let probabilities = counts.into_iter().map(|(s, c)| (s, c as f64 / total)).collect();
        Self { n, probabilities, draws: Some(samples.len() as u64) }
    }

    pub fn prob(&self, s: &PointIndexSet) -> f64 {
        self.probabilities.get(s).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.probabilities.values().sum()
    }

    /// `P(i ∈ S)`.
    pub fn marginal(&self, i: usize) -> f64 {
        self.probabilities.iter().filter(|(s, _)| s.contains(i)).map(|(_, p)| p).sum()
    }
}

/// Exact law of the process, found by walking both branches of every
/// sampler decision and multiplying the branch probabilities.
pub fn exact_distribution(k: &SkewMatrix) -> Result<SubsetDistribution> {
    let n = k.order_pairs();
    if n > MAX_EXACT_POINTS {
        return Err(Error::Shape(format!("exact enumeration limited to {MAX_EXACT_POINTS} points, got {n}")));
    }
    let mut probabilities = BTreeMap::new();
    walk(k.as_slice().to_vec(), k.dim(), 0, 1.0, 0, &mut probabilities)?;
    Ok(SubsetDistribution { n, probabilities, draws: None })
}

fn walk(w: Vec<f64>, dim: usize, j: usize, mass: f64, mask: u64, out: &mut BTreeMap<PointIndexSet, f64>) -> Result<()> {
    if 2 * j == dim {
        out.insert(PointIndexSet::from_mask(mask), mass);
        return Ok(());
    }
    let p = checked_probability(j, w[2 * j * dim + 2 * j + 1])?;
    if p > 0.0 {
        let mut wi = w.clone();
        schur_step(&mut wi, dim, j, inverse_pivot(p, true));
        walk(wi, dim, j + 1, mass * p, mask | 1 << j, out)?;
    }
    if p < 1.0 {
        let mut wo = w;
        schur_step(&mut wo, dim, j, inverse_pivot(p, false));
        walk(wo, dim, j + 1, mass * (1.0 - p), mask, out)?;
    }
    Ok(())
}

/// `P(S) = pf(L_S) / pf(J + L)` for an L-kernel.
pub fn l_ensemble_distribution(l: &SkewMatrix) -> Result<SubsetDistribution> {
    let n = l.order_pairs();
    if n > MAX_EXACT_POINTS {
        return Err(Error::Shape(format!("enumeration limited to {MAX_EXACT_POINTS} points, got {n}")));
    }
    let z = pfaffian_value(&SkewMatrix::standard_symplectic(n).add_scaled(1.0, l)?);
    let probabilities = (0u64..1 << n)
        .map(|mask| {
            let s = PointIndexSet::from_mask(mask);
            let p = pfaffian_value(&l.submatrix(&s)) / z;
            (s, p)
        })
        .collect();
    Ok(SubsetDistribution { n, probabilities, draws: None })
}

/// Distance between an empirical and an exact distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Comparison {
    pub tv_distance: f64,
    /// Pearson statistic over subsets with expected count at least 5.
    /// `NaN` when the empirical side has no draw count.
    pub chi_square: f64,
    /// Bins used minus one.
    pub degrees_of_freedom: usize,
}

pub fn compare_distributions(empirical: &SubsetDistribution, exact: &SubsetDistribution) -> Result<Comparison> {
    if empirical.n != exact.n {
        return Err(Error::Shape(format!("ground sets differ: {} vs {}", empirical.n, exact.n)));
    }
    let mut keys: Vec<&PointIndexSet> = empirical.probabilities.keys().chain(exact.probabilities.keys()).collect();
    keys.sort();
    keys.dedup();
    let tv = 0.5 * keys.iter().map(|s| (empirical.prob(s) - exact.prob(s)).abs()).sum::<f64>();
    let (mut chi, mut bins) = (0.0, 0usize);
    match empirical.draws {
        Some(draws) => {
            let total = draws as f64;
            for (s, &q) in &exact.probabilities {
                let expected = total * q;
                if expected >= 5.0 {
                    let observed = total * empirical.prob(s);
                    chi += (observed - expected).powi(2) / expected;
                    bins += 1;
                }
            }
        }
        None => chi = f64::NAN,
    }
    Ok(Comparison { tv_distance: tv, chi_square: chi, degrees_of_freedom: bins.saturating_sub(1) })
}

/// RNG for draw `index` of a batch seeded with `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A reproducible batch of draws.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRun {
    pub kernel_id: String,
    pub seed: u64,
    pub samples: Vec<PointIndexSet>,
    /// Coordinates of the points, when the kernel discretizes a continuum.
    pub grid: Option<Vec<f64>>,
}

impl SampleRun {
    /// Draws `count` samples in parallel; draw `b` uses stream `b` of `seed`.
    pub fn draw(kernel_id: &str, k: &SkewMatrix, seed: u64, count: usize, max_points: Option<usize>, grid: Option<Vec<f64>>) -> Result<Self> {
        let samples = (0..count as u64)
            .into_par_iter()
            .map(|b| sample_limited(k, &mut stream_rng(seed, b), max_points))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { kernel_id: kernel_id.to_string(), seed, samples, grid })
    }

    /// Writes `sample_index,points`; points are indices or, with a grid,
    /// coordinates at 17 significant digits, space separated and ascending.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "sample_index,points")?;
        for (i, s) in self.samples.iter().enumerate() {
            writeln!(w, "{i},{}", format_points(s, self.grid.as_deref()))?;
        }
        Ok(())
    }
}

/// Space separated point list for CSV output.
pub fn format_points(s: &PointIndexSet, grid: Option<&[f64]>) -> String {
    let items: Vec<String> = match grid {
        Some(g) => s.indices().iter().map(|&i| format_real(g[i])).collect(),
        None => s.indices().iter().map(|i| i.to_string()).collect(),
    };
    items.join(" ")
}

/// A real with 17 significant digits.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Sampler for the first `max_points` points of the process under a fixed
/// visiting order, with cost independent of the ground-set size beyond the
/// visited prefix.
///
/// The elimination is reorganized left-looking: the pivot at step `t` only
/// needs the 2x2 blocks of row `t` in the eliminated columns, and those only
/// depend on the decisions already taken. Decision histories with at most
/// `max_points` inclusions form a tree of chains (runs of exclusions after
/// an inclusion), and rows computed for a chain are cached and shared by
/// every later draw that follows the same history. Draws consume the same
/// uniforms as [`sample_limited`] on the permuted kernel and return the same
/// sets up to rounding in the pivots.
pub struct TopKSampler {
    k: SkewMatrix,
    order: Vec<usize>,
    max_points: usize,
    chains: Vec<Chain>,
}

struct Chain {
    parent: Option<usize>,
    /// First step whose decision is owned by this chain.
    start: usize,
    /// Inverse pivots of decided steps, including inherited ones.
    inv_q: Vec<f64>,
    /// Pivots of steps `>= start`, indexed by `t - start`.
    pivots: Vec<f64>,
    /// Row blocks: entry `l` of row `t` holds
    /// `(W⁽ˡ⁾[2t,2l], W⁽ˡ⁾[2t+1,2l], W⁽ˡ⁾[2t,2l+1], W⁽ˡ⁾[2t+1,2l+1])`.
    rows: HashMap<usize, Vec<[f64; 4]>>,
    children: HashMap<usize, usize>,
}

impl TopKSampler {
    /// `order[k]` is the point visited at step `k`; points not listed are
    /// never visited.
    pub fn new(k: &SkewMatrix, order: &[usize], max_points: usize) -> Result<Self> {
        let n = k.order_pairs();
        let mut seen = vec![false; n];
        for &i in order {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Shape("visiting order must list distinct points".into()));
            }
        }
        let sub = k.submatrix(&PointIndexSet::from_unsorted(order.to_vec()));
        // `sub` is in increasing index order; rearrange to visiting order.
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        let pos: Vec<usize> = order.iter().map(|i| sorted.binary_search(i).unwrap()).collect();
        let k = sub.permute_points(&pos)?;
        let root = Chain { parent: None, start: 0, inv_q: Vec::new(), pivots: Vec::new(), rows: HashMap::new(), children: HashMap::new() };
        Ok(Self { k, order: order.to_vec(), max_points, chains: vec![root] })
    }

    /// Points listed in decreasing coordinate order.
    pub fn descending(grid: &[f64]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..grid.len()).collect();
        idx.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
        idx
    }

    /// Draws the first `max_points` points in visiting order. Returns their
    /// original indices in visiting order.
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Vec<usize>> {
        let mut c = 0;
        let mut picked = Vec::new();
        for t in 0..self.order.len() {
            if picked.len() >= self.max_points {
                break;
            }
            let p = self.pivot(c, t)?;
            let u: f64 = rng.random();
            if u < p {
                picked.push(self.order[t]);
                c = self.child(c, t, p);
            } else if self.chains[c].inv_q.len() == t {
                self.chains[c].inv_q.push(inverse_pivot(p, false));
            }
        }
        Ok(picked)
    }

    /// Number of cached chains, for diagnostics.
    pub fn cached_chains(&self) -> usize {
        self.chains.len()
    }

    fn child(&mut self, c: usize, t: usize, p: f64) -> usize {
        if let Some(&id) = self.chains[c].children.get(&t) {
            return id;
        }
        let mut inv_q = self.chains[c].inv_q[..t].to_vec();
        inv_q.push(inverse_pivot(p, true));
        let id = self.chains.len();
        self.chains.push(Chain { parent: Some(c), start: t + 1, inv_q, pivots: Vec::new(), rows: HashMap::new(), children: HashMap::new() });
        self.chains[c].children.insert(t, id);
        id
    }

    fn pivot(&mut self, c: usize, t: usize) -> Result<f64> {
        let start = self.chains[c].start;
        if let Some(&p) = self.chains[c].pivots.get(t - start) {
            return Ok(p);
        }
        self.extend_row(c, t, t);
        let row = &self.chains[c].rows[&t];
        let inv_q = &self.chains[c].inv_q;
        let mut p = self.k.get(2 * t, 2 * t + 1);
        for (l, e) in row.iter().enumerate() {
            p += (e[2] * e[1] - e[0] * e[3]) * inv_q[l];
        }
        let p = checked_probability(t, p)?;
        self.chains[c].pivots.push(p);
        Ok(p)
    }

    /// Chain holding the complete row `l`.
    fn full_row_owner(&self, mut c: usize, l: usize) -> usize {
        while self.chains[c].start > l {
            c = self.chains[c].parent.expect("root starts at 0");
        }
        c
    }

    /// Ensures row `t` of chain `c` has at least `upto` entries.
    fn extend_row(&mut self, c: usize, t: usize, upto: usize) {
        let start = self.chains[c].start;
        if self.chains[c].rows.get(&t).is_some_and(|r| r.len() >= upto) {
            return;
        }
        let mut row = self.chains[c].rows.remove(&t).unwrap_or_default();
        let inherited = upto.min(start);
        if row.len() < inherited {
            let parent = self.chains[c].parent.expect("root starts at 0");
            self.extend_row(parent, t, inherited);
            row.extend_from_slice(&self.chains[parent].rows[&t][row.len()..inherited]);
        }
        for l in row.len()..upto {
            let owner = self.full_row_owner(c, l);
            let rl = &self.chains[owner].rows[&l];
            let inv_q = &self.chains[c].inv_q;
            let (r0, r1) = (2 * t, 2 * t + 1);
            let (c0, c1) = (2 * l, 2 * l + 1);
            let mut e = [self.k.get(r0, c0), self.k.get(r1, c0), self.k.get(r0, c1), self.k.get(r1, c1)];
            for lp in 0..l {
                let iq = inv_q[lp];
                if iq == 0.0 {
                    continue;
                }
                let et = row[lp];
                let el = rl[lp];
                // W⁽ˡ⁾[r][c] = K[r][c] + Σ (Y[r] X[c] - X[r] Y[c]) / q, X = column 2l', Y = column 2l'+1.
                e[0] += (et[2] * el[0] - et[0] * el[2]) * iq;
                e[1] += (et[3] * el[0] - et[1] * el[2]) * iq;
                e[2] += (et[2] * el[1] - et[0] * el[3]) * iq;
                e[3] += (et[3] * el[1] - et[1] * el[3]) * iq;
            }
            row.push(e);
        }
        self.chains[c].rows.insert(t, row);
    }
}
