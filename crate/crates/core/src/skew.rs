//! Dense skew-symmetric matrices indexed by 2x2 point blocks.
//!
//! Point `i` (0-based) owns rows/columns `2i` and `2i + 1`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Absolute tolerance for antisymmetry checks at construction.
pub const SKEW_TOL: f64 = 1e-12;
/// Relative pivot tolerance: a pivot is zero when `|p| <= PIVOT_TOL * max|A|`.
pub const PIVOT_TOL: f64 = 1e-12;

const MAGIC: &[u8; 8] = b"PFPPSKW1";

/// A real `2n x 2n` skew-symmetric matrix stored densely, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SkewMatrix {
    n: usize,
    data: Vec<f64>,
}

/// Sorted set of point indices (0-based).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct PointIndexSet {
    indices: Vec<usize>,
}

impl PointIndexSet {
    /// Builds a set from strictly increasing indices.
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Shape("point indices must be strictly increasing".into()));
        }
        Ok(Self { indices })
    }

    /// Sorts and deduplicates arbitrary indices.
    pub fn from_unsorted(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self { indices }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn full(n: usize) -> Self {
        Self { indices: (0..n).collect() }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    /// Points of `0..n` not in the set.
    pub fn complement(&self, n: usize) -> Self {
        Self { indices: (0..n).filter(|i| !self.contains(*i)).collect() }
    }

    /// Matrix rows owned by the points, in order.
    pub fn rows(&self) -> Vec<usize> {
        self.indices.iter().flat_map(|&i| [2 * i, 2 * i + 1]).collect()
    }

    /// Bitmask encoding, for sets over at most 64 points.
    pub fn to_mask(&self) -> u64 {
        self.indices.iter().fold(0u64, |m, &i| m | (1u64 << i))
    }

    pub fn from_mask(mask: u64) -> Self {
        Self { indices: (0..64).filter(|i| mask >> i & 1 == 1).collect() }
    }
}

impl SkewMatrix {
    /// Zero matrix with `n` points.
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; 4 * n * n] }
    }

    /// `J_n = diag([[0,1],[-1,0]], ...)`.
    pub fn standard_symplectic(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(2 * i, 2 * i + 1, 1.0);
        }
        m
    }

    /// Builds from row-major entries of a `dim x dim` matrix. Entries are
    /// validated to be antisymmetric within [`SKEW_TOL`] and then made exact.
    pub fn from_rows(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim % 2 != 0 {
            return Err(Error::Shape(format!("dimension {dim} is odd")));
        }
        if data.len() != dim * dim {
            return Err(Error::Shape(format!("expected {} entries, got {}", dim * dim, data.len())));
        }
        for i in 0..dim {
            for j in i..dim {
                let dev = (data[i * dim + j] + data[j * dim + i]).abs();
                if !(dev <= SKEW_TOL) {
                    return Err(Error::NotSkew { i, j, deviation: dev });
                }
            }
        }
        let mut m = Self { n: dim / 2, data };
        m.antisymmetrize();
        Ok(m)
    }

    /// Builds from a `DMatrix`, validating antisymmetry.
    pub fn from_dmatrix(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Shape("matrix is not square".into()));
        }
        let dim = a.nrows();
        let data = (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).map(|(i, j)| a[(i, j)]).collect();
        Self::from_rows(dim, data)
    }

    /// Builds from a `DMatrix` that is skew-symmetric up to rounding:
    /// the result is `(A - Aᵀ)/2` with no tolerance check.
    pub fn from_dmatrix_projected(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() % 2 != 0 {
            return Err(Error::Shape("matrix must be square with even dimension".into()));
        }
        let dim = a.nrows();
        let mut m = Self::zeros(dim / 2);
        for i in 0..dim {
            for j in i + 1..dim {
                m.set(i, j, 0.5 * (a[(i, j)] - a[(j, i)]));
            }
        }
        Ok(m)
    }

    /// Builds from a function of point pairs returning the 2x2 block
    /// `K(x_a, x_b)`. Only blocks with `a <= b` are evaluated; the lower
    /// triangle is mirrored, and the diagonal block uses its (0,1) entry.
    pub fn from_blocks<F>(n: usize, mut block: F) -> Self
    where
        F: FnMut(usize, usize) -> [[f64; 2]; 2],
    {
        let mut m = Self::zeros(n);
        for a in 0..n {
            for b in a..n {
                let k = block(a, b);
                if a == b {
                    m.set(2 * a, 2 * a + 1, k[0][1]);
                } else {
                    for r in 0..2 {
                        for c in 0..2 {
                            m.set(2 * a + r, 2 * b + c, k[r][c]);
                        }
                    }
                }
            }
        }
        m
    }

    /// Number of points `n`.
    pub fn order_pairs(&self) -> usize {
        self.n
    }

    /// Matrix dimension `2n`.
    pub fn dim(&self) -> usize {
        2 * self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim() + j]
    }

    /// Sets `A[i,j] = v` and `A[j,i] = -v`.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let d = self.dim();
        if i == j {
            return;
        }
        self.data[i * d + j] = v;
        self.data[j * d + i] = -v;
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// The 2x2 block of points `(a, b)`.
    pub fn block(&self, a: usize, b: usize) -> [[f64; 2]; 2] {
        [
            [self.get(2 * a, 2 * b), self.get(2 * a, 2 * b + 1)],
            [self.get(2 * a + 1, 2 * b), self.get(2 * a + 1, 2 * b + 1)],
        ]
    }

    fn antisymmetrize(&mut self) {
        let d = self.dim();
        for i in 0..d {
            self.data[i * d + i] = 0.0;
            for j in i + 1..d {
                let v = 0.5 * (self.data[i * d + j] - self.data[j * d + i]);
                self.data[i * d + j] = v;
                self.data[j * d + i] = -v;
            }
        }
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), &self.data)
    }

    /// Principal submatrix on the rows owned by `s`.
    pub fn submatrix(&self, s: &PointIndexSet) -> SkewMatrix {
        let rows = s.rows();
        let d = rows.len();
        let mut data = Vec::with_capacity(d * d);
        for &r in &rows {
            for &c in &rows {
                data.push(self.get(r, c));
            }
        }
        SkewMatrix { n: s.len(), data }
    }

    /// Rectangular block with rows owned by `rs` and columns owned by `cs`.
    pub fn cross_block(&self, rs: &PointIndexSet, cs: &PointIndexSet) -> DMatrix<f64> {
        let rows = rs.rows();
        let cols = cs.rows();
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.get(rows[i], cols[j]))
    }

    /// Reorders points: point `k` of the result is point `order[k]` of `self`.
    pub fn permute_points(&self, order: &[usize]) -> Result<SkewMatrix> {
        let mut seen = vec![false; self.n];
        if order.len() != self.n || order.iter().any(|&i| i >= self.n || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::Shape("order is not a permutation of the points".into()));
        }
        let rows: Vec<usize> = order.iter().flat_map(|&i| [2 * i, 2 * i + 1]).collect();
        let d = rows.len();
        let mut data = Vec::with_capacity(d * d);
        for &r in &rows {
            for &c in &rows {
                data.push(self.get(r, c));
            }
        }
        Ok(SkewMatrix { n: self.n, data })
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: f64, other: &SkewMatrix) -> Result<SkewMatrix> {
        if self.n != other.n {
            return Err(Error::Shape("dimension mismatch".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + alpha * b).collect();
        Ok(SkewMatrix { n: self.n, data })
    }

    pub fn scale(&self, alpha: f64) -> SkewMatrix {
        SkewMatrix { n: self.n, data: self.data.iter().map(|v| alpha * v).collect() }
    }

    /// Writes the binary kernel format.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads the binary kernel format.
    pub fn read_binary<R: Read>(mut r: R) -> Result<SkewMatrix> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic; not a skew-matrix file".into()));
        }
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)?;
        let n = u64::from_le_bytes(buf) as usize;
        let count = n.checked_mul(n).and_then(|v| v.checked_mul(4)).ok_or_else(|| Error::Format("size overflow".into()))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != count * 8 {
            return Err(Error::Format(format!("expected {} payload bytes, found {}", count * 8, bytes.len())));
        }
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Self::from_rows(2 * n, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_binary(f)
    }

    pub fn load(path: &Path) -> Result<SkewMatrix> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_binary(f)
    }
}

/// Pfaffian by expansion over perfect matchings. Factorial cost; `dim <= 12`.
pub fn pfaffian_combinatorial(a: &SkewMatrix) -> Result<f64> {
    if a.dim() > 12 {
        return Err(Error::Shape(format!("combinatorial Pfaffian limited to dimension 12, got {}", a.dim())));
    }
    let idx: Vec<usize> = (0..a.dim()).collect();
    Ok(pf_expand(a, &idx))
}

fn pf_expand(a: &SkewMatrix, idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 1.0;
    }
    let first = idx[0];
    let mut total = 0.0;
    for k in 1..idx.len() {
        let rest: Vec<usize> = idx[1..].iter().enumerate().filter(|(j, _)| *j + 1 != k).map(|(_, &v)| v).collect();
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        total += sign * a.get(first, idx[k]) * pf_expand(a, &rest);
    }
    total
}

/// Result of a skew Gaussian elimination `A = B J Bᵀ`.
#[derive(Clone, Debug)]
pub struct SkewFactorization {
    /// Factor with rows indexed like `A`; `A = B J Bᵀ` holds exactly in
    /// this indexing (no permutation is needed to reconstruct).
    pub b: DMatrix<f64>,
    /// `perm[c]` is the row of `A` pivoted into factor column `c`. The
    /// identity when pivoting was not triggered; permuting the rows of `B`
    /// by `perm` gives a block upper-triangular matrix.
    pub perm: Vec<usize>,
    /// 2x2-block pivots, one per factor column pair (zero when rank deficient).
    pub pivots: Vec<f64>,
    /// Whether a zero block was encountered.
    pub rank_deficient: bool,
}

impl SkewFactorization {
    /// Pfaffian of the factored matrix as `(sign, log|pf|)`, read off the
    /// pivots and the sign of `perm`.
    pub fn pfaffian(&self) -> (f64, f64) {
        if self.rank_deficient {
            return (0.0, f64::NEG_INFINITY);
        }
        let mut sign = permutation_sign(&self.perm);
        let mut log_abs = 0.0;
        for &p in &self.pivots {
            if p < 0.0 {
                sign = -sign;
            }
            log_abs += p.abs().ln();
        }
        (sign, log_abs)
    }
}

fn permutation_sign(perm: &[usize]) -> f64 {
    let mut seen = vec![false; perm.len()];
    let mut sign = 1.0;
    for start in 0..perm.len() {
        if seen[start] {
            continue;
        }
        let mut len = 0;
        let mut i = start;
        while !seen[i] {
            seen[i] = true;
            i = perm[i];
            len += 1;
        }
        if len % 2 == 0 {
            sign = -sign;
        }
    }
    sign
}

/// Skew elimination processing the last block first. Produces `B` with
/// `A = B J Bᵀ`, block upper-triangular when no pivoting occurs.
///
/// With `pivoting`, each step brings the entry of largest magnitude in the
/// remaining leading block into the pivot position.
pub fn skew_cholesky(a: &SkewMatrix, pivoting: bool) -> Result<SkewFactorization> {
    skew_cholesky_tol(a, pivoting, PIVOT_TOL)
}

/// [`skew_cholesky`] with a custom relative pivot tolerance.
pub fn skew_cholesky_tol(a: &SkewMatrix, pivoting: bool, rel_tol: f64) -> Result<SkewFactorization> {
    let dim = a.dim();
    let n = a.order_pairs();
    let tol = rel_tol * a.max_abs();
    let mut w = a.data.clone();
    let mut pos: Vec<usize> = (0..dim).collect();
    let mut b = DMatrix::<f64>::zeros(dim, dim);
    let mut perm = vec![0usize; dim];
    let mut pivots = vec![0.0; n];
    let mut rank_deficient = false;
    let mut xa = vec![0.0; dim];
    let mut xb = vec![0.0; dim];

    for step in 0..n {
        let m = dim - 2 * step;
        let slot = n - 1 - step;
        let (ia, ib) = (m - 2, m - 1);
        if pivoting {
            let (mut best, mut bi, mut bj) = (-1.0, ia, ib);
            for i in 0..m {
                for j in i + 1..m {
                    let v = w[i * dim + j].abs();
                    if v > best {
                        best = v;
                        bi = i;
                        bj = j;
                    }
                }
            }
            // Move bj to ib first; if bi sat at ib it has moved to bj.
            swap_sym(&mut w, dim, m, bj, ib, &mut pos);
            let bi = if bi == ib { bj } else { bi };
            swap_sym(&mut w, dim, m, bi, ia, &mut pos);
        }
        perm[2 * slot] = pos[ia];
        perm[2 * slot + 1] = pos[ib];
        let p = w[ia * dim + ib];
        if p.abs() <= tol || p == 0.0 {
            let rows_zero = (0..m).all(|r| w[r * dim + ia].abs() <= tol && w[r * dim + ib].abs() <= tol);
            if !rows_zero {
                return Err(Error::SingularPivot { step, value: p.abs() });
            }
            rank_deficient = true;
            pivots[slot] = 0.0;
            continue;
        }
        pivots[slot] = p;
        b[(pos[ia], 2 * slot)] = 1.0;
        b[(pos[ib], 2 * slot + 1)] = p;
        let inner = m - 2;
        for r in 0..inner {
            xa[r] = w[r * dim + ia];
            xb[r] = w[r * dim + ib];
            b[(pos[r], 2 * slot)] = xb[r] / p;
            b[(pos[r], 2 * slot + 1)] = -xa[r];
        }
        let inv_p = 1.0 / p;
        for i in 0..inner {
            let (bi, ai) = (xb[i] * inv_p, xa[i] * inv_p);
            let row = i * dim;
            for j in i + 1..inner {
                let v = w[row + j] + bi * xa[j] - ai * xb[j];
                w[row + j] = v;
                w[j * dim + i] = -v;
            }
        }
    }
    Ok(SkewFactorization { b, perm, pivots, rank_deficient })
}

/// Swaps rows and columns `s` and `t` of the leading `m x m` working block.
/// Entries outside the block are no longer read.
fn swap_sym(w: &mut [f64], dim: usize, m: usize, s: usize, t: usize, pos: &mut [usize]) {
    if s == t {
        return;
    }
    for k in 0..m {
        w.swap(s * dim + k, t * dim + k);
    }
    for k in 0..m {
        w.swap(k * dim + s, k * dim + t);
    }
    pos.swap(s, t);
}

/// Factorization `A = C J Cᵀ` with `C` block lower-triangular, obtained by
/// eliminating the first block first. Fails on a pivot at or below
/// `rel_tol · max|A|`.
pub fn skew_cholesky_lower(a: &SkewMatrix, rel_tol: f64) -> Result<DMatrix<f64>> {
    // With R the index reversal, R A R = B J Bᵀ (B upper) gives
    // A = (R B R D) J (R B R D)ᵀ where D = diag(1, -1, 1, ...), since R J R = -J = D J D.
    let dim = a.dim();
    let data = (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).map(|(i, j)| a.get(dim - 1 - i, dim - 1 - j)).collect();
    let ra = SkewMatrix { n: a.order_pairs(), data };
    let f = skew_cholesky_tol(&ra, false, rel_tol)?;
    Ok(DMatrix::from_fn(dim, dim, |i, j| {
        let v = f.b[(dim - 1 - i, dim - 1 - j)];
        if j % 2 == 0 { v } else { -v }
    }))
}

/// Pfaffian as `(sign, log|pf|)` by pivoted skew elimination. An exactly
/// singular matrix gives `(0, -inf)`.
pub fn pfaffian(a: &SkewMatrix) -> (f64, f64) {
    if a.order_pairs() == 0 {
        return (1.0, 0.0);
    }
    match skew_cholesky(a, true) {
        Ok(f) => f.pfaffian(),
        Err(_) => (0.0, f64::NEG_INFINITY),
    }
}

/// Pfaffian in linear scale.
pub fn pfaffian_value(a: &SkewMatrix) -> f64 {
    let (s, l) = pfaffian(a);
    if s == 0.0 { 0.0 } else { s * l.exp() }
}

/// Direction of [`kernel_convert`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvertDirection {
    KToL,
    LToK,
}

fn invert(m: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let lu = m.lu();
    lu.try_inverse()
}

fn nonsingular(m: &SkewMatrix) -> bool {
    pfaffian(m).0 != 0.0
}

/// `L = J K (J - K)^-1` or `K = J + (J + L)^-1`.
pub fn kernel_convert(m: &SkewMatrix, direction: ConvertDirection) -> Result<SkewMatrix> {
    let j = SkewMatrix::standard_symplectic(m.order_pairs());
    match direction {
        ConvertDirection::KToL => {
            // J K (J - K)^-1 = (K - J)^-1 - J, using J² = -I.
            let km = m.add_scaled(-1.0, &j)?;
            if !nonsingular(&km) {
                return Err(Error::NoLKernel);
            }
            let inv = invert(km.to_dmatrix()).ok_or(Error::NoLKernel)?;
            SkewMatrix::from_dmatrix_projected(&(inv - j.to_dmatrix()))
        }
        ConvertDirection::LToK => {
            let jl = j.add_scaled(1.0, m)?;
            if !nonsingular(&jl) {
                return Err(Error::NoLKernel);
            }
            let inv = invert(jl.to_dmatrix()).ok_or(Error::NoLKernel)?;
            SkewMatrix::from_dmatrix_projected(&(inv + j.to_dmatrix()))
        }
    }
}

/// Conditioning mode for [`condition`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConditionMode {
    /// Condition on all points of `Y` being present.
    Include,
    /// Condition on no point of `Y` being present.
    Exclude,
}

/// Kernel of the process restricted to the complement of `y`, conditioned on
/// the event described by `mode`. Points of the result are the complement of
/// `y` in increasing order.
pub fn condition(k: &SkewMatrix, y: &PointIndexSet, mode: ConditionMode) -> Result<SkewMatrix> {
    if y.indices().last().is_some_and(|&i| i >= k.order_pairs()) {
        return Err(Error::Shape("conditioning set exceeds ground set".into()));
    }
    let rest = y.complement(k.order_pairs());
    if y.is_empty() {
        return Ok(k.clone());
    }
    let mut ky = k.submatrix(y);
    if mode == ConditionMode::Exclude {
        ky = ky.add_scaled(-1.0, &SkewMatrix::standard_symplectic(y.len()))?;
    }
    if !nonsingular(&ky) {
        return Err(Error::ConditioningImpossible);
    }
    let inv = invert(ky.to_dmatrix()).ok_or(Error::ConditioningImpossible)?;
    let kry = k.cross_block(&rest, y);
    let kyr = k.cross_block(y, &rest);
    let out = k.submatrix(&rest).to_dmatrix() - kry * inv * kyr;
    SkewMatrix::from_dmatrix_projected(&out)
}
