//! Determinant identities and small random-matrix facts.
//!
//! The identities are written once over a [`Scalar`] trait so the same code
//! runs in `f64` (determinants by LU with partial pivoting) and in exact
//! rational arithmetic for audits where cancellation could hide an error.

use std::ops::{Add, Mul, Neg, Sub};

use itertools::Itertools;
use nalgebra::{DMatrix, SymmetricEigen};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::random::{standard_normal, RngStream};

pub trait Scalar:
    Clone + PartialEq + Zero + One + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn det(m: &Mat<Self>) -> Self;
    fn from_ratio(num: i64, den: i64) -> Self;
}

impl Scalar for f64 {
    fn det(m: &Mat<f64>) -> f64 {
        if m.rows == 0 {
            return 1.0;
        }
        DMatrix::from_row_slice(m.rows, m.cols, &m.data).lu().determinant()
    }

    fn from_ratio(num: i64, den: i64) -> f64 {
        num as f64 / den as f64
    }
}

impl Scalar for BigRational {
    /// Gaussian elimination over the rationals; exact.
    fn det(m: &Mat<BigRational>) -> BigRational {
        let n = m.rows;
        let mut a = m.data.clone();
        let mut det = BigRational::one();
        for c in 0..n {
            let Some(p) = (c..n).find(|&r| !a[r * n + c].is_zero()) else {
                return BigRational::zero();
            };
            if p != c {
                for k in 0..n {
                    a.swap(p * n + k, c * n + k);
                }
                det = -det;
            }
            let piv = a[c * n + c].clone();
            det = det * piv.clone();
            for r in c + 1..n {
                if a[r * n + c].is_zero() {
                    continue;
                }
                let factor = a[r * n + c].clone() / piv.clone();
                for k in c..n {
                    let v = a[c * n + k].clone() * factor.clone();
                    a[r * n + k] = a[r * n + k].clone() - v;
                }
            }
        }
        det
    }

    fn from_ratio(num: i64, den: i64) -> BigRational {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.get(i, j).clone());
            }
        }
        Mat {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = T::zero();
                for k in 0..self.cols {
                    acc = acc + self.get(i, k).clone() * other.get(k, j).clone();
                }
                out.data[i * other.cols + j] = acc;
            }
        }
        Ok(out)
    }

    /// `M^S_R`: keeps the listed rows and columns, in the given order.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for &i in rows {
            for &j in cols {
                data.push(self.get(i, j).clone());
            }
        }
        Mat {
            rows: rows.len(),
            cols: cols.len(),
            data,
        }
    }

    pub fn select_cols(&self, cols: &[usize]) -> Self {
        let rows: Vec<usize> = (0..self.rows).collect();
        self.select(&rows, cols)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let cols: Vec<usize> = (0..self.cols).collect();
        self.select(rows, &cols)
    }

    pub fn scale_cols(&self, factors: &[T]) -> Self {
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[i * self.cols + j] = self.get(i, j).clone() * factors[j].clone();
            }
        }
        out
    }

    pub fn det(&self) -> Result<T> {
        if self.rows != self.cols {
            return Err(Error::Shape(format!(
                "determinant of a non-square {}x{} matrix",
                self.rows, self.cols
            )));
        }
        Ok(T::det(self))
    }

    /// `M Mᵀ`.
    pub fn gram(&self) -> Self {
        self.matmul(&self.transpose()).expect("conforming shapes")
    }
}

impl Mat<f64> {
    pub fn to_rational(&self) -> Mat<BigRational> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|&v| BigRational::from_float(v).expect("finite entries"))
                .collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        Mat {
            rows,
            cols,
            data: (0..rows * cols).map(|_| standard_normal(rng)).collect(),
        }
    }
}

/// A sorted set of 0-based row or column indices of a matrix with `m` rows
/// or columns.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IndexSubset {
    pub members: Vec<usize>,
    pub universe: usize,
}

impl IndexSubset {
    pub fn new(mut members: Vec<usize>, universe: usize) -> Result<Self> {
        members.sort_unstable();
        if members.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::OutOfRange("repeated index in subset".into()));
        }
        if members.last().is_some_and(|&m| m >= universe) {
            return Err(Error::OutOfRange(format!("index beyond {universe}")));
        }
        Ok(IndexSubset { members, universe })
    }

    pub fn complement(&self) -> Vec<usize> {
        (0..self.universe).filter(|i| self.members.binary_search(i).is_err()).collect()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// All `k`-subsets of `{0, …, m−1}` in lexicographic order.
pub fn subsets(m: usize, k: usize) -> impl Iterator<Item = IndexSubset> {
    (0..m).combinations(k).map(move |members| IndexSubset { members, universe: m })
}

/// `det(AB)` and `Σ_{#S = m} det(A^S) det(B_S)` for `A: m×n`, `B: n×m`.
pub fn cauchy_binet_check<T: Scalar>(a: &Mat<T>, b: &Mat<T>) -> Result<(T, T)> {
    let (m, n) = (a.rows, a.cols);
    if b.rows != n || b.cols != m {
        return Err(Error::Shape(format!(
            "expected B to be {n}x{m}, got {}x{}",
            b.rows, b.cols
        )));
    }
    if m > n {
        return Err(Error::Shape(format!("need m <= n, got m = {m}, n = {n}")));
    }
    let lhs = a.matmul(b)?.det()?;
    let mut rhs = T::zero();
    for s in subsets(n, m) {
        rhs = rhs + a.select_cols(&s.members).det()? * b.select_rows(&s.members).det()?;
    }
    Ok((lhs, rhs))
}

/// For `C_q(λ)`, the matrix `C` with `λ` added to its first `q` diagonal
/// entries, returns `det C_q(λ)` and the expansion
/// `det C + Σ_{ℓ=1..q} Σ_{S ⊂ {1..q}, #S = ℓ} det(C^{S̄}_{S̄}) λ^ℓ`.
pub fn shifted_det_expansion<T: Scalar>(c: &Mat<T>, q: usize, lambda: T) -> Result<(T, T)> {
    let m = c.rows;
    if c.cols != m {
        return Err(Error::Shape("C must be square".into()));
    }
    if q < 1 || q > m {
        return Err(Error::OutOfRange(format!("q = {q} outside 1..={m}")));
    }
    let mut shifted = c.clone();
    for i in 0..q {
        shifted.data[i * m + i] = shifted.data[i * m + i].clone() + lambda.clone();
    }
    let direct = shifted.det()?;
    let mut expansion = c.det()?;
    let mut power = T::one();
    for ell in 1..=q {
        power = power * lambda.clone();
        let mut coeff = T::zero();
        for s in subsets(q, ell) {
            let comp = IndexSubset {
                members: s.members,
                universe: m,
            }
            .complement();
            coeff = coeff + c.select(&comp, &comp).det()?;
        }
        expansion = expansion + coeff * power.clone();
    }
    Ok((direct, expansion))
}

/// For `A, B: k×n` and `C: (n−1)×n` with `1 ≤ k < n`, returns `det Q` for
/// `Q = [[AAᵀ + BBᵀ, ACᵀ], [CAᵀ, CCᵀ]]` and the expansion
/// `det(CCᵀ) det(BBᵀ) + Σ_{#S=k−1} (Σ_i Σ_j (−1)^{i+j−1} a_ij det(B^S_ī) det(C^j̄))²`.
pub fn block_det_identity<T: Scalar>(a: &Mat<T>, b: &Mat<T>, c: &Mat<T>) -> Result<(T, T)> {
    let (k, n) = (a.rows, a.cols);
    if !(1 <= k && k < n) {
        return Err(Error::Shape(format!("need 1 <= k < n, got k = {k}, n = {n}")));
    }
    if b.rows != k || b.cols != n || c.rows != n - 1 || c.cols != n {
        return Err(Error::Shape("A, B must be k x n and C (n-1) x n".into()));
    }
    let size = k + n - 1;
    let at = a.transpose();
    let top_left = a.matmul(&at)? + &b.gram();
    let top_right = a.matmul(&c.transpose())?;
    let bottom_right = c.gram();
    let mut q = Mat::<T>::zeros(size, size);
    for i in 0..size {
        for j in 0..size {
            q.data[i * size + j] = match (i < k, j < k) {
                (true, true) => top_left.get(i, j).clone(),
                (true, false) => top_right.get(i, j - k).clone(),
                (false, true) => top_right.get(j, i - k).clone(),
                (false, false) => bottom_right.get(i - k, j - k).clone(),
            };
        }
    }
    let lhs = q.det()?;
    let c_minors: Vec<T> = (0..n)
        .map(|j| {
            let cols: Vec<usize> = (0..n).filter(|&c2| c2 != j).collect();
            c.select_cols(&cols).det()
        })
        .collect::<Result<_>>()?;
    let mut rhs = bottom_right.det()? * b.gram().det()?;
    for s in subsets(n, k - 1) {
        let mut inner = T::zero();
        for i in 0..k {
            let rows: Vec<usize> = (0..k).filter(|&r| r != i).collect();
            let b_minor = b.select(&rows, &s.members).det()?;
            for (j, cm) in c_minors.iter().enumerate() {
                // 1-based exponent i + j − 1 becomes (i + 1) + (j + 1) − 1
                let term = a.get(i, j).clone() * b_minor.clone() * cm.clone();
                inner = if (i + j + 1) % 2 == 0 { inner + term } else { inner - term };
            }
        }
        rhs = rhs + inner.clone() * inner;
    }
    Ok((lhs, rhs))
}

impl<T: Scalar> Add<&Mat<T>> for Mat<T> {
    type Output = Mat<T>;

    fn add(mut self, other: &Mat<T>) -> Mat<T> {
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x = x.clone() + y.clone();
        }
        self
    }
}

/// Both sides of the comparison between `det(BBᵀ)` and `det(B̂B̂ᵀ)` where
/// `B̂ = B · diag(2/√d_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhatComparison<T> {
    pub det_bbt: T,
    pub det_bhat: T,
    /// `det(B̂B̂ᵀ)` by Cauchy–Binet: `Σ_k (4^{n−1} d_k/𝒟) det(B^k̄)²`.
    pub det_bhat_by_minors: T,
    pub lower: T,
    pub upper: T,
}

fn degree_products(degrees: &[u32]) -> (i64, i64) {
    let bezout: i64 = degrees.iter().map(|&d| d as i64).product();
    let dmax = degrees.iter().copied().max().unwrap_or(1) as i64;
    (bezout, dmax)
}

/// Compares `det(B̂B̂ᵀ)` with `det(BBᵀ)` for `B: (n−1)×n`. The lower bound
/// `4^n/(2𝒟)` assumes every `d_i ≥ 2`.
pub fn bhat_comparison<T: Scalar>(b: &Mat<T>, degrees: &[u32]) -> Result<BhatComparison<T>> {
    let n = degrees.len();
    if n < 2 || b.rows != n - 1 || b.cols != n {
        return Err(Error::Shape(format!(
            "B must be (n-1) x n with n = {n} degrees, got {}x{}",
            b.rows, b.cols
        )));
    }
    if degrees.contains(&0) {
        return Err(Error::InvalidDegrees("degrees must be >= 1".into()));
    }
    let (bezout, dmax) = degree_products(degrees);
    // B̂B̂ᵀ = B H² Bᵀ with H² = diag(4/d_i), exact in rational arithmetic.
    let h2: Vec<T> = degrees.iter().map(|&d| T::from_ratio(4, d as i64)).collect();
    let det_bbt = b.gram().det()?;
    let det_bhat = b.scale_cols(&h2).matmul(&b.transpose())?.det()?;
    let mut by_minors = T::zero();
    for k in 0..n {
        let cols: Vec<usize> = (0..n).filter(|&c| c != k).collect();
        let m = b.select_cols(&cols).det()?;
        let w = T::from_ratio(4i64.pow(n as u32 - 1) * degrees[k] as i64, bezout);
        by_minors = by_minors + w * m.clone() * m;
    }
    let lower = T::from_ratio(2i64.pow(2 * n as u32 - 1), bezout) * det_bbt.clone();
    let upper = T::from_ratio(4i64.pow(n as u32 - 1) * dmax, bezout) * det_bbt.clone();
    Ok(BhatComparison {
        det_bbt,
        det_bhat,
        det_bhat_by_minors: by_minors,
        lower,
        upper,
    })
}

/// The same comparison after deleting the rows of `B` listed in `removed`
/// (`ℓ = #removed`): bounds `2^{2n−1−ℓ}/𝒟` and `4^{n−1−ℓ} 𝐃^{ℓ+1}/𝒟`.
pub fn bhat_comparison_rows<T: Scalar>(
    b: &Mat<T>,
    degrees: &[u32],
    removed: &IndexSubset,
) -> Result<BhatComparison<T>> {
    let n = degrees.len();
    if n < 2 || b.rows != n - 1 || b.cols != n || removed.universe != n - 1 {
        return Err(Error::Shape("B must be (n-1) x n and the subset index its rows".into()));
    }
    let ell = removed.len() as u32;
    let keep = removed.complement();
    let bs = b.select_rows(&keep);
    let (bezout, dmax) = degree_products(degrees);
    let h2: Vec<T> = degrees.iter().map(|&d| T::from_ratio(4, d as i64)).collect();
    let det_bbt = bs.gram().det()?;
    let det_bhat = bs.scale_cols(&h2).matmul(&bs.transpose())?.det()?;
    // Cauchy–Binet over the kept column sets T, #T = n − 1 − ℓ.
    let mut by_minors = T::zero();
    for t in subsets(n, keep.len()) {
        let m = bs.select_cols(&t.members).det()?;
        let mut w = T::one();
        for &k in &t.members {
            w = w * h2[k].clone();
        }
        by_minors = by_minors + w * m.clone() * m;
    }
    let n32 = n as u32;
    let lower = T::from_ratio(2i64.pow(2 * n32 - 1 - ell), bezout) * det_bbt.clone();
    let upper = T::from_ratio(4i64.pow(n32 - 1 - ell) * dmax.pow(ell + 1), bezout) * det_bbt.clone();
    Ok(BhatComparison {
        det_bbt,
        det_bhat,
        det_bhat_by_minors: by_minors,
        lower,
        upper,
    })
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McMean {
    pub mean: f64,
    pub se: f64,
    pub trials: usize,
}

impl McMean {
    pub fn from_samples(xs: &[f64]) -> Self {
        let m = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / m;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)
        } else {
            0.0
        };
        McMean {
            mean,
            se: (var / m).sqrt(),
            trials: xs.len(),
        }
    }
}

/// `E det(UUᵀ)` for a standard Gaussian `m×n` matrix `U`: the Monte Carlo
/// estimate (trial `t` uses stream `t` of `seed`) and the exact `n!/(n−m)!`.
pub fn wishart_expected_det(m: usize, n: usize, trials: usize, seed: u64) -> Result<(McMean, f64)> {
    if m > n || m == 0 {
        return Err(Error::Shape(format!("need 1 <= m <= n, got m = {m}, n = {n}")));
    }
    if trials == 0 {
        return Err(Error::Config("at least one trial".into()));
    }
    let exact: f64 = ((n - m + 1)..=n).map(|k| k as f64).product();
    let dets: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = RngStream::new(seed, t).rng();
            Mat::random(m, n, &mut rng).gram().det().expect("square")
        })
        .collect();
    Ok((McMean::from_samples(&dets), exact))
}

/// Symmetric Gaussian matrix with off-diagonal variance `1/n` and diagonal
/// variance `2/n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoeLikeMatrix {
    pub n: usize,
    /// Row-major, symmetric.
    pub entries: Vec<f64>,
}

impl GoeLikeMatrix {
    pub fn from_entries(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: entries.len(),
            });
        }
        for i in 0..n {
            for j in 0..i {
                if entries[i * n + j] != entries[j * n + i] {
                    return Err(Error::Shape("matrix is not symmetric".into()));
                }
            }
        }
        Ok(GoeLikeMatrix { n, entries })
    }
}

pub fn sample_goe_like<R: Rng + ?Sized>(n: usize, rng: &mut R) -> GoeLikeMatrix {
    let mut entries = vec![0.0; n * n];
    let off = (1.0 / n as f64).sqrt();
    let diag = (2.0 / n as f64).sqrt();
    for i in 0..n {
        for j in i..n {
            let s = if i == j { diag } else { off };
            let v = s * standard_normal(rng);
            entries[i * n + j] = v;
            entries[j * n + i] = v;
        }
    }
    GoeLikeMatrix { n, entries }
}

/// `λ̄ = max(0, λ_max(G))`.
pub fn lambda_bar(g: &GoeLikeMatrix) -> f64 {
    if g.n == 0 {
        return 0.0;
    }
    let m = DMatrix::from_row_slice(g.n, g.n, &g.entries);
    let eig = SymmetricEigen::new(m);
    eig.eigenvalues.iter().copied().fold(0.0, f64::max)
}

/// `P(λ̄ ≥ 2 + √2 t) < exp(−n t²/2)`.
pub fn lambda_bar_tail_bound(n: usize, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::OutOfRange(format!("t must be nonnegative, got {t}")));
    }
    Ok((-(n as f64) * t * t / 2.0).exp())
}

/// `λ̄` for `samples` independent matrices (sample `s` uses stream `s`).
pub fn sample_lambda_bars(n: usize, samples: usize, seed: u64) -> Vec<f64> {
    (0..samples as u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = RngStream::new(seed, s).rng();
            lambda_bar(&sample_goe_like(n, &mut rng))
        })
        .collect()
}
