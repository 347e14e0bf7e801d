//! Dense homogeneous polynomials with the Weyl (Bombieri) norm.
//!
//! A [`HomogeneousPoly`] of degree `d` in `n + 1` variables stores one
//! coefficient per monomial `x^j`, `|j| = d`, in graded-lexicographic order
//! (`x_0^d` first, `x_n^d` last). The exponent table and the multinomial
//! weights `d! / (j_0! ... j_n!)` live in a shared [`MonomialBasis`].
//!
//! A [`PolySystem`] is a list of `n` such polynomials in `n + 1` variables,
//! the square-minus-one shape whose real zeros form a finite set of points
//! on the sphere `S^n`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent vector of a monomial.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        MultiIndex(exponents)
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }
}

/// Checked binomial coefficient.
pub fn binomial(n: u64, k: u64) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) is exact at every step.
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

/// Exact multinomial coefficient `d! / (j_0! ... j_n!)`.
pub fn multinomial(d: u32, j: &MultiIndex) -> Result<u64> {
    multinomial_slice(d, j.as_slice())
}

fn multinomial_slice(d: u32, j: &[u32]) -> Result<u64> {
    let total: u32 = j.iter().sum();
    if total != d {
        return Err(Error::DegreeMismatch {
            expected: d,
            got: total,
        });
    }
    let mut remaining = d as u64;
    let mut acc: u64 = 1;
    for &e in j {
        let b = binomial(remaining, e as u64).ok_or(Error::Overflow(d))?;
        acc = acc.checked_mul(b).ok_or(Error::Overflow(d))?;
        remaining -= e as u64;
    }
    Ok(acc)
}

/// The monomials of a fixed degree in a fixed number of variables.
#[derive(Debug, Clone, PartialEq)]
pub struct MonomialBasis {
    degree: u32,
    num_vars: usize,
    exponents: Vec<u32>,
    multinomials: Vec<u64>,
}

impl MonomialBasis {
    pub fn new(degree: u32, num_vars: usize) -> Result<Arc<Self>> {
        if num_vars == 0 {
            return Err(Error::Shape("a polynomial needs at least one variable".into()));
        }
        let mut exponents = Vec::new();
        let mut current = vec![0u32; num_vars];
        push_compositions(degree, 0, &mut current, &mut exponents);
        let count = exponents.len() / num_vars;
        let mut multinomials = Vec::with_capacity(count);
        for m in exponents.chunks_exact(num_vars) {
            multinomials.push(multinomial_slice(degree, m)?);
        }
        Ok(Arc::new(MonomialBasis {
            degree,
            num_vars,
            exponents,
            multinomials,
        }))
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    /// Number of monomials, `C(n + d, n)` for `n + 1` variables.
    pub fn len(&self) -> usize {
        self.multinomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multinomials.is_empty()
    }

    pub fn exponents(&self, idx: usize) -> &[u32] {
        &self.exponents[idx * self.num_vars..(idx + 1) * self.num_vars]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u32]> {
        self.exponents.chunks_exact(self.num_vars)
    }

    pub fn multinomial(&self, idx: usize) -> u64 {
        self.multinomials[idx]
    }

    /// Position of a monomial in graded-lexicographic order.
    pub fn index_of(&self, exps: &[u32]) -> Option<usize> {
        if exps.len() != self.num_vars || exps.iter().sum::<u32>() != self.degree {
            return None;
        }
        let nv = self.num_vars as u64;
        let mut rank: u64 = 0;
        let mut remaining = self.degree as u64;
        for (p, &e) in exps.iter().enumerate().take(self.num_vars - 1) {
            let parts_after = nv - p as u64 - 1;
            for v in (e as u64 + 1)..=remaining {
                rank += binomial(remaining - v + parts_after - 1, parts_after - 1)?;
            }
            remaining -= e as u64;
        }
        Some(rank as usize)
    }
}

fn push_compositions(remaining: u32, pos: usize, current: &mut [u32], out: &mut Vec<u32>) {
    let last = current.len() - 1;
    if pos == last {
        current[pos] = remaining;
        out.extend_from_slice(current);
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e;
        push_compositions(remaining - e, pos + 1, current, out);
    }
    current[pos] = 0;
}

/// Table of `x_k^e` for `e = 0..=d`.
fn power_table(x: &[f64], d: u32, out: &mut Vec<f64>) {
    let stride = d as usize + 1;
    out.clear();
    out.resize(x.len() * stride, 1.0);
    for (k, &xk) in x.iter().enumerate() {
        let row = &mut out[k * stride..(k + 1) * stride];
        for e in 1..stride {
            row[e] = row[e - 1] * xk;
        }
    }
}

/// A real homogeneous polynomial with dense coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneousPoly {
    basis: Arc<MonomialBasis>,
    coeffs: Vec<f64>,
}

impl HomogeneousPoly {
    pub fn zeros(degree: u32, num_vars: usize) -> Result<Self> {
        let basis = MonomialBasis::new(degree, num_vars)?;
        let coeffs = vec![0.0; basis.len()];
        Ok(HomogeneousPoly { basis, coeffs })
    }

    pub fn from_coeffs(basis: Arc<MonomialBasis>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(Error::DimensionMismatch {
                expected: basis.len(),
                got: coeffs.len(),
            });
        }
        Ok(HomogeneousPoly { basis, coeffs })
    }

    /// Builds a polynomial from `(exponents, coefficient)` terms; repeated
    /// monomials accumulate.
    pub fn from_terms(degree: u32, num_vars: usize, terms: &[(Vec<u32>, f64)]) -> Result<Self> {
        let mut p = Self::zeros(degree, num_vars)?;
        for (exps, c) in terms {
            let idx = p.basis.index_of(exps).ok_or_else(|| {
                if exps.len() != num_vars {
                    Error::DimensionMismatch {
                        expected: num_vars,
                        got: exps.len(),
                    }
                } else {
                    Error::DegreeMismatch {
                        expected: degree,
                        got: exps.iter().sum(),
                    }
                }
            })?;
            p.coeffs[idx] += c;
        }
        Ok(p)
    }

    pub fn degree(&self) -> u32 {
        self.basis.degree
    }

    pub fn num_vars(&self) -> usize {
        self.basis.num_vars
    }

    pub fn basis(&self) -> &Arc<MonomialBasis> {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn coefficient(&self, j: &MultiIndex) -> Option<f64> {
        self.basis.index_of(j.as_slice()).map(|i| self.coeffs[i])
    }

    pub fn set_coefficient(&mut self, j: &MultiIndex, value: f64) -> Result<()> {
        let idx = self
            .basis
            .index_of(j.as_slice())
            .ok_or(Error::DegreeMismatch {
                expected: self.degree(),
                got: j.degree(),
            })?;
        self.coeffs[idx] = value;
        Ok(())
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32], f64)> {
        self.basis.iter().zip(self.coeffs.iter().copied())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.num_vars() {
            return Err(Error::DimensionMismatch {
                expected: self.num_vars(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let mut pw = Vec::new();
        Ok(self.eval_with(x, &mut pw))
    }

    fn eval_with(&self, x: &[f64], pw: &mut Vec<f64>) -> f64 {
        let d = self.degree();
        let stride = d as usize + 1;
        power_table(x, d, pw);
        let mut acc = 0.0;
        for (exps, &a) in self.basis.iter().zip(&self.coeffs) {
            if a == 0.0 {
                continue;
            }
            let mut term = a;
            for (k, &e) in exps.iter().enumerate() {
                term *= pw[k * stride + e as usize];
            }
            acc += term;
        }
        acc
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut scratch = JetScratch::default();
        let mut grad = vec![0.0; x.len()];
        self.jet_into(x, &mut scratch, &mut grad, None);
        Ok(grad)
    }

    /// Second partials as a row-major `(n+1) x (n+1)` symmetric matrix.
    pub fn hessian(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let nv = x.len();
        let mut scratch = JetScratch::default();
        let mut grad = vec![0.0; nv];
        let mut hess = vec![0.0; nv * nv];
        self.jet_into(x, &mut scratch, &mut grad, Some(&mut hess));
        Ok(hess)
    }

    /// Value, gradient and (optionally) Hessian in one pass. Buffers must be
    /// sized `n + 1` and `(n + 1)^2`; the caller checks dimensions.
    pub(crate) fn jet_into(
        &self,
        x: &[f64],
        scratch: &mut JetScratch,
        grad: &mut [f64],
        hess: Option<&mut [f64]>,
    ) -> f64 {
        let nv = x.len();
        let d = self.degree() as usize;
        let stride = d + 1;
        power_table(x, self.degree(), &mut scratch.pw);
        let pw = &scratch.pw;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut value = 0.0;
        let mut hess = hess;
        if let Some(h) = hess.as_deref_mut() {
            h.iter_mut().for_each(|v| *v = 0.0);
        }
        // x^{j - e_k} needs x_k^{j_k - 1}; keep everything multiplicative so
        // that zero coordinates are handled exactly.
        for (exps, &a) in self.basis.iter().zip(&self.coeffs) {
            if a == 0.0 {
                continue;
            }
            let mut full = a;
            for (k, &e) in exps.iter().enumerate() {
                full *= pw[k * stride + e as usize];
            }
            value += full;
            for k in 0..nv {
                let ek = exps[k] as usize;
                if ek == 0 {
                    continue;
                }
                let mut t = a * ek as f64;
                for (m, &em) in exps.iter().enumerate() {
                    let p = if m == k { em as usize - 1 } else { em as usize };
                    t *= pw[m * stride + p];
                }
                grad[k] += t;
            }
            if let Some(h) = hess.as_deref_mut() {
                for k in 0..nv {
                    let ek = exps[k] as usize;
                    if ek == 0 {
                        continue;
                    }
                    for l in k..nv {
                        let el = exps[l] as usize;
                        let factor = if l == k {
                            if ek < 2 {
                                continue;
                            }
                            (ek * (ek - 1)) as f64
                        } else {
                            if el == 0 {
                                continue;
                            }
                            (ek * el) as f64
                        };
                        let mut t = a * factor;
                        for (m, &em) in exps.iter().enumerate() {
                            let mut p = em as usize;
                            if m == k {
                                p -= 1;
                            }
                            if m == l {
                                p -= 1;
                            }
                            t *= pw[m * stride + p];
                        }
                        h[k * nv + l] += t;
                    }
                }
            }
        }
        if let Some(h) = hess {
            for k in 0..nv {
                for l in 0..k {
                    h[k * nv + l] = h[l * nv + k];
                }
            }
        }
        value
    }

    /// Evaluates the mixed partial derivative `∂^vars f` at `x`, where `vars`
    /// lists variable indices with repetition.
    pub fn partial(&self, vars: &[usize], x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        if let Some(&bad) = vars.iter().find(|&&v| v >= x.len()) {
            return Err(Error::OutOfRange(format!("variable index {bad}")));
        }
        let mut e = vec![0u32; x.len()];
        let mut acc = 0.0;
        'mono: for (exps, &a) in self.basis.iter().zip(&self.coeffs) {
            if a == 0.0 {
                continue;
            }
            e.copy_from_slice(exps);
            let mut factor = a;
            for &v in vars {
                if e[v] == 0 {
                    continue 'mono;
                }
                factor *= e[v] as f64;
                e[v] -= 1;
            }
            for (k, &ek) in e.iter().enumerate() {
                factor *= x[k].powi(ek as i32);
            }
            acc += factor;
        }
        Ok(acc)
    }

    /// `T[k][m] = Σ_l ∂_{k m l} f(x) y_l`, row-major. This is the Hessian of
    /// the directional derivative `y · ∇f`.
    pub fn third_contract(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        let nv = x.len();
        let mut out = vec![0.0; nv * nv];
        for k in 0..nv {
            for m in k..nv {
                let mut s = 0.0;
                for (l, &yl) in y.iter().enumerate() {
                    if yl != 0.0 {
                        s += self.partial(&[k, m, l], x)? * yl;
                    }
                }
                out[k * nv + m] = s;
                out[m * nv + k] = s;
            }
        }
        Ok(out)
    }

    /// `‖f‖_W² = Σ a_j² / C(d, j)`.
    pub fn weyl_norm_sq(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, a)| a * a / self.basis.multinomial(i) as f64)
            .sum()
    }

    pub fn weyl_norm(&self) -> f64 {
        self.weyl_norm_sq().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        HomogeneousPoly {
            basis: Arc::clone(&self.basis),
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
        }
    }

    /// The polynomial `x ↦ f(A x)` for a square row-major matrix `A`.
    /// For orthogonal `U`, passing `Uᵀ` gives `f ∘ Uᵀ`.
    pub fn compose_linear(&self, a: &[f64]) -> Result<Self> {
        let nv = self.num_vars();
        if a.len() != nv * nv {
            return Err(Error::DimensionMismatch {
                expected: nv * nv,
                got: a.len(),
            });
        }
        let d = self.degree();
        let bases: Vec<Arc<MonomialBasis>> = (0..=d)
            .map(|k| MonomialBasis::new(k, nv))
            .collect::<Result<_>>()?;
        // powers[k][e] = (row k of A · x)^e as a dense polynomial of degree e
        let mut powers: Vec<Vec<Vec<f64>>> = Vec::with_capacity(nv);
        for k in 0..nv {
            let row = &a[k * nv..(k + 1) * nv];
            let mut list = vec![vec![1.0]];
            for e in 1..=d as usize {
                let prev = &list[e - 1];
                list.push(mul_linear(&bases[e - 1], prev, &bases[e], row));
            }
            powers.push(list);
        }
        let mut out = vec![0.0; self.basis.len()];
        for (exps, c) in self.terms() {
            if c == 0.0 {
                continue;
            }
            let mut acc = vec![c];
            let mut acc_deg = 0usize;
            for (k, &e) in exps.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let e = e as usize;
                acc = mul_dense(
                    &bases[acc_deg],
                    &acc,
                    &bases[e],
                    &powers[k][e],
                    &bases[acc_deg + e],
                );
                acc_deg += e;
            }
            for (o, v) in out.iter_mut().zip(&acc) {
                *o += v;
            }
        }
        HomogeneousPoly::from_coeffs(Arc::clone(&self.basis), out)
    }
}

fn mul_linear(
    pb: &MonomialBasis,
    p: &[f64],
    out_basis: &MonomialBasis,
    lin: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; out_basis.len()];
    let mut e = vec![0u32; pb.num_vars()];
    for (exps, &c) in pb.iter().zip(p) {
        if c == 0.0 {
            continue;
        }
        for (m, &l) in lin.iter().enumerate() {
            if l == 0.0 {
                continue;
            }
            e.copy_from_slice(exps);
            e[m] += 1;
            let idx = out_basis.index_of(&e).expect("degree-raised monomial");
            out[idx] += c * l;
        }
    }
    out
}

fn mul_dense(
    pb: &MonomialBasis,
    p: &[f64],
    qb: &MonomialBasis,
    q: &[f64],
    out_basis: &MonomialBasis,
) -> Vec<f64> {
    let mut out = vec![0.0; out_basis.len()];
    let mut e = vec![0u32; pb.num_vars()];
    for (pe, &pc) in pb.iter().zip(p) {
        if pc == 0.0 {
            continue;
        }
        for (qe, &qc) in qb.iter().zip(q) {
            if qc == 0.0 {
                continue;
            }
            for (k, slot) in e.iter_mut().enumerate() {
                *slot = pe[k] + qe[k];
            }
            let idx = out_basis.index_of(&e).expect("product monomial");
            out[idx] += pc * qc;
        }
    }
    out
}

/// Reusable buffers for repeated jet evaluations.
#[derive(Debug, Default, Clone)]
pub struct JetScratch {
    pw: Vec<f64>,
}

/// Both system norms. `κ` uses the max-Weyl norm, `κ̃` the L2-Weyl norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemNorms {
    pub max_weyl: f64,
    pub l2_weyl: f64,
}

/// `𝐃 = max d_i`, `𝒟 = Π d_i` and `N = Σ C(n + d_i, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConstants {
    pub max_degree: u32,
    pub bezout: u64,
    pub dim: u64,
}

pub fn model_constants(degrees: &[u32]) -> Result<ModelConstants> {
    if degrees.is_empty() {
        return Err(Error::InvalidDegrees("empty degree list".into()));
    }
    if degrees.contains(&0) {
        return Err(Error::InvalidDegrees("degrees must be >= 1".into()));
    }
    let n = degrees.len() as u64;
    let max_degree = *degrees.iter().max().expect("non-empty");
    let mut bezout: u64 = 1;
    let mut dim: u64 = 0;
    for &d in degrees {
        bezout = bezout.checked_mul(d as u64).ok_or(Error::Overflow(d))?;
        let c = binomial(n + d as u64, n).ok_or(Error::Overflow(d))?;
        dim = dim.checked_add(c).ok_or(Error::Overflow(d))?;
    }
    Ok(ModelConstants {
        max_degree,
        bezout,
        dim,
    })
}

/// `n` homogeneous polynomials in `n + 1` variables.
#[derive(Debug, Clone, PartialEq)]
pub struct PolySystem {
    polys: Vec<HomogeneousPoly>,
}

impl PolySystem {
    pub fn new(polys: Vec<HomogeneousPoly>) -> Result<Self> {
        let n = polys.len();
        if n == 0 {
            return Err(Error::Shape("a system needs at least one polynomial".into()));
        }
        for p in &polys {
            if p.num_vars() != n + 1 {
                return Err(Error::Shape(format!(
                    "{n} polynomials need {} variables, found a polynomial in {}",
                    n + 1,
                    p.num_vars()
                )));
            }
            if p.degree() == 0 {
                return Err(Error::InvalidDegrees("degrees must be >= 1".into()));
            }
        }
        Ok(PolySystem { polys })
    }

    /// Number of equations; the system lives in `n + 1` variables.
    pub fn n(&self) -> usize {
        self.polys.len()
    }

    pub fn num_vars(&self) -> usize {
        self.polys.len() + 1
    }

    pub fn polys(&self) -> &[HomogeneousPoly] {
        &self.polys
    }

    pub fn polys_mut(&mut self) -> &mut [HomogeneousPoly] {
        &mut self.polys
    }

    pub fn degrees(&self) -> Vec<u32> {
        self.polys.iter().map(|p| p.degree()).collect()
    }

    /// True when some `d_i = 1`. Such systems are accepted but lie outside
    /// the standing assumption `d_i >= 2` of the probabilistic bounds.
    pub fn has_linear_component(&self) -> bool {
        self.polys.iter().any(|p| p.degree() == 1)
    }

    pub fn constants(&self) -> Result<ModelConstants> {
        model_constants(&self.degrees())
    }

    pub fn norms(&self) -> SystemNorms {
        system_norms(self)
    }

    pub fn weyl_norm_sq(&self) -> f64 {
        self.polys.iter().map(|p| p.weyl_norm_sq()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.polys.iter().all(|p| p.coeffs.iter().all(|&c| c == 0.0))
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.polys.iter().map(|p| p.eval(x)).collect()
    }

    /// Jacobian `Df(x)` as a row-major `n x (n+1)` matrix.
    pub fn jacobian(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.n() * self.num_vars());
        for p in &self.polys {
            out.extend(p.gradient(x)?);
        }
        Ok(out)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        PolySystem {
            polys: self.polys.iter().map(|p| p.scaled(factor)).collect(),
        }
    }

    /// `x ↦ f(A x)` componentwise.
    pub fn compose_linear(&self, a: &[f64]) -> Result<Self> {
        Ok(PolySystem {
            polys: self
                .polys
                .iter()
                .map(|p| p.compose_linear(a))
                .collect::<Result<_>>()?,
        })
    }

    pub fn to_record(&self) -> SystemRecord {
        SystemRecord {
            n: self.n(),
            degrees: self.degrees(),
            polys: self
                .polys
                .iter()
                .map(|p| p.terms().map(|(e, c)| (e.to_vec(), c)).collect())
                .collect(),
        }
    }

    pub fn from_record(rec: &SystemRecord) -> Result<Self> {
        if rec.degrees.len() != rec.n || rec.polys.len() != rec.n {
            return Err(Error::Shape(format!(
                "record declares n = {} but lists {} degrees and {} polynomials",
                rec.n,
                rec.degrees.len(),
                rec.polys.len()
            )));
        }
        let mut polys = Vec::with_capacity(rec.n);
        for (terms, &d) in rec.polys.iter().zip(&rec.degrees) {
            if d == 0 {
                return Err(Error::InvalidDegrees("degrees must be >= 1".into()));
            }
            let mut p = HomogeneousPoly::zeros(d, rec.n + 1)?;
            let mut seen = vec![false; p.basis.len()];
            for (exps, c) in terms {
                if !c.is_finite() {
                    return Err(Error::Serde("non-finite coefficient".into()));
                }
                let idx = p.basis.index_of(exps).ok_or_else(|| {
                    Error::Serde(format!("monomial {exps:?} does not have degree {d}"))
                })?;
                if seen[idx] {
                    return Err(Error::Serde(format!("duplicate monomial {exps:?}")));
                }
                seen[idx] = true;
                p.coeffs[idx] = *c;
            }
            polys.push(p);
        }
        PolySystem::new(polys)
    }

    /// One JSON object on a single line. Coefficients use shortest
    /// round-trip decimal, so parsing reproduces every bit.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("finite coefficients serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rec: SystemRecord = serde_json::from_str(s)?;
        Self::from_record(&rec)
    }
}

/// Serialized form of a [`PolySystem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRecord {
    pub n: usize,
    pub degrees: Vec<u32>,
    pub polys: Vec<Vec<(Vec<u32>, f64)>>,
}

pub fn system_norms(f: &PolySystem) -> SystemNorms {
    let mut max_weyl: f64 = 0.0;
    let mut sq = 0.0;
    for p in f.polys() {
        let w2 = p.weyl_norm_sq();
        sq += w2;
        max_weyl = max_weyl.max(w2.sqrt());
    }
    SystemNorms {
        max_weyl,
        l2_weyl: sq.sqrt(),
    }
}

/// Reads a JSONL stream of systems, skipping blank lines.
pub fn read_jsonl(text: &str) -> Result<Vec<PolySystem>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(PolySystem::from_json)
        .collect()
}

pub fn write_jsonl(systems: &[PolySystem]) -> String {
    let mut out = String::new();
    for s in systems {
        out.push_str(&s.to_json_line());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(d: u32, nv: usize, terms: &[(&[u32], f64)]) -> HomogeneousPoly {
        let owned: Vec<(Vec<u32>, f64)> = terms.iter().map(|(e, c)| (e.to_vec(), *c)).collect();
        HomogeneousPoly::from_terms(d, nv, &owned).unwrap()
    }

    #[test]
    fn multinomial_examples() {
        assert_eq!(multinomial(2, &MultiIndex::new(vec![1, 1])).unwrap(), 2);
        assert_eq!(multinomial(3, &MultiIndex::new(vec![3, 0])).unwrap(), 1);
        assert_eq!(multinomial(3, &MultiIndex::new(vec![1, 2])).unwrap(), 3);
        assert_eq!(multinomial(6, &MultiIndex::new(vec![1, 2, 3])).unwrap(), 60);
    }

    #[test]
    fn multinomial_rejects_wrong_degree_and_overflow() {
        assert!(matches!(
            multinomial(3, &MultiIndex::new(vec![1, 1])),
            Err(Error::DegreeMismatch { .. })
        ));
        // 70! / (35! 35!) > 2^64
        let j = MultiIndex::new(vec![35, 35]);
        assert_eq!(multinomial(70, &j), Err(Error::Overflow(70)));
        let j = MultiIndex::new(vec![30, 30]);
        assert_eq!(multinomial(60, &j).unwrap(), 118264581564861424);
    }

    #[test]
    fn basis_order_and_rank() {
        let b = MonomialBasis::new(2, 3).unwrap();
        let listed: Vec<Vec<u32>> = b.iter().map(|e| e.to_vec()).collect();
        assert_eq!(
            listed,
            vec![
                vec![2, 0, 0],
                vec![1, 1, 0],
                vec![1, 0, 1],
                vec![0, 2, 0],
                vec![0, 1, 1],
                vec![0, 0, 2]
            ]
        );
        for (i, e) in b.iter().enumerate() {
            assert_eq!(b.index_of(e), Some(i));
        }
        let big = MonomialBasis::new(4, 5).unwrap();
        assert_eq!(big.len(), binomial(8, 4).unwrap() as usize);
        for (i, e) in big.iter().enumerate() {
            assert_eq!(big.index_of(e), Some(i));
        }
        assert_eq!(big.index_of(&[1, 1, 1, 1, 1]), None);
    }

    #[test]
    fn eval_examples() {
        let f = poly(3, 2, &[(&[2, 1], 1.0)]);
        assert_eq!(f.eval(&[1.0, 2.0]).unwrap(), 2.0);
        let g = poly(2, 2, &[(&[2, 0], 1.0)]);
        assert_eq!(g.eval(&[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(f.eval(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(
            f.eval(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn gradient_and_hessian_examples() {
        let f = poly(2, 2, &[(&[1, 1], 1.0)]);
        assert_eq!(f.gradient(&[1.0, 0.0]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(f.hessian(&[0.3, -0.7]).unwrap(), vec![0.0, 1.0, 1.0, 0.0]);
        let g = poly(2, 3, &[(&[2, 0, 0], 1.0)]);
        assert_eq!(g.gradient(&[2.0, 5.0, -1.0]).unwrap(), vec![4.0, 0.0, 0.0]);
        let h = poly(2, 2, &[(&[2, 0], 1.0)]);
        assert_eq!(h.hessian(&[0.1, 0.2]).unwrap(), vec![2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn weyl_norm_examples() {
        let f = poly(2, 2, &[(&[2, 0], 3.0)]);
        assert!((f.weyl_norm() - 3.0).abs() < 1e-15);
        let g = poly(2, 2, &[(&[1, 1], 1.0)]);
        assert!((g.weyl_norm() - 0.5f64.sqrt()).abs() < 1e-15);
        let h = poly(2, 2, &[(&[2, 0], 1.0), (&[0, 2], 1.0)]);
        assert!((h.weyl_norm() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn system_norm_examples() {
        let f = PolySystem::new(vec![
            poly(2, 3, &[(&[1, 1, 0], 1.0)]),
            poly(2, 3, &[(&[1, 0, 1], 1.0)]),
        ])
        .unwrap();
        let nrm = f.norms();
        assert!((nrm.max_weyl - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((nrm.l2_weyl - 1.0).abs() < 1e-15);
        let single = PolySystem::new(vec![poly(2, 2, &[(&[2, 0], 3.0)])]).unwrap();
        let nrm = single.norms();
        assert!((nrm.max_weyl - 3.0).abs() < 1e-15 && (nrm.l2_weyl - 3.0).abs() < 1e-15);
        let scaled = f.scaled(2.5).norms();
        assert!((scaled.max_weyl - 2.5 * 0.5f64.sqrt()).abs() < 1e-14);
        assert!((scaled.l2_weyl - 2.5).abs() < 1e-14);
    }

    #[test]
    fn model_constant_examples() {
        let c = model_constants(&[2, 2, 2]).unwrap();
        assert_eq!(c, ModelConstants { max_degree: 2, bezout: 8, dim: 30 });
        assert_eq!(model_constants(&[2, 3, 4]).unwrap().bezout, 24);
        // N <= n^(D + 2)
        assert!(c.dim <= 3u64.pow(c.max_degree + 2));
        assert!(model_constants(&[]).is_err());
        assert!(model_constants(&[2, 0]).is_err());
    }

    #[test]
    fn system_shape_rules() {
        let p = poly(2, 3, &[(&[1, 1, 0], 1.0)]);
        assert!(PolySystem::new(vec![p.clone()]).is_err());
        let lin = poly(1, 3, &[(&[0, 0, 1], 1.0)]);
        let s = PolySystem::new(vec![p, lin]).unwrap();
        assert!(s.has_linear_component());
        assert_eq!(s.degrees(), vec![2, 1]);
    }

    #[test]
    fn partial_and_third_contract() {
        // f = x0^2 x1 + 2 x1^3
        let f = poly(3, 2, &[(&[2, 1], 1.0), (&[0, 3], 2.0)]);
        let x = [0.4, -1.3];
        assert!((f.partial(&[0, 0, 1], &x).unwrap() - 2.0).abs() < 1e-14);
        assert!((f.partial(&[1, 1, 1], &x).unwrap() - 12.0).abs() < 1e-14);
        assert_eq!(f.partial(&[0, 0, 0], &x).unwrap(), 0.0);
        let t = f.third_contract(&x, &[1.0, 0.5]).unwrap();
        // ∂_00 (y·∇f) = 2 y1, ∂_01 = 2 y0, ∂_11 = 12 y1
        assert_eq!(t, vec![1.0, 2.0, 2.0, 6.0]);
    }

    #[test]
    fn compose_linear_permutation_and_scaling() {
        // f = x0 x1^2, A swaps coordinates: f(Ax) = x1 x0^2
        let f = poly(3, 2, &[(&[1, 2], 1.0)]);
        let g = f.compose_linear(&[0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(g.coefficient(&MultiIndex::new(vec![2, 1])), Some(1.0));
        assert_eq!(g.coefficient(&MultiIndex::new(vec![1, 2])), Some(0.0));
        let h = f.compose_linear(&[2.0, 0.0, 0.0, 2.0]).unwrap();
        assert_eq!(h.coefficient(&MultiIndex::new(vec![1, 2])), Some(8.0));
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let f = PolySystem::new(vec![
            poly(2, 3, &[(&[1, 1, 0], 0.1 + 0.2), (&[0, 0, 2], -1e-300)]),
            poly(3, 3, &[(&[1, 1, 1], std::f64::consts::PI), (&[3, 0, 0], 5e-324)]),
        ])
        .unwrap();
        let line = f.to_json_line();
        let back = PolySystem::from_json(&line).unwrap();
        for (p, q) in f.polys().iter().zip(back.polys()) {
            for (a, b) in p.coeffs().iter().zip(q.coeffs()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        let many = write_jsonl(&[f.clone(), f.scaled(3.0)]);
        assert_eq!(read_jsonl(&many).unwrap().len(), 2);
    }

    #[test]
    fn json_rejects_malformed_records() {
        let bad_degree = r#"{"n":1,"degrees":[2],"polys":[[[[1,0],1.0]]]}"#;
        assert!(PolySystem::from_json(bad_degree).is_err());
        let dup = r#"{"n":1,"degrees":[2],"polys":[[[[1,1],1.0],[[1,1],2.0]]]}"#;
        assert!(PolySystem::from_json(dup).is_err());
        let shape = r#"{"n":2,"degrees":[2],"polys":[[]]}"#;
        assert!(PolySystem::from_json(shape).is_err());
    }
}
