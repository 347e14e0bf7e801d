//! Small dense kernels used in the optimizer's inner loop. Matrices are
//! row-major slices; nothing here allocates.

/// One-sided (Hestenes) Jacobi SVD of an `m x n` matrix with `m >= n`.
///
/// On return the columns of `a` hold `σ_j u_j`, `v` holds the right singular
/// vectors as columns (row-major `n x n`) and `sigma` the singular values in
/// column order (unsorted). Accurate to high relative precision for the
/// small, well-scaled matrices we feed it.
pub fn jacobi_svd(a: &mut [f64], m: usize, n: usize, v: &mut [f64], sigma: &mut [f64]) {
    debug_assert!(m >= n && a.len() == m * n && v.len() == n * n && sigma.len() == n);
    v.iter_mut().for_each(|x| *x = 0.0);
    for j in 0..n {
        v[j * n + j] = 1.0;
    }
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    let ap = a[i * n + p];
                    let aq = a[i * n + q];
                    alpha += ap * ap;
                    beta += aq * aq;
                    gamma += ap * aq;
                }
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let ap = a[i * n + p];
                    let aq = a[i * n + q];
                    a[i * n + p] = c * ap - s * aq;
                    a[i * n + q] = s * ap + c * aq;
                }
                for i in 0..n {
                    let vp = v[i * n + p];
                    let vq = v[i * n + q];
                    v[i * n + p] = c * vp - s * vq;
                    v[i * n + q] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    for (j, s) in sigma.iter_mut().enumerate() {
        *s = (0..m).map(|i| a[i * n + j] * a[i * n + j]).sum::<f64>().sqrt();
    }
}

/// Indices of the smallest and second smallest entries.
pub fn two_smallest(values: &[f64]) -> (usize, Option<usize>) {
    let mut best = 0;
    for (i, &s) in values.iter().enumerate() {
        if s < values[best] {
            best = i;
        }
    }
    let second = (0..values.len())
        .filter(|&i| i != best)
        .min_by(|&i, &j| values[i].total_cmp(&values[j]));
    (best, second)
}

/// Orthonormal basis of `x⊥` for a unit vector `x` in `R^{n+1}`, written as
/// the row-major `(n+1) x n` matrix of columns `1..=n` of the Householder
/// reflector sending `x` to `∓e_0`. Deterministic in `x`.
pub fn householder_tangent_basis(x: &[f64], out: &mut [f64]) {
    let nv = x.len();
    let n = nv - 1;
    debug_assert_eq!(out.len(), nv * n);
    let s = if x[0] >= 0.0 { 1.0 } else { -1.0 };
    let v0 = x[0] + s;
    let vv = v0 * v0 + x[1..].iter().map(|t| t * t).sum::<f64>();
    let vi = |i: usize| if i == 0 { v0 } else { x[i] };
    for i in 0..nv {
        for j in 1..nv {
            let id = if i == j { 1.0 } else { 0.0 };
            out[i * n + (j - 1)] = id - 2.0 * vi(i) * vi(j) / vv;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `v ← v − ⟨v, x⟩ x` for unit `x`.
pub fn project_out(v: &mut [f64], x: &[f64]) {
    let c = dot(v, x);
    for (vi, xi) in v.iter_mut().zip(x) {
        *vi -= c * xi;
    }
}
