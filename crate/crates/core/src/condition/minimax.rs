//! Local refinement for `min_x max_k φ_k(x)` on the unit sphere when every
//! piece `φ_k` has a gradient.
//!
//! Each step solves the quadratic model
//! `min_{d,t} t + ½ dᵀHd  s.t.  φ_k + ⟨g_k, d⟩ ≤ t`
//! in the tangent chart `d ↦ (x + Bd)/‖x + Bd‖`, with `H` a finite-difference
//! Hessian of the Lagrangian `Σ λ_k φ_k`. The dual of that model is a
//! concave quadratic over the simplex of multipliers, small enough to solve
//! exactly by enumerating supports. Near a kink where several pieces tie
//! this converges quadratically, which plain descent with line searches does
//! not.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::linalg::{dot, householder_tangent_basis};

/// A finite family of smooth functions on the sphere.
pub(crate) trait Pieces {
    fn count(&self) -> usize;

    /// Writes the values and ambient gradients (row-major, one row per
    /// piece). Returns false where some piece is not differentiable; the
    /// values must be filled in either case.
    fn eval(&mut self, x: &[f64], vals: &mut [f64], grads: &mut [f64]) -> bool;
}

/// Largest number of pieces for which the support enumeration is used.
const MAX_PIECES: usize = 12;
const FD_STEP: f64 = 1e-5;
const MAX_STEPS: usize = 40;

struct Chart {
    x: Vec<f64>,
    basis: Vec<f64>,
    n: usize,
}

impl Chart {
    fn at(x: &[f64]) -> Self {
        let nv = x.len();
        let n = nv - 1;
        let mut basis = vec![0.0; nv * n];
        householder_tangent_basis(x, &mut basis);
        Chart { x: x.to_vec(), basis, n }
    }

    fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n).map(move |k| self.basis[k * self.n + j])
    }

    /// Returns `R(d)` and `‖x + Bd‖`.
    fn point(&self, d: &[f64]) -> (Vec<f64>, f64) {
        let mut z = self.x.clone();
        for (j, dj) in d.iter().enumerate() {
            for (zk, bk) in z.iter_mut().zip(self.column(j)) {
                *zk += dj * bk;
            }
        }
        let rho = dot(&z, &z).sqrt();
        z.iter_mut().for_each(|v| *v /= rho);
        (z, rho)
    }

    /// Chart gradient of a function with ambient gradient `g` at `R(d)`.
    fn pull_back(&self, z: &[f64], rho: f64, g: &[f64], out: &mut [f64]) {
        let zg = dot(z, g);
        for (j, o) in out.iter_mut().enumerate() {
            let (bg, bz) = self
                .column(j)
                .zip(g.iter().zip(z))
                .fold((0.0, 0.0), |(a, b), (c, (gk, zk))| (a + c * gk, b + c * zk));
            *o = (bg - bz * zg) / rho;
        }
    }
}

struct Buffers {
    vals: Vec<f64>,
    grads: Vec<f64>,
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().fold(f64::NEG_INFINITY, |m, a| m.max(*a))
}

/// Gradient of `Σ λ_k φ_k ∘ R` at `d`, or None if some weighted piece is
/// not differentiable there.
fn lagrangian_gradient<P: Pieces>(
    p: &mut P,
    chart: &Chart,
    lambda: &[f64],
    d: &[f64],
    buf: &mut Buffers,
) -> Option<Vec<f64>> {
    let nv = chart.n + 1;
    let (z, rho) = chart.point(d);
    if !p.eval(&z, &mut buf.vals, &mut buf.grads) {
        return None;
    }
    let mut g = vec![0.0; nv];
    for (k, l) in lambda.iter().enumerate() {
        if *l != 0.0 {
            for (gi, a) in g.iter_mut().zip(&buf.grads[k * nv..(k + 1) * nv]) {
                *gi += l * a;
            }
        }
    }
    let mut out = vec![0.0; chart.n];
    chart.pull_back(&z, rho, &g, &mut out);
    Some(out)
}

/// Maximizes `φᵀλ − ½ λᵀQλ` over the probability simplex.
fn simplex_qp(phi: &[f64], q: &DMatrix<f64>) -> Option<Vec<f64>> {
    let m = phi.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << m) {
        let support: Vec<usize> = (0..m).filter(|k| mask & (1 << k) != 0).collect();
        let s = support.len();
        let mut kkt = DMatrix::zeros(s + 1, s + 1);
        let mut rhs = DVector::zeros(s + 1);
        for (a, &i) in support.iter().enumerate() {
            for (b, &j) in support.iter().enumerate() {
                kkt[(a, b)] = q[(i, j)];
            }
            kkt[(a, s)] = 1.0;
            kkt[(s, a)] = 1.0;
            rhs[a] = phi[i];
        }
        rhs[s] = 1.0;
        let Some(sol) = kkt.lu().solve(&rhs) else {
            continue;
        };
        if (0..s).any(|a| !(sol[a] >= -1e-12)) {
            continue;
        }
        let mut lambda = vec![0.0; m];
        for (a, &i) in support.iter().enumerate() {
            lambda[i] = sol[a].max(0.0);
        }
        let total: f64 = lambda.iter().sum();
        lambda.iter_mut().for_each(|l| *l /= total);
        let ql: Vec<f64> = (0..m).map(|i| (0..m).map(|j| q[(i, j)] * lambda[j]).sum()).collect();
        let value = dot(phi, &lambda) - 0.5 * dot(&lambda, &ql);
        if best.as_ref().is_none_or(|(v, _)| value > *v) {
            best = Some((value, lambda));
        }
    }
    best.map(|(_, l)| l)
}

/// Refines `x0` and returns the final point with `max_k φ_k` there, or None
/// if the pieces were not differentiable at `x0` or nothing improved.
pub(crate) fn polish<P: Pieces>(p: &mut P, x0: &[f64]) -> Option<(Vec<f64>, f64)> {
    let m = p.count();
    let nv = x0.len();
    let n = nv - 1;
    if m > MAX_PIECES || n == 0 {
        return None;
    }
    let mut buf = Buffers {
        vals: vec![0.0; m],
        grads: vec![0.0; m * nv],
    };
    let mut x = x0.to_vec();
    if !p.eval(&x, &mut buf.vals, &mut buf.grads) {
        return None;
    }
    let start_value = max_of(&buf.vals);
    let mut r = start_value;
    let mut lambda: Vec<f64> = buf
        .vals
        .iter()
        .map(|v| if *v >= r - 1e-3 * r.abs() { 1.0 } else { 0.0 })
        .collect();
    let total: f64 = lambda.iter().sum();
    lambda.iter_mut().for_each(|l| *l /= total);

    for _ in 0..MAX_STEPS {
        let chart = Chart::at(&x);
        if !p.eval(&x, &mut buf.vals, &mut buf.grads) {
            break;
        }
        let phi = buf.vals.clone();
        let mut g = DMatrix::zeros(m, n);
        for k in 0..m {
            let gk = &buf.grads[k * nv..(k + 1) * nv];
            for j in 0..n {
                g[(k, j)] = chart.column(j).zip(gk).map(|(b, a)| b * a).sum::<f64>();
            }
        }
        let mut h = DMatrix::zeros(n, n);
        let mut ok = true;
        for j in 0..n {
            let mut d = vec![0.0; n];
            d[j] = FD_STEP;
            let plus = lagrangian_gradient(p, &chart, &lambda, &d, &mut buf);
            d[j] = -FD_STEP;
            let minus = lagrangian_gradient(p, &chart, &lambda, &d, &mut buf);
            let (Some(a), Some(b)) = (plus, minus) else {
                ok = false;
                break;
            };
            for i in 0..n {
                h[(i, j)] = (a[i] - b[i]) / (2.0 * FD_STEP);
            }
        }
        if !ok {
            break;
        }
        let h = (&h + h.transpose()) * 0.5;
        let eig = SymmetricEigen::new(h);
        let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let floor = (1e-8 * top).max(1e-12);
        let inv_vals = eig.eigenvalues.map(|v| 1.0 / v.abs().max(floor));
        let hinv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
        let q = &g * &hinv * g.transpose();
        let Some(new_lambda) = simplex_qp(&phi, &q) else {
            break;
        };
        let dvec = -(&hinv * g.transpose() * DVector::from_vec(new_lambda.clone()));
        let model = (0..m)
            .map(|k| phi[k] + (0..n).map(|j| g[(k, j)] * dvec[j]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        let pred = r - model;
        if !(pred > 0.0) {
            break;
        }
        let d: Vec<f64> = dvec.iter().copied().collect();
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha > 1e-10 {
            let step: Vec<f64> = d.iter().map(|v| alpha * v).collect();
            let (z, _) = chart.point(&step);
            // Only the values matter here, and they are filled regardless.
            let _ = p.eval(&z, &mut buf.vals, &mut buf.grads);
            let rz = max_of(&buf.vals);
            if rz <= r - 1e-4 * alpha * pred {
                accepted = Some((z, rz, alpha));
                break;
            }
            alpha *= 0.5;
        }
        let Some((z, rz, alpha)) = accepted else {
            break;
        };
        let moved = alpha * d.iter().map(|v| v * v).sum::<f64>().sqrt();
        x = z;
        r = rz;
        lambda = new_lambda;
        if moved < 1e-14 {
            break;
        }
    }
    (r < start_value).then_some((x, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `max_i |x_i|` on the sphere, minimized at the cube diagonals.
    struct Abs(usize);

    impl Pieces for Abs {
        fn count(&self) -> usize {
            self.0
        }
        fn eval(&mut self, x: &[f64], vals: &mut [f64], grads: &mut [f64]) -> bool {
            let m = self.0;
            grads.iter_mut().for_each(|g| *g = 0.0);
            for k in 0..m {
                vals[k] = x[k].abs();
                grads[k * m + k] = x[k].signum();
            }
            true
        }
    }

    #[test]
    fn reaches_a_vertex_to_rounding() {
        let x0 = [0.6, -0.5, 0.62];
        let n0 = dot(&x0, &x0).sqrt();
        let x0: Vec<f64> = x0.iter().map(|v| v / n0).collect();
        let (_, r) = polish(&mut Abs(3), &x0).unwrap();
        assert!((r - 1.0 / 3f64.sqrt()).abs() < 1e-14, "{r}");
    }

    #[test]
    fn simplex_qp_matches_closed_form() {
        // Two pieces, Q = I: optimum λ = ((1 + φ0 − φ1)/2, (1 − φ0 + φ1)/2).
        let q = DMatrix::identity(2, 2);
        let l = simplex_qp(&[0.3, 0.1], &q).unwrap();
        assert!((l[0] - 0.6).abs() < 1e-14 && (l[1] - 0.4).abs() < 1e-14);
        let l = simplex_qp(&[3.0, 0.0], &q).unwrap();
        assert_eq!(l, vec![1.0, 0.0]);
    }
}
