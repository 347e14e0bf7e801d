//! Geometry of the Stiefel manifold `V = {(x, y) : ‖x‖ = ‖y‖ = 1, ⟨x, y⟩ = 0}`
//! in `R^{n+1} × R^{n+1}`: an explicit chart around `(e_0, e_1)`, its first
//! and second derivatives at the origin, the Hessian of `L ∘ ψ` there, and
//! the total volume.
//!
//! Chart coordinates are `(σ_2..σ_n, τ_2..τ_n, θ)`; the flat ordering used
//! for vectors and matrices is σ first, then τ, then θ.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::condition::StiefelPoint;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::poly::PolySystem;
use crate::random::standard_normal;

/// A pair of vectors in `R^{n+1}`, e.g. a tangent or curvature vector of V.
pub type VecPair = (Vec<f64>, Vec<f64>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartCoords {
    pub sigma: Vec<f64>,
    pub tau: Vec<f64>,
    pub theta: f64,
}

impl ChartCoords {
    pub fn zero(n: usize) -> Self {
        ChartCoords {
            sigma: vec![0.0; n - 1],
            tau: vec![0.0; n - 1],
            theta: 0.0,
        }
    }

    /// Reads `2n − 1` flat coordinates.
    pub fn from_flat(n: usize, w: &[f64]) -> Result<Self> {
        if n == 0 || w.len() != 2 * n - 1 {
            return Err(Error::DimensionMismatch {
                expected: 2 * n.max(1) - 1,
                got: w.len(),
            });
        }
        Ok(ChartCoords {
            sigma: w[..n - 1].to_vec(),
            tau: w[n - 1..2 * n - 2].to_vec(),
            theta: w[2 * n - 2],
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut w = self.sigma.clone();
        w.extend_from_slice(&self.tau);
        w.push(self.theta);
        w
    }

    pub fn n(&self) -> usize {
        self.sigma.len() + 1
    }
}

/// The chart `ψ(σ, τ, θ) = (C/‖C‖, D/‖D‖)` with
/// `σ_1 = √(1 − Σσ_j²)`, `τ_1 = √(1 − Στ_j²)`, `a = −Σσ_jτ_j / (σ_1 + τ_1)`,
/// `A = (σ_1 e_0 + Σσ_j e_j + a e_1)/√(1+a²)`,
/// `B = (τ_1 e_1 + Στ_j e_j + a e_0)/√(1+a²)`,
/// `C = cos(θ/√2) A + sin(θ/√2) σ_1 e_1`, `D = cos(θ/√2) B − sin(θ/√2) τ_1 e_0`.
pub fn chart_vectors(c: &ChartCoords) -> Result<VecPair> {
    let n = c.n();
    if c.tau.len() != n - 1 {
        return Err(Error::DimensionMismatch {
            expected: n - 1,
            got: c.tau.len(),
        });
    }
    let ss: f64 = c.sigma.iter().map(|s| s * s).sum();
    let tt: f64 = c.tau.iter().map(|t| t * t).sum();
    if !(ss < 1.0 && tt < 1.0) || !c.theta.is_finite() {
        return Err(Error::OutOfDomain);
    }
    let s1 = (1.0 - ss).sqrt();
    let t1 = (1.0 - tt).sqrt();
    let a = -dot(&c.sigma, &c.tau) / (s1 + t1);
    let nrm = (1.0 + a * a).sqrt();
    let nv = n + 1;
    let mut av = vec![0.0; nv];
    let mut bv = vec![0.0; nv];
    av[0] = s1;
    if nv > 1 {
        av[1] = a;
        bv[1] = t1;
    }
    bv[0] = a;
    for j in 2..nv {
        av[j] = c.sigma[j - 2];
        bv[j] = c.tau[j - 2];
    }
    let (sn, cs) = (c.theta / std::f64::consts::SQRT_2).sin_cos();
    let mut cv: Vec<f64> = av.iter().map(|v| cs * v / nrm).collect();
    let mut dv: Vec<f64> = bv.iter().map(|v| cs * v / nrm).collect();
    cv[1] += sn * s1;
    dv[0] -= sn * t1;
    Ok((cv, dv))
}

pub fn chart_psi(c: &ChartCoords) -> Result<StiefelPoint> {
    let (cv, dv) = chart_vectors(c)?;
    let (nc, nd) = (norm(&cv), norm(&dv));
    if !(nc > 0.0 && nd > 0.0) {
        return Err(Error::OutOfDomain);
    }
    let x: Vec<f64> = cv.iter().map(|v| v / nc).collect();
    let mut y: Vec<f64> = dv.iter().map(|v| v / nd).collect();
    // ⟨C, D⟩ vanishes identically; remove the rounding residue so the
    // result passes the manifold tolerance.
    let r = dot(&x, &y);
    y.iter_mut().zip(&x).for_each(|(yi, xi)| *yi -= r * xi);
    let ny = norm(&y);
    y.iter_mut().for_each(|v| *v /= ny);
    StiefelPoint::from_vecs(x, y)
}

fn unit(nv: usize, k: usize, scale: f64) -> Vec<f64> {
    let mut v = vec![0.0; nv];
    v[k] = scale;
    v
}

/// `∂ψ/∂w_k(0)` for the `2n − 1` chart coordinates: `(e_j, 0)`, `(0, e_j)`
/// and `(e_1, −e_0)/√2`. They form an orthonormal basis of `T_{(e_0,e_1)} V`.
pub fn chart_first_derivs(n: usize) -> Vec<VecPair> {
    let nv = n + 1;
    let mut out = Vec::with_capacity(2 * n - 1);
    for j in 2..nv {
        out.push((unit(nv, j, 1.0), vec![0.0; nv]));
    }
    for j in 2..nv {
        out.push((vec![0.0; nv], unit(nv, j, 1.0)));
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    out.push((unit(nv, 1, h), unit(nv, 0, -h)));
    out
}

/// `∂²ψ/∂w_k∂w_l(0)` as a `(2n−1) × (2n−1)` table.
pub fn chart_second_derivs(n: usize) -> Vec<Vec<VecPair>> {
    let nv = n + 1;
    let m = 2 * n - 1;
    let zero = (vec![0.0; nv], vec![0.0; nv]);
    let mut out = vec![vec![zero; m]; m];
    let theta = m - 1;
    for j in 0..n - 1 {
        let (s, t) = (j, n - 1 + j);
        out[s][s] = (unit(nv, 0, -1.0), vec![0.0; nv]);
        out[t][t] = (vec![0.0; nv], unit(nv, 1, -1.0));
        out[s][t] = (unit(nv, 1, -0.5), unit(nv, 0, -0.5));
        out[t][s] = out[s][t].clone();
    }
    out[theta][theta] = (unit(nv, 0, -0.5), unit(nv, 1, -0.5));
    out
}

/// Free first and second derivatives of
/// `L(x, y) = Σ (1/d_i) ⟨∇f_i(x), y⟩² + Σ f_i(x)²` on `R^{n+1} × R^{n+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeDerivatives {
    pub value: f64,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    /// Row-major `(n+1) x (n+1)` blocks.
    pub dxx: Vec<f64>,
    pub dxy: Vec<f64>,
    pub dyy: Vec<f64>,
}

pub fn l_free_derivatives(f: &PolySystem, x: &[f64], y: &[f64]) -> Result<FreeDerivatives> {
    let nv = f.num_vars();
    if x.len() != nv || y.len() != nv {
        return Err(Error::DimensionMismatch {
            expected: nv,
            got: x.len().max(y.len()),
        });
    }
    let mut out = FreeDerivatives {
        value: 0.0,
        dx: vec![0.0; nv],
        dy: vec![0.0; nv],
        dxx: vec![0.0; nv * nv],
        dxy: vec![0.0; nv * nv],
        dyy: vec![0.0; nv * nv],
    };
    for p in f.polys() {
        let w = 1.0 / p.degree() as f64;
        let v = p.eval(x)?;
        let g = p.gradient(x)?;
        let h = p.hessian(x)?;
        let t = p.third_contract(x, y)?;
        let gy = dot(&g, y);
        let hy: Vec<f64> = (0..nv).map(|k| (0..nv).map(|l| h[k * nv + l] * y[l]).sum()).collect();
        out.value += w * gy * gy + v * v;
        for k in 0..nv {
            out.dx[k] += 2.0 * w * gy * hy[k] + 2.0 * v * g[k];
            out.dy[k] += 2.0 * w * gy * g[k];
            for m in 0..nv {
                out.dxx[k * nv + m] += 2.0 * w * (hy[k] * hy[m] + gy * t[k * nv + m])
                    + 2.0 * (g[k] * g[m] + v * h[k * nv + m]);
                out.dxy[k * nv + m] += 2.0 * w * (g[m] * hy[k] + gy * h[k * nv + m]);
                out.dyy[k * nv + m] += 2.0 * w * g[k] * g[m];
            }
        }
    }
    Ok(out)
}

/// Blocks of the Hessian of `L ∘ ψ` at the origin, indices `j, k` running
/// over the chart coordinates `2..=n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianBlocks {
    pub n: usize,
    /// Row-major `(n−1) x (n−1)`.
    pub m_ss: Vec<f64>,
    pub m_st: Vec<f64>,
    pub m_tt: Vec<f64>,
    pub m_s_theta: Vec<f64>,
    pub m_t_theta: Vec<f64>,
    pub m_theta_theta: f64,
}

impl HessianBlocks {
    /// The full symmetric `(2n−1) x (2n−1)` matrix, row-major.
    pub fn assemble(&self) -> Vec<f64> {
        let n = self.n;
        let k = n - 1;
        let m = 2 * n - 1;
        let mut out = vec![0.0; m * m];
        for j in 0..k {
            for l in 0..k {
                out[j * m + l] = self.m_ss[j * k + l];
                out[j * m + k + l] = self.m_st[j * k + l];
                out[(k + l) * m + j] = self.m_st[j * k + l];
                out[(k + j) * m + k + l] = self.m_tt[j * k + l];
            }
            out[j * m + m - 1] = self.m_s_theta[j];
            out[(m - 1) * m + j] = self.m_s_theta[j];
            out[(k + j) * m + m - 1] = self.m_t_theta[j];
            out[(m - 1) * m + k + j] = self.m_t_theta[j];
        }
        out[m * m - 1] = self.m_theta_theta;
        out
    }
}

/// Hessian of `L ∘ ψ` at 0, assembled from the free derivatives of `L` at
/// `(e_0, e_1)` and the chart's first and second derivatives.
pub fn hessian_in_chart(f: &PolySystem) -> Result<HessianBlocks> {
    let n = f.n();
    let nv = n + 1;
    if n < 1 {
        return Err(Error::Shape("need at least one equation".into()));
    }
    let e0 = unit(nv, 0, 1.0);
    let e1 = unit(nv, 1, 1.0);
    let fd = l_free_derivatives(f, &e0, &e1)?;
    let xx = |a: usize, b: usize| fd.dxx[a * nv + b];
    let xy = |a: usize, b: usize| fd.dxy[a * nv + b];
    let yy = |a: usize, b: usize| fd.dyy[a * nv + b];
    let k = n - 1;
    let mut blocks = HessianBlocks {
        n,
        m_ss: vec![0.0; k * k],
        m_st: vec![0.0; k * k],
        m_tt: vec![0.0; k * k],
        m_s_theta: vec![0.0; k],
        m_t_theta: vec![0.0; k],
        m_theta_theta: 0.0,
    };
    let r2 = std::f64::consts::SQRT_2;
    for a in 0..k {
        let j = a + 2;
        for b in 0..k {
            let l = b + 2;
            let diag = a == b;
            blocks.m_ss[a * k + b] = xx(j, l) - if diag { fd.dx[0] } else { 0.0 };
            blocks.m_st[a * k + b] = xy(j, l) - if diag { 0.5 * (fd.dx[1] + fd.dy[0]) } else { 0.0 };
            blocks.m_tt[a * k + b] = yy(j, l) - if diag { fd.dy[1] } else { 0.0 };
        }
        blocks.m_s_theta[a] = (xx(j, 1) - xy(j, 0)) / r2;
        blocks.m_t_theta[a] = (xy(1, j) - yy(j, 0)) / r2;
    }
    blocks.m_theta_theta = 0.5 * (xx(1, 1) - 2.0 * xy(1, 0) + yy(0, 0) - fd.dx[0] - fd.dy[1]);
    Ok(blocks)
}

/// Area of the unit sphere `S^k ⊂ R^{k+1}`: `2π^{(k+1)/2} / Γ((k+1)/2)`.
pub fn sphere_area(k: usize) -> f64 {
    2.0 * std::f64::consts::PI.powf((k as f64 + 1.0) / 2.0) / gamma_half(k + 1)
}

/// `Γ(m/2)` for a positive integer `m`, by the recursion from `Γ(1/2)` or
/// `Γ(1)`.
pub fn gamma_half(m: usize) -> f64 {
    assert!(m >= 1, "Γ(m/2) needs m >= 1");
    let (mut x, mut g) = if m % 2 == 0 {
        (1.0, 1.0)
    } else {
        (0.5, std::f64::consts::PI.sqrt())
    };
    while x < m as f64 / 2.0 {
        g *= x;
        x += 1.0;
    }
    g
}

/// Total volume of V with the metric induced from `R^{2(n+1)}`:
/// `√2 σ_{n−1} σ_n`.
pub fn stiefel_volume(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Shape("the manifold needs n >= 1".into()));
    }
    Ok(std::f64::consts::SQRT_2 * sphere_area(n - 1) * sphere_area(n))
}

/// Distance in `R^{2(n+1)}` from the pair `(a, b)` to V: with `s_1, s_2` the
/// singular values of the matrix `[a b]`, the nearest orthonormal pair is its
/// polar factor and the distance is `√((s_1 − 1)² + (s_2 − 1)²)`.
pub fn distance_to_stiefel(a: &[f64], b: &[f64]) -> f64 {
    let (p, q, r) = (dot(a, a), dot(b, b), dot(a, b));
    let mean = 0.5 * (p + q);
    let rad = (0.25 * (p - q) * (p - q) + r * r).sqrt();
    let s1 = (mean + rad).max(0.0).sqrt();
    let s2 = (mean - rad).max(0.0).sqrt();
    ((s1 - 1.0).powi(2) + (s2 - 1.0).powi(2)).sqrt()
}

/// Radii `(r₋, r₊)` between which `r·(a, b)/‖(a, b)‖` lies within `eps` of
/// V, or `None` if that ray misses the tube.
pub fn radial_tube_interval(a: &[f64], b: &[f64], eps: f64) -> Option<(f64, f64)> {
    let nrm2 = dot(a, a) + dot(b, b);
    let (p, q, r) = (dot(a, a) / nrm2, dot(b, b) / nrm2, dot(a, b) / nrm2);
    // (t₁ + t₂)² for the singular values of the unit-norm pair; along the ray
    // the condition is r² − 2r(t₁ + t₂) + 2 − ε² < 0.
    let sum_sq = 1.0 + 2.0 * (p * q - r * r).max(0.0).sqrt();
    let disc = sum_sq - 2.0 + eps * eps;
    if disc <= 0.0 {
        return None;
    }
    let (mid, half) = (sum_sq.sqrt(), disc.sqrt());
    Some((mid - half, mid + half))
}

/// Monte Carlo volume of V from tube volumes. Singular values scale with
/// the radius, so along a uniform random direction `θ` of `R^{2(n+1)}` the
/// set `{r : dist(rθ, V) < ε}` is an interval `(r₋, r₊)` found in closed
/// form, and the ε-tube volume is `σ_{D−1} E[(r₊^D − r₋^D)/D]`. Dividing by
/// the volume of a 3-ball (V has codimension 3) gives V's volume up to an
/// `O(ε²)` curvature term, removed by Richardson extrapolation between `ε`
/// and `ε/2` on the same directions. Returns `(estimate, standard error)`.
pub fn stiefel_volume_mc<R: Rng + ?Sized>(n: usize, samples: usize, eps: f64, rng: &mut R) -> (f64, f64) {
    let nv = n + 1;
    let dim = 2 * nv;
    let area = sphere_area(dim - 1);
    let ball = |r: f64| 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
    let mut a = vec![0.0; nv];
    let mut b = vec![0.0; nv];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        for v in a.iter_mut().chain(b.iter_mut()) {
            *v = standard_normal(rng);
        }
        let tube = |e: f64| match radial_tube_interval(&a, &b, e) {
            Some((lo, hi)) => (hi.powi(dim as i32) - lo.powi(dim as i32)) / dim as f64,
            None => 0.0,
        };
        let z = area * (4.0 * tube(eps / 2.0) / ball(eps / 2.0) - tube(eps) / ball(eps)) / 3.0;
        sum += z;
        sum_sq += z * z;
    }
    let m = samples as f64;
    let mean = sum / m;
    let var = (sum_sq / m - mean * mean).max(0.0);
    (mean, (var / m).sqrt())
}

/// Second-difference Hessian of a function of `dim` variables at 0.
pub fn fd_hessian<F: FnMut(&[f64]) -> f64>(mut fun: F, dim: usize, h: f64) -> Vec<f64> {
    let mut out = vec![0.0; dim * dim];
    let mut w = vec![0.0; dim];
    let f0 = fun(&w);
    for i in 0..dim {
        w[i] = h;
        let fp = fun(&w);
        w[i] = -h;
        let fm = fun(&w);
        w[i] = 0.0;
        out[i * dim + i] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in 0..i {
            let mut quad = 0.0;
            for (si, sj, sign) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                w[i] = si * h;
                w[j] = sj * h;
                quad += sign * fun(&w);
            }
            w[i] = 0.0;
            w[j] = 0.0;
            let v = quad / (4.0 * h * h);
            out[i * dim + j] = v;
            out[j * dim + i] = v;
        }
    }
    out
}

/// Finite-difference Hessian of `L ∘ ψ` at the origin. Steps `1e-3, 1e-4,
/// 1e-5` are tried and the one whose result changes least against its
/// neighbour in the schedule is kept (the plateau between truncation and
/// rounding error).
pub fn fd_hessian_in_chart(f: &PolySystem) -> Result<Vec<f64>> {
    let n = f.n();
    let dim = 2 * n - 1;
    let mut lpsi = |w: &[f64]| -> f64 {
        let c = ChartCoords::from_flat(n, w).expect("flat chart coordinates");
        let p = chart_psi(&c).expect("small steps stay in the chart domain");
        crate::condition::l_field(f, &p).expect("matching dimensions")
    };
    let steps = [1e-3, 1e-4, 1e-5];
    let hs: Vec<Vec<f64>> = steps.iter().map(|&h| fd_hessian(&mut lpsi, dim, h)).collect();
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let d01 = diff(&hs[0], &hs[1]);
    let d12 = diff(&hs[1], &hs[2]);
    Ok(if d01 <= d12 { hs[1].clone() } else { hs[2].clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_at_origin() {
        for n in 1..5 {
            let p = chart_psi(&ChartCoords::zero(n)).unwrap();
            assert_eq!(p.x().coords(), unit(n + 1, 0, 1.0).as_slice());
            assert_eq!(p.y().coords(), unit(n + 1, 1, 1.0).as_slice());
        }
    }

    #[test]
    fn chart_domain_errors() {
        let c = ChartCoords {
            sigma: vec![1.0, 0.1],
            tau: vec![0.0, 0.0],
            theta: 0.0,
        };
        assert_eq!(chart_psi(&c), Err(Error::OutOfDomain));
        assert!(ChartCoords::from_flat(3, &[0.0; 4]).is_err());
    }

    #[test]
    fn volume_examples() {
        assert!((sphere_area(2) - 4.0 * std::f64::consts::PI).abs() < 1e-13);
        assert!((sphere_area(0) - 2.0).abs() < 1e-15);
        assert!((stiefel_volume(1).unwrap() - 17.7715).abs() < 1e-4);
        let pi3 = std::f64::consts::PI.powi(3);
        assert!((stiefel_volume(3).unwrap() - 8.0 * 2f64.sqrt() * pi3).abs() < 1e-10);
        assert!((gamma_half(5) - 0.75 * std::f64::consts::PI.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn distance_to_manifold() {
        assert!(distance_to_stiefel(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]) < 1e-15);
        assert!((distance_to_stiefel(&[2.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn radial_interval_ends_on_the_tube_boundary() {
        let mut rng = crate::random::RngStream::new(8, 0).rng();
        let mut hits = 0;
        for _ in 0..200 {
            let a: Vec<f64> = (0..3).map(|i| f64::from(i == 0) + 0.3 * standard_normal(&mut rng)).collect();
            let b: Vec<f64> = (0..3).map(|i| f64::from(i == 1) + 0.3 * standard_normal(&mut rng)).collect();
            let Some((lo, hi)) = radial_tube_interval(&a, &b, 0.5) else { continue };
            hits += 1;
            let nrm = (dot(&a, &a) + dot(&b, &b)).sqrt();
            for r in [lo, hi] {
                let at = |v: &[f64]| v.iter().map(|x| x * r / nrm).collect::<Vec<_>>();
                assert!((distance_to_stiefel(&at(&a), &at(&b)) - 0.5).abs() < 1e-12);
            }
            let mid = 0.5 * (lo + hi);
            let at = |v: &[f64]| v.iter().map(|x| x * mid / nrm).collect::<Vec<_>>();
            assert!(distance_to_stiefel(&at(&a), &at(&b)) < 0.5);
        }
        assert!(hits > 20);
    }

    #[test]
    fn assembled_matrix_is_symmetric() {
        let f = crate::random::sample_system(&[2, 3, 2], 3, &crate::random::RngStream::new(3, 1)).unwrap();
        let m = hessian_in_chart(&f).unwrap().assemble();
        let d = 5;
        for i in 0..d {
            for j in 0..d {
                assert_eq!(m[i * d + j], m[j * d + i]);
            }
        }
    }
}
