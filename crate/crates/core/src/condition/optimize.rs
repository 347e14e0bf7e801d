//! Multistart local minimization on the unit sphere.
//!
//! Each start runs a projected BFGS iteration with retraction
//! `x ↦ x / ‖x‖`. When no analytic gradient is available the gradient is
//! taken by central differences along a tangent frame at two step sizes; if
//! the two disagree by more than 10% the objective is treated as non-smooth
//! at that point and a coordinate-wise golden-section sweep is used instead.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{dot, householder_tangent_basis, norm, project_out};
use crate::random::standard_normal;

/// Tuning knobs shared by every condition-number search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    /// Number of random starts; `None` means `8 (n + 1)^2`.
    pub starts: Option<usize>,
    /// Projected-gradient norm accepted as stationary.
    pub tol: f64,
    pub max_iter: usize,
    /// Smaller of the two finite-difference steps; the larger is ten times it.
    pub fd_step: f64,
    /// Seed for start points when the caller does not supply them.
    pub seed: u64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            starts: None,
            tol: 1e-8,
            max_iter: 200,
            fd_step: 1e-5,
            seed: 0,
        }
    }
}

impl OptimizerOptions {
    pub fn starts_for(&self, n: usize) -> usize {
        self.starts.unwrap_or(8 * (n + 1) * (n + 1)).max(1)
    }
}

/// Step size below which an iteration counts as converged.
pub const STEP_TOL: f64 = 1e-10;

pub trait SphereObjective {
    fn value(&mut self, x: &[f64]) -> f64;

    /// Writes an ambient gradient and returns true, or returns false when no
    /// reliable analytic gradient exists at `x`.
    fn gradient(&mut self, _x: &[f64], _grad: &mut [f64]) -> bool {
        false
    }

    /// Optional final refinement of a local minimizer. Returns a better
    /// point and its value, or None to keep `x`.
    fn polish(&mut self, _x: &[f64]) -> Option<(Vec<f64>, f64)> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultistartResult {
    pub best: LocalResult,
    pub best_index: usize,
    pub starts_used: usize,
    pub converged_starts: usize,
}

/// `count` points drawn uniformly on the unit sphere in `R^dim`.
pub fn random_starts<R: Rng + ?Sized>(dim: usize, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| loop {
            let mut v: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
            let nv = norm(&v);
            if nv > 1e-12 {
                v.iter_mut().for_each(|t| *t /= nv);
                break v;
            }
        })
        .collect()
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let nv = norm(v);
    v.iter().map(|t| t / nv).collect()
}

fn retract(x: &[f64], p: &[f64], t: f64, out: &mut [f64]) {
    for ((o, xi), pi) in out.iter_mut().zip(x).zip(p) {
        *o = xi + t * pi;
    }
    let no = norm(out);
    out.iter_mut().for_each(|v| *v /= no);
}

enum GradStatus {
    Smooth,
    NonSmooth,
}

struct Workspace {
    frame: Vec<f64>,
    tmp: Vec<f64>,
}

impl Workspace {
    fn new(nv: usize) -> Self {
        Workspace {
            frame: vec![0.0; nv * (nv - 1)],
            tmp: vec![0.0; nv],
        }
    }
}

fn fd_gradient<O: SphereObjective>(
    obj: &mut O,
    x: &[f64],
    h: f64,
    ws: &mut Workspace,
    grad: &mut [f64],
) {
    let nv = x.len();
    let n = nv - 1;
    householder_tangent_basis(x, &mut ws.frame);
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut q = vec![0.0; nv];
    for k in 0..n {
        for i in 0..nv {
            q[i] = ws.frame[i * n + k];
        }
        retract(x, &q, h, &mut ws.tmp);
        let fp = obj.value(&ws.tmp);
        retract(x, &q, -h, &mut ws.tmp);
        let fm = obj.value(&ws.tmp);
        // normalize(x + t q) has velocity q at t = 0
        let c = (fp - fm) / (2.0 * h);
        for i in 0..nv {
            grad[i] += c * q[i];
        }
    }
}

fn gradient_at<O: SphereObjective>(
    obj: &mut O,
    x: &[f64],
    opts: &OptimizerOptions,
    ws: &mut Workspace,
    grad: &mut [f64],
) -> GradStatus {
    if obj.gradient(x, grad) {
        project_out(grad, x);
        return GradStatus::Smooth;
    }
    let mut coarse = vec![0.0; x.len()];
    fd_gradient(obj, x, opts.fd_step, ws, grad);
    fd_gradient(obj, x, 10.0 * opts.fd_step, ws, &mut coarse);
    let diff: f64 = grad
        .iter()
        .zip(&coarse)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale = norm(grad).max(norm(&coarse));
    // The absolute floor keeps rounding noise near a smooth minimum from
    // being mistaken for a kink.
    if diff > 0.1 * scale && diff > opts.tol {
        GradStatus::NonSmooth
    } else {
        GradStatus::Smooth
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search of `t ↦ obj(normalize(x + t q))` on `[-r, r]`.
fn golden_line<O: SphereObjective>(
    obj: &mut O,
    x: &[f64],
    q: &[f64],
    r: f64,
    tmp: &mut [f64],
) -> (f64, f64) {
    let mut phi = |t: f64, tmp: &mut [f64]| {
        retract(x, q, t, tmp);
        obj.value(tmp)
    };
    let (mut a, mut b) = (-r, r);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = phi(c, tmp);
    let mut fd = phi(d, tmp);
    while b - a > 1e-12 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = phi(c, tmp);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = phi(d, tmp);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// One derivative-free sweep over the tangent chart. Returns the total
/// displacement.
fn golden_sweep<O: SphereObjective>(
    obj: &mut O,
    x: &mut Vec<f64>,
    fx: &mut f64,
    radius: &mut f64,
    ws: &mut Workspace,
) -> f64 {
    let nv = x.len();
    let n = nv - 1;
    let mut moved = 0.0;
    let mut largest: f64 = 0.0;
    // Coordinate directions, then the diagonals (q_i ± q_j)/√2 of each
    // coordinate plane, which lets the sweep follow kinks that run
    // obliquely to the chart axes.
    let mut dirs: Vec<(usize, usize, f64)> = (0..n).map(|k| (k, k, 0.0)).collect();
    for i in 0..n {
        for j in i + 1..n {
            dirs.push((i, j, 1.0));
            dirs.push((i, j, -1.0));
        }
    }
    for (i0, j0, sign) in dirs {
        householder_tangent_basis(x, &mut ws.frame);
        let q: Vec<f64> = if i0 == j0 {
            (0..nv).map(|i| ws.frame[i * n + i0]).collect()
        } else {
            (0..nv)
                .map(|i| (ws.frame[i * n + i0] + sign * ws.frame[i * n + j0]) * std::f64::consts::FRAC_1_SQRT_2)
                .collect()
        };
        let (t, ft) = golden_line(obj, x, &q, *radius, &mut ws.tmp);
        if ft < *fx {
            let mut xn = vec![0.0; nv];
            retract(x, &q, t, &mut xn);
            let step: f64 = xn
                .iter()
                .zip(x.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            moved += step;
            largest = largest.max(t.abs());
            *x = xn;
            *fx = ft;
        }
    }
    *radius = (4.0 * largest).clamp(1e-6, 0.5);
    moved
}

/// Local minimization from one start.
pub fn minimize_from<O: SphereObjective>(obj: &mut O, start: &[f64], opts: &OptimizerOptions) -> LocalResult {
    let nv = start.len();
    let mut ws = Workspace::new(nv);
    let mut x = normalized(start);
    let mut fx = obj.value(&x);
    let mut g = vec![0.0; nv];
    let mut status = gradient_at(obj, &x, opts, &mut ws, &mut g);
    let mut hinv = identity(nv);
    let mut radius = 0.1;
    let mut converged = false;
    let mut iterations = 0;
    let mut p = vec![0.0; nv];
    let mut xn = vec![0.0; nv];
    let mut gn = vec![0.0; nv];

    while iterations < opts.max_iter {
        iterations += 1;
        if let GradStatus::NonSmooth = status {
            let moved = golden_sweep(obj, &mut x, &mut fx, &mut radius, &mut ws);
            status = gradient_at(obj, &x, opts, &mut ws, &mut g);
            hinv = identity(nv);
            if moved < STEP_TOL {
                converged = true;
                break;
            }
            continue;
        }
        if norm(&g) < opts.tol {
            converged = true;
            break;
        }
        // p = -P H P g, with g already tangent
        for i in 0..nv {
            p[i] = -(0..nv).map(|j| hinv[i * nv + j] * g[j]).sum::<f64>();
        }
        project_out(&mut p, &x);
        let mut slope = dot(&p, &g);
        if slope >= 0.0 {
            hinv = identity(nv);
            p.iter_mut().zip(&g).for_each(|(pi, gi)| *pi = -gi);
            slope = dot(&p, &g);
        }
        let pn = norm(&p);
        let mut t = if pn > 0.5 { 0.5 / pn } else { 1.0 };
        let mut accepted = None;
        while t * pn >= STEP_TOL * 1e-3 {
            retract(&x, &p, t, &mut xn);
            let fnew = obj.value(&xn);
            if fnew <= fx + 1e-4 * t * slope {
                accepted = Some(fnew);
                break;
            }
            t *= 0.5;
        }
        let Some(fnew) = accepted else {
            // No decrease along the quasi-Newton direction: either we sit at
            // a minimum up to rounding or the gradient is unreliable.
            if !is_identity(&hinv) {
                hinv = identity(nv);
                continue;
            }
            converged = true;
            break;
        };
        let step = xn
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let new_status = gradient_at(obj, &xn, opts, &mut ws, &mut gn);
        // BFGS update with vectors transported by projection.
        let mut s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        project_out(&mut s, &xn);
        let mut gt = g.clone();
        project_out(&mut gt, &xn);
        let y: Vec<f64> = gn.iter().zip(&gt).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            bfgs_update(&mut hinv, &s, &y, sy);
        } else {
            hinv = identity(nv);
        }
        x.copy_from_slice(&xn);
        fx = fnew;
        g.copy_from_slice(&gn);
        status = new_status;
        if step < STEP_TOL {
            converged = true;
            break;
        }
    }
    if let Some((xp, fp)) = obj.polish(&x) {
        if fp < fx {
            x = xp;
            fx = fp;
        }
    }
    LocalResult {
        grad_norm: norm(&g),
        x,
        value: fx,
        iterations,
        converged,
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn is_identity(m: &[f64]) -> bool {
    let n = (m.len() as f64).sqrt() as usize;
    (0..n).all(|i| (0..n).all(|j| m[i * n + j] == if i == j { 1.0 } else { 0.0 }))
}

/// Inverse-Hessian BFGS update `H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum())
        .collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Runs [`minimize_from`] from every start, in parallel, and keeps the
/// lowest value. Ties go to the lowest start index.
pub fn multistart_minimize<O, F>(make: F, starts: &[Vec<f64>], opts: &OptimizerOptions) -> MultistartResult
where
    O: SphereObjective,
    F: Fn() -> O + Sync,
{
    assert!(!starts.is_empty(), "at least one start is required");
    let results: Vec<LocalResult> = starts
        .par_iter()
        .map(|s| {
            let mut obj = make();
            minimize_from(&mut obj, s, opts)
        })
        .collect();
    let mut best_index = 0;
    for (i, r) in results.iter().enumerate() {
        if r.value < results[best_index].value {
            best_index = i;
        }
    }
    let converged_starts = results.iter().filter(|r| r.converged).count();
    MultistartResult {
        best: results[best_index].clone(),
        best_index,
        starts_used: starts.len(),
        converged_starts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Rayleigh quotient of a fixed diagonal matrix: smooth, minimum at e_2.
    struct Rayleigh(Vec<f64>, bool);

    impl SphereObjective for Rayleigh {
        fn value(&mut self, x: &[f64]) -> f64 {
            x.iter().zip(&self.0).map(|(a, d)| d * a * a).sum()
        }
        fn gradient(&mut self, x: &[f64], g: &mut [f64]) -> bool {
            if !self.1 {
                return false;
            }
            for i in 0..x.len() {
                g[i] = 2.0 * self.0[i] * x[i];
            }
            true
        }
    }

    /// `max_i |x_i|`: non-smooth, minimum 1/√m at the cube diagonals.
    struct MaxAbs;

    impl SphereObjective for MaxAbs {
        fn value(&mut self, x: &[f64]) -> f64 {
            x.iter().fold(0.0, |m, v| m.max(v.abs()))
        }
    }

    #[test]
    fn smooth_problem_converges_with_both_gradient_sources() {
        let opts = OptimizerOptions::default();
        for analytic in [true, false] {
            let mut obj = Rayleigh(vec![3.0, 2.0, 0.5], analytic);
            let r = minimize_from(&mut obj, &[0.3, 0.8, 0.2], &opts);
            assert!(r.converged);
            assert!((r.value - 0.5).abs() < 1e-12, "{r:?}");
            assert!((r.x[2].abs() - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn nonsmooth_problem_reaches_the_kink() {
        let opts = OptimizerOptions::default();
        let mut obj = MaxAbs;
        let r = minimize_from(&mut obj, &[0.9, 0.3, 0.1], &opts);
        assert!((r.value - 1.0 / 3f64.sqrt()).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn multistart_is_deterministic_and_picks_lowest() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let starts = random_starts(4, 16, &mut rng);
        for s in &starts {
            assert!((norm(s) - 1.0).abs() < 1e-14);
        }
        let opts = OptimizerOptions::default();
        let make = || Rayleigh(vec![1.0, 4.0, 2.0, 3.0], true);
        let a = multistart_minimize(make, &starts, &opts);
        let b = multistart_minimize(make, &starts, &opts);
        assert_eq!(a, b);
        assert!((a.best.value - 1.0).abs() < 1e-12);
        assert_eq!(a.starts_used, 16);
    }

    #[test]
    fn default_start_count() {
        let o = OptimizerOptions::default();
        assert_eq!(o.starts_for(3), 128);
        let o = OptimizerOptions {
            starts: Some(5),
            ..Default::default()
        };
        assert_eq!(o.starts_for(3), 5);
    }
}
