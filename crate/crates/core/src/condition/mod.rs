//! The condition numbers `κ(f)` and `κ̃(f)` and the pointwise quantities
//! they are built from.
//!
//! Both numbers are global extrema over the sphere. They are estimated by
//! multistart local optimization (see [`optimize`]); the reports carry a
//! [`Certification::Heuristic`] label because a multistart search can miss
//! the true extremum. For `κ̃` the search minimizes
//! `g(x) = σ_min(M⁻¹ D_x f)² + ‖f(x)‖²`, so the reported `L̲` is an upper
//! bound on the true minimum and `κ̃` a lower bound on the true value.

mod minimax;
pub mod optimize;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, householder_tangent_basis, jacobi_svd, norm, two_smallest};
use crate::poly::{JetScratch, PolySystem};
use crate::random::RngStream;

pub use optimize::{
    minimize_from, multistart_minimize, random_starts, LocalResult, MultistartResult, OptimizerOptions,
    SphereObjective,
};

/// Tolerance on `‖x‖ = 1` and `⟨x, y⟩ = 0` for manifold points.
pub const MANIFOLD_TOL: f64 = 1e-12;

/// A unit vector in `R^{n+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpherePoint(Vec<f64>);

impl SpherePoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        let dev = (norm(&coords) - 1.0).abs();
        if !(dev <= MANIFOLD_TOL) {
            return Err(Error::OffManifold(dev));
        }
        Ok(SpherePoint(coords))
    }

    /// Scales a nonzero vector onto the sphere.
    pub fn normalize(mut v: Vec<f64>) -> Result<Self> {
        let nv = norm(&v);
        if !(nv > 0.0) || !nv.is_finite() {
            return Err(Error::OffManifold(1.0));
        }
        v.iter_mut().for_each(|t| *t /= nv);
        Ok(SpherePoint(v))
    }

    /// The basis vector `e_k` in `R^dim`.
    pub fn basis(dim: usize, k: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[k] = 1.0;
        SpherePoint(v)
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// An orthonormal pair `(x, y)`, a point of the Stiefel manifold `V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StiefelPoint {
    x: SpherePoint,
    y: SpherePoint,
}

impl StiefelPoint {
    pub fn new(x: SpherePoint, y: SpherePoint) -> Result<Self> {
        if x.dim() != y.dim() {
            return Err(Error::DimensionMismatch {
                expected: x.dim(),
                got: y.dim(),
            });
        }
        let ip = dot(x.coords(), y.coords()).abs();
        if !(ip <= MANIFOLD_TOL) {
            return Err(Error::OffManifold(ip));
        }
        Ok(StiefelPoint { x, y })
    }

    pub fn from_vecs(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        Self::new(SpherePoint::new(x)?, SpherePoint::new(y)?)
    }

    pub fn x(&self) -> &SpherePoint {
        &self.x
    }

    pub fn y(&self) -> &SpherePoint {
        &self.y
    }
}

/// Orthonormal basis of the tangent space `T_x S^n = x⊥`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentFrame {
    x: SpherePoint,
    basis: Vec<f64>,
}

impl TangentFrame {
    /// Householder completion of `x`; deterministic in `x`.
    pub fn at(x: &SpherePoint) -> Self {
        let nv = x.dim();
        let mut basis = vec![0.0; nv * (nv - 1)];
        householder_tangent_basis(x.coords(), &mut basis);
        TangentFrame { x: x.clone(), basis }
    }

    pub fn x(&self) -> &SpherePoint {
        &self.x
    }

    /// Row-major `(n+1) x n` matrix with orthonormal columns.
    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    pub fn n(&self) -> usize {
        self.x.dim() - 1
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        let n = self.n();
        (0..=n).map(|i| self.basis[i * n + j]).collect()
    }
}

fn check_point(f: &PolySystem, dim: usize) -> Result<()> {
    if dim != f.num_vars() {
        return Err(Error::DimensionMismatch {
            expected: f.num_vars(),
            got: dim,
        });
    }
    Ok(())
}

/// `D_x f` restricted to the tangent frame: row `i` is `∇f_i(x)ᵀ · basis`.
pub fn restricted_jacobian(f: &PolySystem, frame: &TangentFrame) -> Result<Vec<f64>> {
    check_point(f, frame.x().dim())?;
    let n = f.n();
    let nv = n + 1;
    let jac = f.jacobian(frame.x().coords())?;
    let b = frame.basis();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = (0..nv).map(|k| jac[i * nv + k] * b[k * n + j]).sum();
        }
    }
    Ok(out)
}

/// Pointwise evaluator with reusable buffers: values, gradients, Hessians,
/// the scaled restricted Jacobian `M⁻¹ D_x f` and its SVD.
struct LocalEval<'a> {
    f: &'a PolySystem,
    n: usize,
    inv_sqrt_d: Vec<f64>,
    scratch: JetScratch,
    vals: Vec<f64>,
    grads: Vec<f64>,
    hess: Vec<f64>,
    frame: Vec<f64>,
    jac: Vec<f64>,
    v: Vec<f64>,
    sigma: Vec<f64>,
}

impl<'a> LocalEval<'a> {
    fn new(f: &'a PolySystem) -> Self {
        let n = f.n();
        let nv = n + 1;
        LocalEval {
            f,
            n,
            inv_sqrt_d: f.polys().iter().map(|p| 1.0 / (p.degree() as f64).sqrt()).collect(),
            scratch: JetScratch::default(),
            vals: vec![0.0; n],
            grads: vec![0.0; n * nv],
            hess: vec![0.0; n * nv * nv],
            frame: vec![0.0; nv * n],
            jac: vec![0.0; n * n],
            v: vec![0.0; n * n],
            sigma: vec![0.0; n],
        }
    }

    /// Fills values, gradients (and Hessians if asked), then the SVD of
    /// `M⁻¹ D_x f`. Returns `(index of σ_min, index of the next one)`.
    fn update(&mut self, x: &[f64], with_hessians: bool) -> (usize, Option<usize>) {
        let n = self.n;
        let nv = n + 1;
        for (i, p) in self.f.polys().iter().enumerate() {
            let g = &mut self.grads[i * nv..(i + 1) * nv];
            let h = if with_hessians {
                Some(&mut self.hess[i * nv * nv..(i + 1) * nv * nv])
            } else {
                None
            };
            self.vals[i] = p.jet_into(x, &mut self.scratch, g, h);
        }
        householder_tangent_basis(x, &mut self.frame);
        for i in 0..n {
            let g = &self.grads[i * nv..(i + 1) * nv];
            for j in 0..n {
                let s: f64 = (0..nv).map(|k| g[k] * self.frame[k * n + j]).sum();
                self.jac[i * n + j] = s * self.inv_sqrt_d[i];
            }
        }
        jacobi_svd(&mut self.jac, n, n, &mut self.v, &mut self.sigma);
        two_smallest(&self.sigma)
    }

    fn f_sq(&self) -> f64 {
        self.vals.iter().map(|v| v * v).sum()
    }

    fn f_inf(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn sigma_min(&mut self, x: &[f64]) -> f64 {
        let (i, _) = self.update(x, false);
        self.sigma[i]
    }

    fn profile(&mut self, x: &[f64]) -> f64 {
        let (i, _) = self.update(x, false);
        self.sigma[i] * self.sigma[i] + self.f_sq()
    }

    /// Minimizing `y ⊥ x` for `L(x, ·)`, in ambient coordinates.
    fn min_direction(&self, imin: usize) -> Vec<f64> {
        let n = self.n;
        let nv = n + 1;
        (0..nv)
            .map(|k| (0..n).map(|j| self.frame[k * n + j] * self.v[j * n + imin]).sum())
            .collect()
    }

    /// Gradient of the profile `g` on the sphere. With `y` the minimizing
    /// direction, `∇g = P_x(∂_x L(x, y) − ⟨∂_y L, x⟩ y)`; the second term
    /// accounts for `y` having to stay orthogonal to `x`. Returns false when
    /// the two smallest singular values are too close for `y` to be well
    /// defined.
    fn profile_gradient(&mut self, x: &[f64], grad: &mut [f64]) -> bool {
        let n = self.n;
        let nv = n + 1;
        let (imin, second) = self.update(x, true);
        if let Some(i2) = second {
            let s1 = self.sigma[imin] * self.sigma[imin];
            let s2 = self.sigma[i2] * self.sigma[i2];
            if s2 - s1 <= 1e-6 * (1.0 + s2) {
                return false;
            }
        }
        let y = self.min_direction(imin);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut nu = 0.0;
        for i in 0..n {
            let gi = &self.grads[i * nv..(i + 1) * nv];
            let hi = &self.hess[i * nv * nv..(i + 1) * nv * nv];
            let gy = dot(gi, &y);
            let w = 2.0 * gy * self.inv_sqrt_d[i] * self.inv_sqrt_d[i];
            for k in 0..nv {
                let hy: f64 = (0..nv).map(|l| hi[k * nv + l] * y[l]).sum();
                grad[k] += w * hy + 2.0 * self.vals[i] * gi[k];
            }
            nu += 2.0 * self.vals[i] * gy;
        }
        for k in 0..nv {
            grad[k] -= nu * y[k];
        }
        true
    }

    /// Values `σ_min, |f_1|, …, |f_n|` at `x` with their gradients. The
    /// `σ_min` gradient is the profile formula without the `‖f‖²` terms,
    /// divided by `2σ_min`. Returns false at a repeated `σ_min` or a zero of
    /// some `f_i`.
    fn kappa_pieces(&mut self, x: &[f64], vals: &mut [f64], grads: &mut [f64]) -> bool {
        let n = self.n;
        let nv = n + 1;
        let (imin, second) = self.update(x, true);
        let s = self.sigma[imin];
        vals[0] = s;
        for i in 0..n {
            vals[i + 1] = self.vals[i].abs();
        }
        let repeated = second.is_some_and(|i2| self.sigma[i2] - s <= 1e-6 * (1.0 + self.sigma[i2]));
        if repeated || s == 0.0 || self.vals.iter().any(|v| *v == 0.0) {
            return false;
        }
        let y = self.min_direction(imin);
        let (g0, rest) = grads.split_at_mut(nv);
        g0.iter_mut().for_each(|g| *g = 0.0);
        let mut nu = 0.0;
        for i in 0..n {
            let gi = &self.grads[i * nv..(i + 1) * nv];
            let hi = &self.hess[i * nv * nv..(i + 1) * nv * nv];
            let gy = dot(gi, &y);
            let w = gy * self.inv_sqrt_d[i] * self.inv_sqrt_d[i] / s;
            for k in 0..nv {
                let hy: f64 = (0..nv).map(|l| hi[k * nv + l] * y[l]).sum();
                g0[k] += w * hy;
            }
            nu += self.vals[i] * gy / s;
            let sign = self.vals[i].signum();
            for (o, a) in rest[i * nv..(i + 1) * nv].iter_mut().zip(gi) {
                *o = sign * a;
            }
        }
        for k in 0..nv {
            g0[k] -= nu * y[k];
        }
        true
    }
}

/// `μ_norm(f, x) = √n ‖f‖ / σ_min(M⁻¹ D_x f)` with the max-Weyl norm; `+∞`
/// when the restricted Jacobian is singular.
pub fn mu_norm(f: &PolySystem, x: &SpherePoint) -> Result<f64> {
    check_point(f, x.dim())?;
    let mut ev = LocalEval::new(f);
    let s = ev.sigma_min(x.coords());
    if s == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((f.n() as f64).sqrt() * f.norms().max_weyl / s)
}

/// `L(x, y) = Σ (1/d_i) ⟨∇f_i(x), y⟩² + Σ f_i(x)²`.
pub fn l_field(f: &PolySystem, p: &StiefelPoint) -> Result<f64> {
    check_point(f, p.x().dim())?;
    let x = p.x().coords();
    let y = p.y().coords();
    let mut acc = 0.0;
    for poly in f.polys() {
        let g = poly.gradient(x)?;
        let v = poly.eval(x)?;
        acc += dot(&g, y).powi(2) / poly.degree() as f64 + v * v;
    }
    Ok(acc)
}

/// `g(x) = σ_min(M⁻¹ D_x f)² + ‖f(x)‖²`, the minimum of `L(x, ·)` over unit
/// `y ⊥ x`.
pub fn sigma_min_profile(f: &PolySystem, x: &SpherePoint) -> Result<f64> {
    check_point(f, x.dim())?;
    Ok(LocalEval::new(f).profile(x.coords()))
}

/// The direction `y` attaining [`sigma_min_profile`].
pub fn profile_minimizer(f: &PolySystem, x: &SpherePoint) -> Result<StiefelPoint> {
    check_point(f, x.dim())?;
    let mut ev = LocalEval::new(f);
    let (i, _) = ev.update(x.coords(), false);
    let y = SpherePoint::normalize(ev.min_direction(i))?;
    StiefelPoint::new(x.clone(), y)
}

/// Analytic gradient of [`sigma_min_profile`] on the sphere, or `None`
/// where the smallest singular value is (nearly) repeated.
pub fn profile_gradient(f: &PolySystem, x: &SpherePoint) -> Result<Option<Vec<f64>>> {
    check_point(f, x.dim())?;
    let mut ev = LocalEval::new(f);
    let mut g = vec![0.0; x.dim()];
    if !ev.profile_gradient(x.coords(), &mut g) {
        return Ok(None);
    }
    crate::linalg::project_out(&mut g, x.coords());
    Ok(Some(g))
}

/// `min(μ_norm(f, x), ‖f‖ / ‖f(x)‖_∞)`, the quantity maximized by `κ`.
pub fn kappa_objective(f: &PolySystem, x: &SpherePoint) -> Result<f64> {
    check_point(f, x.dim())?;
    let r = KappaObjective::new(f).ratio(x.coords());
    Ok(if r == 0.0 { f64::INFINITY } else { 1.0 / r })
}

struct ProfileObjective<'a>(LocalEval<'a>);

impl SphereObjective for ProfileObjective<'_> {
    fn value(&mut self, x: &[f64]) -> f64 {
        self.0.profile(x)
    }

    fn gradient(&mut self, x: &[f64], grad: &mut [f64]) -> bool {
        self.0.profile_gradient(x, grad)
    }
}

/// Minimizes `max(σ_min / (√n ‖f‖), ‖f(x)‖_∞ / ‖f‖)`, the reciprocal of the
/// pointwise `κ` objective, which stays finite everywhere.
struct KappaObjective<'a> {
    ev: LocalEval<'a>,
    sqrt_n_norm: f64,
    norm: f64,
}

impl<'a> KappaObjective<'a> {
    fn new(f: &'a PolySystem) -> Self {
        let norm = f.norms().max_weyl;
        KappaObjective {
            ev: LocalEval::new(f),
            sqrt_n_norm: (f.n() as f64).sqrt() * norm,
            norm,
        }
    }

    fn ratio(&mut self, x: &[f64]) -> f64 {
        let s = self.ev.sigma_min(x);
        (s / self.sqrt_n_norm).max(self.ev.f_inf() / self.norm)
    }
}

impl SphereObjective for KappaObjective<'_> {
    fn value(&mut self, x: &[f64]) -> f64 {
        self.ratio(x)
    }

    fn polish(&mut self, x: &[f64]) -> Option<(Vec<f64>, f64)> {
        minimax::polish(self, x)
    }
}

impl minimax::Pieces for KappaObjective<'_> {
    fn count(&self) -> usize {
        self.ev.n + 1
    }

    fn eval(&mut self, x: &[f64], vals: &mut [f64], grads: &mut [f64]) -> bool {
        let ok = self.ev.kappa_pieces(x, vals, grads);
        let nv = x.len();
        for (k, v) in vals.iter_mut().enumerate() {
            let scale = if k == 0 { self.sqrt_n_norm } else { self.norm };
            *v /= scale;
            grads[k * nv..(k + 1) * nv].iter_mut().for_each(|g| *g /= scale);
        }
        ok
    }
}

/// How much trust to place in a reported extremum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Certification {
    /// Best of a multistart local search; not a certified global optimum.
    Heuristic,
}

/// Result of a condition-number computation. Fields for a quantity that
/// was not requested are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub kappa_tilde: Option<f64>,
    pub kappa: Option<f64>,
    pub l_underline: Option<f64>,
    pub weyl_l2: f64,
    pub weyl_max: f64,
    /// Minimizer of the profile `g`.
    pub argmin_x: Option<SpherePoint>,
    /// Maximizer of the `κ` objective.
    pub argmax_x: Option<SpherePoint>,
    pub starts_used: usize,
    pub converged_starts: usize,
    /// Whether the winning local search of each computed quantity converged.
    pub converged: bool,
    pub certification: Certification,
}

fn check_nonzero(f: &PolySystem) -> Result<()> {
    if f.is_zero() {
        return Err(Error::ZeroSystem);
    }
    Ok(())
}

fn default_starts(f: &PolySystem, opts: &OptimizerOptions) -> Vec<Vec<f64>> {
    let mut rng = RngStream::new(opts.seed, 0).rng();
    random_starts(f.num_vars(), opts.starts_for(f.n()), &mut rng)
}

/// Draws the start points for `f` from an explicit generator.
pub fn draw_starts<R: Rng + ?Sized>(f: &PolySystem, opts: &OptimizerOptions, rng: &mut R) -> Vec<Vec<f64>> {
    random_starts(f.num_vars(), opts.starts_for(f.n()), rng)
}

fn check_starts(f: &PolySystem, starts: &[Vec<f64>]) -> Result<()> {
    if starts.is_empty() {
        return Err(Error::Config("at least one start point is required".into()));
    }
    for s in starts {
        check_point(f, s.len())?;
        if !(norm(s) > 0.0) {
            return Err(Error::OffManifold(1.0));
        }
    }
    Ok(())
}

fn empty_report(f: &PolySystem) -> ConditionReport {
    let norms = f.norms();
    ConditionReport {
        kappa_tilde: None,
        kappa: None,
        l_underline: None,
        weyl_l2: norms.l2_weyl,
        weyl_max: norms.max_weyl,
        argmin_x: None,
        argmax_x: None,
        starts_used: 0,
        converged_starts: 0,
        converged: true,
        certification: Certification::Heuristic,
    }
}

fn run_tilde(f: &PolySystem, starts: &[Vec<f64>], opts: &OptimizerOptions) -> MultistartResult {
    multistart_minimize(|| ProfileObjective(LocalEval::new(f)), starts, opts)
}

fn run_kappa(f: &PolySystem, starts: &[Vec<f64>], opts: &OptimizerOptions) -> MultistartResult {
    multistart_minimize(|| KappaObjective::new(f), starts, opts)
}

fn apply_tilde(rep: &mut ConditionReport, r: &MultistartResult) {
    let l = r.best.value;
    rep.l_underline = Some(l);
    rep.kappa_tilde = Some(if l > 0.0 { rep.weyl_l2 / l.sqrt() } else { f64::INFINITY });
    rep.argmin_x = Some(SpherePoint(r.best.x.clone()));
}

fn apply_kappa(rep: &mut ConditionReport, r: &MultistartResult) {
    let v = r.best.value;
    rep.kappa = Some(if v > 0.0 { 1.0 / v } else { f64::INFINITY });
    rep.argmax_x = Some(SpherePoint(r.best.x.clone()));
}

/// Both numbers are invariant under `f ↦ λf`, so the searches run on
/// `f / ‖f‖_W`; this keeps the optimizer's absolute tolerances meaningful
/// and makes results independent of the system's scale.
fn unit_scaled(f: &PolySystem) -> (PolySystem, f64) {
    let s = f.weyl_norm_sq().sqrt();
    (f.scaled(1.0 / s), s)
}

/// Restores the scale-dependent fields of a report computed on `f / s`.
fn rescale(mut rep: ConditionReport, f: &PolySystem, s: f64) -> ConditionReport {
    let norms = f.norms();
    rep.weyl_l2 = norms.l2_weyl;
    rep.weyl_max = norms.max_weyl;
    rep.l_underline = rep.l_underline.map(|l| l * s * s);
    rep
}

/// `κ̃(f) = ‖f‖_W / √L̲` with `L̲` the multistart minimum of the profile.
pub fn kappa_tilde(f: &PolySystem, opts: &OptimizerOptions) -> Result<ConditionReport> {
    kappa_tilde_from(f, opts, &default_starts(f, opts))
}

pub fn kappa_tilde_from(f: &PolySystem, opts: &OptimizerOptions, starts: &[Vec<f64>]) -> Result<ConditionReport> {
    check_nonzero(f)?;
    check_starts(f, starts)?;
    let (fh, s) = unit_scaled(f);
    let r = run_tilde(&fh, starts, opts);
    let mut rep = empty_report(&fh);
    apply_tilde(&mut rep, &r);
    rep.starts_used = r.starts_used;
    rep.converged_starts = r.converged_starts;
    rep.converged = r.best.converged;
    Ok(rescale(rep, f, s))
}

/// `κ(f) = max_x min(μ_norm(f, x), ‖f‖ / ‖f(x)‖_∞)` by multistart search.
pub fn kappa(f: &PolySystem, opts: &OptimizerOptions) -> Result<ConditionReport> {
    kappa_from(f, opts, &default_starts(f, opts))
}

pub fn kappa_from(f: &PolySystem, opts: &OptimizerOptions, starts: &[Vec<f64>]) -> Result<ConditionReport> {
    check_nonzero(f)?;
    check_starts(f, starts)?;
    let (fh, s) = unit_scaled(f);
    let r = run_kappa(&fh, starts, opts);
    let mut rep = empty_report(&fh);
    apply_kappa(&mut rep, &r);
    rep.starts_used = r.starts_used;
    rep.converged_starts = r.converged_starts;
    rep.converged = r.best.converged;
    Ok(rescale(rep, f, s))
}

/// Computes both numbers from the same start set, then lets each search
/// seed the other until neither improves (at most a few rounds).
///
/// Pointwise, `min(μ_norm, ‖f‖/‖f(x)‖_∞)` lies between `‖f‖_W / √(n g(x))`
/// and `√(2n) ‖f‖_W / √g(x)`. Evaluating the `κ` objective at the profile
/// minimizer, and the profile at the `κ` maximizer, therefore makes the
/// estimates satisfy `κ̃/√n ≤ κ ≤ √(2n) κ̃` by construction.
pub fn condition_numbers(f: &PolySystem, opts: &OptimizerOptions) -> Result<ConditionReport> {
    condition_numbers_from(f, opts, &default_starts(f, opts))
}

pub fn condition_numbers_from(
    f: &PolySystem,
    opts: &OptimizerOptions,
    starts: &[Vec<f64>],
) -> Result<ConditionReport> {
    check_nonzero(f)?;
    check_starts(f, starts)?;
    let original = f;
    let (fh, scale) = unit_scaled(f);
    let f = &fh;
    let mut tilde = run_tilde(f, starts, opts);
    let mut with_seed = starts.to_vec();
    with_seed.push(tilde.best.x.clone());
    let mut kap = run_kappa(f, &with_seed, opts);
    let mut starts_used = tilde.starts_used + kap.starts_used;
    let mut converged_starts = tilde.converged_starts + kap.converged_starts;
    for _round in 0..4 {
        let mut changed = false;
        let t2 = run_tilde(f, std::slice::from_ref(&kap.best.x), opts);
        starts_used += 1;
        converged_starts += t2.converged_starts;
        if t2.best.value < tilde.best.value {
            tilde.best = t2.best;
            changed = true;
        }
        let k2 = run_kappa(f, std::slice::from_ref(&tilde.best.x), opts);
        starts_used += 1;
        converged_starts += k2.converged_starts;
        if k2.best.value < kap.best.value {
            kap.best = k2.best;
            changed = true;
        }
        if !changed {
            break;
        }
    }
    let mut rep = empty_report(f);
    apply_tilde(&mut rep, &tilde);
    apply_kappa(&mut rep, &kap);
    rep.starts_used = starts_used;
    rep.converged_starts = converged_starts;
    rep.converged = tilde.best.converged && kap.best.converged;
    Ok(rescale(rep, original, scale))
}
