//! The Kostlan / Shub–Smale Gaussian model on homogeneous systems and the
//! closed-form facts about it: jet covariances at `e_0` and the chi-square
//! large-deviation bound on the squared Weyl norm.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{HomogeneousPoly, MonomialBasis, PolySystem};

/// Name of the generator and Gaussian transform, echoed into manifests.
pub const RNG_DESCRIPTION: &str = "ChaCha20 (rand_chacha 0.9, seed_from_u64 + set_stream) with ziggurat StandardNormal (rand_distr 0.5)";

/// A reproducible random stream addressed by `(seed, stream_id)`.
///
/// ChaCha20 keyed by the seed and positioned on stream `stream_id` is a
/// counter-based generator, so two streams never overlap and a replicate's
/// draws do not depend on which worker runs it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Draws one polynomial with independent coefficients `a_j ~ N(0, C(d, j))`.
pub fn sample_poly<R: Rng + ?Sized>(degree: u32, num_vars: usize, rng: &mut R) -> Result<HomogeneousPoly> {
    let basis = MonomialBasis::new(degree, num_vars)?;
    let coeffs = (0..basis.len())
        .map(|i| standard_normal(rng) * (basis.multinomial(i) as f64).sqrt())
        .collect();
    HomogeneousPoly::from_coeffs(basis, coeffs)
}

/// Draws a system of `n` polynomials in `n + 1` variables from an explicit
/// generator.
pub fn sample_system_with<R: Rng + ?Sized>(degrees: &[u32], n: usize, rng: &mut R) -> Result<PolySystem> {
    if degrees.len() != n {
        return Err(Error::InvalidDegrees(format!(
            "{} degrees given for n = {n}",
            degrees.len()
        )));
    }
    if degrees.contains(&0) {
        return Err(Error::InvalidDegrees("degrees must be >= 1".into()));
    }
    let polys = degrees
        .iter()
        .map(|&d| sample_poly(d, n + 1, rng))
        .collect::<Result<Vec<_>>>()?;
    PolySystem::new(polys)
}

pub fn sample_system(degrees: &[u32], n: usize, stream: &RngStream) -> Result<PolySystem> {
    sample_system_with(degrees, n, &mut stream.rng())
}

/// One entry of the 2-jet of a polynomial at `e_0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JetEntry {
    Value,
    D1(usize),
    D2(usize, usize),
}

impl JetEntry {
    fn check(self, num_vars: usize) -> Result<()> {
        let ok = match self {
            JetEntry::Value => true,
            JetEntry::D1(k) => k < num_vars,
            JetEntry::D2(k, l) => k < num_vars && l < num_vars,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::OutOfRange(format!("{self:?} in {num_vars} variables")))
        }
    }

    /// All jet entries in `num_vars` variables: the value, first partials,
    /// then second partials with `k <= l`.
    pub fn all(num_vars: usize) -> Vec<JetEntry> {
        let mut out = vec![JetEntry::Value];
        out.extend((0..num_vars).map(JetEntry::D1));
        for k in 0..num_vars {
            for l in k..num_vars {
                out.push(JetEntry::D2(k, l));
            }
        }
        out
    }

    /// Evaluates this entry of `f`'s jet at `e_0`.
    pub fn eval_at_e0(self, f: &HomogeneousPoly) -> Result<f64> {
        let mut e0 = vec![0.0; f.num_vars()];
        e0[0] = 1.0;
        match self {
            JetEntry::Value => f.eval(&e0),
            JetEntry::D1(k) => f.partial(&[k], &e0),
            JetEntry::D2(k, l) => f.partial(&[k, l], &e0),
        }
    }
}

fn delta(a: usize, b: usize) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

/// Closed-form covariance `E(u v)` of two jet entries at `e_0` for a single
/// degree-`d` polynomial under the Shub–Smale model.
pub fn jet_covariance_oracle(d: u32, num_vars: usize, u: JetEntry, v: JetEntry) -> Result<f64> {
    u.check(num_vars)?;
    v.check(num_vars)?;
    let d = d as f64;
    let d1 = d * (d - 1.0);
    use JetEntry::*;
    let val = match (u, v) {
        (Value, Value) => 1.0,
        (Value, D1(k)) | (D1(k), Value) => delta(k, 0) * d,
        (D1(k), D1(k2)) => delta(k, k2) * (d + delta(k, 0) * d1),
        (Value, D2(k, l)) | (D2(k, l), Value) => delta(k, l) * delta(k, 0) * d1,
        (D2(k, l), D1(k2)) | (D1(k2), D2(k, l)) => {
            d1 * ((d - 2.0) * delta(l, 0) * delta(k, 0) * delta(k2, 0)
                + delta(k, 0) * delta(k2, l)
                + delta(l, 0) * delta(k, k2))
        }
        (D2(k, l), D2(k2, l2)) => {
            d1 * ((d - 2.0) * (d - 3.0) * delta(k, 0) * delta(l, 0) * delta(k2, 0) * delta(l2, 0)
                + (d - 2.0)
                    * (delta(k, 0) * delta(k2, 0) * delta(l, l2)
                        + delta(k2, 0) * delta(l, 0) * delta(k, l2)
                        + delta(k, 0) * delta(l2, 0) * delta(k2, l)
                        + delta(l, 0) * delta(l2, 0) * delta(k, k2))
                + delta(k, k2) * delta(l, l2)
                + delta(k, l2) * delta(k2, l))
        }
    };
    Ok(val)
}

/// `P(‖f‖²_W ≥ (1 + η) N) ≤ exp(−(N/2)(η − ln(1 + η)))` for `η > 0`.
pub fn weyl_sq_tail_bound(eta: f64, dim: u64) -> Result<f64> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::OutOfRange(format!("eta must be positive, got {eta}")));
    }
    Ok((-(dim as f64) / 2.0 * (eta - eta.ln_1p())).exp())
}

/// Log moment generating function of a centred `χ²_1` variable,
/// `Λ(λ) = −λ − ½ ln(1 − 2λ)`, infinite for `λ ≥ ½`.
pub fn logmgf_chi2_centered(lambda: f64) -> f64 {
    if lambda >= 0.5 {
        return f64::INFINITY;
    }
    -lambda - 0.5 * (-2.0 * lambda).ln_1p()
}

/// Legendre transform of [`logmgf_chi2_centered`],
/// `Λ*(x) = ½(x − ln(x + 1))`, infinite for `x ≤ −1`.
pub fn fenchel_transform(x: f64) -> f64 {
    if x <= -1.0 {
        return f64::INFINITY;
    }
    0.5 * (x - x.ln_1p())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::MultiIndex;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = sample_system(&[2, 2], 2, &RngStream::new(7, 3)).unwrap();
        let b = sample_system(&[2, 2], 2, &RngStream::new(7, 3)).unwrap();
        let c = sample_system(&[2, 2], 2, &RngStream::new(7, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sampler_shape_errors() {
        let s = RngStream::new(1, 0);
        assert!(sample_system(&[2, 2], 3, &s).is_err());
        assert!(sample_system(&[2, 0], 2, &s).is_err());
    }

    #[test]
    fn coefficient_variance_matches_multinomial() {
        // degree 3 in two variables: Var of the x0 x1^2 coefficient is 3.
        let mut rng = RngStream::new(11, 0).rng();
        let trials = 100_000;
        let j = MultiIndex::new(vec![1, 2]);
        let mut s2 = 0.0;
        let mut s4 = 0.0;
        for _ in 0..trials {
            let f = sample_system_with(&[3], 1, &mut rng).unwrap();
            let a = f.polys()[0].coefficient(&j).unwrap();
            s2 += a * a;
            s4 += a.powi(4);
        }
        let mean = s2 / trials as f64;
        let se = ((s4 / trials as f64 - mean * mean) / trials as f64).sqrt();
        assert!((mean - 3.0).abs() < 4.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn covariance_oracle_examples() {
        assert_eq!(jet_covariance_oracle(3, 3, JetEntry::D1(1), JetEntry::D1(1)).unwrap(), 3.0);
        assert_eq!(jet_covariance_oracle(3, 3, JetEntry::D1(0), JetEntry::D1(0)).unwrap(), 9.0);
        assert_eq!(jet_covariance_oracle(3, 3, JetEntry::Value, JetEntry::D2(1, 1)).unwrap(), 0.0);
        assert!(jet_covariance_oracle(3, 3, JetEntry::D1(3), JetEntry::Value).is_err());
    }

    #[test]
    fn tail_bound_examples() {
        let b = weyl_sq_tail_bound(1.0, 30).unwrap();
        assert!((b - (-15.0 * (1.0 - 2f64.ln())).exp()).abs() < 1e-15);
        assert!((b - 1.0025e-2).abs() < 1e-5);
        assert!((weyl_sq_tail_bound(1e-9, 30).unwrap() - 1.0).abs() < 1e-12);
        assert!(weyl_sq_tail_bound(0.0, 30).is_err());
        assert!(weyl_sq_tail_bound(-1.0, 30).is_err());
        assert!(weyl_sq_tail_bound(2.0, 30).unwrap() < b);
        assert!(weyl_sq_tail_bound(1.0, 40).unwrap() < b);
    }

    #[test]
    fn legendre_pair_examples() {
        assert_eq!(logmgf_chi2_centered(0.0), 0.0);
        assert_eq!(fenchel_transform(0.0), 0.0);
        assert_eq!(logmgf_chi2_centered(0.5), f64::INFINITY);
        assert_eq!(logmgf_chi2_centered(0.7), f64::INFINITY);
        assert_eq!(fenchel_transform(-1.0), f64::INFINITY);
        assert!((fenchel_transform(1.0) - 0.153426).abs() < 1e-6);
    }
}
