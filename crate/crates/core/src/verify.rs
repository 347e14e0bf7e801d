//! Self-checks of the model, geometry and matrix machinery, grouped into
//! suites. Each check reports a measured value against a threshold.

use std::fmt::Write as _;
use std::str::FromStr;

use num_traits::Zero;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{
    bhat_comparison, bhat_comparison_rows, block_det_identity, cauchy_binet_check, sample_goe_like, sample_lambda_bars,
    shifted_det_expansion, wishart_expected_det, IndexSubset, Mat, McMean,
};
use crate::poly::model_constants;
use crate::random::{sample_poly, sample_system_with, weyl_sq_tail_bound, JetEntry, RngStream};
use crate::stiefel::{
    chart_first_derivs, chart_psi, chart_second_derivs, fd_hessian_in_chart, hessian_in_chart, stiefel_volume,
    stiefel_volume_mc, ChartCoords,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Covariance,
    Matrix,
    Geometry,
    Rmt,
    All,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Covariance => "covariance",
            Suite::Matrix => "matrix",
            Suite::Geometry => "geometry",
            Suite::Rmt => "rmt",
            Suite::All => "all",
        }
    }

    /// Monte Carlo draws or random instances per check when not overridden.
    pub fn default_trials(self) -> u64 {
        match self {
            Suite::Covariance | Suite::Rmt => 100_000,
            Suite::Matrix => 1_000,
            Suite::Geometry => 100,
            Suite::All => 0,
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "covariance" => Ok(Suite::Covariance),
            "matrix" => Ok(Suite::Matrix),
            "geometry" => Ok(Suite::Geometry),
            "rmt" => Ok(Suite::Rmt),
            "all" => Ok(Suite::All),
            other => Err(Error::Config(format!("unknown suite '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub suite: String,
    pub name: String,
    pub passed: bool,
    /// The measured quantity compared against `threshold` (an error, a
    /// z-score or an estimate, as described in `detail`).
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

fn check(suite: Suite, name: impl Into<String>, value: f64, threshold: f64, detail: impl Into<String>) -> CheckResult {
    CheckResult {
        suite: suite.name().to_string(),
        name: name.into(),
        passed: value <= threshold,
        value,
        threshold,
        detail: detail.into(),
    }
}

pub fn run_suite(suite: Suite, trials: Option<u64>, seed: u64) -> Result<Vec<CheckResult>> {
    if trials == Some(0) {
        return Err(Error::Config("trials must be positive".into()));
    }
    let t = |s: Suite| trials.unwrap_or(s.default_trials());
    match suite {
        Suite::Covariance => covariance_suite(t(suite), seed),
        Suite::Matrix => matrix_suite(t(suite), seed),
        Suite::Geometry => geometry_suite(t(suite), seed),
        Suite::Rmt => rmt_suite(t(suite), seed),
        Suite::All => {
            let mut out = Vec::new();
            for s in [Suite::Covariance, Suite::Matrix, Suite::Geometry, Suite::Rmt] {
                out.extend(run_suite(s, trials, seed)?);
            }
            Ok(out)
        }
    }
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.passed)
}

pub fn render_text(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let mut s = String::new();
    let _ = writeln!(s, "{:<10} {:<width$} {:>6} {:>12} {:>12}  detail", "suite", "check", "status", "value", "threshold");
    for r in results {
        let _ = writeln!(
            s,
            "{:<10} {:<width$} {:>6} {:>12.4e} {:>12.4e}  {}",
            r.suite,
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.value,
            r.threshold,
            r.detail
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    let _ = writeln!(s, "{} checks, {} failed", results.len(), failed);
    s
}

/// Jet of `f` at `e_0` in the order of [`JetEntry::all`].
fn jet_at_e0(f: &crate::poly::HomogeneousPoly, entries: &[JetEntry]) -> Vec<f64> {
    let nv = f.num_vars();
    let mut e0 = vec![0.0; nv];
    e0[0] = 1.0;
    let value = f.eval(&e0).expect("dimension");
    let grad = f.gradient(&e0).expect("dimension");
    let hess = f.hessian(&e0).expect("dimension");
    entries
        .iter()
        .map(|e| match *e {
            JetEntry::Value => value,
            JetEntry::D1(k) => grad[k],
            JetEntry::D2(k, l) => hess[k * nv + l],
        })
        .collect()
}

fn covariance_suite(trials: u64, seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let nv = 3;
    for d in [2u32, 3, 4] {
        let entries = JetEntry::all(nv);
        let jets: Vec<Vec<f64>> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = RngStream::new(seed ^ (0x636f_7600 + d as u64), t).rng();
                let f = sample_poly(d, nv, &mut rng).expect("valid degree");
                jet_at_e0(&f, &entries)
            })
            .collect();
        // Jet entries have mean zero, so E(uv) is estimated by the mean of
        // the products; its standard error comes from the same sample.
        let mut worst = 0.0f64;
        let mut worst_pair = String::new();
        for a in 0..entries.len() {
            for b in a..entries.len() {
                let prods: Vec<f64> = jets.iter().map(|j| j[a] * j[b]).collect();
                let mc = McMean::from_samples(&prods);
                let exact = crate::random::jet_covariance_oracle(d, nv, entries[a], entries[b])?;
                let z = if mc.se > 0.0 {
                    (mc.mean - exact).abs() / mc.se
                } else if mc.mean == exact {
                    0.0
                } else {
                    f64::INFINITY
                };
                if z > worst {
                    worst = z;
                    worst_pair = format!("{:?},{:?}: {:.4} vs {:.4}", entries[a], entries[b], mc.mean, exact);
                }
            }
        }
        out.push(check(
            Suite::Covariance,
            format!("jet covariance d={d}"),
            worst,
            4.0,
            format!("max |z| over all entry pairs ({worst_pair})"),
        ));
    }

    let degrees = [2u32, 2, 2];
    let dim = model_constants(&degrees)?.dim;
    let weyl: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = RngStream::new(seed ^ 0x5eed_0001, t).rng();
            sample_system_with(&degrees, 3, &mut rng).expect("valid").weyl_norm_sq()
        })
        .collect();
    let nf = dim as f64;
    let m = McMean::from_samples(&weyl);
    out.push(check(
        Suite::Covariance,
        "weyl_sq mean = N",
        (m.mean - nf).abs() / m.se,
        4.0,
        format!("|z|, mean {:.4} vs N = {dim}", m.mean),
    ));
    let sq: Vec<f64> = weyl.iter().map(|w| (w - nf).powi(2)).collect();
    let v = McMean::from_samples(&sq);
    // Var((X − N)²) = 8N² + 48N for X ~ χ²_N.
    let se = ((8.0 * nf * nf + 48.0 * nf) / trials as f64).sqrt();
    out.push(check(
        Suite::Covariance,
        "weyl_sq variance = 2N",
        (v.mean - 2.0 * nf).abs() / se,
        4.0,
        format!("|z|, variance {:.4} vs 2N = {}", v.mean, 2 * dim),
    ));
    for eta in [0.5, 1.0, 2.0] {
        let thr = (1.0 + eta) * nf;
        let p = weyl.iter().filter(|&&w| w >= thr).count() as f64 / trials as f64;
        let bound = weyl_sq_tail_bound(eta, dim)?;
        out.push(check(
            Suite::Covariance,
            format!("weyl_sq tail eta={eta}"),
            p,
            bound,
            format!("P(weyl_sq >= {thr}) vs exp(-(N/2)(eta - ln(1+eta)))"),
        ));
    }
    Ok(out)
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn matrix_suite(trials: u64, seed: u64) -> Result<Vec<CheckResult>> {
    const TOL: f64 = 1e-10;
    let mut rng = RngStream::new(seed, 0x6d61_7472).rng();
    let mut out = Vec::new();

    let mut cb = (0.0f64, Vec::new());
    let mut sh = (0.0f64, Vec::new());
    let mut bl = (0.0f64, Vec::new());
    let mut bh = (0.0f64, 0u64, Vec::new());
    let mut bhr = (0.0f64, 0u64);
    for t in 0..trials {
        let n = rng.random_range(1..=7usize);
        let m = rng.random_range(1..=n);
        let a = Mat::random(m, n, &mut rng);
        let b = Mat::random(n, m, &mut rng);
        let (l, r) = cauchy_binet_check(&a, &b)?;
        cb.0 = cb.0.max(rel_err(l, r));
        if t < 3 {
            cb.1.push((a, b));
        }

        let size = rng.random_range(1..=7usize);
        let q = rng.random_range(1..=size);
        let c = Mat::random(size, size, &mut rng);
        let lambda = rng.random_range(-2.0..2.0);
        let (l, r) = shifted_det_expansion(&c, q, lambda)?;
        sh.0 = sh.0.max(rel_err(l, r));
        if t < 3 {
            sh.1.push((c, q, lambda));
        }

        // Q has size k + n − 1 ≤ 7.
        let n = rng.random_range(2..=4usize);
        let k = rng.random_range(1..n);
        let a = Mat::random(k, n, &mut rng);
        let b = Mat::random(k, n, &mut rng);
        let c = Mat::random(n - 1, n, &mut rng);
        let (l, r) = block_det_identity(&a, &b, &c)?;
        bl.0 = bl.0.max(rel_err(l, r));
        if t < 3 {
            bl.1.push((a, b, c));
        }

        let n = rng.random_range(2..=7usize);
        let degrees: Vec<u32> = (0..n).map(|_| rng.random_range(2..=5u32)).collect();
        let b = Mat::random(n - 1, n, &mut rng);
        let cmp = bhat_comparison(&b, &degrees)?;
        bh.0 = bh.0.max(rel_err(cmp.det_bhat, cmp.det_bhat_by_minors));
        let slack = 1e-10 * cmp.det_bhat.abs();
        if cmp.det_bhat < cmp.lower - slack || cmp.det_bhat > cmp.upper + slack {
            bh.1 += 1;
        }
        if t < 3 {
            bh.2.push((b.clone(), degrees.clone()));
        }
        let ell = rng.random_range(0..n - 1);
        let mut rows: Vec<usize> = (0..n - 1).collect();
        for i in 0..ell {
            let j = rng.random_range(i..n - 1);
            rows.swap(i, j);
        }
        rows.truncate(ell);
        let sub = IndexSubset::new(rows, n - 1)?;
        let cmp = bhat_comparison_rows(&b, &degrees, &sub)?;
        bhr.0 = bhr.0.max(rel_err(cmp.det_bhat, cmp.det_bhat_by_minors));
        let slack = 1e-10 * cmp.det_bhat.abs();
        if cmp.det_bhat < cmp.lower - slack || cmp.det_bhat > cmp.upper + slack {
            bhr.1 += 1;
        }
    }
    let detail = |what: &str| format!("max relative error over {trials} random instances, {what}");
    out.push(check(Suite::Matrix, "cauchy-binet", cb.0, TOL, detail("sizes <= 7")));
    out.push(check(Suite::Matrix, "shifted determinant", sh.0, TOL, detail("sizes <= 7")));
    out.push(check(Suite::Matrix, "block determinant", bl.0, TOL, detail("k + n - 1 <= 7")));
    out.push(check(
        Suite::Matrix,
        "bhat gram vs minors",
        bh.0,
        TOL,
        detail("det(BhBh^t) direct vs minor sum"),
    ));
    out.push(check(
        Suite::Matrix,
        "bhat sandwich",
        bh.1 as f64,
        0.0,
        format!("instances outside the degree-weighted bounds, of {trials}"),
    ));
    out.push(check(
        Suite::Matrix,
        "bhat rows gram vs minors",
        bhr.0,
        TOL,
        detail("rows removed"),
    ));
    out.push(check(
        Suite::Matrix,
        "bhat rows sandwich",
        bhr.1 as f64,
        0.0,
        format!("instances outside the row-subset bounds, of {trials}"),
    ));

    // Exact rational replays: any mismatch is a genuine identity failure.
    let mut exact_failures = 0u64;
    let mut exact_checked = 0u64;
    for (a, b) in &cb.1 {
        let (l, r) = cauchy_binet_check(&a.to_rational(), &b.to_rational())?;
        exact_checked += 1;
        exact_failures += (l != r) as u64;
    }
    for (c, q, lambda) in &sh.1 {
        let lam = num_rational::BigRational::from_float(*lambda).expect("finite");
        let (l, r) = shifted_det_expansion(&c.to_rational(), *q, lam)?;
        exact_checked += 1;
        exact_failures += (l != r) as u64;
    }
    for (a, b, c) in &bl.1 {
        let (l, r) = block_det_identity(&a.to_rational(), &b.to_rational(), &c.to_rational())?;
        exact_checked += 1;
        exact_failures += (l != r) as u64;
    }
    for (b, degrees) in &bh.2 {
        let cmp = bhat_comparison(&b.to_rational(), degrees)?;
        exact_checked += 1;
        let ok = cmp.det_bhat == cmp.det_bhat_by_minors
            && cmp.det_bhat >= cmp.lower
            && cmp.det_bhat <= cmp.upper
            && !(cmp.det_bbt.is_zero() && !cmp.det_bhat.is_zero());
        exact_failures += (!ok) as u64;
    }
    out.push(check(
        Suite::Matrix,
        "exact rational replay",
        exact_failures as f64,
        0.0,
        format!("identities failing in exact arithmetic, of {exact_checked}"),
    ));
    Ok(out)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn geometry_suite(trials: u64, seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let psi_flat = |n: usize, w: &[f64]| -> Result<Vec<f64>> {
        let p = chart_psi(&ChartCoords::from_flat(n, w)?)?;
        Ok(p.x().coords().iter().chain(p.y().coords()).copied().collect())
    };
    let mut first_err = 0.0f64;
    let mut second_err = 0.0f64;
    for n in 1..=5usize {
        let dim = 2 * n - 1;
        let first = chart_first_derivs(n);
        let second = chart_second_derivs(n);
        let h1 = 1e-6;
        let h2 = 1e-4;
        let zero = vec![0.0; dim];
        let p0 = psi_flat(n, &zero)?;
        for k in 0..dim {
            let mut wp = zero.clone();
            let mut wm = zero.clone();
            wp[k] = h1;
            wm[k] = -h1;
            let (pp, pm) = (psi_flat(n, &wp)?, psi_flat(n, &wm)?);
            let fd: Vec<f64> = pp.iter().zip(&pm).map(|(a, b)| (a - b) / (2.0 * h1)).collect();
            let exact: Vec<f64> = first[k].0.iter().chain(&first[k].1).copied().collect();
            first_err = first_err.max(max_abs_diff(&fd, &exact));
            for l in 0..dim {
                let eval = |sk: f64, sl: f64| -> Result<Vec<f64>> {
                    let mut w = zero.clone();
                    w[k] += sk * h2;
                    w[l] += sl * h2;
                    psi_flat(n, &w)
                };
                let fd: Vec<f64> = if k == l {
                    let (pp, pm) = (eval(1.0, 0.0)?, eval(-1.0, 0.0)?);
                    (0..p0.len()).map(|i| (pp[i] - 2.0 * p0[i] + pm[i]) / (h2 * h2)).collect()
                } else {
                    let (a, b, c, d) = (eval(1.0, 1.0)?, eval(1.0, -1.0)?, eval(-1.0, 1.0)?, eval(-1.0, -1.0)?);
                    (0..p0.len()).map(|i| (a[i] - b[i] - c[i] + d[i]) / (4.0 * h2 * h2)).collect()
                };
                let exact: Vec<f64> = second[k][l].0.iter().chain(&second[k][l].1).copied().collect();
                second_err = second_err.max(max_abs_diff(&fd, &exact));
            }
        }
    }
    out.push(check(
        Suite::Geometry,
        "chart first derivatives",
        first_err,
        1e-6,
        "max abs error, central differences, n = 1..5",
    ));
    out.push(check(
        Suite::Geometry,
        "chart second derivatives",
        second_err,
        1e-6,
        "max abs error, second differences, n = 1..5",
    ));

    let worst = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<f64> {
            let f = crate::random::sample_system(&[2, 2, 2], 3, &RngStream::new(seed, t))?;
            let exact = hessian_in_chart(&f)?.assemble();
            let fd = fd_hessian_in_chart(&f)?;
            let scale = exact.iter().map(|v| v.abs()).fold(0.0, f64::max);
            Ok(max_abs_diff(&exact, &fd) / scale)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    out.push(check(
        Suite::Geometry,
        "hessian in chart",
        worst,
        1e-4,
        format!("max relative error vs finite differences, {trials} systems, d = (2,2,2)"),
    ));

    let mut rng = RngStream::new(seed, 0x7374).rng();
    let exact = stiefel_volume(2)?;
    let (est, se) = stiefel_volume_mc(2, 1_000_000, 0.3, &mut rng);
    out.push(check(
        Suite::Geometry,
        "manifold volume",
        (est - exact).abs() / se,
        4.0,
        format!("|z|, tube estimate {est:.3} vs {exact:.3} (n = 2)"),
    ));
    Ok(out)
}

fn rmt_suite(trials: u64, seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (i, (m, n)) in [(1usize, 1usize), (2, 3), (2, 4), (3, 5)].into_iter().enumerate() {
        let (mc, exact) = wishart_expected_det(m, n, trials as usize, seed ^ (0x7769 + i as u64))?;
        out.push(check(
            Suite::Rmt,
            format!("wishart det m={m} n={n}"),
            (mc.mean - exact).abs() / mc.se,
            3.0,
            format!("|z|, mean {:.4} vs n!/(n-m)! = {exact}", mc.mean),
        ));
    }
    let n = 5;
    let bars = sample_lambda_bars(n, trials as usize, seed ^ 0x6c62);
    for ell in 1..=3 {
        let pows: Vec<f64> = bars.iter().map(|b| b.powi(ell)).collect();
        let mc = McMean::from_samples(&pows);
        out.push(check(
            Suite::Rmt,
            format!("lambda_bar moment l={ell}"),
            mc.mean + 3.0 * mc.se,
            2.0 * 4f64.powi(ell),
            "mean + 3 SE vs 2 * 4^l (n = 5)",
        ));
    }
    let thr = 2.0 + 2f64.sqrt();
    let p = bars.iter().filter(|&&b| b >= thr).count() as f64 / bars.len() as f64;
    out.push(check(
        Suite::Rmt,
        "lambda_bar tail t=1",
        p,
        (-(n as f64) / 2.0).exp(),
        "P(lambda_bar >= 2 + sqrt 2) vs exp(-n/2) (n = 5)",
    ));

    // Entry variances of the sampled matrices.
    let samples = (trials as usize).min(20_000);
    let mut rng = RngStream::new(seed, 0x676f65).rng();
    let (mut off, mut diag) = (Vec::new(), Vec::new());
    for _ in 0..samples {
        let g = sample_goe_like(n, &mut rng);
        off.push(g.entries[1].powi(2));
        diag.push(g.entries[0].powi(2));
    }
    for (name, xs, target) in [("off-diagonal", off, 1.0 / n as f64), ("diagonal", diag, 2.0 / n as f64)] {
        let mc = McMean::from_samples(&xs);
        out.push(check(
            Suite::Rmt,
            format!("goe {name} variance"),
            (mc.mean - target).abs() / mc.se,
            3.0,
            format!("|z|, {:.5} vs {target}", mc.mean),
        ));
    }
    Ok(out)
}
