//! Replicated Monte Carlo experiments comparing empirical behaviour of
//! `κ̃`, `κ`, `L̲` and `‖f‖²_W` with the tail, expectation and large-deviation
//! bounds of the Shub–Smale model.
//!
//! Replicate `r` draws everything (the system, then its optimizer starts)
//! from substream `r` of the configured seed, so results do not depend on
//! scheduling or on how many replicates run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::condition::{condition_numbers_from, draw_starts, kappa_tilde_from, OptimizerOptions};
use crate::error::{Error, Result};
use crate::matrix::McMean;
use crate::poly::model_constants;
use crate::random::{sample_system_with, weyl_sq_tail_bound, RngStream, RNG_DESCRIPTION};

/// Constants of the tail, expectation and CDF bounds for one degree list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremConstants {
    pub n: usize,
    pub max_degree: u32,
    pub bezout: u64,
    pub dim: u64,
    /// `K_n = 8𝐃²𝒟^{1/2}N^{1/2}n^{5/2} + 1`.
    pub k_n: f64,
    /// The `κ̃` tail bound applies for `a > a_n = 4𝐃²n³N^{1/2}`.
    pub a_n: f64,
    /// The `κ` tail bound applies for `a > 4√2 𝐃²n^{7/2}N^{1/2}`.
    pub kappa_threshold: f64,
    /// `√(2n)`.
    pub kappa_prefactor: f64,
    /// `ln K_n + (ln K_n)^{1/2} + (ln K_n)^{-1/2}`.
    pub expectation_bound: f64,
    /// The same plus `½ ln(2n)`.
    pub expectation_bound_kappa: f64,
    /// `8𝐃²𝒟^{1/2}n^{5/2}`, the coefficient of `√α` in the CDF bound on `L̲`.
    pub density_coefficient: f64,
    /// The CDF bound holds for `0 < α < 1/(4𝐃²n⁵)`.
    pub density_alpha_cap: f64,
}

pub fn theorem_constants(degrees: &[u32]) -> Result<TheoremConstants> {
    let c = model_constants(degrees)?;
    let n = degrees.len();
    let nf = n as f64;
    let dd = (c.max_degree as f64).powi(2);
    let sqrt_dim = (c.dim as f64).sqrt();
    let sqrt_bez = (c.bezout as f64).sqrt();
    let k_n = 8.0 * dd * sqrt_bez * sqrt_dim * nf.powf(2.5) + 1.0;
    let lk = k_n.ln();
    let expectation_bound = lk + lk.sqrt() + 1.0 / lk.sqrt();
    Ok(TheoremConstants {
        n,
        max_degree: c.max_degree,
        bezout: c.bezout,
        dim: c.dim,
        k_n,
        a_n: 4.0 * dd * nf.powi(3) * sqrt_dim,
        kappa_threshold: 4.0 * 2f64.sqrt() * dd * nf.powf(3.5) * sqrt_dim,
        kappa_prefactor: (2.0 * nf).sqrt(),
        expectation_bound,
        expectation_bound_kappa: expectation_bound + 0.5 * (2.0 * nf).ln(),
        density_coefficient: 8.0 * dd * sqrt_bez * nf.powf(2.5),
        density_alpha_cap: 1.0 / (4.0 * dd * nf.powi(5)),
    })
}

/// `(K_n, a_n)`.
pub fn constants_k_a(degrees: &[u32]) -> Result<(f64, f64)> {
    let c = theorem_constants(degrees)?;
    Ok((c.k_n, c.a_n))
}

/// `K_n (1 + ln a)^{1/2} / a`.
pub fn kappa_tilde_tail_bound(k_n: f64, a: f64) -> f64 {
    k_n * (1.0 + a.ln()).max(0.0).sqrt() / a
}

/// `K_n √(2n) (1 + ln(a/√(2n)))^{1/2} / a`.
pub fn kappa_tail_bound(k_n: f64, n: usize, a: f64) -> f64 {
    let p = (2.0 * n as f64).sqrt();
    k_n * p * (1.0 + (a / p).ln()).max(0.0).sqrt() / a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Tail,
    Expectation,
    Density,
    Weyl,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Tail => "tail",
            ExperimentKind::Expectation => "expectation",
            ExperimentKind::Density => "density",
            ExperimentKind::Weyl => "weyl",
        }
    }

    fn needs_optimizer(self) -> bool {
        self != ExperimentKind::Weyl
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tail" => Ok(ExperimentKind::Tail),
            "expectation" => Ok(ExperimentKind::Expectation),
            "density" => Ok(ExperimentKind::Density),
            "weyl" => Ok(ExperimentKind::Weyl),
            other => Err(Error::Config(format!("unknown experiment '{other}'"))),
        }
    }
}

/// Everything that determines an experiment's results.
///
/// The flat text form has one `key = value` per line; `#` starts a comment,
/// blank lines are ignored and lists are comma separated. Keys:
/// `n`, `degrees`, `replicates`, `seed`, `starts` (`auto` or an integer),
/// `tol`, `max_iter`, `fd_step`, `a_grid`, `alpha_grid`, `eta_grid`,
/// `kappa` (also compute `κ`), `bias_audit`, `output_dir` (empty for none).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub degrees: Vec<u32>,
    pub replicates: u64,
    pub seed: u64,
    pub optimizer: OptimizerOptions,
    pub a_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    pub eta_grid: Vec<f64>,
    pub compute_kappa: bool,
    /// Re-run every hundredth replicate with four times the starts.
    pub bias_audit: bool,
    pub output_dir: Option<PathBuf>,
}

fn log_grid(lo_exp: i32, hi_exp: i32, per_decade: u32) -> Vec<f64> {
    let steps = (hi_exp - lo_exp) as u32 * per_decade;
    (0..=steps)
        .map(|i| 10f64.powf(lo_exp as f64 + i as f64 / per_decade as f64))
        .collect()
}

impl ExperimentConfig {
    /// Desk-scale defaults: 10⁴ replicates, `a` from 1 to 10⁶, `α` spanning
    /// six decades below the CDF bound's validity cap.
    pub fn default_for(n: usize, degrees: Vec<u32>) -> Self {
        let cap = theorem_constants(&degrees).map(|c| c.density_alpha_cap).unwrap_or(1e-4);
        let alpha_grid = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 0.5]
            .iter()
            .map(|s| s * cap)
            .collect();
        ExperimentConfig {
            n,
            degrees,
            replicates: 10_000,
            seed: 1,
            optimizer: OptimizerOptions::default(),
            a_grid: log_grid(0, 6, 4),
            alpha_grid,
            eta_grid: vec![0.0, 0.25, 0.5, 1.0, 2.0],
            compute_kappa: false,
            bias_audit: true,
            output_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.degrees.len() != self.n {
            return Err(Error::Config(format!(
                "{} degrees given for n = {}",
                self.degrees.len(),
                self.n
            )));
        }
        if self.degrees.contains(&0) {
            return Err(Error::Config("degrees must be >= 1".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be >= 1".into()));
        }
        check_grid("a_grid", &self.a_grid, false)?;
        check_grid("alpha_grid", &self.alpha_grid, false)?;
        check_grid("eta_grid", &self.eta_grid, true)?;
        if !(self.optimizer.tol > 0.0 && self.optimizer.fd_step > 0.0) {
            return Err(Error::Config("tol and fd_step must be positive".into()));
        }
        Ok(())
    }

    pub fn parse_flat(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let get = |key: &str| pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let n: usize = parse_value("n", get("n").ok_or_else(|| Error::Config("missing key 'n'".into()))?)?;
        let degrees = parse_list::<u32>(
            "degrees",
            get("degrees").ok_or_else(|| Error::Config("missing key 'degrees'".into()))?,
        )?;
        let mut cfg = ExperimentConfig::default_for(n, degrees);
        for (k, v) in &pairs {
            if k != "n" && k != "degrees" {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overrides one key, as used by command-line flags.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n" => self.n = parse_value(key, value)?,
            "degrees" => self.degrees = parse_list(key, value)?,
            "replicates" => self.replicates = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "starts" => {
                self.optimizer.starts = if value == "auto" {
                    None
                } else {
                    Some(parse_value(key, value)?)
                }
            }
            "tol" => self.optimizer.tol = parse_value(key, value)?,
            "max_iter" => self.optimizer.max_iter = parse_value(key, value)?,
            "fd_step" => self.optimizer.fd_step = parse_value(key, value)?,
            "a_grid" => self.a_grid = parse_list(key, value)?,
            "alpha_grid" => self.alpha_grid = parse_list(key, value)?,
            "eta_grid" => self.eta_grid = parse_list(key, value)?,
            "kappa" => self.compute_kappa = parse_value(key, value)?,
            "bias_audit" => self.bias_audit = parse_value(key, value)?,
            "output_dir" => {
                self.output_dir = if value.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(value))
                }
            }
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Every effective value in the flat format; parsing it back gives the
    /// same config.
    pub fn to_flat(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(
            s,
            "degrees = {}",
            self.degrees.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(s, "replicates = {}", self.replicates);
        let _ = writeln!(s, "seed = {}", self.seed);
        match self.optimizer.starts {
            Some(k) => {
                let _ = writeln!(s, "starts = {k}");
            }
            None => {
                let _ = writeln!(s, "starts = auto");
            }
        }
        let _ = writeln!(s, "tol = {}", self.optimizer.tol);
        let _ = writeln!(s, "max_iter = {}", self.optimizer.max_iter);
        let _ = writeln!(s, "fd_step = {}", self.optimizer.fd_step);
        let _ = writeln!(s, "a_grid = {}", join(&self.a_grid));
        let _ = writeln!(s, "alpha_grid = {}", join(&self.alpha_grid));
        let _ = writeln!(s, "eta_grid = {}", join(&self.eta_grid));
        let _ = writeln!(s, "kappa = {}", self.compute_kappa);
        let _ = writeln!(s, "bias_audit = {}", self.bias_audit);
        let _ = writeln!(
            s,
            "output_dir = {}",
            self.output_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
        );
        s
    }

    /// `{experiment}_{n}_{degrees}_{seed}`, degrees joined by `-`.
    pub fn file_stem(&self, kind: ExperimentKind) -> String {
        let degrees = self.degrees.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("-");
        format!("{}_{}_{}_{}", kind.name(), self.n, degrees, self.seed)
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value for '{key}': '{value}'")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_value(key, v)).collect()
}

fn check_grid(name: &str, grid: &[f64], allow_zero: bool) -> Result<()> {
    for &g in grid {
        if !g.is_finite() || g < 0.0 || (g == 0.0 && !allow_zero) {
            return Err(Error::Config(format!("{name} entries must be positive, got {g}")));
        }
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("{name} must be strictly increasing")));
    }
    Ok(())
}

/// One replicate's outcome. `error` is set when the computation failed; the
/// row is kept either way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: u64,
    pub substream_id: u64,
    pub kappa_tilde: Option<f64>,
    pub kappa: Option<f64>,
    pub l_underline: Option<f64>,
    pub weyl_sq: f64,
    pub converged: bool,
    pub starts_used: usize,
    pub error: Option<String>,
}

fn run_replicate(cfg: &ExperimentConfig, kind: ExperimentKind, r: u64, start_factor: usize) -> ReplicateRecord {
    let mut rng = RngStream::new(cfg.seed, r).rng();
    let mut rec = ReplicateRecord {
        replicate: r,
        substream_id: r,
        kappa_tilde: None,
        kappa: None,
        l_underline: None,
        weyl_sq: f64::NAN,
        converged: true,
        starts_used: 0,
        error: None,
    };
    let f = match sample_system_with(&cfg.degrees, cfg.n, &mut rng) {
        Ok(f) => f,
        Err(e) => {
            rec.converged = false;
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    rec.weyl_sq = f.weyl_norm_sq();
    if !kind.needs_optimizer() {
        return rec;
    }
    // Extra audit starts extend the ordinary ones, so an audit can only
    // lower L̲ and raise κ̃.
    let mut starts = Vec::new();
    for _ in 0..start_factor {
        starts.extend(draw_starts(&f, &cfg.optimizer, &mut rng));
    }
    let report = if cfg.compute_kappa {
        condition_numbers_from(&f, &cfg.optimizer, &starts)
    } else {
        kappa_tilde_from(&f, &cfg.optimizer, &starts)
    };
    match report {
        Ok(rep) => {
            rec.kappa_tilde = rep.kappa_tilde;
            rec.kappa = rep.kappa;
            rec.l_underline = rep.l_underline;
            rec.converged = rep.converged;
            rec.starts_used = rep.starts_used;
        }
        Err(e) => {
            rec.converged = false;
            rec.error = Some(e.to_string());
        }
    }
    rec
}

const CHUNK: u64 = 250;

/// Runs all replicates, calling `on_chunk` with the records so far after
/// each chunk and `progress(done, total)` for reporting.
pub fn run_replicates(
    cfg: &ExperimentConfig,
    kind: ExperimentKind,
    progress: &(dyn Fn(u64, u64) + Sync),
    on_chunk: &mut dyn FnMut(&[ReplicateRecord]) -> Result<()>,
) -> Result<Vec<ReplicateRecord>> {
    cfg.validate()?;
    let total = cfg.replicates;
    let mut records = Vec::with_capacity(total as usize);
    let mut lo = 0;
    while lo < total {
        let hi = (lo + CHUNK).min(total);
        let chunk: Vec<ReplicateRecord> = (lo..hi)
            .into_par_iter()
            .map(|r| run_replicate(cfg, kind, r, 1))
            .collect();
        records.extend(chunk);
        on_chunk(&records)?;
        progress(hi, total);
        lo = hi;
    }
    Ok(records)
}

/// `records` as CSV with columns `replicate, substream_id, kappa_tilde,
/// kappa, L_underline, weyl_sq, converged, starts_used`; missing values are
/// empty fields.
pub fn records_to_csv(records: &[ReplicateRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "replicate",
        "substream_id",
        "kappa_tilde",
        "kappa",
        "L_underline",
        "weyl_sq",
        "converged",
        "starts_used",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        w.write_record([
            r.replicate.to_string(),
            r.substream_id.to_string(),
            opt(r.kappa_tilde),
            opt(r.kappa),
            opt(r.l_underline),
            r.weyl_sq.to_string(),
            r.converged.to_string(),
            r.starts_used.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

/// Fraction of a sample above a threshold with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub value: f64,
    pub se: f64,
    pub count: u64,
    pub total: u64,
}

impl Proportion {
    pub fn new(count: u64, total: u64) -> Self {
        let p = if total == 0 { 0.0 } else { count as f64 / total as f64 };
        let se = if total == 0 { 0.0 } else { (p * (1.0 - p) / total as f64).sqrt() };
        Proportion {
            value: p,
            se,
            count,
            total,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub a: f64,
    pub empirical_tail: Proportion,
    pub theoretical_bound: f64,
    /// `a` is above the threshold where the bound is proved.
    pub in_regime: bool,
    /// The bound is at least 1, so it says nothing.
    pub vacuous: bool,
    /// In regime and `empirical − 3 SE > bound`.
    pub violated: bool,
}

fn tail_table(values: &[f64], grid: &[f64], threshold: f64, bound: impl Fn(f64) -> f64) -> Vec<TailEstimate> {
    let total = values.len() as u64;
    grid.iter()
        .map(|&a| {
            let count = values.iter().filter(|&&v| v > a).count() as u64;
            let p = Proportion::new(count, total);
            let b = bound(a);
            let in_regime = a > threshold;
            TailEstimate {
                a,
                empirical_tail: p,
                theoretical_bound: b,
                in_regime,
                vacuous: b >= 1.0,
                violated: in_regime && p.value - 3.0 * p.se > b,
            }
        })
        .collect()
}

/// Values of a quantity from the rows where it was computed. Failed rows
/// count as `+∞` for condition numbers (they can only enlarge the tail).
fn column(records: &[ReplicateRecord], get: impl Fn(&ReplicateRecord) -> Option<f64>, failed: f64) -> Vec<f64> {
    records
        .iter()
        .map(|r| if r.error.is_some() { failed } else { get(r).unwrap_or(failed) })
        .collect()
}

pub fn kappa_tilde_tail(records: &[ReplicateRecord], cfg: &ExperimentConfig, c: &TheoremConstants) -> Vec<TailEstimate> {
    let v = column(records, |r| r.kappa_tilde, f64::INFINITY);
    tail_table(&v, &cfg.a_grid, c.a_n, |a| kappa_tilde_tail_bound(c.k_n, a))
}

pub fn kappa_tail(records: &[ReplicateRecord], cfg: &ExperimentConfig, c: &TheoremConstants) -> Vec<TailEstimate> {
    let v = column(records, |r| r.kappa, f64::INFINITY);
    tail_table(&v, &cfg.a_grid, c.kappa_threshold, |a| kappa_tail_bound(c.k_n, c.n, a))
}

/// Least-squares slope of `ln P̂(X ≥ x)` against `ln x` over the sample
/// points in the top decade `[max/10, max]` of the finite values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub points: usize,
    pub lower: f64,
    pub upper: f64,
}

pub fn top_decade_slope(values: &[f64]) -> Option<DecayFit> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite() && *x > 0.0).collect();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    let upper = *v.last()?;
    let lower = upper / 10.0;
    let first = v.partition_point(|&x| x < lower);
    // Survival at the i-th order statistic is (m − i)/m.
    let pts: Vec<(f64, f64)> = (first..m)
        .map(|i| (v[i].ln(), ((m - i) as f64 / m as f64).ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(DecayFit {
        slope: sxy / sxx,
        points: pts.len(),
        lower,
        upper,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectationSummary {
    pub mean_ln: McMean,
    pub bound: f64,
    /// `mean + 3 SE ≤ bound`.
    pub holds: bool,
}

fn ln_summary(values: &[f64], bound: f64) -> Option<ExpectationSummary> {
    let logs: Vec<f64> = values.iter().filter(|v| v.is_finite()).map(|v| v.ln()).collect();
    if logs.is_empty() {
        return None;
    }
    let mean_ln = McMean::from_samples(&logs);
    Some(ExpectationSummary {
        mean_ln,
        bound,
        holds: mean_ln.mean + 3.0 * mean_ln.se <= bound,
    })
}

pub fn ln_kappa_tilde_summary(records: &[ReplicateRecord], c: &TheoremConstants) -> Option<ExpectationSummary> {
    ln_summary(&column(records, |r| r.kappa_tilde, f64::NAN), c.expectation_bound)
}

pub fn ln_kappa_summary(records: &[ReplicateRecord], c: &TheoremConstants) -> Option<ExpectationSummary> {
    ln_summary(&column(records, |r| r.kappa, f64::NAN), c.expectation_bound_kappa)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfRow {
    pub alpha: f64,
    pub empirical: Proportion,
    pub bound: f64,
    pub in_regime: bool,
    pub violated: bool,
}

/// Empirical `P(L̲ < α)` against `8𝐃²𝒟^{1/2}n^{5/2}√α`. Failed rows count
/// as `L̲ = 0`.
pub fn l_underline_cdf(records: &[ReplicateRecord], cfg: &ExperimentConfig, c: &TheoremConstants) -> Vec<CdfRow> {
    let v = column(records, |r| r.l_underline, 0.0);
    let total = v.len() as u64;
    cfg.alpha_grid
        .iter()
        .map(|&alpha| {
            let p = Proportion::new(v.iter().filter(|&&l| l < alpha).count() as u64, total);
            let bound = c.density_coefficient * alpha.sqrt();
            let in_regime = alpha < c.density_alpha_cap;
            CdfRow {
                alpha,
                empirical: p,
                bound,
                in_regime,
                violated: in_regime && p.value - 3.0 * p.se > bound,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeylRow {
    pub eta: f64,
    /// `(1 + η) N`.
    pub threshold: f64,
    pub empirical: Proportion,
    pub bound: f64,
    pub violated: bool,
}

/// Empirical `P(‖f‖²_W ≥ (1 + η)N)` against `exp(−(N/2)(η − ln(1 + η)))`
/// (equal to 1 at `η = 0`).
pub fn weyl_table(records: &[ReplicateRecord], cfg: &ExperimentConfig, c: &TheoremConstants) -> Result<Vec<WeylRow>> {
    let v: Vec<f64> = records.iter().map(|r| r.weyl_sq).collect();
    let total = v.len() as u64;
    let dim = c.dim as f64;
    cfg.eta_grid
        .iter()
        .map(|&eta| {
            let threshold = (1.0 + eta) * dim;
            let p = Proportion::new(v.iter().filter(|&&w| w >= threshold).count() as u64, total);
            let bound = if eta == 0.0 { 1.0 } else { weyl_sq_tail_bound(eta, c.dim)? };
            Ok(WeylRow {
                eta,
                threshold,
                empirical: p,
                bound,
                violated: p.value - 3.0 * p.se > bound,
            })
        })
        .collect()
}

/// Relative tolerance allowed on the sandwich inequalities.
pub const SANDWICH_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichAudit {
    pub checked: u64,
    pub violations: u64,
    /// Largest of `(κ̃/√n)/κ` and `κ/(√(2n)κ̃)` over checked rows.
    pub worst_ratio: f64,
}

/// Checks `κ̃/√n ≤ κ ≤ √(2n) κ̃` on rows where both are known.
pub fn sandwich_audit(records: &[ReplicateRecord], n: usize) -> SandwichAudit {
    let (rn, r2n) = ((n as f64).sqrt(), (2.0 * n as f64).sqrt());
    let mut audit = SandwichAudit {
        checked: 0,
        violations: 0,
        worst_ratio: 0.0,
    };
    for r in records {
        let (Some(kt), Some(k)) = (r.kappa_tilde, r.kappa) else {
            continue;
        };
        if !(kt.is_finite() && k.is_finite()) {
            continue;
        }
        audit.checked += 1;
        let worst = (kt / rn / k).max(k / (r2n * kt));
        audit.worst_ratio = audit.worst_ratio.max(worst);
        if worst > 1.0 + SANDWICH_TOL {
            audit.violations += 1;
        }
    }
    audit
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub replicate: u64,
    pub kappa_tilde: f64,
    pub kappa_tilde_more_starts: f64,
}

/// Size of the optimizer's underestimate of `κ̃`, measured by re-running
/// every hundredth replicate with four times the starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasAudit {
    pub rows: Vec<AuditRow>,
    pub changed: u64,
    pub max_relative_increase: f64,
    pub mean_relative_increase: f64,
}

pub const AUDIT_STRIDE: u64 = 100;
pub const AUDIT_START_FACTOR: usize = 4;

pub fn bias_audit(cfg: &ExperimentConfig, records: &[ReplicateRecord]) -> BiasAudit {
    let picked: Vec<&ReplicateRecord> = records
        .iter()
        .filter(|r| r.replicate % AUDIT_STRIDE == 0 && r.error.is_none())
        .filter(|r| r.kappa_tilde.is_some_and(f64::is_finite))
        .collect();
    let rows: Vec<AuditRow> = picked
        .par_iter()
        .map(|r| {
            let redo = run_replicate(cfg, ExperimentKind::Tail, r.replicate, AUDIT_START_FACTOR);
            AuditRow {
                replicate: r.replicate,
                kappa_tilde: r.kappa_tilde.unwrap_or(f64::NAN),
                kappa_tilde_more_starts: redo.kappa_tilde.unwrap_or(f64::NAN),
            }
        })
        .collect();
    let incs: Vec<f64> = rows
        .iter()
        .map(|a| (a.kappa_tilde_more_starts / a.kappa_tilde - 1.0).max(0.0))
        .collect();
    BiasAudit {
        changed: incs.iter().filter(|&&x| x > 1e-9).count() as u64,
        max_relative_increase: incs.iter().copied().fold(0.0, f64::max),
        mean_relative_increase: if incs.is_empty() {
            0.0
        } else {
            incs.iter().sum::<f64>() / incs.len() as f64
        },
        rows,
    }
}

/// Analyses computed from the replicate records. Only those belonging to
/// the experiment (and `κ`-based ones when `κ` was computed) are filled.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub kappa_tilde_tail: Option<Vec<TailEstimate>>,
    pub kappa_tail: Option<Vec<TailEstimate>>,
    pub decay_fit: Option<DecayFit>,
    pub ln_kappa_tilde: Option<ExpectationSummary>,
    pub ln_kappa: Option<ExpectationSummary>,
    pub l_underline_cdf: Option<Vec<CdfRow>>,
    pub weyl: Option<Vec<WeylRow>>,
    pub sandwich: Option<SandwichAudit>,
    pub failed_replicates: u64,
    pub non_converged_replicates: u64,
    /// Number of bound comparisons that exceeded the bound by more than
    /// three standard errors.
    pub violations: u64,
}

pub fn summarize(kind: ExperimentKind, cfg: &ExperimentConfig, records: &[ReplicateRecord]) -> Result<Summary> {
    let c = theorem_constants(&cfg.degrees)?;
    let mut s = Summary {
        failed_replicates: records.iter().filter(|r| r.error.is_some()).count() as u64,
        non_converged_replicates: records.iter().filter(|r| !r.converged).count() as u64,
        ..Summary::default()
    };
    let has_kappa = records.iter().any(|r| r.kappa.is_some());
    match kind {
        ExperimentKind::Tail => {
            s.kappa_tilde_tail = Some(kappa_tilde_tail(records, cfg, &c));
            s.decay_fit = top_decade_slope(&column(records, |r| r.kappa_tilde, f64::NAN));
            if has_kappa {
                s.kappa_tail = Some(kappa_tail(records, cfg, &c));
            }
        }
        ExperimentKind::Expectation => {
            s.ln_kappa_tilde = ln_kappa_tilde_summary(records, &c);
            if has_kappa {
                s.ln_kappa = ln_kappa_summary(records, &c);
            }
        }
        ExperimentKind::Density => s.l_underline_cdf = Some(l_underline_cdf(records, cfg, &c)),
        ExperimentKind::Weyl => s.weyl = Some(weyl_table(records, cfg, &c)?),
    }
    if has_kappa {
        s.sandwich = Some(sandwich_audit(records, cfg.n));
    }
    let tails = s.kappa_tilde_tail.iter().chain(&s.kappa_tail).flatten();
    s.violations = tails.filter(|t| t.violated).count() as u64
        + s.l_underline_cdf.iter().flatten().filter(|r| r.violated).count() as u64
        + s.weyl.iter().flatten().filter(|r| r.violated).count() as u64
        + [s.ln_kappa_tilde, s.ln_kappa].iter().flatten().filter(|e| !e.holds).count() as u64;
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix_ms: u128,
    pub wall_clock_seconds: f64,
}

/// Everything needed to reproduce and audit a run. Apart from `timing` the
/// content is a function of the config alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: ExperimentKind,
    pub status: RunStatus,
    pub code_version: String,
    pub rng: String,
    pub config: ExperimentConfig,
    pub config_flat: String,
    /// The bounds are proved for `n ≥ 3`; smaller `n` is reported but not
    /// held to them.
    pub out_of_theorem_scope: bool,
    pub constants: TheoremConstants,
    pub replicates: Vec<ReplicateRecord>,
    pub summary: Option<Summary>,
    pub bias_audit: Option<BiasAudit>,
    pub timing: Timing,
}

impl RunManifest {
    pub fn new(kind: ExperimentKind, cfg: &ExperimentConfig) -> Result<Self> {
        Ok(RunManifest {
            experiment: kind,
            status: RunStatus::Running,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            rng: RNG_DESCRIPTION.to_string(),
            config: cfg.clone(),
            config_flat: cfg.to_flat(),
            out_of_theorem_scope: cfg.n < 3,
            constants: theorem_constants(&cfg.degrees)?,
            replicates: Vec::new(),
            summary: None,
            bias_audit: None,
            timing: Timing {
                started_unix_ms: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_millis())
                    .unwrap_or(0),
                wall_clock_seconds: 0.0,
            },
        })
    }

    /// Writes through a temporary file so an interrupted run never leaves a
    /// truncated manifest.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.partial");
        fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub manifest: RunManifest,
    pub csv: String,
    pub csv_path: Option<PathBuf>,
    pub manifest_path: Option<PathBuf>,
}

/// Runs an experiment end to end. With an `output_dir` the manifest is
/// written before any computation, rewritten after every chunk of
/// replicates and finalized with the summary; the CSV is written at the end.
pub fn run_experiment(
    kind: ExperimentKind,
    cfg: &ExperimentConfig,
    progress: &(dyn Fn(u64, u64) + Sync),
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let clock = Instant::now();
    let mut manifest = RunManifest::new(kind, cfg)?;
    let paths = match &cfg.output_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let stem = cfg.file_stem(kind);
            Some((dir.join(format!("{stem}.csv")), dir.join(format!("{stem}.json"))))
        }
        None => None,
    };
    if let Some((_, mpath)) = &paths {
        manifest.write(mpath)?;
    }
    let records = run_replicates(cfg, kind, progress, &mut |so_far| {
        if let Some((_, mpath)) = &paths {
            manifest.replicates = so_far.to_vec();
            manifest.timing.wall_clock_seconds = clock.elapsed().as_secs_f64();
            manifest.write(mpath)?;
        }
        Ok(())
    })?;
    manifest.summary = Some(summarize(kind, cfg, &records)?);
    if cfg.bias_audit && kind.needs_optimizer() {
        manifest.bias_audit = Some(bias_audit(cfg, &records));
    }
    manifest.replicates = records;
    manifest.status = RunStatus::Complete;
    manifest.timing.wall_clock_seconds = clock.elapsed().as_secs_f64();
    let csv = records_to_csv(&manifest.replicates)?;
    if let Some((cpath, mpath)) = &paths {
        fs::write(cpath, &csv)?;
        manifest.write(mpath)?;
    }
    Ok(ExperimentOutcome {
        manifest,
        csv,
        csv_path: paths.as_ref().map(|p| p.0.clone()),
        manifest_path: paths.map(|p| p.1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_for_three_quadrics() {
        let c = theorem_constants(&[2, 2, 2]).unwrap();
        let k = 8.0 * 4.0 * 8f64.sqrt() * 30f64.sqrt() * 3f64.powf(2.5) + 1.0;
        assert!((c.k_n - k).abs() < 1e-9);
        assert!((c.k_n - 7728.85).abs() < 0.01);
        assert!((c.a_n - 2366.2).abs() < 0.1);
        assert!(c.k_n > c.a_n);
        assert!((c.expectation_bound - 12.279).abs() < 1e-3);
        assert!((c.expectation_bound_kappa - c.expectation_bound - 0.5 * 6f64.ln()).abs() < 1e-12);
        assert!((c.density_alpha_cap - 1.0 / 3888.0).abs() < 1e-15);
        assert!((c.density_coefficient - 1410.9).abs() < 0.1);
    }

    #[test]
    fn flat_config_round_trips() {
        let text = "# quadrics\nn = 3\ndegrees = 2,2,2\nreplicates = 20  # small\nstarts = 16\nkappa = true\n";
        let cfg = ExperimentConfig::parse_flat(text).unwrap();
        assert_eq!(cfg.replicates, 20);
        assert_eq!(cfg.optimizer.starts, Some(16));
        assert!(cfg.compute_kappa);
        let again = ExperimentConfig::parse_flat(&cfg.to_flat()).unwrap();
        assert_eq!(cfg, again);
        assert!(ExperimentConfig::parse_flat("n = 3\ndegrees = 2,2\n").is_err());
        assert!(ExperimentConfig::parse_flat("n = 2\ndegrees = 2,2\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::parse_flat("n = 2\ndegrees = 2,2\na_grid = 5,3\n").is_err());
        assert!(ExperimentConfig::parse_flat("n = 2\ndegrees = 2,2\nreplicates = 0\n").is_err());
    }

    #[test]
    fn file_names() {
        let cfg = ExperimentConfig::default_for(3, vec![2, 3, 2]);
        assert_eq!(cfg.file_stem(ExperimentKind::Tail), "tail_3_2-3-2_1");
    }

    #[test]
    fn tail_table_flags() {
        let vals = [1.0, 5.0, 50.0, 5000.0];
        let t = tail_table(&vals, &[2.0, 100.0], 10.0, |a| 10.0 / a);
        assert_eq!(t[0].empirical_tail.count, 3);
        assert!(t[0].vacuous && !t[0].in_regime);
        assert_eq!(t[1].empirical_tail.count, 1);
        assert!(t[1].in_regime && !t[1].vacuous);
        // 0.25 − 3·0.2165 < 0.1
        assert!(!t[1].violated);
    }

    #[test]
    fn decay_fit_on_exact_pareto() {
        // Quantiles of a Pareto(1) law: survival exactly (m − i)/m.
        let m = 1000;
        let vals: Vec<f64> = (0..m).map(|i| m as f64 / (m - i) as f64).collect();
        let fit = top_decade_slope(&vals).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-9, "{fit:?}");
        assert!(top_decade_slope(&[1.0, 2.0]).is_none());
    }

    #[test]
    fn sandwich_audit_counts() {
        let mk = |kt: f64, k: f64| ReplicateRecord {
            replicate: 0,
            substream_id: 0,
            kappa_tilde: Some(kt),
            kappa: Some(k),
            l_underline: None,
            weyl_sq: 1.0,
            converged: true,
            starts_used: 1,
            error: None,
        };
        let recs = [mk(2.0, 2.0), mk(2.0, 0.5), mk(1.0, 10.0)];
        let a = sandwich_audit(&recs, 2);
        assert_eq!(a.checked, 3);
        assert_eq!(a.violations, 2);
    }

    #[test]
    fn weyl_run_is_reproducible() {
        let mut cfg = ExperimentConfig::default_for(2, vec![2, 2]);
        cfg.replicates = 300;
        let a = run_experiment(ExperimentKind::Weyl, &cfg, &|_, _| {}).unwrap();
        let b = run_experiment(ExperimentKind::Weyl, &cfg, &|_, _| {}).unwrap();
        assert_eq!(a.csv, b.csv);
        let rows = a.manifest.summary.unwrap().weyl.unwrap();
        assert_eq!(rows[0].bound, 1.0);
        assert!(rows.windows(2).all(|w| w[0].bound >= w[1].bound));
        assert!(a.manifest.out_of_theorem_scope);
    }

    #[test]
    fn small_tail_run_writes_artifacts() {
        let dir = std::env::temp_dir().join(format!("polycond-exp-{}", std::process::id()));
        let mut cfg = ExperimentConfig::default_for(2, vec![2, 2]);
        cfg.replicates = 12;
        cfg.optimizer.starts = Some(6);
        cfg.compute_kappa = true;
        cfg.output_dir = Some(dir.clone());
        let out = run_experiment(ExperimentKind::Tail, &cfg, &|_, _| {}).unwrap();
        let text = fs::read_to_string(out.manifest_path.unwrap()).unwrap();
        let back: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back.status, RunStatus::Complete);
        assert_eq!(back.replicates.len(), 12);
        let csv = fs::read_to_string(out.csv_path.unwrap()).unwrap();
        assert_eq!(csv.lines().count(), 13);
        assert!(csv.starts_with("replicate,substream_id,kappa_tilde,kappa,L_underline,weyl_sq,converged,starts_used"));
        let s = back.summary.unwrap();
        assert_eq!(s.sandwich.unwrap().violations, 0);
        assert!(back.replicates.iter().all(|r| r.kappa_tilde.unwrap() >= 1.0));
        fs::remove_dir_all(dir).unwrap();
    }
}
