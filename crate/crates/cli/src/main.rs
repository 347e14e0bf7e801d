use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use polycond::condition::{condition_numbers, kappa, kappa_tilde, ConditionReport, OptimizerOptions};
use polycond::experiments::{run_experiment, theorem_constants, ExperimentConfig, ExperimentKind, RunManifest};
use polycond::poly::{read_jsonl, write_jsonl, PolySystem};
use polycond::random::{sample_system, RngStream};
use polycond::verify::{all_passed, render_text, run_suite, Suite};

/// Exit code for a usage, input or I/O error.
const USAGE: u8 = 2;
/// Exit code when a verification check or a bound comparison fails.
const FAILED: u8 = 1;

#[derive(Parser)]
#[command(name = "polycond", version, about = "Condition numbers of random real polynomial systems")]
struct Cli {
    /// Maximum number of worker threads (default: available parallelism).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample systems from the Kostlan model as JSON lines.
    Sample(SampleArgs),
    /// Compute condition numbers of the systems in a JSONL file.
    Kappa(KappaArgs),
    /// Tail of the condition number against the tail bound.
    Tail(ExperimentArgs),
    /// Mean of ln(condition number) against the expectation bound.
    Expectation(ExperimentArgs),
    /// Distribution function of the minimum of L near zero.
    Density(ExperimentArgs),
    /// Large deviations of the squared Weyl norm.
    Weyl(ExperimentArgs),
    /// Run self-check suites.
    Verify(VerifyArgs),
    /// Summarize experiment manifests.
    Report(ReportArgs),
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    n: usize,
    /// Comma-separated degrees, one per polynomial.
    #[arg(long, value_delimiter = ',')]
    degrees: Vec<u32>,
    #[arg(long, default_value_t = 1)]
    count: u64,
    #[arg(long, env = "POLYCOND_SEED", default_value_t = 0)]
    seed: u64,
    /// Output file, `-` for standard output.
    #[arg(long, default_value = "-")]
    out: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Kappa,
    Tilde,
    Both,
}

#[derive(Args)]
struct KappaArgs {
    /// JSONL input, `-` for standard input.
    #[arg(long)]
    input: String,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, value_enum, default_value_t = Which::Tilde)]
    which: Which,
    /// Seed for the optimizer's start points.
    #[arg(long, env = "POLYCOND_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "-")]
    out: String,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Flat `key = value` config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    degrees: Option<Vec<u32>>,
    #[arg(long)]
    replicates: Option<u64>,
    #[arg(long, env = "POLYCOND_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Also compute the max-norm condition number (slower).
    #[arg(long)]
    kappa: bool,
    #[arg(long)]
    no_bias_audit: bool,
    #[arg(long, value_delimiter = ',')]
    a_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    alpha_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    eta_grid: Option<Vec<f64>>,
    /// Directory for the CSV and JSON manifest.
    #[arg(long, default_value = "results")]
    output_dir: PathBuf,
    /// Where to print the summary JSON, `-` for standard output.
    #[arg(long, default_value = "-")]
    out: String,
}

#[derive(Args)]
struct VerifyArgs {
    /// covariance, matrix, geometry, rmt or all.
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long, env = "POLYCOND_SEED", default_value_t = 1)]
    seed: u64,
    /// Also write the results as JSON; with `-` the JSON goes to standard
    /// output and the table to standard error.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Manifest files written by an experiment.
    #[arg(required = true)]
    manifests: Vec<PathBuf>,
}

fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(anyhow::anyhow!(msg.into()))
}

fn write_output(out: &str, text: &str) -> anyhow::Result<()> {
    if out == "-" {
        io::stdout().write_all(text.as_bytes())?;
        io::stdout().flush()?;
    } else {
        fs::write(out, text).with_context(|| format!("writing {out}"))?;
    }
    Ok(())
}

fn read_input(input: &str) -> anyhow::Result<String> {
    let mut s = String::new();
    if input == "-" {
        io::stdin().read_to_string(&mut s)?;
    } else {
        s = match fs::read_to_string(input) {
            Ok(s) => s,
            Err(e) => return usage(format!("cannot read {input}: {e}")),
        };
    }
    Ok(s)
}

fn cmd_sample(a: &SampleArgs) -> anyhow::Result<u8> {
    if a.degrees.len() != a.n {
        return usage(format!("--n {} needs {} degrees, got {}", a.n, a.n, a.degrees.len()));
    }
    let mut systems = Vec::with_capacity(a.count as usize);
    for i in 0..a.count {
        match sample_system(&a.degrees, a.n, &RngStream::new(a.seed, i)) {
            Ok(f) => systems.push(f),
            Err(e) => return usage(e.to_string()),
        }
    }
    write_output(&a.out, &write_jsonl(&systems))?;
    Ok(0)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn sandwich_ok(rep: &ConditionReport, n: usize) -> String {
    match (rep.kappa_tilde, rep.kappa) {
        (Some(kt), Some(k)) => {
            let nf = n as f64;
            let tol = 1.0 + polycond::experiments::SANDWICH_TOL;
            (kt / nf.sqrt() <= k * tol && k <= (2.0 * nf).sqrt() * kt * tol).to_string()
        }
        _ => String::new(),
    }
}

fn cmd_kappa(a: &KappaArgs) -> anyhow::Result<u8> {
    let text = read_input(&a.input)?;
    let systems: Vec<PolySystem> = match read_jsonl(&text) {
        Ok(s) => s,
        Err(e) => return usage(format!("cannot parse {}: {e}", a.input)),
    };
    if !(a.tol > 0.0) {
        return usage("--tol must be positive");
    }
    let opts = OptimizerOptions {
        starts: a.starts,
        tol: a.tol,
        seed: a.seed,
        ..OptimizerOptions::default()
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "index",
        "n",
        "degrees",
        "kappa_tilde",
        "kappa",
        "L_underline",
        "weyl_l2",
        "weyl_max",
        "converged",
        "starts_used",
        "converged_starts",
        "certification",
        "sandwich_ok",
        "error",
    ])?;
    for (i, f) in systems.iter().enumerate() {
        eprintln!("kappa: system {}/{}", i + 1, systems.len());
        let degrees = f.degrees().iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",");
        let res = match a.which {
            Which::Tilde => kappa_tilde(f, &opts),
            Which::Kappa => kappa(f, &opts),
            Which::Both => condition_numbers(f, &opts),
        };
        let row = match res {
            Ok(rep) => vec![
                i.to_string(),
                f.n().to_string(),
                degrees,
                fmt_opt(rep.kappa_tilde),
                fmt_opt(rep.kappa),
                fmt_opt(rep.l_underline),
                rep.weyl_l2.to_string(),
                rep.weyl_max.to_string(),
                rep.converged.to_string(),
                rep.starts_used.to_string(),
                rep.converged_starts.to_string(),
                "heuristic".to_string(),
                sandwich_ok(&rep, f.n()),
                String::new(),
            ],
            Err(e) => {
                let mut row = vec![i.to_string(), f.n().to_string(), degrees];
                row.extend(std::iter::repeat_n(String::new(), 5));
                row.extend(["false".into(), "0".into(), "0".into(), "heuristic".into(), String::new()]);
                row.push(e.to_string());
                row
            }
        };
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
    write_output(&a.out, &String::from_utf8(bytes)?)?;
    Ok(0)
}

fn experiment_config(a: &ExperimentArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = match fs::read_to_string(path) {
                Ok(t) => t,
                Err(e) => return usage(format!("cannot read {}: {e}", path.display())),
            };
            match ExperimentConfig::parse_flat(&text) {
                Ok(c) => c,
                Err(e) => return usage(format!("{}: {e}", path.display())),
            }
        }
        None => {
            let (Some(n), Some(degrees)) = (a.n, a.degrees.clone()) else {
                return usage("either --config or both --n and --degrees are required");
            };
            ExperimentConfig::default_for(n, degrees)
        }
    };
    let set = |cfg: &mut ExperimentConfig, k: &str, v: String| -> anyhow::Result<()> {
        match cfg.set(k, &v) {
            Ok(()) => Ok(()),
            Err(e) => usage(e.to_string()),
        }
    };
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    if let Some(n) = a.n {
        let regrid = a.config.is_none() || n != cfg.n;
        set(&mut cfg, "n", n.to_string())?;
        if regrid && a.alpha_grid.is_none() {
            cfg.alpha_grid = ExperimentConfig::default_for(n, cfg.degrees.clone()).alpha_grid;
        }
    }
    if let Some(d) = &a.degrees {
        set(&mut cfg, "degrees", d.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","))?;
        if a.alpha_grid.is_none() {
            cfg.alpha_grid = ExperimentConfig::default_for(cfg.n, d.clone()).alpha_grid;
        }
    }
    if let Some(r) = a.replicates {
        set(&mut cfg, "replicates", r.to_string())?;
    }
    if let Some(s) = a.seed {
        set(&mut cfg, "seed", s.to_string())?;
    }
    if let Some(s) = a.starts {
        set(&mut cfg, "starts", s.to_string())?;
    }
    if let Some(t) = a.tol {
        set(&mut cfg, "tol", t.to_string())?;
    }
    if a.kappa {
        cfg.compute_kappa = true;
    }
    if a.no_bias_audit {
        cfg.bias_audit = false;
    }
    if let Some(g) = &a.a_grid {
        set(&mut cfg, "a_grid", join(g))?;
    }
    if let Some(g) = &a.alpha_grid {
        set(&mut cfg, "alpha_grid", join(g))?;
    }
    if let Some(g) = &a.eta_grid {
        set(&mut cfg, "eta_grid", join(g))?;
    }
    cfg.output_dir = Some(a.output_dir.clone());
    if let Err(e) = cfg.validate() {
        return usage(e.to_string());
    }
    Ok(cfg)
}

fn cmd_experiment(kind: ExperimentKind, a: &ExperimentArgs) -> anyhow::Result<u8> {
    let cfg = experiment_config(a)?;
    if kind == ExperimentKind::Density {
        let cap = theorem_constants(&cfg.degrees)?.density_alpha_cap;
        if let Some(bad) = cfg.alpha_grid.iter().find(|&&x| x >= cap) {
            return usage(format!("alpha {bad} is outside the bound's range alpha < {cap}"));
        }
    }
    let name = kind.name();
    let outcome = run_experiment(kind, &cfg, &|done, total| eprintln!("{name}: {done}/{total} replicates"))?;
    if let (Some(c), Some(m)) = (&outcome.csv_path, &outcome.manifest_path) {
        eprintln!("{name}: wrote {} and {}", c.display(), m.display());
    }
    let summary = outcome.manifest.summary.as_ref().expect("completed run has a summary");
    let json = serde_json::json!({
        "experiment": name,
        "out_of_theorem_scope": outcome.manifest.out_of_theorem_scope,
        "constants": outcome.manifest.constants,
        "summary": summary,
        "bias_audit": outcome.manifest.bias_audit,
    });
    write_output(&a.out, &(serde_json::to_string_pretty(&json)? + "\n"))?;
    Ok(if summary.violations > 0 && !outcome.manifest.out_of_theorem_scope {
        FAILED
    } else {
        0
    })
}

fn cmd_verify(a: &VerifyArgs) -> anyhow::Result<u8> {
    let suite: Suite = match a.suite.parse() {
        Ok(s) => s,
        Err(e) => return usage(e.to_string()),
    };
    if a.trials == Some(0) {
        return usage("--trials must be positive");
    }
    let results = run_suite(suite, a.trials, a.seed)?;
    let text = render_text(&results);
    let json = serde_json::to_string_pretty(&results)? + "\n";
    match a.out.as_deref() {
        Some("-") => {
            eprint!("{text}");
            write_output("-", &json)?;
        }
        Some(path) => {
            print!("{text}");
            write_output(path, &json)?;
        }
        None => print!("{text}"),
    }
    Ok(if all_passed(&results) { 0 } else { FAILED })
}

fn report_one(path: &Path) -> anyhow::Result<String> {
    use std::fmt::Write as _;
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return usage(format!("cannot read {}: {e}", path.display())),
    };
    let m: RunManifest = match serde_json::from_str(&text) {
        Ok(m) => m,
        Err(e) => return usage(format!("{} is not a manifest: {e}", path.display())),
    };
    let c = &m.constants;
    let mut s = String::new();
    writeln!(s, "== {} ({}) ==", path.display(), m.experiment.name())?;
    writeln!(
        s,
        "n = {}, degrees = {:?}, replicates = {}/{}, seed = {}, status = {:?}",
        m.config.n,
        m.config.degrees,
        m.replicates.len(),
        m.config.replicates,
        m.config.seed,
        m.status
    )?;
    if m.out_of_theorem_scope {
        writeln!(s, "note: the bounds are proved for n >= 3; rows below are informational")?;
    }
    writeln!(
        s,
        "K_n = {:.6e}, a_n = {:.6e}, N = {}, Bezout = {}, max degree = {}",
        c.k_n, c.a_n, c.dim, c.bezout, c.max_degree
    )?;
    let Some(sum) = &m.summary else {
        writeln!(s, "run incomplete: no summary")?;
        return Ok(s);
    };
    writeln!(
        s,
        "failed replicates = {}, non-converged = {}, bound violations = {}",
        sum.failed_replicates, sum.non_converged_replicates, sum.violations
    )?;
    for (label, table) in [("kappa_tilde", &sum.kappa_tilde_tail), ("kappa", &sum.kappa_tail)] {
        if let Some(rows) = table {
            writeln!(s, "tail of {label}:")?;
            writeln!(s, "  {:>12} {:>12} {:>10} {:>12}  flags", "a", "P(> a)", "SE", "bound")?;
            for r in rows {
                let mut flags = Vec::new();
                if !r.in_regime {
                    flags.push("out-of-regime");
                }
                if r.vacuous {
                    flags.push("vacuous");
                }
                if r.violated {
                    flags.push("VIOLATED");
                }
                writeln!(
                    s,
                    "  {:>12.4e} {:>12.4e} {:>10.2e} {:>12.4e}  {}",
                    r.a,
                    r.empirical_tail.value,
                    r.empirical_tail.se,
                    r.theoretical_bound,
                    flags.join(",")
                )?;
            }
        }
    }
    if let Some(f) = &sum.decay_fit {
        writeln!(
            s,
            "log-log tail slope over [{:.4e}, {:.4e}]: {:.4} ({} points)",
            f.lower, f.upper, f.slope, f.points
        )?;
    }
    for (label, e) in [("ln kappa_tilde", &sum.ln_kappa_tilde), ("ln kappa", &sum.ln_kappa)] {
        if let Some(e) = e {
            writeln!(
                s,
                "mean {label} = {:.4} +- {:.4} (bound {:.4}, {})",
                e.mean_ln.mean,
                e.mean_ln.se,
                e.bound,
                if e.holds { "holds" } else { "VIOLATED" }
            )?;
        }
    }
    if let Some(rows) = &sum.l_underline_cdf {
        writeln!(s, "P(L_underline < alpha):")?;
        for r in rows {
            writeln!(
                s,
                "  alpha {:>11.4e}: {:.4e} +- {:.2e} (bound {:.4e}){}",
                r.alpha,
                r.empirical.value,
                r.empirical.se,
                r.bound,
                if r.violated { " VIOLATED" } else { "" }
            )?;
        }
    }
    if let Some(rows) = &sum.weyl {
        writeln!(s, "P(weyl_sq >= (1+eta)N):")?;
        for r in rows {
            writeln!(
                s,
                "  eta {:>5}: {:.4e} +- {:.2e} (bound {:.4e}){}",
                r.eta,
                r.empirical.value,
                r.empirical.se,
                r.bound,
                if r.violated { " VIOLATED" } else { "" }
            )?;
        }
    }
    if let Some(a) = &sum.sandwich {
        writeln!(
            s,
            "sandwich: {} checked, {} violations, worst ratio {:.6}",
            a.checked, a.violations, a.worst_ratio
        )?;
    }
    if let Some(b) = &m.bias_audit {
        writeln!(
            s,
            "optimizer bias audit ({} replicates, 4x starts): {} changed, max relative increase {:.3e}, mean {:.3e}",
            b.rows.len(),
            b.changed,
            b.max_relative_increase,
            b.mean_relative_increase
        )?;
    }
    Ok(s)
}

fn cmd_report(a: &ReportArgs) -> anyhow::Result<u8> {
    let mut out = String::new();
    for p in &a.manifests {
        out.push_str(&report_one(p)?);
    }
    write_output("-", &out)?;
    Ok(0)
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return usage("--jobs must be at least 1");
        }
        if rayon::ThreadPoolBuilder::new().num_threads(j).build_global().is_err() {
            bail!("could not configure the thread pool");
        }
    }
    match &cli.command {
        Command::Sample(a) => cmd_sample(a),
        Command::Kappa(a) => cmd_kappa(a),
        Command::Tail(a) => cmd_experiment(ExperimentKind::Tail, a),
        Command::Expectation(a) => cmd_experiment(ExperimentKind::Expectation, a),
        Command::Density(a) => cmd_experiment(ExperimentKind::Density, a),
        Command::Weyl(a) => cmd_experiment(ExperimentKind::Weyl, a),
        Command::Verify(a) => cmd_verify(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(USAGE)
        }
    }
}
