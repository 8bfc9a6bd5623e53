mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use ldp_rr_core::{
    alpha, boundary_exponent, circulant_mechanism, epsilon_of, escape_probability,
    exact_escape_probability, feasibility_curve, minmax_curve, ml_estimate, mmse_estimate,
    phi_circulant_spectral, phi_lower_bound, phi_matrix, phi_star, random_eps_private,
    step_mechanism, write_provenance, CirculantSpec, Distribution, EmpiricalType, Error, Estimator,
    Mechanism, Metric, TradeoffPoint,
};
use serde_json::json;

use config::{Sweep, SweepConfig};

/// Exit status 2 for bad input, 3 when the computation itself fails.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(String),
    /// Reader went away (e.g. `| head`); not an error.
    Closed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::ConvergenceFailure(_)
            | Error::TrialFailed { .. }
            | Error::RetriesExhausted(_) => Failure::Runtime(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::BrokenPipe {
            Failure::Closed
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type Res<T> = Result<T, Failure>;

#[derive(Parser)]
#[command(
    name = "ldp-rr",
    version,
    about = "Randomized-response channels: losses, bounds, simulations"
)]
struct Cli {
    /// Worker threads for Monte Carlo runs (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a mechanism and report its privacy level and phi.
    Mechanism(MechanismArgs),
    /// Trade-off curves: lower bounds against what the step mechanism achieves.
    Bounds(BoundsArgs),
    /// Convergence sweeps and escape-probability runs.
    Simulate(SimulateArgs),
    /// Estimate the source distribution from privatized data.
    Estimate(EstimateArgs),
}

#[derive(Args, Clone)]
struct EpsArgs {
    /// Privacy level.
    #[arg(long, conflicts_with = "eps_exp")]
    eps: Option<f64>,
    /// `e^eps`, e.g. `--eps-exp 3` for eps = ln 3.
    #[arg(long)]
    eps_exp: Option<f64>,
}

impl EpsArgs {
    fn get(&self) -> Res<Option<f64>> {
        let eps = match (self.eps, self.eps_exp) {
            (Some(e), _) => Some(e),
            (None, Some(b)) if b > 1.0 => Some(b.ln()),
            (None, Some(b)) => {
                return Err(Failure::Config(format!("--eps-exp must exceed 1, got {b}")))
            }
            (None, None) => None,
        };
        if let Some(e) = eps {
            check_eps(e)?;
        }
        Ok(eps)
    }

    fn require(&self) -> Res<f64> {
        self.get()?
            .ok_or_else(|| Failure::Config("one of --eps or --eps-exp is required".into()))
    }
}

#[derive(Args)]
#[command(group(ArgGroup::new("kind").required(true).args(["step", "circulant", "random"])))]
struct MechanismArgs {
    #[arg(long)]
    step: bool,
    /// First row of a circulant channel, comma separated.
    #[arg(long, value_name = "W1,W2,...")]
    circulant: Option<String>,
    /// Random eps-private channel.
    #[arg(long)]
    random: bool,
    #[arg(short, long)]
    k: Option<usize>,
    #[command(flatten)]
    eps: EpsArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the mechanism JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("regime").required(true).args(["feasibility", "minmax"])))]
struct BoundsArgs {
    #[arg(long)]
    feasibility: bool,
    #[arg(long)]
    minmax: bool,
    #[arg(short, long)]
    k: usize,
    /// Uniform source (feasibility).
    #[arg(long, conflicts_with = "p")]
    uniform: bool,
    /// Source distribution, comma separated (feasibility).
    #[arg(long)]
    p: Option<String>,
    /// Smallest allowed source probability (minmax).
    #[arg(long)]
    p0: Option<f64>,
    /// `start:stop:step`, inclusive.
    #[arg(long, conflicts_with_all = ["eps", "eps_exp"])]
    eps_grid: Option<String>,
    #[command(flatten)]
    eps: EpsArgs,
    /// One of kl, mse, tv; all three when omitted.
    #[arg(long)]
    metric: Option<Metric>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON sweep configuration; flags override its fields.
    #[arg(long, conflicts_with = "escape")]
    config: Option<PathBuf>,
    /// Measure how often the raw estimate leaves the simplex.
    #[arg(long)]
    escape: bool,
    #[arg(short, long)]
    k: Option<usize>,
    #[command(flatten)]
    eps: EpsArgs,
    /// Source distribution, comma separated (defaults to uniform for --escape).
    #[arg(long)]
    p: Option<String>,
    /// Sample size for --escape.
    #[arg(long)]
    n: Option<u64>,
    /// Comma-separated sample sizes, ascending.
    #[arg(long)]
    n_grid: Option<String>,
    /// Accepts scientific notation, e.g. 1e6.
    #[arg(long, value_parser = parse_count)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated loss metrics (kl, hellinger, pearson, triangular, tv-f, mse, tv).
    #[arg(long)]
    metrics: Option<String>,
    /// Comma-separated estimators (ml, mmse, raw-clipped).
    #[arg(long)]
    estimators: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("data").required(true).args(["samples", "counts"])))]
struct EstimateArgs {
    /// File with one 1-based output symbol per line.
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Output counts, comma separated.
    #[arg(long)]
    counts: Option<String>,
    /// Mechanism JSON file; the step mechanism with -k/--eps otherwise.
    #[arg(long)]
    mechanism: Option<PathBuf>,
    #[arg(short, long)]
    k: Option<usize>,
    #[command(flatten)]
    eps: EpsArgs,
    #[arg(long, default_value = "ml")]
    estimator: Estimator,
    /// Print the ML and MMSE estimates side by side.
    #[arg(long)]
    compare: bool,
}

pub(crate) fn check_eps(eps: f64) -> Res<()> {
    if eps.is_finite() && eps > 0.0 {
        Ok(())
    } else {
        Err(Failure::Config(format!(
            "eps must be finite and positive, got {eps}"
        )))
    }
}

fn parse_count(s: &str) -> Result<u64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("not a number: {s}"))?;
    if v.fract() != 0.0 || !(0.0..=1e15).contains(&v) {
        return Err(format!("not a whole count: {s}"));
    }
    Ok(v as u64)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Res<Vec<T>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Failure::Config(format!("bad {what} entry `{}`", x.trim())))
        })
        .collect()
}

fn parse_grid(s: &str) -> Res<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::Config(format!("bad grid `{s}`, expected start:stop:step")))?;
    let [start, stop, step] = parts[..] else {
        return Err(Failure::Config(format!(
            "bad grid `{s}`, expected start:stop:step"
        )));
    };
    if !(step > 0.0 && start > 0.0 && stop >= start) {
        return Err(Failure::Config(format!(
            "grid `{s}` is empty or not positive"
        )));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    // Index-based, then rounded so 0.1:4:0.1 prints as 3.9 rather than 3.9000000000000004.
    Ok((0..count)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

macro_rules! say {
    ($($arg:tt)*) => {
        writeln!(io::stdout(), $($arg)*)?
    };
}

fn output(path: &Option<PathBuf>) -> Res<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| {
            Failure::Config(format!("cannot create {}: {e}", p.display()))
        })?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn cmd_mechanism(a: MechanismArgs) -> Res<()> {
    let eps = a.eps.get()?;
    let need_k = || a.k.ok_or_else(|| Failure::Config("-k is required".into()));
    let need_eps =
        || eps.ok_or_else(|| Failure::Config("one of --eps or --eps-exp is required".into()));
    let mut circulant = None;
    let w = if a.step {
        step_mechanism(need_k()?, need_eps()?)?
    } else if a.random {
        random_eps_private(need_k()?, need_eps()?, a.seed)?
    } else {
        let row: Vec<f64> = parse_list(a.circulant.as_deref().unwrap_or_default(), "row")?;
        let spec = CirculantSpec::new(Distribution::new(row)?);
        let w = circulant_mechanism(&spec)?;
        circulant = Some(spec);
        w
    };

    let json = w.to_json();
    match &a.out {
        Some(p) => std::fs::write(p, format!("{json}\n"))?,
        None => say!("{json}"),
    }
    let phi = phi_matrix(&w);
    let e = epsilon_of(&w);
    say!("epsilon(W) = {e}");
    for row in phi.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        say!("Phi row: {}", cells.join(" "));
    }
    say!("phi(W) = {}", phi.phi);
    if e.is_finite() {
        let k = w.k();
        say!("phi_star(K, eps) = {}", phi_star(k, e)?);
        say!("phi lower bound(K, eps) = {}", phi_lower_bound(k, e)?);
    }
    if let Some(spec) = circulant {
        let spectral = phi_circulant_spectral(&spec)?;
        say!(
            "spectral phi = {spectral}, direct phi = {}, difference {:.3e}",
            phi.phi,
            (spectral - phi.phi).abs()
        );
    }
    Ok(())
}

fn cmd_bounds(a: BoundsArgs) -> Res<()> {
    let grid = match (&a.eps_grid, a.eps.get()?) {
        (Some(g), _) => parse_grid(g)?,
        (None, Some(e)) => vec![e],
        (None, None) => {
            return Err(Failure::Config(
                "give --eps, --eps-exp or --eps-grid".into(),
            ))
        }
    };
    let metrics = match a.metric {
        Some(m) => vec![m],
        None => Metric::ALL.to_vec(),
    };
    let mut points: Vec<TradeoffPoint> = Vec::new();
    if a.feasibility {
        let p = match (&a.p, a.uniform) {
            (Some(s), _) => Distribution::new(parse_list(s, "probability")?)?,
            (None, true) => Distribution::uniform(a.k)?,
            (None, false) => return Err(Failure::Config("give --uniform or --p".into())),
        };
        if p.len() != a.k {
            return Err(Failure::Config(format!(
                "p has {} entries but K = {}",
                p.len(),
                a.k
            )));
        }
        p.require_support(1e-12)?;
        for m in metrics {
            points.extend(feasibility_curve(m, &p, &grid)?);
        }
    } else {
        let p0 =
            a.p0.ok_or_else(|| Failure::Config("--minmax needs --p0".into()))?;
        for m in metrics {
            points.extend(minmax_curve(m, a.k, p0, &grid)?);
        }
    }
    let mut out = output(&a.out)?;
    write_provenance(&mut out, None)?;
    writeln!(out, "{}", TradeoffPoint::CSV_HEADER)?;
    for pt in &points {
        writeln!(out, "{}", pt.csv_row())?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Res<()> {
    if a.escape {
        return cmd_escape(a);
    }
    let mut c = match &a.config {
        Some(path) => SweepConfig::load(path)?,
        None => SweepConfig::default(),
    };
    if a.k.is_some() {
        c.k = a.k;
    }
    if let Some(e) = a.eps.get()? {
        c.epsilon = Some(e);
    }
    if let Some(p) = &a.p {
        c.p = Some(parse_list(p, "probability")?);
    }
    if let Some(g) = &a.n_grid {
        c.n_grid = Some(parse_list(g, "sample size")?);
    }
    if a.trials.is_some() {
        c.trials = a.trials;
    }
    if a.seed.is_some() {
        c.seed = a.seed;
    }
    if let Some(m) = &a.metrics {
        c.metrics = Some(m.split(',').map(|s| s.trim().to_string()).collect());
    }
    if let Some(e) = &a.estimators {
        c.estimators = Some(parse_list(e, "estimator")?);
    }
    if a.out.is_some() {
        c.output = a.out.clone();
    }
    let s = Sweep::resolve(c)?;

    let result = ldp_rr_core::convergence_sweep(
        &s.p,
        &s.w,
        &s.n_grid,
        &s.metrics,
        &s.estimators,
        s.trials,
        s.seed,
    )?;
    let mut out = output(&s.output)?;
    result.write_csv(&mut out, Some(s.seed))?;
    out.flush()?;
    drop(out);

    let n_max = *s.n_grid.last().expect("grid checked nonempty");
    let mut summary = Vec::new();
    for m in &s.metrics {
        let predicted = alpha(m.family(), &s.p, &s.w)?;
        for &est in &s.estimators {
            if let Some(row) = result.find(n_max, m.name(), est) {
                summary.push(format!(
                    "n={n_max} {} {}: normalized {:.4} vs alpha {:.4} ({:+.1}%)",
                    m.name(),
                    est.name(),
                    row.normalized,
                    predicted,
                    100.0 * (row.normalized / predicted - 1.0)
                ));
            }
        }
    }
    let text = summary.join("\n");
    // Keep stdout clean for the CSV when it goes there.
    if s.output.is_some() {
        say!("{text}");
    } else {
        eprintln!("{text}");
    }
    Ok(())
}

fn cmd_escape(a: SimulateArgs) -> Res<()> {
    let eps = a.eps.require()?;
    let p = match (&a.p, a.k) {
        (Some(s), _) => Distribution::new(parse_list(s, "probability")?)?,
        (None, Some(k)) => Distribution::uniform(k)?,
        (None, None) => return Err(Failure::Config("give -k or --p".into())),
    };
    if let Some(k) = a.k {
        if k != p.len() {
            return Err(Failure::Config(format!(
                "p has {} entries but K = {k}",
                p.len()
            )));
        }
    }
    p.require_support(1e-12)?;
    let n =
        a.n.ok_or_else(|| Failure::Config("--escape needs --n".into()))?;
    let trials = a.trials.unwrap_or(100_000);
    let seed = a.seed.unwrap_or(0);
    let w = step_mechanism(p.len(), eps)?;
    let (est, se) = escape_probability(&p, &w, n, trials, seed)?;
    let exponent = boundary_exponent(&p, &w)?;
    let bound = (-(n as f64) * exponent).exp();
    say!("escape probability {est} (std error {se}, {trials} trials, seed {seed})");
    if let Ok(exact) = exact_escape_probability(&p, &w, n) {
        say!("exact by enumeration {exact}");
    }
    say!("boundary exponent {exponent}, bound exp(-n*exponent) = {bound}");
    Ok(())
}

fn read_samples(path: &PathBuf) -> Res<Vec<i64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| {
                Failure::Config(format!("line {}: not an integer: `{}`", i + 1, l.trim()))
            })
        })
        .collect()
}

fn cmd_estimate(a: EstimateArgs) -> Res<()> {
    let w = match &a.mechanism {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            Mechanism::from_json(&text)?
        }
        None => {
            let k =
                a.k.ok_or_else(|| Failure::Config("give --mechanism or -k with --eps".into()))?;
            step_mechanism(k, a.eps.require()?)?
        }
    };
    if let Some(k) = a.k {
        if k != w.k() {
            return Err(Failure::Config(format!(
                "mechanism has K = {}, but -k {k}",
                w.k()
            )));
        }
    }
    let t = match (&a.samples, &a.counts) {
        (Some(path), _) => EmpiricalType::from_samples(&read_samples(path)?, w.k())?,
        (None, Some(c)) => EmpiricalType::from_counts(parse_list(c, "count")?)?,
        (None, None) => unreachable!("clap requires one of them"),
    };
    if t.k() != w.k() {
        return Err(Failure::Config(format!(
            "{} counts for a K = {} mechanism",
            t.k(),
            w.k()
        )));
    }
    let value = if a.compare {
        json!({
            "n": t.n(),
            "ml": ml_estimate(&t, &w)?.as_slice(),
            "mmse": mmse_estimate(&t, &w)?.as_slice(),
        })
    } else {
        json!({
            "n": t.n(),
            "estimator": a.estimator.name(),
            "p_hat": a.estimator.apply(&t, &w)?.as_slice(),
        })
    };
    say!(
        "{}",
        serde_json::to_string_pretty(&value).expect("json value serializes")
    );
    Ok(())
}

fn run(cli: Cli) -> Res<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    match cli.cmd {
        Command::Mechanism(a) => cmd_mechanism(a),
        Command::Bounds(a) => cmd_bounds(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Estimate(a) => cmd_estimate(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Closed) => ExitCode::SUCCESS,
    }
}
