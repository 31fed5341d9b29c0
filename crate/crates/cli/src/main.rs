use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use babylon::couplings::{load_couplings, write_couplings, Boundary, ModelSpec};
use babylon::estimator::{
    formula_free_energy, formula_observables, sweep, EstimatorConfig, ProposalKind,
};
use babylon::oracle::{default_enum_cap, exact_observables, EnumOptions};
use babylon::pspin::{generate_pspin3, load_pspin3, nested_free_energy, write_pspin3};
use babylon::verify::{self, VerifyConfig};
use babylon::{exact_free_energy_pspin3, CouplingMatrix, Error, ExternalField};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

const EXIT_USAGE: u8 = 2;
const EXIT_VALIDATION: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;
const EXIT_VERIFICATION: u8 = 5;

#[derive(Parser)]
#[command(name = "babylon", version, about = "Exact Gaussian-integral free energies for Ising spin systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a coupling (or 3-tensor) file and its metadata sidecar.
    Gen(GenArgs),
    /// Free energy and Gibbs observables by exhaustive enumeration.
    Exact(ExactArgs),
    /// Monte Carlo estimate of the free energy via the Gaussian-field formula.
    Estimate(EstimateArgs),
    /// Monte Carlo estimates of magnetizations and pair correlations.
    Observables(EstimateArgs),
    /// Free-energy estimates on an inverse-temperature grid (common random numbers).
    Sweep(SweepArgs),
    /// 3-spin free energy by reduction to exactly solved two-body instances.
    Pspin3(Pspin3Args),
    /// Run the built-in verification suites.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Sk,
    Ea,
    Hopfield,
    File,
    Pspin3,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    model: ModelKind,
    #[arg(long)]
    n: Option<usize>,
    /// Lattice side lengths, e.g. 3,3.
    #[arg(long, value_delimiter = ',')]
    dims: Vec<usize>,
    #[arg(long, value_enum, default_value = "free")]
    boundary: BoundaryArg,
    /// Number of Hopfield patterns.
    #[arg(long)]
    patterns: Option<usize>,
    /// Fraction of triples present (pspin3).
    #[arg(long, default_value_t = 1.0)]
    density: f64,
    /// Source coupling file (model `file`).
    #[arg(long)]
    path: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundaryArg {
    Free,
    Periodic,
}

#[derive(Args)]
struct ModelArgs {
    /// Coupling file.
    #[arg(long)]
    couplings: PathBuf,
    #[arg(long)]
    beta: f64,
    /// Scalar field, or a file with one value per site.
    #[arg(long, default_value = "0")]
    h: String,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExactArgs {
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct SamplingArgs {
    #[arg(long, default_value_t = 1_000_000)]
    samples: u64,
    /// Omit to draw a fresh seed; it is reported either way.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "on")]
    antithetic: Switch,
    /// Number of block-bootstrap resamples.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Field distribution: the prior, a tilt from the external field alone,
    /// or a tilt fitted by a short pilot run.
    #[arg(long, value_enum, default_value = "adaptive")]
    proposal: ProposalArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProposalArg {
    Prior,
    Independent,
    Adaptive,
}

impl From<ProposalArg> for ProposalKind {
    fn from(p: ProposalArg) -> Self {
        match p {
            ProposalArg::Prior => ProposalKind::Prior,
            ProposalArg::Independent => ProposalKind::Independent,
            ProposalArg::Adaptive => ProposalKind::Adaptive,
        }
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    couplings: PathBuf,
    #[arg(long)]
    beta_min: f64,
    #[arg(long)]
    beta_max: f64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    steps: u64,
    #[arg(long, default_value = "0")]
    h: String,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Pspin3Args {
    /// 3-tensor file ("i j k value" lines).
    #[arg(long)]
    tensor: PathBuf,
    #[arg(long)]
    beta: f64,
    #[arg(long, default_value = "0")]
    h: String,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Also report the enumeration value.
    #[arg(long)]
    exact: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    #[arg(long, default_value_t = 200_000)]
    samples: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Flip the sign of the constant term in the formula suite (mutation check).
    #[arg(long, hide = true)]
    inject_sign_flip: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Lib(Error),
    Usage(String),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Lib(Error::Io(e.into()))
    }
}

type CliResult = Result<(), Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => EXIT_USAGE,
        Error::Numerical(_) | Error::NotPsd { .. } => EXIT_NUMERICAL,
        Error::Parse { .. }
        | Error::Validation(_)
        | Error::CapExceeded { .. }
        | Error::DimensionMismatch { .. }
        | Error::Io(_) => EXIT_VALIDATION,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Exact(a) => cmd_exact(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Observables(a) => cmd_observables(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Pspin3(a) => cmd_pspin3(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(EXIT_VERIFICATION)
        }
    }
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit(out, &text)
}

fn read_couplings(path: &Path) -> Result<CouplingMatrix, Error> {
    load_couplings(BufReader::new(File::open(path)?))
}

/// A number is a uniform field; anything else names a file of per-site values.
fn parse_field(arg: &str) -> Result<ExternalField, Error> {
    if let Ok(h) = arg.trim().parse::<f64>() {
        return Ok(ExternalField::Uniform(h));
    }
    let text = std::fs::read_to_string(arg)?;
    let values = text
        .lines()
        .enumerate()
        .flat_map(|(k, line)| {
            let content = line.split('#').next().unwrap_or("");
            content
                .split_whitespace()
                .map(move |tok| {
                    tok.parse::<f64>().map_err(|_| Error::Parse {
                        line: k + 1,
                        message: format!("bad field value {tok:?}"),
                    })
                })
                .collect::<Vec<_>>()
        })
        .collect::<Result<Vec<f64>, Error>>()?;
    Ok(ExternalField::PerSite(values))
}

fn estimator_config(s: &SamplingArgs, jobs: usize) -> EstimatorConfig {
    EstimatorConfig::new(s.samples, resolve_seed(s.seed))
        .antithetic(matches!(s.antithetic, Switch::On))
        .bootstrap(s.bootstrap)
        .jobs(jobs)
        .proposal(s.proposal.into())
}

fn cmd_gen(a: GenArgs) -> CliResult {
    let seed = resolve_seed(a.seed);
    let need_n = || a.n.ok_or_else(|| Failure::Usage("--n is required for this model".into()));
    if let ModelKind::Pspin3 = a.model {
        let t = generate_pspin3(need_n()?, a.density, seed)?;
        let mut w = BufWriter::new(File::create(&a.out)?);
        write_pspin3(&t, &mut w)?;
        w.flush()?;
        let meta = json!({
            "model": { "kind": "pspin3", "n": t.n(), "density": a.density, "seed": seed },
            "seed": seed,
            "generator": concat!("babylon ", env!("CARGO_PKG_VERSION")),
        });
        return write_sidecar(&a.out, &meta);
    }
    let model = match a.model {
        ModelKind::Sk => ModelSpec::Sk { n: need_n()?, seed },
        ModelKind::Ea => {
            if a.dims.is_empty() {
                return Err(Failure::Usage("--dims is required for the ea model".into()));
            }
            let boundary = match a.boundary {
                BoundaryArg::Free => Boundary::Free,
                BoundaryArg::Periodic => Boundary::Periodic,
            };
            ModelSpec::EaLattice {
                dims: a.dims.clone(),
                boundary,
                seed,
            }
        }
        ModelKind::Hopfield => ModelSpec::Hopfield {
            n: need_n()?,
            patterns: a
                .patterns
                .ok_or_else(|| Failure::Usage("--patterns is required for the hopfield model".into()))?,
            seed,
        },
        ModelKind::File => ModelSpec::File {
            path: a
                .path
                .clone()
                .ok_or_else(|| Failure::Usage("--path is required for the file model".into()))?,
        },
        ModelKind::Pspin3 => unreachable!(),
    };
    let g = model.build()?;
    let mut w = BufWriter::new(File::create(&a.out)?);
    write_couplings(&g, &mut w)?;
    w.flush()?;
    let meta = json!({
        "model": model,
        "n": g.n(),
        "seed": seed,
        "generator": concat!("babylon ", env!("CARGO_PKG_VERSION")),
    });
    write_sidecar(&a.out, &meta)
}

fn write_sidecar(out: &Path, meta: &serde_json::Value) -> CliResult {
    let mut path = out.as_os_str().to_owned();
    path.push(".meta.json");
    let mut text = serde_json::to_string_pretty(meta)?;
    text.push('\n');
    std::fs::write(PathBuf::from(path), text)?;
    Ok(())
}

fn cmd_exact(a: ExactArgs) -> CliResult {
    let m = a.model;
    let g = read_couplings(&m.couplings)?;
    let h = parse_field(&m.h)?;
    let opts = EnumOptions {
        cap: default_enum_cap(),
        jobs: m.jobs,
    };
    let obs = exact_observables(&g, m.beta, &h, &opts)?;
    let n = g.n();
    let correlations: Vec<&[f64]> = obs.correlations.chunks(n).collect();
    emit_json(
        m.out.as_deref(),
        &json!({
            "n": n,
            "beta": m.beta,
            "h": h,
            "free_energy": obs.free_energy,
            "free_energy_per_site": obs.free_energy / n as f64,
            "magnetizations": obs.magnetizations,
            "correlations": correlations,
        }),
    )
}

fn cmd_estimate(a: EstimateArgs) -> CliResult {
    let m = &a.model;
    let g = read_couplings(&m.couplings)?;
    let h = parse_field(&m.h)?;
    let cfg = estimator_config(&a.sampling, m.jobs);
    let r = formula_free_energy(&g, m.beta, &h, &cfg)?;
    let n = g.n();
    emit_json(
        m.out.as_deref(),
        &json!({
            "n": n,
            "beta": m.beta,
            "h": h,
            "value": r.value,
            "free_energy_per_site": r.value / n as f64,
            "std_error": r.std_error,
            "samples": r.samples,
            "seed": r.seed,
            "ess": r.ess,
            "low_ess": r.low_ess,
            "bias_estimate": r.bias_estimate,
            "bootstrap_std_error": r.bootstrap_std_error,
            "antithetic": cfg.antithetic,
            "proposal": r.proposal,
            "pilot_samples": r.pilot_samples,
            "elapsed_secs": r.elapsed_secs,
        }),
    )
}

fn cmd_observables(a: EstimateArgs) -> CliResult {
    let m = &a.model;
    let g = read_couplings(&m.couplings)?;
    let h = parse_field(&m.h)?;
    let cfg = estimator_config(&a.sampling, m.jobs);
    let r = formula_observables(&g, m.beta, &h, &cfg)?;
    let n = g.n();
    emit_json(
        m.out.as_deref(),
        &json!({
            "n": n,
            "beta": m.beta,
            "h": h,
            "magnetizations": r.magnetizations,
            "magnetization_errors": r.magnetization_errors,
            "correlations": r.correlations.chunks(n).collect::<Vec<_>>(),
            "correlation_errors": r.correlation_errors.chunks(n).collect::<Vec<_>>(),
            "samples": r.samples,
            "seed": r.seed,
            "ess": r.ess,
            "low_ess": r.low_ess,
            "proposal": r.proposal,
            "pilot_samples": r.pilot_samples,
            "elapsed_secs": r.elapsed_secs,
        }),
    )
}

fn beta_grid(min: f64, max: f64, steps: u64) -> Vec<f64> {
    if steps == 1 {
        return vec![min];
    }
    let span = max - min;
    (0..steps)
        .map(|k| min + span * k as f64 / (steps - 1) as f64)
        .collect()
}

fn cmd_sweep(a: SweepArgs) -> CliResult {
    let g = read_couplings(&a.couplings)?;
    let h = parse_field(&a.h)?;
    let cfg = estimator_config(&a.sampling, a.jobs);
    let grid = beta_grid(a.beta_min, a.beta_max, a.steps);
    let results = sweep(&g, &grid, &h, &cfg)?;
    let n = g.n() as f64;
    match a.format {
        Format::Csv => {
            let mut text = String::from("beta,f_per_site,std_error,ess\n");
            for (b, r) in grid.iter().zip(&results) {
                text.push_str(&format!("{b},{},{},{}\n", r.value / n, r.std_error / n, r.ess));
            }
            emit(a.out.as_deref(), &text)
        }
        Format::Json => {
            let rows: Vec<_> = grid
                .iter()
                .zip(&results)
                .map(|(b, r)| {
                    json!({
                        "beta": b,
                        "f_per_site": r.value / n,
                        "std_error": r.std_error / n,
                        "ess": r.ess,
                    })
                })
                .collect();
            emit_json(a.out.as_deref(), &json!({ "seed": cfg.seed, "samples": results[0].samples, "rows": rows }))
        }
    }
}

fn cmd_pspin3(a: Pspin3Args) -> CliResult {
    let t = load_pspin3(BufReader::new(File::open(&a.tensor)?))?;
    let h = parse_field(&a.h)?;
    let cfg = estimator_config(&a.sampling, a.jobs);
    let cap = default_enum_cap();
    let r = nested_free_energy(&t, a.beta, &h, &cfg, cap)?;
    let exact = if a.exact {
        let opts = EnumOptions { cap, jobs: a.jobs };
        Some(exact_free_energy_pspin3(&t, a.beta, &h, &opts)?)
    } else {
        None
    };
    emit_json(
        a.out.as_deref(),
        &json!({
            "n": t.n(),
            "beta": a.beta,
            "h": h,
            "value": r.value,
            "std_error": r.std_error,
            "samples": r.samples,
            "seed": r.seed,
            "ess": r.ess,
            "low_ess": r.low_ess,
            "bias_estimate": r.bias_estimate,
            "bootstrap_std_error": r.bootstrap_std_error,
            "exact": exact,
            "proposal": r.proposal,
            "pilot_samples": r.pilot_samples,
            "elapsed_secs": r.elapsed_secs,
        }),
    )
}

fn cmd_verify(a: VerifyArgs) -> CliResult {
    let cfg = VerifyConfig {
        seed: resolve_seed(a.seed),
        trials: a.trials as usize,
        samples: a.samples,
        jobs: a.jobs,
        inject_sign_flip: a.inject_sign_flip,
    };
    let report = verify::run(&cfg)?;
    emit_json(a.out.as_deref(), &report)?;
    for s in &report.suites {
        eprintln!(
            "[{}] {}: {}/{} (need {}) {}",
            if s.passed { "PASS" } else { "FAIL" },
            s.name,
            s.successes,
            s.cases,
            s.required,
            s.detail
        );
    }
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<&str> = report.suites.iter().filter(|s| !s.passed).map(|s| s.name.as_str()).collect();
        Err(Failure::Verification(failed.join(", ")))
    }
}
