use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nestgibbs::config::Experiment;
use nestgibbs::conjugate::GaussianMeasure;
use nestgibbs::gibbs::{gamma_max, gibbs_posterior, pooled_gibbs, solve_lambda_for_radius};
use nestgibbs::protocol::{serialize_measure, Direction};
use nestgibbs::verify::gaussian_report;
use nestgibbs::{
    aggregate, assign_lambdas, full_report, run_chain, run_forward, sup_log_distance, ChainConfig, ChannelTransform,
    DiscreteMeasure, Error, LambdaSpec, ReportOptions,
};

const EXIT_ERROR: u8 = 1;
const EXIT_CHECK_FAILED: u8 = 2;

#[derive(Parser)]
#[command(name = "nestgibbs", version, about = "Run and verify nested Gibbs chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    Discrete,
    Gaussian,
}

#[derive(Subcommand)]
enum Command {
    /// Run the chain, relay the final measure back and verify it.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Backend::Discrete)]
        backend: Backend,
        /// Samples per client for the optimality probes.
        #[arg(long, default_value_t = 1000)]
        probe_samples: usize,
    },
    /// Pool every client's data and compute the single-step benchmark.
    Centralized {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Backend::Discrete)]
        backend: Backend,
    },
    /// Find the lambda whose Gibbs measure sits at a given KL radius.
    SolveLambda {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = positive_f64, allow_negative_numbers = true)]
        gamma: f64,
        /// Client whose risks and reference are used.
        #[arg(long, default_value_t = 1)]
        client: usize,
    },
    /// Rerun the chain with quantized links for each bit width.
    QuantizeSweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated bit widths; `inf` means an undistorted link.
        #[arg(long, value_delimiter = ',', default_value = "inf,52,32,16,8,4,2,1")]
        bits: Vec<Bits>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug)]
enum Bits {
    Exact,
    Width(u32),
}

impl std::str::FromStr for Bits {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "inf" => Ok(Bits::Exact),
            t => match t.parse::<u32>() {
                Ok(b) if b >= 1 => Ok(Bits::Width(b)),
                _ => Err(format!("expected a positive integer or `inf`, got `{t}`")),
            },
        }
    }
}

impl std::fmt::Display for Bits {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Bits::Exact => f.write_str("inf"),
            Bits::Width(b) => write!(f, "{b}"),
        }
    }
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(_) => Err("must be positive".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_ERROR) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            backend,
            probe_samples,
        } => cmd_run(&config, &out, seed, backend, probe_samples),
        Command::Centralized { config, out, backend } => cmd_centralized(&config, &out, backend),
        Command::SolveLambda { config, gamma, client } => cmd_solve_lambda(&config, gamma, client),
        Command::QuantizeSweep { config, bits, out } => cmd_quantize_sweep(&config, &bits, &out),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

type CmdResult = Result<bool, Error>;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn measure_json(m: &DiscreteMeasure) -> Vec<u8> {
    let mut bytes = serialize_measure(m);
    bytes.push(b'\n');
    bytes
}

fn cmd_run(config: &Path, out: &Path, seed: u64, backend: Backend, probe_samples: usize) -> CmdResult {
    let exp = Experiment::load(config)?;
    if backend == Backend::Gaussian {
        return run_gaussian(&exp, out);
    }
    let cfg = exp.discrete()?;
    let t = run_chain(&cfg)?;
    let report = full_report(&t, &cfg, ReportOptions { seed, probe_samples });

    write(&out.join("transcript.json"), t.to_json() + "\n")?;
    write(&out.join("final_measure.json"), measure_json(&t.final_measure))?;
    for (k, g) in t.per_client.iter().enumerate() {
        write(&out.join(format!("measures/client_{}.json", k + 1)), measure_json(&g.measure))?;
    }
    let mut distortion = String::from("direction,from,to,kl_received_to_sent,sup_log_diff\n");
    for h in &report.hop_distortion {
        let dir = match h.direction {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        };
        let sup = h.sup_log_diff.map(|v| format!("{v:e}")).unwrap_or_default();
        let _ = writeln!(distortion, "{dir},{},{},{:e},{sup}", h.from_id, h.to_id, h.kl_received_to_sent);
    }
    write(&out.join("distortion.csv"), distortion)?;
    write(&out.join("report.json"), report.to_json() + "\n")?;
    write(&out.join("report.csv"), report.to_csv())?;

    for c in &report.checks {
        let metric = c.metric.map(|m| format!("{m:.3e}")).unwrap_or_else(|| "-".into());
        println!("{:<22} {:<7} {metric}", c.name, format!("{:?}", c.verdict).to_lowercase());
    }
    Ok(report.all_passed())
}

fn gaussian_json(g: &GaussianMeasure) -> String {
    g.to_json() + "\n"
}

fn run_gaussian(exp: &Experiment, out: &Path) -> CmdResult {
    let setup = exp.gaussian()?;
    let steps = setup.chain_steps()?;
    let report = gaussian_report(&setup)?;
    for (k, g) in steps.iter().enumerate() {
        write(&out.join(format!("measures/client_{}.json", k + 1)), gaussian_json(g))?;
    }
    write(&out.join("final_measure.json"), gaussian_json(steps.last().expect("nonempty chain")))?;
    write(&out.join("report.json"), report.to_json() + "\n")?;
    let mut csv = String::from("check,metric,tolerance,verdict\n");
    for c in &report.checks {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        let verdict = format!("{:?}", c.verdict).to_lowercase();
        let _ = writeln!(csv, "{},{},{},{verdict}", c.name, fmt(c.metric), fmt(c.tolerance));
        println!("{:<22} {verdict}", c.name);
    }
    write(&out.join("report.csv"), csv)?;
    Ok(report.all_passed())
}

/// `lambda0`, or the sole client's explicit lambda for a single-client chain.
fn benchmark_lambda(cfg: &ChainConfig) -> Result<f64, Error> {
    if let Some(l0) = cfg.lambda0 {
        return Ok(l0);
    }
    match cfg.clients.as_slice() {
        [only] => match only.lambda {
            LambdaSpec::Explicit(l) => Ok(l),
            LambdaSpec::Auto => Err(missing_lambda0()),
        },
        _ => Err(missing_lambda0()),
    }
}

fn missing_lambda0() -> Error {
    Error::InvalidConfig {
        field: "lambda0".into(),
        message: "required for the centralized benchmark".into(),
    }
}

fn cmd_centralized(config: &Path, out: &Path, backend: Backend) -> CmdResult {
    let exp = Experiment::load(config)?;
    if backend == Backend::Gaussian {
        let setup = exp.gaussian()?;
        let g = if setup.lambda0.is_none() && setup.datasets.len() == 1 {
            nestgibbs::conjugate::gaussian_pooled(&setup.datasets[0], setup.lambdas[0], &setup.q1)?
        } else {
            setup.pooled()?
        };
        write(&out.join("centralized_measure.json"), gaussian_json(&g))?;
        println!("mean {:?}", g.mean().as_slice());
        return Ok(true);
    }
    let cfg = exp.discrete()?;
    let (datasets, loss) = cfg.pooling_inputs().map_err(Error::PreconditionUnmet)?;
    let lambda0 = benchmark_lambda(&cfg)?;
    let pooled = pooled_gibbs(&aggregate(&datasets)?, loss, &cfg.q1, lambda0)?;
    write(&out.join("centralized_measure.json"), measure_json(&pooled))?;
    println!("lambda0 {lambda0}");
    println!("kl_to_reference {:.9}", nestgibbs::kl_divergence(&pooled, &cfg.q1)?);
    Ok(true)
}

fn cmd_solve_lambda(config: &Path, gamma: f64, client: usize) -> CmdResult {
    let cfg = Experiment::load(config)?.discrete()?;
    if client == 0 || client > cfg.k() {
        return Err(Error::InvalidConfig {
            field: "client".into(),
            message: format!("must be in 1..={}", cfg.k()),
        });
    }
    let reference = if client == 1 {
        cfg.q1.clone()
    } else {
        let lambdas = assign_lambdas(&cfg)?;
        run_forward(&cfg, &lambdas)?.transcript().references[client - 1].clone()
    };
    let risks = cfg.clients[client - 1].source.risks(reference.space())?;
    match solve_lambda_for_radius(&risks, &reference, gamma) {
        Ok(lambda) => {
            let kl = gibbs_posterior(&risks, &reference, lambda)?.kl_to_reference;
            println!("lambda {lambda:.9}");
            println!("kl {kl:.9}");
            Ok(true)
        }
        Err(e @ Error::RadiusUnreachable { .. }) => {
            println!("gamma_max {:.6}", gamma_max(&risks, &reference)?);
            Err(e)
        }
        Err(e) => Err(e),
    }
}

fn cmd_quantize_sweep(config: &Path, bits: &[Bits], out: &Path) -> CmdResult {
    let base = Experiment::load(config)?.discrete()?;
    let prune_epsilon = match base.channel {
        ChannelTransform::Quantize { prune_epsilon, .. } => prune_epsilon,
        ChannelTransform::Identity => 0.0,
    };
    let mut exact_cfg = base.clone();
    exact_cfg.channel = ChannelTransform::Identity;
    let exact = run_chain(&exact_cfg)?.final_measure;

    let hops = 2 * (base.k() - 1);
    let mut csv = String::from("bits,sup_log_diff,total_hop_kl");
    for h in 1..=hops {
        let _ = write!(csv, ",hop_{h}_kl");
    }
    csv.push('\n');
    let mut previous: Option<f64> = None;
    let mut monotone = true;
    for &b in bits {
        let mut cfg = base.clone();
        cfg.channel = match b {
            Bits::Exact => ChannelTransform::Identity,
            Bits::Width(bits) => ChannelTransform::Quantize { bits, prune_epsilon },
        };
        let t = run_chain(&cfg)?;
        // Pruning can shrink the support, which makes the log distance unbounded.
        let diff = match sup_log_distance(&t.final_measure, &exact) {
            Ok(d) => d,
            Err(Error::SupportMismatch(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        let kls: Vec<f64> = t.hop_distortion.iter().map(|h| h.kl_received_to_sent).collect();
        let total: f64 = kls.iter().sum();
        let _ = write!(csv, "{b},{diff:e},{total:e}");
        for k in &kls {
            let _ = write!(csv, ",{k:e}");
        }
        csv.push('\n');
        if let (Bits::Width(_), Some(p)) = (b, previous) {
            monotone &= diff >= p;
        }
        if let Bits::Width(_) = b {
            previous = Some(diff);
        }
        println!("bits {b:>4}  sup_log_diff {diff:.3e}  total_hop_kl {total:.3e}");
    }
    write(&out.join("quantize_sweep.csv"), &csv)?;
    println!("distortion grows as bits shrink: {monotone}");
    Ok(true)
}
