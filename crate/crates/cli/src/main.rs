use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fsrm::device::{NoiseModel, SettingMode};
use fsrm::estimators::{Pooling, Quantity, Scheme};
use fsrm::io::write_json;
use fsrm_cli::commands::{self, DEFAULT_TWIST, REFERENCE_PORT_FIDELITIES};
use fsrm_cli::config::*;
use fsrm_cli::error::{CliError, CliResult};
use fsrm_cli::output::{converge_csv, emit, json, noise_csv};

#[derive(Parser)]
#[command(name = "fsrm", version, about = "Randomized-measurement estimation of partial-transpose moments")]
struct Cli {
    /// JSON configuration; flags override its fields
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (stdout when omitted)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads
    #[arg(long, global = true, conflicts_with = "single_thread")]
    threads: Option<usize>,
    #[arg(long, global = true)]
    single_thread: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact moments and negativity of a state
    Oracle {
        #[arg(long, default_value = "bell")]
        state: StateSpec,
        #[arg(long)]
        partition: Option<String>,
    },
    /// Simulate an experiment and estimate p2, p3 or n3
    Estimate(EstimateArgs),
    /// RMS error against N for several shots-per-round values, with log-log fits
    Converge(ConvergeArgs),
    /// Solve amended coefficients for a noisy Bell POVM
    Amend {
        #[arg(long)]
        povm: Option<PathBuf>,
        #[arg(long)]
        ceiling: Option<f64>,
    },
    /// Choi-state error of the averaged channel under Gaussian unitary noise
    NoiseStudy {
        /// e.g. cs,fsrm-1,fsrm-2
        #[arg(long, value_delimiter = ',')]
        schemes: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        epsilons: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        n_list: Option<Vec<usize>>,
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Write a state file
    MakeState {
        #[arg(long, default_value = "bell")]
        state: StateSpec,
    },
    /// Write a synthetic noisy Bell POVM file
    MakePovm {
        /// Same fidelity on every port
        #[arg(long, conflicts_with = "ports")]
        fidelity: Option<f64>,
        /// Four per-port fidelities for labels 00,01,10,11
        #[arg(long, value_delimiter = ',', num_args = 4)]
        ports: Option<Vec<f64>>,
        #[arg(long, default_value_t = DEFAULT_TWIST)]
        twist: f64,
    },
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    state: Option<StateSpec>,
    #[arg(long, value_parser = parse_scheme)]
    scheme: Option<Scheme>,
    #[arg(long, value_parser = parse_quantity)]
    quantity: Option<Quantity>,
    #[arg(long)]
    partition: Option<String>,
    #[arg(long)]
    n_u: Option<usize>,
    #[arg(long)]
    n_m: Option<usize>,
    #[arg(long, value_parser = parse_settings)]
    settings: Option<SettingMode>,
    #[arg(long, value_parser = parse_pooling)]
    pooling: Option<Pooling>,
    /// Gaussian unitary noise strength
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    povm: Option<PathBuf>,
    #[arg(long)]
    coefficients: Option<PathBuf>,
    #[arg(long)]
    batches: Option<usize>,
}

#[derive(Args)]
struct ConvergeArgs {
    #[arg(long)]
    state: Option<StateSpec>,
    #[arg(long, value_parser = parse_scheme)]
    scheme: Option<Scheme>,
    #[arg(long, value_parser = parse_quantity)]
    quantity: Option<Quantity>,
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    n_m_list: Option<Vec<usize>>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long, value_parser = parse_pooling)]
    pooling: Option<Pooling>,
    /// Fit summary JSON (stderr when omitted)
    #[arg(long)]
    fit_out: Option<PathBuf>,
}

fn parse_json_str<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    parse_json_str(s)
}

fn parse_quantity(s: &str) -> Result<Quantity, String> {
    parse_json_str(s)
}

fn parse_settings(s: &str) -> Result<SettingMode, String> {
    parse_json_str(s)
}

fn parse_pooling(s: &str) -> Result<Pooling, String> {
    parse_json_str(s)
}

fn set<T>(field: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *field = v;
    }
}

fn configure_threads(cli: &Cli) -> CliResult<()> {
    let n = if cli.single_thread { Some(1) } else { cli.threads };
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads(&cli)?;
    let config = cli.config.as_deref();
    let out = cli.out.as_deref();
    match cli.command {
        Command::Oracle { state, partition } => {
            let report = commands::oracle(&state, partition.as_deref())?;
            emit(out, &json(&report)?)
        }
        Command::Estimate(a) => {
            let mut cfg: EstimateConfig = load(config)?;
            set(&mut cfg.state, a.state);
            set(&mut cfg.scheme, a.scheme);
            set(&mut cfg.quantity, a.quantity);
            set(&mut cfg.n_u, a.n_u);
            set(&mut cfg.pooling, a.pooling);
            set(&mut cfg.batches, a.batches);
            set(&mut cfg.seed, cli.seed);
            cfg.partition = a.partition.or(cfg.partition);
            cfg.n_m = a.n_m.or(cfg.n_m);
            cfg.settings = a.settings.or(cfg.settings);
            cfg.povm = a.povm.or(cfg.povm);
            cfg.coefficients = a.coefficients.or(cfg.coefficients);
            cfg.out = cli.out.or(cfg.out);
            if let Some(eps) = a.epsilon {
                cfg.noise = NoiseModel::gaussian(eps, cfg.noise.per_round_fixed);
            }
            let out = cfg.out.clone();
            let report = commands::estimate(cfg)?;
            emit(out.as_deref(), &json(&report)?)
        }
        Command::Converge(a) => {
            let mut cfg: ConvergeConfig = load(config)?;
            set(&mut cfg.state, a.state);
            set(&mut cfg.scheme, a.scheme);
            set(&mut cfg.quantity, a.quantity);
            set(&mut cfg.n_list, a.n_list);
            set(&mut cfg.n_m_list, a.n_m_list);
            set(&mut cfg.repetitions, a.repetitions);
            set(&mut cfg.pooling, a.pooling);
            set(&mut cfg.seed, cli.seed);
            cfg.out = cli.out.or(cfg.out);
            cfg.fit_out = a.fit_out.or(cfg.fit_out);
            let (out, fit_out) = (cfg.out.clone(), cfg.fit_out.clone());
            let report = commands::converge(cfg)?;
            emit(out.as_deref(), &converge_csv(&report.rows))?;
            let summary = json(&report)?;
            match fit_out {
                Some(p) => emit(Some(&p), &summary),
                None => {
                    eprint!("{summary}");
                    Ok(())
                }
            }
        }
        Command::Amend { povm, ceiling } => {
            let mut cfg: AmendConfig = load(config)?;
            cfg.povm = povm.or(cfg.povm);
            set(&mut cfg.ceiling, ceiling);
            cfg.out = cli.out.or(cfg.out);
            let report = commands::amend_cmd(&cfg)?;
            emit(None, &json(&report)?)
        }
        Command::NoiseStudy {
            schemes,
            epsilons,
            n_list,
            dim,
        } => {
            let mut cfg: NoiseStudyConfig = load(config)?;
            set(&mut cfg.schemes, schemes);
            set(&mut cfg.epsilons, epsilons);
            set(&mut cfg.n_list, n_list);
            set(&mut cfg.dim, dim);
            set(&mut cfg.seed, cli.seed);
            cfg.out = cli.out.or(cfg.out);
            let points = commands::noise_study(&cfg)?;
            emit(cfg.out.as_deref(), &noise_csv(&points))
        }
        Command::MakeState { state } => {
            let file = commands::make_state(&state)?;
            write_or_print(out, &file)
        }
        Command::MakePovm { fidelity, ports, twist } => {
            let ports = match (fidelity, ports) {
                (Some(f), _) => [f; 4],
                (None, Some(p)) => [p[0], p[1], p[2], p[3]],
                (None, None) => REFERENCE_PORT_FIDELITIES,
            };
            let (file, report) = commands::make_povm(ports, twist, cli.seed.unwrap_or(0))?;
            write_or_print(out, &file)?;
            if out.is_some() {
                emit(None, &json(&report)?)?;
            }
            Ok(())
        }
    }
}

fn write_or_print<T: serde::Serialize>(out: Option<&Path>, value: &T) -> CliResult<()> {
    match out {
        Some(p) => Ok(write_json(p, value)?),
        None => emit(None, &json(value)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
