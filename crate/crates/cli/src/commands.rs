use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use longic::cohort::write_cohort_dir;
use longic::pipeline::run::{BoundOverride, CostOverride, CostValue, Overrides};
use longic::pipeline::{recommend_patient, run, CarryMode, RunConfig};
use longic::synth::{default_spec, generate, GeneratorSpec};
use longic::Error;

use crate::exit;
use crate::service::{router, AppState};

#[derive(Debug, Parser)]
#[command(name = "longic", version, about = "Longitudinal inverse classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic cohort directory.
    Generate {
        /// Generator spec (TOML); the built-in default when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "LONGIC_OUT")]
        out: PathBuf,
    },
    /// Train and run experiments; reports go to <out>/<UTC time>-seed<seed>/.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, env = "LONGIC_OUT")]
        out: Option<PathBuf>,
        /// Comma-separated experiment ids, e.g. 1,3.
        #[arg(long, value_delimiter = ',')]
        experiments: Option<Vec<u8>>,
    },
    /// Print one patient's visit-1 recommendation as JSON.
    Recommend {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        patient: String,
        #[arg(long)]
        budget: f64,
        /// NAME=COST or NAME=UP/DOWN; a cost may be `locked`.
        #[arg(long = "cost", value_name = "NAME=COST")]
        costs: Vec<String>,
        /// NAME=LOWER:UPPER; either side may be empty.
        #[arg(long = "bound", value_name = "NAME=LO:HI")]
        bounds: Vec<String>,
        #[arg(long, value_parser = parse_carry)]
        carry: Option<CarryMode>,
    },
    /// Serve the HTTP API.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run config (TOML); defaults to the built-in generator.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Failure with the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::UnknownId(_) => exit::UNKNOWN_PATIENT,
            Error::Config(_)
            | Error::Schema(_)
            | Error::Partition(_)
            | Error::Csv { .. }
            | Error::DuplicateId { .. }
            | Error::NonBinary { .. }
            | Error::ContinuityViolated { .. }
            | Error::ExclusionViolated { .. }
            | Error::VisitOutOfRange { .. }
            | Error::Serde(_) => exit::CONFIG,
            _ => exit::FAILURE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: exit::CONFIG,
        message: message.into(),
    }
}

fn parse_carry(s: &str) -> Result<CarryMode, String> {
    match s {
        "delta" => Ok(CarryMode::Delta),
        "overwrite" => Ok(CarryMode::Overwrite),
        _ => Err(format!("expected `delta` or `overwrite`, got {s:?}")),
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_path(path).map_err(|e| match e {
            Error::Io { .. } => config_error(e.to_string()),
            other => other.into(),
        })?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_cost(text: &str) -> Option<CostValue> {
    longic::inverse_opt::cost_value::parse_word(text).map(CostValue)
}

/// Parses `--cost` and `--bound` flags.
pub fn parse_overrides(costs: &[String], bounds: &[String]) -> Result<Overrides, Failure> {
    let mut out = Overrides {
        costs: BTreeMap::new(),
        bounds: BTreeMap::new(),
    };
    for item in costs {
        let (name, value) = item
            .split_once('=')
            .ok_or_else(|| config_error(format!("--cost expects NAME=COST, got {item:?}")))?;
        let bad = || config_error(format!("invalid cost in {item:?}"));
        let o = match value.split_once('/') {
            Some((up, down)) => CostOverride::Split {
                up: Some(parse_cost(up).ok_or_else(bad)?),
                down: Some(parse_cost(down).ok_or_else(bad)?),
            },
            None => CostOverride::Both(parse_cost(value).ok_or_else(bad)?),
        };
        out.costs.insert(name.to_string(), o);
    }
    for item in bounds {
        let (name, range) = item
            .split_once('=')
            .and_then(|(n, r)| Some((n, r.split_once(':')?)))
            .ok_or_else(|| config_error(format!("--bound expects NAME=LO:HI, got {item:?}")))?;
        let side = |s: &str| -> Result<Option<f64>, Failure> {
            if s.trim().is_empty() {
                Ok(None)
            } else {
                s.trim()
                    .parse()
                    .map(Some)
                    .map_err(|_| config_error(format!("invalid bound in {item:?}")))
            }
        };
        out.bounds.insert(
            name.to_string(),
            BoundOverride {
                lower: side(range.0)?,
                upper: side(range.1)?,
            },
        );
    }
    Ok(out)
}

fn run_dir(base: &Path, seed: u64) -> PathBuf {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    base.join(format!("{stamp}-seed{seed}"))
}

pub fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate { config, seed, out } => {
            let mut spec = match config {
                Some(path) => GeneratorSpec::from_path(&path).map_err(|e| match e {
                    Error::Io { .. } => config_error(e.to_string()),
                    other => other.into(),
                })?,
                None => default_spec(),
            };
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            spec.validate()?;
            let cohort = generate(&spec)?;
            for path in write_cohort_dir(&out, &cohort)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Run {
            common,
            out,
            experiments,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(e) = experiments {
                cfg.experiments = e;
            }
            cfg.validate()?;
            let base = out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("runs"));
            let dir = run_dir(&base, cfg.seed);
            let outcome = run(&cfg, &dir)?;
            for report in &outcome.reports {
                println!("{}", dir.join(format!("experiment{}", report.experiment)).display());
            }
            Ok(())
        }
        Command::Recommend {
            common,
            patient,
            budget,
            costs,
            bounds,
            carry,
        } => {
            if !(budget >= 0.0) || !budget.is_finite() {
                return Err(config_error(format!("budget must be non-negative, got {budget}")));
            }
            let cfg = load_config(&common)?;
            let overrides = parse_overrides(&costs, &bounds)?;
            let cohort = cfg.load_cohort()?;
            if cohort.visits[0].row_of(&patient).is_none() {
                return Err(Error::UnknownId(patient).into());
            }
            let (cost_model, bound_box) = overrides.apply(&cohort)?;
            let models = cfg.train(&cohort)?;
            let rec = recommend_patient(
                &models,
                &cohort,
                &patient,
                budget,
                &cost_model,
                &bound_box,
                carry.unwrap_or(cfg.experiment3.carry),
                &models.config.solver,
            )?;
            let text = serde_json::to_string_pretty(&rec).map_err(|e| Failure::from(Error::from(e)))?;
            println!("{text}");
            Ok(())
        }
        Command::Serve { common, bind } => {
            let cfg = load_config(&common)?;
            let cohort = cfg.load_cohort()?;
            let models = cfg.train(&cohort)?;
            let state = Arc::new(AppState {
                cohort,
                models,
                carry: cfg.experiment3.carry,
            });
            serve(state, &bind)
        }
    }
}

fn serve(state: Arc<AppState>, bind: &str) -> Result<(), Failure> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure {
        code: exit::FAILURE,
        message: e.to_string(),
    })?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(bind).await.map_err(|e| Failure {
            code: exit::BIND,
            message: format!("cannot bind {bind}: {e}"),
        })?;
        let addr = listener.local_addr().map(|a| a.to_string()).unwrap_or_default();
        eprintln!("listening on {addr}");
        axum::serve(listener, router(state)).await.map_err(|e| Failure {
            code: exit::FAILURE,
            message: e.to_string(),
        })
    })
}
