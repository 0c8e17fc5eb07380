//! Command-line front end.
//!
//! Every subcommand prints JSON on stdout (an `{"error": …}` object on
//! failure) and a run manifest with content digests next to `--out`, or on
//! stderr without it. Exit codes: 0 success or stable, 2 unstable,
//! 3 marginal, 1 any error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{self, DelayChain, DncsModel, PendulumParams};
use crate::robust::{self, BoundResult};
use crate::sim::{self, SimConfig};
use crate::stability::{self, Verdict};
use crate::switched::{self, ModeCount, ModeFamily, Scope};

pub const THREADS_ENV: &str = "MJLS_STAB_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "mjls-stab",
    version,
    about = "Mean-square stability of networks with Markovian delays"
)]
pub struct Cli {
    /// Worker threads for parallel sections (falls back to MJLS_STAB_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Decide mean-square stability.
    Analyze {
        #[command(flatten)]
        source: Source,
        /// Exact test on the whole network (small models only).
        #[arg(long, conflicts_with = "reduced")]
        full: bool,
        /// Per-agent test over each neighborhood (default).
        #[arg(long)]
        reduced: bool,
        /// Evaluate one agent per symmetry class.
        #[arg(long)]
        dedup: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bounds on transition-matrix errors that preserve stability.
    Robust {
        #[command(flatten)]
        source: Source,
        /// Subtracted from every column budget before solving.
        #[arg(long, default_value_t = 0.0)]
        margin: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo estimate of the mean-square trajectory.
    Simulate {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// CSV of `k,mean_sq`; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write one realization (trial 0) as a per-agent CSV.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Sizes, link counts and mode counts.
    Inspect {
        #[command(flatten)]
        source: Source,
    },
}

#[derive(Args, Debug)]
pub struct Source {
    /// Network model JSON.
    #[arg(long, group = "source")]
    pub model: Option<PathBuf>,
    /// Built-in pendulum chain with this many agents.
    #[arg(long, group = "source")]
    pub pendulum: Option<usize>,
    /// Markov jump system given by its modes.
    #[arg(long, group = "source")]
    pub mjls: Option<PathBuf>,
    /// Pendulum parameter override, `key=value`; repeatable.
    #[arg(long = "param", value_parser = parse_param, requires = "pendulum")]
    pub params: Vec<(String, f64)>,
}

fn parse_param(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let v: f64 = v.trim().parse().map_err(|e| format!("bad value for {k}: {e}"))?;
    Ok((k.trim().to_string(), v))
}

enum Loaded {
    Network { model: DncsModel, label: String },
    Family { family: ModeFamily, label: String },
}

impl Loaded {
    fn label(&self) -> &str {
        match self {
            Loaded::Network { label, .. } | Loaded::Family { label, .. } => label,
        }
    }

    fn digest(&self) -> String {
        match self {
            Loaded::Network { model, .. } => sha256(model::model_to_json(model).as_bytes()),
            Loaded::Family { family, .. } => {
                let doc = json!({
                    "modes": family.matrices().iter().map(|m| m.as_slice()).collect::<Vec<_>>(),
                    "P": family.joint_p().as_slice(),
                    "pi0": family.joint_pi0(),
                });
                sha256(doc.to_string().as_bytes())
            }
        }
    }
}

fn load(source: &Source) -> Result<Loaded> {
    if let Some(n) = source.pendulum {
        let mut params = PendulumParams::default();
        for (k, v) in &source.params {
            params.set(k, *v)?;
        }
        let model = model::build_pendulum_model(n, &params, DelayChain::two_state_benchmark())?;
        return Ok(Loaded::Network {
            model,
            label: format!("pendulum:{n}"),
        });
    }
    if let Some(path) = &source.model {
        return Ok(Loaded::Network {
            model: model::load_model_file(path)?,
            label: path.display().to_string(),
        });
    }
    if let Some(path) = &source.mjls {
        let text = fs::read_to_string(path)?;
        return Ok(Loaded::Family {
            family: switched::load_family(&text)?,
            label: path.display().to_string(),
        });
    }
    Err(Error::InvalidArgument(
        "one of --model, --pendulum or --mjls is required".into(),
    ))
}

#[derive(Serialize)]
struct ModelInfo {
    source: String,
    digest: String,
}

#[derive(Serialize)]
pub struct RunManifest {
    command: String,
    arguments: Vec<String>,
    version: &'static str,
    model: ModelInfo,
    elapsed_seconds: f64,
    result_digest: String,
}

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// What a subcommand produced: the bytes that were its result, the JSON
/// for stdout, and the exit code.
struct Outcome {
    stdout: Value,
    result_bytes: Vec<u8>,
    code: i32,
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let _ = write!(stderr, "{e}");
            let _ = writeln!(stdout, "{}", json!({"error": e.kind().to_string(), "exit_code": 1}));
            return 1;
        }
    };
    if let Err(e) = configure_threads(cli.threads) {
        return report_error(&e, stdout);
    }
    let started = Instant::now();
    let arguments: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let (name, source, out) = match &cli.command {
        Command::Analyze { source, out, .. } => ("analyze", source, out.clone()),
        Command::Robust { source, out, .. } => ("robust", source, out.clone()),
        Command::Simulate { source, out, .. } => ("simulate", source, out.clone()),
        Command::Inspect { source } => ("inspect", source, None),
    };
    let result = load(source).and_then(|loaded| {
        let outcome = match &cli.command {
            Command::Analyze { full, dedup, .. } => analyze(&loaded, *full, *dedup),
            Command::Robust { margin, .. } => robust_cmd(&loaded, *margin),
            Command::Simulate {
                steps,
                trials,
                seed,
                trajectory,
                out,
                ..
            } => simulate(
                &loaded,
                SimConfig::new(*steps, *trials, *seed),
                trajectory.as_deref(),
                out.is_none(),
            ),
            Command::Inspect { .. } => inspect(&loaded),
        }?;
        Ok((loaded, outcome))
    });
    let (loaded, outcome) = match result {
        Ok(v) => v,
        Err(e) => return report_error(&e, stdout),
    };

    if let Some(path) = &out {
        if let Err(e) = fs::write(path, &outcome.result_bytes) {
            return report_error(&Error::Io(e), stdout);
        }
    }
    let manifest = RunManifest {
        command: name.to_string(),
        arguments,
        version: env!("CARGO_PKG_VERSION"),
        model: ModelInfo {
            source: loaded.label().to_string(),
            digest: loaded.digest(),
        },
        elapsed_seconds: started.elapsed().as_secs_f64(),
        result_digest: sha256(&outcome.result_bytes),
    };
    let manifest_text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    match &out {
        Some(path) => {
            let mpath = manifest_path(path);
            if let Err(e) = fs::write(&mpath, manifest_text + "\n") {
                return report_error(&Error::Io(e), stdout);
            }
        }
        None => {
            let _ = writeln!(stderr, "{manifest_text}");
        }
    }
    match &outcome.stdout {
        Value::String(raw) => {
            let _ = write!(stdout, "{raw}");
        }
        v => {
            let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(v).expect("json"));
        }
    }
    outcome.code
}

/// `<out>.manifest.json` next to the output file.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) if !v.trim().is_empty() => Some(
                v.trim()
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("{THREADS_ENV}={v} is not a thread count")))?,
            ),
            _ => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::InvalidArgument("thread count must be at least 1".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn report_error(e: &Error, stdout: &mut dyn Write) -> i32 {
    let _ = writeln!(stdout, "{}", json!({"error": e.to_string(), "exit_code": 1}));
    1
}

fn json_outcome<T: Serialize>(value: &T, code: i32) -> Outcome {
    let v = serde_json::to_value(value).expect("result serializes");
    let bytes = (serde_json::to_string_pretty(&v).expect("json") + "\n").into_bytes();
    Outcome {
        stdout: v,
        result_bytes: bytes,
        code,
    }
}

fn verdict_code(v: Verdict) -> i32 {
    match v {
        Verdict::Stable => 0,
        Verdict::Unstable => 2,
        Verdict::Marginal => 3,
    }
}

fn analyze(loaded: &Loaded, full: bool, dedup: bool) -> Result<Outcome> {
    let report = match loaded {
        Loaded::Network { model, .. } => {
            let mut report = if full {
                stability::mss_test_full(model)?
            } else {
                stability::mss_test_reduced(model, dedup)?
            };
            report.nominal = Some(model::nominal_stability(model)?);
            report
        }
        Loaded::Family { family, .. } => stability::mss_test_family(family)?,
    };
    Ok(json_outcome(&report, verdict_code(report.overall)))
}

#[derive(Serialize)]
struct ClassBounds {
    scope: Scope,
    represents: Vec<usize>,
    m: usize,
    #[serde(flatten)]
    bounds: BoundResult,
}

fn robust_cmd(loaded: &Loaded, margin: f64) -> Result<Outcome> {
    use rayon::prelude::*;
    let classes: Vec<ClassBounds> = match loaded {
        Loaded::Network { model, .. } => stability::dedup_agents(model)
            .into_par_iter()
            .map(|class| {
                let family = switched::build_mode_family(model, Scope::Agent(class[0]))?;
                let bounds = robust::estimate_bounds_with_margin(&family, family.joint_p(), margin)?;
                Ok(ClassBounds {
                    scope: family.scope(),
                    represents: class,
                    m: family.mode_count(),
                    bounds,
                })
            })
            .collect::<Result<_>>()?,
        Loaded::Family { family, .. } => vec![ClassBounds {
            scope: Scope::Custom,
            represents: Vec::new(),
            m: family.mode_count(),
            bounds: robust::estimate_bounds_with_margin(family, family.joint_p(), margin)?,
        }],
    };
    Ok(json_outcome(&json!({ "classes": classes }), 0))
}

/// Without an output file the CSV itself goes to stdout.
fn simulate(loaded: &Loaded, config: SimConfig, trajectory: Option<&Path>, csv_to_stdout: bool) -> Result<Outcome> {
    let mean_sq = match loaded {
        Loaded::Network { model, .. } => {
            if let Some(path) = trajectory {
                let rec = sim::simulate_trajectory(model, &config, 0)?;
                let mut buf = Vec::new();
                sim::write_trajectory_csv(&rec, &mut buf)?;
                fs::write(path, buf)?;
            }
            sim::estimate_ms(model, &config)?
        }
        Loaded::Family { family, .. } => {
            if trajectory.is_some() {
                return Err(Error::InvalidArgument(
                    "--trajectory needs a network model, not a bare jump system".into(),
                ));
            }
            sim::estimate_family_moments(family, &config)?.0
        }
    };
    let mut csv = Vec::new();
    sim::write_ms_csv(&mean_sq, &mut csv)?;
    let first = mean_sq[0];
    let last = *mean_sq.last().expect("steps ≥ 1");
    let summary = json!({
        "steps": config.steps,
        "trials": config.trials,
        "seed": config.seed,
        "initial_mean_sq": first,
        "final_mean_sq": last,
        "ratio": last / first,
        "csv_sha256": sha256(&csv),
    });
    let stdout = if csv_to_stdout {
        Value::String(String::from_utf8(csv.clone()).expect("csv is ascii"))
    } else {
        summary
    };
    Ok(Outcome {
        stdout,
        result_bytes: csv,
        code: 0,
    })
}

/// `Σ_k q^{e_k}` when it fits in 64 bits.
fn sum_powers(q: usize, exps: impl Iterator<Item = usize>) -> Option<u64> {
    exps.map(|e| ModeCount::of(q, e).exact())
        .try_fold(0u64, |acc, v| acc.checked_add(v?))
}

fn inspect(loaded: &Loaded) -> Result<Outcome> {
    let model = match loaded {
        Loaded::Network { model, .. } => model,
        Loaded::Family { family, .. } => {
            let v = json!({
                "modes": family.mode_count(),
                "state_dim": family.state_dim(),
                "mss_dim": family.mode_count() * family.state_dim() * family.state_dim(),
            });
            return Ok(json_outcome(&v, 0));
        }
    };
    let (n_agents, q) = (model.agents(), model.q());
    let mut links = Vec::with_capacity(n_agents);
    let mut hood_sizes = Vec::with_capacity(n_agents);
    for i in 1..=n_agents {
        links.push(switched::enumerate_links(model, Scope::Agent(i))?.len());
        hood_sizes.push(model::neighborhood(model, i)?.len());
    }
    let classes: Vec<Value> = stability::dedup_agents(model)
        .into_iter()
        .map(|c| {
            let l = links[c[0] - 1];
            json!({
                "representative": c[0],
                "agents": c.len(),
                "members": c,
                "links": l,
                "modes": ModeCount::of(q, l),
                "state_dim": hood_sizes[c[0] - 1] * model.dim() * q,
            })
        })
        .collect();
    let v = json!({
        "N": n_agents,
        "n": model.dim(),
        "tau_d": model.tau_d(),
        "q": q,
        "global_links": switched::enumerate_links(model, Scope::Global)?.len(),
        "full_modes": switched::mode_count(model, Scope::Global)?,
        "full_modes_complete_graph": ModeCount::of(q, n_agents * (n_agents - 1)),
        "links_per_agent": links,
        "neighborhood_sizes": hood_sizes,
        "reduced_modes_total": sum_powers(q, links.iter().copied()),
        "reduced_modes_complete_neighborhoods": sum_powers(q, hood_sizes.iter().map(|h| h * (h - 1))),
        "classes": classes,
    });
    Ok(json_outcome(&v, 0))
}
