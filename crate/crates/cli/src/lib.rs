//! Config-driven experiment runner for the `perfpred` library.
//!
//! Exit status: 0 when the dynamic converged or the run was diagnostics
//! only, 2 when it oscillated, diverged or ran out of iterations, 1 on any
//! error. `reproduce` exits 0 on PASS and 1 on FAIL.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiment;
pub mod presets;
pub mod run;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{DiagnosticsConfig, DynamicKind, ExperimentConfig};
use crate::experiment::Experiment;
use crate::presets::PresetCommand;
use crate::run::RunOutput;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(
    name = "perfpred",
    version,
    about = "Performative prediction experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (TOML, or JSON including run manifests).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Sample instead of using closed forms or exact supports.
    #[arg(long, global = true)]
    pub force_monte_carlo: bool,
    /// Cap on outer iterations.
    #[arg(long, global = true)]
    pub max_iters: Option<usize>,
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Run the dynamic and diagnostics named in the config.
    Run,
    RunRrm,
    RunRgd,
    RunRerm,
    RunRegd,
    /// Estimate the map's sensitivity on random parameter pairs.
    DiagnoseSensitivity,
    /// Grid-minimize the performative risk.
    BruteForcePr,
    /// Strategic classification simulation.
    StrategicSim,
    /// Run a frozen preset and check its assertion.
    Reproduce {
        preset: String,
    },
    /// List the presets.
    Presets,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::RunRrm => "run-rrm",
            Command::RunRgd => "run-rgd",
            Command::RunRerm => "run-rerm",
            Command::RunRegd => "run-regd",
            Command::DiagnoseSensitivity => "diagnose-sensitivity",
            Command::BruteForcePr => "brute-force-pr",
            Command::StrategicSim => "strategic-sim",
            Command::Reproduce { .. } => "reproduce",
            Command::Presets => "presets",
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    library_version: &'a str,
    seed: u64,
    out_dir: &'a Path,
    config: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct TrajectorySidecar<'a> {
    procedure: &'a str,
    verdict: perfpred::dynamics::Verdict,
    iterations: usize,
    final_theta: &'a [f64],
    config: &'a ExperimentConfig,
}

/// Applies the command and flag overrides, so the echoed config alone
/// reproduces the run.
fn effective_config(cli: &Cli, mut cfg: ExperimentConfig) -> ExperimentConfig {
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(n) = cli.max_iters {
        cfg.dynamic.solver.max_outer_iters = n;
    }
    cfg.force_monte_carlo |= cli.force_monte_carlo;
    let only = |keep: fn(&mut DiagnosticsConfig)| {
        let base = DiagnosticsConfig {
            sensitivity: false,
            brute_force: false,
            lipschitz: false,
            closeness: false,
            stackelberg: false,
            ..cfg.diagnostics.clone()
        };
        let mut d = base;
        keep(&mut d);
        d
    };
    match cli.command {
        Command::RunRrm => cfg.dynamic.kind = DynamicKind::Rrm,
        Command::RunRgd => cfg.dynamic.kind = DynamicKind::Rgd,
        Command::RunRerm => cfg.dynamic.kind = DynamicKind::Rerm,
        Command::RunRegd => cfg.dynamic.kind = DynamicKind::Regd,
        Command::DiagnoseSensitivity => {
            cfg.dynamic.kind = DynamicKind::None;
            cfg.diagnostics = only(|d| d.sensitivity = true);
        }
        Command::BruteForcePr => {
            cfg.dynamic.kind = DynamicKind::None;
            cfg.diagnostics = only(|d| d.brute_force = true);
        }
        _ => {}
    }
    cfg
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes every output file of a run into `dir` and nowhere else.
fn write_outputs(dir: &Path, command: &str, ex: &Experiment, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut echo = ex.config.clone();
    echo.out = None;
    if let Some(tr) = &out.trajectory {
        let csv = dir.join("trajectory.csv");
        tr.save_csv(&csv)
            .with_context(|| format!("writing {}", csv.display()))?;
        write_json(
            &dir.join("trajectory.json"),
            &TrajectorySidecar {
                procedure: &tr.procedure,
                verdict: tr.verdict,
                iterations: tr.step_norms.len(),
                final_theta: tr.last(),
                config: &echo,
            },
        )?;
    }
    write_json(&dir.join("report.json"), &out.report)?;
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            command,
            library_version: VERSION,
            seed: echo.seed,
            out_dir: dir,
            config: &echo,
        },
    )
}

fn summarize(out: &RunOutput) -> String {
    let r = &out.report;
    match (&r.procedure, r.verdict, &r.final_theta) {
        (Some(p), Some(v), Some(theta)) => {
            let v = match v {
                perfpred::dynamics::Verdict::Converged(t) => format!("converged at t = {t}"),
                other => format!("{other:?}").to_lowercase(),
            };
            format!("{p}: {v}, final theta {theta:?}")
        }
        _ => format!("{} + {}: diagnostics only", r.map, r.loss),
    }
}

fn execute_config(
    cli: &Cli,
    command: &str,
    cfg: ExperimentConfig,
    strategic: bool,
) -> Result<(Experiment, RunOutput)> {
    let ex = Experiment::build(cfg)?;
    let out = if strategic {
        run::strategic(&ex)?
    } else {
        run::run(&ex)?
    };
    if !cli.quiet {
        for w in &out.report.warnings {
            eprintln!("warning: {w}");
        }
    }
    let dir = cli.out.clone().or_else(|| ex.config.out.clone());
    if let Some(dir) = &dir {
        write_outputs(dir, command, &ex, &out)?;
    }
    if !cli.quiet {
        println!("{}", summarize(&out));
        match &dir {
            Some(d) => println!("wrote {}", d.display()),
            None => println!("no output directory given; nothing written"),
        }
    }
    Ok((ex, out))
}

/// Runs one invocation and returns its exit status.
pub fn execute(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Presets => {
            for p in presets::PRESETS {
                println!("{:<20} {}", p.name, p.summary);
            }
            Ok(0)
        }
        Command::Reproduce { preset } => reproduce(cli, preset),
        command => {
            let path = cli
                .config
                .as_ref()
                .with_context(|| format!("{} needs --config <path>", command.name()))?;
            let cfg = effective_config(cli, ExperimentConfig::load(path)?);
            let strategic = *command == Command::StrategicSim;
            let (_, out) = execute_config(cli, command.name(), cfg, strategic)?;
            Ok(out.exit_code())
        }
    }
}

fn reproduce(cli: &Cli, name: &str) -> Result<u8> {
    let preset = presets::find(name)?;
    for (flag, set) in [
        ("--config", cli.config.is_some()),
        ("--seed", cli.seed.is_some()),
        ("--max-iters", cli.max_iters.is_some()),
        ("--force-monte-carlo", cli.force_monte_carlo),
    ] {
        if set {
            bail!("reproduce runs a frozen preset; {flag} is not accepted");
        }
    }
    let cfg =
        ExperimentConfig::from_toml(preset.config).with_context(|| format!("preset {name}"))?;
    let (command, strategic) = match preset.command {
        PresetCommand::Run => ("run", false),
        PresetCommand::StrategicSim => ("strategic-sim", true),
    };
    let (ex, out) = execute_config(cli, command, cfg, strategic)?;
    match (preset.check)(&ex, &out) {
        Ok(detail) => {
            println!("PASS {name}: {detail}");
            Ok(0)
        }
        Err(detail) => {
            println!("FAIL {name}: {detail}");
            Ok(1)
        }
    }
}
