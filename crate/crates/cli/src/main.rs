use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use structpolicy::graph::DensePolicy;
use structpolicy::pgdl::{self, compile_source, format_diagnostics, parse, render_summary};
use structpolicy::policy::{PolicyDriver, PolicyModel};
use structpolicy::restructure::{LlmBackend, ReplayBackend, RestructureConfig};
use structpolicy::session::{read_weights, run_battery, write_weights, AgentInstance, AgentMode, BatterySpec};
use structpolicy::sim::{
    generate_track, run_rollout, ConstantPolicy, NoiseSpec, ObservationSchema, Policy, ScriptedDriver, StartConfig,
    DEFAULT_CUTOFF_STEPS, TRACK_TILES,
};
use structpolicy::trainer::{train_with, Dataset, DemoSource, Demonstration, NormalizationSpec, TrainConfig};
use structpolicy_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "structpolicy", version, about = "Structured driving policies from demonstrations and instructions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Policy description language tools.
    #[command(subcommand)]
    Pgdl(PgdlCommand),
    /// Record a demonstration with the scripted driver.
    Demo(DemoArgs),
    /// Train a policy on demonstration files.
    Train(TrainArgs),
    /// Run policies in the simulator.
    #[command(subcommand)]
    Sim(SimCommand),
    /// Work with a session directory directly.
    #[command(subcommand)]
    Session(SessionCommand),
    /// Start the HTTP and WebSocket server.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Schema {
    Racing,
    Open,
}

impl Schema {
    fn get(self) -> ObservationSchema {
        match self {
            Schema::Racing => ObservationSchema::racing(),
            Schema::Open => ObservationSchema::open(),
        }
    }
}

#[derive(Subcommand)]
enum PgdlCommand {
    /// Report diagnostics; exits non-zero on errors.
    Check {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "racing")]
        schema: Schema,
    },
    /// Print the canonical form.
    Fmt {
        file: PathBuf,
        /// Rewrite the file in place.
        #[arg(long)]
        write: bool,
    },
    /// Compile and print the graph size and summary.
    Compile {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "racing")]
        schema: Schema,
    },
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long, default_value_t = 0)]
    track_seed: u64,
    #[arg(long, default_value_t = 400)]
    steps: u64,
    #[command(flatten)]
    start: StartArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone, Copy)]
struct StartArgs {
    #[arg(long, default_value_t = 0)]
    tile: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    lateral_offset: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    heading_offset: f64,
    #[arg(long, default_value_t = 0.0)]
    speed: f64,
}

impl StartArgs {
    fn config(self) -> StartConfig {
        StartConfig {
            tile: self.tile,
            lateral_offset: self.lateral_offset,
            heading_offset: self.heading_offset,
            speed: self.speed,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// A `.pgdl` file, or `dense` for the fully connected baseline.
    #[arg(long)]
    policy: String,
    /// Demonstration files (`.frames`).
    #[arg(long, required = true, num_args = 1..)]
    demos: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    batches: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Where to write the trained weights.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write the `batch,loss` table.
    #[arg(long)]
    losses: Option<PathBuf>,
}

#[derive(Args)]
struct PolicyArgs {
    /// `scripted`, `stop`, `dense`, or a `.pgdl` file.
    #[arg(long, default_value = "scripted")]
    policy: String,
    /// Weights written by `train --out`.
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SimCommand {
    /// One rollout; prints the result as JSON.
    Rollout {
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, default_value_t = 0)]
        track_seed: u64,
        #[arg(long, default_value_t = DEFAULT_CUTOFF_STEPS)]
        cutoff: u64,
        #[command(flatten)]
        start: StartArgs,
        /// Action noise level, 1 or 2.
        #[arg(long)]
        noise_level: Option<usize>,
        #[arg(long, default_value_t = 7)]
        noise_seed: u64,
    },
    /// The robustness battery; prints group means as JSON.
    Battery {
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, default_value_t = DEFAULT_CUTOFF_STEPS)]
        cutoff: u64,
    },
}

#[derive(Subcommand)]
enum SessionCommand {
    /// Create an empty session.
    New {
        dir: PathBuf,
        #[arg(long, default_value = "structured")]
        mode: String,
    },
    /// Print the session state as JSON.
    Show { dir: PathBuf },
    /// Add a demonstration file and retrain.
    AddDemo { dir: PathBuf, file: PathBuf },
    /// Add an instruction and restructure with a replayed LLM.
    Instruct {
        dir: PathBuf,
        text: String,
        /// Replay file or directory.
        #[arg(long)]
        replay: PathBuf,
    },
    /// One test rollout from the nominal start.
    Test {
        dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CUTOFF_STEPS)]
        cutoff: u64,
    },
    /// Lock the session.
    Submit { dir: PathBuf },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    port: Option<u16>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Pgdl(c) => pgdl_cmd(c),
        Command::Demo(a) => {
            let track = generate_track(a.track_seed, TRACK_TILES)?;
            let rec = run_rollout(&ScriptedDriver::default(), &track, &a.start.config(), None, a.steps)?;
            let demo = Demonstration::from_rollout("demo", DemoSource::Policy, &rec);
            demo.write_frames(fs::File::create(&a.out).with_context(|| a.out.display().to_string())?)?;
            println!("{}", json!({ "frames": demo.frames.len(), "eas": rec.eas }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Train(a) => train_cmd(a),
        Command::Sim(c) => sim_cmd(c),
        Command::Session(c) => session_cmd(c),
        Command::Serve(a) => {
            tracing_subscriber::fmt().init();
            let mut config = match &a.config {
                Some(p) => ServiceConfig::load(p)?,
                None => ServiceConfig::default(),
            }
            .with_env();
            if let Some(port) = a.port {
                config.port = port;
            }
            tokio::runtime::Runtime::new()?.block_on(structpolicy_service::serve(config))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn pgdl_cmd(c: PgdlCommand) -> Result<ExitCode> {
    match c {
        PgdlCommand::Check { file, schema } => {
            let src = read(&file)?;
            let diags = match parse(&src) {
                Ok(p) => pgdl::check(&p, &schema.get()),
                Err(d) => d,
            };
            if !diags.is_empty() {
                eprint!("{}", format_diagnostics(&diags));
            }
            Ok(if diags.iter().any(|d| d.is_error()) { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        PgdlCommand::Fmt { file, write } => {
            let program = parse(&read(&file)?).map_err(|d| anyhow::anyhow!("{}", format_diagnostics(&d)))?;
            let text = program.to_string();
            if write {
                fs::write(&file, text)?;
            } else {
                print!("{text}");
            }
            Ok(ExitCode::SUCCESS)
        }
        PgdlCommand::Compile { file, schema } => {
            let (c, warnings) = compile_source(&read(&file)?, &schema.get())
                .map_err(|d| anyhow::anyhow!("{}", format_diagnostics(&d)))?;
            if !warnings.is_empty() {
                eprint!("{}", format_diagnostics(&warnings));
            }
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "features": c.structure.features().len(),
                    "operators": c.structure.operators().len(),
                    "edges": c.structure.edges().len(),
                    "params": c.param_names,
                    "actions": c.structure.action_names(),
                    "summary": render_summary(&c),
                }))?
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| path.display().to_string())
}

fn read_demo(path: &Path) -> Result<Demonstration> {
    let f = fs::File::open(path).with_context(|| path.display().to_string())?;
    Demonstration::read_frames(BufReader::new(f)).with_context(|| path.display().to_string())
}

fn load_model(spec: &str, seed: u64) -> Result<PolicyModel> {
    if spec == "dense" {
        return Ok(PolicyModel::Dense(DensePolicy::baseline(seed)));
    }
    let (c, _) = compile_source(&read(Path::new(spec))?, &ObservationSchema::racing())
        .map_err(|d| anyhow::anyhow!("{spec}:\n{}", format_diagnostics(&d)))?;
    Ok(PolicyModel::Structured(Box::new(c)))
}

fn train_cmd(a: TrainArgs) -> Result<ExitCode> {
    let demos = a.demos.iter().map(|p| read_demo(p)).collect::<Result<Vec<_>>>()?;
    let data = Dataset::from_demos(&demos, &NormalizationSpec::racing())?;
    let mut config = TrainConfig::with_seed(a.seed);
    if let Some(b) = a.batches {
        config.total_batches = b;
    }
    if let Some(b) = a.batch_size {
        config.batch_size = b;
    }
    if let Some(lr) = a.lr {
        config.learning_rate = lr;
    }
    let mut model = load_model(&a.policy, a.seed)?;
    let report = train_with(&mut model, &data, &config, |_, _| true)?;
    if let Some(out) = &a.out {
        fs::write(out, write_weights(model.params()))?;
    }
    if let Some(out) = &a.losses {
        fs::write(out, report.to_table())?;
    }
    println!(
        "{}",
        json!({ "frames": data.len(), "batches": report.losses.len(), "final_loss": report.final_loss, "checksum": report.checksum })
    );
    Ok(ExitCode::SUCCESS)
}

fn policy(args: &PolicyArgs) -> Result<Box<dyn Policy + Sync>> {
    match args.policy.as_str() {
        "scripted" => Ok(Box::new(ScriptedDriver::default())),
        "stop" => Ok(Box::new(ConstantPolicy::full_brake())),
        spec => {
            let mut model = load_model(spec, 0)?;
            if let Some(w) = &args.weights {
                let values = read_weights(&fs::read(w)?)?;
                if values.len() != model.params().len() {
                    bail!("{} holds {} weights, the policy has {}", w.display(), values.len(), model.params().len());
                }
                model.set_params(values);
            }
            Ok(Box::new(PolicyDriver::new(model, NormalizationSpec::racing())))
        }
    }
}

fn sim_cmd(c: SimCommand) -> Result<ExitCode> {
    match c {
        SimCommand::Rollout { policy: p, track_seed, cutoff, start, noise_level, noise_seed } => {
            let driver = policy(&p)?;
            let track = generate_track(track_seed, TRACK_TILES)?;
            let noise = match noise_level {
                Some(l) => Some(NoiseSpec::level(l, noise_seed).with_context(|| format!("no noise level {l}"))?),
                None => None,
            };
            let rec = run_rollout(driver.as_ref(), &track, &start.config(), noise, cutoff)?;
            println!(
                "{}",
                json!({
                    "eas": rec.eas, "steps": rec.steps, "covered": rec.n_covered,
                    "total": rec.n_total, "termination": rec.termination,
                })
            );
        }
        SimCommand::Battery { policy: p, cutoff } => {
            let driver = policy(&p)?;
            let spec = BatterySpec { cutoff_steps: cutoff, ..BatterySpec::default() };
            let cells = run_battery(driver.as_ref(), &spec).map_err(anyhow::Error::msg)?;
            let mut groups = std::collections::BTreeMap::<&str, (f64, usize)>::new();
            for (cond, v) in &cells {
                let g = groups.entry(cond.group()).or_default();
                g.0 += v.unwrap_or(0.0);
                g.1 += 1;
            }
            let means: serde_json::Map<_, _> =
                groups.into_iter().map(|(k, (sum, n))| (k.to_string(), json!(sum / n as f64))).collect();
            println!("{}", json!({ "cells": cells.len(), "group_means": means }));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn session_cmd(c: SessionCommand) -> Result<ExitCode> {
    let save = |a: &AgentInstance, dir: &Path| -> Result<()> {
        a.persist(dir)?;
        println!("{}", json!({ "id": a.id, "version": a.version, "trial": a.trial, "tests": a.log.tests() }));
        Ok(())
    };
    match c {
        SessionCommand::New { dir, mode } => {
            let mode = match mode.as_str() {
                "structured" => AgentMode::Structured,
                "dense" => AgentMode::Dense,
                m => bail!("unknown mode `{m}` (structured or dense)"),
            };
            if dir.join("agent.json").exists() {
                bail!("{} already holds a session", dir.display());
            }
            let id = dir.file_name().and_then(|n| n.to_str()).unwrap_or("session").to_string();
            save(&AgentInstance::new(id, mode), &dir)?;
        }
        SessionCommand::Show { dir } => {
            let a = AgentInstance::load(&dir)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "id": a.id, "mode": a.mode, "version": a.version, "trial": a.trial,
                    "submitted": a.submitted, "tests": a.log.tests(),
                    "instructions": a.instructions.items,
                    "demos": a.demos.iter().map(|d| json!({ "meta": d.meta, "frames": d.frames.len() })).collect::<Vec<_>>(),
                    "summary": a.summary, "weight_checksum": a.weight_hash(),
                }))?
            );
        }
        SessionCommand::AddDemo { dir, file } => {
            let mut a = AgentInstance::load(&dir)?;
            a.add_demonstration(read_demo(&file)?)?;
            save(&a, &dir)?;
        }
        SessionCommand::Instruct { dir, text, replay } => {
            let mut a = AgentInstance::load(&dir)?;
            let backend = ReplayBackend::load(&replay)?;
            let now = SystemTime::now().duration_since(UNIX_EPOCH)?.as_secs();
            let backend: &dyn LlmBackend = &backend;
            a.add_instruction(&text, now, backend, &RestructureConfig::default())?;
            save(&a, &dir)?;
            if let Some(s) = &a.summary {
                println!("{s}");
            }
        }
        SessionCommand::Test { dir, cutoff } => {
            let mut a = AgentInstance::load(&dir)?;
            let rec = a.test_rollout(&StartConfig::nominal(), cutoff)?;
            println!("{}", json!({ "eas": rec.eas, "steps": rec.steps }));
            save(&a, &dir)?;
        }
        SessionCommand::Submit { dir } => {
            let mut a = AgentInstance::load(&dir)?;
            a.submit()?;
            save(&a, &dir)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
