use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedsarsa::experiment::{self, ExperimentKind, ExperimentSpec};
use fedsarsa::train::write_atomic;
use fedsarsa::Error;
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "fedsarsa", version, about = "Federated SARSA experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat JSON experiment configuration. Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Number of seeds per sweep cell.
    #[arg(long, global = true)]
    seeds: Option<usize>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Proceed when the instance fails the standing assumptions.
    #[arg(long, global = true)]
    waive_assumptions: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Draw and admit the Garnet environments.
    Generate,
    /// One seeded training run.
    Run,
    /// Plateau error over agent counts and local-step counts.
    Speedup,
    /// Plateau error over local-step counts at a fixed agent count.
    LocalSteps,
    /// Fixed-point error over the heterogeneity grid.
    Table1,
    /// Constants, fixed points and assumption flags as JSON.
    Report,
}

impl Command {
    fn kind(self) -> ExperimentKind {
        match self {
            Command::Generate => ExperimentKind::Generate,
            Command::Run => ExperimentKind::SingleRun,
            Command::Speedup => ExperimentKind::Speedup,
            Command::LocalSteps => ExperimentKind::LocalSteps,
            Command::Table1 => ExperimentKind::Table1,
            Command::Report => ExperimentKind::Report,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(doc) => {
            println!("{}", serde_json::to_string_pretty(&doc).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let kind = e.downcast_ref::<Error>().map_or("internal", Error::kind);
            let doc = json!({"error": {"kind": kind, "message": format!("{e:#}")}});
            eprintln!("{doc}");
            ExitCode::from(exit_code(kind))
        }
    }
}

fn exit_code(kind: &str) -> u8 {
    match kind {
        "config" | "json" => 2,
        "io" => 3,
        "assumption" => 4,
        _ => 1,
    }
}

fn load_spec(cli: &Cli) -> anyhow::Result<ExperimentSpec> {
    let mut spec = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(Error::from)?;
            ExperimentSpec::from_json(&text).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
                e => e,
            })?
        }
        None => ExperimentSpec::default(),
    };
    spec.check_kind(cli.command.kind())?;
    if let Some(n) = cli.seeds {
        spec.n_seeds = n;
    }
    if cli.waive_assumptions {
        spec.waive_assumptions = true;
    }
    spec.kind = Some(cli.command.kind());
    spec.validate()?;
    Ok(spec)
}

fn run(cli: &Cli) -> anyhow::Result<Value> {
    let spec = load_spec(cli)?;
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Config("`--threads` must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    let out = cli.out.as_path();
    save_spec(&spec, out)?;
    let doc = match cli.command {
        Command::Generate => {
            let p = experiment::generate(&spec, out)?;
            json!({"beta": p.beta(), "files": (0..p.envs.len()).map(|i| out.join(format!("env_{i}.json"))).collect::<Vec<_>>()})
        }
        Command::Run => {
            let rec = experiment::single_run(&spec, out)?;
            json!({"csv": out.join("run.csv"), "config_hash": rec.config_hash, "final": rec.last()})
        }
        Command::Speedup => serde_json::to_value(experiment::speedup(&spec, out)?)?,
        Command::LocalSteps => serde_json::to_value(experiment::local_steps(&spec, out)?)?,
        Command::Table1 => serde_json::to_value(experiment::table1(&spec, out)?)?,
        Command::Report => {
            let doc = experiment::report(&spec)?;
            write_atomic(&out.join("report.json"), serde_json::to_string_pretty(&doc)?.as_bytes())?;
            doc
        }
    };
    Ok(doc)
}

/// The resolved configuration, replayable with `--config`.
fn save_spec(spec: &ExperimentSpec, out: &Path) -> anyhow::Result<()> {
    let name = format!("{}.config.json", serde_json::to_value(spec.kind)?.as_str().unwrap_or("experiment"));
    write_atomic(&out.join(name), serde_json::to_string_pretty(spec)?.as_bytes())?;
    Ok(())
}
