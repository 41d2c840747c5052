use anyhow::Context;
use clap::{Parser, Subcommand};
use serde_json::Value;
use std::path::{Path, PathBuf};

use spinrotor_cli::config::{from_value, to_json};
use spinrotor_cli::error::{config_err, exit_code};
use spinrotor_cli::manifest::OutputSink;
use spinrotor_cli::scenarios::run_to_dir;
use spinrotor_cli::sweep::{parse_grid, run_sweep};

#[derive(Parser)]
#[command(name = "spinrotor", version, about = "Spin-rotor simulations of levitated nanodiamonds")]
struct Cli {
    /// Worker threads for ensembles, scans and sweeps.
    #[arg(long, global = true, env = "SPINROTOR_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario config.
    Run {
        config: PathBuf,
        /// Output directory (overrides `output.directory`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// RNG seed (overrides `seed`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a config once per value of one parameter.
    Sweep {
        config: PathBuf,
        /// Dotted path into the config, e.g. `spin.s_body.1`.
        #[arg(long)]
        param: String,
        /// `a,b,c`, `start:stop:n` or `log:start:stop:n`.
        #[arg(long, allow_hyphen_values = true)]
        grid: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parse and resolve a config, printing the resolved form.
    Validate { config: PathBuf },
}

fn load(path: &Path, out: Option<&Path>, seed: Option<u64>) -> anyhow::Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut doc: Value =
        serde_json::from_str(&text).map_err(|e| config_err(format!("{}: invalid JSON: {e}", path.display())))?;
    let Some(map) = doc.as_object_mut() else {
        return Err(config_err(format!("{}: top level must be an object", path.display())));
    };
    if let Some(seed) = seed {
        map.insert("seed".into(), seed.into());
    }
    if let Some(out) = out {
        let output = map.entry("output").or_insert_with(|| Value::Object(Default::default()));
        let Some(output) = output.as_object_mut() else {
            return Err(config_err("`output` must be an object"));
        };
        output.insert("directory".into(), out.to_string_lossy().into_owned().into());
    }
    Ok(doc)
}

fn output_dir(doc: &Value) -> anyhow::Result<PathBuf> {
    Ok(PathBuf::from(from_value(doc.clone())?.output.directory))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(config_err("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    match cli.command {
        Command::Run { config, out, seed } => {
            let cfg = from_value(load(&config, out.as_deref(), seed)?)?;
            let dir = PathBuf::from(&cfg.output.directory);
            let (summary, files) = run_to_dir(&cfg, &dir)?;
            eprintln!("{}: {} files written to {}", summary.scenario.key(), files.len() + 1, dir.display());
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Sweep { config, param, grid, out, seed } => {
            let grid = parse_grid(&grid)?;
            let doc = load(&config, out.as_deref(), seed)?;
            let dir = output_dir(&doc)?;
            let sink = OutputSink::create(&dir)?;
            let outcome = run_sweep(&doc, &param, &grid, &sink)?;
            eprintln!("{} points written to {}", outcome.rows.len(), dir.display());
        }
        Command::Validate { config } => {
            let cfg = from_value(load(&config, None, None)?)?;
            print!("{}", to_json(&cfg));
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(exit_code(&e));
    }
}
