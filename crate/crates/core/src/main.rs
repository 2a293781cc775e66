use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use toml::{Table, Value};

use openanneal::cli::config::from_table;
use openanneal::cli::{benchmark, run, RunConfig};

#[derive(Parser)]
#[command(name = "openanneal", version, about = "Open-system quantum annealing simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Master seed, replacing the configured one.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "OPENANNEAL_WORKERS")]
    workers: Option<usize>,
    /// Output directory, replacing `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Adiabatic master equation.
    Ame,
    /// Quantum-trajectory ensemble.
    Traj,
    /// 1/f fluctuator ensemble.
    Fluct,
    /// Spin-vector Monte Carlo.
    Svmc,
    /// Parameter sweep described by `[sweep]`.
    Sweep,
    /// Wall time per worker count (`bench.workers`) for the configured engine.
    Bench,
}

impl Command {
    fn engine(self) -> Option<&'static str> {
        match self {
            Command::Ame => Some("ame"),
            Command::Traj => Some("traj"),
            Command::Fluct => Some("fluct"),
            Command::Svmc => Some("svmc"),
            Command::Sweep => Some("sweep"),
            Command::Bench => None,
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig, String> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?,
        None => String::new(),
    };
    let mut root: Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
    if let Some(e) = cli.command.engine() {
        root.insert("engine".into(), e.into());
    }
    if let Some(s) = cli.seed {
        root.insert("seed".into(), Value::Integer(s as i64));
    }
    if let Some(w) = cli.workers {
        if let Value::Table(t) = root.entry("numeric").or_insert_with(|| Value::Table(Table::new())) {
            t.insert("workers".into(), Value::Integer(w as i64));
        }
    }
    let mut cfg = from_table(&root).map_err(|e| e.to_string())?;
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error:\n{e}");
            return ExitCode::from(2);
        }
    };
    let (name, result) = match cli.command {
        Command::Bench => (
            "bench",
            benchmark(&cfg, &cfg.bench.workers).map(|b| {
                for w in &b.warnings {
                    eprintln!("warning: {w}");
                }
                b.table
            }),
        ),
        _ => (cfg.engine.name(), run(&cfg)),
    };
    let table = match result {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let path = cfg.output_dir.join(format!("{name}.csv"));
    let written = std::fs::create_dir_all(&cfg.output_dir).and_then(|_| std::fs::write(&path, table.to_csv()));
    if let Err(e) = written {
        eprintln!("error: {}: {e}", path.display());
        return ExitCode::FAILURE;
    }
    println!("{}", path.display());
    ExitCode::SUCCESS
}
