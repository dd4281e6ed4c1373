use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use attf_core::grid::check_well_formed_with_starts;
use attf_core::instance::{
    initial_positions, load_map, serialize_map, Assignment, GuidanceMode, TaskSource, Termination,
};
use attf_core::layouts;
use attf_core::sim::{self, MatrixSpec};
use attf_core::{Frequency, RunConfig, Time};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "attf",
    version,
    about = "Lifelong multi-agent pickup and delivery simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one instance and print its metrics as JSON.
    Run(RunArgs),
    /// Run a matrix of configurations over seeds and print one CSV row per configuration.
    Bench {
        #[arg(long)]
        matrix: PathBuf,
        /// Also write the CSV table here.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write every individual run as JSON.
        #[arg(long)]
        runs_out: Option<PathBuf>,
    },
    /// Check that a map is well-formed for the given number of agents.
    Check {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        agents: usize,
    },
    /// Print a built-in map.
    Layout {
        #[arg(value_enum)]
        name: LayoutName,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Parking cells on the random map.
        #[arg(long, default_value_t = 60)]
        parking: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutName {
    SmallWarehouse,
    Random32,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; command-line flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long, conflicts_with = "gen_tasks")]
    tasks: Option<PathBuf>,
    /// Generate this many tasks instead of reading a task file.
    #[arg(long, requires = "freq")]
    gen_tasks: Option<usize>,
    /// Tasks released per timestep, decimal or fraction.
    #[arg(long)]
    freq: Option<Frequency>,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    delay_p: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// zero | file:DIR | remote:CMD
    #[arg(long)]
    guidance: Option<GuidanceMode>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    recovery_radius: Option<u32>,
    #[arg(long)]
    horizon: Option<Time>,
    /// Run exactly this many timesteps instead of until all tasks are done.
    #[arg(long)]
    fixed: Option<Time>,
    /// Give every free agent a fresh random task instead of matching the stream.
    #[arg(long)]
    random_assign: bool,
    /// Log and repair internal planner conflicts instead of aborting.
    #[arg(long)]
    lenient: bool,
    #[arg(long)]
    require_well_formed: bool,
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(m) = self.map {
            cfg.map = m;
        }
        if cfg.map.as_os_str().is_empty() {
            bail!("--map is required");
        }
        if let Some(t) = self.tasks {
            cfg.tasks = TaskSource::File(t);
        } else if let (Some(count), Some(frequency)) = (self.gen_tasks, self.freq) {
            cfg.tasks = TaskSource::Generate {
                count,
                frequency,
                seed: None,
            };
        }
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { cfg.$field = v; })* };
        }
        set!(agents, delay_p, seed, guidance, recovery_radius);
        macro_rules! set_opt {
            ($($field:ident),*) => { $(if self.$field.is_some() { cfg.$field = self.$field; })* };
        }
        set_opt!(max_iters, horizon, metrics_out, trace_out);
        if let Some(n) = self.fixed {
            cfg.termination = Termination::Fixed(n);
        }
        if self.random_assign {
            cfg.assignment = Assignment::Random;
        }
        if self.lenient {
            cfg.strict = false;
        }
        if self.require_well_formed {
            cfg.require_well_formed = true;
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.into_config()?;
            let result = sim::run(&cfg)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&sim::metrics_json(&result))?
            );
            Ok(if result.metrics.incomplete {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Bench {
            matrix,
            csv,
            runs_out,
        } => {
            let text = std::fs::read_to_string(&matrix)
                .with_context(|| format!("reading {}", matrix.display()))?;
            let spec = MatrixSpec::from_json(&text)
                .with_context(|| format!("parsing {}", matrix.display()))?;
            if spec.configs.is_empty() {
                bail!("matrix has no configurations");
            }
            let table = sim::run_matrix(&spec);
            print!("{}", table.to_csv()?);
            if let Some(path) = csv {
                table.write_csv(&path)?;
            }
            if let Some(path) = runs_out {
                std::fs::write(&path, serde_json::to_string_pretty(&table.runs)?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            for r in table.runs.iter().filter(|r| r.error.is_some()) {
                log::error!(
                    "config {} seed {}: {}",
                    r.config,
                    r.seed,
                    r.error.as_deref().unwrap_or_default()
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { map, agents } => {
            let grid = load_map(&map)?;
            let starts = initial_positions(&grid, agents).unwrap_or_default();
            let report = if starts.is_empty() && agents > 0 {
                attf_core::grid::check_well_formed(&grid, agents)
            } else {
                check_well_formed_with_starts(&grid, &starts)
            };
            for v in &report.violations {
                println!("violation: {v}");
            }
            for w in &report.warnings {
                println!("warning: {w:?}");
            }
            println!(
                "{}",
                if report.ok {
                    "well-formed"
                } else {
                    "not well-formed"
                }
            );
            Ok(if report.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Layout {
            name,
            seed,
            parking,
        } => {
            let map = match name {
                LayoutName::SmallWarehouse => layouts::small_warehouse(),
                LayoutName::Random32 => layouts::random_32_32_10(seed, parking),
            };
            print!("{}", serialize_map(&map));
            Ok(ExitCode::SUCCESS)
        }
    }
}
