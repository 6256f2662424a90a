use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use protoreplay::experiment::plot::default_reference;
use protoreplay::experiment::{self, RunConfig, RunOptions, PRESETS};
use protoreplay::learner::Method;
use protoreplay::{Error, Result};

#[derive(Parser)]
#[command(name = "protoreplay", version, about = "Online class-incremental learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every configured seed.
    Run(RunArgs),
    /// Summarize finished runs as mean ± std per method and M.
    Aggregate {
        /// Run directories or record.json files.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Also write summary.json and summary.txt here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw anytime-accuracy curves to SVG.
    Plot {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
        /// Horizontal reference accuracy; defaults to the iid line on CIFAR-10.
        #[arg(long)]
        reference: Option<f64>,
        #[arg(long, conflicts_with = "reference")]
        no_reference: bool,
    },
    /// List built-in presets, or print one as TOML.
    ListConfigs {
        #[arg(long)]
        show: Option<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset (see list-configs).
    #[arg(long)]
    preset: Option<String>,
    /// Override any config key, e.g. --set learning_rate=0.05 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Comma-separated methods; each one is run in turn.
    #[arg(long, value_delimiter = ',')]
    method: Vec<Method>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Continue from checkpoints and reuse finished seeds.
    #[arg(long)]
    resume: bool,
    /// Stop each seed after this many batches, leaving a checkpoint.
    #[arg(long)]
    halt_after: Option<usize>,
}

fn run_command(args: RunArgs) -> Result<()> {
    let base = match (&args.config, &args.preset) {
        (Some(path), _) => std::fs::read_to_string(path)?,
        (None, Some(name)) => experiment::preset(name)?.toml.to_string(),
        (None, None) => String::new(),
    };
    let mut overrides = args.overrides.clone();
    if !args.seeds.is_empty() {
        let list: Vec<String> = args.seeds.iter().map(u64::to_string).collect();
        overrides.push(format!("seeds=[{}]", list.join(",")));
    }
    for (key, path) in [("output_dir", &args.output_dir), ("data_dir", &args.data_dir)] {
        if let Some(p) = path {
            overrides.push(format!("{key}={}", toml::Value::String(p.display().to_string())));
        }
    }
    let methods: Vec<Option<Method>> = if args.method.is_empty() {
        vec![None]
    } else {
        args.method.iter().copied().map(Some).collect()
    };
    let opts = RunOptions {
        resume: args.resume,
        halt_after: args.halt_after,
    };
    for m in methods {
        let mut ov = overrides.clone();
        if let Some(m) = m {
            ov.push(format!("method=\"{m}\""));
        }
        let cfg = RunConfig::from_toml_with_overrides(&base, &ov)?;
        let report = experiment::run(&cfg, &opts)?;
        if !report.halted.is_empty() {
            println!("{}: halted seeds {:?}, resume with --resume", report.run_dir.display(), report.halted);
            continue;
        }
        let summary = experiment::aggregate(&report.records)?;
        println!("{}", report.run_dir.display());
        print!("{}", experiment::render(&summary));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => run_command(args),
        Command::Aggregate { paths, out } => {
            let records = experiment::load_records(&paths)?;
            let summary = experiment::aggregate(&records)?;
            print!("{}", experiment::render(&summary));
            if let Some(dir) = out {
                experiment::aggregate::write_summary(&summary, &dir)?;
            }
            Ok(())
        }
        Command::Plot {
            paths,
            out,
            reference,
            no_reference,
        } => {
            let records = experiment::load_records(&paths)?;
            let reference = match (no_reference, reference, records.first()) {
                (true, _, _) => None,
                (false, Some(r), _) => Some(r),
                (false, None, first) => first.and_then(|r| default_reference(r.dataset)),
            };
            let path = experiment::plot_anytime(&records, &out, reference)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::ListConfigs { show } => {
            match show {
                Some(name) => {
                    let p = experiment::preset(&name)?;
                    let cfg = RunConfig::from_toml_str(p.toml)?;
                    print!("{}", cfg.to_toml_string());
                }
                None => {
                    for p in PRESETS {
                        println!("{:<14} {}", p.name, p.summary);
                    }
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
