use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use mcrc::harness::{
    self, render_heatmap, run_experiment, run_ipc, run_sweep, write_experiment_outputs,
    write_ipc_outputs, write_sweep_csv, ExperimentConfig, Metric, SplitConfig, SweepGrid,
};

/// Molecular-communication reservoir computer: experiments, IPC, sweeps.
#[derive(Parser)]
#[command(name = "mcrc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration, merged over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one value, e.g. `--set model.receptor.k_off=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and score it.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Use the 500-symbol split (300 train, 150 test).
        #[arg(long)]
        reduced: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Information processing capacity of the configured reservoir.
    Ipc {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-parameter sweep.
    Sweep {
        /// Sweep grid JSON; its `base` object is the experiment config.
        #[arg(long, conflicts_with = "preset")]
        grid: Option<PathBuf>,
        /// Built-in plane: kon_koff, nmax_t or d_dist.
        #[arg(long)]
        preset: Option<String>,
        /// Values per axis for presets.
        #[arg(long, default_value_t = 5)]
        count: usize,
        /// Metric for presets: nrmse or ipc_total.
        #[arg(long, default_value = "nrmse")]
        metric: String,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        budget: Option<usize>,
        /// Do not reuse or store cached cells.
        #[arg(long)]
        no_cache: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// SVG heatmap from a sweep CSV.
    Render {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value = "nrmse")]
        metric: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value = serde_json::from_str(&text)
        .map_err(mcrc::Error::from)
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(value)
}

fn load_config(args: &ConfigArgs, document: Option<Value>, extra: &[String]) -> Result<ExperimentConfig> {
    let document = match (&args.config, document) {
        (Some(path), None) => Some(read_json(path)?),
        (Some(path), Some(mut doc)) => {
            harness::merge_json(&mut doc, read_json(path)?);
            Some(doc)
        }
        (None, doc) => doc,
    };
    let mut overrides = args.overrides.clone();
    overrides.extend_from_slice(extra);
    let config: ExperimentConfig = harness::resolve_config(document, &overrides)?;
    config.resolved()?;
    Ok(config)
}

fn parse_metric(name: &str) -> Result<Metric> {
    match name {
        "nrmse" => Ok(Metric::Nrmse),
        "ipc_total" => Ok(Metric::IpcTotal),
        other => Err(mcrc::Error::Config(format!("unknown metric '{other}'")).into()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, reduced, out } => {
            let extra = if reduced {
                let r = SplitConfig::REDUCED;
                vec![format!("split.train={}", r.train), format!("split.test={}", r.test)]
            } else {
                Vec::new()
            };
            let cfg = load_config(&config, None, &extra)?;
            let report = run_experiment(&cfg)?;
            write_experiment_outputs(&cfg, &report, &out)?;
            println!(
                "nrmse {:.6} (train {:.6}) -> {}",
                report.nrmse,
                report.train_nrmse,
                out.display()
            );
        }
        Command::Ipc { config, out } => {
            let cfg = load_config(&config, None, &[])?;
            let report = run_ipc(&cfg)?;
            write_ipc_outputs(&cfg, &report, &out)?;
            println!(
                "total ipc {:.6} over {} sets -> {}",
                report.breakdown.total,
                report.breakdown.records.len(),
                out.display()
            );
        }
        Command::Sweep {
            grid,
            preset,
            count,
            metric,
            config,
            workers,
            budget,
            no_cache,
            out,
        } => {
            let mut sweep: SweepGrid = match (grid, preset) {
                (Some(path), _) => {
                    let mut doc = read_json(&path)?;
                    let base = doc.as_object_mut().and_then(|o| o.remove("base"));
                    let mut sweep: SweepGrid =
                        serde_json::from_value(doc).map_err(mcrc::Error::from)?;
                    sweep.base = load_config(&config, base, &[])?;
                    sweep
                }
                (None, Some(name)) => {
                    let mut sweep = SweepGrid::preset(&name, count, parse_metric(&metric)?)?;
                    sweep.base = load_config(&config, None, &[])?;
                    sweep
                }
                (None, None) => {
                    return Err(mcrc::Error::Config("sweep needs --grid or --preset".into()).into())
                }
            };
            if let Some(w) = workers {
                sweep.workers = w;
            }
            if let Some(b) = budget {
                sweep.budget = b;
            }
            fs::create_dir_all(&out)?;
            fs::write(out.join("grid.json"), serde_json::to_vec_pretty(&sweep)?)?;
            let cache = out.join("cache");
            let rows = run_sweep(&sweep, (!no_cache).then_some(cache.as_path()))?;
            let file = fs::File::create(out.join("sweep.csv"))?;
            write_sweep_csv(&sweep, &rows, BufWriter::new(file))?;
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            println!("{} cells, {} failed -> {}", rows.len(), failed, out.display());
        }
        Command::Render { csv, metric, out } => {
            let text = fs::read_to_string(&csv).with_context(|| format!("reading {}", csv.display()))?;
            let svg = render_heatmap(&text, &metric)?;
            fs::write(&out, svg)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<mcrc::Error>()) {
        Some(e) if e.is_validation() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // a wrapped error's message already ends with its source's
            let mut message = String::new();
            for cause in e.chain() {
                let text = cause.to_string();
                if !message.ends_with(&text) {
                    if !message.is_empty() {
                        message.push_str(": ");
                    }
                    message.push_str(&text);
                }
            }
            eprintln!("error: {message}");
            ExitCode::from(exit_code(&e))
        }
    }
}
