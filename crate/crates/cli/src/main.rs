use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trustauc::data::load_csv;
use trustauc::harness::{self, render_tables};
use trustauc::{Error, ExperimentConfig, Result, RunReport};

/// AUC-margin and cross-entropy training with optional contrastive
/// pretraining, cross-validated and scored for trust.
#[derive(Parser)]
#[command(name = "trustauc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Contrastive pretraining of an encoder on the training pool.
    Pretrain(Common),
    /// Stratified k-fold fine-tuning with test-split evaluation.
    Finetune(Common),
    /// Score a saved checkpoint on a dataset.
    Eval(EvalArgs),
    /// Both losses crossed with both initializations on shared folds.
    Grid(Common),
    /// Render markdown tables from report.json files or run directories.
    Report(ReportArgs),
}

/// Settings are applied in order: config file, named flags, then `--set`.
#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long = "out", value_name = "DIR")]
    output_dir: Option<PathBuf>,
    /// ce | auc_max
    #[arg(long)]
    loss: Option<String>,
    /// Start fine-tuning from this pretrained encoder checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Read data from a CSV file instead of generating it.
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
    #[arg(long)]
    label_column: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Fine-tuned scorer checkpoint.
    model: PathBuf,
    /// Override the checkpoint's stored decision threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Evaluate only on the held-out test split the harness would carve
    /// from this dataset, rather than every row.
    #[arg(long)]
    test_split: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Write the tables here instead of stdout.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        let named = [
            ("seed", self.seed.map(|s| s.to_string())),
            ("output_dir", self.output_dir.as_ref().map(|p| p.display().to_string())),
            ("loss", self.loss.clone()),
            ("checkpoint", self.checkpoint.as_ref().map(|p| p.display().to_string())),
            ("csv_path", self.csv.as_ref().map(|p| p.display().to_string())),
            ("label_column", self.label_column.clone()),
            ("epochs", self.epochs.map(|e| e.to_string())),
        ];
        for (key, value) in named {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_report(path: &Path) -> Result<RunReport> {
    if path.is_dir() {
        RunReport::read(&path.join("report.json"))
    } else {
        RunReport::read(path)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain(common) => {
            let cfg = common.config()?;
            let (path, outcome) = harness::run_pretrain(&cfg)?;
            let last = outcome.losses.last().copied().unwrap_or(f64::NAN);
            println!("{} ({} steps, final loss {last:.4})", path.display(), outcome.losses.len());
        }
        Command::Finetune(common) => {
            let cfg = common.config()?;
            let out = harness::run_finetune(&cfg)?;
            print!("{}", render_tables(std::slice::from_ref(&out.report)));
            println!("\nwrote {}", cfg.output_dir.display());
        }
        Command::Eval(args) => {
            let cfg = args.common.config()?;
            let table = if args.test_split {
                let data = harness::prepare_data(&cfg)?;
                data.table.subset(&data.test)
            } else {
                match &cfg.data {
                    harness::DataSource::Csv { path, label_column } => load_csv(path, label_column)?,
                    harness::DataSource::Synthetic(_) => harness::load_dataset(&cfg)?,
                }
            };
            let m = harness::run_eval(&args.model, &table, args.threshold, &cfg)?;
            println!(
                "n={} threshold={:.6} auc={:.4} accuracy={:.4} trust_pos={:.4} trust_neg={:.4}",
                m.n, m.threshold, m.auc, m.accuracy, m.trust_pos, m.trust_neg
            );
        }
        Command::Grid(common) => {
            let cfg = common.config()?;
            let grid = harness::run_grid(&cfg)?;
            print!("{}", render_tables(&grid.reports));
            println!("\nwrote {}", cfg.output_dir.display());
        }
        Command::Report(args) => {
            let reports = args
                .inputs
                .iter()
                .map(|p| read_report(p))
                .collect::<Result<Vec<_>>>()?;
            let text = render_tables(&reports);
            match args.out {
                Some(path) => std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("trustauc: {e}");
            ExitCode::FAILURE
        }
    }
}
