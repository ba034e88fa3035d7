use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use shuffle_vit::complexity::{extended_counts, model_report};
use shuffle_vit::harness::data::{synthetic_splits, Dataset, Split};
use shuffle_vit::harness::stats::export_channel_stats;
use shuffle_vit::harness::train::MetricsLog;
use shuffle_vit::harness::{
    evaluate, load_cifar10_split, run_ablation, train, write_ablation_csv, Checkpoint, RunConfig, TrainConfig,
};
use shuffle_vit::shuffle::{riffle_permutation, Boundary};
use shuffle_vit::{ModelConfig, Result};

#[derive(Parser)]
#[command(name = "shvit", version, about = "Channel shuffle for tiny vision transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model (or the three-row ablation grid).
    Train(TrainArgs),
    /// Top-1 accuracy of a checkpoint.
    Eval(EvalArgs),
    /// MACs and parameter breakdown.
    Macs(MacsArgs),
    /// Per-channel feature statistics at a layer or stage boundary.
    Stats(StatsArgs),
    /// Print the riffle permutation for a channel count.
    ShuffleDemo(DemoArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DatasetKind {
    Cifar10,
    Synthetic,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

impl OnOff {
    fn get(self) -> bool {
        self == OnOff::On
    }
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, value_enum, default_value = "synthetic")]
    dataset: DatasetKind,
    /// CIFAR-10 binary directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic training samples.
    #[arg(long, default_value_t = 5000)]
    train_samples: usize,
    /// Synthetic evaluation samples.
    #[arg(long, default_value_t = 1000)]
    eval_samples: usize,
}

impl DataArgs {
    fn load(&self) -> Result<(Dataset, Dataset)> {
        match self.dataset {
            DatasetKind::Synthetic => synthetic_splits(self.train_samples, self.eval_samples),
            DatasetKind::Cifar10 => {
                let dir = self.data.as_deref().ok_or_else(|| {
                    shuffle_vit::Error::Config("--dataset cifar10 needs --data <dir>".into())
                })?;
                Ok((load_cifar10_split(dir, Split::Train)?, load_cifar10_split(dir, Split::Test)?))
            }
        }
    }

    fn eval_set(&self) -> Result<Dataset> {
        match self.dataset {
            DatasetKind::Synthetic => Ok(synthetic_splits(0, self.eval_samples)?.1),
            DatasetKind::Cifar10 => {
                let dir = self.data.as_deref().ok_or_else(|| {
                    shuffle_vit::Error::Config("--dataset cifar10 needs --data <dir>".into())
                })?;
                load_cifar10_split(dir, Split::Test)
            }
        }
    }
}

#[derive(Args)]
struct ModelArgs {
    /// JSON file with `model` and optional `train` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named model configuration, used when no config file is given.
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long, value_enum)]
    shuffle: Option<OnOff>,
    #[arg(long, value_enum)]
    rescale: Option<OnOff>,
}

impl ModelArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut run = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig {
                model: ModelConfig::preset(&self.preset)?,
                train: TrainConfig::default(),
            },
        };
        if let Some(s) = self.shuffle {
            run.model.shuffle_enabled = s.get();
            run.model.rescale_enabled = s.get();
        }
        if let Some(r) = self.rescale {
            run.model.rescale_enabled = r.get();
        }
        run.model.validate()?;
        Ok(run)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
    /// Train baseline, +shuffle and +shuffle+rescale and write ablation.csv.
    #[arg(long)]
    ablation: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Also write eval.json here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MacsArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
    /// Include non-matmul operation counts.
    #[arg(long)]
    extended: bool,
    /// Write macs.json into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// `embed`, `layer:<i>` or `stage:<s>`.
    #[arg(long, default_value = "stage:0")]
    select: String,
    #[arg(long, default_value = "runs/stats")]
    out: PathBuf,
}

#[derive(Args)]
struct DemoArgs {
    /// Total channel count (even).
    #[arg(long, default_value_t = 8)]
    channels: usize,
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let mut run = a.model.resolve()?;
    let tc = &mut run.train;
    if let Some(s) = a.seed {
        tc.seed = s;
    }
    tc.deterministic |= a.deterministic;
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    if let Some(lr) = a.lr {
        tc.lr = lr;
    }
    if let Some(b) = a.batch {
        tc.batch_size = b;
    }
    tc.validate()?;
    let (train_set, eval_set) = a.data.load()?;
    fs::create_dir_all(&a.out)?;

    if a.ablation {
        let rows = run_ablation(&run.model, &run.train, &train_set, &eval_set)?;
        let path = a.out.join("ablation.csv");
        write_ablation_csv(&rows, &path)?;
        for r in &rows {
            println!("{:<18} macs={} params={} acc={:.4}", r.variant, r.macs, r.params, r.accuracy);
        }
        println!("wrote {}", path.display());
        return Ok(());
    }

    let metrics_path = a.out.join("metrics.csv");
    let mut log = MetricsLog::open(&metrics_path)?;
    let out = train(&run.model, &run.train, &train_set, Some(&eval_set), Some(&mut log))?;
    for m in &out.metrics {
        println!(
            "epoch {:>3}  loss {:.4}  train {:.4}  eval {:.4}  lr {:.2e}",
            m.epoch, m.train_loss, m.train_acc, m.eval_acc, m.lr
        );
    }
    let ckpt = a.out.join("checkpoint.shvt");
    out.checkpoint.save(&ckpt)?;
    fs::write(a.out.join("config.json"), serde_json::to_string_pretty(&run)?)?;
    println!("wrote {} and {}", metrics_path.display(), ckpt.display());
    Ok(())
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let acc = evaluate(&ckpt, &a.data.eval_set()?)?;
    println!("top-1 {acc:.4}");
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("eval.json"), serde_json::json!({ "top1": acc }).to_string())?;
    }
    Ok(())
}

fn run_macs(a: &MacsArgs) -> Result<()> {
    let config = a.model.resolve()?.model;
    let report = model_report(&config)?;
    if a.json {
        println!("{}", report.to_json()?);
    } else {
        print!("{}", report.to_table());
    }
    if a.extended {
        let e = extended_counts(&config)?;
        println!(
            "extended: bias_adds={} norm_elements={} softmax_elements={} activation_elements={} rescale_multiplies={}",
            e.bias_adds, e.norm_elements, e.softmax_elements, e.activation_elements, e.rescale_multiplies
        );
    }
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("macs.json"), report.to_json()?)?;
    }
    Ok(())
}

fn run_stats(a: &StatsArgs) -> Result<()> {
    let boundary: Boundary = a.select.parse()?;
    let model = Checkpoint::load(&a.checkpoint)?.to_model()?;
    fs::create_dir_all(&a.out)?;
    let path = a.out.join("stats.csv");
    let stats = export_channel_stats(&model, &a.data.eval_set()?, boundary, &path)?;
    println!("wrote {} rows to {}", stats.len(), path.display());
    Ok(())
}

fn run_demo(a: &DemoArgs) -> Result<()> {
    let perm = riffle_permutation(a.channels)?;
    let half = a.channels / 2;
    for (out, &src) in perm.iter().enumerate() {
        let group = if src < half { "attended" } else { "idle" };
        println!("out {out:>4} <- in {src:>4} ({group})");
    }
    Ok(())
}

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Macs(a) => run_macs(a),
        Command::Stats(a) => run_stats(a),
        Command::ShuffleDemo(a) => run_demo(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
