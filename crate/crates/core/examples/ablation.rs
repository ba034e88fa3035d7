// Baseline, +shuffle and +shuffle+rescale trained with one recipe.
//
// cargo run --release --example ablation -- [epochs] [train_samples]

use shuffle_vit::harness::{run_ablation, synthetic_splits, AblationRow, TrainConfig};
use shuffle_vit::ModelConfig;

pub fn run(epochs: usize, samples: usize) -> shuffle_vit::Result<Vec<AblationRow>> {
    let (train_set, eval_set) = synthetic_splits(samples, samples.min(1000))?;
    let tc = TrainConfig { epochs, batch_size: 64, ..Default::default() };
    let rows = run_ablation(&ModelConfig::desk(32, 2, 10, false), &tc, &train_set, &eval_set)?;
    println!("{:<18} {:>10} {:>8} {:>8}", "variant", "MACs", "params", "top-1");
    for r in &rows {
        println!("{:<18} {:>10} {:>8} {:>8.3}", r.variant, r.macs, r.params, r.accuracy);
    }
    Ok(rows)
}

pub fn run_example() -> shuffle_vit::Result<Vec<AblationRow>> {
    run(1, 128)
}

fn main() -> shuffle_vit::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(4);
    let samples = args.next().and_then(|a| a.parse().ok()).unwrap_or(2000);
    run(epochs, samples).map(|_| ())
}
