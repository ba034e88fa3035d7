// Per-channel statistics at the end of the first stage, vanilla against
// shuffled, after a short training run.
//
// cargo run --release --example channel_stats -- [epochs]

use shuffle_vit::harness::stats::{channel_stats, std_dispersion};
use shuffle_vit::harness::{synthetic_splits, train, ChannelStat, TrainConfig};
use shuffle_vit::shuffle::Boundary;
use shuffle_vit::ModelConfig;

pub fn run(epochs: usize, samples: usize) -> shuffle_vit::Result<Vec<Vec<ChannelStat>>> {
    let (train_set, eval_set) = synthetic_splits(samples, 200)?;
    let tc = TrainConfig { epochs, batch_size: 64, ..Default::default() };
    let mut all = Vec::new();
    for shuffle in [false, true] {
        let out = train(&ModelConfig::desk(32, 2, 10, shuffle), &tc, &train_set, None, None)?;
        let stats = channel_stats(&out.model, &eval_set, Boundary::Stage(0))?;
        println!(
            "shuffle={shuffle}: {} channels, std dispersion {:.4}",
            stats.len(),
            std_dispersion(&stats)
        );
        all.push(stats);
    }
    Ok(all)
}

pub fn run_example() -> shuffle_vit::Result<Vec<Vec<ChannelStat>>> {
    run(1, 128)
}

fn main() -> shuffle_vit::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(3);
    run(epochs, 2000).map(|_| ())
}
