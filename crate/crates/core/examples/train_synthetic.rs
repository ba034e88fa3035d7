// Train a vanilla and a shuffled desk model on the synthetic gratings.
//
// cargo run --release --example train_synthetic -- [epochs] [train_samples]

use std::time::Instant;

use shuffle_vit::harness::{synthetic_splits, train, EpochMetrics, TrainConfig};
use shuffle_vit::ModelConfig;

pub fn run(epochs: usize, samples: usize) -> shuffle_vit::Result<Vec<Vec<EpochMetrics>>> {
    let (train_set, eval_set) = synthetic_splits(samples, samples.min(1000))?;
    let tc = TrainConfig { epochs, batch_size: 64, ..Default::default() };
    let mut logs = Vec::new();
    for shuffle in [false, true] {
        let config = ModelConfig::desk(32, 2, 10, shuffle);
        let start = Instant::now();
        let out = train(&config, &tc, &train_set, Some(&eval_set), None)?;
        for m in &out.metrics {
            println!(
                "shuffle={shuffle} epoch={} loss={:.4} train={:.3} eval={:.3}",
                m.epoch, m.train_loss, m.train_acc, m.eval_acc
            );
        }
        println!("shuffle={shuffle} took {:.1}s", start.elapsed().as_secs_f64());
        logs.push(out.metrics);
    }
    Ok(logs)
}

pub fn run_example() -> shuffle_vit::Result<Vec<Vec<EpochMetrics>>> {
    run(1, 200)
}

fn main() -> shuffle_vit::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(6);
    let samples = args.next().and_then(|a| a.parse().ok()).unwrap_or(5000);
    run(epochs, samples).map(|_| ())
}
