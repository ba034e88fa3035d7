// Save a trained model, load it back and compare logits bit for bit.
//
// cargo run --example checkpoint_roundtrip

use shuffle_vit::harness::{synthetic_splits, train, Checkpoint, TrainConfig};
use shuffle_vit::ModelConfig;

pub fn run_example() -> shuffle_vit::Result<bool> {
    let (train_set, eval_set) = synthetic_splits(128, 64)?;
    let config = ModelConfig::desk(16, 1, 10, true);
    let tc = TrainConfig { epochs: 1, batch_size: 32, seed: 4, ..Default::default() };
    let out = train(&config, &tc, &train_set, None, None)?;

    let path = std::env::temp_dir().join(format!("shvit-example-{}.shvt", std::process::id()));
    out.checkpoint.save(&path)?;
    let loaded = Checkpoint::load(&path)?;
    std::fs::remove_file(&path)?;

    let (batch, _) = eval_set.batch(&(0..16).collect::<Vec<_>>());
    let before = out.model.predict(&batch)?;
    let after = loaded.to_model()?.predict(&batch)?;
    let identical = before.data().iter().zip(after.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    println!("step {} seed {}: logits identical = {identical}", loaded.step, loaded.seed);
    Ok(identical)
}

fn main() -> shuffle_vit::Result<()> {
    run_example().map(|_| ())
}
