// MACs and parameters for the reference presets.
//
// cargo run --example complexity_table

use shuffle_vit::complexity::{gmacs_string, macs_shuffled_layer, macs_vanilla_layer, model_report, mparams_string, shuffle_overhead};
use shuffle_vit::ModelConfig;

pub fn run_example() -> shuffle_vit::Result<Vec<(String, u128, u128)>> {
    let vanilla = macs_vanilla_layer(197, 192, 4);
    let shuffled = macs_shuffled_layer(197, 192, 4);
    println!("one DeiT-Tiny layer: vanilla {vanilla}, shuffled {shuffled}");
    println!("overhead LNC + 3P²NC + SC = {}", shuffle_overhead(12, 197, 192, 16, 1000));

    let mut rows = Vec::new();
    for name in ["deit-tiny", "deit-tiny-shuffled", "swin-extratiny", "swin-extratiny-shuffled"] {
        let t = model_report(&ModelConfig::preset(name)?)?.totals;
        println!(
            "{name:<24} {:>14} MACs ({} G)  {:>9} params ({})",
            t.total_macs,
            gmacs_string(t.total_macs),
            t.total_params,
            mparams_string(t.total_params)
        );
        rows.push((name.to_string(), t.total_macs, t.total_params));
    }
    println!("\n{}", model_report(&ModelConfig::deit_tiny_shuffled())?.to_table());
    Ok(rows)
}

fn main() -> shuffle_vit::Result<()> {
    run_example().map(|_| ())
}
