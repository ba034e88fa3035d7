// Finite-difference check of a whole two-layer shuffled model, parameters
// and input pixels included.
//
// cargo run --example grad_check

use shuffle_vit::tensor::{grad_check, GradCheckReport};
use shuffle_vit::{Model, ModelConfig, Tensor};

pub fn run_example() -> shuffle_vit::Result<GradCheckReport> {
    // 4×4 image, 2 px patches: four patches plus the class token
    let mut config = ModelConfig::desk(8, 2, 3, true);
    config.image_size = 4;
    config.patch_size = 2;
    let mut model = Model::new(config, 11)?;
    // inflate the 0.02 init so every path carries signal
    for id in 0..model.params.len() {
        let t = model.params.get_mut(id);
        *t = t.map(|v| v * 25.0);
    }
    let n = model.params.len();
    let mut inputs: Vec<Tensor> = model.params.tensors().to_vec();
    inputs.push(Tensor::from_fn(&[1, 3, 4, 4], |i| ((i * 37 % 11) as f64 - 5.0) / 5.0));

    let report = grad_check(
        |tape, vars| {
            let logits = model.forward(tape, &vars[..n], vars[n])?;
            tape.cross_entropy(logits, &[1], 0.1)
        },
        &inputs,
        1e-4,
    )?;
    println!(
        "checked {} components, max relative error {:.2e}, passed {}",
        report.checked, report.max_rel_error, report.passed
    );
    Ok(report)
}

fn main() -> shuffle_vit::Result<()> {
    run_example().map(|_| ())
}
