//! Acceptance criteria 1 to 9, one PASS/FAIL line each.
//!
//! cargo test --release --test acceptance

mod common;

use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use shuffle_vit::complexity::{downsample_macs, macs_shuffled_layer, macs_vanilla_layer};
use shuffle_vit::harness::ablation::read_ablation_csv;
use shuffle_vit::harness::{evaluate_model, synthetic_splits, train, Checkpoint, RunConfig, TrainConfig};
use shuffle_vit::model::LayerParams;
use shuffle_vit::shuffle::{
    attended_path, channel_shuffle, inverse_riffle_permutation, riffle_permutation, shuffled_forward_attended_only,
    split_groups,
};
use shuffle_vit::tensor::{grad_check, LAYER_NORM_EPS};
use shuffle_vit::vit::AttentionGeometry;
use shuffle_vit::{ModelConfig, Tape, Tensor, Var};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn shvit(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_shvit"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn macs_json(preset: &str) -> Result<(u64, u64), String> {
    let v: Value = serde_json::from_str(&shvit(&["macs", "--preset", preset, "--json"])?).map_err(|e| e.to_string())?;
    let t = &v["totals"];
    Ok((
        t["total_macs"].as_u64().ok_or("total_macs missing")?,
        t["total_params"].as_u64().ok_or("total_params missing")?,
    ))
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let (macs, params) = macs_json("deit-tiny")?;
    let (s_macs, s_params) = macs_json("deit-tiny-shuffled")?;
    let elapsed = start.elapsed();
    let overhead = s_macs - macs;
    let within = |v: u64, target: f64, tol: f64| (v as f64 - target).abs() <= tol * target;
    check(
        (1_250_000_000..=1_300_000_000).contains(&macs)
            && within(params, 5.7e6, 0.02)
            && within(s_params, 6.1e6, 0.02)
            && within(overhead, 29_694_720.0, 0.01),
        format!(
            "DeiT-Tiny {macs} MACs, {params} params; shuffled {s_params} params, overhead {overhead} MACs ({} ms for two CLI calls)",
            elapsed.as_millis()
        ),
    )
}

/// Term-by-term evaluation: QKV, scores, mixing, output projection, FFN.
fn brute_vanilla(n: u128, c: u128, mu: u128) -> u128 {
    let mut total = 0;
    for _ in 0..3 {
        total += n * c * c;
    }
    total += n * n * c + n * n * c + n * c * c;
    total + n * c * (mu * c) + n * (mu * c) * c
}

/// Half-width attended path plus α1 and α2 on the attended channels,
/// evaluated at twice the value.
fn brute_shuffled_twice(n: u128, c: u128, mu: u128) -> u128 {
    // 2 * (4+2μ)N(C/2)² = (2+μ)NC², 2 * 2N²(C/2) = 2N²C, 2 * 2N(C/2) = 2NC
    (2 + mu) * n * c * c + 2 * n * n * c + 2 * n * c
}

fn criterion_2() -> Outcome {
    let v = macs_vanilla_layer(197, 192, 4);
    let s = macs_shuffled_layer(197, 192, 4);
    let oracle_ok = v == 102_049_152
        && brute_vanilla(197, 192, 4) == v
        && s == Ratio::from_integer(29_275_776)
        && Ratio::from_integer(brute_shuffled_twice(197, 192, 4)) == s * 2;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ratio_ok = true;
    for _ in 0..100 {
        let (n, c) = (rng.gen_range(1..1_000_000u64), rng.gen_range(1..100_000u64));
        ratio_ok &= Ratio::new(downsample_macs(n, c, true), downsample_macs(n, c, false)) == Ratio::new(1, 2);
    }
    check(
        oracle_ok && ratio_ok,
        format!("vanilla {v}, shuffled {s}, grouped/joint downsample ratio exactly 1/2 on 100 draws: {ratio_ok}"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..1_000_000u64);
        let c = rng.gen_range(1..100_000u64);
        let mu = rng.gen_range(1..=16u64);
        if macs_shuffled_layer(n, c, mu) * 2 >= Ratio::from_integer(macs_vanilla_layer(n, c, mu)) {
            failures += 1;
        }
    }
    check(failures == 0, format!("{failures} of 1000 draws (mu in 1..=16) violate the strict bound"))
}

fn random_layer(width: usize, rescale: bool, rng: &mut ChaCha8Rng) -> LayerParams<Tensor> {
    let l = LayerParams::init(width, 2, rescale, rng).map(|t| t.map(|v| v * 20.0));
    let alpha = |rng: &mut ChaCha8Rng| rescale.then(|| Tensor::from_fn(&[width], |_| rng.gen_range(0.5..1.5)));
    LayerParams { alpha1: alpha(rng), alpha2: alpha(rng), ..l }
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut passthrough = 0;
    for _ in 0..200 {
        let c = 2 * rng.gen_range(1..=6);
        let (b, n) = (rng.gen_range(1..=3), rng.gen_range(1..=6));
        let x = Tensor::from_fn(&[b, n, 2 * c], |_| rng.gen_range(-3.0..3.0));
        let layer = random_layer(c, rng.gen_bool(0.5), &mut rng);
        let mut tape = Tape::new();
        let p = layer.record(&mut tape);
        let xv = tape.input(x.clone());
        let g = split_groups(&mut tape, xv, 0).map_err(|e| e.to_string())?;
        let a = attended_path(&mut tape, g.attended, &p, AttentionGeometry::global(1)).map_err(|e| e.to_string())?;
        let pre = tape.concat(&[a, g.idle], 2).map_err(|e| e.to_string())?;
        let exact = x
            .data()
            .chunks(2 * c)
            .zip(tape.value(pre).data().chunks(2 * c))
            .all(|(i, o)| i[c..].iter().zip(&o[c..]).all(|(p, q)| p.to_bits() == q.to_bits()));
        passthrough += usize::from(exact);
    }
    let mut riffle_ok = true;
    for width in (2..=256).step_by(2) {
        let c = width / 2;
        let closed: Vec<usize> = (0..width).map(|j| if j % 2 == 0 { j / 2 } else { c + j / 2 }).collect();
        let mut tape = Tape::new();
        let idx = tape.input(Tensor::from_fn(&[1, width], |i| i as f64));
        let y = channel_shuffle(&mut tape, idx).map_err(|e| e.to_string())?;
        let got: Vec<usize> = tape.value(y).data().iter().map(|&v| v as usize).collect();
        let perm = riffle_permutation(width).map_err(|e| e.to_string())?;
        let inv = inverse_riffle_permutation(width).map_err(|e| e.to_string())?;
        riffle_ok &= got == closed && perm == closed && (0..width).all(|i| perm[inv[i]] == i);
    }
    check(
        passthrough == 200 && riffle_ok,
        format!("{passthrough}/200 bit-exact idle passthroughs; riffle and inverse on widths 2..=256: {riffle_ok}"),
    )
}

fn criterion_5() -> Outcome {
    let mut config = common::tiny_config(true);
    config.image_size = 8;
    let mut shuffled = common::lively_model(config, 5);
    for id in 0..shuffled.params.len() {
        if shuffled.params.name(id).contains("alpha") {
            *shuffled.params.get_mut(id) = Tensor::ones(shuffled.params.get(id).shape());
        }
    }
    let vanilla = common::attended_slice_model(&shuffled);
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let images = common::random_images(1, 8, &mut rng);
        let mut tape = Tape::new();
        let vars = shuffled.params.bind(&mut tape);
        let x = tape.input(images.clone());
        let logits = shuffled_forward_attended_only(&mut tape, &shuffled, &vars, x).map_err(|e| e.to_string())?;
        let reference = vanilla.predict(&images).map_err(|e| e.to_string())?;
        worst = worst.max(tape.value(logits).max_abs_diff(&reference));
    }
    check(worst <= 1e-9, format!("max |logit difference| over 20 inputs = {worst:.3e}"))
}

type OpFn = fn(&mut Tape, &[Var]) -> shuffle_vit::Result<Var>;

fn op_suite() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    vec![
        ("matmul", vec![vec![2, 3, 4], vec![4, 5]], |t, v| t.matmul(v[0], v[1])),
        ("batch_matmul", vec![vec![2, 3, 4], vec![2, 4, 2]], |t, v| t.batch_matmul(v[0], v[1], false)),
        ("batch_matmul_t", vec![vec![2, 3, 4], vec![2, 5, 4]], |t, v| t.batch_matmul(v[0], v[1], true)),
        ("add", vec![vec![3, 4], vec![3, 4]], |t, v| t.add(v[0], v[1])),
        ("mul", vec![vec![3, 4], vec![3, 4]], |t, v| t.mul(v[0], v[1])),
        ("add_broadcast", vec![vec![2, 3, 4], vec![4]], |t, v| t.add_broadcast(v[0], v[1])),
        ("mul_broadcast", vec![vec![2, 3, 4], vec![3, 4]], |t, v| t.mul_broadcast(v[0], v[1])),
        ("scale", vec![vec![3, 4]], |t, v| t.scale(v[0], -0.7)),
        ("softmax", vec![vec![3, 5]], |t, v| t.softmax(v[0])),
        ("layer_norm", vec![vec![3, 6], vec![6], vec![6]], |t, v| t.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS)),
        ("gelu", vec![vec![4, 5]], |t, v| t.gelu(v[0])),
        ("gather", vec![vec![2, 3]], |t, v| t.gather(v[0], Arc::from(vec![5, 0, 0, 3, 2, 1]), vec![3, 2])),
        ("concat", vec![vec![2, 3], vec![2, 2]], |t, v| t.concat(&[v[0], v[1]], 1)),
        ("slice_last", vec![vec![3, 6]], |t, v| t.slice_last(v[0], 2, 3)),
        ("sum", vec![vec![3, 4]], |t, v| t.sum(v[0])),
        ("mean_tokens", vec![vec![2, 3, 4]], |t, v| t.mean_tokens(v[0])),
        ("cross_entropy", vec![vec![3, 5]], |t, v| t.cross_entropy(v[0], &[4, 0, 2], 0.1)),
    ]
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let mut worst_op = (String::new(), 0.0f64);
    for (name, shapes, f) in op_suite() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs: Vec<Tensor> =
                shapes.iter().map(|s| Tensor::from_fn(s, |_| rng.gen_range(-1.5..1.5))).collect();
            let r = grad_check(f, &inputs, 1e-4).map_err(|e| e.to_string())?;
            if !r.passed {
                return Err(format!("{name} seed {seed}: relative error {:.3e}", r.max_rel_error));
            }
            if r.max_rel_error > worst_op.1 {
                worst_op = (name.to_string(), r.max_rel_error);
            }
        }
    }

    let model = common::lively_model(common::tiny_config(true), 6);
    let n = model.params.len();
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut inputs = model.params.tensors().to_vec();
    inputs.push(common::random_images(1, 4, &mut rng));
    let loss = |tape: &mut Tape, v: &[Var]| {
        let logits = model.forward(tape, &v[..n], v[n])?;
        tape.cross_entropy(logits, &[1], 0.1)
    };
    let r = grad_check(loss, &inputs, 1e-4).map_err(|e| e.to_string())?;

    // α gradients and gradient into the idle half of the embedding
    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape);
    let x = tape.input(inputs[n].clone());
    let all: Vec<Var> = vars.iter().copied().chain([x]).collect();
    let l = loss(&mut tape, &all).map_err(|e| e.to_string())?;
    let grads = tape.backward(l).map_err(|e| e.to_string())?;
    let alpha_ok = model
        .params
        .iter()
        .filter(|(name, _)| name.contains("alpha"))
        .all(|(name, _)| grads.param(model.params.id(name).unwrap()).is_some_and(|g| g.data().iter().any(|&v| v != 0.0)));
    let c = model.config.channels;
    let embed_grad = grads.param(model.embed.weight).ok_or("no embedding gradient")?;
    let idle_grad: f64 = embed_grad.data().chunks(2 * c).map(|row| row[c..].iter().map(|v| v.abs()).sum::<f64>()).sum();

    let elapsed = start.elapsed();
    check(
        r.passed && alpha_ok && idle_grad > 0.0 && elapsed < Duration::from_secs(60),
        format!(
            "17 ops x 20 seeds pass (worst {} {:.2e}); shuffled model {} components, max rel {:.2e}; alpha grads non-zero: {alpha_ok}; idle-input grad mass {idle_grad:.3e}; {:.1}s",
            worst_op.0,
            worst_op.1,
            r.checked,
            r.max_rel_error,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let (train_set, eval_set) = synthetic_splits(5000, 1000).map_err(|e| e.to_string())?;
    let mut acc = [Vec::new(), Vec::new()];
    for seed in 0..3 {
        for (i, shuffle) in [false, true].into_iter().enumerate() {
            let tc = TrainConfig { epochs: 6, batch_size: 64, seed, deterministic: true, ..Default::default() };
            let config = ModelConfig::desk(32, 2, 10, shuffle);
            let out = train(&config, &tc, &train_set, None, None).map_err(|e| e.to_string())?;
            acc[i].push(evaluate_model(&out.model, &eval_set).map_err(|e| e.to_string())?);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (v, s) = (mean(&acc[0]), mean(&acc[1]));
    let elapsed = start.elapsed();
    check(
        s >= v && v > 0.6 && s > 0.6 && elapsed < Duration::from_secs(15 * 60),
        format!(
            "vanilla C=32 {:?} mean {v:.4}; shuffled 2C=64 {:?} mean {s:.4}; {:.0}s",
            acc[0],
            acc[1],
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = RunConfig {
        model: ModelConfig::desk(32, 2, 10, false),
        train: TrainConfig { epochs: 4, batch_size: 64, seed: 8, ..Default::default() },
    };
    let config = dir.path().join("ablation.json");
    std::fs::write(&config, serde_json::to_string_pretty(&run).unwrap()).map_err(|e| e.to_string())?;
    let out = dir.path().join("out");
    shvit(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--dataset",
        "synthetic",
        "--train-samples",
        "2000",
        "--eval-samples",
        "500",
        "--ablation",
        "--out",
        out.to_str().unwrap(),
    ])?;
    let rows = read_ablation_csv(&out.join("ablation.csv")).map_err(|e| e.to_string())?;
    let names: Vec<&str> = rows.iter().map(|r| r.variant.as_str()).collect();
    let shape_ok = names == ["baseline", "+shuffle", "+shuffle+rescale"]
        && rows.iter().all(|r| (0.0..=1.0).contains(&r.accuracy));
    check(
        shape_ok && rows[1].macs == rows[2].macs,
        format!(
            "accuracies {} / {} / {} (ordering reported only); MACs {} / {} / {}",
            rows[0].accuracy, rows[1].accuracy, rows[2].accuracy, rows[0].macs, rows[1].macs, rows[2].macs
        ),
    )
}

fn criterion_9() -> Outcome {
    let (train_set, eval_set) = synthetic_splits(256, 128).map_err(|e| e.to_string())?;
    let tc = TrainConfig { epochs: 1, batch_size: 64, seed: 9, ..Default::default() };
    let out = train(&ModelConfig::desk(32, 2, 10, true), &tc, &train_set, None, None).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.shvt");
    out.checkpoint.save(&path).map_err(|e| e.to_string())?;
    let loaded = Checkpoint::load(&path).and_then(|c| c.to_model()).map_err(|e| e.to_string())?;
    let (batch, _) = eval_set.batch(&(0..64).collect::<Vec<_>>());
    let a = out.model.predict(&batch).map_err(|e| e.to_string())?;
    let b = loaded.predict(&batch).map_err(|e| e.to_string())?;
    let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    check(same, format!("{} logits bit-identical after save/load: {same}", a.numel()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("complexity table", criterion_1),
        ("formula oracles", criterion_2),
        ("half-cost property", criterion_3),
        ("idle passthrough and riffle", criterion_4),
        ("reduction to vanilla", criterion_5),
        ("gradient suite", criterion_6),
        ("toy-scale training", criterion_7),
        ("ablation grid", criterion_8),
        ("checkpoint persistence", criterion_9),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let number = i + 1;
        if only.is_some_and(|o| o != number) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {number} ({name}): PASS [{secs:.1}s] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {number} ({name}): FAIL [{secs:.1}s] {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
