#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shuffle_vit::{Model, ModelConfig, Tensor};

/// Two-layer model on 4×4 images with 2 px patches, so N = 5 with the
/// class token, at width 8 with two heads and μ = 2.
pub fn tiny_config(shuffle: bool) -> ModelConfig {
    let mut c = ModelConfig::desk(8, 2, 3, shuffle);
    c.image_size = 4;
    c.patch_size = 2;
    c
}

/// Model with weights scaled up from the 0.02 init and non-trivial norms,
/// biases and α, so every path carries signal.
pub fn lively_model(config: ModelConfig, seed: u64) -> Model {
    let mut model = Model::new(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    for id in 0..model.params.len() {
        let name = model.params.name(id).to_string();
        let t = model.params.get_mut(id);
        *t = if name.ends_with("gain") || name.contains("alpha") {
            Tensor::from_fn(t.shape(), |_| rng.gen_range(0.6..1.4))
        } else if t.rank() == 1 {
            Tensor::from_fn(t.shape(), |_| rng.gen_range(-0.3..0.3))
        } else {
            t.map(|v| v * 25.0)
        };
    }
    model
}

pub fn random_images(batch: usize, size: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(&[batch, 3, size, size], |_| rng.gen_range(-1.0..1.0))
}

/// Vanilla model holding the attended slice of every shuffled weight.
pub fn attended_slice_model(shuffled: &Model) -> Model {
    let c = shuffled.config.channels;
    let mut config = shuffled.config.clone();
    config.shuffle_enabled = false;
    config.rescale_enabled = false;
    let first_cols = |t: &Tensor, keep: usize| -> Tensor {
        let w = t.last_dim();
        let rows = t.numel() / w;
        let data = t.data().chunks(w).flat_map(|r| r[..keep].to_vec()).collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = keep;
        let t = Tensor::new(shape, data).unwrap();
        assert_eq!(t.numel(), rows * keep);
        t
    };
    let named = shuffled.params.iter().filter(|(n, _)| !n.contains("alpha")).map(|(name, t)| {
        let t = match name {
            "embed.weight" | "embed.bias" | "embed.cls_token" | "embed.pos" | "head.norm.gain" | "head.norm.bias" => {
                first_cols(t, c)
            }
            "head.weight" => {
                let s = t.last_dim();
                Tensor::new(vec![c, s], t.data()[..c * s].to_vec()).unwrap()
            }
            _ => t.clone(),
        };
        (name.to_string(), t)
    });
    Model::from_named_tensors(config, named.collect::<Vec<_>>()).unwrap()
}
