//! Closed-form multiply-accumulate (MAC) and parameter accounting.
//!
//! Only matrix products are counted in the headline figures; biases,
//! normalization, softmax and activations cost zero MACs there and are
//! tallied separately by [`extended_counts`]. `N` always includes the class
//! token on plain models. All arithmetic is exact integer arithmetic.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::Result;

/// One layer of a plain transformer at width `c` with `n` tokens each
/// attending to `span` tokens: `(4 + 2μ)NC² + 2N·span·C`.
pub fn layer_macs(n: u64, c: u64, mu: u64, span: u64) -> u128 {
    let (n, c, mu, span) = (n as u128, c as u128, mu as u128, span as u128);
    (4 + 2 * mu) * n * c * c + 2 * n * span * c
}

/// `Ω(vanilla) = (4 + 2μ)NC² + 2N²C`.
pub fn macs_vanilla_layer(n: u64, c: u64, mu: u64) -> u128 {
    layer_macs(n, c, mu, n)
}

/// `Ω(shuffle) = (1 + μ/2)NC² + N²C + NC` for `C` total channels, half of
/// them attended. Exact; the value is a half-integer when `μNC²` is odd.
pub fn macs_shuffled_layer(n: u64, c: u64, mu: u64) -> Ratio<u128> {
    let (n, c, mu) = (n as u128, c as u128, mu as u128);
    let twice = (2 + mu) * n * c * c + 2 * n * n * c + 2 * n * c;
    Ratio::new(twice, 2)
}

/// Extra MACs of a shuffled plain model over its vanilla counterpart of
/// width `C`: `LNC + 3P²NC + SC`.
pub fn shuffle_overhead(layers: u64, n: u64, c: u64, patch: u64, classes: u64) -> u128 {
    let (l, n, c, p, s) = (layers as u128, n as u128, c as u128, patch as u128, classes as u128);
    l * n * c + 3 * p * p * n * c + s * c
}

/// Fully connected 2×2 patch merge over width `c` with `n` input tokens:
/// `(N/4)·4C·2C = 2NC²`.
pub fn merge_macs(n: u64, c: u64) -> u128 {
    let (n, c) = (n as u128, c as u128);
    2 * n * c * c
}

/// Downsampling cost of a shuffled hierarchical model whose groups are `c`
/// wide: two independent merges (`4NC²`) when grouped, one merge over `2C`
/// channels (`8NC²`) otherwise.
pub fn downsample_macs(n: u64, c: u64, grouped: bool) -> u128 {
    if grouped {
        2 * merge_macs(n, c)
    } else {
        merge_macs(n, 2 * c)
    }
}

/// Parameters of one layer of width `c`.
pub fn layer_params(c: u64, mu: u64, rescale: bool) -> u128 {
    let (c, h) = (c as u128, (c * mu) as u128);
    let attention = 4 * (c * c + c);
    let ffn = c * h + h + h * c + c;
    let norms = 4 * c;
    attention + ffn + norms + if rescale { 2 * c } else { 0 }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer: usize,
    pub stage: usize,
    pub tokens: u64,
    pub width: u64,
    pub macs: u128,
    pub params: u128,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityTotals {
    pub embedding_macs: u128,
    pub embedding_params: u128,
    pub layer_macs: u128,
    pub layer_params: u128,
    pub downsample_macs: u128,
    pub downsample_params: u128,
    pub head_macs: u128,
    pub head_params: u128,
    pub total_macs: u128,
    pub total_params: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub config: ModelConfig,
    pub per_layer: Vec<LayerCost>,
    pub totals: ComplexityTotals,
}

/// Non-matmul work, counted per forward pass of one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtendedCounts {
    pub bias_adds: u128,
    pub norm_elements: u128,
    pub softmax_elements: u128,
    pub activation_elements: u128,
    pub rescale_multiplies: u128,
}

pub fn model_report(config: &ModelConfig) -> Result<ComplexityReport> {
    let plan = config.stage_plan()?;
    let mu = config.mlp_ratio as u64;
    let shuffled = config.shuffle_enabled;
    let groups: u128 = if shuffled { 2 } else { 1 };
    let embed_width = config.embed_width() as u128;
    let p2 = (config.patch_size * config.patch_size) as u128;
    let tokens = config.tokens() as u128;

    let embedding_macs = 3 * p2 * tokens * embed_width;
    let embedding_params = 3 * p2 * embed_width
        + embed_width
        + if config.is_hierarchical() { 0 } else { embed_width }
        + tokens * embed_width;

    let mut per_layer = Vec::with_capacity(config.layers);
    let (mut downsample, mut downsample_params) = (0u128, 0u128);
    for (s, stage) in plan.iter().enumerate() {
        let (n, c) = (stage.tokens as u64, stage.width as u64);
        let span = stage.window.map_or(n, |w| (w * w) as u64);
        for _ in 0..stage.layers {
            let mut macs = layer_macs(n, c, mu, span);
            if shuffled {
                // per-channel residual scaling of the attended group
                macs += n as u128 * c as u128;
            }
            per_layer.push(LayerCost {
                layer: per_layer.len(),
                stage: s,
                tokens: n,
                width: c,
                macs,
                params: layer_params(c, mu, config.rescale_enabled),
            });
        }
        if s + 1 < plan.len() {
            downsample += if shuffled {
                downsample_macs(n, c, true)
            } else {
                merge_macs(n, c)
            };
            let c = c as u128;
            downsample_params += groups * (8 * c + 8 * c * c);
        }
    }

    let last = plan.last().expect("validated config has a stage");
    let head_in = groups * last.width as u128;
    let classes = config.num_classes as u128;
    let head_macs = classes * head_in;
    let head_params = 2 * head_in + head_in * classes + classes;

    let layer_macs_total: u128 = per_layer.iter().map(|l| l.macs).sum();
    let layer_params_total: u128 = per_layer.iter().map(|l| l.params).sum();
    let totals = ComplexityTotals {
        embedding_macs,
        embedding_params,
        layer_macs: layer_macs_total,
        layer_params: layer_params_total,
        downsample_macs: downsample,
        downsample_params,
        head_macs,
        head_params,
        total_macs: embedding_macs + layer_macs_total + downsample + head_macs,
        total_params: embedding_params + layer_params_total + downsample_params + head_params,
    };
    Ok(ComplexityReport {
        config: config.clone(),
        per_layer,
        totals,
    })
}

pub fn extended_counts(config: &ModelConfig) -> Result<ExtendedCounts> {
    let plan = config.stage_plan()?;
    let mu = config.mlp_ratio as u128;
    let groups: u128 = if config.shuffle_enabled { 2 } else { 1 };
    let tokens = config.tokens() as u128;
    let embed_width = config.embed_width() as u128;
    let mut counts = ExtendedCounts {
        // embedding bias + positional embedding
        bias_adds: 2 * tokens * embed_width,
        norm_elements: 0,
        softmax_elements: 0,
        activation_elements: 0,
        rescale_multiplies: 0,
    };
    for (s, stage) in plan.iter().enumerate() {
        let (n, c) = (stage.tokens as u128, stage.width as u128);
        let span = stage.window.map_or(n, |w| (w * w) as u128);
        let layers = stage.layers as u128;
        counts.bias_adds += layers * (4 * n * c + mu * n * c + n * c);
        counts.norm_elements += layers * 2 * n * c;
        counts.softmax_elements += layers * stage.heads as u128 * n * span;
        counts.activation_elements += layers * mu * n * c;
        if config.rescale_enabled {
            counts.rescale_multiplies += layers * 2 * n * c;
        }
        if s + 1 < plan.len() {
            counts.norm_elements += groups * n * c;
        }
    }
    let last = plan.last().expect("validated config has a stage");
    let head_in = groups * last.width as u128;
    counts.norm_elements += head_in;
    counts.bias_adds += config.num_classes as u128;
    Ok(counts)
}

/// MACs in GMACs rounded half-up to two decimals, e.g. `1253830656 -> "1.25"`.
pub fn gmacs_string(macs: u128) -> String {
    let hundredths = (macs + 5_000_000) / 10_000_000;
    format!("{}.{:02}", hundredths / 100, hundredths % 100)
}

/// Parameter count in millions rounded to one decimal, e.g. `"5.7M"`.
pub fn mparams_string(params: u128) -> String {
    let tenths = (params + 50_000) / 100_000;
    format!("{}.{}M", tenths / 10, tenths % 10)
}

impl ComplexityReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Human-readable breakdown.
    pub fn to_table(&self) -> String {
        use std::fmt::Write;
        let t = &self.totals;
        let mut out = String::new();
        let _ = writeln!(out, "{:<14} {:>16} {:>12}", "part", "MACs", "params");
        let _ = writeln!(out, "{:<14} {:>16} {:>12}", "embedding", t.embedding_macs, t.embedding_params);
        for l in &self.per_layer {
            let _ = writeln!(
                out,
                "{:<14} {:>16} {:>12}",
                format!("layer {} (s{})", l.layer, l.stage),
                l.macs,
                l.params
            );
        }
        if t.downsample_macs > 0 {
            let _ = writeln!(out, "{:<14} {:>16} {:>12}", "downsample", t.downsample_macs, t.downsample_params);
        }
        let _ = writeln!(out, "{:<14} {:>16} {:>12}", "head", t.head_macs, t.head_params);
        let _ = writeln!(
            out,
            "{:<14} {:>16} {:>12}   ({} GMACs, {})",
            "total",
            t.total_macs,
            t.total_params,
            gmacs_string(t.total_macs),
            mparams_string(t.total_params)
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::StageConfig;
    use crate::model::Model;

    #[test]
    fn unit_cases() {
        assert_eq!(macs_vanilla_layer(1, 1, 1), 8);
        assert_eq!(macs_shuffled_layer(1, 1, 2), Ratio::from_integer(4));
        assert_eq!(macs_shuffled_layer(1, 1, 1), Ratio::new(7, 2));
        assert_eq!(downsample_macs(1, 1, true), 4);
        assert_eq!(downsample_macs(1, 1, false), 8);
    }

    #[test]
    fn overhead_term_isolation() {
        let full = shuffle_overhead(12, 197, 192, 16, 1000);
        assert_eq!(full - shuffle_overhead(12, 197, 192, 16, 0), 192_000);
        assert_eq!(shuffle_overhead(0, 197, 192, 16, 1000), 3 * 256 * 197 * 192 + 192_000);
    }

    #[test]
    fn downsample_example() {
        assert_eq!(downsample_macs(3136, 48, false), 57_802_752);
        assert_eq!(downsample_macs(3136, 48, true), 28_901_376);
    }

    #[test]
    fn report_is_sum_of_parts() {
        for config in [
            ModelConfig::deit_tiny(),
            ModelConfig::deit_tiny_shuffled(),
            ModelConfig::swin_extratiny(),
            ModelConfig::swin_extratiny_shuffled(),
        ] {
            let r = model_report(&config).unwrap();
            let t = &r.totals;
            let layers: u128 = r.per_layer.iter().map(|l| l.macs).sum();
            assert_eq!(t.total_macs, t.embedding_macs + layers + t.downsample_macs + t.head_macs);
            assert_eq!(r.per_layer.len(), config.layers);
        }
    }

    #[test]
    fn shuffled_minus_vanilla_is_overhead() {
        let v = model_report(&ModelConfig::deit_tiny()).unwrap().totals.total_macs;
        let s = model_report(&ModelConfig::deit_tiny_shuffled()).unwrap().totals.total_macs;
        assert_eq!(s - v, shuffle_overhead(12, 197, 192, 16, 1000));
    }

    #[test]
    fn rescale_flag_does_not_change_macs() {
        let on = ModelConfig::deit_tiny_shuffled();
        let off = ModelConfig { rescale_enabled: false, ..on.clone() };
        let (a, b) = (model_report(&on).unwrap(), model_report(&off).unwrap());
        assert_eq!(a.totals.total_macs, b.totals.total_macs);
        assert_eq!(a.totals.total_params - b.totals.total_params, 2 * 192 * 12);
    }

    #[test]
    fn parameter_counts_match_builder() {
        let mut hier = ModelConfig::desk(8, 4, 5, false);
        hier.hierarchical_stages = Some(vec![
            StageConfig { layers: 1, window: 2 },
            StageConfig { layers: 2, window: 2 },
            StageConfig { layers: 1, window: 0 },
        ]);
        hier.layers = 4;
        let hier_shuffled = ModelConfig {
            shuffle_enabled: true,
            rescale_enabled: true,
            ..hier.clone()
        };
        for config in [
            ModelConfig::deit_tiny(),
            ModelConfig::deit_tiny_shuffled(),
            ModelConfig::desk(32, 2, 10, false),
            ModelConfig { rescale_enabled: false, ..ModelConfig::desk(32, 3, 10, true) },
            hier,
            hier_shuffled,
        ] {
            let built = Model::new(config.clone(), 0).unwrap().num_params() as u128;
            assert_eq!(model_report(&config).unwrap().totals.total_params, built, "{config:?}");
        }
    }

    #[test]
    fn formatting() {
        assert_eq!(gmacs_string(1_253_830_656), "1.25");
        assert_eq!(gmacs_string(1_283_525_376), "1.28");
        assert_eq!(gmacs_string(29_694_720), "0.03");
        assert_eq!(mparams_string(5_717_416), "5.7M");
        assert_eq!(mparams_string(6_100_072), "6.1M");
    }

    #[test]
    fn json_roundtrip() {
        let r = model_report(&ModelConfig::swin_extratiny_shuffled()).unwrap();
        assert_eq!(ComplexityReport::from_json(&r.to_json().unwrap()).unwrap(), r);
    }

    #[test]
    fn extended_counts_scale_with_rescale() {
        let on = extended_counts(&ModelConfig::deit_tiny_shuffled()).unwrap();
        let off = extended_counts(&ModelConfig {
            rescale_enabled: false,
            ..ModelConfig::deit_tiny_shuffled()
        })
        .unwrap();
        assert_eq!(on.rescale_multiplies, 12 * 2 * 197 * 192);
        assert_eq!(off.rescale_multiplies, 0);
        assert_eq!(on.softmax_elements, 12 * 3 * 197 * 197);
    }
}
