//! The channel shuffle module.
//!
//! A shuffled model embeds patches into `2C` channels and splits them into an
//! attended half (channels `[0, C)`) that runs through the transformer layer
//! and an idle half (`[C, 2C)`) that is carried through untouched. At the end
//! of every layer the halves are concatenated and riffled, so output channel
//! `2k` comes from attended channel `k` and `2k + 1` from idle channel `k`;
//! the riffled map is split again for the next layer.
//!
//! The attended path optionally re-scales both residuals with learnable
//! per-channel coefficients:
//!
//! ```text
//! X'  = MHSA(X) + α1 ⊙ X
//! out = FFN(X') + α2 ⊙ X'
//! ```
//!
//! Hierarchical models downsample each group with its own patch merge, which
//! costs `2NC²` per group instead of `8NC²` for one merge over `2C` channels.

use std::sync::Arc;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::{EmbedParams, LayerParams, Merge, MergeParams, Model};
use crate::tensor::{Tape, Tensor, Var};
use crate::vit::{attention_branch, classify, ffn_branch, patch_embed, patch_merge, AttentionGeometry, Pooling};

/// A `2C`-wide token map split into its attended and idle halves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupedFeatureMap {
    pub attended: Var,
    pub idle: Var,
    /// Index of the layer about to consume this map.
    pub layer_index: usize,
}

/// Where intermediate features can be observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Boundary {
    /// Output of the (double) patch embedding.
    Embed,
    /// Output of layer `i` (after the shuffle on shuffled models).
    Layer(usize),
    /// End of stage `s`, before any downsampling.
    Stage(usize),
}

pub type Trace = Vec<(Boundary, Var)>;

fn even_width(width: usize) -> Result<usize> {
    if width == 0 || width % 2 != 0 {
        return Err(Error::contract(format!(
            "channel grouping needs an even, positive width, got {width}"
        )));
    }
    Ok(width / 2)
}

/// Source channel of each output channel for the two-group riffle over
/// `width` channels: `[0, C, 1, C + 1, ..., C - 1, 2C - 1]`.
pub fn riffle_permutation(width: usize) -> Result<Vec<usize>> {
    let half = even_width(width)?;
    Ok((0..width).map(|o| if o % 2 == 0 { o / 2 } else { half + o / 2 }).collect())
}

/// Inverse of [`riffle_permutation`]: the output position of each input channel.
pub fn inverse_riffle_permutation(width: usize) -> Result<Vec<usize>> {
    let half = even_width(width)?;
    Ok((0..width)
        .map(|i| if i < half { 2 * i } else { 2 * (i - half) + 1 })
        .collect())
}

fn channel_index(rows: usize, perm: &[usize]) -> Arc<[usize]> {
    let width = perm.len();
    (0..rows)
        .flat_map(|r| perm.iter().map(move |&c| r * width + c))
        .collect()
}

/// Riffle the last axis of a tensor. A pure permutation of values.
pub fn channel_shuffle_tensor(x: &Tensor) -> Result<Tensor> {
    let perm = riffle_permutation(x.last_dim())?;
    let rows = x.numel() / perm.len();
    let data = channel_index(rows, &perm).iter().map(|&i| x.data()[i]).collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Undo [`channel_shuffle_tensor`].
pub fn channel_unshuffle_tensor(x: &Tensor) -> Result<Tensor> {
    let perm = inverse_riffle_permutation(x.last_dim())?;
    let rows = x.numel() / perm.len();
    let data = channel_index(rows, &perm).iter().map(|&i| x.data()[i]).collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Riffle the channels of a tape value.
pub fn channel_shuffle(tape: &mut Tape, x: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let perm = riffle_permutation(*shape.last().unwrap_or(&0))?;
    let rows = tape.value(x).numel() / perm.len();
    tape.gather(x, channel_index(rows, &perm), shape)
}

/// Attended = channels `[0, C)`, idle = `[C, 2C)`.
pub fn split_groups(tape: &mut Tape, x: Var, layer_index: usize) -> Result<GroupedFeatureMap> {
    let half = even_width(*tape.shape(x).last().unwrap_or(&0))?;
    let attended = tape.slice_last(x, 0, half)?;
    let idle = tape.slice_last(x, half, half)?;
    Ok(GroupedFeatureMap {
        attended,
        idle,
        layer_index,
    })
}

pub fn concat_groups(tape: &mut Tape, g: &GroupedFeatureMap) -> Result<Var> {
    let axis = tape.shape(g.attended).len().saturating_sub(1);
    tape.concat(&[g.attended, g.idle], axis)
}

/// Patch embedding into `2C` channels; class token and positional embedding
/// are `2C` wide as well.
pub fn double_patch_embed(
    tape: &mut Tape,
    images: Var,
    embed: &EmbedParams<Var>,
    config: &ModelConfig,
) -> Result<Var> {
    if !config.shuffle_enabled {
        return Err(Error::contract("double_patch_embed on a vanilla configuration"));
    }
    let width = *tape.shape(embed.weight).last().unwrap_or(&0);
    if width != 2 * config.channels {
        return Err(Error::shape(format!(
            "embedding projects to {width} channels, expected {}",
            2 * config.channels
        )));
    }
    patch_embed(tape, images, embed, config)
}

/// Attended-path transformer layer with optional residual re-scaling. With
/// no coefficients this is exactly the plain pre-LN layer.
pub fn attended_path(
    tape: &mut Tape,
    x: Var,
    p: &LayerParams<Var>,
    geom: AttentionGeometry,
) -> Result<Var> {
    let attn = attention_branch(tape, x, p, geom)?;
    let skip = match p.alpha1 {
        Some(a) => tape.mul_broadcast(x, a)?,
        None => x,
    };
    let mid = tape.add(attn, skip)?;
    let ff = ffn_branch(tape, mid, p)?;
    let skip = match p.alpha2 {
        Some(a) => tape.mul_broadcast(mid, a)?,
        None => mid,
    };
    tape.add(ff, skip)
}

/// One shuffled layer: attended path, idle passthrough, concat, riffle, split.
pub fn shuffled_layer(
    tape: &mut Tape,
    g: &GroupedFeatureMap,
    p: &LayerParams<Var>,
    geom: AttentionGeometry,
) -> Result<GroupedFeatureMap> {
    let (next, _) = shuffled_layer_with_concat(tape, g, p, geom)?;
    Ok(next)
}

/// [`shuffled_layer`] that also returns the riffled `2C` map.
pub fn shuffled_layer_with_concat(
    tape: &mut Tape,
    g: &GroupedFeatureMap,
    p: &LayerParams<Var>,
    geom: AttentionGeometry,
) -> Result<(GroupedFeatureMap, Var)> {
    if tape.shape(g.attended) != tape.shape(g.idle) {
        return Err(Error::shape(format!(
            "attended {:?} and idle {:?} groups differ",
            tape.shape(g.attended),
            tape.shape(g.idle)
        )));
    }
    let attended = attended_path(tape, g.attended, p, geom)?;
    let doubled = concat_groups(
        tape,
        &GroupedFeatureMap {
            attended,
            idle: g.idle,
            layer_index: g.layer_index,
        },
    )?;
    let shuffled = channel_shuffle(tape, doubled)?;
    let next = split_groups(tape, shuffled, g.layer_index + 1)?;
    Ok((next, shuffled))
}

/// Downsample each group separately: `N -> N/4` tokens, `C -> 2C` channels
/// per group. The groups never mix here.
pub fn grouped_patch_merge(
    tape: &mut Tape,
    g: &GroupedFeatureMap,
    attended: &MergeParams<Var>,
    idle: &MergeParams<Var>,
    grid: usize,
) -> Result<GroupedFeatureMap> {
    Ok(GroupedFeatureMap {
        attended: patch_merge(tape, g.attended, attended, grid)?,
        idle: patch_merge(tape, g.idle, idle, grid)?,
        layer_index: g.layer_index,
    })
}

/// End-to-end forward of a shuffled model.
pub fn shuffled_forward(tape: &mut Tape, model: &Model, vars: &[Var], images: Var) -> Result<Var> {
    shuffled_forward_traced(tape, model, vars, images, None)
}

pub fn shuffled_forward_traced(
    tape: &mut Tape,
    model: &Model,
    vars: &[Var],
    images: Var,
    mut trace: Option<&mut Trace>,
) -> Result<Var> {
    if !model.config.shuffle_enabled {
        return Err(Error::contract("shuffled_forward called on a vanilla model"));
    }
    let bind = |id: &usize| vars[*id];
    let embedded = double_patch_embed(tape, images, &model.embed.map(bind), &model.config)?;
    if let Some(t) = trace.as_deref_mut() {
        t.push((Boundary::Embed, embedded));
    }
    let mut g = split_groups(tape, embedded, 0)?;
    for (s, stage) in model.stages.iter().enumerate() {
        let geom = AttentionGeometry::for_stage(&stage.plan);
        for layer in &stage.layers {
            let index = g.layer_index;
            let (next, full) = shuffled_layer_with_concat(tape, &g, &layer.map(bind), geom)?;
            if let Some(t) = trace.as_deref_mut() {
                t.push((Boundary::Layer(index), full));
            }
            g = next;
        }
        if let Some(t) = trace.as_deref_mut() {
            let full = concat_groups(tape, &g)?;
            t.push((Boundary::Stage(s), full));
        }
        if let Some(merge) = &stage.merge {
            let Merge::Grouped { attended, idle } = merge.map(bind) else {
                return Err(Error::contract("shuffled model with a joint merge"));
            };
            g = grouped_patch_merge(tape, &g, &attended, &idle, stage.plan.grid)?;
        }
    }
    let full = concat_groups(tape, &g)?;
    classify(
        tape,
        full,
        &model.head.map(bind),
        Pooling::for_config(&model.config),
    )
}

/// Test hook: run a shuffled model with its idle group removed. Only the
/// attended half of the embedding is kept, no shuffle happens, and the head
/// reads the attended channels through the first `C` rows of its weights.
#[doc(hidden)]
pub fn shuffled_forward_attended_only(
    tape: &mut Tape,
    model: &Model,
    vars: &[Var],
    images: Var,
) -> Result<Var> {
    if !model.config.shuffle_enabled || model.config.is_hierarchical() {
        return Err(Error::contract(
            "attended-only evaluation needs a plain shuffled model",
        ));
    }
    let c = model.config.channels;
    let bind = |id: &usize| vars[*id];
    let embedded = double_patch_embed(tape, images, &model.embed.map(bind), &model.config)?;
    let mut x = tape.slice_last(embedded, 0, c)?;
    for stage in &model.stages {
        let geom = AttentionGeometry::for_stage(&stage.plan);
        for layer in &stage.layers {
            x = attended_path(tape, x, &layer.map(bind), geom)?;
        }
    }
    let mut head = model.head.map(bind);
    head.norm_gain = tape.slice_last(head.norm_gain, 0, c)?;
    head.norm_bias = tape.slice_last(head.norm_bias, 0, c)?;
    let s = model.config.num_classes;
    let rows: Arc<[usize]> = (0..c * s).collect();
    head.weight = tape.gather(head.weight, rows, vec![c, s])?;
    classify(tape, x, &head, Pooling::ClassToken)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn riffle_examples() {
        let one = Tensor::new(vec![1, 2], vec![7.0, 9.0]).unwrap();
        assert_eq!(channel_shuffle_tensor(&one).unwrap(), one);
        let x = Tensor::new(vec![1, 4], vec![10.0, 11.0, 20.0, 21.0]).unwrap();
        assert_eq!(
            channel_shuffle_tensor(&x).unwrap().data(),
            &[10.0, 20.0, 11.0, 21.0]
        );
        assert_eq!(riffle_permutation(6).unwrap(), [0, 3, 1, 4, 2, 5]);
    }

    #[test]
    fn riffle_matches_reshape_transpose_oracle() {
        // view channels as a 2×C matrix, transpose to C×2, flatten
        for half in 1..=9 {
            let x = random(&[3, 2 * half], half as u64);
            let shuffled = channel_shuffle_tensor(&x).unwrap();
            for r in 0..3 {
                let row = &x.data()[r * 2 * half..(r + 1) * 2 * half];
                let grid = Tensor::new(vec![2, half], row.to_vec()).unwrap();
                let t = grid.transpose_last2().unwrap();
                assert_eq!(&shuffled.data()[r * 2 * half..(r + 1) * 2 * half], t.data());
            }
        }
    }

    #[test]
    fn odd_width_is_rejected() {
        assert!(matches!(riffle_permutation(5), Err(Error::Contract(_))));
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(&[2, 3]));
        assert!(matches!(split_groups(&mut tape, x, 0), Err(Error::Contract(_))));
        assert!(matches!(channel_shuffle(&mut tape, x), Err(Error::Contract(_))));
    }

    #[test]
    fn split_then_concat_is_identity() {
        let x = random(&[3, 8], 1);
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let g = split_groups(&mut tape, xv, 0).unwrap();
        for n in 0..3 {
            for c in 0..4 {
                assert_eq!(tape.value(g.attended).at(&[n, c]), x.at(&[n, c]));
                assert_eq!(tape.value(g.idle).at(&[n, c]), x.at(&[n, c + 4]));
            }
        }
        let back = concat_groups(&mut tape, &g).unwrap();
        assert_eq!(tape.value(back), &x);
    }

    fn layer(width: usize, rescale: bool, seed: u64) -> LayerParams<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut l = LayerParams::init(width, 2, rescale, &mut rng).map(|t| t.map(|v| v * 20.0));
        if rescale {
            l.alpha1 = Some(Tensor::from_fn(&[width], |_| rng.gen_range(0.5..1.5)));
            l.alpha2 = Some(Tensor::from_fn(&[width], |_| rng.gen_range(0.5..1.5)));
        }
        l
    }

    #[test]
    fn idle_group_passes_through_unchanged() {
        let lp = layer(4, true, 2);
        let x = random(&[2, 3, 8], 3);
        let mut tape = Tape::new();
        let p = lp.record(&mut tape);
        let xv = tape.input(x.clone());
        let g = split_groups(&mut tape, xv, 0).unwrap();
        let (_, full) = shuffled_layer_with_concat(&mut tape, &g, &p, AttentionGeometry::global(2)).unwrap();
        let pre = channel_unshuffle_tensor(tape.value(full)).unwrap();
        for row in 0..6 {
            assert_eq!(pre.data()[row * 8 + 4..row * 8 + 8], x.data()[row * 8 + 4..row * 8 + 8]);
        }
    }

    #[test]
    fn zero_attended_weights_reduce_layer_to_shuffle() {
        let mut lp = layer(4, true, 4);
        lp.wm = Tensor::zeros(&[4, 4]);
        lp.bm = Tensor::zeros(&[4]);
        lp.wf2 = Tensor::zeros(&[8, 4]);
        lp.bf2 = Tensor::zeros(&[4]);
        lp.alpha1 = Some(Tensor::ones(&[4]));
        lp.alpha2 = Some(Tensor::ones(&[4]));
        let x = random(&[1, 3, 8], 5);
        let mut tape = Tape::new();
        let p = lp.record(&mut tape);
        let xv = tape.input(x.clone());
        let g = split_groups(&mut tape, xv, 0).unwrap();
        let (next, full) = shuffled_layer_with_concat(&mut tape, &g, &p, AttentionGeometry::global(1)).unwrap();
        assert_eq!(tape.value(full), &channel_shuffle_tensor(&x).unwrap());
        assert_eq!(next.layer_index, 1);
    }

    #[test]
    fn unit_coefficients_match_plain_layer_bit_for_bit() {
        let mut lp = layer(4, true, 6);
        lp.alpha1 = Some(Tensor::ones(&[4]));
        lp.alpha2 = Some(Tensor::ones(&[4]));
        let plain = LayerParams {
            alpha1: None,
            alpha2: None,
            ..lp.clone()
        };
        let x = random(&[2, 5, 4], 7);
        let mut tape = Tape::new();
        let xv = tape.input(x);
        let p = lp.record(&mut tape);
        let q = plain.record(&mut tape);
        let geom = AttentionGeometry::global(2);
        let a = attended_path(&mut tape, xv, &p, geom).unwrap();
        let b = crate::vit::vit_layer(&mut tape, xv, &q, geom).unwrap();
        assert_eq!(tape.value(a), tape.value(b));
    }

    #[test]
    fn shuffled_layer_straight_line_reference() {
        // N=2, C=4, H=1; straight-line evaluation with explicit loops
        let lp = layer(4, true, 8);
        let x = random(&[1, 2, 8], 9);
        let mut tape = Tape::new();
        let p = lp.record(&mut tape);
        let xv = tape.input(x.clone());
        let g = split_groups(&mut tape, xv, 0).unwrap();
        let (_, full) = shuffled_layer_with_concat(&mut tape, &g, &p, AttentionGeometry::global(1)).unwrap();

        let (n, c) = (2, 4);
        let ln = |row: &[f64], gain: &Tensor, bias: &Tensor| -> Vec<f64> {
            let m = row.iter().sum::<f64>() / row.len() as f64;
            let v = row.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / row.len() as f64;
            row.iter()
                .enumerate()
                .map(|(i, a)| (a - m) / (v + 1e-6).sqrt() * gain.data()[i] + bias.data()[i])
                .collect()
        };
        let lin = |row: &[f64], w: &Tensor, b: &Tensor| -> Vec<f64> {
            let (k, out) = (w.shape()[0], w.shape()[1]);
            (0..out)
                .map(|j| b.data()[j] + (0..k).map(|i| row[i] * w.at(&[i, j])).sum::<f64>())
                .collect()
        };
        let att: Vec<Vec<f64>> = (0..n).map(|t| x.data()[t * 8..t * 8 + c].to_vec()).collect();
        let idle: Vec<Vec<f64>> = (0..n).map(|t| x.data()[t * 8 + c..t * 8 + 8].to_vec()).collect();
        let h: Vec<_> = att.iter().map(|r| ln(r, &lp.norm1_gain, &lp.norm1_bias)).collect();
        let q: Vec<_> = h.iter().map(|r| lin(r, &lp.wq, &lp.bq)).collect();
        let k: Vec<_> = h.iter().map(|r| lin(r, &lp.wk, &lp.bk)).collect();
        let v: Vec<_> = h.iter().map(|r| lin(r, &lp.wv, &lp.bv)).collect();
        let a1 = lp.alpha1.as_ref().unwrap().data();
        let a2 = lp.alpha2.as_ref().unwrap().data();
        let mut out = vec![vec![0.0; 2 * c]; n];
        for i in 0..n {
            let s: Vec<f64> = (0..n)
                .map(|j| (0..c).map(|d| q[i][d] * k[j][d]).sum::<f64>() / (c as f64).sqrt())
                .collect();
            let mx = s.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = s.iter().map(|z| (z - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            let av: Vec<f64> = (0..c)
                .map(|d| (0..n).map(|j| e[j] / z * v[j][d]).sum())
                .collect();
            let o = lin(&av, &lp.wm, &lp.bm);
            let mid: Vec<f64> = (0..c).map(|d| o[d] + a1[d] * att[i][d]).collect();
            let h2 = ln(&mid, &lp.norm2_gain, &lp.norm2_bias);
            let f1: Vec<f64> = lin(&h2, &lp.wf1, &lp.bf1)
                .into_iter()
                .map(|u| 0.5 * u * (1.0 + libm::erf(u / 2f64.sqrt())))
                .collect();
            let f2 = lin(&f1, &lp.wf2, &lp.bf2);
            for d in 0..c {
                let attended = f2[d] + a2[d] * mid[d];
                out[i][2 * d] = attended;
                out[i][2 * d + 1] = idle[i][d];
            }
        }
        for i in 0..n {
            for ch in 0..2 * c {
                let got = tape.value(full).at(&[0, i, ch]);
                assert!((got - out[i][ch]).abs() < 1e-10, "{i},{ch}: {got} vs {}", out[i][ch]);
            }
        }
    }

    #[test]
    fn shuffled_forward_rejects_vanilla_model() {
        let model = Model::new(ModelConfig::desk(4, 1, 3, false), 0).unwrap();
        let mut tape = Tape::new();
        let vars = model.params.bind(&mut tape);
        let img = tape.input(Tensor::zeros(&[1, 3, 32, 32]));
        assert!(matches!(
            shuffled_forward(&mut tape, &model, &vars, img),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn grouped_merge_keeps_groups_apart() {
        // 4×4 grid, C=2; reduction picks the first two merged channels, so
        // output token (i, j) carries input token (2i, 2j) of its own group
        let mut tape = Tape::new();
        let x = random(&[1, 16, 4], 10);
        let xv = tape.input(x.clone());
        let g = split_groups(&mut tape, xv, 3).unwrap();
        let mut pick = Tensor::zeros(&[8, 4]);
        pick.data_mut()[0] = 1.0; // in 0 -> out 0
        pick.data_mut()[4 + 1] = 1.0; // in 1 -> out 1
        let merge = MergeParams {
            norm_gain: tape.input(Tensor::ones(&[8])),
            norm_bias: tape.input(Tensor::zeros(&[8])),
            reduction: tape.input(pick),
        };
        let out = grouped_patch_merge(&mut tape, &g, &merge, &merge, 4).unwrap();
        assert_eq!(tape.shape(out.attended), &[1, 4, 4]);
        assert_eq!(out.layer_index, 3);
        for (group, offset) in [(out.attended, 0), (out.idle, 2)] {
            for i in 0..2 {
                for j in 0..2 {
                    let src = (2 * i) * 4 + 2 * j;
                    // normalized over the 8 merged channels of this group only
                    let merged: Vec<f64> = [(0, 0), (1, 0), (0, 1), (1, 1)]
                        .iter()
                        .flat_map(|(di, dj)| {
                            let t = (2 * i + di) * 4 + 2 * j + dj;
                            x.data()[t * 4 + offset..t * 4 + offset + 2].to_vec()
                        })
                        .collect();
                    let m = merged.iter().sum::<f64>() / 8.0;
                    let v = merged.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 8.0;
                    let r = 1.0 / (v + 1e-6).sqrt();
                    for ch in 0..2 {
                        let want = (x.data()[src * 4 + offset + ch] - m) * r;
                        let got = tape.value(group).at(&[0, i * 2 + j, ch]);
                        assert!((got - want).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn single_layer_idle_half_skips_attention() {
        // with L=1 the idle half of the embedding reaches the head untouched
        let mut c = ModelConfig::desk(4, 1, 3, true);
        c.image_size = 8;
        let model = Model::new(c, 2).unwrap();
        let img = random(&[1, 3, 8, 8], 11);
        let mut tape = Tape::new();
        let vars = model.params.bind(&mut tape);
        let iv = tape.input(img);
        let mut trace = Trace::new();
        shuffled_forward_traced(&mut tape, &model, &vars, iv, Some(&mut trace)).unwrap();
        let embed = tape.value(trace[0].1).clone();
        let (b, v) = trace[1];
        assert_eq!(b, Boundary::Layer(0));
        let out = channel_unshuffle_tensor(tape.value(v)).unwrap();
        for t in 0..5 {
            assert_eq!(out.data()[t * 8 + 4..t * 8 + 8], embed.data()[t * 8 + 4..t * 8 + 8]);
        }
    }
}
