//! Plain vision transformer: patch embedding, pre-LN multi-head
//! self-attention and feed-forward blocks, and the classifier head.
//!
//! Activations are `[B, N, C]` tensors on a [`Tape`]; every function here is
//! differentiable end to end.

use std::sync::Arc;

use crate::config::{ModelConfig, StagePlan};
use crate::error::{Error, Result};
use crate::model::{EmbedParams, HeadParams, LayerParams, Merge, MergeParams, Model};
use crate::shuffle::{Boundary, Trace};
use crate::tensor::{Tape, Var, LAYER_NORM_EPS};

/// How a layer's attention is laid out over the token grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionGeometry {
    pub heads: usize,
    /// `(grid side, window side)` for non-overlapping window attention.
    pub window: Option<(usize, usize)>,
}

impl AttentionGeometry {
    pub fn global(heads: usize) -> Self {
        AttentionGeometry { heads, window: None }
    }

    pub fn for_stage(plan: &StagePlan) -> Self {
        AttentionGeometry {
            heads: plan.heads,
            window: plan.window.map(|w| (plan.grid, w)),
        }
    }
}

/// Readout of the final feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    ClassToken,
    Mean,
}

impl Pooling {
    pub fn for_config(config: &ModelConfig) -> Self {
        if config.is_hierarchical() {
            Pooling::Mean
        } else {
            Pooling::ClassToken
        }
    }
}

fn dims3(tape: &Tape, x: Var, what: &str) -> Result<(usize, usize, usize)> {
    match *tape.shape(x) {
        [b, n, c] => Ok((b, n, c)),
        ref s => Err(Error::shape(format!("{what} expects [B, N, C], got {s:?}"))),
    }
}

/// Linearly project non-overlapping `P×P` patches of `[B, 3, H, W]` images,
/// prepend the class token (when the layout has one) and add positional
/// embeddings. The output width is whatever the embedding weight projects to.
pub fn patch_embed(
    tape: &mut Tape,
    images: Var,
    embed: &EmbedParams<Var>,
    config: &ModelConfig,
) -> Result<Var> {
    let (batch, side) = match *tape.shape(images) {
        [b, 3, h, w] if h == w => (b, h),
        ref s => {
            return Err(Error::config(format!(
                "expected [B, 3, S, S] images, got {s:?}"
            )))
        }
    };
    let p = config.patch_size;
    if side != config.image_size || p == 0 || side % p != 0 {
        return Err(Error::config(format!(
            "{side}px images do not fit image_size {} with patch size {p}",
            config.image_size
        )));
    }
    let grid = side / p;
    let patch_len = 3 * p * p;
    let mut index = Vec::with_capacity(batch * grid * grid * patch_len);
    for b in 0..batch {
        for py in 0..grid {
            for px in 0..grid {
                for c in 0..3 {
                    for i in 0..p {
                        let row = ((b * 3 + c) * side + py * p + i) * side + px * p;
                        index.extend(row..row + p);
                    }
                }
            }
        }
    }
    let patches = tape.gather(images, index.into(), vec![batch, grid * grid, patch_len])?;
    let projected = tape.matmul(patches, embed.weight)?;
    let mut tokens = tape.add_broadcast(projected, embed.bias)?;
    let width = *tape.shape(embed.weight).last().unwrap();
    if let Some(cls) = embed.cls_token {
        let index: Arc<[usize]> = (0..batch).flat_map(|_| 0..width).collect();
        let cls = tape.gather(cls, index, vec![batch, 1, width])?;
        tokens = tape.concat(&[cls, tokens], 1)?;
    }
    tape.add_broadcast(tokens, embed.pos)
}

/// Rearrange `[B, g*g, C]` into `[B * (g/w)^2, w*w, C]` windows.
fn window_index(batch: usize, grid: usize, window: usize, width: usize) -> Vec<usize> {
    let per = grid / window;
    let mut index = Vec::with_capacity(batch * grid * grid * width);
    for b in 0..batch {
        for wy in 0..per {
            for wx in 0..per {
                for iy in 0..window {
                    for ix in 0..window {
                        let token = (wy * window + iy) * grid + wx * window + ix;
                        let start = (b * grid * grid + token) * width;
                        index.extend(start..start + width);
                    }
                }
            }
        }
    }
    index
}

fn invert(index: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; index.len()];
    for (dst, &src) in index.iter().enumerate() {
        inv[src] = dst;
    }
    inv
}

/// `[B', M, C] -> [B' * H, M, C / H]`.
fn head_split_index(batch: usize, tokens: usize, heads: usize, width: usize) -> Vec<usize> {
    let dk = width / heads;
    let mut index = Vec::with_capacity(batch * tokens * width);
    for b in 0..batch {
        for h in 0..heads {
            for t in 0..tokens {
                let start = (b * tokens + t) * width + h * dk;
                index.extend(start..start + dk);
            }
        }
    }
    index
}

/// Attention core on pre-normalized input: returns `(A V W_m + b_m, A)`.
fn attend(
    tape: &mut Tape,
    normed: Var,
    p: &LayerParams<Var>,
    geom: AttentionGeometry,
) -> Result<(Var, Var)> {
    let (batch, tokens, width) = dims3(tape, normed, "attention")?;
    let heads = geom.heads;
    if heads == 0 || width % heads != 0 {
        return Err(Error::shape(format!("{width} channels over {heads} heads")));
    }
    let (h, window_inverse) = match geom.window {
        Some((grid, w)) => {
            if grid * grid != tokens || grid % w != 0 {
                return Err(Error::shape(format!(
                    "window {w} over {tokens} tokens on a {grid}-grid"
                )));
            }
            let index = window_index(batch, grid, w, width);
            let inverse = invert(&index);
            let windows = batch * (grid / w) * (grid / w);
            let h = tape.gather(normed, index.into(), vec![windows, w * w, width])?;
            (h, Some(inverse))
        }
        None => (normed, None),
    };
    let (wb, m, _) = dims3(tape, h, "attention")?;
    let dk = width / heads;

    let project = |tape: &mut Tape, w: Var, b: Var| -> Result<Var> {
        let y = tape.matmul(h, w)?;
        tape.add_broadcast(y, b)
    };
    let q = project(tape, p.wq, p.bq)?;
    let k = project(tape, p.wk, p.bk)?;
    let v = project(tape, p.wv, p.bv)?;

    let split: Arc<[usize]> = head_split_index(wb, m, heads, width).into();
    let merge: Arc<[usize]> = invert(&split).into();
    let per_head = vec![wb * heads, m, dk];
    let q = tape.gather(q, split.clone(), per_head.clone())?;
    let k = tape.gather(k, split.clone(), per_head.clone())?;
    let v = tape.gather(v, split, per_head)?;

    let scores = tape.batch_matmul(q, k, true)?;
    let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt())?;
    let attn = tape.softmax(scores)?;
    let out = tape.batch_matmul(attn, v, false)?;
    let out = tape.gather(out, merge, vec![wb, m, width])?;
    let out = tape.matmul(out, p.wm)?;
    let mut out = tape.add_broadcast(out, p.bm)?;
    if let Some(inverse) = window_inverse {
        out = tape.gather(out, inverse.into(), vec![batch, tokens, width])?;
    }
    Ok((out, attn))
}

/// `MHSA(x)` without the residual: pre-LN, per-head scaled dot-product
/// attention with `d_k = C / H`, heads concatenated and projected by `W_m`.
pub fn attention_branch(
    tape: &mut Tape,
    x: Var,
    p: &LayerParams<Var>,
    geom: AttentionGeometry,
) -> Result<Var> {
    let normed = tape.layer_norm(x, p.norm1_gain, p.norm1_bias, LAYER_NORM_EPS)?;
    attend(tape, normed, p, geom).map(|(out, _)| out)
}

/// Attention maps `[B * windows * H, M, M]` of a layer, for inspection.
pub fn attention_map(
    tape: &mut Tape,
    x: Var,
    p: &LayerParams<Var>,
    geom: AttentionGeometry,
) -> Result<Var> {
    let normed = tape.layer_norm(x, p.norm1_gain, p.norm1_bias, LAYER_NORM_EPS)?;
    attend(tape, normed, p, geom).map(|(_, a)| a)
}

/// `X' = MHSA(X) + X`.
pub fn mhsa(tape: &mut Tape, x: Var, p: &LayerParams<Var>, geom: AttentionGeometry) -> Result<Var> {
    let branch = attention_branch(tape, x, p, geom)?;
    tape.add(branch, x)
}

/// `FFN(x)` without the residual: pre-LN, `C -> μC`, GELU, `μC -> C`.
pub fn ffn_branch(tape: &mut Tape, x: Var, p: &LayerParams<Var>) -> Result<Var> {
    let h = tape.layer_norm(x, p.norm2_gain, p.norm2_bias, LAYER_NORM_EPS)?;
    let h = tape.matmul(h, p.wf1)?;
    let h = tape.add_broadcast(h, p.bf1)?;
    let h = tape.gelu(h)?;
    let h = tape.matmul(h, p.wf2)?;
    tape.add_broadcast(h, p.bf2)
}

pub fn ffn(tape: &mut Tape, x: Var, p: &LayerParams<Var>) -> Result<Var> {
    let branch = ffn_branch(tape, x, p)?;
    tape.add(branch, x)
}

pub fn vit_layer(
    tape: &mut Tape,
    x: Var,
    p: &LayerParams<Var>,
    geom: AttentionGeometry,
) -> Result<Var> {
    let x = mhsa(tape, x, p, geom)?;
    ffn(tape, x, p)
}

/// Final LayerNorm on the pooled representation, then a linear map to
/// class logits `[B, S]`.
pub fn classify(tape: &mut Tape, x: Var, head: &HeadParams<Var>, pooling: Pooling) -> Result<Var> {
    let (batch, tokens, width) = dims3(tape, x, "classify")?;
    let pooled = match pooling {
        Pooling::ClassToken => {
            let index: Arc<[usize]> = (0..batch)
                .flat_map(|b| b * tokens * width..b * tokens * width + width)
                .collect();
            tape.gather(x, index, vec![batch, width])?
        }
        Pooling::Mean => tape.mean_tokens(x)?,
    };
    let normed = tape.layer_norm(pooled, head.norm_gain, head.norm_bias, LAYER_NORM_EPS)?;
    let logits = tape.matmul(normed, head.weight)?;
    tape.add_broadcast(logits, head.bias)
}

/// Gather `[B, g*g, C]` into `[B, (g/2)^2, 4C]`, concatenating each 2×2
/// neighbourhood in the order (0,0), (1,0), (0,1), (1,1) as (row, column).
pub fn merge_tokens(tape: &mut Tape, x: Var, grid: usize) -> Result<Var> {
    let (batch, tokens, width) = dims3(tape, x, "merge_tokens")?;
    if grid * grid != tokens || grid % 2 != 0 {
        return Err(Error::config(format!(
            "cannot 2x2-merge {tokens} tokens on a {grid}-grid"
        )));
    }
    let half = grid / 2;
    let mut index = Vec::with_capacity(batch * tokens * width);
    for b in 0..batch {
        for i in 0..half {
            for j in 0..half {
                for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let token = (2 * i + di) * grid + 2 * j + dj;
                    let start = (b * tokens + token) * width;
                    index.extend(start..start + width);
                }
            }
        }
    }
    tape.gather(x, index.into(), vec![batch, half * half, 4 * width])
}

/// Patch merging: 2×2 token concat, LayerNorm, bias-free `4C -> 2C`.
pub fn patch_merge(tape: &mut Tape, x: Var, merge: &MergeParams<Var>, grid: usize) -> Result<Var> {
    let merged = merge_tokens(tape, x, grid)?;
    let normed = tape.layer_norm(merged, merge.norm_gain, merge.norm_bias, LAYER_NORM_EPS)?;
    tape.matmul(normed, merge.reduction)
}

/// Vanilla end-to-end forward: embed, `L` layers (with patch merging between
/// hierarchical stages), classify.
pub fn vit_forward(tape: &mut Tape, model: &Model, vars: &[Var], images: Var) -> Result<Var> {
    vit_forward_traced(tape, model, vars, images, None)
}

pub fn vit_forward_traced(
    tape: &mut Tape,
    model: &Model,
    vars: &[Var],
    images: Var,
    mut trace: Option<&mut Trace>,
) -> Result<Var> {
    if model.config.shuffle_enabled {
        return Err(Error::contract(
            "vit_forward called on a shuffle-enabled model",
        ));
    }
    let bind = |id: &usize| vars[*id];
    let mut x = patch_embed(tape, images, &model.embed.map(bind), &model.config)?;
    if let Some(t) = trace.as_deref_mut() {
        t.push((Boundary::Embed, x));
    }
    let mut index = 0;
    for (s, stage) in model.stages.iter().enumerate() {
        let geom = AttentionGeometry::for_stage(&stage.plan);
        for layer in &stage.layers {
            x = vit_layer(tape, x, &layer.map(bind), geom)?;
            if let Some(t) = trace.as_deref_mut() {
                t.push((Boundary::Layer(index), x));
            }
            index += 1;
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push((Boundary::Stage(s), x));
        }
        if let Some(merge) = &stage.merge {
            let Merge::Joint(m) = merge.map(bind) else {
                return Err(Error::contract("vanilla model with a grouped merge"));
            };
            x = patch_merge(tape, x, &m, stage.plan.grid)?;
        }
    }
    classify(
        tape,
        x,
        &model.head.map(bind),
        Pooling::for_config(&model.config),
    )
}
