//! Parameter layout of plain and shuffled transformers, and the builder that
//! instantiates it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, StagePlan};
use crate::error::{Error, Result};
use crate::params::{trunc_normal, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

const INIT_STD: f64 = 0.02;

/// Weights of one transformer layer, generic over the handle type so the
/// same layout serves ids in a store, vars on a tape, or raw tensors in tests.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<H> {
    pub norm1_gain: H,
    pub norm1_bias: H,
    pub wq: H,
    pub bq: H,
    pub wk: H,
    pub bk: H,
    pub wv: H,
    pub bv: H,
    pub wm: H,
    pub bm: H,
    pub norm2_gain: H,
    pub norm2_bias: H,
    pub wf1: H,
    pub bf1: H,
    pub wf2: H,
    pub bf2: H,
    /// Per-channel residual coefficients; present iff re-scaling is enabled.
    pub alpha1: Option<H>,
    pub alpha2: Option<H>,
}

impl<H> LayerParams<H> {
    pub fn map<U>(&self, mut f: impl FnMut(&H) -> U) -> LayerParams<U> {
        LayerParams {
            norm1_gain: f(&self.norm1_gain),
            norm1_bias: f(&self.norm1_bias),
            wq: f(&self.wq),
            bq: f(&self.bq),
            wk: f(&self.wk),
            bk: f(&self.bk),
            wv: f(&self.wv),
            bv: f(&self.bv),
            wm: f(&self.wm),
            bm: f(&self.bm),
            norm2_gain: f(&self.norm2_gain),
            norm2_bias: f(&self.norm2_bias),
            wf1: f(&self.wf1),
            bf1: f(&self.bf1),
            wf2: f(&self.wf2),
            bf2: f(&self.bf2),
            alpha1: self.alpha1.as_ref().map(&mut f),
            alpha2: self.alpha2.as_ref().map(&mut f),
        }
    }
}

impl LayerParams<Tensor> {
    /// Freshly initialized layer of width `width`.
    pub fn init(width: usize, mlp_ratio: usize, rescale: bool, rng: &mut ChaCha8Rng) -> Self {
        let hidden = width * mlp_ratio;
        let mut w = |r, c| trunc_normal(&[r, c], INIT_STD, rng);
        let (wq, wk, wv, wm) = (w(width, width), w(width, width), w(width, width), w(width, width));
        let (wf1, wf2) = (w(width, hidden), w(hidden, width));
        LayerParams {
            norm1_gain: Tensor::ones(&[width]),
            norm1_bias: Tensor::zeros(&[width]),
            wq,
            bq: Tensor::zeros(&[width]),
            wk,
            bk: Tensor::zeros(&[width]),
            wv,
            bv: Tensor::zeros(&[width]),
            wm,
            bm: Tensor::zeros(&[width]),
            norm2_gain: Tensor::ones(&[width]),
            norm2_bias: Tensor::zeros(&[width]),
            wf1,
            bf1: Tensor::zeros(&[hidden]),
            wf2,
            bf2: Tensor::zeros(&[width]),
            alpha1: rescale.then(|| Tensor::ones(&[width])),
            alpha2: rescale.then(|| Tensor::ones(&[width])),
        }
    }

    /// Record every tensor on `tape` as an input leaf.
    pub fn record(&self, tape: &mut Tape) -> LayerParams<Var> {
        self.map(|t| tape.input(t.clone()))
    }

    fn register(self, store: &mut ParamStore, prefix: &str) -> LayerParams<ParamId> {
        let mut add = |name: &str, t: Tensor| store.add(format!("{prefix}.{name}"), t);
        LayerParams {
            norm1_gain: add("norm1.gain", self.norm1_gain),
            norm1_bias: add("norm1.bias", self.norm1_bias),
            wq: add("attn.wq", self.wq),
            bq: add("attn.bq", self.bq),
            wk: add("attn.wk", self.wk),
            bk: add("attn.bk", self.bk),
            wv: add("attn.wv", self.wv),
            bv: add("attn.bv", self.bv),
            wm: add("attn.wm", self.wm),
            bm: add("attn.bm", self.bm),
            norm2_gain: add("norm2.gain", self.norm2_gain),
            norm2_bias: add("norm2.bias", self.norm2_bias),
            wf1: add("ffn.wf1", self.wf1),
            bf1: add("ffn.bf1", self.bf1),
            wf2: add("ffn.wf2", self.wf2),
            bf2: add("ffn.bf2", self.bf2),
            alpha1: self.alpha1.map(|t| add("alpha1", t)),
            alpha2: self.alpha2.map(|t| add("alpha2", t)),
        }
    }
}

/// 2×2 token merge: LayerNorm over `4C` then a bias-free `4C -> 2C` reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeParams<H> {
    pub norm_gain: H,
    pub norm_bias: H,
    pub reduction: H,
}

impl<H> MergeParams<H> {
    pub fn map<U>(&self, mut f: impl FnMut(&H) -> U) -> MergeParams<U> {
        MergeParams {
            norm_gain: f(&self.norm_gain),
            norm_bias: f(&self.norm_bias),
            reduction: f(&self.reduction),
        }
    }
}

impl MergeParams<Tensor> {
    pub fn init(width: usize, rng: &mut ChaCha8Rng) -> Self {
        MergeParams {
            norm_gain: Tensor::ones(&[4 * width]),
            norm_bias: Tensor::zeros(&[4 * width]),
            reduction: trunc_normal(&[4 * width, 2 * width], INIT_STD, rng),
        }
    }

    fn register(self, store: &mut ParamStore, prefix: &str) -> MergeParams<ParamId> {
        MergeParams {
            norm_gain: store.add(format!("{prefix}.norm.gain"), self.norm_gain),
            norm_bias: store.add(format!("{prefix}.norm.bias"), self.norm_bias),
            reduction: store.add(format!("{prefix}.reduction"), self.reduction),
        }
    }
}

/// Downsampling between stages: one merge over the full width, or one per
/// channel group.
#[derive(Debug, Clone, PartialEq)]
pub enum Merge<H> {
    Joint(MergeParams<H>),
    Grouped {
        attended: MergeParams<H>,
        idle: MergeParams<H>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedParams<H> {
    /// `[3 P², width]`, rows ordered (colour plane, patch row, patch column).
    pub weight: H,
    pub bias: H,
    pub cls_token: Option<H>,
    pub pos: H,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<H> {
    pub norm_gain: H,
    pub norm_bias: H,
    pub weight: H,
    pub bias: H,
}

impl<H> EmbedParams<H> {
    pub fn map<U>(&self, mut f: impl FnMut(&H) -> U) -> EmbedParams<U> {
        EmbedParams {
            weight: f(&self.weight),
            bias: f(&self.bias),
            cls_token: self.cls_token.as_ref().map(&mut f),
            pos: f(&self.pos),
        }
    }
}

impl<H> HeadParams<H> {
    pub fn map<U>(&self, mut f: impl FnMut(&H) -> U) -> HeadParams<U> {
        HeadParams {
            norm_gain: f(&self.norm_gain),
            norm_bias: f(&self.norm_bias),
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }
}

impl<H> Merge<H> {
    pub fn map<U>(&self, f: impl FnMut(&H) -> U) -> Merge<U> {
        match self {
            Merge::Joint(m) => Merge::Joint(m.map(f)),
            Merge::Grouped { attended, idle } => {
                let mut f = f;
                Merge::Grouped {
                    attended: attended.map(&mut f),
                    idle: idle.map(&mut f),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub plan: StagePlan,
    pub layers: Vec<LayerParams<ParamId>>,
    /// Downsampling applied after this stage.
    pub merge: Option<Merge<ParamId>>,
}

/// A complete model: configuration, named parameters, and their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub embed: EmbedParams<ParamId>,
    pub stages: Vec<Stage>,
    pub head: HeadParams<ParamId>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let plan = config.stage_plan()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let width = config.embed_width();
        let p = config.patch_size;

        let embed = EmbedParams {
            weight: store.add("embed.weight", trunc_normal(&[3 * p * p, width], INIT_STD, &mut rng)),
            bias: store.add("embed.bias", Tensor::zeros(&[width])),
            cls_token: (!config.is_hierarchical())
                .then(|| store.add("embed.cls_token", trunc_normal(&[width], INIT_STD, &mut rng))),
            pos: store.add(
                "embed.pos",
                trunc_normal(&[config.tokens(), width], INIT_STD, &mut rng),
            ),
        };

        let mut stages = Vec::with_capacity(plan.len());
        let mut layer_index = 0;
        for (s, stage) in plan.iter().enumerate() {
            let mut layers = Vec::with_capacity(stage.layers);
            for _ in 0..stage.layers {
                let lp = LayerParams::init(stage.width, config.mlp_ratio, config.rescale_enabled, &mut rng);
                layers.push(lp.register(&mut store, &format!("layers.{layer_index}")));
                layer_index += 1;
            }
            let merge = (s + 1 < plan.len()).then(|| {
                if config.shuffle_enabled {
                    Merge::Grouped {
                        attended: MergeParams::init(stage.width, &mut rng)
                            .register(&mut store, &format!("merges.{s}.attended")),
                        idle: MergeParams::init(stage.width, &mut rng)
                            .register(&mut store, &format!("merges.{s}.idle")),
                    }
                } else {
                    Merge::Joint(
                        MergeParams::init(stage.width, &mut rng)
                            .register(&mut store, &format!("merges.{s}")),
                    )
                }
            });
            stages.push(Stage {
                plan: *stage,
                layers,
                merge,
            });
        }

        let last = plan.last().expect("at least one stage");
        let head_in = if config.shuffle_enabled { 2 * last.width } else { last.width };
        let head = HeadParams {
            norm_gain: store.add("head.norm.gain", Tensor::ones(&[head_in])),
            norm_bias: store.add("head.norm.bias", Tensor::zeros(&[head_in])),
            weight: store.add(
                "head.weight",
                trunc_normal(&[head_in, config.num_classes], INIT_STD, &mut rng),
            ),
            bias: store.add("head.bias", Tensor::zeros(&[config.num_classes])),
        };

        Ok(Model {
            config,
            params: store,
            embed,
            stages,
            head,
        })
    }

    /// Rebuild a model from a stored configuration and named tensors. Every
    /// parameter of the layout must be present with the right shape.
    pub fn from_named_tensors(
        config: ModelConfig,
        tensors: impl IntoIterator<Item = (String, Tensor)>,
    ) -> Result<Self> {
        let mut model = Model::new(config, 0)?;
        let mut seen = vec![false; model.params.len()];
        for (name, t) in tensors {
            let id = model
                .params
                .id(&name)
                .ok_or_else(|| Error::config(format!("unexpected tensor {name}")))?;
            model.params.set(&name, t)?;
            seen[id] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::config(format!(
                "missing tensor {}",
                model.params.name(missing)
            )));
        }
        Ok(model)
    }

    pub fn num_params(&self) -> u64 {
        self.params.num_scalars()
    }

    pub fn layer_count(&self) -> usize {
        self.stages.iter().map(|s| s.layers.len()).sum()
    }

    /// Logits for a batch of `[B, 3, H, W]` images, routed by configuration.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], images: Var) -> Result<Var> {
        if self.config.shuffle_enabled {
            crate::shuffle::shuffled_forward(tape, self, vars, images)
        } else {
            crate::vit::vit_forward(tape, self, vars, images)
        }
    }

    /// Inference convenience: logits `[B, S]` for `images`.
    pub fn predict(&self, images: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let x = tape.input(images.clone());
        let logits = self.forward(&mut tape, &vars, x)?;
        Ok(tape.value(logits).clone())
    }
}
