//! Architecture description shared by the model builder and the MACs engine.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One hierarchical stage: `layers` transformer layers at a fixed token grid,
/// attending inside non-overlapping `window`×`window` windows (0 = global).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub layers: usize,
    #[serde(default)]
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    /// Embedded width of a vanilla model, or the attended width when
    /// `shuffle_enabled` (the embedding is then `2 * channels` wide).
    pub channels: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub shuffle_enabled: bool,
    #[serde(default)]
    pub rescale_enabled: bool,
    /// Swin-style stages. Channels double and the token grid halves per side
    /// between consecutive stages; heads double alongside the width.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hierarchical_stages: Option<Vec<StageConfig>>,
}

/// Geometry of one stage after validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StagePlan {
    pub layers: usize,
    /// Tokens seen by the layers, including the class token on plain models.
    pub tokens: usize,
    /// Side of the square patch-token grid.
    pub grid: usize,
    /// Width of the computed path (the attended group under shuffle).
    pub width: usize,
    pub heads: usize,
    /// `None` for global attention.
    pub window: Option<usize>,
}

impl ModelConfig {
    pub fn is_hierarchical(&self) -> bool {
        self.hierarchical_stages.is_some()
    }

    /// Width of the embedding and of the classifier input.
    pub fn embed_width(&self) -> usize {
        if self.shuffle_enabled {
            2 * self.channels
        } else {
            self.channels
        }
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size.max(1)
    }

    pub fn patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Tokens entering the first layer.
    pub fn tokens(&self) -> usize {
        self.patches() + usize::from(!self.is_hierarchical())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.image_size == 0 {
            return fail("image and patch size must be positive".into());
        }
        if self.image_size % self.patch_size != 0 {
            return fail(format!(
                "image size {} is not divisible by patch size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.channels == 0 || self.heads == 0 || self.channels % self.heads != 0 {
            return fail(format!(
                "channels {} must be a positive multiple of heads {}",
                self.channels, self.heads
            ));
        }
        if self.layers == 0 {
            return fail("at least one layer is required".into());
        }
        if self.mlp_ratio == 0 {
            return fail("mlp_ratio must be positive".into());
        }
        if self.num_classes == 0 {
            return fail("num_classes must be positive".into());
        }
        if self.rescale_enabled && !self.shuffle_enabled {
            return fail("channel re-scaling applies to the attended group and requires shuffle".into());
        }
        if let Some(stages) = &self.hierarchical_stages {
            if stages.is_empty() {
                return fail("hierarchical_stages must not be empty".into());
            }
            let total: usize = stages.iter().map(|s| s.layers).sum();
            if total != self.layers || stages.iter().any(|s| s.layers == 0) {
                return fail(format!(
                    "stage layers {:?} must be positive and sum to layers = {}",
                    stages.iter().map(|s| s.layers).collect::<Vec<_>>(),
                    self.layers
                ));
            }
            let mut grid = self.grid();
            for (i, stage) in stages.iter().enumerate() {
                if i > 0 {
                    if grid % 2 != 0 {
                        return fail(format!("token grid {grid} before stage {i} is odd"));
                    }
                    grid /= 2;
                }
                if stage.window > 0 && stage.window < grid && grid % stage.window != 0 {
                    return fail(format!(
                        "window {} does not tile the {grid}x{grid} grid of stage {i}",
                        stage.window
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn stage_plan(&self) -> Result<Vec<StagePlan>> {
        self.validate()?;
        let grid = self.grid();
        let Some(stages) = &self.hierarchical_stages else {
            return Ok(vec![StagePlan {
                layers: self.layers,
                tokens: grid * grid + 1,
                grid,
                width: self.channels,
                heads: self.heads,
                window: None,
            }]);
        };
        let mut out = Vec::with_capacity(stages.len());
        let (mut grid, mut width, mut heads) = (grid, self.channels, self.heads);
        for (i, stage) in stages.iter().enumerate() {
            if i > 0 {
                grid /= 2;
                width *= 2;
                heads *= 2;
            }
            out.push(StagePlan {
                layers: stage.layers,
                tokens: grid * grid,
                grid,
                width,
                heads,
                window: (stage.window > 0 && stage.window < grid).then_some(stage.window),
            });
        }
        Ok(out)
    }

    /// DeiT-Tiny: 224 px, 16 px patches, 192 channels, 12 layers, 3 heads.
    pub fn deit_tiny() -> Self {
        ModelConfig {
            image_size: 224,
            patch_size: 16,
            channels: 192,
            layers: 12,
            heads: 3,
            mlp_ratio: 4,
            num_classes: 1000,
            shuffle_enabled: false,
            rescale_enabled: false,
            hierarchical_stages: None,
        }
    }

    /// DeiT-Tiny with the channel shuffle module: 384 embedded channels,
    /// 192 attended.
    pub fn deit_tiny_shuffled() -> Self {
        ModelConfig {
            shuffle_enabled: true,
            rescale_enabled: true,
            ..Self::deit_tiny()
        }
    }

    /// Swin-Tiny with the first-stage width cut from 96 to 48.
    pub fn swin_extratiny() -> Self {
        ModelConfig {
            image_size: 224,
            patch_size: 4,
            channels: 48,
            layers: 12,
            heads: 3,
            mlp_ratio: 4,
            num_classes: 1000,
            shuffle_enabled: false,
            rescale_enabled: false,
            hierarchical_stages: Some(
                [2, 2, 6, 2]
                    .into_iter()
                    .map(|layers| StageConfig { layers, window: 7 })
                    .collect(),
            ),
        }
    }

    /// Shuffled Swin-ExtraTiny with one third-stage layer removed. The
    /// `[2, 2, 5, 2]` split is an assumption; only the 11-layer total is known.
    pub fn swin_extratiny_shuffled() -> Self {
        ModelConfig {
            layers: 11,
            shuffle_enabled: true,
            rescale_enabled: true,
            hierarchical_stages: Some(
                [2, 2, 5, 2]
                    .into_iter()
                    .map(|layers| StageConfig { layers, window: 7 })
                    .collect(),
            ),
            ..Self::swin_extratiny()
        }
    }

    /// Small plain model for 32×32 inputs with 4 px patches.
    pub fn desk(channels: usize, layers: usize, num_classes: usize, shuffle: bool) -> Self {
        ModelConfig {
            image_size: 32,
            patch_size: 4,
            channels,
            layers,
            heads: 2,
            mlp_ratio: 2,
            num_classes,
            shuffle_enabled: shuffle,
            rescale_enabled: shuffle,
            hierarchical_stages: None,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "deit-tiny" => Ok(Self::deit_tiny()),
            "deit-tiny-shuffled" => Ok(Self::deit_tiny_shuffled()),
            "swin-extratiny" => Ok(Self::swin_extratiny()),
            "swin-extratiny-shuffled" => Ok(Self::swin_extratiny_shuffled()),
            "desk" => Ok(Self::desk(32, 2, 10, false)),
            "desk-shuffled" => Ok(Self::desk(32, 2, 10, true)),
            other => Err(Error::config(format!(
                "unknown preset `{other}` (expected one of {})",
                PRESETS.join(", ")
            ))),
        }
    }
}

pub const PRESETS: [&str; 6] = [
    "deit-tiny",
    "deit-tiny-shuffled",
    "swin-extratiny",
    "swin-extratiny-shuffled",
    "desk",
    "desk-shuffled",
];
