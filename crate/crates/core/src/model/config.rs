use serde::{Deserialize, Serialize};

use super::ModelError;

fn default_true() -> bool {
    true
}

fn default_one() -> usize {
    1
}

/// One residual block: `cells` repeats of a separable-convolution cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub cells: usize,
    pub channels: usize,
    pub kernel: usize,
    #[serde(default = "default_one")]
    pub dilation: usize,
    #[serde(default = "default_true")]
    pub residual: bool,
}

impl BlockConfig {
    pub fn new(cells: usize, channels: usize, kernel: usize) -> Self {
        Self {
            cells,
            channels,
            kernel,
            dilation: 1,
            residual: true,
        }
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }
}

/// Full architectural description of a classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartzConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub blocks: Vec<BlockConfig>,
    pub head_channels: usize,
    pub dropout: f64,
    pub stem_kernel: usize,
}

impl QuartzConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.in_channels == 0 {
            return fail("in_channels must be positive".into());
        }
        if self.num_classes < 2 {
            return fail(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.head_channels == 0 {
            return fail("head_channels must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.stem_kernel == 0 || self.stem_kernel % 2 == 0 {
            return fail(format!("stem_kernel must be odd, got {}", self.stem_kernel));
        }
        if self.blocks.is_empty() {
            return fail("at least one block is required".into());
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.cells == 0 {
                return fail(format!("block {i}: cells must be >= 1"));
            }
            if b.channels == 0 {
                return fail(format!("block {i}: channels must be positive"));
            }
            if b.kernel % 2 == 0 {
                return fail(format!(
                    "block {i}: kernel {} is even; same padding needs odd kernels",
                    b.kernel
                ));
            }
            if b.dilation == 0 {
                return fail(format!("block {i}: dilation must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn stem_channels(&self) -> usize {
        self.blocks[0].channels
    }

    pub fn last_channels(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.channels)
    }
}

/// Named architecture presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Base,
    Large,
}

impl Preset {
    pub const NAMES: [&'static str; 2] = ["base", "large"];

    pub fn from_name(name: &str) -> Result<Self, ModelError> {
        match name {
            "base" => Ok(Self::Base),
            "large" => Ok(Self::Large),
            other => Err(ModelError::UnknownPreset {
                name: other.to_string(),
                available: Self::NAMES.join(", "),
            }),
        }
    }

    pub fn config(self, in_channels: usize, num_classes: usize) -> QuartzConfig {
        let (blocks, head_channels) = match self {
            Preset::Base => (
                [(64, 5), (64, 7), (128, 9)]
                    .into_iter()
                    .map(|(ch, k)| BlockConfig::new(2, ch, k))
                    .collect(),
                128,
            ),
            Preset::Large => (
                [(128, 5, 1), (128, 7, 1), (256, 9, 1), (256, 11, 2), (512, 13, 2)]
                    .into_iter()
                    .map(|(ch, k, d)| BlockConfig::new(3, ch, k).with_dilation(d))
                    .collect(),
                256,
            ),
        };
        QuartzConfig {
            in_channels,
            num_classes,
            blocks,
            head_channels,
            dropout: 0.1,
            stem_kernel: 3,
        }
    }
}

/// Builds a preset configuration by name.
pub fn preset(name: &str, in_channels: usize, num_classes: usize) -> Result<QuartzConfig, ModelError> {
    Ok(Preset::from_name(name)?.config(in_channels, num_classes))
}

/// `1 + Σ dilation·(kernel − 1)` over every convolution on the main path.
pub fn receptive_field(config: &QuartzConfig) -> usize {
    let stem = config.stem_kernel.saturating_sub(1);
    let blocks: usize = config
        .blocks
        .iter()
        .map(|b| b.cells * b.dilation * b.kernel.saturating_sub(1))
        .sum();
    1 + stem + blocks
}
