use serde::{Deserialize, Serialize};

/// Backbone kernel size; every block uses `KERNEL×KERNEL` with padding 1.
pub const KERNEL: usize = 3;
pub const PADDING: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Relation,
    NoRelation,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Relation => "relation",
            Variant::NoRelation => "no_relation",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relation" => Ok(Variant::Relation),
            "no_relation" => Ok(Variant::NoRelation),
            other => Err(format!("unknown variant `{other}` (expected relation or no_relation)")),
        }
    }
}

/// How the training graph evaluates the pair sum of the relation module.
///
/// `Enumerate` materializes every `(f_m, f_n, q)` triplet. `Factorized`
/// uses the fact that a single linear `g_θ` distributes over the sum, so the
/// K² evaluations reduce to one evaluation on pooled cell features; the two
/// agree up to floating point summation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSum {
    Enumerate,
    Factorized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Observation length in frames.
    pub tau: usize,
    pub frame_channels: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    /// conv(3×3) → bias → ReLU blocks; the last block's width must equal
    /// `feature_channels`.
    pub backbone_blocks: Vec<ConvBlock>,
    /// Channels `c` of the spatiotemporal map.
    pub feature_channels: usize,
    /// GRU hidden size.
    pub traj_hidden: usize,
    /// Output width of `g_θ`.
    pub relation_dim: usize,
    pub classifier_hidden: Vec<usize>,
    pub include_self_pairs: bool,
    pub variant: Variant,
    pub pair_sum: PairSum,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            tau: 16,
            frame_channels: 3,
            frame_height: 48,
            frame_width: 48,
            backbone_blocks: vec![
                ConvBlock { out_channels: 16, stride: 2 },
                ConvBlock { out_channels: 32, stride: 2 },
                ConvBlock { out_channels: 64, stride: 2 },
            ],
            feature_channels: 64,
            traj_hidden: 256,
            relation_dim: 256,
            classifier_hidden: vec![128],
            include_self_pairs: true,
            variant: Variant::Relation,
            pair_sum: PairSum::Factorized,
        }
    }
}

impl ModelConfig {
    /// Small configuration for gradient verification and overfit checks:
    /// tau 4, 8×8 frames, c = traj_hidden = d_r = 8, a 2×2 feature map.
    pub fn miniature() -> Self {
        ModelConfig {
            tau: 4,
            frame_channels: 3,
            frame_height: 8,
            frame_width: 8,
            backbone_blocks: vec![
                ConvBlock { out_channels: 4, stride: 2 },
                ConvBlock { out_channels: 8, stride: 2 },
            ],
            feature_channels: 8,
            traj_hidden: 8,
            relation_dim: 8,
            classifier_hidden: vec![8],
            ..ModelConfig::default()
        }
    }

    /// Reduced-width network over the default 48×48 scene, sized so that
    /// multi-seed ablations fit on one CPU core.
    pub fn compact() -> Self {
        ModelConfig {
            backbone_blocks: vec![
                ConvBlock { out_channels: 4, stride: 2 },
                ConvBlock { out_channels: 8, stride: 2 },
                ConvBlock { out_channels: 16, stride: 2 },
                ConvBlock { out_channels: 16, stride: 2 },
            ],
            feature_channels: 16,
            traj_hidden: 32,
            relation_dim: 32,
            classifier_hidden: vec![32],
            ..ModelConfig::default()
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// Spatial size after each backbone block, `None` if a block does not fit.
    pub fn block_sizes(&self) -> Option<Vec<(usize, usize)>> {
        let (mut h, mut w) = (self.frame_height, self.frame_width);
        let mut sizes = Vec::with_capacity(self.backbone_blocks.len());
        for b in &self.backbone_blocks {
            if b.stride == 0 || h + 2 * PADDING < KERNEL || w + 2 * PADDING < KERNEL {
                return None;
            }
            h = (h + 2 * PADDING - KERNEL) / b.stride + 1;
            w = (w + 2 * PADDING - KERNEL) / b.stride + 1;
            sizes.push((h, w));
        }
        Some(sizes)
    }

    /// `(h, w)` of the feature map.
    pub fn feature_map(&self) -> Option<(usize, usize)> {
        match self.block_sizes()?.last() {
            Some(&hw) => Some(hw),
            None => Some((self.frame_height, self.frame_width)),
        }
    }

    /// Number of cells `K = h·w`.
    pub fn cells(&self) -> usize {
        self.feature_map().map(|(h, w)| h * w).unwrap_or(0)
    }

    /// Ordered `(m, n)` cell pairs summed by the relation module.
    pub fn cell_pairs(&self) -> Vec<(usize, usize)> {
        let k = self.cells();
        let mut pairs = Vec::with_capacity(k * k);
        for m in 0..k {
            for n in 0..k {
                if self.include_self_pairs || m != n {
                    pairs.push((m, n));
                }
            }
        }
        pairs
    }

    pub fn pair_count(&self) -> usize {
        let k = self.cells();
        if self.include_self_pairs {
            k * k
        } else {
            k * k - k
        }
    }

    /// Every invariant violation, as `field: message`.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let positive = [
            ("tau", self.tau),
            ("frame_channels", self.frame_channels),
            ("frame_height", self.frame_height),
            ("frame_width", self.frame_width),
            ("feature_channels", self.feature_channels),
            ("traj_hidden", self.traj_hidden),
            ("relation_dim", self.relation_dim),
        ];
        for (name, value) in positive {
            if value == 0 {
                v.push(format!("model.{name}: must be ≥ 1"));
            }
        }
        if self.backbone_blocks.is_empty() {
            v.push("model.backbone_blocks: at least one block is required".into());
        }
        for (i, b) in self.backbone_blocks.iter().enumerate() {
            if b.out_channels == 0 {
                v.push(format!("model.backbone_blocks[{i}].out_channels: must be ≥ 1"));
            }
            if b.stride == 0 {
                v.push(format!("model.backbone_blocks[{i}].stride: must be ≥ 1"));
            }
        }
        if let Some(last) = self.backbone_blocks.last() {
            if last.out_channels != self.feature_channels {
                v.push(format!(
                    "model.feature_channels: {} must equal the last backbone block's out_channels {}",
                    self.feature_channels, last.out_channels
                ));
            }
        }
        for (i, &h) in self.classifier_hidden.iter().enumerate() {
            if h == 0 {
                v.push(format!("model.classifier_hidden[{i}]: must be ≥ 1"));
            }
        }
        if self.backbone_blocks.iter().all(|b| b.stride > 0) && self.block_sizes().is_none() {
            v.push("model.frame_height/frame_width: frames too small for the backbone".into());
        }
        if !self.include_self_pairs && self.cells() == 1 {
            v.push("model.include_self_pairs: a 1×1 feature map has no pairs without self-pairs".into());
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_map_is_six_by_six() {
        let c = ModelConfig::default();
        assert_eq!(c.feature_map(), Some((6, 6)));
        assert!(c.violations().is_empty());
        assert_eq!(ModelConfig::compact().feature_map(), Some((3, 3)));
        assert_eq!(ModelConfig::miniature().feature_map(), Some((2, 2)));
    }

    #[test]
    fn pair_count_law() {
        let mut c = ModelConfig::miniature();
        assert_eq!(c.cell_pairs().len(), 16);
        assert_eq!(c.pair_count(), 16);
        c.include_self_pairs = false;
        assert_eq!(c.cell_pairs().len(), 12);
        assert_eq!(c.pair_count(), 12);
    }

    #[test]
    fn violations_are_collected() {
        let c = ModelConfig { tau: 0, feature_channels: 3, ..ModelConfig::default() };
        let v = c.violations();
        assert_eq!(v.len(), 2, "{v:?}");
    }
}
