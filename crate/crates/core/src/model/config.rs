use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a GCN's node outputs are summarized into one embedding vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReadoutPooling {
    /// Mean over nodes, then a linear layer.
    Mean,
    /// Flatten all node rows, then a linear layer. Depends on node order.
    Flatten,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_rois: usize,
    pub series_len: usize,
    pub embed_len: usize,
    pub conv_kernels: usize,
    pub kernel_size: usize,
    /// Width of feed-forward and MLP hidden layers.
    pub hidden_size: usize,
    /// Number of stacked STFE levels (K).
    pub levels: usize,
    pub attention_heads: usize,
    pub gcn_layers: usize,
    pub gcn_hidden: usize,
    pub readout_dim: usize,
    pub classes: usize,
    pub dropout_rate: f64,
    pub use_sfe: bool,
    pub use_tfe: bool,
    pub use_positional_encoding: bool,
    /// Apply `D^{-1/2}(A+I)D^{-1/2}` before graph convolution.
    pub normalize_adjacency: bool,
    pub readout: ReadoutPooling,
    /// Generated levels (1-based) whose graphs feed a GCN; `None` means all.
    pub graph_levels: Option<Vec<usize>>,
    /// Whether the Pearson connectome feeds its own GCN.
    pub use_pearson_graph: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::new(273, 200, 4)
    }
}

impl ModelConfig {
    /// Default architecture for the given data dimensions.
    ///
    /// Attention heads default to 4, falling back to the largest divisor of
    /// `n_rois` below 4 when 4 does not divide it.
    pub fn new(n_rois: usize, series_len: usize, classes: usize) -> Self {
        Self {
            n_rois,
            series_len,
            embed_len: 64.min(series_len.max(1)),
            conv_kernels: 8,
            kernel_size: 5,
            hidden_size: 64,
            levels: 6,
            attention_heads: default_heads(n_rois),
            gcn_layers: 2,
            gcn_hidden: 64,
            readout_dim: 64,
            classes,
            dropout_rate: 0.2,
            use_sfe: true,
            use_tfe: true,
            use_positional_encoding: true,
            normalize_adjacency: false,
            readout: ReadoutPooling::Mean,
            graph_levels: None,
            use_pearson_graph: true,
        }
    }

    /// Small configuration used for gradient checks: n=6, L=20, l=8, K=2, c=3.
    pub fn tiny() -> Self {
        Self {
            embed_len: 8,
            conv_kernels: 2,
            kernel_size: 3,
            hidden_size: 8,
            levels: 2,
            attention_heads: 2,
            gcn_hidden: 6,
            readout_dim: 5,
            ..Self::new(6, 20, 3)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_rois == 0 || self.series_len == 0 {
            return fail("n_rois and series_len must be positive".into());
        }
        if self.levels < 1 {
            return fail("at least one STFE level is required".into());
        }
        if self.gcn_layers != 2 {
            return fail(format!("gcn_layers is fixed at 2, got {}", self.gcn_layers));
        }
        if self.embed_len == 0 || self.embed_len > self.series_len {
            return fail(format!(
                "embed_len must be in 1..={} (series_len), got {}",
                self.series_len, self.embed_len
            ));
        }
        if !self.use_sfe && !self.use_tfe {
            return fail("at least one of the SFE and TFE pathways must be enabled".into());
        }
        if self.kernel_size % 2 == 0 {
            return fail(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if self.use_sfe && (self.attention_heads == 0 || self.n_rois % self.attention_heads != 0) {
            return fail(format!(
                "n_rois {} is not divisible by attention_heads {}",
                self.n_rois, self.attention_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        for (name, v) in [
            ("conv_kernels", self.conv_kernels),
            ("hidden_size", self.hidden_size),
            ("gcn_hidden", self.gcn_hidden),
            ("readout_dim", self.readout_dim),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if let Some(levels) = &self.graph_levels {
            let mut seen = vec![false; self.levels + 1];
            for &l in levels {
                if l == 0 || l > self.levels {
                    return fail(format!("graph level {l} outside 1..={}", self.levels));
                }
                if std::mem::replace(&mut seen[l], true) {
                    return fail(format!("graph level {l} listed twice"));
                }
            }
        }
        if self.graph_count() == 0 {
            return fail("no graph feeds the predictor".into());
        }
        Ok(())
    }

    /// Generated levels (1-based, ascending) encoded by a GCN.
    pub fn used_levels(&self) -> Vec<usize> {
        match &self.graph_levels {
            Some(levels) => {
                let mut v = levels.clone();
                v.sort_unstable();
                v
            }
            None => (1..=self.levels).collect(),
        }
    }

    /// Number of GCN encoders, i.e. number of readout embeddings.
    pub fn graph_count(&self) -> usize {
        self.used_levels().len() + usize::from(self.use_pearson_graph)
    }

    pub fn head_dim(&self) -> usize {
        self.n_rois / self.attention_heads.max(1)
    }
}

fn default_heads(n: usize) -> usize {
    (1..=4).rev().find(|h| n % h == 0).unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
        assert_eq!(ModelConfig::new(20, 200, 3).attention_heads, 4);
        assert_eq!(ModelConfig::default().attention_heads, 3);
    }

    #[test]
    fn both_pathways_disabled_is_rejected() {
        let cfg = ModelConfig {
            use_sfe: false,
            use_tfe: false,
            ..ModelConfig::tiny()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn structural_limits() {
        let base = ModelConfig::tiny();
        let bad = [
            ModelConfig { levels: 0, ..base.clone() },
            ModelConfig { gcn_layers: 3, ..base.clone() },
            ModelConfig { embed_len: 21, ..base.clone() },
            ModelConfig { kernel_size: 4, ..base.clone() },
            ModelConfig { attention_heads: 4, ..base.clone() },
            ModelConfig { dropout_rate: 1.0, ..base.clone() },
            ModelConfig { graph_levels: Some(vec![3]), ..base.clone() },
            ModelConfig { graph_levels: Some(vec![1, 1]), ..base.clone() },
            ModelConfig {
                graph_levels: Some(vec![]),
                use_pearson_graph: false,
                ..base.clone()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        // heads only matter when the attention pathway exists
        ModelConfig {
            attention_heads: 4,
            use_sfe: false,
            ..base
        }
        .validate()
        .unwrap();
    }
}
