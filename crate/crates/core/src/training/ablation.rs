use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::FoldReport;
use crate::model::ModelConfig;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::cv::run_cv;
use super::TrainConfig;

/// Overrides applied to the base configuration for one ablation row.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConfigDelta {
    pub use_sfe: Option<bool>,
    pub use_tfe: Option<bool>,
    /// Group-loss weight; `Some(0.0)` removes the penalty.
    pub alpha: Option<f64>,
    pub graph_levels: Option<Vec<usize>>,
    pub embed_len: Option<usize>,
    pub levels: Option<usize>,
}

impl ConfigDelta {
    pub fn apply(&self, model: &ModelConfig, train: &TrainConfig) -> (ModelConfig, TrainConfig) {
        let mut m = model.clone();
        let mut t = train.clone();
        if let Some(v) = self.use_sfe {
            m.use_sfe = v;
        }
        if let Some(v) = self.use_tfe {
            m.use_tfe = v;
        }
        if let Some(v) = self.alpha {
            t.alpha = v;
        }
        if let Some(v) = &self.graph_levels {
            m.graph_levels = Some(v.clone());
        }
        if let Some(v) = self.embed_len {
            m.embed_len = v;
        }
        if let Some(v) = self.levels {
            m.levels = v;
        }
        (m, t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub delta: ConfigDelta,
}

impl Variant {
    pub fn new(name: impl Into<String>, delta: ConfigDelta) -> Self {
        Self {
            name: name.into(),
            delta,
        }
    }
}

/// The six module combinations: each of TFE, SFE and the group loss toggled.
pub fn ablation_variants() -> Vec<Variant> {
    let row = |name: &str, tfe: bool, sfe: bool, group: bool| {
        Variant::new(
            name,
            ConfigDelta {
                use_tfe: Some(tfe),
                use_sfe: Some(sfe),
                alpha: (!group).then_some(0.0),
                ..ConfigDelta::default()
            },
        )
    };
    vec![
        row("sfe+group", false, true, true),
        row("tfe+group", true, false, true),
        row("tfe+sfe", true, true, false),
        row("sfe", false, true, false),
        row("tfe", true, false, false),
        row("tfe+sfe+group", true, true, true),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationOutcome {
    pub report: FoldReport,
    /// Fold mean of the final epoch's weighted group term.
    pub final_group: f64,
    /// Fold mean of the final epoch's raw intra-class dissimilarity.
    pub final_dissimilarity: f64,
    pub first_dissimilarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub name: String,
    /// `Err` holds the reason a row failed; the remaining rows still run.
    pub outcome: std::result::Result<AblationOutcome, String>,
}

impl AblationRow {
    /// One table line: the variant name followed by `mean±std` percentages, or the failure.
    pub fn to_line(&self) -> String {
        match &self.outcome {
            Ok(o) => {
                let cells: Vec<String> = o
                    .report
                    .mean
                    .values()
                    .iter()
                    .zip(o.report.std.values())
                    .map(|(m, s)| format!("{:.2}±{:.2}", 100.0 * m, 100.0 * s))
                    .collect();
                format!("{},{},{:.6},{:.6}", self.name, cells.join(","), o.final_group, o.final_dissimilarity)
            }
            Err(reason) => format!("{},failed: {}", self.name, reason.replace(',', ";")),
        }
    }
}

pub const ABLATION_HEADER: &str = "variant,acc,auc,spe,sen,f1,final_group,final_dissimilarity";

/// Cross-validates the base configuration under each variant's overrides.
pub fn run_ablation<T: Scalar>(
    inputs: &[Tensor<T>],
    labels: &[usize],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    variants: &[Variant],
) -> Vec<AblationRow> {
    variants
        .iter()
        .map(|v| {
            let (m, t) = v.delta.apply(model_cfg, train_cfg);
            let outcome = run_variant(inputs, labels, &m, &t).map_err(|e| e.to_string());
            if let Err(reason) = &outcome {
                log::warn!("ablation row {} failed: {reason}", v.name);
            }
            AblationRow {
                name: v.name.clone(),
                outcome,
            }
        })
        .collect()
}

fn run_variant<T: Scalar>(
    inputs: &[Tensor<T>],
    labels: &[usize],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<AblationOutcome> {
    let cv = run_cv(inputs, labels, model_cfg, train_cfg)?;
    let k = cv.folds.len() as f64;
    let mean_of = |f: &dyn Fn(&super::EpochStats) -> f64, last: bool| {
        cv.folds
            .iter()
            .map(|fold| {
                let h = if last { fold.history.last() } else { fold.history.first() };
                h.map_or(0.0, f)
            })
            .sum::<f64>()
            / k
    };
    Ok(AblationOutcome {
        final_group: mean_of(&|s| s.group, true),
        final_dissimilarity: mean_of(&|s| s.dissimilarity, true),
        first_dissimilarity: mean_of(&|s| s.dissimilarity, false),
        report: cv.report,
    })
}
