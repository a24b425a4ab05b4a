use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::{metrics, FoldReport, MetricReport};
use crate::model::{Model, ModelConfig};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;
use crate::split::{stratified_kfold, Fold};
use crate::tensor::Tensor;

use super::trainer::{EpochStats, Trainer};
use super::TrainConfig;

/// Everything one fold produced.
#[derive(Debug, Clone)]
pub struct FoldOutcome<T> {
    pub fold: usize,
    pub split: Fold,
    pub history: Vec<EpochStats>,
    /// Test metrics after the final epoch.
    pub metrics: MetricReport,
    pub test_probs: Tensor<T>,
    pub model: Model<T>,
}

#[derive(Debug, Clone)]
pub struct CvOutcome<T> {
    pub report: FoldReport,
    pub folds: Vec<FoldOutcome<T>>,
}

/// Class probabilities `[N×c]` for `inputs` and the metrics against `labels`.
pub fn evaluate<T: Scalar>(model: &Model<T>, inputs: &[Tensor<T>], labels: &[usize]) -> Result<(MetricReport, Tensor<T>)> {
    let c = model.config().classes;
    let mut data = Vec::with_capacity(inputs.len() * c);
    for x in inputs {
        let (p, _) = model.predict(x)?;
        data.extend_from_slice(p.data());
    }
    let probs = Tensor::new(vec![inputs.len(), c], data)?;
    Ok((metrics(&probs, labels)?, probs))
}

pub(crate) fn check_dataset<T: Scalar>(inputs: &[Tensor<T>], labels: &[usize], cfg: &ModelConfig) -> Result<()> {
    if inputs.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} inputs for {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    let want = [cfg.n_rois, cfg.series_len];
    if let Some(i) = inputs.iter().position(|x| x.shape() != want) {
        return Err(Error::dim(
            "dataset",
            format!("sample {i} has shape {:?}, model expects {want:?}", inputs[i].shape()),
        ));
    }
    if let Some(i) = labels.iter().position(|&y| y >= cfg.classes) {
        return Err(Error::Contract(format!(
            "sample {i} has label {} but the model has {} classes",
            labels[i], cfg.classes
        )));
    }
    Ok(())
}

fn run_fold<T: Scalar>(
    fold: usize,
    split: Fold,
    inputs: &[Tensor<T>],
    labels: &[usize],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<FoldOutcome<T>> {
    if let Some(i) = split.train.iter().find(|i| split.test.binary_search(i).is_ok()) {
        return Err(Error::Contract(format!("fold {fold}: sample {i} is in both train and test")));
    }
    let pick = |idx: &[usize]| -> (Vec<Tensor<T>>, Vec<usize>) {
        (idx.iter().map(|&i| inputs[i].clone()).collect(), idx.iter().map(|&i| labels[i]).collect())
    };
    let (train_x, train_y) = pick(&split.train);
    let (test_x, test_y) = pick(&split.test);

    let mut init = stream_rng(train_cfg.seed, Stream::Init, fold as u64);
    let model = Model::new(model_cfg.clone(), &mut init)?;
    let mut trainer = Trainer::new(model, train_cfg.clone(), fold as u64);
    let mut history = Vec::with_capacity(train_cfg.epochs);
    for _ in 0..train_cfg.epochs {
        let stats = trainer
            .train_epoch(&train_x, &train_y)
            .map_err(|e| annotate(e, fold))?;
        log::info!(
            "fold {} epoch {} ce {:.6} group {:.6} total {:.6} ({:.2}s)",
            fold + 1,
            stats.epoch,
            stats.ce,
            stats.group,
            stats.total,
            stats.wall_seconds
        );
        history.push(stats);
    }
    let model = trainer.into_model();
    if !model.params().all_finite() {
        return Err(Error::NonFinite(format!("fold {}: parameters after training", fold + 1)));
    }
    let (metrics, test_probs) = evaluate(&model, &test_x, &test_y)?;
    log::info!(
        "fold {} test acc {:.4} auc {:.4}",
        fold + 1,
        metrics.acc,
        metrics.auc
    );
    Ok(FoldOutcome {
        fold,
        split,
        history,
        metrics,
        test_probs,
        model,
    })
}

fn annotate(e: Error, fold: usize) -> Error {
    match e {
        Error::NonFinite(msg) => Error::NonFinite(format!("fold {}: {msg}", fold + 1)),
        other => other,
    }
}

/// Stratified k-fold training and evaluation, one fresh seeded model per fold.
///
/// Folds run concurrently on a pool of `train_cfg.workers` threads; each fold
/// draws from its own random streams, so results do not depend on scheduling.
pub fn run_cv<T: Scalar>(
    inputs: &[Tensor<T>],
    labels: &[usize],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<CvOutcome<T>> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    check_dataset(inputs, labels, model_cfg)?;
    let splits = stratified_kfold(labels, train_cfg.folds, train_cfg.seed)?;
    let work = || -> Result<Vec<FoldOutcome<T>>> {
        splits
            .into_par_iter()
            .enumerate()
            .map(|(fold, split)| run_fold(fold, split, inputs, labels, model_cfg, train_cfg))
            .collect()
    };
    let folds = if train_cfg.workers == 0 {
        work()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(train_cfg.workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work)?
    };
    let report = FoldReport::from_folds(folds.iter().map(|f| f.metrics).collect())?;
    Ok(CvOutcome { report, folds })
}
