use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::loss::{cross_entropy_tape, group_loss_tape, BatchTargets};
use crate::model::{Model, Pass};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::mixup::mixup_batch;
use super::optim::{adamw_step, OptimizerState};
use super::TrainConfig;

/// Loss terms of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchStats {
    pub ce: f64,
    /// The weighted penalty `alpha · dissimilarity` entering the total.
    pub group: f64,
    /// Raw intra-class graph dissimilarity, reported even when `alpha = 0`.
    pub dissimilarity: f64,
    pub total: f64,
}

/// Batch means over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochStats {
    pub epoch: usize,
    pub ce: f64,
    pub group: f64,
    pub dissimilarity: f64,
    pub total: f64,
    pub wall_seconds: f64,
}

/// Deals each class's shuffled indices round-robin into one sequence and
/// chunks it, so every batch holds roughly equal class shares.
///
/// A trailing batch of a single sample is merged into the previous batch.
pub fn balanced_batches<R: Rng + ?Sized>(labels: &[usize], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        pools[y].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(rng);
    }
    let mut order = Vec::with_capacity(labels.len());
    let deepest = pools.iter().map(Vec::len).max().unwrap_or(0);
    for depth in 0..deepest {
        order.extend(pools.iter().filter_map(|p| p.get(depth)));
    }
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("nonempty");
        batches.last_mut().expect("nonempty").extend(last);
    }
    batches
}

/// A model together with its optimizer state and private random streams.
pub struct Trainer<T> {
    pub model: Model<T>,
    pub state: OptimizerState<T>,
    pub cfg: TrainConfig,
    mixup_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    shuffle_rng: ChaCha8Rng,
    tape: Tape<T>,
    epochs_done: usize,
}

impl<T: Scalar> Trainer<T> {
    /// `stream` keys the mixup, dropout and shuffle streams (the fold index in CV).
    pub fn new(model: Model<T>, cfg: TrainConfig, stream: u64) -> Self {
        let state = OptimizerState::new(model.params());
        Self {
            model,
            state,
            mixup_rng: stream_rng(cfg.seed, Stream::Mixup, stream),
            dropout_rng: stream_rng(cfg.seed, Stream::Dropout, stream),
            shuffle_rng: stream_rng(cfg.seed, Stream::Shuffle, stream),
            cfg,
            tape: Tape::new(),
            epochs_done: 0,
        }
    }

    /// Mixup, forward, total loss, backward and one AdamW step.
    pub fn train_batch(&mut self, inputs: &[Tensor<T>], labels: &[usize]) -> Result<BatchStats> {
        let classes = self.model.config().classes;
        let targets = BatchTargets::from_labels(labels, classes)?;
        let batch = mixup_batch(inputs, &targets, self.cfg.mixup_alpha, &mut self.mixup_rng)?;
        let groups = batch.targets.dominant_labels();
        let rate = self.model.config().dropout_rate;

        self.tape.clear();
        let vars = self.model.bind(&mut self.tape);
        let mut probs = Vec::with_capacity(batch.inputs.len());
        let mut graphs = Vec::with_capacity(batch.inputs.len());
        for x in &batch.inputs {
            let mut pass = Pass::train(&mut self.tape, &vars, &mut self.dropout_rng, rate);
            let out = self.model.forward(&mut pass, x)?;
            probs.push(out.probs);
            graphs.push(out.adjacencies);
        }
        let tape = &mut self.tape;
        let ce = cross_entropy_tape(tape, &probs, &batch.targets)?;
        let dissimilarity = group_loss_tape(tape, &graphs, &groups)?;
        let total = if self.cfg.alpha == 0.0 {
            ce
        } else {
            let weighted = tape.scale(dissimilarity, T::of(self.cfg.alpha));
            tape.add(ce, weighted)?
        };
        let stats = BatchStats {
            ce: tape.value(ce).data()[0].as_f64(),
            group: self.cfg.alpha * tape.value(dissimilarity).data()[0].as_f64(),
            dissimilarity: tape.value(dissimilarity).data()[0].as_f64(),
            total: tape.value(total).data()[0].as_f64(),
        };
        if !stats.total.is_finite() {
            return Err(Error::NonFinite(format!("total loss {}", stats.total)));
        }
        tape.backward(total)?;
        let grads = self.model.params().gradients(tape, &vars);
        adamw_step(self.model.params_mut(), &grads, &mut self.state, &self.cfg)?;
        Ok(stats)
    }

    /// One pass over class-balanced shuffled batches of the given samples.
    pub fn train_epoch(&mut self, inputs: &[Tensor<T>], labels: &[usize]) -> Result<EpochStats> {
        if inputs.len() != labels.len() || inputs.is_empty() {
            return Err(Error::Contract(format!(
                "epoch over {} inputs and {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let start = Instant::now();
        let batches = balanced_batches(labels, self.cfg.batch_size, &mut self.shuffle_rng);
        let mut sum = BatchStats::default();
        for (b, idx) in batches.iter().enumerate() {
            let xs: Vec<Tensor<T>> = idx.iter().map(|&i| inputs[i].clone()).collect();
            let ys: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let s = self.train_batch(&xs, &ys).map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("epoch aborted at batch {b}: {msg}")),
                other => other,
            })?;
            sum.ce += s.ce;
            sum.group += s.group;
            sum.dissimilarity += s.dissimilarity;
            sum.total += s.total;
        }
        self.epochs_done += 1;
        let k = batches.len() as f64;
        Ok(EpochStats {
            epoch: self.epochs_done,
            ce: sum.ce / k,
            group: sum.group / k,
            dissimilarity: sum.dissimilarity / k,
            total: sum.total / k,
            wall_seconds: start.elapsed().as_secs_f64(),
        })
    }

    pub fn into_model(self) -> Model<T> {
        self.model
    }
}
