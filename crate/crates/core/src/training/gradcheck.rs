use crate::autodiff::{central_difference, GradCheck, Tape, Var};
use crate::error::{Error, Result};
use crate::loss::{cross_entropy_tape, group_loss_tape, BatchTargets};
use crate::model::{Model, Pass};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Gradient-oracle result for one named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub name: String,
    pub numel: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Deterministic total loss (no dropout, no mixup) on `tape`.
fn batch_loss<T: Scalar>(
    model: &Model<T>,
    tape: &mut Tape<T>,
    vars: &[Var],
    inputs: &[Tensor<T>],
    labels: &[usize],
    alpha: f64,
) -> Result<Var> {
    let targets = BatchTargets::from_labels(labels, model.config().classes)?;
    let mut probs = Vec::with_capacity(inputs.len());
    let mut graphs = Vec::with_capacity(inputs.len());
    for x in inputs {
        let mut pass = Pass::eval(tape, vars);
        let out = model.forward(&mut pass, x)?;
        probs.push(out.probs);
        graphs.push(out.adjacencies);
    }
    let ce = cross_entropy_tape(tape, &probs, &targets)?;
    let group = group_loss_tape(tape, &graphs, labels)?;
    let weighted = tape.scale(group, T::of(alpha));
    tape.add(ce, weighted)
}

/// Compares backpropagated gradients of `ce + alpha·group` over the batch
/// with central differences, one row per parameter tensor.
pub fn gradcheck_model<T: Scalar>(
    model: &Model<T>,
    inputs: &[Tensor<T>],
    labels: &[usize],
    alpha: f64,
    eps: f64,
) -> Result<Vec<BlockCheck>> {
    if inputs.is_empty() {
        return Err(Error::Contract("gradient check needs at least one sample".into()));
    }
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let loss = batch_loss(model, &mut tape, &vars, inputs, labels, alpha)?;
    tape.backward(loss)?;
    let grads = model.params().gradients(&tape, &vars);

    let mut rows = Vec::with_capacity(grads.len());
    for (idx, (name, value)) in model.params().iter().enumerate() {
        let mut probe_model = model.clone();
        let numeric = central_difference(
            |probe| {
                probe_model.params_mut().tensors_mut()[idx] = probe.clone();
                let mut tape = Tape::new();
                let vars = probe_model.bind(&mut tape);
                let loss = batch_loss(&probe_model, &mut tape, &vars, inputs, labels, alpha)?;
                Ok(tape.value(loss).data()[0])
            },
            value,
            T::of(eps),
        )?;
        let check = GradCheck::compare(grads[idx].data(), &numeric);
        rows.push(BlockCheck {
            name: name.to_string(),
            numel: value.numel(),
            max_rel_error: check.max_rel_error.as_f64(),
            worst_index: check.worst_index,
            analytic: check.analytic.as_f64(),
            numeric: check.numeric.as_f64(),
        });
    }
    Ok(rows)
}
