use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::loss::BatchTargets;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch<T> {
    pub inputs: Vec<Tensor<T>>,
    pub targets: BatchTargets<T>,
    pub lambda: f64,
}

/// `x'_i = λ·x_i + (1−λ)·x_perm(i)`, with the targets mixed identically.
pub fn mix_with<T: Scalar>(
    inputs: &[Tensor<T>],
    targets: &BatchTargets<T>,
    lambda: f64,
    perm: &[usize],
) -> Result<MixedBatch<T>> {
    let n = inputs.len();
    if targets.len() != n || perm.len() != n {
        return Err(Error::Contract(format!(
            "{n} inputs, {} targets, permutation of length {}",
            targets.len(),
            perm.len()
        )));
    }
    let (a, b) = (T::of(lambda), T::of(1.0 - lambda));
    let mut mixed = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let j = perm[i];
        let (x, y) = (&inputs[i], &inputs[j]);
        if x.shape() != y.shape() {
            return Err(Error::dim("mixup", format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(&u, &v)| a * u + b * v).collect();
        mixed.push(Tensor::new(x.shape().to_vec(), data)?);
        rows.push(
            targets
                .row(i)
                .iter()
                .zip(targets.row(j))
                .map(|(&u, &v)| a * u + b * v)
                .collect(),
        );
    }
    Ok(MixedBatch {
        inputs: mixed,
        targets: BatchTargets::from_distributions(rows, targets.classes())?,
        lambda,
    })
}

/// Mixes a batch with `λ ~ Beta(alpha, alpha)` and a random partner permutation.
///
/// A batch of one sample, or `alpha = 0`, is returned unchanged.
pub fn mixup_batch<T: Scalar, R: Rng + ?Sized>(
    inputs: &[Tensor<T>],
    targets: &BatchTargets<T>,
    alpha: f64,
    rng: &mut R,
) -> Result<MixedBatch<T>> {
    if inputs.len() < 2 || alpha == 0.0 {
        return Ok(MixedBatch {
            inputs: inputs.to_vec(),
            targets: targets.clone(),
            lambda: 1.0,
        });
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Config(format!("mixup alpha {alpha}: {e}")))?;
    let lambda = beta.sample(rng);
    let mut perm: Vec<usize> = (0..inputs.len()).collect();
    perm.shuffle(rng);
    mix_with(inputs, targets, lambda, &perm)
}
