//! Plain-value connectome constructions.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Pearson correlation matrix of the rows of `x [n×L]`.
///
/// The diagonal is exactly 1. A zero-variance row correlates 0 with every
/// other row (a warning is logged).
pub fn pearson_connectome<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, len) = x.dims2()?;
    let inv_len = T::one() / T::of_usize(len.max(1));
    let mut centered = Vec::with_capacity(n * len);
    let mut norms = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<T>() * inv_len;
        let start = centered.len();
        centered.extend(row.iter().map(|&v| v - mean));
        let ss: T = centered[start..].iter().map(|&v| v * v).sum();
        norms.push(ss.sqrt());
    }
    let flat: Vec<usize> = (0..n).filter(|&i| norms[i] == T::zero()).collect();
    if !flat.is_empty() {
        log::warn!("pearson_connectome: zero-variance rows {flat:?}");
    }
    let mut out = Tensor::eye(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let r = if norms[i] == T::zero() || norms[j] == T::zero() {
                T::zero()
            } else {
                let dot: T = centered[i * len..(i + 1) * len]
                    .iter()
                    .zip(&centered[j * len..(j + 1) * len])
                    .map(|(&a, &b)| a * b)
                    .sum();
                (dot / (norms[i] * norms[j])).max(-T::one()).min(T::one())
            };
            out.set2(i, j, r);
            out.set2(j, i, r);
        }
    }
    Ok(out)
}
