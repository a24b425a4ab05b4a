//! Training objective: soft-target cross-entropy plus the intra-class graph penalty.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Probabilities below this are clamped before taking the log.
pub const LOG_FLOOR: f64 = 1e-12;

/// Per-sample class distributions: one-hot rows, or convex mixtures after mixup.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTargets<T> {
    classes: usize,
    rows: Vec<T>,
}

impl<T: Scalar> BatchTargets<T> {
    pub fn from_labels(labels: &[usize], classes: usize) -> Result<Self> {
        let mut rows = vec![T::zero(); labels.len() * classes];
        for (i, &y) in labels.iter().enumerate() {
            if y >= classes {
                return Err(Error::Contract(format!(
                    "label {y} of sample {i} is outside 0..{classes}"
                )));
            }
            rows[i * classes + y] = T::one();
        }
        Ok(Self { classes, rows })
    }

    /// Rows must be nonnegative and sum to 1 within 1e-12.
    pub fn from_distributions(rows: Vec<Vec<T>>, classes: usize) -> Result<Self> {
        let mut flat = Vec::with_capacity(rows.len() * classes);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != classes {
                return Err(Error::Contract(format!(
                    "target row {i} has {} entries, expected {classes}",
                    row.len()
                )));
            }
            let total: T = row.iter().copied().sum();
            if row.iter().any(|&p| p < T::zero()) || (total - T::one()).abs() > T::of(1e-12) {
                return Err(Error::Contract(format!(
                    "target row {i} is not a distribution (sum {total})"
                )));
            }
            flat.extend_from_slice(row);
        }
        Ok(Self { classes, rows: flat })
    }

    pub fn len(&self) -> usize {
        if self.classes == 0 {
            0
        } else {
            self.rows.len() / self.classes
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.rows[i * self.classes..(i + 1) * self.classes]
    }

    /// Class holding the largest weight in row `i`; ties go to the lower index.
    pub fn dominant(&self, i: usize) -> usize {
        let row = self.row(i);
        let mut best = 0;
        for (k, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = k;
            }
        }
        best
    }

    pub fn dominant_labels(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.dominant(i)).collect()
    }

    pub fn as_tensor(&self) -> Tensor<T> {
        Tensor::new(vec![self.len(), self.classes], self.rows.clone()).expect("target shape")
    }
}

/// `−(1/N) Σ_i Σ_k target_ik · ln(max(prob_ik, 1e-12))` for `probs [N×c]`.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, targets: &BatchTargets<T>) -> Result<T> {
    let (n, c) = probs.dims2()?;
    if n == 0 {
        return Err(Error::Contract("cross-entropy of an empty batch".into()));
    }
    if n != targets.len() || c != targets.classes() {
        return Err(Error::dim(
            "cross_entropy",
            format!("probs {:?} vs targets [{}×{}]", probs.shape(), targets.len(), targets.classes()),
        ));
    }
    let floor = T::of(LOG_FLOOR);
    let mut total = T::zero();
    for i in 0..n {
        for (&p, &t) in probs.row(i).iter().zip(targets.row(i)) {
            if t != T::zero() {
                total -= t * p.max(floor).ln();
            }
        }
    }
    Ok(total / T::of_usize(n))
}

/// Tape version of [`cross_entropy`] over per-sample probability rows `[1×c]`.
pub fn cross_entropy_tape<T: Scalar>(tape: &mut Tape<T>, probs: &[Var], targets: &BatchTargets<T>) -> Result<Var> {
    let n = probs.len();
    if n == 0 {
        return Err(Error::Contract("cross-entropy of an empty batch".into()));
    }
    if n != targets.len() {
        return Err(Error::dim(
            "cross_entropy",
            format!("{n} probability rows vs {} targets", targets.len()),
        ));
    }
    let floor = T::of(LOG_FLOOR);
    let mut terms = Vec::with_capacity(n);
    for (i, &p) in probs.iter().enumerate() {
        let shape = tape.value(p).shape().to_vec();
        let t = tape.constant(Tensor::new(shape, targets.row(i).to_vec())?);
        let logp = tape.ln_clamped(p, floor);
        let weighted = tape.mul(logp, t)?;
        terms.push(tape.sum(weighted));
    }
    let total = sum_vars(tape, &terms)?;
    Ok(tape.scale(total, -T::one() / T::of_usize(n)))
}

/// Class membership sets: indices of samples per class, classes ascending.
fn groups(labels: &[usize]) -> Vec<Vec<usize>> {
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut out = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        out[y].push(i);
    }
    out
}

fn check_levels<A>(adjacencies: &[Vec<A>], labels: &[usize]) -> Result<usize> {
    if adjacencies.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} graph lists for {} labels",
            adjacencies.len(),
            labels.len()
        )));
    }
    let k = adjacencies.first().map_or(0, Vec::len);
    if let Some(i) = adjacencies.iter().position(|a| a.len() != k) {
        return Err(Error::Contract(format!(
            "sample {i} has {} graphs, expected {k}",
            adjacencies[i].len()
        )));
    }
    Ok(k)
}

/// Intra-class graph dissimilarity.
///
/// `(1/K) Σ_levels Σ_classes Σ_{u∈S_c} ‖A_u − μ_c‖²_F / |S_c|` with class means
/// taken within the batch. `adjacencies[u]` holds sample `u`'s K graphs.
pub fn group_loss<T: Scalar>(adjacencies: &[Vec<Tensor<T>>], labels: &[usize]) -> Result<T> {
    let k = check_levels(adjacencies, labels)?;
    if k == 0 {
        return Ok(T::zero());
    }
    let mut total = T::zero();
    for level in 0..k {
        for members in groups(labels).iter().filter(|m| !m.is_empty()) {
            let shape = adjacencies[members[0]][level].shape().to_vec();
            let mut mean = Tensor::zeros(&shape);
            for &u in members {
                let a = &adjacencies[u][level];
                if a.shape() != shape.as_slice() {
                    return Err(Error::dim("group_loss", format!("{:?} vs {:?}", a.shape(), shape)));
                }
                for (m, &v) in mean.data_mut().iter_mut().zip(a.data()) {
                    *m += v;
                }
            }
            let inv = T::one() / T::of_usize(members.len());
            mean.data_mut().iter_mut().for_each(|m| *m *= inv);
            let spread: T = members
                .iter()
                .flat_map(|&u| adjacencies[u][level].data().iter().zip(mean.data()))
                .map(|(&a, &m)| (a - m) * (a - m))
                .sum();
            total += spread * inv;
        }
    }
    Ok(total / T::of_usize(k))
}

/// Tape version of [`group_loss`].
pub fn group_loss_tape<T: Scalar>(tape: &mut Tape<T>, adjacencies: &[Vec<Var>], labels: &[usize]) -> Result<Var> {
    let k = check_levels(adjacencies, labels)?;
    if k == 0 {
        return Ok(tape.constant(Tensor::scalar(T::zero())));
    }
    let mut class_terms = Vec::new();
    for level in 0..k {
        for members in groups(labels).iter().filter(|m| !m.is_empty()) {
            let inv = T::one() / T::of_usize(members.len());
            let graphs: Vec<Var> = members.iter().map(|&u| adjacencies[u][level]).collect();
            let total = sum_vars(tape, &graphs)?;
            let mean = tape.scale(total, inv);
            let mut squares = Vec::with_capacity(graphs.len());
            for &a in &graphs {
                let d = tape.sub(a, mean)?;
                let d2 = tape.mul(d, d)?;
                squares.push(tape.sum(d2));
            }
            let spread = sum_vars(tape, &squares)?;
            class_terms.push(tape.scale(spread, inv));
        }
    }
    let total = sum_vars(tape, &class_terms)?;
    Ok(tape.scale(total, T::one() / T::of_usize(k)))
}

/// `ce + alpha · group`.
pub fn total_loss<T: Scalar>(ce: T, group: T, alpha: T) -> T {
    ce + alpha * group
}

fn sum_vars<T: Scalar>(tape: &mut Tape<T>, vars: &[Var]) -> Result<Var> {
    let (&first, rest) = vars
        .split_first()
        .ok_or_else(|| Error::Contract("sum over no terms".into()))?;
    rest.iter().try_fold(first, |acc, &v| tape.add(acc, v))
}
