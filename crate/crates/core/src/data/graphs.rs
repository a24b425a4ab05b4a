use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LevelOutputs;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::dataset::{csv_error, read_numeric_rows};

/// Which adjacency of each sample enters [`mean_graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraphSelector {
    /// One generated level, 1-based.
    Level(usize),
    /// Every generated level of every sample.
    AllLevels,
    Pearson,
}

/// Elementwise mean of the selected adjacency matrices across samples.
pub fn mean_graph<T: Scalar>(outputs: &[LevelOutputs<T>], selector: GraphSelector) -> Result<Tensor<T>> {
    let mut chosen: Vec<&Tensor<T>> = Vec::new();
    for (s, out) in outputs.iter().enumerate() {
        match selector {
            GraphSelector::Pearson => chosen.push(&out.pearson),
            GraphSelector::AllLevels => chosen.extend(&out.adjacencies),
            GraphSelector::Level(l) => chosen.push(
                l.checked_sub(1)
                    .and_then(|i| out.adjacencies.get(i))
                    .ok_or_else(|| {
                        Error::Contract(format!(
                            "sample {s} has no generated level {l} (levels 1..={})",
                            out.adjacencies.len()
                        ))
                    })?,
            ),
        }
    }
    let first = chosen
        .first()
        .ok_or_else(|| Error::Contract("mean graph of no samples".into()))?;
    // deviations from the first graph, so identical inputs reproduce it exactly
    let mut spread: Tensor<T> = Tensor::zeros(first.shape());
    for a in &chosen {
        if a.shape() != first.shape() {
            return Err(Error::dim("mean_graph", format!("{:?} vs {:?}", a.shape(), first.shape())));
        }
        for ((s, &v), &f) in spread.data_mut().iter_mut().zip(a.data()).zip(first.data()) {
            *s += v - f;
        }
    }
    let k = T::of_usize(chosen.len());
    let data = first.data().iter().zip(spread.data()).map(|(&f, &s)| f + s / k).collect();
    Tensor::new(first.shape().to_vec(), data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge<T> {
    pub i: usize,
    pub j: usize,
    pub weight: T,
}

/// `⌈fraction · n(n−1)/2⌉`, ignoring floating-point excess below 1e-9.
pub fn edge_budget(n: usize, fraction: f64) -> usize {
    let pairs = n * n.saturating_sub(1) / 2;
    ((fraction * pairs as f64 - 1e-9).ceil().max(0.0) as usize).min(pairs)
}

/// Largest upper-triangle entries of `a`, ranked by magnitude (or by signed
/// value when `signed`), ties broken by `(i, j)`.
pub fn top_edges<T: Scalar>(a: &Tensor<T>, fraction: f64, signed: bool) -> Result<Vec<Edge<T>>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("edge fraction must be in (0, 1], got {fraction}")));
    }
    let n = square(a, "top_edges")?;
    let mut edges: Vec<Edge<T>> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .map(|(i, j)| Edge { i, j, weight: a.get2(i, j) })
        .collect();
    let key = |e: &Edge<T>| if signed { e.weight.as_f64() } else { e.weight.abs().as_f64() };
    edges.sort_by(|x, y| key(y).total_cmp(&key(x)).then((x.i, x.j).cmp(&(y.i, y.j))));
    edges.truncate(edge_budget(n, fraction));
    Ok(edges)
}

fn square<T: Scalar>(a: &Tensor<T>, op: &'static str) -> Result<usize> {
    let (n, m) = a.dims2()?;
    if n != m {
        return Err(Error::dim(op, format!("matrix must be square, got {:?}", a.shape())));
    }
    Ok(n)
}

/// ROIs ranked by summed off-diagonal edge weight, highest first; ties by index.
///
/// The sum is signed unless `absolute` is set.
pub fn node_importance<T: Scalar>(a: &Tensor<T>, absolute: bool) -> Result<Vec<(usize, T)>> {
    let n = square(a, "node_importance")?;
    let mut scores: Vec<(usize, T)> = (0..n)
        .map(|i| {
            let s = (0..n)
                .filter(|&j| j != i)
                .map(|j| if absolute { a.get2(i, j).abs() } else { a.get2(i, j) })
                .sum();
            (i, s)
        })
        .collect();
    scores.sort_by(|x, y| y.1.as_f64().total_cmp(&x.1.as_f64()).then(x.0.cmp(&y.0)));
    Ok(scores)
}

pub fn roi_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("roi{i}")).collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn fmt17<T: Scalar>(v: T) -> String {
    format!("{:.16e}", v.as_f64())
}

/// Writes `a` as a header row of ROI labels followed by `n` rows of values.
pub fn export_matrix<T: Scalar>(a: &Tensor<T>, path: &Path, labels: Option<&[String]>) -> Result<()> {
    let n = square(a, "export_matrix")?;
    let default_labels;
    let labels = match labels {
        Some(l) if l.len() == n => l,
        Some(l) => {
            return Err(Error::Contract(format!("{} labels for {n} ROIs", l.len())));
        }
        None => {
            default_labels = roi_labels(n);
            &default_labels
        }
    };
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(labels).map_err(|e| csv_error(path, e))?;
    for i in 0..n {
        w.write_record(a.row(i).iter().map(|&v| fmt17(v)))
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a matrix written by [`export_matrix`].
pub fn load_matrix<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let rows = read_numeric_rows(path, true)?;
    let n = rows.len();
    if let Some(r) = rows.iter().position(|r| r.len() != n) {
        return Err(Error::Format(format!(
            "{}: row {} has {} values, expected {n}",
            path.display(),
            r + 1,
            rows[r].len()
        )));
    }
    Tensor::new(vec![n, n], rows.into_iter().flatten().map(T::of).collect())
}

pub const EDGE_HEADER: &str = "i,j,weight";

/// One `i,j,weight` row per edge under a fixed header.
pub fn export_edges<T: Scalar>(edges: &[Edge<T>], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let mut body = String::from(EDGE_HEADER);
    body.push('\n');
    for e in edges {
        body.push_str(&format!("{},{},{}\n", e.i, e.j, fmt17(e.weight)));
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load_edges<T: Scalar>(path: &Path) -> Result<Vec<Edge<T>>> {
    read_numeric_rows(path, true)?
        .into_iter()
        .enumerate()
        .map(|(r, row)| match row.as_slice() {
            &[i, j, w] if i >= 0.0 && j >= 0.0 && i.fract() == 0.0 && j.fract() == 0.0 => Ok(Edge {
                i: i as usize,
                j: j as usize,
                weight: T::of(w),
            }),
            _ => Err(Error::Format(format!("{}: bad edge record {}", path.display(), r + 1))),
        })
        .collect()
}

pub const IMPORTANCE_HEADER: &str = "rank,roi,score";

/// Writes the first `top` ranked nodes.
pub fn export_importance<T: Scalar>(ranked: &[(usize, T)], top: usize, path: &Path) -> Result<()> {
    let mut body = String::from(IMPORTANCE_HEADER);
    body.push('\n');
    for (rank, &(roi, score)) in ranked.iter().take(top).enumerate() {
        body.push_str(&format!("{},{roi},{}\n", rank + 1, fmt17(score)));
    }
    let mut w = create(path)?;
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}
