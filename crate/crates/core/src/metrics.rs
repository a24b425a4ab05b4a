//! Classification metrics, per-fold reports, and their text record format.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `counts[t][p]`: samples of true class `t` predicted as `p`.
pub fn confusion_counts(pred: &[usize], truth: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    if pred.len() != truth.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} truth labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut counts = vec![vec![0; classes]; classes];
    for (i, (&p, &t)) in pred.iter().zip(truth).enumerate() {
        if p >= classes || t >= classes {
            return Err(Error::Contract(format!(
                "sample {i}: class index (pred {p}, truth {t}) outside 0..{classes}"
            )));
        }
        counts[t][p] += 1;
    }
    Ok(counts)
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// One-vs-rest ROC area for scores of `positive` vs `negative` samples.
///
/// Computed from midranks, which counts tied pairs as one half.
pub fn binary_auc(positive: &[f64], negative: &[f64]) -> f64 {
    if positive.is_empty() || negative.is_empty() {
        return 0.5;
    }
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|&s| (s, true))
        .chain(negative.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1..=j+1 share their average
        let midrank = (i + j + 2) as f64 / 2.0;
        rank_sum += midrank * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let p = positive.len() as f64;
    (rank_sum - p * (p + 1.0) / 2.0) / (p * negative.len() as f64)
}

/// The five evaluation metrics, each a fraction in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricReport {
    pub acc: f64,
    pub auc: f64,
    pub spe: f64,
    pub sen: f64,
    pub f1: f64,
}

impl MetricReport {
    pub const NAMES: [&'static str; 5] = ["acc", "auc", "spe", "sen", "f1"];

    pub fn values(&self) -> [f64; 5] {
        [self.acc, self.auc, self.spe, self.sen, self.f1]
    }

    pub fn from_values(v: [f64; 5]) -> Self {
        Self {
            acc: v[0],
            auc: v[1],
            spe: v[2],
            sen: v[3],
            f1: v[4],
        }
    }
}

/// Accuracy plus macro one-vs-rest AUC, specificity, sensitivity and F1.
///
/// Predictions are the argmax of each row of `probs [N×c]`. Classes absent
/// from `truth` are left out of the macro averages.
pub fn metrics<T: Scalar>(probs: &Tensor<T>, truth: &[usize]) -> Result<MetricReport> {
    let (n, c) = probs.dims2()?;
    if n == 0 {
        return Err(Error::Contract("metrics of an empty set".into()));
    }
    if truth.len() != n {
        return Err(Error::dim("metrics", format!("{n} score rows vs {} labels", truth.len())));
    }
    if !probs.is_finite() {
        return Err(Error::NonFinite("class scores".into()));
    }
    let pred: Vec<usize> = (0..n).map(|i| argmax(probs.row(i))).collect();
    let counts = confusion_counts(&pred, truth, c)?;
    let correct: usize = (0..c).map(|k| counts[k][k]).sum();

    let absent: Vec<usize> = (0..c).filter(|&k| counts[k].iter().sum::<usize>() == 0).collect();
    if !absent.is_empty() {
        log::warn!("classes {absent:?} absent from truth; excluded from macro averages");
    }
    let present: Vec<usize> = (0..c).filter(|k| !absent.contains(k)).collect();
    let (mut auc, mut spe, mut sen, mut f1) = (0.0, 0.0, 0.0, 0.0);
    for &k in &present {
        let tp = counts[k][k] as f64;
        let fn_ = counts[k].iter().sum::<usize>() as f64 - tp;
        let fp = (0..c).map(|t| counts[t][k]).sum::<usize>() as f64 - tp;
        let tn = n as f64 - tp - fn_ - fp;
        sen += tp / (tp + fn_);
        // with no negatives there can be no false positive
        spe += if tn + fp > 0.0 { tn / (tn + fp) } else { 1.0 };
        f1 += 2.0 * tp / (2.0 * tp + fp + fn_);
        let (pos, neg): (Vec<f64>, Vec<f64>) = {
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            for i in 0..n {
                let s = probs.get2(i, k).as_f64();
                if truth[i] == k {
                    pos.push(s);
                } else {
                    neg.push(s);
                }
            }
            (pos, neg)
        };
        auc += binary_auc(&pos, &neg);
    }
    let m = present.len() as f64;
    Ok(MetricReport {
        acc: correct as f64 / n as f64,
        auc: auc / m,
        spe: spe / m,
        sen: sen / m,
        f1: f1 / m,
    })
}

/// Per-fold metrics with their mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub folds: Vec<MetricReport>,
    pub mean: MetricReport,
    pub std: MetricReport,
}

pub const REPORT_HEADER: &str = "fold,acc,auc,spe,sen,f1";

impl FoldReport {
    pub fn from_folds(folds: Vec<MetricReport>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::Contract("fold report needs at least one fold".into()));
        }
        let k = folds.len() as f64;
        let mut mean = [0.0; 5];
        for f in &folds {
            for (m, v) in mean.iter_mut().zip(f.values()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= k);
        let mut std = [0.0; 5];
        if folds.len() > 1 {
            for f in &folds {
                for ((s, v), m) in std.iter_mut().zip(f.values()).zip(mean) {
                    *s += (v - m) * (v - m);
                }
            }
            std.iter_mut().for_each(|s| *s = (*s / (k - 1.0)).sqrt());
        }
        Ok(Self {
            folds,
            mean: MetricReport::from_values(mean),
            std: MetricReport::from_values(std),
        })
    }

    /// Percentages with two decimals: a header, one row per fold, then `mean±std`.
    pub fn to_text(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for (i, f) in self.folds.iter().enumerate() {
            let _ = write!(out, "{}", i + 1);
            for v in f.values() {
                let _ = write!(out, ",{:.2}", 100.0 * v);
            }
            out.push('\n');
        }
        out.push_str("mean±std");
        for (m, s) in self.mean.values().into_iter().zip(self.std.values()) {
            let _ = write!(out, ",{:.2}±{:.2}", 100.0 * m, 100.0 * s);
        }
        out.push('\n');
        out
    }

    /// Reads back [`to_text`](Self::to_text) output (values as printed, i.e. rounded).
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some(REPORT_HEADER) {
            return Err(Error::Format(format!("report must start with `{REPORT_HEADER}`")));
        }
        let pct = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map(|v| v / 100.0)
                .map_err(|e| Error::Format(format!("bad metric `{s}`: {e}")))
        };
        let mut folds = Vec::new();
        let mut aggregate = None;
        for line in lines {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 6 {
                return Err(Error::Format(format!("expected 6 fields in `{line}`")));
            }
            if cells[0] == "mean±std" {
                let mut mean = [0.0; 5];
                let mut std = [0.0; 5];
                for (i, cell) in cells[1..].iter().enumerate() {
                    let (m, s) = cell
                        .split_once('±')
                        .ok_or_else(|| Error::Format(format!("expected mean±std in `{cell}`")))?;
                    mean[i] = pct(m)?;
                    std[i] = pct(s)?;
                }
                aggregate = Some((mean, std));
            } else {
                let mut v = [0.0; 5];
                for (slot, cell) in v.iter_mut().zip(&cells[1..]) {
                    *slot = pct(cell)?;
                }
                folds.push(MetricReport::from_values(v));
            }
        }
        let (mean, std) = aggregate.ok_or_else(|| Error::Format("missing mean±std row".into()))?;
        Ok(Self {
            folds,
            mean: MetricReport::from_values(mean),
            std: MetricReport::from_values(std),
        })
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Counts concordant positive/negative pairs directly, ties as one half.
    fn pairwise_auc(pos: &[f64], neg: &[f64]) -> f64 {
        let mut wins = 0.0;
        for &p in pos {
            for &q in neg {
                wins += if p > q {
                    1.0
                } else if p == q {
                    0.5
                } else {
                    0.0
                };
            }
        }
        wins / (pos.len() * neg.len()) as f64
    }

    fn macro_pairwise_auc(probs: &Tensor<f64>, truth: &[usize]) -> f64 {
        let c = probs.shape()[1];
        let present: Vec<usize> = (0..c).filter(|k| truth.contains(k)).collect();
        let total: f64 = present
            .iter()
            .map(|&k| {
                let pos: Vec<f64> = (0..truth.len()).filter(|&i| truth[i] == k).map(|i| probs.get2(i, k)).collect();
                let neg: Vec<f64> = (0..truth.len()).filter(|&i| truth[i] != k).map(|i| probs.get2(i, k)).collect();
                pairwise_auc(&pos, &neg)
            })
            .sum();
        total / present.len() as f64
    }

    fn scores(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_f64_rows(rows).unwrap()
    }

    #[test]
    fn confusion_hand_cases() {
        let c = confusion_counts(&[0, 1, 1, 2], &[0, 1, 1, 2], 3).unwrap();
        assert_eq!(c, vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
        assert_eq!(confusion_counts(&[1, 0], &[0, 1], 2).unwrap(), vec![vec![0, 1], vec![1, 0]]);
        assert!(matches!(confusion_counts(&[2], &[0], 2), Err(Error::Contract(_))));
    }

    #[test]
    fn confusion_matches_pair_counting() {
        let truth = [0, 1, 2, 2, 1, 0];
        let pred = [0, 2, 2, 1, 1, 1];
        let c = confusion_counts(&pred, &truth, 3).unwrap();
        for t in 0..3 {
            for p in 0..3 {
                let brute = truth.iter().zip(&pred).filter(|&(&a, &b)| a == t && b == p).count();
                assert_eq!(c[t][p], brute);
            }
        }
        assert_eq!(c.iter().flatten().sum::<usize>(), 6);
    }

    #[test]
    fn separable_scores_are_perfect() {
        let p = scores(&[&[0.9, 0.1], &[0.2, 0.8], &[0.7, 0.3], &[0.4, 0.6]]);
        let r = metrics(&p, &[0, 1, 0, 1]).unwrap();
        assert_eq!(r, MetricReport::from_values([1.0; 5]));
    }

    #[test]
    fn all_ties_give_half_auc() {
        let p = scores(&[&[0.5, 0.5], &[0.5, 0.5], &[0.5, 0.5], &[0.5, 0.5]]);
        let r = metrics(&p, &[0, 1, 1, 0]).unwrap();
        assert_eq!(r.auc, 0.5);
    }

    #[test]
    fn hand_enumerated_six_sample_cases() {
        // predictions: 0,1,1,0,2,2 against truth 0,0,1,1,2,2
        let p = scores(&[
            &[0.6, 0.3, 0.1],
            &[0.2, 0.5, 0.3],
            &[0.1, 0.8, 0.1],
            &[0.5, 0.4, 0.1],
            &[0.1, 0.2, 0.7],
            &[0.3, 0.3, 0.4],
        ]);
        let truth = [0, 0, 1, 1, 2, 2];
        let r = metrics(&p, &truth).unwrap();
        // class 0: tp1 fn1 fp1 tn3; class 1: tp1 fn1 fp1 tn3; class 2: tp2 fn0 fp0 tn4
        assert!((r.acc - 4.0 / 6.0).abs() < 1e-15);
        assert!((r.sen - (0.5 + 0.5 + 1.0) / 3.0).abs() < 1e-15);
        assert!((r.spe - (0.75 + 0.75 + 1.0) / 3.0).abs() < 1e-15);
        assert!((r.f1 - (0.5 + 0.5 + 1.0) / 3.0).abs() < 1e-15);

        // binary: truth 1,1,1,0,0,0 with predictions 1,1,0,0,0,1
        let p = scores(&[&[0.2, 0.8], &[0.4, 0.6], &[0.7, 0.3], &[0.9, 0.1], &[0.6, 0.4], &[0.3, 0.7]]);
        let r = metrics(&p, &[1, 1, 1, 0, 0, 0]).unwrap();
        // each class: tp2 fn1 fp1 tn2
        assert!((r.acc - 4.0 / 6.0).abs() < 1e-15);
        assert!((r.sen - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.spe - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_is_excluded() {
        let p = scores(&[&[0.8, 0.1, 0.1], &[0.1, 0.8, 0.1]]);
        let r = metrics(&p, &[0, 1]).unwrap();
        assert_eq!(r, MetricReport::from_values([1.0; 5]));
    }

    #[test]
    fn auc_matches_pairwise_oracle_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..50 {
            let n = 20;
            // coarse scores force ties
            let data: Vec<f64> = (0..n * 3).map(|_| (rng.random_range(0..10) as f64) / 10.0).collect();
            let truth: Vec<usize> = (0..n).map(|i| if i < 3 { i } else { rng.random_range(0..3) }).collect();
            let p = Tensor::new(vec![n, 3], data).unwrap();
            let r = metrics(&p, &truth).unwrap();
            assert!((r.auc - macro_pairwise_auc(&p, &truth)).abs() < 1e-12, "trial {trial}");
        }
    }

    #[test]
    fn fold_report_aggregates_and_round_trips() {
        let a = MetricReport::from_values([0.9, 0.95, 0.92, 0.88, 0.9]);
        let b = MetricReport::from_values([0.8, 0.85, 0.9, 0.78, 0.8]);
        let r = FoldReport::from_folds(vec![a, b]).unwrap();
        assert!((r.mean.acc - 0.85).abs() < 1e-12);
        assert!((r.std.acc - (0.005f64).sqrt()).abs() < 1e-12);
        let text = r.to_text();
        assert!(text.starts_with("fold,acc,auc,spe,sen,f1\n1,90.00,95.00,92.00,88.00,90.00\n"));
        assert!(text.contains("mean±std,85.00±7.07,"));
        let back = FoldReport::parse_text(&text).unwrap();
        assert_eq!(back.folds.len(), 2);
        assert!((back.mean.auc - 0.9).abs() < 1e-12);
        assert!(FoldReport::from_folds(vec![]).is_err());
    }

    proptest! {
        #[test]
        fn auc_is_invariant_under_monotone_transforms(
            raw in proptest::collection::vec(0.0f64..1.0, 30),
            labels in proptest::collection::vec(0usize..3, 10),
        ) {
            let p = Tensor::new(vec![10, 3], raw).unwrap();
            let q = p.map(|v| (3.0 * v).exp() - 7.0);
            let mut truth = labels;
            truth[0] = 0;
            truth[1] = 1;
            let a = metrics(&p, &truth).unwrap();
            let b = metrics(&q, &truth).unwrap();
            prop_assert_eq!(a.auc, b.auc);
            for v in a.values() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
