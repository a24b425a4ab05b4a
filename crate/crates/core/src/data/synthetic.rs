use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::dataset::ScanSample;

/// Shared loading of every ROI on the first latent factor (a global signal).
pub const GLOBAL_LOADING: f64 = 1.0;

/// Latent-factor generator settings.
///
/// Class `c` mixes `latent_rank` white-noise sources through
/// `M_c = B + strength · P_c`, where `B` is shared and `P_c` is class specific.
/// Hub rows of `M_c` are then replaced by the direction of the summed unit
/// loadings of all other ROIs, which maximizes their summed correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub samples_per_class: usize,
    pub n_rois: usize,
    pub series_len: usize,
    pub latent_rank: usize,
    /// Scale of the class-specific perturbation; 0 makes all classes identical.
    pub strength: f64,
    /// Standard deviation of independent sensor noise.
    pub noise: f64,
    /// ROIs whose loadings aggregate all other ROIs' loadings.
    pub hubs: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            samples_per_class: 60,
            n_rois: 20,
            series_len: 200,
            latent_rank: 4,
            strength: 1.0,
            noise: 0.5,
            hubs: 2,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.classes < 1 || self.samples_per_class < 1 {
            return fail("need at least one class and one sample per class".into());
        }
        if self.n_rois < 1 || self.series_len < 2 || self.latent_rank < 1 {
            return fail(format!(
                "n_rois {}, series_len {}, latent_rank {} must be at least 1, 2, 1",
                self.n_rois, self.series_len, self.latent_rank
            ));
        }
        if !(self.strength >= 0.0) || !(self.noise >= 0.0) {
            return fail(format!(
                "strength {} and noise {} must be nonnegative",
                self.strength, self.noise
            ));
        }
        if self.hubs > 0 && self.hubs >= self.n_rois {
            return fail(format!("{} hubs leave no other ROI among {}", self.hubs, self.n_rois));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.classes).map(|c| format!("class{c}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData<T> {
    pub samples: Vec<ScanSample<T>>,
    /// Expected correlation `normalize(M_c M_cᵀ)` per class, ignoring sensor noise.
    pub connectomes: Vec<Tensor<T>>,
    /// Planted hub ROIs, ascending.
    pub hubs: Vec<usize>,
    pub classes: Vec<String>,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// `M Mᵀ` scaled to unit diagonal; rows with zero loading get zero correlation.
pub fn normalized_gram<T: Scalar>(m: &[Vec<f64>]) -> Tensor<T> {
    let n = m.len();
    let norms: Vec<f64> = m.iter().map(|r| norm(r)).collect();
    let mut out = Tensor::eye(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else {
                m[i].iter().zip(&m[j]).map(|(a, b)| a * b).sum::<f64>() / (norms[i] * norms[j])
            };
            out.set2(i, j, T::of(v));
            out.set2(j, i, T::of(v));
        }
    }
    out
}

fn norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Points every hub row along the sum of the other rows' unit vectors,
/// scaled to their mean norm.
fn plant_hubs(m: &mut [Vec<f64>], hubs: &[usize]) {
    if hubs.is_empty() {
        return;
    }
    let r = m[0].len();
    let mut direction = vec![0.0; r];
    let mut scale = 0.0;
    let mut count = 0.0;
    for (i, row) in m.iter().enumerate() {
        if hubs.binary_search(&i).is_ok() {
            continue;
        }
        let len = norm(row);
        if len > 0.0 {
            direction.iter_mut().zip(row).for_each(|(d, v)| *d += v / len);
        }
        scale += len;
        count += 1.0;
    }
    let len = norm(&direction);
    let gain = if len > 0.0 { scale / count / len } else { 0.0 };
    for &h in hubs {
        m[h] = direction.iter().map(|d| d * gain).collect();
    }
}

/// Draws a labelled dataset whose classes differ in expected connectivity.
///
/// Sample series are `M_c · z + noise · ε` with `z` a `latent_rank × L`
/// white-noise matrix. Samples are ordered class by class.
pub fn generate_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<SyntheticData<T>> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, Stream::Synthetic, 0);
    let (n, r, len) = (spec.n_rois, spec.latent_rank, spec.series_len);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut hubs = order[..spec.hubs].to_vec();
    hubs.sort_unstable();

    let shared: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..r)
                .map(|k| if k == 0 { GLOBAL_LOADING } else { normal(&mut rng) })
                .collect()
        })
        .collect();
    let mixing: Vec<Vec<Vec<f64>>> = (0..spec.classes)
        .map(|_| {
            let mut m: Vec<Vec<f64>> = shared
                .iter()
                .map(|row| row.iter().map(|&b| b + spec.strength * normal(&mut rng)).collect())
                .collect();
            plant_hubs(&mut m, &hubs);
            m
        })
        .collect();
    let connectomes = mixing.iter().map(|m| normalized_gram(m)).collect();

    let mut samples = Vec::with_capacity(spec.classes * spec.samples_per_class);
    for (c, m) in mixing.iter().enumerate() {
        for s in 0..spec.samples_per_class {
            let z: Vec<f64> = (0..r * len).map(|_| normal(&mut rng)).collect();
            let mut data = Vec::with_capacity(n * len);
            for row in m {
                for t in 0..len {
                    let signal: f64 = row.iter().enumerate().map(|(k, &w)| w * z[k * len + t]).sum();
                    let sensor = if spec.noise > 0.0 { spec.noise * normal(&mut rng) } else { 0.0 };
                    data.push(T::of(signal + sensor));
                }
            }
            let index = samples.len();
            samples.push(ScanSample {
                scan_id: format!("scan{index:05}"),
                subject_id: format!("subj{c}-{s:04}"),
                label: c,
                series: Tensor::new(vec![n, len], data)?,
            });
        }
    }
    Ok(SyntheticData {
        samples,
        connectomes,
        hubs,
        classes: spec.class_names(),
    })
}
