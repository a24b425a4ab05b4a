//! The multi-level generated-connectome GCN.
//!
//! Pipeline per scan `x [n×L]`:
//! embed → K stacked STFE levels → one cosine graph per level plus the
//! Pearson graph → one two-layer GCN per graph → per-graph readout →
//! concatenation in level order → MLP → softmax.

use rand::{Rng, RngCore};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::{ModelConfig, ReadoutPooling};
use super::connectome::pearson_connectome;
use super::layout::{GcnLayout, Layout, Linear, Norm, SfeLayout, TfeLayout};
use super::params::ModelParams;

/// Sinusoidal position table `[n_tokens×dim]`.
pub fn positional_encoding<T: Scalar>(n_tokens: usize, dim: usize) -> Tensor<T> {
    let mut pe = Tensor::zeros(&[n_tokens, dim]);
    for pos in 0..n_tokens {
        for j in 0..dim {
            let q = j / 2;
            let angle = pos as f64 / 10000f64.powf(2.0 * q as f64 / dim as f64);
            let v = if j % 2 == 0 { angle.sin() } else { angle.cos() };
            pe.set2(pos, j, T::of(v));
        }
    }
    pe
}

/// A single forward pass: the tape, the bound parameter variables, and the
/// dropout source (present only in training mode).
pub struct Pass<'a, T> {
    pub tape: &'a mut Tape<T>,
    vars: &'a [Var],
    rng: Option<&'a mut dyn RngCore>,
    dropout_rate: f64,
}

impl<'a, T: Scalar> Pass<'a, T> {
    pub fn eval(tape: &'a mut Tape<T>, vars: &'a [Var]) -> Self {
        Self {
            tape,
            vars,
            rng: None,
            dropout_rate: 0.0,
        }
    }

    pub fn train(tape: &'a mut Tape<T>, vars: &'a [Var], rng: &'a mut dyn RngCore, dropout_rate: f64) -> Self {
        Self {
            tape,
            vars,
            rng: Some(rng),
            dropout_rate,
        }
    }

    pub fn training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn param(&self, idx: usize) -> Var {
        self.vars[idx]
    }

    fn linear(&mut self, x: Var, lin: Linear) -> Result<Var> {
        let y = self.tape.matmul(x, self.vars[lin.weight])?;
        match lin.bias {
            Some(b) => self.tape.add_bias(y, self.vars[b]),
            None => Ok(y),
        }
    }

    fn norm(&mut self, x: Var, n: Norm) -> Result<Var> {
        self.tape.layer_norm(x, self.vars[n.gain], self.vars[n.shift])
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) => self.tape.dropout(x, self.dropout_rate, true, rng),
            None => Ok(x),
        }
    }
}

/// Tape handles for everything a forward pass produces.
#[derive(Debug, Clone)]
pub struct ForwardVars<T> {
    /// Class probabilities `[1×c]`.
    pub probs: Var,
    /// STFE outputs `h_1..h_K`, each `[n×l]`.
    pub features: Vec<Var>,
    /// Generated graphs `A^(1)..A^(K)`, each `[n×n]`.
    pub adjacencies: Vec<Var>,
    /// Readout embeddings in concatenation order, each `[1×e]`.
    pub embeddings: Vec<Var>,
    pub pearson: Tensor<T>,
}

/// Values of every level artifact for one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelOutputs<T> {
    pub features: Vec<Tensor<T>>,
    pub adjacencies: Vec<Tensor<T>>,
    pub pearson: Tensor<T>,
    pub embeddings: Vec<Tensor<T>>,
}

/// Architecture plus trainable parameters.
#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    layout: Layout,
    params: ModelParams<T>,
    pe: Tensor<T>,
}

impl<T: Scalar> Model<T> {
    /// Fresh model with seeded fan-in uniform initialization.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let params = ModelParams::initialize(&layout.specs, rng);
        Ok(Self::assemble(config, layout, params))
    }

    /// Model from previously saved named tensors.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let params = ModelParams::from_named(&layout.specs, named)?;
        Ok(Self::assemble(config, layout, params))
    }

    fn assemble(config: ModelConfig, layout: Layout, params: ModelParams<T>) -> Self {
        let pe = positional_encoding(config.n_rois, config.embed_len);
        Self {
            config,
            layout,
            params,
            pe,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<T> {
        &mut self.params
    }

    /// Number of trainable scalars implied by a configuration.
    pub fn parameter_count(config: &ModelConfig) -> Result<usize> {
        config.validate()?;
        Ok(Layout::new(config).parameter_count())
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.bind(tape)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (n, len) = x.dims2()?;
        if n != self.config.n_rois || len != self.config.series_len {
            return Err(Error::dim(
                "model input",
                format!(
                    "expected [{}x{}], got [{n}x{len}]",
                    self.config.n_rois, self.config.series_len
                ),
            ));
        }
        Ok(())
    }

    /// `Z = relu(Flatten(Conv(x))·W) + PE`, `[n×l]`.
    pub fn embed(&self, pass: &mut Pass<'_, T>, x: &Tensor<T>) -> Result<Var> {
        self.check_input(x)?;
        let e = &self.layout.embed;
        let cfg = &self.config;
        let xv = pass.tape.constant(x.clone());
        let conv = pass
            .tape
            .conv1d_same(xv, pass.param(e.kernels), pass.param(e.bias))?;
        let flat = pass
            .tape
            .reshape(conv, &[cfg.n_rois, cfg.conv_kernels * cfg.series_len])?;
        let proj = pass.tape.matmul(flat, pass.param(e.weight))?;
        let act = pass.tape.relu(proj);
        if !cfg.use_positional_encoding {
            return Ok(act);
        }
        let pe = pass.tape.constant(self.pe.clone());
        pass.tape.add(act, pe)
    }

    fn level_layout(&self, level: usize) -> Result<&super::layout::LevelLayout> {
        if level == 0 || level > self.config.levels {
            return Err(Error::Contract(format!(
                "level {level} outside 1..={}",
                self.config.levels
            )));
        }
        Ok(&self.layout.levels[level - 1])
    }

    /// Spatial pathway: a pre-norm transformer encoder layer over `h_inᵀ`,
    /// returned transposed back to `[n×l]`.
    pub fn sfe_forward(&self, pass: &mut Pass<'_, T>, h_in: Var, level: usize) -> Result<Var> {
        self.sfe_with_attention(pass, h_in, level).map(|(out, _)| out)
    }

    /// As [`sfe_forward`](Self::sfe_forward), also returning each head's attention matrix.
    pub fn sfe_with_attention(&self, pass: &mut Pass<'_, T>, h_in: Var, level: usize) -> Result<(Var, Vec<Var>)> {
        let sfe = self
            .level_layout(level)?
            .sfe
            .as_ref()
            .ok_or_else(|| Error::Config("SFE pathway is disabled".into()))?;
        let heads = self.config.attention_heads;
        if heads == 0 || self.config.n_rois % heads != 0 {
            return Err(Error::Config(format!(
                "n_rois {} is not divisible by attention_heads {heads}",
                self.config.n_rois
            )));
        }
        let tokens = pass.tape.transpose(h_in)?;
        let (attended, maps) = self.attention(pass, tokens, sfe, heads)?;
        let attended = pass.dropout(attended)?;
        let x1 = pass.tape.add(tokens, attended)?;

        let a2 = pass.norm(x1, sfe.norm_ffn)?;
        let f = pass.linear(a2, sfe.ffn_in)?;
        let f = pass.tape.relu(f);
        let f = pass.linear(f, sfe.ffn_out)?;
        let f = pass.dropout(f)?;
        let x2 = pass.tape.add(x1, f)?;
        let out = pass.norm(x2, sfe.norm_final)?;
        Ok((pass.tape.transpose(out)?, maps))
    }

    fn attention(&self, pass: &mut Pass<'_, T>, tokens: Var, sfe: &SfeLayout, heads: usize) -> Result<(Var, Vec<Var>)> {
        let a = pass.norm(tokens, sfe.norm_attn)?;
        let q = pass.linear(a, sfe.query)?;
        let k = pass.linear(a, sfe.key)?;
        let v = pass.linear(a, sfe.value)?;
        let dh = self.config.head_dim();
        let scale = T::one() / T::of_usize(dh).sqrt();
        let mut outs = Vec::with_capacity(heads);
        let mut maps = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = pass.tape.slice_cols(q, h * dh, dh)?;
            let kh = pass.tape.slice_cols(k, h * dh, dh)?;
            let vh = pass.tape.slice_cols(v, h * dh, dh)?;
            let kt = pass.tape.transpose(kh)?;
            let scores = pass.tape.matmul(qh, kt)?;
            let scores = pass.tape.scale(scores, scale);
            let probs = pass.tape.softmax_rows(scores);
            maps.push(probs);
            outs.push(pass.tape.matmul(probs, vh)?);
        }
        let cat = pass.tape.concat_cols(&outs)?;
        Ok((pass.linear(cat, sfe.output)?, maps))
    }

    /// Temporal pathway: moving-average trend / seasonal residual decomposition,
    /// separate projections, an MLP, and a closing layer norm.
    pub fn tfe_forward(&self, pass: &mut Pass<'_, T>, h_in: Var, level: usize) -> Result<Var> {
        let tfe = self
            .level_layout(level)?
            .tfe
            .as_ref()
            .ok_or_else(|| Error::Config("TFE pathway is disabled".into()))?;
        let (trend, seasonal) = self.decompose(pass, h_in)?;
        self.tfe_project(pass, trend, seasonal, tfe)
    }

    /// `(trend, seasonal)` with `trend + seasonal == h_in`.
    pub fn decompose(&self, pass: &mut Pass<'_, T>, h_in: Var) -> Result<(Var, Var)> {
        let trend = pass.tape.avgpool1d_same(h_in, self.config.kernel_size)?;
        let seasonal = pass.tape.sub(h_in, trend)?;
        Ok((trend, seasonal))
    }

    fn tfe_project(&self, pass: &mut Pass<'_, T>, trend: Var, seasonal: Var, tfe: &TfeLayout) -> Result<Var> {
        let t = pass.linear(trend, tfe.trend)?;
        let t = pass.tape.relu(t);
        let s = pass.linear(seasonal, tfe.seasonal)?;
        let s = pass.tape.relu(s);
        let sum = pass.tape.add(t, s)?;
        let m = pass.linear(sum, tfe.mlp_in)?;
        let m = pass.tape.relu(m);
        let m = pass.linear(m, tfe.mlp_out)?;
        pass.norm(m, tfe.norm)
    }

    /// One STFE level: fuse the enabled pathways and pass them through an MLP.
    pub fn stfe_forward(&self, pass: &mut Pass<'_, T>, h_in: Var, level: usize) -> Result<Var> {
        let layout = self.level_layout(level)?;
        let spatial = match layout.sfe {
            Some(_) => Some(self.sfe_forward(pass, h_in, level)?),
            None => None,
        };
        let temporal = match layout.tfe {
            Some(_) => Some(self.tfe_forward(pass, h_in, level)?),
            None => None,
        };
        let fused = match (temporal, spatial) {
            (Some(t), Some(s)) => pass.tape.add(t, s)?,
            (Some(t), None) => t,
            (None, Some(s)) => s,
            (None, None) => {
                return Err(Error::Config(
                    "both SFE and TFE pathways are disabled".into(),
                ))
            }
        };
        let hidden = pass.linear(fused, layout.fuse_in)?;
        let hidden = pass.tape.relu(hidden);
        let hidden = pass.dropout(hidden)?;
        pass.linear(hidden, layout.fuse_out)
    }

    /// Cosine-similarity graph of the level features.
    pub fn generate_adjacency(&self, pass: &mut Pass<'_, T>, h_level: Var) -> Result<Var> {
        pass.tape.cosine_gram(h_level)
    }

    fn gcn_layout(&self, graph_level: usize) -> Result<&GcnLayout> {
        self.layout
            .gcns
            .iter()
            .find(|g| g.graph_level == graph_level)
            .ok_or_else(|| Error::Contract(format!("no GCN encodes graph level {graph_level}")))
    }

    /// Two graph-convolution layers `h_{j+1} = relu((A+I)·h_j·W_j)` starting from `node_feats`.
    ///
    /// `graph_level` is 0 for the Pearson graph, otherwise the generated level.
    pub fn gcn_forward(&self, pass: &mut Pass<'_, T>, adjacency: Var, node_feats: Var, graph_level: usize) -> Result<Var> {
        let n = self.config.n_rois;
        let (r, c) = pass.tape.value(adjacency).dims2()?;
        if r != n || c != n {
            return Err(Error::dim(
                "gcn_forward",
                format!("adjacency [{r}x{c}] for {n} nodes"),
            ));
        }
        let gcn = self.gcn_layout(graph_level)?;
        let eye = pass.tape.constant(Tensor::eye(n));
        let mut a_hat = pass.tape.add(adjacency, eye)?;
        if self.config.normalize_adjacency {
            a_hat = pass.tape.sym_normalize(a_hat)?;
        }
        let mut h = node_feats;
        for &w in &gcn.layers {
            let agg = pass.tape.matmul(a_hat, h)?;
            let lin = pass.tape.matmul(agg, pass.param(w))?;
            h = pass.tape.relu(lin);
        }
        Ok(h)
    }

    /// Pools node rows and maps them to a `[1×e]` embedding.
    pub fn readout(&self, pass: &mut Pass<'_, T>, gcn_out: Var, graph_level: usize) -> Result<Var> {
        let gcn = self.gcn_layout(graph_level)?;
        let pooled = match self.config.readout {
            ReadoutPooling::Mean => pass.tape.mean_rows(gcn_out)?,
            ReadoutPooling::Flatten => {
                let n = pass.tape.value(gcn_out).numel();
                pass.tape.reshape(gcn_out, &[1, n])?
            }
        };
        let e = pass.linear(pooled, gcn.readout)?;
        Ok(pass.tape.relu(e))
    }

    /// Full forward pass for one scan.
    pub fn forward(&self, pass: &mut Pass<'_, T>, x: &Tensor<T>) -> Result<ForwardVars<T>> {
        self.check_input(x)?;
        let pearson = pearson_connectome(x)?;
        let mut h = self.embed(pass, x)?;
        ensure_finite(pass.tape, h, "embedding")?;

        let mut features = Vec::with_capacity(self.config.levels);
        let mut adjacencies = Vec::with_capacity(self.config.levels);
        for level in 1..=self.config.levels {
            h = self.stfe_forward(pass, h, level)?;
            ensure_finite(pass.tape, h, &format!("STFE level {level}"))?;
            let a = self.generate_adjacency(pass, h)?;
            ensure_finite(pass.tape, a, &format!("graph level {level}"))?;
            features.push(h);
            adjacencies.push(a);
        }

        let f = pass.tape.constant(pearson.clone());
        let mut embeddings = Vec::with_capacity(self.layout.gcns.len());
        for gcn in &self.layout.gcns {
            let level = gcn.graph_level;
            let adjacency = if level == 0 { f } else { adjacencies[level - 1] };
            let out = self.gcn_forward(pass, adjacency, f, level)?;
            let e = self.readout(pass, out, level)?;
            ensure_finite(pass.tape, e, &format!("readout of graph level {level}"))?;
            embeddings.push(e);
        }

        let cat = pass.tape.concat_cols(&embeddings)?;
        let hidden = pass.linear(cat, self.layout.head_in)?;
        let hidden = pass.tape.relu(hidden);
        let hidden = pass.dropout(hidden)?;
        let logits = pass.linear(hidden, self.layout.head_out)?;
        let probs = pass.tape.softmax_rows(logits);
        ensure_finite(pass.tape, probs, "class probabilities")?;
        Ok(ForwardVars {
            probs,
            features,
            adjacencies,
            embeddings,
            pearson,
        })
    }

    /// Inference without dropout: class probabilities `[c]` and every level artifact.
    pub fn predict(&self, x: &Tensor<T>) -> Result<(Tensor<T>, LevelOutputs<T>)> {
        let mut tape = Tape::new();
        let vars = self.bind_constants(&mut tape);
        let mut pass = Pass::eval(&mut tape, &vars);
        let out = self.forward(&mut pass, x)?;
        let probs = tape.value(out.probs).clone().reshape(&[self.config.classes])?;
        let values = |vs: &[Var]| vs.iter().map(|&v| tape.value(v).clone()).collect::<Vec<_>>();
        let levels = LevelOutputs {
            features: values(&out.features),
            adjacencies: values(&out.adjacencies),
            pearson: out.pearson,
            embeddings: values(&out.embeddings),
        };
        Ok((probs, levels))
    }

    /// Registers parameters as non-trainable leaves (inference only).
    fn bind_constants(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params
            .tensors()
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect()
    }
}

fn ensure_finite<T: Scalar>(tape: &Tape<T>, v: Var, stage: &str) -> Result<()> {
    if tape.value(v).is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("forward pass produced NaN/inf at {stage}")))
    }
}
