//! Parameter layout: which tensor index plays which role.

use super::config::{ModelConfig, ReadoutPooling};
use super::params::{Init, ParamSpec, SpecBuilder};

#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    pub weight: usize,
    pub bias: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Norm {
    pub gain: usize,
    pub shift: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct EmbedLayout {
    pub kernels: usize,
    pub bias: usize,
    pub weight: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct SfeLayout {
    pub norm_attn: Norm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub norm_ffn: Norm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub norm_final: Norm,
}

#[derive(Debug, Clone)]
pub(crate) struct TfeLayout {
    pub trend: Linear,
    pub seasonal: Linear,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
    pub norm: Norm,
}

#[derive(Debug, Clone)]
pub(crate) struct LevelLayout {
    pub sfe: Option<SfeLayout>,
    pub tfe: Option<TfeLayout>,
    pub fuse_in: Linear,
    pub fuse_out: Linear,
}

/// One graph encoder: two graph-convolution weights plus its readout.
#[derive(Debug, Clone)]
pub(crate) struct GcnLayout {
    /// 0 for the Pearson graph, otherwise the generated level.
    pub graph_level: usize,
    pub layers: [usize; 2],
    pub readout: Linear,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub specs: Vec<ParamSpec>,
    pub embed: EmbedLayout,
    pub levels: Vec<LevelLayout>,
    pub gcns: Vec<GcnLayout>,
    pub head_in: Linear,
    pub head_out: Linear,
}

fn linear(b: &mut SpecBuilder, name: &str, fan_in: usize, fan_out: usize, with_bias: bool) -> Linear {
    let weight = b.weight(format!("{name}.weight"), fan_in, fan_out);
    let bias = with_bias.then(|| b.bias(format!("{name}.bias"), fan_in, fan_out));
    Linear { weight, bias }
}

fn norm(b: &mut SpecBuilder, name: &str, width: usize) -> Norm {
    Norm {
        gain: b.add(format!("{name}.gain"), &[width], Init::Ones),
        shift: b.add(format!("{name}.shift"), &[width], Init::Zeros),
    }
}

impl Layout {
    /// Deterministic layout for a validated configuration.
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut b = SpecBuilder::default();
        let (n, l, h) = (cfg.n_rois, cfg.embed_len, cfg.hidden_size);
        let embed = EmbedLayout {
            kernels: b.add(
                "embed.kernels",
                &[cfg.conv_kernels, cfg.kernel_size],
                Init::FanIn(cfg.kernel_size),
            ),
            bias: b.bias("embed.bias", cfg.kernel_size, cfg.conv_kernels),
            weight: b.weight("embed.weight", cfg.conv_kernels * cfg.series_len, l),
        };
        let levels = (1..=cfg.levels)
            .map(|i| {
                let p = format!("level{i}");
                let sfe = cfg.use_sfe.then(|| SfeLayout {
                    norm_attn: norm(&mut b, &format!("{p}.sfe.norm_attn"), n),
                    query: linear(&mut b, &format!("{p}.sfe.query"), n, n, true),
                    key: linear(&mut b, &format!("{p}.sfe.key"), n, n, true),
                    value: linear(&mut b, &format!("{p}.sfe.value"), n, n, true),
                    output: linear(&mut b, &format!("{p}.sfe.output"), n, n, true),
                    norm_ffn: norm(&mut b, &format!("{p}.sfe.norm_ffn"), n),
                    ffn_in: linear(&mut b, &format!("{p}.sfe.ffn_in"), n, h, true),
                    ffn_out: linear(&mut b, &format!("{p}.sfe.ffn_out"), h, n, true),
                    norm_final: norm(&mut b, &format!("{p}.sfe.norm_final"), n),
                });
                let tfe = cfg.use_tfe.then(|| TfeLayout {
                    trend: linear(&mut b, &format!("{p}.tfe.trend"), l, l, false),
                    seasonal: linear(&mut b, &format!("{p}.tfe.seasonal"), l, l, false),
                    mlp_in: linear(&mut b, &format!("{p}.tfe.mlp_in"), l, l, true),
                    mlp_out: linear(&mut b, &format!("{p}.tfe.mlp_out"), l, l, true),
                    norm: norm(&mut b, &format!("{p}.tfe.norm"), l),
                });
                LevelLayout {
                    sfe,
                    tfe,
                    fuse_in: linear(&mut b, &format!("{p}.fuse_in"), l, h, true),
                    fuse_out: linear(&mut b, &format!("{p}.fuse_out"), h, l, true),
                }
            })
            .collect();
        let graph_levels = cfg
            .use_pearson_graph
            .then_some(0)
            .into_iter()
            .chain(cfg.used_levels());
        let readout_in = match cfg.readout {
            ReadoutPooling::Mean => cfg.gcn_hidden,
            ReadoutPooling::Flatten => n * cfg.gcn_hidden,
        };
        let gcns = graph_levels
            .map(|level| {
                let p = if level == 0 {
                    "gcn.pearson".to_string()
                } else {
                    format!("gcn.level{level}")
                };
                GcnLayout {
                    graph_level: level,
                    layers: [
                        b.weight(format!("{p}.layer0.weight"), n, cfg.gcn_hidden),
                        b.weight(format!("{p}.layer1.weight"), cfg.gcn_hidden, cfg.gcn_hidden),
                    ],
                    readout: linear(&mut b, &format!("{p}.readout"), readout_in, cfg.readout_dim, true),
                }
            })
            .collect::<Vec<_>>();
        let concat = gcns.len() * cfg.readout_dim;
        let head_in = linear(&mut b, "head.hidden", concat, h, true);
        let head_out = linear(&mut b, "head.output", h, cfg.classes, true);
        Self {
            specs: b.specs,
            embed,
            levels,
            gcns,
            head_in,
            head_out,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.specs.iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }
}
