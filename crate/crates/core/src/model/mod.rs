//! The network: embedding, STFE hierarchy, graph generation, GCN encoders, and head.

mod checkpoint;
mod config;
mod connectome;
mod layout;
mod network;
mod params;

pub use checkpoint::{from_checkpoint_str, load_checkpoint, save_checkpoint, to_checkpoint_string};
pub use config::{ModelConfig, ReadoutPooling};
pub use connectome::pearson_connectome;
pub use network::{positional_encoding, ForwardVars, LevelOutputs, Model, Pass};
pub use params::ModelParams;
