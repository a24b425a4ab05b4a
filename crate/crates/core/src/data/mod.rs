//! Dataset files, the synthetic generator, and connectome exports.

mod dataset;
mod graphs;
mod synthetic;

pub use dataset::{
    load_dataset, read_series, save_dataset, write_series, Dataset, DatasetManifest, LoadOptions, ScanRecord,
    ScanSample,
};
pub use graphs::{
    edge_budget, export_edges, export_importance, export_matrix, load_edges, load_matrix, mean_graph,
    node_importance, roi_labels, top_edges, Edge, GraphSelector, EDGE_HEADER, IMPORTANCE_HEADER,
};
pub use synthetic::{
    generate_synthetic, normalized_gram, SyntheticData, SyntheticSpec, GLOBAL_LOADING,
};

#[cfg(test)]
mod tests;
