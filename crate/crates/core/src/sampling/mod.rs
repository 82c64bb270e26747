//! Spatio-temporal samples: context windows, grid graphs, labels and splits.

pub mod extract;
pub mod graph;
pub mod split;

pub use extract::{extract_sample, Batch, PreparedCube, Sample, SampleSpec};
pub use graph::{build_grid_graph, nearest_vertices, normalize_adjacency, GridGraph};
pub use split::{
    candidates, enumerate_samples, write_sample_csv, NegativePolicy, SampleRef, SampleSets, Split, SplitSpec, TrainPool,
};
