//! Synthetic data generation: steady-state heat on rectangles and a damped
//! graph-Helmholtz source problem, plus the dataset container.

pub mod dataset;
pub mod heat;
pub mod helmholtz;

pub use dataset::{
    read_dataset, sample_heat_dataset, sample_helmholtz_dataset, write_dataset, Dataset, HelmholtzDatasetConfig,
    Normalization, Sample,
};
pub use heat::{solve_heat, HeatProblemSpec};
pub use helmholtz::{solve_graph_helmholtz, HelmholtzProblemSpec};
