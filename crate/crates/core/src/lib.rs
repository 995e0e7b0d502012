//! Multiple quantile graphical models: sparse, nonparametric conditional
//! dependence graphs learned by penalized multiple-quantile regression of each
//! variable on basis expansions of the others.

pub mod cli;
pub mod error;
pub mod evalsuite;
pub mod features;
pub mod gibbs;
pub mod io;
pub mod linalg;
pub mod model;
pub mod proxops;
pub mod solver;
pub mod stats;
pub mod synthdata;

pub use error::{MqgmError, Result};
pub use features::{expand, expand_point, fit_basis, fit_linear_basis, BasisKind, BasisSpec, Dataset, FeatureMatrix};
pub use gibbs::{gibbs_sample, GibbsConfig};
pub use model::{EdgeSet, MqgmModel, MODEL_FORMAT};
pub use proxops::QuantileGrid;
pub use solver::{fit_mqgm, fit_mqgm_path, fit_neighborhood, lambda_max, NeighborhoodFit, SolverConfig};
pub use synthdata::{GeneratorDescriptor, RingParams, SyntheticInstance};
