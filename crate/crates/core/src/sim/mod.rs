//! Simulation study: data generators with analytic conditional quantiles,
//! Halton integration and replicated method comparison.

pub mod bench;
pub mod halton;
pub mod models;
pub mod special;

pub use bench::{
    ise, ise_values, prepare_replication, run_comparison, standard_methods, Comparison, ComparisonConfig, Constant,
    ForestDirect, Gbex, IseResult, Method, Replication,
};
pub use halton::{first_primes, halton, halton_points};
pub use models::{SimData, SimModel};
pub use special::{t_cdf, t_quantile};
