//! Extreme conditional quantile regression.
//!
//! A generalized quantile regression forest estimates a covariate-dependent
//! intermediate threshold; gradient boosting then models the generalized
//! Pareto scale and shape of the exceedances above it, and the fitted tail is
//! extrapolated to quantile levels far beyond the data.
//!
//! ```no_run
//! use gbex::{fit_extreme_model, sim::SimModel, ForestConfig, GbexHyperParams};
//!
//! let data = SimModel::Model1.generate(2000, 7);
//! let model = fit_extreme_model(
//!     data.x.view(),
//!     &data.y,
//!     0.8,
//!     &ForestConfig::default(),
//!     &GbexHyperParams::default(),
//! )
//! .unwrap();
//! let q = model.predict_extreme_quantile(data.x.row(0), 0.995).unwrap();
//! ```

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boost;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod forest;
pub mod gpd;
pub mod io;
pub mod pipeline;
pub mod rng;
pub mod sim;
pub mod tree;
pub mod tuning;

pub use boost::{fit_gbex, GbexHyperParams, GbexModel};
pub use error::{Error, Result};
pub use forest::{fit_forest, weighted_quantile, ForestConfig, QuantileForest};
pub use gpd::{Exceedance, GpdParams};
pub use pipeline::{compute_exceedances, fit_extreme_model, ExtremeModel};
pub use tree::{RegressionTree, Tree};
pub use tuning::{cv_deviance, select_depths, CvCurve, CvSettings};
