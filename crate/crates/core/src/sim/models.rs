//! Heavy-tailed regression models with known conditional quantiles.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView1};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::special::t_quantile;
use crate::boost::GbexHyperParams;
use crate::error::{Error, Result};
use crate::rng;

/// Correlation of the bivariate normal density driving the Model 2 scale.
pub const MODEL2_RHO: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimModel {
    /// `d = 40`, scale `1 + 1{x1 > 0}`, Student-t with 4 degrees of freedom.
    Model1,
    /// `d = 10`, scale `1 + 6 phi(x1, x2)`, degrees of freedom decreasing in `x1`.
    Model2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimData {
    pub x: Array2<f64>,
    pub y: Vec<f64>,
}

/// Bivariate standard normal density with correlation `rho`.
pub fn bivariate_normal_density(x1: f64, x2: f64, rho: f64) -> f64 {
    let det = 1.0 - rho * rho;
    (-(x1 * x1 - 2.0 * rho * x1 * x2 + x2 * x2) / (2.0 * det)).exp() / (2.0 * PI * det.sqrt())
}

impl SimModel {
    pub fn from_id(id: u32) -> Result<Self> {
        match id {
            1 => Ok(SimModel::Model1),
            2 => Ok(SimModel::Model2),
            _ => Err(Error::Config(format!("unknown simulation model {id}, expected 1 or 2"))),
        }
    }

    pub fn id(self) -> u32 {
        match self {
            SimModel::Model1 => 1,
            SimModel::Model2 => 2,
        }
    }

    pub fn dim(self) -> usize {
        match self {
            SimModel::Model1 => 40,
            SimModel::Model2 => 10,
        }
    }

    /// Customary sample size for this model.
    pub fn default_n(self) -> usize {
        match self {
            SimModel::Model1 => 2000,
            SimModel::Model2 => 5000,
        }
    }

    pub fn scale(self, x: ArrayView1<f64>) -> f64 {
        match self {
            SimModel::Model1 => 1.0 + f64::from(x[0] > 0.0),
            SimModel::Model2 => 1.0 + 6.0 * bivariate_normal_density(x[0], x[1], MODEL2_RHO),
        }
    }

    pub fn df(self, x: ArrayView1<f64>) -> f64 {
        match self {
            SimModel::Model1 => 4.0,
            SimModel::Model2 => 7.0 / (1.0 + (4.0 * x[0] + 1.2).exp()) + 3.0,
        }
    }

    /// Tail index of the response given `x`.
    pub fn true_shape(self, x: ArrayView1<f64>) -> f64 {
        1.0 / self.df(x)
    }

    /// Conditional `tau`-quantile of the response.
    pub fn truth(self, x: ArrayView1<f64>, tau: f64) -> f64 {
        self.scale(x) * t_quantile(tau, self.df(x))
    }

    /// `n` draws with covariates uniform on `[-1, 1]^d`.
    pub fn generate(self, n: usize, seed: u64) -> SimData {
        let d = self.dim();
        let mut rx = rng::stream(seed, &[0]);
        let x = Array2::from_shape_fn((n, d), |_| rx.gen_range(-1.0..1.0));
        let mut rt = rng::stream(seed, &[1]);
        let y = x
            .rows()
            .into_iter()
            .map(|row| {
                let u: f64 = rt.gen();
                // gen() lies in [0, 1); 0 maps to an infinite quantile.
                let u = if u == 0.0 { f64::MIN_POSITIVE } else { u };
                self.scale(row) * t_quantile(u, self.df(row))
            })
            .collect();
        SimData { x, y }
    }

    /// Boosting settings used for this model in the simulation study.
    pub fn study_hyper(self) -> GbexHyperParams {
        let base = GbexHyperParams {
            lambda_scale: 0.01,
            subsample: 0.75,
            ..GbexHyperParams::default()
        };
        match self {
            SimModel::Model1 => GbexHyperParams {
                lambda_ratio: 15.0,
                ..base
            }
            .with_depths(1, 1),
            SimModel::Model2 => GbexHyperParams {
                lambda_ratio: 7.0,
                ..base
            }
            .with_depths(3, 1),
        }
    }
}
