//! End-to-end extreme quantile regression: forest threshold, out-of-bag
//! exceedances, GPD boosting on the positive exceedances and GPD
//! extrapolation above the threshold.

use ndarray::{ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boost::{fit_gbex, GbexHyperParams, GbexModel};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, ForestConfig, QuantileForest};
use crate::gpd::{self, Exceedance, GpdParams};

pub const DEFAULT_TAU0: f64 = 0.8;

/// Exceedances of each training response over its out-of-bag forest quantile.
pub fn compute_exceedances(forest: &QuantileForest, y: &[f64], tau0: f64) -> Result<Vec<Exceedance>> {
    if y.len() != forest.n_obs() {
        return Err(Error::domain("responses do not match the forest's training sample"));
    }
    (0..y.len())
        .into_par_iter()
        .map(|i| Ok(Exceedance::over(y[i], forest.oob_quantile(i, tau0)?)))
        .collect()
}

fn check_tau0(tau0: f64) -> Result<()> {
    if tau0 > 0.0 && tau0 < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("tau0 must lie strictly between 0 and 1, got {tau0}")))
    }
}

/// Forest fit plus out-of-bag exceedances: the first two steps of the pipeline.
pub fn fit_threshold_stage(
    x: ArrayView2<f64>,
    y: &[f64],
    tau0: f64,
    forest_cfg: &ForestConfig,
) -> Result<(QuantileForest, Vec<Exceedance>)> {
    check_tau0(tau0)?;
    let forest = fit_forest(x, y, forest_cfg)?;
    let z = compute_exceedances(&forest, y, tau0)?;
    Ok((forest, z))
}

/// Conditional tail model at one covariate value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailModel {
    pub threshold: f64,
    pub params: GpdParams,
    pub tau0: f64,
}

impl TailModel {
    pub fn quantile(&self, tau: f64) -> Result<f64> {
        gpd::extreme_quantile(self.threshold, self.params, self.tau0, tau)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtremeModel {
    forest: QuantileForest,
    gbex: GbexModel,
    tau0: f64,
}

impl ExtremeModel {
    pub fn from_parts(forest: QuantileForest, gbex: GbexModel, tau0: f64) -> Result<Self> {
        check_tau0(tau0)?;
        if forest.n_features() != gbex.n_features() {
            return Err(Error::domain("forest and boosting model disagree on covariate dimension"));
        }
        Ok(ExtremeModel { forest, gbex, tau0 })
    }

    pub fn forest(&self) -> &QuantileForest {
        &self.forest
    }

    pub fn gbex(&self) -> &GbexModel {
        &self.gbex
    }

    pub fn tau0(&self) -> f64 {
        self.tau0
    }

    pub fn n_features(&self) -> usize {
        self.gbex.n_features()
    }

    /// Intermediate quantile from full-forest weights.
    pub fn threshold(&self, x: ArrayView1<f64>) -> Result<f64> {
        self.forest.predict_quantile(x, self.tau0)
    }

    pub fn tail_model(&self, x: ArrayView1<f64>) -> Result<TailModel> {
        Ok(TailModel {
            threshold: self.threshold(x)?,
            params: self.gbex.predict_params(x, None),
            tau0: self.tau0,
        })
    }

    pub fn predict_extreme_quantile(&self, x: ArrayView1<f64>, tau: f64) -> Result<f64> {
        if tau < self.tau0 {
            return Err(Error::domain(format!("tau below tau0 ({tau} < {})", self.tau0)));
        }
        self.tail_model(x)?.quantile(tau)
    }

    /// Extreme quantiles at several levels, sharing one threshold evaluation.
    pub fn predict_extreme_quantiles(&self, x: ArrayView1<f64>, taus: &[f64]) -> Result<Vec<f64>> {
        let tail = self.tail_model(x)?;
        taus.iter().map(|&t| tail.quantile(t)).collect()
    }
}

/// Fits the whole pipeline with a fixed number of boosting iterations.
pub fn fit_extreme_model(
    x: ArrayView2<f64>,
    y: &[f64],
    tau0: f64,
    forest_cfg: &ForestConfig,
    gbex_cfg: &GbexHyperParams,
) -> Result<ExtremeModel> {
    let (forest, z) = fit_threshold_stage(x, y, tau0, forest_cfg)?;
    let gbex = fit_gbex(x, &z, gbex_cfg, None)?;
    ExtremeModel::from_parts(forest, gbex, tau0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::Array2;
    use rand::Rng as _;

    fn exp_data(n: usize, seed: u64) -> (Array2<f64>, Vec<f64>) {
        let mut r = stream(seed, &[]);
        let x = Array2::from_shape_fn((n, 2), |_| r.gen_range(-1.0..1.0));
        let y = (0..n).map(|_| -(1.0 - r.gen::<f64>()).ln()).collect();
        (x, y)
    }

    fn small_forest() -> ForestConfig {
        ForestConfig {
            n_trees: 100,
            ..Default::default()
        }
    }

    #[test]
    fn constant_response_has_no_exceedances() {
        let (x, _) = exp_data(100, 1);
        let y = vec![3.0; 100];
        let (_, z) = fit_threshold_stage(x.view(), &y, 0.8, &small_forest()).unwrap();
        assert!(z.iter().all(|z| !z.is_positive()));
    }

    #[test]
    fn below_threshold_rows_have_zero_exceedance() {
        let (x, y) = exp_data(300, 2);
        let (forest, z) = fit_threshold_stage(x.view(), &y, 0.8, &small_forest()).unwrap();
        for i in 0..300 {
            let q = forest.oob_quantile(i, 0.8).unwrap();
            if y[i] <= q {
                assert_eq!(z[i].value(), 0.0);
            } else {
                assert_eq!(z[i].value(), y[i] - q);
            }
        }
    }

    #[test]
    fn high_tau0_starves_the_boosting_stage() {
        let (x, y) = exp_data(2000, 3);
        let err = fit_extreme_model(x.view(), &y, 0.999, &small_forest(), &GbexHyperParams::default());
        assert!(matches!(err, Err(Error::InsufficientData(_))), "{err:?}");
    }

    #[test]
    fn tau_below_tau0_is_rejected() {
        let (x, y) = exp_data(400, 4);
        let h = GbexHyperParams {
            n_trees: 10,
            ..Default::default()
        };
        let m = fit_extreme_model(x.view(), &y, 0.8, &small_forest(), &h).unwrap();
        assert!(matches!(m.predict_extreme_quantile(x.row(0), 0.5), Err(Error::Domain(_))));
        let q0 = m.threshold(x.row(0)).unwrap();
        assert_eq!(m.predict_extreme_quantile(x.row(0), 0.8).unwrap(), q0);
    }
}
