//! Gradient boosting of GPD parameters on threshold exceedances.
//!
//! Two tree sequences are grown in lockstep, one for the scale σ and one for
//! the shape γ. At every iteration both are fitted to the deviance gradients
//! evaluated at the previous stage on a fresh row subsample, with truncated
//! Newton steps as leaf values, and added with their own learning rates:
//!
//! ```text
//! θ_b(x) = θ_0 + λ · Σ_{b' ≤ b} T_{b'}(x)
//! ```

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpd::{self, Exceedance, GpdParams};
use crate::rng;
use crate::tree::{self, RegressionTree};

/// Fewest positive exceedances a boosting fit accepts.
pub const MIN_POSITIVE_EXCEEDANCES: usize = 20;

/// Ratio between the scale floor and the initial scale.
pub const SIGMA_FLOOR_RATIO: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbexHyperParams {
    pub n_trees: usize,
    pub depth_sigma: usize,
    pub depth_gamma: usize,
    /// Learning rate of the scale sequence.
    pub lambda_scale: f64,
    /// Scale learning rate divided by the shape learning rate.
    pub lambda_ratio: f64,
    /// Fraction of positive exceedances drawn (without replacement) per iteration.
    pub subsample: f64,
    /// `None` resolves to `max(10, n / 100)` for `n` positive exceedances.
    pub min_leaf_sigma: Option<usize>,
    pub min_leaf_gamma: Option<usize>,
    pub seed: u64,
}

impl Default for GbexHyperParams {
    fn default() -> Self {
        GbexHyperParams {
            n_trees: 200,
            depth_sigma: 2,
            depth_gamma: 1,
            lambda_scale: 0.01,
            lambda_ratio: 7.0,
            subsample: 0.75,
            min_leaf_sigma: None,
            min_leaf_gamma: None,
            seed: 0,
        }
    }
}

impl GbexHyperParams {
    pub fn lambda_sigma(&self) -> f64 {
        self.lambda_scale
    }

    pub fn lambda_gamma(&self) -> f64 {
        self.lambda_scale / self.lambda_ratio
    }

    pub fn default_min_leaf(n: usize) -> usize {
        (n / 100).max(10)
    }

    pub fn min_leaves(&self, n: usize) -> (usize, usize) {
        let default = Self::default_min_leaf(n);
        (
            self.min_leaf_sigma.unwrap_or(default),
            self.min_leaf_gamma.unwrap_or(default),
        )
    }

    pub fn with_depths(mut self, depth_sigma: usize, depth_gamma: usize) -> Self {
        self.depth_sigma = depth_sigma;
        self.depth_gamma = depth_gamma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !in_unit(self.lambda_sigma()) || !(self.lambda_ratio > 0.0) || !in_unit(self.lambda_gamma()) {
            return Err(Error::Config(format!(
                "learning rates must lie in (0, 1): lambda_scale = {}, lambda_ratio = {}",
                self.lambda_scale, self.lambda_ratio
            )));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::Config(format!("subsample must lie in (0, 1], got {}", self.subsample)));
        }
        if self.min_leaf_sigma == Some(0) || self.min_leaf_gamma == Some(0) {
            return Err(Error::Config("minimum leaf sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Fitted boosting model for conditional GPD parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbexModel {
    theta0: GpdParams,
    trees_sigma: Vec<RegressionTree>,
    trees_gamma: Vec<RegressionTree>,
    lambda_sigma: f64,
    lambda_gamma: f64,
    sigma_floor: f64,
    n_features: usize,
    hyper: GbexHyperParams,
    /// Training deviance over positive exceedances after each stage `0..=B`.
    train_deviance: Vec<f64>,
}

impl GbexModel {
    /// Assembles a model from given trees, e.g. to evaluate hand-built sequences.
    pub fn from_trees(
        theta0: GpdParams,
        trees_sigma: Vec<RegressionTree>,
        trees_gamma: Vec<RegressionTree>,
        lambda_sigma: f64,
        lambda_gamma: f64,
        n_features: usize,
    ) -> Result<Self> {
        if trees_sigma.len() != trees_gamma.len() {
            return Err(Error::domain("scale and shape tree sequences differ in length"));
        }
        let hyper = GbexHyperParams {
            n_trees: trees_sigma.len(),
            lambda_scale: lambda_sigma,
            lambda_ratio: lambda_sigma / lambda_gamma,
            ..GbexHyperParams::default()
        };
        Ok(GbexModel {
            theta0,
            trees_sigma,
            trees_gamma,
            lambda_sigma,
            lambda_gamma,
            sigma_floor: SIGMA_FLOOR_RATIO * theta0.sigma,
            n_features,
            hyper,
            train_deviance: Vec::new(),
        })
    }

    pub fn theta0(&self) -> GpdParams {
        self.theta0
    }

    pub fn n_trees(&self) -> usize {
        self.trees_sigma.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn trees_sigma(&self) -> &[RegressionTree] {
        &self.trees_sigma
    }

    pub fn trees_gamma(&self) -> &[RegressionTree] {
        &self.trees_gamma
    }

    pub fn lambda_sigma(&self) -> f64 {
        self.lambda_sigma
    }

    pub fn lambda_gamma(&self) -> f64 {
        self.lambda_gamma
    }

    pub fn sigma_floor(&self) -> f64 {
        self.sigma_floor
    }

    pub fn hyper(&self) -> &GbexHyperParams {
        &self.hyper
    }

    pub fn train_deviance(&self) -> &[f64] {
        &self.train_deviance
    }

    /// Additive model output `(θ^σ, θ^γ)` after `stage` trees (default all),
    /// without the scale floor.
    pub fn predict_raw(&self, x: ArrayView1<f64>, stage: Option<usize>) -> (f64, f64) {
        let b = stage.unwrap_or(self.n_trees()).min(self.n_trees());
        let sum_s: f64 = self.trees_sigma[..b].iter().map(|t| t.predict(x)).sum();
        let sum_g: f64 = self.trees_gamma[..b].iter().map(|t| t.predict(x)).sum();
        self.combine(sum_s, sum_g)
    }

    fn combine(&self, sum_sigma: f64, sum_gamma: f64) -> (f64, f64) {
        (
            self.theta0.sigma + self.lambda_sigma * sum_sigma,
            self.theta0.gamma + self.lambda_gamma * sum_gamma,
        )
    }

    fn floored(&self, raw: (f64, f64)) -> GpdParams {
        GpdParams {
            sigma: raw.0.max(self.sigma_floor),
            gamma: raw.1,
        }
    }

    /// GPD parameters at `x` after `stage` trees, with σ floored.
    pub fn predict_params(&self, x: ArrayView1<f64>, stage: Option<usize>) -> GpdParams {
        self.floored(self.predict_raw(x, stage))
    }

    /// Raw parameter paths at `x` for every stage `0..=B`.
    pub fn staged_raw(&self, x: ArrayView1<f64>) -> Vec<(f64, f64)> {
        let mut sums = (0.0, 0.0);
        let mut out = Vec::with_capacity(self.n_trees() + 1);
        out.push(self.combine(0.0, 0.0));
        for (ts, tg) in self.trees_sigma.iter().zip(&self.trees_gamma) {
            sums.0 += ts.predict(x);
            sums.1 += tg.predict(x);
            out.push(self.combine(sums.0, sums.1));
        }
        out
    }

    /// Summed deviance of `z` at every stage `0..=B`, in one pass over the trees.
    pub fn staged_deviance(&self, x: ArrayView2<f64>, z: &[Exceedance]) -> Vec<f64> {
        let mut dev = vec![0.0; self.n_trees() + 1];
        for (row, &zi) in x.axis_iter(Axis(0)).zip(z) {
            if !zi.is_positive() {
                continue;
            }
            let mut sums = (0.0, 0.0);
            dev[0] += gpd::deviance(zi, self.floored(self.combine(0.0, 0.0)));
            for (b, (ts, tg)) in self.trees_sigma.iter().zip(&self.trees_gamma).enumerate() {
                sums.0 += ts.predict(row);
                sums.1 += tg.predict(row);
                dev[b + 1] += gpd::deviance(zi, self.floored(self.combine(sums.0, sums.1)));
            }
        }
        dev
    }

    /// Summed deviance of `z` under the full model.
    pub fn deviance(&self, x: ArrayView2<f64>, z: &[Exceedance]) -> f64 {
        x.axis_iter(Axis(0))
            .zip(z)
            .filter(|(_, zi)| zi.is_positive())
            .map(|(row, &zi)| gpd::deviance(zi, self.predict_params(row, None)))
            .sum()
    }
}

/// Fits the two boosting sequences on the rows with positive exceedances.
///
/// `theta0` defaults to the unconditional GPD maximum-likelihood fit.
pub fn fit_gbex(
    x: ArrayView2<f64>,
    z: &[Exceedance],
    h: &GbexHyperParams,
    theta0: Option<GpdParams>,
) -> Result<GbexModel> {
    h.validate()?;
    if x.nrows() != z.len() {
        return Err(Error::domain(format!(
            "{} covariate rows but {} exceedances",
            x.nrows(),
            z.len()
        )));
    }
    let positive: Vec<usize> = (0..z.len()).filter(|&i| z[i].is_positive()).collect();
    let n = positive.len();
    if n < MIN_POSITIVE_EXCEEDANCES {
        return Err(Error::InsufficientData(format!(
            "boosting needs at least {MIN_POSITIVE_EXCEEDANCES} positive exceedances, got {n}"
        )));
    }
    let xp: Array2<f64> = x.select(Axis(0), &positive);
    let zp: Vec<Exceedance> = positive.iter().map(|&i| z[i]).collect();

    let theta0 = match theta0 {
        Some(t) => t,
        None => gpd::fit_unconditional_mle(&zp)?,
    };
    let (min_leaf_sigma, min_leaf_gamma) = h.min_leaves(n);
    let sample_size = ((h.subsample * n as f64).floor() as usize).clamp(1, n);
    let d = x.ncols();

    let mut model = GbexModel {
        theta0,
        trees_sigma: Vec::with_capacity(h.n_trees),
        trees_gamma: Vec::with_capacity(h.n_trees),
        lambda_sigma: h.lambda_sigma(),
        lambda_gamma: h.lambda_gamma(),
        sigma_floor: SIGMA_FLOOR_RATIO * theta0.sigma,
        n_features: d,
        hyper: h.clone(),
        train_deviance: Vec::with_capacity(h.n_trees + 1),
    };

    // Running tree sums per positive row; parameters are θ0 + λ·sum.
    let mut sums = vec![(0.0f64, 0.0f64); n];
    let mut grad_s = vec![0.0; n];
    let mut grad_g = vec![0.0; n];
    let mut hess_s = vec![0.0; n];
    let mut hess_g = vec![0.0; n];

    let stage_deviance = |model: &GbexModel, sums: &[(f64, f64)]| -> f64 {
        zp.iter()
            .zip(sums)
            .map(|(&zi, &(s, g))| gpd::deviance(zi, model.floored(model.combine(s, g))))
            .sum()
    };
    model.train_deviance.push(stage_deviance(&model, &sums));

    for b in 0..h.n_trees {
        let mut rng = rng::stream(h.seed, &[b as u64]);
        let rows: Vec<usize> = if sample_size == n {
            (0..n).collect()
        } else {
            let mut r = index::sample(&mut rng, n, sample_size).into_vec();
            r.sort_unstable();
            r
        };

        for &i in &rows {
            let p = model.floored(model.combine(sums[i].0, sums[i].1));
            let dv = gpd::deviance_derivatives(zp[i], p);
            grad_s[i] = dv.d_sigma;
            grad_g[i] = dv.d_gamma;
            hess_s[i] = dv.d2_sigma;
            hess_g[i] = dv.d2_gamma;
        }

        let tree_sigma = tree::fit_gradient_tree_on_rows(
            xp.view(),
            rows.clone(),
            &grad_s,
            &hess_s,
            h.depth_sigma,
            min_leaf_sigma,
            d,
            &mut rng,
        );
        let tree_gamma = tree::fit_gradient_tree_on_rows(
            xp.view(),
            rows,
            &grad_g,
            &hess_g,
            h.depth_gamma,
            min_leaf_gamma,
            d,
            &mut rng,
        );

        for (i, row) in xp.axis_iter(Axis(0)).enumerate() {
            sums[i].0 += tree_sigma.predict(row);
            sums[i].1 += tree_gamma.predict(row);
        }
        model.trees_sigma.push(tree_sigma);
        model.trees_gamma.push(tree_gamma);
        model.train_deviance.push(stage_deviance(&model, &sums));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::tree::Tree;
    use ndarray::array;
    use rand::Rng as _;

    fn synthetic(n: usize, seed: u64) -> (Array2<f64>, Vec<Exceedance>) {
        let mut r = stream(seed, &[]);
        let x = Array2::from_shape_fn((n, 3), |_| r.gen_range(-1.0..1.0));
        let z = (0..n)
            .map(|i| {
                let sigma = if x[[i, 0]] > 0.0 { 2.0 } else { 1.0 };
                let u: f64 = r.gen();
                let p = GpdParams::new(sigma, 0.2).unwrap();
                Exceedance::new(gpd::gpd_quantile(u, p).unwrap()).unwrap()
            })
            .collect();
        (x, z)
    }

    #[test]
    fn zero_trees_predict_theta0() {
        let (x, z) = synthetic(200, 1);
        let h = GbexHyperParams {
            n_trees: 0,
            ..Default::default()
        };
        let m = fit_gbex(x.view(), &z, &h, None).unwrap();
        let t0 = m.theta0();
        assert_eq!(m.predict_params(x.row(3), None), t0);
        assert_eq!(m.staged_deviance(x.view(), &z).len(), 1);
        let direct = gpd::total_deviance(&z, t0);
        assert!((m.staged_deviance(x.view(), &z)[0] - direct).abs() < 1e-9 * direct.abs());
    }

    #[test]
    fn zero_depth_gives_constant_surfaces() {
        let (x, z) = synthetic(200, 2);
        let h = GbexHyperParams {
            n_trees: 50,
            ..Default::default()
        }
        .with_depths(0, 0);
        let m = fit_gbex(x.view(), &z, &h, None).unwrap();
        let a = m.predict_raw(x.row(0), None);
        assert!(x.axis_iter(Axis(0)).all(|r| m.predict_raw(r, None) == a));
    }

    #[test]
    fn single_known_tree() {
        let t0 = GpdParams::new(1.0, 0.1).unwrap();
        let x = array![[0.0], [1.0]];
        let mut r = stream(0, &[]);
        let ts = tree::fit_gradient_tree(x.view(), &[1.0, -1.0], &[4.0, 4.0], 1, 1, 1, &mut r).unwrap();
        let tg = Tree::constant(0.5);
        let m = GbexModel::from_trees(t0, vec![ts], vec![tg], 0.1, 0.02, 1).unwrap();
        let p = m.predict_params(array![0.0].view(), Some(1));
        assert!((p.sigma - (1.0 + 0.1 * -0.25)).abs() < 1e-15);
        assert!((p.gamma - (0.1 + 0.02 * 0.5)).abs() < 1e-15);
        assert_eq!(m.predict_params(array![0.0].view(), Some(0)), t0);
    }

    #[test]
    fn too_few_exceedances() {
        let (x, mut z) = synthetic(30, 3);
        for zi in z.iter_mut().skip(15) {
            *zi = Exceedance::over(0.0, 1.0);
        }
        assert!(matches!(
            fit_gbex(x.view(), &z, &GbexHyperParams::default(), None),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn bad_learning_rates_rejected() {
        let h = GbexHyperParams {
            lambda_scale: 1.5,
            ..Default::default()
        };
        assert!(h.validate().is_err());
        let h = GbexHyperParams {
            lambda_ratio: 0.001,
            ..Default::default()
        };
        assert!(h.validate().is_err());
    }

    #[test]
    fn staged_deviance_matches_naive_and_training_curve() {
        let (x, z) = synthetic(300, 4);
        let h = GbexHyperParams {
            n_trees: 40,
            subsample: 1.0,
            lambda_scale: 0.05,
            ..Default::default()
        };
        let m = fit_gbex(x.view(), &z, &h, None).unwrap();
        let staged = m.staged_deviance(x.view(), &z);
        for (b, &s) in staged.iter().enumerate() {
            let naive: f64 = x
                .axis_iter(Axis(0))
                .zip(&z)
                .map(|(r, &zi)| gpd::deviance(zi, m.predict_params(r, Some(b))))
                .sum();
            assert!((s - naive).abs() <= 1e-10 * naive.abs().max(1.0), "stage {b}: {s} vs {naive}");
            assert!((s - m.train_deviance()[b]).abs() <= 1e-10 * s.abs().max(1.0));
        }
        assert!(staged[40] < staged[0]);
    }

    #[test]
    fn fits_are_reproducible() {
        let (x, z) = synthetic(200, 5);
        let h = GbexHyperParams {
            n_trees: 20,
            seed: 9,
            ..Default::default()
        };
        let a = fit_gbex(x.view(), &z, &h, None).unwrap();
        let b = fit_gbex(x.view(), &z, &h, None).unwrap();
        assert_eq!(a, b);
    }
}
