use std::sync::OnceLock;

use gbex::boost::{fit_gbex, GbexHyperParams};
use gbex::forest::ForestConfig;
use gbex::pipeline::{fit_extreme_model, fit_threshold_stage, ExtremeModel};
use gbex::rng::stream;
use gbex::sim::{halton_points, SimModel};
use gbex::tuning::{cv_deviance, CvSettings};
use gbex::Error;
use ndarray::{Array1, Array2};
use rand::Rng as _;

const SEED: u64 = 42;

/// Model 1 pipeline with default settings and cross-validated tree count.
fn model1() -> &'static ExtremeModel {
    static M: OnceLock<ExtremeModel> = OnceLock::new();
    M.get_or_init(|| {
        let data = SimModel::Model1.generate(2000, SEED);
        let forest = ForestConfig { seed: SEED, ..Default::default() };
        let (f, z) = fit_threshold_stage(data.x.view(), &data.y, 0.8, &forest).unwrap();
        let h = GbexHyperParams { seed: SEED, ..Default::default() };
        let cv = CvSettings { seed: SEED, ..Default::default() };
        let b = cv_deviance(data.x.view(), &z, &h, &cv).unwrap().selected_b;
        let g = fit_gbex(data.x.view(), &z, &GbexHyperParams { n_trees: b, ..h }, None).unwrap();
        ExtremeModel::from_parts(f, g, 0.8).unwrap()
    })
}

fn uniform_points(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut r = stream(seed, &[]);
    Array2::from_shape_fn((n, d), |_| r.gen_range(-1.0..1.0))
}

#[test]
fn positive_count_without_signal() {
    let mut r = stream(7, &[]);
    let x = Array2::<f64>::from_shape_fn((2000, 3), |_| r.gen_range(-1.0..1.0));
    let y: Vec<f64> = (0..2000).map(|_| -(1.0 - r.gen::<f64>()).ln()).collect();
    let (_, z) = fit_threshold_stage(x.view(), &y, 0.8, &ForestConfig::default()).unwrap();
    let pos = z.iter().filter(|z| z.is_positive()).count();
    assert!((320..=480).contains(&pos), "{pos} positive exceedances");
}

#[test]
fn mean_shape_is_near_a_quarter() {
    let m = model1();
    let pts = halton_points(1000, 40);
    let mean = pts.rows().into_iter().map(|p| m.gbex().predict_params(p, None).gamma).sum::<f64>() / 1000.0;
    assert!((0.10..=0.40).contains(&mean), "mean shape {mean}");
}

#[test]
fn scale_step_doubles_the_quantile() {
    let m = model1();
    let pts = halton_points(1000, 40);
    let (mut hi, mut lo) = (Vec::new(), Vec::new());
    for p in pts.rows() {
        let q = m.predict_extreme_quantile(p, 0.995).unwrap();
        if p[0] > 0.0 { hi.push(q) } else { lo.push(q) }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ratio = mean(&hi) / mean(&lo);
    assert!((1.4..=2.6).contains(&ratio), "ratio {ratio}");
}

#[test]
fn monotone_in_tau_and_consistent_at_tau0() {
    let m = model1();
    let taus = [0.8, 0.9, 0.99, 0.995, 0.9995];
    for p in uniform_points(100, 40, 8).rows() {
        let q = m.predict_extreme_quantiles(p, &taus).unwrap();
        assert!(q.windows(2).all(|w| w[0] <= w[1]), "{q:?}");
        assert_eq!(q[0], m.forest().predict_quantile(p, 0.8).unwrap());
        assert_eq!(q[0], m.threshold(p).unwrap());
    }
}

#[test]
fn rejects_tau_below_tau0() {
    let m = model1();
    let p = Array1::zeros(40);
    let e = m.predict_extreme_quantile(p.view(), 0.5).unwrap_err();
    assert!(matches!(e, Error::Domain(_)));
    assert!(e.to_string().contains("tau below tau0"));
}

#[test]
fn refit_is_deterministic_and_extreme_tau0_fails() {
    let data = SimModel::Model1.generate(600, 3);
    let forest = ForestConfig { n_trees: 100, seed: 1, ..Default::default() };
    let h = GbexHyperParams { n_trees: 30, seed: 2, ..Default::default() };
    let a = fit_extreme_model(data.x.view(), &data.y, 0.8, &forest, &h).unwrap();
    let b = fit_extreme_model(data.x.view(), &data.y, 0.8, &forest, &h).unwrap();
    for p in uniform_points(50, 40, 4).rows() {
        assert_eq!(
            a.predict_extreme_quantile(p, 0.999).unwrap().to_bits(),
            b.predict_extreme_quantile(p, 0.999).unwrap().to_bits()
        );
    }
    let big = SimModel::Model1.generate(2000, 3);
    let e = fit_extreme_model(big.x.view(), &big.y, 0.999, &forest, &h).unwrap_err();
    assert!(matches!(e, Error::InsufficientData(_)), "{e}");
}
