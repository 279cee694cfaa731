use gbex::boost::{fit_gbex, GbexHyperParams};
use gbex::forest::ForestConfig;
use gbex::gpd::{self, Exceedance, GpdParams};
use gbex::pipeline::fit_threshold_stage;
use gbex::rng::stream;
use gbex::sim::SimModel;
use gbex::tuning::{cv_deviance, CvSettings};
use ndarray::Array2;
use rand::Rng as _;

fn heteroscedastic(n: usize, seed: u64) -> (Array2<f64>, Vec<Exceedance>) {
    let mut r = stream(seed, &[]);
    let x = Array2::<f64>::from_shape_fn((n, 3), |_| r.gen_range(-1.0..1.0));
    let z = (0..n)
        .map(|i| {
            let p = GpdParams::new((1.0f64 + x[[i, 0]]).exp(), 0.2 + 0.1 * x[[i, 1]]).unwrap();
            Exceedance::new(gpd::gpd_quantile(r.gen(), p).unwrap()).unwrap()
        })
        .collect();
    (x, z)
}

#[test]
fn staged_predictions_decompose_and_respect_learning_rates() {
    let (x, z) = heteroscedastic(600, 1);
    let h = GbexHyperParams {
        n_trees: 80,
        lambda_scale: 0.1,
        lambda_ratio: 4.0,
        ..GbexHyperParams::default()
    }
    .with_depths(3, 2);
    let m = fit_gbex(x.view(), &z, &h, None).unwrap();
    let mut r = stream(2, &[]);
    for _ in 0..100 {
        let p = ndarray::Array1::from_shape_fn(3, |_| r.gen_range(-1.2..1.2));
        let staged = m.staged_raw(p.view());
        assert_eq!(staged.len(), 81);
        for b in 0..=80 {
            let s = m.theta0().sigma + m.lambda_sigma() * (0..b).map(|k| m.trees_sigma()[k].predict(p.view())).sum::<f64>();
            let g = m.theta0().gamma + m.lambda_gamma() * (0..b).map(|k| m.trees_gamma()[k].predict(p.view())).sum::<f64>();
            assert!((staged[b].0 - s).abs() <= 1e-12 && (staged[b].1 - g).abs() <= 1e-12);
            assert_eq!(m.predict_raw(p.view(), Some(b)), staged[b]);
            if b > 0 {
                assert!((staged[b].0 - staged[b - 1].0).abs() <= m.lambda_sigma() * (1.0 + 1e-12));
                assert!((staged[b].1 - staged[b - 1].1).abs() <= m.lambda_gamma() * (1.0 + 1e-12));
            }
        }
    }
}

#[test]
fn refits_are_bit_identical() {
    let (x, z) = heteroscedastic(300, 3);
    let h = GbexHyperParams {
        n_trees: 40,
        seed: 5,
        ..GbexHyperParams::default()
    };
    let a = fit_gbex(x.view(), &z, &h, None).unwrap();
    let b = fit_gbex(x.view(), &z, &h, None).unwrap();
    assert_eq!(a, b);
    let c = fit_gbex(x.view(), &z, &GbexHyperParams { seed: 6, ..h }, None).unwrap();
    assert_ne!(a, c);
}

#[test]
fn zero_exceedances_are_ignored() {
    let (x, mut z) = heteroscedastic(300, 4);
    let h = GbexHyperParams {
        n_trees: 20,
        ..GbexHyperParams::default()
    };
    let base = fit_gbex(x.view(), &z, &h, None).unwrap();
    // Appending rows with zero exceedance leaves the positive set unchanged.
    let mut rows: Vec<f64> = x.iter().copied().collect();
    rows.extend([0.3, -0.2, 0.9, -0.7, 0.1, 0.4]);
    z.extend([Exceedance::new(0.0).unwrap(); 2]);
    let x2 = Array2::from_shape_vec((302, 3), rows).unwrap();
    let more = fit_gbex(x2.view(), &z, &h, None).unwrap();
    assert_eq!(base.trees_sigma(), more.trees_sigma());
    assert_eq!(base.theta0(), more.theta0());
}

#[test]
fn cross_validated_fits_improve_training_deviance() {
    for seed in 0..10 {
        let data = SimModel::Model1.generate(2000, 100 + seed);
        let forest = ForestConfig {
            n_trees: 200,
            seed,
            ..ForestConfig::default()
        };
        let (_, z) = fit_threshold_stage(data.x.view(), &data.y, 0.8, &forest).unwrap();
        let h = GbexHyperParams {
            subsample: 1.0,
            seed,
            ..GbexHyperParams::default()
        };
        let cv = CvSettings {
            repeats: 1,
            b_max: 300,
            seed,
            ..CvSettings::default()
        };
        let b = cv_deviance(data.x.view(), &z, &h, &cv).unwrap().selected_b;
        let m = fit_gbex(data.x.view(), &z, &GbexHyperParams { n_trees: b, ..h }, None).unwrap();
        let dev = m.train_deviance();
        assert!(b > 0, "seed {seed}: cross-validation kept the constant model");
        assert!(dev[b] < dev[0], "seed {seed}: {} vs {}", dev[b], dev[0]);
    }
}
