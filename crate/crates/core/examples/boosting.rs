// Gradient boosting of the GPD scale and shape on exceedances whose scale
// depends on the first covariate.

use gbex::boost::{fit_gbex, GbexHyperParams};
use gbex::gpd::{self, Exceedance, GpdParams};
use gbex::rng::stream;
use ndarray::{array, Array2};
use rand::Rng as _;

pub fn run_example() -> gbex::Result<()> {
    let mut r = stream(4, &[]);
    let x = Array2::<f64>::from_shape_fn((1500, 3), |_| r.gen_range(-1.0..1.0));
    let z = x
        .rows()
        .into_iter()
        .map(|row| {
            let p = GpdParams::new(if row[0] > 0.0 { 2.0 } else { 1.0 }, 0.2)?;
            Exceedance::new(gpd::gpd_quantile(r.gen(), p)?)
        })
        .collect::<gbex::Result<Vec<_>>>()?;

    let h = GbexHyperParams { n_trees: 300, lambda_scale: 0.02, ..Default::default() }.with_depths(1, 0);
    let m = fit_gbex(x.view(), &z, &h, None)?;
    let dev = m.train_deviance();
    println!("training deviance: {:.1} at B = 0, {:.1} at B = {}", dev[0], dev[h.n_trees], h.n_trees);
    for p in [array![-0.5, 0.0, 0.0], array![0.5, 0.0, 0.0]] {
        let fit = m.predict_params(p.view(), None);
        println!("x1 = {:+}: sigma {:.3}, gamma {:.3}", p[0], fit.sigma, fit.gamma);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> gbex::Result<()> {
    run_example()
}
