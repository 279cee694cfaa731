// The full two-stage model: a forest threshold at level tau0 followed by a
// boosted GPD tail for levels above it.

use gbex::boost::GbexHyperParams;
use gbex::forest::ForestConfig;
use gbex::pipeline::fit_extreme_model;
use gbex::sim::SimModel;
use ndarray::Array1;

pub fn run_example() -> gbex::Result<()> {
    let model = SimModel::Model1;
    let data = model.generate(2000, 5);
    let forest = ForestConfig { n_trees: 300, seed: 5, ..Default::default() };
    let h = GbexHyperParams { n_trees: 150, ..model.study_hyper() };
    let m = fit_extreme_model(data.x.view(), &data.y, 0.8, &forest, &h)?;

    let taus = [0.8, 0.99, 0.995, 0.9995];
    let mut x = Array1::<f64>::zeros(model.dim());
    for x1 in [-0.5, 0.5] {
        x[0] = x1;
        let tail = m.tail_model(x.view())?;
        println!("x1 = {x1:+}: threshold {:.3}, sigma {:.3}, gamma {:.3}", tail.threshold, tail.params.sigma, tail.params.gamma);
        for (tau, q) in taus.iter().zip(m.predict_extreme_quantiles(x.view(), &taus)?) {
            println!("  tau {tau}: {q:.3} (truth {:.3})", model.truth(x.view(), *tau));
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> gbex::Result<()> {
    run_example()
}
