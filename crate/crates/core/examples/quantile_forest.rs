// Conditional quantiles from an honest quantile forest, with out-of-bag
// predictions for the training rows.

use gbex::forest::{fit_forest, ForestConfig};
use gbex::sim::SimModel;
use ndarray::Array1;

pub fn run_example() -> gbex::Result<()> {
    let data = SimModel::Model1.generate(2000, 2);
    let cfg = ForestConfig { n_trees: 300, seed: 3, ..Default::default() };
    let forest = fit_forest(data.x.view(), &data.y, &cfg)?;

    let mut x = Array1::<f64>::zeros(40);
    for x1 in [-0.5, 0.5] {
        x[0] = x1;
        let q = forest.predict_quantiles(x.view(), &[0.5, 0.8, 0.9])?;
        let truth: Vec<f64> = [0.5, 0.8, 0.9].iter().map(|&t| SimModel::Model1.truth(x.view(), t)).collect();
        println!("x1 = {x1:+}: forest {q:.3?}, truth {truth:.3?}");
    }

    let covered = (0..data.y.len())
        .map(|i| forest.oob_quantile(i, 0.8).map(|q| data.y[i] <= q))
        .collect::<gbex::Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&b| b)
        .count();
    println!("out-of-bag coverage of the 0.8 quantile: {:.3}", covered as f64 / data.y.len() as f64);
    Ok(())
}

#[allow(dead_code)]
fn main() -> gbex::Result<()> {
    run_example()
}
