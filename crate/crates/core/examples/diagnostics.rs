// Variable importance and partial dependence of a fitted model on data whose
// tail depends on the first two covariates only.

use gbex::boost::GbexHyperParams;
use gbex::diagnostics::{feature_grid, importance_report, partial_dependence, PdpOutput};
use gbex::forest::ForestConfig;
use gbex::pipeline::{fit_threshold_stage, ExtremeModel};
use gbex::sim::SimModel;

pub fn run_example() -> gbex::Result<()> {
    let model = SimModel::Model2;
    let data = model.generate(3000, 7);
    let forest = ForestConfig { n_trees: 300, seed: 7, ..Default::default() };
    let (f, z) = fit_threshold_stage(data.x.view(), &data.y, 0.8, &forest)?;
    let h = GbexHyperParams { n_trees: 200, ..model.study_hyper() };
    let g = gbex::fit_gbex(data.x.view(), &z, &h, None)?;

    let report = importance_report(&g, data.x.view(), &z, 7)?;
    println!("feature  permutation  sigma  gamma");
    for j in 0..model.dim() {
        println!(
            "x{:<7} {:>11.1} {:>6.1} {:>6.1}",
            j + 1,
            report.permutation.normalized[j],
            report.relative.sigma[j],
            report.relative.gamma[j]
        );
    }

    let m = ExtremeModel::from_parts(f, g, 0.8)?;
    let grid = feature_grid(data.x.view(), 0, 5);
    let pd = partial_dependence(&m, data.x.view(), &[0], &[grid], PdpOutput::Quantile(0.995))?;
    for (p, v) in pd.points.iter().zip(&pd.values) {
        println!("x1 = {:+.2}: mean 0.995 quantile {v:.3}", p[0]);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> gbex::Result<()> {
    run_example()
}
