// Fits one generalized Pareto distribution to exceedances of a heavy-tailed
// sample and extrapolates to levels beyond the data.

use gbex::gpd::{self, Exceedance};
use gbex::rng::stream;
use gbex::sim::t_quantile;
use rand::Rng as _;

pub fn run_example() -> gbex::Result<()> {
    let mut r = stream(1, &[]);
    let mut y: Vec<f64> = (0..5000).map(|_| t_quantile(r.gen::<f64>().max(1e-300), 4.0)).collect();
    y.sort_by(f64::total_cmp);
    let tau0 = 0.9;
    let u = y[(tau0 * y.len() as f64) as usize];
    let z: Vec<Exceedance> = y.iter().filter(|&&v| v > u).map(|&v| Exceedance::over(v, u)).collect();

    let fit = gpd::fit_unconditional_mle(&z)?;
    println!("threshold {u:.4}, {} exceedances", z.len());
    println!("sigma {:.4}, gamma {:.4} (tail index of t4 is 0.25)", fit.sigma, fit.gamma);
    for tau in [0.99, 0.995, 0.999] {
        let q = gpd::extreme_quantile(u, fit, tau0, tau)?;
        println!("tau {tau}: estimate {q:.4}, truth {:.4}", t_quantile(tau, 4.0));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> gbex::Result<()> {
    run_example()
}
