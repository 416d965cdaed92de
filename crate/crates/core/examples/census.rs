//! How far each generated population's census coefficient sits from θ₀, in
//! units of the design-based standard error of the sample estimator.
//!
//! cargo run --release -p svydb --example census

use nalgebra::{DMatrix, DVector};
use svydb::glm::logistic;
use svydb::simulation::{generate_population, SimulationConfig};
use svydb::{fit_mle, Dataset, MleOptions};

fn main() {
    let config = SimulationConfig::default();
    let mut ps: Vec<usize> = config.cells().unwrap().into_iter().map(|(_, p)| p).collect();
    ps.sort_unstable();
    ps.dedup();
    for p in ps {
        let pop = generate_population(&config, p);
        let big_n = pop.y.len();
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        let data = Dataset::new(DVector::from_vec(pop.y.clone()), pop.x.clone(), DVector::from_element(big_n, 1.0), names)
            .unwrap();
        let mle = fit_mle(&data, MleOptions::default()).unwrap();
        let theta = mle.theta.as_vector();
        let eta = &pop.x * theta;
        for draws in &config.designs {
            let mut a = DMatrix::zeros(p + 1, p + 1);
            let mut b = DMatrix::zeros(p + 1, p + 1);
            for (h, &nh) in draws.iter().enumerate() {
                let start = pop.stratum_starts[h];
                let size = config.strata_sizes[h];
                let wh = config.weights_per_stratum[h];
                let mut mean_s = DVector::zeros(p + 1);
                let mut ss = DMatrix::zeros(p + 1, p + 1);
                let mut hh = DMatrix::zeros(p + 1, p + 1);
                for i in start..start + size {
                    let xi = pop.x.row(i).transpose();
                    let mu = logistic(eta[i]);
                    let s = &xi * (pop.y[i] - mu);
                    mean_s += &s;
                    ss += &s * s.transpose();
                    hh += &xi * xi.transpose() * (mu * (1.0 - mu));
                }
                let m = size as f64;
                mean_s /= m;
                let var_s = ss / m - &mean_s * mean_s.transpose();
                a += hh * (nh as f64 * wh / m);
                b += var_s * (nh as f64 * wh * wh);
            }
            let ainv = a.try_inverse().unwrap();
            let v = &ainv * b * &ainv;
            let se = v[(1, 1)].sqrt();
            let n: usize = draws.iter().sum();
            let shift = (theta[1] - 1.0) / se;
            let size = |z: f64| {
                let phi = |t: f64| 0.5 * statrs::function::erf::erfc(-t / std::f64::consts::SQRT_2);
                100.0 * (1.0 - phi(1.959964 - z) + phi(-1.959964 - z))
            };
            println!(
                "n={n:3} p={p:3} census beta1={:.4} se={se:.4} shift={shift:+.3} se -> size of an exact test {:.1}%",
                theta[1],
                size(shift)
            );
        }
    }
}
