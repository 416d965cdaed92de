//! Shared generators and independent oracles for the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use svydb::{Dataset, Theta};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Random logit data: the first `n_binary` regressors are Bernoulli(½) dummies,
/// the rest standard normal. Weights are uniform on [0.5, 3).
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, p: usize, n_binary: usize, signal: f64) -> Dataset {
    loop {
        let cols: Vec<Vec<f64>> = (0..p)
            .map(|j| {
                (0..n)
                    .map(|_| {
                        if j < n_binary {
                            f64::from(u8::from(rng.random::<bool>()))
                        } else {
                            rng.sample::<f64, _>(StandardNormal)
                        }
                    })
                    .collect()
            })
            .collect();
        let beta: Vec<f64> = (0..p).map(|_| signal * rng.random_range(-1.0..1.0)).collect();
        let alpha = rng.random_range(-0.5..0.5);
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let t = alpha + (0..p).map(|j| beta[j] * cols[j][i]).sum::<f64>();
                f64::from(u8::from(rng.random::<f64>() < sigmoid(t)))
            })
            .collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..3.0)).collect();
        let ones = y.iter().filter(|&&v| v == 1.0).count();
        // constant columns would collide with the intercept
        let degenerate = cols.iter().any(|c| c.iter().all(|&v| v == c[0]));
        if ones < 3 || ones + 3 > n || degenerate {
            continue;
        }
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        return Dataset::from_regressors(y, &cols, w, names).unwrap();
    }
}

pub fn random_theta(rng: &mut ChaCha8Rng, p: usize, scale: f64) -> Theta {
    let v: Vec<f64> = (0..=p).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
    Theta::from_slice(&v).unwrap()
}

/// `n⁻¹ Σ w_i (y_i t_i − log(1 + e^{t_i}))`, written out independently of the
/// library.
pub fn loglik(data: &Dataset, theta: &DVector<f64>) -> f64 {
    let eta = data.x() * theta;
    let mut total = 0.0;
    for i in 0..data.n() {
        let t = eta[i];
        let softplus = if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
        total += data.w()[i] * (data.y()[i] * t - softplus);
    }
    total / data.n() as f64
}

/// Central differences of `f` at `x` with a step scaled to each coordinate.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    for k in 0..x.len() {
        let h = 1e-5 * x[k].abs().max(1.0);
        let mut up = x.clone();
        let mut dn = x.clone();
        up[k] += h;
        dn[k] -= h;
        g[k] = (f(&up) - f(&dn)) / (2.0 * h);
    }
    g
}

/// Central-difference Jacobian of a vector map; column k is ∂f/∂x_k.
pub fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>) -> DMatrix<f64> {
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    for k in 0..x.len() {
        let h = 1e-5 * x[k].abs().max(1.0);
        let mut up = x.clone();
        let mut dn = x.clone();
        up[k] += h;
        dn[k] -= h;
        jac.set_column(k, &((f(&up) - f(&dn)) / (2.0 * h)));
    }
    jac
}

/// Largest entrywise error relative to the largest reference entry.
pub fn rel_err(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    let scale = reference.amax().max(1e-12);
    (a - reference).amax() / scale
}

/// Damped Newton on the weighted log-likelihood with step halving. Returns
/// `None` if it fails to reach a gradient norm of 1e-12.
pub fn newton_mle(data: &Dataset) -> Option<DVector<f64>> {
    let n = data.n() as f64;
    let x = data.x();
    let mut theta = DVector::zeros(x.ncols());
    let mut ll = loglik(data, &theta);
    for _ in 0..200 {
        let eta = x * &theta;
        let mut grad = DVector::zeros(x.ncols());
        let mut hess = DMatrix::zeros(x.ncols(), x.ncols());
        for i in 0..data.n() {
            let mu = sigmoid(eta[i]);
            let wi = data.w()[i] / n;
            let xi = x.row(i).transpose();
            grad += &xi * (wi * (data.y()[i] - mu));
            hess += &xi * xi.transpose() * (wi * mu * (1.0 - mu));
        }
        if grad.amax() < 1e-12 {
            return Some(theta);
        }
        let step = hess.lu().solve(&grad)?;
        let mut t = 1.0;
        loop {
            let cand = &theta + &step * t;
            let cand_ll = loglik(data, &cand);
            if cand_ll >= ll - 1e-15 {
                theta = cand;
                ll = cand_ll;
                break;
            }
            t *= 0.5;
            if t < 1e-10 {
                return None;
            }
        }
    }
    None
}
