//! K-fold cross-validation of λ by out-of-fold weighted AUC.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::solver::{FitOptions, Problem, SolveInfo, State};
use super::{finish, lambda_max_from, null_fit, weighted_auc, weighted_auc_random_ties, AucTies, FitResult, PenaltySpec};
use crate::error::{Error, Result};
use crate::glm::{weighted_loglik, Dataset};

const FOLD_RETRIES: usize = 20;
/// Path stops early once the deviance ratio exceeds this.
const DEV_RATIO_MAX: f64 = 0.999;
/// ...or once its relative gain between successive λ falls below this.
const DEV_RATIO_MIN_GAIN: f64 = 1e-5;
const MIN_PATH_LEN: usize = 5;

#[derive(Debug, Clone)]
pub struct CvOptions {
    pub n_folds: usize,
    pub grid_size: usize,
    /// Smallest λ on the grid as a fraction of λ_max.
    pub min_ratio: f64,
    pub seed: u64,
    /// Defaults to unit weights.
    pub penalty_weights: Option<Vec<f64>>,
    /// Solver settings for the path and fold fits.
    pub fit: FitOptions,
    /// Stop the path early when the deviance ratio saturates.
    pub truncate_path: bool,
    /// Which λ `fit_cv` refits at.
    pub rule: LambdaRule,
    /// Tie handling in the fold AUCs. Random draws come from a per-fold
    /// stream of `seed`.
    pub ties: AucTies,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    /// AUC-maximizing λ.
    #[default]
    Min,
    /// Largest λ within one standard error of the best mean AUC.
    OneSe,
}

impl CvOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            n_folds: 10,
            grid_size: 100,
            min_ratio: 1e-4,
            seed,
            penalty_weights: None,
            fit: FitOptions::cross_validation(),
            truncate_path: true,
            rule: LambdaRule::Min,
            ties: AucTies::Half,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaPath {
    /// Strictly descending.
    pub grid: Vec<f64>,
    pub lambda_max: f64,
    pub mean_auc: Vec<f64>,
    /// Standard error of the fold-mean AUC.
    pub sd_auc: Vec<f64>,
    /// `fold_auc[k][f]`: AUC of fold `f` at `grid[k]`; NaN when the held-out
    /// fold lacks one class.
    pub fold_auc: Vec<Vec<f64>>,
    pub selected_lambda: f64,
    pub selected_index: usize,
    /// Largest λ whose mean AUC is within one standard error of the best.
    pub lambda_1se: f64,
    pub one_se_index: usize,
    pub fold_assignment_seed: u64,
    pub fold_ids: Vec<usize>,
    pub n_folds: usize,
}

#[derive(Debug, Clone)]
pub struct CvFit {
    pub path: LambdaPath,
    /// Full-data fit at the selected λ.
    pub fit: FitResult,
}

pub(crate) fn assign_folds(y: &[f64], n_folds: usize, seed: u64) -> Result<Vec<usize>> {
    let n = y.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut ids = vec![0; n];
    for _ in 0..FOLD_RETRIES {
        perm.shuffle(&mut rng);
        for (k, &i) in perm.iter().enumerate() {
            ids[i] = k % n_folds;
        }
        let ok = (0..n_folds).all(|f| {
            let mut has = [false, false];
            for i in 0..n {
                if ids[i] != f {
                    has[(y[i] == 1.0) as usize] = true;
                }
            }
            has[0] && has[1]
        });
        if ok {
            return Ok(ids);
        }
    }
    Err(Error::CrossValidation(format!(
        "could not build {n_folds} folds with both classes in every training fold after {FOLD_RETRIES} attempts"
    )))
}

fn log_grid(lmax: f64, size: usize, min_ratio: f64) -> Vec<f64> {
    if !(lmax > 0.0) || size <= 1 {
        return vec![lmax.max(0.0)];
    }
    let step = min_ratio.ln() / (size - 1) as f64;
    (0..size).map(|k| lmax * (step * k as f64).exp()).collect()
}

/// Early-stopping rule for a warm-started path: the deviance ratio is
/// saturated, has stopped improving, or the fit is running off to infinity.
struct PathStop {
    null_dev: f64,
    prev_ratio: f64,
}

impl PathStop {
    fn new(null_dev: f64) -> Self {
        Self {
            null_dev,
            prev_ratio: 0.0,
        }
    }

    fn saturated(&mut self, data: &Dataset, problem: &Problem, st: &State, info: &SolveInfo, k: usize) -> Result<bool> {
        if info.separation {
            return Ok(true);
        }
        if !(self.null_dev > 0.0) {
            return Ok(false);
        }
        let dev = -weighted_loglik(data, &problem.theta(st))?;
        let ratio = 1.0 - dev / self.null_dev;
        let gain = ratio - self.prev_ratio;
        self.prev_ratio = ratio;
        Ok(ratio > DEV_RATIO_MAX || (k + 1 >= MIN_PATH_LEN && gain < DEV_RATIO_MIN_GAIN * ratio))
    }
}

struct FullPath {
    grid: Vec<f64>,
    lambda_max: f64,
    states: Vec<State>,
}

fn full_data_path(data: &Dataset, weights: &[f64], opts: &CvOptions) -> Result<FullPath> {
    let problem = Problem::new(data, weights);
    let null = null_fit(&problem, weights)?;
    let lmax = lambda_max_from(data, &problem, &null, weights);
    let mut grid = log_grid(lmax, opts.grid_size, opts.min_ratio);
    let null_dev = -weighted_loglik(data, &problem.theta(&null))?;
    let mut st = null;
    let mut states = Vec::with_capacity(grid.len());
    let mut stop = PathStop::new(null_dev);
    for k in 0..grid.len() {
        let info = problem.solve(grid[k], &mut st, &opts.fit, None)?;
        states.push(st.clone());
        if opts.truncate_path && stop.saturated(data, &problem, &st, &info, k)? {
            grid.truncate(k + 1);
            break;
        }
    }
    Ok(FullPath {
        grid,
        lambda_max: lmax,
        states,
    })
}

fn fold_aucs(
    data: &Dataset,
    weights: &[f64],
    fold_ids: &[usize],
    fold: usize,
    grid: &[f64],
    opts: &CvOptions,
) -> Result<Vec<f64>> {
    let train: Vec<usize> = (0..data.n()).filter(|&i| fold_ids[i] != fold).collect();
    let test: Vec<usize> = (0..data.n()).filter(|&i| fold_ids[i] == fold).collect();
    let train_data = data.subset(&train);
    let test_data = data.subset(&test);
    let labels: Vec<f64> = test_data.y().iter().copied().collect();
    let tw: Vec<f64> = test_data.w().iter().copied().collect();
    let both = labels.contains(&1.0) && labels.contains(&0.0);

    let problem = Problem::new(&train_data, weights);
    let mut st = null_fit(&problem, weights)?;
    let null_dev = -weighted_loglik(&train_data, &problem.theta(&st))?;
    let mut stop = PathStop::new(null_dev);
    let mut frozen = false;
    let mut tie_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    tie_rng.set_stream(fold as u64 + 1);
    let mut out = Vec::with_capacity(grid.len());
    for (k, &lambda) in grid.iter().enumerate() {
        // a saturated fold keeps its last fit for the rest of the grid
        if !frozen {
            let info = problem.solve(lambda, &mut st, &opts.fit, None)?;
            frozen = opts.truncate_path && stop.saturated(&train_data, &problem, &st, &info, k)?;
        }
        if !both {
            out.push(f64::NAN);
            continue;
        }
        let theta = problem.theta(&st);
        let scores = test_data.x() * theta.as_vector();
        out.push(match opts.ties {
            AucTies::Half => weighted_auc(scores.as_slice(), &labels, &tw)?,
            AucTies::Random => weighted_auc_random_ties(scores.as_slice(), &labels, &tw, &mut tie_rng)?,
        });
    }
    Ok(out)
}

fn validate(data: &Dataset, opts: &CvOptions) -> Result<Vec<f64>> {
    if opts.n_folds < 2 {
        return Err(Error::InvalidInput("cross-validation needs at least 2 folds".into()));
    }
    if data.n() < opts.n_folds {
        return Err(Error::InvalidInput(format!(
            "n = {} is smaller than the number of folds {}",
            data.n(),
            opts.n_folds
        )));
    }
    if opts.grid_size == 0 || !(opts.min_ratio > 0.0 && opts.min_ratio < 1.0) {
        return Err(Error::InvalidInput("grid_size must be positive and min_ratio in (0,1)".into()));
    }
    let y = data.y();
    if !(y.iter().any(|&v| v == 1.0) && y.iter().any(|&v| v == 0.0)) {
        return Err(Error::CrossValidation("outcome has a single class".into()));
    }
    let weights = opts
        .penalty_weights
        .clone()
        .unwrap_or_else(|| vec![1.0; data.p()]);
    PenaltySpec::weighted(0.0, weights.clone()).validate(data.p())?;
    if !weights.iter().any(|&w| w > 0.0) {
        return Err(Error::InvalidInput("at least one penalty weight must be positive".into()));
    }
    Ok(weights)
}

fn cross_validate(data: &Dataset, opts: &CvOptions) -> Result<(LambdaPath, FullPath, Vec<f64>)> {
    let weights = validate(data, opts)?;
    let y: Vec<f64> = data.y().iter().copied().collect();
    let fold_ids = assign_folds(&y, opts.n_folds, opts.seed)?;
    let full = full_data_path(data, &weights, opts)?;

    let per_fold: Vec<Vec<f64>> = (0..opts.n_folds)
        .into_par_iter()
        .map(|f| fold_aucs(data, &weights, &fold_ids, f, &full.grid, opts))
        .collect::<Result<_>>()?;

    let fold_w: Vec<f64> = (0..opts.n_folds)
        .map(|f| (0..data.n()).filter(|&i| fold_ids[i] == f).map(|i| data.w()[i]).sum())
        .collect();

    let nl = full.grid.len();
    let mut mean_auc = vec![f64::NAN; nl];
    let mut sd_auc = vec![f64::NAN; nl];
    let mut fold_auc = vec![vec![f64::NAN; opts.n_folds]; nl];
    for k in 0..nl {
        let mut sw = 0.0;
        let mut s = 0.0;
        let mut count = 0usize;
        for f in 0..opts.n_folds {
            let a = per_fold[f][k];
            fold_auc[k][f] = a;
            if a.is_finite() {
                sw += fold_w[f];
                s += fold_w[f] * a;
                count += 1;
            }
        }
        if count == 0 {
            continue;
        }
        let m = s / sw;
        mean_auc[k] = m;
        let var = (0..opts.n_folds)
            .filter(|&f| per_fold[f][k].is_finite())
            .map(|f| fold_w[f] * (per_fold[f][k] - m).powi(2))
            .sum::<f64>()
            / sw;
        sd_auc[k] = if count > 1 { (var / (count - 1) as f64).sqrt() } else { 0.0 };
    }

    // ties go to the larger λ (earlier grid index)
    let mut best: Option<usize> = None;
    for k in 0..nl {
        if mean_auc[k].is_finite() && best.is_none_or(|b| mean_auc[k] > mean_auc[b]) {
            best = Some(k);
        }
    }
    let best = best.ok_or_else(|| {
        Error::CrossValidation("no held-out fold contained both outcome classes".into())
    })?;
    let cutoff = mean_auc[best] - sd_auc[best];
    let one_se = (0..nl)
        .find(|&k| mean_auc[k].is_finite() && mean_auc[k] >= cutoff)
        .unwrap_or(best);

    let path = LambdaPath {
        grid: full.grid.clone(),
        lambda_max: full.lambda_max,
        mean_auc,
        sd_auc,
        fold_auc,
        selected_lambda: full.grid[best],
        selected_index: best,
        lambda_1se: full.grid[one_se],
        one_se_index: one_se,
        fold_assignment_seed: opts.seed,
        fold_ids,
        n_folds: opts.n_folds,
    };
    Ok((path, full, weights))
}

/// Selects λ on a log-spaced grid from λ_max down to `min_ratio · λ_max` by
/// maximizing the mean out-of-fold weighted AUC.
pub fn cv_select_lambda(data: &Dataset, opts: &CvOptions) -> Result<LambdaPath> {
    cross_validate(data, opts).map(|(path, _, _)| path)
}

/// Cross-validates λ, then refits the full data at the selected λ with
/// `final_opts`, warm-started from the path.
pub fn fit_cv(data: &Dataset, opts: &CvOptions, final_opts: &FitOptions) -> Result<CvFit> {
    let (path, full, weights) = cross_validate(data, opts)?;
    let problem = Problem::new(data, &weights);
    let index = match opts.rule {
        LambdaRule::Min => path.selected_index,
        LambdaRule::OneSe => path.one_se_index,
    };
    let mut st = full.states[index].clone();
    let penalty = PenaltySpec::weighted(path.grid[index], weights);
    let info = problem.solve(penalty.lambda, &mut st, final_opts, None)?;
    let fit = finish(data, &problem, &st, &penalty, info);
    Ok(CvFit { path, fit })
}
