//! Monte Carlo study of the empirical size of the debiased Wald test and the
//! standard survey t-test under stratified sampling.
//!
//! One finite population is generated per `(p, seed)` from a logit model with
//! i.i.d. Bernoulli(½) regressors, split into contiguous strata, and sampled
//! with replacement within each stratum. Every replication of a cell feeds the
//! same sample to both tests, so the two rejection rates are paired.
//!
//! Seeds: the master seed keys a ChaCha8 generator; the population for `p`
//! and each `(n, p, replication)` use their own stream of that generator, so
//! results do not depend on scheduling or worker count.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::debias::{debias_functional, debias_theta, wald_test, SurveyMle, TestTarget};
use crate::error::{Error, Result};
use crate::glm::{logistic, Dataset};
use crate::lasso::{fit_cv, fit_penalized, lambda_max, AucTies, CvOptions, FitOptions, FitResult, LambdaRule, PenaltySpec};
use crate::marginal::ame_functional;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

const POPULATION_STREAM: u64 = 1 << 63;
const FIELD_BITS: u32 = 21;
/// A cell with more than this share of failed replications is unreliable.
const MAX_FAILURE_SHARE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaPolicy {
    /// K-fold CV by weighted AUC inside every replication.
    CrossValidated {
        folds: usize,
        grid_size: usize,
        #[serde(default = "harness_rule")]
        rule: LambdaRule,
        #[serde(default = "harness_ties")]
        ties: AucTies,
    },
    /// λ = fraction · λ_max on each sample. Fast, not the canonical design.
    Fixed { fraction_of_lambda_max: f64 },
}

/// glmnet's coefficient extraction from a CV object defaults to the one-SE λ.
fn harness_rule() -> LambdaRule {
    LambdaRule::OneSe
}

/// glmnet's weighted AUC orders tied predictions at random.
fn harness_ties() -> AucTies {
    AucTies::Random
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub population_size: usize,
    /// Leading entries of θ₀ (intercept first); the rest are zero.
    pub signal: Vec<f64>,
    pub strata_sizes: Vec<usize>,
    /// Per-stratum draw counts, one vector per sample design.
    pub designs: Vec<Vec<usize>>,
    pub weights_per_stratum: Vec<f64>,
    pub p_over_n: Vec<f64>,
    pub replications: usize,
    pub nominal_level: f64,
    pub null_theta: f64,
    pub null_ame: f64,
    /// Design column tested under both hypotheses.
    pub tested_regressor: usize,
    pub lambda_policy: LambdaPolicy,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            population_size: 10_000,
            signal: vec![1.0, 1.0, 1.0],
            strata_sizes: vec![1000, 2000, 3000, 4000],
            designs: vec![vec![50; 4], vec![100; 4]],
            weights_per_stratum: vec![0.1, 0.2, 0.3, 0.4],
            p_over_n: vec![0.01, 0.025, 0.05, 0.1, 0.25, 0.5],
            replications: 1000,
            nominal_level: 0.05,
            null_theta: 1.0,
            null_ame: 0.11,
            tested_regressor: 1,
            lambda_policy: LambdaPolicy::CrossValidated {
                folds: 10,
                grid_size: 100,
                rule: harness_rule(),
                ties: harness_ties(),
            },
            seed: 20_240_101,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        let h = self.strata_sizes.len();
        if h == 0 || self.strata_sizes.iter().sum::<usize>() != self.population_size {
            return Err(Error::InvalidInput("strata sizes must sum to the population size".into()));
        }
        if self.weights_per_stratum.len() != h || self.designs.iter().any(|d| d.len() != h) {
            return Err(Error::InvalidInput(
                "draws and weights need one entry per stratum".into(),
            ));
        }
        if self.weights_per_stratum.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidInput("stratum weights must be positive".into()));
        }
        if self.replications == 0 || self.replications >= 1 << FIELD_BITS {
            return Err(Error::InvalidInput("replications out of range".into()));
        }
        if !(self.nominal_level > 0.0 && self.nominal_level < 1.0) {
            return Err(Error::InvalidInput("nominal level must be in (0, 1)".into()));
        }
        if self.signal.is_empty() || self.tested_regressor == 0 {
            return Err(Error::InvalidInput("signal needs an intercept and tested_regressor >= 1".into()));
        }
        for (n, p) in self.cells()? {
            if n >= 1 << FIELD_BITS || p >= 1 << FIELD_BITS {
                return Err(Error::InvalidInput("n or p too large".into()));
            }
            if p < self.tested_regressor {
                return Err(Error::InvalidInput(format!(
                    "p = {p} has no regressor {}",
                    self.tested_regressor
                )));
            }
        }
        Ok(())
    }

    /// Whether each design's stratum weights are proportional to `N_h / n_h`.
    pub fn weights_match_design(&self) -> bool {
        self.designs.iter().all(|draws| {
            let ratios: Vec<f64> = self
                .strata_sizes
                .iter()
                .zip(draws)
                .zip(&self.weights_per_stratum)
                .map(|((&nh, &dh), &w)| w * dh as f64 / nh as f64)
                .collect();
            ratios.iter().all(|r| (r / ratios[0] - 1.0).abs() < 1e-9)
        })
    }

    /// `(n, p)` cells in design-major order.
    pub fn cells(&self) -> Result<Vec<(usize, usize)>> {
        let mut out = Vec::new();
        for draws in &self.designs {
            let n: usize = draws.iter().sum();
            for &ratio in &self.p_over_n {
                let exact = ratio * n as f64;
                let p = exact.round();
                if p < 1.0 || (exact - p).abs() > 1e-9 {
                    return Err(Error::InvalidInput(format!(
                        "p/n = {ratio} with n = {n} does not give a positive integer p"
                    )));
                }
                out.push((n, p as usize));
            }
        }
        Ok(out)
    }

    /// `θ₀` of length `p + 1`.
    pub fn theta0(&self, p: usize) -> DVector<f64> {
        DVector::from_fn(p + 1, |k, _| self.signal.get(k).copied().unwrap_or(0.0))
    }
}

#[derive(Debug, Clone)]
pub struct Population {
    pub y: Vec<f64>,
    /// `N × (p+1)`, leading intercept column.
    pub x: DMatrix<f64>,
    pub strata: Vec<usize>,
    /// Start offset of each stratum block.
    pub stratum_starts: Vec<usize>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn population_stream(p: usize) -> u64 {
    POPULATION_STREAM | p as u64
}

pub fn replication_stream(n: usize, p: usize, rep: usize) -> u64 {
    ((n as u64) << (2 * FIELD_BITS)) | ((p as u64) << FIELD_BITS) | rep as u64
}

/// Draws `y_i ~ Bernoulli(Λ(x_i'θ₀))` with `x̃_ij ~ Bernoulli(½)`, strata as
/// contiguous index blocks.
pub fn generate_population(config: &SimulationConfig, p: usize) -> Population {
    let mut rng = stream_rng(config.seed, population_stream(p));
    let n = config.population_size;
    let theta0 = config.theta0(p);
    let mut x = DMatrix::from_element(n, p + 1, 1.0);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let mut t = theta0[0];
        for j in 1..=p {
            let v = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            x[(i, j)] = v;
            t += v * theta0[j];
        }
        y.push(if rng.random::<f64>() < logistic(t) { 1.0 } else { 0.0 });
    }
    let mut strata = Vec::with_capacity(n);
    let mut stratum_starts = Vec::new();
    for (h, &size) in config.strata_sizes.iter().enumerate() {
        stratum_starts.push(strata.len());
        strata.extend(std::iter::repeat_n(h, size));
    }
    Population {
        y,
        x,
        strata,
        stratum_starts,
    }
}

fn draw_with_rng(pop: &Population, config: &SimulationConfig, draws: &[usize], rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let mut rows = Vec::new();
    let mut w = Vec::new();
    for (h, &dh) in draws.iter().enumerate() {
        let start = pop.stratum_starts[h];
        let size = config.strata_sizes[h];
        for _ in 0..dh {
            rows.push(start + rng.random_range(0..size));
            w.push(config.weights_per_stratum[h]);
        }
    }
    let x = pop.x.select_rows(rows.iter());
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| pop.y[i]));
    let names = (1..pop.x.ncols()).map(|j| format!("x{j}")).collect();
    Dataset::new(y, x, DVector::from_vec(w), names)
}

/// Stratified simple random sample with replacement; each row carries its
/// stratum's weight.
pub fn draw_stratified_sample(
    pop: &Population,
    config: &SimulationConfig,
    draws: &[usize],
    replication_seed: u64,
) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(replication_seed);
    draw_with_rng(pop, config, draws, &mut rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    Theta,
    Ame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Db,
    TSvy,
}

impl Hypothesis {
    pub fn label(self) -> &'static str {
        match self {
            Hypothesis::Theta => "theta",
            Hypothesis::Ame => "ame",
        }
    }
}

impl TestKind {
    pub fn label(self) -> &'static str {
        match self {
            TestKind::Db => "DB",
            TestKind::TSvy => "t_svy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub n: usize,
    pub p: usize,
    pub hypothesis: Hypothesis,
    pub test: TestKind,
    pub rejections: usize,
    pub reps: usize,
    pub failures: usize,
    /// `rejections / (reps - failures)`.
    pub frequency: f64,
    pub unreliable: bool,
    pub failure_kinds: BTreeMap<String, usize>,
    /// Replications that produced a decision but raised a warning.
    pub warnings: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub version: String,
    /// False under the fixed-λ fast mode.
    pub canonical: bool,
    pub config: SimulationConfig,
    pub population_streams: BTreeMap<usize, u64>,
    pub rows: Vec<ReportRow>,
}

impl SimulationReport {
    pub fn row(&self, n: usize, p: usize, h: Hypothesis, t: TestKind) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.n == n && r.p == p && r.hypothesis == h && r.test == t)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let policy = match &self.config.lambda_policy {
            LambdaPolicy::CrossValidated {
                folds,
                grid_size,
                rule,
                ties,
            } => {
                format!("cv(folds={folds},grid={grid_size},rule={rule:?},ties={ties:?})")
            }
            LambdaPolicy::Fixed {
                fraction_of_lambda_max,
            } => format!("fixed({fraction_of_lambda_max}*lambda_max) NON-CANONICAL"),
        };
        let _ = writeln!(
            s,
            "# svydb {} simulate seed={} lambda={} reps={} level={}",
            self.version, self.config.seed, policy, self.config.replications, self.config.nominal_level
        );
        s.push_str("n,p,hypothesis,test,rejections,reps,failures,frequency\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.n,
                r.p,
                r.hypothesis.label(),
                r.test.label(),
                r.rejections,
                r.reps,
                r.failures,
                r.frequency
            );
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// One replication: rejection decision per (hypothesis, test), or the
/// failure kind.
type Decision = std::result::Result<bool, &'static str>;

#[derive(Debug, Clone)]
struct RepOutcome {
    decisions: [(Hypothesis, TestKind, Decision); 4],
    db_warning: Option<&'static str>,
    svy_warning: Option<&'static str>,
}

fn penalized_fit(sample: &Dataset, config: &SimulationConfig, cv_seed: u64) -> Result<FitResult> {
    match &config.lambda_policy {
        LambdaPolicy::CrossValidated {
            folds,
            grid_size,
            rule,
            ties,
        } => {
            let mut opts = CvOptions::new(cv_seed);
            opts.n_folds = *folds;
            opts.grid_size = *grid_size;
            opts.rule = *rule;
            opts.ties = *ties;
            Ok(fit_cv(sample, &opts, &FitOptions::default())?.fit)
        }
        LambdaPolicy::Fixed {
            fraction_of_lambda_max,
        } => {
            let weights = vec![1.0; sample.p()];
            let lambda = fraction_of_lambda_max * lambda_max(sample, &weights)?;
            fit_penalized(sample, &PenaltySpec::weighted(lambda, weights), None, &FitOptions::default())
        }
    }
}

fn replicate(pop: &Population, config: &SimulationConfig, draws: &[usize], p: usize, rep: usize) -> RepOutcome {
    let n: usize = draws.iter().sum();
    let mut rng = stream_rng(config.seed, replication_stream(n, p, rep));
    let level = config.nominal_level;
    let j = config.tested_regressor;
    let failed = |e: Error| e.kind();
    let sample = match draw_with_rng(pop, config, draws, &mut rng) {
        Ok(s) => s,
        Err(e) => {
            let k = failed(e);
            return RepOutcome {
                decisions: [
                    (Hypothesis::Theta, TestKind::Db, Err(k)),
                    (Hypothesis::Theta, TestKind::TSvy, Err(k)),
                    (Hypothesis::Ame, TestKind::Db, Err(k)),
                    (Hypothesis::Ame, TestKind::TSvy, Err(k)),
                ],
                db_warning: None,
                svy_warning: None,
            };
        }
    };
    let cv_seed = rng.next_u64();

    let fit = penalized_fit(&sample, config, cv_seed);
    let db_warning = match &fit {
        Ok(f) if f.separation_warning => Some("lasso_separation"),
        _ => None,
    };
    let (db_theta, db_ame): (Decision, Decision) = match fit {
        Err(e) => {
            let k = failed(e);
            (Err(k), Err(k))
        }
        Ok(fit) => {
            let t = debias_theta(&sample, &fit)
                .and_then(|est| est.component_test(j, config.null_theta))
                .map(|w| w.p_value < level)
                .map_err(failed);
            let a = ame_functional(&sample, j)
                .and_then(|f| debias_functional(&sample, &fit, &f))
                .and_then(|est| wald_test(&est, &[config.null_ame]))
                .map(|w| w.p_value < level)
                .map_err(failed);
            (t, a)
        }
    };

    // A GLM routine warns and still reports its last iterate when the MLE
    // does not settle (separation); the t-test is computed from it regardless.
    let mut svy_warning = None;
    let (t_theta, t_ame): (Decision, Decision) = match SurveyMle::fit(&sample) {
        Err(e) => {
            let k = failed(e);
            (Err(k), Err(k))
        }
        Ok(mle) => (
            {
                if !mle.converged {
                    svy_warning = Some("mle_not_converged");
                }
                mle.ttest(&sample, TestTarget::Coefficient(j), config.null_theta)
                    .map(|w| w.p_value < level)
                    .map_err(failed)
            },
            mle.ttest(&sample, TestTarget::Ame(j), config.null_ame)
                .map(|w| w.p_value < level)
                .map_err(failed),
        ),
    };

    RepOutcome {
        decisions: [
            (Hypothesis::Theta, TestKind::Db, db_theta),
            (Hypothesis::Theta, TestKind::TSvy, t_theta),
            (Hypothesis::Ame, TestKind::Db, db_ame),
            (Hypothesis::Ame, TestKind::TSvy, t_ame),
        ],
        db_warning,
        svy_warning,
    }
}

/// Progress notification after each finished cell.
#[derive(Debug, Clone, Copy)]
pub struct CellProgress {
    pub n: usize,
    pub p: usize,
    pub done: usize,
    pub total: usize,
}

pub fn run_study(config: &SimulationConfig) -> Result<SimulationReport> {
    run_study_with_progress(config, |_| {})
}

/// Runs every `(n, p)` cell. Replications run on the current rayon pool and
/// are reduced in replication order.
pub fn run_study_with_progress<F>(config: &SimulationConfig, progress: F) -> Result<SimulationReport>
where
    F: Fn(CellProgress),
{
    config.validate()?;
    let cells = config.cells()?;
    let mut populations: BTreeMap<usize, Population> = BTreeMap::new();
    let mut streams = BTreeMap::new();
    let mut rows = Vec::new();
    let mut cell_index = 0;
    for draws in &config.designs {
        let n: usize = draws.iter().sum();
        for &(cn, p) in cells.iter().filter(|(cn, _)| *cn == n) {
            debug_assert_eq!(cn, n);
            let pop = populations
                .entry(p)
                .or_insert_with(|| generate_population(config, p));
            streams.insert(p, population_stream(p));
            let pop: &Population = pop;
            let outcomes: Vec<RepOutcome> = (0..config.replications)
                .into_par_iter()
                .map(|rep| replicate(pop, config, draws, p, rep))
                .collect();

            let mut order: Vec<(Hypothesis, TestKind)> =
                outcomes[0].decisions.iter().map(|(h, t, _)| (*h, *t)).collect();
            order.sort();
            for (h, t) in order {
                let mut rejections = 0;
                let mut failures = 0;
                let mut kinds = BTreeMap::new();
                let mut warnings = BTreeMap::new();
                for o in &outcomes {
                    let warning = match t {
                        TestKind::Db => o.db_warning,
                        TestKind::TSvy => o.svy_warning,
                    };
                    if let Some(wk) = warning {
                        *warnings.entry(wk.to_string()).or_insert(0) += 1;
                    }
                    let (_, _, d) = o.decisions.iter().find(|(hh, tt, _)| *hh == h && *tt == t).unwrap();
                    match d {
                        Ok(true) => rejections += 1,
                        Ok(false) => {}
                        Err(k) => {
                            failures += 1;
                            *kinds.entry(k.to_string()).or_insert(0) += 1;
                        }
                    }
                }
                let valid = config.replications - failures;
                rows.push(ReportRow {
                    n,
                    p,
                    hypothesis: h,
                    test: t,
                    rejections,
                    reps: config.replications,
                    failures,
                    frequency: if valid > 0 {
                        rejections as f64 / valid as f64
                    } else {
                        f64::NAN
                    },
                    unreliable: failures as f64 > MAX_FAILURE_SHARE * config.replications as f64,
                    failure_kinds: kinds,
                    warnings,
                });
            }
            cell_index += 1;
            progress(CellProgress {
                n,
                p,
                done: cell_index,
                total: cells.len(),
            });
        }
    }
    Ok(SimulationReport {
        version: VERSION.to_string(),
        canonical: matches!(config.lambda_policy, LambdaPolicy::CrossValidated { .. }),
        config: config.clone(),
        population_streams: streams,
        rows,
    })
}

/// Population AME of regressor `j` by exact enumeration over the binary
/// regressors that carry nonzero coefficients (the rest do not move `Λ`).
pub fn population_ame_by_enumeration(theta0: &[f64], j: usize) -> Result<f64> {
    if j == 0 || j >= theta0.len() {
        return Err(Error::InvalidInput(format!("regressor {j} out of range")));
    }
    let others: Vec<usize> = (1..theta0.len()).filter(|&k| k != j && theta0[k] != 0.0).collect();
    if others.len() > 24 {
        return Err(Error::InvalidInput("too many nonzero regressors to enumerate".into()));
    }
    let cells = 1usize << others.len();
    let mut total = 0.0;
    for mask in 0..cells {
        let mut t = theta0[0];
        for (b, &k) in others.iter().enumerate() {
            if mask >> b & 1 == 1 {
                t += theta0[k];
            }
        }
        total += logistic(t + theta0[j]) - logistic(t);
    }
    Ok(total / cells as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SimulationConfig {
        SimulationConfig {
            replications: 3,
            p_over_n: vec![0.01],
            designs: vec![vec![50; 4]],
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn default_config_is_valid_and_weights_follow_design() {
        let c = SimulationConfig::default();
        c.validate().unwrap();
        assert!(c.weights_match_design());
        let cells = c.cells().unwrap();
        assert_eq!(
            cells,
            vec![
                (200, 2), (200, 5), (200, 10), (200, 20), (200, 50), (200, 100),
                (400, 4), (400, 10), (400, 20), (400, 40), (400, 100), (400, 200)
            ]
        );
    }

    #[test]
    fn strata_are_contiguous_blocks() {
        let c = small_config();
        let pop = generate_population(&c, 2);
        assert_eq!(pop.y.len(), 10_000);
        for (h, &size) in c.strata_sizes.iter().enumerate() {
            assert_eq!(pop.strata.iter().filter(|&&s| s == h).count(), size);
        }
        assert_eq!(pop.stratum_starts, vec![0, 1000, 3000, 6000]);
    }

    #[test]
    fn sample_sizes_and_weights() {
        let c = small_config();
        let pop = generate_population(&c, 2);
        let d = draw_stratified_sample(&pop, &c, &[50; 4], 9).unwrap();
        assert_eq!(d.n(), 200);
        for (h, w) in c.weights_per_stratum.iter().enumerate() {
            assert_eq!(d.w().iter().filter(|&&v| v == *w).count(), 50, "stratum {h}");
        }
        let d4 = draw_stratified_sample(&pop, &c, &[100; 4], 9).unwrap();
        assert_eq!(d4.n(), 400);
        assert_eq!(d, draw_stratified_sample(&pop, &c, &[50; 4], 9).unwrap());
    }

    #[test]
    fn bad_configs_rejected() {
        let mut c = small_config();
        c.strata_sizes = vec![1000, 2000];
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.p_over_n = vec![0.013];
        assert!(c.validate().is_err());
    }

    #[test]
    fn enumeration_matches_closed_form() {
        let v = population_ame_by_enumeration(&[1.0, 1.0, 1.0], 1).unwrap();
        let closed = 0.5 * (logistic(3.0) - logistic(1.0));
        assert!((v - closed).abs() < 1e-15);
    }
}
