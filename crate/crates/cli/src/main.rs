//! `svydb` command-line tool.
//!
//! Every output file starts with `#` lines carrying the tool version, the
//! seed and the λ used. Errors go to stderr as a single line
//! `error[<kind>]: <message>` and the process exits with status 1.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use svydb::features::{load_csv_reader, spec_for, write_csv, ColumnSpec};
use svydb::lasso::{adaptive_weights, AucTies, LambdaPath, LambdaRule};
use svydb::simulation::{run_study_with_progress, LambdaPolicy, SimulationConfig};
use svydb::{
    ame, ame_functional, debias_functional_with, debias_theta_with, expand_interactions, DebiasOptions, fit_cv, fit_penalized, CvOptions,
    Dataset, FitOptions, FitResult, PenaltySpec,
};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "svydb", version, about = "Debiased inference for survey-weighted Lasso logistic regression")]
struct Cli {
    /// Worker threads for cross-validation folds and simulation replications.
    #[arg(long, env = "SVYDB_WORKERS", global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the penalized model and report debiased coefficients.
    Fit(FitArgs),
    /// Cross-validate λ and print the AUC path.
    Cv(CvArgs),
    /// Debiased average marginal effects of dummy regressors.
    Ame(AmeArgs),
    /// Monte Carlo study of test size under stratified sampling.
    Simulate(SimulateArgs),
    /// Degree-2 interaction expansion with a CV comparison of both designs.
    Expand(ExpandArgs),
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    input: PathBuf,
    /// JSON column mapping.
    #[arg(long)]
    mapping: PathBuf,
}

#[derive(Args)]
struct LambdaArgs {
    /// Fixed penalty level.
    #[arg(long, conflicts_with = "cv")]
    lambda: Option<f64>,
    /// Choose λ by cross-validated weighted AUC (the default).
    #[arg(long)]
    cv: bool,
    #[arg(long, default_value_t = 10)]
    cv_folds: usize,
    #[arg(long, value_enum, default_value_t = Rule::Min)]
    rule: Rule,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// On a singular Hessian, add a small ridge to its diagonal instead of
    /// failing. The jitter is reported in the output.
    #[arg(long)]
    ridge_jitter: bool,
}

impl LambdaArgs {
    fn debias_options(&self) -> DebiasOptions {
        DebiasOptions {
            allow_ridge_jitter: self.ridge_jitter,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Rule {
    /// AUC-maximizing λ.
    Min,
    /// Largest λ within one standard error of the best AUC.
    #[value(name = "1se")]
    OneSe,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Ties {
    /// Tied pairs count one half.
    Half,
    /// Tied predictions are ordered at random, as glmnet does.
    Random,
}

impl From<Ties> for AucTies {
    fn from(t: Ties) -> Self {
        match t {
            Ties::Half => AucTies::Half,
            Ties::Random => AucTies::Random,
        }
    }
}

impl From<Rule> for LambdaRule {
    fn from(r: Rule) -> Self {
        match r {
            Rule::Min => LambdaRule::Min,
            Rule::OneSe => LambdaRule::OneSe,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct OutArgs {
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    lambda: LambdaArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 10)]
    cv_folds: usize,
    #[arg(long, value_enum, default_value_t = Rule::Min)]
    rule: Rule,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct AmeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    lambda: LambdaArgs,
    /// Dummy regressor to report; repeatable. Defaults to the mapping's
    /// `ame_columns`, then to every binary regressor.
    #[arg(long = "column")]
    columns: Vec<String>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON simulation config; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    reps: Option<usize>,
    /// Sample sizes to run (comma separated).
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// p/n ratios (comma separated).
    #[arg(long, value_delimiter = ',')]
    p_over_n: Vec<f64>,
    #[arg(long)]
    seed: u64,
    /// Use λ = fraction·λ_max instead of CV in every replication (fast,
    /// not the canonical design).
    #[arg(long)]
    fixed_lambda: Option<f64>,
    /// λ rule under cross-validation. The harness default is 1se.
    #[arg(long, value_enum, conflicts_with = "fixed_lambda")]
    rule: Option<Rule>,
    /// Tie handling in the fold AUCs. The harness default is random.
    #[arg(long, value_enum, conflicts_with = "fixed_lambda")]
    auc_ties: Option<Ties>,
    /// CSV table; a JSON report with the config echo goes next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct ExpandArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Only pairwise (degree 2) expansion is supported.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(2..=2))]
    degree: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    cv_folds: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.workers {
        Some(0) => Err(anyhow!(svydb::Error::InvalidInput("workers must be at least 1".into()))),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(anyhow::Error::from)
            .and_then(|pool| pool.install(|| run(cli.command))),
        None => run(cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}

fn error_line(e: &anyhow::Error) -> String {
    let kind = e
        .chain()
        .find_map(|c| c.downcast_ref::<svydb::Error>())
        .map_or("other", svydb::Error::kind);
    let msg = format!("{e:#}").replace(['\n', '\r'], " ");
    format!("error[{kind}]: {msg}")
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Fit(a) => cmd_fit(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Ame(a) => cmd_ame(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Expand(a) => cmd_expand(a),
    }
}

fn load(args: &DataArgs) -> anyhow::Result<(Dataset, ColumnSpec)> {
    let spec = ColumnSpec::from_json_file(&args.mapping)
        .with_context(|| format!("reading mapping {}", args.mapping.display()))?;
    let file = fs::File::open(&args.input)
        .map_err(svydb::Error::from)
        .with_context(|| format!("opening {}", args.input.display()))?;
    let (data, summary) = load_csv_reader(file, &spec)?;
    if summary.rows_dropped > 0 {
        eprintln!(
            "note: dropped {} of {} rows with missing values",
            summary.rows_dropped, summary.rows_read
        );
    }
    Ok((data, spec))
}

struct Chosen {
    fit: FitResult,
    source: &'static str,
    path: Option<LambdaPath>,
}

fn choose_fit(data: &Dataset, args: &LambdaArgs) -> anyhow::Result<Chosen> {
    match args.lambda {
        Some(lambda) => {
            let fit = fit_penalized(data, &PenaltySpec::lasso(lambda, data.p()), None, &FitOptions::default())?;
            Ok(Chosen {
                fit,
                source: "fixed",
                path: None,
            })
        }
        None => {
            let mut opts = CvOptions::new(args.seed);
            opts.n_folds = args.cv_folds;
            opts.rule = args.rule.into();
            let cv = fit_cv(data, &opts, &FitOptions::default())?;
            Ok(Chosen {
                fit: cv.fit,
                source: "cv",
                path: Some(cv.path),
            })
        }
    }
}

fn emit(out: &OutArgs, meta: &[(&str, String)], json_doc: serde_json::Value, csv_table: String) -> anyhow::Result<()> {
    let body = match out.format {
        Format::Json => {
            let mut doc = json_doc;
            let m: serde_json::Map<String, serde_json::Value> =
                meta.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
            doc["meta"] = serde_json::Value::Object(m);
            serde_json::to_string_pretty(&doc)? + "\n"
        }
        Format::Csv => meta_header(meta) + &csv_table,
    };
    write_out(out.out.as_deref(), &body)
}

fn meta_header(meta: &[(&str, String)]) -> String {
    let fields: Vec<String> = meta.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("# svydb {VERSION} {}\n", fields.join(" "))
}

fn write_out(path: Option<&Path>, body: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, body)
            .map_err(svydb::Error::from)
            .with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(body.as_bytes())?,
    }
    Ok(())
}

fn base_meta(command: &str, seed: u64, chosen: &Chosen) -> Vec<(&'static str, String)> {
    vec![
        ("command", command.to_string()),
        ("version", VERSION.to_string()),
        ("seed", seed.to_string()),
        ("lambda", format!("{}", chosen.fit.lambda)),
        ("lambda_source", chosen.source.to_string()),
    ]
}

#[derive(Serialize)]
struct CoefRow {
    term: String,
    lasso: f64,
    debiased: f64,
    std_error: f64,
    z: f64,
    p_value: f64,
}

fn cmd_fit(a: FitArgs) -> anyhow::Result<()> {
    let (data, _) = load(&a.data)?;
    let chosen = choose_fit(&data, &a.lambda)?;
    let est = debias_theta_with(&data, &chosen.fit, a.lambda.debias_options())?;
    let terms = std::iter::once("(intercept)".to_string()).chain(data.column_names().iter().cloned());
    let rows: Vec<CoefRow> = terms
        .enumerate()
        .map(|(k, term)| CoefRow {
            term,
            lasso: chosen.fit.theta_hat[k],
            debiased: est.estimate[k],
            std_error: est.std_errors[k],
            z: est.wald_stats[k],
            p_value: est.p_values[k],
        })
        .collect();
    let mut csv = String::from("term,lasso,debiased,std_error,z,p_value\n");
    for r in &rows {
        csv += &format!("{},{},{},{},{},{}\n", r.term, r.lasso, r.debiased, r.std_error, r.z, r.p_value);
    }
    let doc = json!({
        "n": data.n(),
        "p": data.p(),
        "coefficients": rows,
        "active_set": chosen.fit.active_set,
        "m0_hat": chosen.fit.m0_hat,
        "converged": chosen.fit.converged,
        "separation_warning": chosen.fit.separation_warning,
        "kkt_residual": chosen.fit.kkt_residual,
        "min_hessian_eigenvalue": est.diagnostics.min_hessian_eigenvalue,
        "ridge_jitter": est.diagnostics.ridge_jitter,
        "cv": chosen.path.as_ref().map(|p| json!({
            "n_folds": p.n_folds,
            "selected_index": p.selected_index,
            "lambda_1se": p.lambda_1se,
        })),
    });
    emit(&a.out, &base_meta("fit", a.lambda.seed, &chosen), doc, csv)
}

fn cmd_cv(a: CvArgs) -> anyhow::Result<()> {
    let (data, _) = load(&a.data)?;
    let mut opts = CvOptions::new(a.seed);
    opts.n_folds = a.cv_folds;
    opts.rule = a.rule.into();
    let cv = fit_cv(&data, &opts, &FitOptions::default())?;
    let path = &cv.path;
    let chosen_index = match opts.rule {
        LambdaRule::Min => path.selected_index,
        LambdaRule::OneSe => path.one_se_index,
    };
    let mut csv = String::from("index,lambda,mean_auc,sd_auc,selected\n");
    for k in 0..path.grid.len() {
        csv += &format!(
            "{},{},{},{},{}\n",
            k,
            path.grid[k],
            path.mean_auc[k],
            path.sd_auc[k],
            u8::from(k == chosen_index)
        );
    }
    let chosen = Chosen {
        fit: cv.fit,
        source: "cv",
        path: None,
    };
    let doc = json!({ "path": path, "theta_hat": chosen.fit.theta_hat.as_slice() });
    emit(&a.out, &base_meta("cv", a.seed, &chosen), doc, csv)
}

#[derive(Serialize)]
struct AmeRow {
    column: String,
    plug_in: f64,
    debiased: f64,
    std_error: f64,
    z: f64,
    p_value: f64,
}

fn cmd_ame(a: AmeArgs) -> anyhow::Result<()> {
    let (data, spec) = load(&a.data)?;
    let columns: Vec<String> = if !a.columns.is_empty() {
        a.columns.clone()
    } else if !spec.ame_columns.is_empty() {
        spec.ame_columns.clone()
    } else {
        (1..=data.p())
            .filter(|&j| data.is_binary_column(j) && data.expansion().is_none_or(|m| m.parentage.iter().all(|t| t.column != j)))
            .map(|j| data.column_names()[j - 1].clone())
            .collect()
    };
    if columns.is_empty() {
        bail!(svydb::Error::InvalidInput("no dummy regressors to report".into()));
    }
    let chosen = choose_fit(&data, &a.lambda)?;
    let mut rows = Vec::new();
    for name in &columns {
        let j = data
            .column_index(name)
            .ok_or_else(|| svydb::Error::MissingColumn(name.clone()))?;
        let plug_in = ame(&data, &chosen.fit.theta_hat, j)?.ame_hat;
        let est = debias_functional_with(&data, &chosen.fit, &ame_functional(&data, j)?, a.lambda.debias_options())?;
        rows.push(AmeRow {
            column: name.clone(),
            plug_in,
            debiased: est.estimate[0],
            std_error: est.std_errors[0],
            z: est.wald_stats[0],
            p_value: est.p_values[0],
        });
    }
    let mut csv = String::from("column,plug_in,debiased,std_error,z,p_value\n");
    for r in &rows {
        csv += &format!("{},{},{},{},{},{}\n", r.column, r.plug_in, r.debiased, r.std_error, r.z, r.p_value);
    }
    let doc = json!({ "n": data.n(), "p": data.p(), "effects": rows });
    emit(&a.out, &base_meta("ame", a.lambda.seed, &chosen), doc, csv)
}

fn cmd_simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let mut config = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(svydb::Error::from)
                .with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).map_err(svydb::Error::from)?
        }
        None => SimulationConfig::default(),
    };
    if let Some(r) = a.reps {
        config.replications = r;
    }
    config.seed = a.seed;
    if !a.p_over_n.is_empty() {
        config.p_over_n = a.p_over_n.clone();
    }
    if let LambdaPolicy::CrossValidated { rule, ties, .. } = &mut config.lambda_policy {
        if let Some(r) = a.rule {
            *rule = r.into();
        }
        if let Some(t) = a.auc_ties {
            *ties = t.into();
        }
    }
    if let Some(f) = a.fixed_lambda {
        config.lambda_policy = LambdaPolicy::Fixed {
            fraction_of_lambda_max: f,
        };
    }
    if !a.n.is_empty() {
        let h = config.strata_sizes.len();
        let mut designs = Vec::new();
        for &n in &a.n {
            match config.designs.iter().find(|d| d.iter().sum::<usize>() == n) {
                Some(d) => designs.push(d.clone()),
                None if h > 0 && n % h == 0 => designs.push(vec![n / h; h]),
                None => bail!(svydb::Error::InvalidInput(format!(
                    "n = {n} is not a configured design and does not split evenly over {h} strata"
                ))),
            }
        }
        config.designs = designs;
    }
    let quiet = a.quiet;
    let report = run_study_with_progress(&config, |c| {
        if !quiet {
            eprintln!("cell {}/{} done: n={} p={}", c.done, c.total, c.n, c.p);
        }
    })?;
    if !report.canonical && !quiet {
        eprintln!("note: fixed-lambda mode is not the canonical design");
    }
    for r in report.rows.iter().filter(|r| r.unreliable) {
        eprintln!(
            "warning: n={} p={} {} {} unreliable ({} of {} replications failed)",
            r.n,
            r.p,
            r.hypothesis.label(),
            r.test.label(),
            r.failures,
            r.reps
        );
    }
    let csv = report.to_csv();
    let json_doc = report.to_json()? + "\n";
    match &a.out {
        Some(path) => {
            let body = if a.format == Format::Json { &json_doc } else { &csv };
            write_out(Some(path), body)?;
            let sibling = path.with_extension(if a.format == Format::Json { "csv" } else { "json" });
            let other = if a.format == Format::Json { &csv } else { &json_doc };
            write_out(Some(&sibling), other)?;
        }
        None => write_out(None, if a.format == Format::Json { &json_doc } else { &csv })?,
    }
    Ok(())
}

/// CV error (1 − AUC) and λ for an adaptive Lasso: a CV Lasso supplies the
/// weights, then the weighted problem is cross-validated on the same folds.
fn adaptive_cv(data: &Dataset, folds: usize, seed: u64) -> anyhow::Result<(f64, f64, usize)> {
    let mut opts = CvOptions::new(seed);
    opts.n_folds = folds;
    let first = fit_cv(data, &opts, &FitOptions::default())?;
    let weights = adaptive_weights(&first.fit, 1.0, 0.0);
    if weights.iter().all(|w| !w.is_finite()) {
        // nothing survived the first stage
        let k = first.path.selected_index;
        return Ok((first.path.selected_lambda, 1.0 - first.path.mean_auc[k], 0));
    }
    opts.penalty_weights = Some(weights);
    let second = fit_cv(data, &opts, &FitOptions::default())?;
    let k = second.path.selected_index;
    Ok((second.path.selected_lambda, 1.0 - second.path.mean_auc[k], second.fit.m0_hat))
}

fn cmd_expand(a: ExpandArgs) -> anyhow::Result<()> {
    let (data, _) = load(&a.data)?;
    let (expanded, map) = expand_interactions(&data, a.degree as usize)?;
    fs::create_dir_all(&a.out)
        .map_err(svydb::Error::from)
        .with_context(|| format!("creating {}", a.out.display()))?;

    let mut buf = Vec::new();
    write_csv(&expanded, &mut buf)?;
    write_out(Some(&a.out.join("expanded.csv")), std::str::from_utf8(&buf)?)?;
    write_out(Some(&a.out.join("expansion.json")), &(serde_json::to_string_pretty(&map)? + "\n"))?;
    write_out(
        Some(&a.out.join("mapping.json")),
        &(serde_json::to_string_pretty(&spec_for(&expanded))? + "\n"),
    )?;

    let (l1, e1, m1) = adaptive_cv(&data, a.cv_folds, a.seed)?;
    let (l2, e2, m2) = adaptive_cv(&expanded, a.cv_folds, a.seed)?;
    let meta = [
        ("command", "expand".to_string()),
        ("version", VERSION.to_string()),
        ("seed", a.seed.to_string()),
        ("lambda", "cv".to_string()),
    ];
    let mut table = meta_header(&meta);
    table += "degree,p,lambda_cv,cv_error,selected\n";
    table += &format!("1,{},{},{},{}\n", data.p(), l1, e1, m1);
    table += &format!("2,{},{},{},{}\n", expanded.p(), l2, e2, m2);
    write_out(Some(&a.out.join("comparison.csv")), &table)?;
    print!("{}", table);
    Ok(())
}
