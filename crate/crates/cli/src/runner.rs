//! Runs an experiment config end to end.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use cevae_core::baselines::{fit_lr1, fit_lr2, Tarnet};
use cevae_core::cevae::{CevaeModel, PredictOptions};
use cevae_core::data::{self, load_ihdp, load_jobs, load_twins, split, BenchmarkData, Dataset, SplitSpec, TwinRecords};
use cevae_core::datagen::{gen_synthetic_twins, gen_toy, toy_true_ate, twins_from_records, SyntheticTwinsConfig, ToyConfig, TwinsProxyConfig};
use cevae_core::estimate::EstimateReport;
use cevae_core::metrics::MetricReport;
use cevae_core::oracle::{self, BinaryProxyModel};
use cevae_core::train::TrainReport;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{EstimatorKind, EstimatorSpec, ExperimentConfig, ExperimentKind};
use crate::results::{summarize, write_curves, write_results, ResultRow, Summary};
use crate::CliError;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replications evaluated concurrently; 0 means one.
    pub workers: usize,
    pub output_dir: Option<PathBuf>,
    /// Replaces the config's seed list.
    pub seed: Option<u64>,
    /// Suppress per-job progress on stderr.
    pub quiet: bool,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub rows: Vec<ResultRow>,
    pub summary: Summary,
    pub output_dir: PathBuf,
    pub failed: usize,
}

impl RunOutcome {
    /// 0 when every row succeeded, 1 when some training failed.
    pub fn exit_code(&self) -> i32 {
        i32::from(self.failed > 0)
    }
}

/// One axis value of the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Point {
    Toy { n: usize },
    SyntheticTwins { n: usize, flip: f64 },
    Twins { flip: f64 },
    Ihdp { replication: usize },
    Jobs { fold: usize },
}

impl Point {
    fn describe(&self) -> String {
        match self {
            Point::Toy { n } => format!("n={n}"),
            Point::SyntheticTwins { n, flip } => format!("n={n} flip={flip}"),
            Point::Twins { flip } => format!("flip={flip}"),
            Point::Ihdp { replication } => format!("replication={replication}"),
            Point::Jobs { fold } => format!("fold={fold}"),
        }
    }
}

/// Data for one `(grid point, seed)`: fitting splits plus the evaluation populations.
struct Task {
    train: Dataset,
    validation: Dataset,
    /// Units the estimators saw during fitting.
    within: Dataset,
    out: Option<Dataset>,
    /// Population ATE when it is known exactly.
    ate_truth: Option<f64>,
}

fn data_dir(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    cfg.data_dir
        .clone()
        .or_else(data::data_dir_from_env)
        .ok_or_else(|| CliError::DataNotFound(format!(
            "{} needs external data: set data_dir in the config or {}",
            cfg.experiment,
            data::DATA_DIR_ENV
        )))
}

fn points(cfg: &ExperimentConfig) -> Vec<Point> {
    let g = &cfg.grid;
    match cfg.experiment {
        ExperimentKind::Toy => g.sample_sizes.iter().map(|&n| Point::Toy { n }).collect(),
        ExperimentKind::SyntheticTwins => g
            .sample_sizes
            .iter()
            .flat_map(|&n| g.flip_probs.iter().map(move |&flip| Point::SyntheticTwins { n, flip }))
            .collect(),
        ExperimentKind::Twins => g.flip_probs.iter().map(|&flip| Point::Twins { flip }).collect(),
        ExperimentKind::Ihdp => (1..=g.replications).map(|replication| Point::Ihdp { replication }).collect(),
        ExperimentKind::Jobs => (1..=g.folds).map(|fold| Point::Jobs { fold }).collect(),
        ExperimentKind::OracleSweep => Vec::new(),
    }
}

fn union(a: &Dataset, b: &Dataset) -> Dataset {
    let mut out = a.clone();
    out.x = ndarray::concatenate(ndarray::Axis(0), &[a.x.view(), b.x.view()]).expect("same covariates");
    out.t.extend(&b.t);
    out.y.extend(&b.y);
    let join = |x: &Option<Vec<f64>>, y: &Option<Vec<f64>>| match (x, y) {
        (Some(x), Some(y)) => Some(x.iter().chain(y).copied().collect()),
        _ => None,
    };
    out.y_cf = join(&a.y_cf, &b.y_cf);
    out.mu0 = join(&a.mu0, &b.mu0);
    out.mu1 = join(&a.mu1, &b.mu1);
    out.randomized = match (&a.randomized, &b.randomized) {
        (Some(x), Some(y)) => Some(x.iter().chain(y).copied().collect()),
        _ => None,
    };
    out
}

fn task_from_split(ds: &Dataset, spec: &SplitSpec, ate_truth: Option<f64>) -> Result<Task, CliError> {
    let s = split(ds, spec)?;
    let within = union(&s.train, &s.validation);
    Ok(Task {
        out: (!s.test.is_empty()).then_some(s.test),
        train: s.train,
        validation: s.validation,
        within,
        ate_truth,
    })
}

/// Benchmark files already carry a test set; the training pool is cut into
/// train and validation in the configured proportion.
fn task_from_benchmark(b: BenchmarkData, cfg: &ExperimentConfig, seed: u64, rep: u64) -> Result<Task, CliError> {
    match b.test {
        Some(test) => {
            let sp = &cfg.split;
            let tv = sp.train + sp.validation;
            let spec = SplitSpec::new(sp.train / tv, sp.validation / tv, 0.0).with_seed(seed, rep);
            let s = split(&b.train, &spec)?;
            Ok(Task {
                within: b.train,
                train: s.train,
                validation: s.validation,
                out: Some(test),
                ate_truth: None,
            })
        }
        None => task_from_split(&b.train, &cfg.split.spec(seed, rep), None),
    }
}

fn build_task(
    cfg: &ExperimentConfig,
    point: Point,
    seed: u64,
    twins: Option<&TwinRecords>,
    dir: Option<&Path>,
) -> Result<Task, CliError> {
    match point {
        Point::Toy { n } => {
            let g = gen_toy(&ToyConfig::new(n, seed))?;
            task_from_split(&g.dataset, &cfg.split.spec(seed, 0), Some(toy_true_ate()))
        }
        Point::SyntheticTwins { n, flip } => {
            let g = gen_synthetic_twins(&SyntheticTwinsConfig::new(n, flip, seed))?;
            task_from_split(&g.dataset, &cfg.split.spec(seed, 0), None)
        }
        Point::Twins { flip } => {
            let records = twins.expect("twin records loaded before dispatch");
            let g = twins_from_records(records, &TwinsProxyConfig::new(flip, seed))?;
            task_from_split(&g.dataset, &cfg.split.spec(seed, 0), None)
        }
        Point::Ihdp { replication } => {
            let b = load_ihdp(dir.expect("data dir"), replication)?;
            task_from_benchmark(b, cfg, seed, replication as u64)
        }
        Point::Jobs { fold } => {
            let b = load_jobs(dir.expect("data dir"), fold)?;
            task_from_benchmark(b, cfg, seed, fold as u64)
        }
    }
}

/// Predicts with a constant difference of factual means.
fn naive_reports(task: &Task) -> Result<(EstimateReport, Option<EstimateReport>), CliError> {
    let d = &task.within;
    let arm = |v: u8| {
        let ys: Vec<f64> = (0..d.len()).filter(|&i| d.t[i] == v).map(|i| d.y[i]).collect();
        ys.iter().sum::<f64>() / ys.len().max(1) as f64
    };
    if d.n_treated() == 0 || d.n_treated() == d.len() {
        return Err(CliError::Core(cevae_core::Error::Fit("naive estimate needs both arms".into())));
    }
    let (m0, m1) = (arm(0), arm(1));
    let report = |ds: &Dataset| EstimateReport::from_potential(vec![m0; ds.len()], vec![m1; ds.len()], &ds.t);
    Ok((report(&task.within), task.out.as_ref().map(report)))
}

struct Fitted {
    within: EstimateReport,
    out: Option<EstimateReport>,
    training: Option<TrainReport>,
}

fn fit_estimator(spec: &EstimatorSpec, cfg: &ExperimentConfig, task: &Task, seed: u64) -> Result<Fitted, CliError> {
    let both = |f: &dyn Fn(&Dataset) -> cevae_core::Result<EstimateReport>| -> Result<_, CliError> {
        Ok((f(&task.within)?, task.out.as_ref().map(f).transpose()?))
    };
    let tc = cfg.train.config(seed);
    let (within, out, training) = match spec.kind {
        EstimatorKind::Naive => {
            let (a, b) = naive_reports(task)?;
            (a, b, None)
        }
        EstimatorKind::Lr1 => {
            let m = fit_lr1(&task.train, &cfg.glm)?;
            let (a, b) = both(&|d| EstimateReport::predict(&m, d))?;
            (a, b, None)
        }
        EstimatorKind::Lr2 => {
            let m = fit_lr2(&task.train, &cfg.glm)?;
            let (a, b) = both(&|d| EstimateReport::predict(&m, d))?;
            (a, b, None)
        }
        EstimatorKind::Tarnet => {
            let mut m = Tarnet::new(spec.tarnet(&cfg.tarnet, seed), &task.train)?;
            let rep = m.train(&task.train, &task.validation, &tc)?;
            let (a, b) = both(&|d| EstimateReport::predict(&m, d))?;
            (a, b, Some(rep))
        }
        EstimatorKind::Cevae => {
            let mut m = CevaeModel::new(spec.cevae(&cfg.cevae, seed), &task.train)?;
            let rep = m.train(&task.train, &task.validation, &tc)?;
            let opts = PredictOptions {
                samples: cfg.train.posterior_samples,
                seed,
                workers: 1,
            };
            let (a, b) = both(&|d| m.estimate_effects(d, &opts))?;
            (a, b, Some(rep))
        }
    };
    Ok(Fitted { within, out, training })
}

fn base_row(cfg: &ExperimentConfig, hash: &str, point: Point, estimator: String, seed: u64) -> ResultRow {
    let (n, flip_prob, replication) = match point {
        Point::Toy { n } => (Some(n), None, None),
        Point::SyntheticTwins { n, flip } => (Some(n), Some(flip), None),
        Point::Twins { flip } => (None, Some(flip), None),
        Point::Ihdp { replication } => (None, None, Some(replication)),
        Point::Jobs { fold } => (None, None, Some(fold)),
    };
    ResultRow {
        experiment: cfg.experiment.to_string(),
        config_hash: hash.to_string(),
        n,
        flip_prob,
        replication,
        estimator,
        seed,
        status: "failed".into(),
        ate_true: None,
        ate_estimate: None,
        ate_abs_err_in: None,
        sqrt_pehe_in: None,
        att_abs_err_in: None,
        auc_in: None,
        policy_risk_in: None,
        ate_abs_err_out: None,
        sqrt_pehe_out: None,
        att_abs_err_out: None,
        auc_out: None,
        policy_risk_out: None,
        epochs_run: None,
        final_train_objective: None,
        final_validation_objective: None,
        error: String::new(),
    }
}

fn evaluate(report: &EstimateReport, ds: &Dataset, truth: Option<f64>) -> Result<MetricReport, CliError> {
    let mut m = report.metrics(ds)?;
    if let Some(t) = truth {
        m.ate_abs_err = Some((report.ate - t).abs());
    }
    Ok(m)
}

fn fill_row(row: &mut ResultRow, fitted: &Fitted, task: &Task) -> Result<(), CliError> {
    let mi = evaluate(&fitted.within, &task.within, task.ate_truth)?;
    row.ate_estimate = Some(fitted.within.ate);
    row.ate_true = task.ate_truth.or_else(|| {
        task.within
            .true_ite()
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
    });
    row.ate_abs_err_in = mi.ate_abs_err;
    row.sqrt_pehe_in = mi.sqrt_pehe;
    row.att_abs_err_in = mi.att_abs_err;
    row.auc_in = mi.auc;
    row.policy_risk_in = mi.policy_risk;
    if let (Some(rep), Some(ds)) = (&fitted.out, &task.out) {
        let mo = evaluate(rep, ds, task.ate_truth)?;
        row.ate_abs_err_out = mo.ate_abs_err;
        row.sqrt_pehe_out = mo.sqrt_pehe;
        row.att_abs_err_out = mo.att_abs_err;
        row.auc_out = mo.auc;
        row.policy_risk_out = mo.policy_risk;
    }
    if let Some(tr) = &fitted.training {
        row.epochs_run = Some(tr.epochs_run);
        row.final_train_objective = tr.final_train_objective();
        row.final_validation_objective = Some(tr.best_validation);
    }
    row.status = "ok".into();
    Ok(())
}

fn run_job(
    cfg: &ExperimentConfig,
    hash: &str,
    point: Point,
    seed: u64,
    twins: Option<&TwinRecords>,
    dir: Option<&Path>,
) -> Result<Vec<ResultRow>, CliError> {
    let task = build_task(cfg, point, seed, twins, dir)?;
    let mut rows = Vec::with_capacity(cfg.estimators.len());
    for spec in &cfg.estimators {
        let mut row = base_row(cfg, hash, point, spec.label(), seed);
        let result = fit_estimator(spec, cfg, &task, seed).and_then(|f| fill_row(&mut row, &f, &task));
        if let Err(e) = result {
            row.status = "failed".into();
            row.error = e.to_string();
        }
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleRow {
    pub rho_t: f64,
    pub rho_x: f64,
    pub true_do: f64,
    pub wrong_adjust: Option<f64>,
    pub true_contrast: f64,
    pub wrong_contrast: Option<f64>,
}

/// `P(y=1|do(t=1))` and the proxy-adjusted estimate over a `ρt × ρx` grid.
pub fn oracle_sweep(points: usize) -> Result<Vec<OracleRow>, CliError> {
    let g = oracle::grid(0.0, 1.0, points);
    let mut rows = Vec::with_capacity(points * points);
    for &rho_t in &g {
        for &rho_x in &g {
            let m = BinaryProxyModel::new(rho_t, rho_x)?;
            let gap = oracle::wrong_effect_gap(&m).ok();
            rows.push(OracleRow {
                rho_t,
                rho_x,
                true_do: oracle::true_do(&m, 1)?,
                wrong_adjust: oracle::wrong_adjust(&m, 1).ok(),
                true_contrast: oracle::true_do(&m, 1)? - oracle::true_do(&m, 0)?,
                wrong_contrast: gap.map(|g| g.wrong_contrast),
            });
        }
    }
    Ok(rows)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Runs every `(grid point, seed)` job, writes `results.csv`, `summary.json`,
/// `curves.csv` and the effective `config.toml` into the output directory.
pub fn run(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let mut cfg = config.clone();
    if let Some(s) = opts.seed {
        cfg.seeds = vec![s];
    }
    if let Some(d) = &opts.output_dir {
        cfg.output_dir = d.clone();
    }
    cfg.validate()?;
    let hash = cfg.hash();
    let out_dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml()).map_err(|e| CliError::Io(e.to_string()))?;

    if cfg.experiment == ExperimentKind::OracleSweep {
        let rows = oracle_sweep(cfg.grid.rho_points)?;
        let mut w = csv::Writer::from_path(out_dir.join("oracle.csv")).map_err(|e| CliError::Io(e.to_string()))?;
        for r in &rows {
            w.serialize(r).map_err(|e| CliError::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::Io(e.to_string()))?;
        let summary = Summary {
            experiment: cfg.experiment.to_string(),
            config_hash: hash,
            rows: rows.len(),
            ..summarize(&[])
        };
        write_json(&out_dir.join("summary.json"), &summary)?;
        return Ok(RunOutcome {
            rows: Vec::new(),
            summary,
            output_dir: out_dir,
            failed: 0,
        });
    }

    // external data is resolved before any work starts
    let dir = match cfg.experiment {
        ExperimentKind::Twins | ExperimentKind::Ihdp | ExperimentKind::Jobs => Some(data_dir(&cfg)?),
        _ => None,
    };
    let twins: Option<Arc<TwinRecords>> = match cfg.experiment {
        ExperimentKind::Twins => Some(Arc::new(load_twins(dir.as_deref().expect("resolved"))?)),
        _ => None,
    };
    match cfg.experiment {
        ExperimentKind::Ihdp => {
            let d = dir.as_deref().expect("resolved");
            load_ihdp(d, 1)?;
            let available = data::benchmarks::ihdp_replications(d)?;
            if cfg.grid.replications > available {
                return Err(CliError::Config(format!(
                    "{} IHDP replications requested, {available} available",
                    cfg.grid.replications
                )));
            }
        }
        ExperimentKind::Jobs => {
            load_jobs(dir.as_deref().expect("resolved"), 1)?;
        }
        _ => {}
    }

    let jobs: Vec<(usize, Point, u64)> = points(&cfg)
        .into_iter()
        .enumerate()
        .flat_map(|(k, p)| cfg.seeds.iter().map(move |&s| (k, p, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    let results: Vec<Result<Vec<ResultRow>, CliError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(_, p, s)| {
                let r = run_job(&cfg, &hash, p, s, twins.as_deref(), dir.as_deref());
                if !opts.quiet {
                    let status = match &r {
                        Ok(rows) => format!("{}/{} estimators ok", rows.iter().filter(|r| r.is_ok()).count(), rows.len()),
                        Err(e) => format!("error: {e}"),
                    };
                    eprintln!("[{} {} seed={s}] {status}", cfg.experiment, p.describe());
                }
                r
            })
            .collect()
    });
    // order: grid point, estimator as configured, seed
    let mut keyed = Vec::new();
    for (&(k, _, s), r) in jobs.iter().zip(results) {
        for (e, row) in r?.into_iter().enumerate() {
            keyed.push(((k, e, s), row));
        }
    }
    keyed.sort_by_key(|(key, _)| *key);
    let rows: Vec<ResultRow> = keyed.into_iter().map(|(_, r)| r).collect();

    write_results(&out_dir.join("results.csv"), &rows)?;
    let summary = summarize(&rows);
    write_json(&out_dir.join("summary.json"), &summary)?;
    write_curves(&out_dir.join("curves.csv"), &summary)?;
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    Ok(RunOutcome {
        rows,
        summary,
        output_dir: out_dir,
        failed,
    })
}
