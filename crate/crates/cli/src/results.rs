//! Result rows, the results CSV and aggregate summaries.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Metric columns, each present as `<name>_in` and `<name>_out`.
pub const METRICS: [&str; 5] = ["ate_abs_err", "sqrt_pehe", "att_abs_err", "auc", "policy_risk"];

/// One `(grid point, estimator, seed)` outcome. Column order is the CSV order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub config_hash: String,
    pub n: Option<usize>,
    pub flip_prob: Option<f64>,
    pub replication: Option<usize>,
    pub estimator: String,
    pub seed: u64,
    /// `ok` or `failed`.
    pub status: String,
    pub ate_true: Option<f64>,
    pub ate_estimate: Option<f64>,
    pub ate_abs_err_in: Option<f64>,
    pub sqrt_pehe_in: Option<f64>,
    pub att_abs_err_in: Option<f64>,
    pub auc_in: Option<f64>,
    pub policy_risk_in: Option<f64>,
    pub ate_abs_err_out: Option<f64>,
    pub sqrt_pehe_out: Option<f64>,
    pub att_abs_err_out: Option<f64>,
    pub auc_out: Option<f64>,
    pub policy_risk_out: Option<f64>,
    pub epochs_run: Option<usize>,
    pub final_train_objective: Option<f64>,
    pub final_validation_objective: Option<f64>,
    pub error: String,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "ate_abs_err_in" => self.ate_abs_err_in,
            "sqrt_pehe_in" => self.sqrt_pehe_in,
            "att_abs_err_in" => self.att_abs_err_in,
            "auc_in" => self.auc_in,
            "policy_risk_in" => self.policy_risk_in,
            "ate_abs_err_out" => self.ate_abs_err_out,
            "sqrt_pehe_out" => self.sqrt_pehe_out,
            "att_abs_err_out" => self.att_abs_err_out,
            "auc_out" => self.auc_out,
            "policy_risk_out" => self.policy_risk_out,
            _ => None,
        }
    }

    fn group_key(&self) -> GroupKey {
        GroupKey {
            n: self.n,
            flip_prob: self.flip_prob.map(f64::to_bits),
            estimator: self.estimator.clone(),
        }
    }
}

pub fn metric_columns() -> Vec<String> {
    ["in", "out"]
        .iter()
        .flat_map(|s| METRICS.iter().map(move |m| format!("{m}_{s}")))
        .collect()
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| CliError::Parse(format!("{} row {}: {e}", path.display(), i + 2))))
        .collect()
}

/// Mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

impl MeanSe {
    /// `None` for an empty slice; a single value has standard error 0.
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Some(Self { mean, se, count: n })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct GroupKey {
    n: Option<usize>,
    flip_prob: Option<u64>,
    estimator: String,
}

/// Aggregate of all seeds and replications at one grid point for one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub n: Option<usize>,
    pub flip_prob: Option<f64>,
    pub estimator: String,
    pub rows: usize,
    pub failed: usize,
    pub metrics: BTreeMap<String, MeanSe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub experiment: String,
    pub config_hash: String,
    pub rows: usize,
    pub failed: usize,
    pub groups: Vec<GroupSummary>,
}

/// Groups rows by grid point and estimator (in first-appearance order of
/// estimators) and reports mean ± standard error of every metric over the
/// successful rows.
pub fn summarize(rows: &[ResultRow]) -> Summary {
    let mut estimator_order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<GroupKey, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        if !estimator_order.contains(&r.estimator) {
            estimator_order.push(r.estimator.clone());
        }
        groups.entry(r.group_key()).or_default().push(r);
    }
    let mut out: Vec<GroupSummary> = groups
        .into_iter()
        .map(|(k, members)| {
            let ok: Vec<&ResultRow> = members.iter().copied().filter(|r| r.is_ok()).collect();
            let mut metrics = BTreeMap::new();
            for col in metric_columns() {
                let mut vals: Vec<f64> = ok.iter().filter_map(|r| r.metric(&col)).collect();
                // row order must not change the floating-point sums
                vals.sort_by(f64::total_cmp);
                if let Some(ms) = MeanSe::of(&vals) {
                    metrics.insert(col, ms);
                }
            }
            GroupSummary {
                n: k.n,
                flip_prob: k.flip_prob.map(f64::from_bits),
                estimator: k.estimator,
                rows: members.len(),
                failed: members.len() - ok.len(),
                metrics,
            }
        })
        .collect();
    let pos = |e: &str| estimator_order.iter().position(|x| x == e).unwrap_or(usize::MAX);
    out.sort_by(|a, b| {
        (a.n, a.flip_prob.map(f64::to_bits), pos(&a.estimator)).cmp(&(b.n, b.flip_prob.map(f64::to_bits), pos(&b.estimator)))
    });
    let first = rows.first();
    Summary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        experiment: first.map(|r| r.experiment.clone()).unwrap_or_default(),
        config_hash: first.map(|r| r.config_hash.clone()).unwrap_or_default(),
        rows: rows.len(),
        failed: rows.iter().filter(|r| !r.is_ok()).count(),
        groups: out,
    }
}

/// Plot-ready long table: one line per group and metric.
pub fn write_curves(path: &Path, summary: &Summary) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(e.to_string()))?;
    w.write_record(["n", "flip_prob", "estimator", "metric", "mean", "se", "count"])
        .map_err(|e| CliError::Io(e.to_string()))?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for g in &summary.groups {
        for (m, s) in &g.metrics {
            w.write_record([
                opt(g.n.map(|v| v.to_string())),
                opt(g.flip_prob.map(|v| v.to_string())),
                g.estimator.clone(),
                m.clone(),
                s.mean.to_string(),
                s.se.to_string(),
                s.count.to_string(),
            ])
            .map_err(|e| CliError::Io(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

/// Fixed-width text rendering of a summary.
pub fn render_table(summary: &Summary) -> String {
    let mut cols: Vec<String> = Vec::new();
    for g in &summary.groups {
        for m in g.metrics.keys() {
            if !cols.contains(m) {
                cols.push(m.clone());
            }
        }
    }
    let order = metric_columns();
    cols.sort_by_key(|c| order.iter().position(|o| o == c));
    let mut s = format!("{:<8} {:<6} {:<14} {:>4}", "n", "flip", "estimator", "runs");
    for c in &cols {
        s.push_str(&format!(" {c:>22}"));
    }
    s.push('\n');
    for g in &summary.groups {
        s.push_str(&format!(
            "{:<8} {:<6} {:<14} {:>4}",
            g.n.map_or("-".into(), |v| v.to_string()),
            g.flip_prob.map_or("-".into(), |v| v.to_string()),
            g.estimator,
            g.rows - g.failed
        ));
        for c in &cols {
            let cell = g.metrics.get(c).map_or("-".into(), |m| format!("{:.4} ± {:.4}", m.mean, m.se));
            s.push_str(&format!(" {cell:>22}"));
        }
        s.push('\n');
    }
    s
}
