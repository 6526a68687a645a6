//! Treatment-effect evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("{what}: lengths {a} and {b} differ")));
    }
    if a == 0 {
        return Err(Error::invalid(format!("{what}: empty input")));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean squared difference between true and predicted ITEs.
pub fn pehe(true_ite: &[f64], pred_ite: &[f64]) -> Result<f64> {
    same_len(true_ite.len(), pred_ite.len(), "pehe")?;
    Ok(true_ite
        .iter()
        .zip(pred_ite)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / true_ite.len() as f64)
}

pub fn sqrt_pehe(true_ite: &[f64], pred_ite: &[f64]) -> Result<f64> {
    pehe(true_ite, pred_ite).map(f64::sqrt)
}

pub fn abs_error(truth: f64, estimate: f64) -> f64 {
    (truth - estimate).abs()
}

/// `|mean(true_ite) − mean(pred_ite)|`.
pub fn ate_error(true_ite: &[f64], pred_ite: &[f64]) -> Result<f64> {
    same_len(true_ite.len(), pred_ite.len(), "ate_error")?;
    Ok(abs_error(mean(true_ite), mean(pred_ite)))
}

/// ATE error restricted to treated units.
pub fn att_error(true_ite: &[f64], pred_ite: &[f64], t: &[u8]) -> Result<f64> {
    same_len(true_ite.len(), pred_ite.len(), "att_error")?;
    same_len(true_ite.len(), t.len(), "att_error")?;
    let idx: Vec<usize> = (0..t.len()).filter(|&i| t[i] == 1).collect();
    if idx.is_empty() {
        return Err(Error::invalid("att_error: no treated units"));
    }
    let a: Vec<f64> = idx.iter().map(|&i| true_ite[i]).collect();
    let b: Vec<f64> = idx.iter().map(|&i| pred_ite[i]).collect();
    Ok(abs_error(mean(&a), mean(&b)))
}

/// Experimental ATT: difference of factual means between treated and control
/// units inside the randomized subset.
pub fn randomized_att(t: &[u8], y: &[f64], randomized: &[u8]) -> Result<f64> {
    same_len(t.len(), y.len(), "randomized_att")?;
    same_len(t.len(), randomized.len(), "randomized_att")?;
    let cell = |tv: u8| -> Vec<f64> {
        (0..t.len())
            .filter(|&i| randomized[i] == 1 && t[i] == tv)
            .map(|i| y[i])
            .collect()
    };
    let (y1, y0) = (cell(1), cell(0));
    if y1.is_empty() || y0.is_empty() {
        return Err(Error::invalid("randomized subset lacks a treated or control unit"));
    }
    Ok(mean(&y1) - mean(&y0))
}

/// Policy that treats exactly when the predicted effect is positive.
pub fn policy_from_ite(pred_ite: &[f64]) -> Vec<u8> {
    pred_ite.iter().map(|&v| u8::from(v > 0.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyRisk {
    pub risk: f64,
    /// Some `(t, π)` cell with `t == π` held no randomized units and was
    /// counted as zero.
    pub empty_cell: bool,
}

/// `1 − [E(y | t=1, π=1)·P(π=1) + E(y | t=0, π=0)·P(π=0)]` over the randomized units.
pub fn policy_risk(policy: &[u8], t: &[u8], y: &[f64], randomized: &[u8]) -> Result<PolicyRisk> {
    same_len(policy.len(), t.len(), "policy_risk")?;
    same_len(policy.len(), y.len(), "policy_risk")?;
    same_len(policy.len(), randomized.len(), "policy_risk")?;
    let units: Vec<usize> = (0..t.len()).filter(|&i| randomized[i] == 1).collect();
    if units.is_empty() {
        return Err(Error::invalid("policy_risk: no randomized units"));
    }
    let n = units.len() as f64;
    let p_treat = units.iter().filter(|&&i| policy[i] == 1).count() as f64 / n;
    let mut empty_cell = false;
    let mut cell = |arm: u8| {
        let ys: Vec<f64> = units
            .iter()
            .filter(|&&i| policy[i] == arm && t[i] == arm)
            .map(|&i| y[i])
            .collect();
        if ys.is_empty() {
            empty_cell = true;
            0.0
        } else {
            mean(&ys)
        }
    };
    let value = cell(1) * p_treat + cell(0) * (1.0 - p_treat);
    Ok(PolicyRisk {
        risk: 1.0 - value,
        empty_cell,
    })
}

/// Area under the ROC curve: the probability a random positive outscores a
/// random negative, ties counting one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    same_len(scores.len(), labels.len(), "auc")?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("auc: NaN score"));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("auc: labels contain a single class"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks over ties
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                pos_rank_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// Metric values for one evaluation population; absent entries could not be
/// computed from the available ground truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub sqrt_pehe: Option<f64>,
    pub ate_abs_err: Option<f64>,
    pub att_abs_err: Option<f64>,
    pub policy_risk: Option<f64>,
    pub auc: Option<f64>,
}
