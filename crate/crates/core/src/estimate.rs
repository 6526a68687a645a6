//! Estimator-agnostic effect reports.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::Result;
use crate::metrics::{self, MetricReport};
use crate::nn::Matrix;

/// Anything that predicts both potential outcomes from raw covariates.
pub trait EffectModel {
    /// `(ŷ0, ŷ1)` per row of `x`.
    fn potential_outcomes(&self, x: &Matrix) -> Result<(Vec<f64>, Vec<f64>)>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub ite: Vec<f64>,
    pub ate: f64,
    /// Mean ITE over treated units; absent without treated units.
    pub att: Option<f64>,
    pub final_train_objective: Option<f64>,
    pub final_validation_objective: Option<f64>,
    pub epochs_run: Option<usize>,
}

impl EstimateReport {
    pub fn from_potential(y0: Vec<f64>, y1: Vec<f64>, t: &[u8]) -> Self {
        let ite: Vec<f64> = y1.iter().zip(&y0).map(|(a, b)| a - b).collect();
        let ate = ite.iter().sum::<f64>() / ite.len().max(1) as f64;
        let treated: Vec<f64> = ite.iter().zip(t).filter(|(_, &t)| t == 1).map(|(v, _)| *v).collect();
        let att = (!treated.is_empty()).then(|| treated.iter().sum::<f64>() / treated.len() as f64);
        Self {
            y0,
            y1,
            ite,
            ate,
            att,
            final_train_objective: None,
            final_validation_objective: None,
            epochs_run: None,
        }
    }

    pub fn predict<M: EffectModel + ?Sized>(model: &M, ds: &Dataset) -> Result<Self> {
        let (y0, y1) = model.potential_outcomes(&ds.x)?;
        Ok(Self::from_potential(y0, y1, &ds.t))
    }

    /// Predicted outcome under the treatment each unit did not receive.
    pub fn counterfactual(&self, t: &[u8]) -> Vec<f64> {
        t.iter()
            .enumerate()
            .map(|(i, &ti)| if ti == 1 { self.y0[i] } else { self.y1[i] })
            .collect()
    }

    /// Every metric `ds` has ground truth for.
    pub fn metrics(&self, ds: &Dataset) -> Result<MetricReport> {
        let mut m = MetricReport::default();
        if let Some(truth) = ds.true_ite() {
            m.sqrt_pehe = Some(metrics::sqrt_pehe(&truth, &self.ite)?);
            m.ate_abs_err = Some(metrics::ate_error(&truth, &self.ite)?);
            if ds.n_treated() > 0 {
                m.att_abs_err = Some(metrics::att_error(&truth, &self.ite, &ds.t)?);
            }
        }
        if let Some(ycf) = &ds.y_cf {
            let labels: Vec<u8> = ycf.iter().map(|&v| u8::from(v > 0.5)).collect();
            let binary = ycf.iter().all(|&v| v == 0.0 || v == 1.0);
            let both = labels.contains(&1) && labels.contains(&0);
            if binary && both {
                m.auc = Some(metrics::auc(&self.counterfactual(&ds.t), &labels)?);
            }
        }
        if let Some(e) = &ds.randomized {
            if e.contains(&1) {
                let policy = metrics::policy_from_ite(&self.ite);
                m.policy_risk = Some(metrics::policy_risk(&policy, &ds.t, &ds.y, e)?.risk);
                if let Ok(att) = metrics::randomized_att(&ds.t, &ds.y, e) {
                    let sel: Vec<f64> = (0..ds.len())
                        .filter(|&i| ds.t[i] == 1 && e[i] == 1)
                        .map(|i| self.ite[i])
                        .collect();
                    if !sel.is_empty() {
                        let est = sel.iter().sum::<f64>() / sel.len() as f64;
                        m.att_abs_err = Some(metrics::abs_error(att, est));
                    }
                }
            }
        }
        Ok(m)
    }
}
