use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Binary,
    Continuous,
}

/// Observational sample: covariates, binary treatment and factual outcome,
/// plus whatever ground truth the source provides.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub t: Vec<u8>,
    pub y: Vec<f64>,
    /// Outcome under the treatment not received.
    pub y_cf: Option<Vec<f64>>,
    /// Noiseless potential-outcome means.
    pub mu0: Option<Vec<f64>>,
    pub mu1: Option<Vec<f64>>,
    pub covariate_kinds: Vec<VarKind>,
    pub covariate_names: Vec<String>,
    pub outcome_kind: VarKind,
    /// Units belonging to a randomised experiment (Jobs).
    pub randomized: Option<Vec<u8>>,
}

impl Dataset {
    /// Builds and validates a dataset with default covariate names.
    pub fn new(
        x: Array2<f64>,
        t: Vec<u8>,
        y: Vec<f64>,
        covariate_kinds: Vec<VarKind>,
        outcome_kind: VarKind,
    ) -> Result<Self> {
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        let ds = Self {
            x,
            t,
            y,
            y_cf: None,
            mu0: None,
            mu1: None,
            covariate_kinds,
            covariate_names: names,
            outcome_kind,
            randomized: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.t.len();
        let check = |what: &str, len: usize| {
            if len != n {
                Err(Error::invalid(format!("{what} has {len} rows, expected {n}")))
            } else {
                Ok(())
            }
        };
        check("x", self.x.nrows())?;
        check("y", self.y.len())?;
        for (name, col) in [("y_cf", &self.y_cf), ("mu0", &self.mu0), ("mu1", &self.mu1)] {
            if let Some(c) = col {
                check(name, c.len())?;
            }
        }
        if let Some(r) = &self.randomized {
            check("randomized", r.len())?;
            if r.iter().any(|&v| v > 1) {
                return Err(Error::invalid("randomized mask must be 0/1"));
            }
        }
        if self.t.iter().any(|&v| v > 1) {
            return Err(Error::invalid("treatment must be 0/1"));
        }
        if self.covariate_kinds.len() != self.x.ncols() {
            return Err(Error::invalid("covariate_kinds length differs from column count"));
        }
        if self.covariate_names.len() != self.x.ncols() {
            return Err(Error::invalid("covariate_names length differs from column count"));
        }
        if self.mu0.is_some() != self.mu1.is_some() {
            return Err(Error::invalid("mu0 and mu1 must be given together"));
        }
        Ok(())
    }

    /// Rows `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let pick_f = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let pick_u = |v: &Vec<u8>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Dataset {
            x: self.x.select(Axis(0), idx),
            t: pick_u(&self.t),
            y: pick_f(&self.y),
            y_cf: self.y_cf.as_ref().map(pick_f),
            mu0: self.mu0.as_ref().map(pick_f),
            mu1: self.mu1.as_ref().map(pick_f),
            covariate_kinds: self.covariate_kinds.clone(),
            covariate_names: self.covariate_names.clone(),
            outcome_kind: self.outcome_kind,
            randomized: self.randomized.as_ref().map(pick_u),
        }
    }

    pub fn treatment_f64(&self) -> Vec<f64> {
        self.t.iter().map(|&t| t as f64).collect()
    }

    pub fn n_treated(&self) -> usize {
        self.t.iter().filter(|&&t| t == 1).count()
    }

    /// Potential outcomes `(y0, y1)` when the counterfactual is known.
    pub fn potential_outcomes(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let ycf = self.y_cf.as_ref()?;
        let (mut y0, mut y1) = (Vec::with_capacity(self.len()), Vec::with_capacity(self.len()));
        for i in 0..self.len() {
            if self.t[i] == 1 {
                y1.push(self.y[i]);
                y0.push(ycf[i]);
            } else {
                y0.push(self.y[i]);
                y1.push(ycf[i]);
            }
        }
        Some((y0, y1))
    }

    /// Ground-truth individual effects: `mu1 - mu0` when available, otherwise
    /// the difference of the two realised potential outcomes.
    pub fn true_ite(&self) -> Option<Vec<f64>> {
        if let (Some(m0), Some(m1)) = (&self.mu0, &self.mu1) {
            return Some(m1.iter().zip(m0).map(|(a, b)| a - b).collect());
        }
        let (y0, y1) = self.potential_outcomes()?;
        Some(y1.iter().zip(&y0).map(|(a, b)| a - b).collect())
    }

    /// Difference between mean treated and mean control factual outcomes.
    pub fn naive_ate(&self) -> Result<f64> {
        let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
        for (&t, &y) in self.t.iter().zip(&self.y) {
            if t == 1 {
                s1 += y;
                n1 += 1;
            } else {
                s0 += y;
                n0 += 1;
            }
        }
        if n1 == 0 || n0 == 0 {
            return Err(Error::invalid("naive ATE needs both treatment groups"));
        }
        Ok(s1 / n1 as f64 - s0 / n0 as f64)
    }

    pub fn binary_columns(&self) -> Vec<usize> {
        self.columns_of(VarKind::Binary)
    }

    pub fn continuous_columns(&self) -> Vec<usize> {
        self.columns_of(VarKind::Continuous)
    }

    fn columns_of(&self, kind: VarKind) -> Vec<usize> {
        self.covariate_kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == kind)
            .map(|(j, _)| j)
            .collect()
    }
}

/// Affine standardisation fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    /// Per-covariate `(mean, sd)`; binary columns keep `(0, 1)`.
    pub covariates: Vec<(f64, f64)>,
    /// Outcome `(mean, sd)`; `(0, 1)` for binary outcomes.
    pub outcome: (f64, f64),
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

impl Standardizer {
    pub fn identity(n_covariates: usize) -> Self {
        Self {
            covariates: vec![(0.0, 1.0); n_covariates],
            outcome: (0.0, 1.0),
        }
    }

    pub fn fit(ds: &Dataset) -> Self {
        let covariates = ds
            .covariate_kinds
            .iter()
            .enumerate()
            .map(|(j, kind)| match kind {
                VarKind::Binary => (0.0, 1.0),
                VarKind::Continuous => mean_sd(ds.x.column(j).iter().copied()),
            })
            .collect();
        let outcome = match ds.outcome_kind {
            VarKind::Binary => (0.0, 1.0),
            VarKind::Continuous => mean_sd(ds.y.iter().copied()),
        };
        Self { covariates, outcome }
    }

    pub fn transform_x(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (m, s) = self.covariates[j];
            col.mapv_inplace(|v| (v - m) / s);
        }
        out
    }

    pub fn transform_y(&self, y: &[f64]) -> Vec<f64> {
        let (m, s) = self.outcome;
        y.iter().map(|v| (v - m) / s).collect()
    }

    pub fn inverse_y(&self, y: f64) -> f64 {
        y * self.outcome.1 + self.outcome.0
    }

    pub fn outcome_scale(&self) -> f64 {
        self.outcome.1
    }
}
