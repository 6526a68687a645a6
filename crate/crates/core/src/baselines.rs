//! Reference estimators: pooled regression on `(x, t)` (LR1), separate
//! regressions per treatment arm (LR2), and a two-headed network (TARnet).
//!
//! Binary outcomes get a logistic link, continuous outcomes a linear one on
//! the standardised outcome.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Standardizer, VarKind};
use crate::error::{Error, Result};
use crate::estimate::EffectModel;
use crate::nn::dist::{bernoulli_logit_log_prob, gaussian_log_prob, sigmoid};
use crate::nn::{Activation, AdamaxConfig, AdamaxState, DenseNet, InitScale, Matrix, ParamStore, Tape, Var};
use crate::train::{fit, Objective, Prepared, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Lr1,
    Lr2,
    Tarnet,
}

impl std::fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BaselineKind::Lr1 => "LR1",
            BaselineKind::Lr2 => "LR2",
            BaselineKind::Tarnet => "TARnet",
        })
    }
}

/// Solver settings for the regression baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlmConfig {
    /// L2 penalty `λ/2·‖w‖²`, intercept included.
    pub lambda: f64,
    /// Stop once every gradient coordinate is below this.
    pub tolerance: f64,
    pub max_iter: usize,
    pub lr: f64,
}

impl Default for GlmConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            tolerance: 1e-6,
            max_iter: 20_000,
            lr: 0.05,
        }
    }
}

/// A fitted generalised linear model `w·[x, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Glm {
    /// Feature weights followed by the intercept.
    pub weights: Vec<f64>,
    pub link: VarKind,
    pub iterations: usize,
    pub converged: bool,
}

fn with_intercept(x: &Matrix) -> Matrix {
    let mut out = Array2::ones((x.nrows(), x.ncols() + 1));
    out.slice_mut(ndarray::s![.., ..x.ncols()]).assign(x);
    out
}

/// Penalised mean negative log-likelihood and its gradient.
fn glm_loss(design: &Matrix, y: &Array1<f64>, w: &Array1<f64>, link: VarKind, lambda: f64) -> (f64, Array1<f64>) {
    let n = design.nrows() as f64;
    let eta = design.dot(w);
    let (nll, resid) = match link {
        VarKind::Binary => {
            let nll = eta
                .iter()
                .zip(y)
                .map(|(&e, &y)| {
                    // log(1 + e^η) − yη, stable on both tails
                    e.max(0.0) + (-e.abs()).exp().ln_1p() - y * e
                })
                .sum::<f64>();
            (nll, eta.mapv(sigmoid) - y)
        }
        VarKind::Continuous => {
            let r = &eta - y;
            (0.5 * r.dot(&r), r)
        }
    };
    let grad = design.t().dot(&resid) / n + lambda * w;
    (nll / n + 0.5 * lambda * w.dot(w), grad)
}

/// Full-batch Adamax on the penalised likelihood. A step that raises the
/// loss is undone, the moments reset and the step size halved, so the
/// iterates descend.
pub fn fit_glm(x: &Matrix, y: &[f64], link: VarKind, config: &GlmConfig, init: Option<&[f64]>) -> Result<Glm> {
    if x.nrows() == 0 || x.nrows() != y.len() {
        return Err(Error::Fit(format!("design has {} rows for {} outcomes", x.nrows(), y.len())));
    }
    if !(config.lambda >= 0.0 && config.tolerance > 0.0 && config.lr > 0.0) {
        return Err(Error::invalid("penalty must be non-negative, tolerance and step size positive"));
    }
    let design = with_intercept(x);
    let p = design.ncols();
    let y = Array1::from(y.to_vec());
    let mut store = ParamStore::new();
    let id = store.add(
        "w",
        match init {
            Some(w0) if w0.len() == p => Array2::from_shape_vec((p, 1), w0.to_vec()).expect("column"),
            Some(w0) => return Err(Error::invalid(format!("initial weights have length {}, expected {p}", w0.len()))),
            None => Array2::zeros((p, 1)),
        },
    );
    // the penalty lives in the loss so that the descent check sees it
    let adamax = AdamaxConfig {
        lr: config.lr,
        weight_decay: 0.0,
        decay: 1.0,
        ..AdamaxConfig::default()
    };
    let mut opt = AdamaxState::new(adamax, &store)?;
    let column = |s: &ParamStore| s.value(id).column(0).to_owned();
    let (mut loss, mut grad) = glm_loss(&design, &y, &column(&store), link, config.lambda);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iter {
        if grad.iter().all(|g| g.abs() < config.tolerance) {
            converged = true;
            break;
        }
        if !loss.is_finite() {
            return Err(Error::Fit("regression loss is not finite".into()));
        }
        iterations += 1;
        let saved = store.clone();
        let g = grad.clone().insert_axis(Axis(1));
        opt.step(&mut store, std::slice::from_ref(&g))?;
        let (l2, g2) = glm_loss(&design, &y, &column(&store), link, config.lambda);
        if l2 <= loss {
            (loss, grad) = (l2, g2);
        } else {
            // momentum that overshot is not a descent direction; restart it
            let lr = opt.lr * 0.5;
            if lr < 1e-14 {
                break;
            }
            store = saved;
            opt = AdamaxState::new(AdamaxConfig { lr, ..adamax }, &store)?;
        }
    }
    Ok(Glm {
        weights: column(&store).to_vec(),
        link,
        iterations,
        converged,
    })
}

impl Glm {
    /// Mean (or probability) of the outcome for each row of standardised `x`.
    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        let w = Array1::from(self.weights.clone());
        let eta = with_intercept(x).dot(&w);
        match self.link {
            VarKind::Binary => eta.mapv(sigmoid).to_vec(),
            VarKind::Continuous => eta.to_vec(),
        }
    }
}

fn outcome_target(ds: &Dataset, st: &Standardizer) -> Vec<f64> {
    match ds.outcome_kind {
        VarKind::Binary => ds.y.clone(),
        VarKind::Continuous => st.transform_y(&ds.y),
    }
}

fn to_outcome_scale(values: Vec<f64>, kind: VarKind, st: &Standardizer) -> Vec<f64> {
    match kind {
        VarKind::Binary => values,
        VarKind::Continuous => values.into_iter().map(|v| st.inverse_y(v)).collect(),
    }
}

fn check_layout(kinds: &[VarKind], x: &Matrix) -> Result<()> {
    if x.ncols() != kinds.len() {
        return Err(Error::invalid(format!("expected {} covariates, got {}", kinds.len(), x.ncols())));
    }
    Ok(())
}

/// One regression on `[x, t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lr1 {
    pub standardizer: Standardizer,
    pub covariate_kinds: Vec<VarKind>,
    pub outcome_kind: VarKind,
    pub glm: Glm,
}

pub fn fit_lr1(ds: &Dataset, config: &GlmConfig) -> Result<Lr1> {
    fit_lr1_from(ds, config, None)
}

/// As [`fit_lr1`], starting the solver from `init` (features, `t`, intercept).
pub fn fit_lr1_from(ds: &Dataset, config: &GlmConfig, init: Option<&[f64]>) -> Result<Lr1> {
    ds.validate()?;
    let treated = ds.n_treated();
    if treated == 0 || treated == ds.len() {
        return Err(Error::Fit("treatment is constant, so its coefficient is not identified".into()));
    }
    let st = Standardizer::fit(ds);
    let xt = append_treatment(&st.transform_x(&ds.x), &ds.treatment_f64());
    let glm = fit_glm(&xt, &outcome_target(ds, &st), ds.outcome_kind, config, init)?;
    Ok(Lr1 {
        standardizer: st,
        covariate_kinds: ds.covariate_kinds.clone(),
        outcome_kind: ds.outcome_kind,
        glm,
    })
}

fn append_treatment(x: &Matrix, t: &[f64]) -> Matrix {
    let mut out = Array2::zeros((x.nrows(), x.ncols() + 1));
    out.slice_mut(ndarray::s![.., ..x.ncols()]).assign(x);
    for (i, &ti) in t.iter().enumerate() {
        out[[i, x.ncols()]] = ti;
    }
    out
}

impl Lr1 {
    /// Coefficient on `t` in the linear predictor.
    pub fn treatment_coefficient(&self) -> f64 {
        self.glm.weights[self.glm.weights.len() - 2]
    }
}

impl EffectModel for Lr1 {
    fn potential_outcomes(&self, x: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        check_layout(&self.covariate_kinds, x)?;
        let xs = self.standardizer.transform_x(x);
        let n = xs.nrows();
        let y0 = self.glm.predict(&append_treatment(&xs, &vec![0.0; n]));
        let y1 = self.glm.predict(&append_treatment(&xs, &vec![1.0; n]));
        Ok((
            to_outcome_scale(y0, self.outcome_kind, &self.standardizer),
            to_outcome_scale(y1, self.outcome_kind, &self.standardizer),
        ))
    }
}

/// Separate regressions on the treated and control units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lr2 {
    pub standardizer: Standardizer,
    pub covariate_kinds: Vec<VarKind>,
    pub outcome_kind: VarKind,
    pub treated: Glm,
    pub control: Glm,
}

pub fn fit_lr2(ds: &Dataset, config: &GlmConfig) -> Result<Lr2> {
    ds.validate()?;
    let st = Standardizer::fit(ds);
    let xs = st.transform_x(&ds.x);
    let target = outcome_target(ds, &st);
    let arm = |t_value: u8| -> Result<Glm> {
        let idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.t[i] == t_value).collect();
        if idx.is_empty() {
            return Err(Error::Fit(format!("no units with t={t_value}")));
        }
        let y: Vec<f64> = idx.iter().map(|&i| target[i]).collect();
        fit_glm(&xs.select(Axis(0), &idx), &y, ds.outcome_kind, config, None)
    };
    Ok(Lr2 {
        treated: arm(1)?,
        control: arm(0)?,
        standardizer: st,
        covariate_kinds: ds.covariate_kinds.clone(),
        outcome_kind: ds.outcome_kind,
    })
}

impl EffectModel for Lr2 {
    fn potential_outcomes(&self, x: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        check_layout(&self.covariate_kinds, x)?;
        let xs = self.standardizer.transform_x(x);
        Ok((
            to_outcome_scale(self.control.predict(&xs), self.outcome_kind, &self.standardizer),
            to_outcome_scale(self.treated.predict(&xs), self.outcome_kind, &self.standardizer),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TarnetConfig {
    /// Layers in the shared representation; 0 leaves `x` as the representation.
    pub hidden_layers: usize,
    pub width: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TarnetConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 3,
            width: 200,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

/// Shared ELU trunk with affine treated and control heads.
#[derive(Debug, Clone)]
pub struct Tarnet {
    pub config: TarnetConfig,
    pub standardizer: Standardizer,
    pub covariate_kinds: Vec<VarKind>,
    pub outcome_kind: VarKind,
    pub trunk: DenseNet,
    pub treated: DenseNet,
    pub control: DenseNet,
    pub store: ParamStore,
    trained: bool,
}

impl Tarnet {
    pub fn new(config: TarnetConfig, train: &Dataset) -> Result<Self> {
        train.validate()?;
        if config.width == 0 {
            return Err(Error::invalid("hidden width must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let dx = train.n_covariates();
        let init = InitScale(config.init_scale);
        let widths = vec![config.width; config.hidden_layers];
        let rep = if config.hidden_layers > 0 { config.width } else { dx };
        let trunk = DenseNet::trunk(&mut store, "trunk", dx, &widths, Activation::Elu, init, &mut rng);
        let treated = DenseNet::new(&mut store, "treated", rep, &[], 1, Activation::Elu, init, &mut rng);
        let control = DenseNet::new(&mut store, "control", rep, &[], 1, Activation::Elu, init, &mut rng);
        Ok(Self {
            config,
            standardizer: Standardizer::fit(train),
            covariate_kinds: train.covariate_kinds.clone(),
            outcome_kind: train.outcome_kind,
            trunk,
            treated,
            control,
            store,
            trained: false,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    fn prepare(&self, ds: &Dataset) -> Result<Prepared> {
        if ds.covariate_kinds != self.covariate_kinds || ds.outcome_kind != self.outcome_kind {
            return Err(Error::invalid("dataset layout does not match the model"));
        }
        Ok(Prepared::new(ds, &self.standardizer))
    }

    /// Factual log-likelihood with Adamax weight decay and validation early stopping.
    pub fn train(&mut self, train: &Dataset, validation: &Dataset, config: &TrainConfig) -> Result<TrainReport> {
        for (ds, name) in [(train, "training"), (validation, "validation")] {
            if ds.is_empty() {
                return Err(Error::invalid(format!("{name} split is empty")));
            }
        }
        let (tr, va) = (self.prepare(train)?, self.prepare(validation)?);
        let report = fit(self, &tr, &va, config)?;
        self.trained = true;
        Ok(report)
    }

    /// Outcome logits (binary) or standardised means for both heads.
    fn heads<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let h = self.trunk.forward(tape, &self.store, x)?;
        Ok((
            self.control.forward(tape, &self.store, h)?,
            self.treated.forward(tape, &self.store, h)?,
        ))
    }
}

impl Objective for Tarnet {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn per_unit<'t>(&self, tape: &'t Tape, batch: &Prepared, _rng: &mut ChaCha8Rng) -> Result<Var<'t>> {
        let (c, tr) = self.heads(tape, tape.constant(batch.x.clone()))?;
        let t = tape.constant(batch.t.clone());
        let y = tape.constant(batch.y.clone());
        let m = t * tr + (-t).offset(1.0) * c;
        Ok(match self.outcome_kind {
            VarKind::Binary => bernoulli_logit_log_prob(m, y),
            VarKind::Continuous => gaussian_log_prob(m, tape.scalar(1.0), y),
        })
    }
}

impl EffectModel for Tarnet {
    fn potential_outcomes(&self, x: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        if !self.trained {
            return Err(Error::State("model has not been trained".into()));
        }
        check_layout(&self.covariate_kinds, x)?;
        let tape = Tape::new();
        let (c, t) = self.heads(&tape, tape.constant(self.standardizer.transform_x(x)))?;
        let link = |v: Var<'_>| -> Vec<f64> {
            let col = v.value().column(0).to_vec();
            match self.outcome_kind {
                VarKind::Binary => col.into_iter().map(sigmoid).collect(),
                VarKind::Continuous => to_outcome_scale(col, VarKind::Continuous, &self.standardizer),
            }
        };
        Ok((link(c), link(t)))
    }
}

/// Any fitted baseline behind one interface.
#[derive(Debug, Clone)]
pub enum Baseline {
    Lr1(Lr1),
    Lr2(Lr2),
    Tarnet(Box<Tarnet>),
}

impl Baseline {
    pub fn kind(&self) -> BaselineKind {
        match self {
            Baseline::Lr1(_) => BaselineKind::Lr1,
            Baseline::Lr2(_) => BaselineKind::Lr2,
            Baseline::Tarnet(_) => BaselineKind::Tarnet,
        }
    }
}

impl EffectModel for Baseline {
    fn potential_outcomes(&self, x: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            Baseline::Lr1(m) => m.potential_outcomes(x),
            Baseline::Lr2(m) => m.potential_outcomes(x),
            Baseline::Tarnet(m) => m.potential_outcomes(x),
        }
    }
}
