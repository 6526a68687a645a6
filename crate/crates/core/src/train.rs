//! Minibatch Adamax ascent with validation early stopping, shared by CEVAE
//! and TARnet.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Standardizer, VarKind};
use crate::error::{Error, Result};
use crate::nn::{AdamaxConfig, AdamaxState, Matrix, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adamax: AdamaxConfig,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    /// Posterior samples per unit when predicting.
    pub samples: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adamax: AdamaxConfig::default(),
            max_epochs: 200,
            batch_size: 100,
            patience: 10,
            samples: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::invalid("posterior sample count must be at least 1"));
        }
        if !(self.adamax.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("batch size and epoch budget must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-unit objective over the epoch's minibatches.
    pub train_objective: f64,
    /// Mean per-unit objective on the validation split after the epoch.
    pub validation_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_validation: f64,
    pub epochs_run: usize,
}

impl TrainReport {
    pub fn final_train_objective(&self) -> Option<f64> {
        self.history.get(self.best_epoch.checked_sub(1)?).map(|r| r.train_objective)
    }
}

/// Model inputs after standardisation, as tape-ready matrices.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub x: Matrix,
    pub x_bin: Matrix,
    pub x_cont: Matrix,
    pub t: Matrix,
    pub y: Matrix,
}

impl Prepared {
    pub fn new(ds: &Dataset, st: &Standardizer) -> Self {
        let x = st.transform_x(&ds.x);
        let col = |v: Vec<f64>| Array2::from_shape_vec((v.len(), 1), v).expect("column");
        Prepared {
            x_bin: x.select(Axis(1), &ds.binary_columns()),
            x_cont: x.select(Axis(1), &ds.continuous_columns()),
            x,
            t: col(ds.treatment_f64()),
            y: col(match ds.outcome_kind {
                VarKind::Binary => ds.y.clone(),
                VarKind::Continuous => st.transform_y(&ds.y),
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.t.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rows(&self, idx: &[usize]) -> Prepared {
        Prepared {
            x: self.x.select(Axis(0), idx),
            x_bin: self.x_bin.select(Axis(0), idx),
            x_cont: self.x_cont.select(Axis(0), idx),
            t: self.t.select(Axis(0), idx),
            y: self.y.select(Axis(0), idx),
        }
    }
}

/// A model trained by maximising a per-unit objective.
pub trait Objective {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    /// `n×1` objective values for the rows of `batch`; larger is better.
    fn per_unit<'t>(&self, tape: &'t Tape, batch: &Prepared, rng: &mut ChaCha8Rng) -> Result<Var<'t>>;
    /// Criterion for early stopping; the training objective unless overridden.
    fn validation_per_unit<'t>(&self, tape: &'t Tape, batch: &Prepared, rng: &mut ChaCha8Rng) -> Result<Var<'t>> {
        self.per_unit(tape, batch, rng)
    }
}

const VALIDATION_CHUNK: usize = 2000;

/// Mean per-unit objective over `data`, evaluated in chunks with noise from `rng`.
pub fn mean_objective<O: Objective + ?Sized>(model: &O, data: &Prepared, rng: &mut ChaCha8Rng) -> Result<f64> {
    mean_over(data, |tape, b| model.per_unit(tape, b, rng))
}

/// Mean per-unit early-stopping criterion over `data`.
pub fn mean_validation<O: Objective + ?Sized>(model: &O, data: &Prepared, rng: &mut ChaCha8Rng) -> Result<f64> {
    mean_over(data, |tape, b| model.validation_per_unit(tape, b, rng))
}

fn mean_over<F>(data: &Prepared, mut eval: F) -> Result<f64>
where
    F: for<'t> FnMut(&'t Tape, &Prepared) -> Result<Var<'t>>,
{
    let n = data.len();
    let mut total = 0.0;
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(VALIDATION_CHUNK) {
        let tape = Tape::new();
        let obj = eval(&tape, &data.rows(chunk))?;
        total += obj.sum().scalar();
    }
    Ok(total / n as f64)
}

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s);
    rng
}

/// Minibatch Adamax on the negated mean objective; weight decay is applied by
/// the optimiser. Returns with the best-validation parameters restored.
pub fn fit<O: Objective + ?Sized>(
    model: &mut O,
    train: &Prepared,
    validation: &Prepared,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::invalid("training and validation splits must be non-empty"));
    }
    let mut opt = AdamaxState::new(config.adamax, model.store())?;
    let mut order_rng = stream(config.seed, 0);
    let mut noise_rng = stream(config.seed, 1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0usize, model.store().clone());
    let mut stale = 0usize;
    let history_values = |h: &[EpochRecord]| h.iter().map(|r| r.train_objective).collect::<Vec<_>>();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for rows in order.chunks(config.batch_size) {
            let batch = train.rows(rows);
            let tape = Tape::new();
            let obj = model.per_unit(&tape, &batch, &mut noise_rng)?;
            let sum = obj.sum();
            let value = sum.scalar();
            if !value.is_finite() {
                return Err(Error::Training {
                    message: format!("non-finite objective in epoch {epoch}"),
                    parameter: None,
                    history: history_values(&history),
                });
            }
            total += value;
            let loss = sum.scale(-1.0 / rows.len() as f64);
            let grads = loss.backward()?;
            let g = tape.param_grads(&grads, model.store());
            opt.step(model.store_mut(), &g).map_err(|e| match e {
                Error::Training { message, parameter, .. } => Error::Training {
                    message,
                    parameter,
                    history: history_values(&history),
                },
                other => other,
            })?;
        }
        opt.end_epoch();
        // the same validation noise every epoch keeps comparisons paired
        let val = mean_validation(model, validation, &mut stream(config.seed, 2))?;
        if !val.is_finite() {
            return Err(Error::Training {
                message: format!("non-finite validation objective in epoch {epoch}"),
                parameter: None,
                history: history_values(&history),
            });
        }
        history.push(EpochRecord {
            epoch,
            train_objective: total / train.len() as f64,
            validation_objective: val,
        });
        if val > best.0 {
            best = (val, epoch, model.store().clone());
            stale = 0;
        } else {
            stale += 1;
            if stale > config.patience {
                break;
            }
        }
    }
    model.store_mut().copy_from(&best.2)?;
    Ok(TrainReport {
        epochs_run: history.len(),
        history,
        best_epoch: best.1,
        best_validation: best.0,
    })
}
