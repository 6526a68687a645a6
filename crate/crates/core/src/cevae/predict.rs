use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::model::{CevaeModel, LatentKind};
use crate::data::{Dataset, VarKind};
use crate::error::{Error, Result};
use crate::estimate::{EffectModel, EstimateReport};
use crate::nn::dist::sigmoid;
use crate::nn::{Matrix, Tape};
use crate::train::{fit, Prepared, TrainConfig, TrainReport};

/// How interventional predictions are averaged.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PredictOptions {
    /// Posterior samples per unit.
    pub samples: usize,
    /// Unit `i` draws from stream `i` of this seed.
    pub seed: u64,
    /// Threads used to fan out over units; results do not depend on it.
    pub workers: usize,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            samples: 100,
            seed: 0,
            workers: 1,
        }
    }
}

const UNITS_PER_CHUNK: usize = 64;

/// Uniforms and Gaussians consumed by one posterior draw.
struct Draws {
    t: Vec<f64>,
    y: Vec<f64>,
    z: Matrix,
}

impl CevaeModel {
    /// Trains on `train`, early-stopping on `validation`; keeps the best
    /// validation parameters and marks the model trained.
    pub fn train(&mut self, train: &Dataset, validation: &Dataset, config: &TrainConfig) -> Result<TrainReport> {
        if train.is_empty() || validation.is_empty() {
            return Err(Error::invalid("training and validation splits must be non-empty"));
        }
        let tr = self.prepare(train)?;
        let va = self.prepare(validation)?;
        let report = fit(self, &tr, &va, config)?;
        self.trained = true;
        Ok(report)
    }

    fn require_trained(&self) -> Result<()> {
        if self.trained {
            Ok(())
        } else {
            Err(Error::State("model has not been trained".into()))
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Draws {
        let dz = self.config.latent_dim;
        let mut d = Draws {
            t: Vec::with_capacity(rows),
            y: Vec::with_capacity(rows),
            z: Array2::zeros((rows, dz)),
        };
        for r in 0..rows {
            d.t.push(rng.random::<f64>());
            d.y.push(match self.outcome_kind {
                VarKind::Binary => rng.random::<f64>(),
                VarKind::Continuous => StandardNormal.sample(rng),
            });
            for k in 0..dz {
                d.z[[r, k]] = match self.config.latent {
                    LatentKind::Continuous => StandardNormal.sample(rng),
                    LatentKind::Binary => rng.random::<f64>(),
                };
            }
        }
        d
    }

    /// Ancestral draw `t' ~ q(t|x)`, `y' ~ q(y|x,t')`, `z ~ q(z|x,t',y')` for
    /// each row of standardised covariates.
    fn sample_latent(&self, x: &Matrix, d: &Draws) -> Result<Matrix> {
        let tape = Tape::new();
        let n = x.nrows();
        let xv = tape.constant(x.clone());
        let pt = self.nets.g4.forward(&tape, &self.store, xv)?.value();
        let t_col = Array2::from_shape_fn((n, 1), |(i, _)| f64::from(u8::from(d.t[i] < sigmoid(pt[[i, 0]]))));
        let tv = tape.constant(t_col);
        let m = self.aux_outcome(&tape, xv, tv)?.value();
        let y_col = Array2::from_shape_fn((n, 1), |(i, _)| match self.outcome_kind {
            VarKind::Binary => f64::from(u8::from(d.y[i] < sigmoid(m[[i, 0]]))),
            VarKind::Continuous => m[[i, 0]] + self.config.aux_outcome_variance.sqrt() * d.y[i],
        });
        let yv = tape.constant(y_col);
        match self.config.latent {
            LatentKind::Continuous => {
                let (mu, var) = self.posterior_params(&tape, xv, tv, yv)?;
                let (mu, var) = (mu.value(), var.value());
                Ok(&mu + &(var.mapv(f64::sqrt) * &d.z))
            }
            LatentKind::Binary => {
                let l = self.posterior_logits(&tape, xv, tv, yv)?.value();
                Ok(ndarray::Zip::from(&l)
                    .and(&d.z)
                    .map_collect(|&l, &u| f64::from(u8::from(u < sigmoid(l)))))
            }
        }
    }

    /// One latent draw for a new unit given its raw covariates.
    pub fn posterior_sample_new<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        if x.len() != self.n_covariates() {
            return Err(Error::invalid(format!(
                "expected {} covariates, got {}",
                self.n_covariates(),
                x.len()
            )));
        }
        let raw = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row");
        let xs = self.standardizer.transform_x(&raw);
        let d = self.draw(1, rng);
        Ok(self.sample_latent(&xs, &d)?.row(0).to_vec())
    }

    /// `E[y | t, z]` in original outcome units for each latent row.
    fn outcome_mean(&self, z: &Matrix, t_value: u8) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let net = if t_value == 1 { &self.nets.f2 } else { &self.nets.f3 };
        let out = net.forward(&tape, &self.store, tape.constant(z.clone()))?.value();
        Ok(out
            .column(0)
            .iter()
            .map(|&v| match self.outcome_kind {
                VarKind::Binary => sigmoid(v),
                VarKind::Continuous => self.standardizer.inverse_y(v),
            })
            .collect())
    }

    /// Per-draw `E[y|t,z_s]` for units `first..first+x.nrows()`, unit-major,
    /// sharing the posterior draws between the two interventions.
    fn potential_chunk(&self, x_std: &Matrix, first: usize, opts: &PredictOptions, which: [bool; 2]) -> Result<(Vec<f64>, Vec<f64>)> {
        let s = opts.samples;
        let n = x_std.nrows();
        let rep: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, s)).collect();
        let xr = x_std.select(Axis(0), &rep);
        let mut draws = Draws {
            t: Vec::with_capacity(n * s),
            y: Vec::with_capacity(n * s),
            z: Array2::zeros((n * s, self.config.latent_dim)),
        };
        for i in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream((first + i) as u64);
            let d = self.draw(s, &mut rng);
            draws.t.extend(d.t);
            draws.y.extend(d.y);
            draws.z.slice_mut(ndarray::s![i * s..(i + 1) * s, ..]).assign(&d.z);
        }
        let z = self.sample_latent(&xr, &draws)?;
        let y0 = if which[0] { self.outcome_mean(&z, 0)? } else { Vec::new() };
        let y1 = if which[1] { self.outcome_mean(&z, 1)? } else { Vec::new() };
        Ok((y0, y1))
    }

    fn samples_all(&self, x_raw: &Matrix, opts: &PredictOptions, which: [bool; 2]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.require_trained()?;
        if opts.samples == 0 {
            return Err(Error::invalid("posterior sample count must be at least 1"));
        }
        if x_raw.ncols() != self.n_covariates() {
            return Err(Error::invalid(format!(
                "expected {} covariates, got {}",
                self.n_covariates(),
                x_raw.ncols()
            )));
        }
        let x = self.standardizer.transform_x(x_raw);
        let n = x.nrows();
        let starts: Vec<usize> = (0..n).step_by(UNITS_PER_CHUNK).collect();
        let run = |start: usize| {
            let end = (start + UNITS_PER_CHUNK).min(n);
            let rows: Vec<usize> = (start..end).collect();
            self.potential_chunk(&x.select(Axis(0), &rows), start, opts, which)
        };
        let workers = opts.workers.max(1).min(starts.len().max(1));
        let parts: Vec<Result<(Vec<f64>, Vec<f64>)>> = if workers <= 1 {
            starts.iter().map(|&s| run(s)).collect()
        } else {
            let per = starts.len().div_ceil(workers);
            std::thread::scope(|scope| {
                let handles: Vec<_> = starts
                    .chunks(per)
                    .map(|group| scope.spawn(|| group.iter().map(|&s| run(s)).collect::<Vec<_>>()))
                    .collect();
                handles
                    .into_iter()
                    .flat_map(|h| h.join().expect("prediction worker panicked"))
                    .collect()
            })
        };
        let (mut y0, mut y1) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for p in parts {
            let (a, b) = p?;
            y0.extend(a);
            y1.extend(b);
        }
        Ok((y0, y1))
    }

    fn potential_all(&self, x_raw: &Matrix, opts: &PredictOptions, which: [bool; 2]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (y0, y1) = self.samples_all(x_raw, opts, which)?;
        let s = opts.samples;
        let avg = |v: Vec<f64>| -> Vec<f64> { v.chunks(s).map(|c| c.iter().sum::<f64>() / s as f64).collect() };
        Ok((avg(y0), avg(y1)))
    }

    /// `E[y | t, z_s]` for every posterior draw, as two `n × S` matrices
    /// `(control, treated)`; [`predict_potential`](Self::predict_potential)
    /// averages their rows.
    pub fn outcome_samples(&self, x_raw: &Matrix, opts: &PredictOptions) -> Result<(Matrix, Matrix)> {
        let (y0, y1) = self.samples_all(x_raw, opts, [true, true])?;
        let shape = (x_raw.nrows(), opts.samples);
        Ok((
            Array2::from_shape_vec(shape, y0).expect("unit-major samples"),
            Array2::from_shape_vec(shape, y1).expect("unit-major samples"),
        ))
    }

    /// `E[y | x, do(t = t_value)]` for every row of raw covariates, averaging
    /// `opts.samples` draws of the posterior over `z`.
    pub fn predict_do(&self, x_raw: &Matrix, t_value: u8, opts: &PredictOptions) -> Result<Vec<f64>> {
        match t_value {
            0 => Ok(self.potential_all(x_raw, opts, [true, false])?.0),
            1 => Ok(self.potential_all(x_raw, opts, [false, true])?.1),
            v => Err(Error::invalid(format!("treatment value must be 0 or 1, got {v}"))),
        }
    }

    /// Both interventional means, sharing draws, as `(ŷ0, ŷ1)`.
    pub fn predict_potential(&self, x_raw: &Matrix, opts: &PredictOptions) -> Result<(Vec<f64>, Vec<f64>)> {
        self.potential_all(x_raw, opts, [true, true])
    }

    /// Per-unit effects on `ds` with ATE over all units and ATT over treated ones.
    pub fn estimate_effects(&self, ds: &Dataset, opts: &PredictOptions) -> Result<EstimateReport> {
        let (y0, y1) = self.predict_potential(&ds.x, opts)?;
        Ok(EstimateReport::from_potential(y0, y1, &ds.t))
    }

    /// Objective terms averaged per unit on `ds`, with noise from `seed`.
    pub fn mean_objective(&self, ds: &Dataset, seed: u64) -> Result<f64> {
        let data: Prepared = self.prepare(ds)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        crate::train::mean_objective(self, &data, &mut rng)
    }
}

/// A trained CEVAE with the prediction options used when it stands in for a
/// generic effect model.
pub struct CevaePredictor<'a> {
    pub model: &'a CevaeModel,
    pub options: PredictOptions,
}

impl EffectModel for CevaePredictor<'_> {
    fn potential_outcomes(&self, x: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        self.model.predict_potential(x, &self.options)
    }
}
