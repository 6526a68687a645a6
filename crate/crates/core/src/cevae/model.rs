use std::f64::consts::LN_2;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Standardizer, VarKind};
use crate::error::{Error, Result};
use crate::nn::dist::{bernoulli_logit_log_prob, gaussian_log_prob, standard_normal_log_prob, standard_normal_matrix};
use crate::nn::{sample_gaussian_reparam, Activation, DenseNet, InitScale, Matrix, ParamStore, Tape, Var};
use crate::train::{Objective, Prepared};

/// Largest binary latent dimension; the posterior is summed over all `2^Dz` states.
pub const MAX_BINARY_LATENT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentKind {
    /// `z ~ N(0, I)`, Gaussian posterior, reparameterised single sample.
    Continuous,
    /// `z ~ Bern(0.5)^Dz`, Bernoulli posterior, exact enumeration.
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CevaeConfig {
    pub latent_dim: usize,
    pub latent: LatentKind,
    /// `nh`: hidden layers of the outcome, covariate and posterior networks.
    pub hidden_layers: usize,
    pub width: usize,
    /// Fixed variance of `p(y|t,z)` for continuous outcomes.
    pub outcome_variance: f64,
    /// Fixed variance of `q(y|x,t)` for continuous outcomes.
    pub aux_outcome_variance: f64,
    /// Include the `q(t|x)` and `q(y|x,t)` terms in the training objective.
    pub auxiliary: bool,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for CevaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 20,
            latent: LatentKind::Continuous,
            hidden_layers: 3,
            width: 200,
            outcome_variance: 1.0,
            aux_outcome_variance: 1.0,
            auxiliary: true,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

impl CevaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::invalid("latent dimension must be at least 1"));
        }
        if self.latent == LatentKind::Binary && self.latent_dim > MAX_BINARY_LATENT {
            return Err(Error::invalid(format!(
                "binary latent dimension {} exceeds {MAX_BINARY_LATENT}",
                self.latent_dim
            )));
        }
        if self.width == 0 {
            return Err(Error::invalid("hidden width must be positive"));
        }
        if !(self.outcome_variance > 0.0 && self.aux_outcome_variance > 0.0) {
            return Err(Error::invalid("fixed outcome variances must be positive"));
        }
        Ok(())
    }
}

/// Every network of the model. `f*` parameterise the generative model,
/// `g1..g3` the posterior over `z`, `g4..g7` the auxiliary predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Networks {
    pub px_trunk: DenseNet,
    /// Emits Bernoulli logits, then Gaussian means, then variance pre-activations.
    pub px_head: DenseNet,
    pub f1: DenseNet,
    /// Treated (`t=1`) outcome head.
    pub f2: DenseNet,
    /// Control (`t=0`) outcome head.
    pub f3: DenseNet,
    pub g1: DenseNet,
    /// Posterior head used when `t=0`.
    pub g2: DenseNet,
    /// Posterior head used when `t=1`.
    pub g3: DenseNet,
    pub g4: DenseNet,
    pub g5: DenseNet,
    /// Auxiliary treated outcome head.
    pub g6: DenseNet,
    /// Auxiliary control outcome head.
    pub g7: DenseNet,
}

#[derive(Debug, Clone)]
pub struct CevaeModel {
    pub config: CevaeConfig,
    pub covariate_kinds: Vec<VarKind>,
    pub outcome_kind: VarKind,
    pub standardizer: Standardizer,
    pub nets: Networks,
    pub store: ParamStore,
    pub(crate) trained: bool,
}

/// Per-unit log terms of the objective, each `n×1`.
pub struct Terms<'t> {
    pub log_px: Var<'t>,
    pub log_pt: Var<'t>,
    pub log_py: Var<'t>,
    pub log_pz: Var<'t>,
    pub log_qz: Var<'t>,
}

impl<'t> Terms<'t> {
    pub fn elbo(&self) -> Var<'t> {
        self.log_px + self.log_pt + self.log_py + self.log_pz - self.log_qz
    }
}

impl CevaeModel {
    /// Builds an untrained model for `train`'s covariate layout and fits the
    /// standardiser on it.
    pub fn new(config: CevaeConfig, train: &Dataset) -> Result<Self> {
        config.validate()?;
        train.validate()?;
        Self::with_layout(
            config,
            train.covariate_kinds.clone(),
            train.outcome_kind,
            Standardizer::fit(train),
        )
    }

    pub fn with_layout(
        config: CevaeConfig,
        covariate_kinds: Vec<VarKind>,
        outcome_kind: VarKind,
        standardizer: Standardizer,
    ) -> Result<Self> {
        config.validate()?;
        if standardizer.covariates.len() != covariate_kinds.len() {
            return Err(Error::invalid("standardiser and covariate kinds disagree"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let nh = config.hidden_layers;
        let w = config.width;
        let dz = config.latent_dim;
        let dx = covariate_kinds.len();
        let n_bin = covariate_kinds.iter().filter(|k| **k == VarKind::Binary).count();
        let n_cont = dx - n_bin;
        let init = InitScale(config.init_scale);
        let elu = Activation::Elu;
        let trunk_widths = vec![w; nh.saturating_sub(1)];
        let head_hidden = vec![w; nh.min(1)];
        let full_hidden = vec![w; nh];
        let trunk_out = |input: usize| if nh > 1 { w } else { input };
        let q_out = match config.latent {
            LatentKind::Continuous => 2 * dz,
            LatentKind::Binary => dz,
        };

        let s = &mut store;
        let r = &mut rng;
        let px_trunk = DenseNet::trunk(s, "px.trunk", dz, &trunk_widths, elu, init, r);
        let px_head = DenseNet::new(s, "px.head", trunk_out(dz), &head_hidden, n_bin + 2 * n_cont, elu, init, r);
        let f1 = DenseNet::new(s, "f1", dz, &head_hidden, 1, elu, init, r);
        let f2 = DenseNet::new(s, "f2", dz, &full_hidden, 1, elu, init, r);
        let f3 = DenseNet::new(s, "f3", dz, &full_hidden, 1, elu, init, r);
        let g1 = DenseNet::trunk(s, "g1", dx + 1, &trunk_widths, elu, init, r);
        let g2 = DenseNet::new(s, "g2", trunk_out(dx + 1), &head_hidden, q_out, elu, init, r);
        let g3 = DenseNet::new(s, "g3", trunk_out(dx + 1), &head_hidden, q_out, elu, init, r);
        let g4 = DenseNet::new(s, "g4", dx, &head_hidden, 1, elu, init, r);
        let g5 = DenseNet::trunk(s, "g5", dx, &trunk_widths, elu, init, r);
        let g6 = DenseNet::new(s, "g6", trunk_out(dx), &head_hidden, 1, elu, init, r);
        let g7 = DenseNet::new(s, "g7", trunk_out(dx), &head_hidden, 1, elu, init, r);
        Ok(Self {
            config,
            covariate_kinds,
            outcome_kind,
            standardizer,
            nets: Networks {
                px_trunk,
                px_head,
                f1,
                f2,
                f3,
                g1,
                g2,
                g3,
                g4,
                g5,
                g6,
                g7,
            },
            store,
            trained: false,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Marks externally set parameters as ready for prediction.
    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_kinds.len()
    }

    fn n_binary(&self) -> usize {
        self.covariate_kinds.iter().filter(|k| **k == VarKind::Binary).count()
    }

    pub fn prepare(&self, ds: &Dataset) -> Result<Prepared> {
        if ds.covariate_kinds != self.covariate_kinds || ds.outcome_kind != self.outcome_kind {
            return Err(Error::invalid("dataset layout does not match the model"));
        }
        Ok(Prepared::new(ds, &self.standardizer))
    }

    fn net<'t>(&self, net: &DenseNet, tape: &'t Tape, input: Var<'t>) -> Result<Var<'t>> {
        net.forward(tape, &self.store, input)
    }

    /// `t·treated + (1−t)·control`, row by row.
    pub(crate) fn mix<'t>(t: Var<'t>, treated: Var<'t>, control: Var<'t>) -> Var<'t> {
        t * treated + (-t).offset(1.0) * control
    }

    fn check_batch(&self, b: &Prepared) -> Result<()> {
        let n = b.t.nrows();
        if b.x.ncols() != self.n_covariates() || b.x.nrows() != n || b.y.nrows() != n {
            return Err(Error::invalid(format!(
                "batch shapes x {:?}, t {:?}, y {:?} do not match a model with {} covariates",
                b.x.dim(),
                b.t.dim(),
                b.y.dim(),
                self.n_covariates()
            )));
        }
        Ok(())
    }

    /// `log p(x|z)`, `log p(t|z)` and `log p(y|t,z)` for each row, each `n×1`.
    pub fn generative_terms<'t>(
        &self,
        tape: &'t Tape,
        z: Var<'t>,
        x_bin: Var<'t>,
        x_cont: Var<'t>,
        t: Var<'t>,
        y: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>, Var<'t>)> {
        let n_bin = self.n_binary();
        let n_cont = self.n_covariates() - n_bin;
        let h = self.net(&self.nets.px_trunk, tape, z)?;
        let out = self.net(&self.nets.px_head, tape, h)?;
        let n = z.shape().0;
        let mut log_px = tape.constant(Array2::zeros((n, 1)));
        if n_bin > 0 {
            let logits = out.slice_cols(0, n_bin);
            log_px = log_px + bernoulli_logit_log_prob(logits, x_bin).sum_cols();
        }
        if n_cont > 0 {
            let mean = out.slice_cols(n_bin, n_bin + n_cont);
            let var = out.slice_cols(n_bin + n_cont, n_bin + 2 * n_cont).softplus();
            log_px = log_px + gaussian_log_prob(mean, var, x_cont).sum_cols();
        }
        let log_pt = bernoulli_logit_log_prob(self.net(&self.nets.f1, tape, z)?, t);
        let treated = self.net(&self.nets.f2, tape, z)?;
        let control = self.net(&self.nets.f3, tape, z)?;
        let m = Self::mix(t, treated, control);
        let log_py = match self.outcome_kind {
            VarKind::Binary => bernoulli_logit_log_prob(m, y),
            VarKind::Continuous => gaussian_log_prob(m, tape.scalar(self.config.outcome_variance), y),
        };
        Ok((log_px, log_pt, log_py))
    }

    /// `log p(z) + log p(x|z) + log p(t|z) + log p(y|t,z)` per row.
    pub fn generative_log_joint<'t>(
        &self,
        tape: &'t Tape,
        z: Var<'t>,
        batch: &Prepared,
    ) -> Result<Var<'t>> {
        self.check_batch(batch)?;
        if z.shape() != (batch.len(), self.config.latent_dim) {
            return Err(Error::invalid(format!(
                "latent batch has shape {:?}, expected ({}, {})",
                z.shape(),
                batch.len(),
                self.config.latent_dim
            )));
        }
        let (lx, lt, ly) = self.generative_terms(
            tape,
            z,
            tape.constant(batch.x_bin.clone()),
            tape.constant(batch.x_cont.clone()),
            tape.constant(batch.t.clone()),
            tape.constant(batch.y.clone()),
        )?;
        Ok(lx + lt + ly + self.log_prior(tape, z))
    }

    fn log_prior<'t>(&self, tape: &'t Tape, z: Var<'t>) -> Var<'t> {
        match self.config.latent {
            LatentKind::Continuous => standard_normal_log_prob(z),
            LatentKind::Binary => {
                let n = z.shape().0;
                tape.constant(Array2::from_elem((n, 1), -(self.config.latent_dim as f64) * LN_2))
            }
        }
    }

    /// Raw posterior head output selected by treatment: `n × 2Dz` (mean and
    /// variance pre-activation) or `n × Dz` logits for a binary latent.
    fn posterior_head<'t>(&self, tape: &'t Tape, x: Var<'t>, t: Var<'t>, y: Var<'t>) -> Result<Var<'t>> {
        let h = self.net(&self.nets.g1, tape, tape.concat_cols(&[x, y])?)?;
        let control = self.net(&self.nets.g2, tape, h)?;
        let treated = self.net(&self.nets.g3, tape, h)?;
        Ok(Self::mix(t, treated, control))
    }

    /// Posterior mean and variance of `q(z|x,t,y)`, each `n×Dz`. Continuous latent only.
    pub fn posterior_params<'t>(
        &self,
        tape: &'t Tape,
        x: Var<'t>,
        t: Var<'t>,
        y: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        if self.config.latent != LatentKind::Continuous {
            return Err(Error::invalid("posterior_params applies to the Gaussian posterior"));
        }
        let dz = self.config.latent_dim;
        let out = self.posterior_head(tape, x, t, y)?;
        Ok((out.slice_cols(0, dz), out.slice_cols(dz, 2 * dz).softplus()))
    }

    /// Bernoulli logits of `q(z|x,t,y)`, `n×Dz`. Binary latent only.
    pub fn posterior_logits<'t>(&self, tape: &'t Tape, x: Var<'t>, t: Var<'t>, y: Var<'t>) -> Result<Var<'t>> {
        if self.config.latent != LatentKind::Binary {
            return Err(Error::invalid("posterior_logits applies to the Bernoulli posterior"));
        }
        self.posterior_head(tape, x, t, y)
    }

    /// All binary latent states, one per row, state `c` holding bit `d` in column `d`.
    pub fn latent_states(&self) -> Matrix {
        let dz = self.config.latent_dim;
        Array2::from_shape_fn((1 << dz, dz), |(c, d)| ((c >> d) & 1) as f64)
    }

    /// Per-unit lower bound, `n×1`. With a continuous latent this is a
    /// single reparameterised sample; with a binary latent it is exact.
    pub fn elbo_per_unit<'t>(&self, tape: &'t Tape, batch: &Prepared, rng: &mut ChaCha8Rng) -> Result<Var<'t>> {
        self.check_batch(batch)?;
        let x = tape.constant(batch.x.clone());
        let x_bin = tape.constant(batch.x_bin.clone());
        let x_cont = tape.constant(batch.x_cont.clone());
        let t = tape.constant(batch.t.clone());
        let y = tape.constant(batch.y.clone());
        match self.config.latent {
            LatentKind::Continuous => {
                let (mu, var) = self.posterior_params(tape, x, t, y)?;
                let noise = standard_normal_matrix(batch.len(), self.config.latent_dim, rng);
                let z = sample_gaussian_reparam(mu, var, &noise)?;
                let terms = self.terms_at(tape, z, x_bin, x_cont, t, y, mu, var)?;
                Ok(terms.elbo())
            }
            LatentKind::Binary => self.binary_elbo(tape, x, x_bin, x_cont, t, y),
        }
    }

    /// Objective terms at a given latent sample of a Gaussian posterior.
    #[allow(clippy::too_many_arguments)]
    pub fn terms_at<'t>(
        &self,
        tape: &'t Tape,
        z: Var<'t>,
        x_bin: Var<'t>,
        x_cont: Var<'t>,
        t: Var<'t>,
        y: Var<'t>,
        mu: Var<'t>,
        var: Var<'t>,
    ) -> Result<Terms<'t>> {
        let (log_px, log_pt, log_py) = self.generative_terms(tape, z, x_bin, x_cont, t, y)?;
        Ok(Terms {
            log_px,
            log_pt,
            log_py,
            log_pz: standard_normal_log_prob(z),
            log_qz: gaussian_log_prob(mu, var, z).sum_cols(),
        })
    }

    fn binary_elbo<'t>(
        &self,
        tape: &'t Tape,
        x: Var<'t>,
        x_bin: Var<'t>,
        x_cont: Var<'t>,
        t: Var<'t>,
        y: Var<'t>,
    ) -> Result<Var<'t>> {
        let n = x.shape().0;
        let dz = self.config.latent_dim;
        let logits = self.posterior_logits(tape, x, t, y)?;
        let cap = crate::nn::dist::logit_cap();
        let logits = logits.clamp(-cap, cap);
        let log_on = logits.log_sigmoid();
        let log_off = (-logits).log_sigmoid();
        let log_prior = -(dz as f64) * LN_2;
        let states = self.latent_states();
        let mut total: Option<Var<'t>> = None;
        for c in 0..states.nrows() {
            let row = states.row(c).to_owned().insert_axis(ndarray::Axis(0));
            let bits = tape.constant(row.clone());
            let zc = tape.constant(row).broadcast_rows(n)?;
            let log_q = (bits * log_on + (-bits).offset(1.0) * log_off).sum_cols();
            let (lx, lt, ly) = self.generative_terms(tape, zc, x_bin, x_cont, t, y)?;
            let w = log_q.exp();
            let term = w * (lx + lt + ly - log_q).offset(log_prior);
            total = Some(match total {
                Some(acc) => acc + term,
                None => term,
            });
        }
        total.ok_or_else(|| Error::invalid("no latent states"))
    }

    /// Per-unit `log p(x, t, y)`. A binary latent is summed out exactly; a
    /// continuous one is estimated by importance sampling with `samples`
    /// draws from `q(z|x,t,y)`.
    pub fn log_evidence(&self, batch: &Prepared, samples: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        self.check_batch(batch)?;
        let n = batch.len();
        let mut logs: Vec<Vec<f64>> = vec![Vec::new(); n];
        match self.config.latent {
            LatentKind::Binary => {
                let tape = Tape::new();
                let states = self.latent_states();
                for c in 0..states.nrows() {
                    let row = states.row(c).to_owned().insert_axis(ndarray::Axis(0));
                    let z = tape.constant(row).broadcast_rows(n)?;
                    let lj = self.generative_log_joint(&tape, z, batch)?.value();
                    for (i, l) in logs.iter_mut().enumerate() {
                        l.push(lj[[i, 0]]);
                    }
                }
            }
            LatentKind::Continuous => {
                if samples == 0 {
                    return Err(Error::invalid("importance sampling needs at least one draw"));
                }
                for _ in 0..samples {
                    // a fresh tape per draw keeps memory flat
                    let tape = Tape::new();
                    let (mu, var) = self.posterior_params(
                        &tape,
                        tape.constant(batch.x.clone()),
                        tape.constant(batch.t.clone()),
                        tape.constant(batch.y.clone()),
                    )?;
                    let noise = standard_normal_matrix(n, self.config.latent_dim, rng);
                    let z = sample_gaussian_reparam(mu, var, &noise)?;
                    let w = self.generative_log_joint(&tape, z, batch)? - gaussian_log_prob(mu, var, z).sum_cols();
                    let w = w.value();
                    for (i, l) in logs.iter_mut().enumerate() {
                        l.push(w[[i, 0]]);
                    }
                }
                let shift = (samples as f64).ln();
                return Ok(logs.iter().map(|l| log_sum_exp(l) - shift).collect());
            }
        }
        Ok(logs.iter().map(|l| log_sum_exp(l)).collect())
    }

    /// `log q(t|x) + log q(y|x,t)` per row.
    pub fn auxiliary_per_unit<'t>(&self, tape: &'t Tape, batch: &Prepared) -> Result<Var<'t>> {
        self.check_batch(batch)?;
        let x = tape.constant(batch.x.clone());
        let t = tape.constant(batch.t.clone());
        let y = tape.constant(batch.y.clone());
        let log_qt = bernoulli_logit_log_prob(self.net(&self.nets.g4, tape, x)?, t);
        let m = self.aux_outcome(tape, x, t)?;
        let log_qy = match self.outcome_kind {
            VarKind::Binary => bernoulli_logit_log_prob(m, y),
            VarKind::Continuous => gaussian_log_prob(m, tape.scalar(self.config.aux_outcome_variance), y),
        };
        Ok(log_qt + log_qy)
    }

    /// Mean (continuous) or logit (binary) of `q(y|x,t)`.
    pub(crate) fn aux_outcome<'t>(&self, tape: &'t Tape, x: Var<'t>, t: Var<'t>) -> Result<Var<'t>> {
        let h = self.net(&self.nets.g5, tape, x)?;
        let treated = self.net(&self.nets.g6, tape, h)?;
        let control = self.net(&self.nets.g7, tape, h)?;
        Ok(Self::mix(t, treated, control))
    }

    /// Sum over the batch of the per-unit lower bound.
    pub fn elbo<'t>(&self, tape: &'t Tape, batch: &Prepared, rng: &mut ChaCha8Rng) -> Result<Var<'t>> {
        let v = self.elbo_per_unit(tape, batch, rng)?.sum();
        if !v.scalar().is_finite() {
            return Err(Error::training("lower bound is not finite"));
        }
        Ok(v)
    }

    /// Lower bound plus the auxiliary log-likelihoods (when enabled), summed over the batch.
    pub fn full_objective<'t>(&self, tape: &'t Tape, batch: &Prepared, rng: &mut ChaCha8Rng) -> Result<Var<'t>> {
        let v = self.per_unit(tape, batch, rng)?.sum();
        if !v.scalar().is_finite() {
            return Err(Error::training("objective is not finite"));
        }
        Ok(v)
    }
}

impl Objective for CevaeModel {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn per_unit<'t>(&self, tape: &'t Tape, batch: &Prepared, rng: &mut ChaCha8Rng) -> Result<Var<'t>> {
        let elbo = self.elbo_per_unit(tape, batch, rng)?;
        if self.config.auxiliary {
            Ok(elbo + self.auxiliary_per_unit(tape, batch)?)
        } else {
            Ok(elbo)
        }
    }

    fn validation_per_unit<'t>(&self, tape: &'t Tape, batch: &Prepared, rng: &mut ChaCha8Rng) -> Result<Var<'t>> {
        self.elbo_per_unit(tape, batch, rng)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
