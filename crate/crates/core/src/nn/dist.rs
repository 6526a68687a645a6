//! Log densities and reparameterised sampling.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tape::{Matrix, Var};
use crate::error::{Error, Result};

/// Bernoulli probabilities are kept inside `[PROB_FLOOR, 1 - PROB_FLOOR]`.
pub const PROB_FLOOR: f64 = 1e-7;

/// Logit corresponding to `1 - PROB_FLOOR`; clamping logits to `±LOGIT_CAP`
/// is the same as clamping the probability.
pub fn logit_cap() -> f64 {
    ((1.0 - PROB_FLOOR) / PROB_FLOOR).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn elu(x: f64) -> f64 {
    super::tape::elu_scalar(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dist {
    Bernoulli { p: f64 },
    Gaussian { mean: f64, var: f64 },
}

impl Dist {
    pub fn log_prob(&self, x: f64) -> Result<f64> {
        match *self {
            Dist::Bernoulli { p } => {
                let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                Ok(x * p.ln() + (1.0 - x) * (1.0 - p).ln())
            }
            Dist::Gaussian { mean, var } => {
                if !(var > 0.0) {
                    return Err(Error::invalid("Gaussian variance must be positive"));
                }
                Ok(-0.5 * (2.0 * PI * var).ln() - (x - mean).powi(2) / (2.0 * var))
            }
        }
    }
}

/// Elementwise `ln Bern(x | σ(logits))` with the probability clamp applied.
pub fn bernoulli_logit_log_prob<'t>(logits: Var<'t>, x: Var<'t>) -> Var<'t> {
    let cap = logit_cap();
    let l = logits.clamp(-cap, cap);
    let one_minus_x = (-x).offset(1.0);
    x * l.log_sigmoid() + one_minus_x * (-l).log_sigmoid()
}

/// Elementwise `ln N(x | mean, var)`.
pub fn gaussian_log_prob<'t>(mean: Var<'t>, var: Var<'t>, x: Var<'t>) -> Var<'t> {
    let sq = (x - mean).square();
    (var.ln() + sq.div(var)).scale(-0.5).offset(-0.5 * (2.0 * PI).ln())
}

/// `ln N(x | 0, 1)` summed over columns, `n×d → n×1`.
pub fn standard_normal_log_prob(z: Var<'_>) -> Var<'_> {
    let d = z.shape().1 as f64;
    z.square()
        .sum_cols()
        .scale(-0.5)
        .offset(-0.5 * d * (2.0 * PI).ln())
}

/// `mean + sqrt(var) * noise`, differentiable in `mean` and `var`.
pub fn sample_gaussian_reparam<'t>(mean: Var<'t>, var: Var<'t>, noise: &Matrix) -> Result<Var<'t>> {
    if var.with_value(|v| v.iter().any(|&s| !(s > 0.0))) {
        return Err(Error::invalid("variance must be strictly positive"));
    }
    if mean.shape() != noise.dim() || var.shape() != noise.dim() {
        return Err(Error::invalid(format!(
            "reparameterisation shapes: mean {:?}, var {:?}, noise {:?}",
            mean.shape(),
            var.shape(),
            noise.dim()
        )));
    }
    let eps = mean.tape().constant(noise.clone());
    Ok(mean + var.sqrt() * eps)
}

pub fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tape;
    use ndarray::array;

    #[test]
    fn bernoulli_half() {
        let lp = Dist::Bernoulli { p: 0.5 }.log_prob(1.0).unwrap();
        assert!((lp + std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn gaussian_at_mean() {
        let lp = Dist::Gaussian { mean: 2.5, var: 1.0 }.log_prob(2.5).unwrap();
        assert!((lp + 0.918_938_533_204_672_7).abs() < 1e-15);
    }

    #[test]
    fn bernoulli_normalises() {
        for p in [1e-9, 0.01, 0.3, 0.5, 0.999, 1.0] {
            let d = Dist::Bernoulli { p };
            let total: f64 = [0.0, 1.0].iter().map(|&x| d.log_prob(x).unwrap().exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tape_matches_scalar_densities() {
        let tape = Tape::new();
        let logits = tape.var(array![[0.0, 2.0, -40.0]]);
        let x = tape.constant(array![[1.0, 0.0, 1.0]]);
        let lp = bernoulli_logit_log_prob(logits, x).value();
        for (j, (&l, &xv)) in [0.0, 2.0, -40.0].iter().zip(&[1.0, 0.0, 1.0]).enumerate() {
            let want = Dist::Bernoulli { p: sigmoid(l) }.log_prob(xv).unwrap();
            assert!((lp[[0, j]] - want).abs() < 1e-9, "{j}");
        }
        let mean = tape.var(array![[0.5, -1.0]]);
        let var = tape.var(array![[2.0, 0.3]]);
        let xs = tape.constant(array![[1.0, 0.0]]);
        let lp = gaussian_log_prob(mean, var, xs).value();
        let want = Dist::Gaussian { mean: -1.0, var: 0.3 }.log_prob(0.0).unwrap();
        assert!((lp[[0, 1]] - want).abs() < 1e-14);
    }

    #[test]
    fn reparam_zero_noise_returns_mean() {
        let tape = Tape::new();
        let mean = tape.var(array![[0.3, -2.0]]);
        let var = tape.var(array![[1.5, 0.1]]);
        let z = sample_gaussian_reparam(mean, var, &Array2::zeros((1, 2))).unwrap();
        assert_eq!(z.value(), array![[0.3, -2.0]]);
    }

    #[test]
    fn reparam_rejects_zero_variance() {
        let tape = Tape::new();
        let mean = tape.var(array![[0.0]]);
        let var = tape.var(array![[0.0]]);
        assert!(sample_gaussian_reparam(mean, var, &array![[1.0]]).is_err());
    }

    #[test]
    fn reparam_mean_gradient_is_one() {
        for eps in [-2.0, 0.0, 0.7] {
            let tape = Tape::new();
            let mean = tape.var(array![[0.4]]);
            let var = tape.var(array![[0.9]]);
            let z = sample_gaussian_reparam(mean, var, &array![[eps]]).unwrap();
            let g = z.sum().backward().unwrap();
            assert_eq!(g.scalar(mean), 1.0);
        }
    }

    #[test]
    fn standard_normal_at_origin() {
        let tape = Tape::new();
        let z = tape.var(Array2::zeros((2, 20)));
        let lp = standard_normal_log_prob(z).value();
        let want = -10.0 * (2.0 * PI).ln();
        assert!((lp[[1, 0]] - want).abs() < 1e-12);
    }
}
