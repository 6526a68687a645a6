//! Synthetic data with known potential outcomes.
//!
//! * [`gen_toy`]: a binary hidden variable selects a Gaussian mixture
//!   component for a single proxy and drives both treatment and outcome.
//! * [`make_twins_treatment`] / [`make_proxies`]: the confounded treatment
//!   assignment and noisy one-hot proxies used on twin-pair data, applied to
//!   real records by [`twins_from_records`].
//! * [`gen_synthetic_twins`]: a fully synthetic stand-in for the twin-pair
//!   records with an ordinal 10-level confounder and 45 covariates.

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TwinRecords, VarKind};
use crate::error::{Error, Result};
use crate::nn::dist::sigmoid;

/// A generated dataset together with the hidden confounder of every unit.
#[derive(Debug, Clone)]
pub struct Generated {
    pub dataset: Dataset,
    pub confounder: Vec<u8>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// ---------------------------------------------------------------- toy

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub n: usize,
    pub sigma_z0: f64,
    pub sigma_z1: f64,
    pub seed: u64,
}

impl ToyConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            sigma_z0: 3.0,
            sigma_z1: 5.0,
            seed,
        }
    }
}

/// `P(y=1 | t, z)` of the toy process.
pub fn toy_outcome_prob(t: u8, z: u8) -> f64 {
    sigmoid(3.0 * (z as f64 + 2.0 * (2.0 * t as f64 - 1.0)))
}

/// Population ATE of the toy process, averaging the two mixture components.
pub fn toy_true_ate() -> f64 {
    0.5 * ((toy_outcome_prob(1, 1) - toy_outcome_prob(0, 1)) + (toy_outcome_prob(1, 0) - toy_outcome_prob(0, 0)))
}

pub fn gen_toy(config: &ToyConfig) -> Result<Generated> {
    if config.n == 0 {
        return Err(Error::invalid("toy sample size must be at least 1"));
    }
    if !(config.sigma_z0 > 0.0 && config.sigma_z1 > 0.0) {
        return Err(Error::invalid("toy mixture scales must be positive"));
    }
    let mut rng = rng_for(config.seed, 0);
    let n = config.n;
    let mut x = Array2::zeros((n, 1));
    let (mut t, mut y, mut y_cf) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut mu0, mut mu1, mut zs) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let z = u8::from(rng.random::<f64>() < 0.5);
        let sd = if z == 1 { config.sigma_z1 } else { config.sigma_z0 };
        let eps: f64 = StandardNormal.sample(&mut rng);
        x[[i, 0]] = z as f64 + sd * eps;
        let p_t = if z == 1 { 0.75 } else { 0.25 };
        let ti = u8::from(rng.random::<f64>() < p_t);
        let (p1, p0) = (toy_outcome_prob(1, z), toy_outcome_prob(0, z));
        let y1 = f64::from(u8::from(rng.random::<f64>() < p1));
        let y0 = f64::from(u8::from(rng.random::<f64>() < p0));
        t.push(ti);
        y.push(if ti == 1 { y1 } else { y0 });
        y_cf.push(if ti == 1 { y0 } else { y1 });
        mu0.push(p0);
        mu1.push(p1);
        zs.push(z);
    }
    let mut ds = Dataset::new(x, t, y, vec![VarKind::Continuous], VarKind::Binary)?;
    ds.y_cf = Some(y_cf);
    ds.mu0 = Some(mu0);
    ds.mu1 = Some(mu1);
    Ok(Generated {
        dataset: ds,
        confounder: zs,
    })
}

// ---------------------------------------------------------------- twins treatment and proxies

pub const GESTATION_LEVELS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwinsProxyConfig {
    pub flip_prob: f64,
    pub replications: usize,
    pub categories: usize,
    /// Variance of each entry of `w_o`.
    pub w_o_var: f64,
    pub w_h_mean: f64,
    pub w_h_var: f64,
    /// Assign treatment by a fair coin instead of the confounded rule.
    pub randomized: bool,
    pub seed: u64,
}

impl TwinsProxyConfig {
    pub fn new(flip_prob: f64, seed: u64) -> Self {
        Self {
            flip_prob,
            replications: 3,
            categories: GESTATION_LEVELS,
            w_o_var: 0.1,
            w_h_mean: 5.0,
            w_h_var: 0.1,
            randomized: false,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.flip_prob) {
            return Err(Error::invalid(format!(
                "flip probability {} outside [0, 0.5]",
                self.flip_prob
            )));
        }
        if self.replications == 0 || self.categories == 0 {
            return Err(Error::invalid("proxy blocks need at least one replication and category"));
        }
        if self.w_o_var < 0.0 || self.w_h_var < 0.0 {
            return Err(Error::invalid("weight variances must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinsWeights {
    pub w_o: Vec<f64>,
    pub w_h: f64,
}

impl TwinsWeights {
    pub fn draw<R: Rng + ?Sized>(n_covariates: usize, config: &TwinsProxyConfig, rng: &mut R) -> Self {
        let w_o_dist = Normal::new(0.0, config.w_o_var.sqrt()).expect("finite sd");
        let w_h_dist = Normal::new(config.w_h_mean, config.w_h_var.sqrt()).expect("finite sd");
        let w_o = (0..n_covariates).map(|_| w_o_dist.sample(rng)).collect();
        Self {
            w_o,
            w_h: w_h_dist.sample(rng),
        }
    }
}

/// `σ(w_oᵀx + w_h(z/10 − 0.1))`.
pub fn treatment_probability(x: &[f64], z: u8, weights: &TwinsWeights) -> Result<f64> {
    if z as usize >= GESTATION_LEVELS {
        return Err(Error::invalid(format!("gestation category {z} outside 0..=9")));
    }
    if x.len() != weights.w_o.len() {
        return Err(Error::invalid(format!(
            "{} covariates but {} weights",
            x.len(),
            weights.w_o.len()
        )));
    }
    let lin: f64 = x.iter().zip(&weights.w_o).map(|(a, b)| a * b).sum();
    Ok(sigmoid(lin + weights.w_h * (z as f64 / 10.0 - 0.1)))
}

/// Draws a treatment per row of `x`.
pub fn make_twins_treatment<R: Rng + ?Sized>(
    x: &Array2<f64>,
    z: &[u8],
    weights: &TwinsWeights,
    rng: &mut R,
) -> Result<Vec<u8>> {
    if x.nrows() != z.len() {
        return Err(Error::invalid("covariate rows and confounder length differ"));
    }
    x.axis_iter(Axis(0))
        .zip(z)
        .map(|(row, &zi)| {
            let p = treatment_probability(row.as_slice().expect("standard layout"), zi, weights)?;
            Ok(u8::from(rng.random::<f64>() < p))
        })
        .collect()
}

/// `replications` one-hot blocks of `z` with every bit flipped independently.
pub fn make_proxies<R: Rng + ?Sized>(z: u8, config: &TwinsProxyConfig, rng: &mut R) -> Result<Vec<u8>> {
    config.validate()?;
    if z as usize >= config.categories {
        return Err(Error::invalid(format!(
            "category {z} outside 0..{}",
            config.categories
        )));
    }
    let mut bits = Vec::with_capacity(config.replications * config.categories);
    for _ in 0..config.replications {
        for c in 0..config.categories {
            let bit = u8::from(c == z as usize);
            let flip = u8::from(rng.random::<f64>() < config.flip_prob);
            bits.push(bit ^ flip);
        }
    }
    Ok(bits)
}

fn proxy_names(config: &TwinsProxyConfig) -> Vec<String> {
    (0..config.replications)
        .flat_map(|r| (0..config.categories).map(move |c| format!("gestat_r{}_c{c}", r + 1)))
        .collect()
}

fn standardized_columns(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut col in out.columns_mut() {
        let n = col.len() as f64;
        let m = col.sum() / n;
        let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        let sd = if sd > 0.0 { sd } else { 1.0 };
        col.mapv_inplace(|v| (v - m) / sd);
    }
    out
}

/// Assigns treatment, appends proxies and hides one twin of each pair.
///
/// The treatment logit uses the covariates standardised over the sample.
#[allow(clippy::too_many_arguments)]
fn assemble_twins(
    covariates: &Array2<f64>,
    names: &[String],
    kinds: &[VarKind],
    z: &[u8],
    y_light: &[f64],
    y_heavy: &[f64],
    mu: Option<(Vec<f64>, Vec<f64>)>,
    config: &TwinsProxyConfig,
) -> Result<Generated> {
    config.validate()?;
    if config.categories != GESTATION_LEVELS {
        return Err(Error::invalid("twin proxies encode the 10 gestation categories"));
    }
    let n = covariates.nrows();
    let d = covariates.ncols();
    let mut rng = rng_for(config.seed, 1);
    let weights = TwinsWeights::draw(d, config, &mut rng);
    let t = if config.randomized {
        (0..n).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect()
    } else {
        make_twins_treatment(&standardized_columns(covariates), z, &weights, &mut rng)?
    };
    let n_proxy = config.replications * config.categories;
    let mut x = Array2::zeros((n, d + n_proxy));
    x.slice_mut(ndarray::s![.., ..d]).assign(covariates);
    for (i, &zi) in z.iter().enumerate() {
        for (k, b) in make_proxies(zi, config, &mut rng)?.into_iter().enumerate() {
            x[[i, d + k]] = b as f64;
        }
    }
    let mut all_kinds = kinds.to_vec();
    all_kinds.extend(std::iter::repeat_n(VarKind::Binary, n_proxy));
    let y = (0..n).map(|i| if t[i] == 1 { y_heavy[i] } else { y_light[i] }).collect();
    let y_cf = (0..n).map(|i| if t[i] == 1 { y_light[i] } else { y_heavy[i] }).collect();
    let mut ds = Dataset::new(x, t, y, all_kinds, VarKind::Binary)?;
    ds.covariate_names = names.iter().cloned().chain(proxy_names(config)).collect();
    ds.y_cf = Some(y_cf);
    if let Some((mu0, mu1)) = mu {
        ds.mu0 = Some(mu0);
        ds.mu1 = Some(mu1);
    }
    ds.validate()?;
    Ok(Generated {
        dataset: ds,
        confounder: z.to_vec(),
    })
}

/// Builds the hidden-confounding twins task from loaded twin-pair records.
pub fn twins_from_records(records: &TwinRecords, config: &TwinsProxyConfig) -> Result<Generated> {
    assemble_twins(
        &records.covariates,
        &records.covariate_names,
        &records.covariate_kinds,
        &records.gestation,
        &records.y_light,
        &records.y_heavy,
        None,
        config,
    )
}

// ---------------------------------------------------------------- synthetic twins

pub const SYNTHETIC_BINARY: usize = 30;
pub const SYNTHETIC_CONTINUOUS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTwinsConfig {
    pub n: usize,
    /// Mortality of the lighter (control) twin.
    pub rate_light: f64,
    /// Mortality of the heavier (treated) twin.
    pub rate_heavy: f64,
    /// Seeds the covariate loadings and outcome coefficients, shared by all draws.
    pub structural_seed: u64,
    pub proxy: TwinsProxyConfig,
}

impl SyntheticTwinsConfig {
    pub fn new(n: usize, flip_prob: f64, seed: u64) -> Self {
        Self {
            n,
            rate_light: 0.189,
            rate_heavy: 0.164,
            structural_seed: 1991,
            proxy: TwinsProxyConfig::new(flip_prob, seed),
        }
    }

    pub fn target_ate(&self) -> f64 {
        self.rate_heavy - self.rate_light
    }
}

/// Fixed structure of the synthetic twin population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTwinsStructure {
    /// Correlation of each covariate's latent Gaussian with the standardised confounder.
    pub loadings: Vec<f64>,
    /// Thresholds turning the first 30 latent Gaussians into binary covariates.
    pub thresholds: Vec<f64>,
    /// Outcome coefficients on the covariates.
    pub gamma: Vec<f64>,
    /// Outcome coefficient on the standardised confounder.
    pub beta: f64,
    pub intercept_light: f64,
    pub intercept_heavy: f64,
}

const Z_MEAN: f64 = 4.5;
// sd of the discrete uniform on 0..=9
const Z_SD: f64 = 2.872_281_323_269_7;
const CALIBRATION_UNITS: usize = 100_000;
const OUTCOME_BETA: f64 = 1.5;
const OUTCOME_GAMMA_SD: f64 = 0.15;

fn draw_units<R: Rng + ?Sized>(
    n: usize,
    st: &SyntheticTwinsStructure,
    rng: &mut R,
) -> (Vec<u8>, Array2<f64>) {
    let d = st.loadings.len();
    let mut x = Array2::zeros((n, d));
    let mut z = Vec::with_capacity(n);
    for i in 0..n {
        let zi: u8 = rng.random_range(0..GESTATION_LEVELS as u8);
        let zs = (zi as f64 - Z_MEAN) / Z_SD;
        for j in 0..d {
            let r = st.loadings[j];
            let e: f64 = StandardNormal.sample(rng);
            let u = r * zs + (1.0 - r * r).sqrt() * e;
            x[[i, j]] = if j < SYNTHETIC_BINARY {
                f64::from(u8::from(u > st.thresholds[j]))
            } else {
                u
            };
        }
        z.push(zi);
    }
    (z, x)
}

/// Outcome logit without the intercept.
fn outcome_score(st: &SyntheticTwinsStructure, z: u8, x: ndarray::ArrayView1<f64>) -> f64 {
    let zs = (z as f64 - Z_MEAN) / Z_SD;
    let lin: f64 = x
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            // binary covariates enter as ±0.5
            let v = if j < SYNTHETIC_BINARY { v - 0.5 } else { v };
            st.gamma[j] * v
        })
        .sum();
    -st.beta * zs + lin
}

/// Intercept `a` with `mean σ(a + s_i) = target`, by bisection.
fn calibrate_intercept(scores: &[f64], target: f64) -> f64 {
    let mean_p = |a: f64| scores.iter().map(|s| sigmoid(a + s)).sum::<f64>() / scores.len() as f64;
    let (mut lo, mut hi) = (-20.0, 20.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mean_p(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Draws the fixed population structure and calibrates both intercepts.
pub fn synthetic_twins_structure(config: &SyntheticTwinsConfig) -> Result<SyntheticTwinsStructure> {
    for (name, r) in [("rate_light", config.rate_light), ("rate_heavy", config.rate_heavy)] {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::invalid(format!("{name} must lie in (0, 1)")));
        }
    }
    let mut rng = rng_for(config.structural_seed, 0);
    let d = SYNTHETIC_BINARY + SYNTHETIC_CONTINUOUS;
    let loadings = (0..d).map(|_| rng.random_range(0.0..0.3)).collect();
    let thresholds = (0..SYNTHETIC_BINARY).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g = Normal::new(0.0, OUTCOME_GAMMA_SD).expect("finite sd");
    let gamma = (0..d).map(|_| g.sample(&mut rng)).collect();
    let mut st = SyntheticTwinsStructure {
        loadings,
        thresholds,
        gamma,
        beta: OUTCOME_BETA,
        intercept_light: 0.0,
        intercept_heavy: 0.0,
    };
    let (z, x) = draw_units(CALIBRATION_UNITS, &st, &mut rng);
    let scores: Vec<f64> = z
        .iter()
        .zip(x.axis_iter(Axis(0)))
        .map(|(&zi, row)| outcome_score(&st, zi, row))
        .collect();
    st.intercept_light = calibrate_intercept(&scores, config.rate_light);
    st.intercept_heavy = calibrate_intercept(&scores, config.rate_heavy);
    Ok(st)
}

/// Synthetic twin pairs with both mortality outcomes, confounded treatment and noisy proxies.
///
/// Both twins share a uniform draw, so each pair's outcomes are comonotone:
/// `y_k = 1[u < p_k]`. Units carry 45 covariates followed by 30 proxy bits.
pub fn gen_synthetic_twins(config: &SyntheticTwinsConfig) -> Result<Generated> {
    if config.n == 0 {
        return Err(Error::invalid("synthetic twins sample size must be at least 1"));
    }
    config.proxy.validate()?;
    let st = synthetic_twins_structure(config)?;
    let mut rng = rng_for(config.proxy.seed, 0);
    let (z, x) = draw_units(config.n, &st, &mut rng);
    let mut mu0 = Vec::with_capacity(config.n);
    let mut mu1 = Vec::with_capacity(config.n);
    let mut y_light = Vec::with_capacity(config.n);
    let mut y_heavy = Vec::with_capacity(config.n);
    for (zi, row) in z.iter().zip(x.axis_iter(Axis(0))) {
        let s = outcome_score(&st, *zi, row);
        let (p0, p1) = (sigmoid(st.intercept_light + s), sigmoid(st.intercept_heavy + s));
        let u: f64 = rng.random();
        y_light.push(f64::from(u8::from(u < p0)));
        y_heavy.push(f64::from(u8::from(u < p1)));
        mu0.push(p0);
        mu1.push(p1);
    }
    let d = SYNTHETIC_BINARY + SYNTHETIC_CONTINUOUS;
    let kinds: Vec<VarKind> = (0..d)
        .map(|j| if j < SYNTHETIC_BINARY { VarKind::Binary } else { VarKind::Continuous })
        .collect();
    let names: Vec<String> = (0..d)
        .map(|j| {
            if j < SYNTHETIC_BINARY {
                format!("b{}", j + 1)
            } else {
                format!("c{}", j + 1 - SYNTHETIC_BINARY)
            }
        })
        .collect();
    assemble_twins(&x, &names, &kinds, &z, &y_light, &y_heavy, Some((mu0, mu1)), &config.proxy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_closed_form_ate() {
        let expected = 0.5 * ((sigmoid(9.0) - sigmoid(-3.0)) + (sigmoid(6.0) - sigmoid(-6.0)));
        assert_eq!(toy_true_ate(), expected);
        assert!((toy_true_ate() - 0.97375).abs() < 5e-6);
    }

    #[test]
    fn toy_is_reproducible() {
        let a = gen_toy(&ToyConfig::new(200, 3)).unwrap();
        let b = gen_toy(&ToyConfig::new(200, 3)).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_ne!(a.dataset, gen_toy(&ToyConfig::new(200, 4)).unwrap().dataset);
    }

    #[test]
    fn treatment_probabilities() {
        let w = TwinsWeights { w_o: vec![0.0; 3], w_h: 5.0 };
        assert_eq!(treatment_probability(&[1.0, 2.0, 3.0], 1, &w).unwrap(), 0.5);
        assert!((treatment_probability(&[0.0; 3], 9, &w).unwrap() - sigmoid(4.0)).abs() < 1e-15);
        assert!((sigmoid(4.0) - 0.982).abs() < 5e-4);
        let mut prev = 0.0;
        for z in 0..10 {
            let p = treatment_probability(&[0.0; 3], z, &w).unwrap();
            assert!(p >= prev);
            prev = p;
        }
        assert!(treatment_probability(&[0.0; 3], 10, &w).is_err());
    }

    #[test]
    fn exact_proxies_without_noise() {
        let cfg = TwinsProxyConfig::new(0.0, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for z in 0..10u8 {
            let bits = make_proxies(z, &cfg, &mut rng).unwrap();
            assert_eq!(bits.len(), 30);
            for block in bits.chunks(10) {
                assert_eq!(block.iter().map(|&b| b as usize).sum::<usize>(), 1);
                assert_eq!(block[z as usize], 1);
            }
        }
        assert!(make_proxies(0, &TwinsProxyConfig::new(0.6, 1), &mut rng).is_err());
    }

    #[test]
    fn synthetic_twins_shape() {
        let g = gen_synthetic_twins(&SyntheticTwinsConfig::new(300, 0.1, 5)).unwrap();
        assert_eq!(g.dataset.n_covariates(), 75);
        assert_eq!(g.dataset.len(), 300);
        assert!(g.confounder.iter().all(|&z| z < 10));
    }
}
