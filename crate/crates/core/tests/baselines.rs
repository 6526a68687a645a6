use cevae_core::baselines::{fit_lr1, fit_lr1_from, fit_lr2, GlmConfig, Tarnet, TarnetConfig};
use cevae_core::data::{Dataset, VarKind};
use cevae_core::estimate::{EffectModel, EstimateReport};
use cevae_core::nn::dist::sigmoid;
use cevae_core::nn::AdamaxConfig;
use cevae_core::train::TrainConfig;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Two Gaussian covariates and a binary one; `t` depends on `x` (or is a fair
/// coin) and `y` is logistic in `x` plus `effect·t`.
fn logistic_data(n: usize, effect: f64, randomized: bool, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, 3));
    let (mut t, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        let c = f64::from(u8::from(rng.random::<f64>() < 0.4));
        x[[i, 0]] = a;
        x[[i, 1]] = 2.0 * b + 1.0;
        x[[i, 2]] = c;
        let pt = if randomized { 0.5 } else { sigmoid(1.2 * a - 0.5 * c) };
        let ti = u8::from(rng.random::<f64>() < pt);
        t.push(ti);
        let py = sigmoid(0.8 * a - 0.3 * b + 0.7 * c - 0.2 + effect * f64::from(ti));
        y.push(f64::from(u8::from(rng.random::<f64>() < py)));
    }
    Dataset::new(x, t, y, vec![VarKind::Continuous, VarKind::Continuous, VarKind::Binary], VarKind::Binary).unwrap()
}

#[test]
fn lr1_finds_no_effect_where_there_is_none() {
    let ds = logistic_data(50_000, 0.0, false, 1);
    let m = fit_lr1(&ds, &GlmConfig::default()).unwrap();
    assert!(m.glm.converged);
    assert!(m.treatment_coefficient().abs() < 0.05, "{}", m.treatment_coefficient());
    let r = EstimateReport::predict(&m, &ds).unwrap();
    assert!(r.ite.iter().all(|v| v.abs() < 0.02));
}

#[test]
fn lr2_finds_no_effect_where_there_is_none() {
    let ds = logistic_data(50_000, 0.0, false, 2);
    let r = EstimateReport::predict(&fit_lr2(&ds, &GlmConfig::default()).unwrap(), &ds).unwrap();
    assert!(r.ate.abs() < 0.02, "{}", r.ate);
}

#[test]
fn lr2_on_randomised_data_matches_difference_in_means() {
    let ds = logistic_data(50_000, 0.9, true, 3);
    let r = EstimateReport::predict(&fit_lr2(&ds, &GlmConfig::default()).unwrap(), &ds).unwrap();
    assert!((r.ate - ds.naive_ate().unwrap()).abs() < 0.02);
}

#[test]
fn convex_restarts_agree() {
    let ds = logistic_data(3000, 0.5, false, 4);
    let cfg = GlmConfig::default();
    let a = fit_lr1(&ds, &cfg).unwrap();
    let b = fit_lr1_from(&ds, &cfg, Some(&[2.0, -1.5, 0.7, -3.0, 1.0])).unwrap();
    assert!(a.glm.converged && b.glm.converged);
    for (u, v) in a.glm.weights.iter().zip(&b.glm.weights) {
        assert!((u - v).abs() < 1e-4, "{u} vs {v}");
    }
}

#[test]
fn perfect_proxy_lets_lr1_recover_the_effect() {
    // z ~ Bern(½), x = z, P(t=z) = 0.75 and y = t XOR z, so the true ATE is 0
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 50_000;
    let mut x = Array2::zeros((n, 1));
    let (mut t, mut y) = (Vec::new(), Vec::new());
    for i in 0..n {
        let z = u8::from(rng.random::<f64>() < 0.5);
        x[[i, 0]] = f64::from(z);
        let ti = if rng.random::<f64>() < 0.75 { z } else { 1 - z };
        t.push(ti);
        y.push(f64::from(ti ^ z));
    }
    let ds = Dataset::new(x, t, y, vec![VarKind::Binary], VarKind::Binary).unwrap();
    let r = EstimateReport::predict(&fit_lr1(&ds, &GlmConfig::default()).unwrap(), &ds).unwrap();
    assert!(r.ate.abs() < 0.02, "{}", r.ate);
}

#[test]
fn tarnet_without_hidden_layers_is_lr2() {
    let ds = logistic_data(2000, 0.6, false, 6);
    let lr2 = fit_lr2(&ds, &GlmConfig::default()).unwrap();
    let cfg = TarnetConfig {
        hidden_layers: 0,
        init_scale: 0.1,
        seed: 2,
        ..TarnetConfig::default()
    };
    let mut net = Tarnet::new(cfg, &ds).unwrap();
    let tc = TrainConfig {
        adamax: AdamaxConfig {
            lr: 0.05,
            decay: 0.997,
            ..AdamaxConfig::default()
        },
        max_epochs: 4000,
        batch_size: ds.len(),
        patience: 4000,
        seed: 0,
        ..TrainConfig::default()
    };
    net.train(&ds, &ds, &tc).unwrap();
    let (a0, a1) = lr2.potential_outcomes(&ds.x).unwrap();
    let (b0, b1) = net.potential_outcomes(&ds.x).unwrap();
    let worst = a0
        .iter()
        .chain(&a1)
        .zip(b0.iter().chain(&b1))
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-3, "largest prediction gap {worst}");
}
