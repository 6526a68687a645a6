use std::f64::consts::{LN_2, PI};

use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{Dataset, Standardizer, VarKind};
use crate::error::Error;
use crate::estimate::EstimateReport;
use crate::nn::{DenseNet, ParamStore, Tape};
use crate::train::{Objective, TrainConfig};

fn mixed_data(n: usize, seed: u64, outcome: VarKind) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, 3));
    let (mut t, mut y) = (Vec::new(), Vec::new());
    for i in 0..n {
        let z = rng.random::<f64>() < 0.5;
        x[[i, 0]] = f64::from(u8::from(rng.random::<f64>() < if z { 0.8 } else { 0.2 }));
        x[[i, 1]] = rng.random::<f64>() * 2.0 + f64::from(u8::from(z));
        x[[i, 2]] = f64::from(u8::from(rng.random::<f64>() < 0.5));
        let ti = u8::from(rng.random::<f64>() < if z { 0.7 } else { 0.3 });
        t.push(ti);
        let mean = f64::from(ti) + 2.0 * f64::from(u8::from(z)) - 1.0;
        y.push(match outcome {
            VarKind::Binary => f64::from(u8::from(rng.random::<f64>() < crate::nn::dist::sigmoid(mean))),
            VarKind::Continuous => 3.0 * mean + 10.0 + rng.random::<f64>(),
        });
    }
    let kinds = vec![VarKind::Binary, VarKind::Continuous, VarKind::Binary];
    Dataset::new(x, t, y, kinds, outcome).unwrap()
}

fn small_config(latent: LatentKind, dz: usize) -> CevaeConfig {
    CevaeConfig {
        latent_dim: dz,
        latent,
        hidden_layers: 2,
        width: 6,
        init_scale: 1.0,
        seed: 3,
        ..CevaeConfig::default()
    }
}

fn set_layer(store: &mut ParamStore, net: &DenseNet, layer: usize, w: Array2<f64>, b: Array2<f64>) {
    let l = net.layers[layer];
    store.value_mut(l.weight).assign(&w);
    store.value_mut(l.bias).assign(&b);
}

fn zero_output(store: &mut ParamStore, net: &DenseNet) {
    let l = *net.layers.last().unwrap();
    store.value_mut(l.weight).fill(0.0);
    store.value_mut(l.bias).fill(0.0);
}

fn opts(samples: usize) -> PredictOptions {
    PredictOptions {
        samples,
        seed: 11,
        workers: 1,
    }
}

#[test]
fn prior_at_origin() {
    let ds = mixed_data(5, 0, VarKind::Binary);
    let m = CevaeModel::new(small_config(LatentKind::Continuous, 4), &ds).unwrap();
    let b = m.prepare(&ds).unwrap();
    let tape = Tape::new();
    let z = tape.constant(Array2::zeros((5, 4)));
    let joint = m.generative_log_joint(&tape, z, &b).unwrap().value();
    let (lx, lt, ly) = m
        .generative_terms(
            &tape,
            z,
            tape.constant(b.x_bin.clone()),
            tape.constant(b.x_cont.clone()),
            tape.constant(b.t.clone()),
            tape.constant(b.y.clone()),
        )
        .unwrap();
    let data = (lx + lt + ly).value();
    for i in 0..5 {
        let log_pz = joint[[i, 0]] - data[[i, 0]];
        assert!((log_pz + 2.0 * (2.0 * PI).ln()).abs() < 1e-12);
    }
}

#[test]
fn treated_units_never_touch_the_control_head() {
    let mut ds = mixed_data(6, 1, VarKind::Continuous);
    ds.t = vec![1; 6];
    let m = CevaeModel::new(small_config(LatentKind::Continuous, 2), &ds).unwrap();
    let b = m.prepare(&ds).unwrap();
    let tape = Tape::new();
    let z = tape.param(&m.store, m.nets.f3.layers[0].weight);
    let _ = z;
    let zs = tape.constant(Array2::from_elem((6, 2), 0.3));
    let loss = m.generative_log_joint(&tape, zs, &b).unwrap().sum();
    let grads = loss.backward().unwrap();
    let g = tape.param_grads(&grads, &m.store);
    for (id, grad) in m.store.ids().zip(&g) {
        if m.store.name(id).starts_with("f3.") {
            assert!(grad.iter().all(|v| *v == 0.0), "{}", m.store.name(id));
        }
        if m.store.name(id).starts_with("f2.") {
            assert!(grad.iter().any(|v| *v != 0.0));
        }
    }
}

#[test]
fn zero_treated_logit_gives_half() {
    let mut ds = mixed_data(4, 2, VarKind::Binary);
    ds.t = vec![1; 4];
    let mut m = CevaeModel::new(small_config(LatentKind::Continuous, 2), &ds).unwrap();
    let f2 = m.nets.f2.clone();
    zero_output(&mut m.store, &f2);
    let b = m.prepare(&ds).unwrap();
    let tape = Tape::new();
    let (_, _, ly) = m
        .generative_terms(
            &tape,
            tape.constant(Array2::zeros((4, 2))),
            tape.constant(b.x_bin.clone()),
            tape.constant(b.x_cont.clone()),
            tape.constant(b.t.clone()),
            tape.constant(b.y.clone()),
        )
        .unwrap();
    for v in ly.value() {
        assert!((v + LN_2).abs() < 1e-12);
    }
}

#[test]
fn posterior_heads_switch_on_treatment_and_variances_are_positive() {
    let ds = mixed_data(30, 3, VarKind::Continuous);
    let m = CevaeModel::new(small_config(LatentKind::Continuous, 3), &ds).unwrap();
    let b = m.prepare(&ds).unwrap();
    let tape = Tape::new();
    let x = tape.constant(b.x.clone());
    let y = tape.constant(b.y.clone());
    let (mu1, var1) = m.posterior_params(&tape, x, tape.constant(Array2::ones((30, 1))), y).unwrap();
    let (mu0, var0) = m.posterior_params(&tape, x, tape.constant(Array2::zeros((30, 1))), y).unwrap();
    assert_ne!(mu1.value(), mu0.value());
    assert!(var1.value().iter().chain(var0.value().iter()).all(|v| *v > 0.0));
    assert!(matches!(m.posterior_logits(&tape, x, tape.constant(b.t.clone()), y), Err(Error::InvalidArgument(_))));
}

#[test]
fn duplicated_rows_double_the_exact_bound() {
    let ds = mixed_data(7, 4, VarKind::Binary);
    let m = CevaeModel::new(small_config(LatentKind::Binary, 3), &ds).unwrap();
    let idx: Vec<usize> = (0..7).chain(0..7).collect();
    let once = m.prepare(&ds).unwrap();
    let twice = once.rows(&idx);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let tape = Tape::new();
    let a = m.elbo(&tape, &once, &mut rng).unwrap().scalar();
    let b = m.elbo(&tape, &twice, &mut rng).unwrap().scalar();
    assert!((b - 2.0 * a).abs() < 1e-9 * a.abs());
}

#[test]
fn auxiliary_terms_are_additive_and_disjoint_from_the_outcome_heads() {
    let ds = mixed_data(9, 5, VarKind::Binary);
    let mut m = CevaeModel::new(small_config(LatentKind::Binary, 2), &ds).unwrap();
    let b = m.prepare(&ds).unwrap();
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let full = m.full_objective(&tape, &b, &mut rng).unwrap().scalar();
    let elbo = m.elbo(&tape, &b, &mut rng).unwrap().scalar();
    let aux = m.auxiliary_per_unit(&tape, &b).unwrap().sum().scalar();
    assert!((full - elbo - aux).abs() < 1e-9);

    let grads = m.auxiliary_per_unit(&tape, &b).unwrap().sum().backward().unwrap();
    let g = tape.param_grads(&grads, &m.store);
    for (id, grad) in m.store.ids().zip(&g) {
        if m.store.name(id).starts_with("f2.") {
            assert!(grad.iter().all(|v| *v == 0.0));
        }
    }

    m.config.auxiliary = false;
    let tape = Tape::new();
    let without = m.full_objective(&tape, &b, &mut rng).unwrap().scalar();
    assert!((without - elbo).abs() < 1e-12);
}

#[test]
fn zero_propensity_logit_contributes_log_half() {
    let ds = mixed_data(5, 6, VarKind::Binary);
    let mut m = CevaeModel::new(small_config(LatentKind::Binary, 1), &ds).unwrap();
    let (g4, g6, g7) = (m.nets.g4.clone(), m.nets.g6.clone(), m.nets.g7.clone());
    for net in [&g4, &g6, &g7] {
        zero_output(&mut m.store, net);
    }
    let b = m.prepare(&ds).unwrap();
    let tape = Tape::new();
    // both auxiliary Bernoullis sit at σ(0)
    for v in m.auxiliary_per_unit(&tape, &b).unwrap().value() {
        assert!((v + 2.0 * LN_2).abs() < 1e-12);
    }
}

#[test]
fn kl_part_vanishes_when_the_posterior_is_the_prior() {
    // log p(z) − log q(z) with q = N(0, 1) at any z is exactly zero
    let ds = mixed_data(5, 7, VarKind::Binary);
    let m = CevaeModel::new(small_config(LatentKind::Continuous, 2), &ds).unwrap();
    let b = m.prepare(&ds).unwrap();
    let tape = Tape::new();
    let z = tape.constant(array![[0.3, -1.2], [2.0, 0.1], [0.0, 0.0], [-0.7, 0.5], [1.1, 1.1]]);
    let terms = m
        .terms_at(
            &tape,
            z,
            tape.constant(b.x_bin.clone()),
            tape.constant(b.x_cont.clone()),
            tape.constant(b.t.clone()),
            tape.constant(b.y.clone()),
            tape.constant(Array2::zeros((5, 2))),
            tape.constant(Array2::ones((5, 2))),
        )
        .unwrap();
    for v in (terms.log_pz - terms.log_qz).value() {
        assert!(v.abs() < 1e-12);
    }
}

fn train_small(seed: u64, patience: usize) -> (CevaeModel, crate::train::TrainReport) {
    let ds = mixed_data(300, 8, VarKind::Binary);
    let (tr, va) = (ds.subset(&(0..240).collect::<Vec<_>>()), ds.subset(&(240..300).collect::<Vec<_>>()));
    let mut m = CevaeModel::new(small_config(LatentKind::Continuous, 2), &tr).unwrap();
    let cfg = TrainConfig {
        max_epochs: 12,
        batch_size: 40,
        patience,
        seed,
        ..TrainConfig::default()
    };
    let rep = m.train(&tr, &va, &cfg).unwrap();
    (m, rep)
}

#[test]
fn training_improves_and_is_reproducible() {
    let (m1, r1) = train_small(5, 100);
    let (m2, r2) = train_small(5, 100);
    assert!(r1.history[4].train_objective > r1.history[0].train_objective);
    assert_eq!(r1, r2);
    assert_eq!(m1.store, m2.store);
    assert!(m1.is_trained());
}

#[test]
fn zero_patience_stops_at_the_first_stale_epoch() {
    let (_, rep) = train_small(6, 0);
    let mut best = f64::NEG_INFINITY;
    let first_stale = rep
        .history
        .iter()
        .find(|r| {
            let stale = r.validation_objective <= best;
            best = best.max(r.validation_objective);
            stale
        })
        .map(|r| r.epoch);
    match first_stale {
        Some(e) => assert_eq!(rep.epochs_run, e),
        None => assert_eq!(rep.epochs_run, 12),
    }
}

#[test]
fn empty_validation_is_rejected() {
    let ds = mixed_data(20, 9, VarKind::Binary);
    let mut m = CevaeModel::new(small_config(LatentKind::Continuous, 2), &ds).unwrap();
    let empty = ds.subset(&[]);
    assert!(matches!(
        m.train(&ds, &empty, &TrainConfig::default()),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn untrained_model_cannot_predict() {
    let ds = mixed_data(10, 10, VarKind::Binary);
    let m = CevaeModel::new(small_config(LatentKind::Continuous, 2), &ds).unwrap();
    assert!(matches!(m.predict_do(&ds.x, 1, &opts(5)), Err(Error::State(_))));
}

#[test]
fn saturated_propensity_always_samples_treatment() {
    let ds = mixed_data(10, 11, VarKind::Binary);
    let mut m = CevaeModel::new(small_config(LatentKind::Continuous, 2), &ds).unwrap();
    let n = &m.nets;
    let (g4, g2, g3) = (n.g4.clone(), n.g2.clone(), n.g3.clone());
    for net in [&g4, &g2, &g3] {
        zero_output(&mut m.store, net);
    }
    let last = |net: &DenseNet| net.layers.len() - 1;
    let w = m.store.value(g4.layers[last(&g4)].weight).dim();
    set_layer(&mut m.store, &g4, last(&g4), Array2::zeros(w), array![[50.0]]);
    // treated posterior centred at +10, control at −10, both with tiny variance
    let w3 = m.store.value(g3.layers[last(&g3)].weight).dim();
    set_layer(&mut m.store, &g3, last(&g3), Array2::zeros(w3), array![[10.0, 10.0, -30.0, -30.0]]);
    set_layer(&mut m.store, &g2, last(&g2), Array2::zeros(w3), array![[-10.0, -10.0, -30.0, -30.0]]);
    m.mark_trained();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for i in 0..200 {
        let z = m.posterior_sample_new(&ds.x.row(i % 10).to_vec(), &mut rng).unwrap();
        assert_eq!(z.len(), 2);
        assert!(z.iter().all(|v| *v > 5.0));
    }
}

#[test]
fn symmetric_posterior_has_zero_mean() {
    let ds = mixed_data(10, 12, VarKind::Binary);
    let mut m = CevaeModel::new(small_config(LatentKind::Continuous, 3), &ds).unwrap();
    let (g2, g3) = (m.nets.g2.clone(), m.nets.g3.clone());
    zero_output(&mut m.store, &g2);
    zero_output(&mut m.store, &g3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = ds.x.row(0).to_vec();
    let mut sum = [0.0; 3];
    for _ in 0..10_000 {
        let z = m.posterior_sample_new(&x, &mut rng).unwrap();
        for (s, v) in sum.iter_mut().zip(z) {
            *s += v;
        }
    }
    assert!(sum.iter().all(|s| (s / 10_000.0).abs() < 0.05), "{sum:?}");
}

fn trained_small() -> (CevaeModel, Dataset) {
    let ds = mixed_data(40, 13, VarKind::Binary);
    let mut m = CevaeModel::new(small_config(LatentKind::Continuous, 2), &ds).unwrap();
    m.mark_trained();
    (m, ds)
}

#[test]
fn binary_predictions_are_probabilities_and_ate_is_mean_ite() {
    let (m, ds) = trained_small();
    let r = m.estimate_effects(&ds, &opts(20)).unwrap();
    assert!(r.y0.iter().chain(&r.y1).all(|p| (0.0..=1.0).contains(p)));
    let mean = r.ite.iter().sum::<f64>() / r.ite.len() as f64;
    assert!((r.ate - mean).abs() < 1e-15);
}

#[test]
fn identical_heads_give_zero_effect() {
    let (mut m, ds) = trained_small();
    for (a, b) in m.nets.f2.layers.clone().iter().zip(m.nets.f3.layers.clone()) {
        let (w, bias) = (m.store.value(a.weight).clone(), m.store.value(a.bias).clone());
        m.store.value_mut(b.weight).assign(&w);
        m.store.value_mut(b.bias).assign(&bias);
    }
    let r = m.estimate_effects(&ds, &opts(10)).unwrap();
    assert!(r.ite.iter().all(|v| *v == 0.0));
    assert_eq!(r.ate, 0.0);
}

#[test]
fn all_treated_att_equals_ate() {
    let (m, mut ds) = trained_small();
    ds.t = vec![1; ds.len()];
    let r = m.estimate_effects(&ds, &opts(10)).unwrap();
    assert_eq!(r.att, Some(r.ate));
}

#[test]
fn control_head_perturbation_leaves_treated_prediction() {
    let (mut m, ds) = trained_small();
    let before = m.predict_do(&ds.x, 1, &opts(15)).unwrap();
    for l in m.nets.f3.layers.clone() {
        m.store.value_mut(l.weight).mapv_inplace(|v| v * 3.0 - 1.0);
    }
    assert_eq!(before, m.predict_do(&ds.x, 1, &opts(15)).unwrap());
}

#[test]
fn averages_ignore_draw_order_chunking_and_workers() {
    let (m, ds) = trained_small();
    let o = opts(25);
    let (y0, y1) = m.predict_potential(&ds.x, &o).unwrap();
    let (s0, s1) = m.outcome_samples(&ds.x, &o).unwrap();
    for i in 0..ds.len() {
        let mut row: Vec<f64> = s1.row(i).to_vec();
        row.reverse();
        row.rotate_left(7);
        let permuted = row.iter().sum::<f64>() / 25.0;
        assert!((permuted - y1[i]).abs() < 1e-12);
        assert!((s0.row(i).sum() / 25.0 - y0[i]).abs() < 1e-12);
    }
    let threaded = m
        .predict_potential(&ds.x, &PredictOptions { workers: 3, ..o })
        .unwrap();
    assert_eq!((y0.clone(), y1.clone()), threaded);
    // a unit's prediction does not depend on the rest of the batch
    let tail = ds.subset(&(0..ds.len()).collect::<Vec<_>>());
    assert_eq!(m.predict_do(&tail.x, 1, &o).unwrap(), y1);
}

/// The four-variable binary model with `y = t XOR z`, wired into a CEVAE with
/// a binary latent and no hidden layers so every factor is exact.
fn oracle_model(rho_x: f64, rho_t: f64) -> CevaeModel {
    let cfg = CevaeConfig {
        latent_dim: 1,
        latent: LatentKind::Binary,
        hidden_layers: 0,
        ..CevaeConfig::default()
    };
    let mut m = CevaeModel::with_layout(cfg, vec![VarKind::Binary], VarKind::Binary, Standardizer::identity(1)).unwrap();
    let logit = |p: f64| (p / (1.0 - p)).ln();
    let affine = |at0: f64, at1: f64| (array![[logit(at1) - logit(at0)]], array![[logit(at0)]]);
    let pz1 = |x: f64| if x == 1.0 { rho_x } else { 1.0 - rho_x };
    let pt1_z = |z: f64| if z == 1.0 { rho_t } else { 1.0 - rho_t };
    let pt1_x = |x: f64| pz1(x) * pt1_z(1.0) + (1.0 - pz1(x)) * pt1_z(0.0);
    // P(z=1 | x, t)
    let pz1_xt = |x: f64, t: f64| {
        let lik = |z: f64| if t == 1.0 { pt1_z(z) } else { 1.0 - pt1_z(z) };
        let a = pz1(x) * lik(1.0);
        a / (a + (1.0 - pz1(x)) * lik(0.0))
    };
    let big = 30.0;
    let n = m.nets.clone();
    let s = &mut m.store;
    let (w, b) = affine(pt1_x(0.0), pt1_x(1.0));
    set_layer(s, &n.g4, 0, w, b);
    // treated: y = 1 exactly when z = 0
    let (w, b) = affine(1.0 - pz1_xt(0.0, 1.0), 1.0 - pz1_xt(1.0, 1.0));
    set_layer(s, &n.g6, 0, w, b);
    let (w, b) = affine(pz1_xt(0.0, 0.0), pz1_xt(1.0, 0.0));
    set_layer(s, &n.g7, 0, w, b);
    // posterior input is (x, y); z = t XOR y
    set_layer(s, &n.g3, 0, array![[0.0], [-2.0 * big]], array![[big]]);
    set_layer(s, &n.g2, 0, array![[0.0], [2.0 * big]], array![[-big]]);
    set_layer(s, &n.f2, 0, array![[-2.0 * big]], array![[big]]);
    set_layer(s, &n.f3, 0, array![[2.0 * big]], array![[-big]]);
    m.mark_trained();
    m
}

#[test]
fn oracle_parameterised_model_recovers_the_interventional_mean() {
    let m = oracle_model(0.8, 0.75);
    let x = Array2::from_shape_fn((400, 1), |(i, _)| (i % 2) as f64);
    let o = PredictOptions {
        samples: 500,
        seed: 2,
        workers: 1,
    };
    let (y0, y1) = m.predict_potential(&x, &o).unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    // 200k Bernoulli(½) draws: sd ≈ 0.0011
    assert!((mean(&y1) - 0.5).abs() < 0.006, "{}", mean(&y1));
    assert!((mean(&y0) - 0.5).abs() < 0.006, "{}", mean(&y0));
    // per unit: P(z=0 | x=1) = 0.2
    let ones: Vec<f64> = y1.iter().skip(1).step_by(2).copied().collect();
    assert!((mean(&ones) - 0.2).abs() < 0.01);
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let (m, ds) = trained_small();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    m.save(&path).unwrap();
    let back = CevaeModel::load(&path).unwrap();
    assert_eq!(back.store, m.store);
    assert!(back.is_trained());
    assert_eq!(
        back.predict_potential(&ds.x, &opts(5)).unwrap(),
        m.predict_potential(&ds.x, &opts(5)).unwrap()
    );
}

#[test]
fn checkpoint_header_is_checked() {
    let (m, _) = trained_small();
    let text = m.to_checkpoint().unwrap();
    let bumped = text.replacen(&format!("\"version\":{CHECKPOINT_VERSION}"), "\"version\":99", 1);
    assert!(matches!(CevaeModel::from_checkpoint(&bumped), Err(Error::Checkpoint(_))));
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["header"]["config"]["width"] = serde_json::json!(7);
    assert!(matches!(CevaeModel::from_checkpoint(&v.to_string()), Err(Error::Checkpoint(_))));
    assert!(CevaeModel::from_checkpoint("{\"header\":{}}").is_err());
}

#[test]
fn config_validation() {
    let ds = mixed_data(5, 14, VarKind::Binary);
    for cfg in [
        CevaeConfig { latent_dim: 0, ..CevaeConfig::default() },
        CevaeConfig { latent: LatentKind::Binary, latent_dim: MAX_BINARY_LATENT + 1, ..CevaeConfig::default() },
        CevaeConfig { outcome_variance: 0.0, ..CevaeConfig::default() },
    ] {
        assert!(matches!(CevaeModel::new(cfg, &ds), Err(Error::InvalidArgument(_))));
    }
    let (m, _) = trained_small();
    assert!(m.predict_do(&Array2::zeros((2, 5)), 1, &opts(3)).is_err());
    assert!(m.predict_do(&Array2::zeros((2, 3)), 2, &opts(3)).is_err());
    assert!(m.predict_do(&Array2::zeros((2, 3)), 1, &opts(0)).is_err());
    let _ = m.store();
}

#[test]
fn estimate_report_from_potential() {
    let r = EstimateReport::from_potential(vec![0.0, 1.0, 0.5], vec![1.0, 1.0, 0.0], &[1, 0, 1]);
    assert_eq!(r.ite, vec![1.0, 0.0, -0.5]);
    assert!((r.ate - 0.5 / 3.0).abs() < 1e-15);
    assert_eq!(r.att, Some(0.25));
    assert_eq!(r.counterfactual(&[1, 0, 1]), vec![0.0, 1.0, 0.5]);
}
