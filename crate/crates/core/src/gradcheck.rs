//! Reverse-mode derivatives of every tape operation, the dense network and the
//! full CEVAE objective compared with central finite differences.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cevae::{CevaeConfig, CevaeModel, LatentKind};
use crate::data::{Dataset, VarKind};
use crate::nn::dist::{bernoulli_logit_log_prob, gaussian_log_prob, sample_gaussian_reparam, standard_normal_log_prob};
use crate::nn::{Activation, DenseNet, InitScale, Matrix, ParamStore, Tape, Var};
use crate::{Error, Result};

/// Finite-difference step.
pub const STEP: f64 = 1e-6;

/// Every check [`check`] knows by name.
pub const OPERATIONS: &[&str] = &[
    "neg",
    "scale",
    "offset",
    "elu",
    "sigmoid",
    "softplus",
    "log_sigmoid",
    "exp",
    "ln",
    "sqrt",
    "square",
    "clamp",
    "sum",
    "sum_cols",
    "sum_rows",
    "mean",
    "standard_normal_density",
    "add",
    "sub",
    "mul",
    "div",
    "bernoulli_density",
    "gaussian_density",
    "matmul",
    "slice_and_concat",
    "broadcast_rows",
    "reparameterised_gaussian",
    "dense_network",
    "objective_continuous",
    "objective_binary",
];

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub cases: usize,
    /// Derivative entries compared.
    pub entries: usize,
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, 1)`.
    pub worst: f64,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.worst <= tol
    }
}

#[derive(Clone, Copy)]
enum Domain {
    Any,
    Positive,
    /// Bounded away from the given kink points.
    AvoidKinks(&'static [f64]),
}

fn sample(rng: &mut ChaCha8Rng, shape: (usize, usize), dom: Domain) -> Matrix {
    Array2::from_shape_fn(shape, |_| match dom {
        Domain::Any => rng.random_range(-3.0..3.0),
        Domain::Positive => rng.random_range(0.3..3.0),
        Domain::AvoidKinks(k) => loop {
            let v: f64 = rng.random_range(-3.0..3.0);
            if k.iter().all(|p| (v - p).abs() > 1e-3) {
                break v;
            }
        },
    })
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

#[derive(Default)]
struct Tally {
    entries: usize,
    worst: f64,
}

impl Tally {
    fn add(&mut self, analytic: f64, numeric: f64) {
        self.entries += 1;
        let e = rel_err(analytic, numeric);
        // NaN must not hide behind max()
        self.worst = if e.is_nan() { f64::INFINITY } else { self.worst.max(e) };
    }
}

type Build = for<'t> fn(&'t Tape, &[Var<'t>]) -> Var<'t>;

/// Contracts the op output with fixed random weights so every adjoint entry
/// is exercised, then compares each input adjoint with central differences.
fn check_inputs(shapes: &[(usize, usize)], doms: &[Domain], build: Build, rng: &mut ChaCha8Rng, tally: &mut Tally) -> Result<()> {
    let inputs: Vec<Matrix> = shapes.iter().zip(doms).map(|(&s, &d)| sample(rng, s, d)).collect();
    let probe = {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.var(x.clone())).collect();
        build(&tape, &vars).shape()
    };
    let w = sample(rng, probe, Domain::Any);
    let eval = |xs: &[Matrix]| -> Result<(f64, Vec<Matrix>)> {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.var(x.clone())).collect();
        let loss = (build(&tape, &vars) * tape.constant(w.clone())).sum();
        let g = loss.backward()?;
        Ok((loss.scalar(), vars.iter().map(|v| g.wrt(*v)).collect()))
    };
    let (_, grads) = eval(&inputs)?;
    for (k, x) in inputs.iter().enumerate() {
        for idx in ndarray::indices(x.dim()) {
            let mut plus = inputs.clone();
            plus[k][idx] += STEP;
            let mut minus = inputs.clone();
            minus[k][idx] -= STEP;
            let fd = (eval(&plus)?.0 - eval(&minus)?.0) / (2.0 * STEP);
            tally.add(grads[k][idx], fd);
        }
    }
    Ok(())
}

fn shape(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..5), rng.random_range(1..5))
}

/// Second operand of a binary op: same shape or broadcast along a random axis.
fn broadcast_shape(rng: &mut ChaCha8Rng, s: (usize, usize)) -> (usize, usize) {
    match rng.random_range(0..3) {
        0 => s,
        1 => (1, s.1),
        _ => (s.0, 1),
    }
}

fn unary(rng: &mut ChaCha8Rng, tally: &mut Tally, dom: Domain, build: Build) -> Result<()> {
    let s = shape(rng);
    check_inputs(&[s], &[dom], build, rng, tally)
}

fn binary(rng: &mut ChaCha8Rng, tally: &mut Tally, dom_b: Domain, build: Build) -> Result<()> {
    let s = shape(rng);
    let t = broadcast_shape(rng, s);
    check_inputs(&[s, t], &[Domain::Any, dom_b], build, rng, tally)
}

fn dense_case(rng: &mut ChaCha8Rng, tally: &mut Tally) -> Result<()> {
    let mut store = ParamStore::new();
    let dims = [rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..3)];
    let net = DenseNet::new(&mut store, "n", dims[0], &[dims[1]], dims[2], Activation::Elu, InitScale(1.0), rng);
    let x = sample(rng, (3, dims[0]), Domain::Any);
    let loss = |s: &ParamStore| -> Result<(f64, Vec<Matrix>)> {
        let tape = Tape::new();
        let out = net.forward(&tape, s, tape.constant(x.clone()))?;
        let l = out.square().sum();
        let g = l.backward()?;
        Ok((l.scalar(), tape.param_grads(&g, s)))
    };
    let (_, grads) = loss(&store)?;
    for (p, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
        for idx in ndarray::indices(store.value(id).dim()) {
            let mut s = store.clone();
            s.value_mut(id)[idx] += STEP;
            let up = loss(&s)?.0;
            s.value_mut(id)[idx] -= 2.0 * STEP;
            let fd = (up - loss(&s)?.0) / (2.0 * STEP);
            tally.add(grads[p][idx], fd);
        }
    }
    Ok(())
}

fn objective_fixture(latent: LatentKind) -> Result<(CevaeModel, Dataset)> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 8;
    let x = Array2::from_shape_fn((n, 3), |(_, j)| {
        if j == 0 {
            f64::from(u8::from(rng.random::<f64>() < 0.5))
        } else {
            rng.random_range(-2.0..2.0)
        }
    });
    let t = (0..n).map(|i| (i % 2) as u8).collect();
    let y = (0..n).map(|_| rng.random_range(-1.0..3.0)).collect();
    let ds = Dataset::new(x, t, y, vec![VarKind::Binary, VarKind::Continuous, VarKind::Continuous], VarKind::Continuous)?;
    let cfg = CevaeConfig {
        latent_dim: 2,
        latent,
        hidden_layers: 2,
        width: 4,
        init_scale: 1.0,
        seed: 1,
        ..CevaeConfig::default()
    };
    Ok((CevaeModel::new(cfg, &ds)?, ds))
}

/// One random parameter entry per case of the training objective (ELBO plus
/// auxiliary terms), with the reparameterisation noise held fixed.
fn objective(latent: LatentKind, cases: usize, rng: &mut ChaCha8Rng, tally: &mut Tally) -> Result<()> {
    let (model, ds) = objective_fixture(latent)?;
    let data = model.prepare(&ds)?;
    let eval = |s: &ParamStore| -> Result<(f64, Vec<Matrix>)> {
        let mut m = model.clone();
        m.store = s.clone();
        let tape = Tape::new();
        let mut noise = ChaCha8Rng::seed_from_u64(2);
        let l = m.full_objective(&tape, &data, &mut noise)?;
        let g = l.backward()?;
        Ok((l.scalar(), tape.param_grads(&g, &m.store)))
    };
    let (_, grads) = eval(&model.store)?;
    let ids: Vec<_> = model.store.ids().collect();
    for _ in 0..cases {
        let p = rng.random_range(0..ids.len());
        let dim = model.store.value(ids[p]).dim();
        let idx = (rng.random_range(0..dim.0), rng.random_range(0..dim.1));
        let mut s = model.store.clone();
        s.value_mut(ids[p])[idx] += STEP;
        let up = eval(&s)?.0;
        s.value_mut(ids[p])[idx] -= 2.0 * STEP;
        let fd = (up - eval(&s)?.0) / (2.0 * STEP);
        tally.add(grads[p][idx], fd);
    }
    Ok(())
}

/// Runs `cases` random instances of the named check. Inputs are drawn from a
/// stream seeded by the name, so results are reproducible.
pub fn check(name: &str, cases: usize) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(name.bytes().map(u64::from).sum());
    let mut tally = Tally::default();
    let t = &mut tally;
    match name {
        "objective_continuous" => objective(LatentKind::Continuous, cases, &mut rng, t)?,
        "objective_binary" => objective(LatentKind::Binary, cases, &mut rng, t)?,
        _ => {
            for _ in 0..cases {
                let rng = &mut rng;
                match name {
                    "neg" => unary(rng, t, Domain::Any, |_, v| -v[0]),
                    "scale" => unary(rng, t, Domain::Any, |_, v| v[0].scale(-1.7)),
                    "offset" => unary(rng, t, Domain::Any, |_, v| v[0].offset(0.4).square()),
                    "elu" => unary(rng, t, Domain::Any, |_, v| v[0].elu()),
                    "sigmoid" => unary(rng, t, Domain::Any, |_, v| v[0].sigmoid()),
                    "softplus" => unary(rng, t, Domain::Any, |_, v| v[0].softplus()),
                    "log_sigmoid" => unary(rng, t, Domain::Any, |_, v| v[0].log_sigmoid()),
                    "exp" => unary(rng, t, Domain::Any, |_, v| v[0].exp()),
                    "ln" => unary(rng, t, Domain::Positive, |_, v| v[0].ln()),
                    "sqrt" => unary(rng, t, Domain::Positive, |_, v| v[0].sqrt()),
                    "square" => unary(rng, t, Domain::Any, |_, v| v[0].square()),
                    "clamp" => unary(rng, t, Domain::AvoidKinks(&[-1.0, 2.0]), |_, v| v[0].clamp(-1.0, 2.0)),
                    "sum" => unary(rng, t, Domain::Any, |_, v| v[0].sum()),
                    "sum_cols" => unary(rng, t, Domain::Any, |_, v| v[0].sum_cols()),
                    "sum_rows" => unary(rng, t, Domain::Any, |_, v| v[0].sum_rows()),
                    "mean" => unary(rng, t, Domain::Any, |_, v| v[0].mean()),
                    "standard_normal_density" => unary(rng, t, Domain::Any, |_, v| standard_normal_log_prob(v[0])),
                    "add" => binary(rng, t, Domain::Any, |_, v| v[0] + v[1]),
                    "sub" => binary(rng, t, Domain::Any, |_, v| v[0] - v[1]),
                    "mul" => binary(rng, t, Domain::Any, |_, v| v[0] * v[1]),
                    "div" => binary(rng, t, Domain::Positive, |_, v| v[0].div(v[1])),
                    "bernoulli_density" => binary(rng, t, Domain::Any, |_, v| bernoulli_logit_log_prob(v[0], v[1].sigmoid())),
                    "gaussian_density" => binary(rng, t, Domain::Any, |_, v| {
                        gaussian_log_prob(v[1], v[0].square().offset(0.5), v[0].sigmoid())
                    }),
                    "matmul" => {
                        let (n, k) = shape(rng);
                        let m = rng.random_range(1..5);
                        check_inputs(&[(n, k), (k, m)], &[Domain::Any; 2], |_, v| v[0].matmul(v[1]).expect("conformable"), rng, t)
                    }
                    "slice_and_concat" => {
                        let n = rng.random_range(1..5);
                        check_inputs(
                            &[(n, 4), (n, 2)],
                            &[Domain::Any; 2],
                            |tape, v| tape.concat_cols(&[v[1], v[0].slice_cols(1, 3), v[1].square()]).expect("same rows"),
                            rng,
                            t,
                        )
                    }
                    "broadcast_rows" => {
                        let c = rng.random_range(1..5);
                        check_inputs(&[(1, c)], &[Domain::Any], |_, v| v[0].broadcast_rows(3).expect("single row"), rng, t)
                    }
                    "reparameterised_gaussian" => {
                        let s = shape(rng);
                        check_inputs(
                            &[s, s],
                            &[Domain::Any, Domain::Positive],
                            |_, v| {
                                let noise = Array2::from_shape_fn(v[0].shape(), |(i, j)| 0.3 * i as f64 - 0.7 * j as f64 + 0.2);
                                sample_gaussian_reparam(v[0], v[1], &noise).expect("same shapes")
                            },
                            rng,
                            t,
                        )
                    }
                    "dense_network" => dense_case(rng, t),
                    other => return Err(Error::InvalidArgument(format!("unknown gradient check {other}"))),
                }?;
            }
        }
    }
    Ok(GradCheck {
        name: name.to_string(),
        cases,
        entries: tally.entries,
        worst: tally.worst,
    })
}

/// Every check in [`OPERATIONS`].
pub fn check_all(cases: usize) -> Result<Vec<GradCheck>> {
    OPERATIONS.iter().map(|n| check(n, cases)).collect()
}
