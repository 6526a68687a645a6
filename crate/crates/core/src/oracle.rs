//! Exact quantities for a four-variable binary proxy model, plus a small
//! brute-force joint enumerator shared by tests.
//!
//! The model: `Z ~ Bern(0.5)`, `P(X=1|Z=1) = P(X=0|Z=0) = ρx`,
//! `P(t=1|Z=1) = P(t=0|Z=0) = ρt` and `y = t XOR Z`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of binary variables [`enumerate_small`] accepts.
pub const MAX_ENUM_VARS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryProxyModel {
    pub rho_x: f64,
    pub rho_t: f64,
}

/// Proxy with unrelated conditionals `a = P(X=1|Z=1)`, `b = P(X=1|Z=0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymmetricProxyModel {
    pub a: f64,
    pub b: f64,
    pub rho_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectGap {
    /// `P(y=1|do(t=1)) − P(y=1|do(t=0))`.
    pub true_contrast: f64,
    /// Same contrast from adjusting for `X` alone.
    pub wrong_contrast: f64,
}

impl EffectGap {
    pub fn gap(&self) -> f64 {
        self.wrong_contrast - self.true_contrast
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} = {p} is not a probability")))
    }
}

fn check_t(t_value: u8) -> Result<()> {
    if t_value > 1 {
        return Err(Error::invalid(format!("treatment value must be 0 or 1, got {t_value}")));
    }
    Ok(())
}

impl BinaryProxyModel {
    pub fn new(rho_t: f64, rho_x: f64) -> Result<Self> {
        check_prob("rho_t", rho_t)?;
        check_prob("rho_x", rho_x)?;
        Ok(Self { rho_x, rho_t })
    }

    pub fn as_asymmetric(&self) -> AsymmetricProxyModel {
        AsymmetricProxyModel {
            a: self.rho_x,
            b: 1.0 - self.rho_x,
            rho_t: self.rho_t,
        }
    }

    /// Joint over `(Z, X, t, y)` in that variable order.
    pub fn joint_spec(&self) -> DiscreteSpec {
        self.as_asymmetric().joint_spec()
    }
}

impl AsymmetricProxyModel {
    pub fn new(a: f64, b: f64, rho_t: f64) -> Result<Self> {
        check_prob("a", a)?;
        check_prob("b", b)?;
        check_prob("rho_t", rho_t)?;
        Ok(Self { a, b, rho_t })
    }

    pub fn joint_spec(&self) -> DiscreteSpec {
        let mut spec = DiscreteSpec::default();
        let z = spec.root("Z", 0.5);
        let x = spec.node("X", &[z], vec![self.b, self.a]);
        let t = spec.node("t", &[z], vec![1.0 - self.rho_t, self.rho_t]);
        // y = t XOR Z; parent configs are indexed with the first parent as the high bit
        spec.node("y", &[z, t], vec![0.0, 1.0, 1.0, 0.0]);
        debug_assert_eq!((x, t), (1, 2));
        spec
    }
}

/// `P(y=1 | do(t=t_value))` by back-door adjustment over `Z`.
/// The treatment mechanism never enters, so the result does not depend on `ρt` or `ρx`.
pub fn true_do(_model: &BinaryProxyModel, t_value: u8) -> Result<f64> {
    check_t(t_value)?;
    let p_z = [0.5, 0.5];
    Ok((0..2u8)
        .map(|z| if (t_value ^ z) == 1 { p_z[z as usize] } else { 0.0 })
        .sum())
}

/// Adjustment for `X` as if it were the only confounder, in closed form.
pub fn wrong_adjust(model: &BinaryProxyModel, t_value: u8) -> Result<f64> {
    check_t(t_value)?;
    let (rt, rx) = (model.rho_t, model.rho_x);
    let a = (1.0 - rt) * rx;
    let b = rt * (1.0 - rx);
    let c = (1.0 - rt) * (1.0 - rx);
    let d = rt * rx;
    if a + b <= 0.0 || c + d <= 0.0 {
        return Err(Error::Undefined(format!(
            "P(t={t_value}, X=x) = 0 for some x at rho_t={rt}, rho_x={rx}"
        )));
    }
    // the two treatment values give the same expression under the symmetric proxy
    Ok(0.5 * (a / (a + b) + c / (c + d)))
}

/// True and proxy-adjusted contrasts for the symmetric model.
pub fn wrong_effect_gap(model: &BinaryProxyModel) -> Result<EffectGap> {
    Ok(EffectGap {
        true_contrast: true_do(model, 1)? - true_do(model, 0)?,
        wrong_contrast: wrong_adjust(model, 1)? - wrong_adjust(model, 0)?,
    })
}

/// Both interventional levels for the asymmetric proxy, computed from the joint table.
pub fn asymmetric_levels(model: &AsymmetricProxyModel, t_value: u8) -> Result<(f64, f64)> {
    check_t(t_value)?;
    let table = enumerate_small(&model.joint_spec())?;
    let (z, x, t, y) = (0, 1, 2, 3);
    let mut truth = 0.0;
    for zv in 0..2u8 {
        truth += table.conditional(y, 1, &[(t, t_value), (z, zv)])? * table.marginal(&[(z, zv)]);
    }
    let mut wrong = 0.0;
    for xv in 0..2u8 {
        wrong += table.conditional(y, 1, &[(t, t_value), (x, xv)])? * table.marginal(&[(x, xv)]);
    }
    Ok((truth, wrong))
}

pub fn asymmetric_effect_gap(model: &AsymmetricProxyModel) -> Result<EffectGap> {
    let (t1, w1) = asymmetric_levels(model, 1)?;
    let (t0, w0) = asymmetric_levels(model, 0)?;
    Ok(EffectGap {
        true_contrast: t1 - t0,
        wrong_contrast: w1 - w0,
    })
}

/// One binary variable with a conditional probability table over its parents.
///
/// `cpt[k]` is `P(var = 1 | parents = k)` where `k` reads the parent values
/// as a binary number, first parent most significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryNode {
    pub name: String,
    pub parents: Vec<usize>,
    pub cpt: Vec<f64>,
}

/// Bayesian network over binary variables listed in topological order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSpec {
    pub nodes: Vec<BinaryNode>,
}

impl DiscreteSpec {
    pub fn root(&mut self, name: &str, p_one: f64) -> usize {
        self.node(name, &[], vec![p_one])
    }

    pub fn node(&mut self, name: &str, parents: &[usize], cpt: Vec<f64>) -> usize {
        self.nodes.push(BinaryNode {
            name: name.to_string(),
            parents: parents.to_vec(),
            cpt,
        });
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    fn validate(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.parents.iter().any(|&p| p >= i) {
                return Err(Error::invalid(format!(
                    "node `{}` must come after its parents",
                    n.name
                )));
            }
            if n.cpt.len() != 1 << n.parents.len() {
                return Err(Error::invalid(format!(
                    "node `{}` needs {} table entries, has {}",
                    n.name,
                    1 << n.parents.len(),
                    n.cpt.len()
                )));
            }
            for &p in &n.cpt {
                check_prob(&n.name, p)?;
            }
        }
        Ok(())
    }
}

/// Exact joint probabilities; configuration `k` holds variable `i` in bit `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    pub names: Vec<String>,
    pub probs: Vec<f64>,
}

impl JointTable {
    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    pub fn value(config: usize, var: usize) -> u8 {
        ((config >> var) & 1) as u8
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Probability of the event `var_i = v_i` for every pair given.
    pub fn marginal(&self, event: &[(usize, u8)]) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(k, _)| event.iter().all(|&(v, val)| Self::value(*k, v) == val))
            .map(|(_, p)| p)
            .sum()
    }

    /// `P(var = value | given)`; an impossible conditioning event is an error.
    pub fn conditional(&self, var: usize, value: u8, given: &[(usize, u8)]) -> Result<f64> {
        let denom = self.marginal(given);
        if denom <= 0.0 {
            return Err(Error::Undefined(format!(
                "conditioning event {given:?} has probability zero"
            )));
        }
        let mut event = given.to_vec();
        event.push((var, value));
        Ok(self.marginal(&event) / denom)
    }
}

/// Enumerates every configuration of a binary network with at most
/// [`MAX_ENUM_VARS`] variables.
pub fn enumerate_small(spec: &DiscreteSpec) -> Result<JointTable> {
    if spec.len() > MAX_ENUM_VARS {
        return Err(Error::Capacity(format!(
            "{} variables exceeds the enumeration limit of {MAX_ENUM_VARS}",
            spec.len()
        )));
    }
    spec.validate()?;
    let n = spec.len();
    let probs = (0..1usize << n)
        .map(|k| {
            spec.nodes
                .iter()
                .enumerate()
                .map(|(i, node)| {
                    let pa = node
                        .parents
                        .iter()
                        .fold(0usize, |acc, &p| (acc << 1) | JointTable::value(k, p) as usize);
                    let p1 = node.cpt[pa];
                    if JointTable::value(k, i) == 1 {
                        p1
                    } else {
                        1.0 - p1
                    }
                })
                .product()
        })
        .collect();
    Ok(JointTable {
        names: spec.nodes.iter().map(|n| n.name.clone()).collect(),
        probs,
    })
}

/// Evenly spaced grid of `n` points from `lo` to `hi` inclusive.
pub fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}
