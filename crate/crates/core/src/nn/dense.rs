use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Elu,
    Identity,
}

impl Activation {
    fn apply<'t>(self, v: Var<'t>) -> Var<'t> {
        match self {
            Activation::Elu => v.elu(),
            Activation::Identity => v,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Layer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

/// Fully connected network. Weights are `fan_in × fan_out`, inputs are rows.
///
/// With `activate_output == false` (the usual case) the last layer is affine and
/// callers apply link functions; a network with no hidden layers is a single
/// affine map. Representation trunks set `activate_output` so the final layer
/// is followed by the hidden activation too. A network with no layers at all
/// is the identity.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DenseNet {
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub activate_output: bool,
    input_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitScale(pub f64);

impl Default for InitScale {
    fn default() -> Self {
        InitScale(0.1)
    }
}

impl DenseNet {
    /// Builds `input → hidden[0] → … → output` and registers its parameters.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: &[usize],
        output: usize,
        activation: Activation,
        init: InitScale,
        rng: &mut R,
    ) -> Self {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input);
        dims.extend_from_slice(hidden);
        dims.push(output);
        Self::from_dims(store, name, &dims, activation, false, init, rng)
    }

    /// Representation trunk: every layer is followed by the activation.
    pub fn trunk<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        widths: &[usize],
        activation: Activation,
        init: InitScale,
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(widths);
        Self::from_dims(store, name, &dims, activation, true, init, rng)
    }

    fn from_dims<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        activation: Activation,
        activate_output: bool,
        init: InitScale,
        rng: &mut R,
    ) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let weight = store.add_gaussian(format!("{name}.{i}.w"), w[0], w[1], init.0, rng);
                let bias = store.add(format!("{name}.{i}.b"), Array2::zeros((1, w[1])));
                Layer {
                    weight,
                    bias,
                    fan_in: w[0],
                    fan_out: w[1],
                }
            })
            .collect();
        Self {
            layers,
            activation,
            activate_output,
            input_dim: dims[0],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.fan_out)
    }

    /// Number of hidden layers (activated layers excluding the output map).
    pub fn depth(&self) -> usize {
        if self.activate_output {
            self.layers.len()
        } else {
            self.layers.len().saturating_sub(1)
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, input: Var<'t>) -> Result<Var<'t>> {
        let (_, cols) = input.shape();
        if cols != self.input_dim {
            return Err(Error::invalid(format!(
                "network expects {} inputs, got {cols}",
                self.input_dim
            )));
        }
        let last = self.layers.len();
        let mut h = input;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = tape.param(store, layer.weight);
            let b = tape.param(store, layer.bias);
            h = h.matmul(w)? + b;
            if i + 1 < last || self.activate_output {
                h = self.activation.apply(h);
            }
        }
        Ok(h)
    }
}

/// Evaluates `net` on a single input vector.
pub fn forward_dense(net: &DenseNet, store: &ParamStore, input: &[f64]) -> Result<Vec<f64>> {
    if input.len() != net.input_dim() {
        return Err(Error::invalid(format!(
            "network expects {} inputs, got {}",
            net.input_dim(),
            input.len()
        )));
    }
    let tape = Tape::new();
    let x = tape.row(input);
    Ok(net.forward(&tape, store, x)?.value().into_raw_vec_and_offset().0)
}
