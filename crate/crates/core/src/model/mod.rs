//! The evidential classifier: an MLP whose final outputs pass through
//! softplus to give nonnegative per-class evidence. There is no softmax.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ManifestEntry, CHECKPOINT_BIN, CHECKPOINT_MANIFEST};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::belief::argmax;
use crate::seed::stream_rng;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Self {
        Architecture { input_dim, hidden_dims, num_classes, activation: Activation::Relu }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 {
            return Err(ModelError::InvalidArchitecture("input_dim must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(ModelError::InvalidArchitecture(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.hidden_dims.contains(&0) {
            return Err(ModelError::InvalidArchitecture("hidden layer widths must be positive".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for every layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut fan_in = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims.push((fan_in, self.num_classes));
        dims
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }
}

/// One dense layer: `weight` is `[fan_in, fan_out]`, `bias` is `[fan_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Model parameters in layer order. Immutable once built; adaptation
/// produces new sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub layers: Vec<Layer>,
}

impl ParamSet {
    pub fn zeros(arch: &Architecture) -> Self {
        let layers = arch
            .layer_dims()
            .into_iter()
            .enumerate()
            .map(|(i, (fi, fo))| Layer {
                name: format!("layer{i}"),
                weight: Tensor::zeros(&[fi, fo]),
                bias: Tensor::zeros(&[fo]),
            })
            .collect();
        ParamSet { layers }
    }

    /// Flat tensor list `[w0, b0, w1, b1, ...]`.
    pub fn tensors(&self) -> Vec<Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.clone(), l.bias.clone()])
            .collect()
    }

    /// Inverse of [`ParamSet::tensors`], keeping this set's names and shapes.
    pub fn with_tensors(&self, tensors: Vec<Tensor>) -> Result<ParamSet, ModelError> {
        if tensors.len() != 2 * self.layers.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "expected {} tensors, got {}",
                2 * self.layers.len(),
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (w, b) = (it.next().unwrap(), it.next().unwrap());
            if w.shape() != l.weight.shape() || b.shape() != l.bias.shape() {
                return Err(ModelError::ShapeMismatch(format!(
                    "{}: expected {:?}/{:?}, got {:?}/{:?}",
                    l.name,
                    l.weight.shape(),
                    l.bias.shape(),
                    w.shape(),
                    b.shape()
                )));
            }
            layers.push(Layer { name: l.name.clone(), weight: w, bias: b });
        }
        Ok(ParamSet { layers })
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    (format!("{}.weight", l.name), l.weight.clone()),
                    (format!("{}.bias", l.name), l.bias.clone()),
                ]
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.numel() + l.bias.numel()).sum()
    }

    /// Checks every layer shape against `arch`.
    pub fn matches(&self, arch: &Architecture) -> Result<(), ModelError> {
        let dims = arch.layer_dims();
        if dims.len() != self.layers.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "architecture has {} layers, parameters have {}",
                dims.len(),
                self.layers.len()
            )));
        }
        for (l, (fi, fo)) in self.layers.iter().zip(dims) {
            if l.weight.shape() != [fi, fo] || l.bias.shape() != [fo] {
                return Err(ModelError::ShapeMismatch(format!(
                    "{}: architecture wants [{fi}, {fo}]/[{fo}], parameters are {:?}/{:?}",
                    l.name,
                    l.weight.shape(),
                    l.bias.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Glorot-uniform weights and zero biases, deterministic in `(arch, seed)`.
pub fn init_params(arch: &Architecture, seed: u64) -> ParamSet {
    let mut rng = stream_rng(seed, "init");
    let mut params = ParamSet::zeros(arch);
    for l in &mut params.layers {
        let (fi, fo) = (l.weight.shape()[0], l.weight.shape()[1]);
        let bound = (6.0 / (fi + fo) as f64).sqrt();
        let data = (0..fi * fo).map(|_| rng.random_range(-bound..=bound)).collect();
        l.weight = Tensor::new(vec![fi, fo], data).expect("finite uniform draws");
    }
    params
}

/// Parameters bound into a graph, one `(weight, bias)` pair per layer.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub layers: Vec<(Var, Var)>,
}

impl ParamVars {
    /// Adds `params` to `g` as differentiable leaves or constants.
    pub fn bind(g: &mut Graph, params: &ParamSet, trainable: bool) -> Self {
        let mut leaf = |t: &Tensor| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
        let layers = params.layers.iter().map(|l| (leaf(&l.weight), leaf(&l.bias))).collect();
        ParamVars { layers }
    }

    pub fn from_vars(vars: &[Var]) -> Self {
        ParamVars { layers: vars.chunks(2).map(|c| (c[0], c[1])).collect() }
    }

    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    /// Current values, named after `template`.
    pub fn values(&self, g: &Graph, template: &ParamSet) -> ParamSet {
        let layers = template
            .layers
            .iter()
            .zip(&self.layers)
            .map(|(l, &(w, b))| Layer {
                name: l.name.clone(),
                weight: g.value(w).clone(),
                bias: g.value(b).clone(),
            })
            .collect();
        ParamSet { layers }
    }
}

/// Pre-softplus outputs for a `[batch, input_dim]` node.
pub fn logits_node(g: &mut Graph, params: &ParamVars, x: Var) -> Result<Var, ModelError> {
    let last = params.layers.len() - 1;
    let mut h = x;
    for (i, &(w, b)) in params.layers.iter().enumerate() {
        let z = g.matmul(h, w)?;
        let z = g.add(z, b)?;
        h = if i < last { g.relu(z)? } else { z };
    }
    Ok(h)
}

pub fn evidence_node(g: &mut Graph, params: &ParamVars, x: Var) -> Result<Var, ModelError> {
    let z = logits_node(g, params, x)?;
    Ok(g.softplus(z)?)
}

fn check_input(params: &ParamSet, x: &Tensor) -> Result<(), ModelError> {
    let input_dim = params.layers[0].weight.shape()[0];
    if x.rank() != 2 || x.shape()[1] != input_dim {
        return Err(ModelError::ShapeMismatch(format!(
            "input {:?} does not match feature dimension {input_dim}",
            x.shape()
        )));
    }
    Ok(())
}

/// Evidence for each row of `x`, shape `[batch, N]`.
pub fn evidence(params: &ParamSet, x: &Tensor) -> Result<Tensor, ModelError> {
    check_input(params, x)?;
    let mut g = Graph::new();
    let vars = ParamVars::bind(&mut g, params, false);
    let xv = g.constant(x.clone());
    let e = evidence_node(&mut g, &vars, xv)?;
    Ok(g.value(e).clone())
}

/// Argmax of `alpha = e + 1` per row, lowest index on ties.
pub fn predict_class(params: &ParamSet, x: &Tensor) -> Result<Vec<usize>, ModelError> {
    let e = evidence(params, x)?;
    Ok(classes_from_evidence(&e))
}

pub fn classes_from_evidence(e: &Tensor) -> Vec<usize> {
    (0..e.shape()[0]).map(|r| argmax(e.row(r))).collect()
}
