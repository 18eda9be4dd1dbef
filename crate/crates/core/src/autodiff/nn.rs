//! Model parameters: MLP layers, bilinear affinity matrices, and the
//! versioned JSON checkpoint.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

/// Uniform Glorot initialization on `±sqrt(6 / (rows + cols))`.
pub fn glorot_init(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

/// One affine layer `y = x·Wᵀ + b`, optionally followed by ReLU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl MlpLayer {
    pub fn init(inputs: usize, outputs: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        MlpLayer {
            weight: glorot_init(outputs, inputs, rng),
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    fn validate(&self, inputs: usize, outputs: usize, what: &str) -> Result<()> {
        if self.weight.shape() != (outputs, inputs) || self.bias.len() != outputs {
            return Err(Error::validation(format!(
                "{what}: expected weight {outputs}x{inputs} and bias {outputs}, got weight {}x{} and bias {}",
                self.weight.rows(),
                self.weight.cols(),
                self.bias.len()
            )));
        }
        if !self.weight.is_finite() || self.bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::validation(format!("{what}: non-finite parameter")));
        }
        Ok(())
    }
}

/// Layer sizes. Cross layers consume intra embeddings, so
/// `d_cross == d_intra`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d_in: usize,
    pub d_intra: usize,
    pub d_cross: usize,
    #[serde(rename = "L")]
    pub intra_layers: usize,
    #[serde(rename = "C")]
    pub cross_layers: usize,
}

impl ModelDims {
    pub fn new(d_in: usize, d_embed: usize, intra_layers: usize, cross_layers: usize) -> Self {
        ModelDims {
            d_in,
            d_intra: d_embed,
            d_cross: d_embed,
            intra_layers,
            cross_layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_intra == 0 || self.d_cross == 0 {
            return Err(Error::validation("model dimensions must be positive"));
        }
        if self.intra_layers == 0 {
            return Err(Error::validation("at least one intra-graph layer is required"));
        }
        if self.d_cross != self.d_intra {
            return Err(Error::validation(format!(
                "d_cross ({}) must equal d_intra ({})",
                self.d_cross, self.d_intra
            )));
        }
        Ok(())
    }

    /// Parameter count, for reporting.
    pub fn parameter_count(&self) -> usize {
        let d = self.d_intra;
        let first = d * 2 * self.d_in + d;
        let rest = (self.intra_layers - 1) * (d * 2 * d + d);
        let cross = self.cross_layers * (d * 2 * d + d);
        first + rest + cross + 2 * d * d
    }
}

/// All learnable parameters of the matching network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub intra_layers: Vec<MlpLayer>,
    pub cross_layers: Vec<MlpLayer>,
    pub a_intra: Matrix,
    pub a_cross: Matrix,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    version: u32,
    dims: ModelDims,
    intra_layers: Vec<MlpLayer>,
    cross_layers: Vec<MlpLayer>,
    a_intra: Matrix,
    a_cross: Matrix,
}

fn final_aware(index: usize, count: usize) -> Activation {
    if index + 1 == count {
        Activation::None
    } else {
        Activation::Relu
    }
}

impl ModelParams {
    /// Glorot weights, zero biases, identity affinity matrices.
    pub fn init(dims: ModelDims, rng: &mut impl Rng) -> Result<Self> {
        dims.validate()?;
        let d = dims.d_intra;
        let intra_layers = (0..dims.intra_layers)
            .map(|l| {
                let inputs = if l == 0 { 2 * dims.d_in } else { 2 * d };
                MlpLayer::init(inputs, d, final_aware(l, dims.intra_layers), rng)
            })
            .collect();
        let cross_layers = (0..dims.cross_layers)
            .map(|c| MlpLayer::init(2 * d, d, final_aware(c, dims.cross_layers), rng))
            .collect();
        Ok(ModelParams {
            dims,
            intra_layers,
            cross_layers,
            a_intra: Matrix::identity(d),
            a_cross: Matrix::identity(dims.d_cross),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let dims = &self.dims;
        dims.validate()?;
        let d = dims.d_intra;
        if self.intra_layers.len() != dims.intra_layers {
            return Err(Error::validation(format!(
                "checkpoint declares L={} but stores {} intra layers",
                dims.intra_layers,
                self.intra_layers.len()
            )));
        }
        if self.cross_layers.len() != dims.cross_layers {
            return Err(Error::validation(format!(
                "checkpoint declares C={} but stores {} cross layers",
                dims.cross_layers,
                self.cross_layers.len()
            )));
        }
        for (l, layer) in self.intra_layers.iter().enumerate() {
            let inputs = if l == 0 { 2 * dims.d_in } else { 2 * d };
            layer.validate(inputs, d, &format!("intra layer {l}"))?;
        }
        for (c, layer) in self.cross_layers.iter().enumerate() {
            layer.validate(2 * d, d, &format!("cross layer {c}"))?;
        }
        for (name, a) in [("a_intra", &self.a_intra), ("a_cross", &self.a_cross)] {
            if a.shape() != (d, d) || !a.is_finite() {
                return Err(Error::validation(format!(
                    "{name} must be a finite {d}x{d} matrix"
                )));
            }
        }
        Ok(())
    }

    /// Flat views of every tensor in a fixed order: intra (weight, bias)
    /// per layer, cross (weight, bias) per layer, `a_intra`, `a_cross`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in self.intra_layers.iter().chain(&self.cross_layers) {
            out.push(layer.weight.as_slice());
            out.push(&layer.bias);
        }
        out.push(self.a_intra.as_slice());
        out.push(self.a_cross.as_slice());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in self.intra_layers.iter_mut().chain(self.cross_layers.iter_mut()) {
            out.push(layer.weight.as_mut_slice());
            out.push(&mut layer.bias);
        }
        out.push(self.a_intra.as_mut_slice());
        out.push(self.a_cross.as_mut_slice());
        out
    }

    /// Records every tensor as a trainable leaf.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        self.register_with(tape, Tape::param)
    }

    /// Records every tensor as a constant (inference only).
    pub fn register_frozen(&self, tape: &mut Tape) -> ParamVars {
        self.register_with(tape, Tape::constant)
    }

    fn register_with(&self, tape: &mut Tape, leaf: fn(&mut Tape, Matrix) -> Var) -> ParamVars {
        let layer = |tape: &mut Tape, l: &MlpLayer| LayerVars {
            weight: leaf(tape, l.weight.clone()),
            bias: leaf(tape, Matrix::row_vector(&l.bias)),
            activation: l.activation,
        };
        let intra = self.intra_layers.iter().map(|l| layer(tape, l)).collect();
        let cross = self.cross_layers.iter().map(|l| layer(tape, l)).collect();
        ParamVars {
            dims: self.dims,
            intra,
            cross,
            a_intra: leaf(tape, self.a_intra.clone()),
            a_cross: leaf(tape, self.a_cross.clone()),
        }
    }

    pub fn from_checkpoint_str(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::validation(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        let params = ModelParams {
            dims: ck.dims,
            intra_layers: ck.intra_layers,
            cross_layers: ck.cross_layers,
            a_intra: ck.a_intra,
            a_cross: ck.a_cross,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn to_checkpoint_string(&self) -> String {
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            dims: self.dims,
            intra_layers: self.intra_layers.clone(),
            cross_layers: self.cross_layers.clone(),
            a_intra: self.a_intra.clone(),
            a_cross: self.a_cross.clone(),
        };
        serde_json::to_string(&ck).expect("checkpoint serialization is infallible")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let s = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_checkpoint_str(&s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_checkpoint_string())
            .map_err(|e| Error::io(path.as_ref(), e))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub weight: Var,
    pub bias: Var,
    pub activation: Activation,
}

impl LayerVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let lin = tape.matmul_t(x, self.weight)?;
        let out = tape.add_row(lin, self.bias)?;
        Ok(match self.activation {
            Activation::Relu => tape.relu(out),
            Activation::None => out,
        })
    }
}

/// Tape handles for a registered [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub dims: ModelDims,
    pub intra: Vec<LayerVars>,
    pub cross: Vec<LayerVars>,
    pub a_intra: Var,
    pub a_cross: Var,
}

impl ParamVars {
    fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in self.intra.iter().chain(&self.cross) {
            out.push(l.weight);
            out.push(l.bias);
        }
        out.push(self.a_intra);
        out.push(self.a_cross);
        out
    }

    /// Accumulated gradients, in the order of [`ModelParams::tensors`].
    pub fn grads(&self, tape: &Tape) -> Vec<Vec<f64>> {
        self.vars()
            .into_iter()
            .map(|v| tape.grad(v).expect("registered leaf").as_slice().to_vec())
            .collect()
    }
}
