//! The experiment networks: tanh MLPs with task-specific output heads,
//! plus adapters that plug them into the generic cycle objective.
//!
//! A network owns plain parameter matrices; each training iteration
//! instantiates them as tape leaves, builds the loss, and reads gradients
//! back in parameter order.

use crate::cvae::{Encoder, ForwardMap, InverseMap};
use crate::error::{Result, SurjError};
use crate::numerics::matrix::DenseMatrix;
use crate::numerics::rng::Rng;
use crate::numerics::tape::{NodeId, Tape};

/// Output nonlinearity of the final layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputHead {
    Linear,
    Tanh,
    Softmax,
    Sigmoid,
}

/// A fully-connected network; hidden layers use tanh.
#[derive(Clone, Debug)]
pub struct Mlp {
    /// (weight in x out, bias 1 x out) per layer.
    pub layers: Vec<(DenseMatrix, DenseMatrix)>,
    pub head: OutputHead,
}

impl Mlp {
    /// Random init: weights N(0, 1/sqrt(fan_in)), biases zero.
    pub fn new(dims: &[usize], head: OutputHead, rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(SurjError::Contract("mlp: need at least one layer".into()));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let std = 1.0 / (w[0] as f64).sqrt();
                (rng.normal_matrix(w[0], w[1], std), DenseMatrix::zeros(1, w[1]))
            })
            .collect();
        Ok(Mlp { layers, head })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].0.rows
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().0.cols
    }

    /// Parameters in a fixed order (w0, b0, w1, b1, ...).
    pub fn params(&self) -> Vec<DenseMatrix> {
        self.layers
            .iter()
            .flat_map(|(w, b)| [w.clone(), b.clone()])
            .collect()
    }

    /// Writes back parameters in the `params` order.
    pub fn set_params(&mut self, flat: &[DenseMatrix]) {
        assert_eq!(flat.len(), 2 * self.layers.len());
        for (i, (w, b)) in self.layers.iter_mut().enumerate() {
            *w = flat[2 * i].clone();
            *b = flat[2 * i + 1].clone();
        }
    }

    /// Registers the parameters as differentiable leaves.
    pub fn instantiate(&self, tape: &mut Tape) -> MlpOnTape {
        self.bind(tape, true)
    }

    /// Registers the parameters as constants (inference only).
    pub fn instantiate_const(&self, tape: &mut Tape) -> MlpOnTape {
        self.bind(tape, false)
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> MlpOnTape {
        let ids = self
            .layers
            .iter()
            .flat_map(|(w, b)| {
                if trainable {
                    [tape.leaf(w.clone()), tape.leaf(b.clone())]
                } else {
                    [tape.constant(w.clone()), tape.constant(b.clone())]
                }
            })
            .collect();
        MlpOnTape { ids, head: self.head }
    }
}

/// A network bound to one tape.
#[derive(Clone, Debug)]
pub struct MlpOnTape {
    /// Leaf/constant ids in `Mlp::params` order.
    pub ids: Vec<NodeId>,
    pub head: OutputHead,
}

impl MlpOnTape {
    pub fn apply(&self, tape: &mut Tape, input: NodeId) -> NodeId {
        let n_layers = self.ids.len() / 2;
        let mut h = input;
        for l in 0..n_layers {
            let prod = tape.matmul(h, self.ids[2 * l]);
            let lin = tape.add_row_broadcast(prod, self.ids[2 * l + 1]);
            h = if l + 1 < n_layers {
                tape.tanh(lin)
            } else {
                match self.head {
                    OutputHead::Linear => lin,
                    OutputHead::Tanh => tape.tanh(lin),
                    OutputHead::Softmax => tape.softmax(lin),
                    OutputHead::Sigmoid => tape.sigmoid(lin),
                }
            };
        }
        h
    }

    /// Gradients for every parameter, in `Mlp::params` order.
    pub fn grads(&self, tape: &Tape) -> Vec<DenseMatrix> {
        self.ids.iter().map(|&id| tape.grad(id).clone()).collect()
    }
}

/// x -> y head (image to digit probabilities).
pub struct MlpForward(pub MlpOnTape);

impl ForwardMap for MlpForward {
    fn apply(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        self.0.apply(tape, x)
    }
}

/// Replaces each row of a probability matrix by the one-hot of its argmax,
/// detached from the graph (no gradient flows back through it). Keeps the
/// decoder from reading extra information out of the softmax's continuous
/// values; argmax is piecewise constant, so there is no useful gradient to
/// propagate anyway.
pub fn quantize_onehot(tape: &mut Tape, soft: NodeId) -> NodeId {
    let v = tape.value(soft).clone();
    let mut hard = DenseMatrix::zeros(v.rows, v.cols);
    for i in 0..v.rows {
        let row = v.row(i);
        let mut best = 0;
        for (j, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = j;
            }
        }
        hard.set(i, best, 1.0);
    }
    tape.constant(hard)
}

/// A forward map whose output is quantized to a detached one-hot; used on
/// the decoder path of the x-cycle.
pub struct QuantizedForward<'a>(pub &'a MlpForward);

impl ForwardMap for QuantizedForward<'_> {
    fn apply(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        let soft = self.0.apply(tape, x);
        quantize_onehot(tape, soft)
    }
}

/// (y, z) -> x head (digit and latent to pixel probabilities).
pub struct MlpInverse {
    pub net: MlpOnTape,
    pub z_dim: usize,
    /// The base model drops z entirely (deterministic decoder).
    pub ignore_z: bool,
}

impl InverseMap for MlpInverse {
    fn apply(&self, tape: &mut Tape, y: NodeId, z: NodeId) -> NodeId {
        let input = if self.ignore_z {
            y
        } else {
            tape.concat_cols(y, z)
        };
        self.net.apply(tape, input)
    }

    fn z_dim(&self) -> usize {
        self.z_dim
    }
}

/// Amortized posterior: a shared tanh trunk with linear mu and log-s heads.
#[derive(Clone, Debug)]
pub struct EncoderNet {
    pub trunk: Mlp,
    pub w_mu: DenseMatrix,
    pub b_mu: DenseMatrix,
    pub w_ls: DenseMatrix,
    pub b_ls: DenseMatrix,
}

impl EncoderNet {
    pub fn new(in_dim: usize, hidden: usize, z_dim: usize, rng: &mut Rng) -> Result<Self> {
        let trunk = Mlp::new(&[in_dim, hidden, hidden], OutputHead::Tanh, rng)?;
        let std = 1.0 / (hidden as f64).sqrt();
        Ok(EncoderNet {
            trunk,
            w_mu: rng.normal_matrix(hidden, z_dim, std),
            b_mu: DenseMatrix::zeros(1, z_dim),
            // log-s starts near zero so s starts near the prior scale.
            w_ls: rng.normal_matrix(hidden, z_dim, 0.01 * std),
            b_ls: DenseMatrix::zeros(1, z_dim),
        })
    }

    pub fn z_dim(&self) -> usize {
        self.w_mu.cols
    }

    pub fn params(&self) -> Vec<DenseMatrix> {
        let mut p = self.trunk.params();
        p.extend([
            self.w_mu.clone(),
            self.b_mu.clone(),
            self.w_ls.clone(),
            self.b_ls.clone(),
        ]);
        p
    }

    pub fn set_params(&mut self, flat: &[DenseMatrix]) {
        let trunk_len = 2 * self.trunk.layers.len();
        self.trunk.set_params(&flat[..trunk_len]);
        self.w_mu = flat[trunk_len].clone();
        self.b_mu = flat[trunk_len + 1].clone();
        self.w_ls = flat[trunk_len + 2].clone();
        self.b_ls = flat[trunk_len + 3].clone();
    }

    pub fn instantiate(&self, tape: &mut Tape) -> EncoderOnTape {
        let trunk = self.trunk.instantiate(tape);
        let heads = [
            tape.leaf(self.w_mu.clone()),
            tape.leaf(self.b_mu.clone()),
            tape.leaf(self.w_ls.clone()),
            tape.leaf(self.b_ls.clone()),
        ];
        EncoderOnTape { trunk, heads, z_dim: self.z_dim() }
    }

    pub fn instantiate_const(&self, tape: &mut Tape) -> EncoderOnTape {
        let trunk = self.trunk.instantiate_const(tape);
        let heads = [
            tape.constant(self.w_mu.clone()),
            tape.constant(self.b_mu.clone()),
            tape.constant(self.w_ls.clone()),
            tape.constant(self.b_ls.clone()),
        ];
        EncoderOnTape { trunk, heads, z_dim: self.z_dim() }
    }
}

/// An encoder bound to one tape.
pub struct EncoderOnTape {
    pub trunk: MlpOnTape,
    /// [w_mu, b_mu, w_ls, b_ls]
    pub heads: [NodeId; 4],
    pub z_dim: usize,
}

impl EncoderOnTape {
    pub fn grads(&self, tape: &Tape) -> Vec<DenseMatrix> {
        let mut g = self.trunk.grads(tape);
        g.extend(self.heads.iter().map(|&id| tape.grad(id).clone()));
        g
    }
}

impl Encoder for EncoderOnTape {
    fn encode(&self, tape: &mut Tape, x: NodeId) -> (NodeId, NodeId) {
        let h = self.trunk.apply(tape, x);
        let mu_lin = tape.matmul(h, self.heads[0]);
        let mu = tape.add_row_broadcast(mu_lin, self.heads[1]);
        let ls_lin = tape.matmul(h, self.heads[2]);
        let ls = tape.add_row_broadcast(ls_lin, self.heads[3]);
        let s = tape.exp(ls);
        (mu, s)
    }

    fn z_dim(&self) -> usize {
        self.z_dim
    }
}

// ---- inference adapters ----
// The on-tape wrappers above hold node ids valid for a single tape; these
// borrow the plain networks and bind constants on whatever tape the
// estimator hands them, so they work with the generic samplers.

/// Inference-time x -> y map.
pub struct ForwardModel<'a>(pub &'a Mlp);

impl ForwardMap for ForwardModel<'_> {
    fn apply(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        let bound = self.0.instantiate_const(tape);
        bound.apply(tape, x)
    }
}

/// Inference-time (y, z) -> x map.
pub struct InverseModel<'a> {
    pub mlp: &'a Mlp,
    pub z_dim: usize,
    pub ignore_z: bool,
}

impl InverseMap for InverseModel<'_> {
    fn apply(&self, tape: &mut Tape, y: NodeId, z: NodeId) -> NodeId {
        let bound = self.mlp.instantiate_const(tape);
        let input = if self.ignore_z { y } else { tape.concat_cols(y, z) };
        bound.apply(tape, input)
    }

    fn z_dim(&self) -> usize {
        self.z_dim
    }
}

/// Inference-time posterior.
pub struct EncoderModel<'a>(pub &'a EncoderNet);

impl Encoder for EncoderModel<'_> {
    fn encode(&self, tape: &mut Tape, x: NodeId) -> (NodeId, NodeId) {
        let bound = self.0.instantiate_const(tape);
        bound.encode(tape, x)
    }

    fn z_dim(&self) -> usize {
        self.0.z_dim()
    }
}
