//! Dense f64 tensors on a reverse-mode automatic differentiation tape.
//!
//! A [`Graph`] records every operation as a node holding the forward value,
//! the parent node ids and the data needed to replay the backward rule.
//! Nodes are created in topological order, so [`Graph::backward`] is a single
//! reverse sweep that visits each node exactly once and accumulates gradients
//! additively into shared parents.
//!
//! Tensors are immutable once placed on the tape; only gradient buffers are
//! written during the backward pass. All operations are deterministic given
//! their inputs and (for dropout) the caller-supplied RNG.

mod conv;
mod gemm;
pub mod gradcheck;
mod ops;

use rand::Rng;

pub use ops::{Activation, BatchNormStats};

/// Execution mode for layers that behave differently in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Zero-padding policy for convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero-pad so the spatial size is preserved.
    Same,
    /// No padding; output shrinks by `kernel - 1`.
    None,
}

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: non-finite input value")]
    NonFinite { op: &'static str },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        TensorError::Invalid {
            op,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// An N-dimensional array of f64 values in row-major order, with an optional
/// same-shape gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
            requires_grad: false,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor::from_vec(shape, vec![0.0; n])
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor::from_vec(shape, vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::from_vec(&[1], vec![value])
    }

    /// Standard-normal samples scaled by `std`, drawn in index order.
    pub fn randn(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(std * normal_sample(rng));
        }
        Tensor::from_vec(shape, data)
    }

    pub fn requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn requires_grad_flag(&self) -> bool {
        self.requires_grad
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Interpret the shape as (batch, channels, height, width).
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        if self.shape.len() != 4 {
            return Err(TensorError::shape(
                "dims4",
                format!("expected rank 4, got shape {:?}", self.shape),
            ));
        }
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }
}

/// Box–Muller transform; two uniform draws per sample keeps the stream
/// layout independent of any library distribution internals.
fn normal_sample(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

/// Backward rule of a recorded operation, with whatever forward-pass state
/// the rule needs to replay.
#[derive(Debug, Clone)]
pub(crate) enum Rule {
    Leaf,
    Conv2d {
        input: TensorId,
        weights: TensorId,
        bias: TensorId,
        padding: Padding,
    },
    MaxPool2x2 {
        input: TensorId,
        /// Flat input index of the window maximum per output element.
        argmax: Vec<u32>,
    },
    Upsample2x {
        input: TensorId,
    },
    BatchNorm {
        input: TensorId,
        gamma: TensorId,
        beta: TensorId,
        /// Per-channel mean and inverse std actually used to normalize.
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Pointwise {
        input: TensorId,
        activation: Activation,
    },
    Dropout {
        input: TensorId,
        kept: Vec<bool>,
        scale: f64,
    },
    ConcatChannels {
        a: TensorId,
        b: TensorId,
        a_channels: usize,
    },
    Sub {
        a: TensorId,
        b: TensorId,
    },
    Mse {
        pred: TensorId,
        target: TensorId,
    },
    SoftDice {
        pred: TensorId,
        target: TensorId,
    },
    WeightedSum {
        input: TensorId,
        weights: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    tensor: Tensor,
    rule: Rule,
}

/// Reverse-mode autodiff tape. Operations append nodes; `backward` runs the
/// reverse sweep from a scalar node.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    /// Place a tensor on the tape as a leaf.
    pub fn leaf(&mut self, tensor: Tensor) -> TensorId {
        self.push(tensor, Rule::Leaf)
    }

    pub(crate) fn push(&mut self, mut tensor: Tensor, rule: Rule) -> TensorId {
        // Interior nodes need gradients whenever any parent does.
        if !matches!(rule, Rule::Leaf) {
            tensor.requires_grad = rule
                .parents()
                .iter()
                .any(|p| self.nodes[p.0].tensor.requires_grad);
        }
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node { tensor, rule });
        id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node.
    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    /// Accumulated gradient of a node, if the backward pass reached it.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad.as_deref()
    }

    /// Run the reverse sweep from a scalar node, seeding its gradient with 1.
    ///
    /// Visits nodes in reverse creation order (reverse topological order by
    /// construction) exactly once; gradient contributions add into shared
    /// parents in a fixed order.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.nodes[loss.0].tensor.len() != 1 {
            return Err(TensorError::shape(
                "backward",
                format!(
                    "backward starts from a scalar, got shape {:?}",
                    self.nodes[loss.0].tensor.shape
                ),
            ));
        }
        self.nodes[loss.0].tensor.grad = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if self.nodes[idx].tensor.grad.is_none() || !self.nodes[idx].tensor.requires_grad {
                continue;
            }
            let upstream = self.nodes[idx].tensor.grad.clone().unwrap();
            let contributions = self.node_backward(idx, &upstream)?;
            for (parent, contrib) in contributions {
                self.accumulate(parent, contrib);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: TensorId, contrib: Vec<f64>) {
        let tensor = &mut self.nodes[id.0].tensor;
        debug_assert_eq!(tensor.data.len(), contrib.len());
        match &mut tensor.grad {
            Some(grad) => {
                for (g, c) in grad.iter_mut().zip(contrib.iter()) {
                    *g += c;
                }
            }
            none => *none = Some(contrib),
        }
    }

    /// Compute per-parent gradient contributions for node `idx`, skipping
    /// parents that do not require gradients.
    fn node_backward(&self, idx: usize, upstream: &[f64]) -> Result<Vec<(TensorId, Vec<f64>)>> {
        let node = &self.nodes[idx];
        let rule = node.rule.clone();
        let out = &node.tensor;
        let mut contribs = Vec::new();
        match &rule {
            Rule::Leaf => {}
            Rule::Conv2d {
                input,
                weights,
                bias,
                padding,
            } => {
                conv::conv2d_backward(
                    self,
                    upstream,
                    *input,
                    *weights,
                    *bias,
                    *padding,
                    &mut contribs,
                )?;
            }
            Rule::MaxPool2x2 { input, argmax } => {
                ops::maxpool_backward(self, upstream, *input, argmax, &mut contribs);
            }
            Rule::Upsample2x { input } => {
                ops::upsample_backward(self, upstream, *input, &mut contribs);
            }
            Rule::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                ops::batchnorm_backward(
                    self,
                    upstream,
                    *input,
                    *gamma,
                    *beta,
                    mean,
                    inv_std,
                    &mut contribs,
                )?;
            }
            Rule::Pointwise { input, activation } => {
                ops::pointwise_backward(self, upstream, *input, *activation, out, &mut contribs);
            }
            Rule::Dropout { input, kept, scale } => {
                ops::dropout_backward(self, upstream, *input, kept, *scale, &mut contribs);
            }
            Rule::ConcatChannels { a, b, a_channels } => {
                ops::concat_backward(self, upstream, *a, *b, *a_channels, &mut contribs)?;
            }
            Rule::Sub { a, b } => {
                ops::sub_backward(self, upstream, *a, *b, &mut contribs);
            }
            Rule::Mse { pred, target } => {
                ops::mse_backward(self, upstream[0], *pred, *target, &mut contribs);
            }
            Rule::SoftDice { pred, target } => {
                ops::soft_dice_backward(self, upstream[0], *pred, *target, &mut contribs)?;
            }
            Rule::WeightedSum { input, weights } => {
                ops::weighted_sum_backward(self, upstream[0], *input, weights, &mut contribs);
            }
        }
        Ok(contribs)
    }

    pub(crate) fn wants_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].tensor.requires_grad
    }
}

impl Rule {
    fn parents(&self) -> Vec<TensorId> {
        match self {
            Rule::Leaf => vec![],
            Rule::Conv2d {
                input,
                weights,
                bias,
                ..
            } => vec![*input, *weights, *bias],
            Rule::MaxPool2x2 { input, .. }
            | Rule::Upsample2x { input }
            | Rule::Pointwise { input, .. }
            | Rule::Dropout { input, .. }
            | Rule::WeightedSum { input, .. } => vec![*input],
            Rule::BatchNorm {
                input, gamma, beta, ..
            } => vec![*input, *gamma, *beta],
            Rule::ConcatChannels { a, b, .. } | Rule::Sub { a, b } => vec![*a, *b],
            Rule::Mse { pred, target } | Rule::SoftDice { pred, target } => {
                vec![*pred, *target]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_invariants() {
        let t = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(t.len(), 6);
        assert_eq!(t.shape(), &[2, 3]);
        assert!(t.grad().is_none());
    }

    #[test]
    #[should_panic]
    fn tensor_length_mismatch_panics() {
        let _ = Tensor::from_vec(&[2, 2], vec![1.0]);
    }

    #[test]
    fn randn_deterministic_per_seed() {
        use rand::SeedableRng;
        let mut a = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut b = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let ta = Tensor::randn(&[16], 1.0, &mut a);
        let tb = Tensor::randn(&[16], 1.0, &mut b);
        assert_eq!(ta.data(), tb.data());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]).requires_grad(true));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn diamond_graph_accumulates_both_branches() {
        // loss = (x - 0) + ... realized as weighted sums over a shared parent:
        // a = 2*sum(x), b = 3*sum(x), loss = a - b backward gives dx = -1 each.
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).requires_grad(true));
        let a = g.weighted_sum(x, &[2.0, 2.0, 2.0]).unwrap();
        let b = g.weighted_sum(x, &[3.0, 3.0, 3.0]).unwrap();
        let loss = g.sub(a, b).unwrap();
        g.backward(loss).unwrap();
        // Hand-summed: d(loss)/dx_i = 2 - 3 = -1.
        assert_eq!(g.grad(x).unwrap(), &[-1.0, -1.0, -1.0]);
    }
}
