use super::conv;
use super::elementwise::{self, BinaryKind, UnaryKind};
use super::linalg;
use super::loss;
use super::lstm::{self, LstmCache, LstmWeights};
use super::norm::{self, BatchNormMemo};
use super::shape;
use super::tensor::Tensor;
use super::{NumericsError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Transpose { x: Var },
    Reshape { x: Var },
    Binary { kind: BinaryKind, a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    Unary { kind: UnaryKind, x: Var },
    Softmax { x: Var },
    SumAll { x: Var },
    MeanAll { x: Var },
    SumAxis { x: Var, axis: usize },
    MeanAxis { x: Var, axis: usize },
    MaxPool1d { x: Var, argmax: Vec<usize> },
    Conv1d { x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize },
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: [usize; 2], padding: [usize; 2] },
    BatchNorm { x: Var, gamma: Var, beta: Var, memo: BatchNormMemo },
    BiLstm { x: Var, weights: LstmWeights, cache: Box<LstmCache> },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    DiagEmbed { x: Var, offset: isize },
    DiagExtract { x: Var, offset: isize },
    GcnNormalize { a: Var, inv_sqrt_deg: Vec<f64> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul { a, b } | Binary { a, b, .. } => vec![*a, *b],
            Transpose { x }
            | Reshape { x }
            | Scale { x, .. }
            | Unary { x, .. }
            | Softmax { x }
            | SumAll { x }
            | MeanAll { x }
            | SumAxis { x, .. }
            | MeanAxis { x, .. }
            | MaxPool1d { x, .. }
            | Slice { x, .. }
            | DiagEmbed { x, .. }
            | DiagExtract { x, .. } => vec![*x],
            Conv1d { x, w, b, .. } | Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            BiLstm { x, weights, .. } => {
                let mut v = vec![*x];
                v.extend(weights.all());
                v
            }
            Concat { inputs, .. } => inputs.clone(),
            GcnNormalize { a, .. } => vec![*a],
            CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub requires_grad: bool,
}

/// Record of a forward computation, sufficient to run reverse mode.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of a differentiable leaf. Leaves that did not influence the
    /// output get zeros; constants and intermediates give `None`.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        let shape = self.shapes.get(v.0)?;
        match self.grads.get(v.0)? {
            Some(g) => Tensor::new(shape.clone(), g.clone()).ok(),
            None => None,
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(NumericsError::UnknownVar(v.0))
        }
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        self.check(output)?;
        let shape = self.shape(output);
        if self.value(output).len() != 1 {
            return Err(NumericsError::NotScalar { op: "backward", shape: shape.to_vec() });
        }
        self.backward_with(output, Tensor::full(shape, 1.0))
    }

    /// Reverse pass seeded with an explicit upstream gradient.
    pub fn backward_with(&self, output: Var, upstream: Tensor) -> Result<Gradients> {
        self.check(output)?;
        if upstream.shape() != self.shape(output) {
            return Err(NumericsError::shape(
                "backward",
                format!("upstream {:?} vs output {:?}", upstream.shape(), self.shape(output)),
            ));
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[output.0] = Some(upstream.into_data());
        for id in (0..n).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                grads[id] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (v, contribution) in self.adjoint(node, &g) {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
                    slot => *slot = Some(contribution),
                }
            }
        }
        let mut shapes = Vec::with_capacity(self.nodes.len());
        let mut out = Vec::with_capacity(self.nodes.len());
        for (id, node) in self.nodes.iter().enumerate() {
            shapes.push(node.value.shape().to_vec());
            let is_param = node.requires_grad && matches!(node.op, Op::Leaf);
            out.push(if is_param {
                Some(grads.get_mut(id).and_then(Option::take).unwrap_or_else(|| vec![0.0; node.value.len()]))
            } else {
                None
            });
        }
        Ok(Gradients { grads: out, shapes })
    }

    fn adjoint(&self, node: &Node, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let y = &node.value;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul { a, b } => linalg::matmul_backward(self, *a, *b, g),
            Op::Transpose { x } => vec![(*x, linalg::transpose_data(g, y.shape()))],
            Op::Reshape { x } => vec![(*x, g.to_vec())],
            Op::Binary { kind, a, b } => elementwise::binary_backward(self, *kind, *a, *b, y, g),
            Op::Scale { x, factor } => vec![(*x, g.iter().map(|v| v * factor).collect())],
            Op::Unary { kind, x } => vec![(*x, elementwise::unary_backward(*kind, self.value(*x), y, g))],
            Op::Softmax { x } => vec![(*x, elementwise::softmax_backward(y, g))],
            Op::SumAll { x } => vec![(*x, vec![g[0]; self.value(*x).len()])],
            Op::MeanAll { x } => {
                let n = self.value(*x).len();
                vec![(*x, vec![g[0] / n as f64; n])]
            }
            Op::SumAxis { x, axis } => vec![(*x, elementwise::expand_axis(self.shape(*x), *axis, g, 1.0))],
            Op::MeanAxis { x, axis } => {
                let shape = self.shape(*x);
                let scale = 1.0 / shape[*axis] as f64;
                vec![(*x, elementwise::expand_axis(shape, *axis, g, scale))]
            }
            Op::MaxPool1d { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).len()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    dx[src] += gv;
                }
                vec![(*x, dx)]
            }
            Op::Conv1d { x, w, b, stride, padding } => {
                conv::conv1d_backward(self, *x, *w, *b, *stride, *padding, y.shape(), g)
            }
            Op::Conv2d { x, w, b, stride, padding } => {
                conv::conv2d_backward(self, *x, *w, *b, *stride, *padding, y.shape(), g)
            }
            Op::BatchNorm { x, gamma, beta, memo } => norm::batch_norm_backward(self, *x, *gamma, *beta, memo, g),
            Op::BiLstm { x, weights, cache } => lstm::bilstm_backward(self, *x, weights, cache, g),
            Op::Concat { inputs, axis } => shape::concat_backward(self, inputs, *axis, y.shape(), g),
            Op::Slice { x, axis, start } => {
                vec![(*x, shape::slice_backward(self.shape(*x), *axis, *start, y.shape(), g))]
            }
            Op::DiagEmbed { x, offset } => vec![(*x, shape::diag_extract_data(y.shape(), *offset, g))],
            Op::DiagExtract { x, offset } => vec![(*x, shape::diag_embed_data(y.shape(), *offset, g))],
            Op::GcnNormalize { a, inv_sqrt_deg } => {
                vec![(*a, linalg::gcn_normalize_backward(self.value(*a), inv_sqrt_deg, g))]
            }
            Op::CrossEntropy { logits, labels, probs } => {
                vec![(*logits, loss::cross_entropy_backward(labels, probs, self.shape(*logits), g[0]))]
            }
        }
    }
}
