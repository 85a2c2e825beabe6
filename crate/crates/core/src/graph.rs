//! Tape-based reverse-mode automatic differentiation.
//!
//! Every op evaluates eagerly and appends a node to the tape, so node order is a
//! topological order. [`Graph::backward`] walks the tape in exact reverse order from
//! the loss node, summing gradients over every use of a node.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::conv::{self, ConvSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
}

impl Activation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Activation::LeakyRelu { slope } if !(slope > 0.0 && slope < 1.0) => Err(Error::invalid(
                format!("leaky relu slope must lie in (0,1), got {slope}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative given the input `x` and output `y`; at 0 the negative branch is taken.
    fn derivative(&self, x: f64, y: f64) -> f64 {
        match *self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Elementwise activation on a plain tensor.
pub fn apply_activation(input: &Tensor, kind: Activation) -> Result<Tensor> {
    kind.validate()?;
    Ok(input.map(|x| kind.apply(x)))
}

/// Per-pixel softmax over axis 1 of an `[N,K,H,W]` tensor with max subtraction.
pub fn softmax_channels(logits: &Tensor) -> Result<Tensor> {
    let (n, k, h, w) = logits.dims4()?;
    if k < 2 {
        return Err(Error::shape(format!("softmax needs at least 2 channels, got {k}")));
    }
    let plane = h * w;
    let x = logits.data();
    let mut out = vec![0.0; x.len()];
    let mut buf = vec![0.0; k];
    for b in 0..n {
        let base = b * k * plane;
        for p in 0..plane {
            let mut m = f64::NEG_INFINITY;
            for c in 0..k {
                m = m.max(x[base + c * plane + p]);
            }
            let mut z = 0.0;
            for c in 0..k {
                buf[c] = (x[base + c * plane + p] - m).exp();
                z += buf[c];
            }
            for c in 0..k {
                out[base + c * plane + p] = buf[c] / z;
            }
        }
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Concatenates two `[N,C,H,W]` tensors along the channel axis, `a` first.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, ca, h, w) = a.dims4()?;
    let (nb, cb, hb, wb) = b.dims4()?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::shape(format!(
            "cannot concatenate {:?} with {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (la, lb) = (ca * h * w, cb * h * w);
    let mut out = Vec::with_capacity(n * (la + lb));
    for i in 0..n {
        out.extend_from_slice(&a.data()[i * la..(i + 1) * la]);
        out.extend_from_slice(&b.data()[i * lb..(i + 1) * lb]);
    }
    Tensor::new(vec![n, ca + cb, h, w], out)
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        spec: ConvSpec,
    },
    ConvTranspose2d {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        spec: ConvSpec,
        out_hw: Option<(usize, usize)>,
    },
    Activation {
        input: NodeId,
        kind: Activation,
    },
    Softmax {
        input: NodeId,
    },
    Concat {
        a: NodeId,
        b: NodeId,
    },
    Resize {
        input: NodeId,
        rows: NodeId,
        cols: NodeId,
    },
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<f64>,
        var: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        input: NodeId,
        factor: f64,
    },
    Sum {
        input: NodeId,
    },
    SquaredError {
        a: NodeId,
        b: NodeId,
    },
    MaskedNll {
        probs: NodeId,
        labels: Vec<i8>,
        count: usize,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::Activation { .. } => "activation",
            Op::Softmax { .. } => "softmax_channels",
            Op::Concat { .. } => "concat_channels",
            Op::Resize { .. } => "resize",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Add { .. } => "add",
            Op::Scale { .. } => "scale",
            Op::Sum { .. } => "sum",
            Op::SquaredError { .. } => "squared_error",
            Op::MaskedNll { .. } => "masked_nll",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
    param: Option<String>,
}

/// Sum of squared differences between two equal-shaped tensors.
pub fn squared_error(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.expect_same_shape(b)?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

/// A single forward/backward tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    seed: u64,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_seed(seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::NonFinite(format!("forward output of {}", op.name())));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
            param: None,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| Error::Graph(format!("node {} does not exist in this graph", id.0)))
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// A constant input (no gradient).
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
            param: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A named parameter leaf; its gradient is reported by [`Graph::param_grads`].
    pub fn param(&mut self, name: &str, value: Tensor, requires_grad: bool) -> NodeId {
        let id = self.leaf(value, requires_grad);
        self.nodes[id.0].param = Some(name.to_string());
        id
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.rg(id)
    }

    /// Gradient of the last backward pass; `None` for nodes that do not require grad.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, bias: Option<NodeId>, spec: ConvSpec) -> Result<NodeId> {
        let value = conv::conv2d_forward(
            &self.node(input)?.value,
            &self.node(weight)?.value,
            bias.map(|b| &self.nodes[b.0].value),
            &spec,
        )?;
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            },
            rg,
        )
    }

    pub fn conv_transpose2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        spec: ConvSpec,
        out_hw: Option<(usize, usize)>,
    ) -> Result<NodeId> {
        let value = conv::conv_transpose2d_forward(
            &self.node(input)?.value,
            &self.node(weight)?.value,
            bias.map(|b| &self.nodes[b.0].value),
            &spec,
            out_hw,
        )?;
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        self.push(
            value,
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                spec,
                out_hw,
            },
            rg,
        )
    }

    pub fn activation(&mut self, input: NodeId, kind: Activation) -> Result<NodeId> {
        let value = apply_activation(&self.node(input)?.value, kind)?;
        let rg = self.rg(input);
        self.push(value, Op::Activation { input, kind }, rg)
    }

    pub fn softmax_channels(&mut self, input: NodeId) -> Result<NodeId> {
        let value = softmax_channels(&self.node(input)?.value)?;
        let rg = self.rg(input);
        self.push(value, Op::Softmax { input }, rg)
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = concat_channels(&self.node(a)?.value, &self.node(b)?.value)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Concat { a, b }, rg)
    }

    /// Separable fixed-coefficient resize; the coefficient nodes never receive gradient.
    pub fn resize(&mut self, input: NodeId, rows: NodeId, cols: NodeId) -> Result<NodeId> {
        if self.node(rows)?.requires_grad || self.node(cols)?.requires_grad {
            return Err(Error::Graph("resize coefficients must be non-trainable".into()));
        }
        let value = conv::resize_forward(
            &self.node(input)?.value,
            &self.nodes[rows.0].value,
            &self.nodes[cols.0].value,
        )?;
        let rg = self.rg(input);
        self.push(value, Op::Resize { input, rows, cols }, rg)
    }

    /// Per-channel batch normalisation. With `running = None` the batch statistics are
    /// used (training); otherwise the given `(mean, var)` are applied as constants.
    pub fn batch_norm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running: Option<(&[f64], &[f64])>,
        eps: f64,
    ) -> Result<NodeId> {
        let x = &self.node(input)?.value;
        let (n, c, h, w) = x.dims4()?;
        let g = &self.node(gamma)?.value;
        let b = &self.node(beta)?.value;
        if g.shape() != [c] || b.shape() != [c] {
            return Err(Error::shape("batch norm affine parameters must be [C]"));
        }
        let plane = h * w;
        let m = (n * plane) as f64;
        let (mean, var) = match running {
            Some((mu, v)) => {
                if mu.len() != c || v.len() != c {
                    return Err(Error::shape("running statistics must have C entries"));
                }
                (mu.to_vec(), v.to_vec())
            }
            None => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for b in 0..n {
                        s += x.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane].iter().sum::<f64>();
                    }
                    let mu = s / m;
                    let mut q = 0.0;
                    for b in 0..n {
                        q += x.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane]
                            .iter()
                            .map(|v| (v - mu) * (v - mu))
                            .sum::<f64>();
                    }
                    mean[ch] = mu;
                    var[ch] = q / m;
                }
                (mean, var)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut out = vec![0.0; x.len()];
        for b in 0..n {
            for ch in 0..c {
                let s = (b * c + ch) * plane;
                for i in s..s + plane {
                    out[i] = g.data()[ch] * (x.data()[i] - mean[ch]) * inv_std[ch] + self.nodes[beta.0].value.data()[ch];
                }
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.rg(input) || self.rg(gamma) || self.rg(beta);
        self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                var,
                inv_std,
                batch_stats: running.is_none(),
            },
            rg,
        )
    }

    /// `(mean, biased variance)` used by a batch-norm node.
    pub fn batch_norm_stats(&self, id: NodeId) -> Option<(&[f64], &[f64])> {
        match &self.nodes.get(id.0)?.op {
            Op::BatchNorm { mean, var, .. } => Some((mean, var)),
            _ => None,
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.node(a)?.value.zip_map(&self.node(b)?.value, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add { a, b }, rg)
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> Result<NodeId> {
        let value = self.node(input)?.value.map(|x| x * factor);
        let rg = self.rg(input);
        self.push(value, Op::Scale { input, factor }, rg)
    }

    pub fn sum(&mut self, input: NodeId) -> Result<NodeId> {
        let value = Tensor::scalar(self.node(input)?.value.sum());
        let rg = self.rg(input);
        self.push(value, Op::Sum { input }, rg)
    }

    /// Scalar `Σ (a − b)²`.
    pub fn squared_error(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = Tensor::scalar(squared_error(&self.node(a)?.value, &self.node(b)?.value)?);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::SquaredError { a, b }, rg)
    }

    /// Mean negative log-likelihood of the labelled class over pixels whose label is
    /// not `-1`. `probs` is `[N,K,H,W]`; `labels` is `N·H·W` entries in `{-1, 0..K}`.
    /// With no scorable pixel the loss is 0 and every gradient is 0.
    pub fn masked_nll(&mut self, probs: NodeId, labels: &[i8]) -> Result<NodeId> {
        let p = &self.node(probs)?.value;
        let (n, k, h, w) = p.dims4()?;
        if labels.len() != n * h * w {
            return Err(Error::shape(format!(
                "{} labels for probability map {:?}",
                labels.len(),
                p.shape()
            )));
        }
        let plane = h * w;
        let mut count = 0usize;
        let mut total = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            if l == -1 {
                continue;
            }
            if l < 0 || l as usize >= k {
                return Err(Error::InvalidLabel { value: l as i32 });
            }
            let (b, px) = (i / plane, i % plane);
            let pr = p.data()[(b * k + l as usize) * plane + px];
            total -= pr.max(f64::MIN_POSITIVE).ln();
            count += 1;
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let rg = self.rg(probs);
        self.push(
            Tensor::scalar(loss),
            Op::MaskedNll {
                probs,
                labels: labels.to_vec(),
                count,
            },
            rg,
        )
    }

    /// Runs reverse-mode differentiation from a scalar `loss` node. Gradients of earlier
    /// passes are cleared first.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Graph("backward called on an empty graph".into()));
        }
        let root = self.node(loss)?;
        if root.value.len() != 1 {
            return Err(Error::Graph(format!(
                "loss must be a scalar, got shape {:?}",
                root.value.shape()
            )));
        }
        let root_shape = root.value.shape().to_vec();
        let root_requires_grad = root.requires_grad;
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !root_requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::new(root_shape, vec![1.0])?);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of {}",
                    self.nodes[i].op.name()
                )));
            }
            for (target, contrib) in self.local_grads(i, &g)? {
                if !self.nodes[target.0].requires_grad {
                    continue;
                }
                match &mut grads[target.0] {
                    Some(acc) => acc.add_assign(&contrib)?,
                    slot @ None => *slot = Some(contrib),
                }
            }
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, g: &Tensor) -> Result<Vec<(NodeId, Tensor)>> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            } => {
                let grads = conv::conv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    spec,
                    g,
                    self.rg(*input),
                    self.rg(*weight),
                )?;
                push_opt(&mut out, *input, grads.input);
                push_opt(&mut out, *weight, grads.weight);
                if let (Some(b), Some(gb)) = (bias, grads.bias) {
                    out.push((*b, gb));
                }
            }
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                spec,
                out_hw,
            } => {
                let grads = conv::conv_transpose2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    spec,
                    *out_hw,
                    g,
                    self.rg(*input),
                    self.rg(*weight),
                )?;
                push_opt(&mut out, *input, grads.input);
                push_opt(&mut out, *weight, grads.weight);
                if let (Some(b), Some(gb)) = (bias, grads.bias) {
                    out.push((*b, gb));
                }
            }
            Op::Activation { input, kind } => {
                let x = self.value(*input);
                let y = &node.value;
                let data = x
                    .data()
                    .iter()
                    .zip(y.data())
                    .zip(g.data())
                    .map(|((&xv, &yv), &gv)| gv * kind.derivative(xv, yv))
                    .collect();
                out.push((*input, Tensor::new(x.shape().to_vec(), data)?));
            }
            Op::Softmax { input } => {
                let (n, k, h, w) = node.value.dims4()?;
                let plane = h * w;
                let p = node.value.data();
                let mut dx = vec![0.0; p.len()];
                for b in 0..n {
                    let base = b * k * plane;
                    for px in 0..plane {
                        let mut dot = 0.0;
                        for c in 0..k {
                            let idx = base + c * plane + px;
                            dot += p[idx] * g.data()[idx];
                        }
                        for c in 0..k {
                            let idx = base + c * plane + px;
                            dx[idx] = p[idx] * (g.data()[idx] - dot);
                        }
                    }
                }
                out.push((*input, Tensor::new(node.value.shape().to_vec(), dx)?));
            }
            Op::Concat { a, b } => {
                let (n, _, h, w) = node.value.dims4()?;
                let ca = self.value(*a).shape()[1];
                let cb = self.value(*b).shape()[1];
                let (la, lb) = (ca * h * w, cb * h * w);
                let mut ga = Vec::with_capacity(n * la);
                let mut gb = Vec::with_capacity(n * lb);
                for s in 0..n {
                    let base = s * (la + lb);
                    ga.extend_from_slice(&g.data()[base..base + la]);
                    gb.extend_from_slice(&g.data()[base + la..base + la + lb]);
                }
                out.push((*a, Tensor::new(vec![n, ca, h, w], ga)?));
                out.push((*b, Tensor::new(vec![n, cb, h, w], gb)?));
            }
            Op::Resize { input, rows, cols } => {
                let dx = conv::resize_backward(
                    self.value(*input).shape(),
                    self.value(*rows),
                    self.value(*cols),
                    g,
                )?;
                out.push((*input, dx));
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats,
                ..
            } => {
                let x = self.value(*input);
                let (n, c, h, w) = x.dims4()?;
                let plane = h * w;
                let m = (n * plane) as f64;
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dx = vec![0.0; x.len()];
                for ch in 0..c {
                    let (mut sg, mut sgx) = (0.0, 0.0);
                    for b in 0..n {
                        let s = (b * c + ch) * plane;
                        for i in s..s + plane {
                            let xhat = (x.data()[i] - mean[ch]) * inv_std[ch];
                            sg += g.data()[i];
                            sgx += g.data()[i] * xhat;
                        }
                    }
                    dgamma[ch] = sgx;
                    dbeta[ch] = sg;
                    let k = gam[ch] * inv_std[ch];
                    for b in 0..n {
                        let s = (b * c + ch) * plane;
                        for i in s..s + plane {
                            dx[i] = if *batch_stats {
                                let xhat = (x.data()[i] - mean[ch]) * inv_std[ch];
                                k * (g.data()[i] - sg / m - xhat * sgx / m)
                            } else {
                                k * g.data()[i]
                            };
                        }
                    }
                }
                out.push((*input, Tensor::new(x.shape().to_vec(), dx)?));
                out.push((*gamma, Tensor::new(vec![c], dgamma)?));
                out.push((*beta, Tensor::new(vec![c], dbeta)?));
            }
            Op::Add { a, b } => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Scale { input, factor } => {
                out.push((*input, g.map(|v| v * factor)));
            }
            Op::Sum { input } => {
                let gv = g.item();
                out.push((*input, Tensor::full(self.value(*input).shape().to_vec(), gv)));
            }
            Op::SquaredError { a, b } => {
                let gv = g.item();
                let da = self.value(*a).zip_map(self.value(*b), |x, y| 2.0 * gv * (x - y))?;
                let db = da.map(|v| -v);
                out.push((*a, da));
                out.push((*b, db));
            }
            Op::MaskedNll {
                probs,
                labels,
                count,
            } => {
                let p = self.value(*probs);
                let (_, k, h, w) = p.dims4()?;
                let plane = h * w;
                let mut dp = vec![0.0; p.len()];
                if *count > 0 {
                    let scale = g.item() / *count as f64;
                    for (i, &l) in labels.iter().enumerate() {
                        if l < 0 {
                            continue;
                        }
                        let (b, px) = (i / plane, i % plane);
                        let idx = (b * k + l as usize) * plane + px;
                        dp[idx] = -scale / p.data()[idx].max(f64::MIN_POSITIVE);
                    }
                }
                out.push((*probs, Tensor::new(p.shape().to_vec(), dp)?));
            }
        }
        Ok(out)
    }

    /// Gradient registry keyed by parameter name, summed over every use of the name.
    pub fn param_grads(&self) -> BTreeMap<String, Tensor> {
        let mut out: BTreeMap<String, Tensor> = BTreeMap::new();
        for node in &self.nodes {
            if let (Some(name), Some(g)) = (&node.param, &node.grad) {
                match out.get_mut(name) {
                    Some(acc) => acc.add_assign(g).expect("parameter uses share a shape"),
                    None => {
                        out.insert(name.clone(), g.clone());
                    }
                }
            }
        }
        out
    }
}

fn push_opt(out: &mut Vec<(NodeId, Tensor)>, id: NodeId, t: Option<Tensor>) {
    if let Some(t) = t {
        out.push((id, t));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_and_leaky_values() {
        let x = t(&[3], &[-1.0, 3.5, 0.0]);
        assert_eq!(apply_activation(&x, Activation::Relu).unwrap().data(), &[0.0, 3.5, 0.0]);
        let y = apply_activation(&x, Activation::LeakyRelu { slope: 0.2 }).unwrap();
        assert!((y.data()[0] + 0.2).abs() < 1e-15);
        assert!(apply_activation(&x, Activation::LeakyRelu { slope: 1.5 }).is_err());
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_channels(&t(&[1, 2, 1, 1], &[0.3, 0.3])).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
        let p = softmax_channels(&t(&[1, 2, 1, 1], &[0.0, 3f64.ln()])).unwrap();
        assert!((p.data()[0] - 0.25).abs() < 1e-15 && (p.data()[1] - 0.75).abs() < 1e-15);
        let p = softmax_channels(&t(&[1, 2, 1, 1], &[1000.0, 1000.0])).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
        assert!(softmax_channels(&t(&[1, 1, 1, 1], &[0.0])).is_err());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]), true);
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &Tensor::ones(vec![2, 3]));
    }

    #[test]
    fn gradient_accumulates_over_uses() {
        let mut g = Graph::new();
        let x = g.param("x", t(&[2], &[1.0, 2.0]), true);
        let y = g.add(x, x).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.param_grads()["x"].data(), &[2.0, 2.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]), true);
        let c = g.input(t(&[2], &[5.0, 5.0]));
        let e = g.squared_error(x, c).unwrap();
        g.backward(e).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap().data(), &[-8.0, -6.0]);
    }

    #[test]
    fn backward_rejects_bad_roots() {
        let mut g = Graph::new();
        assert!(matches!(g.backward(NodeId(0)), Err(Error::Graph(_))));
        let x = g.leaf(t(&[2], &[1.0, 2.0]), true);
        assert!(matches!(g.backward(x), Err(Error::Graph(_))));
        assert!(matches!(g.backward(NodeId(7)), Err(Error::Graph(_))));
    }

    #[test]
    fn nll_rejects_unknown_labels() {
        let mut g = Graph::new();
        let p = g.leaf(t(&[1, 2, 1, 1], &[0.5, 0.5]), true);
        assert!(matches!(g.masked_nll(p, &[2]), Err(Error::InvalidLabel { value: 2 })));
        assert!(matches!(g.masked_nll(p, &[-3]), Err(Error::InvalidLabel { value: -3 })));
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1], &[f64::MAX]), true);
        assert!(matches!(g.scale(x, 10.0), Err(Error::NonFinite(_))));
    }
}
