//! Reverse-mode gradient tape.
//!
//! A [`Graph`] is an append-only tape of eagerly evaluated nodes. Inputs of a
//! node always precede it, so the backward pass is a single reverse sweep and
//! touches each node exactly once. Forward values are cached at construction
//! and can be recomputed in place after leaf edits, which is what the
//! finite-difference checker relies on.

use crate::error::DiffError;
use crate::tensor::{
    gelu_grad_scalar, gelu_scalar, matmul, matmul_nt, matmul_tn, sigmoid_scalar, Tensor,
};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle into a [`Graph`]'s tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { trainable: bool },
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    ScaleConst(NodeId, f64),
    /// tensor minus broadcast scalar node
    SubScalar(NodeId, NodeId),
    /// tensor times broadcast scalar node
    MulScalar(NodeId, NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
    },
    Gelu(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Clamp {
        x: NodeId,
        lo: f64,
        hi: f64,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        label: usize,
    },
    GaussianNll {
        mu: NodeId,
        log_var: NodeId,
        target: f64,
    },
    /// mean of scalar nodes (batch pooling)
    Mean(Vec<NodeId>),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients produced by a backward pass, aligned with the tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<(), DiffError> {
        if id.0 >= self.nodes.len() {
            return Err(DiffError::UnknownNode(id.0));
        }
        Ok(())
    }

    /// Constant (non-trainable) input.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf { trainable: false }, value)
    }

    /// Trainable input; gradients are always materialized for it.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf { trainable: true }, value)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].op, Op::Leaf { .. })
    }

    pub fn is_trainable(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].op, Op::Leaf { trainable: true })
    }

    /// Overwrite a leaf's stored elements. Caches downstream become stale
    /// until [`Graph::recompute_forward`] runs.
    pub fn set_leaf_element(&mut self, id: NodeId, index: usize, v: f64) {
        debug_assert!(self.is_leaf(id));
        self.nodes[id.0].value.data_mut()[index] = v;
    }

    pub fn leaf_element(&self, id: NodeId, index: usize) -> f64 {
        self.nodes[id.0].value.data()[index]
    }

    // ---- forward ops ------------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.check(a)?;
        self.check(b)?;
        let v = matmul(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        Ok(self.push(Op::Matmul(a, b), v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.check(a)?;
        self.check(b)?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(DiffError::DimMismatch {
                op: "add",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x + y)
            .collect();
        let v = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.check(a)?;
        self.check(b)?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(DiffError::DimMismatch {
                op: "mul",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x * y)
            .collect();
        let v = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn scale_const(&mut self, a: NodeId, c: f64) -> Result<NodeId, DiffError> {
        self.check(a)?;
        let va = &self.nodes[a.0].value;
        let v = Tensor::new(va.shape().to_vec(), va.data().iter().map(|x| c * x).collect())?;
        Ok(self.push(Op::ScaleConst(a, c), v))
    }

    /// Elementwise `a - s` where `s` is a scalar node.
    pub fn sub_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId, DiffError> {
        self.check(a)?;
        self.check(s)?;
        if !self.nodes[s.0].value.is_scalar() {
            return Err(DiffError::NotScalar {
                op: "sub_scalar",
                shape: self.nodes[s.0].value.shape().to_vec(),
            });
        }
        let sv = self.nodes[s.0].value.item();
        let va = &self.nodes[a.0].value;
        let v = Tensor::new(va.shape().to_vec(), va.data().iter().map(|x| x - sv).collect())?;
        Ok(self.push(Op::SubScalar(a, s), v))
    }

    /// Elementwise `a * s` where `s` is a scalar node.
    pub fn mul_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId, DiffError> {
        self.check(a)?;
        self.check(s)?;
        if !self.nodes[s.0].value.is_scalar() {
            return Err(DiffError::NotScalar {
                op: "mul_scalar",
                shape: self.nodes[s.0].value.shape().to_vec(),
            });
        }
        let sv = self.nodes[s.0].value.item();
        let va = &self.nodes[a.0].value;
        let v = Tensor::new(va.shape().to_vec(), va.data().iter().map(|x| x * sv).collect())?;
        Ok(self.push(Op::MulScalar(a, s), v))
    }

    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, DiffError> {
        self.check(x)?;
        self.check(gain)?;
        self.check(bias)?;
        let v = layer_norm_forward(
            &self.nodes[x.0].value,
            &self.nodes[gain.0].value,
            &self.nodes[bias.0].value,
        )?;
        Ok(self.push(Op::LayerNorm { x, gain, bias }, v))
    }

    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId, DiffError> {
        self.check(x)?;
        let vx = &self.nodes[x.0].value;
        let v = Tensor::new(
            vx.shape().to_vec(),
            vx.data().iter().map(|&a| gelu_scalar(a)).collect(),
        )?;
        Ok(self.push(Op::Gelu(x), v))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId, DiffError> {
        self.check(x)?;
        let vx = &self.nodes[x.0].value;
        let v = Tensor::new(
            vx.shape().to_vec(),
            vx.data().iter().map(|&a| sigmoid_scalar(a)).collect(),
        )?;
        Ok(self.push(Op::Sigmoid(x), v))
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId, DiffError> {
        self.check(x)?;
        let vx = &self.nodes[x.0].value;
        let v = Tensor::new(vx.shape().to_vec(), vx.data().iter().map(|a| a.exp()).collect())?;
        Ok(self.push(Op::Exp(x), v))
    }

    /// Hard clamp; gradient is zero strictly outside `[lo, hi]`.
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> Result<NodeId, DiffError> {
        self.check(x)?;
        let vx = &self.nodes[x.0].value;
        let v = Tensor::new(
            vx.shape().to_vec(),
            vx.data().iter().map(|a| a.clamp(lo, hi)).collect(),
        )?;
        Ok(self.push(Op::Clamp { x, lo, hi }, v))
    }

    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        label: usize,
    ) -> Result<NodeId, DiffError> {
        self.check(logits)?;
        let v = &self.nodes[logits.0].value;
        if label >= v.len() {
            return Err(DiffError::LabelOutOfRange {
                label,
                classes: v.len(),
            });
        }
        let loss = softmax_ce_forward(v.data(), label);
        Ok(self.push(
            Op::SoftmaxCrossEntropy { logits, label },
            Tensor::scalar(loss),
        ))
    }

    /// Gaussian negative log-likelihood `0.5*(t-mu)^2/exp(lv) + 0.5*lv`
    /// of a fixed target under scalar nodes `mu` and `log_var`.
    pub fn gaussian_nll(
        &mut self,
        mu: NodeId,
        log_var: NodeId,
        target: f64,
    ) -> Result<NodeId, DiffError> {
        self.check(mu)?;
        self.check(log_var)?;
        for id in [mu, log_var] {
            if !self.nodes[id.0].value.is_scalar() {
                return Err(DiffError::NotScalar {
                    op: "gaussian_nll",
                    shape: self.nodes[id.0].value.shape().to_vec(),
                });
            }
        }
        if !target.is_finite() {
            return Err(DiffError::NonFinite { op: "gaussian_nll" });
        }
        let m = self.nodes[mu.0].value.item();
        let lv = self.nodes[log_var.0].value.item();
        let loss = gaussian_nll_forward(m, lv, target);
        Ok(self.push(Op::GaussianNll { mu, log_var, target }, Tensor::scalar(loss)))
    }

    /// Mean of scalar nodes.
    pub fn mean(&mut self, xs: &[NodeId]) -> Result<NodeId, DiffError> {
        if xs.is_empty() {
            return Err(DiffError::NotScalar {
                op: "mean",
                shape: vec![0],
            });
        }
        let mut acc = 0.0;
        for &id in xs {
            self.check(id)?;
            let v = &self.nodes[id.0].value;
            if !v.is_scalar() {
                return Err(DiffError::NotScalar {
                    op: "mean",
                    shape: v.shape().to_vec(),
                });
            }
            acc += v.item();
        }
        let v = Tensor::scalar(acc / xs.len() as f64);
        Ok(self.push(Op::Mean(xs.to_vec()), v))
    }

    // ---- recompute and backward ------------------------------------------

    /// Re-evaluate every non-leaf node in tape order from current leaf values.
    pub fn recompute_forward(&mut self) -> Result<(), DiffError> {
        for i in 0..self.nodes.len() {
            let value = match &self.nodes[i].op {
                Op::Leaf { .. } => continue,
                Op::Matmul(a, b) => matmul(&self.nodes[a.0].value, &self.nodes[b.0].value)?,
                Op::Add(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    Tensor::new(
                        va.shape().to_vec(),
                        va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect(),
                    )?
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    Tensor::new(
                        va.shape().to_vec(),
                        va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect(),
                    )?
                }
                Op::ScaleConst(a, c) => {
                    let va = &self.nodes[a.0].value;
                    Tensor::new(va.shape().to_vec(), va.data().iter().map(|x| c * x).collect())?
                }
                Op::SubScalar(a, s) => {
                    let sv = self.nodes[s.0].value.item();
                    let va = &self.nodes[a.0].value;
                    Tensor::new(va.shape().to_vec(), va.data().iter().map(|x| x - sv).collect())?
                }
                Op::MulScalar(a, s) => {
                    let sv = self.nodes[s.0].value.item();
                    let va = &self.nodes[a.0].value;
                    Tensor::new(va.shape().to_vec(), va.data().iter().map(|x| x * sv).collect())?
                }
                Op::LayerNorm { x, gain, bias } => layer_norm_forward(
                    &self.nodes[x.0].value,
                    &self.nodes[gain.0].value,
                    &self.nodes[bias.0].value,
                )?,
                Op::Gelu(x) => {
                    let vx = &self.nodes[x.0].value;
                    Tensor::new(
                        vx.shape().to_vec(),
                        vx.data().iter().map(|&a| gelu_scalar(a)).collect(),
                    )?
                }
                Op::Sigmoid(x) => {
                    let vx = &self.nodes[x.0].value;
                    Tensor::new(
                        vx.shape().to_vec(),
                        vx.data().iter().map(|&a| sigmoid_scalar(a)).collect(),
                    )?
                }
                Op::Exp(x) => {
                    let vx = &self.nodes[x.0].value;
                    Tensor::new(vx.shape().to_vec(), vx.data().iter().map(|a| a.exp()).collect())?
                }
                Op::Clamp { x, lo, hi } => {
                    let vx = &self.nodes[x.0].value;
                    Tensor::new(
                        vx.shape().to_vec(),
                        vx.data().iter().map(|a| a.clamp(*lo, *hi)).collect(),
                    )?
                }
                Op::SoftmaxCrossEntropy { logits, label } => {
                    Tensor::scalar(softmax_ce_forward(self.nodes[logits.0].value.data(), *label))
                }
                Op::GaussianNll { mu, log_var, target } => Tensor::scalar(gaussian_nll_forward(
                    self.nodes[mu.0].value.item(),
                    self.nodes[log_var.0].value.item(),
                    *target,
                )),
                Op::Mean(xs) => {
                    let acc: f64 = xs.iter().map(|id| self.nodes[id.0].value.item()).sum();
                    Tensor::scalar(acc / xs.len() as f64)
                }
            };
            self.nodes[i].value = value;
        }
        Ok(())
    }

    /// Reverse sweep from `loss`. Forward caches are left untouched.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, DiffError> {
        self.check(loss)?;
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(DiffError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Leaf { .. } => {
                    grads[i] = Some(g); // keep leaf gradients
                    continue;
                }
                Op::Matmul(a, b) => {
                    let ga = matmul_nt(&g, &self.nodes[b.0].value)?;
                    let gb = matmul_tn(&self.nodes[a.0].value, &g)?;
                    accumulate(&mut grads, *a, reshape_like(ga, &self.nodes[a.0].value));
                    accumulate(&mut grads, *b, reshape_like(gb, &self.nodes[b.0].value));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Mul(a, b) => {
                    let ga = ew(&g, &self.nodes[b.0].value, |x, y| x * y);
                    let gb = ew(&g, &self.nodes[a.0].value, |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::ScaleConst(a, c) => {
                    let ga = map(&g, |x| c * x);
                    accumulate(&mut grads, *a, ga);
                }
                Op::SubScalar(a, s) => {
                    let gs = -g.data().iter().sum::<f64>();
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *s, Tensor::scalar(gs));
                }
                Op::MulScalar(a, s) => {
                    let sv = self.nodes[s.0].value.item();
                    let ga = map(&g, |x| sv * x);
                    let gs = g
                        .data()
                        .iter()
                        .zip(self.nodes[a.0].value.data())
                        .map(|(x, y)| x * y)
                        .sum::<f64>();
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *s, Tensor::scalar(gs));
                }
                Op::LayerNorm { x, gain, bias } => {
                    let (gx, gg, gb) = layer_norm_backward(
                        &g,
                        &self.nodes[x.0].value,
                        &self.nodes[gain.0].value,
                    );
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gain, gg);
                    accumulate(&mut grads, *bias, gb);
                }
                Op::Gelu(x) => {
                    let gx = ew(&g, &self.nodes[x.0].value, |gi, xi| gi * gelu_grad_scalar(xi));
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let gx = ew(&g, &self.nodes[i].value, |gi, yi| gi * yi * (1.0 - yi));
                    accumulate(&mut grads, *x, gx);
                }
                Op::Exp(x) => {
                    let gx = ew(&g, &self.nodes[i].value, |gi, yi| gi * yi);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Clamp { x, lo, hi } => {
                    let gx = ew(&g, &self.nodes[x.0].value, |gi, xi| {
                        if xi >= *lo && xi <= *hi {
                            gi
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *x, gx);
                }
                Op::SoftmaxCrossEntropy { logits, label } => {
                    let gs = g.item();
                    let lv = self.nodes[logits.0].value.data();
                    let sm = softmax(lv);
                    let mut gl = Vec::with_capacity(lv.len());
                    for (c, p) in sm.iter().enumerate() {
                        let one = if c == *label { 1.0 } else { 0.0 };
                        gl.push(gs * (p - one));
                    }
                    let gl = Tensor::new(self.nodes[logits.0].value.shape().to_vec(), gl)
                        .expect("softmax grad shape");
                    accumulate(&mut grads, *logits, gl);
                }
                Op::GaussianNll { mu, log_var, target } => {
                    let gs = g.item();
                    let m = self.nodes[mu.0].value.item();
                    let lv = self.nodes[log_var.0].value.item();
                    let inv_var = (-lv).exp();
                    let gmu = gs * (m - target) * inv_var;
                    let glv = gs * (-0.5 * (target - m) * (target - m) * inv_var + 0.5);
                    accumulate(&mut grads, *mu, Tensor::scalar(gmu));
                    accumulate(&mut grads, *log_var, Tensor::scalar(glv));
                }
                Op::Mean(xs) => {
                    let gs = g.item() / xs.len() as f64;
                    for &id in xs {
                        accumulate(&mut grads, id, Tensor::scalar(gs));
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn reshape_like(mut t: Tensor, like: &Tensor) -> Tensor {
    debug_assert_eq!(t.len(), like.len());
    if t.shape() != like.shape() {
        t = Tensor::new(like.shape().to_vec(), t.data().to_vec()).expect("reshape_like");
    }
    t
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot => *slot = Some(g),
    }
}

fn ew(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.len(), b.len());
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
    .expect("elementwise shape")
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect()).expect("map shape")
}

fn layer_norm_forward(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor, DiffError> {
    let d = x.len();
    if d < 2 {
        return Err(DiffError::DegenerateInput(d));
    }
    if gain.len() != d || bias.len() != d {
        return Err(DiffError::DimMismatch {
            op: "layer_norm",
            left: x.shape().to_vec(),
            right: gain.shape().to_vec(),
        });
    }
    let mean = x.data().iter().sum::<f64>() / d as f64;
    let var = x.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    let data = x
        .data()
        .iter()
        .zip(gain.data().iter().zip(bias.data()))
        .map(|(&xi, (&g, &b))| g * ((xi - mean) * inv) + b)
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

fn layer_norm_backward(g: &Tensor, x: &Tensor, gain: &Tensor) -> (Tensor, Tensor, Tensor) {
    let d = x.len();
    let df = d as f64;
    let mean = x.data().iter().sum::<f64>() / df;
    let var = x.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / df;
    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    let xhat: Vec<f64> = x.data().iter().map(|&v| (v - mean) * inv).collect();

    // d/dgain, d/dbias
    let ggain = Tensor::new(
        gain.shape().to_vec(),
        g.data().iter().zip(&xhat).map(|(&gi, &h)| gi * h).collect(),
    )
    .expect("gain grad");
    let gbias = Tensor::new(gain.shape().to_vec(), g.data().to_vec()).expect("bias grad");

    // d/dx through the normalization
    let dy: Vec<f64> = g
        .data()
        .iter()
        .zip(gain.data())
        .map(|(&gi, &w)| gi * w)
        .collect();
    let mean_dy = dy.iter().sum::<f64>() / df;
    let mean_dy_xhat = dy.iter().zip(&xhat).map(|(&a, &h)| a * h).sum::<f64>() / df;
    let gx = Tensor::new(
        x.shape().to_vec(),
        dy.iter()
            .zip(&xhat)
            .map(|(&dyi, &h)| inv * (dyi - mean_dy - h * mean_dy_xhat))
            .collect(),
    )
    .expect("x grad");
    (gx, ggain, gbias)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn softmax_ce_forward(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

fn gaussian_nll_forward(mu: f64, log_var: f64, target: f64) -> f64 {
    let r = target - mu;
    0.5 * r * r * (-log_var).exp() + 0.5 * log_var
}

// ---- finite differences ----------------------------------------------------

pub const GRAD_CHECK_EPS: f64 = 1e-6;

/// Central finite-difference gradient of `loss` with respect to one leaf.
pub fn numeric_grad(
    graph: &mut Graph,
    loss: NodeId,
    leaf: NodeId,
    eps: f64,
) -> Result<Tensor, DiffError> {
    if !graph.value(loss).is_scalar() {
        return Err(DiffError::NonScalarLoss {
            shape: graph.value(loss).shape().to_vec(),
        });
    }
    let n = graph.value(leaf).len();
    let shape = graph.value(leaf).shape().to_vec();
    let mut out = vec![0.0; n];
    for (i, slot) in out.iter_mut().enumerate() {
        let orig = graph.leaf_element(leaf, i);
        graph.set_leaf_element(leaf, i, orig + eps);
        graph.recompute_forward()?;
        let plus = graph.value(loss).item();
        graph.set_leaf_element(leaf, i, orig - eps);
        graph.recompute_forward()?;
        let minus = graph.value(loss).item();
        graph.set_leaf_element(leaf, i, orig);
        *slot = (plus - minus) / (2.0 * eps);
    }
    graph.recompute_forward()?;
    Tensor::new(shape, out)
}

/// Worst relative error between analytic and central-difference gradients,
/// reported per leaf. The comparison is
/// `max |analytic - numeric| / max(1, |numeric|)` over the leaf's elements.
pub struct GradCheckReport {
    pub per_leaf: Vec<(NodeId, f64)>,
    pub worst: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.worst < tolerance
    }
}

pub fn grad_check(
    graph: &mut Graph,
    loss: NodeId,
    leaves: &[NodeId],
    eps: f64,
) -> Result<GradCheckReport, DiffError> {
    if !graph.value(loss).is_scalar() {
        return Err(DiffError::NonScalarLoss {
            shape: graph.value(loss).shape().to_vec(),
        });
    }
    for &leaf in leaves {
        if !graph.value(leaf).all_finite() {
            return Err(DiffError::NonFinite { op: "grad_check" });
        }
    }
    let analytic = graph.backward(loss)?;
    let mut per_leaf = Vec::with_capacity(leaves.len());
    let mut worst = 0.0f64;
    for &leaf in leaves {
        let numeric = numeric_grad(graph, loss, leaf, eps)?;
        let zero;
        let a = match analytic.get(leaf) {
            Some(t) => t,
            None => {
                zero = Tensor::zeros(numeric.shape().to_vec());
                &zero
            }
        };
        let mut leaf_worst = 0.0f64;
        for (&av, &nv) in a.data().iter().zip(numeric.data()) {
            let err = (av - nv).abs() / f64::max(1.0, nv.abs());
            leaf_worst = leaf_worst.max(err);
        }
        worst = worst.max(leaf_worst);
        per_leaf.push((leaf, leaf_worst));
    }
    Ok(GradCheckReport { per_leaf, worst })
}
