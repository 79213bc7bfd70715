//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records primitive operations in topological order while the
//! forward value is computed eagerly. [`backward`] replays the tape in
//! reverse, accumulating adjoints; a node consumed `k` times receives the
//! sum of its `k` upstream adjoints.
//!
//! Two primitives have deliberate non-standard gradients:
//! * `sign` has zero gradient everywhere,
//! * `clip` is straight-through: gradient 1 where the input lies inside
//!   `[lo, hi]`, 0 outside.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    /// Differentiable input.
    Leaf,
    /// Non-differentiable input; adjoints are discarded.
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Multiplication by a compile-time scalar.
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    /// `x @ w + b` with `b` broadcast across rows.
    Affine {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Log(NodeId),
    Sign(NodeId),
    Clip {
        a: NodeId,
        lo: f64,
        hi: f64,
    },
    /// Mean over the batch of per-row cross-entropy against integer labels.
    /// `probs` caches the row-wise softmax computed during the forward pass.
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Mean(NodeId),
    Sum(NodeId),
    L2NormSq(NodeId),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Recorded computation graph, replayable for gradients.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    output: Option<NodeId>,
}

/// Scalar loss plus the gradient tensor for every requested leaf.
#[derive(Debug)]
pub struct GradientResult {
    pub loss: f64,
    gradients: BTreeMap<NodeId, Tensor>,
}

impl GradientResult {
    /// Gradient for a leaf passed to [`backward`]'s `wrt` list.
    pub fn gradient(&self, leaf: NodeId) -> Option<&Tensor> {
        self.gradients.get(&leaf)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Tensor)> {
        self.gradients.iter().map(|(&k, v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.gradients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gradients.is_empty()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Forward value of any recorded node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Ids of every leaf on the tape, in registration order.
    pub fn leaves(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Leaf))
            .map(|(i, _)| NodeId(i))
            .collect()
    }

    /// Registers a non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value)
    }

    fn elementwise2(
        &mut self,
        primitive: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let v = self.nodes[a.0].value.zip(&self.nodes[b.0].value, primitive, f)?;
        Ok(self.push(op, v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise2("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise2("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise2("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Multiplication by a fixed scalar (sugar for `mul` with a constant).
    pub fn scale(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        let v = self.nodes[a.0].value.map("scale", |x| x * k)?;
        Ok(self.push(Op::Scale(a, k), v))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mismatch = || Error::ShapeMismatch {
            primitive: "matmul",
            lhs: va.shape().to_vec(),
            rhs: vb.shape().to_vec(),
        };
        if va.shape().len() != 2 || vb.shape().len() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(mismatch());
        }
        let v = matmul_raw(va, vb, false, false)?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    /// `x @ w + b` where `b` is a length-`n` bias broadcast across rows.
    /// The only broadcasting rule in the engine.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (vx, vw, vb) = (
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
        );
        if vx.shape().len() != 2 || vw.shape().len() != 2 || vx.shape()[1] != vw.shape()[0] {
            return Err(Error::ShapeMismatch {
                primitive: "affine",
                lhs: vx.shape().to_vec(),
                rhs: vw.shape().to_vec(),
            });
        }
        if vb.shape() != [vw.shape()[1]] {
            return Err(Error::ShapeMismatch {
                primitive: "affine",
                lhs: vw.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let mut prod = matmul_raw(vx, vw, false, false)?;
        let (m, n) = (prod.shape()[0], prod.shape()[1]);
        let mut data = prod.data().to_vec();
        let bias = vb.data();
        for r in 0..m {
            for c in 0..n {
                data[r * n + c] += bias[c];
            }
        }
        prod = Tensor::new(vec![m, n], data).map_err(|_| Error::NonFinite {
            primitive: "affine",
        })?;
        Ok(self.push(Op::Affine { x, w, b }, prod))
    }

    fn elementwise1(
        &mut self,
        primitive: &'static str,
        a: NodeId,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let v = self.nodes[a.0].value.map(primitive, f)?;
        Ok(self.push(op, v))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.elementwise1("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.elementwise1("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.elementwise1("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    /// Natural log; errors on non-positive inputs rather than emitting -inf.
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.elementwise1("log", a, f64::ln, Op::Log(a))
    }

    /// Elementwise sign with `sign(0) = 0`; gradient is zero everywhere.
    pub fn sign(&mut self, a: NodeId) -> Result<NodeId> {
        self.elementwise1("sign", a, crate::tensor::sign, Op::Sign(a))
    }

    /// Clamp to `[lo, hi]` with a straight-through gradient.
    pub fn clip(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!("clip: bad range [{lo}, {hi}]")));
        }
        self.elementwise1("clip", a, |x| x.clamp(lo, hi), Op::Clip { a, lo, hi })
    }

    /// Mean over rows of `-log softmax(logits)[label]`, computed with the
    /// usual max-shift for stability.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let v = &self.nodes[logits.0].value;
        if v.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                primitive: "softmax_cross_entropy",
                lhs: v.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let (m, k) = (v.shape()[0], v.shape()[1]);
        if labels.len() != m {
            return Err(Error::ShapeMismatch {
                primitive: "softmax_cross_entropy",
                lhs: v.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Config(format!(
                "softmax_cross_entropy: label {bad} out of range for {k} classes"
            )));
        }
        let mut probs = vec![0.0; m * k];
        let mut total = 0.0;
        for r in 0..m {
            let row = v.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &l in row {
                denom += (l - max).exp();
            }
            let lse = max + denom.ln();
            for (c, &l) in row.iter().enumerate() {
                probs[r * k + c] = (l - lse).exp();
            }
            total += lse - row[labels[r]];
        }
        let loss = total / m as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                primitive: "softmax_cross_entropy",
            });
        }
        let value = Tensor::scalar(loss)?;
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            value,
        ))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        if !m.is_finite() {
            return Err(Error::NonFinite { primitive: "mean" });
        }
        let value = Tensor::scalar(m)?;
        Ok(self.push(Op::Mean(a), value))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        if !s.is_finite() {
            return Err(Error::NonFinite { primitive: "sum" });
        }
        let value = Tensor::scalar(s)?;
        Ok(self.push(Op::Sum(a), value))
    }

    /// Squared Euclidean norm over all elements.
    pub fn l2_norm_sq(&mut self, a: NodeId) -> Result<NodeId> {
        let s: f64 = self.nodes[a.0].value.data().iter().map(|v| v * v).sum();
        if !s.is_finite() {
            return Err(Error::NonFinite {
                primitive: "l2_norm_sq",
            });
        }
        let value = Tensor::scalar(s)?;
        Ok(self.push(Op::L2NormSq(a), value))
    }
}

/// Runs `builder` over a fresh tape seeded with `leaves` and returns the
/// scalar loss together with the recorded tape.
pub fn forward<F>(leaves: &[Tensor], builder: F) -> Result<(f64, Tape)>
where
    F: FnOnce(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = builder(&mut tape, &ids)?;
    let shape = tape.shape(out);
    if !(shape.is_empty() || shape == [1]) {
        return Err(Error::NonScalarOutput {
            shape: shape.to_vec(),
        });
    }
    tape.output = Some(out);
    Ok((tape.value(out).data()[0], tape))
}

/// Reverse pass over a tape produced by [`forward`].
pub fn backward(tape: &Tape, wrt: &[NodeId]) -> Result<GradientResult> {
    let out = tape.output.ok_or_else(|| {
        Error::Config("backward: tape has no recorded output; use forward()".into())
    })?;
    for &id in wrt {
        let valid = id.0 < tape.nodes.len() && matches!(tape.nodes[id.0].op, Op::Leaf);
        if !valid {
            return Err(Error::UnknownLeaf { id: id.0 });
        }
    }

    let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; tape.nodes.len()];
    adjoints[out.0] = Some(vec![1.0]);

    for i in (0..=out.0).rev() {
        let grad = match adjoints[i].take() {
            Some(g) => g,
            None => continue,
        };
        let node = &tape.nodes[i];
        let send = |adjoints: &mut Vec<Option<Vec<f64>>>, to: NodeId, contrib: Vec<f64>| {
            match &mut adjoints[to.0] {
                Some(acc) => {
                    for (a, c) in acc.iter_mut().zip(&contrib) {
                        *a += c;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf | Op::Constant => {
                // Leaves keep their accumulated adjoint; restore it.
                adjoints[i] = Some(grad);
            }
            Op::Add(a, b) => {
                send(&mut adjoints, *a, grad.clone());
                send(&mut adjoints, *b, grad);
            }
            Op::Sub(a, b) => {
                send(&mut adjoints, *a, grad.clone());
                send(&mut adjoints, *b, grad.iter().map(|g| -g).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (tape.nodes[a.0].value.data(), tape.nodes[b.0].value.data());
                send(
                    &mut adjoints,
                    *a,
                    grad.iter().zip(vb).map(|(g, y)| g * y).collect(),
                );
                send(
                    &mut adjoints,
                    *b,
                    grad.iter().zip(va).map(|(g, x)| g * x).collect(),
                );
            }
            Op::Scale(a, k) => {
                send(&mut adjoints, *a, grad.iter().map(|g| g * k).collect());
            }
            Op::MatMul(a, b) => {
                // dA = G @ B^T, dB = A^T @ G
                let (va, vb) = (&tape.nodes[a.0].value, &tape.nodes[b.0].value);
                let g = Tensor::new(node.value.shape().to_vec(), grad)
                    .map_err(|_| Error::NonFinite { primitive: "matmul" })?;
                let da = matmul_raw(&g, vb, false, true)?;
                let db = matmul_raw(va, &g, true, false)?;
                send(&mut adjoints, *a, da.data().to_vec());
                send(&mut adjoints, *b, db.data().to_vec());
            }
            Op::Affine { x, w, b } => {
                let (vx, vw) = (&tape.nodes[x.0].value, &tape.nodes[w.0].value);
                let g = Tensor::new(node.value.shape().to_vec(), grad)
                    .map_err(|_| Error::NonFinite { primitive: "affine" })?;
                let dx = matmul_raw(&g, vw, false, true)?;
                let dw = matmul_raw(vx, &g, true, false)?;
                let (m, n) = (g.shape()[0], g.shape()[1]);
                let mut db = vec![0.0; n];
                for r in 0..m {
                    for c in 0..n {
                        db[c] += g.data()[r * n + c];
                    }
                }
                send(&mut adjoints, *x, dx.data().to_vec());
                send(&mut adjoints, *w, dw.data().to_vec());
                send(&mut adjoints, *b, db);
            }
            Op::Relu(a) => {
                let va = tape.nodes[a.0].value.data();
                send(
                    &mut adjoints,
                    *a,
                    grad.iter()
                        .zip(va)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect(),
                );
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                send(
                    &mut adjoints,
                    *a,
                    grad.iter().zip(y).map(|(g, &t)| g * (1.0 - t * t)).collect(),
                );
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                send(
                    &mut adjoints,
                    *a,
                    grad.iter().zip(y).map(|(g, &s)| g * s * (1.0 - s)).collect(),
                );
            }
            Op::Log(a) => {
                let va = tape.nodes[a.0].value.data();
                send(
                    &mut adjoints,
                    *a,
                    grad.iter().zip(va).map(|(g, &x)| g / x).collect(),
                );
            }
            Op::Sign(a) => {
                // sign is locally constant; gradient defined as zero everywhere.
                send(&mut adjoints, *a, vec![0.0; grad.len()]);
            }
            Op::Clip { a, lo, hi } => {
                let va = tape.nodes[a.0].value.data();
                send(
                    &mut adjoints,
                    *a,
                    grad.iter()
                        .zip(va)
                        .map(|(g, &x)| if x >= *lo && x <= *hi { *g } else { 0.0 })
                        .collect(),
                );
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let shape = tape.nodes[logits.0].value.shape();
                let (m, k) = (shape[0], shape[1]);
                let g = grad[0] / m as f64;
                let mut dl = vec![0.0; m * k];
                for r in 0..m {
                    for c in 0..k {
                        let ind = if labels[r] == c { 1.0 } else { 0.0 };
                        dl[r * k + c] = g * (probs[r * k + c] - ind);
                    }
                }
                send(&mut adjoints, *logits, dl);
            }
            Op::Mean(a) => {
                let n = tape.nodes[a.0].value.len();
                send(&mut adjoints, *a, vec![grad[0] / n as f64; n]);
            }
            Op::Sum(a) => {
                let n = tape.nodes[a.0].value.len();
                send(&mut adjoints, *a, vec![grad[0]; n]);
            }
            Op::L2NormSq(a) => {
                let va = tape.nodes[a.0].value.data();
                send(
                    &mut adjoints,
                    *a,
                    va.iter().map(|&x| 2.0 * x * grad[0]).collect(),
                );
            }
        }
    }

    let mut gradients = BTreeMap::new();
    for &id in wrt {
        let shape = tape.nodes[id.0].value.shape().to_vec();
        let data = adjoints[id.0]
            .clone()
            .unwrap_or_else(|| vec![0.0; tape.nodes[id.0].value.len()]);
        let tensor = Tensor::new(shape, data).map_err(|_| Error::NonFinite {
            primitive: "backward",
        })?;
        gradients.insert(id, tensor);
    }
    Ok(GradientResult {
        loss: tape.value(out).data()[0],
        gradients,
    })
}

/// Numerically plain sigmoid; both branches avoid overflowing `exp`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matmul_raw(a: &Tensor, b: &Tensor, transpose_a: bool, transpose_b: bool) -> Result<Tensor> {
    let (ar, ac) = (a.shape()[0], a.shape()[1]);
    let (br, bc) = (b.shape()[0], b.shape()[1]);
    let (m, ka) = if transpose_a { (ac, ar) } else { (ar, ac) };
    let (kb, n) = if transpose_b { (bc, br) } else { (br, bc) };
    debug_assert_eq!(ka, kb);
    let k = ka;
    let (da, db) = (a.data(), b.data());
    let at = |r: usize, c: usize| {
        if transpose_a {
            da[c * ac + r]
        } else {
            da[r * ac + c]
        }
    };
    let bt = |r: usize, c: usize| {
        if transpose_b {
            db[c * bc + r]
        } else {
            db[r * bc + c]
        }
    };
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        for c in 0..n {
            let mut acc = 0.0;
            for i in 0..k {
                acc += at(r, i) * bt(i, c);
            }
            out[r * n + c] = acc;
        }
    }
    Tensor::new(vec![m, n], out).map_err(|_| Error::NonFinite {
        primitive: "matmul",
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_value_and_gradient() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let (loss, tape) = forward(&[x], |t, ids| {
            let sq = t.mul(ids[0], ids[0])?;
            t.sum(sq)
        })
        .unwrap();
        assert_eq!(loss, 5.0);
        let leaf = NodeId(0);
        let grads = backward(&tape, &[leaf]).unwrap();
        assert_eq!(grads.gradient(leaf).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn log_sigmoid_at_zero() {
        let x = Tensor::new(vec![1], vec![0.0]).unwrap();
        let (loss, tape) = forward(&[x], |t, ids| {
            let s = t.sigmoid(ids[0])?;
            let l = t.log(s)?;
            t.sum(l)
        })
        .unwrap();
        assert!((loss - (-(2.0f64.ln()))).abs() < 1e-12);
        let grads = backward(&tape, &[NodeId(0)]).unwrap();
        // d/dx log(sigmoid(x)) = 1 - sigmoid(x) = 0.5 at x = 0
        assert!((grads.gradient(NodeId(0)).unwrap().data()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_names_primitive_and_shapes() {
        let a = Tensor::zeros(vec![2, 2]);
        let b = Tensor::zeros(vec![3]);
        let err = forward(&[a, b], |t, ids| t.add(ids[0], ids[1])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("add"), "{msg}");
        assert!(msg.contains("[2, 2]") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn log_of_non_positive_is_an_error() {
        let a = Tensor::new(vec![1], vec![0.0]).unwrap();
        assert!(forward(&[a], |t, ids| t.log(ids[0])).is_err());
    }

    #[test]
    fn fan_out_accumulates_adjoints() {
        // loss = sum(x + x): each consumption contributes its own adjoint.
        let x = Tensor::new(vec![2], vec![3.0, -1.0]).unwrap();
        let (_, tape) = forward(&[x], |t, ids| {
            let s = t.add(ids[0], ids[0])?;
            t.sum(s)
        })
        .unwrap();
        let grads = backward(&tape, &[NodeId(0)]).unwrap();
        assert_eq!(grads.gradient(NodeId(0)).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn sign_gradient_is_zero_and_clip_is_straight_through() {
        let x = Tensor::new(vec![3], vec![-2.0, 0.5, 2.0]).unwrap();
        let (_, tape) = forward(&[x.clone()], |t, ids| {
            let s = t.sign(ids[0])?;
            t.sum(s)
        })
        .unwrap();
        let g = backward(&tape, &[NodeId(0)]).unwrap();
        assert_eq!(g.gradient(NodeId(0)).unwrap().data(), &[0.0, 0.0, 0.0]);

        let (_, tape) = forward(&[x], |t, ids| {
            let c = t.clip(ids[0], -1.0, 1.0)?;
            t.sum(c)
        })
        .unwrap();
        let g = backward(&tape, &[NodeId(0)]).unwrap();
        assert_eq!(g.gradient(NodeId(0)).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_leaf_ids() {
        let x = Tensor::new(vec![1], vec![2.0]).unwrap();
        let (_, tape) = forward(&[x], |t, ids| t.sum(ids[0])).unwrap();
        assert!(matches!(
            backward(&tape, &[NodeId(1)]),
            Err(Error::UnknownLeaf { id: 1 })
        ));
        assert!(matches!(
            backward(&tape, &[NodeId(99)]),
            Err(Error::UnknownLeaf { id: 99 })
        ));
    }

    #[test]
    fn forward_rejects_non_scalar_output() {
        let x = Tensor::zeros(vec![2, 2]);
        assert!(matches!(
            forward(&[x], |t, ids| t.relu(ids[0])),
            Err(Error::NonScalarOutput { .. })
        ));
    }

    #[test]
    fn unconsumed_leaf_gets_zero_gradient() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let y = Tensor::new(vec![2], vec![5.0, 6.0]).unwrap();
        let (_, tape) = forward(&[x, y], |t, ids| t.sum(ids[0])).unwrap();
        let g = backward(&tape, &[NodeId(0), NodeId(1)]).unwrap();
        assert_eq!(g.gradient(NodeId(1)).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn matmul_and_affine_values() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let w = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = Tensor::new(vec![2], vec![10.0, 20.0]).unwrap();
        let (loss, tape) = forward(&[a, w, b], |t, ids| {
            let y = t.affine(ids[0], ids[1], ids[2])?;
            t.sum(y)
        })
        .unwrap();
        assert_eq!(loss, 1.0 + 2.0 + 3.0 + 4.0 + 2.0 * 30.0);
        let g = backward(&tape, &[NodeId(2)]).unwrap();
        // bias adjoint is the column sum of ones
        assert_eq!(g.gradient(NodeId(2)).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn softmax_cross_entropy_uniform_case() {
        // Two equal logits, true label 0: loss = ln 2.
        let logits = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let (loss, tape) = forward(&[logits], |t, ids| t.softmax_cross_entropy(ids[0], &[0]))
            .unwrap();
        assert!((loss - 2.0f64.ln()).abs() < 1e-12);
        let g = backward(&tape, &[NodeId(0)]).unwrap();
        let d = g.gradient(NodeId(0)).unwrap().data();
        assert!((d[0] + 0.5).abs() < 1e-12 && (d[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let logits = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(forward(&[logits.clone()], |t, ids| {
            t.softmax_cross_entropy(ids[0], &[2])
        })
        .is_err());
        assert!(forward(&[logits], |t, ids| {
            t.softmax_cross_entropy(ids[0], &[0, 1])
        })
        .is_err());
    }
}
