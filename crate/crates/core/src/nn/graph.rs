//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so every node's inputs have
//! smaller indices and a reverse sweep over the tape is a valid topological
//! order. Gradient accumulation follows that fixed order, which makes two
//! identical passes bit-identical.

use super::layers::{self, ConvGeometry, Padding, BCE_EPSILON};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        geo: ConvGeometry,
    },
    /// Adds a length-C vector along the last axis.
    AddChannelBias {
        input: Var,
        bias: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    GlobalAvgPool(Var),
    MatVec {
        x: Var,
        w: Var,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Sum(Var),
    Mean(Vec<Var>),
    Bce {
        p: Var,
        label: f64,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { input, kernel, .. } => vec![*input, *kernel],
            Op::AddChannelBias { input, bias } => vec![*input, *bias],
            Op::Relu(a) | Op::Sigmoid(a) | Op::Tanh(a) | Op::GlobalAvgPool(a) => vec![*a],
            Op::Scale(a, _) | Op::OneMinus(a) | Op::Sum(a) => vec![*a],
            Op::MatVec { x, w } => vec![*x, *w],
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Mean(vs) => vs.clone(),
            Op::Bce { p, .. } => vec![*p],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// A recorded forward computation.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: Padding) -> Result<Var> {
        let geo = ConvGeometry::resolve(self.value(input).shape(), self.value(kernel).shape(), stride, padding)?;
        let mut out = vec![0.0; geo.out_h * geo.out_w * geo.cout];
        layers::conv2d_forward(&geo, self.value(input).data(), self.value(kernel).data(), &mut out);
        let value = Tensor::new(geo.output_shape(), out)?;
        Ok(self.push(value, Op::Conv2d { input, kernel, geo }))
    }

    pub fn add_channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let b = self.value(bias);
        let c = *x.shape().last().unwrap();
        if b.shape() != [c] {
            return Err(Error::shape(
                "add_channel_bias",
                format!("bias [{c}]"),
                format!("{:?}", b.shape()),
            ));
        }
        let mut value = x.clone();
        for px in value.data_mut().chunks_exact_mut(c) {
            for (v, bi) in px.iter_mut().zip(b.data()) {
                *v += bi;
            }
        }
        Ok(self.push(value, Op::AddChannelBias { input, bias }))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = layers::sigmoid_tensor(self.value(a));
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let value = layers::global_avg_pool(self.value(a))?;
        Ok(self.push(value, Op::GlobalAvgPool(a)))
    }

    pub fn matvec(&mut self, x: Var, w: Var) -> Result<Var> {
        let value = layers::matvec(self.value(x), self.value(w))?;
        Ok(self.push(value, Op::MatVec { x, w }))
    }

    /// `xᵀW + b`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matvec(x, w)?;
        self.add(xw, b)
    }

    fn check_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?}"), format!("{sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("add", a, b)?;
        let mut value = self.value(a).clone();
        for (v, w) in value.data_mut().iter_mut().zip(self.value(b).data()) {
            *v += w;
        }
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("mul", a, b)?;
        let mut value = self.value(a).clone();
        for (v, w) in value.data_mut().iter_mut().zip(self.value(b).data()) {
            *v *= w;
        }
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Multiplication by a constant that is not differentiated.
    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|v| v * factor);
        self.push(value, Op::Scale(a, factor))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| 1.0 - v);
        self.push(value, Op::OneMinus(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(a))
    }

    /// Mean of one-element nodes.
    pub fn mean(&mut self, vars: &[Var]) -> Result<Var> {
        if vars.is_empty() {
            return Err(Error::Input("mean over zero nodes".into()));
        }
        let mut total = 0.0;
        for &v in vars {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(Error::shape("mean", "scalar nodes", format!("{:?}", t.shape())));
            }
            total += t.item();
        }
        let value = Tensor::scalar(total / vars.len() as f64);
        Ok(self.push(value, Op::Mean(vars.to_vec())))
    }

    /// Binary cross-entropy of a one-element probability node.
    pub fn bce(&mut self, p: Var, label: f64) -> Result<Var> {
        let pv = self.value(p);
        if pv.len() != 1 {
            return Err(Error::shape("bce", "scalar probability", format!("{:?}", pv.shape())));
        }
        let loss = layers::bce_loss(pv.item(), label)?;
        Ok(self.push(Tensor::scalar(loss), Op::Bce { p, label }))
    }

    /// Reverse sweep from a one-element `loss` node.
    ///
    /// Nodes that do not influence `loss` get no gradient entry; reading
    /// them through [`Gradients::get`] yields zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                "scalar loss",
                format!("{:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            for input in node.op.inputs() {
                if input.0 >= idx {
                    return Err(Error::Internal(format!(
                        "graph cycle: node {idx} reads node {}",
                        input.0
                    )));
                }
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes[..=loss.0].iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, geo } => {
                let kv = self.value(*kernel).data();
                acc(*input, &mut |gi| layers::conv2d_grad_input(geo, kv, g, gi));
                let iv = self.value(*input).data();
                acc(*kernel, &mut |gk| layers::conv2d_grad_kernel(geo, iv, g, gk));
            }
            Op::AddChannelBias { input, bias } => {
                acc(*input, &mut |gi| add_into(gi, g));
                let c = self.value(*bias).len();
                acc(*bias, &mut |gb| {
                    for px in g.chunks_exact(c) {
                        add_into(gb, px);
                    }
                });
            }
            Op::Relu(a) => acc(*a, &mut |ga| {
                for ((d, &gv), &y) in ga.iter_mut().zip(g).zip(out.data()) {
                    if y > 0.0 {
                        *d += gv;
                    }
                }
            }),
            Op::Sigmoid(a) => acc(*a, &mut |ga| {
                for ((d, &gv), &y) in ga.iter_mut().zip(g).zip(out.data()) {
                    *d += gv * y * (1.0 - y);
                }
            }),
            Op::Tanh(a) => acc(*a, &mut |ga| {
                for ((d, &gv), &y) in ga.iter_mut().zip(g).zip(out.data()) {
                    *d += gv * (1.0 - y * y);
                }
            }),
            Op::GlobalAvgPool(a) => {
                let c = out.len();
                let shape = self.value(*a).shape();
                let inv = 1.0 / (shape[0] * shape[1]) as f64;
                acc(*a, &mut |ga| {
                    for px in ga.chunks_exact_mut(c) {
                        for (d, &gv) in px.iter_mut().zip(g) {
                            *d += gv * inv;
                        }
                    }
                });
            }
            Op::MatVec { x, w } => {
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let m = g.len();
                acc(*x, &mut |gx| {
                    for (i, d) in gx.iter_mut().enumerate() {
                        *d += wv[i * m..(i + 1) * m].iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
                    }
                });
                acc(*w, &mut |gw| {
                    for (i, &xi) in xv.iter().enumerate() {
                        for (d, &gv) in gw[i * m..(i + 1) * m].iter_mut().zip(g) {
                            *d += xi * gv;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| {
                    for ((d, &gv), &o) in ga.iter_mut().zip(g).zip(bv) {
                        *d += gv * o;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((d, &gv), &o) in gb.iter_mut().zip(g).zip(av) {
                        *d += gv * o;
                    }
                });
            }
            Op::Scale(a, factor) => acc(*a, &mut |ga| {
                for (d, &gv) in ga.iter_mut().zip(g) {
                    *d += gv * factor;
                }
            }),
            Op::OneMinus(a) => acc(*a, &mut |ga| {
                for (d, &gv) in ga.iter_mut().zip(g) {
                    *d -= gv;
                }
            }),
            Op::Sum(a) => acc(*a, &mut |ga| {
                for d in ga.iter_mut() {
                    *d += g[0];
                }
            }),
            Op::Mean(vs) => {
                let share = g[0] / vs.len() as f64;
                for v in vs {
                    acc(*v, &mut |gv| gv[0] += share);
                }
            }
            Op::Bce { p, label } => {
                let pv = self.value(*p).item();
                // Zero slope outside the clamp window.
                if (BCE_EPSILON..=1.0 - BCE_EPSILON).contains(&pv) {
                    let d = -label / pv + (1.0 - label) / (1.0 - pv);
                    acc(*p, &mut |gp| gp[0] += g[0] * d);
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Result of [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` is disconnected.
    pub fn get(&self, v: Var) -> Tensor {
        match self.grads.get(v.0) {
            Some(Some(g)) => Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("gradient shape"),
            Some(None) => Tensor::zeros(&self.shapes[v.0]),
            None => panic!("node {} was created after the loss node", v.0),
        }
    }

    pub fn is_connected(&self, v: Var) -> bool {
        matches!(self.grads.get(v.0), Some(Some(_)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_loss_has_unit_gradient() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::scalar(0.3));
        let grads = g.backward(p).unwrap();
        assert_eq!(grads.get(p).item(), 1.0);
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(0.0));
        let y = g.sigmoid(x);
        assert_eq!(g.backward(y).unwrap().get(x).item(), 0.25);
    }

    #[test]
    fn disconnected_leaf_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let unused = g.leaf(Tensor::vector(vec![5.0, 6.0, 7.0]));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert!(!grads.is_connected(unused));
        assert_eq!(grads.get(unused), Tensor::zeros(&[3]));
        assert_eq!(grads.get(x).data(), &[1.0, 1.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = x·x + 3x at x = 2 → slope 2x + 3 = 7
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0));
        let sq = g.mul(x, x).unwrap();
        let lin = g.scale(x, 3.0);
        let loss = g.add(sq, lin).unwrap();
        assert_eq!(g.backward(loss).unwrap().get(x).item(), 7.0);
    }

    #[test]
    fn bce_gradient_is_zero_outside_clamp() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::scalar(1.0));
        let l = g.bce(p, 1.0).unwrap();
        assert_eq!(g.backward(l).unwrap().get(p).item(), 0.0);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let b = g.leaf(Tensor::vector(vec![1.0]));
        assert!(matches!(g.add(a, b), Err(Error::Shape { op: "add", .. })));
    }
}
