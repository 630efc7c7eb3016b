//! Reverse-mode tape over [`Tensor3<f64>`].
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and backward is a single reverse sweep. Every node keeps
//! a snapshot of its value; nothing on the tape is mutated after it is
//! recorded.

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::{self, kernels, BinaryOp, ConvLayer, Shape, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Convolution parameters living on a tape.
#[derive(Debug, Clone, Copy)]
pub struct TapeLayer {
    pub weight: Var,
    pub bias: Var,
    pub kernel: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Binary(BinaryOp, Var, Var),
    Relu(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    Conv { input: Var, weight: Var, bias: Var, kernel: usize },
    MeanBroadcast(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor3<f64>,
    /// Whether any leaf is upstream of this node.
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor3<f64>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    pub fn layer(&mut self, layer: &ConvLayer<f64>) -> TapeLayer {
        TapeLayer {
            weight: self.leaf(layer.weight_tensor()),
            bias: self.leaf(layer.bias_tensor()),
            kernel: layer.kernel(),
        }
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor3::scalar(self.val(a).sum());
        self.push(Op::Sum(a), v, self.tracked(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = Tensor3::scalar(self.val(a).mean());
        self.push(Op::Mean(a), v, self.tracked(a))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor3<f64>) -> Result<Var> {
        let t = self.constant(target.clone());
        let diff = self.sub(&pred, &t)?;
        let sq = self.mul(&diff, &diff)?;
        Ok(self.mean(sq))
    }

    /// Smallest `|x|` fed into any tracked ReLU; `None` if no ReLU was recorded.
    ///
    /// Finite-difference checks are only meaningful when this exceeds the step.
    pub fn kink_margin(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) if n.tracked => {
                    Some(self.val(a).data().iter().fold(f64::INFINITY, |m, x| m.min(x.abs())))
                }
                _ => None,
            })
            .reduce(f64::min)
    }

    fn push(&mut self, op: Op, value: Tensor3<f64>, tracked: bool) -> Var {
        self.nodes.push(Node { op, value, tracked });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor3<f64> {
        &self.nodes[v.0].value
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Gradient of a scalar `loss` with respect to every leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_shape = self.val(loss).shape();
        if loss_shape != Shape::scalar() {
            return Err(Error::NonScalarLoss(loss_shape));
        }
        let mut grads: Vec<Option<Tensor3<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor3::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Constant => {}
                Op::Binary(op, a, b) => {
                    let (ga, gb) = match op {
                        BinaryOp::Add => (g.clone(), g),
                        BinaryOp::Sub => (g.clone(), g.scale(-1.0)),
                        BinaryOp::Mul => (g.mul(self.val(*b))?, g.mul(self.val(*a))?),
                    };
                    self.accumulate(&mut grads, *a, ga)?;
                    self.accumulate(&mut grads, *b, gb)?;
                }
                Op::Relu(a) => {
                    let x = self.val(*a);
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect();
                    self.accumulate(&mut grads, *a, Tensor3::from_vec(x.shape(), data)?)?;
                }
                Op::Softmax(a) => {
                    let s = &node.value;
                    let shape = s.shape();
                    let plane = shape.plane();
                    let mut dot = vec![0.0; plane];
                    for c in 0..shape.channels {
                        for ((d, &gv), &sv) in dot.iter_mut().zip(g.channel(c)).zip(s.channel(c)) {
                            *d += gv * sv;
                        }
                    }
                    let mut data = Vec::with_capacity(shape.len());
                    for c in 0..shape.channels {
                        for ((&gv, &sv), &d) in g.channel(c).iter().zip(s.channel(c)).zip(&dot) {
                            data.push(sv * (gv - d));
                        }
                    }
                    self.accumulate(&mut grads, *a, Tensor3::from_vec(shape, data)?)?;
                }
                Op::Concat(parts) => {
                    let plane = g.shape().plane();
                    let mut offset = 0;
                    for p in parts {
                        let shape = self.val(*p).shape();
                        let slice = g.data()[offset..offset + shape.channels * plane].to_vec();
                        offset += shape.channels * plane;
                        self.accumulate(&mut grads, *p, Tensor3::from_vec(shape, slice)?)?;
                    }
                }
                Op::Conv { input, weight, bias, kernel } => {
                    let x = self.val(*input);
                    let w = self.val(*weight);
                    let mut gx = vec![0.0; x.shape().len()];
                    let mut gw = vec![0.0; w.shape().len()];
                    let mut gb = vec![0.0; w.channels()];
                    kernels::conv_backward(
                        x.data(),
                        x.shape(),
                        w.data(),
                        w.channels(),
                        *kernel,
                        g.data(),
                        &mut gx,
                        &mut gw,
                        &mut gb,
                    );
                    self.accumulate(&mut grads, *input, Tensor3::from_vec(x.shape(), gx)?)?;
                    self.accumulate(&mut grads, *weight, Tensor3::from_vec(w.shape(), gw)?)?;
                    let bshape = self.val(*bias).shape();
                    self.accumulate(&mut grads, *bias, Tensor3::from_vec(bshape, gb)?)?;
                }
                Op::MeanBroadcast(a) => {
                    let shape = self.val(*a).shape();
                    let each = g.sum() / shape.len() as f64;
                    self.accumulate(&mut grads, *a, Tensor3::full(shape, each))?;
                }
                Op::Sum(a) => {
                    let shape = self.val(*a).shape();
                    self.accumulate(&mut grads, *a, Tensor3::full(shape, g.data()[0]))?;
                }
                Op::Mean(a) => {
                    let shape = self.val(*a).shape();
                    let each = g.data()[0] / shape.len() as f64;
                    self.accumulate(&mut grads, *a, Tensor3::full(shape, each))?;
                }
            }
        }

        let leaves = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Leaf))
            .map(|(i, n)| {
                let g = grads[i].take().unwrap_or_else(|| Tensor3::zeros(n.value.shape()));
                (Var(i), g)
            })
            .collect();
        Ok(Gradients { leaves })
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Tensor3<f64>>],
        target: Var,
        g: Tensor3<f64>,
    ) -> Result<()> {
        if !self.tracked(target) {
            return Ok(());
        }
        grads[target.0] = Some(match grads[target.0].take() {
            Some(prev) => prev.add(&g)?,
            None => g,
        });
        Ok(())
    }
}

impl Graph for Tape {
    type Elem = f64;
    type Var = Var;
    type Layer = TapeLayer;

    fn constant(&mut self, value: Tensor3<f64>) -> Var {
        self.push(Op::Constant, value, false)
    }

    fn value<'a>(&'a self, var: &'a Var) -> &'a Tensor3<f64> {
        self.val(*var)
    }

    fn binary(&mut self, op: BinaryOp, a: &Var, b: &Var) -> Result<Var> {
        let v = tensor::elementwise(op, self.val(*a), self.val(*b))?;
        let tracked = self.tracked(*a) || self.tracked(*b);
        Ok(self.push(Op::Binary(op, *a, *b), v, tracked))
    }

    fn relu(&mut self, a: &Var) -> Var {
        let v = tensor::relu(self.val(*a));
        self.push(Op::Relu(*a), v, self.tracked(*a))
    }

    fn channel_softmax(&mut self, a: &Var) -> Var {
        let v = tensor::channel_softmax(self.val(*a));
        self.push(Op::Softmax(*a), v, self.tracked(*a))
    }

    fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor3<f64>> = parts.iter().map(|p| self.val(*p)).collect();
        let v = tensor::concat_channels(&refs)?;
        let tracked = parts.iter().any(|p| self.tracked(*p));
        Ok(self.push(Op::Concat(parts.to_vec()), v, tracked))
    }

    fn conv(&mut self, input: &Var, layer: &TapeLayer) -> Result<Var> {
        let x = self.val(*input);
        let w = self.val(layer.weight);
        let conv = ConvLayer::from_tensors(w, self.val(layer.bias))?;
        let v = tensor::conv2d_same(x, &conv)?;
        let tracked = self.tracked(*input) || self.tracked(layer.weight) || self.tracked(layer.bias);
        Ok(self.push(
            Op::Conv {
                input: *input,
                weight: layer.weight,
                bias: layer.bias,
                kernel: layer.kernel,
            },
            v,
            tracked,
        ))
    }

    fn mean_broadcast(&mut self, a: &Var) -> Var {
        let x = self.val(*a);
        let v = Tensor3::full(x.shape(), x.mean());
        self.push(Op::MeanBroadcast(*a), v, self.tracked(*a))
    }
}

/// Gradients of every leaf on a tape, zero for leaves the loss does not reach.
#[derive(Debug, Clone)]
pub struct Gradients {
    leaves: Vec<(Var, Tensor3<f64>)>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor3<f64>> {
        self.leaves.iter().find(|(v, _)| *v == var).map(|(_, g)| g)
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor3<f64>)> {
        self.leaves.iter().map(|(v, g)| (*v, g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape, rng: &mut impl Rng) -> Tensor3<f64> {
        Tensor3::from_fn(shape, |_, _, _| {
            // keep clear of the ReLU kink
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) { v } else { -v }
        })
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let shape = Shape::new(2, 3, 4);
        let a = tape.leaf(Tensor3::full(shape, 0.3));
        let loss = tape.sum(a);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(a).unwrap(), &Tensor3::ones(shape));
    }

    #[test]
    fn dead_relu_has_zero_gradient() {
        let mut tape = Tape::new();
        let shape = Shape::new(1, 2, 2);
        let a = tape.leaf(Tensor3::full(shape, -0.5));
        let r = tape.relu(&a);
        let loss = tape.sum(r);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(a).unwrap(), &Tensor3::zeros(shape));
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor3::zeros(Shape::new(1, 1, 3)));
        let r = tape.relu(&a);
        let loss = tape.sum(r);
        assert_eq!(tape.backward(loss).unwrap().get(a).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn product_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = Shape::new(2, 2, 3);
        let (av, bv) = (random(shape, &mut rng), random(shape, &mut rng));
        let mut tape = Tape::new();
        let a = tape.leaf(av.clone());
        let b = tape.leaf(bv.clone());
        let p = tape.mul(&a, &b).unwrap();
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(a).unwrap(), &bv);
        assert_eq!(g.get(b).unwrap(), &av);
    }

    #[test]
    fn loss_gradient_wrt_itself_is_one() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor3::scalar(4.0));
        let g = tape.backward(a).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[1.0]);
    }

    #[test]
    fn rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor3::ones(Shape::new(1, 2, 1)));
        assert!(matches!(tape.backward(a), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn unreached_leaves_get_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor3::ones(Shape::new(1, 1, 2)));
        let b = tape.leaf(Tensor3::ones(Shape::new(1, 2, 2)));
        let loss = tape.sum(a);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.get(b).unwrap(), &Tensor3::zeros(Shape::new(1, 2, 2)));
    }

    #[test]
    fn softmax_jacobian_rows_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let shape = Shape::new(5, 3, 3);
            let x = random(shape, &mut rng).scale(4.0);
            let cot = random(shape, &mut rng);
            let mut tape = Tape::new();
            let a = tape.leaf(x);
            let s = tape.channel_softmax(&a);
            let c = tape.constant(cot);
            let p = tape.mul(&s, &c).unwrap();
            let loss = tape.sum(p);
            let g = tape.backward(loss).unwrap();
            let ga = g.get(a).unwrap();
            for loc in 0..shape.plane() {
                let total: f64 = (0..shape.channels).map(|ch| ga.data()[ch * shape.plane() + loc]).sum();
                assert!(total.abs() < 1e-10, "{total}");
            }
        }
    }

    fn check(label: &str, shapes: &[Shape], f: impl Fn(&mut Tape, &[Var]) -> Result<Var> + Sync) {
        let mut rng = ChaCha8Rng::seed_from_u64(label.len() as u64);
        let params: Vec<_> = shapes.iter().map(|&s| random(s, &mut rng)).collect();
        let report = finite_difference_check(label, f, &params, 1e-5).unwrap();
        assert!(report.max_rel_err < 1e-4, "{label}: {report:?}");
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let s = Shape::new(3, 4, 4);
        check("add", &[s, s], |t, v| {
            let x = t.add(&v[0], &v[1])?;
            let y = t.mul(&x, &x)?;
            Ok(t.sum(y))
        });
        check("sub", &[s, s], |t, v| {
            let x = t.sub(&v[0], &v[1])?;
            let y = t.mul(&x, &x)?;
            Ok(t.mean(y))
        });
        check("mul", &[s, s], |t, v| {
            let x = t.mul(&v[0], &v[1])?;
            let y = t.mul(&x, &v[0])?;
            Ok(t.sum(y))
        });
        check("relu", &[s, s], |t, v| {
            let r = t.relu(&v[0]);
            let y = t.mul(&r, &v[1])?;
            Ok(t.sum(y))
        });
        check("softmax", &[s, s], |t, v| {
            let sm = t.channel_softmax(&v[0]);
            let y = t.mul(&sm, &v[1])?;
            Ok(t.sum(y))
        });
        check("concat", &[s, Shape::new(2, 4, 4), Shape::new(5, 4, 4)], |t, v| {
            let c = t.concat(&[v[0], v[1]])?;
            let y = t.mul(&c, &v[2])?;
            Ok(t.sum(y))
        });
        check("mean_broadcast", &[s, s], |t, v| {
            let m = t.mean_broadcast(&v[0]);
            let y = t.mul(&m, &v[1])?;
            Ok(t.sum(y))
        });
        for k in [1usize, 3] {
            let shapes = [s, Shape::new(2, 3, k * k), Shape::new(2, 1, 1), Shape::new(2, 4, 4)];
            check(&format!("conv{k}"), &shapes, |t, v| {
                let layer = TapeLayer { weight: v[1], bias: v[2], kernel: k };
                let y = t.conv(&v[0], &layer)?;
                let z = t.mul(&y, &v[3])?;
                Ok(t.sum(z))
            });
        }
    }

    #[test]
    fn kink_margin_reports_smallest_relu_input() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor3::from_vec(Shape::new(1, 1, 3), vec![-0.5, 0.01, 2.0]).unwrap());
        assert_eq!(tape.kink_margin(), None);
        tape.relu(&a);
        assert_eq!(tape.kink_margin(), Some(0.01));
    }
}
