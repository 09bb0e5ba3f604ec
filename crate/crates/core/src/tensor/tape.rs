use super::ops::{self, BatchNormSaved, ConvGeometry};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T: Scalar> {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    Conv2d { x: Var, k: Var, b: Var, geom: ConvGeometry },
    ConvTranspose2d { x: Var, k: Var, b: Var, geom: ConvGeometry },
    BatchNorm { x: Var, gamma: Var, beta: Var, saved: BatchNormSaved<T> },
    Relu { x: Var },
    Reshape { x: Var },
    Mse { a: Var, b: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, factor: T },
}

#[derive(Debug)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations in execution order and replays them in reverse.
///
/// Node indices are topologically sorted by construction, so the backward
/// pass is a single reverse sweep. A tape supports one backward pass.
#[derive(Debug, Default)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf (inputs, targets).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated by [`Tape::backward`], if `v` was reachable.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].value.take_grad()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, op, requires_grad))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = ops::linear_forward(self.value(x), self.value(w), self.value(b))?;
        self.push_checked("linear", y, Op::Linear { x, w, b }, &[x, w, b])
    }

    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, geom: ConvGeometry) -> Result<Var> {
        let y = ops::conv2d_forward(self.value(x), self.value(k), Some(self.value(b)), geom)?;
        self.push_checked("conv2d", y, Op::Conv2d { x, k, b, geom }, &[x, k, b])
    }

    pub fn conv_transpose2d(&mut self, x: Var, k: Var, b: Var, geom: ConvGeometry) -> Result<Var> {
        let y = ops::conv_transpose2d_forward(self.value(x), self.value(k), Some(self.value(b)), geom)?;
        self.push_checked("conv_transpose2d", y, Op::ConvTranspose2d { x, k, b, geom }, &[x, k, b])
    }

    /// Train-mode batch norm; running statistics are updated in place.
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut [T],
        running_var: &mut [T],
        momentum: T,
        eps: T,
    ) -> Result<Var> {
        let (y, saved) = ops::batchnorm2d_train(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running_mean,
            running_var,
            momentum,
            eps,
        )?;
        self.push_checked("batchnorm2d", y, Op::BatchNorm { x, gamma, beta, saved }, &[x, gamma, beta])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let y = ops::relu_forward(self.value(x));
        self.push_checked("relu", y, Op::Relu { x }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        self.push_checked("reshape", y, Op::Reshape { x }, &[x])
    }

    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let loss = ops::mse_forward(self.value(a), self.value(b))?;
        self.push_checked("mse", Tensor::scalar(loss), Op::Mse { a, b }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(
                "add",
                format!("shapes differ: {:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&p, &q)| p + q).collect();
        let y = Tensor::new(va.shape().to_vec(), data)?;
        self.push_checked("add", y, Op::Add { a, b }, &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let vx = self.value(x);
        let y = Tensor::new(vx.shape().to_vec(), vx.data().iter().map(|&v| v * factor).collect())?;
        self.push_checked("scale", y, Op::Scale { x, factor }, &[x])
    }

    /// Reverse sweep from a scalar `root`, leaving gradients on every
    /// reachable node that requires them.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let shape = self.value(root).shape().to_vec();
        if self.value(root).numel() != 1 {
            return Err(Error::NonScalarRoot { shape });
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::ONE]);

        for idx in (0..=root.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let node = &self.nodes[idx];
            let mut contributions: Vec<(Var, Vec<T>)> = Vec::new();
            match &node.op {
                Op::Leaf => {}
                Op::Linear { x, w, b } => {
                    let (dx, dw, db) = ops::linear_backward(self.value(*x), self.value(*w), &dy);
                    contributions.extend([(*x, dx), (*w, dw), (*b, db)]);
                }
                Op::Conv2d { x, k, b, geom } => {
                    let (dx, dk, db) = ops::conv2d_backward(self.value(*x), self.value(*k), &dy, *geom);
                    contributions.extend([(*x, dx), (*k, dk), (*b, db)]);
                }
                Op::ConvTranspose2d { x, k, b, geom } => {
                    let (dx, dk, db) =
                        ops::conv_transpose2d_backward(self.value(*x), self.value(*k), &dy, *geom);
                    contributions.extend([(*x, dx), (*k, dk), (*b, db)]);
                }
                Op::BatchNorm { x, gamma, beta, saved } => {
                    let (dx, dg, db) =
                        ops::batchnorm2d_backward(self.value(*x).shape(), self.value(*gamma), saved, &dy);
                    contributions.extend([(*x, dx), (*gamma, dg), (*beta, db)]);
                }
                Op::Relu { x } => {
                    contributions.push((*x, ops::relu_backward(self.value(*x), &dy)));
                }
                Op::Reshape { x } => contributions.push((*x, dy.clone())),
                Op::Mse { a, b } => {
                    let (da, db) = ops::mse_backward(self.value(*a), self.value(*b), dy[0]);
                    contributions.extend([(*a, da), (*b, db)]);
                }
                Op::Add { a, b } => contributions.extend([(*a, dy.clone()), (*b, dy.clone())]),
                Op::Scale { x, factor } => {
                    contributions.push((*x, dy.iter().map(|&g| g * *factor).collect()));
                }
            }
            for (var, g) in contributions {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &v)| *a += v),
                    slot @ None => *slot = Some(g),
                }
            }
            self.nodes[idx].value.set_grad(dy)?;
        }
        for node in &self.nodes {
            if let Some(g) = node.value.grad() {
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite { op: "backward" });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(3.0));
        let zero = tape.constant(Tensor::scalar(0.0));
        let loss = tape.mse(x, zero).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x), Some(&[6.0][..]));
    }

    #[test]
    fn unreachable_param_has_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(3.0));
        let p = tape.param(Tensor::scalar(-1.0));
        let zero = tape.constant(Tensor::scalar(0.0));
        let loss = tape.mse(x, zero).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(p).unwrap_or(&[0.0]), &[0.0]);
    }

    #[test]
    fn second_backward_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(1.0));
        let loss = tape.mse(x, x).unwrap();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::GraphConsumed)));
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::zeros(&[2, 2]));
        let y = tape.relu(x).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::NonScalarRoot { .. })));
    }

    #[test]
    fn gradients_accumulate_over_fan_out() {
        // loss = mse(x + x, 0) = 4x^2, d/dx = 8x
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(0.5));
        let y = tape.add(x, x).unwrap();
        let zero = tape.constant(Tensor::scalar(0.0));
        let loss = tape.mse(y, zero).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x), Some(&[4.0][..]));
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::scalar(f32::MAX));
        assert!(matches!(tape.scale(x, 10.0), Err(Error::NonFinite { .. })));
    }
}
