use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::ops;
use crate::tensor::{ConvGeometry, Tape, Tensor, Var};

pub const BN_MOMENTUM: f32 = 0.1;
pub const BN_EPS: f32 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm2d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    Conv,
    Transpose,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Linear {
        weight: Tensor,
        bias: Tensor,
        relu: bool,
    },
    /// Per-sample reshape of a flat feature vector into `[C, H, W]`.
    Unflatten { shape: [usize; 3] },
    /// Per-sample flatten of `[C, H, W]`.
    Flatten,
    Conv {
        kind: ConvKind,
        geom: ConvGeometry,
        weight: Tensor,
        bias: Tensor,
        relu: bool,
        bn: Option<BatchNorm2d>,
    },
}

fn uniform_tensor(shape: &[usize], bound: f64, rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform_range(-bound, bound) as f32)
}

impl Layer {
    pub fn linear(inp: usize, out: usize, relu: bool, rng: &mut Rng) -> Self {
        Layer::Linear {
            weight: uniform_tensor(&[out, inp], 1.0 / (inp as f64).sqrt(), rng),
            bias: Tensor::zeros(&[out]),
            relu,
        }
    }

    /// Conv block: convolution, then optional ReLU, then optional BatchNorm.
    /// The init bound uses the number of inputs feeding one output value.
    pub fn conv(
        kind: ConvKind,
        cin: usize,
        cout: usize,
        geom: ConvGeometry,
        relu: bool,
        bn: bool,
        rng: &mut Rng,
    ) -> Self {
        let k2 = geom.kernel_h * geom.kernel_w;
        let (shape, fan_in) = match kind {
            ConvKind::Conv => ([cout, cin, geom.kernel_h, geom.kernel_w], cin * k2),
            ConvKind::Transpose => (
                [cin, cout, geom.kernel_h, geom.kernel_w],
                (cin * k2 / (geom.stride * geom.stride)).max(1),
            ),
        };
        Layer::Conv {
            kind,
            geom,
            weight: uniform_tensor(&shape, 1.0 / (fan_in as f64).sqrt(), rng),
            bias: Tensor::zeros(&[cout]),
            relu,
            bn: bn.then(|| BatchNorm2d::new(cout)),
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, Layer::Conv { .. })
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Layer::Linear { .. })
    }

    /// Trainable tensors in a fixed order: weight, bias, gamma, beta.
    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Linear { weight, bias, .. } => vec![weight, bias],
            Layer::Conv { weight, bias, bn, .. } => {
                let mut v = vec![weight, bias];
                if let Some(bn) = bn {
                    v.extend([&bn.gamma, &bn.beta]);
                }
                v
            }
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Linear { weight, bias, .. } => vec![weight, bias],
            Layer::Conv { weight, bias, bn, .. } => {
                let mut v = vec![weight, bias];
                if let Some(bn) = bn {
                    v.extend([&mut bn.gamma, &mut bn.beta]);
                }
                v
            }
            _ => Vec::new(),
        }
    }

    /// `(name, tensor)` for every parameter and running statistic.
    pub fn state(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Layer::Linear { weight, bias, .. } => vec![("weight", weight), ("bias", bias)],
            Layer::Conv { weight, bias, bn, .. } => {
                let mut v = vec![("weight", weight), ("bias", bias)];
                if let Some(bn) = bn {
                    v.extend([
                        ("bn.gamma", &bn.gamma),
                        ("bn.beta", &bn.beta),
                        ("bn.running_mean", &bn.running_mean),
                        ("bn.running_var", &bn.running_var),
                    ]);
                }
                v
            }
            _ => Vec::new(),
        }
    }

    pub fn state_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match self {
            Layer::Linear { weight, bias, .. } => vec![("weight", weight), ("bias", bias)],
            Layer::Conv { weight, bias, bn, .. } => {
                let mut v = vec![("weight", weight), ("bias", bias)];
                if let Some(bn) = bn {
                    v.extend([
                        ("bn.gamma", &mut bn.gamma),
                        ("bn.beta", &mut bn.beta),
                        ("bn.running_mean", &mut bn.running_mean),
                        ("bn.running_var", &mut bn.running_var),
                    ]);
                }
                v
            }
            _ => Vec::new(),
        }
    }

    fn forward_eval(&self, x: Tensor) -> Result<Tensor> {
        match self {
            Layer::Linear { weight, bias, relu } => {
                let y = ops::linear_forward(&x, weight, bias)?;
                Ok(if *relu { ops::relu_forward(&y) } else { y })
            }
            Layer::Unflatten { shape } => {
                let b = x.shape()[0];
                x.reshape(&[b, shape[0], shape[1], shape[2]])
            }
            Layer::Flatten => {
                let b = x.shape()[0];
                let n = x.numel() / b;
                x.reshape(&[b, n])
            }
            Layer::Conv {
                kind,
                geom,
                weight,
                bias,
                relu,
                bn,
            } => {
                let mut y = match kind {
                    ConvKind::Conv => ops::conv2d_forward(&x, weight, Some(bias), *geom)?,
                    ConvKind::Transpose => ops::conv_transpose2d_forward(&x, weight, Some(bias), *geom)?,
                };
                if *relu {
                    y = ops::relu_forward(&y);
                }
                if let Some(bn) = bn {
                    y = ops::batchnorm2d_eval(
                        &y,
                        &bn.gamma,
                        &bn.beta,
                        bn.running_mean.data(),
                        bn.running_var.data(),
                        BN_EPS,
                    )?;
                }
                Ok(y)
            }
        }
    }

    /// Records the layer on `tape`; batch norm runs on batch statistics
    /// and updates its running estimates. Parameter vars are appended to
    /// `params` in [`Layer::params`] order.
    fn forward_train(&mut self, tape: &mut Tape, x: Var, params: &mut Vec<Var>) -> Result<Var> {
        match self {
            Layer::Linear { weight, bias, relu } => {
                let w = tape.param(weight.clone());
                let b = tape.param(bias.clone());
                params.extend([w, b]);
                let y = tape.linear(x, w, b)?;
                if *relu {
                    tape.relu(y)
                } else {
                    Ok(y)
                }
            }
            Layer::Unflatten { shape } => {
                let b = tape.value(x).shape()[0];
                tape.reshape(x, &[b, shape[0], shape[1], shape[2]])
            }
            Layer::Flatten => {
                let v = tape.value(x);
                let b = v.shape()[0];
                let n = v.numel() / b;
                tape.reshape(x, &[b, n])
            }
            Layer::Conv {
                kind,
                geom,
                weight,
                bias,
                relu,
                bn,
            } => {
                let w = tape.param(weight.clone());
                let b = tape.param(bias.clone());
                params.extend([w, b]);
                let mut y = match kind {
                    ConvKind::Conv => tape.conv2d(x, w, b, *geom)?,
                    ConvKind::Transpose => tape.conv_transpose2d(x, w, b, *geom)?,
                };
                if *relu {
                    y = tape.relu(y)?;
                }
                if let Some(bn) = bn {
                    let g = tape.param(bn.gamma.clone());
                    let be = tape.param(bn.beta.clone());
                    params.extend([g, be]);
                    y = tape.batchnorm2d(
                        y,
                        g,
                        be,
                        bn.running_mean.data_mut(),
                        bn.running_var.data_mut(),
                        BN_MOMENTUM,
                        BN_EPS,
                    )?;
                }
                Ok(y)
            }
        }
    }
}

/// Ordered stack of layers.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn forward_eval(&self, x: Tensor) -> Result<Tensor> {
        self.forward_eval_prefix(x, self.layers.len())
    }

    /// Eval-mode forward through the first `n` layers only.
    pub fn forward_eval_prefix(&self, x: Tensor, n: usize) -> Result<Tensor> {
        self.layers[..n].iter().try_fold(x, |x, l| l.forward_eval(x))
    }

    pub fn forward_train(&mut self, tape: &mut Tape, x: Var, params: &mut Vec<Var>) -> Result<Var> {
        let mut y = x;
        for layer in &mut self.layers {
            y = layer.forward_train(tape, y, params)?;
        }
        Ok(y)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    /// Same layer kinds, geometries, activations and tensor shapes.
    pub fn same_structure(&self, other: &Sequential) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| match (a, b) {
                (Layer::Linear { weight: w1, relu: r1, .. }, Layer::Linear { weight: w2, relu: r2, .. }) => {
                    w1.shape() == w2.shape() && r1 == r2
                }
                (Layer::Unflatten { shape: s1 }, Layer::Unflatten { shape: s2 }) => s1 == s2,
                (Layer::Flatten, Layer::Flatten) => true,
                (
                    Layer::Conv { kind: k1, geom: g1, weight: w1, relu: r1, bn: b1, .. },
                    Layer::Conv { kind: k2, geom: g2, weight: w2, relu: r2, bn: b2, .. },
                ) => k1 == k2 && g1 == g2 && w1.shape() == w2.shape() && r1 == r2 && b1.is_some() == b2.is_some(),
                _ => false,
            })
    }

    pub fn state(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.state()
                    .into_iter()
                    .map(move |(name, t)| (format!("{prefix}.{i}.{name}"), t))
            })
            .collect()
    }

    pub fn state_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                l.state_mut()
                    .into_iter()
                    .map(move |(name, t)| (format!("{prefix}.{i}.{name}"), t))
            })
            .collect()
    }

    /// Copies every parameter and running statistic from `other`, which
    /// must have the identical layer structure.
    pub fn copy_state_from(&mut self, other: &Sequential) -> Result<()> {
        if !self.same_structure(other) {
            return Err(Error::Structure("layer stacks differ in kind, geometry or shape".into()));
        }
        let src = other.state("");
        let mut dst = self.state_mut("");
        if src.len() != dst.len() {
            return Err(Error::Structure(format!(
                "{} tensors vs {} tensors",
                dst.len(),
                src.len()
            )));
        }
        for ((dn, d), (sn, s)) in dst.iter().zip(&src) {
            if dn != sn || d.shape() != s.shape() {
                return Err(Error::Structure(format!(
                    "{dn} {:?} vs {sn} {:?}",
                    d.shape(),
                    s.shape()
                )));
            }
        }
        for ((_, d), (_, s)) in dst.iter_mut().zip(src) {
            d.data_mut().copy_from_slice(s.data());
        }
        Ok(())
    }
}
