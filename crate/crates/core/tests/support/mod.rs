//! Central-difference gradient checker over the taped kernels, in f64.
#![allow(dead_code)]

use ussim_core::tensor::ConvGeometry;
use ussim_core::{Rng, Tape, Tensor, Var};

pub const STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-3;
/// Denominator floor so that exact zeros on both sides compare as equal.
pub const SCALE_FLOOR: f64 = 1e-6;

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    Linear,
    Conv,
    ConvTranspose,
    BatchNorm,
    Relu,
    Mse,
}

pub const KERNELS: [Kernel; 6] = [
    Kernel::Linear,
    Kernel::Conv,
    Kernel::ConvTranspose,
    Kernel::BatchNorm,
    Kernel::Relu,
    Kernel::Mse,
];

impl Kernel {
    pub fn name(self) -> &'static str {
        match self {
            Kernel::Linear => "linear",
            Kernel::Conv => "conv2d",
            Kernel::ConvTranspose => "conv_transpose2d",
            Kernel::BatchNorm => "batchnorm2d(train)",
            Kernel::Relu => "relu",
            Kernel::Mse => "mse",
        }
    }
}

/// One kernel invocation: differentiable inputs plus a fixed projection
/// that reduces the output to a scalar.
#[derive(Clone, Debug)]
pub struct Case {
    pub kernel: Kernel,
    pub inputs: Vec<Tensor<f64>>,
    pub geom: Option<ConvGeometry>,
    pub projection: Option<Tensor<f64>>,
}

impl Case {
    pub fn describe(&self) -> String {
        let shapes: Vec<String> = self.inputs.iter().map(|t| format!("{:?}", t.shape())).collect();
        match self.geom {
            Some(g) => format!("{} {} k{}x{} s{} p{}", self.kernel.name(), shapes.join(" "), g.kernel_h, g.kernel_w, g.stride, g.pad),
            None => format!("{} {}", self.kernel.name(), shapes.join(" ")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub coords: usize,
    pub worst_rel: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.worst_rel <= REL_TOL
    }
}

fn uniform_tensor(shape: &[usize], rng: &mut Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform_range(lo, hi))
}

/// Values bounded away from the ReLU kink by far more than the step.
fn off_kink_tensor(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.uniform_range(0.05, 1.0);
        if rng.uniform() < 0.5 {
            -m
        } else {
            m
        }
    })
}

fn between(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

/// Draws a random valid shape and geometry for `kernel`.
pub fn random_case(kernel: Kernel, rng: &mut Rng) -> Case {
    let case = |inputs: Vec<Tensor<f64>>, geom| Case {
        kernel,
        inputs,
        geom,
        projection: None,
    };
    let mut c = match kernel {
        Kernel::Linear => {
            let (n, fi, fo) = (between(rng, 1, 5), between(rng, 1, 12), between(rng, 1, 10));
            let x = uniform_tensor(&[n, fi], rng, -1.0, 1.0);
            let w = uniform_tensor(&[fo, fi], rng, -1.0, 1.0);
            let b = uniform_tensor(&[fo], rng, -1.0, 1.0);
            case(vec![x, w, b], None)
        }
        Kernel::Conv => loop {
            let g = ConvGeometry {
                kernel_h: between(rng, 1, 4),
                kernel_w: between(rng, 1, 4),
                stride: between(rng, 1, 3),
                pad: between(rng, 0, 2),
            };
            let (n, ci, co) = (between(rng, 1, 3), between(rng, 1, 3), between(rng, 1, 4));
            let (h, w) = (between(rng, 1, 7), between(rng, 1, 7));
            if g.conv_out("conv2d", h, w).is_err() {
                continue;
            }
            let x = uniform_tensor(&[n, ci, h, w], rng, -1.0, 1.0);
            let k = uniform_tensor(&[co, ci, g.kernel_h, g.kernel_w], rng, -1.0, 1.0);
            let b = uniform_tensor(&[co], rng, -1.0, 1.0);
            break case(vec![x, k, b], Some(g));
        },
        Kernel::ConvTranspose => loop {
            let g = ConvGeometry {
                kernel_h: between(rng, 1, 4),
                kernel_w: between(rng, 1, 4),
                stride: between(rng, 1, 3),
                pad: between(rng, 0, 1),
            };
            let (n, ci, co) = (between(rng, 1, 3), between(rng, 1, 3), between(rng, 1, 4));
            let (h, w) = (between(rng, 1, 5), between(rng, 1, 5));
            if g.transpose_out("conv_transpose2d", h, w).is_err() {
                continue;
            }
            let x = uniform_tensor(&[n, ci, h, w], rng, -1.0, 1.0);
            let k = uniform_tensor(&[ci, co, g.kernel_h, g.kernel_w], rng, -1.0, 1.0);
            let b = uniform_tensor(&[co], rng, -1.0, 1.0);
            break case(vec![x, k, b], Some(g));
        },
        Kernel::BatchNorm => loop {
            let (n, c, h, w) = (between(rng, 1, 4), between(rng, 1, 3), between(rng, 1, 4), between(rng, 1, 4));
            if n * h * w < 3 {
                continue;
            }
            let x = uniform_tensor(&[n, c, h, w], rng, -1.0, 1.0);
            let gamma = uniform_tensor(&[c], rng, 0.5, 1.5);
            let beta = uniform_tensor(&[c], rng, -0.5, 0.5);
            break case(vec![x, gamma, beta], None);
        },
        Kernel::Relu => {
            let rank = between(rng, 1, 4);
            let shape: Vec<usize> = (0..rank).map(|_| between(rng, 1, 5)).collect();
            case(vec![off_kink_tensor(&shape, rng)], None)
        }
        Kernel::Mse => {
            let rank = between(rng, 1, 4);
            let shape: Vec<usize> = (0..rank).map(|_| between(rng, 1, 5)).collect();
            let a = uniform_tensor(&shape, rng, -1.0, 1.0);
            let b = uniform_tensor(&shape, rng, -1.0, 1.0);
            case(vec![a, b], None)
        }
    };
    if kernel != Kernel::Mse {
        let n = forward_output_len(&c);
        c.projection = Some(uniform_tensor(&[1, n], rng, -1.0, 1.0));
    }
    c
}

fn apply(tape: &mut Tape<f64>, case: &Case, vars: &[Var]) -> Var {
    let geom = || case.geom.expect("conv cases carry a geometry");
    match case.kernel {
        Kernel::Linear => tape.linear(vars[0], vars[1], vars[2]).unwrap(),
        Kernel::Conv => tape.conv2d(vars[0], vars[1], vars[2], geom()).unwrap(),
        Kernel::ConvTranspose => tape.conv_transpose2d(vars[0], vars[1], vars[2], geom()).unwrap(),
        Kernel::BatchNorm => {
            let c = case.inputs[1].numel();
            let (mut rm, mut rv) = (vec![0.0; c], vec![1.0; c]);
            tape.batchnorm2d(vars[0], vars[1], vars[2], &mut rm, &mut rv, BN_MOMENTUM, BN_EPS)
                .unwrap()
        }
        Kernel::Relu => tape.relu(vars[0]).unwrap(),
        Kernel::Mse => tape.mse(vars[0], vars[1]).unwrap(),
    }
}

fn forward_output_len(case: &Case) -> usize {
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let y = apply(&mut tape, case, &vars);
    tape.value(y).numel()
}

/// Builds the scalar objective; returns it and the input variables.
fn objective(case: &Case, inputs: &[Tensor<f64>], tape: &mut Tape<f64>) -> (Var, Vec<Var>) {
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let y = apply(tape, case, &vars);
    let Some(r) = &case.projection else {
        return (y, vars);
    };
    let n = tape.value(y).numel();
    let flat = tape.reshape(y, &[1, n]).unwrap();
    let w = tape.constant(r.clone());
    let zero = tape.constant(Tensor::zeros(&[1]));
    let s = tape.linear(flat, w, zero).unwrap();
    (s, vars)
}

fn objective_value(case: &Case, inputs: &[Tensor<f64>]) -> f64 {
    let mut tape = Tape::<f64>::new();
    let (root, _) = objective(case, inputs, &mut tape);
    tape.value(root).data()[0]
}

/// Analytic gradient of every input coordinate against central differences.
pub fn check_case(case: &Case) -> CheckResult {
    let mut tape = Tape::<f64>::new();
    let (root, vars) = objective(case, &case.inputs, &mut tape);
    tape.backward(root).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; tape.value(v).numel()]))
        .collect();

    let mut worst: f64 = 0.0;
    let mut coords = 0;
    let mut inputs = case.inputs.clone();
    for (t, grad) in analytic.iter().enumerate() {
        for i in 0..grad.len() {
            let orig = inputs[t].data()[i];
            inputs[t].data_mut()[i] = orig + STEP;
            let up = objective_value(case, &inputs);
            inputs[t].data_mut()[i] = orig - STEP;
            let down = objective_value(case, &inputs);
            inputs[t].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = grad[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(SCALE_FLOOR);
            worst = worst.max(rel);
            coords += 1;
        }
    }
    CheckResult {
        coords,
        worst_rel: worst,
    }
}
