use std::io::{Read, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::io_util::{read_f32, read_u32, write_f32, write_u32};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fully connected layer, weights row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], y: &mut [f64]) {
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            *yo = self.bias[o] + dot(row, x);
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Multilayer perceptron with a shared hidden activation and a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub hidden: Activation,
}

/// Activations of every layer for one input, input first, raw output last.
#[derive(Debug, Clone, Default)]
pub struct MlpTrace {
    pub acts: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl MlpGrad {
    pub fn clear(&mut self) {
        for (w, b) in &mut self.layers {
            w.fill(0.0);
            b.fill(0.0);
        }
    }
}

impl Mlp {
    pub fn zeros(widths: &[usize], hidden: Activation) -> Self {
        Mlp {
            layers: widths.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            hidden,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], hidden: Activation, rng: &mut R) -> Self {
        let mut mlp = Self::zeros(widths, hidden);
        for layer in &mut mlp.layers {
            let bound = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weight {
                *w = rng.gen_range(-bound..bound);
            }
        }
        mlp
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn zero_grad(&self) -> MlpGrad {
        MlpGrad {
            layers: self
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    /// Raw (pre-clip) output. The trace is reused across calls to avoid reallocation.
    pub fn forward(&self, input: &[f64], trace: &mut MlpTrace) -> Result<()> {
        if input.len() != self.input_width() {
            return Err(Error::Shape(format!("mlp input width {} != {}", input.len(), self.input_width())));
        }
        let n = self.layers.len();
        trace.acts.resize(n + 1, Vec::new());
        trace.acts[0].clear();
        trace.acts[0].extend_from_slice(input);
        for (i, layer) in self.layers.iter().enumerate() {
            let (done, rest) = trace.acts.split_at_mut(i + 1);
            let y = &mut rest[0];
            y.resize(layer.outputs, 0.0);
            layer.forward(&done[i], y);
            if i + 1 < n {
                for v in y.iter_mut() {
                    *v = self.hidden.apply(*v);
                }
            }
        }
        Ok(())
    }

    pub fn output<'a>(&self, trace: &'a MlpTrace) -> &'a [f64] {
        &trace.acts[self.layers.len()]
    }

    /// Accumulates parameter gradients for `d_out` (gradient on the raw output) and writes
    /// the gradient with respect to the input into `d_in`.
    pub fn backward(&self, trace: &MlpTrace, d_out: &[f64], grad: &mut MlpGrad, d_in: &mut Vec<f64>) -> Result<()> {
        let n = self.layers.len();
        if trace.acts.len() != n + 1 {
            return Err(Error::MissingCache("mlp activations"));
        }
        let mut dy: Vec<f64> = d_out.to_vec();
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let x = &trace.acts[i];
            let (gw, gb) = &mut grad.layers[i];
            let mut dx = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let g = dy[o];
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                let row = &layer.weight[o * layer.inputs..(o + 1) * layer.inputs];
                let grow = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for k in 0..layer.inputs {
                    grow[k] += g * x[k];
                    dx[k] += g * row[k];
                }
            }
            if i > 0 {
                for (d, &a) in dx.iter_mut().zip(x) {
                    *d *= self.hidden.derivative_from_output(a);
                }
            }
            dy = dx;
        }
        *d_in = dy;
        Ok(())
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    /// Layer-shape header then little-endian f32 weights and biases.
    pub fn write_to(&self, w: &mut dyn Write) -> Result<()> {
        write_u32(w, self.layers.len() as u32)?;
        write_u32(w, matches!(self.hidden, Activation::Sigmoid) as u32)?;
        for l in &self.layers {
            write_u32(w, l.inputs as u32)?;
            write_u32(w, l.outputs as u32)?;
        }
        for l in &self.layers {
            for &v in l.weight.iter().chain(&l.bias) {
                write_f32(w, v as f32)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut dyn Read) -> Result<Self> {
        let n = read_u32(r)? as usize;
        if n == 0 || n > 16 {
            return Err(Error::Checkpoint(format!("implausible layer count {n}")));
        }
        let hidden = if read_u32(r)? == 1 {
            Activation::Sigmoid
        } else {
            Activation::Relu
        };
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let i = read_u32(r)? as usize;
            let o = read_u32(r)? as usize;
            layers.push(Layer::zeros(i, o));
        }
        for w in layers.windows(2) {
            if w[0].outputs != w[1].inputs {
                return Err(Error::Checkpoint("mlp layer widths do not chain".into()));
            }
        }
        for l in &mut layers {
            for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *v = read_f32(r)? as f64;
            }
        }
        Ok(Mlp { layers, hidden })
    }
}
