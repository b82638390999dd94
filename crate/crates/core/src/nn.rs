//! Small dense networks with hand-written backpropagation and Adam.
//!
//! Parameters of a whole network live in one flat vector so optimizers,
//! checkpoints and finite-difference checks can treat them uniformly.
//! Batches are row-major `n × dim` slices.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the output `y = f(z)`.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Elu => {
                if y > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// `c = alpha · a · b + beta · c` for strided row/column layouts.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserts above bound every index touched by the kernel.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl LayerShape {
    pub fn num_params(&self) -> usize {
        self.input * self.output + self.output
    }
}

/// Fully connected feed-forward network. Each layer stores its weight matrix
/// row-major (`output × input`) followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<LayerShape>,
    pub params: Vec<f64>,
}

/// Per-layer outputs kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct Cache {
    pub batch: usize,
    /// `outputs[0]` is the input batch; `outputs[l + 1]` the output of layer `l`.
    pub outputs: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("cache has at least the input")
    }
}

impl Mlp {
    /// Layers of widths `sizes[0] → sizes[1] → …`, `hidden` activation on all
    /// but the last layer. Weights are drawn from N(0, gain²/fan_in), the last
    /// layer's scaled by `out_gain`; biases start at zero.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        out_gain: f64,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output widths");
        let layers: Vec<LayerShape> = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerShape {
                input: w[0],
                output: w[1],
                activation: if i + 2 == sizes.len() { output } else { hidden },
            })
            .collect();
        let mut params = Vec::with_capacity(layers.iter().map(LayerShape::num_params).sum());
        for (i, l) in layers.iter().enumerate() {
            let gain = if i + 1 == layers.len() { out_gain } else { 2f64.sqrt() };
            let std = gain / (l.input as f64).sqrt();
            if std > 0.0 {
                let normal = Normal::new(0.0, std).expect("positive std");
                params.extend((0..l.input * l.output).map(|_| normal.sample(rng)));
            } else {
                params.extend(std::iter::repeat_n(0.0, l.input * l.output));
            }
            params.extend(std::iter::repeat_n(0.0, l.output));
        }
        Self { layers, params }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn offsets(&self) -> impl Iterator<Item = (usize, &LayerShape)> {
        self.layers.iter().scan(0, |off, l| {
            let o = *off;
            *off += l.num_params();
            Some((o, l))
        })
    }

    pub fn forward(&self, input: &[f64], batch: usize) -> Result<Cache> {
        assert_eq!(input.len(), batch * self.input_dim(), "input batch shape");
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(input.to_vec());
        for (li, (off, l)) in self.offsets().enumerate() {
            let x = outputs.last().unwrap();
            let w = &self.params[off..off + l.input * l.output];
            let b = &self.params[off + l.input * l.output..off + l.num_params()];
            let mut y = Vec::with_capacity(batch * l.output);
            for _ in 0..batch {
                y.extend_from_slice(b);
            }
            gemm(batch, l.input, l.output, x, (l.input, 1), w, (1, l.input), 1.0, &mut y, (l.output, 1));
            for v in y.iter_mut() {
                *v = l.activation.apply(*v);
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation { layer: li });
            }
            outputs.push(y);
        }
        Ok(Cache { batch, outputs })
    }

    /// Output batch only.
    pub fn predict(&self, input: &[f64], batch: usize) -> Result<Vec<f64>> {
        let mut c = self.forward(input, batch)?;
        Ok(c.outputs.pop().unwrap())
    }

    /// Accumulates into `grad` the parameter gradient for a loss whose
    /// gradient with respect to the network output is `grad_out`.
    pub fn backward(&self, cache: &Cache, grad_out: &[f64], grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len());
        let n = cache.batch;
        let offsets: Vec<(usize, LayerShape)> = self.offsets().map(|(o, l)| (o, *l)).collect();
        let mut delta = grad_out.to_vec();
        for (li, (off, l)) in offsets.iter().enumerate().rev() {
            let y = &cache.outputs[li + 1];
            let x = &cache.outputs[li];
            for (d, yv) in delta.iter_mut().zip(y) {
                *d *= l.activation.grad_from_output(*yv);
            }
            let (gw, gb) = grad[*off..off + l.num_params()].split_at_mut(l.input * l.output);
            // dW += δᵀ · X
            gemm(l.output, n, l.input, &delta, (1, l.output), x, (l.input, 1), 1.0, gw, (l.input, 1));
            for row in delta.chunks_exact(l.output) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if li > 0 {
                let w = &self.params[*off..off + l.input * l.output];
                let mut dx = vec![0.0; n * l.input];
                gemm(n, l.output, l.input, &delta, (l.output, 1), w, (l.input, 1), 0.0, &mut dx, (l.input, 1));
                delta = dx;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}
