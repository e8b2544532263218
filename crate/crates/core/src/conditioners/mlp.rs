use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{ParamStore, Scalar};
use crate::error::{Error, Result};

/// One affine layer. Weights are stored row-major (`output × input`) at
/// `weights`; biases at `bias`. When `prefix` is set, output unit `i` only
/// reads the first `prefix[i]` inputs (the remaining weights are masked out).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub weights: usize,
    pub bias: usize,
    pub prefix: Option<Vec<usize>>,
}

impl Dense {
    pub fn forward<S: Scalar>(&self, params: &[S], input: &[S], relu: bool) -> Vec<S> {
        debug_assert_eq!(input.len(), self.input);
        (0..self.output)
            .map(|i| {
                let n = self.prefix.as_ref().map_or(self.input, |p| p[i]);
                let row = self.weights + i * self.input;
                let v = S::affine(&params[row..row + n], &input[..n], params[self.bias + i]);
                if relu {
                    v.relu()
                } else {
                    v
                }
            })
            .collect()
    }

    /// Dense `output × input` 0/1 mask.
    pub fn mask(&self) -> Vec<Vec<u8>> {
        (0..self.output)
            .map(|i| {
                let n = self.prefix.as_ref().map_or(self.input, |p| p[i]);
                (0..self.input).map(|j| u8::from(j < n)).collect()
            })
            .collect()
    }
}

/// Uniform Glorot initialisation.
pub fn glorot<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out)
        .map(|_| rng.random_range(-a..a))
        .collect()
}

/// Fully connected ReLU network with a linear output layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// Register parameters under `name`. Hidden layers get Glorot weights;
    /// the output layer starts with zero weights and bias `out_bias`, so the
    /// initial output is `out_bias` for every input.
    pub fn build<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: &[usize],
        out_bias: Vec<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        Self::build_masked(store, name, input, hidden, out_bias, None, rng)
    }

    pub(crate) fn build_masked<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: &[usize],
        out_bias: Vec<f64>,
        prefixes: Option<Vec<Vec<usize>>>,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden.contains(&0) {
            return Err(Error::config(
                format!("{name}.hidden"),
                "hidden layer sizes must be positive",
            ));
        }
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(out_bias.len());
        let last = sizes.len() - 2;
        let mut prefixes = prefixes.map(|p| p.into_iter());
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (l, pair) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let (w, b) = if l == last {
                (vec![0.0; fan_in * fan_out], out_bias.clone())
            } else {
                (glorot(rng, fan_in, fan_out), vec![0.0; fan_out])
            };
            let weights = store.push(format!("{name}.w{l}"), w).start;
            let bias = store.push(format!("{name}.b{l}"), b).start;
            let prefix = prefixes.as_mut().and_then(|p| p.next());
            layers.push(Dense {
                input: fan_in,
                output: fan_out,
                weights,
                bias,
                prefix,
            });
        }
        Ok(Mlp { layers })
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().unwrap().output
    }

    pub fn forward<S: Scalar>(&self, params: &[S], input: &[S]) -> Vec<S> {
        let last = self.layers.len() - 1;
        let mut cur = input.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            cur = layer.forward(params, &cur, l < last);
        }
        cur
    }
}
