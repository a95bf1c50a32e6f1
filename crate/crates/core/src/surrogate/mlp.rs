//! Small fully connected network (at most two hidden layers) trained with
//! minibatch Adam for a fixed number of epochs.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn grad_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => (a > 0.0) as u8 as f64,
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// L2 penalty strength.
    pub alpha: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            hidden: vec![64],
            activation: Activation::Relu,
            alpha: 1e-4,
            epochs: 200,
            learning_rate: 1e-3,
            batch_size: 32,
        }
    }
}

impl MlpParams {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.len() > 2 || self.hidden.contains(&0) {
            return Err(Error::invalid(
                "hidden",
                "one or two non-empty hidden layers",
            ));
        }
        if !(self.alpha >= 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::invalid(
                "alpha",
                "alpha ≥ 0 and learning_rate > 0 required",
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid(
                "epochs",
                "epochs and batch_size must be ≥ 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs × inputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub activation: Activation,
    /// Hidden layers followed by the linear output layer.
    pub layers: Vec<Layer>,
}

impl Mlp {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            a = l
                .weights
                .chunks(l.inputs)
                .zip(&l.bias)
                .map(|(row, b)| {
                    let z = b + row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>();
                    if li == last {
                        z
                    } else {
                        self.activation.apply(z)
                    }
                })
                .collect();
        }
        a
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() < 2 || self.layers.len() > 3 {
            return Err(Error::invalid("regressor.layers", "expected 2 or 3 layers"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::invalid(
                    format!("regressor.layers[{i}]"),
                    "dimension mismatch",
                ));
            }
            if i > 0 && self.layers[i - 1].outputs != l.inputs {
                return Err(Error::invalid(
                    format!("regressor.layers[{i}]"),
                    "layers do not chain",
                ));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::invalid(
                    format!("regressor.layers[{i}]"),
                    "non-finite weight",
                ));
            }
        }
        Ok(())
    }
}

struct Adam {
    m: Vec<DMatrix<f64>>,
    v: Vec<DMatrix<f64>>,
    t: i32,
}

pub fn fit_mlp(x: &[Vec<f64>], y: &[Vec<f64>], params: &MlpParams, seed: u64) -> Result<Mlp> {
    params.validate()?;
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::invalid(
            "training_set",
            "need matching, non-empty X and Y",
        ));
    }
    let n = x.len();
    let d_in = x[0].len();
    let d_out = y[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut sizes = vec![d_in];
    sizes.extend(&params.hidden);
    sizes.push(d_out);
    // weights stored as (inputs + 1) × outputs with the bias in the last row
    let mut params_w: Vec<DMatrix<f64>> = sizes
        .windows(2)
        .map(|w| {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            DMatrix::from_fn(w[0] + 1, w[1], |i, _| {
                if i == w[0] {
                    0.0
                } else {
                    rng.random_range(-limit..limit)
                }
            })
        })
        .collect();
    let mut adam = Adam {
        m: params_w
            .iter()
            .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
            .collect(),
        v: params_w
            .iter()
            .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
            .collect(),
        t: 0,
    };
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let act = params.activation;
    let n_layers = params_w.len();

    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(params.batch_size) {
            let bs = batch.len();
            // activations with a trailing ones column for the bias
            let mut acts: Vec<DMatrix<f64>> = Vec::with_capacity(n_layers + 1);
            acts.push(DMatrix::from_fn(bs, d_in + 1, |r, c| {
                if c == d_in {
                    1.0
                } else {
                    x[batch[r]][c]
                }
            }));
            for (li, w) in params_w.iter().enumerate() {
                let mut z = &acts[li] * w;
                if li + 1 < n_layers {
                    z.apply(|v| *v = act.apply(*v));
                    let cols = z.ncols();
                    z = z.insert_column(cols, 1.0);
                }
                acts.push(z);
            }
            let out = &acts[n_layers];
            let mut delta =
                DMatrix::from_fn(bs, d_out, |r, c| (out[(r, c)] - y[batch[r]][c]) / bs as f64);

            adam.t += 1;
            let lr_t = params.learning_rate * (1.0 - f64::powi(b2, adam.t)).sqrt()
                / (1.0 - f64::powi(b1, adam.t));
            for li in (0..n_layers).rev() {
                let a_prev = &acts[li];
                let mut grad = a_prev.transpose() * &delta;
                let rows = params_w[li].nrows() - 1;
                for r in 0..rows {
                    for c in 0..grad.ncols() {
                        grad[(r, c)] += params.alpha * params_w[li][(r, c)] / bs as f64;
                    }
                }
                if li > 0 {
                    let w_no_bias = params_w[li].rows(0, rows);
                    let mut back = &delta * w_no_bias.transpose();
                    let a = &acts[li];
                    for r in 0..back.nrows() {
                        for c in 0..back.ncols() {
                            back[(r, c)] *= act.grad_from_output(a[(r, c)]);
                        }
                    }
                    delta = back;
                }
                let m = &mut adam.m[li];
                let v = &mut adam.v[li];
                let w = &mut params_w[li];
                for k in 0..w.len() {
                    let g = grad[k];
                    m[k] = b1 * m[k] + (1.0 - b1) * g;
                    v[k] = b2 * v[k] + (1.0 - b2) * g * g;
                    w[k] -= lr_t * m[k] / (v[k].sqrt() + eps);
                }
            }
        }
    }

    let layers = params_w
        .iter()
        .map(|w| {
            let inputs = w.nrows() - 1;
            let outputs = w.ncols();
            let weights = (0..outputs)
                .flat_map(|o| (0..inputs).map(move |i| (o, i)))
                .map(|(o, i)| w[(i, o)])
                .collect();
            let bias: DVector<f64> = w.row(inputs).transpose();
            Layer {
                inputs,
                outputs,
                weights,
                bias: bias.iter().copied().collect(),
            }
        })
        .collect();
    let mlp = Mlp {
        activation: act,
        layers,
    };
    mlp.validate()
        .map_err(|_| Error::Numerical("MLP training diverged".into()))?;
    Ok(mlp)
}
