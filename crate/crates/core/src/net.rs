//! Small fully-connected encoder with hand-derived backprop.
//!
//! Layers are affine maps with a rectifier after every layer except the last;
//! the output is then row L2-normalized, so downstream cosine machinery always
//! sees unit embeddings. The normalization Jacobian is (I - y y^T)/|z| for
//! y = z/|z|.
//!
//! Parameters carry a version counter bumped on every mutation; a backward
//! pass checks that its tape was produced by the same version, so a stale tape
//! is an error rather than a silent wrong gradient.

use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_transpose_a, matmul_transpose_b, Matrix};
use crate::rng::Prng;

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// in x out weight matrix; inputs are rows, so the forward map is x W + b.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Encoder parameters. The only learnable state of the nonparametric model.
#[derive(Clone, Debug)]
pub struct EncoderParams {
    layers: Vec<Layer>,
    version: u64,
}

/// Equality covers the parameters only; the tape-staleness version counter is
/// transient bookkeeping.
impl PartialEq for EncoderParams {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Learning rate for plain gradient descent steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
}

impl SgdConfig {
    pub fn new(learning_rate: f64) -> Result<Self> {
        if !learning_rate.is_finite() || learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {learning_rate}"
            )));
        }
        Ok(Self { learning_rate })
    }
}

/// Cached activations from one forward pass, sufficient for backward.
#[derive(Clone, Debug)]
pub struct Tape {
    /// Input batch and the post-activation output of every layer but the last.
    activations: Vec<Matrix>,
    /// Row norms of the last layer's pre-normalization output.
    norms: Vec<f64>,
    /// Normalized output.
    features: Matrix,
    version: u64,
}

/// Per-layer weight and bias gradients, same shapes as the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl EncoderParams {
    /// Layer sizes as a chain, e.g. `[m, 64, 64, d]`. Weights are seeded
    /// uniform in +-sqrt(6/(in+out)); biases start at zero.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if dims.contains(&0) {
            return Err(Error::Config("layer dimensions must be >= 1".into()));
        }
        let mut rng = Prng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut weights = Matrix::zeros(fan_in, fan_out);
            for v in weights.data_mut() {
                *v = rng.uniform_in(-bound, bound);
            }
            layers.push(Layer {
                weights,
                bias: vec![0.0; fan_out],
            });
        }
        Ok(Self { layers, version: 0 })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("encoder needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].weights.cols() != pair[1].weights.rows() {
                return Err(Error::Shape("layer dimensions do not chain".into()));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.cols() {
                return Err(Error::Shape(format!("layer {i} bias length mismatch")));
            }
        }
        Ok(Self { layers, version: 0 })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.cols()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Mutable access for perturbation-style tests; invalidates live tapes.
    pub fn layer_mut(&mut self, i: usize) -> &mut Layer {
        self.version += 1;
        &mut self.layers[i]
    }

    /// Map a raw batch to unit-norm features, caching what backward needs.
    /// A row whose pre-normalization output is zero is a degenerate feature.
    pub fn forward(&self, inputs: &Matrix) -> Result<(Matrix, Tape)> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "inputs have width {}, encoder expects {}",
                inputs.cols(),
                self.input_dim()
            )));
        }
        let mut activations = vec![inputs.clone()];
        let mut current = inputs.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = matmul(&current, &layer.weights)?;
            for n in 0..z.rows() {
                for (v, &b) in z.row_mut(n).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            if li + 1 < self.layers.len() {
                for v in z.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                activations.push(z.clone());
            }
            current = z;
        }

        let pre_norm = current;
        let mut norms = Vec::with_capacity(pre_norm.rows());
        let mut features = pre_norm.clone();
        for n in 0..pre_norm.rows() {
            let norm = crate::numerics::l2_norm(pre_norm.row(n));
            if norm == 0.0 {
                return Err(Error::DegenerateInput(format!(
                    "encoder produced a zero feature for row {n}"
                )));
            }
            norms.push(norm);
            for v in features.row_mut(n) {
                *v /= norm;
            }
        }
        let tape = Tape {
            activations,
            norms,
            features: features.clone(),
            version: self.version,
        };
        Ok((features, tape))
    }

    /// Exact parameter gradients of a loss whose gradient with respect to the
    /// normalized features is `grad_features`.
    pub fn backward(&self, tape: &Tape, grad_features: &Matrix) -> Result<Gradients> {
        if tape.version != self.version {
            return Err(Error::Contract(
                "tape is stale: encoder parameters changed since forward".into(),
            ));
        }
        if grad_features.rows() != tape.features.rows()
            || grad_features.cols() != tape.features.cols()
        {
            return Err(Error::Shape("grad_features shape mismatch".into()));
        }

        // Through the normalization: dz = (g - (g.y) y) / |z|.
        let mut delta = Matrix::zeros(grad_features.rows(), grad_features.cols());
        for n in 0..grad_features.rows() {
            let g = grad_features.row(n);
            let y = tape.features.row(n);
            let gy = crate::numerics::dot(g, y);
            let inv_norm = 1.0 / tape.norms[n];
            for j in 0..g.len() {
                delta.set(n, j, (g[j] - gy * y[j]) * inv_norm);
            }
        }

        let mut grads: Vec<Layer> = self
            .layers
            .iter()
            .map(|l| Layer {
                weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                bias: vec![0.0; l.bias.len()],
            })
            .collect();

        for li in (0..self.layers.len()).rev() {
            // delta is dL/dz for layer li's affine output.
            let input = &tape.activations[li];
            grads[li].weights = matmul_transpose_a(input, &delta)?;
            for j in 0..grads[li].bias.len() {
                grads[li].bias[j] = (0..delta.rows()).map(|n| delta.get(n, j)).sum();
            }
            if li > 0 {
                let mut prev = matmul_transpose_b(&delta, &self.layers[li].weights)?;
                // Rectifier gate: the stored activation is already rectified,
                // so positive entries mark active units.
                let act = &tape.activations[li];
                for n in 0..prev.rows() {
                    for j in 0..prev.cols() {
                        if act.get(n, j) <= 0.0 {
                            prev.set(n, j, 0.0);
                        }
                    }
                }
                delta = prev;
            }
        }
        Ok(Gradients { layers: grads })
    }

    /// Plain gradient descent: p <- p - lr * g elementwise.
    pub fn sgd_step(&mut self, grads: &Gradients, cfg: &SgdConfig) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Shape("gradient layer count mismatch".into()));
        }
        for (layer, grad) in self.layers.iter_mut().zip(&grads.layers) {
            if layer.weights.rows() != grad.weights.rows()
                || layer.weights.cols() != grad.weights.cols()
            {
                return Err(Error::Shape("gradient shape mismatch".into()));
            }
            for (w, &g) in layer.weights.data_mut().iter_mut().zip(grad.weights.data()) {
                *w -= cfg.learning_rate * g;
            }
            for (b, &g) in layer.bias.iter_mut().zip(&grad.bias) {
                *b -= cfg.learning_rate * g;
            }
        }
        self.version += 1;
        Ok(())
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }
}
