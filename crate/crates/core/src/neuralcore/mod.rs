//! Minimal dense-network numerical core.
//!
//! Dense layers with ReLU/sigmoid/identity activations, inverted dropout,
//! Glorot initialization, and exact reverse-mode gradients. All arithmetic is
//! in 64-bit floats; file I/O converts to and from 32-bit at the boundary.
//! Matrix products use fixed-order reductions so repeated runs with the same
//! seed are bit-identical.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointError, CHECKPOINT_MAGIC};

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("input has {got} columns, layer expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite input at row {row}, column {col}")]
    NonFiniteInput { row: usize, col: usize },
    #[error("cannot normalize zero row at index {row}")]
    ZeroRow { row: usize },
    #[error("layer dimensions must be positive, got {0}")]
    NonPositiveDim(usize),
    #[error("need at least two dims (input and output), got {0}")]
    TooFewDims(usize),
    #[error("expected {expected} activations for {layers} layers, got {got}")]
    ActivationCount {
        expected: usize,
        layers: usize,
        got: usize,
    },
    #[error("dropout rate must lie in [0, 1), got {0}")]
    BadDropout(f64),
    #[error("gradient tape does not match this network (layer {layer})")]
    TapeMismatch { layer: usize },
}

/// Elementwise activation applied by a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative given the pre-activation `z` and post-activation `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

/// One dense layer: `y = act(x W^T + b)`, with optional inverted dropout on
/// the activated output during training.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// `out_dim x in_dim`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
    pub dropout_rate: f64,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// A stack of dense layers.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

/// Per-layer forward cache for one batch: everything backward needs.
struct LayerTrace {
    /// Input fed to this layer (`batch x in_dim`).
    input: Array2<f64>,
    /// Pre-activation `z` (`batch x out_dim`).
    pre_activation: Array2<f64>,
    /// Post-activation before dropout (`batch x out_dim`).
    activated: Array2<f64>,
    /// Inverted-dropout mask (entries 0 or 1/(1-p)); `None` when p == 0.
    mask: Option<Array2<f64>>,
}

/// Cached forward activations and dropout masks for one training batch.
pub struct GradientTape {
    traces: Vec<LayerTrace>,
}

/// Parameter and input gradients produced by [`Mlp::backward`].
pub struct MlpGradients {
    /// Per-layer `dL/dW`, same shapes as the weights.
    pub weights: Vec<Array2<f64>>,
    /// Per-layer `dL/db`.
    pub bias: Vec<Array1<f64>>,
    /// `dL/dx` with respect to the batch input.
    pub input: Array2<f64>,
}

/// Builds an MLP with Glorot-uniform weights and zero biases.
///
/// `dims` lists layer widths including input and output; `activations` has
/// one entry per layer. `dropout` is applied to every hidden layer's output
/// (never to the final layer). Deterministic given the RNG state; weights are
/// drawn row-major per layer, layers in order.
pub fn init_mlp(
    dims: &[usize],
    activations: &[Activation],
    dropout: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Mlp, NeuralError> {
    if dims.len() < 2 {
        return Err(NeuralError::TooFewDims(dims.len()));
    }
    if let Some(&d) = dims.iter().find(|&&d| d == 0) {
        return Err(NeuralError::NonPositiveDim(d));
    }
    let n_layers = dims.len() - 1;
    if activations.len() != n_layers {
        return Err(NeuralError::ActivationCount {
            expected: n_layers,
            layers: n_layers,
            got: activations.len(),
        });
    }
    if !(0.0..1.0).contains(&dropout) {
        return Err(NeuralError::BadDropout(dropout));
    }

    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let (fan_in, fan_out) = (dims[l], dims[l + 1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = Array2::from_shape_fn((fan_out, fan_in), |_| {
            rng.random_range(-limit..limit)
        });
        let is_last = l == n_layers - 1;
        layers.push(DenseLayer {
            weights,
            bias: Array1::zeros(fan_out),
            activation: activations[l],
            dropout_rate: if is_last { 0.0 } else { dropout },
        });
    }
    Ok(Mlp { layers })
}

impl Mlp {
    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, DenseLayer::in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::out_dim)
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<(), NeuralError> {
        if x.ncols() != self.in_dim() {
            return Err(NeuralError::ShapeMismatch {
                expected: self.in_dim(),
                got: x.ncols(),
            });
        }
        for ((r, c), &v) in x.indexed_iter() {
            if !v.is_finite() {
                return Err(NeuralError::NonFiniteInput { row: r, col: c });
            }
        }
        Ok(())
    }

    /// Eval-mode forward pass: no dropout, no scaling, fully deterministic.
    pub fn forward_eval(&self, x: &Array2<f64>) -> Result<Array2<f64>, NeuralError> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for layer in &self.layers {
            let mut z = cur.dot(&layer.weights.t());
            z += &layer.bias;
            cur = z.mapv(|v| layer.activation.apply(v));
        }
        Ok(cur)
    }

    /// Train-mode forward pass with inverted dropout (`mask / (1 - p)`).
    ///
    /// Returns the batch output and the tape needed by [`Mlp::backward`].
    /// Masks are drawn from `rng` in layer order, row-major.
    pub fn forward_train(
        &self,
        x: &Array2<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Array2<f64>, GradientTape), NeuralError> {
        self.check_input(x)?;
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let mut z = cur.dot(&layer.weights.t());
            z += &layer.bias;
            let activated = z.mapv(|v| layer.activation.apply(v));
            let (out, mask) = if layer.dropout_rate > 0.0 {
                let p = layer.dropout_rate;
                let keep_scale = 1.0 / (1.0 - p);
                let mask = Array2::from_shape_fn(activated.raw_dim(), |_| {
                    if rng.random::<f64>() < p {
                        0.0
                    } else {
                        keep_scale
                    }
                });
                (&activated * &mask, Some(mask))
            } else {
                (activated.clone(), None)
            };
            traces.push(LayerTrace {
                input: cur,
                pre_activation: z,
                activated,
                mask,
            });
            cur = out;
        }
        Ok((cur, GradientTape { traces }))
    }

    /// Exact reverse-mode gradients through activations and dropout masks.
    ///
    /// `grad_output` is `dL/d(output)` for the batch the tape was recorded on.
    pub fn backward(
        &self,
        tape: &GradientTape,
        grad_output: &Array2<f64>,
    ) -> Result<MlpGradients, NeuralError> {
        if tape.traces.len() != self.layers.len() {
            return Err(NeuralError::TapeMismatch {
                layer: tape.traces.len(),
            });
        }
        let last = self.layers.len() - 1;
        if grad_output.raw_dim() != tape.traces[last].activated.raw_dim() {
            return Err(NeuralError::ShapeMismatch {
                expected: tape.traces[last].activated.ncols(),
                got: grad_output.ncols(),
            });
        }

        let mut d_weights = vec![Array2::zeros((0, 0)); self.layers.len()];
        let mut d_bias = vec![Array1::zeros(0); self.layers.len()];
        let mut grad = grad_output.clone();

        for (l, layer) in self.layers.iter().enumerate().rev() {
            let trace = &tape.traces[l];
            if trace.input.ncols() != layer.in_dim()
                || trace.pre_activation.ncols() != layer.out_dim()
            {
                return Err(NeuralError::TapeMismatch { layer: l });
            }
            // Undo dropout scaling, then the activation.
            if let Some(mask) = &trace.mask {
                grad = &grad * mask;
            }
            let mut dz = grad;
            ndarray::Zip::from(&mut dz)
                .and(&trace.pre_activation)
                .and(&trace.activated)
                .for_each(|g, &z, &a| *g *= layer.activation.derivative(z, a));
            d_weights[l] = dz.t().dot(&trace.input);
            d_bias[l] = dz.sum_axis(Axis(0));
            grad = dz.dot(&layer.weights);
        }

        Ok(MlpGradients {
            weights: d_weights,
            bias: d_bias,
            input: grad,
        })
    }
}

/// Scales every row to unit L2 norm. Errors on the first zero row.
pub fn l2_normalize_rows(x: &Array2<f64>) -> Result<Array2<f64>, NeuralError> {
    let mut out = x.clone();
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(NeuralError::ZeroRow { row: i });
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::stream_rng;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn tiny_mlp(seed: u64) -> Mlp {
        let mut rng = stream_rng(seed, "init");
        init_mlp(
            &[4, 5, 3],
            &[Activation::Relu, Activation::Sigmoid],
            0.3,
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = tiny_mlp(7);
        let b = tiny_mlp(7);
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            assert_eq!(la.weights, lb.weights);
            assert_eq!(la.bias, lb.bias);
        }
    }

    #[test]
    fn glorot_bound_holds() {
        let mut rng = stream_rng(3, "init");
        let mlp = init_mlp(
            &[512, 256],
            &[Activation::Identity],
            0.0,
            &mut rng,
        )
        .unwrap();
        let limit = (6.0 / (512.0 + 256.0)).sqrt();
        assert!(mlp.layers[0].weights.iter().all(|w| w.abs() <= limit));
        assert!(mlp.layers[0].bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_weights_sigmoid_gives_half() {
        let mlp = Mlp {
            layers: vec![DenseLayer {
                weights: Array2::zeros((3, 2)),
                bias: Array1::zeros(3),
                activation: Activation::Sigmoid,
                dropout_rate: 0.0,
            }],
        };
        let out = mlp.forward_eval(&array![[1.0, -2.0], [0.5, 4.0]]).unwrap();
        assert!(out.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let mlp = tiny_mlp(11);
        let x = array![[0.1, -0.7, 2.0, 0.4], [1.0, 0.0, -1.0, 0.3]];
        assert_eq!(mlp.forward_eval(&x).unwrap(), mlp.forward_eval(&x).unwrap());
    }

    #[test]
    fn train_mode_deterministic_given_rng() {
        let mlp = tiny_mlp(13);
        let x = array![[0.1, -0.7, 2.0, 0.4], [1.0, 0.0, -1.0, 0.3]];
        let (a, _) = mlp
            .forward_train(&x, &mut stream_rng(5, "dropout"))
            .unwrap();
        let (b, _) = mlp
            .forward_train(&x, &mut stream_rng(5, "dropout"))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        // E[train output] over masks should match the eval output within 2%.
        let mlp = tiny_mlp(17);
        let x = array![[0.3, -0.2, 0.9, 1.4]];
        let eval = mlp.forward_eval(&x).unwrap();
        let mut rng = stream_rng(99, "dropout");
        let n = 10_000;
        let mut acc = Array2::<f64>::zeros(eval.raw_dim());
        for _ in 0..n {
            let (out, _) = mlp.forward_train(&x, &mut rng).unwrap();
            acc += &out;
        }
        acc /= n as f64;
        for (m, e) in acc.iter().zip(eval.iter()) {
            assert!(
                (m - e).abs() / e.abs().max(1e-9) < 0.02,
                "mc {m} vs eval {e}"
            );
        }
    }

    #[test]
    fn sigmoid_output_lies_in_unit_interval() {
        let mlp = tiny_mlp(23);
        let x = array![[10.0, -10.0, 3.0, 0.0], [-5.0, 5.0, -5.0, 5.0]];
        let out = mlp.forward_eval(&x).unwrap();
        assert!(out.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zero_grad_output_gives_zero_gradients() {
        let mlp = tiny_mlp(29);
        let x = array![[0.1, -0.7, 2.0, 0.4]];
        let (out, tape) = mlp
            .forward_train(&x, &mut stream_rng(1, "dropout"))
            .unwrap();
        let grads = mlp.backward(&tape, &Array2::zeros(out.raw_dim())).unwrap();
        assert!(grads.weights.iter().all(|w| w.iter().all(|&v| v == 0.0)));
        assert!(grads.bias.iter().all(|b| b.iter().all(|&v| v == 0.0)));
        assert!(grads.input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_single_layer_weight_grad_is_outer_product() {
        let mlp = Mlp {
            layers: vec![DenseLayer {
                weights: array![[0.5, -1.0], [2.0, 0.25]],
                bias: array![0.0, 0.0],
                activation: Activation::Identity,
                dropout_rate: 0.0,
            }],
        };
        let x = array![[3.0, -2.0]];
        let (_, tape) = mlp.forward_train(&x, &mut stream_rng(0, "dropout")).unwrap();
        let g = array![[1.0, -0.5]];
        let grads = mlp.backward(&tape, &g).unwrap();
        // dW = g^T x
        assert_eq!(grads.weights[0], g.t().dot(&x));
        assert_eq!(grads.bias[0], array![1.0, -0.5]);
        // dx = g W
        assert_eq!(grads.input, g.dot(&mlp.layers[0].weights));
    }

    #[test]
    fn normalize_rows_matches_hand_values() {
        let x = array![[3.0, 4.0], [1.0, 0.0]];
        let n = l2_normalize_rows(&x).unwrap();
        assert_abs_diff_eq!(n[[0, 0]], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(n[[0, 1]], 0.8, epsilon = 1e-15);
        assert_eq!(n.row(1).to_owned(), array![1.0, 0.0]);
        for row in n.axis_iter(Axis(0)) {
            assert_abs_diff_eq!(row.dot(&row).sqrt(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_zero_row() {
        let x = array![[1.0, 2.0], [0.0, 0.0]];
        match l2_normalize_rows(&x) {
            Err(NeuralError::ZeroRow { row }) => assert_eq!(row, 1),
            other => panic!("expected ZeroRow, got {other:?}"),
        }
    }

    #[test]
    fn rejects_shape_mismatch_and_nonfinite() {
        let mlp = tiny_mlp(31);
        assert!(matches!(
            mlp.forward_eval(&Array2::zeros((1, 3))),
            Err(NeuralError::ShapeMismatch { expected: 4, got: 3 })
        ));
        let mut x = Array2::zeros((2, 4));
        x[[1, 2]] = f64::NAN;
        assert!(matches!(
            mlp.forward_eval(&x),
            Err(NeuralError::NonFiniteInput { row: 1, col: 2 })
        ));
    }

    #[test]
    fn init_rejects_bad_args() {
        let mut rng = stream_rng(0, "init");
        assert!(matches!(
            init_mlp(&[4], &[], 0.0, &mut rng),
            Err(NeuralError::TooFewDims(1))
        ));
        assert!(matches!(
            init_mlp(&[4, 0], &[Activation::Relu], 0.0, &mut rng),
            Err(NeuralError::NonPositiveDim(0))
        ));
        assert!(matches!(
            init_mlp(&[4, 2], &[Activation::Relu], 1.0, &mut rng),
            Err(NeuralError::BadDropout(_))
        ));
    }
}
