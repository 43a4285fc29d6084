//! Dense feed-forward classifier trained from scratch.
//!
//! Each hidden layer applies `affine -> ReLU -> batchnorm -> dropout`; the
//! output layer is a plain affine map producing `C` logits, or `2C` values
//! (logits followed by per-class log-variances) when the aleatoric head is
//! enabled. Gradients are derived by hand and checked against central
//! finite differences in the tests.

mod adam;
mod loss;
mod persist;
mod train;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictions::{PredictionSet, RecordMeta};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::softmax_cross_entropy;
pub use persist::{load_model, save_model, WeightsDocument};
pub use train::{fit, train, CrossEntropy, Dataset, EpochLog, Objective, TrainConfig, TrainLog};

pub const BATCHNORM_EPSILON: f64 = 1e-5;
/// Weight kept by the running batchnorm statistics at each update.
pub const BATCHNORM_MOMENTUM: f64 = 0.9;
/// Initial bias of the log-variance outputs of the aleatoric head.
pub const LOG_VARIANCE_INIT: f64 = -5.0;

/// Which hidden layers apply dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutScope {
    AllHidden,
    /// Only the layer feeding the output layer.
    LastHidden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub class_count: usize,
    pub dropout_rate: f64,
    pub dropout_scope: DropoutScope,
    pub use_batchnorm: bool,
    /// Adds `class_count` log-variance outputs after the logits.
    pub aleatoric_head: bool,
}

impl MlpConfig {
    /// Three equal-width hidden layers for 2D binary problems.
    pub fn toy(width: usize) -> Self {
        MlpConfig {
            input_dim: 2,
            hidden_widths: vec![width; 3],
            class_count: 2,
            dropout_rate: 0.2,
            dropout_scope: DropoutScope::AllHidden,
            use_batchnorm: true,
            aleatoric_head: false,
        }
    }

    pub fn output_dim(&self) -> usize {
        if self.aleatoric_head {
            2 * self.class_count
        } else {
            self.class_count
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.class_count < 2 {
            return Err(Error::invalid("input_dim must be >= 1 and class_count >= 2"));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(Error::invalid("need at least one hidden layer of positive width"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout rate must lie in [0, 1)"));
        }
        Ok(())
    }

    fn dropout_on(&self, layer: usize) -> bool {
        self.dropout_rate > 0.0
            && match self.dropout_scope {
                DropoutScope::AllHidden => true,
                DropoutScope::LastHidden => layer + 1 == self.hidden_widths.len(),
            }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// How a forward pass treats batchnorm and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pass {
    /// Normalise with the batch's own statistics instead of running ones.
    pub batch_stats: bool,
    pub dropout: bool,
}

impl Pass {
    pub const TRAIN: Pass = Pass {
        batch_stats: true,
        dropout: true,
    };
    pub const EVAL: Pass = Pass {
        batch_stats: false,
        dropout: false,
    };
    /// Running statistics with dropout left on, for MC-dropout sampling.
    pub const MC_DROPOUT: Pass = Pass {
        batch_stats: false,
        dropout: true,
    };
    pub const DETERMINISTIC_TRAIN: Pass = Pass {
        batch_stats: true,
        dropout: false,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `fan_in x fan_out`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Dense {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-a..a));
        Dense {
            weight,
            bias: Array1::zeros(fan_out),
        }
    }

    fn apply(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    pub dense: Dense,
    pub norm: Option<BatchNorm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    config: MlpConfig,
    seed: u64,
    pub hidden: Vec<HiddenLayer>,
    pub output: Dense,
    mode: Mode,
}

struct LayerCache {
    input: Array2<f64>,
    pre_activation: Array2<f64>,
    /// Normalised activations and `1 / sqrt(var + eps)` of the statistics used.
    norm: Option<(Array2<f64>, Array1<f64>)>,
    /// Inverted-dropout multipliers (`0` or `1 / (1 - p)`).
    dropout: Option<Array2<f64>>,
}

/// Result of a forward pass, retaining what backpropagation needs.
pub struct Forward {
    pub output: Array2<f64>,
    pass: Pass,
    layers: Vec<LayerCache>,
    features: Array2<f64>,
    batch_stats: Vec<Option<(Array1<f64>, Array1<f64>)>>,
}

impl Forward {
    /// Input to the output layer (after the last dropout).
    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub dense: DenseGrads,
    pub gamma: Option<Array1<f64>>,
    pub beta: Option<Array1<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hidden: Vec<LayerGrads>,
    pub output: DenseGrads,
}

impl Gradients {
    /// Flat views in the same order as [`MlpModel::parameters_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.hidden {
            out.push(l.dense.weight.as_slice().expect("standard layout"));
            out.push(l.dense.bias.as_slice().expect("standard layout"));
            if let (Some(g), Some(b)) = (&l.gamma, &l.beta) {
                out.push(g.as_slice().expect("standard layout"));
                out.push(b.as_slice().expect("standard layout"));
            }
        }
        out.push(self.output.weight.as_slice().expect("standard layout"));
        out.push(self.output.bias.as_slice().expect("standard layout"));
        out
    }
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases, identity batchnorm.
    pub fn init(config: MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fan_in = config.input_dim;
        let mut hidden = Vec::with_capacity(config.hidden_widths.len());
        for &width in &config.hidden_widths {
            hidden.push(HiddenLayer {
                dense: Dense::glorot(fan_in, width, &mut rng),
                norm: config.use_batchnorm.then(|| BatchNorm::new(width)),
            });
            fan_in = width;
        }
        let mut output = Dense::glorot(fan_in, config.output_dim(), &mut rng);
        if config.aleatoric_head {
            output
                .bias
                .slice_mut(ndarray::s![config.class_count..])
                .fill(LOG_VARIANCE_INIT);
        }
        Ok(MlpModel {
            config,
            seed,
            hidden,
            output,
            mode: Mode::Train,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn parameter_count(&self) -> usize {
        self.gradient_shapes().iter().sum()
    }

    fn gradient_shapes(&self) -> Vec<usize> {
        let mut v = Vec::new();
        for l in &self.hidden {
            v.push(l.dense.weight.len());
            v.push(l.dense.bias.len());
            if let Some(n) = &l.norm {
                v.push(n.gamma.len());
                v.push(n.beta.len());
            }
        }
        v.push(self.output.weight.len());
        v.push(self.output.bias.len());
        v
    }

    /// Mutable flat views of every trainable parameter.
    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.hidden {
            out.push(l.dense.weight.as_slice_mut().expect("standard layout"));
            out.push(l.dense.bias.as_slice_mut().expect("standard layout"));
            if let Some(n) = &mut l.norm {
                out.push(n.gamma.as_slice_mut().expect("standard layout"));
                out.push(n.beta.as_slice_mut().expect("standard layout"));
            }
        }
        out.push(self.output.weight.as_slice_mut().expect("standard layout"));
        out.push(self.output.bias.as_slice_mut().expect("standard layout"));
        out
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.config.input_dim {
            return Err(Error::shape(format!(
                "input has {} columns, model expects {}",
                x.ncols(),
                self.config.input_dim
            )));
        }
        Ok(())
    }

    /// Forward pass without touching the model.
    ///
    /// `rng` drives the dropout masks and is only required when
    /// `pass.dropout` is set and dropout is configured.
    pub fn forward_pass(
        &self,
        x: ArrayView2<f64>,
        pass: Pass,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Forward> {
        self.check_input(&x)?;
        let n = x.nrows();
        if pass.batch_stats && self.config.use_batchnorm && n < 2 {
            return Err(Error::invalid(
                "batchnorm with batch statistics needs at least two samples",
            ));
        }
        let keep = 1.0 - self.config.dropout_rate;
        let mut h = x.to_owned();
        let mut layers = Vec::with_capacity(self.hidden.len());
        let mut batch_stats = Vec::with_capacity(self.hidden.len());
        for (li, layer) in self.hidden.iter().enumerate() {
            let input = h;
            let pre = layer.dense.apply(&input.view());
            let mut a = pre.mapv(|v| v.max(0.0));
            let mut norm_cache = None;
            let mut stats = None;
            if let Some(bn) = &layer.norm {
                let (mean, var) = if pass.batch_stats {
                    let mean = a.mean_axis(Axis(0)).expect("non-empty batch");
                    let var = a.var_axis(Axis(0), 0.0);
                    stats = Some((mean.clone(), var.clone()));
                    (mean, var)
                } else {
                    (bn.running_mean.clone(), bn.running_var.clone())
                };
                let inv_std = var.mapv(|v| 1.0 / (v + BATCHNORM_EPSILON).sqrt());
                let xhat = (&a - &mean) * &inv_std;
                a = &xhat * &bn.gamma + &bn.beta;
                norm_cache = Some((xhat, inv_std));
            }
            let mut mask = None;
            if pass.dropout && self.config.dropout_on(li) {
                let rng = rng
                    .as_deref_mut()
                    .ok_or_else(|| Error::invalid("dropout pass needs a random source"))?;
                let m = Array2::from_shape_fn(a.dim(), |_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                a *= &m;
                mask = Some(m);
            }
            layers.push(LayerCache {
                input,
                pre_activation: pre,
                norm: norm_cache,
                dropout: mask,
            });
            batch_stats.push(stats);
            h = a;
        }
        let output = self.output.apply(&h.view());
        Ok(Forward {
            output,
            pass,
            layers,
            features: h,
            batch_stats,
        })
    }

    /// Forward pass in the model's current mode. In train mode this uses
    /// batch statistics and dropout and folds the batch statistics into the
    /// running averages.
    pub fn forward(&mut self, x: ArrayView2<f64>, rng: &mut dyn RngCore) -> Result<Forward> {
        match self.mode {
            Mode::Eval => self.forward_pass(x, Pass::EVAL, None),
            Mode::Train => {
                let fwd = self.forward_pass(x, Pass::TRAIN, Some(rng))?;
                self.update_running_stats(&fwd);
                Ok(fwd)
            }
        }
    }

    pub fn update_running_stats(&mut self, fwd: &Forward) {
        for (layer, stats) in self.hidden.iter_mut().zip(&fwd.batch_stats) {
            if let (Some(bn), Some((mean, var))) = (&mut layer.norm, stats) {
                bn.running_mean = &bn.running_mean * BATCHNORM_MOMENTUM + mean * (1.0 - BATCHNORM_MOMENTUM);
                bn.running_var = &bn.running_var * BATCHNORM_MOMENTUM + var * (1.0 - BATCHNORM_MOMENTUM);
            }
        }
    }

    /// Deterministic outputs using running statistics and no dropout.
    pub fn outputs(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_pass(x, Pass::EVAL, None)?.output)
    }

    /// Class logits in evaluation mode (drops the log-variance half when the
    /// aleatoric head is present).
    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let out = self.outputs(x)?;
        Ok(out
            .slice(ndarray::s![.., ..self.config.class_count])
            .to_owned())
    }

    /// Evaluation-mode activations feeding the output layer.
    pub fn features(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_pass(x, Pass::EVAL, None)?.features)
    }

    /// Backpropagates `d_output` (gradient of the loss w.r.t. the network
    /// output) through the cached forward pass.
    pub fn backward(&self, fwd: &Forward, d_output: ArrayView2<f64>) -> Gradients {
        let d_output = d_output.as_standard_layout();
        let output = DenseGrads {
            weight: fwd.features.t().dot(&d_output).as_standard_layout().into_owned(),
            bias: d_output.sum_axis(Axis(0)),
        };
        let mut dh = d_output.dot(&self.output.weight.t());
        let mut hidden = Vec::with_capacity(self.hidden.len());
        for (li, (layer, cache)) in self.hidden.iter().zip(&fwd.layers).enumerate().rev() {
            if let Some(mask) = &cache.dropout {
                dh *= mask;
            }
            let (mut da, gamma, beta) = match (&layer.norm, &cache.norm) {
                (Some(bn), Some((xhat, inv_std))) => {
                    let dgamma = (&dh * xhat).sum_axis(Axis(0));
                    let dbeta = dh.sum_axis(Axis(0));
                    let dxhat = &dh * &bn.gamma;
                    let da = if fwd.pass.batch_stats {
                        let n = dh.nrows() as f64;
                        let sum_dxhat = dxhat.sum_axis(Axis(0));
                        let sum_dxhat_xhat = (&dxhat * xhat).sum_axis(Axis(0));
                        let mut da = &dxhat * n - &sum_dxhat - &(xhat * &sum_dxhat_xhat);
                        da *= &(inv_std / n);
                        da
                    } else {
                        dxhat * inv_std
                    };
                    (da, Some(dgamma), Some(dbeta))
                }
                _ => (dh, None, None),
            };
            Zip::from(&mut da)
                .and(&cache.pre_activation)
                .for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            let dense = DenseGrads {
                weight: cache.input.t().dot(&da).as_standard_layout().into_owned(),
                bias: da.sum_axis(Axis(0)),
            };
            dh = if li > 0 {
                da.dot(&layer.dense.weight.t())
            } else {
                Array2::zeros((0, 0))
            };
            hidden.push(LayerGrads { dense, gamma, beta });
        }
        hidden.reverse();
        Gradients { hidden, output }
    }
}

/// Wraps evaluation-mode logits as a prediction set.
pub fn predict(model: &MlpModel, inputs: ArrayView2<f64>, meta: &[RecordMeta]) -> Result<PredictionSet> {
    if model.mode() != Mode::Eval {
        return Err(Error::invalid("predict requires a model in eval mode"));
    }
    if inputs.nrows() != meta.len() {
        return Err(Error::shape(format!(
            "{} inputs for {} records",
            inputs.nrows(),
            meta.len()
        )));
    }
    if inputs.nrows() == 0 {
        model.check_input(&inputs)?;
        return PredictionSet::empty(model.config().class_count);
    }
    PredictionSet::from_logits(&model.logits(inputs)?, meta)
}
