//! MC-dropout with a logit-variance head.
//!
//! The network's output layer emits `C` mean logits `μ` and `C` log
//! variances. Predictions average `softmax(μ + σ ⊙ ε)` over dropout masks on
//! the last hidden layer and over standard-normal draws `ε`.

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::calibration::minimize_temperature;
use crate::error::{Error, Result};
use crate::math::softmax_into;
use crate::metrics::NLL_CLIP;
use crate::mlp::{fit, Dataset, DropoutScope, MlpConfig, MlpModel, Objective, Pass, TrainConfig, TrainLog};
use crate::predictions::{ProbabilitySet, RecordMeta};

/// Where a calibration temperature enters the sampled logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemperaturePlacement {
    /// `softmax(μ / T + σ ε)`: only the mean logits are rescaled.
    #[default]
    BeforeNoise,
    /// `softmax((μ + σ ε) / T)`
    AfterNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesConfig {
    pub dropout_rate: f64,
    pub mc_dropout_samples: usize,
    pub logit_noise_samples: usize,
    pub temperature_placement: TemperaturePlacement,
}

impl Default for BayesConfig {
    fn default() -> Self {
        BayesConfig {
            dropout_rate: 0.2,
            mc_dropout_samples: 20,
            logit_noise_samples: 10,
            temperature_placement: TemperaturePlacement::BeforeNoise,
        }
    }
}

impl BayesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_dropout_samples == 0 || self.logit_noise_samples == 0 {
            return Err(Error::invalid("sample counts must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout rate must lie in [0, 1)"));
        }
        Ok(())
    }

    /// `base` with the variance head on and dropout on the last hidden
    /// layer only.
    pub fn network(&self, base: &MlpConfig) -> MlpConfig {
        MlpConfig {
            dropout_rate: self.dropout_rate,
            dropout_scope: DropoutScope::LastHidden,
            aleatoric_head: true,
            ..base.clone()
        }
    }
}

fn require_head(model: &MlpModel) -> Result<()> {
    if !model.config().aleatoric_head {
        return Err(Error::invalid("model has no logit-variance head"));
    }
    Ok(())
}

/// Splits an `N x 2C` output into mean logits and log variances.
pub fn split_output(output: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
    let c = output.ncols() / 2;
    (
        output.slice(s![.., ..c]).to_owned(),
        output.slice(s![.., c..]).to_owned(),
    )
}

/// Deterministic (eval-mode) mean logits and log variances.
pub fn bayes_forward(model: &MlpModel, inputs: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    require_head(model)?;
    Ok(split_output(model.outputs(inputs)?.view()))
}

/// `samples` standard-normal draws shaped `samples x N x C`.
pub fn draw_noise(samples: usize, rows: usize, classes: usize, rng: &mut dyn RngCore) -> Array3<f64> {
    Array3::from_shape_simple_fn((samples, rows, classes), || rng.sample(StandardNormal))
}

/// Sampled loss and its gradients with respect to `μ` and `log σ²` for
/// fixed noise.
pub fn bayes_loss_grad(
    mu: ArrayView2<f64>,
    logvar: ArrayView2<f64>,
    labels: &[usize],
    noise: &Array3<f64>,
) -> (f64, Array2<f64>, Array2<f64>) {
    let (n, c) = mu.dim();
    let samples = noise.len_of(Axis(0));
    let mut d_mu = Array2::zeros((n, c));
    let mut d_logvar = Array2::zeros((n, c));
    let mut loss = 0.0;
    let mut z = vec![0.0; c];
    let mut p = vec![0.0; c];
    let mut dp_dmu = vec![0.0; c];
    let mut dp_dlv = vec![0.0; c];
    for (i, &y) in labels.iter().enumerate() {
        let mut pbar = 0.0;
        dp_dmu.fill(0.0);
        dp_dlv.fill(0.0);
        for s in 0..samples {
            for k in 0..c {
                let sigma = (0.5 * logvar[[i, k]]).exp();
                z[k] = mu[[i, k]] + sigma * noise[[s, i, k]];
            }
            softmax_into(&z, 1.0, &mut p);
            pbar += p[y];
            for k in 0..c {
                // d p[y] / d z[k]
                let dz = p[y] * (if k == y { 1.0 } else { 0.0 } - p[k]);
                let sigma = (0.5 * logvar[[i, k]]).exp();
                dp_dmu[k] += dz;
                dp_dlv[k] += dz * noise[[s, i, k]] * sigma * 0.5;
            }
        }
        pbar /= samples as f64;
        let clipped = pbar.clamp(NLL_CLIP.0, NLL_CLIP.1);
        loss -= clipped.ln();
        if clipped == pbar {
            let scale = -1.0 / (pbar * samples as f64 * n as f64);
            for k in 0..c {
                d_mu[[i, k]] = scale * dp_dmu[k];
                d_logvar[[i, k]] = scale * dp_dlv[k];
            }
        }
    }
    (loss / n as f64, d_mu, d_logvar)
}

/// Mean over rows of `−ln clip(mean_s softmax(μ + σ ⊙ ε_s)[y])` with
/// `samples` noise draws seeded by `seed`.
pub fn bayes_loss(
    mu: ArrayView2<f64>,
    logvar: ArrayView2<f64>,
    labels: &[usize],
    samples: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = draw_noise(samples, mu.nrows(), mu.ncols(), &mut rng);
    bayes_loss_grad(mu, logvar, labels, &noise).0
}

/// Training objective for the variance-head network.
pub struct BayesObjective<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub noise_samples: usize,
    /// Seed of the fixed noise used for the validation loss.
    pub val_seed: u64,
}

impl Objective for BayesObjective<'_> {
    fn inputs(&self) -> ArrayView2<'_, f64> {
        self.train.inputs.view()
    }

    fn loss_grad(
        &self,
        output: ArrayView2<f64>,
        rows: &[usize],
        rng: &mut dyn RngCore,
    ) -> (f64, Array2<f64>) {
        let (mu, logvar) = split_output(output);
        let labels: Vec<usize> = rows.iter().map(|&i| self.train.labels[i]).collect();
        let noise = draw_noise(self.noise_samples, mu.nrows(), mu.ncols(), rng);
        let (loss, d_mu, d_lv) = bayes_loss_grad(mu.view(), logvar.view(), &labels, &noise);
        let grad = ndarray::concatenate(Axis(1), &[d_mu.view(), d_lv.view()])
            .expect("matching row counts");
        (loss, grad)
    }

    fn validation_loss(&self, model: &MlpModel) -> Result<f64> {
        let (mu, logvar) = bayes_forward(model, self.val.inputs.view())?;
        Ok(bayes_loss(
            mu.view(),
            logvar.view(),
            &self.val.labels,
            self.noise_samples,
            self.val_seed,
        ))
    }
}

/// Trains a variance-head model with the sampled loss.
pub fn train_bayesian(
    model: &mut MlpModel,
    train: &Dataset,
    val: &Dataset,
    config: &BayesConfig,
    train_config: &TrainConfig,
) -> Result<TrainLog> {
    config.validate()?;
    require_head(model)?;
    if val.is_empty() && train_config.lr_schedule.is_none() {
        return Err(Error::Empty("validation set"));
    }
    let objective = BayesObjective {
        train,
        val,
        noise_samples: config.logit_noise_samples,
        val_seed: crate::math::derive_seed(train_config.seed, 0xBA7E5),
    };
    fit(model, &objective, train_config)
}

/// Dropout-sampled network outputs plus the logit noise used with them,
/// so that the averaged prediction can be re-evaluated at any temperature.
#[derive(Debug, Clone)]
pub struct McSamples {
    /// One `N x C` mean-logit matrix per dropout mask.
    pub mu: Vec<Array2<f64>>,
    pub sigma: Vec<Array2<f64>>,
    /// `S_n x N x C`, shared across masks.
    pub noise: Array3<f64>,
    pub placement: TemperaturePlacement,
}

impl McSamples {
    /// Draws `S_d` dropout masks and `S_n` noise vectors per row.
    ///
    /// When dropout is confined to the last hidden layer the trunk is
    /// evaluated once and only the masked output layer is recomputed.
    pub fn draw(model: &MlpModel, inputs: ArrayView2<f64>, config: &BayesConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        require_head(model)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mc = model.config();
        let masks = if mc.dropout_rate > 0.0 {
            config.mc_dropout_samples
        } else {
            1
        };
        let mut outputs = Vec::with_capacity(masks);
        if mc.dropout_rate > 0.0 && (mc.dropout_scope == DropoutScope::LastHidden || mc.hidden_widths.len() == 1) {
            let features = model.features(inputs)?;
            let keep = 1.0 - mc.dropout_rate;
            for _ in 0..masks {
                let masked = features.mapv(|v| if rng.random::<f64>() < keep { v / keep } else { 0.0 });
                outputs.push(masked.dot(&model.output.weight) + &model.output.bias);
            }
        } else {
            let pass = if mc.dropout_rate > 0.0 { Pass::MC_DROPOUT } else { Pass::EVAL };
            for _ in 0..masks {
                outputs.push(model.forward_pass(inputs, pass, Some(&mut rng))?.output);
            }
        }
        let (n, c) = (inputs.nrows(), mc.class_count);
        let noise = draw_noise(config.logit_noise_samples, n, c, &mut rng);
        let (mu, sigma) = outputs
            .iter()
            .map(|o| {
                let (mu, lv) = split_output(o.view());
                (mu, lv.mapv(|v| (0.5 * v).exp()))
            })
            .unzip();
        Ok(McSamples {
            mu,
            sigma,
            noise,
            placement: config.temperature_placement,
        })
    }

    pub fn rows(&self) -> usize {
        self.noise.len_of(Axis(1))
    }

    /// Averaged predictive probabilities at temperature `t`.
    pub fn probabilities(&self, t: f64) -> Array2<f64> {
        let n = self.rows();
        let c = self.noise.len_of(Axis(2));
        let mut out = Array2::zeros((n, c));
        for i in 0..n {
            self.row_mean(i, t, out.row_mut(i).as_slice_mut().expect("standard layout"));
        }
        out
    }

    fn row_mean(&self, i: usize, t: f64, out: &mut [f64]) {
        let c = out.len();
        let mut z = vec![0.0; c];
        let mut p = vec![0.0; c];
        out.fill(0.0);
        let draws = self.mu.len() * self.noise.len_of(Axis(0));
        for (mu, sigma) in self.mu.iter().zip(&self.sigma) {
            for s in 0..self.noise.len_of(Axis(0)) {
                for k in 0..c {
                    let e = sigma[[i, k]] * self.noise[[s, i, k]];
                    z[k] = match self.placement {
                        TemperaturePlacement::BeforeNoise => mu[[i, k]] / t + e,
                        TemperaturePlacement::AfterNoise => (mu[[i, k]] + e) / t,
                    };
                }
                softmax_into(&z, 1.0, &mut p);
                for (o, v) in out.iter_mut().zip(&p) {
                    *o += v;
                }
            }
        }
        out.iter_mut().for_each(|o| *o /= draws as f64);
    }

    /// Temperature minimising the clipped NLL of the averaged prediction
    /// against `labels`.
    pub fn fit_temperature(&self, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() {
            return Err(Error::Empty("validation rows"));
        }
        if labels.len() != self.rows() {
            return Err(Error::shape("one label per sampled row"));
        }
        let mut row = vec![0.0; self.noise.len_of(Axis(2))];
        let (t, _) = minimize_temperature(|t| {
            let mut total = 0.0;
            for (i, &y) in labels.iter().enumerate() {
                self.row_mean(i, t, &mut row);
                total -= row[y].clamp(NLL_CLIP.0, NLL_CLIP.1).ln();
            }
            total / labels.len() as f64
        });
        Ok(t)
    }
}

/// Averaged MC probabilities wrapped with the caller's record metadata.
pub fn bayes_predict(
    model: &MlpModel,
    inputs: ArrayView2<f64>,
    meta: &[RecordMeta],
    config: &BayesConfig,
    temperature: f64,
    seed: u64,
) -> Result<ProbabilitySet> {
    if inputs.nrows() != meta.len() {
        return Err(Error::shape(format!("{} inputs for {} records", inputs.nrows(), meta.len())));
    }
    let probs = McSamples::draw(model, inputs, config, seed)?.probabilities(temperature);
    ProbabilitySet::new(
        meta.iter().map(|m| m.id.clone()).collect(),
        probs,
        meta.iter().map(|m| m.label).collect(),
        meta.iter().map(|m| m.group).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{log_softmax, max_value, softmax};
    use crate::mlp::{softmax_cross_entropy, Mode};
    use crate::predictions::GroupTag;
    use ndarray::array;
    use rand_distr::{Distribution, Normal};

    fn base() -> MlpConfig {
        MlpConfig {
            input_dim: 2,
            hidden_widths: vec![16, 16],
            class_count: 2,
            dropout_rate: 0.0,
            dropout_scope: DropoutScope::AllHidden,
            use_batchnorm: true,
            aleatoric_head: true,
        }
    }

    fn inputs(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        Array2::from_shape_fn((n, 2), |_| normal.sample(&mut rng))
    }

    fn meta(n: usize) -> Vec<RecordMeta> {
        (0..n)
            .map(|i| RecordMeta {
                id: format!("r{i}"),
                label: Some(i % 2),
                group: GroupTag::FamiliarTest,
                novelty: None,
            })
            .collect()
    }

    #[test]
    fn zero_output_weights_expose_the_biases() {
        let mut m = MlpModel::init(base(), 0).unwrap();
        m.output.weight.fill(0.0);
        m.output.bias = array![0.3, -0.2, -1.0, -4.0];
        m.set_mode(Mode::Eval);
        let (mu, lv) = bayes_forward(&m, inputs(5, 1).view()).unwrap();
        assert_eq!(mu.dim(), (5, 2));
        assert_eq!(lv.dim(), (5, 2));
        for i in 0..5 {
            assert_eq!(mu.row(i).to_vec(), vec![0.3, -0.2]);
            assert_eq!(lv.row(i).to_vec(), vec![-1.0, -4.0]);
        }
        let plain = MlpModel::init(MlpConfig { aleatoric_head: false, ..base() }, 0).unwrap();
        assert!(bayes_forward(&plain, inputs(2, 1).view()).is_err());
    }

    #[test]
    fn vanishing_variance_reduces_to_cross_entropy() {
        let mu = array![[1.0, -0.5], [0.2, 0.4], [-1.0, 1.5]];
        let lv = Array2::from_elem((3, 2), -20.0);
        let labels = [0, 1, 0];
        let ce = softmax_cross_entropy(mu.view(), &labels).0;
        let l = bayes_loss(mu.view(), lv.view(), &labels, 1000, 4);
        assert!((l - ce).abs() < 1e-6, "{l} vs {ce}");
    }

    #[test]
    fn single_draw_is_cross_entropy_on_the_sample() {
        let mu = array![[1.0, -0.5, 0.3], [0.2, 0.4, -2.0]];
        let lv = array![[0.0, -1.0, 0.5], [0.3, 0.1, -0.2]];
        let labels = [2, 0];
        let l = bayes_loss(mu.view(), lv.view(), &labels, 1, 99);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let noise = draw_noise(1, 2, 3, &mut rng);
        let z = Array2::from_shape_fn((2, 3), |(i, k)| {
            mu[[i, k]] + (0.5 * lv[[i, k]]).exp() * noise[[0, i, k]]
        });
        let expected = (0..2)
            .map(|i| -log_softmax(&z.row(i).to_vec(), 1.0)[labels[i]])
            .sum::<f64>()
            / 2.0;
        assert!((l - expected).abs() < 1e-12);
    }

    #[test]
    fn sampled_loss_agrees_with_independent_monte_carlo() {
        let mu = array![[0.5, -0.3, 0.1], [1.2, 0.0, -0.4], [-0.2, 0.9, 0.3]];
        let lv = array![[0.4, 0.0, -0.3], [0.8, 0.2, 0.5], [-0.1, 0.6, 0.0]];
        let labels = [0, 2, 1];
        let l = bayes_loss(mu.view(), lv.view(), &labels, 1000, 1);
        // oracle: each row's expected softmax estimated from 10^5 fresh draws;
        // the loss error is propagated through the delta method
        let mut rng = ChaCha8Rng::seed_from_u64(12345);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut oracle = 0.0;
        let mut var = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let draws = 1000;
            let vals: Vec<f64> = (0..draws)
                .map(|_| {
                    let z: Vec<f64> = (0..3)
                        .map(|k| mu[[i, k]] + (0.5 * lv[[i, k]]).exp() * normal.sample(&mut rng))
                        .collect();
                    softmax(&z, 1.0)[y]
                })
                .collect();
            let m = vals.iter().sum::<f64>() / draws as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (draws - 1) as f64;
            oracle -= m.ln();
            // both estimates carry this variance
            var += 2.0 * v / draws as f64 / (m * m);
        }
        oracle /= 3.0;
        let se = var.sqrt() / 3.0;
        assert!((l - oracle).abs() < 3.0 * se, "{l} vs {oracle} (se {se})");
    }

    #[test]
    fn loss_gradient_matches_finite_differences_with_frozen_noise() {
        let mu = array![[0.5, -0.3, 0.1], [1.2, 0.0, -0.4]];
        let lv = array![[0.4, 0.0, -0.3], [0.8, 0.2, 0.5]];
        let labels = [0, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = draw_noise(7, 2, 3, &mut rng);
        let (_, dmu, dlv) = bayes_loss_grad(mu.view(), lv.view(), &labels, &noise);
        let h = 1e-6;
        for (which, analytic) in [(0, &dmu), (1, &dlv)] {
            for i in 0..2 {
                for k in 0..3 {
                    let eval = |delta: f64| {
                        let (mut a, mut b) = (mu.clone(), lv.clone());
                        if which == 0 { a[[i, k]] += delta } else { b[[i, k]] += delta }
                        bayes_loss_grad(a.view(), b.view(), &labels, &noise).0
                    };
                    let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                    assert!((numeric - analytic[[i, k]]).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn no_stochasticity_matches_plain_prediction() {
        let mut m = MlpModel::init(base(), 2).unwrap();
        m.output.weight.slice_mut(s![.., 2..]).fill(0.0);
        m.output.bias.slice_mut(s![2..]).fill(-30.0);
        m.set_mode(Mode::Eval);
        let x = inputs(6, 3);
        let cfg = BayesConfig { dropout_rate: 0.0, ..BayesConfig::default() };
        let p = bayes_predict(&m, x.view(), &meta(6), &cfg, 1.0, 0).unwrap();
        let logits = m.logits(x.view()).unwrap();
        for i in 0..6 {
            let direct = softmax(&logits.row(i).to_vec(), 1.0);
            for k in 0..2 {
                assert!((p.row(i)[k] - direct[k]).abs() < 1e-6);
            }
        }
    }

    fn mc_model(seed: u64, logvar: f64) -> MlpModel {
        let cfg = BayesConfig::default().network(&base());
        let mut m = MlpModel::init(cfg, seed).unwrap();
        m.output.weight.slice_mut(s![.., 2..]).fill(0.0);
        m.output.bias.slice_mut(s![2..]).fill(logvar);
        m.set_mode(Mode::Eval);
        m
    }

    #[test]
    fn predictions_are_reproducible_and_normalised() {
        let m = mc_model(4, -1.0);
        let x = inputs(8, 5);
        let cfg = BayesConfig { mc_dropout_samples: 1, logit_noise_samples: 1, ..BayesConfig::default() };
        let a = bayes_predict(&m, x.view(), &meta(8), &cfg, 1.0, 7).unwrap();
        let b = bayes_predict(&m, x.view(), &meta(8), &cfg, 1.0, 7).unwrap();
        assert_eq!(a, b);
        let full = bayes_predict(&m, x.view(), &meta(8), &BayesConfig::default(), 1.0, 7).unwrap();
        for i in 0..8 {
            assert!((full.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fast_and_generic_dropout_paths_agree_in_distribution() {
        // the trunk-reuse path must sample the same predictive distribution
        // as full MC-dropout forward passes
        let m = mc_model(8, -1.0);
        let x = inputs(1, 6);
        let cfg = BayesConfig { mc_dropout_samples: 4000, logit_noise_samples: 1, ..BayesConfig::default() };
        let fast = McSamples::draw(&m, x.view(), &cfg, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut mean_generic = 0.0;
        for _ in 0..4000 {
            mean_generic += m.forward_pass(x.view(), Pass::MC_DROPOUT, Some(&mut rng)).unwrap().output[[0, 0]];
        }
        mean_generic /= 4000.0;
        let mean_fast = fast.mu.iter().map(|a| a[[0, 0]]).sum::<f64>() / 4000.0;
        let spread = fast.mu.iter().map(|a| (a[[0, 0]] - mean_fast).powi(2)).sum::<f64>() / 3999.0;
        assert!((mean_fast - mean_generic).abs() < 4.0 * (2.0 * spread / 4000.0).sqrt() + 1e-12);
    }

    #[test]
    fn more_dropout_samples_shrink_run_to_run_spread() {
        let m = mc_model(9, -30.0);
        let x = inputs(4, 7);
        let spread = |sd: usize| {
            let cfg = BayesConfig { mc_dropout_samples: sd, logit_noise_samples: 1, ..BayesConfig::default() };
            let runs: Vec<Array2<f64>> = (0..50)
                .map(|seed| McSamples::draw(&m, x.view(), &cfg, seed).unwrap().probabilities(1.0))
                .collect();
            let mean = runs.iter().fold(Array2::<f64>::zeros((4, 2)), |a, r| a + r) / 50.0;
            let var = runs.iter().map(|r| (r - &mean).mapv(|v| v * v).sum()).sum::<f64>() / 49.0;
            var.sqrt()
        };
        let ratio = spread(1) / spread(100);
        assert!((6.0..16.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn averaging_stays_within_per_sample_bounds() {
        let m = mc_model(10, -1.0);
        let x = inputs(5, 8);
        let cfg = BayesConfig { mc_dropout_samples: 5, logit_noise_samples: 3, ..BayesConfig::default() };
        let mc = McSamples::draw(&m, x.view(), &cfg, 3).unwrap();
        let avg = mc.probabilities(1.0);
        for i in 0..5 {
            let mut per_sample = Vec::new();
            for (mu, sigma) in mc.mu.iter().zip(&mc.sigma) {
                for s in 0..3 {
                    let z: Vec<f64> = (0..2).map(|k| mu[[i, k]] + sigma[[i, k]] * mc.noise[[s, i, k]]).collect();
                    per_sample.push(softmax(&z, 1.0));
                }
            }
            for k in 0..2 {
                let lo = per_sample.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
                let hi = per_sample.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
                assert!(avg[[i, k]] >= lo - 1e-12 && avg[[i, k]] <= hi + 1e-12);
            }
            let peak = per_sample.iter().map(|p| max_value(p)).fold(0.0, f64::max);
            assert!(max_value(&avg.row(i).to_vec()) <= peak + 1e-12);
        }
    }

    #[test]
    fn temperature_placements_differ_only_with_noise() {
        let m = mc_model(11, -1.0);
        let x = inputs(3, 9);
        let before = BayesConfig::default();
        let after = BayesConfig { temperature_placement: TemperaturePlacement::AfterNoise, ..before.clone() };
        let a = McSamples::draw(&m, x.view(), &before, 1).unwrap();
        let b = McSamples::draw(&m, x.view(), &after, 1).unwrap();
        assert_eq!(a.probabilities(1.0), b.probabilities(1.0));
        assert_ne!(a.probabilities(2.0), b.probabilities(2.0));
    }
}
