use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{BatchNorm, Dense, HiddenLayer, MlpConfig, MlpModel, Mode};
use crate::error::{Error, Result};

pub const WEIGHTS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseDocument {
    /// `[fan_in, fan_out]`
    pub shape: [usize; 2],
    /// Row-major weights.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormDocument {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenDocument {
    pub dense: DenseDocument,
    pub batchnorm: Option<BatchNormDocument>,
}

/// Serialized form of an [`MlpModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsDocument {
    pub format_version: u32,
    pub config: MlpConfig,
    pub seed: u64,
    pub hidden: Vec<HiddenDocument>,
    pub output: DenseDocument,
}

fn dense_doc(d: &Dense) -> DenseDocument {
    DenseDocument {
        shape: [d.weight.nrows(), d.weight.ncols()],
        weight: d.weight.iter().copied().collect(),
        bias: d.bias.to_vec(),
    }
}

fn dense_from(doc: &DenseDocument, fan_in: usize, fan_out: usize, what: &str) -> Result<Dense> {
    if doc.shape != [fan_in, fan_out] || doc.bias.len() != fan_out {
        return Err(Error::shape(format!(
            "{what}: stored shape {:?} does not match configured [{fan_in}, {fan_out}]",
            doc.shape
        )));
    }
    let weight = Array2::from_shape_vec((fan_in, fan_out), doc.weight.clone())
        .map_err(|e| Error::shape(format!("{what}: {e}")))?;
    Ok(Dense {
        weight,
        bias: Array1::from(doc.bias.clone()),
    })
}

impl WeightsDocument {
    pub fn from_model(model: &MlpModel) -> Self {
        WeightsDocument {
            format_version: WEIGHTS_FORMAT_VERSION,
            config: model.config.clone(),
            seed: model.seed,
            hidden: model
                .hidden
                .iter()
                .map(|l| HiddenDocument {
                    dense: dense_doc(&l.dense),
                    batchnorm: l.norm.as_ref().map(|bn| BatchNormDocument {
                        gamma: bn.gamma.to_vec(),
                        beta: bn.beta.to_vec(),
                        running_mean: bn.running_mean.to_vec(),
                        running_var: bn.running_var.to_vec(),
                    }),
                })
                .collect(),
            output: dense_doc(&model.output),
        }
    }

    /// Rebuilds the model (in eval mode), checking every shape against the
    /// stored config.
    pub fn into_model(self) -> Result<MlpModel> {
        if self.format_version != WEIGHTS_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported weights format version {}",
                self.format_version
            )));
        }
        let config = self.config;
        config.validate()?;
        if self.hidden.len() != config.hidden_widths.len() {
            return Err(Error::shape(format!(
                "{} hidden layers stored, config has {}",
                self.hidden.len(),
                config.hidden_widths.len()
            )));
        }
        let mut fan_in = config.input_dim;
        let mut hidden = Vec::with_capacity(self.hidden.len());
        for (i, (doc, &width)) in self.hidden.iter().zip(&config.hidden_widths).enumerate() {
            let dense = dense_from(&doc.dense, fan_in, width, &format!("hidden layer {i}"))?;
            let norm = match (&doc.batchnorm, config.use_batchnorm) {
                (Some(bn), true) => {
                    let lens = [bn.gamma.len(), bn.beta.len(), bn.running_mean.len(), bn.running_var.len()];
                    if lens.iter().any(|&n| n != width) {
                        return Err(Error::shape(format!("hidden layer {i}: batchnorm width")));
                    }
                    if bn.running_var.iter().any(|&v| !(v > 0.0)) {
                        return Err(Error::invalid(format!(
                            "hidden layer {i}: running variance must be positive"
                        )));
                    }
                    Some(BatchNorm {
                        gamma: Array1::from(bn.gamma.clone()),
                        beta: Array1::from(bn.beta.clone()),
                        running_mean: Array1::from(bn.running_mean.clone()),
                        running_var: Array1::from(bn.running_var.clone()),
                    })
                }
                (None, false) => None,
                _ => {
                    return Err(Error::shape(format!(
                        "hidden layer {i}: batchnorm presence disagrees with config"
                    )))
                }
            };
            hidden.push(HiddenLayer { dense, norm });
            fan_in = width;
        }
        let output = dense_from(&self.output, fan_in, config.output_dim(), "output layer")?;
        Ok(MlpModel {
            config,
            seed: self.seed,
            hidden,
            output,
            mode: Mode::Eval,
        })
    }
}

pub fn save_model(model: &MlpModel, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&WeightsDocument::from_model(model))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: WeightsDocument = serde_json::from_str(&text)?;
    doc.into_model()
}
