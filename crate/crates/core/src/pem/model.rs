use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::salient::{SalientVector, SALIENT_DIM};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, Standardizer};
use crate::numerics::{clamp_prob, logit};

pub const PEM_FORMAT_VERSION: u32 = 1;
const PEM_FORMAT_TAG: &str = "pemrisk-pem";

/// Hidden layer widths plus activation; the output is always one sigmoid
/// unit. No hidden layers makes a logistic regressor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    /// Three ReLU layers of 20 units.
    pub fn pem() -> Self {
        Self { hidden: vec![20, 20, 20], activation: Activation::Relu }
    }

    pub fn logistic() -> Self {
        Self { hidden: Vec::new(), activation: Activation::Relu }
    }

    /// Two ReLU layers of 32 units.
    pub fn proposal() -> Self {
        Self { hidden: vec![32, 32], activation: Activation::Relu }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::Parameter("hidden layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Anything that turns salient variables into a detection probability.
pub trait PerceptionModel: Sync {
    fn detect_probability(&self, salient: &SalientVector) -> Result<f64>;
}

/// Learned surrogate `f(g(s))`: standardization, MLP, clamped sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct PemModel {
    spec: MlpSpec,
    net: Mlp,
    standardizer: Standardizer,
}

#[derive(Serialize, Deserialize)]
struct PemFile {
    format: String,
    version: u32,
    spec: MlpSpec,
    layer_sizes: Vec<usize>,
    params: Vec<f64>,
    input_mean: Vec<f64>,
    input_std: Vec<f64>,
}

impl PemModel {
    pub fn new(spec: MlpSpec, net: Mlp, standardizer: Standardizer) -> Result<Self> {
        spec.validate()?;
        if net.sizes()[1..net.sizes().len() - 1] != spec.hidden[..] {
            return Err(Error::Schema("network shape disagrees with spec".into()));
        }
        if standardizer.dim() != net.input_dim() {
            return Err(Error::Schema("standardizer width disagrees with network input".into()));
        }
        Ok(Self { spec, net, standardizer })
    }

    /// Logistic model `sigmoid(w . x + b)` on raw (unstandardized) inputs.
    pub fn logistic(weights: &[f64], bias: f64) -> Self {
        let mut params = weights.to_vec();
        params.push(bias);
        let net = Mlp::from_parts(vec![weights.len(), 1], Activation::Relu, params)
            .expect("logistic shape is valid");
        Self { spec: MlpSpec::logistic(), net, standardizer: Standardizer::identity(weights.len()) }
    }

    /// Logistic salient-space model depending only on obstacle distance:
    /// `sigmoid(bias + slope * z)`.
    pub fn distance_logistic(bias: f64, slope: f64) -> Self {
        let mut w = [0.0; SALIENT_DIM];
        w[SalientVector::Z_INDEX] = slope;
        Self::logistic(&w, bias)
    }

    /// Salient-space model returning `p` everywhere (after clamping).
    pub fn constant(p: f64) -> Self {
        Self::logistic(&[0.0; SALIENT_DIM], logit(clamp_prob(p)))
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Probability in `[eps, 1 - eps]` for a raw feature vector.
    pub fn eval(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.input_dim() {
            return Err(Error::Schema(format!(
                "model expects {} features, got {}",
                self.input_dim(),
                features.len()
            )));
        }
        Ok(self.net.prob(&self.standardizer.apply(features)))
    }

    pub fn save<W: Write>(&self, writer: W) -> Result<()> {
        let file = PemFile {
            format: PEM_FORMAT_TAG.into(),
            version: PEM_FORMAT_VERSION,
            spec: self.spec.clone(),
            layer_sizes: self.net.sizes().to_vec(),
            params: self.net.params().to_vec(),
            input_mean: self.standardizer.mean.clone(),
            input_std: self.standardizer.std.clone(),
        };
        serde_json::to_writer_pretty(writer, &file)?;
        Ok(())
    }

    pub fn load<R: Read>(reader: R) -> Result<Self> {
        let file: PemFile = serde_json::from_reader(reader)?;
        if file.format != PEM_FORMAT_TAG {
            return Err(Error::Schema(format!("not a PEM file (format `{}`)", file.format)));
        }
        if file.version != PEM_FORMAT_VERSION {
            return Err(Error::Schema(format!("unsupported PEM file version {}", file.version)));
        }
        let net = Mlp::from_parts(file.layer_sizes, file.spec.activation, file.params)?;
        if file.input_std.iter().any(|s| *s <= 0.0) {
            return Err(Error::Schema("input deviations must be positive".into()));
        }
        let st = Standardizer { mean: file.input_mean, std: file.input_std };
        Self::new(file.spec, net, st)
    }
}

impl PerceptionModel for PemModel {
    fn detect_probability(&self, salient: &SalientVector) -> Result<f64> {
        self.eval(salient.as_slice())
    }
}

/// Detection probability of `model` at `salient`.
pub fn pem_eval(model: &PemModel, salient: &SalientVector) -> Result<f64> {
    model.detect_probability(salient)
}
