//! Model persistence: a versioned JSON file holding either a realized
//! mixture or a conditioning encoder, written in a canonical form (sorted
//! keys, fixed 17-significant-digit float formatting) so identical models
//! produce identical bytes.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::curve::{NCurve, NCurveMixture};
use crate::datagen::ScaleParams;
use crate::error::{NCurveError, Result};
use crate::gaussian::GaussianDist;
use crate::train::encoder::{Activation, Encoder};
use crate::train::fit::ConditionalModel;
use crate::train::layout::{CovMode, ParamLayout};
use crate::train::loss::LossReduction;

pub const MODEL_VERSION: u32 = 1;

pub fn cov_mode_name(mode: CovMode) -> &'static str {
    match mode {
        CovMode::Diagonal => "diagonal",
        CovMode::Full => "full",
    }
}

pub fn cov_mode_from_name(name: &str) -> Result<CovMode> {
    match name {
        "diagonal" => Ok(CovMode::Diagonal),
        "full" => Ok(CovMode::Full),
        other => Err(NCurveError::InvalidModel(format!("unknown cov_mode '{other}'"))),
    }
}

pub fn reduction_name(reduction: LossReduction) -> &'static str {
    match reduction {
        LossReduction::SumOverSteps => "sum_over_steps",
        LossReduction::MeanOverSteps => "mean_over_steps",
    }
}

pub fn reduction_from_name(name: &str) -> Result<LossReduction> {
    match name {
        "sum_over_steps" => Ok(LossReduction::SumOverSteps),
        "mean_over_steps" => Ok(LossReduction::MeanOverSteps),
        other => Err(NCurveError::InvalidModel(format!("unknown loss reduction '{other}'"))),
    }
}

/// One stored component: control-point means (controls x d) and covariances
/// (controls x d*d, row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentFile {
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<f64>>,
}

/// Stored conditioning network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderFile {
    pub activation: String,
    pub hidden_sizes: Vec<usize>,
    pub input_dim: usize,
    pub output_dim: usize,
    pub params: Vec<f64>,
}

/// Training settings echoed into the file so downstream commands can reuse
/// them without being told twice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfigEcho {
    pub n: usize,
    pub loss_reduction: String,
    pub learning_rate: f64,
    pub iters: usize,
    pub batch_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_obs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<ScaleParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
}

/// The on-disk model. Unconditional fits store the realized mixture in
/// `weights`/`components`; conditional fits store the encoder instead and
/// leave those empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub seed: u64,
    pub d: usize,
    pub degree: usize,
    pub k: usize,
    pub cov_mode: String,
    pub weights: Vec<f64>,
    pub components: Vec<ComponentFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<EncoderFile>,
    pub config: TrainConfigEcho,
}

impl ModelFile {
    pub fn from_mixture(
        mixture: &NCurveMixture,
        cov_mode: CovMode,
        seed: u64,
        config: TrainConfigEcho,
    ) -> Self {
        let components = mixture
            .components()
            .iter()
            .map(|c| ComponentFile {
                means: c.controls().iter().map(|g| g.mean().iter().copied().collect()).collect(),
                covariances: c
                    .controls()
                    .iter()
                    .map(|g| {
                        let cov = g.cov();
                        let d = cov.nrows();
                        let mut row = Vec::with_capacity(d * d);
                        for r in 0..d {
                            for cidx in 0..d {
                                row.push(cov[(r, cidx)]);
                            }
                        }
                        row
                    })
                    .collect(),
            })
            .collect();
        Self {
            version: MODEL_VERSION,
            seed,
            d: mixture.dim(),
            degree: mixture.degree(),
            k: mixture.k(),
            cov_mode: cov_mode_name(cov_mode).to_string(),
            weights: mixture.weights().to_vec(),
            components,
            encoder: None,
            config,
        }
    }

    pub fn from_conditional(model: &ConditionalModel, seed: u64, config: TrainConfigEcho) -> Self {
        let layout = &model.layout;
        let enc = &model.encoder;
        Self {
            version: MODEL_VERSION,
            seed,
            d: layout.d,
            degree: layout.controls - 1,
            k: layout.k,
            cov_mode: cov_mode_name(layout.cov_mode).to_string(),
            weights: Vec::new(),
            components: Vec::new(),
            encoder: Some(EncoderFile {
                activation: enc.activation().name().to_string(),
                hidden_sizes: enc.hidden_sizes().to_vec(),
                input_dim: enc.input_dim(),
                output_dim: enc.output_dim(),
                params: enc.params().to_vec(),
            }),
            config,
        }
    }

    pub fn is_conditional(&self) -> bool {
        self.encoder.is_some()
    }

    pub fn layout(&self) -> Result<ParamLayout> {
        ParamLayout::new(self.k, self.degree + 1, self.d, cov_mode_from_name(&self.cov_mode)?)
    }

    pub fn loss_reduction(&self) -> Result<LossReduction> {
        reduction_from_name(&self.config.loss_reduction)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(NCurveError::InvalidModel(format!(
                "unsupported model version {}, expected {MODEL_VERSION}",
                self.version
            )));
        }
        let layout = self.layout()?;
        if self.k == 0 || self.d == 0 {
            return Err(NCurveError::InvalidModel("k and d must be positive".into()));
        }
        if self.config.n < 2 {
            return Err(NCurveError::InvalidModel(format!(
                "config.n is {}, need at least 2 grid points",
                self.config.n
            )));
        }
        self.loss_reduction()?;
        if let Some(scale) = &self.config.scale {
            if scale.dim() != self.d {
                return Err(NCurveError::InvalidModel(format!(
                    "scale has dimension {}, model has {}",
                    scale.dim(),
                    self.d
                )));
            }
        }
        match &self.encoder {
            Some(enc) => {
                if !self.weights.is_empty() || !self.components.is_empty() {
                    return Err(NCurveError::InvalidModel(
                        "conditional model must not also carry a static mixture".into(),
                    ));
                }
                Activation::from_name(&enc.activation)
                    .map_err(|e| NCurveError::InvalidModel(e.to_string()))?;
                if enc.output_dim != layout.len() {
                    return Err(NCurveError::InvalidModel(format!(
                        "encoder output dimension {} does not match the {} mixture \
                         parameters implied by k/degree/d/cov_mode",
                        enc.output_dim,
                        layout.len()
                    )));
                }
                if self.config.m_obs.is_none() {
                    return Err(NCurveError::InvalidModel(
                        "conditional model must record config.m_obs".into(),
                    ));
                }
            }
            None => {
                if self.weights.len() != self.k || self.components.len() != self.k {
                    return Err(NCurveError::InvalidModel(format!(
                        "expected {} weights and components, found {} and {}",
                        self.k,
                        self.weights.len(),
                        self.components.len()
                    )));
                }
                let sum: f64 = self.weights.iter().sum();
                if self.weights.iter().any(|w| *w < 0.0) || (sum - 1.0).abs() > 1e-9 {
                    return Err(NCurveError::InvalidModel(format!(
                        "weights must be nonnegative and sum to 1 (sum = {sum})"
                    )));
                }
                for (ci, comp) in self.components.iter().enumerate() {
                    if comp.means.len() != self.degree + 1
                        || comp.covariances.len() != self.degree + 1
                    {
                        return Err(NCurveError::InvalidModel(format!(
                            "component {ci} must have {} control points",
                            self.degree + 1
                        )));
                    }
                    for (pi, (mean, cov)) in
                        comp.means.iter().zip(&comp.covariances).enumerate()
                    {
                        if mean.len() != self.d || cov.len() != self.d * self.d {
                            return Err(NCurveError::InvalidModel(format!(
                                "component {ci} control {pi} has wrong mean or \
                                 covariance size for d = {}",
                                self.d
                            )));
                        }
                        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
                            return Err(NCurveError::InvalidModel(format!(
                                "component {ci} control {pi} contains non-finite values"
                            )));
                        }
                    }
                }
                // positive definiteness is enforced during reconstruction
                self.to_mixture()?;
            }
        }
        Ok(())
    }

    /// Rebuild the stored mixture. Fails for conditional models.
    pub fn to_mixture(&self) -> Result<NCurveMixture> {
        if self.is_conditional() {
            return Err(NCurveError::InvalidModel(
                "model stores an encoder, not a static mixture; use to_conditional".into(),
            ));
        }
        let components = self
            .components
            .iter()
            .map(|comp| {
                let controls = comp
                    .means
                    .iter()
                    .zip(&comp.covariances)
                    .map(|(mean, cov)| {
                        let g = GaussianDist::new(
                            DVector::from_row_slice(mean),
                            DMatrix::from_row_slice(self.d, self.d, cov),
                        )?;
                        // reject indefinite covariances at load time
                        g.log_density(g.mean())?;
                        Ok(g)
                    })
                    .collect::<Result<Vec<_>>>()?;
                NCurve::new(controls)
            })
            .collect::<Result<Vec<_>>>()?;
        NCurveMixture::new(self.weights.clone(), components)
    }

    /// Rebuild the stored encoder. Fails for unconditional models.
    pub fn to_conditional(&self) -> Result<ConditionalModel> {
        let enc = self.encoder.as_ref().ok_or_else(|| {
            NCurveError::InvalidModel(
                "model stores a static mixture, not an encoder; use to_mixture".into(),
            )
        })?;
        let layout = self.layout()?;
        let encoder = Encoder::from_parts(
            enc.input_dim,
            enc.output_dim,
            enc.hidden_sizes.clone(),
            Activation::from_name(&enc.activation)?,
            enc.params.clone(),
        )?;
        Ok(ConditionalModel { encoder, layout })
    }

    pub fn to_canonical_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        let mut out = String::new();
        write_canonical(&value, &mut out)?;
        out.push('\n');
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        std::fs::write(path, self.to_canonical_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let model: ModelFile = serde_json::from_str(&text).map_err(|e| NCurveError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        model.validate()?;
        Ok(model)
    }
}

/// Serialize a JSON value canonically: object keys sorted, floats always in
/// scientific notation with 17 significant digits (exact for every f64),
/// integers kept as integers, no insignificant whitespace.
pub fn write_canonical(value: &serde_json::Value, out: &mut String) -> Result<()> {
    use serde_json::Value;
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else {
                let f = n.as_f64().ok_or_else(|| {
                    NCurveError::InvalidModel(format!("non-representable number {n}"))
                })?;
                if !f.is_finite() {
                    return Err(NCurveError::InvalidModel(
                        "non-finite numbers cannot be stored".into(),
                    ));
                }
                out.push_str(&format!("{f:.16e}"));
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s)?),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out)?;
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(key)?);
                out.push(':');
                write_canonical(&map[*key], out)?;
            }
            out.push('}');
        }
    }
    Ok(())
}
