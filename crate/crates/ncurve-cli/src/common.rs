//! Helpers shared by the subcommands.

use std::path::{Path, PathBuf};

use ncurve::{
    write_canonical, ModelFile, NCurveError, NCurveMixture, Result, SequenceDataset,
};

/// Flags every subcommand honors.
pub struct Globals {
    pub seed: Option<u64>,
    pub quiet: bool,
    pub out: Option<PathBuf>,
}

impl Globals {
    pub fn seed_or(&self, default: u64) -> u64 {
        self.seed.unwrap_or(default)
    }

    pub fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }

    pub fn note(&self, msg: std::fmt::Arguments) {
        if !self.quiet {
            println!("{msg}");
        }
    }
}

/// Serialize any value as canonical JSON (sorted keys, integers kept exact,
/// floats at 17 significant digits) and write it with a trailing newline.
/// Identical inputs always produce byte-identical files.
pub fn write_canonical_file<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let v = serde_json::to_value(value)?;
    let mut s = String::new();
    write_canonical(&v, &mut s)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

/// The model's stored mixture expressed in original data units (undoing the
/// training-time standardization when the model carries one).
pub fn static_mixture_in_data_units(model: &ModelFile) -> Result<NCurveMixture> {
    let mixture = model.to_mixture()?;
    match &model.config.scale {
        Some(scale) => scale.inverse_mixture(&mixture),
        None => Ok(mixture),
    }
}

/// Map a freshly predicted mixture back into data units.
pub fn unscale_mixture(model: &ModelFile, mixture: NCurveMixture) -> Result<NCurveMixture> {
    match &model.config.scale {
        Some(scale) => scale.inverse_mixture(&mixture),
        None => Ok(mixture),
    }
}

/// Build encoder input vectors from a dataset: the first `m_obs` points of
/// every sequence (standardized the same way the model was trained), flattened
/// row by row, followed by the per-sequence conditioning channel when present.
/// The dataset only needs `m_obs` points per sequence, not the full horizon.
pub fn encoder_inputs(
    model: &ModelFile,
    ds: &SequenceDataset,
    m_obs: usize,
) -> Result<Vec<Vec<f64>>> {
    let n = ds.n();
    if n < m_obs {
        return Err(NCurveError::Invalid {
            what: "observations",
            msg: format!(
                "model expects m = {m_obs} observed points per sequence, \
                 the observation file provides only {n}"
            ),
        });
    }
    if ds.d() != model.d {
        return Err(NCurveError::DimensionMismatch {
            what: "observation dimension vs model",
            expected: model.d,
            got: ds.d(),
        });
    }
    let input_dim = model
        .encoder
        .as_ref()
        .map(|e| e.input_dim)
        .ok_or_else(|| NCurveError::InvalidModel("model has no encoder".into()))?;
    let ctrl_len = input_dim - (m_obs * model.d).min(input_dim);
    if ctrl_len > 0 && ds.control.is_none() {
        return Err(NCurveError::Invalid {
            what: "observations",
            msg: format!(
                "model was trained with a conditioning channel of length {ctrl_len}, \
                 the observation file has none"
            ),
        });
    }
    let scale = model.config.scale.as_ref();
    let mut inputs = Vec::with_capacity(ds.m());
    for (j, seq) in ds.sequences.iter().enumerate() {
        let mut input = Vec::with_capacity(input_dim);
        for x in &seq[..m_obs] {
            match scale {
                Some(s) => input.extend(s.forward_point(x)?.iter()),
                None => input.extend(x.iter()),
            }
        }
        if ctrl_len > 0 {
            let ctrl = &ds.control.as_ref().unwrap()[j];
            if ctrl.len() != ctrl_len {
                return Err(NCurveError::DimensionMismatch {
                    what: "conditioning channel length",
                    expected: ctrl_len,
                    got: ctrl.len(),
                });
            }
            input.extend_from_slice(ctrl);
        }
        if input.len() != input_dim {
            return Err(NCurveError::DimensionMismatch {
                what: "encoder input length",
                expected: input_dim,
                got: input.len(),
            });
        }
        inputs.push(input);
    }
    Ok(inputs)
}

/// `path` with its final extension replaced by `ext` (e.g. model.json ->
/// model.trace.csv for ext "trace.csv").
pub fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}
