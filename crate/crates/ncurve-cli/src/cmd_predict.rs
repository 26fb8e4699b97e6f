//! `ncurve predict` — evaluate a model's mixture on an index grid and write
//! the per-step parameters as JSON plus the most likely trajectory as CSV.

use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use ncurve::{
    load_sequences, predict, IndexGrid, ModelFile, NCurveError, NCurveMixture, Result,
};
use serde_json::json;

use crate::common::{encoder_inputs, sibling, static_mixture_in_data_units, unscale_mixture, Globals};

#[derive(Args)]
pub struct PredictArgs {
    /// Model file written by `ncurve fit`
    pub model: PathBuf,

    /// Observation file (JSONL or CSV); required for conditional models,
    /// only the first sequence is used
    #[arg(long)]
    pub obs: Option<PathBuf>,

    /// Number of output grid points (default: the model's training n)
    #[arg(long)]
    pub n_pred: Option<usize>,
}

/// Resolve the mixture a model implies, conditioning on the first sequence
/// of the observation file when the model has an encoder.
pub fn resolve_mixture(
    model: &ModelFile,
    obs: Option<&PathBuf>,
    quiet: bool,
) -> Result<NCurveMixture> {
    if model.is_conditional() {
        let path = obs.ok_or_else(|| NCurveError::Invalid {
            what: "observations",
            msg: "this model is conditional; pass --obs <FILE> with the observed prefix".into(),
        })?;
        let ds = load_sequences(path)?;
        let m_obs = model.config.m_obs.expect("validated conditional model has m_obs");
        let inputs = encoder_inputs(model, &ds, m_obs)?;
        let cond = model.to_conditional()?;
        let mixture = predict(&cond, &inputs[0])?;
        unscale_mixture(model, mixture)
    } else {
        if obs.is_some() && !quiet {
            eprintln!("note: model is unconditional; --obs is ignored");
        }
        static_mixture_in_data_units(model)
    }
}

pub fn run(globals: &Globals, args: &PredictArgs) -> Result<()> {
    let model = ModelFile::load(&args.model)?;
    let n_pred = args.n_pred.unwrap_or(model.config.n);
    let grid = IndexGrid::uniform(n_pred)?;
    let mixture = resolve_mixture(&model, args.obs.as_ref(), globals.quiet)?;

    let mut steps = Vec::with_capacity(grid.len());
    for &t in grid.values() {
        let (weights, gaussians) = mixture.at(t)?;
        let components: Vec<_> = weights
            .iter()
            .zip(&gaussians)
            .map(|(w, g)| {
                let d = g.dim();
                let cov: Vec<Vec<f64>> = (0..d)
                    .map(|r| (0..d).map(|c| g.cov()[(r, c)]).collect())
                    .collect();
                json!({
                    "weight": w,
                    "mean": g.mean().iter().copied().collect::<Vec<f64>>(),
                    "covariance": cov,
                })
            })
            .collect();
        steps.push(json!({ "t": t, "components": components }));
    }
    let doc = json!({
        "weights": mixture.weights(),
        "grid": grid.values(),
        "steps": steps,
    });

    let out = globals.out_or("prediction.json");
    crate::common::write_canonical_file(&out, &doc)?;

    let traj_path = sibling(&out, "traj.csv");
    let best = &mixture.components()[mixture.argmax_weight()];
    let mut f = std::io::BufWriter::new(std::fs::File::create(&traj_path)?);
    write!(f, "t")?;
    for a in 0..mixture.dim() {
        write!(f, ",x{a}")?;
    }
    writeln!(f)?;
    for &t in grid.values() {
        let mean = best.mean_at(t)?;
        write!(f, "{t}")?;
        for v in mean.iter() {
            write!(f, ",{v}")?;
        }
        writeln!(f)?;
    }
    f.flush()?;

    globals.note(format_args!("wrote {}", out.display()));
    globals.note(format_args!("wrote {}", traj_path.display()));
    Ok(())
}
