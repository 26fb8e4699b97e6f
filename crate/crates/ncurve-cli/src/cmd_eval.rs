//! `ncurve eval` — score a model against ground-truth sequences and write
//! the evaluation report.

use std::path::PathBuf;

use clap::Args;
use ncurve::{
    aggregate, evaluate, load_sequences, predict, score_sequence, IndexGrid, ModelFile,
    NCurveError, Result,
};

use crate::common::{
    encoder_inputs, static_mixture_in_data_units, unscale_mixture, write_canonical_file, Globals,
};

#[derive(Args)]
pub struct EvalArgs {
    /// Model file written by `ncurve fit`
    pub model: PathBuf,

    /// Ground-truth sequences (JSONL or CSV), length must match the model's n
    pub data: PathBuf,
}

pub fn run(globals: &Globals, args: &EvalArgs) -> Result<()> {
    let model = ModelFile::load(&args.model)?;
    let ds = load_sequences(&args.data)?;
    if ds.n() != model.config.n {
        return Err(NCurveError::DimensionMismatch {
            what: "sequence length vs model grid",
            expected: model.config.n,
            got: ds.n(),
        });
    }
    let grid = IndexGrid::uniform(model.config.n)?;

    let report = if model.is_conditional() {
        let m_obs = model.config.m_obs.expect("validated conditional model has m_obs");
        let inputs = encoder_inputs(&model, &ds, m_obs)?;
        let cond = model.to_conditional()?;
        let mut scores = Vec::with_capacity(ds.m());
        for (input, seq) in inputs.iter().zip(&ds.sequences) {
            let mixture = unscale_mixture(&model, predict(&cond, input)?)?;
            scores.push(score_sequence(&mixture, &grid, seq)?);
        }
        aggregate(scores)?
    } else {
        let mixture = static_mixture_in_data_units(&model)?;
        evaluate(&mixture, &grid, &ds.sequences)?
    };

    let out = globals.out_or("report.json");
    write_canonical_file(&out, &report)?;
    if !globals.quiet {
        println!("FDE={} NLL={} RMSE={}", report.fde, report.nll, report.rmse);
    }
    globals.note(format_args!("wrote {}", out.display()));
    Ok(())
}
