//! `ncurve fit` — maximum-likelihood fit of a curve mixture, unconditional
//! or conditioned on an observed prefix, written as a model file plus a loss
//! trace CSV.

use std::path::PathBuf;

use clap::Args;
use ncurve::{
    fit_conditional, fit_unconditional, load_sequences, make_pairs, reduction_name,
    write_trace_csv, Activation, EncoderConfig, FitConfig, InitStrategy, LossReduction,
    ModelFile, NCurveError, Result, ScaleParams, TrainConfigEcho,
};

use crate::common::{sibling, Globals};

#[derive(Args)]
pub struct FitArgs {
    /// Training sequences (JSONL, or CSV with seq_id/step/coordinate columns)
    pub data: PathBuf,

    /// Number of mixture components
    #[arg(long, default_value_t = 1)]
    pub k: usize,

    /// Control points per component (degree + 1)
    #[arg(long, default_value_t = 4)]
    pub controls: usize,

    /// Optimizer iterations
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,

    /// Adam learning rate
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,

    /// Extra iterations at one tenth of --lr after the main loop, to settle
    /// the iterate (unconditional fits only)
    #[arg(long, default_value_t = 0)]
    pub polish_iters: usize,

    /// Minibatch size (0 = full batch)
    #[arg(long, default_value_t = 0)]
    pub batch: usize,

    /// Independent restarts with consecutive seeds; the best final loss wins
    #[arg(long, default_value_t = 1)]
    pub starts: usize,

    /// Fit an observation-conditioned model on the first M_OBS points
    #[arg(long, value_name = "M_OBS")]
    pub conditional: Option<usize>,

    /// Force the full covariance parameterization even for d > 2
    #[arg(long)]
    pub full_cov: bool,

    /// Standardize each axis to [-1, 1] before fitting; the transform is
    /// stored in the model and undone on output
    #[arg(long)]
    pub scale: bool,

    /// Per-sequence loss reduction over steps: mean or sum
    #[arg(long, default_value = "mean")]
    pub reduction: String,

    /// Starting point construction: kmeans or spread
    #[arg(long, default_value = "kmeans")]
    pub init: String,

    /// Encoder hidden layer sizes for conditional fits, e.g. "64" or "64,32"
    #[arg(long, default_value = "64")]
    pub hidden: String,

    /// Loss trace CSV path (default: model path with a .trace.csv extension)
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

fn parse_reduction(name: &str) -> Result<LossReduction> {
    match name {
        "mean" => Ok(LossReduction::MeanOverSteps),
        "sum" => Ok(LossReduction::SumOverSteps),
        other => Err(NCurveError::Invalid {
            what: "loss reduction",
            msg: format!("expected 'mean' or 'sum', got '{other}'"),
        }),
    }
}

fn parse_init(name: &str) -> Result<InitStrategy> {
    match name {
        "kmeans" => Ok(InitStrategy::KMeans),
        "spread" => Ok(InitStrategy::Spread),
        other => Err(NCurveError::Invalid {
            what: "init strategy",
            msg: format!("expected 'kmeans' or 'spread', got '{other}'"),
        }),
    }
}

fn parse_hidden(list: &str) -> Result<Vec<usize>> {
    list.split(',')
        .map(|s| {
            s.trim().parse::<usize>().map_err(|_| NCurveError::Invalid {
                what: "hidden sizes",
                msg: format!("'{list}' is not a comma-separated list of layer sizes"),
            })
        })
        .collect()
}

pub fn run(globals: &Globals, args: &FitArgs) -> Result<()> {
    if args.starts == 0 {
        return Err(NCurveError::Invalid { what: "fit arguments", msg: "--starts must be >= 1".into() });
    }
    if args.polish_iters > 0 && args.conditional.is_some() {
        return Err(NCurveError::Invalid {
            what: "fit arguments",
            msg: "--polish-iters applies to unconditional fits only".into(),
        });
    }
    let reduction = parse_reduction(&args.reduction)?;
    let init_strategy = parse_init(&args.init)?;
    let base_seed = globals.seed_or(0);

    let ds = load_sequences(&args.data)?;
    let scale = if args.scale { Some(ScaleParams::fit(&ds.sequences)?) } else { None };
    let sequences = match &scale {
        Some(s) => s.forward_sequences(&ds.sequences)?,
        None => ds.sequences.clone(),
    };
    let n = ds.n();
    let grid = ncurve::IndexGrid::uniform(n)?;

    let mut cfg = FitConfig::new(args.k, args.controls, n);
    cfg.learning_rate = args.lr;
    cfg.max_iters = args.iters;
    cfg.batch_size = args.batch;
    cfg.loss_reduction = reduction;
    cfg.full_cov = args.full_cov;
    cfg.init_strategy = init_strategy;

    let model_path = globals.out_or("model.json");
    let trace_path = args.trace.clone().unwrap_or_else(|| sibling(&model_path, "trace.csv"));

    let echo = |iters: usize, m_obs: Option<usize>| TrainConfigEcho {
        n,
        loss_reduction: reduction_name(reduction).to_string(),
        learning_rate: args.lr,
        iters,
        batch_size: args.batch,
        m_obs,
        scale: scale.clone(),
        dataset: Some(args.data.display().to_string()),
    };

    let (model, trace) = match args.conditional {
        None => {
            let d = ds.d();
            let mut best: Option<(u64, ncurve::FitResult)> = None;
            for s in 0..args.starts {
                let mut c = cfg.clone();
                c.seed = base_seed + s as u64;
                let fit = fit_unconditional(&sequences, &grid, &c)?;
                let nll = fit.trace.last().copied().unwrap_or(f64::INFINITY);
                let better = best
                    .as_ref()
                    .is_none_or(|(_, b)| nll < b.trace.last().copied().unwrap_or(f64::INFINITY));
                if better {
                    best = Some((c.seed, fit));
                }
            }
            let (seed, mut fit) = best.expect("starts >= 1");
            if args.polish_iters > 0 {
                let mut c = cfg.clone();
                c.seed = seed;
                c.init = Some(fit.theta.clone());
                c.learning_rate = args.lr / 10.0;
                c.max_iters = args.polish_iters;
                let polished = fit_unconditional(&sequences, &grid, &c)?;
                fit.trace.extend(polished.trace);
                fit.mixture = polished.mixture;
                fit.theta = polished.theta;
            }
            globals.note(format_args!(
                "fit: final NLL = {}, weights = {:?}",
                fit.trace.last().copied().unwrap_or(f64::NAN),
                fit.mixture.weights()
            ));
            let total_iters = args.iters + args.polish_iters;
            let model = ModelFile::from_mixture(
                &fit.mixture,
                cfg.cov_mode(d),
                seed,
                echo(total_iters, None),
            );
            (model, fit.trace)
        }
        Some(m_obs) => {
            let pairs = make_pairs(&sequences, ds.control.as_deref(), m_obs)?;
            let enc_cfg = EncoderConfig {
                hidden_sizes: parse_hidden(&args.hidden)?,
                activation: Activation::Tanh,
            };
            let mut best: Option<(u64, ncurve::ConditionalFit)> = None;
            for s in 0..args.starts {
                let mut c = cfg.clone();
                c.seed = base_seed + s as u64;
                let fit = fit_conditional(&pairs, &grid, &c, &enc_cfg)?;
                let nll = fit.trace.last().copied().unwrap_or(f64::INFINITY);
                let better = best
                    .as_ref()
                    .is_none_or(|(_, b)| nll < b.trace.last().copied().unwrap_or(f64::INFINITY));
                if better {
                    best = Some((c.seed, fit));
                }
            }
            let (seed, fit) = best.expect("starts >= 1");
            globals.note(format_args!(
                "fit: final NLL = {}",
                fit.trace.last().copied().unwrap_or(f64::NAN)
            ));
            let model =
                ModelFile::from_conditional(&fit.model, seed, echo(args.iters, Some(m_obs)));
            (model, fit.trace)
        }
    };

    model.save(&model_path)?;
    write_trace_csv(&trace_path, &trace)?;
    globals.note(format_args!("wrote {}", model_path.display()));
    globals.note(format_args!("wrote {}", trace_path.display()));
    Ok(())
}
