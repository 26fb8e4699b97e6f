//! Probabilistic sequence modeling with Bézier curves whose control points
//! are Gaussian random variables.
//!
//! A stochastic process over an index set [0, 1] is represented by a Bézier
//! curve of degree N with Gaussian control points; at every index t the
//! process value is Gaussian with moments given by Bernstein-weighted sums of
//! the control point moments. Mixtures of such curves capture multi-modal
//! continuous-time data. The crate provides exact pointwise densities,
//! realization sampling, maximum-likelihood fitting by gradient descent,
//! sequence prediction conditioned on an observed prefix, dataset generators
//! and loaders, and evaluation metrics.

pub mod bernstein;
pub mod curve;
pub mod datagen;
pub mod error;
pub mod gaussian;
pub mod metrics;
pub mod model_io;
pub mod numeric;
pub mod rng;
pub mod train;

pub use bernstein::{bernstein, bernstein_row, bernstein_row_into};
pub use curve::{EnvelopePoint, IndexGrid, NCurve, NCurveMixture};
pub use datagen::{
    gen_toy1, gen_toy2, gen_toy3, gen_toy4, gen_toy5, load_sequences, save_jsonl,
    toy3_reference_curves, toy4_mixture, DatasetMeta, ScaleParams, SequenceDataset, Toy1Config,
    Toy2Config, Toy3Config, Toy4Config,
};
pub use error::{NCurveError, Result};
pub use gaussian::{affine_combine, GaussianDist};
pub use metrics::{
    aggregate, assign_to_paths, assign_to_polygons, coverage, evaluate, match_components,
    sample_moments, score_sequence, sequence_mixture_nll, Conventions, EvalReport, SampleMoments,
    SequenceScores, CONVENTIONS,
};
pub use model_io::{
    cov_mode_from_name, cov_mode_name, reduction_from_name, reduction_name, write_canonical,
    ComponentFile, EncoderFile, ModelFile, TrainConfigEcho, MODEL_VERSION,
};
pub use rng::{rng_from_seed, rng_substream, SeedRng};
pub use train::{
    fit_conditional, fit_unconditional, gradient, init_theta, make_pairs, mixture_nll, predict,
    sequence_loglik, write_trace_csv, Activation, Adam, ConditionalFit, ConditionalModel,
    CovMode, CovarianceParams, Encoder, EncoderConfig, FitConfig, FitResult, InitStrategy,
    LossEngine, LossReduction, ObservationPair, ParamLayout, TrainState, SIGMA_FLOOR,
};
