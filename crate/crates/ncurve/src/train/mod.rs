//! Maximum-likelihood training: parameter layout, loss and analytic
//! gradients, Adam, the conditioning encoder, and the fit drivers.

pub mod adam;
pub mod encoder;
pub mod fit;
pub mod layout;
pub mod loss;

pub use adam::Adam;
pub use encoder::{Activation, Encoder, EncoderConfig, EncoderWorkspace};
pub use fit::{
    fit_conditional, fit_unconditional, init_theta, make_pairs, predict, write_trace_csv,
    ConditionalFit, ConditionalModel, FitConfig, FitResult, InitStrategy, ObservationPair,
    TrainState,
};
pub use layout::{CovMode, CovarianceParams, ParamLayout, SIGMA_FLOOR};
pub use loss::{gradient, mixture_nll, sequence_loglik, LossEngine, LossReduction};
