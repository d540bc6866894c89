//! Continuous-time branching process model of stem-cell proliferation with
//! time-varying division probabilities.
//!
//! The crate covers the whole pipeline:
//!
//! * [`model`]: Lorentzian division probabilities, the mean-field solution,
//!   exact mean/variance/autocovariance, and the extinction-time lower bound.
//! * [`sim`]: exact event-driven simulation and the partially observed view
//!   where viable and nonviable stem cells are pooled.
//! * [`likelihood`]: full-data log-likelihood, the closed-form rate MLE, the
//!   normalized forward algorithm (with analytic gradient) for partial data,
//!   and a brute-force enumeration oracle.
//! * [`estimate`]: differential evolution and BFGS maximum likelihood.
//! * [`stats`]: empirical moments, inverse-Gaussian stopping-time fits,
//!   KS/AD tests and observed/expected ratio diagnostics.
//! * [`io`]: JSON and CSV file formats.

pub mod error;
pub mod estimate;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod quad;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
pub use estimate::{fit_forward, fit_full, predict_counts, FitConfig, FitResult, ParamSpace};
pub use likelihood::{
    enumerate_loglik, forward_loglik, forward_loglik_grad, full_loglik, full_loglik_grad,
    rate_mle, ForwardOptions, ForwardState,
};
pub use model::{LorentzianParams, ModelParams, MomentCurve, Param, Theta};
pub use sim::{
    derive_seed, project_partial, simulate, simulate_ensemble, EventKind, EventRecord,
    PartialRecord, PartialTrajectory, Trajectory,
};
