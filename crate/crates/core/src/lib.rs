//! Estimation of the generalized partial credit model (GPCM).
//!
//! Two estimators share one model kernel:
//!
//! - [`mmle`]: marginal maximum likelihood via Bock-Aitkin EM with EAP scoring.
//! - [`mcmc`]: fully Bayesian estimation with a jittered-trajectory HMC sampler,
//!   multi-chain PSRF checks and posterior summaries.
//!
//! [`simulation`] runs parameter-recovery experiments over latent
//! distribution, sample size and test length, and [`io`] holds the CSV and
//! JSON formats used by the `gpcm` command-line tool.

pub mod error;
pub mod model;
pub mod quadrature;
pub mod mmle;
pub mod mcmc;
pub mod seed;
pub mod simulation;
pub mod io;

pub use error::{GpcmError, Result};
pub use model::{
    gpcm_category_probs, gpcm_log_likelihood, gpcm_to_nrm, grad_item_loglik, grad_theta_loglik, nrm_category_probs,
    ItemBank, ItemParams, NrmParams, ResponseMatrix, ThetaVector,
};
pub use quadrature::QuadratureGrid;
