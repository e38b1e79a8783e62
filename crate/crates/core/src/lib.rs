//! Variational Bayesian knowledge transfer for latent-split classifiers.
//!
//! A source classifier is split at a hidden layer `Z` into a feature network
//! (`theta`) and a head (`omega`). Adapting to a low-resource target domain
//! is posed as maximizing an evidence lower bound whose KL term ties the
//! target's latent Gaussians to a prior learned on the source domain:
//!
//! * [`losses::gmf_elbo_loss`]: per-sample Gaussians matched across parallel
//!   source/target pairs (fixed shared variance).
//! * [`losses::eb_elbo_loss`]: class-conditional Gaussian priors fitted on
//!   source embeddings ([`prior::fit_class_priors`]); no pairing needed.
//! * [`losses::relational_term`]: Huber distance between the mean pairwise
//!   KL of the target and source mixtures.
//!
//! Everything runs on the small tape in [`autodiff`], in `f64`.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod prior;
pub mod trainer;

pub use autodiff::{grad_check, NoiseKey, Tape, Tensor, Var};
pub use error::{Error, Result};
pub use model::{LatentSplitModel, ModelConfig};
