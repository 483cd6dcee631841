//! Bayesian hierarchical latent class models for categorical survey data.
//!
//! Respondents belong to one of `K` latent types. Each type has its own
//! response distribution on every question, and each group (or survey
//! period) has its own mixture over types. The static model is fitted by Gibbs
//! sampling; the dynamic model lets the mixture drift
//! over periods as a logit random walk and moves it with stochastic gradient
//! Langevin dynamics.

pub mod data;
pub mod distributions;
pub mod draws_io;
pub mod dynamic_sampler;
pub mod error;
pub mod posterior;
pub mod regress;
pub mod selection;
pub mod simulate;
pub mod state;
pub mod static_sampler;

pub use data::{IngestSchema, MissingPolicy, Mode, SurveyDataset};
pub use distributions::{RngStream, StreamId};
pub use error::{Error, Result};
pub use state::{ChainState, ModelConfig, PosteriorDraws, Snapshot};
