//! Key-node identification in retweet cascades.
//!
//! The pipeline builds two feature views per cascade (user profiles and
//! random-walk structure), runs each through graph attention layers with
//! memory-bank enhancement, fuses the per-node scores with learned weights
//! and trains everything against an unsupervised expected-coverage loss.
//! Seed sets are evaluated with SIR simulation and a robustness index
//! against classical centrality baselines.

pub mod autodiff;
pub mod baselines;
pub mod cli;
pub mod epidemic;
pub mod error;
pub mod features;
pub mod graph;
pub mod model;
pub mod train;

pub use error::{MmenError, Result};
