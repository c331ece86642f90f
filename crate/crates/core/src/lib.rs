//! Virtual bidding on day-ahead/real-time electricity price spreads.
//!
//! Log-price differences between the day-ahead and real-time markets are
//! modelled as Gaussian vectors whose drift depends linearly on local
//! weather. The crate fits that model by maximum likelihood, computes the
//! closed-form entropy-regularized mean-variance allocation policy, and
//! evaluates it with a seeded Monte Carlo backtester.
//!
//! | module | role |
//! |---|---|
//! | [`market_model`] | drift/covariance model and log price differences |
//! | [`estimation`] | likelihood, analytic gradient, gradient ascent, OLS, trailing covariance |
//! | [`policy`] | Gaussian exploratory policy, Lagrange multiplier, sampling, wealth moments |
//! | [`ingest`] | CSV parsing, real-time hourly averaging, training-set assembly |
//! | [`sim`] | AR(1) weather and price simulator |
//! | [`backtest`] | daily trading loop, Monte Carlo runs, reports |
//! | [`cli`] | the `vbid` command line driven by a TOML config |
//!
//! Runnable walkthroughs live in the crate's `examples/` directory.

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod cli;
pub mod config;
pub mod error;
pub mod estimation;
pub mod ingest;
pub mod linalg;
pub mod market_model;
pub mod policy;
pub mod sim;

pub use error::{Error, Result};
