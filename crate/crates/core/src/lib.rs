//! Simulation of residential PV-battery dispatch under time-of-use
//! tariffs: rule-based and model-predictive control, grid settlement and
//! the cost bias introduced by coarse simulation timescales.

pub mod battery;
pub mod cli;
pub mod config;
pub mod controllers;
pub mod forecast;
pub mod ingest;
pub mod metrics;
pub mod mpc;
pub mod sim;
pub mod tariff;
pub mod timeseries;
