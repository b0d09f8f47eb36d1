//! Performative prediction on a networked Collective Risk Dilemma.
//!
//! Agents on a graph play a threshold public-goods game and decide whether
//! to cooperate using a public prediction of their neighbors' actions,
//! which they trust according to how well it has explained past behavior.
//! This crate simulates that population, analyzes small instances exactly,
//! and trains parametric predictors through a differentiable relaxation of
//! the agents' decision rule.

pub mod agent;
pub mod autodiff;
pub mod error;
pub mod game;
pub mod grad;
pub mod graph;
pub mod numeric;
pub mod predictor;
pub mod prophecy;
pub mod rollout;
pub mod training;

pub use error::{Error, Result};
