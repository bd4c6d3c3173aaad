//! Synthetic control estimation for weekly panels.
//!
//! Long CSV files become a validated [`panel::PanelDataset`] in [`ingest`].
//! [`engine`] estimates donor and predictor weights. Significance comes from
//! [`inference`], robustness to donor choice from [`sensitivity`]. A single
//! TOML study file ([`config`]) drives the whole run through [`cli`].

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod inference;
pub mod ingest;
pub mod nelder_mead;
pub mod panel;
pub mod report;
pub mod sensitivity;
pub mod solver;
pub mod synthgen;

pub use error::{Result, ScmError};
