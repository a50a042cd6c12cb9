//! Lexical overuse detection and the human-preference validation pipeline.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`corpus`] ingests part-of-speech tagged corpora and counts lemma+POS keys.
//! * [`divergence`] compares two frequency tables (opm, increase, chi-square).
//! * [`scoring`] turns a divergence report into LHF-Score weights and scores text.
//! * [`itemgen`] filters generated variants and selects length-matched item pairs.
//! * [`genclient`] renders the generation prompts and drives a pluggable transport.
//! * [`study`] runs the pairwise preference experiment (sessions, trials, event log).
//! * [`qc`] applies the participant and rating exclusion rules.
//! * [`stats`] holds chi-square tests, descriptives and the REML mixed model.
//! * [`synth`] generates synthetic fixtures used by tests, benches and the CLI.
//!
//! Data-parallel loops go through [`exec::Execution`]; with the `parallel`
//! feature disabled every path runs sequentially.

pub mod corpus;
pub mod divergence;
pub mod error;
pub mod exec;
pub mod genclient;
pub mod itemgen;
pub mod qc;
pub mod scoring;
pub mod stats;
pub mod study;
pub mod synth;

pub use error::{Error, Result};
