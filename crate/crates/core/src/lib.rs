//! Desk-scale laboratory for pre-training tiny masked language models on a
//! reduced-vocabulary corpus and analysing how they scale.
//!
//! The pipeline runs corpus filtering ([`corpus`]), tokenizer training and
//! selection ([`tokenizer`]), encoder models with analytic gradients
//! ([`model`]), training loops ([`trainer`]), exact cost accounting
//! ([`costmodel`]) and scaling-law analysis ([`analysis`]).

pub mod analysis;
pub mod corpus;
pub mod costmodel;
pub mod error;
pub mod grid;
pub mod model;
pub mod report;
pub mod synth;
pub mod tokenizer;
pub mod trainer;

pub use error::{LabError, Result};
