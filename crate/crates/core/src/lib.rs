//! Two-stage rumour analysis: a convolutional stance classifier over
//! contextual token embeddings, and a veracity classifier fed with
//! thread-averaged stance estimates.

pub mod cli;
pub mod embeddings;
pub mod eval;
pub mod features;
pub mod models;
pub mod nn;
pub mod preprocess;
pub mod thread_model;
