//! Speaker embeddings trained with episodic meta-learning (prototypical and
//! relation networks) alongside an x-vector classification baseline, with
//! diarization (NME-SC spectral clustering, DER) and verification
//! (LDA/PLDA, EER/minDCF) back-ends.

pub mod autograd;
pub mod clustering;
pub mod config;
pub mod diarization;
pub mod episodic;
pub mod error;
pub mod features;
pub mod kv;
pub mod nets;
pub mod synth;
pub mod verification;

pub use error::{Error, Result};
