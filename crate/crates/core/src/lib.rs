//! Desk-scale image-captioning laboratory.
//!
//! A small reverse-mode autodiff engine carries four encoder-decoder
//! captioners (pooled-vector LSTM, Bi-LSTM decoder, richer pooled encoder,
//! and additive attention over a Bi-LSTM-encoded feature grid), a training
//! loop, beam search, BLEU/METEOR scoring and attention heatmaps.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod features;
pub mod inference;
pub mod layers;
pub mod models;
pub mod training;

pub use error::{Error, Result};
