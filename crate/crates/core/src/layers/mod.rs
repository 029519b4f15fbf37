//! Neural building blocks: embedding, dense projection, LSTM and Bi-LSTM,
//! additive attention, and label-smoothed cross-entropy.

mod attention;
mod dense;
pub mod init;
mod loss;
mod lstm;

pub use attention::{encode_spatial, AdditiveAttention, Attended, ScoreKind, SpatialEncoding};
pub use dense::{Dense, Embedding};
pub use loss::{label_smoothed_ce, smoothed_target};
pub use lstm::{BiLstm, LstmCell};
