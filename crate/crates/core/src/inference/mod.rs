//! Beam-search captioning, BLEU / METEOR / token P/R/F1 scoring, and
//! attention heatmap export.

mod beam;
mod bleu;
mod evaluate;
mod heatmap;
mod meteor;
mod prf;

pub use beam::{
    beam_search, caption_image, greedy_decode, log_softmax, BeamConfig, BeamHypothesis,
    ModelStepper, Step, Stepper,
};
pub use bleu::{closest_ref_len, corpus_bleu, modified_counts, sentence_bleu};
pub use evaluate::{
    evaluate_corpus, generate_captions, reference_words, score_corpus, EvalReport, ExampleScores,
    Scores, METRICS_HEADER,
};
pub use heatmap::{encode_pgm, export_attention_heatmap, to_gray, HeatmapStep};
pub use meteor::{align, meteor, meteor_single, stem, Alignment, METEOR_ALPHA, METEOR_BETA, METEOR_GAMMA};
pub use prf::{overlap, token_prf, Prf};
