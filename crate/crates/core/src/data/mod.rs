//! Vocabulary, tokenization, dataset files and the synthetic scene generator.

mod dataset;
mod scene;
mod vocab;

pub use dataset::{
    batch, gen_dataset, load_dataset, render_example, split, write_dataset, Batch,
    CaptionedExample, Splits, FEATURE_DIR, MANIFEST_FILE, VOCAB_FILE,
};
pub use scene::{position_phrase, scene_captions, SceneConfig, SceneObject, SceneSpec};
pub use vocab::{build_vocab, tokenize, Vocabulary, END, PAD, RESERVED, START, UNK};
