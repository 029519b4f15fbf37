use std::fmt::Write as _;

use super::beam::{caption_image, BeamConfig};
use super::bleu::{corpus_bleu, sentence_bleu};
use super::meteor::meteor;
use super::prf::token_prf;
use crate::data::{CaptionedExample, Vocabulary};
use crate::error::{Error, Result};
use crate::models::CaptionModel;

pub const METRICS_HEADER: &str = "example_id,bleu1,bleu2,bleu3,bleu4,meteor,precision,recall,f1";

#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub bleu: [f64; 4],
    pub meteor: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExampleScores {
    pub example_id: usize,
    pub caption: Vec<String>,
    pub scores: Scores,
}

/// Per-example sentence scores and the corpus summary (corpus BLEU, mean
/// METEOR, mean token P/R/F1).
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ExampleScores>,
    pub corpus: Scores,
}

/// Sum in sorted order so the total does not depend on example order.
fn order_free_mean(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn bleu4(v: Vec<f64>) -> [f64; 4] {
    [v[0], v[1], v[2], v[3]]
}

/// Scores already generated captions.
pub fn score_corpus(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<EvalReport> {
    if candidates.is_empty() {
        return Err(Error::contract("cannot evaluate an empty corpus"));
    }
    let mut rows = Vec::with_capacity(candidates.len());
    for (i, (cand, refs)) in candidates.iter().zip(references).enumerate() {
        let prf = token_prf(cand, refs)?;
        rows.push(ExampleScores {
            example_id: i,
            caption: cand.clone(),
            scores: Scores {
                bleu: bleu4(sentence_bleu(cand, refs, 4)?),
                meteor: meteor(cand, refs)?,
                precision: prf.precision,
                recall: prf.recall,
                f1: prf.f1,
            },
        });
    }
    let column = |f: fn(&Scores) -> f64| order_free_mean(rows.iter().map(|r| f(&r.scores)).collect());
    let corpus = Scores {
        bleu: bleu4(corpus_bleu(candidates, references, 4)?),
        meteor: column(|s| s.meteor),
        precision: column(|s| s.precision),
        recall: column(|s| s.recall),
        f1: column(|s| s.f1),
    };
    Ok(EvalReport { rows, corpus })
}

/// Top-ranked caption for every example, as words.
pub fn generate_captions(
    model: &CaptionModel,
    examples: &[CaptionedExample],
    vocab: &Vocabulary,
    beam: &BeamConfig,
) -> Result<Vec<Vec<String>>> {
    examples
        .iter()
        .map(|ex| caption_image(model, (&ex.features).into(), beam).map(|h| vocab.words(&h.tokens)))
        .collect()
}

pub fn reference_words(examples: &[CaptionedExample], vocab: &Vocabulary) -> Vec<Vec<Vec<String>>> {
    examples
        .iter()
        .map(|ex| ex.references.iter().map(|r| vocab.words(r)).collect())
        .collect()
}

/// Captions every example with beam search and scores the result.
pub fn evaluate_corpus(
    model: &CaptionModel,
    examples: &[CaptionedExample],
    vocab: &Vocabulary,
    beam: &BeamConfig,
) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::contract("cannot evaluate an empty dataset"));
    }
    let candidates = generate_captions(model, examples, vocab, beam)?;
    score_corpus(&candidates, &reference_words(examples, vocab))
}

fn push_row(out: &mut String, id: &str, s: &Scores) {
    let _ = writeln!(
        out,
        "{id},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
        s.bleu[0], s.bleu[1], s.bleu[2], s.bleu[3], s.meteor, s.precision, s.recall, s.f1
    );
}

impl EvalReport {
    /// Per-example rows followed by the `CORPUS` summary row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{METRICS_HEADER}\n");
        for r in &self.rows {
            push_row(&mut out, &r.example_id.to_string(), &r.scores);
        }
        push_row(&mut out, "CORPUS", &self.corpus);
        out
    }

    pub fn summary(&self) -> String {
        let c = &self.corpus;
        format!(
            "BLEU-1 {:.4}  BLEU-2 {:.4}  BLEU-3 {:.4}  BLEU-4 {:.4}  METEOR {:.4}  \
             token P/R/F1 (unigram overlap, best reference) {:.4}/{:.4}/{:.4}",
            c.bleu[0], c.bleu[1], c.bleu[2], c.bleu[3], c.meteor, c.precision, c.recall, c.f1
        )
    }
}
