use crate::error::{Error, Result};

pub const METEOR_ALPHA: f64 = 0.9;
pub const METEOR_BETA: f64 = 3.0;
pub const METEOR_GAMMA: f64 = 0.5;

/// Light suffix stripper for the stem-matching stage: plural, progressive,
/// past and adverbial endings, keeping at least three characters.
pub fn stem(word: &str) -> String {
    let w = word.to_lowercase();
    let strip = |w: &str, suffix: &str, replace: &str| -> Option<String> {
        let base = w.strip_suffix(suffix)?;
        (base.chars().count() >= 3).then(|| format!("{base}{replace}"))
    };
    for (suffix, replace) in [
        ("sses", "ss"),
        ("ies", "y"),
        ("ing", ""),
        ("edly", ""),
        ("ed", ""),
        ("ly", ""),
    ] {
        if let Some(s) = strip(&w, suffix, replace) {
            return s;
        }
    }
    if !w.ends_with("ss") {
        if let Some(s) = strip(&w, "s", "") {
            return s;
        }
    }
    w
}

/// Alignment of candidate positions to reference positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alignment {
    /// `(candidate index, reference index)` sorted by candidate index.
    pub matches: Vec<(usize, usize)>,
}

impl Alignment {
    /// Fewest runs of matches adjacent in both sentences.
    pub fn chunks(&self) -> usize {
        if self.matches.is_empty() {
            return 0;
        }
        1 + self
            .matches
            .windows(2)
            .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
            .count()
    }
}

/// One matching stage: walks unmatched candidate words from last to first
/// and pairs each with the last unmatched reference word that agrees.
fn match_stage<F>(
    cand: &[String],
    refs: &[String],
    cand_free: &mut [bool],
    ref_free: &mut [bool],
    key: F,
    out: &mut Vec<(usize, usize)>,
) where
    F: Fn(&str) -> String,
{
    let ref_keys: Vec<String> = refs.iter().map(|r| key(r)).collect();
    for i in (0..cand.len()).rev() {
        if !cand_free[i] {
            continue;
        }
        let k = key(&cand[i]);
        if let Some(j) = (0..refs.len()).rev().find(|&j| ref_free[j] && ref_keys[j] == k) {
            cand_free[i] = false;
            ref_free[j] = false;
            out.push((i, j));
        }
    }
}

/// Exact matches first, then matches on [`stem`].
pub fn align(candidate: &[String], reference: &[String]) -> Alignment {
    let mut cand_free = vec![true; candidate.len()];
    let mut ref_free = vec![true; reference.len()];
    let mut matches = Vec::new();
    match_stage(candidate, reference, &mut cand_free, &mut ref_free, str::to_string, &mut matches);
    match_stage(candidate, reference, &mut cand_free, &mut ref_free, stem, &mut matches);
    matches.sort_unstable();
    Alignment { matches }
}

/// METEOR against one reference.
pub fn meteor_single(candidate: &[String], reference: &[String]) -> f64 {
    let a = align(candidate, reference);
    let m = a.matches.len();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let frag = a.chunks() as f64 / m as f64;
    let penalty = METEOR_GAMMA * frag.powf(METEOR_BETA);
    fmean * (1.0 - penalty)
}

/// Best METEOR over the references.
pub fn meteor(candidate: &[String], references: &[Vec<String>]) -> Result<f64> {
    if references.is_empty() || references.iter().any(Vec::is_empty) {
        return Err(Error::contract("METEOR needs nonempty references"));
    }
    Ok(references
        .iter()
        .map(|r| meteor_single(candidate, r))
        .fold(0.0, f64::max))
}
