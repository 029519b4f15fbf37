use std::collections::HashMap;
use std::hash::Hash;

use serde::Serialize;

use crate::error::{Error, Result};

/// Unigram-overlap precision, recall and F1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Size of the multiset intersection of two token lists.
pub fn overlap<T: Eq + Hash>(a: &[T], b: &[T]) -> usize {
    let mut counts: HashMap<&T, usize> = HashMap::new();
    for t in b {
        *counts.entry(t).or_insert(0) += 1;
    }
    a.iter()
        .filter(|t| match counts.get_mut(t) {
            Some(c) if *c > 0 => {
                *c -= 1;
                true
            }
            _ => false,
        })
        .count()
}

fn against<T: Eq + Hash>(candidate: &[T], reference: &[T]) -> Prf {
    let o = overlap(candidate, reference) as f64;
    let precision = if candidate.is_empty() { 0.0 } else { o / candidate.len() as f64 };
    let recall = if reference.is_empty() { 0.0 } else { o / reference.len() as f64 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Prf { precision, recall, f1 }
}

/// Scores against the reference with the highest F1 (first on ties).
pub fn token_prf<T: Eq + Hash>(candidate: &[T], references: &[Vec<T>]) -> Result<Prf> {
    if references.is_empty() {
        return Err(Error::contract("token P/R/F1 needs at least one reference"));
    }
    let mut best = against(candidate, &references[0]);
    for r in &references[1..] {
        let s = against(candidate, r);
        if s.f1 > best.f1 {
            best = s;
        }
    }
    Ok(best)
}
