//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use captionlab::inference::{log_softmax, Step, Stepper};
use captionlab::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Logits are a pseudo-random function of the whole prefix.
pub struct PrefixModel {
    pub vocab: usize,
    pub seed: u64,
    /// Makes one token per step strongly preferred, like a trained model.
    pub peak: f64,
}

impl Stepper for PrefixModel {
    type State = Vec<usize>;

    fn initial(&self) -> Result<Vec<usize>> {
        Ok(Vec::new())
    }

    fn step(&self, prefix: &Vec<usize>, token: usize) -> Result<Step<Vec<usize>>> {
        let mut next = prefix.clone();
        next.push(token);
        let key = next.iter().fold(self.seed, |h, &t| {
            h.wrapping_mul(0x100_0000_01b3).wrapping_add(t as u64 + 1)
        });
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let favored = rng.gen_range(0..self.vocab);
        let logits = (0..self.vocab)
            .map(|v| rng.gen_range(-2.0..2.0) + if v == favored { self.peak } else { 0.0 })
            .collect();
        Ok(Step {
            logits,
            state: next,
            attention: None,
        })
    }
}

/// Best complete sequence by full enumeration: every path either emits the
/// end token or stops at `max_len`.
pub fn exhaustive<M: Stepper>(model: &M, max_len: usize) -> (Vec<usize>, f64) {
    fn walk<M: Stepper>(
        model: &M,
        state: &M::State,
        last: usize,
        tokens: &mut Vec<usize>,
        lp: f64,
        max_len: usize,
        best: &mut Option<(Vec<usize>, f64)>,
    ) {
        let out = model.step(state, last).unwrap();
        let logp = log_softmax(&out.logits);
        for (v, &l) in logp.iter().enumerate() {
            tokens.push(v);
            let total = lp + l;
            if v == model.end_token() || tokens.len() == max_len {
                let better = match best {
                    None => true,
                    Some((bt, bs)) => total > *bs || (total == *bs && tokens < bt),
                };
                if better {
                    *best = Some((tokens.clone(), total));
                }
            } else {
                walk(model, &out.state, v, tokens, total, max_len, best);
            }
            tokens.pop();
        }
    }
    let mut best = None;
    let s = model.initial().unwrap();
    walk(model, &s, model.start_token(), &mut Vec::new(), 0.0, max_len, &mut best);
    best.unwrap()
}

/// Counts n-grams by linear scans over vectors, no hashing.
pub fn brute_counts(cand: &[String], refs: &[Vec<String>], n: usize) -> (usize, usize) {
    if cand.len() < n {
        return (0, 0);
    }
    let grams: Vec<&[String]> = (0..=cand.len() - n).map(|i| &cand[i..i + n]).collect();
    let mut done: Vec<&[String]> = Vec::new();
    let mut matched = 0;
    for g in &grams {
        if done.contains(g) {
            continue;
        }
        done.push(g);
        let c = grams.iter().filter(|h| *h == g).count();
        let r = refs
            .iter()
            .map(|r| {
                if r.len() < n {
                    0
                } else {
                    (0..=r.len() - n).filter(|&i| &r[i..i + n] == *g).count()
                }
            })
            .max()
            .unwrap_or(0);
        matched += c.min(r);
    }
    (matched, grams.len())
}

pub fn brute_bleu(cands: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Vec<f64> {
    let mut m = [0usize; 4];
    let mut t = [0usize; 4];
    let (mut c, mut r) = (0, 0);
    for (cand, rs) in cands.iter().zip(refs) {
        for n in 1..=4 {
            let (a, b) = brute_counts(cand, rs, n);
            m[n - 1] += a;
            t[n - 1] += b;
        }
        c += cand.len();
        let mut best = rs[0].len();
        for x in rs {
            let (d, bd) = (x.len().abs_diff(cand.len()), best.abs_diff(cand.len()));
            if d < bd || (d == bd && x.len() < best) {
                best = x.len();
            }
        }
        r += best;
    }
    let bp = if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    let mut log_sum = 0.0;
    let mut dead = false;
    (1..=4)
        .map(|n| {
            if m[n - 1] == 0 || t[n - 1] == 0 {
                dead = true;
            } else {
                log_sum += (m[n - 1] as f64 / t[n - 1] as f64).ln();
            }
            if dead || bp == 0.0 {
                0.0
            } else {
                bp * (log_sum / n as f64).exp()
            }
        })
        .collect()
}

pub fn random_sentence(rng: &mut ChaCha8Rng, words: &[&str], max: usize) -> Vec<String> {
    let len = rng.gen_range(1..=max);
    (0..len).map(|_| words[rng.gen_range(0..words.len())].to_string()).collect()
}

pub fn random_corpus(seed: u64, max_refs: usize) -> (Vec<Vec<String>>, Vec<Vec<Vec<String>>>) {
    let words = ["a", "red", "blue", "square", "circle", "top", "left"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = rng.gen_range(1..=8);
    let mut cands = Vec::new();
    let mut refs = Vec::new();
    for _ in 0..size {
        let used = rng.gen_range(2..=7);
        cands.push(random_sentence(&mut rng, &words[..used], 10));
        let k = rng.gen_range(1..=max_refs);
        refs.push((0..k).map(|_| random_sentence(&mut rng, &words, 10)).collect());
    }
    (cands, refs)
}

