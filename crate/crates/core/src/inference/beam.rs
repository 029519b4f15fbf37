use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::data::{END, START};
use crate::error::{Error, Result};
use crate::models::{CaptionModel, DecodeState, FeatureInput};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_width: usize,
    /// Generated tokens (the end token included) before a hypothesis is cut off.
    pub max_len: usize,
    /// Scores are `log p / len^alpha`; 0 disables normalization.
    pub length_norm_alpha: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_width: 7,
            max_len: 30,
            length_norm_alpha: 0.0,
        }
    }
}

/// One autoregressive step of something that emits next-token logits.
pub trait Stepper {
    type State: Clone;

    fn initial(&self) -> Result<Self::State>;

    /// Consumes `token` and returns logits for the next one, plus attention
    /// weights when the model has them.
    fn step(&self, state: &Self::State, token: usize) -> Result<Step<Self::State>>;

    fn start_token(&self) -> usize {
        START
    }

    fn end_token(&self) -> usize {
        END
    }
}

#[derive(Clone, Debug)]
pub struct Step<S> {
    pub logits: Vec<f64>,
    pub state: S,
    pub attention: Option<Vec<f64>>,
}

/// A trained model bound to one image.
pub struct ModelStepper<'a> {
    pub model: &'a CaptionModel,
    pub input: FeatureInput<'a>,
}

impl<'a> ModelStepper<'a> {
    pub fn new(model: &'a CaptionModel, input: FeatureInput<'a>) -> Self {
        Self { model, input }
    }
}

impl Stepper for ModelStepper<'_> {
    type State = DecodeState;

    fn initial(&self) -> Result<DecodeState> {
        self.model.init_state(self.input)
    }

    fn step(&self, state: &DecodeState, token: usize) -> Result<Step<DecodeState>> {
        let out = self.model.decode_step(state, token)?;
        Ok(Step {
            logits: out.logits.into_data(),
            state: out.state,
            attention: out.attention.map(|a| a.into_data()),
        })
    }
}

/// A finished (or length-capped) caption.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamHypothesis {
    /// Generated ids, without the start token; ends with the end token
    /// unless cut off at `max_len`.
    pub tokens: Vec<usize>,
    /// Sum of the per-step log-probabilities.
    pub log_prob: f64,
    pub finished: bool,
    /// Attention weights per generated token (attention models only).
    pub attention: Vec<Vec<f64>>,
}

impl BeamHypothesis {
    pub fn score(&self, alpha: f64) -> f64 {
        score(self.log_prob, self.tokens.len(), alpha)
    }
}

fn score(log_prob: f64, len: usize, alpha: f64) -> f64 {
    if alpha == 0.0 || len == 0 {
        log_prob
    } else {
        log_prob / (len as f64).powf(alpha)
    }
}

/// Numerically stable `log softmax`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    logits.iter().map(|x| x - lse).collect()
}

/// Higher score first; equal scores fall back to lexicographic token order.
fn rank(a_score: f64, a_tokens: &[usize], b_score: f64, b_tokens: &[usize]) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a_tokens.cmp(b_tokens))
}

struct Live<S> {
    tokens: Vec<usize>,
    log_prob: f64,
    attention: Vec<Vec<f64>>,
    state: S,
}

/// Beam search; returns every retired hypothesis, best first.
pub fn beam_search<M: Stepper>(model: &M, config: &BeamConfig) -> Result<Vec<BeamHypothesis>> {
    if config.beam_width < 1 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    if config.max_len < 1 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let alpha = config.length_norm_alpha;
    let end = model.end_token();
    let mut live = vec![Live {
        tokens: Vec::new(),
        log_prob: 0.0,
        attention: Vec::new(),
        state: model.initial()?,
    }];
    let mut pool: Vec<BeamHypothesis> = Vec::new();
    while !live.is_empty() {
        struct Cand {
            parent: usize,
            token: usize,
            log_prob: f64,
            tokens: Vec<usize>,
        }
        let mut stepped = Vec::with_capacity(live.len());
        let mut cands = Vec::new();
        for (i, h) in live.iter().enumerate() {
            let last = h.tokens.last().copied().unwrap_or(model.start_token());
            let out = model.step(&h.state, last)?;
            for (v, lp) in log_softmax(&out.logits).into_iter().enumerate() {
                let mut tokens = h.tokens.clone();
                tokens.push(v);
                cands.push(Cand {
                    parent: i,
                    token: v,
                    log_prob: h.log_prob + lp,
                    tokens,
                });
            }
            stepped.push(out);
        }
        cands.sort_by(|a, b| {
            rank(
                score(a.log_prob, a.tokens.len(), alpha),
                &a.tokens,
                score(b.log_prob, b.tokens.len(), alpha),
                &b.tokens,
            )
        });
        cands.truncate(config.beam_width);
        let mut next = Vec::with_capacity(cands.len());
        for c in cands {
            let parent = &live[c.parent];
            let mut attention = parent.attention.clone();
            if let Some(a) = &stepped[c.parent].attention {
                attention.push(a.clone());
            }
            let finished = c.token == end;
            if finished || c.tokens.len() >= config.max_len {
                pool.push(BeamHypothesis {
                    tokens: c.tokens,
                    log_prob: c.log_prob,
                    finished,
                    attention,
                });
            } else {
                next.push(Live {
                    tokens: c.tokens,
                    log_prob: c.log_prob,
                    attention,
                    state: stepped[c.parent].state.clone(),
                });
            }
        }
        live = next;
    }
    pool.sort_by(|a, b| rank(a.score(alpha), &a.tokens, b.score(alpha), &b.tokens));
    Ok(pool)
}

/// Repeatedly takes the most likely token (lowest id on ties).
pub fn greedy_decode<M: Stepper>(model: &M, max_len: usize) -> Result<BeamHypothesis> {
    if max_len < 1 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let mut state = model.initial()?;
    let mut last = model.start_token();
    let mut hyp = BeamHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
        attention: Vec::new(),
    };
    while hyp.tokens.len() < max_len {
        let out = model.step(&state, last)?;
        let lp = log_softmax(&out.logits);
        let mut best = 0;
        for (v, &x) in lp.iter().enumerate() {
            if x > lp[best] {
                best = v;
            }
        }
        hyp.tokens.push(best);
        hyp.log_prob += lp[best];
        if let Some(a) = out.attention {
            hyp.attention.push(a);
        }
        state = out.state;
        last = best;
        if best == model.end_token() {
            hyp.finished = true;
            break;
        }
    }
    Ok(hyp)
}

/// Best hypothesis for one image under `config` (greedy when `K = 1`).
pub fn caption_image(model: &CaptionModel, input: FeatureInput<'_>, config: &BeamConfig) -> Result<BeamHypothesis> {
    let stepper = ModelStepper::new(model, input);
    let mut ranked = beam_search(&stepper, config)?;
    Ok(ranked.swap_remove(0))
}
