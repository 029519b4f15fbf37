use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::init;
use super::lstm::BiLstm;
use crate::autodiff::{Bound, ParamSet, Tape, Var};
use crate::error::{Error, Result};

/// How a query is scored against each key.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    /// `vᵀ · tanh(Wq·query + Wk·value_i)`.
    #[default]
    Additive,
    /// `(Wk·value_i) · (Wq·query)`.
    Multiplicative,
}

/// Scores value rows against a query and returns their convex combination.
///
/// Parameters: `{name}.wq` `[q×a]`, `{name}.wk` `[m×a]`, `{name}.v` `[a×1]`
/// (the score vector is unused by [`ScoreKind::Multiplicative`] but always
/// present so checkpoints do not depend on the score form).
#[derive(Clone, Debug, PartialEq)]
pub struct AdditiveAttention {
    pub name: String,
    pub query_dim: usize,
    pub value_dim: usize,
    pub attn_dim: usize,
    pub score: ScoreKind,
}

/// Output of one attention read.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    /// `[m]`
    pub context: Var,
    /// `[S]`, nonnegative, sums to one.
    pub weights: Var,
}

impl AdditiveAttention {
    pub fn new(
        name: impl Into<String>,
        query_dim: usize,
        value_dim: usize,
        attn_dim: usize,
        score: ScoreKind,
    ) -> Self {
        Self {
            name: name.into(),
            query_dim,
            value_dim,
            attn_dim,
            score,
        }
    }

    pub fn param_count(&self) -> usize {
        self.attn_dim * (self.query_dim + self.value_dim + 1)
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<()> {
        let a = self.attn_dim;
        params.insert(format!("{}.wq", self.name), init::glorot(rng, self.query_dim, a))?;
        params.insert(format!("{}.wk", self.name), init::glorot(rng, self.value_dim, a))?;
        params.insert(format!("{}.v", self.name), init::glorot(rng, a, 1))
    }

    /// Projects value rows `[S×m]` to keys `[S×a]`. Depends only on the values,
    /// so decoders compute it once per image.
    pub fn keys(&self, tape: &mut Tape, bound: &Bound, values: Var) -> Result<Var> {
        let s = tape.shape(values);
        if s.len() != 2 || s[1] != self.value_dim {
            return Err(Error::dim(
                "attend",
                format!("values must be [S, {}], got {s:?}", self.value_dim),
            ));
        }
        let wk = bound.var(&format!("{}.wk", self.name))?;
        tape.matmul(values, wk)
    }

    pub fn attend_with_keys(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        query: Var,
        values: Var,
        keys: Var,
    ) -> Result<Attended> {
        if tape.shape(query) != [self.query_dim] {
            return Err(Error::dim(
                "attend",
                format!(
                    "query must be [{}], got {:?}",
                    self.query_dim,
                    tape.shape(query)
                ),
            ));
        }
        let rows = tape.shape(keys)[0];
        let wq = bound.var(&format!("{}.wq", self.name))?;
        let q = tape.matmul(query, wq)?;
        let scores = match self.score {
            ScoreKind::Additive => {
                let v = bound.var(&format!("{}.v", self.name))?;
                let pre = tape.add(keys, q)?;
                let act = tape.tanh(pre);
                tape.matmul(act, v)?
            }
            ScoreKind::Multiplicative => {
                let qc = tape.reshape(q, vec![self.attn_dim, 1])?;
                tape.matmul(keys, qc)?
            }
        };
        let scores = tape.reshape(scores, vec![rows])?;
        let weights = tape.softmax(scores)?;
        let context = tape.matmul(weights, values)?;
        Ok(Attended { context, weights })
    }

    /// `query [q]` against `values [S×m]`.
    pub fn attend(&self, tape: &mut Tape, bound: &Bound, query: Var, values: Var) -> Result<Attended> {
        let keys = self.keys(tape, bound, values)?;
        self.attend_with_keys(tape, bound, query, values, keys)
    }
}

/// Raw patch vectors and their Bi-LSTM context-aware encodings.
#[derive(Clone, Copy, Debug)]
pub struct SpatialEncoding {
    /// `[S×C]`, cells in row-major raster order.
    pub source: Var,
    /// `[S×2u]`
    pub encoded: Var,
}

/// Flattens an `[H×W×C]` grid to `S = H·W` raster-ordered patches and runs
/// the Bi-LSTM over them as a sequence.
pub fn encode_spatial(
    layer: &BiLstm,
    tape: &mut Tape,
    bound: &Bound,
    grid: Var,
) -> Result<SpatialEncoding> {
    let s = tape.shape(grid).to_vec();
    if s.len() != 3 {
        return Err(Error::dim(
            "encode_spatial",
            format!("expected [H, W, C], got {s:?}"),
        ));
    }
    let source = tape.reshape(grid, vec![s[0] * s[1], s[2]])?;
    let encoded = layer.sequence(tape, bound, source, None)?;
    Ok(SpatialEncoding { source, encoded })
}
