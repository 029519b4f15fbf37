use rand_chacha::ChaCha8Rng;

use super::init;
use crate::autodiff::{Bound, ParamSet, Tape, Tensor, Var};
use crate::error::Result;

/// Affine map `x·W + b` with parameters `{name}.w` `[in×out]` and `{name}.b` `[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub name: String,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Dense {
    pub fn new(name: impl Into<String>, input_dim: usize, output_dim: usize) -> Self {
        Self {
            name: name.into(),
            input_dim,
            output_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        self.input_dim * self.output_dim + self.output_dim
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<()> {
        params.insert(
            format!("{}.w", self.name),
            init::glorot(rng, self.input_dim, self.output_dim),
        )?;
        params.insert(format!("{}.b", self.name), Tensor::zeros(&[self.output_dim]))
    }

    /// `x` is `[in]` or `[n×in]`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let w = bound.var(&format!("{}.w", self.name))?;
        let b = bound.var(&format!("{}.b", self.name))?;
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }
}

/// Token embedding table `{name}.table` `[V×d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub name: String,
    pub vocab_size: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(name: impl Into<String>, vocab_size: usize, dim: usize) -> Self {
        Self {
            name: name.into(),
            vocab_size,
            dim,
        }
    }

    pub fn param_count(&self) -> usize {
        self.vocab_size * self.dim
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<()> {
        params.insert(
            format!("{}.table", self.name),
            init::glorot(rng, self.vocab_size, self.dim),
        )
    }

    /// `[len×d]` rows for `ids`.
    pub fn lookup(&self, tape: &mut Tape, bound: &Bound, ids: &[usize]) -> Result<Var> {
        let table = bound.var(&format!("{}.table", self.name))?;
        tape.gather_rows(table, ids)
    }

    /// A single token's embedding as a vector `[d]`.
    pub fn lookup_one(&self, tape: &mut Tape, bound: &Bound, id: usize) -> Result<Var> {
        let rows = self.lookup(tape, bound, &[id])?;
        tape.reshape(rows, vec![self.dim])
    }
}
