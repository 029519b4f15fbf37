use rand_chacha::ChaCha8Rng;

use super::init::{self, RECURRENT_INIT};
use crate::autodiff::{Bound, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// LSTM cell with gate layout `[input | forget | cell | output]` along the
/// `4·units` axis.
///
/// Parameters: `{name}.w` `[input×4u]`, `{name}.u` `[u×4u]`, `{name}.b` `[4u]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    pub name: String,
    pub input_dim: usize,
    pub units: usize,
}

impl LstmCell {
    pub fn new(name: impl Into<String>, input_dim: usize, units: usize) -> Self {
        Self {
            name: name.into(),
            input_dim,
            units,
        }
    }

    pub fn param_count(&self) -> usize {
        4 * self.units * (self.input_dim + self.units + 1)
    }

    /// Recurrent weights uniform in ±0.08, zero bias except the forget slice at 1.
    pub fn init(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<()> {
        let u = self.units;
        params.insert(
            format!("{}.w", self.name),
            init::uniform(rng, &[self.input_dim, 4 * u], RECURRENT_INIT),
        )?;
        params.insert(
            format!("{}.u", self.name),
            init::uniform(rng, &[u, 4 * u], RECURRENT_INIT),
        )?;
        let mut bias = vec![0.0; 4 * u];
        bias[u..2 * u].fill(1.0);
        params.insert(format!("{}.b", self.name), Tensor::vector(bias))
    }

    pub fn zero_state(&self, tape: &mut Tape) -> (Var, Var) {
        let h = tape.constant(Tensor::zeros(&[self.units]));
        let c = tape.constant(Tensor::zeros(&[self.units]));
        (h, c)
    }

    /// One recurrence step: returns `(h', c')`.
    pub fn step(&self, tape: &mut Tape, bound: &Bound, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let u = self.units;
        if tape.shape(x) != [self.input_dim] || tape.shape(h) != [u] || tape.shape(c) != [u] {
            return Err(Error::dim(
                "lstm_step",
                format!(
                    "cell {} expects x[{}], h[{u}], c[{u}]; got {:?}, {:?}, {:?}",
                    self.name,
                    self.input_dim,
                    tape.shape(x),
                    tape.shape(h),
                    tape.shape(c)
                ),
            ));
        }
        let w = bound.var(&format!("{}.w", self.name))?;
        let uw = bound.var(&format!("{}.u", self.name))?;
        let b = bound.var(&format!("{}.b", self.name))?;

        let xw = tape.matmul(x, w)?;
        let hu = tape.matmul(h, uw)?;
        let z = tape.add(xw, hu)?;
        let z = tape.add(z, b)?;

        let zi = tape.slice(z, 0, 0, u)?;
        let zf = tape.slice(z, 0, u, u)?;
        let zg = tape.slice(z, 0, 2 * u, u)?;
        let zo = tape.slice(z, 0, 3 * u, u)?;
        let i = tape.sigmoid(zi);
        let f = tape.sigmoid(zf);
        let g = tape.tanh(zg);
        let o = tape.sigmoid(zo);

        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, g)?;
        let c_next = tape.add(keep, write)?;
        let squashed = tape.tanh(c_next);
        let h_next = tape.mul(o, squashed)?;
        Ok((h_next, c_next))
    }

    /// Runs the cell over the rows of `xs` in the given order, returning every
    /// hidden state (in visiting order) and the final `(h, c)`.
    pub fn run(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        rows: &[Var],
        init: (Var, Var),
    ) -> Result<(Vec<Var>, (Var, Var))> {
        let (mut h, mut c) = init;
        let mut hs = Vec::with_capacity(rows.len());
        for &x in rows {
            (h, c) = self.step(tape, bound, x, h, c)?;
            hs.push(h);
        }
        Ok((hs, (h, c)))
    }
}

/// Forward and backward LSTM cells of equal width; outputs are `2·units` wide.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

impl BiLstm {
    pub fn new(name: &str, input_dim: usize, units: usize) -> Self {
        Self {
            forward: LstmCell::new(format!("{name}.fwd"), input_dim, units),
            backward: LstmCell::new(format!("{name}.bwd"), input_dim, units),
        }
    }

    pub fn units(&self) -> usize {
        self.forward.units
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.units
    }

    pub fn param_count(&self) -> usize {
        self.forward.param_count() + self.backward.param_count()
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<()> {
        self.forward.init(params, rng)?;
        self.backward.init(params, rng)
    }

    /// Splits a `[T×d]` matrix into per-step row vectors.
    pub fn rows_of(tape: &mut Tape, xs: Var) -> Result<Vec<Var>> {
        let s = tape.shape(xs).to_vec();
        if s.len() != 2 {
            return Err(Error::dim("bilstm_sequence", format!("expected [T, d], got {s:?}")));
        }
        (0..s[0]).map(|t| tape.row(xs, t)).collect()
    }

    /// `[T×d] -> [T×2u]`; row `t` is `concat(forward h_t, backward h_t)` where
    /// the backward cell reads the rows in reverse.
    pub fn sequence(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        xs: Var,
        init: Option<(Var, Var)>,
    ) -> Result<Var> {
        let rows = Self::rows_of(tape, xs)?;
        if rows.is_empty() {
            return Err(Error::contract("bilstm_sequence needs T >= 1"));
        }
        let (fwd_init, bwd_init) = match init {
            Some(s) => (s, s),
            None => (self.forward.zero_state(tape), self.backward.zero_state(tape)),
        };
        let (fwd, _) = self.forward.run(tape, bound, &rows, fwd_init)?;
        let reversed: Vec<Var> = rows.iter().rev().copied().collect();
        let (mut bwd, _) = self.backward.run(tape, bound, &reversed, bwd_init)?;
        bwd.reverse();
        let f = tape.stack_rows(&fwd)?;
        let b = tape.stack_rows(&bwd)?;
        tape.concat(&[f, b], 1)
    }
}
