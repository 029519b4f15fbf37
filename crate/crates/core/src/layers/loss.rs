use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Target distribution `(1 − ε)·onehot(target) + ε/V`.
pub fn smoothed_target(vocab: usize, target: usize, epsilon: f64) -> Vec<f64> {
    let mut q = vec![epsilon / vocab as f64; vocab];
    q[target] += 1.0 - epsilon;
    q
}

/// Cross-entropy of `softmax(logits)` against the label-smoothed target.
pub fn label_smoothed_ce(tape: &mut Tape, logits: Var, target: usize, epsilon: f64) -> Result<Var> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::contract(format!("label epsilon {epsilon} outside [0, 1)")));
    }
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 1 {
        return Err(Error::dim("label_smoothed_ce", format!("logits must be [V], got {shape:?}")));
    }
    let v = shape[0];
    if target >= v {
        return Err(Error::Index {
            what: "vocabulary",
            index: target,
            bound: v,
        });
    }
    let log_probs = tape.log_softmax(logits)?;
    let q = tape.constant(Tensor::vector(smoothed_target(v, target, epsilon)));
    let weighted = tape.mul(log_probs, q)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, -1.0))
}
