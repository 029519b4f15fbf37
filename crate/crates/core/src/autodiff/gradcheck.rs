use super::params::{Bound, ParamSet};
use super::tape::{Tape, Var};
use crate::error::Result;

/// Denominator floor for the relative error, so exact zeros compare as equal
/// and vanishing gradients fall back to an absolute comparison.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error <= self.tolerance)
    }

    pub fn max_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params
            .iter()
            .filter(|p| p.max_rel_error > self.tolerance)
    }
}

/// `|a - n| / max(|a| + |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(REL_FLOOR)
}

/// Compares reverse-mode gradients of the scalar program `f` against central
/// differences with the given `step`, for every entry of every parameter.
pub fn grad_check<F>(params: &ParamSet, f: F, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = f(&mut tape, &bound)?;
    let analytic = bound.grads(&tape.backward(loss)?);

    let eval = |p: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = p.bind_frozen(&mut tape);
        let loss = f(&mut tape, &bound)?;
        Ok(tape.value(loss).item())
    };

    let mut probe = params.clone();
    let mut checks = Vec::with_capacity(params.len());
    for (name, tensor) in params.iter() {
        let grad = analytic.get(name).expect("bound every parameter");
        let mut worst = (0.0_f64, 0usize);
        for i in 0..tensor.numel() {
            let base = tensor.data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = base + step;
            let up = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = base - step;
            let down = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = base;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(grad.data()[i], numeric);
            if err > worst.0 || err.is_nan() {
                worst = (err, i);
            }
        }
        checks.push(ParamCheck {
            name: name.clone(),
            max_rel_error: worst.0,
            worst_index: worst.1,
        });
    }
    Ok(GradCheckReport {
        tolerance,
        params: checks,
    })
}
