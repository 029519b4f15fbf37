use serde::{Deserialize, Serialize};

use crate::autodiff::ParamSet;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Global L2 norm over every tensor in `grads`.
pub fn global_norm(grads: &ParamSet) -> f64 {
    grads.iter().map(|(_, g)| g.l2_norm_sq()).sum::<f64>().sqrt()
}

/// Rescales all gradients by `clipnorm / g` when their global norm `g`
/// exceeds `clipnorm`. Returns the pre-clip norm.
pub fn clip_by_global_norm(grads: &mut ParamSet, clipnorm: f64) -> Result<f64> {
    if !(clipnorm > 0.0) {
        return Err(Error::Config(format!("clipnorm must be positive, got {clipnorm}")));
    }
    let norm = global_norm(grads);
    if norm > clipnorm {
        let scale = clipnorm / norm;
        for (_, g) in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= scale);
        }
    }
    Ok(norm)
}

/// First and second moment estimates per parameter, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub t: u64,
}

/// Hyperparameters stored alongside [`AdamState`] in checkpoint metadata.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: BETA1,
            beta2: BETA2,
            eps: ADAM_EPS,
        }
    }
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    /// One bias-corrected Adam update with learning rate `lr`.
    pub fn update(&mut self, params: &mut ParamSet, grads: &ParamSet, lr: f64) -> Result<()> {
        self.update_with(params, grads, lr, AdamHyper::default())
    }

    pub fn update_with(
        &mut self,
        params: &mut ParamSet,
        grads: &ParamSet,
        lr: f64,
        hyper: AdamHyper,
    ) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::dim(
                "adam_update",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        self.t += 1;
        let bc1 = 1.0 - hyper.beta1.powi(self.t as i32);
        let bc2 = 1.0 - hyper.beta2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::contract(format!("no gradient for {name:?}")))?;
            let m = self.m.get_mut(name).ok_or_else(|| Error::contract(format!("no moment for {name:?}")))?;
            if g.shape() != p.shape() || m.shape() != p.shape() {
                return Err(Error::dim(
                    "adam_update",
                    format!("{name}: parameter {:?}, gradient {:?}", p.shape(), g.shape()),
                ));
            }
            let v = self.v.get_mut(name).ok_or_else(|| Error::contract(format!("no moment for {name:?}")))?;
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                let gi = g.data()[i];
                md[i] = hyper.beta1 * md[i] + (1.0 - hyper.beta1) * gi;
                vd[i] = hyper.beta2 * vd[i] + (1.0 - hyper.beta2) * gi * gi;
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                pd[i] -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
            }
        }
        Ok(())
    }
}
