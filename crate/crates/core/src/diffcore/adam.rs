use serde::{Deserialize, Serialize};

use super::params::{Module, ParamMap};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: ParamMap,
    pub v: ParamMap,
}

fn check_finite(name: &str, g: &Tensor) -> Result<()> {
    if g.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteGradient(name.to_string()))
    }
}

fn update(p: &mut Tensor, g: &Tensor, m: &mut Tensor, v: &mut Tensor, cfg: &AdamConfig, step: u64) {
    let b1c = 1.0 - cfg.beta1.powi(step as i32);
    let b2c = 1.0 - cfg.beta2.powi(step as i32);
    let (pd, gd) = (p.data_mut(), g.data());
    let (md, vd) = (m.data_mut(), v.data_mut());
    for k in 0..pd.len() {
        md[k] = cfg.beta1 * md[k] + (1.0 - cfg.beta1) * gd[k];
        vd[k] = cfg.beta2 * vd[k] + (1.0 - cfg.beta2) * gd[k] * gd[k];
        let mh = md[k] / b1c;
        let vh = vd[k] / b2c;
        pd[k] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
    }
}

/// One Adam update over a parameter map. Parameters without a gradient
/// entry are treated as having zero gradient.
pub fn adam_step(params: &mut ParamMap, grads: &ParamMap, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    for (name, g) in grads {
        check_finite(name, g)?;
        let p = params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter `{name}`")))?;
        if p.shape() != g.shape() {
            return Err(Error::Dimension(format!(
                "`{name}`: parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let step = state.step;
    for (name, p) in params.iter_mut() {
        let zero;
        let g = match grads.get(name) {
            Some(g) => g,
            None => {
                zero = Tensor::zeros(p.shape());
                &zero
            }
        };
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        if m.shape() != p.shape() || v.shape() != p.shape() {
            return Err(Error::Dimension(format!("optimizer state for `{name}` has wrong shape")));
        }
        update(p, g, m, v, cfg, step);
    }
    Ok(())
}

/// [`adam_step`] applied in place to a module's parameters.
pub fn adam_step_module<M: Module + ?Sized>(
    module: &mut M,
    grads: &ParamMap,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    let mut params = module.params();
    adam_step(&mut params, grads, state, cfg)?;
    module.load_params(&params)
}
