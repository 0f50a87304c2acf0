use indexmap::IndexMap;

use crate::autodiff::GradientSet;
use crate::error::{Error, Result};
use crate::model::Parameters;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
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

#[derive(Debug, Clone)]
struct Moments<T: Scalar> {
    m: Tensor<T>,
    v: Tensor<T>,
}

/// First and second moment estimates for every trainable parameter.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar = f32> {
    pub config: AdamConfig,
    step: u64,
    moments: IndexMap<String, Moments<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            moments: IndexMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.moments.get(name).map(|m| &m.m)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.moments.get(name).map(|m| &m.v)
    }
}

/// One bias-corrected Adam update of every trainable parameter. The whole
/// step is refused if any gradient is non-finite or missing.
pub fn adam_step<T: Scalar>(
    params: &mut Parameters<T>,
    grads: &GradientSet<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    let names: Vec<String> = params.trainable().map(|(n, _)| n.to_owned()).collect();
    for name in &names {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Validation(format!("no gradient for `{name}`")))?;
        if g.shape() != params.get(name)?.shape() {
            return Err(Error::shape(format!(
                "gradient for `{name}` has shape {:?}",
                g.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for `{name}`")));
        }
    }

    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for name in names {
        let g = &grads[&name];
        let theta = params.get_mut(&name)?;
        let mom = state.moments.entry(name).or_insert_with(|| Moments {
            m: Tensor::zeros(g.shape()).expect("gradient shape is valid"),
            v: Tensor::zeros(g.shape()).expect("gradient shape is valid"),
        });
        for (((p, &gi), m), v) in theta
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(mom.m.data_mut())
            .zip(mom.v.data_mut())
        {
            let gi = gi.as_f64();
            let mi = beta1 * m.as_f64() + (1.0 - beta1) * gi;
            let vi = beta2 * v.as_f64() + (1.0 - beta2) * gi * gi;
            *m = T::from_f64(mi);
            *v = T::from_f64(vi);
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            *p = T::from_f64(p.as_f64() - lr * m_hat / (v_hat.sqrt() + eps));
        }
    }
    Ok(())
}
