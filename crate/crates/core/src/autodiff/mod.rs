//! Tape-based reverse-mode differentiation and a central-difference checker.

mod gradcheck;
pub(crate) mod tape;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use tape::{GradientSet, Tape, VarId};

use crate::error::{Error, Result};
use crate::model::{check_batch, param_name, LayerSpec, ModelSpec, Parameters};
use crate::tensor::{norm::blend_running, BatchNormMode, Scalar, Tensor};

/// Result of a recorded forward pass.
#[derive(Debug, Clone)]
pub struct Recorded<T: Scalar> {
    pub output: Tensor<T>,
    pub tape: Tape<T>,
    /// New running statistics for every batch-norm layer (train mode only).
    pub running_updates: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Recorded<T> {
    pub fn backward(&self, seed: &Tensor<T>) -> Result<GradientSet<T>> {
        self.tape.backward(seed)
    }

    /// Writes the recorded running statistics into `params`.
    pub fn apply_running_updates(&self, params: &mut Parameters<T>) -> Result<()> {
        for (name, value) in &self.running_updates {
            *params.get_mut(name)? = value.clone();
        }
        Ok(())
    }
}

/// Runs the model forward while recording every operation. The output is
/// bitwise identical to [`crate::model::forward`] on the same inputs.
pub fn forward_record<T: Scalar>(
    spec: &ModelSpec,
    params: &Parameters<T>,
    input: &Tensor<T>,
    mode: BatchNormMode,
) -> Result<Recorded<T>> {
    if spec.layers.is_empty() {
        return Err(Error::Capability("cannot record an empty graph".into()));
    }
    check_batch(spec, input)?;
    let mut tape = Tape::new();
    let mut updates = Vec::new();
    let mut x = tape.constant(input.clone());
    for (i, layer) in spec.layers.iter().enumerate() {
        let leaf = |tape: &mut Tape<T>, suffix: &str| -> Result<VarId> {
            let name = param_name(i, suffix);
            let value = params.get(&name)?.clone();
            Ok(tape.param(name, value))
        };
        x = match layer {
            LayerSpec::Conv { config } => {
                let w = leaf(&mut tape, "weight")?;
                tape.conv2d(x, w, config)?
            }
            LayerSpec::DepthwiseConv { config } => {
                let w = leaf(&mut tape, "weight")?;
                tape.depthwise_conv2d(x, w, config)?
            }
            LayerSpec::BatchNorm { eps, momentum } => {
                let gamma = leaf(&mut tape, "gamma")?;
                let beta = leaf(&mut tape, "beta")?;
                let rm_name = param_name(i, "running_mean");
                let rv_name = param_name(i, "running_var");
                let rm = params.get(&rm_name)?;
                let rv = params.get(&rv_name)?;
                let (y, mean, var) =
                    tape.batch_norm(x, gamma, beta, mode, (rm.data(), rv.data()), *eps)?;
                if mode == BatchNormMode::Train {
                    let mut new_mean = rm.clone();
                    let mut new_var = rv.clone();
                    blend_running(new_mean.data_mut(), &mean, *momentum);
                    blend_running(new_var.data_mut(), &var, *momentum);
                    updates.push((rm_name, new_mean));
                    updates.push((rv_name, new_var));
                }
                y
            }
            LayerSpec::Relu => tape.relu(x),
            LayerSpec::Sigmoid => tape.sigmoid(x),
            LayerSpec::Flatten => tape.flatten(x)?,
            LayerSpec::GlobalAvgPool => tape.global_avg_pool(x)?,
            LayerSpec::Dense { .. } => {
                let w = leaf(&mut tape, "weight")?;
                let b = leaf(&mut tape, "bias")?;
                tape.dense(x, w, b)?
            }
        };
    }
    tape.set_output(x);
    Ok(Recorded {
        output: tape.value(x).clone(),
        tape,
        running_updates: updates,
    })
}
