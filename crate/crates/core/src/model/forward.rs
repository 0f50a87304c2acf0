use super::spec::{param_name, LayerSpec, ModelSpec, Parameters};
use crate::autodiff::tape::add_bias_rows;
use crate::error::{Error, Result};
use crate::tensor::{
    self, batch_norm_apply_slices, batch_statistics, BatchNormMode, Scalar, Tensor,
};

pub(crate) fn check_batch<T: Scalar>(spec: &ModelSpec, batch: &Tensor<T>) -> Result<()> {
    let ok = batch.rank() == 4 && batch.shape()[1..] == spec.input_shape;
    if !ok {
        return Err(Error::shape(format!(
            "model `{}` expects [N, {}, {}, {}] input, got {:?}",
            spec.name,
            spec.input_shape[0],
            spec.input_shape[1],
            spec.input_shape[2],
            batch.shape()
        )));
    }
    Ok(())
}

/// Evaluates a single layer. Train-mode batch norm normalizes with the batch
/// statistics but leaves the stored running statistics untouched.
pub fn eval_layer<T: Scalar>(
    index: usize,
    layer: &LayerSpec,
    params: &Parameters<T>,
    x: &Tensor<T>,
    mode: BatchNormMode,
) -> Result<Tensor<T>> {
    let p = |suffix: &str| params.get(&param_name(index, suffix));
    match layer {
        LayerSpec::Conv { config } => tensor::conv2d(x, p("weight")?, config),
        LayerSpec::DepthwiseConv { config } => tensor::depthwise_conv2d(x, p("weight")?, config),
        LayerSpec::BatchNorm { eps, .. } => {
            let c = *x.shape().last().unwrap();
            let (mean, var) = match mode {
                BatchNormMode::Train => batch_statistics(x.data(), c),
                BatchNormMode::Infer => (
                    p("running_mean")?.data().to_vec(),
                    p("running_var")?.data().to_vec(),
                ),
            };
            let gamma = p("gamma")?;
            let beta = p("beta")?;
            if gamma.len() != c || mean.len() != c {
                return Err(Error::shape(format!(
                    "batch norm layer {index} has {} channels, input has {c}",
                    gamma.len()
                )));
            }
            let mut out = vec![T::zero(); x.len()];
            batch_norm_apply_slices(
                x.data(),
                c,
                &mean,
                &var,
                gamma.data(),
                beta.data(),
                *eps,
                &mut out,
            );
            Tensor::from_vec(x.shape().to_vec(), out)
        }
        LayerSpec::Relu => Ok(x.relu()),
        LayerSpec::Sigmoid => Ok(x.sigmoid()),
        LayerSpec::Flatten => x.flatten(),
        LayerSpec::GlobalAvgPool => tensor::global_avg_pool(x),
        LayerSpec::Dense { .. } => {
            let mut y = tensor::matmul(x, p("weight")?)?;
            let b = p("bias")?;
            if b.len() != y.shape()[1] {
                return Err(Error::shape("dense bias length mismatch"));
            }
            add_bias_rows(y.data_mut(), b.data());
            Ok(y)
        }
    }
}

/// Eager forward pass: walks the layer list, allocating a fresh tensor per
/// layer. Returns `[N, 1]` probabilities.
pub fn forward<T: Scalar>(
    spec: &ModelSpec,
    params: &Parameters<T>,
    batch: &Tensor<T>,
    mode: BatchNormMode,
) -> Result<Tensor<T>> {
    check_batch(spec, batch)?;
    if spec.layers.is_empty() {
        return Err(Error::Capability("model has no layers".into()));
    }
    let mut x = eval_layer(0, &spec.layers[0], params, batch, mode)?;
    for (i, layer) in spec.layers.iter().enumerate().skip(1) {
        x = eval_layer(i, layer, params, &x, mode)?;
    }
    Ok(x)
}
