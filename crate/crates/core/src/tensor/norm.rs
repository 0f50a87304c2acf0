use serde::{Deserialize, Serialize};

use super::{relu_scalar, Scalar, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;
pub const DEFAULT_BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchNormMode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormParams {
    fn default() -> Self {
        BatchNormParams {
            momentum: DEFAULT_BN_MOMENTUM,
            eps: DEFAULT_BN_EPS,
        }
    }
}

impl BatchNormParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::param(format!(
                "batch norm eps must be positive, got {}",
                self.eps
            )));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::param(format!(
                "batch norm momentum must lie in [0, 1], got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Per-channel biased mean and variance over every axis except the last.
/// Sums are accumulated in f64 in storage order.
pub fn batch_statistics<T: Scalar>(x: &[T], channels: usize) -> (Vec<T>, Vec<T>) {
    let count = (x.len() / channels) as f64;
    let mut sum = vec![0.0f64; channels];
    for px in x.chunks_exact(channels) {
        for (s, v) in sum.iter_mut().zip(px) {
            *s += v.as_f64();
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let mut sq = vec![0.0f64; channels];
    for px in x.chunks_exact(channels) {
        for ((s, v), m) in sq.iter_mut().zip(px).zip(&mean) {
            let d = v.as_f64() - m;
            *s += d * d;
        }
    }
    (
        mean.iter().map(|&m| T::from_f64(m)).collect(),
        sq.iter().map(|&s| T::from_f64(s / count)).collect(),
    )
}

pub(crate) fn inv_std<T: Scalar>(var: &[T], eps: f64) -> Vec<T> {
    let eps = T::from_f64(eps);
    var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect()
}

#[inline]
fn normalize_elem<T: Scalar>(x: T, mean: T, inv_std: T, gamma: T, beta: T) -> T {
    gamma * ((x - mean) * inv_std) + beta
}

/// `out = gamma * (x - mean) / sqrt(var + eps) + beta`, channel-last.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm_apply_slices<T: Scalar>(
    x: &[T],
    channels: usize,
    mean: &[T],
    var: &[T],
    gamma: &[T],
    beta: &[T],
    eps: f64,
    out: &mut [T],
) {
    let inv = inv_std(var, eps);
    for (px, o) in x.chunks_exact(channels).zip(out.chunks_exact_mut(channels)) {
        for c in 0..channels {
            o[c] = normalize_elem(px[c], mean[c], inv[c], gamma[c], beta[c]);
        }
    }
}

/// In-place batch norm with a precomputed `1 / sqrt(var + eps)`, optionally
/// followed by relu. Bitwise equal to [`batch_norm_apply_slices`] (then relu).
pub(crate) fn batch_norm_apply_in_place<T: Scalar>(
    data: &mut [T],
    channels: usize,
    mean: &[T],
    inv: &[T],
    gamma: &[T],
    beta: &[T],
    relu: bool,
) {
    for px in data.chunks_exact_mut(channels) {
        for c in 0..channels {
            let v = normalize_elem(px[c], mean[c], inv[c], gamma[c], beta[c]);
            px[c] = if relu { relu_scalar(v) } else { v };
        }
    }
}

fn check_channel_vec<T: Scalar>(t: &Tensor<T>, c: usize, what: &str) -> Result<()> {
    if t.len() != c {
        return Err(Error::shape(format!(
            "batch norm {} has {} entries, expected {}",
            what,
            t.len(),
            c
        )));
    }
    Ok(())
}

/// Batch normalization over a channel-last tensor. In train mode the batch
/// statistics normalize the input and are blended into the running
/// statistics; in infer mode the running statistics are used as-is.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    mode: BatchNormMode,
    params: BatchNormParams,
) -> Result<Tensor<T>> {
    params.validate()?;
    let c = *x.shape().last().unwrap();
    check_channel_vec(gamma, c, "gamma")?;
    check_channel_vec(beta, c, "beta")?;
    check_channel_vec(running_mean, c, "running mean")?;
    check_channel_vec(running_var, c, "running variance")?;
    let mut out = vec![T::zero(); x.len()];
    match mode {
        BatchNormMode::Train => {
            let (mean, var) = batch_statistics(x.data(), c);
            batch_norm_apply_slices(
                x.data(),
                c,
                &mean,
                &var,
                gamma.data(),
                beta.data(),
                params.eps,
                &mut out,
            );
            blend_running(running_mean.data_mut(), &mean, params.momentum);
            blend_running(running_var.data_mut(), &var, params.momentum);
        }
        BatchNormMode::Infer => batch_norm_apply_slices(
            x.data(),
            c,
            running_mean.data(),
            running_var.data(),
            gamma.data(),
            beta.data(),
            params.eps,
            &mut out,
        ),
    }
    Tensor::from_vec(x.shape().to_vec(), out)
}

pub(crate) fn blend_running<T: Scalar>(running: &mut [T], batch: &[T], momentum: f64) {
    let m = T::from_f64(momentum);
    let keep = T::one() - m;
    for (r, &b) in running.iter_mut().zip(batch) {
        *r = keep * *r + m * b;
    }
}

/// Train-mode backward through the batch statistics. Returns
/// `(dx, dgamma, dbeta)`.
pub(crate) fn batch_norm_train_backward<T: Scalar>(
    x: &[T],
    channels: usize,
    mean: &[T],
    var: &[T],
    gamma: &[T],
    eps: f64,
    grad_out: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let inv = inv_std(var, eps);
    let count = (x.len() / channels) as f64;
    let mut sum_dy = vec![0.0f64; channels];
    let mut sum_dy_xhat = vec![0.0f64; channels];
    for (px, g) in x.chunks_exact(channels).zip(grad_out.chunks_exact(channels)) {
        for c in 0..channels {
            let xhat = ((px[c] - mean[c]) * inv[c]).as_f64();
            sum_dy[c] += g[c].as_f64();
            sum_dy_xhat[c] += g[c].as_f64() * xhat;
        }
    }
    let mut dx = vec![T::zero(); x.len()];
    for ((px, g), d) in x
        .chunks_exact(channels)
        .zip(grad_out.chunks_exact(channels))
        .zip(dx.chunks_exact_mut(channels))
    {
        for c in 0..channels {
            let xhat = ((px[c] - mean[c]) * inv[c]).as_f64();
            let gam = gamma[c].as_f64();
            let v = gam * inv[c].as_f64() / count
                * (count * g[c].as_f64() - sum_dy[c] - xhat * sum_dy_xhat[c]);
            d[c] = T::from_f64(v);
        }
    }
    (
        dx,
        sum_dy_xhat.iter().map(|&v| T::from_f64(v)).collect(),
        sum_dy.iter().map(|&v| T::from_f64(v)).collect(),
    )
}

/// Infer-mode backward: the statistics are constants.
pub(crate) fn batch_norm_infer_backward<T: Scalar>(
    x: &[T],
    channels: usize,
    mean: &[T],
    var: &[T],
    gamma: &[T],
    eps: f64,
    grad_out: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let inv = inv_std(var, eps);
    let mut dgamma = vec![0.0f64; channels];
    let mut dbeta = vec![0.0f64; channels];
    let mut dx = vec![T::zero(); x.len()];
    for ((px, g), d) in x
        .chunks_exact(channels)
        .zip(grad_out.chunks_exact(channels))
        .zip(dx.chunks_exact_mut(channels))
    {
        for c in 0..channels {
            let xhat = (px[c] - mean[c]) * inv[c];
            dgamma[c] += (g[c] * xhat).as_f64();
            dbeta[c] += g[c].as_f64();
            d[c] = g[c] * gamma[c] * inv[c];
        }
    }
    (
        dx,
        dgamma.iter().map(|&v| T::from_f64(v)).collect(),
        dbeta.iter().map(|&v| T::from_f64(v)).collect(),
    )
}
