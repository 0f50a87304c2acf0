use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::spec::{LayerSpec, ModelSpec, Parameters};
use crate::error::{Error, Result};
use crate::tensor::{ConvConfig, Padding, Tensor};

pub const SUPPORTED_INPUT_SIZES: [usize; 3] = [64, 128, 224];
pub const SUPPORTED_WIDTHS: [f64; 3] = [1.0, 0.5, 0.25];

/// Width of the penultimate dense layer of the custom network.
pub const FEATURE_UNITS: usize = 160;
pub const CUSTOM_BASE_CHANNELS: [usize; 3] = [16, 32, 64];
pub const MOBILENET_BLOCK_CHANNELS: [usize; 8] = [32, 64, 128, 128, 256, 256, 512, 512];

pub fn scaled_channels(base: usize, width: f64) -> usize {
    ((base as f64 * width).round() as usize).max(1)
}

fn check_input_size(input_size: usize) -> Result<()> {
    if SUPPORTED_INPUT_SIZES.contains(&input_size) {
        Ok(())
    } else {
        Err(Error::param(format!(
            "input size {input_size} not supported (expected one of {:?})",
            SUPPORTED_INPUT_SIZES
        )))
    }
}

fn conv(kernel: usize, stride: usize, out: usize) -> LayerSpec {
    LayerSpec::Conv {
        config: ConvConfig::new(kernel, stride, Padding::Same, out),
    }
}

/// Three blocks of `[conv3x3/1, BN, ReLU, conv3x3/2, BN, ReLU]`, then
/// `dense(160) + ReLU` and a single sigmoid unit.
pub fn custom_rop_spec(input_size: usize, width: f64) -> Result<ModelSpec> {
    check_input_size(input_size)?;
    if !SUPPORTED_WIDTHS.contains(&width) {
        return Err(Error::param(format!(
            "width multiplier {width} not supported (expected one of {:?})",
            SUPPORTED_WIDTHS
        )));
    }
    let mut layers = Vec::new();
    for base in CUSTOM_BASE_CHANNELS {
        let c = scaled_channels(base, width);
        for stride in [1, 2] {
            layers.push(conv(3, stride, c));
            layers.push(LayerSpec::batch_norm());
            layers.push(LayerSpec::Relu);
        }
    }
    layers.extend([
        LayerSpec::Flatten,
        LayerSpec::Dense {
            units: FEATURE_UNITS,
        },
        LayerSpec::Relu,
        LayerSpec::Dense { units: 1 },
        LayerSpec::Sigmoid,
    ]);
    let spec = ModelSpec {
        name: "custom_rop".into(),
        input_shape: [input_size, input_size, 3],
        layers,
        width_multiplier: width,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn build_custom_rop_net(
    input_size: usize,
    width: f64,
    seed: u64,
) -> Result<(ModelSpec, Parameters)> {
    let spec = custom_rop_spec(input_size, width)?;
    let params = init_parameters(&spec, seed)?;
    Ok((spec, params))
}

/// Inference-only depthwise-separable baseline: a stride-2 stem followed by
/// eight `[depthwise 3x3, BN, ReLU, pointwise 1x1, BN, ReLU]` blocks.
/// Blocks 2, 4, 6 and 8 downsample in their depthwise stage.
pub fn mobilenet_like_spec(input_size: usize) -> Result<ModelSpec> {
    check_input_size(input_size)?;
    let mut layers = vec![conv(3, 2, 32), LayerSpec::batch_norm(), LayerSpec::Relu];
    let mut channels = 32;
    for (block, &out) in MOBILENET_BLOCK_CHANNELS.iter().enumerate() {
        let stride = if block % 2 == 1 { 2 } else { 1 };
        layers.extend([
            LayerSpec::DepthwiseConv {
                config: ConvConfig::new(3, stride, Padding::Same, channels),
            },
            LayerSpec::batch_norm(),
            LayerSpec::Relu,
            conv(1, 1, out),
            LayerSpec::batch_norm(),
            LayerSpec::Relu,
        ]);
        channels = out;
    }
    layers.extend([
        LayerSpec::GlobalAvgPool,
        LayerSpec::Dense { units: 1 },
        LayerSpec::Sigmoid,
    ]);
    let spec = ModelSpec {
        name: "mobilenet_like".into(),
        input_shape: [input_size, input_size, 3],
        layers,
        width_multiplier: 1.0,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn build_mobilenet_like(input_size: usize, seed: u64) -> Result<(ModelSpec, Parameters)> {
    let spec = mobilenet_like_spec(input_size)?;
    let params = init_parameters(&spec, seed)?;
    Ok((spec, params))
}

/// He-normal weights (`std = sqrt(2 / fan_in)`), unit gamma, zero beta and
/// biases, running statistics at (0, 1). Draws follow parameter order from a
/// single seeded stream.
pub fn init_parameters(spec: &ModelSpec, seed: u64) -> Result<Parameters> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Parameters::new();
    for (name, shape, trainable) in spec.param_layout()? {
        let n: usize = shape.iter().product();
        let suffix = name.rsplit('.').next().unwrap_or_default();
        let data: Vec<f32> = match suffix {
            "weight" => {
                let fan_in = match shape.len() {
                    4 => shape[0] * shape[1] * shape[2],
                    3 => shape[0] * shape[1],
                    _ => shape[0],
                };
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                    .map_err(|e| Error::param(e.to_string()))?;
                (0..n).map(|_| normal.sample(&mut rng) as f32).collect()
            }
            "gamma" | "running_var" => vec![1.0; n],
            _ => vec![0.0; n],
        };
        params.insert(name, Tensor::from_vec(shape, data)?, trainable);
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::count_parameters;

    #[test]
    fn custom_net_shapes() {
        let spec = custom_rop_spec(64, 1.0).unwrap();
        let shapes = spec.shapes().unwrap();
        let flat = spec
            .layers
            .iter()
            .position(|l| *l == LayerSpec::Flatten)
            .unwrap();
        assert_eq!(shapes[flat + 1], vec![8 * 8 * 64]);
        for size in SUPPORTED_INPUT_SIZES {
            for w in SUPPORTED_WIDTHS {
                let spec = custom_rop_spec(size, w).unwrap();
                let shapes = spec.shapes().unwrap();
                let last_dense = spec.layers.len() - 2;
                assert_eq!(shapes[last_dense], vec![FEATURE_UNITS]);
            }
        }
        assert!(matches!(custom_rop_spec(100, 1.0), Err(Error::Parameter(_))));
        assert!(matches!(custom_rop_spec(64, 0.3), Err(Error::Parameter(_))));
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let (_, a) = build_custom_rop_net(64, 0.25, 9).unwrap();
        let (_, b) = build_custom_rop_net(64, 0.25, 9).unwrap();
        let (_, c) = build_custom_rop_net(64, 0.25, 10).unwrap();
        assert!(a.bit_eq(&b));
        assert!(!a.bit_eq(&c));
        let (_, m1) = build_mobilenet_like(64, 1).unwrap();
        let (_, m2) = build_mobilenet_like(64, 1).unwrap();
        assert!(m1.bit_eq(&m2));
    }

    #[test]
    fn mobilenet_has_depthwise_and_pointwise() {
        let spec = mobilenet_like_spec(224).unwrap();
        assert!(spec
            .layers
            .iter()
            .any(|l| matches!(l, LayerSpec::DepthwiseConv { .. })));
        assert!(spec.layers.iter().any(|l| matches!(
            l,
            LayerSpec::Conv { config } if config.kernel_h == 1 && config.kernel_w == 1
        )));
        let shapes = spec.shapes().unwrap();
        let gap = spec
            .layers
            .iter()
            .position(|l| *l == LayerSpec::GlobalAvgPool)
            .unwrap();
        assert_eq!(shapes[gap], vec![7, 7, 512]);
    }

    #[test]
    fn layer_parameter_formulas() {
        let (spec, params) = build_custom_rop_net(64, 1.0, 0).unwrap();
        assert_eq!(params.get("layer0.weight").unwrap().len(), 3 * 3 * 3 * 16);
        let dense = spec.layers.len() - 4;
        let w = params.get(&format!("layer{dense}.weight")).unwrap().len();
        let b = params.get(&format!("layer{dense}.bias")).unwrap().len();
        assert_eq!(w + b, 655_520);
        let count = count_parameters(&spec, &params).unwrap();
        assert!(count.total > count.trainable);
    }

    #[test]
    fn he_init_scale() {
        let (_, params) = build_custom_rop_net(64, 1.0, 4).unwrap();
        let w = params.get("layer15.weight").unwrap(); // conv 3x3x64x64
        let n = w.len() as f64;
        let var = w.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / n;
        let expect = 2.0 / (3.0 * 3.0 * 64.0);
        assert!((var / expect - 1.0).abs() < 0.05, "var {var} expect {expect}");
    }
}
