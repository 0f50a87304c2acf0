use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BatchNormParams, ConvConfig, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { config: ConvConfig },
    DepthwiseConv { config: ConvConfig },
    BatchNorm { eps: f64, momentum: f64 },
    Relu,
    Sigmoid,
    Flatten,
    GlobalAvgPool,
    Dense { units: usize },
}

impl LayerSpec {
    pub fn batch_norm() -> Self {
        let p = BatchNormParams::default();
        LayerSpec::BatchNorm {
            eps: p.eps,
            momentum: p.momentum,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::DepthwiseConv { .. } => "depthwise_conv",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Flatten => "flatten",
            LayerSpec::GlobalAvgPool => "global_avg_pool",
            LayerSpec::Dense { .. } => "dense",
        }
    }

    /// True for layers that map each element independently.
    pub fn is_elementwise(&self) -> bool {
        matches!(
            self,
            LayerSpec::BatchNorm { .. } | LayerSpec::Relu | LayerSpec::Sigmoid
        )
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let spatial = |what: &str| -> Result<[usize; 3]> {
            match *input {
                [h, w, c] => Ok([h, w, c]),
                _ => Err(Error::shape(format!(
                    "{what} needs an HWC input, got {:?}",
                    input
                ))),
            }
        };
        match self {
            LayerSpec::Conv { config } => {
                let [h, w, _] = spatial("conv")?;
                let g = config.geometry(h, w)?;
                Ok(vec![g.out_h, g.out_w, config.out_channels])
            }
            LayerSpec::DepthwiseConv { config } => {
                let [h, w, c] = spatial("depthwise conv")?;
                if config.out_channels != c {
                    return Err(Error::shape(format!(
                        "depthwise conv declares {} channels but receives {c}",
                        config.out_channels
                    )));
                }
                let g = config.geometry(h, w)?;
                Ok(vec![g.out_h, g.out_w, c])
            }
            LayerSpec::BatchNorm { eps, momentum } => {
                BatchNormParams {
                    eps: *eps,
                    momentum: *momentum,
                }
                .validate()?;
                Ok(input.to_vec())
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input.to_vec()),
            LayerSpec::Flatten => {
                let [h, w, c] = spatial("flatten")?;
                Ok(vec![h * w * c])
            }
            LayerSpec::GlobalAvgPool => {
                let [_, _, c] = spatial("global average pool")?;
                Ok(vec![c])
            }
            LayerSpec::Dense { units } => match *input {
                [_] if *units > 0 => Ok(vec![*units]),
                [_] => Err(Error::param("dense layer needs at least one unit")),
                _ => Err(Error::shape(format!(
                    "dense layer needs a flat input, got {:?}",
                    input
                ))),
            },
        }
    }

    /// Parameter names and shapes this layer owns, given its input shape.
    /// The boolean marks trainable entries.
    pub fn param_shapes(&self, index: usize, input: &[usize]) -> Vec<(String, Vec<usize>, bool)> {
        let name = |suffix: &str| param_name(index, suffix);
        match self {
            LayerSpec::Conv { config } => vec![(
                name("weight"),
                vec![
                    config.kernel_h,
                    config.kernel_w,
                    *input.last().unwrap(),
                    config.out_channels,
                ],
                true,
            )],
            LayerSpec::DepthwiseConv { config } => vec![(
                name("weight"),
                vec![config.kernel_h, config.kernel_w, config.out_channels],
                true,
            )],
            LayerSpec::BatchNorm { .. } => {
                let c = *input.last().unwrap();
                vec![
                    (name("gamma"), vec![c], true),
                    (name("beta"), vec![c], true),
                    (name("running_mean"), vec![c], false),
                    (name("running_var"), vec![c], false),
                ]
            }
            LayerSpec::Dense { units } => vec![
                (name("weight"), vec![input[0], *units], true),
                (name("bias"), vec![*units], true),
            ],
            _ => vec![],
        }
    }
}

pub fn param_name(layer: usize, suffix: &str) -> String {
    format!("layer{layer}.{suffix}")
}

/// Running statistics are stored alongside the weights but never trained.
pub fn is_running_stat(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// `[H, W, 3]`
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub width_multiplier: f64,
}

impl ModelSpec {
    /// Per-sample shapes: the input followed by every layer's output.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.to_vec()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().unwrap())
                .map_err(|e| Error::shape(format!("layer {i} ({}): {e}", layer.kind_name())))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Shape-checks every layer and requires a single-probability output.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Capability("model has no layers".into()));
        }
        let shapes = self.shapes()?;
        if shapes.last().unwrap() != &[1] {
            return Err(Error::shape(format!(
                "model must end in a single unit, got {:?}",
                shapes.last().unwrap()
            )));
        }
        Ok(())
    }

    /// Expected parameter layout in storage order.
    pub fn param_layout(&self) -> Result<Vec<(String, Vec<usize>, bool)>> {
        let shapes = self.shapes()?;
        Ok(self
            .layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.param_shapes(i, &shapes[i]))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Scalar = f32> {
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

/// Named parameter tensors in layer order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Parameters<T: Scalar = f32> {
    entries: IndexMap<String, Param<T>>,
}

impl<T: Scalar> Parameters<T> {
    pub fn new() -> Self {
        Parameters {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>, trainable: bool) {
        self.entries.insert(name.into(), Param { tensor, trainable });
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .map(|p| &p.tensor)
            .ok_or_else(|| Error::Validation(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.tensor)
            .ok_or_else(|| Error::Validation(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.iter()
            .filter(|(_, p)| p.trainable)
            .map(|(k, p)| (k, &p.tensor))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        Parameters {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            tensor: p.tensor.cast(),
                            trainable: p.trainable,
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn bit_eq(&self, other: &Parameters<T>) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|((ka, a), (kb, b))| {
                ka == kb && a.trainable == b.trainable && a.tensor.bit_eq(&b.tensor)
            })
    }

    /// Checks names, order, shapes and trainable flags against `spec`.
    pub fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        let layout = spec.param_layout()?;
        if layout.len() != self.entries.len() {
            return Err(Error::Validation(format!(
                "model expects {} parameter tensors, found {}",
                layout.len(),
                self.entries.len()
            )));
        }
        for ((name, shape, trainable), (have_name, have)) in layout.iter().zip(&self.entries) {
            if name != have_name || shape.as_slice() != have.tensor.shape() {
                return Err(Error::Validation(format!(
                    "parameter mismatch: expected `{name}` {:?}, found `{have_name}` {:?}",
                    shape,
                    have.tensor.shape()
                )));
            }
            if *trainable != have.trainable {
                return Err(Error::Validation(format!(
                    "parameter `{name}` has the wrong trainable flag"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub trainable: usize,
    pub total: usize,
}

pub fn count_parameters<T: Scalar>(spec: &ModelSpec, params: &Parameters<T>) -> Result<ParamCount> {
    params.check_against(spec)?;
    let mut count = ParamCount {
        trainable: 0,
        total: 0,
    };
    for (_, p) in params.iter() {
        count.total += p.tensor.len();
        if p.trainable {
            count.trainable += p.tensor.len();
        }
    }
    Ok(count)
}
