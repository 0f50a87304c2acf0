use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{
    self, batch_statistics, conv::conv2d_backward, conv::depthwise_conv2d_backward,
    norm::batch_norm_infer_backward, norm::batch_norm_train_backward, BatchNormMode, ConvConfig,
    Scalar, Tensor,
};

/// Index of a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Constant,
    Param(String),
    Conv2d(ConvConfig),
    DepthwiseConv2d(ConvConfig),
    BatchNorm {
        mode: BatchNormMode,
        eps: f64,
        mean: Vec<T>,
        var: Vec<T>,
    },
    Relu,
    Sigmoid,
    Flatten,
    GlobalAvgPool,
    MatMul,
    AddBias,
    Scale(T),
    Add,
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    inputs: Vec<VarId>,
    value: Tensor<T>,
}

/// Gradients keyed by parameter name, in the order the parameters were
/// recorded.
pub type GradientSet<T> = IndexMap<String, Tensor<T>>;

/// Linear record of a forward pass. Every node only references nodes
/// recorded before it, so the node order is a topological order.
#[derive(Debug, Clone, Default)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    output: Option<VarId>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            output: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: VarId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn output(&self) -> Option<VarId> {
        self.output
    }

    pub fn set_output(&mut self, id: VarId) {
        self.output = Some(id);
    }

    fn push(&mut self, op: Op<T>, inputs: Vec<VarId>, value: Tensor<T>) -> VarId {
        debug_assert!(inputs.iter().all(|i| i.0 < self.nodes.len()));
        self.nodes.push(Node { op, inputs, value });
        VarId(self.nodes.len() - 1)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> VarId {
        self.push(Op::Constant, vec![], value)
    }

    /// A named trainable leaf; its gradient appears in the [`GradientSet`].
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<T>) -> VarId {
        self.push(Op::Param(name.into()), vec![], value)
    }

    pub fn conv2d(&mut self, x: VarId, w: VarId, cfg: &ConvConfig) -> Result<VarId> {
        let y = tensor::conv2d(self.value(x), self.value(w), cfg)?;
        Ok(self.push(Op::Conv2d(*cfg), vec![x, w], y))
    }

    pub fn depthwise_conv2d(&mut self, x: VarId, w: VarId, cfg: &ConvConfig) -> Result<VarId> {
        let y = tensor::depthwise_conv2d(self.value(x), self.value(w), cfg)?;
        Ok(self.push(Op::DepthwiseConv2d(*cfg), vec![x, w], y))
    }

    /// Batch norm over the last axis. In train mode the batch statistics are
    /// computed here and returned so the caller can blend them into its
    /// running statistics; in infer mode `running` supplies them.
    pub fn batch_norm(
        &mut self,
        x: VarId,
        gamma: VarId,
        beta: VarId,
        mode: BatchNormMode,
        running: (&[T], &[T]),
        eps: f64,
    ) -> Result<(VarId, Vec<T>, Vec<T>)> {
        if !(eps > 0.0) {
            return Err(Error::param(format!("batch norm eps must be positive, got {eps}")));
        }
        let xv = self.value(x);
        let c = *xv.shape().last().unwrap();
        for (t, what) in [(self.value(gamma), "gamma"), (self.value(beta), "beta")] {
            if t.len() != c {
                return Err(Error::shape(format!(
                    "batch norm {what} has {} entries, expected {c}",
                    t.len()
                )));
            }
        }
        let (mean, var) = match mode {
            BatchNormMode::Train => batch_statistics(xv.data(), c),
            BatchNormMode::Infer => {
                if running.0.len() != c || running.1.len() != c {
                    return Err(Error::shape("running statistics length mismatch"));
                }
                (running.0.to_vec(), running.1.to_vec())
            }
        };
        let mut out = vec![T::zero(); xv.len()];
        tensor::batch_norm_apply_slices(
            xv.data(),
            c,
            &mean,
            &var,
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
            &mut out,
        );
        let y = Tensor::from_vec(xv.shape().to_vec(), out)?;
        let id = self.push(
            Op::BatchNorm {
                mode,
                eps,
                mean: mean.clone(),
                var: var.clone(),
            },
            vec![x, gamma, beta],
            y,
        );
        Ok((id, mean, var))
    }

    pub fn relu(&mut self, x: VarId) -> VarId {
        let y = self.value(x).relu();
        self.push(Op::Relu, vec![x], y)
    }

    pub fn sigmoid(&mut self, x: VarId) -> VarId {
        let y = self.value(x).sigmoid();
        self.push(Op::Sigmoid, vec![x], y)
    }

    pub fn flatten(&mut self, x: VarId) -> Result<VarId> {
        let y = self.value(x).flatten()?;
        Ok(self.push(Op::Flatten, vec![x], y))
    }

    pub fn global_avg_pool(&mut self, x: VarId) -> Result<VarId> {
        let y = tensor::global_avg_pool(self.value(x))?;
        Ok(self.push(Op::GlobalAvgPool, vec![x], y))
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let y = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul, vec![a, b], y))
    }

    /// `[N, K] + [K]`, broadcasting the bias over rows.
    pub fn add_bias(&mut self, x: VarId, bias: VarId) -> Result<VarId> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if xv.rank() != 2 || bv.len() != xv.shape()[1] {
            return Err(Error::shape(format!(
                "bias {:?} does not broadcast over {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let mut y = xv.clone();
        add_bias_rows(y.data_mut(), bv.data());
        Ok(self.push(Op::AddBias, vec![x, bias], y))
    }

    /// Dense layer `x * W + b`.
    pub fn dense(&mut self, x: VarId, w: VarId, b: VarId) -> Result<VarId> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    pub fn scale(&mut self, x: VarId, factor: T) -> VarId {
        let y = self.value(x).map(|v| v * factor);
        self.push(Op::Scale(factor), vec![x], y)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(format!(
                "add operands differ: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let y = Tensor::from_vec(av.shape().to_vec(), data)?;
        Ok(self.push(Op::Add, vec![a, b], y))
    }

    /// Reverse sweep from the recorded output seeded with `seed`.
    pub fn backward(&self, seed: &Tensor<T>) -> Result<GradientSet<T>> {
        let out = self
            .output
            .ok_or_else(|| Error::Capability("tape has no output".into()))?;
        self.backward_from(out, seed)
    }

    /// Reverse sweep from an arbitrary node. Nodes are visited in decreasing
    /// id order, so contributions to a fan-out node are summed in a fixed
    /// order.
    pub fn backward_from(&self, out: VarId, seed: &Tensor<T>) -> Result<GradientSet<T>> {
        let out_shape = self.value(out).shape();
        if seed.shape() != out_shape {
            return Err(Error::shape(format!(
                "seed shape {:?} does not match output {:?}",
                seed.shape(),
                out_shape
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(seed.clone());

        for id in (0..=out.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let contribs = self.node_backward(node, &g)?;
            for (input, cg) in node.inputs.iter().zip(contribs) {
                let Some(cg) = cg else { continue };
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, v) in acc.data_mut().iter_mut().zip(cg.data()) {
                            *a += *v;
                        }
                    }
                    slot @ None => *slot = Some(cg),
                }
            }
            // Leaves keep their gradient for collection below.
            if node.inputs.is_empty() {
                grads[id] = Some(g);
            }
        }

        let mut set = GradientSet::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                let g = match grads.get_mut(id).and_then(Option::take) {
                    Some(g) => g,
                    None => Tensor::zeros(node.value.shape())?,
                };
                if set.insert(name.clone(), g).is_some() {
                    return Err(Error::param(format!("parameter `{name}` recorded twice")));
                }
            }
        }
        Ok(set)
    }

    fn node_backward(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let input = |i: usize| self.value(node.inputs[i]);
        Ok(match &node.op {
            Op::Constant | Op::Param(_) => vec![],
            Op::Conv2d(cfg) => {
                let (dx, dw) = conv2d_backward(input(0), input(1), cfg, g)?;
                vec![Some(dx), Some(dw)]
            }
            Op::DepthwiseConv2d(cfg) => {
                let (dx, dw) = depthwise_conv2d_backward(input(0), input(1), cfg, g)?;
                vec![Some(dx), Some(dw)]
            }
            Op::BatchNorm {
                mode,
                eps,
                mean,
                var,
            } => {
                let x = input(0);
                let c = mean.len();
                let gamma = input(1).data();
                let (dx, dgamma, dbeta) = match mode {
                    BatchNormMode::Train => {
                        batch_norm_train_backward(x.data(), c, mean, var, gamma, *eps, g.data())
                    }
                    BatchNormMode::Infer => {
                        batch_norm_infer_backward(x.data(), c, mean, var, gamma, *eps, g.data())
                    }
                };
                vec![
                    Some(Tensor::from_vec(x.shape().to_vec(), dx)?),
                    Some(Tensor::from_vec(input(1).shape().to_vec(), dgamma)?),
                    Some(Tensor::from_vec(input(2).shape().to_vec(), dbeta)?),
                ]
            }
            Op::Relu => {
                let x = input(0);
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xv, &gv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                vec![Some(Tensor::from_vec(x.shape().to_vec(), data)?)]
            }
            Op::Sigmoid => {
                let data = node
                    .value
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&s, &gv)| gv * s * (T::one() - s))
                    .collect();
                vec![Some(Tensor::from_vec(node.value.shape().to_vec(), data)?)]
            }
            Op::Flatten => vec![Some(g.clone().reshape(input(0).shape())?)],
            Op::GlobalAvgPool => {
                let x = input(0);
                let [n, h, w, c] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
                let inv = T::one() / T::from_usize(h * w);
                let mut dx = vec![T::zero(); x.len()];
                for b in 0..n {
                    let gb = &g.data()[b * c..(b + 1) * c];
                    for px in dx[b * h * w * c..(b + 1) * h * w * c].chunks_exact_mut(c) {
                        for (d, &gv) in px.iter_mut().zip(gb) {
                            *d = gv * inv;
                        }
                    }
                }
                vec![Some(Tensor::from_vec(x.shape().to_vec(), dx)?)]
            }
            Op::MatMul => {
                let (a, b) = (input(0), input(1));
                let da = tensor::matmul(g, &transpose(b))?;
                let db = tensor::matmul(&transpose(a), g)?;
                vec![Some(da), Some(db)]
            }
            Op::AddBias => {
                let k = g.shape()[1];
                let mut db = vec![T::zero(); k];
                for row in g.data().chunks_exact(k) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                vec![
                    Some(g.clone()),
                    Some(Tensor::from_vec(input(1).shape().to_vec(), db)?),
                ]
            }
            Op::Scale(f) => vec![Some(g.map(|v| v * *f))],
            Op::Add => vec![Some(g.clone()), Some(g.clone())],
        })
    }
}

pub(crate) fn add_bias_rows<T: Scalar>(data: &mut [T], bias: &[T]) {
    for row in data.chunks_exact_mut(bias.len()) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn transpose<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::from_vec(vec![c, r], out).expect("transpose preserves element count")
}
