use serde::Serialize;

use crate::autodiff::tape::add_bias_rows;
use crate::error::{Error, Result};
use crate::model::{param_name, LayerSpec, ModelSpec, Parameters};
use crate::tensor::norm::{batch_norm_apply_in_place, inv_std};
use crate::tensor::{
    batch_norm_apply_slices, conv2d_slices, depthwise_conv2d_slices, global_avg_pool_slices,
    matmul_slices, relu_in_place, sigmoid_in_place, ConvGeometry, Tensor,
};

/// A region of the arena, in `f32` elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BufferSlot {
    pub offset: usize,
    pub len: usize,
}

impl BufferSlot {
    fn end(&self) -> usize {
        self.offset + self.len
    }

    fn overlaps(&self, other: &BufferSlot) -> bool {
        self.offset < other.end() && other.offset < self.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlannedOp {
    pub layer: usize,
    pub input: BufferSlot,
    pub output: BufferSlot,
    /// Output shares the input's storage.
    pub in_place: bool,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
}

/// One arena allocation and the schedule steps during which it is live.
/// Step 0 is the input copy; op `i` runs at step `i + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Storage {
    pub slot: BufferSlot,
    pub first: usize,
    pub last: usize,
}

/// Static schedule for a fixed batch shape: every op reads and writes fixed
/// offsets into one arena sized by first-fit assignment over buffer
/// lifetimes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExecutionPlan {
    pub model: String,
    pub batch_shape: [usize; 4],
    pub ops: Vec<PlannedOp>,
    pub storages: Vec<Storage>,
    pub input: BufferSlot,
    pub output: BufferSlot,
    pub output_shape: Vec<usize>,
    /// Arena length in elements.
    pub arena_len: usize,
}

fn first_fit(live: &[Storage], len: usize) -> usize {
    let mut slots: Vec<BufferSlot> = live.iter().map(|s| s.slot).collect();
    slots.sort_by_key(|s| s.offset);
    let mut candidate = 0;
    for s in slots {
        if candidate + len <= s.offset {
            break;
        }
        candidate = candidate.max(s.end());
    }
    candidate
}

impl ExecutionPlan {
    pub fn new(spec: &ModelSpec, params: &Parameters, batch: usize) -> Result<Self> {
        if batch == 0 {
            return Err(Error::Capability(
                "planning needs a fixed, positive batch size".into(),
            ));
        }
        if spec.layers.is_empty() {
            return Err(Error::Capability("cannot plan an empty graph".into()));
        }
        params.check_against(spec)?;
        let per_sample = spec.shapes()?;
        let with_batch = |s: &[usize]| {
            let mut v = vec![batch];
            v.extend_from_slice(s);
            v
        };
        let [h, w, c] = spec.input_shape;
        let batch_shape = [batch, h, w, c];

        // Lifetimes: storage 0 is the input; an elementwise op reuses its
        // input's storage unless that storage is the graph input.
        let mut lifetimes: Vec<(usize, usize, usize)> = vec![(batch * h * w * c, 0, 0)];
        let mut op_storage = Vec::with_capacity(spec.layers.len());
        let mut current = 0usize;
        for (i, layer) in spec.layers.iter().enumerate() {
            let step = i + 1;
            let in_shape = with_batch(&per_sample[i]);
            let out_shape = with_batch(&per_sample[i + 1]);
            lifetimes[current].2 = step;
            let in_place = layer.is_elementwise() && current != 0;
            let out = if in_place {
                current
            } else {
                lifetimes.push((out_shape.iter().product(), step, step));
                lifetimes.len() - 1
            };
            op_storage.push((current, out, in_place, in_shape, out_shape));
            current = out;
        }
        let end = spec.layers.len() + 1;
        lifetimes[current].2 = end;

        let mut storages: Vec<Storage> = Vec::with_capacity(lifetimes.len());
        let mut arena_len = 0;
        for &(len, first, last) in &lifetimes {
            let live: Vec<Storage> = storages.iter().copied().filter(|s| s.last >= first).collect();
            let offset = first_fit(&live, len);
            arena_len = arena_len.max(offset + len);
            storages.push(Storage {
                slot: BufferSlot { offset, len },
                first,
                last,
            });
        }

        let ops = op_storage
            .into_iter()
            .enumerate()
            .map(|(layer, (src, dst, in_place, in_shape, out_shape))| PlannedOp {
                layer,
                input: storages[src].slot,
                output: storages[dst].slot,
                in_place,
                in_shape,
                out_shape,
            })
            .collect::<Vec<_>>();
        Ok(ExecutionPlan {
            model: spec.name.clone(),
            batch_shape,
            input: storages[0].slot,
            output: storages[current].slot,
            output_shape: ops.last().map(|o: &PlannedOp| o.out_shape.clone()).unwrap_or_default(),
            ops,
            storages,
            arena_len,
        })
    }

    pub fn arena_bytes(&self) -> usize {
        self.arena_len * std::mem::size_of::<f32>()
    }

    /// Pairs of storages that are live at the same step and share arena
    /// space. Empty for every plan produced by [`ExecutionPlan::new`].
    pub fn live_overlaps(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, a) in self.storages.iter().enumerate() {
            for (j, b) in self.storages.iter().enumerate().skip(i + 1) {
                let concurrent = a.first <= b.last && b.first <= a.last;
                if concurrent && a.slot.overlaps(&b.slot) {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Weights and geometry resolved for one op.
enum Binding<'a> {
    Conv {
        weights: &'a [f32],
        geo: ConvGeometry,
        cin: usize,
        cout: usize,
    },
    Depthwise {
        weights: &'a [f32],
        geo: ConvGeometry,
        channels: usize,
    },
    BatchNorm {
        mean: &'a [f32],
        var: &'a [f32],
        inv: Vec<f32>,
        gamma: &'a [f32],
        beta: &'a [f32],
        eps: f64,
        channels: usize,
        /// Also applies the next op, an in-place relu on the same buffer.
        relu: bool,
    },
    Relu,
    /// Already performed by the previous op.
    Fused,
    Sigmoid,
    Copy,
    GlobalAvgPool([usize; 4]),
    Dense {
        weights: &'a [f32],
        bias: &'a [f32],
        k: usize,
        units: usize,
    },
}

fn bind<'a>(spec: &ModelSpec, params: &'a Parameters, op: &PlannedOp) -> Result<Binding<'a>> {
    let i = op.layer;
    let p = |suffix: &str| params.get(&param_name(i, suffix)).map(Tensor::data);
    let s = &op.in_shape;
    Ok(match &spec.layers[i] {
        LayerSpec::Conv { config } => Binding::Conv {
            weights: p("weight")?,
            geo: config.geometry(s[1], s[2])?,
            cin: s[3],
            cout: config.out_channels,
        },
        LayerSpec::DepthwiseConv { config } => Binding::Depthwise {
            weights: p("weight")?,
            geo: config.geometry(s[1], s[2])?,
            channels: s[3],
        },
        LayerSpec::BatchNorm { eps, .. } => Binding::BatchNorm {
            mean: p("running_mean")?,
            var: p("running_var")?,
            inv: inv_std(p("running_var")?, *eps),
            gamma: p("gamma")?,
            beta: p("beta")?,
            eps: *eps,
            channels: *s.last().expect("non-empty shape"),
            relu: false,
        },
        LayerSpec::Relu => Binding::Relu,
        LayerSpec::Sigmoid => Binding::Sigmoid,
        LayerSpec::Flatten => Binding::Copy,
        LayerSpec::GlobalAvgPool => Binding::GlobalAvgPool([s[0], s[1], s[2], s[3]]),
        LayerSpec::Dense { units } => Binding::Dense {
            weights: p("weight")?,
            bias: p("bias")?,
            k: s[1],
            units: *units,
        },
    })
}

fn split_io(arena: &mut [f32], input: BufferSlot, output: BufferSlot) -> (&[f32], &mut [f32]) {
    assert!(!input.overlaps(&output), "planned input and output overlap");
    if input.end() <= output.offset {
        let (lo, hi) = arena.split_at_mut(output.offset);
        (&lo[input.offset..input.end()], &mut hi[..output.len])
    } else {
        let (lo, hi) = arena.split_at_mut(input.offset);
        (&hi[..input.len], &mut lo[output.offset..output.end()])
    }
}

/// Executes the elementwise part of an op on its output buffer.
fn apply_in_place(b: &Binding<'_>, data: &mut [f32]) {
    match *b {
        Binding::BatchNorm {
            mean,
            ref inv,
            gamma,
            beta,
            channels,
            relu,
            ..
        } => batch_norm_apply_in_place(data, channels, mean, inv, gamma, beta, relu),
        Binding::Relu => relu_in_place(data),
        Binding::Fused => {}
        Binding::Sigmoid => sigmoid_in_place(data),
        _ => unreachable!("only elementwise ops run in place"),
    }
}

fn run_op(b: &Binding<'_>, op: &PlannedOp, arena: &mut [f32]) {
    if op.in_place || matches!(b, Binding::Fused) {
        apply_in_place(b, &mut arena[op.output.offset..op.output.end()]);
        return;
    }
    let n = op.in_shape[0];
    let (src, dst) = split_io(arena, op.input, op.output);
    match *b {
        Binding::Conv {
            weights,
            ref geo,
            cin,
            cout,
        } => conv2d_slices(src, n, cin, weights, cout, geo, dst),
        Binding::Depthwise {
            weights,
            ref geo,
            channels,
        } => depthwise_conv2d_slices(src, n, channels, weights, geo, dst),
        Binding::BatchNorm {
            mean,
            var,
            gamma,
            beta,
            eps,
            channels,
            relu,
            ..
        } => {
            batch_norm_apply_slices(src, channels, mean, var, gamma, beta, eps, dst);
            if relu {
                relu_in_place(dst);
            }
        }
        Binding::Relu | Binding::Sigmoid => {
            dst.copy_from_slice(src);
            apply_in_place(b, dst);
        }
        Binding::Copy => dst.copy_from_slice(src),
        Binding::Fused => unreachable!("fused ops are handled above"),
        Binding::GlobalAvgPool(shape) => global_avg_pool_slices(src, shape, dst),
        Binding::Dense {
            weights,
            bias,
            k,
            units,
        } => {
            matmul_slices(src, weights, n, k, units, dst);
            add_bias_rows(dst, bias);
        }
    }
}

/// Outcome of an instrumented run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CanaryReport {
    pub ops_checked: usize,
    /// Arena elements outside an op's output that changed while it ran.
    pub corruptions: usize,
    /// Output elements an op left holding the canary pattern.
    pub unwritten: usize,
    /// Storage pairs that overlap while simultaneously live.
    pub overlapping_storages: usize,
}

impl CanaryReport {
    pub fn clean(&self) -> bool {
        self.corruptions == 0 && self.unwritten == 0 && self.overlapping_storages == 0
    }
}

const CACHE_LINE: usize = 64;
const CANARY_BITS: u32 = 0x7fa5_a5a5;

/// A plan bound to concrete weights plus its arena. One instance serves one
/// caller at a time.
pub struct PlanInstance<'a> {
    plan: ExecutionPlan,
    bindings: Vec<Binding<'a>>,
    storage: Vec<f32>,
    /// Index in `storage` where the cache-line-aligned arena starts.
    base: usize,
}

impl<'a> PlanInstance<'a> {
    pub fn new(spec: &ModelSpec, params: &'a Parameters, batch: usize) -> Result<Self> {
        Self::from_plan(ExecutionPlan::new(spec, params, batch)?, spec, params)
    }

    pub fn from_plan(plan: ExecutionPlan, spec: &ModelSpec, params: &'a Parameters) -> Result<Self> {
        Self::with_storage(plan, spec, params, Vec::new())
    }

    /// Like [`PlanInstance::from_plan`], reusing `storage` (typically from
    /// [`PlanInstance::into_storage`]) as the arena's backing memory.
    pub fn with_storage(
        plan: ExecutionPlan,
        spec: &ModelSpec,
        params: &'a Parameters,
        mut storage: Vec<f32>,
    ) -> Result<Self> {
        let mut bindings = plan
            .ops
            .iter()
            .map(|op| bind(spec, params, op))
            .collect::<Result<Vec<_>>>()?;
        for k in 1..bindings.len() {
            let (prev, next) = (&plan.ops[k - 1], &plan.ops[k]);
            let chained = next.in_place && next.input == prev.output;
            let fuse = chained
                && matches!(bindings[k], Binding::Relu)
                && matches!(bindings[k - 1], Binding::BatchNorm { relu: false, .. });
            if fuse {
                if let Binding::BatchNorm { relu, .. } = &mut bindings[k - 1] {
                    *relu = true;
                }
                bindings[k] = Binding::Fused;
            }
        }
        let lanes = CACHE_LINE / std::mem::size_of::<f32>();
        storage.clear();
        storage.resize(plan.arena_len + lanes, 0.0);
        let misalign = (storage.as_ptr() as usize % CACHE_LINE) / std::mem::size_of::<f32>();
        let base = (lanes - misalign) % lanes;
        Ok(PlanInstance {
            plan,
            bindings,
            storage,
            base,
        })
    }

    fn arena(&self) -> &[f32] {
        &self.storage[self.base..self.base + self.plan.arena_len]
    }

    fn arena_mut(&mut self) -> &mut [f32] {
        let (b, n) = (self.base, self.plan.arena_len);
        &mut self.storage[b..b + n]
    }

    pub fn plan(&self) -> &ExecutionPlan {
        &self.plan
    }

    pub fn into_storage(self) -> Vec<f32> {
        self.storage
    }

    fn load_input(&mut self, input: &Tensor<f32>) -> Result<()> {
        if input.shape() != self.plan.batch_shape {
            return Err(Error::shape(format!(
                "plan for `{}` expects input {:?}, got {:?}",
                self.plan.model,
                self.plan.batch_shape,
                input.shape()
            )));
        }
        let s = self.plan.input;
        self.arena_mut()[s.offset..s.end()].copy_from_slice(input.data());
        Ok(())
    }

    fn read_output(&self) -> Result<Tensor<f32>> {
        let s = self.plan.output;
        Tensor::new(&self.plan.output_shape, &self.arena()[s.offset..s.end()])
    }

    pub fn execute(&mut self, input: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.load_input(input)?;
        for (b, op) in self.bindings.iter().zip(&self.plan.ops) {
            run_op(b, op, &mut self.storage[self.base..self.base + self.plan.arena_len]);
        }
        self.read_output()
    }

    /// Runs with the arena pre-filled with a NaN canary, checking after each
    /// op that nothing outside its output changed and that its output was
    /// fully written.
    pub fn execute_instrumented(&mut self, input: &Tensor<f32>) -> Result<(Tensor<f32>, CanaryReport)> {
        let canary = f32::from_bits(CANARY_BITS);
        self.arena_mut().fill(canary);
        self.load_input(input)?;
        let mut report = CanaryReport {
            overlapping_storages: self.plan.live_overlaps().len(),
            ..Default::default()
        };
        for (b, op) in self.bindings.iter().zip(&self.plan.ops) {
            let before = self.arena().to_vec();
            run_op(b, op, &mut self.storage[self.base..self.base + self.plan.arena_len]);
            let out = op.output;
            for (i, (a, z)) in self.arena().iter().zip(&before).enumerate() {
                let inside = i >= out.offset && i < out.end();
                if inside {
                    report.unwritten += (a.to_bits() == CANARY_BITS) as usize;
                } else {
                    report.corruptions += (a.to_bits() != z.to_bits()) as usize;
                }
            }
            report.ops_checked += 1;
        }
        Ok((self.read_output()?, report))
    }
}

/// Plans, binds and runs once.
pub fn execute_planned(plan: &ExecutionPlan, spec: &ModelSpec, params: &Parameters, input: &Tensor<f32>) -> Result<Tensor<f32>> {
    PlanInstance::from_plan(plan.clone(), spec, params)?.execute(input)
}

