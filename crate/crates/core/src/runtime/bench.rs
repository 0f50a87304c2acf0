use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::plan::PlanInstance;
use crate::error::{Error, Result};
use crate::model::{forward, load_model, ModelSpec, Parameters};
use crate::tensor::{BatchNormMode, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    /// Layer-by-layer forward with fresh allocations.
    Eager,
    /// Plan, bind and allocate the arena inside every timed repetition.
    PlannedPercall,
    /// Plan once, then reuse the bound instance.
    PlannedPreinit,
}

impl BenchMode {
    pub const ALL: [BenchMode; 3] = [BenchMode::Eager, BenchMode::PlannedPercall, BenchMode::PlannedPreinit];

    pub fn name(self) -> &'static str {
        match self {
            BenchMode::Eager => "eager",
            BenchMode::PlannedPercall => "planned_percall",
            BenchMode::PlannedPreinit => "planned_preinit",
        }
    }
}

impl fmt::Display for BenchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BenchMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::param(format!("unknown bench mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FpsReport {
    pub model: String,
    pub mode: BenchMode,
    pub n_images: usize,
    pub runtimes: usize,
    /// Wall time of each timed repetition.
    pub seconds: Vec<f64>,
    pub mean_fps: f64,
    pub std_fps: f64,
    /// `mean_fps` over the fastest mean among the reports it was normalized with.
    pub normalized_fps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub n_images: usize,
    pub runtimes: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n_images: 100,
            runtimes: 5,
            warmup: 1,
            seed: 0,
        }
    }
}

fn random_inputs(spec: &ModelSpec, n: usize, seed: u64) -> Result<Vec<Tensor<f32>>> {
    let [h, w, c] = spec.input_shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Tensor::from_vec(vec![1, h, w, c], (0..h * w * c).map(|_| rng.random::<f32>()).collect()))
        .collect()
}

fn run_once<'a>(
    spec: &ModelSpec,
    params: &'a Parameters,
    mode: BenchMode,
    inputs: &[Tensor<f32>],
    preinit: &mut Option<PlanInstance<'a>>,
) -> Result<()> {
    let mut fresh = match mode {
        BenchMode::PlannedPercall => Some(PlanInstance::new(spec, params, 1)?),
        _ => None,
    };
    for x in inputs {
        let y = match (mode, fresh.as_mut(), preinit.as_mut()) {
            (BenchMode::Eager, ..) => forward(spec, params, x, BatchNormMode::Infer)?,
            (_, Some(inst), _) | (_, None, Some(inst)) => inst.execute(x)?,
            (_, None, None) => unreachable!("planned modes carry an instance"),
        };
        std::hint::black_box(y);
    }
    Ok(())
}

fn summarize(spec: &ModelSpec, mode: BenchMode, config: &BenchConfig, seconds: Vec<f64>) -> FpsReport {
    let fps: Vec<f64> = seconds.iter().map(|s| config.n_images as f64 / s.max(1e-12)).collect();
    let mean = fps.iter().sum::<f64>() / fps.len() as f64;
    let std = if fps.len() > 1 {
        (fps.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (fps.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    FpsReport {
        model: spec.name.clone(),
        mode,
        n_images: config.n_images,
        runtimes: config.runtimes,
        seconds,
        mean_fps: mean,
        std_fps: std,
        normalized_fps: 1.0,
    }
}

/// Single-image throughput on one thread for every model and mode, one
/// report per pair in model-major order. Timed repetitions are interleaved
/// round-robin across pairs, starting one pair later each round, so slow
/// drift in machine load is shared by all of them. Warm-up repetitions are
/// run but not timed.
pub fn fps_bench_suite(
    models: &[(&ModelSpec, &Parameters)],
    modes: &[BenchMode],
    config: &BenchConfig,
) -> Result<Vec<FpsReport>> {
    if config.n_images == 0 || config.runtimes == 0 {
        return Err(Error::param("bench needs at least one image and one runtime"));
    }
    if models.is_empty() || modes.is_empty() {
        return Err(Error::param("bench needs at least one model and one mode"));
    }
    let mut inputs = Vec::with_capacity(models.len());
    for (spec, params) in models {
        params.check_against(spec)?;
        inputs.push(random_inputs(spec, config.n_images, config.seed)?);
    }
    let pairs: Vec<(usize, BenchMode)> = (0..models.len())
        .flat_map(|m| modes.iter().map(move |&mode| (m, mode)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Capability(format!("cannot build bench thread pool: {e}")))?;
    let seconds = pool.install(|| -> Result<Vec<Vec<f64>>> {
        let mut preinit = pairs
            .iter()
            .map(|&(m, mode)| match mode {
                BenchMode::PlannedPreinit => PlanInstance::new(models[m].0, models[m].1, 1).map(Some),
                _ => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?;
        let mut seconds = vec![Vec::with_capacity(config.runtimes); pairs.len()];
        for _ in 0..config.warmup {
            for (k, &(m, mode)) in pairs.iter().enumerate() {
                run_once(models[m].0, models[m].1, mode, &inputs[m], &mut preinit[k])?;
            }
        }
        for round in 0..config.runtimes {
            for step in 0..pairs.len() {
                let k = (round + step) % pairs.len();
                let (m, mode) = pairs[k];
                let t = Instant::now();
                run_once(models[m].0, models[m].1, mode, &inputs[m], &mut preinit[k])?;
                seconds[k].push(t.elapsed().as_secs_f64());
            }
        }
        Ok(seconds)
    })?;
    Ok(pairs
        .iter()
        .zip(seconds)
        .map(|(&(m, mode), s)| summarize(models[m].0, mode, config, s))
        .collect())
}

pub fn fps_bench_model(spec: &ModelSpec, params: &Parameters, mode: BenchMode, config: &BenchConfig) -> Result<FpsReport> {
    let mut reports = fps_bench_suite(&[(spec, params)], &[mode], config)?;
    Ok(reports.remove(0))
}

pub fn fps_bench(model_path: impl AsRef<Path>, mode: BenchMode, config: &BenchConfig) -> Result<FpsReport> {
    let (spec, params) = load_model(model_path)?;
    fps_bench_model(&spec, &params, mode, config)
}

/// Rescales `normalized_fps` so the fastest report is 1.
pub fn normalize_reports(reports: &mut [FpsReport]) {
    let max = reports.iter().map(|r| r.mean_fps).fold(0.0, f64::max);
    for r in reports {
        r.normalized_fps = if max > 0.0 { r.mean_fps / max } else { 0.0 };
    }
}

pub const BENCH_HEADER: [&str; 7] = [
    "model",
    "mode",
    "n_images",
    "runtimes",
    "mean_fps",
    "std_fps",
    "normalized_fps",
];

pub fn export_bench_csv(reports: &[FpsReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(&mut buf);
        w.write_record(BENCH_HEADER)?;
        for r in reports {
            w.write_record([
                r.model.clone(),
                r.mode.to_string(),
                r.n_images.to_string(),
                r.runtimes.to_string(),
                format!("{:.6}", r.mean_fps),
                format!("{:.6}", r.std_fps),
                format!("{:.6}", r.normalized_fps),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads rows written by [`export_bench_csv`]; per-run timings are not stored.
pub fn read_bench_csv(path: impl AsRef<Path>) -> Result<Vec<FpsReport>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let bad = |col: &str| Error::Data(format!("{}: bad {col}", path.display()));
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        if row.len() != BENCH_HEADER.len() {
            return Err(bad("row length"));
        }
        let f = |i: usize| row[i].parse::<f64>().map_err(|_| bad(BENCH_HEADER[i]));
        let u = |i: usize| row[i].parse::<usize>().map_err(|_| bad(BENCH_HEADER[i]));
        out.push(FpsReport {
            model: row[0].to_string(),
            mode: row[1].parse().map_err(|_| bad("mode"))?,
            n_images: u(2)?,
            runtimes: u(3)?,
            seconds: Vec::new(),
            mean_fps: f(4)?,
            std_fps: f(5)?,
            normalized_fps: f(6)?,
        });
    }
    Ok(out)
}
