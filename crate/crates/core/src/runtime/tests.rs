use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::model::{build_custom_rop_net, build_mobilenet_like, forward, init_parameters, LayerSpec, ModelSpec};
use crate::tensor::{BatchNormMode, ConvConfig, Padding, Tensor};

fn input(spec: &ModelSpec, n: usize, seed: u64) -> Tensor<f32> {
    let [h, w, c] = spec.input_shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(vec![n, h, w, c], (0..n * h * w * c).map(|_| rng.random::<f32>()).collect()).unwrap()
}

fn max_abs_diff(a: &Tensor<f32>, b: &Tensor<f32>) -> f32 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

fn no_reuse_len(spec: &ModelSpec, batch: usize) -> usize {
    spec.shapes().unwrap().iter().map(|s| batch * s.iter().product::<usize>()).sum()
}

#[test]
fn arena_smaller_than_separate_buffers() {
    let (spec, p) = build_custom_rop_net(64, 0.25, 1).unwrap();
    let plan = ExecutionPlan::new(&spec, &p, 2).unwrap();
    assert!(plan.arena_len < no_reuse_len(&spec, 2));
    assert_eq!(plan.arena_bytes(), plan.arena_len * 4);
    assert!(plan.live_overlaps().is_empty());
    assert_eq!(plan.ops.len(), spec.layers.len());
}

#[test]
fn arena_at_least_largest_live_pair() {
    let (spec, p) = build_mobilenet_like(64, 2).unwrap();
    let plan = ExecutionPlan::new(&spec, &p, 1).unwrap();
    for op in plan.ops.iter().filter(|o| !o.in_place) {
        assert!(plan.arena_len >= op.input.len + op.output.len);
    }
}

#[test]
fn single_conv_arena_is_input_plus_output() {
    let spec = ModelSpec {
        name: "one".into(),
        input_shape: [8, 8, 3],
        layers: vec![LayerSpec::Conv {
            config: ConvConfig::new(3, 1, Padding::Same, 5),
        }],
        width_multiplier: 1.0,
    };
    let p = init_parameters(&spec, 0).unwrap();
    let plan = ExecutionPlan::new(&spec, &p, 2).unwrap();
    assert_eq!(plan.arena_len, 2 * 8 * 8 * 3 + 2 * 8 * 8 * 5);
}

#[test]
fn elementwise_never_overwrites_graph_input() {
    let spec = ModelSpec {
        name: "act".into(),
        input_shape: [4, 4, 3],
        layers: vec![LayerSpec::Relu, LayerSpec::Sigmoid],
        width_multiplier: 1.0,
    };
    let p = init_parameters(&spec, 0).unwrap();
    let plan = ExecutionPlan::new(&spec, &p, 1).unwrap();
    assert!(!plan.ops[0].in_place);
    assert!(plan.ops[1].in_place);
    assert_eq!(plan.arena_len, 2 * 48);
    let x = input(&spec, 1, 3);
    let mut inst = PlanInstance::from_plan(plan, &spec, &p).unwrap();
    let (y, report) = inst.execute_instrumented(&x).unwrap();
    assert!(report.clean(), "{report:?}");
    let eager = forward(&spec, &p, &x, BatchNormMode::Infer).unwrap();
    assert_eq!(y.data(), eager.data());
}

#[test]
fn planning_is_deterministic() {
    let (spec, p) = build_mobilenet_like(64, 4).unwrap();
    let a = ExecutionPlan::new(&spec, &p, 3).unwrap();
    let b = ExecutionPlan::new(&spec, &p, 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn capability_and_shape_errors() {
    let (spec, p) = build_custom_rop_net(64, 0.25, 5).unwrap();
    assert!(matches!(ExecutionPlan::new(&spec, &p, 0), Err(Error::Capability(_))));
    let empty = ModelSpec {
        layers: Vec::new(),
        ..spec.clone()
    };
    assert!(matches!(ExecutionPlan::new(&empty, &p, 1), Err(Error::Capability(_))));
    let mut inst = PlanInstance::new(&spec, &p, 2).unwrap();
    assert!(matches!(inst.execute(&input(&spec, 3, 0)), Err(Error::Shape(_))));
    assert!(inst.execute(&input(&spec, 2, 0)).is_ok());
}

#[test]
fn repeated_execution_is_bitwise_stable() {
    let (spec, p) = build_custom_rop_net(64, 0.25, 6).unwrap();
    let mut inst = PlanInstance::new(&spec, &p, 2).unwrap();
    let x = input(&spec, 2, 1);
    let first = inst.execute(&x).unwrap();
    inst.execute(&input(&spec, 2, 99)).unwrap();
    let again = inst.execute(&x).unwrap();
    assert_eq!(first.data(), again.data());
}

#[test]
fn planned_matches_eager_on_random_inputs() {
    let models = [
        build_custom_rop_net(64, 0.25, 7).unwrap(),
        build_mobilenet_like(64, 8).unwrap(),
    ];
    for (spec, p) in &models {
        let plan = ExecutionPlan::new(spec, p, 1).unwrap();
        let mut inst = PlanInstance::from_plan(plan, spec, p).unwrap();
        for s in 0..20 {
            let x = input(spec, 1, 100 + s);
            let eager = forward(spec, p, &x, BatchNormMode::Infer).unwrap();
            let planned = inst.execute(&x).unwrap();
            assert_eq!(planned.shape(), eager.shape());
            assert!(max_abs_diff(&planned, &eager) <= 1e-6, "{}", spec.name);
        }
    }
}

#[test]
fn execute_planned_matches_instance() {
    let (spec, p) = build_custom_rop_net(64, 0.25, 9).unwrap();
    let plan = ExecutionPlan::new(&spec, &p, 3).unwrap();
    let x = input(&spec, 3, 2);
    let a = execute_planned(&plan, &spec, &p, &x).unwrap();
    let b = forward(&spec, &p, &x, BatchNormMode::Infer).unwrap();
    assert!(max_abs_diff(&a, &b) <= 1e-6);
}

#[test]
fn canary_run_is_clean_for_both_models() {
    for (spec, p) in [build_custom_rop_net(64, 0.25, 10).unwrap(), build_mobilenet_like(64, 11).unwrap()] {
        let mut inst = PlanInstance::new(&spec, &p, 2).unwrap();
        let x = input(&spec, 2, 5);
        let (y, report) = inst.execute_instrumented(&x).unwrap();
        assert!(report.clean(), "{}: {report:?}", spec.name);
        assert_eq!(report.ops_checked, spec.layers.len());
        assert_eq!(y.data(), inst.execute(&x).unwrap().data());
    }
}

#[test]
fn static_check_flags_aliased_plan() {
    let (spec, p) = build_custom_rop_net(64, 0.25, 12).unwrap();
    let mut plan = ExecutionPlan::new(&spec, &p, 1).unwrap();
    // Move the first conv's output onto the tail of its input.
    let op = &mut plan.ops[0];
    let shift = op.input.len / 2;
    op.output.offset = op.input.offset + op.input.len - shift;
    plan.storages[1].slot = op.output;
    plan.arena_len = plan.arena_len.max(op.output.offset + op.output.len);
    assert!(!plan.live_overlaps().is_empty());
}

#[test]
fn bench_mode_names_roundtrip() {
    for m in BenchMode::ALL {
        assert_eq!(m.name().parse::<BenchMode>().unwrap(), m);
    }
    assert!(matches!("turbo".parse::<BenchMode>(), Err(Error::Parameter(_))));
}

#[test]
fn bench_reports_and_csv() {
    let (spec, p) = build_custom_rop_net(64, 0.25, 13).unwrap();
    let (mspec, mp) = build_mobilenet_like(64, 14).unwrap();
    let cfg = BenchConfig {
        n_images: 3,
        runtimes: 2,
        warmup: 1,
        seed: 0,
    };
    let mut reports = Vec::new();
    for (s, q) in [(&spec, &p), (&mspec, &mp)] {
        for m in BenchMode::ALL {
            let r = fps_bench_model(s, q, m, &cfg).unwrap();
            assert_eq!(r.seconds.len(), 2);
            assert!(r.mean_fps > 0.0 && r.std_fps >= 0.0);
            reports.push(r);
        }
    }
    normalize_reports(&mut reports);
    let top = reports.iter().map(|r| r.normalized_fps).fold(0.0, f64::max);
    assert_eq!(top, 1.0);
    assert!(reports.iter().all(|r| r.normalized_fps > 0.0 && r.normalized_fps <= 1.0));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bench.csv");
    export_bench_csv(&reports, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert_eq!(text.lines().next().unwrap(), BENCH_HEADER.join(","));
    let back = read_bench_csv(&path).unwrap();
    assert_eq!(back.len(), 6);
    assert_eq!(back[1].mode, BenchMode::PlannedPercall);
    assert!((back[0].mean_fps - reports[0].mean_fps).abs() <= 1e-6);

    export_bench_csv(&[], &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
}

#[test]
fn bench_rejects_empty_workload() {
    let (spec, p) = build_custom_rop_net(64, 0.25, 15).unwrap();
    let cfg = BenchConfig {
        n_images: 0,
        ..BenchConfig::default()
    };
    assert!(matches!(fps_bench_model(&spec, &p, BenchMode::Eager, &cfg), Err(Error::Parameter(_))));
}

#[test]
fn suite_reports_every_pair_in_model_major_order() {
    let (spec, p) = build_custom_rop_net(64, 0.25, 16).unwrap();
    let (mspec, mp) = build_mobilenet_like(64, 17).unwrap();
    let cfg = BenchConfig {
        n_images: 2,
        runtimes: 3,
        warmup: 0,
        seed: 1,
    };
    let modes = [BenchMode::PlannedPreinit, BenchMode::Eager];
    let reports = fps_bench_suite(&[(&spec, &p), (&mspec, &mp)], &modes, &cfg).unwrap();
    let order: Vec<(&str, BenchMode)> = reports.iter().map(|r| (r.model.as_str(), r.mode)).collect();
    assert_eq!(
        order,
        [
            ("custom_rop", BenchMode::PlannedPreinit),
            ("custom_rop", BenchMode::Eager),
            ("mobilenet_like", BenchMode::PlannedPreinit),
            ("mobilenet_like", BenchMode::Eager),
        ]
    );
    assert!(reports.iter().all(|r| r.seconds.len() == 3 && r.n_images == 2));
    assert!(matches!(fps_bench_suite(&[], &modes, &cfg), Err(Error::Parameter(_))));
    assert!(matches!(fps_bench_suite(&[(&spec, &p)], &[], &cfg), Err(Error::Parameter(_))));
}

#[test]
fn fused_norm_relu_stays_bitwise_equal_to_eager() {
    for (spec, p) in [build_custom_rop_net(64, 0.5, 18).unwrap(), build_mobilenet_like(64, 19).unwrap()] {
        let mut inst = PlanInstance::new(&spec, &p, 1).unwrap();
        for seed in 0..3 {
            let x = input(&spec, 1, seed);
            let eager = forward(&spec, &p, &x, BatchNormMode::Infer).unwrap();
            assert!(inst.execute(&x).unwrap().bit_eq(&eager), "{}", spec.name);
            let (y, report) = inst.execute_instrumented(&x).unwrap();
            assert!(report.clean() && y.bit_eq(&eager));
        }
    }
}
