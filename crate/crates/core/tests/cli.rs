use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ropnet::data::Manifest;
use ropnet::model::{build_custom_rop_net, count_parameters, load_model, save_model};

fn ropnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ropnet"))
        .current_dir(dir)
        .args(args)
        .env_remove("ROPNET_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = ropnet(dir, args);
    assert_eq!(code(&o), 0, "{args:?} failed: {}", stderr(&o));
    o
}

fn synth_small(dir: &Path, out: &str, seed: &str) {
    ok(dir, &["synth", "--out", out, "--patients", "6", "--images-per-eye", "2", "--seed", seed]);
}

#[test]
fn synth_split_train_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth_small(d, "ds", "7");
    ok(d, &["split", "--manifest", "ds/manifest.csv", "--test-fraction", "0.2", "--seed", "7"]);
    let m = Manifest::load(d.join("ds/manifest.csv")).unwrap();
    assert!(m.records.iter().all(|r| r.split != ropnet::data::Split::Unassigned));
    ok(
        d,
        &["train", "--manifest", "ds/manifest.csv", "--width", "0.25", "--epochs", "2", "--batch", "8"],
    );
    let history = fs::read_to_string(d.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    assert!(history.starts_with("epoch,train_loss,train_acc,val_loss,val_acc\n"));
    assert!(d.join("model.ropm").exists());

    let eval = ok(d, &["eval", "--model", "model.ropm", "--manifest", "ds/manifest.csv"]);
    let report: serde_json::Value = serde_json::from_str(&stdout(&eval)).unwrap();
    let n = m.in_split(ropnet::data::Split::Test).count() as u64;
    let counted = ["tp", "fp", "tn", "fn"].iter().map(|k| report[k].as_u64().unwrap()).sum::<u64>();
    assert_eq!(counted, n);

    let vote = ok(
        d,
        &["vote-eval", "--model", "model.ropm", "--manifest", "ds/manifest.csv", "--groups-out", "groups.csv"],
    );
    let v: serde_json::Value = serde_json::from_str(&stdout(&vote)).unwrap();
    let groups = fs::read_to_string(d.join("groups.csv")).unwrap();
    assert_eq!(groups.lines().count() as u64, 1 + v["groups"].as_u64().unwrap());

    let pred = ok(d, &["predict", "--model", "model.ropm", "--image", "ds/images/P0000_L_0.ppm"]);
    let line = stdout(&pred).lines().nth(1).unwrap().to_string();
    let p: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&p));
}

#[test]
fn train_without_train_rows_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth_small(d, "ds", "1");
    let o = ropnet(d, &["train", "--manifest", "ds/manifest.csv", "--epochs", "1"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no training rows"), "{}", stderr(&o));
    assert!(!d.join("model.ropm").exists());
}

#[test]
fn usage_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = ropnet(d, &["synth", "--out", "x", "--no-such-flag"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    assert_eq!(code(&ropnet(d, &["frobnicate"])), 1);
    assert_eq!(code(&ropnet(d, &["bench", "--model", "m", "--mode", "turbo"])), 1);
    assert_eq!(code(&ropnet(d, &["augment", "--manifest", "m", "--ops", "spin", "--out", "o"])), 1);
    assert_eq!(code(&ropnet(d, &["synth", "--out", "x", "--positive-rate", "1.5"])), 1);
    assert_eq!(code(&ropnet(d, &["--threads", "many", "inspect", "--model", "m"])), 1);
    assert_eq!(code(&ropnet(d, &["--help"])), 0);
}

#[test]
fn help_documents_thread_env_and_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let help = stdout(&ok(tmp.path(), &["--help"]));
    assert!(help.contains("ROPNET_THREADS"));
    assert!(help.contains("Exit codes"));
}

#[test]
fn format_and_numeric_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("junk.ropm"), b"not a model").unwrap();
    assert_eq!(code(&ropnet(d, &["inspect", "--model", "junk.ropm"])), 2);

    synth_small(d, "ds", "2");
    ok(d, &["split", "--manifest", "ds/manifest.csv", "--seed", "2"]);
    let (spec, mut p) = build_custom_rop_net(64, 0.25, 0).unwrap();
    p.get_mut("layer19.weight").unwrap().data_mut()[0] = f32::NAN;
    save_model(&spec, &p, d.join("nan.ropm")).unwrap();
    let o = ropnet(
        d,
        &["train", "--manifest", "ds/manifest.csv", "--model", "nan.ropm", "--epochs", "1", "--batch", "4"],
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("epoch 1, batch 1"));
}

#[test]
fn inspect_reports_count_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for width in ["1.0", "0.5", "0.25"] {
        ok(d, &["init", "--width", width, "--out", "m.ropm"]);
        let (spec, p) = load_model(d.join("m.ropm")).unwrap();
        let count = count_parameters(&spec, &p).unwrap();
        let text = stdout(&ok(d, &["inspect", "--model", "m.ropm"]));
        assert!(text.contains(&format!("trainable parameters: {}\n", count.trainable)), "{text}");
        assert!(text.contains(&format!("total parameters: {}\n", count.total)));
    }
}

#[test]
fn dry_run_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["--dry-run", "synth", "--out", "ds"]);
    assert!(!d.join("ds").exists());
    ok(d, &["--dry-run", "init", "--out", "m.ropm"]);
    assert!(!d.join("m.ropm").exists());

    synth_small(d, "ds", "3");
    let before = fs::read(d.join("ds/manifest.csv")).unwrap();
    ok(d, &["--dry-run", "split", "--manifest", "ds/manifest.csv"]);
    ok(d, &["--dry-run", "clean", "--manifest", "ds/manifest.csv", "--out", "clean.csv"]);
    ok(d, &["--dry-run", "augment", "--manifest", "ds/manifest.csv", "--ops", "rot180", "--out", "aug"]);
    assert_eq!(fs::read(d.join("ds/manifest.csv")).unwrap(), before);
    assert!(!d.join("clean.csv").exists() && !d.join("aug").exists());

    ok(d, &["split", "--manifest", "ds/manifest.csv"]);
    ok(d, &["--dry-run", "train", "--manifest", "ds/manifest.csv", "--epochs", "1"]);
    assert!(!d.join("model.ropm").exists() && !d.join("history.csv").exists());
}

#[test]
fn seeded_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for run in ["a", "b"] {
        ok(d, &["--deterministic", "synth", "--out", run, "--patients", "4", "--images-per-eye", "2", "--seed", "5"]);
        ok(d, &["--deterministic", "--seed", "5", "split", "--manifest", &format!("{run}/manifest.csv")]);
        ok(
            d,
            &[
                "--deterministic",
                "--seed",
                "5",
                "train",
                "--manifest",
                &format!("{run}/manifest.csv"),
                "--width",
                "0.25",
                "--epochs",
                "2",
                "--batch",
                "4",
                "--model-out",
                &format!("{run}/model.ropm"),
                "--history-out",
                &format!("{run}/history.csv"),
            ],
        );
    }
    for file in ["manifest.csv", "model.ropm", "history.csv", "images/P0001_R_1.ppm"] {
        assert_eq!(
            fs::read(d.join("a").join(file)).unwrap(),
            fs::read(d.join("b").join(file)).unwrap(),
            "{file} differs"
        );
    }
}

#[test]
fn clean_then_augment() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth_small(d, "ds", "4");
    fs::write(d.join("ds/images/P0000_L_0.ppm"), b"P6\n2 2\n255\n").unwrap();
    ok(d, &["clean", "--manifest", "ds/manifest.csv", "--out", "clean/manifest.csv", "--rejects", "rejects.csv"]);
    let clean = Manifest::load(d.join("clean/manifest.csv")).unwrap();
    assert_eq!(clean.len(), 23);
    assert!(clean.records.iter().all(|r| clean.resolve(r).exists()));
    let rejects = fs::read_to_string(d.join("rejects.csv")).unwrap();
    assert!(rejects.lines().nth(1).unwrap().contains(",corrupt,"));

    ok(d, &["augment", "--manifest", "clean/manifest.csv", "--ops", "rot180,flip_h", "--out", "aug"]);
    let aug = Manifest::load(d.join("aug/manifest.csv")).unwrap();
    assert_eq!(aug.len(), 23 * 3);
    aug.validate().unwrap();
}

#[test]
fn bench_writes_csv_for_models_and_modes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["init", "--width", "0.25", "--out", "c.ropm"]);
    ok(d, &["init", "--arch", "mobilenet", "--out", "m.ropm"]);
    ok(
        d,
        &["bench", "--model", "c.ropm", "--model", "m.ropm", "--n-images", "2", "--runtimes", "2", "--out", "b.csv"],
    );
    let rows = ropnet::runtime::read_bench_csv(d.join("b.csv")).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().any(|r| r.normalized_fps == 1.0));
    assert_eq!(fs::read_to_string(d.join("b.csv")).unwrap().lines().count(), 7);
}

#[test]
fn thread_env_var_is_honoured() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["init", "--width", "0.25", "--out", "m.ropm"]);
    let o = Command::new(env!("CARGO_BIN_EXE_ropnet"))
        .current_dir(d)
        .args(["inspect", "--model", "m.ropm"])
        .env("ROPNET_THREADS", "x")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    let o = Command::new(env!("CARGO_BIN_EXE_ropnet"))
        .current_dir(d)
        .args(["inspect", "--model", "m.ropm"])
        .env("ROPNET_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
}
