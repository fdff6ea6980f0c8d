use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsenerf"))
        .args(args)
        .output()
        .expect("run sparsenerf")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "sparsenerf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn synth(dir: &Path, seed: u64) -> PathBuf {
    let scene = dir.join("scene");
    ok(&["synth", "--seed", &seed.to_string(), "--out", p(&scene)]);
    scene
}

#[test]
fn unknown_config_key_is_reported_with_its_path() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "iterations = 10\n[losses]\ntvv = 1.0\n").unwrap();
    let out = run(&["train", "--scene", "unused", "--config", p(&cfg), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("losses.tvv"), "{err}");
}

#[test]
fn invalid_config_value_exits_with_config_code() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[teacher]\niterations = \"many\"\n").unwrap();
    let out = run(&["distill", "--scene", "unused", "--config", p(&cfg), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("teacher.iterations"), "{err}");
}

#[test]
fn evaluate_rejects_missing_predictions() {
    let tmp = TempDir::new().unwrap();
    let scene = synth(tmp.path(), 1);
    let pred = tmp.path().join("pred");
    fs::create_dir_all(&pred).unwrap();
    let targets = scene.join("targets/images");
    let mut names: Vec<_> = fs::read_dir(&targets).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    // Every view but the first.
    for n in &names[1..] {
        fs::copy(n, pred.join(n.file_name().unwrap())).unwrap();
    }
    let out = run(&["evaluate", "--pred", p(&pred), "--gt", p(&scene), "--out", p(&tmp.path().join("m.csv"))]);
    assert_eq!(out.status.code(), Some(3));
    let missing = names[0].file_stem().unwrap().to_str().unwrap();
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(missing), "{err}");
}

#[test]
fn evaluate_of_ground_truth_prints_the_cap() {
    let tmp = TempDir::new().unwrap();
    let scene = synth(tmp.path(), 2);
    let csv = tmp.path().join("eval/metrics.csv");
    let out = ok(&["evaluate", "--pred", p(&scene.join("targets/images")), "--gt", p(&scene), "--out", p(&csv)]);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("99.000"), "{table}");
    assert!(table.contains("1.0000"), "{table}");
    let rows = fs::read_to_string(&csv).unwrap();
    assert!(rows.starts_with("scene,view,source,psnr,psnr_m,ssim_m"));
    assert!(rows.lines().skip(1).all(|l| l.contains(",99.000000,99.000000,1.000000")), "{rows}");
}

#[test]
fn pixel_weighted_fusion_with_unit_weight_returns_first_candidate() {
    let tmp = TempDir::new().unwrap();
    let a = synth(&tmp.path().join("a"), 3).join("targets/images");
    let b = synth(&tmp.path().join("b"), 4).join("targets/images");
    let cfg = tmp.path().join("fuse.toml");
    fs::write(&cfg, "mode = \"pixel_weighted\"\nweights = [1.0, 0.0]\n").unwrap();
    let out = tmp.path().join("fused");
    ok(&["fuse", "--candidates", p(&a), p(&b), "--config", p(&cfg), "--out", p(&out)]);
    for e in fs::read_dir(&a).unwrap() {
        let src = e.unwrap().path();
        let fused = out.join(src.file_name().unwrap());
        let (x, y) = (
            sparse_nerf::image::read_image(&src).unwrap(),
            sparse_nerf::image::read_image(&fused).unwrap(),
        );
        assert_eq!(x, y, "{}", src.display());
    }
}

#[test]
fn metric_select_needs_references() {
    let tmp = TempDir::new().unwrap();
    let a = synth(&tmp.path().join("a"), 5).join("targets/images");
    let out = run(&[
        "fuse",
        "--candidates",
        p(&a),
        p(&a),
        "--config",
        p(&configs().join("fuse.toml")),
        "--out",
        p(&tmp.path().join("fused")),
    ]);
    assert!(!out.status.success());
}

#[test]
fn track_limits_the_input_views() {
    let tmp = TempDir::new().unwrap();
    let scene = synth(tmp.path(), 6);
    let cfg = tmp.path().join("tiny.toml");
    fs::write(
        &cfg,
        "iterations = 3\nbatch_size = 8\n[field]\nwidth = 8\nbottleneck = 8\n[sampling]\nn_coarse = 4\nn_fine = 4\n",
    )
    .unwrap();
    let out = run(&[
        "train",
        "--scene",
        p(&scene),
        "--config",
        p(&cfg),
        "--track",
        "3",
        "--out",
        p(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2), "track 3 is rejected by the parser");
}

#[test]
fn jobs_train_several_scenes_into_named_directories() {
    let tmp = TempDir::new().unwrap();
    let s1 = synth(&tmp.path().join("one"), 7);
    let s2 = tmp.path().join("two");
    fs::rename(&s1, &s2).unwrap();
    let s1 = synth(&tmp.path().join("one"), 8);
    let cfg = tmp.path().join("tiny.toml");
    fs::write(
        &cfg,
        "iterations = 3\nbatch_size = 8\n[field]\nwidth = 8\nbottleneck = 8\n[sampling]\nn_coarse = 4\nn_fine = 4\n",
    )
    .unwrap();
    let out = tmp.path().join("runs");
    ok(&["train", "--scene", p(&s1), p(&s2), "--config", p(&cfg), "--jobs", "2", "--out", p(&out)]);
    for name in ["scene", "two"] {
        for f in ["model/model.json", "losses.csv", "metrics.csv", "manifest.json", "config.toml"] {
            assert!(out.join(name).join(f).exists(), "{name}/{f}");
        }
    }
}

#[test]
fn desk_scale_synth_train_evaluate_finishes_in_five_minutes() {
    let tmp = TempDir::new().unwrap();
    let start = Instant::now();
    let scene = synth(tmp.path(), 0);
    let run_dir = tmp.path().join("run");
    ok(&[
        "train",
        "--scene",
        p(&scene),
        "--config",
        p(&configs().join("freq_occ.toml")),
        "--out",
        p(&run_dir),
    ]);
    let out = ok(&[
        "evaluate",
        "--pred",
        p(&run_dir.join("renders")),
        "--gt",
        p(&scene),
        "--out",
        p(&tmp.path().join("eval.csv")),
    ]);
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("PSNR-M"));
    let manifest = fs::read_to_string(run_dir.join("manifest.json")).unwrap();
    for key in ["\"command\"", "\"seed\"", "\"started\"", "\"finished\"", "\"build\""] {
        assert!(manifest.contains(key), "{manifest}");
    }
}
