use std::path::{Path, PathBuf};
use std::process::Command;

use featviz::fixtures::{cross_detector, planted_cross};
use featviz::network::{Conv, Layer, Network};
use featviz::viz::write_tensor_image;
use featviz::{save_network, Shape, Tensor};
use featviz_cli::manifest::Manifest;
use featviz_cli::run_with;
use tempfile::TempDir;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn featviz(args: &[&str]) -> Run {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("featviz").chain(args.iter().copied());
    let code = run_with(argv, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Workspace with the cross-detector model and planted-cross image.
fn cross_workspace() -> (TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("cross.fvnet");
    let image = dir.path().join("cross.pgm");
    std::fs::write(&model, save_network(&cross_detector()).unwrap()).unwrap();
    std::fs::write(&image, write_tensor_image(&planted_cross()).unwrap()).unwrap();
    (dir, model, image)
}

#[test]
fn forward_ranks_the_cross_first() {
    let (_dir, model, image) = cross_workspace();
    let r = featviz(&["forward", "--model", s(&model), "--image", s(&image)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let first = r.stdout.lines().nth(1).unwrap();
    let fields: Vec<&str> = first.split_whitespace().collect();
    assert_eq!(fields[0], "1");
    assert_eq!(fields[1], "0");
    assert_eq!(fields[4], "cross");
}

#[test]
fn attribute_writes_manifest_and_is_repeatable() {
    let (dir, model, image) = cross_workspace();
    let out = dir.path().join("a.ppm");
    let args = [
        "attribute",
        "--model",
        s(&model),
        "--image",
        s(&image),
        "--class",
        "0",
        "--out",
        s(&out),
    ];
    assert_eq!(featviz(&args).code, 0);
    let first = std::fs::read(&out).unwrap();
    let manifest: Manifest =
        serde_json::from_slice(&std::fs::read(dir.path().join("a.ppm.json")).unwrap()).unwrap();
    assert_eq!(manifest.subcommand, "attribute");
    assert_eq!(manifest.args["epsilon"], serde_json::json!(0.001f32));
    assert_eq!(manifest.args["relu_rule"], "backprop");
    assert_eq!(manifest.outputs, vec![out.clone()]);
    assert_eq!(featviz(&args).code, 0);
    assert_eq!(std::fs::read(&out).unwrap(), first);
}

fn five_by_five() -> (TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let kernel = Tensor::new(Shape::new(1, 1, 1, 1), vec![2.0]).unwrap();
    let net = Network::new(
        (1, 5, 5),
        vec![
            Layer::Conv(Conv::new(kernel, vec![0.0], (1, 1), (0, 0)).unwrap()),
            Layer::Flatten,
        ],
        None,
    )
    .unwrap();
    let model = dir.path().join("px.fvnet");
    let image = dir.path().join("px.pgm");
    std::fs::write(&model, save_network(&net).unwrap()).unwrap();
    let x = Tensor::from_fn(Shape::new(1, 1, 5, 5), |_, _, y, x| {
        ((y * 5 + x) * 10) as f32 / 255.0
    });
    std::fs::write(&image, write_tensor_image(&x).unwrap()).unwrap();
    (dir, model, image)
}

#[test]
fn occlude_reports_the_grid() {
    let (dir, model, image) = five_by_five();
    let out = dir.path().join("o.ppm");
    let r = featviz(&[
        "occlude",
        "--model",
        s(&model),
        "--image",
        s(&image),
        "--class",
        "12",
        "--box",
        "3x3",
        "--stride",
        "1x1",
        "--out",
        s(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let manifest = Manifest::read(&dir.path().join("o.ppm.json")).unwrap();
    assert_eq!(manifest.result["grid"], serde_json::json!([3, 3]));
    let bytes = std::fs::read(&out).unwrap();
    assert!(bytes.starts_with(b"P6\n3 3\n255\n"));
}

#[test]
fn exit_codes() {
    let (dir, model, image) = cross_workspace();
    assert_eq!(featviz(&["frobnicate"]).code, 1);
    assert_eq!(featviz(&["forward", "--model", s(&model)]).code, 1);
    let r = featviz(&[
        "forward",
        "--model",
        s(&model),
        "--image",
        s(&image),
        "--bogus",
    ]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("--bogus"));
    assert_eq!(featviz(&["--help"]).code, 0);

    let out = dir.path().join("x.ppm");
    let bad_class = [
        "occlude",
        "--model",
        s(&model),
        "--image",
        s(&image),
        "--class",
        "7",
        "--box",
        "3x3",
        "--out",
        s(&out),
    ];
    assert_eq!(featviz(&bad_class).code, 1);
    let bad_box = [
        "occlude",
        "--model",
        s(&model),
        "--image",
        s(&image),
        "--class",
        "0",
        "--box",
        "13x3",
        "--out",
        s(&out),
    ];
    assert_eq!(featviz(&bad_box).code, 1);

    let not_a_model = featviz(&["inspect", "--model", s(&image)]);
    assert_eq!(not_a_model.code, 2);
    assert!(not_a_model.stderr.contains("bad magic"));
    let missing = featviz(&["inspect", "--model", s(&dir.path().join("nope.fvnet"))]);
    assert_eq!(missing.code, 2);
    let truncated = dir.path().join("short.pgm");
    std::fs::write(&truncated, b"P5\n12 12\n255\n\x00").unwrap();
    assert_eq!(
        featviz(&["forward", "--model", s(&model), "--image", s(&truncated)]).code,
        2
    );

    let diverge = featviz(&[
        "reconstruct",
        "--model",
        s(&model),
        "--maximize-class",
        "0",
        "--steps",
        "50",
        "--lr",
        "1e6",
        "--lambda-p",
        "1",
        "--p",
        "6",
        "--init",
        "rand:1",
        "--out-dir",
        s(&dir.path().join("rec")),
    ]);
    assert_eq!(diverge.code, 3, "{}", diverge.stderr);
    assert!(diverge.stderr.contains("non-finite"));
}

#[test]
fn inspect_lists_layers() {
    let (_dir, model, _) = cross_workspace();
    let r = featviz(&["inspect", "--model", s(&model)]);
    assert_eq!(r.code, 0);
    assert!(r.stdout.contains("conv 1->2 3x3"));
    assert!(r.stdout.contains("total parameters: 26"));
}

#[test]
fn workers_fall_back_to_environment() {
    let (dir, model, image) = cross_workspace();
    let out = dir.path().join("env.ppm");
    let status = Command::new(env!("CARGO_BIN_EXE_featviz"))
        .args([
            "occlude",
            "--model",
            s(&model),
            "--image",
            s(&image),
            "--class",
            "0",
            "--box",
            "3x3",
        ])
        .args(["--out", s(&out)])
        .env("FEATVIZ_WORKERS", "3")
        .status()
        .unwrap();
    assert!(status.success());
    let manifest = Manifest::read(&dir.path().join("env.ppm.json")).unwrap();
    assert_eq!(manifest.args["workers"], 3);
}

#[test]
fn reconstruct_writes_snapshots_and_manifest() {
    let (dir, model, image) = cross_workspace();
    let out_dir = dir.path().join("rec");
    let r = featviz(&[
        "reconstruct",
        "--model",
        s(&model),
        "--invert-layer",
        "1",
        "--reference",
        s(&image),
        "--steps",
        "30",
        "--lr",
        "0.05",
        "--lambda-tv",
        "0.01",
        "--record-every",
        "10",
        "--out-dir",
        s(&out_dir),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    for step in [0, 10, 20, 30] {
        assert!(out_dir.join(format!("step_{step:06}.fvt")).exists());
    }
    let manifest = Manifest::read(&out_dir.join("manifest.json")).unwrap();
    assert_eq!(
        manifest.result["loss_history"].as_array().unwrap().len(),
        31
    );
}
