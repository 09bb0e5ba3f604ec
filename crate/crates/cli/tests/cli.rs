use std::path::Path;
use std::process::{Command, Output};

fn ussim(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_ussim")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "ussim {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn end_to_end_small_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("phantom.toml");
    let data = dir.path().join("data");
    let ckpt = dir.path().join("model.ckpt");
    let report = dir.path().join("report.txt");
    let holes = dir.path().join("holes");

    ussim(&["phantom-spec", "--seed", "3", "--out", path(&spec)]);
    ussim(&[
        "generate", "--phantom", path(&spec), "--n", "40", "--img-size", "8", "--seed", "2", "--out", path(&data),
    ]);
    assert!(data.join("manifest.toml").exists());

    ussim(&[
        "train", "--arch", "decoder", "--data", path(&data), "--out", path(&ckpt), "--seed", "1", "--epochs", "1",
        "--img-size", "8",
    ]);
    let csv = std::fs::read_to_string(ckpt.with_extension("csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);

    ussim(&["eval", "--ckpt", path(&ckpt), "--data", path(&data), "--out", path(&report)]);
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.contains("model.validation.ssim"));
    assert!(text.contains("mean_image.train.mse"));

    let out = ussim(&[
        "bench", "--ckpt", path(&ckpt), "--size", "8", "--n-infer", "5", "--repeats", "20", "--warmup", "1",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("repeats: 20"));
    assert!(text.contains("inferences_per_repeat: 5"));

    ussim(&[
        "holestudy", "--data", path(&data), "--center", "0,0,120", "--radius", "25", "--epochs", "1", "--out",
        path(&holes),
    ]);
    for name in ["full", "holed", "relative"] {
        assert!(holes.join(format!("{name}.txt")).exists());
        assert!(std::fs::read(holes.join(format!("{name}.pgm"))).unwrap().starts_with(b"P5"));
    }
    assert!(std::fs::read_to_string(holes.join("summary.txt")).unwrap().contains("removed_fraction"));
}

#[test]
fn bad_inputs_fail_with_diagnostics() {
    let out = Command::new(env!("CARGO_BIN_EXE_ussim"))
        .args(["serve", "--ckpt", "/nonexistent/model.ckpt", "--bind", "127.0.0.1:0"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot load model"));

    let out = Command::new(env!("CARGO_BIN_EXE_ussim"))
        .args(["holestudy", "--data", "x", "--center", "1,2", "--radius", "3", "--out", "y"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
