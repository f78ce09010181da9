//! End-to-end tests of the `progan` binary.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_progan"))
}

fn work_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("progan-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_fixture_images(dir: &Path, count: usize) {
    for i in 0..count {
        let img = image::RgbImage::from_fn(64, 64, |x, y| {
            let v = ((x + y + 13 * i as u32) % 256) as u8;
            image::Rgb([v, v.wrapping_mul(2), 255 - v])
        });
        img.save(dir.join(format!("img{i}.png"))).unwrap();
    }
}

#[test]
fn train_fixture_produces_expected_outputs() {
    let data = work_dir("train-data");
    write_fixture_images(&data, 4);
    let out = work_dir("train-out");

    let run = |out: &Path| {
        bin()
            .args([
                "train",
                "--data",
                data.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--epochs",
                "1",
                "--max-res",
                "4",
                "--batch",
                "2",
                "--latent-dim",
                "16",
                "--seed",
                "7",
                "--deterministic",
            ])
            .output()
            .unwrap()
    };
    let result = run(&out);
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );

    // resolved config echoed before the run
    let manifest = std::fs::read_to_string(out.join("config-resolved.txt")).unwrap();
    assert!(manifest.contains("epochs = 1"));
    assert!(manifest.contains("batch = 2"));
    assert!(manifest.contains("max_res = 4"));
    assert!(manifest.contains("seed = 7"));

    // exactly one checkpoint, one metrics record per step (4 images, batch 2)
    let checkpoints: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "pgck"))
        .collect();
    assert_eq!(checkpoints.len(), 1, "expected exactly one checkpoint");
    let metrics = std::fs::read_to_string(out.join("metrics.log")).unwrap();
    assert_eq!(metrics.lines().count(), 2, "expected 2 logged steps");

    // per-epoch sample grid exists
    assert!(out.join("samples/epoch-0.png").exists());

    // identical invocation, identical metrics bytes
    let out2 = work_dir("train-out2");
    let result2 = run(&out2);
    assert!(result2.status.success());
    assert_eq!(
        std::fs::read(out.join("metrics.log")).unwrap(),
        std::fs::read(out2.join("metrics.log")).unwrap(),
        "deterministic reruns must log identical metrics"
    );

    let _ = std::fs::remove_dir_all(&data);
    let _ = std::fs::remove_dir_all(&out);
    let _ = std::fs::remove_dir_all(&out2);
}

#[test]
fn train_without_data_is_a_usage_error() {
    let result = bin().args(["train", "--epochs", "1"]).output().unwrap();
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("--data"), "stderr: {stderr}");
    assert!(stderr.contains("USAGE"), "usage text expected");
}

#[test]
fn sample_writes_grid_with_checkpoint_resolution() {
    let data = work_dir("sample-data");
    write_fixture_images(&data, 4);
    let out = work_dir("sample-out");
    let status = bin()
        .args([
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--epochs",
            "2",
            "--max-res",
            "8",
            "--batch",
            "2",
            "--latent-dim",
            "16",
            "--seed",
            "3",
            "--deterministic",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let ckpt = out.join("ckpt-epoch-1.pgck");
    assert!(ckpt.exists());

    let png1 = out.join("g1.png");
    let png2 = out.join("g2.png");
    for png in [&png1, &png2] {
        let status = bin()
            .args([
                "sample",
                "--ckpt",
                ckpt.to_str().unwrap(),
                "--count",
                "16",
                "--grid",
                "4x4",
                "--seed",
                "1",
                "--out",
                png.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
    }
    // 4 tiles of 8 plus 3 gutters of 2 = 38 pixels
    let img = image::open(&png1).unwrap();
    assert_eq!((img.width(), img.height()), (38, 38));
    assert_eq!(
        std::fs::read(&png1).unwrap(),
        std::fs::read(&png2).unwrap(),
        "same sample flags must give byte-identical output"
    );

    // count above grid capacity is a usage error
    let result = bin()
        .args([
            "sample",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--count",
            "17",
            "--grid",
            "4x4",
        ])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(2));

    // corrupt checkpoint is rejected
    let bad = out.join("bad.pgck");
    std::fs::write(&bad, b"JUNKJUNKJUNK").unwrap();
    let result = bin()
        .args(["sample", "--ckpt", bad.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&result.stderr).contains("magic"));

    let _ = std::fs::remove_dir_all(&data);
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn config_file_precedence_and_unknown_keys() {
    let dir = work_dir("config");
    write_fixture_images(&dir, 4);
    let cfg = dir.join("run.cfg");
    std::fs::write(&cfg, "epochs = 3\nbatch = 2\nseed = 9\n").unwrap();
    let out = dir.join("out");

    // flag --epochs overrides the file's 3; file's batch and seed hold
    let status = bin()
        .args([
            "train",
            "--data",
            dir.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--epochs",
            "1",
            "--max-res",
            "4",
            "--latent-dim",
            "16",
            "--deterministic",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let manifest = std::fs::read_to_string(out.join("config-resolved.txt")).unwrap();
    assert!(manifest.contains("epochs = 1"), "flag beats file");
    assert!(manifest.contains("batch = 2"), "file beats default");
    assert!(manifest.contains("seed = 9"));

    // unknown config keys are errors
    std::fs::write(&cfg, "epochs = 1\nmystery = 4\n").unwrap();
    let result = bin()
        .args([
            "train",
            "--data",
            dir.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&result.stderr).contains("mystery"));

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn verify_passes_and_fault_injection_fails() {
    let ok = bin().args(["verify", "--json"]).output().unwrap();
    assert!(
        ok.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&ok.stdout),
        String::from_utf8_lossy(&ok.stderr)
    );
    let report: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    let checks = report.as_array().unwrap();
    assert!(checks.len() >= 12, "one record per check");
    for c in checks {
        assert!(c["passed"].as_bool().unwrap(), "{c}");
        assert!(c["name"].is_string() && c["detail"].is_string());
    }

    let broken = bin()
        .args(["verify", "--json", "--inject-fault", "pixelnorm-eps-zero"])
        .output()
        .unwrap();
    assert_eq!(broken.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&broken.stdout).unwrap();
    let failed: Vec<&str> = report
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| !c["passed"].as_bool().unwrap())
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(failed, ["oracle_pixelnorm"], "exactly the injected check fails");
}
