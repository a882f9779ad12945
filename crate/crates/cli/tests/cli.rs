use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tps_undistort::formats::load_grid;
use tps_undistort::synth::procedural_scene;
use tps_undistort::{ImageBuffer, LabelMap};
use tps_undistort_cli::io::{write_image, write_labels};
use tps_undistort_cli::manifest::Manifest;

fn tpsu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tpsu")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn scenes(dir: &Path, count: usize, size: usize) {
    fs::create_dir_all(dir.join("labels")).unwrap();
    for i in 0..count {
        let (img, labels) = procedural_scene(size, size, 40 + i as u64).unwrap();
        write_image(&dir.join(format!("s{i}.png")), &img).unwrap();
        write_labels(&dir.join("labels").join(format!("s{i}.png")), &labels).unwrap();
    }
}

#[test]
fn dataset_distort_undistort_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    let data = tmp.path().join("data");
    scenes(&input, 2, 64);
    let out = tpsu(&["gen-dataset", s(&input), s(&data), "--sigma", "1.5", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let manifest = Manifest::load(&data).unwrap();
    assert_eq!(manifest.images, 2);
    assert_eq!(manifest.entries[1].seed, 4);
    assert!(manifest.entries.iter().all(|e| e.labels.is_some()));
    assert!(manifest.mean_displacement_px > 0.0);

    // Re-applying the stored control points reproduces the dataset files.
    let again = tmp.path().join("again.png");
    let out = tpsu(&[
        "distort",
        s(&input.join("s0.png")),
        "--cps",
        s(&data.join("cps/s0.txt")),
        "--out",
        s(&again),
        "--labels",
        s(&input.join("labels/s0.png")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(&again).unwrap(), fs::read(data.join("images/s0.png")).unwrap());
    assert_eq!(
        fs::read(tmp.path().join("again.labels.png")).unwrap(),
        fs::read(data.join("labels/s0.png")).unwrap()
    );
    assert_eq!(
        load_grid(tmp.path().join("again.tpsg")).unwrap(),
        load_grid(data.join("grids/s0.tpsg")).unwrap()
    );

    let est = tmp.path().join("est");
    fs::create_dir_all(&est).unwrap();
    for stem in ["s0", "s1"] {
        let out = tpsu(&[
            "undistort",
            s(&data.join(format!("images/{stem}.png"))),
            "--loss",
            "grid",
            "--truth-grid",
            s(&data.join(format!("grids/{stem}.tpsg"))),
            "--iters",
            "300",
            "--out",
            s(&est.join(format!("{stem}.png"))),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let report: serde_json::Value =
            serde_json::from_slice(&fs::read(est.join(format!("{stem}.json"))).unwrap()).unwrap();
        assert!(report["residual"]["mean_px"].as_f64().unwrap() < 0.1);
        assert_eq!(report["sources"].as_array().unwrap().len(), 16);
        assert!(est.join(format!("{stem}.txt")).is_file());
    }

    let report_path = tmp.path().join("eval.json");
    let out = tpsu(&["eval", s(&est), s(&data.join("grids")), "--report", s(&report_path)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["images"], 2);
    assert!(report["mean_px"].as_f64().unwrap() < 0.1);
    assert_eq!(report["per_image"][1]["stem"], "s1");
    assert!(report_path.is_file());
}

#[test]
fn missing_loss_inputs_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let img = tmp.path().join("a.png");
    write_image(&img, &ImageBuffer::constant(16, 16, 3, 0.5).unwrap()).unwrap();
    let out_png = tmp.path().join("o.png");
    for loss in ["grid", "recon", "sem", "recon,sem"] {
        let out = tpsu(&["undistort", s(&img), "--loss", loss, "--out", s(&out_png)]);
        assert_eq!(out.status.code(), Some(2), "{loss}");
    }
    let out = tpsu(&["gen-dataset", s(tmp.path()), s(&tmp.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = tpsu(&["gen-dataset", s(tmp.path()), s(&tmp.path().join("d")), "--sigma", "1", "--target-mean-px", "2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn distort_rejects_mismatched_control_points() {
    let tmp = tempfile::tempdir().unwrap();
    let img = tmp.path().join("a.png");
    write_image(&img, &ImageBuffer::constant(20, 16, 3, 0.5).unwrap()).unwrap();
    let cps = tmp.path().join("c.txt");
    let mut text = String::from("16 32 32\n");
    for j in 0..4 {
        for i in 0..4 {
            text.push_str(&format!("{} {}\n", i as f64 * 31.0 / 3.0, j as f64 * 31.0 / 3.0));
        }
    }
    fs::write(&cps, text).unwrap();
    let out = tpsu(&["distort", s(&img), "--cps", s(&cps), "--out", s(&tmp.path().join("o.png"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_reports_unmatched_stems() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    fs::create_dir_all(&a).unwrap();
    fs::create_dir_all(&b).unwrap();
    let grid = tps_undistort::SamplingGrid::identity(4, 4);
    tps_undistort::formats::save_grid(a.join("x.tpsg"), &grid).unwrap();
    tps_undistort::formats::save_grid(b.join("y.tpsg"), &grid).unwrap();
    let out = tpsu(&["eval", s(&a), s(&b)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("\"x\"") && err.contains("\"y\""), "{err}");
}

#[test]
fn dataset_skips_mismatched_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    scenes(&input, 2, 32);
    write_labels(&input.join("labels/s1.png"), &LabelMap::new(8, 8, vec![0; 64]).unwrap()).unwrap();
    let data = tmp.path().join("data");
    let out = tpsu(&["gen-dataset", s(&input), s(&data), "--target-mean-px", "1.0", "--calibration-trials", "10"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("s1"));
    let manifest = Manifest::load(&data).unwrap();
    assert_eq!(manifest.images, 1);
    assert_eq!(manifest.spec.target_mean_px, Some(1.0));

    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let out = tpsu(&["gen-dataset", s(&empty), s(&tmp.path().join("none")), "--sigma", "1"]);
    assert_eq!(out.status.code(), Some(1));
}
