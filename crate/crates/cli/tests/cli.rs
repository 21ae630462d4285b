//! End-to-end runs of the compiled binary: every subcommand, the documented
//! exit codes, and the determinism contract (same seed, same bytes).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crossview"))
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn tmp(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn path_args<'a>(flag: &'a str, path: &Path, rest: &mut Vec<String>) {
    rest.push(flag.into());
    rest.push(path.display().to_string());
}

/// gen-scene with a small 8-camera ring; fast enough to rebuild per test.
fn gen_small(dir: &Path, extra: &[&str]) {
    let mut args: Vec<String> = vec!["gen-scene".into()];
    path_args("--out", dir, &mut args);
    args.extend(["--cameras", "8", "--heatmap", "32"].map(String::from));
    args.extend(extra.iter().map(|s| s.to_string()));
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    run_ok(&argv);
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Numeric column `col` of a CSV file, skipping the header.
fn csv_column(path: &Path, col: usize) -> Vec<f64> {
    let text = fs::read_to_string(path).expect("csv should exist");
    text.lines()
        .skip(1)
        .map(|line| {
            line.split(',')
                .nth(col)
                .and_then(|f| f.parse().ok())
                .unwrap_or_else(|| panic!("bad csv line: {line}"))
        })
        .collect()
}

/// Every file under `dir` keyed by relative path, for whole-tree comparison.
fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut map = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).expect("under root");
                map.insert(
                    rel.display().to_string(),
                    fs::read(&path).expect("readable file"),
                );
            }
        }
    }
    map
}

#[test]
fn gen_scene_defaults_write_complete_dataset_and_rerun_is_byte_identical() {
    let a = tmp("gen_a");
    let b = tmp("gen_b");
    let mut args = vec!["gen-scene".to_string()];
    path_args("--out", &a, &mut args);
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    run_ok(&argv);

    let files = dir_contents(&a);
    for i in 0..16 {
        assert!(files.contains_key(&format!("cam_{i:02}.toml")), "camera {i}");
        assert!(files.contains_key(&format!("gt_{i:02}.pbm")), "mask {i}");
        assert!(files.contains_key(&format!("feat_{i:02}.feat")), "features {i}");
    }
    for name in ["manifest.toml", "scene.toml", "rig.toml"] {
        assert!(files.contains_key(name), "{name} missing");
    }
    assert_eq!(files.len(), 16 * 3 + 3, "no stray files");

    let mut args = vec!["gen-scene".to_string()];
    path_args("--out", &b, &mut args);
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    run_ok(&argv);
    assert_eq!(files, dir_contents(&b), "same seed must give the same bytes");
}

#[test]
fn gen_scene_honors_explicit_label_list() {
    let dir = tmp("gen_labels");
    gen_small(&dir, &["--labels", "1,3"]);
    let manifest = fs::read_to_string(dir.join("manifest.toml")).unwrap();
    assert_eq!(manifest.matches("labeled = true").count(), 2);
    assert_eq!(manifest.matches("labeled = false").count(), 6);
}

#[test]
fn gen_scene_rejects_unsatisfiable_split() {
    let dir = tmp("gen_bad_eta");
    let out = run(&[
        "gen-scene",
        "--out",
        dir.to_str().unwrap(),
        "--cameras",
        "16",
        "--eta",
        "0.01",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("labeled"), "{}", stderr_of(&out));
}

#[test]
fn transfer_verifies_against_ray_sweep() {
    let data = tmp("tr_data");
    gen_small(&data, &[]);
    let out_dir = tmp("tr_out");
    run_ok(&[
        "transfer",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--target",
        "0",
        "--sources",
        "1,2,6,7",
        "--verify",
        "--samples",
        "48",
        "--verify-depths",
        "2048",
    ]);
    let linf = csv_column(&out_dir.join("verify.csv"), 1)[0];
    assert!(linf <= 0.05, "row scan drifted from the ray sweep: {linf}");
    let pgm = fs::read(out_dir.join("transfer_v00.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n32 32\n255\n"), "heatmap header");
    assert!(out_dir.join("run.toml").exists());
}

#[test]
fn transfer_names_the_degenerate_pair() {
    let data = tmp("tr_degen");
    gen_small(&data, &[]);
    let out_dir = tmp("tr_degen_out");
    // Views 0 and 4 sit on opposite sides of an 8-camera ring, so each sees
    // the other's image plane edge-on.
    let out = run(&[
        "transfer",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--target",
        "0",
        "--sources",
        "2,4",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr_of(&out));
    let err = stderr_of(&out);
    assert!(
        err.contains("target view 0") && err.contains("source view 4"),
        "error should name the bad pair, got: {err}"
    );
    assert!(!err.contains("source view 2"), "view 2 is fine: {err}");
}

#[test]
fn transfer_fails_loudly_on_missing_camera_file() {
    let data = tmp("tr_missing");
    gen_small(&data, &[]);
    fs::remove_file(data.join("cam_02.toml")).unwrap();
    let out = run(&[
        "transfer",
        "--data",
        data.to_str().unwrap(),
        "--out",
        tmp("tr_missing_out").to_str().unwrap(),
        "--target",
        "0",
        "--sources",
        "1,2",
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("cam_02.toml"), "{}", stderr_of(&out));
}

#[test]
fn bounds_sweep_shrinks_monotonically_over_four_counts() {
    let data = tmp("bounds_data");
    let mut args = vec!["gen-scene".to_string()];
    path_args("--out", &data, &mut args);
    args.extend(["--cameras", "17", "--rig", "dome", "--heatmap", "32"].map(String::from));
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    run_ok(&argv);

    let out_dir = tmp("bounds_out");
    run_ok(&[
        "bounds",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--counts",
        "2,4,8,16",
        "--grid",
        "48",
    ]);
    let gaps = csv_column(&out_dir.join("gaps.csv"), 1);
    assert_eq!(gaps.len(), 4, "one row per labeled count");
    for pair in gaps.windows(2) {
        assert!(
            pair[1] < pair[0],
            "more labeled views must tighten the bounds: {gaps:?}"
        );
    }
    for count in [2usize, 4, 8, 16] {
        assert!(out_dir.join(format!("upper_c{count:02}.pgm")).exists());
        assert!(out_dir.join(format!("lower_c{count:02}.pbm")).exists());
    }
}

#[test]
fn bounds_rejects_fewer_than_two_labeled_views() {
    let data = tmp("bounds_one");
    gen_small(&data, &[]);
    let out = run(&[
        "bounds",
        "--data",
        data.to_str().unwrap(),
        "--out",
        tmp("bounds_one_out").to_str().unwrap(),
        "--counts",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
}

#[test]
fn bounds_on_empty_masks_yield_empty_lower_bound() {
    let data = tmp("bounds_empty");
    gen_small(&data, &[]);
    // Blank out the ground truth of the two views the count-2 sweep uses.
    let empty = {
        let mut bytes = b"P4\n32 32\n".to_vec();
        bytes.extend(std::iter::repeat(0u8).take(32 * 4));
        bytes
    };
    fs::write(data.join("gt_00.pbm"), &empty).unwrap();
    fs::write(data.join("gt_01.pbm"), &empty).unwrap();

    let out_dir = tmp("bounds_empty_out");
    run_ok(&[
        "bounds",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--counts",
        "2",
        "--grid",
        "32",
    ]);
    let lower = fs::read(out_dir.join("lower_c02.pbm")).unwrap();
    let payload = &lower[lower.len() - 32 * 4..];
    assert!(
        payload.iter().all(|&b| b == 0),
        "nothing is visible in any source, so nothing can be certainly inside"
    );
}

#[test]
fn train_resume_matches_uninterrupted_run_bit_for_bit() {
    let data = tmp("train_data");
    gen_small(&data, &[]);
    let full = tmp("train_full");
    let half = tmp("train_half");
    let resumed = tmp("train_resumed");
    let common = [
        "--regime",
        "cross",
        "--warmup",
        "100",
        "--eval-every",
        "100",
        "--depths",
        "64",
        "--lr",
        "1e-2",
    ];

    // The full run also dumps progress snapshots; those pauses must not
    // perturb the trajectory relative to the snapshot-free resumed run.
    let mut args = vec![
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        full.to_str().unwrap(),
        "--steps",
        "300",
        "--snapshot-every",
        "150",
    ];
    args.extend_from_slice(&common);
    run_ok(&args);

    let mut args = vec![
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        half.to_str().unwrap(),
        "--steps",
        "200",
    ];
    args.extend_from_slice(&common);
    run_ok(&args);

    let ckpt_half = half.join("checkpoint.ckpt");
    let mut args = vec![
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        resumed.to_str().unwrap(),
        "--steps",
        "300",
        "--resume",
        ckpt_half.to_str().unwrap(),
    ];
    args.extend_from_slice(&common);
    run_ok(&args);

    assert_eq!(
        fs::read(full.join("checkpoint.ckpt")).unwrap(),
        fs::read(resumed.join("checkpoint.ckpt")).unwrap(),
        "resumed training must land on the identical checkpoint"
    );
    assert_eq!(
        fs::read(full.join("metrics.csv")).unwrap(),
        fs::read(resumed.join("metrics.csv")).unwrap()
    );
    for step in [150, 300] {
        for view in [0, 1, 2, 5, 6, 7] {
            let name = format!("pred_s{step:05}_v{view:02}.pgm");
            assert!(full.join(&name).exists(), "{name} missing");
        }
    }
}

#[test]
fn eval_compares_checkpoints_and_warns_on_labeled_views() {
    let data = tmp("eval_data");
    gen_small(&data, &[]);
    let t = tmp("eval_train");
    run_ok(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        t.to_str().unwrap(),
        "--regime",
        "no-aug",
        "--steps",
        "200",
        "--warmup",
        "100",
        "--eval-every",
        "100",
        "--lr",
        "1e-2",
    ]);
    let ckpt = t.join("checkpoint.ckpt");

    let out_dir = tmp("eval_out");
    let out = run_ok(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        ckpt.to_str().unwrap(),
    ]);
    assert!(
        String::from_utf8_lossy(&out.stdout).contains("mean IoU"),
        "summary should print"
    );
    let report = fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 2, "header plus one checkpoint row");
    assert!(out_dir.join("eval_checkpoint.csv").exists());

    let warned = run_ok(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--out",
        tmp("eval_labeled").to_str().unwrap(),
        "--views",
        "labeled",
        ckpt.to_str().unwrap(),
    ]);
    assert!(
        stderr_of(&warned).contains("evaluation is defined on unlabeled views"),
        "{}",
        stderr_of(&warned)
    );
}

#[test]
fn eval_rejects_corrupt_checkpoint() {
    let data = tmp("eval_corrupt_data");
    gen_small(&data, &[]);
    let bad = tmp("eval_corrupt");
    fs::create_dir_all(&bad).unwrap();
    let ckpt = bad.join("mangled.ckpt");
    fs::write(&ckpt, b"CKPT but not really").unwrap();
    let out = run(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--out",
        bad.to_str().unwrap(),
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr_of(&out));
}

#[test]
fn analysis_csv_outputs_are_reproducible() {
    let data = tmp("repro_data");
    gen_small(&data, &[]);
    let transfer = |dir: &Path| {
        run_ok(&[
            "transfer",
            "--data",
            data.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
            "--target",
            "0",
            "--sources",
            "1,2,6,7",
            "--verify",
            "--samples",
            "32",
            "--verify-depths",
            "1024",
        ]);
    };
    let a = tmp("repro_a");
    let b = tmp("repro_b");
    transfer(&a);
    transfer(&b);
    assert_eq!(
        fs::read(a.join("verify.csv")).unwrap(),
        fs::read(b.join("verify.csv")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("transfer_v00.pm")).unwrap(),
        fs::read(b.join("transfer_v00.pm")).unwrap()
    );
}
