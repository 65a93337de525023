mod common;

use std::path::Path;
use std::process::{Command, Output};

use jnd::data::shapes::{gen_background, DEFAULT_IMAGE_SIZE};
use jnd::data::write_ppm;

fn jnd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jnd")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = jnd(args);
    assert!(
        out.status.success(),
        "jnd {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = jnd(args);
    assert_eq!(out.status.code(), Some(1), "jnd {args:?} should exit 1");
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_classifier(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("clf.tc");
    let data = common::mnist_dir();
    ok(&[
        "train", "--model", "classifier", "--data", s(&data), "--train-count", "600", "--test-count", "100",
        "--epochs", "1", "--out", s(&out),
    ]);
    out
}

#[test]
fn train_and_attack_write_the_documented_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tiny_classifier(tmp.path());
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("clf.tc.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config"]["train_count"], "600");
    assert_eq!(manifest["outputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["results"]["held_out_accuracy"].as_f64().unwrap() > 0.5);

    let run = tmp.path().join("run");
    let data = common::mnist_dir();
    let stdout = ok(&[
        "attack", "--model", s(&model), "--data", s(&data), "--start", "9000", "--count", "2", "--max-iters", "40",
        "--record-stride", "10", "--verify", "--out", s(&run),
    ]);
    assert!(stdout.contains("attacks succeeded"));
    let dirs: Vec<_> = std::fs::read_dir(&run)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert!(!dirs.is_empty());
    for d in &dirs {
        for f in ["original.ppm", "original.tc", "final.ppm", "final.tc", "trace.csv", "summary.json"] {
            assert!(d.join(f).is_file(), "{} missing {f}", d.display());
        }
        let trace = std::fs::read_to_string(d.join("trace.csv")).unwrap();
        assert!(trace.starts_with("k,cost,loss,predicted_label,"));
        let rows = jnd::attack::read_trace_csv(d.join("trace.csv")).unwrap();
        let last = rows.last().unwrap().k;
        let summary = jnd::attack::AttackSummary::load(d.join("summary.json")).unwrap();
        match summary.first_success_iteration {
            Some(k) => {
                assert!(d.join("jnd.tc").is_file());
                assert!(rows.iter().any(|r| r.k == k));
                assert_eq!(summary.prefix_verified, Some(true));
            }
            None => assert!(!d.join("jnd.tc").exists()),
        }
        assert_eq!(last, 40);
    }
    let resolved = std::fs::read_to_string(run.join("resolved.conf")).unwrap();
    assert!(resolved.contains("max_iters = 40"));
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("manifest.json")).unwrap()).unwrap();
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(outputs.iter().any(|o| o["path"].as_str().unwrap().ends_with("trace.csv")));

    // curves and summary table from the same run
    ok(&["report", "--run", s(&run)]);
    let md = std::fs::read_to_string(run.join("report/summary.md")).unwrap();
    assert!(md.starts_with("| image | y | K |"));
    assert!(md.contains("**average**"));
    let curve = std::fs::read_to_string(run.join("report/curves").join(format!(
        "{}.csv",
        dirs[0].file_name().unwrap().to_str().unwrap()
    )))
    .unwrap();
    assert!(curve.starts_with("k,true_label_confidence,adversarial_label_confidence"));
}

#[test]
fn missing_inputs_are_named() {
    let tmp = tempfile::tempdir().unwrap();
    let nowhere = tmp.path().join("no-such-dir");
    let err = fails(&["train", "--model", "classifier", "--data", s(&nowhere), "--out", s(&tmp.path().join("m.tc"))]);
    assert!(err.contains("no-such-dir"), "{err}");
    let err = fails(&["attack", "--model", s(&tmp.path().join("absent.tc")), "--out", s(&tmp.path().join("r"))]);
    assert!(err.contains("absent.tc"), "{err}");
    let err = fails(&["report", "--run", s(tmp.path())]);
    assert!(err.contains("no attack traces"), "{err}");
}

#[test]
fn settings_precedence_and_unknown_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tiny_classifier(tmp.path());
    let conf = tmp.path().join("c.conf");
    std::fs::write(&conf, "# attack settings\nalpha = 5\nmax_iters = 3\n").unwrap();
    let data = common::mnist_dir();
    let run = |extra: &[&str], name: &str| {
        let out = tmp.path().join(name);
        let mut args = vec!["attack", "--model", s(&model), "--data", s(&data), "--count", "5", "--config", s(&conf)];
        args.extend_from_slice(extra);
        args.extend(["--out", out.to_str().unwrap()]);
        ok(&args);
        std::fs::read_to_string(out.join("resolved.conf")).unwrap()
    };
    assert!(run(&[], "r1").contains("alpha = 5\n"));
    assert!(run(&["--set", "alpha=7"], "r2").contains("alpha = 7\n"));
    assert!(run(&["--set", "alpha=7", "--alpha", "9"], "r3").contains("alpha = 9\n"));

    let err = fails(&[
        "attack", "--model", s(&model), "--data", s(&data), "--set", "colour=blue", "--out", s(&tmp.path().join("r4")),
    ]);
    assert!(err.contains("colour"), "{err}");
}

#[test]
fn wrong_label_leaves_nothing_to_attack() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tiny_classifier(tmp.path());
    let all = jnd::data::load_mnist_dir(common::mnist_dir()).unwrap();
    let img = tmp.path().join("digit.ppm");
    write_ppm(&img, &all.images[9000]).unwrap();
    let wrong = ((all.labels[9000] + 1) % 10).to_string();
    let out = jnd(&["attack", "--model", s(&model), "--image", s(&img), "--label", &wrong, "--out", s(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("skipping"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no image qualified"));
}

#[test]
fn metrics_identity_row_and_count_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.ppm");
    let b = tmp.path().join("b.ppm");
    write_ppm(&a, &gen_background(1, DEFAULT_IMAGE_SIZE)).unwrap();
    write_ppm(&b, &gen_background(2, DEFAULT_IMAGE_SIZE)).unwrap();
    let csv_path = tmp.path().join("m.csv");
    ok(&["metrics", "--original", s(&a), "--adversarial", s(&a), s(&b), "--out", s(&csv_path)]);
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "run,pair,psnr,uiqi,scc,vif");
    let identity: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(&identity[2..], ["1000", "1", "1", "1"]);
    assert!(lines[3].contains(",average,"));

    let err = fails(&["metrics", "--original", s(&a), s(&b), "--adversarial", s(&a), s(&b), s(&a)]);
    assert!(err.contains("2 originals and 3"), "{err}");
    let err = fails(&["metrics", "--original", s(&a), "--adversarial", s(&tmp.path().join("gone.ppm"))]);
    assert!(err.contains("gone.ppm"), "{err}");
}
