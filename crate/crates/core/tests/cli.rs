use std::path::Path;
use std::process::{Command, Output};

const MODEL: &str = "name: tiny
input: [1, 8, 8]
classes: 2
layers:
  - conv: {out: 6, k: 3, stride: 1, pad: 1}
  - bn
  - relu
  - maxpool: {k: 2, stride: 2}
  - conv: {out: 5, k: 3, stride: 1, pad: 0}
  - relu
  - flatten
  - fc: {out: 2}
";

fn hwprune(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hwprune")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = hwprune(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Dataset, trained model and quantized model in a fresh directory.
fn pipeline() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("m.yaml"), MODEL).unwrap();
    ok(d, &["--seed", "3", "dataset", "gen", "--classes", "2", "--per-class", "10", "--side", "8", "--out", "d.ards"]);
    ok(d, &["--seed", "3", "train", "--model", "m.yaml", "--data", "d.ards", "--epochs", "2", "--pgd-steps", "2", "--batch-size", "8", "--out", "m.armg"]);
    ok(d, &["quantize", "--model", "m.armg", "--calib", "d.ards", "--data", "d.ards", "--out", "m.armq"]);
    dir
}

#[test]
fn full_flow_runs_and_checks_out() {
    let dir = pipeline();
    let d = dir.path();
    let eval = ok(d, &["eval", "--model", "m.armg", "--data", "d.ards", "--attack", "pgd3"]);
    assert!(eval.contains("clean accuracy") && eval.contains("robust accuracy"), "{eval}");
    for mode in ["streaming", "temporal"] {
        let sim = ok(d, &["simulate", "--qmodel", "m.armq", "--data", "d.ards", "--image-index", "3", "--mode", mode, "--check", "--trace", "--csv", "sim.csv"]);
        assert!(sim.contains("check passed"), "{sim}");
        let csv = std::fs::read_to_string(d.join("sim.csv")).unwrap();
        assert!(csv.starts_with("layer,engine,pe,folds,input_load,compute,buffer_update,drain,cycles\n"));
    }
    ok(d, &["generate", "--qmodel", "m.armq", "--out", "gen"]);
    for f in ["layer_params.csv", "weights.bin", "template.txt", "estimate.csv"] {
        assert!(d.join("gen").join(f).exists(), "missing {f}");
    }
    let template = std::fs::read_to_string(d.join("gen/template.txt")).unwrap();
    assert!(template.contains("conv_engine<8, 8, 8, 8, 1, 6, 3, 1, 1, 6> layer0;"), "{template}");
}

#[test]
fn estimate_reads_descriptions_and_honours_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("m.yaml"), MODEL).unwrap();
    let csv = ok(d, &["estimate", "--model", "m.yaml", "--csv"]);
    assert!(csv.lines().count() > 2, "{csv}");
    std::fs::write(d.join("c.yaml"), "mode: temporal\npe_max: 16\nepochs: 3\n").unwrap();
    let via_config = ok(d, &["--config", "c.yaml", "estimate", "--model", "m.yaml", "--csv"]);
    let explicit = ok(d, &["estimate", "--model", "m.yaml", "--csv", "--mode", "temporal", "--pe-max", "16"]);
    assert_eq!(via_config, explicit);
    // the command line wins over the file
    let overridden = ok(d, &["--config", "c.yaml", "estimate", "--model", "m.yaml", "--csv", "--pe-max", "8"]);
    assert_eq!(overridden, ok(d, &["estimate", "--model", "m.yaml", "--csv", "--mode", "temporal", "--pe-max", "8"]));
}

#[test]
fn calibrated_constants_change_the_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("m.yaml"), MODEL).unwrap();
    std::fs::write(d.join("c.yaml"), "hw_constants:\n  d_conv: 9\n").unwrap();
    let base = ok(d, &["estimate", "--model", "m.yaml", "--csv"]);
    let tuned = ok(d, &["--config", "c.yaml", "estimate", "--model", "m.yaml", "--csv"]);
    assert_ne!(base, tuned);
}

#[test]
fn bad_input_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("m.yaml"), MODEL).unwrap();
    for args in [
        vec!["estimate", "--model", "m.yaml", "--pe-max", "7"],
        vec!["estimate", "--model", "missing.yaml"],
        vec!["estimate", "--bogus"],
        vec!["simulate", "--qmodel", "m.yaml", "--data", "none.ards"],
        vec!["--config", "absent.yaml", "estimate", "--model", "m.yaml"],
    ] {
        let out = hwprune(d, &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn prune_writes_candidates_manifest_and_trace() {
    let dir = pipeline();
    let d = dir.path();
    ok(d, &["prune", "--model", "m.armg", "--data", "d.ards", "--eval-samples", "10", "--pgd-steps", "2", "--max-steps", "3", "--tau", "0.9", "--out", "p"]);
    let manifest = std::fs::read_to_string(d.join("p/manifest.csv")).unwrap();
    assert!(manifest.starts_with("candidate_id,step,clean_acc,robustness,macs,cycles,dsp,bram,pareto\n"));
    let rows = manifest.lines().count() - 1;
    for i in 0..rows {
        assert!(d.join(format!("p/candidate_{i}.armg")).exists());
    }
    let trace = std::fs::read_to_string(d.join("p/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 4);
    let est = ok(d, &["estimate", "--model", "p/candidate_0.armg"]);
    assert!(!est.is_empty());
}
