use std::path::Path;
use std::process::{Command, Output};

fn harmosep(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_harmosep"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .env("RUST_LOG", "warn")
        .env_remove("HARMOSEP_THREADS")
        .output()
        .expect("binary runs")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(harmosep(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(harmosep(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(harmosep(dir.path(), &["train"]).status.code(), Some(1));
}

#[test]
fn bad_configuration_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "n_ins = 2\nno_such_key = 1\n").unwrap();
    let out = harmosep(dir.path(), &["--config", cfg.to_str().unwrap(), "synth", "--duration", "1"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));

    std::fs::write(&cfg, "n_trn = 700\n").unwrap();
    let out = harmosep(dir.path(), &["--config", cfg.to_str().unwrap(), "train", "x.hsls", "--dict", "d.txt"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_or_corrupt_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = harmosep(d, &["transform", &path(d, "absent.wav"), "--cache", &path(d, "c.hsls")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("c.hsls").exists());

    std::fs::write(d.join("junk.wav"), b"not a wav file at all").unwrap();
    let out = harmosep(d, &["transform", &path(d, "junk.wav"), "--cache", &path(d, "c.hsls")]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(d.join("junk.hsls"), b"HSLS").unwrap();
    let out = harmosep(d, &["train", &path(d, "junk.hsls"), "--dict", &path(d, "d.txt")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("d.txt").exists());
}

#[test]
fn synth_then_eval_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = harmosep(d, &["synth", "--duration", "1.5", "--seed", "3", "--stem", "t"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["t.mix.wav", "t.ref0.wav", "t.ref1.wav", "t.dict.txt"] {
        assert!(d.join(name).is_file(), "{name} missing");
    }
    let (r0, r1) = (path(d, "t.ref0.wav"), path(d, "t.ref1.wav"));
    let out = harmosep(d, &["eval", "--reference", &r0, &r1, "--estimate", &r1, &r0]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = String::from_utf8_lossy(&out.stdout);
    assert!(report.contains("instrument=0 estimate=1"), "{report}");
    assert!(report.contains("instrument=1 estimate=0"), "{report}");
}

#[test]
fn separate_with_true_profiles() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(harmosep(d, &["synth", "--duration", "2", "--seed", "8", "--stem", "s"]).status.success());
    let out = harmosep(
        d,
        &["separate", &path(d, "s.mix.wav"), "--dict", &path(d, "s.dict.txt")],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["s.mix.inst0.wav", "s.mix.inst1.wav", "s.mix.report.txt"] {
        assert!(d.join(name).is_file(), "{name} missing");
    }
    let out = harmosep(
        d,
        &[
            "eval",
            "--reference",
            &path(d, "s.ref0.wav"),
            &path(d, "s.ref1.wav"),
            "--estimate",
            &path(d, "s.mix.inst0.wav"),
            &path(d, "s.mix.inst1.wav"),
        ],
    );
    assert!(out.status.success());
    let report = String::from_utf8_lossy(&out.stdout).into_owned();
    let sdrs: Vec<f64> = report
        .split_whitespace()
        .filter_map(|w| w.strip_prefix("sdr="))
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(sdrs.len(), 2, "{report}");
    assert!(sdrs.iter().all(|&s| s > 5.0), "{report}");
}
