use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use promptrefine::pipeline::{run_with_backend, Dataset, RunConfig};
use promptrefine::segmenter::conformance::{check_backend, check_worker, probe_image};
use promptrefine::{BackendSpec, ProcessBackend, SegmenterBackend};

const BIN: &str = env!("CARGO_BIN_EXE_promptrefine");

fn cli(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn worker(extra: &[&str]) -> Vec<String> {
    let mut cmd = vec![
        BIN.to_owned(),
        "mock-worker".into(),
        "--seed".into(),
        "3".into(),
    ];
    cmd.extend(extra.iter().map(|s| s.to_string()));
    cmd
}

fn gen(dir: &Path, extra: &[&str]) {
    let mut args = vec![
        "gen",
        "--out",
        dir.to_str().unwrap(),
        "--size",
        "96",
        "--slices",
        "4",
    ];
    args.extend_from_slice(extra);
    let o = cli(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn mock_worker_passes_wire_conformance() {
    for extra in [&[][..], &["--no-features"][..]] {
        let report = check_worker(&worker(extra));
        assert!(report.passed(), "{report}");
    }
}

#[test]
fn process_backend_passes_backend_conformance() {
    let backend = ProcessBackend::spawn(&worker(&[]), 2).unwrap();
    let report = check_backend(&backend, &probe_image(20, 28));
    assert!(report.passed(), "{report}");
    assert!(backend.capabilities().features);
}

#[test]
fn process_backend_matches_in_process_mock() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data, &["--dispersion", "0.4"]);
    let ds = Dataset::open(&data).unwrap();
    let cfg = RunConfig {
        retrain_epochs: 0,
        parallelism: 2,
        ..RunConfig::default()
    };
    let local = BackendSpec::Mock { seed: 3 }.build(1).unwrap();
    let remote = ProcessBackend::spawn(&worker(&[]), 2).unwrap();
    let a = run_with_backend(&cfg, &ds, local.as_ref(), &dir.path().join("a")).unwrap();
    let b = run_with_backend(&cfg, &ds, &remote, &dir.path().join("b")).unwrap();
    for (x, y) in a.slices.iter().zip(&b.slices) {
        assert_eq!(x.labels, y.labels, "{}", x.id);
        assert_eq!(x.traces, y.traces, "{}", x.id);
    }
    let stats = remote.stats();
    assert_eq!(stats.embed_calls, 4);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data, &[]);
    let d = data.to_str().unwrap();
    let out = dir.path().join("out");
    let o = cli(&[
        "run",
        "--data",
        d,
        "--backend",
        "mock:1",
        "--out",
        out.to_str().unwrap(),
        "--jobs",
        "3",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("refined    1.0000"));

    assert_eq!(code(&cli(&["run", "--data", d, "--out", "x"])), 1);
    assert_eq!(code(&cli(&["run", "--no-such-flag"])), 1);
    assert_eq!(
        code(&cli(&[
            "run",
            "--data",
            d,
            "--backend",
            "gpu:0",
            "--out",
            "x"
        ])),
        1
    );
    assert_eq!(
        code(&cli(&[
            "run",
            "--data",
            d,
            "--backend",
            "mock:1",
            "--out",
            "x",
            "--set",
            "tau_f=2"
        ])),
        1
    );
    assert_eq!(code(&cli(&["--help"])), 0);

    fs::remove_file(data.join("slices/s0003/probs.dfgt")).unwrap();
    let o = cli(&[
        "run",
        "--data",
        d,
        "--backend",
        "mock:1",
        "--out",
        dir.path().join("out2").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert!(dir.path().join("out2/failures.csv").is_file());
}

#[test]
fn config_file_and_profile() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data, &["--dispersion", "0.5"]);
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        format!(
            "dataset_root = {}\nbackend = proc:{BIN} mock-worker --seed 2\nparallelism = 2\nretrain_epochs = 1\n",
            data.display()
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = cli(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--profile",
        "prostate",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("toy_model.dfgt").is_file());

    let o = cli(&[
        "metrics",
        "--data",
        data.to_str().unwrap(),
        "--labels",
        out.join("labels").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("# 2d\nclass_id,dice,assd\n"), "{text}");

    let plots = dir.path().join("plots");
    let o = cli(&[
        "trace-plot",
        out.join("traces").to_str().unwrap(),
        "--out",
        plots.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let series = fs::read_to_string(plots.join("s0000_class1_delta.csv")).unwrap();
    assert!(series.starts_with("iteration,phase,delta_m,box_area\n"));
}

#[test]
fn conformance_subcommand() {
    let o = cli(&[
        "conformance",
        "--backend",
        &format!("proc:{BIN} mock-worker"),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(!String::from_utf8_lossy(&o.stdout).contains("FAIL"));
    assert_eq!(code(&cli(&["conformance", "--backend", "mock:4"])), 0);
    assert_eq!(
        code(&cli(&["conformance", "--backend", "proc:/bin/false"])),
        1
    );
}
