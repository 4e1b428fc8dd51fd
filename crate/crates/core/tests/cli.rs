use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flowsr::evalkit::metrics::parse_report_csv;
use flowsr::io::f4d;
use flowsr::net::GeneratorSpec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const PHANTOM_CFG: &str = "\
nx = 24
ny = 24
nz = 24
nt = 2
tube_radius = 5
v_peak = 0.6
";

fn flowsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowsr"))
        .args(args)
        .env("F4D_THREADS", "2")
        .output()
        .expect("spawn flowsr")
}

fn ok(args: &[&str]) {
    let out = flowsr(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn subdir(root: &Path, name: &str) -> PathBuf {
    let d = root.join(name);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn phantom(dir: &Path, text: &str) -> PathBuf {
    let cfg = dir.join("phantom.cfg");
    std::fs::write(&cfg, text).unwrap();
    let out = dir.join("phantom");
    ok(&["phantom", "--config", s(&cfg), "--out", s(&out)]);
    out
}

fn synth(dir: &Path, ph: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let (hr, mag, mask) = (ph.join("v_hr.f4d"), ph.join("magnitude.f4d"), ph.join("mask.f4d"));
    let mut args = vec!["synth", "--hr", s(&hr), "--mag", s(&mag), "--mask", s(&mask), "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

#[test]
fn phantom_outputs_round_trip_and_rerun_identically() {
    let dir = tempfile::tempdir().unwrap();
    let a = phantom(&subdir(dir.path(), "a"), PHANTOM_CFG);
    let b = phantom(&subdir(dir.path(), "b"), PHANTOM_CFG);
    for f in ["v_hr.f4d", "magnitude.f4d", "mask.f4d"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let v = f4d::read_velocity(&a.join("v_hr.f4d")).unwrap();
    assert_eq!(v.nt(), 2);
    assert_eq!(v.dims().as_array(), [24, 24, 24]);
    let mask = f4d::read_mask(&a.join("mask.f4d")).unwrap();
    assert!(mask.data().iter().any(|&m| m));
    let manifest = std::fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert!(manifest.contains("tube_radius"));
    assert!(manifest.contains("artifact_version"));
}

#[test]
fn missing_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "nx = 24\nny = 24\nnz = 24\nnt = 2\nv_peak = 0.6\n").unwrap();
    let out = flowsr(&["phantom", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tube_radius"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(flowsr(&[]).status.code(), Some(2));
    assert_eq!(flowsr(&["train"]).status.code(), Some(2));
    assert_eq!(flowsr(&["--help"]).status.code(), Some(0));
}

#[test]
fn synth_is_seeded_and_noise_free_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let ph = phantom(dir.path(), PHANTOM_CFG);
    let a = synth(dir.path(), &ph, "a", &["--seed", "3"]);
    let b = synth(dir.path(), &ph, "b", &["--seed", "3"]);
    let c = synth(dir.path(), &ph, "c", &["--seed", "4"]);
    let read = |p: &Path| std::fs::read(p.join("lr.f4d")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    let n1 = synth(dir.path(), &ph, "n1", &["--noise-free", "--seed", "1"]);
    let n2 = synth(dir.path(), &ph, "n2", &["--noise-free", "--seed", "2"]);
    assert_eq!(read(&n1), read(&n2));
    let lr = f4d::read_velocity(&a.join("lr.f4d")).unwrap();
    assert_eq!(lr.dims().as_array(), [12, 12, 12]);
    let log = std::fs::read_to_string(a.join("snr_log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("timestep,stratum,tsnr"));
    assert_eq!(log.lines().count(), 1 + 2);
}

#[test]
fn odd_dimensions_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ph = phantom(dir.path(), &PHANTOM_CFG.replace("nx = 24", "nx = 25"));
    let out = flowsr(&[
        "synth",
        "--hr",
        s(&ph.join("v_hr.f4d")),
        "--mag",
        s(&ph.join("magnitude.f4d")),
        "--mask",
        s(&ph.join("mask.f4d")),
        "--out",
        s(&dir.path().join("lr")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn identity_inference_and_self_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let ph = phantom(dir.path(), PHANTOM_CFG);
    let lr = synth(dir.path(), &ph, "lr", &["--noise-free"]);
    let sr = dir.path().join("sr");
    ok(&["infer", "--identity-upsample", "--lr", s(&lr.join("lr.f4d")), "--out", s(&sr)]);
    let v = f4d::read_velocity(&sr.join("sr.f4d")).unwrap();
    assert_eq!(v.dims().as_array(), [24, 24, 24]);

    let ev = dir.path().join("eval");
    ok(&[
        "eval",
        "--sr",
        s(&ph.join("v_hr.f4d")),
        "--hr",
        s(&ph.join("v_hr.f4d")),
        "--mask",
        s(&ph.join("mask.f4d")),
        "--snr-log",
        s(&lr.join("snr_log.csv")),
        "--model",
        "self",
        "--out",
        s(&ev),
    ]);
    let reports = parse_report_csv(&std::fs::read_to_string(ev.join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(reports.len(), 1);
    assert!(!reports[0].rows.is_empty());
    for row in &reports[0].rows {
        if let Some(m) = &row.metrics {
            assert_eq!((m.mre, m.mae, m.vnrmse), (0.0, 0.0, 0.0));
        }
    }
}

#[test]
fn interpolation_endpoints_copy_their_sources() {
    let dir = tempfile::tempdir().unwrap();
    let spec = GeneratorSpec {
        n_rrdb: 1,
        width: 4,
        n_hr_blocks: 1,
    };
    let a = dir.path().join("a.f4dw");
    let b = dir.path().join("b.f4dw");
    flowsr::io::save_params(&a, &spec.init(&mut ChaCha8Rng::seed_from_u64(1)).unwrap()).unwrap();
    flowsr::io::save_params(&b, &spec.init(&mut ChaCha8Rng::seed_from_u64(2)).unwrap()).unwrap();
    let out = dir.path().join("interp");
    ok(&["interp", "--stage1", s(&a), "--stage2", s(&b), "--out", s(&out)]);
    assert_eq!(std::fs::read(out.join("interp_0.00.f4dw")).unwrap(), std::fs::read(&a).unwrap());
    assert_eq!(std::fs::read(out.join("interp_1.00.f4dw")).unwrap(), std::fs::read(&b).unwrap());
    for alpha in ["0.25", "0.50", "0.75"] {
        assert!(out.join(format!("interp_{alpha}.f4dw")).exists());
    }
    let bad = flowsr(&["interp", "--stage1", s(&a), "--stage2", s(&dir.path().join("missing")), "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(3));
}
