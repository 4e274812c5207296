use std::fs;
use std::path::Path;
use std::process::Command as Process;

use activeset_cli::{identify_report, parse_config, run, CliError};
use activeset_core::experiments::IdentifierParams;
use activeset_core::problem::{ErrorBounds, Evaluation};
use activeset_core::Matrix;

const BIN: &str = env!("CARGO_BIN_EXE_activeset-id");

fn run_args(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("activeset-id").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn value<'a>(report: &'a str, key: &str) -> &'a str {
    report
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no `{key}` in\n{report}"))
}

#[test]
fn identify_at_minimizers() {
    let (code, out, _) = run_args(&["identify"]);
    assert_eq!(code, 0);
    assert_eq!(value(&out, "A_LP"), "{2}");
    assert_eq!(value(&out, "A_QP"), "{2}");
    for key in ["rho_tilde", "rho_bar_tilde", "gap", "psi_lp", "psi_qp"] {
        let v: f64 = value(&out, key).parse().unwrap();
        assert!(v.abs() < 1e-8, "{key} = {v}");
    }
    let (code, out, _) = run_args(&["identify", "--problem", "f2"]);
    assert_eq!(code, 0);
    assert_eq!(value(&out, "A_LP"), "{1,2}");
    assert_eq!(value(&out, "A_QP"), "{1,2}");
}

#[test]
fn identify_without_constraints_reports_empty_sets() {
    let ev = Evaluation::<f64>::new(
        vec![0.0],
        0.0,
        vec![],
        vec![],
        vec![1.0],
        Matrix::zeros(1, 0),
        Matrix::zeros(1, 0),
        ErrorBounds::zero(),
    )
    .unwrap();
    let report = identify_report(&ev, &IdentifierParams::default()).unwrap();
    let get = |k: &str| report.iter().find(|(key, _)| key == k).unwrap().1.clone();
    assert_eq!(get("A_LP"), "{}");
    assert_eq!(get("A_QP"), "{}");
}

#[test]
fn usage_errors_exit_one() {
    let (code, _, err) = run_args(&["heatmap", "--sigma", "1.5"]);
    assert_eq!(code, 1);
    assert!(err.contains("sigma"), "{err}");
    assert_eq!(run_args(&["heatmap", "--bogus"]).0, 1);
    assert_eq!(run_args(&["identify", "--theta", "x"]).0, 1);
    assert_eq!(run_args(&["identify", "--problem", "f9"]).0, 1);
    assert_eq!(run_args(&[]).0, 1);
    assert_eq!(run_args(&["--help"]).0, 0);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    fs::write(
        &path,
        "# reference parameter set\nM = 1e8\nbeta = 0.7071\nsigma = 0.7\nnu = 100\ntheta = 5\n",
    )
    .unwrap();
    let cfg = parse_config(["activeset-id", "identify"], Some(&path)).unwrap();
    assert_eq!(cfg.params, IdentifierParams::default());
    let cfg = parse_config(["activeset-id", "identify", "--theta", "2"], Some(&path)).unwrap();
    assert_eq!(cfg.params.qp.theta, 2.0);
    let flag = path.to_str().unwrap();
    let cfg = parse_config(
        ["activeset-id", "identify", "--config", flag, "--nu", "7"],
        None,
    )
    .unwrap();
    assert_eq!((cfg.params.qp.theta, cfg.params.qp.nu), (5.0, 7.0));

    fs::write(&path, "gamma = 3\n").unwrap();
    let err = parse_config(["activeset-id", "identify"], Some(&path)).unwrap_err();
    assert!(matches!(err, CliError::Usage(ref m) if m.contains("gamma")));
}

fn heatmap_mini(out: &Path) -> Vec<u8> {
    let o = out.to_str().unwrap();
    let args = [
        "heatmap",
        "--problem",
        "f1",
        "--resolution",
        "3",
        "--half-width",
        "0.05",
        "--eps",
        "0",
        "--eps",
        "0.1",
        "--trials",
        "2",
        "--seed",
        "7",
        "--out",
        o,
    ];
    assert_eq!(run_args(&args).0, 0);
    fs::read(out.join("heatmap_f1.csv")).unwrap()
}

#[test]
fn heatmap_matches_golden_file_and_repeats() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = heatmap_mini(a.path());
    assert_eq!(first, heatmap_mini(b.path()));
    let golden = fs::read(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/golden/heatmap_f1_mini.csv"
    ))
    .unwrap();
    assert_eq!(
        String::from_utf8(first).unwrap(),
        String::from_utf8(golden).unwrap()
    );
}

#[test]
fn trajectory_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    let args = [
        "trajectory",
        "--problem",
        "f2",
        "--eps",
        "0",
        "--eps",
        "0.01",
        "--trials",
        "2",
        "--seed",
        "3",
        "--out",
        o,
    ];
    let (code, stdout, _) = run_args(&args);
    assert_eq!(code, 0);
    assert!(stdout.contains("method=qp"));
    let got = fs::read_to_string(dir.path().join("trajectory_f2.csv")).unwrap();
    let golden = fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/golden/trajectory_f2_mini.csv"
    ))
    .unwrap();
    assert_eq!(got, golden);
}

#[test]
fn verify_quick_passes() {
    let (code, out, _) = run_args(&["verify", "--quick"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.lines().all(|l| l.starts_with("PASS")));
    assert!(out.lines().count() >= 15);
}

#[test]
fn binary_exit_codes_and_thread_cap() {
    let status = Process::new(BIN)
        .args(["identify", "--sigma", "0"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let out = Process::new(BIN)
        .args([
            "heatmap",
            "--resolution",
            "2",
            "--eps",
            "0",
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .env("ACTIVESET_ID_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let bad = Process::new(BIN)
        .args(["identify"])
        .env("ACTIVESET_ID_THREADS", "zero")
        .status()
        .unwrap();
    assert_eq!(bad.code(), Some(1));
}

#[cfg(feature = "png")]
mod png {
    use super::*;
    use activeset_cli::render::render_heatmap;

    #[test]
    fn uniform_fractions_give_uniform_image() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("u.csv");
        let mut text = String::from("x1,x2,method,eps,success_fraction\n");
        for i in 0..4 {
            for j in 0..4 {
                text += &format!("{i},{j},qp,0,0.5\n");
            }
        }
        fs::write(&csv, text).unwrap();
        let paths = render_heatmap(&csv, &dir.path().join("u.png"), None).unwrap();
        assert_eq!(paths.len(), 1);
        let img = image::open(&paths[0]).unwrap().to_rgb8();
        let first = *img.get_pixel(0, 0);
        assert!(img.pixels().all(|p| *p == first));
    }

    #[test]
    fn malformed_csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("bad.csv");
        fs::write(&csv, "x1,x2,eps,success_fraction\n0,0,0,1\n").unwrap();
        let err = render_heatmap(&csv, &dir.path().join("b.png"), None).unwrap_err();
        assert!(err.to_string().contains("method"), "{err}");
        fs::write(
            &csv,
            "x1,x2,method,eps,success_fraction\n0,0,lp,0,1\n0,0,lp,0,high\n",
        )
        .unwrap();
        let err = render_heatmap(&csv, &dir.path().join("b.png"), None).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn exact_sweep_is_bright_around_marker() {
        let dir = tempfile::tempdir().unwrap();
        let o = dir.path().to_str().unwrap();
        let args = [
            "heatmap",
            "--resolution",
            "11",
            "--half-width",
            "0.05",
            "--eps",
            "0",
            "--png",
            "--out",
            o,
        ];
        let (code, out, _) = run_args(&args);
        assert_eq!(code, 0);
        let qp = out
            .lines()
            .find_map(|l| l.strip_prefix("png=").filter(|p| p.contains("_qp_")))
            .unwrap();
        let img = image::open(qp).unwrap().to_rgb8();
        let (w, h) = img.dimensions();
        let bright = |x: u32, y: u32| {
            let p = img.get_pixel(x, y);
            p[0] > 200 && p[1] > 200 && p[2] < 100
        };
        // Diagonal neighbors of the marker center lie off the cross.
        let (cx, cy) = (w / 2, h / 2);
        assert!(bright(cx + 3, cy + 3) && bright(cx - 3, cy - 3));
        let p = img.get_pixel(cx, cy);
        assert!(p[0] > 200 && p[1] < 100, "marker drawn at center: {p:?}");
    }
}
