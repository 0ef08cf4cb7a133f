use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use npl_et::error::Error;
use npl_et::io;

const BIN: &str = env!("CARGO_BIN_EXE_npl-et");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("NPL_ET_OUT")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

/// Every file below `dir` with its contents, manifest timestamps removed.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let mut bytes = fs::read(&p).unwrap();
            if p.file_name().unwrap() == "manifest.txt" {
                let text = String::from_utf8(bytes).unwrap();
                bytes = text
                    .lines()
                    .filter(|l| !l.starts_with("created_unix="))
                    .collect::<Vec<_>>()
                    .join("\n")
                    .into_bytes();
            }
            out.push((p.strip_prefix(dir).unwrap().to_path_buf(), bytes));
        }
    }
    out.sort();
    out
}

const BASE: &str = "grid_width=8\nt=20\nphantom=disk\nr_in=0.4\ninner_value=3\n";

#[test]
fn simulate_is_deterministic_in_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d, "c.cfg", BASE);
    ok(
        d,
        &["simulate", "--config", "c.cfg", "--seed", "7", "--out", "a"],
    );
    ok(
        d,
        &["simulate", "--config", "c.cfg", "--seed", "7", "--out", "b"],
    );
    ok(
        d,
        &["simulate", "--config", "c.cfg", "--seed", "8", "--out", "c"],
    );
    let h = |o: &str| io::file_sha256(&d.join(o).join("sinogram.npls")).unwrap();
    assert_eq!(h("a"), h("b"));
    assert_ne!(h("a"), h("c"));
    assert_eq!(snapshot(&d.join("a")), snapshot(&d.join("b")));
    let manifest = fs::read_to_string(d.join("a/manifest.txt")).unwrap();
    assert!(manifest.contains("command=simulate"));
    assert!(manifest.contains("config_sha256="));
    assert!(manifest.lines().any(|l| l.starts_with("created_unix=")));
}

#[test]
fn npl_pipeline_is_reproducible_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d, "sim.cfg", BASE);
    ok(
        d,
        &[
            "simulate", "--config", "sim.cfg", "--seed", "3", "--out", "sim",
        ],
    );
    ok(d, &["phantom", "--config", "sim.cfg", "--out", "ph"]);
    let labels: Vec<i32> = {
        let truth = io::read_image(&d.join("ph/phantom.npli"), 1.0).unwrap();
        truth
            .values()
            .iter()
            .map(|&v| if v > 2.0 { 0 } else { 1 })
            .collect()
    };
    let grid = npl_et::geometry::Grid::square(8).unwrap();
    let seg = npl_et::mri::Segmentation::single(grid, labels).unwrap();
    io::write_segmentation(&d.join("labels.npll"), &seg).unwrap();
    write_config(
        d,
        "npl.cfg",
        &format!(
            "{BASE}sinogram=sim/sinogram.npls\nsegmentation=labels.npll\nrho=0.5\ndraws=6\nbeta=1\nmax_iters=50\nseed=11\n"
        ),
    );
    ok(
        d,
        &[
            "npl",
            "--config",
            "npl.cfg",
            "--workers",
            "1",
            "--out",
            "n1",
        ],
    );
    ok(
        d,
        &[
            "npl",
            "--config",
            "npl.cfg",
            "--workers",
            "4",
            "--out",
            "n4",
        ],
    );
    assert_eq!(snapshot(&d.join("n1")), snapshot(&d.join("n4")));
    let meta = fs::read_to_string(d.join("n1/archive/meta.txt")).unwrap();
    assert!(meta.starts_with("kind=npl\n"));
    let reports = fs::read_to_string(d.join("n1/archive/solver_reports.csv")).unwrap();
    assert_eq!(reports.lines().count(), 7);

    write_config(
        d,
        "sum.cfg",
        "grid_width=8\narchive=n1/archive\ntarget=ph/phantom.npli\nlevel=0.9\n",
    );
    ok(d, &["summarize", "--config", "sum.cfg", "--out", "s"]);
    for f in [
        "mean.npli",
        "std.npli",
        "lower.csv",
        "upper.pgm",
        "upper.pgm.scale.txt",
    ] {
        assert!(d.join("s").join(f).exists(), "{f} missing");
    }
    let line = ok(d, &["coverage", "--config", "sum.cfg", "--out", "s"]);
    assert!(line.starts_with("fraction="));
    let csv = fs::read_to_string(d.join("s/coverage.csv")).unwrap();
    assert!(csv.starts_with("pixel,status\n"));
}

#[test]
fn gibbs_then_diagnose_writes_mode_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(
        d,
        "g.cfg",
        "grid_width=4\nt=1e6\nphantom=disk\nr_in=0.5\nburn_in=20\nn_samples=120\nmodes=4\nchain=g/chain\nsinogram=s/sinogram.npls\n",
    );
    ok(d, &["simulate", "--config", "g.cfg", "--out", "s"]);
    ok(
        d,
        &["gibbs", "--config", "g.cfg", "--seed", "2", "--out", "g"],
    );
    let meta = fs::read_to_string(d.join("g/chain/meta.txt")).unwrap();
    assert!(meta.starts_with("kind=gibbs\n"));
    ok(d, &["diagnose", "--config", "g.cfg", "--out", "dg"]);
    let csv = fs::read_to_string(d.join("dg/diagnostics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("mode,s_m,gamma_analytic,gamma_empirical")
    );
    assert_eq!(lines.count(), 4);
}

#[test]
fn reconstructions_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(
        d,
        "r.cfg",
        &format!("{BASE}sinogram=s/sinogram.npls\nbeta=0.5\nbeta_min=0.001\nmax_iters=40\n"),
    );
    ok(d, &["simulate", "--config", "r.cfg", "--out", "s"]);
    ok(d, &["project", "--config", "r.cfg", "--out", "s"]);
    for cmd in ["mlem", "map", "lambda-opt"] {
        ok(d, &[cmd, "--config", "r.cfg", "--out", "r"]);
    }
    let report = fs::read_to_string(d.join("r/map_report.txt")).unwrap();
    assert!(report.contains("iterations=") && report.contains("objective_final="));
    assert!(d.join("r/lambda_opt.npli").exists());
    let trace = fs::read_to_string(d.join("r/mlem_objective.csv")).unwrap();
    assert!(trace.starts_with("iteration,objective\n"));

    // A saved design reproduces the traced one exactly.
    write_config(
        d,
        "r2.cfg",
        &format!("{BASE}sinogram=s/sinogram.npls\nbeta=0.5\nmax_iters=40\ndesign=s/design.npld\n"),
    );
    ok(d, &["map", "--config", "r2.cfg", "--out", "r2"]);
    assert_eq!(
        fs::read(d.join("r/map.npli")).unwrap(),
        fs::read(d.join("r2/map.npli")).unwrap()
    );
}

#[test]
fn misspec_prints_the_minimizer_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let stdout = ok(d, &["misspec-demo", "--out", "m"]);
    assert!(stdout.contains("analytic minimum 2.2279471773"));
    let csv = fs::read_to_string(d.join("m/counterexample.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("start,λ1,λ2,λ3,λ4,objective"));
    for l in lines {
        let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((v[1] + v[2] - 1.0).abs() < 1e-6 && v[3] < 1e-6 && v[4] < 1e-6);
    }
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d, "c.cfg", BASE);
    let out = Command::new(BIN)
        .args(["phantom", "--config", "c.cfg"])
        .current_dir(d)
        .env("NPL_ET_OUT", "from_env")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(d.join("from_env/phantom.npli").exists());
}

#[test]
fn exit_codes_separate_failure_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(d, &["mlem"]).status.code(), Some(2));
    write_config(d, "bad.cfg", "grid_width=8\ncolour=red\n");
    assert_eq!(
        run(d, &["mlem", "--config", "bad.cfg"]).status.code(),
        Some(2)
    );
    fs::write(d.join("junk.npls"), b"NOPE").unwrap();
    write_config(d, "junk.cfg", "grid_width=8\nsinogram=junk.npls\n");
    assert_eq!(
        run(d, &["mlem", "--config", "junk.cfg"]).status.code(),
        Some(3)
    );
    assert_eq!(Error::Numeric("diverged".into()).exit_code(), 4);
}
