mod common;

use std::path::Path;
use std::process::{Command, Output};

use bare_llama::bench::read_csv;
use common::FixtureFiles;

fn bench(fx: &FixtureFiles, cwd: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bench"))
        .arg(fx.model())
        .arg(fx.tokenizer())
        .args(extra)
        .current_dir(cwd)
        .output()
        .expect("spawn bench")
}

#[test]
fn generate_mode_writes_no_csv_by_default() {
    let fx = FixtureFiles::e2e(1);
    let cwd = tempfile::tempdir().unwrap();
    let out = bench(&fx, cwd.path(), &["-n", "8", "-i", "Hi"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out.stdout.starts_with(b"Hi"));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("tok/s"), "{stderr}");
    assert!(!cwd.path().join("benchmark_results.csv").exists());
}

#[test]
fn bench_mode_writes_default_csv() {
    let fx = FixtureFiles::e2e(2);
    let cwd = tempfile::tempdir().unwrap();
    let out = bench(
        &fx,
        cwd.path(),
        &[
            "-n",
            "20",
            "--mode",
            "bench",
            "--kernel",
            "scalar",
            "--aligned-copy",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(cwd.path().join("benchmark_results.csv")).unwrap();
    assert_eq!(read_csv(&csv).unwrap().len(), 20);
}

#[test]
fn same_seed_same_stdout() {
    let fx = FixtureFiles::e2e(3);
    let args = [
        "-n", "60", "-t", "0.9", "-p", "0.9", "-s", "1234", "-i", "abc", "--csv", "lat.csv",
    ];
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (a, b) = (bench(&fx, d1.path(), &args), bench(&fx, d2.path(), &args));
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
    let rows = |d: &Path| {
        read_csv(&std::fs::read_to_string(d.join("lat.csv")).unwrap())
            .unwrap()
            .len()
    };
    assert_eq!((rows(d1.path()), rows(d2.path())), (60, 60));
}

#[test]
fn optional_reports() {
    let fx = FixtureFiles::e2e(4);
    let cwd = tempfile::tempdir().unwrap();
    let out = bench(
        &fx,
        cwd.path(),
        &["-n", "4", "--power", "8", "--roofline", "100,3000"],
    );
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("mJ/token"), "{stderr}");
    assert!(stderr.contains("attainable 200.0 GFLOPS"), "{stderr}");
    assert!(stderr.contains("attainable 50.0 GFLOPS"), "{stderr}");
}

#[test]
fn errors_exit_nonzero_with_one_line() {
    let fx = FixtureFiles::e2e(5);
    let cwd = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 4] = [&["-n", "1000"], &["-n", "0"], &["-t", "-1"], &["-p", "1.5"]];
    for extra in cases {
        let out = bench(&fx, cwd.path(), extra);
        assert!(!out.status.success(), "{extra:?}");
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert_eq!(stderr.trim_end().lines().count(), 1, "{extra:?}: {stderr}");
        assert!(stderr.starts_with("error: "), "{stderr}");
    }

    let out = Command::new(env!("CARGO_BIN_EXE_bench"))
        .args(["/nonexistent/model.bin", "/nonexistent/tok.bin"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/model.bin"));
}

#[test]
fn rejects_unknown_kernel() {
    let fx = FixtureFiles::e2e(6);
    let cwd = tempfile::tempdir().unwrap();
    let out = bench(&fx, cwd.path(), &["--kernel", "avx512"]);
    assert!(!out.status.success());
}
