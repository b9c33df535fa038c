//! End-to-end checks of the `dlab` binary: config parsing, subcommand
//! outputs, exit codes, and the resume refusal paths.

use std::path::Path;
use std::process::{Command, Output};

fn dlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn count_lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn kp_evolve_zero_data_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    write(
        &cfg,
        "epsilon=0.5\nh=0.01\nt_end=0.05\nnx=16\nny=16\ninitial=zero\nmonitor_stride=1\n",
    );
    let out = dir.path().join("out");
    let res = dlab(&[
        "kp-evolve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--threads",
        "1",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let monitor = out.join("monitor.csv");
    assert!(monitor.exists());
    assert!(out.join("manifest.json").exists());
    // All-zero monitor rows.
    let text = std::fs::read_to_string(&monitor).unwrap();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[1], "0");
        assert_eq!(cols[2], "0");
    }
}

#[test]
fn table1_style_config_is_accepted() {
    // Parameter vocabulary of the production experiments; immediately
    // validated, not run (t_end = 0 means zero steps).
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("n9.cfg");
    write(
        &cfg,
        "# production-style parameters\nepsilon=0.10\nC0=6\nh=2e-4\nt_end=0\nnx=64\nny=64\nalpha=-1\n",
    );
    let out = dir.path().join("out");
    let res = dlab(&[
        "kp-evolve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn empty_config_lists_required_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.cfg");
    write(&cfg, "\n# nothing here\n");
    let res = dlab(&[
        "kp-evolve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    for key in ["epsilon", "h", "t_end", "nx"] {
        assert!(err.contains(key), "missing `{key}` in: {err}");
    }
}

#[test]
fn non_power_of_two_grid_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    write(&cfg, "epsilon=0.1\nC0=6\nh=1e-3\nt_end=0.1\nnx=1000\n");
    let res = dlab(&[
        "kp-evolve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("power of two"));
}

#[test]
fn unknown_key_rejected_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    write(
        &cfg,
        "epsilon=0.1\nC0=6\nh=1e-3\nt_end=0\nnx=16\nny=16\nbogus_key=1\n",
    );
    let res = dlab(&[
        "kp-evolve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("bogus_key") && err.contains("line 7"), "{err}");
}

#[test]
fn whitham_scan_grid_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scan.cfg");
    write(
        &cfg,
        "alpha=-1\nxi=0.5\nbeta2=1.0\nbeta3=0.0\n\
         beta1_min=1.5\nbeta1_max=3.0\nbeta1_steps=10\n\
         q_min=-1.0\nq_max=1.0\nq_steps=10\n",
    );
    let out = dir.path().join("out");
    let res = dlab(&[
        "whitham-scan",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    // 100 data rows plus the header.
    assert_eq!(count_lines(&out.join("scan.csv")), 101);
    let text = std::fs::read_to_string(out.join("scan.csv")).unwrap();
    assert!(text.starts_with("beta1,beta2,beta3,q,xi,re1,im1"));
}

#[test]
fn fit_pipeline_on_synthetic_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let mut text = String::from("x,y\n");
    for &x in &[0.02, 0.03, 0.05, 0.07, 0.1] {
        let y = 2.0 - 3.0 * (x as f64).powf(0.8);
        text.push_str(&format!("{x},{y}\n"));
    }
    write(&data, &text);
    let cfg = dir.path().join("fit.cfg");
    write(
        &cfg,
        &format!("fit=power_law\ninput={}\n", data.display()),
    );
    let out = dir.path().join("out");
    let res = dlab(&[
        "fit",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(out.join("fit.csv")).unwrap();
    assert!(text.lines().count() == 4);
    let beta_line = text.lines().find(|l| l.contains(",beta,")).unwrap();
    let beta: f64 = beta_line.split(',').nth(2).unwrap().parse().unwrap();
    assert!((beta - 0.8).abs() < 1e-6, "beta = {beta}");
}

#[test]
fn slice_and_peaks_on_snapshot() {
    // Produce a quick lump run with a final snapshot, then post-process it.
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    write(
        &cfg,
        "epsilon=1.0\nh=1e-3\nt_end=0.01\nnx=128\nny=128\ninitial=lump\nlump_b=1.0\n\
         snapshot_times=0.01\nmonitor_stride=5\ntail_abort=2.0\nmax_l2_drift=1.0\n",
    );
    let out = dir.path().join("out");
    let res = dlab(&[
        "kp-evolve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let snap = out.join("snap_00000010.kpf");
    assert!(snap.exists());

    let slice_cfg = dir.path().join("slice.cfg");
    write(&slice_cfg, &format!("input={}\n", snap.display()));
    let sres = dlab(&[
        "slice",
        "--config",
        slice_cfg.to_str().unwrap(),
        "--out",
        out.join("slice").to_str().unwrap(),
    ]);
    assert!(sres.status.success());
    assert_eq!(count_lines(&out.join("slice/slice.csv")), 129);

    let peaks_cfg = dir.path().join("peaks.cfg");
    write(
        &peaks_cfg,
        &format!("input={}\nrel_threshold=0.5\nfit_window=10\n", snap.display()),
    );
    let pres = dlab(&[
        "peaks",
        "--config",
        peaks_cfg.to_str().unwrap(),
        "--out",
        out.join("peaks").to_str().unwrap(),
    ]);
    assert!(pres.status.success(), "{}", String::from_utf8_lossy(&pres.stderr));
    let peaks_text = std::fs::read_to_string(out.join("peaks/peaks.csv")).unwrap();
    assert!(peaks_text.lines().count() >= 2, "one peak expected");
    let fit_text = std::fs::read_to_string(out.join("peaks/lumpfit.csv")).unwrap();
    let b_line = fit_text.lines().find(|l| l.starts_with("lump,b,")).unwrap();
    let b: f64 = b_line.split(',').nth(2).unwrap().parse().unwrap();
    assert!((b - 1.0).abs() < 0.05, "fitted b = {b}");
}

#[test]
fn resume_refuses_altered_config_and_missing_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let base = "h=1e-3\nt_end=0.01\nnx=32\nny=32\ninitial=lump\nlump_b=0.7\n\
                snapshot_times=0.005\nmonitor_stride=5\ntail_abort=2.0\nmax_l2_drift=1.0\n";
    write(&cfg, &format!("epsilon=1.0\n{base}"));
    let out = dir.path().join("out");
    let res = dlab(&[
        "kp-evolve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let manifest = out.join("manifest.json");

    // Altered epsilon: refusal with exit 2.
    let cfg2 = dir.path().join("run2.cfg");
    write(&cfg2, &format!("epsilon=2.0\n{base}"));
    let res = dlab(&[
        "kp-evolve",
        "--config",
        cfg2.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--resume",
        manifest.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("refusing to resume"));

    // Missing snapshot file: exit 4 naming the file.
    let snap = out.join("snap_00000005.kpf");
    std::fs::remove_file(&snap).unwrap();
    let res = dlab(&[
        "kp-evolve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--resume",
        manifest.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&res.stderr).contains("snap_00000005.kpf"));
}

#[test]
fn numerical_failure_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    // Under-resolved datum for an eps this small: the tail monitor aborts.
    write(
        &cfg,
        "epsilon=0.01\nC0=6\nh=1e-3\nt_end=0.01\nnx=32\nny=32\nmonitor_stride=1\n",
    );
    let res = dlab(&[
        "kp-evolve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(3));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("resolution") || err.contains("blow-up"), "{err}");
}
