use std::path::Path;
use std::process::{Command, Output};

fn cpf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpf"))
        .args(args)
        .output()
        .expect("spawn cpf")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_one_line_failure(o: &Output, needle: &str) {
    assert!(!o.status.success());
    let e = stderr(o);
    assert_eq!(e.trim_end().lines().count(), 1, "{e}");
    assert!(e.contains(needle), "{e}");
}

#[test]
fn argument_errors_are_single_lines() {
    assert_one_line_failure(&cpf(&["bogus"]), "bogus");
    assert_one_line_failure(
        &cpf(&["synth", "--kind", "linear-gaussian", "--colour", "red"]),
        "--colour",
    );
    assert_one_line_failure(&cpf(&["synth", "--kind", "garch"]), "garch");
    assert_one_line_failure(
        &cpf(&[
            "evaluate",
            "--checkpoint",
            "/nonexistent/m.ckpt",
            "--data",
            "x.csv",
        ]),
        "/nonexistent/m.ckpt",
    );
    assert!(cpf(&["--help"]).status.success());
}

#[test]
fn train_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    assert!(cpf(&[
        "synth",
        "--kind",
        "linear-gaussian",
        "--length",
        "60",
        "--out",
        p(&data)
    ])
    .status
    .success());
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "window = 4\nlearning_rat = 0.1\n").unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let o = cpf(&[
        "train",
        "--config",
        p(&cfg),
        "--data",
        p(&data),
        "--checkpoint-out",
        p(&ckpt),
    ]);
    assert_one_line_failure(&o, "learning_rat");
    let o = cpf(&[
        "train",
        "--set",
        "particles=0",
        "--data",
        p(&data),
        "--checkpoint-out",
        p(&ckpt),
    ]);
    assert_one_line_failure(&o, "particles");
    let o = cpf(&[
        "train",
        "--set",
        "target=price",
        "--data",
        p(&data),
        "--checkpoint-out",
        p(&ckpt),
    ]);
    assert_one_line_failure(&o, "price");
}

#[test]
fn blank_cell_is_reported_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    std::fs::write(&data, "a,y\n1,2\n3,\n5,6\n").unwrap();
    let o = cpf(&[
        "train",
        "--data",
        p(&data),
        "--checkpoint-out",
        p(&dir.path().join("m")),
    ]);
    assert_one_line_failure(&o, "row 2");
}

#[test]
fn forecast_snapshot_feeds_ecdf_dump() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let ckpt = dir.path().join("m.ckpt");
    let snap = dir.path().join("snap.json");
    let grid = dir.path().join("grid.csv");
    assert!(cpf(&[
        "synth",
        "--kind",
        "stochastic-volatility",
        "--length",
        "80",
        "--seed",
        "3",
        "--out",
        p(&data)
    ])
    .status
    .success());
    let o = cpf(&[
        "train",
        "--data",
        p(&data),
        "--checkpoint-out",
        p(&ckpt),
        "--set",
        "window=5",
        "--set",
        "epochs=1",
        "--set",
        "hidden=4",
        "--set",
        "particles=7",
        "--report-out",
        p(&dir.path().join("r.json")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = cpf(&[
        "forecast",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&data),
        "--snapshot-out",
        p(&snap),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert_eq!(csv.lines().next(), Some("window,row,actual,predicted"));
    assert_eq!(csv.lines().count(), 1 + 80 - 5);
    let o = cpf(&[
        "ecdf-dump",
        "--snapshot",
        p(&snap),
        "--grid",
        "50",
        "--out",
        p(&grid),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&grid).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 50);
    assert!(rows
        .windows(2)
        .all(|w| w[1][2] >= w[0][2] && w[1][1] >= w[0][1]));
    assert!((rows[49][1] - 1.0).abs() < 1e-12);
}

#[test]
fn sweep_writes_ordered_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let o = cpf(&[
        "sweep",
        "--points",
        "11",
        "--window",
        "4",
        "--windows",
        "3",
        "--particles",
        "3",
        "--hidden",
        "2",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("index,offset,loss_continuous,loss_multinomial")
    );
    for (i, l) in lines.enumerate() {
        assert!(l.starts_with(&format!("{i},")));
    }
}
