use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/figure1").join(name)
}

fn hiercast(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hiercast")).args(args).arg("--out").arg(out).output().unwrap()
}

fn reconcile_args<'a>(h: &'a str, p: &'a str, b: &'a str) -> Vec<&'a str> {
    vec!["reconcile", "--hierarchy", h, "--panel", p, "--base", b, "--draws", "200"]
}

#[test]
fn reconcile_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let (h, p, b) = (fixture("hierarchy.json"), fixture("panel.csv"), fixture("base.csv"));
    let (h, p, b) = (h.to_str().unwrap(), p.to_str().unwrap(), b.to_str().unwrap());
    let out = hiercast(&reconcile_args(h, p, b), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let text = std::fs::read_to_string(dir.path().join("reconciled.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "node_id,base,revised,post_mean,q05,q50,q95");
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_owned).collect()).collect();
    assert_eq!(rows.len(), 9);
    assert_eq!(rows[8][0], "sigma2");
    let revised: Vec<f64> = rows[..8].iter().map(|r| r[2].parse().unwrap()).collect();
    // Total = US + Canada = sum of the five leaves
    assert!((revised[0] - revised[1] - revised[2]).abs() < 1e-9 * revised[0]);
    assert!((revised[0] - revised[3..].iter().sum::<f64>()).abs() < 1e-9 * revised[0]);
    let run: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(run["nu"], 3);

    let rec = dir.path().join("reconciled.csv");
    let truth = fixture("truth.csv");
    let out = hiercast(
        &["evaluate", "--hierarchy", h, "--revised", rec.to_str().unwrap(), "--truth", truth.to_str().unwrap()],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("weighted error "));
}

#[test]
fn asymmetric_loss_picks_a_draw() {
    let dir = tempfile::tempdir().unwrap();
    let (h, p, b, l) = (fixture("hierarchy.json"), fixture("panel.csv"), fixture("base.csv"), fixture("loss.json"));
    let mut args = reconcile_args(h.to_str().unwrap(), p.to_str().unwrap(), b.to_str().unwrap());
    args.extend(["--loss", l.to_str().unwrap(), "--dump-draws"]);
    let out = hiercast(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(run["mode"], "draw-argmin");
    assert!(run["draw_index"].as_u64().unwrap() < 200);
    let draws = std::fs::read_to_string(dir.path().join("draws.csv")).unwrap();
    assert_eq!(draws.lines().count(), 201);
}

#[test]
fn bad_input_exits_one_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let h = fixture("hierarchy.json");
    let bad = dir.path().join("panel.csv");
    std::fs::write(&bad, "node_id,t,value\nTotal,1,abc\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = hiercast(&["accuracy", "--hierarchy", h.to_str().unwrap(), "--panel", bad.to_str().unwrap()], &out_dir);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("panel.csv"));
    assert!(!out_dir.exists() || std::fs::read_dir(&out_dir).unwrap().next().is_none());
}

#[test]
fn simulate_small_run_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = hiercast(&["simulate", "--setting", "2", "--datasets", "40", "--q", "q1"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.path().join("results_setting2.csv")).unwrap();
    assert!(table.starts_with("reconciliation,Q,BR,WLS,BU,TD,OLS\n"));
    assert!(dir.path().join("scores_setting2_q1.csv").exists());
}
