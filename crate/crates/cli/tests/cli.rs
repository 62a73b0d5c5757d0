use std::path::Path;
use std::process::{Command, Output};

fn stairprune(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stairprune")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) {
    let out = stairprune(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn pipeline(dir: &Path) {
    ok(&["sweep", "--network", "resnet50", "--layer", "ResNet.L16", "--min-channels", "64", "--out", "cfg.csv"], dir);
    ok(&["emulate", "--input", "cfg.csv", "--jitter", "0.01", "--seed", "3", "--out", "meas.csv"], dir);
    ok(&["ingest", "--input", "meas.csv", "--out", "curves.csv"], dir);
    ok(&["analyze", "--input", "curves.csv", "--regimes", "2", "--out", "analysis"], dir);
    ok(&["advise", "--input", "curves.csv", "--budget-ms", "15", "--out", "advice"], dir);
    ok(&["report", "--input", "analysis/speedups.csv", "--format", "csv", "--out", "heatmap.csv"], dir);
    ok(&["report", "--input", "analysis/speedups.csv", "--format", "svg", "--out", "heatmap.svg"], dir);
}

const OUTPUTS: [&str; 11] = [
    "cfg.csv",
    "meas.csv",
    "curves.csv",
    "analysis/plateaus.csv",
    "analysis/optimal_points.csv",
    "analysis/speedups.csv",
    "analysis/regimes.csv",
    "advice/recommendations.csv",
    "advice/report.txt",
    "heatmap.csv",
    "heatmap.svg",
];

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path());
    pipeline(b.path());
    for name in OUTPUTS {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(!x.is_empty(), "{name} is empty");
        assert_eq!(x, y, "{name} differs");
    }
}

#[test]
fn layer16_plateau_ends_at_96() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    let plateaus = std::fs::read_to_string(dir.path().join("analysis/plateaus.csv")).unwrap();
    let edges: Vec<(u32, u32)> = plateaus
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    assert!(edges.contains(&(93, 96)), "{edges:?}");
}

#[test]
fn empty_curve_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.csv"), "").unwrap();
    let out = stairprune(&["analyze", "--input", "empty.csv", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn budget_below_minimum_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.csv"), "layer_id,out_channels,latency_ms\nl,2,5.0\nl,1,4.0\n").unwrap();
    let out = stairprune(&["advise", "--input", "c.csv", "--budget-ms", "1.0"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("budget"));
}

#[test]
fn negative_latency_is_reported_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("m.csv"),
        "layer_id,out_channels,run_index,latency_ms\nl16,96,0,1.0\nl16,96,1,-1.0\n",
    )
    .unwrap();
    let out = stairprune(&["ingest", "--input", "m.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(stairprune(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(stairprune(&["sweep", "--layer", "x"], dir.path()).status.code(), Some(1));
    assert_eq!(stairprune(&["emulate", "--input", "a", "--method", "cuda"], dir.path()).status.code(), Some(1));
    assert_eq!(stairprune(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn unknown_network_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = stairprune(&["sweep", "--network", "lenet", "--layer", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pareto_edge_is_the_default_objective() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.csv"),
        "layer_id,out_channels,latency_ms\nl,4,20.0\nl,3,10.0\nl,2,10.0\nl,1,9.0\n",
    )
    .unwrap();
    let out = stairprune(&["advise", "--input", "c.csv"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("PARETO_EDGE"), "{text}");
}
