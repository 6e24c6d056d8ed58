use std::path::Path;
use std::process::{Command, Output};

use manet_sim::config::ScenarioConfig;
use manet_sim::harness::{self, Grid, HarnessError, FIGURES};
use manet_sim::metrics::{mean, sample_sd};
use manet_sim::{Protocol, Strategy};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_manet-sim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn short() -> ScenarioConfig {
    let mut c = ScenarioConfig::default();
    c.scenario.duration = 20.0;
    c.scenario.nodes = 12;
    c
}

#[test]
fn run_twice_prints_identical_rows() {
    let args = [
        "run",
        "--nodes",
        "20",
        "--duration",
        "30",
        "--strategy",
        "second-chance",
    ];
    let (a, b) = (bin(&args), bin(&args));
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("protocol,strategy,nodes,seed,"));
}

#[test]
fn invalid_config_exits_nonzero_with_field_name() {
    let out = bin(&["run", "--nodes", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("scenario.nodes"));

    let out = bin(&["run", "--adversary-fraction", "1.0", "--duration", "5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("adversary.fraction"));
}

#[test]
fn config_file_is_read_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    std::fs::write(
        &path,
        "[scenario]\nprotocol = \"dsr\"\nnodes = 15\nduration = 10.0\n",
    )
    .unwrap();
    let out = bin(&["run", "--config", path.to_str().unwrap(), "--nodes", "18"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let row = text.lines().nth(1).unwrap();
    assert!(row.starts_with("dsr,none,18,1,10,"), "{row}");

    std::fs::write(&path, "[scenario]\nnodez = 3\n").unwrap();
    let out = bin(&["run", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nodez"));
}

#[test]
fn unwritable_sweep_output_fails_before_running() {
    let out = bin(&["sweep", "--out", "/nonexistent-dir/sweep.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot write"));
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .collect()
}

#[test]
fn full_grid_has_one_row_per_point_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid.csv");
    let status = bin(&[
        "sweep",
        "--duration",
        "5",
        "--seeds",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(data_lines(&text).len(), 180);
    let summary = harness::read_summary(&text).unwrap();
    assert_eq!(summary.len(), 18);
    assert!(summary.iter().all(|s| s["runs"] == "10"));
}

#[test]
fn single_point_sweep_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let base = short();
    harness::sweep(&base, &Grid::single(&base), &a).unwrap();
    harness::sweep(&base, &Grid::single(&base), &b).unwrap();
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert_eq!(data_lines(&text).len(), 1);
    assert_eq!(harness::read_summary(&text).unwrap().len(), 1);
}

fn sweep_both(dir: &Path) -> std::path::PathBuf {
    let base = short();
    let grid = Grid {
        protocols: vec![Protocol::Aodv, Protocol::Dsr],
        strategies: vec![Strategy::None, Strategy::Eliminate, Strategy::SecondChance],
        nodes: vec![10, 14],
        seeds: vec![1, 2, 3],
        ..Grid::single(&base)
    };
    let path = dir.join("sweep.csv");
    harness::sweep(&base, &grid, &path).unwrap();
    path
}

#[test]
fn figures_have_one_row_per_node_count_and_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let csv = sweep_both(dir.path());
    let out = harness::figures(&csv, &dir.path().join("figs")).unwrap();
    assert!(out.warnings.is_empty(), "{:?}", out.warnings);
    assert_eq!(out.files.len(), 4);
    for (f, path) in FIGURES.iter().zip(&out.files) {
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("# "), "{}", f.file);
        assert!(text.contains("assumptions:"));
        assert_eq!(data_lines(&text).len(), 4, "{}", f.file);
    }
}

#[test]
fn figure_means_match_an_independent_recount_and_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let csv = sweep_both(dir.path());
    let text = std::fs::read_to_string(&csv).unwrap();

    // Recount straight from the CSV rows.
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    let col = |n: &str| headers.iter().position(|h| h == n).unwrap();
    let (p, s, n, pdr) = (col("protocol"), col("strategy"), col("nodes"), col("pdr"));
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let values = |proto: &str, strat: &str, nodes: &str| -> Vec<f64> {
        rows.iter()
            .filter(|r| &r[p] == proto && &r[s] == strat && &r[n] == nodes)
            .filter_map(|r| r[pdr].parse().ok())
            .collect()
    };

    let out = harness::figures(&csv, &dir.path().join("figs")).unwrap();
    let fig1 = std::fs::read_to_string(&out.files[0]).unwrap();
    let summary = harness::read_summary(&text).unwrap();
    for line in data_lines(&fig1) {
        let f: Vec<&str> = line.split('\t').collect();
        let xs = values(f[0], "none", f[1]);
        assert_eq!(f[3], mean(&xs).unwrap().to_string());
        assert_eq!(f[4], sample_sd(&xs).unwrap().to_string());
        let s = summary
            .iter()
            .find(|s| s["protocol"] == f[0] && s["strategy"] == "none" && s["nodes"] == f[1])
            .unwrap();
        assert_eq!(s["pdr_mean"], f[3]);
        assert_eq!(s["pdr_sd"], f[4]);
    }
}

#[test]
fn missing_protocol_series_is_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let base = short();
    let grid = Grid {
        strategies: vec![Strategy::None, Strategy::Eliminate],
        seeds: vec![1, 2],
        ..Grid::single(&base)
    };
    let csv = dir.path().join("aodv.csv");
    harness::sweep(&base, &grid, &csv).unwrap();
    let out = harness::figures(&csv, dir.path()).unwrap();
    assert_eq!(out.files.len(), 4);
    assert!(
        out.warnings.iter().any(|w| w.contains("dsr")),
        "{:?}",
        out.warnings
    );
    let fig = std::fs::read_to_string(&out.files[0]).unwrap();
    assert!(data_lines(&fig).iter().all(|l| l.starts_with("aodv\t")));
}

#[test]
fn missing_columns_are_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "protocol,strategy,nodes\naodv,none,30\n").unwrap();
    match harness::figures(&csv, dir.path()) {
        Err(HarnessError::Schema(m)) => assert!(m.contains("pdr") && m.contains("overhead"), "{m}"),
        other => panic!("{other:?}"),
    }
    let out = bin(&[
        "figures",
        csv.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema error"));
}

#[test]
fn rows_echo_every_varied_parameter() {
    let mut a = short();
    a.adversary.fraction = 0.25;
    let mut b = a.clone();
    b.trust.penalty = 0.3;
    let (ra, rb) = (
        harness::run_scenario(&a).unwrap(),
        harness::run_scenario(&b).unwrap(),
    );
    if ra.metric_values() != rb.metric_values() {
        let echo = |r: &harness::ResultRow| r.config.echo();
        assert_ne!(echo(&ra), echo(&rb));
    }
    let header = harness::ResultRow::header();
    assert!(header.contains(&"penalty") && header.contains(&"adversary_fraction"));
}
