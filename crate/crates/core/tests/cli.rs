use std::fs;
use std::path::Path;

use cpa::cli::{cmd_build, cmd_compare, cmd_oracle, cmd_run, main_with_args, read_marginals, RunConfig};

const IDENTITY: &str = r#"
[model]
kind = "identity"
dim = 2

[partition]
kind = "uniform"
lower = [0.0, 0.0]
upper = [1.0, 1.0]
cells = [3, 2]

[automaton]
m = 4

[build]
counts = [8]
seed = 5
table = "f0.cpa"

[boundary]
kind = "deterministic"

[initial]
kind = "product"
sites = [
  [{ symbol = "0:1", weight = 0.5 }, { symbol = "2:0", weight = 0.5 }],
  [{ symbol = 3, weight = 1.0 }],
  [{ symbol = "1:1", weight = 0.2 }, { symbol = "2:1", weight = 0.8 }],
  [{ symbol = 0, weight = 1.0 }],
]

[run]
steps = 4
output = "run"

[oracle]
method = "mc"
runs = 300
seed = 2
output = "mc"
"#;

const AVERAGING: &str = r#"
[model]
kind = "averaging"

[partition]
kind = "rectilinear"
breakpoints = [[0.0, 0.183, 0.31, 0.4, 0.7, 1.0]]

[automaton]
m = 4

[build]
v = [0, 1]
counts = [10]
seed = 1
table = "avg.cpa"

[boundary]
kind = "deterministic"
right = [2]

[initial]
kind = "point"
symbols = [4, 4, 2]

[run]
steps = 2
output = "run"

[oracle]
method = "pb"
counts = [10]
seed = 1
output = "pb"
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn identity_run_reproduces_initial_marginals() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(&write_config(dir.path(), "id.toml", IDENTITY)).unwrap();
    let report = cmd_build(&cfg, None).unwrap();
    assert_eq!(report.explored_rows, 6);
    assert!(dir.path().join("f0.report.json").exists());
    let summary = cmd_run(&cfg, None).unwrap();
    assert_eq!(summary.mass_retained, 1.0);
    let first = fs::read(dir.path().join("run/step_00000.csv")).unwrap();
    for n in 1..=4 {
        assert_eq!(fs::read(dir.path().join(format!("run/step_{n:05}.csv"))).unwrap(), first);
    }
    let m = read_marginals(&dir.path().join("run/step_00004.csv")).unwrap();
    assert_eq!(m[&1][&vec![0, 1]], 0.5);
    assert_eq!(m[&3][&vec![2, 1]], 0.8);
    assert!(dir.path().join("run/summary.json").exists());
}

#[test]
fn pipeline_outputs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let cfg = RunConfig::load(&write_config(dir.path(), "avg.toml", AVERAGING)).unwrap();
        cmd_build(&cfg, None).unwrap();
        cmd_run(&cfg, None).unwrap();
        cmd_oracle(&cfg).unwrap();
    }
    for file in ["avg.cpa", "run/step_00002.csv", "pb/step_00002.csv"] {
        assert_eq!(fs::read(a.path().join(file)).unwrap(), fs::read(b.path().join(file)).unwrap(), "{file}");
    }
}

#[test]
fn monte_carlo_oracle_agrees_with_identity_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(&write_config(dir.path(), "id.toml", IDENTITY)).unwrap();
    cmd_build(&cfg, None).unwrap();
    cmd_run(&cfg, None).unwrap();
    let summary = cmd_oracle(&cfg).unwrap();
    assert_eq!(summary.runs, 300);
    let report = cmd_compare(&dir.path().join("run/step_00004.csv"), &dir.path().join("mc/step_00004.csv"), None).unwrap();
    assert_eq!(report.sites.len(), 4);
    // Deterministic sites match exactly; mixed sites within sampling noise.
    assert_eq!(report.sites[1].1, 0.0);
    assert!(report.max < 0.25, "{report:?}");
}

#[test]
fn compare_reports_zero_and_two() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    fs::write(&a, "site,symbol,probability\n1,0:0,1\n2,1:0,0.5\n2,1:1,0.5\n").unwrap();
    fs::write(&b, "site,symbol,probability\n1,2:0,1\n2,1:0,0.5\n2,0:1,0.5\n").unwrap();
    let same = cmd_compare(&a, &a, None).unwrap();
    assert_eq!(same.max, 0.0);
    let diff = cmd_compare(&a, &b, None).unwrap();
    assert_eq!(diff.sites, vec![(1, 2.0), (2, 1.0)]);
    assert_eq!(diff.mean, 1.5);
    let first = cmd_compare(&a, &b, Some(0)).unwrap();
    assert_eq!(first.sites, vec![(1, 2.0), (2, 1.0)]);
    let second = cmd_compare(&a, &b, Some(1)).unwrap();
    assert_eq!(second.sites, vec![(1, 0.0), (2, 0.0)]);
}

#[test]
fn compare_rejects_mismatched_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    fs::write(&a, "site,symbol,probability\n1,0:0,1\n").unwrap();
    fs::write(&b, "site,symbol,probability\n2,0:0,1\n").unwrap();
    assert_eq!(cmd_compare(&a, &b, None).unwrap_err().exit_code(), 2);
    fs::write(&b, "site,symbol,probability\n1,0,1\n").unwrap();
    assert_eq!(cmd_compare(&a, &b, None).unwrap_err().exit_code(), 2);
    fs::write(&b, "site;symbol\n").unwrap();
    assert_eq!(cmd_compare(&a, &b, None).unwrap_err().exit_code(), 4);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let mut all = vec!["cpa"];
        all.extend_from_slice(args);
        main_with_args(all)
    };
    let too_wide = AVERAGING.replace("m = 4", "m = 2");
    let cfg = write_config(dir.path(), "wide.toml", &too_wide);
    assert_eq!(run(&["build", cfg.to_str().unwrap()]), 2);
    let err = RunConfig::load(&cfg).unwrap_err();
    assert!(err.to_string().contains("1 + p + q + r + s"), "{err}");

    assert_eq!(run(&["run", dir.path().join("missing.toml").to_str().unwrap()]), 4);

    let cfg = write_config(dir.path(), "avg.toml", AVERAGING);
    assert_eq!(run(&["run", cfg.to_str().unwrap()]), 4);
    assert_eq!(run(&["build", cfg.to_str().unwrap()]), 0);
    assert_eq!(run(&["run", cfg.to_str().unwrap()]), 0);

    let mismatched = AVERAGING.replace("v = [0, 1]", "v = [0, 0]");
    let other = write_config(dir.path(), "other.toml", &mismatched);
    let table = dir.path().join("avg.cpa");
    assert_eq!(run(&["run", other.to_str().unwrap(), "--table", table.to_str().unwrap()]), 2);
    assert_eq!(run(&["frobnicate"]), 2);
}

#[test]
fn unexplored_preimage_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(&write_config(dir.path(), "id.toml", IDENTITY)).unwrap();
    cmd_build(&cfg, None).unwrap();
    let path = dir.path().join("f0.cpa");
    let table = cpa::translator::load_f0(&path).unwrap();
    let rows = table
        .rows()
        .map(|(code, row)| if code == 3 { None } else { row.map(<[_]>::to_vec) })
        .collect();
    let holed = cpa::translator::LocalFunction::from_rows(table.header().clone(), rows).unwrap();
    cpa::translator::save_f0(&holed, &path).unwrap();
    let err = cmd_run(&cfg, None).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("site 2, step 1"), "{err}");
}

#[test]
fn arsenate_tank_boundary_sits_on_equilibrium_cells() {
    let text = r#"
        [model]
        kind = "arsenate"

        [partition]
        kind = "uniform"
        lower = [0.0, 0.0]
        upper = [1.0, 100.0]
        cells = [5, 15]

        [automaton]
        m = 7

        [boundary]
        kind = "arsenate_tank"
        d_cells = [2, 3, 4]

        [initial]
        kind = "point"
        fill = "0:0"
    "#;
    let cfg = RunConfig::from_toml_str(text, Path::new(".")).unwrap();
    let partition = cfg.partition.build().unwrap();
    let flow = cfg.model.flow().unwrap();
    let grid = cfg.grid(flow.as_ref()).unwrap();
    let cpa::automaton::Boundary::WhiteNoise { left, .. } = cpa::cli::boundary_of(&cfg, &grid, &partition).unwrap() else {
        panic!("tank source is stochastic");
    };
    use cpa::partition::CellPartition;
    let cells: Vec<Vec<usize>> = left
        .support()
        .map(|c| partition.multi_index(cpa::partition::Symbol(c as usize)).unwrap())
        .collect();
    // A* = 100 d / (d + 0.0537) at d = 0.5, 0.7, 0.9 is 90.3, 92.9, 94.4.
    assert_eq!(cells, vec![vec![2, 13], vec![3, 13], vec![4, 14]]);
}
