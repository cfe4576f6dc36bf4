use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn base_config() -> Value {
    json!({
        "product": { "kind": "put", "strike": 100.0 },
        "market": { "spot": 100.0, "maturity": 1.0, "rate": 0.05, "sigma_low": 0.2, "sigma_high": 0.3 },
        "tree": { "n_steps": 60 },
        "pde": { "n_space": 80, "n_time": 40 },
        "crosscheck": { "tree_pde_tolerance": 0.05 },
        "decompose": { "path_budget": 729, "sample_paths": 8 }
    })
}

struct Run {
    output: Output,
    dir: PathBuf,
}

impl Run {
    fn code(&self) -> i32 {
        self.output.status.code().expect("exit code")
    }

    fn stderr(&self) -> String {
        String::from_utf8_lossy(&self.output.stderr).into_owned()
    }

    fn read(&self, name: &str) -> String {
        fs::read_to_string(self.dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
    }

    /// Data rows of a CSV, header lines dropped.
    fn rows(&self, name: &str) -> Vec<Vec<String>> {
        self.read(name)
            .lines()
            .skip(2)
            .map(|l| l.split(',').map(str::to_string).collect())
            .collect()
    }
}

fn knight(tmp: &TempDir, config: &Value, command: &str, extra: &[&str]) -> Run {
    let cfg_path = tmp.path().join("config.json");
    fs::write(&cfg_path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    let dir = tmp.path().join("out");
    run_with(&cfg_path, &dir, command, extra)
}

fn run_with(cfg_path: &Path, dir: &Path, command: &str, extra: &[&str]) -> Run {
    let output = Command::new(env!("CARGO_BIN_EXE_knight"))
        .arg(command)
        .arg("--config")
        .arg(cfg_path)
        .arg("--out-dir")
        .arg(dir)
        .args(extra)
        .output()
        .unwrap();
    Run {
        output,
        dir: dir.to_path_buf(),
    }
}

fn column(run: &Run, file: &str, name: &str) -> usize {
    let text = run.read(file);
    let header = text.lines().nth(1).unwrap();
    header.split(',').position(|c| c == name).unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn price_writes_csv_with_schema_header() {
    let tmp = TempDir::new().unwrap();
    let run = knight(&tmp, &base_config(), "price", &[]);
    assert_eq!(run.code(), 0, "{}", run.stderr());
    let text = run.read("price.csv");
    assert!(text.starts_with("# schema=1 kind=price\n"));
    let rows = run.rows("price.csv");
    assert_eq!(rows.len(), 2);
    for row in &rows {
        let bid: f64 = row[1].parse().unwrap();
        let ask: f64 = row[2].parse().unwrap();
        assert!(bid <= ask);
    }
    assert!(run.dir.join("price.json").exists());
    assert!(run.dir.join("effective_config.json").exists());
}

#[test]
fn missing_strike_is_a_config_error_naming_the_field() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = base_config();
    cfg["product"].as_object_mut().unwrap().remove("strike");
    let run = knight(&tmp, &cfg, "price", &[]);
    assert_eq!(run.code(), 2);
    assert!(run.stderr().contains("product.strike"), "{}", run.stderr());
}

#[test]
fn unwritable_output_directory_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let cfg_path = tmp.path().join("config.json");
    fs::write(&cfg_path, base_config().to_string()).unwrap();
    let run = run_with(&cfg_path, &blocker.join("sub"), "price", &[]);
    assert_eq!(run.code(), 2, "{}", run.stderr());
}

#[test]
fn crosscheck_passes_and_zero_tolerance_fails() {
    let tmp = TempDir::new().unwrap();
    let run = knight(&tmp, &base_config(), "crosscheck", &[]);
    assert_eq!(run.code(), 0, "{}", run.stderr());
    let names: Vec<String> = run.rows("crosscheck.csv").into_iter().map(|r| r[0].clone()).collect();
    for expected in ["oracle_ask", "oracle_bid", "tree_pde_ask", "tree_pde_bid", "gdm_local"] {
        assert!(names.iter().any(|n| n == expected), "missing {expected}");
    }
    let run = knight(&tmp, &base_config(), "crosscheck", &["--tolerance", "0"]);
    assert_eq!(run.code(), 1);
    let pass = column(&run, "crosscheck.csv", "pass");
    assert!(run.rows("crosscheck.csv").iter().any(|r| r[pass] == "false"));
}

#[test]
fn oversized_oracle_is_a_numerical_error() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = base_config();
    cfg["crosscheck"]["oracle_steps"] = json!(6);
    let run = knight(&tmp, &cfg, "crosscheck", &[]);
    assert_eq!(run.code(), 3, "{}", run.stderr());
}

#[test]
fn call_without_rates_has_no_exercise_region() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = base_config();
    cfg["product"]["kind"] = json!("call");
    cfg["market"]["rate"] = json!(0.0);
    let run = knight(&tmp, &cfg, "boundary", &[]);
    assert_eq!(run.code(), 0, "{}", run.stderr());
    for name in ["boundary_tree_ask.csv", "boundary_tree_bid.csv", "boundary_pde_ask.csv", "boundary_pde_bid.csv"] {
        assert!(run.rows(name).is_empty(), "{name} has rows");
    }
}

#[test]
fn single_step_boundary_has_at_most_one_row() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = base_config();
    cfg["tree"]["n_steps"] = json!(1);
    let run = knight(&tmp, &cfg, "boundary", &["--engine", "tree"]);
    assert_eq!(run.code(), 0, "{}", run.stderr());
    assert!(run.rows("boundary_tree_ask.csv").len() <= 1);
    assert!(run.rows("boundary_tree_bid.csv").len() <= 1);
}

#[test]
fn put_boundary_rises_towards_maturity() {
    let tmp = TempDir::new().unwrap();
    let run = knight(&tmp, &base_config(), "boundary", &["--engine", "tree"]);
    assert_eq!(run.code(), 0, "{}", run.stderr());
    let rows = run.rows("boundary_tree_ask.csv");
    assert!(!rows.is_empty());
    let prices: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(prices.iter().all(|&p| p < 100.0));
    assert!(prices.first().unwrap() <= prices.last().unwrap());
}

#[test]
fn effective_config_reproduces_outputs() {
    let tmp = TempDir::new().unwrap();
    let first = knight(&tmp, &base_config(), "crosscheck", &[]);
    assert_eq!(first.code(), 0, "{}", first.stderr());
    let effective = first.dir.join("effective_config.json");
    let again_dir = tmp.path().join("again");
    let second = run_with(&effective, &again_dir, "crosscheck", &[]);
    assert_eq!(second.code(), 0, "{}", second.stderr());
    assert_eq!(first.read("crosscheck.csv"), second.read("crosscheck.csv"));
    let p1 = knight(&tmp, &base_config(), "price", &[]);
    let p2 = run_with(&p1.dir.join("effective_config.json"), &again_dir, "price", &[]);
    assert_eq!(p1.read("price.csv"), p2.read("price.csv"));
}

#[test]
fn degenerate_volatility_has_zero_spread() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = base_config();
    cfg["market"]["sigma_low"] = json!(0.25);
    cfg["market"]["sigma_high"] = json!(0.25);
    let run = knight(&tmp, &cfg, "price", &["--engine", "tree"]);
    assert_eq!(run.code(), 0, "{}", run.stderr());
    let row = &run.rows("price.csv")[0];
    let bid: f64 = row[1].parse().unwrap();
    let ask: f64 = row[2].parse().unwrap();
    assert!((ask - bid).abs() <= 1e-12 * ask, "{bid} {ask}");
}

#[test]
fn decompose_paths_have_nondecreasing_consumption() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = base_config();
    cfg["tree"]["n_steps"] = json!(5);
    let run = knight(&tmp, &cfg, "decompose", &[]);
    assert_eq!(run.code(), 0, "{}", run.stderr());
    assert_eq!(run.rows("decompose_nodes.csv").len(), 36);
    let rows = run.rows("decompose_paths.csv");
    assert_eq!(rows.len(), 243 * 6);
    let (a, x, m) = (
        column(&run, "decompose_paths.csv", "A"),
        column(&run, "decompose_paths.csv", "X"),
        column(&run, "decompose_paths.csv", "M"),
    );
    for path in rows.chunks(6) {
        let a_vals: Vec<f64> = path.iter().map(|r| r[a].parse().unwrap()).collect();
        assert_eq!(a_vals[0], 0.0);
        assert!(a_vals.windows(2).all(|w| w[1] >= w[0]));
        for r in path {
            let (xv, mv, av): (f64, f64, f64) = (r[x].parse().unwrap(), r[m].parse().unwrap(), r[a].parse().unwrap());
            assert!((mv - av - xv).abs() <= 1e-12 * xv.abs().max(1.0));
        }
    }
}

#[test]
fn sampled_paths_are_used_above_the_budget() {
    let tmp = TempDir::new().unwrap();
    let run = knight(&tmp, &base_config(), "decompose", &[]);
    assert_eq!(run.code(), 0, "{}", run.stderr());
    assert_eq!(run.rows("decompose_paths.csv").len(), 8 * 61);
}

#[test]
fn zero_payoff_decomposes_to_zero() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = base_config();
    cfg["product"] = json!({ "kind": "tabulated", "knots": [[50.0, 0.0], [150.0, 0.0]] });
    cfg["tree"]["n_steps"] = json!(4);
    let run = knight(&tmp, &cfg, "decompose", &[]);
    assert_eq!(run.code(), 0, "{}", run.stderr());
    let (a, m) = (column(&run, "decompose_paths.csv", "A"), column(&run, "decompose_paths.csv", "M"));
    for r in run.rows("decompose_paths.csv") {
        assert_eq!(r[a].parse::<f64>().unwrap(), 0.0);
        assert_eq!(r[m].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn csv_numbers_never_use_exponents() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = base_config();
    cfg["tree"]["n_steps"] = json!(4);
    let run = knight(&tmp, &cfg, "decompose", &[]);
    assert_eq!(run.code(), 0, "{}", run.stderr());
    for line in run.read("decompose_nodes.csv").lines().skip(2) {
        assert!(!line.contains('e') && !line.contains('E'), "{line}");
    }
}
