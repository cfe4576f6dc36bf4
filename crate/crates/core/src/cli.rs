//! `knight` command line: price, decompose, boundary, crosscheck.
//!
//! Exit codes: 0 success, 1 a crosscheck row failed its tolerance, 2 bad
//! configuration or unwritable output, 3 numerical failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::gcore::{GParams, Side};
use crate::gdm::{gdm_decompose, GdmDecomposition};
use crate::lattice::{lattice_paths, Lattice, Payoff};
use crate::oracle::brute_force_value;
use crate::pde::{
    pde_solve_european, pde_solve_penalized, pde_solve_projected, BoundaryKind, IterationControl, OperatorForm,
    PdeGrid, PdeSolution, PenaltySchedule,
};
use crate::stopping::{
    default_boundary_tol, exercise_boundary, literal_bid_surface, value_surface, Exercise,
};

pub const SCHEMA: &str = "schema=1";

#[derive(Debug, Parser)]
#[command(name = "knight", version, about = "Bid/ask pricing of American claims under volatility uncertainty")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `engine` in the configuration.
    #[arg(long, global = true, value_enum)]
    pub engine: Option<Engine>,
    /// Overrides `outputs.dir` in the configuration.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Accepted for scripting compatibility; every engine is deterministic.
    #[arg(long, global = true)]
    pub seedless: bool,
    /// Absolute tolerance applied to every crosscheck row.
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Bid and ask at the root from the selected engines.
    Price,
    /// Martingale and consumption parts of the value process, node-wise and along paths.
    Decompose,
    /// Critical exercise price per time slice.
    Boundary,
    /// Oracle, tree, PDE and decomposition consistency checks.
    Crosscheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Tree,
    Pde,
    #[default]
    Both,
}

impl Engine {
    fn tree(self) -> bool {
        self != Engine::Pde
    }

    fn pde(self) -> bool {
        self != Engine::Tree
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProductKind {
    Put,
    Call,
    Tabulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ExerciseStyle {
    #[default]
    American,
    European,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductConfig {
    pub kind: ProductKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strike: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knots: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub exercise: ExerciseStyle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub spot: f64,
    pub maturity: f64,
    pub rate: f64,
    pub sigma_low: f64,
    pub sigma_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreeConfig {
    pub n_steps: usize,
    pub stretch: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            n_steps: 500,
            stretch: crate::lattice::DEFAULT_STRETCH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PdeMethodChoice {
    #[default]
    Penalized,
    Projected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OperatorChoice {
    #[default]
    Dynamics,
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryChoice {
    #[default]
    Payoff,
    Asymptotic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdeConfig {
    pub n_space: usize,
    pub n_time: usize,
    pub method: PdeMethodChoice,
    pub operator: OperatorChoice,
    pub boundary: BoundaryChoice,
    pub max_inner: usize,
    pub inner_tol: f64,
    pub allow_unconverged: bool,
}

impl Default for PdeConfig {
    fn default() -> Self {
        let control = IterationControl::default();
        PdeConfig {
            n_space: 400,
            n_time: 400,
            method: PdeMethodChoice::Penalized,
            operator: OperatorChoice::Dynamics,
            boundary: BoundaryChoice::Payoff,
            max_inner: control.max_inner,
            inner_tol: control.inner_tol,
            allow_unconverged: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub epsilons: Vec<f64>,
    pub delta: Option<f64>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let s = PenaltySchedule::default();
        ScheduleConfig {
            epsilons: s.epsilons,
            delta: s.delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrosscheckConfig {
    /// Lattice size for the exhaustive oracle rows.
    pub oracle_steps: usize,
    pub oracle_tolerance: f64,
    /// Tree against PDE, as a fraction of the payoff scale.
    pub tree_pde_tolerance: f64,
    /// Penalized against projected PDE, as a fraction of the payoff scale;
    /// `null` skips the row.
    pub penalized_projected_tolerance: Option<f64>,
    pub gdm_tolerance: f64,
}

impl Default for CrosscheckConfig {
    fn default() -> Self {
        CrosscheckConfig {
            oracle_steps: 3,
            oracle_tolerance: 1e-10,
            tree_pde_tolerance: 0.005,
            penalized_projected_tolerance: Some(0.001),
            gdm_tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QuoteSide {
    #[default]
    Ask,
    Bid,
}

impl QuoteSide {
    fn side(self) -> Side {
        match self {
            QuoteSide::Ask => Side::Upper,
            QuoteSide::Bid => Side::Lower,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecomposeConfig {
    pub side: QuoteSide,
    /// Emit every path when there are at most this many.
    pub path_budget: usize,
    /// Otherwise emit this many sampled paths.
    pub sample_paths: usize,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        DecomposeConfig {
            side: QuoteSide::Ask,
            path_budget: 729,
            sample_paths: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("knight-out") }
    }
}

/// Whole run configuration, as read from JSON and echoed back after
/// command-line overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub engine: Engine,
    pub product: ProductConfig,
    pub market: MarketConfig,
    #[serde(default)]
    pub tree: TreeConfig,
    #[serde(default)]
    pub pde: PdeConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub crosscheck: CrosscheckConfig,
    #[serde(default)]
    pub decompose: DecomposeConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
}

#[derive(Debug)]
pub enum CliError {
    Config { field: String, message: String },
    Numerical(Error),
    Tolerance(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Tolerance(_) => 1,
            CliError::Config { .. } => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn config(field: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config { field, message } => write!(f, "config error: {field}: {message}"),
            CliError::Numerical(e) => write!(f, "numerical error: {e}"),
            CliError::Tolerance(rows) => write!(f, "tolerance failure: {}", rows.join(", ")),
        }
    }
}

/// Engine errors raised by bad inputs are configuration errors.
fn engine_error(field: &str, e: Error) -> CliError {
    if e.is_numerical() {
        CliError::Numerical(e)
    } else {
        CliError::config(field, e.to_string())
    }
}

/// Validated, ready-to-run inputs.
struct Plan {
    config: RunConfig,
    payoff: Payoff,
    params: GParams,
    exercise: Exercise,
    out_dir: PathBuf,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| {
            let message = e.to_string();
            let field = field_from_serde(&message);
            CliError::config(&field, message)
        })
    }

    fn payoff(&self) -> Result<Payoff, CliError> {
        let p = &self.product;
        let strike = || {
            p.strike
                .ok_or_else(|| CliError::config("product.strike", "required for put and call"))
        };
        let payoff = match p.kind {
            ProductKind::Put => Payoff::put(strike()?),
            ProductKind::Call => Payoff::call(strike()?),
            ProductKind::Tabulated => Payoff::tabulated(
                p.knots
                    .clone()
                    .ok_or_else(|| CliError::config("product.knots", "required for tabulated payoffs"))?,
            ),
        };
        let field = match p.kind {
            ProductKind::Tabulated => "product.knots",
            _ => "product.strike",
        };
        payoff.map_err(|e| CliError::config(field, e.to_string()))
    }

    fn validate(self) -> Result<Plan, CliError> {
        let payoff = self.payoff()?;
        let m = &self.market;
        positive("market.spot", m.spot)?;
        positive("market.maturity", m.maturity)?;
        if !m.rate.is_finite() {
            return Err(CliError::config("market.rate", "must be finite"));
        }
        if !(m.sigma_low.is_finite() && m.sigma_low >= 0.0) {
            return Err(CliError::config("market.sigma_low", "must be >= 0"));
        }
        if !(m.sigma_high.is_finite() && m.sigma_high >= m.sigma_low) {
            return Err(CliError::config("market.sigma_high", "must be >= sigma_low"));
        }
        let params = GParams::new(m.sigma_low, m.sigma_high, m.rate).map_err(|e| CliError::config("market", e.to_string()))?;
        if self.tree.n_steps == 0 {
            return Err(CliError::config("tree.n_steps", "must be >= 1"));
        }
        positive("tree.stretch", self.tree.stretch)?;
        if self.pde.n_space < 2 {
            return Err(CliError::config("pde.n_space", "must be >= 2"));
        }
        if self.pde.n_time == 0 {
            return Err(CliError::config("pde.n_time", "must be >= 1"));
        }
        if self.pde.max_inner == 0 {
            return Err(CliError::config("pde.max_inner", "must be >= 1"));
        }
        positive("pde.inner_tol", self.pde.inner_tol)?;
        self.schedule()
            .validate()
            .map_err(|e| CliError::config("schedule", e.to_string()))?;
        if self.crosscheck.oracle_steps == 0 {
            return Err(CliError::config("crosscheck.oracle_steps", "must be >= 1"));
        }
        for (field, v) in [
            ("crosscheck.oracle_tolerance", Some(self.crosscheck.oracle_tolerance)),
            ("crosscheck.tree_pde_tolerance", Some(self.crosscheck.tree_pde_tolerance)),
            ("crosscheck.penalized_projected_tolerance", self.crosscheck.penalized_projected_tolerance),
            ("crosscheck.gdm_tolerance", Some(self.crosscheck.gdm_tolerance)),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(CliError::config(field, "must be >= 0"));
                }
            }
        }
        let exercise = match self.product.exercise {
            ExerciseStyle::American => Exercise::American,
            ExerciseStyle::European => Exercise::European,
        };
        let out_dir = self.outputs.dir.clone();
        Ok(Plan {
            config: self,
            payoff,
            params,
            exercise,
            out_dir,
        })
    }

    fn schedule(&self) -> PenaltySchedule {
        PenaltySchedule {
            epsilons: self.schedule.epsilons.clone(),
            delta: self.schedule.delta,
            control: self.control(),
        }
    }

    fn control(&self) -> IterationControl {
        IterationControl {
            max_inner: self.pde.max_inner,
            inner_tol: self.pde.inner_tol,
            allow_unconverged: self.pde.allow_unconverged,
        }
    }
}

fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(CliError::config(field, "must be > 0"))
    }
}

/// Best-effort field name from a serde message such as "missing field `strike`".
fn field_from_serde(message: &str) -> String {
    message
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "config".to_string())
}

impl Plan {
    fn lattice(&self, n_steps: usize) -> Result<Lattice, CliError> {
        let m = &self.config.market;
        Lattice::builder(m.spot, m.maturity, n_steps, self.params)
            .stretch(self.config.tree.stretch)
            .build()
            .map_err(|e| engine_error("tree", e))
    }

    fn grid(&self) -> Result<PdeGrid, CliError> {
        let m = &self.config.market;
        let p = &self.config.pde;
        let grid = PdeGrid::new(m.spot, m.maturity, p.n_space, p.n_time, self.params).map_err(|e| engine_error("pde", e))?;
        Ok(grid
            .operator_form(match p.operator {
                OperatorChoice::Dynamics => OperatorForm::Dynamics,
                OperatorChoice::Literal => OperatorForm::Literal,
            })
            .boundary_kind(match p.boundary {
                BoundaryChoice::Payoff => BoundaryKind::Payoff,
                BoundaryChoice::Asymptotic => BoundaryKind::Asymptotic,
            }))
    }

    fn pde_solve(&self, side: Side, method: PdeMethodChoice) -> Result<PdeSolution, CliError> {
        let grid = self.grid()?;
        let control = self.config.control();
        let solved = match (self.exercise, method) {
            (Exercise::European, _) => pde_solve_european(&grid, &self.payoff, side, &control),
            (Exercise::American, PdeMethodChoice::Penalized) => {
                pde_solve_penalized(&grid, &self.payoff, &self.config.schedule(), side)
            }
            (Exercise::American, PdeMethodChoice::Projected) => pde_solve_projected(&grid, &self.payoff, side, &control),
        };
        solved.map_err(|e| engine_error("pde", e))
    }

    fn tree_quotes(&self, lattice: &Lattice) -> Result<TreeQuotes, CliError> {
        let err = |e| engine_error("tree", e);
        let ask = value_surface(lattice, &self.payoff, Side::Upper, self.exercise).map_err(err)?;
        let bid = value_surface(lattice, &self.payoff, Side::Lower, self.exercise).map_err(err)?;
        let literal = match self.exercise {
            Exercise::American => literal_bid_surface(lattice, &self.payoff).map_err(err)?.root(),
            Exercise::European => bid.root(),
        };
        Ok(TreeQuotes {
            bid: bid.root(),
            ask: ask.root(),
            literal_bid: literal,
        })
    }

    fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.out_dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::config("outputs.dir", format!("{}: {e}", path.display())))
    }
}

struct TreeQuotes {
    bid: f64,
    ask: f64,
    literal_bid: f64,
}

fn prepare_out_dir(dir: &Path) -> Result<(), CliError> {
    let fail = |e: std::io::Error| CliError::config("outputs.dir", format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(fail)?;
    let probe = dir.join(".knight-write-probe");
    fs::write(&probe, b"").map_err(fail)?;
    fs::remove_file(&probe).map_err(fail)?;
    Ok(())
}

/// Formats a number for CSV output; `Display` for `f64` is the shortest
/// round-trip form and never uses an exponent.
fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "nan".to_string()
    }
}

fn csv_header(kind: &str, columns: &str) -> String {
    format!("# {SCHEMA} kind={kind}\n{columns}\n")
}

/// Parses arguments, runs the command, prints errors, and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            print!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("knight: {e}");
            e.exit_code()
        }
    }
}

/// Runs one command and returns the human-readable summary.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("--config", "a JSON configuration file is required"))?;
    let text = fs::read_to_string(path).map_err(|e| CliError::config("--config", format!("{}: {e}", path.display())))?;
    let mut config = RunConfig::from_json(&text)?;
    if let Some(engine) = cli.engine {
        config.engine = engine;
    }
    if let Some(dir) = &cli.out_dir {
        config.outputs.dir = dir.clone();
    }
    if let Some(t) = cli.tolerance {
        if !(t.is_finite() && t >= 0.0) {
            return Err(CliError::config("--tolerance", "must be >= 0"));
        }
    }
    let plan = config.validate()?;
    prepare_out_dir(&plan.out_dir)?;
    let effective = serde_json::to_string_pretty(&plan.config).expect("config serializes");
    plan.write("effective_config.json", &(effective + "\n"))?;
    match cli.command {
        Command::Price => cmd_price(&plan),
        Command::Decompose => cmd_decompose(&plan),
        Command::Boundary => cmd_boundary(&plan),
        Command::Crosscheck => cmd_crosscheck(&plan, cli.tolerance),
    }
}

fn cmd_price(plan: &Plan) -> Result<String, CliError> {
    let started = Instant::now();
    let engine = plan.config.engine;
    let tree = if engine.tree() {
        Some(plan.tree_quotes(&plan.lattice(plan.config.tree.n_steps)?)?)
    } else {
        None
    };
    let pde = if engine.pde() {
        let method = plan.config.pde.method;
        let ask = plan.pde_solve(Side::Upper, method)?;
        let bid = plan.pde_solve(Side::Lower, method)?;
        Some((bid.root_value(), ask.root_value(), ask.converged() && bid.converged()))
    } else {
        None
    };
    let gap = match (&tree, &pde) {
        (Some(t), Some(p)) => Some((t.ask - p.1).abs()),
        _ => None,
    };
    let gap_cell = gap.map(num).unwrap_or_default();

    let mut csv = csv_header("price", "engine,bid,ask,literal_bid,tree_pde_gap");
    let mut summary = String::new();
    let mut json = serde_json::Map::new();
    if let Some(t) = &tree {
        let _ = writeln!(csv, "tree,{},{},{},{}", num(t.bid), num(t.ask), num(t.literal_bid), gap_cell);
        let _ = writeln!(
            summary,
            "tree  bid {:.6}  ask {:.6}  literal bid {:.6}",
            t.bid, t.ask, t.literal_bid
        );
        json.insert(
            "tree".into(),
            serde_json::json!({ "bid": t.bid, "ask": t.ask, "literal_bid": t.literal_bid, "n_steps": plan.config.tree.n_steps }),
        );
    }
    if let Some((bid, ask, converged)) = pde {
        let _ = writeln!(csv, "pde,{},{},,{}", num(bid), num(ask), gap_cell);
        let _ = writeln!(summary, "pde   bid {bid:.6}  ask {ask:.6}{}", if converged { "" } else { "  (unconverged)" });
        json.insert(
            "pde".into(),
            serde_json::json!({ "bid": bid, "ask": ask, "converged": converged }),
        );
    }
    if let Some(g) = gap {
        let _ = writeln!(summary, "tree-pde ask gap {g:.6}");
        json.insert("tree_pde_gap".into(), serde_json::json!(g));
    }
    json.insert("runtime_seconds".into(), serde_json::json!(started.elapsed().as_secs_f64()));
    plan.write("price.csv", &csv)?;
    plan.write("price.json", &(serde_json::to_string_pretty(&json).expect("json") + "\n"))?;
    Ok(summary)
}

fn decomposition(plan: &Plan, lattice: &Lattice) -> Result<GdmDecomposition, CliError> {
    let side = plan.config.decompose.side.side();
    let surface = value_surface(lattice, &plan.payoff, side, plan.exercise).map_err(|e| engine_error("tree", e))?;
    gdm_decompose(&surface, lattice).map_err(|e| engine_error("decompose", e))
}

/// Move sequences to emit: all of them within the budget, otherwise a
/// fixed sample where path `p` is drawn from a generator seeded with `p`.
fn emitted_paths(n: usize, budget: usize, samples: usize) -> Vec<Vec<i8>> {
    let total = 3f64.powi(n as i32);
    if total <= budget as f64 {
        return lattice_paths(n).collect();
    }
    (0..samples)
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(p as u64);
            (0..n).map(|_| rng.random_range(-1i8..=1)).collect()
        })
        .collect()
}

fn cmd_decompose(plan: &Plan) -> Result<String, CliError> {
    if plan.config.engine == Engine::Pde {
        return Err(CliError::config("engine", "decompose needs the tree engine"));
    }
    let n = plan.config.tree.n_steps;
    let lattice = plan.lattice(n)?;
    let dec = decomposition(plan, &lattice)?;
    let side = plan.config.decompose.side;

    let mut nodes = csv_header(
        &format!("decompose_nodes side={side:?}").to_lowercase(),
        "k,j,S,X,dA,pi",
    );
    for k in 0..=n {
        for j in -(k as i64)..=(k as i64) {
            let s = lattice.node_price(k, j).map_err(CliError::Numerical)?;
            let x = dec.discounted_value(k, j).map_err(CliError::Numerical)?;
            let (da, pi) = if k < n {
                (
                    num(dec.increment(k, j).map_err(CliError::Numerical)?),
                    num(dec.pi(k, j).map_err(CliError::Numerical)?),
                )
            } else {
                (String::new(), String::new())
            };
            let _ = writeln!(nodes, "{k},{j},{},{},{da},{pi}", num(s), num(x));
        }
    }

    let cfg = &plan.config.decompose;
    let paths = emitted_paths(n, cfg.path_budget, cfg.sample_paths);
    let mut rows = csv_header(&format!("decompose_paths side={side:?}").to_lowercase(), "path,k,j,S,X,M,A,pi");
    let mut worst_rebuild: f64 = 0.0;
    let mut worst_drop: f64 = 0.0;
    for (p, moves) in paths.iter().enumerate() {
        let c = dec.along(moves).map_err(CliError::Numerical)?;
        for k in 0..=n {
            let s = lattice.node_price(k, c.levels[k]).map_err(CliError::Numerical)?;
            let pi = c.pi.get(k).map(|v| num(*v)).unwrap_or_default();
            let _ = writeln!(
                rows,
                "{p},{k},{},{},{},{},{},{pi}",
                c.levels[k],
                num(s),
                num(c.x[k]),
                num(c.m[k]),
                num(c.a[k])
            );
            worst_rebuild = worst_rebuild.max((c.m[k] - c.a[k] - c.x[k]).abs() / c.x[k].abs().max(1.0));
            if k > 0 {
                worst_drop = worst_drop.max(c.a[k - 1] - c.a[k]);
            }
        }
    }
    plan.write("decompose_nodes.csv", &nodes)?;
    plan.write("decompose_paths.csv", &rows)?;
    Ok(format!(
        "decompose: nodes {} paths {} reconstruction {:.3e} A decrease {:.3e} martingale defect {:.3e}\n",
        (n + 1) * (n + 1),
        paths.len(),
        worst_rebuild.max(dec.residual()),
        worst_drop.max(0.0),
        dec.martingale_defect(&lattice)
    ))
}

fn cmd_boundary(plan: &Plan) -> Result<String, CliError> {
    let engine = plan.config.engine;
    let mut summary = String::new();
    let header = "t,critical_price";
    if engine.tree() {
        let n = plan.config.tree.n_steps;
        let lattice = plan.lattice(n)?;
        for q in [QuoteSide::Ask, QuoteSide::Bid] {
            let surface =
                value_surface(&lattice, &plan.payoff, q.side(), plan.exercise).map_err(|e| engine_error("tree", e))?;
            let b = exercise_boundary(&lattice, &surface, &plan.payoff, default_boundary_tol(&plan.payoff));
            let name = format!("boundary_tree_{}", quote_name(q));
            let mut csv = csv_header(&name, header);
            let mut count = 0;
            if plan.exercise == Exercise::American {
                for p in b.early(n) {
                    let _ = writeln!(csv, "{},{}", num(p.time), num(p.critical_price));
                    count += 1;
                }
            }
            plan.write(&format!("{name}.csv"), &csv)?;
            let _ = writeln!(summary, "{name}: {count} rows");
        }
    }
    if engine.pde() {
        for q in [QuoteSide::Ask, QuoteSide::Bid] {
            let sol = plan.pde_solve(q.side(), plan.config.pde.method)?;
            let name = format!("boundary_pde_{}", quote_name(q));
            let mut csv = csv_header(&name, header);
            let mut count = 0;
            for p in sol.exercise_boundary() {
                if let Some(s) = p.critical_price {
                    let _ = writeln!(csv, "{},{}", num(p.time), num(s));
                    count += 1;
                }
            }
            plan.write(&format!("{name}.csv"), &csv)?;
            let _ = writeln!(summary, "{name}: {count} rows");
        }
    }
    Ok(summary)
}

fn quote_name(q: QuoteSide) -> &'static str {
    match q {
        QuoteSide::Ask => "ask",
        QuoteSide::Bid => "bid",
    }
}

struct CheckRow {
    name: &'static str,
    left: f64,
    right: f64,
    tolerance: f64,
}

impl CheckRow {
    fn gap(&self) -> f64 {
        (self.left - self.right).abs()
    }

    fn pass(&self) -> bool {
        self.gap() <= self.tolerance
    }
}

fn cmd_crosscheck(plan: &Plan, override_tol: Option<f64>) -> Result<String, CliError> {
    let cfg = &plan.config.crosscheck;
    let scale = plan.payoff.scale();
    let tol = |configured: f64| override_tol.unwrap_or(configured);
    let mut rows = Vec::new();

    if plan.exercise == Exercise::American {
        let small = plan.lattice(cfg.oracle_steps)?;
        for (name, side) in [("oracle_ask", Side::Upper), ("oracle_bid", Side::Lower)] {
            let oracle = brute_force_value(&small, &plan.payoff, side).map_err(|e| engine_error("crosscheck.oracle_steps", e))?;
            let tree = value_surface(&small, &plan.payoff, side, Exercise::American)
                .map_err(|e| engine_error("tree", e))?
                .root();
            rows.push(CheckRow {
                name,
                left: tree,
                right: oracle.value,
                tolerance: tol(cfg.oracle_tolerance),
            });
        }
    }

    let lattice = plan.lattice(plan.config.tree.n_steps)?;
    let quotes = plan.tree_quotes(&lattice)?;
    let method = plan.config.pde.method;
    let pde_ask = plan.pde_solve(Side::Upper, method)?;
    let pde_bid = plan.pde_solve(Side::Lower, method)?;
    rows.push(CheckRow {
        name: "tree_pde_ask",
        left: quotes.ask,
        right: pde_ask.root_value(),
        tolerance: tol(cfg.tree_pde_tolerance * scale),
    });
    rows.push(CheckRow {
        name: "tree_pde_bid",
        left: quotes.bid,
        right: pde_bid.root_value(),
        tolerance: tol(cfg.tree_pde_tolerance * scale),
    });
    if let (Some(t), Exercise::American) = (cfg.penalized_projected_tolerance, plan.exercise) {
        let other = match method {
            PdeMethodChoice::Penalized => PdeMethodChoice::Projected,
            PdeMethodChoice::Projected => PdeMethodChoice::Penalized,
        };
        rows.push(CheckRow {
            name: "penalized_projected",
            left: pde_ask.root_value(),
            right: plan.pde_solve(Side::Upper, other)?.root_value(),
            tolerance: tol(t * scale),
        });
    }
    let dec = decomposition(plan, &lattice)?;
    rows.push(CheckRow {
        name: "gdm_local",
        left: dec.martingale_defect(&lattice),
        right: 0.0,
        tolerance: tol(cfg.gdm_tolerance),
    });

    let mut csv = csv_header("crosscheck", "check,left,right,gap,tolerance,pass");
    let mut summary = String::new();
    let mut failed = Vec::new();
    for r in &rows {
        let pass = r.pass();
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.name,
            num(r.left),
            num(r.right),
            num(r.gap()),
            num(r.tolerance),
            pass
        );
        let _ = writeln!(
            summary,
            "{:<20} {:>14.8} {:>14.8}  gap {:.3e}  tol {:.3e}  {}",
            r.name,
            r.left,
            r.right,
            r.gap(),
            r.tolerance,
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            failed.push(r.name.to_string());
        }
    }
    plan.write("crosscheck.csv", &csv)?;
    if failed.is_empty() {
        Ok(summary)
    } else {
        print!("{summary}");
        Err(CliError::Tolerance(failed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "product": {"kind": "put", "strike": 100},
        "market": {"spot": 100, "maturity": 1, "rate": 0.05, "sigma_low": 0.2, "sigma_high": 0.3}
    }"#;

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::from_json(BASE).unwrap();
        assert_eq!(c.engine, Engine::Both);
        assert_eq!(c.tree.n_steps, 500);
        assert_eq!(c.pde.n_space, 400);
        assert_eq!(c.schedule.epsilons, vec![1e-2, 1e-3, 1e-4]);
        assert_eq!(c.crosscheck.oracle_steps, 3);
    }

    #[test]
    fn missing_strike_names_the_field() {
        let text = BASE.replace(r#", "strike": 100"#, "");
        let err = RunConfig::from_json(&text).unwrap().validate().err().unwrap();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("product.strike"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = BASE.replace(r#""strike": 100"#, r#""strik": 100"#);
        let err = RunConfig::from_json(&text).err().unwrap();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("strik"));
    }

    #[test]
    fn round_trip_is_stable() {
        let c = RunConfig::from_json(BASE).unwrap();
        let again = RunConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn sampled_paths_are_reproducible() {
        let a = emitted_paths(20, 729, 8);
        let b = emitted_paths(20, 729, 8);
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
        assert_eq!(emitted_paths(3, 729, 8).len(), 27);
    }

    #[test]
    fn numbers_have_no_exponent() {
        assert_eq!(num(1e-7), "0.0000001");
        assert_eq!(num(2.5), "2.5");
    }
}
