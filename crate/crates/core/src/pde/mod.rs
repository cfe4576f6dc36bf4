//! Free-boundary problem for the G-heat operator on a truncated price
//! interval, solved backward in time with fully implicit steps.
//!
//! In price space the operator is `r S u_S + G(S² u_SS) − r u`, the form
//! consistent with `dS = S (r dt + dB̃)`. [`OperatorForm::Literal`] switches
//! to the constant-coefficient `G(u_SS) + r u_S − r u`.
//!
//! Two routes to the obstacle: a penalty `β_ε(u − f^δ)` swept over a
//! decreasing ε schedule, and a direct policy-iteration solve of the
//! discrete complementarity problem.

mod operator;
mod penalty;
mod solver;

pub use operator::{assemble_operator, assumption_violations, curvature_argument};
pub use penalty::{mollify_payoff, penalty_beta, penalty_beta_prime, MollifiedPayoff};
pub use solver::{pde_solve_european, pde_solve_penalized, pde_solve_projected, residual_check, ResidualReport};

use crate::error::{Error, Result};
use crate::gcore::{GParams, Side};
use crate::lattice::Payoff;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OperatorForm {
    #[default]
    Dynamics,
    Literal,
}

/// Lateral boundary data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryKind {
    /// The (smoothed) payoff itself on both edges.
    #[default]
    Payoff,
    /// Discounted linear asymptote of the payoff, `a e^{−r τ} + b S`, floored
    /// by the obstacle when there is one.
    Asymptotic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeGrid {
    prices: Vec<f64>,
    spot: f64,
    maturity: f64,
    n_time: usize,
    params: GParams,
    operator: OperatorForm,
    boundary: BoundaryKind,
}

impl PdeGrid {
    /// `n_space` log-spaced intervals over `spot·exp(∓4 σ̄ √T)`.
    pub fn new(spot: f64, maturity: f64, n_space: usize, n_time: usize, params: GParams) -> Result<Self> {
        params.validate()?;
        let spread = 4.0 * params.sigma_high * maturity.sqrt();
        if !(spread > 0.0 && spread.is_finite()) {
            return Err(Error::InvalidGrid(
                "price bounds need sigma_high > 0 and maturity > 0, or explicit bounds".into(),
            ));
        }
        Self::with_bounds(spot, maturity, n_space, n_time, params, spot * (-spread).exp(), spot * spread.exp())
    }

    pub fn with_bounds(
        spot: f64,
        maturity: f64,
        n_space: usize,
        n_time: usize,
        params: GParams,
        s_min: f64,
        s_max: f64,
    ) -> Result<Self> {
        params.validate()?;
        if !(spot.is_finite() && spot > 0.0) {
            return Err(Error::InvalidParams("spot must be > 0".into()));
        }
        if !(maturity.is_finite() && maturity > 0.0) {
            return Err(Error::InvalidParams("maturity must be > 0".into()));
        }
        if n_space < 2 || n_time < 1 {
            return Err(Error::InvalidGrid("need n_space >= 2 and n_time >= 1".into()));
        }
        if !(s_min > 0.0 && s_min < spot && spot < s_max && s_max.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "need 0 < s_min < spot < s_max, got [{s_min}, {s_max}] around {spot}"
            )));
        }
        let (a, b) = (s_min.ln(), s_max.ln());
        let mut prices: Vec<f64> = (0..=n_space)
            .map(|i| (a + (b - a) * i as f64 / n_space as f64).exp())
            .collect();
        if n_space.is_multiple_of(2) && (spot.ln() - 0.5 * (a + b)).abs() < 1e-12 {
            prices[n_space / 2] = spot;
        }
        prices[0] = s_min;
        prices[n_space] = s_max;
        Ok(PdeGrid {
            prices,
            spot,
            maturity,
            n_time,
            params,
            operator: OperatorForm::Dynamics,
            boundary: BoundaryKind::Payoff,
        })
    }

    pub fn operator_form(mut self, form: OperatorForm) -> Self {
        self.operator = form;
        self
    }

    pub fn boundary_kind(mut self, kind: BoundaryKind) -> Self {
        self.boundary = kind;
        self
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn n_space(&self) -> usize {
        self.prices.len() - 1
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn dt(&self) -> f64 {
        self.maturity / self.n_time as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        self.maturity * i as f64 / self.n_time as f64
    }

    pub fn spot(&self) -> f64 {
        self.spot
    }

    pub fn maturity(&self) -> f64 {
        self.maturity
    }

    pub fn params(&self) -> &GParams {
        &self.params
    }

    pub fn operator(&self) -> OperatorForm {
        self.operator
    }

    pub fn boundary(&self) -> BoundaryKind {
        self.boundary
    }

    /// One price step at the spot.
    pub fn step_at_spot(&self) -> f64 {
        let i = self.prices.partition_point(|&s| s <= self.spot).min(self.prices.len() - 1);
        self.prices[i] - self.prices[i - 1]
    }

    /// Linear interpolation in `log S`.
    pub fn interpolate(&self, values: &[f64], s: f64) -> f64 {
        let p = &self.prices;
        if s <= p[0] {
            return values[0];
        }
        if s >= p[p.len() - 1] {
            return values[p.len() - 1];
        }
        let i = p.partition_point(|&x| x <= s);
        if p[i - 1] == s {
            return values[i - 1];
        }
        let w = (s.ln() - p[i - 1].ln()) / (p[i].ln() - p[i - 1].ln());
        values[i - 1] * (1.0 - w) + values[i] * w
    }
}

/// Inner iteration controls shared by all solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationControl {
    pub max_inner: usize,
    /// Stop when the update is below `inner_tol · payoff scale`.
    pub inner_tol: f64,
    /// Keep going past a step that hit `max_inner`, flagging the solution.
    pub allow_unconverged: bool,
}

impl Default for IterationControl {
    fn default() -> Self {
        IterationControl {
            max_inner: 100,
            inner_tol: 1e-10,
            allow_unconverged: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySchedule {
    pub epsilons: Vec<f64>,
    /// Mollification width in price units; `None` means one price step at
    /// the spot.
    pub delta: Option<f64>,
    pub control: IterationControl,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        PenaltySchedule {
            epsilons: vec![1e-2, 1e-3, 1e-4],
            delta: None,
            control: IterationControl::default(),
        }
    }
}

impl PenaltySchedule {
    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(Error::InvalidParams("penalty schedule is empty".into()));
        }
        if self.epsilons.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            return Err(Error::InvalidParams("penalty epsilons must lie in (0, 1]".into()));
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidParams("penalty epsilons must be strictly decreasing".into()));
        }
        if let Some(d) = self.delta {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::InvalidParams("delta must be >= 0".into()));
            }
        }
        if self.control.max_inner == 0 {
            return Err(Error::InvalidParams("max_inner must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PdeMethod {
    Penalized { epsilon: f64 },
    Projected,
    European,
}

/// Largest `|β_ε(u − f^δ)|` over the whole space-time field for one ε.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyBound {
    pub epsilon: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeSolution {
    pub(crate) grid: PdeGrid,
    pub(crate) payoff: Payoff,
    pub(crate) side: Side,
    pub(crate) method: PdeMethod,
    /// `u[i][m]` at time `t_i` and price node `m`.
    pub(crate) u: Vec<Vec<f64>>,
    pub(crate) obstacle: Option<Vec<f64>>,
    pub(crate) penalty: Option<Vec<Vec<f64>>>,
    pub(crate) penalty_bounds: Vec<PenaltyBound>,
    pub(crate) residual: Vec<Vec<f64>>,
    /// Interior nodes where the obstacle binds, per slice before maturity.
    pub(crate) exercise: Vec<Vec<bool>>,
    pub(crate) converged: bool,
    pub(crate) inner_iterations: usize,
}

/// One time slice of the contact region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeBoundaryPoint {
    pub time: f64,
    pub critical_price: Option<f64>,
    pub connected: bool,
}

impl PdeSolution {
    pub fn grid(&self) -> &PdeGrid {
        &self.grid
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn method(&self) -> PdeMethod {
        self.method
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn inner_iterations(&self) -> usize {
        self.inner_iterations
    }

    pub fn values(&self, time_index: usize) -> &[f64] {
        &self.u[time_index]
    }

    pub fn field(&self) -> &[Vec<f64>] {
        &self.u
    }

    /// `u(0, spot)`.
    pub fn root_value(&self) -> f64 {
        self.value_at(self.grid.spot)
    }

    pub fn value_at(&self, s: f64) -> f64 {
        self.grid.interpolate(&self.u[0], s)
    }

    /// Obstacle used by the solve (`f^δ` or `f`); `None` for European runs.
    pub fn obstacle(&self) -> Option<&[f64]> {
        self.obstacle.as_deref()
    }

    /// `β_ε(u − f^δ)` for the last ε of the schedule.
    pub fn penalty_field(&self) -> Option<&[Vec<f64>]> {
        self.penalty.as_deref()
    }

    pub fn penalty_bounds(&self) -> &[PenaltyBound] {
        &self.penalty_bounds
    }

    /// `max{Lu − ru, f − u}` at interior nodes for `t < T`, zero elsewhere.
    pub fn residual_field(&self) -> &[Vec<f64>] {
        &self.residual
    }

    /// Nodes at time index `i < n_time` where the obstacle binds: the
    /// exercise choice of the projected solve, or an active penalty
    /// (`u < f^δ`) in the penalized one. Ties between exercise and
    /// continuation count as continuation.
    pub fn contact_set(&self, i: usize) -> Vec<usize> {
        self.exercise
            .get(i)
            .map(|row| (0..row.len()).filter(|&m| row[m]).collect())
            .unwrap_or_default()
    }

    /// Edge of the contact region on each slice before maturity: the highest
    /// contact price for puts and tabulated claims, the lowest for calls.
    pub fn exercise_boundary(&self) -> Vec<PdeBoundaryPoint> {
        let s = self.grid.prices();
        (0..self.grid.n_time())
            .map(|i| {
                let set = self.contact_set(i);
                let connected = set.windows(2).all(|w| w[1] == w[0] + 1);
                let critical_price = match self.payoff {
                    Payoff::Call { .. } => set.first().map(|&m| s[m]),
                    _ => set.last().map(|&m| s[m]),
                };
                PdeBoundaryPoint {
                    time: self.grid.time(i),
                    critical_price,
                    connected,
                }
            })
            .collect()
    }
}
