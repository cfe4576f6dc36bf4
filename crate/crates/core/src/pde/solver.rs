use super::operator::Operator;
use super::penalty::{mollify_payoff, penalty_beta, penalty_beta_prime};
use super::{BoundaryKind, IterationControl, PdeGrid, PdeMethod, PdeSolution, PenaltyBound, PenaltySchedule};
use crate::error::{Error, Result};
use crate::gcore::{Endpoint, Side};
use crate::lattice::Payoff;

/// Thomas algorithm; `sub[0]` and `sup[n−1]` are ignored.
fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * c[i - 1];
        c[i] = if i + 1 < n { sup[i] / m } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Edge values at time-to-maturity `tau`.
fn lateral(grid: &PdeGrid, payoff: &Payoff, terminal: &[f64], obstacle: Option<&[f64]>, tau: f64) -> (f64, f64) {
    let s = grid.prices();
    let n = s.len() - 1;
    match grid.boundary() {
        BoundaryKind::Payoff => (terminal[0], terminal[n]),
        BoundaryKind::Asymptotic => {
            let disc = (-grid.params().rate * tau).exp();
            let edge = |b: usize, inner: usize| {
                let slope = (payoff.eval(s[inner]) - payoff.eval(s[b])) / (s[inner] - s[b]);
                let level = payoff.eval(s[b]) - slope * s[b];
                let v = level * disc + slope * s[b];
                match obstacle {
                    Some(o) => v.max(o[b]),
                    None => v,
                }
            };
            (edge(0, 1), edge(n, n - 1))
        }
    }
}

/// `(x − Δt·L x − prev)` at one interior node with the optimal branch.
fn continuation_row(op: &Operator, x: &[f64], prev: &[f64], m: usize, dt: f64, side: Side) -> (f64, Endpoint) {
    let e = op.branch(x, m, side);
    (x[m] - dt * op.apply(x, m, e) - prev[m], e)
}

struct System {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    rhs: Vec<f64>,
}

impl System {
    fn new(n: usize, left: f64, right: f64) -> Self {
        let mut sys = System {
            sub: vec![0.0; n],
            diag: vec![1.0; n],
            sup: vec![0.0; n],
            rhs: vec![0.0; n],
        };
        sys.rhs[0] = left;
        sys.rhs[n - 1] = right;
        sys
    }

    fn continuation(&mut self, op: &Operator, m: usize, e: Endpoint, dt: f64, prev: f64) {
        let w = op.row(m, e);
        self.sub[m] = -dt * w[0];
        self.diag[m] = 1.0 - dt * w[1];
        self.sup[m] = -dt * w[2];
        self.rhs[m] = prev;
    }

    fn pin(&mut self, m: usize, value: f64) {
        self.sub[m] = 0.0;
        self.diag[m] = 1.0;
        self.sup[m] = 0.0;
        self.rhs[m] = value;
    }

    fn solve(&self) -> Vec<f64> {
        solve_tridiagonal(&self.sub, &self.diag, &self.sup, &self.rhs)
    }
}

fn complementarity(op: &Operator, x: &[f64], prev: &[f64], obstacle: Option<&[f64]>, dt: f64, side: Side) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    for m in 1..n - 1 {
        let (row, _) = continuation_row(op, x, prev, m, dt, side);
        let generator = -row / dt;
        out[m] = match obstacle {
            Some(o) => generator.max(o[m] - x[m]),
            None => generator,
        };
    }
    out
}

fn not_converged(step: usize, iteration: usize, residual: f64) -> Error {
    Error::NoConvergence {
        step,
        iteration,
        residual,
    }
}

/// Penalized free-boundary solve, one full backward sweep per ε. The
/// returned field belongs to the last ε; the bound on `|β_ε|` is recorded
/// for every ε.
pub fn pde_solve_penalized(grid: &PdeGrid, payoff: &Payoff, schedule: &PenaltySchedule, side: Side) -> Result<PdeSolution> {
    schedule.validate()?;
    let delta = schedule.delta.unwrap_or_else(|| grid.step_at_spot());
    let smooth = mollify_payoff(payoff, delta);
    let obstacle: Vec<f64> = grid.prices().iter().map(|&s| smooth.eval(s)).collect();
    let op = Operator::new(grid);
    let mut bounds = Vec::with_capacity(schedule.epsilons.len());
    let mut last = None;
    let mut converged = true;
    let mut iterations = 0;
    for &eps in &schedule.epsilons {
        let sweep = penalized_sweep(grid, &op, payoff, &obstacle, eps, side, &schedule.control)?;
        bounds.push(PenaltyBound {
            epsilon: eps,
            max_abs: sweep.beta.iter().flatten().fold(0.0, |a: f64, b| a.max(b.abs())),
        });
        converged &= sweep.converged;
        iterations += sweep.iterations;
        last = Some((eps, sweep));
    }
    let (eps, sweep) = last.expect("schedule is nonempty");
    let dt = grid.dt();
    let residual = (0..grid.n_time())
        .map(|i| complementarity(&op, &sweep.u[i], &sweep.u[i + 1], Some(&obstacle), dt, side))
        .collect();
    Ok(PdeSolution {
        grid: grid.clone(),
        payoff: payoff.clone(),
        side,
        method: PdeMethod::Penalized { epsilon: eps },
        u: sweep.u,
        obstacle: Some(obstacle),
        penalty: Some(sweep.beta),
        penalty_bounds: bounds,
        residual,
        exercise: sweep.exercise,
        converged,
        inner_iterations: iterations,
    })
}

struct Sweep {
    u: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
    exercise: Vec<Vec<bool>>,
    converged: bool,
    iterations: usize,
}

fn penalized_sweep(
    grid: &PdeGrid,
    op: &Operator,
    payoff: &Payoff,
    obstacle: &[f64],
    eps: f64,
    side: Side,
    control: &IterationControl,
) -> Result<Sweep> {
    let nt = grid.n_time();
    let n = obstacle.len();
    let dt = grid.dt();
    let tol = control.inner_tol * payoff.scale();
    let mut u = vec![Vec::new(); nt + 1];
    let mut beta = vec![vec![0.0; n]; nt + 1];
    let mut exercise = vec![vec![false; n]; nt];
    let active = 1e-10 * payoff.scale();
    u[nt] = obstacle.to_vec();
    let mut converged = true;
    let mut iterations = 0;

    // residual of the penalized step equation at interior nodes
    let defect = |x: &[f64], prev: &[f64]| -> f64 {
        (1..n - 1)
            .map(|m| {
                let (row, _) = continuation_row(op, x, prev, m, dt, side);
                (row + dt * penalty_beta(x[m] - obstacle[m], eps)).abs()
            })
            .fold(0.0, f64::max)
    };

    for i in (0..nt).rev() {
        let prev = u[i + 1].clone();
        let (left, right) = lateral(grid, payoff, obstacle, Some(obstacle), grid.maturity() - grid.time(i));
        let mut x = prev.clone();
        x[0] = left;
        x[n - 1] = right;
        let mut step_converged = false;
        let mut it = 0;
        while it < control.max_inner {
            it += 1;
            let mut sys = System::new(n, left, right);
            for m in 1..n - 1 {
                sys.continuation(op, m, op.branch(&x, m, side), dt, prev[m]);
                let s = x[m] - obstacle[m];
                let bp = penalty_beta_prime(s, eps);
                sys.diag[m] += dt * bp;
                sys.rhs[m] -= dt * (penalty_beta(s, eps) - bp * x[m]);
            }
            let y = sys.solve();
            let base = defect(&x, &prev);
            let mut theta = 1.0;
            let mut trial: Vec<f64> = y.clone();
            while theta > 1.0 / 64.0 && defect(&trial, &prev) > base && base > 0.0 {
                theta *= 0.5;
                trial = x.iter().zip(&y).map(|(a, b)| a + theta * (b - a)).collect();
            }
            let change = trial.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            x = trial;
            if change <= tol {
                step_converged = true;
                break;
            }
        }
        iterations += it;
        if !step_converged {
            if !control.allow_unconverged {
                return Err(not_converged(i, it, defect(&x, &prev) / dt));
            }
            converged = false;
        }
        for m in 0..n {
            beta[i][m] = penalty_beta(x[m] - obstacle[m], eps);
        }
        for m in 1..n - 1 {
            exercise[i][m] = x[m] - obstacle[m] < -active;
        }
        u[i] = x;
    }
    Ok(Sweep {
        u,
        beta,
        exercise,
        converged,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Policy {
    Continue(Endpoint),
    Exercise,
}

/// Direct solve of the discrete obstacle problem
/// `min{ (u − Δt·L u − u_next), u − f } = 0` per step, by policy iteration
/// over `{σ̲, σ̄, exercise}` at every node. Equality prefers continuation.
pub fn pde_solve_projected(grid: &PdeGrid, payoff: &Payoff, side: Side, control: &IterationControl) -> Result<PdeSolution> {
    let obstacle: Vec<f64> = grid.prices().iter().map(|&s| payoff.eval(s)).collect();
    policy_solve(grid, payoff, Some(obstacle), side, control)
}

/// Solve without an obstacle (exercise at maturity only).
pub fn pde_solve_european(grid: &PdeGrid, payoff: &Payoff, side: Side, control: &IterationControl) -> Result<PdeSolution> {
    policy_solve(grid, payoff, None, side, control)
}

fn policy_solve(
    grid: &PdeGrid,
    payoff: &Payoff,
    obstacle: Option<Vec<f64>>,
    side: Side,
    control: &IterationControl,
) -> Result<PdeSolution> {
    if control.max_inner == 0 {
        return Err(Error::InvalidParams("max_inner must be >= 1".into()));
    }
    let op = Operator::new(grid);
    let nt = grid.n_time();
    let dt = grid.dt();
    let terminal: Vec<f64> = grid.prices().iter().map(|&s| payoff.eval(s)).collect();
    let n = terminal.len();
    let obs = obstacle.as_deref();
    let mut u = vec![Vec::new(); nt + 1];
    u[nt] = terminal.clone();
    let mut residual = vec![vec![0.0; n]; nt];
    let mut exercise = vec![vec![false; n]; nt];
    let mut converged = true;
    let mut iterations = 0;
    let tie = 1e-13 * payoff.scale();

    for i in (0..nt).rev() {
        let prev = u[i + 1].clone();
        let (left, right) = lateral(grid, payoff, &terminal, obs, grid.maturity() - grid.time(i));
        // start from the unconstrained step with branches from the last slice
        let mut policy: Vec<Policy> = (0..n)
            .map(|m| {
                if m == 0 || m == n - 1 {
                    Policy::Exercise
                } else {
                    Policy::Continue(op.branch(&prev, m, side))
                }
            })
            .collect();
        let mut x = prev.clone();
        let mut step_converged = false;
        let mut it = 0;
        while it < control.max_inner {
            it += 1;
            let mut sys = System::new(n, left, right);
            for m in 1..n - 1 {
                match policy[m] {
                    Policy::Continue(e) => sys.continuation(&op, m, e, dt, prev[m]),
                    Policy::Exercise => sys.pin(m, obs.map_or(0.0, |o| o[m])),
                }
            }
            x = sys.solve();
            let mut next = policy.clone();
            for m in 1..n - 1 {
                let (row, e) = continuation_row(&op, &x, &prev, m, dt, side);
                let (best, candidate) = match obs {
                    Some(o) if x[m] - o[m] < row => (x[m] - o[m], Policy::Exercise),
                    _ => (row, Policy::Continue(e)),
                };
                // keep the current choice when it is optimal up to rounding
                let current = match policy[m] {
                    Policy::Continue(e) => x[m] - dt * op.apply(&x, m, e) - prev[m],
                    Policy::Exercise => obs.map_or(f64::INFINITY, |o| x[m] - o[m]),
                };
                if (current - best).abs() > tie {
                    next[m] = candidate;
                }
            }
            if next == policy {
                step_converged = true;
                break;
            }
            policy = next;
        }
        iterations += it;
        residual[i] = complementarity(&op, &x, &prev, obs, dt, side);
        for m in 1..n - 1 {
            exercise[i][m] = policy[m] == Policy::Exercise;
        }
        if !step_converged {
            if !control.allow_unconverged {
                let worst = residual[i].iter().fold(0.0, |a: f64, b| a.max(b.abs()));
                return Err(not_converged(i, it, worst));
            }
            converged = false;
        }
        u[i] = x;
    }
    Ok(PdeSolution {
        grid: grid.clone(),
        payoff: payoff.clone(),
        side,
        method: if obstacle.is_some() { PdeMethod::Projected } else { PdeMethod::European },
        u,
        obstacle,
        penalty: None,
        penalty_bounds: Vec::new(),
        residual,
        exercise,
        converged,
        inner_iterations: iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    /// Largest `|max{Lu − ru, f − u}|` over interior nodes and `t < T`.
    pub max_abs: f64,
    pub time_index: usize,
    pub node: usize,
}

impl ResidualReport {
    pub fn within(&self, tol: f64) -> bool {
        self.max_abs <= tol
    }
}

pub fn residual_check(solution: &PdeSolution) -> ResidualReport {
    let mut report = ResidualReport {
        max_abs: 0.0,
        time_index: 0,
        node: 0,
    };
    for (i, row) in solution.residual.iter().enumerate() {
        for (m, v) in row.iter().enumerate() {
            if v.abs() > report.max_abs {
                report = ResidualReport {
                    max_abs: v.abs(),
                    time_index: i,
                    node: m,
                };
            }
        }
    }
    report
}
