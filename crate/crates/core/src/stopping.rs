//! Optimal stopping under the upper and lower one-step expectations.
//!
//! Backward induction on the lattice:
//!
//! ```text
//! V_n = f,   V_k = max( f, e^{−r dt} Ê_side[V_{k+1}] )
//! ```
//!
//! The upper recursion gives the ask price process. The headline bid is the
//! same recursion with the lower expectation: the holder still picks the
//! exercise time while volatility is adversarial. The literal bid reading,
//! `−sup_ν Ê[−f_ν]`, evaluates to an infimum over stopping times of the lower
//! expectation and is reported alongside as a diagnostic.

use crate::error::{Error, Result};
use crate::gcore::{step_expectation, Side};
use crate::lattice::{Lattice, Payoff};
use crate::surface::{SurfaceSide, ValueSurface};

/// Exercise rights of the claim.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exercise {
    American,
    European,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rule {
    /// Holder maximizes over stopping times.
    Sup,
    /// Exercise only at maturity.
    Hold,
    /// Infimum over stopping times (literal bid reading).
    Inf,
}

/// Ask (upper) or bid (lower) American value surface.
pub fn snell_envelope(lattice: &Lattice, payoff: &Payoff, side: Side) -> Result<ValueSurface> {
    rollback(lattice, payoff, side, Rule::Sup)
}

/// Value surface of the claim exercisable at maturity only.
pub fn european_surface(lattice: &Lattice, payoff: &Payoff, side: Side) -> Result<ValueSurface> {
    rollback(lattice, payoff, side, Rule::Hold)
}

pub fn value_surface(lattice: &Lattice, payoff: &Payoff, side: Side, exercise: Exercise) -> Result<ValueSurface> {
    match exercise {
        Exercise::American => snell_envelope(lattice, payoff, side),
        Exercise::European => european_surface(lattice, payoff, side),
    }
}

/// `inf_ν` of the lower expectation of the stopped payoff at every node.
pub fn literal_bid_surface(lattice: &Lattice, payoff: &Payoff) -> Result<ValueSurface> {
    rollback(lattice, payoff, Side::Lower, Rule::Inf)
}

fn rollback(lattice: &Lattice, payoff: &Payoff, side: Side, rule: Rule) -> Result<ValueSurface> {
    let n = lattice.n_steps();
    let terminal: Vec<f64> = lattice.prices_at(n).into_iter().map(|s| payoff.eval(s)).collect();
    if terminal.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidPayoff("payoff is not finite on the lattice".into()));
    }
    let (rows, continuation) = rollback_rows(lattice, payoff, side, rule, n, terminal);
    let surface = ValueSurface::new(rows, side.into());
    Ok(match rule {
        Rule::Hold => surface,
        _ => surface.with_continuation(continuation),
    })
}

/// Runs the American recursion backward from an arbitrary slice at step
/// `start` and returns rows `0..=start`.
pub fn snell_from_slice(
    lattice: &Lattice,
    payoff: &Payoff,
    side: Side,
    start: usize,
    slice: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if start > lattice.n_steps() || slice.len() != 2 * start + 1 {
        return Err(Error::InvalidGrid(format!(
            "slice of {} values does not fit step {start}",
            slice.len()
        )));
    }
    Ok(rollback_rows(lattice, payoff, side, Rule::Sup, start, slice.to_vec()).0)
}

fn rollback_rows(
    lattice: &Lattice,
    payoff: &Payoff,
    side: Side,
    rule: Rule,
    start: usize,
    terminal: Vec<f64>,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let stencil = lattice.stencil();
    let disc = lattice.discount();
    let mut rows = vec![Vec::new(); start + 1];
    let mut continuation = vec![Vec::new(); start];
    rows[start] = terminal;
    for k in (0..start).rev() {
        let next = &rows[k + 1];
        let prices = lattice.prices_at(k);
        let mut row = Vec::with_capacity(2 * k + 1);
        let mut cont_row = Vec::with_capacity(2 * k + 1);
        for (idx, &price) in prices.iter().enumerate() {
            // children of level j sit at idx, idx+1, idx+2 in the next row
            let children = [next[idx], next[idx + 1], next[idx + 2]];
            let cont = disc * step_expectation(&children, stencil, side);
            let value = match rule {
                Rule::Hold => cont,
                Rule::Sup => {
                    let f = payoff.eval(price);
                    if f >= cont {
                        f
                    } else {
                        cont
                    }
                }
                Rule::Inf => payoff.eval(price).min(cont),
            };
            cont_row.push(cont);
            row.push(value);
        }
        continuation[k] = cont_row;
        rows[k] = row;
    }
    (rows, continuation)
}

/// Root prices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BidAsk {
    pub bid: f64,
    pub ask: f64,
    /// `inf_ν` lower-expectation value: the literal bid reading.
    pub literal_bid: f64,
}

pub fn bid_ask(lattice: &Lattice, payoff: &Payoff) -> Result<BidAsk> {
    let ask = snell_envelope(lattice, payoff, Side::Upper)?.root();
    let bid = snell_envelope(lattice, payoff, Side::Lower)?.root();
    let literal_bid = literal_bid_surface(lattice, payoff)?.root();
    Ok(BidAsk {
        bid,
        ask,
        literal_bid,
    })
}

/// Edge of the exercise region at one time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub step: usize,
    pub time: f64,
    /// Largest exercise price for puts and tabulated claims, smallest for calls.
    pub critical_price: f64,
    pub lowest: f64,
    pub highest: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExerciseBoundary {
    pub side: SurfaceSide,
    pub points: Vec<BoundaryPoint>,
}

impl ExerciseBoundary {
    /// Points strictly before maturity.
    pub fn early(&self, n_steps: usize) -> impl Iterator<Item = &BoundaryPoint> {
        self.points.iter().filter(move |p| p.step < n_steps)
    }
}

pub fn default_boundary_tol(payoff: &Payoff) -> f64 {
    1e-8 * payoff.scale()
}

/// Exercise region per step. At maturity it is the set of in-the-money
/// nodes; before maturity a node belongs to it when immediate exercise beats
/// continuation by more than `tol`. Nodes where the two are equal (a call
/// deep in the money at zero rate) are left in the continuation region.
pub fn exercise_boundary(lattice: &Lattice, surface: &ValueSurface, payoff: &Payoff, tol: f64) -> ExerciseBoundary {
    let n = surface.n_steps();
    let continuation = surface.continuation();
    let mut points = Vec::new();
    for k in 0..=n {
        let values = surface.slice(k);
        let mut lowest = f64::INFINITY;
        let mut highest = f64::NEG_INFINITY;
        for (idx, &price) in lattice.prices_at(k).iter().enumerate() {
            let f = payoff.eval(price);
            if f <= tol {
                continue;
            }
            let exercised = if k == n {
                true
            } else {
                match continuation {
                    Some(c) => f - c[k][idx] > tol,
                    None => (values[idx] - f).abs() <= tol,
                }
            };
            if exercised {
                lowest = lowest.min(price);
                highest = highest.max(price);
            }
        }
        if lowest.is_finite() {
            let critical_price = match payoff {
                Payoff::Call { .. } => lowest,
                _ => highest,
            };
            points.push(BoundaryPoint {
                step: k,
                time: lattice.time(k),
                critical_price,
                lowest,
                highest,
            });
        }
    }
    ExerciseBoundary {
        side: surface.side(),
        points,
    }
}
