//! Discrete G-Doob-Meyer decomposition and the superhedge built from it.
//!
//! Everything is expressed in time-zero money, `X̃_k = e^{−r t_k} X_k`. At a
//! non-terminal node `n` the increment
//!
//! ```text
//! D_n = X̃_n − Ê[X̃_children]
//! ```
//!
//! is known one step ahead, so along a path `ω` through nodes `n_0, n_1, …`
//!
//! ```text
//! A_k(ω) = Σ_{i<k} D_{n_i}      M_k(ω) = X̃_k(ω) + A_k(ω)
//! ```
//!
//! gives a predictable, nondecreasing `A` with `A_0 = 0` and a one-step
//! G-martingale `M`. On a recombining lattice `A` and `M` are functions of
//! the path rather than of the terminal node: two paths may reach the same
//! node having consumed different amounts. The decomposition therefore
//! stores the node-wise increments and hedge ratios, and reconstructs `M`
//! and `A` along any requested path.

use crate::error::{Error, Result};
use crate::gcore::{step_expectation_arg, Endpoint, Side};
use crate::lattice::{lattice_paths, Lattice, Payoff};
use crate::surface::{Discounting, SurfaceSide, ValueSurface};

pub const SUPERMARTINGALE_TOL: f64 = 1e-9;

/// Outcome of a one-step supermartingale scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupermartingaleCheck {
    pub holds: bool,
    /// Largest `Ê[children] − node` over the lattice, clamped at zero.
    pub worst_violation: f64,
    /// `(k, j)` of the worst node, if any node violates.
    pub worst_node: Option<(usize, i64)>,
}

fn origin_rows(surface: &ValueSurface, lattice: &Lattice) -> Vec<Vec<f64>> {
    match surface.discounting() {
        Discounting::Origin => surface.rows().to_vec(),
        Discounting::NodeTime => surface.to_origin(lattice).rows().to_vec(),
    }
}

fn side_of(surface: &ValueSurface) -> Side {
    match surface.side() {
        SurfaceSide::Lower => Side::Lower,
        _ => Side::Upper,
    }
}

/// Checks `e^{−r dt}·Ê_side[X_children] ≤ X` at every non-terminal node,
/// with tolerance `1e-9·max(1, |X|)`.
pub fn check_g_supermartingale(surface: &ValueSurface, lattice: &Lattice, side: Side) -> SupermartingaleCheck {
    let rows = origin_rows(surface, lattice);
    let mut worst = 0.0;
    let mut node = None;
    let mut holds = true;
    for k in 0..lattice.n_steps() {
        for (idx, &x) in rows[k].iter().enumerate() {
            let next = &rows[k + 1];
            let (e, _) = step_expectation_arg(&[next[idx], next[idx + 1], next[idx + 2]], lattice.stencil(), side);
            let excess = e - x;
            if excess > SUPERMARTINGALE_TOL * x.abs().max(1.0) {
                holds = false;
            }
            if excess > worst {
                worst = excess;
                node = Some((k, idx as i64 - k as i64));
            }
        }
    }
    SupermartingaleCheck {
        holds,
        worst_violation: worst,
        worst_node: node,
    }
}

/// Order in which children and nodes are visited. The decomposition must
/// not depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChildOrder {
    Ascending,
    Descending,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdmDecomposition {
    side: Side,
    /// `X̃` at every node.
    x: Vec<Vec<f64>>,
    /// Discounted price `S̃` at every node.
    s: Vec<Vec<f64>>,
    /// `D` at every non-terminal node.
    increment: Vec<Vec<f64>>,
    pi: Vec<Vec<f64>>,
    endpoint: Vec<Vec<Endpoint>>,
    residual: f64,
}

/// `X̃`, `M`, `A` and `pi` along one path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathComponents {
    /// Level `j` at each step, starting with `0`.
    pub levels: Vec<i64>,
    pub x: Vec<f64>,
    pub m: Vec<f64>,
    pub a: Vec<f64>,
    /// Hedge ratio held over `(k, k+1]`; one fewer entry than `x`.
    pub pi: Vec<f64>,
}

pub fn gdm_decompose(surface: &ValueSurface, lattice: &Lattice) -> Result<GdmDecomposition> {
    gdm_decompose_ordered(surface, lattice, ChildOrder::Ascending)
}

pub fn gdm_decompose_ordered(surface: &ValueSurface, lattice: &Lattice, order: ChildOrder) -> Result<GdmDecomposition> {
    if surface.n_steps() != lattice.n_steps() {
        return Err(Error::InvalidGrid(format!(
            "surface has {} steps, lattice has {}",
            surface.n_steps(),
            lattice.n_steps()
        )));
    }
    let side = side_of(surface);
    let check = check_g_supermartingale(surface, lattice, side);
    if !check.holds {
        let (k, j) = check.worst_node.unwrap_or((0, 0));
        return Err(Error::NotSupermartingale {
            k,
            j,
            violation: check.worst_violation,
        });
    }
    let n = lattice.n_steps();
    let x = origin_rows(surface, lattice);
    let s: Vec<Vec<f64>> = (0..=n)
        .map(|k| {
            let d = (-lattice.params().rate * lattice.time(k)).exp();
            lattice.prices_at(k).into_iter().map(|p| p * d).collect()
        })
        .collect();
    let mut increment = Vec::with_capacity(n);
    let mut pi = Vec::with_capacity(n);
    let mut endpoint = Vec::with_capacity(n);
    let mut residual: f64 = 0.0;
    for k in 0..n {
        let width = 2 * k + 1;
        let mut inc = vec![0.0; width];
        let mut slope = vec![0.0; width];
        let mut arg = vec![Endpoint::High; width];
        let indices: Vec<usize> = match order {
            ChildOrder::Ascending => (0..width).collect(),
            ChildOrder::Descending => (0..width).rev().collect(),
        };
        for idx in indices {
            let kids = [x[k + 1][idx], x[k + 1][idx + 1], x[k + 1][idx + 2]];
            let (e, ep) = match order {
                ChildOrder::Ascending => step_expectation_arg(&kids, lattice.stencil(), side),
                ChildOrder::Descending => reversed_expectation(&kids, lattice, side),
            };
            let d = (x[k][idx] - e).max(0.0);
            let sk = &s[k + 1];
            slope[idx] = match order {
                ChildOrder::Ascending => (kids[2] - kids[0]) / (sk[idx + 2] - sk[idx]),
                ChildOrder::Descending => (kids[0] - kids[2]) / (sk[idx] - sk[idx + 2]),
            };
            inc[idx] = d;
            arg[idx] = ep;
            // one-step reconstruction X̃_c = (X̃_n + ΔM) − D_n on each edge
            for &c in &kids {
                let dm = c - x[k][idx] + d;
                let rebuilt = (x[k][idx] + dm) - d;
                residual = residual.max((rebuilt - c).abs() / c.abs().max(1.0));
            }
        }
        increment.push(inc);
        pi.push(slope);
        endpoint.push(arg);
    }
    Ok(GdmDecomposition {
        side,
        x,
        s,
        increment,
        pi,
        endpoint,
        residual,
    })
}

fn reversed_expectation(kids: &[f64; 3], lattice: &Lattice, side: Side) -> (f64, Endpoint) {
    let value = |e: Endpoint| {
        let p = lattice.stencil().probabilities(e);
        p[2] * kids[2] + p[1] * kids[1] + p[0] * kids[0]
    };
    let (hi, lo) = (value(Endpoint::High), value(Endpoint::Low));
    match side {
        Side::Upper if lo > hi => (lo, Endpoint::Low),
        Side::Upper => (hi, Endpoint::High),
        Side::Lower if lo < hi => (lo, Endpoint::Low),
        Side::Lower => (hi, Endpoint::High),
    }
}

impl GdmDecomposition {
    pub fn side(&self) -> Side {
        self.side
    }

    pub fn n_steps(&self) -> usize {
        self.increment.len()
    }

    /// Largest one-step reconstruction error, relative.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// `D` at node `(k, j)`, `k < n`.
    pub fn increment(&self, k: usize, j: i64) -> Result<f64> {
        pick(&self.increment, k, j)
    }

    pub fn pi(&self, k: usize, j: i64) -> Result<f64> {
        pick(&self.pi, k, j)
    }

    /// Endpoint attaining the one-step expectation; ties go to `High`.
    pub fn endpoint(&self, k: usize, j: i64) -> Result<Endpoint> {
        let row = self.endpoint.get(k).ok_or(Error::IndexOutOfRange { k, j })?;
        let idx = j + k as i64;
        if idx < 0 || idx as usize >= row.len() {
            return Err(Error::IndexOutOfRange { k, j });
        }
        Ok(row[idx as usize])
    }

    /// Discounted value `X̃` at a node.
    pub fn discounted_value(&self, k: usize, j: i64) -> Result<f64> {
        pick(&self.x, k, j)
    }

    pub fn increments(&self) -> &[Vec<f64>] {
        &self.increment
    }

    pub fn hedge_ratios(&self) -> &[Vec<f64>] {
        &self.pi
    }

    /// `M` and `A` along a move sequence in `{−1, 0, 1}`.
    pub fn along(&self, moves: &[i8]) -> Result<PathComponents> {
        if moves.len() > self.n_steps() {
            return Err(Error::IndexOutOfRange {
                k: moves.len(),
                j: 0,
            });
        }
        let mut levels = vec![0i64];
        let mut x = vec![self.x[0][0]];
        let mut m = vec![self.x[0][0]];
        let mut a = vec![0.0];
        let mut pi = Vec::with_capacity(moves.len());
        for (k, &mv) in moves.iter().enumerate() {
            if !(-1..=1).contains(&mv) {
                return Err(Error::IndexOutOfRange { k: k + 1, j: mv as i64 });
            }
            let j = levels[k];
            let idx = (j + k as i64) as usize;
            let child = idx + (mv + 1) as usize;
            let d = self.increment[k][idx];
            let xc = self.x[k + 1][child];
            let dm = xc - self.x[k][idx] + d;
            levels.push(j + mv as i64);
            x.push(xc);
            m.push(m[k] + dm);
            a.push(a[k] + d);
            pi.push(self.pi[k][idx]);
        }
        Ok(PathComponents { levels, x, m, a, pi })
    }

    /// Largest `|Ê_side[M_children] − M_node|` over all nodes. Only the edge
    /// increments of `M` enter, so the check is path-independent.
    pub fn martingale_defect(&self, lattice: &Lattice) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.n_steps() {
            for idx in 0..(2 * k + 1) {
                let d = self.increment[k][idx];
                let dm = [0, 1, 2].map(|c| self.x[k + 1][idx + c] - self.x[k][idx] + d);
                let (e, _) = step_expectation_arg(&dm, lattice.stencil(), self.side);
                worst = worst.max(e.abs());
            }
        }
        worst
    }

    /// Smallest increment of `A`; negative values mean `A` decreases.
    pub fn min_increment(&self) -> f64 {
        self.increment.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest node-wise difference in increments and hedge ratios.
    pub fn max_abs_diff(&self, other: &GdmDecomposition) -> f64 {
        let a = self.increment.iter().flatten().zip(other.increment.iter().flatten());
        let b = self.pi.iter().flatten().zip(other.pi.iter().flatten());
        a.chain(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
    }
}

fn pick(rows: &[Vec<f64>], k: usize, j: i64) -> Result<f64> {
    let row = rows.get(k).ok_or(Error::IndexOutOfRange { k, j })?;
    let idx = j + k as i64;
    if idx < 0 || idx as usize >= row.len() {
        return Err(Error::IndexOutOfRange { k, j });
    }
    Ok(row[idx as usize])
}

/// Self-financing superhedge: hold `pi` units of the asset, consume `c` at
/// each node, bank the rest at rate `r`. Both are in node-time money.
#[derive(Debug, Clone, PartialEq)]
pub struct Superhedge {
    pub initial_wealth: f64,
    pub pi: Vec<Vec<f64>>,
    /// Consumption `c_n = e^{r t_n} D_n` at every non-terminal node.
    pub consumption: Vec<Vec<f64>>,
}

pub fn extract_superhedge(decomposition: &GdmDecomposition, lattice: &Lattice) -> Superhedge {
    let r = lattice.params().rate;
    let consumption = decomposition
        .increment
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let g = (r * lattice.time(k)).exp();
            row.iter().map(|d| d * g).collect()
        })
        .collect();
    Superhedge {
        initial_wealth: decomposition.x[0][0],
        pi: decomposition.pi.clone(),
        consumption,
    }
}

/// Wealth and cumulative consumption along one path.
#[derive(Debug, Clone, PartialEq)]
pub struct WealthPath {
    pub prices: Vec<f64>,
    pub wealth: Vec<f64>,
    /// `C_k = Σ_{i<k} c_i e^{r(t_k − t_i)}`, which is `e^{r t_k} A_k`.
    pub consumption: Vec<f64>,
}

impl Superhedge {
    pub fn wealth_along(&self, lattice: &Lattice, moves: &[i8]) -> Result<WealthPath> {
        let growth = (lattice.params().rate * lattice.dt()).exp();
        let mut j = 0i64;
        let mut prices = vec![lattice.spot()];
        let mut wealth = vec![self.initial_wealth];
        let mut consumption = vec![0.0];
        for (k, &mv) in moves.iter().enumerate() {
            let idx = (j + k as i64) as usize;
            if k >= self.pi.len() || !(-1..=1).contains(&mv) {
                return Err(Error::IndexOutOfRange { k: k + 1, j });
            }
            let c = self.consumption[k][idx];
            let units = self.pi[k][idx];
            j += mv as i64;
            let next = lattice.node_price(k + 1, j)?;
            let y = (wealth[k] - c) * growth + units * (next - prices[k] * growth);
            consumption.push((consumption[k] + c) * growth);
            prices.push(next);
            wealth.push(y);
        }
        Ok(WealthPath {
            prices,
            wealth,
            consumption,
        })
    }
}

/// Summary of a superhedge check over every lattice path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HedgeReport {
    pub paths: usize,
    /// Smallest `wealth − payoff` seen at any step of any path.
    pub worst_margin: f64,
    pub worst_path: usize,
}

impl HedgeReport {
    pub fn dominates(&self, slack: f64) -> bool {
        self.worst_margin >= -slack
    }
}

/// Runs the hedge along all `3ⁿ` paths, checking wealth against the payoff
/// at every step. Both endpoints charge every child, so the path set covers
/// the support of every volatility scenario.
pub fn verify_superhedge(hedge: &Superhedge, lattice: &Lattice, payoff: &Payoff) -> Result<HedgeReport> {
    let n = lattice.n_steps();
    let mut worst = f64::INFINITY;
    let mut worst_path = 0;
    let mut count = 0;
    for (p, moves) in lattice_paths(n).enumerate() {
        let w = hedge.wealth_along(lattice, &moves)?;
        for (s, y) in w.prices.iter().zip(&w.wealth) {
            let margin = y - payoff.eval(*s);
            if margin < worst {
                worst = margin;
                worst_path = p;
            }
        }
        count += 1;
    }
    Ok(HedgeReport {
        paths: count,
        worst_margin: worst,
        worst_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcore::GParams;
    use crate::lattice::{build_lattice, payoff_surface};
    use crate::oracle::single_measure_fold;
    use crate::stopping::{european_surface, snell_envelope};

    fn uvm(n: usize) -> Lattice {
        build_lattice(100.0, 1.0, n, GParams::new(0.2, 0.3, 0.05).unwrap()).unwrap()
    }

    #[test]
    fn constant_surface_is_supermartingale() {
        let lattice = build_lattice(100.0, 1.0, 3, GParams::new(0.2, 0.3, 0.0).unwrap()).unwrap();
        let rows = (0..=3).map(|k| vec![5.0; 2 * k + 1]).collect();
        let surface = ValueSurface::new(rows, SurfaceSide::Upper);
        let check = check_g_supermartingale(&surface, &lattice, Side::Upper);
        assert!(check.holds);
        assert_eq!(check.worst_violation, 0.0);
        assert_eq!(check.worst_node, None);
    }

    #[test]
    fn raw_put_payoff_violates_at_the_strike() {
        let lattice = uvm(3);
        let surface = payoff_surface(&lattice, &Payoff::put(100.0).unwrap());
        let check = check_g_supermartingale(&surface, &lattice, Side::Upper);
        assert!(!check.holds);
        let (_, j) = check.worst_node.unwrap();
        assert_eq!(j, 0);
        assert!(matches!(gdm_decompose(&surface, &lattice), Err(Error::NotSupermartingale { j: 0, .. })));
    }

    #[test]
    fn snell_surfaces_decompose() {
        let put = Payoff::put(100.0).unwrap();
        for n in 1..=4 {
            let lattice = uvm(n);
            for side in [Side::Upper, Side::Lower] {
                let surface = snell_envelope(&lattice, &put, side).unwrap();
                assert!(check_g_supermartingale(&surface, &lattice, side).holds);
                let dec = gdm_decompose(&surface, &lattice).unwrap();
                assert!(dec.residual() <= 1e-12);
                assert!(dec.min_increment() >= 0.0);
                assert!(dec.martingale_defect(&lattice) <= 1e-9);
                for moves in lattice_paths(n) {
                    let path = dec.along(&moves).unwrap();
                    assert_eq!(path.a[0], 0.0);
                    for k in 0..=n {
                        let rebuilt = path.m[k] - path.a[k];
                        assert!((rebuilt - path.x[k]).abs() <= 1e-12 * path.x[k].abs().max(1.0));
                    }
                    assert!(path.a.windows(2).all(|w| w[1] >= w[0] - 1e-12));
                }
            }
        }
    }

    #[test]
    fn reversed_order_agrees() {
        let lattice = uvm(40);
        let tab = Payoff::tabulated(vec![(80.0, 0.0), (100.0, 12.0), (130.0, 3.0)]).unwrap();
        for side in [Side::Upper, Side::Lower] {
            let surface = snell_envelope(&lattice, &tab, side).unwrap();
            let a = gdm_decompose_ordered(&surface, &lattice, ChildOrder::Ascending).unwrap();
            let b = gdm_decompose_ordered(&surface, &lattice, ChildOrder::Descending).unwrap();
            assert!(a.max_abs_diff(&b) <= 1e-12);
        }
    }

    #[test]
    fn convex_european_has_no_consumption() {
        let lattice = uvm(30);
        let surface = european_surface(&lattice, &Payoff::call(100.0).unwrap(), Side::Upper).unwrap();
        let dec = gdm_decompose(&surface, &lattice).unwrap();
        assert!(dec.increments().iter().flatten().all(|d| d.abs() <= 1e-12));
    }

    #[test]
    fn classical_put_consumes_only_when_exercising() {
        let lattice = build_lattice(100.0, 1.0, 25, GParams::classical(0.25, 0.06).unwrap()).unwrap();
        let put = Payoff::put(100.0).unwrap();
        let dec = gdm_decompose(&snell_envelope(&lattice, &put, Side::Upper).unwrap(), &lattice).unwrap();
        let fold = single_measure_fold(&lattice, &put, Endpoint::High, true);
        let r = lattice.params().rate;
        let mut positive = 0;
        for k in 0..25 {
            for (idx, prem) in fold.premium[k].iter().enumerate() {
                let d = dec.increments()[k][idx] * (r * lattice.time(k)).exp();
                assert!((d - prem).abs() <= 1e-10, "k={k} idx={idx}");
                assert_eq!(d > 1e-12, *prem > 1e-12);
                positive += (d > 1e-12) as usize;
            }
        }
        assert!(positive > 0);
    }

    #[test]
    fn two_step_by_hand() {
        let lattice = uvm(2);
        let put = Payoff::put(100.0).unwrap();
        let dec = gdm_decompose(&snell_envelope(&lattice, &put, Side::Upper).unwrap(), &lattice).unwrap();
        let disc = lattice.discount();
        let st = lattice.stencil();
        let prices = lattice.prices_at(2);
        let f2: Vec<f64> = prices.iter().map(|s| (100.0 - s).max(0.0)).collect();
        let one = lattice.prices_at(1);
        let mut v1 = [0.0; 3];
        for i in 0..3 {
            let e = Endpoint::BOTH
                .map(|e| {
                    let p = st.probabilities(e);
                    p[0] * f2[i] + p[1] * f2[i + 1] + p[2] * f2[i + 2]
                })
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max);
            v1[i] = (100.0 - one[i]).max(0.0).max(disc * e);
            let d = v1[i] * disc - disc * disc * e;
            assert!((dec.increment(1, i as i64 - 1).unwrap() - d).abs() < 1e-13);
            let slope = (f2[i + 2] - f2[i]) / (prices[i + 2] - prices[i]);
            assert!((dec.pi(1, i as i64 - 1).unwrap() - slope).abs() < 1e-13);
        }
        let e0 = Endpoint::BOTH
            .map(|e| st.expectation(e, &v1))
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        let v0 = disc * e0;
        assert!(dec.increment(0, 0).unwrap().abs() < 1e-13);
        assert!((dec.discounted_value(0, 0).unwrap() - v0).abs() < 1e-13);
    }

    #[test]
    fn zero_payoff_hedge_is_empty() {
        let lattice = uvm(4);
        let zero = Payoff::tabulated(vec![(100.0, 0.0)]).unwrap();
        let dec = gdm_decompose(&snell_envelope(&lattice, &zero, Side::Upper).unwrap(), &lattice).unwrap();
        let hedge = extract_superhedge(&dec, &lattice);
        assert!(hedge.pi.iter().flatten().all(|&p| p == 0.0));
        assert!(hedge.consumption.iter().flatten().all(|&c| c == 0.0));
    }

    #[test]
    fn classical_call_delta() {
        let lattice = build_lattice(100.0, 0.5, 12, GParams::classical(0.2, 0.03).unwrap()).unwrap();
        let call = Payoff::call(95.0).unwrap();
        let dec = gdm_decompose(&european_surface(&lattice, &call, Side::Upper).unwrap(), &lattice).unwrap();
        let fold = single_measure_fold(&lattice, &call, Endpoint::High, false);
        for k in 0..12 {
            let s = lattice.prices_at(k + 1);
            for idx in 0..(2 * k + 1) {
                let v = &fold.values[k + 1];
                let delta = (v[idx + 2] - v[idx]) / (s[idx + 2] - s[idx]);
                assert!((dec.hedge_ratios()[k][idx] - delta).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn consumption_matches_a() {
        let lattice = uvm(4);
        let put = Payoff::put(110.0).unwrap();
        let dec = gdm_decompose(&snell_envelope(&lattice, &put, Side::Upper).unwrap(), &lattice).unwrap();
        let hedge = extract_superhedge(&dec, &lattice);
        let r = lattice.params().rate;
        for moves in lattice_paths(4) {
            let path = dec.along(&moves).unwrap();
            let w = hedge.wealth_along(&lattice, &moves).unwrap();
            for k in 0..=4 {
                let want = path.a[k] * (r * lattice.time(k)).exp();
                assert!((w.consumption[k] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn put_superhedge_on_all_paths() {
        let lattice = uvm(3);
        let put = Payoff::put(100.0).unwrap();
        let dec = gdm_decompose(&snell_envelope(&lattice, &put, Side::Upper).unwrap(), &lattice).unwrap();
        let report = verify_superhedge(&extract_superhedge(&dec, &lattice), &lattice, &put).unwrap();
        assert_eq!(report.paths, 27);
        assert!(report.dominates(1e-9), "{report:?}");
    }
}
