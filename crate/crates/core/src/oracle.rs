//! Reference values that do not go through the pricing engines.
//!
//! * Exhaustive enumeration of node-wise stopping rules and node-wise
//!   volatility assignments, evaluated by forward propagation of probability
//!   mass.
//! * A single-measure tree fold.
//! * The Cox-Ross-Rubinstein binomial tree and the Black-Scholes formula.
//!
//! Nothing here calls into `stopping`, `gdm`, `pde`, or the one-step
//! expectation of `gcore`; the lattice is only used for its node prices and
//! stencil probabilities.

use crate::error::{Error, Result};
use crate::gcore::{Endpoint, Side};
use crate::lattice::{Lattice, Payoff};
#[cfg(test)]
use crate::lattice::lattice_paths;

/// Scenario budget for exhaustive enumeration.
pub const DEFAULT_BUDGET: u128 = 10_000_000;

/// Put or call for the closed-form references.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptionKind {
    Put,
    Call,
}

impl OptionKind {
    fn intrinsic(self, spot: f64, strike: f64) -> f64 {
        match self {
            OptionKind::Put => (strike - spot).max(0.0),
            OptionKind::Call => (spot - strike).max(0.0),
        }
    }
}

/// One stopping rule and one volatility assignment, both functions of the
/// node only (hence adapted). Rows cover steps `0..n`; maturity always stops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioEnumeration {
    pub exercise: Vec<Vec<bool>>,
    pub endpoint: Vec<Vec<Endpoint>>,
}

impl ScenarioEnumeration {
    /// Decision nodes before maturity: `n²`.
    pub fn decision_nodes(n_steps: usize) -> u32 {
        (n_steps * n_steps) as u32
    }

    /// Number of adapted node-wise stopping rules.
    pub fn count_rules(n_steps: usize) -> u128 {
        pow2(Self::decision_nodes(n_steps))
    }

    /// Number of node-wise endpoint assignments.
    pub fn count_assignments(n_steps: usize) -> u128 {
        pow2(Self::decision_nodes(n_steps))
    }

    fn from_bits(n_steps: usize, rule: u64, assignment: u64) -> Self {
        let mut exercise = Vec::with_capacity(n_steps);
        let mut endpoint = Vec::with_capacity(n_steps);
        let mut bit = 0;
        for k in 0..n_steps {
            let mut ex = Vec::with_capacity(2 * k + 1);
            let mut ep = Vec::with_capacity(2 * k + 1);
            for _ in 0..(2 * k + 1) {
                ex.push(rule >> bit & 1 == 1);
                ep.push(if assignment >> bit & 1 == 1 {
                    Endpoint::High
                } else {
                    Endpoint::Low
                });
                bit += 1;
            }
            exercise.push(ex);
            endpoint.push(ep);
        }
        ScenarioEnumeration { exercise, endpoint }
    }

    /// Discounted expected stopped payoff, by forward propagation.
    pub fn evaluate(&self, lattice: &Lattice, payoff: &Payoff) -> f64 {
        let n = lattice.n_steps();
        let disc = lattice.discount();
        let mut mass = vec![1.0];
        let mut total = 0.0;
        let mut factor = 1.0;
        for k in 0..n {
            let prices = lattice.prices_at(k);
            let mut next = vec![0.0; 2 * k + 3];
            for idx in 0..mass.len() {
                let m = mass[idx];
                if m == 0.0 {
                    continue;
                }
                if self.exercise[k][idx] {
                    total += m * factor * payoff.eval(prices[idx]);
                } else {
                    let p = lattice.stencil().probabilities(self.endpoint[k][idx]);
                    for (c, pc) in p.iter().enumerate() {
                        next[idx + c] += m * pc;
                    }
                }
            }
            mass = next;
            factor *= disc;
        }
        let prices = lattice.prices_at(n);
        for (idx, m) in mass.iter().enumerate() {
            total += m * factor * payoff.eval(prices[idx]);
        }
        total
    }
}

fn pow2(bits: u32) -> u128 {
    if bits >= 127 {
        u128::MAX
    } else {
        1u128 << bits
    }
}

/// Result of an exhaustive search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BruteForce {
    /// Upper: `max_τ max_σ`. Lower: `max_τ min_σ`.
    pub value: f64,
    /// Lower side only: `min_τ min_σ`, the literal bid reading.
    pub literal: Option<f64>,
    pub scenarios: u128,
}

/// Enumerates every `(rule, assignment)` pair without any factorization.
/// Only feasible for `n_steps ≤ 3`.
pub fn brute_force_exhaustive(lattice: &Lattice, payoff: &Payoff, side: Side, american: bool, budget: u128) -> Result<BruteForce> {
    let n = lattice.n_steps();
    let rules = if american { ScenarioEnumeration::count_rules(n) } else { 1 };
    let assignments = ScenarioEnumeration::count_assignments(n);
    let required = rules.saturating_mul(assignments);
    if required > budget {
        return Err(Error::TooLarge { required, budget });
    }
    let mut best = f64::NEG_INFINITY;
    let mut literal = f64::INFINITY;
    for rule in 0..rules as u64 {
        let mut inner_max = f64::NEG_INFINITY;
        let mut inner_min = f64::INFINITY;
        for assignment in 0..assignments as u64 {
            let v = ScenarioEnumeration::from_bits(n, rule, assignment).evaluate(lattice, payoff);
            inner_max = inner_max.max(v);
            inner_min = inner_min.min(v);
        }
        best = best.max(match side {
            Side::Upper => inner_max,
            Side::Lower => inner_min,
        });
        literal = literal.min(inner_min);
    }
    Ok(BruteForce {
        value: best,
        literal: (side == Side::Lower).then_some(literal),
        scenarios: required,
    })
}

/// Exhaustive American value with the default budget.
pub fn brute_force_value(lattice: &Lattice, payoff: &Payoff, side: Side) -> Result<BruteForce> {
    brute_force_with_budget(lattice, payoff, side, DEFAULT_BUDGET)
}

/// Exhaustive American value.
///
/// Every effective combination of stopping flags and endpoint choices on the
/// nodes before the last decision step is enumerated. The last decision
/// step is folded in exactly: once the mass arriving at each of its nodes is
/// fixed, its choices only enter through a sum over those nodes. For the
/// lower side the stopping flags of the last step are still enumerated
/// explicitly, since the minimum over assignments does not split.
pub fn brute_force_with_budget(lattice: &Lattice, payoff: &Payoff, side: Side, budget: u128) -> Result<BruteForce> {
    let n = lattice.n_steps();
    let last = n - 1;
    let disc = lattice.discount();
    let stencil = lattice.stencil();

    // local options at the last decision step, in time-zero money
    let last_prices = lattice.prices_at(last);
    let final_prices = lattice.prices_at(n);
    let f_last = disc.powi(last as i32);
    let f_final = disc.powi(n as i32);
    let local: Vec<[f64; 3]> = (0..(2 * last + 1))
        .map(|idx| {
            let exercise = f_last * payoff.eval(last_prices[idx]);
            let cont = |e: Endpoint| {
                let p = stencil.probabilities(e);
                f_final * (0..3).map(|c| p[c] * payoff.eval(final_prices[idx + c])).sum::<f64>()
            };
            [exercise, cont(Endpoint::Low), cont(Endpoint::High)]
        })
        .collect();

    let rules = upper_rules(lattice, budget)?;
    let required: u128 = rules.iter().map(|r| r.weight()).sum();
    if required > budget {
        return Err(Error::TooLarge { required, budget });
    }

    let mut best = f64::NEG_INFINITY;
    let mut literal = f64::INFINITY;
    for rule in &rules {
        let outcomes = rule.outcomes(lattice, payoff);
        match side {
            Side::Upper => {
                for (acc, mass) in &outcomes {
                    let v = acc + dot(mass, &local, |o| o[0].max(o[1]).max(o[2]));
                    best = best.max(v);
                }
            }
            Side::Lower => {
                for (acc, mass) in &outcomes {
                    let v = acc + dot(mass, &local, |o| o[0].min(o[1]).min(o[2]));
                    literal = literal.min(v);
                }
                let reach = &rule.last_reachable;
                for mask in 0..(1u64 << reach.len()) {
                    let mut choice: Vec<f64> = local.iter().map(|o| o[1].min(o[2])).collect();
                    for (b, &idx) in reach.iter().enumerate() {
                        if mask >> b & 1 == 1 {
                            choice[idx] = local[idx][0];
                        }
                    }
                    let worst = outcomes
                        .iter()
                        .map(|(acc, mass)| acc + mass.iter().zip(&choice).map(|(m, c)| m * c).sum::<f64>())
                        .fold(f64::INFINITY, f64::min);
                    best = best.max(worst);
                }
            }
        }
    }
    Ok(BruteForce {
        value: best,
        literal: (side == Side::Lower).then_some(literal),
        scenarios: required,
    })
}

fn dot(mass: &[f64], local: &[[f64; 3]], pick: impl Fn(&[f64; 3]) -> f64) -> f64 {
    mass.iter().zip(local).map(|(m, o)| m * pick(o)).sum()
}

/// Stopping flags on the nodes before the last decision step, restricted to
/// the nodes the rule can reach.
struct UpperRule {
    /// `(step, idx, exercise)` for every reachable node.
    flags: Vec<(usize, usize, bool)>,
    /// Reachable continuing nodes: their endpoints are enumerated.
    continuing: usize,
    last_reachable: Vec<usize>,
}

impl UpperRule {
    fn weight(&self) -> u128 {
        pow2(self.continuing as u32) * pow2(self.last_reachable.len() as u32)
    }

    /// `(discounted payoff collected, mass at each last-step node)` for each
    /// endpoint assignment on the continuing nodes.
    fn outcomes(&self, lattice: &Lattice, payoff: &Payoff) -> Vec<(f64, Vec<f64>)> {
        let n = lattice.n_steps();
        let last = n - 1;
        let disc = lattice.discount();
        let mut out = Vec::with_capacity(1 << self.continuing);
        for assignment in 0..(1u64 << self.continuing) {
            let mut mass: Vec<Vec<f64>> = (0..=last).map(|k| vec![0.0; 2 * k + 1]).collect();
            mass[0][0] = 1.0;
            let mut acc = 0.0;
            let mut bit = 0;
            for &(k, idx, exercise) in &self.flags {
                let m = mass[k][idx];
                if exercise {
                    acc += m * disc.powi(k as i32) * payoff.eval(lattice.price_unchecked(idx as i64 - k as i64));
                } else {
                    let e = if assignment >> bit & 1 == 1 { Endpoint::High } else { Endpoint::Low };
                    bit += 1;
                    let p = lattice.stencil().probabilities(e);
                    for c in 0..3 {
                        mass[k + 1][idx + c] += m * p[c];
                    }
                }
            }
            out.push((acc, std::mem::take(&mut mass[last])));
        }
        out
    }
}

fn upper_rules(lattice: &Lattice, budget: u128) -> Result<Vec<UpperRule>> {
    let last = lattice.n_steps() - 1;
    let nodes: Vec<(usize, usize)> = (0..last).flat_map(|k| (0..(2 * k + 1)).map(move |i| (k, i))).collect();
    let mut rules = Vec::new();
    let mut total: u128 = 0;
    let mut flags = Vec::new();
    let mut cont: Vec<Vec<bool>> = (0..last).map(|k| vec![false; 2 * k + 1]).collect();
    recurse(&nodes, 0, last, &mut cont, &mut flags, &mut rules, &mut total, budget)?;
    Ok(rules)
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    nodes: &[(usize, usize)],
    pos: usize,
    last: usize,
    cont: &mut Vec<Vec<bool>>,
    flags: &mut Vec<(usize, usize, bool)>,
    rules: &mut Vec<UpperRule>,
    total: &mut u128,
    budget: u128,
) -> Result<()> {
    if pos == nodes.len() {
        let last_reachable: Vec<usize> = (0..(2 * last + 1))
            .filter(|&c| last == 0 || reached(cont, last, c))
            .collect();
        let rule = UpperRule {
            continuing: flags.iter().filter(|f| !f.2).count(),
            flags: flags.clone(),
            last_reachable,
        };
        *total = total.saturating_add(rule.weight());
        if *total > budget {
            return Err(Error::TooLarge { required: *total, budget });
        }
        rules.push(rule);
        return Ok(());
    }
    let (k, idx) = nodes[pos];
    if k > 0 && !reached(cont, k, idx) {
        return recurse(nodes, pos + 1, last, cont, flags, rules, total, budget);
    }
    for exercise in [true, false] {
        cont[k][idx] = !exercise;
        flags.push((k, idx, exercise));
        recurse(nodes, pos + 1, last, cont, flags, rules, total, budget)?;
        flags.pop();
    }
    cont[k][idx] = false;
    Ok(())
}

/// Node `(k, c)` has a parent at step `k − 1` that continues.
fn reached(cont: &[Vec<bool>], k: usize, c: usize) -> bool {
    let parents = &cont[k - 1];
    (c.saturating_sub(2)..=c.min(parents.len() - 1)).any(|p| parents[p])
}

/// European claim: every node-wise endpoint assignment.
pub fn brute_force_european(lattice: &Lattice, payoff: &Payoff, side: Side) -> Result<BruteForce> {
    brute_force_exhaustive(lattice, payoff, side, false, DEFAULT_BUDGET)
}

/// Tree values under one fixed endpoint, with the early-exercise premium
/// `max(f − C, 0)` at every node before maturity.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleMeasureFold {
    pub values: Vec<Vec<f64>>,
    pub premium: Vec<Vec<f64>>,
}

pub fn single_measure_fold(lattice: &Lattice, payoff: &Payoff, endpoint: Endpoint, american: bool) -> SingleMeasureFold {
    let n = lattice.n_steps();
    let p = lattice.stencil().probabilities(endpoint);
    let disc = lattice.discount();
    let mut values = vec![Vec::new(); n + 1];
    let mut premium = vec![Vec::new(); n];
    values[n] = lattice.prices_at(n).iter().map(|&s| payoff.eval(s)).collect();
    for k in (0..n).rev() {
        let mut row = Vec::new();
        let mut prem = Vec::new();
        for (i, s) in lattice.prices_at(k).into_iter().enumerate() {
            let next = &values[k + 1];
            let cont = disc * (p[0] * next[i] + p[1] * next[i + 1] + p[2] * next[i + 2]);
            let f = payoff.eval(s);
            if american {
                row.push(f.max(cont));
                prem.push((f - cont).max(0.0));
            } else {
                row.push(cont);
                prem.push(0.0);
            }
        }
        values[k] = row;
        premium[k] = prem;
    }
    SingleMeasureFold { values, premium }
}

/// Cox-Ross-Rubinstein binomial price.
#[allow(clippy::too_many_arguments)]
pub fn crr_reference(
    spot: f64,
    strike: f64,
    maturity: f64,
    sigma: f64,
    rate: f64,
    n_steps: usize,
    american: bool,
    kind: OptionKind,
) -> f64 {
    let dt = maturity / n_steps as f64;
    let up = (sigma * dt.sqrt()).exp();
    let down = 1.0 / up;
    let growth = (rate * dt).exp();
    let p = (growth - down) / (up - down);
    let disc = 1.0 / growth;
    let mut values: Vec<f64> = (0..=n_steps)
        .map(|i| kind.intrinsic(spot * up.powi(i as i32) * down.powi((n_steps - i) as i32), strike))
        .collect();
    for step in (0..n_steps).rev() {
        for i in 0..=step {
            let cont = disc * (p * values[i + 1] + (1.0 - p) * values[i]);
            values[i] = if american {
                let s = spot * up.powi(i as i32) * down.powi((step - i) as i32);
                cont.max(kind.intrinsic(s, strike))
            } else {
                cont
            };
        }
    }
    values[0]
}

/// Black-Scholes price of a European option.
pub fn bs_closed_form(spot: f64, strike: f64, maturity: f64, sigma: f64, rate: f64, kind: OptionKind) -> f64 {
    let vol = sigma * maturity.sqrt();
    let disc_strike = strike * (-rate * maturity).exp();
    let d1 = ((spot / strike).ln() + (rate + 0.5 * sigma * sigma) * maturity) / vol;
    let d2 = d1 - vol;
    match kind {
        OptionKind::Call => spot * norm_cdf(d1) - disc_strike * norm_cdf(d2),
        OptionKind::Put => disc_strike * norm_cdf(-d2) - spot * norm_cdf(-d1),
    }
}

/// Standard normal distribution function (Hart's double-precision rational
/// approximation with a continued fraction in the tail).
pub fn norm_cdf(x: f64) -> f64 {
    let z = x.abs();
    let tail = if z > 37.0 {
        0.0
    } else {
        let e = (-0.5 * z * z).exp();
        if z < 7.071_067_811_865_47 {
            let num = ((((((3.526_249_659_989_11e-2 * z + 0.700_383_064_443_688) * z + 6.373_962_203_531_65) * z
                + 33.912_866_078_383)
                * z
                + 112.079_291_497_871)
                * z
                + 221.213_596_169_931)
                * z)
                + 220.206_867_912_376;
            let den = (((((((8.838_834_764_831_84e-2 * z + 1.755_667_163_182_64) * z + 16.064_177_579_207) * z
                + 86.780_732_202_946_1)
                * z
                + 296.564_248_779_674)
                * z
                + 637.333_633_378_831)
                * z
                + 793.826_512_519_948)
                * z)
                + 440.413_735_824_752;
            e * num / den
        } else {
            let cf = z + 1.0 / (z + 2.0 / (z + 3.0 / (z + 4.0 / (z + 0.65))));
            e / cf / 2.506_628_274_631
        }
    };
    if x > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcore::GParams;
    use crate::lattice::build_lattice;

    #[test]
    fn norm_cdf_reference_values() {
        // reference values from an arbitrary-precision evaluation
        let cases = [
            (0.0, 0.5),
            (1.0, 0.841_344_746_068_542_9),
            (-1.0, 0.158_655_253_931_457_05),
            (2.5, 0.993_790_334_674_223_8),
            (-3.7, 1.077_997_334_773_837_3e-4),
            (-8.0, 6.220_960_574_271_785e-16),
        ];
        for (x, want) in cases {
            let got = norm_cdf(x);
            assert!((got - want).abs() <= 1e-14 + 1e-13 * want, "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn counts_match_combinatorics() {
        assert_eq!(ScenarioEnumeration::count_rules(1), 2);
        assert_eq!(ScenarioEnumeration::count_rules(3), 512);
        assert_eq!(ScenarioEnumeration::count_assignments(4), 65_536);
        let lattice = build_lattice(100.0, 1.0, 2, GParams::new(0.2, 0.3, 0.05).unwrap()).unwrap();
        let put = Payoff::put(100.0).unwrap();
        let bf = brute_force_exhaustive(&lattice, &put, Side::Upper, true, DEFAULT_BUDGET).unwrap();
        assert_eq!(bf.scenarios, 256);
        assert_eq!(lattice_paths(3).count(), 27);
    }

    #[test]
    fn exhaustive_budget() {
        let lattice = build_lattice(100.0, 1.0, 4, GParams::new(0.2, 0.3, 0.05).unwrap()).unwrap();
        let put = Payoff::put(100.0).unwrap();
        let err = brute_force_exhaustive(&lattice, &put, Side::Upper, true, DEFAULT_BUDGET).unwrap_err();
        assert!(matches!(err, Error::TooLarge { .. }));
        let lattice = build_lattice(100.0, 1.0, 6, GParams::new(0.2, 0.3, 0.05).unwrap()).unwrap();
        assert!(matches!(brute_force_value(&lattice, &put, Side::Upper), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn factorized_matches_raw() {
        let params = GParams::new(0.2, 0.3, 0.05).unwrap();
        let payoffs = [
            Payoff::put(100.0).unwrap(),
            Payoff::tabulated(vec![(80.0, 0.0), (100.0, 10.0), (120.0, 0.0)]).unwrap(),
        ];
        for n in 1..=3 {
            let lattice = build_lattice(100.0, 1.0, n, params).unwrap();
            for payoff in &payoffs {
                for side in [Side::Upper, Side::Lower] {
                    let raw = brute_force_exhaustive(&lattice, payoff, side, true, DEFAULT_BUDGET).unwrap();
                    let fast = brute_force_value(&lattice, payoff, side).unwrap();
                    assert!((raw.value - fast.value).abs() < 1e-12, "n={n} {side:?}");
                    if let (Some(a), Some(b)) = (raw.literal, fast.literal) {
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn one_step_classical_tree() {
        let lattice = build_lattice(100.0, 1.0, 1, GParams::classical(0.2, 0.05).unwrap()).unwrap();
        let put = Payoff::put(100.0).unwrap();
        let p = lattice.stencil().probabilities(Endpoint::High);
        let h = lattice.log_step();
        let cont = lattice.discount() * (p[0] * (100.0 - 100.0 * (-h).exp()));
        let bf = brute_force_value(&lattice, &put, Side::Upper).unwrap();
        assert!((bf.value - cont.max(0.0)).abs() < 1e-13);
    }

    #[test]
    fn constant_payoff() {
        let lattice = build_lattice(100.0, 1.0, 3, GParams::new(0.2, 0.3, 0.0).unwrap()).unwrap();
        let c = Payoff::tabulated(vec![(50.0, 4.0)]).unwrap();
        for side in [Side::Upper, Side::Lower] {
            assert!((brute_force_value(&lattice, &c, side).unwrap().value - 4.0).abs() < 1e-13);
        }
    }

    #[test]
    fn degenerate_brute_force_equals_single_fold() {
        let lattice = build_lattice(100.0, 1.0, 3, GParams::classical(0.25, 0.05).unwrap()).unwrap();
        let put = Payoff::put(105.0).unwrap();
        let fold = single_measure_fold(&lattice, &put, Endpoint::High, true);
        for side in [Side::Upper, Side::Lower] {
            let bf = brute_force_value(&lattice, &put, side).unwrap();
            assert!((bf.value - fold.values[0][0]).abs() < 1e-12);
        }
    }

    #[test]
    fn crr_properties() {
        let deep = crr_reference(50.0, 100.0, 1.0, 0.2, 0.05, 200, true, OptionKind::Put);
        assert!((deep - 50.0).abs() < 1e-10);
        let call = crr_reference(100.0, 95.0, 1.0, 0.2, 0.05, 300, false, OptionKind::Call);
        let put = crr_reference(100.0, 95.0, 1.0, 0.2, 0.05, 300, false, OptionKind::Put);
        assert!((call - put - (100.0 - 95.0 * (-0.05f64).exp())).abs() < 1e-10 * 100.0);

        let a = crr_reference(100.0, 100.0, 1.0, 0.2, 0.05, 2000, true, OptionKind::Put);
        let b = crr_reference(100.0, 100.0, 1.0, 0.2, 0.05, 4000, true, OptionKind::Put);
        assert!((a - b).abs() / b < 5e-4);
    }

    #[test]
    fn bs_limits_and_crr_agreement() {
        let near_expiry = bs_closed_form(110.0, 100.0, 1e-8, 0.2, 0.05, OptionKind::Call);
        assert!((near_expiry - 10.0).abs() < 1e-6);
        let no_vol = bs_closed_form(110.0, 100.0, 1.0, 1e-9, 0.0, OptionKind::Call);
        assert!((no_vol - 10.0).abs() < 1e-9);
        let bs = bs_closed_form(100.0, 100.0, 1.0, 0.2, 0.05, OptionKind::Call);
        let crr = crr_reference(100.0, 100.0, 1.0, 0.2, 0.05, 2000, false, OptionKind::Call);
        assert!((bs - crr).abs() / bs < 5e-4);
        assert!((bs - 10.450_583_572_185_565).abs() < 1e-10);
    }
}
