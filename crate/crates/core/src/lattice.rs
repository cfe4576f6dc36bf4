//! Recombining trinomial lattice for the risk-neutral price dynamics
//! `dS = S (r dt + dB̃)` with `B̃` a G-Brownian motion.
//!
//! Node `(k, j)` sits at time `k·dt` and price `spot·exp(j·h)` for
//! `j ∈ −k..=k`. The geometry is shared by every admissible volatility; only
//! the transition probabilities depend on σ². For a variance `s`,
//!
//! ```text
//! q   = s·dt / h²
//! p_u = (e^{r dt} − 1 + q (1 − e^{−h})) / (e^h − e^{−h})
//! p_d = q − p_u
//! p_m = 1 − q
//! ```
//!
//! so the discounted price is an exact martingale under every endpoint, the
//! log-variance is `s·dt` up to `O(dt²)`, and the log-mean is
//! `(r − s/2)·dt` up to `O(dt²)`. All three probabilities are affine in `s`.
//!
//! The spatial step is `h = σ̄·sqrt(λ·dt)`. With the default stretch `λ = 1`
//! the high endpoint has `p_m = 0`, which is what makes the lattice ask price
//! superreplicable with the stock alone (see `gdm`).

use crate::error::{Error, Result};
use crate::gcore::{Endpoint, GParams, Stencil};
use crate::surface::{SurfaceSide, ValueSurface};

pub const DEFAULT_STRETCH: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    spot: f64,
    maturity: f64,
    n_steps: usize,
    dt: f64,
    log_step: f64,
    params: GParams,
    stencil: Stencil,
    discount: f64,
}

/// Builder for a [`Lattice`] with non-default geometry.
#[derive(Debug, Clone)]
pub struct LatticeBuilder {
    spot: f64,
    maturity: f64,
    n_steps: usize,
    params: GParams,
    stretch: f64,
    log_step: Option<f64>,
}

/// Lattice with the default stretch.
pub fn build_lattice(spot: f64, maturity: f64, n_steps: usize, params: GParams) -> Result<Lattice> {
    Lattice::builder(spot, maturity, n_steps, params).build()
}

impl LatticeBuilder {
    /// Stretch `λ ≥ 1` in `h = σ̄·sqrt(λ·dt)`.
    pub fn stretch(mut self, stretch: f64) -> Self {
        self.stretch = stretch;
        self
    }

    /// Fixes the log-price step directly, overriding the stretch. Used to put
    /// several parameter sets on one geometry.
    pub fn log_step(mut self, h: f64) -> Self {
        self.log_step = Some(h);
        self
    }

    pub fn build(self) -> Result<Lattice> {
        let LatticeBuilder {
            spot,
            maturity,
            n_steps,
            params,
            stretch,
            log_step,
        } = self;
        params.validate()?;
        if !(spot.is_finite() && spot > 0.0) {
            return Err(Error::InvalidGrid("spot must be > 0".into()));
        }
        if !(maturity.is_finite() && maturity > 0.0) {
            return Err(Error::InvalidGrid("maturity must be > 0".into()));
        }
        if n_steps == 0 {
            return Err(Error::InvalidGrid("n_steps must be >= 1".into()));
        }
        let dt = maturity / n_steps as f64;

        // A frozen asset (σ̄ = 0) has no natural scale; any h works when the
        // stencil stays at the middle node.
        let ref_var = if params.sigma_high > 0.0 {
            params.variance(Endpoint::High)
        } else {
            1.0
        };

        let (h, q_of): (f64, Box<dyn Fn(f64) -> f64>) = match log_step {
            Some(h) => {
                if !(h.is_finite() && h > 0.0) {
                    return Err(Error::InvalidGrid("log_step must be > 0".into()));
                }
                (h, Box::new(move |s: f64| s * dt / (h * h)))
            }
            None => {
                if !(stretch.is_finite() && stretch >= 1.0) {
                    return Err(Error::InvalidGrid("stretch must be >= 1".into()));
                }
                let h = (ref_var * stretch * dt).sqrt();
                (h, Box::new(move |s: f64| s / ref_var / stretch))
            }
        };

        let growth = (params.rate * dt).exp_m1();
        let span = 2.0 * h.sinh();
        let lift = -(-h).exp_m1();
        let mut probs = [[0.0; 3]; 2];
        for endpoint in Endpoint::BOTH {
            let q = q_of(params.variance(endpoint));
            if q > 1.0 {
                return Err(Error::InvalidGrid(format!(
                    "log step {h:.4e} too small for sigma_high (q = {q:.4})"
                )));
            }
            let up = (growth + q * lift) / span;
            let down = q - up;
            let mid = 1.0 - q;
            let row = [down, mid, up].map(|p| if p.abs() < 1e-15 { 0.0 } else { p });
            probs[endpoint.index()] = row;
        }
        let stencil = Stencil::new(probs).map_err(|err| {
            Error::InvalidGrid(format!(
                "no valid stencil for dt = {dt:.4e}, h = {h:.4e}, rate = {}: {err}",
                params.rate
            ))
        })?;

        Ok(Lattice {
            spot,
            maturity,
            n_steps,
            dt,
            log_step: h,
            params,
            stencil,
            discount: (-params.rate * dt).exp(),
        })
    }
}

impl Lattice {
    pub fn builder(spot: f64, maturity: f64, n_steps: usize, params: GParams) -> LatticeBuilder {
        LatticeBuilder {
            spot,
            maturity,
            n_steps,
            params,
            stretch: DEFAULT_STRETCH,
            log_step: None,
        }
    }

    pub fn spot(&self) -> f64 {
        self.spot
    }

    pub fn maturity(&self) -> f64 {
        self.maturity
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn log_step(&self) -> f64 {
        self.log_step
    }

    pub fn params(&self) -> &GParams {
        &self.params
    }

    pub fn stencil(&self) -> &Stencil {
        &self.stencil
    }

    /// One-step discount factor `e^{−r·dt}`.
    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Nodes at step `k` (always `2k + 1`).
    pub fn width(k: usize) -> usize {
        2 * k + 1
    }

    pub fn node_price(&self, k: usize, j: i64) -> Result<f64> {
        if k > self.n_steps || j.unsigned_abs() as usize > k {
            return Err(Error::IndexOutOfRange { k, j });
        }
        Ok(self.price_unchecked(j))
    }

    pub(crate) fn price_unchecked(&self, j: i64) -> f64 {
        self.spot * (j as f64 * self.log_step).exp()
    }

    /// Prices of all nodes at step `k`, ordered by `j` ascending.
    pub fn prices_at(&self, k: usize) -> Vec<f64> {
        let k = k.min(self.n_steps) as i64;
        (-k..=k).map(|j| self.price_unchecked(j)).collect()
    }
}

/// Piecewise-linear payoff kink: slope changes from `left` to `right` at `at`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kink {
    pub at: f64,
    pub value: f64,
    pub left: f64,
    pub right: f64,
}

/// Claim payoff `f(S)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Payoff {
    Put { strike: f64 },
    Call { strike: f64 },
    /// `(price, value)` knots, strictly increasing in price; linear in
    /// between and constant outside.
    Tabulated { knots: Vec<(f64, f64)> },
}

impl Payoff {
    pub fn put(strike: f64) -> Result<Self> {
        check_strike(strike)?;
        Ok(Payoff::Put { strike })
    }

    pub fn call(strike: f64) -> Result<Self> {
        check_strike(strike)?;
        Ok(Payoff::Call { strike })
    }

    pub fn tabulated(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidPayoff("tabulated payoff needs at least one knot".into()));
        }
        for &(s, v) in &knots {
            if !(s.is_finite() && v.is_finite()) {
                return Err(Error::InvalidPayoff("tabulated knots must be finite".into()));
            }
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidPayoff(
                "tabulated prices must be strictly increasing".into(),
            ));
        }
        Ok(Payoff::Tabulated { knots })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Payoff::Put { .. } => "put",
            Payoff::Call { .. } => "call",
            Payoff::Tabulated { .. } => "tabulated",
        }
    }

    pub fn strike(&self) -> Option<f64> {
        match self {
            Payoff::Put { strike } | Payoff::Call { strike } => Some(*strike),
            Payoff::Tabulated { .. } => None,
        }
    }

    /// Characteristic money scale used for tolerances: the strike, or the
    /// largest absolute tabulated value.
    pub fn scale(&self) -> f64 {
        match self {
            Payoff::Put { strike } | Payoff::Call { strike } => *strike,
            Payoff::Tabulated { knots } => knots
                .iter()
                .map(|&(_, v)| v.abs())
                .fold(0.0, f64::max)
                .max(1.0),
        }
    }

    pub fn eval(&self, price: f64) -> f64 {
        match self {
            Payoff::Put { strike } => (strike - price).max(0.0),
            Payoff::Call { strike } => (price - strike).max(0.0),
            Payoff::Tabulated { knots } => interpolate(knots, price),
        }
    }

    /// Lower bound of the payoff over all prices.
    pub fn floor(&self) -> f64 {
        match self {
            Payoff::Put { .. } | Payoff::Call { .. } => 0.0,
            Payoff::Tabulated { knots } => knots.iter().map(|&(_, v)| v).fold(f64::INFINITY, f64::min),
        }
    }

    /// Slope changes of the payoff, in increasing price order.
    pub fn kinks(&self) -> Vec<Kink> {
        match self {
            Payoff::Put { strike } => vec![Kink {
                at: *strike,
                value: 0.0,
                left: -1.0,
                right: 0.0,
            }],
            Payoff::Call { strike } => vec![Kink {
                at: *strike,
                value: 0.0,
                left: 0.0,
                right: 1.0,
            }],
            Payoff::Tabulated { knots } => {
                let slopes: Vec<f64> = knots
                    .windows(2)
                    .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
                    .collect();
                knots
                    .iter()
                    .enumerate()
                    .filter_map(|(i, &(at, value))| {
                        let left = if i == 0 { 0.0 } else { slopes[i - 1] };
                        let right = slopes.get(i).copied().unwrap_or(0.0);
                        (left != right).then_some(Kink {
                            at,
                            value,
                            left,
                            right,
                        })
                    })
                    .collect()
            }
        }
    }
}

fn check_strike(strike: f64) -> Result<()> {
    if strike.is_finite() && strike > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidPayoff("strike must be > 0".into()))
    }
}

fn interpolate(knots: &[(f64, f64)], price: f64) -> f64 {
    let first = knots[0];
    let last = knots[knots.len() - 1];
    if price <= first.0 {
        return first.1;
    }
    if price >= last.0 {
        return last.1;
    }
    let idx = knots.partition_point(|&(s, _)| s <= price);
    let (s0, v0) = knots[idx - 1];
    let (s1, v1) = knots[idx];
    v0 + (v1 - v0) * (price - s0) / (s1 - s0)
}

/// Payoff evaluated at every node.
pub fn payoff_surface(lattice: &Lattice, payoff: &Payoff) -> ValueSurface {
    let values = (0..=lattice.n_steps())
        .map(|k| lattice.prices_at(k).into_iter().map(|s| payoff.eval(s)).collect())
        .collect();
    ValueSurface::new(values, SurfaceSide::Plain)
}

/// All `3ⁿ` lattice paths as move sequences in `{−1, 0, 1}`.
pub fn lattice_paths(n_steps: usize) -> impl Iterator<Item = Vec<i8>> {
    let count = 3usize.pow(n_steps as u32);
    (0..count).map(move |mut code| {
        let mut moves = Vec::with_capacity(n_steps);
        for _ in 0..n_steps {
            moves.push((code % 3) as i8 - 1);
            code /= 3;
        }
        moves
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcore::Endpoint;

    fn uvm() -> GParams {
        GParams::new(0.1, 0.3, 0.05).unwrap()
    }

    fn moments(lattice: &Lattice, endpoint: Endpoint) -> (f64, f64) {
        let p = lattice.stencil().probabilities(endpoint);
        let h = lattice.log_step();
        let mean = (p[2] - p[0]) * h;
        let second = (p[2] + p[0]) * h * h;
        (mean, second - mean * mean)
    }

    #[test]
    fn one_step_classical_tree() {
        let lattice = build_lattice(100.0, 1.0, 1, GParams::classical(0.2, 0.05).unwrap()).unwrap();
        for endpoint in Endpoint::BOTH {
            let p = lattice.stencil().probabilities(endpoint);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert_eq!(
            lattice.stencil().probabilities(Endpoint::Low),
            lattice.stencil().probabilities(Endpoint::High)
        );
    }

    #[test]
    fn zero_variance_zero_rate_stays_put() {
        let lattice = build_lattice(100.0, 1.0, 10, GParams::new(0.0, 0.3, 0.0).unwrap()).unwrap();
        assert_eq!(lattice.stencil().probabilities(Endpoint::Low), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn desk_stencil_is_valid() {
        for stretch in [1.0, 1.5] {
            let lattice = Lattice::builder(100.0, 1.0, 4, uvm()).stretch(stretch).build().unwrap();
            for endpoint in Endpoint::BOTH {
                for p in lattice.stencil().probabilities(endpoint) {
                    assert!((0.0..=1.0).contains(&p));
                }
            }
        }
    }

    #[test]
    fn frozen_asset_with_drift_is_invalid() {
        let err = build_lattice(100.0, 1.0, 10, GParams::new(0.0, 0.3, 0.05).unwrap()).unwrap_err();
        assert!(matches!(err, Error::InvalidGrid(_)));
        // too coarse for the low endpoint
        assert!(build_lattice(100.0, 1.0, 1, uvm()).is_err());
    }

    #[test]
    fn bad_inputs_rejected() {
        assert!(build_lattice(0.0, 1.0, 4, uvm()).is_err());
        assert!(build_lattice(100.0, 0.0, 4, uvm()).is_err());
        assert!(build_lattice(100.0, 1.0, 0, uvm()).is_err());
        assert!(Lattice::builder(100.0, 1.0, 4, uvm()).stretch(0.5).build().is_err());
        assert!(Lattice::builder(100.0, 1.0, 4, uvm()).log_step(0.01).build().is_err());
    }

    #[test]
    fn moment_matching_is_second_order() {
        let params = GParams::new(0.15, 0.3, 0.05).unwrap();
        let mut worst = 0.0f64;
        for n in [10usize, 40, 160, 640] {
            let lattice = build_lattice(100.0, 1.0, n, params).unwrap();
            let dt = lattice.dt();
            for endpoint in Endpoint::BOTH {
                let s = params.variance(endpoint);
                let (mean, var) = moments(&lattice, endpoint);
                let c_mean = (mean - (params.rate - s / 2.0) * dt).abs() / (dt * dt);
                let c_var = (var - s * dt).abs() / (dt * dt);
                worst = worst.max(c_mean).max(c_var);
            }
        }
        assert!(worst < 0.05, "moment constant {worst}");
    }

    #[test]
    fn discounted_price_is_martingale() {
        let lattice = build_lattice(100.0, 1.0, 50, uvm()).unwrap();
        let h = lattice.log_step();
        for endpoint in Endpoint::BOTH {
            let growth = lattice.stencil().expectation(endpoint, &[(-h).exp(), 1.0, h.exp()]);
            assert!((growth * lattice.discount() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn node_prices() {
        let lattice = build_lattice(100.0, 1.0, 4, uvm()).unwrap();
        assert_eq!(lattice.node_price(0, 0).unwrap(), 100.0);
        for k in 0..=4 {
            assert_eq!(lattice.node_price(k, 0).unwrap(), 100.0);
            assert_eq!(lattice.prices_at(k).len(), 2 * k + 1);
        }
        assert!(matches!(lattice.node_price(2, 3), Err(Error::IndexOutOfRange { .. })));
        assert!(lattice.node_price(5, 0).is_err());

        let fixed = Lattice::builder(100.0, 1.0, 16, uvm()).log_step(0.1).build().unwrap();
        let expected = 100.0 * 0.2f64.exp();
        assert!((fixed.node_price(2, 2).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn payoffs() {
        let put = Payoff::put(100.0).unwrap();
        assert_eq!(put.eval(90.0), 10.0);
        assert_eq!(put.eval(110.0), 0.0);
        assert!(Payoff::put(0.0).is_err());
        assert!(Payoff::call(f64::NAN).is_err());

        let table = Payoff::tabulated(vec![(80.0, 0.0), (100.0, 10.0), (120.0, 4.0)]).unwrap();
        // hand interpolation: 10 + (4 − 10)·(105 − 100)/20 = 8.5
        assert!((table.eval(105.0) - 8.5).abs() < 1e-14);
        assert_eq!(table.eval(50.0), 0.0);
        assert_eq!(table.eval(500.0), 4.0);
        assert_eq!(table.floor(), 0.0);
        assert_eq!(table.kinks().len(), 3);
        assert!(Payoff::tabulated(vec![(1.0, 0.0), (1.0, 2.0)]).is_err());
        assert!(Payoff::tabulated(vec![]).is_err());
    }

    #[test]
    fn payoff_surface_monotone() {
        let lattice = build_lattice(100.0, 1.0, 6, uvm()).unwrap();
        let put = payoff_surface(&lattice, &Payoff::put(100.0).unwrap());
        let call = payoff_surface(&lattice, &Payoff::call(100.0).unwrap());
        for k in 0..=6 {
            let p = put.slice(k);
            let c = call.slice(k);
            assert!(p.windows(2).all(|w| w[1] <= w[0]));
            assert!(c.windows(2).all(|w| w[1] >= w[0]));
            assert!(p.iter().all(|&v| v >= 0.0));
        }
    }
}
