//! Uncertainty parameters, the one-dimensional sublinear generator `G`, and
//! the one-step upper/lower expectation over a lattice stencil.
//!
//! With volatility known only to lie in `[sigma_low, sigma_high]`,
//!
//! ```text
//! G(a) = ½ (σ̄² a⁺ − σ̲² a⁻) = ½ sup { σ² a : σ² ∈ [σ̲², σ̄²] }
//! ```
//!
//! A one-step lattice expectation is affine in σ², so its supremum and
//! infimum over the interval are attained at the two endpoints and nowhere
//! else needs to be searched.
//!
//! The drift interval `[mu_low, mu_high]` is carried for completeness. Under
//! the pricing measure the drift is replaced by the short rate, so pricing
//! never reads it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which envelope of the sublinear expectation to take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Supremum over the volatility interval (ask side).
    Upper,
    /// Infimum over the volatility interval (bid side).
    Lower,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Upper => "upper",
            Side::Lower => "lower",
        }
    }
}

/// A volatility endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Low,
    High,
}

impl Endpoint {
    pub const BOTH: [Endpoint; 2] = [Endpoint::Low, Endpoint::High];

    pub fn index(self) -> usize {
        match self {
            Endpoint::Low => 0,
            Endpoint::High => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Endpoint::Low => "low",
            Endpoint::High => "high",
        }
    }
}

/// Uncertainty intervals and the short rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GParams {
    pub sigma_low: f64,
    pub sigma_high: f64,
    #[serde(default)]
    pub mu_low: f64,
    #[serde(default)]
    pub mu_high: f64,
    pub rate: f64,
}

impl GParams {
    /// Volatility interval and rate with a zero drift interval.
    pub fn new(sigma_low: f64, sigma_high: f64, rate: f64) -> Result<Self> {
        Self::with_drift(sigma_low, sigma_high, 0.0, 0.0, rate)
    }

    pub fn with_drift(
        sigma_low: f64,
        sigma_high: f64,
        mu_low: f64,
        mu_high: f64,
        rate: f64,
    ) -> Result<Self> {
        let params = GParams {
            sigma_low,
            sigma_high,
            mu_low,
            mu_high,
            rate,
        };
        params.validate()?;
        Ok(params)
    }

    /// Single-volatility market.
    pub fn classical(sigma: f64, rate: f64) -> Result<Self> {
        Self::new(sigma, sigma, rate)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("sigma_low", self.sigma_low),
            ("sigma_high", self.sigma_high),
            ("mu_low", self.mu_low),
            ("mu_high", self.mu_high),
            ("rate", self.rate),
        ];
        for (name, value) in fields {
            if !value.is_finite() {
                return Err(Error::InvalidParams(format!("{name} must be finite")));
            }
        }
        if self.sigma_low < 0.0 {
            return Err(Error::InvalidParams("sigma_low must be >= 0".into()));
        }
        if self.sigma_low > self.sigma_high {
            return Err(Error::InvalidParams(
                "sigma_low must not exceed sigma_high".into(),
            ));
        }
        if self.mu_low > self.mu_high {
            return Err(Error::InvalidParams("mu_low must not exceed mu_high".into()));
        }
        if self.rate < 0.0 {
            return Err(Error::InvalidParams("rate must be >= 0".into()));
        }
        Ok(())
    }

    /// True when the volatility interval is a single point.
    pub fn is_classical(&self) -> bool {
        self.sigma_low == self.sigma_high
    }

    /// Variance at the given endpoint.
    pub fn variance(&self, endpoint: Endpoint) -> f64 {
        match endpoint {
            Endpoint::Low => self.sigma_low * self.sigma_low,
            Endpoint::High => self.sigma_high * self.sigma_high,
        }
    }
}

/// `G(a) = ½ (σ̄² a⁺ − σ̲² a⁻)`.
pub fn g_function(a: f64, params: &GParams) -> f64 {
    if a >= 0.0 {
        0.5 * params.variance(Endpoint::High) * a
    } else {
        0.5 * params.variance(Endpoint::Low) * a
    }
}

/// The conjugate `−G(−a) = ½ inf { σ² a }`, used for lower expectations.
pub fn g_lower(a: f64, params: &GParams) -> f64 {
    -g_function(-a, params)
}

/// Generator for the given side.
pub fn g_side(a: f64, params: &GParams, side: Side) -> f64 {
    match side {
        Side::Upper => g_function(a, params),
        Side::Lower => g_lower(a, params),
    }
}

/// One-step transition probabilities `[down, mid, up]` for both volatility
/// endpoints. Always valid once constructed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    probs: [[f64; 3]; 2],
}

impl Stencil {
    /// Probabilities are indexed by [`Endpoint::index`], then `[down, mid, up]`.
    pub fn new(probs: [[f64; 3]; 2]) -> Result<Self> {
        for endpoint in Endpoint::BOTH {
            let row = probs[endpoint.index()];
            for &p in &row {
                if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                    return Err(Error::InvalidStencil {
                        endpoint: endpoint.as_str(),
                        value: p,
                    });
                }
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidStencil {
                    endpoint: endpoint.as_str(),
                    value: total,
                });
            }
        }
        Ok(Stencil { probs })
    }

    pub fn probabilities(&self, endpoint: Endpoint) -> [f64; 3] {
        self.probs[endpoint.index()]
    }

    /// Linear expectation of `[down, mid, up]` child values at one endpoint.
    pub fn expectation(&self, endpoint: Endpoint, children: &[f64; 3]) -> f64 {
        let p = &self.probs[endpoint.index()];
        p[0] * children[0] + p[1] * children[1] + p[2] * children[2]
    }
}

/// Upper (max over endpoints) or lower (min) expectation of child values.
pub fn step_expectation(children: &[f64; 3], stencil: &Stencil, side: Side) -> f64 {
    step_expectation_arg(children, stencil, side).0
}

/// As [`step_expectation`], also returning the attaining endpoint. Ties go to
/// [`Endpoint::High`].
pub fn step_expectation_arg(children: &[f64; 3], stencil: &Stencil, side: Side) -> (f64, Endpoint) {
    let low = stencil.expectation(Endpoint::Low, children);
    let high = stencil.expectation(Endpoint::High, children);
    let pick_low = match side {
        Side::Upper => low > high,
        Side::Lower => low < high,
    };
    if pick_low {
        (low, Endpoint::Low)
    } else {
        (high, Endpoint::High)
    }
}
