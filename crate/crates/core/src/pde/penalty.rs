use crate::lattice::{Kink, Payoff};

/// Penalty function `β_ε(s) = clamp(s/ε, −1/ε², ε)`, with both clamp knees
/// rounded by quadratic blends of width `ε²` so that `β_ε` is C¹.
///
/// Increasing, bounded, `β_ε(0) = 0`, `β_ε ≤ ε`, `β_ε' ∈ [0, 1/ε]`, and
/// `β_ε(s) → −∞` as `ε → 0` for each fixed `s < 0`.
pub fn penalty_beta(s: f64, epsilon: f64) -> f64 {
    let w = epsilon * epsilon;
    let upper = epsilon * epsilon;
    let lower = -1.0 / epsilon;
    if s >= upper + 0.5 * w {
        epsilon
    } else if s > upper - 0.5 * w {
        let t = s - upper + 0.5 * w;
        s / epsilon - t * t / (2.0 * epsilon * w)
    } else if s >= lower + 0.5 * w {
        s / epsilon
    } else if s > lower - 0.5 * w {
        let t = s - lower - 0.5 * w;
        s / epsilon + t * t / (2.0 * epsilon * w)
    } else {
        -1.0 / (epsilon * epsilon)
    }
}

/// Derivative of [`penalty_beta`].
pub fn penalty_beta_prime(s: f64, epsilon: f64) -> f64 {
    let w = epsilon * epsilon;
    let upper = epsilon * epsilon;
    let lower = -1.0 / epsilon;
    if s >= upper + 0.5 * w {
        0.0
    } else if s > upper - 0.5 * w {
        (1.0 - (s - upper + 0.5 * w) / w) / epsilon
    } else if s >= lower + 0.5 * w {
        1.0 / epsilon
    } else if s > lower - 0.5 * w {
        (1.0 + (s - lower - 0.5 * w) / w) / epsilon
    } else {
        0.0
    }
}

/// Payoff with every kink replaced by a quadratic over a window of width
/// `min(δ, distance to the neighbouring kinks)`, so windows never overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct MollifiedPayoff {
    payoff: Payoff,
    delta: f64,
    blends: Vec<(Kink, f64)>,
}

pub fn mollify_payoff(payoff: &Payoff, delta: f64) -> MollifiedPayoff {
    let kinks = payoff.kinks();
    let delta = delta.max(0.0);
    let blends = kinks
        .iter()
        .enumerate()
        .map(|(i, kink)| {
            let mut w = delta;
            if i > 0 {
                w = w.min(kink.at - kinks[i - 1].at);
            }
            if let Some(next) = kinks.get(i + 1) {
                w = w.min(next.at - kink.at);
            }
            (*kink, w)
        })
        .collect();
    MollifiedPayoff {
        payoff: payoff.clone(),
        delta,
        blends,
    }
}

impl MollifiedPayoff {
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn payoff(&self) -> &Payoff {
        &self.payoff
    }

    fn blend_at(&self, s: f64) -> Option<&(Kink, f64)> {
        self.blends
            .iter()
            .find(|(k, w)| *w > 0.0 && (s - k.at).abs() < 0.5 * w)
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self.blend_at(s) {
            Some((k, w)) => {
                let a = k.at - 0.5 * w;
                let t = s - a;
                self.payoff.eval(a) + k.left * t + (k.right - k.left) * t * t / (2.0 * w)
            }
            None => self.payoff.eval(s),
        }
    }

    /// Second derivative; zero away from the blends.
    pub fn curvature(&self, s: f64) -> f64 {
        match self.blend_at(s) {
            Some((k, w)) => (k.right - k.left) / w,
            None => 0.0,
        }
    }
}
