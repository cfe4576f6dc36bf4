use super::{OperatorForm, PdeGrid};
use crate::gcore::{Endpoint, GParams, Side};

/// Weights `(w_{i−1}, w_i, w_{i+1})` of the spatial operator at one interior
/// node for one volatility endpoint, including the `−r u` term.
pub(crate) type Row = [f64; 3];

/// Discrete spatial operator on the grid.
///
/// Second and first derivatives use the three-point formulas on the
/// nonuniform grid, exact for quadratics. The drift uses the central
/// formula wherever that keeps both off-diagonals nonnegative at the low
/// volatility, and the upwind one-sided formula elsewhere. The drift
/// discretization is the same for both endpoints, so choosing the branch
/// from the sign of the discrete curvature maximizes the discrete operator
/// exactly.
#[derive(Debug, Clone)]
pub(crate) struct Operator {
    /// `[Low, High]` rows per node; entries at the two boundary nodes are unused.
    rows: Vec<[Row; 2]>,
    curvature: Vec<Row>,
}

impl Operator {
    pub(crate) fn new(grid: &PdeGrid) -> Self {
        let s = grid.prices();
        let params = grid.params();
        let r = params.rate;
        let n = s.len();
        let mut rows = vec![[[0.0; 3]; 2]; n];
        let mut curvature = vec![[0.0; 3]; n];
        for i in 1..n - 1 {
            let hm = s[i] - s[i - 1];
            let hp = s[i + 1] - s[i];
            let d2 = [2.0 / (hm * (hm + hp)), -2.0 / (hm * hp), 2.0 / (hp * (hm + hp))];
            let central = [-hp / (hm * (hm + hp)), (hp - hm) / (hm * hp), hm / (hp * (hm + hp))];
            let (diff, drift) = match grid.operator() {
                OperatorForm::Dynamics => (0.5 * s[i] * s[i], r * s[i]),
                OperatorForm::Literal => (0.5, r),
            };
            let low = params.variance(Endpoint::Low) * diff;
            let monotone = low * d2[0] + drift * central[0] >= 0.0 && low * d2[2] + drift * central[2] >= 0.0;
            let d1 = if monotone {
                central
            } else if drift >= 0.0 {
                [0.0, -1.0 / hp, 1.0 / hp]
            } else {
                [-1.0 / hm, 1.0 / hm, 0.0]
            };
            for e in Endpoint::BOTH {
                let v = params.variance(e) * diff;
                rows[i][e.index()] = [
                    v * d2[0] + drift * d1[0],
                    v * d2[1] + drift * d1[1] - r,
                    v * d2[2] + drift * d1[2],
                ];
            }
            curvature[i] = d2;
        }
        Operator { rows, curvature }
    }

    pub(crate) fn row(&self, i: usize, e: Endpoint) -> Row {
        self.rows[i][e.index()]
    }

    pub(crate) fn curvature(&self, u: &[f64], i: usize) -> f64 {
        let w = self.curvature[i];
        w[0] * u[i - 1] + w[1] * u[i] + w[2] * u[i + 1]
    }

    /// Endpoint that maximizes (upper) or minimizes (lower) the operator at
    /// node `i`; ties go to `High`.
    pub(crate) fn branch(&self, u: &[f64], i: usize, side: Side) -> Endpoint {
        let a = self.curvature(u, i);
        match side {
            Side::Upper if a >= 0.0 => Endpoint::High,
            Side::Upper => Endpoint::Low,
            Side::Lower if a > 0.0 => Endpoint::Low,
            Side::Lower => Endpoint::High,
        }
    }

    pub(crate) fn apply(&self, u: &[f64], i: usize, e: Endpoint) -> f64 {
        let w = self.row(i, e);
        w[0] * u[i - 1] + w[1] * u[i] + w[2] * u[i + 1]
    }
}

/// Spatial part of `Lu − ru` at every node, with the G-branch chosen
/// node-wise from the curvature of `u`. Zero at the two boundary nodes.
pub fn assemble_operator(grid: &PdeGrid, u: &[f64], side: Side) -> Vec<f64> {
    let op = Operator::new(grid);
    let n = grid.prices().len();
    let mut out = vec![0.0; n];
    for (i, v) in out.iter_mut().enumerate().take(n - 1).skip(1) {
        *v = op.apply(u, i, op.branch(u, i, side));
    }
    out
}

/// Discrete curvature term the generator sees: `S²·u_SS` or `u_SS`.
pub fn curvature_argument(grid: &PdeGrid, u: &[f64]) -> Vec<f64> {
    let op = Operator::new(grid);
    let s = grid.prices();
    let n = s.len();
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        let a = op.curvature(u, i);
        out[i] = match grid.operator() {
            OperatorForm::Dynamics => s[i] * s[i] * a,
            OperatorForm::Literal => a,
        };
    }
    out
}

/// Nodes where the lower generator applied to the smoothed payoff falls
/// below `c`, i.e. where `−G(−D²f) ≥ c` fails.
pub fn assumption_violations(
    grid: &PdeGrid,
    payoff: &super::MollifiedPayoff,
    params: &GParams,
    c: f64,
) -> Vec<usize> {
    let s = grid.prices();
    (0..s.len())
        .filter(|&i| {
            let a = payoff.curvature(s[i]);
            let a = match grid.operator() {
                OperatorForm::Dynamics => s[i] * s[i] * a,
                OperatorForm::Literal => a,
            };
            crate::gcore::g_lower(a, params) < c
        })
        .collect()
}
