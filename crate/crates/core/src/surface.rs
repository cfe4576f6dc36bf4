use crate::error::{Error, Result};
use crate::gcore::Side;
use crate::lattice::Lattice;

/// What a surface represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceSide {
    Upper,
    Lower,
    Plain,
}

impl From<Side> for SurfaceSide {
    fn from(side: Side) -> Self {
        match side {
            Side::Upper => SurfaceSide::Upper,
            Side::Lower => SurfaceSide::Lower,
        }
    }
}

/// Units of the stored values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Discounting {
    /// Cash at the node's own time.
    NodeTime,
    /// Discounted to time zero with `e^{−r t_k}`.
    Origin,
}

/// An adapted process on a lattice: one value per node, `2k + 1` per step,
/// ordered by level `j` ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSurface {
    values: Vec<Vec<f64>>,
    side: SurfaceSide,
    discounting: Discounting,
    continuation: Option<Vec<Vec<f64>>>,
}

impl ValueSurface {
    pub fn new(values: Vec<Vec<f64>>, side: SurfaceSide) -> Self {
        debug_assert!(values.iter().enumerate().all(|(k, row)| row.len() == 2 * k + 1));
        ValueSurface {
            values,
            side,
            discounting: Discounting::NodeTime,
            continuation: None,
        }
    }

    /// Builds a surface, checking the triangular shape against the lattice.
    pub fn from_rows(lattice: &Lattice, values: Vec<Vec<f64>>, side: SurfaceSide) -> Result<Self> {
        if values.len() != lattice.n_steps() + 1 {
            return Err(Error::InvalidGrid(format!(
                "surface has {} steps, lattice has {}",
                values.len(),
                lattice.n_steps() + 1
            )));
        }
        for (k, row) in values.iter().enumerate() {
            if row.len() != 2 * k + 1 {
                return Err(Error::InvalidGrid(format!("step {k} has {} nodes", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidGrid(format!("non-finite value at step {k}")));
            }
        }
        Ok(Self::new(values, side))
    }

    pub(crate) fn with_continuation(mut self, continuation: Vec<Vec<f64>>) -> Self {
        self.continuation = Some(continuation);
        self
    }

    pub fn side(&self) -> SurfaceSide {
        self.side
    }

    pub fn discounting(&self) -> Discounting {
        self.discounting
    }

    pub fn n_steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn value(&self, k: usize, j: i64) -> Result<f64> {
        let row = self.values.get(k).ok_or(Error::IndexOutOfRange { k, j })?;
        let idx = j + k as i64;
        if idx < 0 || idx as usize >= row.len() {
            return Err(Error::IndexOutOfRange { k, j });
        }
        Ok(row[idx as usize])
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn root(&self) -> f64 {
        self.values[0][0]
    }

    /// Discounted continuation value at each non-terminal node, when the
    /// surface came out of a backward induction.
    pub fn continuation(&self) -> Option<&[Vec<f64>]> {
        self.continuation.as_deref()
    }

    /// Same process expressed in time-zero money.
    pub fn to_origin(&self, lattice: &Lattice) -> ValueSurface {
        if self.discounting == Discounting::Origin {
            return self.clone();
        }
        let r = lattice.params().rate;
        let scale = |k: usize, row: &Vec<f64>| {
            let d = (-r * lattice.time(k)).exp();
            row.iter().map(|v| v * d).collect::<Vec<f64>>()
        };
        ValueSurface {
            values: self.values.iter().enumerate().map(|(k, row)| scale(k, row)).collect(),
            side: self.side,
            discounting: Discounting::Origin,
            continuation: self
                .continuation
                .as_ref()
                .map(|c| c.iter().enumerate().map(|(k, row)| scale(k, row)).collect()),
        }
    }

    /// Largest absolute node-wise difference.
    pub fn max_abs_diff(&self, other: &ValueSurface) -> f64 {
        self.values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
