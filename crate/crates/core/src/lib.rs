//! Bid and ask prices of American claims when volatility is only known to
//! lie in an interval.
//!
//! Two independent routes are provided:
//!
//! * a trinomial lattice with optimal stopping under the upper and lower
//!   one-step expectations ([`stopping`]), whose ask surface is split into a
//!   G-martingale and an increasing consumption part by [`gdm`] to read off a
//!   superhedge;
//! * the penalized free-boundary PDE `max{Lu − ru, f − u} = 0` ([`pde`]),
//!   alongside a direct projection scheme.
//!
//! [`oracle`] holds brute-force and closed-form references used by the tests
//! and the `crosscheck` command.

pub mod cli;
pub mod error;
pub mod gcore;
pub mod gdm;
pub mod lattice;
pub mod oracle;
pub mod pde;
pub mod stopping;
pub mod surface;

pub use error::{Error, Result};
pub use gcore::{g_function, g_lower, step_expectation, Endpoint, GParams, Side, Stencil};
pub use lattice::{build_lattice, payoff_surface, Lattice, Payoff};
pub use stopping::{bid_ask, exercise_boundary, snell_envelope, BidAsk, Exercise, ExerciseBoundary};
pub use surface::{SurfaceSide, ValueSurface};
