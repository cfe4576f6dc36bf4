//! C interface to `knight-core`.
//!
//! Objects are opaque heap handles created by `knight_*_new` and released by
//! the matching `knight_*_free`. Every fallible call returns a
//! [`KnightStatus`] and writes results through out-pointers; on failure the
//! message is available from [`knight_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use knight_core::gdm::{extract_superhedge, gdm_decompose, verify_superhedge, GdmDecomposition};
use knight_core::oracle::brute_force_value;
use knight_core::pde::{pde_solve_european, pde_solve_penalized, pde_solve_projected, IterationControl, PdeGrid, PenaltySchedule};
use knight_core::{bid_ask, build_lattice, g_function, snell_envelope, Error, GParams, Lattice, Payoff, Side};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnightStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParams = 2,
    InvalidPayoff = 3,
    InvalidStencil = 4,
    InvalidGrid = 5,
    IndexOutOfRange = 6,
    NotSupermartingale = 7,
    NoConvergence = 8,
    TooLarge = 9,
    Panic = 10,
}

/// Upper (ask) or lower (bid) expectation.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnightSide {
    Upper = 0,
    Lower = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnightPdeMethod {
    Penalized = 0,
    Projected = 1,
    European = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KnightBidAsk {
    pub bid: f64,
    pub ask: f64,
    pub literal_bid: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnightMarket {
    pub spot: f64,
    pub maturity: f64,
    pub rate: f64,
    pub sigma_low: f64,
    pub sigma_high: f64,
}

pub struct KnightLattice(Lattice);

pub struct KnightPayoff(Payoff);

pub struct KnightDecomposition(GdmDecomposition);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> KnightStatus {
    match e {
        Error::InvalidParams(_) => KnightStatus::InvalidParams,
        Error::InvalidPayoff(_) => KnightStatus::InvalidPayoff,
        Error::InvalidStencil { .. } => KnightStatus::InvalidStencil,
        Error::InvalidGrid(_) => KnightStatus::InvalidGrid,
        Error::IndexOutOfRange { .. } => KnightStatus::IndexOutOfRange,
        Error::NotSupermartingale { .. } => KnightStatus::NotSupermartingale,
        Error::NoConvergence { .. } => KnightStatus::NoConvergence,
        Error::TooLarge { .. } => KnightStatus::TooLarge,
    }
}

enum Fail {
    Null(&'static str),
    Engine(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Engine(e)
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> KnightStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            KnightStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            KnightStatus::NullPointer
        }
        Ok(Err(Fail::Engine(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            KnightStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn put<T>(out: *mut T, what: &'static str, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    out.write(value);
    Ok(())
}

fn side(s: KnightSide) -> Side {
    match s {
        KnightSide::Upper => Side::Upper,
        KnightSide::Lower => Side::Lower,
    }
}

fn params(m: &KnightMarket) -> Result<GParams, Error> {
    GParams::new(m.sigma_low, m.sigma_high, m.rate)
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn knight_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn knight_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// `G(a) = ½(σ̄² a⁺ − σ̲² a⁻)`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn knight_g_function(a: f64, sigma_low: f64, sigma_high: f64, out: *mut f64) -> KnightStatus {
    guard(|| {
        let p = GParams::new(sigma_low, sigma_high, 0.0)?;
        put(out, "out", g_function(a, &p))
    })
}

/// # Safety
/// `market` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn knight_lattice_new(
    market: *const KnightMarket,
    n_steps: usize,
    out: *mut *mut KnightLattice,
) -> KnightStatus {
    guard(|| {
        let m = get(market, "market")?;
        let lattice = build_lattice(m.spot, m.maturity, n_steps, params(m)?)?;
        put(out, "out", Box::into_raw(Box::new(KnightLattice(lattice))))
    })
}

/// # Safety
/// `lattice` must come from [`knight_lattice_new`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn knight_lattice_free(lattice: *mut KnightLattice) {
    if !lattice.is_null() {
        drop(Box::from_raw(lattice));
    }
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn knight_payoff_put(strike: f64, out: *mut *mut KnightPayoff) -> KnightStatus {
    guard(|| put(out, "out", Box::into_raw(Box::new(KnightPayoff(Payoff::put(strike)?)))))
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn knight_payoff_call(strike: f64, out: *mut *mut KnightPayoff) -> KnightStatus {
    guard(|| put(out, "out", Box::into_raw(Box::new(KnightPayoff(Payoff::call(strike)?)))))
}

/// Piecewise-linear payoff through `(prices[i], values[i])`, flat outside.
///
/// # Safety
/// `prices` and `values` must each hold `n` readable doubles; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn knight_payoff_tabulated(
    prices: *const f64,
    values: *const f64,
    n: usize,
    out: *mut *mut KnightPayoff,
) -> KnightStatus {
    guard(|| {
        if n > 0 && (prices.is_null() || values.is_null()) {
            return Err(Fail::Null("knots"));
        }
        let knots = if n == 0 {
            Vec::new()
        } else {
            let p = std::slice::from_raw_parts(prices, n);
            let v = std::slice::from_raw_parts(values, n);
            p.iter().copied().zip(v.iter().copied()).collect()
        };
        put(out, "out", Box::into_raw(Box::new(KnightPayoff(Payoff::tabulated(knots)?))))
    })
}

/// # Safety
/// `payoff` must come from a `knight_payoff_*` constructor and not be used
/// again.
#[no_mangle]
pub unsafe extern "C" fn knight_payoff_free(payoff: *mut KnightPayoff) {
    if !payoff.is_null() {
        drop(Box::from_raw(payoff));
    }
}

/// Payoff at one price.
///
/// # Safety
/// `payoff` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn knight_payoff_eval(payoff: *const KnightPayoff, price: f64, out: *mut f64) -> KnightStatus {
    guard(|| {
        let f = get(payoff, "payoff")?;
        put(out, "out", f.0.eval(price))
    })
}

/// Bid and ask of the American claim at the root of the lattice.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn knight_bid_ask(
    lattice: *const KnightLattice,
    payoff: *const KnightPayoff,
    out: *mut KnightBidAsk,
) -> KnightStatus {
    guard(|| {
        let l = get(lattice, "lattice")?;
        let f = get(payoff, "payoff")?;
        let q = bid_ask(&l.0, &f.0)?;
        put(
            out,
            "out",
            KnightBidAsk {
                bid: q.bid,
                ask: q.ask,
                literal_bid: q.literal_bid,
            },
        )
    })
}

/// Exhaustive scenario search over stopping rules and volatility choices.
/// Fails with `KNIGHT_STATUS_TOO_LARGE` beyond a few steps.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn knight_brute_force(
    lattice: *const KnightLattice,
    payoff: *const KnightPayoff,
    side_: KnightSide,
    out: *mut f64,
) -> KnightStatus {
    guard(|| {
        let l = get(lattice, "lattice")?;
        let f = get(payoff, "payoff")?;
        put(out, "out", brute_force_value(&l.0, &f.0, side(side_))?.value)
    })
}

/// Root value of the free-boundary PDE with default iteration controls and
/// penalty schedule.
///
/// # Safety
/// `market` and `payoff` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn knight_pde_price(
    market: *const KnightMarket,
    payoff: *const KnightPayoff,
    n_space: usize,
    n_time: usize,
    side_: KnightSide,
    method: KnightPdeMethod,
    out: *mut f64,
) -> KnightStatus {
    guard(|| {
        let m = get(market, "market")?;
        let f = get(payoff, "payoff")?;
        let grid = PdeGrid::new(m.spot, m.maturity, n_space, n_time, params(m)?)?;
        let control = IterationControl::default();
        let sol = match method {
            KnightPdeMethod::Penalized => pde_solve_penalized(&grid, &f.0, &PenaltySchedule::default(), side(side_)),
            KnightPdeMethod::Projected => pde_solve_projected(&grid, &f.0, side(side_), &control),
            KnightPdeMethod::European => pde_solve_european(&grid, &f.0, side(side_), &control),
        }?;
        put(out, "out", sol.root_value())
    })
}

/// Doob-Meyer split of the American value surface on one side.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn knight_decompose(
    lattice: *const KnightLattice,
    payoff: *const KnightPayoff,
    side_: KnightSide,
    out: *mut *mut KnightDecomposition,
) -> KnightStatus {
    guard(|| {
        let l = get(lattice, "lattice")?;
        let f = get(payoff, "payoff")?;
        let surface = snell_envelope(&l.0, &f.0, side(side_))?;
        let dec = gdm_decompose(&surface, &l.0)?;
        put(out, "out", Box::into_raw(Box::new(KnightDecomposition(dec))))
    })
}

/// # Safety
/// `dec` must come from [`knight_decompose`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn knight_decomposition_free(dec: *mut KnightDecomposition) {
    if !dec.is_null() {
        drop(Box::from_raw(dec));
    }
}

/// Number of time steps; zero for a null handle.
///
/// # Safety
/// `dec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn knight_decomposition_steps(dec: *const KnightDecomposition) -> usize {
    dec.as_ref().map_or(0, |d| d.0.n_steps())
}

/// Discounted increment of the increasing part at node `(k, j)`, `k < n`.
///
/// # Safety
/// `dec` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn knight_decomposition_increment(
    dec: *const KnightDecomposition,
    k: usize,
    j: i64,
    out: *mut f64,
) -> KnightStatus {
    guard(|| {
        let d = get(dec, "decomposition")?;
        put(out, "out", d.0.increment(k, j)?)
    })
}

/// Hedge ratio held from node `(k, j)` over the next step.
///
/// # Safety
/// `dec` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn knight_decomposition_hedge_ratio(
    dec: *const KnightDecomposition,
    k: usize,
    j: i64,
    out: *mut f64,
) -> KnightStatus {
    guard(|| {
        let d = get(dec, "decomposition")?;
        put(out, "out", d.0.pi(k, j)?)
    })
}

/// Discounted value at node `(k, j)`.
///
/// # Safety
/// `dec` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn knight_decomposition_value(
    dec: *const KnightDecomposition,
    k: usize,
    j: i64,
    out: *mut f64,
) -> KnightStatus {
    guard(|| {
        let d = get(dec, "decomposition")?;
        put(out, "out", d.0.discounted_value(k, j)?)
    })
}

/// Smallest surplus of the hedge wealth over the payoff across every path
/// and step. Negative means the hedge fails somewhere.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn knight_superhedge_margin(
    dec: *const KnightDecomposition,
    lattice: *const KnightLattice,
    payoff: *const KnightPayoff,
    out: *mut f64,
) -> KnightStatus {
    guard(|| {
        let d = get(dec, "decomposition")?;
        let l = get(lattice, "lattice")?;
        let f = get(payoff, "payoff")?;
        let report = verify_superhedge(&extract_superhedge(&d.0, &l.0), &l.0, &f.0)?;
        put(out, "out", report.worst_margin)
    })
}
