#ifndef KNIGHT_H
#define KNIGHT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KnightStatus {
  KNIGHT_STATUS_OK = 0,
  KNIGHT_STATUS_NULL_POINTER = 1,
  KNIGHT_STATUS_INVALID_PARAMS = 2,
  KNIGHT_STATUS_INVALID_PAYOFF = 3,
  KNIGHT_STATUS_INVALID_STENCIL = 4,
  KNIGHT_STATUS_INVALID_GRID = 5,
  KNIGHT_STATUS_INDEX_OUT_OF_RANGE = 6,
  KNIGHT_STATUS_NOT_SUPERMARTINGALE = 7,
  KNIGHT_STATUS_NO_CONVERGENCE = 8,
  KNIGHT_STATUS_TOO_LARGE = 9,
  KNIGHT_STATUS_PANIC = 10,
} KnightStatus;

// Upper (ask) or lower (bid) expectation.
typedef enum KnightSide {
  KNIGHT_SIDE_UPPER = 0,
  KNIGHT_SIDE_LOWER = 1,
} KnightSide;

typedef enum KnightPdeMethod {
  KNIGHT_PDE_METHOD_PENALIZED = 0,
  KNIGHT_PDE_METHOD_PROJECTED = 1,
  KNIGHT_PDE_METHOD_EUROPEAN = 2,
} KnightPdeMethod;

typedef struct KnightDecomposition KnightDecomposition;

typedef struct KnightLattice KnightLattice;

typedef struct KnightPayoff KnightPayoff;

typedef struct KnightMarket {
  double spot;
  double maturity;
  double rate;
  double sigma_low;
  double sigma_high;
} KnightMarket;

typedef struct KnightBidAsk {
  double bid;
  double ask;
  double literal_bid;
} KnightBidAsk;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *knight_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *knight_version(void);

// `G(a) = ½(σ̄² a⁺ − σ̲² a⁻)`.
//
// # Safety
// `out` must be valid for writes.
enum KnightStatus knight_g_function(double a, double sigma_low, double sigma_high, double *out);

// # Safety
// `market` must be readable and `out` writable.
enum KnightStatus knight_lattice_new(const struct KnightMarket *market,
                                     size_t n_steps,
                                     struct KnightLattice **out);

// # Safety
// `lattice` must come from [`knight_lattice_new`] and not be used again.
void knight_lattice_free(struct KnightLattice *lattice);

// # Safety
// `out` must be writable.
enum KnightStatus knight_payoff_put(double strike, struct KnightPayoff **out);

// # Safety
// `out` must be writable.
enum KnightStatus knight_payoff_call(double strike, struct KnightPayoff **out);

// Piecewise-linear payoff through `(prices[i], values[i])`, flat outside.
//
// # Safety
// `prices` and `values` must each hold `n` readable doubles; `out` must be
// writable.
enum KnightStatus knight_payoff_tabulated(const double *prices,
                                          const double *values,
                                          size_t n,
                                          struct KnightPayoff **out);

// # Safety
// `payoff` must come from a `knight_payoff_*` constructor and not be used
// again.
void knight_payoff_free(struct KnightPayoff *payoff);

// Payoff at one price.
//
// # Safety
// `payoff` must be a live handle and `out` writable.
enum KnightStatus knight_payoff_eval(const struct KnightPayoff *payoff, double price, double *out);

// Bid and ask of the American claim at the root of the lattice.
//
// # Safety
// Handles must be live and `out` writable.
enum KnightStatus knight_bid_ask(const struct KnightLattice *lattice,
                                 const struct KnightPayoff *payoff,
                                 struct KnightBidAsk *out);

// Exhaustive scenario search over stopping rules and volatility choices.
// Fails with `KNIGHT_STATUS_TOO_LARGE` beyond a few steps.
//
// # Safety
// Handles must be live and `out` writable.
enum KnightStatus knight_brute_force(const struct KnightLattice *lattice,
                                     const struct KnightPayoff *payoff,
                                     enum KnightSide side_,
                                     double *out);

// Root value of the free-boundary PDE with default iteration controls and
// penalty schedule.
//
// # Safety
// `market` and `payoff` must be readable and `out` writable.
enum KnightStatus knight_pde_price(const struct KnightMarket *market,
                                   const struct KnightPayoff *payoff,
                                   size_t n_space,
                                   size_t n_time,
                                   enum KnightSide side_,
                                   enum KnightPdeMethod method,
                                   double *out);

// Doob-Meyer split of the American value surface on one side.
//
// # Safety
// Handles must be live and `out` writable.
enum KnightStatus knight_decompose(const struct KnightLattice *lattice,
                                   const struct KnightPayoff *payoff,
                                   enum KnightSide side_,
                                   struct KnightDecomposition **out);

// # Safety
// `dec` must come from [`knight_decompose`] and not be used again.
void knight_decomposition_free(struct KnightDecomposition *dec);

// Number of time steps; zero for a null handle.
//
// # Safety
// `dec` must be null or a live handle.
size_t knight_decomposition_steps(const struct KnightDecomposition *dec);

// Discounted increment of the increasing part at node `(k, j)`, `k < n`.
//
// # Safety
// `dec` must be live and `out` writable.
enum KnightStatus knight_decomposition_increment(const struct KnightDecomposition *dec,
                                                 size_t k,
                                                 int64_t j,
                                                 double *out);

// Hedge ratio held from node `(k, j)` over the next step.
//
// # Safety
// `dec` must be live and `out` writable.
enum KnightStatus knight_decomposition_hedge_ratio(const struct KnightDecomposition *dec,
                                                   size_t k,
                                                   int64_t j,
                                                   double *out);

// Discounted value at node `(k, j)`.
//
// # Safety
// `dec` must be live and `out` writable.
enum KnightStatus knight_decomposition_value(const struct KnightDecomposition *dec,
                                             size_t k,
                                             int64_t j,
                                             double *out);

// Smallest surplus of the hedge wealth over the payoff across every path
// and step. Negative means the hedge fails somewhere.
//
// # Safety
// Handles must be live and `out` writable.
enum KnightStatus knight_superhedge_margin(const struct KnightDecomposition *dec,
                                           const struct KnightLattice *lattice,
                                           const struct KnightPayoff *payoff,
                                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KNIGHT_H */
