//! Every tolerance, budget and default size used by the engines, the checks,
//! the acceptance suite and the CLI.

/// Absolute tolerance of adaptive Simpson quadrature.
pub const QUADRATURE_TOL: f64 = 1e-10;
/// Cap on the number of leaf intervals adaptive Simpson may create.
pub const QUADRATURE_MAX_INTERVALS: usize = 10_000;
/// Width of the bracket returned by reserve-price bisection.
pub const BISECTION_TOL: f64 = 1e-10;
/// Bracket width at which golden-section search stops.
pub const GOLDEN_SECTION_TOL: f64 = 1e-8;
/// Slack allowed when checking that masses or priors sum to one.
pub const PROBABILITY_SUM_TOL: f64 = 1e-12;
/// Slack for outcome invariants (feasibility and ex-post IR).
pub const OUTCOME_TOL: f64 = 1e-12;

/// Number of intervals in memoized bid lattices.
pub const BID_LATTICE_INTERVALS: usize = 4000;
/// Points used to spot-check monotonicity of continuous virtual values.
pub const REGULARITY_PROBES: usize = 1000;

/// Maximum number of evaluated profiles for exact enumeration.
pub const ENUMERATION_BUDGET: u64 = 10_000_000;
/// Default cap on shill or extra-identity counts.
pub const MAX_IDENTITIES: usize = 3;
/// Default strategy lattice resolution (steps on [0,1]) in continuous mode.
pub const STRATEGY_LATTICE_STEPS: usize = 100;
/// Default number of midpoint cells per strategy-lattice step for ex-post
/// checks on continuous types.
pub const MIDPOINTS_PER_STEP: usize = 2;

/// Gain threshold for exact (enumeration or quadrature) verdicts.
pub const EXACT_EPSILON: f64 = 1e-9;
/// Verdict threshold for Monte Carlo verdicts, in standard errors.
pub const MC_EPSILON_SE: f64 = 3.0;

/// Samples per Monte Carlo chunk. Totals are reproducible for a fixed value.
pub const MC_CHUNK_SIZE: u64 = 8192;
/// Default Monte Carlo sample count.
pub const MC_SAMPLES: u64 = 1_000_000;
/// Default seed.
pub const MC_SEED: u64 = 20_240_601;

/// Permutations are enumerated explicitly up to this many bidders when
/// averaging a fixed-priority tie-break.
pub const MAX_PRIORITY_ENUMERATION: usize = 8;

/// Significant digits stored in golden CSV files.
pub const GOLDEN_DIGITS: usize = 12;
