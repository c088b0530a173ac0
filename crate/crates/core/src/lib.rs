//! Exact detection of changes in slope.
//!
//! Fits a continuous piecewise-linear mean to a univariate series by
//! minimizing the scaled residual sum of squares plus a penalty per segment,
//! using a dynamic program over quadratic cost functions of the fitted value
//! at the most recent changepoint. Functional pruning and inequality-based
//! pruning keep the candidate set small without losing exactness.
//!
//! ```
//! use cpop::{cpop, CpopOptions, PenaltyConfig, LengthPenalty};
//!
//! let y = [4.0, 3.0, 2.0, 1.0, 2.0, 3.0, 4.0];
//! let cfg = PenaltyConfig::new(0.1, LengthPenalty::Zero, 1.0).unwrap();
//! let fit = cpop(&y, &cfg, CpopOptions::default()).unwrap();
//! assert_eq!(fit.taus, vec![4]);
//! ```

pub mod cli;
pub mod engine;
pub mod error;
pub mod evalkit;
pub mod oracle;
pub mod quadfn;
pub mod segcost;

pub use engine::{
    compute_intervals, cpop, fitted_values, reconstruct_phis, CpopOptions, CpopSolver, Diagnostics,
    Segmentation, TraceRow,
};
pub use error::{Error, Result};
pub use evalkit::{estimate_sigma, simulate, Scenario, Simulated};
pub use quadfn::{minimize_out_start, Quadratic, SegmentQuadratic};
pub use segcost::{default_beta, LengthPenalty, PenaltyConfig, PrefixSums};
