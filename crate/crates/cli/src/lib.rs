//! Command-line surface for the transport solver: instance generation,
//! end-to-end solves, the AMG-vs-PCG benchmark, brute-force oracles, and
//! report rendering.

pub mod bench;
pub mod gen;
pub mod oracle;
pub mod report;

pub use gen::GenKind;
pub use oracle::{oracle_solve, OracleError, OracleResult};
pub use report::{build_report, render, totals_from_trace, RunReport};

/// Process exit codes: 0 success, 2 non-convergence, 3 invalid input,
/// 4 internal solver failure.
pub mod exit_codes {
    pub const SUCCESS: i32 = 0;
    pub const NON_CONVERGENCE: i32 = 2;
    pub const INVALID_INPUT: i32 = 3;
    pub const SOLVER_FAILURE: i32 = 4;
}
