//! Batch front end: validate, solve, verify, sweep and probe commands
//! producing JSON reports and process exit codes.

mod commands;
mod config;
mod solution;

pub use commands::{
    cmd_probe, cmd_solve, cmd_sweep, cmd_validate, cmd_verify, parse_values, run, Command, Invocation, Outcome,
    ReferenceComparison,
};
pub use config::{
    CurvatureConfig, DomainConfig, OutputConfig, PoleConfig, PoleKeyword, ProbeConfig, ProblemConfig, RunConfig,
    VerificationConfig,
};
pub use solution::{SolutionFile, SOLUTION_VERSION};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const HYPOTHESIS_FAIL: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const NO_CONVERGENCE: i32 = 3;
    pub const VERIFICATION_FAIL: i32 = 4;
}
