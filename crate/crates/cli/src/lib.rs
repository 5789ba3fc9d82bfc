//! Orchestration around the `cvrp-qptas` core: the full pipeline, corpus
//! benchmarks and SVG plots, plus the mapping from errors to exit codes.

pub mod bench;
pub mod pipeline;
pub mod plot;

use cvrp_qptas::Error;

/// Process exit code for a failure: 2 for bad input or parameters, 3 for an
/// exhausted budget, 4 for infeasibility and internal faults.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parse { .. } | Error::Parameter(_) | Error::Index(_) => 2,
        Error::Budget(_) => 3,
        Error::Infeasible(_) | Error::Contract(_) | Error::Internal(_) => 4,
    }
}
