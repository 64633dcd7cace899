//! `mathlib`: the built-in distributed linear-algebra library.
//!
//! Every routine runs SPMD on the session's worker group, reads block-row
//! distributed inputs and emits block-row distributed outputs on the same
//! group. Scalars come back as values; matrices stay on the workers.

mod condest;
mod gemm;
mod kernels;
mod random;
mod svd;
mod transpose;

pub use condest::{CondEst, DEFAULT_CONDEST_MAX_COLS};
pub use gemm::{Gemm, DEFAULT_GEMM_BUDGET_BYTES};
pub use random::RandomUniform;
pub use svd::{TruncatedSvd, DEFAULT_SVD_TOL, SIGN_THRESHOLD};
pub use transpose::Transpose;

use crate::server::{LibraryPlugin, Routine, RoutineTable};

pub const MATHLIB: &str = "mathlib";

#[derive(Debug, Clone)]
pub struct MathLibConfig {
    /// Per-worker budget for the replicated right-hand side of GEMM.
    pub gemm_budget_bytes: u64,
    pub condest_max_cols: u64,
}

impl Default for MathLibConfig {
    fn default() -> Self {
        Self {
            gemm_budget_bytes: DEFAULT_GEMM_BUDGET_BYTES,
            condest_max_cols: DEFAULT_CONDEST_MAX_COLS,
        }
    }
}

pub struct MathLib {
    routines: RoutineTable,
}

impl MathLib {
    pub fn new(config: MathLibConfig) -> Self {
        let routines = RoutineTable::new()
            .with(Gemm {
                budget_bytes: config.gemm_budget_bytes,
            })
            .with(TruncatedSvd)
            .with(Transpose)
            .with(CondEst {
                max_cols: config.condest_max_cols,
            })
            .with(RandomUniform);
        Self { routines }
    }
}

impl Default for MathLib {
    fn default() -> Self {
        Self::new(MathLibConfig::default())
    }
}

impl LibraryPlugin for MathLib {
    fn name(&self) -> &str {
        MATHLIB
    }

    fn routine(&self, name: &str) -> Option<&dyn Routine> {
        self.routines.get(name)
    }

    fn routine_names(&self) -> Vec<String> {
        self.routines.names()
    }
}
