use super::kernels::gemm_panel;
use crate::comm::{bytes_to_f64s, f64s_to_bytes};
use crate::error::{Error, Result};
use crate::protocol::Value;
use crate::server::{Args, Routine, RoutineContext};

pub const DEFAULT_GEMM_BUDGET_BYTES: u64 = 1 << 30;

/// `C = A B` with `A` (m x n) and `B` (n x k) block-row distributed.
///
/// Arguments: `A, B [, budget_bytes: int] [, allow_streaming: bool]`.
/// When `B` fits the per-worker budget it is replicated with one allgather.
/// Otherwise, if streaming is allowed, each owner broadcasts its rows of `B`
/// in panels that fit the budget. Both paths sum the inner dimension in the
/// same order, so `C` does not depend on the path or on the group size.
pub struct Gemm {
    pub budget_bytes: u64,
}

impl Routine for Gemm {
    fn name(&self) -> &str {
        "gemm"
    }

    fn run(&self, ctx: &RoutineContext<'_>, args: &[Value]) -> Result<Vec<Value>> {
        let args = Args::new("gemm", args, 2, 4)?;
        let (ha, hb) = (args.matrix(0)?, args.matrix(1)?);
        let budget = match args.opt_int(2)? {
            Some(b) if b <= 0 => {
                return Err(Error::Argument(format!(
                    "gemm budget must be positive, got {b}"
                )))
            }
            Some(b) => b as u64,
            None => self.budget_bytes,
        };
        let allow_streaming = args.opt_bool(3)?.unwrap_or(true);
        if ha.cols != hb.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                ha.rows, ha.cols, hb.rows, hb.cols
            )));
        }
        let a = ctx.input(&ha)?;
        let b = ctx.input(&hb)?;
        let (n, k) = (ha.cols as usize, hb.cols as usize);
        let mut c = vec![0.0; a.local_rows() * k];
        let comm = ctx.comm();

        if hb.size_bytes() <= budget {
            let parts = comm.allgather(&f64s_to_bytes(b.data()))?;
            let mut full = Vec::with_capacity(n * k);
            for p in &parts {
                full.extend(bytes_to_f64s(p));
            }
            gemm_panel(&mut c, a.data(), n, 0, &full, k);
        } else if allow_streaming {
            let layout_b = ctx.layout(hb.rows, hb.cols)?;
            let panel_rows = ((budget / (8 * k as u64)).max(1)) as usize;
            for owner in 0..ctx.size() {
                let range = layout_b.owned_range(owner);
                let rows = (range.end - range.start) as usize;
                let mut start = 0;
                while start < rows {
                    let count = panel_rows.min(rows - start);
                    let mine = if owner == ctx.rank() {
                        f64s_to_bytes(&b.data()[start * k..(start + count) * k])
                    } else {
                        Vec::new()
                    };
                    let panel = bytes_to_f64s(&comm.broadcast(owner, &mine)?);
                    gemm_panel(&mut c, a.data(), n, range.start as usize + start, &panel, k);
                    start += count;
                }
            }
        } else {
            return Err(Error::Resource(format!(
                "B needs {} bytes per worker, budget is {budget} and streaming is disabled",
                hb.size_bytes()
            )));
        }
        Ok(vec![Value::Matrix(ctx.emit(ha.rows, hb.cols, c)?)])
    }
}
