use crate::comm::{bytes_to_f64s, f64s_to_bytes};
use crate::error::Result;
use crate::protocol::Value;
use crate::server::{Args, Routine, RoutineContext};

/// `A^T`, block-row distributed over the same group. Each rank sends every
/// other rank the slice of its rows that falls in that rank's output rows
/// (columns of `A`).
pub struct Transpose;

impl Routine for Transpose {
    fn name(&self) -> &str {
        "transpose"
    }

    fn run(&self, ctx: &RoutineContext<'_>, args: &[Value]) -> Result<Vec<Value>> {
        let args = Args::new("transpose", args, 1, 1)?;
        let h = args.matrix(0)?;
        let a = ctx.input(&h)?;
        let m = h.rows as usize;
        let in_layout = ctx.layout(h.rows, h.cols)?;
        let out_layout = ctx.layout(h.cols, h.rows)?;
        let (me, p) = (ctx.rank(), ctx.size());
        let comm = ctx.comm();

        // Slice of my rows restricted to the columns `dest` will own.
        let slice_for = |dest: usize| -> Vec<f64> {
            let cols = out_layout.owned_range(dest);
            let mut out = Vec::with_capacity(a.local_rows() * (cols.end - cols.start) as usize);
            for i in 0..a.local_rows() {
                out.extend_from_slice(&a.row(i)[cols.start as usize..cols.end as usize]);
            }
            out
        };
        for dest in (0..p).filter(|&d| d != me) {
            comm.send(dest, f64s_to_bytes(&slice_for(dest)))?;
        }

        let my_cols = out_layout.owned_range(me);
        let width = (my_cols.end - my_cols.start) as usize;
        let mut out = vec![0.0; width * m];
        for src in 0..p {
            let part = if src == me {
                slice_for(me)
            } else {
                bytes_to_f64s(&comm.recv(src)?)
            };
            let rows = in_layout.owned_range(src);
            for (li, row) in part
                .chunks_exact(width.max(1))
                .enumerate()
                .take((rows.end - rows.start) as usize)
            {
                let gi = rows.start as usize + li;
                for (jl, &x) in row.iter().enumerate().take(width) {
                    out[jl * m + gi] = x;
                }
            }
        }
        Ok(vec![Value::Matrix(ctx.emit(h.cols, h.rows, out)?)])
    }
}
