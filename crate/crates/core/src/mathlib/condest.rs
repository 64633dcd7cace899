use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::protocol::Value;
use crate::server::{Args, Routine, RoutineContext};

pub const DEFAULT_CONDEST_MAX_COLS: u64 = 4096;

/// 2-norm condition number `sigma_max / sigma_min` of a tall matrix, from the
/// eigenvalues of the Gram matrix `A^T A`.
///
/// The Gram matrix squares the condition number, so estimates above roughly
/// 1e8 lose accuracy. Returns infinity when `sigma_min` underflows.
pub struct CondEst {
    pub max_cols: u64,
}

impl Routine for CondEst {
    fn name(&self) -> &str {
        "condest"
    }

    fn run(&self, ctx: &RoutineContext<'_>, args: &[Value]) -> Result<Vec<Value>> {
        let args = Args::new("condest", args, 1, 1)?;
        let h = args.matrix(0)?;
        if h.cols > self.max_cols {
            return Err(Error::TooLarge(format!(
                "condest handles at most {} columns, got {}",
                self.max_cols, h.cols
            )));
        }
        if h.rows < h.cols {
            return Err(Error::Argument(format!(
                "condest needs rows >= cols, got {}x{}",
                h.rows, h.cols
            )));
        }
        let a = ctx.input(&h)?;
        let n = h.cols as usize;
        let mut gram = vec![0.0; n * n];
        for i in 0..a.local_rows() {
            let row = a.row(i);
            for (p, &x) in row.iter().enumerate() {
                let g = &mut gram[p * n..(p + 1) * n];
                for q in p..n {
                    g[q] += x * row[q];
                }
            }
        }
        let comm = ctx.comm();
        let gram = comm.allreduce_sum(&gram)?;
        let mut kappa = [0.0];
        if ctx.rank() == 0 {
            let g = DMatrix::from_fn(n, n, |p, q| {
                if p <= q {
                    gram[p * n + q]
                } else {
                    gram[q * n + p]
                }
            });
            let eig = SymmetricEigen::new(g).eigenvalues;
            let hi = eig
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)
                .max(0.0)
                .sqrt();
            let lo = eig
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min)
                .max(0.0)
                .sqrt();
            kappa[0] = if lo < 1e-300 { f64::INFINITY } else { hi / lo };
        }
        let kappa = comm.broadcast_f64(0, &kappa)?[0];
        Ok(vec![Value::F64(kappa)])
    }
}
