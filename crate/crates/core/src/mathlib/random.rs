use crate::error::{Error, Result};
use crate::protocol::Value;
use crate::rng::uniform_row;
use crate::server::{Args, Routine, RoutineContext};

/// Uniform `[0, 1)` matrix generated in place on the workers.
///
/// Arguments: `rows: int, cols: int, seed: int`. Entries depend only on
/// `(seed, row, col)`, never on the group size.
pub struct RandomUniform;

impl Routine for RandomUniform {
    fn name(&self) -> &str {
        "random_uniform"
    }

    fn run(&self, ctx: &RoutineContext<'_>, args: &[Value]) -> Result<Vec<Value>> {
        let args = Args::new("random_uniform", args, 3, 3)?;
        let (m, n, seed) = (args.int(0)?, args.int(1)?, args.int(2)?);
        if m <= 0 || n <= 0 {
            return Err(Error::Argument(format!(
                "invalid matrix dimensions {m}x{n}"
            )));
        }
        let layout = ctx.layout(m as u64, n as u64)?;
        let range = layout.owned_range(ctx.rank());
        let n = n as usize;
        let mut data = vec![0.0; (range.end - range.start) as usize * n];
        for (i, row) in range.clone().zip(data.chunks_exact_mut(n)) {
            uniform_row(seed as u64, i, row);
        }
        Ok(vec![Value::Matrix(ctx.emit(m as u64, n as u64, data)?)])
    }
}
