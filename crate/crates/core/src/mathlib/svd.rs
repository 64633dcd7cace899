//! Truncated SVD by Golub-Kahan-Lanczos bidiagonalization.
//!
//! Left Lanczos vectors are distributed like the rows of `A`; right vectors
//! have length `n` and are replicated on every rank. Both bases are fully
//! reorthogonalized (classical Gram-Schmidt, two passes). After step `j` the
//! Ritz pairs come from the SVD of the `j x j` upper-bidiagonal `B_j`, and
//! pair `i` has residual `|beta_j * x_i[j-1]|`, where `x_i` is its left
//! singular vector of `B_j`.
//!
//! Output signs are canonical: the first entry of each right singular vector
//! whose magnitude exceeds [`SIGN_THRESHOLD`] is positive.

use nalgebra::DMatrix;

use super::kernels::{axpy, dot, matvec, matvec_t, scale};
use crate::comm::Communicator;
use crate::error::{Error, Result};
use crate::protocol::Value;
use crate::rng::uniform_row;
use crate::server::{Args, Routine, RoutineContext};

pub const DEFAULT_SVD_TOL: f64 = 1e-10;

/// Entries at or below this magnitude are skipped when choosing a sign.
pub const SIGN_THRESHOLD: f64 = 1.5e-8;

const START_SEED: u64 = 0x5EED_0001;
const RESTART_V_SEED: u64 = 0x5EED_1000;
const RESTART_U_SEED: u64 = 0x5EED_2000;

/// Arguments: `A, k: int [, tol: f64] [, max_iters: int]`.
/// Outputs: `U (m x k), sigma_1 .. sigma_k, V (n x k), converged: bool`, with
/// singular values in non-increasing order.
///
/// Stops as soon as the `k` leading Ritz pairs have residual at most
/// `tol * sigma_1`, or after `max_iters` steps (default `min(m, n)`).
pub struct TruncatedSvd;

impl Routine for TruncatedSvd {
    fn name(&self) -> &str {
        "truncated_svd"
    }

    fn run(&self, ctx: &RoutineContext<'_>, args: &[Value]) -> Result<Vec<Value>> {
        let args = Args::new("truncated_svd", args, 2, 4)?;
        let h = args.matrix(0)?;
        let k = args.int(1)?;
        let tol = args.opt_f64(2)?.unwrap_or(DEFAULT_SVD_TOL);
        let full = h.rows.min(h.cols);
        if k < 1 || k as u64 > full {
            return Err(Error::Argument(format!(
                "k must be in 1..={full} for a {}x{} matrix, got {k}",
                h.rows, h.cols
            )));
        }
        if !(tol > 0.0) {
            return Err(Error::Argument(format!("tol must be positive, got {tol}")));
        }
        let k = k as usize;
        let cap = match args.opt_int(3)? {
            Some(it) if it < k as i64 => {
                return Err(Error::Argument(format!("max_iters {it} is below k = {k}")))
            }
            Some(it) => (it as u64).min(full) as usize,
            None => full as usize,
        };
        let a = ctx.input(&h)?;
        let layout = ctx.layout(h.rows, h.cols)?;
        let rows = layout.owned_range(ctx.rank());
        let lz = Lanczos {
            comm: ctx.comm(),
            a: a.data(),
            n: h.cols as usize,
            m: h.rows as usize,
            first_row: rows.start,
            local_rows: a.local_rows(),
        };
        let out = lz.run(k, tol, cap)?;

        let u = ctx.emit(h.rows, k as u64, out.u_local)?;
        let v_layout = ctx.layout(h.cols, k as u64)?;
        let vr = v_layout.owned_range(ctx.rank());
        let v_rows = out.v[vr.start as usize * k..vr.end as usize * k].to_vec();
        let v = ctx.emit(h.cols, k as u64, v_rows)?;

        let mut values = vec![Value::Matrix(u)];
        values.extend(out.sigma.iter().map(|&s| Value::F64(s)));
        values.push(Value::Matrix(v));
        values.push(Value::Bool(out.converged));
        Ok(values)
    }
}

struct Lanczos<'c> {
    comm: &'c Communicator,
    a: &'c [f64],
    m: usize,
    n: usize,
    first_row: u64,
    local_rows: usize,
}

struct SvdParts {
    /// This rank's rows of U, row-major `local_rows x k`.
    u_local: Vec<f64>,
    sigma: Vec<f64>,
    /// All of V, row-major `n x k`.
    v: Vec<f64>,
    converged: bool,
}

/// Ritz data from the SVD of the small projected matrix, ordered by
/// decreasing singular value.
struct Ritz {
    sigma: Vec<f64>,
    // Column t is the coefficient vector of pair t in the left basis.
    x: DMatrix<f64>,
    // Column t is the coefficient vector of pair t in the right basis.
    y: DMatrix<f64>,
}

impl Lanczos<'_> {
    fn run(&self, k: usize, tol: f64, cap: usize) -> Result<SvdParts> {
        let local_sq: f64 = self.a.iter().map(|x| x * x).sum();
        let anorm = self.comm.allreduce_sum(&[local_sq])?[0].sqrt();
        let tiny = anorm * 1e-13;

        let mut us: Vec<Vec<f64>> = Vec::new();
        let mut vs: Vec<Vec<f64>> = Vec::new();
        let mut alphas = Vec::new();
        let mut betas: Vec<f64> = Vec::new();

        let mut v = centered_row(START_SEED, 0, self.n);
        let nv = dot(&v, &v).sqrt();
        scale(1.0 / nv, &mut v);
        vs.push(v);

        let mut converged = false;
        let mut ritz = None;
        for j in 0..cap {
            // alpha_j u_j = A v_j - beta_{j-1} u_{j-1}
            let mut p = matvec(self.a, self.n, &vs[j]);
            if j > 0 {
                axpy(-betas[j - 1], &us[j - 1], &mut p);
            }
            self.reorth_dist(&mut p, &us)?;
            let mut alpha = self.dist_norm(&p)?;
            if alpha <= tiny {
                alpha = 0.0;
                p = self.restart_u(j, &us)?;
            } else {
                scale(1.0 / alpha, &mut p);
            }
            us.push(p);
            alphas.push(alpha);

            // beta_j v_{j+1} = A^T u_j - alpha_j v_j
            let mut r = self.comm.allreduce_sum(&matvec_t(self.a, self.n, &us[j]))?;
            axpy(-alpha, &vs[j], &mut r);
            reorth_local(&mut r, &vs);
            let mut beta = dot(&r, &r).sqrt();
            if beta <= tiny {
                beta = 0.0;
            }
            betas.push(beta);
            let steps = j + 1;

            // A wide matrix exhausts the left space first; then the Ritz
            // values of the square B_j are not exact, but those of the
            // augmented [B_j, beta_j e_j] are.
            let last = steps == cap;
            let augment = last && steps == self.m && beta > 0.0 && steps < self.n;
            if augment {
                scale(1.0 / beta, &mut r);
                vs.push(r);
                let rz = bidiagonal_svd(&alphas, &betas, true)?;
                converged = true;
                ritz = Some(rz);
                break;
            }
            if steps >= k {
                let rz = bidiagonal_svd(&alphas, &betas[..steps - 1], false)?;
                let bound = tol * rz.sigma[0];
                converged = (0..k).all(|i| (beta * rz.x[(steps - 1, i)]).abs() <= bound);
                ritz = Some(rz);
                if converged || last {
                    break;
                }
            }
            if last {
                break;
            }
            let next = if beta == 0.0 {
                match self.restart_v(j, &vs) {
                    Some(v) => v,
                    None => break,
                }
            } else {
                scale(1.0 / beta, &mut r);
                r
            };
            vs.push(next);
        }

        let rz = match ritz {
            Some(rz) => rz,
            None => {
                let steps = alphas.len();
                bidiagonal_svd(&alphas, &betas[..steps.saturating_sub(1)], false)?
            }
        };
        Ok(self.assemble(&rz, &us, &vs, k, converged))
    }

    fn assemble(
        &self,
        rz: &Ritz,
        us: &[Vec<f64>],
        vs: &[Vec<f64>],
        k: usize,
        converged: bool,
    ) -> SvdParts {
        let mut u_local = vec![0.0; self.local_rows * k];
        let mut v = vec![0.0; self.n * k];
        for i in 0..k {
            for (t, ut) in us.iter().enumerate().take(rz.x.nrows()) {
                let c = rz.x[(t, i)];
                for (row, &x) in ut.iter().enumerate() {
                    u_local[row * k + i] += c * x;
                }
            }
            for (t, vt) in vs.iter().enumerate().take(rz.y.nrows()) {
                let c = rz.y[(t, i)];
                for (row, &x) in vt.iter().enumerate() {
                    v[row * k + i] += c * x;
                }
            }
            let lead = (0..self.n)
                .map(|row| v[row * k + i])
                .find(|x| x.abs() > SIGN_THRESHOLD);
            if lead.is_some_and(|x| x < 0.0) {
                for row in 0..self.n {
                    v[row * k + i] = -v[row * k + i];
                }
                for row in 0..self.local_rows {
                    u_local[row * k + i] = -u_local[row * k + i];
                }
            }
        }
        SvdParts {
            u_local,
            sigma: rz.sigma[..k].to_vec(),
            v,
            converged,
        }
    }

    fn dist_norm(&self, x: &[f64]) -> Result<f64> {
        Ok(self.comm.allreduce_sum(&[dot(x, x)])?[0].sqrt())
    }

    /// Two passes of classical Gram-Schmidt against a distributed basis.
    fn reorth_dist(&self, x: &mut [f64], basis: &[Vec<f64>]) -> Result<()> {
        if basis.is_empty() {
            return Ok(());
        }
        for _ in 0..2 {
            let local: Vec<f64> = basis.iter().map(|b| dot(b, x)).collect();
            let coef = self.comm.allreduce_sum(&local)?;
            for (b, c) in basis.iter().zip(coef) {
                axpy(-c, b, x);
            }
        }
        Ok(())
    }

    /// Unit vector orthogonal to the left basis, used when `A v_j` lies in
    /// its span.
    fn restart_u(&self, j: usize, us: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut x = vec![0.0; self.local_rows];
        for (i, xi) in x.iter_mut().enumerate() {
            let mut one = [0.0];
            uniform_row(
                RESTART_U_SEED + j as u64,
                self.first_row + i as u64,
                &mut one,
            );
            *xi = one[0] - 0.5;
        }
        self.reorth_dist(&mut x, us)?;
        let nx = self.dist_norm(&x)?;
        if nx == 0.0 {
            return Err(Error::Routine("left Lanczos basis exhausted".into()));
        }
        scale(1.0 / nx, &mut x);
        Ok(x)
    }

    fn restart_v(&self, j: usize, vs: &[Vec<f64>]) -> Option<Vec<f64>> {
        if vs.len() >= self.n {
            return None;
        }
        let mut x = centered_row(RESTART_V_SEED, j as u64, self.n);
        reorth_local(&mut x, vs);
        let nx = dot(&x, &x).sqrt();
        if nx <= 1e-8 {
            return None;
        }
        scale(1.0 / nx, &mut x);
        Some(x)
    }
}

fn centered_row(seed: u64, row: u64, n: usize) -> Vec<f64> {
    let mut x = vec![0.0; n];
    uniform_row(seed, row, &mut x);
    x.iter_mut().for_each(|v| *v -= 0.5);
    x
}

fn reorth_local(x: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        let coef: Vec<f64> = basis.iter().map(|b| dot(b, x)).collect();
        for (b, c) in basis.iter().zip(coef) {
            axpy(-c, b, x);
        }
    }
}

/// SVD of the upper-bidiagonal matrix with diagonal `alphas` and
/// superdiagonal `supers`. With `augment`, `supers` has one more entry and
/// the matrix gains a final column holding it.
fn bidiagonal_svd(alphas: &[f64], supers: &[f64], augment: bool) -> Result<Ritz> {
    let s = alphas.len();
    let cols = if augment { s + 1 } else { s };
    let mut b = DMatrix::<f64>::zeros(s, cols);
    for (i, &a) in alphas.iter().enumerate() {
        b[(i, i)] = a;
    }
    for (i, &beta) in supers.iter().enumerate() {
        b[(i, i + 1)] = beta;
    }
    let svd = b.svd(true, true);
    let (Some(x), Some(yt)) = (svd.u, svd.v_t) else {
        return Err(Error::Routine(
            "bidiagonal SVD did not return vectors".into(),
        ));
    };
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&p, &q| svd.singular_values[q].total_cmp(&svd.singular_values[p]));
    let sigma = order.iter().map(|&t| svd.singular_values[t]).collect();
    let x = DMatrix::from_fn(x.nrows(), order.len(), |r, c| x[(r, order[c])]);
    let y = DMatrix::from_fn(yt.ncols(), order.len(), |r, c| yt[(order[c], r)]);
    Ok(Ritz { sigma, x, y })
}
