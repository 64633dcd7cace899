//! Typed calls into the built-in `mathlib`.

use super::BridgeContext;
use crate::distmatrix::MatrixHandle;
use crate::error::{Error, Result};
use crate::mathlib::MATHLIB;
use crate::protocol::Value;

/// Result of `truncated_svd`: `A ~ U diag(sigma) V^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: MatrixHandle,
    pub sigma: Vec<f64>,
    pub v: MatrixHandle,
    pub converged: bool,
}

pub struct MathLibClient<'c> {
    ctx: &'c BridgeContext,
    name: String,
}

impl<'c> MathLibClient<'c> {
    /// Register the built-in library with this session.
    pub fn register(ctx: &'c BridgeContext) -> Result<Self> {
        ctx.register_library(MATHLIB, MATHLIB)?;
        Ok(Self {
            ctx,
            name: MATHLIB.into(),
        })
    }

    fn call(&self, routine: &str, args: &[Value]) -> Result<Vec<Value>> {
        self.ctx.run(&self.name, routine, args)
    }

    pub fn gemm(&self, a: &MatrixHandle, b: &MatrixHandle) -> Result<MatrixHandle> {
        single_matrix("gemm", self.call("gemm", &[a.into(), b.into()])?)
    }

    /// GEMM with an explicit per-worker memory budget for `B`.
    pub fn gemm_with_budget(
        &self,
        a: &MatrixHandle,
        b: &MatrixHandle,
        budget_bytes: u64,
        allow_streaming: bool,
    ) -> Result<MatrixHandle> {
        let args = [
            a.into(),
            b.into(),
            Value::I64(budget_bytes as i64),
            Value::Bool(allow_streaming),
        ];
        single_matrix("gemm", self.call("gemm", &args)?)
    }

    pub fn transpose(&self, a: &MatrixHandle) -> Result<MatrixHandle> {
        single_matrix("transpose", self.call("transpose", &[a.into()])?)
    }

    pub fn random_uniform(&self, rows: u64, cols: u64, seed: u64) -> Result<MatrixHandle> {
        let args = [
            Value::I64(rows as i64),
            Value::I64(cols as i64),
            Value::I64(seed as i64),
        ];
        single_matrix("random_uniform", self.call("random_uniform", &args)?)
    }

    pub fn condest(&self, a: &MatrixHandle) -> Result<f64> {
        match self.call("condest", &[a.into()])?.as_slice() {
            [Value::F64(k)] => Ok(*k),
            other => Err(unexpected("condest", other)),
        }
    }

    pub fn truncated_svd(&self, a: &MatrixHandle, k: usize) -> Result<SvdResult> {
        self.svd_call(&[a.into(), Value::I64(k as i64)], k)
    }

    pub fn truncated_svd_with(
        &self,
        a: &MatrixHandle,
        k: usize,
        tol: f64,
        max_iters: Option<usize>,
    ) -> Result<SvdResult> {
        let mut args = vec![a.into(), Value::I64(k as i64), Value::F64(tol)];
        if let Some(it) = max_iters {
            args.push(Value::I64(it as i64));
        }
        self.svd_call(&args, k)
    }

    fn svd_call(&self, args: &[Value], k: usize) -> Result<SvdResult> {
        let out = self.call("truncated_svd", args)?;
        let parsed = (|| {
            if out.len() != k + 3 {
                return None;
            }
            let u = out[0].as_matrix()?;
            let sigma = out[1..=k]
                .iter()
                .map(Value::as_f64)
                .collect::<Option<Vec<f64>>>()?;
            let v = out[k + 1].as_matrix()?;
            let converged = out[k + 2].as_bool()?;
            Some(SvdResult {
                u,
                sigma,
                v,
                converged,
            })
        })();
        parsed.ok_or_else(|| unexpected("truncated_svd", &out))
    }
}

fn single_matrix(routine: &str, out: Vec<Value>) -> Result<MatrixHandle> {
    match out.as_slice() {
        [Value::Matrix(h)] => Ok(*h),
        other => Err(unexpected(routine, other)),
    }
}

fn unexpected(routine: &str, got: &[Value]) -> Error {
    Error::Protocol(format!("{routine} returned unexpected outputs {got:?}"))
}
