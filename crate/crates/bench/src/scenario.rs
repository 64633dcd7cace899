use std::fmt;
use std::path::Path;
use std::str::FromStr;

use alembic::client::BatchPolicy;

use crate::BenchError;

/// Workload run by one scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Routine {
    /// `C = A·B` with A m×n and B n×k.
    Gemm,
    /// Rank-k truncated SVD of A m×n.
    Svd,
    /// `Aᵀ` of A m×n.
    Transpose,
}

impl Routine {
    pub fn as_str(self) -> &'static str {
        match self {
            Routine::Gemm => "gemm",
            Routine::Svd => "svd",
            Routine::Transpose => "transpose",
        }
    }
}

impl fmt::Display for Routine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Routine {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        match s {
            "gemm" => Ok(Routine::Gemm),
            "svd" | "truncated_svd" => Ok(Routine::Svd),
            "transpose" => Ok(Routine::Transpose),
            other => Err(BenchError::Scenario(format!("unknown routine {other:?}"))),
        }
    }
}

/// Row-batch setting as written by the user: `1row`, `16rows`, `4KiB`,
/// `1MiB`, `512B` or a bare byte count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSpec(pub BatchPolicy);

impl BatchSpec {
    pub fn policy(self) -> BatchPolicy {
        self.0
    }
}

impl fmt::Display for BatchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            BatchPolicy::RowsPerMessage(1) => f.write_str("1row"),
            BatchPolicy::RowsPerMessage(r) => write!(f, "{r}rows"),
            BatchPolicy::Bytes(b) if b >= 1 << 20 && b % (1 << 20) == 0 => {
                write!(f, "{}MiB", b >> 20)
            }
            BatchPolicy::Bytes(b) if b >= 1 << 10 && b % (1 << 10) == 0 => {
                write!(f, "{}KiB", b >> 10)
            }
            BatchPolicy::Bytes(b) => write!(f, "{b}B"),
        }
    }
}

impl FromStr for BatchSpec {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        let t = s.trim();
        let bad = || BenchError::Scenario(format!("bad batch size {s:?}"));
        let digits = t.find(|c: char| !c.is_ascii_digit()).unwrap_or(t.len());
        let (num, unit) = t.split_at(digits);
        let n: u64 = num.parse().map_err(|_| bad())?;
        if n == 0 {
            return Err(bad());
        }
        let policy = match unit.trim() {
            "row" | "rows" => BatchPolicy::RowsPerMessage(u32::try_from(n).map_err(|_| bad())?),
            "" | "B" => BatchPolicy::Bytes(n as usize),
            "KiB" => BatchPolicy::Bytes((n << 10) as usize),
            "MiB" => BatchPolicy::Bytes((n << 20) as usize),
            "GiB" => BatchPolicy::Bytes((n << 30) as usize),
            _ => return Err(bad()),
        };
        Ok(BatchSpec(policy))
    }
}

/// One benchmark configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub routine: Routine,
    pub m: u64,
    pub n: u64,
    /// Columns of B for gemm, rank for svd, unused for transpose.
    pub k: u64,
    /// Client processes, each sending a contiguous share of the rows.
    pub clients: usize,
    pub workers: usize,
    pub batch: BatchSpec,
    pub seed: u64,
    pub reps: usize,
    /// Compare every result against a local oracle.
    pub check: bool,
}

/// Guard on the bytes a scenario may hold at once across client and server.
pub const MEMORY_GUARD_BYTES: u64 = 2 << 30;

impl Scenario {
    pub fn gemm(m: u64, n: u64, k: u64) -> Scenario {
        Scenario {
            routine: Routine::Gemm,
            m,
            n,
            k,
            clients: 1,
            workers: 2,
            batch: BatchSpec(BatchPolicy::default()),
            seed: 1,
            reps: 3,
            check: true,
        }
    }

    pub fn svd(m: u64, n: u64, k: u64) -> Scenario {
        Scenario {
            routine: Routine::Svd,
            ..Scenario::gemm(m, n, k)
        }
    }

    /// Parse the key=value form; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Scenario, BenchError> {
        let mut routine = None;
        let (mut m, mut n, mut k) = (None, None, None);
        let mut s = Scenario::gemm(1, 1, 1);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                BenchError::Scenario(format!("line {}: expected key=value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| -> Result<u64, BenchError> {
                v.replace('_', "").parse::<u64>().map_err(|_| {
                    BenchError::Scenario(format!("line {}: {key} must be an integer", lineno + 1))
                })
            };
            match key {
                "routine" => routine = Some(value.parse()?),
                "m" => m = Some(num(value)?),
                "n" => n = Some(num(value)?),
                "k" => k = Some(num(value)?),
                "clients" => s.clients = num(value)? as usize,
                "workers" => s.workers = num(value)? as usize,
                "batch_bytes" => s.batch = value.parse()?,
                "seed" => s.seed = num(value)?,
                "reps" => s.reps = num(value)? as usize,
                "check" => {
                    s.check = value.parse().map_err(|_| {
                        BenchError::Scenario(format!(
                            "line {}: check must be true or false",
                            lineno + 1
                        ))
                    })?
                }
                other => {
                    return Err(BenchError::Scenario(format!(
                        "line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        s.routine = routine.ok_or_else(|| BenchError::Scenario("missing key routine".into()))?;
        s.m = m.ok_or_else(|| BenchError::Scenario("missing key m".into()))?;
        s.n = n.ok_or_else(|| BenchError::Scenario("missing key n".into()))?;
        s.k = match (k, s.routine) {
            (Some(k), _) => k,
            (None, Routine::Transpose) => 1,
            (None, _) => return Err(BenchError::Scenario("missing key k".into())),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn read(path: &Path) -> Result<Scenario, BenchError> {
        Scenario::parse(&std::fs::read_to_string(path)?)
    }

    /// Inverse of [`parse`](Self::parse).
    pub fn render(&self) -> String {
        format!(
            "routine={}\nm={}\nn={}\nk={}\nclients={}\nworkers={}\nbatch_bytes={}\nseed={}\nreps={}\ncheck={}\n",
            self.routine, self.m, self.n, self.k, self.clients, self.workers, self.batch, self.seed, self.reps, self.check
        )
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let fail = |msg: &str| Err(BenchError::Scenario(msg.into()));
        if self.m == 0 || self.n == 0 || self.k == 0 {
            return fail("m, n and k must be at least 1");
        }
        if self.clients == 0 || self.workers == 0 || self.reps == 0 {
            return fail("clients, workers and reps must be at least 1");
        }
        if self.routine == Routine::Svd && self.k > self.m.min(self.n) {
            return fail("svd rank k must not exceed min(m, n)");
        }
        if self.memory_estimate() > MEMORY_GUARD_BYTES {
            return Err(BenchError::Scenario(format!(
                "scenario needs about {} bytes, over the {} byte guard",
                self.memory_estimate(),
                MEMORY_GUARD_BYTES
            )));
        }
        Ok(())
    }

    /// Output dimensions of the routine.
    pub fn output_dims(&self) -> (u64, u64) {
        match self.routine {
            Routine::Gemm => (self.m, self.k),
            Routine::Svd => (self.m, self.k),
            Routine::Transpose => (self.n, self.m),
        }
    }

    /// Bytes of the distributed result: C for gemm, U and V for svd.
    pub fn result_bytes(&self) -> u64 {
        let (r, c) = self.output_dims();
        let extra = if self.routine == Routine::Svd {
            self.n * self.k
        } else {
            0
        };
        (r * c + extra) * 8
    }

    /// Bytes of all matrices sent to the server.
    pub fn input_bytes(&self) -> u64 {
        let b = if self.routine == Routine::Gemm {
            self.n * self.k
        } else {
            0
        };
        (self.m * self.n + b) * 8
    }

    /// Client copy plus server copy of inputs and outputs.
    pub fn memory_estimate(&self) -> u64 {
        2u64.saturating_mul(self.input_bytes().saturating_add(self.result_bytes()))
    }
}
