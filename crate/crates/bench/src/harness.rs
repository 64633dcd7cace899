use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Instant;

use alembic::client::{
    split_rows, BridgeContext, ClientConfig, LinkCounters, LocalRowPartition, MathLibClient,
    RowSource,
};
use alembic::rng::uniform_matrix;
use alembic::server::{Server, ServerConfig, ServerHandle};
use alembic::{DenseMatrix, MatrixHandle};

use crate::oracle;
use crate::scenario::{Routine, Scenario};
use crate::BenchError;

/// Where the benchmark finds its server.
#[derive(Debug, Clone)]
pub enum Target {
    Addr(SocketAddr),
    InfoFile(PathBuf),
}

impl Target {
    pub fn connect(&self, config: ClientConfig) -> alembic::Result<BridgeContext> {
        match self {
            Target::Addr(a) => BridgeContext::connect(*a, config),
            Target::InfoFile(p) => BridgeContext::connect_info_file(p, config),
        }
    }
}

/// Start a private in-process server when no target is given.
pub fn local_server(workers: usize) -> Result<ServerHandle, BenchError> {
    Ok(Server::start(ServerConfig::with_workers(workers))?)
}

/// Wall times of one repetition in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Phases {
    pub send_s: f64,
    pub compute_s: f64,
    pub receive_s: f64,
    pub total_s: f64,
}

impl Phases {
    /// Fraction of the total spent moving data.
    pub fn overhead(&self) -> f64 {
        if self.total_s > 0.0 {
            (self.send_s + self.receive_s) / self.total_s
        } else {
            0.0
        }
    }

    /// send + compute + receive ≤ total, with `slack` relative headroom.
    pub fn accounted(&self, slack: f64) -> bool {
        let parts = [self.send_s, self.compute_s, self.receive_s];
        parts.iter().all(|&x| x >= 0.0) && parts.iter().sum::<f64>() <= self.total_s * (1.0 + slack)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepFailure {
    /// Stable error code name, e.g. `insufficient-workers`.
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Repetition {
    pub index: usize,
    /// Absent when the repetition failed.
    pub phases: Option<Phases>,
    /// SEND_ROWS frames by client then worker.
    pub frames: Vec<Vec<u64>>,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    /// Largest relative deviation from the local oracle, when checked.
    pub check_error: Option<f64>,
    pub failure: Option<RepFailure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub scenario: Scenario,
    pub reps: Vec<Repetition>,
}

/// Mean and trimmed mean of one phase across successful repetitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: Phases,
    /// Drops the fastest and slowest sample of each phase when there are at
    /// least three.
    pub trimmed: Phases,
    pub ok: usize,
}

impl TimingReport {
    pub fn successes(&self) -> impl Iterator<Item = (&Repetition, Phases)> {
        self.reps.iter().filter_map(|r| r.phases.map(|p| (r, p)))
    }

    /// True when no repetition produced timings.
    pub fn failed(&self) -> bool {
        self.successes().next().is_none()
    }

    pub fn summary(&self) -> Option<Summary> {
        let ok: Vec<Phases> = self.successes().map(|(_, p)| p).collect();
        if ok.is_empty() {
            return None;
        }
        let field = |f: fn(&Phases) -> f64| -> (f64, f64) {
            let mut xs: Vec<f64> = ok.iter().map(f).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.sort_by(f64::total_cmp);
            let kept = if xs.len() >= 3 {
                &xs[1..xs.len() - 1]
            } else {
                &xs[..]
            };
            (mean, kept.iter().sum::<f64>() / kept.len() as f64)
        };
        let (s, st) = field(|p| p.send_s);
        let (c, ct) = field(|p| p.compute_s);
        let (r, rt) = field(|p| p.receive_s);
        let (t, tt) = field(|p| p.total_s);
        Some(Summary {
            mean: Phases {
                send_s: s,
                compute_s: c,
                receive_s: r,
                total_s: t,
            },
            trimmed: Phases {
                send_s: st,
                compute_s: ct,
                receive_s: rt,
                total_s: tt,
            },
            ok: ok.len(),
        })
    }

    /// First recorded failure.
    pub fn first_failure(&self) -> Option<&RepFailure> {
        self.reps.iter().find_map(|r| r.failure.as_ref())
    }
}

/// Run every repetition of `s`. Bridge errors end their repetition and are
/// recorded in it; only an invalid scenario is an `Err`.
pub fn run_scenario(s: &Scenario, target: &Target) -> Result<TimingReport, BenchError> {
    s.validate()?;
    let inputs = Inputs::generate(s);
    let expected = if s.check {
        Some(oracle::Expected::compute(s, &inputs.a, inputs.b.as_ref()))
    } else {
        None
    };
    let mut reps = Vec::with_capacity(s.reps);
    for index in 0..s.reps {
        let rep = match run_once(s, target, &inputs, expected.as_ref()) {
            Ok(mut rep) => {
                rep.index = index;
                rep
            }
            Err(e) => {
                log::warn!("repetition {index} failed: {e}");
                Repetition {
                    index,
                    phases: None,
                    frames: Vec::new(),
                    bytes_sent: 0,
                    bytes_received: 0,
                    check_error: None,
                    failure: Some(RepFailure {
                        code: e.code().as_str().to_string(),
                        message: e.detail(),
                    }),
                }
            }
        };
        reps.push(rep);
    }
    Ok(TimingReport {
        scenario: s.clone(),
        reps,
    })
}

/// Client-side matrices, split by client before any timer starts.
struct Inputs {
    a: DenseMatrix,
    b: Option<DenseMatrix>,
    a_parts: Vec<LocalRowPartition>,
    b_parts: Vec<LocalRowPartition>,
}

impl Inputs {
    fn generate(s: &Scenario) -> Inputs {
        let a = uniform_matrix(s.seed, s.m as usize, s.n as usize);
        let b = (s.routine == Routine::Gemm)
            .then(|| uniform_matrix(s.seed.wrapping_add(1), s.n as usize, s.k as usize));
        let split = |m: &DenseMatrix| -> Vec<LocalRowPartition> {
            split_rows(m.rows() as u64, s.clients)
                .into_iter()
                .map(|r| LocalRowPartition::from_dense(m, r.start as usize..r.end as usize))
                .collect()
        };
        let a_parts = split(&a);
        let b_parts = b.as_ref().map(split).unwrap_or_default();
        Inputs {
            a,
            b,
            a_parts,
            b_parts,
        }
    }
}

fn run_once(
    s: &Scenario,
    target: &Target,
    inputs: &Inputs,
    expected: Option<&oracle::Expected>,
) -> alembic::Result<Repetition> {
    let config = ClientConfig {
        name: "bench".into(),
        batch: s.batch.policy(),
        ..ClientConfig::default()
    };
    let ctx = target.connect(config)?;
    ctx.request_workers(s.workers)?;
    let lib = MathLibClient::register(&ctx)?;

    let start = Instant::now();
    let (ha, mut counters) = send(&ctx, s.m, s.n, &inputs.a_parts)?;
    let hb = match &inputs.b {
        Some(b) => {
            let (h, c) = send(&ctx, b.rows() as u64, b.cols() as u64, &inputs.b_parts)?;
            counters = add_counters(&counters, &c);
            Some(h)
        }
        None => None,
    };
    let sent = Instant::now();

    let mut sigma = Vec::new();
    let outputs: Vec<MatrixHandle> = match s.routine {
        Routine::Gemm => vec![lib.gemm(&ha, hb.as_ref().expect("gemm sends B"))?],
        Routine::Transpose => vec![lib.transpose(&ha)?],
        Routine::Svd => {
            let r = lib.truncated_svd(&ha, s.k as usize)?;
            sigma = r.sigma;
            vec![r.u, r.v]
        }
    };
    let computed = Instant::now();

    let before_fetch = ctx.data_counters();
    let fetched = outputs
        .iter()
        .map(|h| ctx.fetch_matrix(h))
        .collect::<alembic::Result<Vec<_>>>()?;
    let end = Instant::now();
    let bytes_received: u64 = ctx
        .data_counters()
        .iter()
        .zip(&before_fetch)
        .map(|(a, b)| a.minus(b).fetch_data_bytes)
        .sum();

    let phases = Phases {
        send_s: (sent - start).as_secs_f64(),
        compute_s: (computed - sent).as_secs_f64(),
        receive_s: (end - computed).as_secs_f64(),
        total_s: (end - start).as_secs_f64(),
    };
    let check_error = expected.map(|e| e.deviation(&inputs.a, &fetched, &sigma));
    ctx.stop()?;
    Ok(Repetition {
        index: 0,
        phases: Some(phases),
        frames: counters
            .iter()
            .map(|c| c.iter().map(|l| l.send_frames).collect())
            .collect(),
        bytes_sent: counters.iter().flatten().map(|l| l.send_data_bytes).sum(),
        bytes_received,
        check_error,
        failure: None,
    })
}

fn send(
    ctx: &BridgeContext,
    rows: u64,
    cols: u64,
    parts: &[LocalRowPartition],
) -> alembic::Result<(MatrixHandle, Vec<Vec<LinkCounters>>)> {
    let refs: Vec<&dyn RowSource> = parts.iter().map(|p| p as &dyn RowSource).collect();
    ctx.send_matrix_with_report(rows, cols, &refs)
}

fn add_counters(a: &[Vec<LinkCounters>], b: &[Vec<LinkCounters>]) -> Vec<Vec<LinkCounters>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p.plus(q)).collect())
        .collect()
}
