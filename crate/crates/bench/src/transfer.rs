use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::time::Instant;

use alembic::client::{split_rows, ClientConfig, RowSource, UniformRows};
use alembic::LayoutDescriptor;

use crate::harness::Target;
use crate::scenario::BatchSpec;
use crate::BenchError;

/// Matrix shape written `MxN`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub rows: u64,
    pub cols: u64,
}

impl Shape {
    pub fn elements(self) -> u64 {
        self.rows * self.cols
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl FromStr for Shape {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        let bad = || BenchError::Scenario(format!("bad shape {s:?}, expected MxN"));
        let (m, n) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let rows: u64 = m.trim().replace('_', "").parse().map_err(|_| bad())?;
        let cols: u64 = n.trim().replace('_', "").parse().map_err(|_| bad())?;
        if rows == 0 || cols == 0 {
            return Err(bad());
        }
        Ok(Shape { rows, cols })
    }
}

#[derive(Debug, Clone)]
pub struct TransferConfig {
    pub tall: Shape,
    pub wide: Shape,
    pub batches: Vec<BatchSpec>,
    pub workers: usize,
    pub clients: usize,
    pub seed: u64,
}

/// One shape sent at one batch size.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferRun {
    pub label: &'static str,
    pub shape: Shape,
    pub batch: BatchSpec,
    pub rows_per_message: u32,
    /// SEND_ROWS frames by client then worker, as counted by the client.
    pub frames: Vec<Vec<u64>>,
    /// The same counts derived from the layout alone.
    pub predicted: Vec<Vec<u64>>,
    pub send_s: f64,
    pub data_bytes: u64,
}

impl TransferRun {
    pub fn total_frames(&self) -> u64 {
        self.frames.iter().flatten().sum()
    }

    pub fn law_holds(&self) -> bool {
        self.frames == self.predicted
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferReport {
    pub config_workers: usize,
    pub runs: Vec<TransferRun>,
}

impl TransferReport {
    /// Tall over wide total frame count at one batch size.
    pub fn ratio(&self, batch: BatchSpec) -> Option<f64> {
        let find = |label| {
            self.runs
                .iter()
                .find(|r| r.label == label && r.batch == batch)
        };
        let (t, w) = (find("tall")?, find("wide")?);
        Some(t.total_frames() as f64 / w.total_frames() as f64)
    }
}

/// Frames each (client, worker) pair needs when client `c` sends the rows in
/// `parts[c]` in ascending order: each maximal run owned by one worker costs
/// `ceil(run / rows_per_message)` frames.
pub fn predicted_frames(
    layout: &LayoutDescriptor,
    parts: &[Range<u64>],
    rows_per_message: u32,
) -> Vec<Vec<u64>> {
    let per = u64::from(rows_per_message.max(1));
    parts
        .iter()
        .map(|part| {
            (0..layout.workers())
                .map(|w| {
                    let own = layout.owned_range(w);
                    let run = own
                        .end
                        .min(part.end)
                        .saturating_sub(own.start.max(part.start));
                    run.div_ceil(per)
                })
                .collect()
        })
        .collect()
}

/// Send both shapes at every batch size, each in a fresh session, and record
/// message counts and send times.
pub fn transfer_experiment(
    cfg: &TransferConfig,
    target: &Target,
) -> Result<TransferReport, BenchError> {
    if cfg.tall.elements() != cfg.wide.elements() {
        return Err(BenchError::Bridge(alembic::Error::Argument(format!(
            "shapes {} and {} hold different volumes",
            cfg.tall, cfg.wide
        ))));
    }
    if cfg.batches.is_empty() || cfg.workers == 0 || cfg.clients == 0 {
        return Err(BenchError::Scenario(
            "need at least one batch size, worker and client".into(),
        ));
    }
    let mut runs = Vec::new();
    for &batch in &cfg.batches {
        for (label, shape) in [("tall", cfg.tall), ("wide", cfg.wide)] {
            runs.push(send_shape(cfg, target, label, shape, batch)?);
        }
    }
    Ok(TransferReport {
        config_workers: cfg.workers,
        runs,
    })
}

fn send_shape(
    cfg: &TransferConfig,
    target: &Target,
    label: &'static str,
    shape: Shape,
    batch: BatchSpec,
) -> Result<TransferRun, BenchError> {
    let ctx = target.connect(ClientConfig {
        name: "bench-transfer".into(),
        batch: batch.policy(),
        ..ClientConfig::default()
    })?;
    ctx.request_workers(cfg.workers)?;
    let ranges = split_rows(shape.rows, cfg.clients);
    let sources: Vec<UniformRows> = ranges
        .iter()
        .map(|r| UniformRows {
            seed: cfg.seed,
            cols: shape.cols,
            rows: r.clone(),
        })
        .collect();
    let refs: Vec<&dyn RowSource> = sources.iter().map(|s| s as &dyn RowSource).collect();
    let start = Instant::now();
    let (h, counters) = ctx.send_matrix_with_report(shape.rows, shape.cols, &refs)?;
    let send_s = start.elapsed().as_secs_f64();
    let layout = ctx.layout(&h)?;
    ctx.stop()?;
    let rows_per_message = batch.policy().rows_per_batch(shape.cols);
    Ok(TransferRun {
        label,
        shape,
        batch,
        rows_per_message,
        frames: counters
            .iter()
            .map(|c| c.iter().map(|l| l.send_frames).collect())
            .collect(),
        predicted: predicted_frames(&layout, &ranges, rows_per_message),
        send_s,
        data_bytes: counters.iter().flatten().map(|l| l.send_data_bytes).sum(),
    })
}
