//! Data-plane connections of one client process: one TCP stream per worker
//! of the session.

use std::io::{BufReader, BufWriter, Write};
use std::net::TcpStream;
use std::ops::Range;
use std::sync::Mutex;
use std::time::Duration;

use super::source::RowSource;
use crate::dense::DenseMatrix;
use crate::distmatrix::{LayoutDescriptor, MatrixHandle};
use crate::error::{Error, Result};
use crate::protocol::{
    self, decode_error_payload, decode_row_batch, encode_row_batch_into, Command, FetchRequest,
    Opcode, DEFAULT_BATCH_BYTES, FRAME_HEADER_LEN, ROW_BATCH_HEADER_LEN,
};

/// How many rows go into one SEND_ROWS frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchPolicy {
    /// As many whole rows as fit in this many data bytes, at least one.
    Bytes(usize),
    RowsPerMessage(u32),
}

impl Default for BatchPolicy {
    fn default() -> Self {
        BatchPolicy::Bytes(DEFAULT_BATCH_BYTES)
    }
}

impl BatchPolicy {
    pub fn rows_per_batch(self, cols: u64) -> u32 {
        match self {
            BatchPolicy::Bytes(b) => (b as u64 / (cols * 8)).clamp(1, u32::MAX as u64) as u32,
            BatchPolicy::RowsPerMessage(r) => r.max(1),
        }
    }
}

/// Traffic on one data connection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkCounters {
    pub send_frames: u64,
    /// Matrix entries sent, in bytes (8 per entry).
    pub send_data_bytes: u64,
    pub fetch_frames: u64,
    /// Matrix entries received, in bytes (8 per entry).
    pub fetch_data_bytes: u64,
    pub wire_bytes_out: u64,
    pub wire_bytes_in: u64,
}

impl LinkCounters {
    pub fn minus(&self, earlier: &LinkCounters) -> LinkCounters {
        LinkCounters {
            send_frames: self.send_frames - earlier.send_frames,
            send_data_bytes: self.send_data_bytes - earlier.send_data_bytes,
            fetch_frames: self.fetch_frames - earlier.fetch_frames,
            fetch_data_bytes: self.fetch_data_bytes - earlier.fetch_data_bytes,
            wire_bytes_out: self.wire_bytes_out - earlier.wire_bytes_out,
            wire_bytes_in: self.wire_bytes_in - earlier.wire_bytes_in,
        }
    }

    pub fn plus(&self, o: &LinkCounters) -> LinkCounters {
        LinkCounters {
            send_frames: self.send_frames + o.send_frames,
            send_data_bytes: self.send_data_bytes + o.send_data_bytes,
            fetch_frames: self.fetch_frames + o.fetch_frames,
            fetch_data_bytes: self.fetch_data_bytes + o.fetch_data_bytes,
            wire_bytes_out: self.wire_bytes_out + o.wire_bytes_out,
            wire_bytes_in: self.wire_bytes_in + o.wire_bytes_in,
        }
    }
}

struct DataLink {
    endpoint: String,
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    counters: LinkCounters,
}

impl DataLink {
    fn open(endpoint: &str, timeout: Duration) -> Result<DataLink> {
        let addr = endpoint.parse().map_err(|_| {
            Error::Protocol(format!(
                "server announced an invalid worker endpoint {endpoint:?}"
            ))
        })?;
        let stream = TcpStream::connect_timeout(&addr, timeout)
            .map_err(|e| Error::Connect(format!("cannot reach worker at {endpoint}: {e}")))?;
        stream.set_nodelay(true)?;
        Ok(DataLink {
            endpoint: endpoint.to_owned(),
            reader: BufReader::with_capacity(1 << 20, stream.try_clone()?),
            writer: BufWriter::with_capacity(1 << 20, stream),
            counters: LinkCounters::default(),
        })
    }

    fn write(&mut self, op: Opcode, session: u32, payload: &[u8]) -> Result<()> {
        let n = protocol::write_frame(&mut self.writer, Command::Request(op), session, payload)
            .map_err(|e| {
                Error::Connect(format!(
                    "worker {} dropped the connection: {e}",
                    self.endpoint
                ))
            })?;
        self.counters.wire_bytes_out += n as u64;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.writer.flush().map_err(|e| {
            Error::Connect(format!(
                "worker {} dropped the connection: {e}",
                self.endpoint
            ))
        })
    }

    /// Next FETCH_ROWS response batch, or the error the worker reported.
    fn read_batch(&mut self) -> Result<protocol::RowBatch> {
        let frame = protocol::read_frame(&mut self.reader)?.ok_or_else(|| {
            Error::Connect(format!("worker {} closed the connection", self.endpoint))
        })?;
        self.counters.wire_bytes_in += (FRAME_HEADER_LEN + frame.payload.len()) as u64;
        match frame.command {
            Command::Response(Opcode::FetchRows) => {
                let batch = decode_row_batch(&frame.payload)?;
                self.counters.fetch_frames += 1;
                self.counters.fetch_data_bytes += batch.data.len() as u64 * 8;
                Ok(batch)
            }
            Command::Error => Err(decode_error_payload(&frame.payload)?),
            other => Err(Error::Protocol(format!(
                "unexpected command 0x{:02x} from worker",
                other.code()
            ))),
        }
    }
}

/// One client process's data connections.
pub struct Executor {
    session: u32,
    links: Vec<Mutex<DataLink>>,
    policy: BatchPolicy,
    fetch_batch_bytes: usize,
}

impl Executor {
    pub fn connect(
        session: u32,
        endpoints: &[String],
        policy: BatchPolicy,
        fetch_batch_bytes: usize,
        timeout: Duration,
    ) -> Result<Executor> {
        let links = endpoints
            .iter()
            .map(|e| DataLink::open(e, timeout).map(Mutex::new))
            .collect::<Result<_>>()?;
        Ok(Executor {
            session,
            links,
            policy,
            fetch_batch_bytes,
        })
    }

    pub fn workers(&self) -> usize {
        self.links.len()
    }

    pub fn policy(&self) -> BatchPolicy {
        self.policy
    }

    pub fn set_policy(&mut self, policy: BatchPolicy) {
        self.policy = policy;
    }

    /// Per-worker counters, in rank order.
    pub fn counters(&self) -> Vec<LinkCounters> {
        self.links
            .iter()
            .map(|l| l.lock().unwrap().counters)
            .collect()
    }

    fn check_layout(&self, layout: &LayoutDescriptor) -> Result<()> {
        if layout.workers() != self.links.len() {
            return Err(Error::Internal(format!(
                "layout spans {} workers, executor has {} connections",
                layout.workers(),
                self.links.len()
            )));
        }
        Ok(())
    }

    /// Stream `source` to the owning workers. Consecutive rows with the same
    /// owner share a frame, up to the batch size. Returns once every worker
    /// touched has applied the rows.
    pub fn send_rows(
        &self,
        h: &MatrixHandle,
        layout: &LayoutDescriptor,
        source: &dyn RowSource,
    ) -> Result<()> {
        self.check_layout(layout)?;
        if source.cols() != h.cols {
            return Err(Error::Argument(format!(
                "rows have {} entries, matrix {} has {} columns",
                source.cols(),
                h.id,
                h.cols
            )));
        }
        let n = h.cols as usize;
        let per = self.policy.rows_per_batch(h.cols);
        let mut used = vec![false; self.links.len()];
        let mut buf: Vec<f64> = Vec::with_capacity(per.min(1 << 16) as usize * n);
        let mut run: Option<(usize, u64, u32)> = None;
        let mut payload = Vec::new();

        let mut flush = |run: (usize, u64, u32), buf: &mut Vec<f64>| -> Result<()> {
            let (owner, start, count) = run;
            payload.clear();
            encode_row_batch_into(&mut payload, h.id, start, count, h.cols, buf)?;
            let mut link = self.links[owner].lock().unwrap();
            link.write(Opcode::SendRows, self.session, &payload)?;
            link.counters.send_frames += 1;
            link.counters.send_data_bytes += buf.len() as u64 * 8;
            buf.clear();
            Ok(())
        };

        for i in source.row_indices() {
            if i >= h.rows {
                return Err(Error::Argument(format!(
                    "row {i} is outside matrix {} with {} rows",
                    h.id, h.rows
                )));
            }
            let owner = layout.owner_of_row(i)?;
            match run {
                Some((o, start, count))
                    if o == owner && start + count as u64 == i && count < per =>
                {
                    run = Some((o, start, count + 1));
                }
                Some(r) => {
                    flush(r, &mut buf)?;
                    run = Some((owner, i, 1));
                }
                None => run = Some((owner, i, 1)),
            }
            used[owner] = true;
            let at = buf.len();
            buf.resize(at + n, 0.0);
            source.fill_row(i, &mut buf[at..])?;
        }
        if let Some(r) = run {
            flush(r, &mut buf)?;
        }
        for (w, _) in used.iter().enumerate().filter(|(_, u)| **u) {
            self.sync(w, h.id)?;
        }
        Ok(())
    }

    /// Round trip on one data connection: when it returns, the worker has
    /// applied everything sent before it.
    fn sync(&self, worker: usize, matrix_id: u32) -> Result<()> {
        let mut link = self.links[worker].lock().unwrap();
        let req = FetchRequest {
            matrix_id,
            start_row: 0,
            num_rows: 0,
            batch_rows: 1,
        };
        link.write(Opcode::FetchRows, self.session, &req.encode())?;
        link.flush()?;
        let batch = link.read_batch()?;
        link.counters.fetch_frames -= 1;
        if batch.num_rows != 0 {
            return Err(Error::Protocol(format!(
                "sync answered with {} rows",
                batch.num_rows
            )));
        }
        Ok(())
    }

    /// Rows `range` of a matrix, read directly from the owning workers.
    pub fn fetch_rows(
        &self,
        h: &MatrixHandle,
        layout: &LayoutDescriptor,
        range: Range<u64>,
    ) -> Result<DenseMatrix> {
        self.check_layout(layout)?;
        if range.start > range.end || range.end > h.rows {
            return Err(Error::OutOfRange(format!(
                "rows {}..{} of a {}-row matrix",
                range.start, range.end, h.rows
            )));
        }
        let n = h.cols as usize;
        let batch_rows =
            (self.fetch_batch_bytes as u64 / (h.cols * 8)).clamp(1, u32::MAX as u64) as u32;
        let mut plan = Vec::new();
        for w in 0..self.links.len() {
            let own = layout.owned_range(w);
            let (a, b) = (own.start.max(range.start), own.end.min(range.end));
            if a < b {
                plan.push((w, a, b));
            }
        }
        for &(w, a, b) in &plan {
            let mut link = self.links[w].lock().unwrap();
            let req = FetchRequest {
                matrix_id: h.id,
                start_row: a,
                num_rows: b - a,
                batch_rows,
            };
            link.write(Opcode::FetchRows, self.session, &req.encode())?;
            link.flush()?;
        }
        let mut out = vec![0.0; (range.end - range.start) as usize * n];
        for &(w, a, b) in &plan {
            let mut link = self.links[w].lock().unwrap();
            let mut next = a;
            while next < b {
                let batch = link.read_batch()?;
                if batch.matrix_id != h.id
                    || batch.start_row != next
                    || batch.num_cols != h.cols
                    || batch.num_rows == 0
                {
                    return Err(Error::Protocol(format!(
                        "worker {w} sent rows {}.. of matrix {}, expected row {next} of matrix {}",
                        batch.start_row, batch.matrix_id, h.id
                    )));
                }
                let at = (next - range.start) as usize * n;
                out[at..at + batch.data.len()].copy_from_slice(&batch.data);
                next += batch.num_rows as u64;
            }
            if next != b {
                return Err(Error::Protocol(format!("worker {w} overshot row {b}")));
            }
        }
        Ok(DenseMatrix::from_vec(
            (range.end - range.start) as usize,
            n,
            out,
        ))
    }
}

/// Data bytes plus the row-batch header, for one SEND_ROWS frame of `rows`
/// rows and `cols` columns.
pub fn send_frame_payload_len(rows: u64, cols: u64) -> u64 {
    ROW_BATCH_HEADER_LEN as u64 + rows * cols * 8
}
