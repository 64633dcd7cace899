use std::fmt::Write as _;
use std::str::FromStr;

use crate::harness::{Phases, RepFailure, Repetition, TimingReport};
use crate::scenario::Scenario;
use crate::transfer::TransferReport;
use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Table,
    Csv,
}

impl FromStr for Format {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        match s {
            "table" => Ok(Format::Table),
            "csv" => Ok(Format::Csv),
            other => Err(BenchError::Scenario(format!("unknown format {other:?}"))),
        }
    }
}

pub const TABLE_COLUMNS: [&str; 8] = [
    "m",
    "n",
    "k",
    "result (GB)",
    "nodes",
    "send (s)",
    "compute (s)",
    "receive (s)",
];

pub const CSV_HEADER: [&str; 21] = [
    "routine",
    "m",
    "n",
    "k",
    "clients",
    "workers",
    "batch",
    "seed",
    "reps",
    "check",
    "rep",
    "send_s",
    "compute_s",
    "receive_s",
    "total_s",
    "frames",
    "bytes_sent",
    "bytes_received",
    "check_error",
    "error_code",
    "error_message",
];

pub fn format_report(report: &TimingReport, format: Format) -> String {
    format_reports(std::slice::from_ref(report), format)
}

pub fn format_reports(reports: &[TimingReport], format: Format) -> String {
    match format {
        Format::Table => table(reports),
        Format::Csv => csv_text(reports),
    }
}

/// Decimal gigabytes, one decimal place from 0.1 GB up.
pub fn format_gb(bytes: u64) -> String {
    let gb = bytes as f64 / 1e9;
    if gb >= 0.1 {
        format!("{gb:.1}")
    } else {
        format!("{gb:.2e}")
    }
}

fn table(reports: &[TimingReport]) -> String {
    let mut rows: Vec<[String; 8]> = Vec::new();
    let mut notes = String::new();
    for r in reports {
        let s = &r.scenario;
        let times = match r.summary() {
            Some(sum) => {
                [sum.mean.send_s, sum.mean.compute_s, sum.mean.receive_s].map(|x| format!("{x:.4}"))
            }
            None => ["NA", "NA", "NA"].map(String::from),
        };
        let [send, compute, receive] = times;
        rows.push([
            s.m.to_string(),
            s.n.to_string(),
            s.k.to_string(),
            format_gb(s.result_bytes()),
            format!("{}/{}", s.clients, s.workers),
            send,
            compute,
            receive,
        ]);
        let failed = r.reps.len() - r.successes().count();
        let _ = write!(
            notes,
            "{} {}x{}x{}: {} reps, {} failed",
            s.routine,
            s.m,
            s.n,
            s.k,
            r.reps.len(),
            failed
        );
        if let Some(sum) = r.summary() {
            let t = sum.trimmed;
            let _ = write!(
                notes,
                "; mean total {:.4}s, overhead {:.1}%; trimmed send/compute/receive/total {:.4}/{:.4}/{:.4}/{:.4}s",
                sum.mean.total_s,
                100.0 * sum.mean.overhead(),
                t.send_s,
                t.compute_s,
                t.receive_s,
                t.total_s
            );
        }
        if let Some(f) = r.first_failure() {
            let _ = write!(notes, "; first failure: {}: {}", f.code, f.message);
        }
        notes.push('\n');
    }
    let mut widths = TABLE_COLUMNS.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect();
        out.push_str(padded.join("  ").trim_end());
        out.push('\n');
    };
    line(&mut out, &TABLE_COLUMNS);
    for row in &rows {
        line(
            &mut out,
            &row.iter().map(String::as_str).collect::<Vec<_>>(),
        );
    }
    if !notes.is_empty() {
        out.push('\n');
        out.push_str(&notes);
    }
    out
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn frames_field(frames: &[Vec<u64>]) -> String {
    frames
        .iter()
        .map(|c| c.iter().map(u64::to_string).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("|")
}

fn parse_frames(s: &str) -> Result<Vec<Vec<u64>>, BenchError> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split('|')
        .map(|c| {
            c.split(' ')
                .map(|x| {
                    x.parse::<u64>()
                        .map_err(|_| csv_err(format!("bad frames field {s:?}")))
                })
                .collect()
        })
        .collect()
}

fn csv_err(msg: String) -> BenchError {
    BenchError::Report(msg)
}

fn csv_text(reports: &[TimingReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in reports {
        let s = &r.scenario;
        for rep in &r.reps {
            let p = rep.phases;
            let record = [
                s.routine.to_string(),
                s.m.to_string(),
                s.n.to_string(),
                s.k.to_string(),
                s.clients.to_string(),
                s.workers.to_string(),
                s.batch.to_string(),
                s.seed.to_string(),
                s.reps.to_string(),
                s.check.to_string(),
                rep.index.to_string(),
                opt(p.map(|p| p.send_s)),
                opt(p.map(|p| p.compute_s)),
                opt(p.map(|p| p.receive_s)),
                opt(p.map(|p| p.total_s)),
                frames_field(&rep.frames),
                rep.bytes_sent.to_string(),
                rep.bytes_received.to_string(),
                opt(rep.check_error),
                opt(rep.failure.as_ref().map(|f| f.code.clone())),
                opt(rep.failure.as_ref().map(|f| f.message.clone())),
            ];
            w.write_record(&record).expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// Read back csv produced by [`format_report`]. Consecutive rows with the
/// same scenario fields form one report.
pub fn parse_csv(text: &str) -> Result<Vec<TimingReport>, BenchError> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| csv_err(e.to_string()))?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(csv_err("unexpected csv header".into()));
    }
    let mut reports: Vec<TimingReport> = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| csv_err(e.to_string()))?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| {
            f(i).parse::<u64>()
                .map_err(|_| csv_err(format!("bad {} {:?}", CSV_HEADER[i], f(i))))
        };
        let float = |i: usize| -> Result<Option<f64>, BenchError> {
            if f(i).is_empty() {
                Ok(None)
            } else {
                f(i).parse::<f64>()
                    .map(Some)
                    .map_err(|_| csv_err(format!("bad {} {:?}", CSV_HEADER[i], f(i))))
            }
        };
        let scenario = Scenario {
            routine: f(0).parse()?,
            m: num(1)?,
            n: num(2)?,
            k: num(3)?,
            clients: num(4)? as usize,
            workers: num(5)? as usize,
            batch: f(6).parse()?,
            seed: num(7)?,
            reps: num(8)? as usize,
            check: f(9)
                .parse()
                .map_err(|_| csv_err(format!("bad check {:?}", f(9))))?,
        };
        let phases = match (float(11)?, float(12)?, float(13)?, float(14)?) {
            (Some(send_s), Some(compute_s), Some(receive_s), Some(total_s)) => Some(Phases {
                send_s,
                compute_s,
                receive_s,
                total_s,
            }),
            (None, None, None, None) => None,
            _ => return Err(csv_err("partial phase timings".into())),
        };
        let failure = (!f(19).is_empty()).then(|| RepFailure {
            code: f(19).to_string(),
            message: f(20).to_string(),
        });
        let rep = Repetition {
            index: num(10)? as usize,
            phases,
            frames: parse_frames(f(15))?,
            bytes_sent: num(16)?,
            bytes_received: num(17)?,
            check_error: float(18)?,
            failure,
        };
        match reports.last_mut() {
            Some(r) if r.scenario == scenario => r.reps.push(rep),
            _ => reports.push(TimingReport {
                scenario,
                reps: vec![rep],
            }),
        }
    }
    Ok(reports)
}

pub const TRANSFER_CSV_HEADER: [&str; 10] = [
    "shape",
    "rows",
    "cols",
    "batch",
    "rows_per_message",
    "frames",
    "predicted",
    "law_holds",
    "send_s",
    "data_bytes",
];

pub fn format_transfer(report: &TransferReport, format: Format) -> String {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(TRANSFER_CSV_HEADER)
                .expect("in-memory write");
            for r in &report.runs {
                w.write_record([
                    r.label.to_string(),
                    r.shape.rows.to_string(),
                    r.shape.cols.to_string(),
                    r.batch.to_string(),
                    r.rows_per_message.to_string(),
                    frames_field(&r.frames),
                    frames_field(&r.predicted),
                    r.law_holds().to_string(),
                    r.send_s.to_string(),
                    r.data_bytes.to_string(),
                ])
                .expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
        }
        Format::Table => {
            let mut out = format!(
                "{:>5}  {:>16}  {:>7}  {:>8}  {:>10}  {:>8}  {:>9}  {:>9}\n",
                "shape", "dims", "batch", "rows/msg", "messages", "law", "send (s)", "MB/s"
            );
            for r in &report.runs {
                let mbps = if r.send_s > 0.0 {
                    r.data_bytes as f64 / 1e6 / r.send_s
                } else {
                    0.0
                };
                let _ = writeln!(
                    out,
                    "{:>5}  {:>16}  {:>7}  {:>8}  {:>10}  {:>8}  {:>9.3}  {:>9.1}",
                    r.label,
                    r.shape.to_string(),
                    r.batch.to_string(),
                    r.rows_per_message,
                    r.total_frames(),
                    if r.law_holds() { "ok" } else { "MISMATCH" },
                    r.send_s,
                    mbps
                );
            }
            let mut batches: Vec<_> = report.runs.iter().map(|r| r.batch).collect();
            batches.dedup();
            out.push('\n');
            for b in batches {
                if let Some(ratio) = report.ratio(b) {
                    let _ = writeln!(out, "batch {b}: tall/wide message ratio {ratio:.3}");
                }
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gigabytes() {
        assert_eq!(format_gb(800_000_000), "0.8");
        assert_eq!(format_gb(409_600_000_000), "409.6");
        assert_eq!(format_gb(32_768), "3.28e-5");
    }

    #[test]
    fn empty_report_is_header_only_csv() {
        let r = TimingReport {
            scenario: Scenario::gemm(4, 4, 4),
            reps: Vec::new(),
        };
        assert_eq!(format_report(&r, Format::Csv), CSV_HEADER.join(",") + "\n");
        assert!(parse_csv(&format_report(&r, Format::Csv))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn frames_field_round_trips() {
        for f in [vec![], vec![vec![1, 2, 3]], vec![vec![0], vec![7]]] {
            assert_eq!(parse_frames(&frames_field(&f)).unwrap(), f);
        }
    }
}
