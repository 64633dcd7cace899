use std::process::Command;

use alembic::client::BatchPolicy;
use alembic::server::{Server, ServerConfig};
use alembic::ErrorCode;
use alembic_bench::{
    format_report, parse_csv, run_scenario, transfer_experiment, BatchSpec, BenchError, Format,
    Phases, RepFailure, Repetition, Routine, Scenario, Shape, Target, TimingReport, TransferConfig,
};
use proptest::prelude::*;

fn target(workers: usize) -> (alembic::server::ServerHandle, Target) {
    let srv = Server::start(ServerConfig::with_workers(workers)).unwrap();
    let t = Target::Addr(srv.addr());
    (srv, t)
}

#[test]
fn gemm_scenario_reports_three_positive_phase_triples() {
    let (_srv, t) = target(2);
    let mut s = Scenario::gemm(64, 64, 64);
    s.workers = 2;
    let r = run_scenario(&s, &t).unwrap();
    assert_eq!(r.reps.len(), 3);
    for rep in &r.reps {
        let p = rep.phases.unwrap();
        assert!(p.send_s > 0.0 && p.compute_s > 0.0 && p.receive_s > 0.0);
        assert!(p.accounted(0.05), "{p:?}");
        assert!(rep.check_error.unwrap() <= 1e-12);
        assert_eq!(rep.bytes_sent, 2 * 64 * 64 * 8);
        assert_eq!(rep.bytes_received, 64 * 64 * 8);
        // One client, two workers, 1 MiB batches: one frame per worker per matrix.
        assert_eq!(rep.frames, vec![vec![2, 2]]);
    }
    let sum = r.summary().unwrap();
    assert_eq!(sum.ok, 3);
    assert!(sum.trimmed.total_s > 0.0);
}

#[test]
fn frame_counts_follow_the_layout_for_several_clients() {
    let (srv, t) = target(3);
    let mut s = Scenario::gemm(90, 7, 5);
    s.routine = Routine::Transpose;
    s.clients = 2;
    s.workers = 3;
    s.reps = 1;
    s.batch = BatchSpec(BatchPolicy::RowsPerMessage(4));
    let r = run_scenario(&s, &t).unwrap();
    // Clients own rows [0,45) and [45,90); workers own [0,30) [30,60) [60,90).
    // Runs: client 0 → 30, 15, 0 rows; client 1 → 0, 15, 30 rows.
    assert_eq!(r.reps[0].frames, vec![vec![8, 4, 0], vec![0, 4, 8]]);
    assert_eq!(srv.send_rows_frames().iter().sum::<u64>(), 24);
    assert_eq!(r.reps[0].check_error, Some(0.0));
}

#[test]
fn too_many_workers_gives_a_failure_report() {
    let (_srv, t) = target(2);
    let mut s = Scenario::gemm(8, 8, 8);
    s.workers = 5;
    s.reps = 2;
    let r = run_scenario(&s, &t).unwrap();
    assert!(r.failed());
    assert!(r.summary().is_none());
    let f = r.first_failure().unwrap();
    assert_eq!(f.code, ErrorCode::InsufficientWorkers.as_str());
    let table = format_report(&r, Format::Table);
    let row: Vec<&str> = table.lines().nth(1).unwrap().split_whitespace().collect();
    assert_eq!(row[5..], ["NA", "NA", "NA"], "{table}");
    assert!(table.contains("insufficient workers"));
}

#[test]
fn svd_scenario_is_cross_checked() {
    let (_srv, t) = target(4);
    let mut s = Scenario::svd(400, 60, 8);
    s.workers = 4;
    s.reps = 1;
    let r = run_scenario(&s, &t).unwrap();
    let rep = &r.reps[0];
    assert!(rep.failure.is_none(), "{:?}", rep.failure);
    assert!(rep.check_error.unwrap() <= 1e-8);
    assert_eq!(rep.bytes_received, (400 * 8 + 60 * 8) * 8);
}

#[test]
fn transfer_counts_match_for_small_shapes() {
    let (srv, t) = target(3);
    let cfg = TransferConfig {
        tall: Shape { rows: 600, cols: 4 },
        wide: Shape {
            rows: 20,
            cols: 120,
        },
        batches: vec![
            BatchSpec(BatchPolicy::RowsPerMessage(1)),
            BatchSpec(BatchPolicy::Bytes(1000)),
        ],
        workers: 3,
        clients: 2,
        seed: 3,
    };
    let report = transfer_experiment(&cfg, &t).unwrap();
    assert_eq!(report.runs.len(), 4);
    assert!(report.runs.iter().all(|r| r.law_holds()));
    assert_eq!(report.ratio(cfg.batches[0]), Some(30.0));
    let total: u64 = report.runs.iter().map(|r| r.total_frames()).sum();
    assert_eq!(total, srv.send_rows_frames().iter().sum::<u64>());
}

#[test]
fn transfer_rejects_unequal_volumes() {
    let (_srv, t) = target(1);
    let cfg = TransferConfig {
        tall: Shape { rows: 10, cols: 2 },
        wide: Shape { rows: 2, cols: 11 },
        batches: vec![BatchSpec(BatchPolicy::RowsPerMessage(1))],
        workers: 1,
        clients: 1,
        seed: 0,
    };
    match transfer_experiment(&cfg, &t) {
        Err(BenchError::Bridge(e)) => assert_eq!(e.code(), ErrorCode::Argument),
        other => panic!("expected argument error, got {other:?}"),
    }
}

fn any_phases() -> impl Strategy<Value = Phases> {
    (0.0f64..10.0, 0.0f64..10.0, 0.0f64..10.0, 0.0f64..40.0).prop_map(
        |(send_s, compute_s, receive_s, total_s)| Phases {
            send_s,
            compute_s,
            receive_s,
            total_s,
        },
    )
}

fn any_rep() -> impl Strategy<Value = Repetition> {
    (
        0usize..10,
        proptest::option::of(any_phases()),
        proptest::collection::vec(proptest::collection::vec(0u64..1000, 1..4), 0..3),
        any::<u64>(),
        any::<u64>(),
        proptest::option::of(0.0f64..1.0),
        proptest::option::of(("[a-z ]{1,12}", "[ -~]{0,30}")),
    )
        .prop_map(
            |(index, phases, frames, bytes_sent, bytes_received, check_error, failure)| {
                Repetition {
                    index,
                    phases,
                    frames,
                    bytes_sent,
                    bytes_received,
                    check_error,
                    failure: failure.map(|(code, message)| RepFailure { code, message }),
                }
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn csv_reparses_to_the_same_report(
        reps in proptest::collection::vec(any_rep(), 1..5),
        m in 1u64..100_000,
        clients in 1usize..4,
        batch in prop_oneof![Just("1row"), Just("4KiB"), Just("1MiB"), Just("777")],
    ) {
        let mut s = Scenario::svd(m, 50, 5);
        s.clients = clients;
        s.batch = batch.parse().unwrap();
        let r = TimingReport { scenario: s, reps };
        let text = format_report(&r, Format::Csv);
        prop_assert_eq!(parse_csv(&text).unwrap(), vec![r]);
    }
}

#[test]
fn cli_run_and_transfer() {
    let dir = tempfile::tempdir().unwrap();
    let info = dir.path().join("server.info");
    let _srv = Server::start(ServerConfig {
        info_file: Some(info.clone()),
        ..ServerConfig::with_workers(3)
    })
    .unwrap();

    let scenario = dir.path().join("gemm.txt");
    std::fs::write(
        &scenario,
        "routine=gemm\nm=40\nn=30\nk=20\nclients=2\nworkers=3\nbatch_bytes=4KiB\nreps=2\n",
    )
    .unwrap();
    let out = dir.path().join("gemm.csv");
    let status = Command::new(env!("CARGO_BIN_EXE_bench"))
        .args(["run", "--scenario"])
        .arg(&scenario)
        .arg("--info-file")
        .arg(&info)
        .args(["--format", "csv", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let reports = parse_csv(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0].reps.len(), 2);
    assert!(reports[0]
        .reps
        .iter()
        .all(|r| r.phases.is_some_and(|p| p.accounted(0.05))));

    let output = Command::new(env!("CARGO_BIN_EXE_bench"))
        .args([
            "transfer",
            "--tall",
            "400x3",
            "--wide",
            "10x120",
            "--batches",
            "1row,1KiB",
            "--workers",
            "2",
        ])
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(
        text.contains("batch 1row: tall/wide message ratio 40.000"),
        "{text}"
    );

    let bad = Command::new(env!("CARGO_BIN_EXE_bench"))
        .args(["transfer", "--tall", "400x3", "--wide", "10x100"])
        .output()
        .unwrap();
    assert!(!bad.status.success());
}
