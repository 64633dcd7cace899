mod common;

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::net::TcpStream;

use alembic::client::{BridgeContext, ClientConfig};
use alembic::protocol::{
    decode_error_payload, decode_frame, decode_values, encode_frame, encode_values, Command,
    Opcode, Value,
};
use alembic::rng::uniform_matrix;
use alembic::server::{Server, ServerConfig};
use alembic::{ErrorCode, MatrixHandle};
use common::*;

#[test]
fn concurrent_sessions_get_disjoint_workers_and_exchange_no_bytes() {
    let srv = server(9);
    let a = BridgeContext::connect(srv.addr(), ClientConfig::default()).unwrap();
    let b = BridgeContext::connect(srv.addr(), ClientConfig::default()).unwrap();
    a.request_workers(4).unwrap();
    b.request_workers(3).unwrap();
    let ea: BTreeSet<String> = a.worker_endpoints().into_iter().collect();
    let eb: BTreeSet<String> = b.worker_endpoints().into_iter().collect();
    assert!(ea.is_disjoint(&eb));

    let c = BridgeContext::connect(srv.addr(), ClientConfig::default()).unwrap();
    assert_eq!(
        c.request_workers(5).unwrap_err().code(),
        ErrorCode::InsufficientWorkers
    );
    assert_eq!(srv.pool_status().assigned, 7);

    let (x1, y1) = (uniform_matrix(1, 40, 16), uniform_matrix(2, 16, 12));
    let (x2, y2) = (uniform_matrix(3, 33, 20), uniform_matrix(4, 20, 5));
    let pa = alembic::client::MathLibClient::register(&a).unwrap();
    let pb = alembic::client::MathLibClient::register(&b).unwrap();
    srv.reset_traffic();
    let (ca, cb) = std::thread::scope(|s| {
        let ta = s.spawn(|| {
            let h = pa
                .gemm(&a.send_dense(&x1).unwrap(), &a.send_dense(&y1).unwrap())
                .unwrap();
            a.fetch_matrix(&h).unwrap()
        });
        let tb = s.spawn(|| {
            let h = pb
                .gemm(&b.send_dense(&x2).unwrap(), &b.send_dense(&y2).unwrap())
                .unwrap();
            b.fetch_matrix(&h).unwrap()
        });
        (ta.join().unwrap(), tb.join().unwrap())
    });
    let traffic = srv.traffic();
    let (ga, gb): (Vec<u32>, Vec<u32>) = ((0..4).collect(), (4..7).collect());
    assert_eq!(traffic.bytes_between(&ga, &gb), 0);
    assert!(traffic.bytes_within(&ga) > 0 && traffic.bytes_within(&gb) > 0);

    // Same results as each session alone.
    for (x, y, got) in [(&x1, &y1, &ca), (&x2, &y2, &cb)] {
        let solo = server(1);
        let ctx = session(&solo, 1);
        let lib = with_mathlib(&ctx);
        let h = lib
            .gemm(&ctx.send_dense(x).unwrap(), &ctx.send_dense(y).unwrap())
            .unwrap();
        assert!(ctx.fetch_matrix(&h).unwrap().bit_eq(got));
    }

    // The failed request left the session able to try again once workers free up.
    a.stop().unwrap();
    assert_eq!(c.request_workers(5).unwrap(), 5);
}

#[test]
fn released_workers_can_be_reused() {
    let srv = server(3);
    let a = session(&srv, 3);
    let other = BridgeContext::connect(srv.addr(), ClientConfig::default()).unwrap();
    assert_eq!(
        other.request_workers(1).unwrap_err().code(),
        ErrorCode::InsufficientWorkers
    );
    a.stop().unwrap();
    let b = session(&srv, 2);
    assert_eq!(b.workers(), 2);
    assert_eq!(srv.pool_status().free, 1);
    drop(b);
    // Dropping a context closes its session.
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(5);
    while srv.pool_status().free != 3 && std::time::Instant::now() < deadline {
        std::thread::sleep(std::time::Duration::from_millis(5));
    }
    assert_eq!(srv.pool_status().free, 3);
    assert_eq!(srv.resident_blocks(), 0);
}

#[test]
fn results_stay_on_the_server_until_fetched() {
    let srv = server(3);
    let ctx = session(&srv, 3);
    let lib = with_mathlib(&ctx);
    let (m, n) = (300u64, 40u64);
    let a = ctx.send_dense(&uniform_matrix(5, m as usize, 20)).unwrap();
    let b = ctx.send_dense(&uniform_matrix(6, 20, n as usize)).unwrap();
    let before = ctx.control_stats();
    let data_before: u64 = ctx.data_counters().iter().map(|c| c.wire_bytes_in).sum();
    let c = lib.gemm(&a, &b).unwrap();
    let run = ctx.control_stats().minus(&before);
    assert_eq!(run.requests, 1);
    assert!(run.total_bytes() < 4096, "{run:?}");
    let data_after: u64 = ctx.data_counters().iter().map(|c| c.wire_bytes_in).sum();
    assert_eq!(data_after, data_before);

    let fetch_before: u64 = ctx.data_counters().iter().map(|c| c.fetch_data_bytes).sum();
    ctx.fetch_matrix(&c).unwrap();
    let fetched: u64 = ctx
        .data_counters()
        .iter()
        .map(|c| c.fetch_data_bytes)
        .sum::<u64>()
        - fetch_before;
    assert_eq!(fetched, m * n * 8);
}

#[test]
fn each_failure_has_its_own_code() {
    let srv = server(2);
    let ctx = BridgeContext::connect(srv.addr(), ClientConfig::default()).unwrap();
    assert_eq!(
        ctx.create_matrix(3, 3).unwrap_err().code(),
        ErrorCode::ProtocolState
    );
    assert_eq!(
        ctx.request_workers(3).unwrap_err().code(),
        ErrorCode::InsufficientWorkers
    );
    ctx.request_workers(2).unwrap();
    assert_eq!(
        ctx.run("mathlib", "gemm", &[]).unwrap_err().code(),
        ErrorCode::UnknownLibrary
    );
    assert_eq!(
        ctx.register_library("nosuch", "nosuch").unwrap_err().code(),
        ErrorCode::UnknownLibrary
    );
    ctx.register_library("mathlib", "mathlib").unwrap();
    ctx.register_library("mathlib", "mathlib").unwrap();
    assert_eq!(
        ctx.run("mathlib", "frobnicate", &[]).unwrap_err().code(),
        ErrorCode::UnknownRoutine
    );

    let bogus = MatrixHandle::new(42, 3, 3);
    assert_eq!(
        ctx.run("mathlib", "transpose", &[bogus.into()])
            .unwrap_err()
            .code(),
        ErrorCode::Handle
    );
    let a = ctx.send_dense(&uniform_matrix(1, 4, 4)).unwrap();
    let lying = MatrixHandle::new(a.id, 5, 4);
    assert_eq!(
        ctx.run("mathlib", "transpose", &[lying.into()])
            .unwrap_err()
            .code(),
        ErrorCode::Handle
    );
    let (empty, _) = ctx.create_matrix(4, 4).unwrap();
    assert_eq!(
        ctx.run("mathlib", "transpose", &[empty.into()])
            .unwrap_err()
            .code(),
        ErrorCode::NotReady
    );
    assert_eq!(
        ctx.run("mathlib", "gemm", &[a.into(), empty.into()])
            .unwrap_err()
            .code(),
        ErrorCode::NotReady
    );
    assert_eq!(
        ctx.run("mathlib", "transpose", &[Value::I32(1)])
            .unwrap_err()
            .code(),
        ErrorCode::Argument
    );
    assert_eq!(
        ctx.fetch_rows(&a, 2..9).unwrap_err().code(),
        ErrorCode::OutOfRange
    );
    assert_eq!(
        ctx.fetch_matrix(&empty).unwrap_err().code(),
        ErrorCode::NotReady
    );
    assert_eq!(
        ctx.create_matrix(0, 4).unwrap_err().code(),
        ErrorCode::Argument
    );
    assert_eq!(
        ctx.request_workers(1).unwrap_err().code(),
        ErrorCode::ProtocolState
    );

    ctx.stop().unwrap();
    ctx.stop().unwrap();
    assert_eq!(
        ctx.run("mathlib", "transpose", &[a.into()])
            .unwrap_err()
            .code(),
        ErrorCode::ContextClosed
    );
    assert_eq!(
        ctx.fetch_matrix(&a).unwrap_err().code(),
        ErrorCode::ContextClosed
    );
}

#[test]
fn connect_failures_and_info_file() {
    let dir = tempfile::tempdir().unwrap();
    let info = dir.path().join("server.info");
    let srv = Server::start(ServerConfig {
        workers: 1,
        info_file: Some(info.clone()),
        ..ServerConfig::default()
    })
    .unwrap();
    let ctx = BridgeContext::connect_info_file(&info, ClientConfig::default()).unwrap();
    assert_eq!(ctx.pool_size(), 1);
    drop(ctx);

    let port = srv.addr().port();
    drop(srv);
    let err = BridgeContext::connect(("127.0.0.1", port), ClientConfig::default())
        .err()
        .unwrap();
    assert_eq!(err.code(), ErrorCode::Connect);
}

fn raw_request(
    stream: &mut TcpStream,
    cmd: Command,
    sid: u32,
    payload: &[u8],
) -> (Command, u32, Vec<u8>) {
    stream
        .write_all(&encode_frame(cmd, sid, payload).unwrap())
        .unwrap();
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    loop {
        if let Ok((f, _)) = decode_frame(&buf) {
            return (f.command, f.session_id, f.payload);
        }
        let n = stream.read(&mut chunk).unwrap();
        assert!(n > 0, "server hung up");
        buf.extend_from_slice(&chunk[..n]);
    }
}

#[test]
fn raw_wire_handshake_and_state_checks() {
    let srv = server(2);
    let mut s = TcpStream::connect(srv.addr()).unwrap();

    let (cmd, _, p) = raw_request(
        &mut s,
        Command::Request(Opcode::Run),
        0,
        &encode_values(&[]),
    );
    assert_eq!(cmd, Command::Error);
    assert_eq!(
        decode_error_payload(&p).unwrap().code(),
        ErrorCode::ProtocolState
    );

    let hello = encode_values(&[Value::I32(2), Value::from("raw")]);
    let (cmd, _, p) = raw_request(&mut s, Command::Request(Opcode::Handshake), 0, &hello);
    assert_eq!(cmd, Command::Error);
    assert_eq!(decode_error_payload(&p).unwrap().code(), ErrorCode::Version);

    let hello = encode_values(&[Value::I32(1), Value::from("raw")]);
    let (cmd, sid, p) = raw_request(&mut s, Command::Request(Opcode::Handshake), 0, &hello);
    assert_eq!(cmd, Command::Response(Opcode::Handshake));
    assert!(sid != 0);
    assert_eq!(decode_values(&p).unwrap()[1], Value::I32(2));

    let (cmd, _, p) = raw_request(
        &mut s,
        Command::Request(Opcode::RequestWorkers),
        sid + 1,
        &encode_values(&[Value::I32(1)]),
    );
    assert_eq!(cmd, Command::Error);
    assert_eq!(
        decode_error_payload(&p).unwrap().code(),
        ErrorCode::ProtocolState
    );

    let (cmd, _, p) = raw_request(
        &mut s,
        Command::Request(Opcode::RequestWorkers),
        sid,
        &encode_values(&[Value::I32(2)]),
    );
    assert_eq!(cmd, Command::Response(Opcode::RequestWorkers));
    assert_eq!(decode_values(&p).unwrap().len(), 3);

    let (cmd, _, _) = raw_request(&mut s, Command::Request(Opcode::Close), sid, &[]);
    assert_eq!(cmd, Command::Response(Opcode::Close));
    let (cmd, _, _) = raw_request(&mut s, Command::Request(Opcode::Close), sid, &[]);
    assert_eq!(cmd, Command::Response(Opcode::Close));
    let (cmd, _, p) = raw_request(
        &mut s,
        Command::Request(Opcode::CreateMatrix),
        sid,
        &encode_values(&[Value::I64(2), Value::I64(2)]),
    );
    assert_eq!(cmd, Command::Error);
    assert_eq!(
        decode_error_payload(&p).unwrap().code(),
        ErrorCode::SessionClosed
    );
}

#[test]
fn bad_frame_version_is_reported() {
    let srv = server(1);
    let mut s = TcpStream::connect(srv.addr()).unwrap();
    let mut wire = encode_frame(Command::Request(Opcode::Handshake), 0, &[]).unwrap();
    wire[4] = 2;
    s.write_all(&wire).unwrap();
    let mut buf = Vec::new();
    s.read_to_end(&mut buf).unwrap();
    let (f, _) = decode_frame(&buf).unwrap();
    assert_eq!(f.command, Command::Error);
    assert_eq!(
        decode_error_payload(&f.payload).unwrap().code(),
        ErrorCode::Version
    );
}

#[test]
fn handles_from_another_session_never_resolve() {
    let srv = server(4);
    let (a, b) = (session(&srv, 2), session(&srv, 2));
    // Same shape and position in each session's history.
    let ha = a.send_dense(&uniform_matrix(1, 6, 4)).unwrap();
    let hb = b.send_dense(&uniform_matrix(2, 6, 4)).unwrap();
    assert_ne!(ha.id, hb.id);
    a.register_library("mathlib", "mathlib").unwrap();
    assert_eq!(
        a.run("mathlib", "transpose", &[hb.into()])
            .unwrap_err()
            .code(),
        ErrorCode::Handle
    );
    assert_eq!(a.fetch_matrix(&hb).unwrap_err().code(), ErrorCode::Handle);
    let t = a.run("mathlib", "transpose", &[ha.into()]).unwrap();
    let Value::Matrix(t) = t[0] else {
        panic!("transpose returns a handle")
    };
    assert!(t.id > ha.id);
}
