mod common;

use alembic::client::{
    BatchPolicy, BridgeContext, ClientConfig, LocalRowPartition, RowSource, UniformRows,
};
use alembic::rng::uniform_matrix;
use alembic::server::{Server, ServerConfig};
use alembic::{DenseMatrix, ErrorCode, LayoutDescriptor};
use common::*;
use proptest::prelude::*;

fn ctx_with(srv: &alembic::server::ServerHandle, p: usize, batch: BatchPolicy) -> BridgeContext {
    let ctx = BridgeContext::connect(
        srv.addr(),
        ClientConfig {
            batch,
            ..ClientConfig::default()
        },
    )
    .unwrap();
    ctx.request_workers(p).unwrap();
    ctx
}

/// Frames per worker predicted from the layout alone: each maximal run of
/// consecutive rows with one owner costs ceil(len / batch_rows) frames.
fn predicted_frames(indices: &[u64], layout: &LayoutDescriptor, batch_rows: u64) -> Vec<u64> {
    let mut frames = vec![0; layout.workers()];
    let mut i = 0;
    while i < indices.len() {
        let owner = layout.owner_of_row(indices[i]).unwrap();
        let mut j = i + 1;
        while j < indices.len()
            && indices[j] == indices[j - 1] + 1
            && layout.owner_of_row(indices[j]).unwrap() == owner
        {
            j += 1;
        }
        frames[owner] += (j - i) as u64 / batch_rows + u64::from((j - i) as u64 % batch_rows != 0);
        i = j;
    }
    frames
}

#[test]
fn round_trip_is_bit_exact_across_groups_and_batch_sizes() {
    let policies = [
        BatchPolicy::RowsPerMessage(1),
        BatchPolicy::Bytes(4096),
        BatchPolicy::Bytes(1 << 20),
    ];
    let shapes = [(1, 1), (7, 3), (64, 64), (500, 64), (123, 17)];
    for p in [1, 2, 3, 5, 8] {
        let srv = server(p);
        for policy in policies {
            let ctx = ctx_with(&srv, p, policy);
            for (s, &(m, n)) in shapes.iter().enumerate() {
                let mut a = uniform_matrix(s as u64 + 100 * p as u64, m, n);
                // Values that only survive a bitwise copy.
                a.set(0, 0, -0.0);
                if m * n > 2 {
                    a.set(m - 1, n - 1, f64::from_bits(0x7ff8_dead_beef_0001));
                    a.set(m / 2, 0, f64::MIN_POSITIVE / 4.0);
                }
                let h = ctx.send_dense(&a).unwrap();
                assert!(
                    ctx.fetch_matrix(&h).unwrap().bit_eq(&a),
                    "p={p} {policy:?} {m}x{n}"
                );
            }
        }
    }
}

#[test]
fn interleaved_partitions_from_several_processes() {
    let srv = server(3);
    let ctx = ctx_with(&srv, 3, BatchPolicy::Bytes(256));
    let a = uniform_matrix(8, 50, 6);
    let parts: Vec<LocalRowPartition> = (0..4)
        .map(|c| {
            LocalRowPartition::new(
                6,
                (0..50)
                    .filter(|i| i % 4 == c)
                    .map(|i| (i as u64, a.row(i).to_vec()))
                    .collect(),
            )
            .unwrap()
        })
        .collect();
    let refs: Vec<&dyn RowSource> = parts.iter().map(|p| p as &dyn RowSource).collect();
    let (h, report) = ctx.send_matrix_with_report(50, 6, &refs).unwrap();
    assert!(ctx.fetch_matrix(&h).unwrap().bit_eq(&a));
    // Every row is its own run when rows are dealt round-robin.
    let frames: u64 = report.iter().flatten().map(|c| c.send_frames).sum();
    assert_eq!(frames, 50);
    assert_eq!(srv.send_rows_frames().iter().sum::<u64>(), 50);
}

#[test]
fn frame_counts_follow_the_layout() {
    let srv = server(3);
    for (policy, cols) in [
        (BatchPolicy::RowsPerMessage(1), 4u64),
        (BatchPolicy::RowsPerMessage(7), 4),
        (BatchPolicy::Bytes(100), 3),
    ] {
        let ctx = ctx_with(&srv, 3, policy);
        let source = UniformRows {
            seed: 1,
            cols,
            rows: 5..95,
        };
        let (h, layout) = ctx.create_matrix(100, cols).unwrap();
        let rest = LocalRowPartition::new(
            cols,
            (0..5)
                .chain(95..100)
                .map(|i| (i, vec![0.0; cols as usize]))
                .collect(),
        )
        .unwrap();
        let exec = ctx.executor().unwrap();
        exec.send_rows(&h, &layout, &source).unwrap();
        exec.send_rows(&h, &layout, &rest).unwrap();
        ctx.seal(&h).unwrap();
        let got: Vec<u64> = exec.counters().iter().map(|c| c.send_frames).collect();
        let indices: Vec<u64> = source.row_indices().collect();
        let rest_idx: Vec<u64> = rest.row_indices().collect();
        let per = policy.rows_per_batch(cols) as u64;
        let want: Vec<u64> = predicted_frames(&indices, &layout, per)
            .iter()
            .zip(predicted_frames(&rest_idx, &layout, per))
            .map(|(a, b)| a + b)
            .collect();
        assert_eq!(got, want, "{policy:?}");
    }
}

#[test]
fn missing_and_duplicate_rows_fail_the_seal() {
    let srv = server(2);
    let ctx = ctx_with(&srv, 2, BatchPolicy::default());
    let rows: Vec<(u64, Vec<f64>)> = (0..10)
        .filter(|&i| i != 7)
        .map(|i| (i, vec![i as f64]))
        .collect();
    let err = ctx
        .send_matrix(10, 1, &[&LocalRowPartition::new(1, rows).unwrap()])
        .unwrap_err();
    assert_eq!(err.code(), ErrorCode::Incomplete);
    assert!(err.to_string().contains("[7,8)"), "{err}");

    let first = LocalRowPartition::new(1, (0..10).map(|i| (i, vec![1.0])).collect()).unwrap();
    let again = LocalRowPartition::new(1, vec![(3, vec![2.0])]).unwrap();
    let err = ctx.send_matrix(10, 1, &[&first, &again]).unwrap_err();
    assert_eq!(err.code(), ErrorCode::Incomplete);
    assert!(err.to_string().contains("more than once"), "{err}");

    let wide = LocalRowPartition::new(2, vec![(0, vec![1.0, 2.0])]).unwrap();
    assert_eq!(
        ctx.send_matrix(1, 1, &[&wide]).unwrap_err().code(),
        ErrorCode::Argument
    );
    let outside = LocalRowPartition::new(1, vec![(10, vec![1.0])]).unwrap();
    assert_eq!(
        ctx.send_matrix(10, 1, &[&outside]).unwrap_err().code(),
        ErrorCode::Argument
    );
}

#[test]
fn tcp_transport_gives_identical_results() {
    let a = uniform_matrix(3, 60, 20);
    let b = uniform_matrix(4, 20, 10);
    let mut outs = Vec::new();
    for transport in ["inproc", "tcp"] {
        let srv = Server::start(ServerConfig {
            workers: 3,
            transport: transport.into(),
            ..ServerConfig::default()
        })
        .unwrap();
        assert_eq!(srv.transport_name(), transport);
        let ctx = common::session(&srv, 3);
        let lib = with_mathlib(&ctx);
        let c = lib
            .gemm(&ctx.send_dense(&a).unwrap(), &ctx.send_dense(&b).unwrap())
            .unwrap();
        let svd = lib.truncated_svd(&ctx.send_dense(&a).unwrap(), 4).unwrap();
        outs.push((ctx.fetch_matrix(&c).unwrap(), svd.sigma));
    }
    assert!(outs[0].0.bit_eq(&outs[1].0));
    assert_eq!(outs[0].1, outs[1].1);
}

#[test]
fn fetch_rows_returns_a_slice() {
    let srv = server(4);
    let ctx = ctx_with(&srv, 4, BatchPolicy::default());
    let a = uniform_matrix(2, 30, 5);
    let h = ctx.send_dense(&a).unwrap();
    let part = ctx.fetch_rows(&h, 6..23).unwrap();
    assert!(part.bit_eq(&DenseMatrix::from_fn(17, 5, |i, j| a.get(i + 6, j))));
    assert_eq!(ctx.fetch_rows(&h, 4..4).unwrap().rows(), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn any_row_split_round_trips(
        m in 1usize..60,
        n in 1usize..9,
        p in 1usize..6,
        clients in 1usize..4,
        batch in 1u32..9,
        seed in any::<u64>(),
    ) {
        let srv = server(p);
        let ctx = ctx_with(&srv, p, BatchPolicy::RowsPerMessage(batch));
        let a = uniform_matrix(seed, m, n);
        let parts: Vec<LocalRowPartition> = (0..clients)
            .map(|c| {
                let rows = (0..m).filter(|i| (i.wrapping_mul(seed as usize | 1) >> 1) % clients == c);
                LocalRowPartition::new(n as u64, rows.map(|i| (i as u64, a.row(i).to_vec())).collect()).unwrap()
            })
            .collect();
        let refs: Vec<&dyn RowSource> = parts.iter().map(|p| p as &dyn RowSource).collect();
        let h = ctx.send_matrix(m as u64, n as u64, &refs).unwrap();
        prop_assert!(ctx.fetch_matrix(&h).unwrap().bit_eq(&a));
    }
}
