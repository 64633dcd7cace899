#![allow(dead_code)]

use alembic::client::{BridgeContext, ClientConfig, MathLibClient};
use alembic::server::{Server, ServerConfig, ServerHandle};
use alembic::DenseMatrix;

pub fn server(workers: usize) -> ServerHandle {
    Server::start(ServerConfig {
        workers,
        seal_timeout: std::time::Duration::from_millis(500),
        collective_timeout: std::time::Duration::from_secs(20),
        ..ServerConfig::default()
    })
    .expect("server starts")
}

pub fn session(server: &ServerHandle, workers: usize) -> BridgeContext {
    let ctx = BridgeContext::connect(server.addr(), ClientConfig::default()).expect("connect");
    ctx.request_workers(workers).expect("workers");
    ctx
}

pub fn with_mathlib(ctx: &BridgeContext) -> MathLibClient<'_> {
    MathLibClient::register(ctx).expect("register mathlib")
}

/// Reference product: plain triple loop, inner index ascending.
pub fn naive_gemm(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!(a.cols(), b.rows());
    DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| {
        let mut s = 0.0;
        for l in 0..a.cols() {
            s += a.get(i, l) * b.get(l, j);
        }
        s
    })
}

pub fn rel_frobenius_error(got: &DenseMatrix, want: &DenseMatrix) -> f64 {
    assert_eq!((got.rows(), got.cols()), (want.rows(), want.cols()));
    let diff: f64 = got
        .data()
        .iter()
        .zip(want.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / want.frobenius_norm()
}

/// Dense SVD by one-sided Jacobi rotations on the columns of a tall matrix.
/// Returns singular values in non-increasing order with matching left and
/// right singular vectors as columns.
pub struct JacobiSvd {
    pub sigma: Vec<f64>,
    pub u: DenseMatrix,
    pub v: DenseMatrix,
}

pub fn jacobi_svd(a: &DenseMatrix) -> JacobiSvd {
    let (m, n) = (a.rows(), a.cols());
    assert!(m >= n, "oracle expects a tall matrix");
    // Column-major working copies.
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = w[p].iter().map(|x| x * x).sum();
                let beta: f64 = w[q].iter().map(|x| x * x).sum();
                let gamma: f64 = w[p].iter().zip(&w[q]).map(|(x, y)| x * y).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (w[p][i], w[q][i]);
                    w[p][i] = c * x - s * y;
                    w[q][i] = s * x + c * y;
                }
                for i in 0..n {
                    let (x, y) = (v[p][i], v[q][i]);
                    v[p][i] = c * x - s * y;
                    v[q][i] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = w
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let u = DenseMatrix::from_fn(m, n, |i, t| {
        let j = order[t];
        if norms[j] == 0.0 {
            0.0
        } else {
            w[j][i] / norms[j]
        }
    });
    let v = DenseMatrix::from_fn(n, n, |i, t| v[order[t]][i]);
    JacobiSvd { sigma, u, v }
}

/// `max |Q^T Q - I|` over the entries.
pub fn orthonormality_defect(q: &DenseMatrix) -> f64 {
    let k = q.cols();
    let mut worst: f64 = 0.0;
    for a in 0..k {
        for b in 0..k {
            let s: f64 = (0..q.rows()).map(|i| q.get(i, a) * q.get(i, b)).sum();
            let want = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((s - want).abs());
        }
    }
    worst
}
