//! Local dense kernels shared by the routines.

/// `c += a[:, col0..col0+rows] * panel` where `a` is `c_rows x a_cols`,
/// `panel` is `rows x k` and `c` is `c_rows x k`, all row-major.
///
/// Each entry of `c` accumulates its products in increasing column order of
/// `a`, one multiply and one add at a time, so splitting the inner dimension
/// into consecutive panels yields bit-identical results.
pub(crate) fn gemm_panel(
    c: &mut [f64],
    a: &[f64],
    a_cols: usize,
    col0: usize,
    panel: &[f64],
    k: usize,
) {
    if k == 0 {
        return;
    }
    let rows = panel.len() / k;
    for (crow, arow) in c.chunks_exact_mut(k).zip(a.chunks_exact(a_cols)) {
        for (l, brow) in panel.chunks_exact(k).enumerate().take(rows) {
            let x = arow[col0 + l];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += x * bj;
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x {
        *xi *= alpha;
    }
}

/// `y = A x` for a row-major `rows x cols` block.
pub(crate) fn matvec(a: &[f64], cols: usize, x: &[f64]) -> Vec<f64> {
    a.chunks_exact(cols).map(|row| dot(row, x)).collect()
}

/// `y = A^T x` for a row-major `rows x cols` block.
pub(crate) fn matvec_t(a: &[f64], cols: usize, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; cols];
    for (row, &xi) in a.chunks_exact(cols).zip(x) {
        axpy(xi, row, &mut y);
    }
    y
}
