//! Local reference results used to cross-check benchmark outputs.

use alembic::DenseMatrix;
use nalgebra::DMatrix;

use crate::scenario::{Routine, Scenario};

pub enum Expected {
    Product(DenseMatrix),
    Transpose,
    /// Leading singular values from a dense local SVD.
    Sigma(Vec<f64>),
}

impl Expected {
    pub fn compute(s: &Scenario, a: &DenseMatrix, b: Option<&DenseMatrix>) -> Expected {
        match s.routine {
            Routine::Gemm => Expected::Product(product(a, b.expect("gemm has B"))),
            Routine::Transpose => Expected::Transpose,
            Routine::Svd => {
                let dm = DMatrix::from_row_slice(a.rows(), a.cols(), a.data());
                let mut sv: Vec<f64> = dm.singular_values().iter().copied().collect();
                sv.sort_by(|x, y| y.total_cmp(x));
                sv.truncate(s.k as usize);
                Expected::Sigma(sv)
            }
        }
    }

    /// Largest relative deviation of the fetched outputs. For svd this
    /// covers singular values, orthonormality of U and V and the residuals
    /// `‖A v_i − σ_i u_i‖ / σ₁`.
    pub fn deviation(&self, a: &DenseMatrix, outputs: &[DenseMatrix], sigma: &[f64]) -> f64 {
        match self {
            Expected::Product(c) => rel_frobenius(&outputs[0], c),
            Expected::Transpose => {
                if outputs[0].bit_eq(&a.transpose()) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Expected::Sigma(want) => {
                let (u, v) = (&outputs[0], &outputs[1]);
                if sigma.len() != want.len() {
                    return f64::INFINITY;
                }
                let s1 = want[0].max(f64::MIN_POSITIVE);
                let mut worst: f64 = 0.0;
                for (got, w) in sigma.iter().zip(want) {
                    worst = worst.max((got - w).abs() / w.max(s1 * f64::EPSILON));
                }
                worst = worst
                    .max(orthonormality_defect(u))
                    .max(orthonormality_defect(v));
                let av = product(a, v);
                for (i, &s) in sigma.iter().enumerate() {
                    let r: f64 = (0..a.rows())
                        .map(|row| (av.get(row, i) - s * u.get(row, i)).powi(2))
                        .sum();
                    worst = worst.max(r.sqrt() / s1);
                }
                worst
            }
        }
    }
}

pub fn product(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!(a.cols(), b.rows());
    let mut c = DenseMatrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for l in 0..a.cols() {
            let x = a.get(i, l);
            let brow = b.row(l);
            for (cij, bl) in c.row_mut(i).iter_mut().zip(brow) {
                *cij += x * bl;
            }
        }
    }
    c
}

pub fn rel_frobenius(got: &DenseMatrix, want: &DenseMatrix) -> f64 {
    if (got.rows(), got.cols()) != (want.rows(), want.cols()) {
        return f64::INFINITY;
    }
    let diff: f64 = got
        .data()
        .iter()
        .zip(want.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let norm = want.frobenius_norm();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

/// `max |QᵀQ − I|` over the entries.
pub fn orthonormality_defect(q: &DenseMatrix) -> f64 {
    let g = product(&q.transpose(), q);
    let mut worst: f64 = 0.0;
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g.get(i, j) - want).abs());
        }
    }
    worst
}
