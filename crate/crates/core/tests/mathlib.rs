mod common;

use alembic::client::{DenseRows, LocalRowPartition, RowSource};
use alembic::rng::uniform_matrix;
use alembic::{DenseMatrix, ErrorCode};
use common::*;

#[test]
fn gemm_matches_naive_product_and_is_independent_of_group_size() {
    let a = uniform_matrix(11, 37, 23);
    let b = uniform_matrix(12, 23, 9);
    let want = naive_gemm(&a, &b);
    let mut results = Vec::new();
    for p in [1, 2, 3, 5] {
        let srv = server(p);
        let ctx = session(&srv, p);
        let lib = with_mathlib(&ctx);
        let (ha, hb) = (ctx.send_dense(&a).unwrap(), ctx.send_dense(&b).unwrap());
        let hc = lib.gemm(&ha, &hb).unwrap();
        assert_eq!(hc.dims(), (37, 9));
        let c = ctx.fetch_matrix(&hc).unwrap();
        assert!(rel_frobenius_error(&c, &want) <= 1e-12);
        results.push(c);
    }
    assert!(results.windows(2).all(|w| w[0].bit_eq(&w[1])));
}

#[test]
fn gemm_two_by_two_example() {
    let srv = server(2);
    let ctx = session(&srv, 2);
    let lib = with_mathlib(&ctx);
    let a = ctx
        .send_dense(&DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]))
        .unwrap();
    let b = ctx
        .send_dense(&DenseMatrix::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]))
        .unwrap();
    let c = ctx.fetch_matrix(&lib.gemm(&a, &b).unwrap()).unwrap();
    assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn gemm_streaming_panels_agree_bitwise_and_budget_is_enforced() {
    let a = uniform_matrix(21, 20, 30);
    let b = uniform_matrix(22, 30, 7);
    let srv = server(3);
    let ctx = session(&srv, 3);
    let lib = with_mathlib(&ctx);
    let (ha, hb) = (ctx.send_dense(&a).unwrap(), ctx.send_dense(&b).unwrap());
    let replicated = ctx.fetch_matrix(&lib.gemm(&ha, &hb).unwrap()).unwrap();
    // Budget of 3 rows of B per panel.
    let streamed = ctx
        .fetch_matrix(&lib.gemm_with_budget(&ha, &hb, 3 * 7 * 8, true).unwrap())
        .unwrap();
    assert!(replicated.bit_eq(&streamed));
    assert!(replicated.bit_eq(&naive_gemm(&a, &b)));
    let err = lib.gemm_with_budget(&ha, &hb, 64, false).unwrap_err();
    assert_eq!(err.code(), ErrorCode::Resource);
}

#[test]
fn gemm_dimension_mismatch() {
    let srv = server(2);
    let ctx = session(&srv, 2);
    let lib = with_mathlib(&ctx);
    let a = ctx.send_dense(&uniform_matrix(1, 4, 3)).unwrap();
    let b = ctx.send_dense(&uniform_matrix(2, 4, 3)).unwrap();
    assert_eq!(
        lib.gemm(&a, &b).unwrap_err().code(),
        ErrorCode::DimensionMismatch
    );
    // The failed call leaves no partial output behind: the next output id follows b.
    let c = lib.transpose(&a).unwrap();
    assert_eq!(c.id, b.id + 1);
}

#[test]
fn truncated_svd_matches_jacobi_oracle() {
    let a = uniform_matrix(31, 120, 40);
    let oracle = jacobi_svd(&a);
    let srv = server(3);
    let ctx = session(&srv, 3);
    let lib = with_mathlib(&ctx);
    let ha = ctx.send_dense(&a).unwrap();
    let k = 6;
    let r = lib.truncated_svd(&ha, k).unwrap();
    assert!(r.converged);
    for i in 0..k {
        let rel = (r.sigma[i] - oracle.sigma[i]).abs() / oracle.sigma[i];
        assert!(
            rel <= 1e-8,
            "sigma_{i}: {} vs {}",
            r.sigma[i],
            oracle.sigma[i]
        );
    }
    assert!(r.sigma.windows(2).all(|w| w[0] >= w[1]));
    let u = ctx.fetch_matrix(&r.u).unwrap();
    let v = ctx.fetch_matrix(&r.v).unwrap();
    assert_eq!((u.rows(), u.cols(), v.rows(), v.cols()), (120, k, 40, k));
    assert!(orthonormality_defect(&u) <= 1e-8);
    assert!(orthonormality_defect(&v) <= 1e-8);
    let av = naive_gemm(&a, &v);
    for i in 0..k {
        let res: f64 = (0..120)
            .map(|row| (av.get(row, i) - r.sigma[i] * u.get(row, i)).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(res <= 1e-8 * r.sigma[0], "residual {i}: {res}");
        let lead = (0..40)
            .map(|row| v.get(row, i))
            .find(|x| x.abs() > alembic::mathlib::SIGN_THRESHOLD)
            .unwrap();
        assert!(lead > 0.0);
    }
}

#[test]
fn truncated_svd_is_the_same_on_every_group_size() {
    let a = uniform_matrix(5, 50, 12);
    let mut sigmas = Vec::new();
    let mut vs = Vec::new();
    for p in [1, 2, 4] {
        let srv = server(p);
        let ctx = session(&srv, p);
        let lib = with_mathlib(&ctx);
        let r = lib.truncated_svd(&ctx.send_dense(&a).unwrap(), 3).unwrap();
        vs.push(ctx.fetch_matrix(&r.v).unwrap());
        sigmas.push(r.sigma);
    }
    for s in &sigmas[1..] {
        for (x, y) in s.iter().zip(&sigmas[0]) {
            assert!((x - y).abs() <= 1e-10 * sigmas[0][0]);
        }
    }
    for v in &vs[1..] {
        assert!(rel_frobenius_error(v, &vs[0]) < 1e-8);
    }
}

#[test]
fn truncated_svd_of_rank_deficient_and_wide_matrices() {
    let srv = server(2);
    let ctx = session(&srv, 2);
    let lib = with_mathlib(&ctx);

    // Rank one: sigma_1 = |x| |y|, the rest vanish.
    let x: Vec<f64> = (0..30).map(|i| 1.0 + i as f64 * 0.1).collect();
    let y: Vec<f64> = (0..8).map(|j| (j as f64 - 3.5) * 0.2).collect();
    let r1 = DenseMatrix::from_fn(30, 8, |i, j| x[i] * y[j]);
    let r = lib.truncated_svd(&ctx.send_dense(&r1).unwrap(), 3).unwrap();
    let want =
        x.iter().map(|v| v * v).sum::<f64>().sqrt() * y.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((r.sigma[0] - want).abs() <= 1e-10 * want);
    assert!(r.sigma[1] <= 1e-10 * want && r.sigma[2] <= 1e-10 * want);
    assert!(orthonormality_defect(&ctx.fetch_matrix(&r.u).unwrap()) <= 1e-8);

    // Wide: compare against the oracle applied to the transpose.
    let w = uniform_matrix(77, 9, 25);
    let oracle = jacobi_svd(&w.transpose());
    let r = lib.truncated_svd(&ctx.send_dense(&w).unwrap(), 9).unwrap();
    for i in 0..9 {
        assert!(
            (r.sigma[i] - oracle.sigma[i]).abs() <= 1e-8 * oracle.sigma[i],
            "sigma_{i}"
        );
    }
    assert!(orthonormality_defect(&ctx.fetch_matrix(&r.v).unwrap()) <= 1e-8);
}

#[test]
fn truncated_svd_argument_checks() {
    let srv = server(2);
    let ctx = session(&srv, 2);
    let lib = with_mathlib(&ctx);
    let a = ctx.send_dense(&uniform_matrix(3, 10, 4)).unwrap();
    assert_eq!(
        lib.truncated_svd(&a, 0).unwrap_err().code(),
        ErrorCode::Argument
    );
    assert_eq!(
        lib.truncated_svd(&a, 5).unwrap_err().code(),
        ErrorCode::Argument
    );
    assert_eq!(
        lib.truncated_svd_with(&a, 3, 1e-10, Some(2))
            .unwrap_err()
            .code(),
        ErrorCode::Argument
    );
}

#[test]
fn transpose_over_uneven_layouts() {
    let a = DenseMatrix::from_fn(7, 5, |i, j| (i * 10 + j) as f64);
    for p in [1, 2, 3, 4] {
        let srv = server(p);
        let ctx = session(&srv, p);
        let lib = with_mathlib(&ctx);
        let t = lib.transpose(&ctx.send_dense(&a).unwrap()).unwrap();
        assert_eq!(t.dims(), (5, 7));
        assert!(
            ctx.fetch_matrix(&t).unwrap().bit_eq(&a.transpose()),
            "p={p}"
        );
    }
}

#[test]
fn condest_examples() {
    let srv = server(3);
    let ctx = session(&srv, 3);
    let lib = with_mathlib(&ctx);
    let eye = ctx.send_dense(&DenseMatrix::identity(6)).unwrap();
    assert!((lib.condest(&eye).unwrap() - 1.0).abs() <= 1e-12);

    let d = DenseMatrix::from_fn(8, 3, |i, j| if i == j { [4.0, 2.0, 0.5][j] } else { 0.0 });
    assert!((lib.condest(&ctx.send_dense(&d).unwrap()).unwrap() - 8.0).abs() <= 1e-10);

    let singular = DenseMatrix::from_fn(5, 2, |i, _| i as f64 + 1.0);
    assert_eq!(
        lib.condest(&ctx.send_dense(&singular).unwrap()).unwrap(),
        f64::INFINITY
    );

    let wide = ctx.send_dense(&uniform_matrix(1, 2, 5)).unwrap();
    assert_eq!(lib.condest(&wide).unwrap_err().code(), ErrorCode::Argument);

    // Against the oracle's singular values.
    let a = uniform_matrix(9, 40, 6);
    let s = jacobi_svd(&a).sigma;
    let k = lib.condest(&ctx.send_dense(&a).unwrap()).unwrap();
    assert!((k - s[0] / s[5]).abs() <= 1e-8 * k);
}

#[test]
fn random_uniform_is_layout_independent() {
    let mut outs = Vec::new();
    for p in [1, 3] {
        let srv = server(p);
        let ctx = session(&srv, p);
        let lib = with_mathlib(&ctx);
        let h = lib.random_uniform(13, 4, 99).unwrap();
        outs.push(ctx.fetch_matrix(&h).unwrap());
    }
    assert!(outs[0].bit_eq(&outs[1]));
    assert!(outs[0].bit_eq(&uniform_matrix(99, 13, 4)));
}

#[test]
fn row_sources_agree() {
    let m = uniform_matrix(3, 6, 2);
    let dense = DenseRows::all(&m);
    let local = LocalRowPartition::from_dense(&m, 0..6);
    let mut a = [0.0; 2];
    let mut b = [0.0; 2];
    for i in dense.row_indices() {
        dense.fill_row(i, &mut a).unwrap();
        local.fill_row(i, &mut b).unwrap();
        assert_eq!(a, b);
    }
}
