use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

/// A fitted principal component basis.
///
/// `components` holds one orthonormal principal axis per row, ordered by
/// descending `eigenvalues` (sample variance along the axis). Each axis is
/// sign-fixed so that its first nonzero coordinate is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub components: Matrix,
    pub eigenvalues: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn explained_variance(&self) -> f64 {
        self.explained_variance_ratio.iter().sum()
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        pca_transform(self, x)
    }

    pub fn inverse(&self, z: &Matrix) -> Result<Matrix> {
        pca_inverse(self, z)
    }
}

/// Fits the top-`k` principal axes of the rows of `x`, using the sample
/// covariance (normalized by `n - 1`).
///
/// The d×d covariance is decomposed when `d <= n`; otherwise the n×n Gram
/// matrix is decomposed and mapped back, with any zero-variance axes
/// completed to an orthonormal set deterministically.
pub fn pca_fit(x: &Matrix, k: usize) -> Result<PcaModel> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::InvalidInput(format!("PCA needs at least 2 rows, got {n}")));
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::InvalidInput(format!(
            "cannot keep {k} components of {n} rows x {d} columns"
        )));
    }
    let mean = x.column_means();
    let mut centered = x.clone();
    for r in 0..n {
        for (v, m) in centered.row_mut(r).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let denom = (n - 1) as f64;
    let total_variance = centered.frobenius_sq() / denom;

    let (eigenvalues, axes) = if d <= n {
        covariance_route(&centered, denom, k)
    } else {
        gram_route(&centered, denom, k)
    };

    let mut components = Matrix::zeros(k, d);
    for (i, axis) in axes.iter().enumerate() {
        components.row_mut(i).copy_from_slice(axis);
    }
    let explained_variance_ratio = eigenvalues
        .iter()
        .map(|l| {
            if total_variance > 0.0 {
                (l / total_variance).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
        explained_variance_ratio,
    })
}

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue with
/// ties kept in solver order.
fn sorted_eigen(m: DMatrix<f64>) -> Vec<(f64, Vec<f64>)> {
    let eig = m.symmetric_eigen();
    let mut pairs: Vec<(f64, Vec<f64>)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, l)| (*l, eig.eigenvectors.column(i).iter().copied().collect()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

fn zero_threshold(largest: f64) -> f64 {
    (largest.abs() * 1e-12).max(1e-300)
}

fn covariance_route(centered: &Matrix, denom: f64, k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = centered.cols();
    let mut cov = vec![0.0; d * d];
    for row in centered.iter_rows() {
        for i in 0..d {
            let xi = row[i];
            if xi == 0.0 {
                continue;
            }
            let out = &mut cov[i * d..(i + 1) * d];
            for j in i..d {
                out[j] += xi * row[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / denom;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    let pairs = sorted_eigen(DMatrix::from_row_slice(d, d, &cov));
    let tol = zero_threshold(pairs[0].0);
    let mut eigenvalues = Vec::with_capacity(k);
    let mut axes = Vec::with_capacity(k);
    for (l, mut v) in pairs.into_iter().take(k) {
        eigenvalues.push(if l > tol { l } else { 0.0 });
        fix_sign(&mut v);
        axes.push(v);
    }
    (eigenvalues, axes)
}

fn gram_route(centered: &Matrix, denom: f64, k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (n, d) = centered.shape();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = dot(centered.row(i), centered.row(j)) / denom;
            gram[i * n + j] = v;
            gram[j * n + i] = v;
        }
    }
    let pairs = sorted_eigen(DMatrix::from_row_slice(n, n, &gram));
    let tol = zero_threshold(pairs[0].0);
    let mut eigenvalues = Vec::with_capacity(k);
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(k);
    for (l, u) in pairs.into_iter().take(k) {
        if l <= tol {
            break;
        }
        let mut v = vec![0.0; d];
        centered.matvec_transposed_add(&u, &mut v);
        let scale = 1.0 / (denom * l).sqrt();
        v.iter_mut().for_each(|x| *x *= scale);
        // re-orthogonalize against earlier axes to clean up round-off
        orthonormalize(&mut v, &axes);
        fix_sign(&mut v);
        eigenvalues.push(l);
        axes.push(v);
    }
    let mut basis = 0;
    while axes.len() < k {
        let mut v = vec![0.0; d];
        v[basis] = 1.0;
        basis += 1;
        if orthonormalize(&mut v, &axes) {
            fix_sign(&mut v);
            eigenvalues.push(0.0);
            axes.push(v);
        }
    }
    (eigenvalues, axes)
}

/// Two rounds of Gram-Schmidt against `basis`, then normalization. Returns
/// false when `v` is (numerically) inside the span of `basis`.
fn orthonormalize(v: &mut [f64], basis: &[Vec<f64>]) -> bool {
    for _ in 0..2 {
        for b in basis {
            let p = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
    }
    let norm = dot(v, v).sqrt();
    if norm < 1e-6 {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

fn fix_sign(v: &mut [f64]) {
    if let Some(first) = v.iter().copied().find(|x| x.abs() > 1e-10) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Projects rows of `x` onto the principal axes: `(x - mean) Cᵀ`.
pub fn pca_transform(model: &PcaModel, x: &Matrix) -> Result<Matrix> {
    let d = model.input_dim();
    if x.cols() != d {
        return Err(Error::Shape(format!(
            "PCA model expects {d} columns, got {}",
            x.cols()
        )));
    }
    let k = model.n_components();
    let mut out = Matrix::zeros(x.rows(), k);
    let mut centered = vec![0.0; d];
    for r in 0..x.rows() {
        for ((c, v), m) in centered.iter_mut().zip(x.row(r)).zip(&model.mean) {
            *c = v - m;
        }
        let z = model.components.matvec(&centered);
        out.row_mut(r).copy_from_slice(&z);
    }
    Ok(out)
}

/// Maps component scores back to input space: `z C + mean`.
pub fn pca_inverse(model: &PcaModel, z: &Matrix) -> Result<Matrix> {
    let k = model.n_components();
    if z.cols() != k {
        return Err(Error::Shape(format!(
            "PCA model has {k} components, got {} columns",
            z.cols()
        )));
    }
    let mut out = Matrix::zeros(z.rows(), model.input_dim());
    for r in 0..z.rows() {
        let row = out.row_mut(r);
        row.copy_from_slice(&model.mean);
        model.components.matvec_transposed_add(z.row(r), row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn random_matrix(rng: &mut Rng, n: usize, d: usize) -> Matrix {
        Matrix::from_vec(n, d, (0..n * d).map(|_| rng.standard_normal()).collect()).unwrap()
    }

    /// Low-rank data: `n` points in a random `rank`-dimensional subspace.
    fn low_rank(rng: &mut Rng, n: usize, d: usize, rank: usize) -> Matrix {
        let scores = random_matrix(rng, n, rank);
        let basis = random_matrix(rng, rank, d);
        let mut m = scores.matmul(&basis).unwrap();
        for r in 0..n {
            for (c, v) in m.row_mut(r).iter_mut().enumerate() {
                *v += c as f64 * 0.1;
            }
        }
        m
    }

    fn assert_orthonormal(c: &Matrix) {
        for i in 0..c.rows() {
            for j in 0..c.rows() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot(c.row(i), c.row(j)) - want).abs() < 1e-8, "rows {i},{j}");
            }
        }
    }

    #[test]
    fn rank_one_line() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [1.0, 2.0], [2.0, 4.0], [-1.5, -3.0]]).unwrap();
        let m = pca_fit(&x, 1).unwrap();
        assert!((m.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        let s5 = 5f64.sqrt();
        assert!((m.components.get(0, 0) - 1.0 / s5).abs() < 1e-12);
        assert!((m.components.get(0, 1) - 2.0 / s5).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_have_zero_variance() {
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0]; 4]).unwrap();
        let m = pca_fit(&x, 3).unwrap();
        assert!(m.eigenvalues.iter().all(|l| *l == 0.0));
        assert!(m.explained_variance_ratio.iter().all(|l| *l == 0.0));
        assert_orthonormal(&m.components);
    }

    #[test]
    fn hand_covariance_case() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 0.5], [0.0, -0.5]]).unwrap();
        let m = pca_fit(&x, 2).unwrap();
        assert!((m.eigenvalues[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.eigenvalues[1] - 1.0 / 6.0).abs() < 1e-12);
        assert!((m.explained_variance_ratio[0] - 0.8).abs() < 1e-12);
        assert!((m.explained_variance_ratio[1] - 0.2).abs() < 1e-12);
        assert_eq!(m.components.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn rejects_bad_k() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(pca_fit(&x, 3).is_err());
        assert!(pca_fit(&x, 0).is_err());
        assert!(pca_fit(&Matrix::from_rows(&[[1.0, 2.0]]).unwrap(), 1).is_err());
    }

    #[test]
    fn transform_and_inverse_contracts() {
        let mut rng = Rng::new(1);
        for (n, d) in [(30, 6), (5, 12)] {
            let x = low_rank(&mut rng, n, d, 3);
            let m = pca_fit(&x, 3).unwrap();
            assert_orthonormal(&m.components);

            let mean_row = Matrix::from_vec(1, d, m.mean.clone()).unwrap();
            assert!(m.transform(&mean_row).unwrap().as_slice().iter().all(|v| v.abs() < 1e-12));

            let zeros = Matrix::zeros(2, 3);
            assert_eq!(m.inverse(&zeros).unwrap().row(1), m.mean.as_slice());

            let z = m.transform(&x).unwrap();
            let back = m.inverse(&z).unwrap();
            for (a, b) in back.as_slice().iter().zip(x.as_slice()) {
                assert!((a - b).abs() < 1e-8);
            }
            for j in 0..3 {
                let col = z.column(j);
                let mu = col.iter().sum::<f64>() / n as f64;
                let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1) as f64;
                assert!((var - m.eigenvalues[j]).abs() < 1e-8, "var {var} vs {}", m.eigenvalues[j]);
            }
            let ratio_sum: f64 = m.explained_variance_ratio.iter().sum();
            assert!((ratio_sum - 1.0).abs() < 1e-9);

            let z2 = Matrix::from_vec(n, 3, z.as_slice().iter().map(|v| 2.0 * v).collect()).unwrap();
            let lin = m.inverse(&z2).unwrap();
            for r in 0..n {
                for c in 0..d {
                    let lhs = lin.get(r, c) - m.mean[c];
                    let rhs = 2.0 * (back.get(r, c) - m.mean[c]);
                    assert!((lhs - rhs).abs() < 1e-9);
                }
            }
            assert!(m.transform(&Matrix::zeros(1, d + 1)).is_err());
            assert!(m.inverse(&Matrix::zeros(1, 4)).is_err());
        }
    }

    #[test]
    fn gram_route_completes_basis() {
        let mut rng = Rng::new(5);
        let x = random_matrix(&mut rng, 4, 10);
        let m = pca_fit(&x, 4).unwrap();
        assert_orthonormal(&m.components);
        // centered 4-row data has rank 3
        assert_eq!(m.eigenvalues[3], 0.0);
        assert!(m.eigenvalues[2] > 0.0);
    }

    #[test]
    fn both_routes_agree() {
        let mut rng = Rng::new(9);
        let narrow_x = random_matrix(&mut rng, 7, 6);
        let wide_x = Matrix::hstack(&[&narrow_x, &Matrix::zeros(7, 3)]).unwrap();
        // 6 <= 7 uses the covariance route, 9 > 7 the Gram route
        let narrow = pca_fit(&narrow_x, 5).unwrap();
        let wide = pca_fit(&wide_x, 5).unwrap();
        for j in 0..5 {
            assert!((wide.eigenvalues[j] - narrow.eigenvalues[j]).abs() < 1e-10);
            for c in 0..6 {
                assert!((wide.components.get(j, c) - narrow.components.get(j, c)).abs() < 1e-8);
            }
            for c in 6..9 {
                assert!(wide.components.get(j, c).abs() < 1e-10);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn reconstruction_error_nonincreasing_in_k(seed in 0u64..1000, n in 3usize..12, d in 2usize..8) {
            let mut rng = Rng::new(seed);
            let x = random_matrix(&mut rng, n, d);
            let mut last = f64::INFINITY;
            for k in 1..=n.min(d) {
                let m = pca_fit(&x, k).unwrap();
                prop_assert!(m.explained_variance() <= 1.0 + 1e-9);
                for w in m.eigenvalues.windows(2) {
                    prop_assert!(w[0] >= w[1]);
                }
                let back = m.inverse(&m.transform(&x).unwrap()).unwrap();
                let err: f64 = back.as_slice().iter().zip(x.as_slice()).map(|(a, b)| (a - b).powi(2)).sum();
                prop_assert!(err <= last + 1e-9);
                last = err;
            }
        }
    }
}
