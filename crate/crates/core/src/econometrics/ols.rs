//! Least squares via orthogonal decomposition, and the cluster-robust
//! sandwich covariance.
//!
//! The design matrix is reduced by a chunked QR: row blocks are factored in
//! parallel, their R factors stacked and factored again. The response rides
//! along as an extra column, so coefficients come from back-substitution on
//! the joint R factor and no normal equations are ever formed. Chunk
//! boundaries and reduction order are fixed, so repeated runs are bit
//! identical; row permutations change results only at rounding level.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Columns with a smaller norm count as absorbed/zero.
pub const ZERO_COLUMN_TOL: f64 = 1e-8;
/// Relative diagonal threshold for rank deficiency.
pub const RANK_TOL: f64 = 1e-10;

const CHUNK_ROWS: usize = 8192;

/// Output of one least-squares solve.
#[derive(Debug, Clone)]
pub struct OlsOutput {
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rss: f64,
    /// `(X'X)^{-1}`, reconstructed from the R factor.
    pub xtx_inverse: DMatrix<f64>,
}

/// Stacked-QR reduction of the column set to its upper-triangular factor.
fn reduce_to_r(columns: &[&[f64]], n: usize) -> DMatrix<f64> {
    let m = columns.len();
    let chunk = CHUNK_ROWS.max(2 * m);
    let n_chunks = n.div_ceil(chunk);

    let partials: Vec<DMatrix<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let start = ci * chunk;
            let end = ((ci + 1) * chunk).min(n);
            let block = DMatrix::from_fn(end - start, m, |i, j| columns[j][start + i]);
            block.qr().r()
        })
        .collect();

    if n_chunks == 1 {
        return partials.into_iter().next().unwrap();
    }
    let total: usize = partials.iter().map(DMatrix::nrows).sum();
    let mut stacked = DMatrix::zeros(total, m);
    let mut offset = 0;
    for partial in partials {
        stacked
            .rows_mut(offset, partial.nrows())
            .copy_from(&partial);
        offset += partial.nrows();
    }
    stacked.qr().r()
}

/// Inverse of an upper-triangular matrix by back-substitution.
fn invert_upper_triangular(r: &DMatrix<f64>) -> DMatrix<f64> {
    let k = r.nrows();
    let mut inv = DMatrix::zeros(k, k);
    for col in 0..k {
        for row in (0..=col).rev() {
            let mut value = if row == col { 1.0 } else { 0.0 };
            for l in (row + 1)..=col {
                value -= r[(row, l)] * inv[(l, col)];
            }
            inv[(row, col)] = value / r[(row, row)];
        }
    }
    inv
}

/// Solves `y ~ columns` by the stacked-QR route.
///
/// `names` label the columns in rank-deficiency errors: a column that was
/// wiped out by fixed-effect absorption is reported as absorbed, a column
/// lying in the span of earlier ones as collinear. Nothing is dropped
/// silently.
pub fn ols(columns: &[Vec<f64>], y: &[f64], names: &[String]) -> Result<OlsOutput> {
    let n = y.len();
    let k = columns.len();
    if k == 0 {
        return Err(Error::validation("no regressors"));
    }
    if names.len() != k {
        return Err(Error::validation("need one name per regressor column"));
    }
    for (j, column) in columns.iter().enumerate() {
        if column.len() != n {
            return Err(Error::validation(format!(
                "column '{}' has {} rows, expected {n}",
                names[j],
                column.len()
            )));
        }
    }
    if n <= k {
        return Err(Error::validation(format!(
            "need more observations than regressors ({n} <= {k})"
        )));
    }

    let norms: Vec<f64> = columns
        .par_iter()
        .map(|column| column.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    for (j, norm) in norms.iter().enumerate() {
        if *norm <= ZERO_COLUMN_TOL {
            return Err(Error::validation(format!(
                "rank deficiency: column '{}' is numerically zero \
                 (absorbed by the fixed effects or constant)",
                names[j]
            )));
        }
    }

    let mut refs: Vec<&[f64]> = columns.iter().map(Vec::as_slice).collect();
    refs.push(y);
    let r = reduce_to_r(&refs, n);

    for j in 0..k {
        if r[(j, j)].abs() <= RANK_TOL * norms[j] {
            return Err(Error::validation(format!(
                "rank deficiency: column '{}' is collinear with preceding regressors",
                names[j]
            )));
        }
    }

    // Back-substitute R_x beta = r_y.
    let mut coefficients = vec![0.0; k];
    for j in (0..k).rev() {
        let mut value = r[(j, k)];
        for l in (j + 1)..k {
            value -= r[(j, l)] * coefficients[l];
        }
        coefficients[j] = value / r[(j, j)];
    }

    let chunk = CHUNK_ROWS;
    let mut residuals = vec![0.0; n];
    residuals
        .par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(ci, out)| {
            let start = ci * chunk;
            for (i, slot) in out.iter_mut().enumerate() {
                let row = start + i;
                let mut fitted = 0.0;
                for (j, column) in columns.iter().enumerate() {
                    fitted += column[row] * coefficients[j];
                }
                *slot = y[row] - fitted;
            }
        });

    // Deterministic chunked summation.
    let partials: Vec<f64> = residuals
        .par_chunks(chunk)
        .map(|c| c.iter().map(|e| e * e).sum::<f64>())
        .collect();
    let rss = partials.iter().sum();

    let r_x = r.view((0, 0), (k, k)).into_owned();
    let r_inv = invert_upper_triangular(&r_x);
    let xtx_inverse = &r_inv * r_inv.transpose();

    Ok(OlsOutput {
        coefficients,
        residuals,
        rss,
        xtx_inverse,
    })
}

/// Cluster-robust sandwich covariance.
///
/// `c * (X'X)^{-1} (sum_g s_g s_g') (X'X)^{-1}` with per-cluster scores
/// `s_g = X_g' e_g` and the small-sample scaling
/// `c = G/(G-1) * (N-1)/(N - K - df_absorbed)`.
pub fn cluster_covariance(
    columns: &[Vec<f64>],
    residuals: &[f64],
    clusters: &[u32],
    n_clusters: usize,
    xtx_inverse: &DMatrix<f64>,
    df_absorbed: usize,
) -> Result<DMatrix<f64>> {
    let n = residuals.len();
    let k = columns.len();
    if clusters.len() != n {
        return Err(Error::validation("cluster assignment length mismatch"));
    }
    if n_clusters < 2 {
        return Err(Error::validation(format!(
            "cluster-robust covariance needs at least 2 clusters, got {n_clusters}"
        )));
    }
    let k_total = k + df_absorbed;
    if n <= k_total {
        return Err(Error::validation(format!(
            "too few observations ({n}) for {k} regressors plus {df_absorbed} absorbed effects"
        )));
    }

    // Scores per cluster, accumulated column by column in row order.
    let mut scores = vec![0.0f64; n_clusters * k];
    for (j, column) in columns.iter().enumerate() {
        for i in 0..n {
            scores[clusters[i] as usize * k + j] += column[i] * residuals[i];
        }
    }

    let mut meat = DMatrix::zeros(k, k);
    for g in 0..n_clusters {
        let s = &scores[g * k..(g + 1) * k];
        for a in 0..k {
            for b in 0..k {
                meat[(a, b)] += s[a] * s[b];
            }
        }
    }

    let g = n_clusters as f64;
    let n_f = n as f64;
    let correction = g / (g - 1.0) * (n_f - 1.0) / (n_f - k_total as f64);
    let mut covariance = xtx_inverse * meat * xtx_inverse * correction;
    // Symmetrize against rounding drift.
    for a in 0..k {
        for b in (a + 1)..k {
            let v = 0.5 * (covariance[(a, b)] + covariance[(b, a)]);
            covariance[(a, b)] = v;
            covariance[(b, a)] = v;
        }
    }
    Ok(covariance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn noiseless_system_is_recovered_exactly() {
        let n = 500;
        let x1: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let x2: Vec<f64> = (0..n).map(|i| (i as f64 * 0.11).cos() + 0.2).collect();
        let y: Vec<f64> = (0..n).map(|i| 2.0 * x1[i] - 0.75 * x2[i]).collect();
        let fit = ols(&[x1, x2], &y, &names(&["x1", "x2"])).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.coefficients[1], -0.75, epsilon = 1e-12);
        assert!(fit.rss < 1e-20);
    }

    #[test]
    fn single_regressor_matches_hand_arithmetic() {
        // Oracle: beta = sum(x*y) / sum(x^2) on four points.
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let y = vec![2.1, 3.9, 6.2, 7.8];
        let oracle = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>()
            / x.iter().map(|a| a * a).sum::<f64>();
        let fit = ols(&[x], &y, &names(&["x"])).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], oracle, epsilon = 1e-12);
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let err = ols(&[x.clone(), x.clone()], &y, &names(&["x", "x_copy"])).unwrap_err();
        assert!(err.to_string().contains("x_copy"), "got: {err}");
        assert!(err.to_string().contains("collinear"), "got: {err}");
    }

    #[test]
    fn zero_column_is_reported_as_absorbed() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let z = vec![0.0; 50];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let err = ols(&[z, x], &y, &names(&["treated", "x"])).unwrap_err();
        assert!(err.to_string().contains("treated"), "got: {err}");
        assert!(err.to_string().contains("absorbed"), "got: {err}");
    }

    #[test]
    fn xtx_inverse_matches_direct_inversion() {
        let n = 300;
        let mut rng = StreamKey::new(9).with(0).rng();
        let x1: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let x2: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 0.5).collect();
        let y: Vec<f64> = (0..n).map(|i| x1[i] + x2[i] + rng.gen::<f64>()).collect();
        let fit = ols(&[x1.clone(), x2.clone()], &y, &names(&["a", "b"])).unwrap();

        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { x1[i] } else { x2[i] });
        let direct = (x.transpose() * &x).try_inverse().unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert_abs_diff_eq!(fit.xtx_inverse[(a, b)], direct[(a, b)], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn singleton_clusters_reduce_to_heteroskedasticity_robust() {
        let n = 120;
        let mut rng = StreamKey::new(4).with(1).rng();
        let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.1).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| 1.5 * v + (rng.gen::<f64>() - 0.5) * v)
            .collect();
        let columns = vec![x.clone()];
        let fit = ols(&columns, &y, &names(&["x"])).unwrap();

        let clusters: Vec<u32> = (0..n as u32).collect();
        let cov = cluster_covariance(&columns, &fit.residuals, &clusters, n, &fit.xtx_inverse, 0)
            .unwrap();

        // Oracle: direct HC0 formula times the same correction.
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let hc0: f64 = x
            .iter()
            .zip(&fit.residuals)
            .map(|(v, e)| v * v * e * e)
            .sum::<f64>()
            / (sxx * sxx);
        let g = n as f64;
        let correction = g / (g - 1.0) * (g - 1.0) / (g - 1.0);
        assert_abs_diff_eq!(cov[(0, 0)], hc0 * correction, epsilon = 1e-10 * hc0.abs());
    }

    #[test]
    fn three_cluster_sandwich_matches_block_loop_oracle() {
        let x1 = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let x2 = vec![0.5, -0.3, 1.2, 0.1, 0.9, -1.0, 0.4, 0.7, -0.2];
        let y = vec![2.0, 3.5, 5.7, 7.2, 10.1, 10.9, 13.4, 15.8, 17.1];
        let clusters = vec![0u32, 0, 0, 1, 1, 1, 2, 2, 2];
        let fit = ols(&[x1.clone(), x2.clone()], &y, &names(&["x1", "x2"])).unwrap();
        let cov = cluster_covariance(
            &[x1.clone(), x2.clone()],
            &fit.residuals,
            &clusters,
            3,
            &fit.xtx_inverse,
            0,
        )
        .unwrap();

        // Oracle: explicit block summation.
        let mut meat = [[0.0f64; 2]; 2];
        for g in 0..3 {
            let mut s = [0.0f64; 2];
            for i in (g * 3)..(g * 3 + 3) {
                s[0] += x1[i] * fit.residuals[i];
                s[1] += x2[i] * fit.residuals[i];
            }
            for a in 0..2 {
                for b in 0..2 {
                    meat[a][b] += s[a] * s[b];
                }
            }
        }
        let n = 9.0;
        let correction = (3.0 / 2.0) * ((n - 1.0) / (n - 2.0));
        let inv = &fit.xtx_inverse;
        for a in 0..2 {
            for b in 0..2 {
                let mut bread = 0.0;
                for p in 0..2 {
                    for q in 0..2 {
                        bread += inv[(a, p)] * meat[p][q] * inv[(q, b)];
                    }
                }
                assert_abs_diff_eq!(cov[(a, b)], bread * correction, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn clustered_ses_track_classical_under_homoskedastic_independence() {
        // Seeded Monte Carlo: with iid errors and many clusters, clustered
        // SEs land near the classical OLS SEs.
        let n = 4000;
        let g = 100;
        let mut rng = StreamKey::new(123).with(7).rng();
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| 0.7 * v + normal.sample(&mut rng))
            .collect();
        let clusters: Vec<u32> = (0..n).map(|i| (i % g) as u32).collect();

        let columns = vec![x];
        let fit = ols(&columns, &y, &names(&["x"])).unwrap();
        let cov = cluster_covariance(&columns, &fit.residuals, &clusters, g, &fit.xtx_inverse, 0)
            .unwrap();
        let clustered_se = cov[(0, 0)].sqrt();

        let sigma2 = fit.rss / (n as f64 - 1.0);
        let classical_se = (sigma2 * fit.xtx_inverse[(0, 0)]).sqrt();
        let ratio = clustered_se / classical_se;
        assert!((ratio - 1.0).abs() < 0.15, "ratio {ratio}");
    }

    #[test]
    fn cluster_covariance_needs_two_clusters() {
        let columns = vec![vec![1.0, 2.0, 3.0]];
        let y = vec![1.0, 2.0, 3.1];
        let fit = ols(&columns, &y, &names(&["x"])).unwrap();
        let err = cluster_covariance(&columns, &fit.residuals, &[0, 0, 0], 1, &fit.xtx_inverse, 0)
            .unwrap_err();
        assert!(err.to_string().contains("at least 2 clusters"));
    }
}
