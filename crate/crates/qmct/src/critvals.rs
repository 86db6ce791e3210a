//! Monte Carlo quantiles of the maximum of a correlated Gaussian vector.
//!
//! Correlation matrices of contrast families are singular whenever r
//! exceeds the rank of H (Tukey and Grand-mean families always are), so
//! the sampler factors the matrix by a symmetric eigendecomposition and
//! clips small negative eigenvalues instead of attempting a Cholesky
//! factorization.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::quantiles::ceil_index;
use crate::statdist::RngStream;

/// An r x r correlation matrix with an eigenvalue floor for clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationModel {
    matrix: Vec<f64>, // row-major, symmetrized
    r: usize,
    eigen_floor: f64,
}

impl CorrelationModel {
    /// Validate and wrap a correlation matrix: square, symmetric within
    /// 1e-8, unit diagonal within 1e-10. The stored matrix is exactly
    /// symmetrized.
    pub fn new(matrix: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_eigen_floor(matrix, 0.0)
    }

    pub fn with_eigen_floor(matrix: Vec<Vec<f64>>, eigen_floor: f64) -> Result<Self> {
        let r = matrix.len();
        if r == 0 {
            return Err(Error::Domain("empty correlation matrix".into()));
        }
        if matrix.iter().any(|row| row.len() != r) {
            return Err(Error::Domain("correlation matrix is not square".into()));
        }
        if eigen_floor < 0.0 {
            return Err(Error::Domain("eigen floor must be nonnegative".into()));
        }
        let mut flat = vec![0.0; r * r];
        for i in 0..r {
            if (matrix[i][i] - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidCovariance(format!(
                    "diagonal entry {} is {}, expected 1",
                    i + 1,
                    matrix[i][i]
                )));
            }
            for j in 0..r {
                if (matrix[i][j] - matrix[j][i]).abs() > 1e-8 {
                    return Err(Error::Domain(format!(
                        "correlation matrix not symmetric at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
                flat[i * r + j] = 0.5 * (matrix[i][j] + matrix[j][i]);
            }
        }
        Ok(CorrelationModel {
            matrix: flat,
            r,
            eigen_floor,
        })
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.r + j]
    }

    /// Factor L with L L' equal to the matrix after eigenvalue clipping.
    /// Eigenvalues below the floor are set to zero; negative eigenvalues
    /// beyond -1e-8 mean the upstream estimator produced an invalid
    /// covariance and are an error.
    fn factor(&self) -> Result<Vec<f64>> {
        let r = self.r;
        let (mut eigvals, eigvecs) = jacobi_eigen(&self.matrix, r);
        for ev in eigvals.iter_mut() {
            if *ev < -1e-8 {
                return Err(Error::InvalidCovariance(format!(
                    "correlation matrix has eigenvalue {ev}"
                )));
            }
            if *ev < self.eigen_floor || *ev < 0.0 {
                *ev = 0.0;
            }
        }
        // L = V * diag(sqrt(lambda)); columns of V are eigenvectors.
        let mut l = vec![0.0; r * r];
        for i in 0..r {
            for j in 0..r {
                l[i * r + j] = eigvecs[i * r + j] * eigvals[j].sqrt();
            }
        }
        Ok(l)
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Returns (eigenvalues, eigenvectors as columns, row-major).
fn jacobi_eigen(sym: &[f64], r: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = sym.to_vec();
    let mut v = vec![0.0; r * r];
    for i in 0..r {
        v[i * r + i] = 1.0;
    }
    if r == 1 {
        return (vec![a[0]], v);
    }
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..r {
            for q in (p + 1)..r {
                off += a[p * r + q] * a[p * r + q];
            }
        }
        if off.sqrt() <= 1e-14 * frob {
            break;
        }
        for p in 0..r {
            for q in (p + 1)..r {
                let apq = a[p * r + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[p * r + p];
                let aqq = a[q * r + q];
                let theta = 0.5 * (aqq - app) / apq;
                // stable tangent of the rotation angle
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..r {
                    let aip = a[i * r + p];
                    let aiq = a[i * r + q];
                    a[i * r + p] = c * aip - s * aiq;
                    a[i * r + q] = s * aip + c * aiq;
                }
                for j in 0..r {
                    let apj = a[p * r + j];
                    let aqj = a[q * r + j];
                    a[p * r + j] = c * apj - s * aqj;
                    a[q * r + j] = s * apj + c * aqj;
                }
                for i in 0..r {
                    let vip = v[i * r + p];
                    let viq = v[i * r + q];
                    v[i * r + p] = c * vip - s * viq;
                    v[i * r + q] = s * vip + c * viq;
                }
            }
        }
    }
    let eigvals = (0..r).map(|i| a[i * r + i]).collect();
    (eigvals, v)
}

/// Draw `mc_samples` realizations of max_l Y_l (or max_l |Y_l|) for
/// Y ~ N(0, model) and return them sorted ascending.
pub(crate) fn sample_max(
    model: &CorrelationModel,
    absolute: bool,
    mc_samples: usize,
    stream: RngStream,
) -> Result<Vec<f64>> {
    if mc_samples < 10_000 {
        return Err(Error::Domain(format!(
            "need at least 10000 Monte Carlo samples, got {mc_samples}"
        )));
    }
    let r = model.r();
    let l = model.factor()?;
    let mut rng = stream.rng();
    let mut z = vec![0.0; r];
    let mut maxima = Vec::with_capacity(mc_samples);
    for _ in 0..mc_samples {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let mut best = f64::NEG_INFINITY;
        for i in 0..r {
            let mut y = 0.0;
            for j in 0..r {
                y += l[i * r + j] * z[j];
            }
            let y = if absolute { y.abs() } else { y };
            if y > best {
                best = y;
            }
        }
        maxima.push(best);
    }
    maxima.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(maxima)
}

/// Monte Carlo `level`-quantile of the maximum (absolute) component of a
/// centered Gaussian vector with the given correlation matrix.
pub fn max_gaussian_quantile(
    model: &CorrelationModel,
    level: f64,
    absolute: bool,
    mc_samples: usize,
    stream: RngStream,
) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!(
            "quantile level {level} outside (0, 1)"
        )));
    }
    let maxima = sample_max(model, absolute, mc_samples, stream)?;
    Ok(maxima[ceil_index(maxima.len(), level) - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statdist::normal_quantile;

    fn identity(r: usize) -> Vec<Vec<f64>> {
        (0..r)
            .map(|i| (0..r).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect()
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(CorrelationModel::new(vec![]).is_err());
        assert!(CorrelationModel::new(vec![vec![1.0, 0.5]]).is_err());
        assert!(CorrelationModel::new(vec![vec![2.0]]).is_err());
        assert!(
            CorrelationModel::new(vec![vec![1.0, 0.3], vec![0.8, 1.0]]).is_err(),
            "asymmetry beyond 1e-8"
        );
    }

    #[test]
    fn jacobi_recovers_known_eigenvalues() {
        // [[2, 1], [1, 2]] has eigenvalues 1 and 3
        let (mut vals, vecs) = jacobi_eigen(&[2.0, 1.0, 1.0, 2.0], 2);
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
        // columns orthonormal
        let dot = vecs[0] * vecs[1] + vecs[2] * vecs[3];
        assert!(dot.abs() < 1e-12);
    }

    #[test]
    fn r1_matches_normal_quantile() {
        let model = CorrelationModel::new(identity(1)).unwrap();
        let q = max_gaussian_quantile(&model, 0.95, false, 200_000, RngStream::new(5, 1)).unwrap();
        let z = normal_quantile(0.95).unwrap();
        assert!((q - z).abs() < 0.01, "{q} vs {z}");
    }

    #[test]
    fn perfectly_correlated_collapses_to_r1() {
        let ones = vec![vec![1.0; 5]; 5];
        let model = CorrelationModel::new(ones).unwrap();
        let q = max_gaussian_quantile(&model, 0.95, false, 200_000, RngStream::new(5, 2)).unwrap();
        let z = normal_quantile(0.95).unwrap();
        assert!((q - z).abs() < 0.01, "{q} vs {z}");
    }

    #[test]
    fn independent_two_sided_closed_form() {
        // P(max(|Y1|, |Y2|) <= q) = (2 Phi(q) - 1)^2 = 0.95 at q ~ 2.2365
        let model = CorrelationModel::new(identity(2)).unwrap();
        let q = max_gaussian_quantile(&model, 0.95, true, 400_000, RngStream::new(5, 3)).unwrap();
        assert!((q - 2.2365).abs() < 0.01, "{q}");
    }

    #[test]
    fn monotone_in_level_and_absolute_dominates() {
        let model =
            CorrelationModel::new(vec![vec![1.0, 0.4], vec![0.4, 1.0]]).unwrap();
        let stream = RngStream::new(6, 1);
        let mut prev = f64::NEG_INFINITY;
        for &level in &[0.5, 0.8, 0.9, 0.95, 0.99] {
            let q = max_gaussian_quantile(&model, level, false, 20_000, stream).unwrap();
            assert!(q >= prev);
            prev = q;
            let qa = max_gaussian_quantile(&model, level, true, 20_000, stream).unwrap();
            assert!(qa >= q);
        }
    }

    #[test]
    fn rank_deficient_matrices_are_accepted() {
        // rank-1 correlation: Y2 = -Y1
        let model =
            CorrelationModel::new(vec![vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        let q = max_gaussian_quantile(&model, 0.95, false, 20_000, RngStream::new(6, 2)).unwrap();
        assert!(q.is_finite());
        // max(Y, -Y) = |Y|, so the one-sided quantile matches z_{0.975}
        let z = normal_quantile(0.975).unwrap();
        assert!((q - z).abs() < 0.03, "{q} vs {z}");
    }

    #[test]
    fn large_negative_eigenvalue_is_an_error() {
        // symmetric with unit diagonal but eigenvalue 1 - 2*0.6 < -1e-8
        let bad = vec![
            vec![1.0, 0.99, -0.99],
            vec![0.99, 1.0, 0.99],
            vec![-0.99, 0.99, 1.0],
        ];
        let model = CorrelationModel::new(bad).unwrap();
        let res = sample_max(&model, false, 10_000, RngStream::new(6, 3));
        assert!(matches!(res, Err(Error::InvalidCovariance(_))));
    }

    #[test]
    fn too_few_mc_samples_rejected() {
        let model = CorrelationModel::new(identity(2)).unwrap();
        assert!(max_gaussian_quantile(&model, 0.95, false, 5000, RngStream::new(6, 4)).is_err());
    }

    #[test]
    fn same_stream_same_quantile() {
        let model = CorrelationModel::new(identity(3)).unwrap();
        let a = max_gaussian_quantile(&model, 0.9, true, 10_000, RngStream::new(7, 7)).unwrap();
        let b = max_gaussian_quantile(&model, 0.9, true, 10_000, RngStream::new(7, 7)).unwrap();
        assert_eq!(a, b);
    }
}
