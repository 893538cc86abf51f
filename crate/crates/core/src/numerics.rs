//! Dense linear algebra, Gaussian statistics, PSD matrix square root, and the
//! finite-difference gradient checker used by every differentiable module.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Regularizer added to fitted covariances so downstream square roots stay PSD.
pub const COV_EPSILON: f64 = 1e-8;

/// Row-major dense tensor of double-precision values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::InvalidInput("tensor extents must be positive".into()));
        }
        if data.len() != numel {
            return Err(Error::InvalidInput(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("tensor contains non-finite values".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Self::new(shape, vec![0.0; numel])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Mean and regularized covariance fitted to a sample set.
#[derive(Debug, Clone)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Cosine similarity of two equal-length nonzero vectors.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::InvalidInput(format!(
            "cosine_similarity dimension mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    if u.is_empty() {
        return Err(Error::InvalidInput("cosine_similarity on empty vectors".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|b| b * b).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::InvalidInput("cosine_similarity on zero-norm vector".into()));
    }
    Ok(dot / (nu * nv))
}

/// L2 norm of a vector.
pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Squared Euclidean distance.
pub fn sq_dist(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Euclidean distance.
pub fn euclidean(u: &[f64], v: &[f64]) -> f64 {
    sq_dist(u, v).sqrt()
}

/// Fit sample mean and unbiased covariance, regularized by `COV_EPSILON * I`.
///
/// `samples` is n rows of d features; requires n >= 2.
pub fn gaussian_fit(samples: &[Vec<f64>]) -> Result<GaussianStats> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "gaussian_fit needs at least 2 samples, got {n}"
        )));
    }
    let d = samples[0].len();
    if d == 0 || samples.iter().any(|s| s.len() != d) {
        return Err(Error::InvalidInput("gaussian_fit rows must share a positive dimension".into()));
    }
    let mut mean = DVector::zeros(d);
    for s in samples {
        for (j, &x) in s.iter().enumerate() {
            mean[j] += x;
        }
    }
    mean /= n as f64;

    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        for i in 0..d {
            let di = s[i] - mean[i];
            for j in i..d {
                cov[(i, j)] += di * (s[j] - mean[j]);
            }
        }
    }
    cov /= (n - 1) as f64;
    for i in 0..d {
        for j in 0..i {
            cov[(i, j)] = cov[(j, i)];
        }
        cov[(i, i)] += COV_EPSILON;
    }
    Ok(GaussianStats { mean, covariance: cov })
}

/// Symmetric PSD square root via eigendecomposition with eigenvalue clamping.
///
/// Rejects matrices that are asymmetric beyond 1e-8 or have eigenvalues
/// below -1e-8; eigenvalues in [-1e-8, 0) are clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidInput("psd_sqrt requires a square matrix".into()));
    }
    let n = m.nrows();
    let scale = m.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    for i in 0..n {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-8 * scale {
                return Err(Error::Numeric("psd_sqrt input is not symmetric".into()));
            }
        }
    }
    // Symmetrize to kill round-off before the eigensolve.
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -1e-8 * scale.max(1.0) {
            return Err(Error::Numeric(format!("psd_sqrt input is indefinite (eigenvalue {v})")));
        }
        *v = v.max(0.0).sqrt();
    }
    let q = eig.eigenvectors;
    Ok(&q * DMatrix::from_diagonal(&vals) * q.transpose())
}

/// Squared Fréchet distance between two Gaussians:
/// ||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2}).
///
/// The inner product is symmetrized through S1^{1/2} so the PSD square root
/// sees a symmetric argument; tiny negative round-off is clamped to zero.
pub fn frechet_distance_sq(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::InvalidInput(format!(
            "frechet distance dimension mismatch: {} vs {}",
            a.mean.len(),
            b.mean.len()
        )));
    }
    let s1h = psd_sqrt(&a.covariance)?;
    let inner = &s1h * &b.covariance * &s1h;
    let cross = psd_sqrt(&inner)?;
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let trace = (a.covariance.clone() + &b.covariance - cross * 2.0).trace();
    Ok((mean_term + trace).max(0.0))
}

/// Max relative error between an analytic gradient and central finite differences.
///
/// `f` is evaluated at theta +/- h*e_i; relative error uses the symmetric
/// denominator |a| + |n| + 1e-12 so a gradient scaled by 2 reports ~1/3.
pub fn finite_diff_grad_check<F>(mut f: F, theta: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if theta.len() != analytic.len() {
        return Err(Error::InvalidInput("gradient length does not match parameter length".into()));
    }
    let mut work = theta.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let orig = work[i];
        work[i] = orig + h;
        let fp = f(&work);
        work[i] = orig - h;
        let fm = f(&work);
        work[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric("objective returned a non-finite value".into()));
        }
        let numeric = (fp - fm) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs() + 1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cosine_orthogonal_and_colinear() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_matches_direct_formula() {
        // Independent evaluation: dot / (|u| |v|) computed termwise.
        let u = [0.3, -0.7, 0.1];
        let v = [0.5, 0.2, -0.9];
        let dot = 0.3 * 0.5 + (-0.7) * 0.2 + 0.1 * (-0.9);
        let expected = dot
            / ((0.3f64 * 0.3 + 0.7 * 0.7 + 0.1 * 0.1).sqrt()
                * (0.5f64 * 0.5 + 0.2 * 0.2 + 0.9 * 0.9).sqrt());
        let got = cosine_similarity(&u, &v).unwrap();
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn cosine_self_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let u: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if l2_norm(&u) == 0.0 {
                continue;
            }
            assert!((cosine_similarity(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_rejects_zero_and_mismatch() {
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn gaussian_fit_two_points() {
        let stats = gaussian_fit(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(stats.mean.as_slice(), &[1.0, 1.0]);
        for i in 0..2 {
            for j in 0..2 {
                let expect = 2.0 + if i == j { COV_EPSILON } else { 0.0 };
                assert!((stats.covariance[(i, j)] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gaussian_fit_degenerate_point() {
        let stats = gaussian_fit(&vec![vec![3.0, -1.0]; 5]).unwrap();
        assert_eq!(stats.mean.as_slice(), &[3.0, -1.0]);
        assert!((stats.covariance[(0, 0)] - COV_EPSILON).abs() < 1e-16);
        assert_eq!(stats.covariance[(0, 1)], 0.0);
    }

    #[test]
    fn gaussian_fit_monte_carlo() {
        // 10k draws from N(mu, Sigma) with a known Cholesky factor.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mu = [1.0, -2.0];
        // Sigma = L L^T with L = [[2,0],[0.6,1.5]]
        let l = [[2.0, 0.0], [0.6, 1.5]];
        let sigma = [[4.0, 1.2], [1.2, 2.61]];
        let samples: Vec<Vec<f64>> = (0..10_000)
            .map(|_| {
                let z0: f64 = draw_normal(&mut rng);
                let z1: f64 = draw_normal(&mut rng);
                vec![mu[0] + l[0][0] * z0, mu[1] + l[1][0] * z0 + l[1][1] * z1]
            })
            .collect();
        let stats = gaussian_fit(&samples).unwrap();
        for j in 0..2 {
            assert!((stats.mean[j] - mu[j]).abs() < 0.05 * mu[j].abs().max(1.0));
        }
        for i in 0..2 {
            for j in 0..2 {
                assert!((stats.covariance[(i, j)] - sigma[i][j]).abs() < 0.05 * sigma[i][j].abs().max(1.0));
            }
        }
    }

    fn draw_normal(rng: &mut ChaCha8Rng) -> f64 {
        // Box-Muller
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    #[test]
    fn psd_sqrt_identity_and_diagonal() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let r = psd_sqrt(&i2).unwrap();
        assert!((r - &i2).norm() < 1e-12);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let r = psd_sqrt(&d).unwrap();
        assert!((r[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((r[(1, 1)] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn psd_sqrt_reconstructs_random_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let b = DMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0));
            let a = b.transpose() * &b;
            let r = psd_sqrt(&a).unwrap();
            let rel = (&r * &r - &a).norm() / a.norm();
            assert!(rel < 1e-8, "relative reconstruction error {rel}");
        }
    }

    #[test]
    fn psd_sqrt_rejects_bad_inputs() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 5.0, -5.0, 1.0]);
        assert!(psd_sqrt(&asym).is_err());
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(psd_sqrt(&indef).is_err());
    }

    #[test]
    fn grad_check_quadratic() {
        let theta = vec![0.4, -1.3, 2.2];
        let grad: Vec<f64> = theta.iter().map(|w| 2.0 * w).collect();
        let err = finite_diff_grad_check(
            |w| w.iter().map(|x| x * x).sum(),
            &theta,
            &grad,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "err {err}");
    }

    #[test]
    fn grad_check_flags_scaled_gradient() {
        let theta = vec![1.0, 2.0];
        let wrong: Vec<f64> = theta.iter().map(|w| 4.0 * w).collect(); // 2x the true grad
        let err = finite_diff_grad_check(
            |w| w.iter().map(|x| x * x).sum(),
            &theta,
            &wrong,
            1e-5,
        )
        .unwrap();
        // |2g - g| / (|2g| + |g|) = 1/3
        assert!((err - 1.0 / 3.0).abs() < 1e-6, "err {err}");
    }

    #[test]
    fn tensor_invariants() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
    }
}
