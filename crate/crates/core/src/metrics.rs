//! Evaluation metrics: FID, R-Precision, multimodal distance, diversity,
//! and Student-t confidence intervals over repeated runs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::numerics::{euclidean, frechet_distance_sq, gaussian_fit, GaussianStats};

/// Inputs of one evaluation pass: aligned generated / reference / text
/// feature vectors plus the seed that drives the stochastic metrics.
#[derive(Debug, Clone)]
pub struct EvalRun {
    pub generated: Vec<Vec<f64>>,
    pub reference: Vec<Vec<f64>>,
    pub text: Vec<Vec<f64>>,
    pub seed: u64,
}

impl EvalRun {
    pub fn validate(&self) -> Result<()> {
        let n = self.generated.len();
        if n == 0 || self.reference.len() != n || self.text.len() != n {
            return Err(Error::InvalidInput(
                "generated, reference, and text features must align and be non-empty".into(),
            ));
        }
        let d = self.generated[0].len();
        for v in self.generated.iter().chain(&self.reference).chain(&self.text) {
            if v.len() != d {
                return Err(Error::InvalidInput("inconsistent feature dimension".into()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric("features must be finite".into()));
            }
        }
        Ok(())
    }
}

/// FID from exact Gaussian parameters (the closed form the sample version
/// estimates).
pub fn fid_gaussian(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    frechet_distance_sq(a, b)
}

/// Sample FID: fit a Gaussian to each side, then the squared Fréchet
/// distance between the fits.
pub fn fid(generated: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<f64> {
    let a = gaussian_fit(generated)?;
    let b = gaussian_fit(reference)?;
    if a.mean.len() != b.mean.len() {
        return Err(Error::InvalidInput(format!(
            "FID dimension mismatch: {} vs {}",
            a.mean.len(),
            b.mean.len()
        )));
    }
    fid_gaussian(&a, &b)
}

/// Top-k retrieval precision: each motion ranks its own text against P-1
/// seeded distractor texts by Euclidean distance.
pub fn r_precision(
    text: &[Vec<f64>],
    motion: &[Vec<f64>],
    pool: usize,
    k: usize,
    seed: u64,
) -> Result<f64> {
    let n = text.len();
    if n != motion.len() || n == 0 {
        return Err(Error::InvalidInput("text and motion features must align".into()));
    }
    if pool < 2 || k == 0 || k >= pool {
        return Err(Error::InvalidInput(format!("need 1 <= k < pool, got k={k} pool={pool}")));
    }
    if n < pool {
        return Err(Error::InvalidInput(format!("need at least pool={pool} pairs, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.shuffle(&mut rng);
        let own = euclidean(&motion[i], &text[i]);
        // ties resolve in favor of the true caption
        let closer = others[..pool - 1]
            .iter()
            .filter(|&&j| euclidean(&motion[i], &text[j]) < own)
            .count();
        if closer < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// Mean Euclidean distance between each text feature and its paired motion
/// feature.
pub fn mm_dist(text: &[Vec<f64>], motion: &[Vec<f64>]) -> Result<f64> {
    if text.is_empty() || text.len() != motion.len() {
        return Err(Error::InvalidInput("text and motion features must align and be non-empty".into()));
    }
    let total: f64 = text.iter().zip(motion).map(|(t, m)| euclidean(t, m)).sum();
    Ok(total / text.len() as f64)
}

/// Mean Euclidean distance over `num_pairs` disjoint random pairs.
pub fn diversity(features: &[Vec<f64>], num_pairs: usize, seed: u64) -> Result<f64> {
    if num_pairs == 0 {
        return Err(Error::InvalidInput("diversity needs at least one pair".into()));
    }
    if features.len() < 2 * num_pairs {
        return Err(Error::InvalidInput(format!(
            "diversity with {num_pairs} pairs needs {} samples, got {}",
            2 * num_pairs,
            features.len()
        )));
    }
    let mut idx: Vec<usize> = (0..features.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut total = 0.0;
    for p in 0..num_pairs {
        total += euclidean(&features[idx[2 * p]], &features[idx[2 * p + 1]]);
    }
    Ok(total / num_pairs as f64)
}

/// Mean and 95% half-width from a Student-t interval with n-1 degrees of
/// freedom.
pub fn confidence_interval(values: &[f64]) -> Result<Interval> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("confidence interval needs >= 2 runs, got {n}")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::Numeric(format!("t-distribution setup failed: {e}")))?
        .inverse_cdf(0.975);
    Ok(Interval { mean, half_width: t * (var / n as f64).sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub mean: f64,
    pub half_width: f64,
}

/// One run's scalar metric values.
#[derive(Debug, Clone, Copy)]
pub struct MetricValues {
    pub fid: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub mm_dist: f64,
    pub diversity: f64,
}

/// Aggregated metrics with 95% intervals over repeated runs.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub fid: Interval,
    pub r1: Interval,
    pub r2: Interval,
    pub r3: Interval,
    pub mm_dist: Interval,
    pub diversity: Interval,
}

/// Evaluate every metric on one run.
pub fn evaluate_run(run: &EvalRun, pool: usize, diversity_pairs: usize) -> Result<MetricValues> {
    run.validate()?;
    Ok(MetricValues {
        fid: fid(&run.generated, &run.reference)?,
        r1: r_precision(&run.text, &run.generated, pool, 1, run.seed)?,
        r2: r_precision(&run.text, &run.generated, pool, 2, run.seed)?,
        r3: r_precision(&run.text, &run.generated, pool, 3, run.seed)?,
        mm_dist: mm_dist(&run.text, &run.generated)?,
        diversity: diversity(&run.generated, diversity_pairs, run.seed)?,
    })
}

/// Aggregate per-run values into mean-and-interval form.
pub fn report(values: &[MetricValues]) -> Result<MetricReport> {
    let pick = |f: fn(&MetricValues) -> f64| -> Result<Interval> {
        confidence_interval(&values.iter().map(f).collect::<Vec<f64>>())
    };
    Ok(MetricReport {
        fid: pick(|v| v.fid)?,
        r1: pick(|v| v.r1)?,
        r2: pick(|v| v.r2)?,
        r3: pick(|v| v.r3)?,
        mm_dist: pick(|v| v.mm_dist)?,
        diversity: pick(|v| v.diversity)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;

    fn random_set(seed: u64, n: usize, d: usize, shift: f64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0) + shift).collect()).collect()
    }

    #[test]
    fn fid_of_identical_sets_is_zero() {
        let x = random_set(61, 50, 4, 0.0);
        let v = fid(&x, &x).unwrap();
        assert!(v.abs() < 1e-8, "fid(X, X) = {v}");
    }

    #[test]
    fn fid_is_symmetric() {
        let x = random_set(62, 60, 3, 0.0);
        let y = random_set(63, 60, 3, 0.5);
        let a = fid(&x, &y).unwrap();
        let b = fid(&y, &x).unwrap();
        assert!((a - b).abs() < 1e-8);
        assert!(a >= 0.0);
    }

    #[test]
    fn fid_exact_gaussian_closed_form() {
        let a = GaussianStats { mean: DVector::from_vec(vec![0.0, 0.0]), covariance: DMatrix::identity(2, 2) };
        let b = GaussianStats { mean: DVector::from_vec(vec![3.0, 4.0]), covariance: DMatrix::identity(2, 2) };
        let v = fid_gaussian(&a, &b).unwrap();
        assert_eq!(v, 25.0, "identical identity covariances leave only the mean term");
    }

    #[test]
    fn fid_empirical_matches_closed_form_within_5_percent() {
        // 10k draws from N(0, I) and N((3, 4), I) via Box-Muller
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let mut normal = || {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let n = 10_000;
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![normal(), normal()]).collect();
        let y: Vec<Vec<f64>> = (0..n).map(|_| vec![normal() + 3.0, normal() + 4.0]).collect();
        let v = fid(&x, &y).unwrap();
        assert!((v - 25.0).abs() < 1.25, "empirical FID {v} strays from 25");
    }

    #[test]
    fn fid_is_rotation_invariant() {
        let x = random_set(65, 80, 3, 0.0);
        let y = random_set(66, 80, 3, 0.7);
        let base = fid(&x, &y).unwrap();
        // random orthogonal matrix from a QR factorization
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let m = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let q = m.qr().q();
        let rot = |set: &[Vec<f64>]| -> Vec<Vec<f64>> {
            set.iter()
                .map(|v| {
                    let r = &q * DVector::from_vec(v.clone());
                    r.iter().cloned().collect()
                })
                .collect()
        };
        let rotated = fid(&rot(&x), &rot(&y)).unwrap();
        assert!((base - rotated).abs() < 1e-6, "{base} vs {rotated}");
    }

    #[test]
    fn fid_rejects_dimension_mismatch_and_tiny_sets() {
        let x = random_set(68, 10, 3, 0.0);
        let y = random_set(69, 10, 4, 0.0);
        assert!(fid(&x, &y).is_err());
        assert!(fid(&x[..1], &x).is_err());
    }

    #[test]
    fn r_precision_perfect_when_motion_equals_text() {
        let text = random_set(70, 40, 5, 0.0);
        let motion = text.clone();
        let p = r_precision(&text, &motion, 32, 1, 0).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn r_precision_random_features_near_chance() {
        let text = random_set(71, 600, 8, 0.0);
        let motion = random_set(72, 600, 8, 0.0);
        let pool = 32;
        for k in [1usize, 2, 3] {
            let p = r_precision(&text, &motion, pool, k, 5).unwrap();
            let expect = k as f64 / pool as f64;
            let sigma = (expect * (1.0 - expect) / text.len() as f64).sqrt();
            assert!(
                (p - expect).abs() < 3.0 * sigma + 0.01,
                "k={k}: precision {p} vs chance {expect}"
            );
        }
    }

    #[test]
    fn r_precision_is_monotone_in_k() {
        let text = random_set(73, 100, 4, 0.0);
        let motion = random_set(74, 100, 4, 0.2);
        let p1 = r_precision(&text, &motion, 32, 1, 9).unwrap();
        let p2 = r_precision(&text, &motion, 32, 2, 9).unwrap();
        let p3 = r_precision(&text, &motion, 32, 3, 9).unwrap();
        assert!(p1 <= p2 && p2 <= p3);
    }

    #[test]
    fn r_precision_errors() {
        let x = random_set(75, 10, 3, 0.0);
        assert!(r_precision(&x, &x, 32, 1, 0).is_err());
        assert!(r_precision(&x, &x, 4, 4, 0).is_err());
        assert!(r_precision(&x, &x[..5], 4, 1, 0).is_err());
    }

    #[test]
    fn mm_dist_translation_and_oracle() {
        let text = random_set(76, 30, 4, 0.0);
        assert_eq!(mm_dist(&text, &text).unwrap(), 0.0);
        let c = [0.3, -0.4, 0.0, 1.2];
        let moved: Vec<Vec<f64>> = text
            .iter()
            .map(|v| v.iter().zip(&c).map(|(a, b)| a + b).collect())
            .collect();
        let norm_c = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((mm_dist(&text, &moved).unwrap() - norm_c).abs() < 1e-12);

        let motion = random_set(77, 30, 4, 0.1);
        let expect: f64 = text
            .iter()
            .zip(&motion)
            .map(|(t, m)| {
                t.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            })
            .sum::<f64>()
            / 30.0;
        assert!((mm_dist(&text, &motion).unwrap() - expect).abs() < 1e-12);
        assert!(mm_dist(&[], &[]).is_err());
    }

    #[test]
    fn diversity_identities_and_oracle() {
        let same = vec![vec![0.5, -0.5]; 20];
        assert_eq!(diversity(&same, 5, 0).unwrap(), 0.0);

        // one point in each cluster forces the single pair across them
        let two = vec![vec![0.0, 0.0], vec![3.0, 4.0]];
        assert_eq!(diversity(&two, 1, 123).unwrap(), 5.0);

        // independent re-derivation with the same shuffle
        let feats = random_set(78, 40, 3, 0.0);
        let got = diversity(&feats, 15, 99).unwrap();
        let mut idx: Vec<usize> = (0..40).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(99));
        let expect: f64 = (0..15)
            .map(|p| {
                let (a, b) = (&feats[idx[2 * p]], &feats[idx[2 * p + 1]]);
                a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
            })
            .sum::<f64>()
            / 15.0;
        assert_eq!(got, expect);
        assert_eq!(got, diversity(&feats, 15, 99).unwrap());
        assert!(diversity(&feats, 21, 0).is_err());
    }

    #[test]
    fn confidence_interval_closed_forms() {
        let c = confidence_interval(&[1.5; 6]).unwrap();
        assert_eq!(c.mean, 1.5);
        assert_eq!(c.half_width, 0.0);

        // {0, 2}: mean 1, s = sqrt(2), half-width = t(0.975, 1) * s / sqrt(2)
        let c = confidence_interval(&[0.0, 2.0]).unwrap();
        assert!((c.mean - 1.0).abs() < 1e-12);
        let t_975_df1 = 12.706_204_736_432_095;
        assert!((c.half_width - t_975_df1).abs() < 1e-8, "half width {}", c.half_width);

        assert!(confidence_interval(&[1.0]).is_err());
    }

    #[test]
    fn confidence_interval_ten_runs_matches_oracle() {
        let values = [0.31, 0.29, 0.35, 0.28, 0.33, 0.30, 0.27, 0.36, 0.32, 0.29];
        let c = confidence_interval(&values).unwrap();
        // hand-computed Student-t formula with the tabulated t(0.975, 9)
        let n = values.len() as f64;
        let mean: f64 = values.iter().sum::<f64>() / n;
        let var: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let t_975_df9 = 2.262_157_162_740_992;
        let expect = t_975_df9 * (var / n).sqrt();
        assert!((c.mean - mean).abs() < 1e-12);
        assert!((c.half_width - expect).abs() < 1e-9, "{} vs {expect}", c.half_width);
    }

    #[test]
    fn evaluate_run_and_report_shapes() {
        let mut values = Vec::new();
        for seed in 0..4u64 {
            let run = EvalRun {
                generated: random_set(80 + seed, 40, 4, 0.1),
                reference: random_set(90 + seed, 40, 4, 0.0),
                text: random_set(100 + seed, 40, 4, 0.05),
                seed,
            };
            values.push(evaluate_run(&run, 32, 10).unwrap());
        }
        let rep = report(&values).unwrap();
        assert!(rep.fid.mean >= 0.0 && rep.fid.half_width >= 0.0);
        for iv in [rep.r1, rep.r2, rep.r3] {
            assert!(iv.mean >= 0.0 && iv.mean <= 1.0);
        }
        let bad = EvalRun {
            generated: random_set(1, 5, 3, 0.0),
            reference: random_set(2, 4, 3, 0.0),
            text: random_set(3, 5, 3, 0.0),
            seed: 0,
        };
        assert!(bad.validate().is_err());
    }
}
