//! Multivariate Gaussian value type.
//!
//! Covariances are stored as full dense symmetric matrices. Log-densities go
//! through a Cholesky factorization (never an explicit inverse); sampling uses
//! a tolerant factorization that accepts semi-definite matrices so degenerate
//! Gaussians (zero covariance directions) sample exactly on their support.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{NCurveError, Result};
use crate::numeric::LN_2PI;

/// A d-dimensional Gaussian distribution N(mean, cov).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDist {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianDist {
    /// Construct a Gaussian. The covariance is symmetrized on construction
    /// ((C + Cᵀ)/2, exact in IEEE arithmetic); definiteness is only checked
    /// when a density or sample is requested.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(NCurveError::EmptyInput { what: "mean vector" });
        }
        if !cov.is_square() {
            return Err(NCurveError::Invalid {
                what: "covariance",
                msg: format!("matrix is {}x{}, expected square", cov.nrows(), cov.ncols()),
            });
        }
        if mean.len() != cov.nrows() {
            return Err(NCurveError::DimensionMismatch {
                what: "mean vs covariance",
                expected: cov.nrows(),
                got: mean.len(),
            });
        }
        let cov = 0.5 * (&cov + cov.transpose());
        Ok(Self { mean, cov })
    }

    /// Standard normal in d dimensions.
    pub fn standard(d: usize) -> Self {
        Self {
            mean: DVector::zeros(d),
            cov: DMatrix::identity(d, d),
        }
    }

    /// Gaussian with diagonal covariance diag(vars).
    pub fn diagonal(mean: DVector<f64>, vars: &[f64]) -> Result<Self> {
        if mean.len() != vars.len() {
            return Err(NCurveError::DimensionMismatch {
                what: "mean vs variances",
                expected: mean.len(),
                got: vars.len(),
            });
        }
        let cov = DMatrix::from_diagonal(&DVector::from_row_slice(vars));
        Self::new(mean, cov)
    }

    /// Isotropic Gaussian with covariance var·I.
    pub fn isotropic(mean: DVector<f64>, var: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, DMatrix::identity(d, d) * var)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// ln N(x | mean, cov) = -½ [d·ln 2π + ln det(cov) + (x-mean)ᵀ cov⁻¹ (x-mean)].
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        let chol = spd_cholesky(&self.cov)?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let q = x - &self.mean;
        let quad = q.dot(&chol.solve(&q));
        Ok(-0.5 * (self.dim() as f64 * LN_2PI + log_det + quad))
    }

    /// Squared Mahalanobis distance (x-mean)ᵀ cov⁻¹ (x-mean).
    pub fn mahalanobis_sq(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        let chol = spd_cholesky(&self.cov)?;
        let q = x - &self.mean;
        Ok(q.dot(&chol.solve(&q)))
    }

    /// Draw mean + L·z with z i.i.d. standard normal and L the PSD-tolerant
    /// lower factor. A zero covariance returns the mean exactly.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let l = psd_lower(&self.cov)?;
        let d = self.dim();
        let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        Ok(&self.mean + l * z)
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(NCurveError::DimensionMismatch {
                what: "evaluation point",
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Linear combination Σ wᵢ·gᵢ of independent Gaussians, which is again
/// Gaussian with mean Σ wᵢ·μᵢ and covariance Σ wᵢ²·Σᵢ (scalar weights make
/// A Σ Aᵀ collapse to w²Σ).
pub fn affine_combine(gs: &[GaussianDist], weights: &[f64]) -> Result<GaussianDist> {
    if gs.is_empty() {
        return Err(NCurveError::EmptyInput { what: "affine_combine inputs" });
    }
    if gs.len() != weights.len() {
        return Err(NCurveError::DimensionMismatch {
            what: "weights vs distributions",
            expected: gs.len(),
            got: weights.len(),
        });
    }
    let d = gs[0].dim();
    for g in gs {
        if g.dim() != d {
            return Err(NCurveError::DimensionMismatch {
                what: "distribution dimensions",
                expected: d,
                got: g.dim(),
            });
        }
    }
    let mut mean = DVector::zeros(d);
    let mut cov = DMatrix::zeros(d, d);
    for (g, &w) in gs.iter().zip(weights) {
        mean.axpy(w, &g.mean, 1.0);
        cov += (w * w) * &g.cov;
    }
    GaussianDist::new(mean, cov)
}

/// Strict Cholesky with one jitter retry: when the factorization fails the
/// matrix gets ε·I added with ε = 1e-9·trace/d (combined curve covariances at
/// t near the endpoints can be numerically borderline) before giving up.
pub(crate) fn spd_cholesky(cov: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(chol) = Cholesky::new(cov.clone()) {
        return Ok(chol);
    }
    let d = cov.nrows();
    let eps = 1e-9 * cov.trace() / d as f64;
    let mut jittered = cov.clone();
    for i in 0..d {
        jittered[(i, i)] += eps;
    }
    Cholesky::new(jittered).ok_or(NCurveError::NotPositiveDefinite)
}

/// Lower-triangular factor L with L·Lᵀ = cov for positive *semi*-definite
/// matrices: pivots within tolerance of zero produce a zero column instead of
/// failing, clearly negative pivots are rejected.
pub(crate) fn psd_lower(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = cov.nrows();
    let scale = (0..d).map(|i| cov[(i, i)].abs()).fold(0.0f64, f64::max).max(1.0);
    let tol = 1e-12 * scale;
    let mut l = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut pivot = cov[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if pivot > tol {
            let ljj = pivot.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..d {
                let mut s = cov[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        } else if pivot < -1e-8 * scale {
            return Err(NCurveError::NotPositiveSemiDefinite);
        }
        // pivot ≈ 0: semi-definite direction, column stays zero
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn dv(vals: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(vals)
    }

    #[test]
    fn standard_normal_at_mode() {
        let g = GaussianDist::standard(1);
        let ld = g.log_density(&dv(&[0.0])).unwrap();
        assert_relative_eq!(ld, -0.918_938_533_204_672_7, epsilon = 1e-12);
    }

    #[test]
    fn bivariate_standard_at_mode() {
        let g = GaussianDist::standard(2);
        let ld = g.log_density(&dv(&[0.0, 0.0])).unwrap();
        assert_relative_eq!(ld, -LN_2PI, epsilon = 1e-12);
    }

    #[test]
    fn diagonal_log_density_hand_value() {
        // d=2, mean (1,-1), cov diag(4, 0.25), x (3, 0):
        // logdet = ln(4*0.25) = 0, quad = 2²/4 + 1²/0.25 = 5,
        // ld = -½(2 ln 2π + 0 + 5) = -4.3378770664093455
        let g = GaussianDist::diagonal(dv(&[1.0, -1.0]), &[4.0, 0.25]).unwrap();
        let ld = g.log_density(&dv(&[3.0, 0.0])).unwrap();
        assert_relative_eq!(ld, -4.337_877_066_409_345, epsilon = 1e-12);
    }

    #[test]
    fn density_normalizes_under_quadrature() {
        // trapezoid over ±8σ for a 1-d Gaussian
        let (mu, sigma) = (0.3, 1.7);
        let g = GaussianDist::diagonal(dv(&[mu]), &[sigma * sigma]).unwrap();
        let n = 4001;
        let (lo, hi) = (mu - 8.0 * sigma, mu + 8.0 * sigma);
        let h = (hi - lo) / (n - 1) as f64;
        let mut integral = 0.0;
        for i in 0..n {
            let x = lo + i as f64 * h;
            let p = g.log_density(&dv(&[x])).unwrap().exp();
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            integral += w * p * h;
        }
        assert!((integral - 1.0).abs() < 1e-3, "integral = {integral}");
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let g = GaussianDist::standard(2);
        assert!(matches!(
            g.log_density(&dv(&[0.0])),
            Err(NCurveError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn indefinite_covariance_is_rejected() {
        let g = GaussianDist::new(dv(&[0.0, 0.0]), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]))
            .unwrap();
        assert!(matches!(
            g.log_density(&dv(&[0.0, 0.0])),
            Err(NCurveError::NotPositiveDefinite)
        ));
        assert!(matches!(
            g.sample(&mut rng_from_seed(0)),
            Err(NCurveError::NotPositiveSemiDefinite)
        ));
    }

    #[test]
    fn zero_covariance_samples_mean_exactly() {
        let g = GaussianDist::new(dv(&[2.5, -1.0]), DMatrix::zeros(2, 2)).unwrap();
        let x = g.sample(&mut rng_from_seed(3)).unwrap();
        assert_eq!(x, dv(&[2.5, -1.0]));
    }

    #[test]
    fn sampling_is_deterministic_for_a_seed() {
        let g = GaussianDist::new(
            dv(&[0.5, 1.5]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.7, 0.7, 1.0]),
        )
        .unwrap();
        let a = g.sample(&mut rng_from_seed(42)).unwrap();
        let b = g.sample(&mut rng_from_seed(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_moments_match_parameters() {
        // 1e5 draws from a correlated Gaussian: mean within 4·SE(mean),
        // covariance entries within 4·SE(cov).
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, -0.8, -0.8, 0.5]);
        let g = GaussianDist::new(dv(&[1.0, -2.0]), cov.clone()).unwrap();
        let n = 100_000;
        let mut rng = rng_from_seed(11);
        let mut sum = DVector::zeros(2);
        let mut sq = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let x = g.sample(&mut rng).unwrap();
            sum += &x;
            sq += &x * x.transpose();
        }
        let mean = sum / n as f64;
        let emp_cov = sq / n as f64 - &mean * mean.transpose();
        for a in 0..2 {
            let se = (cov[(a, a)] / n as f64).sqrt();
            assert!((mean[a] - g.mean()[a]).abs() < 4.0 * se);
            for b in 0..2 {
                let var_s = (cov[(a, a)] * cov[(b, b)] + cov[(a, b)] * cov[(a, b)]) / n as f64;
                assert!((emp_cov[(a, b)] - cov[(a, b)]).abs() < 4.0 * var_s.sqrt());
            }
        }
    }

    #[test]
    fn standard_normal_mean_within_clt_bound() {
        let g = GaussianDist::standard(2);
        let n = 100_000;
        let mut rng = rng_from_seed(5);
        let mut sum = DVector::zeros(2);
        for _ in 0..n {
            sum += g.sample(&mut rng).unwrap();
        }
        let mean = sum / n as f64;
        let bound = 3.0 / (n as f64).sqrt();
        assert!(mean[0].abs() < bound && mean[1].abs() < bound);
    }

    #[test]
    fn affine_combine_identity() {
        let g = GaussianDist::new(
            dv(&[1.0, 2.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]),
        )
        .unwrap();
        let c = affine_combine(std::slice::from_ref(&g), &[1.0]).unwrap();
        assert_eq!(c.mean(), g.mean());
        assert_eq!(c.cov(), g.cov());
    }

    #[test]
    fn affine_combine_two_standard_halves() {
        let gs = [GaussianDist::standard(1), GaussianDist::standard(1)];
        let c = affine_combine(&gs, &[0.5, 0.5]).unwrap();
        assert_relative_eq!(c.mean()[0], 0.0);
        assert_relative_eq!(c.cov()[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn affine_combine_matches_monte_carlo_moments() {
        // Independent oracle: draw from each input, combine the samples with
        // the same weights, and compare empirical moments against the
        // closed-form result.
        let gs = [
            GaussianDist::new(dv(&[1.0, 0.0]), DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 0.6]))
                .unwrap(),
            GaussianDist::new(dv(&[-2.0, 3.0]), DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 2.0]))
                .unwrap(),
            GaussianDist::new(dv(&[0.0, 1.0]), DMatrix::from_row_slice(2, 2, &[0.8, -0.2, -0.2, 0.4]))
                .unwrap(),
        ];
        let w = [0.7, -0.4, 1.3];
        let combined = affine_combine(&gs, &w).unwrap();

        let n = 1_000_000;
        let mut rng = rng_from_seed(9);
        let mut sum = DVector::zeros(2);
        let mut sq = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let mut x = DVector::zeros(2);
            for (g, &wi) in gs.iter().zip(&w) {
                x.axpy(wi, &g.sample(&mut rng).unwrap(), 1.0);
            }
            sum += &x;
            sq += &x * x.transpose();
        }
        let mean = sum / n as f64;
        let emp_cov = sq / n as f64 - &mean * mean.transpose();
        for a in 0..2 {
            let se = (combined.cov()[(a, a)] / n as f64).sqrt();
            assert!((mean[a] - combined.mean()[a]).abs() < 4.0 * se);
            for b in 0..2 {
                let caa = combined.cov()[(a, a)];
                let cbb = combined.cov()[(b, b)];
                let cab = combined.cov()[(a, b)];
                let se_cov = ((caa * cbb + cab * cab) / n as f64).sqrt();
                assert!((emp_cov[(a, b)] - cab).abs() < 4.0 * se_cov);
            }
        }
    }

    fn random_spd(d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        let a = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        &a * a.transpose() + DMatrix::identity(d, d) * 0.1
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn cholesky_round_trip(d in 1usize..=64, seed in 0u64..1000) {
            let cov = random_spd(d, seed);
            let chol = spd_cholesky(&cov).unwrap();
            let l = chol.l();
            let rec = &l * l.transpose();
            let rel = (&rec - &cov).norm() / cov.norm();
            prop_assert!(rel < 1e-10, "relative Frobenius error {rel}");
        }

        #[test]
        fn psd_lower_round_trip_on_singular_matrices(d in 1usize..=16, seed in 0u64..1000) {
            // rank-deficient PSD: outer product of a single vector
            let mut rng = rng_from_seed(seed);
            let v = DVector::from_fn(d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let cov = &v * v.transpose();
            let l = psd_lower(&cov).unwrap();
            let rec = &l * l.transpose();
            let err = (&rec - &cov).norm();
            prop_assert!(err < 1e-9 * (1.0 + cov.norm()), "error {err}");
        }
    }
}
