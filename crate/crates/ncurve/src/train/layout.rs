//! Unconstrained parameter vector layout and its transform into a mixture.
//!
//! theta = [mixture logits (K)] ++ per component, per control point:
//! [mean (d) | log_sigma (d) | extra (q)]. Weights realize through softmax,
//! standard deviations through exp plus a floor, so every theta maps to a
//! valid mixture. The extra block depends on the covariance mode: empty for
//! diagonal, one correlation parameter for d=2 full, and the strict lower
//! triangle of a Cholesky factor for d>2 full.

use nalgebra::{DMatrix, DVector};

use crate::error::{NCurveError, Result};
use crate::gaussian::{spd_cholesky, GaussianDist};
use crate::curve::{NCurve, NCurveMixture};
use crate::numeric::softmax;

/// Additive floor on realized standard deviations; keeps densities bounded
/// on near-duplicate data.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Covariance structure of each control point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovMode {
    /// Independent per-axis variances.
    Diagonal,
    /// d=2: per-axis sigma plus one correlation (tanh). d>2: Cholesky factor
    /// with exp-floored diagonal and free strict lower triangle.
    Full,
}

impl CovMode {
    /// Number of extra covariance parameters beyond the d log-sigmas.
    pub fn extra_len(self, d: usize) -> usize {
        match self {
            CovMode::Diagonal => 0,
            CovMode::Full => {
                if d <= 1 {
                    0
                } else if d == 2 {
                    1
                } else {
                    d * (d - 1) / 2
                }
            }
        }
    }
}

/// Per-control-point covariance parameters in unconstrained form.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceParams {
    pub log_sigma: Vec<f64>,
    pub corr_raw: Vec<f64>,
}

/// Shape of a flat parameter vector for a (K, controls, d, mode) mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub k: usize,
    pub controls: usize,
    pub d: usize,
    pub cov_mode: CovMode,
}

impl ParamLayout {
    pub fn new(k: usize, controls: usize, d: usize, cov_mode: CovMode) -> Result<Self> {
        if k < 1 {
            return Err(NCurveError::Invalid { what: "layout", msg: "K must be >= 1".into() });
        }
        if controls < 1 {
            return Err(NCurveError::Invalid {
                what: "layout",
                msg: "need at least 1 control point".into(),
            });
        }
        if d < 1 {
            return Err(NCurveError::Invalid { what: "layout", msg: "d must be >= 1".into() });
        }
        Ok(Self { k, controls, d, cov_mode })
    }

    /// Parameters per control point: mean + log_sigma + extra.
    pub fn per_control(&self) -> usize {
        2 * self.d + self.cov_mode.extra_len(self.d)
    }

    pub fn per_component(&self) -> usize {
        self.controls * self.per_control()
    }

    /// Total theta length.
    pub fn len(&self) -> usize {
        self.k + self.k * self.per_component()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn control_base(&self, k: usize, i: usize) -> usize {
        self.k + k * self.per_component() + i * self.per_control()
    }

    /// Index range of component k / control i mean.
    pub fn mean_range(&self, k: usize, i: usize) -> std::ops::Range<usize> {
        let base = self.control_base(k, i);
        base..base + self.d
    }

    /// Index range of component k / control i log-sigmas.
    pub fn log_sigma_range(&self, k: usize, i: usize) -> std::ops::Range<usize> {
        let base = self.control_base(k, i) + self.d;
        base..base + self.d
    }

    /// Index range of component k / control i extra covariance parameters.
    pub fn extra_range(&self, k: usize, i: usize) -> std::ops::Range<usize> {
        let base = self.control_base(k, i) + 2 * self.d;
        base..base + self.cov_mode.extra_len(self.d)
    }

    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.len() {
            return Err(NCurveError::ShapeMismatch(format!(
                "theta has {} parameters, layout needs {}",
                theta.len(),
                self.len()
            )));
        }
        Ok(())
    }

    /// Unconstrained covariance parameters of one control point.
    pub fn covariance_params(&self, theta: &[f64], k: usize, i: usize) -> CovarianceParams {
        CovarianceParams {
            log_sigma: theta[self.log_sigma_range(k, i)].to_vec(),
            corr_raw: theta[self.extra_range(k, i)].to_vec(),
        }
    }

    /// Realized standard deviations of one control point.
    pub fn sigmas(&self, theta: &[f64], k: usize, i: usize) -> Vec<f64> {
        theta[self.log_sigma_range(k, i)]
            .iter()
            .map(|ls| ls.exp() + SIGMA_FLOOR)
            .collect()
    }

    /// Realized covariance matrix of one control point.
    pub fn control_cov(&self, theta: &[f64], k: usize, i: usize) -> DMatrix<f64> {
        let d = self.d;
        let sigma = self.sigmas(theta, k, i);
        let extra = &theta[self.extra_range(k, i)];
        match self.cov_mode {
            CovMode::Diagonal => {
                DMatrix::from_diagonal(&DVector::from_iterator(d, sigma.iter().map(|s| s * s)))
            }
            CovMode::Full if d == 2 => {
                let rho = extra[0].tanh();
                let off = rho * sigma[0] * sigma[1];
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[sigma[0] * sigma[0], off, off, sigma[1] * sigma[1]],
                )
            }
            CovMode::Full => {
                if d == 1 {
                    return DMatrix::from_element(1, 1, sigma[0] * sigma[0]);
                }
                let l = cholesky_from_params(&sigma, extra);
                &l * l.transpose()
            }
        }
    }

    /// Transform theta into the mixture it parameterizes.
    pub fn realize(&self, theta: &[f64]) -> Result<NCurveMixture> {
        self.check_theta(theta)?;
        let weights = softmax(&theta[..self.k]);
        let mut components = Vec::with_capacity(self.k);
        for k in 0..self.k {
            let controls = (0..self.controls)
                .map(|i| {
                    let mean = DVector::from_row_slice(&theta[self.mean_range(k, i)]);
                    GaussianDist::new(mean, self.control_cov(theta, k, i))
                })
                .collect::<Result<Vec<_>>>()?;
            components.push(NCurve::new(controls)?);
        }
        NCurveMixture::new(weights, components)
    }

    /// Inverse transform: recover a theta that realizes (approximately) the
    /// given mixture. Exact up to the sigma floor and weight normalization;
    /// serves as the round-trip oracle for `realize`.
    pub fn encode(&self, mixture: &NCurveMixture) -> Result<Vec<f64>> {
        if mixture.k() != self.k
            || mixture.dim() != self.d
            || mixture.degree() + 1 != self.controls
        {
            return Err(NCurveError::ShapeMismatch(format!(
                "mixture shape (K={}, controls={}, d={}) does not match layout (K={}, controls={}, d={})",
                mixture.k(),
                mixture.degree() + 1,
                mixture.dim(),
                self.k,
                self.controls,
                self.d
            )));
        }
        let mut theta = vec![0.0; self.len()];
        for (k, &w) in mixture.weights().iter().enumerate() {
            theta[k] = w.max(1e-300).ln();
        }
        for (k, comp) in mixture.components().iter().enumerate() {
            for (i, ctrl) in comp.controls().iter().enumerate() {
                theta[self.mean_range(k, i)].copy_from_slice(ctrl.mean().as_slice());
                let cov = ctrl.cov();
                let d = self.d;
                let ls_range = self.log_sigma_range(k, i);
                match self.cov_mode {
                    CovMode::Diagonal => {
                        for a in 0..d {
                            theta[ls_range.start + a] = inv_sigma(cov[(a, a)].max(0.0).sqrt());
                        }
                    }
                    CovMode::Full if d == 2 => {
                        let s0 = cov[(0, 0)].max(0.0).sqrt();
                        let s1 = cov[(1, 1)].max(0.0).sqrt();
                        theta[ls_range.start] = inv_sigma(s0);
                        theta[ls_range.start + 1] = inv_sigma(s1);
                        let rho = (cov[(0, 1)] / (s0 * s1)).clamp(-1.0 + 1e-12, 1.0 - 1e-12);
                        theta[self.extra_range(k, i).start] = rho.atanh();
                    }
                    CovMode::Full => {
                        if d == 1 {
                            theta[ls_range.start] = inv_sigma(cov[(0, 0)].max(0.0).sqrt());
                            continue;
                        }
                        let l = spd_cholesky(cov)?.l();
                        for a in 0..d {
                            theta[ls_range.start + a] = inv_sigma(l[(a, a)]);
                        }
                        let extra = self.extra_range(k, i);
                        let mut idx = extra.start;
                        for a in 1..d {
                            for b in 0..a {
                                theta[idx] = l[(a, b)];
                                idx += 1;
                            }
                        }
                    }
                }
            }
        }
        Ok(theta)
    }
}

fn inv_sigma(sigma: f64) -> f64 {
    (sigma - SIGMA_FLOOR).max(1e-12).ln()
}

/// Lower-triangular factor from realized sigmas (diagonal) and raw strict
/// lower entries, in row-major order (1,0), (2,0), (2,1), ...
pub(crate) fn cholesky_from_params(sigma: &[f64], raw: &[f64]) -> DMatrix<f64> {
    let d = sigma.len();
    let mut l = DMatrix::zeros(d, d);
    for a in 0..d {
        l[(a, a)] = sigma[a];
    }
    let mut idx = 0;
    for a in 1..d {
        for b in 0..a {
            l[(a, b)] = raw[idx];
            idx += 1;
        }
    }
    l
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn layout_arithmetic() {
        // K=2, 4 controls, d=2, full: 2 logits + 2*4*(2+2+1) = 42
        let full = ParamLayout::new(2, 4, 2, CovMode::Full).unwrap();
        assert_eq!(full.per_control(), 5);
        assert_eq!(full.len(), 42);
        // K=3, 6 controls, d=3, diagonal: 3 + 3*6*(3+3) = 111
        let diag = ParamLayout::new(3, 6, 3, CovMode::Diagonal).unwrap();
        assert_eq!(diag.len(), 111);
        // d=4 full: extra = 6
        let big = ParamLayout::new(1, 2, 4, CovMode::Full).unwrap();
        assert_eq!(big.per_control(), 4 + 4 + 6);
        // ranges tile the vector without gaps
        let mut cursor = full.k;
        for k in 0..2 {
            for i in 0..4 {
                assert_eq!(full.mean_range(k, i).start, cursor);
                cursor = full.extra_range(k, i).end;
            }
        }
        assert_eq!(cursor, full.len());
    }

    #[test]
    fn uniform_logits_realize_uniform_weights() {
        let layout = ParamLayout::new(3, 2, 2, CovMode::Diagonal).unwrap();
        let theta = vec![0.0; layout.len()];
        let m = layout.realize(&theta).unwrap();
        for &w in m.weights() {
            assert_relative_eq!(w, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_log_sigma_realizes_floored_unit_sigma() {
        let layout = ParamLayout::new(1, 2, 2, CovMode::Diagonal).unwrap();
        let theta = vec![0.0; layout.len()];
        let m = layout.realize(&theta).unwrap();
        let cov = m.components()[0].controls()[0].cov();
        let sigma = 1.0 + SIGMA_FLOOR;
        assert_relative_eq!(cov[(0, 0)], sigma * sigma, epsilon = 1e-15);
    }

    #[test]
    fn wrong_theta_length_is_rejected() {
        let layout = ParamLayout::new(1, 2, 2, CovMode::Diagonal).unwrap();
        assert!(matches!(
            layout.realize(&vec![0.0; layout.len() + 1]),
            Err(NCurveError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn full_mode_correlation_stays_in_open_interval() {
        let layout = ParamLayout::new(1, 1, 2, CovMode::Full).unwrap();
        // extreme raw correlation must still give a usable covariance
        let mut theta = vec![0.0; layout.len()];
        theta[layout.extra_range(0, 0).start] = 12.0;
        let m = layout.realize(&theta).unwrap();
        let g = &m.components()[0].controls()[0];
        assert!(g.log_density(&DVector::from_row_slice(&[0.0, 0.0])).is_ok());
        let cov = g.cov();
        let rho = cov[(0, 1)] / (cov[(0, 0)].sqrt() * cov[(1, 1)].sqrt());
        assert!(rho < 1.0 && rho > 0.999);
    }

    fn random_theta(layout: &ParamLayout, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..layout.len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn realize_encode_round_trip() {
        for (layout, seed) in [
            (ParamLayout::new(2, 3, 2, CovMode::Full).unwrap(), 1),
            (ParamLayout::new(3, 4, 3, CovMode::Diagonal).unwrap(), 2),
            (ParamLayout::new(2, 2, 4, CovMode::Full).unwrap(), 3),
            (ParamLayout::new(1, 5, 1, CovMode::Diagonal).unwrap(), 4),
        ] {
            let theta = random_theta(&layout, seed);
            let mixture = layout.realize(&theta).unwrap();
            let theta2 = layout.encode(&mixture).unwrap();
            let again = layout.realize(&theta2).unwrap();
            for (w1, w2) in mixture.weights().iter().zip(again.weights()) {
                assert_relative_eq!(w1, w2, epsilon = 1e-9);
            }
            for (c1, c2) in mixture.components().iter().zip(again.components()) {
                for (g1, g2) in c1.controls().iter().zip(c2.controls()) {
                    assert_relative_eq!(
                        (g1.mean() - g2.mean()).norm(),
                        0.0,
                        epsilon = 1e-9
                    );
                    assert_relative_eq!((g1.cov() - g2.cov()).norm(), 0.0, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn realized_weights_stay_on_simplex() {
        let layout = ParamLayout::new(4, 2, 2, CovMode::Diagonal).unwrap();
        for seed in 0..20 {
            let mut theta = random_theta(&layout, seed);
            // exaggerate logits to stress normalization
            for v in theta.iter_mut().take(4) {
                *v *= 40.0;
            }
            let m = layout.realize(&theta).unwrap();
            let sum: f64 = m.weights().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(m.weights().iter().all(|&w| w >= 0.0));
        }
    }
}
