//! Probabilistic Bézier curves and their mixtures.
//!
//! An `NCurve` of degree N carries N+1 Gaussian control points. At any
//! t ∈ [0, 1] the curve point is itself Gaussian: the Bernstein-weighted
//! linear combination of the controls. Sampling a whole realization instead
//! draws one concrete point per control and evaluates the resulting ordinary
//! Bézier curve, so realizations are smooth and correlated across t while
//! their pointwise marginals still match the closed-form moments.

use nalgebra::DVector;
use rand::Rng;

use crate::bernstein::{bernstein_row, bernstein_row_into};
use crate::error::{NCurveError, Result};
use crate::gaussian::{affine_combine, GaussianDist};
use crate::numeric::logsumexp;

/// Discrete index set: sorted values in [0, 1] giving the curve parameters
/// that correspond to sequence positions.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexGrid {
    values: Vec<f64>,
}

impl IndexGrid {
    /// Uniform grid {v/(n-1) | v in 0..n}, so position i of an n-step
    /// sequence maps to t = i/(n-1). Needs n >= 2.
    pub fn uniform(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(NCurveError::TooShort { what: "index grid", min: 2, got: n });
        }
        let denom = (n - 1) as f64;
        Ok(Self {
            values: (0..n).map(|v| v as f64 / denom).collect(),
        })
    }

    /// Grid from explicit values; must be strictly increasing within [0, 1].
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(NCurveError::EmptyInput { what: "index grid values" });
        }
        for &t in &values {
            if !(0.0..=1.0).contains(&t) {
                return Err(NCurveError::OutOfRange {
                    what: "index grid value",
                    value: t,
                    min: 0.0,
                    max: 1.0,
                });
            }
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(NCurveError::Invalid {
                what: "index grid",
                msg: "values must be strictly increasing".into(),
            });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Mean and per-axis half-widths of the n-sigma band at one grid value,
/// emitted for plotting.
#[derive(Debug, Clone)]
pub struct EnvelopePoint {
    pub t: f64,
    pub mean: DVector<f64>,
    pub half_width: DVector<f64>,
}

/// Bézier curve of degree N whose control points are Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct NCurve {
    controls: Vec<GaussianDist>,
}

impl NCurve {
    pub fn new(controls: Vec<GaussianDist>) -> Result<Self> {
        if controls.is_empty() {
            return Err(NCurveError::EmptyInput { what: "control points" });
        }
        let d = controls[0].dim();
        for c in &controls {
            if c.dim() != d {
                return Err(NCurveError::DimensionMismatch {
                    what: "control point dimensions",
                    expected: d,
                    got: c.dim(),
                });
            }
        }
        Ok(Self { controls })
    }

    /// Degree N (one less than the number of control points).
    pub fn degree(&self) -> usize {
        self.controls.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.controls[0].dim()
    }

    pub fn controls(&self) -> &[GaussianDist] {
        &self.controls
    }

    /// Pointwise distribution at t: Gaussian with mean Σᵢ bᵢ(t)·μᵢ and
    /// covariance Σᵢ bᵢ(t)²·Σᵢ. At t ∈ {0, 1} this is the first or last
    /// control point exactly.
    pub fn at(&self, t: f64) -> Result<GaussianDist> {
        let row = bernstein_row(self.degree(), t)?;
        affine_combine(&self.controls, &row)
    }

    /// Mean of the pointwise distribution at t.
    pub fn mean_at(&self, t: f64) -> Result<DVector<f64>> {
        let row = bernstein_row(self.degree(), t)?;
        let mut mean = DVector::zeros(self.dim());
        for (c, &w) in self.controls.iter().zip(&row) {
            mean.axpy(w, c.mean(), 1.0);
        }
        Ok(mean)
    }

    /// ln of the pointwise density at t evaluated at x.
    pub fn log_density_at(&self, t: f64, x: &DVector<f64>) -> Result<f64> {
        self.at(t)?.log_density(x)
    }

    /// Draw one concrete point from every Gaussian control point, in order.
    pub fn sample_controls<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<DVector<f64>>> {
        self.controls.iter().map(|c| c.sample(rng)).collect()
    }

    /// Sample a full realization: one draw per control point, then the
    /// deterministic Bézier curve through those points evaluated at every
    /// grid value. Uses the same Bernstein evaluation path as `at`.
    pub fn sample_realization<R: Rng + ?Sized>(
        &self,
        grid: &IndexGrid,
        rng: &mut R,
    ) -> Result<Vec<DVector<f64>>> {
        let points = self.sample_controls(rng)?;
        let mut row = vec![0.0; self.degree() + 1];
        let mut out = Vec::with_capacity(grid.len());
        for &t in grid.values() {
            bernstein_row_into(self.degree(), t, &mut row)?;
            let mut x = DVector::zeros(self.dim());
            for (p, &w) in points.iter().zip(&row) {
                x.axpy(w, p, 1.0);
            }
            out.push(x);
        }
        Ok(out)
    }

    /// Per-grid-point mean and n_sigma·sqrt(diag(cov)) half-widths.
    pub fn envelope(&self, grid: &IndexGrid, n_sigma: f64) -> Result<Vec<EnvelopePoint>> {
        grid.values()
            .iter()
            .map(|&t| {
                let g = self.at(t)?;
                let half_width = g.cov().diagonal().map(|v| n_sigma * v.max(0.0).sqrt());
                Ok(EnvelopePoint { t, mean: g.mean().clone(), half_width })
            })
            .collect()
    }
}

/// Weighted mixture of N-Curves sharing dimension and degree.
#[derive(Debug, Clone, PartialEq)]
pub struct NCurveMixture {
    weights: Vec<f64>,
    components: Vec<NCurve>,
}

impl NCurveMixture {
    /// Weights must be non-negative and sum to 1 within 1e-9; they are
    /// renormalized to sum to exactly 1 on construction.
    pub fn new(weights: Vec<f64>, components: Vec<NCurve>) -> Result<Self> {
        if components.is_empty() {
            return Err(NCurveError::EmptyInput { what: "mixture components" });
        }
        if weights.len() != components.len() {
            return Err(NCurveError::DimensionMismatch {
                what: "weights vs components",
                expected: components.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|&w| w.is_nan() || w < 0.0) {
            return Err(NCurveError::Invalid {
                what: "mixture weights",
                msg: "weights must be non-negative and finite".into(),
            });
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(NCurveError::Invalid {
                what: "mixture weights",
                msg: format!("weights sum to {sum}, expected 1"),
            });
        }
        let weights = weights.iter().map(|w| w / sum).collect();
        let (d, n) = (components[0].dim(), components[0].degree());
        for c in &components {
            if c.dim() != d {
                return Err(NCurveError::DimensionMismatch {
                    what: "component dimensions",
                    expected: d,
                    got: c.dim(),
                });
            }
            if c.degree() != n {
                return Err(NCurveError::DimensionMismatch {
                    what: "component degrees",
                    expected: n,
                    got: c.degree(),
                });
            }
        }
        Ok(Self { weights, components })
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn degree(&self) -> usize {
        self.components[0].degree()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[NCurve] {
        &self.components
    }

    /// Pointwise Gaussian mixture at t: the weights plus each component's
    /// pointwise Gaussian.
    pub fn at(&self, t: f64) -> Result<(Vec<f64>, Vec<GaussianDist>)> {
        let gs = self
            .components
            .iter()
            .map(|c| c.at(t))
            .collect::<Result<Vec<_>>>()?;
        Ok((self.weights.clone(), gs))
    }

    /// ln Σₖ πₖ·N(x | component k at t) via log-sum-exp. Zero-weight
    /// components are skipped (their pointwise covariance may be degenerate).
    pub fn log_density_at(&self, t: f64, x: &DVector<f64>) -> Result<f64> {
        let mut terms = Vec::with_capacity(self.k());
        for (c, &w) in self.components.iter().zip(&self.weights) {
            if w == 0.0 {
                continue;
            }
            terms.push(w.ln() + c.log_density_at(t, x)?);
        }
        Ok(logsumexp(&terms))
    }

    /// Draw a component index from Categorical(weights), then one realization
    /// of that component. Returns the index alongside the sequence.
    pub fn sample_realization<R: Rng + ?Sized>(
        &self,
        grid: &IndexGrid,
        rng: &mut R,
    ) -> Result<(usize, Vec<DVector<f64>>)> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut idx = self.k() - 1;
        for (k, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                idx = k;
                break;
            }
        }
        let seq = self.components[idx].sample_realization(grid, rng)?;
        Ok((idx, seq))
    }

    /// Index of the largest weight; ties resolve to the lowest index.
    pub fn argmax_weight(&self) -> usize {
        let mut best = 0;
        for (k, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = k;
            }
        }
        best
    }
}
