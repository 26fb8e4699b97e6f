//! Evaluation metrics, sample-moment estimation, coverage counting, and
//! component/path matching for judging fits against known structure.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::curve::{IndexGrid, NCurve, NCurveMixture};
use crate::error::{NCurveError, Result};
use crate::numeric::logsumexp;
use crate::train::loss::{sequence_loglik, LossReduction};

/// How each metric is computed and aggregated, echoed into reports so a
/// number can never be read under the wrong convention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Conventions {
    pub fde: &'static str,
    pub nll: &'static str,
    pub rmse: &'static str,
}

pub const CONVENTIONS: Conventions = Conventions {
    fde: "euclidean distance between the final observation and the \
          highest-weight component mean at the final index; aggregated as \
          the root mean square over sequences",
    nll: "mixture negative log-likelihood of the whole sequence with \
          per-step log-densities summed; aggregated as the mean over \
          sequences",
    rmse: "root mean squared euclidean distance between observations and \
           the highest-weight component mean over the index grid; \
           aggregated as the root mean square over sequences",
};

/// Per-sequence scores under the conventions above.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceScores {
    pub fde: f64,
    pub nll: f64,
    pub rmse: f64,
}

/// Aggregate metrics plus the per-sequence breakdown they were computed
/// from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub fde: f64,
    pub nll: f64,
    pub rmse: f64,
    pub conventions: Conventions,
    pub per_sequence: Vec<SequenceScores>,
}

/// Mixture negative log-likelihood of a single sequence with per-step
/// log-densities summed over the grid.
pub fn sequence_mixture_nll(
    mixture: &NCurveMixture,
    grid: &IndexGrid,
    seq: &[DVector<f64>],
) -> Result<f64> {
    let mut terms = Vec::with_capacity(mixture.k());
    for (w, c) in mixture.weights().iter().zip(mixture.components()) {
        if *w == 0.0 {
            continue;
        }
        terms.push(w.ln() + sequence_loglik(c, grid, seq, LossReduction::SumOverSteps)?);
    }
    Ok(-logsumexp(&terms))
}

/// Score one sequence against one mixture: displacement and RMSE against
/// the highest-weight component's mean curve, likelihood against the whole
/// mixture.
pub fn score_sequence(
    mixture: &NCurveMixture,
    grid: &IndexGrid,
    seq: &[DVector<f64>],
) -> Result<SequenceScores> {
    let n = grid.len();
    if seq.len() != n {
        return Err(NCurveError::DimensionMismatch {
            what: "sequence length vs grid",
            expected: n,
            got: seq.len(),
        });
    }
    let best = &mixture.components()[mixture.argmax_weight()];
    let mut mse = 0.0;
    let mut fde = 0.0;
    for (i, (&t, x)) in grid.values().iter().zip(seq).enumerate() {
        let gap = (x - best.mean_at(t)?).norm();
        mse += gap * gap / n as f64;
        if i == n - 1 {
            fde = gap;
        }
    }
    let nll = sequence_mixture_nll(mixture, grid, seq)?;
    Ok(SequenceScores { fde, nll, rmse: mse.sqrt() })
}

/// Combine per-sequence scores: FDE and RMSE as root mean squares, NLL as
/// the plain mean.
pub fn aggregate(per_sequence: Vec<SequenceScores>) -> Result<EvalReport> {
    if per_sequence.is_empty() {
        return Err(NCurveError::EmptyDataset);
    }
    let m = per_sequence.len() as f64;
    let fde = (per_sequence.iter().map(|s| s.fde * s.fde).sum::<f64>() / m).sqrt();
    let nll = per_sequence.iter().map(|s| s.nll).sum::<f64>() / m;
    let rmse = (per_sequence.iter().map(|s| s.rmse * s.rmse).sum::<f64>() / m).sqrt();
    Ok(EvalReport { fde, nll, rmse, conventions: CONVENTIONS, per_sequence })
}

/// Score every sequence against the mixture and aggregate.
pub fn evaluate(
    mixture: &NCurveMixture,
    grid: &IndexGrid,
    sequences: &[Vec<DVector<f64>>],
) -> Result<EvalReport> {
    if sequences.is_empty() {
        return Err(NCurveError::EmptyDataset);
    }
    let per_sequence = sequences
        .iter()
        .map(|seq| score_sequence(mixture, grid, seq))
        .collect::<Result<Vec<_>>>()?;
    aggregate(per_sequence)
}

/// Sample mean and covariance with their standard errors, for checking
/// analytic moments against draws.
#[derive(Debug, Clone)]
pub struct SampleMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub se_mean: DVector<f64>,
    pub se_cov: DMatrix<f64>,
    pub n: usize,
}

/// Estimate moments from i.i.d. draws. Covariance is the unbiased
/// estimator; standard errors use the Gaussian sampling distribution
/// (se(mean_a) = sqrt(S_aa/n), se(S_ab) = sqrt((S_aa S_bb + S_ab^2)/n)).
pub fn sample_moments(samples: &[DVector<f64>]) -> Result<SampleMoments> {
    let n = samples.len();
    if n < 2 {
        return Err(NCurveError::TooShort { what: "sample count", min: 2, got: n });
    }
    let d = samples[0].len();
    let mut mean = DVector::zeros(d);
    for x in samples {
        if x.len() != d {
            return Err(NCurveError::DimensionMismatch {
                what: "sample dimension",
                expected: d,
                got: x.len(),
            });
        }
        mean += x;
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for x in samples {
        let q = x - &mean;
        cov.syger(1.0, &q, &q, 1.0);
    }
    cov.fill_upper_triangle_with_lower_triangle();
    cov /= (n - 1) as f64;
    let nf = n as f64;
    let se_mean = DVector::from_iterator(d, (0..d).map(|a| (cov[(a, a)] / nf).sqrt()));
    let se_cov = DMatrix::from_fn(d, d, |a, b| {
        ((cov[(a, a)] * cov[(b, b)] + cov[(a, b)] * cov[(a, b)]) / nf).sqrt()
    });
    Ok(SampleMoments { mean, cov, se_mean, se_cov, n })
}

/// Fraction of (sequence, step) points whose Mahalanobis distance to the
/// curve's pointwise Gaussian is at most `n_sigma`.
pub fn coverage(
    curve: &NCurve,
    grid: &IndexGrid,
    sequences: &[Vec<DVector<f64>>],
    n_sigma: f64,
) -> Result<f64> {
    if sequences.is_empty() {
        return Err(NCurveError::EmptyDataset);
    }
    let gaussians: Vec<_> = grid
        .values()
        .iter()
        .map(|&t| curve.at(t))
        .collect::<Result<_>>()?;
    let threshold = n_sigma * n_sigma;
    let mut inside = 0usize;
    let mut total = 0usize;
    for seq in sequences {
        if seq.len() != grid.len() {
            return Err(NCurveError::DimensionMismatch {
                what: "sequence length vs grid",
                expected: grid.len(),
                got: seq.len(),
            });
        }
        for (x, g) in seq.iter().zip(&gaussians) {
            if g.mahalanobis_sq(x)? <= threshold {
                inside += 1;
            }
            total += 1;
        }
    }
    Ok(inside as f64 / total as f64)
}

fn polygon_cost(a: &NCurve, b: &NCurve) -> f64 {
    a.controls()
        .iter()
        .zip(b.controls())
        .map(|(p, q)| (p.mean() - q.mean()).norm_squared())
        .sum()
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..k).collect();
    heap_permute(&mut items, k, &mut out);
    out
}

fn heap_permute(items: &mut Vec<usize>, size: usize, out: &mut Vec<Vec<usize>>) {
    if size == 1 {
        out.push(items.clone());
        return;
    }
    for i in 0..size {
        heap_permute(items, size - 1, out);
        if size % 2 == 1 {
            items.swap(0, size - 1);
        } else {
            items.swap(i, size - 1);
        }
    }
}

/// Match fitted components to reference components one-to-one, minimizing
/// the total squared distance between control-point mean polygons. Returns
/// `perm` with `perm[i]` = reference index for fitted component `i`.
/// Exhaustive search, so K is capped at 8.
pub fn match_components(
    fitted: &NCurveMixture,
    reference: &NCurveMixture,
) -> Result<Vec<usize>> {
    let k = fitted.k();
    if k != reference.k() {
        return Err(NCurveError::DimensionMismatch {
            what: "component count",
            expected: reference.k(),
            got: k,
        });
    }
    if fitted.degree() != reference.degree() {
        return Err(NCurveError::DimensionMismatch {
            what: "curve degree",
            expected: reference.degree(),
            got: fitted.degree(),
        });
    }
    if k > 8 {
        return Err(NCurveError::Invalid {
            what: "component matching",
            msg: format!("exhaustive matching supports at most 8 components, got {k}"),
        });
    }
    let cost = DMatrix::from_fn(k, k, |i, j| {
        polygon_cost(&fitted.components()[i], &reference.components()[j])
    });
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(k) {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, perm));
        }
    }
    Ok(best.unwrap().1)
}

/// Assign each fitted component to the nearest reference curve by
/// control-polygon distance (summed squared gaps between control-point
/// means). Returns one reference index per component. Degrees must agree.
pub fn assign_to_polygons(
    mixture: &NCurveMixture,
    references: &[NCurve],
) -> Result<Vec<usize>> {
    if references.is_empty() {
        return Err(NCurveError::EmptyInput { what: "reference curves" });
    }
    for r in references {
        if r.degree() != mixture.degree() {
            return Err(NCurveError::DimensionMismatch {
                what: "curve degree",
                expected: mixture.degree(),
                got: r.degree(),
            });
        }
    }
    Ok(mixture
        .components()
        .iter()
        .map(|c| {
            let mut best = 0usize;
            let mut best_cost = f64::INFINITY;
            for (idx, r) in references.iter().enumerate() {
                let cost = polygon_cost(c, r);
                if cost < best_cost {
                    best_cost = cost;
                    best = idx;
                }
            }
            best
        })
        .collect())
}

/// Assign each fitted component to the nearest reference path: mean squared
/// distance between the component's mean curve on the grid and the path's
/// points. Returns one path index per component.
pub fn assign_to_paths(
    mixture: &NCurveMixture,
    grid: &IndexGrid,
    paths: &[Vec<DVector<f64>>],
) -> Result<Vec<usize>> {
    if paths.is_empty() {
        return Err(NCurveError::EmptyInput { what: "reference paths" });
    }
    for p in paths {
        if p.len() != grid.len() {
            return Err(NCurveError::DimensionMismatch {
                what: "path length vs grid",
                expected: grid.len(),
                got: p.len(),
            });
        }
    }
    let mut assignment = Vec::with_capacity(mixture.k());
    for c in mixture.components() {
        let means: Vec<DVector<f64>> = grid
            .values()
            .iter()
            .map(|&t| c.mean_at(t))
            .collect::<Result<_>>()?;
        let mut best = 0usize;
        let mut best_cost = f64::INFINITY;
        for (p_idx, p) in paths.iter().enumerate() {
            let cost: f64 = means
                .iter()
                .zip(p)
                .map(|(mu, x)| (mu - x).norm_squared())
                .sum();
            if cost < best_cost {
                best_cost = cost;
                best = p_idx;
            }
        }
        assignment.push(best);
    }
    Ok(assignment)
}
