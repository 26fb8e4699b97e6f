//! Optimizer loops: unconditional mixture fitting and encoder-conditioned
//! fitting, plus prediction from a trained encoder.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::bernstein::bernstein_row;
use crate::curve::{IndexGrid, NCurveMixture};
use crate::error::{NCurveError, Result};
use crate::rng::rng_substream;
use crate::train::adam::Adam;
use crate::train::encoder::{Encoder, EncoderConfig};
use crate::train::layout::{CovMode, ParamLayout};
use crate::train::loss::{LossEngine, LossReduction};

/// How the data-driven starting parameters are built when no explicit
/// warm start is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitStrategy {
    /// Cluster whole sequences with seeded k-means and start each component
    /// on its cluster's least-squares control polygon. Robust when the data
    /// has well-separated modes of unequal weight.
    #[default]
    KMeans,
    /// Start every component on the dataset's average start-to-end line with
    /// a small seeded spread. Components begin nearly identical, which lets
    /// redundant ones die off; useful when probing weight collapse.
    Spread,
}

/// Everything a fit run needs. `batch_size` 0 means full batch; `n` must
/// equal the grid length the fit runs on. `init` warm-starts from a
/// previous run's parameters instead of the data-driven initialization.
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub k: usize,
    pub controls: usize,
    pub n: usize,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss_reduction: LossReduction,
    pub full_cov: bool,
    pub init: Option<Vec<f64>>,
    pub init_strategy: InitStrategy,
}

impl FitConfig {
    pub fn new(k: usize, controls: usize, n: usize) -> Self {
        Self {
            k,
            controls,
            n,
            learning_rate: 1e-3,
            max_iters: 2000,
            batch_size: 0,
            seed: 0,
            loss_reduction: LossReduction::MeanOverSteps,
            full_cov: false,
            init: None,
            init_strategy: InitStrategy::default(),
        }
    }

    /// Covariance mode for data dimension d: low dimensions train the full
    /// parameterization (per-axis sigma plus correlation); higher dimensions
    /// default to diagonal unless full covariance is forced.
    pub fn cov_mode(&self, d: usize) -> CovMode {
        if self.full_cov || d <= 2 {
            CovMode::Full
        } else {
            CovMode::Diagonal
        }
    }

    /// Validate and produce the parameter layout for data dimension d.
    pub fn layout(&self, d: usize) -> Result<ParamLayout> {
        if self.k < 1 {
            return Err(NCurveError::Invalid { what: "fit config", msg: "K must be >= 1".into() });
        }
        if self.controls < 2 {
            return Err(NCurveError::Invalid {
                what: "fit config",
                msg: "need at least 2 control points (degree >= 1)".into(),
            });
        }
        if self.n < 2 {
            return Err(NCurveError::Invalid {
                what: "fit config",
                msg: "sequence length n must be >= 2".into(),
            });
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NCurveError::Invalid {
                what: "fit config",
                msg: format!("learning rate {} must be positive", self.learning_rate),
            });
        }
        if self.max_iters < 1 {
            return Err(NCurveError::Invalid {
                what: "fit config",
                msg: "max_iters must be >= 1".into(),
            });
        }
        ParamLayout::new(self.k, self.controls, d, self.cov_mode(d))
    }
}

/// Mutable optimization state: the unconstrained parameters, the gradient
/// buffer, and the optimizer moments.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub layout: ParamLayout,
    pub theta: Vec<f64>,
    pub grad: Vec<f64>,
    pub opt: Adam,
}

impl TrainState {
    pub fn new(layout: ParamLayout, theta: Vec<f64>, learning_rate: f64) -> Self {
        let len = layout.len();
        debug_assert_eq!(theta.len(), len);
        Self { layout, theta, grad: vec![0.0; len], opt: Adam::new(learning_rate, len) }
    }

    pub fn realize(&self) -> Result<NCurveMixture> {
        self.layout.realize(&self.theta)
    }

    pub fn apply_step(&mut self) {
        let Self { theta, grad, opt, .. } = self;
        opt.update(theta, grad);
    }
}

/// Result of an unconditional fit: the realized mixture, the raw parameters
/// that produced it, and the per-iteration loss trace.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub mixture: NCurveMixture,
    pub theta: Vec<f64>,
    pub layout: ParamLayout,
    pub trace: Vec<f64>,
}

/// Data-driven starting point for the unconstrained parameters, chosen by
/// `strategy`. Both strategies are deterministic for a fixed seed.
pub fn init_theta(
    layout: &ParamLayout,
    data: &[Vec<DVector<f64>>],
    grid: &IndexGrid,
    seed: u64,
    strategy: InitStrategy,
) -> Result<Vec<f64>> {
    let refs: Vec<&[DVector<f64>]> = data.iter().map(|s| s.as_slice()).collect();
    init_theta_refs(layout, &refs, grid, seed, strategy)
}

fn init_theta_refs(
    layout: &ParamLayout,
    seqs: &[&[DVector<f64>]],
    grid: &IndexGrid,
    seed: u64,
    strategy: InitStrategy,
) -> Result<Vec<f64>> {
    let mut theta = spread_theta(layout, seqs, seed);
    if strategy == InitStrategy::KMeans {
        overlay_kmeans_theta(layout, seqs, grid, seed, &mut theta)?;
    }
    Ok(theta)
}

/// Uniform weights, control means linearly interpolated between the
/// dataset-average start and end points with a seeded jitter of 5% of the
/// per-axis data range, and log-sigmas at the per-axis pooled standard
/// deviation.
fn spread_theta(layout: &ParamLayout, seqs: &[&[DVector<f64>]], seed: u64) -> Vec<f64> {
    let d = layout.d;
    let mut start = vec![0.0; d];
    let mut end = vec![0.0; d];
    let mut sum = vec![0.0; d];
    let mut sumsq = vec![0.0; d];
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    let mut count = 0usize;
    for seq in seqs {
        for a in 0..d {
            start[a] += seq[0][a];
            end[a] += seq[seq.len() - 1][a];
        }
        for x in *seq {
            count += 1;
            for a in 0..d {
                sum[a] += x[a];
                sumsq[a] += x[a] * x[a];
                lo[a] = lo[a].min(x[a]);
                hi[a] = hi[a].max(x[a]);
            }
        }
    }
    let mf = seqs.len() as f64;
    for a in 0..d {
        start[a] /= mf;
        end[a] /= mf;
    }
    let std: Vec<f64> = (0..d)
        .map(|a| {
            let mean = sum[a] / count as f64;
            (sumsq[a] / count as f64 - mean * mean).max(0.0).sqrt()
        })
        .collect();

    let mut rng = rng_substream(seed, 7);
    let mut theta = vec![0.0; layout.len()];
    let denom = (layout.controls - 1).max(1) as f64;
    for k in 0..layout.k {
        for i in 0..layout.controls {
            let frac = i as f64 / denom;
            let mean_start = layout.mean_range(k, i).start;
            for a in 0..d {
                let base = start[a] + frac * (end[a] - start[a]);
                let jitter: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal)
                    * 0.05
                    * (hi[a] - lo[a]);
                theta[mean_start + a] = base + jitter;
            }
            let ls_start = layout.log_sigma_range(k, i).start;
            for a in 0..d {
                theta[ls_start + a] = std[a].max(1e-3).ln();
            }
        }
    }
    theta
}

/// Replace each component's spread start with its k-means cluster: cluster
/// whole sequences (k-means++ seeding, Lloyd refinement), fit each cluster's
/// mean sequence with least-squares control points, and set log-sigmas from
/// the per-axis residual spread. Components whose cluster comes up empty,
/// and grids too short to determine the control polygon, keep the spread
/// start.
fn overlay_kmeans_theta(
    layout: &ParamLayout,
    seqs: &[&[DVector<f64>]],
    grid: &IndexGrid,
    seed: u64,
    theta: &mut [f64],
) -> Result<()> {
    let m = seqs.len();
    let n = grid.len();
    let d = layout.d;
    let k = layout.k;
    if n < layout.controls {
        return Ok(());
    }
    let degree = layout.controls - 1;
    let design = {
        let mut b = DMatrix::<f64>::zeros(n, layout.controls);
        for (i, &t) in grid.values().iter().enumerate() {
            let row = bernstein_row(degree, t)?;
            for (c, w) in row.iter().enumerate() {
                b[(i, c)] = *w;
            }
        }
        b
    };
    let solve = match (design.transpose() * &design).try_inverse() {
        Some(gram_inv) => gram_inv * design.transpose(),
        None => return Ok(()),
    };

    let flat: Vec<Vec<f64>> = seqs
        .iter()
        .map(|s| s.iter().flat_map(|x| x.iter().copied()).collect())
        .collect();
    let dist2 =
        |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum() };

    let mut rng = rng_substream(seed, 8);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(flat[rng.random_range(0..m)].clone());
    let mut best_d2: Vec<f64> = flat.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = best_d2.iter().sum();
        let next = if total > 0.0 && total.is_finite() {
            let mut u = rng.random::<f64>() * total;
            let mut pick = m - 1;
            for (j, &w) in best_d2.iter().enumerate() {
                if u < w {
                    pick = j;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..m)
        };
        centers.push(flat[next].clone());
        for (j, p) in flat.iter().enumerate() {
            best_d2[j] = best_d2[j].min(dist2(p, centers.last().unwrap()));
        }
    }

    let mut assign = vec![0usize; m];
    for _ in 0..25 {
        let mut changed = false;
        for (j, p) in flat.iter().enumerate() {
            let nearest = (0..k)
                .map(|c| (c, dist2(p, &centers[c])))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0;
            if assign[j] != nearest {
                assign[j] = nearest;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; n * d]; k];
        for (j, p) in flat.iter().enumerate() {
            counts[assign[j]] += 1;
            for (s, v) in sums[assign[j]].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (ci, s) in centers[c].iter_mut().zip(&sums[c]) {
                    *ci = s / counts[c] as f64;
                }
            }
        }
    }

    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for s in seqs {
        for x in *s {
            for a in 0..d {
                lo[a] = lo[a].min(x[a]);
                hi[a] = hi[a].max(x[a]);
            }
        }
    }

    for c in 0..k {
        let members: Vec<usize> = (0..m).filter(|&j| assign[j] == c).collect();
        if members.is_empty() {
            continue;
        }
        let mut mean_seq = DMatrix::<f64>::zeros(n, d);
        for &j in &members {
            for (i, x) in seqs[j].iter().enumerate() {
                for a in 0..d {
                    mean_seq[(i, a)] += x[a];
                }
            }
        }
        mean_seq /= members.len() as f64;
        let controls = &solve * &mean_seq;
        let recon = &design * &controls;
        let mut var = vec![0.0; d];
        for &j in &members {
            for (i, x) in seqs[j].iter().enumerate() {
                for a in 0..d {
                    let r = x[a] - recon[(i, a)];
                    var[a] += r * r;
                }
            }
        }
        let points = (members.len() * n) as f64;
        for v in &mut var {
            *v /= points;
        }
        for i in 0..layout.controls {
            let mean_start = layout.mean_range(c, i).start;
            for a in 0..d {
                let jitter: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal)
                    * 0.01
                    * (hi[a] - lo[a]);
                theta[mean_start + a] = controls[(i, a)] + jitter;
            }
            let ls_start = layout.log_sigma_range(c, i).start;
            for a in 0..d {
                theta[ls_start + a] = var[a].sqrt().max(1e-3).ln();
            }
        }
    }
    Ok(())
}

fn check_dataset(data: &[Vec<DVector<f64>>], grid: &IndexGrid, cfg: &FitConfig) -> Result<usize> {
    if data.is_empty() {
        return Err(NCurveError::EmptyDataset);
    }
    if grid.len() != cfg.n {
        return Err(NCurveError::DimensionMismatch {
            what: "grid length vs configured n",
            expected: cfg.n,
            got: grid.len(),
        });
    }
    let d = data[0][0].len();
    for seq in data {
        if seq.len() != grid.len() {
            return Err(NCurveError::DimensionMismatch {
                what: "sequence length vs grid",
                expected: grid.len(),
                got: seq.len(),
            });
        }
        for x in seq {
            if x.len() != d {
                return Err(NCurveError::DimensionMismatch {
                    what: "sample dimension",
                    expected: d,
                    got: x.len(),
                });
            }
        }
    }
    Ok(d)
}

/// Iterate minibatches (reshuffled each epoch when smaller than the dataset)
/// and run Adam on the flat parameters. Returns the realized mixture and the
/// per-iteration loss trace.
pub fn fit_unconditional(
    data: &[Vec<DVector<f64>>],
    grid: &IndexGrid,
    cfg: &FitConfig,
) -> Result<FitResult> {
    let d = check_dataset(data, grid, cfg)?;
    let layout = cfg.layout(d)?;
    let mut engine = LossEngine::new(layout, grid)?;
    let theta0 = match &cfg.init {
        Some(theta) => {
            layout.check_theta(theta)?;
            theta.clone()
        }
        None => init_theta(&layout, data, grid, cfg.seed, cfg.init_strategy)?,
    };
    let mut state = TrainState::new(layout, theta0, cfg.learning_rate);

    let m = data.len();
    let b = if cfg.batch_size == 0 || cfg.batch_size >= m { m } else { cfg.batch_size };
    let mut order: Vec<usize> = (0..m).collect();
    let mut shuffle_rng = rng_substream(cfg.seed, 1);
    let mut pos = m;
    let mut trace = Vec::with_capacity(cfg.max_iters);

    for iter in 0..cfg.max_iters {
        if pos >= m {
            if b < m {
                order.shuffle(&mut shuffle_rng);
            }
            pos = 0;
        }
        let end = (pos + b).min(m);
        let batch = &order[pos..end];
        pos = end;
        let loss = engine
            .nll_and_grad(&state.theta, data, batch, cfg.loss_reduction, &mut state.grad)
            .map_err(|e| e.with_iteration(iter))?;
        trace.push(loss);
        state.apply_step();
    }

    let mixture = state.realize()?;
    Ok(FitResult { mixture, theta: state.theta, layout, trace })
}

/// Encoder plus the layout its outputs parameterize.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalModel {
    pub encoder: Encoder,
    pub layout: ParamLayout,
}

#[derive(Debug, Clone)]
pub struct ConditionalFit {
    pub model: ConditionalModel,
    pub trace: Vec<f64>,
}

/// One conditional training example: the flattened encoder input and the
/// full target sequence it should explain.
pub type ObservationPair = (Vec<f64>, Vec<DVector<f64>>);

/// Flatten observed prefixes into encoder inputs: the first `m_obs` points
/// row by row, followed by the per-sequence control channel when present.
/// Targets stay the full sequences, so the fit covers observed and future
/// steps alike.
pub fn make_pairs(
    sequences: &[Vec<DVector<f64>>],
    control: Option<&[Vec<f64>]>,
    m_obs: usize,
) -> Result<Vec<ObservationPair>> {
    if sequences.is_empty() {
        return Err(NCurveError::EmptyDataset);
    }
    let n = sequences[0].len();
    if m_obs == 0 || m_obs >= n {
        return Err(NCurveError::OutOfRange {
            what: "observed prefix length",
            value: m_obs as f64,
            min: 1.0,
            max: (n - 1) as f64,
        });
    }
    if let Some(ctrl) = control {
        if ctrl.len() != sequences.len() {
            return Err(NCurveError::DimensionMismatch {
                what: "control channels vs sequences",
                expected: sequences.len(),
                got: ctrl.len(),
            });
        }
    }
    let mut pairs = Vec::with_capacity(sequences.len());
    for (j, seq) in sequences.iter().enumerate() {
        if seq.len() != n {
            return Err(NCurveError::DimensionMismatch {
                what: "sequence length",
                expected: n,
                got: seq.len(),
            });
        }
        let mut obs: Vec<f64> =
            seq[..m_obs].iter().flat_map(|x| x.iter().copied()).collect();
        if let Some(ctrl) = control {
            obs.extend_from_slice(&ctrl[j]);
        }
        pairs.push((obs, seq.clone()));
    }
    Ok(pairs)
}

/// Train the encoder end to end: each observation maps to mixture parameters
/// whose loss is the sequence NLL of the paired full sequence; gradients flow
/// through the mixture head into the network.
pub fn fit_conditional(
    pairs: &[ObservationPair],
    grid: &IndexGrid,
    cfg: &FitConfig,
    enc_cfg: &EncoderConfig,
) -> Result<ConditionalFit> {
    if pairs.is_empty() {
        return Err(NCurveError::EmptyDataset);
    }
    let obs_dim = pairs[0].0.len();
    if obs_dim == 0 {
        return Err(NCurveError::EmptyInput { what: "observation vector" });
    }
    for (obs, _) in pairs {
        if obs.len() != obs_dim {
            return Err(NCurveError::DimensionMismatch {
                what: "observation length",
                expected: obs_dim,
                got: obs.len(),
            });
        }
    }
    let d = pairs[0].1[0].len();
    for (_, seq) in pairs {
        if seq.len() != grid.len() {
            return Err(NCurveError::DimensionMismatch {
                what: "target length vs grid",
                expected: grid.len(),
                got: seq.len(),
            });
        }
        if seq.iter().any(|x| x.len() != d) {
            return Err(NCurveError::DimensionMismatch {
                what: "target dimension",
                expected: d,
                got: seq.iter().find(|x| x.len() != d).unwrap().len(),
            });
        }
    }
    let layout = cfg.layout(d)?;
    let targets: Vec<&[DVector<f64>]> = pairs.iter().map(|p| p.1.as_slice()).collect();
    let theta0 = init_theta_refs(&layout, &targets, grid, cfg.seed, cfg.init_strategy)?;
    let mut encoder = Encoder::new(
        obs_dim,
        layout.len(),
        enc_cfg,
        &theta0,
        &mut rng_substream(cfg.seed, 2),
    )?;
    let mut engine = LossEngine::new(layout, grid)?;
    let mut ws = encoder.workspace();
    let mut adam = Adam::new(cfg.learning_rate, encoder.n_params());
    let mut grad_enc = vec![0.0; encoder.n_params()];
    let mut dtheta = vec![0.0; layout.len()];
    let mut theta_buf = vec![0.0; layout.len()];

    let m = pairs.len();
    let b = if cfg.batch_size == 0 || cfg.batch_size >= m { m } else { cfg.batch_size };
    let mut order: Vec<usize> = (0..m).collect();
    let mut shuffle_rng = rng_substream(cfg.seed, 1);
    let mut pos = m;
    let mut trace = Vec::with_capacity(cfg.max_iters);

    for iter in 0..cfg.max_iters {
        if pos >= m {
            if b < m {
                order.shuffle(&mut shuffle_rng);
            }
            pos = 0;
        }
        let end = (pos + b).min(m);
        let batch = &order[pos..end];
        pos = end;

        grad_enc.fill(0.0);
        let inv_b = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for &j in batch {
            let (obs, seq) = &pairs[j];
            encoder.forward(obs, &mut ws)?;
            theta_buf.copy_from_slice(encoder.output(&ws));
            let loss_j = engine
                .nll_and_grad(
                    &theta_buf,
                    std::slice::from_ref(seq),
                    &[0],
                    cfg.loss_reduction,
                    &mut dtheta,
                )
                .map_err(|e| e.with_iteration(iter))?;
            total += loss_j * inv_b;
            for g in dtheta.iter_mut() {
                *g *= inv_b;
            }
            encoder.backward(&mut ws, &dtheta, &mut grad_enc);
        }
        trace.push(total);
        adam.update(encoder.params_mut(), &grad_enc);
    }

    Ok(ConditionalFit { model: ConditionalModel { encoder, layout }, trace })
}

/// One forward pass: observation -> unconstrained parameters -> mixture.
pub fn predict(model: &ConditionalModel, observation: &[f64]) -> Result<NCurveMixture> {
    let mut ws = model.encoder.workspace();
    model.encoder.forward(observation, &mut ws)?;
    model.layout.realize(model.encoder.output(&ws))
}

/// Loss trace as `iter,nll` CSV.
pub fn write_trace_csv(path: &Path, trace: &[f64]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "iter,nll")?;
    for (i, v) in trace.iter().enumerate() {
        writeln!(out, "{i},{v}")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::loss::mixture_nll;
    use approx::assert_relative_eq;

    fn dv(vals: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(vals)
    }

    fn constant_dataset(m: usize, n: usize, value: &[f64]) -> Vec<Vec<DVector<f64>>> {
        (0..m).map(|_| (0..n).map(|_| dv(value)).collect()).collect()
    }

    #[test]
    fn identical_constant_sequences_recover_the_constant() {
        let data = constant_dataset(20, 3, &[1.5, -0.5]);
        let grid = IndexGrid::uniform(3).unwrap();
        let mut cfg = FitConfig::new(1, 2, 3);
        cfg.max_iters = 500;
        cfg.seed = 3;
        let fit = fit_unconditional(&data, &grid, &cfg).unwrap();
        for &t in grid.values() {
            let g = fit.mixture.components()[0].at(t).unwrap();
            assert!((g.mean() - dv(&[1.5, -0.5])).norm() < 1e-3, "mean off at t={t}");
            assert!(g.cov()[(0, 0)].sqrt() < 0.01, "sigma did not shrink");
        }
        assert_eq!(fit.trace.len(), 500);
    }

    #[test]
    fn fits_are_bit_deterministic() {
        let mut data = constant_dataset(12, 4, &[0.0, 0.0]);
        for (j, seq) in data.iter_mut().enumerate() {
            for (i, x) in seq.iter_mut().enumerate() {
                x[0] += (j as f64 * 0.37).sin();
                x[1] += (i as f64 * 0.21).cos();
            }
        }
        let grid = IndexGrid::uniform(4).unwrap();
        let mut cfg = FitConfig::new(2, 3, 4);
        cfg.max_iters = 120;
        cfg.batch_size = 5;
        cfg.seed = 9;
        let a = fit_unconditional(&data, &grid, &cfg).unwrap();
        let b = fit_unconditional(&data, &grid, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.theta, b.theta);
    }

    #[test]
    fn nan_data_aborts_with_diagnostics() {
        let mut data = constant_dataset(3, 3, &[0.0, 0.0]);
        data[1][2][0] = f64::NAN;
        let grid = IndexGrid::uniform(3).unwrap();
        let mut cfg = FitConfig::new(1, 2, 3);
        cfg.max_iters = 10;
        let err = fit_unconditional(&data, &grid, &cfg).unwrap_err();
        match err {
            NCurveError::NonFiniteLoss { iteration, detail } => {
                assert_eq!(iteration, 0);
                assert!(detail.contains("component"), "detail: {detail}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn make_pairs_flattens_prefix_and_appends_control() {
        let seqs = vec![vec![dv(&[1.0, 2.0]), dv(&[3.0, 4.0]), dv(&[5.0, 6.0])]];
        let control = vec![vec![9.0, 8.0, 7.0]];
        let pairs = make_pairs(&seqs, Some(&control), 2).unwrap();
        assert_eq!(pairs[0].0, vec![1.0, 2.0, 3.0, 4.0, 9.0, 8.0, 7.0]);
        assert_eq!(pairs[0].1.len(), 3);
        assert!(make_pairs(&seqs, None, 0).is_err());
        assert!(make_pairs(&seqs, None, 3).is_err());
    }

    #[test]
    fn conditioning_separates_modes_a_marginal_fit_cannot() {
        // two clusters whose continuation is determined by the first point;
        // a K=1 marginal fit must straddle both, the conditioned fit need not
        let mut seqs = Vec::new();
        for j in 0..16 {
            let s = if j % 2 == 0 { 1.0 } else { -1.0 };
            let seq: Vec<DVector<f64>> = (0..5)
                .map(|i| {
                    let e = 0.05 * (1.7 * j as f64 + 0.9 * i as f64).sin();
                    let f = 0.05 * (1.3 * j as f64 + 0.5 * i as f64).cos();
                    dv(&[
                        s * (1.0 + 0.3 * i as f64) + e,
                        s * (0.5 + 0.4 * i as f64) + f,
                    ])
                })
                .collect();
            seqs.push(seq);
        }
        let grid = IndexGrid::uniform(5).unwrap();
        let mut cfg = FitConfig::new(1, 3, 5);
        cfg.max_iters = 600;
        cfg.seed = 1;
        let uncond = fit_unconditional(&seqs, &grid, &cfg).unwrap();
        let uncond_nll =
            mixture_nll(&uncond.mixture, &grid, &seqs, cfg.loss_reduction).unwrap();

        let pairs = make_pairs(&seqs, None, 1).unwrap();
        let cond = fit_conditional(&pairs, &grid, &cfg, &EncoderConfig::default()).unwrap();
        let mut cond_nll = 0.0;
        for (obs, seq) in &pairs {
            let m = predict(&cond.model, obs).unwrap();
            cond_nll +=
                mixture_nll(&m, &grid, std::slice::from_ref(seq), cfg.loss_reduction).unwrap();
        }
        cond_nll /= pairs.len() as f64;
        assert!(
            cond_nll < uncond_nll - 1.0,
            "conditional {cond_nll} not clearly below unconditional {uncond_nll}"
        );
    }

    #[test]
    fn ambiguous_continuations_inflate_predicted_variance() {
        // same observation, two very different continuations vs a single one
        let up: Vec<DVector<f64>> = (0..5).map(|i| dv(&[0.0, i as f64])).collect();
        let down: Vec<DVector<f64>> = (0..5).map(|i| dv(&[0.0, -(i as f64)])).collect();
        let mut both = Vec::new();
        let mut single = Vec::new();
        for _ in 0..20 {
            both.push(up.clone());
            both.push(down.clone());
            single.push(up.clone());
            single.push(up.clone());
        }
        let grid = IndexGrid::uniform(5).unwrap();
        let mut cfg = FitConfig::new(1, 3, 5);
        cfg.max_iters = 800;
        cfg.seed = 5;
        let enc_cfg = EncoderConfig::default();

        let trace_at_end = |data: &Vec<Vec<DVector<f64>>>| {
            let pairs = make_pairs(data, None, 1).unwrap();
            let fitres = fit_conditional(&pairs, &grid, &cfg, &enc_cfg).unwrap();
            let m = predict(&fitres.model, &pairs[0].0).unwrap();
            m.components()[0].at(1.0).unwrap().cov().trace()
        };
        let ambiguous = trace_at_end(&both);
        let certain = trace_at_end(&single);
        assert!(
            ambiguous > 10.0 * certain,
            "ambiguous {ambiguous} vs certain {certain}"
        );
    }

    #[test]
    fn untrained_prediction_is_deterministic() {
        let seqs = constant_dataset(4, 4, &[0.5, 0.5]);
        let pairs = make_pairs(&seqs, None, 2).unwrap();
        let grid = IndexGrid::uniform(4).unwrap();
        let mut cfg = FitConfig::new(2, 2, 4);
        cfg.max_iters = 1;
        cfg.seed = 42;
        let a = fit_conditional(&pairs, &grid, &cfg, &EncoderConfig::default()).unwrap();
        let b = fit_conditional(&pairs, &grid, &cfg, &EncoderConfig::default()).unwrap();
        let pa = predict(&a.model, &pairs[0].0).unwrap();
        let pb = predict(&b.model, &pairs[0].0).unwrap();
        assert_eq!(pa.weights(), pb.weights());
        assert_relative_eq!(
            (pa.components()[0].controls()[0].mean()
                - pb.components()[0].controls()[0].mean())
            .norm(),
            0.0
        );
    }

    #[test]
    fn predict_rejects_wrong_observation_length() {
        let seqs = constant_dataset(4, 4, &[0.5, 0.5]);
        let pairs = make_pairs(&seqs, None, 2).unwrap();
        let grid = IndexGrid::uniform(4).unwrap();
        let mut cfg = FitConfig::new(1, 2, 4);
        cfg.max_iters = 1;
        let fitres = fit_conditional(&pairs, &grid, &cfg, &EncoderConfig::default()).unwrap();
        assert!(matches!(
            predict(&fitres.model, &[0.0; 3]),
            Err(NCurveError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn trace_csv_has_header_and_one_row_per_iteration() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_trace_csv(&path, &[1.5, 0.25, 0.125]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines, vec!["iter,nll", "0,1.5", "1,0.25", "2,0.125"]);
    }

    /// Two flat bands of sequences far apart in y; cluster-based starts land
    /// one component on each band, while spread starts put both on the
    /// between-band average.
    #[test]
    fn kmeans_init_starts_components_on_separated_clusters() {
        let mut data = constant_dataset(10, 4, &[0.0, 50.0]);
        data.extend(constant_dataset(10, 4, &[0.0, -50.0]));
        for (j, seq) in data.iter_mut().enumerate() {
            for x in seq.iter_mut() {
                x[0] += (j as f64 * 0.4).sin() * 0.1;
            }
        }
        let grid = IndexGrid::uniform(4).unwrap();
        let layout = FitConfig::new(2, 3, 4).layout(2).unwrap();

        let km = init_theta(&layout, &data, &grid, 5, InitStrategy::KMeans).unwrap();
        let mut first_ys: Vec<f64> =
            (0..2).map(|k| km[layout.mean_range(k, 0).start + 1]).collect();
        first_ys.sort_by(f64::total_cmp);
        assert!((first_ys[0] + 50.0).abs() < 5.0, "low band start: {first_ys:?}");
        assert!((first_ys[1] - 50.0).abs() < 5.0, "high band start: {first_ys:?}");

        let sp = init_theta(&layout, &data, &grid, 5, InitStrategy::Spread).unwrap();
        for k in 0..2 {
            let y = sp[layout.mean_range(k, 0).start + 1];
            assert!(y.abs() < 20.0, "spread start should hug the average, got {y}");
        }
    }

    #[test]
    fn init_handles_more_components_than_sequences() {
        let data = constant_dataset(2, 4, &[1.0, -1.0]);
        let grid = IndexGrid::uniform(4).unwrap();
        let layout = FitConfig::new(5, 3, 4).layout(2).unwrap();
        for strategy in [InitStrategy::KMeans, InitStrategy::Spread] {
            let theta = init_theta(&layout, &data, &grid, 1, strategy).unwrap();
            assert_eq!(theta.len(), layout.len());
            assert!(theta.iter().all(|v| v.is_finite()));
            layout.realize(&theta).unwrap();
        }
    }
}
