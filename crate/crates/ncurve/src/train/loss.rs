//! Sequence likelihood and the training loss with its exact gradient.
//!
//! The loss over M sequences is
//!   (1/M) Σⱼ −logsumexp_k( ln πₖ + s·Σᵢ ln p_{tᵢ}(xᵢ | component k) )
//! where s is 1 (sum over steps) or 1/n (mean over steps, the stabilized
//! variant). `LossEngine` evaluates it and its gradient with respect to the
//! flat unconstrained parameter vector directly, without materializing a
//! mixture: per-step moments depend on theta only, so the per-(component,
//! step) precision matrices are prepared once per call and reused across the
//! whole batch.
//!
//! Gradient structure (hand-derived, checked against finite differences):
//! with responsibilities r_jk = softmax_k(ln πₖ + s·ℓ_jk) and c_jk = −r_jk·s/M,
//!   ∂loss/∂logit_m = (1/M) Σⱼ (π_m − r_jm)
//!   ∂loss/∂μ(k,t)  = Σⱼ c_jk·y_jkt            with y = Σ(k,t)⁻¹ (x − μ)
//!   ∂loss/∂Σ(k,t)  = ½(Σⱼ c_jk·y yᵀ − (Σⱼ c_jk)·Σ(k,t)⁻¹)
//! which chain through the Bernstein combination (μ(k,t) = Σᵢ bᵢ μ_ki,
//! Σ(k,t) = Σᵢ bᵢ² Σ_ki) and then through the covariance parameterization.

// The engine works on flat buffers with strided offsets (kt*d + a, ki*d*d +
// ...); explicit indices ARE the math here, and iterator adapters would bury
// the stride arithmetic the derivation above is written in.
#![allow(clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};

use crate::bernstein::bernstein_row_into;
use crate::curve::{IndexGrid, NCurve, NCurveMixture};
use crate::error::{NCurveError, Result};
use crate::gaussian::spd_cholesky;
use crate::numeric::{log_softmax, logsumexp, softmax, LN_2PI};
use crate::train::layout::{cholesky_from_params, CovMode, ParamLayout, SIGMA_FLOOR};

/// How per-step log-densities reduce into a sequence log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossReduction {
    /// Plain sum over steps (the likelihood scale used for reported NLL).
    SumOverSteps,
    /// Sum divided by the number of steps; keeps long sequences from
    /// saturating the mixture responsibilities during training.
    MeanOverSteps,
}

impl LossReduction {
    fn scale(self, n: usize) -> f64 {
        match self {
            LossReduction::SumOverSteps => 1.0,
            LossReduction::MeanOverSteps => 1.0 / n as f64,
        }
    }
}

/// Log-likelihood of one sequence under one curve: reduced sum of pointwise
/// log-densities at the grid values.
pub fn sequence_loglik(
    curve: &NCurve,
    grid: &IndexGrid,
    seq: &[DVector<f64>],
    reduction: LossReduction,
) -> Result<f64> {
    if seq.len() != grid.len() {
        return Err(NCurveError::DimensionMismatch {
            what: "sequence length vs grid",
            expected: grid.len(),
            got: seq.len(),
        });
    }
    let mut total = 0.0;
    for (&t, x) in grid.values().iter().zip(seq) {
        total += curve.log_density_at(t, x)?;
    }
    Ok(total * reduction.scale(grid.len()))
}

/// Mixture negative log-likelihood of a set of sequences:
/// (1/M) Σⱼ −logsumexp_k(ln πₖ + sequence_loglik restricted to component k).
/// Zero-weight components are skipped.
pub fn mixture_nll(
    mixture: &NCurveMixture,
    grid: &IndexGrid,
    seqs: &[Vec<DVector<f64>>],
    reduction: LossReduction,
) -> Result<f64> {
    if seqs.is_empty() {
        return Err(NCurveError::EmptyDataset);
    }
    let mut terms = Vec::with_capacity(mixture.k());
    let mut total = 0.0;
    for seq in seqs {
        terms.clear();
        for (comp, &w) in mixture.components().iter().zip(mixture.weights()) {
            if w == 0.0 {
                continue;
            }
            terms.push(w.ln() + sequence_loglik(comp, grid, seq, reduction)?);
        }
        total -= logsumexp(&terms);
    }
    Ok(total / seqs.len() as f64)
}

/// Reusable evaluator for the loss and its gradient at a fixed layout/grid.
/// All buffers are allocated up front; `nll_and_grad` performs no per-call
/// allocation beyond resizing the responsibility buffer to the batch size.
pub struct LossEngine {
    layout: ParamLayout,
    n: usize,
    /// Bernstein weights, [t * controls + i].
    rows: Vec<f64>,
    // model state per (component, step), index kt = k * n + t
    log_pi: Vec<f64>,
    pi: Vec<f64>,
    mu: Vec<f64>,        // [kt * d + a]
    prec_full: Vec<f64>, // [kt * d * d], Full mode
    prec_diag: Vec<f64>, // [kt * d], Diagonal mode
    logdet: Vec<f64>,    // [kt]
    // realized per-control state, index ki = k * controls + i
    sig_ctrl: Vec<f64>, // [ki * d + a]
    cov_ctrl: Vec<f64>, // Full: [ki * d * d]; Diagonal: [ki * d] (variances)
    // batch buffers
    resp: Vec<f64>,    // [j * K + k]
    comp_ll: Vec<f64>, // [k]
    // accumulators per (component, step)
    w_acc: Vec<f64>, // [kt]
    v_acc: Vec<f64>, // [kt * d]
    s_acc: Vec<f64>, // Full: [kt * d * d]; Diagonal: [kt * d]
    // per-component chain-rule accumulator, [i * d * d] or [i * d]
    g_acc: Vec<f64>,
    q: Vec<f64>,
    y: Vec<f64>,
}

impl LossEngine {
    pub fn new(layout: ParamLayout, grid: &IndexGrid) -> Result<Self> {
        let n = grid.len();
        let (k, c, d) = (layout.k, layout.controls, layout.d);
        let mut rows = vec![0.0; n * c];
        for (t, &tv) in grid.values().iter().enumerate() {
            bernstein_row_into(c - 1, tv, &mut rows[t * c..(t + 1) * c])?;
        }
        let full = layout.cov_mode == CovMode::Full && d > 1;
        Ok(Self {
            layout,
            n,
            rows,
            log_pi: vec![0.0; k],
            pi: vec![0.0; k],
            mu: vec![0.0; k * n * d],
            prec_full: if full { vec![0.0; k * n * d * d] } else { Vec::new() },
            prec_diag: if full { Vec::new() } else { vec![0.0; k * n * d] },
            logdet: vec![0.0; k * n],
            sig_ctrl: vec![0.0; k * c * d],
            cov_ctrl: if full { vec![0.0; k * c * d * d] } else { vec![0.0; k * c * d] },
            resp: Vec::new(),
            comp_ll: vec![0.0; k],
            w_acc: vec![0.0; k * n],
            v_acc: vec![0.0; k * n * d],
            s_acc: if full { vec![0.0; k * n * d * d] } else { vec![0.0; k * n * d] },
            g_acc: if full { vec![0.0; c * d * d] } else { vec![0.0; c * d] },
            q: vec![0.0; d],
            y: vec![0.0; d],
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn is_full(&self) -> bool {
        self.layout.cov_mode == CovMode::Full && self.layout.d > 1
    }

    /// Refresh per-step moments and precisions from theta.
    fn prepare(&mut self, theta: &[f64]) -> Result<()> {
        let (kk, c, d, n) = (self.layout.k, self.layout.controls, self.layout.d, self.n);
        let lp = log_softmax(&theta[..kk]);
        let p = softmax(&theta[..kk]);
        self.log_pi.copy_from_slice(&lp);
        self.pi.copy_from_slice(&p);
        let full = self.is_full();

        // realized control moments
        for k in 0..kk {
            for i in 0..c {
                let ki = k * c + i;
                let sig = self.layout.sigmas(theta, k, i);
                self.sig_ctrl[ki * d..(ki + 1) * d].copy_from_slice(&sig);
                if full {
                    let extra = &theta[self.layout.extra_range(k, i)];
                    let dst = &mut self.cov_ctrl[ki * d * d..(ki + 1) * d * d];
                    if d == 2 {
                        let rho = extra[0].tanh();
                        let off = rho * sig[0] * sig[1];
                        dst.copy_from_slice(&[sig[0] * sig[0], off, off, sig[1] * sig[1]]);
                    } else {
                        let l = cholesky_from_params(&sig, extra);
                        let cov = &l * l.transpose();
                        for a in 0..d {
                            for b in 0..d {
                                dst[a * d + b] = cov[(a, b)];
                            }
                        }
                    }
                } else {
                    for a in 0..d {
                        self.cov_ctrl[ki * d + a] = sig[a] * sig[a];
                    }
                }
            }
        }

        // per-step means and covariances
        self.mu.fill(0.0);
        if full {
            let mut cov_t = DMatrix::zeros(d, d);
            for k in 0..kk {
                for t in 0..n {
                    let kt = k * n + t;
                    cov_t.fill(0.0);
                    for i in 0..c {
                        let b = self.rows[t * c + i];
                        if b == 0.0 {
                            continue;
                        }
                        let b2 = b * b;
                        let mean = &theta[self.layout.mean_range(k, i)];
                        for a in 0..d {
                            self.mu[kt * d + a] += b * mean[a];
                        }
                        let src = &self.cov_ctrl[(k * c + i) * d * d..(k * c + i + 1) * d * d];
                        for a in 0..d {
                            for bb in 0..d {
                                cov_t[(a, bb)] += b2 * src[a * d + bb];
                            }
                        }
                    }
                    let chol = spd_cholesky(&cov_t)?;
                    self.logdet[kt] =
                        2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                    let inv = chol.inverse();
                    let dst = &mut self.prec_full[kt * d * d..(kt + 1) * d * d];
                    for a in 0..d {
                        for bb in 0..d {
                            dst[a * d + bb] = inv[(a, bb)];
                        }
                    }
                }
            }
        } else {
            for k in 0..kk {
                for t in 0..n {
                    let kt = k * n + t;
                    let mut logdet = 0.0;
                    for a in 0..d {
                        let mut var = 0.0;
                        let mut mean = 0.0;
                        for i in 0..c {
                            let b = self.rows[t * c + i];
                            let ki = k * c + i;
                            mean += b * theta[self.layout.mean_range(k, i).start + a];
                            var += b * b * self.cov_ctrl[ki * d + a];
                        }
                        self.mu[kt * d + a] = mean;
                        self.prec_diag[kt * d + a] = 1.0 / var;
                        logdet += var.ln();
                    }
                    self.logdet[kt] = logdet;
                }
            }
        }
        Ok(())
    }

    /// Log-density of x under component k at step t, using the prepared
    /// precisions.
    fn step_log_density(&self, k: usize, t: usize, x: &DVector<f64>) -> f64 {
        let d = self.layout.d;
        let kt = k * self.n + t;
        let mu = &self.mu[kt * d..(kt + 1) * d];
        let mut quad = 0.0;
        if self.is_full() {
            let prec = &self.prec_full[kt * d * d..(kt + 1) * d * d];
            for a in 0..d {
                let qa = x[a] - mu[a];
                for b in 0..d {
                    quad += qa * prec[a * d + b] * (x[b] - mu[b]);
                }
            }
        } else {
            for a in 0..d {
                let qa = x[a] - mu[a];
                quad += qa * qa * self.prec_diag[kt * d + a];
            }
        }
        -0.5 * (d as f64 * LN_2PI + self.logdet[kt] + quad)
    }

    /// Loss and gradient over `batch` (indices into `data`). The gradient is
    /// written into `grad` (overwritten, not accumulated). Reductions run in
    /// batch order, so results are bit-stable for a fixed batch.
    pub fn nll_and_grad(
        &mut self,
        theta: &[f64],
        data: &[Vec<DVector<f64>>],
        batch: &[usize],
        reduction: LossReduction,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.layout.check_theta(theta)?;
        if batch.is_empty() {
            return Err(NCurveError::EmptyDataset);
        }
        if grad.len() != self.layout.len() {
            return Err(NCurveError::ShapeMismatch(format!(
                "gradient buffer has {} entries, expected {}",
                grad.len(),
                self.layout.len()
            )));
        }
        let (kk, c, d, n) = (self.layout.k, self.layout.controls, self.layout.d, self.n);
        for &j in batch {
            let seq = &data[j];
            if seq.len() != n {
                return Err(NCurveError::DimensionMismatch {
                    what: "sequence length vs grid",
                    expected: n,
                    got: seq.len(),
                });
            }
            if seq.iter().any(|x| x.len() != d) {
                return Err(NCurveError::DimensionMismatch {
                    what: "sample dimension",
                    expected: d,
                    got: seq.iter().find(|x| x.len() != d).unwrap().len(),
                });
            }
        }

        self.prepare(theta)?;
        let m = batch.len() as f64;
        let scale = reduction.scale(n);
        let full = self.is_full();

        grad.fill(0.0);
        self.w_acc.fill(0.0);
        self.v_acc.fill(0.0);
        self.s_acc.fill(0.0);
        self.resp.resize(batch.len() * kk, 0.0);

        // pass 1: per-sequence log-likelihoods, responsibilities, logit grads
        let mut loss = 0.0;
        for (jj, &j) in batch.iter().enumerate() {
            let seq = &data[j];
            for k in 0..kk {
                let mut ll = 0.0;
                for (t, x) in seq.iter().enumerate() {
                    ll += self.step_log_density(k, t, x);
                }
                self.comp_ll[k] = self.log_pi[k] + scale * ll;
            }
            let lse = logsumexp(&self.comp_ll);
            if !lse.is_finite() {
                return Err(self.diagnose_nonfinite(j, seq));
            }
            loss -= lse / m;
            for k in 0..kk {
                let r = (self.comp_ll[k] - lse).exp();
                self.resp[jj * kk + k] = r;
                grad[k] += (self.pi[k] - r) / m;
            }
        }

        // pass 2: accumulate per-(component, step) sufficient statistics
        for (jj, &j) in batch.iter().enumerate() {
            let seq = &data[j];
            for k in 0..kk {
                let r = self.resp[jj * kk + k];
                if r == 0.0 {
                    continue;
                }
                let cjk = -r * scale / m;
                for (t, x) in seq.iter().enumerate() {
                    let kt = k * n + t;
                    let mu = &self.mu[kt * d..(kt + 1) * d];
                    for a in 0..d {
                        self.q[a] = x[a] - mu[a];
                    }
                    if full {
                        let prec = &self.prec_full[kt * d * d..(kt + 1) * d * d];
                        for a in 0..d {
                            let mut ya = 0.0;
                            for b in 0..d {
                                ya += prec[a * d + b] * self.q[b];
                            }
                            self.y[a] = ya;
                        }
                        let s = &mut self.s_acc[kt * d * d..(kt + 1) * d * d];
                        for a in 0..d {
                            let cya = cjk * self.y[a];
                            for b in 0..d {
                                s[a * d + b] += cya * self.y[b];
                            }
                        }
                    } else {
                        for a in 0..d {
                            self.y[a] = self.prec_diag[kt * d + a] * self.q[a];
                            self.s_acc[kt * d + a] += cjk * self.y[a] * self.y[a];
                        }
                    }
                    self.w_acc[kt] += cjk;
                    for a in 0..d {
                        self.v_acc[kt * d + a] += cjk * self.y[a];
                    }
                }
            }
        }

        // pass 3: chain through Bernstein combination and parameterization
        for k in 0..kk {
            self.g_acc.fill(0.0);
            for t in 0..n {
                let kt = k * n + t;
                for i in 0..c {
                    let b = self.rows[t * c + i];
                    if b == 0.0 {
                        continue;
                    }
                    let b2 = b * b;
                    let mean_start = self.layout.mean_range(k, i).start;
                    for a in 0..d {
                        grad[mean_start + a] += b * self.v_acc[kt * d + a];
                    }
                    if full {
                        let s = &self.s_acc[kt * d * d..(kt + 1) * d * d];
                        let prec = &self.prec_full[kt * d * d..(kt + 1) * d * d];
                        let w = self.w_acc[kt];
                        let g = &mut self.g_acc[i * d * d..(i + 1) * d * d];
                        for e in 0..d * d {
                            g[e] += b2 * 0.5 * (s[e] - w * prec[e]);
                        }
                    } else {
                        let w = self.w_acc[kt];
                        let g = &mut self.g_acc[i * d..(i + 1) * d];
                        for a in 0..d {
                            g[a] += b2
                                * 0.5
                                * (self.s_acc[kt * d + a] - w * self.prec_diag[kt * d + a]);
                        }
                    }
                }
            }
            // parameterization chain rule per control point
            for i in 0..c {
                let ki = k * c + i;
                let sig = &self.sig_ctrl[ki * d..(ki + 1) * d];
                let ls_start = self.layout.log_sigma_range(k, i).start;
                if !full {
                    for a in 0..d {
                        let g = self.g_acc[i * d + a];
                        grad[ls_start + a] = 2.0 * g * sig[a] * (sig[a] - SIGMA_FLOOR);
                    }
                } else if d == 2 {
                    let g = &self.g_acc[i * 4..(i + 1) * 4];
                    let raw = theta[self.layout.extra_range(k, i).start];
                    let rho = raw.tanh();
                    let (g00, g01, g11) = (g[0], g[1], g[3]);
                    grad[ls_start] =
                        (2.0 * sig[0] * g00 + 2.0 * rho * sig[1] * g01) * (sig[0] - SIGMA_FLOOR);
                    grad[ls_start + 1] =
                        (2.0 * sig[1] * g11 + 2.0 * rho * sig[0] * g01) * (sig[1] - SIGMA_FLOOR);
                    grad[self.layout.extra_range(k, i).start] =
                        2.0 * sig[0] * sig[1] * g01 * (1.0 - rho * rho);
                } else {
                    let extra = &theta[self.layout.extra_range(k, i)];
                    let l = cholesky_from_params(sig, extra);
                    let g = &self.g_acc[i * d * d..(i + 1) * d * d];
                    // dL/dfactor = 2·G·L restricted to the lower triangle
                    let mut idx = self.layout.extra_range(k, i).start;
                    for a in 0..d {
                        for b in 0..=a {
                            let mut gl = 0.0;
                            for e in 0..d {
                                gl += 2.0 * g[a * d + e] * l[(e, b)];
                            }
                            if a == b {
                                grad[ls_start + a] = gl * (sig[a] - SIGMA_FLOOR);
                            } else {
                                grad[idx] = gl;
                                idx += 1;
                            }
                        }
                    }
                }
            }
        }
        Ok(loss)
    }

    fn diagnose_nonfinite(&self, j: usize, seq: &[DVector<f64>]) -> NCurveError {
        for k in 0..self.layout.k {
            for (t, x) in seq.iter().enumerate() {
                let ld = self.step_log_density(k, t, x);
                if !ld.is_finite() {
                    return NCurveError::NonFiniteLoss {
                        iteration: 0,
                        detail: format!(
                            "sequence {j}: non-finite log-density at component {k}, step {t}"
                        ),
                    };
                }
            }
        }
        NCurveError::NonFiniteLoss {
            iteration: 0,
            detail: format!("sequence {j}: non-finite combined log-likelihood"),
        }
    }
}

/// Loss and exact gradient over a full dataset; convenience wrapper that
/// builds a fresh engine.
pub fn gradient(
    layout: &ParamLayout,
    theta: &[f64],
    grid: &IndexGrid,
    data: &[Vec<DVector<f64>>],
    reduction: LossReduction,
) -> Result<(f64, Vec<f64>)> {
    let mut engine = LossEngine::new(*layout, grid)?;
    let batch: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; layout.len()];
    let loss = engine.nll_and_grad(theta, data, &batch, reduction, &mut grad)?;
    Ok((loss, grad))
}
