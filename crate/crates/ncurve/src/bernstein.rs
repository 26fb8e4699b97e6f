//! Bernstein polynomial basis.
//!
//! b_{i,n}(t) = C(n,i)·(1-t)^(n-i)·t^i for i in 0..=n. The basis is a
//! partition of unity on [0, 1] and collapses to a single indicator at the
//! endpoints, which is what makes Bézier curves interpolate their first and
//! last control points exactly.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{NCurveError, Result};

/// Degrees at or below this use the direct product formula; larger degrees
/// switch to log space to dodge under/overflow in the power terms.
const DIRECT_DEGREE_LIMIT: usize = 30;

static BINOMIAL_CACHE: OnceLock<Mutex<HashMap<usize, Arc<[f64]>>>> = OnceLock::new();

/// Row of binomial coefficients [C(n,0), ..., C(n,n)], cached per degree.
/// Values are exact for n <= 52 and correctly rounded beyond.
pub fn binomial_row(n: usize) -> Arc<[f64]> {
    let cache = BINOMIAL_CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("binomial cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| {
            let mut row = vec![0.0; n + 1];
            row[0] = 1.0;
            for i in 0..n {
                row[i + 1] = row[i] * (n - i) as f64 / (i + 1) as f64;
            }
            row.into()
        })
        .clone()
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(NCurveError::OutOfRange {
            what: "curve parameter t",
            value: t,
            min: 0.0,
            max: 1.0,
        });
    }
    Ok(())
}

/// Single basis value b_{i,n}(t).
pub fn bernstein(i: usize, n: usize, t: f64) -> Result<f64> {
    if i > n {
        return Err(NCurveError::OutOfRange {
            what: "basis index",
            value: i as f64,
            min: 0.0,
            max: n as f64,
        });
    }
    check_t(t)?;
    if t == 0.0 {
        return Ok(if i == 0 { 1.0 } else { 0.0 });
    }
    if t == 1.0 {
        return Ok(if i == n { 1.0 } else { 0.0 });
    }
    let binom = binomial_row(n);
    Ok(if n <= DIRECT_DEGREE_LIMIT {
        binom[i] * (1.0 - t).powi((n - i) as i32) * t.powi(i as i32)
    } else {
        (binom[i].ln() + (n - i) as f64 * (1.0 - t).ln() + i as f64 * t.ln()).exp()
    })
}

/// Write all n+1 basis values at t into `out`. This is the single evaluation
/// path shared by every caller so curve evaluation and realization sampling
/// agree bit for bit.
pub fn bernstein_row_into(n: usize, t: f64, out: &mut [f64]) -> Result<()> {
    assert_eq!(out.len(), n + 1, "output slice must hold n+1 values");
    check_t(t)?;
    if t == 0.0 {
        out.fill(0.0);
        out[0] = 1.0;
        return Ok(());
    }
    if t == 1.0 {
        out.fill(0.0);
        out[n] = 1.0;
        return Ok(());
    }
    let binom = binomial_row(n);
    if n <= DIRECT_DEGREE_LIMIT {
        // one running power per side instead of powi per entry
        let s = 1.0 - t;
        let mut tp = 1.0;
        for i in 0..=n {
            out[i] = binom[i] * tp;
            tp *= t;
        }
        let mut sp = 1.0;
        for i in (0..=n).rev() {
            out[i] *= sp;
            sp *= s;
        }
    } else {
        let (lt, ls) = (t.ln(), (1.0 - t).ln());
        for i in 0..=n {
            out[i] = (binom[i].ln() + (n - i) as f64 * ls + i as f64 * lt).exp();
        }
    }
    Ok(())
}

/// All n+1 basis values at t as a fresh vector.
pub fn bernstein_row(n: usize, t: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n + 1];
    bernstein_row_into(n, t, &mut out)?;
    Ok(out)
}
