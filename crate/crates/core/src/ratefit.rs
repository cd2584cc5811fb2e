//! Decay-exponent extraction from (n, value) experiment series.
//!
//! The model is `value = C (log n)^q n^{-p}` with the log-power q fixed by
//! the caller: at desk-scale n, `ln ln n` varies too little to identify p
//! and q jointly. Fitting is (weighted) least squares of
//! `ln(value) - q ln ln n` against `-ln n`.

use serde::Serialize;

use crate::error::{Error, Result};

/// One experiment point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatePoint {
    pub n: usize,
    pub value: f64,
    pub stderr: f64,
}

/// A positive-valued series over strictly increasing n.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateSeries {
    pub points: Vec<RatePoint>,
    pub label: String,
}

impl RateSeries {
    pub fn new(points: Vec<RatePoint>, label: impl Into<String>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "rate series needs at least 3 points (got {})",
                points.len()
            )));
        }
        for pair in points.windows(2) {
            if pair[1].n <= pair[0].n {
                return Err(Error::InvalidArgument(
                    "rate series n values must be strictly increasing".into(),
                ));
            }
        }
        for p in &points {
            if p.n < 2 {
                return Err(Error::InvalidArgument(
                    "rate series needs n >= 2 (log log n must be defined)".into(),
                ));
            }
            if !(p.value > 0.0) || !p.value.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "rate series values must be positive and finite (got {} at n = {})",
                    p.value, p.n
                )));
            }
            if !(p.stderr >= 0.0) || !p.stderr.is_finite() {
                return Err(Error::InvalidArgument(
                    "rate series stderrs must be nonnegative".into(),
                ));
            }
        }
        Ok(Self {
            points,
            label: label.into(),
        })
    }
}

/// Fitted decay model `value = C (log n)^q n^{-p}`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RateFit {
    /// Exponent of n.
    pub p: f64,
    /// The fixed log-power used in the fit.
    pub q: f64,
    pub log_c: f64,
    pub r_squared: f64,
    pub p_stderr: f64,
}

/// Fits the decay exponent with `q` fixed. Inverse-variance weights on the
/// log scale (delta method: se(ln v) = stderr/value) when every stderr is
/// positive, unweighted otherwise.
pub fn fit_rate(series: &RateSeries, q: f64) -> Result<RateFit> {
    if !q.is_finite() {
        return Err(Error::NonFinite("log-power q"));
    }
    let k = series.points.len();
    // Validity re-check: series may have been built directly.
    let probe = RateSeries::new(series.points.clone(), series.label.clone())?;
    drop(probe);

    let weighted = series.points.iter().all(|p| p.stderr > 0.0);
    let mut xs = Vec::with_capacity(k);
    let mut ys = Vec::with_capacity(k);
    let mut ws = Vec::with_capacity(k);
    for p in &series.points {
        let ln_n = (p.n as f64).ln();
        xs.push(-ln_n);
        ys.push(p.value.ln() - q * ln_n.ln());
        let w = if weighted {
            let se_log = p.stderr / p.value;
            1.0 / (se_log * se_log)
        } else {
            1.0
        };
        ws.push(w);
    }

    let w_total: f64 = ws.iter().sum();
    let x_bar: f64 = xs.iter().zip(&ws).map(|(x, w)| x * w).sum::<f64>() / w_total;
    let y_bar: f64 = ys.iter().zip(&ws).map(|(y, w)| y * w).sum::<f64>() / w_total;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..k {
        sxx += ws[i] * (xs[i] - x_bar) * (xs[i] - x_bar);
        sxy += ws[i] * (xs[i] - x_bar) * (ys[i] - y_bar);
    }
    if sxx <= 0.0 {
        return Err(Error::InvalidArgument(
            "degenerate design: all n equal after weighting".into(),
        ));
    }
    let p_hat = sxy / sxx;
    let log_c = y_bar - p_hat * x_bar;

    let mut rss = 0.0;
    let mut tss = 0.0;
    for i in 0..k {
        let fitted = log_c + p_hat * xs[i];
        rss += ws[i] * (ys[i] - fitted) * (ys[i] - fitted);
        tss += ws[i] * (ys[i] - y_bar) * (ys[i] - y_bar);
    }
    let r_squared = if tss > 0.0 {
        (1.0 - rss / tss).clamp(0.0, 1.0)
    } else if rss <= 1e-20 {
        1.0
    } else {
        0.0
    };
    let p_stderr = if weighted {
        // Known-variance generalized least squares: Var(p) = 1/Sxx.
        (1.0 / sxx).sqrt()
    } else {
        // Residual-based ordinary least squares.
        let dof = (k as f64 - 2.0).max(1.0);
        (rss / dof / sxx).sqrt()
    };
    Ok(RateFit {
        p: p_hat,
        q,
        log_c,
        r_squared,
        p_stderr,
    })
}

/// Outcome of comparing two fitted exponents.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RateSeparation {
    /// `p_a - p_b`.
    pub gap: f64,
    pub combined_stderr: f64,
    /// True when the gap exceeds 3 combined standard errors.
    pub separated: bool,
}

/// Reports whether two decay exponents are statistically separated.
pub fn compare_rates(a: &RateFit, b: &RateFit) -> RateSeparation {
    let gap = a.p - b.p;
    let combined_stderr = (a.p_stderr * a.p_stderr + b.p_stderr * b.p_stderr).sqrt();
    RateSeparation {
        gap,
        combined_stderr,
        separated: gap.abs() > 3.0 * combined_stderr,
    }
}
