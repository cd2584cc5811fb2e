//! Estimation of the five bound quantities entering the rate theorems and
//! evaluation of the theorem upper bounds themselves.
//!
//! The quantities, for a row d_1..d_n with `E d_k^2 = 1`:
//!
//! * `alpha_n  = sup_k E(d_k^4)`
//! * `beta_n   = E[ ((1/n) sum_j E_{j-1}(d_j^3)^2)^{1/2} ]`
//! * `gamma_sum_n  = sum_j || E_{j-1}(d_j^2) - E(d_j^2) ||_1` (and its /n variant)
//! * `sigma4sq_n   = (1/n) Var(sum_k d_k^2)`
//! * `c2sq_n       = (1/n) sum_{k,l} |Cov(d_k^2, d_l^2)|`
//!
//! Conditional moments come from the generator's exact per-step oracles, so
//! beta and gamma are Monte Carlo averages of exactly computed path
//! functionals, not nested estimates.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::martingales::{Generator, GeneratorKind, GeneratorSpec, MdsPath};
use crate::streams::{derive_stream, RngStream};

/// Point estimates (with standard errors where Monte Carlo) of the bound
/// quantities for one generator row length.
#[derive(Debug, Clone, Serialize)]
pub struct BoundQuantities {
    pub alpha_n: f64,
    pub alpha_stderr: f64,
    pub beta_n: f64,
    pub beta_stderr: f64,
    /// Plain sum over j of || E_{j-1}(d_j^2) - 1 ||_1 (the definitional
    /// normalization).
    pub gamma_sum_n: f64,
    pub gamma_sum_stderr: f64,
    /// gamma_sum_n / n (the normalization used in the ARCH computations).
    pub gamma_mean_n: f64,
    pub gamma_mean_stderr: f64,
    pub sigma4sq_n: f64,
    pub sigma4sq_stderr: f64,
    pub c2sq_n: f64,
    /// Batch-based spread of the c2 estimate; 0 when too few replications
    /// to form batches.
    pub c2sq_stderr: f64,
    /// Set when reps < n: the n x n covariance table is then noisy.
    pub c2sq_noisy: bool,
    /// Closed uniform bound on alpha_n for ARCH rows (sup |d| <= 2 gives 16).
    pub arch_alpha_bound: Option<f64>,
    pub reps: usize,
}

const BATCHES: usize = 8;

/// Per-block running sums; merged in block order so the result is
/// independent of the thread count.
struct Accumulator {
    n: usize,
    count: usize,
    /// Per-index sums of d_k^4 and d_k^8.
    sum_d4: Vec<f64>,
    sum_d8: Vec<f64>,
    /// Per-path sqrt((1/n) sum cond_m3^2): sum and sum of squares.
    beta_sum: f64,
    beta_sum_sq: f64,
    /// Per-path sum_j |cond_var_j - 1|.
    gamma_sum: f64,
    gamma_sum_sq: f64,
    /// Raw moments of q = sum_k d_k^2 - n (shifted by the exact mean).
    q1: f64,
    q2: f64,
    q3: f64,
    q4: f64,
    /// Marginal sums of x_k = d_k^2 - 1 and upper-triangle cross sums
    /// x_k x_l for l >= k.
    x_sum: Vec<f64>,
    cross: Vec<f64>,
}

impl Accumulator {
    fn new(n: usize) -> Self {
        Self {
            n,
            count: 0,
            sum_d4: vec![0.0; n],
            sum_d8: vec![0.0; n],
            beta_sum: 0.0,
            beta_sum_sq: 0.0,
            gamma_sum: 0.0,
            gamma_sum_sq: 0.0,
            q1: 0.0,
            q2: 0.0,
            q3: 0.0,
            q4: 0.0,
            x_sum: vec![0.0; n],
            cross: vec![0.0; n * (n + 1) / 2],
        }
    }

    fn add_path(&mut self, path: &MdsPath, x: &mut Vec<f64>) {
        let n = self.n;
        self.count += 1;
        x.clear();
        let mut q = 0.0;
        let mut m3_sq = 0.0;
        let mut gamma = 0.0;
        for j in 0..n {
            let d = path.d[j];
            let d2 = d * d;
            let d4 = d2 * d2;
            self.sum_d4[j] += d4;
            self.sum_d8[j] += d4 * d4;
            q += d2 - 1.0;
            m3_sq += path.cond_m3[j] * path.cond_m3[j];
            gamma += (path.cond_var[j] - 1.0).abs();
            x.push(d2 - 1.0);
        }
        let beta_val = (m3_sq / n as f64).sqrt();
        self.beta_sum += beta_val;
        self.beta_sum_sq += beta_val * beta_val;
        self.gamma_sum += gamma;
        self.gamma_sum_sq += gamma * gamma;
        let q2 = q * q;
        self.q1 += q;
        self.q2 += q2;
        self.q3 += q2 * q;
        self.q4 += q2 * q2;
        let mut off = 0usize;
        for k in 0..n {
            let xk = x[k];
            self.x_sum[k] += xk;
            let row = &mut self.cross[off..off + (n - k)];
            let tail = &x[k..];
            for (r, &xl) in row.iter_mut().zip(tail) {
                *r += xk * xl;
            }
            off += n - k;
        }
    }

    fn merge(&mut self, other: &Accumulator) {
        self.count += other.count;
        for (a, b) in self.sum_d4.iter_mut().zip(&other.sum_d4) {
            *a += b;
        }
        for (a, b) in self.sum_d8.iter_mut().zip(&other.sum_d8) {
            *a += b;
        }
        self.beta_sum += other.beta_sum;
        self.beta_sum_sq += other.beta_sum_sq;
        self.gamma_sum += other.gamma_sum;
        self.gamma_sum_sq += other.gamma_sum_sq;
        self.q1 += other.q1;
        self.q2 += other.q2;
        self.q3 += other.q3;
        self.q4 += other.q4;
        for (a, b) in self.x_sum.iter_mut().zip(&other.x_sum) {
            *a += b;
        }
        for (a, b) in self.cross.iter_mut().zip(&other.cross) {
            *a += b;
        }
    }

    /// (1/n) sum_{k,l} |sample cov(d_k^2, d_l^2)| from the pooled sums.
    fn c2sq(&self) -> f64 {
        let n = self.n;
        let reps = self.count as f64;
        if self.count < 2 {
            return 0.0;
        }
        let mut total = 0.0;
        let mut off = 0usize;
        for k in 0..n {
            for l in k..n {
                let cov = (self.cross[off + (l - k)] - self.x_sum[k] * self.x_sum[l] / reps)
                    / (reps - 1.0);
                // Off-diagonal entries appear twice in the double sum.
                total += if l == k { cov.abs() } else { 2.0 * cov.abs() };
            }
            off += n - k;
        }
        total / n as f64
    }
}

/// Estimates all bound quantities for `spec` from `reps` independent paths.
pub fn estimate_quantities(
    spec: &GeneratorSpec,
    reps: usize,
    stream: &mut RngStream,
) -> Result<BoundQuantities> {
    spec.validate()?;
    if reps < 2 {
        return Err(Error::InvalidArgument(format!(
            "reps = {reps}, need at least 2 for variance estimates"
        )));
    }
    let generator = Generator::new(*spec)?;
    let n = spec.n;
    let local_seed = stream.next_u64();

    // Fixed decomposition into blocks (a function of reps only), so results
    // do not depend on the number of worker threads.
    let block_size = (reps / 32).max(256);
    let n_blocks = reps.div_ceil(block_size);
    let blocks: Vec<Accumulator> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = Accumulator::new(n);
            let mut stream = derive_stream(local_seed, &[b as u64]).expect("depth 1");
            let lo = b * block_size;
            let hi = ((b + 1) * block_size).min(reps);
            let mut path = MdsPath::default();
            let mut x = Vec::with_capacity(n);
            for _ in lo..hi {
                generator.sample_path_into(&mut stream, &mut path);
                acc.add_path(&path, &mut x);
            }
            acc
        })
        .collect();

    let mut total = Accumulator::new(n);
    for acc in &blocks {
        total.merge(acc);
    }

    let m = reps as f64;

    // alpha: max over k of the per-index sample fourth moment.
    let mut alpha_n = f64::NEG_INFINITY;
    let mut alpha_stderr = 0.0;
    for k in 0..n {
        let mean = total.sum_d4[k] / m;
        if mean > alpha_n {
            alpha_n = mean;
            let var = (total.sum_d8[k] / m - mean * mean).max(0.0);
            alpha_stderr = (var / m).sqrt();
        }
    }

    let beta_n = total.beta_sum / m;
    let beta_var = (total.beta_sum_sq / m - beta_n * beta_n).max(0.0);
    let beta_stderr = (beta_var / m).sqrt();

    let gamma_sum_n = total.gamma_sum / m;
    let gamma_var = (total.gamma_sum_sq / m - gamma_sum_n * gamma_sum_n).max(0.0);
    let gamma_sum_stderr = (gamma_var / m).sqrt();

    // sigma4^2 = Var(sum d^2)/n from the shifted variable q = sum d^2 - n.
    let r1 = total.q1 / m;
    let r2 = total.q2 / m;
    let r3 = total.q3 / m;
    let r4 = total.q4 / m;
    let var_q = ((r2 - r1 * r1) * m / (m - 1.0)).max(0.0);
    let sigma4sq_n = var_q / n as f64;
    // Central fourth moment of q, for the stderr of the variance estimate.
    let mu2 = (r2 - r1 * r1).max(0.0);
    let mu4 = (r4 - 4.0 * r1 * r3 + 6.0 * r1 * r1 * r2 - 3.0 * r1.powi(4)).max(0.0);
    let var_of_var = ((mu4 - mu2 * mu2) / m).max(0.0);
    let sigma4sq_stderr = var_of_var.sqrt() / n as f64;

    let c2sq_n = total.c2sq();
    // Spread of per-batch estimates of the same statistic; a rough scale
    // for how settled the covariance table is.
    let c2sq_stderr = if n_blocks >= BATCHES && reps >= 2 * BATCHES {
        let per_batch = n_blocks.div_ceil(BATCHES);
        let mut vals = Vec::with_capacity(BATCHES);
        for g in 0..BATCHES {
            let mut acc = Accumulator::new(n);
            for block in blocks.iter().skip(g * per_batch).take(per_batch) {
                acc.merge(block);
            }
            if acc.count >= 2 {
                vals.push(acc.c2sq());
            }
        }
        let k = vals.len() as f64;
        if vals.len() >= 2 {
            let mean = vals.iter().sum::<f64>() / k;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
            (var / k).sqrt()
        } else {
            0.0
        }
    } else {
        0.0
    };

    let arch_alpha_bound = match spec.kind {
        GeneratorKind::Arch { .. } => Some(16.0),
        GeneratorKind::Iid { .. } => None,
    };

    Ok(BoundQuantities {
        alpha_n,
        alpha_stderr,
        beta_n,
        beta_stderr,
        gamma_sum_n,
        gamma_sum_stderr,
        gamma_mean_n: gamma_sum_n / n as f64,
        gamma_mean_stderr: gamma_sum_stderr / n as f64,
        sigma4sq_n,
        sigma4sq_stderr,
        c2sq_n,
        c2sq_stderr,
        c2sq_noisy: reps < n,
        arch_alpha_bound,
        reps,
    })
}

/// Which rate theorem to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TheoremBound {
    /// `(1 + v_n)/n` with
    /// `v_n = gamma log n + beta (log n)^{3/2} + alpha (log n)^2 + sigma4^2 log n`.
    FastRate,
    /// `(1 + v'_n)/sqrt(n)` with
    /// `v'_n = (c_2 sigma4^2) log n + beta (log n)^{3/2} + alpha (log n)^2`.
    RootRate,
}

/// Which gamma normalization feeds the fast-rate bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaNormalization {
    /// The definitional plain sum (default).
    #[default]
    Sum,
    /// The per-index average, as used in the ARCH computations.
    Mean,
}

/// How the `c_2` and `sigma_4^2` terms combine in the root-rate bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RootRateCombine {
    /// `c_2(n) * sigma_4^2(n)`, verbatim reading (default).
    #[default]
    Product,
    /// `c_2(n) + sigma_4^2(n)`, the alternative reading.
    Sum,
}

/// Switches for [`theorem_bound`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundOptions {
    pub gamma: GammaNormalization,
    pub combine: RootRateCombine,
}

/// Evaluates the bracketed theorem bound (universal constants set to 1).
pub fn theorem_bound(
    q: &BoundQuantities,
    n: usize,
    which: TheoremBound,
    opts: BoundOptions,
) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "theorem bounds need n >= 2 (got {n})"
        )));
    }
    let ln = (n as f64).ln();
    match which {
        TheoremBound::FastRate => {
            let gamma = match opts.gamma {
                GammaNormalization::Sum => q.gamma_sum_n,
                GammaNormalization::Mean => q.gamma_mean_n,
            };
            let v_n =
                gamma * ln + q.beta_n * ln.powf(1.5) + q.alpha_n * ln * ln + q.sigma4sq_n * ln;
            Ok((1.0 + v_n) / n as f64)
        }
        TheoremBound::RootRate => {
            let c2 = q.c2sq_n.max(0.0).sqrt();
            let head = match opts.combine {
                RootRateCombine::Product => c2 * q.sigma4sq_n,
                RootRateCombine::Sum => c2 + q.sigma4sq_n,
            };
            let v_n = head * ln + q.beta_n * ln.powf(1.5) + q.alpha_n * ln * ln;
            Ok((1.0 + v_n) / (n as f64).sqrt())
        }
    }
}
