//! Kolmogorov-distance estimation for randomized and classical sums.
//!
//! The target quantity is `E_theta sup_t |P(S_n(theta) <= t | theta) -
//! P(N_theta <= t | theta)|` with `S_n(theta) = sum_j theta_j d_j` and
//! `N_theta` centered Gaussian with the exact variance
//! `V_n^2(theta) = sum_k theta_k^2 E(d_k^2)` taken from generator metadata.
//! Inner estimates are one-sample empirical-CDF suprema sized by the DKW
//! inequality; the outer loop averages over independent sphere draws.

use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::erf;
use crate::error::{Error, Result};
use crate::martingales::{Generator, GeneratorSpec};
use crate::sphere::{sample_sphere, UnitVector};
use crate::streams::{derive_stream, RngStream};

/// Raw standard normal CDF; inputs are assumed finite.
#[inline]
pub(crate) fn phi(x: f64) -> f64 {
    0.5 * erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal CDF with input validation.
pub fn normal_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite("normal_cdf input"));
    }
    Ok(phi(x))
}

/// Empirical Kolmogorov statistic `sup_t |F_m(t) - Phi(t/sigma)|`.
///
/// Both sides of every jump of the empirical CDF are evaluated; the sup of a
/// cadlag-vs-continuous difference is attained at a jump.
pub fn ks_sup(samples: &[f64], sigma: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive and finite (got {sigma})"
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("ks_sup sample"));
    }
    let mut xs = samples.to_vec();
    xs.sort_unstable_by(f64::total_cmp);
    Ok(ks_sup_sorted(&xs, sigma))
}

/// Kolmogorov statistic on an already sorted sample.
fn ks_sup_sorted(sorted: &[f64], sigma: f64) -> f64 {
    let m = sorted.len() as f64;
    let inv_sigma = 1.0 / sigma;
    let mut sup = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = phi(x * inv_sigma);
        let above = ((i + 1) as f64 / m - f).abs();
        let below = (i as f64 / m - f).abs();
        sup = sup.max(above).max(below);
    }
    sup
}

/// DKW confidence radius `sqrt(ln(2/delta) / (2 m))`.
pub fn dkw_radius(m: usize, delta: f64) -> f64 {
    ((2.0 / delta).ln() / (2.0 * m as f64)).sqrt()
}

/// A Kolmogorov-distance estimate with its sampling metadata.
#[derive(Debug, Clone, Serialize)]
pub struct DistanceEstimate {
    /// Mean Kolmogorov distance over the outer draws, in [0, 1].
    pub value: f64,
    /// Paths per theta. Zero means the per-theta distance was evaluated in
    /// closed form (no inner sampling, `dkw_radius` = 0).
    pub inner_samples: usize,
    /// Number of theta draws averaged over.
    pub outer_samples: usize,
    /// Distribution-free confidence radius of each inner estimate.
    pub dkw_radius: f64,
    /// Standard error of the mean across theta draws (0 for a single draw).
    pub stderr_outer: f64,
    pub delta: f64,
}

/// Number of fixed sub-blocks each inner sample buffer is split into. The
/// decomposition depends only on the request, never on the thread count.
const INNER_BLOCKS: usize = 64;

fn validate_inner(m: usize, delta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&delta) || delta <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "delta must lie in (0,1) (got {delta})"
        )));
    }
    if m == 0 {
        return Err(Error::EmptySample);
    }
    let radius = dkw_radius(m, delta);
    if radius > 0.5 {
        return Err(Error::UndersizedSample {
            m,
            dkw_radius: radius,
        });
    }
    Ok(radius)
}

/// Fills `samples` with `m` independent draws of `sum_j theta_j d_j` using
/// per-block derived streams, then returns the KS statistic against
/// `N(0, sigma^2)`.
fn kappa_one_theta(
    generator: &Generator,
    theta: &[f64],
    sigma: f64,
    m: usize,
    local_seed: u64,
    theta_index: u64,
) -> f64 {
    let mut samples = vec![0.0f64; m];
    let block = m.div_ceil(INNER_BLOCKS);
    samples
        .par_chunks_mut(block)
        .enumerate()
        .for_each(|(b, chunk)| {
            let mut stream =
                derive_stream(local_seed, &[1, theta_index, b as u64]).expect("depth 3");
            let mut scratch = generator.scratch();
            for slot in chunk.iter_mut() {
                *slot = generator.weighted_sum(theta, &mut stream, &mut scratch);
            }
        });
    samples.sort_unstable_by(f64::total_cmp);
    ks_sup_sorted(&samples, sigma)
}

/// Exact reference scale for the conditional Gaussian: `sqrt(sum theta_k^2
/// b_k^2)` with `b_k^2` from generator metadata. Unit-variance generators
/// must give 1 for every theta.
fn reference_sigma(generator: &Generator, theta: &UnitVector) -> f64 {
    let b_sq = generator.variance_profile();
    let v2: f64 = theta
        .coords()
        .iter()
        .zip(&b_sq)
        .map(|(t, b)| t * t * b)
        .sum();
    // Both implemented generator families are unit-variance, so N_theta
    // cannot depend on theta.
    assert!(
        (v2 - 1.0).abs() <= 1e-9,
        "unit-variance generator produced V_n^2(theta) = {v2}"
    );
    v2.sqrt()
}

/// Estimates `E_theta kappa_theta(P_{S_n(theta)}, P_{N_theta})` over `outer`
/// sphere draws with `m` fresh paths per draw.
pub fn expected_kappa_randomized(
    spec: &GeneratorSpec,
    n: usize,
    outer: usize,
    m: usize,
    delta: f64,
    stream: &mut RngStream,
) -> Result<DistanceEstimate> {
    spec.validate()?;
    if spec.n != n {
        return Err(Error::DimensionMismatch { left: spec.n, right: n });
    }
    if outer == 0 {
        return Err(Error::InvalidArgument("need at least one theta draw".into()));
    }
    let radius = validate_inner(m, delta)?;
    let generator = Generator::new(*spec)?;
    let local_seed = stream.next_u64();

    let kappas: Vec<f64> = (0..outer as u64)
        .into_par_iter()
        .map(|i| {
            let mut theta_stream = derive_stream(local_seed, &[0, i]).expect("depth 2");
            let theta = sample_sphere(n, &mut theta_stream).expect("n >= 1");
            let sigma = reference_sigma(&generator, &theta);
            kappa_one_theta(&generator, theta.coords(), sigma, m, local_seed, i)
        })
        .collect();

    let mf = outer as f64;
    let mean = kappas.iter().sum::<f64>() / mf;
    let stderr_outer = if outer > 1 {
        let var = kappas.iter().map(|k| (k - mean) * (k - mean)).sum::<f64>() / (mf - 1.0);
        (var / mf).sqrt()
    } else {
        0.0
    };
    Ok(DistanceEstimate {
        value: mean,
        inner_samples: m,
        outer_samples: outer,
        dkw_radius: radius,
        stderr_outer,
        delta,
    })
}

/// Classical Berry-Esseen comparison: the same estimator at the fixed
/// weights `theta_i = 1/sqrt(n)`.
pub fn kappa_classical(
    spec: &GeneratorSpec,
    n: usize,
    m: usize,
    delta: f64,
    stream: &mut RngStream,
) -> Result<DistanceEstimate> {
    spec.validate()?;
    if spec.n != n {
        return Err(Error::DimensionMismatch { left: spec.n, right: n });
    }
    let radius = validate_inner(m, delta)?;
    let generator = Generator::new(*spec)?;
    let local_seed = stream.next_u64();
    let theta = UnitVector::equal_weights(n)?;
    let sigma = reference_sigma(&generator, &theta);
    let value = kappa_one_theta(&generator, theta.coords(), sigma, m, local_seed, 0);
    Ok(DistanceEstimate {
        value,
        inner_samples: m,
        outer_samples: 1,
        dkw_radius: radius,
        stderr_outer: 0.0,
        delta,
    })
}
