//! Characteristic-function diagnostics.
//!
//! Everything here revolves around the conditional CF product
//! `f_{n,theta}(t) = prod_j E(e^{i t theta_j d_j} | F_{j-1, theta})` and the
//! functionals `T_2^2 = sum theta_j^2 E_{j-1}(d_j^2)`,
//! `T_3^3 = sum theta_j^3 E_{j-1}(d_j^3)`,
//! `T_4^4 = sum theta_j^4 E_{j-1}(d_j^4)`: the truncation events where the
//! running product stays above a Gaussian-reference threshold, the deviation
//! bound `B_n(theta, t)`, a Taylor-lemma ratio check for independent
//! summands, and the smoothing integral of the CF gap.
//!
//! The paper's universal constants are unspecified, so every inequality is
//! checked as a bounded-ratio test against a configurable threshold.

use num_complex::Complex64;
use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::martingales::{Generator, GeneratorSpec, IidDist, MdsPath};
use crate::sphere::{sample_sphere, UnitVector};
use crate::streams::{derive_stream, RngStream};

/// Default bounded-ratio pass threshold for constant-free inequality checks.
pub const DEFAULT_RATIO_THRESHOLD: f64 = 20.0;

/// The conditional moment functionals of one (theta, path) pair. For
/// independent summands these reduce to the unconditional R-functionals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TFunctionals {
    /// sum theta_j^2 E_{j-1}(d_j^2).
    pub t2sq: f64,
    /// sum theta_j^3 E_{j-1}(d_j^3).
    pub t3cube: f64,
    /// sum theta_j^4 E_{j-1}(d_j^4).
    pub t4quad: f64,
}

/// Exact weighted sums of the path's conditional-moment oracles.
pub fn t_functionals(path: &MdsPath, theta: &UnitVector) -> Result<TFunctionals> {
    if path.len() != theta.dim() {
        return Err(Error::DimensionMismatch {
            left: path.len(),
            right: theta.dim(),
        });
    }
    let mut t2sq = 0.0;
    let mut t3cube = 0.0;
    let mut t4quad = 0.0;
    for (j, &w) in theta.coords().iter().enumerate() {
        let w2 = w * w;
        t2sq += w2 * path.cond_var[j];
        t3cube += w2 * w * path.cond_m3[j];
        t4quad += w2 * w2 * path.cond_m4[j];
    }
    Ok(TFunctionals {
        t2sq,
        t3cube,
        t4quad,
    })
}

/// What a [`CfCurve`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CfKind {
    Empirical,
    ConditionalProduct,
    GaussianReference,
}

/// A characteristic-function curve sampled on a grid.
#[derive(Debug, Clone)]
pub struct CfCurve {
    pub t_grid: Vec<f64>,
    pub values: Vec<Complex64>,
    pub kind: CfKind,
}

fn check_pair(gen: &Generator, path: &MdsPath, theta: &UnitVector) -> Result<()> {
    if path.len() != theta.dim() {
        return Err(Error::DimensionMismatch {
            left: path.len(),
            right: theta.dim(),
        });
    }
    if gen.n() != path.len() {
        return Err(Error::DimensionMismatch {
            left: gen.n(),
            right: path.len(),
        });
    }
    Ok(())
}

/// The conditional CF product along a realized path, evaluated from the
/// generator's closed-form one-step conditional CFs. Real-valued for the
/// symmetric one-step laws implemented here.
pub fn conditional_cf_product(
    gen: &Generator,
    path: &MdsPath,
    theta: &UnitVector,
    t_grid: &[f64],
) -> Result<CfCurve> {
    check_pair(gen, path, theta)?;
    let mut values = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let mut product = 1.0f64;
        for (j, &w) in theta.coords().iter().enumerate() {
            product *= gen.step_cf(j + 1, path, t * w);
        }
        values.push(Complex64::new(product, 0.0));
    }
    Ok(CfCurve {
        t_grid: t_grid.to_vec(),
        values,
        kind: CfKind::ConditionalProduct,
    })
}

/// Truncation events and the T-functionals of the truncated sequence.
#[derive(Debug, Clone)]
pub struct TruncationReport {
    /// Membership of A_j for j = 1..n; nonincreasing in j.
    pub flags: Vec<bool>,
    pub original: TFunctionals,
    /// Same weighted sums restricted to flagged steps; equals `original`
    /// when every flag is on.
    pub truncated: TFunctionals,
}

/// Evaluates the truncation sets `A_j = {|f_{j,theta}(t)| > e^{-t^2 V^2/2} /
/// (2 sqrt(e))}` along a path, forcing monotonicity once the running
/// product falls below the threshold.
pub fn truncation_flags(
    gen: &Generator,
    path: &MdsPath,
    theta: &UnitVector,
    t: f64,
) -> Result<TruncationReport> {
    check_pair(gen, path, theta)?;
    let v2: f64 = theta
        .coords()
        .iter()
        .zip(gen.variance_profile())
        .map(|(w, b)| w * w * b)
        .sum();
    let threshold = (-0.5 * t * t * v2).exp() / (2.0 * std::f64::consts::E.sqrt());
    let n = path.len();
    let mut flags = vec![false; n];
    let mut running = 1.0f64;
    let mut alive = true;
    let mut truncated = TFunctionals {
        t2sq: 0.0,
        t3cube: 0.0,
        t4quad: 0.0,
    };
    for (j, &w) in theta.coords().iter().enumerate() {
        if alive {
            running *= gen.step_cf(j + 1, path, t * w);
            alive = running.abs() > threshold;
        }
        flags[j] = alive;
        if alive {
            let w2 = w * w;
            truncated.t2sq += w2 * path.cond_var[j];
            truncated.t3cube += w2 * w * path.cond_m3[j];
            truncated.t4quad += w2 * w2 * path.cond_m4[j];
        }
    }
    let original = t_functionals(path, theta)?;
    Ok(TruncationReport {
        flags,
        original,
        truncated,
    })
}

/// A Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// Monte-Carlo estimate of the CF deviation bound
/// `B_n(theta, t) = |t|^3 E|T_3^3| + t^4 E(T_4^4) +
///  t^2 E|sum theta_k^2 (E_{k-1}(d_k^2) - 1)|` at fixed theta.
pub fn bn_bound(
    gen: &Generator,
    theta: &UnitVector,
    t: f64,
    reps: usize,
    stream: &mut RngStream,
) -> Result<McEstimate> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be >= 1".into()));
    }
    if gen.n() != theta.dim() {
        return Err(Error::DimensionMismatch {
            left: gen.n(),
            right: theta.dim(),
        });
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut path = MdsPath::default();
    for _ in 0..reps {
        gen.sample_path_into(stream, &mut path);
        let tf = t_functionals(&path, theta)?;
        let dev: f64 = theta
            .coords()
            .iter()
            .zip(&path.cond_var)
            .map(|(w, cv)| w * w * (cv - 1.0))
            .sum();
        let b = t.abs().powi(3) * tf.t3cube.abs() + t.powi(4) * tf.t4quad + t * t * dev.abs();
        sum += b;
        sum_sq += b * b;
    }
    let m = reps as f64;
    let mean = sum / m;
    let var = (sum_sq / m - mean * mean).max(0.0);
    Ok(McEstimate {
        value: mean,
        stderr: (var / m).sqrt(),
    })
}

/// Monte-Carlo estimate of `|E_{|theta}(e^{i t S_n(theta)}) -
/// e^{-t^2 V^2/2}|` at fixed theta.
pub fn cf_gap(
    gen: &Generator,
    theta: &UnitVector,
    t: f64,
    m: usize,
    stream: &mut RngStream,
) -> Result<McEstimate> {
    if m == 0 {
        return Err(Error::EmptySample);
    }
    if gen.n() != theta.dim() {
        return Err(Error::DimensionMismatch {
            left: gen.n(),
            right: theta.dim(),
        });
    }
    let v2: f64 = theta
        .coords()
        .iter()
        .zip(gen.variance_profile())
        .map(|(w, b)| w * w * b)
        .sum();
    let mut scratch = gen.scratch();
    let (mut sum_re, mut sum_im, mut sum_re2, mut sum_im2) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..m {
        let s = gen.weighted_sum(theta.coords(), stream, &mut scratch);
        let (sin, cos) = (t * s).sin_cos();
        sum_re += cos;
        sum_im += sin;
        sum_re2 += cos * cos;
        sum_im2 += sin * sin;
    }
    let mf = m as f64;
    let mean = Complex64::new(sum_re / mf, sum_im / mf);
    let reference = (-0.5 * t * t * v2).exp();
    let gap = (mean - Complex64::new(reference, 0.0)).norm();
    let var_re = (sum_re2 / mf - mean.re * mean.re).max(0.0);
    let var_im = (sum_im2 / mf - mean.im * mean.im).max(0.0);
    Ok(McEstimate {
        value: gap,
        stderr: ((var_re + var_im) / mf).sqrt(),
    })
}

/// One grid point of a CF diagnostic curve at fixed theta.
#[derive(Debug, Clone, Serialize)]
pub struct CfDiagRow {
    pub t: f64,
    pub cf_gap: f64,
    pub cf_gap_stderr: f64,
    pub bn_bound: f64,
    pub bn_stderr: f64,
    /// `cf_gap / bn_bound`; absent at t = 0 where both sides vanish.
    pub ratio: Option<f64>,
    /// Fraction of paths whose final truncation flag is off at this t.
    pub flags_false_fraction: f64,
}

/// Runs the Lemma-3.3-style diagnostic over a t grid, sharing one path
/// ensemble of size `m` across all grid points.
pub fn cf_diagnostic(
    gen: &Generator,
    theta: &UnitVector,
    t_grid: &[f64],
    m: usize,
    stream: &mut RngStream,
) -> Result<Vec<CfDiagRow>> {
    if m == 0 {
        return Err(Error::EmptySample);
    }
    if gen.n() != theta.dim() {
        return Err(Error::DimensionMismatch {
            left: gen.n(),
            right: theta.dim(),
        });
    }
    let v2: f64 = theta
        .coords()
        .iter()
        .zip(gen.variance_profile())
        .map(|(w, b)| w * w * b)
        .sum();
    let local_seed = stream.next_u64();
    let nt = t_grid.len();

    struct Acc {
        count: usize,
        sum_re: Vec<f64>,
        sum_im: Vec<f64>,
        sum_re2: Vec<f64>,
        sum_im2: Vec<f64>,
        false_count: Vec<usize>,
        sum_abs_t3: f64,
        sum_t4: f64,
        sum_abs_dev: f64,
        sum_abs_t3_sq: f64,
        sum_t4_sq: f64,
        sum_abs_dev_sq: f64,
    }

    const BLOCKS: usize = 16;
    let block_size = m.div_ceil(BLOCKS);
    let blocks: Vec<Acc> = (0..BLOCKS.min(m))
        .into_par_iter()
        .map(|b| {
            let mut acc = Acc {
                count: 0,
                sum_re: vec![0.0; nt],
                sum_im: vec![0.0; nt],
                sum_re2: vec![0.0; nt],
                sum_im2: vec![0.0; nt],
                false_count: vec![0; nt],
                sum_abs_t3: 0.0,
                sum_t4: 0.0,
                sum_abs_dev: 0.0,
                sum_abs_t3_sq: 0.0,
                sum_t4_sq: 0.0,
                sum_abs_dev_sq: 0.0,
            };
            let mut stream = derive_stream(local_seed, &[b as u64]).expect("depth 1");
            let mut path = MdsPath::default();
            let lo = b * block_size;
            let hi = ((b + 1) * block_size).min(m);
            for _ in lo..hi {
                acc.count += 1;
                gen.sample_path_into(&mut stream, &mut path);
                let s: f64 = theta
                    .coords()
                    .iter()
                    .zip(&path.d)
                    .map(|(w, d)| w * d)
                    .sum();
                let tf = t_functionals(&path, theta).expect("lengths checked");
                let dev: f64 = theta
                    .coords()
                    .iter()
                    .zip(&path.cond_var)
                    .map(|(w, cv)| w * w * (cv - 1.0))
                    .sum();
                acc.sum_abs_t3 += tf.t3cube.abs();
                acc.sum_t4 += tf.t4quad;
                acc.sum_abs_dev += dev.abs();
                acc.sum_abs_t3_sq += tf.t3cube * tf.t3cube;
                acc.sum_t4_sq += tf.t4quad * tf.t4quad;
                acc.sum_abs_dev_sq += dev * dev;
                for (i, &t) in t_grid.iter().enumerate() {
                    let (sin, cos) = (t * s).sin_cos();
                    acc.sum_re[i] += cos;
                    acc.sum_im[i] += sin;
                    acc.sum_re2[i] += cos * cos;
                    acc.sum_im2[i] += sin * sin;
                    let rep =
                        truncation_flags(gen, &path, theta, t).expect("lengths checked");
                    if !rep.flags[path.len() - 1] {
                        acc.false_count[i] += 1;
                    }
                }
            }
            acc
        })
        .collect();

    // blocks is ordered by index, so this left fold is deterministic.
    let total = blocks
        .into_iter()
        .reduce(|mut a, b| {
            a.count += b.count;
            for i in 0..nt {
                a.sum_re[i] += b.sum_re[i];
                a.sum_im[i] += b.sum_im[i];
                a.sum_re2[i] += b.sum_re2[i];
                a.sum_im2[i] += b.sum_im2[i];
                a.false_count[i] += b.false_count[i];
            }
            a.sum_abs_t3 += b.sum_abs_t3;
            a.sum_t4 += b.sum_t4;
            a.sum_abs_dev += b.sum_abs_dev;
            a.sum_abs_t3_sq += b.sum_abs_t3_sq;
            a.sum_t4_sq += b.sum_t4_sq;
            a.sum_abs_dev_sq += b.sum_abs_dev_sq;
            a
        })
        .expect("at least one block");

    let mf = total.count as f64;
    let mean_abs_t3 = total.sum_abs_t3 / mf;
    let mean_t4 = total.sum_t4 / mf;
    let mean_abs_dev = total.sum_abs_dev / mf;
    let var_abs_t3 = (total.sum_abs_t3_sq / mf - mean_abs_t3 * mean_abs_t3).max(0.0);
    let var_t4 = (total.sum_t4_sq / mf - mean_t4 * mean_t4).max(0.0);
    let var_abs_dev = (total.sum_abs_dev_sq / mf - mean_abs_dev * mean_abs_dev).max(0.0);

    let mut rows = Vec::with_capacity(nt);
    for (i, &t) in t_grid.iter().enumerate() {
        let mean = Complex64::new(total.sum_re[i] / mf, total.sum_im[i] / mf);
        let reference = (-0.5 * t * t * v2).exp();
        let gap = (mean - Complex64::new(reference, 0.0)).norm();
        let var_re = (total.sum_re2[i] / mf - mean.re * mean.re).max(0.0);
        let var_im = (total.sum_im2[i] / mf - mean.im * mean.im).max(0.0);
        let gap_stderr = ((var_re + var_im) / mf).sqrt();
        let t3 = t.abs().powi(3);
        let t4 = t.powi(4);
        let t2 = t * t;
        let bn = t3 * mean_abs_t3 + t4 * mean_t4 + t2 * mean_abs_dev;
        let bn_stderr =
            ((t3 * t3 * var_abs_t3 + t4 * t4 * var_t4 + t2 * t2 * var_abs_dev) / mf).sqrt();
        let ratio = if t == 0.0 || bn == 0.0 {
            None
        } else {
            Some(gap / bn)
        };
        rows.push(CfDiagRow {
            t,
            cf_gap: gap,
            cf_gap_stderr: gap_stderr,
            bn_bound: bn,
            bn_stderr,
            ratio,
            flags_false_fraction: total.false_count[i] as f64 / mf,
        });
    }
    Ok(rows)
}

/// One admissible grid point of a Taylor-lemma ratio check.
#[derive(Debug, Clone, Serialize)]
pub struct TaylorRow {
    pub t: f64,
    /// `|prod f_j(theta_j t) - e^{-R2^2 t^2/2}|`.
    pub lhs: f64,
    /// `e^{-R2^2 t^2/2} (|R3^3| |t|^3 + R4^4 t^4)`.
    pub envelope: f64,
    pub ratio: f64,
}

/// Result of [`taylor_lemma_check`].
#[derive(Debug, Clone, Serialize)]
pub struct TaylorReport {
    pub rows: Vec<TaylorRow>,
    /// Grid points outside the lemma's admissible range
    /// `t <= min(R4^{-1}, |R3|^{-1})`.
    pub excluded: Vec<f64>,
    pub max_ratio: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Checks the independent-summand Taylor expansion bound as a ratio test:
/// the exact CF product of heterogeneous independent summands against the
/// Gaussian reference envelope.
pub fn taylor_lemma_check(
    dists: &[IidDist],
    theta: &UnitVector,
    t_grid: &[f64],
    threshold: f64,
) -> Result<TaylorReport> {
    if dists.len() != theta.dim() {
        return Err(Error::DimensionMismatch {
            left: dists.len(),
            right: theta.dim(),
        });
    }
    let mut r2sq = 0.0;
    let mut r3cube = 0.0;
    let mut r4quad = 0.0;
    for (dist, &w) in dists.iter().zip(theta.coords()) {
        let (m2, m3, m4) = dist.moments();
        let w2 = w * w;
        r2sq += w2 * m2;
        r3cube += w2 * w * m3;
        r4quad += w2 * w2 * m4;
    }
    let t_max_4 = r4quad.powf(-0.25);
    let t_max_3 = if r3cube == 0.0 {
        f64::INFINITY
    } else {
        r3cube.abs().powf(-1.0 / 3.0)
    };
    let t_max = t_max_4.min(t_max_3);

    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    let mut max_ratio = 0.0f64;
    for &t in t_grid {
        if !(t > 0.0) || t > t_max {
            excluded.push(t);
            continue;
        }
        let mut product = 1.0;
        for (dist, &w) in dists.iter().zip(theta.coords()) {
            product *= dist.cf(w * t);
        }
        let gauss = (-0.5 * r2sq * t * t).exp();
        let lhs = (product - gauss).abs();
        let envelope = gauss * (r3cube.abs() * t.abs().powi(3) + r4quad * t.powi(4));
        let ratio = if envelope > 0.0 { lhs / envelope } else { 0.0 };
        max_ratio = max_ratio.max(ratio);
        rows.push(TaylorRow {
            t,
            lhs,
            envelope,
            ratio,
        });
    }
    Ok(TaylorReport {
        rows,
        excluded,
        max_ratio,
        threshold,
        pass: max_ratio <= threshold,
    })
}

/// Value of the smoothing integral `int_0^{T0} E|E_{|theta}(e^{itS}) -
/// e^{-t^2 V^2/2}| dt/t` with a propagated Monte-Carlo error estimate.
#[derive(Debug, Clone, Serialize)]
pub struct EsseenIntegral {
    pub value: f64,
    pub stderr: f64,
    pub t_min: f64,
    pub t0: f64,
    pub t_points: usize,
    pub outer_samples: usize,
    pub inner_samples: usize,
}

/// Numerically evaluates the Esseen smoothing integral by trapezoid
/// quadrature on a log-spaced grid, with the analytic O(t) behavior of the
/// integrand patched in near zero. The integrand expectation is over
/// `outer` sphere draws with `m` paths each.
pub fn esseen_integral(
    spec: &GeneratorSpec,
    n: usize,
    t0: f64,
    t_points: usize,
    outer: usize,
    m: usize,
    stream: &mut RngStream,
) -> Result<EsseenIntegral> {
    spec.validate()?;
    if spec.n != n {
        return Err(Error::DimensionMismatch {
            left: spec.n,
            right: n,
        });
    }
    if !(t0 > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "the smoothing window needs T0 > 1 (got {t0})"
        )));
    }
    if t_points < 16 {
        return Err(Error::InvalidArgument(format!(
            "t_points = {t_points}, need at least 16"
        )));
    }
    if outer == 0 || m == 0 {
        return Err(Error::EmptySample);
    }
    let generator = Generator::new(*spec)?;
    let local_seed = stream.next_u64();

    let t_min = t0 * 1e-4;
    let ratio = t0 / t_min;
    let grid: Vec<f64> = (0..t_points)
        .map(|i| t_min * ratio.powf(i as f64 / (t_points - 1) as f64))
        .collect();

    // Per theta: one path ensemble shared across the whole grid.
    let gaps: Vec<Vec<f64>> = (0..outer as u64)
        .into_par_iter()
        .map(|i| {
            let mut theta_stream = derive_stream(local_seed, &[0, i]).expect("depth 2");
            let theta = sample_sphere(n, &mut theta_stream).expect("n >= 1");
            let v2: f64 = theta
                .coords()
                .iter()
                .zip(generator.variance_profile())
                .map(|(w, b)| w * w * b)
                .sum();
            let mut path_stream = derive_stream(local_seed, &[1, i]).expect("depth 2");
            let mut scratch = generator.scratch();
            let sums: Vec<f64> = (0..m)
                .map(|_| generator.weighted_sum(theta.coords(), &mut path_stream, &mut scratch))
                .collect();
            grid.iter()
                .map(|&t| {
                    let mut re = 0.0;
                    let mut im = 0.0;
                    for &s in &sums {
                        let (sin, cos) = (t * s).sin_cos();
                        re += cos;
                        im += sin;
                    }
                    let mean = Complex64::new(re / m as f64, im / m as f64);
                    let reference = (-0.5 * t * t * v2).exp();
                    (mean - Complex64::new(reference, 0.0)).norm()
                })
                .collect()
        })
        .collect();

    let mf = outer as f64;
    let mut g = vec![0.0f64; t_points];
    let mut se = vec![0.0f64; t_points];
    for i in 0..t_points {
        let mean = gaps.iter().map(|row| row[i]).sum::<f64>() / mf;
        g[i] = mean;
        if outer > 1 {
            let var = gaps
                .iter()
                .map(|row| (row[i] - mean) * (row[i] - mean))
                .sum::<f64>()
                / (mf - 1.0);
            se[i] = (var / mf).sqrt();
        }
    }

    // The CF gap is O(t^2) near zero (matched second moments), so the
    // integrand g(t)/t is O(t) and the (0, t_min] piece contributes
    // ~ g(t_min).
    let mut value = g[0];
    let mut err = se[0];
    for i in 0..t_points - 1 {
        let dt = grid[i + 1] - grid[i];
        value += 0.5 * (g[i] / grid[i] + g[i + 1] / grid[i + 1]) * dt;
        err += 0.5 * (se[i] / grid[i] + se[i + 1] / grid[i + 1]) * dt;
    }
    Ok(EsseenIntegral {
        value,
        stderr: err,
        t_min,
        t0,
        t_points,
        outer_samples: outer,
        inner_samples: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::martingales::gen_path;
    use crate::streams::derive_stream;

    fn fixed_theta(n: usize, seed: u64) -> UnitVector {
        let mut stream = derive_stream(seed, &[7]).unwrap();
        sample_sphere(n, &mut stream).unwrap()
    }

    #[test]
    fn rademacher_product_is_cos_product() {
        let n = 16;
        let spec = GeneratorSpec::iid(IidDist::Rademacher, n);
        let gen = Generator::new(spec).unwrap();
        let mut stream = derive_stream(61, &[0]).unwrap();
        let path = gen.sample_path(&mut stream);
        let theta = fixed_theta(n, 61);
        let grid = [0.0, 0.3, 1.0, 2.5];
        let curve = conditional_cf_product(&gen, &path, &theta, &grid).unwrap();
        for (&t, v) in grid.iter().zip(&curve.values) {
            let want: f64 = theta.coords().iter().map(|w| (w * t).cos()).product();
            assert!((v.re - want).abs() < 1e-14);
            assert_eq!(v.im, 0.0);
        }
        // CF at 0 is exactly 1; modulus never exceeds 1.
        assert_eq!(curve.values[0], Complex64::new(1.0, 0.0));
        for v in &curve.values {
            assert!(v.norm() <= 1.0);
        }
    }

    #[test]
    fn arch_product_matches_atom_enumeration() {
        // Each one-step factor must equal the expectation over the exact
        // three-point conditional law along the realized path.
        let n = 2;
        let spec = GeneratorSpec::arch(3.0, n);
        let gen = Generator::new(spec).unwrap();
        let mut stream = derive_stream(62, &[0]).unwrap();
        let theta = fixed_theta(n, 62);
        for _ in 0..50 {
            let path = gen.sample_path(&mut stream);
            for &t in &[0.5, 1.0, 3.0] {
                let mut brute = 1.0;
                for j in 1..=n {
                    let atoms = gen.step_atoms(j, &path).unwrap();
                    let s = t * theta.coords()[j - 1];
                    let factor: f64 = atoms.iter().map(|(v, p)| p * (s * v).cos()).sum();
                    brute *= factor;
                }
                let curve = conditional_cf_product(&gen, &path, &theta, &[t]).unwrap();
                assert!(
                    (curve.values[0].re - brute).abs() < 1e-13,
                    "t = {t}: {} vs {brute}",
                    curve.values[0].re
                );
            }
        }
    }

    #[test]
    fn t_functionals_rademacher() {
        let n = 8;
        let spec = GeneratorSpec::iid(IidDist::Rademacher, n);
        let mut stream = derive_stream(63, &[0]).unwrap();
        let path = gen_path(&spec, &mut stream).unwrap();
        let theta = fixed_theta(n, 63);
        let tf = t_functionals(&path, &theta).unwrap();
        let sum_sq: f64 = theta.coords().iter().map(|w| w * w).sum();
        let sum_quad: f64 = theta.coords().iter().map(|w| w.powi(4)).sum();
        assert!((tf.t2sq - sum_sq).abs() < 1e-15);
        assert_eq!(tf.t3cube, 0.0);
        assert!((tf.t4quad - sum_quad).abs() < 1e-15);
    }

    #[test]
    fn mean_t2sq_is_one_over_theta_and_paths() {
        // E[T_2^2] = sum_j E(theta_j^2) E(d_j^2) = 1.
        let n = 12;
        let spec = GeneratorSpec::arch(3.0, n);
        let gen = Generator::new(spec).unwrap();
        let mut stream = derive_stream(64, &[0]).unwrap();
        let reps = 20_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..reps {
            let theta = sample_sphere(n, &mut stream).unwrap();
            let path = gen.sample_path(&mut stream);
            let tf = t_functionals(&path, &theta).unwrap();
            sum += tf.t2sq;
            sum_sq += tf.t2sq * tf.t2sq;
        }
        let mean = sum / reps as f64;
        let var = (sum_sq / reps as f64 - mean * mean).max(0.0);
        let stderr = (var / reps as f64).sqrt();
        assert!((mean - 1.0).abs() <= 5.0 * stderr, "mean = {mean} +- {stderr}");
    }

    #[test]
    fn truncation_all_on_at_zero_and_small_t() {
        let n = 16;
        let spec = GeneratorSpec::iid(IidDist::Rademacher, n);
        let gen = Generator::new(spec).unwrap();
        let mut stream = derive_stream(65, &[0]).unwrap();
        let path = gen.sample_path(&mut stream);
        let theta = fixed_theta(n, 65);
        for t in [0.0, 0.1] {
            let rep = truncation_flags(&gen, &path, &theta, t).unwrap();
            assert!(rep.flags.iter().all(|&f| f), "t = {t}");
            assert_eq!(rep.truncated, rep.original);
        }
    }

    #[test]
    fn truncation_flags_are_monotone() {
        let n = 64;
        let spec = GeneratorSpec::arch(3.0, n);
        let gen = Generator::new(spec).unwrap();
        let mut stream = derive_stream(66, &[0]).unwrap();
        let theta = fixed_theta(n, 66);
        for _ in 0..100 {
            let path = gen.sample_path(&mut stream);
            for &t in &[0.5, 2.0, 5.0, 9.0] {
                let rep = truncation_flags(&gen, &path, &theta, t).unwrap();
                for w in rep.flags.windows(2) {
                    assert!(w[0] || !w[1], "flags not nonincreasing");
                }
                assert!(rep.truncated.t4quad <= rep.original.t4quad + 1e-15);
                if rep.flags.iter().all(|&f| f) {
                    assert_eq!(rep.truncated, rep.original);
                }
            }
        }
    }

    #[test]
    fn truncation_failure_frequency_obeys_bn_scale() {
        // Frequency of the last flag being off should stay within a
        // moderate constant of the B_n bound (constant-free ratio check).
        let n = 32;
        let spec = GeneratorSpec::arch(3.0, n);
        let gen = Generator::new(spec).unwrap();
        let theta = fixed_theta(n, 67);
        let mut stream = derive_stream(67, &[0]).unwrap();
        let rows = cf_diagnostic(&gen, &theta, &[1.5, 2.5], 20_000, &mut stream).unwrap();
        for row in rows {
            let cap = 20.0 * (row.bn_bound + 5.0 * row.bn_stderr) + 1e-3;
            assert!(
                row.flags_false_fraction <= cap,
                "t = {}: fraction {} vs bn {}",
                row.t,
                row.flags_false_fraction,
                row.bn_bound
            );
        }
    }

    #[test]
    fn gaussian_cf_gap_is_null() {
        let n = 8;
        let spec = GeneratorSpec::iid(IidDist::StandardGaussian, n);
        let gen = Generator::new(spec).unwrap();
        let theta = fixed_theta(n, 68);
        let mut stream = derive_stream(68, &[0]).unwrap();
        for t in [0.4, 1.0, 2.0] {
            let est = cf_gap(&gen, &theta, t, 40_000, &mut stream).unwrap();
            assert!(
                est.value <= 4.0 * est.stderr,
                "t = {t}: gap = {} +- {}",
                est.value,
                est.stderr
            );
        }
    }

    #[test]
    fn single_rademacher_gap_and_bound() {
        // n = 1, theta = (1): gap = |cos t - e^{-t^2/2}|, B_n = t^4.
        let spec = GeneratorSpec::iid(IidDist::Rademacher, 1);
        let gen = Generator::new(spec).unwrap();
        let theta = UnitVector::new(vec![1.0]).unwrap();
        let mut stream = derive_stream(69, &[0]).unwrap();
        let t = 1.0;
        let est = cf_gap(&gen, &theta, t, 200_000, &mut stream).unwrap();
        let exact = (t.cos() - (-0.5 * t * t).exp()).abs();
        assert!((exact - 0.066_228_353_844_493_7).abs() < 1e-12);
        assert!((est.value - exact).abs() <= 5.0 * est.stderr + 1e-3);
        let bn = bn_bound(&gen, &theta, t, 100, &mut stream).unwrap();
        assert!((bn.value - 1.0).abs() < 1e-12, "B_n(1) = t^4 = 1");
        assert_eq!(bn.stderr, 0.0);
        assert!(exact <= bn.value);
    }

    #[test]
    fn arch_gap_to_bound_ratio_is_moderate() {
        let n = 64;
        let spec = GeneratorSpec::arch(3.0, n);
        let gen = Generator::new(spec).unwrap();
        let mut stream = derive_stream(70, &[0]).unwrap();
        let grid: Vec<f64> = (1..=12).map(|i| 0.25 * i as f64).collect();
        for rep in 0..4 {
            let theta = fixed_theta(n, 700 + rep);
            let rows = cf_diagnostic(&gen, &theta, &grid, 20_000, &mut stream).unwrap();
            for row in rows {
                if let Some(ratio) = row.ratio {
                    // Subtract the MC noise floor before judging the ratio.
                    let adjusted =
                        ((row.cf_gap - 3.0 * row.cf_gap_stderr).max(0.0)) / row.bn_bound;
                    assert!(
                        adjusted <= DEFAULT_RATIO_THRESHOLD,
                        "t = {}: ratio = {ratio} (adjusted {adjusted})",
                        row.t
                    );
                }
            }
        }
    }

    #[test]
    fn taylor_check_gaussian_is_exact() {
        let n = 8;
        let dists = vec![IidDist::StandardGaussian; n];
        let theta = fixed_theta(n, 71);
        let grid: Vec<f64> = (1..=20).map(|i| 0.05 * i as f64).collect();
        let report = taylor_lemma_check(&dists, &theta, &grid, 20.0).unwrap();
        for row in &report.rows {
            assert!(row.lhs < 1e-14, "t = {}: lhs = {}", row.t, row.lhs);
        }
        assert!(report.pass);
    }

    #[test]
    fn taylor_check_single_rademacher_value() {
        // R3 = 0 and R4 = 1, so the admissible range is t <= 1; at t = 1 the
        // ratio is |cos 1 - e^{-1/2}| / e^{-1/2} ~ 0.1092.
        let dists = vec![IidDist::Rademacher];
        let theta = UnitVector::new(vec![1.0]).unwrap();
        let report = taylor_lemma_check(&dists, &theta, &[0.5, 1.0, 1.5], 20.0).unwrap();
        assert_eq!(report.excluded, vec![1.5]);
        let last = report.rows.last().unwrap();
        assert_eq!(last.t, 1.0);
        assert!((last.ratio - 0.109_192_095_706_871_38).abs() < 1e-12);
        assert!(report.pass);
    }

    #[test]
    fn taylor_check_two_point_bounded() {
        let n = 8;
        let dists = vec![IidDist::TwoPointSymmetric { a: 2.0 }; n];
        let theta = fixed_theta(n, 72);
        let grid: Vec<f64> = (1..=40).map(|i| 0.1 * i as f64).collect();
        let report = taylor_lemma_check(&dists, &theta, &grid, 10.0).unwrap();
        assert!(!report.rows.is_empty());
        assert!(report.pass, "max ratio = {}", report.max_ratio);
    }

    #[test]
    fn taylor_scale_covariance() {
        // Doubling all fourth moments doubles R4^4 exactly, so the envelope
        // at fixed t scales accordingly. TwoPoint(a) has m4 = a^2: pick a
        // and a*sqrt(2).
        let n = 4;
        let theta = fixed_theta(n, 73);
        let base = vec![IidDist::TwoPointSymmetric { a: 1.5 }; n];
        let doubled = vec![
            IidDist::TwoPointSymmetric {
                a: 1.5 * std::f64::consts::SQRT_2
            };
            n
        ];
        let grid = [0.2];
        let r1 = taylor_lemma_check(&base, &theta, &grid, 20.0).unwrap();
        let r2 = taylor_lemma_check(&doubled, &theta, &grid, 20.0).unwrap();
        let e1 = r1.rows[0].envelope;
        let e2 = r2.rows[0].envelope;
        assert!((e2 / e1 - 2.0).abs() < 1e-12, "{e1} {e2}");
    }

    #[test]
    fn esseen_gaussian_is_noise_floor() {
        let n = 16;
        let spec = GeneratorSpec::iid(IidDist::StandardGaussian, n);
        let m = 20_000;
        let mut stream = derive_stream(74, &[0]).unwrap();
        let est = esseen_integral(&spec, n, 4.0, 24, 8, m, &mut stream).unwrap();
        // Analytic noise floor of |empirical CF - CF|: mean magnitude of a
        // 2d Gaussian with total variance (1 - e^{-t^2 s})/m is below
        // sqrt(pi (1 - e^{-t^2})/(4 m)); integrate that envelope dt/t.
        let mut floor = (std::f64::consts::PI / (4.0 * m as f64)).sqrt(); // patch at t_min
        let grid: Vec<f64> = (0..24)
            .map(|i| est.t_min * (est.t0 / est.t_min).powf(i as f64 / 23.0))
            .collect();
        for w in grid.windows(2) {
            let env = |t: f64| {
                (std::f64::consts::PI * (1.0 - (-t * t).exp()) / (4.0 * m as f64)).sqrt() / t
            };
            floor += 0.5 * (env(w[0]) + env(w[1])) * (w[1] - w[0]);
        }
        assert!(
            est.value <= 2.0 * floor + 3.0 * est.stderr,
            "value = {} floor = {floor} stderr = {}",
            est.value,
            est.stderr
        );
    }

    #[test]
    fn esseen_scaling_across_n() {
        // Ratio of integrals at n and 4n should track (1/4)(log 4n/log n)^2
        // within a factor of 2. Rademacher rows keep the inner ensembles
        // cheap enough (m = 2e6) for the signal ~ 1/(2n) to dominate the
        // CF-estimator noise floor ~ 1/sqrt(m).
        let mut stream = derive_stream(75, &[0]).unwrap();
        let spec64 = GeneratorSpec::iid(IidDist::Rademacher, 64);
        let spec256 = GeneratorSpec::iid(IidDist::Rademacher, 256);
        let t0_64 = 4.0 * (64f64).ln().sqrt();
        let t0_256 = 4.0 * (256f64).ln().sqrt();
        let m = 2_000_000;
        let e64 = esseen_integral(&spec64, 64, t0_64, 16, 8, m, &mut stream).unwrap();
        let e256 = esseen_integral(&spec256, 256, t0_256, 16, 8, m, &mut stream).unwrap();
        let observed = e256.value / e64.value;
        let predicted = (64.0 / 256.0) * (256f64.ln() / 64f64.ln()).powi(2);
        assert!(
            observed <= 2.0 * predicted && observed >= predicted / 2.0,
            "observed {observed}, predicted {predicted} (e64 = {}, e256 = {})",
            e64.value,
            e256.value
        );
    }

    #[test]
    fn esseen_rejects_bad_window() {
        let spec = GeneratorSpec::iid(IidDist::Rademacher, 8);
        let mut stream = derive_stream(76, &[0]).unwrap();
        assert!(esseen_integral(&spec, 8, 1.0, 24, 4, 1000, &mut stream).is_err());
        assert!(esseen_integral(&spec, 8, 0.5, 24, 4, 1000, &mut stream).is_err());
        assert!(esseen_integral(&spec, 8, 4.0, 8, 4, 1000, &mut stream).is_err());
    }
}
