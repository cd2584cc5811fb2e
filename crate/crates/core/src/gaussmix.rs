//! Gaussian scale-mixture machinery: the mixture variance
//! `V_n^2(theta) = sum theta_k^2 b_k^2`, exact Kolmogorov distances between
//! centered Gaussians of different scales with the Johnston-Prochno bound,
//! second-order sphere concentration of `V_n^2(theta) - 1`, and the
//! resulting closed-form bound on `E kappa(N_theta, N)`.

use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::distance::{phi, DistanceEstimate};
use crate::error::{Error, Result};
use crate::sphere::{sample_sphere, UnitVector};
use crate::streams::{derive_stream, RngStream};

/// The per-index variances `b_k^2 = E d_k^2` of a martingale-difference row,
/// normalized so they sum to n.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceProfile {
    b_sq: Vec<f64>,
}

impl VarianceProfile {
    pub fn new(b_sq: Vec<f64>) -> Result<Self> {
        let n = b_sq.len();
        if n == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if b_sq.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::InvalidParameter(
                "variance profile entries must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = b_sq.iter().sum();
        if (total - n as f64).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "variance profile sums to {total}, expected n = {n}"
            )));
        }
        Ok(Self { b_sq })
    }

    /// All-ones profile (every generator in this crate).
    pub fn unit(n: usize) -> Result<Self> {
        Self::new(vec![1.0; n])
    }

    /// Rescales arbitrary nonnegative weights so they sum to n.
    pub fn normalized(raw: &[f64]) -> Result<Self> {
        let n = raw.len();
        if n == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if raw.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::InvalidParameter(
                "variance profile entries must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidParameter(
                "variance profile must have positive total mass".into(),
            ));
        }
        let scale = n as f64 / total;
        Self::new(raw.iter().map(|b| b * scale).collect())
    }

    pub fn n(&self) -> usize {
        self.b_sq.len()
    }

    pub fn b_sq(&self) -> &[f64] {
        &self.b_sq
    }

    /// `sum_k (b_k^2 - 1)^2`, the deviation mass entering every bound here.
    pub fn sum_sq_dev(&self) -> f64 {
        self.b_sq.iter().map(|b| (b - 1.0) * (b - 1.0)).sum()
    }
}

/// `V_n^2(theta) = sum_k theta_k^2 b_k^2`.
pub fn mixture_variance(profile: &VarianceProfile, theta: &UnitVector) -> Result<f64> {
    if profile.n() != theta.dim() {
        return Err(Error::DimensionMismatch {
            left: profile.n(),
            right: theta.dim(),
        });
    }
    Ok(theta
        .coords()
        .iter()
        .zip(&profile.b_sq)
        .map(|(t, b)| t * t * b)
        .sum())
}

/// Exact Kolmogorov distance between centered Gaussians of scales alpha and
/// beta, with the Johnston-Prochno bound where it applies.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TwoScaleDistance {
    pub exact: f64,
    /// `(3/8) |alpha^2 - beta^2| / alpha^2`, present iff beta/alpha > 1/2.
    pub jp_bound: Option<f64>,
}

/// Kolmogorov distance between `N(0, alpha^2)` and `N(0, beta^2)`.
///
/// The CDF difference is extremal where the densities cross, at
/// `t*^2 = 2 alpha^2 beta^2 ln(beta/alpha) / (beta^2 - alpha^2)`, which
/// yields the closed form `|Phi(t*/alpha) - Phi(t*/beta)|`.
pub fn gauss_two_scale_distance(alpha: f64, beta: f64) -> Result<TwoScaleDistance> {
    if !alpha.is_finite() || !beta.is_finite() || alpha <= 0.0 || beta <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "scales must be positive (got {alpha}, {beta})"
        )));
    }
    let log_ratio = (beta / alpha).ln();
    let exact = if log_ratio.abs() < 1e-12 {
        0.0
    } else {
        let t_star_sq =
            2.0 * alpha * alpha * beta * beta * log_ratio / (beta * beta - alpha * alpha);
        let t_star = t_star_sq.sqrt();
        (phi(t_star / alpha) - phi(t_star / beta)).abs()
    };
    let jp_bound = if beta / alpha > 0.5 {
        Some(0.375 * (alpha * alpha - beta * beta).abs() / (alpha * alpha))
    } else {
        None
    };
    Ok(TwoScaleDistance { exact, jp_bound })
}

/// Monte-Carlo check of the second-order concentration bound on
/// `V_n^2(theta) - 1`.
#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationReport {
    pub n: usize,
    pub draws: usize,
    /// `E |V_n^2(theta) - 1|`.
    pub l1_estimate: f64,
    pub l1_stderr: f64,
    /// `|| V_n^2(theta) - 1 ||_2`.
    pub l2_estimate: f64,
    pub l2_stderr: f64,
    /// `2 sqrt(5) (sum (b_k^2-1)^2)^{1/2} / (n-1)`.
    pub r0_bound: f64,
    /// Both moments below the bound within 3 standard errors.
    pub pass: bool,
}

/// Closed-form concentration bound `2 sqrt(5) (sum (b_k^2 - 1)^2)^{1/2} /
/// (n - 1)` on both the L1 and L2 norms of `V_n^2(theta) - 1`.
pub fn r0_bound(profile: &VarianceProfile) -> Result<f64> {
    if profile.n() < 2 {
        return Err(Error::InvalidDimension(profile.n()));
    }
    Ok(2.0 * 5.0f64.sqrt() * profile.sum_sq_dev().sqrt() / (profile.n() as f64 - 1.0))
}

/// Estimates `E|V_n^2(theta) - 1|` and `||V_n^2(theta) - 1||_2` over `draws`
/// sphere draws and compares them against the closed-form bound.
pub fn concentration_check(
    profile: &VarianceProfile,
    draws: usize,
    stream: &mut RngStream,
) -> Result<ConcentrationReport> {
    let n = profile.n();
    let bound = r0_bound(profile)?;
    if draws == 0 {
        return Err(Error::EmptySample);
    }
    let (sum_abs, sum_sq, sum_quad) = mc_over_theta(profile, draws, stream, |v2| {
        let dev = v2 - 1.0;
        (dev.abs(), dev * dev, dev * dev * dev * dev)
    });
    let m = draws as f64;
    let l1 = sum_abs / m;
    let mean_sq = sum_sq / m;
    let l1_var = (mean_sq - l1 * l1).max(0.0);
    let l1_stderr = (l1_var / m).sqrt();
    let l2 = mean_sq.sqrt();
    let var_of_mean_sq = (sum_quad / m - mean_sq * mean_sq).max(0.0) / m;
    // Delta method through the square root.
    let l2_stderr = if l2 > 0.0 {
        var_of_mean_sq.sqrt() / (2.0 * l2)
    } else {
        0.0
    };
    // Rounding allowance: V_n^2 sums n O(1) terms, so even a degenerate
    // profile leaves ~n*eps of float noise in the deviations.
    let fp_tol = 1e-12;
    let pass =
        l1 <= bound + 3.0 * l1_stderr + fp_tol && l2 <= bound + 3.0 * l2_stderr + fp_tol;
    Ok(ConcentrationReport {
        n,
        draws,
        l1_estimate: l1,
        l1_stderr,
        l2_estimate: l2,
        l2_stderr,
        r0_bound: bound,
        pass,
    })
}

/// Accumulates three per-draw statistics of V_n^2(theta) over independent
/// sphere draws, in fixed block order.
fn mc_over_theta(
    profile: &VarianceProfile,
    draws: usize,
    stream: &mut RngStream,
    f: impl Fn(f64) -> (f64, f64, f64) + Sync,
) -> (f64, f64, f64) {
    let local_seed = stream.next_u64();
    const BLOCKS: usize = 32;
    let block_size = draws.div_ceil(BLOCKS);
    let partials: Vec<(f64, f64, f64)> = (0..BLOCKS.min(draws))
        .into_par_iter()
        .map(|b| {
            let mut stream = derive_stream(local_seed, &[b as u64]).expect("depth 1");
            let lo = b * block_size;
            let hi = ((b + 1) * block_size).min(draws);
            let mut acc = (0.0, 0.0, 0.0);
            for _ in lo..hi {
                let theta = sample_sphere(profile.n(), &mut stream).expect("n >= 1");
                let v2 = mixture_variance(profile, &theta).expect("dims match");
                let (a, b_, c) = f(v2);
                acc.0 += a;
                acc.1 += b_;
                acc.2 += c;
            }
            acc
        })
        .collect();
    partials
        .into_iter()
        .fold((0.0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2))
}

/// Closed-form bound `(35 sqrt(5)/4) (sum (b_k^2-1)^2)^{1/2} / (n-1)` on
/// `E sup_t |P(N_theta <= t | theta) - P(N <= t)|`.
pub fn remark_bound(profile: &VarianceProfile) -> Result<f64> {
    if profile.n() < 2 {
        return Err(Error::InvalidDimension(profile.n()));
    }
    Ok(35.0 * 5.0f64.sqrt() / 4.0 * profile.sum_sq_dev().sqrt() / (profile.n() as f64 - 1.0))
}

/// Monte-Carlo average over theta of the exact Kolmogorov distance between
/// `N(0, V_n^2(theta))` and `N(0, 1)`. No inner sampling: the per-theta
/// distance is closed-form, so `inner_samples` is 0 and `dkw_radius` is 0.
pub fn kappa_mixture_vs_standard(
    profile: &VarianceProfile,
    draws: usize,
    stream: &mut RngStream,
) -> Result<DistanceEstimate> {
    if profile.n() < 2 {
        return Err(Error::InvalidDimension(profile.n()));
    }
    if draws == 0 {
        return Err(Error::EmptySample);
    }
    let (sum, sum_sq, _) = mc_over_theta(profile, draws, stream, |v2| {
        let d = gauss_two_scale_distance(1.0, v2.max(0.0).sqrt())
            .map(|r| r.exact)
            .unwrap_or_else(|_| {
                // V^2 = 0 only for degenerate profiles on a null set of
                // thetas; the distance to a point mass is 1/2... but Phi(0)
                // conventions aside, sup_t |Phi(t) - 1_{t>=0}| = 1/2.
                0.5
            });
        (d, d * d, 0.0)
    });
    let m = draws as f64;
    let mean = sum / m;
    let var = (sum_sq / m - mean * mean).max(0.0);
    Ok(DistanceEstimate {
        value: mean,
        inner_samples: 0,
        outer_samples: draws,
        dkw_radius: 0.0,
        stderr_outer: (var / m).sqrt(),
        delta: 0.0,
    })
}

/// One grid point of the mixture-CF integrand inequality check:
/// `|E(e^{-t^2 V^2/2}) - e^{-t^2/2}| <= (5 t^4 / 2) sum (b_k^2-1)^2 /
/// (n-1)^2`.
#[derive(Debug, Clone, Serialize)]
pub struct R2IntegrandRow {
    pub t: f64,
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Monte-Carlo check of the mixture-CF integrand inequality on a t-grid.
pub fn r2_integrand_check(
    profile: &VarianceProfile,
    t_grid: &[f64],
    draws: usize,
    stream: &mut RngStream,
) -> Result<Vec<R2IntegrandRow>> {
    if profile.n() < 2 {
        return Err(Error::InvalidDimension(profile.n()));
    }
    if draws == 0 {
        return Err(Error::EmptySample);
    }
    let local_seed = stream.next_u64();
    let factor = 2.5 * profile.sum_sq_dev() / ((profile.n() as f64 - 1.0).powi(2));
    let nt = t_grid.len();
    const BLOCKS: usize = 32;
    let block_size = draws.div_ceil(BLOCKS);
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..BLOCKS.min(draws))
        .into_par_iter()
        .map(|b| {
            let mut stream = derive_stream(local_seed, &[b as u64]).expect("depth 1");
            let lo = b * block_size;
            let hi = ((b + 1) * block_size).min(draws);
            let mut sums = vec![0.0; nt];
            let mut sums_sq = vec![0.0; nt];
            for _ in lo..hi {
                let theta = sample_sphere(profile.n(), &mut stream).expect("n >= 1");
                let v2 = mixture_variance(profile, &theta).expect("dims match");
                for (i, &t) in t_grid.iter().enumerate() {
                    let x = (-0.5 * t * t * v2).exp();
                    sums[i] += x;
                    sums_sq[i] += x * x;
                }
            }
            (sums, sums_sq)
        })
        .collect();
    let mut sums = vec![0.0; nt];
    let mut sums_sq = vec![0.0; nt];
    for (s, s2) in partials {
        for i in 0..nt {
            sums[i] += s[i];
            sums_sq[i] += s2[i];
        }
    }
    let m = draws as f64;
    let mut rows = Vec::with_capacity(nt);
    for (i, &t) in t_grid.iter().enumerate() {
        let mean = sums[i] / m;
        let var = (sums_sq[i] / m - mean * mean).max(0.0);
        let stderr = (var / m).sqrt();
        let lhs = (mean - (-0.5 * t * t).exp()).abs();
        let bound = factor * t.powi(4);
        rows.push(R2IntegrandRow {
            t,
            lhs,
            lhs_stderr: stderr,
            bound,
            pass: lhs <= bound + 3.0 * stderr,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::derive_stream;

    #[test]
    fn mixture_variance_basics() {
        let unit = VarianceProfile::unit(5).unwrap();
        let mut stream = derive_stream(81, &[0]).unwrap();
        for _ in 0..20 {
            let theta = sample_sphere(5, &mut stream).unwrap();
            let v2 = mixture_variance(&unit, &theta).unwrap();
            assert!((v2 - 1.0).abs() < 1e-12);
        }
        let spiky = VarianceProfile::new(vec![2.0, 0.0]).unwrap();
        let theta = UnitVector::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(mixture_variance(&spiky, &theta).unwrap(), 2.0);
    }

    #[test]
    fn mixture_variance_has_unit_mean() {
        // E V_n^2(theta) = 1 for any valid profile.
        let raw: Vec<f64> = (0..40).map(|k| 1.0 + 0.8 * ((k as f64) * 0.3).cos()).collect();
        let profile = VarianceProfile::normalized(&raw).unwrap();
        let mut stream = derive_stream(82, &[0]).unwrap();
        let draws = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..draws {
            let theta = sample_sphere(40, &mut stream).unwrap();
            let v2 = mixture_variance(&profile, &theta).unwrap();
            sum += v2;
            sum_sq += v2 * v2;
        }
        let mean = sum / draws as f64;
        let var = (sum_sq / draws as f64 - mean * mean).max(0.0);
        let stderr = (var / draws as f64).sqrt();
        assert!((mean - 1.0).abs() <= 5.0 * stderr, "mean = {mean} +- {stderr}");
    }

    #[test]
    fn profile_validation() {
        assert!(VarianceProfile::new(vec![]).is_err());
        assert!(VarianceProfile::new(vec![0.5, 0.6]).is_err());
        assert!(VarianceProfile::new(vec![-1.0, 3.0]).is_err());
        assert!(VarianceProfile::new(vec![1.5, 0.5]).is_ok());
    }

    #[test]
    fn two_scale_equal_is_zero() {
        let d = gauss_two_scale_distance(1.3, 1.3).unwrap();
        assert_eq!(d.exact, 0.0);
        assert_eq!(d.jp_bound, Some(0.0));
    }

    #[test]
    fn two_scale_one_two() {
        // t*^2 = 8 ln 2 / 3; exact distance 0.16134 (mpmath); bound 1.125.
        let d = gauss_two_scale_distance(1.0, 2.0).unwrap();
        assert!((d.exact - 0.161_337_284_417_384_33).abs() < 1e-12, "{}", d.exact);
        assert_eq!(d.jp_bound, Some(1.125));
        assert!(d.exact <= d.jp_bound.unwrap());
    }

    #[test]
    fn two_scale_matches_grid_search() {
        // Independent oracle: dense grid search of |Phi(t/a) - Phi(t/b)|.
        for (a, b) in [(1.0, 2.0), (0.7, 1.1), (2.5, 0.9), (1.0, 1.05)] {
            let d = gauss_two_scale_distance(a, b).unwrap().exact;
            let mut best = 0.0f64;
            let hi = 5.0 * a.max(b);
            let steps = 200_000;
            for i in 1..steps {
                let t = hi * i as f64 / steps as f64;
                best = best.max((phi(t / a) - phi(t / b)).abs());
            }
            assert!((d - best).abs() < 1e-6, "({a},{b}): closed {d} vs grid {best}");
        }
    }

    #[test]
    fn two_scale_small_perturbation_slope() {
        // exact(1, 1+eps) ~ eps * phi(1) = eps / sqrt(2 pi e): the sup sits
        // at the density crossing t* -> 1 and moves by phi(1) per unit of
        // scale. jp ~ (3/8) * 2 eps. Cross-checked against the grid oracle.
        let eps = 1e-4;
        let d = gauss_two_scale_distance(1.0, 1.0 + eps).unwrap();
        let slope = d.exact / eps;
        let want = 0.241_970_724_519_143_37; // 1/sqrt(2 pi e)
        assert!((slope - want).abs() < 1e-3, "slope = {slope}");
        let mut grid_best = 0.0f64;
        for i in 1..200_000 {
            let t = 4.0 * i as f64 / 200_000.0;
            grid_best = grid_best.max((phi(t) - phi(t / (1.0 + eps))).abs());
        }
        assert!((d.exact - grid_best).abs() < 1e-7);
        let jp = d.jp_bound.unwrap();
        assert!((jp / eps - 0.75).abs() < 1e-3);
    }

    #[test]
    fn two_scale_symmetry_and_bound_grid() {
        // Exact distance is symmetric in the scales; the bound, where
        // defined, always dominates. 50x50 grid over [0.5, 3].
        for i in 0..50 {
            for j in 0..50 {
                let a = 0.5 + 2.5 * i as f64 / 49.0;
                let b = 0.5 + 2.5 * j as f64 / 49.0;
                let d_ab = gauss_two_scale_distance(a, b).unwrap();
                let d_ba = gauss_two_scale_distance(b, a).unwrap();
                assert!((d_ab.exact - d_ba.exact).abs() < 1e-13);
                if let Some(bound) = d_ab.jp_bound {
                    assert!(
                        d_ab.exact <= bound + 1e-13,
                        "violation at ({a}, {b}): {} > {bound}",
                        d_ab.exact
                    );
                }
            }
        }
    }

    #[test]
    fn concentration_unit_profile_is_degenerate() {
        let profile = VarianceProfile::unit(8).unwrap();
        let mut stream = derive_stream(83, &[0]).unwrap();
        let report = concentration_check(&profile, 2000, &mut stream).unwrap();
        assert!(report.l1_estimate < 1e-12);
        assert!(report.l2_estimate < 1e-12);
        assert_eq!(report.r0_bound, 0.0);
        assert!(report.pass);
    }

    #[test]
    fn concentration_two_point_profile() {
        // n=2, b^2 = (2,0): ||2 theta_1^2 - 1||_2 = sqrt(1/2) via
        // Beta(1/2,1/2) moments; bound = 2 sqrt(5) sqrt(2) ~ 6.325.
        let profile = VarianceProfile::new(vec![2.0, 0.0]).unwrap();
        let mut stream = derive_stream(84, &[0]).unwrap();
        let report = concentration_check(&profile, 200_000, &mut stream).unwrap();
        let want_l2 = 0.5f64.sqrt();
        assert!(
            (report.l2_estimate - want_l2).abs() <= 5.0 * report.l2_stderr,
            "l2 = {} +- {}",
            report.l2_estimate,
            report.l2_stderr
        );
        assert!((report.r0_bound - 6.324_555_320_336_759).abs() < 1e-12);
        assert!(report.pass);
    }

    #[test]
    fn concentration_cosine_profile() {
        let raw: Vec<f64> = (0..100)
            .map(|k| 1.0 + 0.7 * (2.0 * std::f64::consts::PI * k as f64 / 100.0).cos())
            .collect();
        let profile = VarianceProfile::normalized(&raw).unwrap();
        let mut stream = derive_stream(85, &[0]).unwrap();
        let report = concentration_check(&profile, 50_000, &mut stream).unwrap();
        assert!(report.pass, "{report:?}");
        assert!(report.l1_estimate <= report.l2_estimate + 3.0 * report.l1_stderr);
    }

    #[test]
    fn concentration_rejects_degenerate_dimension() {
        let profile = VarianceProfile::unit(1).unwrap();
        let mut stream = derive_stream(86, &[0]).unwrap();
        assert!(concentration_check(&profile, 1000, &mut stream).is_err());
    }

    #[test]
    fn remark_bound_values() {
        let unit = VarianceProfile::unit(4).unwrap();
        assert_eq!(remark_bound(&unit).unwrap(), 0.0);

        // n=2, b^2 = (2,0): (35 sqrt(5)/4) sqrt(2) ~ 27.67 (vacuous but
        // well-defined).
        let spiky = VarianceProfile::new(vec![2.0, 0.0]).unwrap();
        let b = remark_bound(&spiky).unwrap();
        assert!((b - 27.669_929_526_473_32).abs() < 1e-12, "{b}");

        // Unit deviation mass at n = 1001: 35 sqrt(5)/4000.
        let mut raw = vec![1.0; 1001];
        raw[0] = 1.0 + (0.5f64).sqrt();
        raw[1] = 1.0 - (0.5f64).sqrt();
        let profile = VarianceProfile::normalized(&raw).unwrap();
        let dev = profile.sum_sq_dev();
        assert!((dev - 1.0).abs() < 1e-9, "dev = {dev}");
        let b = remark_bound(&profile).unwrap();
        assert!((b - 0.019_565_594_803_123_16).abs() < 1e-6, "{b}");
    }

    #[test]
    fn mixture_kappa_below_remark_bound() {
        let mut stream = derive_stream(87, &[0]).unwrap();
        let n = 1001;
        let mut raw = vec![1.0; n];
        raw[0] = 1.0 + (0.5f64).sqrt();
        raw[1] = 1.0 - (0.5f64).sqrt();
        let profile = VarianceProfile::normalized(&raw).unwrap();
        let bound = remark_bound(&profile).unwrap();
        let est = kappa_mixture_vs_standard(&profile, 20_000, &mut stream).unwrap();
        assert!(
            est.value <= bound + 3.0 * est.stderr_outer,
            "kappa = {} vs bound {bound}",
            est.value
        );
        assert_eq!(est.inner_samples, 0);
        assert_eq!(est.dkw_radius, 0.0);

        // The mixture distance chain: mean <= (35/8) E|V^2 - 1|.
        let report = concentration_check(&profile, 20_000, &mut stream).unwrap();
        assert!(
            est.value
                <= 35.0 / 8.0 * report.l1_estimate
                    + 3.0 * (est.stderr_outer + 35.0 / 8.0 * report.l1_stderr),
            "chain violated: {} vs {}",
            est.value,
            35.0 / 8.0 * report.l1_estimate
        );
    }

    #[test]
    fn mixture_kappa_spiky_profile_is_genuine() {
        let mut stream = derive_stream(88, &[0]).unwrap();
        let profile = VarianceProfile::new(vec![2.0, 0.0]).unwrap();
        let est = kappa_mixture_vs_standard(&profile, 20_000, &mut stream).unwrap();
        assert!(est.value > 0.0 && est.value < 1.0);
        // The remark bound is vacuous here (27.67) but still dominates.
        assert!(est.value <= remark_bound(&profile).unwrap());
    }

    #[test]
    fn r2_integrand_inequality_holds() {
        let raw: Vec<f64> = (0..64)
            .map(|k| 1.0 + 0.5 * ((k as f64) * 0.17).sin())
            .collect();
        let profile = VarianceProfile::normalized(&raw).unwrap();
        let mut stream = derive_stream(89, &[0]).unwrap();
        let grid: Vec<f64> = (1..=12).map(|i| 0.3 * i as f64).collect();
        let rows = r2_integrand_check(&profile, &grid, 50_000, &mut stream).unwrap();
        for row in rows {
            assert!(row.pass, "t = {}: lhs = {} bound = {}", row.t, row.lhs, row.bound);
        }
    }
}
