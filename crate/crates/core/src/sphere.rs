//! Sampling and moment facts for the uniform distribution on the unit
//! sphere S^{n-1}.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::streams::RngStream;

/// Absolute tolerance on the squared-norm invariant of a [`UnitVector`].
pub const NORM_TOL: f64 = 1e-12;

/// A point on the unit sphere S^{n-1}.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector {
    coords: Vec<f64>,
}

impl UnitVector {
    /// Wraps coordinates that already lie on the sphere.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidDimension(0));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("unit vector coordinate"));
        }
        let norm_sq: f64 = coords.iter().map(|c| c * c).sum();
        if (norm_sq - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidArgument(format!(
                "coordinates have squared norm {norm_sq}, not 1 within {NORM_TOL}"
            )));
        }
        Ok(Self { coords })
    }

    /// The classical deterministic weights theta_i = 1/sqrt(n).
    pub fn equal_weights(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDimension(0));
        }
        let w = 1.0 / (n as f64).sqrt();
        Ok(Self {
            coords: vec![w; n],
        })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

/// Draws a uniform point on S^{n-1} by normalizing n independent standard
/// Gaussians.
pub fn sample_sphere(n: usize, stream: &mut RngStream) -> Result<UnitVector> {
    if n == 0 {
        return Err(Error::InvalidDimension(0));
    }
    let mut coords = vec![0.0f64; n];
    loop {
        let mut norm_sq = 0.0;
        for c in coords.iter_mut() {
            let g: f64 = stream.sample(StandardNormal);
            *c = g;
            norm_sq += g * g;
        }
        let norm = norm_sq.sqrt();
        // An all-(near-)zero draw has probability ~0 but would blow up the
        // division; redraw instead.
        if norm < 1e-300 {
            continue;
        }
        for c in coords.iter_mut() {
            *c /= norm;
        }
        return Ok(UnitVector { coords });
    }
}

/// Exact coordinate moments of the uniform sphere distribution:
/// `E theta_k^2 = 1/n` and `E theta_k^4 = 3/(n(n+2))`.
pub fn sphere_moment(n: usize, power: u32) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidDimension(0));
    }
    let nf = n as f64;
    match power {
        2 => Ok(1.0 / nf),
        4 => Ok(3.0 / (nf * (nf + 2.0))),
        p => Err(Error::UnsupportedPower(p)),
    }
}

/// One row of a [`SphereMomentReport`]: empirical vs exact coordinate moment.
#[derive(Debug, Clone, Serialize)]
pub struct MomentCheck {
    pub power: u32,
    pub empirical: f64,
    pub exact: f64,
    /// Standardized deviation (empirical - exact) / stderr.
    pub z_score: f64,
}

/// Self-test report comparing empirical sphere coordinate moments with the
/// closed forms.
#[derive(Debug, Clone, Serialize)]
pub struct SphereMomentReport {
    pub n: usize,
    pub draws: usize,
    pub checks: Vec<MomentCheck>,
    /// False when any |z| exceeds 5.
    pub pass: bool,
}

/// Estimates `E theta_1^2` and `E theta_1^4` over `draws` samples and
/// standardizes the deviations from the exact values.
pub fn check_sphere_moments(
    n: usize,
    draws: usize,
    stream: &mut RngStream,
) -> Result<SphereMomentReport> {
    if n == 0 {
        return Err(Error::InvalidDimension(0));
    }
    if draws < 1000 {
        return Err(Error::InvalidArgument(format!(
            "draws = {draws}, need at least 1000"
        )));
    }
    let mut sum2 = 0.0;
    let mut sum4 = 0.0;
    let mut sum2_sq = 0.0;
    let mut sum4_sq = 0.0;
    for _ in 0..draws {
        let theta = sample_sphere(n, stream)?;
        let t2 = theta.coords()[0] * theta.coords()[0];
        let t4 = t2 * t2;
        sum2 += t2;
        sum4 += t4;
        sum2_sq += t2 * t2;
        sum4_sq += t4 * t4;
    }
    let m = draws as f64;
    let mut checks = Vec::with_capacity(2);
    for (power, sum, sum_sq) in [(2u32, sum2, sum2_sq), (4u32, sum4, sum4_sq)] {
        let empirical = sum / m;
        let exact = sphere_moment(n, power)?;
        let var = (sum_sq / m - empirical * empirical).max(0.0);
        let stderr = (var / m).sqrt();
        let z_score = if stderr > 0.0 {
            (empirical - exact) / stderr
        } else {
            // Degenerate case (n = 1): the moment is deterministic.
            if empirical == exact {
                0.0
            } else {
                f64::INFINITY
            }
        };
        checks.push(MomentCheck {
            power,
            empirical,
            exact,
            z_score,
        });
    }
    let pass = checks.iter().all(|c| c.z_score.abs() <= 5.0);
    Ok(SphereMomentReport {
        n,
        draws,
        checks,
        pass,
    })
}
