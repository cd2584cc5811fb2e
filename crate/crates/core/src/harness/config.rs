//! Experiment configuration: JSON-serializable, validated in code.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::distance::dkw_radius;
use crate::error::{Error, Result};
use crate::martingales::{GeneratorKind, GeneratorSpec, IidDist};
use crate::quantities::GammaNormalization;

/// Built-in experiment recipes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Expected Kolmogorov distance of sphere-randomized sums across n,
    /// with a rate fit.
    RandomizedRate,
    /// The fixed-weights 1/sqrt(n) comparison across n, with a rate fit.
    ClassicalRate,
    /// Bound-quantity estimation and theorem-bound evaluation across n.
    Quantities,
    /// CF-gap/deviation-bound ratio curves, truncation frequencies and the
    /// smoothing integral.
    CfDiagnostics,
    /// Gaussian-mixture inequality battery over heterogeneous variance
    /// profiles.
    GaussmixCheck,
    /// Sphere moment self-tests plus the stream cross-correlation check.
    SphereSelftest,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::RandomizedRate => "randomized-rate",
            ExperimentKind::ClassicalRate => "classical-rate",
            ExperimentKind::Quantities => "quantities",
            ExperimentKind::CfDiagnostics => "cf-diagnostics",
            ExperimentKind::GaussmixCheck => "gaussmix-check",
            ExperimentKind::SphereSelftest => "sphere-selftest",
        }
    }
}

/// Worker thread count: a number or "auto".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThreadCount {
    Fixed(usize),
    Keyword(AutoKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoKeyword {
    Auto,
}

impl Default for ThreadCount {
    fn default() -> Self {
        ThreadCount::Keyword(AutoKeyword::Auto)
    }
}

impl ThreadCount {
    pub fn resolve(&self) -> usize {
        match self {
            ThreadCount::Fixed(k) => (*k).max(1),
            ThreadCount::Keyword(AutoKeyword::Auto) => std::thread::available_parallelism()
                .map(|v| v.get())
                .unwrap_or(1),
        }
    }
}

/// Smoothing window rule: either a constant or `C*sqrt(log n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum T0Rule {
    Constant(f64),
    SqrtLog { coeff: f64 },
}

impl T0Rule {
    pub fn parse(rule: &str) -> Result<Self> {
        let compact: String = rule.chars().filter(|c| !c.is_whitespace()).collect();
        for suffix in ["*sqrt(log(n))", "*sqrt(logn)"] {
            if let Some(coeff) = compact.strip_suffix(suffix) {
                let coeff: f64 = coeff.parse().map_err(|_| {
                    Error::InvalidConfig(format!("cannot parse T0 rule coefficient in {rule:?}"))
                })?;
                if !(coeff > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "T0 rule coefficient must be positive in {rule:?}"
                    )));
                }
                return Ok(T0Rule::SqrtLog { coeff });
            }
        }
        let value: f64 = compact.parse().map_err(|_| {
            Error::InvalidConfig(format!(
                "T0 rule {rule:?} is neither a number nor C*sqrt(log n)"
            ))
        })?;
        if !(value > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "constant T0 must exceed 1 (got {rule:?})"
            )));
        }
        Ok(T0Rule::Constant(value))
    }

    pub fn eval(&self, n: usize) -> f64 {
        match self {
            T0Rule::Constant(v) => *v,
            // Clamp so tiny n still gives a valid window T0 > 1.
            T0Rule::SqrtLog { coeff } => (coeff * (n as f64).ln().max(0.0).sqrt()).max(1.25),
        }
    }
}

fn default_outer() -> usize {
    64
}
fn default_inner() -> usize {
    1_000_000
}
fn default_delta() -> f64 {
    0.05
}
fn default_t0_rule() -> String {
    "4*sqrt(log n)".to_string()
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}

/// A fully described experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub generator: GeneratorKind,
    pub n_list: Vec<usize>,
    /// Outer sample count (theta draws per n).
    #[serde(rename = "M", default = "default_outer")]
    pub outer_samples: usize,
    /// Inner sample count (paths per theta; replications for quantities and
    /// theta draws for the gaussmix battery).
    #[serde(rename = "m", default = "default_inner")]
    pub inner_samples: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(rename = "T0_rule", default = "default_t0_rule")]
    pub t0_rule: String,
    pub master_seed: u64,
    #[serde(default)]
    pub threads: ThreadCount,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Log-power for the rate fit; default 2 for ARCH randomized rates and
    /// 0 otherwise.
    #[serde(default)]
    pub fit_q: Option<f64>,
    /// Gamma normalization used when evaluating the fast-rate bound.
    #[serde(default)]
    pub gamma_normalization: GammaNormalization,
}

impl ExperimentConfig {
    pub fn spec_for(&self, n: usize) -> GeneratorSpec {
        GeneratorSpec {
            kind: self.generator,
            n,
        }
    }

    pub fn default_fit_q(&self) -> f64 {
        if let Some(q) = self.fit_q {
            return q;
        }
        match (self.experiment, self.generator) {
            (ExperimentKind::RandomizedRate, GeneratorKind::Arch { .. }) => 2.0,
            _ => 0.0,
        }
    }

    /// Rough scale of the signal the recipe is trying to measure at row
    /// length n; None when the truth is 0 (Gaussian null) or the recipe has
    /// no distance signal.
    pub fn expected_signal(&self, n: usize) -> Option<f64> {
        let gaussian = matches!(
            self.generator,
            GeneratorKind::Iid {
                dist: IidDist::StandardGaussian
            }
        );
        if gaussian || n < 2 {
            return None;
        }
        match self.experiment {
            ExperimentKind::RandomizedRate => {
                let nf = n as f64;
                Some(nf.ln().powi(2) / nf)
            }
            ExperimentKind::ClassicalRate => Some(1.0 / (n as f64).sqrt()),
            _ => None,
        }
    }

    /// Validates the whole config and returns sizing warnings (non-fatal).
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.n_list.is_empty() {
            return Err(Error::InvalidConfig("n_list must be nonempty".into()));
        }
        for pair in self.n_list.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::InvalidConfig(
                    "n_list must be strictly increasing".into(),
                ));
            }
        }
        if self.n_list[0] == 0 {
            return Err(Error::InvalidConfig("n values must be >= 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "delta must lie in (0,1), got {}",
                self.delta
            )));
        }
        if self.outer_samples == 0 || self.inner_samples == 0 {
            return Err(Error::InvalidConfig("M and m must be >= 1".into()));
        }
        if let ThreadCount::Fixed(0) = self.threads {
            return Err(Error::InvalidConfig("threads must be >= 1".into()));
        }
        GeneratorSpec {
            kind: self.generator,
            n: *self.n_list.last().expect("nonempty"),
        }
        .validate()?;
        T0Rule::parse(&self.t0_rule)?;

        let mut warnings = Vec::new();
        let radius = dkw_radius(self.inner_samples, self.delta);
        for &n in &self.n_list {
            if let Some(signal) = self.expected_signal(n) {
                if radius > signal / 10.0 {
                    warnings.push(format!(
                        "m = {} gives DKW radius {radius:.2e}, above a tenth of the \
                         expected signal {signal:.2e} at n = {n}; estimates will be \
                         noise-limited",
                        self.inner_samples
                    ));
                }
            }
        }
        Ok(warnings)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: ExperimentConfig = serde_json::from_str(&text)?;
        Ok(config)
    }
}
