//! Generators for triangular arrays of martingale differences with exact
//! per-step conditional moments.
//!
//! Two families are implemented: iid rows (Rademacher, standard Gaussian,
//! symmetric two-point with an atom at zero) and a nonstationary ARCH model
//! `d_i = eta_{i-1} eps_i` whose innovations are three-point laws
//! `P(eps_k = 0) = 1 - 2 p_k`, `P(eps_k = +-a_k) = p_k` with
//! `2 a_k^2 p_k = 1`, `p_k = (1 - 1/(k+1))/2`, and power-law recursion
//! weights `u_l = (l+1)^{-gamma}`. Every generator is normalized so that
//! `E d_j = 0` and `E d_j^2 = 1` for all j.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::streams::RngStream;

/// Marginal distribution of an iid row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IidDist {
    Rademacher,
    StandardGaussian,
    /// Values `{0, +a, -a}` with `P(+-a) = 1/(2a^2)`, so the variance is 1
    /// by construction. Requires `a >= 1`.
    TwoPointSymmetric { a: f64 },
}

impl IidDist {
    /// Exact (unconditional) second, third and fourth moments.
    pub fn moments(&self) -> (f64, f64, f64) {
        match self {
            IidDist::Rademacher => (1.0, 0.0, 1.0),
            IidDist::StandardGaussian => (1.0, 0.0, 3.0),
            IidDist::TwoPointSymmetric { a } => (1.0, 0.0, a * a),
        }
    }

    /// Characteristic function at `s`; real because all three laws are
    /// symmetric.
    pub fn cf(&self, s: f64) -> f64 {
        match self {
            IidDist::Rademacher => s.cos(),
            IidDist::StandardGaussian => (-0.5 * s * s).exp(),
            IidDist::TwoPointSymmetric { a } => {
                let p = 0.5 / (a * a);
                (1.0 - 2.0 * p) + 2.0 * p * (a * s).cos()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let IidDist::TwoPointSymmetric { a } = self {
            if !a.is_finite() || *a < 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "two-point-symmetric requires a >= 1 so the atom \
                     probabilities 1/(2a^2) stay below 1/2 (got a = {a})"
                )));
            }
        }
        Ok(())
    }
}

/// Which family the generator belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeneratorKind {
    Iid { dist: IidDist },
    Arch { gamma: f64 },
}

/// Full description of a martingale-difference row generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub kind: GeneratorKind,
    pub n: usize,
}

impl GeneratorSpec {
    pub fn iid(dist: IidDist, n: usize) -> Self {
        Self {
            kind: GeneratorKind::Iid { dist },
            n,
        }
    }

    pub fn arch(gamma: f64, n: usize) -> Self {
        Self {
            kind: GeneratorKind::Arch { gamma },
            n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidDimension(0));
        }
        match &self.kind {
            GeneratorKind::Iid { dist } => dist.validate(),
            GeneratorKind::Arch { gamma } => {
                if !gamma.is_finite() || *gamma <= 2.0 {
                    Err(Error::InvalidParameter(format!(
                        "ARCH requires gamma > 2 (got {gamma})"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Short label used in CSV output.
    pub fn label(&self) -> String {
        match &self.kind {
            GeneratorKind::Iid { dist } => match dist {
                IidDist::Rademacher => "iid-rademacher".to_string(),
                IidDist::StandardGaussian => "iid-gaussian".to_string(),
                IidDist::TwoPointSymmetric { a } => format!("iid-two-point(a={a})"),
            },
            GeneratorKind::Arch { gamma } => format!("arch(gamma={gamma})"),
        }
    }
}

/// One realized martingale-difference path together with the exact one-step
/// conditional moments along it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MdsPath {
    /// The differences d_1..d_n.
    pub d: Vec<f64>,
    /// E_{j-1}(d_j^2).
    pub cond_var: Vec<f64>,
    /// E_{j-1}(d_j^3).
    pub cond_m3: Vec<f64>,
    /// E_{j-1}(d_j^4).
    pub cond_m4: Vec<f64>,
    /// ARCH only: eta_{j-1}^2 for j = 1..n (so the first entry is 1).
    pub aux_eta2: Vec<f64>,
}

impl MdsPath {
    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    fn clear(&mut self) {
        self.d.clear();
        self.cond_var.clear();
        self.cond_m3.clear();
        self.cond_m4.clear();
        self.aux_eta2.clear();
    }
}

/// Precomputed ARCH step tables (1-based step k stored at index k-1).
#[derive(Debug, Clone)]
struct ArchTables {
    /// p_k = (1 - 1/(k+1))/2 for k = 1..n.
    p: Vec<f64>,
    /// a_k = sqrt(1/(2 p_k)) for k = 1..n.
    a: Vec<f64>,
    /// a_k^2 = 1/(2 p_k), kept in closed form so conditional fourth moments
    /// are exact.
    a_sq: Vec<f64>,
    /// u_l = (l+1)^{-gamma} for l = 1..n-1.
    u: Vec<f64>,
    /// 1 / alpha_k with alpha_k = sum_{l<=k} u_l, for k = 1..n-1.
    alpha_inv: Vec<f64>,
}

impl ArchTables {
    fn build(gamma: f64, n: usize) -> Self {
        let mut p = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        let mut a_sq = Vec::with_capacity(n);
        for k in 1..=n {
            let pk = 0.5 * (1.0 - 1.0 / (k as f64 + 1.0));
            let ak_sq = 0.5 / pk;
            p.push(pk);
            a.push(ak_sq.sqrt());
            a_sq.push(ak_sq);
        }
        let m = n.saturating_sub(1);
        let mut u = Vec::with_capacity(m);
        let mut alpha_inv = Vec::with_capacity(m);
        let mut alpha = 0.0;
        for l in 1..=m {
            let ul = (l as f64 + 1.0).powf(-gamma);
            alpha += ul;
            u.push(ul);
            alpha_inv.push(1.0 / alpha);
        }
        Self {
            p,
            a,
            a_sq,
            u,
            alpha_inv,
        }
    }
}

/// Reusable per-thread scratch for the streaming weighted-sum sampler.
#[derive(Debug, Clone, Default)]
pub struct PathScratch {
    eps2_rev: Vec<f64>,
}

/// A ready-to-sample generator with validated parameters and precomputed
/// step tables.
#[derive(Debug, Clone)]
pub struct Generator {
    spec: GeneratorSpec,
    arch: Option<ArchTables>,
}

/// Dot product, the inner kernel of the ARCH variance recursion. The whole
/// simulation budget is spent here, so x86-64 hosts with AVX2/FMA get a
/// hand-vectorized path; everything else falls back to the unrolled scalar
/// version.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2")
            && std::arch::is_x86_feature_detected!("fma")
        {
            // Safety: feature presence checked above; the kernel only reads
            // within `a[..n]` / `b[..n]`.
            return unsafe { dot_avx2(a, b) };
        }
    }
    dot_scalar(a, b)
}

#[inline]
fn dot_scalar(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let mut i = 0usize;
    while i + 8 <= n {
        for k in 0..8 {
            acc[k] += a[i + k] * b[i + k];
        }
        i += 8;
    }
    let mut tail = 0.0;
    while i < n {
        tail += a[i] * b[i];
        i += 1;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn dot_avx2(a: &[f64], b: &[f64]) -> f64 {
    use core::arch::x86_64::*;
    let n = a.len().min(b.len());
    let pa = a.as_ptr();
    let pb = b.as_ptr();
    let mut acc0 = _mm256_setzero_pd();
    let mut acc1 = _mm256_setzero_pd();
    let mut acc2 = _mm256_setzero_pd();
    let mut acc3 = _mm256_setzero_pd();
    let mut i = 0usize;
    while i + 16 <= n {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(pa.add(i)), _mm256_loadu_pd(pb.add(i)), acc0);
        acc1 = _mm256_fmadd_pd(
            _mm256_loadu_pd(pa.add(i + 4)),
            _mm256_loadu_pd(pb.add(i + 4)),
            acc1,
        );
        acc2 = _mm256_fmadd_pd(
            _mm256_loadu_pd(pa.add(i + 8)),
            _mm256_loadu_pd(pb.add(i + 8)),
            acc2,
        );
        acc3 = _mm256_fmadd_pd(
            _mm256_loadu_pd(pa.add(i + 12)),
            _mm256_loadu_pd(pb.add(i + 12)),
            acc3,
        );
        i += 16;
    }
    while i + 4 <= n {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(pa.add(i)), _mm256_loadu_pd(pb.add(i)), acc0);
        i += 4;
    }
    let acc = _mm256_add_pd(_mm256_add_pd(acc0, acc1), _mm256_add_pd(acc2, acc3));
    let mut tmp = [0.0f64; 4];
    _mm256_storeu_pd(tmp.as_mut_ptr(), acc);
    let mut s = (tmp[0] + tmp[1]) + (tmp[2] + tmp[3]);
    while i < n {
        s += *a.get_unchecked(i) * *b.get_unchecked(i);
        i += 1;
    }
    s
}

/// Draws a three-point innovation `{0, +a, -a}` with `P(+-a) = p` from one
/// uniform variate.
#[inline]
fn draw_three_point(stream: &mut RngStream, p: f64, a: f64) -> f64 {
    let v: f64 = stream.random();
    if v < 1.0 - 2.0 * p {
        0.0
    } else if v < 1.0 - p {
        a
    } else {
        -a
    }
}

/// Bit buffer turning one u64 draw into 64 Rademacher signs.
struct RademacherBits {
    bits: u64,
    left: u32,
}

impl RademacherBits {
    fn new() -> Self {
        Self { bits: 0, left: 0 }
    }

    /// Returns a sign bit (1 means negative).
    #[inline]
    fn next(&mut self, stream: &mut RngStream) -> u64 {
        if self.left == 0 {
            self.bits = stream.random();
            self.left = 64;
        }
        let b = self.bits & 1;
        self.bits >>= 1;
        self.left -= 1;
        b
    }
}

impl Generator {
    pub fn new(spec: GeneratorSpec) -> Result<Self> {
        spec.validate()?;
        let arch = match spec.kind {
            GeneratorKind::Arch { gamma } => Some(ArchTables::build(gamma, spec.n)),
            GeneratorKind::Iid { .. } => None,
        };
        Ok(Self { spec, arch })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    /// `E d_k^2` per index; identically 1 for both families, so the row
    /// normalization `sum_k E d_k^2 = n` holds exactly.
    pub fn variance_profile(&self) -> Vec<f64> {
        vec![1.0; self.spec.n]
    }

    pub fn scratch(&self) -> PathScratch {
        PathScratch {
            eps2_rev: vec![0.0; self.spec.n],
        }
    }

    /// Samples a full path with its conditional-moment oracles into `path`,
    /// reusing its buffers.
    pub fn sample_path_into(&self, stream: &mut RngStream, path: &mut MdsPath) {
        path.clear();
        let n = self.spec.n;
        match &self.spec.kind {
            GeneratorKind::Iid { dist } => {
                let (m2, m3, m4) = dist.moments();
                path.cond_var.resize(n, m2);
                path.cond_m3.resize(n, m3);
                path.cond_m4.resize(n, m4);
                match dist {
                    IidDist::Rademacher => {
                        let mut bits = RademacherBits::new();
                        for _ in 0..n {
                            let sign = bits.next(stream);
                            path.d.push(if sign == 1 { -1.0 } else { 1.0 });
                        }
                    }
                    IidDist::StandardGaussian => {
                        for _ in 0..n {
                            path.d.push(stream.sample(StandardNormal));
                        }
                    }
                    IidDist::TwoPointSymmetric { a } => {
                        let p = 0.5 / (a * a);
                        for _ in 0..n {
                            path.d.push(draw_three_point(stream, p, *a));
                        }
                    }
                }
            }
            GeneratorKind::Arch { .. } => {
                let t = self.arch.as_ref().expect("arch tables");
                // eps^2 history stored newest-first from the back of the
                // buffer, so each variance recursion is a forward dot.
                let mut buf = vec![0.0f64; n];
                let mut eta2 = 1.0f64;
                for j in 1..=n {
                    if j >= 2 {
                        let k = j - 1;
                        eta2 = dot(&t.u[..k], &buf[n - k..]) * t.alpha_inv[k - 1];
                    }
                    let eps = draw_three_point(stream, t.p[j - 1], t.a[j - 1]);
                    buf[n - j] = eps * eps;
                    path.d.push(eta2.sqrt() * eps);
                    path.cond_var.push(eta2);
                    path.cond_m3.push(0.0);
                    path.cond_m4.push(eta2 * eta2 * t.a_sq[j - 1]);
                    path.aux_eta2.push(eta2);
                }
            }
        }
    }

    pub fn sample_path(&self, stream: &mut RngStream) -> MdsPath {
        let mut path = MdsPath::default();
        self.sample_path_into(stream, &mut path);
        path
    }

    /// Samples `S_n(theta) = sum_j theta_j d_j` for one fresh path without
    /// materializing it. Draws exactly the same variates in the same order
    /// as [`Generator::sample_path_into`].
    pub fn weighted_sum(
        &self,
        theta: &[f64],
        stream: &mut RngStream,
        scratch: &mut PathScratch,
    ) -> f64 {
        debug_assert_eq!(theta.len(), self.spec.n);
        let n = self.spec.n;
        match &self.spec.kind {
            GeneratorKind::Iid { dist } => match dist {
                IidDist::Rademacher => {
                    let mut bits = RademacherBits::new();
                    let mut acc = 0.0;
                    for &w in theta {
                        let sign = bits.next(stream);
                        acc += f64::from_bits(w.to_bits() ^ (sign << 63));
                    }
                    acc
                }
                IidDist::StandardGaussian => {
                    let mut acc = 0.0;
                    for &w in theta {
                        let g: f64 = stream.sample(StandardNormal);
                        acc += w * g;
                    }
                    acc
                }
                IidDist::TwoPointSymmetric { a } => {
                    let p = 0.5 / (a * a);
                    let mut acc = 0.0;
                    for &w in theta {
                        acc += w * draw_three_point(stream, p, *a);
                    }
                    acc
                }
            },
            GeneratorKind::Arch { .. } => {
                let t = self.arch.as_ref().expect("arch tables");
                let buf = &mut scratch.eps2_rev;
                buf.resize(n, 0.0);
                let mut acc = 0.0;
                let mut eta2 = 1.0f64;
                for j in 1..=n {
                    if j >= 2 {
                        let k = j - 1;
                        eta2 = dot(&t.u[..k], &buf[n - k..]) * t.alpha_inv[k - 1];
                    }
                    let eps = draw_three_point(stream, t.p[j - 1], t.a[j - 1]);
                    buf[n - j] = eps * eps;
                    acc += theta[j - 1] * eta2.sqrt() * eps;
                }
                acc
            }
        }
    }

    /// Exact one-step conditional characteristic function
    /// `E(e^{i s d_j} | F_{j-1})` evaluated along a realized path.
    /// `j` is 1-based; `path` supplies the ARCH volatility state.
    pub fn step_cf(&self, j: usize, path: &MdsPath, s: f64) -> f64 {
        match &self.spec.kind {
            GeneratorKind::Iid { dist } => dist.cf(s),
            GeneratorKind::Arch { .. } => {
                let t = self.arch.as_ref().expect("arch tables");
                let p = t.p[j - 1];
                let eta = path.aux_eta2[j - 1].sqrt();
                (1.0 - 2.0 * p) + 2.0 * p * (s * eta * t.a[j - 1]).cos()
            }
        }
    }

    /// Atoms `(value, probability)` of the one-step conditional law at step
    /// `j`, or `None` for continuous laws (standard Gaussian).
    pub fn step_atoms(&self, j: usize, path: &MdsPath) -> Option<Vec<(f64, f64)>> {
        match &self.spec.kind {
            GeneratorKind::Iid { dist } => match dist {
                IidDist::Rademacher => Some(vec![(1.0, 0.5), (-1.0, 0.5)]),
                IidDist::StandardGaussian => None,
                IidDist::TwoPointSymmetric { a } => {
                    let p = 0.5 / (a * a);
                    Some(vec![(0.0, 1.0 - 2.0 * p), (*a, p), (-*a, p)])
                }
            },
            GeneratorKind::Arch { .. } => {
                let t = self.arch.as_ref().expect("arch tables");
                let p = t.p[j - 1];
                let v = path.aux_eta2[j - 1].sqrt() * t.a[j - 1];
                Some(vec![(0.0, 1.0 - 2.0 * p), (v, p), (-v, p)])
            }
        }
    }

    /// Closed-form right side of the one-step conditional-variance deviation
    /// bound specialized to the fully conditioned case:
    /// `2 alpha_{l-1}^{-1} sum_{j=1}^{l-1} u_j (1 - 2 p_{l-j})`.
    pub fn arch_deviation_bound(&self, ell: usize) -> Result<f64> {
        let t = self
            .arch
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("deviation bound requires ARCH".into()))?;
        if ell == 0 || ell > self.spec.n {
            return Err(Error::InvalidArgument(format!(
                "index {ell} outside 1..={}",
                self.spec.n
            )));
        }
        if ell == 1 {
            return Ok(0.0);
        }
        let k = ell - 1;
        let mut sum = 0.0;
        for j in 1..=k {
            sum += t.u[j - 1] * (1.0 - 2.0 * t.p[ell - j - 1]);
        }
        Ok(2.0 * t.alpha_inv[k - 1] * sum)
    }
}

/// Generates one martingale-difference path (spec-level convenience wrapper;
/// use [`Generator`] directly when sampling in bulk).
pub fn gen_path(spec: &GeneratorSpec, stream: &mut RngStream) -> Result<MdsPath> {
    let generator = Generator::new(*spec)?;
    Ok(generator.sample_path(stream))
}

/// Monte-Carlo estimate of `E |eta_{l-1}^2 - 1|` together with the
/// closed-form bound it must not exceed.
#[derive(Debug, Clone, Serialize)]
pub struct CondVarDeviation {
    pub ell: usize,
    pub estimate: f64,
    pub stderr: f64,
    /// Closed-form deviation bound at the same index.
    pub bound: f64,
}

/// Estimates the L1 deviation of the ARCH conditional variance at step
/// `ell` from its mean 1, over `reps` independent paths.
pub fn arch_cond_var_deviation(
    spec: &GeneratorSpec,
    ell: usize,
    reps: usize,
    stream: &mut RngStream,
) -> Result<CondVarDeviation> {
    let generator = Generator::new(*spec)?;
    let GeneratorKind::Arch { .. } = spec.kind else {
        return Err(Error::InvalidParameter(
            "arch_cond_var_deviation requires an ARCH spec".into(),
        ));
    };
    if ell == 0 || ell > spec.n {
        return Err(Error::InvalidArgument(format!(
            "index {ell} outside 1..={}",
            spec.n
        )));
    }
    let bound = generator.arch_deviation_bound(ell)?;
    if ell == 1 {
        // eta_0 = 1 deterministically.
        return Ok(CondVarDeviation {
            ell,
            estimate: 0.0,
            stderr: 0.0,
            bound,
        });
    }
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be >= 1".into()));
    }
    let t = generator.arch.as_ref().expect("arch tables");
    let k = ell - 1;
    // eta_{l-1}^2 depends only on eps_1..eps_{l-1}; no need for full paths.
    let mut buf = vec![0.0f64; k];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..reps {
        for j in 1..=k {
            let eps = draw_three_point(stream, t.p[j - 1], t.a[j - 1]);
            buf[k - j] = eps * eps;
        }
        let eta2 = dot(&t.u[..k], &buf) * t.alpha_inv[k - 1];
        let dev = (eta2 - 1.0).abs();
        sum += dev;
        sum_sq += dev * dev;
    }
    let m = reps as f64;
    let estimate = sum / m;
    let var = (sum_sq / m - estimate * estimate).max(0.0);
    Ok(CondVarDeviation {
        ell,
        estimate,
        stderr: (var / m).sqrt(),
        bound,
    })
}

/// Report of [`check_martingale_property`].
#[derive(Debug, Clone, Serialize)]
pub struct MartingaleCheck {
    pub reps: usize,
    /// Largest |exact one-step conditional mean| seen over the sampled
    /// histories; must be exactly 0.
    pub max_abs_cond_mean: f64,
    /// Largest per-index |sample mean of d_j| in units of its standard
    /// error.
    pub max_abs_mean_z: f64,
    pub pass: bool,
}

/// Verifies the martingale property: the exact one-step conditional mean is
/// zero along realized histories, and per-index sample means of `d_j` stay
/// within 5 standard errors of zero.
pub fn check_martingale_property(
    spec: &GeneratorSpec,
    reps: usize,
    stream: &mut RngStream,
) -> Result<MartingaleCheck> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be >= 1".into()));
    }
    let generator = Generator::new(*spec)?;
    let n = spec.n;
    let mut sums = vec![0.0f64; n];
    let mut sums_sq = vec![0.0f64; n];
    let mut max_abs_cond_mean = 0.0f64;
    let exact_checks = reps.min(32);
    let mut path = MdsPath::default();
    for rep in 0..reps {
        generator.sample_path_into(stream, &mut path);
        if rep < exact_checks {
            for j in 1..=n {
                if let Some(atoms) = generator.step_atoms(j, &path) {
                    let mean: f64 = atoms.iter().map(|(v, p)| v * p).sum();
                    max_abs_cond_mean = max_abs_cond_mean.max(mean.abs());
                }
                // Continuous symmetric laws have conditional mean 0 by
                // definition of the law; nothing to evaluate.
            }
        }
        for (j, &dj) in path.d.iter().enumerate() {
            sums[j] += dj;
            sums_sq[j] += dj * dj;
        }
    }
    let m = reps as f64;
    let mut max_abs_mean_z = 0.0f64;
    for j in 0..n {
        let mean = sums[j] / m;
        let var = (sums_sq[j] / m - mean * mean).max(0.0);
        let stderr = (var / m).sqrt();
        if stderr > 0.0 {
            max_abs_mean_z = max_abs_mean_z.max(mean.abs() / stderr);
        } else if mean != 0.0 {
            max_abs_mean_z = f64::INFINITY;
        }
    }
    let pass = max_abs_cond_mean == 0.0 && max_abs_mean_z <= 5.0;
    Ok(MartingaleCheck {
        reps,
        max_abs_cond_mean,
        max_abs_mean_z,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::derive_stream;

    fn arch_spec(n: usize) -> GeneratorSpec {
        GeneratorSpec::arch(3.0, n)
    }

    #[test]
    fn arch_requires_gamma_above_two() {
        assert!(GeneratorSpec::arch(2.0, 16).validate().is_err());
        assert!(GeneratorSpec::arch(1.5, 16).validate().is_err());
        assert!(GeneratorSpec::arch(2.1, 16).validate().is_ok());
    }

    #[test]
    fn two_point_requires_a_at_least_one() {
        assert!(GeneratorSpec::iid(IidDist::TwoPointSymmetric { a: 0.9 }, 4)
            .validate()
            .is_err());
        assert!(GeneratorSpec::iid(IidDist::TwoPointSymmetric { a: 1.0 }, 4)
            .validate()
            .is_ok());
    }

    #[test]
    fn arch_first_step_law() {
        // p_1 = 1/4, a_1^2 = 2: d_1 in {0, +-sqrt(2)} with P(0) = 1/2,
        // cond_var_1 = 1 and cond_m4_1 = 2 exactly.
        let mut stream = derive_stream(1, &[0]).unwrap();
        let spec = arch_spec(4);
        let sq2 = 2.0f64.sqrt();
        let mut counts = [0usize; 3];
        let reps = 40_000;
        for _ in 0..reps {
            let path = gen_path(&spec, &mut stream).unwrap();
            assert_eq!(path.cond_var[0], 1.0);
            assert_eq!(path.cond_m4[0], 2.0);
            assert_eq!(path.cond_m3[0], 0.0);
            assert_eq!(path.aux_eta2[0], 1.0);
            let d1 = path.d[0];
            if d1 == 0.0 {
                counts[0] += 1;
            } else if (d1 - sq2).abs() < 1e-15 {
                counts[1] += 1;
            } else if (d1 + sq2).abs() < 1e-15 {
                counts[2] += 1;
            } else {
                panic!("unexpected d_1 = {d1}");
            }
        }
        let f0 = counts[0] as f64 / reps as f64;
        let f1 = counts[1] as f64 / reps as f64;
        let f2 = counts[2] as f64 / reps as f64;
        assert!((f0 - 0.5).abs() < 0.01, "P(0) ~ {f0}");
        assert!((f1 - 0.25).abs() < 0.01, "P(+sqrt2) ~ {f1}");
        assert!((f2 - 0.25).abs() < 0.01, "P(-sqrt2) ~ {f2}");
    }

    #[test]
    fn rademacher_path_moments() {
        let mut stream = derive_stream(2, &[0]).unwrap();
        let spec = GeneratorSpec::iid(IidDist::Rademacher, 100);
        let path = gen_path(&spec, &mut stream).unwrap();
        for j in 0..100 {
            assert!(path.d[j] == 1.0 || path.d[j] == -1.0);
            assert_eq!(path.cond_var[j], 1.0);
            assert_eq!(path.cond_m3[j], 0.0);
            assert_eq!(path.cond_m4[j], 1.0);
        }
        assert!(path.aux_eta2.is_empty());
    }

    #[test]
    fn arch_eta1_deviation_is_exactly_one_in_mean() {
        // eta_1^2 = eps_1^2 in {0, 2} with equal mass at distance 1 from 1,
        // so E|eta_1^2 - 1| = 1; the closed-form bound at l = 2 is also 1.
        let mut stream = derive_stream(3, &[0]).unwrap();
        let spec = arch_spec(8);
        let dev = arch_cond_var_deviation(&spec, 2, 100_000, &mut stream).unwrap();
        assert_eq!(dev.bound, 1.0);
        assert!(
            (dev.estimate - 1.0).abs() <= 5.0 * dev.stderr.max(1e-12),
            "estimate = {} +- {}",
            dev.estimate,
            dev.stderr
        );
    }

    #[test]
    fn arch_deviation_at_one_is_zero() {
        let mut stream = derive_stream(3, &[1]).unwrap();
        let spec = arch_spec(8);
        let dev = arch_cond_var_deviation(&spec, 1, 10, &mut stream).unwrap();
        assert_eq!(dev.estimate, 0.0);
        assert_eq!(dev.bound, 0.0);
    }

    #[test]
    fn arch_deviation_decays_like_one_over_ell() {
        // || E_{l-1}(d_l^2) - 1 ||_1 << 1/l: check the closed-form bound
        // decays at least that fast along a dyadic ladder.
        let spec = arch_spec(512);
        let generator = Generator::new(spec).unwrap();
        for ell in [8usize, 16, 32, 64, 128, 256] {
            let b1 = generator.arch_deviation_bound(ell).unwrap();
            let b2 = generator.arch_deviation_bound(2 * ell).unwrap();
            assert!(b2 <= 0.6 * b1, "bound({}) = {b1}, bound({}) = {b2}", ell, 2 * ell);
        }
        // And the MC estimate sits below the bound.
        let mut stream = derive_stream(4, &[0]).unwrap();
        let dev = arch_cond_var_deviation(&spec, 64, 20_000, &mut stream).unwrap();
        assert!(dev.estimate <= dev.bound + 5.0 * dev.stderr);
    }

    #[test]
    fn arch_paths_are_bounded() {
        let mut stream = derive_stream(5, &[0]).unwrap();
        let spec = arch_spec(128);
        let generator = Generator::new(spec).unwrap();
        let mut path = MdsPath::default();
        for _ in 0..200 {
            generator.sample_path_into(&mut stream, &mut path);
            for j in 0..128 {
                assert!(path.d[j].abs() <= 2.0);
                assert!(path.aux_eta2[j] <= 2.0 + 1e-12);
                // Conditional Jensen and Cauchy-Schwarz.
                assert!(path.cond_m4[j] >= path.cond_var[j] * path.cond_var[j] - 1e-12);
                assert!(
                    path.cond_m3[j] * path.cond_m3[j]
                        <= path.cond_var[j] * path.cond_m4[j] + 1e-12
                );
            }
        }
    }

    #[test]
    fn arch_eta2_has_unit_mean() {
        let mut stream = derive_stream(6, &[0]).unwrap();
        let spec = arch_spec(32);
        let generator = Generator::new(spec).unwrap();
        let reps = 100_000;
        let mut path = MdsPath::default();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..reps {
            generator.sample_path_into(&mut stream, &mut path);
            let e = path.aux_eta2[31];
            sum += e;
            sum_sq += e * e;
        }
        let mean = sum / reps as f64;
        let var = (sum_sq / reps as f64 - mean * mean).max(0.0);
        let stderr = (var / reps as f64).sqrt();
        assert!((mean - 1.0).abs() <= 5.0 * stderr, "mean = {mean} +- {stderr}");
    }

    #[test]
    fn martingale_property_holds() {
        let mut stream = derive_stream(7, &[0]).unwrap();
        for spec in [
            arch_spec(64),
            GeneratorSpec::iid(IidDist::Rademacher, 64),
            GeneratorSpec::iid(IidDist::StandardGaussian, 64),
            GeneratorSpec::iid(IidDist::TwoPointSymmetric { a: 2.0 }, 64),
        ] {
            let check = check_martingale_property(&spec, 20_000, &mut stream).unwrap();
            assert_eq!(check.max_abs_cond_mean, 0.0, "{}", spec.label());
            assert!(check.pass, "{}: {check:?}", spec.label());
        }
    }

    #[test]
    fn weighted_sum_matches_materialized_path() {
        let n = 97;
        let theta: Vec<f64> = {
            let mut stream = derive_stream(8, &[0]).unwrap();
            crate::sphere::sample_sphere(n, &mut stream)
                .unwrap()
                .coords()
                .to_vec()
        };
        for spec in [
            arch_spec(n),
            GeneratorSpec::iid(IidDist::Rademacher, n),
            GeneratorSpec::iid(IidDist::StandardGaussian, n),
            GeneratorSpec::iid(IidDist::TwoPointSymmetric { a: 1.5 }, n),
        ] {
            let generator = Generator::new(spec).unwrap();
            let mut scratch = generator.scratch();
            let mut s1 = derive_stream(9, &[1]).unwrap();
            let mut s2 = derive_stream(9, &[1]).unwrap();
            for _ in 0..20 {
                let fast = generator.weighted_sum(&theta, &mut s1, &mut scratch);
                let path = generator.sample_path(&mut s2);
                let slow: f64 = theta.iter().zip(&path.d).map(|(w, d)| w * d).sum();
                assert!(
                    (fast - slow).abs() <= 1e-12,
                    "{}: {fast} vs {slow}",
                    spec.label()
                );
            }
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = arch_spec(64);
        let mut a = derive_stream(10, &[0]).unwrap();
        let mut b = derive_stream(10, &[0]).unwrap();
        assert_eq!(gen_path(&spec, &mut a).unwrap(), gen_path(&spec, &mut b).unwrap());
    }

    #[test]
    fn spec_serde_round_trip() {
        for spec in [
            arch_spec(256),
            GeneratorSpec::iid(IidDist::Rademacher, 64),
            GeneratorSpec::iid(IidDist::TwoPointSymmetric { a: 2.0 }, 8),
        ] {
            let json = serde_json::to_string(&spec).unwrap();
            let back: GeneratorSpec = serde_json::from_str(&json).unwrap();
            assert_eq!(spec, back);
        }
    }

    #[test]
    fn dot_kernel_matches_naive() {
        for n in [0usize, 1, 3, 7, 8, 15, 16, 17, 64, 137, 512] {
            let a: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
            let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).cos()).collect();
            let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!((dot(&a, &b) - naive).abs() < 1e-12, "n = {n}");
            assert!((dot_scalar(&a, &b) - naive).abs() < 1e-12, "n = {n}");
        }
    }
}
