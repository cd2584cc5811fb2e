//! Experiment orchestration: deterministic streams, recipe execution and
//! result persistence.

use std::fs;

use rand::RngCore;
use serde::Serialize;

use crate::charfn::{self, DEFAULT_RATIO_THRESHOLD};
use crate::distance::{self, dkw_radius};
use crate::error::{Error, Result};
use crate::gaussmix::{self, VarianceProfile};
use crate::martingales::{Generator, GeneratorKind};
use crate::quantities::{self, BoundOptions, TheoremBound};
use crate::ratefit::{fit_rate, RatePoint, RateSeries};
use crate::sphere;
use crate::streams::derive_stream;

use super::config::{ExperimentConfig, ExperimentKind, T0Rule};
use super::report::{emit_plotdata, format_float, write_csv, write_json, ResultRecord, TableRef};

/// Stream-derivation purpose tags; distinct per call site so no two
/// estimators ever share a stream.
mod tag {
    pub const DISTANCE: u64 = 1;
    pub const QUANTITIES: u64 = 2;
    pub const CF_DIAG: u64 = 3;
    pub const CF_ESSEEN: u64 = 4;
    pub const GAUSSMIX: u64 = 5;
    pub const SPHERE: u64 = 6;
    pub const STREAM_CHECK: u64 = 7;
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    experiment_id: String,
    tool_version: &'static str,
    started_at: String,
    finished_at: String,
    master_seed: u64,
    threads: usize,
    warnings: Vec<String>,
    failures: &'a [String],
    config: &'a ExperimentConfig,
}

/// Executes the recipe named by the config, writes manifest and CSV/JSON
/// tables under `out_dir`, and prints a short summary. The exit policy
/// belongs to the caller: a nonempty `failures` list in the returned record
/// means an invariant check failed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultRecord> {
    let warnings = config.validate()?;
    let threads = config.threads.resolve();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot build thread pool: {e}")))?;
    fs::create_dir_all(&config.out_dir)?;
    let started_at = chrono::Utc::now();

    let mut record = ResultRecord {
        experiment_id: format!("{}-seed{}", config.experiment.name(), config.master_seed),
        out_dir: config.out_dir.clone(),
        manifest_path: config.out_dir.join("manifest.json"),
        tables: Vec::new(),
        rate_points: Vec::new(),
        rate_fit: None,
        failures: Vec::new(),
        summary: Vec::new(),
    };
    for w in &warnings {
        record.summary.push(format!("warning: {w}"));
    }

    pool.install(|| match config.experiment {
        ExperimentKind::RandomizedRate => run_rate(config, &mut record, false),
        ExperimentKind::ClassicalRate => run_rate(config, &mut record, true),
        ExperimentKind::Quantities => run_quantities(config, &mut record),
        ExperimentKind::CfDiagnostics => run_cf_diagnostics(config, &mut record),
        ExperimentKind::GaussmixCheck => run_gaussmix(config, &mut record),
        ExperimentKind::SphereSelftest => run_sphere_selftest(config, &mut record),
    })?;

    let manifest = Manifest {
        experiment_id: record.experiment_id.clone(),
        tool_version: env!("CARGO_PKG_VERSION"),
        started_at: started_at.to_rfc3339(),
        finished_at: chrono::Utc::now().to_rfc3339(),
        master_seed: config.master_seed,
        threads,
        warnings,
        failures: &record.failures,
        config,
    };
    write_json(&record.manifest_path, &manifest)?;

    for line in &record.summary {
        println!("[{}] {}", record.experiment_id, line);
    }
    for failure in &record.failures {
        println!("[{}] FAILED: {}", record.experiment_id, failure);
    }
    Ok(record)
}

fn generator_gamma_cell(kind: &GeneratorKind) -> String {
    match kind {
        GeneratorKind::Arch { gamma } => format_float(*gamma),
        GeneratorKind::Iid { .. } => String::new(),
    }
}

fn run_rate(config: &ExperimentConfig, record: &mut ResultRecord, classical: bool) -> Result<()> {
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for &n in &config.n_list {
        let spec = config.spec_for(n);
        // Refuse runs whose inner noise would swamp the signal outright.
        if let Some(signal) = config.expected_signal(n) {
            let radius = dkw_radius(config.inner_samples, config.delta);
            if radius > signal {
                return Err(Error::InvalidConfig(format!(
                    "m = {} gives DKW radius {radius:.2e} above the expected signal \
                     {signal:.2e} at n = {n}; increase m",
                    config.inner_samples
                )));
            }
        }
        let mut stream = derive_stream(config.master_seed, &[tag::DISTANCE, n as u64])?;
        let est = if classical {
            distance::kappa_classical(&spec, n, config.inner_samples, config.delta, &mut stream)?
        } else {
            distance::expected_kappa_randomized(
                &spec,
                n,
                config.outer_samples,
                config.inner_samples,
                config.delta,
                &mut stream,
            )?
        };
        record.summary.push(format!(
            "n = {n}: kappa = {:.5} +- {:.5} (dkw {:.2e})",
            est.value, est.stderr_outer, est.dkw_radius
        ));
        rows.push(vec![
            record.experiment_id.clone(),
            spec.label(),
            n.to_string(),
            generator_gamma_cell(&config.generator),
            est.outer_samples.to_string(),
            est.inner_samples.to_string(),
            format_float(est.delta),
            format_float(est.value),
            format_float(est.stderr_outer),
            format_float(est.dkw_radius),
            config.master_seed.to_string(),
        ]);
        points.push(RatePoint {
            n,
            value: est.value,
            stderr: est.stderr_outer,
        });
    }
    let path = config.out_dir.join("kappa.csv");
    write_csv(
        &path,
        &[
            "experiment_id",
            "generator",
            "n",
            "gamma",
            "M",
            "m",
            "delta",
            "kappa_mean",
            "stderr_outer",
            "dkw_radius",
            "seed",
        ],
        &rows,
    )?;
    record.tables.push(TableRef {
        name: "kappa".into(),
        path,
    });
    record.rate_points = points;

    if record.rate_points.len() >= 3 && record.rate_points.iter().all(|p| p.value > 0.0) {
        let series = RateSeries::new(record.rate_points.clone(), record.experiment_id.clone())?;
        let q = config.default_fit_q();
        let fit = fit_rate(&series, q)?;
        record.summary.push(format!(
            "rate fit: p = {:.4} +- {:.4} (q = {q}), r^2 = {:.4}",
            fit.p, fit.p_stderr, fit.r_squared
        ));
        let fit_path = config.out_dir.join("ratefit.json");
        write_json(&fit_path, &fit)?;
        record.tables.push(TableRef {
            name: "ratefit".into(),
            path: fit_path,
        });
        record.rate_fit = Some(fit);
    } else {
        record
            .summary
            .push("rate fit skipped (need >= 3 positive points)".into());
    }
    let (plot_path, notice) = emit_plotdata(record)?;
    record.tables.push(TableRef {
        name: "plotdata".into(),
        path: plot_path,
    });
    if let Some(notice) = notice {
        record.summary.push(notice);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct QuantitiesJson {
    n: usize,
    #[serde(flatten)]
    quantities: quantities::BoundQuantities,
    fast_rate_bound: f64,
    root_rate_bound: f64,
    seed: u64,
}

fn run_quantities(config: &ExperimentConfig, record: &mut ResultRecord) -> Result<()> {
    let opts = BoundOptions {
        gamma: config.gamma_normalization,
        ..Default::default()
    };
    let mut rows = Vec::new();
    let mut json_records = Vec::new();
    for &n in &config.n_list {
        let spec = config.spec_for(n);
        let mut stream = derive_stream(config.master_seed, &[tag::QUANTITIES, n as u64])?;
        let q = quantities::estimate_quantities(&spec, config.inner_samples, &mut stream)?;
        let (fast, root) = if n >= 2 {
            (
                quantities::theorem_bound(&q, n, TheoremBound::FastRate, opts)?,
                quantities::theorem_bound(&q, n, TheoremBound::RootRate, opts)?,
            )
        } else {
            (f64::NAN, f64::NAN)
        };
        let slack = 3.0 * (q.sigma4sq_stderr + q.c2sq_stderr) + 1e-12;
        if q.sigma4sq_n > q.c2sq_n + slack {
            record.failures.push(format!(
                "n = {n}: sigma4^2 = {} exceeds c2^2 = {}",
                q.sigma4sq_n, q.c2sq_n
            ));
        }
        record.summary.push(format!(
            "n = {n}: alpha = {:.4}, beta = {:.4}, gamma_mean = {:.5}, sigma4^2 = {:.4}, \
             c2^2 = {:.4}{}",
            q.alpha_n,
            q.beta_n,
            q.gamma_mean_n,
            q.sigma4sq_n,
            q.c2sq_n,
            if q.c2sq_noisy { " (c2 noisy)" } else { "" }
        ));
        rows.push(vec![
            record.experiment_id.clone(),
            spec.label(),
            n.to_string(),
            q.reps.to_string(),
            format_float(q.alpha_n),
            format_float(q.alpha_stderr),
            format_float(q.beta_n),
            format_float(q.beta_stderr),
            format_float(q.gamma_sum_n),
            format_float(q.gamma_sum_stderr),
            format_float(q.gamma_mean_n),
            format_float(q.gamma_mean_stderr),
            format_float(q.sigma4sq_n),
            format_float(q.sigma4sq_stderr),
            format_float(q.c2sq_n),
            format_float(q.c2sq_stderr),
            (q.c2sq_noisy as u8).to_string(),
            format_float(fast),
            format_float(root),
            config.master_seed.to_string(),
        ]);
        json_records.push(QuantitiesJson {
            n,
            quantities: q,
            fast_rate_bound: fast,
            root_rate_bound: root,
            seed: config.master_seed,
        });
    }
    let path = config.out_dir.join("quantities.csv");
    write_csv(
        &path,
        &[
            "experiment_id",
            "generator",
            "n",
            "reps",
            "alpha_n",
            "alpha_stderr",
            "beta_n",
            "beta_stderr",
            "gamma_sum_n",
            "gamma_sum_stderr",
            "gamma_mean_n",
            "gamma_mean_stderr",
            "sigma4sq_n",
            "sigma4sq_stderr",
            "c2sq_n",
            "c2sq_stderr",
            "c2sq_noisy",
            "fast_rate_bound",
            "root_rate_bound",
            "seed",
        ],
        &rows,
    )?;
    record.tables.push(TableRef {
        name: "quantities".into(),
        path,
    });
    let json_path = config.out_dir.join("quantities.json");
    write_json(&json_path, &json_records)?;
    record.tables.push(TableRef {
        name: "quantities-json".into(),
        path: json_path,
    });
    Ok(())
}

#[derive(Debug, Serialize)]
struct CfSummary {
    n: usize,
    t0: f64,
    theta_draws: usize,
    inner_samples: usize,
    /// Largest (cf_gap - 3 stderr)/bn over all theta and grid points.
    max_adjusted_ratio: f64,
    ratio_threshold: f64,
    esseen_value: f64,
    esseen_stderr: f64,
    pass: bool,
}

fn run_cf_diagnostics(config: &ExperimentConfig, record: &mut ResultRecord) -> Result<()> {
    let rule = T0Rule::parse(&config.t0_rule)?;
    let theta_draws = config.outer_samples.min(16).max(1);
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &n in &config.n_list {
        let spec = config.spec_for(n);
        let generator = Generator::new(spec)?;
        let t0 = rule.eval(n);
        let grid: Vec<f64> = (1..=16).map(|i| t0 * i as f64 / 16.0).collect();
        let nt = grid.len();
        let mut mean_gap = vec![0.0; nt];
        let mut mean_bn = vec![0.0; nt];
        let mut mean_false = vec![0.0; nt];
        let mut max_adjusted_ratio = 0.0f64;
        for i in 0..theta_draws as u64 {
            let mut theta_stream =
                derive_stream(config.master_seed, &[tag::CF_DIAG, n as u64, i, 0])?;
            let theta = sphere::sample_sphere(n, &mut theta_stream)?;
            let mut path_stream =
                derive_stream(config.master_seed, &[tag::CF_DIAG, n as u64, i, 1])?;
            let diag = charfn::cf_diagnostic(
                &generator,
                &theta,
                &grid,
                config.inner_samples,
                &mut path_stream,
            )?;
            for (k, row) in diag.iter().enumerate() {
                mean_gap[k] += row.cf_gap / theta_draws as f64;
                mean_bn[k] += row.bn_bound / theta_draws as f64;
                mean_false[k] += row.flags_false_fraction / theta_draws as f64;
                if row.bn_bound > 0.0 {
                    let adjusted =
                        (row.cf_gap - 3.0 * row.cf_gap_stderr).max(0.0) / row.bn_bound;
                    max_adjusted_ratio = max_adjusted_ratio.max(adjusted);
                }
            }
        }
        for (k, &t) in grid.iter().enumerate() {
            let ratio_cell = if mean_bn[k] > 0.0 {
                format_float(mean_gap[k] / mean_bn[k])
            } else {
                String::new()
            };
            rows.push(vec![
                record.experiment_id.clone(),
                n.to_string(),
                format_float(t),
                format_float(mean_gap[k]),
                format_float(mean_bn[k]),
                ratio_cell,
                format_float(mean_false[k]),
            ]);
        }
        let mut esseen_stream = derive_stream(config.master_seed, &[tag::CF_ESSEEN, n as u64])?;
        let esseen = charfn::esseen_integral(
            &spec,
            n,
            t0,
            32,
            theta_draws,
            config.inner_samples,
            &mut esseen_stream,
        )?;
        let pass = max_adjusted_ratio <= DEFAULT_RATIO_THRESHOLD;
        if !pass {
            record.failures.push(format!(
                "n = {n}: CF gap/bound ratio {max_adjusted_ratio:.2} above threshold \
                 {DEFAULT_RATIO_THRESHOLD}"
            ));
        }
        record.summary.push(format!(
            "n = {n}: T0 = {t0:.2}, max adjusted gap/bound ratio = {max_adjusted_ratio:.3}, \
             esseen integral = {:.4} +- {:.4}",
            esseen.value, esseen.stderr
        ));
        summaries.push(CfSummary {
            n,
            t0,
            theta_draws,
            inner_samples: config.inner_samples,
            max_adjusted_ratio,
            ratio_threshold: DEFAULT_RATIO_THRESHOLD,
            esseen_value: esseen.value,
            esseen_stderr: esseen.stderr,
            pass,
        });
    }
    let path = config.out_dir.join("cf_diagnostics.csv");
    write_csv(
        &path,
        &[
            "experiment_id",
            "n",
            "t",
            "cf_gap",
            "bn_bound",
            "ratio",
            "flags_false_fraction",
        ],
        &rows,
    )?;
    record.tables.push(TableRef {
        name: "cf-diagnostics".into(),
        path,
    });
    let json_path = config.out_dir.join("cf_summary.json");
    write_json(&json_path, &summaries)?;
    record.tables.push(TableRef {
        name: "cf-summary".into(),
        path: json_path,
    });
    Ok(())
}

/// The built-in heterogeneous variance-profile battery.
pub fn profile_battery(n: usize) -> Vec<(String, VarianceProfile)> {
    let mut battery = Vec::new();
    battery.push(("unit".to_string(), VarianceProfile::unit(n).expect("n >= 1")));
    let cosine: Vec<f64> = (0..n)
        .map(|k| 1.0 + 0.7 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos())
        .collect();
    battery.push((
        "cosine".to_string(),
        VarianceProfile::normalized(&cosine).expect("positive"),
    ));
    let ramp: Vec<f64> = (0..n)
        .map(|k| 0.5 + k as f64 / (n.max(2) - 1).max(1) as f64)
        .collect();
    battery.push((
        "ramp".to_string(),
        VarianceProfile::normalized(&ramp).expect("positive"),
    ));
    let mut spike = vec![1.0; n];
    spike[0] = 3.0;
    battery.push((
        "spike".to_string(),
        VarianceProfile::normalized(&spike).expect("positive"),
    ));
    let alternating: Vec<f64> = (0..n)
        .map(|k| if k % 2 == 0 { 0.5 } else { 1.5 })
        .collect();
    battery.push((
        "alternating".to_string(),
        VarianceProfile::normalized(&alternating).expect("positive"),
    ));
    let two_block: Vec<f64> = (0..n)
        .map(|k| if k < n / 2 { 1.6 } else { 0.4 })
        .collect();
    battery.push((
        "two-block".to_string(),
        VarianceProfile::normalized(&two_block).expect("positive"),
    ));
    battery
}

#[derive(Debug, Serialize)]
struct GaussmixJson {
    n: usize,
    profile: String,
    sum_sq_dev: f64,
    remark_bound: f64,
    mc_mean: f64,
    mc_stderr: f64,
    r0_bound: f64,
    l1_estimate: f64,
    l2_estimate: f64,
    pass: bool,
}

fn run_gaussmix(config: &ExperimentConfig, record: &mut ResultRecord) -> Result<()> {
    // Exact-vs-bound sweep over the two-scale grid first: zero violations
    // expected wherever the bound applies.
    let mut grid_violations = 0usize;
    for i in 0..50 {
        for j in 0..50 {
            let a = 0.5 + 2.5 * i as f64 / 49.0;
            let b = 0.5 + 2.5 * j as f64 / 49.0;
            let d = gaussmix::gauss_two_scale_distance(a, b)?;
            if let Some(bound) = d.jp_bound {
                if d.exact > bound + 1e-12 {
                    grid_violations += 1;
                }
            }
        }
    }
    if grid_violations > 0 {
        record.failures.push(format!(
            "two-scale distance bound violated on {grid_violations} grid cells"
        ));
    }
    record.summary.push(format!(
        "two-scale bound sweep: {grid_violations} violations on 50x50 grid"
    ));

    let draws = config.inner_samples;
    let t_grid: Vec<f64> = (1..=12).map(|i| 0.25 * i as f64).collect();
    let mut rows = Vec::new();
    let mut json_records = Vec::new();
    for &n in &config.n_list {
        if n < 2 {
            return Err(Error::InvalidConfig(
                "gaussmix-check needs n >= 2 (concentration bound degenerate)".into(),
            ));
        }
        for (idx, (label, profile)) in profile_battery(n).into_iter().enumerate() {
            let mut stream = derive_stream(
                config.master_seed,
                &[tag::GAUSSMIX, n as u64, idx as u64],
            )?;
            let conc = gaussmix::concentration_check(&profile, draws, &mut stream)?;
            let bound = gaussmix::remark_bound(&profile)?;
            let kappa = gaussmix::kappa_mixture_vs_standard(&profile, draws, &mut stream)?;
            let r2_rows = gaussmix::r2_integrand_check(&profile, &t_grid, draws, &mut stream)?;
            let mut pass = conc.pass;
            if kappa.value > bound + 3.0 * kappa.stderr_outer {
                pass = false;
                record.failures.push(format!(
                    "n = {n} profile {label}: mixture distance {} above bound {bound}",
                    kappa.value
                ));
            }
            if !conc.pass {
                record.failures.push(format!(
                    "n = {n} profile {label}: concentration moments exceed the bound"
                ));
            }
            for row in &r2_rows {
                if !row.pass {
                    pass = false;
                    record.failures.push(format!(
                        "n = {n} profile {label}: mixture-CF integrand bound violated at t = {}",
                        row.t
                    ));
                }
            }
            rows.push(vec![
                record.experiment_id.clone(),
                n.to_string(),
                label.clone(),
                format_float(profile.sum_sq_dev()),
                format_float(conc.r0_bound),
                format_float(conc.l1_estimate),
                format_float(conc.l1_stderr),
                format_float(conc.l2_estimate),
                format_float(conc.l2_stderr),
                format_float(bound),
                format_float(kappa.value),
                format_float(kappa.stderr_outer),
                config.master_seed.to_string(),
            ]);
            json_records.push(GaussmixJson {
                n,
                profile: label,
                sum_sq_dev: profile.sum_sq_dev(),
                remark_bound: bound,
                mc_mean: kappa.value,
                mc_stderr: kappa.stderr_outer,
                r0_bound: conc.r0_bound,
                l1_estimate: conc.l1_estimate,
                l2_estimate: conc.l2_estimate,
                pass,
            });
        }
        record.summary.push(format!(
            "n = {n}: {} profiles checked",
            json_records.iter().filter(|r| r.n == n).count()
        ));
    }
    let path = config.out_dir.join("gaussmix.csv");
    write_csv(
        &path,
        &[
            "experiment_id",
            "n",
            "profile",
            "sum_sq_dev",
            "r0_bound",
            "l1_estimate",
            "l1_stderr",
            "l2_estimate",
            "l2_stderr",
            "remark_bound",
            "kappa_mean",
            "kappa_stderr",
            "seed",
        ],
        &rows,
    )?;
    record.tables.push(TableRef {
        name: "gaussmix".into(),
        path,
    });
    let json_path = config.out_dir.join("gaussmix.json");
    write_json(&json_path, &json_records)?;
    record.tables.push(TableRef {
        name: "gaussmix-json".into(),
        path: json_path,
    });
    Ok(())
}

fn run_sphere_selftest(config: &ExperimentConfig, record: &mut ResultRecord) -> Result<()> {
    let draws = config.inner_samples.max(1000);
    let mut rows = Vec::new();
    for &n in &config.n_list {
        let mut stream = derive_stream(config.master_seed, &[tag::SPHERE, n as u64])?;
        let report = sphere::check_sphere_moments(n, draws, &mut stream)?;
        for check in &report.checks {
            rows.push(vec![
                record.experiment_id.clone(),
                n.to_string(),
                draws.to_string(),
                check.power.to_string(),
                format_float(check.empirical),
                format_float(check.exact),
                format_float(check.z_score),
                ((check.z_score.abs() <= 5.0) as u8).to_string(),
            ]);
        }
        if !report.pass {
            record
                .failures
                .push(format!("sphere moments off at n = {n}: {report:?}"));
        }
        record.summary.push(format!(
            "n = {n}: sphere moments ok = {}, max |z| = {:.2}",
            report.pass,
            report
                .checks
                .iter()
                .map(|c| c.z_score.abs())
                .fold(0.0, f64::max)
        ));
    }
    let path = config.out_dir.join("sphere_selftest.csv");
    write_csv(
        &path,
        &[
            "experiment_id",
            "n",
            "draws",
            "power",
            "empirical",
            "exact",
            "z_score",
            "pass",
        ],
        &rows,
    )?;
    record.tables.push(TableRef {
        name: "sphere-selftest".into(),
        path,
    });

    // Stream independence: sibling derived streams must be uncorrelated.
    let pairs = 1_000_000usize;
    let mut a = derive_stream(config.master_seed, &[tag::STREAM_CHECK, 0])?;
    let mut b = derive_stream(config.master_seed, &[tag::STREAM_CHECK, 1])?;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for _ in 0..pairs {
        let x = (a.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        let y = (b.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        sa += x;
        sb += y;
        saa += x * x;
        sbb += y * y;
        sab += x * y;
    }
    let pf = pairs as f64;
    let cov = sab / pf - (sa / pf) * (sb / pf);
    let var_a = saa / pf - (sa / pf) * (sa / pf);
    let var_b = sbb / pf - (sb / pf) * (sb / pf);
    let rho = cov / (var_a * var_b).sqrt();
    let threshold = 5.0 / pf.sqrt();
    let stream_pass = rho.abs() < threshold;
    if !stream_pass {
        record.failures.push(format!(
            "derived sibling streams correlate: rho = {rho:.2e} over {pairs} pairs"
        ));
    }
    record.summary.push(format!(
        "stream cross-correlation: rho = {rho:.2e} (threshold {threshold:.2e})"
    ));
    let stream_path = config.out_dir.join("stream_selftest.csv");
    write_csv(
        &stream_path,
        &["experiment_id", "pairs", "rho", "threshold", "pass"],
        &[vec![
            record.experiment_id.clone(),
            pairs.to_string(),
            format_float(rho),
            format_float(threshold),
            (stream_pass as u8).to_string(),
        ]],
    )?;
    record.tables.push(TableRef {
        name: "stream-selftest".into(),
        path: stream_path,
    });
    Ok(())
}
