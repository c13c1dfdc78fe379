//! Configuration-driven experiment drivers.
//!
//! [`run`] takes a validated [`ExperimentConfig`], executes the named
//! experiment, and writes two files into the output directory: a CSV of
//! result rows (schema
//! `experiment,metric,value,stderr,n,h,delta,epsilon,seed,extra_json`)
//! and a JSON sidecar recording the resolved configuration, the code
//! version, and every derived seed. Both files are written atomically
//! (temp file + rename). Reruns with the same seed produce byte-identical
//! CSV regardless of the worker count.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde_json::json;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::drift::{epsilon2_of, fit_drift, DriftModel, FeatureSpec, Perturbation};
use crate::error::{Error, Result};
use crate::interpolant::InterpolantLaw;
use crate::metrics::{audit_h1_h2, girsanov_bound, smoothed_target_audit, w2_1d, MetricReport};
use crate::model::Coupling;
use crate::rng::{hash_bytes, StreamKey};
use crate::sampler::{reference_markov, TimeGrid};
use crate::util::MeanVar;

/// Result of a weighted least-squares line fit in log-log space.
#[derive(Debug, Clone, Copy)]
pub struct SlopeFit {
    pub slope: f64,
    /// 95% confidence half-width of the slope.
    pub half_width: f64,
    pub intercept: f64,
}

/// Fit `log(value) = intercept + slope * log(x)` by least squares over
/// `(x, value, stderr)` points. With positive standard errors on every
/// point the fit is inverse-variance weighted (delta method on the
/// log); otherwise it is unweighted and the half-width comes from the
/// residuals.
pub fn fit_slope(points: &[(f64, f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 4 {
        return Err(Error::domain(
            "experiment",
            "fit_slope",
            format!("need at least 4 points for a slope, got {}", points.len()),
        ));
    }
    if points.iter().any(|&(x, v, _)| x <= 0.0 || v <= 0.0) {
        return Err(Error::domain(
            "experiment",
            "fit_slope",
            "log-log fit needs positive abscissas and values",
        ));
    }
    let weighted = points.iter().all(|&(_, _, se)| se > 0.0);
    let data: Vec<(f64, f64, f64)> = points
        .iter()
        .map(|&(x, v, se)| {
            let w = if weighted { (v / se) * (v / se) } else { 1.0 };
            (x.ln(), v.ln(), w)
        })
        .collect();
    let wsum: f64 = data.iter().map(|d| d.2).sum();
    let xbar = data.iter().map(|d| d.2 * d.0).sum::<f64>() / wsum;
    let ybar = data.iter().map(|d| d.2 * d.1).sum::<f64>() / wsum;
    let sxx: f64 = data.iter().map(|d| d.2 * (d.0 - xbar) * (d.0 - xbar)).sum();
    let sxy: f64 = data.iter().map(|d| d.2 * (d.0 - xbar) * (d.1 - ybar)).sum();
    if sxx <= 0.0 {
        return Err(Error::domain(
            "experiment",
            "fit_slope",
            "abscissas are all identical",
        ));
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let var = if weighted {
        1.0 / sxx
    } else {
        let rss: f64 = data
            .iter()
            .map(|d| {
                let e = d.1 - intercept - slope * d.0;
                e * e
            })
            .sum();
        rss / (points.len() as f64 - 2.0) / sxx
    };
    Ok(SlopeFit {
        slope,
        half_width: 1.96 * var.sqrt(),
        intercept,
    })
}

/// One output row of an experiment.
#[derive(Debug, Clone)]
pub struct CsvRow {
    pub experiment: String,
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
    pub n: Option<u64>,
    pub h: Option<f64>,
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
    pub seed: u64,
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl CsvRow {
    fn new(experiment: &str, metric: impl Into<String>, value: f64, stderr: f64, seed: u64) -> Self {
        CsvRow {
            experiment: experiment.to_string(),
            metric: metric.into(),
            value,
            stderr,
            n: None,
            h: None,
            delta: None,
            epsilon: None,
            seed,
            extra: BTreeMap::new(),
        }
    }

    fn from_report(experiment: &str, report: MetricReport, seed: u64) -> Self {
        let mut row = CsvRow::new(experiment, report.name, report.value, report.stderr, seed);
        for (k, v) in report.meta {
            match k.as_str() {
                "n" => row.n = v.parse().ok(),
                "h" => row.h = v.parse().ok(),
                "delta" => row.delta = v.parse().ok(),
                _ => {
                    row.extra.insert(k, json!(v));
                }
            }
        }
        row
    }

    fn with_n(mut self, n: usize) -> Self {
        self.n = Some(n as u64);
        self
    }

    fn with_h(mut self, h: f64) -> Self {
        self.h = Some(h);
        self
    }

    fn with_delta(mut self, delta: f64) -> Self {
        self.delta = Some(delta);
        self
    }

    fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = Some(epsilon);
        self
    }

    fn with_extra(mut self, key: &str, value: serde_json::Value) -> Self {
        self.extra.insert(key.to_string(), value);
        self
    }
}

/// Paths written by [`run`] plus the in-memory rows.
#[derive(Debug)]
pub struct RunOutput {
    pub csv_path: PathBuf,
    pub sidecar_path: PathBuf,
    pub rows: Vec<CsvRow>,
}

/// Shortest decimal that round-trips to the same float.
fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn render_csv(rows: &[CsvRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "experiment",
        "metric",
        "value",
        "stderr",
        "n",
        "h",
        "delta",
        "epsilon",
        "seed",
        "extra_json",
    ])?;
    for r in rows {
        let opt = |o: Option<f64>| o.map(fmt_f64).unwrap_or_default();
        w.write_record([
            r.experiment.clone(),
            r.metric.clone(),
            fmt_f64(r.value),
            fmt_f64(r.stderr),
            r.n.map(|n| n.to_string()).unwrap_or_default(),
            opt(r.h),
            opt(r.delta),
            opt(r.epsilon),
            r.seed.to_string(),
            serde_json::to_string(&r.extra)?,
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::config(format!("csv buffering failed: {e}")))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct RunContext<'a> {
    config: &'a ExperimentConfig,
    coupling: Coupling,
    label: &'static str,
    master: StreamKey,
    rows: Vec<CsvRow>,
    derived_seeds: Vec<serde_json::Value>,
    /// Extra artifact files (name, contents) to place next to the CSV.
    artifacts: Vec<(String, String)>,
}

impl<'a> RunContext<'a> {
    /// Derive the seed for one sweep point by hashing (master seed,
    /// experiment, point index); record it for the sidecar.
    fn point(&mut self, index: u64, role: &str) -> (u64, StreamKey) {
        let key = self.master.substream(index);
        let seed = key.value();
        self.derived_seeds.push(json!({
            "point": index,
            "role": role,
            "seed": seed,
        }));
        (seed, key)
    }

    fn push_report(&mut self, report: MetricReport, seed: u64) -> &mut CsvRow {
        let row = CsvRow::from_report(self.label, report, seed);
        self.rows.push(row);
        self.rows.last_mut().expect("just pushed")
    }

    fn sub_nodes(&self) -> usize {
        self.config.sub_nodes.unwrap_or(4)
    }

    fn run_audit(&mut self) -> Result<()> {
        let n = self.config.n;
        let (mu, nu) = self.coupling.marginals_of();
        let (seed0, key0) = self.point(0, "h1-h2");
        let coupling = self.coupling.clone();
        for r in audit_h1_h2(&mu, &nu, &coupling, n, key0)? {
            self.push_report(r, seed0);
        }
        if let Some(deltas) = &self.config.delta {
            for (i, delta) in deltas.values().into_iter().enumerate() {
                let (seed, key) = self.point(1 + i as u64, "smoothed-audit");
                for r in smoothed_target_audit(&coupling, delta, n, key)? {
                    self.push_report(r, seed);
                }
            }
        }
        Ok(())
    }

    fn run_verify_marginals(&mut self) -> Result<()> {
        let n = self.config.n;
        let grid = TimeGrid::new(self.config.grid.single()?)?;
        let (seed0, key0) = self.point(0, "reference-markov");
        let trajs = reference_markov(&self.coupling, &grid, n, key0)?;
        let law = InterpolantLaw::new(self.coupling.clone());
        let d = self.coupling.dim();
        let recorded = &trajs[0].times;
        let targets: Vec<(usize, f64)> = recorded
            .iter()
            .enumerate()
            .filter(|(_, &t)| {
                [0.25, 0.5, 0.75].iter().any(|&u| (t - u).abs() < 1e-12)
            })
            .map(|(j, &t)| (j, t))
            .collect();
        if targets.is_empty() {
            return Err(Error::config(
                "grid does not hit any of the comparison times 0.25, 0.5, 0.75",
            ));
        }
        for (j, t) in targets {
            let mix = law.marginal_mixture(t)?;
            let mut closed_mean = DVector::zeros(d);
            let mut closed_second = nalgebra::DMatrix::zeros(d, d);
            for c in mix.components() {
                closed_mean += &c.mean * c.weight;
                closed_second += (&c.cov + &c.mean * c.mean.transpose()) * c.weight;
            }
            let closed_cov = closed_second - &closed_mean * closed_mean.transpose();
            // Coordinate means with exact standard errors.
            let mut zmax_mean: f64 = 0.0;
            for i in 0..d {
                let mut mv = MeanVar::new();
                for traj in &trajs {
                    mv.push(traj.states[j][i]);
                }
                zmax_mean = zmax_mean.max((mv.mean() - closed_mean[i]).abs() / mv.stderr());
            }
            // Covariance entries: standard errors from 10 batch estimates.
            let n_batches = 10;
            let mut zmax_cov: f64 = 0.0;
            for a in 0..d {
                for b in a..d {
                    let mut batch = MeanVar::new();
                    for bi in 0..n_batches {
                        let lo = bi * trajs.len() / n_batches;
                        let hi = (bi + 1) * trajs.len() / n_batches;
                        let mut ma = MeanVar::new();
                        let mut mb = MeanVar::new();
                        let mut mab = MeanVar::new();
                        for traj in &trajs[lo..hi] {
                            let (xa, xb) = (traj.states[j][a], traj.states[j][b]);
                            ma.push(xa);
                            mb.push(xb);
                            mab.push(xa * xb);
                        }
                        batch.push(mab.mean() - ma.mean() * mb.mean());
                    }
                    let se = (batch.variance() / n_batches as f64).sqrt();
                    zmax_cov = zmax_cov.max((batch.mean() - closed_cov[(a, b)]).abs() / se);
                }
            }
            for (metric, z) in [("mean_zmax", zmax_mean), ("cov_zmax", zmax_cov)] {
                let flag = if z <= 3.0 { "PASS" } else { "FAIL" };
                let row = CsvRow::new(self.label, metric, z, 0.0, seed0)
                    .with_n(n)
                    .with_h(grid.h())
                    .with_extra("t", json!(t))
                    .with_extra("flag", json!(flag))
                    .with_extra("threshold", json!(3.0));
                self.rows.push(row);
            }
        }
        Ok(())
    }

    fn run_sweep_h(&mut self) -> Result<()> {
        let n = self.config.n;
        let sub = self.sub_nodes();
        let exact = DriftModel::Exact {
            coupling: self.coupling.clone(),
        };
        let coupling = self.coupling.clone();
        let mut pts = Vec::new();
        for (i, n_steps) in self.config.grid.list()?.into_iter().enumerate() {
            let grid = TimeGrid::new(n_steps)?;
            let (seed, key) = self.point(i as u64, "girsanov");
            let r = girsanov_bound(&exact, &coupling, &grid, sub, n, key)?;
            pts.push((grid.h(), r.value, r.stderr));
            self.push_report(r, seed)
                .extra
                .insert("n_steps".to_string(), json!(n_steps));
        }
        if pts.len() >= 4 {
            let fit = fit_slope(&pts)?;
            let row = CsvRow::new(
                self.label,
                "girsanov_slope",
                fit.slope,
                fit.half_width,
                self.config.seed,
            )
            .with_n(n)
            .with_extra("intercept", json!(fit.intercept))
            .with_extra("points", json!(pts.len()));
            self.rows.push(row);
        }
        Ok(())
    }

    fn run_sweep_epsilon(&mut self) -> Result<()> {
        let n = self.config.n;
        let sub = self.sub_nodes();
        let grid = TimeGrid::new(self.config.grid.single()?)?;
        let coupling = self.coupling.clone();
        let d = coupling.dim();
        let exact = DriftModel::Exact {
            coupling: coupling.clone(),
        };
        let (seed0, key0) = self.point(0, "girsanov-baseline");
        let base = girsanov_bound(&exact, &coupling, &grid, sub, n, key0)?;
        let base_value = base.value;
        let base_stderr = base.stderr;
        self.push_report(base, seed0).metric = "girsanov_baseline".to_string();
        let epsilons = self
            .config
            .epsilon
            .as_ref()
            .expect("validated")
            .values();
        for (i, eps) in epsilons.into_iter().enumerate() {
            if eps <= 0.0 {
                return Err(Error::config(format!("epsilon must be positive, got {eps}")));
            }
            let mut offset = DVector::zeros(d);
            offset[0] = eps.sqrt();
            let model = DriftModel::Perturbed {
                base: Box::new(exact.clone()),
                perturbation: Perturbation::Offset(offset),
            };
            let (seed_i, key_i) = self.point(1 + i as u64, "epsilon2");
            let e2 = epsilon2_of(&model, &coupling, &grid, n, key_i)?;
            self.rows.push(
                CsvRow::new(self.label, "epsilon2", e2.value, e2.stderr, seed_i)
                    .with_n(n)
                    .with_h(grid.h())
                    .with_epsilon(eps),
            );
            // Same key as the baseline: common random numbers make the
            // difference nearly noise-free.
            let r = girsanov_bound(&model, &coupling, &grid, sub, n, key0)?;
            let excess = r.value - base_value;
            let excess_se = (r.stderr * r.stderr + base_stderr * base_stderr).sqrt();
            self.push_report(r, seed0).epsilon = Some(eps);
            self.rows.push(
                CsvRow::new(self.label, "girsanov_excess", excess, excess_se, seed0)
                    .with_n(n)
                    .with_h(grid.h())
                    .with_epsilon(eps)
                    .with_extra("excess_over_epsilon", json!(excess / eps)),
            );
        }
        Ok(())
    }

    fn run_sweep_delta(&mut self) -> Result<()> {
        let n = self.config.n;
        let coupling = self.coupling.clone();
        let law = InterpolantLaw::new(coupling.clone());
        let (_, nu) = coupling.marginals_of();
        let d = coupling.dim();
        let (_, key_nu) = self.point(0, "target-samples");
        let nu_samples = if d == 1 {
            Some(nu.sample(n, key_nu.label("target")))
        } else {
            None
        };
        let deltas = self.config.delta.as_ref().expect("validated").values();
        let mut w2_pts = Vec::new();
        let mut score_pts = Vec::new();
        for (i, delta) in deltas.into_iter().enumerate() {
            let (seed_i, key_i) = self.point(1 + i as u64, "delta-point");
            let reports = smoothed_target_audit(&coupling, delta, n, key_i)?;
            for r in &reports {
                if r.name == "score_l8_smoothed" {
                    score_pts.push((delta, r.value, r.stderr));
                }
            }
            for r in reports {
                self.push_report(r, seed_i).delta = Some(delta);
            }
            if let Some(nu_samples) = &nu_samples {
                let smoothed = law.marginal_mixture(1.0 - delta)?;
                let sm_samples = smoothed.sample(n, key_i.label("smoothed-samples"));
                let w2 = w2_1d(nu_samples, &sm_samples)?;
                let n_batches = 10;
                let mut batch = MeanVar::new();
                for b in 0..n_batches {
                    let lo = b * n / n_batches;
                    let hi = (b + 1) * n / n_batches;
                    let w = w2_1d(&nu_samples[lo..hi], &sm_samples[lo..hi])?;
                    batch.push(w * w);
                }
                let se = (batch.variance() / n_batches as f64).sqrt();
                self.rows.push(
                    CsvRow::new(self.label, "w2_sq", w2 * w2, se, seed_i)
                        .with_n(n)
                        .with_delta(delta),
                );
                w2_pts.push((delta, w2 * w2, se));
            }
        }
        for (metric, pts) in [("w2_sq_slope", &w2_pts), ("score_l8_slope", &score_pts)] {
            if pts.len() >= 4 {
                let fit = fit_slope(pts)?;
                self.rows.push(
                    CsvRow::new(self.label, metric, fit.slope, fit.half_width, self.config.seed)
                        .with_n(n)
                        .with_extra("intercept", json!(fit.intercept))
                        .with_extra("points", json!(pts.len())),
                );
            }
        }
        Ok(())
    }

    fn run_fit_drift(&mut self) -> Result<()> {
        let n = self.config.n;
        let grid = TimeGrid::new(self.config.grid.single()?)?;
        let features = self.config.features.unwrap_or(FeatureSpec::Affine);
        let lambda = self.config.ridge_lambda.unwrap_or(1e-6);
        let coupling = self.coupling.clone();
        let (seed0, key0) = self.point(0, "fit");
        let fitted = fit_drift(&coupling, &grid, features, lambda, n, key0)?;
        self.artifacts
            .push(("regressed_drift.json".to_string(), fitted.to_json()?));
        for k in 0..grid.n_steps() {
            let norm = fitted.coeffs_at(k).norm();
            self.rows.push(
                CsvRow::new(self.label, "coeff_frobenius", norm, 0.0, seed0)
                    .with_n(n)
                    .with_h(grid.knot(k))
                    .with_extra("knot", json!(k)),
            );
        }
        let (seed1, key1) = self.point(1, "epsilon2");
        let model = DriftModel::Regressed(fitted);
        let e2 = epsilon2_of(&model, &coupling, &grid, n, key1)?;
        self.rows.push(
            CsvRow::new(self.label, "epsilon2", e2.value, e2.stderr, seed1)
                .with_n(n)
                .with_h(grid.h()),
        );
        Ok(())
    }

    fn run_girsanov(&mut self) -> Result<()> {
        let n = self.config.n;
        let sub = self.sub_nodes();
        let grid = TimeGrid::new(self.config.grid.single()?)?;
        let coupling = self.coupling.clone();
        let exact = DriftModel::Exact {
            coupling: coupling.clone(),
        };
        let eps = match &self.config.epsilon {
            Some(v) => match v.values().as_slice() {
                [one] => Some(*one),
                _ => {
                    return Err(Error::config(
                        "girsanov takes at most one epsilon (use sweep-epsilon for lists)",
                    ))
                }
            },
            None => None,
        };
        let model = match eps {
            Some(e) if e > 0.0 => {
                let mut offset = DVector::zeros(coupling.dim());
                offset[0] = e.sqrt();
                DriftModel::Perturbed {
                    base: Box::new(exact),
                    perturbation: Perturbation::Offset(offset),
                }
            }
            Some(e) => return Err(Error::config(format!("epsilon must be positive, got {e}"))),
            None => exact,
        };
        let (seed0, key0) = self.point(0, "girsanov");
        let r = girsanov_bound(&model, &coupling, &grid, sub, n, key0)?;
        let row = self.push_report(r, seed0);
        row.epsilon = eps;
        Ok(())
    }
}

/// Execute the experiment and write its CSV and sidecar. See the module
/// docs for the file contract.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let coupling = config.coupling.build()?;
    let label = config.experiment.label();
    // Hash the experiment content only: the output directory does not
    // change what gets computed, so rows must not depend on it.
    let config_text = {
        let mut content = config.clone();
        content.out = None;
        serde_json::to_string(&content)?
    };
    let config_hash = format!("{:016x}", hash_bytes(config_text.as_bytes()));
    let mut ctx = RunContext {
        config,
        coupling,
        label,
        master: StreamKey::root(config.seed).label(label),
        rows: Vec::new(),
        derived_seeds: Vec::new(),
        artifacts: Vec::new(),
    };
    match config.experiment {
        ExperimentKind::Audit => ctx.run_audit()?,
        ExperimentKind::VerifyMarginals => ctx.run_verify_marginals()?,
        ExperimentKind::SweepH => ctx.run_sweep_h()?,
        ExperimentKind::SweepEpsilon => ctx.run_sweep_epsilon()?,
        ExperimentKind::SweepDelta => ctx.run_sweep_delta()?,
        ExperimentKind::FitDrift => ctx.run_fit_drift()?,
        ExperimentKind::Girsanov => ctx.run_girsanov()?,
    }
    let mut rows = ctx.rows;
    for row in &mut rows {
        row.extra
            .insert("config_hash".to_string(), json!(config_hash));
    }
    let out_dir = config
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    let csv_path = out_dir.join(format!("{label}.csv"));
    write_atomic(&csv_path, &render_csv(&rows)?)?;
    for (name, contents) in &ctx.artifacts {
        write_atomic(&out_dir.join(name), contents.as_bytes())?;
    }
    let sidecar = json!({
        "config": serde_json::to_value(config)?,
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": config_hash,
        "derived_seeds": ctx.derived_seeds,
        "csv": csv_path.file_name().and_then(|s| s.to_str()),
        "rows_written": rows.len(),
    });
    let sidecar_path = out_dir.join(format!("{label}.json"));
    write_atomic(&sidecar_path, serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
    Ok(RunOutput {
        csv_path,
        sidecar_path,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    #[test]
    fn slope_fit_recovers_exact_power_laws() {
        let hs = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];
        let linear: Vec<(f64, f64, f64)> = hs.iter().map(|&h| (h, 3.0 * h, 0.0)).collect();
        let fit = fit_slope(&linear).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12, "slope {}", fit.slope);
        assert!(fit.half_width < 1e-10);
        let quadratic: Vec<(f64, f64, f64)> = hs.iter().map(|&h| (h, 0.5 * h * h, 0.0)).collect();
        assert!((fit_slope(&quadratic).unwrap().slope - 2.0).abs() < 1e-12);
        // The theoretical rate expression h(h^{1/8} + 1) over this h range.
        let rate: Vec<(f64, f64, f64)> = hs
            .iter()
            .map(|&h| (h, h * (h.powf(0.125) + 1.0), 0.0))
            .collect();
        let fit = fit_slope(&rate).unwrap();
        assert!((fit.slope - 1.06).abs() < 0.02, "rate slope {}", fit.slope);
        // Weighted fit: stderrs present on every point.
        let weighted: Vec<(f64, f64, f64)> =
            hs.iter().map(|&h| (h, 3.0 * h, 0.1 * h)).collect();
        let fit = fit_slope(&weighted).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12);
        assert!(fit.half_width > 0.0);
        assert!(fit_slope(&linear[..3]).is_err(), "too few points");
        let bad = vec![(0.1, -1.0, 0.0), (0.2, 1.0, 0.0), (0.3, 1.0, 0.0), (0.4, 1.0, 0.0)];
        assert!(fit_slope(&bad).is_err(), "nonpositive value");
    }

    fn write_config(dir: &std::path::Path, body: &str) -> std::path::PathBuf {
        let path = dir.join("config.json");
        std::fs::write(&path, body).unwrap();
        path
    }

    fn girsanov_config(out: &std::path::Path) -> String {
        format!(
            r#"{{
              "experiment": "girsanov",
              "coupling": {{
                "type": "independent",
                "mu": {{"weights": [1.0], "means": [[0.0]], "covs": [[[1.0]]]}},
                "nu": {{"weights": [1.0], "means": [[0.5]], "covs": [[[0.8]]]}}
              }},
              "grid": {{"n_steps": 4}},
              "n": 400,
              "seed": 99,
              "sub_nodes": 2,
              "out": {}
            }}"#,
            serde_json::to_string(out.to_str().unwrap()).unwrap()
        )
    }

    #[test]
    fn run_writes_csv_and_sidecar_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = write_config(dir.path(), &girsanov_config(dir.path()));
        let config = ExperimentConfig::from_file(&cfg_path).unwrap();
        let out = run(&config).unwrap();
        let first = std::fs::read(&out.csv_path).unwrap();
        let header = String::from_utf8_lossy(&first);
        assert!(header.starts_with(
            "experiment,metric,value,stderr,n,h,delta,epsilon,seed,extra_json\n"
        ));
        assert!(header.contains("girsanov_bound"));
        assert!(header.contains("config_hash"));
        // Rerun: byte-identical CSV.
        let again = run(&config).unwrap();
        let second = std::fs::read(&again.csv_path).unwrap();
        assert_eq!(first, second, "rerun changed CSV bytes");
        // Different worker counts: still identical.
        let pooled = rayon::ThreadPoolBuilder::new()
            .num_threads(2)
            .build()
            .unwrap()
            .install(|| run(&config).unwrap());
        let third = std::fs::read(&pooled.csv_path).unwrap();
        assert_eq!(first, third, "thread count changed CSV bytes");
        // Sidecar names the version and seeds.
        let sidecar: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&out.sidecar_path).unwrap()).unwrap();
        assert_eq!(sidecar["version"], env!("CARGO_PKG_VERSION"));
        assert!(sidecar["derived_seeds"].as_array().map(|a| !a.is_empty()).unwrap_or(false));
        // Every row is attributable.
        for row in &out.rows {
            assert!(row.seed != 0);
            assert!(row.extra.contains_key("config_hash"));
        }
    }

    #[test]
    fn verify_marginals_flags_pass_on_the_standard_pair() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            r#"{{
              "experiment": "verify-marginals",
              "coupling": {{
                "type": "independent",
                "mu": {{"weights": [1.0], "means": [[0.0]], "covs": [[[1.0]]]}},
                "nu": {{"weights": [1.0], "means": [[0.0]], "covs": [[[1.0]]]}}
              }},
              "grid": {{"n_steps": 1000}},
              "n": 4000,
              "seed": 3,
              "out": {}
            }}"#,
            serde_json::to_string(dir.path().to_str().unwrap()).unwrap()
        );
        let cfg_path = write_config(dir.path(), &body);
        let config = ExperimentConfig::from_file(&cfg_path).unwrap();
        let out = run(&config).unwrap();
        let moment_rows: Vec<_> = out
            .rows
            .iter()
            .filter(|r| r.metric.ends_with("_zmax"))
            .collect();
        assert_eq!(moment_rows.len(), 6, "three times x mean/cov");
        for row in moment_rows {
            assert_eq!(
                row.extra["flag"], "PASS",
                "{} at t = {:?}: z = {}",
                row.metric, row.extra.get("t"), row.value
            );
        }
    }

    #[test]
    fn sweep_delta_reports_w2_and_slopes() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            r#"{{
              "experiment": "sweep-delta",
              "coupling": {{
                "type": "independent",
                "mu": {{"weights": [1.0], "means": [[0.0]], "covs": [[[1.0]]]}},
                "nu": {{"weights": [1.0], "means": [[0.0]], "covs": [[[0.0001]]]}}
              }},
              "grid": {{"n_steps": 10}},
              "n": 20000,
              "seed": 5,
              "delta": [0.05, 0.1, 0.2, 0.4],
              "out": {}
            }}"#,
            serde_json::to_string(dir.path().to_str().unwrap()).unwrap()
        );
        let config = ExperimentConfig::from_file(&write_config(dir.path(), &body)).unwrap();
        let out = run(&config).unwrap();
        let w2_slope = out
            .rows
            .iter()
            .find(|r| r.metric == "w2_sq_slope")
            .expect("w2 slope row");
        assert!(
            (0.5..=1.5).contains(&w2_slope.value),
            "w2^2 slope {}",
            w2_slope.value
        );
        let score_slope = out
            .rows
            .iter()
            .find(|r| r.metric == "score_l8_slope")
            .expect("score slope row");
        assert!(
            score_slope.value < -2.0,
            "score norm should fall steeply in delta, slope {}",
            score_slope.value
        );
        assert_eq!(
            out.rows.iter().filter(|r| r.metric == "w2_sq").count(),
            4
        );
    }

    #[test]
    fn fit_drift_writes_model_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            r#"{{
              "experiment": "fit-drift",
              "coupling": {{
                "type": "independent",
                "mu": {{"weights": [1.0], "means": [[0.0]], "covs": [[[1.0]]]}},
                "nu": {{"weights": [1.0], "means": [[0.0]], "covs": [[[1.0]]]}}
              }},
              "grid": {{"n_steps": 5}},
              "n": 5000,
              "seed": 8,
              "features": "affine",
              "ridge_lambda": 1e-6,
              "out": {}
            }}"#,
            serde_json::to_string(dir.path().to_str().unwrap()).unwrap()
        );
        let config = ExperimentConfig::from_file(&write_config(dir.path(), &body)).unwrap();
        let out = run(&config).unwrap();
        let artifact = dir.path().join("regressed_drift.json");
        let text = std::fs::read_to_string(artifact).unwrap();
        let model = crate::drift::RegressedDrift::from_json(&text).unwrap();
        assert_eq!(model.grid().n_steps(), 5);
        let e2 = out
            .rows
            .iter()
            .find(|r| r.metric == "epsilon2")
            .expect("epsilon2 row");
        assert!(e2.value < 0.05, "regression epsilon2 {}", e2.value);
    }
}
