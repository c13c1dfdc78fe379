//! Mimicking drift of the bridge interpolation and approximations to it.
//!
//! The marginal flow of the interpolation solves an SDE whose drift is
//! the conditional expectation
//!
//! ```text
//! beta(t, x) = E[ (X1 - X_t) / (1 - t) | X_t = x ].
//! ```
//!
//! For a Gaussian-mixture coupling this is available in closed form: per
//! component, `(X_t, X1)` is jointly Gaussian with
//!
//! ```text
//! a    = (1-t) m0 + t m1                      (mean of X_t)
//! V    = (1-t)^2 S00 + t(1-t)(S01 + S10) + t^2 S11 + 2 t (1-t) I
//! C    = (1-t) S10 + t S11                    (Cov(X1, X_t))
//! E[X1 | X_t = x] = m1 + C V^{-1} (x - a),
//! ```
//!
//! mixed with the posterior component probabilities of `x` under the
//! time-t marginal. [`mc_drift`] estimates the same quantity by
//! self-normalized importance sampling from the coupling alone — it
//! shares no conditioning code with the closed form and serves as its
//! oracle. [`fit_drift`] least-squares-fits the drift per time knot,
//! which is the regression view of drift learning, and [`epsilon2_of`]
//! measures the summed squared drift error that controls sampler quality.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interpolant::{bridge_point, self_normalized_mean, InterpolantLaw};
use crate::model::Coupling;
use crate::rng::{hash_bytes, StreamKey};
use crate::sampler::TimeGrid;
use crate::util::{par_mean_var_result, Estimate, McVector};

/// Evaluations are refused above `1 - T_GUARD`, where the conditional
/// variance degenerates.
pub const T_GUARD: f64 = 1e-6;

/// Closed-form mimicking drift at one (t, x). Callers evaluating many
/// points at a fixed time should build an [`ExactDriftKnot`] once.
pub fn exact_drift(coupling: &Coupling, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    let knot = ExactDriftKnot::new(coupling, t)?;
    let mut out = DVector::zeros(coupling.dim());
    knot.eval_into(x, &mut out);
    Ok(out)
}

/// Per-component tables for evaluating the closed-form drift at a fixed
/// time.
#[derive(Debug, Clone)]
pub struct ExactDriftKnot {
    t: f64,
    dim: usize,
    comps: Vec<KnotComponent>,
}

#[derive(Debug, Clone)]
struct KnotComponent {
    /// Mean of X_t.
    a: DVector<f64>,
    /// Inverse of Var(X_t).
    precision: DMatrix<f64>,
    /// C V^{-1}, the regression gain of X1 on X_t.
    gain: DMatrix<f64>,
    /// Mean of X1.
    m1: DVector<f64>,
    /// log w - (d/2) log 2 pi - (1/2) log det V.
    log_w0: f64,
}

impl ExactDriftKnot {
    pub fn new(coupling: &Coupling, t: f64) -> Result<Self> {
        if !(0.0..=1.0 - T_GUARD).contains(&t) {
            return Err(Error::domain(
                "drift",
                "exact_drift",
                format!("t = {t} outside [0, {}]", 1.0 - T_GUARD),
            ));
        }
        let d = coupling.dim();
        let omt = 1.0 - t;
        let comps = coupling
            .joint()
            .components()
            .iter()
            .map(|c| {
                let m0 = c.mean.rows(0, d).into_owned();
                let m1 = c.mean.rows(d, d).into_owned();
                let s00 = c.cov.view((0, 0), (d, d));
                let s01 = c.cov.view((0, d), (d, d));
                let s10 = c.cov.view((d, 0), (d, d));
                let s11 = c.cov.view((d, d), (d, d));
                let a = &m0 * omt + &m1 * t;
                let mut v = s00 * (omt * omt)
                    + (s01 + s10.transpose()) * (omt * t)
                    + s11 * (t * t);
                for i in 0..d {
                    v[(i, i)] += 2.0 * t * omt;
                }
                let v = crate::model::symmetrize(v);
                let chol = nalgebra::Cholesky::new(v).ok_or_else(|| {
                    Error::numerical(
                        "drift",
                        "exact_drift",
                        "time-t covariance is not positive definite",
                        [("t".to_string(), t.to_string())].into(),
                    )
                })?;
                let log_det: f64 =
                    2.0 * (0..d).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>();
                let precision = chol.inverse();
                let cov_x1_xt = s10 * omt + s11 * t;
                let gain = &cov_x1_xt * &precision;
                let log_w0 = c.weight.ln()
                    - 0.5 * (d as f64) * (2.0 * std::f64::consts::PI).ln()
                    - 0.5 * log_det;
                Ok(KnotComponent {
                    a,
                    precision,
                    gain,
                    m1,
                    log_w0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ExactDriftKnot { t, dim: d, comps })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    /// Evaluate the drift at `x` into `out`. Allocation-free: this sits
    /// on the innermost loop of the sampler.
    pub fn eval_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        let d = self.dim;
        let kc = self.comps.len();
        let mut logs = [0.0f64; 16];
        assert!(kc <= 16, "more than 16 mixture components; widen the buffer");
        let mut max_log = f64::NEG_INFINITY;
        for (k, c) in self.comps.iter().enumerate() {
            let mut quad = 0.0;
            for i in 0..d {
                let mut row = 0.0;
                for j in 0..d {
                    row += c.precision[(i, j)] * (x[j] - c.a[j]);
                }
                quad += (x[i] - c.a[i]) * row;
            }
            logs[k] = c.log_w0 - 0.5 * quad;
            max_log = max_log.max(logs[k]);
        }
        let mut total = 0.0;
        for l in logs.iter_mut().take(kc) {
            *l = (*l - max_log).exp();
            total += *l;
        }
        out.fill(0.0);
        for (k, c) in self.comps.iter().enumerate() {
            let r = logs[k] / total;
            for i in 0..d {
                let mut cond = c.m1[i];
                for j in 0..d {
                    cond += c.gain[(i, j)] * (x[j] - c.a[j]);
                }
                out[i] += r * cond;
            }
        }
        let scale = 1.0 / (1.0 - self.t);
        for i in 0..d {
            out[i] = (out[i] - x[i]) * scale;
        }
    }
}

/// Monte Carlo oracle for the mimicking drift by self-normalized
/// importance sampling: draw `(x0, x1)` from the coupling and weight by
/// the bridge likelihood `exp(-||x - (1-t)x0 - t x1||^2 / (4 t (1-t)))`
/// of landing at `x`. Shares no conditioning code with [`exact_drift`].
/// An effective sample size below 50 flags the result unreliable.
pub fn mc_drift(
    coupling: &Coupling,
    t: f64,
    x: &DVector<f64>,
    n_inner: usize,
    key: StreamKey,
) -> Result<McVector> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::domain(
            "drift",
            "mc_drift",
            format!("t = {t} outside (0, 1)"),
        ));
    }
    if n_inner < 1000 {
        return Err(Error::domain(
            "drift",
            "mc_drift",
            format!("n_inner = {n_inner} below the minimum of 1000"),
        ));
    }
    let d = coupling.dim();
    let omt = 1.0 - t;
    let denom = 4.0 * t * omt;
    let draws: Vec<(f64, DVector<f64>)> = crate::util::par_collect(n_inner, |i| {
        let mut rng = key.substream(i as u64).rng();
        let (x0, x1) = coupling.sample_pair_one(&mut rng);
        let mean = x0 * omt + &x1 * t;
        let logw = -(x - &mean).norm_squared() / denom;
        let value = (&x1 - x) / omt;
        (logw, value)
    });
    Ok(self_normalized_mean(&draws, d))
}

/// Feature map for the regressed drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSpec {
    /// [1, x_1, ..., x_d]
    Affine,
    /// [1, x_1, ..., x_d, x_1^2, ..., x_d^2]
    Quadratic,
}

impl FeatureSpec {
    pub fn len(&self, dim: usize) -> usize {
        match self {
            FeatureSpec::Affine => 1 + dim,
            FeatureSpec::Quadratic => 1 + 2 * dim,
        }
    }

    pub fn is_empty(&self, dim: usize) -> bool {
        self.len(dim) == 0
    }

    fn fill(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        let d = x.len();
        out[0] = 1.0;
        for i in 0..d {
            out[1 + i] = x[i];
        }
        if matches!(self, FeatureSpec::Quadratic) {
            for i in 0..d {
                out[1 + d + i] = x[i] * x[i];
            }
        }
    }
}

/// Drift learned by per-knot ridge regression on interpolation samples.
/// Defined only at its grid knots.
#[derive(Debug, Clone)]
pub struct RegressedDrift {
    grid: TimeGrid,
    features: FeatureSpec,
    dim: usize,
    /// One (n_features x dim) coefficient matrix per knot t_k, k < N.
    coeffs: Vec<DMatrix<f64>>,
}

#[derive(Serialize, Deserialize)]
struct RegressedDriftWire {
    grid: TimeGrid,
    features: FeatureSpec,
    dim: usize,
    /// Row-major flattening of each knot's coefficient matrix.
    coeffs: Vec<Vec<f64>>,
}

impl RegressedDrift {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn features(&self) -> FeatureSpec {
        self.features
    }

    /// Coefficient matrix at knot `k` (rows = features, columns = output
    /// coordinates).
    pub fn coeffs_at(&self, k: usize) -> &DMatrix<f64> {
        &self.coeffs[k]
    }

    /// Evaluate at knot index `k`.
    pub fn eval_knot(&self, k: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        let w = self.coeffs.get(k).ok_or_else(|| {
            Error::domain(
                "drift",
                "RegressedDrift::eval_knot",
                format!("knot {k} out of range ({} knots)", self.coeffs.len()),
            )
        })?;
        let mut phi = DVector::zeros(self.features.len(self.dim));
        self.features.fill(x, &mut phi);
        Ok(w.tr_mul(&phi))
    }

    /// Evaluate at time `t`, which must coincide with a grid knot.
    pub fn eval(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        let k = self.grid.knot_index_of(t).ok_or_else(|| {
            Error::domain(
                "drift",
                "RegressedDrift::eval",
                format!("t = {t} is not a knot of the regression grid"),
            )
        })?;
        self.eval_knot(k, x)
    }

    pub fn to_json(&self) -> Result<String> {
        let wire = RegressedDriftWire {
            grid: self.grid.clone(),
            features: self.features,
            dim: self.dim,
            coeffs: self
                .coeffs
                .iter()
                .map(|m| m.transpose().as_slice().to_vec())
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&wire)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let wire: RegressedDriftWire = serde_json::from_str(json)?;
        let m = wire.features.len(wire.dim);
        let mut coeffs = Vec::with_capacity(wire.coeffs.len());
        for flat in &wire.coeffs {
            if flat.len() != m * wire.dim {
                return Err(Error::config(format!(
                    "coefficient block has {} entries, expected {}",
                    flat.len(),
                    m * wire.dim
                )));
            }
            // Stored row-major (feature-major); DMatrix fills column-major.
            coeffs.push(DMatrix::from_row_slice(m, wire.dim, flat));
        }
        Ok(RegressedDrift {
            grid: wire.grid,
            features: wire.features,
            dim: wire.dim,
            coeffs,
        })
    }
}

/// Fit the drift at every grid knot by ridge regression of the bridge
/// regression target `(x1 - x_t) / (1 - t_k)` on the features of `x_t`,
/// from `n_train` fresh interpolation draws per knot. Deterministic
/// given `key`.
pub fn fit_drift(
    coupling: &Coupling,
    grid: &TimeGrid,
    features: FeatureSpec,
    ridge_lambda: f64,
    n_train: usize,
    key: StreamKey,
) -> Result<RegressedDrift> {
    if ridge_lambda <= 0.0 {
        return Err(Error::domain(
            "drift",
            "fit_drift",
            format!("ridge_lambda must be positive (got {ridge_lambda})"),
        ));
    }
    let d = coupling.dim();
    let m = features.len(d);
    if n_train < m + 2 {
        return Err(Error::domain(
            "drift",
            "fit_drift",
            format!("n_train = {n_train} too small for {m} features"),
        ));
    }
    let n_knots = grid.n_steps();
    let mut coeffs = Vec::with_capacity(n_knots);
    for k in 0..n_knots {
        let t = grid.knot(k);
        let omt = 1.0 - t;
        let knot_key = key.substream(k as u64);
        // Accumulate normal equations in fixed chunks so the float
        // reduction order is independent of the thread count.
        let chunk = 4096usize;
        let n_chunks = n_train.div_ceil(chunk);
        let partials: Vec<(DMatrix<f64>, DMatrix<f64>)> =
            crate::util::par_collect(n_chunks, |c| {
                let lo = c * chunk;
                let hi = (lo + chunk).min(n_train);
                let mut xtx = DMatrix::zeros(m, m);
                let mut xty = DMatrix::zeros(m, d);
                let mut phi = DVector::zeros(m);
                for i in lo..hi {
                    let mut rng = knot_key.substream(i as u64).rng();
                    let (x0, x1) = coupling.sample_pair_one(&mut rng);
                    let xt = bridge_point(&x0, &x1, t, &mut rng);
                    let y = (&x1 - &xt) / omt;
                    features.fill(&xt, &mut phi);
                    xtx.syger(1.0, &phi, &phi, 1.0);
                    for j in 0..d {
                        for a in 0..m {
                            xty[(a, j)] += phi[a] * y[j];
                        }
                    }
                }
                (xtx, xty)
            });
        let mut xtx = DMatrix::zeros(m, m);
        let mut xty = DMatrix::zeros(m, d);
        for (a, b) in partials {
            xtx += a;
            xty += b;
        }
        // syger filled the lower triangle only.
        for i in 0..m {
            for j in (i + 1)..m {
                xtx[(i, j)] = xtx[(j, i)];
            }
        }
        for i in 0..m {
            xtx[(i, i)] += ridge_lambda;
        }
        let chol = nalgebra::Cholesky::new(xtx).ok_or_else(|| {
            Error::numerical(
                "drift",
                "fit_drift",
                "ridge normal equations are singular",
                [
                    ("knot".to_string(), k.to_string()),
                    ("ridge_lambda".to_string(), ridge_lambda.to_string()),
                ]
                .into(),
            )
        })?;
        coeffs.push(chol.solve(&xty));
    }
    Ok(RegressedDrift {
        grid: grid.clone(),
        features,
        dim: d,
        coeffs,
    })
}

/// How a [`DriftModel::Perturbed`] departs from its base.
#[derive(Debug, Clone)]
pub enum Perturbation {
    /// Add a fixed vector everywhere.
    Offset(DVector<f64>),
    /// Add `scale` times a deterministic pseudo-random unit vector that
    /// depends only on (t, x); the perturbation norm is exactly `scale`.
    Noise { scale: f64, seed: u64 },
}

impl Perturbation {
    fn apply(&self, t: f64, x: &DVector<f64>, drift: &mut DVector<f64>) {
        match self {
            Perturbation::Offset(e) => *drift += e,
            Perturbation::Noise { scale, seed } => {
                let mut bytes = Vec::with_capacity(8 * (x.len() + 1));
                bytes.extend_from_slice(&t.to_bits().to_le_bytes());
                for v in x.iter() {
                    bytes.extend_from_slice(&v.to_bits().to_le_bytes());
                }
                let mut rng = StreamKey::root(*seed)
                    .label("perturbation-noise")
                    .substream(hash_bytes(&bytes))
                    .rng();
                let mut u = DVector::zeros(x.len());
                rng.fill_standard_normal(u.as_mut_slice());
                let norm = u.norm();
                if norm > 0.0 {
                    *drift += u * (*scale / norm);
                }
            }
        }
    }
}

/// A drift field the sampler can integrate.
#[derive(Debug, Clone)]
pub enum DriftModel {
    /// Closed-form mimicking drift of a coupling.
    Exact { coupling: Coupling },
    /// Importance-sampling estimate of the mimicking drift; `seed`
    /// addresses its internal randomness per query.
    McOracle {
        coupling: Coupling,
        n_inner: usize,
        seed: u64,
    },
    /// Per-knot regression fit.
    Regressed(RegressedDrift),
    /// A base model plus a controlled perturbation.
    Perturbed {
        base: Box<DriftModel>,
        perturbation: Perturbation,
    },
    /// Constant field.
    Constant { value: DVector<f64> },
    /// Zero field.
    Zero { dim: usize },
}

impl DriftModel {
    pub fn dim(&self) -> usize {
        match self {
            DriftModel::Exact { coupling } | DriftModel::McOracle { coupling, .. } => {
                coupling.dim()
            }
            DriftModel::Regressed(r) => r.dim,
            DriftModel::Perturbed { base, .. } => base.dim(),
            DriftModel::Constant { value } => value.len(),
            DriftModel::Zero { dim } => *dim,
        }
    }

    /// Evaluate the drift at (t, x).
    pub fn eval(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            DriftModel::Exact { coupling } => exact_drift(coupling, t, x),
            DriftModel::McOracle {
                coupling,
                n_inner,
                seed,
            } => {
                let mut bytes = Vec::with_capacity(8 * (x.len() + 1));
                bytes.extend_from_slice(&t.to_bits().to_le_bytes());
                for v in x.iter() {
                    bytes.extend_from_slice(&v.to_bits().to_le_bytes());
                }
                let key = StreamKey::root(*seed)
                    .label("mc-oracle")
                    .substream(hash_bytes(&bytes));
                Ok(mc_drift(coupling, t, x, *n_inner, key)?.value)
            }
            DriftModel::Regressed(r) => r.eval(t, x),
            DriftModel::Perturbed { base, perturbation } => {
                let mut v = base.eval(t, x)?;
                perturbation.apply(t, x, &mut v);
                Ok(v)
            }
            DriftModel::Constant { value } => Ok(value.clone()),
            DriftModel::Zero { dim } => Ok(DVector::zeros(*dim)),
        }
    }
}

/// A drift model specialized to the knots of a grid, with closed-form
/// tables precomputed where possible. `eval_knot(k, ...)` must agree
/// with `model.eval(t_k, ...)` exactly.
pub struct PreparedDrift<'a> {
    model: &'a DriftModel,
    times: Vec<f64>,
    exact_tables: Option<Vec<ExactDriftKnot>>,
    base: Option<Box<PreparedDrift<'a>>>,
}

impl<'a> PreparedDrift<'a> {
    pub fn new(model: &'a DriftModel, times: &[f64]) -> Result<Self> {
        let (exact_tables, base) = match model {
            DriftModel::Exact { coupling } => {
                let tables = times
                    .iter()
                    .map(|&t| ExactDriftKnot::new(coupling, t))
                    .collect::<Result<Vec<_>>>()?;
                (Some(tables), None)
            }
            DriftModel::Perturbed { base, .. } => {
                (None, Some(Box::new(PreparedDrift::new(base, times)?)))
            }
            _ => (None, None),
        };
        Ok(PreparedDrift {
            model,
            times: times.to_vec(),
            exact_tables,
            base,
        })
    }

    pub fn eval_knot_into(&self, k: usize, x: &DVector<f64>, out: &mut DVector<f64>) -> Result<()> {
        if let Some(tables) = &self.exact_tables {
            tables[k].eval_into(x, out);
            return Ok(());
        }
        if let (Some(base), DriftModel::Perturbed { perturbation, .. }) = (&self.base, self.model) {
            base.eval_knot_into(k, x, out)?;
            perturbation.apply(self.times[k], x, out);
            return Ok(());
        }
        *out = self.model.eval(self.times[k], x)?;
        Ok(())
    }
}

/// Summed squared drift error over the grid knots,
///
/// ```text
/// epsilon^2 = sum_k h E|| s(t_k, X_{t_k}) - beta(t_k, X_{t_k}) ||^2,
/// ```
///
/// with `X_{t_k}` drawn from the interpolation marginal. All `N` knots
/// enter, each weighted by `h`. Monte Carlo with `n` draws per knot;
/// knots use disjoint substreams, so knot estimates are independent and
/// the standard errors combine in quadrature.
pub fn epsilon2_of(
    model: &DriftModel,
    coupling: &Coupling,
    grid: &TimeGrid,
    n: usize,
    key: StreamKey,
) -> Result<Estimate> {
    if model.dim() != coupling.dim() {
        return Err(Error::domain(
            "drift",
            "epsilon2_of",
            format!(
                "model dimension {} does not match coupling dimension {}",
                model.dim(),
                coupling.dim()
            ),
        ));
    }
    let law = InterpolantLaw::new(coupling.clone());
    let h = grid.h();
    let times: Vec<f64> = (0..grid.n_steps()).map(|k| grid.knot(k)).collect();
    let prepared = PreparedDrift::new(model, &times)?;
    let mut total = 0.0;
    let mut var_sum = 0.0;
    for (k, &t) in times.iter().enumerate() {
        let reference = ExactDriftKnot::new(coupling, t)?;
        let knot_key = key.substream(k as u64);
        let d = coupling.dim();
        let mv = par_mean_var_result(n as u64, |i| {
            let mut rng = knot_key.substream(i).rng();
            let x = law.sample_at_one(t, &mut rng);
            let mut s = DVector::zeros(d);
            prepared.eval_knot_into(k, &x, &mut s)?;
            let mut b = DVector::zeros(d);
            reference.eval_into(&x, &mut b);
            Ok((s - b).norm_squared())
        })?;
        total += h * mv.mean();
        let se = mv.stderr();
        var_sum += h * h * se * se;
    }
    Ok(Estimate {
        value: total,
        stderr: var_sum.sqrt(),
    })
}

/// Stable 64-bit identifier of a drift model's evaluation behavior on a
/// grid; used to tag result rows.
pub fn drift_label(model: &DriftModel) -> &'static str {
    match model {
        DriftModel::Exact { .. } => "exact",
        DriftModel::McOracle { .. } => "mc-oracle",
        DriftModel::Regressed(_) => "regressed",
        DriftModel::Perturbed { .. } => "perturbed",
        DriftModel::Constant { .. } => "constant",
        DriftModel::Zero { .. } => "zero",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GaussianMixture;
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    fn standard_coupling(d: usize) -> Coupling {
        Coupling::independent(GaussianMixture::standard(d), GaussianMixture::standard(d)).unwrap()
    }

    #[test]
    fn exact_drift_standard_pair_is_minus_x() {
        let c = standard_coupling(2);
        for t in [0.0, 0.3, 0.7, 1.0 - T_GUARD] {
            for xv in [[0.5, -1.0], [2.0, 0.1]] {
                let x = dvector![xv[0], xv[1]];
                let b = exact_drift(&c, t, &x).unwrap();
                assert_relative_eq!((&b + &x).norm(), 0.0, epsilon = 1e-10);
            }
        }
        assert!(exact_drift(&c, 1.0 - 0.5 * T_GUARD, &dvector![0.0, 0.0]).is_err());
    }

    #[test]
    fn exact_drift_shifted_target() {
        // mu = N(0, I), nu = N(m, I): beta(t, x) = (1 + t) m - x.
        let m = dvector![1.5, -0.5];
        let nu = GaussianMixture::isotropic(m.clone(), 1.0).unwrap();
        let c = Coupling::independent(GaussianMixture::standard(2), nu).unwrap();
        for t in [0.1, 0.5, 0.9] {
            let x = dvector![0.3, 0.8];
            let b = exact_drift(&c, t, &x).unwrap();
            let expect = &m * (1.0 + t) - &x;
            assert_relative_eq!((b - expect).norm(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn exact_drift_matches_two_dimensional_quadrature() {
        // Independent oracle: beta(t, x) = E[(X1 - x)/(1-t) | X_t = x]
        // computed by trapezoid quadrature over (x0, x1) with the bridge
        // likelihood N(x; (1-t)x0 + t x1, 2t(1-t)) — no Gaussian
        // conditioning anywhere.
        let nu = GaussianMixture::new(
            vec![0.3, 0.7],
            vec![dvector![-1.2], dvector![0.8]],
            vec![
                DMatrix::from_element(1, 1, 0.4),
                DMatrix::from_element(1, 1, 0.9),
            ],
        )
        .unwrap();
        let mu = GaussianMixture::standard(1);
        let c = Coupling::independent(mu.clone(), nu.clone()).unwrap();
        let (t, xv) = (0.35, 0.25);
        let var = 2.0 * t * (1.0 - t);
        let (lo, hi, n) = (-9.0f64, 9.0f64, 900usize);
        let step = (hi - lo) / n as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..=n {
            let x0 = lo + i as f64 * step;
            let wi = if i == 0 || i == n { 0.5 } else { 1.0 };
            for j in 0..=n {
                let x1 = lo + j as f64 * step;
                let wj = if j == 0 || j == n { 0.5 } else { 1.0 };
                let mean = (1.0 - t) * x0 + t * x1;
                let like = (-(xv - mean) * (xv - mean) / (2.0 * var)).exp();
                let pdf = (mu.log_density(&dvector![x0]) + nu.log_density(&dvector![x1])).exp();
                let w = wi * wj * pdf * like;
                den += w;
                num += w * (x1 - xv) / (1.0 - t);
            }
        }
        let oracle = num / den;
        let b = exact_drift(&c, t, &dvector![xv]).unwrap();
        assert_relative_eq!(b[0], oracle, max_relative = 1e-6);
    }

    #[test]
    fn mc_drift_agrees_with_exact_and_flags_low_ess() {
        let nu = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![dvector![-1.0], dvector![1.0]],
            vec![
                DMatrix::from_element(1, 1, 0.5),
                DMatrix::from_element(1, 1, 0.5),
            ],
        )
        .unwrap();
        let c = Coupling::independent(GaussianMixture::standard(1), nu).unwrap();
        let key = StreamKey::root(71).label("mc-drift-test");
        for (i, (t, xv)) in [(0.2, 0.4), (0.5, -1.3), (0.8, 0.9)].iter().enumerate() {
            let exact = exact_drift(&c, *t, &dvector![*xv]).unwrap();
            let mc = mc_drift(&c, *t, &dvector![*xv], 80_000, key.substream(i as u64)).unwrap();
            assert!(mc.reliable(), "ESS {}", mc.ess);
            assert!(
                (mc.value[0] - exact[0]).abs() <= 3.0 * mc.stderr[0].max(1e-4),
                "t={t}, x={xv}: mc {} +- {} vs exact {}",
                mc.value[0],
                mc.stderr[0],
                exact[0]
            );
        }
        // A probe far in the tail starves the weights: flagged, not an error.
        let far = mc_drift(&c, 0.5, &dvector![12.0], 1000, key.label("far")).unwrap();
        assert!(!far.reliable(), "expected low ESS, got {}", far.ess);
        // Domain checks.
        assert!(mc_drift(&c, 0.0, &dvector![0.0], 1000, key).is_err());
        assert!(mc_drift(&c, 0.5, &dvector![0.0], 999, key).is_err());
    }

    #[test]
    fn fit_recovers_linear_drift_and_round_trips_json() {
        let c = standard_coupling(1);
        let grid = TimeGrid::new(10).unwrap();
        let key = StreamKey::root(83).label("fit-test");
        let fitted = fit_drift(&c, &grid, FeatureSpec::Affine, 1e-6, 50_000, key).unwrap();
        for k in 0..grid.n_steps() {
            let w = fitted.coeffs_at(k);
            // beta(t, x) = -x: intercept 0, slope -1.
            assert!(w[(0, 0)].abs() < 0.05, "knot {k} intercept {}", w[(0, 0)]);
            assert!((w[(1, 0)] + 1.0).abs() < 0.05, "knot {k} slope {}", w[(1, 0)]);
        }
        let json = fitted.to_json().unwrap();
        let back = RegressedDrift::from_json(&json).unwrap();
        let x = dvector![0.37];
        for k in 0..grid.n_steps() {
            assert_eq!(
                fitted.eval_knot(k, &x).unwrap()[0].to_bits(),
                back.eval_knot(k, &x).unwrap()[0].to_bits(),
                "round-trip changed knot {k}"
            );
        }
        // Off-knot evaluation is a domain error.
        assert!(fitted.eval(0.05, &x).is_err());
        assert!(fitted.eval(grid.knot(3), &x).is_ok());
        // Deterministic refit.
        let again = fit_drift(&c, &grid, FeatureSpec::Affine, 1e-6, 50_000, key).unwrap();
        assert_eq!(
            fitted.coeffs_at(0)[(1, 0)].to_bits(),
            again.coeffs_at(0)[(1, 0)].to_bits()
        );
    }

    #[test]
    fn epsilon2_exact_is_zero_and_perturbed_is_offset_norm() {
        let c = standard_coupling(2);
        let grid = TimeGrid::new(10).unwrap();
        let key = StreamKey::root(97).label("eps2-test");
        let exact = DriftModel::Exact {
            coupling: c.clone(),
        };
        let e0 = epsilon2_of(&exact, &c, &grid, 2000, key).unwrap();
        assert_eq!(e0.value, 0.0, "identical drift evaluations must cancel");
        assert_eq!(e0.stderr, 0.0);

        let offset = dvector![0.1, -0.2];
        let pert = DriftModel::Perturbed {
            base: Box::new(exact.clone()),
            perturbation: Perturbation::Offset(offset.clone()),
        };
        let ep = epsilon2_of(&pert, &c, &grid, 2000, key).unwrap();
        assert_relative_eq!(ep.value, offset.norm_squared(), max_relative = 1e-12);

        // Unit-norm pseudo-noise perturbation has the same epsilon^2 as an
        // offset of the same scale.
        let noisy = DriftModel::Perturbed {
            base: Box::new(exact.clone()),
            perturbation: Perturbation::Noise {
                scale: 0.3,
                seed: 5,
            },
        };
        let en = epsilon2_of(&noisy, &c, &grid, 2000, key).unwrap();
        assert_relative_eq!(en.value, 0.09, max_relative = 1e-12);

        // Zero drift against beta = -x: epsilon^2 = E||X||^2 = d.
        let zero = DriftModel::Zero { dim: 2 };
        let ez = epsilon2_of(&zero, &c, &grid, 60_000, key.label("zero")).unwrap();
        assert!(
            (ez.value - 2.0).abs() <= 4.0 * ez.stderr,
            "epsilon^2 {} +- {} vs 2",
            ez.value,
            ez.stderr
        );
    }

    #[test]
    fn prepared_drift_matches_direct_evaluation() {
        let c = standard_coupling(1);
        let model = DriftModel::Perturbed {
            base: Box::new(DriftModel::Exact {
                coupling: c.clone(),
            }),
            perturbation: Perturbation::Noise {
                scale: 0.05,
                seed: 9,
            },
        };
        let times = [0.0, 0.25, 0.5, 0.75];
        let prepared = PreparedDrift::new(&model, &times).unwrap();
        let x = dvector![0.61];
        for (k, &t) in times.iter().enumerate() {
            let direct = model.eval(t, &x).unwrap();
            let mut fast = DVector::zeros(1);
            prepared.eval_knot_into(k, &x, &mut fast).unwrap();
            assert_eq!(direct[0].to_bits(), fast[0].to_bits(), "knot {k}");
        }
    }
}
