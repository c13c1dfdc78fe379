//! Euler–Maruyama integration of the generative SDE
//!
//! ```text
//! X_{t_{k+1}} = X_{t_k} + s(t_k, X_{t_k}) h + sqrt(2) (B_{t_{k+1}} - B_{t_k}),
//! X_0 ~ mu,
//! ```
//!
//! on a uniform grid, with optional early stopping at `1 - delta` (the
//! drift degenerates at t = 1 unless the field is regular there, so
//! stopping one or more knots early is the standard remedy). The drift
//! is frozen at the left knot of every interval — no midpoint or
//! predictor-corrector variants, since that is the scheme the error
//! analysis covers.
//!
//! Brownian increments come from counter-based substreams addressed by
//! (sample, step), so output is bitwise independent of the worker count.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::drift::{DriftModel, PreparedDrift};
use crate::error::{Error, Result};
use crate::model::{Coupling, GaussianMixture};
use crate::rng::StreamKey;
use crate::util::par_collect;

/// Uniform partition of [0, 1] into `n_steps` intervals, with an
/// optional stop knot strictly before 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    n_steps: usize,
    stop_index: Option<usize>,
}

impl TimeGrid {
    /// Full grid over [0, 1].
    pub fn new(n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::domain(
                "sampler",
                "TimeGrid::new",
                "n_steps must be at least 1",
            ));
        }
        Ok(TimeGrid {
            n_steps,
            stop_index: None,
        })
    }

    /// Grid that stops at `1 - delta`. The stop must land exactly on a
    /// knot, so `delta` has to be an integer multiple of `h = 1/n_steps`.
    pub fn with_early_stop(n_steps: usize, delta: f64) -> Result<Self> {
        let grid = TimeGrid::new(n_steps)?;
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::domain(
                "sampler",
                "TimeGrid::with_early_stop",
                format!("delta = {delta} outside [0, 1)"),
            ));
        }
        let h = grid.h();
        let j = (delta / h).round() as usize;
        if (delta - j as f64 * h).abs() > 1e-12 {
            return Err(Error::domain(
                "sampler",
                "TimeGrid::with_early_stop",
                format!("delta = {delta} is not a multiple of h = {h}; the stop must be a knot"),
            ));
        }
        if j >= n_steps {
            return Err(Error::domain(
                "sampler",
                "TimeGrid::with_early_stop",
                format!("delta = {delta} leaves no steps to integrate"),
            ));
        }
        Ok(TimeGrid {
            n_steps,
            stop_index: if j == 0 { None } else { Some(n_steps - j) },
        })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Step size `1 / n_steps`.
    pub fn h(&self) -> f64 {
        1.0 / self.n_steps as f64
    }

    /// Knot `t_k = k h`, for `k = 0..=n_steps`.
    pub fn knot(&self, k: usize) -> f64 {
        debug_assert!(k <= self.n_steps);
        k as f64 * self.h()
    }

    /// Index of the knot where integration stops (`n_steps` when no
    /// early stop was requested).
    pub fn stop_index(&self) -> usize {
        self.stop_index.unwrap_or(self.n_steps)
    }

    /// The stop time `1 - delta`.
    pub fn stop_time(&self) -> f64 {
        self.knot(self.stop_index())
    }

    /// The early-stop margin `delta = 1 - stop_time` (zero for a full
    /// grid).
    pub fn delta(&self) -> f64 {
        (self.n_steps - self.stop_index()) as f64 * self.h()
    }

    /// Map a time back to its knot index, if it lies on the grid.
    pub fn knot_index_of(&self, t: f64) -> Option<usize> {
        let k = (t / self.h()).round();
        if k < 0.0 || k > self.n_steps as f64 {
            return None;
        }
        let k = k as usize;
        if (t - self.knot(k)).abs() <= 1e-9 {
            Some(k)
        } else {
            None
        }
    }
}

/// A recorded path: states at a strictly increasing subsequence of the
/// grid knots.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub sample_id: usize,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl Trajectory {
    /// Terminal (last recorded) state.
    pub fn terminal(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least one state")
    }

    /// State recorded at time `t`, if present.
    pub fn state_at(&self, t: f64) -> Option<&DVector<f64>> {
        self.times
            .iter()
            .position(|&u| (u - t).abs() <= 1e-12)
            .map(|i| &self.states[i])
    }
}

fn check_dims(model: &DriftModel, mu: &GaussianMixture) -> Result<()> {
    if model.dim() != mu.dim() {
        return Err(Error::domain(
            "sampler",
            "em_generate",
            format!(
                "drift dimension {} does not match initial-law dimension {}",
                model.dim(),
                mu.dim()
            ),
        ));
    }
    Ok(())
}

fn integrate_one(
    prepared: &PreparedDrift,
    mu: &GaussianMixture,
    grid: &TimeGrid,
    sample_key: StreamKey,
    sample_id: usize,
    record: Option<usize>,
) -> Result<Trajectory> {
    let d = mu.dim();
    let h = grid.h();
    let root_two_h = (2.0 * h).sqrt();
    let stop = grid.stop_index();
    let mut rng = sample_key.label("init").rng();
    let mut x = mu.sample_one(&mut rng);
    let mut s = DVector::zeros(d);
    let mut z = vec![0.0f64; d];
    let mut times = Vec::new();
    let mut states = Vec::new();
    let push_if_recorded = |k: usize, x: &DVector<f64>, times: &mut Vec<f64>, states: &mut Vec<DVector<f64>>| {
        if let Some(stride) = record {
            if k % stride == 0 || k == stop {
                times.push(grid.knot(k));
                states.push(x.clone());
            }
        }
    };
    push_if_recorded(0, &x, &mut times, &mut states);
    for k in 0..stop {
        prepared.eval_knot_into(k, &x, &mut s)?;
        let mut step_rng = sample_key.substream(k as u64).rng();
        step_rng.fill_standard_normal(&mut z);
        let mut finite = true;
        for i in 0..d {
            x[i] += h * s[i] + root_two_h * z[i];
            finite &= x[i].is_finite();
        }
        if !finite {
            return Err(Error::numerical(
                "sampler",
                "em_generate",
                "non-finite state during integration",
                [
                    ("step".to_string(), k.to_string()),
                    ("sample".to_string(), sample_id.to_string()),
                    ("t".to_string(), grid.knot(k + 1).to_string()),
                ]
                .into(),
            ));
        }
        push_if_recorded(k + 1, &x, &mut times, &mut states);
    }
    if record.is_none() {
        times.push(grid.stop_time());
        states.push(x);
    }
    Ok(Trajectory {
        sample_id,
        times,
        states,
    })
}

/// Integrate `n` independent paths and return the terminal states (at
/// `t = 1`, or `1 - delta` for an early-stopped grid). Deterministic
/// given `key`, independent of the worker count.
pub fn em_generate(
    model: &DriftModel,
    mu: &GaussianMixture,
    grid: &TimeGrid,
    n: usize,
    key: StreamKey,
) -> Result<Vec<DVector<f64>>> {
    check_dims(model, mu)?;
    let times: Vec<f64> = (0..grid.stop_index()).map(|k| grid.knot(k)).collect();
    let prepared = PreparedDrift::new(model, &times)?;
    let results: Vec<Result<DVector<f64>>> = par_collect(n, |i| {
        integrate_one(&prepared, mu, grid, key.substream(i as u64), i, None)
            .map(|traj| traj.states.into_iter().next_back().expect("terminal state"))
    });
    results.into_iter().collect()
}

/// As [`em_generate`], but retain intermediate states at every
/// `record_every`-th knot (the initial and stop knots are always kept).
pub fn em_trajectories(
    model: &DriftModel,
    mu: &GaussianMixture,
    grid: &TimeGrid,
    n: usize,
    record_every: usize,
    key: StreamKey,
) -> Result<Vec<Trajectory>> {
    check_dims(model, mu)?;
    if record_every == 0 {
        return Err(Error::domain(
            "sampler",
            "em_trajectories",
            "record_every must be at least 1",
        ));
    }
    let times: Vec<f64> = (0..grid.stop_index()).map(|k| grid.knot(k)).collect();
    let prepared = PreparedDrift::new(model, &times)?;
    let results: Vec<Result<Trajectory>> = par_collect(n, |i| {
        integrate_one(
            &prepared,
            mu,
            grid,
            key.substream(i as u64),
            i,
            Some(record_every),
        )
    });
    results.into_iter().collect()
}

/// Fine-grid integration under the closed-form drift of `coupling`,
/// starting from its first marginal. This is the surrogate diffusion
/// whose knot marginals should reproduce the interpolation's; a fine
/// grid (at least 1000 steps) keeps the discretization error well below
/// Monte Carlo noise. Records roughly 20 evenly spaced knots.
pub fn reference_markov(
    coupling: &Coupling,
    fine_grid: &TimeGrid,
    n: usize,
    key: StreamKey,
) -> Result<Vec<Trajectory>> {
    if fine_grid.n_steps() < 1000 {
        return Err(Error::domain(
            "sampler",
            "reference_markov",
            format!(
                "reference integration needs at least 1000 steps (got {})",
                fine_grid.n_steps()
            ),
        ));
    }
    let (mu, _) = coupling.marginals_of();
    let model = DriftModel::Exact {
        coupling: coupling.clone(),
    };
    let stride = (fine_grid.n_steps() / 20).max(1);
    em_trajectories(&model, &mu, fine_grid, n, stride, key)
}

/// Write trajectories as CSV with columns `sample_id, t, x_0..x_{d-1}`.
pub fn write_trajectories_csv<W: std::io::Write>(
    writer: W,
    trajectories: &[Trajectory],
    dim: usize,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["sample_id".to_string(), "t".to_string()];
    header.extend((0..dim).map(|i| format!("x_{i}")));
    w.write_record(&header)?;
    for traj in trajectories {
        for (t, x) in traj.times.iter().zip(&traj.states) {
            let mut row = vec![traj.sample_id.to_string(), format!("{t:.17e}")];
            row.extend(x.iter().map(|v| format!("{v:.17e}")));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interpolant::InterpolantLaw;
    use crate::util::MeanVar;
    use nalgebra::dvector;

    fn standard_coupling(d: usize) -> Coupling {
        Coupling::independent(GaussianMixture::standard(d), GaussianMixture::standard(d)).unwrap()
    }

    fn scalar_terminal_var(states: &[DVector<f64>]) -> (f64, f64) {
        let mut mv = MeanVar::new();
        for x in states {
            mv.push(x[0]);
        }
        let v = mv.variance();
        // Var of the sample variance of a Gaussian: 2 v^2 / (n - 1).
        let se = v * (2.0 / (mv.count() as f64 - 1.0)).sqrt();
        (v, se)
    }

    #[test]
    fn grid_construction_and_early_stop() {
        let g = TimeGrid::new(10).unwrap();
        assert_eq!(g.n_steps(), 10);
        assert!((g.h() - 0.1).abs() < 1e-15);
        assert_eq!(g.stop_index(), 10);
        assert_eq!(g.delta(), 0.0);
        assert_eq!(g.knot_index_of(0.3), Some(3));
        assert_eq!(g.knot_index_of(0.35), None);

        let e = TimeGrid::with_early_stop(10, 0.2).unwrap();
        assert_eq!(e.stop_index(), 8);
        assert!((e.stop_time() - 0.8).abs() < 1e-15);
        assert!((e.delta() - 0.2).abs() < 1e-15);
        assert!(TimeGrid::with_early_stop(10, 0.15).is_err(), "off-knot stop");
        assert!(TimeGrid::with_early_stop(10, 1.0).is_err());
        assert!(TimeGrid::new(0).is_err());
    }

    #[test]
    fn zero_drift_one_step_adds_variance_two() {
        let mu = GaussianMixture::standard(1);
        let model = DriftModel::Zero { dim: 1 };
        let grid = TimeGrid::new(1).unwrap();
        let key = StreamKey::root(11).label("zero-one-step");
        let states = em_generate(&model, &mu, &grid, 50_000, key).unwrap();
        let (v, se) = scalar_terminal_var(&states);
        assert!((v - 3.0).abs() <= 4.0 * se, "terminal var {v} +- {se} vs 3");
    }

    #[test]
    fn exact_drift_terminal_variance_follows_recursion() {
        // v_{k+1} = (1-h)^2 v_k + 2h from v_0 = 1.
        let c = standard_coupling(1);
        let model = DriftModel::Exact { coupling: c };
        let mu = GaussianMixture::standard(1);
        let grid = TimeGrid::new(10).unwrap();
        let key = StreamKey::root(13).label("recursion");
        let states = em_generate(&model, &mu, &grid, 200_000, key).unwrap();
        let (v, se) = scalar_terminal_var(&states);
        let h = grid.h();
        let mut expect = 1.0;
        for _ in 0..10 {
            expect = (1.0 - h) * (1.0 - h) * expect + 2.0 * h;
        }
        assert!((expect - 1.046232807653128).abs() < 1e-15);
        assert!(
            (v - expect).abs() <= 4.0 * se,
            "terminal var {v} +- {se} vs recursion {expect}"
        );
        // Early-stopped run matches the recursion truncated at the stop knot.
        let early = TimeGrid::with_early_stop(10, 0.2).unwrap();
        let states = em_generate(&model, &mu, &early, 200_000, key.label("early")).unwrap();
        let (v8, se8) = scalar_terminal_var(&states);
        let mut expect8 = 1.0;
        for _ in 0..8 {
            expect8 = (1.0 - h) * (1.0 - h) * expect8 + 2.0 * h;
        }
        assert!(
            (v8 - expect8).abs() <= 4.0 * se8,
            "early-stop var {v8} +- {se8} vs {expect8}"
        );
    }

    #[test]
    fn terminals_are_bitwise_identical_across_thread_counts() {
        let c = standard_coupling(2);
        let model = DriftModel::Exact { coupling: c };
        let mu = GaussianMixture::standard(2);
        let grid = TimeGrid::new(20).unwrap();
        let key = StreamKey::root(17).label("threads");
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| em_generate(&model, &mu, &grid, 1000, key).unwrap())
        };
        let a = run(1);
        let b = run(4);
        for (x, y) in a.iter().zip(&b) {
            for i in 0..2 {
                assert_eq!(x[i].to_bits(), y[i].to_bits(), "thread count changed output");
            }
        }
    }

    #[test]
    fn trajectories_are_consistent_with_terminals() {
        let c = standard_coupling(1);
        let model = DriftModel::Exact { coupling: c };
        let mu = GaussianMixture::standard(1);
        let grid = TimeGrid::new(10).unwrap();
        let key = StreamKey::root(19).label("traj");
        let terminals = em_generate(&model, &mu, &grid, 200, key).unwrap();
        let trajs = em_trajectories(&model, &mu, &grid, 200, 10, key).unwrap();
        for (t, traj) in terminals.iter().zip(&trajs) {
            assert_eq!(traj.times.first().copied(), Some(0.0));
            assert_eq!(traj.times.last().copied(), Some(1.0));
            assert_eq!(
                t[0].to_bits(),
                traj.terminal()[0].to_bits(),
                "stride = n_steps must reproduce em_generate terminals"
            );
        }
        // The t = 0 record is an initial-law sample.
        let mut mv = MeanVar::new();
        for traj in &trajs {
            mv.push(traj.states[0][0]);
        }
        assert!(mv.mean().abs() <= 4.0 * mv.stderr(), "initial mean {}", mv.mean());
    }

    #[test]
    fn fine_grid_marginal_matches_interpolation_at_midpoint() {
        let nu = GaussianMixture::new(
            vec![0.4, 0.6],
            vec![dvector![-1.0], dvector![1.5]],
            vec![
                nalgebra::DMatrix::from_element(1, 1, 0.5),
                nalgebra::DMatrix::from_element(1, 1, 0.8),
            ],
        )
        .unwrap();
        let c = Coupling::independent(GaussianMixture::standard(1), nu).unwrap();
        let key = StreamKey::root(23).label("marginal-match");
        let grid = TimeGrid::new(1000).unwrap();
        let trajs = reference_markov(&c, &grid, 20_000, key).unwrap();
        let law = InterpolantLaw::new(c.clone());
        let half = law.marginal_mixture(0.5).unwrap();
        let expect_mean = half.components()[0].weight * half.components()[0].mean[0]
            + half.components()[1].weight * half.components()[1].mean[0];
        let mut mv = MeanVar::new();
        for traj in &trajs {
            mv.push(traj.state_at(0.5).expect("0.5 is recorded")[0]);
        }
        assert!(
            (mv.mean() - expect_mean).abs() <= 3.0 * mv.stderr() + 3.0 * grid.h(),
            "diffusion mean {} vs interpolation mean {expect_mean}",
            mv.mean()
        );
        // Standard pair: variance stays at 1 along the whole path.
        let c2 = standard_coupling(1);
        let trajs = reference_markov(&c2, &grid, 20_000, key.label("stationary")).unwrap();
        for (j, &t) in trajs[0].times.iter().enumerate() {
            let mut mv = MeanVar::new();
            for traj in &trajs {
                mv.push(traj.states[j][0]);
            }
            let v = mv.variance();
            let se = v * (2.0 / (mv.count() as f64 - 1.0)).sqrt();
            assert!(
                (v - 1.0).abs() <= 4.0 * se + 4.0 * grid.h(),
                "variance {v} at t = {t}"
            );
        }
        assert!(reference_markov(&c2, &TimeGrid::new(100).unwrap(), 10, key).is_err());
    }

    #[test]
    fn exploding_drift_aborts_with_location() {
        let model = DriftModel::Perturbed {
            base: Box::new(DriftModel::Constant {
                value: dvector![f64::MAX],
            }),
            perturbation: crate::drift::Perturbation::Offset(dvector![f64::MAX]),
        };
        let mu = GaussianMixture::standard(1);
        let grid = TimeGrid::new(10).unwrap();
        let err = em_generate(&model, &mu, &grid, 4, StreamKey::root(29)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("non-finite"), "unexpected error: {msg}");
        match err {
            Error::Numerical { params, .. } => {
                assert_eq!(params.get("step").map(String::as_str), Some("0"));
                assert!(params.contains_key("sample"));
            }
            other => panic!("expected numerical error, got {other:?}"),
        }
    }

    #[test]
    fn csv_export_has_expected_shape() {
        let c = standard_coupling(2);
        let model = DriftModel::Exact { coupling: c };
        let mu = GaussianMixture::standard(2);
        let grid = TimeGrid::new(4).unwrap();
        let trajs =
            em_trajectories(&model, &mu, &grid, 3, 2, StreamKey::root(31).label("csv")).unwrap();
        let mut buf = Vec::new();
        write_trajectories_csv(&mut buf, &trajs, 2).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("sample_id,t,x_0,x_1"));
        // 3 rows per trajectory (t = 0, 0.5, 1) x 3 trajectories.
        assert_eq!(lines.count(), 9);
    }
}
