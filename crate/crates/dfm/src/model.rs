//! Gaussian mixtures and couplings between a base and a target mixture.
//!
//! A [`GaussianMixture`] is a weighted sum of Gaussian components on R^d.
//! A [`Coupling`] is a mixture on R^{2d} read as a joint law of the pair
//! `(X0, X1)`; the independent product of two mixtures is the standard
//! construction and remembers its factors so the marginals round-trip
//! exactly.
//!
//! The *tilted* coupling divides the joint density by the time-1 heat
//! kernel `p_1(x1 | x0) = (4 pi)^{-d/2} exp(-||x1 - x0||^2 / 4)`:
//!
//! ```text
//! log pi~(x0, x1) = log pi(x0, x1) + (d/2) log(4 pi) + ||x1 - x0||^2 / 4
//! ```
//!
//! Its score in both arguments feeds the assumption audits.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::{Rng, StreamKey};
use crate::util::{logsumexp, noncentral_chi2_moment, par_mean_var, Estimate};

/// Tolerance for the mixture-weight normalization check.
const WEIGHT_TOL: f64 = 1e-12;
/// Diagonal jitter added once if a covariance fails to factor.
const CHOLESKY_JITTER: f64 = 1e-10;
/// Covariance used to represent a point-like mass.
pub const POINT_MASS_COV: f64 = 1e-18;

/// One mixture component with cached factorization data.
#[derive(Debug, Clone)]
pub struct Component {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Lower-triangular Cholesky factor of `cov` (possibly jittered).
    chol: DMatrix<f64>,
    /// Inverse covariance.
    precision: DMatrix<f64>,
    /// -d/2 log(2 pi) - 1/2 log det cov.
    log_norm: f64,
}

impl Component {
    fn new(weight: f64, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::config(format!(
                "covariance is {}x{} but mean has dimension {}",
                cov.nrows(),
                cov.ncols(),
                d
            )));
        }
        if !cov.iter().all(|v| v.is_finite()) || !mean.iter().all(|v| v.is_finite()) {
            return Err(Error::config("non-finite entries in mean or covariance"));
        }
        let max_asym = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| (cov[(i, j)] - cov[(j, i)]).abs())
            .fold(0.0, f64::max);
        if max_asym > 1e-10 {
            return Err(Error::config(format!(
                "covariance is not symmetric (max asymmetry {max_asym:.3e})"
            )));
        }
        let (chol, cov) = cholesky_with_jitter(cov)?;
        let precision = chol.clone().inverse();
        let log_det: f64 = 2.0 * (0..d).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>();
        let log_norm = -0.5 * (d as f64) * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det;
        Ok(Component {
            weight,
            mean,
            cov,
            chol: chol.unpack(),
            precision,
            log_norm,
        })
    }

    /// log N(x; mean, cov).
    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.mean;
        self.log_norm - 0.5 * (&self.precision * &d).dot(&d)
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn chol_lower(&self) -> &DMatrix<f64> {
        &self.chol
    }
}

/// Factor a symmetric matrix, adding `CHOLESKY_JITTER * I` once on failure.
/// Returns the factorization together with the (possibly jittered) matrix.
fn cholesky_with_jitter(cov: DMatrix<f64>) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, DMatrix<f64>)> {
    match nalgebra::Cholesky::new(cov.clone()) {
        Some(c) => Ok((c, cov)),
        None => {
            let jittered = &cov + DMatrix::identity(cov.nrows(), cov.ncols()) * CHOLESKY_JITTER;
            match nalgebra::Cholesky::new(jittered.clone()) {
                Some(c) => Ok((c, jittered)),
                None => Err(Error::config(
                    "covariance is not positive definite (even after one jitter retry)",
                )),
            }
        }
    }
}

/// Weighted sum of Gaussian components on R^d.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<Component>,
}

impl GaussianMixture {
    /// Build from parallel lists of weights, means, and covariances.
    /// Weights must be nonnegative and sum to 1 within 1e-12.
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covs: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::config("mixture needs at least one component"));
        }
        if weights.len() != means.len() || weights.len() != covs.len() {
            return Err(Error::config(format!(
                "component count mismatch: {} weights, {} means, {} covariances",
                weights.len(),
                means.len(),
                covs.len()
            )));
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::config("mixture weights must be finite and >= 0"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::config(format!(
                "mixture weights sum to {total:.17} (must be 1 within {WEIGHT_TOL:.0e})"
            )));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::config("mixture dimension must be positive"));
        }
        if means.iter().any(|m| m.len() != dim) {
            return Err(Error::config("all component means must share one dimension"));
        }
        let components = weights
            .into_iter()
            .zip(means)
            .zip(covs)
            .map(|((w, m), c)| Component::new(w, m, c))
            .collect::<Result<Vec<_>>>()?;
        Ok(GaussianMixture { dim, components })
    }

    /// Single Gaussian.
    pub fn gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        GaussianMixture::new(vec![1.0], vec![mean], vec![cov])
    }

    /// Single isotropic Gaussian N(mean, sigma2 * I).
    pub fn isotropic(mean: DVector<f64>, sigma2: f64) -> Result<Self> {
        let d = mean.len();
        GaussianMixture::gaussian(mean, DMatrix::identity(d, d) * sigma2)
    }

    /// Standard normal N(0, I_d).
    pub fn standard(dim: usize) -> Self {
        GaussianMixture::isotropic(DVector::zeros(dim), 1.0).expect("standard normal is valid")
    }

    /// Point-like mass at `mean` (covariance 1e-18 * I).
    pub fn point_mass(mean: DVector<f64>) -> Self {
        GaussianMixture::isotropic(mean, POINT_MASS_COV).expect("point mass is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    /// log density at `x` (log-sum-exp over components).
    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        logsumexp(&self.component_log_terms(x))
    }

    /// log(w_k) + log N_k(x) for each component.
    fn component_log_terms(&self, x: &DVector<f64>) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.weight.ln() + c.log_density(x))
            .collect()
    }

    /// Posterior component probabilities given an observation at `x`.
    pub fn responsibilities(&self, x: &DVector<f64>) -> Vec<f64> {
        let terms = self.component_log_terms(x);
        let norm = logsumexp(&terms);
        terms.into_iter().map(|t| (t - norm).exp()).collect()
    }

    /// Score function: gradient of the log density at `x`.
    pub fn score(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = self.responsibilities(x);
        let mut g = DVector::zeros(self.dim);
        for (c, rk) in self.components.iter().zip(r) {
            g += (c.precision() * (&c.mean - x)) * rk;
        }
        g
    }

    /// One draw using the supplied generator.
    pub fn sample_one(&self, rng: &mut Rng) -> DVector<f64> {
        let k = if self.components.len() == 1 {
            0
        } else {
            let w = self.weights();
            rng.categorical(&w)
        };
        let c = &self.components[k];
        let mut z = DVector::zeros(self.dim);
        for v in z.iter_mut() {
            *v = rng.standard_normal();
        }
        &c.mean + c.chol_lower() * z
    }

    /// `n` draws; draw `i` comes from substream `i` of `key`.
    pub fn sample(&self, n: usize, key: StreamKey) -> Vec<DVector<f64>> {
        crate::util::par_collect(n, |i| self.sample_one(&mut key.substream(i as u64).rng()))
    }

    /// Monte Carlo estimate of E||X||^p with standard error, p in {2, 4, 8}.
    pub fn moment_p(&self, p: u32, n: usize, key: StreamKey) -> Result<Estimate> {
        validate_even_power(p, "moment_p")?;
        let q = (p / 2) as i32;
        let mv = par_mean_var(n as u64, |i| {
            let x = self.sample_one(&mut key.substream(i).rng());
            x.norm_squared().powi(q)
        });
        Ok(Estimate::from_mean_var(mv))
    }

    /// Exact E||X||^p for a single isotropic component, p in {2, 4, 8}.
    /// Returns `None` when the mixture is not a single isotropic Gaussian.
    pub fn moment_p_exact(&self, p: u32) -> Option<f64> {
        if validate_even_power(p, "moment_p_exact").is_err() {
            return None;
        }
        let sigma2 = self.isotropic_sigma2()?;
        let m = &self.components[0].mean;
        let q = p / 2;
        let lambda = m.norm_squared() / sigma2;
        Some(sigma2.powi(q as i32) * noncentral_chi2_moment(self.dim as f64, lambda, q))
    }

    /// sigma^2 if the mixture is a single component with covariance sigma^2 I.
    fn isotropic_sigma2(&self) -> Option<f64> {
        if self.components.len() != 1 {
            return None;
        }
        let cov = &self.components[0].cov;
        let s = cov[(0, 0)];
        for i in 0..self.dim {
            for j in 0..self.dim {
                let expect = if i == j { s } else { 0.0 };
                if (cov[(i, j)] - expect).abs() > 1e-12 * s.max(1.0) {
                    return None;
                }
            }
        }
        Some(s)
    }

    /// Monte Carlo estimate of E||score(X)||^p under this mixture,
    /// with standard error, p in {2, 4, 8}.
    pub fn score_lp_norm(&self, p: u32, n: usize, key: StreamKey) -> Result<Estimate> {
        validate_even_power(p, "score_lp_norm")?;
        let q = (p / 2) as i32;
        let mv = par_mean_var(n as u64, |i| {
            let x = self.sample_one(&mut key.substream(i).rng());
            self.score(&x).norm_squared().powi(q)
        });
        Ok(Estimate::from_mean_var(mv))
    }

    /// Mixture of per-component affine pushforwards `x -> mean_shift_k + A x + b`
    /// plus independent Gaussian noise with covariance `noise`. Used for
    /// closed-form time marginals of the interpolation; weights are kept.
    pub(crate) fn map_components<F>(&self, f: F) -> Result<GaussianMixture>
    where
        F: Fn(&Component) -> (DVector<f64>, DMatrix<f64>),
    {
        let weights = self.weights();
        let mut means = Vec::with_capacity(self.components.len());
        let mut covs = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let (m, cov) = f(c);
            covs.push(symmetrize(cov));
            means.push(m);
        }
        GaussianMixture::new(weights, means, covs)
    }
}

fn validate_even_power(p: u32, op: &'static str) -> Result<()> {
    if matches!(p, 2 | 4 | 8) {
        Ok(())
    } else {
        Err(Error::domain("model", op, format!("p must be 2, 4, or 8 (got {p})")))
    }
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Joint law of a pair `(X0, X1)` on R^d x R^d, stored as a mixture on
/// R^{2d}. Independent products remember their factors.
#[derive(Debug, Clone)]
pub struct Coupling {
    dim: usize,
    joint: GaussianMixture,
    factors: Option<(GaussianMixture, GaussianMixture)>,
}

impl Coupling {
    /// Independent product coupling mu (x) nu.
    pub fn independent(mu: GaussianMixture, nu: GaussianMixture) -> Result<Self> {
        if mu.dim() != nu.dim() {
            return Err(Error::config(format!(
                "marginal dimensions differ: {} vs {}",
                mu.dim(),
                nu.dim()
            )));
        }
        let d = mu.dim();
        let mut weights = Vec::new();
        let mut means = Vec::new();
        let mut covs = Vec::new();
        for a in mu.components() {
            for b in nu.components() {
                weights.push(a.weight * b.weight);
                let mut m = DVector::zeros(2 * d);
                m.rows_mut(0, d).copy_from(&a.mean);
                m.rows_mut(d, d).copy_from(&b.mean);
                means.push(m);
                let mut c = DMatrix::zeros(2 * d, 2 * d);
                c.view_mut((0, 0), (d, d)).copy_from(&a.cov);
                c.view_mut((d, d), (d, d)).copy_from(&b.cov);
                covs.push(c);
            }
        }
        // Guard against weight drift in long products.
        let total: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= total;
        }
        let joint = GaussianMixture::new(weights, means, covs)?;
        Ok(Coupling {
            dim: d,
            joint,
            factors: Some((mu, nu)),
        })
    }

    /// General coupling from a mixture on R^{2d}.
    pub fn from_joint(joint: GaussianMixture) -> Result<Self> {
        if joint.dim() % 2 != 0 {
            return Err(Error::config(format!(
                "joint mixture dimension {} is odd; expected 2d",
                joint.dim()
            )));
        }
        Ok(Coupling {
            dim: joint.dim() / 2,
            joint,
            factors: None,
        })
    }

    /// Dimension d of each endpoint.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// True when this coupling is an independent product of its marginals.
    pub fn is_independent(&self) -> bool {
        self.factors.is_some()
    }

    /// The mixture on R^{2d}.
    pub fn joint(&self) -> &GaussianMixture {
        &self.joint
    }

    /// Marginal laws of X0 and X1. For an independent product these are
    /// the original factors; otherwise they are block extractions.
    pub fn marginals_of(&self) -> (GaussianMixture, GaussianMixture) {
        if let Some((mu, nu)) = &self.factors {
            return (mu.clone(), nu.clone());
        }
        (self.marginal_block(0), self.marginal_block(self.dim))
    }

    fn marginal_block(&self, offset: usize) -> GaussianMixture {
        let d = self.dim;
        let weights = self.joint.weights();
        let means = self
            .joint
            .components()
            .iter()
            .map(|c| c.mean.rows(offset, d).into_owned())
            .collect();
        let covs = self
            .joint
            .components()
            .iter()
            .map(|c| c.cov.view((offset, offset), (d, d)).into_owned())
            .collect();
        GaussianMixture::new(weights, means, covs).expect("marginal blocks of a valid joint")
    }

    /// log pi(x0, x1).
    pub fn log_density(&self, x0: &DVector<f64>, x1: &DVector<f64>) -> f64 {
        self.joint.log_density(&stack_pair(x0, x1))
    }

    /// One pair draw.
    pub fn sample_pair_one(&self, rng: &mut Rng) -> (DVector<f64>, DVector<f64>) {
        let z = self.joint.sample_one(rng);
        split_pair(&z, self.dim)
    }

    /// `n` pair draws; draw `i` comes from substream `i` of `key`.
    pub fn sample_pairs(&self, n: usize, key: StreamKey) -> Vec<(DVector<f64>, DVector<f64>)> {
        crate::util::par_collect(n, |i| {
            self.sample_pair_one(&mut key.substream(i as u64).rng())
        })
    }

    /// log of the tilted coupling density: the joint density divided by
    /// the time-1 heat kernel p_1(x1 | x0).
    pub fn log_pi_tilde(&self, x0: &DVector<f64>, x1: &DVector<f64>) -> f64 {
        let d = self.dim as f64;
        let diff = x1 - x0;
        self.log_density(x0, x1)
            + 0.5 * d * (4.0 * std::f64::consts::PI).ln()
            + diff.norm_squared() / 4.0
    }

    /// Gradient of `log_pi_tilde` in both arguments.
    pub fn grad_log_pi_tilde(
        &self,
        x0: &DVector<f64>,
        x1: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let g = self.joint.score(&stack_pair(x0, x1));
        let (g0, g1) = split_pair(&g, self.dim);
        let half_diff = (x1 - x0) * 0.5;
        (g0 - &half_diff, g1 + &half_diff)
    }

    /// Monte Carlo estimate of E ||grad log pi~(X0, X1)||^p over the
    /// coupling, gradient taken in both arguments jointly; p in {2,4,8}.
    pub fn pi_tilde_score_lp_norm(&self, p: u32, n: usize, key: StreamKey) -> Result<Estimate> {
        validate_even_power(p, "pi_tilde_score_lp_norm")?;
        let q = (p / 2) as i32;
        let mv = par_mean_var(n as u64, |i| {
            let (x0, x1) = self.sample_pair_one(&mut key.substream(i).rng());
            let (g0, g1) = self.grad_log_pi_tilde(&x0, &x1);
            (g0.norm_squared() + g1.norm_squared()).powi(q)
        });
        Ok(Estimate::from_mean_var(mv))
    }

    /// Conditional law of X1 given X0 = x0: a Gaussian mixture whose
    /// weights are the posterior component probabilities of x0 under the
    /// X0-blocks and whose components are the Schur-complement conditionals.
    pub fn condition_on_x0(&self, x0: &DVector<f64>) -> Result<GaussianMixture> {
        if let Some((_, nu)) = &self.factors {
            return Ok(nu.clone());
        }
        let d = self.dim;
        let mut log_w = Vec::new();
        let mut means = Vec::new();
        let mut covs = Vec::new();
        for c in self.joint.components() {
            let m0 = c.mean.rows(0, d).into_owned();
            let m1 = c.mean.rows(d, d).into_owned();
            let s00 = c.cov.view((0, 0), (d, d)).into_owned();
            let s01 = c.cov.view((0, d), (d, d)).into_owned();
            let s10 = c.cov.view((d, 0), (d, d)).into_owned();
            let s11 = c.cov.view((d, d), (d, d)).into_owned();
            let (chol00, _) = cholesky_with_jitter(s00)?;
            let p00 = chol00.inverse();
            let gain = &s10 * &p00;
            means.push(&m1 + &gain * (x0 - &m0));
            covs.push(symmetrize(&s11 - &gain * &s01));
            // Posterior weight: w_k N(x0; m0_k, S00_k).
            let d0 = x0 - &m0;
            let log_det: f64 = 2.0 * (0..d).map(|i| chol00.l_dirty()[(i, i)].ln()).sum::<f64>();
            let quad = (&p00 * &d0).dot(&d0);
            log_w.push(
                c.weight.ln()
                    - 0.5 * (d as f64) * (2.0 * std::f64::consts::PI).ln()
                    - 0.5 * log_det
                    - 0.5 * quad,
            );
        }
        let norm = logsumexp(&log_w);
        let weights: Vec<f64> = log_w.iter().map(|lw| (lw - norm).exp()).collect();
        let total: f64 = weights.iter().sum();
        GaussianMixture::new(weights.iter().map(|w| w / total).collect(), means, covs)
    }
}

pub(crate) fn stack_pair(x0: &DVector<f64>, x1: &DVector<f64>) -> DVector<f64> {
    let d0 = x0.len();
    let d1 = x1.len();
    let mut z = DVector::zeros(d0 + d1);
    z.rows_mut(0, d0).copy_from(x0);
    z.rows_mut(d0, d1).copy_from(x1);
    z
}

pub(crate) fn split_pair(z: &DVector<f64>, d: usize) -> (DVector<f64>, DVector<f64>) {
    (z.rows(0, d).into_owned(), z.rows(d, d).into_owned())
}
