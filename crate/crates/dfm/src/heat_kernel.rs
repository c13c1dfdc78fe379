//! Transition kernel of the sqrt(2)-scaled Brownian reference process,
//!
//! ```text
//! p_t(y | x) = (4 pi t)^{-d/2} exp(-||y - x||^2 / (4 t)),
//! ```
//!
//! together with its spatial derivatives and a finite-difference check of
//! the heat equation d/dt p = Laplacian_x p. Derivatives are available
//! both raw and in "ratio form" (derivative divided by the kernel value),
//! which stays finite far in the tails where the kernel underflows:
//!
//! ```text
//! grad_x p / p      = -(x - y) / (2 t)
//! hess_x p / p      = -I / (2 t) + (x - y)(x - y)^T / (4 t^2)
//! lap_x p / p       = -d / (2 t) + ||x - y||^2 / (4 t^2)
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Smallest admissible query time.
pub const T_MIN: f64 = 1e-6;

/// A kernel evaluation point. Construction validates the domain:
/// `t` must lie in `[T_MIN, 1]` and `x`, `y` must share a dimension.
#[derive(Debug, Clone)]
pub struct KernelQuery {
    pub t: f64,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

impl KernelQuery {
    pub fn new(t: f64, x: DVector<f64>, y: DVector<f64>) -> Result<Self> {
        if !(T_MIN..=1.0).contains(&t) {
            return Err(Error::domain(
                "heat_kernel",
                "KernelQuery",
                format!("t = {t} outside [{T_MIN}, 1]"),
            ));
        }
        if x.len() != y.len() {
            return Err(Error::domain(
                "heat_kernel",
                "KernelQuery",
                format!("x has dimension {}, y has dimension {}", x.len(), y.len()),
            ));
        }
        if x.is_empty() {
            return Err(Error::domain(
                "heat_kernel",
                "KernelQuery",
                "dimension must be positive",
            ));
        }
        Ok(KernelQuery { t, x, y })
    }

    fn dim(&self) -> f64 {
        self.x.len() as f64
    }
}

/// log p_t(y | x), evaluated directly from raw arguments (no domain check;
/// used internally and by callers that manage their own domains).
pub fn log_p_raw(t: f64, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let d = x.len() as f64;
    let r2 = (y - x).norm_squared();
    -0.5 * d * (4.0 * std::f64::consts::PI * t).ln() - r2 / (4.0 * t)
}

/// log p_t(y | x).
pub fn log_p(q: &KernelQuery) -> f64 {
    log_p_raw(q.t, &q.x, &q.y)
}

/// p_t(y | x).
pub fn density(q: &KernelQuery) -> f64 {
    log_p(q).exp()
}

/// grad_x p / p = -(x - y) / (2 t). Also equals grad_x log p.
pub fn grad_x_over_p(q: &KernelQuery) -> DVector<f64> {
    (&q.y - &q.x) / (2.0 * q.t)
}

/// grad_x p (raw form).
pub fn grad_x(q: &KernelQuery) -> DVector<f64> {
    grad_x_over_p(q) * density(q)
}

/// grad_y p; the kernel is symmetric in (x, y), so this is -grad_x p.
pub fn grad_y(q: &KernelQuery) -> DVector<f64> {
    -grad_x(q)
}

/// hess_x p / p = -I/(2t) + (x - y)(x - y)^T / (4 t^2).
pub fn hess_x_over_p(q: &KernelQuery) -> DMatrix<f64> {
    let d = q.x.len();
    let diff = &q.x - &q.y;
    let mut h = DMatrix::identity(d, d) * (-1.0 / (2.0 * q.t));
    h.syger(1.0 / (4.0 * q.t * q.t), &diff, &diff, 1.0);
    // syger fills the lower triangle; mirror it.
    for i in 0..d {
        for j in (i + 1)..d {
            h[(i, j)] = h[(j, i)];
        }
    }
    h
}

/// hess_x p (raw form).
pub fn hess_x(q: &KernelQuery) -> DMatrix<f64> {
    hess_x_over_p(q) * density(q)
}

/// lap_x p / p = -d/(2t) + ||x - y||^2 / (4 t^2).
pub fn laplacian_x_over_p(q: &KernelQuery) -> f64 {
    let r2 = (&q.x - &q.y).norm_squared();
    -q.dim() / (2.0 * q.t) + r2 / (4.0 * q.t * q.t)
}

/// lap_x p (raw form).
pub fn laplacian_x(q: &KernelQuery) -> f64 {
    laplacian_x_over_p(q) * density(q)
}

/// |central finite difference of d/dt p - analytic lap_x p| at the query.
/// The time stencil must stay above `T_MIN`.
pub fn heat_residual(q: &KernelQuery, fd_step: f64) -> Result<f64> {
    if fd_step <= 0.0 || q.t - fd_step < T_MIN {
        return Err(Error::domain(
            "heat_kernel",
            "heat_residual",
            format!("fd_step = {fd_step} leaves the stencil outside [{T_MIN}, inf)"),
        ));
    }
    let plus = log_p_raw(q.t + fd_step, &q.x, &q.y).exp();
    let minus = log_p_raw(q.t - fd_step, &q.x, &q.y).exp();
    let dt = (plus - minus) / (2.0 * fd_step);
    Ok((dt - laplacian_x(q)).abs())
}
