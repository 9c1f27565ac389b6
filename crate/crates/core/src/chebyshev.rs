//! Degree-K Chebyshev approximation of `cos(arccos(x) + m)` on `[-1, 1]`.
//!
//! The composite target has an unbounded derivative at `x = ±1`; its
//! truncated Chebyshev series is a polynomial with a bounded derivative
//! everywhere on the interval, which is the property the margin losses
//! rely on.

use crate::error::{Error, Result};
use std::f64::consts::PI;

/// Closed form of `cos(arccos(x) + m)`:
/// `x·cos(m) − sin(m)·√(1 − x²)`.
pub fn exact_target(x: f64, m: f64) -> Result<f64> {
    if !(x.is_finite() && m.is_finite()) {
        return Err(Error::InvalidArgument("non-finite input".into()));
    }
    if x.abs() > 1.0 {
        return Err(Error::Domain(format!("x = {x} outside [-1, 1]")));
    }
    Ok(x * m.cos() - m.sin() * (1.0 - x * x).sqrt())
}

/// Coefficients `a_0..a_K` of `F(x) = ½a_0 + Σ a_k T_k(x)` for the target
/// at margin `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebSeries {
    margin_m: f64,
    coeffs: Vec<f64>,
}

/// Default quadrature node count; at least 25× the largest degree in use.
pub const DEFAULT_QUAD_NODES: usize = 512;

impl ChebSeries {
    /// Chebyshev–Gauss quadrature:
    /// `a_k = (2/N) Σ_j f(cos θ_j) cos(k θ_j)`, `θ_j = π(j−½)/N`.
    ///
    /// Deterministic: fixed inputs give bit-identical coefficients.
    pub fn compute(m: f64, degree: usize, quad_nodes: usize) -> Result<Self> {
        if degree < 1 {
            return Err(Error::InvalidArgument("degree must be ≥ 1".into()));
        }
        if quad_nodes < 4 * degree {
            return Err(Error::InvalidArgument(format!(
                "quad_nodes = {quad_nodes} too small for degree {degree} (need ≥ {})",
                4 * degree
            )));
        }
        if !m.is_finite() {
            return Err(Error::InvalidArgument("margin must be finite".into()));
        }
        let n = quad_nodes;
        let thetas: Vec<f64> = (1..=n).map(|j| PI * (j as f64 - 0.5) / n as f64).collect();
        let fvals: Vec<f64> = thetas
            .iter()
            .map(|&t| exact_target(t.cos(), m).expect("cos θ is in [-1, 1]"))
            .collect();
        let mut coeffs = Vec::with_capacity(degree + 1);
        for k in 0..=degree {
            let mut acc = 0.0;
            for (f, t) in fvals.iter().zip(&thetas) {
                acc += f * (k as f64 * t).cos();
            }
            coeffs.push(2.0 * acc / n as f64);
        }
        Ok(ChebSeries {
            margin_m: m,
            coeffs,
        })
    }

    pub fn from_coeffs(margin_m: f64, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() < 2 {
            return Err(Error::InvalidArgument("need at least a_0 and a_1".into()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("coefficients must be finite".into()));
        }
        Ok(ChebSeries { margin_m, coeffs })
    }

    pub fn margin(&self) -> f64 {
        self.margin_m
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Clenshaw evaluation of `½a_0 + Σ a_k T_k(x)`; stable on the whole
    /// interval including the endpoints.
    pub fn eval(&self, x: f64) -> Result<f64> {
        if x.abs() > 1.0 {
            return Err(Error::Domain(format!("x = {x} outside [-1, 1]")));
        }
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: f64) -> f64 {
        clenshaw(&self.coeffs, x)
    }

    /// Value and derivative; the derivative series comes from the
    /// recurrence `d_k = d_{k+2} + 2(k+1) a_{k+1}`.
    pub fn eval_with_derivative(&self, x: f64) -> Result<(f64, f64)> {
        if x.abs() > 1.0 {
            return Err(Error::Domain(format!("x = {x} outside [-1, 1]")));
        }
        Ok((self.eval_unchecked(x), self.derivative_unchecked(x)))
    }

    pub(crate) fn derivative_unchecked(&self, x: f64) -> f64 {
        let k = self.coeffs.len() - 1;
        let mut deriv = vec![0.0; k + 2];
        for i in (0..k).rev() {
            deriv[i] = deriv[i + 2] + 2.0 * (i as f64 + 1.0) * self.coeffs[i + 1];
        }
        deriv.truncate(k.max(1));
        clenshaw(&deriv, x)
    }
}

/// `½b_0 + Σ_{k≥1} b_k T_k(x)` by the backward recurrence.
fn clenshaw(coeffs: &[f64], x: f64) -> f64 {
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &a in coeffs[1..].iter().rev() {
        let next = 2.0 * x * b1 - b2 + a;
        b2 = b1;
        b1 = next;
    }
    x * b1 - b2 + 0.5 * coeffs[0]
}
