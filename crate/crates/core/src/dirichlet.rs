//! Principal-eigenvalue certificate for reversible switching chains.
//!
//! With `pi` reversible for `Q`, the operator `-(Q + diag(beta))` is
//! self-adjoint in `L^2(pi)`. The Dirichlet form
//! `D(f) = 1/2 sum pi_i q_ij (f_j - f_i)^2 - sum pi_i beta_i f_i^2`
//! is its quadratic form and `lambda_0 = inf { D(f) : ||f||_pi = 1 }` its
//! lowest eigenvalue.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{is_reversible, stationary_distribution, GeneratorMatrix, StationaryDistribution};
use crate::spectral::{multiplicative_constant, quadratic_bound, BoundKind, RegimeBounds, StepsizeBound};

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletProblem {
    q: GeneratorMatrix,
    pi: StationaryDistribution,
    beta: Vec<f64>,
}

impl DirichletProblem {
    pub fn new(q: GeneratorMatrix, beta: Vec<f64>) -> Result<Self> {
        let pi = stationary_distribution(&q)?;
        Self::with_distribution(q, pi, beta, 1e-10)
    }

    pub fn with_distribution(
        q: GeneratorMatrix,
        pi: StationaryDistribution,
        beta: Vec<f64>,
        balance_tol: f64,
    ) -> Result<Self> {
        if beta.len() != q.len() {
            return Err(Error::LengthMismatch {
                expected: q.len(),
                found: beta.len(),
            });
        }
        if pi.len() != q.len() {
            return Err(Error::LengthMismatch {
                expected: q.len(),
                found: pi.len(),
            });
        }
        if !is_reversible(&q, &pi, balance_tol) {
            return Err(Error::NotReversible);
        }
        Ok(Self { q, pi, beta })
    }

    pub fn generator(&self) -> &GeneratorMatrix {
        &self.q
    }

    pub fn distribution(&self) -> &StationaryDistribution {
        &self.pi
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// `||f||_pi^2`.
    pub fn norm_sq(&self, f: &[f64]) -> f64 {
        f.iter().zip(self.pi.as_slice()).map(|(v, p)| p * v * v).sum()
    }

    /// `(Omega f)_i` with `Omega = Q + diag(beta)`.
    pub fn apply_omega(&self, f: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| (0..n).map(|j| self.q.rate(i, j) * f[j]).sum::<f64>() + self.beta[i] * f[i])
            .collect()
    }
}

pub fn dirichlet_form(prob: &DirichletProblem, f: &[f64]) -> Result<f64> {
    let n = prob.len();
    if f.len() != n {
        return Err(Error::LengthMismatch { expected: n, found: f.len() });
    }
    let pi = prob.pi.as_slice();
    let mut energy = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                energy += pi[i] * prob.q.rate(i, j) * (f[j] - f[i]).powi(2);
            }
        }
    }
    let potential: f64 = (0..n).map(|i| pi[i] * prob.beta[i] * f[i] * f[i]).sum();
    Ok(0.5 * energy - potential)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenCertificate {
    pub lambda0: f64,
    /// Ground state mapped back from the symmetrised problem, `max xi_i = 1`.
    pub xi: Vec<f64>,
    pub xi_max: f64,
    pub xi_min_inv: f64,
    /// Gap to the next eigenvalue.
    pub spectral_gap: f64,
    /// `lambda_0` simple and `xi` strictly positive.
    pub nondegenerate: bool,
    /// `||(Q + diag beta) xi + lambda_0 xi||_inf`.
    pub residual: f64,
}

const POSITIVITY_TOL: f64 = 1e-12;

/// Smallest eigenvalue of `S = D^{1/2}(-Q - diag beta)D^{-1/2}`, `D = diag(pi)`.
pub fn principal_eigenvalue(prob: &DirichletProblem) -> Result<EigenCertificate> {
    let n = prob.len();
    let sqrt_pi: Vec<f64> = prob.pi.as_slice().iter().map(|p| p.sqrt()).collect();
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        s[(i, i)] = -prob.q.rate(i, i) - prob.beta[i];
        for j in 0..i {
            let upper = -prob.q.rate(i, j) * sqrt_pi[i] / sqrt_pi[j];
            let lower = -prob.q.rate(j, i) * sqrt_pi[j] / sqrt_pi[i];
            let v = 0.5 * (upper + lower);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    let scale = s.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    let eig = s.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let k = order[0];
    let lambda0 = eig.eigenvalues[k];
    let spectral_gap = if n > 1 {
        eig.eigenvalues[order[1]] - lambda0
    } else {
        f64::INFINITY
    };
    let mut xi: Vec<f64> = (0..n).map(|i| eig.eigenvectors[(i, k)] / sqrt_pi[i]).collect();
    if xi.iter().sum::<f64>() < 0.0 {
        xi.iter_mut().for_each(|v| *v = -*v);
    }
    let top = xi.iter().fold(f64::NEG_INFINITY, |a, v| a.max(*v));
    xi.iter_mut().for_each(|v| *v /= top);
    let xi_min = xi.iter().fold(f64::INFINITY, |a, v| a.min(*v));
    let omega = prob.apply_omega(&xi);
    let residual = omega
        .iter()
        .zip(&xi)
        .map(|(o, v)| (o + lambda0 * v).abs())
        .fold(0.0, f64::max);
    let nondegenerate = xi_min > POSITIVITY_TOL && spectral_gap > 1e-9 * scale;
    Ok(EigenCertificate {
        lambda0,
        xi,
        xi_max: 1.0,
        xi_min_inv: 1.0 / xi_min,
        spectral_gap,
        nondegenerate,
        residual,
    })
}

/// Largest `lambda` with `(Omega xi)_i <= -lambda xi_i` for every `i`.
pub fn test_vector_rate(prob: &DirichletProblem, xi: &[f64]) -> Result<f64> {
    if xi.len() != prob.len() {
        return Err(Error::LengthMismatch {
            expected: prob.len(),
            found: xi.len(),
        });
    }
    if xi.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::NonPositiveVector);
    }
    let omega = prob.apply_omega(xi);
    Ok(omega
        .iter()
        .zip(xi)
        .map(|(o, v)| -o / v)
        .fold(f64::INFINITY, f64::min))
}

/// `kappa = {(1 + 12 q0) beta0 + 8 L^2 (5 + 6 beta0)} xi_max xi_min_inv` and
/// `delta_max = min(1/(32L^2), (lambda_0/kappa)^2, 1)`.
pub fn kappa_and_delta(prob: &DirichletProblem, cert: &EigenCertificate, bounds: &RegimeBounds) -> Result<StepsizeBound> {
    if !(cert.lambda0 > 1e-12 * prob.q.q0().max(1.0)) {
        return Err(Error::NonPositiveLambda0(cert.lambda0));
    }
    if !cert.nondegenerate {
        return Err(Error::DegenerateGroundState);
    }
    let kappa = multiplicative_constant(prob.q.q0(), bounds, cert.xi_max * cert.xi_min_inv);
    Ok(StepsizeBound {
        kind: BoundKind::Reversible,
        rate_constant: kappa,
        delta_max: quadratic_bound(bounds.lipschitz, cert.lambda0, kappa),
        p: 2.0,
    })
}
