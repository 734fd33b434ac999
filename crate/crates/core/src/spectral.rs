//! Perron-Frobenius certificates for the averaging condition and the
//! explicit Euler-Maruyama stepsize bounds.
//!
//! For a moment order `p` the perturbed generator is
//! `Q_p = Q + (p/2) diag(beta)`. It has nonnegative off-diagonal entries and
//! the irreducible pattern of `Q`, so `Q_p + sI` is a nonnegative primitive
//! matrix for `s > max_i(-(Q_p)_ii)`. Its Perron root `rho` gives
//! `eta_p = s - rho = -(spectral abscissa of Q_p)` together with a strictly
//! positive eigenvector `xi`, `Q_p xi = -eta_p xi`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{GeneratorMatrix, StationaryDistribution};

/// Declared structural constants of a regime model: one-sided dissipativity
/// rates `beta_i`, the additive constant `c0`, the global Lipschitz constant
/// `L` and the growth offset `L0 = max_i |b(0,i)| + ||sigma(0,i)||`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeBounds {
    pub beta: Vec<f64>,
    pub c0: f64,
    pub lipschitz: f64,
    pub growth_offset: f64,
}

impl RegimeBounds {
    pub fn new(beta: Vec<f64>, c0: f64, lipschitz: f64, growth_offset: f64) -> Result<Self> {
        if beta.is_empty() || beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("beta must be a nonempty finite vector".into()));
        }
        for (name, v) in [("c0", c0), ("lipschitz", lipschitz), ("growth_offset", growth_offset)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(Self {
            beta,
            c0,
            lipschitz,
            growth_offset,
        })
    }

    /// `beta_0 = max_i |beta_i|`.
    pub fn beta0(&self) -> f64 {
        self.beta.iter().fold(0.0, |m, b| m.max(b.abs()))
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            beta: perm.iter().map(|&i| self.beta[i]).collect(),
            ..self.clone()
        }
    }
}

/// Weighted sum `sum_i mu_i beta_i` and whether it is strictly negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragingCheck {
    pub sum: f64,
    pub holds: bool,
}

pub fn averaging_condition(mu: &StationaryDistribution, bounds: &RegimeBounds) -> Result<AveragingCheck> {
    if mu.len() != bounds.beta.len() {
        return Err(Error::LengthMismatch {
            expected: mu.len(),
            found: bounds.beta.len(),
        });
    }
    let sum: f64 = mu.as_slice().iter().zip(&bounds.beta).map(|(m, b)| m * b).sum();
    Ok(AveragingCheck { sum, holds: sum < 0.0 })
}

pub fn build_qp(q: &GeneratorMatrix, bounds: &RegimeBounds, p: f64) -> Result<DMatrix<f64>> {
    if bounds.beta.len() != q.len() {
        return Err(Error::LengthMismatch {
            expected: q.len(),
            found: bounds.beta.len(),
        });
    }
    let mut qp = q.rates().clone();
    for (i, b) in bounds.beta.iter().enumerate() {
        qp[(i, i)] += 0.5 * p * b;
    }
    Ok(qp)
}

/// Perron data of a Metzler matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerronPair {
    /// Minus the spectral abscissa.
    pub eta: f64,
    /// Positive eigenvector with `max xi_i = 1`.
    pub xi: Vec<f64>,
    pub iterations: usize,
}

impl PerronPair {
    /// `||M xi + eta xi||_inf`.
    pub fn residual(&self, m: &DMatrix<f64>) -> f64 {
        let n = self.xi.len();
        (0..n)
            .map(|i| {
                let row: f64 = (0..n).map(|j| m[(i, j)] * self.xi[j]).sum();
                (row + self.eta * self.xi[i]).abs()
            })
            .fold(0.0, f64::max)
    }
}

pub const POWER_ITERATION_CAP: usize = 100_000;
const POWER_ITERATION_TOL: f64 = 1e-13;

/// Power iteration on `B = M + sI`, `s = max_i(-M_ii) + 1`.
///
/// Stops once the Collatz-Wielandt bounds `min_i (Bx)_i/x_i <= rho <= max_i (Bx)_i/x_i`
/// agree to a relative `1e-13`, which bounds the eigen-residual directly.
pub fn eta_p_and_eigvec(m: &DMatrix<f64>) -> Result<PerronPair> {
    let n = m.nrows();
    if n == 0 || m.ncols() != n {
        return Err(Error::BadShape {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    for i in 0..n {
        for j in 0..n {
            if !m[(i, j)].is_finite() {
                return Err(Error::NonFiniteRate { row: i, col: j, value: m[(i, j)] });
            }
            if i != j && m[(i, j)] < 0.0 {
                return Err(Error::NegativeRate { row: i, col: j, value: m[(i, j)] });
            }
        }
    }
    if !pattern_irreducible(m) {
        return Err(Error::Reducible { state: 0 });
    }
    let shift = (0..n).map(|i| -m[(i, i)]).fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let mut b = m.clone();
    for i in 0..n {
        b[(i, i)] += shift;
    }
    let mut x = vec![1.0; n];
    let mut y = vec![0.0; n];
    let mut gap = f64::INFINITY;
    for it in 1..=POWER_ITERATION_CAP {
        for i in 0..n {
            y[i] = (0..n).map(|j| b[(i, j)] * x[j]).sum();
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            let r = y[i] / x[i];
            lo = lo.min(r);
            hi = hi.max(r);
        }
        let top = y.iter().fold(0.0_f64, |a, v| a.max(*v));
        for i in 0..n {
            x[i] = y[i] / top;
        }
        gap = hi - lo;
        if gap <= POWER_ITERATION_TOL * hi.abs().max(1.0) {
            let rho = 0.5 * (hi + lo);
            return Ok(PerronPair {
                eta: shift - rho,
                xi: x,
                iterations: it,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: POWER_ITERATION_CAP,
        gap,
    })
}

fn pattern_irreducible(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    let reach = |edge: &dyn Fn(usize, usize) -> bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if i != j && !seen[j] && edge(i, j) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(&|i, j| m[(i, j)] > 0.0) && reach(&|i, j| m[(j, i)] > 0.0)
}

/// Perron data of `Q_p` plus the scalar summaries used by the stepsize bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralCertificate {
    pub p: f64,
    pub eta_p: f64,
    pub xi: Vec<f64>,
    /// `max_i xi_i`.
    pub xi_hat: f64,
    /// `(min_i xi_i)^{-1}`.
    pub xi_bar: f64,
    /// `max_i(-q_ii)`.
    pub q0: f64,
    /// `max_i |beta_i|`.
    pub beta0: f64,
    pub residual: f64,
}

impl SpectralCertificate {
    pub fn from_perron(p: f64, pair: PerronPair, q: &GeneratorMatrix, bounds: &RegimeBounds, residual: f64) -> Self {
        let xi_hat = pair.xi.iter().fold(f64::NEG_INFINITY, |a, v| a.max(*v));
        let xi_min = pair.xi.iter().fold(f64::INFINITY, |a, v| a.min(*v));
        Self {
            p,
            eta_p: pair.eta,
            xi: pair.xi,
            xi_hat,
            xi_bar: 1.0 / xi_min,
            q0: q.q0(),
            beta0: bounds.beta0(),
            residual,
        }
    }

    /// Rescales the eigenvector; every derived constant must be invariant.
    pub fn rescaled(&self, c: f64) -> Self {
        let xi: Vec<f64> = self.xi.iter().map(|v| v * c).collect();
        Self {
            xi_hat: self.xi_hat * c,
            xi_bar: self.xi_bar / c,
            xi,
            ..self.clone()
        }
    }

    /// Whether `eta_p` is positive beyond rounding noise of the shift.
    pub fn eta_positive(&self) -> bool {
        eta_is_positive(self.eta_p, self.q0 + 0.5 * self.p * self.beta0)
    }
}

/// `eta > 1e-12 * max(1, scale)`; a Perron root computed through a shift of
/// size `scale` cannot resolve smaller values.
pub fn eta_is_positive(eta: f64, scale: f64) -> bool {
    eta > 1e-12 * scale.max(1.0)
}

pub fn spectral_certificate(q: &GeneratorMatrix, bounds: &RegimeBounds, p: f64) -> Result<SpectralCertificate> {
    if !(p >= 0.0) || !p.is_finite() {
        return Err(Error::InvalidArgument(format!("moment order must be >= 0, got {p}")));
    }
    let qp = build_qp(q, bounds, p)?;
    let pair = eta_p_and_eigvec(&qp)?;
    let residual = pair.residual(&qp);
    Ok(SpectralCertificate::from_perron(p, pair, q, bounds, residual))
}

/// `p_0 = min_{beta_i > 0} (-2 q_ii / beta_i)`, `+inf` when every `beta_i <= 0`.
pub fn p0_threshold(q: &GeneratorMatrix, bounds: &RegimeBounds) -> f64 {
    bounds
        .beta
        .iter()
        .enumerate()
        .filter(|(_, b)| **b > 0.0)
        .map(|(i, b)| 2.0 * q.exit_rate(i) / b)
        .fold(f64::INFINITY, f64::min)
}

/// `min_{beta_i > 0} (-q_ii / beta_i) > 1`, vacuously true without positive rates.
pub fn condition_star6(q: &GeneratorMatrix, bounds: &RegimeBounds) -> bool {
    bounds
        .beta
        .iter()
        .enumerate()
        .filter(|(_, b)| **b > 0.0)
        .all(|(i, b)| q.exit_rate(i) / b > 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Additive,
    Multiplicative,
    Reversible,
    Partition,
}

/// Sufficient stepsize bound: every `delta < delta_max` is covered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepsizeBound {
    pub kind: BoundKind,
    /// `alpha`, `beta` or `kappa`, depending on `kind`.
    pub rate_constant: f64,
    pub delta_max: f64,
    pub p: f64,
}

/// `alpha = p{beta0 + 4L^2(3+4beta0) + 4^{(2+p)/2} beta0 (4^{p/2} L^p + q0 xi_hat xi_bar)}`.
pub fn alpha_additive(bounds: &RegimeBounds, cert: &SpectralCertificate) -> f64 {
    let p = cert.p;
    let l = bounds.lipschitz;
    let b0 = bounds.beta0();
    let spread = cert.xi_hat * cert.xi_bar;
    p * (b0
        + 4.0 * l * l * (3.0 + 4.0 * b0)
        + 4f64.powf((2.0 + p) / 2.0) * b0 * (4f64.powf(p / 2.0) * l.powf(p) + cert.q0 * spread))
}

/// `min(1/(16L^2), (eta_p/alpha)^{2/p}, 1)`.
pub fn delta_max_additive(bounds: &RegimeBounds, cert: &SpectralCertificate, alpha: f64) -> Result<StepsizeBound> {
    if !cert.eta_positive() {
        return Err(Error::NonPositiveEta(cert.eta_p));
    }
    let l = bounds.lipschitz;
    let lipschitz_factor = 1.0 / (16.0 * l * l);
    let rate_factor = (cert.eta_p / alpha).powf(2.0 / cert.p);
    Ok(StepsizeBound {
        kind: BoundKind::Additive,
        rate_constant: alpha,
        delta_max: lipschitz_factor.min(rate_factor).min(1.0),
        p: cert.p,
    })
}

/// `beta = {(1 + 12 q0) beta0 + 8 L^2 (5 + 6 beta0)} xi_hat_2 xi_bar_2`.
pub fn beta_multiplicative(q: &GeneratorMatrix, bounds: &RegimeBounds, cert2: &SpectralCertificate) -> Result<f64> {
    if !condition_star6(q, bounds) {
        return Err(Error::Star6Violated);
    }
    Ok(multiplicative_constant(q.q0(), bounds, cert2.xi_hat * cert2.xi_bar))
}

/// Shared shape of the multiplicative and reversible constants.
pub(crate) fn multiplicative_constant(q0: f64, bounds: &RegimeBounds, spread: f64) -> f64 {
    let b0 = bounds.beta0();
    let l = bounds.lipschitz;
    ((1.0 + 12.0 * q0) * b0 + 8.0 * l * l * (5.0 + 6.0 * b0)) * spread
}

/// `min(1/(32L^2), (eta_2/beta)^2, 1)`.
pub fn delta_max_multiplicative(bounds: &RegimeBounds, cert2: &SpectralCertificate, beta: f64) -> Result<StepsizeBound> {
    if !cert2.eta_positive() {
        return Err(Error::NonPositiveEta(cert2.eta_p));
    }
    Ok(StepsizeBound {
        kind: BoundKind::Multiplicative,
        rate_constant: beta,
        delta_max: quadratic_bound(bounds.lipschitz, cert2.eta_p, beta),
        p: cert2.p,
    })
}

pub(crate) fn quadratic_bound(l: f64, rate: f64, constant: f64) -> f64 {
    (1.0 / (32.0 * l * l)).min((rate / constant).powi(2)).min(1.0)
}

/// Default moment orders tried by [`certify_additive`].
pub const DEFAULT_P_GRID: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveCandidate {
    pub cert: SpectralCertificate,
    pub alpha: f64,
    /// `None` when `eta_p <= 0`.
    pub bound: Option<StepsizeBound>,
}

/// Evaluates the additive-noise bound on `grid ∩ (0, min(1, p0))`.
pub fn certify_additive(q: &GeneratorMatrix, bounds: &RegimeBounds, grid: &[f64]) -> Result<Vec<AdditiveCandidate>> {
    let cap = p0_threshold(q, bounds).min(1.0);
    grid.iter()
        .filter(|&&p| p > 0.0 && p < cap)
        .map(|&p| {
            let cert = spectral_certificate(q, bounds, p)?;
            let alpha = alpha_additive(bounds, &cert);
            let bound = delta_max_additive(bounds, &cert, alpha).ok();
            Ok(AdditiveCandidate { cert, alpha, bound })
        })
        .collect()
}

/// Candidate with the largest `delta_max`.
pub fn best_additive(candidates: &[AdditiveCandidate]) -> Option<&AdditiveCandidate> {
    candidates
        .iter()
        .filter(|c| c.bound.is_some())
        .max_by(|a, b| {
            let da = a.bound.map_or(0.0, |x| x.delta_max);
            let db = b.bound.map_or(0.0, |x| x.delta_max);
            da.total_cmp(&db)
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplicativeCertificate {
    pub cert: SpectralCertificate,
    pub star6: bool,
    pub beta: Option<f64>,
    pub bound: Option<StepsizeBound>,
}

/// Certificate at `p = 2`; `beta` and the bound are absent when the exit-rate condition
/// fails or `eta_2 <= 0`.
pub fn certify_multiplicative(q: &GeneratorMatrix, bounds: &RegimeBounds) -> Result<MultiplicativeCertificate> {
    let cert = spectral_certificate(q, bounds, 2.0)?;
    let star6 = condition_star6(q, bounds);
    let beta = beta_multiplicative(q, bounds, &cert).ok();
    let bound = beta.and_then(|b| delta_max_multiplicative(bounds, &cert, b).ok());
    Ok(MultiplicativeCertificate { cert, star6, beta, bound })
}
