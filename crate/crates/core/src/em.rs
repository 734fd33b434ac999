//! Euler–Maruyama scheme with the switching chain sampled at gridpoints:
//! `Y_{k+1} = Y_k + b(Y_k, L_k) delta + sigma(Y_k, L_k) dW_k`.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{ChainClock, GeneratorMatrix};
use crate::rng::{self, Purpose};
use crate::spectral::RegimeBounds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    /// `sigma(x, i) = sigma(i)`.
    Additive,
    Multiplicative,
}

/// Coefficients of a regime-switching SDE. Implementations must be
/// reentrant; ensembles evaluate them from several threads.
pub trait RegimeModel: Sync {
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn regimes(&self) -> usize;
    fn noise_kind(&self) -> NoiseKind;
    fn bounds(&self) -> &RegimeBounds;
    fn drift(&self, x: &[f64], i: usize, out: &mut [f64]);
    /// Row-major `dim x noise_dim` matrix.
    fn diffusion(&self, x: &[f64], i: usize, out: &mut [f64]);
    /// `A_i` when `b(x, i) = A_i x + a_i`.
    fn drift_matrix(&self, _i: usize) -> Option<DMatrix<f64>> {
        None
    }
}

/// Per regime: `b(x) = A x + a`, column `k` of `sigma(x)` is `S e_k + C_k x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRegime {
    pub drift: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub diffusion: DMatrix<f64>,
    pub multipliers: Vec<DMatrix<f64>>,
}

impl LinearRegime {
    pub fn scalar_additive(alpha: f64, sigma: f64) -> Self {
        Self {
            drift: DMatrix::from_element(1, 1, alpha),
            offset: DVector::zeros(1),
            diffusion: DMatrix::from_element(1, 1, sigma),
            multipliers: vec![DMatrix::zeros(1, 1)],
        }
    }

    pub fn scalar_multiplicative(alpha: f64, sigma: f64) -> Self {
        Self {
            drift: DMatrix::from_element(1, 1, alpha),
            offset: DVector::zeros(1),
            diffusion: DMatrix::zeros(1, 1),
            multipliers: vec![DMatrix::from_element(1, 1, sigma)],
        }
    }

    fn is_additive(&self) -> bool {
        self.multipliers.iter().all(|c| c.iter().all(|v| *v == 0.0))
    }

    /// Smallest `beta` with `2<d, A d> + sum_k |C_k d|^2 <= beta |d|^2`.
    fn dissipativity(&self) -> f64 {
        let mut m = &self.drift + self.drift.transpose();
        for c in &self.multipliers {
            m += c.transpose() * c;
        }
        largest_eigenvalue(m)
    }

    fn lipschitz(&self) -> f64 {
        let n = self.drift.nrows();
        let mut g = DMatrix::zeros(n, n);
        for c in &self.multipliers {
            g += c.transpose() * c;
        }
        spectral_norm(&self.drift) + largest_eigenvalue(g).max(0.0).sqrt()
    }

    /// Linear part of `2<x, b(x)> + ||sigma(x)||^2`: `2 a + 2 sum_k C_k^T s_k`.
    fn cross_term(&self) -> DVector<f64> {
        let mut g = &self.offset * 2.0;
        for (k, c) in self.multipliers.iter().enumerate() {
            g += c.transpose() * self.diffusion.column(k) * 2.0;
        }
        g
    }
}

fn largest_eigenvalue(m: DMatrix<f64>) -> f64 {
    let sym = (&m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    largest_eigenvalue(a.transpose() * a).max(0.0).sqrt()
}

/// Regime-switching linear SDE.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    regimes: Vec<LinearRegime>,
    kind: NoiseKind,
    bounds: RegimeBounds,
}

impl LinearModel {
    /// Builds the model with its exact structural constants. Affine cross
    /// terms (nonzero offsets, or constant and multiplicative noise in the
    /// same regime) cannot share one `beta` between the growth and the
    /// monotonicity condition; such models need [`LinearModel::with_bounds`].
    pub fn new(regimes: Vec<LinearRegime>) -> Result<Self> {
        let kind = check_shapes(&regimes)?;
        let bounds = exact_bounds(&regimes)?;
        Ok(Self { regimes, kind, bounds })
    }

    pub fn with_bounds(regimes: Vec<LinearRegime>, bounds: RegimeBounds) -> Result<Self> {
        let kind = check_shapes(&regimes)?;
        if bounds.beta.len() != regimes.len() {
            return Err(Error::LengthMismatch {
                expected: regimes.len(),
                found: bounds.beta.len(),
            });
        }
        Ok(Self { regimes, kind, bounds })
    }

    pub fn scalar(kind: NoiseKind, alpha: &[f64], sigma: &[f64]) -> Result<Self> {
        if alpha.len() != sigma.len() {
            return Err(Error::LengthMismatch {
                expected: alpha.len(),
                found: sigma.len(),
            });
        }
        let regimes = alpha
            .iter()
            .zip(sigma)
            .map(|(&a, &s)| match kind {
                NoiseKind::Additive => LinearRegime::scalar_additive(a, s),
                NoiseKind::Multiplicative => LinearRegime::scalar_multiplicative(a, s),
            })
            .collect();
        let mut model = Self::new(regimes)?;
        model.kind = kind;
        Ok(model)
    }

    pub fn regime(&self, i: usize) -> &LinearRegime {
        &self.regimes[i]
    }
}

fn check_shapes(regimes: &[LinearRegime]) -> Result<NoiseKind> {
    let first = regimes
        .first()
        .ok_or_else(|| Error::InvalidArgument("model needs at least one regime".into()))?;
    let n = first.drift.nrows();
    let m = first.diffusion.ncols();
    if n == 0 || m == 0 {
        return Err(Error::BadShape { rows: n, cols: m });
    }
    for r in regimes {
        let bad = r.drift.shape() != (n, n)
            || r.offset.len() != n
            || r.diffusion.shape() != (n, m)
            || r.multipliers.len() != m
            || r.multipliers.iter().any(|c| c.shape() != (n, n));
        if bad {
            return Err(Error::BadShape {
                rows: r.drift.nrows(),
                cols: r.drift.ncols(),
            });
        }
        let finite = r.drift.iter().chain(r.offset.iter()).chain(r.diffusion.iter()).all(|v| v.is_finite())
            && r.multipliers.iter().all(|c| c.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::InvalidArgument("model coefficients must be finite".into()));
        }
    }
    Ok(if regimes.iter().all(LinearRegime::is_additive) {
        NoiseKind::Additive
    } else {
        NoiseKind::Multiplicative
    })
}

fn exact_bounds(regimes: &[LinearRegime]) -> Result<RegimeBounds> {
    if regimes.iter().any(|r| r.cross_term().iter().any(|v| *v != 0.0)) {
        return Err(Error::InvalidArgument(
            "affine cross terms present; declare beta, c0 and L explicitly".into(),
        ));
    }
    let beta = regimes.iter().map(LinearRegime::dissipativity).collect();
    let c0 = regimes.iter().map(|r| r.diffusion.norm_squared()).fold(0.0, f64::max);
    let lipschitz = regimes.iter().map(LinearRegime::lipschitz).fold(0.0, f64::max);
    let growth_offset = regimes
        .iter()
        .map(|r| r.offset.norm() + r.diffusion.norm())
        .fold(0.0, f64::max);
    RegimeBounds::new(beta, c0, lipschitz, growth_offset)
}

impl RegimeModel for LinearModel {
    fn dim(&self) -> usize {
        self.regimes[0].drift.nrows()
    }

    fn noise_dim(&self) -> usize {
        self.regimes[0].diffusion.ncols()
    }

    fn regimes(&self) -> usize {
        self.regimes.len()
    }

    fn noise_kind(&self) -> NoiseKind {
        self.kind
    }

    fn bounds(&self) -> &RegimeBounds {
        &self.bounds
    }

    fn drift(&self, x: &[f64], i: usize, out: &mut [f64]) {
        let r = &self.regimes[i];
        let n = x.len();
        for (row, o) in out.iter_mut().enumerate() {
            let mut acc = r.offset[row];
            for (col, xc) in x.iter().enumerate().take(n) {
                acc += r.drift[(row, col)] * xc;
            }
            *o = acc;
        }
    }

    fn diffusion(&self, x: &[f64], i: usize, out: &mut [f64]) {
        let r = &self.regimes[i];
        let m = r.diffusion.ncols();
        for row in 0..x.len() {
            for k in 0..m {
                let c = &r.multipliers[k];
                let mut acc = r.diffusion[(row, k)];
                for (col, xc) in x.iter().enumerate() {
                    acc += c[(row, col)] * xc;
                }
                out[row * m + k] = acc;
            }
        }
    }

    fn drift_matrix(&self, i: usize) -> Option<DMatrix<f64>> {
        Some(self.regimes[i].drift.clone())
    }
}

/// Model given by closures, for coefficients that are not linear.
pub struct FnModel<B, S> {
    pub dim: usize,
    pub noise_dim: usize,
    pub regimes: usize,
    pub kind: NoiseKind,
    pub bounds: RegimeBounds,
    pub drift: B,
    pub diffusion: S,
}

impl<B, S> RegimeModel for FnModel<B, S>
where
    B: Fn(&[f64], usize, &mut [f64]) + Sync,
    S: Fn(&[f64], usize, &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn regimes(&self) -> usize {
        self.regimes
    }

    fn noise_kind(&self) -> NoiseKind {
        self.kind
    }

    fn bounds(&self) -> &RegimeBounds {
        &self.bounds
    }

    fn drift(&self, x: &[f64], i: usize, out: &mut [f64]) {
        (self.drift)(x, i, out)
    }

    fn diffusion(&self, x: &[f64], i: usize, out: &mut [f64]) {
        (self.diffusion)(x, i, out)
    }
}

/// Scratch buffers for [`em_step_into`].
#[derive(Debug, Clone)]
pub struct StepBuffers {
    drift: Vec<f64>,
    diffusion: Vec<f64>,
}

impl StepBuffers {
    pub fn new<M: RegimeModel + ?Sized>(model: &M) -> Self {
        Self {
            drift: vec![0.0; model.dim()],
            diffusion: vec![0.0; model.dim() * model.noise_dim()],
        }
    }
}

/// One step in place. Returns `false` when the new state is not finite.
pub fn em_step_into<M: RegimeModel + ?Sized>(
    model: &M,
    x: &mut [f64],
    i: usize,
    delta: f64,
    dw: &[f64],
    buf: &mut StepBuffers,
) -> bool {
    let m = dw.len();
    model.drift(x, i, &mut buf.drift);
    model.diffusion(x, i, &mut buf.diffusion);
    let mut finite = true;
    for (row, xr) in x.iter_mut().enumerate() {
        let noise: f64 = (0..m).map(|k| buf.diffusion[row * m + k] * dw[k]).sum();
        *xr += buf.drift[row] * delta + noise;
        finite &= xr.is_finite();
    }
    finite
}

/// `x + b(x, i) delta + sigma(x, i) dw`.
pub fn em_step<M: RegimeModel + ?Sized>(model: &M, x: &[f64], i: usize, delta: f64, dw: &[f64]) -> Result<Vec<f64>> {
    if x.len() != model.dim() || dw.len() != model.noise_dim() {
        return Err(Error::LengthMismatch {
            expected: model.dim(),
            found: x.len(),
        });
    }
    let mut y = x.to_vec();
    let mut buf = StepBuffers::new(model);
    if em_step_into(model, &mut y, i, delta, dw, &mut buf) {
        Ok(y)
    } else {
        Err(Error::NonFiniteState { step: 1 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub delta: f64,
    pub steps: u64,
    pub x0: Vec<f64>,
    pub i0: usize,
    pub seed: u64,
    /// Record every `stride`-th gridpoint.
    pub stride: u64,
    /// Stream index, so ensemble members draw independent noise.
    pub trajectory: u64,
}

impl SimulationConfig {
    pub fn new(delta: f64, steps: u64, x0: Vec<f64>, i0: usize, seed: u64) -> Self {
        Self {
            delta,
            steps,
            x0,
            i0,
            seed,
            stride: 1,
            trajectory: 0,
        }
    }

    pub fn with_stride(mut self, stride: u64) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_trajectory(mut self, trajectory: u64) -> Self {
        self.trajectory = trajectory;
        self
    }

    pub fn validate<M: RegimeModel + ?Sized>(&self, model: &M, q: &GeneratorMatrix) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.steps == 0 || self.stride == 0 {
            return Err(Error::InvalidArgument("steps and stride must be at least 1".into()));
        }
        if self.x0.len() != model.dim() {
            return Err(Error::LengthMismatch {
                expected: model.dim(),
                found: self.x0.len(),
            });
        }
        if model.regimes() != q.len() {
            return Err(Error::LengthMismatch {
                expected: q.len(),
                found: model.regimes(),
            });
        }
        if self.i0 >= q.len() {
            return Err(Error::InvalidArgument(format!("initial regime {} out of range", self.i0)));
        }
        Ok(())
    }
}

/// Chain sampled at the gridpoints plus the Brownian increments, from two
/// independent streams.
pub struct GridDriver<'q> {
    clock: ChainClock<'q, ChaCha8Rng>,
    noise: ChaCha8Rng,
    delta: f64,
    sqrt_delta: f64,
    step: u64,
}

impl<'q> GridDriver<'q> {
    pub fn new(q: &'q GeneratorMatrix, delta: f64, i0: usize, seed: u64, trajectory: u64) -> Self {
        Self {
            clock: ChainClock::new(q, i0, rng::stream(seed, trajectory, Purpose::Chain)),
            noise: rng::stream(seed, trajectory, Purpose::Brownian),
            delta,
            sqrt_delta: delta.sqrt(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Regime at the current gridpoint.
    pub fn regime(&mut self) -> usize {
        self.clock.state_at(self.step as f64 * self.delta)
    }

    /// Fills `dw` with the increment for the current step, moves to the
    /// next gridpoint and returns the regime that governs the step.
    pub fn advance(&mut self, dw: &mut [f64]) -> usize {
        let i = self.regime();
        for v in dw.iter_mut() {
            let z: f64 = self.noise.sample(StandardNormal);
            *v = z * self.sqrt_delta;
        }
        self.step += 1;
        i
    }
}

/// Runs `legs` through the scheme with shared noise and chain, calling
/// `visit(step, regime, legs)` at step 0 and every `stride` steps.
pub fn run_legs<M, F>(model: &M, q: &GeneratorMatrix, cfg: &SimulationConfig, legs: &mut [Vec<f64>], mut visit: F) -> Result<()>
where
    M: RegimeModel + ?Sized,
    F: FnMut(u64, usize, &[Vec<f64>]),
{
    cfg.validate(model, q)?;
    let mut driver = GridDriver::new(q, cfg.delta, cfg.i0, cfg.seed, cfg.trajectory);
    let mut buf = StepBuffers::new(model);
    let mut dw = vec![0.0; model.noise_dim()];
    let i = driver.regime();
    visit(0, i, legs);
    for k in 1..=cfg.steps {
        let i = driver.advance(&mut dw);
        for leg in legs.iter_mut() {
            if !em_step_into(model, leg, i, cfg.delta, &dw, &mut buf) {
                return Err(Error::NonFiniteState { step: k });
            }
        }
        if k % cfg.stride == 0 {
            let i = driver.regime();
            visit(k, i, legs);
        }
    }
    Ok(())
}

/// Recorded gridpoints `(k delta, Y_k, L_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub delta: f64,
    pub dim: usize,
    pub steps: Vec<u64>,
    pub states: Vec<usize>,
    /// Row-major, `dim` values per record.
    pub values: Vec<f64>,
}

impl Trajectory {
    fn new(delta: f64, dim: usize) -> Self {
        Self {
            delta,
            dim,
            steps: Vec::new(),
            states: Vec::new(),
            values: Vec::new(),
        }
    }

    fn push(&mut self, k: u64, i: usize, y: &[f64]) {
        self.steps.push(k);
        self.states.push(i);
        self.values.extend_from_slice(y);
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn time(&self, r: usize) -> f64 {
        self.steps[r] as f64 * self.delta
    }

    pub fn point(&self, r: usize) -> &[f64] {
        &self.values[r * self.dim..(r + 1) * self.dim]
    }

    pub fn last(&self) -> Option<(usize, &[f64])> {
        let r = self.len().checked_sub(1)?;
        Some((self.states[r], self.point(r)))
    }

    /// CSV with header `t,state,y_1..y_n`, numbers in `{:.16e}`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let header: Vec<String> = (1..=self.dim).map(|c| format!("y_{c}")).collect();
        writeln!(w, "t,state,{}", header.join(","))?;
        for r in 0..self.len() {
            write!(w, "{:.16e},{}", self.time(r), self.states[r])?;
            for v in self.point(r) {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn simulate<M: RegimeModel + ?Sized>(model: &M, q: &GeneratorMatrix, cfg: &SimulationConfig) -> Result<Trajectory> {
    let mut traj = Trajectory::new(cfg.delta, model.dim());
    let mut legs = vec![cfg.x0.clone()];
    run_legs(model, q, cfg, &mut legs, |k, i, legs| traj.push(k, i, &legs[0]))?;
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledTrajectory {
    pub first: Trajectory,
    pub second: Trajectory,
}

impl CoupledTrajectory {
    /// `|Y^x_k - Y^y_k|` at every record.
    pub fn distances(&self) -> Vec<f64> {
        (0..self.first.len())
            .map(|r| {
                self.first
                    .point(r)
                    .iter()
                    .zip(self.second.point(r))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }
}

/// Two legs from `cfg.x0` and `x0_b` with identical increments and chain.
pub fn simulate_coupled<M: RegimeModel + ?Sized>(
    model: &M,
    q: &GeneratorMatrix,
    cfg: &SimulationConfig,
    x0_b: &[f64],
) -> Result<CoupledTrajectory> {
    if x0_b.len() != model.dim() {
        return Err(Error::LengthMismatch {
            expected: model.dim(),
            found: x0_b.len(),
        });
    }
    let mut first = Trajectory::new(cfg.delta, model.dim());
    let mut second = Trajectory::new(cfg.delta, model.dim());
    let mut legs = vec![cfg.x0.clone(), x0_b.to_vec()];
    run_legs(model, q, cfg, &mut legs, |k, i, legs| {
        first.push(k, i, &legs[0]);
        second.push(k, i, &legs[1]);
    })?;
    Ok(CoupledTrajectory { first, second })
}

/// First gridpoint `k` with `k delta >= t`, matching the comparison the
/// chain clock uses.
fn first_gridpoint_at_or_after(t: f64, delta: f64) -> u64 {
    let mut k = (t / delta).ceil().max(0.0) as u64;
    while (k as f64) * delta < t {
        k += 1;
    }
    while k > 0 && ((k - 1) as f64) * delta >= t {
        k -= 1;
    }
    k
}

/// `(I + delta A)^m d`; scalar factors are applied as `exp(m ln(1 + delta a))`.
fn apply_power(a: &DMatrix<f64>, delta: f64, m: u64, d: &mut DVector<f64>) {
    if m == 0 {
        return;
    }
    if a.nrows() == 1 {
        let factor = (m as f64 * (delta * a[(0, 0)]).ln_1p()).exp();
        d[0] *= factor;
        return;
    }
    let n = a.nrows();
    let mut base = DMatrix::identity(n, n) + a * delta;
    let mut e = m;
    while e > 0 {
        if e & 1 == 1 {
            *d = &base * &*d;
        }
        e >>= 1;
        if e > 0 {
            base = &base * &base;
        }
    }
}

/// Difference of two synchronously coupled legs at the gridpoints in
/// `record_steps` (ascending), for additive noise and linear drift. The
/// noise cancels, so `D_{k+1} = (I + delta A_i) D_k` and every stretch of
/// gridpoints spent in one regime is applied as a single matrix power.
/// The chain is drawn from the same stream as [`simulate_coupled`].
pub fn coupled_difference_blocks<M: RegimeModel + ?Sized>(
    model: &M,
    q: &GeneratorMatrix,
    cfg: &SimulationConfig,
    diff0: &[f64],
    record_steps: &[u64],
) -> Result<Vec<Vec<f64>>> {
    if model.noise_kind() != NoiseKind::Additive {
        return Err(Error::InvalidArgument("block evaluation needs additive noise".into()));
    }
    let mats: Vec<DMatrix<f64>> = (0..model.regimes())
        .map(|i| model.drift_matrix(i))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::InvalidArgument("block evaluation needs a linear drift".into()))?;
    if diff0.len() != model.dim() {
        return Err(Error::LengthMismatch {
            expected: model.dim(),
            found: diff0.len(),
        });
    }
    if record_steps.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("record steps must be ascending".into()));
    }
    let delta = cfg.delta;
    let mut clock = ChainClock::new(q, cfg.i0, rng::stream(cfg.seed, cfg.trajectory, Purpose::Chain));
    let mut d = DVector::from_column_slice(diff0);
    let mut k = 0u64;
    let mut out = Vec::with_capacity(record_steps.len());
    for &target in record_steps {
        while k < target {
            let i = clock.state_at(k as f64 * delta);
            let change = first_gridpoint_at_or_after(clock.next_jump(), delta);
            let end = change.min(target);
            apply_power(&mats[i], delta, end - k, &mut d);
            if d.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { step: end });
            }
            k = end;
        }
        out.push(d.iter().copied().collect());
    }
    Ok(out)
}

/// Largest observed violations of the declared constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub samples: usize,
    pub radius: f64,
    /// Per regime: `2<x,b> + ||sigma||^2 - c0 - beta_i |x|^2`.
    pub growth: Vec<f64>,
    /// Per regime: monotonicity condition against `beta_i |x-y|^2`.
    pub monotonicity: Vec<f64>,
    /// Per regime: `|b(x)-b(y)| + ||sigma(x)-sigma(y)|| - L |x-y|`.
    pub lipschitz: Vec<f64>,
}

impl BoundsReport {
    pub fn max_violation(&self) -> f64 {
        self.growth
            .iter()
            .chain(&self.monotonicity)
            .chain(&self.lipschitz)
            .fold(0.0, |m, v| m.max(*v))
    }

    pub fn holds(&self) -> bool {
        self.max_violation() == 0.0
    }
}

fn excess(lhs: f64, rhs: f64) -> f64 {
    let slack = 1e-12 * lhs.abs().max(rhs.abs()).max(1.0);
    (lhs - rhs - slack).max(0.0)
}

fn sample_ball(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<f64> {
    let dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = dir.iter().map(|v: &f64| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let u: f64 = rng.random();
    let r = radius * u.powf(1.0 / dim as f64);
    dir.iter().map(|v| v / norm * r).collect()
}

/// Spot-checks the declared constants on random pairs in the ball of the
/// given radius. Rounding up to `1e-12` relative is not counted.
pub fn verify_bounds<M: RegimeModel + ?Sized>(model: &M, sample_count: usize, radius: f64, seed: u64) -> BoundsReport {
    let n = model.dim();
    let m = model.noise_dim();
    let bounds = model.bounds();
    let mut rng = rng::stream(seed, 0, Purpose::Auxiliary);
    let mut report = BoundsReport {
        samples: sample_count,
        radius,
        growth: vec![0.0; model.regimes()],
        monotonicity: vec![0.0; model.regimes()],
        lipschitz: vec![0.0; model.regimes()],
    };
    let (mut bx, mut by) = (vec![0.0; n], vec![0.0; n]);
    let (mut sx, mut sy) = (vec![0.0; n * m], vec![0.0; n * m]);
    for _ in 0..sample_count {
        let x = sample_ball(&mut rng, n, radius);
        let y = sample_ball(&mut rng, n, radius);
        for i in 0..model.regimes() {
            let beta = bounds.beta[i];
            model.drift(&x, i, &mut bx);
            model.drift(&y, i, &mut by);
            model.diffusion(&x, i, &mut sx);
            model.diffusion(&y, i, &mut sy);
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
            let x2 = dot(&x, &x);
            let growth = 2.0 * dot(&x, &bx) + dot(&sx, &sx);
            report.growth[i] = report.growth[i].max(excess(growth, bounds.c0 + beta * x2));

            let dx: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            let db: Vec<f64> = bx.iter().zip(&by).map(|(a, b)| a - b).collect();
            let ds: Vec<f64> = sx.iter().zip(&sy).map(|(a, b)| a - b).collect();
            let d2 = dot(&dx, &dx);
            let mono = 2.0 * dot(&dx, &db) + dot(&ds, &ds);
            report.monotonicity[i] = report.monotonicity[i].max(excess(mono, beta * d2));
            let lip = dot(&db, &db).sqrt() + dot(&ds, &ds).sqrt();
            report.lipschitz[i] = report.lipschitz[i].max(excess(lip, bounds.lipschitz * d2.sqrt()));
        }
    }
    report
}

/// A catalogued model with its generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Builtin {
    pub name: &'static str,
    pub model: LinearModel,
    pub generator: GeneratorMatrix,
    /// Optional alternative constants reported next to the literal ones.
    pub alt_bounds: Option<RegimeBounds>,
}

fn out_of_range(msg: impl Into<String>) -> Error {
    Error::ParameterOutOfRange(msg.into())
}

/// Two-state Ornstein–Uhlenbeck switching between `alpha = 1` and
/// `alpha = -1/2`, generator `[[-4, 4], [gamma, -gamma]]`, additive noise.
pub fn example_2_5(gamma: f64, sigma0: f64, sigma1: f64) -> Result<Builtin> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(out_of_range(format!("gamma must be > 0, got {gamma}")));
    }
    let model = LinearModel::scalar(NoiseKind::Additive, &[1.0, -0.5], &[sigma0, sigma1])?;
    let generator = GeneratorMatrix::from_rows(&[vec![-4.0, 4.0], vec![gamma, -gamma]])?;
    let b = model.bounds();
    let alt_bounds = Some(RegimeBounds::new(vec![1.0, -0.5], b.c0, b.lipschitz, b.growth_offset)?);
    Ok(Builtin {
        name: "example_2_5",
        model,
        generator,
        alt_bounds,
    })
}

fn example_3_5_generator(nu: f64) -> Result<GeneratorMatrix> {
    if !(nu >= 0.0 && nu.is_finite()) {
        return Err(out_of_range(format!("nu must be >= 0, got {nu}")));
    }
    GeneratorMatrix::from_rows(&[
        vec![-(3.0 + nu), nu, 3.0],
        vec![1.0, -3.0, 2.0],
        vec![1.0, 2.0, -3.0],
    ])
}

/// Three-state scalar linear SDE with multiplicative noise,
/// `alpha = (1/2, -2, -3)`, `sigma = (1/3, 2, 1)`.
pub fn example_3_5(nu: f64) -> Result<Builtin> {
    let generator = example_3_5_generator(nu)?;
    let model = LinearModel::scalar(NoiseKind::Multiplicative, &[0.5, -2.0, -3.0], &[1.0 / 3.0, 2.0, 1.0])?;
    Ok(Builtin {
        name: "example_3_5",
        model,
        generator,
        alt_bounds: None,
    })
}

/// The first regime of [`example_3_5`] in force in every state.
pub fn example_3_5_frozen(nu: f64) -> Result<Builtin> {
    let generator = example_3_5_generator(nu)?;
    let third = 1.0 / 3.0;
    let model = LinearModel::scalar(NoiseKind::Multiplicative, &[0.5; 3], &[third; 3])?;
    Ok(Builtin {
        name: "example_3_5_frozen",
        model,
        generator,
        alt_bounds: None,
    })
}

/// Birth-death chain `[[-b, b, 0], [2a, -2(a+b), 2b], [0, 3a, -3a]]` with
/// multiplicative scalar regimes; requires `b + c_0 < 0`, `a - b - c_1 > 0`
/// and `a - c_2 > 0` for `c_i = 2 alpha_i + sigma_i^2`.
pub fn example_4_3(a: f64, b: f64, alpha: [f64; 3], sigma: [f64; 3]) -> Result<Builtin> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(out_of_range(format!("need a > 0 and b > 0, got a = {a}, b = {b}")));
    }
    let c: Vec<f64> = alpha.iter().zip(&sigma).map(|(al, s)| 2.0 * al + s * s).collect();
    if !(b + c[0] < 0.0) {
        return Err(out_of_range(format!("b + c_0 = {} must be < 0", b + c[0])));
    }
    if !(a - b - c[1] > 0.0) {
        return Err(out_of_range(format!("a - b - c_1 = {} must be > 0", a - b - c[1])));
    }
    if !(a - c[2] > 0.0) {
        return Err(out_of_range(format!("a - c_2 = {} must be > 0", a - c[2])));
    }
    let generator = GeneratorMatrix::from_rows(&[
        vec![-b, b, 0.0],
        vec![2.0 * a, -2.0 * (a + b), 2.0 * b],
        vec![0.0, 3.0 * a, -3.0 * a],
    ])?;
    let model = LinearModel::scalar(NoiseKind::Multiplicative, &alpha, &sigma)?;
    Ok(Builtin {
        name: "example_4_3",
        model,
        generator,
        alt_bounds: None,
    })
}
