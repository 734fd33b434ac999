//! Continuous-time Markov chain on a finite regime space: generator
//! validation, stationary law, detailed balance and exact path simulation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Numerical tolerances shared by the validation routines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Allowed |row sum| of a generator, scaled by max(1, sum of |q_ij| in the row).
    pub row_sum: f64,
    /// Allowed |pi_i q_ij - pi_j q_ji|.
    pub detailed_balance: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            row_sum: 1e-12,
            detailed_balance: 1e-10,
        }
    }
}

impl Tolerances {
    pub fn strict() -> Self {
        Self {
            row_sum: 1e-14,
            detailed_balance: 1e-12,
        }
    }
}

/// Conservative, irreducible Q-matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    rates: DMatrix<f64>,
}

impl GeneratorMatrix {
    pub fn new(raw: DMatrix<f64>) -> Result<Self> {
        validate_generator(raw, &Tolerances::default())
    }

    /// Builds from row-major nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::from_rows_with(rows, &Tolerances::default())
    }

    pub fn from_rows_with(rows: &[Vec<f64>], tol: &Tolerances) -> Result<Self> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::BadShape {
                rows: n,
                cols: bad.len(),
            });
        }
        let raw = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        validate_generator(raw, tol)
    }

    pub fn len(&self) -> usize {
        self.rates.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.nrows() == 0
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.rates[(i, j)]
    }

    pub fn rates(&self) -> &DMatrix<f64> {
        &self.rates
    }

    /// Total jump intensity out of `i`, i.e. `-q_ii`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.rates[(i, i)]
    }

    /// `q_0 = max_i(-q_ii)`.
    pub fn q0(&self) -> f64 {
        (0..self.len())
            .map(|i| self.exit_rate(i))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|i| self.rates.row(i).iter().copied().collect())
            .collect()
    }

    /// Same chain with states relabelled: new state `k` is old state `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.len();
        if perm.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: perm.len(),
            });
        }
        Ok(Self {
            rates: DMatrix::from_fn(n, n, |i, j| self.rates[(perm[i], perm[j])]),
        })
    }
}

/// Checks shape, finiteness, sign pattern, conservativeness and
/// irreducibility. Never repairs the input.
pub fn validate_generator(raw: DMatrix<f64>, tol: &Tolerances) -> Result<GeneratorMatrix> {
    let (rows, cols) = raw.shape();
    if rows != cols || rows < 2 {
        return Err(Error::BadShape { rows, cols });
    }
    let n = rows;
    for i in 0..n {
        for j in 0..n {
            let value = raw[(i, j)];
            if !value.is_finite() {
                return Err(Error::NonFiniteRate { row: i, col: j, value });
            }
            if i != j && value < 0.0 {
                return Err(Error::NegativeRate { row: i, col: j, value });
            }
        }
    }
    for i in 0..n {
        let row = raw.row(i);
        let sum: f64 = row.iter().sum();
        let scale: f64 = row.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        if sum.abs() > tol.row_sum * scale {
            return Err(Error::NonConservative { row: i, sum });
        }
    }
    let forward = reachable(n, |i, j| raw[(i, j)] > 0.0);
    if let Some(state) = forward.iter().position(|r| !r) {
        return Err(Error::Reducible { state });
    }
    let backward = reachable(n, |i, j| raw[(j, i)] > 0.0);
    if let Some(state) = backward.iter().position(|r| !r) {
        return Err(Error::Reducible { state });
    }
    Ok(GeneratorMatrix { rates: raw })
}

/// States reachable from state 0 along edges `i -> j` with `edge(i, j)`.
fn reachable(n: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<bool> {
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
    seen
}

/// Probability vector with `mu Q = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDistribution {
    mu: Vec<f64>,
}

impl StationaryDistribution {
    pub fn as_slice(&self) -> &[f64] {
        &self.mu
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.mu[i]
    }

    /// `||mu Q||_inf`.
    pub fn residual(&self, q: &GeneratorMatrix) -> f64 {
        let n = q.len();
        (0..n)
            .map(|j| (0..n).map(|i| self.mu[i] * q.rate(i, j)).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }
}

/// Solves `mu Q = 0`, `sum mu = 1` as a dense system: the last equation of
/// `Q^T mu = 0` is replaced by the normalisation row.
pub fn stationary_distribution(q: &GeneratorMatrix) -> Result<StationaryDistribution> {
    let n = q.len();
    let mut system = q.rates().transpose();
    for j in 0..n {
        system[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let lu = system.clone().lu();
    let mut mu = lu
        .solve(&rhs)
        .ok_or(Error::SingularSystem { residual: f64::INFINITY })?;
    // one step of iterative refinement
    let correction = lu.solve(&(&rhs - &system * &mu));
    if let Some(c) = correction {
        mu += c;
    }
    let total: f64 = mu.iter().sum();
    let dist = StationaryDistribution {
        mu: mu.iter().map(|m| m / total).collect(),
    };
    let residual = dist.residual(q);
    let scale = q.q0().max(1.0);
    if dist.mu.iter().any(|m| !(*m > 0.0)) || !(residual < 1e-10 * scale) {
        return Err(Error::SingularSystem { residual });
    }
    Ok(dist)
}

/// Detailed balance `mu_i q_ij = mu_j q_ji` for all pairs, within `tol`.
pub fn is_reversible(q: &GeneratorMatrix, mu: &StationaryDistribution, tol: f64) -> bool {
    let n = q.len();
    (0..n).all(|i| {
        (i + 1..n).all(|j| (mu.get(i) * q.rate(i, j) - mu.get(j) * q.rate(j, i)).abs() <= tol)
    })
}

/// Right-continuous piecewise-constant realisation of the chain on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainPath {
    pub initial: usize,
    /// Strictly increasing jump epochs in `(0, horizon]`.
    pub jump_times: Vec<f64>,
    /// State entered at the matching jump epoch.
    pub states: Vec<usize>,
    pub horizon: f64,
}

impl ChainPath {
    /// State at time `t` (the state entered at the last jump `<= t`).
    pub fn state_at(&self, t: f64) -> usize {
        let k = self.jump_times.partition_point(|&s| s <= t);
        if k == 0 {
            self.initial
        } else {
            self.states[k - 1]
        }
    }

    /// Fraction of `[0, horizon]` spent in each of `n` states.
    pub fn occupation(&self, n: usize) -> Vec<f64> {
        let mut occ = vec![0.0; n];
        let mut current = self.initial;
        let mut last = 0.0;
        for (&t, &s) in self.jump_times.iter().zip(&self.states) {
            occ[current] += t - last;
            current = s;
            last = t;
        }
        occ[current] += self.horizon - last;
        occ.iter_mut().for_each(|o| *o /= self.horizon);
        occ
    }
}

/// Event-driven sampler that generates jumps lazily. Feeding it the same
/// rng stream reproduces exactly the path returned by [`simulate_chain`].
#[derive(Debug, Clone)]
pub struct ChainClock<'a, R> {
    q: &'a GeneratorMatrix,
    rng: R,
    state: usize,
    next_jump: f64,
}

impl<'a, R: Rng> ChainClock<'a, R> {
    pub fn new(q: &'a GeneratorMatrix, initial: usize, mut rng: R) -> Self {
        let next_jump = holding_time(q, initial, &mut rng);
        Self {
            q,
            rng,
            state: initial,
            next_jump,
        }
    }

    pub fn state(&self) -> usize {
        self.state
    }

    /// Epoch of the next pending jump.
    pub fn next_jump(&self) -> f64 {
        self.next_jump
    }

    /// Performs the pending jump and returns `(epoch, new state)`.
    pub fn jump(&mut self) -> (f64, usize) {
        let epoch = self.next_jump;
        self.state = jump_target(self.q, self.state, &mut self.rng);
        self.next_jump = epoch + holding_time(self.q, self.state, &mut self.rng);
        (epoch, self.state)
    }

    /// Advances through every jump at or before `t` and returns the state at `t`.
    pub fn state_at(&mut self, t: f64) -> usize {
        while self.next_jump <= t {
            self.jump();
        }
        self.state
    }
}

fn holding_time<R: Rng>(q: &GeneratorMatrix, state: usize, rng: &mut R) -> f64 {
    let draw: f64 = rng.sample(Exp1);
    draw / q.exit_rate(state)
}

fn jump_target<R: Rng>(q: &GeneratorMatrix, state: usize, rng: &mut R) -> usize {
    let total = q.exit_rate(state);
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = state;
    for j in 0..q.len() {
        if j == state {
            continue;
        }
        let r = q.rate(state, j);
        if r > 0.0 {
            acc += r;
            last = j;
            if u < acc {
                return j;
            }
        }
    }
    last
}

/// Exact realisation: exponential holding times with rate `-q_ii`, jumps to
/// `j` with probability `q_ij / (-q_ii)`.
pub fn simulate_chain<R: Rng>(
    q: &GeneratorMatrix,
    initial: usize,
    horizon: f64,
    rng: R,
) -> Result<ChainPath> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive and finite, got {horizon}"
        )));
    }
    if initial >= q.len() {
        return Err(Error::InvalidArgument(format!(
            "initial state {initial} out of range for {} states",
            q.len()
        )));
    }
    let mut clock = ChainClock::new(q, initial, rng);
    let mut jump_times = Vec::new();
    let mut states = Vec::new();
    while clock.next_jump() <= horizon {
        let (t, s) = clock.jump();
        jump_times.push(t);
        states.push(s);
    }
    Ok(ChainPath {
        initial,
        jump_times,
        states,
        horizon,
    })
}

/// [`simulate_chain`] driven by the chain stream of `(seed, trajectory 0)`.
pub fn simulate_chain_seeded(
    q: &GeneratorMatrix,
    initial: usize,
    horizon: f64,
    seed: u64,
) -> Result<ChainPath> {
    simulate_chain(q, initial, horizon, rng::stream(seed, 0, Purpose::Chain))
}

/// Samples the path at `k * delta`, `k = 0..=steps`.
pub fn chain_at_grid(path: &ChainPath, delta: f64, steps: usize) -> Result<Vec<usize>> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    let needed = steps as f64 * delta;
    if needed > path.horizon * (1.0 + 1e-12) {
        return Err(Error::HorizonExceeded {
            needed,
            horizon: path.horizon,
        });
    }
    let mut out = Vec::with_capacity(steps + 1);
    let mut next = 0;
    let mut state = path.initial;
    for k in 0..=steps {
        let t = k as f64 * delta;
        while next < path.jump_times.len() && path.jump_times[next] <= t {
            state = path.states[next];
            next += 1;
        }
        out.push(state);
    }
    Ok(out)
}

/// Empirical survival curve of the meeting time of two independent chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingTail {
    /// `(t, fraction of pairs not yet met at t)`.
    pub curve: Vec<(f64, f64)>,
    pub n_paths: usize,
}

impl CouplingTail {
    /// Least-squares slope of `log P(tau > t)` over points with positive survival.
    pub fn log_slope(&self) -> Result<f64> {
        let (ts, ls): (Vec<f64>, Vec<f64>) = self
            .curve
            .iter()
            .filter(|(_, s)| *s > 0.0)
            .map(|&(t, s)| (t, s.ln()))
            .unzip();
        crate::stats::linear_fit(&ts, &ls).map(|fit| fit.slope)
    }
}

const TAIL_POINTS: usize = 100;

/// Runs `n_paths` independent pairs started in `i` and `j`; each pair uses
/// two chain streams derived from the master seed and the pair index.
pub fn coupling_tail(
    q: &GeneratorMatrix,
    i: usize,
    j: usize,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<CouplingTail> {
    if i == j {
        return Err(Error::InvalidArgument("coupling needs distinct initial states".into()));
    }
    if i >= q.len() || j >= q.len() {
        return Err(Error::InvalidArgument("initial state out of range".into()));
    }
    if n_paths == 0 {
        return Err(Error::InvalidArgument("n_paths must be positive, empty curve".into()));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!("bad horizon {horizon}")));
    }
    let meeting: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|k| {
            let a = ChainClock::new(q, i, rng::stream(seed, 2 * k, Purpose::Chain));
            let b = ChainClock::new(q, j, rng::stream(seed, 2 * k + 1, Purpose::Chain));
            meeting_time(a, b, horizon)
        })
        .collect();
    let curve = (1..=TAIL_POINTS)
        .map(|m| {
            let t = horizon * m as f64 / TAIL_POINTS as f64;
            let alive = meeting.iter().filter(|&&tau| tau > t).count();
            (t, alive as f64 / n_paths as f64)
        })
        .collect();
    Ok(CouplingTail { curve, n_paths })
}

fn meeting_time<R: Rng>(mut a: ChainClock<'_, R>, mut b: ChainClock<'_, R>, horizon: f64) -> f64 {
    loop {
        let t = a.next_jump().min(b.next_jump());
        if t > horizon {
            return f64::INFINITY;
        }
        if a.next_jump() <= t {
            a.jump();
        }
        if b.next_jump() <= t {
            b.jump();
        }
        if a.state() == b.state() {
            return t;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(rows: &[&[f64]]) -> Result<GeneratorMatrix> {
        GeneratorMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn validation_examples() {
        let g = q(&[&[-4.0, 4.0], &[1.0, -1.0]]).unwrap();
        assert_eq!(g.q0(), 4.0);
        assert!(matches!(q(&[&[-1.0, 1.0], &[0.0, 0.0]]), Err(Error::Reducible { .. })));
        assert!(matches!(
            q(&[&[-1.0, 2.0], &[1.0, -1.0]]),
            Err(Error::NonConservative { row: 0, .. })
        ));
        assert!(matches!(
            q(&[&[1.0, -1.0], &[1.0, -1.0]]),
            Err(Error::NegativeRate { row: 0, col: 1, .. })
        ));
        assert!(matches!(q(&[&[0.0]]), Err(Error::BadShape { .. })));
        assert!(matches!(
            q(&[&[f64::NAN, 0.0], &[1.0, -1.0]]),
            Err(Error::NonFiniteRate { .. })
        ));
    }

    #[test]
    fn reducible_via_backward_reachability() {
        // 0 reaches everything but nothing returns to 0
        let err = q(&[&[-2.0, 1.0, 1.0], &[0.0, -1.0, 1.0], &[0.0, 1.0, -1.0]]).unwrap_err();
        assert!(matches!(err, Error::Reducible { .. }));
    }

    #[test]
    fn stationary_examples() {
        let g = q(&[&[-4.0, 4.0], &[1.0, -1.0]]).unwrap();
        let mu = stationary_distribution(&g).unwrap();
        assert!((mu.get(0) - 0.2).abs() < 1e-14 && (mu.get(1) - 0.8).abs() < 1e-14);

        let g = q(&[&[-3.0, 0.0, 3.0], &[1.0, -3.0, 2.0], &[1.0, 2.0, -3.0]]).unwrap();
        let mu = stationary_distribution(&g).unwrap();
        for (m, e) in mu.as_slice().iter().zip([0.25, 0.30, 0.45]) {
            assert!((m - e).abs() < 1e-14);
        }

        let g = q(&[&[-1.0, 1.0], &[1.0, -1.0]]).unwrap();
        let mu = stationary_distribution(&g).unwrap();
        assert!((mu.get(0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn reversibility_examples() {
        // birth-death chain of the reversible example, a = 3, b = 1
        let (a, b) = (3.0, 1.0);
        let g = q(&[
            &[-b, b, 0.0],
            &[2.0 * a, -2.0 * (a + b), 2.0 * b],
            &[0.0, 3.0 * a, -3.0 * a],
        ])
        .unwrap();
        let mu = stationary_distribution(&g).unwrap();
        assert!(is_reversible(&g, &mu, 1e-10));

        // nu = 1: pi_1 q_13 = 3 * pi_1 but pi_3 q_31 = pi_3
        let g = q(&[&[-4.0, 1.0, 3.0], &[1.0, -3.0, 2.0], &[1.0, 2.0, -3.0]]).unwrap();
        let mu = stationary_distribution(&g).unwrap();
        assert!((mu.get(0) * 3.0 - mu.get(2)).abs() > 1e-3);
        assert!(!is_reversible(&g, &mu, 1e-10));

        let g = q(&[&[-0.3, 0.3], &[7.0, -7.0]]).unwrap();
        let mu = stationary_distribution(&g).unwrap();
        assert!(is_reversible(&g, &mu, 1e-10));
    }

    #[test]
    fn grid_sampling_is_right_continuous() {
        let path = ChainPath {
            initial: 0,
            jump_times: vec![0.15],
            states: vec![1],
            horizon: 1.0,
        };
        assert_eq!(chain_at_grid(&path, 0.1, 4).unwrap(), vec![0, 0, 1, 1, 1]);
        let still = ChainPath {
            initial: 1,
            jump_times: vec![],
            states: vec![],
            horizon: 1.0,
        };
        assert_eq!(chain_at_grid(&still, 0.25, 4).unwrap(), vec![1; 5]);
        assert!(matches!(
            chain_at_grid(&still, 0.25, 5),
            Err(Error::HorizonExceeded { .. })
        ));
        // a jump exactly on a gridpoint is already visible there
        let on_grid = ChainPath {
            initial: 0,
            jump_times: vec![0.5],
            states: vec![1],
            horizon: 1.0,
        };
        assert_eq!(chain_at_grid(&on_grid, 0.5, 2).unwrap(), vec![0, 1, 1]);
    }

    #[test]
    fn simulation_is_deterministic() {
        let g = q(&[&[-4.0, 4.0], &[1.0, -1.0]]).unwrap();
        let a = simulate_chain_seeded(&g, 0, 10.0, 99).unwrap();
        let b = simulate_chain_seeded(&g, 0, 10.0, 99).unwrap();
        assert_eq!(a, b);
        assert!(a.jump_times.windows(2).all(|w| w[0] < w[1]));
        assert!(a.jump_times.iter().all(|&t| t > 0.0 && t <= 10.0));
        let mut prev = a.initial;
        for &s in &a.states {
            assert_ne!(s, prev);
            prev = s;
        }
    }

    #[test]
    fn coupling_preconditions() {
        let g = q(&[&[-4.0, 4.0], &[1.0, -1.0]]).unwrap();
        assert!(coupling_tail(&g, 0, 0, 5.0, 10, 1).is_err());
        assert!(coupling_tail(&g, 0, 1, 5.0, 0, 1).is_err());
    }
}
