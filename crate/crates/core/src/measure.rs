//! Empirical measures on `R^n x S`, the transport cost of the hybrid metric
//! `d((x,i),(y,j)) = |x - y| + 1{i != j}` raised to the power `p`, and the
//! Monte Carlo experiments built on it.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{self, NoiseKind, RegimeModel, SimulationConfig};
use crate::error::{Error, Result};
use crate::generator::GeneratorMatrix;
use crate::ot;
use crate::rng::{self, Purpose};
use crate::stats::{self, Interval};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub dim: usize,
    /// Row-major, `dim` coordinates per atom.
    pub points: Vec<f64>,
    pub states: Vec<usize>,
    pub weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn uniform(dim: usize, points: Vec<f64>, states: Vec<usize>) -> Result<Self> {
        let n = states.len();
        let weights = vec![1.0 / n.max(1) as f64; n];
        Self::weighted(dim, points, states, weights)
    }

    pub fn weighted(dim: usize, points: Vec<f64>, states: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        let n = states.len();
        if n == 0 {
            return Err(Error::EmptySupport);
        }
        if dim == 0 || points.len() != n * dim {
            return Err(Error::LengthMismatch {
                expected: n * dim,
                found: points.len(),
            });
        }
        if weights.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: weights.len(),
            });
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "weights must be nonnegative and sum to 1, got sum {total}"
            )));
        }
        Ok(Self {
            dim,
            points,
            states,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    fn is_uniform(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|v| (v - w).abs() <= 1e-15)
    }

    /// Mass of every regime `0..regimes`.
    pub fn regime_marginal(&self, regimes: usize) -> Vec<f64> {
        let mut out = vec![0.0; regimes];
        for (s, w) in self.states.iter().zip(&self.weights) {
            if *s < regimes {
                out[*s] += w;
            }
        }
        out
    }

    /// Uniform measure on the atoms at `indices` (repetitions allowed).
    pub fn resample(&self, indices: &[usize]) -> Result<Self> {
        let points = indices.iter().flat_map(|&k| self.point(k).iter().copied()).collect();
        let states = indices.iter().map(|&k| self.states[k]).collect();
        Self::uniform(self.dim, points, states)
    }
}

fn check_order(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument(format!("order p must lie in (0, 1], got {p}")));
    }
    Ok(())
}

/// `(|x - y| + 1{i != j})^p`.
pub fn hybrid_distance(x: &[f64], i: usize, y: &[f64], j: usize, p: f64) -> f64 {
    let euclid = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let d = euclid + if i == j { 0.0 } else { 1.0 };
    if p == 1.0 {
        d
    } else {
        d.powf(p)
    }
}

fn cost_matrix(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> Vec<f64> {
    let mut cost = Vec::with_capacity(mu.len() * nu.len());
    for a in 0..mu.len() {
        for b in 0..nu.len() {
            cost.push(hybrid_distance(mu.point(a), mu.states[a], nu.point(b), nu.states[b], p));
        }
    }
    cost
}

/// Optimal transport cost of `d^p` between two finite measures, without an
/// outer `1/p` root. Equal-size uniform measures are solved as an
/// assignment problem, anything else as a transportation problem.
pub fn wasserstein_p(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> Result<f64> {
    check_order(p)?;
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::EmptySupport);
    }
    if mu.dim != nu.dim {
        return Err(Error::LengthMismatch {
            expected: mu.dim,
            found: nu.dim,
        });
    }
    let cost = cost_matrix(mu, nu, p);
    if mu.len() == nu.len() && mu.is_uniform() && nu.is_uniform() {
        let (total, _) = ot::assignment(&cost, mu.len())?;
        Ok(total / mu.len() as f64)
    } else {
        ot::transport(&mu.weights, &nu.weights, &cost).map(|(total, _)| total)
    }
}

/// Where to take samples along a single trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub burn_in: u64,
    pub thin: u64,
    pub n_samples: usize,
}

impl SamplingPlan {
    /// Burn-in of one fifth of the total and thinning of 10 steps.
    pub fn with_defaults(n_samples: usize) -> Self {
        let thin = 10;
        let sampling = thin * n_samples as u64;
        Self {
            burn_in: sampling / 4,
            thin,
            n_samples,
        }
    }

    pub fn total_steps(&self) -> u64 {
        self.burn_in + self.thin * self.n_samples.saturating_sub(1) as u64
    }
}

/// Time average along one trajectory: the gridpoints `burn_in + r * thin`,
/// `r = 0..n_samples`. `cfg.steps` and `cfg.stride` are ignored.
pub fn estimate_invariant<M: RegimeModel + ?Sized>(
    model: &M,
    q: &GeneratorMatrix,
    cfg: &SimulationConfig,
    plan: &SamplingPlan,
) -> Result<EmpiricalMeasure> {
    if plan.n_samples == 0 || plan.thin == 0 {
        return Err(Error::InvalidArgument("n_samples and thin must be positive".into()));
    }
    let run = SimulationConfig {
        steps: plan.total_steps().max(1),
        stride: 1,
        ..cfg.clone()
    };
    let mut points = Vec::with_capacity(plan.n_samples * model.dim());
    let mut states = Vec::with_capacity(plan.n_samples);
    let mut legs = vec![cfg.x0.clone()];
    em::run_legs(model, q, &run, &mut legs, |k, i, legs| {
        if k >= plan.burn_in && (k - plan.burn_in).is_multiple_of(plan.thin) && states.len() < plan.n_samples {
            points.extend_from_slice(&legs[0]);
            states.push(i);
        }
    })?;
    EmpiricalMeasure::uniform(model.dim(), points, states)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingRoute {
    /// Both legs stepped through the scheme.
    Step,
    /// Exact constant-regime blocks for linear drift and additive noise.
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionOptions {
    pub points: usize,
    pub bootstrap: usize,
    pub level: f64,
    pub floor: f64,
    pub route: Option<CouplingRoute>,
}

impl Default for ContractionOptions {
    fn default() -> Self {
        Self {
            points: 100,
            bootstrap: 200,
            level: 0.95,
            floor: 1e-12,
            route: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionResult {
    pub route: CouplingRoute,
    pub times: Vec<f64>,
    /// `mean |Y^x - Y^y|^p` over the paths.
    pub mean: Vec<f64>,
    /// Points of the curve used in the fit.
    pub window: usize,
    pub slope: f64,
    pub ci: Interval,
}

fn fit_curve(times: &[f64], mean: &[f64], floor: f64) -> Result<(f64, usize)> {
    let (t, l): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(mean)
        .filter(|(_, m)| **m > floor)
        .map(|(t, m)| (*t, m.ln()))
        .unzip();
    let fit = stats::linear_fit(&t, &l)?;
    Ok((fit.slope, t.len()))
}

/// `n_paths` synchronous couplings from `cfg.x0` and `y0` up to
/// `cfg.steps`; the decay rate is the least-squares slope of
/// `log mean |dY|^p` against time over the points above `floor`, with a
/// percentile bootstrap interval over paths.
pub fn contraction_experiment<M: RegimeModel + ?Sized>(
    model: &M,
    q: &GeneratorMatrix,
    cfg: &SimulationConfig,
    y0: &[f64],
    p: f64,
    n_paths: usize,
    opts: &ContractionOptions,
) -> Result<ContractionResult> {
    cfg.validate(model, q)?;
    if y0.len() != model.dim() {
        return Err(Error::LengthMismatch {
            expected: model.dim(),
            found: y0.len(),
        });
    }
    if y0 == cfg.x0.as_slice() {
        return Err(Error::DegenerateWindow("identical initial points give a zero difference".into()));
    }
    if !(p > 0.0) || n_paths == 0 || opts.points == 0 {
        return Err(Error::InvalidArgument("need p > 0, n_paths > 0 and points > 0".into()));
    }
    let linear = (0..model.regimes()).all(|i| model.drift_matrix(i).is_some());
    let route = opts.route.unwrap_or(if linear && model.noise_kind() == NoiseKind::Additive {
        CouplingRoute::Block
    } else {
        CouplingRoute::Step
    });
    let records: Vec<u64> = (0..=opts.points)
        .map(|r| (cfg.steps as u128 * r as u128 / opts.points as u128) as u64)
        .collect();
    let diff0: Vec<f64> = cfg.x0.iter().zip(y0).map(|(a, b)| a - b).collect();
    let per_path: Vec<Vec<f64>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|path| {
            let run = cfg.clone().with_trajectory(cfg.trajectory.wrapping_add(path));
            let diffs: Vec<Vec<f64>> = match route {
                CouplingRoute::Block => em::coupled_difference_blocks(model, q, &run, &diff0, &records)?,
                CouplingRoute::Step => {
                    let mut out = Vec::with_capacity(records.len());
                    let mut next = 0;
                    let mut legs = vec![cfg.x0.clone(), y0.to_vec()];
                    let run = SimulationConfig { stride: 1, ..run };
                    em::run_legs(model, q, &run, &mut legs, |k, _, legs| {
                        while next < records.len() && records[next] == k {
                            out.push(legs[0].iter().zip(&legs[1]).map(|(a, b)| a - b).collect());
                            next += 1;
                        }
                    })?;
                    out
                }
            };
            Ok(diffs
                .iter()
                .map(|d| d.iter().map(|v| v * v).sum::<f64>().sqrt().powf(p))
                .collect())
        })
        .collect::<Result<_>>()?;
    let times: Vec<f64> = records.iter().map(|&k| k as f64 * cfg.delta).collect();
    let average = |rows: &mut dyn Iterator<Item = &Vec<f64>>| -> Vec<f64> {
        let mut acc = vec![0.0; records.len()];
        let mut count = 0usize;
        for row in rows {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
            count += 1;
        }
        acc.iter().map(|a| a / count as f64).collect()
    };
    let mean = average(&mut per_path.iter());
    let (slope, window) = fit_curve(&times, &mean, opts.floor)?;
    let slopes: Vec<f64> = (0..opts.bootstrap as u64)
        .into_par_iter()
        .filter_map(|b| {
            let mut rng = rng::stream(cfg.seed, b, Purpose::Auxiliary);
            let mut picks = (0..n_paths).map(|_| &per_path[rng.random_range(0..n_paths)]);
            let m = average(&mut picks);
            fit_curve(&times, &m, opts.floor).ok().map(|(s, _)| s)
        })
        .collect();
    let ci = if slopes.is_empty() {
        Interval {
            lower: slope,
            upper: slope,
        }
    } else {
        Interval::percentile(&slopes, opts.level)
    };
    Ok(ContractionResult {
        route,
        times,
        mean,
        window,
        slope,
        ci,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    /// Stepsizes under study, in decreasing order.
    pub deltas: Vec<f64>,
    pub reference_delta: f64,
    pub p: f64,
    /// Atoms per empirical measure, capped at [`MAX_SUBSAMPLE`].
    pub n_samples: usize,
    /// Time between consecutive samples along the trajectory.
    pub spacing: f64,
    /// Burn-in as a fraction of the sampling time.
    pub burn_in_fraction: f64,
    pub bootstrap: usize,
    /// Independent runs at the reference stepsize used for the noise floor.
    pub floor_replicates: usize,
    pub level: f64,
    pub x0: Vec<f64>,
    pub i0: usize,
    pub seed: u64,
}

pub const MAX_SUBSAMPLE: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub delta: f64,
    pub w_hat: f64,
    /// Bootstrap standard error of `w_hat`.
    pub std_error: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Stream index of the run.
    pub trajectory: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub rows: Vec<StudyRow>,
    pub reference_delta: f64,
    pub p: f64,
    /// Least-squares slope of `log W` against `log delta`.
    pub slope: f64,
    pub slope_ci: Interval,
    /// Largest distance between an independent run at the reference
    /// stepsize and the reference itself. A pure-noise distance exceeds it
    /// with probability `1 / (floor_replicates + 1)`.
    pub noise_floor: f64,
    /// Mean of the same-stepsize distances.
    pub noise_mean: f64,
    /// `W` at a smaller stepsize never exceeds the previous one by more
    /// than the bootstrap standard error of the difference.
    pub monotone: bool,
    pub below_floor: bool,
}

fn bootstrap_indices(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Self-convergence of the numerical invariant measures against a fine
/// reference stepsize. Every run covers the same physical time, so the
/// budgets match across stepsizes.
pub fn convergence_study<M: RegimeModel + ?Sized>(model: &M, q: &GeneratorMatrix, study: &StudyConfig) -> Result<StudyResult> {
    if study.deltas.is_empty() {
        return Err(Error::InvalidArgument("stepsize list is empty".into()));
    }
    let smallest = study.deltas.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(study.reference_delta < smallest) {
        return Err(Error::InvalidArgument(format!(
            "reference stepsize {} must be below every studied stepsize (smallest {smallest})",
            study.reference_delta
        )));
    }
    if study.deltas.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidArgument("stepsizes must be listed in decreasing order".into()));
    }
    if !(study.spacing > 0.0) || !(study.burn_in_fraction >= 0.0) || study.n_samples < 2 {
        return Err(Error::InvalidArgument("need spacing > 0, burn-in >= 0 and at least 2 samples".into()));
    }
    check_order(study.p)?;
    let n = study.n_samples.min(MAX_SUBSAMPLE);
    let sample = |delta: f64, trajectory: u64| -> Result<EmpiricalMeasure> {
        let thin = (study.spacing / delta).round().max(1.0) as u64;
        let burn_in = (study.burn_in_fraction * (n as f64) * thin as f64).round() as u64;
        let cfg = SimulationConfig::new(delta, 1, study.x0.clone(), study.i0, study.seed).with_trajectory(trajectory);
        estimate_invariant(model, q, &cfg, &SamplingPlan {
            burn_in,
            thin,
            n_samples: n,
        })
    };
    let k = study.deltas.len();
    let reference_id = k as u64;
    let mut runs: Vec<(f64, u64)> = study.deltas.iter().enumerate().map(|(r, d)| (*d, r as u64)).collect();
    runs.push((study.reference_delta, reference_id));
    for r in 0..study.floor_replicates {
        runs.push((study.reference_delta, reference_id + 1 + r as u64));
    }
    let measures: Vec<EmpiricalMeasure> = runs.par_iter().map(|&(d, id)| sample(d, id)).collect::<Result<_>>()?;
    let reference = &measures[k];
    let replicas = &measures[k + 1..];

    let point = |mu: &EmpiricalMeasure| wasserstein_p(mu, reference, study.p);
    let w_hat: Vec<f64> = measures[..k].par_iter().map(point).collect::<Result<_>>()?;
    let floor: Vec<f64> = replicas.par_iter().map(point).collect::<Result<_>>()?;
    let noise_floor = floor.iter().cloned().fold(0.0, f64::max);
    let noise_mean = if floor.is_empty() { 0.0 } else { stats::mean(&floor) };

    // Bootstrap replicate b resamples every measure with its own stream.
    let replicates: Vec<Vec<f64>> = (0..study.bootstrap as u64)
        .into_par_iter()
        .map(|b| {
            let base = 1_000_000 + b * (k as u64 + 1);
            let mut rng = rng::stream(study.seed, base + k as u64, Purpose::Auxiliary);
            let reference = reference.resample(&bootstrap_indices(&mut rng, n))?;
            (0..k)
                .map(|r| {
                    let mut rng = rng::stream(study.seed, base + r as u64, Purpose::Auxiliary);
                    let mu = measures[r].resample(&bootstrap_indices(&mut rng, n))?;
                    wasserstein_p(&mu, &reference, study.p)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let column = |r: usize| -> Vec<f64> { replicates.iter().map(|rep| rep[r]).collect() };
    let std_error: Vec<f64> = (0..k).map(|r| stats::std_dev(&column(r))).collect();
    let monotone = (1..k).all(|r| {
        let diffs: Vec<f64> = replicates.iter().map(|rep| rep[r] - rep[r - 1]).collect();
        w_hat[r] - w_hat[r - 1] <= stats::std_dev(&diffs)
    });

    let log_d: Vec<f64> = study.deltas.iter().map(|d| d.ln()).collect();
    let slope_of = |w: &[f64]| -> Result<f64> {
        let log_w: Vec<f64> = w.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
        stats::linear_fit(&log_d, &log_w).map(|f| f.slope)
    };
    let slope = slope_of(&w_hat)?;
    let boot_slopes: Vec<f64> = replicates.iter().filter_map(|rep| slope_of(rep).ok()).collect();
    let slope_ci = if boot_slopes.is_empty() {
        Interval {
            lower: slope,
            upper: slope,
        }
    } else {
        Interval::percentile(&boot_slopes, study.level)
    };
    let below_floor = !floor.is_empty() && w_hat.iter().all(|w| *w <= noise_floor);
    let rows = (0..k)
        .map(|r| StudyRow {
            delta: study.deltas[r],
            w_hat: w_hat[r],
            std_error: std_error[r],
            n_samples: n,
            seed: study.seed,
            trajectory: r as u64,
        })
        .collect();
    Ok(StudyResult {
        rows,
        reference_delta: study.reference_delta,
        p: study.p,
        slope,
        slope_ci,
        noise_floor,
        noise_mean,
        monotone,
        below_floor,
    })
}
