use std::path::Path;

use nalgebra::DMatrix;
use rsem::dirichlet::{self, DirichletProblem};
use rsem::em::{self, NoiseKind, RegimeModel, SimulationConfig};
use rsem::generator::{self, is_reversible};
use rsem::measure::{self, StudyConfig};
use rsem::partition::{self, CountableRegimeSpec};
use rsem::spectral::{self, StepsizeBound, DEFAULT_P_GRID};
use rsem::{Error, Tolerances};
use serde_json::Value;

use crate::config::{AnalysisSection, RunConfig, Setup};
use crate::report::{matrix, num, nums, opt, write_file, write_json, Obj};
use crate::CliError;

pub struct Context<'a> {
    pub config: &'a RunConfig,
    pub seed: u64,
    pub out: &'a Path,
    pub tol: Tolerances,
}

/// Analytic certificates plus the largest certified stepsize, if any.
pub struct Certification {
    pub report: Value,
    pub delta_max: Option<f64>,
}

fn kind_name(kind: NoiseKind) -> &'static str {
    match kind {
        NoiseKind::Additive => "additive",
        NoiseKind::Multiplicative => "multiplicative",
    }
}

fn bound_json(bound: &StepsizeBound) -> Value {
    Obj::new()
        .set("p", num(bound.p))
        .set("rate_constant", num(bound.rate_constant))
        .set("delta_max", num(bound.delta_max))
        .build()
}

fn usable(bound: Option<&StepsizeBound>) -> Option<f64> {
    bound.map(|b| b.delta_max).filter(|d| *d > 0.0)
}

pub fn certification(setup: &Setup, analysis: &AnalysisSection, tol: &Tolerances) -> Result<Certification, CliError> {
    let q = &setup.q;
    let model = &setup.model;
    let bounds = model.bounds();
    let mu = generator::stationary_distribution(q)?;
    let reversible = is_reversible(q, &mu, tol.detailed_balance);
    let averaging = spectral::averaging_condition(&mu, bounds)?;
    let grid: Vec<f64> = analysis.p_grid.clone().unwrap_or_else(|| DEFAULT_P_GRID.to_vec());
    if let Some(k) = grid.iter().position(|p| !(*p > 0.0 && p.is_finite())) {
        return Err(CliError::Config(format!("analysis.p_grid[{k}]: moment order must be positive and finite")));
    }

    let mut doc = Obj::new()
        .set("model", setup.name.clone())
        .set("kind", kind_name(model.noise_kind()))
        .set("dimension", model.dim())
        .set("regimes", model.regimes())
        .set("generator", matrix(&q.to_rows()))
        .set("stationary_distribution", nums(mu.as_slice()))
        .set("chain_reversible", reversible)
        .set(
            "bounds",
            Obj::new()
                .set("beta", nums(&bounds.beta))
                .set("c0", num(bounds.c0))
                .set("lipschitz", num(bounds.lipschitz))
                .set("growth_offset", num(bounds.growth_offset))
                .build(),
        )
        .set("averaging_sum", num(averaging.sum))
        .set("averaging_holds", averaging.holds)
        .set("p0", num(spectral::p0_threshold(q, bounds)))
        .set("star6", spectral::condition_star6(q, bounds));

    let mut eta_grid = Vec::new();
    for &p in &grid {
        let cert = spectral::spectral_certificate(q, bounds, p)?;
        eta_grid.push(
            Obj::new()
                .set("p", num(p))
                .set("eta_p", num(cert.eta_p))
                .set("positive", cert.eta_positive())
                .build(),
        );
    }
    doc.put("eta_grid", Value::Array(eta_grid));

    let mut best: Option<f64> = None;
    let mut offer = |d: Option<f64>| {
        if let Some(d) = d {
            best = Some(best.map_or(d, |b: f64| b.max(d)));
        }
    };

    match model.noise_kind() {
        NoiseKind::Additive => {
            let candidates = spectral::certify_additive(q, bounds, &grid)?;
            let list: Vec<Value> = candidates
                .iter()
                .map(|c| {
                    Obj::new()
                        .set("p", num(c.cert.p))
                        .set("eta_p", num(c.cert.eta_p))
                        .set("xi", nums(&c.cert.xi))
                        .set("alpha", num(c.alpha))
                        .set("delta_max", opt(usable(c.bound.as_ref())))
                        .build()
                })
                .collect();
            let chosen = spectral::best_additive(&candidates);
            offer(chosen.and_then(|c| usable(c.bound.as_ref())));
            doc.put(
                "additive",
                Obj::new()
                    .set("candidates", Value::Array(list))
                    .set("best", chosen.and_then(|c| c.bound.as_ref()).map_or(Value::Null, bound_json))
                    .build(),
            );
        }
        NoiseKind::Multiplicative => {
            let m = spectral::certify_multiplicative(q, bounds)?;
            offer(usable(m.bound.as_ref()));
            doc.put(
                "multiplicative",
                Obj::new()
                    .set("p", num(m.cert.p))
                    .set("eta_p", num(m.cert.eta_p))
                    .set("xi", nums(&m.cert.xi))
                    .set("xi_hat", num(m.cert.xi_hat))
                    .set("xi_bar", num(m.cert.xi_bar))
                    .set("star6", m.star6)
                    .set("beta_mult", opt(m.beta))
                    .set("delta_max", opt(usable(m.bound.as_ref())))
                    .build(),
            );
        }
    }

    if analysis.reversible != Some(false) {
        let block = if reversible {
            let prob = DirichletProblem::new(q.clone(), bounds.beta.clone())?;
            let eig = dirichlet::principal_eigenvalue(&prob)?;
            let mut block = Obj::new()
                .set("applicable", true)
                .set("lambda0", num(eig.lambda0))
                .set("xi", nums(&eig.xi))
                .set("spectral_gap", num(eig.spectral_gap))
                .set("nondegenerate", eig.nondegenerate)
                .set("residual", num(eig.residual));
            match dirichlet::kappa_and_delta(&prob, &eig, bounds) {
                Ok(bound) => {
                    offer(usable(Some(&bound)));
                    block.put("kappa", num(bound.rate_constant));
                    block.put("delta_max", num(bound.delta_max));
                }
                Err(e) => {
                    block.put("kappa", Value::Null);
                    block.put("delta_max", Value::Null);
                    block.put("reason", e.to_string());
                }
            }
            block.build()
        } else {
            Obj::new()
                .set("applicable", false)
                .set("reason", "chain is not reversible")
                .build()
        };
        doc.put("reversible", block);
    }

    if let Some(cuts) = &analysis.partition_cuts {
        doc.put("partition", partition_block(setup, cuts)?);
    }

    doc.put("certified", best.is_some());
    doc.put("delta_max", opt(best));
    Ok(Certification {
        report: doc.build(),
        delta_max: best,
    })
}

fn partition_block(setup: &Setup, cuts: &[f64]) -> Result<Value, CliError> {
    let field = |e: Error| CliError::Config(format!("analysis.partition_cuts: {e}"));
    let spec = CountableRegimeSpec::finite(&setup.q, setup.model.bounds().beta.clone())?;
    let part = partition::build_partition(&spec, cuts).map_err(field)?;
    let classes: Vec<Value> = (0..part.class_count()).map(|c| Value::from(part.members(c))).collect();
    let (qf, beta_f) = partition::lumped_generator(&spec, &part)?;
    let block = Obj::new().set("classes", Value::Array(classes));
    Ok(match partition::partition_certificate(&qf, &beta_f) {
        Ok(cert) => block
            .set("is_m_matrix", true)
            .set("lumped_generator", matrix(&cert.qf))
            .set("beta_f", nums(&cert.beta_f))
            .set("a", matrix(&cert.a))
            .set("eta", nums(&cert.eta))
            .set("xi", nums(&cert.xi))
            .set("residual", num(cert.residual()))
            .build(),
        Err(Error::NotMMatrix) => {
            let a: DMatrix<f64> = partition::lyapunov_matrix(&qf, &beta_f)?;
            let rows: Vec<Vec<f64>> = a.row_iter().map(|r| r.iter().copied().collect()).collect();
            let lumped: Vec<Vec<f64>> = qf.row_iter().map(|r| r.iter().copied().collect()).collect();
            block
                .set("is_m_matrix", false)
                .set("lumped_generator", matrix(&lumped))
                .set("beta_f", nums(&beta_f))
                .set("a", matrix(&rows))
                .build()
        }
        Err(e) => return Err(e.into()),
    })
}

pub fn certify(ctx: &Context) -> Result<i32, CliError> {
    let setup = ctx.config.build(&ctx.tol)?;
    let analysis = ctx.config.analysis();
    let cert = certification(&setup, &analysis, &ctx.tol)?;
    let samples = analysis.bound_samples.unwrap_or(1000);
    let radius = analysis.bound_radius.unwrap_or(10.0);
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(CliError::Config("analysis.bound_radius: must be positive".into()));
    }
    let check = em::verify_bounds(&setup.model, samples, radius, ctx.seed);
    let Value::Object(mut doc) = cert.report else { unreachable!() };
    doc.insert(
        "bound_check".into(),
        Obj::new()
            .set("samples", check.samples)
            .set("radius", num(check.radius))
            .set("max_violation", num(check.max_violation()))
            .set("holds", check.holds())
            .build(),
    );
    doc.insert("seed".into(), ctx.seed.into());
    write_json(&ctx.out.join("certificate.json"), &Value::Object(doc))?;
    match cert.delta_max {
        Some(d) => {
            println!("certified: delta_max = {d:.16e}");
            Ok(0)
        }
        None => {
            println!("not certified: no certificate yields a positive stepsize bound");
            Ok(2)
        }
    }
}

fn warn_above(delta: f64, bound: Option<f64>, what: &str) {
    match bound {
        Some(d) if delta >= d => {
            eprintln!("warning: {what} {delta} is not below the certified bound {d:.6e}; proceeding")
        }
        None => eprintln!("warning: no certified stepsize bound for this model; proceeding"),
        _ => {}
    }
}

fn initial_point(x0: &Option<Vec<f64>>, dim: usize, field: &str) -> Result<Vec<f64>, CliError> {
    match x0 {
        None => Ok(vec![1.0; dim]),
        Some(v) if v.len() == dim => Ok(v.clone()),
        Some(v) => Err(CliError::Config(format!("{field}: expected {dim} entries, found {}", v.len()))),
    }
}

fn divergence(ctx: &Context, step: u64, delta: f64) -> Result<i32, CliError> {
    let doc = Obj::new()
        .set("status", "divergence")
        .set("step", step)
        .set("time", num(step as f64 * delta))
        .set("delta", num(delta))
        .set("seed", ctx.seed)
        .build();
    write_json(&ctx.out.join("divergence.json"), &doc)?;
    eprintln!("divergence: non-finite state at step {step} (delta = {delta})");
    Ok(3)
}

pub fn simulate(ctx: &Context) -> Result<i32, CliError> {
    let setup = ctx.config.build(&ctx.tol)?;
    let sim = ctx.config.simulation_section()?;
    let x0 = initial_point(&sim.x0, setup.model.dim(), "simulation.x0")?;
    let cfg = SimulationConfig::new(sim.delta, sim.steps, x0, sim.i0.unwrap_or(0), ctx.seed).with_stride(sim.stride.unwrap_or(1));
    cfg.validate(&setup.model, &setup.q)
        .map_err(|e| CliError::Config(format!("simulation: {e}")))?;
    let bound = certification(&setup, &ctx.config.analysis(), &ctx.tol)?.delta_max;
    warn_above(sim.delta, bound, "delta");

    let csv = ctx.out.join("trajectory.csv");
    let traj = match em::simulate(&setup.model, &setup.q, &cfg) {
        Ok(t) => t,
        Err(Error::NonFiniteState { step }) => {
            let _ = std::fs::remove_file(&csv);
            return divergence(ctx, step, sim.delta);
        }
        Err(e) => return Err(e.into()),
    };
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).map_err(|e| CliError::Io(e.to_string()))?;
    write_file(&csv, &buf)?;
    let (state, point) = traj.last().expect("trajectory has the initial point");
    let doc = Obj::new()
        .set("model", setup.name.clone())
        .set("seed", ctx.seed)
        .set("delta", num(sim.delta))
        .set("steps", sim.steps)
        .set("stride", cfg.stride)
        .set("rows", traj.len())
        .set("certified_delta_max", opt(bound))
        .set("within_certified_bound", bound.is_some_and(|d| sim.delta < d))
        .set("final_state", state)
        .set("final_point", nums(point))
        .build();
    write_json(&ctx.out.join("simulation.json"), &doc)?;
    println!("wrote {} rows to {}", traj.len(), csv.display());
    Ok(0)
}

pub fn study(ctx: &Context) -> Result<i32, CliError> {
    let setup = ctx.config.build(&ctx.tol)?;
    let s = ctx.config.study_section()?;
    let p = s.p.unwrap_or(1.0);
    if !(p > 0.0 && p <= 1.0) {
        return Err(CliError::Config(format!("study.p: order must lie in (0, 1], got {p}")));
    }
    let cfg = StudyConfig {
        deltas: s.deltas.clone(),
        reference_delta: s.reference_delta,
        p,
        n_samples: s.n_samples.unwrap_or(1000),
        spacing: s.spacing.unwrap_or(20.0),
        burn_in_fraction: s.burn_in_fraction.unwrap_or(0.25),
        bootstrap: s.bootstrap.unwrap_or(50),
        floor_replicates: s.floor_replicates.unwrap_or(9),
        level: s.level.unwrap_or(0.95),
        x0: initial_point(&s.x0, setup.model.dim(), "study.x0")?,
        i0: s.i0.unwrap_or(0),
        seed: ctx.seed,
    };
    if cfg.i0 >= setup.q.len() {
        return Err(CliError::Config(format!("study.i0: regime {} out of range", cfg.i0)));
    }
    let bound = certification(&setup, &ctx.config.analysis(), &ctx.tol)?.delta_max;
    warn_above(cfg.deltas[0], bound, "largest study stepsize");

    let result = match measure::convergence_study(&setup.model, &setup.q, &cfg) {
        Ok(r) => r,
        Err(Error::NonFiniteState { step }) => return divergence(ctx, step, cfg.deltas[0]),
        Err(Error::InvalidArgument(msg)) => return Err(CliError::Config(format!("study: {msg}"))),
        Err(e) => return Err(e.into()),
    };
    let mut csv = String::from("delta,W_hat,n_samples,seed\n");
    for row in &result.rows {
        csv.push_str(&format!("{:.16e},{:.16e},{},{}\n", row.delta, row.w_hat, row.n_samples, row.seed));
    }
    write_file(&ctx.out.join("study.csv"), csv.as_bytes())?;

    let order = p / 2.0;
    let (lo, hi) = (order - 0.2, order + 0.2);
    let rows: Vec<Value> = result
        .rows
        .iter()
        .map(|r| {
            Obj::new()
                .set("delta", num(r.delta))
                .set("w_hat", num(r.w_hat))
                .set("std_error", num(r.std_error))
                .set("n_samples", r.n_samples)
                .set("trajectory", r.trajectory)
                .build()
        })
        .collect();
    let rate_consistent = result.slope_ci.intersects(lo, hi);
    let doc = Obj::new()
        .set("model", setup.name.clone())
        .set("seed", ctx.seed)
        .set("p", num(p))
        .set("reference_delta", num(result.reference_delta))
        .set("reference", "reference, not ground truth")
        .set("rows", Value::Array(rows))
        .set("slope", num(result.slope))
        .set("slope_ci", nums(&[result.slope_ci.lower, result.slope_ci.upper]))
        .set("level", num(cfg.level))
        .set("expected_order", num(order))
        .set("order_window", nums(&[lo, hi]))
        .set("rate_consistent", rate_consistent)
        .set("noise_floor", num(result.noise_floor))
        .set("noise_mean", num(result.noise_mean))
        .set("floor_replicates", cfg.floor_replicates)
        .set("below_noise_floor", result.below_floor)
        .set("monotone", result.monotone)
        .set("certified_delta_max", opt(bound))
        .build();
    write_json(&ctx.out.join("study.json"), &doc)?;
    println!(
        "slope {:.4} (CI [{:.4}, {:.4}]), noise floor {:.4e}, monotone {}",
        result.slope, result.slope_ci.lower, result.slope_ci.upper, result.noise_floor, result.monotone
    );
    Ok(0)
}
