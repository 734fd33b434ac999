//! Run configuration: one TOML document drives every command.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rsem::em::{self, Builtin, LinearModel, LinearRegime, NoiseKind, RegimeModel};
use rsem::{GeneratorMatrix, RegimeBounds, Tolerances};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
}

/// Either a catalogued model (`builtin` plus its parameters), scalar
/// coefficients (`kind`, `alpha`, `sigma`) or general linear regimes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<NoiseKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regimes: Option<Vec<RegimeSection>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsSection>,
}

/// `dX = (drift X + offset) dt + (diffusion + sum_k multipliers[k] X e_k^T) dW`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSection {
    pub drift: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<Vec<f64>>,
    pub diffusion: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub multipliers: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub beta: Vec<f64>,
    pub c0: f64,
    pub lipschitz: f64,
    #[serde(default)]
    pub growth_offset: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_grid: Option<Vec<f64>>,
    /// Use the builtin's alternate bound vector instead of the literal one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternate_bounds: Option<bool>,
    /// Set to false to skip the reversible-chain certificate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reversible: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition_cuts: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub delta: f64,
    pub steps: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i0: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub deltas: Vec<f64>,
    pub reference_delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor_replicates: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i0: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn model_section(&self) -> Result<&ModelSection, CliError> {
        self.model.as_ref().ok_or_else(|| invalid("model", "section missing"))
    }

    fn generator_section(&self) -> Result<&GeneratorSection, CliError> {
        self.generator.as_ref().ok_or_else(|| invalid("generator", "section missing"))
    }

    pub fn simulation_section(&self) -> Result<&SimulationSection, CliError> {
        let sim = self.simulation.as_ref().ok_or_else(|| invalid("simulation", "section missing"))?;
        check_delta("simulation.delta", sim.delta)?;
        if sim.steps == 0 {
            return Err(invalid("simulation.steps", "must be at least 1"));
        }
        if sim.stride == Some(0) {
            return Err(invalid("simulation.stride", "must be at least 1"));
        }
        Ok(sim)
    }

    pub fn study_section(&self) -> Result<&StudySection, CliError> {
        let study = self.study.as_ref().ok_or_else(|| invalid("study", "section missing"))?;
        if study.deltas.is_empty() {
            return Err(invalid("study.deltas", "list is empty"));
        }
        for (k, d) in study.deltas.iter().enumerate() {
            check_delta(&format!("study.deltas[{k}]"), *d)?;
        }
        check_delta("study.reference_delta", study.reference_delta)?;
        if study.deltas.iter().any(|d| study.reference_delta >= *d) {
            return Err(invalid("study.reference_delta", "must be smaller than every studied stepsize"));
        }
        if study.deltas.windows(2).any(|w| w[1] > w[0]) {
            return Err(invalid("study.deltas", "must be listed in decreasing order"));
        }
        Ok(study)
    }

    pub fn analysis(&self) -> AnalysisSection {
        self.analysis.clone().unwrap_or_default()
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output
            .as_ref()
            .and_then(|o| o.dir.clone())
            .unwrap_or_else(|| PathBuf::from("rsem-out"))
    }

    /// Model, generator and the bounds used by the certificates.
    pub fn build(&self, tol: &Tolerances) -> Result<Setup, CliError> {
        let model = self.model_section()?;
        let generator = self.generator_section()?;
        let analysis = self.analysis();
        let builtin = model.builtin.as_deref().map(|name| builtin(name, model)).transpose()?;

        let mut linear = match &builtin {
            Some(b) => b.model.clone(),
            None => explicit_model(model)?,
        };
        let mut name = builtin.as_ref().map_or("custom", |b| b.name).to_string();
        if analysis.alternate_bounds == Some(true) {
            let alt = builtin
                .as_ref()
                .and_then(|b| b.alt_bounds.clone())
                .ok_or_else(|| invalid("analysis.alternate_bounds", "model has no alternate bounds"))?;
            linear = LinearModel::with_bounds(regimes_of(&linear), alt).map_err(|e| invalid("analysis.alternate_bounds", e))?;
            name.push_str(" (alternate bounds)");
        }
        if let Some(b) = &model.bounds {
            let bounds = RegimeBounds::new(b.beta.clone(), b.c0, b.lipschitz, b.growth_offset)
                .map_err(|e| invalid("model.bounds", e))?;
            linear = LinearModel::with_bounds(regimes_of(&linear), bounds).map_err(|e| invalid("model.bounds", e))?;
        }

        let rows = match (generator.builtin, &generator.rates) {
            (Some(true), None) => builtin
                .as_ref()
                .map(|b| b.generator.to_rows())
                .ok_or_else(|| invalid("generator.builtin", "requires model.builtin"))?,
            (None | Some(false), Some(rates)) => rates.clone(),
            (Some(true), Some(_)) => return Err(invalid("generator", "give either rates or builtin = true, not both")),
            _ => return Err(invalid("generator", "needs rates or builtin = true")),
        };
        let q = GeneratorMatrix::from_rows_with(&rows, tol).map_err(|e| invalid("generator.rates", e))?;
        if q.len() != linear.regimes() {
            return Err(invalid(
                "generator.rates",
                format!("{} states but the model has {} regimes", q.len(), linear.regimes()),
            ));
        }
        Ok(Setup { name, model: linear, q })
    }
}

fn check_delta(field: &str, delta: f64) -> Result<(), CliError> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("stepsize must lie in (0, 1), got {delta}")))
    }
}

fn regimes_of(model: &LinearModel) -> Vec<LinearRegime> {
    (0..model.regimes()).map(|i| model.regime(i).clone()).collect()
}

pub struct Setup {
    pub name: String,
    pub model: LinearModel,
    pub q: GeneratorMatrix,
}

fn require_len(field: &str, v: &Option<Vec<f64>>, n: usize) -> Result<Option<[f64; 3]>, CliError> {
    match v {
        None => Ok(None),
        Some(v) if v.len() == n => Ok(Some([v[0], v[1], v[2]])),
        Some(v) => Err(invalid(field, format!("expected {n} entries, found {}", v.len()))),
    }
}

fn builtin(name: &str, m: &ModelSection) -> Result<Builtin, CliError> {
    let field = "model.builtin";
    let built = match name {
        "example_2_5" => em::example_2_5(m.gamma.unwrap_or(1.0), m.sigma0.unwrap_or(1.0), m.sigma1.unwrap_or(1.0)),
        "example_3_5" => em::example_3_5(m.nu.unwrap_or(0.0)),
        "example_3_5_frozen" => em::example_3_5_frozen(m.nu.unwrap_or(0.0)),
        "example_4_3" => {
            // c = 2 alpha + sigma^2 = (-3, 1, 2) with sigma = 1/2 by default
            let alpha = require_len("model.alpha", &m.alpha, 3)?.unwrap_or([-1.625, 0.375, 0.875]);
            let sigma = require_len("model.sigma", &m.sigma, 3)?.unwrap_or([0.5; 3]);
            em::example_4_3(m.a.unwrap_or(3.0), m.b.unwrap_or(1.0), alpha, sigma)
        }
        other => {
            return Err(invalid(
                field,
                format!("unknown model '{other}' (expected example_2_5, example_3_5, example_3_5_frozen or example_4_3)"),
            ))
        }
    };
    built.map_err(|e| invalid(field, e))
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CliError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(invalid(field, "expected a nonempty rectangular nested array"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn explicit_model(m: &ModelSection) -> Result<LinearModel, CliError> {
    let model = match (&m.regimes, &m.alpha, &m.sigma) {
        (Some(regimes), None, None) => {
            let mut out = Vec::with_capacity(regimes.len());
            for (i, r) in regimes.iter().enumerate() {
                let path = format!("model.regimes[{i}]");
                let drift = matrix(&format!("{path}.drift"), &r.drift)?;
                let diffusion = matrix(&format!("{path}.diffusion"), &r.diffusion)?;
                let offset = match &r.offset {
                    Some(v) => DVector::from_column_slice(v),
                    None => DVector::zeros(drift.nrows()),
                };
                let multipliers = r
                    .multipliers
                    .iter()
                    .enumerate()
                    .map(|(k, c)| matrix(&format!("{path}.multipliers[{k}]"), c))
                    .collect::<Result<_, _>>()?;
                out.push(LinearRegime {
                    drift,
                    offset,
                    diffusion,
                    multipliers,
                });
            }
            match &m.bounds {
                Some(b) => {
                    let bounds = RegimeBounds::new(b.beta.clone(), b.c0, b.lipschitz, b.growth_offset)
                        .map_err(|e| invalid("model.bounds", e))?;
                    LinearModel::with_bounds(out, bounds)
                }
                None => LinearModel::new(out),
            }
            .map_err(|e| invalid("model.regimes", e))?
        }
        (None, Some(alpha), Some(sigma)) => {
            let kind = m.kind.ok_or_else(|| invalid("model.kind", "required with alpha/sigma"))?;
            LinearModel::scalar(kind, alpha, sigma).map_err(|e| invalid("model.alpha", e))?
        }
        _ => {
            return Err(invalid(
                "model",
                "needs builtin, scalar coefficients (kind, alpha, sigma) or regimes",
            ))
        }
    };
    Ok(model)
}
