//! Experiment configuration: a strict TOML schema plus flag overrides.
//!
//! Unknown keys in a config file are rejected so that typos cannot silently
//! change an experiment. Every run summary embeds the fully resolved
//! configuration with all defaults materialized.

use std::path::{Path, PathBuf};

use kolmodiff::simulate::{
    asian_model, builtin, inline_constant_model, kolmogorov_2d_with_drift, ModelSpec,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// On-disk experiment configuration; every field optional, flags override.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<String>,
    pub model: Option<String>,
    pub model_inline: Option<InlineModel>,
    pub t: Option<f64>,
    pub x: Option<Vec<f64>>,
    pub elapsed: Option<f64>,
    pub t_end: Option<f64>,
    pub dt: Option<f64>,
    pub n_paths: Option<usize>,
    pub seed: Option<u64>,
    pub delta: Option<f64>,
    pub tail_exponent: Option<f64>,
    pub eps: Option<f64>,
    pub bandwidth: Option<f64>,
    pub grid_per_axis: Option<usize>,
    pub grid_half_sds: Option<f64>,
    pub n_max: Option<usize>,
    pub asian_floor: Option<f64>,
    pub drift_a1: Option<f64>,
    pub out_json: Option<PathBuf>,
    pub out_csv: Option<PathBuf>,
    pub out_bin: Option<PathBuf>,
}

/// Inline constant-coefficient model specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineModel {
    pub name: Option<String>,
    /// Drift matrix rows.
    pub b: Vec<Vec<f64>>,
    /// Block sizes `p_0, ..., p_r`.
    pub sizes: Vec<usize>,
    pub p0: usize,
    /// Row-major `p0 x p0` diffusion matrix.
    pub a: Vec<Vec<f64>>,
    /// First-order coefficients, length `p0`.
    pub a_drift: Vec<f64>,
    pub horizon: Option<f64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::ConfigParse(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::ConfigParse(e.to_string()))
    }

    /// Later (flag-level) values win over config-file values.
    pub fn overlay(mut self, over: ExperimentConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if over.$f.is_some() { self.$f = over.$f; } )* };
        }
        take!(
            experiment,
            model,
            model_inline,
            t,
            x,
            elapsed,
            t_end,
            dt,
            n_paths,
            seed,
            delta,
            tail_exponent,
            eps,
            bandwidth,
            grid_per_axis,
            grid_half_sds,
            n_max,
            asian_floor,
            drift_a1,
            out_json,
            out_csv,
            out_bin
        );
        self
    }

    /// Checks that a config file written for one experiment is not fed to
    /// another.
    pub fn expect_experiment(&self, name: &str) -> Result<(), CliError> {
        match &self.experiment {
            Some(e) if e != name => Err(CliError::Validation(format!(
                "config is for experiment '{e}', invoked as '{name}'"
            ))),
            _ => Ok(()),
        }
    }

    /// Resolves the model: inline spec wins, then the named builtin with
    /// parameter overrides.
    pub fn resolve_model(&self, default_name: &str) -> Result<ModelSpec, CliError> {
        if let Some(inline) = &self.model_inline {
            let d: usize = inline.sizes.iter().sum();
            if inline.b.len() != d || inline.b.iter().any(|r| r.len() != d) {
                return Err(CliError::Validation(format!(
                    "inline drift matrix must be {d}x{d}"
                )));
            }
            let a_flat: Vec<f64> = inline.a.iter().flatten().cloned().collect();
            if a_flat.len() != inline.p0 * inline.p0 || inline.a_drift.len() != inline.p0 {
                return Err(CliError::Validation(
                    "inline coefficients must be p0 x p0 and p0".into(),
                ));
            }
            return inline_constant_model(
                inline.name.as_deref().unwrap_or("inline"),
                &inline.b,
                &inline.sizes,
                inline.p0,
                a_flat,
                inline.a_drift.clone(),
                inline.horizon.unwrap_or(2.0),
            )
            .map_err(|e| CliError::Validation(e.to_string()));
        }
        let name = self.model.as_deref().unwrap_or(default_name);
        match name {
            "asian" => Ok(asian_model(self.asian_floor.unwrap_or(0.1))),
            "kolmogorov-2d-drift" => Ok(kolmogorov_2d_with_drift(self.drift_a1.unwrap_or(0.7))),
            other => builtin(other)
                .ok_or_else(|| CliError::Validation(format!("unknown model '{other}'"))),
        }
    }
}
