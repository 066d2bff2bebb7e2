//! Run configuration: a flat TOML file plus `--set key=value` overrides.
//!
//! Unknown keys are rejected. Problem presets (`mbb`, `bridge`) fill in the
//! benchmark defaults; every field can still be overridden explicitly.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::optimize::{BetaSchedule, ProblemForm};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid override {0:?} (expected key=value)")]
    BadOverride(String),
    #[error("invalid value for {key}: {reason}")]
    Invalid { key: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Problem {
    Mbb,
    Bridge,
    Custom,
}

/// Raw file schema; everything optional so presets can fill gaps.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    problem: Option<Problem>,
    nx: Option<usize>,
    ny: Option<usize>,
    length: Option<f64>,
    v_max: Option<f64>,
    r1: Option<f64>,
    t_ref: Option<f64>,
    pad: Option<usize>,
    form: Option<u8>,
    m_infill: Option<f64>,
    a_low: Option<f64>,
    a_up: Option<f64>,
    beta_start: Option<f64>,
    beta_end: Option<f64>,
    beta_double_every: Option<usize>,
    max_iters: Option<usize>,
    change_tol: Option<f64>,
    epsilon: Option<f64>,
    gamma: Option<f64>,
    r_star: Option<f64>,
    adaptive: Option<bool>,
    refine: Option<usize>,
    pcg_tol: Option<f64>,
    pcg_max_iter: Option<usize>,
    db: Option<PathBuf>,
    output: Option<PathBuf>,
}

/// Fully resolved configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: Problem,
    /// coarse physical elements
    pub nx: usize,
    pub ny: usize,
    /// reference length L (the domain height)
    pub length: f64,
    pub v_max: f64,
    /// filter radius and coating thickness, in units of L
    pub r1: f64,
    pub t_ref: f64,
    /// filter padding, elements per padded side
    pub pad: usize,
    pub form: ProblemForm,
    pub beta: BetaSchedule,
    pub max_iters: usize,
    pub change_tol: f64,
    /// target lattice spacing, in units of the fine element size
    pub epsilon_hf: f64,
    /// angle-constraint penalty
    pub gamma: f64,
    /// transition kernel radius, in units of epsilon
    pub r_star_factor: f64,
    pub adaptive: bool,
    /// fine elements per coarse element
    pub refine: usize,
    pub pcg_tol: f64,
    pub pcg_max_iter: usize,
    pub db: PathBuf,
    pub output: PathBuf,
}

impl RunConfig {
    /// Absolute coarse element size.
    pub fn h_coarse(&self) -> f64 {
        self.length / self.ny as f64
    }

    /// Absolute fine element size.
    pub fn h_fine(&self) -> f64 {
        self.h_coarse() / self.refine as f64
    }

    /// Absolute target spacing.
    pub fn epsilon(&self) -> f64 {
        self.epsilon_hf * self.h_fine()
    }

    /// Absolute transition kernel radius.
    pub fn r_star(&self) -> f64 {
        self.r_star_factor * self.epsilon()
    }
}

/// Parse a config file and apply `key=value` overrides (same keys as the
/// file; values in TOML syntax).
pub fn parse_config(path: &Path, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
    parse_config_str(&text, overrides)
}

pub fn parse_config_str(text: &str, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    for ov in overrides {
        let (key, _) = ov.split_once('=').ok_or_else(|| ConfigError::BadOverride(ov.clone()))?;
        let snippet: toml::Table = ov.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let value = snippet.get(key.trim()).cloned().ok_or_else(|| ConfigError::BadOverride(ov.clone()))?;
        table.insert(key.trim().to_string(), value);
    }
    let raw: RawConfig = table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    resolve(raw)
}

fn resolve(raw: RawConfig) -> Result<RunConfig, ConfigError> {
    let problem = raw.problem.unwrap_or(Problem::Custom);
    // benchmark presets
    let (d_nx, d_ny, d_vmax) = match problem {
        Problem::Mbb => (300, 100, 0.4),
        Problem::Bridge => (200, 100, 0.2),
        Problem::Custom => (120, 40, 0.4),
    };
    let ny = raw.ny.unwrap_or(d_ny);
    let nx = raw.nx.unwrap_or_else(|| match problem {
        Problem::Mbb => 3 * ny,
        Problem::Bridge => 2 * ny,
        Problem::Custom => d_nx * ny / d_ny,
    });
    let form_idx = raw.form.unwrap_or(1);
    let m_infill = raw.m_infill.unwrap_or(0.5);
    let a_low = raw.a_low.unwrap_or(0.2);
    let a_up = raw.a_up.unwrap_or(0.9);
    let form = match form_idx {
        0 => ProblemForm::Isotropic { m_infill },
        1 => ProblemForm::SquareHole { m_infill },
        2 => ProblemForm::FixedMass { m_infill, a_low, a_up },
        3 => ProblemForm::FreeHole { a_low, a_up },
        f => {
            return Err(ConfigError::Invalid {
                key: "form",
                reason: format!("{f} is not one of 0-3"),
            })
        }
    };
    let cfg = RunConfig {
        problem,
        nx,
        ny,
        length: raw.length.unwrap_or(1.0),
        v_max: raw.v_max.unwrap_or(d_vmax),
        r1: raw.r1.unwrap_or(0.075),
        t_ref: raw.t_ref.unwrap_or(0.015),
        pad: raw.pad.unwrap_or(8),
        form,
        beta: BetaSchedule {
            start: raw.beta_start.unwrap_or(2.0),
            end: raw.beta_end.unwrap_or(128.0),
            double_every: raw.beta_double_every.unwrap_or(50),
        },
        max_iters: raw.max_iters.unwrap_or(1000),
        change_tol: raw.change_tol.unwrap_or(0.01),
        epsilon_hf: raw.epsilon.unwrap_or(20.0),
        gamma: raw.gamma.unwrap_or(1e3),
        r_star_factor: raw.r_star.unwrap_or(1.6),
        adaptive: raw.adaptive.unwrap_or(true),
        refine: raw.refine.unwrap_or(10),
        pcg_tol: raw.pcg_tol.unwrap_or(1e-6),
        pcg_max_iter: raw.pcg_max_iter.unwrap_or(40000),
        db: raw.db.unwrap_or_else(|| PathBuf::from("homog.db")),
        output: raw.output.unwrap_or_else(|| PathBuf::from("out")),
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig) -> Result<(), ConfigError> {
    let err = |key: &'static str, reason: String| Err(ConfigError::Invalid { key, reason });
    if cfg.nx == 0 || cfg.ny == 0 {
        return err("nx", "grid must be nonempty".into());
    }
    if !(cfg.v_max > 0.0 && cfg.v_max <= 1.0) {
        return err("v_max", format!("{} outside (0, 1]", cfg.v_max));
    }
    if !(cfg.length > 0.0) {
        return err("length", "must be positive".into());
    }
    if !(cfg.r1 > 0.0 && cfg.t_ref > 0.0) {
        return err("r1", "filter radius and t_ref must be positive".into());
    }
    let bounds = match cfg.form {
        ProblemForm::FixedMass { a_low, a_up, .. } | ProblemForm::FreeHole { a_low, a_up } => Some((a_low, a_up)),
        _ => None,
    };
    if let Some((a_low, a_up)) = bounds {
        if !(a_low < a_up) {
            return err("a_low", format!("a_low {a_low} must be < a_up {a_up}"));
        }
        if !(a_low > 0.0 && a_up < 1.0) {
            return err("a_low", "bounds must lie strictly inside (0, 1)".into());
        }
    }
    let m = match cfg.form {
        ProblemForm::Isotropic { m_infill }
        | ProblemForm::SquareHole { m_infill }
        | ProblemForm::FixedMass { m_infill, .. } => Some(m_infill),
        ProblemForm::FreeHole { .. } => None,
    };
    if let Some(m_infill) = m {
        if !(m_infill > 0.0 && m_infill < 1.0) {
            return err("m_infill", format!("{m_infill} outside (0, 1)"));
        }
    }
    if cfg.refine == 0 {
        return err("refine", "must be at least 1".into());
    }
    if !(cfg.epsilon_hf > 0.0) {
        return err("epsilon", "must be positive".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_mbb_fills_defaults() {
        let cfg = parse_config_str("problem = \"mbb\"\n", &[]).unwrap();
        assert_eq!(cfg.nx, 300);
        assert_eq!(cfg.ny, 100);
        assert_eq!(cfg.v_max, 0.4);
        assert_eq!(cfg.r1, 0.075);
        assert_eq!(cfg.t_ref, 0.015);
        assert!(matches!(cfg.form, ProblemForm::SquareHole { m_infill } if m_infill == 0.5));
        assert_eq!(cfg.beta.start, 2.0);
        assert_eq!(cfg.beta.end, 128.0);
        assert_eq!(cfg.epsilon_hf, 20.0);
    }

    #[test]
    fn bridge_defaults() {
        let cfg = parse_config_str("problem = \"bridge\"\n", &[]).unwrap();
        assert_eq!(cfg.nx, 200);
        assert_eq!(cfg.ny, 100);
        assert_eq!(cfg.v_max, 0.2);
    }

    #[test]
    fn volume_bound_rejected() {
        let r = parse_config_str("problem = \"mbb\"\nv_max = 1.5\n", &[]);
        assert!(matches!(r, Err(ConfigError::Invalid { key: "v_max", .. })));
    }

    #[test]
    fn inverted_hole_bounds_rejected() {
        let r = parse_config_str("problem = \"mbb\"\nform = 3\na_low = 0.9\na_up = 0.2\n", &[]);
        assert!(matches!(r, Err(ConfigError::Invalid { key: "a_low", .. })));
    }

    #[test]
    fn unknown_key_rejected() {
        let r = parse_config_str("problem = \"mbb\"\nvmax = 0.4\n", &[]);
        assert!(matches!(r, Err(ConfigError::Parse(_))));
    }

    #[test]
    fn overrides_apply() {
        let cfg = parse_config_str(
            "problem = \"mbb\"\n",
            &["m_infill=0.7".into(), "adaptive=false".into(), "output=\"elsewhere\"".into()],
        )
        .unwrap();
        assert!(matches!(cfg.form, ProblemForm::SquareHole { m_infill } if m_infill == 0.7));
        assert!(!cfg.adaptive);
        assert_eq!(cfg.output, PathBuf::from("elsewhere"));
    }

    #[test]
    fn bad_override_rejected() {
        let r = parse_config_str("problem = \"mbb\"\n", &["m_infill".into()]);
        assert!(matches!(r, Err(ConfigError::BadOverride(_))));
    }

    #[test]
    fn derived_lengths() {
        let cfg = parse_config_str("problem = \"mbb\"\n", &[]).unwrap();
        assert_eq!(cfg.h_coarse(), 0.01);
        assert_eq!(cfg.h_fine(), 0.001);
        assert_eq!(cfg.epsilon(), 0.02);
        assert!((cfg.r_star() - 0.032).abs() < 1e-15);
    }
}
