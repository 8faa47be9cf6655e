use std::path::{Path, PathBuf};

use cnls_core::functionals::FieldSpec;
use cnls_core::solver::SolverConfig;
use cnls_core::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    pub r_max: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n: 4096, r_max: 100.0 }
    }
}

/// One initial datum as written in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatumConfig {
    Gaussian {
        amplitude: f64,
        width: f64,
        #[serde(default)]
        phase: f64,
    },
    GroundState {
        amplitude: f64,
        #[serde(default)]
        lambda: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl DatumConfig {
    pub fn spec(&self) -> FieldSpec {
        match *self {
            DatumConfig::Gaussian {
                amplitude,
                width,
                phase,
            } => FieldSpec::Gaussian {
                amplitude: Complex64::from_polar(amplitude, phase),
                width,
            },
            DatumConfig::GroundState {
                amplitude,
                lambda,
                phase,
            } => FieldSpec::ScaledGroundState {
                amplitude: Complex64::from_polar(amplitude, phase),
                lambda,
            },
        }
    }

    pub fn with_parameter(&self, parameter: SweepParameter, value: f64) -> Result<Self, ConfigError> {
        let mut out = self.clone();
        match (&mut out, parameter) {
            (
                DatumConfig::Gaussian { amplitude, .. } | DatumConfig::GroundState { amplitude, .. },
                SweepParameter::Amplitude,
            ) => *amplitude = value,
            (DatumConfig::Gaussian { width, .. }, SweepParameter::Width) => *width = value,
            (DatumConfig::GroundState { lambda, .. }, SweepParameter::Lambda) => *lambda = value,
            _ => {
                return Err(ConfigError::Invalid(format!(
                    "sweep parameter {parameter:?} does not apply to {}",
                    self.kind()
                )))
            }
        }
        Ok(out)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            DatumConfig::Gaussian { .. } => "gaussian",
            DatumConfig::GroundState { .. } => "ground_state",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Amplitude,
    Width,
    Lambda,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

fn default_dim() -> usize {
    5
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub initial_data: Vec<DatumConfig>,
    #[serde(default)]
    pub virial_radii: Vec<f64>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dim: default_dim(),
            grid: GridConfig::default(),
            solver: SolverConfig::default(),
            initial_data: Vec::new(),
            virial_radii: Vec::new(),
            sweep: None,
            output_dir: default_output(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let cfg: Self = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_owned(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: PathBuf::from("<string>"),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that do not depend on the grid. Grid problems are reported
    /// separately so they can carry their own exit code.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.solver
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for (i, d) in self.initial_data.iter().enumerate() {
            d.spec()
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("initial_data[{i}]: {e}")))?;
        }
        for &r in &self.virial_radii {
            if !(r > 0.0 && r.is_finite()) {
                return Err(ConfigError::Invalid(format!("virial radius {r} must be positive")));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(ConfigError::Invalid("sweep.values is empty".into()));
            }
            if sweep.values.iter().any(|v| !v.is_finite()) {
                return Err(ConfigError::Invalid("sweep.values must be finite".into()));
            }
            let base = self
                .initial_data
                .first()
                .ok_or_else(|| ConfigError::Invalid("a sweep needs initial_data[0] as its base datum".into()))?;
            for &v in &sweep.values {
                base.with_parameter(sweep.parameter, v)?
                    .spec()
                    .validate()
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn specs(&self) -> Vec<FieldSpec> {
        self.initial_data.iter().map(DatumConfig::spec).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
dim = 5
seed = 3
virial_radii = [5.0, 10.0]

[grid]
n = 2048
r_max = 60.0

[solver]
dt = 1e-3
t_final = 1.0

[[initial_data]]
kind = "gaussian"
amplitude = 0.5
width = 2.0

[[initial_data]]
kind = "ground_state"
amplitude = 8.0

[sweep]
parameter = "amplitude"
values = [0.5, 1.0]
"#;

    #[test]
    fn parses_sample() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.grid.n, 2048);
        assert_eq!(cfg.initial_data.len(), 2);
        assert_eq!(cfg.solver.blowup_factor, 1e4);
        assert_eq!(cfg.sweep.as_ref().unwrap().values, vec![0.5, 1.0]);
        assert!(matches!(cfg.initial_data[1], DatumConfig::GroundState { lambda, .. } if lambda == 0.0));
    }

    #[test]
    fn rejects_unknown_keys() {
        let bad = SAMPLE.replace("seed = 3", "seed = 3\nsed = 4");
        assert!(matches!(
            ExperimentConfig::from_toml(&bad),
            Err(ConfigError::Parse { .. })
        ));
        let bad = SAMPLE.replace("t_final = 1.0", "t_final = 1.0\nt_fnal = 2.0");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml(&SAMPLE.replace("t_final = 1.0", "t_final = 0.0")).is_err());
        assert!(ExperimentConfig::from_toml(&SAMPLE.replace("values = [0.5, 1.0]", "values = []")).is_err());
        let lam = SAMPLE.replace("parameter = \"amplitude\"", "parameter = \"lambda\"");
        assert!(ExperimentConfig::from_toml(&lam).is_err());
    }

    #[test]
    fn sweep_substitutes_parameter() {
        let d = DatumConfig::Gaussian {
            amplitude: 1.0,
            width: 2.0,
            phase: 0.0,
        };
        assert_eq!(
            d.with_parameter(SweepParameter::Width, 3.0).unwrap(),
            DatumConfig::Gaussian {
                amplitude: 1.0,
                width: 3.0,
                phase: 0.0
            }
        );
        assert!(d.with_parameter(SweepParameter::Lambda, 3.0).is_err());
    }
}
