//! Scenario configuration: a sectioned TOML file, validated into a
//! [`ScenarioConfig`], plus the built-in presets.

use std::fmt;
use std::path::{Path, PathBuf};

use beamvi_core::grid::grow_slice;
use beamvi_core::integrators::{JacobianKind, MarchOptions, NewtonOptions};
use beamvi_core::liegroup::{cay_so3, tau};
use beamvi_core::{AlgebraVector, BeamParams, GroupElement, MaterialInput, ModelError};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("unknown preset `{0}` (available: {list})", list = PRESETS.join(", "))]
    UnknownPreset(String),
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    TimeIntegrate,
    SpaceIntegrate,
    TimeThenSpaceReconstruct,
    SpaceThenTimeReconstruct,
}

impl Mode {
    /// Whether the primary march runs in time.
    pub fn marches_in_time(self) -> bool {
        matches!(self, Mode::TimeIntegrate | Mode::TimeThenSpaceReconstruct)
    }

    pub fn reconstructs(self) -> bool {
        matches!(
            self,
            Mode::TimeThenSpaceReconstruct | Mode::SpaceThenTimeReconstruct
        )
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::TimeIntegrate => "time_integrate",
            Mode::SpaceIntegrate => "space_integrate",
            Mode::TimeThenSpaceReconstruct => "time_then_space_reconstruct",
            Mode::SpaceThenTimeReconstruct => "space_then_time_reconstruct",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    /// Density, kg/m³.
    pub rho: f64,
    /// Side of the square cross-section, m.
    pub side: f64,
    /// Beam length, m.
    pub length: f64,
    /// Young modulus, N/m².
    pub young: f64,
    pub poisson: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub dt: f64,
    pub ds: f64,
    /// Total simulated time, s.
    pub duration: f64,
}

/// Constant profiles for the two initial slices. The first slice starts at
/// the seed pose; the second starts at `seed · τ(h · seed_step)` with `h`
/// the step across slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// Time slices `𝐠⁰`, `𝐠¹` grown from constant strains.
    StrainProfiles {
        eta0: [f64; 6],
        eta1: [f64; 6],
        /// Velocity taking `g_0^0` to `g_0^1`.
        seed_velocity: [f64; 6],
        #[serde(default)]
        seed_rotation: [f64; 3],
        #[serde(default)]
        seed_position: [f64; 3],
    },
    /// Space slices `𝐠_0`, `𝐠_1` grown from constant velocities.
    VelocityProfiles {
        xi0: [f64; 6],
        xi1: [f64; 6],
        /// Strain taking `g_0^0` to `g_1^0`.
        seed_strain: [f64; 6],
        #[serde(default)]
        seed_rotation: [f64; 3],
        #[serde(default)]
        seed_position: [f64; 3],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Jacobian {
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Newton {
    pub tol: f64,
    pub max_iter: usize,
    #[serde(default = "default_jacobian")]
    pub jacobian: Jacobian,
}

fn default_jacobian() -> Jacobian {
    Jacobian::Analytic
}

impl Default for Newton {
    fn default() -> Self {
        let d = NewtonOptions::default();
        Self {
            tol: d.tol,
            max_iter: d.max_iter,
            jacobian: Jacobian::Analytic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    pub dir: String,
    /// Extra diagnostics restricted to `t ≤ w` for each listed `w` (s).
    #[serde(default)]
    pub windows: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub mode: Mode,
    /// Body force per unit length, N/m.
    #[serde(default)]
    pub gravity: [f64; 3],
    /// Solve the nodes of a slice in parallel.
    #[serde(default = "default_parallel")]
    pub parallel: bool,
    pub material: Material,
    pub grid: Grid,
    pub initial: InitialData,
    #[serde(default)]
    pub newton: Newton,
    pub output: Output,
}

fn default_parallel() -> bool {
    true
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

/// Parses and validates a configuration from TOML text.
pub fn parse_str(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        ConfigError::Parse {
            line,
            column,
            message: e.message().trim().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_str(&text)
}

/// TOML text that [`parse_str`] maps back to `cfg`.
pub fn emit(cfg: &ScenarioConfig) -> String {
    toml::to_string(cfg).expect("configuration always serializes")
}

fn check_finite(field: &str, values: &[f64]) -> Result<(), ConfigError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(invalid(field, "must be finite"))
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        check_finite("gravity", &self.gravity)?;
        match &self.initial {
            InitialData::StrainProfiles {
                eta0,
                eta1,
                seed_velocity,
                seed_rotation,
                seed_position,
            } => {
                if !self.mode.marches_in_time() {
                    return Err(invalid(
                        "initial.kind",
                        format!("mode {} needs velocity_profiles", self.mode),
                    ));
                }
                check_finite("initial.eta0", eta0)?;
                check_finite("initial.eta1", eta1)?;
                check_finite("initial.seed_velocity", seed_velocity)?;
                check_finite("initial.seed_rotation", seed_rotation)?;
                check_finite("initial.seed_position", seed_position)?;
            }
            InitialData::VelocityProfiles {
                xi0,
                xi1,
                seed_strain,
                seed_rotation,
                seed_position,
            } => {
                if self.mode.marches_in_time() {
                    return Err(invalid(
                        "initial.kind",
                        format!("mode {} needs strain_profiles", self.mode),
                    ));
                }
                check_finite("initial.xi0", xi0)?;
                check_finite("initial.xi1", xi1)?;
                check_finite("initial.seed_strain", seed_strain)?;
                check_finite("initial.seed_rotation", seed_rotation)?;
                check_finite("initial.seed_position", seed_position)?;
            }
        }
        if !(self.newton.tol > 0.0 && self.newton.tol.is_finite()) {
            return Err(invalid("newton.tol", "must be positive"));
        }
        if self.newton.max_iter == 0 {
            return Err(invalid("newton.max_iter", "must be at least 1"));
        }
        if self.output.dir.trim().is_empty() {
            return Err(invalid("output.dir", "must not be empty"));
        }
        for w in &self.output.windows {
            if !(*w > 0.0 && *w <= self.grid.duration) {
                return Err(invalid(
                    "output.windows",
                    format!("{w} is outside (0, {}]", self.grid.duration),
                ));
            }
        }
        self.params().map(|_| ())
    }

    /// Material and grid data, with `N = round(T/Δt)` time nodes and
    /// `A = round(L/Δs)` space nodes.
    pub fn params(&self) -> Result<BeamParams, ConfigError> {
        let m = &self.material;
        let g = &self.grid;
        let input = MaterialInput {
            rho: m.rho,
            side: m.side,
            length: m.length,
            young: m.young,
            poisson: m.poisson,
            gravity: Vector3::from(self.gravity),
            dt: g.dt,
            ds: g.ds,
            duration: g.duration,
        };
        BeamParams::build(&input).map_err(|e| match e {
            ModelError::NonPositiveParam { name, value } => {
                let field = match name {
                    "rho" | "side" | "length" | "young" => format!("material.{name}"),
                    "dt" | "ds" | "duration" => format!("grid.{name}"),
                    other => other.to_string(),
                };
                invalid(&field, format!("must be positive, got {value}"))
            }
            ModelError::PoissonOutOfRange(v) => invalid("material.poisson", format!("{v} is outside (-1, 0.5)")),
            ModelError::GridTooSmall { n_time, n_space } => {
                let field = if n_time < 2 { "grid.duration" } else { "grid.ds" };
                invalid(field, format!("grid has {n_time} time and {n_space} space nodes; at least 2 each are needed"))
            }
        })
    }

    pub fn march_options(&self) -> MarchOptions {
        MarchOptions {
            newton: NewtonOptions {
                tol: self.newton.tol,
                max_iter: self.newton.max_iter,
                jacobian: match self.newton.jacobian {
                    Jacobian::Analytic => JacobianKind::Analytic,
                    Jacobian::FiniteDifference => JacobianKind::FiniteDifference,
                },
            },
            parallel: self.parallel,
        }
    }

    /// The two initial slices: rows `𝐠⁰, 𝐠¹` for strain profiles, columns
    /// `𝐠_0, 𝐠_1` for velocity profiles.
    pub fn initial_slices(&self, params: &BeamParams) -> (Vec<GroupElement>, Vec<GroupElement>) {
        let seed = |rot: &[f64; 3], pos: &[f64; 3]| {
            GroupElement::new(cay_so3(&Vector3::from(*rot)), Vector3::from(*pos))
        };
        match &self.initial {
            InitialData::StrainProfiles {
                eta0,
                eta1,
                seed_velocity,
                seed_rotation,
                seed_position,
            } => {
                let g0 = seed(seed_rotation, seed_position);
                let g1 = g0.compose(&tau(
                    &(AlgebraVector::from_array(*seed_velocity) * params.dt)
                ));
                let n = params.n_space - 1;
                (
                    grow_slice(&g0, &vec![AlgebraVector::from_array(*eta0); n], params.ds),
                    grow_slice(&g1, &vec![AlgebraVector::from_array(*eta1); n], params.ds),
                )
            }
            InitialData::VelocityProfiles {
                xi0,
                xi1,
                seed_strain,
                seed_rotation,
                seed_position,
            } => {
                let g0 = seed(seed_rotation, seed_position);
                let g1 = g0.compose(&tau(&(AlgebraVector::from_array(*seed_strain) * params.ds)));
                let n = params.n_time - 1;
                (
                    grow_slice(&g0, &vec![AlgebraVector::from_array(*xi0); n], params.dt),
                    grow_slice(&g1, &vec![AlgebraVector::from_array(*xi1); n], params.dt),
                )
            }
        }
    }
}

pub const PRESETS: [&str; 4] = ["tumbling", "space-march-a", "space-march-b", "equilibrium"];

const E6: [f64; 6] = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0];

fn output(name: &str, windows: Vec<f64>) -> Output {
    Output {
        dir: format!("out/{name}"),
        windows,
    }
}

pub fn preset(name: &str) -> Result<ScenarioConfig, ConfigError> {
    let cfg = match name {
        "tumbling" => ScenarioConfig {
            name: name.into(),
            mode: Mode::TimeThenSpaceReconstruct,
            gravity: [0.0; 3],
            parallel: true,
            material: Material {
                rho: 1e3,
                side: 0.01,
                length: 1.0,
                young: 5e3,
                poisson: 0.35,
            },
            grid: Grid {
                dt: 5e-4,
                ds: 0.1,
                duration: 3.0,
            },
            initial: InitialData::StrainProfiles {
                eta0: [1.0, 1.5, 1.0, 0.0, 0.0, 1.0],
                eta1: [1.004, 1.52, 1.005, -0.01, 0.0, 1.0],
                seed_velocity: E6,
                seed_rotation: [0.0; 3],
                seed_position: [0.0; 3],
            },
            newton: Newton::default(),
            output: output(name, vec![1.0, 3.0]),
        },
        "space-march-a" => ScenarioConfig {
            name: name.into(),
            mode: Mode::SpaceThenTimeReconstruct,
            gravity: [0.0; 3],
            parallel: true,
            material: Material {
                rho: 1e3,
                side: 0.01,
                length: 0.8,
                young: 5e4,
                poisson: 0.35,
            },
            grid: Grid {
                dt: 0.05,
                ds: 0.05,
                duration: 10.0,
            },
            initial: InitialData::VelocityProfiles {
                xi0: [0.0, -2.0, 0.0, 0.0, -0.1, 0.0],
                xi1: [0.007, -1.998, -0.007, -0.08, -0.1, 0.0],
                seed_strain: E6,
                seed_rotation: [0.0; 3],
                seed_position: [0.0; 3],
            },
            newton: Newton::default(),
            output: output(name, Vec::new()),
        },
        "space-march-b" => ScenarioConfig {
            name: name.into(),
            mode: Mode::SpaceThenTimeReconstruct,
            gravity: [0.0; 3],
            parallel: true,
            material: Material {
                rho: 1e3,
                side: 0.01,
                length: 0.8,
                young: 5e4,
                poisson: 0.35,
            },
            grid: Grid {
                dt: 0.04,
                ds: 0.02,
                duration: 1.0,
            },
            initial: InitialData::VelocityProfiles {
                xi0: [0.0, -0.5, 0.0, 0.0, -0.1, 0.0],
                xi1: [0.06, -0.499, -0.04, -0.03, -0.1, 0.0],
                seed_strain: E6,
                seed_rotation: [0.0; 3],
                seed_position: [0.0; 3],
            },
            newton: Newton::default(),
            output: output(name, Vec::new()),
        },
        "equilibrium" => ScenarioConfig {
            name: name.into(),
            mode: Mode::TimeThenSpaceReconstruct,
            gravity: [0.0; 3],
            parallel: true,
            material: Material {
                rho: 1e3,
                side: 0.01,
                length: 1.0,
                young: 5e3,
                poisson: 0.35,
            },
            grid: Grid {
                dt: 1e-3,
                ds: 0.1,
                duration: 1.0,
            },
            initial: InitialData::StrainProfiles {
                eta0: E6,
                eta1: E6,
                seed_velocity: [0.0; 6],
                seed_rotation: [0.0; 3],
                seed_position: [0.0; 3],
            },
            newton: Newton::default(),
            output: output(name, Vec::new()),
        },
        other => return Err(ConfigError::UnknownPreset(other.to_string())),
    };
    Ok(cfg)
}
