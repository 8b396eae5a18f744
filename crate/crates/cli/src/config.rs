//! Experiment configuration (JSON). Unknown keys are rejected everywhere.

use std::path::PathBuf;

use bsdelta_core::driver::{parse_driver_in, ValidationBox};
use bsdelta_core::{
    build_lattice, Builtin, DriverConstants, DriverSpec, Lattice, LatticeMode, SolveConfig, TerminalSpec,
};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Solve,
    Compare,
    Stability,
    Converge,
    Counterexample,
    Duality,
    Checks,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Compare => "compare",
            Command::Stability => "stability",
            Command::Converge => "converge",
            Command::Counterexample => "counterexample",
            Command::Duality => "duality",
            Command::Checks => "checks",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional; must match the subcommand when given.
    #[serde(default)]
    pub command: Option<Command>,
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub driver: Option<DriverConfig>,
    #[serde(default)]
    pub terminal: Option<TerminalConfig>,
    /// Second problem for `compare` and `stability`.
    #[serde(default)]
    pub driver2: Option<DriverConfig>,
    #[serde(default)]
    pub terminal2: Option<TerminalConfig>,
    #[serde(default)]
    pub solver: SolveConfig,
    #[serde(default)]
    pub counterexample: Option<CounterexampleConfig>,
    #[serde(default)]
    pub duality: DualityConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn one_dim() -> usize {
    1
}

fn recombining() -> LatticeMode {
    LatticeMode::Recombining
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub steps_list: Option<Vec<usize>>,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default = "one_dim")]
    pub dim: usize,
    #[serde(default = "recombining")]
    pub mode: LatticeMode,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverConfig {
    #[serde(default)]
    pub builtin: Option<Builtin>,
    #[serde(default)]
    pub expression: Option<String>,
    /// Required with `expression`, rejected with `builtin`.
    #[serde(default)]
    pub constants: Option<DriverConstants>,
    /// Box for sampling the declared constants; `t_max` defaults to the horizon.
    #[serde(default)]
    pub validation_box: Option<ValidationBox>,
    /// Radial truncation in `z`, applied before `shift`.
    #[serde(default)]
    pub truncate: Option<f64>,
    #[serde(default)]
    pub shift: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalConfig {
    pub expression: String,
    /// Declared bound `C` on `|ξ|`.
    pub bound: f64,
    #[serde(default)]
    pub observation_times: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterexampleKind {
    /// `f = |z|²` with terminal `a` on the top leaf.
    Quadratic,
    /// `f = |z|^q` with terminal `a` on the top leaf.
    Power,
    /// `Z` at the central node for the square-root terminal.
    ZBlowup,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleConfig {
    pub kind: CounterexampleKind,
    #[serde(default)]
    pub a: Option<f64>,
    #[serde(default)]
    pub q: Option<f64>,
}

fn twenty() -> usize {
    20
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualityConfig {
    /// Number of seeded random admissible controls for the weak-duality check.
    #[serde(default = "twenty")]
    pub trials: usize,
}

impl Default for DualityConfig {
    fn default() -> Self {
        Self { trials: twenty() }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Write the per-node CSV dump for `solve`.
    #[serde(default)]
    pub dump_nodes: bool,
    /// Include the full Y, Z, dM arrays in the solve JSON. Defaults to
    /// lattices of at most `AUTO_FIELD_NODES` nodes.
    #[serde(default)]
    pub fields: Option<bool>,
}

pub const AUTO_FIELD_NODES: usize = 1024;
pub const MAX_DUMP_NODES: usize = 1 << 20;

fn cfg<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Config(msg.into()))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn check_command(&self, command: Command) -> Result<(), CliError> {
        match self.command {
            Some(c) if c != command => cfg(format!(
                "config is for `{}` but `{}` was requested",
                c.name(),
                command.name()
            )),
            _ => Ok(()),
        }
    }

    /// The single `lattice.steps` of one-lattice commands.
    pub fn steps(&self) -> Result<usize, CliError> {
        match (self.lattice.steps, &self.lattice.steps_list) {
            (Some(n), None) => Ok(n),
            (None, Some(_)) => cfg("this command takes `lattice.steps`, not `lattice.steps_list`"),
            (Some(_), Some(_)) => cfg("give only one of `lattice.steps` and `lattice.steps_list`"),
            (None, None) => cfg("`lattice.steps` is required"),
        }
    }

    pub fn steps_list(&self) -> Result<Vec<usize>, CliError> {
        match (self.lattice.steps, &self.lattice.steps_list) {
            (Some(n), None) => Ok(vec![n]),
            (None, Some(v)) => Ok(v.clone()),
            (Some(_), Some(_)) => cfg("give only one of `lattice.steps` and `lattice.steps_list`"),
            (None, None) => cfg("`lattice.steps` or `lattice.steps_list` is required"),
        }
    }

    pub fn lattice(&self) -> Result<Lattice, CliError> {
        let l = &self.lattice;
        build_lattice(self.steps()?, l.horizon, l.dim, l.mode).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn solver(&self) -> Result<SolveConfig, CliError> {
        self.solver.check().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(self.solver.clone())
    }

    pub fn driver(&self) -> Result<DriverSpec, CliError> {
        self.driver
            .as_ref()
            .ok_or_else(|| CliError::Config("`driver` is required".into()))?
            .build(self.lattice.dim, self.lattice.horizon, "driver")
    }

    pub fn terminal(&self) -> Result<TerminalSpec, CliError> {
        self.terminal
            .as_ref()
            .ok_or_else(|| CliError::Config("`terminal` is required".into()))?
            .build(self.lattice.dim, "terminal")
    }

    pub fn driver2(&self) -> Result<DriverSpec, CliError> {
        self.driver2
            .as_ref()
            .ok_or_else(|| CliError::Config("`driver2` is required".into()))?
            .build(self.lattice.dim, self.lattice.horizon, "driver2")
    }

    pub fn terminal2(&self) -> Result<TerminalSpec, CliError> {
        self.terminal2
            .as_ref()
            .ok_or_else(|| CliError::Config("`terminal2` is required".into()))?
            .build(self.lattice.dim, "terminal2")
    }
}

impl DriverConfig {
    pub fn build(&self, dim: usize, horizon: f64, key: &str) -> Result<DriverSpec, CliError> {
        let spec = match (&self.builtin, &self.expression) {
            (Some(b), None) => {
                if self.constants.is_some() || self.validation_box.is_some() {
                    return cfg(format!(
                        "`{key}.constants` and `{key}.validation_box` apply to expressions only; built-ins declare their own"
                    ));
                }
                b.build().map_err(|e| CliError::Config(format!("{key}: {e}")))?
            }
            (None, Some(text)) => {
                let Some(constants) = self.constants.clone() else {
                    return cfg(format!("`{key}.constants` is required with an expression"));
                };
                let bx = self.validation_box.unwrap_or(ValidationBox {
                    t_max: horizon,
                    ..ValidationBox::default()
                });
                parse_driver_in(text, constants, dim, bx).map_err(|e| CliError::driver(key, e))?
            }
            _ => return cfg(format!("`{key}` needs exactly one of `builtin` and `expression`")),
        };
        let spec = match self.truncate {
            Some(r) => spec.truncate(r).map_err(|e| CliError::driver(key, e))?,
            None => spec,
        };
        match self.shift {
            Some(s) => spec.shifted(s).map_err(|e| CliError::driver(key, e)),
            None => Ok(spec),
        }
    }
}

impl TerminalConfig {
    pub fn build(&self, dim: usize, key: &str) -> Result<TerminalSpec, CliError> {
        TerminalSpec::expression(&self.expression, self.bound, dim, self.observation_times.clone())
            .map_err(|e| CliError::Config(format!("{key}: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_and_defaults() {
        let c = ExperimentConfig::from_json(
            r#"{"lattice": {"steps": 4}, "driver": {"builtin": {"name": "zero"}},
                "terminal": {"expression": "w1", "bound": 2}}"#,
        )
        .unwrap();
        assert_eq!(c.lattice.horizon, 1.0);
        assert_eq!(c.lattice.dim, 1);
        assert_eq!(c.duality.trials, 20);
        assert_eq!(c.seed, 0);
        assert_eq!(c.lattice().unwrap().steps(), 4);
        assert!(c.driver().is_ok() && c.terminal().is_ok());
    }

    #[test]
    fn schema_errors_are_config_errors() {
        let bad = [
            r#"{"lattice": {"steps": 4}, "bogus": 1}"#,
            r#"{"lattice": {"steps": 4, "depth": 3}}"#,
            r#"{"lattice": {"steps": 4}, "solver": {"tolerance": 1}}"#,
            r#"{"lattice": {"steps": 4}, "driver": {"builtin": {"name": "power_z", "q": 1.5, "k": 1}}}"#,
        ];
        for text in bad {
            assert!(
                matches!(ExperimentConfig::from_json(text), Err(CliError::Config(_))),
                "{text}"
            );
        }
        let both = ExperimentConfig::from_json(
            r#"{"lattice": {"steps": 4}, "driver": {"builtin": {"name": "zero"}, "expression": "y"}}"#,
        )
        .unwrap();
        assert!(matches!(both.driver(), Err(CliError::Config(_))));
    }

    #[test]
    fn false_declarations_are_contract_errors() {
        let c = ExperimentConfig::from_json(
            r#"{"lattice": {"steps": 4}, "driver": {"expression": "3 * y",
                "constants": {"k": 1, "q": 1, "l_y": 1, "l_z": 0}}}"#,
        )
        .unwrap();
        assert!(matches!(c.driver(), Err(CliError::Run(_))));
    }
}
