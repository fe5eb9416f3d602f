//! Config-file schemas and their mapping onto library types.
//!
//! Configs are JSON. Enum-like fields are parsed by hand so error messages
//! name the offending field and value instead of a byte offset.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

use mibo::bench::{builtin_objective, ObjectiveSpec, BUILTIN_OBJECTIVES};
use mibo::driver::{NoisePolicy, Strategy};
use mibo::kernel::KernelFamily;
use mibo::space::{SearchSpace, Variable};

use crate::CliError;

pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))
}

pub fn parse_strategy(field: &str, value: &str) -> Result<Strategy, CliError> {
    match value {
        "naive" => Ok(Strategy::Naive),
        "basic" => Ok(Strategy::Basic),
        "proposed" => Ok(Strategy::Proposed),
        other => Err(CliError::config(format!(
            "{field}: unknown strategy `{other}` (expected naive, basic or proposed)"
        ))),
    }
}

pub fn parse_kernel(field: &str, value: &str) -> Result<KernelFamily, CliError> {
    match value {
        "squared-exponential" => Ok(KernelFamily::SquaredExponential),
        "matern52" => Ok(KernelFamily::Matern52),
        other => Err(CliError::config(format!(
            "{field}: unknown kernel `{other}` (expected squared-exponential or matern52)"
        ))),
    }
}

pub fn kernel_name(family: KernelFamily) -> &'static str {
    match family {
        KernelFamily::SquaredExponential => "squared-exponential",
        KernelFamily::Matern52 => "matern52",
    }
}

/// `"noiseless"`, `"infer"`, or a non-negative noise variance.
pub fn parse_noise(field: &str, value: &Value) -> Result<NoisePolicy, CliError> {
    match value {
        Value::String(s) if s == "noiseless" => Ok(NoisePolicy::Noiseless),
        Value::String(s) if s == "infer" => Ok(NoisePolicy::Infer),
        Value::Number(n) => match n.as_f64() {
            Some(v) if v.is_finite() && v >= 0.0 => Ok(NoisePolicy::Known(v)),
            _ => Err(CliError::config(format!(
                "{field}: noise variance must be a finite non-negative number"
            ))),
        },
        _ => Err(CliError::config(format!(
            "{field}: expected \"noiseless\", \"infer\" or a noise variance"
        ))),
    }
}

/// One search-space coordinate as written in config files.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableSpec {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(rename = "type")]
    pub kind: String,
    pub lower: f64,
    pub upper: f64,
}

/// A search space plus printable per-coordinate names.
#[derive(Debug, Clone)]
pub struct NamedSpace {
    pub space: SearchSpace,
    pub names: Vec<String>,
}

impl NamedSpace {
    fn anonymous(space: SearchSpace) -> Self {
        let names = (0..space.dimension()).map(|i| format!("x{i}")).collect();
        NamedSpace { space, names }
    }
}

pub fn build_space(field: &str, vars: &[VariableSpec]) -> Result<NamedSpace, CliError> {
    let mut variables = Vec::new();
    let mut names = Vec::new();
    for (i, v) in vars.iter().enumerate() {
        let variable = match v.kind.as_str() {
            "continuous" => Variable::continuous(v.lower, v.upper)
                .map_err(|e| CliError::config(format!("{field}[{i}]: {e}")))?,
            "integer" => {
                if v.lower.fract() != 0.0 || v.upper.fract() != 0.0 {
                    return Err(CliError::config(format!(
                        "{field}[{i}]: integer bounds must be whole numbers"
                    )));
                }
                Variable::integer(v.lower as i64, v.upper as i64)
                    .map_err(|e| CliError::config(format!("{field}[{i}]: {e}")))?
            }
            other => {
                return Err(CliError::config(format!(
                    "{field}[{i}].type: unknown variable type `{other}` (expected continuous or integer)"
                )))
            }
        };
        names.push(v.name.clone().unwrap_or_else(|| format!("x{i}")));
        variables.push(variable);
    }
    let space =
        SearchSpace::new(variables).map_err(|e| CliError::config(format!("{field}: {e}")))?;
    Ok(NamedSpace { space, names })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InlineObjective {
    space: Vec<VariableSpec>,
    resolution: usize,
    lengthscales: Vec<f64>,
    #[serde(default = "default_amplitude")]
    amplitude: f64,
    #[serde(default)]
    noise_variance: f64,
}

fn default_amplitude() -> f64 {
    1.0
}

/// A synthetic objective recipe plus presentation details.
#[derive(Debug, Clone)]
pub struct ResolvedObjective {
    pub spec: ObjectiveSpec,
    pub names: Vec<String>,
    /// `builtin=<name>` or `inline`, recorded in output metadata.
    pub label: String,
}

/// Interprets an `objective` config value as a synthetic objective: either a
/// builtin name or an inline spec object.
pub fn resolve_synthetic(field: &str, value: &Value) -> Result<ResolvedObjective, CliError> {
    match value {
        Value::String(name) => {
            let spec = builtin_objective(name).ok_or_else(|| {
                CliError::config(format!(
                    "{field}: unknown builtin objective `{name}` (available: {})",
                    BUILTIN_OBJECTIVES.join(", ")
                ))
            })?;
            let names = NamedSpace::anonymous(spec.space.clone()).names;
            Ok(ResolvedObjective {
                spec,
                names,
                label: format!("builtin={name}"),
            })
        }
        Value::Object(_) => {
            let inline: InlineObjective = serde_json::from_value(value.clone())
                .map_err(|e| CliError::config(format!("{field}: {e}")))?;
            let named = build_space(&format!("{field}.space"), &inline.space)?;
            let spec = ObjectiveSpec {
                space: named.space,
                resolution: inline.resolution,
                lengthscales: inline.lengthscales,
                amplitude: inline.amplitude,
                noise_variance: inline.noise_variance,
            };
            spec.validate()
                .map_err(|e| CliError::config(format!("{field}: {e}")))?;
            Ok(ResolvedObjective {
                spec,
                names: named.names,
                label: "inline".into(),
            })
        }
        _ => Err(CliError::config(format!(
            "{field}: expected a builtin objective name or an objective object"
        ))),
    }
}

/// Iteration count used when the config does not set one.
pub fn default_iterations(label: &str) -> usize {
    match label {
        "builtin=synthetic-4d" => 100,
        "builtin=integer-1d" => 15,
        _ => 50,
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfigFile {
    pub objective: Value,
    #[serde(default)]
    pub strategies: Option<Vec<String>>,
    #[serde(default)]
    pub kernel: Option<String>,
    #[serde(default)]
    pub repetitions: Option<usize>,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub n_initial: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub objective: Value,
    /// Required for external-command objectives; synthetic objectives carry
    /// their own space.
    #[serde(default)]
    pub space: Option<Vec<VariableSpec>>,
    #[serde(default)]
    pub strategy: Option<String>,
    #[serde(default)]
    pub kernel: Option<String>,
    #[serde(default)]
    pub noise: Option<Value>,
    #[serde(default)]
    pub n_initial: Option<usize>,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfigFile {
    pub objective: Value,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalCommand {
    pub command: Vec<String>,
}

/// What a `run` objective value denotes.
pub enum RunObjective {
    Synthetic(ResolvedObjective),
    External(Vec<String>),
}

pub fn resolve_run_objective(field: &str, value: &Value) -> Result<RunObjective, CliError> {
    if let Value::Object(map) = value {
        if map.contains_key("command") {
            let external: ExternalCommand = serde_json::from_value(value.clone())
                .map_err(|e| CliError::config(format!("{field}: {e}")))?;
            if external.command.is_empty() {
                return Err(CliError::config(format!(
                    "{field}.command: external command must not be empty"
                )));
            }
            return Ok(RunObjective::External(external.command));
        }
    }
    resolve_synthetic(field, value).map(RunObjective::Synthetic)
}
