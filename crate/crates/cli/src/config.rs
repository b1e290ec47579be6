use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use qfp_core::openbox::{NoiseModel, ReconstructOptions};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::files::read_text;

/// Pipeline description read from a TOML file.
///
/// ```toml
/// seed = 7
/// output_dir = "runs/hadamard"
///
/// [tolerances]
/// min_fidelity = 0.9999
///
/// [[stages]]
/// name = "synth"
/// synthesize = { target = "hadamard", starts = 8 }
///
/// [[stages]]
/// name = "probe"
/// openbox-sim = { from = "synth", phases = 32 }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; every stage draws from `derive_seed(seed, stage name)`.
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub stages: Vec<Stage>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Every stage that reports a fidelity must reach this value.
    #[serde(default)]
    pub min_fidelity: Option<f64>,
    /// Wall-clock cap per stage in seconds.
    #[serde(default)]
    pub max_stage_seconds: Option<f64>,
}

/// A named stage: a `name` key plus exactly one operation key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "toml::Table")]
pub struct Stage {
    pub name: String,
    #[serde(flatten)]
    pub op: StageOp,
}

impl TryFrom<toml::Table> for Stage {
    type Error = String;

    fn try_from(mut table: toml::Table) -> std::result::Result<Self, String> {
        let name = match table.remove("name") {
            Some(toml::Value::String(s)) => s,
            Some(_) => return Err("stage `name` must be a string".into()),
            None => return Err("stage is missing `name`".into()),
        };
        if table.len() != 1 {
            let keys: Vec<&String> = table.keys().collect();
            return Err(format!("stage `{name}` needs exactly one operation key, found {keys:?}"));
        }
        let op = StageOp::deserialize(toml::Value::Table(table)).map_err(|e| format!("stage `{name}`: {e}"))?;
        Ok(Self { name, op })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageOp {
    Synthesize(SynthesizeParams),
    Compose(ComposeParams),
    OpenboxSim(OpenboxSimParams),
    OpenboxFit(OpenboxFitParams),
    CountsSim(CountsSimParams),
    Infer(InferParams),
    Report(ReportParams),
}

impl StageOp {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Synthesize(_) => "synthesize",
            Self::Compose(_) => "compose",
            Self::OpenboxSim(_) => "openbox-sim",
            Self::OpenboxFit(_) => "openbox-fit",
            Self::CountsSim(_) => "counts-sim",
            Self::Infer(_) => "infer",
            Self::Report(_) => "report",
        }
    }

    /// Upstream stages whose output directories this stage reads.
    pub fn inputs(&self) -> Vec<&str> {
        match self {
            Self::Synthesize(_) => vec![],
            Self::Compose(p) => p.from.iter().map(String::as_str).collect(),
            Self::OpenboxSim(p) => vec![p.from.as_str()],
            Self::OpenboxFit(p) => vec![p.from.as_str()],
            Self::CountsSim(p) => p.from.iter().map(String::as_str).collect(),
            Self::Infer(p) => vec![p.from.as_str()],
            Self::Report(p) => p.from.iter().map(String::as_str).collect(),
        }
    }

    /// Stage kinds accepted as the `from` input.
    fn accepted_inputs(&self) -> &'static [&'static str] {
        match self {
            Self::Synthesize(_) => &[],
            Self::Compose(_) => &["synthesize"],
            Self::OpenboxSim(_) => &["synthesize", "compose"],
            Self::OpenboxFit(_) => &["openbox-sim"],
            Self::CountsSim(_) => &["synthesize", "compose", "openbox-fit"],
            Self::Infer(_) => &["counts-sim"],
            Self::Report(_) => &["synthesize", "openbox-fit", "infer"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesizeParams {
    /// Gate label such as `hadamard`, `tritter`, `cnot` or `dft(4)`.
    pub target: String,
    /// Circuit template file (JSON or TOML); the gate default otherwise.
    #[serde(default)]
    pub template: Option<PathBuf>,
    #[serde(default)]
    pub starts: Option<usize>,
    /// Iteration budget per start.
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default)]
    pub success_floor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposeParams {
    /// Synthesize stage providing `circuit.json`.
    #[serde(default)]
    pub from: Option<String>,
    /// Circuit file used when `from` is absent.
    #[serde(default)]
    pub circuit: Option<PathBuf>,
    /// Input bins to propagate; the whole window interior otherwise.
    #[serde(default)]
    pub bins: Option<Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenboxSimParams {
    pub from: String,
    /// Probed bins; the target gate bins of the upstream stage otherwise.
    #[serde(default)]
    pub bins: Option<Vec<i64>>,
    #[serde(default = "default_phases")]
    pub phases: usize,
    #[serde(default)]
    pub noise: NoiseModel,
}

fn default_phases() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenboxFitParams {
    pub from: String,
    #[serde(default)]
    pub options: ReconstructOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountsKind {
    Qst,
    Qpt,
    Cnot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountsSimParams {
    pub kind: CountsKind,
    /// Stage providing the device matrix.
    #[serde(default)]
    pub from: Option<String>,
    /// Shaper step of the calibrated tunable beamsplitter, used when `from` is absent.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Bins of the device matrix; the upstream target bins otherwise.
    #[serde(default)]
    pub bins: Option<Vec<i64>>,
    /// Photons per second entering the device (state and process tomography).
    #[serde(default = "default_flux")]
    pub flux: f64,
    /// Seconds per setting; 1 for tomography and 600 for the truth table by default.
    #[serde(default)]
    pub integration: Option<f64>,
    #[serde(default = "default_efficiency")]
    pub efficiency: f64,
    /// Dark counts per second.
    #[serde(default = "default_dark_rate")]
    pub dark_rate: f64,
}

fn default_flux() -> f64 {
    1e6
}

fn default_efficiency() -> f64 {
    0.9
}

fn default_dark_rate() -> f64 {
    500.0
}

impl CountsSimParams {
    pub fn new(kind: CountsKind) -> Self {
        Self {
            kind,
            from: None,
            alpha: None,
            bins: None,
            flux: default_flux(),
            integration: None,
            efficiency: default_efficiency(),
            dark_rate: default_dark_rate(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferParams {
    /// Counts stage; its record kind selects the model.
    #[serde(default)]
    pub from: String,
    /// `slice` or `pcn`; the model default otherwise.
    #[serde(default)]
    pub sampler: Option<String>,
    #[serde(default)]
    pub steps: Option<usize>,
    /// Also write the thinned samples as JSON lines.
    #[serde(default)]
    pub samples: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportParams {
    /// Stages to tabulate; every earlier stage with a fidelity otherwise.
    #[serde(default)]
    pub from: Vec<String>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_text(path)?).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Checks stage names and that every `from` names an earlier stage of a compatible kind.
    pub fn validate(&self) -> Result<()> {
        let mut kinds: BTreeMap<&str, &str> = BTreeMap::new();
        for (i, stage) in self.stages.iter().enumerate() {
            let at = format!("stages[{i}]");
            let valid_name = !stage.name.is_empty()
                && stage.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
            if !valid_name {
                return Err(CliError::Config(format!(
                    "{at}.name `{}` must be non-empty ASCII letters, digits, `-` or `_`",
                    stage.name
                )));
            }
            if kinds.contains_key(stage.name.as_str()) {
                return Err(CliError::Config(format!("{at}.name `{}` is used twice", stage.name)));
            }
            for input in stage.op.inputs() {
                match kinds.get(input) {
                    None => {
                        return Err(CliError::Config(format!(
                            "{at}.{}.from `{input}` does not name an earlier stage",
                            stage.op.kind()
                        )))
                    }
                    Some(kind) if !stage.op.accepted_inputs().contains(kind) => {
                        return Err(CliError::Config(format!(
                            "{at}.{}.from `{input}` is a {kind} stage; expected one of {:?}",
                            stage.op.kind(),
                            stage.op.accepted_inputs()
                        )))
                    }
                    Some(_) => {}
                }
            }
            match &stage.op {
                StageOp::Compose(p) if p.from.is_none() == p.circuit.is_none() => {
                    return Err(CliError::Config(format!("{at}.compose needs exactly one of `from` and `circuit`")))
                }
                StageOp::CountsSim(p) if p.from.is_none() == p.alpha.is_none() => {
                    return Err(CliError::Config(format!("{at}.counts-sim needs exactly one of `from` and `alpha`")))
                }
                _ => {}
            }
            kinds.insert(&stage.name, stage.op.kind());
        }
        Ok(())
    }
}
