use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use qfp_core::circuit::{ModeMatrix, QfpCircuit};
use qfp_core::counts::CountRecord;
use qfp_core::io::to_canonical_json;
use qfp_core::openbox::{FringeScan, ReconstructedMultiport, SpectrumMeasurement};
use qfp_core::rng::derive_seed;
use qfp_core::transfer::TargetGate;
use qfp_core::CMatrix;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Stage, StageOp};
use crate::error::{CliError, Result};
use crate::files::{create_dir, read_json, sha256_file, sha256_hex, write_json};
use crate::ops::{self, InferenceTarget, StageOutput, StageSummary};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// SHA-256 of the canonical JSON form of the effective configuration,
    /// excluding the output directory.
    pub config_hash: String,
    pub artifact_version: String,
    pub seed: u64,
    /// False when a stage failed; the stages listed are those that finished.
    pub complete: bool,
    #[serde(default)]
    pub error: Option<String>,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub kind: String,
    pub seed: u64,
    /// Path relative to the run directory → SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileCheck {
    pub path: String,
    pub expected: String,
    pub actual: Option<String>,
    pub pass: bool,
}

pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let located = ExperimentConfig {
        output_dir: PathBuf::new(),
        ..config.clone()
    };
    let bytes = to_canonical_json(&located).map_err(|source| CliError::Json {
        path: PathBuf::from("<config>"),
        source,
    })?;
    Ok(sha256_hex(&bytes))
}

fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn digests(root: &Path, files: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    files.iter().map(|f| Ok((relative(root, f), sha256_file(f)?))).collect()
}

/// Reads `name` from a stage directory, recording it as an input.
struct Inputs {
    files: Vec<PathBuf>,
}

impl Inputs {
    fn json<T: serde::de::DeserializeOwned>(&mut self, dir: &Path, name: &str) -> Result<T> {
        let path = dir.join(name);
        let value = read_json(&path)?;
        self.files.push(path);
        Ok(value)
    }

    fn optional<T: serde::de::DeserializeOwned>(&mut self, dir: &Path, name: &str) -> Result<Option<T>> {
        if dir.join(name).is_file() {
            self.json(dir, name).map(Some)
        } else {
            Ok(None)
        }
    }

    fn device(&mut self, dir: &Path, bins: Option<&[i64]>) -> Result<(CMatrix, Option<TargetGate>)> {
        let target: Option<TargetGate> = self.optional(dir, ops::TARGET_FILE)?;
        if let Some(rec) = self.optional::<ReconstructedMultiport>(dir, ops::RECONSTRUCTION_FILE)? {
            return Ok((rec.entries, target));
        }
        let mm: ModeMatrix = self.json(dir, ops::MODE_MATRIX_FILE)?;
        let bins = resolve_bins(bins, target.as_ref())?;
        Ok((mm.block(&bins, &bins)?, target))
    }
}

fn resolve_bins(bins: Option<&[i64]>, target: Option<&TargetGate>) -> Result<Vec<i64>> {
    bins.map(<[i64]>::to_vec)
        .or_else(|| target.map(|t| t.bins.clone()))
        .ok_or_else(|| CliError::Config("`bins` is required when the upstream stage has no target gate".into()))
}

fn run_stage(
    stage: &Stage,
    seed: u64,
    root: &Path,
    summaries: &[StageSummary],
) -> Result<(Vec<PathBuf>, StageOutput)> {
    let dir = root.join(&stage.name);
    let mut inputs = Inputs { files: vec![] };
    let out = match &stage.op {
        StageOp::Synthesize(p) => {
            if let Some(t) = &p.template {
                inputs.files.push(t.clone());
            }
            ops::run_synthesize(p, seed, &dir, &stage.name)?
        }
        StageOp::Compose(p) => {
            let (circuit, target): (QfpCircuit, Option<TargetGate>) = match (&p.from, &p.circuit) {
                (Some(from), _) => {
                    let up = root.join(from);
                    (inputs.json(&up, ops::CIRCUIT_FILE)?, inputs.optional(&up, ops::TARGET_FILE)?)
                }
                (None, Some(path)) => {
                    inputs.files.push(path.clone());
                    (read_json(path)?, None)
                }
                (None, None) => return Err(CliError::Config("compose needs `from` or `circuit`".into())),
            };
            create_dir(&dir)?;
            let mut out = ops::run_compose(&circuit, p.bins.as_deref(), &dir.join(ops::MODE_MATRIX_FILE))?;
            if let Some(t) = target {
                let path = dir.join(ops::TARGET_FILE);
                write_json(&path, &t)?;
                out.files.push(path);
            }
            out
        }
        StageOp::OpenboxSim(p) => {
            let up = root.join(&p.from);
            let target: Option<TargetGate> = inputs.optional(&up, ops::TARGET_FILE)?;
            let mm: ModeMatrix = inputs.json(&up, ops::MODE_MATRIX_FILE)?;
            let bins = resolve_bins(p.bins.as_deref(), target.as_ref())?;
            ops::run_openbox_sim(&mm, &bins, p.phases, &p.noise, seed, target.as_ref(), &dir)?
        }
        StageOp::OpenboxFit(p) => {
            let up = root.join(&p.from);
            let spectra: Vec<SpectrumMeasurement> = inputs.json(&up, ops::SPECTRA_FILE)?;
            let scans: Vec<FringeScan> = inputs.json(&up, ops::SCANS_FILE)?;
            let target: Option<TargetGate> = inputs.optional(&up, ops::TARGET_FILE)?;
            ops::run_openbox_fit(&spectra, &scans, &p.options, target.as_ref(), &dir, &stage.name)?
        }
        StageOp::CountsSim(p) => {
            let w = match (&p.from, p.alpha) {
                (Some(from), _) => inputs.device(&root.join(from), p.bins.as_deref())?.0,
                (None, Some(alpha)) => ops::calibrated_tunable_bs(alpha)?,
                (None, None) => return Err(CliError::Config("counts-sim needs `from` or `alpha`".into())),
            };
            ops::run_counts_sim(&w, p, seed, &dir)?
        }
        StageOp::Infer(p) => {
            let up = root.join(&p.from);
            let record: CountRecord = inputs.json(&up, ops::COUNTS_FILE)?;
            let target = if let Some(rho) = inputs.optional(&up, ops::TARGET_STATE_FILE)? {
                InferenceTarget::State(rho)
            } else if let Some(choi) = inputs.optional(&up, ops::TARGET_CHOI_FILE)? {
                InferenceTarget::Process(choi)
            } else {
                InferenceTarget::resolve(record.kind, "cnot")?
            };
            ops::run_infer(&record, &target, p, seed, &dir, &stage.name)?
        }
        StageOp::Report(p) => {
            let chosen: Vec<StageSummary> = if p.from.is_empty() {
                summaries.to_vec()
            } else {
                p.from
                    .iter()
                    .map(|name| inputs.json(&root.join(name), ops::SUMMARY_FILE))
                    .collect::<Result<_>>()?
            };
            let (out, text) = ops::run_report(&chosen, &dir)?;
            print!("{text}");
            out
        }
    };
    Ok((inputs.files, out))
}

fn write_manifest(root: &Path, manifest: &RunManifest) -> Result<()> {
    write_json(&root.join(MANIFEST_FILE), manifest)
}

/// Runs every stage in order, writing `manifest.json` after each one so a
/// failure leaves a partial manifest behind.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<RunManifest> {
    config.validate()?;
    let root = create_dir(&config.output_dir)?;
    let mut manifest = RunManifest {
        config_hash: config_hash(config)?,
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        complete: false,
        error: None,
        stages: vec![],
    };
    let mut summaries: Vec<StageSummary> = vec![];
    for stage in &config.stages {
        log::info!("stage {} ({})", stage.name, stage.op.kind());
        let seed = derive_seed(config.seed, &stage.name);
        let start = Instant::now();
        let outcome = run_stage(stage, seed, &root, &summaries).and_then(|(inputs, out)| {
            let seconds = start.elapsed().as_secs_f64();
            manifest.stages.push(StageRecord {
                name: stage.name.clone(),
                kind: stage.op.kind().to_string(),
                seed,
                inputs: digests(&root, &inputs)?,
                outputs: digests(&root, &out.files)?,
                seconds,
            });
            if let Some(cap) = config.tolerances.max_stage_seconds.filter(|&cap| seconds > cap) {
                return Err(CliError::Resource(format!("took {seconds:.1} s, cap {cap} s")));
            }
            if let Some(s) = out.summary {
                if let Some(min) = config.tolerances.min_fidelity.filter(|&m| s.fidelity < m) {
                    return Err(CliError::Tolerance(format!("fidelity {:.6} below {min}", s.fidelity)));
                }
                summaries.push(s);
            }
            Ok(())
        });
        if let Err(e) = outcome {
            let e = e.in_stage(&stage.name);
            manifest.error = Some(e.to_string());
            write_manifest(&root, &manifest)?;
            return Err(e);
        }
        write_manifest(&root, &manifest)?;
    }
    manifest.complete = true;
    write_manifest(&root, &manifest)?;
    Ok(manifest)
}

/// Recomputes every recorded digest under `dir`; missing files fail.
pub fn verify_manifest(manifest: &RunManifest, dir: &Path) -> Vec<FileCheck> {
    let mut expected: BTreeMap<&str, &str> = BTreeMap::new();
    for stage in &manifest.stages {
        for (path, digest) in stage.outputs.iter().chain(&stage.inputs) {
            expected.insert(path, digest);
        }
    }
    expected
        .into_iter()
        .map(|(path, digest)| {
            let full = if Path::new(path).is_absolute() {
                PathBuf::from(path)
            } else {
                dir.join(path)
            };
            let actual = sha256_file(&full).ok();
            FileCheck {
                path: path.to_string(),
                expected: digest.to_string(),
                pass: actual.as_deref() == Some(digest),
                actual,
            }
        })
        .collect()
}
