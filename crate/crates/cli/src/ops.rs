//! Stage operations shared by the subcommands and the pipeline runner.
//!
//! Each operation reads explicit inputs, writes its artifacts into one
//! directory and returns the written paths.

use std::path::{Path, PathBuf};

use qfp_core::bayes::{cnot_infer, qpt_infer, qst_infer, InferenceOptions, InferenceReport, SamplerKind};
use qfp_core::channel::{channel_from_mode_matrix, ChoiMatrix, DensityMatrix, KrausSet};
use qfp_core::circuit::{compose_auto, ComposeOptions, ModeMatrix, QfpCircuit};
use qfp_core::counts::{
    simulate_cnot_truth_table, simulate_qpt_counts, simulate_qst_counts, CountRecord, DetectorModel,
    MeasurementSetting, PairSourceModel, RecordKind, DEFAULT_FRAME,
};
use qfp_core::io::{to_canonical_json, ComplexMatrixJson};
use qfp_core::openbox::{
    phase_grid, reconstruct_multiport, simulate_characterization, FringeScan, Multiport, NoiseModel,
    ReconstructOptions, ReconstructedMultiport, SpectrumMeasurement,
};
use qfp_core::rng::substream;
use qfp_core::synthesis::{calibrate_tunable_bs, synthesize, CircuitTemplate, SynthesisOptions, SynthesisResult};
use qfp_core::transfer::{target_gate, tunable_bs_w, GateSpec, TargetGate};
use qfp_core::{CMatrix, QfpError};
use serde::{Deserialize, Serialize};

use crate::config::{CountsKind, CountsSimParams, InferParams, SynthesizeParams};
use crate::error::{CliError, Result};
use crate::files::{create_dir, read_json, read_text, write_bytes, write_json};

pub const RESULT_FILE: &str = "result.json";
pub const CIRCUIT_FILE: &str = "circuit.json";
pub const TARGET_FILE: &str = "target.json";
pub const MODE_MATRIX_FILE: &str = "mode_matrix.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SPECTRA_FILE: &str = "spectra.json";
pub const SCANS_FILE: &str = "scans.json";
pub const MULTIPORT_FILE: &str = "multiport.json";
pub const RECONSTRUCTION_FILE: &str = "reconstruction.json";
pub const COUNTS_FILE: &str = "counts.json";
pub const COUNTS_CSV_FILE: &str = "counts.csv";
pub const TARGET_STATE_FILE: &str = "target_state.json";
pub const TARGET_CHOI_FILE: &str = "target_choi.json";
pub const REPORT_FILE: &str = "report.json";
pub const SAMPLES_FILE: &str = "samples.jsonl";

/// Headline figures of a stage, tabulated by `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub kind: String,
    pub target: String,
    pub fidelity: f64,
    #[serde(default)]
    pub fidelity_std: Option<f64>,
    #[serde(default)]
    pub lower95: Option<f64>,
    #[serde(default)]
    pub upper95: Option<f64>,
    #[serde(default)]
    pub success: Option<f64>,
    #[serde(default)]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageOutput {
    pub files: Vec<PathBuf>,
    pub summary: Option<StageSummary>,
}

impl StageOutput {
    fn write<T: Serialize>(&mut self, dir: &Path, name: &str, value: &T) -> Result<()> {
        let path = dir.join(name);
        write_json(&path, value)?;
        self.files.push(path);
        Ok(())
    }

    fn write_text(&mut self, dir: &Path, name: &str, text: &str) -> Result<()> {
        let path = dir.join(name);
        write_bytes(&path, text.as_bytes())?;
        self.files.push(path);
        Ok(())
    }

    fn write_summary(&mut self, dir: &Path, summary: StageSummary) -> Result<()> {
        self.write(dir, SUMMARY_FILE, &summary)?;
        self.summary = Some(summary);
        Ok(())
    }
}

pub fn load_template(path: &Path) -> Result<CircuitTemplate> {
    let text = read_text(path)?;
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    } else {
        read_json(path)
    }
}

pub fn parse_gate(label: &str) -> Result<GateSpec> {
    label.parse::<GateSpec>().map_err(|e| CliError::Config(e.to_string()))
}

pub fn run_synthesize(p: &SynthesizeParams, seed: u64, dir: &Path, stage: &str) -> Result<StageOutput> {
    let spec = parse_gate(&p.target)?;
    let target = target_gate(spec)?;
    let template = match &p.template {
        Some(path) => load_template(path)?,
        None => CircuitTemplate::for_gate(spec),
    };
    let mut opts = SynthesisOptions {
        seed,
        success_floor: p.success_floor,
        ..SynthesisOptions::default()
    };
    if let Some(starts) = p.starts {
        opts.starts = starts;
    }
    if let Some(budget) = p.budget {
        opts.lbfgs.max_iterations = budget;
    }
    let result: SynthesisResult = synthesize(&template, &target, &opts)?;
    let mode_matrix = compose_auto(&result.circuit, None, ComposeOptions::default())?;
    create_dir(dir)?;
    let mut out = StageOutput::default();
    out.write(dir, RESULT_FILE, &result)?;
    out.write(dir, CIRCUIT_FILE, &result.circuit)?;
    out.write(dir, TARGET_FILE, &target)?;
    out.write(dir, MODE_MATRIX_FILE, &mode_matrix)?;
    out.write_summary(
        dir,
        StageSummary {
            stage: stage.into(),
            kind: "synthesize".into(),
            target: target.label.clone(),
            fidelity: result.fidelity,
            fidelity_std: None,
            lower95: None,
            upper95: None,
            success: Some(result.success),
            flags: vec![],
        },
    )?;
    Ok(out)
}

pub fn run_compose(circuit: &QfpCircuit, bins: Option<&[i64]>, out_file: &Path) -> Result<StageOutput> {
    let mode_matrix = compose_auto(circuit, bins, ComposeOptions::default())?;
    let mut out = StageOutput::default();
    write_json(out_file, &mode_matrix)?;
    out.files.push(out_file.to_path_buf());
    Ok(out)
}

pub fn run_openbox_sim(
    mode_matrix: &ModeMatrix,
    bins: &[i64],
    phases: usize,
    noise: &NoiseModel,
    seed: u64,
    target: Option<&TargetGate>,
    dir: &Path,
) -> Result<StageOutput> {
    let truth = Multiport::new(bins.to_vec(), bins.to_vec(), mode_matrix.block(bins, bins)?)?;
    let mut rng = substream(seed, "openbox", 0);
    let (spectra, scans) = simulate_characterization(&truth, &phase_grid(phases), noise, &mut rng)?;
    create_dir(dir)?;
    let mut out = StageOutput::default();
    out.write(dir, MULTIPORT_FILE, &truth)?;
    out.write(dir, SPECTRA_FILE, &spectra)?;
    out.write(dir, SCANS_FILE, &scans)?;
    for s in &spectra {
        out.write_text(dir, &format!("spectrum_{}.csv", s.input_bin), &s.to_csv())?;
    }
    for f in &scans {
        out.write_text(dir, &format!("scan_{}_{}.csv", f.probes.0, f.probes.1), &f.to_csv())?;
    }
    if let Some(t) = target {
        out.write(dir, TARGET_FILE, t)?;
    }
    Ok(out)
}

pub fn run_openbox_fit(
    spectra: &[SpectrumMeasurement],
    scans: &[FringeScan],
    opts: &ReconstructOptions,
    target: Option<&TargetGate>,
    dir: &Path,
    stage: &str,
) -> Result<StageOutput> {
    let rec: ReconstructedMultiport = reconstruct_multiport(spectra, scans, opts)?;
    create_dir(dir)?;
    let mut out = StageOutput::default();
    out.write(dir, RECONSTRUCTION_FILE, &rec)?;
    if let Some(t) = target {
        out.write(dir, TARGET_FILE, t)?;
        if rec.out_bins == t.bins && rec.in_bins == t.bins {
            let metrics = t.gauge_optimized_metrics(&rec.entries)?;
            let undefined = rec.undefined_phase.iter().flatten().filter(|&&u| u).count();
            let flags = if undefined > 0 {
                vec![format!("{undefined} entries with undefined phase")]
            } else {
                vec![]
            };
            out.write_summary(
                dir,
                StageSummary {
                    stage: stage.into(),
                    kind: "openbox-fit".into(),
                    target: t.label.clone(),
                    fidelity: metrics.fidelity,
                    fidelity_std: None,
                    lower95: None,
                    upper95: None,
                    success: Some(metrics.success),
                    flags,
                },
            )?;
        }
    }
    Ok(out)
}

/// Device matrix of the calibrated tunable beamsplitter at shaper step `alpha`.
pub fn calibrated_tunable_bs(alpha: f64) -> Result<CMatrix> {
    Ok(tunable_bs_w(alpha, calibrate_tunable_bs(0.5)?))
}

fn tomography_detector(p: &CountsSimParams) -> Result<DetectorModel> {
    let integration = p.integration.unwrap_or(1.0);
    Ok(DetectorModel::new(
        p.efficiency,
        p.dark_rate * DEFAULT_FRAME,
        DEFAULT_FRAME,
        integration,
    )?)
}

/// Simulates counts for the device `w`. Tomography uses the first column of
/// `w` as the prepared state (state tomography) or `w` as the process; the
/// truth table uses the typical pair source.
pub fn run_counts_sim(w: &CMatrix, p: &CountsSimParams, seed: u64, dir: &Path) -> Result<StageOutput> {
    let mut out = StageOutput::default();
    let record: CountRecord = match p.kind {
        CountsKind::Qst => {
            if w.nrows() != 2 {
                return Err(QfpError::Dimension(format!("state tomography needs a 2×2 device, got {}×{}", w.nrows(), w.ncols())).into());
            }
            let psi = [w[(0, 0)], w[(1, 0)]];
            let kept = psi[0].norm_sqr() + psi[1].norm_sqr();
            let target = DensityMatrix::pure(&psi)?;
            let record = simulate_qst_counts(
                &target,
                &MeasurementSetting::standard_set(),
                p.flux * kept,
                &tomography_detector(p)?,
                seed,
            )?;
            create_dir(dir)?;
            out.write(dir, TARGET_STATE_FILE, &target)?;
            record
        }
        CountsKind::Qpt => {
            let target = channel_from_mode_matrix(w)?.choi()?;
            let record = simulate_qpt_counts(
                &KrausSet::new(vec![w.clone()])?,
                &MeasurementSetting::standard_set(),
                p.flux,
                &tomography_detector(p)?,
                seed,
            )?;
            create_dir(dir)?;
            out.write(dir, TARGET_CHOI_FILE, &target)?;
            record
        }
        CountsKind::Cnot => {
            let integration = p.integration.unwrap_or(600.0);
            let record = simulate_cnot_truth_table(w, &PairSourceModel::typical(integration), integration, seed)?;
            create_dir(dir)?;
            record
        }
    };
    out.write(dir, COUNTS_FILE, &record)?;
    out.write_text(dir, COUNTS_CSV_FILE, &record.to_csv())?;
    Ok(out)
}

/// Reference object of an inference run.
#[derive(Debug, Clone, PartialEq)]
pub enum InferenceTarget {
    State(DensityMatrix),
    Process(ChoiMatrix),
    Cnot,
}

impl InferenceTarget {
    /// Reads a target file, or builds the target from a gate label.
    pub fn resolve(kind: RecordKind, spec: &str) -> Result<Self> {
        if kind == RecordKind::CnotTruthTable {
            return match spec.trim().to_ascii_lowercase().as_str() {
                "" | "cnot" => Ok(Self::Cnot),
                other => Err(CliError::Config(format!("the truth-table model only supports the cnot target, got `{other}`"))),
            };
        }
        let path = Path::new(spec);
        if path.is_file() {
            return Ok(match kind {
                RecordKind::StateTomography => Self::State(read_json(path)?),
                _ => Self::Process(read_json(path)?),
            });
        }
        let w = target_gate(parse_gate(spec)?)?.entries;
        Ok(match kind {
            RecordKind::StateTomography => Self::State(DensityMatrix::pure(&[w[(0, 0)], w[(1, 0)]])?),
            _ => Self::Process(channel_from_mode_matrix(&w)?.choi()?),
        })
    }
}

pub fn inference_options(kind: RecordKind, p: &InferParams, seed: u64) -> Result<InferenceOptions> {
    let mut opts = match kind {
        RecordKind::StateTomography => InferenceOptions::qst(seed),
        RecordKind::ProcessTomography => InferenceOptions::qpt(seed),
        RecordKind::CnotTruthTable => InferenceOptions::cnot(seed),
    };
    if let Some(s) = &p.sampler {
        opts.sampler = s.parse::<SamplerKind>().map_err(|e| CliError::Config(e.to_string()))?;
    }
    if let Some(steps) = p.steps {
        opts.chain.steps = steps;
    }
    Ok(opts)
}

fn jsonl<T, F: Fn(&T) -> serde_json::Value>(items: &[T], f: F) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    for item in items {
        bytes.extend(to_canonical_json(&f(item)).map_err(|source| CliError::Json {
            path: PathBuf::from(SAMPLES_FILE),
            source,
        })?);
    }
    Ok(bytes)
}

pub fn run_infer(
    record: &CountRecord,
    target: &InferenceTarget,
    p: &InferParams,
    seed: u64,
    dir: &Path,
    stage: &str,
) -> Result<StageOutput> {
    let opts = inference_options(record.kind, p, seed)?;
    let (report, samples): (InferenceReport, Vec<u8>) = match target {
        InferenceTarget::State(rho) => {
            let post = qst_infer(record, rho, &opts)?;
            let s = if p.samples {
                jsonl(&post.samples, |r| serde_json::json!({ "rho": ComplexMatrixJson::from(r.matrix()) }))?
            } else {
                vec![]
            };
            (post.report, s)
        }
        InferenceTarget::Process(choi) => {
            let post = qpt_infer(record, choi, &opts)?;
            let s = if p.samples {
                jsonl(&post.samples, |c| serde_json::json!({ "choi": ComplexMatrixJson::from(&c.matrix) }))?
            } else {
                vec![]
            };
            (post.report, s)
        }
        InferenceTarget::Cnot => {
            let post = cnot_infer(record, &opts)?;
            let s = if p.samples {
                jsonl(&post.samples, |c| {
                    serde_json::json!({
                        "mode_matrix": ComplexMatrixJson::from(&c.mode_matrix),
                        "mu": c.mu,
                        "eta_a": c.eta_a,
                        "eta_b": c.eta_b,
                        "fidelity": c.metrics.fidelity,
                        "success": c.metrics.success,
                    })
                })?
            } else {
                vec![]
            };
            (post.report, s)
        }
    };
    create_dir(dir)?;
    let mut out = StageOutput::default();
    out.write(dir, REPORT_FILE, &report)?;
    if p.samples {
        let path = dir.join(SAMPLES_FILE);
        write_bytes(&path, &samples)?;
        out.files.push(path);
    }
    let mut flags = report.flags.clone();
    flags.extend(report.diagnostics.flags.iter().cloned());
    out.write_summary(
        dir,
        StageSummary {
            stage: stage.into(),
            kind: report.model.clone(),
            target: report.target.clone(),
            fidelity: report.fidelity.mean,
            fidelity_std: Some(report.fidelity.std),
            lower95: Some(report.fidelity.lower95),
            upper95: Some(report.fidelity.upper95),
            success: report.success.map(|s| s.mean),
            flags,
        },
    )?;
    Ok(out)
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v:.6}"))
}

/// Plain-text table and CSV of the given summaries.
pub fn render_report(summaries: &[StageSummary]) -> (String, String) {
    let mut text = format!(
        "{:<16} {:<12} {:<24} {:>10} {:>10} {:>21} {:>10}\n",
        "stage", "kind", "target", "fidelity", "std", "95% interval", "success"
    );
    let mut csv = String::from("stage,kind,target,fidelity,fidelity_std,lower95,upper95,success,flags\n");
    for s in summaries {
        let interval = match (s.lower95, s.upper95) {
            (Some(lo), Some(hi)) => format!("[{lo:.5}, {hi:.5}]"),
            _ => String::new(),
        };
        text.push_str(&format!(
            "{:<16} {:<12} {:<24} {:>10.6} {:>10} {:>21} {:>10}\n",
            s.stage,
            s.kind,
            s.target,
            s.fidelity,
            s.fidelity_std.map_or_else(String::new, |v| format!("{v:.6}")),
            interval,
            s.success.map_or_else(String::new, |v| format!("{v:.5}")),
        ));
        for flag in &s.flags {
            text.push_str(&format!("  note: {flag}\n"));
        }
        csv.push_str(&format!(
            "{},{},\"{}\",{:.10},{},{},{},{},\"{}\"\n",
            s.stage,
            s.kind,
            s.target,
            s.fidelity,
            opt(s.fidelity_std),
            opt(s.lower95),
            opt(s.upper95),
            opt(s.success),
            s.flags.join("; ").replace('"', "'"),
        ));
    }
    (text, csv)
}

pub fn run_report(summaries: &[StageSummary], dir: &Path) -> Result<(StageOutput, String)> {
    let (text, csv) = render_report(summaries);
    create_dir(dir)?;
    let mut out = StageOutput::default();
    out.write_text(dir, "summary.txt", &text)?;
    out.write_text(dir, "summary.csv", &csv)?;
    Ok((out, text))
}
