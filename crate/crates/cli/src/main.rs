use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use qfp_cli::config::{CountsKind, CountsSimParams, InferParams, SynthesizeParams};
use qfp_cli::error::{CliError, Result};
use qfp_cli::files::read_json;
use qfp_cli::ops::{self, InferenceTarget, StageSummary};
use qfp_cli::pipeline::{run_pipeline, verify_manifest, RunManifest, MANIFEST_FILE};
use qfp_cli::ExperimentConfig;
use qfp_core::circuit::{ModeMatrix, QfpCircuit};
use qfp_core::counts::{CountRecord, RecordKind};
use qfp_core::openbox::{NoiseModel, ReconstructOptions};
use qfp_core::transfer::{target_gate, TargetGate};

#[derive(Parser)]
#[command(name = "qfp", version, about = "Quantum frequency processor simulation, synthesis and characterization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Qst,
    Qpt,
    Cnot,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize circuit parameters for a target gate.
    Synthesize {
        /// Gate label: hadamard, tritter, cnot, dft(d), identity(d).
        #[arg(long)]
        target: String,
        /// Circuit template file (JSON or TOML).
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        starts: Option<usize>,
        /// Iteration budget per start.
        #[arg(long)]
        budget: Option<usize>,
        /// Output directory for result, circuit, target and mode-matrix files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compose a circuit file into a mode matrix.
    Compose {
        #[arg(long)]
        circuit: PathBuf,
        /// Comma-separated input bins; the window interior by default.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        bins: Option<Vec<i64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate open-box spectra and fringe scans of a mode matrix.
    OpenboxSim {
        #[arg(long)]
        mode_matrix: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        bins: Vec<i64>,
        #[arg(long, default_value_t = 32)]
        phases: usize,
        /// Relative power noise per measured point.
        #[arg(long, default_value_t = 0.0)]
        relative_noise: f64,
        /// Gate label whose target is carried along for the fit.
        #[arg(long)]
        target: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a multiport from an openbox-sim directory.
    OpenboxFit {
        #[arg(long)]
        input: PathBuf,
        /// Reconstruction options file (JSON).
        #[arg(long)]
        options: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate tomography or truth-table counts.
    CountsSim {
        #[arg(long, value_enum)]
        kind: Kind,
        /// Mode matrix file of the device; use `--alpha` for the calibrated tunable beamsplitter.
        #[arg(long)]
        mode_matrix: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        bins: Option<Vec<i64>>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 1e6)]
        flux: f64,
        #[arg(long)]
        integration: Option<f64>,
        #[arg(long, default_value_t = 0.9)]
        efficiency: f64,
        /// Dark counts per second.
        #[arg(long, default_value_t = 500.0)]
        dark_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bayesian state tomography.
    Qst(InferArgs),
    /// Bayesian process tomography.
    Qpt(InferArgs),
    /// Bayesian CNOT characterization from a coincidence truth table.
    CnotInfer(InferArgs),
    /// Tabulate fidelities of a run directory as text and CSV.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Recompute the digests recorded in a run manifest.
    Verify {
        #[arg(long)]
        manifest: PathBuf,
        /// Run directory; the manifest's directory by default.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Run a pipeline described by a TOML configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct InferArgs {
    #[arg(long)]
    counts: PathBuf,
    /// Target file written by counts-sim, or a gate label.
    #[arg(long, default_value = "")]
    target: String,
    /// slice or pcn.
    #[arg(long)]
    sampler: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the report, summary and optional samples.
    #[arg(long)]
    out: PathBuf,
    /// Also write the thinned samples as JSON lines.
    #[arg(long)]
    samples: bool,
}

fn infer(args: &InferArgs, expected: RecordKind) -> Result<()> {
    let record: CountRecord = read_json(&args.counts)?;
    if record.kind != expected {
        return Err(CliError::Config(format!(
            "{} holds {:?} data, expected {expected:?}",
            args.counts.display(),
            record.kind
        )));
    }
    if args.target.is_empty() && expected != RecordKind::CnotTruthTable {
        return Err(CliError::Config("--target is required".into()));
    }
    let target = InferenceTarget::resolve(record.kind, &args.target)?;
    let params = InferParams {
        from: String::new(),
        sampler: args.sampler.clone(),
        steps: args.steps,
        samples: args.samples,
    };
    let out = ops::run_infer(&record, &target, &params, args.seed, &args.out, "infer")?;
    print_summary(out.summary.as_ref());
    Ok(())
}

fn print_summary(summary: Option<&StageSummary>) {
    if let Some(s) = summary {
        print!("{}", ops::render_report(std::slice::from_ref(s)).0);
    }
}

fn collect_summaries(dir: &Path) -> Result<Vec<StageSummary>> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let names: Vec<String> = if manifest_path.is_file() {
        let manifest: RunManifest = read_json(&manifest_path)?;
        manifest.stages.into_iter().map(|s| s.name).collect()
    } else {
        let mut names: Vec<String> = std::fs::read_dir(dir)
            .map_err(|source| CliError::Io {
                path: dir.to_path_buf(),
                source,
            })?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        names
    };
    names
        .iter()
        .map(|n| dir.join(n).join(ops::SUMMARY_FILE))
        .filter(|p| p.is_file())
        .map(|p| read_json(&p))
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synthesize {
            target,
            template,
            seed,
            starts,
            budget,
            out,
        } => {
            let params = SynthesizeParams {
                target,
                template,
                starts,
                budget,
                success_floor: None,
            };
            let o = ops::run_synthesize(&params, seed, &out, "synthesize")?;
            print_summary(o.summary.as_ref());
        }
        Command::Compose { circuit, bins, out } => {
            let circuit: QfpCircuit = read_json(&circuit)?;
            ops::run_compose(&circuit, bins.as_deref(), &out)?;
        }
        Command::OpenboxSim {
            mode_matrix,
            bins,
            phases,
            relative_noise,
            target,
            seed,
            out,
        } => {
            let mm: ModeMatrix = read_json(&mode_matrix)?;
            let target: Option<TargetGate> = target.map(|t| Ok::<_, CliError>(target_gate(ops::parse_gate(&t)?)?)).transpose()?;
            ops::run_openbox_sim(&mm, &bins, phases, &NoiseModel::relative(relative_noise), seed, target.as_ref(), &out)?;
        }
        Command::OpenboxFit { input, options, out } => {
            let opts: ReconstructOptions = options.map(|p| read_json(&p)).transpose()?.unwrap_or_default();
            let target_path = input.join(ops::TARGET_FILE);
            let target: Option<TargetGate> = target_path.is_file().then(|| read_json(&target_path)).transpose()?;
            let o = ops::run_openbox_fit(
                &read_json::<Vec<_>>(&input.join(ops::SPECTRA_FILE))?,
                &read_json::<Vec<_>>(&input.join(ops::SCANS_FILE))?,
                &opts,
                target.as_ref(),
                &out,
                "openbox-fit",
            )?;
            print_summary(o.summary.as_ref());
        }
        Command::CountsSim {
            kind,
            mode_matrix,
            bins,
            alpha,
            flux,
            integration,
            efficiency,
            dark_rate,
            seed,
            out,
        } => {
            let kind = match kind {
                Kind::Qst => CountsKind::Qst,
                Kind::Qpt => CountsKind::Qpt,
                Kind::Cnot => CountsKind::Cnot,
            };
            let w = match (mode_matrix, alpha) {
                (Some(path), None) => {
                    let mm: ModeMatrix = read_json(&path)?;
                    let bins = bins.ok_or_else(|| CliError::Config("--bins is required with --mode-matrix".into()))?;
                    mm.block(&bins, &bins)?
                }
                (None, Some(alpha)) => ops::calibrated_tunable_bs(alpha)?,
                _ => return Err(CliError::Config("give exactly one of --mode-matrix and --alpha".into())),
            };
            let params = CountsSimParams {
                flux,
                integration,
                efficiency,
                dark_rate,
                ..CountsSimParams::new(kind)
            };
            ops::run_counts_sim(&w, &params, seed, &out)?;
        }
        Command::Qst(args) => infer(&args, RecordKind::StateTomography)?,
        Command::Qpt(args) => infer(&args, RecordKind::ProcessTomography)?,
        Command::CnotInfer(args) => infer(&args, RecordKind::CnotTruthTable)?,
        Command::Report { dir } => {
            let (_, text) = ops::run_report(&collect_summaries(&dir)?, &dir)?;
            print!("{text}");
        }
        Command::Verify { manifest, dir } => {
            let dir = dir.unwrap_or_else(|| manifest.parent().map(Path::to_path_buf).unwrap_or_default());
            let m: RunManifest = read_json(&manifest)?;
            let checks = verify_manifest(&m, &dir);
            for c in &checks {
                println!("{} {}", if c.pass { "PASS" } else { "FAIL" }, c.path);
            }
            let failed = checks.iter().filter(|c| !c.pass).count();
            if failed > 0 {
                return Err(CliError::Verification(failed));
            }
        }
        Command::Run {
            config,
            seed,
            output_dir,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(d) = output_dir {
                cfg.output_dir = d;
            }
            let manifest = run_pipeline(&cfg)?;
            println!(
                "{} stage(s) complete; manifest at {}",
                manifest.stages.len(),
                cfg.output_dir.join(MANIFEST_FILE).display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
