//! Bayesian inference: slice and preconditioned Crank–Nicolson samplers over
//! standard-normal latents, and the state, process and CNOT models built on
//! them.
//!
//! Every model maps a latent vector `z ~ N(0, I)` to a valid object:
//! `ρ = GG†/Tr(GG†)` for states, a Stiefel isometry split into four Kraus
//! operators for channels, and a contraction `G(I + G†G)^{-1/2}` with
//! log-normal pair and efficiency parameters for the CNOT multiport.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::channel::{
    chi_from_choi, choi_from_kraus, process_fidelity, state_fidelity, ChoiMatrix, DensityMatrix, KrausSet, ProcessMatrix,
};
use crate::counts::{click_probs_unchecked, logical_label, tomography_inputs, CountRecord, DetectorModel, MeasurementSetting, PauliAxis, RecordKind};
use crate::error::{QfpError, Result};
use crate::linalg::{c64, pd_inv_sqrt, trace, CMatrix};
use crate::optimize::{minimize, Bounds, LbfgsOptions};
use crate::rng::substream;
use crate::transfer::{target_gate, GateMetrics, GateSpec, TargetGate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Slice,
    Pcn,
}

impl std::str::FromStr for SamplerKind {
    type Err = QfpError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slice" => Ok(SamplerKind::Slice),
            "pcn" => Ok(SamplerKind::Pcn),
            _ => Err(QfpError::UnknownLabel(s.into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainOptions {
    pub steps: usize,
    pub burn_in_fraction: f64,
    /// Retained samples after thinning.
    pub samples: usize,
    /// Independent chains, each contributing `samples / chains` draws.
    pub chains: usize,
    /// Initial slice width per coordinate.
    pub slice_width: f64,
    pub max_step_out: usize,
    /// Initial pCN step `β`.
    pub pcn_beta: f64,
    /// Adapt slice widths or `β` during burn-in.
    pub adapt: bool,
    pub target_acceptance: f64,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self {
            steps: 20_000,
            burn_in_fraction: 0.25,
            samples: 1024,
            chains: 1,
            slice_width: 1.0,
            max_step_out: 32,
            pcn_beta: 0.2,
            adapt: true,
            target_acceptance: 0.25,
        }
    }
}

impl ChainOptions {
    fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.chains == 0 {
            return Err(QfpError::InvalidParameter("samples and chains must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(QfpError::InvalidParameter("burn-in fraction must lie in [0, 1)".into()));
        }
        if self.slice_width.is_nan() || self.slice_width <= 0.0 {
            return Err(QfpError::InvalidParameter("slice width must be positive".into()));
        }
        Ok(())
    }

    fn layout(&self, samples: usize) -> (usize, usize, usize) {
        let burn_in = (self.steps as f64 * self.burn_in_fraction).round() as usize;
        let post = self.steps.saturating_sub(burn_in).max(samples);
        let thin = (post / samples).max(1);
        (burn_in, thin, burn_in + thin * samples)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub sampler: SamplerKind,
    pub seed: u64,
    pub chains: usize,
    pub steps: usize,
    pub burn_in: usize,
    pub thinning: usize,
    /// Accepted proposals after burn-in; one for slice sampling.
    pub acceptance_rate: f64,
    /// Final pCN step.
    pub beta: Option<f64>,
    /// Largest integrated autocorrelation time over latent coordinates, in steps.
    pub autocorrelation_time: f64,
    pub effective_samples: f64,
    pub evaluations: usize,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub samples: Vec<Vec<f64>>,
    pub diagnostics: ChainDiagnostics,
}

fn standard_normal_log_density(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|v| v * v).sum::<f64>()
}

/// Integrated autocorrelation time with Sokal's automatic window (`c = 5`);
/// infinite for a constant series.
pub fn integrated_autocorrelation(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return f64::INFINITY;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex::new(z.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let c0 = buf[0].re;
    if c0.is_nan() || c0 <= 1e-300 * n as f64 {
        return f64::INFINITY;
    }
    let mut tau = 1.0;
    for (m, c) in buf.iter().enumerate().take(n).skip(1) {
        tau += 2.0 * c.re / c0;
        if m as f64 >= 5.0 * tau {
            return tau.max(1.0);
        }
    }
    n as f64
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0_f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = (n * m / (n + m)).sqrt();
    let lambda = (ne + 0.12 + 0.11 / ne) * d;
    if lambda < 0.3 {
        return (d, 1.0);
    }
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1.0_f64).powi(k - 1) * (-2.0 * (k as f64 * lambda).powi(2)).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}

fn finish_diagnostics(
    sampler: SamplerKind,
    seed: u64,
    post_trace: &[Vec<f64>],
    layout: (usize, usize, usize),
    acceptance_rate: f64,
    beta: Option<f64>,
    evaluations: usize,
) -> ChainDiagnostics {
    let (burn_in, thinning, steps) = layout;
    let dim = post_trace.first().map_or(0, |v| v.len());
    let tau = (0..dim)
        .map(|i| integrated_autocorrelation(&post_trace.iter().map(|z| z[i]).collect::<Vec<_>>()))
        .fold(0.0_f64, f64::max);
    let n_post = post_trace.len() as f64;
    let ess = if tau.is_finite() { n_post / tau } else { 0.0 };
    let mut flags = Vec::new();
    if ess < 50.0 {
        flags.push(format!(
            "slowest latent coordinate: autocorrelation time {tau:.3e} steps, effective sample size {ess:.1}"
        ));
    }
    ChainDiagnostics {
        sampler,
        seed,
        chains: 1,
        steps,
        burn_in,
        thinning,
        acceptance_rate,
        beta,
        autocorrelation_time: tau,
        effective_samples: ess,
        evaluations,
        flags,
    }
}

/// Coordinate-wise slice sampling with stepping out and shrinkage.
pub fn slice_sample(log_target: impl Fn(&[f64]) -> f64, z0: &[f64], n: usize, seed: u64, opts: &ChainOptions) -> Result<Chain> {
    opts.validate()?;
    let mut rng = substream(seed, "slice", 0);
    let mut x = z0.to_vec();
    let mut fx = log_target(&x);
    if !fx.is_finite() {
        return Err(QfpError::NonFinite("log target at the starting point".into()));
    }
    let d = x.len();
    let layout = opts.layout(n);
    let (burn_in, thin, steps) = layout;
    let mut widths = vec![opts.slice_width; d];
    let mut evals = 1;
    let mut samples = Vec::with_capacity(n);
    let mut post_trace = Vec::with_capacity(steps - burn_in);
    let mut warm: Vec<Vec<f64>> = Vec::new();
    for step in 0..steps {
        for i in 0..d {
            let e: f64 = rng.sample(Exp1);
            let y = fx - e;
            let w = widths[i];
            let x0 = x[i];
            let mut lo = x0 - w * rng.random::<f64>();
            let mut hi = lo + w;
            let mut j = (opts.max_step_out as f64 * rng.random::<f64>()).floor() as usize;
            let mut k = opts.max_step_out.saturating_sub(1).saturating_sub(j);
            let at = |v: f64, x: &mut Vec<f64>, evals: &mut usize| {
                x[i] = v;
                *evals += 1;
                log_target(x)
            };
            while j > 0 && at(lo, &mut x, &mut evals) > y {
                lo -= w;
                j -= 1;
            }
            while k > 0 && at(hi, &mut x, &mut evals) > y {
                hi += w;
                k -= 1;
            }
            loop {
                let cand = lo + (hi - lo) * rng.random::<f64>();
                let f1 = at(cand, &mut x, &mut evals);
                if f1 > y {
                    fx = f1;
                    break;
                }
                if cand < x0 {
                    lo = cand;
                } else {
                    hi = cand;
                }
                if hi - lo < 1e-14 * (1.0 + x0.abs()) {
                    x[i] = x0;
                    break;
                }
            }
        }
        if opts.adapt && step < burn_in {
            warm.push(x.clone());
            if step + 1 == burn_in / 2 && warm.len() > 10 {
                for (i, w) in widths.iter_mut().enumerate() {
                    let m = warm.iter().map(|z| z[i]).sum::<f64>() / warm.len() as f64;
                    let sd = (warm.iter().map(|z| (z[i] - m).powi(2)).sum::<f64>() / warm.len() as f64).sqrt();
                    if sd > 0.0 {
                        *w = (3.0 * sd).clamp(1e-8, 10.0 * opts.slice_width);
                    }
                }
                warm.clear();
            }
        }
        if step >= burn_in {
            post_trace.push(x.clone());
            if (step - burn_in + 1) % thin == 0 && samples.len() < n {
                samples.push(x.clone());
            }
        }
    }
    let diagnostics = finish_diagnostics(SamplerKind::Slice, seed, &post_trace, layout, 1.0, None, evals);
    Ok(Chain { samples, diagnostics })
}

/// pCN for a standard-normal prior: `z' = sqrt(1 − β²) z + β ξ`, accepted
/// with probability `min(1, exp(ΔlogL))`. With `adapt`, `β` is tuned in
/// batches of 50 burn-in steps toward the target acceptance and then frozen.
pub fn pcn_sample(log_likelihood: impl Fn(&[f64]) -> f64, z0: &[f64], n: usize, seed: u64, opts: &ChainOptions) -> Result<Chain> {
    opts.validate()?;
    if !(opts.pcn_beta > 0.0 && opts.pcn_beta <= 1.0) {
        return Err(QfpError::InvalidParameter(format!("pCN step {} outside (0, 1]", opts.pcn_beta)));
    }
    let mut rng = substream(seed, "pcn", 0);
    let mut z = z0.to_vec();
    let mut lz = log_likelihood(&z);
    if !lz.is_finite() {
        return Err(QfpError::NonFinite("log likelihood at the starting point".into()));
    }
    let layout = opts.layout(n);
    let (burn_in, thin, steps) = layout;
    let mut beta = opts.pcn_beta;
    let (mut batch_acc, mut post_acc) = (0usize, 0usize);
    let mut samples = Vec::with_capacity(n);
    let mut post_trace = Vec::with_capacity(steps - burn_in);
    let mut evals = 1;
    for step in 0..steps {
        let keep = (1.0 - beta * beta).sqrt();
        let prop: Vec<f64> = z.iter().map(|v| keep * v + beta * rng.sample::<f64, _>(StandardNormal)).collect();
        let lp = log_likelihood(&prop);
        evals += 1;
        let accept = lp.is_finite() && (lp >= lz || rng.random::<f64>().ln() < lp - lz);
        if accept {
            z = prop;
            lz = lp;
        }
        if step < burn_in {
            batch_acc += accept as usize;
            if opts.adapt && (step + 1) % 50 == 0 {
                let rate = batch_acc as f64 / 50.0;
                beta = (beta * (1.5 * (rate - opts.target_acceptance)).exp()).clamp(1e-6, 1.0);
                batch_acc = 0;
            }
        } else {
            post_acc += accept as usize;
            post_trace.push(z.clone());
            if (step - burn_in + 1) % thin == 0 && samples.len() < n {
                samples.push(z.clone());
            }
        }
    }
    let rate = post_acc as f64 / (steps - burn_in).max(1) as f64;
    let diagnostics = finish_diagnostics(SamplerKind::Pcn, seed, &post_trace, layout, rate, Some(beta), evals);
    Ok(Chain { samples, diagnostics })
}

/// Runs `opts.chains` independent chains in parallel on substreams of
/// `seed` and concatenates their samples.
pub fn sample_posterior(
    sampler: SamplerKind,
    log_likelihood: &(dyn Fn(&[f64]) -> f64 + Sync),
    z0: &[f64],
    seed: u64,
    opts: &ChainOptions,
) -> Result<Chain> {
    opts.validate()?;
    let per_chain = opts.samples.div_ceil(opts.chains);
    let chains: Vec<Chain> = (0..opts.chains)
        .into_par_iter()
        .map(|c| {
            let chain_seed = crate::rng::derive_seed(seed, &format!("chain{c}"));
            match sampler {
                SamplerKind::Slice => slice_sample(|z| log_likelihood(z) + standard_normal_log_density(z), z0, per_chain, chain_seed, opts),
                SamplerKind::Pcn => pcn_sample(log_likelihood, z0, per_chain, chain_seed, opts),
            }
        })
        .collect::<Result<_>>()?;
    let mut diag = chains[0].diagnostics.clone();
    diag.seed = seed;
    diag.chains = opts.chains;
    diag.acceptance_rate = chains.iter().map(|c| c.diagnostics.acceptance_rate).sum::<f64>() / opts.chains as f64;
    diag.autocorrelation_time = chains.iter().map(|c| c.diagnostics.autocorrelation_time).fold(0.0, f64::max);
    diag.effective_samples = chains.iter().map(|c| c.diagnostics.effective_samples).sum();
    diag.evaluations = chains.iter().map(|c| c.diagnostics.evaluations).sum();
    diag.flags = chains
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.diagnostics.flags.iter().map(move |f| format!("chain {i}: {f}")))
        .collect();
    let mut samples: Vec<Vec<f64>> = chains.into_iter().flat_map(|c| c.samples).collect();
    samples.truncate(opts.samples);
    Ok(Chain { samples, diagnostics: diag })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    /// Central 95% credible interval.
    pub lower95: f64,
    pub upper95: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q = |p: f64| {
            if sorted.is_empty() {
                return f64::NAN;
            }
            let pos = p * (sorted.len() - 1) as f64;
            let (i, f) = (pos.floor() as usize, pos.fract());
            sorted[i] * (1.0 - f) + sorted[(i + 1).min(sorted.len() - 1)] * f
        };
        Self {
            mean,
            std: var.sqrt(),
            median: q(0.5),
            lower95: q(0.025),
            upper95: q(0.975),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.lower95..=self.upper95).contains(&x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodKind {
    /// Independent Poisson counts with the recorded flux and detector.
    Poisson,
    /// Binomial split within each measurement axis, conditional on its total.
    Binomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceOptions {
    pub sampler: SamplerKind,
    pub likelihood: LikelihoodKind,
    pub chain: ChainOptions,
    pub seed: u64,
    /// Start chains from a posterior mode found by quasi-Newton search.
    pub map_init: bool,
    pub map_starts: usize,
}

impl InferenceOptions {
    pub fn qst(seed: u64) -> Self {
        Self {
            sampler: SamplerKind::Pcn,
            likelihood: LikelihoodKind::Poisson,
            chain: ChainOptions::default(),
            seed,
            map_init: true,
            map_starts: 4,
        }
    }

    pub fn qpt(seed: u64) -> Self {
        Self {
            likelihood: LikelihoodKind::Binomial,
            ..Self::qst(seed)
        }
    }

    pub fn cnot(seed: u64) -> Self {
        Self {
            sampler: SamplerKind::Slice,
            likelihood: LikelihoodKind::Poisson,
            chain: ChainOptions::default(),
            seed,
            map_init: true,
            map_starts: 8,
        }
    }
}

/// Effective sample size of a thinned derived-quantity trace.
fn trace_effective_samples(trace: &[f64]) -> f64 {
    let tau = integrated_autocorrelation(trace);
    if tau.is_finite() {
        trace.len() as f64 / tau
    } else {
        0.0
    }
}

fn fidelity_flags(fids: &[f64], flags: &mut Vec<String>) -> f64 {
    let ess = trace_effective_samples(fids);
    if ess < 50.0 {
        flags.push(format!("fidelity draws mix slowly: effective sample size {ess:.1}"));
    }
    ess
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub model: String,
    pub target: String,
    pub fidelity: Summary,
    /// Effective number of independent draws among the fidelity samples.
    #[serde(default)]
    pub fidelity_effective_samples: f64,
    /// Fidelity of the posterior-mean object.
    pub fidelity_of_mean: f64,
    #[serde(default)]
    pub success: Option<Summary>,
    #[serde(default, with = "opt_matrix")]
    pub mean_state: Option<CMatrix>,
    #[serde(default)]
    pub mean_choi: Option<ChoiMatrix>,
    #[serde(default)]
    pub mean_chi: Option<ProcessMatrix>,
    #[serde(default, with = "opt_matrix")]
    pub mean_mode_matrix: Option<CMatrix>,
    /// Posterior summaries of scalar model parameters (pair probability, efficiencies).
    #[serde(default)]
    pub parameters: BTreeMap<String, Summary>,
    pub samples: usize,
    pub diagnostics: ChainDiagnostics,
    /// Model-level warnings such as non-identifiability.
    pub flags: Vec<String>,
}

mod opt_matrix {
    use super::*;
    use crate::io::ComplexMatrixJson;
    use serde::{de::Error, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<CMatrix>, s: S) -> std::result::Result<S::Ok, S::Error> {
        m.as_ref().map(ComplexMatrixJson::from).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<CMatrix>, D::Error> {
        match Option::<ComplexMatrixJson>::deserialize(d)? {
            None => Ok(None),
            Some(j) => j.to_matrix().map(Some).ok_or_else(|| D::Error::custom("bad matrix shape")),
        }
    }
}

/// A report together with the thinned posterior samples it summarizes.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior<T> {
    pub report: InferenceReport,
    pub samples: Vec<T>,
}

fn latent_matrix(z: &[f64], rows: usize, cols: usize) -> CMatrix {
    DMatrix::from_fn(rows, cols, |r, c| {
        let k = 2 * (r * cols + c);
        c64(z[k], z[k + 1])
    })
}

/// `ρ = GG†/Tr(GG†)` with `G` the 2×2 complex matrix of the eight latents.
pub fn latent_to_state(z: &[f64]) -> CMatrix {
    let g = latent_matrix(z, 2, 2);
    let m = &g * g.adjoint();
    let tr = trace(&m).re;
    (&m + m.adjoint()) * c64(0.5 / tr, 0.0)
}

/// Isometry `Q = G (G†G)^{-1/2}` from an 8×2 Ginibre matrix, split into
/// four 2×2 Kraus operators.
pub fn latent_to_channel(z: &[f64]) -> Result<KrausSet> {
    let g = latent_matrix(z, 8, 2);
    let q = &g * pd_inv_sqrt(&(g.adjoint() * &g))?;
    KrausSet::new((0..4).map(|k| q.rows(2 * k, 2).into_owned()).collect())
}

/// Contraction `G (I + G†G)^{-1/2}` from a 4×4 complex latent matrix.
pub fn latent_to_contraction(z: &[f64]) -> Result<CMatrix> {
    let g = latent_matrix(z, 4, 4);
    let m = DMatrix::identity(4, 4) + g.adjoint() * &g;
    Ok(&g * pd_inv_sqrt(&m)?)
}

fn map_start(
    log_posterior: &(dyn Fn(&[f64]) -> f64 + Sync),
    dim: usize,
    starts: usize,
    seed: u64,
) -> Vec<f64> {
    let bounds = Bounds {
        lower: vec![-50.0; dim],
        upper: vec![50.0; dim],
        periodic: vec![false; dim],
    };
    let opts = LbfgsOptions {
        max_iterations: 2000,
        gradient_tolerance: 1e-6,
        value_tolerance: 1e-10,
        ..Default::default()
    };
    (0..starts.max(1))
        .into_par_iter()
        .map(|s| {
            let mut rng = substream(seed, "map", s as u64);
            let x0: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let objective = |x: &[f64]| {
                let v = -log_posterior(x);
                if v.is_finite() {
                    v
                } else {
                    f64::MAX / 4.0
                }
            };
            minimize(objective, &x0, &bounds, &opts)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .map(|m| m.x)
        .expect("at least one start")
}

fn initial_point(
    log_likelihood: &(dyn Fn(&[f64]) -> f64 + Sync),
    dim: usize,
    opts: &InferenceOptions,
    informative: bool,
) -> Vec<f64> {
    if opts.map_init && informative {
        let post = |z: &[f64]| log_likelihood(z) + standard_normal_log_density(z);
        map_start(&post, dim, opts.map_starts, opts.seed)
    } else {
        let mut rng = substream(opts.seed, "init", 0);
        (0..dim).map(|_| rng.sample(StandardNormal)).collect()
    }
}

fn poisson_log(n: u64, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    n as f64 * lambda.ln() - lambda
}

fn binomial_log(n0: u64, n1: u64, p: f64) -> f64 {
    let p = p.clamp(1e-300, 1.0 - 1e-16);
    n0 as f64 * p.ln() + n1 as f64 * (1.0 - p).ln()
}

fn projection_probs_of(rho: &CMatrix, axis: PauliAxis) -> (f64, f64) {
    let g = axis.rotation();
    let r = &g * rho * g.adjoint();
    (r[(0, 0)].re.clamp(0.0, 1.0), r[(1, 1)].re.clamp(0.0, 1.0))
}

/// Outcome-zero probability of a binomial split including the expected
/// dark counts `dark` per outcome, given the observed axis total.
fn dark_corrected(p0: f64, total: f64, dark: f64) -> f64 {
    let signal = (total - 2.0 * dark).max(0.0);
    if signal + 2.0 * dark <= 0.0 {
        return p0;
    }
    (signal * p0 + dark) / (signal + 2.0 * dark)
}

fn detector_of(record: &CountRecord) -> DetectorModel {
    record.metadata.detector.unwrap_or_else(|| DetectorModel::ideal(record.metadata.integration))
}

fn settings_of(record: &CountRecord) -> Vec<MeasurementSetting> {
    if record.metadata.settings.is_empty() {
        MeasurementSetting::standard_set()
    } else {
        record.metadata.settings.clone()
    }
}

struct AxisCounts {
    axis: PauliAxis,
    success: f64,
    n0: u64,
    n1: u64,
}

fn axis_counts(row: &BTreeMap<String, u64>, settings: &[MeasurementSetting]) -> Vec<AxisCounts> {
    settings
        .iter()
        .filter_map(|s| {
            let [a, b] = s.axis.outcome_labels();
            Some(AxisCounts {
                axis: s.axis,
                success: s.success,
                n0: *row.get(a)?,
                n1: *row.get(b)?,
            })
        })
        .collect()
}

/// State tomography from Pauli-projection counts.
pub fn qst_infer(record: &CountRecord, target: &DensityMatrix, opts: &InferenceOptions) -> Result<Posterior<DensityMatrix>> {
    if target.dim() != 2 {
        return Err(QfpError::Dimension("state tomography is implemented for qubits".into()));
    }
    let settings = settings_of(record);
    let det = detector_of(record);
    let flux = record.metadata.flux;
    let mut data = Vec::new();
    for s in &settings {
        if let Some(row) = record.counts.get(s.axis.label()) {
            data.extend(axis_counts(row, std::slice::from_ref(s)));
        }
    }
    let mut axes: Vec<PauliAxis> = data.iter().map(|a| a.axis).collect();
    axes.sort();
    axes.dedup();
    if axes.len() < 3 {
        return Err(QfpError::InsufficientData(format!(
            "state tomography needs counts on X, Y and Z; found {}",
            axes.len()
        )));
    }
    let dark = det.dark_counts();
    let likelihood = opts.likelihood;
    let loglik = |z: &[f64]| -> f64 {
        let rho = latent_to_state(z);
        data.iter()
            .map(|a| {
                let (p0, p1) = projection_probs_of(&rho, a.axis);
                match likelihood {
                    LikelihoodKind::Poisson => {
                        let scale = flux * det.integration * a.success * det.efficiency;
                        poisson_log(a.n0, scale * p0 + dark) + poisson_log(a.n1, scale * p1 + dark)
                    }
                    LikelihoodKind::Binomial => binomial_log(a.n0, a.n1, dark_corrected(p0, (a.n0 + a.n1) as f64, dark)),
                }
            })
            .sum()
    };
    let informative = data.iter().any(|a| a.n0 + a.n1 > 0);
    let z0 = initial_point(&loglik, 8, opts, informative);
    let chain = sample_posterior(opts.sampler, &loglik, &z0, opts.seed, &opts.chain)?;
    let states: Vec<DensityMatrix> = chain
        .samples
        .iter()
        .map(|z| DensityMatrix::new(latent_to_state(z)))
        .collect::<Result<_>>()?;
    let fids: Vec<f64> = states.iter().map(|r| state_fidelity(r, target)).collect::<Result<_>>()?;
    let mean = states.iter().fold(DMatrix::zeros(2, 2), |acc, r| acc + r.matrix()) * c64(1.0 / states.len() as f64, 0.0);
    let mean_state = DensityMatrix::new(mean)?;
    let mut flags = Vec::new();
    let fid_ess = fidelity_flags(&fids, &mut flags);
    if !informative {
        flags.push("no counts: the posterior is the prior".into());
    }
    Ok(Posterior {
        report: InferenceReport {
            model: "qst".into(),
            target: "state".into(),
            fidelity: Summary::of(&fids),
            fidelity_effective_samples: fid_ess,
            fidelity_of_mean: state_fidelity(&mean_state, target)?,
            success: None,
            mean_state: Some(mean_state.matrix().clone()),
            mean_choi: None,
            mean_chi: None,
            mean_mode_matrix: None,
            parameters: BTreeMap::new(),
            samples: states.len(),
            diagnostics: chain.diagnostics,
            flags,
        },
        samples: states,
    })
}

/// Process tomography from the 6 × 6 input/projection counts.
pub fn qpt_infer(record: &CountRecord, target: &ChoiMatrix, opts: &InferenceOptions) -> Result<Posterior<ChoiMatrix>> {
    if record.kind != RecordKind::ProcessTomography {
        log::warn!("record of kind {:?} analysed as process tomography", record.kind);
    }
    let settings = settings_of(record);
    let det = detector_of(record);
    let flux = record.metadata.flux;
    let dark = det.dark_counts();
    let inputs = tomography_inputs();
    let mut data = Vec::new();
    for (label, rho) in &inputs {
        let row = record
            .counts
            .get(label)
            .ok_or_else(|| QfpError::InsufficientData(format!("no counts for input {label}")))?;
        let ax = axis_counts(row, &settings);
        if ax.len() != 3 {
            return Err(QfpError::InsufficientData(format!("input {label} lacks one of the six projections")));
        }
        data.push((rho.matrix().clone(), ax));
    }
    let likelihood = opts.likelihood;
    let loglik = |z: &[f64]| -> f64 {
        let Ok(k) = latent_to_channel(z) else {
            return f64::NEG_INFINITY;
        };
        data.iter()
            .map(|(rho, ax)| {
                let out = k.ops.iter().fold(DMatrix::zeros(2, 2), |acc, a| acc + a * rho * a.adjoint());
                ax.iter()
                    .map(|a| {
                        let (p0, p1) = projection_probs_of(&out, a.axis);
                        match likelihood {
                            LikelihoodKind::Binomial => {
                                binomial_log(a.n0, a.n1, dark_corrected(p0, (a.n0 + a.n1) as f64, dark))
                            }
                            LikelihoodKind::Poisson => {
                                let scale = flux * det.integration * a.success * det.efficiency;
                                poisson_log(a.n0, scale * p0 + dark) + poisson_log(a.n1, scale * p1 + dark)
                            }
                        }
                    })
                    .sum::<f64>()
            })
            .sum()
    };
    let informative = data.iter().any(|(_, ax)| ax.iter().any(|a| a.n0 + a.n1 > 0));
    let z0 = initial_point(&loglik, 32, opts, informative);
    let chain = sample_posterior(opts.sampler, &loglik, &z0, opts.seed, &opts.chain)?;
    let mut chois = Vec::with_capacity(chain.samples.len());
    for z in &chain.samples {
        let k = latent_to_channel(z)?;
        if k.completeness_defect() > 1e-8 {
            return Err(QfpError::NonFinite("posterior channel violates trace preservation".into()));
        }
        chois.push(choi_from_kraus(&k));
    }
    let fids: Vec<f64> = chois.iter().map(|c| process_fidelity(c, target)).collect::<Result<_>>()?;
    let mean = chois.iter().fold(DMatrix::zeros(4, 4), |acc, c| acc + &c.matrix) * c64(1.0 / chois.len() as f64, 0.0);
    let mean_choi = ChoiMatrix::new(mean, 2, 2)?;
    let mut flags = Vec::new();
    let fid_ess = fidelity_flags(&fids, &mut flags);
    if !informative {
        flags.push("no counts: the posterior is the prior".into());
    }
    Ok(Posterior {
        report: InferenceReport {
            model: "qpt".into(),
            target: "channel".into(),
            fidelity: Summary::of(&fids),
            fidelity_effective_samples: fid_ess,
            fidelity_of_mean: process_fidelity(&mean_choi, target)?,
            success: None,
            mean_state: None,
            mean_chi: Some(chi_from_choi(&mean_choi)?),
            mean_choi: Some(mean_choi),
            mean_mode_matrix: None,
            parameters: BTreeMap::new(),
            samples: chois.len(),
            diagnostics: chain.diagnostics,
            flags,
        },
        samples: chois,
    })
}

/// One posterior draw of the CNOT noise model.
#[derive(Debug, Clone, PartialEq)]
pub struct CnotSample {
    pub mode_matrix: CMatrix,
    pub mu: f64,
    pub eta_a: f64,
    pub eta_b: f64,
    pub metrics: GateMetrics,
}

/// Prior scales of the CNOT model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CnotPrior {
    /// Median of the log-normal prior on the pair probability.
    pub mu: f64,
    pub eta_a: f64,
    pub eta_b: f64,
    /// Standard deviation of the log-normal priors.
    pub log_sigma: f64,
}

impl CnotPrior {
    /// Centred on the calibration stored in the record, or on typical values.
    pub fn from_record(record: &CountRecord) -> Self {
        let (mu, ea, eb) = record
            .metadata
            .source
            .map(|s| (s.mu, s.detector_a.efficiency, s.detector_b.efficiency))
            .unwrap_or((1e-3, 0.01, 0.01));
        Self {
            mu: if mu > 0.0 { mu } else { 1e-3 },
            eta_a: if ea > 0.0 { ea } else { 0.01 },
            eta_b: if eb > 0.0 { eb } else { 0.01 },
            log_sigma: 1.0,
        }
    }
}

const CNOT_LATENTS: usize = 35;

fn cnot_params(z: &[f64], prior: &CnotPrior) -> Result<(CMatrix, f64, f64, f64)> {
    let v = latent_to_contraction(&z[..32])?;
    let s = prior.log_sigma;
    Ok((v, prior.mu * (s * z[32]).exp(), prior.eta_a * (s * z[33]).exp(), prior.eta_b * (s * z[34]).exp()))
}

/// Open-box CNOT inference from truth-table singles and coincidences; the
/// dark-count probabilities and frame come from the record's calibration.
pub fn cnot_infer(record: &CountRecord, opts: &InferenceOptions) -> Result<Posterior<CnotSample>> {
    let prior = CnotPrior::from_record(record);
    cnot_infer_with_prior(record, &prior, opts)
}

pub fn cnot_infer_with_prior(record: &CountRecord, prior: &CnotPrior, opts: &InferenceOptions) -> Result<Posterior<CnotSample>> {
    let target: TargetGate = target_gate(GateSpec::Cnot)?;
    let source = record
        .metadata
        .source
        .ok_or_else(|| QfpError::InsufficientData("truth-table record lacks the detector calibration".into()))?;
    let frames = record.metadata.integration / source.detector_a.frame;
    let (d_a, d_b) = (source.detector_a.dark_probability, source.detector_b.dark_probability);
    struct Cell {
        kl: (usize, usize),
        coinc: [[u64; 2]; 2],
        singles_a: [u64; 2],
        singles_b: [u64; 2],
    }
    let mut cells = Vec::new();
    for k in 0..2 {
        for l in 0..2 {
            let key = logical_label(k, l);
            let row = record
                .counts
                .get(&key)
                .ok_or_else(|| QfpError::InsufficientData(format!("no counts for input {key}")))?;
            let get = |name: String| {
                row.get(&name)
                    .copied()
                    .ok_or_else(|| QfpError::InsufficientData(format!("input {key} lacks {name}")))
            };
            let mut coinc = [[0; 2]; 2];
            for (r, row_c) in coinc.iter_mut().enumerate() {
                for (s, c) in row_c.iter_mut().enumerate() {
                    *c = get(format!("AB:{}", logical_label(r, s)))?;
                }
            }
            cells.push(Cell {
                kl: (k, l),
                coinc,
                singles_a: [get("A:0".into())?, get("A:1".into())?],
                singles_b: [get("B:0".into())?, get("B:1".into())?],
            });
        }
    }
    let loglik = |z: &[f64]| -> f64 {
        let Ok((v, mu, ea, eb)) = cnot_params(z, prior) else {
            return f64::NEG_INFINITY;
        };
        if mu > 0.1 || ea > 1.0 || eb > 1.0 {
            return f64::NEG_INFINITY;
        }
        let mut total = 0.0;
        for c in &cells {
            for r in 0..2 {
                for s in 0..2 {
                    let p = click_probs_unchecked(&v, c.kl, (r, s), mu, ea, eb, d_a, d_b);
                    total += poisson_log(c.coinc[r][s], frames * p.p_ab);
                    if s == 0 {
                        total += poisson_log(c.singles_a[r], frames * p.p_a);
                    }
                    if r == 0 {
                        total += poisson_log(c.singles_b[s], frames * p.p_b);
                    }
                }
            }
        }
        total
    };
    // signal check: singles well above the dark expectation
    let singles: u64 = cells.iter().map(|c| c.singles_a.iter().chain(&c.singles_b).sum::<u64>()).sum();
    let dark_expect = 8.0 * frames * (d_a + d_b);
    let informative = (singles as f64) > dark_expect + 5.0 * dark_expect.sqrt().max(1.0);
    let z0 = initial_point(&loglik, CNOT_LATENTS, opts, informative);
    let chain = sample_posterior(opts.sampler, &loglik, &z0, opts.seed, &opts.chain)?;
    let draws: Vec<CnotSample> = chain
        .samples
        .par_iter()
        .map(|z| {
            let (v, mu, eta_a, eta_b) = cnot_params(z, prior)?;
            let metrics = target.gauge_optimized_metrics(&v)?;
            Ok(CnotSample {
                mode_matrix: v,
                mu,
                eta_a,
                eta_b,
                metrics,
            })
        })
        .collect::<Result<_>>()?;
    let fids: Vec<f64> = draws.iter().map(|d| d.metrics.fidelity).collect();
    let succ: Vec<f64> = draws.iter().map(|d| d.metrics.success).collect();
    let mean_v = draws.iter().fold(DMatrix::zeros(4, 4), |acc, d| acc + &d.mode_matrix) * c64(1.0 / draws.len() as f64, 0.0);
    let mut parameters = BTreeMap::new();
    parameters.insert("mu".into(), Summary::of(&draws.iter().map(|d| d.mu).collect::<Vec<_>>()));
    parameters.insert("eta_a".into(), Summary::of(&draws.iter().map(|d| d.eta_a).collect::<Vec<_>>()));
    parameters.insert("eta_b".into(), Summary::of(&draws.iter().map(|d| d.eta_b).collect::<Vec<_>>()));
    let mut flags = Vec::new();
    let fid_ess = fidelity_flags(&fids, &mut flags);
    if !informative {
        flags.push("singles are consistent with dark counts alone: the mode matrix is not identifiable".into());
    }
    Ok(Posterior {
        report: InferenceReport {
            model: "cnot".into(),
            target: target.label.clone(),
            fidelity: Summary::of(&fids),
            fidelity_effective_samples: fid_ess,
            fidelity_of_mean: target.gauge_optimized_metrics(&mean_v)?.fidelity,
            success: Some(Summary::of(&succ)),
            mean_state: None,
            mean_choi: None,
            mean_chi: None,
            mean_mode_matrix: Some(mean_v),
            parameters,
            samples: draws.len(),
            diagnostics: chain.diagnostics,
            flags,
        },
        samples: draws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{channel_from_mode_matrix, KrausSet};
    use crate::counts::{ideal_cnot_mode_matrix, simulate_cnot_truth_table, simulate_qpt_counts, simulate_qst_counts, PairSourceModel};
    use crate::linalg::max_abs_diff;

    fn fast() -> ChainOptions {
        ChainOptions {
            steps: 4000,
            samples: 512,
            ..Default::default()
        }
    }

    #[test]
    fn slice_gaussian_moments() {
        let opts = ChainOptions {
            steps: 20_000,
            ..Default::default()
        };
        let n = 10_000;
        let c = slice_sample(|z| -0.5 * z[0] * z[0], &[3.0], n, 1, &opts).unwrap();
        assert_eq!(c.samples.len(), n);
        let xs: Vec<f64> = c.samples.iter().map(|z| z[0]).collect();
        let s = Summary::of(&xs);
        assert!(s.mean.abs() < 4.0 / (n as f64).sqrt(), "{s:?}");
        assert!((s.std.powi(2) - 1.0).abs() < 0.2);
        assert_eq!(c.diagnostics.acceptance_rate, 1.0);
    }

    #[test]
    fn slice_correlated_gaussian() {
        let rho: f64 = 0.8;
        let det = 1.0 - rho * rho;
        let f = |z: &[f64]| -0.5 * (z[0] * z[0] - 2.0 * rho * z[0] * z[1] + z[1] * z[1]) / det;
        let c = slice_sample(f, &[0.0, 0.0], 4000, 2, &ChainOptions::default()).unwrap();
        let n = c.samples.len() as f64;
        let m: Vec<f64> = (0..2).map(|i| c.samples.iter().map(|z| z[i]).sum::<f64>() / n).collect();
        let cov = |i: usize, j: usize| c.samples.iter().map(|z| (z[i] - m[i]) * (z[j] - m[j])).sum::<f64>() / n;
        assert!((cov(0, 0) - 1.0).abs() < 0.2 && (cov(1, 1) - 1.0).abs() < 0.2);
        assert!((cov(0, 1) - rho).abs() < 0.2 * rho, "{}", cov(0, 1));
    }

    #[test]
    fn slice_constant_target_and_errors() {
        let opts = ChainOptions {
            steps: 2000,
            samples: 100,
            ..Default::default()
        };
        let c = slice_sample(|_| 0.0, &[0.0], 100, 3, &opts).unwrap();
        assert_eq!(c.diagnostics.acceptance_rate, 1.0);
        assert!(c.samples.iter().any(|z| z[0].abs() > 0.5));
        assert!(slice_sample(|_| f64::NAN, &[0.0], 10, 3, &opts).is_err());
    }

    #[test]
    fn pcn_preserves_the_prior() {
        let c = pcn_sample(|_| 0.0, &[0.0, 0.0], 1024, 4, &ChainOptions::default()).unwrap();
        assert!(c.diagnostics.acceptance_rate > 0.999);
        let xs: Vec<f64> = c.samples.iter().map(|z| z[0]).collect();
        let s = Summary::of(&xs);
        assert!(s.mean.abs() < 0.2 && (s.std.powi(2) - 1.0).abs() < 0.2, "{s:?}");
        let mut rng = substream(99, "reference", 0);
        let direct: Vec<f64> = (0..1024).map(|_| rng.sample(StandardNormal)).collect();
        let (_, p) = ks_two_sample(&xs, &direct);
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn pcn_conjugate_gaussian() {
        // prior N(0,1), likelihood N(y | z, s²) ⇒ posterior N(y/(1+s²), s²/(1+s²))
        let (y, s2) = (1.5, 0.25);
        let c = pcn_sample(|z| -0.5 * (z[0] - y).powi(2) / s2, &[0.0], 2048, 5, &ChainOptions::default()).unwrap();
        let post_mean = y / (1.0 + s2);
        let post_sd = (s2 / (1.0 + s2)).sqrt();
        let m = c.samples.iter().map(|z| z[0]).sum::<f64>() / c.samples.len() as f64;
        assert!((m - post_mean).abs() < 3.0 * post_sd, "{m}");
        let rate = c.diagnostics.acceptance_rate;
        assert!((0.1..0.5).contains(&rate), "{rate}");
    }

    #[test]
    fn pcn_tiny_step_is_flagged() {
        let opts = ChainOptions {
            pcn_beta: 1e-6,
            adapt: false,
            steps: 4000,
            ..Default::default()
        };
        let c = pcn_sample(|z| -0.5 * z[0] * z[0], &[0.5], 256, 6, &opts).unwrap();
        assert!(c.diagnostics.acceptance_rate > 0.99);
        assert!(!c.diagnostics.flags.is_empty());
        assert!(pcn_sample(|_| 0.0, &[0.0], 10, 6, &ChainOptions { pcn_beta: 1.5, ..opts }).is_err());
    }

    #[test]
    fn sampling_is_seed_reproducible() {
        let f = |z: &[f64]| -0.5 * (z[0] - 1.0).powi(2) / 0.1;
        let a = pcn_sample(f, &[0.0], 100, 7, &fast()).unwrap();
        let b = pcn_sample(f, &[0.0], 100, 7, &fast()).unwrap();
        let c = pcn_sample(f, &[0.0], 100, 8, &fast()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn ks_and_iat_helpers() {
        let a: Vec<f64> = (0..500).map(|i| i as f64 / 500.0).collect();
        let b: Vec<f64> = (0..500).map(|i| 0.5 + i as f64 / 500.0).collect();
        assert!(ks_two_sample(&a, &b).1 < 1e-6);
        assert!(ks_two_sample(&a, &a).1 > 0.99);
        let mut rng = substream(1, "iat", 0);
        let white: Vec<f64> = (0..4096).map(|_| rng.sample(StandardNormal)).collect();
        assert!((integrated_autocorrelation(&white) - 1.0).abs() < 0.3);
        let mut ar = vec![0.0];
        for i in 1..20_000 {
            let e: f64 = rng.sample(StandardNormal);
            ar.push(0.9 * ar[i - 1] + e);
        }
        let tau = integrated_autocorrelation(&ar);
        assert!((tau - 19.0).abs() < 4.0, "{tau}");
        assert!(integrated_autocorrelation(&[1.0; 100]).is_infinite());
    }

    #[test]
    fn latent_maps_produce_valid_objects() {
        let mut rng = substream(2, "latent", 0);
        for _ in 0..50 {
            let z: Vec<f64> = (0..35).map(|_| rng.sample(StandardNormal)).collect();
            assert!(DensityMatrix::new(latent_to_state(&z[..8])).is_ok());
            assert!(latent_to_channel(&z[..32]).unwrap().completeness_defect() < 1e-12);
            let v = latent_to_contraction(&z[..32]).unwrap();
            assert!(crate::linalg::operator_norm(&v) < 1.0);
        }
    }

    #[test]
    fn qst_recovers_plus_state() {
        let r = 1.0 / 2f64.sqrt();
        let plus = DensityMatrix::pure(&[c64(r, 0.0), c64(r, 0.0)]).unwrap();
        let det = DetectorModel::new(0.9, 1e-6, 1.5e-9, 1.0).unwrap();
        let rec = simulate_qst_counts(&plus, &MeasurementSetting::standard_set(), 1e5, &det, 1).unwrap();
        let opts = InferenceOptions {
            chain: fast(),
            ..InferenceOptions::qst(1)
        };
        let post = qst_infer(&rec, &plus, &opts).unwrap();
        assert!(post.report.fidelity_of_mean >= 0.99, "{:?}", post.report.fidelity);
        assert!(post.report.fidelity.mean >= 0.99);
        let again = qst_infer(&rec, &plus, &opts).unwrap();
        assert_eq!(post.report, again.report);

        let mut partial = rec.clone();
        partial.counts.remove("Y");
        assert!(qst_infer(&partial, &plus, &opts).is_err());
    }

    #[test]
    fn qst_without_counts_returns_the_prior() {
        let zero = DensityMatrix::pure(&[c64(1.0, 0.0), c64(0.0, 0.0)]).unwrap();
        let det = DetectorModel::ideal(1.0);
        let rec = simulate_qst_counts(&zero, &MeasurementSetting::standard_set(), 0.0, &det, 1).unwrap();
        let opts = InferenceOptions {
            chain: fast(),
            ..InferenceOptions::qst(2)
        };
        let post = qst_infer(&rec, &zero, &opts).unwrap();
        // Hilbert–Schmidt prior: mean fidelity to a pure state is 1/2
        assert!((post.report.fidelity.mean - 0.5).abs() < 0.05, "{:?}", post.report.fidelity);
        assert!(post.report.fidelity.std > 0.15);
        assert!(!post.report.flags.is_empty());
    }

    #[test]
    fn qpt_identity_channel() {
        let det = DetectorModel::new(0.9, 1e-6, 1.5e-9, 1.0).unwrap();
        let id = KrausSet::unitary(DMatrix::identity(2, 2));
        let rec = simulate_qpt_counts(&id, &MeasurementSetting::standard_set(), 1e5, &det, 3).unwrap();
        let opts = InferenceOptions {
            chain: fast(),
            ..InferenceOptions::qpt(3)
        };
        let target = choi_from_kraus(&id);
        let post = qpt_infer(&rec, &target, &opts).unwrap();
        assert!(post.report.fidelity.mean >= 0.99, "{:?}", post.report.fidelity);
        let chi = &post.report.mean_chi.as_ref().unwrap().chi;
        let mut ideal = DMatrix::zeros(4, 4);
        ideal[(0, 0)] = c64(1.0, 0.0);
        assert!(max_abs_diff(chi, &ideal) < 0.02);

        let mut partial = rec.clone();
        partial.counts.remove("+i");
        assert!(qpt_infer(&partial, &target, &opts).is_err());
    }

    #[test]
    fn qpt_hadamard_channel() {
        let r = 1.0 / 2f64.sqrt();
        let h = crate::linalg::from_real_rows(&[&[r, r], &[r, -r]]);
        let ch = channel_from_mode_matrix(&h).unwrap();
        let det = DetectorModel::new(0.9, 1e-6, 1.5e-9, 1.0).unwrap();
        let rec = simulate_qpt_counts(&ch.kraus, &MeasurementSetting::standard_set(), 1e5, &det, 4).unwrap();
        let opts = InferenceOptions {
            chain: fast(),
            ..InferenceOptions::qpt(4)
        };
        let post = qpt_infer(&rec, &ch.choi().unwrap(), &opts).unwrap();
        assert!(post.report.fidelity.mean >= 0.99, "{:?}", post.report.fidelity);
        let chi = &post.report.mean_chi.as_ref().unwrap().chi;
        for (j, k) in [(1, 1), (3, 3), (1, 3), (3, 1)] {
            assert!((chi[(j, k)].re - 0.5).abs() < 0.02);
        }
    }

    #[test]
    fn cnot_inference_runs_and_flags_missing_signal() {
        let mut src = PairSourceModel::typical(600.0);
        src.mu = 0.0;
        let rec = simulate_cnot_truth_table(&ideal_cnot_mode_matrix(), &src, 600.0, 5).unwrap();
        let opts = InferenceOptions {
            chain: ChainOptions {
                steps: 200,
                samples: 64,
                ..Default::default()
            },
            ..InferenceOptions::cnot(5)
        };
        let post = cnot_infer(&rec, &opts).unwrap();
        assert!(!post.report.flags.is_empty());
        assert_eq!(post.samples.len(), 64);

        let mut partial = rec.clone();
        partial.counts.get_mut("01").unwrap().remove("A:1");
        assert!(cnot_infer(&partial, &opts).is_err());
    }

    #[test]
    fn independent_trace_has_full_effective_size() {
        let mut rng = substream(3, "ess", 0);
        let iid: Vec<f64> = (0..2000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let ess = trace_effective_samples(&iid);
        assert!(ess > 1000.0 && ess <= 2000.0 * 1.5, "{ess}");
        let mut flags = vec![];
        let sticky: Vec<f64> = (0..2000).map(|i| (i / 400) as f64).collect();
        assert!(fidelity_flags(&sticky, &mut flags) < 50.0);
        assert_eq!(flags.len(), 1);
    }
}
