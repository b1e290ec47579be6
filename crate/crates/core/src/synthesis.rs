//! Numerical design of EOM / pulse-shaper circuits for target gates.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{
    compose_auto, default_guard, propagate_columns, ComposeOptions, Element, EomDrive, Harmonic, QfpCircuit,
    ShaperBin, ShaperMask, Window,
};
use crate::error::{QfpError, Result};
use crate::optimize::{minimize, Bounds, LbfgsOptions};
use crate::rng::substream;
use crate::transfer::{fidelity_success, target_gate, tunable_bs_split_ratio, GateMetrics, GateSpec, TargetGate};

/// One free element of a template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Slot {
    /// Modulator driven by the listed harmonics, each with a free index and phase.
    Eom { orders: Vec<u32> },
    /// Pulse shaper with a free phase on each listed bin.
    Shaper { free_bins: Vec<i64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitTemplate {
    pub name: String,
    pub slots: Vec<Slot>,
    /// Interior bins of the simulation window; guard bins are added on top.
    pub first_bin: i64,
    pub last_bin: i64,
    /// Upper bound on every modulation index (radians).
    #[serde(default = "default_index_max")]
    pub index_max: f64,
}

fn default_index_max() -> f64 {
    2.0 * PI
}

impl CircuitTemplate {
    /// EOM / shaper / EOM with the given harmonics on both modulators and
    /// free shaper phases on `shaper_bins`.
    pub fn three_element(name: &str, orders: Vec<u32>, shaper_bins: Vec<i64>, first_bin: i64, last_bin: i64) -> Self {
        Self {
            name: name.to_string(),
            slots: vec![
                Slot::Eom { orders: orders.clone() },
                Slot::Shaper { free_bins: shaper_bins },
                Slot::Eom { orders },
            ],
            first_bin,
            last_bin,
            index_max: default_index_max(),
        }
    }

    /// `d − 1` harmonics and about `4d` free shaper channels centred on the
    /// logical bins `0..d`.
    pub fn dft(d: usize) -> Self {
        let d = d.max(2);
        let orders = (1..d as u32).collect();
        let margin = (3 * d).div_ceil(2) as i64;
        let bins = (-margin..d as i64 + margin).collect();
        Self::three_element(&format!("dft{d}"), orders, bins, 0, d as i64 - 1)
    }

    pub fn hadamard() -> Self {
        Self {
            name: "hadamard".into(),
            ..Self::dft(2)
        }
    }

    pub fn tritter() -> Self {
        Self {
            name: "tritter".into(),
            ..Self::dft(3)
        }
    }

    /// Three-element CNOT template over bins `−4..=12` with harmonics
    /// `1..=harmonics` on both modulators.
    pub fn cnot(harmonics: u32) -> Self {
        Self::three_element(
            &format!("cnot_h{harmonics}"),
            (1..=harmonics).collect(),
            (-4..=12).collect(),
            -4,
            12,
        )
    }

    pub fn for_gate(spec: GateSpec) -> Self {
        match spec {
            GateSpec::Hadamard => Self::hadamard(),
            GateSpec::Tritter => Self::tritter(),
            GateSpec::Dft { d } | GateSpec::Identity { d } => Self::dft(d),
            GateSpec::TunableBs { .. } => Self::hadamard(),
            GateSpec::Cnot => Self::cnot(2),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.slots
            .iter()
            .map(|s| match s {
                Slot::Eom { orders } => 2 * orders.len(),
                Slot::Shaper { free_bins } => free_bins.len(),
            })
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.last_bin < self.first_bin {
            return Err(QfpError::InvalidParameter(format!(
                "template window {}..={} is empty",
                self.first_bin, self.last_bin
            )));
        }
        if !(self.index_max.is_finite() && self.index_max > 0.0) {
            return Err(QfpError::InvalidParameter("index bound must be finite and positive".into()));
        }
        for s in &self.slots {
            match s {
                Slot::Eom { orders } => {
                    if orders.is_empty() || orders.contains(&0) {
                        return Err(QfpError::InvalidParameter(
                            "modulator slots need harmonic orders ≥ 1".into(),
                        ));
                    }
                    let mut o = orders.clone();
                    o.sort_unstable();
                    o.dedup();
                    if o.len() != orders.len() {
                        return Err(QfpError::InvalidParameter("repeated harmonic order".into()));
                    }
                }
                Slot::Shaper { free_bins } => {
                    let mut b = free_bins.clone();
                    b.sort_unstable();
                    b.dedup();
                    if b.len() != free_bins.len() {
                        return Err(QfpError::InvalidParameter("repeated shaper bin".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Index bounds `[0, index_max]`; phases wrap on `[−π, π)`.
    pub fn bounds(&self) -> Bounds {
        let mut b = Bounds {
            lower: Vec::new(),
            upper: Vec::new(),
            periodic: Vec::new(),
        };
        for s in &self.slots {
            match s {
                Slot::Eom { orders } => {
                    for _ in orders {
                        b.lower.extend([0.0, -PI]);
                        b.upper.extend([self.index_max, PI]);
                        b.periodic.extend([false, true]);
                    }
                }
                Slot::Shaper { free_bins } => {
                    for _ in free_bins {
                        b.lower.push(-PI);
                        b.upper.push(PI);
                        b.periodic.push(true);
                    }
                }
            }
        }
        b
    }

    pub fn random_start<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.parameter_count());
        for s in &self.slots {
            match s {
                Slot::Eom { orders } => {
                    for &h in orders {
                        let top = (2.0 / h as f64).min(self.index_max);
                        x.push(rng.random_range(0.0..top));
                        x.push(rng.random_range(-PI..PI));
                    }
                }
                Slot::Shaper { free_bins } => {
                    for _ in free_bins {
                        x.push(rng.random_range(-PI..PI));
                    }
                }
            }
        }
        x
    }

    pub fn elements(&self, params: &[f64]) -> Result<Vec<Element>> {
        if params.len() != self.parameter_count() {
            return Err(QfpError::Dimension(format!(
                "template {} takes {} parameters, got {}",
                self.name,
                self.parameter_count(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        let mut next = || it.next().expect("length checked above");
        Ok(self
            .slots
            .iter()
            .map(|s| match s {
                Slot::Eom { orders } => Element::Eom(EomDrive::Harmonics {
                    harmonics: orders
                        .iter()
                        .map(|&order| Harmonic {
                            order,
                            index: next(),
                            phase: next(),
                        })
                        .collect(),
                }),
                Slot::Shaper { free_bins } => Element::Shaper(ShaperMask {
                    bins: free_bins
                        .iter()
                        .map(|&bin| ShaperBin {
                            bin,
                            phase: next(),
                            transmission: 1.0,
                        })
                        .collect(),
                    step: None,
                }),
            })
            .collect())
    }

    /// Circuit for a parameter vector, with the default guard widened to
    /// cover every free shaper bin.
    pub fn circuit(&self, params: &[f64]) -> Result<QfpCircuit> {
        let elements = self.elements(params)?;
        let mut guard = default_guard(&elements) as i64;
        for s in &self.slots {
            if let Slot::Shaper { free_bins } = s {
                for &b in free_bins {
                    guard = guard.max(self.first_bin - b).max(b - self.last_bin);
                }
            }
        }
        Ok(QfpCircuit::new(
            elements,
            Window::new(self.first_bin, self.last_bin, guard as usize),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisOptions {
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub fidelity_weight: f64,
    #[serde(default = "one")]
    pub success_weight: f64,
    /// Hinge floor on the success probability; `None` uses the gate default.
    #[serde(default)]
    pub success_floor: Option<f64>,
    #[serde(default)]
    pub lbfgs: LbfgsOptions,
    /// Replaces the random draw of start 0.
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
}

fn default_starts() -> usize {
    32
}

fn one() -> f64 {
    1.0
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            starts: default_starts(),
            seed: 0,
            fidelity_weight: 1.0,
            success_weight: 1.0,
            success_floor: None,
            lbfgs: LbfgsOptions::default(),
            initial: None,
        }
    }
}

/// Success floor used when none is configured.
pub fn default_success_floor(target: &TargetGate) -> f64 {
    match target.label.as_str() {
        "cnot" => 0.045,
        "hadamard" | "tritter" | "dft(2)" | "dft(3)" => 0.975,
        l if l.starts_with("identity") => 1.0,
        _ => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub template: String,
    pub target: String,
    pub params: Vec<f64>,
    /// Circuit with the guard grown until the truncation check passes.
    pub circuit: QfpCircuit,
    pub fidelity: f64,
    pub success: f64,
    pub objective: f64,
    pub truncation_defect: f64,
    pub seed: u64,
    pub best_start: usize,
    pub start_objectives: Vec<f64>,
    /// Objective per iteration of the winning start.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub budget_exhausted: bool,
}

/// Gate metrics of a template at `params`, computed from the propagated
/// columns of the logical bins only.
pub fn template_metrics(template: &CircuitTemplate, target: &TargetGate, params: &[f64]) -> Result<GateMetrics> {
    let circuit = template.circuit(params)?;
    let cols = propagate_columns(&circuit, &target.bins)?;
    let w = circuit.window;
    let rows: Vec<usize> = target
        .bins
        .iter()
        .map(|&b| w.position(b).ok_or(QfpError::BinCoverage(b)))
        .collect::<Result<_>>()?;
    let block = nalgebra::DMatrix::from_fn(rows.len(), cols.ncols(), |i, j| cols[(rows[i], j)]);
    let lifted = if target.photons() == 1 { block } else { target.lift(&block)? };
    fidelity_success(&lifted, &target.entries)
}

fn objective(m: &GateMetrics, opts: &SynthesisOptions, floor: f64) -> f64 {
    opts.fidelity_weight * (1.0 - m.fidelity) + opts.success_weight * (floor - m.success).max(0.0)
}

/// Multi-start quasi-Newton search. Starts run in parallel; the winner is the
/// lowest objective, ties going to the lower start index.
pub fn synthesize(template: &CircuitTemplate, target: &TargetGate, opts: &SynthesisOptions) -> Result<SynthesisResult> {
    template.validate()?;
    if opts.starts == 0 {
        return Err(QfpError::InvalidParameter("at least one start is required".into()));
    }
    let floor = opts.success_floor.unwrap_or_else(|| default_success_floor(target));
    let bounds = template.bounds();
    let f = |x: &[f64]| match template_metrics(template, target, x) {
        Ok(m) if m.fidelity.is_finite() => objective(&m, opts, floor),
        _ => 10.0,
    };
    let runs: Vec<_> = (0..opts.starts)
        .into_par_iter()
        .map(|i| {
            let x0 = match (&opts.initial, i) {
                (Some(x), 0) => x.clone(),
                _ => template.random_start(&mut substream(opts.seed, "synthesis", i as u64)),
            };
            minimize(f, &x0, &bounds, &opts.lbfgs)
        })
        .collect();
    let best_start = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.value.total_cmp(&b.1.value).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("at least one start");
    let best = &runs[best_start];

    let circuit = template.circuit(&best.x)?;
    let v = compose_auto(&circuit, Some(&target.bins), ComposeOptions::default())?;
    let metrics = target.metrics(&v)?;
    if metrics.fidelity <= 0.5 {
        return Err(QfpError::Infeasible(format!(
            "best of {} starts reached F_W = {:.4}",
            opts.starts, metrics.fidelity
        )));
    }
    let budget_exhausted = runs.iter().any(|r| r.budget_exhausted);
    if budget_exhausted {
        log::warn!("synthesis budget exhausted; returning best point found");
    }
    Ok(SynthesisResult {
        template: template.name.clone(),
        target: target.label.clone(),
        params: best.x.clone(),
        circuit: QfpCircuit::new(circuit.elements, v.window()),
        fidelity: metrics.fidelity,
        success: metrics.success,
        objective: objective(&metrics, opts, floor),
        truncation_defect: v.truncation_defect(),
        seed: opts.seed,
        best_start,
        start_objectives: runs.iter().map(|r| r.value).collect(),
        trace: best.trace.clone(),
        iterations: best.iterations,
        evaluations: runs.iter().map(|r| r.evaluations).sum(),
        budget_exhausted,
    })
}

/// Modulation index at which the postselected split ratio at `α = π`
/// equals `target_r_at_pi`, on the rising branch inside `(0, 4]`.
pub fn calibrate_tunable_bs(target_r_at_pi: f64) -> Result<f64> {
    if !(target_r_at_pi > 0.0 && target_r_at_pi <= 0.5) {
        return Err(QfpError::InvalidParameter(format!(
            "target reflectivity {target_r_at_pi} is outside (0, 0.5]"
        )));
    }
    let r = |theta: f64| tunable_bs_split_ratio(PI, theta);
    // locate the end of the first rising branch
    let n = 400;
    let mut hi = 4.0;
    let mut prev = 0.0;
    for i in 1..=n {
        let t = 4.0 * i as f64 / n as f64;
        let v = r(t);
        if v < prev {
            hi = 4.0 * (i - 1) as f64 / n as f64;
            break;
        }
        prev = v;
    }
    if r(hi) < target_r_at_pi {
        return Err(QfpError::NoRoot(format!(
            "R(π) peaks at {:.4} on (0, 4], below the target {target_r_at_pi}",
            r(hi)
        )));
    }
    let (mut a, mut b) = (0.0, hi);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if r(m) < target_r_at_pi {
            a = m;
        } else {
            b = m;
        }
        if b - a < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (a + b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DftRow {
    pub d: usize,
    pub harmonics: usize,
    pub shaper_channels: usize,
    pub fidelity: Option<f64>,
    pub success: Option<f64>,
    pub error: Option<String>,
}

/// Synthesize `dft(d)` for `d = 2..=d_max` with `d − 1` harmonics.
pub fn dft_scaling_study(d_max: usize, opts: &SynthesisOptions) -> Result<Vec<DftRow>> {
    if !(2..=10).contains(&d_max) {
        return Err(QfpError::InvalidParameter(format!("d_max = {d_max} is outside 2..=10")));
    }
    (2..=d_max)
        .map(|d| {
            let template = CircuitTemplate::dft(d);
            let target = target_gate(GateSpec::Dft { d })?;
            let channels = template
                .slots
                .iter()
                .map(|s| match s {
                    Slot::Shaper { free_bins } => free_bins.len(),
                    Slot::Eom { .. } => 0,
                })
                .sum();
            let (fidelity, success, error) = match synthesize(&template, &target, opts) {
                Ok(r) => (Some(r.fidelity), Some(r.success), None),
                Err(e) => (None, None, Some(e.to_string())),
            };
            Ok(DftRow {
                d,
                harmonics: d - 1,
                shaper_channels: channels,
                fidelity,
                success,
                error,
            })
        })
        .collect()
}
