//! Electro-optic modulators, line-by-line pulse shapers, and their
//! composition into a truncated frequency-bin mode matrix.
//!
//! Sign convention: a temporal phase `φ(t)` is expanded as
//! `e^{iφ(t)} = Σ_k c_k e^{-ikΩt}` and an EOM maps bin amplitudes as
//! `b_n = Σ_{n'} c_{n-n'} a_{n'}`. For a sine drive `Θ sin(hΩt + θ)` the
//! Jacobi–Anger identity then gives `c_{jh} = J_{-j}(Θ) e^{-ijθ}`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{QfpError, Result};
use crate::linalg::{c64, cis, CMatrix};
use crate::special::bessel_j_orders;

/// Default tolerance on the sideband mass discarded beyond the kept orders.
pub const DEFAULT_TAIL_TOLERANCE: f64 = 1e-24;
/// Default truncation tolerance for `compose_circuit`.
pub const DEFAULT_TRUNCATION_TOLERANCE: f64 = 1e-6;
/// Largest sideband order ever kept.
pub const MAX_SIDEBAND_ORDER: usize = 2048;
/// Largest guard-bin count the window auto-growth will try.
pub const MAX_GUARD_BINS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Harmonic {
    /// Multiple of the bin spacing, ≥ 1.
    pub order: u32,
    /// Modulation index in radians.
    pub index: f64,
    /// RF phase in radians.
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum EomDrive {
    /// `φ(t) = Σ_h Θ_h sin(hΩt + θ_h)`
    Harmonics { harmonics: Vec<Harmonic> },
    /// Uniform samples of `φ(t)` over one RF period.
    Sampled { samples: Vec<f64> },
}

impl EomDrive {
    pub fn sine(index: f64, phase: f64) -> Self {
        Self::Harmonics {
            harmonics: vec![Harmonic { order: 1, index, phase }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Harmonics { harmonics } => {
                let mut seen = std::collections::BTreeSet::new();
                for h in harmonics {
                    if h.order == 0 {
                        return Err(QfpError::InvalidParameter("harmonic orders must be ≥ 1".into()));
                    }
                    if !seen.insert(h.order) {
                        return Err(QfpError::InvalidParameter(format!(
                            "harmonic order {} appears twice",
                            h.order
                        )));
                    }
                    if !h.index.is_finite() || !h.phase.is_finite() {
                        return Err(QfpError::InvalidParameter("non-finite harmonic".into()));
                    }
                }
                Ok(())
            }
            Self::Sampled { samples } => {
                if samples.len() < 3 {
                    return Err(QfpError::InvalidParameter(
                        "a sampled drive needs at least 3 samples".into(),
                    ));
                }
                if samples.iter().any(|s| !s.is_finite()) {
                    return Err(QfpError::InvalidParameter("non-finite drive sample".into()));
                }
                Ok(())
            }
        }
    }

    /// Rough sideband reach `Σ_h h|Θ_h|` used for window sizing.
    pub fn reach(&self) -> f64 {
        match self {
            Self::Harmonics { harmonics } => harmonics
                .iter()
                .map(|h| h.order as f64 * h.index.abs())
                .sum(),
            Self::Sampled { samples } => {
                // peak phase slew per sample, rescaled to radians per Ωt
                let n = samples.len();
                let slew = (0..n)
                    .map(|i| (samples[(i + 1) % n] - samples[i]).abs())
                    .fold(0.0, f64::max);
                slew * n as f64 / (2.0 * std::f64::consts::PI)
            }
        }
    }
}

/// Fourier coefficients `c_{-K..=K}` of `e^{iφ(t)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sidebands {
    max_order: usize,
    values: Vec<Complex64>,
}

impl Sidebands {
    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// `c_k`, zero beyond the kept orders.
    pub fn get(&self, k: i64) -> Complex64 {
        if k.unsigned_abs() as usize > self.max_order {
            return Complex64::new(0.0, 0.0);
        }
        self.values[(k + self.max_order as i64) as usize]
    }

    pub fn power(&self) -> f64 {
        self.values.iter().map(|c| c.norm_sqr()).sum()
    }

    fn identity() -> Self {
        Self {
            max_order: 0,
            values: vec![c64(1.0, 0.0)],
        }
    }

    /// Keep `|k| ≤ order`, returning the discarded power.
    fn truncated(&self, order: usize) -> (Self, f64) {
        if order >= self.max_order {
            return (self.clone(), 0.0);
        }
        let lo = self.max_order - order;
        let values = self.values[lo..lo + 2 * order + 1].to_vec();
        let tail: f64 = self.values[..lo]
            .iter()
            .chain(&self.values[lo + 2 * order + 1..])
            .map(|c| c.norm_sqr())
            .sum();
        (
            Self {
                max_order: order,
                values,
            },
            tail,
        )
    }

    /// Smallest order whose discarded power is below `tol`.
    fn order_for_tail(&self, tol: f64) -> usize {
        let mut tail = 0.0;
        for k in (1..=self.max_order).rev() {
            let ring = self.get(k as i64).norm_sqr() + self.get(-(k as i64)).norm_sqr();
            if tail + ring > tol {
                return k;
            }
            tail += ring;
        }
        0
    }
}

/// Sideband coefficients of a drive.
///
/// With `max_order = Some(K)` exactly `K` orders are kept and a discarded
/// tail above `tol` is an error. With `None` the order grows until the tail
/// is below `tol`.
pub fn eom_coefficients(drive: &EomDrive, max_order: Option<usize>, tol: f64) -> Result<Sidebands> {
    drive.validate()?;
    let full = match drive {
        EomDrive::Harmonics { harmonics } => harmonic_sidebands(harmonics),
        EomDrive::Sampled { samples } => {
            if let Some(k) = max_order {
                if samples.len() < 2 * k + 1 {
                    return Err(QfpError::InvalidParameter(format!(
                        "{} samples cannot resolve sideband order {k}",
                        samples.len()
                    )));
                }
            }
            sampled_sidebands(samples)
        }
    };
    let order = match max_order {
        Some(k) => k,
        None => {
            let k = full.order_for_tail(tol);
            if k > MAX_SIDEBAND_ORDER {
                MAX_SIDEBAND_ORDER
            } else {
                k
            }
        }
    };
    let (kept, tail) = full.truncated(order);
    if tail > tol {
        return Err(QfpError::TailMass {
            order,
            tail,
            tolerance: tol,
        });
    }
    Ok(kept)
}

/// Analytic expansion: each harmonic contributes `J_{-j}(Θ) e^{-ijθ}` at
/// order `jh`; harmonics combine by convolution.
fn harmonic_sidebands(harmonics: &[Harmonic]) -> Sidebands {
    let mut acc = Sidebands::identity();
    for h in harmonics {
        if h.index == 0.0 {
            continue;
        }
        let jmax = h.index.abs().ceil() as usize + 30;
        let bess = bessel_j_orders(jmax, h.index);
        let order = h.order as usize;
        let reach = jmax * order;
        let mut single = vec![c64(0.0, 0.0); 2 * reach + 1];
        for j in -(jmax as i64)..=(jmax as i64) {
            let jabs = j.unsigned_abs() as usize;
            let mag = if j > 0 && jabs % 2 == 1 { -bess[jabs] } else { bess[jabs] };
            single[(j * order as i64 + reach as i64) as usize] = mag * cis(-(j as f64) * h.phase);
        }
        let new_max = acc.max_order + reach;
        let mut out = vec![c64(0.0, 0.0); 2 * new_max + 1];
        for (a, &ca) in acc.values.iter().enumerate() {
            if ca.norm_sqr() < 1e-40 {
                continue;
            }
            for (b, &cb) in single.iter().enumerate() {
                if cb.norm_sqr() < 1e-40 {
                    continue;
                }
                out[a + b] += ca * cb;
            }
        }
        acc = Sidebands {
            max_order: new_max,
            values: out,
        };
        // drop the negligible outer orders so later convolutions stay small
        let k = acc.order_for_tail(1e-34);
        acc = acc.truncated(k).0;
    }
    acc
}

/// DFT of uniformly sampled `e^{iφ}`: `c_k = (1/N) Σ_n e^{iφ_n} e^{+2πikn/N}`.
fn sampled_sidebands(samples: &[f64]) -> Sidebands {
    let n = samples.len();
    let mut buf: Vec<Complex64> = samples.iter().map(|&p| cis(p)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let kmax = (n - 1) / 2;
    let values = (-(kmax as i64)..=kmax as i64)
        .map(|k| buf[(-k).rem_euclid(n as i64) as usize] / n as f64)
        .collect();
    Sidebands {
        max_order: kmax,
        values,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShaperBin {
    pub bin: i64,
    pub phase: f64,
    #[serde(default = "unit_transmission")]
    pub transmission: f64,
}

fn unit_transmission() -> f64 {
    1.0
}

/// Constant phase added to every bin at or above `from_bin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseStep {
    pub from_bin: i64,
    pub phase: f64,
}

/// Line-by-line spectral filter. Bins not listed pass with unit transmission
/// and the step phase only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShaperMask {
    #[serde(default)]
    pub bins: Vec<ShaperBin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<PhaseStep>,
}

impl ShaperMask {
    /// Phases on consecutive bins starting at `first_bin`.
    pub fn from_phases(first_bin: i64, phases: &[f64]) -> Self {
        Self {
            bins: phases
                .iter()
                .enumerate()
                .map(|(i, &phase)| ShaperBin {
                    bin: first_bin + i as i64,
                    phase,
                    transmission: 1.0,
                })
                .collect(),
            step: None,
        }
    }

    pub fn step(from_bin: i64, phase: f64) -> Self {
        Self {
            bins: Vec::new(),
            step: Some(PhaseStep { from_bin, phase }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for b in &self.bins {
            if !b.phase.is_finite() {
                return Err(QfpError::InvalidParameter(format!("non-finite phase on bin {}", b.bin)));
            }
            if !(0.0..=1.0).contains(&b.transmission) {
                return Err(QfpError::InvalidParameter(format!(
                    "transmission {} on bin {} is outside [0, 1]",
                    b.transmission, b.bin
                )));
            }
            if !seen.insert(b.bin) {
                return Err(QfpError::InvalidParameter(format!("bin {} listed twice", b.bin)));
            }
        }
        Ok(())
    }

    /// Complex transmission `t_n e^{iφ_n}` of a bin.
    pub fn response(&self, bin: i64) -> Complex64 {
        let mut phase = match self.step {
            Some(s) if bin >= s.from_bin => s.phase,
            _ => 0.0,
        };
        let mut t = 1.0;
        if let Some(b) = self.bins.iter().find(|b| b.bin == bin) {
            phase += b.phase;
            t = b.transmission;
        }
        Complex64::from_polar(t, phase)
    }

    fn is_phase_only(&self) -> bool {
        self.bins.iter().all(|b| b.transmission == 1.0)
    }

    fn phase_only(&self) -> Self {
        let mut m = self.clone();
        for b in &mut m.bins {
            b.transmission = 1.0;
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Element {
    Eom(EomDrive),
    Shaper(ShaperMask),
}

/// Simulation window: interior bins `first..=last` plus `guard` bins on
/// each side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub first: i64,
    pub last: i64,
    pub guard: usize,
}

impl Window {
    pub fn new(first: i64, last: i64, guard: usize) -> Self {
        Self { first, last, guard }
    }

    pub fn lo(&self) -> i64 {
        self.first - self.guard as i64
    }

    pub fn hi(&self) -> i64 {
        self.last + self.guard as i64
    }

    pub fn len(&self) -> usize {
        (self.hi() - self.lo() + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.last < self.first
    }

    pub fn position(&self, bin: i64) -> Option<usize> {
        (self.lo()..=self.hi()).contains(&bin).then(|| (bin - self.lo()) as usize)
    }

    pub fn bin(&self, pos: usize) -> i64 {
        self.lo() + pos as i64
    }

    pub fn interior(&self) -> impl Iterator<Item = i64> {
        self.first..=self.last
    }

    pub fn with_guard(&self, guard: usize) -> Self {
        Self { guard, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QfpCircuit {
    pub elements: Vec<Element>,
    pub window: Window,
}

impl QfpCircuit {
    pub fn new(elements: Vec<Element>, window: Window) -> Self {
        Self { elements, window }
    }

    /// Circuit over interior bins `first..=last` with the default guard
    /// `ceil(2 Σ h|Θ_h|) + 4`, summed over all modulators.
    pub fn with_default_window(elements: Vec<Element>, first: i64, last: i64) -> Self {
        let guard = default_guard(&elements);
        Self::new(elements, Window::new(first, last, guard))
    }

    pub fn validate(&self) -> Result<()> {
        if self.window.is_empty() {
            return Err(QfpError::WindowMismatch(format!(
                "window {}..={} is empty",
                self.window.first, self.window.last
            )));
        }
        for e in &self.elements {
            match e {
                Element::Eom(d) => d.validate()?,
                Element::Shaper(m) => {
                    m.validate()?;
                    for b in &m.bins {
                        if self.window.position(b.bin).is_none() {
                            return Err(QfpError::WindowMismatch(format!(
                                "shaper bin {} outside window {}..={}",
                                b.bin,
                                self.window.lo(),
                                self.window.hi()
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn phase_only(&self) -> Self {
        Self {
            elements: self
                .elements
                .iter()
                .map(|e| match e {
                    Element::Shaper(m) => Element::Shaper(m.phase_only()),
                    other => other.clone(),
                })
                .collect(),
            window: self.window,
        }
    }

    fn is_phase_only(&self) -> bool {
        self.elements.iter().all(|e| match e {
            Element::Shaper(m) => m.is_phase_only(),
            Element::Eom(_) => true,
        })
    }
}

pub fn default_guard(elements: &[Element]) -> usize {
    let reach: f64 = elements
        .iter()
        .map(|e| match e {
            Element::Eom(d) => d.reach(),
            Element::Shaper(_) => 0.0,
        })
        .sum();
    (2.0 * reach).ceil() as usize + 4
}

/// Truncated single-photon transfer matrix over a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeMatrix {
    #[serde(with = "crate::io::complex_matrix")]
    entries: CMatrix,
    window: Window,
    truncation_defect: f64,
}

impl ModeMatrix {
    pub fn new(entries: CMatrix, window: Window, truncation_defect: f64) -> Result<Self> {
        if entries.nrows() != window.len() || entries.ncols() != window.len() {
            return Err(QfpError::Dimension(format!(
                "{}x{} entries for a {}-bin window",
                entries.nrows(),
                entries.ncols(),
                window.len()
            )));
        }
        Ok(Self {
            entries,
            window,
            truncation_defect,
        })
    }

    pub fn identity(window: Window) -> Self {
        Self {
            entries: DMatrix::identity(window.len(), window.len()),
            window,
            truncation_defect: 0.0,
        }
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn truncation_defect(&self) -> f64 {
        self.truncation_defect
    }

    pub fn bins(&self) -> impl Iterator<Item = i64> {
        self.window.lo()..=self.window.hi()
    }

    /// `V_{m m'}` by bin index.
    pub fn get(&self, out_bin: i64, in_bin: i64) -> Result<Complex64> {
        let r = self.window.position(out_bin).ok_or(QfpError::BinCoverage(out_bin))?;
        let c = self.window.position(in_bin).ok_or(QfpError::BinCoverage(in_bin))?;
        Ok(self.entries[(r, c)])
    }

    /// Sub-matrix with rows `out_bins` and columns `in_bins`.
    pub fn block(&self, out_bins: &[i64], in_bins: &[i64]) -> Result<CMatrix> {
        let rows = positions(&self.window, out_bins)?;
        let cols = positions(&self.window, in_bins)?;
        Ok(DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
            self.entries[(rows[i], cols[j])]
        }))
    }

    /// `V₂ · V₁` where `self` is applied second.
    pub fn then_after(&self, first: &ModeMatrix) -> Result<ModeMatrix> {
        if self.window != first.window {
            return Err(QfpError::WindowMismatch("composing matrices over different windows".into()));
        }
        Ok(ModeMatrix {
            entries: &self.entries * &first.entries,
            window: self.window,
            truncation_defect: column_deficit(&(&self.entries * &first.entries), &self.window, self.window.interior()),
        })
    }
}

fn positions(window: &Window, bins: &[i64]) -> Result<Vec<usize>> {
    bins.iter()
        .map(|&b| window.position(b).ok_or(QfpError::BinCoverage(b)))
        .collect()
}

fn column_deficit(entries: &CMatrix, window: &Window, inputs: impl Iterator<Item = i64>) -> f64 {
    inputs
        .filter_map(|b| window.position(b))
        .map(|c| (1.0 - entries.column(c).iter().map(|z| z.norm_sqr()).sum::<f64>()).abs())
        .fold(0.0, f64::max)
}

pub fn apply_shaper(mask: &ShaperMask, window: &Window) -> Result<ModeMatrix> {
    mask.validate()?;
    for b in &mask.bins {
        if window.position(b.bin).is_none() {
            return Err(QfpError::WindowMismatch(format!("shaper bin {} outside window", b.bin)));
        }
    }
    let n = window.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = mask.response(window.bin(i));
    }
    let defect = column_deficit(&m, window, window.interior());
    ModeMatrix::new(m, *window, defect)
}

/// Dense matrix of one element over the window (banded Toeplitz for EOMs).
pub fn element_matrix(element: &Element, window: &Window) -> Result<CMatrix> {
    let n = window.len();
    let mut m = DMatrix::zeros(n, n);
    match element {
        Element::Shaper(mask) => return Ok(apply_shaper(mask, window)?.entries),
        Element::Eom(drive) => {
            let c = window_sidebands(drive, window)?;
            for i in 0..n {
                for j in 0..n {
                    m[(i, j)] = c.get(i as i64 - j as i64);
                }
            }
        }
    }
    Ok(m)
}

fn window_sidebands(drive: &EomDrive, window: &Window) -> Result<Sidebands> {
    let c = eom_coefficients(drive, None, DEFAULT_TAIL_TOLERANCE)?;
    // orders beyond the window width can never land inside it
    let limit = window.len().saturating_sub(1);
    Ok(if c.max_order() > limit { c.truncated(limit).0 } else { c })
}

/// Precomputed per-element operators for repeated propagation.
enum Stage {
    Eom(Sidebands),
    Shaper(Vec<Complex64>),
}

fn stages(circuit: &QfpCircuit) -> Result<Vec<Stage>> {
    circuit.validate()?;
    let w = circuit.window;
    circuit
        .elements
        .iter()
        .map(|e| {
            Ok(match e {
                Element::Eom(d) => Stage::Eom(window_sidebands(d, &w)?),
                Element::Shaper(m) => Stage::Shaper((0..w.len()).map(|i| m.response(w.bin(i))).collect()),
            })
        })
        .collect()
}

fn apply_stage(stage: &Stage, input: &[Complex64], out: &mut [Complex64]) {
    match stage {
        Stage::Shaper(t) => {
            for ((o, i), t) in out.iter_mut().zip(input).zip(t) {
                *o = i * t;
            }
        }
        Stage::Eom(c) => {
            let n = input.len() as i64;
            let k = c.max_order() as i64;
            for (i, o) in out.iter_mut().enumerate() {
                let i = i as i64;
                let mut acc = c64(0.0, 0.0);
                for j in (i - k).max(0)..=(i + k).min(n - 1) {
                    let a = input[j as usize];
                    if a.re != 0.0 || a.im != 0.0 {
                        acc += c.get(i - j) * a;
                    }
                }
                *o = acc;
            }
        }
    }
}

/// Columns `V[:, in_bins]` obtained by propagating unit inputs through the
/// elements, without forming the full matrix.
pub fn propagate_columns(circuit: &QfpCircuit, in_bins: &[i64]) -> Result<CMatrix> {
    let st = stages(circuit)?;
    propagate_with(&st, &circuit.window, in_bins, |_, _, _| {})
}

fn propagate_with(
    st: &[Stage],
    window: &Window,
    in_bins: &[i64],
    mut observe: impl FnMut(usize, usize, &[Complex64]),
) -> Result<CMatrix> {
    let n = window.len();
    let cols = positions(window, in_bins)?;
    let mut out = DMatrix::zeros(n, cols.len());
    let mut a = vec![c64(0.0, 0.0); n];
    let mut b = vec![c64(0.0, 0.0); n];
    for (ci, &c) in cols.iter().enumerate() {
        a.iter_mut().for_each(|z| *z = c64(0.0, 0.0));
        a[c] = c64(1.0, 0.0);
        for (si, s) in st.iter().enumerate() {
            apply_stage(s, &a, &mut b);
            std::mem::swap(&mut a, &mut b);
            observe(si, ci, &a);
        }
        for (r, z) in a.iter().enumerate() {
            out[(r, ci)] = *z;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComposeOptions {
    pub truncation_tolerance: f64,
}

impl Default for ComposeOptions {
    fn default() -> Self {
        Self {
            truncation_tolerance: DEFAULT_TRUNCATION_TOLERANCE,
        }
    }
}

/// Full mode matrix of a circuit. The truncation defect is evaluated over
/// `inputs` (default: the interior bins) with any amplitude masks opened.
pub fn compose_circuit(circuit: &QfpCircuit, inputs: Option<&[i64]>, opts: ComposeOptions) -> Result<ModeMatrix> {
    let w = circuit.window;
    let all: Vec<i64> = (w.lo()..=w.hi()).collect();
    let entries = propagate_columns(circuit, &all)?;
    let declared: Vec<i64> = inputs.map_or_else(|| w.interior().collect(), |b| b.to_vec());
    let defect = if circuit.is_phase_only() {
        column_deficit(&entries, &w, declared.iter().copied())
    } else {
        let open = propagate_columns(&circuit.phase_only(), &declared)?;
        (0..open.ncols())
            .map(|c| (1.0 - open.column(c).iter().map(|z| z.norm_sqr()).sum::<f64>()).abs())
            .fold(0.0, f64::max)
    };
    if defect > opts.truncation_tolerance {
        return Err(QfpError::Truncation {
            defect,
            tolerance: opts.truncation_tolerance,
        });
    }
    ModeMatrix::new(entries, w, defect)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EdgePower {
    pub stage: usize,
    pub input_bin: i64,
    pub low_edge: f64,
    pub high_edge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncationReport {
    pub pass: bool,
    pub tolerance: f64,
    pub max_edge_power: f64,
    pub stages: Vec<EdgePower>,
}

/// Power left in the outermost window bin on each side after every EOM
/// stage, for unit-power inputs on each declared bin.
pub fn truncation_check(circuit: &QfpCircuit, inputs: &[i64], tolerance: f64) -> Result<TruncationReport> {
    let st = stages(circuit)?;
    let w = circuit.window;
    let n = w.len();
    let mut records = Vec::new();
    propagate_with(&st, &w, inputs, |si, ci, amp| {
        if matches!(st[si], Stage::Eom(_)) {
            records.push(EdgePower {
                stage: si,
                input_bin: inputs[ci],
                low_edge: amp[0].norm_sqr(),
                high_edge: amp[n - 1].norm_sqr(),
            });
        }
    })?;
    let max_edge_power = records
        .iter()
        .map(|r| r.low_edge.max(r.high_edge))
        .fold(0.0, f64::max);
    Ok(TruncationReport {
        pass: max_edge_power < tolerance,
        tolerance,
        max_edge_power,
        stages: records,
    })
}

/// Grow the guard band (starting from the default) until the truncation
/// check passes, then compose.
pub fn compose_auto(circuit: &QfpCircuit, inputs: Option<&[i64]>, opts: ComposeOptions) -> Result<ModeMatrix> {
    let declared: Vec<i64> = inputs.map_or_else(|| circuit.window.interior().collect(), |b| b.to_vec());
    let mut c = circuit.clone();
    c.window.guard = c.window.guard.max(default_guard(&c.elements));
    loop {
        let report = truncation_check(&c, &declared, opts.truncation_tolerance)?;
        if report.pass {
            return compose_circuit(&c, Some(&declared), opts);
        }
        let next = (c.window.guard * 2).max(8);
        if next > MAX_GUARD_BINS {
            return Err(QfpError::Resource(format!(
                "truncation still failing with {} guard bins",
                c.window.guard
            )));
        }
        c.window.guard = next;
    }
}

/// `max |(V†V − I)_{jk}|` over interior input bins.
pub fn unitarity_defect(v: &ModeMatrix) -> f64 {
    let w = v.window();
    let cols: Vec<usize> = w.interior().filter_map(|b| w.position(b)).collect();
    let mut worst = 0.0_f64;
    for (a, &j) in cols.iter().enumerate() {
        for &k in &cols[a..] {
            let dot: Complex64 = v
                .entries
                .column(j)
                .iter()
                .zip(v.entries.column(k).iter())
                .map(|(x, y)| x.conj() * y)
                .sum();
            let target = if j == k { 1.0 } else { 0.0 };
            worst = worst.max((dot - target).norm());
        }
    }
    worst
}

/// Three-element tunable beamsplitter: sine EOM, phase step `α` on bins
/// `n ≥ 1`, then the π-shifted sine EOM.
pub fn tunable_bs_circuit(alpha: f64, theta: f64) -> QfpCircuit {
    let elements = vec![
        Element::Eom(EomDrive::sine(theta, 0.0)),
        Element::Shaper(ShaperMask::step(1, alpha)),
        Element::Eom(EomDrive::sine(theta, std::f64::consts::PI)),
    ];
    QfpCircuit::with_default_window(elements, 0, 1)
}

/// Per-bin phases keyed by bin, for building masks from parameter vectors.
pub fn mask_from_map(phases: &BTreeMap<i64, f64>) -> ShaperMask {
    ShaperMask {
        bins: phases
            .iter()
            .map(|(&bin, &phase)| ShaperBin {
                bin,
                phase,
                transmission: 1.0,
            })
            .collect(),
        step: None,
    }
}
