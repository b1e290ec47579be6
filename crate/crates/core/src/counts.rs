//! Photon-counting datasets: Pauli-projection counts for state and process
//! tomography and the singles/coincidence model of a coincidence-basis CNOT.
//!
//! All models are linear in the small per-frame probabilities (pair
//! generation, efficiencies, dark counts); a regime guard rejects inputs
//! outside that domain.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{DensityMatrix, KrausSet};
use crate::error::{QfpError, Result};
use crate::linalg::{c64, trace, CMatrix};
use crate::rng::substream;

/// Detection frame of the time-tagging electronics, in seconds.
pub const DEFAULT_FRAME: f64 = 1.5e-9;
/// Largest per-frame probability for which the linearized model is used.
pub const REGIME_LIMIT: f64 = 0.1;
/// Success factor of the single-EOM projection gates used on X and Y.
pub const DEFAULT_PROJECTION_SUCCESS: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub efficiency: f64,
    /// Dark-count probability per frame.
    pub dark_probability: f64,
    /// Frame duration in seconds.
    pub frame: f64,
    /// Integration time in seconds.
    pub integration: f64,
}

impl DetectorModel {
    pub fn new(efficiency: f64, dark_probability: f64, frame: f64, integration: f64) -> Result<Self> {
        let m = Self {
            efficiency,
            dark_probability,
            frame,
            integration,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn ideal(integration: f64) -> Self {
        Self {
            efficiency: 1.0,
            dark_probability: 0.0,
            frame: DEFAULT_FRAME,
            integration,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(QfpError::InvalidParameter(format!("efficiency {} outside [0, 1]", self.efficiency)));
        }
        if !(0.0..=REGIME_LIMIT).contains(&self.dark_probability) {
            return Err(QfpError::Regime(format!(
                "dark-count probability {} outside [0, {REGIME_LIMIT}]",
                self.dark_probability
            )));
        }
        if !(self.frame > 0.0 && self.frame.is_finite()) || !(self.integration >= 0.0 && self.integration.is_finite()) {
            return Err(QfpError::InvalidParameter("frame must be positive and integration non-negative".into()));
        }
        Ok(())
    }

    pub fn frames(&self) -> f64 {
        self.integration / self.frame
    }

    /// Expected dark counts per detector over the integration time.
    pub fn dark_counts(&self) -> f64 {
        self.dark_probability * self.frames()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSourceModel {
    /// Pair-generation probability per frame.
    pub mu: f64,
    pub detector_a: DetectorModel,
    pub detector_b: DetectorModel,
}

impl PairSourceModel {
    pub fn new(mu: f64, detector_a: DetectorModel, detector_b: DetectorModel) -> Result<Self> {
        let s = Self {
            mu,
            detector_a,
            detector_b,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=REGIME_LIMIT).contains(&self.mu) {
            return Err(QfpError::Regime(format!("pair probability {} outside [0, {REGIME_LIMIT}]", self.mu)));
        }
        self.detector_a.validate()?;
        self.detector_b.validate()
    }

    /// Source and detector settings in the range of the CNOT experiment.
    pub fn typical(integration: f64) -> Self {
        let det = DetectorModel {
            efficiency: 0.01,
            dark_probability: 1e-6,
            frame: DEFAULT_FRAME,
            integration,
        };
        Self {
            mu: 1e-3,
            detector_a: det,
            detector_b: det,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PauliAxis {
    X,
    Y,
    Z,
}

impl PauliAxis {
    pub const ALL: [PauliAxis; 3] = [PauliAxis::Z, PauliAxis::X, PauliAxis::Y];

    /// Labels of the `+1` and `−1` eigenvectors.
    pub fn outcome_labels(self) -> [&'static str; 2] {
        match self {
            PauliAxis::Z => ["0", "1"],
            PauliAxis::X => ["+", "-"],
            PauliAxis::Y => ["+i", "-i"],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PauliAxis::X => "X",
            PauliAxis::Y => "Y",
            PauliAxis::Z => "Z",
        }
    }

    pub fn from_label(s: &str) -> Result<Self> {
        match s {
            "X" => Ok(PauliAxis::X),
            "Y" => Ok(PauliAxis::Y),
            "Z" => Ok(PauliAxis::Z),
            _ => Err(QfpError::UnknownLabel(s.into())),
        }
    }

    /// Gate rotating the axis eigenbasis onto the computational basis.
    pub fn rotation(self) -> CMatrix {
        let r = 1.0 / 2f64.sqrt();
        let h = DMatrix::from_row_slice(2, 2, &[c64(r, 0.0), c64(r, 0.0), c64(r, 0.0), c64(-r, 0.0)]);
        match self {
            PauliAxis::Z => DMatrix::identity(2, 2),
            PauliAxis::X => h,
            PauliAxis::Y => {
                let sdg = DMatrix::from_row_slice(2, 2, &[c64(1.0, 0.0), c64(0.0, 0.0), c64(0.0, 0.0), c64(0.0, -1.0)]);
                h * sdg
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSetting {
    pub axis: PauliAxis,
    /// Gate chain applied before computational-basis demultiplexing.
    pub gate: ProjectionGate,
    /// Probability that the projection gate keeps the photon in the qubit space.
    pub success: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionGate {
    Identity,
    Hadamard,
    HadamardSdg,
}

impl MeasurementSetting {
    pub fn new(axis: PauliAxis, success: f64) -> Result<Self> {
        if !(success > 0.0 && success <= 1.0) {
            return Err(QfpError::InvalidParameter(format!("success factor {success} outside (0, 1]")));
        }
        let gate = match axis {
            PauliAxis::Z => ProjectionGate::Identity,
            PauliAxis::X => ProjectionGate::Hadamard,
            PauliAxis::Y => ProjectionGate::HadamardSdg,
        };
        Ok(Self { axis, gate, success })
    }

    /// Z measured directly, X and Y through the probabilistic Hadamard.
    pub fn standard(axis: PauliAxis) -> Self {
        let success = if axis == PauliAxis::Z { 1.0 } else { DEFAULT_PROJECTION_SUCCESS };
        Self::new(axis, success).expect("default success factor is valid")
    }

    pub fn standard_set() -> Vec<Self> {
        PauliAxis::ALL.iter().map(|&a| Self::standard(a)).collect()
    }
}

/// `(⟨e₊|ρ|e₊⟩, ⟨e₋|ρ|e₋⟩)` for the setting's axis.
pub fn projection_probs(rho: &DensityMatrix, setting: &MeasurementSetting) -> Result<(f64, f64)> {
    projection_probs_raw(rho.matrix(), setting.axis)
}

fn projection_probs_raw(rho: &CMatrix, axis: PauliAxis) -> Result<(f64, f64)> {
    if rho.shape() != (2, 2) {
        return Err(QfpError::Dimension("projections act on qubit states".into()));
    }
    let g = axis.rotation();
    let r = &g * rho * g.adjoint();
    Ok((r[(0, 0)].re.clamp(0.0, 1.0), r[(1, 1)].re.clamp(0.0, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    StateTomography,
    ProcessTomography,
    CnotTruthTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMetadata {
    /// Photon flux (per second) reaching the measurement, or pair flux for CNOT data.
    pub flux: f64,
    pub integration: f64,
    pub seed: u64,
    #[serde(default)]
    pub detector: Option<DetectorModel>,
    #[serde(default)]
    pub source: Option<PairSourceModel>,
    #[serde(default)]
    pub settings: Vec<MeasurementSetting>,
    /// Set when the expected counts per frame exceeded `REGIME_LIMIT`.
    #[serde(default)]
    pub regime_warning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub kind: RecordKind,
    /// setting → outcome → count
    pub counts: BTreeMap<String, BTreeMap<String, u64>>,
    pub metadata: RecordMetadata,
}

impl CountRecord {
    pub fn get(&self, setting: &str, outcome: &str) -> Option<u64> {
        self.counts.get(setting)?.get(outcome).copied()
    }

    pub fn require(&self, setting: &str, outcome: &str) -> Result<u64> {
        self.get(setting, outcome)
            .ok_or_else(|| QfpError::InsufficientData(format!("no count for setting {setting}, outcome {outcome}")))
    }

    pub fn total(&self) -> u64 {
        self.counts.values().flat_map(|m| m.values()).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("setting,outcome,count\n");
        for (setting, outcomes) in &self.counts {
            for (outcome, n) in outcomes {
                s.push_str(&format!("{setting},{outcome},{n}\n"));
            }
        }
        s
    }
}

fn poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

fn check_flux(flux: f64, detector: &DetectorModel) -> Result<bool> {
    if !(flux >= 0.0 && flux.is_finite()) {
        return Err(QfpError::InvalidParameter(format!("flux {flux} must be finite and non-negative")));
    }
    detector.validate()?;
    let per_frame = flux * detector.frame;
    if per_frame > REGIME_LIMIT {
        log::warn!("expected {per_frame:.3} photons per frame exceeds the linear regime");
        return Ok(true);
    }
    Ok(false)
}

/// Mean count for one projection outcome.
pub fn expected_projection_count(flux: f64, detector: &DetectorModel, success: f64, p: f64) -> f64 {
    flux * detector.integration * success * detector.efficiency * p + detector.dark_counts()
}

/// Poisson counts for each setting and outcome. Setting `i` draws from
/// substream `("qst", i)` of `seed`.
pub fn simulate_qst_counts(
    rho: &DensityMatrix,
    settings: &[MeasurementSetting],
    flux: f64,
    detector: &DetectorModel,
    seed: u64,
) -> Result<CountRecord> {
    let regime_warning = check_flux(flux, detector)?;
    let rows: Vec<(String, BTreeMap<String, u64>)> = settings
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = substream(seed, "qst", i as u64);
            let (p0, p1) = projection_probs(rho, s)?;
            let labels = s.axis.outcome_labels();
            let mut m = BTreeMap::new();
            for (label, p) in labels.iter().zip([p0, p1]) {
                m.insert(label.to_string(), poisson(expected_projection_count(flux, detector, s.success, p), &mut rng));
            }
            Ok((s.axis.label().to_string(), m))
        })
        .collect::<Result<_>>()?;
    Ok(CountRecord {
        kind: RecordKind::StateTomography,
        counts: rows.into_iter().collect(),
        metadata: RecordMetadata {
            flux,
            integration: detector.integration,
            seed,
            detector: Some(*detector),
            source: None,
            settings: settings.to_vec(),
            regime_warning,
        },
    })
}

/// The six Pauli eigenstates used as process-tomography inputs, labelled
/// `0, 1, +, -, +i, -i`.
pub fn tomography_inputs() -> Vec<(String, DensityMatrix)> {
    let r = 1.0 / 2f64.sqrt();
    let kets = [
        ("0", [c64(1.0, 0.0), c64(0.0, 0.0)]),
        ("1", [c64(0.0, 0.0), c64(1.0, 0.0)]),
        ("+", [c64(r, 0.0), c64(r, 0.0)]),
        ("-", [c64(r, 0.0), c64(-r, 0.0)]),
        ("+i", [c64(r, 0.0), c64(0.0, r)]),
        ("-i", [c64(r, 0.0), c64(0.0, -r)]),
    ];
    kets.iter()
        .map(|(l, k)| (l.to_string(), DensityMatrix::pure(k).expect("normalized ket")))
        .collect()
}

/// Projection counts for all six inputs through `process`, whose Kraus
/// operators need not be trace preserving: an input's flux is scaled by its
/// postselection probability `Tr Σ A ρ A†`. Input `i` draws from substream
/// `("qpt", i)` of `seed`.
pub fn simulate_qpt_counts(
    process: &KrausSet,
    settings: &[MeasurementSetting],
    flux: f64,
    detector: &DetectorModel,
    seed: u64,
) -> Result<CountRecord> {
    if process.d_in() != 2 || process.d_out() != 2 {
        return Err(QfpError::Dimension("process tomography is implemented for qubit channels".into()));
    }
    let regime_warning = check_flux(flux, detector)?;
    let inputs = tomography_inputs();
    let rows: Vec<(String, BTreeMap<String, u64>)> = inputs
        .par_iter()
        .enumerate()
        .map(|(i, (label, rho))| {
            let mut rng = substream(seed, "qpt", i as u64);
            let out = process
                .ops
                .iter()
                .fold(DMatrix::zeros(2, 2), |acc, a| acc + a * rho.matrix() * a.adjoint());
            let kept = trace(&out).re.max(0.0);
            let mut m = BTreeMap::new();
            for s in settings {
                let (p0, p1) = if kept > 0.0 {
                    projection_probs_raw(&(&out * c64(1.0 / kept, 0.0)), s.axis)?
                } else {
                    (0.0, 0.0)
                };
                for (l, p) in s.axis.outcome_labels().iter().zip([p0, p1]) {
                    let lambda = expected_projection_count(flux * kept, detector, s.success, p);
                    m.insert(l.to_string(), poisson(lambda, &mut rng));
                }
            }
            Ok((label.clone(), m))
        })
        .collect::<Result<_>>()?;
    Ok(CountRecord {
        kind: RecordKind::ProcessTomography,
        counts: rows.into_iter().collect(),
        metadata: RecordMetadata {
            flux,
            integration: detector.integration,
            seed,
            detector: Some(*detector),
            source: None,
            settings: settings.to_vec(),
            regime_warning,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CnotClickProbs {
    pub p_a: f64,
    pub p_b: f64,
    pub p_ab: f64,
    /// Photons routed to the monitored control bin.
    pub q_a: f64,
    /// Photons routed to the monitored target bin.
    pub q_b: f64,
    /// Correlated two-photon coincidence probability.
    pub q_ab: f64,
}

/// Routing probabilities of the pair `|kl⟩` into the monitored bins `(C_r, T_s)`.
///
/// `v` is the 4×4 mode matrix over `(C0, C1, T0, T1)`. Singles add the
/// powers either photon sends to the monitored bin; the coincidence term is
/// the squared permanent of the 2×2 submatrix, i.e. the two-photon transfer
/// element.
pub fn cnot_routing(v: &CMatrix, kl: (usize, usize), rs: (usize, usize)) -> (f64, f64, f64) {
    let (ic, it) = (kl.0, 2 + kl.1);
    let (oc, ot) = (rs.0, 2 + rs.1);
    let q_a = v[(oc, ic)].norm_sqr() + v[(oc, it)].norm_sqr();
    let q_b = v[(ot, ic)].norm_sqr() + v[(ot, it)].norm_sqr();
    let q_ab = (v[(oc, ic)] * v[(ot, it)] + v[(oc, it)] * v[(ot, ic)]).norm_sqr();
    (q_a, q_b, q_ab)
}

/// Linearized click probabilities per frame: pair plus dark contributions
/// for the singles and correlated plus `2 p_A p_B` accidental coincidences.
pub fn cnot_click_probs(v: &CMatrix, kl: (usize, usize), rs: (usize, usize), source: &PairSourceModel) -> Result<CnotClickProbs> {
    if v.shape() != (4, 4) {
        return Err(QfpError::Dimension(format!("CNOT mode matrix must be 4×4, got {:?}", v.shape())));
    }
    if kl.0 > 1 || kl.1 > 1 || rs.0 > 1 || rs.1 > 1 {
        return Err(QfpError::InvalidParameter("logical indices must be 0 or 1".into()));
    }
    source.validate()?;
    Ok(click_probs_unchecked(v, kl, rs, source.mu, source.detector_a.efficiency, source.detector_b.efficiency, source.detector_a.dark_probability, source.detector_b.dark_probability))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn click_probs_unchecked(
    v: &CMatrix,
    kl: (usize, usize),
    rs: (usize, usize),
    mu: f64,
    eta_a: f64,
    eta_b: f64,
    d_a: f64,
    d_b: f64,
) -> CnotClickProbs {
    let (q_a, q_b, q_ab) = cnot_routing(v, kl, rs);
    let p_a = mu * eta_a * q_a + d_a;
    let p_b = mu * eta_b * q_b + d_b;
    let p_ab = mu * eta_a * eta_b * q_ab + 2.0 * p_a * p_b;
    CnotClickProbs {
        p_a,
        p_b,
        p_ab,
        q_a,
        q_b,
        q_ab,
    }
}

/// Mode matrix over `(C0, C1, T0, T1)` of the coincidence-basis CNOT: the
/// control-one and target bins meet on a 1/3 beamsplitter in the target's
/// diagonal basis while the other two modes are attenuated to 1/3 power.
/// Its two-photon lift is `CNOT/3`.
pub fn ideal_cnot_mode_matrix() -> CMatrix {
    let a = 1.0 / 3f64.sqrt();
    let b = (2.0 / 3.0f64).sqrt();
    let cz = DMatrix::from_row_slice(
        4,
        4,
        &[
            [a, 0.0, 0.0, 0.0],
            [0.0, -a, b, 0.0],
            [0.0, b, a, 0.0],
            [0.0, 0.0, 0.0, a],
        ]
        .concat()
        .iter()
        .map(|&x| c64(x, 0.0))
        .collect::<Vec<_>>(),
    );
    let r = 1.0 / 2f64.sqrt();
    let mut h = DMatrix::identity(4, 4);
    h[(2, 2)] = c64(r, 0.0);
    h[(2, 3)] = c64(r, 0.0);
    h[(3, 2)] = c64(r, 0.0);
    h[(3, 3)] = c64(-r, 0.0);
    &h * cz * &h
}

pub fn logical_label(a: usize, b: usize) -> String {
    format!("{a}{b}")
}

/// Truth-table dataset: coincidences `AB:rs` for every input `kl` and output
/// pair, plus singles `A:r` and `B:s` per input. Input `i` draws from
/// substream `("cnot", i)` of `seed`.
pub fn simulate_cnot_truth_table(v: &CMatrix, source: &PairSourceModel, integration: f64, seed: u64) -> Result<CountRecord> {
    source.validate()?;
    if !(integration >= 0.0 && integration.is_finite()) {
        return Err(QfpError::InvalidParameter("integration must be non-negative".into()));
    }
    let frames = integration / source.detector_a.frame;
    let inputs: Vec<(usize, usize)> = (0..2).flat_map(|k| (0..2).map(move |l| (k, l))).collect();
    let rows: Vec<(String, BTreeMap<String, u64>)> = inputs
        .par_iter()
        .enumerate()
        .map(|(i, &kl)| {
            let mut rng = substream(seed, "cnot", i as u64);
            let mut m = BTreeMap::new();
            for r in 0..2 {
                for s in 0..2 {
                    let p = cnot_click_probs(v, kl, (r, s), source)?;
                    m.insert(format!("AB:{}", logical_label(r, s)), poisson(frames * p.p_ab, &mut rng));
                }
            }
            for r in 0..2 {
                let p = cnot_click_probs(v, kl, (r, 0), source)?;
                m.insert(format!("A:{r}"), poisson(frames * p.p_a, &mut rng));
            }
            for s in 0..2 {
                let p = cnot_click_probs(v, kl, (0, s), source)?;
                m.insert(format!("B:{s}"), poisson(frames * p.p_b, &mut rng));
            }
            Ok((logical_label(kl.0, kl.1), m))
        })
        .collect::<Result<_>>()?;
    let mut detector = source.detector_a;
    detector.integration = integration;
    Ok(CountRecord {
        kind: RecordKind::CnotTruthTable,
        counts: rows.into_iter().collect(),
        metadata: RecordMetadata {
            flux: source.mu / source.detector_a.frame,
            integration,
            seed,
            detector: Some(detector),
            source: Some(*source),
            settings: Vec::new(),
            regime_warning: false,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{haar_unitary, max_abs_diff};
    use crate::transfer::{target_gate, GateSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ket(a: [num_complex::Complex64; 2]) -> DensityMatrix {
        DensityMatrix::pure(&a).unwrap()
    }

    #[test]
    fn projection_examples() {
        let zero = ket([c64(1.0, 0.0), c64(0.0, 0.0)]);
        let z = MeasurementSetting::standard(PauliAxis::Z);
        let x = MeasurementSetting::standard(PauliAxis::X);
        let y = MeasurementSetting::standard(PauliAxis::Y);
        let (a, b) = projection_probs(&zero, &z).unwrap();
        assert!((a - 1.0).abs() < 1e-15 && b.abs() < 1e-15);
        let (a, b) = projection_probs(&zero, &x).unwrap();
        assert!((a - 0.5).abs() < 1e-15 && (b - 0.5).abs() < 1e-15);
        let plus_i = ket([c64(1.0, 0.0), c64(0.0, 1.0)]);
        let (a, b) = projection_probs(&plus_i, &y).unwrap();
        assert!((a - 1.0).abs() < 1e-15 && b.abs() < 1e-15);
        for (label, rho) in tomography_inputs() {
            for s in MeasurementSetting::standard_set() {
                let (a, b) = projection_probs(&rho, &s).unwrap();
                assert!((a + b - 1.0).abs() < 1e-14);
                if s.axis.outcome_labels()[0] == label {
                    assert!((a - 1.0).abs() < 1e-14);
                }
            }
        }
        assert!(MeasurementSetting::new(PauliAxis::X, 0.0).is_err());
    }

    #[test]
    fn qst_simulation_examples() {
        let zero = ket([c64(1.0, 0.0), c64(0.0, 0.0)]);
        let det = DetectorModel::ideal(1.0);
        let rec = simulate_qst_counts(&zero, &MeasurementSetting::standard_set(), 0.0, &det, 1).unwrap();
        assert_eq!(rec.total(), 0);

        let rec = simulate_qst_counts(&zero, &MeasurementSetting::standard_set(), 1e6, &det, 2).unwrap();
        assert_eq!(rec.get("Z", "1"), Some(0));
        assert!(rec.get("Z", "0").unwrap() > 900_000);
        let again = simulate_qst_counts(&zero, &MeasurementSetting::standard_set(), 1e6, &det, 2).unwrap();
        assert_eq!(rec, again);
        assert!(!rec.metadata.regime_warning);
        let hot = simulate_qst_counts(&zero, &MeasurementSetting::standard_set(), 1e9, &det, 2).unwrap();
        assert!(hot.metadata.regime_warning);

        let json = serde_json::to_string(&rec).unwrap();
        let back: CountRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rec);
        assert!(rec.to_csv().contains("Z,0,"));
    }

    #[test]
    fn qpt_identity_counts_follow_inputs() {
        let det = DetectorModel::ideal(1.0);
        let rec = simulate_qpt_counts(&KrausSet::unitary(DMatrix::identity(2, 2)), &MeasurementSetting::standard_set(), 1e5, &det, 3).unwrap();
        assert_eq!(rec.counts.len(), 6);
        assert_eq!(rec.counts.values().map(|m| m.len()).sum::<usize>(), 36);
        assert_eq!(rec.get("0", "1"), Some(0));
        assert_eq!(rec.get("+", "-"), Some(0));
        assert_eq!(rec.get("-i", "+i"), Some(0));
    }

    #[test]
    fn ideal_cnot_lifts_to_a_third_of_cnot() {
        let target = target_gate(GateSpec::Cnot).unwrap();
        let w = target.lift(&ideal_cnot_mode_matrix()).unwrap();
        assert!(max_abs_diff(&w, &(target.entries.clone() * c64(1.0 / 3.0, 0.0))) < 1e-14);
        let m = crate::transfer::fidelity_success(&w, &target.entries).unwrap();
        assert!((m.fidelity - 1.0).abs() < 1e-12 && (m.success - 1.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn cnot_click_examples() {
        let v = ideal_cnot_mode_matrix();
        let det = DetectorModel::new(0.1, 0.0, DEFAULT_FRAME, 1.0).unwrap();
        let off = PairSourceModel::new(0.0, DetectorModel { dark_probability: 0.0, ..det }, det).unwrap();
        let p = cnot_click_probs(&v, (0, 0), (1, 1), &off).unwrap();
        assert_eq!((p.p_a, p.p_b, p.p_ab), (0.0, 0.0, 0.0));

        let src = PairSourceModel::new(0.01, det, det).unwrap();
        // control in C1 flips the target
        let flip = cnot_click_probs(&v, (1, 0), (1, 1), &src).unwrap().q_ab;
        let keep = cnot_click_probs(&v, (1, 0), (1, 0), &src).unwrap().q_ab;
        assert!(flip > keep && keep < 1e-15);
        // control in C0 never arrives in C1 together with a target photon
        for s in 0..2 {
            assert!(cnot_click_probs(&v, (0, 0), (1, s), &src).unwrap().q_ab < 1e-15);
        }
        assert!(PairSourceModel::new(0.2, det, det).is_err());
    }

    #[test]
    fn click_model_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let det = DetectorModel::new(0.05, 1e-5, DEFAULT_FRAME, 1.0).unwrap();
        let src = PairSourceModel::new(0.02, det, det).unwrap();
        for _ in 0..20 {
            let u = haar_unitary(6, &mut rng);
            let v = u.view((0, 0), (4, 4)).into_owned();
            let mut v2 = v.clone();
            v2[(1, 2)] *= crate::linalg::cis(1.0 + rng.random::<f64>());
            let mut changed = false;
            for k in 0..2 {
                for l in 0..2 {
                    for r in 0..2 {
                        for s in 0..2 {
                            let p = cnot_click_probs(&v, (k, l), (r, s), &src).unwrap();
                            for x in [p.p_a, p.p_b, p.p_ab] {
                                assert!((0.0..=1.0).contains(&x));
                            }
                            assert!(p.p_ab >= 2.0 * p.p_a * p.p_b * (1.0 - 1e-12));
                            assert!(p.p_ab >= src.mu * 0.05 * 0.05 * p.q_ab);
                            let q = cnot_click_probs(&v2, (k, l), (r, s), &src).unwrap();
                            assert!((p.p_a - q.p_a).abs() < 1e-15 && (p.p_b - q.p_b).abs() < 1e-15);
                            changed |= (p.q_ab - q.q_ab).abs() > 1e-6;
                        }
                    }
                }
            }
            assert!(changed, "coincidences must see relative phases");
        }
    }

    #[test]
    fn truth_tables() {
        let src = PairSourceModel::typical(600.0);
        let rec = simulate_cnot_truth_table(&ideal_cnot_mode_matrix(), &src, 600.0, 4).unwrap();
        assert_eq!(rec.counts.values().map(|m| m.len()).sum::<usize>(), 32);
        let peaks = [("00", "AB:00"), ("01", "AB:01"), ("10", "AB:11"), ("11", "AB:10")];
        let smallest_peak = peaks.iter().map(|(a, b)| rec.get(a, b).unwrap()).min().unwrap();
        for (input, row) in &rec.counts {
            for (out, &n) in row.iter().filter(|(k, _)| k.starts_with("AB")) {
                if !peaks.contains(&(input.as_str(), out.as_str())) {
                    assert!(n * 20 < smallest_peak, "{input} {out} {n}");
                }
            }
        }

        let id = simulate_cnot_truth_table(&DMatrix::identity(4, 4), &src, 600.0, 4).unwrap();
        for k in ["00", "01", "10", "11"] {
            let diag = id.get(k, &format!("AB:{k}")).unwrap();
            for (out, &n) in id.counts[k].iter().filter(|(o, _)| o.starts_with("AB") && **o != format!("AB:{k}")) {
                assert!(n * 20 < diag, "{k} {out}");
            }
        }

        let dark = PairSourceModel { mu: 0.0, ..src };
        let p = cnot_click_probs(&ideal_cnot_mode_matrix(), (0, 1), (1, 0), &dark).unwrap();
        assert!((p.p_ab - 2e-12).abs() < 1e-24);
    }

    #[test]
    fn counts_match_model_in_distribution() {
        // χ² goodness of fit of 100 replicate Poisson draws of one cell
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let zero = ket([c64(0.8, 0.0), c64(0.6, 0.0)]);
        let det = DetectorModel::new(0.5, 1e-7, DEFAULT_FRAME, 1e-3).unwrap();
        let s = MeasurementSetting::standard(PauliAxis::X);
        let (p0, _) = projection_probs(&zero, &s).unwrap();
        let lambda = expected_projection_count(1e5, &det, s.success, p0);
        let stat: f64 = (0..100u64)
            .map(|seed| {
                let n = simulate_qst_counts(&zero, &[s], 1e5, &det, seed).unwrap().get("X", "+").unwrap() as f64;
                (n - lambda).powi(2) / lambda
            })
            .sum();
        let p = 1.0 - ChiSquared::new(100.0).unwrap().cdf(stat);
        assert!(p > 0.01, "χ² = {stat}, p = {p}");
    }
}
