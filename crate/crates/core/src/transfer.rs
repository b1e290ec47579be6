//! Multi-photon lift of a mode matrix, gate metrics, and the target gate
//! library.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::circuit::ModeMatrix;
use crate::error::{QfpError, Result};
use crate::fock::{assignment_of, FockBasis, FockState};
use crate::linalg::{c64, cis, frobenius_sq, inner, CMatrix};
use crate::optimize::{minimize, Bounds, LbfgsOptions};
use crate::rng::substream;
use rand::Rng;
use crate::special::{bessel_j, sideband_overlap};

/// Budget on `N! · D · D'` for the direct permutation sum.
pub const DIRECT_SUM_BUDGET: f64 = 5e8;

/// Logical bins `(C0, C1, T0, T1)` of the coincidence-basis CNOT.
pub const CNOT_BINS: [i64; 4] = [0, 6, 7, 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermanentMethod {
    /// Direct summation up to three photons, Ryser above.
    #[default]
    Auto,
    /// All `N!` permutations of the input mode assignment, repeats included.
    Direct,
    Ryser,
}

/// `D × D'` Fock-space transformation between two bases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FockTransfer {
    #[serde(with = "crate::io::complex_matrix")]
    pub entries: CMatrix,
    pub out_basis: FockBasis,
    pub in_basis: FockBasis,
}

/// Lift a mode matrix (rows = output modes of `out_basis`, columns = input
/// modes of `in_basis`) to the photon-number-resolved transformation
/// `W_{nn'} = perm(V[m, m']) / sqrt(Π n_p! n'_p!)`.
pub fn fock_transfer(
    v: &CMatrix,
    in_basis: &FockBasis,
    out_basis: &FockBasis,
    method: PermanentMethod,
) -> Result<FockTransfer> {
    if v.nrows() != out_basis.modes() || v.ncols() != in_basis.modes() {
        return Err(QfpError::Dimension(format!(
            "{}x{} mode matrix for {} output and {} input modes",
            v.nrows(),
            v.ncols(),
            out_basis.modes(),
            in_basis.modes()
        )));
    }
    if in_basis.photons() != out_basis.photons() {
        return Err(QfpError::Dimension(format!(
            "{} input photons but {} output photons",
            in_basis.photons(),
            out_basis.photons()
        )));
    }
    let n = in_basis.photons();
    let method = match method {
        PermanentMethod::Auto if n <= 3 => PermanentMethod::Direct,
        PermanentMethod::Auto => PermanentMethod::Ryser,
        m => m,
    };
    let cost = crate::fock::factorial(n) * in_basis.dimension() as f64 * out_basis.dimension() as f64;
    if method == PermanentMethod::Direct && cost > DIRECT_SUM_BUDGET {
        return Err(QfpError::Resource(format!(
            "direct permanent sum needs {cost:.2e} terms (budget {DIRECT_SUM_BUDGET:.1e})"
        )));
    }

    let outs: Vec<(Vec<usize>, f64)> = out_basis
        .states()
        .iter()
        .map(|s| (assignment_of(s).modes().to_vec(), s.factorial_product()))
        .collect();
    let ins: Vec<(Vec<usize>, f64)> = in_basis
        .states()
        .iter()
        .map(|s| (assignment_of(s).modes().to_vec(), s.factorial_product()))
        .collect();
    let perms: Vec<Vec<usize>> = (0..n).permutations(n).collect();

    let mut w = DMatrix::zeros(outs.len(), ins.len());
    let mut sub = DMatrix::zeros(n, n);
    for (i, (m, fm)) in outs.iter().enumerate() {
        for (j, (mp, fmp)) in ins.iter().enumerate() {
            let p = match method {
                PermanentMethod::Direct => perms
                    .iter()
                    .map(|sigma| {
                        m.iter()
                            .zip(sigma)
                            .map(|(&a, &s)| v[(a, mp[s])])
                            .product::<Complex64>()
                    })
                    .sum(),
                _ => {
                    for (r, &a) in m.iter().enumerate() {
                        for (c, &b) in mp.iter().enumerate() {
                            sub[(r, c)] = v[(a, b)];
                        }
                    }
                    ryser_permanent(&sub)
                }
            };
            w[(i, j)] = p / (fm * fmp).sqrt();
        }
    }
    Ok(FockTransfer {
        entries: w,
        out_basis: out_basis.clone(),
        in_basis: in_basis.clone(),
    })
}

/// Lift a windowed mode matrix, mapping basis mode `p` to bin `bins[p]`.
pub fn fock_transfer_bins(
    v: &ModeMatrix,
    out_bins: &[i64],
    in_bins: &[i64],
    in_basis: &FockBasis,
    out_basis: &FockBasis,
) -> Result<FockTransfer> {
    let block = v.block(out_bins, in_bins)?;
    fock_transfer(&block, in_basis, out_basis, PermanentMethod::Auto)
}

/// Ryser's formula with Gray-code subset updates.
pub fn ryser_permanent(a: &CMatrix) -> Complex64 {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "permanent needs a square matrix");
    if n == 0 {
        return c64(1.0, 0.0);
    }
    let mut row_sums = vec![c64(0.0, 0.0); n];
    let mut total = c64(0.0, 0.0);
    let mut gray: u64 = 0;
    for step in 1u64..(1u64 << n) {
        let next = step ^ (step >> 1);
        let flipped = (gray ^ next).trailing_zeros() as usize;
        let add = next & (1 << flipped) != 0;
        for (i, rs) in row_sums.iter_mut().enumerate() {
            if add {
                *rs += a[(i, flipped)];
            } else {
                *rs -= a[(i, flipped)];
            }
        }
        gray = next;
        let prod: Complex64 = row_sums.iter().product();
        if (n - next.count_ones() as usize).is_multiple_of(2) {
            total += prod;
        } else {
            total -= prod;
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateMetrics {
    pub fidelity: f64,
    pub success: f64,
}

/// `P_W = Tr(W†W)/Tr(T†T)` and `F_W = |Tr(W†T)/Tr(T†T)|² / P_W`.
pub fn fidelity_success(w: &CMatrix, t: &CMatrix) -> Result<GateMetrics> {
    if w.shape() != t.shape() {
        return Err(QfpError::Dimension(format!(
            "W is {:?} but T is {:?}",
            w.shape(),
            t.shape()
        )));
    }
    let tt = frobenius_sq(t);
    if tt == 0.0 {
        return Err(QfpError::Degenerate("target matrix is zero".into()));
    }
    let success = frobenius_sq(w) / tt;
    if success == 0.0 {
        return Err(QfpError::Degenerate("success probability is zero".into()));
    }
    let overlap = inner(w, t) / tt;
    Ok(GateMetrics {
        fidelity: overlap.norm_sqr() / success,
        success,
    })
}

/// Fidelity after the best independent phase on every `W` entry, i.e.
/// `(Σ |W_{nn'}||T_{nn'}| / Tr T†T)² / P_W`.
///
/// For targets whose non-zero entries can all be phase-aligned by diagonal
/// input/output bin phases (as for the CNOT) this is the fidelity once the
/// unobservable local phases are fixed optimally.
pub fn phase_aligned_fidelity(w: &CMatrix, t: &CMatrix) -> Result<GateMetrics> {
    let base = fidelity_success(w, t)?;
    let tt = frobenius_sq(t);
    let aligned: f64 = w.iter().zip(t.iter()).map(|(a, b)| a.norm() * b.norm()).sum::<f64>() / tt;
    Ok(GateMetrics {
        fidelity: aligned * aligned / base.success,
        success: base.success,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "gate", rename_all = "snake_case")]
pub enum GateSpec {
    Hadamard,
    Tritter,
    Dft { d: usize },
    Cnot,
    Identity { d: usize },
    TunableBs { alpha: f64, theta: f64 },
}

impl fmt::Display for GateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Hadamard => write!(f, "hadamard"),
            Self::Tritter => write!(f, "tritter"),
            Self::Dft { d } => write!(f, "dft({d})"),
            Self::Cnot => write!(f, "cnot"),
            Self::Identity { d } => write!(f, "identity({d})"),
            Self::TunableBs { alpha, theta } => write!(f, "tunable_bs({alpha},{theta})"),
        }
    }
}

impl FromStr for GateSpec {
    type Err = QfpError;

    /// `hadamard`, `tritter`, `cnot`, `dft(d)`, `identity(d)`,
    /// `tunable_bs(alpha,theta)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (name, args) = match s.find('(') {
            Some(i) if s.ends_with(')') => (&s[..i], Some(&s[i + 1..s.len() - 1])),
            _ => (s.as_str(), None),
        };
        let bad = || QfpError::UnknownLabel(s.clone());
        let nums = |a: Option<&str>| -> Result<Vec<f64>> {
            a.ok_or_else(bad)?
                .split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| bad()))
                .collect()
        };
        let dim = |a: Option<&str>| -> Result<usize> {
            let v = nums(a)?;
            match v.as_slice() {
                [d] if *d >= 1.0 && d.fract() == 0.0 => Ok(*d as usize),
                _ => Err(bad()),
            }
        };
        match (name, args) {
            ("hadamard", None) => Ok(Self::Hadamard),
            ("tritter", None) => Ok(Self::Tritter),
            ("cnot", None) => Ok(Self::Cnot),
            ("dft", a) => Ok(Self::Dft { d: dim(a)? }),
            ("identity", a) => Ok(Self::Identity { d: dim(a)? }),
            ("tunable_bs", a) => match nums(a)?.as_slice() {
                [alpha, theta] => Ok(Self::TunableBs { alpha: *alpha, theta: *theta }),
                _ => Err(bad()),
            },
            _ => Err(bad()),
        }
    }
}

/// Target matrix together with the Fock states that encode its logical
/// basis, expressed over the modes `bins`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetGate {
    pub label: String,
    #[serde(with = "crate::io::complex_matrix")]
    pub entries: CMatrix,
    pub bins: Vec<i64>,
    pub logical_states: Vec<FockState>,
}

impl TargetGate {
    pub fn photons(&self) -> usize {
        self.logical_states.first().map_or(0, |s| s.total())
    }

    pub fn logical_basis(&self) -> Result<FockBasis> {
        FockBasis::from_list(self.logical_states.clone())
    }

    /// Lift a mode matrix over the gate's bins into the logical subspace.
    pub fn lift(&self, v: &CMatrix) -> Result<CMatrix> {
        let basis = self.logical_basis()?;
        Ok(fock_transfer(v, &basis, &basis, PermanentMethod::Auto)?.entries)
    }

    pub fn metrics(&self, v: &ModeMatrix) -> Result<GateMetrics> {
        let block = v.block(&self.bins, &self.bins)?;
        fidelity_success(&self.lift(&block)?, &self.entries)
    }

    /// Metrics after choosing the phase of every input and output bin to
    /// maximize the fidelity. Such phases are invisible to logical-basis
    /// counting and can be absorbed into state preparation and detection.
    pub fn gauge_optimized_metrics(&self, v: &CMatrix) -> Result<GateMetrics> {
        let w = self.lift(v)?;
        let base = fidelity_success(&w, &self.entries)?;
        let n = self.bins.len();
        let occ: Vec<Vec<f64>> = self
            .logical_states
            .iter()
            .map(|s| s.occupancy().iter().map(|&o| o as f64).collect())
            .collect();
        let terms: Vec<(usize, usize, Complex64)> = (0..w.nrows())
            .flat_map(|i| (0..w.ncols()).map(move |j| (i, j)))
            .filter_map(|(i, j)| {
                let z = self.entries[(i, j)].conj() * w[(i, j)];
                (z.norm() > 0.0).then_some((i, j, z))
            })
            .collect();
        let overlap = |x: &[f64]| -> f64 {
            let phase = |k: usize, off: usize| occ[k].iter().zip(&x[off..off + n]).map(|(o, p)| o * p).sum::<f64>();
            terms
                .iter()
                .map(|&(i, j, z)| z * cis(phase(i, 0) - phase(j, n)))
                .sum::<Complex64>()
                .norm_sqr()
        };
        let bounds = Bounds {
            lower: vec![-PI; 2 * n],
            upper: vec![PI; 2 * n],
            periodic: vec![true; 2 * n],
        };
        let opts = LbfgsOptions {
            gradient_tolerance: 1e-10,
            ..Default::default()
        };
        let mut rng = substream(0, "gauge", 0);
        let mut best = overlap(&vec![0.0; 2 * n]);
        for start in 0..8 {
            let x0: Vec<f64> = if start == 0 {
                vec![0.0; 2 * n]
            } else {
                (0..2 * n).map(|_| rng.random_range(-PI..PI)).collect()
            };
            let m = minimize(|x| -overlap(x), &x0, &bounds, &opts);
            best = best.max(-m.value);
        }
        let tt = frobenius_sq(&self.entries);
        Ok(GateMetrics {
            fidelity: (best / (tt * tt) / base.success).min(1.0),
            success: base.success,
        })
    }

    fn single_photon(label: String, entries: CMatrix) -> Self {
        let d = entries.nrows();
        let logical_states = (0..d)
            .map(|i| {
                let mut o = vec![0; d];
                o[i] = 1;
                FockState::new(o)
            })
            .collect();
        Self {
            label,
            entries,
            bins: (0..d as i64).collect(),
            logical_states,
        }
    }
}

pub fn dft_matrix(d: usize) -> CMatrix {
    let norm = 1.0 / (d as f64).sqrt();
    DMatrix::from_fn(d, d, |j, k| cis(2.0 * PI * ((j * k) % d) as f64 / d as f64) * norm)
}

pub fn target_gate(spec: GateSpec) -> Result<TargetGate> {
    let label = spec.to_string();
    Ok(match spec {
        GateSpec::Hadamard | GateSpec::Dft { d: 2 } => TargetGate::single_photon(label, dft_matrix(2)),
        GateSpec::Tritter => TargetGate::single_photon(label, dft_matrix(3)),
        GateSpec::Dft { d } => {
            if d == 0 {
                return Err(QfpError::InvalidParameter("dft dimension must be ≥ 1".into()));
            }
            TargetGate::single_photon(label, dft_matrix(d))
        }
        GateSpec::Identity { d } => {
            if d == 0 {
                return Err(QfpError::InvalidParameter("identity dimension must be ≥ 1".into()));
            }
            TargetGate::single_photon(label, DMatrix::identity(d, d))
        }
        GateSpec::TunableBs { alpha, theta } => TargetGate::single_photon(label, tunable_bs_w(alpha, theta)),
        GateSpec::Cnot => {
            let mut t = DMatrix::zeros(4, 4);
            t[(0, 0)] = c64(1.0, 0.0);
            t[(1, 1)] = c64(1.0, 0.0);
            t[(2, 3)] = c64(1.0, 0.0);
            t[(3, 2)] = c64(1.0, 0.0);
            TargetGate {
                label,
                entries: t,
                bins: CNOT_BINS.to_vec(),
                logical_states: cnot_logical_states(),
            }
        }
    })
}

/// `|00⟩, |01⟩, |10⟩, |11⟩` as occupancies over `(C0, C1, T0, T1)`.
pub fn cnot_logical_states() -> Vec<FockState> {
    [[1, 0, 1, 0], [1, 0, 0, 1], [0, 1, 1, 0], [0, 1, 0, 1]]
        .iter()
        .map(|o| FockState::new(o.to_vec()))
        .collect()
}

/// Closed-form 2×2 transformation of the three-element tunable beamsplitter.
pub fn tunable_bs_w(alpha: f64, theta: f64) -> CMatrix {
    let j0sq = bessel_j(0, theta).powi(2);
    let s = sideband_overlap(theta);
    let e = cis(alpha);
    let one = c64(1.0, 0.0);
    let off = (one - e) * s;
    let half = (one + e) * ((1.0 - j0sq) / 2.0);
    DMatrix::from_row_slice(2, 2, &[one * j0sq + half, off, off, e * j0sq + half])
}

/// Reflectivity `|W_01|² = 4 sin²(α/2) S(Θ)²`.
pub fn tunable_bs_reflectivity(alpha: f64, theta: f64) -> f64 {
    let s = sideband_overlap(theta);
    4.0 * (alpha / 2.0).sin().powi(2) * s * s
}

/// Reflectivity within the postselected qubit space,
/// `|W_01|² / (|W_00|² + |W_01|²)`.
pub fn tunable_bs_split_ratio(alpha: f64, theta: f64) -> f64 {
    let w = tunable_bs_w(alpha, theta);
    let r = w[(0, 1)].norm_sqr();
    r / (r + w[(0, 0)].norm_sqr())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::enumerate_basis;
    use crate::linalg::{from_real_rows, identity, max_abs_diff};

    fn h() -> CMatrix {
        let r = 1.0 / 2f64.sqrt();
        from_real_rows(&[&[r, r], &[r, -r]])
    }

    #[test]
    fn gauge_optimized_fidelity_ignores_bin_phases() {
        let t = target_gate(GateSpec::Cnot).unwrap();
        let v = crate::counts::ideal_cnot_mode_matrix();
        let phases = [0.3, -1.2, 2.0, 0.7];
        let dressed = DMatrix::from_fn(4, 4, |i, j| v[(i, j)] * cis(phases[i] - 0.5 * phases[j] + 0.1));
        let plain = fidelity_success(&t.lift(&dressed).unwrap(), &t.entries).unwrap();
        assert!(plain.fidelity < 0.9);
        let opt = t.gauge_optimized_metrics(&dressed).unwrap();
        assert!((opt.fidelity - 1.0).abs() < 1e-9, "{opt:?}");
        assert!((opt.success - 1.0 / 9.0).abs() < 1e-12);
        // a relative phase that no bin phase can undo lowers the fidelity
        let mut bent = v.clone();
        bent[(1, 1)] *= cis(0.8);
        let f = t.gauge_optimized_metrics(&bent).unwrap().fidelity;
        assert!(f < 0.999 && f >= fidelity_success(&t.lift(&bent).unwrap(), &t.entries).unwrap().fidelity - 1e-12);
    }

    #[test]
    fn single_photon_lift_is_the_mode_matrix() {
        let b = enumerate_basis(1, 3).unwrap();
        let v = dft_matrix(3);
        let w = fock_transfer(&v, &b, &b, PermanentMethod::Auto).unwrap();
        assert!(max_abs_diff(&w.entries, &v) < 1e-15);
    }

    #[test]
    fn hong_ou_mandel() {
        let b = enumerate_basis(2, 2).unwrap();
        let w = fock_transfer(&h(), &b, &b, PermanentMethod::Auto).unwrap().entries;
        let i11 = b.position(&FockState::new(vec![1, 1])).unwrap();
        let i20 = b.position(&FockState::new(vec![2, 0])).unwrap();
        assert!(w[(i11, i11)].norm() < 1e-15);
        assert!((w[(i20, i11)] - c64(1.0 / 2f64.sqrt(), 0.0)).norm() < 1e-15);
    }

    #[test]
    fn ryser_matches_direct_at_three_photons() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let v = crate::linalg::haar_unitary(4, &mut rng);
        let b = enumerate_basis(3, 4).unwrap();
        let d = fock_transfer(&v, &b, &b, PermanentMethod::Direct).unwrap();
        let r = fock_transfer(&v, &b, &b, PermanentMethod::Ryser).unwrap();
        assert!(max_abs_diff(&d.entries, &r.entries) < 1e-12);
    }

    #[test]
    fn ryser_small_cases() {
        let a = from_real_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert!((ryser_permanent(&a) - c64(10.0, 0.0)).norm() < 1e-12);
        let ones = DMatrix::from_element(4, 4, c64(1.0, 0.0));
        assert!((ryser_permanent(&ones) - c64(24.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn coverage_and_shape_errors() {
        let b1 = enumerate_basis(1, 2).unwrap();
        let b2 = enumerate_basis(2, 2).unwrap();
        assert!(fock_transfer(&identity(3), &b1, &b1, PermanentMethod::Auto).is_err());
        assert!(fock_transfer(&identity(2), &b1, &b2, PermanentMethod::Auto).is_err());
        let v = ModeMatrix::identity(crate::circuit::Window::new(0, 1, 0));
        assert!(matches!(
            fock_transfer_bins(&v, &[0, 5], &[0, 1], &b1, &b1),
            Err(QfpError::BinCoverage(5))
        ));
    }

    #[test]
    fn fidelity_examples() {
        let t = h();
        let m = fidelity_success(&t, &t).unwrap();
        assert!((m.fidelity - 1.0).abs() < 1e-15 && (m.success - 1.0).abs() < 1e-15);
        let m = fidelity_success(&(&t * c64(0.5, 0.0)), &t).unwrap();
        assert!((m.fidelity - 1.0).abs() < 1e-15 && (m.success - 0.25).abs() < 1e-15);
        let m = fidelity_success(&(&t * cis(1.234)), &t).unwrap();
        assert!((m.fidelity - 1.0).abs() < 1e-14 && (m.success - 1.0).abs() < 1e-14);
        assert!(matches!(
            fidelity_success(&DMatrix::zeros(2, 2), &t),
            Err(QfpError::Degenerate(_))
        ));
    }

    #[test]
    fn gate_library() {
        let had = target_gate(GateSpec::Hadamard).unwrap();
        assert!(max_abs_diff(&had.entries, &h()) < 1e-15);
        let tr = target_gate(GateSpec::Tritter).unwrap();
        let w = cis(2.0 * PI / 3.0) / 3f64.sqrt();
        assert!((tr.entries[(1, 1)] - w).norm() < 1e-15);
        assert!((tr.entries[(1, 2)] - w * w * 3f64.sqrt()).norm() < 1e-15);
        assert_eq!(tr.entries, target_gate(GateSpec::Dft { d: 3 }).unwrap().entries);
        for spec in [GateSpec::Hadamard, GateSpec::Tritter, GateSpec::Dft { d: 7 }, GateSpec::Cnot, GateSpec::Identity { d: 3 }] {
            let t = target_gate(spec).unwrap().entries;
            assert!(max_abs_diff(&(t.adjoint() * &t), &identity(t.nrows())) < 1e-12, "{spec}");
        }
        let cnot = target_gate(GateSpec::Cnot).unwrap();
        assert_eq!(cnot.bins, vec![0, 6, 7, 8]);
        assert_eq!(cnot.photons(), 2);
    }

    #[test]
    fn gate_labels_parse() {
        assert_eq!("dft(5)".parse::<GateSpec>().unwrap(), GateSpec::Dft { d: 5 });
        assert_eq!("CNOT".parse::<GateSpec>().unwrap(), GateSpec::Cnot);
        assert_eq!(
            "tunable_bs(2.5, 0.8)".parse::<GateSpec>().unwrap(),
            GateSpec::TunableBs { alpha: 2.5, theta: 0.8 }
        );
        assert!(matches!("toffoli".parse::<GateSpec>(), Err(QfpError::UnknownLabel(_))));
        assert!("dft(2.5)".parse::<GateSpec>().is_err());
    }

    #[test]
    fn tunable_bs_identity_at_zero() {
        let w = tunable_bs_w(0.0, 1.7);
        assert!(max_abs_diff(&w, &identity(2)) < 1e-15);
    }

    #[test]
    fn reflectivity_identity_on_grid() {
        let theta = 0.83;
        for i in 0..100 {
            let alpha = 2.0 * PI * i as f64 / 100.0;
            let w = tunable_bs_w(alpha, theta);
            assert!((w[(0, 1)].norm_sqr() - tunable_bs_reflectivity(alpha, theta)).abs() < 1e-14);
        }
    }

    #[test]
    fn phase_alignment_bounds_fidelity() {
        let t = target_gate(GateSpec::Cnot).unwrap().entries;
        let mut w = t.clone() * c64(0.3, 0.0);
        w[(2, 3)] *= cis(1.0);
        let plain = fidelity_success(&w, &t).unwrap();
        let aligned = phase_aligned_fidelity(&w, &t).unwrap();
        assert!(plain.fidelity < 0.99);
        assert!((aligned.fidelity - 1.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::SeedableRng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn metrics_invariant_under_basis_reordering(seed in 0u64..1000) {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let w = crate::linalg::ginibre(4, 4, &mut rng);
                let t = crate::linalg::haar_unitary(4, &mut rng);
                let perm = [2usize, 0, 3, 1];
                let p = DMatrix::from_fn(4, 4, |i, j| if perm[i] == j { c64(1.0, 0.0) } else { c64(0.0, 0.0) });
                let a = fidelity_success(&w, &t).unwrap();
                let b = fidelity_success(&(&p * &w * p.transpose()), &(&p * &t * p.transpose())).unwrap();
                prop_assert!((a.fidelity - b.fidelity).abs() < 1e-12);
                prop_assert!((a.success - b.success).abs() < 1e-12);
            }

            #[test]
            fn unitary_lift_is_unitary(seed in 0u64..1000, n in 1usize..=3, m in 2usize..=4) {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let v = crate::linalg::haar_unitary(m, &mut rng);
                let b = enumerate_basis(n, m).unwrap();
                let w = fock_transfer(&v, &b, &b, PermanentMethod::Auto).unwrap().entries;
                prop_assert!(max_abs_diff(&(w.adjoint() * &w), &identity(b.dimension())) < 1e-10);
            }
        }
    }
}
