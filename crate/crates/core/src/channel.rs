//! Quantum channels as Kraus sets, trace-normalized Choi matrices and qubit
//! χ matrices, with state and process fidelities.
//!
//! Conventions: `vec(A)` stacks rows, so entry `(out, in)` sits at index
//! `out·D' + in`; the Choi matrix is `Φ = (1/D') Σ_k vec(A_k) vec(A_k)†`,
//! trace one for trace-preserving channels; the χ basis is `(I, X, Y, Z)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{QfpError, Result};
use crate::linalg::{c64, hermitian_defect, hermitian_eigen, identity, operator_norm, psd_sqrt, trace, CMatrix, PSD_CLIP};

pub const CHOI_CONVENTION: &str = "trace-normalized Choi, vec index out*D_in + in";
pub const CHI_BASIS: [&str; 4] = ["I", "X", "Y", "Z"];

/// Tolerance of the structural invariants (Hermiticity, trace, PSD).
pub const STATE_TOLERANCE: f64 = 1e-10;

pub fn pauli(j: usize) -> CMatrix {
    let (o, z, i) = (c64(1.0, 0.0), c64(0.0, 0.0), c64(0.0, 1.0));
    let e = match j {
        0 => [o, z, z, o],
        1 => [z, o, o, z],
        2 => [z, -i, i, z],
        3 => [o, z, z, -o],
        _ => panic!("Pauli index {j} out of range"),
    };
    DMatrix::from_row_slice(2, 2, &e)
}

fn vec_rows(a: &CMatrix) -> Vec<num_complex::Complex64> {
    let mut v = Vec::with_capacity(a.len());
    for r in 0..a.nrows() {
        for c in 0..a.ncols() {
            v.push(a[(r, c)]);
        }
    }
    v
}

fn unvec_rows(v: &[num_complex::Complex64], rows: usize, cols: usize) -> CMatrix {
    DMatrix::from_fn(rows, cols, |r, c| v[r * cols + c])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DensityMatrix {
    #[serde(with = "crate::io::complex_matrix")]
    rho: CMatrix,
}

impl DensityMatrix {
    /// Validates Hermiticity, unit trace and positivity within `STATE_TOLERANCE`.
    pub fn new(rho: CMatrix) -> Result<Self> {
        if rho.nrows() != rho.ncols() || rho.nrows() == 0 {
            return Err(QfpError::Dimension(format!("density matrix of shape {:?}", rho.shape())));
        }
        if rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(QfpError::NonFinite("density matrix entry".into()));
        }
        if hermitian_defect(&rho) > STATE_TOLERANCE {
            return Err(QfpError::InvalidParameter("density matrix is not Hermitian".into()));
        }
        let tr = trace(&rho);
        if (tr.re - 1.0).abs() > STATE_TOLERANCE || tr.im.abs() > STATE_TOLERANCE {
            return Err(QfpError::InvalidParameter(format!("density matrix trace {tr}")));
        }
        let (vals, _) = hermitian_eigen(&rho);
        if vals[0] < PSD_CLIP {
            return Err(QfpError::NotPsd(vals[0]));
        }
        Ok(Self { rho })
    }

    /// `ρ = M / Tr M` for a positive semidefinite `M`.
    pub fn normalized(m: CMatrix) -> Result<Self> {
        let tr = trace(&m).re;
        if tr.is_nan() || tr <= 0.0 {
            return Err(QfpError::Degenerate("cannot normalize a zero-trace operator".into()));
        }
        let herm = (&m + m.adjoint()) * c64(0.5 / tr, 0.0);
        Self::new(herm)
    }

    pub fn pure(psi: &[num_complex::Complex64]) -> Result<Self> {
        let v = nalgebra::DVector::from_column_slice(psi);
        Self::normalized(&v * v.adjoint())
    }

    pub fn maximally_mixed(d: usize) -> Self {
        Self {
            rho: identity(d) * c64(1.0 / d as f64, 0.0),
        }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.rho
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    /// `(⟨X⟩, ⟨Y⟩, ⟨Z⟩)` for a qubit.
    pub fn bloch(&self) -> Result<[f64; 3]> {
        if self.dim() != 2 {
            return Err(QfpError::Dimension("Bloch vectors need a qubit".into()));
        }
        Ok([1, 2, 3].map(|j| trace(&(&pauli(j) * &self.rho)).re))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrausSet {
    #[serde(with = "kraus_list")]
    pub ops: Vec<CMatrix>,
}

mod kraus_list {
    use super::*;
    use crate::io::ComplexMatrixJson;
    use serde::{de::Error, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ops: &[CMatrix], s: S) -> std::result::Result<S::Ok, S::Error> {
        ops.iter().map(ComplexMatrixJson::from).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<CMatrix>, D::Error> {
        Vec::<ComplexMatrixJson>::deserialize(d)?
            .iter()
            .map(|m| m.to_matrix().ok_or_else(|| D::Error::custom("bad Kraus operator shape")))
            .collect()
    }
}

impl KrausSet {
    pub fn new(ops: Vec<CMatrix>) -> Result<Self> {
        let first = ops
            .first()
            .ok_or_else(|| QfpError::Dimension("a channel needs at least one Kraus operator".into()))?;
        let shape = first.shape();
        if ops.iter().any(|a| a.shape() != shape) {
            return Err(QfpError::Dimension("Kraus operators differ in shape".into()));
        }
        Ok(Self { ops })
    }

    pub fn unitary(u: CMatrix) -> Self {
        Self { ops: vec![u] }
    }

    /// `{σ_j / 2}`, mapping every qubit state to `I/2`.
    pub fn depolarizer() -> Self {
        Self {
            ops: (0..4).map(|j| pauli(j) * c64(0.5, 0.0)).collect(),
        }
    }

    pub fn d_out(&self) -> usize {
        self.ops[0].nrows()
    }

    pub fn d_in(&self) -> usize {
        self.ops[0].ncols()
    }

    /// `max |Σ A†A − I|`
    pub fn completeness_defect(&self) -> f64 {
        let d = self.d_in();
        let sum = self.ops.iter().fold(DMatrix::zeros(d, d), |acc, a| acc + a.adjoint() * a);
        crate::linalg::max_abs_diff(&sum, &identity(d))
    }

    pub fn apply(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        apply_channel(self, rho)
    }
}

/// `ρ = Σ A_k ρ' A_k†`
pub fn apply_channel(k: &KrausSet, rho: &DensityMatrix) -> Result<DensityMatrix> {
    if rho.dim() != k.d_in() {
        return Err(QfpError::Dimension(format!(
            "{}-dimensional state into a channel on {} dimensions",
            rho.dim(),
            k.d_in()
        )));
    }
    let out = k
        .ops
        .iter()
        .fold(DMatrix::zeros(k.d_out(), k.d_out()), |acc, a| acc + a * rho.matrix() * a.adjoint());
    DensityMatrix::new((&out + out.adjoint()) * c64(0.5, 0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiMatrix {
    #[serde(with = "crate::io::complex_matrix")]
    pub matrix: CMatrix,
    pub d_out: usize,
    pub d_in: usize,
    pub convention: String,
}

impl ChoiMatrix {
    pub fn new(matrix: CMatrix, d_out: usize, d_in: usize) -> Result<Self> {
        if matrix.shape() != (d_out * d_in, d_out * d_in) {
            return Err(QfpError::Dimension(format!(
                "Choi matrix of shape {:?} for D={d_out}, D'={d_in}",
                matrix.shape()
            )));
        }
        let (vals, _) = hermitian_eigen(&matrix);
        let scale = vals.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
        if vals[0] < PSD_CLIP * scale {
            return Err(QfpError::NotPsd(vals[0]));
        }
        Ok(Self {
            matrix,
            d_out,
            d_in,
            convention: CHOI_CONVENTION.into(),
        })
    }

    pub fn as_state(&self) -> Result<DensityMatrix> {
        DensityMatrix::normalized(self.matrix.clone())
    }

    /// `Tr_out Φ`, equal to `I/D'` for trace-preserving channels.
    pub fn input_marginal(&self) -> CMatrix {
        let (dout, din) = (self.d_out, self.d_in);
        DMatrix::from_fn(din, din, |i, j| (0..dout).map(|o| self.matrix[(o * din + i, o * din + j)]).sum())
    }
}

pub fn choi_from_kraus(k: &KrausSet) -> ChoiMatrix {
    let (dout, din) = (k.d_out(), k.d_in());
    let n = dout * din;
    let mut m = DMatrix::zeros(n, n);
    for a in &k.ops {
        let v = nalgebra::DVector::from_vec(vec_rows(a));
        m += &v * v.adjoint();
    }
    m *= c64(1.0 / din as f64, 0.0);
    ChoiMatrix {
        matrix: m,
        d_out: dout,
        d_in: din,
        convention: CHOI_CONVENTION.into(),
    }
}

/// Canonical Kraus operators `A_k = sqrt(D' λ_k) unvec(v_k)` from the
/// eigen-decomposition, dropping eigenvalues at or below `PSD_CLIP` scale.
pub fn kraus_from_choi(phi: &ChoiMatrix) -> Result<KrausSet> {
    let (vals, vecs) = hermitian_eigen(&phi.matrix);
    let scale = vals.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if vals[0] < PSD_CLIP * scale.max(1.0) {
        return Err(QfpError::NotPsd(vals[0]));
    }
    let mut ops = Vec::new();
    for (i, &l) in vals.iter().enumerate().rev() {
        if l <= 1e-14 * scale {
            continue;
        }
        let v: Vec<_> = vecs.column(i).iter().map(|z| z * (phi.d_in as f64 * l).sqrt()).collect();
        ops.push(unvec_rows(&v, phi.d_out, phi.d_in));
    }
    if ops.is_empty() {
        return Err(QfpError::Degenerate("Choi matrix is zero".into()));
    }
    KrausSet::new(ops)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessMatrix {
    #[serde(with = "crate::io::complex_matrix")]
    pub chi: CMatrix,
    pub basis: [String; 4],
}

impl ProcessMatrix {
    fn from_chi(chi: CMatrix) -> Self {
        Self {
            chi,
            basis: CHI_BASIS.map(String::from),
        }
    }

    /// `max |Σ χ_jk σ_k† σ_j − I|`
    pub fn trace_preservation_defect(&self) -> f64 {
        let mut s = DMatrix::zeros(2, 2);
        for j in 0..4 {
            for k in 0..4 {
                s += pauli(k).adjoint() * pauli(j) * self.chi[(j, k)];
            }
        }
        crate::linalg::max_abs_diff(&s, &identity(2))
    }
}

/// `χ_jk = ½ vec(σ_j)† Φ vec(σ_k)` for a qubit channel.
pub fn chi_from_choi(phi: &ChoiMatrix) -> Result<ProcessMatrix> {
    if phi.d_out != 2 || phi.d_in != 2 {
        return Err(QfpError::Dimension("χ matrices are defined for qubit channels only".into()));
    }
    let vs: Vec<nalgebra::DVector<_>> = (0..4).map(|j| nalgebra::DVector::from_vec(vec_rows(&pauli(j)))).collect();
    let chi = DMatrix::from_fn(4, 4, |j, k| (vs[j].adjoint() * &phi.matrix * &vs[k])[(0, 0)] * 0.5);
    Ok(ProcessMatrix::from_chi(chi))
}

pub fn choi_from_chi(chi: &ProcessMatrix) -> Result<ChoiMatrix> {
    let vs: Vec<nalgebra::DVector<_>> = (0..4).map(|j| nalgebra::DVector::from_vec(vec_rows(&pauli(j)))).collect();
    let mut m = DMatrix::zeros(4, 4);
    for j in 0..4 {
        for k in 0..4 {
            m += &vs[j] * vs[k].adjoint() * (chi.chi[(j, k)] * 0.5);
        }
    }
    ChoiMatrix::new(m, 2, 2)
}

/// Dominant eigenvector when the state is pure to within 1e-12.
fn pure_vector(rho: &DensityMatrix) -> Option<nalgebra::DVector<num_complex::Complex64>> {
    let (vals, vecs) = hermitian_eigen(rho.matrix());
    let n = vals.len();
    (vals[n - 1] > 1.0 - 1e-12).then(|| vecs.column(n - 1).into_owned())
}

/// `(Tr sqrt(sqrt(σ) ρ sqrt(σ)))²`, clamped to `[0, 1]`.
pub fn state_fidelity(rho: &DensityMatrix, target: &DensityMatrix) -> Result<f64> {
    if rho.dim() != target.dim() {
        return Err(QfpError::Dimension("states of different dimension".into()));
    }
    for (a, b) in [(rho, target), (target, rho)] {
        if let Some(psi) = pure_vector(b) {
            return Ok((psi.adjoint() * a.matrix() * &psi)[(0, 0)].re.clamp(0.0, 1.0));
        }
    }
    let s = psd_sqrt(target.matrix())?;
    let inner = &s * rho.matrix() * &s;
    let root = psd_sqrt(&((&inner + inner.adjoint()) * c64(0.5, 0.0)))?;
    Ok(trace(&root).re.powi(2).clamp(0.0, 1.0))
}

/// State fidelity of the (re)normalized Choi matrices.
pub fn process_fidelity(phi: &ChoiMatrix, target: &ChoiMatrix) -> Result<f64> {
    if (phi.d_out, phi.d_in) != (target.d_out, target.d_in) {
        return Err(QfpError::Dimension("channels of different dimensions".into()));
    }
    state_fidelity(&phi.as_state()?, &target.as_state()?)
}

/// Single-Kraus channel `A₁ = W/‖W‖` from a (generally non-unitary) logical
/// transformation. Trace is not preserved; `apply` renormalizes per state and
/// reports the postselection probability separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostselectedChannel {
    pub kraus: KrausSet,
    /// `‖W‖_op`, the factor divided out of `W`.
    pub normalization: f64,
}

impl PostselectedChannel {
    /// `(A ρ' A† / Tr(A ρ' A†), Tr(W ρ' W†))`
    pub fn apply(&self, rho: &DensityMatrix) -> Result<(DensityMatrix, f64)> {
        let a = &self.kraus.ops[0];
        if rho.dim() != a.ncols() {
            return Err(QfpError::Dimension("state does not match the channel input".into()));
        }
        let out = a * rho.matrix() * a.adjoint();
        let p = trace(&out).re;
        Ok((DensityMatrix::normalized(out)?, p * self.normalization.powi(2)))
    }

    /// Normalized Choi matrix of the postselected map.
    pub fn choi(&self) -> Result<ChoiMatrix> {
        let c = choi_from_kraus(&self.kraus);
        let tr = trace(&c.matrix).re;
        ChoiMatrix::new(c.matrix * c64(1.0 / tr, 0.0), c.d_out, c.d_in)
    }
}

pub fn channel_from_mode_matrix(w: &CMatrix) -> Result<PostselectedChannel> {
    let norm = operator_norm(w);
    if norm.is_nan() || norm <= 0.0 {
        return Err(QfpError::Degenerate("zero transformation has no channel".into()));
    }
    Ok(PostselectedChannel {
        kraus: KrausSet::new(vec![w * c64(1.0 / norm, 0.0)])?,
        normalization: norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cis, from_real_rows, haar_unitary, inner, max_abs_diff};
    use crate::transfer::tunable_bs_w;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn h() -> CMatrix {
        let r = 1.0 / 2f64.sqrt();
        from_real_rows(&[&[r, r], &[r, -r]])
    }

    fn ket(a: f64, b: num_complex::Complex64) -> DensityMatrix {
        DensityMatrix::pure(&[c64(a, 0.0), b]).unwrap()
    }

    fn random_state(rng: &mut ChaCha8Rng, d: usize) -> DensityMatrix {
        let g = crate::linalg::ginibre(d, d, rng);
        DensityMatrix::normalized(&g * g.adjoint()).unwrap()
    }

    #[test]
    fn apply_examples() {
        let zero = ket(1.0, c64(0.0, 0.0));
        let plus = ket(1.0, c64(1.0, 0.0));
        let id = KrausSet::unitary(identity(2));
        assert!(max_abs_diff(apply_channel(&id, &plus).unwrap().matrix(), plus.matrix()) < 1e-15);
        let had = KrausSet::unitary(h());
        assert!(max_abs_diff(apply_channel(&had, &zero).unwrap().matrix(), plus.matrix()) < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = random_state(&mut rng, 2);
        let dep = apply_channel(&KrausSet::depolarizer(), &r).unwrap();
        assert!(max_abs_diff(dep.matrix(), DensityMatrix::maximally_mixed(2).matrix()) < 1e-15);
        assert!(apply_channel(&had, &DensityMatrix::maximally_mixed(3)).is_err());
    }

    #[test]
    fn density_validation() {
        assert!(DensityMatrix::new(from_real_rows(&[&[1.0, 0.0], &[0.0, 0.5]])).is_err());
        assert!(DensityMatrix::new(from_real_rows(&[&[1.5, 0.0], &[0.0, -0.5]])).is_err());
        assert!(DensityMatrix::new(from_real_rows(&[&[0.5, 0.6], &[0.0, 0.5]])).is_err());
    }

    #[test]
    fn choi_and_chi_examples() {
        let phi = choi_from_kraus(&KrausSet::unitary(identity(2)));
        let r = 0.5;
        let expect = from_real_rows(&[&[r, 0.0, 0.0, r], &[0.0; 4], &[0.0; 4], &[r, 0.0, 0.0, r]]);
        assert!(max_abs_diff(&phi.matrix, &expect) < 1e-15);
        let chi = chi_from_choi(&phi).unwrap().chi;
        let mut diag = DMatrix::zeros(4, 4);
        diag[(0, 0)] = c64(1.0, 0.0);
        assert!(max_abs_diff(&chi, &diag) < 1e-15);

        let chi = chi_from_choi(&choi_from_kraus(&KrausSet::unitary(h()))).unwrap().chi;
        for (j, k) in [(1, 1), (3, 3), (1, 3), (3, 1)] {
            assert!((chi[(j, k)] - c64(0.5, 0.0)).norm() < 1e-15);
        }
        assert!(chi[(0, 0)].norm() < 1e-15 && chi[(2, 2)].norm() < 1e-15);

        let chi = chi_from_choi(&choi_from_kraus(&KrausSet::depolarizer())).unwrap().chi;
        assert!(max_abs_diff(&chi, &(identity(4) * c64(0.25, 0.0))) < 1e-15);
    }

    #[test]
    fn round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let g = crate::linalg::ginibre(8, 2, &mut rng);
            let iso = crate::linalg::orthonormalize(&g);
            let ops: Vec<CMatrix> = (0..4).map(|k| iso.rows(2 * k, 2).into_owned()).collect();
            let k = KrausSet::new(ops).unwrap();
            assert!(k.completeness_defect() < 1e-12);
            let phi = choi_from_kraus(&k);
            assert!((trace(&phi.matrix).re - 1.0).abs() < 1e-12);
            assert!(max_abs_diff(&phi.input_marginal(), &(identity(2) * c64(0.5, 0.0))) < 1e-12);
            let back = choi_from_kraus(&kraus_from_choi(&phi).unwrap());
            assert!(max_abs_diff(&back.matrix, &phi.matrix) < 1e-10);
            let chi = chi_from_choi(&phi).unwrap();
            assert!(chi.trace_preservation_defect() < 1e-10);
            assert!(max_abs_diff(&choi_from_chi(&chi).unwrap().matrix, &phi.matrix) < 1e-10);
            let rho = random_state(&mut rng, 2);
            let direct = apply_channel(&k, &rho).unwrap();
            let mut via_chi = DMatrix::zeros(2, 2);
            for j in 0..4 {
                for l in 0..4 {
                    via_chi += pauli(j) * rho.matrix() * pauli(l).adjoint() * chi.chi[(j, l)];
                }
            }
            assert!(max_abs_diff(direct.matrix(), &via_chi) < 1e-10);
        }
    }

    #[test]
    fn fidelity_examples() {
        let zero = ket(1.0, c64(0.0, 0.0));
        let one = ket(0.0, c64(1.0, 0.0));
        assert!((state_fidelity(&zero, &zero).unwrap() - 1.0).abs() < 1e-12);
        assert!(state_fidelity(&zero, &one).unwrap() < 1e-12);
        let mixed = DensityMatrix::maximally_mixed(2);
        let psi = ket(0.3, cis(0.4));
        assert!((state_fidelity(&mixed, &psi).unwrap() - 0.5).abs() < 1e-12);

        let id = choi_from_kraus(&KrausSet::unitary(identity(2)));
        let had = choi_from_kraus(&KrausSet::unitary(h()));
        assert!((process_fidelity(&id, &id).unwrap() - 1.0).abs() < 1e-12);
        // |Tr(I† H)|² / 4 = 0
        assert!(process_fidelity(&id, &had).unwrap() < 1e-12);
    }

    #[test]
    fn unitary_process_fidelity_matches_trace_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let u = haar_unitary(2, &mut rng);
            let v = haar_unitary(2, &mut rng);
            let f = process_fidelity(&choi_from_kraus(&KrausSet::unitary(u.clone())), &choi_from_kraus(&KrausSet::unitary(v.clone()))).unwrap();
            let want = inner(&u, &v).norm_sqr() / 4.0;
            assert!((f - want).abs() < 1e-9, "{f} {want}");
        }
    }

    #[test]
    fn fidelity_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = random_state(&mut rng, 3);
            let b = random_state(&mut rng, 3);
            assert!((state_fidelity(&a, &a).unwrap() - 1.0).abs() < 1e-9);
            let f_ab = state_fidelity(&a, &b).unwrap();
            assert!((f_ab - state_fidelity(&b, &a).unwrap()).abs() < 1e-9);
            let lam = 0.4;
            let mix = DensityMatrix::new(a.matrix() * c64(lam, 0.0) + b.matrix() * c64(1.0 - lam, 0.0)).unwrap();
            assert!(state_fidelity(&mix, &a).unwrap() >= f_ab - 1e-12);
        }
    }

    #[test]
    fn postselected_mode_matrix_channel() {
        let ch = channel_from_mode_matrix(&h()).unwrap();
        let zero = ket(1.0, c64(0.0, 0.0));
        let (out, p) = ch.apply(&zero).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
        assert!(max_abs_diff(out.matrix(), ket(1.0, c64(1.0, 0.0)).matrix()) < 1e-12);

        let id = channel_from_mode_matrix(&identity(2)).unwrap();
        assert!(id.kraus.completeness_defect() < 1e-15);
        assert!(channel_from_mode_matrix(&DMatrix::zeros(2, 2)).is_err());

        let theta = crate::synthesis::calibrate_tunable_bs(0.5).unwrap();
        let w = tunable_bs_w(std::f64::consts::PI / 3.0, theta);
        let ch = channel_from_mode_matrix(&w).unwrap();
        let a = &ch.kraus.ops[0];
        let (vals, _) = hermitian_eigen(&(a.adjoint() * a));
        assert!(vals[1] <= 1.0 + 1e-12);
        let (out, _) = ch.apply(&zero).unwrap();
        let pop1 = out.matrix()[(1, 1)].re;
        assert!((pop1 - 0.123).abs() < 0.01, "{pop1}");
        let [x, y, z] = out.bloch().unwrap();
        assert!((x * x + y * y + z * z - 1.0).abs() < 1e-10);
    }

    #[test]
    fn tunable_bs_fidelity_to_hadamard_rises_with_r() {
        let theta = crate::synthesis::calibrate_tunable_bs(0.5).unwrap();
        let target = choi_from_kraus(&KrausSet::unitary(h()));
        let mut prev = -1.0;
        for alpha in [0.0, std::f64::consts::PI / 3.0, 2.0 * std::f64::consts::PI / 3.0, std::f64::consts::PI] {
            let ch = channel_from_mode_matrix(&tunable_bs_w(alpha, theta)).unwrap();
            let f = process_fidelity(&ch.choi().unwrap(), &target).unwrap();
            assert!(f > prev, "{alpha}: {f}");
            prev = f;
        }
        assert!(prev > 1.0 - 1e-9);
    }
}
