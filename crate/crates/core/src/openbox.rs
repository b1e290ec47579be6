//! Coherent-state characterization of a mode matrix: single-bin spectra give
//! the moduli `|V_{mm'}|`, two-bin fringe scans give relative phases within
//! each output row.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::{DMatrix, Matrix3, Vector3};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{QfpError, Result};
use crate::linalg::{c64, cis, CMatrix};

/// Measurement noise on detected optical power `p`:
/// `p (1 + σ_rel ξ₁) + background + σ_add ξ₂`, clipped at zero, times an
/// optional per-output-bin transmission.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    #[serde(default)]
    pub relative_sigma: f64,
    #[serde(default)]
    pub additive_sigma: f64,
    #[serde(default)]
    pub background: f64,
    /// `(bin, transmission)` pairs; unlisted bins transmit fully.
    #[serde(default)]
    pub bin_transmission: Vec<(i64, f64)>,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn relative(sigma: f64) -> Self {
        Self {
            relative_sigma: sigma,
            ..Self::default()
        }
    }

    pub fn tag(&self) -> String {
        if *self == Self::default() {
            "noiseless".into()
        } else {
            format!(
                "relative={:e},additive={:e},background={:e}",
                self.relative_sigma, self.additive_sigma, self.background
            )
        }
    }

    fn transmission(&self, bin: i64) -> f64 {
        self.bin_transmission
            .iter()
            .find(|(b, _)| *b == bin)
            .map_or(1.0, |(_, t)| *t)
    }

    fn apply<R: Rng + ?Sized>(&self, p: f64, bin: i64, rng: &mut R) -> f64 {
        let mut v = p * self.transmission(bin);
        if self.relative_sigma > 0.0 {
            let xi: f64 = rng.sample(StandardNormal);
            v *= 1.0 + self.relative_sigma * xi;
        }
        v += self.background;
        if self.additive_sigma > 0.0 {
            let xi: f64 = rng.sample(StandardNormal);
            v += self.additive_sigma * xi;
        }
        v.max(0.0)
    }

    /// One-sigma uncertainty of a measured power `p`.
    fn power_sigma(&self, p: f64) -> f64 {
        (self.relative_sigma * p).hypot(self.additive_sigma)
    }
}

/// Sub-matrix of the mode matrix probed by the measurements, with its bin labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multiport {
    pub out_bins: Vec<i64>,
    pub in_bins: Vec<i64>,
    #[serde(with = "crate::io::complex_matrix")]
    pub entries: CMatrix,
}

impl Multiport {
    pub fn new(out_bins: Vec<i64>, in_bins: Vec<i64>, entries: CMatrix) -> Result<Self> {
        if entries.shape() != (out_bins.len(), in_bins.len()) {
            return Err(QfpError::Dimension(format!(
                "{:?} entries for {} outputs and {} inputs",
                entries.shape(),
                out_bins.len(),
                in_bins.len()
            )));
        }
        Ok(Self {
            out_bins,
            in_bins,
            entries,
        })
    }

    /// Square multiport on bins `0..n`.
    pub fn from_matrix(entries: CMatrix) -> Self {
        let bins: Vec<i64> = (0..entries.nrows() as i64).collect();
        let cols: Vec<i64> = (0..entries.ncols() as i64).collect();
        Self {
            out_bins: bins,
            in_bins: cols,
            entries,
        }
    }

    pub fn from_mode_matrix(v: &crate::circuit::ModeMatrix, out_bins: &[i64], in_bins: &[i64]) -> Result<Self> {
        Ok(Self {
            out_bins: out_bins.to_vec(),
            in_bins: in_bins.to_vec(),
            entries: v.block(out_bins, in_bins)?,
        })
    }

    fn column(&self, bin: i64) -> Result<usize> {
        self.in_bins
            .iter()
            .position(|&b| b == bin)
            .ok_or(QfpError::BinCoverage(bin))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMeasurement {
    pub input_bin: i64,
    pub out_bins: Vec<i64>,
    /// Detected power per output bin, input power normalized to 1.
    pub powers: Vec<f64>,
    pub noise: String,
}

impl SpectrumMeasurement {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin,power\n");
        for (b, p) in self.out_bins.iter().zip(&self.powers) {
            let _ = writeln!(s, "{b},{p:.16e}");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeScan {
    pub probes: (i64, i64),
    pub phases: Vec<f64>,
    pub out_bins: Vec<i64>,
    /// `traces[k][j]`: power at `out_bins[k]` for `phases[j]`.
    pub traces: Vec<Vec<f64>>,
    pub noise: String,
}

impl FringeScan {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("phi");
        for b in &self.out_bins {
            let _ = write!(s, ",{b}");
        }
        s.push('\n');
        for (j, phi) in self.phases.iter().enumerate() {
            let _ = write!(s, "{phi:.16e}");
            for t in &self.traces {
                let _ = write!(s, ",{:.16e}", t[j]);
            }
            s.push('\n');
        }
        s
    }

    pub fn trace(&self, out_bin: i64) -> Result<&[f64]> {
        let k = self
            .out_bins
            .iter()
            .position(|&b| b == out_bin)
            .ok_or(QfpError::BinCoverage(out_bin))?;
        Ok(&self.traces[k])
    }
}

/// `n` equally spaced phases on `[0, 2π)`.
pub fn phase_grid(n: usize) -> Vec<f64> {
    (0..n).map(|j| 2.0 * std::f64::consts::PI * j as f64 / n as f64).collect()
}

pub fn simulate_single_bin_probe<R: Rng + ?Sized>(
    v: &Multiport,
    input_bin: i64,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<SpectrumMeasurement> {
    let c = v.column(input_bin)?;
    let powers = v
        .out_bins
        .iter()
        .enumerate()
        .map(|(r, &b)| noise.apply(v.entries[(r, c)].norm_sqr(), b, rng))
        .collect();
    Ok(SpectrumMeasurement {
        input_bin,
        out_bins: v.out_bins.clone(),
        powers,
        noise: noise.tag(),
    })
}

/// Equal superposition of `m1` and `m2` with relative phase `φ` on `m2`:
/// `P_m(φ) = ½ |V_{m,m1} + e^{iφ} V_{m,m2}|²`.
pub fn simulate_fringe_scan<R: Rng + ?Sized>(
    v: &Multiport,
    m1: i64,
    m2: i64,
    grid: &[f64],
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<FringeScan> {
    if m1 == m2 {
        return Err(QfpError::InvalidParameter("fringe probes must be distinct bins".into()));
    }
    validate_grid(grid)?;
    let (c1, c2) = (v.column(m1)?, v.column(m2)?);
    let traces = v
        .out_bins
        .iter()
        .enumerate()
        .map(|(r, &b)| {
            grid.iter()
                .map(|&phi| {
                    let amp = v.entries[(r, c1)] + cis(phi) * v.entries[(r, c2)];
                    noise.apply(0.5 * amp.norm_sqr(), b, rng)
                })
                .collect()
        })
        .collect();
    Ok(FringeScan {
        probes: (m1, m2),
        phases: grid.to_vec(),
        out_bins: v.out_bins.clone(),
        traces,
        noise: noise.tag(),
    })
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 8 {
        return Err(QfpError::InvalidParameter(format!(
            "a fringe scan needs at least 8 phases, got {}",
            grid.len()
        )));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(QfpError::InvalidParameter("phase grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Single-bin spectra for every input bin and fringe scans for every input
/// pair, drawn from one random stream.
pub fn simulate_characterization<R: Rng + ?Sized>(
    v: &Multiport,
    grid: &[f64],
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<(Vec<SpectrumMeasurement>, Vec<FringeScan>)> {
    let spectra = v
        .in_bins
        .iter()
        .map(|&b| simulate_single_bin_probe(v, b, noise, rng))
        .collect::<Result<_>>()?;
    let scans = all_pairs(&v.in_bins)
        .into_iter()
        .map(|(a, b)| simulate_fringe_scan(v, a, b, grid, noise, rng))
        .collect::<Result<_>>()?;
    Ok((spectra, scans))
}

/// Least-squares fit of `a + b cos φ + c sin φ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidFit {
    pub mean: f64,
    pub cos: f64,
    pub sin: f64,
    pub residual_rms: f64,
    /// Standard error of the fitted phase `atan2(−c, b)`.
    pub phase_se: f64,
}

impl SinusoidFit {
    pub fn amplitude(&self) -> f64 {
        self.cos.hypot(self.sin)
    }

    /// Phase of the fringe maximum measured backwards: `P ∝ cos(φ + Δ)` gives `Δ`.
    pub fn phase(&self) -> f64 {
        (-self.sin).atan2(self.cos)
    }
}

pub fn fit_sinusoid(phases: &[f64], trace: &[f64]) -> Result<SinusoidFit> {
    if phases.len() != trace.len() || phases.len() < 4 {
        return Err(QfpError::FitFailure("trace and phase grid disagree or are too short".into()));
    }
    let mut xtx = Matrix3::zeros();
    let mut xty = Vector3::zeros();
    for (&phi, &y) in phases.iter().zip(trace) {
        let row = Vector3::new(1.0, phi.cos(), phi.sin());
        xtx += row * row.transpose();
        xty += row * y;
    }
    let inv = xtx
        .try_inverse()
        .ok_or_else(|| QfpError::FitFailure("phase grid does not determine a sinusoid".into()))?;
    let beta = inv * xty;
    let rss: f64 = phases
        .iter()
        .zip(trace)
        .map(|(&phi, &y)| (y - beta[0] - beta[1] * phi.cos() - beta[2] * phi.sin()).powi(2))
        .sum();
    let n = phases.len();
    let sigma2 = if n > 3 { rss / (n - 3) as f64 } else { 0.0 };
    let cov = inv * sigma2;
    let (b, c) = (beta[1], beta[2]);
    let r2 = b * b + c * c;
    // delta method on atan2(−c, b)
    let phase_se = if r2 > 0.0 {
        let (db, dc) = (c / r2, -b / r2);
        (db * db * cov[(1, 1)] + dc * dc * cov[(2, 2)] + 2.0 * db * dc * cov[(1, 2)])
            .max(0.0)
            .sqrt()
    } else {
        f64::INFINITY
    };
    Ok(SinusoidFit {
        mean: beta[0],
        cos: b,
        sin: c,
        residual_rms: (rss / n as f64).sqrt(),
        phase_se,
    })
}

/// `(P_max − P_min)/(P_max + P_min)` of the fitted sinusoid.
pub fn fringe_visibility(scan: &FringeScan, out_bin: i64, noise_floor: f64) -> Result<f64> {
    let fit = fit_sinusoid(&scan.phases, scan.trace(out_bin)?)?;
    if fit.mean <= noise_floor.max(0.0) {
        return Err(QfpError::Degenerate(format!(
            "mean power {:.3e} at bin {out_bin} is below the noise floor",
            fit.mean
        )));
    }
    Ok(fit.amplitude() / fit.mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructOptions {
    /// Moduli below `max(3·SE, min_modulus)` have undefined phases.
    #[serde(default = "default_min_modulus")]
    pub min_modulus: f64,
    /// A fit fails when its residual RMS exceeds this fraction of the trace mean.
    #[serde(default = "default_max_residual")]
    pub max_residual_fraction: f64,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default = "default_sync_sweeps")]
    pub sync_sweeps: usize,
}

fn default_min_modulus() -> f64 {
    1e-6
}
fn default_max_residual() -> f64 {
    0.5
}
fn default_sync_sweeps() -> usize {
    50
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self {
            min_modulus: default_min_modulus(),
            max_residual_fraction: default_max_residual(),
            noise: NoiseModel::default(),
            sync_sweeps: default_sync_sweeps(),
        }
    }
}

pub const GAUGE_CONVENTION: &str =
    "first column then first row real non-negative; remaining freedom fixed by a spanning forest over significant entries in row-major order";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedMultiport {
    pub out_bins: Vec<i64>,
    pub in_bins: Vec<i64>,
    #[serde(with = "crate::io::complex_matrix")]
    pub entries: CMatrix,
    pub modulus_se: Vec<Vec<f64>>,
    pub phase_se: Vec<Vec<f64>>,
    pub undefined_phase: Vec<Vec<bool>>,
    pub gauge: String,
}

impl ReconstructedMultiport {
    pub fn multiport(&self) -> Multiport {
        Multiport {
            out_bins: self.out_bins.clone(),
            in_bins: self.in_bins.clone(),
            entries: self.entries.clone(),
        }
    }
}

/// Every unordered pair of input bins.
pub fn all_pairs(bins: &[i64]) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for (i, &a) in bins.iter().enumerate() {
        for &b in &bins[i + 1..] {
            out.push((a, b));
        }
    }
    out
}

struct Edge {
    c1: usize,
    c2: usize,
    delta: f64,
    weight: f64,
    se: f64,
}

pub fn reconstruct_multiport(
    spectra: &[SpectrumMeasurement],
    scans: &[FringeScan],
    opts: &ReconstructOptions,
) -> Result<ReconstructedMultiport> {
    let first = spectra
        .first()
        .ok_or_else(|| QfpError::InsufficientData("no spectra supplied".into()))?;
    let out_bins = first.out_bins.clone();
    let in_bins: Vec<i64> = spectra.iter().map(|s| s.input_bin).collect();
    let (nr, nc) = (out_bins.len(), in_bins.len());
    let col_of = |b: i64| in_bins.iter().position(|&x| x == b).ok_or(QfpError::BinCoverage(b));

    let mut modulus = vec![vec![0.0; nc]; nr];
    let mut modulus_se = vec![vec![0.0; nc]; nr];
    for (c, s) in spectra.iter().enumerate() {
        if s.out_bins != out_bins {
            return Err(QfpError::Dimension("spectra cover different output bins".into()));
        }
        for r in 0..nr {
            let p = (s.powers[r] - opts.noise.background).max(0.0);
            let m = p.sqrt();
            let dp = opts.noise.power_sigma(p);
            modulus[r][c] = m;
            modulus_se[r][c] = if dp > 0.0 { dp / (2.0 * m.max(dp.sqrt())) } else { 0.0 };
        }
    }
    let significant: Vec<Vec<bool>> = (0..nr)
        .map(|r| {
            (0..nc)
                .map(|c| modulus[r][c] >= (3.0 * modulus_se[r][c]).max(opts.min_modulus))
                .collect()
        })
        .collect();

    // phase differences per row from every scan
    let mut edges: Vec<Vec<Edge>> = (0..nr).map(|_| Vec::new()).collect();
    for scan in scans {
        validate_grid(&scan.phases)?;
        let (c1, c2) = (col_of(scan.probes.0)?, col_of(scan.probes.1)?);
        for (k, &bin) in scan.out_bins.iter().enumerate() {
            let Some(r) = out_bins.iter().position(|&b| b == bin) else {
                continue;
            };
            if !(significant[r][c1] && significant[r][c2]) {
                continue;
            }
            let trace: Vec<f64> = scan.traces[k].iter().map(|p| p - opts.noise.background).collect();
            let fit = fit_sinusoid(&scan.phases, &trace)?;
            let scale = fit.mean.abs().max(opts.min_modulus.powi(2));
            if !fit.residual_rms.is_finite() || fit.residual_rms > opts.max_residual_fraction * scale {
                return Err(QfpError::FitFailure(format!(
                    "scan {:?} at bin {bin}: residual {:.3e} against mean {:.3e}",
                    scan.probes, fit.residual_rms, fit.mean
                )));
            }
            edges[r].push(Edge {
                c1,
                c2,
                delta: fit.phase(),
                weight: fit.amplitude(),
                se: fit.phase_se,
            });
        }
    }

    let mut entries = DMatrix::zeros(nr, nc);
    let mut phase_se = vec![vec![f64::INFINITY; nc]; nr];
    for r in 0..nr {
        let nodes: Vec<usize> = (0..nc).filter(|&c| significant[r][c]).collect();
        if nodes.is_empty() {
            continue;
        }
        let (phases, se) = row_phases(nc, &nodes, &edges[r], opts.sync_sweeps).map_err(|missing| {
            QfpError::Connectivity(format!(
                "output bin {}: input bin {} is not linked to input bin {} by any usable scan",
                out_bins[r], in_bins[missing], in_bins[nodes[0]]
            ))
        })?;
        for &c in &nodes {
            entries[(r, c)] = Complex64::from_polar(modulus[r][c], phases[c]);
            phase_se[r][c] = se[c];
        }
        for c in 0..nc {
            if !significant[r][c] {
                entries[(r, c)] = c64(modulus[r][c], 0.0);
            }
        }
    }

    let undefined_phase: Vec<Vec<bool>> = significant.iter().map(|row| row.iter().map(|s| !s).collect()).collect();
    let entries = gauge_fix_with(&entries, &significant);
    Ok(ReconstructedMultiport {
        out_bins,
        in_bins,
        entries,
        modulus_se,
        phase_se,
        undefined_phase,
        gauge: GAUGE_CONVENTION.into(),
    })
}

/// Phases of one row's significant entries relative to its first one:
/// breadth-first over the scan graph, then weighted synchronization sweeps
/// `θ_c ← arg Σ w e^{i(θ_other ± Δ)}` to use redundant scans.
fn row_phases(
    nc: usize,
    nodes: &[usize],
    edges: &[Edge],
    sweeps: usize,
) -> std::result::Result<(Vec<f64>, Vec<f64>), usize> {
    let mut phase = vec![f64::NAN; nc];
    let mut se = vec![f64::INFINITY; nc];
    let root = nodes[0];
    phase[root] = 0.0;
    se[root] = 0.0;
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for e in edges {
            let (v, d) = if e.c1 == u {
                (e.c2, e.delta)
            } else if e.c2 == u {
                (e.c1, -e.delta)
            } else {
                continue;
            };
            if phase[v].is_nan() {
                phase[v] = phase[u] + d;
                se[v] = se[u].hypot(e.se);
                queue.push_back(v);
            }
        }
    }
    if let Some(&missing) = nodes.iter().find(|&&c| phase[c].is_nan()) {
        return Err(missing);
    }
    for _ in 0..sweeps {
        for &c in &nodes[1..] {
            let mut acc = c64(0.0, 0.0);
            for e in edges {
                if e.c2 == c {
                    acc += cis(phase[e.c1] + e.delta) * e.weight;
                } else if e.c1 == c {
                    acc += cis(phase[e.c2] - e.delta) * e.weight;
                }
            }
            if acc.norm() > 0.0 {
                phase[c] = acc.arg();
            }
        }
    }
    for &c in nodes {
        let best = edges
            .iter()
            .filter(|e| e.c1 == c || e.c2 == c)
            .map(|e| e.se)
            .fold(f64::INFINITY, f64::min);
        if c != root {
            se[c] = se[c].min(best);
        }
    }
    Ok((phase, se))
}

/// Remove output and input phases: entries on a spanning forest of the
/// significant-entry graph become real non-negative, with first-column
/// entries taken first and first-row entries next.
pub fn gauge_fix(v: &CMatrix, min_modulus: f64) -> CMatrix {
    let significant: Vec<Vec<bool>> = (0..v.nrows())
        .map(|r| (0..v.ncols()).map(|c| v[(r, c)].norm() >= min_modulus).collect())
        .collect();
    gauge_fix_with(v, &significant)
}

fn gauge_fix_with(v: &CMatrix, significant: &[Vec<bool>]) -> CMatrix {
    let (nr, nc) = v.shape();
    // nodes 0..nr are rows, nr..nr+nc are columns
    let mut order: Vec<(usize, usize)> = (0..nr).map(|r| (r, 0)).collect();
    order.extend((1..nc).map(|c| (0, c)));
    for r in 1..nr {
        for c in 1..nc {
            order.push((r, c));
        }
    }
    let mut parent: Vec<usize> = (0..nr + nc).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nr + nc];
    for (r, c) in order {
        if c >= nc || !significant[r][c] {
            continue;
        }
        let (a, b) = (find(&mut parent, r), find(&mut parent, nr + c));
        if a != b {
            parent[a] = b;
            let ph = v[(r, c)].arg();
            adj[r].push((nr + c, ph));
            adj[nr + c].push((r, ph));
        }
    }
    // α_r + β_c = −arg V_rc on tree edges; roots prefer column 0, then row 0
    let mut offset = vec![f64::NAN; nr + nc];
    let roots = std::iter::once(nr).chain(0..nr + nc);
    for root in roots {
        if root >= nr + nc || !offset[root].is_nan() {
            continue;
        }
        offset[root] = 0.0;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &(w, ph) in &adj[u] {
                if offset[w].is_nan() {
                    offset[w] = -ph - offset[u];
                    queue.push_back(w);
                }
            }
        }
    }
    DMatrix::from_fn(nr, nc, |r, c| v[(r, c)] * cis(offset[r] + offset[nr + c]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{from_real_rows, haar_unitary, identity, max_abs_diff};
    use crate::transfer::{dft_matrix, fidelity_success};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn had() -> Multiport {
        let r = 1.0 / 2f64.sqrt();
        Multiport::from_matrix(from_real_rows(&[&[r, r], &[r, -r]]))
    }

    fn measure(v: &Multiport, noise: &NoiseModel, seed: u64) -> (Vec<SpectrumMeasurement>, Vec<FringeScan>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        simulate_characterization(v, &phase_grid(32), noise, &mut rng).unwrap()
    }

    #[test]
    fn spectra_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let id = Multiport::from_matrix(identity(3));
        let s = simulate_single_bin_probe(&id, 0, &NoiseModel::noiseless(), &mut rng).unwrap();
        assert_eq!(s.powers, vec![1.0, 0.0, 0.0]);
        let s = simulate_single_bin_probe(&had(), 0, &NoiseModel::noiseless(), &mut rng).unwrap();
        assert!(s.powers.iter().all(|p| (p - 0.5).abs() < 1e-15));
        let tr = Multiport::from_matrix(dft_matrix(3));
        for b in 0..3 {
            let s = simulate_single_bin_probe(&tr, b, &NoiseModel::noiseless(), &mut rng).unwrap();
            assert!(s.powers.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        }
    }

    #[test]
    fn fringe_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let grid = phase_grid(24);
        let id = Multiport::from_matrix(identity(2));
        let flat = simulate_fringe_scan(&id, 0, 1, &grid, &NoiseModel::noiseless(), &mut rng).unwrap();
        assert!(flat.traces[0].iter().all(|p| (p - 0.5).abs() < 1e-15));
        assert!(fringe_visibility(&flat, 0, 0.0).unwrap() < 1e-12);

        let h = simulate_fringe_scan(&had(), 0, 1, &grid, &NoiseModel::noiseless(), &mut rng).unwrap();
        for (phi, p) in grid.iter().zip(&h.traces[0]) {
            assert!((p - 0.5 * (1.0 + phi.cos())).abs() < 1e-15);
        }
        assert!((fringe_visibility(&h, 0, 0.0).unwrap() - 1.0).abs() < 1e-12);
        let fit = fit_sinusoid(&grid, &h.traces[0]).unwrap();
        assert!(fit.phase().abs() < 1e-12);

        let tr = Multiport::from_matrix(dft_matrix(3));
        let scan = simulate_fringe_scan(&tr, 0, 1, &phase_grid(3000), &NoiseModel::noiseless(), &mut rng).unwrap();
        let mut peaks: Vec<f64> = scan
            .traces
            .iter()
            .map(|t| {
                let j = t.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
                scan.phases[j]
            })
            .collect();
        peaks.sort_by(f64::total_cmp);
        for (p, want) in peaks.iter().zip([0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0]) {
            assert!((p - want).abs() < 0.01, "{peaks:?}");
        }
    }

    #[test]
    fn background_lowers_visibility() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = 0.1;
        let noise = NoiseModel {
            background: b,
            ..Default::default()
        };
        let h = simulate_fringe_scan(&had(), 0, 1, &phase_grid(16), &noise, &mut rng).unwrap();
        assert!((fringe_visibility(&h, 0, 0.0).unwrap() - 1.0 / (1.0 + 2.0 * b)).abs() < 1e-12);
    }

    #[test]
    fn grid_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(simulate_fringe_scan(&had(), 0, 1, &phase_grid(7), &NoiseModel::noiseless(), &mut rng).is_err());
        assert!(simulate_fringe_scan(&had(), 0, 0, &phase_grid(8), &NoiseModel::noiseless(), &mut rng).is_err());
        let mut g = phase_grid(8);
        g.swap(2, 3);
        assert!(simulate_fringe_scan(&had(), 0, 1, &g, &NoiseModel::noiseless(), &mut rng).is_err());
    }

    #[test]
    fn noiseless_hadamard_round_trip() {
        let v = had();
        let (s, f) = measure(&v, &NoiseModel::noiseless(), 1);
        let rec = reconstruct_multiport(&s, &f, &ReconstructOptions::default()).unwrap();
        assert!(max_abs_diff(&rec.entries, &v.entries) < 1e-8);
    }

    #[test]
    fn noiseless_tritter_round_trip() {
        let v = Multiport::from_matrix(dft_matrix(3));
        let (s, f) = measure(&v, &NoiseModel::noiseless(), 2);
        let rec = reconstruct_multiport(&s, &f, &ReconstructOptions::default()).unwrap();
        let m = fidelity_success(&rec.entries, &gauge_fix(&v.entries, 1e-6)).unwrap();
        assert!(m.fidelity >= 1.0 - 1e-8);
    }

    #[test]
    fn disconnected_scans_rejected() {
        let v = Multiport::from_matrix(dft_matrix(3));
        let (s, f) = measure(&v, &NoiseModel::noiseless(), 2);
        let only_first = vec![f[0].clone()];
        assert!(matches!(
            reconstruct_multiport(&s, &only_first, &ReconstructOptions::default()),
            Err(QfpError::Connectivity(_))
        ));
    }

    #[test]
    fn low_moduli_flagged() {
        let mut m = identity(3);
        m[(0, 1)] = c64(1e-9, 0.0);
        let v = Multiport::from_matrix(m);
        let (s, f) = measure(&v, &NoiseModel::noiseless(), 3);
        let rec = reconstruct_multiport(&s, &f, &ReconstructOptions::default()).unwrap();
        assert!(rec.undefined_phase[0][1]);
        assert!(!rec.undefined_phase[0][0]);
    }

    #[test]
    fn gauge_fix_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let u = haar_unitary(4, &mut rng);
            let g = gauge_fix(&u, 1e-9);
            for i in 0..4 {
                assert!(g[(i, 0)].im.abs() < 1e-12 && g[(i, 0)].re >= 0.0);
                assert!(g[(0, i)].im.abs() < 1e-12 && g[(0, i)].re >= 0.0);
            }
            assert!(max_abs_diff(&gauge_fix(&g, 1e-9), &g) < 1e-12);
            for (a, b) in u.iter().zip(g.iter()) {
                assert!((a.norm() - b.norm()).abs() < 1e-12);
            }
            let d_out = DMatrix::from_fn(4, 4, |i, j| if i == j { cis(i as f64 * 0.9 + 0.3) } else { c64(0.0, 0.0) });
            let d_in = DMatrix::from_fn(4, 4, |i, j| if i == j { cis(-(i as f64) * 1.7) } else { c64(0.0, 0.0) });
            let scrambled = &d_out * &u * &d_in;
            assert!(max_abs_diff(&gauge_fix(&scrambled, 1e-9), &g) < 1e-12);
            let m = fidelity_success(&gauge_fix(&scrambled, 1e-9), &g).unwrap();
            assert!((m.fidelity - 1.0).abs() < 1e-12 && (m.success - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_layouts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = simulate_single_bin_probe(&had(), 0, &NoiseModel::noiseless(), &mut rng).unwrap();
        let csv = s.to_csv();
        let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(csv.lines().next(), Some("bin,power"));
        assert!((row[1].parse::<f64>().unwrap() - 0.5).abs() < 1e-15);
        let f = simulate_fringe_scan(&had(), 0, 1, &phase_grid(8), &NoiseModel::noiseless(), &mut rng).unwrap();
        let csv = f.to_csv();
        assert!(csv.starts_with("phi,0,1\n"));
        assert_eq!(csv.lines().count(), 9);
    }
}
