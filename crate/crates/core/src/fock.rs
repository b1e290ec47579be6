//! Fock states of `N` photons in `M` frequency bins.
//!
//! Bases are ordered lexicographically *descending* on the occupancy vector,
//! so for two photons in two modes the order is `(2,0), (1,1), (0,2)`. This
//! ordering is what every serialized matrix layout refers to.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{QfpError, Result};

/// Default cap on the number of enumerated states.
pub const DEFAULT_BASIS_CAP: usize = 1_000_000;

/// Name of the basis ordering, written into result metadata.
pub const BASIS_ORDER: &str = "lexicographic-descending";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FockState {
    occupancy: Vec<usize>,
}

impl FockState {
    pub fn new(occupancy: Vec<usize>) -> Self {
        Self { occupancy }
    }

    pub fn occupancy(&self) -> &[usize] {
        &self.occupancy
    }

    pub fn modes(&self) -> usize {
        self.occupancy.len()
    }

    pub fn total(&self) -> usize {
        self.occupancy.iter().sum()
    }

    /// `Π_p n_p!`
    pub fn factorial_product(&self) -> f64 {
        self.occupancy.iter().map(|&n| factorial(n)).product()
    }
}

impl fmt::Display for FockState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "|")?;
        for (i, n) in self.occupancy.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{n}")?;
        }
        write!(f, "⟩")
    }
}

/// Sorted list of the mode occupied by each photon.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModeAssignment {
    modes: Vec<usize>,
}

impl ModeAssignment {
    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    /// Rebuild the occupancy vector over `num_modes` modes.
    pub fn to_state(&self, num_modes: usize) -> Result<FockState> {
        let mut occ = vec![0; num_modes];
        for &m in &self.modes {
            if m >= num_modes {
                return Err(QfpError::Dimension(format!(
                    "mode {m} outside {num_modes} modes"
                )));
            }
            occ[m] += 1;
        }
        Ok(FockState::new(occ))
    }
}

pub fn assignment_of(state: &FockState) -> ModeAssignment {
    let modes = state
        .occupancy
        .iter()
        .enumerate()
        .flat_map(|(m, &n)| std::iter::repeat_n(m, n))
        .collect();
    ModeAssignment { modes }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FockBasis {
    photons: usize,
    modes: usize,
    states: Vec<FockState>,
    #[serde(skip)]
    index: HashMap<FockState, usize>,
}

impl PartialEq for FockBasis {
    fn eq(&self, other: &Self) -> bool {
        self.photons == other.photons && self.modes == other.modes && self.states == other.states
    }
}

impl FockBasis {
    fn from_states(photons: usize, modes: usize, states: Vec<FockState>) -> Self {
        let index = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Self {
            photons,
            modes,
            states,
            index,
        }
    }

    pub fn photons(&self) -> usize {
        self.photons
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn dimension(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[FockState] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &FockState {
        &self.states[i]
    }

    pub fn position(&self, state: &FockState) -> Option<usize> {
        if self.index.is_empty() && !self.states.is_empty() {
            // deserialized without the lookup table
            return self.states.iter().position(|s| s == state);
        }
        self.index.get(state).copied()
    }

    /// Build a basis from an explicit state list, keeping the caller's order.
    pub fn from_list(states: Vec<FockState>) -> Result<Self> {
        let first = states.first().ok_or(QfpError::EmptyBasis)?;
        let (photons, modes) = (first.total(), first.modes());
        for s in &states {
            if s.total() != photons || s.modes() != modes {
                return Err(QfpError::Dimension(format!(
                    "state {s} does not have {photons} photons in {modes} modes"
                )));
            }
        }
        Ok(Self::from_states(photons, modes, states))
    }
}

/// `binomial(n, k)` as a float; exact for the sizes used here.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

pub fn enumerate_basis(photons: usize, modes: usize) -> Result<FockBasis> {
    enumerate_basis_capped(photons, modes, DEFAULT_BASIS_CAP)
}

pub fn enumerate_basis_capped(photons: usize, modes: usize, cap: usize) -> Result<FockBasis> {
    if modes == 0 {
        return Err(QfpError::InvalidParameter("at least one mode is required".into()));
    }
    let dim = binomial(photons + modes - 1, modes - 1);
    if dim > cap as f64 {
        return Err(QfpError::Resource(format!(
            "{photons} photons in {modes} modes span {dim} states (cap {cap})"
        )));
    }
    let mut states = Vec::with_capacity(dim as usize);
    let mut occ = vec![0; modes];
    fill_compositions(photons, 0, &mut occ, &mut states);
    Ok(FockBasis::from_states(photons, modes, states))
}

fn fill_compositions(remaining: usize, mode: usize, occ: &mut [usize], out: &mut Vec<FockState>) {
    if mode == occ.len() - 1 {
        occ[mode] = remaining;
        out.push(FockState::new(occ.to_vec()));
        return;
    }
    for n in (0..=remaining).rev() {
        occ[mode] = n;
        fill_compositions(remaining - n, mode + 1, occ, out);
    }
    occ[mode] = 0;
}

/// Sub-basis keeping the listed states in parent order.
///
/// An empty `keep` is an error unless `allow_empty` is set.
pub fn restrict_basis(basis: &FockBasis, keep: &[FockState], allow_empty: bool) -> Result<FockBasis> {
    if keep.is_empty() && !allow_empty {
        return Err(QfpError::EmptyBasis);
    }
    let mut positions = Vec::with_capacity(keep.len());
    for s in keep {
        let p = basis
            .position(s)
            .ok_or_else(|| QfpError::UnknownState(s.occupancy().to_vec()))?;
        positions.push(p);
    }
    positions.sort_unstable();
    positions.dedup();
    let states = positions.iter().map(|&p| basis.states[p].clone()).collect();
    Ok(FockBasis::from_states(basis.photons, basis.modes, states))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn occs(b: &FockBasis) -> Vec<Vec<usize>> {
        b.states().iter().map(|s| s.occupancy().to_vec()).collect()
    }

    #[test]
    fn single_photon_two_modes() {
        let b = enumerate_basis(1, 2).unwrap();
        assert_eq!(occs(&b), vec![vec![1, 0], vec![0, 1]]);
    }

    #[test]
    fn two_photons_two_modes() {
        let b = enumerate_basis(2, 2).unwrap();
        assert_eq!(occs(&b), vec![vec![2, 0], vec![1, 1], vec![0, 2]]);
        assert_eq!(b.dimension(), 3);
    }

    #[test]
    fn vacuum() {
        let b = enumerate_basis(0, 5).unwrap();
        assert_eq!(occs(&b), vec![vec![0; 5]]);
    }

    #[test]
    fn dimension_cap() {
        let err = enumerate_basis_capped(4, 30, 1000).unwrap_err();
        assert!(matches!(err, QfpError::Resource(_)));
    }

    #[test]
    fn cnot_logical_restriction() {
        let full = enumerate_basis(2, 9).unwrap();
        let mk = |bins: [usize; 2]| {
            let mut o = vec![0; 9];
            for b in bins {
                o[b] += 1;
            }
            FockState::new(o)
        };
        let keep = vec![mk([0, 7]), mk([0, 8]), mk([6, 7]), mk([6, 8])];
        let sub = restrict_basis(&full, &keep, false).unwrap();
        assert_eq!(sub.dimension(), 4);
        assert_eq!(sub.state(0), &keep[0]);
    }

    #[test]
    fn restriction_edge_cases() {
        let full = enumerate_basis(2, 3).unwrap();
        let all = restrict_basis(&full, full.states(), false).unwrap();
        assert_eq!(all, full);
        assert!(matches!(restrict_basis(&full, &[], false), Err(QfpError::EmptyBasis)));
        assert_eq!(restrict_basis(&full, &[], true).unwrap().dimension(), 0);
        let stranger = FockState::new(vec![3, 0, 0]);
        assert!(matches!(
            restrict_basis(&full, &[stranger], false),
            Err(QfpError::UnknownState(_))
        ));
    }

    #[test]
    fn assignments() {
        let a = assignment_of(&FockState::new(vec![2, 0, 1]));
        assert_eq!(a.modes(), &[0, 0, 2]);
        assert_eq!(assignment_of(&FockState::new(vec![0, 1])).modes(), &[1]);
        assert_eq!(assignment_of(&FockState::new(vec![1, 1, 1])).modes(), &[0, 1, 2]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn dimension_matches_binomial(n in 0usize..=4, m in 1usize..=8) {
                let b = enumerate_basis(n, m).unwrap();
                prop_assert_eq!(b.dimension() as f64, binomial(n + m - 1, m - 1));
                for w in b.states().windows(2) {
                    prop_assert!(w[0].occupancy() > w[1].occupancy());
                }
            }

            #[test]
            fn assignment_round_trip(occ in proptest::collection::vec(0usize..4, 1..7)) {
                let s = FockState::new(occ);
                let a = assignment_of(&s);
                prop_assert_eq!(a.modes().len(), s.total());
                prop_assert_eq!(a.to_state(s.modes()).unwrap(), s);
            }
        }
    }
}
