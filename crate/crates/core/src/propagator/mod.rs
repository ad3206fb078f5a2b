//! Time evolution: Krylov propagation of pure states and the Lindblad model
//! of decay and dephasing.

pub mod krylov;
pub mod lindblad;
mod ode;

use num_complex::Complex64;

use crate::basis::{Configuration, SectorBasis};
use crate::error::{Error, Result};
use crate::hamiltonian::SparseHermitian;

pub use krylov::{Krylov, KrylovSettings};
pub use lindblad::{evolve_lindblad, LindbladMethod, LindbladSettings, NoiseSpec, OpenRecord};

/// Normalized amplitudes over the ordinals of a [`SectorBasis`].
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector(Vec<Complex64>);

pub const NORM_TOLERANCE: f64 = 1e-10;

impl StateVector {
    /// Wraps amplitudes, rejecting vectors whose norm is not 1 within
    /// [`NORM_TOLERANCE`].
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        let n = krylov::norm(&amplitudes);
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::param(format!("state norm is {n}, expected 1")));
        }
        Ok(StateVector(amplitudes))
    }

    /// Normalizes arbitrary non-zero amplitudes.
    pub fn normalized(mut amplitudes: Vec<Complex64>) -> Result<Self> {
        let n = krylov::norm(&amplitudes);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::param("cannot normalize a zero vector"));
        }
        amplitudes.iter_mut().for_each(|z| *z /= n);
        Ok(StateVector(amplitudes))
    }

    pub fn fock(basis: &SectorBasis, c: &Configuration) -> Result<Self> {
        let i = basis.index_of(c)?;
        let mut v = vec![Complex64::new(0.0, 0.0); basis.dim()];
        v[i] = Complex64::new(1.0, 0.0);
        Ok(StateVector(v))
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        krylov::norm(&self.0)
    }

    pub fn probabilities(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().map(|z| z.norm_sqr())
    }

    pub fn distance(&self, other: &StateVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn into_inner(self) -> Vec<Complex64> {
        self.0
    }
}

/// States recorded at strictly increasing times.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
    /// Matrix-vector products spent.
    pub matvecs: usize,
}

pub(crate) fn check_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::param("record times must be finite and non-negative"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("record times must be strictly increasing"));
    }
    Ok(())
}

/// `exp(-i H t) psi0` at each of `times`.
pub fn evolve_unitary(
    h: &SparseHermitian,
    psi0: &StateVector,
    times: &[f64],
    settings: &KrylovSettings,
) -> Result<Trajectory> {
    if psi0.dim() != h.dim() {
        return Err(Error::param(format!(
            "state has dimension {} but Hamiltonian has {}",
            psi0.dim(),
            h.dim()
        )));
    }
    if (psi0.norm() - 1.0).abs() > NORM_TOLERANCE {
        return Err(Error::param("initial state is not normalized"));
    }
    check_times(times)?;
    let mut krylov = Krylov::new(*settings);
    let mut psi = psi0.0.clone();
    let mut now = 0.0;
    let mut states = Vec::with_capacity(times.len());
    for &t in times {
        if t > now {
            krylov.propagate(h, &mut psi, t - now)?;
            now = t;
        }
        states.push(StateVector(psi.clone()));
    }
    Ok(Trajectory {
        times: times.to_vec(),
        states,
        matvecs: krylov.matvecs(),
    })
}

/// Deviation of `<[a_l, a_l^dagger]>` from 1 for the truncated ladder
/// algebra, `(n_max + 1) * P(n_l = n_max)`.
pub fn truncation_leakage(psi: &StateVector, basis: &SectorBasis, site: usize) -> f64 {
    let cap = basis.n_max();
    let weight: f64 = basis
        .states()
        .iter()
        .zip(psi.probabilities())
        .filter(|(c, _)| c.occupations()[site] == cap)
        .map(|(_, p)| p)
        .sum();
    (cap as f64 + 1.0) * weight
}

/// Largest [`truncation_leakage`] over all sites.
pub fn max_truncation_leakage(psi: &StateVector, basis: &SectorBasis) -> f64 {
    let cap = basis.n_max();
    let mut per_site = vec![0.0; basis.sites()];
    for (c, p) in basis.states().iter().zip(psi.probabilities()) {
        for (acc, &n) in per_site.iter_mut().zip(c.occupations()) {
            if n == cap {
                *acc += p;
            }
        }
    }
    per_site.into_iter().fold(0.0, f64::max) * (cap as f64 + 1.0)
}
