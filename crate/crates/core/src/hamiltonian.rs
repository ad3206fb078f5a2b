//! Sector-restricted Bose-Hubbard Hamiltonian with nearest and
//! next-nearest neighbour hopping, on-site interaction and on-site disorder.
//!
//! All quantities are in units of the mean nearest-neighbour hopping J1.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::basis::SectorBasis;
use crate::error::{Error, Result};
use crate::rng;
use crate::units;

/// Couplings and interaction of the chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub sites: usize,
    /// `sites - 1` nearest-neighbour hoppings.
    pub j1: Vec<f64>,
    /// `sites - 2` next-nearest-neighbour hoppings.
    pub j2: Vec<f64>,
    pub u: f64,
    pub omega: f64,
    pub n_max: u8,
}

impl ModelSpec {
    pub fn uniform(sites: usize, j1: f64, j2: f64, u: f64, omega: f64, n_max: u8) -> Self {
        ModelSpec {
            sites,
            j1: vec![j1; sites.saturating_sub(1)],
            j2: vec![j2; sites.saturating_sub(2)],
            u,
            omega,
            n_max,
        }
    }

    /// Uniform device averages: J2 = (1.2/11.5) J1, U = -22 J1, n_max = 3.
    pub fn device_default(sites: usize) -> Self {
        Self::uniform(
            sites,
            1.0,
            units::J2_OVER_2PI_MHZ / units::J1_OVER_2PI_MHZ,
            -22.0,
            0.0,
            3,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites == 0 {
            return Err(Error::param("model needs at least one site"));
        }
        if self.j1.len() != self.sites.saturating_sub(1) {
            return Err(Error::param(format!(
                "expected {} nearest-neighbour couplings, got {}",
                self.sites.saturating_sub(1),
                self.j1.len()
            )));
        }
        if self.j2.len() != self.sites.saturating_sub(2) {
            return Err(Error::param(format!(
                "expected {} next-nearest-neighbour couplings, got {}",
                self.sites.saturating_sub(2),
                self.j2.len()
            )));
        }
        let finite = self.j1.iter().chain(&self.j2).all(|v| v.is_finite())
            && self.u.is_finite()
            && self.omega.is_finite();
        if !finite {
            return Err(Error::param("couplings must be finite"));
        }
        if self.n_max == 0 {
            return Err(Error::param("n_max must be at least 1"));
        }
        Ok(())
    }
}

/// One sample of on-site offsets drawn uniformly from `[-strength, strength]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisorderRealization {
    pub strength: f64,
    pub offsets: Vec<f64>,
    pub seed: u64,
}

impl DisorderRealization {
    pub fn clean(sites: usize) -> Self {
        DisorderRealization {
            strength: 0.0,
            offsets: vec![0.0; sites],
            seed: 0,
        }
    }

    /// Explicit offsets; `strength` is set to their largest magnitude.
    pub fn from_offsets(offsets: Vec<f64>) -> Self {
        let strength = offsets.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        DisorderRealization {
            strength,
            offsets,
            seed: 0,
        }
    }
}

pub fn sample_disorder(strength: f64, sites: usize, seed: u64) -> Result<DisorderRealization> {
    if !(strength >= 0.0) || !strength.is_finite() {
        return Err(Error::param(format!(
            "disorder strength must be finite and non-negative, got {strength}"
        )));
    }
    let mut rng = rng::stream(seed);
    let offsets = (0..sites)
        .map(|_| strength * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    Ok(DisorderRealization {
        strength,
        offsets,
        seed,
    })
}

/// Real symmetric sparse matrix in compressed-row form.
#[derive(Clone, Debug)]
pub struct SparseHermitian {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseHermitian {
    /// Builds from unsorted triplets; duplicate entries are summed.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols: Vec<u32> = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            cols.push(c as u32);
            vals.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        SparseHermitian {
            dim,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .iter()
            .zip(&self.vals[span])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r)
            .find(|&(cc, _)| cc == c)
            .map(|(_, v)| v)
            .unwrap_or(0.0)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    /// `y = H x`.
    pub fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(y.len(), self.dim);
        for (r, out) in y.iter_mut().enumerate() {
            let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
            let mut re = 0.0;
            let mut im = 0.0;
            for k in lo..hi {
                let v = self.vals[k];
                let xc = x[self.cols[k] as usize];
                re += v * xc.re;
                im += v * xc.im;
            }
            *out = Complex64::new(re, im);
        }
    }

    pub fn expectation(&self, x: &[Complex64]) -> f64 {
        let mut y = vec![Complex64::new(0.0, 0.0); self.dim];
        self.apply(x, &mut y);
        x.iter().zip(&y).map(|(a, b)| (a.conj() * b).re).sum()
    }

    /// Largest Gershgorin radius, an upper bound on the spectral radius.
    pub fn gershgorin_bound(&self) -> f64 {
        (0..self.dim)
            .map(|r| self.row(r).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.dim, self.dim);
        for (r, c, v) in self.entries() {
            m[(r, c)] = v;
        }
        m
    }
}

/// Sector matrix of the chain Hamiltonian for one disorder realization.
pub fn build_hamiltonian(
    spec: &ModelSpec,
    disorder: &DisorderRealization,
    basis: &SectorBasis,
) -> Result<SparseHermitian> {
    spec.validate()?;
    if basis.sites() != spec.sites {
        return Err(Error::param(format!(
            "basis has {} sites but model has {}",
            basis.sites(),
            spec.sites
        )));
    }
    if basis.n_max() != spec.n_max {
        return Err(Error::param(format!(
            "basis cap {} differs from model cap {}",
            basis.n_max(),
            spec.n_max
        )));
    }
    if disorder.offsets.len() != spec.sites {
        return Err(Error::param(format!(
            "disorder has {} offsets but model has {} sites",
            disorder.offsets.len(),
            spec.sites
        )));
    }

    let n_max = spec.n_max;
    let bonds: Vec<(usize, usize, f64)> = spec
        .j1
        .iter()
        .enumerate()
        .map(|(l, &j)| (l, l + 1, j))
        .chain(spec.j2.iter().enumerate().map(|(l, &j)| (l, l + 2, j)))
        .filter(|&(_, _, j)| j != 0.0)
        .collect();

    let mut triplets = Vec::with_capacity(basis.dim() * (2 * bonds.len() + 1));
    let mut scratch: Vec<u8> = vec![0; spec.sites];
    for (col, state) in basis.states().iter().enumerate() {
        let occ = state.occupations();
        let diag: f64 = occ
            .iter()
            .zip(&disorder.offsets)
            .map(|(&n, &h)| {
                let n = n as f64;
                (spec.omega + h) * n + 0.5 * spec.u * n * (n - 1.0)
            })
            .sum();
        triplets.push((col, col, diag));

        for &(a, b, j) in &bonds {
            // a†_a a_b and a†_b a_a acting on |occ>
            for (to, from) in [(a, b), (b, a)] {
                if occ[from] == 0 || occ[to] == n_max {
                    continue;
                }
                scratch.copy_from_slice(occ);
                scratch[from] -= 1;
                scratch[to] += 1;
                let row = basis.rank(&scratch).ok_or_else(|| {
                    Error::Solver(format!("hopping left the sector from {state}"))
                })?;
                let amp = ((occ[to] as f64 + 1.0) * occ[from] as f64).sqrt();
                triplets.push((row, col, j * amp));
            }
        }
    }
    Ok(SparseHermitian::from_triplets(basis.dim(), triplets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Configuration;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_spec(sites: usize, n_max: u8, seed: u64) -> (ModelSpec, DisorderRealization) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let spec = ModelSpec {
            sites,
            j1: (0..sites - 1).map(|_| rng.random_range(0.5..1.5)).collect(),
            j2: (0..sites.saturating_sub(2))
                .map(|_| rng.random_range(-0.3..0.3))
                .collect(),
            u: rng.random_range(-25.0..5.0),
            omega: rng.random_range(-2.0..2.0),
            n_max,
        };
        let dis = sample_disorder(3.0, sites, seed).unwrap();
        (spec, dis)
    }

    /// Dense Hamiltonian on the full truncated product space from explicit
    /// ladder-operator Kronecker products, projected onto a sector.
    fn dense_projected(
        spec: &ModelSpec,
        dis: &DisorderRealization,
        basis: &SectorBasis,
    ) -> DMatrix<f64> {
        let d = spec.n_max as usize + 1;
        let mut a = DMatrix::<f64>::zeros(d, d);
        for n in 1..d {
            a[(n - 1, n)] = (n as f64).sqrt();
        }
        let id = DMatrix::<f64>::identity(d, d);
        let site_op = |op: &DMatrix<f64>, site: usize| -> DMatrix<f64> {
            let mut m = DMatrix::<f64>::identity(1, 1);
            for l in 0..spec.sites {
                let f = if l == site { op } else { &id };
                m = m.kronecker(f);
            }
            m
        };
        let full = d.pow(spec.sites as u32);
        let mut h = DMatrix::<f64>::zeros(full, full);
        let ad = a.transpose();
        let num = &ad * &a;
        for l in 0..spec.sites {
            let adl = site_op(&ad, l);
            if l + 1 < spec.sites {
                let t = &adl * site_op(&a, l + 1);
                h += (&t + t.transpose()) * spec.j1[l];
            }
            if l + 2 < spec.sites {
                let t = &adl * site_op(&a, l + 2);
                h += (&t + t.transpose()) * spec.j2[l];
            }
            let nl = site_op(&num, l);
            let eye = DMatrix::<f64>::identity(full, full);
            h += &nl * (spec.omega + dis.offsets[l]) + (&nl * (&nl - &eye)) * (0.5 * spec.u);
        }
        // product-state index with site 0 most significant
        let code = |c: &Configuration| {
            c.occupations()
                .iter()
                .fold(0usize, |acc, &n| acc * d + n as usize)
        };
        let idx: Vec<usize> = basis.states().iter().map(code).collect();
        DMatrix::from_fn(basis.dim(), basis.dim(), |i, j| h[(idx[i], idx[j])])
    }

    #[test]
    fn two_level_hopping() {
        let spec = ModelSpec::uniform(2, 0.7, 0.0, -22.0, 0.0, 1);
        let basis = SectorBasis::enumerate(2, 1, 1).unwrap();
        let h = build_hamiltonian(&spec, &DisorderRealization::clean(2), &basis).unwrap();
        let dense = h.to_dense();
        assert_eq!(dense, DMatrix::from_row_slice(2, 2, &[0.0, 0.7, 0.7, 0.0]));
        let eig = dense.symmetric_eigenvalues();
        let mut ev: Vec<f64> = eig.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert_relative_eq!(ev[0], -0.7, epsilon = 1e-14);
        assert_relative_eq!(ev[1], 0.7, epsilon = 1e-14);
    }

    #[test]
    fn single_site_diagonal() {
        let spec = ModelSpec::uniform(1, 1.0, 0.0, -22.0, 0.0, 2);
        let basis = SectorBasis::enumerate(1, 2, 2).unwrap();
        let dis = DisorderRealization::from_offsets(vec![0.3]);
        let h = build_hamiltonian(&spec, &dis, &basis).unwrap();
        assert_eq!(h.dim(), 1);
        assert_relative_eq!(h.get(0, 0), 2.0 * 0.3 - 22.0, epsilon = 1e-14);
    }

    #[test]
    fn matches_dense_ladder_construction() {
        for seed in 0..4 {
            let (spec, dis) = random_spec(4, 2, seed);
            let basis = SectorBasis::enumerate(4, 2, 2).unwrap();
            let h = build_hamiltonian(&spec, &dis, &basis).unwrap().to_dense();
            let oracle = dense_projected(&spec, &dis, &basis);
            assert!((h - oracle).amax() < 1e-12);
        }
    }

    #[test]
    fn sparse_matches_dense_with_cap_three() {
        let (spec, dis) = random_spec(4, 3, 11);
        let basis = SectorBasis::enumerate(4, 3, 3).unwrap();
        let h = build_hamiltonian(&spec, &dis, &basis).unwrap().to_dense();
        assert!((h - dense_projected(&spec, &dis, &basis)).amax() < 1e-12);
    }

    #[test]
    fn sample_disorder_contract() {
        let zero = sample_disorder(0.0, 12, 99).unwrap();
        assert!(zero.offsets.iter().all(|&v| v == 0.0));
        let a = sample_disorder(3.0, 12, 5).unwrap();
        let b = sample_disorder(3.0, 12, 5).unwrap();
        assert_eq!(a.offsets, b.offsets);
        assert!(a.offsets.iter().all(|v| v.abs() <= 3.0));
        assert!(sample_disorder(-1.0, 12, 5).is_err());
        assert!(sample_disorder(f64::NAN, 12, 5).is_err());
    }

    #[test]
    fn disorder_moments() {
        let h = 3.0;
        let draws: Vec<f64> = (0..10_000u64)
            .flat_map(|s| sample_disorder(h, 10, s).unwrap().offsets)
            .collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sigma = (h * h / 3.0).sqrt();
        assert!(mean.abs() < 3.0 * sigma / n.sqrt(), "mean {mean}");
        assert!((var / (h * h / 3.0) - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let spec = ModelSpec::device_default(4);
        let basis = SectorBasis::enumerate(5, 2, 3).unwrap();
        assert!(build_hamiltonian(&spec, &DisorderRealization::clean(4), &basis).is_err());
        let basis = SectorBasis::enumerate(4, 2, 2).unwrap();
        assert!(build_hamiltonian(&spec, &DisorderRealization::clean(4), &basis).is_err());
        let basis = SectorBasis::enumerate(4, 2, 3).unwrap();
        assert!(build_hamiltonian(&spec, &DisorderRealization::clean(3), &basis).is_err());
        let mut bad = spec.clone();
        bad.j2.pop();
        assert!(build_hamiltonian(&bad, &DisorderRealization::clean(4), &basis).is_err());
    }

    proptest! {
        #[test]
        fn hermitian_and_sparse(seed in 0u64..1000, sites in 2usize..=6, n_max in 1u8..=3) {
            let (spec, dis) = random_spec(sites, n_max, seed);
            let n_total = sites / 2;
            let basis = SectorBasis::enumerate(sites, n_total, n_max).unwrap();
            let h = build_hamiltonian(&spec, &dis, &basis).unwrap();
            for (r, c, v) in h.entries() {
                prop_assert_eq!(h.get(c, r), v);
            }
            let bound = 2 * (sites - 1) + 2 * sites.saturating_sub(2) + 1;
            for r in 0..h.dim() {
                prop_assert!(h.row(r).count() <= bound);
            }
        }

        #[test]
        fn omega_is_a_sector_constant(seed in 0u64..1000, shift in -5.0f64..5.0) {
            let (spec, dis) = random_spec(5, 3, seed);
            let basis = SectorBasis::enumerate(5, 2, 3).unwrap();
            let h0 = build_hamiltonian(&spec, &dis, &basis).unwrap();
            let mut shifted = spec.clone();
            shifted.omega += shift;
            let h1 = build_hamiltonian(&shifted, &dis, &basis).unwrap();
            let diff = h1.to_dense() - h0.to_dense();
            let expected = DMatrix::<f64>::identity(basis.dim(), basis.dim()) * (shift * 2.0);
            prop_assert!((diff - expected).amax() < 1e-12);
        }
    }
}
