//! Auto-correlation, number entropy and Hamming distance, computed from an
//! exact state, a mixed multi-sector distribution, or a table of shots.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basis::{Configuration, SectorBasis};
use crate::error::{Error, Result};
use crate::propagator::StateVector;

/// Anything that defines a probability distribution over occupation
/// outcomes of a chain.
pub trait OutcomeSource {
    fn sites(&self) -> usize;

    /// Largest occupation an outcome can have on one site.
    fn n_max(&self) -> u8;

    /// Largest total boson number with non-zero weight, if fixed.
    fn n_total_bound(&self) -> Option<usize> {
        None
    }

    /// Calls `f(occupations, probability)` for every outcome; probabilities
    /// sum to one.
    fn visit(&self, f: &mut dyn FnMut(&[u8], f64)) -> Result<()>;
}

/// Exact outcome probabilities `|psi_c|^2` of a pure state.
#[derive(Clone, Copy, Debug)]
pub struct Exact<'a> {
    basis: &'a SectorBasis,
    state: &'a StateVector,
}

impl<'a> Exact<'a> {
    pub fn new(basis: &'a SectorBasis, state: &'a StateVector) -> Result<Self> {
        if basis.dim() != state.dim() {
            return Err(Error::param(format!(
                "state has dimension {} but basis has {}",
                state.dim(),
                basis.dim()
            )));
        }
        Ok(Exact { basis, state })
    }
}

impl OutcomeSource for Exact<'_> {
    fn sites(&self) -> usize {
        self.basis.sites()
    }

    fn n_max(&self) -> u8 {
        self.basis.n_max()
    }

    fn n_total_bound(&self) -> Option<usize> {
        Some(self.basis.n_total())
    }

    fn visit(&self, f: &mut dyn FnMut(&[u8], f64)) -> Result<()> {
        for (c, p) in self.basis.states().iter().zip(self.state.probabilities()) {
            f(c.occupations(), p);
        }
        Ok(())
    }
}

/// Measured configurations, optionally with integer or real weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotTable {
    pub shots: Vec<Configuration>,
    pub weights: Option<Vec<f64>>,
    /// Occupation cap of the model that produced the shots.
    pub n_max: u8,
}

impl ShotTable {
    pub fn new(shots: Vec<Configuration>, n_max: u8) -> Self {
        ShotTable {
            shots,
            weights: None,
            n_max,
        }
    }

    pub fn weighted(shots: Vec<Configuration>, weights: Vec<f64>, n_max: u8) -> Result<Self> {
        if shots.len() != weights.len() {
            return Err(Error::param("one weight per shot is required"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::param("shot weights must be finite and non-negative"));
        }
        Ok(ShotTable {
            shots,
            weights: Some(weights),
            n_max,
        })
    }

    pub fn len(&self) -> usize {
        self.shots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }

    fn total_weight(&self) -> f64 {
        match &self.weights {
            Some(w) => w.iter().sum(),
            None => self.shots.len() as f64,
        }
    }
}

impl OutcomeSource for ShotTable {
    fn sites(&self) -> usize {
        self.shots.first().map_or(0, Configuration::sites)
    }

    fn n_max(&self) -> u8 {
        self.n_max
    }

    fn visit(&self, f: &mut dyn FnMut(&[u8], f64)) -> Result<()> {
        let total = self.total_weight();
        if self.shots.is_empty() || !(total > 0.0) {
            return Err(Error::Estimation("shot table is empty".into()));
        }
        let sites = self.sites();
        for (i, c) in self.shots.iter().enumerate() {
            if c.sites() != sites {
                return Err(Error::param("shots have inconsistent lengths"));
            }
            let w = self.weights.as_ref().map_or(1.0, |w| w[i]);
            f(c.occupations(), w / total);
        }
        Ok(())
    }
}

/// Probabilities over one boson-number sector.
#[derive(Clone, Debug)]
pub struct SectorProbabilities {
    pub basis: Arc<SectorBasis>,
    pub probabilities: Vec<f64>,
}

/// Diagonal of a density matrix that is block diagonal in boson number, as
/// produced by decay.
#[derive(Clone, Debug)]
pub struct MixedDistribution {
    sites: usize,
    n_max: u8,
    sectors: Vec<SectorProbabilities>,
}

impl MixedDistribution {
    pub fn new(sectors: Vec<SectorProbabilities>) -> Result<Self> {
        let first = sectors
            .first()
            .ok_or_else(|| Error::param("mixed distribution needs a sector"))?;
        let (sites, n_max) = (first.basis.sites(), first.basis.n_max());
        for s in &sectors {
            if s.basis.sites() != sites || s.basis.n_max() != n_max {
                return Err(Error::param("sectors disagree on chain shape"));
            }
            if s.basis.dim() != s.probabilities.len() {
                return Err(Error::param("sector probabilities do not match basis"));
            }
        }
        Ok(MixedDistribution {
            sites,
            n_max,
            sectors,
        })
    }

    pub fn from_state(basis: Arc<SectorBasis>, state: &StateVector) -> Result<Self> {
        if basis.dim() != state.dim() {
            return Err(Error::param("state does not match basis"));
        }
        MixedDistribution::new(vec![SectorProbabilities {
            probabilities: state.probabilities().collect(),
            basis,
        }])
    }

    pub fn sectors(&self) -> &[SectorProbabilities] {
        &self.sectors
    }

    /// Total probability in the sector with `n_total` bosons.
    pub fn sector_weight(&self, n_total: usize) -> f64 {
        self.sectors
            .iter()
            .filter(|s| s.basis.n_total() == n_total)
            .map(|s| s.probabilities.iter().sum::<f64>())
            .sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.sectors
            .iter()
            .map(|s| s.probabilities.iter().sum::<f64>())
            .sum()
    }

    /// Conditional distribution on `n_total` bosons and the retained weight.
    pub fn post_selected(&self, n_total: usize) -> Result<(MixedDistribution, f64)> {
        let total = self.total_weight();
        let kept = self.sector_weight(n_total);
        if !(kept > 0.0) {
            return Err(Error::Estimation(format!(
                "no weight left in the {n_total}-boson sector"
            )));
        }
        let sectors = self
            .sectors
            .iter()
            .filter(|s| s.basis.n_total() == n_total)
            .map(|s| SectorProbabilities {
                basis: s.basis.clone(),
                probabilities: s.probabilities.iter().map(|p| p / kept).collect(),
            })
            .collect();
        Ok((MixedDistribution::new(sectors)?, kept / total))
    }
}

impl OutcomeSource for MixedDistribution {
    fn sites(&self) -> usize {
        self.sites
    }

    fn n_max(&self) -> u8 {
        self.n_max
    }

    fn n_total_bound(&self) -> Option<usize> {
        self.sectors.iter().map(|s| s.basis.n_total()).max()
    }

    fn visit(&self, f: &mut dyn FnMut(&[u8], f64)) -> Result<()> {
        let total = self.total_weight();
        if !(total > 0.0) {
            return Err(Error::Estimation("distribution carries no weight".into()));
        }
        for s in &self.sectors {
            for (c, p) in s.basis.states().iter().zip(&s.probabilities) {
                f(c.occupations(), p / total);
            }
        }
        Ok(())
    }
}

/// Distribution of the boson number on the first `block` sites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockNumberDistribution {
    pub block: usize,
    pub p: Vec<f64>,
}

impl BlockNumberDistribution {
    pub fn new(block: usize, p: Vec<f64>) -> Result<Self> {
        if p.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::param("probabilities must be non-negative"));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::param(format!("probabilities sum to {sum}")));
        }
        Ok(BlockNumberDistribution { block, p })
    }
}

/// `<n_l>` for every site.
pub fn site_populations(source: &dyn OutcomeSource) -> Result<Vec<f64>> {
    let mut pops = vec![0.0; source.sites()];
    source.visit(&mut |occ, p| {
        for (acc, &n) in pops.iter_mut().zip(occ) {
            *acc += p * n as f64;
        }
    })?;
    Ok(pops)
}

/// `C = (1/N) sum_l (2<n_l>(t) - 1)(2<n_l>(0) - 1)`.
pub fn autocorrelation(pop_t: &[f64], pop_0: &[f64]) -> Result<f64> {
    if pop_t.len() != pop_0.len() || pop_t.is_empty() {
        return Err(Error::param(format!(
            "population vectors have lengths {} and {}",
            pop_t.len(),
            pop_0.len()
        )));
    }
    let sum: f64 = pop_t
        .iter()
        .zip(pop_0)
        .map(|(a, b)| (2.0 * a - 1.0) * (2.0 * b - 1.0))
        .sum();
    Ok(sum / pop_t.len() as f64)
}

/// Marginal distribution of the boson number on sites `0..block`.
pub fn block_number_distribution(
    source: &dyn OutcomeSource,
    block: usize,
) -> Result<BlockNumberDistribution> {
    let sites = source.sites();
    if block == 0 || block > sites {
        return Err(Error::param(format!(
            "block size {block} outside 1..={sites}"
        )));
    }
    let mut cap = block * source.n_max() as usize;
    if let Some(n) = source.n_total_bound() {
        cap = cap.min(n);
    }
    let mut p = vec![0.0; cap + 1];
    let mut overflow = false;
    source.visit(&mut |occ, w| {
        let n: usize = occ[..block].iter().map(|&x| x as usize).sum();
        match p.get_mut(n) {
            Some(slot) => *slot += w,
            None => overflow = true,
        }
    })?;
    if overflow {
        return Err(Error::param("outcome exceeds the occupation cap"));
    }
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= sum);
    BlockNumberDistribution::new(block, p)
}

/// Shannon entropy in nats with `0 log 0 = 0`.
pub fn number_entropy(dist: &BlockNumberDistribution) -> f64 {
    dist.p
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum::<f64>()
        .max(0.0)
}

/// Expected fraction of sites whose occupation differs from the 0/1
/// reference `s0`.
pub fn hamming_distance(source: &dyn OutcomeSource, s0: &Configuration) -> Result<f64> {
    if !s0.is_binary() {
        return Err(Error::param("reference configuration must be 0/1"));
    }
    let sites = source.sites();
    if s0.sites() != sites {
        return Err(Error::param(format!(
            "reference has {} sites, outcomes have {sites}",
            s0.sites()
        )));
    }
    let reference = s0.occupations();
    let mut d = 0.0;
    source.visit(&mut |occ, p| {
        let flips = occ.iter().zip(reference).filter(|(a, b)| a != b).count();
        d += p * flips as f64;
    })?;
    Ok(d / sites as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    type C64 = Complex64;

    fn random_state(dim: usize, seed: u64) -> StateVector {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        StateVector::normalized(
            (0..dim)
                .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect(),
        )
        .unwrap()
    }

    fn cfg(s: &str) -> Configuration {
        s.parse().unwrap()
    }

    fn superposition(basis: &SectorBasis, a: &str, b: &str) -> StateVector {
        let mut v = vec![C64::new(0.0, 0.0); basis.dim()];
        let h = std::f64::consts::FRAC_1_SQRT_2;
        v[basis.index_of(&cfg(a)).unwrap()] = C64::new(h, 0.0);
        v[basis.index_of(&cfg(b)).unwrap()] = C64::new(0.0, h);
        StateVector::new(v).unwrap()
    }

    #[test]
    fn populations_of_simple_states() {
        let basis = SectorBasis::enumerate(4, 2, 3).unwrap();
        let psi = StateVector::fock(&basis, &cfg("0110")).unwrap();
        let pops = site_populations(&Exact::new(&basis, &psi).unwrap()).unwrap();
        assert_eq!(pops, vec![0.0, 1.0, 1.0, 0.0]);

        let basis = SectorBasis::enumerate(2, 1, 1).unwrap();
        let psi = superposition(&basis, "10", "01");
        let pops = site_populations(&Exact::new(&basis, &psi).unwrap()).unwrap();
        assert!((pops[0] - 0.5).abs() < 1e-15 && (pops[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_shot_table_is_an_estimation_error() {
        let t = ShotTable::new(vec![], 3);
        assert!(matches!(site_populations(&t), Err(Error::Estimation(_))));
    }

    #[test]
    fn shot_populations_converge() {
        let basis = SectorBasis::enumerate(4, 2, 3).unwrap();
        let psi = random_state(basis.dim(), 11);
        let exact = site_populations(&Exact::new(&basis, &psi).unwrap()).unwrap();
        let probs: Vec<f64> = psi.probabilities().collect();
        let dist = rand::distr::weighted::WeightedIndex::new(&probs).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let shots: Vec<Configuration> = (0..100_000)
            .map(|_| basis.state(rng.sample(&dist)).clone())
            .collect();
        let table = ShotTable::new(shots, 3);
        let sampled = site_populations(&table).unwrap();
        // per-site variance of the occupation number
        let mut second = [0.0; 4];
        for (c, p) in basis.states().iter().zip(&probs) {
            for (acc, &n) in second.iter_mut().zip(c.occupations()) {
                *acc += p * (n as f64).powi(2);
            }
        }
        for l in 0..4 {
            let se = ((second[l] - exact[l].powi(2)) / 1e5).sqrt();
            assert!((sampled[l] - exact[l]).abs() < 4.0 * se, "site {l}");
        }
    }

    #[test]
    fn autocorrelation_values() {
        let v = [0.0, 1.0, 1.0, 0.0, 1.0];
        assert_eq!(autocorrelation(&v, &v).unwrap(), 1.0);
        assert_eq!(autocorrelation(&[0.5; 5], &v).unwrap(), 0.0);
        assert!((autocorrelation(&[0.75, 0.25], &[1.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(autocorrelation(&[0.5], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn block_distribution_examples() {
        let basis = SectorBasis::enumerate(4, 2, 3).unwrap();
        let psi = StateVector::fock(&basis, &cfg("1010")).unwrap();
        let exact = Exact::new(&basis, &psi).unwrap();
        for m in 1..=4 {
            let d = block_number_distribution(&exact, m).unwrap();
            let expected: usize = [1, 0, 1, 0][..m].iter().sum();
            assert_eq!(d.p[expected], 1.0);
            assert_eq!(number_entropy(&d), 0.0);
        }
        assert!(block_number_distribution(&exact, 0).is_err());
        assert!(block_number_distribution(&exact, 5).is_err());

        let basis = SectorBasis::enumerate(2, 1, 1).unwrap();
        let psi = superposition(&basis, "10", "01");
        let d = block_number_distribution(&Exact::new(&basis, &psi).unwrap(), 1).unwrap();
        assert!((d.p[0] - 0.5).abs() < 1e-15 && (d.p[1] - 0.5).abs() < 1e-15);
        assert!((number_entropy(&d) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn entropy_of_uniform_three() {
        let d = BlockNumberDistribution::new(2, vec![1.0 / 3.0; 3]).unwrap();
        assert!((number_entropy(&d) - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn block_marginal_matches_brute_force() {
        let basis = SectorBasis::enumerate(6, 3, 3).unwrap();
        let psi = random_state(basis.dim(), 42);
        let d = block_number_distribution(&Exact::new(&basis, &psi).unwrap(), 3).unwrap();
        // marginalize over the complement block explicitly
        let mut oracle = vec![0.0; 4];
        for left in 0..4u8.pow(3) {
            let a = [left % 4, (left / 4) % 4, left / 16];
            for right in 0..4u8.pow(3) {
                let b = [right % 4, (right / 4) % 4, right / 16];
                let occ: Vec<u8> = a.iter().chain(&b).copied().collect();
                if let Some(i) = basis.rank(&occ) {
                    oracle[(a[0] + a[1] + a[2]) as usize] += psi.amplitudes()[i].norm_sqr();
                }
            }
        }
        for (x, y) in d.p.iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn hamming_examples() {
        let basis = SectorBasis::enumerate(2, 1, 1).unwrap();
        let psi = StateVector::fock(&basis, &cfg("10")).unwrap();
        let exact = Exact::new(&basis, &psi).unwrap();
        assert_eq!(hamming_distance(&exact, &cfg("01")).unwrap(), 1.0);
        assert_eq!(hamming_distance(&exact, &cfg("10")).unwrap(), 0.0);
        assert!(hamming_distance(&exact, &cfg("02")).is_err());
    }

    #[test]
    fn hamming_of_uniform_half_filling() {
        let basis = SectorBasis::enumerate(12, 6, 1).unwrap();
        assert_eq!(basis.dim(), 924);
        let amp = C64::new((1.0 / 924f64).sqrt(), 0.0);
        let psi = StateVector::normalized(vec![amp; 924]).unwrap();
        let exact = Exact::new(&basis, &psi).unwrap();
        for s0 in ["011010111000", "101000111001", "111111000000"] {
            assert!((hamming_distance(&exact, &cfg(s0)).unwrap() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn multiply_occupied_sites_count_as_flips() {
        let t = ShotTable::new(vec![cfg("2000"), cfg("1100")], 3);
        // (2,0,0,0) vs 1010 differs at sites 0 and 2; (1,1,0,0) at 1 and 2
        assert_eq!(hamming_distance(&t, &cfg("1010")).unwrap(), 0.5);
        let d = block_number_distribution(&t, 2).unwrap();
        assert_eq!(d.p.len(), 7);
        assert_eq!(d.p[2], 1.0);
    }

    #[test]
    fn post_selection_of_mixed_distribution() {
        let b1 = Arc::new(SectorBasis::enumerate(2, 1, 1).unwrap());
        let b0 = Arc::new(SectorBasis::enumerate(2, 0, 1).unwrap());
        let mixed = MixedDistribution::new(vec![
            SectorProbabilities {
                basis: b0,
                probabilities: vec![0.2],
            },
            SectorProbabilities {
                basis: b1,
                probabilities: vec![0.6, 0.2],
            },
        ])
        .unwrap();
        let pops = site_populations(&mixed).unwrap();
        assert!((pops[0] - 0.2).abs() < 1e-15 && (pops[1] - 0.6).abs() < 1e-15);
        let (kept, retention) = mixed.post_selected(1).unwrap();
        assert!((retention - 0.8).abs() < 1e-15);
        let pops = site_populations(&kept).unwrap();
        assert!((pops[1] - 0.75).abs() < 1e-15);
        assert!(mixed.post_selected(2).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn observable_bounds(seed in 0u64..10_000, m in 1usize..=6) {
            let basis = SectorBasis::enumerate(6, 3, 3).unwrap();
            let psi = random_state(basis.dim(), seed);
            let exact = Exact::new(&basis, &psi).unwrap();
            let left = block_number_distribution(&exact, m).unwrap();
            let s = number_entropy(&left);
            prop_assert!(s >= 0.0 && s <= ((3usize).min(3 * m) as f64 + 1.0).ln() + 1e-12);

            // mirror symmetry: block 0..m versus the complement
            let pops = site_populations(&exact).unwrap();
            if m < 6 {
                let mut right = [0.0; 4];
                exact.visit(&mut |occ, p| {
                    let n: usize = occ[m..].iter().map(|&x| x as usize).sum();
                    right[n] += p;
                }).unwrap();
                for (n, &p) in left.p.iter().enumerate() {
                    prop_assert!((p - right[3 - n]).abs() < 1e-12);
                }
            }

            let s0: Configuration = "011010".parse().unwrap();
            let d = hamming_distance(&exact, &s0).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            let ideal: Vec<f64> = s0.occupations().iter().map(|&x| x as f64).collect();
            let clipped: Vec<f64> = pops.iter().map(|p| p.clamp(0.0, 1.0)).collect();
            let c = autocorrelation(&clipped, &ideal).unwrap();
            prop_assert!(c.abs() <= 1.0 + 1e-12);
            prop_assert_eq!(c, autocorrelation(&ideal, &clipped).unwrap());
        }
    }
}
