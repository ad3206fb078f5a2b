//! Number-conserving Fock basis with a per-site occupation cap.
//!
//! States are ordered lexicographically with site 0 the most significant
//! digit, so `(0, 1)` precedes `(1, 0)`. Lookup is a combinatorial ranking
//! over the sector rather than a hash table.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Occupation numbers of a chain, one entry per site.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Configuration(Vec<u8>);

impl Configuration {
    pub fn new(occupations: Vec<u8>) -> Self {
        Configuration(occupations)
    }

    pub fn zeros(sites: usize) -> Self {
        Configuration(vec![0; sites])
    }

    pub fn occupations(&self) -> &[u8] {
        &self.0
    }

    pub fn sites(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> usize {
        self.0.iter().map(|&n| n as usize).sum()
    }

    pub fn is_binary(&self) -> bool {
        self.0.iter().all(|&n| n <= 1)
    }

    pub fn max_occupation(&self) -> u8 {
        self.0.iter().copied().max().unwrap_or(0)
    }
}

impl From<Vec<u8>> for Configuration {
    fn from(v: Vec<u8>) -> Self {
        Configuration(v)
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.iter().all(|&n| n < 10) {
            for n in &self.0 {
                write!(f, "{n}")?;
            }
            Ok(())
        } else {
            let parts: Vec<String> = self.0.iter().map(|n| n.to_string()).collect();
            write!(f, "{}", parts.join(","))
        }
    }
}

impl FromStr for Configuration {
    type Err = Error;

    /// Accepts either a digit string (`"011010"`) or a comma separated list
    /// (`"0,1,1,0,1,0"`).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::param(format!("cannot parse configuration {s:?}"));
        if s.is_empty() {
            return Err(bad());
        }
        let occ: Vec<u8> = if s.contains(',') {
            s.split(',')
                .map(|p| p.trim().parse::<u8>().map_err(|_| bad()))
                .collect::<Result<_>>()?
        } else {
            s.chars()
                .map(|c| c.to_digit(10).map(|d| d as u8).ok_or_else(bad))
                .collect::<Result<_>>()?
        };
        Ok(Configuration(occ))
    }
}

impl TryFrom<String> for Configuration {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Configuration> for String {
    fn from(c: Configuration) -> String {
        c.to_string()
    }
}

/// Number of ways to put `bosons` into `sites` sites with at most `cap`
/// per site. Returns a table indexed `[sites][bosons]`.
fn completion_table(sites: usize, n_total: usize, cap: usize) -> Vec<Vec<u64>> {
    let mut table = vec![vec![0u64; n_total + 1]; sites + 1];
    table[0][0] = 1;
    for k in 1..=sites {
        for b in 0..=n_total {
            table[k][b] = (0..=cap.min(b)).map(|v| table[k - 1][b - v]).sum();
        }
    }
    table
}

/// All configurations of `sites` sites with total occupation `n_total` and
/// per-site cap `n_max`, in lexicographic order.
#[derive(Clone, Debug)]
pub struct SectorBasis {
    sites: usize,
    n_total: usize,
    n_max: u8,
    states: Vec<Configuration>,
    completions: Vec<Vec<u64>>,
}

impl SectorBasis {
    pub fn enumerate(sites: usize, n_total: usize, n_max: u8) -> Result<Self> {
        if sites == 0 {
            return Err(Error::param("basis needs at least one site"));
        }
        if n_total > sites * n_max as usize {
            return Err(Error::param(format!(
                "{n_total} bosons do not fit on {sites} sites with cap {n_max}"
            )));
        }
        let completions = completion_table(sites, n_total, n_max as usize);
        let dim = completions[sites][n_total] as usize;
        let mut states = Vec::with_capacity(dim);
        let mut current = vec![0u8; sites];
        fill(&mut current, 0, n_total, n_max, &completions, &mut states);
        debug_assert_eq!(states.len(), dim);
        Ok(SectorBasis {
            sites,
            n_total,
            n_max,
            states,
            completions,
        })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn n_max(&self) -> u8 {
        self.n_max
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[Configuration] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &Configuration {
        &self.states[i]
    }

    /// Ordinal of `c`, or [`Error::NotInSector`] if its length, total or
    /// per-site occupations do not belong to this sector.
    pub fn index_of(&self, c: &Configuration) -> Result<usize> {
        self.rank(c.occupations())
            .ok_or_else(|| Error::NotInSector(c.to_string()))
    }

    /// Ranking on a raw occupation slice; `None` if outside the sector.
    pub fn rank(&self, occ: &[u8]) -> Option<usize> {
        if occ.len() != self.sites {
            return None;
        }
        let mut remaining = self.n_total;
        let mut index = 0u64;
        for (l, &n) in occ.iter().enumerate() {
            if n > self.n_max || n as usize > remaining {
                return None;
            }
            let rest = self.sites - l - 1;
            for v in 0..n as usize {
                index += self.completions[rest][remaining - v];
            }
            remaining -= n as usize;
        }
        (remaining == 0).then_some(index as usize)
    }
}

fn fill(
    current: &mut [u8],
    site: usize,
    remaining: usize,
    cap: u8,
    completions: &[Vec<u64>],
    out: &mut Vec<Configuration>,
) {
    let sites = current.len();
    if site == sites {
        if remaining == 0 {
            out.push(Configuration(current.to_vec()));
        }
        return;
    }
    let rest = sites - site - 1;
    for v in 0..=(cap as usize).min(remaining) {
        if completions[rest][remaining - v] == 0 {
            continue;
        }
        current[site] = v as u8;
        fill(current, site + 1, remaining - v, cap, completions, out);
    }
    current[site] = 0;
}

/// Sector dimension without enumerating it.
pub fn sector_dimension(sites: usize, n_total: usize, n_max: u8) -> u64 {
    if n_total > sites * n_max as usize {
        return 0;
    }
    completion_table(sites, n_total, n_max as usize)[sites][n_total]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn binomial(n: u64, k: u64) -> u64 {
        (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
    }

    /// Counts occupation vectors over the full truncated product space.
    fn brute_force_dimension(sites: usize, n_total: usize, n_max: u8) -> u64 {
        let base = n_max as u64 + 1;
        let mut count = 0;
        for code in 0..base.pow(sites as u32) {
            let mut c = code;
            let mut total = 0;
            for _ in 0..sites {
                total += c % base;
                c /= base;
            }
            if total == n_total as u64 {
                count += 1;
            }
        }
        count
    }

    /// Coefficient of x^n in (1 + x + ... + x^cap)^sites by polynomial
    /// multiplication.
    fn generating_function_coefficient(sites: usize, n_total: usize, cap: usize) -> u64 {
        let mut poly = vec![1u64];
        for _ in 0..sites {
            let mut next = vec![0u64; poly.len() + cap];
            for (i, &a) in poly.iter().enumerate() {
                for j in 0..=cap {
                    next[i + j] += a;
                }
            }
            poly = next;
        }
        poly.get(n_total).copied().unwrap_or(0)
    }

    #[test]
    fn two_sites_one_boson() {
        let b = SectorBasis::enumerate(2, 1, 1).unwrap();
        assert_eq!(b.dim(), 2);
        assert_eq!(b.states()[0].occupations(), &[0, 1]);
        assert_eq!(b.states()[1].occupations(), &[1, 0]);
        assert_eq!(b.index_of(&Configuration::new(vec![1, 0])).unwrap(), 1);
        assert_eq!(b.index_of(&Configuration::new(vec![0, 1])).unwrap(), 0);
        assert!(matches!(
            b.index_of(&Configuration::new(vec![1, 1])),
            Err(Error::NotInSector(_))
        ));
    }

    #[test]
    fn hard_core_twelve_sites() {
        assert_eq!(SectorBasis::enumerate(12, 6, 1).unwrap().dim(), 924);
    }

    #[test]
    fn device_sector_dimension() {
        let exhaustive = brute_force_dimension(12, 6, 3);
        assert_eq!(exhaustive, generating_function_coefficient(12, 6, 3));
        assert_eq!(exhaustive, 11440);
        assert_eq!(SectorBasis::enumerate(12, 6, 3).unwrap().dim(), 11440);
        assert_eq!(sector_dimension(12, 6, 3), 11440);
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(SectorBasis::enumerate(0, 0, 3).is_err());
        assert!(SectorBasis::enumerate(2, 7, 3).is_err());
        assert!(SectorBasis::enumerate(2, 6, 3).is_ok());
    }

    #[test]
    fn over_cap_and_wrong_length_are_not_in_sector() {
        let b = SectorBasis::enumerate(3, 2, 1).unwrap();
        assert!(b.index_of(&Configuration::new(vec![2, 0, 0])).is_err());
        assert!(b.index_of(&Configuration::new(vec![1, 1])).is_err());
    }

    #[test]
    fn dimension_matches_brute_force_small_chains() {
        for sites in 1..=8 {
            for n_max in 1..=3u8 {
                for n_total in 0..=sites * n_max as usize {
                    let b = SectorBasis::enumerate(sites, n_total, n_max).unwrap();
                    assert_eq!(
                        b.dim() as u64,
                        brute_force_dimension(sites, n_total, n_max),
                        "N={sites} n={n_total} cap={n_max}"
                    );
                }
            }
        }
    }

    #[test]
    fn hard_core_dimension_is_binomial() {
        for sites in 1..=14usize {
            for k in 0..=sites {
                assert_eq!(sector_dimension(sites, k, 1), binomial(sites as u64, k as u64));
            }
        }
    }

    #[test]
    fn configuration_parsing() {
        let a: Configuration = "011010".parse().unwrap();
        let b: Configuration = "0, 1,1,0,1,0".parse().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_string(), "011010");
        assert!("01x".parse::<Configuration>().is_err());
        assert!("".parse::<Configuration>().is_err());
    }

    proptest! {
        #[test]
        fn round_trip_and_order(sites in 1usize..=7, n_max in 1u8..=3, frac in 0.0f64..=1.0) {
            let n_total = ((sites * n_max as usize) as f64 * frac).round() as usize;
            let b = SectorBasis::enumerate(sites, n_total, n_max).unwrap();
            for (i, s) in b.states().iter().enumerate() {
                prop_assert_eq!(b.index_of(s).unwrap(), i);
                prop_assert_eq!(s.total(), n_total);
                prop_assert!(s.max_occupation() <= n_max);
            }
            for w in b.states().windows(2) {
                prop_assert!(w[0] < w[1]);
            }
        }
    }
}
