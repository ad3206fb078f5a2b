//! Two-level normal model for pooling transition points, sampled by Gibbs.
//!
//! `Y[i][j] | theta_i ~ N(theta_i, delta^2)` and `theta_i ~ N(mu, tau^2)` with
//! priors `p(mu) = 1`, `p(delta^2) ~ 1/delta^2` and `p(tau) = 1` on
//! `0 < tau <= tau_max`.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, Purpose};
use crate::statistics::{bandwidth, mean_and_std};

/// Variances never drop below this, so precisions stay finite.
const VARIANCE_FLOOR: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GibbsSettings {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub tau_max: f64,
    pub seed: u64,
    /// Holds `delta` at this value instead of sampling it.
    pub fixed_delta: Option<f64>,
    /// Holds `tau` at this value instead of sampling it.
    pub fixed_tau: Option<f64>,
}

impl Default for GibbsSettings {
    fn default() -> Self {
        GibbsSettings {
            chains: 3,
            iterations: 1_000_000,
            burn_in: 800_000,
            thin: 10,
            tau_max: 50.0,
            seed: 0,
            fixed_delta: None,
            fixed_tau: None,
        }
    }
}

impl GibbsSettings {
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.thin == 0 || self.burn_in >= self.iterations {
            return Err(Error::param(
                "need chains >= 1, thin >= 1 and burn_in < iterations",
            ));
        }
        if !(self.tau_max > 0.0) {
            return Err(Error::param("tau_max must be positive"));
        }
        for v in [self.fixed_delta, self.fixed_tau].into_iter().flatten() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param("fixed scales must be positive"));
            }
        }
        Ok(())
    }
}

/// Retained draws of one chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub mu: Vec<f64>,
    pub tau: Vec<f64>,
    pub delta: Vec<f64>,
    /// `theta[i]` holds the draws of group `i`.
    pub theta: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub settings: GibbsSettings,
    pub chains: Vec<Chain>,
}

impl PosteriorSamples {
    pub fn groups(&self) -> usize {
        self.chains.first().map_or(0, |c| c.theta.len())
    }

    /// Named parameter series per chain, in a fixed order.
    pub fn parameters(&self) -> Vec<(String, Vec<&[f64]>)> {
        let mut out = vec![
            ("mu".to_string(), self.chains.iter().map(|c| c.mu.as_slice()).collect()),
            ("tau".to_string(), self.chains.iter().map(|c| c.tau.as_slice()).collect()),
            ("delta".to_string(), self.chains.iter().map(|c| c.delta.as_slice()).collect()),
        ];
        for i in 0..self.groups() {
            out.push((
                format!("theta_{}", i + 1),
                self.chains.iter().map(|c| c.theta[i].as_slice()).collect(),
            ));
        }
        out
    }

    pub fn pooled(series: &[&[f64]]) -> Vec<f64> {
        series.iter().flat_map(|s| s.iter().copied()).collect()
    }
}

/// Runs independent chains in parallel. `y[i]` holds the observations of
/// group `i`; groups may differ in size.
pub fn gibbs_run(y: &[Vec<f64>], settings: &GibbsSettings) -> Result<PosteriorSamples> {
    settings.validate()?;
    if y.is_empty() || y.iter().any(|g| g.is_empty()) {
        return Err(Error::param("every group needs at least one observation"));
    }
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::param("observations must be finite"));
    }
    if y.len() < 2 && settings.fixed_tau.is_none() {
        return Err(Error::param("sampling tau needs at least two groups"));
    }
    let chains = (0..settings.chains)
        .into_par_iter()
        .map(|c| run_chain(y, settings, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorSamples {
        settings: settings.clone(),
        chains,
    })
}

fn run_chain(y: &[Vec<f64>], s: &GibbsSettings, index: usize) -> Result<Chain> {
    let mut rng = stream(derive_seed(s.seed, Purpose::Chain, &[index as u64]));
    let j = y.len();
    let n_total: usize = y.iter().map(Vec::len).sum();
    let all: Vec<f64> = y.iter().flatten().copied().collect();
    let (data_mean, data_sd) = mean_and_std(&all);
    let spread = data_sd.max(1e-3);
    let means: Vec<f64> = y.iter().map(|g| g.iter().sum::<f64>() / g.len() as f64).collect();
    let counts: Vec<f64> = y.iter().map(|g| g.len() as f64).collect();

    // overdispersed starts within two data standard deviations
    let start = |rng: &mut rand_chacha::ChaCha8Rng| data_mean + 2.0 * spread * (2.0 * rng.random::<f64>() - 1.0);
    let mut mu = start(&mut rng);
    let mut theta: Vec<f64> = (0..j).map(|_| start(&mut rng)).collect();
    let mut delta2 = s
        .fixed_delta
        .map_or(spread * spread * (0.25 + 3.75 * rng.random::<f64>()), |d| d * d);
    let mut tau2 = s
        .fixed_tau
        .map_or(spread * spread * (0.25 + 3.75 * rng.random::<f64>()), |t| t * t);
    let tau2_max = s.tau_max * s.tau_max;

    let chi_n = ChiSquared::new(n_total as f64).map_err(|e| Error::param(e.to_string()))?;
    let chi_j = if j >= 2 {
        Some(ChiSquared::new((j - 1) as f64).map_err(|e| Error::param(e.to_string()))?)
    } else {
        None
    };

    let keep = s.retained();
    let mut out = Chain {
        mu: Vec::with_capacity(keep),
        tau: Vec::with_capacity(keep),
        delta: Vec::with_capacity(keep),
        theta: vec![Vec::with_capacity(keep); j],
    };
    for it in 0..s.iterations {
        for i in 0..j {
            let precision = 1.0 / tau2 + counts[i] / delta2;
            let mean = (mu / tau2 + counts[i] * means[i] / delta2) / precision;
            let z: f64 = StandardNormal.sample(&mut rng);
            theta[i] = mean + z / precision.sqrt();
        }
        let theta_mean = theta.iter().sum::<f64>() / j as f64;
        let z: f64 = StandardNormal.sample(&mut rng);
        mu = theta_mean + z * (tau2 / j as f64).sqrt();

        if s.fixed_delta.is_none() {
            let ss: f64 = y
                .iter()
                .zip(&theta)
                .map(|(g, t)| g.iter().map(|v| (v - t).powi(2)).sum::<f64>())
                .sum();
            delta2 = (ss / chi_n.sample(&mut rng)).max(VARIANCE_FLOOR);
        }
        if s.fixed_tau.is_none() {
            let chi = chi_j.as_ref().expect("two or more groups");
            let ss: f64 = theta.iter().map(|t| (t - mu).powi(2)).sum();
            let mut tries = 0;
            loop {
                let draw = (ss / chi.sample(&mut rng)).max(VARIANCE_FLOOR);
                if draw <= tau2_max {
                    tau2 = draw;
                    break;
                }
                tries += 1;
                if tries > 10_000 {
                    return Err(Error::Solver(format!(
                        "tau update rejected 10000 proposals above tau_max = {}",
                        s.tau_max
                    )));
                }
            }
        }

        if it >= s.burn_in && (it - s.burn_in) % s.thin == s.thin - 1 {
            out.mu.push(mu);
            out.tau.push(tau2.sqrt());
            out.delta.push(delta2.sqrt());
            for (o, t) in out.theta.iter_mut().zip(&theta) {
                o.push(*t);
            }
        }
    }
    Ok(out)
}

/// Split potential scale reduction of one parameter across chains.
pub fn split_rhat(chains: &[&[f64]]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::Estimation("convergence diagnostic needs two or more chains".into()));
    }
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0) / 2;
    if n < 2 {
        return Err(Error::Estimation("chains are too short to split".into()));
    }
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..n], &c[n..2 * n]])
        .collect();
    let m = halves.len() as f64;
    let nf = n as f64;
    let stats: Vec<(f64, f64)> = halves
        .iter()
        .map(|h| {
            let mean = h.iter().sum::<f64>() / nf;
            let var = h.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
            (mean, var)
        })
        .collect();
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / m;
    let b = nf / (m - 1.0) * stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m;
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    Ok((var_plus / w).sqrt())
}

/// Split R-hat of every parameter.
pub fn convergence_diagnostic(samples: &PosteriorSamples) -> Result<Vec<(String, f64)>> {
    samples
        .parameters()
        .into_iter()
        .map(|(name, series)| split_rhat(&series).map(|r| (name, r)))
        .collect()
}

pub const RHAT_THRESHOLD: f64 = 1.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mode: f64,
    pub mean: f64,
    pub std: f64,
    pub lower_95: f64,
    pub upper_95: f64,
    pub rhat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub parameters: Vec<ParameterSummary>,
    pub converged: bool,
    pub draws_per_chain: usize,
    pub settings: GibbsSettings,
}

impl EstimateReport {
    pub fn get(&self, name: &str) -> Option<&ParameterSummary> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

/// Location of the highest kernel density of `draws`.
pub fn kde_mode(draws: &[f64]) -> f64 {
    let lo = draws.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = draws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return lo;
    }
    // bin first so the density costs O(grid * bins) rather than O(grid * draws)
    let bins = 4096;
    let width = (hi - lo) / bins as f64;
    let mut centers = Vec::new();
    let mut weights = Vec::new();
    let mut counts = vec![0usize; bins];
    for &d in draws {
        counts[(((d - lo) / width) as usize).min(bins - 1)] += 1;
    }
    for (i, &c) in counts.iter().enumerate() {
        if c > 0 {
            centers.push(lo + (i as f64 + 0.5) * width);
            weights.push(c as f64);
        }
    }
    let bw = bandwidth(draws);
    let grid: Vec<f64> = (0..2048).map(|i| lo + (hi - lo) * i as f64 / 2047.0).collect();
    let mut best = (f64::NEG_INFINITY, lo);
    for &x in &grid {
        let d: f64 = centers
            .iter()
            .zip(&weights)
            .map(|(&c, &w)| w * (-0.5 * ((x - c) / bw).powi(2)).exp())
            .sum();
        if d > best.0 {
            best = (d, x);
        }
    }
    best.1
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize_draws(name: &str, draws: &[f64], rhat: f64) -> ParameterSummary {
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mean, std) = mean_and_std(draws);
    ParameterSummary {
        name: name.to_string(),
        mode: kde_mode(draws),
        mean,
        std,
        lower_95: quantile(&sorted, 0.025),
        upper_95: quantile(&sorted, 0.975),
        rhat,
    }
}

/// Mode, mean, spread and central 95% interval of every parameter.
pub fn summarize(samples: &PosteriorSamples) -> Result<EstimateReport> {
    let rhat = convergence_diagnostic(samples).unwrap_or_default();
    let parameters: Vec<ParameterSummary> = samples
        .parameters()
        .into_iter()
        .map(|(name, series)| {
            let pooled = PosteriorSamples::pooled(&series);
            let r = rhat
                .iter()
                .find(|(n, _)| *n == name)
                .map_or(f64::NAN, |x| x.1);
            summarize_draws(&name, &pooled, r)
        })
        .collect();
    if parameters.iter().any(|p| p.mean.is_nan()) {
        return Err(Error::Estimation("posterior has no draws".into()));
    }
    // a fixed parameter is trivially converged
    let converged = parameters.iter().all(|p| p.rhat < RHAT_THRESHOLD || p.std == 0.0);
    Ok(EstimateReport {
        parameters,
        converged,
        draws_per_chain: samples.chains.first().map_or(0, |c| c.mu.len()),
        settings: samples.settings.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Normal;

    fn quick(seed: u64) -> GibbsSettings {
        GibbsSettings {
            iterations: 60_000,
            burn_in: 10_000,
            thin: 5,
            seed,
            ..Default::default()
        }
    }

    fn groups(seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream(seed);
        let n = Normal::new(0.0, 0.8).unwrap();
        [2.5, 3.2, 3.9]
            .iter()
            .map(|&c| (0..10).map(|_| c + n.sample(&mut rng)).collect())
            .collect()
    }

    #[test]
    fn retained_count() {
        let s = GibbsSettings::default();
        assert_eq!(s.retained(), 20_000);
        let samples = gibbs_run(&groups(1), &quick(1)).unwrap();
        assert!(samples.chains.iter().all(|c| c.mu.len() == 10_000 && c.theta[2].len() == 10_000));
    }

    #[test]
    fn constant_data_concentrates() {
        let y = vec![vec![3.0; 10]; 3];
        let samples = gibbs_run(&y, &quick(2)).unwrap();
        let report = summarize(&samples).unwrap();
        let mu = report.get("mu").unwrap();
        assert!((mu.mode - 3.0).abs() < 0.05, "{mu:?}");
        assert!(samples.chains.iter().all(|c| c.delta.iter().all(|d| *d > 0.0)));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(gibbs_run(&[vec![1.0, f64::NAN]], &quick(0)).is_err());
        assert!(gibbs_run(&[vec![1.0]], &quick(0)).is_err());
        assert!(gibbs_run(&[vec![]], &quick(0)).is_err());
    }

    #[test]
    fn conjugate_oracle_one_group() {
        // with delta and tau held fixed and a flat prior on mu,
        // mu | y ~ N(mean y, tau^2 + delta^2 / n)
        let y = vec![vec![2.1, 3.4, 2.9, 3.6, 2.2]];
        let (delta, tau) = (0.9, 0.6);
        let s = GibbsSettings {
            fixed_delta: Some(delta),
            fixed_tau: Some(tau),
            ..quick(3)
        };
        let samples = gibbs_run(&y, &s).unwrap();
        let draws = PosteriorSamples::pooled(&samples.parameters()[0].1);
        let (m, sd) = mean_and_std(&draws);
        let exact_mean = y[0].iter().sum::<f64>() / 5.0;
        let exact_sd = (tau * tau + delta * delta / 5.0).sqrt();
        // autocorrelated draws: allow a generous effective sample size
        let se = exact_sd / (draws.len() as f64 / 20.0).sqrt();
        assert!((m - exact_mean).abs() < 4.0 * se, "{m} vs {exact_mean}");
        assert!((sd - exact_sd).abs() < 0.03 * exact_sd, "{sd} vs {exact_sd}");
    }

    #[test]
    fn shift_equivariance() {
        let y = groups(4);
        let shifted: Vec<Vec<f64>> = y.iter().map(|g| g.iter().map(|v| v + 5.0).collect()).collect();
        let a = summarize(&gibbs_run(&y, &quick(9)).unwrap()).unwrap();
        let b = summarize(&gibbs_run(&shifted, &quick(9)).unwrap()).unwrap();
        let (ma, mb) = (a.get("mu").unwrap(), b.get("mu").unwrap());
        let se = ma.std / (30_000f64 / 50.0).sqrt();
        assert!((mb.mean - ma.mean - 5.0).abs() < 4.0 * se, "{} {}", ma.mean, mb.mean);
    }

    #[test]
    fn exchangeability() {
        let y = groups(5);
        let mut permuted = y.clone();
        permuted.rotate_left(1);
        let a = summarize(&gibbs_run(&y, &quick(11)).unwrap()).unwrap();
        let b = summarize(&gibbs_run(&permuted, &quick(12)).unwrap()).unwrap();
        let (ma, mb) = (a.get("mu").unwrap(), b.get("mu").unwrap());
        let se = ma.std / (30_000f64 / 50.0).sqrt();
        assert!((ma.mean - mb.mean).abs() < 4.0 * se * 2f64.sqrt());
        assert!((ma.lower_95 - mb.lower_95).abs() < 0.3 && (ma.upper_95 - mb.upper_95).abs() < 0.3);
    }

    #[test]
    fn rhat_behaviour() {
        let mut rng = stream(6);
        let n = Normal::new(0.0, 1.0).unwrap();
        let iid: Vec<Vec<f64>> = (0..3).map(|_| (0..5000).map(|_| n.sample(&mut rng)).collect()).collect();
        let refs: Vec<&[f64]> = iid.iter().map(|v| v.as_slice()).collect();
        assert!(split_rhat(&refs).unwrap() < 1.01);
        let far: Vec<Vec<f64>> = [0.0, 10.0]
            .iter()
            .map(|&c| (0..5000).map(|_| c + n.sample(&mut rng)).collect())
            .collect();
        let refs: Vec<&[f64]> = far.iter().map(|v| v.as_slice()).collect();
        assert!(split_rhat(&refs).unwrap() > 1.1);
        assert!(split_rhat(&refs[..1]).is_err());
    }

    #[test]
    fn summary_of_constant_and_normal_draws() {
        let s = summarize_draws("x", &[1.5; 100], 1.0);
        assert_eq!((s.mode, s.mean, s.lower_95, s.upper_95), (1.5, 1.5, 1.5, 1.5));
        let mut rng = stream(8);
        let n = Normal::new(2.0, 0.5).unwrap();
        let d: Vec<f64> = (0..20_000).map(|_| n.sample(&mut rng)).collect();
        let s = summarize_draws("x", &d, 1.0);
        assert!((s.mode - 2.0).abs() < 3.0 * 0.05, "{}", s.mode);
        assert!((s.lower_95 - (2.0 - 1.96 * 0.5)).abs() < 0.05);
    }
}
