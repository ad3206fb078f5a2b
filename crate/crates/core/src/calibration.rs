//! Site-frequency calibration on synthetic single-excitation dynamics.
//!
//! One excitation is injected at each site of a chain whose idle frequencies
//! form a linear staircase of slope `+step` or `-step` per site. The resulting
//! population traces depend on the unknown static offsets of each site, which
//! are recovered by Nelder-Mead on the squared trace mismatch. Offsets are
//! only determined up to a common shift, so estimates are reported with zero
//! mean.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::ModelSpec;
use crate::rng::{derive_seed, Purpose};
use crate::units::mhz_to_j1;

/// Sign of the staircase slope.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    Positive,
    Negative,
}

impl Case {
    pub const BOTH: [Case; 2] = [Case::Positive, Case::Negative];

    fn sign(self) -> f64 {
        match self {
            Case::Positive => 1.0,
            Case::Negative => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaircasePlan {
    /// Idle frequency of the chain centre in units of J1. Only a global
    /// phase in the single-excitation sector.
    pub central_frequency: f64,
    /// Frequency step between neighbouring sites, MHz.
    pub step_mhz: f64,
    /// Sites at which the excitation is injected, one run each.
    pub excited: Vec<usize>,
    /// Sampling times in units of 1/J1.
    pub times: Vec<f64>,
}

impl StaircasePlan {
    /// +-5 MHz staircase, every site excited, 40 times over `J1 t` in `[0, 10]`.
    pub fn standard(sites: usize) -> Self {
        StaircasePlan {
            central_frequency: 0.0,
            step_mhz: 5.0,
            excited: (0..sites).collect(),
            times: (0..40).map(|k| 10.0 * k as f64 / 39.0).collect(),
        }
    }

    fn validate(&self, sites: usize) -> Result<()> {
        if self.excited.is_empty() || self.times.is_empty() {
            return Err(Error::param("staircase plan needs excited sites and times"));
        }
        if let Some(&s) = self.excited.iter().find(|&&s| s >= sites) {
            return Err(Error::param(format!("excited site {s} outside a chain of {sites}")));
        }
        if self.times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::param("staircase times must be finite and non-negative"));
        }
        if !self.step_mhz.is_finite() {
            return Err(Error::param("staircase step must be finite"));
        }
        Ok(())
    }
}

/// Populations indexed by case, excited run, time and site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaircaseTraces {
    pub sites: usize,
    pub runs: usize,
    pub times: usize,
    pub data: Vec<f64>,
}

impl StaircaseTraces {
    fn offset(&self, case: Case, run: usize, t: usize) -> usize {
        let c = match case {
            Case::Positive => 0,
            Case::Negative => 1,
        };
        ((c * self.runs + run) * self.times + t) * self.sites
    }

    /// Site populations of one run at one time.
    pub fn populations(&self, case: Case, run: usize, t: usize) -> &[f64] {
        let o = self.offset(case, run, t);
        &self.data[o..o + self.sites]
    }

    pub fn squared_distance(&self, other: &StaircaseTraces) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).powi(2)).sum()
    }

    /// Adds independent Gaussian noise of standard deviation `sigma` to every
    /// entry.
    pub fn with_noise(&self, sigma: f64, seed: u64) -> Result<StaircaseTraces> {
        let normal = Normal::new(0.0, sigma)
            .map_err(|_| Error::param(format!("noise sigma must be >= 0, got {sigma}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Purpose::Noise, &[]));
        let mut out = self.clone();
        out.data.iter_mut().for_each(|x| *x += normal.sample(&mut rng));
        Ok(out)
    }
}

/// Single-excitation Hamiltonian of one staircase case, in units of J1.
pub fn single_particle_hamiltonian(
    spec: &ModelSpec,
    offsets_mhz: &[f64],
    plan: &StaircasePlan,
    case: Case,
) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let n = spec.sites;
    if offsets_mhz.len() != n {
        return Err(Error::param(format!("expected {n} offsets, got {}", offsets_mhz.len())));
    }
    let centre = 0.5 * (n as f64 - 1.0);
    let mut h = DMatrix::zeros(n, n);
    for l in 0..n {
        let detuning = case.sign() * plan.step_mhz * (l as f64 - centre) + offsets_mhz[l];
        h[(l, l)] = plan.central_frequency + mhz_to_j1(detuning);
    }
    for (l, &j) in spec.j1.iter().enumerate() {
        h[(l, l + 1)] = j;
        h[(l + 1, l)] = j;
    }
    for (l, &j) in spec.j2.iter().enumerate() {
        h[(l, l + 2)] = j;
        h[(l + 2, l)] = j;
    }
    Ok(h)
}

/// Populations of every site after injecting one excitation at each site of
/// `plan.excited`, for both staircase cases.
pub fn simulate_staircase(spec: &ModelSpec, offsets_mhz: &[f64], plan: &StaircasePlan) -> Result<StaircaseTraces> {
    plan.validate(spec.sites)?;
    let n = spec.sites;
    let nt = plan.times.len();
    let mut data = Vec::with_capacity(2 * plan.excited.len() * nt * n);
    for case in Case::BOTH {
        let eig = SymmetricEigen::new(single_particle_hamiltonian(spec, offsets_mhz, plan, case)?);
        let v = &eig.eigenvectors;
        let phases: Vec<Vec<Complex64>> = plan
            .times
            .iter()
            .map(|&t| eig.eigenvalues.iter().map(|&l| Complex64::from_polar(1.0, -l * t)).collect())
            .collect();
        let runs: Vec<Vec<f64>> = plan
            .excited
            .par_iter()
            .map(|&e| {
                let mut out = Vec::with_capacity(nt * n);
                for ph in &phases {
                    let weighted: Vec<Complex64> = (0..n).map(|k| ph[k] * v[(e, k)]).collect();
                    for s in 0..n {
                        let amp: Complex64 = (0..n).map(|k| weighted[k] * v[(s, k)]).sum();
                        out.push(amp.norm_sqr());
                    }
                }
                out
            })
            .collect();
        runs.into_iter().for_each(|r| data.extend(r));
    }
    Ok(StaircaseTraces {
        sites: n,
        runs: plan.excited.len(),
        times: nt,
        data,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NelderMeadSettings {
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    /// Initial simplex edge along each parameter, MHz.
    pub initial_spread_mhz: f64,
    /// Stop when every vertex lies within this distance of the best one
    /// (largest coordinate difference), MHz.
    pub tolerance_mhz: f64,
    /// Iteration budget shared by all restarts.
    pub max_iterations: usize,
    /// Fresh simplices built around the best point after convergence.
    pub restarts: usize,
}

impl Default for NelderMeadSettings {
    fn default() -> Self {
        NelderMeadSettings {
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            initial_spread_mhz: 2.0,
            tolerance_mhz: 1e-3,
            max_iterations: 5000,
            restarts: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetEstimate {
    /// Zero-mean offsets, MHz.
    pub offsets_mhz: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

struct Minimum {
    x: Vec<f64>,
    f: f64,
    iterations: usize,
    evaluations: usize,
    converged: bool,
}

fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    start: &[f64],
    s: &NelderMeadSettings,
    budget: usize,
) -> Minimum {
    let dim = start.len();
    let mut evaluations = 0;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((start.to_vec(), eval(start)));
    for i in 0..dim {
        let mut x = start.to_vec();
        x[i] += s.initial_spread_mhz;
        let fx = eval(&x);
        simplex.push((x, fx));
    }
    let mut iterations = 0;
    let mut converged = false;
    while iterations < budget {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = &simplex[0].0;
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(best).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if diameter < s.tolerance_mhz {
            converged = true;
            break;
        }
        iterations += 1;
        let centroid: Vec<f64> = (0..dim)
            .map(|i| simplex[..dim].iter().map(|(x, _)| x[i]).sum::<f64>() / dim as f64)
            .collect();
        let toward = |c: f64, from: &[f64]| -> Vec<f64> {
            centroid.iter().zip(from).map(|(m, w)| m + c * (m - w)).collect()
        };
        let worst = simplex[dim].clone();
        let xr = toward(s.reflection, &worst.0);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = toward(s.expansion, &worst.0);
            let fe = eval(&xe);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let xc = toward(s.contraction, &worst.0);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = toward(-s.contraction, &worst.0);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < fr.min(worst.1) {
            simplex[dim] = (xc, fc);
            continue;
        }
        let x0 = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            for (xi, bi) in v.0.iter_mut().zip(&x0) {
                *xi = bi + s.shrink * (*xi - bi);
            }
            v.1 = eval(&v.0);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    Minimum {
        x,
        f,
        iterations,
        evaluations,
        converged,
    }
}

/// Full offset vector from the `N - 1` free parameters; the last site takes
/// minus their sum so the mean is zero.
fn expand(free: &[f64]) -> Vec<f64> {
    let mut x = free.to_vec();
    x.push(-free.iter().sum::<f64>());
    x
}

pub fn gauge_fixed(offsets: &[f64]) -> Vec<f64> {
    let mean = offsets.iter().sum::<f64>() / offsets.len().max(1) as f64;
    offsets.iter().map(|o| o - mean).collect()
}

/// Least-squares offsets for `observed` starting from `start_mhz` (zero when
/// `None`).
pub fn fit_offsets(
    observed: &StaircaseTraces,
    spec: &ModelSpec,
    plan: &StaircasePlan,
    settings: &NelderMeadSettings,
    start_mhz: Option<&[f64]>,
) -> Result<OffsetEstimate> {
    let n = spec.sites;
    plan.validate(n)?;
    if observed.sites != n || observed.runs != plan.excited.len() || observed.times != plan.times.len() {
        return Err(Error::param("observed traces do not match the staircase plan"));
    }
    if n < 2 {
        return Err(Error::param("calibration needs at least two sites"));
    }
    let start = match start_mhz {
        Some(s) if s.len() == n => gauge_fixed(s),
        Some(s) => return Err(Error::param(format!("expected {n} start offsets, got {}", s.len()))),
        None => vec![0.0; n],
    };
    let mut failure = None;
    let mut cost = |free: &[f64]| match simulate_staircase(spec, &expand(free), plan) {
        Ok(t) => t.squared_distance(observed),
        Err(e) => {
            failure.get_or_insert(e);
            f64::INFINITY
        }
    };
    let mut x = start[..n - 1].to_vec();
    let mut best = f64::INFINITY;
    let mut iterations = 0;
    let mut evaluations = 0;
    let mut converged = false;
    for _ in 0..=settings.restarts {
        let budget = settings.max_iterations.saturating_sub(iterations);
        if budget == 0 {
            break;
        }
        let m = nelder_mead(&mut cost, &x, settings, budget);
        iterations += m.iterations;
        evaluations += m.evaluations;
        converged = m.converged;
        let improved = m.f < best;
        if improved {
            let step = m.x.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            x = m.x;
            best = m.f;
            if step < settings.tolerance_mhz && converged {
                break;
            }
        } else if converged {
            break;
        }
    }
    if let Some(e) = failure {
        return Err(e);
    }
    if !converged {
        log::warn!(
            "Nelder-Mead stopped after {iterations} iterations without reaching a {} MHz simplex",
            settings.tolerance_mhz
        );
    }
    Ok(OffsetEstimate {
        offsets_mhz: expand(&x),
        cost: best,
        iterations,
        evaluations,
        converged,
    })
}

/// Offsets drawn uniformly from `[-max_mhz, max_mhz]`.
pub fn random_offsets_mhz(sites: usize, max_mhz: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Purpose::Disorder, &[sites as u64]));
    match Uniform::new_inclusive(-max_mhz, max_mhz) {
        Ok(u) => (0..sites).map(|_| u.sample(&mut rng)).collect(),
        Err(_) => vec![0.0; sites],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// Accumulated correction after this round, zero mean, MHz.
    pub estimate_mhz: Vec<f64>,
    /// Injected offsets minus the correction, zero mean, MHz.
    pub residual_mhz: Vec<f64>,
    pub max_offset_before_mhz: f64,
    pub max_residual_mhz: f64,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub injected_mhz: Vec<f64>,
    pub plan: StaircasePlan,
    pub settings: NelderMeadSettings,
    pub noise_sigma: f64,
    pub rounds: Vec<RoundReport>,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Repeated measure-fit-correct cycles. Each round simulates traces with the
/// offsets left after the previous correction, adds noise, fits them from a
/// zero start and subtracts the estimate.
pub fn calibrate_rounds_with(
    spec: &ModelSpec,
    injected_mhz: &[f64],
    plan: &StaircasePlan,
    settings: &NelderMeadSettings,
    rounds: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<CalibrationReport> {
    let n = spec.sites;
    if injected_mhz.len() != n {
        return Err(Error::param(format!("expected {n} injected offsets, got {}", injected_mhz.len())));
    }
    let mut correction = vec![0.0; n];
    let mut out = Vec::with_capacity(rounds);
    for r in 0..rounds {
        let residual: Vec<f64> = gauge_fixed(
            &injected_mhz.iter().zip(&correction).map(|(a, b)| a - b).collect::<Vec<_>>(),
        );
        let clean = simulate_staircase(spec, &residual, plan)?;
        let observed = if noise_sigma > 0.0 {
            clean.with_noise(noise_sigma, derive_seed(seed, Purpose::Noise, &[r as u64]))?
        } else {
            clean
        };
        let fit = fit_offsets(&observed, spec, plan, settings, None)?;
        correction = gauge_fixed(&correction.iter().zip(&fit.offsets_mhz).map(|(a, b)| a + b).collect::<Vec<_>>());
        let after = gauge_fixed(&injected_mhz.iter().zip(&correction).map(|(a, b)| a - b).collect::<Vec<_>>());
        out.push(RoundReport {
            max_offset_before_mhz: max_abs(&residual),
            max_residual_mhz: max_abs(&after),
            estimate_mhz: correction.clone(),
            residual_mhz: after,
            cost: fit.cost,
            iterations: fit.iterations,
            converged: fit.converged,
        });
    }
    Ok(CalibrationReport {
        injected_mhz: injected_mhz.to_vec(),
        plan: plan.clone(),
        settings: *settings,
        noise_sigma,
        rounds: out,
    })
}

/// [`calibrate_rounds_with`] using default Nelder-Mead settings.
pub fn calibrate_rounds(
    spec: &ModelSpec,
    injected_mhz: &[f64],
    plan: &StaircasePlan,
    rounds: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<CalibrationReport> {
    calibrate_rounds_with(spec, injected_mhz, plan, &NelderMeadSettings::default(), rounds, noise_sigma, seed)
}
