//! Open-system evolution with per-site amplitude damping `sqrt(G_l) a_l` and
//! dephasing `sqrt(g_l) n_l`.
//!
//! Decay only lowers the boson number, so a density matrix that starts in the
//! `n`-boson sector stays block diagonal over sectors `0..=n`. The dense
//! solver integrates those blocks directly; the trajectory solver unravels
//! the same equation into pure-state jumps.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::krylov::{DampedGenerator, Krylov, KrylovSettings};
use super::ode::{integrate, OdeSettings};
use super::{check_times, StateVector, NORM_TOLERANCE};
use crate::basis::{Configuration, SectorBasis};
use crate::device;
use crate::error::{Error, Result};
use crate::hamiltonian::{build_hamiltonian, DisorderRealization, ModelSpec, SparseHermitian};
use crate::observables::{site_populations, MixedDistribution, SectorProbabilities, ShotTable};
use crate::rng::{derive_seed, stream, Purpose};
use crate::units::lifetime_us_to_rate_j1;

type C64 = Complex64;
const ZERO: C64 = C64::new(0.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// Per-site jump rates in units of J1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub decay: Vec<f64>,
    pub dephasing: Vec<f64>,
}

impl NoiseSpec {
    pub fn none(sites: usize) -> Self {
        NoiseSpec {
            decay: vec![0.0; sites],
            dephasing: vec![0.0; sites],
        }
    }

    /// Rates `1/T1` and `1/T2*` from lifetimes in microseconds.
    pub fn from_lifetimes_us(t1: &[f64], t2_star: &[f64]) -> Result<Self> {
        if t1.len() != t2_star.len() {
            return Err(Error::param("need one T1 and one T2* per site"));
        }
        if t1.iter().chain(t2_star).any(|t| !(*t > 0.0)) {
            return Err(Error::param("lifetimes must be positive"));
        }
        Ok(NoiseSpec {
            decay: t1.iter().map(|&t| lifetime_us_to_rate_j1(t)).collect(),
            dephasing: t2_star.iter().map(|&t| lifetime_us_to_rate_j1(t)).collect(),
        })
    }

    /// Measured rates of the first `sites` device qubits.
    pub fn device(sites: usize) -> Result<Self> {
        if sites > device::T1_US.len() {
            return Err(Error::param(format!(
                "device table covers {} qubits, asked for {sites}",
                device::T1_US.len()
            )));
        }
        Self::from_lifetimes_us(&device::T1_US[..sites], &device::T2_STAR_US[..sites])
    }

    pub fn scaled(&self, factor: f64) -> Self {
        NoiseSpec {
            decay: self.decay.iter().map(|g| g * factor).collect(),
            dephasing: self.dephasing.iter().map(|g| g * factor).collect(),
        }
    }

    pub fn sites(&self) -> usize {
        self.decay.len()
    }

    pub fn is_zero(&self) -> bool {
        self.decay.iter().chain(&self.dephasing).all(|&g| g == 0.0)
    }

    pub fn validate(&self, sites: usize) -> Result<()> {
        if self.decay.len() != sites || self.dephasing.len() != sites {
            return Err(Error::param(format!(
                "noise rates cover {}/{} sites, chain has {sites}",
                self.decay.len(),
                self.dephasing.len()
            )));
        }
        if self
            .decay
            .iter()
            .chain(&self.dephasing)
            .any(|g| !(g.is_finite() && *g >= 0.0))
        {
            return Err(Error::param("noise rates must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LindbladMethod {
    Trajectories,
    Dense,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LindbladSettings {
    pub method: LindbladMethod,
    pub trajectories: usize,
    /// Largest summed sector dimension the dense solver accepts.
    pub dense_dimension_cap: usize,
    pub rtol: f64,
    pub atol: f64,
    /// Jump times are bisected to this relative precision.
    pub jump_time_tolerance: f64,
    pub seed: u64,
    /// Draw one measurement outcome per trajectory and record time.
    pub sample_shots: bool,
    pub krylov: KrylovSettings,
}

impl Default for LindbladSettings {
    fn default() -> Self {
        LindbladSettings {
            method: LindbladMethod::Trajectories,
            trajectories: 2000,
            dense_dimension_cap: 1000,
            rtol: 1e-10,
            atol: 1e-12,
            jump_time_tolerance: 1e-6,
            seed: 0,
            sample_shots: false,
            krylov: KrylovSettings::default(),
        }
    }
}

/// Outcome statistics of an open-system run at each record time.
#[derive(Clone, Debug)]
pub struct OpenRecord {
    pub times: Vec<f64>,
    pub method: LindbladMethod,
    pub distributions: Vec<MixedDistribution>,
    pub populations: Vec<Vec<f64>>,
    /// Monte Carlo standard errors; zero for the dense solver.
    pub population_stderr: Vec<Vec<f64>>,
    /// `tr rho` (dense) or the mean trajectory norm after renormalization.
    pub trace: Vec<f64>,
    /// One outcome per trajectory, when requested.
    pub shots: Option<Vec<ShotTable>>,
}

struct Sector {
    basis: Arc<SectorBasis>,
    h: SparseHermitian,
    /// `sum_l G_l n_l + g_l n_l^2` per basis state.
    damping: Vec<f64>,
    /// `lower[l]` lists `(from, to, sqrt(n_l))` into the next sector down.
    lower: Vec<Vec<(usize, usize, f64)>>,
}

struct OpenModel {
    sectors: Vec<Sector>,
    decay: Vec<f64>,
    dephasing: Vec<f64>,
}

impl OpenModel {
    fn build(spec: &ModelSpec, dis: &DisorderRealization, noise: &NoiseSpec, n_total: usize) -> Result<Self> {
        let mut sectors: Vec<Sector> = Vec::with_capacity(n_total + 1);
        for k in 0..=n_total {
            let basis = Arc::new(SectorBasis::enumerate(spec.sites, k, spec.n_max)?);
            let h = build_hamiltonian(spec, dis, &basis)?;
            let damping = basis
                .states()
                .iter()
                .map(|c| {
                    c.occupations()
                        .iter()
                        .enumerate()
                        .map(|(l, &n)| {
                            let n = n as f64;
                            noise.decay[l] * n + noise.dephasing[l] * n * n
                        })
                        .sum()
                })
                .collect();
            let mut lower = vec![Vec::new(); spec.sites];
            if k > 0 {
                let below = &sectors[k - 1].basis;
                let mut occ = vec![0u8; spec.sites];
                for (p, c) in basis.states().iter().enumerate() {
                    for l in 0..spec.sites {
                        let n = c.occupations()[l];
                        if n == 0 {
                            continue;
                        }
                        occ.copy_from_slice(c.occupations());
                        occ[l] -= 1;
                        let q = below.rank(&occ).expect("lowered state lies in the sector below");
                        lower[l].push((p, q, (n as f64).sqrt()));
                    }
                }
            }
            sectors.push(Sector {
                basis,
                h,
                damping,
                lower,
            });
        }
        Ok(OpenModel {
            sectors,
            decay: noise.decay.clone(),
            dephasing: noise.dephasing.clone(),
        })
    }

    fn distribution(&self, per_sector: Vec<Vec<f64>>) -> Result<MixedDistribution> {
        MixedDistribution::new(
            self.sectors
                .iter()
                .zip(per_sector)
                .map(|(s, p)| SectorProbabilities {
                    basis: s.basis.clone(),
                    probabilities: p,
                })
                .collect(),
        )
    }
}

/// Evolves `|psi0><psi0|` under the master equation and records outcome
/// distributions at each of `times`.
pub fn evolve_lindblad(
    spec: &ModelSpec,
    dis: &DisorderRealization,
    noise: &NoiseSpec,
    basis: &SectorBasis,
    psi0: &StateVector,
    times: &[f64],
    settings: &LindbladSettings,
) -> Result<OpenRecord> {
    spec.validate()?;
    noise.validate(spec.sites)?;
    if basis.sites() != spec.sites || basis.n_max() != spec.n_max {
        return Err(Error::param("basis does not match the model"));
    }
    if psi0.dim() != basis.dim() {
        return Err(Error::param("initial state does not match the basis"));
    }
    if (psi0.norm() - 1.0).abs() > NORM_TOLERANCE {
        return Err(Error::param("initial state is not normalized"));
    }
    check_times(times)?;
    let n_total = basis.n_total();
    match settings.method {
        LindbladMethod::Dense => {
            let total: u64 = (0..=n_total)
                .map(|k| crate::basis::sector_dimension(spec.sites, k, spec.n_max))
                .sum();
            if total > settings.dense_dimension_cap as u64 {
                return Err(Error::param(format!(
                    "dense master equation would need {total} basis states over all sectors \
                     (cap {}); use the trajectories method instead",
                    settings.dense_dimension_cap
                )));
            }
            let model = OpenModel::build(spec, dis, noise, n_total)?;
            dense(&model, psi0, times, settings)
        }
        LindbladMethod::Trajectories => {
            if settings.trajectories < 2 {
                return Err(Error::param("need at least two trajectories"));
            }
            let model = OpenModel::build(spec, dis, noise, n_total)?;
            trajectories(&model, psi0, times, settings)
        }
    }
}

fn dense(model: &OpenModel, psi0: &StateVector, times: &[f64], settings: &LindbladSettings) -> Result<OpenRecord> {
    let dims: Vec<usize> = model.sectors.iter().map(|s| s.basis.dim()).collect();
    let mut offsets = vec![0usize];
    for d in &dims {
        offsets.push(offsets.last().unwrap() + d * d);
    }
    let top = dims.len() - 1;
    // diagonal superoperator part: dephasing sandwich minus half anticommutator
    let coefficients: Vec<Vec<f64>> = model
        .sectors
        .iter()
        .map(|s| {
            let d = s.basis.dim();
            let mut c = vec![0.0; d * d];
            for i in 0..d {
                let oi = s.basis.state(i).occupations();
                for j in 0..d {
                    let oj = s.basis.state(j).occupations();
                    let sandwich: f64 = model
                        .dephasing
                        .iter()
                        .zip(oi.iter().zip(oj))
                        .map(|(g, (&a, &b))| g * a as f64 * b as f64)
                        .sum();
                    c[i * d + j] = sandwich - 0.5 * (s.damping[i] + s.damping[j]);
                }
            }
            c
        })
        .collect();

    let mut rho0 = vec![ZERO; *offsets.last().unwrap()];
    let d = dims[top];
    let a = psi0.amplitudes();
    for i in 0..d {
        for j in 0..d {
            rho0[offsets[top] + i * d + j] = a[i] * a[j].conj();
        }
    }

    let rhs = |rho: &[C64], out: &mut [C64]| {
        for (k, s) in model.sectors.iter().enumerate() {
            let d = dims[k];
            let r = &rho[offsets[k]..offsets[k + 1]];
            let o = &mut out[offsets[k]..offsets[k + 1]];
            let c = &coefficients[k];
            for i in 0..d {
                for j in 0..d {
                    let mut acc = c[i * d + j] * r[i * d + j];
                    let mut comm = ZERO;
                    for (m, h) in s.h.row(i) {
                        comm -= r[m * d + j] * h;
                    }
                    for (m, h) in s.h.row(j) {
                        comm += r[i * d + m] * h;
                    }
                    acc += I * comm;
                    o[i * d + j] = acc;
                }
            }
            if k < top {
                let up = &model.sectors[k + 1];
                let du = dims[k + 1];
                let ru = &rho[offsets[k + 1]..offsets[k + 2]];
                for (l, ops) in up.lower.iter().enumerate() {
                    let g = model.decay[l];
                    if g == 0.0 {
                        continue;
                    }
                    for &(p, q, x) in ops {
                        for &(p2, q2, y) in ops {
                            o[q * d + q2] += ru[p * du + p2] * (g * x * y);
                        }
                    }
                }
            }
        }
    };
    let ode = OdeSettings {
        rtol: settings.rtol,
        atol: settings.atol,
        max_steps: 10_000_000,
    };
    let states = integrate(rhs, rho0, times, ode)?;

    let mut distributions = Vec::with_capacity(times.len());
    let mut populations = Vec::with_capacity(times.len());
    let mut trace = Vec::with_capacity(times.len());
    for rho in &states {
        let per_sector: Vec<Vec<f64>> = dims
            .iter()
            .enumerate()
            .map(|(k, &d)| (0..d).map(|i| rho[offsets[k] + i * d + i].re).collect())
            .collect();
        trace.push(per_sector.iter().flatten().sum());
        let dist = model.distribution(per_sector)?;
        populations.push(site_populations(&dist)?);
        distributions.push(dist);
    }
    let sites = model.decay.len();
    Ok(OpenRecord {
        times: times.to_vec(),
        method: LindbladMethod::Dense,
        distributions,
        population_stderr: vec![vec![0.0; sites]; times.len()],
        populations,
        trace,
        shots: None,
    })
}

/// Sums over a contiguous block of trajectories.
struct Tally {
    probabilities: Vec<Vec<Vec<f64>>>,
    pop_sum: Vec<Vec<f64>>,
    pop_sq: Vec<Vec<f64>>,
    shots: Vec<Vec<Configuration>>,
}

impl Tally {
    fn new(model: &OpenModel, times: usize, sites: usize) -> Self {
        Tally {
            probabilities: (0..times)
                .map(|_| model.sectors.iter().map(|s| vec![0.0; s.basis.dim()]).collect())
                .collect(),
            pop_sum: vec![vec![0.0; sites]; times],
            pop_sq: vec![vec![0.0; sites]; times],
            shots: vec![Vec::new(); times],
        }
    }

    fn absorb(&mut self, other: Tally) {
        for (a, b) in self.probabilities.iter_mut().zip(other.probabilities) {
            for (x, y) in a.iter_mut().zip(b) {
                x.iter_mut().zip(y).for_each(|(u, v)| *u += v);
            }
        }
        for (a, b) in self.pop_sum.iter_mut().zip(other.pop_sum) {
            a.iter_mut().zip(b).for_each(|(u, v)| *u += v);
        }
        for (a, b) in self.pop_sq.iter_mut().zip(other.pop_sq) {
            a.iter_mut().zip(b).for_each(|(u, v)| *u += v);
        }
        for (a, b) in self.shots.iter_mut().zip(other.shots) {
            a.extend(b);
        }
    }
}

const CHUNK: usize = 16;

fn trajectories(
    model: &OpenModel,
    psi0: &StateVector,
    times: &[f64],
    settings: &LindbladSettings,
) -> Result<OpenRecord> {
    let sites = model.decay.len();
    let m = settings.trajectories;
    let chunks: Vec<Result<Tally>> = (0..m.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut tally = Tally::new(model, times.len(), sites);
            let mut krylov = Krylov::new(settings.krylov);
            for t in c * CHUNK..((c + 1) * CHUNK).min(m) {
                run_one(model, psi0, times, settings, t as u64, &mut krylov, &mut tally)?;
            }
            Ok(tally)
        })
        .collect();
    let mut total = Tally::new(model, times.len(), sites);
    for c in chunks {
        total.absorb(c?);
    }

    let mf = m as f64;
    let mut distributions = Vec::with_capacity(times.len());
    let mut populations = Vec::with_capacity(times.len());
    let mut stderr = Vec::with_capacity(times.len());
    for ti in 0..times.len() {
        let per_sector: Vec<Vec<f64>> = total.probabilities[ti]
            .iter()
            .map(|v| v.iter().map(|p| p / mf).collect())
            .collect();
        distributions.push(model.distribution(per_sector)?);
        let mean: Vec<f64> = total.pop_sum[ti].iter().map(|s| s / mf).collect();
        stderr.push(
            total.pop_sq[ti]
                .iter()
                .zip(&mean)
                .map(|(sq, mu)| ((sq / mf - mu * mu).max(0.0) * mf / (mf - 1.0) / mf).sqrt())
                .collect(),
        );
        populations.push(mean);
    }
    let n_max = model.sectors[0].basis.n_max();
    Ok(OpenRecord {
        times: times.to_vec(),
        method: LindbladMethod::Trajectories,
        distributions,
        populations,
        population_stderr: stderr,
        trace: vec![1.0; times.len()],
        shots: settings
            .sample_shots
            .then(|| total.shots.into_iter().map(|s| ShotTable::new(s, n_max)).collect()),
    })
}

fn run_one(
    model: &OpenModel,
    psi0: &StateVector,
    times: &[f64],
    settings: &LindbladSettings,
    index: u64,
    krylov: &mut Krylov,
    tally: &mut Tally,
) -> Result<()> {
    let mut rng = stream(derive_seed(settings.seed, Purpose::Trajectories, &[index]));
    let mut shot_rng = stream(derive_seed(settings.seed, Purpose::Shots, &[index]));
    let mut k = model.sectors.len() - 1;
    let mut psi = psi0.amplitudes().to_vec();
    let mut out = vec![ZERO; psi.len()];
    let mut threshold: f64 = rng.random();
    let mut now = 0.0;
    let tol = settings.krylov.step_tolerance;

    for (ti, &t) in times.iter().enumerate() {
        let mut steps = 0usize;
        while now < t {
            steps += 1;
            if steps > settings.krylov.max_steps {
                return Err(Error::Solver("trajectory exceeded the step limit".into()));
            }
            let sector = &model.sectors[k];
            let generator = DampedGenerator {
                hamiltonian: &sector.h,
                rates: &sector.damping,
            };
            let remaining = t - now;
            let sub = krylov.build(&generator, &psi)?;
            let tau = sub.admissible_step(remaining, tol * sub.norm());
            if !(tau > remaining * 1e-12) {
                return Err(Error::Solver(format!(
                    "trajectory step collapsed with {remaining:.3e} time left"
                )));
            }
            let end_norm = sub.propagated_norm(tau).powi(2);
            if end_norm > threshold {
                let c = sub.coefficients(tau);
                sub.combine(&c, &mut out);
                std::mem::swap(&mut psi, &mut out);
                now = if tau >= remaining { t } else { now + tau };
                continue;
            }
            // the jump falls inside this step: bisect on the squared norm
            let (mut lo, mut hi) = (0.0, tau);
            while hi - lo > settings.jump_time_tolerance * (now + hi) {
                let mid = 0.5 * (lo + hi);
                if sub.propagated_norm(mid).powi(2) > threshold {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let c = sub.coefficients(hi);
            sub.combine(&c, &mut out);
            std::mem::swap(&mut psi, &mut out);
            now = (now + hi).min(t);
            k = jump(model, k, &mut psi, &mut rng)?;
            out.resize(psi.len(), ZERO);
            threshold = rng.random();
        }
        let nrm = super::krylov::norm(&psi);
        let probs: Vec<f64> = psi.iter().map(|z| z.norm_sqr() / (nrm * nrm)).collect();
        let basis = &model.sectors[k].basis;
        let pops = &mut tally.pop_sum[ti];
        let sq = &mut tally.pop_sq[ti];
        let mut mine = vec![0.0; pops.len()];
        for (c, &p) in basis.states().iter().zip(&probs) {
            for (x, &n) in mine.iter_mut().zip(c.occupations()) {
                *x += p * n as f64;
            }
        }
        for l in 0..mine.len() {
            pops[l] += mine[l];
            sq[l] += mine[l] * mine[l];
        }
        if settings.sample_shots {
            let u: f64 = shot_rng.random();
            let mut acc = 0.0;
            let mut pick = probs.len() - 1;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            tally.shots[ti].push(basis.state(pick).clone());
        }
        tally.probabilities[ti][k]
            .iter_mut()
            .zip(probs)
            .for_each(|(a, p)| *a += p);
    }
    Ok(())
}

/// Applies one randomly chosen collapse operator and renormalizes; returns
/// the new sector index.
fn jump(model: &OpenModel, k: usize, psi: &mut Vec<C64>, rng: &mut impl Rng) -> Result<usize> {
    let basis = &model.sectors[k].basis;
    let sites = model.decay.len();
    let mut weights = Vec::with_capacity(2 * sites);
    for l in 0..sites {
        let (mut first, mut second) = (0.0, 0.0);
        for (c, z) in basis.states().iter().zip(psi.iter()) {
            let n = c.occupations()[l] as f64;
            first += n * z.norm_sqr();
            second += n * n * z.norm_sqr();
        }
        weights.push(model.decay[l] * first);
        weights.push(model.dephasing[l] * second);
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Solver("jump requested with zero jump rate".into()));
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut channel = weights.len() - 1;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc && *w > 0.0 {
            channel = i;
            break;
        }
    }
    let l = channel / 2;
    let new_k = if channel % 2 == 0 {
        let below = &model.sectors[k - 1];
        let mut next = vec![ZERO; below.basis.dim()];
        for &(p, q, a) in &model.sectors[k].lower[l] {
            next[q] += psi[p] * a;
        }
        *psi = next;
        k - 1
    } else {
        for (c, z) in basis.states().iter().zip(psi.iter_mut()) {
            *z *= c.occupations()[l] as f64;
        }
        k
    };
    let nrm = super::krylov::norm(psi);
    psi.iter_mut().for_each(|z| *z /= nrm);
    Ok(new_k)
}
