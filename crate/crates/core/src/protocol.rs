//! The quench experiment: prepare a Fock state, evolve it under one disorder
//! realization, read it out (exactly or by sampled shots), and reduce each
//! diagnostic to its equilibrium value.

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{Configuration, SectorBasis};
use crate::ensemble::{Cell, CellKey, EnsembleTable, Provenance, Quantity};
use crate::error::{Error, Result};
use crate::hamiltonian::{build_hamiltonian, sample_disorder, DisorderRealization, ModelSpec};
use crate::observables::{
    autocorrelation, block_number_distribution, hamming_distance, number_entropy, site_populations,
    Exact, MixedDistribution, OutcomeSource, ShotTable,
};
use crate::propagator::{
    evolve_lindblad, evolve_unitary, max_truncation_leakage, KrylovSettings, LindbladSettings,
    NoiseSpec, StateVector,
};
use crate::rng::{derive_seed, stream, Purpose};

/// The ten half-filled initial states of the 12-site device.
pub const DEVICE_INITIAL_STATES: [&str; 10] = [
    "011010111000",
    "011001011100",
    "010111011000",
    "011100101010",
    "011110011000",
    "100001111001",
    "100011100110",
    "100101011001",
    "100110110010",
    "101000111001",
];

pub fn device_initial_states() -> Vec<Configuration> {
    DEVICE_INITIAL_STATES
        .iter()
        .map(|s| s.parse().expect("valid configuration literal"))
        .collect()
}

/// `h/J1 = 1.0, 1.5, ..., 7.0`.
pub fn device_disorder_grid() -> Vec<f64> {
    (0..13).map(|i| 1.0 + 0.5 * i as f64).collect()
}

/// Five evenly spaced times across `J1 t` in `[7.9, 10.8]`.
pub fn device_eq_times() -> Vec<f64> {
    evenly_spaced(EQ_WINDOW_START, 10.8, 5)
}

pub const EQ_WINDOW_START: f64 = 7.9;

pub fn evenly_spaced(start: f64, end: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..count)
            .map(|i| start + (end - start) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Outcome probabilities used directly.
    Exact,
    /// Finite shot tables with thresholded 0/1 readout.
    Shots,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub initial_states: Vec<Configuration>,
    pub disorder_grid: Vec<f64>,
    pub realizations: usize,
    pub eq_times: Vec<f64>,
    /// Additional times recorded in a [`QuenchRecord`] but not averaged.
    pub record_times: Vec<f64>,
    pub shots: usize,
    /// Per-site `(f00, f11)` readout fidelities.
    pub readout: Option<Vec<(f64, f64)>>,
    /// Drop outcomes with the wrong total occupation.
    pub post_select: bool,
    pub mode: Mode,
    /// Block size of the number entropy; half the chain when `None`.
    pub block: Option<usize>,
    pub master_seed: u64,
}

impl RunPlan {
    pub fn device_default() -> Self {
        RunPlan {
            initial_states: device_initial_states(),
            disorder_grid: device_disorder_grid(),
            realizations: 60,
            eq_times: device_eq_times(),
            record_times: Vec::new(),
            shots: 3000,
            readout: None,
            post_select: true,
            mode: Mode::Exact,
            block: None,
            master_seed: 0,
        }
    }

    pub fn validate(&self, sites: usize) -> Result<()> {
        if self.initial_states.is_empty() {
            return Err(Error::param("plan has no initial states"));
        }
        for (k, s) in self.initial_states.iter().enumerate() {
            if s.sites() != sites {
                return Err(Error::param(format!(
                    "initial state {} has {} sites, model has {sites}",
                    k + 1,
                    s.sites()
                )));
            }
            if !s.is_binary() || 2 * s.total() != sites {
                return Err(Error::param(format!(
                    "initial state {} ({s}) is not a half-filled 0/1 configuration",
                    k + 1
                )));
            }
        }
        if self.disorder_grid.is_empty()
            || self.disorder_grid.iter().any(|h| !(h.is_finite() && *h >= 0.0))
        {
            return Err(Error::param("disorder grid must be non-empty and non-negative"));
        }
        if self.realizations == 0 {
            return Err(Error::param("need at least one realization"));
        }
        if self.eq_times.is_empty() || self.eq_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("eq_times must be non-empty and strictly increasing"));
        }
        if self.eq_times[0] < EQ_WINDOW_START {
            return Err(Error::param(format!(
                "eq_times must all lie at or after J1 t = {EQ_WINDOW_START}"
            )));
        }
        if self.record_times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::param("record times must be finite and non-negative"));
        }
        if self.mode == Mode::Shots && self.shots == 0 {
            return Err(Error::param("shot mode needs at least one shot"));
        }
        if let Some(r) = &self.readout {
            if r.len() != sites {
                return Err(Error::param("need one readout fidelity pair per site"));
            }
            if r.iter().any(|&(a, b)| !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b)) {
                return Err(Error::param("readout fidelities must lie in [0, 1]"));
            }
        }
        if let Some(m) = self.block {
            if m == 0 || m > sites {
                return Err(Error::param(format!("block size {m} outside 1..={sites}")));
            }
        }
        Ok(())
    }

    pub fn block_size(&self, sites: usize) -> usize {
        self.block.unwrap_or((sites / 2).max(1))
    }

    /// Number of `(state, realization, h)` evolutions.
    pub fn cell_count(&self) -> usize {
        self.initial_states.len() * self.realizations * self.disorder_grid.len()
    }
}

/// Solver knobs shared by all cells.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub krylov: KrylovSettings,
    pub lindblad: LindbladSettings,
}

/// Index of one evolution in the sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellId {
    pub state: usize,
    pub realization: usize,
    pub h_index: usize,
}

/// Raw and post-selected shots at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct ShotRecord {
    pub raw: ShotTable,
    pub selected: Option<ShotTable>,
}

#[derive(Clone, Debug)]
pub struct QuenchRecord {
    pub id: CellId,
    pub h: f64,
    pub disorder: DisorderRealization,
    /// Every recorded time, increasing.
    pub times: Vec<f64>,
    pub populations: Vec<Vec<f64>>,
    /// Number entropy for blocks `1..=N/2` at each time.
    pub entropies: Vec<Vec<f64>>,
    /// `[C, S, D]` at each time.
    pub values: Vec<[f64; 3]>,
    /// Post-selection retention at each time (1 when not applied).
    pub retention: Vec<f64>,
    pub shots: Vec<ShotRecord>,
    /// Positions of the equilibrium times within `times`.
    pub eq_positions: Vec<usize>,
    /// Equilibrium value of each quantity.
    pub eq: [f64; 3],
    pub max_leakage: Option<f64>,
}

impl QuenchRecord {
    pub fn eq_value(&self, q: Quantity) -> f64 {
        self.eq[q.index()]
    }

    pub fn eq_series(&self, q: Quantity) -> Vec<f64> {
        self.eq_positions.iter().map(|&i| self.values[i][q.index()]).collect()
    }
}

/// Draws `n_shots` outcomes from `source`, reports each site as
/// `min(occupation, 1)`, and flips the reported bits with the readout error
/// probabilities.
pub fn sample_outcomes(
    source: &dyn OutcomeSource,
    n_shots: usize,
    readout: Option<&[(f64, f64)]>,
    rng: &mut impl Rng,
) -> Result<ShotTable> {
    if n_shots == 0 {
        return Err(Error::param("need at least one shot"));
    }
    let mut outcomes: Vec<Vec<u8>> = Vec::new();
    let mut weights = Vec::new();
    source.visit(&mut |occ, p| {
        if p > 0.0 {
            outcomes.push(occ.to_vec());
            weights.push(p);
        }
    })?;
    let dist = WeightedIndex::new(&weights)
        .map_err(|e| Error::Estimation(format!("cannot sample outcomes: {e}")))?;
    let shots = (0..n_shots)
        .map(|_| measure(&outcomes[dist.sample(rng)], readout, rng))
        .collect();
    Ok(ShotTable::new(shots, 1))
}

/// Thresholds and corrupts one outcome.
fn measure(occ: &[u8], readout: Option<&[(f64, f64)]>, rng: &mut impl Rng) -> Configuration {
    let mut bits: Vec<u8> = occ.iter().map(|&n| n.min(1)).collect();
    if let Some(fid) = readout {
        for (b, &(f00, f11)) in bits.iter_mut().zip(fid) {
            let u: f64 = rng.random();
            if *b == 0 && u >= f00 {
                *b = 1;
            } else if *b == 1 && u >= f11 {
                *b = 0;
            }
        }
    }
    Configuration::new(bits)
}

/// Shots from a pure state; see [`sample_outcomes`].
pub fn sample_shots(
    psi: &StateVector,
    basis: &SectorBasis,
    n_shots: usize,
    readout: Option<&[(f64, f64)]>,
    seed: u64,
) -> Result<ShotTable> {
    let source = Exact::new(basis, psi)?;
    sample_outcomes(&source, n_shots, readout, &mut stream(seed))
}

/// Keeps the shots with total occupation `n_total` and returns them with the
/// retained fraction. `None` when every shot is rejected.
pub fn post_select(shots: &ShotTable, n_total: usize) -> (Option<ShotTable>, f64) {
    if shots.is_empty() {
        return (None, 0.0);
    }
    let mut kept = Vec::new();
    let mut kept_weights = Vec::new();
    let mut total_w = 0.0;
    let mut kept_w = 0.0;
    for (i, s) in shots.shots.iter().enumerate() {
        let w = shots.weights.as_ref().map_or(1.0, |w| w[i]);
        total_w += w;
        if s.total() == n_total {
            kept.push(s.clone());
            kept_weights.push(w);
            kept_w += w;
        }
    }
    let retention = if total_w > 0.0 { kept_w / total_w } else { 0.0 };
    if kept.is_empty() {
        return (None, retention);
    }
    let table = ShotTable {
        shots: kept,
        weights: shots.weights.as_ref().map(|_| kept_weights),
        n_max: shots.n_max,
    };
    (Some(table), retention)
}

/// Everything needed to run cells of one sweep.
pub struct Experiment {
    pub spec: ModelSpec,
    pub noise: Option<NoiseSpec>,
    pub plan: RunPlan,
    pub solver: SolverSettings,
    basis: Arc<SectorBasis>,
    times: Vec<f64>,
    eq_positions: Vec<usize>,
}

impl Experiment {
    pub fn new(spec: ModelSpec, noise: Option<NoiseSpec>, plan: RunPlan, solver: SolverSettings) -> Result<Self> {
        spec.validate()?;
        plan.validate(spec.sites)?;
        if let Some(n) = &noise {
            n.validate(spec.sites)?;
        }
        let n_total = plan.initial_states[0].total();
        let basis = Arc::new(SectorBasis::enumerate(spec.sites, n_total, spec.n_max)?);
        let mut times: Vec<f64> = plan.eq_times.iter().chain(&plan.record_times).copied().collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let eq_positions = plan
            .eq_times
            .iter()
            .map(|t| times.iter().position(|x| x == t).expect("eq time is recorded"))
            .collect();
        Ok(Experiment {
            spec,
            noise,
            plan,
            solver,
            basis,
            times,
            eq_positions,
        })
    }

    pub fn basis(&self) -> &SectorBasis {
        &self.basis
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn disorder_seed(&self, id: CellId) -> u64 {
        derive_seed(
            self.plan.master_seed,
            Purpose::Disorder,
            &[id.state as u64, id.realization as u64, id.h_index as u64],
        )
    }

    fn cell_seed(&self, id: CellId, purpose: Purpose) -> u64 {
        derive_seed(
            self.plan.master_seed,
            purpose,
            &[id.state as u64, id.realization as u64, id.h_index as u64],
        )
    }

    /// All cell ids in (state, realization, h) order.
    pub fn cell_ids(&self) -> Vec<CellId> {
        let mut ids = Vec::with_capacity(self.plan.cell_count());
        for state in 0..self.plan.initial_states.len() {
            for realization in 0..self.plan.realizations {
                for h_index in 0..self.plan.disorder_grid.len() {
                    ids.push(CellId {
                        state,
                        realization,
                        h_index,
                    });
                }
            }
        }
        ids
    }

    pub fn run_quench(&self, id: CellId) -> Result<QuenchRecord> {
        self.run_quench_inner(id).map_err(|e| {
            e.context(format!(
                "state {} realization {} h index {}",
                id.state + 1,
                id.realization,
                id.h_index
            ))
        })
    }

    fn run_quench_inner(&self, id: CellId) -> Result<QuenchRecord> {
        let plan = &self.plan;
        let s0 = plan
            .initial_states
            .get(id.state)
            .ok_or_else(|| Error::param("state index out of range"))?;
        let h = *plan
            .disorder_grid
            .get(id.h_index)
            .ok_or_else(|| Error::param("h index out of range"))?;
        if id.realization >= plan.realizations {
            return Err(Error::param("realization index out of range"));
        }
        let disorder = sample_disorder(h, self.spec.sites, self.disorder_seed(id))?;
        let psi0 = StateVector::fock(&self.basis, s0)?;
        let n_total = s0.total();

        // one outcome source per recorded time
        let mut sources: Vec<MixedDistribution> = Vec::with_capacity(self.times.len());
        let mut trajectory_shots: Option<Vec<ShotTable>> = None;
        let mut max_leakage = None;
        match &self.noise {
            None => {
                let hm = build_hamiltonian(&self.spec, &disorder, &self.basis)?;
                let traj = evolve_unitary(&hm, &psi0, &self.times, &self.solver.krylov)?;
                let leak = self
                    .eq_positions
                    .iter()
                    .map(|&i| max_truncation_leakage(&traj.states[i], &self.basis))
                    .fold(0.0, f64::max);
                max_leakage = Some(leak);
                for s in &traj.states {
                    sources.push(MixedDistribution::from_state(self.basis.clone(), s)?);
                }
            }
            Some(noise) => {
                let settings = LindbladSettings {
                    seed: self.cell_seed(id, Purpose::Trajectories),
                    sample_shots: plan.mode == Mode::Shots,
                    ..self.solver.lindblad
                };
                let rec = evolve_lindblad(
                    &self.spec,
                    &disorder,
                    noise,
                    &self.basis,
                    &psi0,
                    &self.times,
                    &settings,
                )?;
                trajectory_shots = rec.shots;
                sources = rec.distributions;
            }
        }

        let sites = self.spec.sites;
        let block = plan.block_size(sites);
        let ideal: Vec<f64> = s0.occupations().iter().map(|&n| n as f64).collect();
        let mut shot_rng = stream(self.cell_seed(id, Purpose::Shots));
        let mut populations = Vec::with_capacity(self.times.len());
        let mut entropies = Vec::with_capacity(self.times.len());
        let mut values = Vec::with_capacity(self.times.len());
        let mut retention = Vec::with_capacity(self.times.len());
        let mut shots = Vec::new();
        for (ti, dist) in sources.into_iter().enumerate() {
            let (source, kept): (Box<dyn OutcomeSource>, f64) = match plan.mode {
                Mode::Exact => {
                    if plan.post_select && self.noise.is_some() {
                        let (d, r) = dist.post_selected(n_total)?;
                        (Box::new(d), r)
                    } else {
                        (Box::new(dist), 1.0)
                    }
                }
                Mode::Shots => {
                    let raw = match &trajectory_shots {
                        Some(t) => {
                            let bits = t[ti]
                                .shots
                                .iter()
                                .map(|c| measure(c.occupations(), plan.readout.as_deref(), &mut shot_rng))
                                .collect();
                            ShotTable::new(bits, 1)
                        }
                        None => sample_outcomes(&dist, plan.shots, plan.readout.as_deref(), &mut shot_rng)?,
                    };
                    let (selected, r) = if plan.post_select {
                        post_select(&raw, n_total)
                    } else {
                        (Some(raw.clone()), 1.0)
                    };
                    let table = selected.clone().ok_or_else(|| {
                        Error::Estimation(format!("post-selection rejected every shot at t = {}", self.times[ti]))
                    })?;
                    shots.push(ShotRecord { raw, selected });
                    (Box::new(table), r)
                }
            };
            let pops = site_populations(source.as_ref())?;
            let c = autocorrelation(&pops, &ideal)?;
            let ent: Vec<f64> = (1..=(sites / 2).max(1))
                .map(|m| block_number_distribution(source.as_ref(), m).map(|d| number_entropy(&d)))
                .collect::<Result<_>>()?;
            let s = number_entropy(&block_number_distribution(source.as_ref(), block)?);
            let d = hamming_distance(source.as_ref(), s0)?;
            populations.push(pops);
            entropies.push(ent);
            values.push([c, s, d]);
            retention.push(kept);
        }

        let m = self.eq_positions.len() as f64;
        let mut eq = [0.0; 3];
        for &i in &self.eq_positions {
            for q in 0..3 {
                eq[q] += values[i][q];
            }
        }
        eq.iter_mut().for_each(|v| *v /= m);

        Ok(QuenchRecord {
            id,
            h,
            disorder,
            times: self.times.clone(),
            populations,
            entropies,
            values,
            retention,
            shots,
            eq_positions: self.eq_positions.clone(),
            eq,
            max_leakage,
        })
    }

    /// Table rows of one finished or failed cell.
    fn cells_of(&self, id: CellId, outcome: Result<QuenchRecord>) -> Vec<Cell> {
        let h = self.plan.disorder_grid[id.h_index];
        let seed = self.disorder_seed(id);
        Quantity::ALL
            .iter()
            .map(|&q| {
                let key = CellKey {
                    quantity: q,
                    state: id.state,
                    realization: id.realization,
                    h_index: id.h_index,
                };
                match &outcome {
                    Ok(rec) => Cell {
                        key,
                        h,
                        value: Some(rec.eq_value(q)),
                        per_time: rec.eq_series(q),
                        retention: self
                            .eq_positions
                            .iter()
                            .map(|&i| rec.retention[i])
                            .fold(1.0, f64::min),
                        seed,
                        leakage: rec.max_leakage,
                        note: String::new(),
                    },
                    Err(e) => Cell {
                        key,
                        h,
                        value: None,
                        per_time: Vec::new(),
                        retention: 0.0,
                        seed,
                        leakage: None,
                        note: e.to_string(),
                    },
                }
            })
            .collect()
    }

    /// Runs the given cells in parallel; failures become missing cells.
    pub fn run_cells(&self, ids: &[CellId], progress: Option<&(dyn Fn(usize) + Sync)>) -> Vec<Cell> {
        let done = std::sync::atomic::AtomicUsize::new(0);
        let per_cell: Vec<Vec<Cell>> = ids
            .par_iter()
            .map(|&id| {
                let cells = self.cells_of(id, self.run_quench(id));
                let n = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
                if let Some(p) = progress {
                    p(n);
                }
                cells
            })
            .collect();
        per_cell.into_iter().flatten().collect()
    }

    /// Runs every cell of the plan.
    pub fn run_sweep(&self, provenance: Provenance, progress: Option<&(dyn Fn(usize) + Sync)>) -> Result<EnsembleTable> {
        let mut table = EnsembleTable::new(provenance);
        for cell in self.run_cells(&self.cell_ids(), progress) {
            table.insert(cell)?;
        }
        Ok(table)
    }
}
