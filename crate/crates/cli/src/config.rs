//! Run configuration: a TOML file with an explicit schema version.
//!
//! Every section has defaults that reproduce the 12-site device run, so an
//! empty file with only `schema_version = 1` is a valid device-default config.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mbl_core::basis::Configuration;
use mbl_core::device;
use mbl_core::hamiltonian::ModelSpec;
use mbl_core::propagator::NoiseSpec;
use mbl_core::protocol::{evenly_spaced, device_disorder_grid, device_initial_states, Mode, RunPlan, SolverSettings};
use mbl_core::units;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub plan: PlanSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub inference: InferenceSection,
    #[serde(default)]
    pub calibration: CalibrationSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Energies in units of J1 unless the key says otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub sites: usize,
    pub n_max: u8,
    /// Uniform nearest-neighbour hopping, or one value per bond.
    pub j1: Couplings,
    pub j2: Couplings,
    pub u: f64,
    pub omega: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Couplings {
    Uniform(f64),
    PerBond(Vec<f64>),
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelSpec::device_default(12);
        ModelSection {
            sites: 12,
            n_max: d.n_max,
            j1: Couplings::Uniform(1.0),
            j2: Couplings::Uniform(units::J2_OVER_2PI_MHZ / units::J1_OVER_2PI_MHZ),
            u: d.u,
            omega: d.omega,
        }
    }
}

impl ModelSection {
    pub fn spec(&self) -> Result<ModelSpec> {
        let expand = |c: &Couplings, n: usize, what: &str| -> Result<Vec<f64>> {
            match c {
                Couplings::Uniform(v) => Ok(vec![*v; n]),
                Couplings::PerBond(v) if v.len() == n => Ok(v.clone()),
                Couplings::PerBond(v) => bail!("model.{what} lists {} bonds, chain has {n}", v.len()),
            }
        };
        let spec = ModelSpec {
            sites: self.sites,
            j1: expand(&self.j1, self.sites.saturating_sub(1), "j1")?,
            j2: expand(&self.j2, self.sites.saturating_sub(2), "j2")?,
            u: self.u,
            omega: self.omega,
            n_max: self.n_max,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanSection {
    /// Defaults to the ten device states when the chain has 12 sites.
    pub initial_states: Option<Vec<Configuration>>,
    pub disorder_grid: Vec<f64>,
    pub realizations: usize,
    pub eq_window: EqWindow,
    pub record_times: Vec<f64>,
    pub shots: usize,
    pub mode: Mode,
    pub post_select: bool,
    pub block: Option<usize>,
    pub master_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EqWindow {
    pub start: f64,
    pub end: f64,
    pub points: usize,
}

impl Default for PlanSection {
    fn default() -> Self {
        let p = RunPlan::device_default();
        PlanSection {
            initial_states: None,
            disorder_grid: device_disorder_grid(),
            realizations: p.realizations,
            eq_window: EqWindow {
                start: 7.9,
                end: 10.8,
                points: 5,
            },
            record_times: Vec::new(),
            shots: p.shots,
            mode: p.mode,
            post_select: p.post_select,
            block: None,
            master_seed: 20_240_501,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// Evolve under the master equation instead of unitarily.
    pub lindblad: bool,
    /// Lifetimes in microseconds; the device table when absent.
    pub t1_us: Option<Vec<f64>>,
    pub t2_star_us: Option<Vec<f64>>,
    /// Multiplies every rate.
    pub rate_scale: f64,
    /// Apply readout errors in shot mode.
    pub readout_error: bool,
    /// `[f00, f11]` per site; the device table when absent.
    pub readout: Option<Vec<[f64; 2]>>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            lindblad: false,
            t1_us: None,
            t2_star_us: None,
            rate_scale: 1.0,
            readout_error: false,
            readout: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub min_realizations: usize,
    /// Disorder strengths at which distributions are fitted; the peak of the
    /// state-averaged spread is always added.
    pub distribution_h: Vec<f64>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            min_realizations: mbl_core::statistics::DEFAULT_MIN_REALIZATIONS,
            distribution_h: vec![1.0, 3.0, 7.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceSection {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub tau_max: f64,
    pub seed: u64,
}

impl Default for InferenceSection {
    fn default() -> Self {
        let s = mbl_core::inference::GibbsSettings::default();
        InferenceSection {
            chains: s.chains,
            iterations: s.iterations,
            burn_in: s.burn_in,
            thin: s.thin,
            tau_max: s.tau_max,
            seed: s.seed,
        }
    }
}

impl InferenceSection {
    pub fn settings(&self) -> mbl_core::inference::GibbsSettings {
        mbl_core::inference::GibbsSettings {
            chains: self.chains,
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            tau_max: self.tau_max,
            seed: self.seed,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    pub sites: usize,
    /// Injected offsets in MHz; random offsets of at most `max_offset_mhz`
    /// when absent.
    pub offsets_mhz: Option<Vec<f64>>,
    pub max_offset_mhz: f64,
    pub rounds: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        CalibrationSection {
            sites: 12,
            offsets_mhz: None,
            max_offset_mhz: 15.4,
            rounds: 1,
            noise_sigma: 0.0,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        if cfg.schema_version != SCHEMA_VERSION {
            bail!(
                "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
                cfg.schema_version
            );
        }
        cfg.plan()?;
        cfg.noise_spec()?;
        Ok(cfg)
    }

    pub fn device_default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            model: Default::default(),
            plan: Default::default(),
            noise: Default::default(),
            solver: Default::default(),
            analysis: Default::default(),
            inference: Default::default(),
            calibration: Default::default(),
            output: Default::default(),
        }
    }

    pub fn plan(&self) -> Result<RunPlan> {
        let sites = self.model.sites;
        let states = match &self.plan.initial_states {
            Some(s) => s.clone(),
            None if sites == 12 => device_initial_states(),
            None => bail!("plan.initial_states is required unless model.sites = 12"),
        };
        let readout = if self.noise.readout_error {
            Some(match &self.noise.readout {
                Some(r) => r.iter().map(|&[a, b]| (a, b)).collect(),
                None => {
                    if sites > device::F00.len() {
                        bail!("device readout table covers only {} sites", device::F00.len());
                    }
                    device::readout_fidelities(sites)
                }
            })
        } else {
            None
        };
        let w = &self.plan.eq_window;
        let plan = RunPlan {
            initial_states: states,
            disorder_grid: self.plan.disorder_grid.clone(),
            realizations: self.plan.realizations,
            eq_times: evenly_spaced(w.start, w.end, w.points),
            record_times: self.plan.record_times.clone(),
            shots: self.plan.shots,
            readout,
            post_select: self.plan.post_select,
            mode: self.plan.mode,
            block: self.plan.block,
            master_seed: self.plan.master_seed,
        };
        plan.validate(sites)?;
        Ok(plan)
    }

    pub fn noise_spec(&self) -> Result<Option<NoiseSpec>> {
        if !self.noise.lindblad {
            return Ok(None);
        }
        let sites = self.model.sites;
        let noise = match (&self.noise.t1_us, &self.noise.t2_star_us) {
            (Some(t1), Some(t2)) => NoiseSpec::from_lifetimes_us(t1, t2)?,
            (None, None) => NoiseSpec::device(sites)?,
            _ => bail!("give both noise.t1_us and noise.t2_star_us, or neither"),
        };
        let noise = noise.scaled(self.noise.rate_scale);
        noise.validate(sites)?;
        Ok(Some(noise))
    }

    /// SHA-256 of the resolved configuration without the output section.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSection::default();
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
