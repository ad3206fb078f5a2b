use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::Subcommand;
use serde::Serialize;

use mbl_core::calibration::{self, CalibrationReport};
use mbl_core::ensemble::{parse_header, EnsembleTable, Provenance, Quantity};
use mbl_core::inference::{gibbs_run, summarize, EstimateReport};
use mbl_core::protocol::Experiment;
use mbl_core::statistics::{
    average_over_states, disorder_curve, find_peak, fit_table, peak_table, DisorderCurve, PeakTable,
};
use mbl_core::units;

use crate::config::RunConfig;
use crate::output::{ensure_dir, fmt, out_dir, write_csv, write_json};
use crate::{Command, EXIT_COMPUTE, EXIT_CONFIG, EXIT_UNCONVERGED};

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

type Outcome = std::result::Result<(), Failure>;

trait Code<T> {
    fn code(self, code: u8) -> std::result::Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Code<T> for std::result::Result<T, E> {
    fn code(self, code: u8) -> std::result::Result<T, Failure> {
        self.map_err(|e| Failure {
            code,
            error: e.into(),
        })
    }
}

#[derive(Subcommand, Debug)]
pub enum Conversion {
    /// Frequency in MHz (divided by 2 pi) to units of J1.
    MhzToJ1 { value: f64 },
    /// Energy in units of J1 to MHz.
    J1ToMhz { value: f64 },
    /// Time in ns to dimensionless J1 t.
    NsToJ1t { value: f64 },
    /// Dimensionless J1 t to ns.
    J1tToNs { value: f64 },
    /// Lifetime in microseconds to a rate in units of J1.
    LifetimeToRate { value: f64 },
}

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Sweep { config, out, seed } => sweep(&config, out, seed),
        Command::Analyze {
            table,
            config,
            ignore_hash,
            out,
        } => analyze(&table, config.as_deref(), ignore_hash, out),
        Command::Estimate {
            peaks,
            config,
            out,
            seed,
            allow_unconverged,
        } => estimate(&peaks, config.as_deref(), out, seed, allow_unconverged),
        Command::Calibrate {
            config,
            out,
            seed,
            allow_unconverged,
        } => calibrate(config.as_deref(), out, seed, allow_unconverged),
        Command::Units { conversion } => {
            let v = match conversion {
                Conversion::MhzToJ1 { value } => units::mhz_to_j1(value),
                Conversion::J1ToMhz { value } => units::j1_to_mhz(value),
                Conversion::NsToJ1t { value } => units::ns_to_j1t(value),
                Conversion::J1tToNs { value } => units::j1t_to_ns(value),
                Conversion::LifetimeToRate { value } => units::lifetime_us_to_rate_j1(value),
            };
            println!("{v}");
            Ok(())
        }
    }
}

fn load_config(path: Option<&Path>) -> std::result::Result<RunConfig, Failure> {
    match path {
        Some(p) => RunConfig::load(p).code(EXIT_CONFIG),
        None => Ok(RunConfig::device_default()),
    }
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    config_hash: String,
    master_seed: u64,
    threads: usize,
    wall_seconds: f64,
    cells: usize,
    missing: usize,
    config: RunConfig,
}

fn sweep(config: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Outcome {
    let mut cfg = RunConfig::load(config).code(EXIT_CONFIG)?;
    if let Some(s) = seed {
        cfg.plan.master_seed = s;
    }
    let dir = out_dir(out, cfg.output.dir.clone(), "out");
    let spec = cfg.model.spec().code(EXIT_CONFIG)?;
    let plan = cfg.plan().code(EXIT_CONFIG)?;
    let noise = cfg.noise_spec().code(EXIT_CONFIG)?;
    let experiment = Experiment::new(spec, noise, plan, cfg.solver).code(EXIT_CONFIG)?;
    ensure_dir(&dir).code(EXIT_CONFIG)?;

    let total = experiment.plan.cell_count();
    let started = Instant::now();
    let step = (total / 100).max(1);
    let progress = |done: usize| {
        if done.is_multiple_of(step) || done == total {
            eprintln!(
                "sweep: {done}/{total} evolutions, {:.0} s elapsed",
                started.elapsed().as_secs_f64()
            );
        }
    };
    let provenance = Provenance {
        config_hash: cfg.hash(),
        master_seed: cfg.plan.master_seed,
    };
    let table = experiment.run_sweep(provenance, Some(&progress)).code(EXIT_COMPUTE)?;
    let table_path = dir.join("table.csv");
    let mut bytes = Vec::new();
    table.write_csv(&mut bytes).code(EXIT_COMPUTE)?;
    fs::write(&table_path, bytes)
        .with_context(|| format!("writing {}", table_path.display()))
        .code(EXIT_COMPUTE)?;
    let missing = table.missing();
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            tool: "mbl",
            version: env!("CARGO_PKG_VERSION"),
            config_hash: cfg.hash(),
            master_seed: cfg.plan.master_seed,
            threads: rayon::current_num_threads(),
            wall_seconds: started.elapsed().as_secs_f64(),
            cells: table.len(),
            missing,
            config: cfg,
        },
    )
    .code(EXIT_COMPUTE)?;
    eprintln!("sweep: wrote {} ({} cells, {missing} missing)", table_path.display(), table.len());
    if missing > 0 {
        let example = table.cells().find(|c| c.value.is_none()).map(|c| c.note.clone());
        return Err(Failure {
            code: EXIT_COMPUTE,
            error: anyhow!(
                "{missing} cells failed; outputs kept. First failure: {}",
                example.unwrap_or_default()
            ),
        });
    }
    Ok(())
}

pub fn read_table(path: &Path) -> anyhow::Result<EnsembleTable> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    EnsembleTable::read_csv(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

#[derive(Serialize)]
struct CurveSet {
    h: Vec<f64>,
    per_state: BTreeMap<String, DisorderCurve>,
    average: DisorderCurve,
    peak: Option<f64>,
}

#[derive(Serialize)]
struct DistributionEntry {
    h: f64,
    grid: Vec<f64>,
    density: Vec<f64>,
    histogram_edges: Vec<f64>,
    histogram_counts: Vec<usize>,
    interquartile_range: f64,
    bandwidth: f64,
}

#[derive(Serialize)]
struct Figures {
    config_hash: String,
    master_seed: u64,
    min_realizations: usize,
    curves: BTreeMap<String, CurveSet>,
    distributions: BTreeMap<String, Vec<DistributionEntry>>,
    peaks: PeakTable,
    peak_summary: BTreeMap<String, Option<(f64, f64)>>,
}

fn analyze(table_path: &Path, config: Option<&Path>, ignore_hash: bool, out: Option<PathBuf>) -> Outcome {
    let table = read_table(table_path).code(EXIT_CONFIG)?;
    let cfg = load_config(config)?;
    if config.is_some() && !ignore_hash && cfg.hash() != table.provenance.config_hash {
        return Err(Failure {
            code: EXIT_CONFIG,
            error: anyhow!(
                "table was produced with config hash {} but the config hashes to {} (pass --ignore-hash to override)",
                table.provenance.config_hash,
                cfg.hash()
            ),
        });
    }
    let dir = out_dir(out, cfg.output.dir.clone(), "out");
    ensure_dir(&dir).code(EXIT_CONFIG)?;
    let min_r = cfg.analysis.min_realizations.min(table.realizations()).max(2);
    let hash = table.provenance.config_hash.clone();
    let seed = table.provenance.master_seed;
    let grid = table.h_grid();
    let states = table.states();

    let mut curve_rows = Vec::new();
    let mut curves = BTreeMap::new();
    let mut distributions = BTreeMap::new();
    for q in Quantity::ALL {
        let per: Vec<DisorderCurve> = states
            .iter()
            .map(|&s| disorder_curve(&table, q, s, min_r))
            .collect::<Result<_, _>>()
            .code(EXIT_COMPUTE)?;
        let avg = average_over_states(&per).code(EXIT_COMPUTE)?;
        let peak = find_peak(&avg).ok();
        for (label, c) in states
            .iter()
            .map(|s| (format!("{}", s + 1), per[states.iter().position(|x| x == s).unwrap()].clone()))
            .chain(std::iter::once(("average".to_string(), avg.clone())))
        {
            for i in 0..c.len() {
                curve_rows.push(vec![
                    q.to_string(),
                    label.clone(),
                    c.h[i].to_string(),
                    fmt(c.mean[i]),
                    fmt(c.std[i]),
                    c.effective_r[i].to_string(),
                ]);
            }
        }

        let mut wanted: Vec<f64> = cfg.analysis.distribution_h.clone();
        wanted.extend(peak);
        let mut entries = Vec::new();
        let mut done: Vec<usize> = Vec::new();
        for h in wanted {
            let Some(&(hi, hv)) = grid.iter().min_by(|a, b| (a.1 - h).abs().total_cmp(&(b.1 - h).abs())) else {
                continue;
            };
            if done.contains(&hi) {
                continue;
            }
            done.push(hi);
            if let Ok(f) = fit_table(&table, q, hi) {
                entries.push(DistributionEntry {
                    h: hv,
                    interquartile_range: f.interquartile_range(),
                    bandwidth: f.bandwidth,
                    histogram_edges: f.histogram.edges,
                    histogram_counts: f.histogram.counts,
                    grid: f.grid,
                    density: f.density,
                });
            }
        }
        entries.sort_by(|a, b| a.h.total_cmp(&b.h));
        distributions.insert(q.to_string(), entries);
        curves.insert(
            q.to_string(),
            CurveSet {
                h: avg.h.clone(),
                per_state: states
                    .iter()
                    .zip(per)
                    .map(|(s, c)| (format!("{}", s + 1), c))
                    .collect(),
                average: avg,
                peak,
            },
        );
    }
    let peaks = peak_table(&table, min_r).code(EXIT_COMPUTE)?;
    write_csv(
        &dir.join("curves.csv"),
        "mbl-curves",
        &hash,
        seed,
        &["quantity", "state", "h", "mean", "std", "effective_r"],
        &curve_rows,
    )
    .code(EXIT_COMPUTE)?;
    write_peaks(&dir.join("peaks.csv"), &peaks, &hash, seed).code(EXIT_COMPUTE)?;
    let peak_summary = Quantity::ALL
        .iter()
        .map(|&q| (q.to_string(), peaks.summary(q)))
        .collect();
    write_json(
        &dir.join("figures.json"),
        &Figures {
            config_hash: hash,
            master_seed: seed,
            min_realizations: min_r,
            curves,
            distributions,
            peaks,
            peak_summary,
        },
    )
    .code(EXIT_COMPUTE)?;
    eprintln!("analyze: wrote curves.csv, peaks.csv and figures.json to {}", dir.display());
    Ok(())
}

pub fn write_peaks(path: &Path, peaks: &PeakTable, hash: &str, seed: u64) -> anyhow::Result<()> {
    let rows: Vec<Vec<String>> = peaks
        .states
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let mut r = vec![(s + 1).to_string()];
            for q in Quantity::ALL {
                r.push(peaks.row(q)[j].map(|v| v.to_string()).unwrap_or_default());
            }
            r
        })
        .collect();
    write_csv(path, "mbl-peaks", hash, seed, &["state", "C", "S", "D"], &rows)
}

/// Reads a peak table: a provenance line, then `state,C,S,D` rows.
pub fn read_peaks(path: &Path) -> anyhow::Result<(Provenance, PeakTable)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let provenance = parse_header(lines.next().unwrap_or_default())?;
    let header = lines.next().unwrap_or_default();
    if header.trim() != "state,C,S,D" {
        bail!("peak table header must be state,C,S,D");
    }
    let mut states = Vec::new();
    let mut peaks = vec![Vec::new(); 3];
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            bail!("peak row {} has {} fields", n + 1, f.len());
        }
        let s: usize = f[0].parse().with_context(|| format!("peak row {}: state", n + 1))?;
        if s == 0 {
            bail!("peak row {}: states are numbered from 1", n + 1);
        }
        states.push(s - 1);
        for q in 0..3 {
            peaks[q].push(if f[q + 1].is_empty() {
                None
            } else {
                Some(f[q + 1].parse::<f64>().with_context(|| format!("peak row {}", n + 1))?)
            });
        }
    }
    Ok((provenance, PeakTable { states, peaks }))
}

#[derive(Serialize)]
struct EstimateOutput<'a> {
    input: String,
    input_config_hash: String,
    groups: Vec<&'static str>,
    states_used: usize,
    report: &'a EstimateReport,
}

fn estimate(peaks_path: &Path, config: Option<&Path>, out: Option<PathBuf>, seed: Option<u64>, allow: bool) -> Outcome {
    let cfg = load_config(config)?;
    let (provenance, peaks) = read_peaks(peaks_path).code(EXIT_CONFIG)?;
    let y = peaks.complete_rows();
    if y[0].is_empty() {
        return Err(Failure {
            code: EXIT_CONFIG,
            error: anyhow!("no state has peaks for all three quantities"),
        });
    }
    let mut settings = cfg.inference.settings();
    if let Some(s) = seed {
        settings.seed = s;
    }
    let dir = out_dir(out, cfg.output.dir.clone(), "out");
    ensure_dir(&dir).code(EXIT_CONFIG)?;
    let samples = gibbs_run(&y, &settings).code(EXIT_COMPUTE)?;
    let report = summarize(&samples).code(EXIT_COMPUTE)?;

    let mut rows = Vec::new();
    for (c, chain) in samples.chains.iter().enumerate() {
        for i in 0..chain.mu.len() {
            let mut r = vec![
                (c + 1).to_string(),
                i.to_string(),
                chain.mu[i].to_string(),
                chain.tau[i].to_string(),
                chain.delta[i].to_string(),
            ];
            r.extend(chain.theta.iter().map(|t| t[i].to_string()));
            rows.push(r);
        }
    }
    let hash = cfg.hash();
    let mut header: Vec<String> = ["chain", "draw", "mu", "tau", "delta"].map(String::from).to_vec();
    header.extend((1..=y.len()).map(|j| format!("theta_{j}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        &dir.join("posterior.csv"),
        "mbl-posterior",
        &hash,
        settings.seed,
        &header,
        &rows,
    )
    .code(EXIT_COMPUTE)?;
    write_json(
        &dir.join("estimate.json"),
        &EstimateOutput {
            input: peaks_path.display().to_string(),
            input_config_hash: provenance.config_hash,
            groups: vec!["C", "S", "D"],
            states_used: y[0].len(),
            report: &report,
        },
    )
    .code(EXIT_COMPUTE)?;
    for p in &report.parameters {
        println!(
            "{:<8} mode {:>8.4}  mean {:>8.4}  sd {:>7.4}  95% [{:.4}, {:.4}]  rhat {:.4}",
            p.name, p.mode, p.mean, p.std, p.lower_95, p.upper_95, p.rhat
        );
    }
    if !report.converged && !allow {
        return Err(Failure {
            code: EXIT_UNCONVERGED,
            error: anyhow!("chains did not converge (R-hat >= 1.01); pass --allow-unconverged to accept"),
        });
    }
    Ok(())
}

fn calibrate(config: Option<&Path>, out: Option<PathBuf>, seed: Option<u64>, allow: bool) -> Outcome {
    let cfg = load_config(config)?;
    let mut c = cfg.calibration.clone();
    if let Some(s) = seed {
        c.seed = s;
    }
    let dir = out_dir(out, cfg.output.dir.clone(), "out");
    ensure_dir(&dir).code(EXIT_CONFIG)?;
    let spec = mbl_core::hamiltonian::ModelSpec::device_default(c.sites);
    let truth = match &c.offsets_mhz {
        Some(o) if o.len() == c.sites => o.clone(),
        Some(o) => {
            return Err(Failure {
                code: EXIT_CONFIG,
                error: anyhow!("calibration.offsets_mhz lists {} sites, expected {}", o.len(), c.sites),
            })
        }
        None => calibration::random_offsets_mhz(c.sites, c.max_offset_mhz, c.seed),
    };
    let plan = calibration::StaircasePlan::standard(c.sites);
    let report: CalibrationReport =
        calibration::calibrate_rounds(&spec, &truth, &plan, c.rounds.max(1), c.noise_sigma, c.seed).code(EXIT_COMPUTE)?;
    let hash = cfg.hash();
    let rows: Vec<Vec<String>> = (0..c.sites)
        .map(|l| {
            let mut r = vec![(l + 1).to_string(), truth[l].to_string()];
            for round in &report.rounds {
                r.push(round.estimate_mhz[l].to_string());
                r.push(round.residual_mhz[l].to_string());
            }
            r
        })
        .collect();
    let mut header = vec!["site".to_string(), "injected_mhz".to_string()];
    for i in 0..report.rounds.len() {
        header.push(format!("round{}_estimate_mhz", i + 1));
        header.push(format!("round{}_residual_mhz", i + 1));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&dir.join("calibration.csv"), "mbl-calibration", &hash, c.seed, &header_refs, &rows).code(EXIT_COMPUTE)?;
    write_json(&dir.join("calibration.json"), &report).code(EXIT_COMPUTE)?;
    for (i, r) in report.rounds.iter().enumerate() {
        println!(
            "round {}: max |residual| {:.4} MHz (from {:.4} MHz), cost {:.3e}, {} iterations{}",
            i + 1,
            r.max_residual_mhz,
            r.max_offset_before_mhz,
            r.cost,
            r.iterations,
            if r.converged { "" } else { " (not converged)" }
        );
    }
    if report.rounds.iter().any(|r| !r.converged) && !allow {
        return Err(Failure {
            code: EXIT_UNCONVERGED,
            error: anyhow!("Nelder-Mead hit its iteration limit; pass --allow-unconverged to accept"),
        });
    }
    Ok(())
}
