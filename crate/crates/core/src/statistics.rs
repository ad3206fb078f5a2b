//! Disorder-ensemble statistics: per-state mean and spread curves, their
//! average over initial states, kernel density fits and peak extraction.

use serde::{Deserialize, Serialize};

use crate::ensemble::{EnsembleTable, Quantity};
use crate::error::{Error, Result};

/// Curve points backed by fewer realizations are dropped.
pub const DEFAULT_MIN_REALIZATIONS: usize = 10;

/// Density grid resolution.
pub const GRID_POINTS: usize = 512;

/// Mean and population standard deviation, `sqrt(sum (x - mean)^2 / n)`.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisorderCurve {
    pub h: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub effective_r: Vec<usize>,
    /// False where too few realizations survived; mean and std are NaN there.
    pub usable: Vec<bool>,
}

impl DisorderCurve {
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }
}

/// Mean and spread over realizations at each disorder strength for one
/// quantity and initial state.
pub fn disorder_curve(
    table: &EnsembleTable,
    quantity: Quantity,
    state: usize,
    min_realizations: usize,
) -> Result<DisorderCurve> {
    let grid = table.h_grid();
    if grid.is_empty() {
        return Err(Error::param("table is empty"));
    }
    let threshold = min_realizations.max(2);
    let mut curve = DisorderCurve {
        h: Vec::with_capacity(grid.len()),
        mean: Vec::with_capacity(grid.len()),
        std: Vec::with_capacity(grid.len()),
        effective_r: Vec::with_capacity(grid.len()),
        usable: Vec::with_capacity(grid.len()),
    };
    for (hi, h) in grid {
        let v = table.values(quantity, state, hi);
        let ok = v.len() >= threshold;
        let (m, s) = if ok { mean_and_std(&v) } else { (f64::NAN, f64::NAN) };
        curve.h.push(h);
        curve.mean.push(m);
        curve.std.push(s);
        curve.effective_r.push(v.len());
        curve.usable.push(ok);
    }
    Ok(curve)
}

/// Pointwise average of means and of standard deviations.
pub fn average_over_states(curves: &[DisorderCurve]) -> Result<DisorderCurve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::param("no curves to average"))?;
    if curves.iter().any(|c| c.h != first.h) {
        return Err(Error::param("curves have different disorder grids"));
    }
    let n = curves.len() as f64;
    let k = first.len();
    let mut out = DisorderCurve {
        h: first.h.clone(),
        mean: vec![0.0; k],
        std: vec![0.0; k],
        effective_r: vec![usize::MAX; k],
        usable: vec![true; k],
    };
    for c in curves {
        for i in 0..k {
            out.mean[i] += c.mean[i] / n;
            out.std[i] += c.std[i] / n;
            out.effective_r[i] = out.effective_r[i].min(c.effective_r[i]);
            out.usable[i] &= c.usable[i];
        }
    }
    for i in 0..k {
        if !out.usable[i] {
            out.mean[i] = f64::NAN;
            out.std[i] = f64::NAN;
        }
    }
    Ok(out)
}

/// Disorder strength of the largest standard deviation; ties go to the
/// smaller `h`.
pub fn find_peak(curve: &DisorderCurve) -> Result<f64> {
    let points: Vec<(f64, f64)> = curve
        .h
        .iter()
        .zip(&curve.std)
        .zip(&curve.usable)
        .filter(|(_, &u)| u)
        .map(|((&h, &s), _)| (h, s))
        .collect();
    if points.len() < 3 {
        return Err(Error::Estimation(format!(
            "peak search needs 3 usable points, curve has {}",
            points.len()
        )));
    }
    let mut best = points[0];
    for &(h, s) in &points[1..] {
        if s > best.1 || (s == best.1 && h < best.0) {
            best = (h, s);
        }
    }
    if points.iter().all(|&(_, s)| s == best.1) {
        return Err(Error::DegeneratePeak);
    }
    Ok(best.0)
}

/// Transition points per quantity and initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakTable {
    pub states: Vec<usize>,
    /// `peaks[q][j]` for quantity `q` (C, S, D) and state `states[j]`.
    pub peaks: Vec<Vec<Option<f64>>>,
}

impl PeakTable {
    pub fn row(&self, q: Quantity) -> &[Option<f64>] {
        &self.peaks[q.index()]
    }

    /// Mean and population std of the available entries of one quantity.
    pub fn summary(&self, q: Quantity) -> Option<(f64, f64)> {
        let v: Vec<f64> = self.row(q).iter().flatten().copied().collect();
        (!v.is_empty()).then(|| mean_and_std(&v))
    }

    /// Observation matrix with states that miss any entry dropped.
    pub fn complete_rows(&self) -> Vec<Vec<f64>> {
        let keep: Vec<usize> = (0..self.states.len())
            .filter(|&j| self.peaks.iter().all(|row| row[j].is_some()))
            .collect();
        self.peaks
            .iter()
            .map(|row| keep.iter().map(|&j| row[j].unwrap()).collect())
            .collect()
    }
}

pub fn peak_table(table: &EnsembleTable, min_realizations: usize) -> Result<PeakTable> {
    let states = table.states();
    let mut peaks: Vec<Vec<Option<f64>>> = (0..3).map(|_| Vec::with_capacity(states.len())).collect();
    for q in Quantity::ALL {
        for &s in &states {
            let curve = disorder_curve(table, q, s, min_realizations)?;
            peaks[q.index()].push(find_peak(&curve).ok());
        }
    }
    Ok(PeakTable { states, peaks })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedDistribution {
    pub samples: Vec<f64>,
    pub histogram: Histogram,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    /// Kernel bandwidth, or the mean bandwidth of a state average.
    pub bandwidth: f64,
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule with a floor of 1% of the sample range.
pub fn bandwidth(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let (mean, sd) = mean_and_std(samples);
    let sd = sd * (n / (n - 1.0).max(1.0)).sqrt();
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let silverman = 0.9 * spread * n.powf(-0.2);
    let range = sorted[sorted.len() - 1] - sorted[0];
    let floor = if range > 0.0 {
        0.01 * range
    } else {
        1e-3 * mean.abs().max(1.0)
    };
    silverman.max(floor)
}

fn trapezoid(grid: &[f64], f: &[f64]) -> f64 {
    grid.windows(2)
        .zip(f.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// Gaussian kernel density on `grid`, renormalized to unit trapezoid area.
pub fn kde(samples: &[f64], bw: f64, grid: &[f64]) -> Vec<f64> {
    let norm = 1.0 / (samples.len() as f64 * bw * (2.0 * std::f64::consts::PI).sqrt());
    let mut d: Vec<f64> = grid
        .iter()
        .map(|&x| {
            samples
                .iter()
                .map(|&s| (-0.5 * ((x - s) / bw).powi(2)).exp())
                .sum::<f64>()
                * norm
        })
        .collect();
    let area = trapezoid(grid, &d);
    if area > 0.0 {
        d.iter_mut().for_each(|v| *v /= area);
    }
    d
}

fn grid_around(lo: f64, hi: f64, pad: f64, points: usize) -> Vec<f64> {
    let (a, b) = (lo - pad, hi + pad);
    (0..points)
        .map(|i| a + (b - a) * i as f64 / (points - 1) as f64)
        .collect()
}

fn histogram(samples: &[f64]) -> Histogram {
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bins = if hi > lo {
        (samples.len() as f64).sqrt().ceil() as usize
    } else {
        1
    };
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0; bins];
    for &s in samples {
        let i = (((s - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    Histogram { edges, counts }
}

pub const MIN_FIT_SAMPLES: usize = 10;

/// Histogram and kernel density of one sample set.
pub fn fit_distribution(samples: &[f64]) -> Result<FittedDistribution> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(Error::Estimation(format!(
            "distribution fit needs {MIN_FIT_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::param("samples must be finite"));
    }
    let bw = bandwidth(samples);
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let grid = grid_around(lo, hi, 4.0 * bw, GRID_POINTS);
    let density = kde(samples, bw, &grid);
    Ok(FittedDistribution {
        samples: samples.to_vec(),
        histogram: histogram(samples),
        grid,
        density,
        bandwidth: bw,
    })
}

/// Mean of per-state densities on a common grid.
pub fn fit_state_averaged(per_state: &[Vec<f64>]) -> Result<FittedDistribution> {
    if per_state.is_empty() {
        return Err(Error::param("no states to average"));
    }
    for s in per_state {
        if s.len() < MIN_FIT_SAMPLES {
            return Err(Error::Estimation(format!(
                "distribution fit needs {MIN_FIT_SAMPLES} samples per state, got {}",
                s.len()
            )));
        }
    }
    let bws: Vec<f64> = per_state.iter().map(|s| bandwidth(s)).collect();
    let all: Vec<f64> = per_state.iter().flatten().copied().collect();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let max_bw = bws.iter().copied().fold(0.0, f64::max);
    let grid = grid_around(lo, hi, 4.0 * max_bw, GRID_POINTS);
    let mut density = vec![0.0; grid.len()];
    for (s, &bw) in per_state.iter().zip(&bws) {
        for (d, v) in density.iter_mut().zip(kde(s, bw, &grid)) {
            *d += v / per_state.len() as f64;
        }
    }
    Ok(FittedDistribution {
        histogram: histogram(&all),
        samples: all,
        grid,
        density,
        bandwidth: bws.iter().sum::<f64>() / bws.len() as f64,
    })
}

/// State-averaged fit of one quantity at one disorder strength.
pub fn fit_table(table: &EnsembleTable, quantity: Quantity, h_index: usize) -> Result<FittedDistribution> {
    let per_state: Vec<Vec<f64>> = table
        .states()
        .into_iter()
        .map(|s| table.values(quantity, s, h_index))
        .collect();
    fit_state_averaged(&per_state)
}

impl FittedDistribution {
    /// Quantile of the fitted density by its trapezoid CDF.
    pub fn quantile(&self, p: f64) -> f64 {
        let mut cdf = vec![0.0; self.grid.len()];
        for i in 1..self.grid.len() {
            cdf[i] = cdf[i - 1]
                + 0.5 * (self.grid[i] - self.grid[i - 1]) * (self.density[i] + self.density[i - 1]);
        }
        let total = cdf[cdf.len() - 1];
        let target = p * total;
        let i = cdf.partition_point(|&c| c < target).clamp(1, cdf.len() - 1);
        let (c0, c1) = (cdf[i - 1], cdf[i]);
        let frac = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.0 };
        self.grid[i - 1] + frac * (self.grid[i] - self.grid[i - 1])
    }

    pub fn interquartile_range(&self) -> f64 {
        self.quantile(0.75) - self.quantile(0.25)
    }

    pub fn mean(&self) -> f64 {
        let xf: Vec<f64> = self.grid.iter().zip(&self.density).map(|(x, d)| x * d).collect();
        trapezoid(&self.grid, &xf)
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }

    /// Grid point of the highest density.
    pub fn mode(&self) -> f64 {
        let mut best = 0;
        for (i, &d) in self.density.iter().enumerate() {
            if d > self.density[best] {
                best = i;
            }
        }
        self.grid[best]
    }
}
