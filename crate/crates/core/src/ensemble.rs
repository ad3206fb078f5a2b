//! Equilibrium values of every sweep cell, keyed by quantity, initial state,
//! realization and disorder strength, with a CSV representation.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three diagnostics of a quench.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Quantity {
    /// Auto-correlation.
    C,
    /// Half-chain number entropy.
    S,
    /// Hamming distance.
    D,
}

impl Quantity {
    pub const ALL: [Quantity; 3] = [Quantity::C, Quantity::S, Quantity::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Quantity::C => "C",
            Quantity::S => "S",
            Quantity::D => "D",
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Quantity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "C" | "c" => Ok(Quantity::C),
            "S" | "s" => Ok(Quantity::S),
            "D" | "d" => Ok(Quantity::D),
            other => Err(Error::param(format!("unknown quantity {other:?}"))),
        }
    }
}

/// Key of one cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub quantity: Quantity,
    pub state: usize,
    pub realization: usize,
    pub h_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub key: CellKey,
    pub h: f64,
    /// Equilibrium value, `None` when the cell failed.
    pub value: Option<f64>,
    /// Values at each equilibrium time.
    pub per_time: Vec<f64>,
    /// Smallest post-selection retention over the record times.
    pub retention: f64,
    /// Seed of the disorder realization.
    pub seed: u64,
    /// Largest truncation leakage seen, when the state was available.
    pub leakage: Option<f64>,
    /// Failure reason for missing cells.
    pub note: String,
}

/// Provenance attached to a table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub master_seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnsembleTable {
    pub provenance: Provenance,
    cells: BTreeMap<CellKey, Cell>,
}

const MAGIC: &str = "# mbl-ensemble v1";
const COLUMNS: [&str; 11] = [
    "quantity",
    "state",
    "realization",
    "h_index",
    "h",
    "q_eq",
    "per_time",
    "retention",
    "seed",
    "leakage",
    "note",
];

impl EnsembleTable {
    pub fn new(provenance: Provenance) -> Self {
        EnsembleTable {
            provenance,
            cells: BTreeMap::new(),
        }
    }

    /// Inserts a cell; a second cell with the same key is an error.
    pub fn insert(&mut self, cell: Cell) -> Result<()> {
        if self.cells.contains_key(&cell.key) {
            return Err(Error::param(format!("duplicate cell {:?}", cell.key)));
        }
        self.cells.insert(cell.key, cell);
        Ok(())
    }

    pub fn get(&self, key: &CellKey) -> Option<&Cell> {
        self.cells.get(key)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> impl Iterator<Item = &Cell> {
        self.cells.values()
    }

    pub fn missing(&self) -> usize {
        self.cells.values().filter(|c| c.value.is_none()).count()
    }

    /// Distinct state indices in increasing order.
    pub fn states(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.cells.keys().map(|k| k.state).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// `(h_index, h)` pairs in increasing index order.
    pub fn h_grid(&self) -> Vec<(usize, f64)> {
        let mut g: BTreeMap<usize, f64> = BTreeMap::new();
        for c in self.cells.values() {
            g.entry(c.key.h_index).or_insert(c.h);
        }
        g.into_iter().collect()
    }

    /// Largest realization index plus one.
    pub fn realizations(&self) -> usize {
        self.cells.keys().map(|k| k.realization + 1).max().unwrap_or(0)
    }

    /// Available values of one quantity and state at one disorder strength,
    /// in realization order.
    pub fn values(&self, quantity: Quantity, state: usize, h_index: usize) -> Vec<f64> {
        let lo = CellKey {
            quantity,
            state,
            realization: 0,
            h_index: 0,
        };
        self.cells
            .range(lo..)
            .take_while(|(k, _)| k.quantity == quantity && k.state == state)
            .filter(|(k, _)| k.h_index == h_index)
            .filter_map(|(_, c)| c.value)
            .collect()
    }

    /// Restricts the table to realizations `0..r`.
    pub fn truncated(&self, r: usize) -> EnsembleTable {
        EnsembleTable {
            provenance: self.provenance.clone(),
            cells: self
                .cells
                .iter()
                .filter(|(k, _)| k.realization < r)
                .map(|(k, c)| (*k, c.clone()))
                .collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "{MAGIC} config_hash={} master_seed={}",
            self.provenance.config_hash, self.provenance.master_seed
        )
        .map_err(io_error)?;
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(COLUMNS).map_err(csv_error)?;
        for c in self.cells.values() {
            let per_time: Vec<String> = c.per_time.iter().map(|v| v.to_string()).collect();
            w.write_record([
                c.key.quantity.symbol().to_string(),
                c.key.state.to_string(),
                c.key.realization.to_string(),
                c.key.h_index.to_string(),
                c.h.to_string(),
                c.value.map(|v| v.to_string()).unwrap_or_default(),
                per_time.join(";"),
                c.retention.to_string(),
                c.seed.to_string(),
                c.leakage.map(|v| v.to_string()).unwrap_or_default(),
                c.note.clone(),
            ])
            .map_err(csv_error)?;
        }
        w.flush().map_err(io_error)?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(mut input: R) -> Result<Self> {
        let mut first = String::new();
        input.read_line(&mut first).map_err(io_error)?;
        let provenance = parse_header(&first)?;
        let mut reader = csv::ReaderBuilder::new().from_reader(input);
        let headers = reader.headers().map_err(csv_error)?.clone();
        if headers.iter().ne(COLUMNS.iter().copied()) {
            return Err(Error::param(format!("unexpected table columns {headers:?}")));
        }
        let mut table = EnsembleTable::new(provenance);
        for (line, record) in reader.records().enumerate() {
            let r = record.map_err(csv_error)?;
            let bad = |what: &str| Error::param(format!("row {}: bad {what}", line + 1));
            let num = |i: usize, what: &str| -> Result<f64> { r[i].parse().map_err(|_| bad(what)) };
            let idx = |i: usize, what: &str| -> Result<usize> { r[i].parse().map_err(|_| bad(what)) };
            let opt = |i: usize, what: &str| -> Result<Option<f64>> {
                if r[i].is_empty() {
                    Ok(None)
                } else {
                    r[i].parse().map(Some).map_err(|_| bad(what))
                }
            };
            let per_time = if r[6].is_empty() {
                Vec::new()
            } else {
                r[6].split(';')
                    .map(|v| v.parse::<f64>().map_err(|_| bad("per_time")))
                    .collect::<Result<_>>()?
            };
            table.insert(Cell {
                key: CellKey {
                    quantity: r[0].parse()?,
                    state: idx(1, "state")?,
                    realization: idx(2, "realization")?,
                    h_index: idx(3, "h_index")?,
                },
                h: num(4, "h")?,
                value: opt(5, "q_eq")?,
                per_time,
                retention: num(7, "retention")?,
                seed: r[8].parse().map_err(|_| bad("seed"))?,
                leakage: opt(9, "leakage")?,
                note: r[10].to_string(),
            })?;
        }
        Ok(table)
    }
}

/// Parses `# <kind> v1 config_hash=... master_seed=...`.
pub fn parse_header(line: &str) -> Result<Provenance> {
    let line = line.trim();
    if !line.starts_with('#') {
        return Err(Error::param("missing provenance header line"));
    }
    let mut p = Provenance::default();
    let mut seen = (false, false);
    for token in line.split_whitespace() {
        if let Some(v) = token.strip_prefix("config_hash=") {
            p.config_hash = v.to_string();
            seen.0 = true;
        } else if let Some(v) = token.strip_prefix("master_seed=") {
            p.master_seed = v
                .parse()
                .map_err(|_| Error::param(format!("bad master seed {v:?}")))?;
            seen.1 = true;
        }
    }
    if seen != (true, true) {
        return Err(Error::param("provenance header lacks config_hash or master_seed"));
    }
    Ok(p)
}

fn io_error(e: std::io::Error) -> Error {
    Error::param(format!("i/o error: {e}"))
}

fn csv_error(e: csv::Error) -> Error {
    Error::param(format!("csv error: {e}"))
}
