use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mbl_cli::commands::{read_peaks, read_table};
use mbl_cli::config::RunConfig;
use mbl_core::ensemble::{Cell, CellKey, EnsembleTable, Provenance, Quantity};

const TINY: &str = r#"
schema_version = 1

[model]
sites = 4

[plan]
initial_states = ["0110", "1010"]
disorder_grid = [1.0, 3.0, 6.0]
realizations = 2
master_seed = 5

[inference]
iterations = 4000
burn_in = 2000
thin = 2
"#;

fn mbl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mbl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn tiny_sweep_counts_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.toml", TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = mbl(&["--jobs", "2", "sweep", "--config", s(&cfg), "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ta = fs::read(a.join("table.csv")).unwrap();
    assert_eq!(ta, fs::read(b.join("table.csv")).unwrap());

    let table = read_table(&a.join("table.csv")).unwrap();
    assert_eq!(table.len(), 3 * 2 * 2 * 3);
    for q in Quantity::ALL {
        for state in 0..2 {
            let n = table.cells().filter(|c| c.key.quantity == q && c.key.state == state).count();
            assert_eq!(n, 2 * 3);
        }
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let hash = RunConfig::load(&cfg).unwrap().hash();
    assert_eq!(manifest["config_hash"], hash.as_str());
    assert_eq!(manifest["master_seed"], 5);
    assert_eq!(table.provenance.config_hash, hash);
}

#[test]
fn seed_override_changes_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.toml", TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(mbl(&["sweep", "--config", s(&cfg), "--out", s(&a)]).status.success());
    assert!(mbl(&["sweep", "--config", s(&cfg), "--out", s(&b), "--seed", "6"]).status.success());
    let ta = read_table(&a.join("table.csv")).unwrap();
    let tb = read_table(&b.join("table.csv")).unwrap();
    assert_eq!(tb.provenance.master_seed, 6);
    assert_ne!(ta.values(Quantity::C, 0, 1), tb.values(Quantity::C, 0, 1));
}

#[test]
fn tiny_pipeline_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.toml", &TINY.replace("realizations = 2", "realizations = 3"));
    let out = dir.path().join("out");
    assert!(mbl(&["sweep", "--config", s(&cfg), "--out", s(&out)]).status.success());
    let o = mbl(&["analyze", s(&out.join("table.csv")), "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["curves.csv", "peaks.csv", "figures.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let fig: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("figures.json")).unwrap()).unwrap();
    for q in ["C", "S", "D"] {
        assert_eq!(fig["curves"][q]["average"]["h"].as_array().unwrap().len(), 3);
        assert_eq!(fig["curves"][q]["per_state"].as_object().unwrap().len(), 2);
    }
    let (prov, peaks) = read_peaks(&out.join("peaks.csv")).unwrap();
    assert_eq!(prov.config_hash, RunConfig::load(&cfg).unwrap().hash());
    assert_eq!(peaks.states, vec![0, 1]);

    let o = mbl(&["estimate", s(&out.join("peaks.csv")), "--config", s(&cfg), "--out", s(&out), "--allow-unconverged"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("estimate.json").exists() && out.join("posterior.csv").exists());
}

#[test]
fn analyze_refuses_a_foreign_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.toml", TINY);
    let other = write(dir.path(), "other.toml", &TINY.replace("master_seed = 5", "master_seed = 9"));
    let out = dir.path().join("out");
    assert!(mbl(&["sweep", "--config", s(&cfg), "--out", s(&out)]).status.success());
    let table = out.join("table.csv");
    let o = mbl(&["analyze", s(&table), "--config", s(&other), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hash"));
    let o = mbl(&["analyze", s(&table), "--config", s(&other), "--ignore-hash", "--out", s(&out)]);
    assert!(o.status.success());
}

#[test]
fn bad_inputs_exit_with_config_status() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", &format!("{TINY}\n[plan2]\nx = 1\n"));
    let o = mbl(&["sweep", "--config", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    let o = mbl(&["analyze", s(&dir.path().join("missing.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    let corrupt = write(dir.path(), "corrupt.csv", "# mbl-ensemble v1 config_hash=x master_seed=1\nnot,a,table\n");
    let o = mbl(&["analyze", s(&corrupt)]);
    assert_eq!(o.status.code(), Some(2));
}

/// Every state and h carries values `c + d (-1)^r`, whose mean is `c` and
/// population std is `d` exactly.
#[test]
fn analyze_reproduces_injected_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let mut table = EnsembleTable::new(Provenance {
        config_hash: "synthetic".into(),
        master_seed: 1,
    });
    let grid = [1.0, 2.0, 3.0, 4.0, 5.0];
    let expected = |q: usize, state: usize, k: usize| (0.1 * (q + 1) as f64 + 0.01 * state as f64, 0.05 + 0.01 * k as f64 + 0.002 * state as f64);
    for (qi, q) in Quantity::ALL.into_iter().enumerate() {
        for state in 0..3 {
            for (k, &h) in grid.iter().enumerate() {
                for r in 0..12 {
                    let (c, d) = expected(qi, state, k);
                    let v = c + if r % 2 == 0 { d } else { -d };
                    table
                        .insert(Cell {
                            key: CellKey { quantity: q, state, realization: r, h_index: k },
                            h,
                            value: Some(v),
                            per_time: vec![v],
                            retention: 1.0,
                            seed: 0,
                            leakage: None,
                            note: String::new(),
                        })
                        .unwrap();
                }
            }
        }
    }
    let path = dir.path().join("table.csv");
    let mut bytes = Vec::new();
    table.write_csv(&mut bytes).unwrap();
    fs::write(&path, bytes).unwrap();
    let out = dir.path().join("out");
    let o = mbl(&["analyze", s(&path), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let text = fs::read_to_string(out.join("curves.csv")).unwrap();
    let mut rows = 0;
    for line in text.lines().skip(2) {
        let f: Vec<&str> = line.split(',').collect();
        let qi = Quantity::ALL.iter().position(|q| q.symbol() == f[0]).unwrap();
        let k = grid.iter().position(|&h| h == f[2].parse::<f64>().unwrap()).unwrap();
        let (mean, std): (f64, f64) = (f[3].parse().unwrap(), f[4].parse().unwrap());
        let (c, d) = if f[1] == "average" {
            let per: Vec<(f64, f64)> = (0..3).map(|st| expected(qi, st, k)).collect();
            (per.iter().map(|p| p.0).sum::<f64>() / 3.0, per.iter().map(|p| p.1).sum::<f64>() / 3.0)
        } else {
            expected(qi, f[1].parse::<usize>().unwrap() - 1, k)
        };
        assert!((mean - c).abs() < 1e-12 && (std - d).abs() < 1e-12, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 3 * 4 * grid.len());
    // the spread grows with h, so every state peaks at the last grid point
    let (_, peaks) = read_peaks(&out.join("peaks.csv")).unwrap();
    assert!(peaks.peaks.iter().flatten().all(|p| *p == Some(5.0)));
}

fn estimate_mu(dir: &Path, name: &str, rows: &[[f64; 3]], seed: &str) -> (f64, f64) {
    let mut text = String::from("# mbl-peaks v1 config_hash=test master_seed=0\nstate,C,S,D\n");
    for (i, r) in rows.iter().enumerate() {
        text.push_str(&format!("{},{},{},{}\n", i + 1, r[0], r[1], r[2]));
    }
    let path = write(dir, &format!("{name}.csv"), &text);
    let cfg = write(dir, "inference.toml", "schema_version = 1\n[inference]\niterations = 60000\nburn_in = 20000\nthin = 4\n");
    let out = dir.join(name);
    let o = mbl(&["estimate", s(&path), "--config", s(&cfg), "--out", s(&out), "--seed", seed]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("estimate.json")).unwrap()).unwrap();
    let mu = report["report"]["parameters"]
        .as_array()
        .unwrap()
        .iter()
        .find(|p| p["name"] == "mu")
        .unwrap()
        .clone();
    (mu["mode"].as_f64().unwrap(), mu["mean"].as_f64().unwrap())
}

#[test]
fn estimate_constant_and_permuted_tables() {
    let dir = tempfile::tempdir().unwrap();
    let (mode, _) = estimate_mu(dir.path(), "constant", &[[3.0; 3]; 6], "1");
    assert!((mode - 3.0).abs() < 0.05, "mode {mode}");

    let rows = [[3.5, 2.0, 4.0], [3.0, 2.5, 2.0], [2.5, 2.5, 3.0], [4.0, 4.5, 5.0], [4.5, 2.5, 5.0]];
    let permuted: Vec<[f64; 3]> = rows.iter().map(|r| [r[2], r[0], r[1]]).collect();
    let (_, a) = estimate_mu(dir.path(), "original", &rows, "2");
    let (_, b) = estimate_mu(dir.path(), "permuted", &permuted, "3");
    // posterior mean of mu has sd of a few units; allow Monte Carlo error
    assert!((a - b).abs() < 0.3, "{a} vs {b}");
}

#[test]
fn estimate_flags_unconverged_chains() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "p.csv", "# mbl-peaks v1 config_hash=t master_seed=0\nstate,C,S,D\n1,1,5,9\n2,1.5,5.5,9.5\n");
    let cfg = write(dir.path(), "short.toml", "schema_version = 1\n[inference]\niterations = 30\nburn_in = 10\nthin = 1\n");
    let out = dir.path().join("o");
    let o = mbl(&["estimate", s(&path), "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("estimate.json").exists());
    let o = mbl(&["estimate", s(&path), "--config", s(&cfg), "--out", s(&out), "--allow-unconverged"]);
    assert!(o.status.success());
}

fn calibration_json(dir: &Path, name: &str, config: &str) -> serde_json::Value {
    let cfg = write(dir, &format!("{name}.toml"), config);
    let out = dir.join(name);
    let o = mbl(&["calibrate", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_str(&fs::read_to_string(out.join("calibration.json")).unwrap()).unwrap()
}

#[test]
fn calibrate_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let zero = calibration_json(
        dir.path(),
        "zero",
        "schema_version = 1\n[calibration]\nsites = 5\noffsets_mhz = [0, 0, 0, 0, 0]\n",
    );
    let r = &zero["rounds"][0]["residual_mhz"];
    assert!(r.as_array().unwrap().iter().all(|v| v.as_f64().unwrap().abs() < 1e-3));

    let twelve = calibration_json(dir.path(), "twelve", "schema_version = 1\n[calibration]\nrounds = 2\nseed = 3\n");
    let injected: Vec<f64> = twelve["injected_mhz"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(injected.len(), 12);
    assert!(injected.iter().all(|v| v.abs() <= 15.4));
    let rounds = twelve["rounds"].as_array().unwrap();
    assert!(rounds.last().unwrap()["max_residual_mhz"].as_f64().unwrap() <= 0.5);
    assert!(rounds[0]["max_residual_mhz"].as_f64().unwrap() < rounds[0]["max_offset_before_mhz"].as_f64().unwrap());
}

#[test]
fn units_converter() {
    let o = mbl(&["units", "mhz-to-j1", "11.5"]);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "1");
    let o = mbl(&["units", "j1t-to-ns", "0"]);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "0");
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let device = RunConfig::load(&dir.join("device_default.toml")).unwrap();
    assert_eq!(device.plan().unwrap().cell_count() * 3, 23_400);
    for f in ["desk_n8.toml", "desk_n10_convergence.toml"] {
        let c = RunConfig::load(&dir.join(f)).unwrap();
        c.plan().unwrap();
    }
}
