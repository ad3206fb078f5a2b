use mbl_core::basis::Configuration;
use mbl_core::ensemble::{EnsembleTable, Provenance, Quantity};
use mbl_core::hamiltonian::ModelSpec;
use mbl_core::inference::{gibbs_run, summarize, GibbsSettings};
use mbl_core::protocol::{Experiment, RunPlan, SolverSettings};
use mbl_core::statistics::{average_over_states, disorder_curve, peak_table};

fn six_site_plan(realizations: usize) -> RunPlan {
    RunPlan {
        initial_states: ["011010", "101001", "110100"]
            .iter()
            .map(|s| s.parse::<Configuration>().unwrap())
            .collect(),
        disorder_grid: vec![0.5, 1.5, 3.0, 6.0, 12.0],
        realizations,
        master_seed: 42,
        ..RunPlan::device_default()
    }
}

fn sweep(plan: RunPlan) -> EnsembleTable {
    let exp = Experiment::new(ModelSpec::device_default(6), None, plan, SolverSettings::default()).unwrap();
    exp.run_sweep(Provenance::default(), None).unwrap()
}

#[test]
fn six_site_sweep_to_transition_estimate() {
    let table = sweep(six_site_plan(12));
    assert_eq!(table.len(), 3 * 3 * 12 * 5);
    assert_eq!(table.missing(), 0);
    for c in table.cells() {
        let v = c.value.unwrap();
        match c.key.quantity {
            Quantity::C => assert!(v <= 1.0 + 1e-12),
            Quantity::S => assert!(v >= -1e-12),
            Quantity::D => assert!((-1e-12..=1.0 + 1e-12).contains(&v)),
        }
        assert!(c.leakage.unwrap() >= 0.0);
        assert_eq!(c.retention, 1.0);
    }

    // the initial pattern survives longer as disorder grows
    let curves: Vec<_> = (0..3).map(|s| disorder_curve(&table, Quantity::C, s, 10).unwrap()).collect();
    let avg = average_over_states(&curves).unwrap();
    assert!(avg.mean.windows(2).all(|w| w[0] < w[1]), "{:?}", avg.mean);
    let d: Vec<_> = (0..3).map(|s| disorder_curve(&table, Quantity::D, s, 10).unwrap()).collect();
    let d = average_over_states(&d).unwrap();
    assert!(d.mean[0] > d.mean[4]);

    let peaks = peak_table(&table, 10).unwrap();
    let y = peaks.complete_rows();
    assert_eq!(y[0].len(), 3);
    let settings = GibbsSettings {
        iterations: 20_000,
        burn_in: 10_000,
        thin: 5,
        ..GibbsSettings::default()
    };
    let report = summarize(&gibbs_run(&y, &settings).unwrap()).unwrap();
    let mu = report.get("mu").unwrap();
    assert!(mu.mode > 0.5 && mu.mode < 12.0);
}

#[test]
fn fewer_realizations_are_a_prefix() {
    let full = sweep(six_site_plan(6));
    let short = sweep(six_site_plan(3));
    assert_eq!(full.truncated(3), short);
}
