//! Per-qubit characterization of the 12-site transmon chain: coherence
//! times and readout assignment fidelities.

/// Energy relaxation times T1 in microseconds.
pub const T1_US: [f64; 12] = [
    47.6, 44.8, 68.8, 51.8, 40.7, 33.3, 62.5, 63.3, 70.5, 56.5, 43.4, 39.8,
];

/// Dephasing times T2* in microseconds.
pub const T2_STAR_US: [f64; 12] = [2.6, 9.9, 2.3, 5.4, 3.4, 16.2, 4.3, 26.9, 2.3, 5.3, 2.5, 15.6];

/// Probability of reading |0> as 0.
pub const F00: [f64; 12] = [
    0.944, 0.966, 0.961, 0.947, 0.976, 0.937, 0.972, 0.953, 0.920, 0.980, 0.956, 0.980,
];

/// Probability of reading |1> as 1.
pub const F11: [f64; 12] = [
    0.886, 0.892, 0.891, 0.898, 0.908, 0.885, 0.896, 0.904, 0.827, 0.934, 0.875, 0.922,
];

/// Central working frequency in GHz.
pub const CENTRAL_FREQUENCY_GHZ: f64 = 4.35;

/// Readout fidelities `(f00, f11)` of the first `sites` qubits.
pub fn readout_fidelities(sites: usize) -> Vec<(f64, f64)> {
    F00.iter().zip(F11.iter()).take(sites).map(|(&a, &b)| (a, b)).collect()
}
