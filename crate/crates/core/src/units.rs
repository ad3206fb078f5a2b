//! Conversion between device units and the internal units (hbar = 1,
//! energies in units of the mean nearest-neighbour hopping J1, times in 1/J1).

use std::f64::consts::PI;

/// Mean nearest-neighbour hopping of the device, J1 / 2π in MHz.
pub const J1_OVER_2PI_MHZ: f64 = 11.5;
/// Mean next-nearest-neighbour hopping of the device, J2 / 2π in MHz.
pub const J2_OVER_2PI_MHZ: f64 = 1.2;

/// Frequency f (in MHz, i.e. E / 2πħ) to energy in units of J1.
pub fn mhz_to_j1(f_mhz: f64) -> f64 {
    f_mhz / J1_OVER_2PI_MHZ
}

pub fn j1_to_mhz(e: f64) -> f64 {
    e * J1_OVER_2PI_MHZ
}

/// Time in nanoseconds to dimensionless J1·t.
pub fn ns_to_j1t(t_ns: f64) -> f64 {
    2.0 * PI * J1_OVER_2PI_MHZ * 1e-3 * t_ns
}

pub fn j1t_to_ns(j1t: f64) -> f64 {
    j1t / (2.0 * PI * J1_OVER_2PI_MHZ * 1e-3)
}

/// A rate given as a lifetime in microseconds, expressed in units of J1.
pub fn lifetime_us_to_rate_j1(t_us: f64) -> f64 {
    1.0 / (t_us * 1e3 * 2.0 * PI * J1_OVER_2PI_MHZ * 1e-3)
}
