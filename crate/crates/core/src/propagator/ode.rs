//! Dormand-Prince 5(4) integrator with dense output only at requested times.

use num_complex::Complex64;

use crate::error::{Error, Result};

type C64 = Complex64;

#[derive(Clone, Copy, Debug)]
pub(crate) struct OdeSettings {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn combo(y: &[C64], h: f64, terms: &[(f64, &[C64])], out: &mut [C64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = y[i];
        for &(c, k) in terms {
            acc += k[i] * (h * c);
        }
        *o = acc;
    }
}

/// Integrates the autonomous system `dy/dt = f(y)` from `t = 0` and returns
/// the state at each of `times` (non-negative, increasing).
pub(crate) fn integrate<F>(mut f: F, y0: Vec<C64>, times: &[f64], s: OdeSettings) -> Result<Vec<Vec<C64>>>
where
    F: FnMut(&[C64], &mut [C64]),
{
    let n = y0.len();
    let mut y = y0;
    let mut k: Vec<Vec<C64>> = (0..7).map(|_| vec![C64::new(0.0, 0.0); n]).collect();
    let mut tmp = vec![C64::new(0.0, 0.0); n];
    let mut ynew = vec![C64::new(0.0, 0.0); n];
    let mut out = Vec::with_capacity(times.len());

    f(&y, &mut k[0]);
    let mut t: f64 = 0.0;
    let mut h: f64 = 1e-3;
    let mut steps = 0usize;
    for &target in times {
        while target - t > 1e-14 * target.max(1.0) {
            steps += 1;
            if steps > s.max_steps {
                return Err(Error::Solver(format!(
                    "master equation integration exceeded {} steps at t = {t}",
                    s.max_steps
                )));
            }
            let h_step = h.min(target - t);
            let (k1, rest) = k.split_at_mut(1);
            let k1 = &k1[0];
            let [k2, k3, k4, k5, k6, k7] = rest else { unreachable!() };
            combo(&y, h_step, &[(A21, k1)], &mut tmp);
            f(&tmp, k2);
            combo(&y, h_step, &[(A31, k1), (A32, k2)], &mut tmp);
            f(&tmp, k3);
            combo(&y, h_step, &[(A41, k1), (A42, k2), (A43, k3)], &mut tmp);
            f(&tmp, k4);
            combo(&y, h_step, &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)], &mut tmp);
            f(&tmp, k5);
            combo(&y, h_step, &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)], &mut tmp);
            f(&tmp, k6);
            combo(&y, h_step, &[(B1, k1), (B3, k3), (B4, k4), (B5, k5), (B6, k6)], &mut ynew);
            f(&ynew, k7);

            let mut err = 0.0;
            for i in 0..n {
                let e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7)
                    * h_step;
                let scale = s.atol + s.rtol * y[i].norm().max(ynew[i].norm());
                err += (e.norm() / scale).powi(2);
            }
            let err = (err / n as f64).sqrt();
            let _ = (C2, C3, C4, C5);
            if err <= 1.0 {
                t += h_step;
                std::mem::swap(&mut y, &mut ynew);
                let (first, last) = k.split_at_mut(6);
                std::mem::swap(&mut first[0], &mut last[0]);
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                h = h_step * factor;
            } else {
                h = h_step * (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            }
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::Solver("master equation step size underflow".into()));
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}
