//! Adaptive Krylov approximation of `exp(-i A t) v`.
//!
//! Hermitian generators use the Lanczos recurrence and an eigendecomposition
//! of the tridiagonal projection; general generators use Arnoldi and a dense
//! exponential of the Hessenberg projection. Step sizes are chosen so that the
//! a-posteriori residual estimate `beta * h_{m+1,m} * |e_m^T exp(-i H_m t) e_1|`
//! stays below the per-step tolerance.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::SparseHermitian;

type C64 = Complex64;
const ZERO: C64 = C64::new(0.0, 0.0);

/// A linear generator for `exp(-i A t)`.
pub trait Generator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[C64], y: &mut [C64]);
    fn is_hermitian(&self) -> bool;
}

impl Generator for SparseHermitian {
    fn dim(&self) -> usize {
        SparseHermitian::dim(self)
    }
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        SparseHermitian::apply(self, x, y)
    }
    fn is_hermitian(&self) -> bool {
        true
    }
}

/// `H - (i/2) diag(rates)`: the no-jump generator of a quantum trajectory.
pub struct DampedGenerator<'a> {
    pub hamiltonian: &'a SparseHermitian,
    pub rates: &'a [f64],
}

impl Generator for DampedGenerator<'_> {
    fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        self.hamiltonian.apply(x, y);
        for ((yi, xi), &g) in y.iter_mut().zip(x).zip(self.rates) {
            *yi -= C64::new(0.0, 0.5 * g) * xi;
        }
    }
    fn is_hermitian(&self) -> bool {
        self.rates.iter().all(|&g| g == 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KrylovSettings {
    /// Largest Krylov subspace built per step.
    pub max_dim: usize,
    /// Bound on the residual estimate of a single step, relative to the norm
    /// of the vector being propagated.
    pub step_tolerance: f64,
    /// Full re-orthogonalization of the Lanczos vectors.
    pub reorthogonalize: bool,
    /// Give up after this many steps for one propagation call.
    pub max_steps: usize,
}

impl Default for KrylovSettings {
    fn default() -> Self {
        KrylovSettings {
            max_dim: 40,
            step_tolerance: 1e-9,
            reorthogonalize: false,
            max_steps: 200_000,
        }
    }
}

enum Projection {
    Tridiagonal {
        eigenvalues: Vec<f64>,
        /// First row of the eigenvector matrix.
        first: Vec<f64>,
        /// Last row of the eigenvector matrix.
        last: Vec<f64>,
        eigenvectors: DMatrix<f64>,
    },
    Hessenberg(DMatrix<C64>),
}

/// A Krylov space built from one starting vector, reusable for any step
/// length.
pub struct Subspace<'w> {
    basis: &'w [Vec<C64>],
    size: usize,
    norm: f64,
    residual: f64,
    projection: Projection,
}

impl Subspace<'_> {
    pub fn size(&self) -> usize {
        self.size
    }

    /// Norm of the starting vector.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// True when the space is invariant and every step length is exact.
    pub fn is_exact(&self) -> bool {
        self.residual == 0.0
    }

    /// Coordinates of `exp(-i H_m t) e_1` in the Krylov basis.
    pub fn coefficients(&self, t: f64) -> Vec<C64> {
        match &self.projection {
            Projection::Tridiagonal {
                eigenvalues,
                first,
                eigenvectors,
                ..
            } => {
                let phases: Vec<C64> = eigenvalues
                    .iter()
                    .zip(first)
                    .map(|(&lam, &q0)| C64::from_polar(q0, -lam * t))
                    .collect();
                (0..self.size)
                    .map(|r| {
                        phases
                            .iter()
                            .enumerate()
                            .map(|(k, p)| p * eigenvectors[(r, k)])
                            .sum()
                    })
                    .collect()
            }
            Projection::Hessenberg(h) => {
                let e = (h * C64::new(0.0, -t)).exp();
                e.column(0).iter().copied().collect()
            }
        }
    }

    fn last_coefficient(&self, t: f64) -> f64 {
        match &self.projection {
            Projection::Tridiagonal {
                eigenvalues,
                first,
                last,
                ..
            } => eigenvalues
                .iter()
                .zip(first)
                .zip(last)
                .map(|((&lam, &q0), &qm)| C64::from_polar(q0 * qm, -lam * t))
                .sum::<C64>()
                .norm(),
            Projection::Hessenberg(_) => self.coefficients(t)[self.size - 1].norm(),
        }
    }

    /// Residual estimate of the step of length `t`.
    pub fn error_estimate(&self, t: f64) -> f64 {
        if self.residual == 0.0 {
            return 0.0;
        }
        self.norm * self.residual * self.last_coefficient(t)
    }

    /// Norm of the propagated vector after a step of length `t`.
    pub fn propagated_norm(&self, t: f64) -> f64 {
        let c = self.coefficients(t);
        self.norm * c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Writes `norm * V c` into `out`.
    pub fn combine(&self, coefficients: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|z| *z = ZERO);
        for (v, &c) in self.basis[..self.size].iter().zip(coefficients) {
            let c = c * self.norm;
            for (o, &x) in out.iter_mut().zip(v) {
                *o += c * x;
            }
        }
    }

    /// Largest step not exceeding `limit` whose error estimate is below
    /// `tolerance`.
    pub fn admissible_step(&self, limit: f64, tolerance: f64) -> f64 {
        if self.error_estimate(limit) <= tolerance {
            return limit;
        }
        let (mut lo, mut hi) = (0.0, limit);
        let iterations = match self.projection {
            Projection::Tridiagonal { .. } => 40,
            Projection::Hessenberg(_) => 16,
        };
        for _ in 0..iterations {
            let mid = 0.5 * (lo + hi);
            if self.error_estimate(mid) <= tolerance {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

/// Reusable Krylov workspace.
pub struct Krylov {
    settings: KrylovSettings,
    basis: Vec<Vec<C64>>,
    work: Vec<C64>,
    matvecs: usize,
}

impl Krylov {
    pub fn new(settings: KrylovSettings) -> Self {
        Krylov {
            settings,
            basis: Vec::new(),
            work: Vec::new(),
            matvecs: 0,
        }
    }

    pub fn settings(&self) -> &KrylovSettings {
        &self.settings
    }

    /// Matrix-vector products performed so far.
    pub fn matvecs(&self) -> usize {
        self.matvecs
    }

    fn ensure(&mut self, dim: usize, m: usize) {
        if self.basis.first().is_some_and(|b| b.len() != dim) {
            self.basis.clear();
        }
        while self.basis.len() < m + 1 {
            self.basis.push(vec![ZERO; dim]);
        }
    }

    /// Builds the Krylov space of `a` started from `v`.
    pub fn build<G: Generator + ?Sized>(&mut self, a: &G, v: &[C64]) -> Result<Subspace<'_>> {
        let dim = a.dim();
        if v.len() != dim {
            return Err(Error::param(format!(
                "vector length {} does not match operator dimension {dim}",
                v.len()
            )));
        }
        let m_max = self.settings.max_dim.clamp(1, dim.max(1));
        self.ensure(dim, m_max);
        let norm = norm(v);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Solver(format!("cannot propagate vector of norm {norm}")));
        }
        for (b, &x) in self.basis[0].iter_mut().zip(v) {
            *b = x / norm;
        }
        if a.is_hermitian() {
            self.lanczos(a, norm, m_max)
        } else {
            self.arnoldi(a, norm, m_max)
        }
    }

    fn lanczos<G: Generator + ?Sized>(&mut self, a: &G, norm: f64, m_max: usize) -> Result<Subspace<'_>> {
        let mut alpha = Vec::with_capacity(m_max);
        let mut beta: Vec<f64> = Vec::with_capacity(m_max);
        let mut residual = 0.0;
        let mut size = m_max;
        for j in 0..m_max {
            let (head, tail) = self.basis.split_at_mut(j + 1);
            let vj = &head[j];
            let w = &mut tail[0];
            a.apply(vj, w);
            self.matvecs += 1;
            let aj = dot(vj, w).re;
            alpha.push(aj);
            if j > 0 {
                let b = beta[j - 1];
                let prev = &head[j - 1];
                for ((wi, &x), &p) in w.iter_mut().zip(vj.iter()).zip(prev.iter()) {
                    *wi -= x * aj + p * b;
                }
            } else {
                for (wi, &x) in w.iter_mut().zip(vj.iter()) {
                    *wi -= x * aj;
                }
            }
            if self.settings.reorthogonalize {
                for v in head.iter() {
                    let c = dot(v, w);
                    for (wi, &x) in w.iter_mut().zip(v.iter()) {
                        *wi -= c * x;
                    }
                }
            }
            let bj = self::norm(w);
            let scale = aj.abs() + beta.last().copied().unwrap_or(0.0) + 1.0;
            if bj <= 1e-13 * scale {
                size = j + 1;
                residual = 0.0;
                break;
            }
            if j + 1 == m_max {
                residual = bj;
                break;
            }
            let inv = 1.0 / bj;
            w.iter_mut().for_each(|z| *z *= inv);
            beta.push(bj);
        }
        let t = DMatrix::from_fn(size, size, |r, c| {
            if r == c {
                alpha[r]
            } else if r + 1 == c || c + 1 == r {
                beta[r.min(c)]
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(t);
        let first = eig.eigenvectors.row(0).iter().copied().collect();
        let last = eig.eigenvectors.row(size - 1).iter().copied().collect();
        Ok(Subspace {
            basis: &self.basis,
            size,
            norm,
            residual,
            projection: Projection::Tridiagonal {
                eigenvalues: eig.eigenvalues.iter().copied().collect(),
                first,
                last,
                eigenvectors: eig.eigenvectors,
            },
        })
    }

    fn arnoldi<G: Generator + ?Sized>(&mut self, a: &G, norm: f64, m_max: usize) -> Result<Subspace<'_>> {
        let mut h = DMatrix::<C64>::zeros(m_max + 1, m_max);
        let mut size = m_max;
        let mut residual = 0.0;
        for j in 0..m_max {
            let (head, tail) = self.basis.split_at_mut(j + 1);
            let w = &mut tail[0];
            a.apply(&head[j], w);
            self.matvecs += 1;
            // modified Gram-Schmidt, twice
            for _ in 0..2 {
                for (i, v) in head.iter().enumerate() {
                    let c = dot(v, w);
                    h[(i, j)] += c;
                    for (wi, &x) in w.iter_mut().zip(v.iter()) {
                        *wi -= c * x;
                    }
                }
            }
            let hj = self::norm(w);
            let scale: f64 = (0..=j).map(|i| h[(i, j)].norm()).sum::<f64>() + 1.0;
            if hj <= 1e-13 * scale {
                size = j + 1;
                residual = 0.0;
                break;
            }
            if j + 1 == m_max {
                residual = hj;
                break;
            }
            h[(j + 1, j)] = C64::new(hj, 0.0);
            let inv = 1.0 / hj;
            w.iter_mut().for_each(|z| *z *= inv);
        }
        let hm = h.view((0, 0), (size, size)).into_owned();
        Ok(Subspace {
            basis: &self.basis,
            size,
            norm,
            residual,
            projection: Projection::Hessenberg(hm),
        })
    }

    /// Advances `v` in place by `exp(-i A t)` using as many adaptive steps as
    /// needed.
    pub fn propagate<G: Generator + ?Sized>(&mut self, a: &G, v: &mut [C64], t: f64) -> Result<()> {
        if t < 0.0 || !t.is_finite() {
            return Err(Error::param(format!("propagation time must be finite and >= 0, got {t}")));
        }
        let mut remaining = t;
        let mut steps = 0usize;
        let mut out = std::mem::take(&mut self.work);
        out.resize(v.len(), ZERO);
        while remaining > 0.0 {
            steps += 1;
            if steps > self.settings.max_steps {
                self.work = out;
                return Err(Error::Solver(format!(
                    "Krylov propagation exceeded {} steps with {remaining:.3e} time left",
                    self.settings.max_steps
                )));
            }
            let tol = self.settings.step_tolerance;
            let sub = self.build(a, v)?;
            let tau = sub.admissible_step(remaining, tol * sub.norm());
            if !(tau > remaining * 1e-12) {
                let est = sub.error_estimate(remaining);
                let m = sub.size();
                drop(sub);
                self.work = out;
                return Err(Error::Solver(format!(
                    "Krylov step collapsed (subspace {m}, estimate {est:.3e} over {remaining:.3e})"
                )));
            }
            let c = sub.coefficients(tau);
            sub.combine(&c, &mut out);
            v.copy_from_slice(&out);
            remaining = if tau >= remaining { 0.0 } else { remaining - tau };
        }
        self.work = out;
        Ok(())
    }
}

pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re + x.im * y.im;
        im += x.re * y.im - x.im * y.re;
    }
    C64::new(re, im)
}

pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::SectorBasis;
    use crate::hamiltonian::{build_hamiltonian, sample_disorder, ModelSpec};
    use nalgebra::DVector;

    fn dense_expm_apply(h: &DMatrix<f64>, v: &[C64], t: f64) -> Vec<C64> {
        let eig = SymmetricEigen::new(h.clone());
        let q = eig.eigenvectors.map(|x| C64::new(x, 0.0));
        let x = DVector::from_column_slice(v);
        let coeff = q.adjoint() * x;
        let phased = DVector::from_iterator(
            coeff.len(),
            coeff
                .iter()
                .zip(eig.eigenvalues.iter())
                .map(|(c, &l)| c * C64::from_polar(1.0, -l * t)),
        );
        (q * phased).iter().copied().collect()
    }

    #[test]
    fn arnoldi_matches_lanczos_on_hermitian_input() {
        let spec = ModelSpec::device_default(6);
        let basis = SectorBasis::enumerate(6, 3, 3).unwrap();
        let h = build_hamiltonian(&spec, &sample_disorder(2.0, 6, 1).unwrap(), &basis).unwrap();
        let rates = vec![0.0; h.dim()];
        let damped = DampedGenerator {
            hamiltonian: &h,
            rates: &rates,
        };
        let mut v = vec![ZERO; h.dim()];
        v[7] = C64::new(1.0, 0.0);
        let mut a = v.clone();
        let mut b = v.clone();
        let mut k = Krylov::new(KrylovSettings::default());
        k.propagate(&h, &mut a, 2.0).unwrap();
        // force the Arnoldi path
        struct NonHermitian<'a>(DampedGenerator<'a>);
        impl Generator for NonHermitian<'_> {
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn apply(&self, x: &[C64], y: &mut [C64]) {
                self.0.apply(x, y)
            }
            fn is_hermitian(&self) -> bool {
                false
            }
        }
        k.propagate(&NonHermitian(damped), &mut b, 2.0).unwrap();
        let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        assert!(diff < 1e-8, "diff {diff}");
        let exact = dense_expm_apply(&h.to_dense(), &v, 2.0);
        let diff: f64 = a.iter().zip(&exact).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        assert!(diff < 1e-8, "diff {diff}");
    }

    #[test]
    fn damped_generator_decays_norm() {
        let spec = ModelSpec::device_default(4);
        let basis = SectorBasis::enumerate(4, 2, 3).unwrap();
        let h = build_hamiltonian(&spec, &sample_disorder(1.0, 4, 3).unwrap(), &basis).unwrap();
        let rates = vec![0.2; h.dim()];
        let g = DampedGenerator {
            hamiltonian: &h,
            rates: &rates,
        };
        let mut v = vec![ZERO; h.dim()];
        v[0] = C64::new(1.0, 0.0);
        let mut k = Krylov::new(KrylovSettings::default());
        k.propagate(&g, &mut v, 3.0).unwrap();
        // uniform damping: |psi|^2 = exp(-rate t)
        assert!((norm(&v).powi(2) - (-0.6f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn rejects_negative_time() {
        let spec = ModelSpec::device_default(2);
        let basis = SectorBasis::enumerate(2, 1, 3).unwrap();
        let h = build_hamiltonian(&spec, &sample_disorder(0.0, 2, 0).unwrap(), &basis).unwrap();
        let mut v = vec![C64::new(1.0, 0.0), ZERO];
        let mut k = Krylov::new(KrylovSettings::default());
        assert!(k.propagate(&h, &mut v, -1.0).is_err());
    }
}
