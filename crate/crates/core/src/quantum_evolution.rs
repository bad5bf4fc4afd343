//! Stueckelberg–Schrödinger evolution `i∂_τψ = Kψ` on a periodic 1+1 (t, x)
//! lattice with the √g-weighted inner product.
//!
//! With `W = diag(√g)` and `D_μ` the periodic central difference, the momentum
//! operators are `p_μ = W^{−1/2}(−iD_μ)W^{1/2}`, which is the discrete form of
//! `−i∂_μ − (i/2)(∂_μ√g)/√g`. Then `K = W^{−1/2} K̃ W^{1/2}` with
//!
//! ```text
//! K̃ = −(1/2M) Σ D_μ g^{μν} D_ν + V
//! ```
//!
//! real symmetric, so `K` is Hermitian in `⟨ψ, χ⟩ = Σ √g Δt Δx ψ* χ` and the
//! Cayley step is unitary in the same form.

use nalgebra::DMatrix;

use crate::dynamics::HamiltonianSpec;
use crate::error::{Result, ShpError};
use crate::geometry::{metric_at, Chart, MetricField, SpacetimePoint, Vec4};
use crate::spin_algebra::C64;

/// Periodic `n_t × n_x` sample lattice; site `(i, j)` sits at `(t0 + iΔt, x0 + jΔx)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lattice {
    pub n_t: usize,
    pub n_x: usize,
    pub dt: f64,
    pub dx: f64,
    pub t0: f64,
    pub x0: f64,
}

impl Lattice {
    pub fn new(n_t: usize, n_x: usize, dt: f64, dx: f64, t0: f64, x0: f64) -> Result<Self> {
        if n_t == 0 || n_x == 0 || !(dt > 0.0 && dx > 0.0) || !(dt.is_finite() && dx.is_finite()) {
            return Err(ShpError::Usage(format!("bad lattice {n_t}×{n_x} with spacing ({dt}, {dx})")));
        }
        Ok(Self { n_t, n_x, dt, dx, t0, x0 })
    }

    /// Lattice covering `[t0, t0 + T) × [x0, x0 + X)` periodically.
    pub fn periodic_box(n_t: usize, n_x: usize, t_len: f64, x_len: f64, t0: f64, x0: f64) -> Result<Self> {
        Self::new(n_t, n_x, t_len / n_t as f64, x_len / n_x as f64, t0, x0)
    }

    pub fn len(&self) -> usize {
        self.n_t * self.n_x
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, it: usize, ix: usize) -> usize {
        it * self.n_x + ix
    }

    pub fn coords(&self, k: usize) -> (f64, f64) {
        let (it, ix) = (k / self.n_x, k % self.n_x);
        (self.t0 + it as f64 * self.dt, self.x0 + ix as f64 * self.dx)
    }

    pub fn cell(&self) -> f64 {
        self.dt * self.dx
    }

    fn point(&self, k: usize) -> SpacetimePoint {
        let (t, x) = self.coords(k);
        SpacetimePoint::cartesian(t, x, 0.0, 0.0)
    }
}

/// `√g` and `g^{μν}` of the (t, x) block at every site.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeGeometry {
    pub weights: Vec<f64>,
    pub ginv: Vec<[[f64; 2]; 2]>,
}

pub fn lattice_geometry(metric: &MetricField, lattice: &Lattice) -> Result<LatticeGeometry> {
    if metric.chart() != Chart::Cartesian {
        return Err(ShpError::Usage("lattice evolution needs a Cartesian-chart metric".into()));
    }
    let mut weights = Vec::with_capacity(lattice.len());
    let mut ginv = Vec::with_capacity(lattice.len());
    for k in 0..lattice.len() {
        let g = metric_at(metric, &lattice.point(k))?;
        let (a, b, d) = (g[(0, 0)], g[(0, 1)], g[(1, 1)]);
        let det = a * d - b * b;
        if !(det < 0.0) {
            return Err(ShpError::Invariant(format!("(t, x) block not Lorentzian at site {k}: det = {det}")));
        }
        weights.push((-det).sqrt());
        ginv.push([[d / det, -b / det], [-b / det, a / det]]);
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
        return Err(ShpError::Invariant(format!("non-positive weight {w}")));
    }
    Ok(LatticeGeometry { weights, ginv })
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveGrid {
    pub lattice: Lattice,
    pub psi: Vec<C64>,
    pub weights: Vec<f64>,
    pub tau: f64,
}

impl WaveGrid {
    pub fn new(lattice: Lattice, psi: Vec<C64>, weights: Vec<f64>, tau: f64) -> Result<Self> {
        if psi.len() != lattice.len() || weights.len() != lattice.len() {
            return Err(ShpError::Usage("sample count does not match the lattice".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(ShpError::Invariant("weights must be positive".into()));
        }
        if psi.iter().any(|z| !z.is_finite()) {
            return Err(ShpError::Invariant("wave function has non-finite samples".into()));
        }
        Ok(Self { lattice, psi, weights, tau })
    }

    /// Samples `f(t, x)` with weights from `metric`.
    pub fn from_fn<F: Fn(f64, f64) -> C64>(lattice: Lattice, metric: &MetricField, f: F) -> Result<Self> {
        let geo = lattice_geometry(metric, &lattice)?;
        let psi = (0..lattice.len()).map(|k| {
            let (t, x) = lattice.coords(k);
            f(t, x)
        });
        Self::new(lattice, psi.collect(), geo.weights, 0.0)
    }

    /// `exp(−(x − x_c)²/(4σ²) + i k_x x − i k_t t)`.
    pub fn gaussian(lattice: Lattice, metric: &MetricField, x_c: f64, sigma: f64, k_x: f64, k_t: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(ShpError::Usage(format!("packet width must be positive, got {sigma}")));
        }
        Self::from_fn(lattice, metric, |t, x| {
            let env = (-(x - x_c).powi(2) / (4.0 * sigma * sigma)).exp();
            C64::from_polar(env, k_x * x - k_t * t)
        })
    }

    pub fn norm_squared(&self) -> f64 {
        inner_product(self, self).map(|z| z.re).unwrap_or(f64::NAN)
    }

    fn with_psi(&self, psi: Vec<C64>) -> Self {
        Self { lattice: self.lattice, psi, weights: self.weights.clone(), tau: self.tau }
    }
}

/// `Σ √g Δt Δx ψ* χ`.
pub fn inner_product(psi: &WaveGrid, chi: &WaveGrid) -> Result<C64> {
    if psi.lattice != chi.lattice {
        return Err(ShpError::Usage("inner product of wave functions on different lattices".into()));
    }
    if psi.weights.iter().zip(&chi.weights).any(|(a, b)| (a - b).abs() > 1e-12 * a.abs().max(1.0)) {
        return Err(ShpError::Usage("inner product of wave functions with different weights".into()));
    }
    Ok(weighted_dot(&psi.weights, &psi.psi, &chi.psi) * psi.lattice.cell())
}

fn weighted_dot(w: &[f64], a: &[C64], b: &[C64]) -> C64 {
    w.iter().zip(a.iter().zip(b)).map(|(w, (a, b))| a.conj() * b * *w).sum()
}

#[derive(Clone, Debug, PartialEq)]
enum Kernel {
    Momentum { direction: usize },
    Hamiltonian { ginv: Vec<[[f64; 2]; 2]>, mass: f64, potential: Vec<f64> },
}

/// Linear operator on lattice samples.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteOperator {
    pub lattice: Lattice,
    pub hermitian_wrt_weighted: bool,
    sqrt_w: Vec<f64>,
    kernel: Kernel,
}

impl DiscreteOperator {
    pub fn apply(&self, psi: &[C64]) -> Vec<C64> {
        let phi: Vec<C64> = psi.iter().zip(&self.sqrt_w).map(|(p, s)| p * *s).collect();
        let mut out = self.apply_reduced(&phi);
        for (o, s) in out.iter_mut().zip(&self.sqrt_w) {
            *o /= *s;
        }
        out
    }

    pub fn apply_grid(&self, psi: &WaveGrid) -> Result<WaveGrid> {
        if psi.lattice != self.lattice {
            return Err(ShpError::Usage("operator and wave function lattices differ".into()));
        }
        Ok(psi.with_psi(self.apply(&psi.psi)))
    }

    /// The conjugated operator acting on `φ = W^{1/2}ψ`.
    fn apply_reduced(&self, phi: &[C64]) -> Vec<C64> {
        let l = &self.lattice;
        match &self.kernel {
            Kernel::Momentum { direction } => {
                let d = central_difference(l, phi, *direction);
                d.into_iter().map(|z| z * C64::new(0.0, -1.0)).collect()
            }
            Kernel::Hamiltonian { ginv, mass, potential } => {
                let dt = central_difference(l, phi, 0);
                let dx = central_difference(l, phi, 1);
                let ft: Vec<C64> = (0..l.len()).map(|k| dt[k] * ginv[k][0][0] + dx[k] * ginv[k][0][1]).collect();
                let fx: Vec<C64> = (0..l.len()).map(|k| dt[k] * ginv[k][1][0] + dx[k] * ginv[k][1][1]).collect();
                let a = central_difference(l, &ft, 0);
                let b = central_difference(l, &fx, 1);
                let s = -0.5 / mass;
                (0..l.len()).map(|k| (a[k] + b[k]) * s + phi[k] * potential[k]).collect()
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let n = self.lattice.len();
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![C64::new(0.0, 0.0); n];
        for j in 0..n {
            e[j] = C64::new(1.0, 0.0);
            for (i, v) in self.apply(&e).into_iter().enumerate() {
                m[(i, j)] = v;
            }
            e[j] = C64::new(0.0, 0.0);
        }
        m
    }

    /// `max |(WO)_{ij} − conj((WO)_{ji})| / max |(WO)_{ij}|` from the dense matrix.
    pub fn dense_hermiticity_residual(&self) -> f64 {
        let m = self.to_dense();
        let n = m.nrows();
        let mut scale: f64 = 0.0;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let a = m[(i, j)] * self.sqrt_w[i] * self.sqrt_w[i];
                let b = (m[(j, i)] * self.sqrt_w[j] * self.sqrt_w[j]).conj();
                scale = scale.max(a.norm());
                worst = worst.max((a - b).norm());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    /// `|⟨Oψ, χ⟩ − ⟨ψ, Oχ⟩| / (‖Oψ‖‖χ‖ + ‖ψ‖‖Oχ‖)`.
    pub fn pair_hermiticity_residual(&self, psi: &WaveGrid, chi: &WaveGrid) -> Result<f64> {
        let opsi = self.apply_grid(psi)?;
        let ochi = self.apply_grid(chi)?;
        let lhs = inner_product(&opsi, chi)?;
        let rhs = inner_product(psi, &ochi)?;
        let scale = (opsi.norm_squared() * chi.norm_squared()).sqrt() + (psi.norm_squared() * ochi.norm_squared()).sqrt();
        Ok(if scale == 0.0 { 0.0 } else { (lhs - rhs).norm() / scale })
    }
}

fn central_difference(l: &Lattice, f: &[C64], direction: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); l.len()];
    for it in 0..l.n_t {
        for ix in 0..l.n_x {
            let (a, b, h) = if direction == 0 {
                let up = (it + 1) % l.n_t;
                let dn = (it + l.n_t - 1) % l.n_t;
                (l.index(up, ix), l.index(dn, ix), l.dt)
            } else {
                let up = (ix + 1) % l.n_x;
                let dn = (ix + l.n_x - 1) % l.n_x;
                (l.index(it, up), l.index(it, dn), l.dx)
            };
            out[l.index(it, ix)] = (f[a] - f[b]) / (2.0 * h);
        }
    }
    out
}

/// `p_μ` for `μ = 0` (t) or `1` (x).
pub fn momentum_operator(metric: &MetricField, lattice: &Lattice, direction: usize) -> Result<DiscreteOperator> {
    if direction > 1 {
        return Err(ShpError::Usage(format!("direction must be 0 (t) or 1 (x), got {direction}")));
    }
    let geo = lattice_geometry(metric, lattice)?;
    Ok(DiscreteOperator {
        lattice: *lattice,
        hermitian_wrt_weighted: true,
        sqrt_w: geo.weights.iter().map(|w| w.sqrt()).collect(),
        kernel: Kernel::Momentum { direction },
    })
}

/// `K = (1/2M) p_μ g^{μν} p_ν + V`.
pub fn hamiltonian_operator(spec: &HamiltonianSpec, lattice: &Lattice) -> Result<DiscreteOperator> {
    let geo = lattice_geometry(&spec.metric, lattice)?;
    let potential = (0..lattice.len())
        .map(|k| {
            let (t, x) = lattice.coords(k);
            spec.potential.value(&Vec4::new(t, x, 0.0, 0.0))
        })
        .collect();
    Ok(DiscreteOperator {
        lattice: *lattice,
        hermitian_wrt_weighted: true,
        sqrt_w: geo.weights.iter().map(|w| w.sqrt()).collect(),
        kernel: Kernel::Hamiltonian { ginv: geo.ginv, mass: spec.mass, potential },
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Solver {
    /// Conjugate gradients on `(1 + a²K̃²) x = (1 − iaK̃) b`.
    ConjugateGradient { tol: f64, max_iter: usize },
    /// Dense LU of `1 + iaK̃`; practical only for small lattices.
    DenseLu,
}

impl Default for Solver {
    fn default() -> Self {
        Self::ConjugateGradient { tol: 1e-15, max_iter: 2000 }
    }
}

/// Cayley propagator `(1 + iKdτ/2)⁻¹(1 − iKdτ/2)`.
pub struct CayleyStepper {
    op: DiscreteOperator,
    dtau: f64,
    solver: Solver,
    lu: Option<nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>>,
    /// Iterations used by the last solve.
    pub last_iterations: usize,
}

impl CayleyStepper {
    pub fn new(op: DiscreteOperator, dtau: f64, solver: Solver) -> Result<Self> {
        if !(dtau.is_finite() && dtau > 0.0) {
            return Err(ShpError::Usage(format!("dτ must be positive, got {dtau}")));
        }
        let lu = match solver {
            Solver::DenseLu => {
                let n = op.lattice.len();
                let mut m = DMatrix::<C64>::identity(n, n);
                let mut e = vec![C64::new(0.0, 0.0); n];
                for j in 0..n {
                    e[j] = C64::new(1.0, 0.0);
                    for (i, v) in op.apply_reduced(&e).into_iter().enumerate() {
                        m[(i, j)] += v * C64::new(0.0, 0.5 * dtau);
                    }
                    e[j] = C64::new(0.0, 0.0);
                }
                Some(m.lu())
            }
            Solver::ConjugateGradient { .. } => None,
        };
        Ok(Self { op, dtau, solver, lu, last_iterations: 0 })
    }

    /// One step on `φ = W^{1/2}ψ`.
    fn step_reduced(&mut self, phi: &[C64]) -> Result<Vec<C64>> {
        let a = 0.5 * self.dtau;
        let ia = C64::new(0.0, a);
        let kphi = self.op.apply_reduced(phi);
        let rhs: Vec<C64> = phi.iter().zip(&kphi).map(|(p, k)| p - k * ia).collect();
        match self.solver {
            Solver::DenseLu => {
                let b = nalgebra::DVector::from_vec(rhs);
                let x = self.lu.as_ref().and_then(|lu| lu.solve(&b)).ok_or_else(|| ShpError::Conditioning("singular Cayley matrix".into()))?;
                self.last_iterations = 1;
                Ok(x.iter().copied().collect())
            }
            Solver::ConjugateGradient { tol, max_iter } => {
                let krhs = self.op.apply_reduced(&rhs);
                let b: Vec<C64> = rhs.iter().zip(&krhs).map(|(r, k)| r - k * ia).collect();
                let op = &self.op;
                let apply = |v: &[C64]| -> Vec<C64> {
                    let kv = op.apply_reduced(v);
                    let kkv = op.apply_reduced(&kv);
                    v.iter().zip(&kkv).map(|(v, k)| v + k * (a * a)).collect()
                };
                let (x, iters) = conjugate_gradient(apply, &b, &rhs, tol, max_iter)?;
                self.last_iterations = iters;
                Ok(x)
            }
        }
    }

    pub fn step(&mut self, psi: &WaveGrid) -> Result<WaveGrid> {
        if psi.lattice != self.op.lattice {
            return Err(ShpError::Usage("wave function lattice differs from the operator's".into()));
        }
        let phi: Vec<C64> = psi.psi.iter().zip(&self.op.sqrt_w).map(|(p, s)| p * *s).collect();
        let next = self.step_reduced(&phi)?;
        let sw = &self.op.sqrt_w;
        let mut out = psi.with_psi(next.iter().zip(sw).map(|(p, s)| p / *s).collect());
        out.tau = psi.tau + self.dtau;
        Ok(out)
    }
}

/// CG for a Hermitian positive definite operator, started from `x0`.
fn conjugate_gradient<F>(apply: F, b: &[C64], x0: &[C64], tol: f64, max_iter: usize) -> Result<(Vec<C64>, usize)>
where
    F: Fn(&[C64]) -> Vec<C64>,
{
    let dot = |u: &[C64], v: &[C64]| -> C64 { u.iter().zip(v).map(|(a, b)| a.conj() * b).sum() };
    let bnorm = dot(b, b).re.sqrt();
    if bnorm == 0.0 {
        return Ok((vec![C64::new(0.0, 0.0); b.len()], 0));
    }
    let mut x = x0.to_vec();
    let ax = apply(&x);
    let mut r: Vec<C64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r).re;
    let target = (tol * bnorm).powi(2);
    let mut best = rr;
    let mut stall = 0;
    for it in 0..max_iter {
        if rr <= target {
            return Ok((x, it));
        }
        let ap = apply(&p);
        let alpha = rr / dot(&p, &ap).re;
        for i in 0..x.len() {
            x[i] += p[i] * alpha;
            r[i] -= ap[i] * alpha;
        }
        let rr_new = dot(&r, &r).re;
        if rr_new < best {
            best = rr_new;
            stall = 0;
        } else {
            stall += 1;
            // Round-off floor reached.
            if stall > 5 && best <= (1e3 * tol * bnorm).powi(2) {
                return Ok((x, it + 1));
            }
        }
        let beta = rr_new / rr;
        for i in 0..p.len() {
            p[i] = r[i] + p[i] * beta;
        }
        rr = rr_new;
    }
    if rr <= (1e3 * tol * bnorm).powi(2) {
        return Ok((x, max_iter));
    }
    Err(ShpError::Conditioning(format!(
        "CG did not converge in {max_iter} iterations (relative residual {:.3e})",
        rr.sqrt() / bnorm
    )))
}

/// Expectation values at one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observables {
    pub tau: f64,
    pub norm: f64,
    pub mean_x: f64,
    pub mean_p: f64,
    pub mean_k: f64,
}

pub fn observables(psi: &WaveGrid, p_x: &DiscreteOperator, k: &DiscreteOperator) -> Result<Observables> {
    let norm = psi.norm_squared();
    if !(norm > 0.0) {
        return Err(ShpError::Degenerate("zero wave function".into()));
    }
    let l = &psi.lattice;
    let mean_x = (0..l.len()).map(|i| psi.weights[i] * psi.psi[i].norm_sqr() * l.coords(i).1).sum::<f64>() * l.cell() / norm;
    let mean_p = inner_product(psi, &p_x.apply_grid(psi)?)?.re / norm;
    let mean_k = inner_product(psi, &k.apply_grid(psi)?)?.re / norm;
    Ok(Observables { tau: psi.tau, norm, mean_x, mean_p, mean_k })
}

/// Evolves `steps` Cayley steps and returns the final state.
pub fn evolve(psi: &WaveGrid, spec: &HamiltonianSpec, dtau: f64, steps: usize) -> Result<WaveGrid> {
    evolve_with(psi, spec, dtau, steps, Solver::default(), |_| Ok(()))
}

/// As [`evolve`], calling `observe` on the initial state and after every step.
pub fn evolve_with<F>(psi: &WaveGrid, spec: &HamiltonianSpec, dtau: f64, steps: usize, solver: Solver, mut observe: F) -> Result<WaveGrid>
where
    F: FnMut(&WaveGrid) -> Result<()>,
{
    let op = hamiltonian_operator(spec, &psi.lattice)?;
    let geo_w = &op.sqrt_w;
    if psi.weights.iter().zip(geo_w).any(|(w, s)| (w - s * s).abs() > 1e-12 * w.max(1.0)) {
        return Err(ShpError::Usage("wave-function weights do not match the metric".into()));
    }
    let mut stepper = CayleyStepper::new(op, dtau, solver)?;
    let mut cur = psi.clone();
    observe(&cur)?;
    for _ in 0..steps {
        cur = stepper.step(&cur)?;
        observe(&cur)?;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::PotentialField;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn flat() -> MetricField {
        MetricField::minkowski()
    }

    fn random_grid(lattice: Lattice, metric: &MetricField, seed: u64) -> WaveGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<C64> = (0..lattice.len()).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        WaveGrid::from_fn(lattice, metric, |t, x| {
            let k = lattice.index(((t - lattice.t0) / lattice.dt).round() as usize, ((x - lattice.x0) / lattice.dx).round() as usize);
            vals[k]
        })
        .unwrap()
    }

    #[test]
    fn inner_product_examples() {
        let l = Lattice::new(3, 5, 1.0, 1.0, 0.0, 0.0).unwrap();
        let one = WaveGrid::from_fn(l, &flat(), |_, _| C64::new(1.0, 0.0)).unwrap();
        assert!((inner_product(&one, &one).unwrap().re - 15.0).abs() < 1e-15);

        let l = Lattice::periodic_box(4, 32, 4.0, 2.0 * PI, 0.0, 0.0).unwrap();
        let a = WaveGrid::from_fn(l, &flat(), |_, x| C64::from_polar(1.0, 2.0 * x)).unwrap();
        let b = WaveGrid::from_fn(l, &flat(), |_, x| C64::from_polar(1.0, 5.0 * x)).unwrap();
        assert!(inner_product(&a, &b).unwrap().norm() < 1e-12);

        let m = MetricField::sin_warp(0.1).unwrap();
        let a = WaveGrid::from_fn(l, &m, |t, x| C64::new(x.cos(), t)).unwrap();
        let b = WaveGrid::from_fn(l, &m, |_, x| C64::new(0.5, x.sin())).unwrap();
        let mut want = C64::new(0.0, 0.0);
        for k in 0..l.len() {
            let (t, x) = l.coords(k);
            want += C64::new(x.cos(), t).conj() * C64::new(0.5, x.sin()) * (1.0 + 0.1 * x.sin()) * l.cell();
        }
        assert!((inner_product(&a, &b).unwrap() - want).norm() < 1e-10);
    }

    #[test]
    fn lattice_mismatch_is_rejected() {
        let a = WaveGrid::from_fn(Lattice::new(2, 4, 1.0, 1.0, 0.0, 0.0).unwrap(), &flat(), |_, _| C64::new(1.0, 0.0)).unwrap();
        let b = WaveGrid::from_fn(Lattice::new(2, 5, 1.0, 1.0, 0.0, 0.0).unwrap(), &flat(), |_, _| C64::new(1.0, 0.0)).unwrap();
        assert!(matches!(inner_product(&a, &b), Err(ShpError::Usage(_))));
    }

    #[test]
    fn flat_momentum_is_plain_difference() {
        let l = Lattice::periodic_box(4, 16, 4.0, 2.0 * PI, 0.0, 0.0).unwrap();
        let p = momentum_operator(&flat(), &l, 1).unwrap();
        let psi = random_grid(l, &flat(), 1);
        let got = p.apply(&psi.psi);
        let want = central_difference(&l, &psi.psi, 1);
        for (g, w) in got.iter().zip(want) {
            assert!((g - w * C64::new(0.0, -1.0)).norm() == 0.0);
        }
        assert!(p.dense_hermiticity_residual() < 1e-14);
    }

    #[test]
    fn curved_momentum_is_hermitian() {
        let l = Lattice::periodic_box(6, 24, 3.0, 2.0 * PI, 0.0, 0.0).unwrap();
        let m = MetricField::sin_warp(0.1).unwrap();
        for dir in 0..2 {
            let p = momentum_operator(&m, &l, dir).unwrap();
            assert!(p.dense_hermiticity_residual() < 1e-10);
            let r = p.pair_hermiticity_residual(&random_grid(l, &m, 2), &random_grid(l, &m, 3)).unwrap();
            assert!(r < 1e-10, "{r}");
        }
    }

    #[test]
    fn plane_wave_dispersion() {
        for n in [32usize, 64, 128] {
            let l = Lattice::periodic_box(1, n, 1.0, 2.0 * PI, 0.0, 0.0).unwrap();
            let h = l.dx;
            let k = 3.0;
            let psi = WaveGrid::from_fn(l, &flat(), |_, x| C64::from_polar(1.0, k * x)).unwrap();
            let p = momentum_operator(&flat(), &l, 1).unwrap();
            let ev = (k * h).sin() / h;
            for (a, b) in p.apply(&psi.psi).iter().zip(&psi.psi) {
                assert!((a - b * ev).norm() < 1e-12);
            }
            assert!((ev - k).abs() < k.powi(3) * h * h / 6.0 + 1e-12);
        }
    }

    #[test]
    fn free_hamiltonian_symbols() {
        let l = Lattice::periodic_box(16, 32, 4.0 * PI, 2.0 * PI, 0.0, 0.0).unwrap();
        let spec = HamiltonianSpec::new(1.5, flat(), PotentialField::Zero).unwrap();
        let k = hamiltonian_operator(&spec, &l).unwrap();
        let sx = |kx: f64| ((kx * l.dx).sin() / l.dx).powi(2);
        let st = |kt: f64| ((kt * l.dt).sin() / l.dt).powi(2);
        let psi = WaveGrid::from_fn(l, &flat(), |_, x| C64::from_polar(1.0, 2.0 * x)).unwrap();
        let e = sx(2.0) / 3.0;
        for (a, b) in k.apply(&psi.psi).iter().zip(&psi.psi) {
            assert!((a - b * e).norm() < 1e-12);
        }
        let psi = WaveGrid::from_fn(l, &flat(), |t, x| C64::from_polar(1.0, 3.0 * x - 1.5 * t)).unwrap();
        let e = (sx(3.0) - st(1.5)) / 3.0;
        assert!(e < sx(3.0) / 3.0);
        for (a, b) in k.apply(&psi.psi).iter().zip(&psi.psi) {
            assert!((a - b * e).norm() < 1e-12);
        }
    }

    #[test]
    fn curved_hamiltonian_is_hermitian() {
        let l = Lattice::periodic_box(6, 20, 3.0, 8.0, 0.0, -4.0).unwrap();
        let m = MetricField::tanh_warp(0.2).unwrap();
        let spec = HamiltonianSpec::new(1.0, m.clone(), PotentialField::Harmonic { kappa: 0.3, axis: 1, center: 0.0 }).unwrap();
        let k = hamiltonian_operator(&spec, &l).unwrap();
        assert!(k.dense_hermiticity_residual() < 1e-10);
        assert!(k.pair_hermiticity_residual(&random_grid(l, &m, 4), &random_grid(l, &m, 5)).unwrap() < 1e-10);
    }

    #[test]
    fn eigenmode_phase_rotation() {
        let l = Lattice::periodic_box(1, 64, 1.0, 2.0 * PI, 0.0, 0.0).unwrap();
        let spec = HamiltonianSpec::geodesic(flat());
        let psi = WaveGrid::from_fn(l, &flat(), |_, x| C64::from_polar(1.0, x)).unwrap();
        let e = ((l.dx).sin() / l.dx).powi(2) / 2.0;
        let dtau = 1e-3;
        let out = evolve(&psi, &spec, dtau, 100).unwrap();
        let phase = C64::from_polar(1.0, -e * 100.0 * dtau);
        for (a, b) in out.psi.iter().zip(&psi.psi) {
            assert!((a - b * phase).norm() < 1e-8);
        }
        assert!((out.tau - 0.1).abs() < 1e-15);
    }

    #[test]
    fn free_gaussian_spreading() {
        let l = Lattice::periodic_box(1, 1024, 1.0, 40.0, 0.0, -20.0).unwrap();
        let spec = HamiltonianSpec::geodesic(flat());
        let sigma = 1.0;
        let psi = WaveGrid::gaussian(l, &flat(), 0.0, sigma, 0.0, 0.0).unwrap();
        let tau = 2.0;
        let out = evolve(&psi, &spec, 0.01, 200).unwrap();
        let n = out.norm_squared();
        let var = (0..l.len()).map(|k| out.weights[k] * out.psi[k].norm_sqr() * l.coords(k).1.powi(2)).sum::<f64>() * l.cell() / n;
        let want = sigma * sigma + tau * tau / (4.0 * sigma * sigma);
        assert!((var - want).abs() / want < 1e-3, "{var} vs {want}");
    }

    #[test]
    fn cayley_conserves_norm_on_curved_lattice() {
        let l = Lattice::periodic_box(8, 16, 4.0, 2.0 * PI, 0.0, 0.0).unwrap();
        let m = MetricField::sin_warp(0.3).unwrap();
        let spec = HamiltonianSpec::new(1.0, m.clone(), PotentialField::Zero).unwrap();
        let psi = random_grid(l, &m, 7);
        let n0 = psi.norm_squared();
        for solver in [Solver::default(), Solver::DenseLu] {
            let out = evolve_with(&psi, &spec, 0.05, 200, solver, |_| Ok(())).unwrap();
            assert!((out.norm_squared() - n0).abs() / n0 < 1e-11);
        }
        let a = evolve_with(&psi, &spec, 0.05, 20, Solver::default(), |_| Ok(())).unwrap();
        let b = evolve_with(&psi, &spec, 0.05, 20, Solver::DenseLu, |_| Ok(())).unwrap();
        for (x, y) in a.psi.iter().zip(&b.psi) {
            assert!((x - y).norm() < 1e-10);
        }
    }

    #[test]
    fn canonical_commutator_is_second_order() {
        let err = |n: usize| {
            let l = Lattice::periodic_box(1, n, 1.0, 20.0, 0.0, -10.0).unwrap();
            let m = MetricField::sin_warp(0.2).unwrap();
            let p = momentum_operator(&m, &l, 1).unwrap();
            let psi = WaveGrid::gaussian(l, &m, 0.0, 1.0, 0.7, 0.0).unwrap();
            let xs: Vec<f64> = (0..n).map(|k| l.coords(k).1).collect();
            let xpsi: Vec<C64> = psi.psi.iter().zip(&xs).map(|(v, x)| v * *x).collect();
            let pxpsi = p.apply(&xpsi);
            let ppsi = p.apply(&psi.psi);
            (n / 8..7 * n / 8)
                .map(|k| (ppsi[k] * xs[k] - pxpsi[k] - psi.psi[k] * C64::new(0.0, 1.0)).norm())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(200), err(400));
        let ratio = e1 / e2;
        assert!(ratio > 3.5 && ratio < 4.5, "{e1} {e2} {ratio}");
    }

    #[test]
    fn non_lorentzian_block_is_rejected() {
        let m = MetricField::custom(Chart::Cartesian, |_| nalgebra::Matrix4::identity());
        let l = Lattice::new(2, 2, 1.0, 1.0, 0.0, 0.0).unwrap();
        assert!(lattice_geometry(&m, &l).is_err());
    }
}
