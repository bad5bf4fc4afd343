//! SL(2,C) double cover, pure boosts `L(N)`, Wigner little-group elements,
//! four-spinor assembly and sector norms.
//!
//! A vector `v` is mapped to the Hermitian matrix `σ(v) = σ^μ v_μ = −v⁰ + σ·v⃗`.
//! An element `A` of the first representation acts through
//! `A† σ(N) A = σ(Λ⁻¹N)`; the second representation uses `σ̲^μ = (σ⁰, −σ)` and
//! carries `(A†)⁻¹`.

use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector4};

use crate::error::{Result, ShpError};
use crate::geometry::{eta, metric_at, Chart, Mat4, MetricField, SpacetimePoint, Vec4};
use crate::spin_algebra::{c, pauli, CMat2, CMat4, Cone, GammaBasis, InducingVector, C64, I};

pub type CVec2 = Vector2<C64>;
pub type CVec4 = Vector4<C64>;

const LORENTZ_TOL: f64 = 1e-10;
const DET_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LorentzTransform {
    pub matrix: Mat4,
    pub proper_orthochronous: bool,
}

impl LorentzTransform {
    pub fn new(matrix: Mat4) -> Result<Self> {
        let res = (matrix.transpose() * eta() * matrix - eta()).amax();
        if res > LORENTZ_TOL * matrix.amax().powi(2).max(1.0) {
            return Err(ShpError::Usage(format!("ΛᵀηΛ − η residual {res:.3e}")));
        }
        let proper_orthochronous = (matrix.determinant() - 1.0).abs() <= 1e-8 && matrix[(0, 0)] >= 1.0 - 1e-12;
        Ok(Self { matrix, proper_orthochronous })
    }

    pub fn identity() -> Self {
        Self { matrix: Mat4::identity(), proper_orthochronous: true }
    }

    /// Boost taking `(1,0,0,0)` to `(cosh α, sinh α n̂)`.
    pub fn boost(rapidity: f64, direction: [f64; 3]) -> Result<Self> {
        let n = unit3(direction)?;
        let (ch, sh) = (rapidity.cosh(), rapidity.sinh());
        let mut m = Mat4::identity();
        m[(0, 0)] = ch;
        for i in 0..3 {
            m[(0, i + 1)] = sh * n[i];
            m[(i + 1, 0)] = sh * n[i];
            for j in 0..3 {
                m[(i + 1, j + 1)] += (ch - 1.0) * n[i] * n[j];
            }
        }
        Ok(Self { matrix: m, proper_orthochronous: true })
    }

    /// Counterclockwise rotation by `angle` about `axis`.
    pub fn rotation(angle: f64, axis: [f64; 3]) -> Result<Self> {
        let n = unit3(axis)?;
        let r = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_unchecked(n), angle);
        let mut m = Mat4::identity();
        m.fixed_view_mut::<3, 3>(1, 1).copy_from(r.matrix());
        Ok(Self { matrix: m, proper_orthochronous: true })
    }

    pub fn compose(&self, other: &LorentzTransform) -> Self {
        Self {
            matrix: self.matrix * other.matrix,
            proper_orthochronous: self.proper_orthochronous && other.proper_orthochronous,
        }
    }

    /// `Λ⁻¹ = η Λᵀ η`.
    pub fn inverse(&self) -> Self {
        Self { matrix: eta() * self.matrix.transpose() * eta(), proper_orthochronous: self.proper_orthochronous }
    }

    pub fn apply(&self, v: &Vec4) -> Vec4 {
        self.matrix * v
    }

    fn require_proper(&self) -> Result<()> {
        if !self.proper_orthochronous {
            return Err(ShpError::Usage("Lorentz transform must be proper orthochronous".into()));
        }
        Ok(())
    }
}

fn unit3(v: [f64; 3]) -> Result<nalgebra::Vector3<f64>> {
    let v = nalgebra::Vector3::from(v);
    let n = v.norm();
    if !(n > 1e-14) || !n.is_finite() {
        return Err(ShpError::Usage("direction must be a nonzero finite 3-vector".into()));
    }
    Ok(v / n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rep {
    First,
    Second,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SL2CElement {
    pub matrix: CMat2,
    pub rep: Rep,
}

impl SL2CElement {
    pub fn new(matrix: CMat2, rep: Rep) -> Result<Self> {
        let d = matrix.determinant();
        if (d - c(1.0)).norm() > DET_TOL {
            return Err(ShpError::Usage(format!("det = {d}, expected 1")));
        }
        Ok(Self { matrix, rep })
    }

    /// The same Lorentz transform carried by the other representation.
    pub fn dual(&self) -> Self {
        let m = self.matrix.adjoint().try_inverse().expect("unit determinant");
        let rep = match self.rep {
            Rep::First => Rep::Second,
            Rep::Second => Rep::First,
        };
        Self { matrix: m, rep }
    }
}

fn sign_of(rep: Rep) -> f64 {
    match rep {
        Rep::First => 1.0,
        Rep::Second => -1.0,
    }
}

/// `σ^μ v_μ` (first) or `σ̲^μ v_μ` (second) for contravariant `v`.
pub fn sigma_map(v: &Vec4, rep: Rep) -> CMat2 {
    let s = pauli();
    let k = sign_of(rep);
    CMat2::identity() * c(-v[0]) + (s[0] * c(v[1]) + s[1] * c(v[2]) + s[2] * c(v[3])) * c(k)
}

fn sigma_unmap(x: &CMat2, rep: Rep) -> Vec4 {
    let s = pauli();
    let k = sign_of(rep);
    let m0 = 0.5 * x.trace().re;
    let mi = |i: usize| 0.5 * (x * s[i]).trace().re * k;
    Vec4::new(-m0, mi(0), mi(1), mi(2))
}

pub fn sl2c_to_lorentz(a: &SL2CElement) -> Result<LorentzTransform> {
    SL2CElement::new(a.matrix, a.rep)?;
    let inv = a.matrix.try_inverse().ok_or_else(|| ShpError::Degenerate("singular SL(2,C) element".into()))?;
    let mut m = Mat4::zeros();
    for nu in 0..4 {
        let mut e = Vec4::zeros();
        e[nu] = 1.0;
        let x = inv.adjoint() * sigma_map(&e, a.rep) * inv;
        m.set_column(nu, &sigma_unmap(&x, a.rep));
    }
    LorentzTransform::new(m)
}

/// `‖A† σ(N) A − σ(Λ⁻¹N)‖` for the given pair.
pub fn defining_relation_residual(a: &SL2CElement, lambda: &LorentzTransform, n: &Vec4) -> f64 {
    let lhs = a.matrix.adjoint() * sigma_map(n, a.rep) * a.matrix;
    let rhs = sigma_map(&lambda.inverse().apply(n), a.rep);
    (lhs - rhs).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Pure boost pair `(L, L̲)` taking the rest vector to the upper-cone
/// representative of `N` (`N` itself, or `−N` on the lower cone).
pub fn boost_to(n: &InducingVector) -> Result<(SL2CElement, SL2CElement)> {
    let v = match n.cone {
        Cone::Upper => n.n,
        Cone::Lower => -n.n,
    };
    let spatial = nalgebra::Vector3::new(v[1], v[2], v[3]);
    let sh = spatial.norm();
    let rapidity = sh.asinh();
    let (ch2, sh2) = ((0.5 * rapidity).cosh(), (0.5 * rapidity).sinh());
    let mut l = CMat2::identity() * c(ch2);
    if sh > 0.0 {
        let s = pauli();
        for i in 0..3 {
            l += s[i] * c(sh2 * spatial[i] / sh);
        }
    }
    let first = SL2CElement { matrix: l, rep: Rep::First };
    Ok((first, first.dual()))
}

/// SL(2,C) preimage of a proper orthochronous Λ on the trace-positive branch.
pub fn lift_lorentz(lambda: &LorentzTransform) -> Result<SL2CElement> {
    lambda.require_proper()?;
    let image = InducingVector::normalized(lambda.apply(&Vec4::new(1.0, 0.0, 0.0, 0.0)))?;
    let (l, _) = boost_to(&image)?;
    let boost_inv = sl2c_to_lorentz(&l)?.inverse();
    let r = boost_inv.matrix * lambda.matrix;
    let r3: Matrix3<f64> = r.fixed_view::<3, 3>(1, 1).into_owned();
    let q = UnitQuaternion::from_matrix(&r3);
    let s = pauli();
    let u = CMat2::identity() * c(q.w) - (s[0] * c(q.i) + s[1] * c(q.j) + s[2] * c(q.k)) * I;
    let mut a = l.matrix * u;
    if a.trace().re < 0.0 {
        a = -a;
    }
    SL2CElement::new(a, Rep::First).or_else(|_| {
        let d = a.determinant().sqrt();
        SL2CElement::new(a / d, Rep::First)
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WignerDMatrix {
    pub matrix: CMat2,
}

impl WignerDMatrix {
    pub fn unitarity_residual(&self) -> f64 {
        (self.matrix.adjoint() * self.matrix - CMat2::identity()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn det_residual(&self) -> f64 {
        (self.matrix.determinant() - c(1.0)).norm()
    }
}

/// `D = L⁻¹(N) Λ̃ L(Λ⁻¹N)`.
pub fn wigner_d(lambda: &LorentzTransform, n: &InducingVector) -> Result<WignerDMatrix> {
    let a = lift_lorentz(lambda)?;
    let (ln, _) = boost_to(n)?;
    let back = InducingVector::normalized(lambda.inverse().apply(&n.n))?;
    let (lb, _) = boost_to(&back)?;
    let ln_inv = ln.matrix.try_inverse().ok_or_else(|| ShpError::Degenerate("singular boost".into()))?;
    Ok(WignerDMatrix { matrix: ln_inv * a.matrix * lb.matrix })
}

fn mixing() -> CMat4 {
    let one = CMat2::identity() * c(std::f64::consts::FRAC_1_SQRT_2);
    let mut u = CMat4::zeros();
    u.fixed_view_mut::<2, 2>(0, 0).copy_from(&one);
    u.fixed_view_mut::<2, 2>(0, 2).copy_from(&one);
    u.fixed_view_mut::<2, 2>(2, 0).copy_from(&(-one));
    u.fixed_view_mut::<2, 2>(2, 2).copy_from(&one);
    u
}

/// `S(Λ) = U diag(Λ̃, (Λ̃†)⁻¹) U†` in the Dirac basis.
pub fn s_matrix(lambda: &LorentzTransform) -> Result<CMat4> {
    let a = lift_lorentz(lambda)?;
    let b = a.dual();
    let mut d = CMat4::zeros();
    d.fixed_view_mut::<2, 2>(0, 0).copy_from(&a.matrix);
    d.fixed_view_mut::<2, 2>(2, 2).copy_from(&b.matrix);
    let u = mixing();
    Ok(u * d * u.adjoint())
}

/// `S = exp(−(i/2) ω_{μν} Σ^{μν})` from lowered generator parameters.
pub fn s_from_generators(omega_cov: &Mat4, basis: &GammaBasis) -> CMat4 {
    let sigma = basis.sigma();
    let mut gen = CMat4::zeros();
    for m in 0..4 {
        for v in 0..4 {
            gen += sigma[m][v] * c(omega_cov[(m, v)]);
        }
    }
    (gen * (I * -0.5)).exp()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spinor4 {
    pub components: CVec4,
    pub inducing: InducingVector,
}

pub fn assemble_four_spinor(psi_hat: &CVec2, phi_hat: &CVec2, n: &InducingVector) -> Result<Spinor4> {
    let (l, lb) = boost_to(n)?;
    let top = l.matrix * psi_hat;
    let bottom = lb.matrix * phi_hat;
    let stacked = CVec4::new(top[0], top[1], bottom[0], bottom[1]);
    Ok(Spinor4 { components: mixing() * stacked, inducing: *n })
}

pub fn decompose_four_spinor(psi: &Spinor4) -> Result<(CVec2, CVec2)> {
    let (l, lb) = boost_to(&psi.inducing)?;
    let stacked = mixing().adjoint() * psi.components;
    let li = l.matrix.try_inverse().ok_or_else(|| ShpError::Degenerate("singular boost".into()))?;
    let lbi = lb.matrix.try_inverse().ok_or_else(|| ShpError::Degenerate("singular boost".into()))?;
    Ok((li * CVec2::new(stacked[0], stacked[1]), lbi * CVec2::new(stacked[2], stacked[3])))
}

/// `ψ̄ (γ̃·N) ψ` with `ψ̄ = ψ† γ̃⁰`.
pub fn bilinear_gamma_n(psi: &CVec4, n: &Vec4, basis: &GammaBasis) -> f64 {
    let slash = basis.slash_bd(n);
    (psi.adjoint() * basis.gamma_bd[0] * slash * psi)[(0, 0)].re
}

/// Regular sample lattice over a 4D coordinate box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid4 {
    pub chart: Chart,
    pub origin: Vec4,
    pub spacing: Vec4,
    pub dims: [usize; 4],
}

impl Grid4 {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn multi_index(&self, mut k: usize) -> [usize; 4] {
        let mut idx = [0; 4];
        for a in (0..4).rev() {
            idx[a] = k % self.dims[a];
            k /= self.dims[a];
        }
        idx
    }

    pub fn flat_index(&self, idx: [usize; 4]) -> usize {
        idx.iter().zip(self.dims).fold(0, |acc, (&i, d)| acc * d + i)
    }

    pub fn point(&self, k: usize) -> Vec4 {
        let idx = self.multi_index(k);
        Vec4::from_fn(|a, _| self.origin[a] + idx[a] as f64 * self.spacing[a])
    }

    /// `Δ⁴x`, counting only axes with more than one sample.
    pub fn cell_volume(&self) -> f64 {
        (0..4).filter(|&a| self.dims[a] > 1).map(|a| self.spacing[a]).product()
    }

    fn sqrt_g(&self, metric: &MetricField) -> Result<Vec<f64>> {
        (0..self.len())
            .map(|k| {
                let g = metric_at(metric, &SpacetimePoint::new(self.chart, self.point(k)))?;
                Ok(g.determinant().abs().sqrt())
            })
            .collect()
    }

    /// Multilinear interpolation stencil for `x`; `None` when off the grid.
    fn stencil(&self, x: &Vec4) -> Option<Vec<(usize, f64)>> {
        let mut axes = [(0usize, 0usize, 0.0f64); 4];
        for a in 0..4 {
            if self.dims[a] == 1 {
                if (x[a] - self.origin[a]).abs() > 1e-9 * self.spacing[a].abs().max(1.0) {
                    return None;
                }
                axes[a] = (0, 0, 0.0);
                continue;
            }
            let u = (x[a] - self.origin[a]) / self.spacing[a];
            let top = (self.dims[a] - 1) as f64;
            if u < -1e-9 || u > top + 1e-9 {
                return None;
            }
            let u = u.clamp(0.0, top);
            let i0 = (u.floor() as usize).min(self.dims[a] - 2);
            axes[a] = (i0, i0 + 1, u - i0 as f64);
        }
        let mut out = Vec::with_capacity(16);
        for corner in 0..16usize {
            let mut w = 1.0;
            let mut idx = [0; 4];
            for a in 0..4 {
                let hi = corner >> a & 1 == 1;
                let (i0, i1, f) = axes[a];
                if self.dims[a] == 1 && hi {
                    w = 0.0;
                    break;
                }
                idx[a] = if hi { i1 } else { i0 };
                w *= if self.dims[a] == 1 { 1.0 } else if hi { f } else { 1.0 - f };
            }
            if w != 0.0 {
                out.push((self.flat_index(idx), w));
            }
        }
        Some(out)
    }
}

/// Four-spinor field of one `N` sector.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinorField {
    pub grid: Grid4,
    pub inducing: InducingVector,
    pub values: Vec<CVec4>,
}

/// Two-spinor field of one `N` sector.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoSpinorField {
    pub grid: Grid4,
    pub inducing: InducingVector,
    pub values: Vec<CVec2>,
}

/// Pair of two-spinor fields `(ψ̂, φ̂)` of one `N` sector.
#[derive(Clone, Debug, PartialEq)]
pub struct SectorField {
    pub grid: Grid4,
    pub inducing: InducingVector,
    pub psi_hat: Vec<CVec2>,
    pub phi_hat: Vec<CVec2>,
}

impl SectorField {
    pub fn assemble(&self) -> Result<SpinorField> {
        let values = self
            .psi_hat
            .iter()
            .zip(&self.phi_hat)
            .map(|(p, f)| assemble_four_spinor(p, f, &self.inducing).map(|s| s.components))
            .collect::<Result<_>>()?;
        Ok(SpinorField { grid: self.grid, inducing: self.inducing, values })
    }

    /// `Σ √g Δ⁴x (|ψ̂|² + |φ̂|²)`.
    pub fn norm(&self, metric: &MetricField) -> Result<f64> {
        let w = self.grid.sqrt_g(metric)?;
        let dv = self.grid.cell_volume();
        Ok(w.iter()
            .zip(self.psi_hat.iter().zip(&self.phi_hat))
            .map(|(w, (p, f))| w * dv * (p.norm_squared() + f.norm_squared()))
            .sum())
    }
}

/// `∓ Σ √g Δ⁴x ψ̄ (γ̃·N) ψ`, with the sign selected by `cone`.
pub fn sector_norm(field: &SpinorField, cone: Cone, metric: &MetricField, basis: &GammaBasis) -> Result<f64> {
    if cone != field.inducing.cone {
        return Err(ShpError::Usage(format!("sign flag {cone:?} does not match the cone of N ({:?})", field.inducing.cone)));
    }
    let w = field.grid.sqrt_g(metric)?;
    let dv = field.grid.cell_volume();
    let s = cone.norm_sign();
    Ok(field
        .values
        .iter()
        .zip(w)
        .map(|(psi, w)| s * w * dv * bilinear_gamma_n(psi, &field.inducing.n, basis))
        .sum())
}

/// Residual of `S⁻¹ Σ_{ΛN}^{μν} S Λ_μ^λ Λ_ν^σ = Σ_N^{λσ}` with `Λ_μ^λ = (Λ⁻¹)^λ_μ`.
pub fn covariance_check(lambda: &LorentzTransform, n: &InducingVector, basis: &GammaBasis) -> Result<f64> {
    use crate::spin_algebra::{max_abs, sigma_n_build};
    let s = s_matrix(lambda)?;
    let s_inv = s.try_inverse().ok_or_else(|| ShpError::Degenerate("singular S(Λ)".into()))?;
    let n2 = InducingVector::normalized(lambda.apply(&n.n))?;
    let before = sigma_n_build(n, basis).sigma_n;
    let after = sigma_n_build(&n2, basis).sigma_n;
    let low = lambda.inverse().matrix;
    let mut worst: f64 = 0.0;
    for l in 0..4 {
        for sg in 0..4 {
            let mut acc = CMat4::zeros();
            for m in 0..4 {
                for v in 0..4 {
                    let w = low[(l, m)] * low[(sg, v)];
                    if w != 0.0 {
                        acc += s_inv * after[m][v] * s * c(w);
                    }
                }
            }
            worst = worst.max(max_abs(&(acc - before[l][sg])));
        }
    }
    Ok(worst)
}

/// `max ‖S(Λ₁Λ₂) ∓ S(Λ₁)S(Λ₂)‖` over the two signs.
pub fn projective_composition_residual(l1: &LorentzTransform, l2: &LorentzTransform) -> Result<f64> {
    use crate::spin_algebra::max_abs;
    let s12 = s_matrix(&l1.compose(l2))?;
    let prod = s_matrix(l1)? * s_matrix(l2)?;
    Ok(max_abs(&(s12 - prod)).min(max_abs(&(s12 + prod))))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transformed<T> {
    pub field: T,
    /// Samples whose preimage `Λ⁻¹x` fell outside the grid and were set to zero.
    pub dropped: usize,
}

fn pull_back_samples<V, F>(grid: &Grid4, lambda: &LorentzTransform, values: &[V], zero: V, apply: F) -> (Vec<V>, usize)
where
    V: Copy + std::ops::Add<Output = V> + std::ops::Mul<C64, Output = V>,
    F: Fn(V) -> V,
{
    let inv = lambda.inverse();
    let mut dropped = 0;
    let out = (0..grid.len())
        .map(|k| match grid.stencil(&inv.apply(&grid.point(k))) {
            Some(st) => apply(st.into_iter().fold(zero, |acc, (j, w)| acc + values[j] * c(w))),
            None => {
                dropped += 1;
                zero
            }
        })
        .collect();
    (out, dropped)
}

/// `ψ'_{ΛN}(x) = S(Λ) ψ_N(Λ⁻¹x)`.
pub fn transform_spinor_field(field: &SpinorField, lambda: &LorentzTransform) -> Result<Transformed<SpinorField>> {
    require_cartesian(&field.grid)?;
    let s = s_matrix(lambda)?;
    let (values, dropped) = pull_back_samples(&field.grid, lambda, &field.values, CVec4::zeros(), |v| s * v);
    let inducing = InducingVector::normalized(lambda.apply(&field.inducing.n))?;
    Ok(Transformed { field: SpinorField { grid: field.grid, inducing, values }, dropped })
}

/// `ψ'_{ΛN}(x) = D(Λ, ΛN) ψ_N(Λ⁻¹x)`.
pub fn transform_wavefunction(field: &TwoSpinorField, lambda: &LorentzTransform) -> Result<Transformed<TwoSpinorField>> {
    require_cartesian(&field.grid)?;
    let inducing = InducingVector::normalized(lambda.apply(&field.inducing.n))?;
    let d = wigner_d(lambda, &inducing)?.matrix;
    let (values, dropped) = pull_back_samples(&field.grid, lambda, &field.values, CVec2::zeros(), |v| d * v);
    Ok(Transformed { field: TwoSpinorField { grid: field.grid, inducing, values }, dropped })
}

fn require_cartesian(grid: &Grid4) -> Result<()> {
    if grid.chart != Chart::Cartesian {
        return Err(ShpError::Usage("Lorentz relabelling needs a Cartesian grid".into()));
    }
    Ok(())
}

/// Clebsch–Gordan decomposition of `χ₁ ⊗ χ₂`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpinComposition {
    pub singlet: C64,
    /// Triplet amplitudes for m = +1, 0, −1.
    pub triplet: [C64; 3],
}

pub fn compose_spins(chi1: &CVec2, chi2: &CVec2) -> SpinComposition {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let (u1, d1, u2, d2) = (chi1[0], chi1[1], chi2[0], chi2[1]);
    SpinComposition {
        singlet: (u1 * d2 - d1 * u2) * r,
        triplet: [u1 * u2, (u1 * d2 + d1 * u2) * r, d1 * d2],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin_algebra::{build_gammas, max_abs};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn m2max(m: &CMat2) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn random_lorentz(rng: &mut ChaCha8Rng) -> LorentzTransform {
        let dir = |rng: &mut ChaCha8Rng| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let b = LorentzTransform::boost(rng.random_range(-1.5..1.5), dir(rng)).unwrap();
        let r = LorentzTransform::rotation(rng.random_range(-PI..PI), dir(rng)).unwrap();
        b.compose(&r)
    }

    fn random_n(rng: &mut ChaCha8Rng) -> InducingVector {
        let v = nalgebra::Vector3::<f64>::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        InducingVector::new(Vec4::new((1.0 + v.norm_squared()).sqrt(), v[0], v[1], v[2])).unwrap()
    }

    #[test]
    fn identity_maps_to_identity() {
        let a = SL2CElement::new(CMat2::identity(), Rep::First).unwrap();
        assert!((sl2c_to_lorentz(&a).unwrap().matrix - Mat4::identity()).amax() < 1e-15);
    }

    #[test]
    fn real_exponential_is_z_boost() {
        let alpha = 0.7;
        let s3 = pauli()[2];
        let a = SL2CElement::new((s3 * c(-alpha / 2.0)).exp(), Rep::First).unwrap();
        let l = sl2c_to_lorentz(&a).unwrap();
        let want = LorentzTransform::boost(-alpha, [0.0, 0.0, 1.0]).unwrap();
        assert!((l.matrix - want.matrix).amax() < 1e-12);
    }

    #[test]
    fn imaginary_exponential_is_rotation() {
        let theta = 1.1;
        let s3 = pauli()[2];
        let a = SL2CElement::new((s3 * (I * (-theta / 2.0))).exp(), Rep::First).unwrap();
        let l = sl2c_to_lorentz(&a).unwrap();
        let want = LorentzTransform::rotation(theta, [0.0, 0.0, 1.0]).unwrap();
        assert!((l.matrix - want.matrix).amax() < 1e-12);
    }

    #[test]
    fn defining_relation_in_both_representations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let lam = random_lorentz(&mut rng);
            let a = lift_lorentz(&lam).unwrap();
            assert!((sl2c_to_lorentz(&a).unwrap().matrix - lam.matrix).amax() < 1e-10);
            assert!((sl2c_to_lorentz(&a.dual()).unwrap().matrix - lam.matrix).amax() < 1e-10);
            for _ in 0..10 {
                let n = random_n(&mut rng).n;
                assert!(defining_relation_residual(&a, &lam, &n) < 1e-10);
                assert!(defining_relation_residual(&a.dual(), &lam, &n) < 1e-10);
            }
        }
    }

    #[test]
    fn bad_determinant_is_rejected() {
        assert!(SL2CElement::new(CMat2::identity() * c(2.0), Rep::First).is_err());
    }

    #[test]
    fn boost_maps_rest_to_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(m2max(&(boost_to(&InducingVector::rest()).unwrap().0.matrix - CMat2::identity())) < 1e-15);
        for _ in 0..50 {
            let n = random_n(&mut rng);
            let (l, lb) = boost_to(&n).unwrap();
            let image = sl2c_to_lorentz(&l).unwrap().apply(&Vec4::new(1.0, 0.0, 0.0, 0.0));
            assert!((image - n.n).amax() < 1e-10);
            assert!(m2max(&(l.matrix - l.matrix.adjoint())) < 1e-14);
            let li = l.matrix.try_inverse().unwrap();
            let form = li.adjoint() * li;
            assert!(m2max(&(form + sigma_map(&n.n, Rep::First))) < 1e-10);
            assert!(m2max(&(lb.matrix - li)) < 1e-12);
        }
    }

    #[test]
    fn wigner_d_examples() {
        let n0 = InducingVector::rest();
        let d = wigner_d(&LorentzTransform::identity(), &n0).unwrap();
        assert!(m2max(&(d.matrix - CMat2::identity())) < 1e-14);
        let rot = LorentzTransform::rotation(0.9, [1.0, 2.0, -0.5]).unwrap();
        let d = wigner_d(&rot, &n0).unwrap();
        assert!(m2max(&(d.matrix - lift_lorentz(&rot).unwrap().matrix)) < 1e-12);
        let bz = LorentzTransform::boost(1.3, [0.0, 0.0, 1.0]).unwrap();
        let nz = InducingVector::new(Vec4::new(0.4f64.cosh(), 0.0, 0.0, 0.4f64.sinh())).unwrap();
        for n in [n0, nz] {
            let d = wigner_d(&bz, &n).unwrap();
            assert!(m2max(&(d.matrix - CMat2::identity())) < 1e-12);
        }
    }

    #[test]
    fn wigner_d_is_in_su2_and_cocycle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let (l1, l2, n) = (random_lorentz(&mut rng), random_lorentz(&mut rng), random_n(&mut rng));
            let d = wigner_d(&l1, &n).unwrap();
            assert!(d.unitarity_residual() < 1e-10 && d.det_residual() < 1e-10);
            let lhs = wigner_d(&l1.compose(&l2), &n).unwrap().matrix;
            let n1 = InducingVector::normalized(l1.inverse().apply(&n.n)).unwrap();
            let rhs = d.matrix * wigner_d(&l2, &n1).unwrap().matrix;
            assert!(m2max(&(lhs - rhs)).min(m2max(&(lhs + rhs))) < 1e-8);
        }
    }

    #[test]
    fn s_matches_generator_exponential() {
        let b = build_gammas();
        let theta = 0.8;
        let mut w = Mat4::zeros();
        w[(1, 2)] = theta;
        w[(2, 1)] = -theta;
        let rot = LorentzTransform::rotation(theta, [0.0, 0.0, 1.0]).unwrap();
        assert!(max_abs(&(s_matrix(&rot).unwrap() - s_from_generators(&w, &b))) < 1e-12);
        let alpha = 0.6;
        let mut w = Mat4::zeros();
        w[(0, 3)] = alpha;
        w[(3, 0)] = -alpha;
        let boost = LorentzTransform::boost(alpha, [0.0, 0.0, 1.0]).unwrap();
        assert!(max_abs(&(s_matrix(&boost).unwrap() - s_from_generators(&w, &b))) < 1e-12);
    }

    #[test]
    fn covariance_and_projective_composition() {
        let b = build_gammas();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        assert!(covariance_check(&LorentzTransform::identity(), &InducingVector::rest(), &b).unwrap() < 1e-15);
        for _ in 0..20 {
            let (l1, l2) = (random_lorentz(&mut rng), random_lorentz(&mut rng));
            assert!(covariance_check(&l1, &InducingVector::rest(), &b).unwrap() < 1e-8);
            assert!(covariance_check(&l1, &random_n(&mut rng), &b).unwrap() < 1e-8);
            assert!(projective_composition_residual(&l1, &l2).unwrap() < 1e-8);
        }
    }

    #[test]
    fn assembly_examples() {
        let n = InducingVector::rest();
        let psi = CVec2::new(C64::new(0.3, 0.1), C64::new(-0.2, 0.5));
        let s = assemble_four_spinor(&psi, &psi, &n).unwrap().components;
        let r2 = std::f64::consts::SQRT_2;
        assert!((s[0] - psi[0] * r2).norm() < 1e-15 && (s[1] - psi[1] * r2).norm() < 1e-15);
        assert!(s[2].norm() < 1e-15 && s[3].norm() < 1e-15);
        let s = assemble_four_spinor(&psi, &(-psi), &n).unwrap().components;
        assert!(s[0].norm() < 1e-15 && s[1].norm() < 1e-15);
        assert!(s[2].norm() > 0.1);
    }

    #[test]
    fn assembly_round_trip_and_pointwise_norm() {
        let b = build_gammas();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let mut n = random_n(&mut rng);
            if rng.random::<bool>() {
                n = InducingVector::new(-n.n).unwrap();
            }
            let z = |rng: &mut ChaCha8Rng| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let psi = CVec2::new(z(&mut rng), z(&mut rng));
            let phi = CVec2::new(z(&mut rng), z(&mut rng));
            let s = assemble_four_spinor(&psi, &phi, &n).unwrap();
            let (p2, f2) = decompose_four_spinor(&s).unwrap();
            assert!((p2 - psi).norm() < 1e-12 && (f2 - phi).norm() < 1e-12);
            let form = n.cone.norm_sign() * bilinear_gamma_n(&s.components, &n.n, &b);
            assert!((form - psi.norm_squared() - phi.norm_squared()).abs() < 1e-10);
        }
    }

    fn unit_grid() -> Grid4 {
        Grid4 { chart: Chart::Cartesian, origin: Vec4::zeros(), spacing: Vec4::repeat(0.5), dims: [1; 4] }
    }

    #[test]
    fn single_point_sector_norm() {
        let b = build_gammas();
        let sector = SectorField {
            grid: unit_grid(),
            inducing: InducingVector::rest(),
            psi_hat: vec![CVec2::new(c(1.0), c(0.0))],
            phi_hat: vec![CVec2::zeros()],
        };
        let field = sector.assemble().unwrap();
        let m = MetricField::minkowski();
        assert!((sector_norm(&field, Cone::Upper, &m, &b).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(sector_norm(&field, Cone::Lower, &m, &b), Err(ShpError::Usage(_))));
    }

    #[test]
    fn rotation_by_pi_flips_spin() {
        let field = TwoSpinorField {
            grid: unit_grid(),
            inducing: InducingVector::rest(),
            values: vec![CVec2::new(c(1.0), c(0.0))],
        };
        let out = transform_wavefunction(&field, &LorentzTransform::rotation(PI, [1.0, 0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(out.dropped, 0);
        let v = out.field.values[0];
        assert!(v[0].norm() < 1e-12 && (v[1].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_transform_and_norm_preservation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let grid = Grid4 { chart: Chart::Cartesian, origin: Vec4::new(0.0, -1.0, -1.0, 0.0), spacing: Vec4::repeat(0.5), dims: [1, 5, 5, 2] };
        let values: Vec<CVec2> = (0..grid.len())
            .map(|_| CVec2::new(C64::new(rng.random(), rng.random()), C64::new(rng.random(), rng.random())))
            .collect();
        let field = TwoSpinorField { grid, inducing: InducingVector::rest(), values };
        let same = transform_wavefunction(&field, &LorentzTransform::identity()).unwrap();
        assert_eq!(same.dropped, 0);
        for (a, b) in same.field.values.iter().zip(&field.values) {
            assert!((a - b).norm() < 1e-14);
        }
        let rot = LorentzTransform::rotation(PI / 2.0, [0.0, 0.0, 1.0]).unwrap();
        let out = transform_wavefunction(&field, &rot).unwrap();
        assert_eq!(out.dropped, 0);
        let norm = |v: &[CVec2]| v.iter().map(|x| x.norm_squared()).sum::<f64>();
        assert!((norm(&out.field.values) - norm(&field.values)).abs() < 1e-8);
        let shifted = LorentzTransform::boost(0.5, [1.0, 0.0, 0.0]).unwrap();
        assert!(transform_wavefunction(&field, &shifted).unwrap().dropped > 0);
    }

    #[test]
    fn clebsch_gordan() {
        let up = CVec2::new(c(1.0), c(0.0));
        let down = CVec2::new(c(0.0), c(1.0));
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let c1 = compose_spins(&up, &down);
        assert!((c1.singlet - c(r)).norm() < 1e-15 && (c1.triplet[1] - c(r)).norm() < 1e-15);
        let c2 = compose_spins(&up, &up);
        assert!(c2.singlet.norm() == 0.0 && (c2.triplet[0] - c(1.0)).norm() == 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..20 {
            let chi1 = CVec2::new(C64::new(rng.random(), rng.random()), C64::new(rng.random(), rng.random()));
            let chi2 = CVec2::new(C64::new(rng.random(), rng.random()), C64::new(rng.random(), rng.random()));
            let rot = LorentzTransform::rotation(rng.random_range(0.0..6.0), [0.3, -0.2, 0.9]).unwrap();
            let u = lift_lorentz(&rot).unwrap().matrix;
            let before = compose_spins(&chi1, &chi2).singlet.norm();
            let after = compose_spins(&(u * chi1), &(u * chi2)).singlet.norm();
            assert!((before - after).abs() < 1e-12);
        }
    }
}
