//! Dirac matrices, covariant Pauli tensors `Σ_N`, the `K^μ`, `K_L`, `K_T`
//! operators and the spin–field Hamiltonian.
//!
//! Two normalizations of the gamma matrices are carried. `gamma_bd` is the
//! Dirac-basis set with `{γ̃^μ, γ̃^ν} = 2 diag(1, −1, −1, −1)`; `gamma = i·γ̃`
//! satisfies `{γ^μ, γ^ν} = 2η^{μν}` with `η = diag(−1, 1, 1, 1)`, so that
//! `(γ·N)² = −1`. Spin generators, `K_L` and `K_T` are built from `γ̃`, with all
//! indices moved by η:
//!
//! ```text
//! Σ^{μν} = (i/4)[γ̃^μ, γ̃^ν]       K^μ = Σ^{μν} N_ν
//! K_L = −(p·N)(γ̃·N)               K_T = −2iγ⁵ (p·K)(γ̃·N)
//! ```

use nalgebra::{DMatrix, Matrix2, Matrix4};
use num_complex::Complex64;

use crate::error::{Result, ShpError};
use crate::geometry::{eta, Mat4, Vec4};

pub type C64 = Complex64;
pub type CMat4 = Matrix4<C64>;
pub type CMat2 = Matrix2<C64>;

const TIMELIKE_TOL: f64 = 1e-12;

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Pauli matrices σ¹, σ², σ³.
pub fn pauli() -> [CMat2; 3] {
    let o = c(0.0);
    let one = c(1.0);
    [
        CMat2::new(o, one, one, o),
        CMat2::new(o, -I, I, o),
        CMat2::new(one, o, o, -one),
    ]
}

fn block(a: &CMat2, b: &CMat2, cc: &CMat2, d: &CMat2) -> CMat4 {
    let mut m = CMat4::zeros();
    m.fixed_view_mut::<2, 2>(0, 0).copy_from(a);
    m.fixed_view_mut::<2, 2>(0, 2).copy_from(b);
    m.fixed_view_mut::<2, 2>(2, 0).copy_from(cc);
    m.fixed_view_mut::<2, 2>(2, 2).copy_from(d);
    m
}

/// `diag(a, a)`.
pub fn block_diag(a: &CMat2) -> CMat4 {
    block(a, &CMat2::zeros(), &CMat2::zeros(), a)
}

pub fn commutator(a: &CMat4, b: &CMat4) -> CMat4 {
    a * b - b * a
}

pub fn anticommutator(a: &CMat4, b: &CMat4) -> CMat4 {
    a * b + b * a
}

/// Largest entry modulus.
pub fn max_abs(m: &CMat4) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn real_matrix(m: &Mat4) -> CMat4 {
    m.map(c)
}

/// Record of the Clifford normalization in use.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CliffordConvention {
    /// Diagonal of the metric in `{γ^μ, γ^ν} = 2η^{μν}`.
    pub eta: [f64; 4],
    /// `γ^μ = factor · γ̃^μ`.
    pub factor: C64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GammaBasis {
    /// `{γ^μ, γ^ν} = 2η^{μν}`, η = (−+++).
    pub gamma: [CMat4; 4],
    /// Dirac-basis matrices, `{γ̃^μ, γ̃^ν} = −2η^{μν}`.
    pub gamma_bd: [CMat4; 4],
    /// `iγ⁰γ¹γ²γ³` (identical for both sets).
    pub gamma5: CMat4,
    pub convention: CliffordConvention,
}

pub fn build_gammas() -> GammaBasis {
    let s = pauli();
    let one = CMat2::identity();
    let z = CMat2::zeros();
    let g0 = block(&one, &z, &z, &(-one));
    let gi = |k: usize| block(&z, &(-s[k]), &s[k], &z);
    let gamma_bd = [g0, gi(0), gi(1), gi(2)];
    let gamma = gamma_bd.map(|g| g * I);
    let gamma5 = gamma_bd[0] * gamma_bd[1] * gamma_bd[2] * gamma_bd[3] * I;
    GammaBasis {
        gamma,
        gamma_bd,
        gamma5,
        convention: CliffordConvention { eta: [-1.0, 1.0, 1.0, 1.0], factor: I },
    }
}

impl GammaBasis {
    /// `γ̃^μ v_μ` for covariant `v`.
    pub fn slash_bd_cov(&self, v_cov: &Vec4) -> CMat4 {
        (0..4).fold(CMat4::zeros(), |acc, m| acc + self.gamma_bd[m] * c(v_cov[m]))
    }

    /// `γ̃^μ N_μ` for contravariant `N`.
    pub fn slash_bd(&self, v: &Vec4) -> CMat4 {
        self.slash_bd_cov(&(eta() * v))
    }

    /// `γ^μ N_μ` in the (−+++) normalization.
    pub fn slash(&self, v: &Vec4) -> CMat4 {
        let low = eta() * v;
        (0..4).fold(CMat4::zeros(), |acc, m| acc + self.gamma[m] * c(low[m]))
    }

    /// `Σ^{μν} = (i/4)[γ̃^μ, γ̃^ν]`.
    pub fn sigma(&self) -> [[CMat4; 4]; 4] {
        let mut s = [[CMat4::zeros(); 4]; 4];
        for m in 0..4 {
            for n in 0..4 {
                s[m][n] = commutator(&self.gamma_bd[m], &self.gamma_bd[n]) * (I * 0.25);
            }
        }
        s
    }

    /// Worst residual of `{γ^μ, γ^ν} = 2η^{μν}`.
    pub fn clifford_residual(&self) -> f64 {
        let e = eta();
        let mut worst: f64 = 0.0;
        for m in 0..4 {
            for n in 0..4 {
                let want = CMat4::identity() * c(2.0 * e[(m, n)]);
                worst = worst.max(max_abs(&(anticommutator(&self.gamma[m], &self.gamma[n]) - want)));
            }
        }
        worst
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cone {
    Upper,
    Lower,
}

impl Cone {
    /// `−1` for the upper cone and `+1` for the lower, the ∓ of the norm forms.
    pub fn norm_sign(self) -> f64 {
        match self {
            Cone::Upper => -1.0,
            Cone::Lower => 1.0,
        }
    }
}

/// Timelike unit vector `N^μ` with `η_{μν} N^μ N^ν = −1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InducingVector {
    pub n: Vec4,
    pub cone: Cone,
}

impl InducingVector {
    pub fn new(n: Vec4) -> Result<Self> {
        let nn = n.dot(&(eta() * n));
        if (nn + 1.0).abs() > TIMELIKE_TOL {
            return Err(ShpError::Invariant(format!("N·N = {nn}, expected −1")));
        }
        let cone = if n[0] > 0.0 { Cone::Upper } else { Cone::Lower };
        Ok(Self { n, cone })
    }

    /// Rescales a timelike vector to unit norm.
    pub fn normalized(v: Vec4) -> Result<Self> {
        let nn = v.dot(&(eta() * v));
        if !(nn < 0.0) {
            return Err(ShpError::Invariant(format!("vector with N·N = {nn} is not timelike")));
        }
        Self::new(v / (-nn).sqrt())
    }

    pub fn rest() -> Self {
        Self { n: Vec4::new(1.0, 0.0, 0.0, 0.0), cone: Cone::Upper }
    }

    pub fn lowered(&self) -> Vec4 {
        eta() * self.n
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SigmaN {
    pub inducing: InducingVector,
    /// `Σ^{μν}`.
    pub sigma: [[CMat4; 4]; 4],
    /// `Σ_N^{μν} = Σ^{μν} + K^μ N^ν − K^ν N^μ`.
    pub sigma_n: [[CMat4; 4]; 4],
    /// `K^μ = Σ^{μν} N_ν`.
    pub k_vec: [CMat4; 4],
    /// `π^{λμ} = η^{λμ} + N^λ N^μ`.
    pub projector: Mat4,
}

pub fn sigma_n_build(n: &InducingVector, basis: &GammaBasis) -> SigmaN {
    let sigma = basis.sigma();
    let nl = n.lowered();
    let mut k_vec = [CMat4::zeros(); 4];
    for (m, k) in k_vec.iter_mut().enumerate() {
        *k = (0..4).fold(CMat4::zeros(), |acc, v| acc + sigma[m][v] * c(nl[v]));
    }
    let mut sigma_n = [[CMat4::zeros(); 4]; 4];
    for m in 0..4 {
        for v in 0..4 {
            sigma_n[m][v] = sigma[m][v] + k_vec[m] * c(n.n[v]) - k_vec[v] * c(n.n[m]);
        }
    }
    let projector = eta() + n.n * n.n.transpose();
    SigmaN { inducing: *n, sigma, sigma_n, k_vec, projector }
}

impl SigmaN {
    /// `γ̃_N^μ = γ̃_λ π^{λμ}`.
    pub fn gamma_n_bd(&self, basis: &GammaBasis) -> [CMat4; 4] {
        let e = eta();
        let mut out = [CMat4::zeros(); 4];
        for (m, o) in out.iter_mut().enumerate() {
            for l in 0..4 {
                let low = basis.gamma_bd[l] * c(e[(l, l)]);
                *o += low * c(self.projector[(l, m)]);
            }
        }
        out
    }

    /// `(i/4)[γ̃_N^μ, γ̃_N^ν]`, the second construction of `Σ_N`.
    pub fn sigma_n_from_projected(&self, basis: &GammaBasis) -> [[CMat4; 4]; 4] {
        let gn = self.gamma_n_bd(basis);
        let mut s = [[CMat4::zeros(); 4]; 4];
        for m in 0..4 {
            for v in 0..4 {
                s[m][v] = commutator(&gn[m], &gn[v]) * (I * 0.25);
            }
        }
        s
    }

    /// `p_μ K^μ` for covariant `p`.
    pub fn p_dot_k(&self, p_cov: &Vec4) -> CMat4 {
        (0..4).fold(CMat4::zeros(), |acc, m| acc + self.k_vec[m] * c(p_cov[m]))
    }
}

/// Residuals of the three commutator families of the covariant spin algebra.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlgebraResiduals {
    /// `[K^μ, K^ν] = −iΣ_N^{μν}`.
    pub kk: f64,
    /// `[Σ_N^{μν}, K^λ] = −i(π^{νλ} K^μ − π^{μλ} K^ν)`.
    pub sigma_k: f64,
    /// `[Σ_N^{μν}, Σ_N^{λσ}] = −i(π^{νλ}Σ_N^{μσ} − π^{μλ}Σ_N^{νσ} − π^{νσ}Σ_N^{μλ} + π^{μσ}Σ_N^{νλ})`.
    pub sigma_sigma: f64,
}

impl AlgebraResiduals {
    pub fn max(&self) -> f64 {
        self.kk.max(self.sigma_k).max(self.sigma_sigma)
    }
}

pub fn verify_lorentz_algebra(n: &InducingVector, basis: &GammaBasis) -> AlgebraResiduals {
    let s = sigma_n_build(n, basis);
    let p = &s.projector;
    let sn = &s.sigma_n;
    let k = &s.k_vec;
    let mut kk: f64 = 0.0;
    let mut sigma_k: f64 = 0.0;
    let mut sigma_sigma: f64 = 0.0;
    for m in 0..4 {
        for v in 0..4 {
            kk = kk.max(max_abs(&(commutator(&k[m], &k[v]) + sn[m][v] * I)));
            for l in 0..4 {
                let rhs = (k[m] * c(p[(v, l)]) - k[v] * c(p[(m, l)])) * (-I);
                sigma_k = sigma_k.max(max_abs(&(commutator(&sn[m][v], &k[l]) - rhs)));
                for sg in 0..4 {
                    let rhs = (sn[m][sg] * c(p[(v, l)]) - sn[v][sg] * c(p[(m, l)]) - sn[m][l] * c(p[(v, sg)])
                        + sn[v][l] * c(p[(m, sg)]))
                        * (-I);
                    sigma_sigma = sigma_sigma.max(max_abs(&(commutator(&sn[m][v], &sn[l][sg]) - rhs)));
                }
            }
        }
    }
    AlgebraResiduals { kk, sigma_k, sigma_sigma }
}

/// `(K_L, K_T)` for a covariant momentum eigenvalue `p`.
pub fn k_operators(p_cov: &Vec4, n: &InducingVector, basis: &GammaBasis) -> (CMat4, CMat4) {
    let s = sigma_n_build(n, basis);
    let gn = basis.slash_bd(&n.n);
    let p_dot_n = p_cov.dot(&n.n);
    let kl = gn * c(-p_dot_n);
    let kt = basis.gamma5 * s.p_dot_k(p_cov) * gn * (I * -2.0);
    (kl, kt)
}

/// `K = (1/2M)(p − eA)² + (e/2M) Σ_N^{μν} F_{μν}` with covariant `p`, `A` and `F`.
pub fn spin_em_hamiltonian(
    p_cov: &Vec4,
    a_cov: &Vec4,
    f_cov: &Mat4,
    e: f64,
    mass: f64,
    n: &InducingVector,
    basis: &GammaBasis,
) -> Result<CMat4> {
    check_antisymmetric(f_cov)?;
    let s = sigma_n_build(n, basis);
    let q = p_cov - a_cov * e;
    let q2 = q.dot(&(eta() * q));
    let mut k = CMat4::identity() * c(q2 / (2.0 * mass));
    for m in 0..4 {
        for v in 0..4 {
            k += s.sigma_n[m][v] * c(e / (2.0 * mass) * f_cov[(m, v)]);
        }
    }
    Ok(k)
}

/// `−ieγ⁵ (K^μN^ν − K^νN^μ) F_{μν}`, equal to `i[K_T, K_L]` under minimal coupling.
pub fn dipole_commutator(n: &InducingVector, f_cov: &Mat4, e: f64, basis: &GammaBasis) -> Result<CMat4> {
    check_antisymmetric(f_cov)?;
    let s = sigma_n_build(n, basis);
    let mut acc = CMat4::zeros();
    for m in 0..4 {
        for v in 0..4 {
            acc += (s.k_vec[m] * c(n.n[v]) - s.k_vec[v] * c(n.n[m])) * c(f_cov[(m, v)]);
        }
    }
    Ok(basis.gamma5 * acc * (I * -e))
}

/// Field tensor projected on the surface orthogonal to `N`: `π_μ^α π_ν^β F_{αβ}`.
pub fn project_field(f_cov: &Mat4, n: &InducingVector) -> Mat4 {
    let mixed = Mat4::identity() + n.lowered() * n.n.transpose();
    mixed * f_cov * mixed.transpose()
}

/// `F_{μν}` from electric and magnetic 3-vectors, with `F_{0i} = −E_i` and `F_{ij} = ε_{ijk}B_k`.
pub fn field_tensor(e_field: [f64; 3], b_field: [f64; 3]) -> Mat4 {
    let mut f = Mat4::zeros();
    for i in 0..3 {
        f[(0, i + 1)] = -e_field[i];
        f[(i + 1, 0)] = e_field[i];
    }
    let [bx, by, bz] = b_field;
    f[(1, 2)] = bz;
    f[(2, 1)] = -bz;
    f[(2, 3)] = bx;
    f[(3, 2)] = -bx;
    f[(3, 1)] = by;
    f[(1, 3)] = -by;
    f
}

fn check_antisymmetric(f: &Mat4) -> Result<()> {
    if (f + f.transpose()).amax() > 1e-12 * f.amax().max(1.0) {
        return Err(ShpError::Usage("field tensor must be antisymmetric".into()));
    }
    Ok(())
}

/// Rank of a set of 4 × 4 matrices viewed as vectors in ℂ¹⁶.
pub fn matrix_rank(mats: &[CMat4], tol: f64) -> usize {
    let mut m = DMatrix::<C64>::zeros(16, mats.len());
    for (j, a) in mats.iter().enumerate() {
        for (i, z) in a.iter().enumerate() {
            m[(i, j)] = *z;
        }
    }
    m.svd(false, false).singular_values.iter().filter(|&&s| s > tol).count()
}

/// Residual table for the algebraic identities at one `(p, N)`.
pub fn identity_residuals(p_cov: &Vec4, n: &InducingVector, basis: &GammaBasis) -> Vec<(&'static str, f64)> {
    let s = sigma_n_build(n, basis);
    let (kl, kt) = k_operators(p_cov, n, basis);
    let id = CMat4::identity();
    let pn = p_cov.dot(&n.n);
    let ginv = eta();
    let p2 = p_cov.dot(&(ginv * p_cov));
    let slash = basis.slash(&n.n);
    let alg = verify_lorentz_algebra(n, basis);
    let mut double: f64 = 0.0;
    let proj = s.sigma_n_from_projected(basis);
    for m in 0..4 {
        for v in 0..4 {
            double = double.max(max_abs(&(s.sigma_n[m][v] - proj[m][v])));
        }
    }
    vec![
        ("clifford", basis.clifford_residual()),
        ("gamma_n_squared", max_abs(&(slash * slash + id))),
        ("kk_commutator", alg.kk),
        ("sigma_k_commutator", alg.sigma_k),
        ("sigma_sigma_commutator", alg.sigma_sigma),
        ("sigma_n_double_construction", double),
        ("kl_squared", max_abs(&(kl * kl - id * c(pn * pn)))),
        ("kt_squared", max_abs(&(kt * kt - id * c(p2 + pn * pn)))),
        ("kt2_minus_kl2", max_abs(&(kt * kt - kl * kl - id * c(p2)))),
    ]
}

/// Returns the real matrix `m` as complex.
pub fn complexify(m: &Mat4) -> CMat4 {
    real_matrix(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    fn boosted_z(rapidity: f64) -> InducingVector {
        InducingVector::new(Vec4::new(rapidity.cosh(), 0.0, 0.0, rapidity.sinh())).unwrap()
    }

    #[test]
    fn clifford_relations() {
        let b = build_gammas();
        let a00 = anticommutator(&b.gamma[0], &b.gamma[0]);
        assert!(max_abs(&(a00 + CMat4::identity() * c(2.0))) < 1e-15);
        assert!(max_abs(&anticommutator(&b.gamma[1], &b.gamma[2])) < 1e-15);
        assert!(b.clifford_residual() < 1e-15);
    }

    #[test]
    fn gamma5_anticommutes_and_squares_to_one() {
        let b = build_gammas();
        for g in &b.gamma {
            assert!(max_abs(&anticommutator(&b.gamma5, g)) < 1e-15);
        }
        assert!(max_abs(&(b.gamma5 * b.gamma5 - CMat4::identity())) < 1e-15);
    }

    #[test]
    fn slash_n_squares_to_minus_one() {
        let b = build_gammas();
        for n in [InducingVector::rest(), boosted_z(0.7)] {
            let s = b.slash(&n.n);
            assert!(max_abs(&(s * s + CMat4::identity())) < 1e-14);
        }
    }

    #[test]
    fn rest_frame_pauli_reduction() {
        let b = build_gammas();
        let s = sigma_n_build(&InducingVector::rest(), &b);
        let p = pauli();
        for (i, j, k) in [(1, 2, 2), (2, 3, 0), (3, 1, 1)] {
            let want = block_diag(&(p[k] * c(0.5)));
            assert!(max_abs(&(s.sigma_n[i][j] - want)) < 1e-15);
            assert!(max_abs(&s.sigma_n[0][i]) < 1e-15);
        }
        assert_eq!(s.projector, Mat4::from_diagonal(&Vec4::new(0.0, 1.0, 1.0, 1.0)));
    }

    #[test]
    fn transversality_for_boosted_n() {
        let b = build_gammas();
        let n = boosted_z(1.0);
        let s = sigma_n_build(&n, &b);
        let nl = n.lowered();
        let kn = (0..4).fold(CMat4::zeros(), |acc, m| acc + s.k_vec[m] * c(n.n[m] * (eta()[(m, m)])));
        assert!(max_abs(&kn) < 1e-12);
        for v in 0..4 {
            let row = (0..4).fold(CMat4::zeros(), |acc, m| acc + s.sigma_n[m][v] * c(nl[m]));
            assert!(max_abs(&row) < 1e-12);
        }
        let pn = s.projector * nl;
        assert!(pn.amax() < 1e-12);
        let mixed = s.projector * eta();
        assert!((mixed * mixed - mixed).amax() < 1e-12);
    }

    #[test]
    fn rest_frame_kk_commutator() {
        let b = build_gammas();
        let s = sigma_n_build(&InducingVector::rest(), &b);
        let lhs = commutator(&s.k_vec[1], &s.k_vec[2]);
        let want = block_diag(&(pauli()[2] * (I * -0.5)));
        assert!(max_abs(&(lhs - want)) < 1e-15);
    }

    #[test]
    fn three_independent_generators() {
        let b = build_gammas();
        for n in [InducingVector::rest(), boosted_z(-0.8)] {
            let s = sigma_n_build(&n, &b);
            assert_eq!(matrix_rank(&s.k_vec, 1e-9), 3);
            let pairs: Vec<CMat4> = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
                .iter()
                .map(|&(m, v)| s.sigma_n[m][v])
                .collect();
            assert_eq!(matrix_rank(&pairs, 1e-9), 3);
        }
    }

    #[test]
    fn k_operator_identities_and_commutation() {
        let b = build_gammas();
        let n = boosted_z(0.4);
        let p = Vec4::new(-1.3, 0.2, 0.5, -0.1);
        for (name, r) in identity_residuals(&p, &n, &b) {
            assert!(r < 1e-12, "{name}: {r}");
        }
        let (kl, kt) = k_operators(&p, &n, &b);
        assert!(max_abs(&commutator(&kl, &kt)) < 1e-12);
    }

    #[test]
    fn k_operators_match_gamma_p_decomposition() {
        let b = build_gammas();
        let n = boosted_z(0.9);
        let p = Vec4::new(0.7, -0.4, 1.1, 0.3);
        let (kl, kt) = k_operators(&p, &n, &b);
        let gp = b.slash_bd_cov(&p);
        let gn = b.slash_bd(&n.n);
        let kl2 = (gp + gn * gp * gn) * c(0.5);
        let kt2 = b.gamma5 * (gp - gn * gp * gn) * c(0.5);
        assert!(max_abs(&(kl - kl2)) < 1e-12);
        assert!(max_abs(&(kt - kt2)) < 1e-12);
    }

    #[test]
    fn k_operators_hermitian_in_weighted_form() {
        let b = build_gammas();
        let n = boosted_z(0.5);
        let p = Vec4::new(-1.1, 0.3, -0.2, 0.6);
        let (kl, kt) = k_operators(&p, &n, &b);
        let w = b.gamma_bd[0] * b.slash_bd(&n.n) * c(-1.0);
        assert!(max_abs(&(w - w.adjoint())) < 1e-14);
        for k in [kl, kt] {
            let wk = w * k;
            assert!(max_abs(&(wk - wk.adjoint())) < 1e-12, "{}", max_abs(&(wk - wk.adjoint())));
        }
    }

    #[test]
    fn electric_field_does_not_couple_at_rest() {
        let b = build_gammas();
        let n = InducingVector::rest();
        let f = field_tensor([0.3, -0.2, 0.9], [0.0; 3]);
        let p = Vec4::new(-1.0, 0.2, 0.0, 0.0);
        let k = spin_em_hamiltonian(&p, &Vec4::zeros(), &f, 1.5, 2.0, &n, &b).unwrap();
        let free = spin_em_hamiltonian(&p, &Vec4::zeros(), &Mat4::zeros(), 1.5, 2.0, &n, &b).unwrap();
        assert!(max_abs(&(k - free)) < 1e-15);
        let p2 = p.dot(&(eta() * p));
        assert!(max_abs(&(free - CMat4::identity() * c(p2 / 4.0))) < 1e-15);
    }

    #[test]
    fn magnetic_field_gives_pauli_term() {
        let b = build_gammas();
        let n = InducingVector::rest();
        let bf = [0.2, -0.5, 0.7];
        let (e, m) = (1.3, 2.0);
        let k = spin_em_hamiltonian(&Vec4::zeros(), &Vec4::zeros(), &field_tensor([0.0; 3], bf), e, m, &n, &b).unwrap();
        let s = pauli();
        let sb = s[0] * c(bf[0]) + s[1] * c(bf[1]) + s[2] * c(bf[2]);
        let want = block_diag(&(sb * c(e / (2.0 * m))));
        assert!(max_abs(&(k - want)) < 1e-14);
    }

    #[test]
    fn projected_field_gives_same_hamiltonian() {
        let b = build_gammas();
        let n = boosted_z(0.6);
        let f = field_tensor([0.3, -0.4, 0.2], [0.5, 0.1, -0.3]);
        let p = Vec4::new(-1.0, 0.1, 0.2, 0.3);
        let a = Vec4::new(0.1, 0.0, -0.2, 0.05);
        let k1 = spin_em_hamiltonian(&p, &a, &f, 0.8, 1.0, &n, &b).unwrap();
        let k2 = spin_em_hamiltonian(&p, &a, &project_field(&f, &n), 0.8, 1.0, &n, &b).unwrap();
        assert!(max_abs(&(k1 - k2)) < 1e-13);
    }

    #[test]
    fn non_antisymmetric_field_is_rejected() {
        let b = build_gammas();
        let r = spin_em_hamiltonian(&Vec4::zeros(), &Vec4::zeros(), &Mat4::identity(), 1.0, 1.0, &InducingVector::rest(), &b);
        assert!(matches!(r, Err(ShpError::Usage(_))));
    }

    #[test]
    fn dipole_matches_operator_ordering() {
        // With K_T = T^μ π_μ, K_L = L^μ π_μ and [π_μ, π_ν] = ieF_{μν}:
        // [K_T, K_L] = ie F_{μν} ½(T^μ L^ν + L^ν T^μ).
        let b = build_gammas();
        let e = 0.7;
        let f = field_tensor([0.4, -0.1, 0.3], [0.2, 0.6, -0.5]);
        for n in [InducingVector::rest(), boosted_z(0.8)] {
            let s = sigma_n_build(&n, &b);
            let gn = b.slash_bd(&n.n);
            let t: Vec<CMat4> = (0..4).map(|m| b.gamma5 * s.k_vec[m] * gn * (I * -2.0)).collect();
            let l: Vec<CMat4> = (0..4).map(|m| gn * c(-n.n[m])).collect();
            let mut comm = CMat4::zeros();
            for m in 0..4 {
                for v in 0..4 {
                    comm += (t[m] * l[v] + l[v] * t[m]) * (I * (0.5 * e * f[(m, v)]));
                }
            }
            let closed = dipole_commutator(&n, &f, e, &b).unwrap();
            assert!(max_abs(&(comm * I - closed)) < 1e-13);
        }
    }

    #[test]
    fn dipole_rest_frame_spectrum() {
        let b = build_gammas();
        let (e, e1) = (0.5, 1.6);
        let d = dipole_commutator(&InducingVector::rest(), &field_tensor([e1, 0.0, 0.0], [0.0; 3]), e, &b).unwrap();
        assert!(max_abs(&(d - d.adjoint())) < 1e-15);
        let mut ev: Vec<f64> = hermitian_eigenvalues(&d);
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let want = [-e * e1, -e * e1, e * e1, e * e1];
        for (a, w) in ev.iter().zip(want) {
            assert!((a - w).abs() < 1e-12);
        }
        assert!(max_abs(&dipole_commutator(&InducingVector::rest(), &Mat4::zeros(), e, &b).unwrap()) == 0.0);
    }

    #[test]
    fn dipole_spectrum_invariant_under_boost() {
        use crate::induced_rep::LorentzTransform;
        let b = build_gammas();
        let n = InducingVector::rest();
        let f = field_tensor([0.7, -0.3, 0.2], [0.1, 0.4, -0.6]);
        let d0 = dipole_commutator(&n, &f, 1.2, &b).unwrap();
        for (rap, dir) in [(0.8, [1.0, 0.0, 0.0]), (1.4, [0.2, -0.7, 0.4])] {
            let lam = LorentzTransform::boost(rap, dir).unwrap();
            let inv = lam.inverse().matrix;
            let f2 = inv.transpose() * f * inv;
            let n2 = InducingVector::normalized(lam.apply(&n.n)).unwrap();
            let d1 = dipole_commutator(&n2, &f2, 1.2, &b).unwrap();
            let (mut p0, mut p1) = (CMat4::identity(), CMat4::identity());
            for _ in 0..4 {
                p0 *= d0;
                p1 *= d1;
                assert!((p0.trace() - p1.trace()).norm() < 1e-10);
            }
        }
    }

    /// Eigenvalues of a Hermitian 4 × 4 matrix through its real 8 × 8 embedding.
    fn hermitian_eigenvalues(h: &CMat4) -> Vec<f64> {
        let mut r = nalgebra::SMatrix::<f64, 8, 8>::zeros();
        for i in 0..4 {
            for j in 0..4 {
                r[(i, j)] = h[(i, j)].re;
                r[(i + 4, j + 4)] = h[(i, j)].re;
                r[(i, j + 4)] = -h[(i, j)].im;
                r[(i + 4, j)] = h[(i, j)].im;
            }
        }
        let mut ev: Vec<f64> = SymmetricEigen::new(r).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev.iter().step_by(2).copied().collect()
    }

    #[test]
    fn non_unit_n_is_rejected() {
        assert!(InducingVector::new(Vec4::new(1.0, 0.1, 0.0, 0.0)).is_err());
        assert!(InducingVector::normalized(Vec4::new(0.1, 1.0, 0.0, 0.0)).is_err());
        let lower = InducingVector::new(Vec4::new(-1.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(lower.cone, Cone::Lower);
    }
}
