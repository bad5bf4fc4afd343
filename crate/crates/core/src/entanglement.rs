//! Singlet pairs formed at a common inducing vector, separated along
//! geodesics with parallel-transported frames, and their EPR correlations.
//!
//! Each particle carries `N` and a spatial triad transported along its leg.
//! An analyzer is given in the local measurement frame at the end of a leg
//! (chart axes orthonormalized against the transported `N`). Its components
//! in the formation frame are `a′_i = g(A, T_i)` with `T_i` the transported
//! triad, and `E(a, b) = −a′·b′`.

use nalgebra::{Matrix3, SVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, ShpError};
use crate::geometry::{christoffel_at, metric_at, Chart, MetricField, SpacetimePoint, Variance, Vec4};
use crate::ode::rk4_step;
use crate::spin_algebra::C64;
use crate::transport::{orthonormal_triad, transport_matrix, wrap_angle, TransportMode, TransportPath};

#[cfg(test)]
const FRAME_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalFrame {
    /// Unit timelike inducing vector, contravariant.
    pub n: Vec4,
    /// Spatial orthonormal vectors orthogonal to `n`, contravariant.
    pub triad: [Vec4; 3],
    pub basepoint: SpacetimePoint,
}

impl LocalFrame {
    /// Largest deviation from `g(e_a, e_b) = δ_ab`, `g(N, e_a) = 0` and `N·N = −1`.
    pub fn residual(&self, metric: &MetricField) -> Result<f64> {
        let g = metric_at(metric, &self.basepoint)?;
        let mut worst = (self.n.dot(&(g * self.n)) + 1.0).abs();
        for a in 0..3 {
            worst = worst.max(self.n.dot(&(g * self.triad[a])).abs());
            for b in 0..3 {
                let want = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((self.triad[a].dot(&(g * self.triad[b])) - want).abs());
            }
        }
        Ok(worst)
    }

    /// Frame at the same point built afresh from the chart axes and `n`.
    pub fn measurement_frame(&self, metric: &MetricField) -> Result<LocalFrame> {
        let triad = orthonormal_triad(metric, &self.basepoint, &self.n)?;
        Ok(LocalFrame { n: self.n, triad, basepoint: self.basepoint })
    }

    /// `Σ a_k e_k`.
    pub fn vector(&self, a: &AnalyzerDirection) -> Vec4 {
        (0..3).fold(Vec4::zeros(), |acc, k| acc + self.triad[k] * a.direction[k])
    }
}

/// Unit 3-vector in a frame's triad.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalyzerDirection {
    pub direction: [f64; 3],
}

impl AnalyzerDirection {
    pub fn new(direction: [f64; 3]) -> Result<Self> {
        let n = Vector3::from(direction).norm();
        if !((n - 1.0).abs() <= 1e-12) {
            return Err(ShpError::Usage(format!("analyzer must be a unit vector, |a| = {n}")));
        }
        Ok(Self { direction })
    }

    /// `(sin θ, 0, cos θ)`: angle θ from the third axis in the 1–3 plane.
    pub fn in_plane(theta: f64) -> Self {
        Self { direction: [theta.sin(), 0.0, theta.cos()] }
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::from(self.direction)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntangledPair {
    /// Amplitudes on `|↑↑⟩, |↑↓⟩, |↓↑⟩, |↓↓⟩`.
    pub spin_state: [C64; 4],
    pub formation_point: SpacetimePoint,
    pub formation_frame: LocalFrame,
    pub frame_1: LocalFrame,
    pub frame_2: LocalFrame,
    /// Per-leg flags for legs cut short by leaving the chart domain.
    pub truncated: [bool; 2],
}

pub fn singlet() -> [C64; 4] {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    [C64::new(0.0, 0.0), C64::new(r, 0.0), C64::new(-r, 0.0), C64::new(0.0, 0.0)]
}

impl EntangledPair {
    pub fn is_singlet(&self) -> bool {
        let s = singlet();
        let overlap: C64 = self.spin_state.iter().zip(&s).map(|(a, b)| b.conj() * a).sum();
        (overlap.norm() - 1.0).abs() < 1e-12
    }
}

pub fn form_pair(p: &SpacetimePoint, n: &Vec4, metric: &MetricField) -> Result<EntangledPair> {
    let g = metric_at(metric, p)?;
    let nn = n.dot(&(g * n));
    if !(nn < 0.0) {
        return Err(ShpError::Invariant(format!("N is not timelike at the formation point (N·N = {nn})")));
    }
    let n = n / (-nn).sqrt();
    let frame = LocalFrame { n, triad: orthonormal_triad(metric, p, &n)?, basepoint: *p };
    Ok(EntangledPair {
        spin_state: singlet(),
        formation_point: *p,
        formation_frame: frame,
        frame_1: frame,
        frame_2: frame,
        truncated: [false, false],
    })
}

type State24 = SVector<f64, 24>;

fn pack(x: &Vec4, u: &Vec4, f: &LocalFrame) -> State24 {
    let mut y = State24::zeros();
    y.fixed_rows_mut::<4>(0).copy_from(x);
    y.fixed_rows_mut::<4>(4).copy_from(u);
    y.fixed_rows_mut::<4>(8).copy_from(&f.n);
    for k in 0..3 {
        y.fixed_rows_mut::<4>(12 + 4 * k).copy_from(&f.triad[k]);
    }
    y
}

fn slot(y: &State24, i: usize) -> Vec4 {
    y.fixed_rows::<4>(4 * i).into_owned()
}

/// Geodesic with initial velocity `u` and the frame transported along it.
/// Returns the final frame and whether the chart domain was left.
pub fn transport_frame_along_geodesic(
    frame: &LocalFrame,
    velocity: &Vec4,
    length: f64,
    steps: usize,
    metric: &MetricField,
) -> Result<(LocalFrame, bool)> {
    if steps == 0 || !(length.is_finite() && length > 0.0) {
        return Err(ShpError::Usage(format!("need length > 0 and steps ≥ 1, got {length}, {steps}")));
    }
    let g = metric_at(metric, &frame.basepoint)?;
    let uu = velocity.dot(&(g * velocity));
    if !(uu < 0.0) {
        return Err(ShpError::Usage(format!("leg velocity is not timelike (u·u = {uu})")));
    }
    let chart = frame.basepoint.chart;
    let mut rhs = |_: f64, y: &State24| -> Result<State24> {
        let x = SpacetimePoint::new(chart, slot(y, 0));
        let gam = christoffel_at(metric, &x)?;
        let u = slot(y, 1);
        let mut d = State24::zeros();
        d.fixed_rows_mut::<4>(0).copy_from(&u);
        for i in 1..6 {
            d.fixed_rows_mut::<4>(4 * i).copy_from(&(-gam.contract(&u, &slot(y, i))));
        }
        Ok(d)
    };
    let h = length / steps as f64;
    let mut y = pack(&frame.basepoint.coords, velocity, frame);
    let mut truncated = false;
    for i in 0..steps {
        let next = match rk4_step(&mut rhs, i as f64 * h, &y, h) {
            Ok(v) => v,
            Err(ShpError::ChartDomain(_)) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e),
        };
        if metric.check_domain(&SpacetimePoint::new(chart, slot(&next, 0))).is_err() {
            truncated = true;
            break;
        }
        y = next;
    }
    let out = LocalFrame {
        n: slot(&y, 2),
        triad: [slot(&y, 3), slot(&y, 4), slot(&y, 5)],
        basepoint: SpacetimePoint::new(chart, slot(&y, 0)),
    };
    Ok((out, truncated))
}

/// Moves the two particles along geodesics with initial velocities `v1`, `v2`.
pub fn separate(
    pair: &EntangledPair,
    v1: &Vec4,
    v2: &Vec4,
    length: f64,
    steps: usize,
    metric: &MetricField,
) -> Result<EntangledPair> {
    let (f1, t1) = transport_frame_along_geodesic(&pair.frame_1, v1, length, steps, metric)?;
    let (f2, t2) = transport_frame_along_geodesic(&pair.frame_2, v2, length, steps, metric)?;
    Ok(EntangledPair {
        frame_1: f1,
        frame_2: f2,
        truncated: [pair.truncated[0] || t1, pair.truncated[1] || t2],
        ..pair.clone()
    })
}

/// Analyzer components referred to the formation frame, `a′_i = g(A, T_i)`.
pub fn refer_to_formation(frame: &LocalFrame, a: &AnalyzerDirection, metric: &MetricField) -> Result<Vector3<f64>> {
    let g = metric_at(metric, &frame.basepoint)?;
    let m = frame.measurement_frame(metric)?;
    let big_a = m.vector(a);
    Ok(Vector3::from_fn(|i, _| big_a.dot(&(g * frame.triad[i]))))
}

/// `E(a, b) = −a′·b′`.
pub fn correlation(pair: &EntangledPair, a: &AnalyzerDirection, b: &AnalyzerDirection, metric: &MetricField) -> Result<f64> {
    AnalyzerDirection::new(a.direction)?;
    AnalyzerDirection::new(b.direction)?;
    let ap = refer_to_formation(&pair.frame_1, a, metric)?;
    let bp = refer_to_formation(&pair.frame_2, b, metric)?;
    Ok(-ap.dot(&bp))
}

/// Relative rotation between the two measurement frames obtained from the
/// contravariant transport map `H` of `loop_path` (leg 1 reversed, then leg 2):
/// `R_ij = g(M1_i, H⁻¹ M2_j)`, so that `E(a, b) = −aᵀ R b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativeRotation {
    pub matrix: Matrix3<f64>,
    /// Rotation angle in `[0, π]`.
    pub angle: f64,
    /// Unit rotation axis (arbitrary when the angle vanishes).
    pub axis: Vector3<f64>,
}

impl RelativeRotation {
    pub fn correlation(&self, a: &AnalyzerDirection, b: &AnalyzerDirection) -> f64 {
        -a.as_vector().dot(&(self.matrix * b.as_vector()))
    }
}

pub fn holonomy_rotation(pair: &EntangledPair, loop_path: &TransportPath, metric: &MetricField, steps: usize) -> Result<RelativeRotation> {
    let gap = |p: Vec4, q: Vec4| {
        let mut d = p - q;
        if loop_path.chart == Chart::Spherical {
            d[3] = wrap_angle(d[3]);
        }
        d.amax()
    };
    if gap(loop_path.start(), pair.frame_1.basepoint.coords) > 1e-6 || gap(loop_path.end(), pair.frame_2.basepoint.coords) > 1e-6 {
        return Err(ShpError::Usage("loop must run from the end of leg 1 to the end of leg 2".into()));
    }
    let h = transport_matrix(loop_path, metric, TransportMode::Full, Variance::Contravariant, steps)?;
    let h_inv = h.try_inverse().ok_or_else(|| ShpError::Degenerate("singular transport map".into()))?;
    let m1 = pair.frame_1.measurement_frame(metric)?;
    let m2 = pair.frame_2.measurement_frame(metric)?;
    let g = metric_at(metric, &pair.frame_1.basepoint)?;
    let r = Matrix3::from_fn(|i, j| m1.triad[i].dot(&(g * (h_inv * m2.triad[j]))));
    let angle = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
    let w = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let axis = if w.norm() > 1e-12 {
        w.normalize()
    } else {
        // Angle 0 or π: axis from the symmetric part.
        let s = (r + r.transpose()) * 0.5 + Matrix3::identity();
        let col = (0..3).max_by(|&a, &b| s.column(a).norm().total_cmp(&s.column(b).norm())).unwrap_or(2);
        let c = s.column(col).into_owned();
        if c.norm() > 1e-12 {
            c.normalize()
        } else {
            Vector3::z()
        }
    };
    Ok(RelativeRotation { matrix: r, angle, axis })
}

/// Initial velocity, proper length and loop piece for a timelike circular
/// equatorial geodesic of Schwarzschild mass `mass` at radius `r` starting at
/// `(t0, r, π/2, φ0)`. `sense = ±1` selects the direction; the leg sweeps `|Δφ|`.
pub fn circular_leg(mass: f64, r: f64, t0: f64, phi0: f64, sense: f64, sweep: f64) -> Result<(Vec4, f64, TransportPath)> {
    if !(r > 3.0 * mass) {
        return Err(ShpError::ChartDomain(format!("no timelike circular orbit at r = {r} for M = {mass}")));
    }
    let f = 1.0 - 2.0 * mass / r;
    let omega = (mass / r.powi(3)).sqrt();
    let tdot = 1.0 / (f - r * r * omega * omega).sqrt();
    let phidot = sense.signum() * omega * tdot;
    let velocity = Vec4::new(tdot, 0.0, 0.0, phidot);
    let length = sweep.abs() / phidot.abs();
    let half_pi = std::f64::consts::FRAC_PI_2;
    let path = TransportPath::from_fn(
        Chart::Spherical,
        move |l| Vec4::new(t0 + tdot * length * l, r, half_pi, phi0 + phidot * length * l),
        move |_| velocity * length,
        false,
    )?;
    Ok((velocity, length, path))
}

/// Draws `(s₁, s₂)` with `P(s₂ = s₁) = (1 + E)/2` for the singlet correlation `E`.
pub fn epr_outcome_sample<R: Rng>(e: f64, rng: &mut R) -> (i8, i8) {
    let s1: i8 = if rng.random::<bool>() { 1 } else { -1 };
    let same = rng.random::<f64>() < 0.5 * (1.0 + e);
    (s1, if same { s1 } else { -s1 })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleStats {
    pub samples: usize,
    pub mean: f64,
    /// Binomial standard error `√((1 − E²)/n)` of the product mean.
    pub stderr: f64,
}

/// Mean of `s₁s₂` over `samples` draws seeded by `seed`.
pub fn sample_correlation(e: f64, samples: usize, seed: u64) -> SampleStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum: i64 = 0;
    for _ in 0..samples {
        let (a, b) = epr_outcome_sample(e, &mut rng);
        sum += (a * b) as i64;
    }
    let n = samples.max(1) as f64;
    SampleStats { samples, mean: sum as f64 / n, stderr: ((1.0 - e * e).max(0.0) / n).sqrt() }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChshResult {
    pub exact: f64,
    pub sampled: f64,
    /// Sampled correlations for `(a,b), (a,b′), (a′,b), (a′,b′)`.
    pub settings: [SampleStats; 4],
}

/// `S = |E(a,b) − E(a,b′)| + |E(a′,b) + E(a′,b′)|`; setting `k` is sampled with seed `seed + k`.
pub fn chsh(
    pair: &EntangledPair,
    analyzers: [AnalyzerDirection; 4],
    samples: usize,
    seed: u64,
    metric: &MetricField,
) -> Result<ChshResult> {
    let [a, a2, b, b2] = analyzers;
    let e = [
        correlation(pair, &a, &b, metric)?,
        correlation(pair, &a, &b2, metric)?,
        correlation(pair, &a2, &b, metric)?,
        correlation(pair, &a2, &b2, metric)?,
    ];
    let s: Vec<SampleStats> = e.iter().enumerate().map(|(k, &e)| sample_correlation(e, samples, seed.wrapping_add(k as u64))).collect();
    let combine = |v: [f64; 4]| (v[0] - v[1]).abs() + (v[2] + v[3]).abs();
    Ok(ChshResult {
        exact: combine(e),
        sampled: combine([s[0].mean, s[1].mean, s[2].mean, s[3].mean]),
        settings: [s[0], s[1], s[2], s[3]],
    })
}
