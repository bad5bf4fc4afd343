//! Parallel transport along prescribed curves, holonomy of closed loops,
//! geodesic fans, equivalence-class covering and cut detection.
//!
//! Two transport laws are available. [`TransportMode::Reduced`] integrates
//! `dS_μ = −Γ^λ_{μν} dx^ν S_λ` with, in spherical charts, only the
//! connection components `Γ^φ_{rφ}`, `Γ^φ_{θφ}`, `Γ^θ_{φφ}`; on a circle of
//! constant `(t, r, θ)` this is the reduced system
//!
//! ```text
//! dS_r/dφ = −S_φ/r,   dS_θ/dφ = −cotθ S_φ,   dS_φ/dφ = sinθ cosθ S_θ.
//! ```
//!
//! [`TransportMode::Full`] is metric-compatible transport with the complete
//! connection, `dS_μ/dλ = +Γ^λ_{μν} ẋ^ν S_λ`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::SVector;

use crate::dynamics::{acceleration, HamiltonianSpec};
use crate::error::{Result, ShpError};
use crate::geometry::{christoffel_at, metric_at, Chart, ChristoffelTensor, FourVector, MetricField, SpacetimePoint, Variance, Mat4, Vec4};
use crate::ode::{rk4_integrate, rk4_step};

/// Default threshold on `‖H − 1‖_∞` above which a loop needs a cut.
pub const CUT_TOL: f64 = 1e-6;

const CLOSURE_TOL: f64 = 1e-12;
const SERIES_SWITCH: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransportMode {
    Reduced,
    Full,
}

type CurveFn = Arc<dyn Fn(f64) -> Vec4 + Send + Sync>;

#[derive(Clone)]
struct PathSegment {
    curve: CurveFn,
    tangent: CurveFn,
}

/// A piecewise-smooth curve, each piece parametrized by `λ ∈ [0, 1]`.
#[derive(Clone)]
pub struct TransportPath {
    pub chart: Chart,
    segments: Vec<PathSegment>,
    pub closed: bool,
}

impl std::fmt::Debug for TransportPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TransportPath")
            .field("chart", &self.chart)
            .field("segments", &self.segments.len())
            .field("closed", &self.closed)
            .finish()
    }
}

/// Coordinate distance with φ taken modulo 2π in spherical charts.
fn chart_gap(chart: Chart, a: &Vec4, b: &Vec4) -> f64 {
    let mut d = a - b;
    if chart == Chart::Spherical {
        d[3] = wrap_angle(d[3]);
    }
    d.amax()
}

/// Maps an angle to `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

impl TransportPath {
    pub fn from_fn<C, T>(chart: Chart, curve: C, tangent: T, closed: bool) -> Result<Self>
    where
        C: Fn(f64) -> Vec4 + Send + Sync + 'static,
        T: Fn(f64) -> Vec4 + Send + Sync + 'static,
    {
        let path = Self {
            chart,
            segments: vec![PathSegment { curve: Arc::new(curve), tangent: Arc::new(tangent) }],
            closed,
        };
        path.validate_closure()?;
        Ok(path)
    }

    fn validate_closure(&self) -> Result<()> {
        if self.closed {
            let gap = chart_gap(self.chart, &self.start(), &self.end());
            if gap > CLOSURE_TOL {
                return Err(ShpError::Usage(format!("path marked closed but endpoints differ by {gap:e}")));
            }
        }
        Ok(())
    }

    /// Circle of constant `(t, r, θ)` traversed `turns` times with increasing φ from 0.
    pub fn circle(t: f64, r: f64, theta: f64, turns: f64) -> Result<Self> {
        let span = 2.0 * PI * turns;
        let closed = (turns - turns.round()).abs() < 1e-15 && turns != 0.0;
        Self::from_fn(
            Chart::Spherical,
            move |l| Vec4::new(t, r, theta, span * l),
            move |_| Vec4::new(0.0, 0.0, 0.0, span),
            closed,
        )
    }

    pub fn circle_arc(t: f64, r: f64, theta: f64, phi0: f64, phi1: f64) -> Result<Self> {
        let span = phi1 - phi0;
        Self::from_fn(
            Chart::Spherical,
            move |l| Vec4::new(t, r, theta, phi0 + span * l),
            move |_| Vec4::new(0.0, 0.0, 0.0, span),
            false,
        )
    }

    pub fn line(chart: Chart, a: Vec4, b: Vec4) -> Result<Self> {
        Self::from_fn(chart, move |l| a + (b - a) * l, move |_| b - a, false)
    }

    /// Closed polygon through `vertices`, returning to the first.
    pub fn polygon(chart: Chart, vertices: &[Vec4]) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(ShpError::Usage("polygon needs at least two vertices".into()));
        }
        let mut segments = Vec::with_capacity(vertices.len());
        for i in 0..vertices.len() {
            let a = vertices[i];
            let b = vertices[(i + 1) % vertices.len()];
            segments.push(PathSegment {
                curve: Arc::new(move |l| a + (b - a) * l),
                tangent: Arc::new(move |_| b - a),
            });
        }
        Ok(Self { chart, segments, closed: true })
    }

    pub fn start(&self) -> Vec4 {
        (self.segments[0].curve)(0.0)
    }

    pub fn end(&self) -> Vec4 {
        (self.segments[self.segments.len() - 1].curve)(1.0)
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    /// Point at global parameter `λ ∈ [0, 1]`, pieces sharing the interval evenly.
    pub fn point(&self, lambda: f64) -> SpacetimePoint {
        let n = self.segments.len() as f64;
        let s = (lambda.clamp(0.0, 1.0) * n).min(n - 1e-15);
        let i = s.floor() as usize;
        SpacetimePoint::new(self.chart, (self.segments[i].curve)(s - i as f64))
    }

    pub fn reversed(&self) -> Self {
        let segments = self
            .segments
            .iter()
            .rev()
            .map(|seg| {
                let c = seg.curve.clone();
                let t = seg.tangent.clone();
                PathSegment {
                    curve: Arc::new(move |l| c(1.0 - l)),
                    tangent: Arc::new(move |l| -t(1.0 - l)),
                }
            })
            .collect();
        Self { chart: self.chart, segments, closed: self.closed }
    }

    /// `self` followed by `other`; closed when the combined endpoints meet.
    pub fn concat(&self, other: &TransportPath) -> Result<Self> {
        if self.chart != other.chart {
            return Err(ShpError::Usage("cannot join paths on different charts".into()));
        }
        let gap = chart_gap(self.chart, &self.end(), &other.start());
        if gap > 1e-9 {
            return Err(ShpError::Usage(format!("paths do not join: gap {gap:e}")));
        }
        let mut segments = self.segments.clone();
        segments.extend(other.segments.iter().cloned());
        let mut joined = Self { chart: self.chart, segments, closed: false };
        joined.closed = chart_gap(self.chart, &joined.start(), &joined.end()) <= 1e-9;
        Ok(joined)
    }
}

/// The connection restricted to the components kept by the reduced transport law.
fn reduced_connection(metric: &MetricField, x: &SpacetimePoint) -> Result<ChristoffelTensor> {
    let full = christoffel_at(metric, x)?;
    if x.chart != Chart::Spherical {
        return Ok(full);
    }
    let mut kept = ChristoffelTensor { values: [[[0.0; 4]; 4]; 4], basepoint: *x };
    for &(l, m, n) in &[(2, 3, 3), (3, 1, 3), (3, 3, 1), (3, 2, 3), (3, 3, 2)] {
        kept.values[l][m][n] = full.values[l][m][n];
    }
    Ok(kept)
}

/// Matrix `A` with `dS/dλ = A S` for the requested law and index position.
fn generator(metric: &MetricField, x: &SpacetimePoint, xdot: &Vec4, mode: TransportMode, variance: Variance) -> Result<Mat4> {
    let mut a = Mat4::zeros();
    match (mode, variance) {
        (TransportMode::Reduced, Variance::Covariant) => {
            let g = reduced_connection(metric, x)?;
            for m in 0..4 {
                for l in 0..4 {
                    a[(m, l)] = -(0..4).map(|n| g.values[l][m][n] * xdot[n]).sum::<f64>();
                }
            }
        }
        (TransportMode::Full, Variance::Covariant) => {
            let g = christoffel_at(metric, x)?;
            for m in 0..4 {
                for l in 0..4 {
                    a[(m, l)] = (0..4).map(|n| g.values[l][m][n] * xdot[n]).sum::<f64>();
                }
            }
        }
        (TransportMode::Full, Variance::Contravariant) => {
            let g = christoffel_at(metric, x)?;
            for m in 0..4 {
                for l in 0..4 {
                    a[(m, l)] = -(0..4).map(|n| g.values[m][n][l] * xdot[n]).sum::<f64>();
                }
            }
        }
        (TransportMode::Reduced, Variance::Contravariant) => {
            return Err(ShpError::Usage("the reduced transport law is defined for covariant vectors only".into()))
        }
    }
    Ok(a)
}

/// Linear map taking initial components to final ones; `steps` RK4 steps per path piece.
pub fn transport_matrix(
    path: &TransportPath,
    metric: &MetricField,
    mode: TransportMode,
    variance: Variance,
    steps: usize,
) -> Result<Mat4> {
    if steps == 0 {
        return Err(ShpError::Usage("steps must be ≥ 1".into()));
    }
    let mut total = Mat4::identity();
    for seg in &path.segments {
        let rhs = |l: f64, m: &Mat4| -> Result<Mat4> {
            let x = SpacetimePoint::new(path.chart, (seg.curve)(l));
            Ok(generator(metric, &x, &(seg.tangent)(l), mode, variance)? * m)
        };
        total = rk4_integrate(rhs, Mat4::identity(), 0.0, 1.0, steps)? * total;
    }
    Ok(total)
}

fn transport_with(s0: &FourVector, path: &TransportPath, metric: &MetricField, steps: usize, mode: TransportMode) -> Result<FourVector> {
    let start = SpacetimePoint::new(path.chart, path.start());
    if s0.basepoint.chart != path.chart || chart_gap(path.chart, &s0.basepoint.coords, &start.coords) > 1e-9 {
        return Err(ShpError::Usage("vector is not based at the start of the path".into()));
    }
    let m = transport_matrix(path, metric, mode, s0.variance, steps)?;
    let end = SpacetimePoint::new(path.chart, path.end());
    Ok(FourVector { components: m * s0.components, variance: s0.variance, basepoint: end })
}

/// Covariant transport under the reduced law.
pub fn transport_reduced(s0: &FourVector, path: &TransportPath, metric: &MetricField, steps: usize) -> Result<FourVector> {
    if s0.variance != Variance::Covariant {
        return Err(ShpError::Usage("transport_reduced expects a covariant vector".into()));
    }
    transport_with(s0, path, metric, steps, TransportMode::Reduced)
}

/// Metric-compatible transport of a covariant or contravariant vector.
pub fn transport_full(s0: &FourVector, path: &TransportPath, metric: &MetricField, steps: usize) -> Result<FourVector> {
    transport_with(s0, path, metric, steps, TransportMode::Full)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CircleComponents {
    pub s_theta: f64,
    pub s_phi: f64,
    pub s_r: f64,
}

/// Closed-form solution of the reduced circle system with `S_θ(0) = A`,
/// `S_φ(0) = C` and the particular radial constant `S_r(0) = A sinθ cosθ/(k² r)`,
/// `k = |cos θ|`. Undefined at `k = 0`; see [`circle_transport_exact`].
pub fn schwarzschild_circle_closed_form(a: f64, c: f64, theta: f64, r: f64, phi: f64) -> Result<CircleComponents> {
    if !(theta > 0.0 && theta < PI) || !(r > 0.0) {
        return Err(ShpError::ChartDomain(format!("θ = {theta}, r = {r}")));
    }
    let k = theta.cos().abs();
    if k < 1e-12 {
        return Err(ShpError::Usage("k = |cos θ| = 0: use circle_transport_exact for the equatorial limit".into()));
    }
    let (s, co) = theta.sin_cos();
    let (skp, ckp) = (k * phi).sin_cos();
    Ok(CircleComponents {
        s_theta: a * ckp - c * (co / s) / k * skp,
        s_phi: c * ckp + a * (s * co / k) * skp,
        s_r: -(1.0 / (k * r)) * (c * skp - a * (s * co / k) * ckp),
    })
}

/// `sin(kφ)/k`, continuous through `k = 0`.
fn sin_over_k(k: f64, phi: f64) -> f64 {
    let u = k * phi;
    if u.abs() < SERIES_SWITCH {
        phi * (1.0 - u * u / 6.0)
    } else {
        u.sin() / k
    }
}

/// `(1 − cos kφ)/k²`, continuous through `k = 0`.
fn one_minus_cos_over_k2(k: f64, phi: f64) -> f64 {
    let u = k * phi;
    if u.abs() < SERIES_SWITCH {
        phi * phi * (0.5 - u * u / 24.0)
    } else {
        let h = (0.5 * u).sin();
        2.0 * h * h / (k * k)
    }
}

/// Exact solution of the reduced circle system for arbitrary `S_r(0)`, valid for all θ.
pub fn circle_transport_exact(a: f64, c: f64, s_r0: f64, theta: f64, r: f64, phi: f64) -> CircleComponents {
    let k = theta.cos().abs();
    let (s, co) = theta.sin_cos();
    let sk = sin_over_k(k, phi);
    let ck = (k * phi).cos();
    CircleComponents {
        s_theta: a * ck - c * (co / s) * sk,
        s_phi: c * ck + a * s * co * sk,
        s_r: s_r0 - (c / r) * sk - (a * s * co / r) * one_minus_cos_over_k2(k, phi),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HolonomyResult {
    /// Maps initial covariant components to final ones.
    pub matrix: Mat4,
    /// The same map in the orthonormal coframe at the basepoint.
    pub orthonormal: Mat4,
    /// Angle by which the orthonormal `(θ̂, φ̂)` frame (indices 2, 3) turns
    /// relative to transported vectors, in `(−π, π]`.
    pub rotation_angle: f64,
    pub mode: TransportMode,
}

impl HolonomyResult {
    /// Rotation angle in `[0, π]` of the spatial 3 × 3 orthonormal block.
    pub fn spatial_rotation_angle(&self) -> f64 {
        let b = self.orthonormal.fixed_view::<3, 3>(1, 1);
        ((b.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    /// `‖H − 1‖_∞` (maximum row sum).
    pub fn deviation(&self) -> f64 {
        let d = self.matrix - Mat4::identity();
        d.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }
}

/// Columns are an orthonormal frame `e_â` built by Gram–Schmidt from the coordinate basis.
pub fn orthonormal_frame(g: &Mat4) -> Result<Mat4> {
    let mut f = Mat4::zeros();
    let mut signs = [0.0; 4];
    for k in 0..4 {
        let mut v = Vec4::zeros();
        v[k] = 1.0;
        for j in 0..k {
            let e = f.column(j).into_owned();
            v -= e * (signs[j] * e.dot(&(g * v)));
        }
        let n = v.dot(&(g * v));
        if n.abs() < 1e-14 {
            return Err(ShpError::Degenerate("null direction while orthonormalizing".into()));
        }
        signs[k] = n.signum();
        f.set_column(k, &(v / n.abs().sqrt()));
    }
    Ok(f)
}

pub fn holonomy(path: &TransportPath, metric: &MetricField, mode: TransportMode, steps: usize) -> Result<HolonomyResult> {
    if !path.closed {
        return Err(ShpError::Usage("holonomy needs a closed path".into()));
    }
    let matrix = transport_matrix(path, metric, mode, Variance::Covariant, steps)?;
    let base = SpacetimePoint::new(path.chart, path.start());
    let f = orthonormal_frame(&metric_at(metric, &base)?)?;
    let ft = f.transpose();
    let ft_inv = ft.try_inverse().ok_or_else(|| ShpError::Degenerate("singular frame".into()))?;
    let orthonormal = ft * matrix * ft_inv;
    let b = orthonormal.fixed_view::<2, 2>(2, 2);
    let rotation_angle = (b[(0, 1)] - b[(1, 0)]).atan2(b[(0, 0)] + b[(1, 1)]);
    Ok(HolonomyResult { matrix, orthonormal, rotation_angle, mode })
}

/// Full-mode holonomy and whether it departs from the identity by more than `tol`.
pub fn cut_detection(path: &TransportPath, metric: &MetricField, tol: f64, steps: usize) -> Result<(bool, HolonomyResult)> {
    let h = holonomy(path, metric, TransportMode::Full, steps)?;
    Ok((h.deviation() > tol, h))
}

/// Spatial unit vectors orthogonal to `n`, by Gram–Schmidt on the chart axes.
/// Falls back to other axis orderings when a seed axis is degenerate.
pub fn orthonormal_triad(metric: &MetricField, x: &SpacetimePoint, n: &Vec4) -> Result<[Vec4; 3]> {
    let g = metric_at(metric, x)?;
    let nn = n.dot(&(g * n));
    if nn >= 0.0 {
        return Err(ShpError::Invariant("inducing vector is not timelike".into()));
    }
    let n = n / (-nn).sqrt();
    const ORDERS: [[usize; 4]; 4] = [[1, 2, 3, 0], [2, 3, 1, 0], [3, 1, 2, 0], [0, 1, 2, 3]];
    for order in ORDERS {
        let mut out: Vec<Vec4> = Vec::with_capacity(3);
        for &axis in &order {
            if out.len() == 3 {
                break;
            }
            let mut v = Vec4::zeros();
            v[axis] = 1.0;
            v += n * v.dot(&(g * n));
            for e in &out {
                v -= e * e.dot(&(g * v));
            }
            let len2 = v.dot(&(g * v));
            if len2 > 1e-10 {
                out.push(v / len2.sqrt());
            }
        }
        if out.len() == 3 {
            return Ok([out[0], out[1], out[2]]);
        }
    }
    Err(ShpError::Degenerate("could not build a spatial triad".into()))
}

#[derive(Clone, Debug)]
pub struct FanRay {
    pub points: Vec<SpacetimePoint>,
    /// Transported inducing vector (contravariant) at each point.
    pub n_along: Vec<Vec4>,
    pub truncated: bool,
}

type State12 = SVector<f64, 12>;

/// Geodesics from `p` with initial velocities `directions`, carrying `n_p`
/// along each by metric-compatible transport.
pub fn geodesic_fan(
    p: &SpacetimePoint,
    n_p: &Vec4,
    directions: &[Vec4],
    metric: &MetricField,
    length: f64,
    steps: usize,
) -> Result<Vec<FanRay>> {
    if steps == 0 || !(length > 0.0) {
        return Err(ShpError::Usage("fan needs length > 0 and steps ≥ 1".into()));
    }
    let g = metric_at(metric, p)?;
    let nn = n_p.dot(&(g * n_p));
    if (nn + 1.0).abs() > 1e-9 {
        return Err(ShpError::Invariant(format!("N·N = {nn}, expected −1")));
    }
    let spec = HamiltonianSpec::geodesic(metric.clone());
    let chart = p.chart;
    let h = length / steps as f64;
    let mut rhs = |_: f64, y: &State12| -> Result<State12> {
        let x = SpacetimePoint::new(chart, y.fixed_rows::<4>(0).into_owned());
        let u = y.fixed_rows::<4>(4).into_owned();
        let n = y.fixed_rows::<4>(8).into_owned();
        let gamma = christoffel_at(metric, &x)?;
        let mut d = State12::zeros();
        d.fixed_rows_mut::<4>(0).copy_from(&u);
        d.fixed_rows_mut::<4>(4).copy_from(&acceleration(&spec, &x, &u)?);
        d.fixed_rows_mut::<4>(8).copy_from(&-gamma.contract(&u, &n));
        Ok(d)
    };
    let mut rays = Vec::with_capacity(directions.len());
    for dir in directions {
        let mut y = State12::zeros();
        y.fixed_rows_mut::<4>(0).copy_from(&p.coords);
        y.fixed_rows_mut::<4>(4).copy_from(dir);
        y.fixed_rows_mut::<4>(8).copy_from(n_p);
        let mut ray = FanRay { points: vec![*p], n_along: vec![*n_p], truncated: false };
        for i in 0..steps {
            match rk4_step(&mut rhs, i as f64 * h, &y, h) {
                Ok(next) => {
                    let x = SpacetimePoint::new(chart, next.fixed_rows::<4>(0).into_owned());
                    if metric.check_domain(&x).is_err() {
                        ray.truncated = true;
                        break;
                    }
                    ray.points.push(x);
                    ray.n_along.push(next.fixed_rows::<4>(8).into_owned());
                    y = next;
                }
                Err(ShpError::ChartDomain(_)) => {
                    ray.truncated = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        rays.push(ray);
    }
    Ok(rays)
}

/// Fan construction used by [`coverage_classes`]: rays leave each seed with
/// local 3-velocity `speed` along each unit direction of the seed's triad.
#[derive(Clone, Debug)]
pub struct FanSpec {
    pub directions: Vec<[f64; 3]>,
    pub speed: f64,
    pub length: f64,
    pub steps: usize,
}

impl FanSpec {
    /// `count` directions evenly spaced in the plane of triad legs `a` and `b`.
    pub fn planar(count: usize, a: usize, b: usize, speed: f64, length: f64, steps: usize) -> Self {
        let directions = (0..count)
            .map(|i| {
                let ang = 2.0 * PI * i as f64 / count as f64;
                let mut d = [0.0; 3];
                d[a] = ang.cos();
                d[b] = ang.sin();
                d
            })
            .collect();
        Self { directions, speed, length, steps }
    }

    fn velocities(&self, metric: &MetricField, p: &SpacetimePoint, n: &Vec4) -> Result<Vec<Vec4>> {
        if !(self.speed > 0.0 && self.speed < 1.0) {
            return Err(ShpError::Usage(format!("fan speed must lie in (0, 1), got {}", self.speed)));
        }
        let triad = orthonormal_triad(metric, p, n)?;
        let gamma = 1.0 / (1.0 - self.speed * self.speed).sqrt();
        Ok(self
            .directions
            .iter()
            .map(|d| {
                let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                let spatial = (triad[0] * d[0] + triad[1] * d[1] + triad[2] * d[2]) / norm;
                (n + spatial * self.speed) * gamma
            })
            .collect())
    }
}

/// Planar lattice of sample points in one chart.
#[derive(Clone, Debug)]
pub struct SampleGrid {
    pub points: Vec<SpacetimePoint>,
    /// Lattice-adjacent index pairs.
    pub neighbors: Vec<(usize, usize)>,
    /// Proximity threshold, in embedded spatial distance.
    pub resolution: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct GridAxis {
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Periodic axes omit the `hi` endpoint and join the ends.
    pub periodic: bool,
}

impl GridAxis {
    fn value(&self, i: usize) -> f64 {
        if self.count == 1 {
            return self.lo;
        }
        let div = if self.periodic { self.count } else { self.count - 1 };
        self.lo + (self.hi - self.lo) * i as f64 / div as f64
    }
}

impl SampleGrid {
    pub fn plane(chart: Chart, base: Vec4, a: GridAxis, b: GridAxis, resolution: f64) -> Self {
        let mut points = Vec::with_capacity(a.count * b.count);
        for i in 0..a.count {
            for j in 0..b.count {
                let mut c = base;
                c[a.index] = a.value(i);
                c[b.index] = b.value(j);
                points.push(SpacetimePoint::new(chart, c));
            }
        }
        let idx = |i: usize, j: usize| i * b.count + j;
        let mut neighbors = Vec::new();
        for i in 0..a.count {
            for j in 0..b.count {
                if i + 1 < a.count {
                    neighbors.push((idx(i, j), idx(i + 1, j)));
                }
                if j + 1 < b.count {
                    neighbors.push((idx(i, j), idx(i, j + 1)));
                } else if b.periodic && b.count > 2 {
                    neighbors.push((idx(i, j), idx(i, 0)));
                }
            }
        }
        Self { points, neighbors, resolution }
    }
}

#[derive(Clone, Debug)]
pub struct SpinEnsembleChart {
    pub seeds: Vec<(SpacetimePoint, Vec4)>,
    /// Seed index of each grid point.
    pub assignment: Vec<usize>,
    /// Transported inducing vector attached to each grid point.
    pub n_at_point: Vec<Vec4>,
    pub boundary_pairs: Vec<(usize, usize)>,
    /// Largest rapidity between the inducing vectors across a class boundary.
    pub continuity: f64,
}

fn embedded_distance(a: &SpacetimePoint, b: &SpacetimePoint) -> f64 {
    let (p, q) = (a.embedded_position(), b.embedded_position());
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
}

/// Assigns every grid point to the first seed whose fan passes within the grid
/// resolution, taking the inducing vector from the nearest ray sample.
pub fn coverage_classes(
    grid: &SampleGrid,
    seeds: &[(SpacetimePoint, Vec4)],
    fan: &FanSpec,
    metric: &MetricField,
) -> Result<SpinEnsembleChart> {
    if seeds.is_empty() {
        return Err(ShpError::Usage("at least one seed is required".into()));
    }
    let mut fans = Vec::with_capacity(seeds.len());
    for (p, n) in seeds {
        let dirs = fan.velocities(metric, p, n)?;
        fans.push(geodesic_fan(p, n, &dirs, metric, fan.length, fan.steps)?);
    }
    let mut assignment = vec![usize::MAX; grid.points.len()];
    let mut n_at_point = vec![Vec4::zeros(); grid.points.len()];
    for (gi, gp) in grid.points.iter().enumerate() {
        for (si, rays) in fans.iter().enumerate() {
            let mut best = (f64::INFINITY, Vec4::zeros());
            for ray in rays {
                for (pt, n) in ray.points.iter().zip(&ray.n_along) {
                    let d = embedded_distance(gp, pt);
                    if d < best.0 {
                        best = (d, *n);
                    }
                }
            }
            if best.0 <= grid.resolution {
                assignment[gi] = si;
                n_at_point[gi] = best.1;
                break;
            }
        }
    }
    let missing: Vec<usize> = (0..grid.points.len()).filter(|&i| assignment[i] == usize::MAX).collect();
    if !missing.is_empty() {
        return Err(ShpError::IncompleteCover(missing));
    }
    let boundary_pairs: Vec<(usize, usize)> =
        grid.neighbors.iter().copied().filter(|&(a, b)| assignment[a] != assignment[b]).collect();
    let mut continuity: f64 = 0.0;
    for &(a, b) in &boundary_pairs {
        let g = metric_at(metric, &grid.points[a])?;
        let (na, nb) = (n_at_point[a], n_at_point[b]);
        let cosh = -na.dot(&(g * nb)) / ((-na.dot(&(g * na))) * (-nb.dot(&(g * nb)))).sqrt();
        continuity = continuity.max(cosh.max(1.0).acosh());
    }
    Ok(SpinEnsembleChart { seeds: seeds.to_vec(), assignment, n_at_point, boundary_pairs, continuity })
}
