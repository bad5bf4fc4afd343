//! Metrics, Christoffel symbols, index gymnastics, diffeomorphism pullbacks
//! and numerical Poisson-bracket invariance.
//!
//! Signature is (−,+,+,+) throughout. Coordinates are stored as
//! `Vector4<f64>` and tagged with a [`Chart`]; spherical charts use
//! `(t, r, θ, φ)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix4, SMatrix, SVector, SymmetricEigen, Vector4};

use crate::error::{Result, ShpError};

pub type Vec4 = Vector4<f64>;
pub type Mat4 = Matrix4<f64>;

/// Margin kept from coordinate singularities (horizon, poles).
pub const DOMAIN_EPS: f64 = 1e-9;

/// Relative step of the finite-difference connection.
pub const FD_STEP: f64 = 1e-4;

/// The flat metric `diag(−1, 1, 1, 1)`.
pub fn eta() -> Mat4 {
    Mat4::from_diagonal(&Vec4::new(-1.0, 1.0, 1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Chart {
    Cartesian,
    Spherical,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpacetimePoint {
    pub coords: Vec4,
    pub chart: Chart,
}

impl SpacetimePoint {
    pub fn new(chart: Chart, coords: Vec4) -> Self {
        Self { coords, chart }
    }

    pub fn cartesian(t: f64, x: f64, y: f64, z: f64) -> Self {
        Self::new(Chart::Cartesian, Vec4::new(t, x, y, z))
    }

    pub fn spherical(t: f64, r: f64, theta: f64, phi: f64) -> Self {
        Self::new(Chart::Spherical, Vec4::new(t, r, theta, phi))
    }

    /// Spatial position embedded in Euclidean 3-space, used for proximity tests.
    pub fn embedded_position(&self) -> [f64; 3] {
        let c = &self.coords;
        match self.chart {
            Chart::Cartesian => [c[1], c[2], c[3]],
            Chart::Spherical => {
                let (r, th, ph) = (c[1], c[2], c[3]);
                [r * th.sin() * ph.cos(), r * th.sin() * ph.sin(), r * th.cos()]
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variance {
    Contravariant,
    Covariant,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FourVector {
    pub components: Vec4,
    pub variance: Variance,
    pub basepoint: SpacetimePoint,
}

impl FourVector {
    pub fn contravariant(components: Vec4, basepoint: SpacetimePoint) -> Self {
        Self { components, variance: Variance::Contravariant, basepoint }
    }

    pub fn covariant(components: Vec4, basepoint: SpacetimePoint) -> Self {
        Self { components, variance: Variance::Covariant, basepoint }
    }

    pub fn raise(&self, metric: &MetricField) -> Result<FourVector> {
        if self.variance != Variance::Covariant {
            return Err(ShpError::Usage("raise_index expects a covariant vector".into()));
        }
        let ginv = metric.inverse_at(&self.basepoint)?;
        Ok(Self::contravariant(ginv * self.components, self.basepoint))
    }

    pub fn lower(&self, metric: &MetricField) -> Result<FourVector> {
        if self.variance != Variance::Contravariant {
            return Err(ShpError::Usage("lower_index expects a contravariant vector".into()));
        }
        let g = metric_at(metric, &self.basepoint)?;
        Ok(Self::covariant(g * self.components, self.basepoint))
    }
}

pub fn raise_index(v: &FourVector, metric: &MetricField) -> Result<FourVector> {
    v.raise(metric)
}

pub fn lower_index(v: &FourVector, metric: &MetricField) -> Result<FourVector> {
    v.lower(metric)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChristoffelMode {
    Analytic,
    FiniteDifference,
}

type MetricFn = Arc<dyn Fn(&Vec4) -> Mat4 + Send + Sync>;

#[derive(Clone)]
pub enum MetricKind {
    /// η in a Cartesian chart.
    Minkowski,
    /// Flat space in a spherical chart.
    MinkowskiSpherical,
    Schwarzschild { mass: f64 },
    /// `diag(−1, 1, R², R² sin²θ)`: the angular block of a fixed-radius slice,
    /// with the radial coordinate left flat.
    SphereSlice { radius: f64 },
    /// `diag(−1, (1 + a sin x¹)², 1, 1)`, so that √g = 1 + a sin x¹.
    SinWarp { amplitude: f64 },
    /// `diag(−1, 1 + a tanh x¹, 1, 1)`.
    TanhWarp { amplitude: f64 },
    /// η pulled back through a diffeomorphism into its source chart.
    Pullback(Diffeomorphism),
    Custom { chart: Chart, eval: MetricFn },
}

impl fmt::Debug for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Minkowski => write!(f, "Minkowski"),
            Self::MinkowskiSpherical => write!(f, "MinkowskiSpherical"),
            Self::Schwarzschild { mass } => write!(f, "Schwarzschild {{ mass: {mass} }}"),
            Self::SphereSlice { radius } => write!(f, "SphereSlice {{ radius: {radius} }}"),
            Self::SinWarp { amplitude } => write!(f, "SinWarp {{ amplitude: {amplitude} }}"),
            Self::TanhWarp { amplitude } => write!(f, "TanhWarp {{ amplitude: {amplitude} }}"),
            Self::Pullback(d) => write!(f, "Pullback({d:?})"),
            Self::Custom { chart, .. } => write!(f, "Custom {{ chart: {chart:?} }}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MetricField {
    pub kind: MetricKind,
    pub mode: ChristoffelMode,
}

impl MetricField {
    pub fn minkowski() -> Self {
        Self { kind: MetricKind::Minkowski, mode: ChristoffelMode::Analytic }
    }

    pub fn minkowski_spherical() -> Self {
        Self { kind: MetricKind::MinkowskiSpherical, mode: ChristoffelMode::Analytic }
    }

    pub fn schwarzschild(mass: f64) -> Result<Self> {
        if !(mass.is_finite() && mass >= 0.0) {
            return Err(ShpError::Usage(format!("Schwarzschild mass must be ≥ 0, got {mass}")));
        }
        Ok(Self { kind: MetricKind::Schwarzschild { mass }, mode: ChristoffelMode::Analytic })
    }

    pub fn sphere_slice(radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(ShpError::Usage(format!("sphere radius must be > 0, got {radius}")));
        }
        Ok(Self { kind: MetricKind::SphereSlice { radius }, mode: ChristoffelMode::Analytic })
    }

    pub fn sin_warp(amplitude: f64) -> Result<Self> {
        if !(amplitude.is_finite() && amplitude.abs() < 1.0) {
            return Err(ShpError::Usage(format!("warp amplitude must satisfy |a| < 1, got {amplitude}")));
        }
        Ok(Self { kind: MetricKind::SinWarp { amplitude }, mode: ChristoffelMode::Analytic })
    }

    pub fn tanh_warp(amplitude: f64) -> Result<Self> {
        if !(amplitude.is_finite() && amplitude.abs() < 1.0) {
            return Err(ShpError::Usage(format!("warp amplitude must satisfy |a| < 1, got {amplitude}")));
        }
        Ok(Self { kind: MetricKind::TanhWarp { amplitude }, mode: ChristoffelMode::Analytic })
    }

    pub fn pullback(diffeo: Diffeomorphism) -> Self {
        Self { kind: MetricKind::Pullback(diffeo), mode: ChristoffelMode::Analytic }
    }

    pub fn custom<F>(chart: Chart, eval: F) -> Self
    where
        F: Fn(&Vec4) -> Mat4 + Send + Sync + 'static,
    {
        Self { kind: MetricKind::Custom { chart, eval: Arc::new(eval) }, mode: ChristoffelMode::FiniteDifference }
    }

    pub fn with_mode(mut self, mode: ChristoffelMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn chart(&self) -> Chart {
        match &self.kind {
            MetricKind::Minkowski | MetricKind::SinWarp { .. } | MetricKind::TanhWarp { .. } => {
                Chart::Cartesian
            }
            MetricKind::MinkowskiSpherical
            | MetricKind::Schwarzschild { .. }
            | MetricKind::SphereSlice { .. } => Chart::Spherical,
            MetricKind::Pullback(d) => d.source_chart(),
            MetricKind::Custom { chart, .. } => *chart,
        }
    }

    pub fn is_flat_cartesian(&self) -> bool {
        matches!(self.kind, MetricKind::Minkowski)
    }

    /// Rejects points outside the chart domain.
    pub fn check_domain(&self, x: &SpacetimePoint) -> Result<()> {
        if x.chart != self.chart() {
            return Err(ShpError::Usage(format!(
                "point in {:?} chart given to a metric on the {:?} chart",
                x.chart,
                self.chart()
            )));
        }
        let c = &x.coords;
        if c.iter().any(|v| !v.is_finite()) {
            return Err(ShpError::ChartDomain(format!("non-finite coordinates {:?}", c.as_slice())));
        }
        if x.chart == Chart::Spherical {
            let th = c[2];
            if !(th > DOMAIN_EPS && th < std::f64::consts::PI - DOMAIN_EPS) {
                return Err(ShpError::ChartDomain(format!("θ = {th} outside (0, π)")));
            }
            let r_min = match self.kind {
                MetricKind::Schwarzschild { mass } => 2.0 * mass,
                MetricKind::SphereSlice { .. } => f64::NEG_INFINITY,
                _ => 0.0,
            };
            if c[1] <= r_min + DOMAIN_EPS {
                return Err(ShpError::ChartDomain(format!("r = {} not above {r_min}", c[1])));
            }
        }
        Ok(())
    }

    fn eval_raw(&self, c: &Vec4) -> Mat4 {
        match &self.kind {
            MetricKind::Minkowski => eta(),
            MetricKind::MinkowskiSpherical => schwarzschild_metric(0.0, c),
            MetricKind::Schwarzschild { mass } => schwarzschild_metric(*mass, c),
            MetricKind::SphereSlice { radius } => {
                let s = c[2].sin();
                Mat4::from_diagonal(&Vec4::new(-1.0, 1.0, radius * radius, radius * radius * s * s))
            }
            MetricKind::SinWarp { amplitude } => {
                let a = 1.0 + amplitude * c[1].sin();
                Mat4::from_diagonal(&Vec4::new(-1.0, a * a, 1.0, 1.0))
            }
            MetricKind::TanhWarp { amplitude } => {
                Mat4::from_diagonal(&Vec4::new(-1.0, 1.0 + amplitude * c[1].tanh(), 1.0, 1.0))
            }
            MetricKind::Pullback(d) => pullback_metric(d, c, |_| eta()),
            MetricKind::Custom { eval, .. } => eval(c),
        }
    }

    pub fn inverse_at(&self, x: &SpacetimePoint) -> Result<Mat4> {
        let g = metric_at(self, x)?;
        g.try_inverse()
            .ok_or_else(|| ShpError::Degenerate(format!("singular metric at {:?}", x.coords.as_slice())))
    }

    /// Inner product `g_{μν} a^μ b^ν` of two contravariant vectors.
    pub fn dot(&self, x: &SpacetimePoint, a: &Vec4, b: &Vec4) -> Result<f64> {
        Ok(a.dot(&(metric_at(self, x)? * b)))
    }

    fn analytic_christoffel(&self, c: &Vec4) -> Option<[[[f64; 4]; 4]; 4]> {
        let mut g = [[[0.0; 4]; 4]; 4];
        match &self.kind {
            MetricKind::Minkowski => {}
            MetricKind::MinkowskiSpherical => schwarzschild_christoffel(0.0, c, &mut g),
            MetricKind::Schwarzschild { mass } => schwarzschild_christoffel(*mass, c, &mut g),
            MetricKind::SphereSlice { .. } => {
                let (s, co) = c[2].sin_cos();
                g[2][3][3] = -s * co;
                g[3][2][3] = co / s;
                g[3][3][2] = co / s;
            }
            MetricKind::SinWarp { amplitude } => {
                g[1][1][1] = amplitude * c[1].cos() / (1.0 + amplitude * c[1].sin());
            }
            MetricKind::TanhWarp { amplitude } => {
                let sech = 1.0 / c[1].cosh();
                g[1][1][1] = 0.5 * amplitude * sech * sech / (1.0 + amplitude * c[1].tanh());
            }
            MetricKind::Pullback(d) => {
                // flat target: Γ^λ_{μν} = (J⁻¹)^λ_α ∂_μ∂_ν ξ^α
                let jinv = d.inverse_jacobian(c);
                let h = d.hessian(c);
                for l in 0..4 {
                    for m in 0..4 {
                        for n in 0..4 {
                            g[l][m][n] = (0..4).map(|a| jinv[(l, a)] * h[a][(m, n)]).sum();
                        }
                    }
                }
            }
            MetricKind::Custom { .. } => return None,
        }
        Some(g)
    }
}

fn schwarzschild_metric(mass: f64, c: &Vec4) -> Mat4 {
    let r = c[1];
    let s = c[2].sin();
    let f = 1.0 - 2.0 * mass / r;
    Mat4::from_diagonal(&Vec4::new(-f, 1.0 / f, r * r, r * r * s * s))
}

fn schwarzschild_christoffel(mass: f64, c: &Vec4, g: &mut [[[f64; 4]; 4]; 4]) {
    let r = c[1];
    let (s, co) = c[2].sin_cos();
    let f = 1.0 - 2.0 * mass / r;
    let a = mass / (r * r * f);
    g[0][0][1] = a;
    g[0][1][0] = a;
    g[1][0][0] = mass * f / (r * r);
    g[1][1][1] = -a;
    g[1][2][2] = -r * f;
    g[1][3][3] = -r * f * s * s;
    g[2][1][2] = 1.0 / r;
    g[2][2][1] = 1.0 / r;
    g[2][3][3] = -s * co;
    g[3][1][3] = 1.0 / r;
    g[3][3][1] = 1.0 / r;
    g[3][2][3] = co / s;
    g[3][3][2] = co / s;
}

/// Metric components at `x`, after domain and (for general metrics) signature checks.
pub fn metric_at(metric: &MetricField, x: &SpacetimePoint) -> Result<Mat4> {
    metric.check_domain(x)?;
    let g = metric.eval_raw(&x.coords);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(ShpError::ChartDomain(format!("metric not finite at {:?}", x.coords.as_slice())));
    }
    if matches!(metric.kind, MetricKind::Pullback(_) | MetricKind::Custom { .. }) {
        if (g - g.transpose()).amax() > 1e-12 * g.amax().max(1.0) {
            return Err(ShpError::Degenerate("metric is not symmetric".into()));
        }
        let (neg, pos) = signature_counts(&g);
        if (neg, pos) != (1, 3) {
            return Err(ShpError::Degenerate(format!(
                "signature ({neg} negative, {pos} positive) at {:?}",
                x.coords.as_slice()
            )));
        }
    }
    Ok(g)
}

/// Numbers of strictly negative and strictly positive eigenvalues.
pub fn signature_counts(g: &Mat4) -> (usize, usize) {
    let eig = SymmetricEigen::new(*g);
    let scale = g.amax().max(1.0) * 1e-12;
    let neg = eig.eigenvalues.iter().filter(|&&v| v < -scale).count();
    let pos = eig.eigenvalues.iter().filter(|&&v| v > scale).count();
    (neg, pos)
}

/// Γ^λ_{μν}, stored as `values[λ][μ][ν]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChristoffelTensor {
    pub values: [[[f64; 4]; 4]; 4],
    pub basepoint: SpacetimePoint,
}

impl ChristoffelTensor {
    pub fn get(&self, l: usize, m: usize, n: usize) -> f64 {
        self.values[l][m][n]
    }

    /// `Γ^σ_{λγ} a^λ b^γ`.
    pub fn contract(&self, a: &Vec4, b: &Vec4) -> Vec4 {
        let mut out = Vec4::zeros();
        for s in 0..4 {
            let mut acc = 0.0;
            for l in 0..4 {
                for g in 0..4 {
                    acc += self.values[s][l][g] * a[l] * b[g];
                }
            }
            out[s] = acc;
        }
        out
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for l in 0..4 {
            for m in 0..4 {
                for n in 0..4 {
                    worst = worst.max((self.values[l][m][n] - self.values[l][n][m]).abs());
                }
            }
        }
        worst
    }
}

pub fn christoffel_at(metric: &MetricField, x: &SpacetimePoint) -> Result<ChristoffelTensor> {
    metric.check_domain(x)?;
    if metric.mode == ChristoffelMode::Analytic {
        if let Some(values) = metric.analytic_christoffel(&x.coords) {
            return Ok(ChristoffelTensor { values, basepoint: *x });
        }
    }
    finite_difference_christoffel(metric, x)
}

fn finite_difference_christoffel(metric: &MetricField, x: &SpacetimePoint) -> Result<ChristoffelTensor> {
    let ginv = metric.inverse_at(x)?;
    let mut dg = [Mat4::zeros(); 4];
    for (s, d) in dg.iter_mut().enumerate() {
        let h = FD_STEP * x.coords[s].abs().max(1.0);
        let mut xp = *x;
        let mut xm = *x;
        xp.coords[s] += h;
        xm.coords[s] -= h;
        *d = (metric_at(metric, &xp)? - metric_at(metric, &xm)?) / (2.0 * h);
    }
    let mut values = [[[0.0; 4]; 4]; 4];
    for l in 0..4 {
        for m in 0..4 {
            for n in m..4 {
                let mut acc = 0.0;
                for s in 0..4 {
                    acc += ginv[(l, s)] * (dg[m][(s, n)] + dg[n][(s, m)] - dg[s][(m, n)]);
                }
                values[l][m][n] = 0.5 * acc;
                values[l][n][m] = 0.5 * acc;
            }
        }
    }
    Ok(ChristoffelTensor { values, basepoint: *x })
}

/// Smooth invertible coordinate maps `x ↦ ξ` with analytic Jacobians.
#[derive(Clone, Debug, PartialEq)]
pub enum Diffeomorphism {
    Identity,
    /// `(t, r, θ, φ) ↦ (t, r sinθ cosφ, r sinθ sinφ, r cosθ)`.
    SphericalToCartesian,
    /// Triangular test map with unit-diagonal Jacobian:
    /// `ξ⁰ = x⁰ + α sin x¹, ξ¹ = x¹ + α (x²)², ξ² = x² + α (x³)³, ξ³ = x³`.
    Nonlinear { alpha: f64 },
    /// `outer ∘ inner`.
    Compose { outer: Box<Diffeomorphism>, inner: Box<Diffeomorphism> },
}

impl Diffeomorphism {
    pub fn compose(outer: Diffeomorphism, inner: Diffeomorphism) -> Self {
        Self::Compose { outer: Box::new(outer), inner: Box::new(inner) }
    }

    pub fn source_chart(&self) -> Chart {
        match self {
            Self::Identity | Self::Nonlinear { .. } => Chart::Cartesian,
            Self::SphericalToCartesian => Chart::Spherical,
            Self::Compose { inner, .. } => inner.source_chart(),
        }
    }

    pub fn forward(&self, x: &Vec4) -> Vec4 {
        match self {
            Self::Identity => *x,
            Self::SphericalToCartesian => {
                let (st, ct) = x[2].sin_cos();
                let (sp, cp) = x[3].sin_cos();
                Vec4::new(x[0], x[1] * st * cp, x[1] * st * sp, x[1] * ct)
            }
            Self::Nonlinear { alpha: a } => Vec4::new(
                x[0] + a * x[1].sin(),
                x[1] + a * x[2] * x[2],
                x[2] + a * x[3] * x[3] * x[3],
                x[3],
            ),
            Self::Compose { outer, inner } => outer.forward(&inner.forward(x)),
        }
    }

    /// `J[(μ, λ)] = ∂ξ^μ/∂x^λ`.
    pub fn jacobian(&self, x: &Vec4) -> Mat4 {
        match self {
            Self::Identity => Mat4::identity(),
            Self::SphericalToCartesian => {
                let r = x[1];
                let (st, ct) = x[2].sin_cos();
                let (sp, cp) = x[3].sin_cos();
                Mat4::new(
                    1.0, 0.0, 0.0, 0.0,
                    0.0, st * cp, r * ct * cp, -r * st * sp,
                    0.0, st * sp, r * ct * sp, r * st * cp,
                    0.0, ct, -r * st, 0.0,
                )
            }
            Self::Nonlinear { alpha: a } => Mat4::new(
                1.0, a * x[1].cos(), 0.0, 0.0,
                0.0, 1.0, 2.0 * a * x[2], 0.0,
                0.0, 0.0, 1.0, 3.0 * a * x[3] * x[3],
                0.0, 0.0, 0.0, 1.0,
            ),
            Self::Compose { outer, inner } => outer.jacobian(&inner.forward(x)) * inner.jacobian(x),
        }
    }

    /// `∂x^λ/∂ξ^μ` evaluated at the source point `x`.
    pub fn inverse_jacobian(&self, x: &Vec4) -> Mat4 {
        match self {
            Self::Identity => Mat4::identity(),
            Self::SphericalToCartesian => {
                let r = x[1];
                let (st, ct) = x[2].sin_cos();
                let (sp, cp) = x[3].sin_cos();
                Mat4::new(
                    1.0, 0.0, 0.0, 0.0,
                    0.0, st * cp, st * sp, ct,
                    0.0, ct * cp / r, ct * sp / r, -st / r,
                    0.0, -sp / (r * st), cp / (r * st), 0.0,
                )
            }
            Self::Nonlinear { .. } => {
                // J = 1 + U with U strictly upper triangular, so the series terminates.
                let u = self.jacobian(x) - Mat4::identity();
                let u2 = u * u;
                Mat4::identity() - u + u2 - u2 * u
            }
            Self::Compose { outer, inner } => {
                inner.inverse_jacobian(x) * outer.inverse_jacobian(&inner.forward(x))
            }
        }
    }

    /// `h[μ][(λ, κ)] = ∂²ξ^μ/∂x^λ∂x^κ`.
    pub fn hessian(&self, x: &Vec4) -> [Mat4; 4] {
        let mut h = [Mat4::zeros(); 4];
        match self {
            Self::Identity => {}
            Self::SphericalToCartesian => {
                let r = x[1];
                let (st, ct) = x[2].sin_cos();
                let (sp, cp) = x[3].sin_cos();
                let sym = |m: &mut Mat4, i: usize, j: usize, v: f64| {
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                };
                sym(&mut h[1], 1, 2, ct * cp);
                sym(&mut h[1], 1, 3, -st * sp);
                sym(&mut h[1], 2, 2, -r * st * cp);
                sym(&mut h[1], 2, 3, -r * ct * sp);
                sym(&mut h[1], 3, 3, -r * st * cp);
                sym(&mut h[2], 1, 2, ct * sp);
                sym(&mut h[2], 1, 3, st * cp);
                sym(&mut h[2], 2, 2, -r * st * sp);
                sym(&mut h[2], 2, 3, r * ct * cp);
                sym(&mut h[2], 3, 3, -r * st * sp);
                sym(&mut h[3], 1, 2, -st);
                sym(&mut h[3], 2, 2, -r * ct);
            }
            Self::Nonlinear { alpha: a } => {
                h[0][(1, 1)] = -a * x[1].sin();
                h[1][(2, 2)] = 2.0 * a;
                h[2][(3, 3)] = 6.0 * a * x[3];
            }
            Self::Compose { outer, inner } => {
                let y = inner.forward(x);
                let ji = inner.jacobian(x);
                let jo = outer.jacobian(&y);
                let ho = outer.hessian(&y);
                let hi = inner.hessian(x);
                for (m, hm) in h.iter_mut().enumerate() {
                    *hm = ji.transpose() * ho[m] * ji;
                    for (a, hia) in hi.iter().enumerate() {
                        *hm += hia * jo[(m, a)];
                    }
                }
            }
        }
        h
    }

    pub fn check_invertible(&self, x: &Vec4) -> Result<()> {
        let det = self.jacobian(x).determinant();
        if !det.is_finite() || det.abs() < 1e-12 {
            return Err(ShpError::Degenerate(format!("Jacobian determinant {det} at {:?}", x.as_slice())));
        }
        Ok(())
    }
}

/// `g_{μν}(x) = J^α_μ J^β_ν G_{αβ}(φ(x))`.
pub fn pullback_metric<F>(diffeo: &Diffeomorphism, x: &Vec4, target: F) -> Mat4
where
    F: Fn(&Vec4) -> Mat4,
{
    let j = diffeo.jacobian(x);
    j.transpose() * target(&diffeo.forward(x)) * j
}

/// A point of the extended phase space: coordinates `(x, N)` and momenta `(p, M)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtendedPhasePoint {
    pub zeta: [f64; 8],
    pub eta: [f64; 8],
}

pub type Phase16 = SVector<f64, 16>;

impl ExtendedPhasePoint {
    pub fn new(x: Vec4, n: Vec4, p: Vec4, m: Vec4) -> Self {
        let mut zeta = [0.0; 8];
        let mut eta = [0.0; 8];
        zeta[..4].copy_from_slice(x.as_slice());
        zeta[4..].copy_from_slice(n.as_slice());
        eta[..4].copy_from_slice(p.as_slice());
        eta[4..].copy_from_slice(m.as_slice());
        Self { zeta, eta }
    }

    pub fn to_vector(&self) -> Phase16 {
        let mut v = Phase16::zeros();
        v.as_mut_slice()[..8].copy_from_slice(&self.zeta);
        v.as_mut_slice()[8..].copy_from_slice(&self.eta);
        v
    }

    pub fn from_vector(v: &Phase16) -> Self {
        let mut zeta = [0.0; 8];
        let mut eta = [0.0; 8];
        zeta.copy_from_slice(&v.as_slice()[..8]);
        eta.copy_from_slice(&v.as_slice()[8..]);
        Self { zeta, eta }
    }
}

/// Canonical lift of `(x, N) ↦ (φ(x), J(x) N)` to the extended phase space.
///
/// Momenta transform as `p = Jᵀπ + Cᵀm`, `M = Jᵀm`, with
/// `C^μ_λ = ∂_λ(J^μ_κ N^κ)`; the map is generated by
/// `F = π_μ φ^μ(x) + m_μ J^μ_κ(x) N^κ` and so is exactly canonical.
pub fn cotangent_lift(diffeo: &Diffeomorphism, z: &Phase16) -> Phase16 {
    let x = Vec4::new(z[0], z[1], z[2], z[3]);
    let n = Vec4::new(z[4], z[5], z[6], z[7]);
    let p = Vec4::new(z[8], z[9], z[10], z[11]);
    let mm = Vec4::new(z[12], z[13], z[14], z[15]);
    let j = diffeo.jacobian(&x);
    let jinv_t = diffeo.inverse_jacobian(&x).transpose();
    let h = diffeo.hessian(&x);
    let mut c = Mat4::zeros();
    for m in 0..4 {
        let row = h[m] * n;
        for l in 0..4 {
            c[(m, l)] = row[l];
        }
    }
    let m_flat = jinv_t * mm;
    let pi = jinv_t * (p - c.transpose() * m_flat);
    let xi = diffeo.forward(&x);
    let n_flat = j * n;
    let mut out = Phase16::zeros();
    out.as_mut_slice()[0..4].copy_from_slice(xi.as_slice());
    out.as_mut_slice()[4..8].copy_from_slice(n_flat.as_slice());
    out.as_mut_slice()[8..12].copy_from_slice(pi.as_slice());
    out.as_mut_slice()[12..16].copy_from_slice(m_flat.as_slice());
    out
}

const PB_STEP: f64 = 1e-5;

fn pb_step(v: f64) -> f64 {
    PB_STEP * v.abs().max(1.0)
}

fn gradient<F: Fn(&Phase16) -> f64>(f: &F, z: &Phase16) -> Phase16 {
    let mut g = Phase16::zeros();
    for i in 0..16 {
        let h = pb_step(z[i]);
        let mut zp = *z;
        let mut zm = *z;
        zp[i] += h;
        zm[i] -= h;
        g[i] = (f(&zp) - f(&zm)) / (2.0 * h);
    }
    g
}

/// `{A, B} = Σ ∂A/∂q ∂B/∂p − ∂A/∂p ∂B/∂q` by central differences; the first
/// eight slots are coordinates and the last eight their conjugate momenta.
pub fn poisson_bracket<A, B>(a: &A, b: &B, z: &Phase16) -> f64
where
    A: Fn(&Phase16) -> f64,
    B: Fn(&Phase16) -> f64,
{
    let ga = gradient(a, z);
    let gb = gradient(b, z);
    (0..8).map(|i| ga[i] * gb[i + 8] - ga[i + 8] * gb[i]).sum()
}

/// `|{A, B}(Φ(z)) − {A∘Φ, B∘Φ}(z)|` where `Φ` is the cotangent lift of `diffeo`
/// and `z = (x, N; p, M)` is given in the source chart.
pub fn poisson_bracket_invariance<A, B>(
    diffeo: &Diffeomorphism,
    a: &A,
    b: &B,
    z: &ExtendedPhasePoint,
) -> Result<f64>
where
    A: Fn(&Phase16) -> f64,
    B: Fn(&Phase16) -> f64,
{
    let zv = z.to_vector();
    diffeo.check_invertible(&Vec4::new(zv[0], zv[1], zv[2], zv[3]))?;
    let w = cotangent_lift(diffeo, &zv);
    let flat = poisson_bracket(a, b, &w);
    let pulled_a = |y: &Phase16| a(&cotangent_lift(diffeo, y));
    let pulled_b = |y: &Phase16| b(&cotangent_lift(diffeo, y));
    let curved = poisson_bracket(&pulled_a, &pulled_b, &zv);
    Ok((flat - curved).abs())
}

/// Worst deviation of the lifted coordinate brackets from the canonical
/// symplectic form, over all 16 × 16 coordinate-function pairs.
pub fn canonical_bracket_residual(diffeo: &Diffeomorphism, z: &ExtendedPhasePoint) -> Result<f64> {
    let zv = z.to_vector();
    diffeo.check_invertible(&Vec4::new(zv[0], zv[1], zv[2], zv[3]))?;
    let mut jac = SMatrix::<f64, 16, 16>::zeros();
    for i in 0..16 {
        let h = pb_step(zv[i]);
        let mut zp = zv;
        let mut zm = zv;
        zp[i] += h;
        zm[i] -= h;
        let col = (cotangent_lift(diffeo, &zp) - cotangent_lift(diffeo, &zm)) / (2.0 * h);
        jac.set_column(i, &col);
    }
    let mut omega = SMatrix::<f64, 16, 16>::zeros();
    for i in 0..8 {
        omega[(i, i + 8)] = 1.0;
        omega[(i + 8, i)] = -1.0;
    }
    let brackets = jac * omega * jac.transpose();
    Ok((brackets - omega).amax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn schw() -> MetricField {
        MetricField::schwarzschild(1.0).unwrap()
    }

    #[test]
    fn minkowski_is_eta_everywhere() {
        let m = MetricField::minkowski();
        let g = metric_at(&m, &SpacetimePoint::cartesian(3.0, -1.0, 7.0, 2.0)).unwrap();
        assert_eq!(g, eta());
    }

    #[test]
    fn schwarzschild_components_at_r4() {
        let g = metric_at(&schw(), &SpacetimePoint::spherical(0.0, 4.0, PI / 2.0, 0.0)).unwrap();
        let want = Mat4::from_diagonal(&Vec4::new(-0.5, 2.0, 16.0, 16.0));
        assert!((g - want).amax() < 1e-15);
    }

    #[test]
    fn horizon_and_poles_are_rejected() {
        let m = schw();
        assert!(matches!(
            metric_at(&m, &SpacetimePoint::spherical(0.0, 2.0, 1.0, 0.0)),
            Err(ShpError::ChartDomain(_))
        ));
        assert!(matches!(
            metric_at(&m, &SpacetimePoint::spherical(0.0, 5.0, 0.0, 0.0)),
            Err(ShpError::ChartDomain(_))
        ));
        assert!(matches!(
            metric_at(&m, &SpacetimePoint::cartesian(0.0, 5.0, 1.0, 0.0)),
            Err(ShpError::Usage(_))
        ));
    }

    #[test]
    fn identity_pullback_is_eta() {
        let m = MetricField::pullback(Diffeomorphism::Identity);
        let g = metric_at(&m, &SpacetimePoint::cartesian(1.0, 2.0, 3.0, 4.0)).unwrap();
        assert_eq!(g, eta());
    }

    #[test]
    fn spherical_pullback_matches_flat_spherical_metric() {
        let pb = MetricField::pullback(Diffeomorphism::SphericalToCartesian);
        let fs = MetricField::minkowski_spherical();
        let x = SpacetimePoint::spherical(0.3, 2.5, 1.1, -0.4);
        assert!((metric_at(&pb, &x).unwrap() - metric_at(&fs, &x).unwrap()).amax() < 1e-13);
        let a = christoffel_at(&pb, &x).unwrap();
        let b = christoffel_at(&fs, &x).unwrap();
        for l in 0..4 {
            for m in 0..4 {
                for n in 0..4 {
                    assert!((a.get(l, m, n) - b.get(l, m, n)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn minkowski_connection_vanishes() {
        let c = christoffel_at(&MetricField::minkowski(), &SpacetimePoint::cartesian(0.0, 1.0, 2.0, 3.0)).unwrap();
        assert!(c.values.iter().flatten().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn schwarzschild_angular_components() {
        let (r, th) = (5.0, 0.7);
        let c = christoffel_at(&schw(), &SpacetimePoint::spherical(0.0, r, th, 1.0)).unwrap();
        assert!((c.get(3, 1, 3) - 1.0 / r).abs() < 1e-15);
        assert!((c.get(3, 2, 3) - th.cos() / th.sin()).abs() < 1e-15);
        assert!((c.get(2, 3, 3) + th.sin() * th.cos()).abs() < 1e-15);
    }

    #[test]
    fn finite_difference_agrees_with_analytic() {
        let an = schw();
        let fd = schw().with_mode(ChristoffelMode::FiniteDifference);
        for &(r, th) in &[(3.0, 0.4), (7.5, 1.5), (12.0, 2.6)] {
            let x = SpacetimePoint::spherical(0.0, r, th, 0.2);
            let a = christoffel_at(&an, &x).unwrap();
            let b = christoffel_at(&fd, &x).unwrap();
            for l in 0..4 {
                for m in 0..4 {
                    for n in 0..4 {
                        assert!((a.get(l, m, n) - b.get(l, m, n)).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn warp_connections_match_finite_difference() {
        for m in [MetricField::sin_warp(0.1).unwrap(), MetricField::tanh_warp(0.2).unwrap()] {
            let fd = m.clone().with_mode(ChristoffelMode::FiniteDifference);
            let x = SpacetimePoint::cartesian(0.0, 0.8, 0.0, 0.0);
            let a = christoffel_at(&m, &x).unwrap();
            let b = christoffel_at(&fd, &x).unwrap();
            assert!((a.get(1, 1, 1) - b.get(1, 1, 1)).abs() < 1e-8);
        }
    }

    #[test]
    fn raise_and_lower() {
        let m = MetricField::minkowski();
        let x = SpacetimePoint::cartesian(0.0, 0.0, 0.0, 0.0);
        let p = FourVector::covariant(Vec4::new(2.5, 0.0, 0.0, 0.0), x);
        assert_eq!(raise_index(&p, &m).unwrap().components, Vec4::new(-2.5, 0.0, 0.0, 0.0));

        let s = schw();
        let x = SpacetimePoint::spherical(0.0, 4.0, 1.0, 0.0);
        let p = FourVector::covariant(Vec4::new(1.0, 0.0, 0.0, 0.0), x);
        let up = raise_index(&p, &s).unwrap();
        assert!((up.components - Vec4::new(-2.0, 0.0, 0.0, 0.0)).amax() < 1e-15);
        assert!(matches!(lower_index(&p, &s), Err(ShpError::Usage(_))));
    }

    #[test]
    fn diffeo_inverse_jacobians() {
        let maps = [
            Diffeomorphism::SphericalToCartesian,
            Diffeomorphism::Nonlinear { alpha: 0.3 },
            Diffeomorphism::compose(Diffeomorphism::Nonlinear { alpha: 0.2 }, Diffeomorphism::SphericalToCartesian),
        ];
        let x = Vec4::new(0.2, 1.7, 0.9, 0.4);
        for d in &maps {
            let e = (d.jacobian(&x) * d.inverse_jacobian(&x) - Mat4::identity()).amax();
            assert!(e < 1e-13, "{d:?}: {e}");
        }
    }

    #[test]
    fn hessians_match_jacobian_differences() {
        let maps = [
            Diffeomorphism::SphericalToCartesian,
            Diffeomorphism::Nonlinear { alpha: 0.3 },
            Diffeomorphism::compose(Diffeomorphism::Nonlinear { alpha: 0.2 }, Diffeomorphism::SphericalToCartesian),
        ];
        let x = Vec4::new(0.2, 1.7, 0.9, 0.4);
        for d in &maps {
            let h = d.hessian(&x);
            for k in 0..4 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += 1e-6;
                xm[k] -= 1e-6;
                let dj = (d.jacobian(&xp) - d.jacobian(&xm)) / 2e-6;
                for m in 0..4 {
                    for l in 0..4 {
                        assert!((dj[(m, l)] - h[m][(l, k)]).abs() < 1e-7);
                    }
                }
            }
        }
    }

    #[test]
    fn composed_pullback_chain_rule() {
        let inner = Diffeomorphism::SphericalToCartesian;
        let outer = Diffeomorphism::Nonlinear { alpha: 0.25 };
        let comp = Diffeomorphism::compose(outer.clone(), inner.clone());
        let x = Vec4::new(0.1, 2.0, 1.2, -0.7);
        let step = pullback_metric(&inner, &x, |y| pullback_metric(&outer, y, |_| eta()));
        let direct = pullback_metric(&comp, &x, |_| eta());
        assert!((step - direct).amax() < 1e-12);
    }

    #[test]
    fn canonical_brackets_survive_each_map() {
        let z = ExtendedPhasePoint::new(
            Vec4::new(0.3, 1.6, 1.0, 0.5),
            Vec4::new(1.2, 0.3, -0.2, 0.4),
            Vec4::new(-0.7, 0.4, 0.9, -0.3),
            Vec4::new(0.2, -0.5, 0.1, 0.6),
        );
        for d in [
            Diffeomorphism::Identity,
            Diffeomorphism::SphericalToCartesian,
            Diffeomorphism::Nonlinear { alpha: 0.3 },
        ] {
            let r = canonical_bracket_residual(&d, &z).unwrap();
            assert!(r < 1e-8, "{d:?}: {r}");
        }
    }

    #[test]
    fn x1_p1_bracket_is_one() {
        let z = ExtendedPhasePoint::new(
            Vec4::new(0.3, 1.6, 1.0, 0.5),
            Vec4::new(1.0, 0.0, 0.0, 0.0),
            Vec4::new(-1.0, 0.2, 0.0, 0.1),
            Vec4::new(0.0, 0.3, 0.0, 0.0),
        );
        let d = Diffeomorphism::Nonlinear { alpha: 0.4 };
        let x1 = |v: &Phase16| v[1];
        let p1 = |v: &Phase16| v[9];
        let w = cotangent_lift(&d, &z.to_vector());
        assert!((poisson_bracket(&x1, &p1, &w) - 1.0).abs() < 1e-9);
        assert!(poisson_bracket_invariance(&d, &x1, &p1, &z).unwrap() < 1e-8);
    }

    #[test]
    fn signature_of_builtins() {
        let x = SpacetimePoint::spherical(0.0, 3.0, 1.0, 0.0);
        assert_eq!(signature_counts(&metric_at(&schw(), &x).unwrap()), (1, 3));
        assert_eq!(signature_counts(&eta()), (1, 3));
    }

    #[test]
    fn custom_metric_with_wrong_signature_is_degenerate() {
        let m = MetricField::custom(Chart::Cartesian, |_| Mat4::identity());
        assert!(matches!(
            metric_at(&m, &SpacetimePoint::cartesian(0.0, 0.0, 0.0, 0.0)),
            Err(ShpError::Degenerate(_))
        ));
    }
}
