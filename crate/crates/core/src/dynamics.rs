//! Classical evolution in world time τ: Hamiltonian, equations of motion and
//! RK4 trajectory integration.
//!
//! The Hamiltonian is `K = (1/2M) g^{μν} p_μ p_ν + V(x)`. Trajectories are
//! integrated on the second-order form
//! `ẍ^σ = −Γ^σ_{λγ} ẋ^λ ẋ^γ − (1/M) g^{σλ} ∂_λ V` with `p_μ = M g_{μν} ẋ^ν`.

use std::fmt;
use std::sync::Arc;

use nalgebra::SVector;

use crate::error::{Result, ShpError};
use crate::geometry::{christoffel_at, metric_at, FourVector, MetricField, SpacetimePoint, Variance, Vec4};
use crate::ode::rk4_step;

type ScalarFn = Arc<dyn Fn(&Vec4) -> f64 + Send + Sync>;

const GRADIENT_STEP: f64 = 1e-6;

#[derive(Clone)]
pub enum PotentialField {
    Zero,
    /// `V = ½ κ (x^axis − center)²`.
    Harmonic { kappa: f64, axis: usize, center: f64 },
    /// Arbitrary potential; the gradient is taken by central differences.
    Custom(ScalarFn),
}

impl fmt::Debug for PotentialField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Harmonic { kappa, axis, center } => {
                write!(f, "Harmonic {{ kappa: {kappa}, axis: {axis}, center: {center} }}")
            }
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl PotentialField {
    pub fn custom<F: Fn(&Vec4) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Self::Custom(Arc::new(f))
    }

    pub fn value(&self, x: &Vec4) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Harmonic { kappa, axis, center } => 0.5 * kappa * (x[*axis] - center).powi(2),
            Self::Custom(f) => f(x),
        }
    }

    /// Covariant gradient `∂_μ V`.
    pub fn gradient(&self, x: &Vec4) -> Vec4 {
        match self {
            Self::Zero => Vec4::zeros(),
            Self::Harmonic { kappa, axis, center } => {
                let mut g = Vec4::zeros();
                g[*axis] = kappa * (x[*axis] - center);
                g
            }
            Self::Custom(f) => {
                let mut g = Vec4::zeros();
                for i in 0..4 {
                    let h = GRADIENT_STEP * x[i].abs().max(1.0);
                    let mut xp = *x;
                    let mut xm = *x;
                    xp[i] += h;
                    xm[i] -= h;
                    g[i] = (f(&xp) - f(&xm)) / (2.0 * h);
                }
                g
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct HamiltonianSpec {
    pub mass: f64,
    pub metric: MetricField,
    pub potential: PotentialField,
}

impl HamiltonianSpec {
    pub fn new(mass: f64, metric: MetricField, potential: PotentialField) -> Result<Self> {
        if !(mass.is_finite() && mass > 0.0) {
            return Err(ShpError::Usage(format!("mass must be positive, got {mass}")));
        }
        Ok(Self { mass, metric, potential })
    }

    /// Free motion with unit mass.
    pub fn geodesic(metric: MetricField) -> Self {
        Self { mass: 1.0, metric, potential: PotentialField::Zero }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseState {
    pub x: SpacetimePoint,
    /// Covariant momentum.
    pub p: FourVector,
    pub tau: f64,
}

impl PhaseState {
    pub fn new(x: SpacetimePoint, p_cov: Vec4, tau: f64) -> Self {
        Self { x, p: FourVector::covariant(p_cov, x), tau }
    }

    /// State with momentum `p_μ = M g_{μν} ẋ^ν`.
    pub fn from_velocity(spec: &HamiltonianSpec, x: SpacetimePoint, xdot: Vec4, tau: f64) -> Result<Self> {
        let g = metric_at(&spec.metric, &x)?;
        Ok(Self::new(x, g * xdot * spec.mass, tau))
    }
}

pub fn hamiltonian_value(spec: &HamiltonianSpec, s: &PhaseState) -> Result<f64> {
    let ginv = spec.metric.inverse_at(&s.x)?;
    let p = s.p.components;
    Ok(p.dot(&(ginv * p)) / (2.0 * spec.mass) + spec.potential.value(&s.x.coords))
}

/// `ẍ` for given position and velocity.
pub fn acceleration(spec: &HamiltonianSpec, x: &SpacetimePoint, xdot: &Vec4) -> Result<Vec4> {
    let gamma = christoffel_at(&spec.metric, x)?;
    let mut acc = -gamma.contract(xdot, xdot);
    if !matches!(spec.potential, PotentialField::Zero) {
        let ginv = spec.metric.inverse_at(x)?;
        acc -= ginv * spec.potential.gradient(&x.coords) / spec.mass;
    }
    Ok(acc)
}

/// `(ẋ, ẍ)` at a phase-space point.
pub fn eom_rhs(spec: &HamiltonianSpec, s: &PhaseState) -> Result<(FourVector, FourVector)> {
    if s.p.variance != Variance::Covariant {
        return Err(ShpError::Usage("phase-state momentum must be covariant".into()));
    }
    let ginv = spec.metric.inverse_at(&s.x)?;
    let xdot = ginv * s.p.components / spec.mass;
    let xddot = acceleration(spec, &s.x, &xdot)?;
    Ok((FourVector::contravariant(xdot, s.x), FourVector::contravariant(xddot, s.x)))
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<PhaseState>,
    pub hamiltonian: Vec<f64>,
    /// True when integration stopped early on leaving the chart domain.
    pub exited_domain: bool,
}

type State8 = SVector<f64, 8>;

fn split(y: &State8) -> (Vec4, Vec4) {
    (y.fixed_rows::<4>(0).into_owned(), y.fixed_rows::<4>(4).into_owned())
}

fn join(x: &Vec4, u: &Vec4) -> State8 {
    let mut y = State8::zeros();
    y.fixed_rows_mut::<4>(0).copy_from(x);
    y.fixed_rows_mut::<4>(4).copy_from(u);
    y
}

/// Fixed-step RK4 on `(x, ẋ)`; returns `steps + 1` states unless the chart
/// domain is left, in which case the prefix is returned with a flag.
pub fn integrate_trajectory(spec: &HamiltonianSpec, s0: &PhaseState, dtau: f64, steps: usize) -> Result<Trajectory> {
    if !(dtau.is_finite() && dtau > 0.0) || steps == 0 {
        return Err(ShpError::Usage(format!("need dτ > 0 and steps ≥ 1, got dτ = {dtau}, steps = {steps}")));
    }
    let chart = s0.x.chart;
    let (xdot0, _) = eom_rhs(spec, s0)?;
    let mut y = join(&s0.x.coords, &xdot0.components);
    let mut states = Vec::with_capacity(steps + 1);
    let mut hamiltonian = Vec::with_capacity(steps + 1);
    states.push(*s0);
    hamiltonian.push(hamiltonian_value(spec, s0)?);

    let mut rhs = |_: f64, y: &State8| -> Result<State8> {
        let (x, u) = split(y);
        let a = acceleration(spec, &SpacetimePoint::new(chart, x), &u)?;
        Ok(join(&u, &a))
    };

    let mut exited_domain = false;
    for n in 0..steps {
        let tau = s0.tau + n as f64 * dtau;
        let next = match rk4_step(&mut rhs, tau, &y, dtau) {
            Ok(v) => v,
            Err(ShpError::ChartDomain(_)) => {
                exited_domain = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let (x, u) = split(&next);
        let point = SpacetimePoint::new(chart, x);
        let g = match metric_at(&spec.metric, &point) {
            Ok(g) => g,
            Err(ShpError::ChartDomain(_)) => {
                exited_domain = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let state = PhaseState::new(point, g * u * spec.mass, s0.tau + (n + 1) as f64 * dtau);
        hamiltonian.push(hamiltonian_value(spec, &state)?);
        states.push(state);
        y = next;
    }
    Ok(Trajectory { states, hamiltonian, exited_domain })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn flat_spec(potential: PotentialField) -> HamiltonianSpec {
        HamiltonianSpec::new(1.0, MetricField::minkowski(), potential).unwrap()
    }

    #[test]
    fn hamiltonian_examples() {
        let spec = flat_spec(PotentialField::Zero);
        let o = SpacetimePoint::cartesian(0.0, 0.0, 0.0, 0.0);
        let k = hamiltonian_value(&spec, &PhaseState::new(o, Vec4::new(-1.0, 0.0, 0.0, 0.0), 0.0)).unwrap();
        assert!((k + 0.5).abs() < 1e-15);
        let k = hamiltonian_value(&spec, &PhaseState::new(o, Vec4::new(0.0, 1.0, 0.0, 0.0), 0.0)).unwrap();
        assert!((k - 0.5).abs() < 1e-15);

        let s = HamiltonianSpec::geodesic(MetricField::schwarzschild(1.0).unwrap());
        let x = SpacetimePoint::spherical(0.0, 4.0, PI / 2.0, 0.0);
        let k = hamiltonian_value(&s, &PhaseState::new(x, Vec4::new(1.0, 0.0, 0.0, 0.0), 0.0)).unwrap();
        assert!((k + 1.0).abs() < 1e-14);
    }

    #[test]
    fn kinetic_form_matches_velocity_form() {
        let spec = HamiltonianSpec::new(2.0, MetricField::schwarzschild(1.0).unwrap(), PotentialField::Zero).unwrap();
        let x = SpacetimePoint::spherical(0.0, 5.0, 1.0, 0.3);
        let u = Vec4::new(1.4, 0.1, 0.02, 0.05);
        let s = PhaseState::from_velocity(&spec, x, u, 0.0).unwrap();
        let g = metric_at(&spec.metric, &x).unwrap();
        let want = 0.5 * spec.mass * u.dot(&(g * u));
        assert!((hamiltonian_value(&spec, &s).unwrap() - want).abs() < 1e-13);
    }

    #[test]
    fn harmonic_force() {
        let spec = flat_spec(PotentialField::Harmonic { kappa: 1.0, axis: 1, center: 0.0 });
        let s = PhaseState::new(SpacetimePoint::cartesian(0.0, 2.0, 0.0, 0.0), Vec4::zeros(), 0.0);
        let (_, a) = eom_rhs(&spec, &s).unwrap();
        assert!((a.components[1] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn custom_potential_gradient_matches_harmonic() {
        let h = PotentialField::Harmonic { kappa: 0.7, axis: 2, center: 0.5 };
        let c = PotentialField::custom(|x| 0.35 * (x[2] - 0.5).powi(2));
        let x = Vec4::new(0.1, 0.2, 1.3, -0.4);
        assert!((h.gradient(&x) - c.gradient(&x)).amax() < 1e-6);
    }

    #[test]
    fn free_flat_motion_is_linear() {
        let spec = flat_spec(PotentialField::Zero);
        let u = Vec4::new(1.0, 0.5, 0.0, 0.0);
        let s0 = PhaseState::from_velocity(&spec, SpacetimePoint::cartesian(0.0, 0.0, 0.0, 0.0), u, 0.0).unwrap();
        let tr = integrate_trajectory(&spec, &s0, 0.01, 100).unwrap();
        assert_eq!(tr.states.len(), 101);
        for s in &tr.states {
            assert!((s.x.coords - u * s.tau).amax() < 1e-12);
        }
    }

    #[test]
    fn radial_plunge_stops_softly_at_horizon() {
        let spec = HamiltonianSpec::geodesic(MetricField::schwarzschild(1.0).unwrap());
        let x = SpacetimePoint::spherical(0.0, 3.0, PI / 2.0, 0.0);
        let s0 = PhaseState::from_velocity(&spec, x, Vec4::new(2.0, -0.8, 0.0, 0.0), 0.0).unwrap();
        let tr = integrate_trajectory(&spec, &s0, 0.01, 10_000).unwrap();
        assert!(tr.exited_domain);
        assert!(tr.states.len() < 10_001);
    }

    #[test]
    fn bad_step_is_a_usage_error() {
        let spec = flat_spec(PotentialField::Zero);
        let s0 = PhaseState::new(SpacetimePoint::cartesian(0.0, 0.0, 0.0, 0.0), Vec4::zeros(), 0.0);
        assert!(matches!(integrate_trajectory(&spec, &s0, 0.0, 10), Err(ShpError::Usage(_))));
        assert!(matches!(integrate_trajectory(&spec, &s0, 0.1, 0), Err(ShpError::Usage(_))));
    }
}
