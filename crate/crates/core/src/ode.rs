//! Classical fourth-order Runge–Kutta on any vector-space state.

use std::ops::{Add, Mul};

use crate::error::Result;

pub fn rk4_step<S, F>(f: &mut F, s: f64, y: &S, h: f64) -> Result<S>
where
    S: Clone + Add<Output = S> + Mul<f64, Output = S>,
    F: FnMut(f64, &S) -> Result<S>,
{
    let k1 = f(s, y)?;
    let k2 = f(s + 0.5 * h, &(y.clone() + k1.clone() * (0.5 * h)))?;
    let k3 = f(s + 0.5 * h, &(y.clone() + k2.clone() * (0.5 * h)))?;
    let k4 = f(s + h, &(y.clone() + k3.clone() * h))?;
    Ok(y.clone() + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Integrates from `a` to `b` in `steps` equal steps and returns the final state.
pub fn rk4_integrate<S, F>(mut f: F, y0: S, a: f64, b: f64, steps: usize) -> Result<S>
where
    S: Clone + Add<Output = S> + Mul<f64, Output = S>,
    F: FnMut(f64, &S) -> Result<S>,
{
    let h = (b - a) / steps as f64;
    let mut y = y0;
    for i in 0..steps {
        y = rk4_step(&mut f, a + i as f64 * h, &y, h)?;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    #[test]
    fn exponential_decay() {
        let y = rk4_integrate(|_, y: &f64| Ok(-*y), 1.0, 0.0, 1.0, 100).unwrap();
        assert!((y - (-1.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn oscillator_fourth_order() {
        let f = |_: f64, y: &Vector2<f64>| Ok(Vector2::new(y[1], -y[0]));
        let err = |n| (rk4_integrate(f, Vector2::new(1.0, 0.0), 0.0, 5.0, n).unwrap()[0] - 5f64.cos()).abs();
        let ratio = err(100) / err(200);
        assert!(ratio > 14.0 && ratio < 18.0, "{ratio}");
    }
}
