//! Adaptive Dormand-Prince 5(4) integration for linear-ish complex systems.

use nalgebra::SVector;
use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
    /// Step budget over the whole integration.
    pub max_steps: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            rtol: 1e-9,
            atol: 1e-12,
            max_steps: 2_000_000,
        }
    }
}

// Dormand-Prince tableau
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
// fifth minus fourth order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

type State<const N: usize> = SVector<Complex64, N>;

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Integrates dy/dt = f(t, y) from `t_grid[0]` and returns y at every grid
/// time (the first entry is `y0`). Steps are clipped to land on grid points.
pub fn integrate<const N: usize, F>(
    f: F,
    y0: State<N>,
    t_grid: &[f64],
    tol: Tolerance,
) -> Result<Vec<State<N>>>
where
    F: Fn(f64, &State<N>) -> State<N>,
{
    if t_grid.is_empty() {
        return Ok(Vec::new());
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput(
            "time grid must be strictly increasing".into(),
        ));
    }
    let mut out = Vec::with_capacity(t_grid.len());
    out.push(y0);

    let mut t = t_grid[0];
    let mut y = y0;
    let mut k1 = f(t, &y);
    let span = t_grid[t_grid.len() - 1] - t;
    let mut h = initial_step(&y, &k1, tol, span);
    let mut steps = 0usize;

    for &target in &t_grid[1..] {
        while t < target {
            if steps >= tol.max_steps {
                return Err(Error::Integration(format!(
                    "step budget of {} exhausted at t = {t}",
                    tol.max_steps
                )));
            }
            let mut last = false;
            let mut step = h;
            if t + step >= target {
                step = target - t;
                last = true;
            }
            let k2 = f(t + C2 * step, &(y + k1 * c(step * A21)));
            let k3 = f(t + C3 * step, &(y + (k1 * c(A31) + k2 * c(A32)) * c(step)));
            let k4 = f(
                t + C4 * step,
                &(y + (k1 * c(A41) + k2 * c(A42) + k3 * c(A43)) * c(step)),
            );
            let k5 = f(
                t + C5 * step,
                &(y + (k1 * c(A51) + k2 * c(A52) + k3 * c(A53) + k4 * c(A54)) * c(step)),
            );
            let k6 = f(
                t + step,
                &(y + (k1 * c(A61) + k2 * c(A62) + k3 * c(A63) + k4 * c(A64) + k5 * c(A65))
                    * c(step)),
            );
            let y_new =
                y + (k1 * c(B1) + k3 * c(B3) + k4 * c(B4) + k5 * c(B5) + k6 * c(B6)) * c(step);
            let k7 = f(t + step, &y_new);
            let err = (k1 * c(E1) + k3 * c(E3) + k4 * c(E4) + k5 * c(E5) + k6 * c(E6) + k7 * c(E7))
                * c(step);

            let mut ratio: f64 = 0.0;
            for i in 0..N {
                let scale = tol.atol + tol.rtol * y[i].norm().max(y_new[i].norm());
                ratio = ratio.max(err[i].norm() / scale);
            }
            steps += 1;
            if !ratio.is_finite() {
                return Err(Error::Integration(format!(
                    "non-finite error estimate at t = {t}"
                )));
            }
            if ratio <= 1.0 {
                t = if last { target } else { t + step };
                y = y_new;
                k1 = k7;
            }
            let factor = if ratio == 0.0 {
                5.0
            } else {
                (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0)
            };
            // a clipped final step says nothing about the natural step size
            if !(last && ratio <= 1.0) {
                h = step * factor;
            }
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(Error::Integration(format!(
                    "step size underflow at t = {t}"
                )));
            }
        }
        out.push(y);
    }
    Ok(out)
}

fn initial_step<const N: usize>(y: &State<N>, dy: &State<N>, tol: Tolerance, span: f64) -> f64 {
    let mut d0: f64 = 0.0;
    let mut d1: f64 = 0.0;
    for i in 0..N {
        let sc = tol.atol + tol.rtol * y[i].norm();
        d0 = d0.max(y[i].norm() / sc);
        d1 = d1.max(dy[i].norm() / sc);
    }
    let h = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h.min(span.max(f64::MIN_POSITIVE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    #[test]
    fn exponential_decay_and_rotation() {
        let y0 = Vector2::new(Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0));
        let f = |_t: f64, y: &Vector2<Complex64>| {
            Vector2::new(-y[0] * c(0.7), y[1] * Complex64::new(0.0, 2.0))
        };
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.5).collect();
        let out = integrate(f, y0, &grid, Tolerance::default()).unwrap();
        for (t, y) in grid.iter().zip(&out) {
            assert!((y[0].re - (-0.7 * t).exp()).abs() < 1e-8);
            let want = Complex64::new(0.0, 2.0 * t).exp();
            assert!((y[1] - want).norm() < 1e-7, "{t}");
        }
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let y0 = Vector2::new(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
        let f = |_t: f64, y: &Vector2<Complex64>| Vector2::new(y[1], -y[0] * c(100.0));
        let tol = Tolerance {
            max_steps: 10,
            ..Default::default()
        };
        assert!(matches!(
            integrate(f, y0, &[0.0, 100.0], tol),
            Err(Error::Integration(_))
        ));
        assert!(integrate(f, y0, &[1.0, 0.0], Tolerance::default()).is_err());
    }
}
