//! Convex piecewise-linear function on the real line and its derivative map.
//!
//! The example function has slopes `-2, -0.3, 1` with kinks at `-2` and `3`.
//! Under cube smoothing with radius `eps <= 2.5` the smoothed function is
//! known in closed form, which makes it a fixed oracle for the smoothing
//! estimators.

use rand::RngCore;

use crate::error::{Result, SviError};
use crate::map::StochasticMap;
use crate::vector::Layout;

#[derive(Clone, Debug)]
pub struct PiecewiseLinear {
    layout: Layout,
    breaks: Vec<f64>,
    slopes: Vec<f64>,
    /// Value at the first break.
    anchor: f64,
}

impl PiecewiseLinear {
    /// `breaks` ascending, one more slope than breaks.
    pub fn new(breaks: Vec<f64>, slopes: Vec<f64>, anchor: f64) -> Result<Self> {
        if breaks.is_empty() || slopes.len() != breaks.len() + 1 {
            return Err(SviError::param("need k >= 1 breaks and k+1 slopes"));
        }
        if breaks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SviError::param("breaks must be strictly increasing"));
        }
        Ok(PiecewiseLinear {
            layout: Layout::single(1),
            breaks,
            slopes,
            anchor,
        })
    }

    /// `-2x - 3` on `(-inf, -2)`, `-0.3x + 0.4` on `[-2, 3)`, `x - 3.5` after.
    pub fn example() -> Self {
        Self::new(vec![-2.0, 3.0], vec![-2.0, -0.3, 1.0], 1.0).unwrap()
    }

    fn piece(&self, x: f64) -> usize {
        self.breaks.iter().take_while(|b| x >= **b).count()
    }

    pub fn value(&self, x: f64) -> f64 {
        let p = self.piece(x);
        let mut v = self.anchor;
        let b0 = self.breaks[0];
        if p == 0 {
            return v + self.slopes[0] * (x - b0);
        }
        for j in 1..p {
            v += self.slopes[j] * (self.breaks[j] - self.breaks[j - 1]);
        }
        v + self.slopes[p] * (x - self.breaks[p - 1])
    }

    /// Right derivative.
    pub fn derivative(&self, x: f64) -> f64 {
        self.slopes[self.piece(x)]
    }

    fn check_example_eps(eps: f64) -> Result<()> {
        if !(eps > 0.0 && eps <= 2.5) {
            return Err(SviError::param(format!("closed form needs 0 < eps <= 2.5, got {eps}")));
        }
        Ok(())
    }

    /// Closed-form `E f(x + z)`, `z ~ U[-eps, eps]`, for the example function.
    pub fn smoothed_value(&self, x: f64, eps: f64) -> Result<f64> {
        Self::check_example_eps(eps)?;
        let e = eps;
        Ok(if x < -2.0 - e {
            -2.0 * x - 3.0
        } else if x < -2.0 + e {
            (17.0 * x * x + 68.0 * x - 46.0 * x * e + 68.0 - 52.0 * e + 17.0 * e * e) / (40.0 * e)
        } else if x < 3.0 - e {
            -0.3 * x + 0.4
        } else if x < 3.0 + e {
            (13.0 * x * x - 78.0 * x + 14.0 * x * e + 117.0 - 62.0 * e + 13.0 * e * e) / (40.0 * e)
        } else {
            x - 3.5
        })
    }

    /// Derivative of [`Self::smoothed_value`].
    pub fn smoothed_derivative(&self, x: f64, eps: f64) -> Result<f64> {
        Self::check_example_eps(eps)?;
        let e = eps;
        Ok(if x < -2.0 - e {
            -2.0
        } else if x < -2.0 + e {
            (34.0 * x + 68.0 - 46.0 * e) / (40.0 * e)
        } else if x < 3.0 - e {
            -0.3
        } else if x < 3.0 + e {
            (26.0 * x - 78.0 + 14.0 * e) / (40.0 * e)
        } else {
            1.0
        })
    }
}

impl StochasticMap for PiecewiseLinear {
    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn noise_dim(&self) -> usize {
        0
    }

    fn draw_noise(&self, _rng: &mut dyn RngCore, _out: &mut [f64]) {}

    fn evaluate(&self, x: &[f64], _noise: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = self.derivative(x[0]);
        Ok(())
    }

    fn has_exact_mean(&self) -> bool {
        true
    }

    fn exact_mean(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = self.derivative(x[0]);
        Ok(())
    }
}
