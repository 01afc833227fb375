//! Numerical building blocks used by the design engines.

pub mod beta;
pub mod gauss_hermite;
pub mod gibbs;
pub mod glm;
pub mod mcmc;
pub mod optim;
pub mod ordinal;
pub mod pava;
pub mod quadrature;
pub mod robust;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    /// Row-major draws, one row per draw.
    pub samples: Option<Vec<f64>>,
    pub mc_se: Vec<f64>,
}

impl PosteriorSummary {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn draws(&self) -> impl Iterator<Item = &[f64]> {
        let k = self.dim().max(1);
        self.samples.as_deref().unwrap_or(&[]).chunks_exact(k)
    }
}

/// Log density tabulated on a rectangular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// `log_density[i * y.len() + j]` at `(x[i], y[j])`.
    pub log_density: Vec<f64>,
}

impl Grid2D {
    pub fn tabulate<F: Fn(f64, f64) -> f64>(x: Vec<f64>, y: Vec<f64>, f: F) -> Result<Self> {
        let increasing = |v: &[f64]| v.len() >= 2 && v.windows(2).all(|w| w[0] < w[1]);
        if !increasing(&x) || !increasing(&y) {
            return Err(Error::invalid("grid axes must be strictly increasing"));
        }
        let mut log_density = Vec::with_capacity(x.len() * y.len());
        for &a in &x {
            for &b in &y {
                let v = f(a, b);
                if !v.is_finite() {
                    return Err(Error::numerical(format!("log density not finite at ({a}, {b})")));
                }
                log_density.push(v);
            }
        }
        Ok(Self { x, y, log_density })
    }

    /// Posterior means of both coordinates under trapezoid weights.
    pub fn mean(&self) -> (f64, f64) {
        let tw = |v: &[f64], i: usize| {
            let lo = if i == 0 { v[0] } else { v[i - 1] };
            let hi = if i + 1 == v.len() { v[i] } else { v[i + 1] };
            0.5 * (hi - lo)
        };
        let m = self.log_density.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut z, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for (i, &a) in self.x.iter().enumerate() {
            for (j, &b) in self.y.iter().enumerate() {
                let w = tw(&self.x, i) * tw(&self.y, j) * (self.log_density[i * self.y.len() + j] - m).exp();
                z += w;
                sx += w * a;
                sy += w * b;
            }
        }
        (sx / z, sy / z)
    }
}
