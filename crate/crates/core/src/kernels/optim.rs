//! Quasi-Newton minimization with finite-difference derivatives, for the
//! handful of low-dimensional MAP fits in the designs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

fn gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], fx: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-5 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = if fp.is_finite() && fm.is_finite() {
            (fp - fm) / (2.0 * h)
        } else if fp.is_finite() {
            (fp - fx) / h
        } else {
            (fx - fm) / h
        };
    }
    g
}

/// Central-difference Hessian.
pub fn hessian<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> DMatrix<f64> {
    let k = x.len();
    let mut h = DMatrix::<f64>::zeros(k, k);
    let f0 = f(x);
    let step: Vec<f64> = x.iter().map(|v| 1e-4 * v.abs().max(1.0)).collect();
    let mut xp = x.to_vec();
    for i in 0..k {
        xp[i] = x[i] + step[i];
        let fp = f(&xp);
        xp[i] = x[i] - step[i];
        let fm = f(&xp);
        xp[i] = x[i];
        h[(i, i)] = (fp - 2.0 * f0 + fm) / (step[i] * step[i]);
        for j in 0..i {
            let mut e = |si: f64, sj: f64| {
                xp[i] = x[i] + si * step[i];
                xp[j] = x[j] + sj * step[j];
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (e(1.0, 1.0) - e(1.0, -1.0) - e(-1.0, 1.0) + e(-1.0, -1.0)) / (4.0 * step[i] * step[j]);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// BFGS with backtracking line search.
pub fn minimize<F: Fn(&[f64]) -> f64>(f: F, init: &[f64], max_iter: usize, tol: f64) -> Result<Minimum> {
    let k = init.len();
    let mut x = init.to_vec();
    let mut fx = f(&x);
    if !fx.is_finite() {
        return Err(Error::numerical("objective is not finite at the start"));
    }
    let mut g = DVector::from_vec(gradient(&f, &x, fx));
    let mut hinv = DMatrix::<f64>::identity(k, k);
    for it in 0..max_iter {
        if g.amax() < tol {
            return Ok(Minimum { x, value: fx, iterations: it });
        }
        let mut dir = -(&hinv * &g);
        if dir.dot(&g) >= 0.0 {
            hinv = DMatrix::identity(k, k);
            dir = -g.clone();
        }
        let slope = dir.dot(&g);
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..50 {
            let xt: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
            let ft = f(&xt);
            if ft.is_finite() && ft <= fx + 1e-4 * t * slope {
                next = Some((xt, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fn_)) = next else {
            // no descent possible along the quasi-Newton direction
            return Ok(Minimum { x, value: fx, iterations: it });
        };
        let gn = DVector::from_vec(gradient(&f, &xn, fn_));
        let s = DVector::from_iterator(k, xn.iter().zip(&x).map(|(a, b)| a - b));
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(k, k);
            let left = &i - rho * &s * y.transpose();
            let right = &i - rho * &y * s.transpose();
            hinv = &left * &hinv * &right + rho * &s * s.transpose();
        }
        let improvement = fx - fn_;
        x = xn;
        fx = fn_;
        g = gn;
        if improvement.abs() < 1e-12 * (1.0 + fx.abs()) && g.amax() < tol * 100.0 {
            return Ok(Minimum { x, value: fx, iterations: it + 1 });
        }
    }
    Err(Error::NoConvergence {
        what: "BFGS".into(),
        iterations: max_iter,
    })
}
