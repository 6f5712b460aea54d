//! Damped Newton–Raphson ascent with positivity constraints.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SglmmError};

/// Something Newton can maximize.
pub trait NewtonObjective {
    /// Value, gradient and Hessian at `x`.
    fn evaluate(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)>;
    /// Value only.
    fn value(&self, x: &DVector<f64>) -> Result<f64>;
}

#[derive(Debug, Clone)]
pub struct NewtonConfig {
    /// Stop once `‖g‖∞` falls below this.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Coordinates that must stay strictly positive.
    pub positive: Vec<usize>,
    /// Initial ridge added when `−H` is not positive definite.
    pub ridge: f64,
    /// A step counts as non-decreasing when it loses less than this; covers
    /// roundoff in objectives that are sums of many terms.
    pub value_tol: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { grad_tol: 1e-6, max_iter: 100, positive: Vec::new(), ridge: 1e-8, value_tol: 1e-9 }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after every accepted step, starting point first.
    pub values: Vec<f64>,
    pub ridge_used: bool,
}

fn ascent_direction(g: &DVector<f64>, h: &DMatrix<f64>, ridge0: f64) -> Result<(DVector<f64>, bool)> {
    let mut neg = -h.clone();
    crate::linalg::symmetrize(&mut neg);
    if let Some(ch) = neg.clone().cholesky() {
        return Ok((ch.solve(g), false));
    }
    let scale = neg.diagonal().amax().max(1.0);
    let mut ridge = ridge0 * scale;
    for _ in 0..40 {
        let mut reg = neg.clone();
        for i in 0..reg.nrows() {
            reg[(i, i)] += ridge;
        }
        if let Some(ch) = reg.cholesky() {
            return Ok((ch.solve(g), true));
        }
        ridge *= 10.0;
    }
    Err(SglmmError::Optimization("Hessian could not be regularized".into()))
}

/// Maximizes `obj` from `start`. Each step is halved until the objective does
/// not decrease and every positive coordinate stays positive.
pub fn newton_raphson(obj: &impl NewtonObjective, start: &DVector<f64>, cfg: &NewtonConfig) -> Result<NewtonResult> {
    let mut x = start.clone();
    if cfg.positive.iter().any(|&i| !(x[i] > 0.0)) {
        return Err(SglmmError::Optimization("starting point violates positivity".into()));
    }
    let (mut f, mut g, mut h) = obj.evaluate(&x)?;
    if !f.is_finite() {
        return Err(SglmmError::Optimization("objective is not finite at the starting point".into()));
    }
    let mut values = vec![f];
    let mut converged = false;
    let mut ridge_used = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        if g.amax() < cfg.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let (dir, ridged) = ascent_direction(&g, &h, cfg.ridge)?;
        ridge_used |= ridged;
        let mut t = 1.0;
        for &i in &cfg.positive {
            while x[i] + t * dir[i] <= 0.0 {
                t *= 0.5;
            }
        }
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &x + &dir * t;
            match obj.value(&cand) {
                Ok(fc) if fc.is_finite() && fc >= f - cfg.value_tol => {
                    accepted = Some(cand);
                    break;
                }
                _ => t *= 0.5,
            }
        }
        let Some(next) = accepted else {
            // no ascent left at working precision
            break;
        };
        x = next;
        (f, g, h) = obj.evaluate(&x)?;
        values.push(f);
    }
    if !converged && g.amax() < cfg.grad_tol {
        converged = true;
    }
    Ok(NewtonResult { x, value: f, gradient: g, hessian: h, iterations, converged, values, ridge_used })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic {
        a: DMatrix<f64>,
        b: DVector<f64>,
    }

    impl NewtonObjective for Quadratic {
        fn evaluate(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
            let g = &self.b - &self.a * x;
            Ok((self.value(x)?, g, -self.a.clone()))
        }
        fn value(&self, x: &DVector<f64>) -> Result<f64> {
            Ok(self.b.dot(x) - 0.5 * x.dot(&(&self.a * x)))
        }
    }

    #[test]
    fn quadratic_in_one_step() {
        let q = Quadratic { a: DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]), b: DVector::from_vec(vec![1.0, -1.0]) };
        let r = newton_raphson(&q, &DVector::zeros(2), &NewtonConfig::default()).unwrap();
        assert_eq!(r.iterations, 1);
        assert!(r.converged && r.gradient.amax() < 1e-6);
        assert!(r.values.windows(2).all(|w| w[1] >= w[0]));
    }

    struct LogBarrier;

    impl NewtonObjective for LogBarrier {
        // f(x) = ln x − x, maximized at 1
        fn evaluate(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
            let v = x[0];
            Ok((self.value(x)?, DVector::from_element(1, 1.0 / v - 1.0), DMatrix::from_element(1, 1, -1.0 / (v * v))))
        }
        fn value(&self, x: &DVector<f64>) -> Result<f64> {
            Ok(x[0].ln() - x[0])
        }
    }

    #[test]
    fn positivity_kept_by_halving() {
        let cfg = NewtonConfig { positive: vec![0], ..Default::default() };
        let r = newton_raphson(&LogBarrier, &DVector::from_element(1, 3.0), &cfg).unwrap();
        assert!(r.converged && (r.x[0] - 1.0).abs() < 1e-6);
        assert!(newton_raphson(&LogBarrier, &DVector::from_element(1, -1.0), &cfg).is_err());
    }

    struct Saddle;

    impl NewtonObjective for Saddle {
        // concave in the far field, convex at the origin: −x⁴/4 + x²/2
        fn evaluate(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
            let v = x[0];
            Ok((self.value(x)?, DVector::from_element(1, -v.powi(3) + v), DMatrix::from_element(1, 1, -3.0 * v * v + 1.0)))
        }
        fn value(&self, x: &DVector<f64>) -> Result<f64> {
            Ok(-x[0].powi(4) / 4.0 + x[0].powi(2) / 2.0)
        }
    }

    #[test]
    fn indefinite_hessian_gets_ridge() {
        let r = newton_raphson(&Saddle, &DVector::from_element(1, 0.1), &NewtonConfig::default()).unwrap();
        assert!(r.ridge_used);
        assert!(r.converged && (r.x[0].abs() - 1.0).abs() < 1e-6);
    }
}
