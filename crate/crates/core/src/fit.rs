//! Damped least squares (Levenberg–Marquardt) for small parameter vectors.

use nalgebra::{DMatrix, DVector};

use crate::error::{QdmError, Result};

pub const DEFAULT_MAX_ITERATIONS: usize = 200;
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop once an accepted step changes the residual sum of squares by
    /// less than this fraction.
    pub tolerance: f64,
    pub initial_lambda: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            tolerance: DEFAULT_TOLERANCE,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmFit {
    pub params: Vec<f64>,
    /// Residual sum of squares at `params`.
    pub rss: f64,
    pub iterations: usize,
}

/// A model evaluated at sample `x`: writes ∂f/∂θ into `grad`, returns f.
pub trait Model {
    fn n_params(&self) -> usize;
    fn eval(&self, params: &[f64], x: f64, grad: &mut [f64]) -> f64;
}

fn residuals<M: Model>(
    model: &M,
    p: &[f64],
    xs: &[f64],
    ys: &[f64],
    jac: Option<&mut DMatrix<f64>>,
) -> (DVector<f64>, f64) {
    let n = model.n_params();
    let mut grad = vec![0.0; n];
    let mut r = DVector::zeros(xs.len());
    match jac {
        Some(j) => {
            for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
                let f = model.eval(p, x, &mut grad);
                r[i] = y - f;
                for k in 0..n {
                    j[(i, k)] = grad[k];
                }
            }
        }
        None => {
            for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
                r[i] = y - model.eval(p, x, &mut grad);
            }
        }
    }
    let rss = r.norm_squared();
    (r, rss)
}

/// Minimize Σ (y − f(x; θ))² from `initial`.
///
/// Uses Marquardt's diagonal scaling `(JᵀJ + λ·diag JᵀJ) δ = Jᵀr`. Returns
/// [`QdmError::FitNonConvergence`] if the tolerance is not met within the
/// iteration cap.
pub fn levenberg_marquardt<M: Model>(
    model: &M,
    xs: &[f64],
    ys: &[f64],
    initial: &[f64],
    opts: LmOptions,
) -> Result<LmFit> {
    let n = model.n_params();
    assert_eq!(initial.len(), n);
    let mut p = initial.to_vec();
    let mut jac = DMatrix::zeros(xs.len(), n);
    let (mut r, mut rss) = residuals(model, &p, xs, ys, Some(&mut jac));
    let mut lambda = opts.initial_lambda;

    for iter in 1..=opts.max_iterations {
        if rss == 0.0 {
            return Ok(LmFit {
                params: p,
                rss,
                iterations: iter - 1,
            });
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(delta) = a.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            let (_, trial_rss) = residuals(model, &trial, xs, ys, None);
            if trial_rss.is_finite() && trial_rss < rss {
                let improvement = (rss - trial_rss) / rss;
                p = trial;
                let (nr, nrss) = residuals(model, &p, xs, ys, Some(&mut jac));
                r = nr;
                rss = nrss;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if improvement < opts.tolerance {
                    return Ok(LmFit {
                        params: p,
                        rss,
                        iterations: iter,
                    });
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No descent direction left at any damping: a stationary point.
            return Ok(LmFit {
                params: p,
                rss,
                iterations: iter,
            });
        }
    }
    Err(QdmError::FitNonConvergence {
        iterations: opts.max_iterations,
        residual: rss,
        lambda,
    })
}
