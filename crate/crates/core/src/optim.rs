//! Derivative-free minimisers on unconstrained coordinates.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    /// Stop when the spread of objective values over the simplex drops below
    /// `tol * (|f_best| + tol)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Edge length of the initial axis-aligned simplex.
    pub step: f64,
    /// Number of times the simplex is rebuilt around the best point after
    /// converging, which guards against premature collapse.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 2000,
            step: 0.5,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Best objective value after each iteration.
    pub trace: Vec<f64>,
}

/// Nelder-Mead with the standard coefficients (1, 2, 0.5, 0.5).
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = x0.len();
    if dim == 0 {
        return Err(Error::invalid("cannot minimise over zero parameters"));
    }
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64], evaluations: &mut usize| -> Result<f64> {
        *evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            return Err(Error::NanObjective);
        }
        Ok(v)
    };

    let mut start = x0.to_vec();
    let mut iterations = 0usize;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut best = (start.clone(), eval(&start, &mut evaluations)?);

    for _round in 0..=opts.restarts {
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
        simplex.push((start.clone(), best.1));
        for k in 0..dim {
            let mut p = start.clone();
            p[k] += opts.step;
            let v = eval(&p, &mut evaluations)?;
            simplex.push((p, v));
        }
        converged = false;
        while iterations < opts.max_iter {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let f_best = simplex[0].1;
            let f_worst = simplex[dim].1;
            if (f_worst - f_best).abs() <= opts.tol * (f_best.abs() + opts.tol) {
                converged = true;
                break;
            }
            iterations += 1;

            let mut centroid = vec![0.0; dim];
            for (p, _) in &simplex[..dim] {
                for (c, x) in centroid.iter_mut().zip(p) {
                    *c += x / dim as f64;
                }
            }
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[dim].0)
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };

            let xr = along(1.0);
            let fr = eval(&xr, &mut evaluations)?;
            if fr < simplex[0].1 {
                let xe = along(2.0);
                let fe = eval(&xe, &mut evaluations)?;
                simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[dim - 1].1 {
                simplex[dim] = (xr, fr);
            } else {
                let (xc, fc) = if fr < f_worst {
                    let xc = along(0.5);
                    let fc = eval(&xc, &mut evaluations)?;
                    (xc, fc)
                } else {
                    let xc = along(-0.5);
                    let fc = eval(&xc, &mut evaluations)?;
                    (xc, fc)
                };
                if fc < fr.min(f_worst) {
                    simplex[dim] = (xc, fc);
                } else {
                    let anchor = simplex[0].0.clone();
                    for vertex in simplex.iter_mut().skip(1) {
                        let p: Vec<f64> = anchor
                            .iter()
                            .zip(&vertex.0)
                            .map(|(a, x)| a + 0.5 * (x - a))
                            .collect();
                        let v = eval(&p, &mut evaluations)?;
                        *vertex = (p, v);
                    }
                }
            }
            let round_best = simplex.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
            trace.push(round_best.min(best.1));
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if simplex[0].1 <= best.1 {
            best = simplex[0].clone();
        }
        start = best.0.clone();
        if iterations >= opts.max_iter {
            break;
        }
    }

    Ok(Minimum {
        x: best.0,
        value: best.1,
        iterations,
        evaluations,
        converged,
        trace,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct ScalarMinimum {
    pub x: f64,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Brent's method on `[lo, hi]`.
pub fn brent<F>(mut f: F, lo: f64, hi: f64, tol: f64, max_iter: usize) -> Result<ScalarMinimum>
where
    F: FnMut(f64) -> Result<f64>,
{
    const GOLD: f64 = 0.381_966_011_250_105_1;
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let mut x = a + GOLD * (b - a);
    let mut w = x;
    let mut v = x;
    let mut fx = f(x)?;
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for it in 0..max_iter {
        let m = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            return Ok(ScalarMinimum {
                x,
                value: fx,
                iterations: it,
                converged: true,
            });
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            e = d;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u)?;
        if fu.is_nan() {
            return Err(Error::NanObjective);
        }
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Ok(ScalarMinimum {
        x,
        value: fx,
        iterations: max_iter,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = NelderMeadOptions {
            tol: 1e-14,
            max_iter: 5000,
            ..Default::default()
        };
        let m = nelder_mead(f, &[-1.2, 1.0], &opts).unwrap();
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-4, "{:?}", m.x);
        assert!((m.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn trace_never_increases() {
        let f = |x: &[f64]| x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * (v - 0.3).powi(2)).sum::<f64>();
        let m = nelder_mead(f, &[2.0, -1.0, 0.5, 4.0, 1.0], &NelderMeadOptions::default()).unwrap();
        assert!(m.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(m.value < 1e-6);
    }

    #[test]
    fn nan_objective_is_an_error() {
        let r = nelder_mead(|x: &[f64]| if x[0] > 0.2 { f64::NAN } else { x[0] * x[0] }, &[0.0], &NelderMeadOptions::default());
        assert!(matches!(r, Err(Error::NanObjective)));
    }

    #[test]
    fn max_iter_flags_nonconvergence() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = NelderMeadOptions {
            max_iter: 5,
            ..Default::default()
        };
        let m = nelder_mead(f, &[-1.2, 1.0], &opts).unwrap();
        assert!(!m.converged);
        assert_eq!(m.iterations, 5);
    }

    #[test]
    fn brent_parabola() {
        let m = brent(|x| Ok((x - 1.3).powi(2) + 2.0), -5.0, 10.0, 1e-10, 200).unwrap();
        assert!(m.converged);
        assert!((m.x - 1.3).abs() < 1e-7);
    }
}
