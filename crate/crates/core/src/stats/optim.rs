//! Derivative-free Nelder-Mead minimiser.

#[derive(Debug, Clone, Copy)]
pub struct NelderMead {
    /// Relative spread of function values across the simplex.
    pub ftol: f64,
    /// Largest vertex distance from the best vertex.
    pub xtol: f64,
    pub max_iter: usize,
    /// Initial simplex edge along each axis.
    pub step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead {
            ftol: 1e-8,
            xtol: 1e-6,
            max_iter: 5_000,
            step: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl NelderMead {
    pub fn minimize<F>(&self, f: F, x0: &[f64]) -> Minimum
    where
        F: Fn(&[f64]) -> f64,
    {
        let eval = |x: &[f64]| {
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };
        let dim = x0.len();
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
        simplex.push((x0.to_vec(), eval(x0)));
        for i in 0..dim {
            let mut x = x0.to_vec();
            x[i] += self.step;
            let fx = eval(&x);
            simplex.push((x, fx));
        }

        let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
        let mut iterations = 0;
        let mut converged = false;

        while iterations < self.max_iter {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let best = simplex[0].1;
            let spread = simplex.iter().map(|v| (v.1 - best).abs()).fold(0.0, f64::max);
            let diameter = simplex
                .iter()
                .skip(1)
                .map(|v| {
                    v.0.iter()
                        .zip(&simplex[0].0)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            if spread <= self.ftol * (best.abs() + self.ftol) && diameter <= self.xtol {
                converged = true;
                break;
            }
            iterations += 1;

            let worst = simplex[dim].clone();
            let centroid: Vec<f64> = (0..dim)
                .map(|j| simplex[..dim].iter().map(|v| v.0[j]).sum::<f64>() / dim as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect() };

            let xr = along(alpha);
            let fr = eval(&xr);
            if fr < simplex[0].1 {
                let xe = along(gamma);
                let fe = eval(&xe);
                simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < simplex[dim - 1].1 {
                simplex[dim] = (xr, fr);
                continue;
            }
            let (xc, fc) = if fr < worst.1 {
                let xc = along(rho * alpha);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(-rho);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                simplex[dim] = (xc, fc);
                continue;
            }
            let x_best = simplex[0].0.clone();
            for v in simplex.iter_mut().skip(1) {
                let x: Vec<f64> = x_best.iter().zip(&v.0).map(|(b, x)| b + sigma * (x - b)).collect();
                let fx = eval(&x);
                *v = (x, fx);
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (x, f) = simplex.swap_remove(0);
        Minimum {
            x,
            f,
            iterations,
            converged,
        }
    }
}
