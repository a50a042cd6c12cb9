//! REML fit of a linear probability model with crossed random intercepts.
//!
//! The model is `y = β + u[participant] + v[item] + ε` with
//! `V(θ) = σ²_e·I + σ²_u·Z_u Z_uᵀ + σ²_v·Z_v Z_vᵀ`. The restricted
//! log-likelihood is
//!
//! ```text
//! ℓ(θ) = −½ [ log|V| + log(1ᵀV⁻¹1) + rᵀV⁻¹r + (n − 1) log 2π ],  r = y − 1β̂
//! ```
//!
//! Two evaluators compute the same quantity. [`Solver::Dense`] factors the
//! n×n covariance directly. [`Solver::Structured`] applies the Woodbury
//! identity and eliminates the larger factor's diagonal block, so each
//! evaluation costs O(n + L·S²) for L levels of the larger and S of the
//! smaller factor. The structured path is validated against the dense one in
//! the tests below.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dist::normal_two_sided_p;
use super::format_p;
use super::optim::NelderMead;
use crate::exec::Execution;
use crate::qc::RetainedRating;
use crate::study::ChoiceVariant;
use crate::{Error, Result};

const LOG_FLOOR: f64 = -30.0;
const RESID_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Solver {
    Dense,
    Structured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Components {
    /// Participant, item and residual variances.
    Full,
    /// Random-effect variances pinned to zero; only σ²_e is estimated.
    ResidualOnly,
}

#[derive(Debug, Clone, Copy)]
pub struct FitConfig {
    pub components: Components,
    pub solver: Solver,
    pub starts: usize,
    pub optimizer: NelderMead,
    pub exec: Execution,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            components: Components::Full,
            solver: Solver::Structured,
            starts: 5,
            optimizer: NelderMead {
                ftol: 1e-8,
                xtol: 1e-6,
                max_iter: 5_000,
                step: 0.5,
            },
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub user: f64,
    pub item: f64,
    pub resid: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub beta: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
    pub sigma2_item: f64,
    pub sigma2_user: f64,
    pub sigma2_resid: f64,
    pub loglik: f64,
    pub n_obs: usize,
    pub n_participants: usize,
    pub n_items: usize,
    pub converged: bool,
    pub iterations: usize,
    /// REML log-likelihood at each multi-start initial point.
    pub start_logliks: Vec<f64>,
}

impl fmt::Display for ModelFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "mixed-effects model (REML, N = {}, log-likelihood = {:.2})",
            self.n_obs, self.loglik
        )?;
        writeln!(f, "β = {:.3}, z = {:.2}, {}", self.beta, self.z, format_p(self.p))?;
        write!(
            f,
            "σ²_item = {:.3}, σ²_user = {:.3}, σ²_resid = {:.3}{}",
            self.sigma2_item,
            self.sigma2_user,
            self.sigma2_resid,
            if self.converged { "" } else { " (not converged)" }
        )
    }
}

/// Binary responses indexed by participant and item level.
#[derive(Debug, Clone, PartialEq)]
pub struct LpmData {
    pub y: Vec<f64>,
    pub participant: Vec<usize>,
    pub item: Vec<usize>,
    pub n_participants: usize,
    pub n_items: usize,
}

impl LpmData {
    pub fn from_ratings(ratings: &[RetainedRating]) -> Result<Self> {
        let mut participants: BTreeMap<&str, usize> = BTreeMap::new();
        let mut items: BTreeMap<&str, usize> = BTreeMap::new();
        for r in ratings {
            participants.entry(&r.participant_id).or_insert(0);
            items.entry(&r.item_id).or_insert(0);
        }
        for (i, v) in participants.values_mut().enumerate() {
            *v = i;
        }
        for (i, v) in items.values_mut().enumerate() {
            *v = i;
        }
        let mut data = LpmData {
            y: Vec::with_capacity(ratings.len()),
            participant: Vec::with_capacity(ratings.len()),
            item: Vec::with_capacity(ratings.len()),
            n_participants: participants.len(),
            n_items: items.len(),
        };
        for r in ratings {
            let y = match r.choice_variant {
                ChoiceVariant::High => 1.0,
                ChoiceVariant::Low => 0.0,
                other => {
                    return Err(Error::validation(format!(
                        "response must be binary (low/high), got {other:?} for item {:?}",
                        r.item_id
                    )))
                }
            };
            data.y.push(y);
            data.participant.push(participants[r.participant_id.as_str()]);
            data.item.push(items[r.item_id.as_str()]);
        }
        Ok(data)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    fn validate(&self) -> Result<()> {
        if self.n() < 2 {
            return Err(Error::validation("need at least two observations"));
        }
        if let Some(v) = self.y.iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(Error::validation(format!("response must be 0 or 1, got {v}")));
        }
        Ok(())
    }
}

/// Quadratic forms 1ᵀV⁻¹1, 1ᵀV⁻¹y, yᵀV⁻¹y and log|V| at one θ.
#[derive(Debug, Clone, Copy)]
struct Forms {
    one_one: f64,
    one_y: f64,
    y_y: f64,
    log_det: f64,
}

impl Forms {
    fn loglik(&self, n: usize) -> f64 {
        let r_v_r = self.y_y - self.one_y * self.one_y / self.one_one;
        -0.5 * (self.log_det + self.one_one.ln() + r_v_r + (n as f64 - 1.0) * (2.0 * std::f64::consts::PI).ln())
    }
}

/// Sufficient statistics for the structured evaluator. "big" is the factor
/// with more levels and gets the diagonal block.
struct Crossed {
    n: usize,
    big_is_participant: bool,
    big_counts: Vec<f64>,
    big_sum_y: Vec<f64>,
    small_counts: Vec<f64>,
    small_sum_y: Vec<f64>,
    cross: DMatrix<f64>,
    sum_y: f64,
    sum_yy: f64,
}

impl Crossed {
    fn new(data: &LpmData) -> Self {
        let big_is_participant = data.n_participants >= data.n_items;
        let (nb, ns) = if big_is_participant {
            (data.n_participants, data.n_items)
        } else {
            (data.n_items, data.n_participants)
        };
        let mut c = Crossed {
            n: data.n(),
            big_is_participant,
            big_counts: vec![0.0; nb],
            big_sum_y: vec![0.0; nb],
            small_counts: vec![0.0; ns],
            small_sum_y: vec![0.0; ns],
            cross: DMatrix::zeros(nb, ns),
            sum_y: 0.0,
            sum_yy: 0.0,
        };
        for k in 0..data.n() {
            let (b, s) = if big_is_participant {
                (data.participant[k], data.item[k])
            } else {
                (data.item[k], data.participant[k])
            };
            let y = data.y[k];
            c.big_counts[b] += 1.0;
            c.big_sum_y[b] += y;
            c.small_counts[s] += 1.0;
            c.small_sum_y[s] += y;
            c.cross[(b, s)] += 1.0;
            c.sum_y += y;
            c.sum_yy += y * y;
        }
        c
    }

    fn forms(&self, vc: VarianceComponents) -> Option<Forms> {
        let se = vc.resid;
        let (s_big, s_small) = if self.big_is_participant {
            (vc.user, vc.item)
        } else {
            (vc.item, vc.user)
        };
        let (lb, ls) = (s_big.sqrt(), s_small.sqrt());
        let nb = self.big_counts.len();
        let ns = self.small_counts.len();

        // M = I + Λ ZᵀZ Λ / σ²_e = [[A, B], [Bᵀ, C]] with A and C diagonal.
        let a: Vec<f64> = self.big_counts.iter().map(|c| 1.0 + s_big * c / se).collect();
        let b_scale = lb * ls / se;
        let mut schur = DMatrix::<f64>::zeros(ns, ns);
        for k in 0..ns {
            schur[(k, k)] = 1.0 + s_small * self.small_counts[k] / se;
        }
        if b_scale > 0.0 {
            // S = C − Bᵀ A⁻¹ B
            let mut scaled = self.cross.clone();
            for j in 0..nb {
                let w = b_scale / a[j].sqrt();
                scaled.row_mut(j).scale_mut(w);
            }
            schur -= scaled.transpose() * &scaled;
        }
        let chol = schur.cholesky()?;
        let log_det_m = a.iter().map(|v| v.ln()).sum::<f64>()
            + 2.0 * chol.l_dirty().diagonal().iter().take(ns).map(|v| v.ln()).sum::<f64>();

        // h = Λ Zᵀ a for a ∈ {1, y}.
        let h = |big: &[f64], small: &[f64]| -> (Vec<f64>, DVector<f64>) {
            (
                big.iter().map(|v| lb * v).collect(),
                DVector::from_iterator(ns, small.iter().map(|v| ls * v)),
            )
        };
        let solve = |h1: &[f64], h2: &DVector<f64>| -> (Vec<f64>, DVector<f64>) {
            // x2 = S⁻¹(h2 − Bᵀ A⁻¹ h1); x1 = A⁻¹(h1 − B x2)
            let mut rhs = h2.clone();
            if b_scale > 0.0 {
                for j in 0..nb {
                    let t = b_scale * h1[j] / a[j];
                    if t != 0.0 {
                        for k in 0..ns {
                            rhs[k] -= self.cross[(j, k)] * t;
                        }
                    }
                }
            }
            let x2 = chol.solve(&rhs);
            let x1 = (0..nb)
                .map(|j| {
                    let bx: f64 = if b_scale > 0.0 {
                        (0..ns).map(|k| self.cross[(j, k)] * x2[k]).sum::<f64>() * b_scale
                    } else {
                        0.0
                    };
                    (h1[j] - bx) / a[j]
                })
                .collect();
            (x1, x2)
        };
        let dot = |a1: &[f64], a2: &DVector<f64>, b1: &[f64], b2: &DVector<f64>| -> f64 {
            a1.iter().zip(b1).map(|(x, y)| x * y).sum::<f64>() + a2.dot(b2)
        };

        let (h1_one, h2_one) = h(&self.big_counts, &self.small_counts);
        let (h1_y, h2_y) = h(&self.big_sum_y, &self.small_sum_y);
        let (x1_one, x2_one) = solve(&h1_one, &h2_one);
        let (x1_y, x2_y) = solve(&h1_y, &h2_y);

        let n = self.n as f64;
        let se2 = se * se;
        Some(Forms {
            one_one: n / se - dot(&h1_one, &h2_one, &x1_one, &x2_one) / se2,
            one_y: self.sum_y / se - dot(&h1_one, &h2_one, &x1_y, &x2_y) / se2,
            y_y: self.sum_yy / se - dot(&h1_y, &h2_y, &x1_y, &x2_y) / se2,
            log_det: n * se.ln() + log_det_m,
        })
    }
}

fn dense_forms(data: &LpmData, vc: VarianceComponents) -> Option<Forms> {
    let n = data.n();
    let v = DMatrix::from_fn(n, n, |i, j| {
        let mut x = 0.0;
        if i == j {
            x += vc.resid;
        }
        if data.participant[i] == data.participant[j] {
            x += vc.user;
        }
        if data.item[i] == data.item[j] {
            x += vc.item;
        }
        x
    });
    let chol = v.cholesky()?;
    let ones = DVector::from_element(n, 1.0);
    let y = DVector::from_column_slice(&data.y);
    let v_inv_one = chol.solve(&ones);
    let v_inv_y = chol.solve(&y);
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Some(Forms {
        one_one: ones.dot(&v_inv_one),
        one_y: ones.dot(&v_inv_y),
        y_y: y.dot(&v_inv_y),
        log_det,
    })
}

enum Evaluator<'a> {
    Dense(&'a LpmData),
    Structured(Crossed),
}

impl Evaluator<'_> {
    fn forms(&self, vc: VarianceComponents) -> Option<Forms> {
        match self {
            Evaluator::Dense(d) => dense_forms(d, vc),
            Evaluator::Structured(c) => c.forms(vc),
        }
    }

    fn n(&self) -> usize {
        match self {
            Evaluator::Dense(d) => d.n(),
            Evaluator::Structured(c) => c.n,
        }
    }
}

/// REML log-likelihood at fixed variance components.
pub fn reml_loglik(data: &LpmData, vc: VarianceComponents, solver: Solver) -> Result<f64> {
    data.validate()?;
    if vc.resid < RESID_FLOOR || vc.user < 0.0 || vc.item < 0.0 {
        return Err(Error::Domain(format!(
            "variance components must be non-negative with σ²_e >= {RESID_FLOOR}, got {vc:?}"
        )));
    }
    let eval = match solver {
        Solver::Dense => Evaluator::Dense(data),
        Solver::Structured => Evaluator::Structured(Crossed::new(data)),
    };
    eval.forms(vc)
        .map(|f| f.loglik(data.n()))
        .ok_or_else(|| Error::Domain("covariance matrix is not positive definite".into()))
}

fn theta_to_vc(theta: &[f64], components: Components) -> VarianceComponents {
    let var = |t: f64| t.max(LOG_FLOOR).exp();
    match components {
        Components::Full => VarianceComponents {
            user: var(theta[0]),
            item: var(theta[1]),
            resid: var(theta[2]).max(RESID_FLOOR),
        },
        Components::ResidualOnly => VarianceComponents {
            user: 0.0,
            item: 0.0,
            resid: var(theta[0]).max(RESID_FLOOR),
        },
    }
}

fn start_grid(components: Components, var_y: f64, starts: usize) -> Vec<Vec<f64>> {
    const FULL: [[f64; 3]; 5] = [
        [0.30, 0.05, 0.65],
        [0.10, 0.10, 0.80],
        [0.50, 0.01, 0.49],
        [0.05, 0.30, 0.65],
        [0.20, 0.20, 0.60],
    ];
    const RESID: [f64; 5] = [1.0, 0.5, 2.0, 0.25, 4.0];
    let var_y = if var_y > 0.0 { var_y } else { 1.0 };
    (0..starts.max(1))
        .map(|i| match components {
            Components::Full => {
                let s = FULL[i % FULL.len()];
                let jitter = 1.0 + (i / FULL.len()) as f64 * 0.5;
                s.iter().map(|f| (f * var_y * jitter).ln()).collect()
            }
            Components::ResidualOnly => vec![(RESID[i % RESID.len()] * var_y).ln()],
        })
        .collect()
}

pub fn fit_mixed_lpm(ratings: &[RetainedRating]) -> Result<ModelFit> {
    fit_mixed_lpm_with(&LpmData::from_ratings(ratings)?, &FitConfig::default())
}

pub fn fit_mixed_lpm_with(data: &LpmData, config: &FitConfig) -> Result<ModelFit> {
    data.validate()?;
    let evaluator = match config.solver {
        Solver::Dense => Evaluator::Dense(data),
        Solver::Structured => Evaluator::Structured(Crossed::new(data)),
    };
    let n = evaluator.n();
    let objective = |theta: &[f64]| -> f64 {
        match evaluator.forms(theta_to_vc(theta, config.components)) {
            Some(f) => -f.loglik(n),
            None => f64::INFINITY,
        }
    };

    let mean = data.y.iter().sum::<f64>() / n as f64;
    let var_y = data.y.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let starts = start_grid(config.components, var_y, config.starts);

    let runs = config.exec.map(&starts, |x0| {
        let start_ll = -objective(x0);
        (start_ll, config.optimizer.minimize(objective, x0))
    });

    let start_logliks: Vec<f64> = runs.iter().map(|(ll, _)| *ll).collect();
    let iterations = runs.iter().map(|(_, m)| m.iterations).sum();
    let best = runs
        .into_iter()
        .map(|(_, m)| m)
        .min_by(|a, b| a.f.total_cmp(&b.f))
        .expect("at least one start");
    if !best.f.is_finite() {
        return Err(Error::Domain("REML objective is not finite at any start".into()));
    }

    let vc = theta_to_vc(&best.x, config.components);
    let forms = evaluator
        .forms(vc)
        .ok_or_else(|| Error::Domain("covariance matrix is not positive definite at optimum".into()))?;
    let beta = forms.one_y / forms.one_one;
    let se = forms.one_one.powf(-0.5);
    let z = beta / se;
    Ok(ModelFit {
        beta,
        se,
        z,
        p: normal_two_sided_p(z),
        sigma2_item: vc.item,
        sigma2_user: vc.user,
        sigma2_resid: vc.resid,
        loglik: forms.loglik(n),
        n_obs: n,
        n_participants: data.n_participants,
        n_items: data.n_items,
        converged: best.converged,
        iterations,
        start_logliks,
    })
}
