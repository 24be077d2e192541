//! Age-structured transport solver for the infection-age density.
//!
//! The density is never time-stepped as a PDE: the boundary value solves a
//! Volterra-type integral equation (per-step fixed point, same contraction
//! regime as the limit solver), and the interior is filled by the exact
//! characteristic formulas — survival-ratio transport of the initial density
//! above the diagonal, survival-damped boundary transport below it. A
//! duration law with an atom (fixed infectious period) takes the exact
//! piecewise route instead, where the density vanishes past the atom.

use crate::error::{Error, Result};
use crate::infectivity::MeanInfectivity;
use crate::kernel::DiscreteKernel;
use crate::limit_solver::InitialAgeTerm;
use crate::quad;
use crate::scenario::InitialState;

const PICARD_TOL: f64 = 1e-12;
const PICARD_MAX_ITERS: usize = 200;
const ALIGN_EPS: f64 = 1e-9;

/// Infection-age density on the shared (time, age, cell) grid.
#[derive(Debug, Clone)]
pub struct DensityField {
    pub h: f64,
    pub k: usize,
    pub steps: usize,
    pub age_steps: usize,
    /// (steps+1)×(age_steps+1)×K.
    pub values: Vec<f64>,
    /// Boundary ī(t, 0, x), (steps+1)×K.
    pub boundary: Vec<f64>,
    /// ∫_0^t boundary ds, (steps+1)×K: the cumulative infections, so the
    /// susceptible field is S̄(0,x) minus this.
    pub cumulative_boundary: Vec<f64>,
    /// Whether the fixed-period piecewise formulas were used.
    pub atomic_route: bool,
}

impl DensityField {
    pub fn value(&self, m: usize, j: usize, k: usize) -> f64 {
        self.values[(m * (self.age_steps + 1) + j) * self.k + k]
    }

    pub fn boundary_at(&self, m: usize, k: usize) -> f64 {
        self.boundary[m * self.k + k]
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|m| m as f64 * self.h).collect()
    }

    pub fn ages(&self) -> Vec<f64> {
        (0..=self.age_steps).map(|j| j as f64 * self.h).collect()
    }
}

/// Solve the boundary integral equation by time marching and fill the field
/// from the characteristic formulas. The initial age measure must be
/// absolutely continuous.
pub fn solve_boundary(
    dk: &DiscreteKernel,
    mean: &MeanInfectivity,
    init: &InitialState,
    horizon: f64,
    h: f64,
) -> Result<DensityField> {
    let k = dk.k();
    if init.k() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: init.k(),
        });
    }
    if init.ages.is_atomic() {
        return Err(Error::NotApplicable(
            "the density solver needs an absolutely continuous initial age measure".into(),
        ));
    }
    let steps = {
        let s = (horizon / h).round() as usize;
        if s == 0 || (s as f64 * h - horizon).abs() > 1e-6 * h {
            return Err(Error::InvalidConfig(format!(
                "horizon {horizon} is not a multiple of step {h}"
            )));
        }
        s
    };
    let rho = dk.c_beta() * mean.lambda_star() * dk.big_c_b() * h / dk.c_b();
    if rho >= 0.5 {
        return Err(Error::ContractionFailure(format!(
            "C_beta·lambda*·C_B·h/c_B = {rho:.3} ≥ 0.5; shrink the step"
        )));
    }

    let age_term = InitialAgeTerm::new(&init.ages, h)?;
    let density_nodes = age_term.density_nodes().unwrap().to_vec();
    let abar = age_term.age_bound();
    let age_steps = steps + ((abar / h) + ALIGN_EPS).ceil() as usize;

    let n = (steps + 1) * k;
    let mut boundary = vec![0.0; n];
    let mut cumulative = vec![0.0; n];

    // Background force of the initially infected.
    let f0_norm: Vec<f64> = (0..=steps)
        .map(|m| age_term.force_at(m as f64 * h, mean))
        .collect();

    let b = dk.b_vec();
    let mut interaction = vec![0.0; k];
    let mut inner = vec![0.0; k];
    let mut next = vec![0.0; k];
    let mut past = vec![0.0; k];
    let mut u_prev = vec![0.0; k];
    let mut conv_w: Vec<f64> = Vec::new();

    // m = 0: explicit.
    for kk in 0..k {
        inner[kk] = init.infected[kk] * f0_norm[0];
    }
    dk.interaction_into(&inner, &mut interaction);
    for kk in 0..k {
        boundary[kk] = if b[kk] > 0.0 {
            init.susceptible[kk] / b[kk] * interaction[kk]
        } else {
            0.0
        };
    }

    for m in 1..=steps {
        let t = m as f64 * h;
        quad::conv_weights_into(m, h, mean.mean_cutoff(), |v| mean.mean_smooth(v), &mut conv_w);
        past.iter_mut().for_each(|v| *v = 0.0);
        for (i, &c) in conv_w.iter().enumerate().take(m) {
            if c == 0.0 {
                continue;
            }
            let row = &boundary[i * k..(i + 1) * k];
            for kk in 0..k {
                past[kk] += c * row[kk];
            }
        }
        let c_cur = conv_w[m];
        u_prev.copy_from_slice(&boundary[(m - 1) * k..m * k]);
        next.copy_from_slice(&u_prev);

        let mut converged = false;
        for _ in 0..PICARD_MAX_ITERS {
            for kk in 0..k {
                inner[kk] = init.infected[kk] * f0_norm[m] + past[kk] + c_cur * next[kk];
            }
            dk.interaction_into(&inner, &mut interaction);
            let mut delta = 0.0f64;
            for kk in 0..k {
                let cum = cumulative[(m - 1) * k + kk] + 0.5 * h * (u_prev[kk] + next[kk]);
                let remaining = (init.susceptible[kk] - cum).max(0.0);
                let v = if b[kk] > 0.0 {
                    remaining / b[kk] * interaction[kk]
                } else {
                    0.0
                };
                delta = delta.max((v - next[kk]).abs());
                next[kk] = v;
            }
            if delta <= PICARD_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::ContractionFailure(format!(
                "boundary fixed point stalled at t = {t}"
            )));
        }
        for kk in 0..k {
            let idx = m * k + kk;
            if next[kk] < -1e-9 {
                return Err(Error::NegativeField {
                    field: "boundary",
                    value: next[kk],
                    t,
                });
            }
            boundary[idx] = next[kk].max(0.0);
            cumulative[idx] = cumulative[idx - k] + 0.5 * h * (u_prev[kk] + boundary[idx]);
        }
    }

    // Fill the interior by characteristics.
    let atoms = mean.duration_atoms();
    let atomic_route = !atoms.is_empty();
    let d0 = |j: usize, kk: usize| -> f64 {
        if j < density_nodes.len() {
            init.infected[kk] * density_nodes[j]
        } else {
            0.0
        }
    };
    let mut values = vec![0.0; (steps + 1) * (age_steps + 1) * k];
    if atomic_route {
        if atoms.len() > 1 {
            return Err(Error::NotApplicable(
                "multiple duration atoms are outside the catalog".into(),
            ));
        }
        let t_i = atoms[0].0;
        for m in 0..=steps {
            for j in 0..=age_steps {
                let a = j as f64 * h;
                if a >= t_i - 1e-12 {
                    continue; // density vanishes at and past the atom
                }
                let base = (m * (age_steps + 1) + j) * k;
                if j >= m {
                    for kk in 0..k {
                        values[base + kk] = d0(j - m, kk);
                    }
                } else {
                    let brow = &boundary[(m - j) * k..(m - j + 1) * k];
                    values[base..base + k].copy_from_slice(brow);
                }
            }
        }
    } else {
        for m in 0..=steps {
            let t = m as f64 * h;
            for j in 0..=age_steps {
                let a = j as f64 * h;
                let base = (m * (age_steps + 1) + j) * k;
                if j >= m {
                    let denom = mean.duration_survival_left(a - t);
                    if denom == 0.0 {
                        continue;
                    }
                    let ratio = mean.duration_survival_left(a) / denom;
                    for kk in 0..k {
                        values[base + kk] = ratio * d0(j - m, kk);
                    }
                } else {
                    let damp = mean.duration_survival_left(a);
                    if damp == 0.0 {
                        continue;
                    }
                    let brow = &boundary[(m - j) * k..(m - j + 1) * k];
                    for kk in 0..k {
                        values[base + kk] = damp * brow[kk];
                    }
                }
            }
        }
    }

    Ok(DensityField {
        h,
        k,
        steps,
        age_steps,
        values,
        boundary,
        cumulative_boundary: cumulative,
        atomic_route,
    })
}

/// Max absolute residual of the transport equation along characteristics,
/// using the upwind directional difference plus the hazard term. Only defined
/// for absolutely continuous duration laws.
pub fn pde_residual(field: &DensityField, mean: &MeanInfectivity) -> Result<f64> {
    if !mean.is_absolutely_continuous() {
        return Err(Error::NotApplicable(
            "pointwise residual needs an absolutely continuous duration law".into(),
        ));
    }
    let (h, k) = (field.h, field.k);
    let mut worst = 0.0f64;
    for m in 1..=field.steps {
        for j in 1..=field.age_steps {
            let a = j as f64 * h;
            let Some(hazard) = mean.duration_hazard(a) else {
                continue; // beyond the support; the density is zero there
            };
            for kk in 0..k {
                let cur = field.value(m, j, kk);
                let back = field.value(m - 1, j - 1, kk);
                let res = (cur - back) / h + hazard * cur;
                worst = worst.max(res.abs());
            }
        }
    }
    Ok(worst)
}

/// Age-integrated totals reconstructed from the density field.
#[derive(Debug, Clone)]
pub struct Totals {
    /// (steps+1)×K: ∫ ī(t,a,x) da.
    pub infected: Vec<f64>,
    /// (steps+1)×K: the total force of infection carried by the density.
    pub force: Vec<f64>,
}

/// Integrate the field in age: infected totals and the force of infection.
///
/// The force kernel is the survival-ratio-weighted mean curve
/// G^c(a−t)/G^c(a) · λ̄(a), which is the exact age-space rewriting of the
/// Volterra force. On the boundary-fed segment a ≤ t it collapses to the bare
/// shape λ̃(a) for shape-times-indicator laws, which is used there directly.
pub fn reconstruct_totals(field: &DensityField, mean: &MeanInfectivity) -> Totals {
    let (h, k, jn) = (field.h, field.k, field.age_steps + 1);
    let mut infected = vec![0.0; (field.steps + 1) * k];
    let mut force = vec![0.0; (field.steps + 1) * k];
    let shape = mean.shape_factor();
    for m in 0..=field.steps {
        let t = m as f64 * h;
        for j in 0..jn {
            let a = j as f64 * h;
            let w = if j == 0 || j == jn - 1 { 0.5 * h } else { h };
            let force_w = if a <= t {
                match shape {
                    Some(s) => w * s.value(a),
                    None => {
                        let denom = mean.duration_survival_left(a);
                        if denom == 0.0 {
                            0.0
                        } else {
                            w * mean.mean(a) / denom
                        }
                    }
                }
            } else {
                let denom = mean.duration_survival_left(a);
                if denom == 0.0 {
                    0.0
                } else {
                    w * mean.mean(a) * mean.duration_survival_left(a - t) / denom
                }
            };
            let row = &field.values[(m * jn + j) * k..(m * jn + j + 1) * k];
            for kk in 0..k {
                infected[m * k + kk] += w * row[kk];
                force[m * k + kk] += force_w * row[kk];
            }
        }
    }
    Totals { infected, force }
}
