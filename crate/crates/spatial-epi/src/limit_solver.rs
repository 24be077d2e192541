//! Deterministic scaling limit: the coupled Volterra system for susceptibles
//! and total force of infection, the derived infected/recovered fields, the
//! cumulative-in-age section field, the SIS variant, and the SIS endemic
//! equilibrium.
//!
//! Discretization: one uniform step h shared by time and age, so convolution
//! lags and characteristics land on grid nodes; trapezoid quadrature
//! throughout; the (susceptible, force) value at the current node is implicit
//! and resolved by fixed-point iteration (a contraction for small enough h,
//! gated up front).

use crate::error::{Error, Result};
use crate::infectivity::MeanInfectivity;
use crate::kernel::DiscreteKernel;
use crate::quad;
use crate::scenario::{AgeDistribution, InitialState};

const PICARD_TOL: f64 = 1e-12;
const PICARD_MAX_ITERS: usize = 200;
const ALIGN_EPS: f64 = 1e-9;

/// Gridded limit fields on the shared (time, age, cell) grid.
#[derive(Debug, Clone)]
pub struct LimitFields {
    pub h: f64,
    pub k: usize,
    /// Time nodes 0..=steps.
    pub steps: usize,
    /// Age nodes 0..=age_steps, reaching at least horizon + initial age bound.
    pub age_steps: usize,
    /// (steps+1)×K row-major.
    pub susceptible: Vec<f64>,
    pub force: Vec<f64>,
    /// Instantaneous rate of new infections (the age-density boundary value).
    pub incidence: Vec<f64>,
    pub infected: Vec<f64>,
    pub recovered: Vec<f64>,
    /// ∫_0^t incidence ds, the cumulative infections per cell.
    pub cumulative_incidence: Vec<f64>,
    /// Cumulative-in-age sections, (steps+1)×(age_steps+1)×K, filled on
    /// request (large).
    pub age_sections: Option<Vec<f64>>,
}

impl LimitFields {
    pub fn at(&self, field: &[f64], m: usize, k: usize) -> f64 {
        field[m * self.k + k]
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|m| m as f64 * self.h).collect()
    }

    pub fn ages(&self) -> Vec<f64> {
        (0..=self.age_steps).map(|j| j as f64 * self.h).collect()
    }

    pub fn section_at(&self, m: usize, j: usize, k: usize) -> Option<f64> {
        self.age_sections
            .as_ref()
            .map(|s| s[(m * (self.age_steps + 1) + j) * self.k + k])
    }
}

/// Quadrature view of the normalized initial age measure.
pub(crate) struct InitialAgeTerm {
    /// Sorted (age, mass), purely atomic case.
    atoms: Option<Vec<(f64, f64)>>,
    /// Density sampled on the h-grid, nodes 0..=j0.
    density: Option<Vec<f64>>,
    abar: f64,
    h: f64,
    /// Quadrature mass of the measure (exactly 1 for atoms).
    mass: f64,
}

impl InitialAgeTerm {
    pub(crate) fn new(ages: &AgeDistribution, h: f64) -> Result<Self> {
        let abar = ages.upper_bound();
        if let Some(mut atoms) = ages.atoms() {
            atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            return Ok(Self {
                atoms: Some(atoms),
                density: None,
                abar,
                h,
                mass: 1.0,
            });
        }
        let j0 = (abar / h + ALIGN_EPS).ceil() as usize;
        let density: Vec<f64> = (0..=j0)
            .map(|j| ages.density(j as f64 * h).unwrap_or(0.0))
            .collect();
        let w = quad::weighted_trapezoid_weights(h, j0 + 1, abar, |_| 1.0);
        let mass = w.iter().zip(&density).map(|(wi, di)| wi * di).sum();
        Ok(Self {
            atoms: None,
            density: Some(density),
            abar,
            h,
            mass,
        })
    }

    /// Normalized density values on the h-grid (None for atomic measures).
    pub(crate) fn density_nodes(&self) -> Option<&[f64]> {
        self.density.as_deref()
    }

    pub(crate) fn age_bound(&self) -> f64 {
        self.abar
    }

    /// ∫ λ̄(a + t) measure(da), for the normalized measure.
    pub(crate) fn force_at(&self, t: f64, mean: &MeanInfectivity) -> f64 {
        if let Some(atoms) = &self.atoms {
            return atoms.iter().map(|&(a, w)| w * mean.mean(a + t)).sum();
        }
        let density = self.density.as_ref().unwrap();
        let upper = match mean.mean_cutoff() {
            Some(c) => (c - t).min(self.abar),
            None => self.abar,
        };
        if upper <= 0.0 {
            return 0.0;
        }
        let w = quad::weighted_trapezoid_weights(self.h, density.len(), upper, |a| {
            mean.mean_smooth(a + t)
        });
        w.iter().zip(density).map(|(wi, di)| wi * di).sum()
    }

    /// Prefix view of u ↦ ∫_{[0,u]} F^c(a+t)/F^c(a) measure(da) on the h-grid.
    fn survival_prefix(&self, t: f64, mean: &MeanInfectivity) -> AgePrefix {
        if let Some(atoms) = &self.atoms {
            let ages: Vec<f64> = atoms.iter().map(|&(a, _)| a).collect();
            let mut prefix = Vec::with_capacity(atoms.len() + 1);
            prefix.push(0.0);
            let mut acc = 0.0;
            for &(a, w) in atoms {
                acc += w * mean.remaining_survival(a, t);
                prefix.push(acc);
            }
            return AgePrefix::Atomic { ages, prefix };
        }
        let density = self.density.as_ref().unwrap();
        let ratio = |a: f64| {
            let denom = mean.duration_survival(a);
            if denom == 0.0 {
                0.0
            } else {
                mean.survival_smooth(a + t) / denom
            }
        };
        let upper = match mean.survival_cutoff() {
            Some(c) => (c - t).min(self.abar),
            None => self.abar,
        };
        let n = density.len();
        let mut values = vec![0.0; n];
        if upper > 0.0 {
            // Running trapezoid over full cells below `upper`.
            let j_full = ((upper / self.h) + ALIGN_EPS).floor() as usize;
            let j_full = j_full.min(n - 1);
            let mut acc = 0.0;
            let mut prev = ratio(0.0) * density[0];
            for j in 1..n {
                if j <= j_full {
                    let cur = ratio(j as f64 * self.h) * density[j];
                    acc += 0.5 * self.h * (prev + cur);
                    prev = cur;
                }
                values[j] = acc;
            }
            // Partial final cell up to `upper`.
            let delta = upper - j_full as f64 * self.h;
            if delta > ALIGN_EPS * self.h && j_full + 1 < n {
                let theta = delta / self.h;
                let d_up = density[j_full] * (1.0 - theta) + density[j_full + 1] * theta;
                let tail = 0.5
                    * delta
                    * (ratio(j_full as f64 * self.h) * density[j_full] + ratio(upper) * d_up);
                for v in values.iter_mut().skip(j_full + 1) {
                    *v += tail;
                }
            }
        }
        AgePrefix::Gridded { values }
    }
}

/// Evaluated prefix of the initial-age survival integral.
enum AgePrefix {
    Atomic { ages: Vec<f64>, prefix: Vec<f64> },
    Gridded { values: Vec<f64> },
}

impl AgePrefix {
    /// Value at u = j·h. The interval is closed: an atom sitting exactly at u
    /// (and in particular at zero) is included.
    fn at_grid(&self, j: usize, h: f64) -> f64 {
        let u = j as f64 * h;
        match self {
            AgePrefix::Atomic { ages, prefix } => {
                let idx = ages.partition_point(|&a| a <= u + ALIGN_EPS * h.max(1.0));
                prefix[idx]
            }
            AgePrefix::Gridded { values } => {
                if j >= values.len() {
                    *values.last().unwrap()
                } else {
                    values[j]
                }
            }
        }
    }

    fn full(&self) -> f64 {
        match self {
            AgePrefix::Atomic { prefix, .. } => *prefix.last().unwrap(),
            AgePrefix::Gridded { values } => *values.last().unwrap(),
        }
    }
}

fn check_grid(horizon: f64, h: f64) -> Result<usize> {
    if h <= 0.0 || horizon <= 0.0 {
        return Err(Error::InvalidConfig("horizon and step must be > 0".into()));
    }
    let steps = (horizon / h).round() as usize;
    if steps == 0 || (steps as f64 * h - horizon).abs() > 1e-6 * h {
        return Err(Error::InvalidConfig(format!(
            "horizon {horizon} is not a multiple of step {h}"
        )));
    }
    Ok(steps)
}

fn contraction_gate(dk: &DiscreteKernel, mean: &MeanInfectivity, h: f64) -> Result<()> {
    let rho = dk.c_beta() * mean.lambda_star() * dk.big_c_b() * h / dk.c_b();
    if rho >= 0.5 {
        return Err(Error::ContractionFailure(format!(
            "C_beta·lambda*·C_B·h/c_B = {rho:.3} ≥ 0.5; shrink the step"
        )));
    }
    Ok(())
}

fn age_steps_for(steps: usize, h: f64, abar: f64) -> usize {
    steps + ((abar / h) + ALIGN_EPS).ceil() as usize
}

struct PicardWorkspace {
    next: Vec<f64>,
    s_cur: Vec<f64>,
    f_cur: Vec<f64>,
    interaction: Vec<f64>,
}

impl PicardWorkspace {
    fn new(k: usize) -> Self {
        Self {
            next: vec![0.0; k],
            s_cur: vec![0.0; k],
            f_cur: vec![0.0; k],
            interaction: vec![0.0; k],
        }
    }
}

/// Solve the coupled (susceptible, force) Volterra system up to `horizon`,
/// filling susceptible / force / incidence / cumulative_incidence.
pub fn solve_sf(
    dk: &DiscreteKernel,
    mean: &MeanInfectivity,
    init: &InitialState,
    horizon: f64,
    h: f64,
) -> Result<LimitFields> {
    let k = dk.k();
    if init.k() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: init.k(),
        });
    }
    let steps = check_grid(horizon, h)?;
    contraction_gate(dk, mean, h)?;
    let age_term = InitialAgeTerm::new(&init.ages, h)?;

    let n = (steps + 1) * k;
    let mut fields = LimitFields {
        h,
        k,
        steps,
        age_steps: age_steps_for(steps, h, age_term.abar),
        susceptible: vec![0.0; n],
        force: vec![0.0; n],
        incidence: vec![0.0; n],
        infected: vec![0.0; n],
        recovered: vec![0.0; n],
        cumulative_incidence: vec![0.0; n],
        age_sections: None,
    };

    // Background force from the initially infected (space enters only through
    // the per-cell mass).
    let f0_norm: Vec<f64> = (0..=steps)
        .map(|m| age_term.force_at(m as f64 * h, mean))
        .collect();

    let b = dk.b_vec();
    let mut ws = PicardWorkspace::new(k);
    let mut conv_w: Vec<f64> = Vec::new();
    let mut past_force = vec![0.0; k];
    let mut u_prev = vec![0.0; k];
    let mut s_prev = vec![0.0; k];

    // m = 0: nothing implicit, integrals over [0,0] vanish.
    for kk in 0..k {
        fields.susceptible[kk] = init.susceptible[kk];
        fields.force[kk] = init.infected[kk] * f0_norm[0];
    }
    dk.interaction_into(&fields.force[0..k], &mut ws.interaction);
    for kk in 0..k {
        fields.incidence[kk] = if b[kk] > 0.0 {
            fields.susceptible[kk] / b[kk] * ws.interaction[kk]
        } else {
            0.0
        };
    }

    let c_t_bound = {
        let ls = mean.lambda_star();
        ls * dk.big_c_b() * (dk.c_beta() * ls * dk.big_c_b() * horizon / dk.c_b()).exp()
    };

    for m in 1..=steps {
        let t = m as f64 * h;
        quad::conv_weights_into(m, h, mean.mean_cutoff(), |v| mean.mean_smooth(v), &mut conv_w);
        past_force.iter_mut().for_each(|v| *v = 0.0);
        for (i, &c) in conv_w.iter().enumerate().take(m) {
            if c == 0.0 {
                continue;
            }
            let row = &fields.incidence[i * k..(i + 1) * k];
            for kk in 0..k {
                past_force[kk] += c * row[kk];
            }
        }
        let c_cur = conv_w[m];

        s_prev.copy_from_slice(&fields.susceptible[(m - 1) * k..m * k]);
        u_prev.copy_from_slice(&fields.incidence[(m - 1) * k..m * k]);

        // Fixed point for the implicit current node.
        ws.next.copy_from_slice(&u_prev);
        let mut converged = false;
        for _ in 0..PICARD_MAX_ITERS {
            for kk in 0..k {
                ws.s_cur[kk] = s_prev[kk] - 0.5 * h * (u_prev[kk] + ws.next[kk]);
                ws.f_cur[kk] =
                    init.infected[kk] * f0_norm[m] + past_force[kk] + c_cur * ws.next[kk];
            }
            dk.interaction_into(&ws.f_cur, &mut ws.interaction);
            let mut delta = 0.0f64;
            for kk in 0..k {
                let v = if b[kk] > 0.0 {
                    (ws.s_cur[kk].max(0.0) / b[kk]) * ws.interaction[kk]
                } else {
                    0.0
                };
                delta = delta.max((v - ws.next[kk]).abs());
                ws.next[kk] = v;
            }
            if delta <= PICARD_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::ContractionFailure(format!(
                "per-step fixed point stalled at t = {t}"
            )));
        }

        for kk in 0..k {
            let idx = m * k + kk;
            fields.incidence[idx] = ws.next[kk];
            fields.cumulative_incidence[idx] = fields.cumulative_incidence[idx - k]
                + 0.5 * h * (u_prev[kk] + ws.next[kk]);
            let s = init.susceptible[kk] - fields.cumulative_incidence[idx];
            if s < -1e-9 {
                return Err(Error::NegativeField {
                    field: "susceptible",
                    value: s,
                    t,
                });
            }
            fields.susceptible[idx] = s.max(0.0);
            let f = init.infected[kk] * f0_norm[m] + past_force[kk] + c_cur * ws.next[kk];
            if f < -1e-9 {
                return Err(Error::NegativeField {
                    field: "force",
                    value: f,
                    t,
                });
            }
            debug_assert!(f <= c_t_bound * (1.0 + 1e-6) + 1e-9);
            fields.force[idx] = f.max(0.0);
        }
    }
    Ok(fields)
}

/// Lag-space survival convolution at one time node:
/// q[ℓ] ≈ ∫_0^{ℓh} F^c(u)·incidence(t − u) du for ℓ = 0..=max_lag, plus the
/// completed value over [0, min(t, cutoff)].
fn survival_conv_at(
    fields: &LimitFields,
    mean: &MeanInfectivity,
    m: usize,
    max_lag: usize,
    q: &mut Vec<f64>,
    q_full: &mut [f64],
) {
    let k = fields.k;
    let h = fields.h;
    let lag_cap = max_lag.min(m);
    let cut = mean.survival_cutoff();
    let jc = match cut {
        None => lag_cap,
        Some(c) => (((c / h) + ALIGN_EPS).floor() as usize).min(lag_cap),
    };
    q.clear();
    q.resize((lag_cap + 1) * k, 0.0);
    let fc = |u: f64| mean.survival_smooth(u);
    for l in 1..=lag_cap {
        let (lo, hi) = q.split_at_mut(l * k);
        let prev = &lo[(l - 1) * k..];
        let row_new = &fields.incidence[(m - l) * k..(m - l + 1) * k];
        let row_old = &fields.incidence[(m - l + 1) * k..(m - l + 2) * k];
        if l <= jc {
            let (c0, c1) = (fc((l - 1) as f64 * h), fc(l as f64 * h));
            for kk in 0..k {
                hi[kk] = prev[kk] + 0.5 * h * (c0 * row_old[kk] + c1 * row_new[kk]);
            }
        } else {
            hi[..k].copy_from_slice(&prev[..k]);
        }
    }
    q_full.copy_from_slice(&q[lag_cap * k..]);
    // Partial cell when the cutoff falls strictly inside the covered range.
    if let Some(c) = cut {
        if c > jc as f64 * h + ALIGN_EPS * h && jc < m {
            let delta = c - jc as f64 * h;
            let theta = delta / h;
            let r0 = &fields.incidence[(m - jc) * k..(m - jc + 1) * k];
            let r1 = &fields.incidence[(m - jc - 1) * k..(m - jc) * k];
            let (c0, c1) = (fc(jc as f64 * h), fc(c));
            for kk in 0..k {
                let interp = (1.0 - theta) * r0[kk] + theta * r1[kk];
                q_full[kk] += 0.5 * delta * (c0 * r0[kk] + c1 * interp);
            }
            // Grid values beyond the cutoff cell also see the tail.
            for l in (jc + 1)..=lag_cap {
                for kk in 0..k {
                    q[l * k + kk] = q_full[kk];
                }
            }
        }
    }
}

/// Fill infected and recovered (and optionally the age sections) from a
/// solved (susceptible, force, incidence) system.
pub fn derived_fields(
    fields: &mut LimitFields,
    mean: &MeanInfectivity,
    init: &InitialState,
    fill_sections: bool,
) -> Result<()> {
    let k = fields.k;
    let h = fields.h;
    let age_term = InitialAgeTerm::new(&init.ages, h)?;
    let j_total = fields.age_steps;

    if fill_sections {
        let len = (fields.steps + 1) * (j_total + 1) * k;
        if len > 200_000_000 {
            return Err(Error::InvalidConfig(format!(
                "age-section array of {len} entries is too large; use section slices"
            )));
        }
        fields.age_sections = Some(vec![0.0; len]);
    }

    let mut sections_buf: Option<Vec<f64>> = fields.age_sections.take();
    let mut q: Vec<f64> = Vec::new();
    let mut q_full = vec![0.0; k];
    for m in 0..=fields.steps {
        let t = m as f64 * h;
        let prefix = age_term.survival_prefix(t, mean);
        survival_conv_at(fields, mean, m, m, &mut q, &mut q_full);
        let init_full = prefix.full();
        for kk in 0..k {
            let idx = m * k + kk;
            fields.infected[idx] = init.infected[kk] * init_full + q_full[kk];
            fields.recovered[idx] = init.recovered[kk]
                + init.infected[kk] * (age_term.mass - init_full)
                + (fields.cumulative_incidence[idx] - q_full[kk]);
        }
        if let Some(sections) = sections_buf.as_mut() {
            let lag_cap = m;
            for j in 0..=j_total {
                let init_part = prefix.at_grid(j.saturating_sub(m), h);
                let q_row = &q[j.min(lag_cap) * k..j.min(lag_cap) * k + k];
                let base = (m * (j_total + 1) + j) * k;
                for kk in 0..k {
                    sections[base + kk] = init.infected[kk] * init_part + q_row[kk];
                }
            }
            // The top of the age grid exhausts the population: tie it exactly
            // to the infected total.
            let base = (m * (j_total + 1) + j_total) * k;
            for kk in 0..k {
                sections[base + kk] = fields.infected[m * k + kk];
            }
        }
    }
    fields.age_sections = sections_buf;
    Ok(())
}

/// One (age_steps+1)×K section slice at time node `m`, computed on demand.
pub fn age_section_slice(
    fields: &LimitFields,
    mean: &MeanInfectivity,
    init: &InitialState,
    m: usize,
) -> Result<Vec<f64>> {
    let k = fields.k;
    let h = fields.h;
    if m > fields.steps {
        return Err(Error::TimeOutOfRange {
            t: m as f64 * h,
            horizon: fields.steps as f64 * h,
        });
    }
    let age_term = InitialAgeTerm::new(&init.ages, h)?;
    let j_total = fields.age_steps;
    let prefix = age_term.survival_prefix(m as f64 * h, mean);
    let lag_cap = j_total.min(m);
    let mut q: Vec<f64> = Vec::new();
    let mut q_full = vec![0.0; k];
    survival_conv_at(fields, mean, m, lag_cap, &mut q, &mut q_full);
    let mut out = vec![0.0; (j_total + 1) * k];
    for j in 0..=j_total {
        let init_part = prefix.at_grid(j.saturating_sub(m), h);
        let q_row = &q[j.min(lag_cap) * k..j.min(lag_cap) * k + k];
        for kk in 0..k {
            out[j * k + kk] = init.infected[kk] * init_part + q_row[kk];
        }
    }
    Ok(out)
}

/// SIS variant: recovery returns individuals to the susceptible pool, so
/// susceptible = population − infected per cell; the marching scheme is
/// otherwise the same.
pub fn solve_sis(
    dk: &DiscreteKernel,
    mean: &MeanInfectivity,
    init: &InitialState,
    horizon: f64,
    h: f64,
) -> Result<LimitFields> {
    let k = dk.k();
    if init.k() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: init.k(),
        });
    }
    if init.recovered.iter().any(|&r| r != 0.0) {
        return Err(Error::InvalidConfig(
            "SIS requires zero initial recovered".into(),
        ));
    }
    let steps = check_grid(horizon, h)?;
    contraction_gate(dk, mean, h)?;
    let age_term = InitialAgeTerm::new(&init.ages, h)?;

    let n = (steps + 1) * k;
    let mut fields = LimitFields {
        h,
        k,
        steps,
        age_steps: age_steps_for(steps, h, age_term.abar),
        susceptible: vec![0.0; n],
        force: vec![0.0; n],
        incidence: vec![0.0; n],
        infected: vec![0.0; n],
        recovered: vec![0.0; n],
        cumulative_incidence: vec![0.0; n],
        age_sections: None,
    };

    let f0_norm: Vec<f64> = (0..=steps)
        .map(|m| age_term.force_at(m as f64 * h, mean))
        .collect();
    let b = dk.b_vec();
    let mut ws = PicardWorkspace::new(k);
    let mut conv_lam: Vec<f64> = Vec::new();
    let mut conv_fc: Vec<f64> = Vec::new();
    let mut past_force = vec![0.0; k];
    let mut past_inf = vec![0.0; k];
    let mut i_cur = vec![0.0; k];
    let mut u_prev = vec![0.0; k];

    // m = 0.
    let init_full0 = age_term.survival_prefix(0.0, mean).full();
    for kk in 0..k {
        fields.infected[kk] = init.infected[kk] * init_full0;
        fields.susceptible[kk] = b[kk] - fields.infected[kk];
        fields.force[kk] = init.infected[kk] * f0_norm[0];
    }
    dk.interaction_into(&fields.force[0..k], &mut ws.interaction);
    for kk in 0..k {
        fields.incidence[kk] = if b[kk] > 0.0 {
            fields.susceptible[kk] / b[kk] * ws.interaction[kk]
        } else {
            0.0
        };
    }

    for m in 1..=steps {
        let t = m as f64 * h;
        quad::conv_weights_into(m, h, mean.mean_cutoff(), |v| mean.mean_smooth(v), &mut conv_lam);
        quad::conv_weights_into(
            m,
            h,
            mean.survival_cutoff(),
            |v| mean.survival_smooth(v),
            &mut conv_fc,
        );
        past_force.iter_mut().for_each(|v| *v = 0.0);
        past_inf.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..m {
            let (cl, cf) = (conv_lam[i], conv_fc[i]);
            if cl == 0.0 && cf == 0.0 {
                continue;
            }
            let row = &fields.incidence[i * k..(i + 1) * k];
            for kk in 0..k {
                past_force[kk] += cl * row[kk];
                past_inf[kk] += cf * row[kk];
            }
        }
        let (cl_cur, cf_cur) = (conv_lam[m], conv_fc[m]);
        let init_full = age_term.survival_prefix(t, mean).full();

        u_prev.copy_from_slice(&fields.incidence[(m - 1) * k..m * k]);
        ws.next.copy_from_slice(&u_prev);
        let mut converged = false;
        for _ in 0..PICARD_MAX_ITERS {
            for kk in 0..k {
                i_cur[kk] = init.infected[kk] * init_full + past_inf[kk] + cf_cur * ws.next[kk];
                ws.s_cur[kk] = b[kk] - i_cur[kk];
                ws.f_cur[kk] =
                    init.infected[kk] * f0_norm[m] + past_force[kk] + cl_cur * ws.next[kk];
            }
            dk.interaction_into(&ws.f_cur, &mut ws.interaction);
            let mut delta = 0.0f64;
            for kk in 0..k {
                let v = if b[kk] > 0.0 {
                    (ws.s_cur[kk].max(0.0) / b[kk]) * ws.interaction[kk]
                } else {
                    0.0
                };
                delta = delta.max((v - ws.next[kk]).abs());
                ws.next[kk] = v;
            }
            if delta <= PICARD_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::ContractionFailure(format!(
                "per-step fixed point stalled at t = {t}"
            )));
        }

        for kk in 0..k {
            let idx = m * k + kk;
            fields.incidence[idx] = ws.next[kk];
            fields.cumulative_incidence[idx] =
                fields.cumulative_incidence[idx - k] + 0.5 * h * (u_prev[kk] + ws.next[kk]);
            let infected = init.infected[kk] * init_full + past_inf[kk] + cf_cur * ws.next[kk];
            let s = b[kk] - infected;
            if s < -1e-9 {
                return Err(Error::NegativeField {
                    field: "susceptible",
                    value: s,
                    t,
                });
            }
            fields.infected[idx] = infected;
            fields.susceptible[idx] = s.max(0.0);
            fields.force[idx] =
                init.infected[kk] * f0_norm[m] + past_force[kk] + cl_cur * ws.next[kk];
        }

        // Closed population: (1/K) Σ (S̄ + Ī) must stay at 1.
        let total: f64 = (0..k)
            .map(|kk| fields.susceptible[m * k + kk] + fields.infected[m * k + kk])
            .sum::<f64>()
            / k as f64;
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::ConstraintViolation {
                what: format!("SIS mass at t = {t}"),
                deviation: total - 1.0,
            });
        }
    }
    Ok(fields)
}

#[derive(Debug, Clone)]
pub struct SisEquilibrium {
    pub infected: Vec<f64>,
    pub susceptible: Vec<f64>,
    pub r0: f64,
}

/// Endemic equilibrium of the SIS model: the nonnegative solution of
/// I* = R0 · S* · ∫β I*, with S* = B̄ − I* per cell. Damped fixed-point
/// iteration from I* = 0.01·B̄; collapses to the trivial equilibrium when
/// subcritical.
pub fn sis_equilibrium(dk: &DiscreteKernel, mean: &MeanInfectivity) -> Result<SisEquilibrium> {
    let k = dk.k();
    let r0 = mean.reproduction_number();
    let b = dk.b_vec();
    let mut infected: Vec<f64> = b.iter().map(|&x| 0.01 * x).collect();
    let mut interaction = vec![0.0; k];
    let mut omega = 0.5;
    let mut prev_residual = f64::INFINITY;
    let max_iters = 200_000;
    for _ in 0..max_iters {
        dk.interaction_into(&infected, &mut interaction);
        let mut residual = 0.0f64;
        let mut sup = 0.0f64;
        let mut next = vec![0.0; k];
        for kk in 0..k {
            let target = r0 * (b[kk] - infected[kk]) * interaction[kk];
            residual = residual.max((target - infected[kk]).abs());
            next[kk] = ((1.0 - omega) * infected[kk] + omega * target).clamp(0.0, b[kk]);
            sup = sup.max(next[kk]);
        }
        infected = next;
        if residual <= 1e-13 * (1.0 + sup) {
            if sup < 1e-9 {
                infected.iter_mut().for_each(|v| *v = 0.0);
            }
            let susceptible: Vec<f64> = b.iter().zip(&infected).map(|(x, i)| x - i).collect();
            return Ok(SisEquilibrium {
                infected,
                susceptible,
                r0,
            });
        }
        if residual > prev_residual {
            omega = (omega * 0.5).max(1e-3);
        }
        prev_residual = residual;
    }
    Err(Error::NonConvergence {
        iterations: max_iters,
    })
}
