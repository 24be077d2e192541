//! Empirical convergence harness: replicated simulations across a ladder of
//! population sizes, compared against one high-accuracy deterministic limit
//! in the space-averaged L¹ metric, uniformly over an evaluation grid in time
//! (and age, for the cumulative-in-age sections).

use crate::error::{Error, Result};
use crate::infectivity::MeanInfectivity;
use crate::limit_solver::{self, LimitFields};
use crate::scenario::{ModelKind, Scenario};
use crate::simulator::{self, SimOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::time::Instant;

/// (1/K) Σ |a_k − b_k|, the discrete L¹([0,1]) distance of two cell fields.
pub fn l1_space_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / a.len() as f64)
}

/// Average a fine cell field onto a coarser partition by interval overlap.
pub fn restrict_cells(fine: &[f64], k_coarse: usize) -> Vec<f64> {
    let k_fine = fine.len();
    let mut out = vec![0.0; k_coarse];
    for (j, slot) in out.iter_mut().enumerate() {
        let lo = j as f64 / k_coarse as f64;
        let hi = (j + 1) as f64 / k_coarse as f64;
        let mut acc = 0.0;
        let i_lo = (lo * k_fine as f64).floor() as usize;
        let i_hi = ((hi * k_fine as f64).ceil() as usize).min(k_fine);
        for (i, &v) in fine.iter().enumerate().take(i_hi).skip(i_lo) {
            let cell_lo = i as f64 / k_fine as f64;
            let cell_hi = (i + 1) as f64 / k_fine as f64;
            let overlap = (hi.min(cell_hi) - lo.max(cell_lo)).max(0.0);
            acc += v * overlap;
        }
        *slot = acc * k_coarse as f64;
    }
    out
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LadderRung {
    pub n: usize,
    pub k: usize,
    pub reps: usize,
}

/// Mean and max over replications of a per-replication sup error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldStats {
    pub mean: f64,
    pub max: f64,
}

impl FieldStats {
    fn from_values(values: &[f64]) -> Self {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let max = values.iter().cloned().fold(0.0, f64::max);
        Self { mean, max }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RungReport {
    pub n: usize,
    pub k: usize,
    pub reps: usize,
    /// sup_t L¹ errors per field.
    pub susceptible: FieldStats,
    pub force: FieldStats,
    pub infected: FieldStats,
    pub recovered: FieldStats,
    /// sup over (t, age) of the L¹ section error.
    pub sections: FieldStats,
    pub seeds: Vec<u64>,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub master_seed: u64,
    pub eval_times: Vec<f64>,
    pub eval_ages: Vec<f64>,
    pub rungs: Vec<RungReport>,
}

#[derive(Debug, Clone, Copy)]
pub struct StudyOptions {
    pub master_seed: u64,
    /// Evaluation-grid spacing; must be a multiple of the scenario step.
    pub eval_dt: f64,
    pub sim: SimOptions,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            master_seed: 0,
            eval_dt: 0.1,
            sim: SimOptions::default(),
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Stable per-replication seed derivation from the master seed.
pub fn derive_seed(master: u64, rung: u64, rep: u64) -> u64 {
    splitmix64(master ^ splitmix64(rung.wrapping_mul(0x521F_39AA).wrapping_add(rep)))
}

/// Precomputed limit restricted to one rung's partition.
struct RestrictedLimit {
    susceptible: Vec<Vec<f64>>,
    force: Vec<Vec<f64>>,
    infected: Vec<Vec<f64>>,
    recovered: Vec<Vec<f64>>,
    /// [eval_t][eval_age] -> K-vector.
    sections: Vec<Vec<Vec<f64>>>,
}

/// Per-replication sup errors.
struct RepErrors {
    susceptible: f64,
    force: f64,
    infected: f64,
    recovered: f64,
    sections: f64,
}

/// Run the ladder: one limit solve on the finest partition, cell-averaged
/// down to each rung, then replicated simulations compared on the shared
/// evaluation grid.
pub fn convergence_study(
    scenario: &Scenario,
    ladder: &[LadderRung],
    opts: &StudyOptions,
) -> Result<ConvergenceReport> {
    if ladder.len() < 3 {
        return Err(Error::InvalidConfig(format!(
            "ladder needs at least 3 rungs, got {}",
            ladder.len()
        )));
    }
    for rung in ladder {
        if rung.n < 10 * rung.k {
            return Err(Error::InvalidConfig(format!(
                "ladder rung (n={}, k={}) violates n ≥ 10k",
                rung.n, rung.k
            )));
        }
        if rung.reps == 0 {
            return Err(Error::InvalidConfig("ladder rung with zero reps".into()));
        }
    }
    scenario.validate()?;
    let h = scenario.step;
    let stride = (opts.eval_dt / h).round() as usize;
    if stride == 0 || (stride as f64 * h - opts.eval_dt).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "eval.dt {} must be a positive multiple of model.step {h}",
            opts.eval_dt
        )));
    }

    let mut ladder: Vec<LadderRung> = ladder.to_vec();
    ladder.sort_by_key(|r| r.n);

    let k_fine = ladder.iter().map(|r| r.k).max().unwrap();
    let mean = scenario.mean_summaries()?;
    let dk_fine = scenario.discrete_kernel(k_fine)?;
    let init_fine = scenario.initial_state(&dk_fine);
    let mut limit = match scenario.model {
        ModelKind::Sir => {
            let mut f =
                limit_solver::solve_sf(&dk_fine, &mean, &init_fine, scenario.horizon, h)?;
            limit_solver::derived_fields(&mut f, &mean, &init_fine, false)?;
            f
        }
        ModelKind::Sis => limit_solver::solve_sis(&dk_fine, &mean, &init_fine, scenario.horizon, h)?,
    };
    limit.age_sections = None;

    // Evaluation grids.
    let eval_time_idx: Vec<usize> = (0..=limit.steps / stride).map(|i| i * stride).collect();
    let eval_times: Vec<f64> = eval_time_idx.iter().map(|&m| m as f64 * h).collect();
    let eval_age_idx: Vec<usize> = (0..=limit.age_steps / stride).map(|i| i * stride).collect();
    let eval_ages: Vec<f64> = eval_age_idx.iter().map(|&j| j as f64 * h).collect();

    // Limit slices on the evaluation grid (fine partition).
    let fine_rows = |field: &[f64]| -> Vec<Vec<f64>> {
        eval_time_idx
            .iter()
            .map(|&m| field[m * k_fine..(m + 1) * k_fine].to_vec())
            .collect()
    };
    let fine_s = fine_rows(&limit.susceptible);
    let fine_f = fine_rows(&limit.force);
    let fine_i = fine_rows(&limit.infected);
    let fine_r = fine_rows(&limit.recovered);
    let mut fine_sections: Vec<Vec<Vec<f64>>> = Vec::with_capacity(eval_time_idx.len());
    for &m in &eval_time_idx {
        let slice = limit_solver::age_section_slice(&limit, &mean, &init_fine, m)?;
        let rows: Vec<Vec<f64>> = eval_age_idx
            .iter()
            .map(|&j| slice[j * k_fine..(j + 1) * k_fine].to_vec())
            .collect();
        fine_sections.push(rows);
    }

    let mut rungs = Vec::with_capacity(ladder.len());
    for (rung_idx, rung) in ladder.iter().enumerate() {
        let started = Instant::now();
        let dk = scenario.discrete_kernel(rung.k)?;
        let restricted = RestrictedLimit {
            susceptible: fine_s.iter().map(|row| restrict_cells(row, rung.k)).collect(),
            force: fine_f.iter().map(|row| restrict_cells(row, rung.k)).collect(),
            infected: fine_i.iter().map(|row| restrict_cells(row, rung.k)).collect(),
            recovered: fine_r.iter().map(|row| restrict_cells(row, rung.k)).collect(),
            sections: fine_sections
                .iter()
                .map(|rows| rows.iter().map(|row| restrict_cells(row, rung.k)).collect())
                .collect(),
        };
        let seeds: Vec<u64> = (0..rung.reps)
            .map(|rep| derive_seed(opts.master_seed, rung_idx as u64, rep as u64))
            .collect();

        let rep_errors: Result<Vec<RepErrors>> = seeds
            .par_iter()
            .map(|&seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let state = simulator::init(scenario, &dk, rung.n, &mut rng)?;
                let traj = simulator::run(state, scenario.horizon, opts.sim, &mut rng)?;
                let mut errs = RepErrors {
                    susceptible: 0.0,
                    force: 0.0,
                    infected: 0.0,
                    recovered: 0.0,
                    sections: 0.0,
                };
                for (ti, &t) in eval_times.iter().enumerate() {
                    let obs = simulator::observe(&traj, t, &eval_ages)?;
                    errs.susceptible = errs.susceptible.max(l1_space_distance(
                        &obs.susceptible,
                        &restricted.susceptible[ti],
                    )?);
                    errs.force = errs
                        .force
                        .max(l1_space_distance(&obs.force, &restricted.force[ti])?);
                    errs.infected = errs
                        .infected
                        .max(l1_space_distance(&obs.infected, &restricted.infected[ti])?);
                    errs.recovered = errs
                        .recovered
                        .max(l1_space_distance(&obs.recovered, &restricted.recovered[ti])?);
                    for (ai, limit_row) in restricted.sections[ti].iter().enumerate() {
                        let sim_row = &obs.sections[ai * rung.k..(ai + 1) * rung.k];
                        errs.sections = errs
                            .sections
                            .max(l1_space_distance(sim_row, limit_row)?);
                    }
                }
                Ok(errs)
            })
            .collect();
        let rep_errors = rep_errors?;

        let pick = |f: fn(&RepErrors) -> f64| -> Vec<f64> { rep_errors.iter().map(f).collect() };
        rungs.push(RungReport {
            n: rung.n,
            k: rung.k,
            reps: rung.reps,
            susceptible: FieldStats::from_values(&pick(|e| e.susceptible)),
            force: FieldStats::from_values(&pick(|e| e.force)),
            infected: FieldStats::from_values(&pick(|e| e.infected)),
            recovered: FieldStats::from_values(&pick(|e| e.recovered)),
            sections: FieldStats::from_values(&pick(|e| e.sections)),
            seeds,
            wall_secs: started.elapsed().as_secs_f64(),
        });
    }

    Ok(ConvergenceReport {
        master_seed: opts.master_seed,
        eval_times,
        eval_ages,
        rungs,
    })
}

/// Helper for cross-solver comparisons: max |a − b| over two equally shaped
/// arrays.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

impl Scenario {
    /// Deterministic law summaries; piecewise-random laws get a Monte Carlo
    /// estimate on the solver grid.
    pub fn mean_summaries(&self) -> Result<MeanInfectivity> {
        use crate::infectivity::{mean_infectivity, LawKind, McOptions};
        match self.law.kind() {
            LawKind::PiecewiseRandom { .. } => {
                let span = self.horizon + self.ages.upper_bound();
                let step = self.step.max(span / 2000.0);
                let nodes = (span / step).ceil() as usize;
                let grid: Vec<f64> = (0..=nodes).map(|i| i as f64 * step).collect();
                mean_infectivity(&self.law, Some(&McOptions::new(grid)))
            }
            _ => mean_infectivity(&self.law, None),
        }
    }
}

/// The limit fields interface used by the comparison helpers.
pub fn limit_for(scenario: &Scenario, k: usize) -> Result<(LimitFields, MeanInfectivity)> {
    let mean = scenario.mean_summaries()?;
    let dk = scenario.discrete_kernel(k)?;
    let init = scenario.initial_state(&dk);
    let fields = match scenario.model {
        ModelKind::Sir => {
            let mut f = limit_solver::solve_sf(&dk, &mean, &init, scenario.horizon, scenario.step)?;
            limit_solver::derived_fields(&mut f, &mean, &init, false)?;
            f
        }
        ModelKind::Sis => {
            limit_solver::solve_sis(&dk, &mean, &init, scenario.horizon, scenario.step)?
        }
    };
    Ok((fields, mean))
}
