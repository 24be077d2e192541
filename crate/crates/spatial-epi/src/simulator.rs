//! Exact event-driven simulation of the finite-population spatial model.
//!
//! Infections arrive by thinning: a dominating Poisson candidate stream at
//! the static per-location envelope rate (valid because the force of
//! infection at a location can never exceed λ*·population), location chosen
//! proportionally to the envelope, acceptance with the exact ratio of the
//! current rate to the envelope. Recoveries and infectivity-level changes are
//! processed from one time-ordered queue.
//!
//! When every path of the law is a step function the per-location force and
//! its kernel interaction are maintained incrementally at jump events, so a
//! candidate costs O(log K). Otherwise the force is re-summed over the active
//! infected at every candidate, which is exact for arbitrary path shapes but
//! costs O(active) per candidate.

use crate::error::{Error, Result};
use crate::infectivity::{InfectivityLaw, InfectivityPath};
use crate::kernel::DiscreteKernel;
use crate::scenario::{largest_remainder, ModelKind, Scenario};
use rand::Rng;
use serde::Serialize;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Rejection cap when conditioning an initial path on exceeding its age.
pub const CONDITIONING_ATTEMPTS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimMode {
    /// Thinning with rates evaluated exactly at candidate times.
    Exact,
    /// Rates frozen at the start of each window of the given width
    /// (cross-validation mode; biased by construction).
    Discretized { delta: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub mode: SimMode,
    /// Force the per-candidate re-summation path even when incremental
    /// bookkeeping applies (used to cross-check the two strategies).
    pub force_resummation: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            mode: SimMode::Exact,
            force_resummation: false,
        }
    }
}

/// An initially infected individual: age at time zero, remaining infected
/// time, and the conditioned path.
#[derive(Debug, Clone)]
pub struct InitialRecord {
    pub location: u32,
    pub age_at_start: f64,
    /// Time from zero until recovery (= path duration − age, positive by
    /// conditioning).
    pub remaining: f64,
    pub path: InfectivityPath,
}

/// An infection that happened during the run.
#[derive(Debug, Clone)]
pub struct InfectionRecord {
    pub location: u32,
    pub time: f64,
    pub duration: f64,
    pub path: InfectivityPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Infection,
    Recovery,
}

/// One log entry. Initial infections are logged with their (negative)
/// infection times, so the log alone reconstructs every observable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EventRecord {
    pub time: f64,
    pub kind: EventKind,
    pub location: u32,
    pub id: u64,
    /// Infected period of the individual (from its own infection time).
    pub duration: f64,
}

/// Microscopic state at time `t`.
#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    pub model: ModelKind,
    pub n: usize,
    /// N/K, the scaling unit.
    pub scale: f64,
    dk: DiscreteKernel,
    law: InfectivityLaw,
    pub susceptible: Vec<u32>,
    pub infected: Vec<u32>,
    pub recovered: Vec<u32>,
    pub population: Vec<u32>,
    /// Cumulative infections per location since time zero.
    pub cumulative: Vec<u32>,
    initial_susceptible: Vec<u32>,
    initial_recovered: Vec<u32>,
    initial_infected: Vec<InitialRecord>,
    infections: Vec<InfectionRecord>,
    events: Vec<EventRecord>,
    next_id: u64,
}

/// Draw per-location integer counts from the scenario profiles: populations
/// by largest remainder against the density, then a per-location
/// susceptible/infected/recovered split, so location totals are exact.
pub fn init(
    scenario: &Scenario,
    dk: &DiscreteKernel,
    n: usize,
    rng: &mut impl Rng,
) -> Result<SimState> {
    let k = dk.k();
    if n < k {
        return Err(Error::InvalidConfig(format!(
            "model.n (= {n}) must be at least the number of locations (= {k})"
        )));
    }
    scenario.validate()?;
    let scale = n as f64 / k as f64;
    let pop_targets: Vec<f64> = dk.b_vec().iter().map(|&b| scale * b).collect();
    let population: Vec<u32> = largest_remainder(&pop_targets, n)
        .into_iter()
        .map(|c| c as u32)
        .collect();

    let centers = dk.cell_centers();
    let mut susceptible = vec![0u32; k];
    let mut infected = vec![0u32; k];
    let mut recovered = vec![0u32; k];
    for kk in 0..k {
        let pi = scenario.infected_fraction.value(centers[kk]);
        let pr = scenario.recovered_fraction.value(centers[kk]);
        let b = population[kk] as usize;
        let split = largest_remainder(&[1.0 - pi - pr, pi, pr], b);
        susceptible[kk] = split[0] as u32;
        infected[kk] = split[1] as u32;
        recovered[kk] = split[2] as u32;
    }

    let mut initial_infected = Vec::new();
    let mut events = Vec::new();
    let mut next_id = 0u64;
    for kk in 0..k {
        for _ in 0..infected[kk] {
            let age = scenario.ages.sample(rng);
            let path = scenario
                .law
                .sample_path_conditional(age, CONDITIONING_ATTEMPTS, rng)?;
            let remaining = path.duration() - age;
            events.push(EventRecord {
                time: -age,
                kind: EventKind::Infection,
                location: kk as u32,
                id: next_id,
                duration: path.duration(),
            });
            initial_infected.push(InitialRecord {
                location: kk as u32,
                age_at_start: age,
                remaining,
                path,
            });
            next_id += 1;
        }
    }
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.id.cmp(&b.id)));

    Ok(SimState {
        t: 0.0,
        model: scenario.model,
        n,
        scale,
        dk: dk.clone(),
        law: scenario.law.clone(),
        initial_susceptible: susceptible.clone(),
        initial_recovered: recovered.clone(),
        susceptible,
        infected,
        recovered,
        population,
        cumulative: vec![0; k],
        initial_infected,
        infections: Vec::new(),
        events,
        next_id,
    })
}

impl SimState {
    pub fn k(&self) -> usize {
        self.dk.k()
    }

    /// Exact per-location force of infection at the current time: the sum of
    /// the active individuals' infectivities. No caching.
    pub fn force_of_infection(&self) -> Vec<f64> {
        let mut f = vec![0.0; self.k()];
        let t = self.t;
        for rec in &self.initial_infected {
            if rec.remaining > t {
                f[rec.location as usize] += rec.path.value(rec.age_at_start + t);
            }
        }
        for rec in &self.infections {
            if rec.time <= t && rec.time + rec.duration > t {
                f[rec.location as usize] += rec.path.value(t - rec.time);
            }
        }
        f
    }

    /// Per-location infection rate: susceptible share times the kernel
    /// interaction of the force.
    pub fn infection_rate(&self) -> Result<Vec<f64>> {
        let f = self.force_of_infection();
        let inter = self.dk.interaction_integral(&f)?;
        Ok((0..self.k())
            .map(|kk| {
                if self.population[kk] == 0 {
                    0.0
                } else {
                    self.susceptible[kk] as f64 / self.population[kk] as f64 * inter[kk]
                }
            })
            .collect())
    }

    fn conservation_holds(&self) -> bool {
        (0..self.k()).all(|kk| {
            self.susceptible[kk] + self.infected[kk] + self.recovered[kk] == self.population[kk]
        })
    }
}

/// Acceptance bookkeeping of one replication.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Telemetry {
    pub candidates: u64,
    pub accepted: u64,
    /// Total envelope rate (candidate intensity).
    pub envelope_rate: f64,
}

/// Completed replication: everything needed to reconstruct any observable at
/// any time within the horizon.
#[derive(Debug, Clone)]
pub struct SimTrajectory {
    pub horizon: f64,
    pub model: ModelKind,
    pub n: usize,
    pub scale: f64,
    pub k: usize,
    pub initial_susceptible: Vec<u32>,
    pub initial_recovered: Vec<u32>,
    pub population: Vec<u32>,
    pub initial_infected: Vec<InitialRecord>,
    pub infections: Vec<InfectionRecord>,
    pub events: Vec<EventRecord>,
    pub telemetry: Telemetry,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum QueueKind {
    Recovery { location: u32, id: u64, duration: f64 },
    ForceJump { location: u32, delta: f64 },
}

#[derive(Debug, Clone, Copy)]
struct QueueEvent {
    time: f64,
    seq: u64,
    kind: QueueKind,
}

impl PartialEq for QueueEvent {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for QueueEvent {}
impl PartialOrd for QueueEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueueEvent {
    // Min-heap via reversal: earliest time first, then insertion order.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.seq.cmp(&self.seq))
    }
}

struct ForceTracker {
    /// Incremental per-location force (step-function paths only).
    force: Vec<f64>,
    /// Kernel interaction of `force`, updated by kernel columns.
    interaction: Vec<f64>,
    incremental: bool,
}

impl ForceTracker {
    fn bump(&mut self, dk: &DiscreteKernel, location: usize, delta: f64) {
        if !self.incremental {
            return;
        }
        self.force[location] += delta;
        let k = dk.k();
        let inv_k = 1.0 / k as f64;
        for row in 0..k {
            self.interaction[row] += inv_k * dk.beta(row, location) * delta;
        }
    }
}

/// Run the thinning loop up to `horizon`, consuming the state.
pub fn run(
    mut state: SimState,
    horizon: f64,
    opts: SimOptions,
    rng: &mut impl Rng,
) -> Result<SimTrajectory> {
    if horizon <= 0.0 {
        return Err(Error::InvalidConfig("run horizon must be > 0".into()));
    }
    let k = state.k();
    let dk = state.dk.clone();
    let law = state.law.clone();
    let lambda_star = law.lambda_star();

    // Static envelope: rate_k = (1/K) Σ_k' β(k,k')·λ*·B_k', an upper bound for
    // the exact rate since force ≤ λ*·B and the susceptible share is ≤ 1.
    let pop_f: Vec<f64> = state.population.iter().map(|&b| b as f64 * lambda_star).collect();
    let envelope = dk.interaction_integral(&pop_f)?;
    let mut cum_envelope = Vec::with_capacity(k);
    let mut total_envelope = 0.0;
    for &e in &envelope {
        total_envelope += e;
        cum_envelope.push(total_envelope);
    }

    let incremental = law.piecewise_constant_paths() && !opts.force_resummation;
    let mut tracker = ForceTracker {
        force: vec![0.0; k],
        interaction: vec![0.0; k],
        incremental,
    };

    let mut queue: BinaryHeap<QueueEvent> = BinaryHeap::new();
    let mut seq = 0u64;
    let push = |queue: &mut BinaryHeap<QueueEvent>, seq: &mut u64, time: f64, kind: QueueKind| {
        queue.push(QueueEvent {
            time,
            seq: *seq,
            kind,
        });
        *seq += 1;
    };

    // Seed the queue with the initially infected individuals' recoveries and
    // future level changes; seed the tracker with their current levels.
    for (idx, rec) in state.initial_infected.iter().enumerate() {
        push(
            &mut queue,
            &mut seq,
            rec.remaining,
            QueueKind::Recovery {
                location: rec.location,
                id: idx as u64,
                duration: rec.path.duration(),
            },
        );
        if incremental {
            tracker.force[rec.location as usize] += rec.path.value(rec.age_at_start);
            if let Some(jumps) = rec.path.level_jumps() {
                for (age, delta) in jumps {
                    if age > rec.age_at_start {
                        push(
                            &mut queue,
                            &mut seq,
                            age - rec.age_at_start,
                            QueueKind::ForceJump {
                                location: rec.location,
                                delta,
                            },
                        );
                    }
                }
            }
        }
    }
    if incremental {
        dk.interaction_into(&tracker.force, &mut tracker.interaction);
    }

    let mut telemetry = Telemetry {
        envelope_rate: total_envelope,
        ..Default::default()
    };

    // Frozen rates for the discretized mode.
    let mut frozen: Option<Vec<f64>> = None;
    let mut next_window = 0.0f64;
    let window = match opts.mode {
        SimMode::Exact => f64::INFINITY,
        SimMode::Discretized { delta } => {
            if delta <= 0.0 {
                return Err(Error::InvalidConfig("discretization window must be > 0".into()));
            }
            delta
        }
    };

    let exact_rate = |state: &SimState, tracker: &ForceTracker, t: f64, kk: usize| -> f64 {
        if state.population[kk] == 0 {
            return 0.0;
        }
        let share = state.susceptible[kk] as f64 / state.population[kk] as f64;
        if tracker.incremental {
            share * tracker.interaction[kk]
        } else {
            let mut f = vec![0.0; state.k()];
            for rec in &state.initial_infected {
                if rec.remaining > t {
                    f[rec.location as usize] += rec.path.value(rec.age_at_start + t);
                }
            }
            for rec in &state.infections {
                if rec.time <= t && rec.time + rec.duration > t {
                    f[rec.location as usize] += rec.path.value(t - rec.time);
                }
            }
            let kf = state.k() as f64;
            let mut acc = 0.0;
            for (col, fv) in f.iter().enumerate() {
                acc += dk.beta(kk, col) * fv;
            }
            share * acc / kf
        }
    };

    let mut next_candidate = if total_envelope > 0.0 {
        -(1.0 - rng.random::<f64>()).ln() / total_envelope
    } else {
        f64::INFINITY
    };

    loop {
        let event_time = queue.peek().map_or(f64::INFINITY, |e| e.time);
        let boundary_time = if frozen.is_some() || matches!(opts.mode, SimMode::Discretized { .. })
        {
            next_window
        } else {
            f64::INFINITY
        };

        if event_time <= next_candidate && event_time <= boundary_time {
            if event_time > horizon {
                break;
            }
            let ev = queue.pop().unwrap();
            state.t = ev.time;
            match ev.kind {
                QueueKind::Recovery {
                    location,
                    id,
                    duration,
                } => {
                    let kk = location as usize;
                    state.infected[kk] -= 1;
                    match state.model {
                        ModelKind::Sir => state.recovered[kk] += 1,
                        ModelKind::Sis => state.susceptible[kk] += 1,
                    }
                    state.events.push(EventRecord {
                        time: ev.time,
                        kind: EventKind::Recovery,
                        location,
                        id,
                        duration,
                    });
                    debug_assert!(state.conservation_holds());
                }
                QueueKind::ForceJump { location, delta } => {
                    tracker.bump(&dk, location as usize, delta);
                }
            }
            continue;
        }

        if boundary_time <= next_candidate {
            if boundary_time > horizon {
                break;
            }
            // Refresh the frozen rates at the window boundary.
            state.t = boundary_time;
            let rates: Vec<f64> = (0..k)
                .map(|kk| exact_rate(&state, &tracker, boundary_time, kk))
                .collect();
            frozen = Some(rates);
            next_window = boundary_time + window;
            continue;
        }

        if next_candidate > horizon {
            break;
        }
        let t = next_candidate;
        state.t = t;
        telemetry.candidates += 1;

        // Location proportional to the envelope.
        let u: f64 = rng.random();
        let target = u * total_envelope;
        let kk = cum_envelope.partition_point(|&c| c <= target).min(k - 1);

        let rate = match &frozen {
            Some(r) => {
                if state.susceptible[kk] == 0 {
                    0.0
                } else {
                    r[kk]
                }
            }
            None => exact_rate(&state, &tracker, t, kk),
        };
        if envelope[kk] <= 0.0 {
            // Zero-envelope cell: nothing to accept, but keep the draw count
            // aligned with the candidate stream.
            let _ = rng.random::<f64>();
            next_candidate = t + -(1.0 - rng.random::<f64>()).ln() / total_envelope;
            continue;
        }
        let ratio = rate / envelope[kk];
        if ratio > 1.0 + 1e-9 {
            return Err(Error::EnvelopeViolation {
                location: kk,
                time: t,
                ratio,
            });
        }
        let accept: f64 = rng.random();
        if accept < ratio {
            telemetry.accepted += 1;
            let path = law.sample_path(rng);
            let duration = path.duration();
            let id = state.next_id;
            state.next_id += 1;
            state.susceptible[kk] -= 1;
            state.infected[kk] += 1;
            state.cumulative[kk] += 1;
            state.events.push(EventRecord {
                time: t,
                kind: EventKind::Infection,
                location: kk as u32,
                id,
                duration,
            });
            push(
                &mut queue,
                &mut seq,
                t + duration,
                QueueKind::Recovery {
                    location: kk as u32,
                    id,
                    duration,
                },
            );
            if incremental {
                tracker.bump(&dk, kk, path.value(0.0));
                if let Some(jumps) = path.level_jumps() {
                    for (age, delta) in jumps {
                        if age > 0.0 {
                            push(
                                &mut queue,
                                &mut seq,
                                t + age,
                                QueueKind::ForceJump {
                                    location: kk as u32,
                                    delta,
                                },
                            );
                        }
                    }
                }
            }
            state.infections.push(InfectionRecord {
                location: kk as u32,
                time: t,
                duration,
                path,
            });
            debug_assert!(state.conservation_holds());
        }
        next_candidate = t + -(1.0 - rng.random::<f64>()).ln() / total_envelope;
    }

    state.t = horizon;
    Ok(SimTrajectory {
        horizon,
        model: state.model,
        n: state.n,
        scale: state.scale,
        k,
        initial_susceptible: state.initial_susceptible,
        initial_recovered: state.initial_recovered,
        population: state.population,
        initial_infected: state.initial_infected,
        infections: state.infections,
        events: state.events,
        telemetry,
    })
}

/// Scaled observables at one time point.
#[derive(Debug, Clone)]
pub struct Observation {
    pub t: f64,
    pub susceptible: Vec<f64>,
    pub infected: Vec<f64>,
    pub recovered: Vec<f64>,
    pub force: Vec<f64>,
    /// (ages.len())×K cumulative-in-age sections.
    pub sections: Vec<f64>,
    pub ages: Vec<f64>,
}

/// Reconstruct the scaled fields at time `t` from a trajectory. Sections
/// count initially infected by inclusive age threshold (individuals with age
/// exactly zero at the start count at every section level) and fresh
/// infections by strict age.
pub fn observe(traj: &SimTrajectory, t: f64, age_grid: &[f64]) -> Result<Observation> {
    if t < 0.0 || t > traj.horizon + 1e-12 {
        return Err(Error::TimeOutOfRange {
            t,
            horizon: traj.horizon,
        });
    }
    let k = traj.k;
    let jn = age_grid.len();
    let mut susceptible: Vec<f64> = traj.initial_susceptible.iter().map(|&v| v as f64).collect();
    let mut infected = vec![0.0f64; k];
    let mut recovered: Vec<f64> = traj.initial_recovered.iter().map(|&v| v as f64).collect();
    let mut force = vec![0.0f64; k];
    let mut increments = vec![0.0f64; jn * k];

    for rec in &traj.initial_infected {
        let kk = rec.location as usize;
        if rec.remaining > t {
            infected[kk] += 1.0;
            force[kk] += rec.path.value(rec.age_at_start + t);
            // Counts at sections with age threshold ≥ t + initial age;
            // zero-age individuals count everywhere.
            let threshold = if rec.age_at_start == 0.0 {
                0.0
            } else {
                t + rec.age_at_start
            };
            let j = age_grid.partition_point(|&a| a < threshold - 1e-12);
            if j < jn {
                increments[j * k + kk] += 1.0;
            }
        } else {
            match traj.model {
                ModelKind::Sir => recovered[kk] += 1.0,
                ModelKind::Sis => susceptible[kk] += 1.0,
            }
        }
    }
    for rec in &traj.infections {
        let kk = rec.location as usize;
        if rec.time > t {
            continue;
        }
        susceptible[kk] -= 1.0;
        if rec.time + rec.duration > t {
            infected[kk] += 1.0;
            force[kk] += rec.path.value(t - rec.time);
            let age = t - rec.time;
            let j = age_grid.partition_point(|&a| a <= age);
            if j < jn {
                increments[j * k + kk] += 1.0;
            }
        } else {
            match traj.model {
                ModelKind::Sir => recovered[kk] += 1.0,
                ModelKind::Sis => susceptible[kk] += 1.0,
            }
        }
    }

    // Prefix over age nodes.
    let mut sections = increments;
    for j in 1..jn {
        for kk in 0..k {
            sections[j * k + kk] += sections[(j - 1) * k + kk];
        }
    }

    let inv = 1.0 / traj.scale;
    let scale_vec = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x *= inv);
    scale_vec(&mut susceptible);
    scale_vec(&mut infected);
    scale_vec(&mut recovered);
    scale_vec(&mut force);
    sections.iter_mut().for_each(|x| *x *= inv);

    Ok(Observation {
        t,
        susceptible,
        infected,
        recovered,
        force,
        sections,
        ages: age_grid.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infectivity::{DurationLaw, LawKind, Shape};
    use crate::kernel::{discretize, DensityShape, KernelShape, PopulationDensity, SpatialKernel};
    use crate::scenario::{AgeDistribution, Profile};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn scenario(
        model: ModelKind,
        beta: f64,
        level: f64,
        duration: DurationLaw,
        i0: f64,
        ages: AgeDistribution,
    ) -> Scenario {
        Scenario {
            model,
            kernel: SpatialKernel::new(KernelShape::Constant { level: beta }).unwrap(),
            density: PopulationDensity::new(DensityShape::Uniform).unwrap(),
            law: InfectivityLaw::new(LawKind::ConstantUntilDeath { level, duration }).unwrap(),
            infected_fraction: Profile::Uniform { level: i0 },
            recovered_fraction: Profile::Uniform { level: 0.0 },
            ages,
            horizon: 4.0,
            step: 0.01,
        }
    }

    fn markovian(beta: f64, i0: f64) -> Scenario {
        scenario(
            ModelKind::Sir,
            beta,
            1.0,
            DurationLaw::Exponential { rate: 1.0 },
            i0,
            AgeDistribution::PointMass { age: 0.0 },
        )
    }

    #[test]
    fn init_counts_are_exact() {
        let sc = markovian(2.0, 0.05);
        let dk = sc.discrete_kernel(7).unwrap();
        let st = init(&sc, &dk, 1000, &mut rng(1)).unwrap();
        assert_eq!(st.population.iter().sum::<u32>(), 1000);
        assert!(st.conservation_holds());
        let total_inf: u32 = st.infected.iter().sum();
        assert!((total_inf as f64 - 50.0).abs() <= 7.0); // one unit per cell at most
        assert_eq!(st.initial_infected.len(), total_inf as usize);
    }

    #[test]
    fn init_rejects_more_locations_than_people() {
        let sc = markovian(2.0, 0.05);
        let dk = sc.discrete_kernel(50).unwrap();
        match init(&sc, &dk, 20, &mut rng(1)) {
            Err(Error::InvalidConfig(msg)) => assert!(msg.contains("model.n")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn no_infected_means_zero_force_and_frozen_run() {
        let sc = markovian(2.0, 0.0);
        let dk = sc.discrete_kernel(4).unwrap();
        let st = init(&sc, &dk, 400, &mut rng(3)).unwrap();
        assert!(st.force_of_infection().iter().all(|&v| v == 0.0));
        let s0 = st.susceptible.clone();
        let traj = run(st, 4.0, SimOptions::default(), &mut rng(4)).unwrap();
        assert!(traj.infections.is_empty());
        let obs = observe(&traj, 4.0, &[0.0, 1.0]).unwrap();
        for kk in 0..4 {
            assert_eq!(obs.susceptible[kk] * traj.scale, s0[kk] as f64);
        }
    }

    #[test]
    fn zero_kernel_never_infects() {
        let sc = markovian(0.0, 0.1);
        let dk = sc.discrete_kernel(3).unwrap();
        let st = init(&sc, &dk, 300, &mut rng(5)).unwrap();
        let traj = run(st, 4.0, SimOptions::default(), &mut rng(6)).unwrap();
        assert!(traj.infections.is_empty());
        assert_eq!(traj.telemetry.candidates, 0);
    }

    #[test]
    fn force_of_infection_matches_manual_resummation() {
        let sc = scenario(
            ModelKind::Sir,
            2.0,
            0.8,
            DurationLaw::Uniform { lo: 0.5, hi: 2.0 },
            0.3,
            AgeDistribution::Uniform { upper: 0.4 },
        );
        let dk = sc.discrete_kernel(5).unwrap();
        let mut st = init(&sc, &dk, 200, &mut rng(7)).unwrap();
        st.t = 0.35;
        let got = st.force_of_infection();
        // Independent re-evaluation straight from the records.
        let mut expect = vec![0.0; 5];
        for rec in &st.initial_infected {
            if rec.remaining > st.t {
                expect[rec.location as usize] += rec.path.value(rec.age_at_start + st.t);
            }
        }
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-12);
        }
        assert!(got.iter().sum::<f64>() > 0.0);
    }

    #[test]
    fn infection_rate_examples() {
        let sc = markovian(2.0, 0.1);
        let dk = sc.discrete_kernel(1).unwrap();
        let st = init(&sc, &dk, 100, &mut rng(8)).unwrap();
        // Single location: rate = (S/B)·b·F.
        let f = st.force_of_infection()[0];
        let rate = st.infection_rate().unwrap()[0];
        assert!((rate - (st.susceptible[0] as f64 / 100.0) * 2.0 * f).abs() < 1e-12);

        // Zero susceptibles give zero rate.
        let mut st2 = st.clone();
        st2.susceptible[0] = 0;
        st2.recovered[0] += st.susceptible[0];
        assert_eq!(st2.infection_rate().unwrap()[0], 0.0);
    }

    #[test]
    fn infection_rate_matches_direct_formula_k3() {
        let sc = scenario(
            ModelKind::Sir,
            0.0, // replaced below by a non-constant kernel
            1.0,
            DurationLaw::Exponential { rate: 1.0 },
            0.2,
            AgeDistribution::PointMass { age: 0.0 },
        );
        let kernel = SpatialKernel::new(KernelShape::Separable {
            scale: 2.0,
            offset: 0.3,
        })
        .unwrap();
        let dk = discretize(
            &kernel,
            &PopulationDensity::new(DensityShape::Uniform).unwrap(),
            3,
        )
        .unwrap();
        let sc = Scenario { kernel, ..sc };
        let st = init(&sc, &dk, 300, &mut rng(9)).unwrap();
        let f = st.force_of_infection();
        let rate = st.infection_rate().unwrap();
        for kk in 0..3 {
            let mut acc = 0.0;
            for kp in 0..3 {
                acc += dk.beta(kk, kp) * f[kp];
            }
            acc = acc / 3.0 * st.susceptible[kk] as f64 / st.population[kk] as f64;
            assert!((rate[kk] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn conservation_after_run_every_location() {
        let sc = markovian(2.0, 0.05);
        let dk = sc.discrete_kernel(6).unwrap();
        let st = init(&sc, &dk, 600, &mut rng(10)).unwrap();
        let traj = run(st, 4.0, SimOptions::default(), &mut rng(11)).unwrap();
        for t in [0.0, 0.5, 1.7, 3.3, 4.0] {
            let obs = observe(&traj, t, &[0.0]).unwrap();
            for kk in 0..6 {
                let total =
                    (obs.susceptible[kk] + obs.infected[kk] + obs.recovered[kk]) * traj.scale;
                assert!((total - traj.population[kk] as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn same_seed_gives_bit_identical_logs() {
        let sc = markovian(2.0, 0.05);
        let dk = sc.discrete_kernel(5).unwrap();
        let one = run(
            init(&sc, &dk, 500, &mut rng(42)).unwrap(),
            4.0,
            SimOptions::default(),
            &mut rng(43),
        )
        .unwrap();
        let two = run(
            init(&sc, &dk, 500, &mut rng(42)).unwrap(),
            4.0,
            SimOptions::default(),
            &mut rng(43),
        )
        .unwrap();
        assert_eq!(one.events, two.events);
        let three = run(
            init(&sc, &dk, 500, &mut rng(42)).unwrap(),
            4.0,
            SimOptions::default(),
            &mut rng(44),
        )
        .unwrap();
        assert!(one.events != three.events);
    }

    #[test]
    fn incremental_and_resummation_agree() {
        let sc = markovian(2.0, 0.05);
        let dk = sc.discrete_kernel(4).unwrap();
        let fast = run(
            init(&sc, &dk, 400, &mut rng(20)).unwrap(),
            4.0,
            SimOptions::default(),
            &mut rng(21),
        )
        .unwrap();
        let slow = run(
            init(&sc, &dk, 400, &mut rng(20)).unwrap(),
            4.0,
            SimOptions {
                force_resummation: true,
                ..Default::default()
            },
            &mut rng(21),
        )
        .unwrap();
        assert_eq!(fast.events, slow.events);
    }

    #[test]
    fn curved_paths_take_the_resummation_route() {
        let sc = Scenario {
            law: InfectivityLaw::new(LawKind::DeterministicShape {
                shape: Shape::Hump {
                    scale: 1.2,
                    width: 0.8,
                },
                duration: DurationLaw::Exponential { rate: 1.0 },
            })
            .unwrap(),
            ..markovian(2.0, 0.05)
        };
        let dk = sc.discrete_kernel(3).unwrap();
        let st = init(&sc, &dk, 300, &mut rng(30)).unwrap();
        let traj = run(st, 3.0, SimOptions::default(), &mut rng(31)).unwrap();
        assert!(traj.telemetry.candidates > 0);
        let obs = observe(&traj, 3.0, &[0.0, 1.0, 10.0]).unwrap();
        for kk in 0..3 {
            let total = (obs.susceptible[kk] + obs.infected[kk] + obs.recovered[kk]) * traj.scale;
            assert!((total - traj.population[kk] as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn first_infection_time_is_exponential() {
        // Markovian single location with near-frozen recovery: the first
        // infection time is Exp((S0/B)·b·c·I0) until a recovery intervenes,
        // which is made negligible here by the tiny recovery rate.
        let sc = scenario(
            ModelKind::Sir,
            2.0,
            1.0,
            DurationLaw::Exponential { rate: 0.01 },
            0.2,
            AgeDistribution::PointMass { age: 0.0 },
        );
        let dk = sc.discrete_kernel(1).unwrap();
        let n = 50;
        let rate = (40.0 / 50.0) * 2.0 * 1.0 * 10.0;
        let reps = 10_000;
        let mut sum = 0.0;
        let mut master = rng(123);
        for _ in 0..reps {
            let seed: u64 = master.random();
            let st = init(&sc, &dk, n, &mut rng(seed)).unwrap();
            let traj = run(st, 5.0, SimOptions::default(), &mut rng(seed ^ 0x5a5a)).unwrap();
            let first = traj
                .infections
                .first()
                .map(|r| r.time)
                .expect("an infection should happen within the horizon");
            sum += first;
        }
        let mean = sum / reps as f64;
        let se = (1.0 / rate) / (reps as f64).sqrt();
        assert!(
            (mean - 1.0 / rate).abs() < 3.0 * se,
            "mean {mean} vs {} (3se {})",
            1.0 / rate,
            3.0 * se
        );
    }

    #[test]
    fn initial_remaining_durations_are_memoryless() {
        // Exponential durations conditioned on age s: the remaining time is
        // again Exp(mu).
        let mu = 1.3;
        let age = 0.7;
        let sc = scenario(
            ModelKind::Sir,
            2.0,
            1.0,
            DurationLaw::Exponential { rate: mu },
            0.5,
            AgeDistribution::PointMass { age },
        );
        let dk = sc.discrete_kernel(1).unwrap();
        let st = init(&sc, &dk, 20_000, &mut rng(77)).unwrap();
        let n = st.initial_infected.len() as f64;
        for t in [0.2, 0.5, 1.0, 2.0] {
            let surv = st
                .initial_infected
                .iter()
                .filter(|r| r.remaining > t)
                .count() as f64
                / n;
            let expected = (-mu * t as f64).exp();
            let se = (expected * (1.0 - expected) / n).sqrt();
            assert!(
                (surv - expected).abs() < 4.0 * se + 1e-3,
                "t={t}: {surv} vs {expected}"
            );
        }
    }

    #[test]
    fn zero_age_initials_have_duration_law_f() {
        let mu = 0.9;
        let sc = scenario(
            ModelKind::Sir,
            2.0,
            1.0,
            DurationLaw::Exponential { rate: mu },
            0.5,
            AgeDistribution::PointMass { age: 0.0 },
        );
        let dk = sc.discrete_kernel(1).unwrap();
        let st = init(&sc, &dk, 20_000, &mut rng(78)).unwrap();
        let mut durations: Vec<f64> = st.initial_infected.iter().map(|r| r.remaining).collect();
        durations.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = durations.len();
        let eps = ((2.0f64 / 0.01).ln() / (2.0 * n as f64)).sqrt();
        let mut sup = 0.0f64;
        for (i, &d) in durations.iter().enumerate() {
            let f = 1.0 - (-mu * d).exp();
            sup = sup.max((f - i as f64 / n as f64).abs());
            sup = sup.max((f - (i + 1) as f64 / n as f64).abs());
        }
        assert!(sup <= eps, "DKW violation: {sup} > {eps}");
    }

    #[test]
    fn observe_sections_replay_and_monotonicity() {
        let sc = scenario(
            ModelKind::Sir,
            2.0,
            1.0,
            DurationLaw::Exponential { rate: 1.0 },
            0.1,
            AgeDistribution::Uniform { upper: 0.5 },
        );
        let dk = sc.discrete_kernel(4).unwrap();
        let st = init(&sc, &dk, 400, &mut rng(55)).unwrap();
        let traj = run(st, 3.0, SimOptions::default(), &mut rng(56)).unwrap();
        let ages: Vec<f64> = (0..=40).map(|j| j as f64 * 0.1).collect();
        for t in [0.7, 1.9, 3.0] {
            let obs = observe(&traj, t, &ages).unwrap();
            // Replay oracle: recount from the event log alone.
            let jn = ages.len();
            let mut replay = vec![0.0f64; jn * 4];
            for ev in traj.events.iter().filter(|e| e.kind == EventKind::Infection) {
                if ev.time > t || ev.time + ev.duration <= t {
                    continue;
                }
                let kk = ev.location as usize;
                let initial = ev.time <= 0.0;
                let j = if initial {
                    let age0 = -ev.time;
                    let threshold = if age0 == 0.0 { 0.0 } else { t + age0 };
                    ages.partition_point(|&a| a < threshold - 1e-12)
                } else {
                    ages.partition_point(|&a| a <= t - ev.time)
                };
                if j < jn {
                    replay[j * 4 + kk] += 1.0;
                }
            }
            for j in 1..jn {
                for kk in 0..4 {
                    replay[j * 4 + kk] += replay[(j - 1) * 4 + kk];
                }
            }
            for v in replay.iter_mut() {
                *v /= traj.scale;
            }
            assert_eq!(obs.sections, replay, "replay mismatch at t={t}");

            // Zero age section is empty (all ages are strictly positive
            // here), monotone in age, and tops out at the infected count.
            for kk in 0..4 {
                assert_eq!(obs.sections[kk], 0.0);
                for j in 1..jn {
                    assert!(obs.sections[j * 4 + kk] >= obs.sections[(j - 1) * 4 + kk]);
                }
                assert!(
                    (obs.sections[(jn - 1) * 4 + kk] - obs.infected[kk]).abs() < 1e-12,
                    "top section must equal infected"
                );
            }
        }
    }

    #[test]
    fn observe_rejects_out_of_range_times() {
        let sc = markovian(2.0, 0.05);
        let dk = sc.discrete_kernel(2).unwrap();
        let traj = run(
            init(&sc, &dk, 100, &mut rng(60)).unwrap(),
            1.0,
            SimOptions::default(),
            &mut rng(61),
        )
        .unwrap();
        assert!(matches!(
            observe(&traj, 1.5, &[0.0]),
            Err(Error::TimeOutOfRange { .. })
        ));
    }

    #[test]
    fn sis_recoveries_return_to_susceptible() {
        let sc = Scenario {
            model: ModelKind::Sis,
            ..markovian(3.0, 0.2)
        };
        let dk = sc.discrete_kernel(3).unwrap();
        let st = init(&sc, &dk, 300, &mut rng(70)).unwrap();
        let traj = run(st, 6.0, SimOptions::default(), &mut rng(71)).unwrap();
        for t in [1.0, 3.0, 6.0] {
            let obs = observe(&traj, t, &[0.0]).unwrap();
            for kk in 0..3 {
                assert_eq!(obs.recovered[kk], 0.0);
                let total = (obs.susceptible[kk] + obs.infected[kk]) * traj.scale;
                assert!((total - traj.population[kk] as f64).abs() < 1e-9);
            }
        }
        // Reinfection is possible: more infections than initially infected.
        assert!(traj.infections.len() > traj.initial_infected.len() / 2);
    }

    #[test]
    fn discretized_mode_runs_and_conserves() {
        let sc = markovian(2.0, 0.05);
        let dk = sc.discrete_kernel(4).unwrap();
        let st = init(&sc, &dk, 400, &mut rng(80)).unwrap();
        let traj = run(
            st,
            4.0,
            SimOptions {
                mode: SimMode::Discretized { delta: 0.05 },
                force_resummation: false,
            },
            &mut rng(81),
        )
        .unwrap();
        assert!(traj.telemetry.candidates > 0);
        let obs = observe(&traj, 4.0, &[0.0]).unwrap();
        for kk in 0..4 {
            let total = (obs.susceptible[kk] + obs.infected[kk] + obs.recovered[kk]) * traj.scale;
            assert!((total - traj.population[kk] as f64).abs() < 1e-9);
        }
        // The frozen-rate trajectory should land near the exact one.
        let exact = run(
            init(&sc, &dk, 400, &mut rng(80)).unwrap(),
            4.0,
            SimOptions::default(),
            &mut rng(81),
        )
        .unwrap();
        let s_frozen: f64 = observe(&traj, 4.0, &[0.0]).unwrap().susceptible.iter().sum();
        let s_exact: f64 = observe(&exact, 4.0, &[0.0]).unwrap().susceptible.iter().sum();
        assert!((s_frozen - s_exact).abs() / 4.0 < 0.15);
    }
}
