//! Scenario assembly: spatial fraction profiles, initial infection-age
//! distributions, and the bundle describing one experiment.
//!
//! The population density fixes how many people live where; the infected and
//! recovered fraction profiles split each cell's population at time zero, so
//! susceptible + infected + recovered equals the population pointwise by
//! construction.

use crate::error::{Error, Result};
use crate::infectivity::InfectivityLaw;
use crate::kernel::{discretize, DiscreteKernel, PopulationDensity, SpatialKernel};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Sir,
    Sis,
}

/// Spatial fraction profile on [0,1], valued in [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Profile {
    Uniform { level: f64 },
    /// base + height·exp(−((x−center)/width)²).
    Bump {
        base: f64,
        height: f64,
        center: f64,
        width: f64,
    },
    TwoBlock { split: f64, left: f64, right: f64 },
}

impl Profile {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Profile::Uniform { level } => level,
            Profile::Bump {
                base,
                height,
                center,
                width,
            } => base + height * (-((x - center) / width).powi(2)).exp(),
            Profile::TwoBlock { split, left, right } => {
                if x < split {
                    left
                } else {
                    right
                }
            }
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if let Profile::Bump { width, .. } = *self {
            if width <= 0.0 {
                return Err(Error::InvalidConfig(format!("{name}.width must be > 0")));
            }
        }
        if let Profile::TwoBlock { split, .. } = *self {
            if !(0.0 < split && split < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name}.split must lie in (0,1)"
                )));
            }
        }
        for i in 0..=400 {
            let v = self.value(i as f64 / 400.0);
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!(
                    "{name} leaves [0,1] (value {v} at x={})",
                    i as f64 / 400.0
                )));
            }
        }
        Ok(())
    }
}

/// Normalized initial infection-age distribution (the age profile of the
/// initially infected, shared across locations).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AgeDistribution {
    /// All initial infections at exactly this age.
    PointMass { age: f64 },
    /// Finite atom list (age, weight); weights need not be pre-normalized.
    Atoms { points: Vec<(f64, f64)> },
    /// Uniform density on [0, upper].
    Uniform { upper: f64 },
    /// Piecewise-linear density on an increasing age grid starting at 0.
    GridDensity { ages: Vec<f64>, values: Vec<f64> },
}

impl AgeDistribution {
    pub fn validate(&self) -> Result<()> {
        match self {
            AgeDistribution::PointMass { age } => {
                if *age < 0.0 || !age.is_finite() {
                    return Err(Error::InvalidConfig("initial.age.age must be ≥ 0".into()));
                }
            }
            AgeDistribution::Atoms { points } => {
                if points.is_empty() {
                    return Err(Error::InvalidConfig("initial.age.points is empty".into()));
                }
                let total: f64 = points.iter().map(|&(_, w)| w).sum();
                if total <= 0.0 || points.iter().any(|&(a, w)| a < 0.0 || w < 0.0) {
                    return Err(Error::InvalidConfig(
                        "initial.age.points need nonnegative ages and weights with positive total"
                            .into(),
                    ));
                }
            }
            AgeDistribution::Uniform { upper } => {
                if *upper <= 0.0 {
                    return Err(Error::InvalidConfig("initial.age.upper must be > 0".into()));
                }
            }
            AgeDistribution::GridDensity { ages, values } => {
                if ages.len() < 2 || ages.len() != values.len() {
                    return Err(Error::InvalidConfig(
                        "initial.age grid needs ≥ 2 nodes and matching values".into(),
                    ));
                }
                if ages[0] != 0.0 || ages.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidConfig(
                        "initial.age grid must start at 0 and increase".into(),
                    ));
                }
                if values.iter().any(|&v| v < 0.0) || self.total_mass() <= 0.0 {
                    return Err(Error::InvalidConfig(
                        "initial.age densities must be ≥ 0 with positive mass".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn total_mass(&self) -> f64 {
        match self {
            AgeDistribution::PointMass { .. } => 1.0,
            AgeDistribution::Atoms { points } => points.iter().map(|&(_, w)| w).sum(),
            AgeDistribution::Uniform { .. } => 1.0,
            AgeDistribution::GridDensity { ages, values } => {
                let mut acc = 0.0;
                for i in 1..ages.len() {
                    acc += 0.5 * (values[i] + values[i - 1]) * (ages[i] - ages[i - 1]);
                }
                acc
            }
        }
    }

    /// Upper bound of the age support (ā).
    pub fn upper_bound(&self) -> f64 {
        match self {
            AgeDistribution::PointMass { age } => *age,
            AgeDistribution::Atoms { points } => {
                points.iter().map(|&(a, _)| a).fold(0.0, f64::max)
            }
            AgeDistribution::Uniform { upper } => *upper,
            AgeDistribution::GridDensity { ages, .. } => *ages.last().unwrap(),
        }
    }

    pub fn is_atomic(&self) -> bool {
        matches!(
            self,
            AgeDistribution::PointMass { .. } | AgeDistribution::Atoms { .. }
        )
    }

    /// Normalized atoms, when the measure is purely atomic.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            AgeDistribution::PointMass { age } => Some(vec![(*age, 1.0)]),
            AgeDistribution::Atoms { points } => {
                let total = self.total_mass();
                Some(points.iter().map(|&(a, w)| (a, w / total)).collect())
            }
            _ => None,
        }
    }

    /// Normalized density value at age `a`, when absolutely continuous.
    pub fn density(&self, a: f64) -> Option<f64> {
        match self {
            AgeDistribution::Uniform { upper } => {
                Some(if (0.0..=*upper).contains(&a) {
                    1.0 / upper
                } else {
                    0.0
                })
            }
            AgeDistribution::GridDensity { ages, values } => {
                let total = self.total_mass();
                if a < 0.0 || a > *ages.last().unwrap() {
                    return Some(0.0);
                }
                let i = ages.partition_point(|&x| x <= a).min(ages.len() - 1);
                if i == 0 {
                    return Some(values[0] / total);
                }
                let w = (a - ages[i - 1]) / (ages[i] - ages[i - 1]);
                Some((values[i - 1] * (1.0 - w) + values[i] * w) / total)
            }
            _ => None,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self {
            AgeDistribution::PointMass { age } => *age,
            AgeDistribution::Atoms { points } => {
                let total = self.total_mass();
                let mut u: f64 = rng.random::<f64>() * total;
                for &(a, w) in points {
                    if u < w {
                        return a;
                    }
                    u -= w;
                }
                points.last().unwrap().0
            }
            AgeDistribution::Uniform { upper } => rng.random::<f64>() * upper,
            AgeDistribution::GridDensity { ages, values } => {
                let total = self.total_mass();
                let mut u: f64 = rng.random::<f64>() * total;
                for i in 1..ages.len() {
                    let (a0, a1) = (ages[i - 1], ages[i]);
                    let (d0, d1) = (values[i - 1], values[i]);
                    let mass = 0.5 * (d0 + d1) * (a1 - a0);
                    if u < mass || i == ages.len() - 1 {
                        let span = a1 - a0;
                        let slope = (d1 - d0) / span;
                        // Solve d0·y + slope·y²/2 = u for y ∈ [0, span].
                        let y = if slope.abs() < 1e-12 * (d0.abs() + 1e-12) {
                            if d0 > 0.0 {
                                u / d0
                            } else {
                                span
                            }
                        } else {
                            let disc = (d0 * d0 + 2.0 * slope * u).max(0.0);
                            (disc.sqrt() - d0) / slope
                        };
                        return a0 + y.clamp(0.0, span);
                    }
                    u -= mass;
                }
                *ages.last().unwrap()
            }
        }
    }
}

/// Continuum initial condition evaluated on K cells.
#[derive(Debug, Clone)]
pub struct InitialState {
    pub susceptible: Vec<f64>,
    pub infected: Vec<f64>,
    pub recovered: Vec<f64>,
    pub ages: AgeDistribution,
}

impl InitialState {
    pub fn k(&self) -> usize {
        self.susceptible.len()
    }

    pub fn age_bound(&self) -> f64 {
        self.ages.upper_bound()
    }
}

/// One experiment: model variant, kernel, density, infectivity law, initial
/// profiles, horizon and solver step.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: ModelKind,
    pub kernel: SpatialKernel,
    pub density: PopulationDensity,
    pub law: InfectivityLaw,
    pub infected_fraction: Profile,
    pub recovered_fraction: Profile,
    pub ages: AgeDistribution,
    pub horizon: f64,
    pub step: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.infected_fraction.validate("initial.infected")?;
        self.recovered_fraction.validate("initial.recovered")?;
        self.ages.validate()?;
        if self.horizon <= 0.0 {
            return Err(Error::InvalidConfig("model.horizon must be > 0".into()));
        }
        if self.step <= 0.0 || self.step > self.horizon {
            return Err(Error::InvalidConfig(
                "model.step must be in (0, horizon]".into(),
            ));
        }
        if self.model == ModelKind::Sis {
            for i in 0..=100 {
                if self.recovered_fraction.value(i as f64 / 100.0) != 0.0 {
                    return Err(Error::InvalidConfig(
                        "initial.recovered must be identically 0 in SIS mode".into(),
                    ));
                }
            }
        }
        for i in 0..=400 {
            let x = i as f64 / 400.0;
            let total = self.infected_fraction.value(x) + self.recovered_fraction.value(x);
            if total > 1.0 + 1e-12 {
                return Err(Error::InfeasibleInitialCondition(format!(
                    "infected + recovered fraction exceeds 1 at x = {x}"
                )));
            }
        }
        Ok(())
    }

    pub fn discrete_kernel(&self, k: usize) -> Result<DiscreteKernel> {
        discretize(&self.kernel, &self.density, k)
    }

    /// Cell-center initial condition: fractions of the discretized density.
    pub fn initial_state(&self, dk: &DiscreteKernel) -> InitialState {
        let centers = dk.cell_centers();
        let mut susceptible = Vec::with_capacity(dk.k());
        let mut infected = Vec::with_capacity(dk.k());
        let mut recovered = Vec::with_capacity(dk.k());
        for (idx, &x) in centers.iter().enumerate() {
            let b = dk.b_vec()[idx];
            let pi = self.infected_fraction.value(x);
            let pr = self.recovered_fraction.value(x);
            infected.push(b * pi);
            recovered.push(b * pr);
            susceptible.push(b * (1.0 - pi - pr));
        }
        InitialState {
            susceptible,
            infected,
            recovered,
            ages: self.ages.clone(),
        }
    }
}

/// Round nonnegative real targets to integers summing exactly to `total`:
/// rescale so the targets sum to `total`, floor, then hand out the remaining
/// units in decreasing fractional-remainder order.
pub(crate) fn largest_remainder(targets: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = targets.iter().sum();
    if sum <= 0.0 {
        let mut out = vec![0usize; targets.len()];
        if !targets.is_empty() {
            out[0] = total;
        }
        return out;
    }
    let scale = total as f64 / sum;
    let scaled: Vec<f64> = targets.iter().map(|&t| t * scale).collect();
    let mut counts: Vec<usize> = scaled.iter().map(|&t| t.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = scaled[a] - scaled[a].floor();
        let rb = scaled[b] - scaled[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut left = total.saturating_sub(assigned);
    for &i in order.iter().cycle().take(targets.len().max(left)) {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    debug_assert_eq!(counts.iter().sum::<usize>(), total);
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn largest_remainder_sums_exactly() {
        let targets = vec![31.25 * 0.95, 31.25 * 0.05, 0.0];
        let counts = largest_remainder(&targets, 31);
        assert_eq!(counts.iter().sum::<usize>(), 31);
        for (c, t) in counts.iter().zip(&targets) {
            let rescaled = t * 31.0 / targets.iter().sum::<f64>();
            assert!((*c as f64 - rescaled).abs() < 1.0 + 1e-9);
        }
    }

    #[test]
    fn age_distributions_sample_in_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dists = [
            AgeDistribution::PointMass { age: 0.7 },
            AgeDistribution::Atoms {
                points: vec![(0.0, 1.0), (1.0, 3.0)],
            },
            AgeDistribution::Uniform { upper: 2.0 },
            AgeDistribution::GridDensity {
                ages: vec![0.0, 1.0, 2.0],
                values: vec![2.0, 1.0, 0.0],
            },
        ];
        for d in &dists {
            d.validate().unwrap();
            let ub = d.upper_bound();
            for _ in 0..2000 {
                let a = d.sample(&mut rng);
                assert!((0.0..=ub + 1e-12).contains(&a));
            }
        }
    }

    #[test]
    fn grid_density_sampling_matches_density() {
        // Decreasing triangle on [0,2]: P(a ≤ 1) = 3/4.
        let d = AgeDistribution::GridDensity {
            ages: vec![0.0, 2.0],
            values: vec![1.0, 0.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 40_000;
        let below: usize = (0..n).filter(|_| d.sample(&mut rng) <= 1.0).count();
        let p = below as f64 / n as f64;
        assert!((p - 0.75).abs() < 0.01, "p = {p}");
        assert!((d.density(0.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((d.density(1.0).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn scenario_initial_state_partitions_population() {
        use crate::infectivity::{DurationLaw, LawKind};
        use crate::kernel::{DensityShape, KernelShape};
        let scenario = Scenario {
            model: ModelKind::Sir,
            kernel: SpatialKernel::new(KernelShape::Constant { level: 2.0 }).unwrap(),
            density: PopulationDensity::new(DensityShape::TwoBlock {
                split: 0.5,
                left: 0.5,
            })
            .unwrap(),
            law: InfectivityLaw::new(LawKind::ConstantUntilDeath {
                level: 1.0,
                duration: DurationLaw::Exponential { rate: 1.0 },
            })
            .unwrap(),
            infected_fraction: Profile::Uniform { level: 0.05 },
            recovered_fraction: Profile::Uniform { level: 0.0 },
            ages: AgeDistribution::PointMass { age: 0.0 },
            horizon: 5.0,
            step: 0.05,
        };
        scenario.validate().unwrap();
        let dk = scenario.discrete_kernel(6).unwrap();
        let init = scenario.initial_state(&dk);
        for i in 0..6 {
            let total = init.susceptible[i] + init.infected[i] + init.recovered[i];
            assert!((total - dk.b_vec()[i]).abs() < 1e-12);
        }
    }
}
