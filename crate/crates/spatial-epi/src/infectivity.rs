//! Random infectivity laws, sampled infectivity paths, and their
//! deterministic summaries (mean curve, variance, duration distribution).
//!
//! A path is a bounded nonnegative function of infection age, zero before age
//! zero and zero again after the infected period ends. Paths are built from a
//! fixed number of continuous pieces between random breakpoints; the law
//! catalog covers a constant level held until a random death time, a
//! deterministic shape cut off at a random duration, and piecewise-random
//! constant levels.

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Distribution of the infected period (or of a breakpoint gap).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DurationLaw {
    Exponential { rate: f64 },
    Fixed { value: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl DurationLaw {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DurationLaw::Exponential { rate } => rate > 0.0 && rate.is_finite(),
            DurationLaw::Fixed { value } => value > 0.0 && value.is_finite(),
            DurationLaw::Uniform { lo, hi } => lo >= 0.0 && hi > lo && hi.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidLaw(format!("bad duration law {self:?}")))
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.random();
        match *self {
            DurationLaw::Exponential { rate } => -(1.0 - u).ln() / rate,
            DurationLaw::Fixed { value } => value,
            DurationLaw::Uniform { lo, hi } => lo + u * (hi - lo),
        }
    }

    /// F(t) = P(duration ≤ t), right-continuous.
    pub fn cdf(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match *self {
            DurationLaw::Exponential { rate } => 1.0 - (-rate * t).exp(),
            DurationLaw::Fixed { value } => {
                if t >= value {
                    1.0
                } else {
                    0.0
                }
            }
            DurationLaw::Uniform { lo, hi } => ((t - lo) / (hi - lo)).clamp(0.0, 1.0),
        }
    }

    /// F^c(t) = 1 - F(t).
    pub fn survival(&self, t: f64) -> f64 {
        1.0 - self.cdf(t)
    }

    /// G^c(t) = F^c(t-), the left-continuous survival. Differs from F^c only
    /// at atoms.
    pub fn survival_left(&self, t: f64) -> f64 {
        match *self {
            DurationLaw::Fixed { value } => {
                if t <= value {
                    1.0
                } else {
                    0.0
                }
            }
            _ => self.survival(t),
        }
    }

    /// Atoms of the duration measure, as (location, mass).
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        match *self {
            DurationLaw::Fixed { value } => vec![(value, 1.0)],
            _ => Vec::new(),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            DurationLaw::Exponential { rate } => 1.0 / rate,
            DurationLaw::Fixed { value } => value,
            DurationLaw::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    pub fn is_absolutely_continuous(&self) -> bool {
        !matches!(self, DurationLaw::Fixed { .. })
    }

    /// Hazard f(t)/F^c(t) where the law is absolutely continuous.
    pub fn hazard(&self, t: f64) -> Option<f64> {
        match *self {
            DurationLaw::Exponential { rate } => Some(rate),
            DurationLaw::Fixed { .. } => None,
            DurationLaw::Uniform { lo, hi } => {
                if t < lo {
                    Some(0.0)
                } else if t < hi {
                    Some(1.0 / (hi - t))
                } else {
                    None
                }
            }
        }
    }

    /// End of the support, when bounded.
    pub fn support_end(&self) -> Option<f64> {
        match *self {
            DurationLaw::Exponential { .. } => None,
            DurationLaw::Fixed { value } => Some(value),
            DurationLaw::Uniform { hi, .. } => Some(hi),
        }
    }

    /// The continuous factor of F^c: equals F^c except at a terminal atom,
    /// where the jump is handled by restricting the integration range instead.
    pub fn survival_smooth(&self, t: f64) -> f64 {
        match *self {
            DurationLaw::Fixed { .. } => 1.0,
            _ => self.survival(t),
        }
    }
}

/// Deterministic infectivity shapes for the shape-times-indicator law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Shape {
    Constant { level: f64 },
    /// scale · (t/width) · exp(1 - t/width): rises to `scale` at `width`,
    /// then decays. Strictly positive for t > 0.
    Hump { scale: f64, width: f64 },
}

impl Shape {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Constant { level } => level >= 0.0 && level.is_finite(),
            Shape::Hump { scale, width } => scale >= 0.0 && scale.is_finite() && width > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidLaw(format!("bad shape {self:?}")))
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match *self {
            Shape::Constant { level } => level,
            Shape::Hump { scale, width } => {
                let r = t / width;
                scale * r * (1.0 - r).exp()
            }
        }
    }

    pub fn max_value(&self) -> f64 {
        match *self {
            Shape::Constant { level } => level,
            Shape::Hump { scale, .. } => scale,
        }
    }

    /// Lipschitz bound, giving the continuity modulus of pieces built from
    /// this shape.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Shape::Constant { .. } => 0.0,
            Shape::Hump { scale, width } => scale * std::f64::consts::E / width,
        }
    }
}

/// Generator for one constant-valued piece of a piecewise-random path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PieceGenerator {
    Fixed { level: f64 },
    UniformLevel { lo: f64, hi: f64 },
}

impl PieceGenerator {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            PieceGenerator::Fixed { level } => level >= 0.0 && level.is_finite(),
            PieceGenerator::UniformLevel { lo, hi } => lo >= 0.0 && hi >= lo && hi.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidLaw(format!("bad piece generator {self:?}")))
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            PieceGenerator::Fixed { level } => level,
            PieceGenerator::UniformLevel { lo, hi } => {
                let u: f64 = rng.random();
                lo + u * (hi - lo)
            }
        }
    }

    fn max_level(&self) -> f64 {
        match *self {
            PieceGenerator::Fixed { level } => level,
            PieceGenerator::UniformLevel { hi, .. } => hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LawKind {
    /// λ(t) = level · 1_{t < duration}.
    ConstantUntilDeath {
        level: f64,
        duration: DurationLaw,
    },
    /// λ(t) = shape(t) · 1_{t < duration}.
    DeterministicShape {
        shape: Shape,
        duration: DurationLaw,
    },
    /// Constant levels between random breakpoints; breakpoint ℓ sits at the
    /// sum of the first ℓ gaps.
    PiecewiseRandom {
        pieces: Vec<PieceGenerator>,
        gaps: Vec<DurationLaw>,
    },
}

/// A validated infectivity law together with its uniform bound.
#[derive(Debug, Clone, PartialEq)]
pub struct InfectivityLaw {
    kind: LawKind,
    lambda_star: f64,
}

impl InfectivityLaw {
    pub fn new(kind: LawKind) -> Result<Self> {
        let lambda_star = match &kind {
            LawKind::ConstantUntilDeath { level, duration } => {
                duration.validate()?;
                if !(*level >= 0.0 && level.is_finite()) {
                    return Err(Error::InvalidLaw(format!("bad level {level}")));
                }
                *level
            }
            LawKind::DeterministicShape { shape, duration } => {
                shape.validate()?;
                duration.validate()?;
                shape.max_value()
            }
            LawKind::PiecewiseRandom { pieces, gaps } => {
                if pieces.is_empty() {
                    return Err(Error::InvalidLaw("piecewise law needs ≥ 1 piece".into()));
                }
                if pieces.len() != gaps.len() {
                    return Err(Error::InvalidLaw(format!(
                        "{} pieces but {} gaps",
                        pieces.len(),
                        gaps.len()
                    )));
                }
                for p in pieces {
                    p.validate()?;
                }
                for g in gaps {
                    g.validate()?;
                }
                pieces.iter().map(|p| p.max_level()).fold(0.0, f64::max)
            }
        };
        Ok(Self { kind, lambda_star })
    }

    pub fn kind(&self) -> &LawKind {
        &self.kind
    }

    /// Uniform pointwise bound on every sampled path.
    pub fn lambda_star(&self) -> f64 {
        self.lambda_star
    }

    /// Continuity modulus of the pieces: |λℓ(t) − λℓ(s)| ≤ modulus(|t−s|).
    pub fn modulus(&self, dt: f64) -> f64 {
        match &self.kind {
            LawKind::DeterministicShape { shape, .. } => shape.lipschitz() * dt.max(0.0),
            _ => 0.0,
        }
    }

    /// Whether every sampled path is a step function (enables event-driven
    /// force bookkeeping in the simulator).
    pub fn piecewise_constant_paths(&self) -> bool {
        match &self.kind {
            LawKind::ConstantUntilDeath { .. } => true,
            LawKind::PiecewiseRandom { .. } => true,
            LawKind::DeterministicShape { shape, .. } => {
                matches!(shape, Shape::Constant { .. })
            }
        }
    }

    pub fn sample_path(&self, rng: &mut impl Rng) -> InfectivityPath {
        match &self.kind {
            LawKind::ConstantUntilDeath { level, duration } => {
                let eta = duration.sample(rng);
                InfectivityPath::from_pieces(vec![eta], vec![PathPiece::Level(*level)])
            }
            LawKind::DeterministicShape { shape, duration } => {
                let eta = duration.sample(rng);
                InfectivityPath::from_pieces(vec![eta], vec![PathPiece::Curve(*shape)])
            }
            LawKind::PiecewiseRandom { pieces, gaps } => {
                let mut ends = Vec::with_capacity(gaps.len());
                let mut acc = 0.0;
                for g in gaps {
                    acc += g.sample(rng);
                    ends.push(acc);
                }
                let levels: Vec<PathPiece> = pieces
                    .iter()
                    .map(|p| PathPiece::Level(p.sample(rng)))
                    .collect();
                InfectivityPath::from_pieces(ends, levels)
            }
        }
    }

    /// Sample a path conditioned on its duration exceeding `age`, by
    /// rejection. Used for initially infected individuals whose remaining
    /// time must follow the age-conditional law.
    pub fn sample_path_conditional(
        &self,
        age: f64,
        max_attempts: usize,
        rng: &mut impl Rng,
    ) -> Result<InfectivityPath> {
        for _ in 0..max_attempts {
            let path = self.sample_path(rng);
            if path.duration() > age {
                return Ok(path);
            }
        }
        Err(Error::PathConditioning {
            attempts: max_attempts,
            age,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PathPiece {
    Level(f64),
    Curve(Shape),
}

impl PathPiece {
    fn value(&self, t: f64) -> f64 {
        match self {
            PathPiece::Level(v) => *v,
            PathPiece::Curve(s) => s.value(t),
        }
    }
}

/// One sampled infectivity path: κ pieces between breakpoints ζ0 = 0 ≤ ζ1 ≤ …
/// ≤ ζκ, identically zero from `duration` on.
#[derive(Debug, Clone, PartialEq)]
pub struct InfectivityPath {
    /// ζ0..ζκ, length κ+1.
    breakpoints: Vec<f64>,
    /// Piece ℓ applies on [ζℓ, ζℓ+1).
    pieces: Vec<PathPiece>,
    /// sup{t : λ(t) > 0}; 0 for an identically-zero path.
    duration: f64,
}

impl InfectivityPath {
    fn from_pieces(ends: Vec<f64>, pieces: Vec<PathPiece>) -> Self {
        debug_assert_eq!(ends.len(), pieces.len());
        let mut breakpoints = Vec::with_capacity(ends.len() + 1);
        breakpoints.push(0.0);
        breakpoints.extend(ends);
        // Duration: end of the last piece that is not identically zero.
        let mut duration = 0.0;
        for (i, piece) in pieces.iter().enumerate().rev() {
            let zero = match piece {
                PathPiece::Level(v) => *v == 0.0,
                PathPiece::Curve(s) => s.max_value() == 0.0,
            };
            if !zero && breakpoints[i + 1] > breakpoints[i] {
                duration = breakpoints[i + 1];
                break;
            }
        }
        Self {
            breakpoints,
            pieces,
            duration,
        }
    }

    /// Evaluate at infection age `t` (right-continuous; zero outside
    /// [0, duration)).
    pub fn value(&self, t: f64) -> f64 {
        if t < 0.0 || t >= self.duration {
            return 0.0;
        }
        // Piece index: last ℓ with ζℓ ≤ t.
        let idx = self.breakpoints.partition_point(|&b| b <= t) - 1;
        if idx >= self.pieces.len() {
            return 0.0;
        }
        self.pieces[idx].value(t)
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn piece_count(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_piecewise_constant(&self) -> bool {
        self.pieces
            .iter()
            .all(|p| matches!(p, PathPiece::Level(_)))
    }

    /// For piecewise-constant paths: the jump times and deltas of the step
    /// function, including the final drop to zero. `None` if any piece is a
    /// curve.
    pub fn level_jumps(&self) -> Option<Vec<(f64, f64)>> {
        if !self.is_piecewise_constant() {
            return None;
        }
        // (time, level-after) points; later entries at equal times win
        // (right-continuity), zero-length pieces drop out.
        let mut current = 0.0f64;
        let mut jumps = Vec::new();
        let mut push = |t: f64, level: f64, current: &mut f64| {
            if level != *current {
                jumps.push((t, level - *current));
                *current = level;
            }
        };
        for (i, piece) in self.pieces.iter().enumerate() {
            let (start, end) = (self.breakpoints[i], self.breakpoints[i + 1]);
            if end <= start {
                continue;
            }
            let level = if start >= self.duration {
                0.0
            } else {
                piece.value(start)
            };
            push(start, level, &mut current);
        }
        push(self.duration, 0.0, &mut current);
        // Clamp any jump recorded beyond the duration (trailing zero pieces).
        jumps.retain(|&(t, _)| t <= self.duration);
        Some(jumps)
    }
}

/// Closed-form or estimated deterministic summaries of a law: mean curve
/// λ̄(t), variance v(t), duration distribution F and its left-continuous
/// survival, the duration measure's atoms.
#[derive(Debug, Clone)]
pub struct MeanInfectivity {
    form: MeanForm,
    lambda_star: f64,
}

#[derive(Debug, Clone)]
enum MeanForm {
    /// λ(t) = scale(t)·1_{t<η}: λ̄ = scale·F^c, v = scale²·F^c·(1−F^c).
    Closed { scale: ScaleFn, duration: DurationLaw },
    /// Monte Carlo estimates on a grid, with the empirical duration sample.
    Estimated {
        grid: Vec<f64>,
        mean: Vec<f64>,
        variance: Vec<f64>,
        std_error: Vec<f64>,
        durations_sorted: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy)]
pub enum ScaleFn {
    Level(f64),
    Curve(Shape),
}

impl ScaleFn {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            ScaleFn::Level(v) => {
                if t < 0.0 {
                    0.0
                } else {
                    *v
                }
            }
            ScaleFn::Curve(s) => s.value(t),
        }
    }
}

/// Options for Monte Carlo estimation of the mean curve when no closed form
/// exists. Common random numbers: each sampled path is evaluated on the whole
/// grid.
#[derive(Debug, Clone)]
pub struct McOptions {
    pub grid: Vec<f64>,
    pub target_se: f64,
    pub sample_cap: usize,
    pub seed: u64,
}

impl McOptions {
    pub fn new(grid: Vec<f64>) -> Self {
        Self {
            grid,
            target_se: 5e-3,
            sample_cap: 100_000,
            seed: 0,
        }
    }
}

/// Compute the deterministic summaries of a law. Laws with closed forms
/// ignore `mc`; the piecewise-random law requires it.
pub fn mean_infectivity(law: &InfectivityLaw, mc: Option<&McOptions>) -> Result<MeanInfectivity> {
    let lambda_star = law.lambda_star();
    match law.kind() {
        LawKind::ConstantUntilDeath { level, duration } => Ok(MeanInfectivity {
            form: MeanForm::Closed {
                scale: ScaleFn::Level(*level),
                duration: *duration,
            },
            lambda_star,
        }),
        LawKind::DeterministicShape { shape, duration } => Ok(MeanInfectivity {
            form: MeanForm::Closed {
                scale: ScaleFn::Curve(*shape),
                duration: *duration,
            },
            lambda_star,
        }),
        LawKind::PiecewiseRandom { .. } => {
            let mc = mc.ok_or(Error::EstimationGridRequired)?;
            estimate_by_monte_carlo(law, mc)
        }
    }
}

fn estimate_by_monte_carlo(law: &InfectivityLaw, mc: &McOptions) -> Result<MeanInfectivity> {
    use rand::SeedableRng;
    if mc.grid.is_empty() {
        return Err(Error::EstimationGridRequired);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(mc.seed);
    let g = mc.grid.len();
    let mut n = 0usize;
    let mut mean = vec![0.0f64; g];
    let mut m2 = vec![0.0f64; g];
    let mut durations = Vec::new();
    let batch = 1024usize;
    let mut max_se = f64::INFINITY;
    while n < mc.sample_cap {
        for _ in 0..batch.min(mc.sample_cap - n) {
            let path = law.sample_path(&mut rng);
            durations.push(path.duration());
            n += 1;
            for (j, &t) in mc.grid.iter().enumerate() {
                let v = path.value(t);
                let d = v - mean[j];
                mean[j] += d / n as f64;
                m2[j] += d * (v - mean[j]);
            }
        }
        if n >= batch {
            max_se = (0..g)
                .map(|j| (m2[j] / (n as f64 * (n - 1).max(1) as f64)).sqrt())
                .fold(0.0, f64::max);
            if max_se <= mc.target_se {
                break;
            }
        }
    }
    if max_se > mc.target_se {
        return Err(Error::EstimationBudgetExceeded {
            target_se: mc.target_se,
            achieved_se: max_se,
            samples: n,
        });
    }
    let variance: Vec<f64> = m2.iter().map(|&s| s / n as f64).collect();
    let std_error: Vec<f64> = m2
        .iter()
        .map(|&s| (s / (n as f64 * (n - 1) as f64)).sqrt())
        .collect();
    durations.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(MeanInfectivity {
        form: MeanForm::Estimated {
            grid: mc.grid.clone(),
            mean,
            variance,
            std_error,
            durations_sorted: durations,
        },
        lambda_star: law.lambda_star(),
    })
}

fn interp(grid: &[f64], values: &[f64], t: f64) -> f64 {
    if t <= grid[0] {
        return if t < 0.0 { 0.0 } else { values[0] };
    }
    let last = grid.len() - 1;
    if t >= grid[last] {
        // Beyond the estimation grid the curve is unknown; treat as zero
        // (grids are chosen to cover the support).
        return if t > grid[last] { 0.0 } else { values[last] };
    }
    let i = grid.partition_point(|&x| x <= t) - 1;
    let w = (t - grid[i]) / (grid[i + 1] - grid[i]);
    values[i] * (1.0 - w) + values[i + 1] * w
}

impl MeanInfectivity {
    /// λ̄(t) = E λ(t).
    pub fn mean(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match &self.form {
            MeanForm::Closed { scale, duration } => scale.value(t) * duration.survival(t),
            MeanForm::Estimated { grid, mean, .. } => interp(grid, mean, t).max(0.0),
        }
    }

    /// v(t) = Var λ(t).
    pub fn variance(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match &self.form {
            MeanForm::Closed { scale, duration } => {
                let fc = duration.survival(t);
                scale.value(t).powi(2) * fc * (1.0 - fc)
            }
            MeanForm::Estimated { grid, variance, .. } => interp(grid, variance, t).max(0.0),
        }
    }

    /// Reported standard errors of the mean estimate (None for closed forms).
    pub fn std_error(&self, t: f64) -> Option<f64> {
        match &self.form {
            MeanForm::Closed { .. } => None,
            MeanForm::Estimated {
                grid, std_error, ..
            } => Some(interp(grid, std_error, t)),
        }
    }

    /// F(t) = P(duration ≤ t).
    pub fn duration_cdf(&self, t: f64) -> f64 {
        match &self.form {
            MeanForm::Closed { duration, .. } => duration.cdf(t),
            MeanForm::Estimated {
                durations_sorted, ..
            } => {
                let n = durations_sorted.len();
                durations_sorted.partition_point(|&e| e <= t) as f64 / n as f64
            }
        }
    }

    /// F^c(t).
    pub fn duration_survival(&self, t: f64) -> f64 {
        1.0 - self.duration_cdf(t)
    }

    /// G^c(t) = F^c(t-).
    pub fn duration_survival_left(&self, t: f64) -> f64 {
        match &self.form {
            MeanForm::Closed { duration, .. } => duration.survival_left(t),
            MeanForm::Estimated {
                durations_sorted, ..
            } => {
                let n = durations_sorted.len();
                (n - durations_sorted.partition_point(|&e| e < t)) as f64 / n as f64
            }
        }
    }

    /// Atoms of the duration measure (declared by the law, not detected).
    pub fn duration_atoms(&self) -> Vec<(f64, f64)> {
        match &self.form {
            MeanForm::Closed { duration, .. } => duration.atoms(),
            MeanForm::Estimated { .. } => Vec::new(),
        }
    }

    pub fn is_absolutely_continuous(&self) -> bool {
        match &self.form {
            MeanForm::Closed { duration, .. } => duration.is_absolutely_continuous(),
            MeanForm::Estimated { .. } => false,
        }
    }

    /// Hazard of the duration law, where absolutely continuous.
    pub fn duration_hazard(&self, t: f64) -> Option<f64> {
        match &self.form {
            MeanForm::Closed { duration, .. } => duration.hazard(t),
            MeanForm::Estimated { .. } => None,
        }
    }

    pub fn lambda_star(&self) -> f64 {
        self.lambda_star
    }

    /// The deterministic factor when the law is shape·1_{t<η}; None for
    /// genuinely random profiles.
    pub fn shape_factor(&self) -> Option<ScaleFn> {
        match &self.form {
            MeanForm::Closed { scale, .. } => Some(*scale),
            MeanForm::Estimated { .. } => None,
        }
    }

    /// Smooth factor of λ̄ plus the support cutoff beyond which λ̄ ≡ 0.
    /// λ̄(t) = smooth(t)·1_{t<cutoff}; the smooth part is continuous, so
    /// quadratures can integrate it up to the cutoff without losing order.
    pub fn mean_smooth(&self, t: f64) -> f64 {
        match &self.form {
            MeanForm::Closed { scale, duration } => scale.value(t) * duration.survival_smooth(t),
            MeanForm::Estimated { .. } => self.mean(t),
        }
    }

    pub fn mean_cutoff(&self) -> Option<f64> {
        match &self.form {
            MeanForm::Closed { duration, .. } => duration.support_end(),
            MeanForm::Estimated { grid, .. } => grid.last().copied(),
        }
    }

    /// Same decomposition for F^c.
    pub fn survival_smooth(&self, t: f64) -> f64 {
        match &self.form {
            MeanForm::Closed { duration, .. } => duration.survival_smooth(t),
            MeanForm::Estimated { .. } => self.duration_survival(t),
        }
    }

    pub fn survival_cutoff(&self) -> Option<f64> {
        match &self.form {
            MeanForm::Closed { duration, .. } => duration.support_end(),
            MeanForm::Estimated { .. } => None,
        }
    }

    /// P(remaining duration > t | current age) = F^c(t+age)/F^c(age), with
    /// the convention that the ratio is zero outside the support.
    pub fn remaining_survival(&self, age: f64, t: f64) -> f64 {
        let denom = self.duration_survival(age);
        if denom == 0.0 {
            return 0.0;
        }
        self.duration_survival(age + t) / denom
    }

    /// R0 = ∫ λ̄(t) dt.
    pub fn reproduction_number(&self) -> f64 {
        match &self.form {
            MeanForm::Closed {
                scale: ScaleFn::Level(level),
                duration,
            } => level * duration.mean(),
            MeanForm::Closed {
                scale: ScaleFn::Curve(shape),
                duration,
            } => {
                // Composite Simpson over the effective support.
                let upper = duration.support_end().unwrap_or_else(|| {
                    let mut u = 1.0;
                    while shape.max_value() * duration.survival(u) > 1e-14 && u < 1e6 {
                        u *= 2.0;
                    }
                    u
                });
                let n = 20_000;
                let h = upper / n as f64;
                let f = |t: f64| shape.value(t) * duration.survival(t);
                let mut acc = f(0.0) + f(upper);
                for i in 1..n {
                    let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                    acc += w * f(i as f64 * h);
                }
                acc * h / 3.0
            }
            MeanForm::Estimated { grid, mean, .. } => {
                let mut acc = 0.0;
                for i in 1..grid.len() {
                    acc += 0.5 * (mean[i] + mean[i - 1]) * (grid[i] - grid[i - 1]);
                }
                acc
            }
        }
    }
}

/// Conditional remaining-duration survival given the current infection age.
pub fn remaining_duration_survival(m: &MeanInfectivity, age: f64, t: f64) -> f64 {
    m.remaining_survival(age, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn cud(level: f64, duration: DurationLaw) -> InfectivityLaw {
        InfectivityLaw::new(LawKind::ConstantUntilDeath { level, duration }).unwrap()
    }

    #[test]
    fn constant_until_death_path() {
        let law = cud(1.0, DurationLaw::Exponential { rate: 1.0 });
        let path = law.sample_path(&mut rng(7));
        let eta = path.duration();
        assert!(eta > 0.0);
        assert_eq!(path.value(0.0), 1.0);
        assert_eq!(path.value(0.5 * eta), 1.0);
        assert_eq!(path.value(eta), 0.0);
        assert_eq!(path.value(-0.1), 0.0);
    }

    #[test]
    fn zero_shape_path_is_zero() {
        let law = InfectivityLaw::new(LawKind::DeterministicShape {
            shape: Shape::Constant { level: 0.0 },
            duration: DurationLaw::Exponential { rate: 1.0 },
        })
        .unwrap();
        let path = law.sample_path(&mut rng(1));
        assert_eq!(path.duration(), 0.0);
        for i in 0..100 {
            assert_eq!(path.value(i as f64 * 0.1), 0.0);
        }
    }

    #[test]
    fn two_piece_fixed_breakpoints() {
        let (a, b) = (0.4, 0.9);
        let law = InfectivityLaw::new(LawKind::PiecewiseRandom {
            pieces: vec![
                PieceGenerator::Fixed { level: a },
                PieceGenerator::Fixed { level: b },
            ],
            gaps: vec![
                DurationLaw::Fixed { value: 1.0 },
                DurationLaw::Fixed { value: 1.0 },
            ],
        })
        .unwrap();
        let path = law.sample_path(&mut rng(3));
        assert_eq!(path.duration(), 2.0);
        assert_eq!(path.value(0.5), a);
        assert_eq!(path.value(1.0), b); // right-continuous at the breakpoint
        assert_eq!(path.value(1.5), b);
        assert_eq!(path.value(2.0), 0.0);
        let jumps = path.level_jumps().unwrap();
        assert_eq!(jumps, vec![(0.0, a), (1.0, b - a), (2.0, -b)]);
    }

    #[test]
    fn paths_bounded_and_zero_after_duration() {
        let laws = [
            cud(0.7, DurationLaw::Uniform { lo: 0.5, hi: 2.0 }),
            InfectivityLaw::new(LawKind::DeterministicShape {
                shape: Shape::Hump {
                    scale: 2.0,
                    width: 1.5,
                },
                duration: DurationLaw::Exponential { rate: 0.8 },
            })
            .unwrap(),
            InfectivityLaw::new(LawKind::PiecewiseRandom {
                pieces: vec![
                    PieceGenerator::UniformLevel { lo: 0.0, hi: 1.0 },
                    PieceGenerator::Fixed { level: 0.0 },
                    PieceGenerator::UniformLevel { lo: 0.2, hi: 0.4 },
                ],
                gaps: vec![
                    DurationLaw::Exponential { rate: 2.0 },
                    DurationLaw::Uniform { lo: 0.0, hi: 1.0 },
                    DurationLaw::Fixed { value: 0.5 },
                ],
            })
            .unwrap(),
        ];
        for (i, law) in laws.iter().enumerate() {
            let mut r = rng(100 + i as u64);
            for _ in 0..200 {
                let path = law.sample_path(&mut r);
                let eta = path.duration();
                for j in 0..=400 {
                    let t = j as f64 * 0.02;
                    let v = path.value(t);
                    assert!(v >= 0.0 && v <= law.lambda_star() + 1e-12);
                    if t >= eta {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn same_seed_same_path_different_seed_differs() {
        let law = cud(1.0, DurationLaw::Exponential { rate: 1.0 });
        let p1 = law.sample_path(&mut rng(42));
        let p2 = law.sample_path(&mut rng(42));
        let p3 = law.sample_path(&mut rng(43));
        assert_eq!(p1, p2);
        assert!(p1.duration() != p3.duration());
    }

    #[test]
    fn closed_form_mean_exponential() {
        let mu = 0.7;
        let c = 1.3;
        let law = cud(c, DurationLaw::Exponential { rate: mu });
        let m = mean_infectivity(&law, None).unwrap();
        for i in 0..50 {
            let t = i as f64 * 0.1;
            assert!((m.mean(t) - c * (-mu * t).exp()).abs() < 1e-12);
            assert!((m.duration_cdf(t) - (1.0 - (-mu * t).exp())).abs() < 1e-12);
            let fc = (-mu * t).exp();
            assert!((m.variance(t) - c * c * fc * (1.0 - fc)).abs() < 1e-12);
        }
        assert!((m.reproduction_number() - c / mu).abs() < 1e-12);
    }

    #[test]
    fn deterministic_periods_mean_and_cdfs() {
        let ti = 2.0;
        let shape = Shape::Hump {
            scale: 1.0,
            width: 1.0,
        };
        let law = InfectivityLaw::new(LawKind::DeterministicShape {
            shape,
            duration: DurationLaw::Fixed { value: ti },
        })
        .unwrap();
        let m = mean_infectivity(&law, None).unwrap();
        assert!((m.mean(1.0) - shape.value(1.0)).abs() < 1e-12);
        assert_eq!(m.mean(ti), 0.0); // λ̄(t) = λ̃(t)·1_{t<ti}
        assert_eq!(m.duration_cdf(ti), 1.0);
        assert_eq!(m.duration_cdf(ti - 1e-9), 0.0);
        // G rises strictly after ti: G^c(ti) = 1 while F^c(ti) = 0, and the
        // gap equals the atom mass.
        assert_eq!(m.duration_survival_left(ti), 1.0);
        assert_eq!(m.duration_survival(ti), 0.0);
        let atoms = m.duration_atoms();
        assert_eq!(atoms.len(), 1);
        assert!((m.duration_survival_left(ti) - m.duration_survival(ti) - atoms[0].1).abs() == 0.0);
    }

    #[test]
    fn monte_carlo_matches_brute_force() {
        let law = InfectivityLaw::new(LawKind::PiecewiseRandom {
            pieces: vec![
                PieceGenerator::UniformLevel { lo: 0.2, hi: 1.0 },
                PieceGenerator::UniformLevel { lo: 0.0, hi: 0.5 },
            ],
            gaps: vec![
                DurationLaw::Exponential { rate: 1.0 },
                DurationLaw::Uniform { lo: 0.5, hi: 1.5 },
            ],
        })
        .unwrap();
        let grid = vec![0.25, 0.75, 1.25, 1.75, 2.5];
        let mc = McOptions {
            grid: grid.clone(),
            target_se: 4e-3,
            sample_cap: 200_000,
            seed: 11,
        };
        let m = mean_infectivity(&law, Some(&mc)).unwrap();

        // Independent brute-force oracle with its own stream.
        let mut r = rng(987);
        let n = 1_000_000usize;
        let mut sums = vec![0.0; grid.len()];
        let mut sq = vec![0.0; grid.len()];
        for _ in 0..n {
            let p = law.sample_path(&mut r);
            for (j, &t) in grid.iter().enumerate() {
                let v = p.value(t);
                sums[j] += v;
                sq[j] += v * v;
            }
        }
        for (j, &t) in grid.iter().enumerate() {
            let oracle_mean = sums[j] / n as f64;
            let oracle_var = sq[j] / n as f64 - oracle_mean * oracle_mean;
            let oracle_se = (oracle_var / n as f64).sqrt();
            let se = m.std_error(t).unwrap().hypot(oracle_se);
            assert!(
                (m.mean(t) - oracle_mean).abs() <= 3.0 * se,
                "t={t}: {} vs {} (3se={})",
                m.mean(t),
                oracle_mean,
                3.0 * se
            );
        }
    }

    #[test]
    fn mc_budget_error_when_target_unreachable() {
        let law = InfectivityLaw::new(LawKind::PiecewiseRandom {
            pieces: vec![PieceGenerator::UniformLevel { lo: 0.0, hi: 1.0 }],
            gaps: vec![DurationLaw::Exponential { rate: 0.2 }],
        })
        .unwrap();
        let mc = McOptions {
            grid: vec![0.5],
            target_se: 1e-6,
            sample_cap: 4096,
            seed: 0,
        };
        match mean_infectivity(&law, Some(&mc)) {
            Err(Error::EstimationBudgetExceeded { .. }) => {}
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn empirical_mean_consistent_with_summary() {
        // Empirical mean of 1e4 paths at 10 grid times within 4 λ*/√n.
        let law = InfectivityLaw::new(LawKind::DeterministicShape {
            shape: Shape::Hump {
                scale: 1.5,
                width: 1.0,
            },
            duration: DurationLaw::Exponential { rate: 0.5 },
        })
        .unwrap();
        let m = mean_infectivity(&law, None).unwrap();
        let n = 10_000usize;
        let times: Vec<f64> = (0..10).map(|i| 0.3 * i as f64).collect();
        let mut sums = vec![0.0; times.len()];
        let mut r = rng(5);
        for _ in 0..n {
            let p = law.sample_path(&mut r);
            for (j, &t) in times.iter().enumerate() {
                sums[j] += p.value(t);
            }
        }
        let tol = 4.0 * law.lambda_star() / (n as f64).sqrt();
        for (j, &t) in times.iter().enumerate() {
            assert!(
                (sums[j] / n as f64 - m.mean(t)).abs() < tol,
                "t={t}: {} vs {}",
                sums[j] / n as f64,
                m.mean(t)
            );
        }
    }

    #[test]
    fn empirical_duration_cdf_within_dkw_band() {
        let law = cud(1.0, DurationLaw::Uniform { lo: 0.2, hi: 1.7 });
        let m = mean_infectivity(&law, None).unwrap();
        let n = 10_000usize;
        let mut durations: Vec<f64> = Vec::with_capacity(n);
        let mut r = rng(21);
        for _ in 0..n {
            durations.push(law.sample_path(&mut r).duration());
        }
        durations.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // DKW band at level 0.99.
        let eps = ((2.0f64 / 0.01).ln() / (2.0 * n as f64)).sqrt();
        let mut sup = 0.0f64;
        for (i, &d) in durations.iter().enumerate() {
            let f = m.duration_cdf(d);
            sup = sup.max((f - i as f64 / n as f64).abs());
            sup = sup.max((f - (i + 1) as f64 / n as f64).abs());
        }
        assert!(sup <= eps, "sup |F̂ - F| = {sup} > DKW bound {eps}");
    }

    #[test]
    fn remaining_survival_conventions() {
        // Exponential: memoryless.
        let mu = 0.9;
        let m = mean_infectivity(&cud(1.0, DurationLaw::Exponential { rate: mu }), None).unwrap();
        assert!((m.remaining_survival(2.0, 3.0) - (-3.0 * mu).exp()).abs() < 1e-12);

        // Deterministic period: survives exactly while t < ti - age.
        let ti = 2.0;
        let md = mean_infectivity(&cud(1.0, DurationLaw::Fixed { value: ti }), None).unwrap();
        let age = 0.5;
        assert_eq!(md.remaining_survival(age, ti - age - 1e-9), 1.0);
        assert_eq!(md.remaining_survival(age, ti - age), 0.0);

        // Outside the support the ratio is zero by convention.
        assert_eq!(md.remaining_survival(ti + 1.0, 0.5), 0.0);
    }

    #[test]
    fn conditional_sampling_respects_age() {
        let law = cud(1.0, DurationLaw::Exponential { rate: 1.0 });
        let mut r = rng(9);
        for _ in 0..500 {
            let p = law.sample_path_conditional(1.5, 1_000_000, &mut r).unwrap();
            assert!(p.duration() > 1.5);
        }
        // Impossible conditioning errors out.
        let fixed = cud(1.0, DurationLaw::Fixed { value: 1.0 });
        match fixed.sample_path_conditional(2.0, 1000, &mut r) {
            Err(Error::PathConditioning { .. }) => {}
            other => panic!("expected conditioning failure, got {other:?}"),
        }
    }

    #[test]
    fn modulus_bounds_piece_increments() {
        let shape = Shape::Hump {
            scale: 2.0,
            width: 0.7,
        };
        let law = InfectivityLaw::new(LawKind::DeterministicShape {
            shape,
            duration: DurationLaw::Fixed { value: 5.0 },
        })
        .unwrap();
        for i in 0..500 {
            let t = i as f64 * 0.01;
            let s = t + 0.01;
            assert!((shape.value(t) - shape.value(s)).abs() <= law.modulus(0.01) + 1e-12);
        }
    }
}
