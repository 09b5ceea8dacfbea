//! Equivalent-size models for mixed-age datasets.
//!
//! Ages are measured in years back from the prediction time, so age 0 is
//! fresh data. A dataset of size `n` is described by a [`SamplingDensity`]
//! over ages. Its equivalent size depends on the model:
//!
//! * pure exponential: stale data counts as a discounted amount of fresh
//!   data, `n·∫ λ(s)·e^(−μs) ds`;
//! * drift shift: the loss offset is averaged, `d̄ = ∫ λ(s)·d(s) ds`, and
//!   `n̄ = n·(1 + d̄·n^b/a)^(−1/b)`.
//!
//! The equivalent time `t*` is the single age whose i.i.d. data of the same
//! size gives that equivalent size.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::GaussLegendre;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;

/// Margin applied to strict inequalities.
pub const STRICT_MARGIN: f64 = 1e-12;
const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("sampling density has no bins")]
    EmptyDensity,
    #[error("bin {index} is invalid: {reason}")]
    InvalidBin { index: usize, reason: String },
    #[error("distribution {index} has support {got}, expected {expected}")]
    SupportMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("got {got} per-bin distributions for {bins} bins")]
    BinCountMismatch { bins: usize, got: usize },
    #[error("distribution {index} is not a probability vector")]
    InvalidDistribution { index: usize },
    #[error("removed mass {n0} must be below dataset size {n}")]
    RemovedTooMuch { n: f64, n0: f64 },
    #[error("size must be positive, got {0}")]
    NonPositiveSize(f64),
    #[error("target equivalent size {target} outside [{low}, {high}]")]
    InconsistentTarget { target: f64, low: f64, high: f64 },
    #[error("models are not ordered by perishability: {0}")]
    NotOrdered(String),
}

/// Drift term `d(age)` of the drift-shift model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftFn {
    Linear { slope: f64 },
    Power { scale: f64, exponent: f64 },
    Constant { value: f64 },
}

impl DriftFn {
    pub fn eval(&self, age: f64) -> f64 {
        match *self {
            DriftFn::Linear { slope } => slope * age,
            DriftFn::Power { scale, exponent } => scale * age.powf(exponent),
            DriftFn::Constant { value } => value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EquivalenceModel {
    /// `n̄ = n·e^(−μ·age)`
    PureExponential { mu: f64 },
    /// Cross-period loss `a·n^(−b) + c + d(age)` mapped back through the
    /// native curve: `n̄ = n·(1 + d(age)·n^b/a)^(−1/b)`.
    DriftShift { a: f64, b: f64, drift: DriftFn },
}

impl EquivalenceModel {
    pub fn exponential(mu: f64) -> Self {
        Self::PureExponential { mu }
    }

    pub fn drift_linear(a: f64, b: f64, slope: f64) -> Self {
        Self::DriftShift {
            a,
            b,
            drift: DriftFn::Linear { slope },
        }
    }

    /// `n̄(n, age) / n`.
    pub fn effectiveness(&self, n: f64, age: f64) -> f64 {
        match *self {
            EquivalenceModel::PureExponential { mu } => (-mu * age).exp(),
            EquivalenceModel::DriftShift { a, b, drift } => {
                let d = drift.eval(age);
                (-(d * n.powf(b) / a).ln_1p() / b).exp()
            }
        }
    }
}

pub fn equivalent_size(model: &EquivalenceModel, n: f64, age: f64) -> f64 {
    n * model.effectiveness(n, age)
}

/// `f_n(t1, t2) = n̄(n, t1) / n̄(n, t2)`.
pub fn substitution(model: &EquivalenceModel, n: f64, t1: f64, t2: f64) -> f64 {
    model.effectiveness(n, t1) / model.effectiveness(n, t2)
}

/// `lim n→∞ n̄(n, age)`; infinite when the model has no ceiling.
pub fn upper_bound(model: &EquivalenceModel, age: f64) -> f64 {
    match *model {
        EquivalenceModel::PureExponential { .. } => f64::INFINITY,
        EquivalenceModel::DriftShift { a, b, drift } => {
            let d = drift.eval(age);
            if d <= 0.0 {
                f64::INFINITY
            } else {
                (d / a).powf(-1.0 / b)
            }
        }
    }
}

/// Piece of a sampling density. `start == end` is a point mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityBin {
    pub start: f64,
    pub end: f64,
    pub mass: f64,
}

/// Piecewise-constant density over ages, bins sorted from fresh to old.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingDensity {
    bins: Vec<DensityBin>,
}

impl SamplingDensity {
    /// Build from `(start, end, weight)` triples; weights are normalized.
    pub fn from_bins(raw: &[(f64, f64, f64)]) -> Result<Self, TheoryError> {
        if raw.is_empty() {
            return Err(TheoryError::EmptyDensity);
        }
        for (index, &(s, e, w)) in raw.iter().enumerate() {
            let reason = if !(s.is_finite() && e.is_finite() && w.is_finite()) {
                Some("non-finite value")
            } else if s < 0.0 {
                Some("negative age")
            } else if e < s {
                Some("end precedes start")
            } else if w < 0.0 {
                Some("negative weight")
            } else {
                None
            };
            if let Some(r) = reason {
                return Err(TheoryError::InvalidBin {
                    index,
                    reason: r.into(),
                });
            }
        }
        let total: f64 = raw.iter().map(|b| b.2).sum();
        if total <= 0.0 {
            return Err(TheoryError::EmptyDensity);
        }
        let mut bins: Vec<DensityBin> = raw
            .iter()
            .map(|&(start, end, w)| DensityBin {
                start,
                end,
                mass: w / total,
            })
            .collect();
        bins.sort_by(|x, y| x.start.total_cmp(&y.start).then(x.end.total_cmp(&y.end)));
        Ok(Self { bins })
    }

    pub fn point(age: f64) -> Result<Self, TheoryError> {
        Self::from_bins(&[(age, age, 1.0)])
    }

    /// Uniform over `[0, t]` as a single bin.
    pub fn uniform(t: f64) -> Result<Self, TheoryError> {
        Self::from_bins(&[(0.0, t, 1.0)])
    }

    /// Consecutive bins of `width` years starting at age 0.
    pub fn regular(width: f64, weights: &[f64]) -> Result<Self, TheoryError> {
        let raw: Vec<_> = weights
            .iter()
            .enumerate()
            .map(|(k, &w)| (k as f64 * width, (k + 1) as f64 * width, w))
            .collect();
        Self::from_bins(&raw)
    }

    /// Monthly bins, freshest first.
    pub fn monthly(weights: &[f64]) -> Result<Self, TheoryError> {
        Self::regular(1.0 / 12.0, weights)
    }

    pub fn bins(&self) -> &[DensityBin] {
        &self.bins
    }

    /// Oldest age covered.
    pub fn window(&self) -> f64 {
        self.bins.iter().map(|b| b.end).fold(0.0, f64::max)
    }

    pub fn total_mass(&self) -> f64 {
        self.bins.iter().map(|b| b.mass).sum()
    }

    /// `∫ λ(s)·g(s) ds`.
    pub fn integrate(&self, mut g: impl FnMut(f64) -> f64) -> f64 {
        self.bins
            .iter()
            .map(|b| {
                if b.end == b.start {
                    b.mass * g(b.start)
                } else {
                    b.mass * bin_average(b.start, b.end, &mut g)
                }
            })
            .sum()
    }

    /// Drop the oldest bin and renormalize; `None` if only one bin is left.
    pub fn without_oldest(&self) -> Option<(Self, f64)> {
        if self.bins.len() < 2 {
            return None;
        }
        let (last, rest) = self.bins.split_last()?;
        let keep = 1.0 - last.mass;
        if keep <= 0.0 {
            return None;
        }
        let bins = rest
            .iter()
            .map(|b| DensityBin {
                mass: b.mass / keep,
                ..*b
            })
            .collect();
        Some((Self { bins }, last.mass))
    }
}

fn quadrature() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(NonZeroUsize::new(16).expect("nonzero degree")))
}

/// Mean of `g` over `[a, b]`, composite Gauss-Legendre with pieces of at
/// most a quarter year.
fn bin_average(a: f64, b: f64, g: &mut impl FnMut(f64) -> f64) -> f64 {
    let pieces = ((b - a) / 0.25).ceil().max(1.0) as usize;
    let h = (b - a) / pieces as f64;
    let rule = quadrature();
    let total: f64 = (0..pieces)
        .map(|k| {
            let lo = a + k as f64 * h;
            rule.integrate(lo, lo + h, &mut *g)
        })
        .sum();
    total / (b - a)
}

/// Mixture `Σ_k P_k · mass_k` of per-bin distributions.
pub fn net_distribution(density: &SamplingDensity, per_bin: &[Vec<f64>]) -> Result<Vec<f64>, TheoryError> {
    if per_bin.len() != density.bins.len() {
        return Err(TheoryError::BinCountMismatch {
            bins: density.bins.len(),
            got: per_bin.len(),
        });
    }
    let support = per_bin.first().map(Vec::len).unwrap_or(0);
    let mut out = vec![0.0; support];
    for (index, (p, bin)) in per_bin.iter().zip(&density.bins).enumerate() {
        if p.len() != support {
            return Err(TheoryError::SupportMismatch {
                index,
                expected: support,
                got: p.len(),
            });
        }
        let sum: f64 = p.iter().sum();
        if p.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > MASS_TOLERANCE {
            return Err(TheoryError::InvalidDistribution { index });
        }
        for (o, &x) in out.iter_mut().zip(p) {
            *o += bin.mass * x;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetComposition {
    pub n: f64,
    pub density: SamplingDensity,
    pub equivalent_time: f64,
    pub equivalent_size: f64,
}

pub fn composition_equivalent_size(model: &EquivalenceModel, n: f64, density: &SamplingDensity) -> f64 {
    match *model {
        EquivalenceModel::PureExponential { .. } => n * density.integrate(|s| model.effectiveness(n, s)),
        EquivalenceModel::DriftShift { a, b, drift } => {
            let mean_shift = density.integrate(|s| drift.eval(s));
            n * (-(mean_shift * n.powf(b) / a).ln_1p() / b).exp()
        }
    }
}

/// Age `t*` in `[0, window]` with `n̄(n, t*) = target`, by bisection.
pub fn solve_equivalent_time(
    model: &EquivalenceModel,
    n: f64,
    target: f64,
    window: f64,
) -> Result<f64, TheoryError> {
    let high = n;
    let low = equivalent_size(model, n, window);
    let slack = 1e-12 * n;
    if target > high + slack || target < low - slack {
        return Err(TheoryError::InconsistentTarget { target, low, high });
    }
    if target >= high {
        return Ok(0.0);
    }
    if target <= low {
        return Ok(window);
    }
    let (mut lo, mut hi) = (0.0, window);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if equivalent_size(model, n, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * window.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn equivalent_time(composition: &DatasetComposition, model: &EquivalenceModel) -> Result<f64, TheoryError> {
    solve_equivalent_time(
        model,
        composition.n,
        composition.equivalent_size,
        composition.density.window(),
    )
}

impl DatasetComposition {
    pub fn new(n: f64, density: SamplingDensity, model: &EquivalenceModel) -> Result<Self, TheoryError> {
        if !(n > 0.0) {
            return Err(TheoryError::NonPositiveSize(n));
        }
        let equivalent_size = composition_equivalent_size(model, n, &density);
        let equivalent_time = solve_equivalent_time(model, n, equivalent_size, density.window())?;
        Ok(Self {
            n,
            density,
            equivalent_time,
            equivalent_size,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffloadStep {
    /// Amount of data removed, in the same units as `n`.
    pub removed: f64,
    pub old_t_star: f64,
    pub new_t_star: f64,
    pub admissible: bool,
    pub gain: f64,
}

/// Whether dropping `n0` of `n` items, moving the equivalent time from
/// `t_star` to `t_star2`, pays for the lost volume.
pub fn offload_condition(
    model: &EquivalenceModel,
    n: f64,
    n0: f64,
    t_star: f64,
    t_star2: f64,
) -> Result<OffloadStep, TheoryError> {
    if !(n > 0.0) {
        return Err(TheoryError::NonPositiveSize(n));
    }
    if !(n0 >= 0.0 && n0 < n) {
        return Err(TheoryError::RemovedTooMuch { n, n0 });
    }
    let kept = n - n0;
    let f = substitution(model, kept, t_star2, t_star);
    let threshold = n / kept;
    Ok(OffloadStep {
        removed: n0,
        old_t_star: t_star,
        new_t_star: t_star2,
        admissible: f > threshold + STRICT_MARGIN,
        gain: f * kept / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffloadTrajectory {
    pub steps: Vec<OffloadStep>,
    pub composition: DatasetComposition,
}

/// Drop the oldest bin while doing so is admissible.
pub fn greedy_offload(
    composition: &DatasetComposition,
    model: &EquivalenceModel,
) -> Result<OffloadTrajectory, TheoryError> {
    let mut current = composition.clone();
    let mut steps = Vec::new();
    while let Some((density, mass)) = current.density.without_oldest() {
        let n0 = current.n * mass;
        let next = DatasetComposition::new(current.n - n0, density, model)?;
        let step = offload_condition(model, current.n, n0, current.equivalent_time, next.equivalent_time)?;
        if !step.admissible {
            break;
        }
        steps.push(step);
        current = next;
    }
    Ok(OffloadTrajectory {
        steps,
        composition: current,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderVerdict {
    pub ordered: bool,
    /// First `(n, t1, t2)` where the ordering fails.
    pub counterexample: Option<(f64, f64, f64)>,
}

/// Check `n̄_H(t1) − n̄_H(t2) > n̄_L(t1) − n̄_L(t2)` for every `(t1, t2)`.
pub fn check_perishability_order(
    high: &EquivalenceModel,
    low: &EquivalenceModel,
    n: f64,
    pairs: &[(f64, f64)],
) -> OrderVerdict {
    for &(t1, t2) in pairs {
        let dh = equivalent_size(high, n, t1) - equivalent_size(high, n, t2);
        let dl = equivalent_size(low, n, t1) - equivalent_size(low, n, t2);
        if !(dh - dl > STRICT_MARGIN * n) {
            return OrderVerdict {
                ordered: false,
                counterexample: Some((n, t1, t2)),
            };
        }
    }
    OrderVerdict {
        ordered: true,
        counterexample: None,
    }
}

/// All `(t1 < t2)` pairs from an evenly spaced age grid on `[0, max_age]`.
pub fn age_pairs(max_age: f64, steps: usize) -> Vec<(f64, f64)> {
    let ages: Vec<f64> = (0..=steps).map(|k| max_age * k as f64 / steps as f64).collect();
    let mut out = Vec::new();
    for (i, &t1) in ages.iter().enumerate() {
        for &t2 in &ages[i + 1..] {
            out.push((t1, t2));
        }
    }
    out
}

/// Sampling box and size of a randomized trial run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub trials: usize,
    pub seed: u64,
    pub min_size: f64,
    pub max_size: f64,
    pub max_age: f64,
    /// Smallest age gap sampled for `t1 < t2`.
    pub min_gap: f64,
    /// Grid resolution of the ordering pre-check.
    pub grid_steps: usize,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            seed: 0,
            min_size: 1e3,
            max_size: 1e8,
            max_age: 3.0,
            min_gap: 1.0 / 12.0,
            grid_steps: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub trial: usize,
    pub property: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub trials: usize,
    pub violations: Vec<Violation>,
    /// Trials where the L model admitted an off-load step.
    pub low_admissible: usize,
    /// Trials where the two greedy runs dropped different numbers of bins.
    pub differing_trajectories: usize,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

struct TrialOutcome {
    violations: Vec<Violation>,
    low_admissible: bool,
    differing: bool,
}

/// Randomized check that a more perishable model `high` gains more from
/// fresh data than `low`: larger substitution ratios, admissible off-loads
/// inherited from `low`, and an equivalent time after greedy off-loading no
/// later than that of `low`. Refuses to run unless the pair is ordered on
/// the sampling box.
pub fn offload_ordering_property(
    high: &EquivalenceModel,
    low: &EquivalenceModel,
    cfg: &TrialConfig,
    exec: Execution,
) -> Result<PropertyReport, TheoryError> {
    let pairs = age_pairs(cfg.max_age, cfg.grid_steps);
    for k in 0..=8 {
        let n = cfg.min_size * (cfg.max_size / cfg.min_size).powf(k as f64 / 8.0);
        let verdict = check_perishability_order(high, low, n, &pairs);
        if let Some((n, t1, t2)) = verdict.counterexample {
            return Err(TheoryError::NotOrdered(format!("fails at n = {n}, t1 = {t1}, t2 = {t2}")));
        }
    }
    let outcomes = exec.map_range(cfg.trials, |trial| run_trial(high, low, cfg, trial));
    let mut report = PropertyReport {
        trials: cfg.trials,
        violations: Vec::new(),
        low_admissible: 0,
        differing_trajectories: 0,
    };
    for o in outcomes {
        report.violations.extend(o.violations);
        report.low_admissible += o.low_admissible as usize;
        report.differing_trajectories += o.differing as usize;
    }
    Ok(report)
}

fn run_trial(high: &EquivalenceModel, low: &EquivalenceModel, cfg: &TrialConfig, trial: usize) -> TrialOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(trial as u64);
    let mut violations = Vec::new();
    let mut violate = |property: &str, detail: String| {
        violations.push(Violation {
            trial,
            property: property.into(),
            detail,
        })
    };

    let n = cfg.min_size * (cfg.max_size / cfg.min_size).powf(rng.random::<f64>());
    let t1 = rng.random_range(0.0..cfg.max_age - cfg.min_gap);
    let t2 = rng.random_range(t1 + cfg.min_gap..=cfg.max_age);
    let fh = substitution(high, n, t1, t2);
    let fl = substitution(low, n, t1, t2);
    if !(fh > fl + STRICT_MARGIN) {
        violate("substitution", format!("n={n} t1={t1} t2={t2}: f_H={fh} f_L={fl}"));
    }

    let n0 = n * rng.random_range(0.01..0.9);
    let mut low_admissible = false;
    match (
        offload_condition(high, n, n0, t2, t1),
        offload_condition(low, n, n0, t2, t1),
    ) {
        (Ok(h), Ok(l)) => {
            low_admissible = l.admissible;
            if l.admissible && !h.admissible {
                violate(
                    "admissibility",
                    format!("n={n} n0={n0} t*={t2} t**={t1}: L gain {} but H gain {}", l.gain, h.gain),
                );
            }
        }
        (h, l) => violate("admissibility", format!("evaluation failed: {h:?} / {l:?}")),
    }

    let bins = rng.random_range(2..=8usize);
    let width = cfg.max_age / bins as f64;
    let weights: Vec<f64> = (0..bins).map(|_| rng.random_range(0.05..1.0)).collect();
    let mut differing = false;
    let greedy = SamplingDensity::regular(width, &weights).and_then(|density| {
        let h = greedy_offload(&DatasetComposition::new(n, density.clone(), high)?, high)?;
        let l = greedy_offload(&DatasetComposition::new(n, density, low)?, low)?;
        Ok((h, l))
    });
    match greedy {
        Ok((h, l)) => {
            differing = h.steps.len() != l.steps.len();
            let (th, tl) = (h.composition.equivalent_time, l.composition.equivalent_time);
            if th > tl + 1e-9 * tl.max(1.0) {
                violate(
                    "greedy",
                    format!("n={n} weights={weights:?} width={width}: t*_H={th} > t*_L={tl}"),
                );
            }
        }
        Err(e) => violate("greedy", format!("n={n} weights={weights:?}: {e}")),
    }

    TrialOutcome {
        violations,
        low_admissible,
        differing,
    }
}
