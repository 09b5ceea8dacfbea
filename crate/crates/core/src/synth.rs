//! Drifting first-order Markov corpora with known drift speed.
//!
//! At calendar time `s` (years since the first period) tokens follow
//! `P(s) = (1 − w(s))·P_base + w(s)·P_alt` with `w(s) = 1 − e^(−ρ·s)`.
//! Tokens are rendered as `w017`-style pseudo-words.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, DocumentKind, PeriodId};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("matrix is not square: row {row} has {len} entries for {size} states")]
    NotSquare { row: usize, len: usize, size: usize },
    #[error("row {row} is not a probability distribution")]
    NotStochastic { row: usize },
    #[error("base and alternate matrices differ in size ({0} vs {1})")]
    SizeMismatch(usize, usize),
    #[error("drift speed must be non-negative, got {0}")]
    NegativeDrift(f64),
    #[error("invalid generator setting: {0}")]
    Invalid(String),
}

/// Dense row-stochastic matrix.
pub type Matrix = Vec<Vec<f64>>;

pub fn validate_stochastic(m: &[Vec<f64>]) -> Result<(), SynthError> {
    for (row, r) in m.iter().enumerate() {
        if r.len() != m.len() {
            return Err(SynthError::NotSquare {
                row,
                len: r.len(),
                size: m.len(),
            });
        }
        let sum: f64 = r.iter().sum();
        if r.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(SynthError::NotStochastic { row });
        }
    }
    Ok(())
}

/// Mixing schedule `w(s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// `w(s) = 1 − e^(−ρ·s)`
    Saturating { rho: f64 },
    Constant { w: f64 },
}

impl Schedule {
    pub fn weight(&self, s: f64) -> f64 {
        match *self {
            Schedule::Saturating { rho } => -(-rho * s).exp_m1(),
            Schedule::Constant { w } => w,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftProcess {
    pub base: Matrix,
    pub alt: Matrix,
    pub schedule: Schedule,
    /// Seed of the token sampler.
    pub seed: u64,
}

/// Shape of randomly generated transition matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomChain {
    pub vocab_size: usize,
    /// Successors per state.
    pub branching: usize,
    /// Fraction of each row's successors replaced in the alternate matrix.
    pub shift_fraction: f64,
    /// Seed of the matrix structure, independent of the sampler seed.
    pub structure_seed: u64,
}

impl Default for RandomChain {
    fn default() -> Self {
        Self {
            vocab_size: 200,
            branching: 8,
            shift_fraction: 0.5,
            structure_seed: 7,
        }
    }
}

impl RandomChain {
    /// Base and alternate matrices: sparse rows with random weights, the
    /// alternate moving part of each row's mass to fresh successors.
    pub fn matrices(&self) -> Result<(Matrix, Matrix), SynthError> {
        let v = self.vocab_size;
        if v < 2 || self.branching == 0 || self.branching * 2 > v {
            return Err(SynthError::Invalid(format!(
                "vocab {v} with branching {} is not supported",
                self.branching
            )));
        }
        if !(0.0..=1.0).contains(&self.shift_fraction) {
            return Err(SynthError::Invalid("shift fraction must lie in [0, 1]".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.structure_seed);
        let k = self.branching;
        let shifted = (self.shift_fraction * k as f64).round() as usize;
        let mut base = vec![vec![0.0; v]; v];
        let mut alt = vec![vec![0.0; v]; v];
        for i in 0..v {
            let picks = rand::seq::index::sample(&mut rng, v, 2 * k).into_vec();
            // state i+1 is always reachable so the chain is irreducible
            let mut succ_base: Vec<usize> = picks[..k].to_vec();
            succ_base[0] = (i + 1) % v;
            let mut succ_alt = succ_base.clone();
            for (slot, &fresh) in succ_alt.iter_mut().skip(k - shifted).zip(&picks[k..]) {
                *slot = fresh;
            }
            if shifted == k {
                succ_alt[0] = (i + 1) % v;
            }
            for (succ, row) in [(&succ_base, &mut base[i]), (&succ_alt, &mut alt[i])] {
                let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
                let total: f64 = weights.iter().sum();
                for (&j, w) in succ.iter().zip(weights) {
                    row[j] += w / total;
                }
            }
        }
        Ok((base, alt))
    }
}

impl DriftProcess {
    pub fn new(base: Matrix, alt: Matrix, schedule: Schedule, seed: u64) -> Result<Self, SynthError> {
        validate_stochastic(&base)?;
        validate_stochastic(&alt)?;
        if base.len() != alt.len() {
            return Err(SynthError::SizeMismatch(base.len(), alt.len()));
        }
        if let Schedule::Saturating { rho } = schedule {
            if rho < 0.0 {
                return Err(SynthError::NegativeDrift(rho));
            }
        }
        if let Schedule::Constant { w } = schedule {
            if !(0.0..=1.0).contains(&w) {
                return Err(SynthError::Invalid(format!("mixing weight {w} outside [0, 1]")));
            }
        }
        Ok(Self {
            base,
            alt,
            schedule,
            seed,
        })
    }

    /// Random chain drifting at `rho` per year.
    pub fn random(chain: &RandomChain, rho: f64, seed: u64) -> Result<Self, SynthError> {
        let (base, alt) = chain.matrices()?;
        Self::new(base, alt, Schedule::Saturating { rho }, seed)
    }

    pub fn vocab_size(&self) -> usize {
        self.base.len()
    }

    pub fn matrix_at(&self, s: f64) -> Matrix {
        let w = self.schedule.weight(s);
        self.base
            .iter()
            .zip(&self.alt)
            .map(|(b, a)| b.iter().zip(a).map(|(x, y)| (1.0 - w) * x + w * y).collect())
            .collect()
    }
}

pub fn token_name(state: usize) -> String {
    format!("w{state:03}")
}

/// Per-row samplers over nonzero entries.
struct RowSamplers {
    successors: Vec<Vec<usize>>,
    dists: Vec<WeightedIndex<f64>>,
}

impl RowSamplers {
    fn new(m: &[Vec<f64>]) -> Self {
        let mut successors = Vec::with_capacity(m.len());
        let mut dists = Vec::with_capacity(m.len());
        for row in m {
            let (idx, w): (Vec<usize>, Vec<f64>) = row
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(j, &p)| (j, p))
                .unzip();
            successors.push(idx);
            dists.push(WeightedIndex::new(w).expect("validated stochastic row"));
        }
        Self { successors, dists }
    }

    fn step(&self, state: usize, rng: &mut impl Rng) -> usize {
        self.successors[state][self.dists[state].sample(rng)]
    }
}

/// Settings of a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub topic: String,
    pub periods: Vec<PeriodId>,
    pub words_per_period: usize,
    pub words_per_document: usize,
}

/// Documents for every period, sampled from `P(s)` at the period midpoint
/// `s = (k + 0.5)/12` years, `k` months after the first period.
pub fn generate_corpus(process: &DriftProcess, spec: &CorpusSpec) -> Vec<Document> {
    let base = RowSamplers::new(&process.base);
    let alt = RowSamplers::new(&process.alt);
    let v = process.vocab_size();
    let Some(&first) = spec.periods.first() else {
        return Vec::new();
    };
    let per_doc = spec.words_per_document.max(1);
    let mut docs = Vec::new();
    for (pi, &period) in spec.periods.iter().enumerate() {
        let k = first.months_until(period);
        let w = process.schedule.weight((k as f64 + 0.5) / 12.0);
        let mut rng = ChaCha8Rng::seed_from_u64(process.seed);
        rng.set_stream(pi as u64);
        let n_docs = spec.words_per_period.div_ceil(per_doc);
        let span = period.seconds_in_month();
        let mut remaining = spec.words_per_period;
        for d in 0..n_docs {
            let len = remaining.min(per_doc);
            remaining -= len;
            let mut state = rng.random_range(0..v);
            let mut text = String::with_capacity(len * 5);
            for i in 0..len {
                if i > 0 {
                    text.push(' ');
                }
                text.push_str(&token_name(state));
                state = if rng.random::<f64>() < w {
                    alt.step(state, &mut rng)
                } else {
                    base.step(state, &mut rng)
                };
            }
            docs.push(Document {
                id: format!("{}-{period}-{d:06}", spec.topic),
                topic: spec.topic.clone(),
                timestamp: period.start_timestamp() + (d as i64 * span) / n_docs as i64,
                kind: DocumentKind::Post,
                score: 1,
                text,
                parent_id: None,
            });
        }
    }
    docs
}

/// Stationary distribution by power iteration on the lazy chain `(P + I)/2`.
pub fn stationary_distribution(m: &[Vec<f64>]) -> Vec<f64> {
    let v = m.len();
    let mut pi = vec![1.0 / v as f64; v];
    for _ in 0..1_000_000 {
        let mut next: Vec<f64> = pi.iter().map(|x| 0.5 * x).collect();
        for (i, row) in m.iter().enumerate() {
            let half = 0.5 * pi[i];
            for (j, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    next[j] += half * p;
                }
            }
        }
        let diff: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if diff < 1e-12 {
            break;
        }
    }
    pi
}

fn is_irreducible(m: &[Vec<f64>]) -> bool {
    let reach = |forward: bool| {
        let mut seen = vec![false; m.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..m.len() {
                let edge = if forward { m[i][j] } else { m[j][i] };
                if edge > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    m.is_empty() || (reach(true) && reach(false))
}

/// `H = −Σ_i π_i Σ_j P_ij ln P_ij` in nats per token.
pub fn entropy_rate(m: &[Vec<f64>]) -> f64 {
    if !is_irreducible(m) {
        log::warn!("chain is reducible; entropy rate uses the stationary mass reached from uniform start");
    }
    let pi = stationary_distribution(m);
    m.iter()
        .zip(&pi)
        .map(|(row, &p)| {
            let h: f64 = row.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum();
            p * h
        })
        .sum()
}
