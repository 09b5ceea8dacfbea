//! Exponential decay of effectiveness, half-lives, pairwise decay-rate
//! tests and the exponential-vs-power-law comparison.
//!
//! The decay model is `ln y = −μ·t + u` with `t` in years, fitted by OLS
//! through the origin unless an intercept is requested. Pairwise tests
//! regress `ln y_i − ln y_j = −β·t + ε` on the months both series share.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curves::EffectivenessSeries;
use crate::stats::{simple_ols, StatsError};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DecayError {
    #[error("{context}: need at least {needed} usable points, got {got}")]
    TooFewPoints {
        context: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("p-value {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecayOptions {
    pub intercept: bool,
    /// Clip effectiveness above 1 down to 1 before taking logs.
    pub clip_at_one: bool,
}

impl Default for DecayOptions {
    fn default() -> Self {
        Self {
            intercept: false,
            clip_at_one: true,
        }
    }
}

pub const DEFAULT_HALF_LIFE_CAP: f64 = 100.0;

/// Half-life in years. Censored values keep the raw number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HalfLife {
    Finite { years: f64 },
    Censored { cap: f64, years: f64 },
    Infinite,
}

impl HalfLife {
    pub fn years(&self) -> f64 {
        match *self {
            HalfLife::Finite { years } | HalfLife::Censored { years, .. } => years,
            HalfLife::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for HalfLife {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            HalfLife::Finite { years } => write!(f, "{years:.2}"),
            HalfLife::Censored { cap, years } => write!(f, "{cap}> ({years:.1})"),
            HalfLife::Infinite => write!(f, "∞"),
        }
    }
}

/// `ln 2 / μ`, censored above `cap` years; no decay gives ∞.
pub fn half_life(mu: f64, cap: f64) -> HalfLife {
    if mu <= 0.0 {
        return HalfLife::Infinite;
    }
    let years = std::f64::consts::LN_2 / mu;
    if years > cap {
        HalfLife::Censored { cap, years }
    } else {
        HalfLife::Finite { years }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub topic: String,
    /// Decay rate per year.
    pub mu: f64,
    pub stderr: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub half_life: HalfLife,
    pub n_points: usize,
    /// Points with effectiveness ≤ 0, excluded from the log fit.
    pub dropped_points: usize,
    pub clipped_points: usize,
    pub intercept_used: bool,
    pub intercept: Option<f64>,
    pub r_squared: f64,
}

/// `(t, ln y)` pairs after clipping and dropping; returns (pairs, dropped, clipped).
fn log_points(series: &EffectivenessSeries, clip: bool) -> (Vec<(i64, f64, f64)>, usize, usize) {
    let mut dropped = 0;
    let mut clipped = 0;
    let mut out = Vec::with_capacity(series.points.len());
    for p in &series.points {
        let mut y = p.effectiveness;
        if !(y > 0.0) {
            dropped += 1;
            continue;
        }
        if clip && y > 1.0 {
            y = 1.0;
            clipped += 1;
        }
        out.push((p.months, p.t_years, y.ln()));
    }
    (out, dropped, clipped)
}

pub fn fit_exponential_decay(
    series: &EffectivenessSeries,
    opts: DecayOptions,
) -> Result<DecayFit, DecayError> {
    let (pts, dropped, clipped) = log_points(series, opts.clip_at_one);
    if pts.len() < 3 {
        return Err(DecayError::TooFewPoints {
            context: "exponential decay fit",
            needed: 3,
            got: pts.len(),
        });
    }
    let t: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let ly: Vec<f64> = pts.iter().map(|p| p.2).collect();
    let ols = simple_ols(&t, &ly, opts.intercept)?;
    let mu = -ols.slope;
    Ok(DecayFit {
        topic: series.topic.clone(),
        mu,
        stderr: ols.slope_stderr,
        t_stat: -ols.t_stat,
        p_value: ols.p_value,
        half_life: half_life(mu, DEFAULT_HALF_LIFE_CAP),
        n_points: pts.len(),
        dropped_points: dropped,
        clipped_points: clipped,
        intercept_used: opts.intercept,
        intercept: ols.intercept,
        r_squared: ols.r_squared,
    })
}

/// Significance bands of the pairwise matrix, least to most significant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SignificanceBand {
    /// p ≥ 0.05
    NotSignificant,
    /// p < 0.05
    Level05,
    /// p < 0.01
    Level01,
    /// p < 0.001
    Level001,
}

impl SignificanceBand {
    pub fn code(self) -> u8 {
        self as u8
    }
}

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.05, 0.01, 1e-3];

pub fn significance_band(p: f64) -> Result<SignificanceBand, DecayError> {
    significance_band_with(p, DEFAULT_THRESHOLDS)
}

/// Band for `p` given descending thresholds `[band1, band2, band3]`
/// (strict inequalities).
pub fn significance_band_with(p: f64, thresholds: [f64; 3]) -> Result<SignificanceBand, DecayError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(DecayError::InvalidProbability(p));
    }
    Ok(if p < thresholds[2] {
        SignificanceBand::Level001
    } else if p < thresholds[1] {
        SignificanceBand::Level01
    } else if p < thresholds[0] {
        SignificanceBand::Level05
    } else {
        SignificanceBand::NotSignificant
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseFit {
    pub topic_i: String,
    pub topic_j: String,
    /// Excess decay rate of `i` over `j`, per year.
    pub beta: f64,
    pub stderr: f64,
    pub p_value: f64,
    pub band: SignificanceBand,
    pub n_common_points: usize,
}

pub fn pairwise_decay_difference(
    series_i: &EffectivenessSeries,
    series_j: &EffectivenessSeries,
    opts: DecayOptions,
) -> Result<PairwiseFit, DecayError> {
    pairwise_with_thresholds(series_i, series_j, opts, DEFAULT_THRESHOLDS)
}

pub fn pairwise_with_thresholds(
    series_i: &EffectivenessSeries,
    series_j: &EffectivenessSeries,
    opts: DecayOptions,
    thresholds: [f64; 3],
) -> Result<PairwiseFit, DecayError> {
    let (pi, _, _) = log_points(series_i, opts.clip_at_one);
    let (pj, _, _) = log_points(series_j, opts.clip_at_one);
    let j_by_month: BTreeMap<i64, f64> = pj.iter().map(|p| (p.0, p.2)).collect();
    let mut t = Vec::new();
    let mut d = Vec::new();
    for (months, years, ly) in pi {
        if let Some(lyj) = j_by_month.get(&months) {
            t.push(years);
            d.push(ly - lyj);
        }
    }
    if t.len() < 3 {
        return Err(DecayError::TooFewPoints {
            context: "pairwise test",
            needed: 3,
            got: t.len(),
        });
    }
    let ols = simple_ols(&t, &d, opts.intercept)?;
    Ok(PairwiseFit {
        topic_i: series_i.topic.clone(),
        topic_j: series_j.topic.clone(),
        beta: -ols.slope,
        stderr: ols.slope_stderr,
        p_value: ols.p_value,
        band: significance_band_with(ols.p_value, thresholds)?,
        n_common_points: t.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormVerdict {
    Exponential,
    PowerLaw,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormComparison {
    pub exp_sse: f64,
    pub exp_r2: f64,
    pub pow_sse: f64,
    pub pow_r2: f64,
    pub verdict: FormVerdict,
    /// How Δt = 0 points were treated.
    pub t_zero_handling: String,
    pub exp_points: usize,
    pub pow_points: usize,
}

/// Relative SSE gap below which neither form is preferred.
pub const FORM_MARGIN: f64 = 0.05;

/// Linear fits of `ln y` on `t` (exponential) and on `ln t` (power law).
pub fn compare_functional_forms(
    series: &EffectivenessSeries,
    opts: DecayOptions,
) -> Result<FormComparison, DecayError> {
    let (pts, _, _) = log_points(series, opts.clip_at_one);
    let positive_t: Vec<&(i64, f64, f64)> = pts.iter().filter(|p| p.1 > 0.0).collect();
    if positive_t.len() < 4 {
        return Err(DecayError::TooFewPoints {
            context: "functional-form comparison",
            needed: 4,
            got: positive_t.len(),
        });
    }
    let zero_t = pts.len() - positive_t.len();
    let t: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let ly: Vec<f64> = pts.iter().map(|p| p.2).collect();
    let exp = simple_ols(&t, &ly, true)?;
    let log_t: Vec<f64> = positive_t.iter().map(|p| p.1.ln()).collect();
    let ly_pos: Vec<f64> = positive_t.iter().map(|p| p.2).collect();
    let pow = simple_ols(&log_t, &ly_pos, true)?;

    let smaller = exp.sse.min(pow.sse);
    let verdict = if (exp.sse - pow.sse).abs() <= FORM_MARGIN * smaller {
        FormVerdict::Inconclusive
    } else if exp.sse < pow.sse {
        FormVerdict::Exponential
    } else {
        FormVerdict::PowerLaw
    };
    Ok(FormComparison {
        exp_sse: exp.sse,
        exp_r2: exp.r_squared,
        pow_sse: pow.sse,
        pow_r2: pow.r_squared,
        verdict,
        t_zero_handling: format!(
            "{zero_t} point(s) at t = 0 included in the exponential fit, excluded from the power-law fit"
        ),
        exp_points: pts.len(),
        pow_points: positive_t.len(),
    })
}

pub const DECAY_TABLE_HEADER: &str = "topic,estimate_per_year,half_life_years,stderr,p_value";

/// Per-topic decay table, sorted by |μ| ascending. The estimate column is −μ.
pub fn render_decay_table(fits: &[DecayFit]) -> String {
    let mut sorted: Vec<&DecayFit> = fits.iter().collect();
    sorted.sort_by(|a, b| a.mu.abs().total_cmp(&b.mu.abs()));
    let mut out = String::from(DECAY_TABLE_HEADER);
    out.push('\n');
    for f in sorted {
        let estimate = -f.mu;
        // avoid printing "-0.000"
        let estimate = if estimate.abs() < 5e-4 { 0.0 } else { estimate };
        out.push_str(&format!(
            "{},{:.3},{},{:.2e},{:.3e}\n",
            csv_field(&f.topic),
            estimate,
            f.half_life,
            f.stderr,
            f.p_value
        ));
    }
    out
}

/// Square band-code matrix (0–3) over `topics`; diagonal and failed pairs are 0.
pub fn render_band_matrix(topics: &[String], pairs: &[PairwiseFit]) -> String {
    let lookup: BTreeMap<(&str, &str), SignificanceBand> = pairs
        .iter()
        .flat_map(|p| {
            [
                ((p.topic_i.as_str(), p.topic_j.as_str()), p.band),
                ((p.topic_j.as_str(), p.topic_i.as_str()), p.band),
            ]
        })
        .collect();
    let mut out = String::from("topic");
    for t in topics {
        out.push(',');
        out.push_str(&csv_field(t));
    }
    out.push('\n');
    for ti in topics {
        out.push_str(&csv_field(ti));
        for tj in topics {
            let band = lookup
                .get(&(ti.as_str(), tj.as_str()))
                .copied()
                .unwrap_or(SignificanceBand::NotSignificant);
            out.push_str(&format!(",{}", band.code()));
        }
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn exp_series(topic: &str, mu: f64, ts: &[f64]) -> EffectivenessSeries {
        let vals: Vec<(f64, f64)> = ts.iter().map(|&t| (t, (-mu * t).exp())).collect();
        EffectivenessSeries::from_values(topic, &vals)
    }

    fn half_years() -> Vec<f64> {
        (1..=10).map(|k| k as f64 * 0.5).collect()
    }

    #[test]
    fn exact_exponential_recovered() {
        let fit = fit_exponential_decay(&exp_series("a", 0.1, &half_years()), DecayOptions::default()).unwrap();
        assert_abs_diff_eq!(fit.mu, 0.1, epsilon = 1e-15);
        assert!(fit.stderr < 1e-15);
        assert_eq!(fit.n_points, 10);
    }

    #[test]
    fn constant_series_never_decays() {
        let vals: Vec<_> = half_years().into_iter().map(|t| (t, 1.0)).collect();
        let fit = fit_exponential_decay(&EffectivenessSeries::from_values("a", &vals), DecayOptions::default())
            .unwrap();
        assert_eq!(fit.mu, 0.0);
        assert_eq!(fit.half_life, HalfLife::Infinite);
    }

    #[test]
    fn non_positive_points_are_dropped() {
        let vals = [(0.5, 0.9), (1.0, 0.0), (1.5, 0.8), (2.0, -0.1), (2.5, 0.7)];
        let fit = fit_exponential_decay(&EffectivenessSeries::from_values("a", &vals), DecayOptions::default())
            .unwrap();
        assert_eq!(fit.dropped_points, 2);
        assert_eq!(fit.n_points, 3);
        let too_few = [(0.5, 0.9), (1.0, 0.0), (1.5, 0.8)];
        assert!(fit_exponential_decay(&EffectivenessSeries::from_values("a", &too_few), DecayOptions::default())
            .is_err());
    }

    #[test]
    fn clipping_is_optional() {
        let vals = [(0.5, 1.2), (1.0, 0.9), (1.5, 0.8)];
        let s = EffectivenessSeries::from_values("a", &vals);
        let clipped = fit_exponential_decay(&s, DecayOptions::default()).unwrap();
        let raw = fit_exponential_decay(&s, DecayOptions { clip_at_one: false, ..Default::default() }).unwrap();
        assert_eq!(clipped.clipped_points, 1);
        assert_eq!(raw.clipped_points, 0);
        assert!(clipped.mu > raw.mu);
    }

    #[test]
    fn half_life_formatting() {
        assert_eq!(half_life(0.245, 100.0).to_string(), "2.83");
        assert_eq!(half_life(0.151, 100.0).to_string(), "4.59");
        let h = half_life(0.004103, 100.0);
        assert_eq!(h.to_string(), "100> (168.9)");
        assert_abs_diff_eq!(h.years(), std::f64::consts::LN_2 / 0.004103, epsilon = 1e-12);
        assert_eq!(half_life(0.0, 100.0).to_string(), "∞");
        assert_eq!(half_life(-0.2, 100.0), HalfLife::Infinite);
    }

    #[test]
    fn bands() {
        assert_eq!(significance_band(0.0005).unwrap(), SignificanceBand::Level001);
        assert_eq!(significance_band(0.05).unwrap(), SignificanceBand::NotSignificant);
        assert_eq!(significance_band(0.02).unwrap(), SignificanceBand::Level05);
        assert_eq!(significance_band(0.005).unwrap(), SignificanceBand::Level01);
        assert_eq!(significance_band(0.001).unwrap(), SignificanceBand::Level01);
        assert!(significance_band(1.5).is_err());
        assert!(significance_band(-0.1).is_err());
    }

    #[test]
    fn pairwise_basics() {
        let a = exp_series("a", 0.2, &half_years());
        let b = exp_series("b", 0.1, &half_years());
        let same = pairwise_decay_difference(&a, &a, DecayOptions::default()).unwrap();
        assert_eq!(same.beta, 0.0);
        assert_eq!(same.band, SignificanceBand::NotSignificant);
        let ab = pairwise_decay_difference(&a, &b, DecayOptions::default()).unwrap();
        assert_abs_diff_eq!(ab.beta, 0.1, epsilon = 1e-12);
        assert_eq!(ab.band, SignificanceBand::Level001);
        let ba = pairwise_decay_difference(&b, &a, DecayOptions::default()).unwrap();
        assert_eq!(ba.beta, -ab.beta);
        assert_eq!(ba.p_value, ab.p_value);
    }

    #[test]
    fn pairwise_needs_common_months() {
        let a = exp_series("a", 0.2, &[0.5, 1.0, 1.5]);
        let b = exp_series("b", 0.1, &[2.0, 2.5, 3.0]);
        assert!(matches!(
            pairwise_decay_difference(&a, &b, DecayOptions::default()),
            Err(DecayError::TooFewPoints { got: 0, .. })
        ));
    }

    #[test]
    fn forms_need_four_points() {
        let s = exp_series("a", 0.3, &[0.5, 1.0, 1.5]);
        assert!(compare_functional_forms(&s, DecayOptions::default()).is_err());
    }

    #[test]
    fn decay_table_layout() {
        assert_eq!(render_decay_table(&[]), format!("{DECAY_TABLE_HEADER}\n"));
        let fit = |topic: &str, mu: f64| DecayFit {
            topic: topic.into(),
            mu,
            stderr: 0.004,
            t_stat: mu / 0.004,
            p_value: 1e-6,
            half_life: half_life(mu, 100.0),
            n_points: 60,
            dropped_points: 0,
            clipped_points: 0,
            intercept_used: false,
            intercept: None,
            r_squared: 0.9,
        };
        let table = render_decay_table(&[fit("politics", 0.151), fit("history", 0.004103)]);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], DECAY_TABLE_HEADER);
        assert!(lines[1].starts_with("history,-0.004,100> (168.9),"));
        assert!(lines[2].starts_with("politics,-0.151,4.59,"));
    }

    #[test]
    fn band_matrix_layout() {
        assert_eq!(render_band_matrix(&[], &[]), "topic\n");
        let a = exp_series("a", 0.2, &half_years());
        let b = exp_series("b", 0.1, &half_years());
        let pair = pairwise_decay_difference(&a, &b, DecayOptions::default()).unwrap();
        let m = render_band_matrix(&["a".into(), "b".into()], &[pair]);
        assert_eq!(m, "topic,a,b\na,0,3\nb,3,0\n");
    }

    proptest::proptest! {
        #[test]
        fn pairwise_is_antisymmetric(mi in 0.0..0.6f64, mj in 0.0..0.6f64, wobble in 0.0..0.05f64) {
            let ts = half_years();
            let make = |topic: &str, mu: f64, sign: f64| {
                let v: Vec<(f64, f64)> = ts
                    .iter()
                    .enumerate()
                    .map(|(k, &t)| (t, (-mu * t + sign * wobble * ((k % 3) as f64 - 1.0)).exp().min(1.0)))
                    .collect();
                EffectivenessSeries::from_values(topic, &v)
            };
            let (si, sj) = (make("i", mi, 1.0), make("j", mj, -1.0));
            let ij = pairwise_decay_difference(&si, &sj, DecayOptions::default()).unwrap();
            let ji = pairwise_decay_difference(&sj, &si, DecayOptions::default()).unwrap();
            proptest::prop_assert_eq!(ij.beta, -ji.beta);
            proptest::prop_assert_eq!(ij.p_value, ji.p_value);
            proptest::prop_assert_eq!(ij.band, ji.band);
        }

        #[test]
        fn band_code_never_rises_with_p(p in 0.0..1.0f64, q in 0.0..1.0f64) {
            let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
            proptest::prop_assert!(significance_band(lo).unwrap().code() >= significance_band(hi).unwrap().code());
        }

        #[test]
        fn clean_decay_recovers_rate(mu in 0.001..1.5f64) {
            let fit = fit_exponential_decay(&exp_series("x", mu, &half_years()), DecayOptions::default()).unwrap();
            proptest::prop_assert!((fit.mu - mu).abs() < 1e-12);
        }
    }
}
