//! Power-law learning curves and their inversion into effective dataset size.
//!
//! A native curve `L(n) = a·n^(−b) + c` is fitted per (topic, period) from
//! models trained and tested on that period. A model trained at `t₁` and
//! tested at `t₀` is then mapped to the amount of `t₀` data that would reach
//! the same loss; divided by its own training size this is its
//! effectiveness at `t₀`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::manifest::BestKey;
use crate::backend::EvalRecord;
use crate::corpus::PeriodId;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FitError {
    #[error("power-law fit needs at least 3 distinct sizes, got {0}")]
    TooFewPoints(usize),
    #[error("invalid learning-curve point (size {size}, loss {loss})")]
    InvalidPoint { size: f64, loss: f64 },
    #[error("learning curve does not decrease: {0}")]
    Degenerate(String),
    #[error("cannot mix backends `{0}` and `{1}` in one learning curve")]
    MixedBackends(String, String),
    #[error("loss {loss} is at or below the irreducible loss {c}; no finite dataset reaches it")]
    Saturation { loss: f64, c: f64 },
    #[error("model from {train} evaluated on {test}: {source}")]
    Context {
        train: PeriodId,
        test: PeriodId,
        #[source]
        source: Box<FitError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningCurvePoint {
    pub size: f64,
    pub loss: f64,
}

/// `L(n) = a·n^(−b) + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningCurveFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Sum of squared residuals of `ln L`.
    pub residual_sse: f64,
    /// R² of the fit in log-loss space.
    pub r_squared: f64,
    pub point_count: usize,
    pub min_size: f64,
    pub max_size: f64,
}

impl LearningCurveFit {
    pub fn predict(&self, size: f64) -> f64 {
        self.a * size.powf(-self.b) + self.c
    }

    /// Training size whose predicted loss equals `loss`.
    pub fn invert(&self, loss: f64) -> Result<f64, FitError> {
        if loss <= self.c {
            return Err(FitError::Saturation { loss, c: self.c });
        }
        Ok(((loss - self.c) / self.a).powf(-1.0 / self.b))
    }

    pub fn in_range(&self, size: f64) -> bool {
        let tol = 1e-9;
        size >= self.min_size * (1.0 - tol) && size <= self.max_size * (1.0 + tol)
    }
}

/// Free-function form of [`LearningCurveFit::invert`], also reporting
/// whether the answer lies outside the fitted size range.
pub fn invert_curve(fit: &LearningCurveFit, loss: f64) -> Result<(f64, bool), FitError> {
    let size = fit.invert(loss)?;
    Ok((size, !fit.in_range(size)))
}

/// Fixed-`c` profile: regress `ln(L − c)` on `ln n`, return `(a, b, sse)`
/// with the SSE measured on `ln L`.
fn profile(points: &[LearningCurvePoint], c: f64) -> Option<(f64, f64, f64)> {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.size.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| (p.loss - c).ln()).collect();
    if ys.iter().any(|y| !y.is_finite()) {
        return None;
    }
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return None;
    }
    let a = (ym - slope * xm).exp();
    let b = -slope;
    let sse = points
        .iter()
        .map(|p| (p.loss.ln() - (a * p.size.powf(-b) + c).ln()).powi(2))
        .sum();
    Some((a, b, sse))
}

const GRID: usize = 400;

/// Fit `a·n^(−b) + c` by a 1-D search over `c ∈ [0, min loss)`.
///
/// For each candidate `c` the remaining parameters come from a log-log
/// linear regression; the `c` with the smallest squared error in `ln L` is
/// located on a uniform grid and then refined by golden-section search on
/// the bracketing cells.
pub fn fit_power_law(points: &[LearningCurvePoint]) -> Result<LearningCurveFit, FitError> {
    for p in points {
        if !(p.size > 0.0 && p.loss > 0.0 && p.size.is_finite() && p.loss.is_finite()) {
            return Err(FitError::InvalidPoint {
                size: p.size,
                loss: p.loss,
            });
        }
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.size.total_cmp(&b.size));
    let mut distinct = pts.iter().map(|p| p.size).collect::<Vec<_>>();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(FitError::TooFewPoints(distinct.len()));
    }
    let first = pts[0];
    let last = pts[pts.len() - 1];
    if last.loss >= first.loss {
        let rising: Vec<String> = pts
            .windows(2)
            .filter(|w| w[1].loss >= w[0].loss)
            .map(|w| format!("({}, {}) -> ({}, {})", w[0].size, w[0].loss, w[1].size, w[1].loss))
            .collect();
        return Err(FitError::Degenerate(rising.join("; ")));
    }

    let min_loss = pts.iter().map(|p| p.loss).fold(f64::INFINITY, f64::min);
    let objective = |x: f64| profile(&pts, x * min_loss).map(|r| r.2).unwrap_or(f64::INFINITY);

    let mut best_k = None;
    let mut best_val = f64::INFINITY;
    for k in 0..GRID {
        let v = objective(k as f64 / GRID as f64);
        if v < best_val {
            best_val = v;
            best_k = Some(k);
        }
    }
    let k = best_k.ok_or_else(|| FitError::Degenerate("no admissible irreducible loss".into()))?;
    let mut lo = (k as f64 - 1.0).max(0.0) / GRID as f64;
    let mut hi = ((k as f64 + 1.0) / GRID as f64).min(1.0 - 1e-12);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (objective(x1), objective(x2));
    for _ in 0..200 {
        if hi - lo < 1e-15 {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = objective(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = objective(x2);
        }
    }
    // compare the refined interior against the grid winner and the c = 0 edge
    let mut best_x = k as f64 / GRID as f64;
    for cand in [0.5 * (lo + hi), x1, x2, 0.0] {
        let v = objective(cand);
        if v < best_val {
            best_val = v;
            best_x = cand;
        }
    }
    let c = best_x * min_loss;
    let (a, b, sse) = profile(&pts, c).expect("winning c is admissible");
    let mean_ln = pts.iter().map(|p| p.loss.ln()).sum::<f64>() / pts.len() as f64;
    let sst: f64 = pts.iter().map(|p| (p.loss.ln() - mean_ln).powi(2)).sum();
    Ok(LearningCurveFit {
        a,
        b,
        c,
        residual_sse: sse,
        r_squared: if sst > 0.0 { 1.0 - sse / sst } else { 1.0 },
        point_count: pts.len(),
        min_size: first.size,
        max_size: last.size,
    })
}

/// Adjacent-rung increases above `tolerance` nats (size-sorted). Such
/// violations are expected noise at small sizes and are reported, not fatal.
pub fn monotonicity_violations(
    points: &[LearningCurvePoint],
    tolerance: f64,
) -> Vec<(LearningCurvePoint, LearningCurvePoint)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.size.total_cmp(&b.size));
    pts.windows(2)
        .filter(|w| w[1].loss > w[0].loss + tolerance)
        .map(|w| (w[0], w[1]))
        .collect()
}

/// Learning curve of one (topic, period, backend).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NativeCurve {
    pub topic: String,
    pub period: PeriodId,
    pub backend_id: String,
    pub points: Vec<LearningCurvePoint>,
    pub fit: LearningCurveFit,
}

/// Fit a native curve from records trained and tested on the same period.
/// All records must share topic, period and backend.
pub fn fit_native_curve(records: &[&EvalRecord]) -> Result<NativeCurve, FitError> {
    let first = records.first().ok_or(FitError::TooFewPoints(0))?;
    for r in records {
        if r.job.backend_id != first.job.backend_id {
            return Err(FitError::MixedBackends(
                first.job.backend_id.clone(),
                r.job.backend_id.clone(),
            ));
        }
        debug_assert_eq!(r.job.topic, first.job.topic);
        debug_assert_eq!(r.job.train_period, r.test_period);
    }
    let points: Vec<LearningCurvePoint> = records
        .iter()
        .map(|r| LearningCurvePoint {
            size: r.job.subset_size as f64,
            loss: r.loss,
        })
        .collect();
    for (lo, hi) in monotonicity_violations(&points, 0.05) {
        log::warn!(
            "{}/{}: loss rises from {:.4} at {} to {:.4} at {}",
            first.job.topic,
            first.test_period,
            lo.loss,
            lo.size,
            hi.loss,
            hi.size
        );
    }
    let fit = fit_power_law(&points)?;
    Ok(NativeCurve {
        topic: first.job.topic.clone(),
        period: first.test_period,
        backend_id: first.job.backend_id.clone(),
        points,
        fit,
    })
}

/// Native curves for every period of `topic` under `backend_id`, from the
/// best-record table. Periods whose fit fails map to the error.
pub fn fit_native_curves(
    best: &BTreeMap<BestKey, EvalRecord>,
    topic: &str,
    backend_id: &str,
) -> BTreeMap<PeriodId, Result<NativeCurve, FitError>> {
    let mut by_period: BTreeMap<PeriodId, Vec<&EvalRecord>> = BTreeMap::new();
    for ((backend, t, train, _, test), rec) in best {
        if backend == backend_id && t == topic && train == test {
            by_period.entry(*train).or_default().push(rec);
        }
    }
    by_period
        .into_iter()
        .map(|(p, recs)| (p, fit_native_curve(&recs)))
        .collect()
}

/// Effectiveness of one trained model at one test period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectivenessPoint {
    pub train_period: PeriodId,
    pub test_period: PeriodId,
    /// Months from train to test period.
    pub months: i64,
    /// `months / 12`.
    pub t_years: f64,
    pub native_size: f64,
    pub effective_size: f64,
    pub effectiveness: f64,
    /// Inversion left the fitted size range.
    pub extrapolated: bool,
    /// Effectiveness above 1 inside the fitted range.
    pub noise: bool,
}

/// Invert the test period's native curve at the model's loss there.
pub fn effective_size(eval: &EvalRecord, native: &NativeCurve) -> Result<EffectivenessPoint, FitError> {
    if eval.job.backend_id != native.backend_id {
        return Err(FitError::MixedBackends(
            eval.job.backend_id.clone(),
            native.backend_id.clone(),
        ));
    }
    debug_assert_eq!(eval.test_period, native.period);
    let context = |e: FitError| FitError::Context {
        train: eval.job.train_period,
        test: eval.test_period,
        source: Box::new(e),
    };
    let (effective, extrapolated) = invert_curve(&native.fit, eval.loss).map_err(context)?;
    let native_size = eval.job.subset_size as f64;
    let effectiveness = effective / native_size;
    let months = eval.job.train_period.months_until(eval.test_period);
    Ok(EffectivenessPoint {
        train_period: eval.job.train_period,
        test_period: eval.test_period,
        months,
        t_years: months as f64 / 12.0,
        native_size,
        effective_size: effective,
        effectiveness,
        extrapolated,
        noise: effectiveness > 1.0 && !extrapolated,
    })
}

/// Effectiveness over time of one reference model; the `(t, y)` input to
/// the decay fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectivenessSeries {
    pub topic: String,
    pub backend_id: String,
    pub reference_period: PeriodId,
    pub reference_size: usize,
    pub points: Vec<EffectivenessPoint>,
    /// Test periods left out, with the reason.
    pub skipped: Vec<(PeriodId, String)>,
}

impl EffectivenessSeries {
    /// Build a series directly from `(t_years, effectiveness)` pairs.
    pub fn from_values(topic: &str, values: &[(f64, f64)]) -> Self {
        let reference: PeriodId = PeriodId { year: 2000, month: 1 };
        let points = values
            .iter()
            .map(|&(t, y)| {
                let months = (t * 12.0).round() as i64;
                EffectivenessPoint {
                    train_period: reference,
                    test_period: reference.offset(months),
                    months,
                    t_years: t,
                    native_size: 1.0,
                    effective_size: y,
                    effectiveness: y,
                    extrapolated: false,
                    noise: y > 1.0,
                }
            })
            .collect();
        Self {
            topic: topic.to_string(),
            backend_id: String::new(),
            reference_period: reference,
            reference_size: 1,
            points,
            skipped: Vec::new(),
        }
    }

    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t_years).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.effectiveness).collect()
    }
}

/// Series for the best model trained on `reference_period` at
/// `reference_size` words (default: the largest size trained there),
/// evaluated on every period from the reference onwards.
pub fn build_effectiveness_series(
    best: &BTreeMap<BestKey, EvalRecord>,
    natives: &BTreeMap<PeriodId, NativeCurve>,
    topic: &str,
    backend_id: &str,
    reference_period: PeriodId,
    reference_size: Option<usize>,
) -> Result<EffectivenessSeries, FitError> {
    let mut evals: Vec<&EvalRecord> = best
        .iter()
        .filter(|((b, t, train, _, _), _)| b == backend_id && t == topic && *train == reference_period)
        .map(|(_, r)| r)
        .collect();
    let size = reference_size
        .or_else(|| evals.iter().map(|r| r.job.subset_size).max())
        .ok_or(FitError::TooFewPoints(0))?;
    evals.retain(|r| r.job.subset_size == size && r.test_period >= reference_period);
    evals.sort_by_key(|r| r.test_period);

    let mut series = EffectivenessSeries {
        topic: topic.to_string(),
        backend_id: backend_id.to_string(),
        reference_period,
        reference_size: size,
        points: Vec::new(),
        skipped: Vec::new(),
    };
    for eval in evals {
        let Some(native) = natives.get(&eval.test_period) else {
            log::warn!("{topic}: no native curve for {}, skipped", eval.test_period);
            series
                .skipped
                .push((eval.test_period, "missing native learning curve".into()));
            continue;
        };
        match effective_size(eval, native) {
            Ok(p) => series.points.push(p),
            Err(e) => {
                log::warn!("{topic}: {e}");
                series.skipped.push((eval.test_period, e.to_string()));
            }
        }
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ManifestEntry, TrainJob};
    use approx::assert_relative_eq;

    fn curve(a: f64, b: f64, c: f64, sizes: &[f64]) -> Vec<LearningCurvePoint> {
        sizes
            .iter()
            .map(|&n| LearningCurvePoint {
                size: n,
                loss: a * n.powf(-b) + c,
            })
            .collect()
    }

    fn doubling(from: f64, count: usize) -> Vec<f64> {
        (0..count).map(|k| from * 2f64.powi(k as i32)).collect()
    }

    #[test]
    fn recovers_noiseless_parameters() {
        let fit = fit_power_law(&curve(2.0, 0.3, 1.0, &doubling(1000.0, 7))).unwrap();
        assert_relative_eq!(fit.a, 2.0, max_relative = 1e-3);
        assert_relative_eq!(fit.b, 0.3, max_relative = 1e-3);
        assert_relative_eq!(fit.c, 1.0, max_relative = 1e-3);
        assert!(fit.residual_sse < 1e-12);
    }

    #[test]
    fn zero_floor_curve() {
        let fit = fit_power_law(&curve(5.0, 0.5, 0.0, &doubling(1000.0, 7))).unwrap();
        assert!(fit.c <= 1e-3, "{}", fit.c);
        assert_relative_eq!(fit.b, 0.5, max_relative = 1e-3);
    }

    #[test]
    fn needs_three_sizes() {
        let pts = curve(2.0, 0.3, 1.0, &[1000.0, 2000.0]);
        assert_eq!(fit_power_law(&pts), Err(FitError::TooFewPoints(2)));
    }

    #[test]
    fn rising_curve_is_degenerate() {
        let pts: Vec<_> = [(1.0, 2.0), (2.0, 2.1), (4.0, 2.2)]
            .iter()
            .map(|&(size, loss)| LearningCurvePoint { size, loss })
            .collect();
        match fit_power_law(&pts) {
            Err(FitError::Degenerate(msg)) => assert!(msg.contains("(1, 2) -> (2, 2.1)")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inversion_identities() {
        let fit = fit_power_law(&curve(2.0, 0.3, 1.0, &doubling(1000.0, 7))).unwrap();
        for n in doubling(1000.0, 7) {
            let back = fit.invert(fit.predict(n)).unwrap();
            assert_relative_eq!(back, n, max_relative = 1e-9);
        }
        assert!(matches!(fit.invert(fit.c), Err(FitError::Saturation { .. })));
        assert_relative_eq!(fit.invert(fit.a + fit.c).unwrap(), 1.0, max_relative = 1e-12);
    }

    fn record(train: &str, test: &str, size: usize, loss: f64) -> EvalRecord {
        EvalRecord {
            job: TrainJob {
                topic: "x".into(),
                train_period: train.parse().unwrap(),
                subset_size: size,
                backend_id: "ngram".into(),
                seed: 0,
            },
            test_period: test.parse().unwrap(),
            loss,
            token_count: 100,
            dev_loss: None,
            backend_meta: None,
        }
    }

    #[test]
    fn rejects_mixed_backends() {
        let a = record("2012-10", "2012-10", 1000, 3.0);
        let mut b = record("2012-10", "2012-10", 2000, 2.9);
        b.job.backend_id = "gpt".into();
        let c = record("2012-10", "2012-10", 4000, 2.8);
        assert!(matches!(
            fit_native_curve(&[&a, &b, &c]),
            Err(FitError::MixedBackends(..))
        ));
        let native = fit_native_curve(&[&a, &c, &record("2012-10", "2012-10", 8000, 2.75)]).unwrap();
        assert!(matches!(effective_size(&b, &native), Err(FitError::MixedBackends(..))));
    }

    fn native(period: &str, a: f64, b: f64, c: f64, sizes: &[usize]) -> Vec<ManifestEntry> {
        sizes
            .iter()
            .map(|&n| ManifestEntry::Eval(record(period, period, n, a * (n as f64).powf(-b) + c)))
            .collect()
    }

    #[test]
    fn self_evaluation_has_unit_effectiveness() {
        let sizes = [5000, 10000, 20000, 40000, 80000, 160000];
        let entries = native("2012-10", 3.0, 0.4, 2.0, &sizes);
        let best = crate::backend::best_records(&entries);
        let natives: BTreeMap<_, _> = fit_native_curves(&best, "x", "ngram")
            .into_iter()
            .map(|(p, r)| (p, r.unwrap()))
            .collect();
        let s = build_effectiveness_series(&best, &natives, "x", "ngram", "2012-10".parse().unwrap(), None)
            .unwrap();
        assert_eq!(s.points.len(), 1);
        assert_eq!(s.points[0].t_years, 0.0);
        assert!((s.points[0].effectiveness - 1.0).abs() < 0.05);
        assert_eq!(s.reference_size, 160000);
    }

    #[test]
    fn stale_model_below_floor_is_extrapolated() {
        let sizes = [5000, 10000, 20000, 40000];
        let mut entries = native("2013-01", 3.0, 0.4, 2.0, &sizes);
        let floor_loss = 3.0 * 5000f64.powf(-0.4) + 2.0;
        entries.push(ManifestEntry::Eval(record("2012-10", "2013-01", 40000, floor_loss + 0.1)));
        let best = crate::backend::best_records(&entries);
        let natives: BTreeMap<_, _> = fit_native_curves(&best, "x", "ngram")
            .into_iter()
            .map(|(p, r)| (p, r.unwrap()))
            .collect();
        let s = build_effectiveness_series(
            &best,
            &natives,
            "x",
            "ngram",
            "2012-10".parse().unwrap(),
            Some(40000),
        )
        .unwrap();
        let p = &s.points[0];
        assert!(p.extrapolated);
        assert!(p.effectiveness < 5000.0 / 40000.0);
        assert_eq!(p.months, 3);
        assert_relative_eq!(p.t_years, 0.25);
    }

    #[test]
    fn missing_native_is_skipped() {
        let entries = vec![ManifestEntry::Eval(record("2012-10", "2012-11", 1000, 3.0))];
        let best = crate::backend::best_records(&entries);
        let s = build_effectiveness_series(
            &best,
            &BTreeMap::new(),
            "x",
            "ngram",
            "2012-10".parse().unwrap(),
            None,
        )
        .unwrap();
        assert!(s.points.is_empty());
        assert_eq!(s.skipped.len(), 1);
    }

    proptest::proptest! {
        #[test]
        fn noiseless_fit_reproduces_and_inverts(
            a in 0.5..50.0f64,
            b in 0.1..0.8f64,
            c in 0.5..5.0f64,
            from in 500.0..5000.0f64,
        ) {
            let sizes = doubling(from, 6);
            let pts = curve(a, b, c, &sizes);
            let fit = fit_power_law(&pts).unwrap();
            for p in &pts {
                proptest::prop_assert!(((fit.predict(p.size) - p.loss) / p.loss).abs() < 1e-4);
                let (n, extrapolated) = invert_curve(&fit, fit.predict(p.size)).unwrap();
                proptest::prop_assert!(((n - p.size) / p.size).abs() < 1e-8);
                proptest::prop_assert!(!extrapolated);
            }
        }
    }
}
