//! In-memory orchestration: period buckets → splits and ladders → training
//! grid → best records → native curves → effectiveness series → decay fit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::ngram::{ngram_train, NGramConfig};
use crate::backend::{best_records, BackendError, EvalRecord, ManifestEntry, TrainJob, NGRAM_BACKEND};
use crate::config::{Config, CrossEval};
use crate::corpus::{
    build_subset_ladder, make_splits, slice_periods, CorpusError, Document, PeriodBucket, PeriodId, PeriodSlice,
    SubsetLadder,
};
use crate::curves::{build_effectiveness_series, fit_native_curves, EffectivenessSeries, FitError, NativeCurve};
use crate::decay::{fit_exponential_decay, DecayError, DecayFit};
use crate::exec::Execution;
use crate::synth::{generate_corpus, CorpusSpec, DriftProcess};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Decay(#[from] DecayError),
    #[error("topic `{0}` has no period with enough data")]
    NoUsablePeriods(String),
}

/// Split and ladder of one period.
#[derive(Debug, Clone)]
pub struct PreparedPeriod {
    pub slice: PeriodSlice,
    pub ladder: SubsetLadder,
}

#[derive(Debug, Clone)]
pub struct PreparedTopic {
    pub topic: String,
    pub periods: BTreeMap<PeriodId, PreparedPeriod>,
}

/// Split seed of a period: the run seed offset by the period index.
pub fn split_seed(seed: u64, period: PeriodId) -> u64 {
    seed.wrapping_add(period.index() as u64)
}

/// Split and ladder every sufficient period of one topic.
pub fn prepare_topic(
    topic: &str,
    buckets: &BTreeMap<PeriodId, PeriodBucket>,
    cfg: &Config,
) -> Result<PreparedTopic, PipelineError> {
    let mut periods = BTreeMap::new();
    for (&period, bucket) in buckets {
        if bucket.insufficient {
            log::warn!("{topic}/{period}: {} words is below the minimum, skipped", bucket.words);
            continue;
        }
        let slice = make_splits(
            topic,
            period,
            &bucket.docs,
            cfg.dev_min_words,
            cfg.test_min_words,
            cfg.ladder_floor,
            split_seed(cfg.seed, period),
        )?;
        let ladder = build_subset_ladder(period, slice.train_full.len(), cfg.ladder_top, cfg.ladder_floor)?;
        periods.insert(period, PreparedPeriod { slice, ladder });
    }
    if periods.is_empty() {
        return Err(PipelineError::NoUsablePeriods(topic.to_string()));
    }
    Ok(PreparedTopic {
        topic: topic.to_string(),
        periods,
    })
}

/// One unit of the training grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridJob {
    pub job: TrainJob,
    pub test_periods: Vec<PeriodId>,
}

/// Every (period, rung, seed) job with the periods its model is scored on.
pub fn plan_jobs(prepared: &PreparedTopic, cfg: &Config, backend_id: &str) -> Vec<GridJob> {
    let reference = cfg.reference_size();
    let all: Vec<PeriodId> = prepared.periods.keys().copied().collect();
    let mut jobs = Vec::new();
    for (&period, p) in &prepared.periods {
        for &size in &p.ladder.sizes {
            let cross = match cfg.cross_eval {
                CrossEval::None => false,
                CrossEval::ReferenceSize => size == reference,
                CrossEval::All => true,
            };
            let test_periods: Vec<PeriodId> = if cross {
                all.iter().copied().filter(|&t| t >= period).collect()
            } else {
                vec![period]
            };
            for &seed in &cfg.training_seeds {
                jobs.push(GridJob {
                    job: TrainJob {
                        topic: prepared.topic.clone(),
                        train_period: period,
                        subset_size: size,
                        backend_id: backend_id.to_string(),
                        seed,
                    },
                    test_periods: test_periods.clone(),
                });
            }
        }
    }
    jobs
}

/// Train one n-gram job and score it on its test periods.
pub fn run_ngram_job(
    prepared: &PreparedTopic,
    grid_job: &GridJob,
    ngram: &NGramConfig,
) -> Result<Vec<EvalRecord>, BackendError> {
    let job = &grid_job.job;
    let period = prepared
        .periods
        .get(&job.train_period)
        .ok_or_else(|| BackendError::Config(format!("no slice for {}", job.train_period)))?;
    let subset = &period.slice.train_full[..job.subset_size.min(period.slice.train_full.len())];
    let model = ngram_train(subset, &period.slice.dev, ngram)?;
    let dev_loss = model.cross_entropy(&period.slice.dev)?;
    let meta = model.meta();
    grid_job
        .test_periods
        .iter()
        .map(|tp| {
            let test = &prepared
                .periods
                .get(tp)
                .ok_or_else(|| BackendError::Config(format!("no slice for {tp}")))?
                .slice
                .test;
            Ok(EvalRecord {
                job: job.clone(),
                test_period: *tp,
                loss: model.cross_entropy(test)?,
                token_count: test.len(),
                dev_loss: Some(dev_loss),
                backend_meta: Some(meta.clone()),
            })
        })
        .collect()
}

/// Run the whole grid with the built-in backend. Failed jobs become
/// `Failed` entries; output order follows [`plan_jobs`].
pub fn run_training_grid(prepared: &PreparedTopic, cfg: &Config, exec: Execution) -> Vec<ManifestEntry> {
    let jobs = plan_jobs(prepared, cfg, NGRAM_BACKEND);
    exec.map(jobs, |gj| match run_ngram_job(prepared, &gj, &cfg.ngram) {
        Ok(recs) => recs.into_iter().map(ManifestEntry::Eval).collect(),
        Err(e) => {
            log::warn!("job {:?} failed: {e}", gj.job);
            vec![ManifestEntry::Failed {
                job: gj.job,
                reason: e.to_string(),
            }]
        }
    })
    .into_iter()
    .flatten()
    .collect()
}

/// Curves, series and decay of one topic.
#[derive(Debug, Clone)]
pub struct TopicAnalysis {
    pub topic: String,
    pub natives: BTreeMap<PeriodId, NativeCurve>,
    pub failed_curves: BTreeMap<PeriodId, FitError>,
    pub series: EffectivenessSeries,
    pub decay: Result<DecayFit, DecayError>,
}

/// Analyse one topic from manifest entries. The reference period defaults
/// to the earliest one with a native curve.
pub fn analyze_topic(
    entries: &[ManifestEntry],
    topic: &str,
    backend_id: &str,
    reference_period: Option<PeriodId>,
    cfg: &Config,
) -> Result<TopicAnalysis, PipelineError> {
    let best = best_records(entries);
    let mut natives = BTreeMap::new();
    let mut failed_curves = BTreeMap::new();
    for (p, r) in fit_native_curves(&best, topic, backend_id) {
        match r {
            Ok(c) => {
                natives.insert(p, c);
            }
            Err(e) => {
                log::warn!("{topic}/{p}: native curve failed: {e}");
                failed_curves.insert(p, e);
            }
        }
    }
    let reference = match reference_period {
        Some(p) => p,
        None => *natives
            .keys()
            .next()
            .ok_or_else(|| PipelineError::NoUsablePeriods(topic.to_string()))?,
    };
    let series = build_effectiveness_series(&best, &natives, topic, backend_id, reference, cfg.reference_size)?;
    let decay = fit_exponential_decay(&series, cfg.decay);
    Ok(TopicAnalysis {
        topic: topic.to_string(),
        natives,
        failed_curves,
        series,
        decay,
    })
}

/// Generate a drifting corpus and run it through the whole chain.
pub fn run_synthetic(
    process: &DriftProcess,
    spec: &CorpusSpec,
    cfg: &Config,
    exec: Execution,
) -> Result<(Vec<ManifestEntry>, TopicAnalysis), PipelineError> {
    run_documents(generate_corpus(process, spec), &spec.topic, cfg, exec)
}

/// Slice `docs` (one topic), train the grid and analyse it.
pub fn run_documents(
    docs: Vec<Document>,
    topic: &str,
    cfg: &Config,
    exec: Execution,
) -> Result<(Vec<ManifestEntry>, TopicAnalysis), PipelineError> {
    let buckets = slice_periods(docs, cfg.min_period_words)?;
    let prepared = prepare_topic(topic, &buckets, cfg)?;
    let entries = run_training_grid(&prepared, cfg, exec);
    let analysis = analyze_topic(&entries, topic, NGRAM_BACKEND, None, cfg)?;
    Ok((entries, analysis))
}
