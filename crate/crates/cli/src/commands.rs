use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use perishability::backend::external::{
    period_of_test_path, run_external_job, BackendConfig, BackendOutput, BackendPaths, ExternalCommand, ResultRow,
};
use perishability::backend::manifest::BestKey;
use perishability::backend::ngram::{ngram_train, NGramConfig};
use perishability::backend::{best_records, BackendError, EvalRecord, Manifest, ManifestEntry, NGRAM_BACKEND};
use perishability::config::Config;
use perishability::corpus::{
    build_subset_ladder, filter_min_score, make_splits, parse_flat_corpus, render_flat_corpus, slice_by_topic,
    write_slice, ParseOptions, PeriodId, SubsetLadder,
};
use perishability::curves::{build_effectiveness_series, fit_native_curves, EffectivenessSeries, NativeCurve};
use perishability::decay::{
    compare_functional_forms, fit_exponential_decay, half_life, pairwise_with_thresholds, render_band_matrix,
    render_decay_table, DecayFit, FormComparison, PairwiseFit,
};
use perishability::pipeline::{plan_jobs, run_ngram_job, split_seed, GridJob, PreparedPeriod, PreparedTopic};
use perishability::report::{
    by_topic, curves_csv, effectiveness_svg, file_stem, forms_csv, series_csv, strip_comments,
};
use perishability::synth::{generate_corpus, CorpusSpec, DriftProcess, RandomChain};
use perishability::theory::{greedy_offload, DatasetComposition, EquivalenceModel, SamplingDensity};
use perishability::Execution;

use crate::workdir::Workdir;
use crate::{AllFitsFailed, BackendKind, MissingArtifact, ModelKind, UsageError};

pub fn ingest(wd: &Workdir, cfg: &Config, inputs: &[PathBuf], min_score: Option<i64>, range: Option<&str>) -> Result<()> {
    let timestamp_range = match range {
        Some(r) => {
            let (a, b) = r
                .split_once("..")
                .ok_or_else(|| UsageError(format!("range `{r}` must look like <start>..<end>")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<i64>()
                    .map_err(|_| UsageError(format!("`{s}` is not a UTC timestamp")))
            };
            Some((parse(a)?, parse(b)?))
        }
        None => None,
    };
    let opts = ParseOptions { timestamp_range };
    let mut docs = Vec::new();
    let mut warnings = 0;
    for input in inputs {
        let file = fs::File::open(input).with_context(|| format!("opening {}", input.display()))?;
        let outcome = parse_flat_corpus(BufReader::new(file), &opts).with_context(|| input.display().to_string())?;
        if outcome.malformed_records > 0 {
            log::warn!("{}: {} records with malformed scores skipped", input.display(), outcome.malformed_records);
        }
        warnings += outcome.warnings();
        docs.extend(outcome.documents);
    }
    let parsed = docs.len();
    let docs = filter_min_score(docs, min_score.unwrap_or(cfg.min_score));
    wd.write_documents(&docs)?;
    println!(
        "ingested {parsed} documents, kept {} after score filter, {warnings} warnings -> {}",
        docs.len(),
        wd.documents().display()
    );
    Ok(())
}

pub fn slice(wd: &Workdir, cfg: &Config, topic: Option<&str>) -> Result<()> {
    let docs = wd.read_documents()?;
    let by_topic = slice_by_topic(docs, cfg.min_period_words)?;
    let hash = cfg.hash();
    let mut written = 0;
    for (t, buckets) in &by_topic {
        if topic.is_some_and(|want| want != t) {
            continue;
        }
        for (&period, bucket) in buckets {
            if bucket.insufficient {
                log::warn!("{t}/{period}: {} words is below the minimum, skipped", bucket.words);
                continue;
            }
            let slice = make_splits(
                t,
                period,
                &bucket.docs,
                cfg.dev_min_words,
                cfg.test_min_words,
                cfg.ladder_floor,
                split_seed(cfg.seed, period),
            )?;
            write_slice(&wd.slice_dir(t, &period.to_string()), &slice, None, &hash)?;
            written += 1;
        }
    }
    if written == 0 {
        bail!("no period has enough words for dev, test and the smallest ladder rung");
    }
    println!("wrote {written} period slices under {}", wd.slices().display());
    Ok(())
}

pub fn ladder(wd: &Workdir, cfg: &Config) -> Result<()> {
    let hash = cfg.hash();
    let mut count = 0;
    for (dir, manifest, slice) in wd.load_slices()? {
        let ladder = build_subset_ladder(slice.period, slice.train_full.len(), cfg.ladder_top, cfg.ladder_floor)
            .with_context(|| format!("{}/{}", manifest.topic, manifest.period))?;
        let mut updated = manifest;
        updated.ladder = ladder.sizes;
        updated.config_hash = hash.clone();
        fs::write(dir.join("slice.json"), serde_json::to_string_pretty(&updated)?)?;
        count += 1;
    }
    println!("attached {} → {} ladders to {count} slices", cfg.ladder_top, cfg.ladder_floor);
    Ok(())
}

pub struct TrainOptions {
    pub backend: BackendKind,
    pub backend_command: Option<String>,
    pub backend_id: String,
    pub topic: Option<String>,
    pub periods: Option<String>,
    pub jobs: Option<usize>,
}

/// Prepared slices per topic, with the directory of each period.
type PreparedSet = BTreeMap<String, (PreparedTopic, BTreeMap<PeriodId, PathBuf>)>;

fn load_prepared(wd: &Workdir, topic: Option<&str>, periods: Option<&str>) -> Result<PreparedSet> {
    let wanted: Option<BTreeSet<PeriodId>> = periods
        .map(|p| PeriodId::parse_range(p).map(|v| v.into_iter().collect()))
        .transpose()
        .map_err(|e| UsageError(e.to_string()))?;
    let mut out = PreparedSet::new();
    for (dir, manifest, slice) in wd.load_slices()? {
        if topic.is_some_and(|t| t != manifest.topic) {
            continue;
        }
        if wanted.as_ref().is_some_and(|w| !w.contains(&manifest.period)) {
            continue;
        }
        if manifest.ladder.is_empty() {
            return Err(MissingArtifact {
                path: dir.join("slice.json"),
                producer: "ladder",
            }
            .into());
        }
        let entry = out.entry(manifest.topic.clone()).or_insert_with(|| {
            (
                PreparedTopic {
                    topic: manifest.topic.clone(),
                    periods: BTreeMap::new(),
                },
                BTreeMap::new(),
            )
        });
        entry.0.periods.insert(
            manifest.period,
            PreparedPeriod {
                ladder: SubsetLadder {
                    period: manifest.period,
                    sizes: manifest.ladder.clone(),
                },
                slice,
            },
        );
        entry.1.insert(manifest.period, dir);
    }
    if out.is_empty() {
        bail!("no slices match the requested topic and periods");
    }
    Ok(out)
}

pub fn train(wd: &Workdir, cfg: &Config, opts: TrainOptions) -> Result<()> {
    if let Some(j) = opts.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .context("configuring the worker pool")?;
    }
    let external = match opts.backend {
        BackendKind::Ngram => None,
        BackendKind::External => {
            let line = opts
                .backend_command
                .clone()
                .or_else(|| cfg.external_backend.clone())
                .ok_or_else(|| UsageError("external backend needs --backend-command or `external_backend` in the config".into()))?;
            Some(ExternalCommand::parse(&line).ok_or_else(|| UsageError("empty backend command".into()))?)
        }
    };
    let prepared = load_prepared(wd, opts.topic.as_deref(), opts.periods.as_deref())?;
    let manifest = Manifest::open(wd.manifest())?;
    let (mut jobs, mut records, mut failures) = (0, 0, 0);
    for (topic, (prep, dirs)) in &prepared {
        let grid: Vec<GridJob> = match &external {
            None => plan_jobs(prep, cfg, NGRAM_BACKEND),
            Some(_) => plan_jobs(prep, cfg, &opts.backend_id),
        };
        jobs += grid.len();
        let entries: Vec<Vec<ManifestEntry>> = match &external {
            None => Execution::Parallel.map(grid, |gj| match run_ngram_job(prep, &gj, &cfg.ngram) {
                Ok(recs) => recs.into_iter().map(ManifestEntry::Eval).collect(),
                Err(e) => vec![ManifestEntry::Failed {
                    job: gj.job,
                    reason: e.to_string(),
                }],
            }),
            Some(cmd) => Execution::Parallel.map(grid, |gj| {
                let paths = external_paths(wd, dirs, &gj);
                if let Some(parent) = paths.out.parent() {
                    if let Err(e) = fs::create_dir_all(parent) {
                        return vec![ManifestEntry::Failed {
                            job: gj.job,
                            reason: e.to_string(),
                        }];
                    }
                }
                let config = BackendConfig {
                    job: gj.job.clone(),
                    subset_size: gj.job.subset_size,
                    early_stop_patience: cfg.early_stop_patience,
                    backend: cfg.backend_settings.clone(),
                };
                run_external_job(cmd, &config, &paths)
            }),
        };
        for entry in entries.into_iter().flatten() {
            match &entry {
                ManifestEntry::Eval(_) => records += 1,
                ManifestEntry::Failed { job, reason } => {
                    failures += 1;
                    log::warn!("{topic}/{} size {} failed: {reason}", job.train_period, job.subset_size);
                }
            }
            manifest.append(&entry)?;
        }
    }
    println!(
        "{jobs} jobs: {records} evaluation records, {failures} failures -> {}",
        manifest.path().display()
    );
    Ok(())
}

fn external_paths(wd: &Workdir, dirs: &BTreeMap<PeriodId, PathBuf>, gj: &GridJob) -> BackendPaths {
    let job = &gj.job;
    let train_dir = &dirs[&job.train_period];
    let run_dir = wd
        .runs()
        .join(file_stem(&job.backend_id))
        .join(file_stem(&job.topic))
        .join(job.train_period.to_string());
    let stem = format!("{}-{}", job.subset_size, job.seed);
    BackendPaths {
        train: train_dir.join("train.txt"),
        dev: train_dir.join("dev.txt"),
        tests: gj.test_periods.iter().map(|p| dirs[p].join("test.txt")).collect(),
        out: run_dir.join(format!("{stem}.result.json")),
        config: run_dir.join(format!("{stem}.config.json")),
    }
}

/// Native curves for every (backend, topic) in the best-record table.
fn fit_all_curves(best: &BTreeMap<BestKey, EvalRecord>) -> (Vec<NativeCurve>, Vec<String>) {
    let pairs: BTreeSet<(String, String)> = best.keys().map(|k| (k.0.clone(), k.1.clone())).collect();
    let mut curves = Vec::new();
    let mut failures = Vec::new();
    for (backend, topic) in pairs {
        for (period, result) in fit_native_curves(best, &topic, &backend) {
            match result {
                Ok(c) => curves.push(c),
                Err(e) => failures.push(format!("{topic}/{period} [{backend}]: {e}")),
            }
        }
    }
    (curves, failures)
}

pub fn curves(wd: &Workdir, cfg: &Config) -> Result<()> {
    let entries = wd.read_manifest()?;
    let best = best_records(&entries);
    let (curves, failures) = fit_all_curves(&best);
    for f in &failures {
        log::warn!("curve fit failed: {f}");
    }
    let hash = cfg.hash();
    wd.write_json(&wd.curves(), &hash, &curves)?;
    wd.write_report("curves.csv", &hash, &curves_csv(&curves.iter().collect::<Vec<_>>()))?;
    println!("{} curves fitted, {} failed -> {}", curves.len(), failures.len(), wd.curves().display());
    if curves.is_empty() && !failures.is_empty() {
        return Err(AllFitsFailed(failures.join("; ")).into());
    }
    Ok(())
}

fn build_all_series(
    best: &BTreeMap<BestKey, EvalRecord>,
    curves: &[NativeCurve],
    cfg: &Config,
    reference_period: Option<PeriodId>,
    reference_size: Option<usize>,
) -> (Vec<EffectivenessSeries>, Vec<String>) {
    let mut grouped: BTreeMap<(String, String), BTreeMap<PeriodId, NativeCurve>> = BTreeMap::new();
    for c in curves {
        grouped
            .entry((c.backend_id.clone(), c.topic.clone()))
            .or_default()
            .insert(c.period, c.clone());
    }
    let mut series = Vec::new();
    let mut failures = Vec::new();
    for ((backend, topic), natives) in &grouped {
        let Some(reference) = reference_period.or_else(|| natives.keys().next().copied()) else {
            continue;
        };
        let size = reference_size.or(cfg.reference_size);
        match build_effectiveness_series(best, natives, topic, backend, reference, size) {
            Ok(s) => series.push(s),
            Err(e) => failures.push(format!("{topic} [{backend}]: {e}")),
        }
    }
    (series, failures)
}

pub fn effectiveness(wd: &Workdir, cfg: &Config, reference_period: Option<&str>, reference_size: Option<usize>) -> Result<()> {
    let curves = wd.read_curves()?.data;
    let entries = wd.read_manifest()?;
    let reference_period = reference_period
        .map(|p| p.parse::<PeriodId>())
        .transpose()
        .map_err(|e| UsageError(e.to_string()))?;
    let (series, failures) = build_all_series(&best_records(&entries), &curves, cfg, reference_period, reference_size);
    for f in &failures {
        log::warn!("series failed: {f}");
    }
    let hash = cfg.hash();
    wd.write_json(&wd.series(), &hash, &series)?;
    write_series_reports(wd, &hash, &series)?;
    println!("{} effectiveness series -> {}", series.len(), wd.series().display());
    if series.is_empty() && !failures.is_empty() {
        return Err(AllFitsFailed(failures.join("; ")).into());
    }
    Ok(())
}

fn write_series_reports(wd: &Workdir, hash: &str, series: &[EffectivenessSeries]) -> Result<()> {
    wd.write_report("effectiveness.csv", hash, &series_csv(&series.iter().collect::<Vec<_>>()))?;
    for (topic, group) in by_topic(series) {
        let stem = file_stem(topic);
        wd.write_report(&format!("effectiveness_{stem}.csv"), hash, &series_csv(&group))?;
        wd.write_svg(
            &format!("effectiveness_{stem}.svg"),
            hash,
            &effectiveness_svg(&format!("Effectiveness over time: {topic}"), &group),
        )?;
    }
    if !series.is_empty() {
        let all: Vec<&EffectivenessSeries> = series.iter().collect();
        wd.write_svg("effectiveness_all.svg", hash, &effectiveness_svg("Effectiveness over time", &all))?;
    }
    Ok(())
}

/// Row label: the topic, qualified by backend when several are present.
fn labels(series: &[EffectivenessSeries]) -> Vec<String> {
    let backends: BTreeSet<&str> = series.iter().map(|s| s.backend_id.as_str()).collect();
    series
        .iter()
        .map(|s| {
            if backends.len() > 1 {
                format!("{} [{}]", s.topic, s.backend_id)
            } else {
                s.topic.clone()
            }
        })
        .collect()
}

fn labelled(series: &[EffectivenessSeries]) -> Vec<EffectivenessSeries> {
    series
        .iter()
        .zip(labels(series))
        .map(|(s, label)| EffectivenessSeries { topic: label, ..s.clone() })
        .collect()
}

fn decay_fits(series: &[EffectivenessSeries], cfg: &Config) -> (Vec<DecayFit>, Vec<String>) {
    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for s in labelled(series) {
        match fit_exponential_decay(&s, cfg.decay) {
            Ok(mut f) => {
                f.half_life = half_life(f.mu, cfg.half_life_cap);
                fits.push(f);
            }
            Err(e) => failures.push(format!("{}: {e}", s.topic)),
        }
    }
    (fits, failures)
}

pub fn decay(wd: &Workdir, cfg: &Config) -> Result<()> {
    let series = wd.read_series()?.data;
    let (fits, failures) = decay_fits(&series, cfg);
    for f in &failures {
        log::warn!("decay fit failed: {f}");
    }
    let hash = cfg.hash();
    wd.write_json(&wd.root.join("decay.json"), &hash, &fits)?;
    let path = wd.write_report("decay.csv", &hash, &render_decay_table(&fits))?;
    print!("{}", strip_comments(&fs::read_to_string(&path)?));
    if fits.is_empty() && !failures.is_empty() {
        return Err(AllFitsFailed(failures.join("; ")).into());
    }
    Ok(())
}

fn pairwise_fits(series: &[EffectivenessSeries], cfg: &Config) -> (Vec<String>, Vec<PairwiseFit>) {
    let series = labelled(series);
    let names: Vec<String> = series.iter().map(|s| s.topic.clone()).collect();
    let mut pairs = Vec::new();
    for i in 0..series.len() {
        for j in i + 1..series.len() {
            match pairwise_with_thresholds(&series[i], &series[j], cfg.decay, cfg.significance_thresholds) {
                Ok(p) => pairs.push(p),
                Err(e) => log::warn!("{} vs {}: {e}", names[i], names[j]),
            }
        }
    }
    (names, pairs)
}

pub fn pairwise(wd: &Workdir, cfg: &Config) -> Result<()> {
    let series = wd.read_series()?.data;
    let (names, pairs) = pairwise_fits(&series, cfg);
    let hash = cfg.hash();
    wd.write_json(&wd.root.join("pairwise.json"), &hash, &pairs)?;
    let path = wd.write_report("pairwise.csv", &hash, &render_band_matrix(&names, &pairs))?;
    print!("{}", strip_comments(&fs::read_to_string(&path)?));
    Ok(())
}

fn form_rows(series: &[EffectivenessSeries], cfg: &Config) -> Vec<(String, FormComparison)> {
    labelled(series)
        .into_iter()
        .filter_map(|s| match compare_functional_forms(&s, cfg.decay) {
            Ok(f) => Some((s.topic, f)),
            Err(e) => {
                log::warn!("{}: {e}", s.topic);
                None
            }
        })
        .collect()
}

pub fn forms(wd: &Workdir, cfg: &Config) -> Result<()> {
    let series = wd.read_series()?.data;
    let rows = form_rows(&series, cfg);
    let path = wd.write_report("forms.csv", &cfg.hash(), &forms_csv(&rows))?;
    print!("{}", strip_comments(&fs::read_to_string(&path)?));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn offload(
    cfg: &Config,
    model: ModelKind,
    mu: f64,
    a: f64,
    b: f64,
    slope: f64,
    n: f64,
    weights: &[f64],
    bin_width: f64,
) -> Result<()> {
    let model = match model {
        ModelKind::Exponential => EquivalenceModel::exponential(mu),
        ModelKind::Drift => EquivalenceModel::drift_linear(a, b, slope),
    };
    let density = SamplingDensity::regular(bin_width, weights).map_err(|e| UsageError(e.to_string()))?;
    let composition = DatasetComposition::new(n, density, &model)?;
    let trajectory = greedy_offload(&composition, &model)?;
    println!("# config_hash: {}", cfg.hash());
    println!("step,removed,old_t_star,new_t_star,gain");
    for (k, s) in trajectory.steps.iter().enumerate() {
        println!("{},{:.6},{:.6},{:.6},{:.6}", k + 1, s.removed, s.old_t_star, s.new_t_star, s.gain);
    }
    let fin = &trajectory.composition;
    eprintln!(
        "equivalent size {:.3} -> {:.3}; equivalent time {:.4} -> {:.4} years; {} of {} bins kept",
        composition.equivalent_size,
        fin.equivalent_size,
        composition.equivalent_time,
        fin.equivalent_time,
        fin.density.bins().len(),
        composition.density.bins().len()
    );
    Ok(())
}

pub struct SynthOptions {
    pub out: PathBuf,
    pub drift: f64,
    pub periods: String,
    pub words_per_period: usize,
    pub words_per_document: usize,
    pub topic: String,
    pub vocab: usize,
    pub branching: usize,
    pub shift: f64,
    pub structure_seed: u64,
}

pub fn synth(cfg: &Config, opts: SynthOptions) -> Result<()> {
    let periods = PeriodId::parse_range(&opts.periods).map_err(|e| UsageError(e.to_string()))?;
    let chain = RandomChain {
        vocab_size: opts.vocab,
        branching: opts.branching,
        shift_fraction: opts.shift,
        structure_seed: opts.structure_seed,
    };
    let process = DriftProcess::random(&chain, opts.drift, cfg.seed).map_err(|e| UsageError(e.to_string()))?;
    let spec = CorpusSpec {
        topic: opts.topic,
        periods,
        words_per_period: opts.words_per_period,
        words_per_document: opts.words_per_document,
    };
    let docs = generate_corpus(&process, &spec);
    if let Some(parent) = opts.out.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&opts.out, render_flat_corpus(&docs))?;
    println!(
        "{} documents over {} periods (drift {} per year) -> {}",
        docs.len(),
        spec.periods.len(),
        opts.drift,
        opts.out.display()
    );
    Ok(())
}

pub fn report(wd: &Workdir, cfg: &Config) -> Result<()> {
    let entries = wd.read_manifest()?;
    let best = best_records(&entries);
    let hash = cfg.hash();
    let (curves, curve_failures) = fit_all_curves(&best);
    let (series, series_failures) = build_all_series(&best, &curves, cfg, None, None);
    let (fits, decay_failures) = decay_fits(&series, cfg);
    let (names, pairs) = pairwise_fits(&series, cfg);
    let forms = form_rows(&series, cfg);
    for f in curve_failures.iter().chain(&series_failures).chain(&decay_failures) {
        log::warn!("{f}");
    }

    wd.write_json(&wd.curves(), &hash, &curves)?;
    wd.write_json(&wd.series(), &hash, &series)?;
    wd.write_report("curves.csv", &hash, &curves_csv(&curves.iter().collect::<Vec<_>>()))?;
    write_series_reports(wd, &hash, &series)?;
    wd.write_report("decay.csv", &hash, &render_decay_table(&fits))?;
    wd.write_report("pairwise.csv", &hash, &render_band_matrix(&names, &pairs))?;
    wd.write_report("forms.csv", &hash, &forms_csv(&forms))?;
    println!(
        "{} curves, {} series, {} decay fits, {} pairs -> {}",
        curves.len(),
        series.len(),
        fits.len(),
        pairs.len(),
        wd.reports().display()
    );
    Ok(())
}

/// Read whitespace-separated tokens.
fn read_tokens(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?
        .split_whitespace()
        .map(str::to_string)
        .collect())
}

pub fn ngram_backend(train: &Path, dev: &Path, tests: &[PathBuf], out: &Path, _seed: u64, config: &Path) -> Result<()> {
    let cfg: BackendConfig = serde_json::from_str(&fs::read_to_string(config)?)?;
    let ngram: NGramConfig = match &cfg.backend {
        serde_json::Value::Object(_) => serde_json::from_value(cfg.backend.clone())?,
        _ => NGramConfig::default(),
    };
    let train_tokens = read_tokens(train)?;
    if cfg.subset_size > train_tokens.len() {
        bail!(BackendError::Config(format!(
            "subset of {} words requested from {} training words",
            cfg.subset_size,
            train_tokens.len()
        )));
    }
    let dev_tokens = read_tokens(dev)?;
    let model = ngram_train(&train_tokens[..cfg.subset_size], &dev_tokens, &ngram)?;
    let mut results = Vec::new();
    for t in tests {
        let period = period_of_test_path(t)
            .ok_or_else(|| BackendError::Protocol(format!("cannot infer period from {}", t.display())))?;
        let tokens = read_tokens(t)?;
        results.push(ResultRow {
            test_period: period.to_string(),
            loss_nats_per_token: model.cross_entropy(&tokens)?,
            token_count: tokens.len(),
        });
    }
    let output = BackendOutput {
        job: serde_json::to_value(&cfg.job)?,
        results,
        dev_loss: model.cross_entropy(&dev_tokens)?,
    };
    fs::write(out, serde_json::to_string_pretty(&output)?)?;
    Ok(())
}
