//! Interpolated n-gram language model.
//!
//! Component `k` is the maximum-likelihood k-gram estimate; when its history
//! was never seen in training it defers to component `k - 1`, so every
//! component is a proper distribution. The unigram floor is additively
//! smoothed over the vocabulary (including `<unk>`), which keeps every
//! probability strictly positive. Mixture weights are fitted on the dev
//! stream with EM.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::BackendError;

pub const UNK: &str = "<unk>";
const ID_BITS: u32 = 21;
const MAX_VOCAB: usize = (1 << ID_BITS) - 1;
const MAX_ORDER: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NGramConfig {
    pub order: usize,
    pub vocab_min_count: usize,
    /// Additive pseudo-count of the unigram floor.
    pub unigram_pseudocount: f64,
    pub em_max_iterations: usize,
    /// Stop EM once no weight moves by more than this.
    pub em_tolerance: f64,
}

impl Default for NGramConfig {
    fn default() -> Self {
        Self {
            order: 4,
            vocab_min_count: 2,
            unigram_pseudocount: 0.5,
            em_max_iterations: 500,
            em_tolerance: 1e-10,
        }
    }
}

impl NGramConfig {
    fn validate(&self) -> Result<(), BackendError> {
        if !(1..=MAX_ORDER).contains(&self.order) {
            return Err(BackendError::Config(format!(
                "order must be in 1..={MAX_ORDER}, got {}",
                self.order
            )));
        }
        if self.unigram_pseudocount <= 0.0 {
            return Err(BackendError::Config("unigram pseudo-count must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NGramModel {
    config: NGramConfig,
    vocab: HashMap<String, u32>,
    unk: u32,
    unigram: Vec<u64>,
    total: u64,
    /// `grams[k - 2]` counts full k-grams, `histories[k - 2]` their (k-1)-token prefixes.
    grams: Vec<HashMap<u128, u32>>,
    histories: Vec<HashMap<u128, u32>>,
    weights: Vec<f64>,
    em_iterations: usize,
}

fn pack(ids: &[u32]) -> u128 {
    ids.iter().fold(0u128, |acc, &id| (acc << ID_BITS) | id as u128)
}

/// Train on `subset`, tuning interpolation weights on `dev`.
pub fn ngram_train(
    subset: &[String],
    dev: &[String],
    config: &NGramConfig,
) -> Result<NGramModel, BackendError> {
    config.validate()?;
    if subset.is_empty() {
        return Err(BackendError::EmptyTrainingSet);
    }

    let mut raw: HashMap<&str, usize> = HashMap::new();
    for tok in subset {
        *raw.entry(tok.as_str()).or_default() += 1;
    }
    // sorted so ids do not depend on hash order
    let mut kept: Vec<&str> = raw
        .iter()
        .filter(|(_, &c)| c >= config.vocab_min_count)
        .map(|(&t, _)| t)
        .collect();
    kept.sort_unstable();
    if kept.len() >= MAX_VOCAB {
        return Err(BackendError::Config(format!(
            "vocabulary of {} exceeds the supported {MAX_VOCAB}",
            kept.len()
        )));
    }
    let mut vocab: HashMap<String, u32> = kept
        .iter()
        .enumerate()
        .map(|(i, t)| (t.to_string(), i as u32))
        .collect();
    let unk = vocab.len() as u32;
    vocab.insert(UNK.to_string(), unk);

    let mut model = NGramModel {
        config: config.clone(),
        unk,
        unigram: vec![0; vocab.len()],
        total: 0,
        grams: vec![HashMap::new(); config.order.saturating_sub(1)],
        histories: vec![HashMap::new(); config.order.saturating_sub(1)],
        vocab,
        weights: vec![1.0 / config.order as f64; config.order],
        em_iterations: 0,
    };
    let ids = model.encode(subset);
    for (i, &id) in ids.iter().enumerate() {
        model.unigram[id as usize] += 1;
        for k in 2..=config.order {
            if i + 1 < k {
                break;
            }
            let window = &ids[i + 1 - k..=i];
            *model.grams[k - 2].entry(pack(window)).or_default() += 1;
            *model.histories[k - 2].entry(pack(&window[..k - 1])).or_default() += 1;
        }
    }
    model.total = ids.len() as u64;

    if dev.is_empty() {
        log::warn!("empty dev stream; keeping uniform interpolation weights");
    } else {
        model.tune_weights(dev);
    }
    Ok(model)
}

impl NGramModel {
    pub fn config(&self) -> &NGramConfig {
        &self.config
    }

    /// Interpolation weights, unigram first.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn em_iterations(&self) -> usize {
        self.em_iterations
    }

    fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens
            .iter()
            .map(|t| self.vocab.get(t).copied().unwrap_or(self.unk))
            .collect()
    }

    /// Per-order component probabilities for each position, flattened
    /// row-major (`order` values per token).
    fn components(&self, ids: &[u32]) -> Vec<f64> {
        let order = self.config.order;
        let v = self.vocab.len() as f64;
        let delta = self.config.unigram_pseudocount;
        let mut out = Vec::with_capacity(ids.len() * order);
        for (i, &id) in ids.iter().enumerate() {
            let mut q = (self.unigram[id as usize] as f64 + delta) / (self.total as f64 + delta * v);
            out.push(q);
            for k in 2..=order {
                if i + 1 >= k {
                    let window = &ids[i + 1 - k..=i];
                    if let Some(&h) = self.histories[k - 2].get(&pack(&window[..k - 1])) {
                        let c = self.grams[k - 2].get(&pack(window)).copied().unwrap_or(0);
                        q = c as f64 / h as f64;
                    }
                }
                out.push(q);
            }
        }
        out
    }

    fn tune_weights(&mut self, dev: &[String]) {
        let order = self.config.order;
        let comps = self.components(&self.encode(dev));
        let n = (comps.len() / order) as f64;
        let mut w = vec![1.0 / order as f64; order];
        for iter in 1..=self.config.em_max_iterations {
            let mut acc = vec![0.0; order];
            for row in comps.chunks_exact(order) {
                let p: f64 = row.iter().zip(&w).map(|(q, wk)| q * wk).sum();
                for k in 0..order {
                    acc[k] += w[k] * row[k] / p;
                }
            }
            let next: Vec<f64> = acc.iter().map(|a| a / n).collect();
            let shift = next
                .iter()
                .zip(&w)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            w = next;
            self.em_iterations = iter;
            if shift < self.config.em_tolerance {
                break;
            }
        }
        let sum: f64 = w.iter().sum();
        self.weights = w.into_iter().map(|x| x / sum).collect();
    }

    /// Mean negative log-probability per token (nats). OOV tokens map to
    /// `<unk>`. Each call scores `tokens` as an independent stream.
    pub fn cross_entropy(&self, tokens: &[String]) -> Result<f64, BackendError> {
        if tokens.is_empty() {
            return Err(BackendError::EmptyTestSet);
        }
        let order = self.config.order;
        let comps = self.components(&self.encode(tokens));
        let nll: f64 = comps
            .chunks_exact(order)
            .map(|row| {
                let p: f64 = row.iter().zip(&self.weights).map(|(q, w)| q * w).sum();
                -p.ln()
            })
            .sum();
        Ok(nll / tokens.len() as f64)
    }

    /// Metadata recorded alongside evaluation records.
    pub fn meta(&self) -> serde_json::Value {
        let mut m = BTreeMap::new();
        m.insert("tuning", serde_json::json!("em"));
        m.insert("weights", serde_json::json!(self.weights));
        m.insert("em_iterations", serde_json::json!(self.em_iterations));
        m.insert("vocab_size", serde_json::json!(self.vocab.len()));
        m.insert("order", serde_json::json!(self.config.order));
        serde_json::json!(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn repeat(pattern: &[&str], n: usize) -> Vec<String> {
        pattern.iter().cycle().take(n).map(|s| s.to_string()).collect()
    }

    #[test]
    fn repeated_token_is_nearly_free() {
        let train = repeat(&["a"], 5000);
        let dev = repeat(&["a"], 1000);
        for order in 1..=4 {
            let cfg = NGramConfig { order, ..Default::default() };
            let m = ngram_train(&train, &dev, &cfg).unwrap();
            let ce = m.cross_entropy(&dev).unwrap();
            assert!(ce < 0.01, "order {order}: {ce}");
        }
    }

    #[test]
    fn alternating_sequence_is_learned() {
        let train = repeat(&["a", "b"], 5000);
        let dev = repeat(&["a", "b"], 1000);
        for order in 2..=4 {
            let cfg = NGramConfig { order, ..Default::default() };
            let m = ngram_train(&train, &dev, &cfg).unwrap();
            let ce = m.cross_entropy(&dev).unwrap();
            assert!(ce < 0.01, "order {order}: {ce}");
        }
    }

    #[test]
    fn iid_uniform_reaches_log_v() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut draw = |n: usize| -> Vec<String> {
            (0..n).map(|_| format!("s{}", rng.random_range(0..256))).collect()
        };
        let train = draw(200_000);
        let dev = draw(20_000);
        let test = draw(20_000);
        let m = ngram_train(&train, &dev, &NGramConfig::default()).unwrap();
        let ce = m.cross_entropy(&test).unwrap();
        assert!((ce - 256f64.ln()).abs() < 0.1, "{ce}");
    }

    #[test]
    fn weights_lie_on_simplex() {
        let m = ngram_train(&toks("a b c a b d a b c"), &toks("a b c a b"), &NGramConfig::default()).unwrap();
        assert!(m.weights().iter().all(|&w| w >= 0.0));
        assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn training_data_fits_better_than_dev() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut draw = |n: usize| -> Vec<String> {
            (0..n).map(|_| format!("s{}", rng.random_range(0..50))).collect()
        };
        let train = draw(5_000);
        let dev = draw(2_000);
        let m = ngram_train(&train, &dev, &NGramConfig::default()).unwrap();
        assert!(m.cross_entropy(&train).unwrap() <= m.cross_entropy(&dev).unwrap());
    }

    #[test]
    fn single_token_and_oov() {
        let m = ngram_train(&toks("a a b b a b"), &toks("a b"), &NGramConfig::default()).unwrap();
        let ce = m.cross_entropy(&toks("zzz")).unwrap();
        assert!(ce.is_finite() && ce > 0.0);
        assert!(matches!(m.cross_entropy(&[]), Err(BackendError::EmptyTestSet)));
    }

    #[test]
    fn empty_subset_errors() {
        assert!(matches!(
            ngram_train(&[], &toks("a"), &NGramConfig::default()),
            Err(BackendError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn deterministic() {
        let train = toks("x y z x y w x y z z y x");
        let dev = toks("x y z x");
        let a = ngram_train(&train, &dev, &NGramConfig::default()).unwrap();
        let b = ngram_train(&train, &dev, &NGramConfig::default()).unwrap();
        assert_eq!(a.weights(), b.weights());
        assert_eq!(a.cross_entropy(&dev).unwrap(), b.cross_entropy(&dev).unwrap());
    }
}
