use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Document, PeriodId, PeriodSlice, SubsetLadder};

/// Randomly assign whole posts (with their comments) to dev, test and train.
///
/// Posts are shuffled with a seeded ChaCha stream; dev is filled until it
/// holds at least `dev_min` words, then test until `test_min`, and the
/// remaining posts, still in shuffled order, form the training stream.
pub fn make_splits(
    topic: &str,
    period: PeriodId,
    docs: &[Document],
    dev_min: usize,
    test_min: usize,
    floor_size: usize,
    seed: u64,
) -> Result<PeriodSlice, CorpusError> {
    // BTreeMap keeps the pre-shuffle order independent of input order.
    let mut posts: BTreeMap<&str, Vec<&Document>> = BTreeMap::new();
    for d in docs {
        posts.entry(d.post_id()).or_default().push(d);
    }
    let total: usize = docs.iter().map(Document::word_count).sum();
    let need = dev_min + test_min + floor_size;
    if total < need {
        return Err(CorpusError::InsufficientWords {
            period: format!("{topic}/{period}"),
            have: total,
            need,
        });
    }

    let mut units: Vec<(&str, Vec<&Document>)> = posts.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    units.shuffle(&mut rng);

    let mut slice = PeriodSlice {
        topic: topic.to_string(),
        period,
        seed,
        train_full: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
        train_posts: Vec::new(),
        dev_posts: Vec::new(),
        test_posts: Vec::new(),
    };
    for (post_id, mut members) in units {
        // post first, then comments in id order
        members.sort_by(|a, b| (a.kind as u8, &a.id).cmp(&(b.kind as u8, &b.id)));
        let (tokens, ids) = if slice.dev.len() < dev_min {
            (&mut slice.dev, &mut slice.dev_posts)
        } else if slice.test.len() < test_min {
            (&mut slice.test, &mut slice.test_posts)
        } else {
            (&mut slice.train_full, &mut slice.train_posts)
        };
        ids.push(post_id.to_string());
        for d in members {
            tokens.extend(d.tokens().map(str::to_string));
        }
    }
    if slice.dev.len() < dev_min || slice.test.len() < test_min || slice.train_full.len() < floor_size {
        return Err(CorpusError::InsufficientWords {
            period: format!("{topic}/{period}"),
            have: total,
            need,
        });
    }
    Ok(slice)
}

/// Halving ladder `top, ⌈top/2⌉, …, floor` of prefix subsets of the training stream.
pub fn build_subset_ladder(
    period: PeriodId,
    train_len: usize,
    top_size: usize,
    floor_size: usize,
) -> Result<SubsetLadder, CorpusError> {
    if floor_size == 0 || top_size < floor_size {
        return Err(CorpusError::LadderRatio {
            top: top_size,
            floor: floor_size,
        });
    }
    if train_len < top_size {
        return Err(CorpusError::LadderTooLarge {
            have: train_len,
            need: top_size,
        });
    }
    let steps = (top_size as f64 / floor_size as f64).log2().round() as u32;
    let mut sizes = vec![top_size];
    for _ in 0..steps {
        let last = *sizes.last().unwrap();
        sizes.push(last.div_ceil(2));
    }
    if *sizes.last().unwrap() != floor_size {
        return Err(CorpusError::LadderRatio {
            top: top_size,
            floor: floor_size,
        });
    }
    Ok(SubsetLadder { period, sizes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

/// `slice.json` written next to the split text files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceManifest {
    pub topic: String,
    pub period: PeriodId,
    pub seed: u64,
    pub counts: SplitCounts,
    pub train_posts: usize,
    pub dev_posts: usize,
    pub test_posts: usize,
    /// Word offsets into `train.txt` at which each ladder rung ends.
    #[serde(default)]
    pub ladder: Vec<usize>,
    pub config_hash: String,
}

fn write_tokens(path: &Path, tokens: &[String]) -> Result<(), CorpusError> {
    let mut s = tokens.join(" ");
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn read_tokens(path: &Path) -> Result<Vec<String>, CorpusError> {
    Ok(fs::read_to_string(path)?
        .split_whitespace()
        .map(str::to_string)
        .collect())
}

/// Write `train.txt`, `dev.txt`, `test.txt` and `slice.json` into `dir`.
pub fn write_slice(
    dir: &Path,
    slice: &PeriodSlice,
    ladder: Option<&SubsetLadder>,
    config_hash: &str,
) -> Result<SliceManifest, CorpusError> {
    fs::create_dir_all(dir)?;
    write_tokens(&dir.join("train.txt"), &slice.train_full)?;
    write_tokens(&dir.join("dev.txt"), &slice.dev)?;
    write_tokens(&dir.join("test.txt"), &slice.test)?;
    let manifest = SliceManifest {
        topic: slice.topic.clone(),
        period: slice.period,
        seed: slice.seed,
        counts: slice.counts(),
        train_posts: slice.train_posts.len(),
        dev_posts: slice.dev_posts.len(),
        test_posts: slice.test_posts.len(),
        ladder: ladder.map(|l| l.sizes.clone()).unwrap_or_default(),
        config_hash: config_hash.to_string(),
    };
    fs::write(dir.join("slice.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Load a slice directory written by [`write_slice`]. Post ids are not
/// persisted, so the `*_posts` vectors come back empty.
pub fn load_slice(dir: &Path) -> Result<(SliceManifest, PeriodSlice), CorpusError> {
    let manifest: SliceManifest = serde_json::from_str(&fs::read_to_string(dir.join("slice.json"))?)?;
    let slice = PeriodSlice {
        topic: manifest.topic.clone(),
        period: manifest.period,
        seed: manifest.seed,
        train_full: read_tokens(&dir.join("train.txt"))?,
        dev: read_tokens(&dir.join("dev.txt"))?,
        test: read_tokens(&dir.join("test.txt"))?,
        train_posts: Vec::new(),
        dev_posts: Vec::new(),
        test_posts: Vec::new(),
    };
    Ok((manifest, slice))
}
