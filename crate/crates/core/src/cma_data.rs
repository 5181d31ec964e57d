//! Category-match training data: positives over the g threshold, noise
//! injection for robustness studies, and query-disjoint train/eval splits.
//!
//! `g` is the binary rank-1 exact-match indicator by default (δ = 0.5 sits
//! between its two values). Parent/descendant relationships never count as a
//! match. A pluggable similarity hook is exposed for experimentation but
//! nothing in the pipeline uses it.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clsm::TrainPair;
use crate::error::{CmaError, Result};
use crate::seeding::derive_seed;
use crate::synth::{Corpus, Document, Impression};

#[derive(Debug, Clone, PartialEq)]
pub struct CmaDataConfig {
    /// Threshold above which a pair counts as positive.
    pub delta: f64,
    /// Noisy share of the final positive set, in [0, 0.5].
    pub noise_fraction: f64,
    /// Fraction of positive pairs held out for evaluation.
    pub eval_holdout_fraction: f64,
    pub seed: u64,
}

impl Default for CmaDataConfig {
    fn default() -> Self {
        CmaDataConfig {
            delta: 0.5,
            noise_fraction: 0.0,
            eval_holdout_fraction: 0.005,
            seed: 1,
        }
    }
}

impl CmaDataConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.noise_fraction) {
            return Err(CmaError::Config("noise_fraction must lie in [0, 0.5]".to_owned()));
        }
        if !(self.eval_holdout_fraction > 0.0 && self.eval_holdout_fraction < 1.0) {
            return Err(CmaError::Config("eval_holdout_fraction must lie in (0, 1)".to_owned()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PairRow {
    pub query_id: String,
    pub ad_id: String,
    pub label: u8,
    pub is_noise: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairSet {
    pub rows: Vec<PairRow>,
}

impl PairSet {
    /// Wrap rows, rejecting duplicate `(query, ad, label)` triples.
    pub fn new(rows: Vec<PairRow>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(rows.len());
        for row in &rows {
            if !seen.insert((row.query_id.as_str(), row.ad_id.as_str(), row.label)) {
                return Err(CmaError::Data(format!(
                    "duplicate pair row ({}, {}, {})",
                    row.query_id, row.ad_id, row.label
                )));
            }
        }
        Ok(PairSet { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.rows.iter().filter(|r| r.label == 1).count()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for row in &self.rows {
            writeln!(
                w,
                "{}\t{}\t{}\t{}",
                row.query_id,
                row.ad_id,
                row.label,
                u8::from(row.is_noise)
            )?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(CmaError::Parse(format!(
                    "pair line {}: want 4 fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let label = fields[2]
                .parse::<u8>()
                .ok()
                .filter(|l| *l <= 1)
                .ok_or_else(|| CmaError::Parse(format!("pair line {}: bad label", lineno + 1)))?;
            let is_noise = match fields[3] {
                "0" => false,
                "1" => true,
                _ => return Err(CmaError::Parse(format!("pair line {}: bad noise flag", lineno + 1))),
            };
            rows.push(PairRow {
                query_id: fields[0].to_owned(),
                ad_id: fields[1].to_owned(),
                label,
                is_noise,
            });
        }
        PairSet::new(rows)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

/// Binary category similarity: 1 when the rank-1 categories match exactly,
/// else 0. Parent/descendant relationships do not count.
pub fn g_top_match(query: &Document, ad: &Document) -> Result<f64> {
    let q = query.top_category()?;
    let a = ad.top_category()?;
    Ok(if q == a { 1.0 } else { 0.0 })
}

/// Distinct impressed pairs with `g(q, a) > δ`, in first-impression order.
pub fn build_positive_set(
    impressions: &[Impression],
    corpus: &Corpus,
    config: &CmaDataConfig,
) -> Result<PairSet> {
    build_positive_set_with(&g_top_match, impressions, corpus, config)
}

/// Same as [`build_positive_set`] with a caller-supplied similarity.
pub fn build_positive_set_with(
    g: &dyn Fn(&Document, &Document) -> Result<f64>,
    impressions: &[Impression],
    corpus: &Corpus,
    config: &CmaDataConfig,
) -> Result<PairSet> {
    config.validate()?;
    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    let mut rows = Vec::new();
    for imp in impressions {
        let query = corpus.query(&imp.query_id)?;
        let ad = corpus.ad(&imp.ad_id)?;
        if g(query, ad)? > config.delta && seen.insert((&imp.query_id, &imp.ad_id)) {
            rows.push(PairRow {
                query_id: imp.query_id.clone(),
                ad_id: imp.ad_id.clone(),
                label: 1,
                is_noise: false,
            });
        }
    }
    PairSet::new(rows)
}

/// Distinct impressed pairs that are NOT category matches, in
/// first-impression order; noise injection and eval negatives draw from this.
pub fn non_matching_pool(
    impressions: &[Impression],
    corpus: &Corpus,
    config: &CmaDataConfig,
) -> Result<Vec<(String, String)>> {
    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    let mut pool = Vec::new();
    for imp in impressions {
        let query = corpus.query(&imp.query_id)?;
        let ad = corpus.ad(&imp.ad_id)?;
        if g_top_match(query, ad)? <= config.delta && seen.insert((&imp.query_id, &imp.ad_id)) {
            pool.push((imp.query_id.clone(), imp.ad_id.clone()));
        }
    }
    Ok(pool)
}

/// Append mislabeled positives until the noisy share of the result is `f`.
///
/// Adds `round(f/(1-f) · |D+|)` non-matching impressed pairs as label-1,
/// is_noise rows, sampled without replacement. The sample is a seeded-shuffle
/// prefix, so the rows added at a smaller fraction are a subset of those
/// added at a larger one under the same seed.
pub fn inject_noise(
    d_plus: &PairSet,
    impressions: &[Impression],
    corpus: &Corpus,
    fraction: f64,
    seed: u64,
) -> Result<PairSet> {
    if !(0.0..=0.5).contains(&fraction) {
        return Err(CmaError::Config("noise fraction must lie in [0, 0.5]".to_owned()));
    }
    let clean = d_plus.rows.iter().filter(|r| !r.is_noise && r.label == 1).count();
    let n_noise = (fraction / (1.0 - fraction) * clean as f64).round() as usize;
    if n_noise == 0 {
        return Ok(d_plus.clone());
    }

    let config = CmaDataConfig::default();
    let mut pool = non_matching_pool(impressions, corpus, &config)?;
    let existing: HashSet<(&str, &str)> = d_plus
        .rows
        .iter()
        .map(|r| (r.query_id.as_str(), r.ad_id.as_str()))
        .collect();
    pool.retain(|(q, a)| !existing.contains(&(q.as_str(), a.as_str())));
    if pool.len() < n_noise {
        return Err(CmaError::Data(format!(
            "need {n_noise} non-matching impressed pairs for noise, have {}",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "noise-injection"));
    pool.shuffle(&mut rng);

    let mut rows = d_plus.rows.clone();
    rows.extend(pool.into_iter().take(n_noise).map(|(query_id, ad_id)| PairRow {
        query_id,
        ad_id,
        label: 1,
        is_noise: true,
    }));
    PairSet::new(rows)
}

#[derive(Debug, Clone)]
pub struct SplitOutput {
    pub train: PairSet,
    pub eval: PairSet,
    /// Queries assigned to the eval side; nothing touching them may train.
    pub eval_query_ids: HashSet<String>,
}

/// Query-disjoint train/eval split.
///
/// The eval target is `eval_holdout_fraction` of the clean positive rows.
/// Whole queries move to the eval side until they cover the target in both
/// matching AND non-matching impressed pairs (balance needs the latter);
/// the eval set is then exactly `target` label-1 rows plus `target`
/// non-matching label-0 rows, all from held-out queries. Noise rows never
/// enter the eval set, and no query appears on both sides.
pub fn split(
    pairs: &PairSet,
    impressions: &[Impression],
    corpus: &Corpus,
    config: &CmaDataConfig,
) -> Result<SplitOutput> {
    config.validate()?;
    if pairs.len() < 200 {
        return Err(CmaError::Data(format!(
            "need at least 200 pairs to split, got {}",
            pairs.len()
        )));
    }
    let clean_positive = pairs.rows.iter().filter(|r| r.label == 1 && !r.is_noise).count();
    let target =
        ((clean_positive as f64) * config.eval_holdout_fraction).round().max(1.0) as usize;

    let mut pos_per_query: HashMap<&str, usize> = HashMap::new();
    for row in &pairs.rows {
        if row.label == 1 && !row.is_noise {
            *pos_per_query.entry(row.query_id.as_str()).or_default() += 1;
        }
    }
    let negative_pool = non_matching_pool(impressions, corpus, config)?;
    let mut neg_per_query: HashMap<&str, usize> = HashMap::new();
    for (q, _) in &negative_pool {
        *neg_per_query.entry(q.as_str()).or_default() += 1;
    }

    let mut query_ids: Vec<&str> = pos_per_query.keys().copied().collect();
    query_ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "split"));
    query_ids.shuffle(&mut rng);

    let mut eval_query_ids: HashSet<String> = HashSet::new();
    let (mut pos_held, mut neg_held) = (0usize, 0usize);
    for qid in &query_ids {
        if pos_held >= target && neg_held >= target {
            break;
        }
        eval_query_ids.insert((*qid).to_owned());
        pos_held += pos_per_query[qid];
        neg_held += neg_per_query.get(qid).copied().unwrap_or(0);
    }
    if pos_held < target || neg_held < target {
        return Err(CmaError::Data(format!(
            "cannot build a balanced eval of {target} pairs: held-out queries cover \
             {pos_held} matching and {neg_held} non-matching pairs"
        )));
    }

    let mut train_rows = Vec::new();
    let mut eval_candidates = Vec::new();
    for row in &pairs.rows {
        if eval_query_ids.contains(&row.query_id) {
            if !row.is_noise && row.label == 1 {
                eval_candidates.push(row.clone());
            }
        } else {
            train_rows.push(row.clone());
        }
    }
    eval_candidates.shuffle(&mut rng);
    eval_candidates.truncate(target);
    let mut eval_rows = eval_candidates;

    let mut pool: Vec<(String, String)> = negative_pool
        .into_iter()
        .filter(|(q, _)| eval_query_ids.contains(q))
        .collect();
    pool.shuffle(&mut rng);
    eval_rows.extend(pool.into_iter().take(target).map(|(query_id, ad_id)| PairRow {
        query_id,
        ad_id,
        label: 0,
        is_noise: false,
    }));

    Ok(SplitOutput {
        train: PairSet::new(train_rows)?,
        eval: PairSet::new(eval_rows)?,
        eval_query_ids,
    })
}

/// Resolve label-1 rows into (query text, ad title) training pairs.
pub fn pair_texts(pairs: &PairSet, corpus: &Corpus) -> Result<Vec<TrainPair>> {
    pairs
        .rows
        .iter()
        .filter(|r| r.label == 1)
        .map(|r| {
            Ok(TrainPair {
                query: corpus.query(&r.query_id)?.text.clone(),
                ad: corpus.ad(&r.ad_id)?.text.clone(),
            })
        })
        .collect()
}
