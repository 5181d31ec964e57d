//! Query-ad relevance: the four feature representations and a boosted-tree
//! classifier over 5-level labels.
//!
//! The lexical base (shared by all variants) scores the query against each of
//! the five ad components — bidded keyword, title, description, display URL,
//! anchor texts — with six per-component metrics plus a presence indicator.
//! Category information enters three different ways: raw one-hots (Binary),
//! derived overlap features (Derived), or the single learned cosine score of
//! the category-match model (CMA).

mod gbdt;

pub use gbdt::{gbdt_predict, gbdt_predict_raw, gbdt_train, GbdtConfig, GbdtModel};

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clsm::{self, ClsmModel};
use crate::error::{CmaError, Result};
use crate::seeding::derive_seed;
use crate::synth::{Corpus, Document};
use crate::taxonomy::{CategoryId, Taxonomy};
use crate::textprep::tri_letters;

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RelevanceLabel {
    Bad,
    Fair,
    Good,
    Excellent,
    Perfect,
}

impl fmt::Display for RelevanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RelevanceLabel::Bad => "bad",
            RelevanceLabel::Fair => "fair",
            RelevanceLabel::Good => "good",
            RelevanceLabel::Excellent => "excellent",
            RelevanceLabel::Perfect => "perfect",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for RelevanceLabel {
    type Err = CmaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bad" => Ok(RelevanceLabel::Bad),
            "fair" => Ok(RelevanceLabel::Fair),
            "good" => Ok(RelevanceLabel::Good),
            "excellent" => Ok(RelevanceLabel::Excellent),
            "perfect" => Ok(RelevanceLabel::Perfect),
            other => Err(CmaError::Parse(format!("unknown relevance label {other:?}"))),
        }
    }
}

/// Merge bad and fair to 0; good, excellent, and perfect to 1.
pub fn binarize(label: RelevanceLabel) -> u8 {
    match label {
        RelevanceLabel::Bad | RelevanceLabel::Fair => 0,
        RelevanceLabel::Good | RelevanceLabel::Excellent | RelevanceLabel::Perfect => 1,
    }
}

fn token_jaccard(a: &[String], b: &[String]) -> f64 {
    let sa: HashSet<&str> = a.iter().map(String::as_str).collect();
    let sb: HashSet<&str> = b.iter().map(String::as_str).collect();
    if sa.is_empty() && sb.is_empty() {
        return 0.0;
    }
    sa.intersection(&sb).count() as f64 / sa.union(&sb).count() as f64
}

/// Deterministic rubric standing in for human 5-level judgments: graded by
/// how deep the common ancestor of the two rank-1 categories sits.
pub fn label_synthetic_relevance(
    query: &Document,
    ad: &Document,
    taxonomy: &Taxonomy,
) -> Result<RelevanceLabel> {
    let q_cat = query.top_category()?;
    let a_cat = ad.top_category()?;
    let depth = taxonomy.max_depth();
    let lca = taxonomy.lca_depth(q_cat, a_cat)?;
    if q_cat == a_cat {
        let title = ad.components.as_ref().map(|c| &c.title).unwrap_or(&ad.text);
        if token_jaccard(&query.text, title) >= 0.5 {
            return Ok(RelevanceLabel::Perfect);
        }
        return Ok(RelevanceLabel::Excellent);
    }
    if depth >= 1 && lca == depth - 1 {
        return Ok(RelevanceLabel::Good);
    }
    if lca >= 1 {
        return Ok(RelevanceLabel::Fair);
    }
    Ok(RelevanceLabel::Bad)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledPair {
    pub query_id: String,
    pub ad_id: String,
    pub label: RelevanceLabel,
}

/// Label the distinct impressed pairs, subsampling to `max_pairs` with a
/// seeded shuffle when there are more.
pub fn build_labeled_pairs(
    corpus: &Corpus,
    taxonomy: &Taxonomy,
    max_pairs: usize,
    seed: u64,
) -> Result<Vec<LabeledPair>> {
    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    let mut pairs = Vec::new();
    for imp in &corpus.impressions {
        if !seen.insert((&imp.query_id, &imp.ad_id)) {
            continue;
        }
        let q = corpus.query(&imp.query_id)?;
        let a = corpus.ad(&imp.ad_id)?;
        pairs.push(LabeledPair {
            query_id: imp.query_id.clone(),
            ad_id: imp.ad_id.clone(),
            label: label_synthetic_relevance(q, a, taxonomy)?,
        });
    }
    if pairs.len() > max_pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "labeled-pairs"));
        pairs.shuffle(&mut rng);
        pairs.truncate(max_pairs);
    }
    Ok(pairs)
}

pub fn write_labeled_pairs<W: Write>(mut w: W, pairs: &[LabeledPair]) -> Result<()> {
    for p in pairs {
        writeln!(w, "{}\t{}\t{}", p.query_id, p.ad_id, p.label)?;
    }
    Ok(())
}

pub fn read_labeled_pairs<R: BufRead>(reader: R) -> Result<Vec<LabeledPair>> {
    let mut pairs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(CmaError::Parse(format!("labeled pair line {}: want 3 fields", lineno + 1)));
        }
        pairs.push(LabeledPair {
            query_id: f[0].to_owned(),
            ad_id: f[1].to_owned(),
            label: f[2].parse()?,
        });
    }
    Ok(pairs)
}

// ---------------------------------------------------------------------------
// Feature schema and extraction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureVariant {
    NoCat,
    Binary,
    Derived,
    Cma,
}

impl fmt::Display for FeatureVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FeatureVariant::NoCat => "Relevance-NoCat",
            FeatureVariant::Binary => "Relevance-Binary",
            FeatureVariant::Derived => "Relevance-Derived",
            FeatureVariant::Cma => "Relevance-CMA",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for FeatureVariant {
    type Err = CmaError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nocat" | "relevance-nocat" => Ok(FeatureVariant::NoCat),
            "binary" | "relevance-binary" => Ok(FeatureVariant::Binary),
            "derived" | "relevance-derived" => Ok(FeatureVariant::Derived),
            "cma" | "relevance-cma" => Ok(FeatureVariant::Cma),
            other => Err(CmaError::Parse(format!("unknown feature variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    pub variant: FeatureVariant,
    pub names: Vec<String>,
}

impl FeatureSchema {
    pub fn dimension(&self) -> usize {
        self.names.len()
    }
}

const COMPONENTS: [&str; 5] = ["keyword", "title", "description", "display_url", "anchors"];
const METRICS: [&str; 6] =
    ["overlap", "jaccard", "trigram_jaccard", "len_ratio", "coverage", "phrase"];

pub struct FeatureExtractor<'a> {
    pub schema: FeatureSchema,
    taxonomy: &'a Taxonomy,
    cma: Option<&'a ClsmModel>,
    include_lca_depth: bool,
    universe: Vec<CategoryId>,
    universe_pos: HashMap<CategoryId, usize>,
}

impl<'a> FeatureExtractor<'a> {
    /// Build an extractor; the CMA model must be supplied exactly when the
    /// variant is [`FeatureVariant::Cma`].
    pub fn new(
        variant: FeatureVariant,
        taxonomy: &'a Taxonomy,
        cma: Option<&'a ClsmModel>,
        include_lca_depth: bool,
    ) -> Result<Self> {
        match (variant, cma.is_some()) {
            (FeatureVariant::Cma, false) => {
                return Err(CmaError::Feature("CMA variant needs a trained model".to_owned()))
            }
            (FeatureVariant::Cma, true) => {}
            (_, true) => {
                return Err(CmaError::Feature(
                    "only the CMA variant accepts a model".to_owned(),
                ))
            }
            (_, false) => {}
        }
        let universe = taxonomy.leaves();
        let universe_pos = universe.iter().enumerate().map(|(i, &c)| (c, i)).collect();

        let mut names: Vec<String> = Vec::new();
        for component in COMPONENTS {
            for metric in METRICS {
                names.push(format!("{component}_{metric}"));
            }
        }
        for component in COMPONENTS {
            names.push(format!("{component}_present"));
        }
        match variant {
            FeatureVariant::NoCat => {}
            FeatureVariant::Binary => {
                for id in &universe {
                    names.push(format!("query_cat_{id}"));
                }
                for id in &universe {
                    names.push(format!("ad_cat_{id}"));
                }
            }
            FeatureVariant::Derived => {
                names.push("is_category_overlapping".to_owned());
                names.push("category_jaccard".to_owned());
                if include_lca_depth {
                    names.push("normalized_lca_depth".to_owned());
                }
            }
            FeatureVariant::Cma => names.push("cma_score".to_owned()),
        }
        Ok(FeatureExtractor {
            schema: FeatureSchema { variant, names },
            taxonomy,
            cma,
            include_lca_depth,
            universe,
            universe_pos,
        })
    }

    pub fn variant(&self) -> FeatureVariant {
        self.schema.variant
    }

    /// Extract one pair's feature vector; total for any pair of normalized
    /// documents and deterministic.
    pub fn extract(&self, query: &Document, ad: &Document) -> Result<FeatureVector> {
        let mut values = Vec::with_capacity(self.schema.dimension());

        let anchors_flat: Vec<String>;
        let empty: Vec<String> = Vec::new();
        let (keyword, title, description, display_url, anchors) = match &ad.components {
            Some(c) => {
                anchors_flat = c.anchor_texts.iter().flatten().cloned().collect();
                (&c.keyword, &c.title, &c.description, &c.display_url, &anchors_flat)
            }
            None => (&empty, &ad.text, &empty, &empty, &empty),
        };
        let components: [&Vec<String>; 5] = [keyword, title, description, display_url, anchors];

        for component in components {
            push_lexical_metrics(&mut values, &query.text, component);
        }
        for component in components {
            values.push(if component.is_empty() { 0.0 } else { 1.0 });
        }

        match self.schema.variant {
            FeatureVariant::NoCat => {}
            FeatureVariant::Binary => {
                let q_pos = self.universe_pos.get(&query.top_category()?).copied();
                let a_pos = self.universe_pos.get(&ad.top_category()?).copied();
                for i in 0..self.universe.len() {
                    values.push(if q_pos == Some(i) { 1.0 } else { 0.0 });
                }
                for i in 0..self.universe.len() {
                    values.push(if a_pos == Some(i) { 1.0 } else { 0.0 });
                }
            }
            FeatureVariant::Derived => {
                let q_set: HashSet<CategoryId> =
                    query.top_categories.iter().map(|&(c, _)| c).collect();
                let a_set: HashSet<CategoryId> =
                    ad.top_categories.iter().map(|&(c, _)| c).collect();
                let shared = q_set.intersection(&a_set).count();
                let union = q_set.union(&a_set).count();
                values.push(if shared > 0 { 1.0 } else { 0.0 });
                values.push(if union == 0 { 0.0 } else { shared as f64 / union as f64 });
                if self.include_lca_depth {
                    let lca =
                        self.taxonomy.lca_depth(query.top_category()?, ad.top_category()?)?;
                    let depth = self.taxonomy.max_depth().max(1);
                    values.push(lca as f64 / depth as f64);
                }
            }
            FeatureVariant::Cma => {
                let model = self.cma.expect("validated in constructor");
                values.push(clsm::relevance(model, &query.text, title)?);
            }
        }
        debug_assert_eq!(values.len(), self.schema.dimension());
        Ok(FeatureVector(values))
    }
}

fn char_trigram_set(tokens: &[String]) -> HashSet<u32> {
    let mut set = HashSet::new();
    for tok in tokens {
        if let Ok(v) = tri_letters(tok) {
            set.extend(v.entries().iter().map(|&(i, _)| i));
        }
    }
    set
}

fn contains_phrase(haystack: &[String], needle: &[String]) -> bool {
    if needle.is_empty() || needle.len() > haystack.len() {
        return false;
    }
    haystack.windows(needle.len()).any(|w| w == needle)
}

fn push_lexical_metrics(values: &mut Vec<f64>, query: &[String], component: &[String]) {
    if component.is_empty() {
        values.extend_from_slice(&[0.0; 6]);
        return;
    }
    let q_set: HashSet<&str> = query.iter().map(String::as_str).collect();
    let c_set: HashSet<&str> = component.iter().map(String::as_str).collect();
    let overlap = q_set.intersection(&c_set).count();
    let union = q_set.union(&c_set).count();

    values.push(overlap as f64);
    values.push(if union == 0 { 0.0 } else { overlap as f64 / union as f64 });

    let q_tri = char_trigram_set(query);
    let c_tri = char_trigram_set(component);
    let tri_union = q_tri.union(&c_tri).count();
    let tri_shared = q_tri.intersection(&c_tri).count();
    values.push(if tri_union == 0 { 0.0 } else { tri_shared as f64 / tri_union as f64 });

    let (min_len, max_len) = if query.len() <= component.len() {
        (query.len(), component.len())
    } else {
        (component.len(), query.len())
    };
    values.push(if max_len == 0 { 0.0 } else { min_len as f64 / max_len as f64 });

    let covered = q_set.iter().filter(|t| c_set.contains(*t)).count();
    values.push(if q_set.is_empty() { 0.0 } else { covered as f64 / q_set.len() as f64 });

    let phrase = contains_phrase(component, query) || contains_phrase(query, component);
    values.push(if phrase { 1.0 } else { 0.0 });
}

/// Resolve labeled pairs into a feature matrix and binarized label vector.
pub fn extract_matrix(
    extractor: &FeatureExtractor<'_>,
    pairs: &[&LabeledPair],
    corpus: &Corpus,
) -> Result<(Vec<FeatureVector>, Vec<u8>)> {
    let mut xs = Vec::with_capacity(pairs.len());
    let mut ys = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let q = corpus.query(&pair.query_id)?;
        let a = corpus.ad(&pair.ad_id)?;
        xs.push(extractor.extract(q, a)?);
        ys.push(binarize(pair.label));
    }
    Ok((xs, ys))
}

// ---------------------------------------------------------------------------
// Feature matrix files
// ---------------------------------------------------------------------------

/// Header row of feature names, then one tab-separated row per vector.
pub fn write_feature_matrix<W: Write>(
    mut w: W,
    schema: &FeatureSchema,
    xs: &[FeatureVector],
) -> Result<()> {
    writeln!(w, "{}", schema.names.join("\t"))?;
    for x in xs {
        let row: Vec<String> = x.0.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join("\t"))?;
    }
    Ok(())
}

pub fn read_feature_matrix<R: BufRead>(reader: R) -> Result<(Vec<String>, Vec<FeatureVector>)> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| CmaError::Parse("empty feature matrix".to_owned()))?;
    let names: Vec<String> = header.split('\t').map(str::to_owned).collect();
    let mut xs = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split('\t')
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| CmaError::Parse(format!("matrix line {}: bad value", lineno + 2)))
            })
            .collect::<Result<_>>()?;
        if values.len() != names.len() {
            return Err(CmaError::Parse(format!(
                "matrix line {}: {} values for {} columns",
                lineno + 2,
                values.len(),
                names.len()
            )));
        }
        xs.push(FeatureVector(values));
    }
    Ok((names, xs))
}

pub fn write_labels<W: Write>(mut w: W, ys: &[u8]) -> Result<()> {
    for y in ys {
        writeln!(w, "{y}")?;
    }
    Ok(())
}

pub fn read_labels<R: BufRead>(reader: R) -> Result<Vec<u8>> {
    let mut ys = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        match line.as_str() {
            "0" => ys.push(0),
            "1" => ys.push(1),
            other => {
                return Err(CmaError::Parse(format!(
                    "labels line {}: bad label {other:?}",
                    lineno + 1
                )))
            }
        }
    }
    Ok(ys)
}
