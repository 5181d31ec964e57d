//! Synthetic taxonomy, document corpus, and impression-log generation.
//!
//! Stands in for the serving logs and category hierarchy of a real engine.
//! Every document is generated from one leaf's vocabulary, and that leaf is
//! its rank-1 category — the categorizer is exact by construction, so the
//! category ground truth is never ambiguous. Leaf vocabularies borrow a
//! decaying share of words from their ancestors' pools, which makes lexical
//! similarity fall off with distance in the tree: same leaf > siblings >
//! cousins > unrelated subtrees.
//!
//! All generation is a pure function of (config, seed): equal inputs yield
//! byte-identical serialized output.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CmaError, Result};
use crate::seeding::derive_seed;
use crate::taxonomy::{CategoryId, CategoryNode, Taxonomy};

/// Generic tokens shared by every category, mixed into queries and titles.
pub const STOP_WORDS: &[&str] = &[
    "the", "and", "for", "with", "buy", "best", "online", "shop", "new", "sale", "top", "near",
    "home", "free", "price",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub taxonomy_depth: u32,
    pub branching_factor: u32,
    pub leaf_vocab_size: usize,
    pub num_queries: usize,
    pub num_ads: usize,
    pub query_zipf_exponent: f64,
    pub impression_count: usize,
    /// Number of categories attached to each document.
    pub top_k: usize,
    pub cross_category_impression_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 1,
            taxonomy_depth: 3,
            branching_factor: 4,
            leaf_vocab_size: 40,
            num_queries: 3000,
            num_ads: 2000,
            query_zipf_exponent: 1.0,
            impression_count: 80_000,
            top_k: 3,
            cross_category_impression_rate: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.taxonomy_depth < 1 {
            return Err(CmaError::Config("taxonomy_depth must be at least 1".to_owned()));
        }
        if self.branching_factor < 2 {
            return Err(CmaError::Config("branching_factor must be at least 2".to_owned()));
        }
        if self.node_count()? > 1_000_000 {
            return Err(CmaError::Config("taxonomy too large (over 1M nodes)".to_owned()));
        }
        if self.leaf_vocab_size < 10 {
            return Err(CmaError::Config("leaf_vocab_size must be at least 10".to_owned()));
        }
        if self.num_queries == 0 || self.num_ads == 0 || self.impression_count == 0 {
            return Err(CmaError::Config("corpus counts must be positive".to_owned()));
        }
        if !(self.query_zipf_exponent > 0.0) {
            return Err(CmaError::Config("query_zipf_exponent must be positive".to_owned()));
        }
        if self.top_k == 0 {
            return Err(CmaError::Config("top_k must be positive".to_owned()));
        }
        if !(0.0..=1.0).contains(&self.cross_category_impression_rate) {
            return Err(CmaError::Config(
                "cross_category_impression_rate must lie in [0, 1]".to_owned(),
            ));
        }
        Ok(())
    }

    pub fn leaf_count(&self) -> Result<usize> {
        (self.branching_factor as usize)
            .checked_pow(self.taxonomy_depth)
            .ok_or_else(|| CmaError::Config("taxonomy dimensions overflow".to_owned()))
    }

    pub fn node_count(&self) -> Result<usize> {
        let b = self.branching_factor as usize;
        let mut total = 1usize;
        let mut level = 1usize;
        for _ in 0..self.taxonomy_depth {
            level = level
                .checked_mul(b)
                .ok_or_else(|| CmaError::Config("taxonomy dimensions overflow".to_owned()))?;
            total = total
                .checked_add(level)
                .ok_or_else(|| CmaError::Config("taxonomy dimensions overflow".to_owned()))?;
        }
        Ok(total)
    }
}

// ---------------------------------------------------------------------------
// Taxonomy generation
// ---------------------------------------------------------------------------

/// Share of a leaf's vocabulary borrowed from ancestors (the rest is its
/// own). Higher sharing makes related categories lexically closer, which is
/// what gives the category-match task its difficulty.
const BORROWED_SHARE: f64 = 0.7;

/// How many words a leaf borrows from the ancestor `dist` levels above it,
/// and how many are its own. The borrowed share halves per level going up,
/// so siblings share the most and far subtrees almost nothing.
fn vocab_draw_counts(vocab_size: usize, depth: u32) -> (usize, Vec<usize>) {
    let weights: Vec<f64> = (1..=depth).map(|d| 0.5f64.powi(d as i32 - 1)).collect();
    let total: f64 = weights.iter().sum();
    let borrowed: Vec<usize> = weights
        .iter()
        .map(|w| ((BORROWED_SHARE * vocab_size as f64) * w / total).round() as usize)
        .collect();
    let own = vocab_size.saturating_sub(borrowed.iter().sum()).max(1);
    (own, borrowed)
}

fn fresh_word(rng: &mut ChaCha8Rng, stems: &[String], used: &mut HashSet<String>) -> String {
    const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
    loop {
        let stem = &stems[rng.gen_range(0..stems.len())];
        let suffix_len = rng.gen_range(3..=4);
        let mut word = stem.clone();
        for _ in 0..suffix_len {
            word.push(LETTERS[rng.gen_range(0..LETTERS.len())] as char);
        }
        if used.insert(word.clone()) {
            return word;
        }
    }
}

/// Build the complete taxonomy tree for `config`.
///
/// Nodes are numbered breadth-first with the root at id 0. Each node gets a
/// pool of unique synthetic words built on a few node-specific stems; leaves
/// compose their vocabulary from their own pool plus borrowed ancestor words.
pub fn build_taxonomy(config: &SynthConfig) -> Result<Taxonomy> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "taxonomy"));
    let depth = config.taxonomy_depth;
    let branching = config.branching_factor as usize;
    let (own_count, borrowed_counts) = vocab_draw_counts(config.leaf_vocab_size, depth);

    let mut used_words: HashSet<String> = STOP_WORDS.iter().map(|s| s.to_string()).collect();
    let mut nodes: Vec<CategoryNode> = Vec::with_capacity(config.node_count()?);
    let mut level_start = 0usize;
    let mut level_len = 1usize;

    for level in 0..=depth {
        let next_start = nodes.len().max(1);
        let count = if level == 0 { 1 } else { level_len };
        for i in 0..count {
            let (id, parent) = if level == 0 {
                (0usize, None)
            } else {
                let id = next_start + i;
                let parent = level_start + i / branching;
                (id, Some(CategoryId(parent as u32)))
            };
            const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
            let stems: Vec<String> = (0..3)
                .map(|_| {
                    (0..3)
                        .map(|_| LETTERS[rng.gen_range(0..LETTERS.len())] as char)
                        .collect()
                })
                .collect();
            let pool_size = if level == depth {
                own_count
            } else {
                // Internal pools are sized a little above what each child
                // draws, so sibling draws mostly coincide.
                let dist = (depth - level) as usize;
                ((borrowed_counts[dist - 1] as f64 * 1.25).ceil() as usize).max(2)
            };
            let vocab: Vec<String> =
                (0..pool_size).map(|_| fresh_word(&mut rng, &stems, &mut used_words)).collect();
            nodes.push(CategoryNode {
                id: CategoryId(id as u32),
                parent,
                depth: level,
                vocab,
            });
        }
        if level > 0 {
            level_start = next_start;
        }
        level_len = if level == 0 { branching } else { level_len * branching };
    }

    // Compose leaf vocabularies: own pool plus borrowed ancestor words.
    let leaf_start = nodes.len() - config.leaf_count()?;
    for leaf_idx in leaf_start..nodes.len() {
        let mut ancestors = Vec::new();
        let mut cursor = nodes[leaf_idx].parent;
        while let Some(p) = cursor {
            ancestors.push(p.index());
            cursor = nodes[p.index()].parent;
        }
        let mut vocab = nodes[leaf_idx].vocab.clone();
        for (dist, ancestor_idx) in ancestors.into_iter().enumerate() {
            let want = borrowed_counts[dist];
            let pool = &nodes[ancestor_idx].vocab;
            let picks: Vec<String> =
                pool.choose_multiple(&mut rng, want.min(pool.len())).cloned().collect();
            vocab.extend(picks);
        }
        nodes[leaf_idx].vocab = vocab;
    }

    let taxonomy = Taxonomy::new(nodes)?;
    enforce_leaf_separation(&taxonomy)?;
    Ok(taxonomy)
}

/// Non-sibling leaves must share fewer than half their tokens.
fn enforce_leaf_separation(taxonomy: &Taxonomy) -> Result<()> {
    let leaves = taxonomy.leaves();
    let sets: Vec<HashSet<&str>> = leaves
        .iter()
        .map(|&id| {
            taxonomy
                .node(id)
                .expect("leaf id from leaves()")
                .vocab
                .iter()
                .map(String::as_str)
                .collect()
        })
        .collect();
    for i in 0..leaves.len() {
        for j in (i + 1)..leaves.len() {
            if taxonomy.are_siblings(leaves[i], leaves[j])? {
                continue;
            }
            let shared = sets[i].intersection(&sets[j]).count();
            let smaller = sets[i].len().min(sets[j].len());
            if shared * 2 >= smaller {
                return Err(CmaError::Config(format!(
                    "leaves {} and {} share {shared}/{smaller} tokens",
                    leaves[i], leaves[j]
                )));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Documents and impressions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocKind {
    Query,
    Ad,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AdComponents {
    pub keyword: Vec<String>,
    pub title: Vec<String>,
    pub description: Vec<String>,
    pub display_url: Vec<String>,
    pub anchor_texts: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub kind: DocKind,
    /// Normalized token sequence; for ads this is the title.
    pub text: Vec<String>,
    pub components: Option<AdComponents>,
    /// Ranked `(category, confidence)` pairs, confidence descending.
    pub top_categories: Vec<(CategoryId, f64)>,
}

impl Document {
    pub fn top_category(&self) -> Result<CategoryId> {
        self.top_categories
            .first()
            .map(|&(id, _)| id)
            .ok_or_else(|| CmaError::Data(format!("document {} has no categories", self.id)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Impression {
    pub query_id: String,
    pub ad_id: String,
    pub clicked: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub queries: Vec<Document>,
    pub ads: Vec<Document>,
    pub impressions: Vec<Impression>,
    query_index: HashMap<String, usize>,
    ad_index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(queries: Vec<Document>, ads: Vec<Document>, impressions: Vec<Impression>) -> Self {
        let query_index = queries.iter().enumerate().map(|(i, d)| (d.id.clone(), i)).collect();
        let ad_index = ads.iter().enumerate().map(|(i, d)| (d.id.clone(), i)).collect();
        Corpus { queries, ads, impressions, query_index, ad_index }
    }

    pub fn query(&self, id: &str) -> Result<&Document> {
        self.query_index
            .get(id)
            .map(|&i| &self.queries[i])
            .ok_or_else(|| CmaError::Lookup(format!("unknown query id {id}")))
    }

    pub fn ad(&self, id: &str) -> Result<&Document> {
        self.ad_index
            .get(id)
            .map(|&i| &self.ads[i])
            .ok_or_else(|| CmaError::Lookup(format!("unknown ad id {id}")))
    }
}

/// Exact Zipf sampler over ranks `0..n` (rank r has weight (r+1)^-s).
#[derive(Debug, Clone)]
pub struct ZipfTable {
    cumulative: Vec<f64>,
}

impl ZipfTable {
    pub fn new(n: usize, exponent: f64) -> Self {
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0.0;
        for r in 1..=n {
            acc += (r as f64).powf(-exponent);
            cumulative.push(acc);
        }
        ZipfTable { cumulative }
    }

    pub fn total(&self) -> f64 {
        *self.cumulative.last().expect("nonempty table")
    }

    /// Probability mass of the first `r` ranks.
    pub fn partial_mass(&self, r: usize) -> f64 {
        self.cumulative[r.min(self.cumulative.len()) - 1] / self.total()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen::<f64>() * self.total();
        self.cumulative.partition_point(|&c| c < u).min(self.cumulative.len() - 1)
    }
}

fn draw_top_categories(
    rng: &mut ChaCha8Rng,
    leaf: CategoryId,
    node_count: usize,
    k: usize,
) -> Vec<(CategoryId, f64)> {
    let mut cats = Vec::with_capacity(k);
    let mut seen: HashSet<u32> = HashSet::new();
    seen.insert(leaf.0);
    let mut conf = rng.gen_range(0.5..1.0);
    cats.push((leaf, conf));
    while cats.len() < k.min(node_count) {
        let candidate = rng.gen_range(0..node_count as u32);
        if seen.insert(candidate) {
            conf *= rng.gen_range(0.3..0.9);
            cats.push((CategoryId(candidate), conf));
        }
    }
    cats
}

fn leaf_phrase(rng: &mut ChaCha8Rng, vocab: &[String], min: usize, max: usize) -> Vec<String> {
    let count = rng.gen_range(min..=max).min(vocab.len()).max(1);
    vocab.choose_multiple(rng, count).cloned().collect()
}

fn maybe_stop_word(rng: &mut ChaCha8Rng, tokens: &mut Vec<String>, prob: f64) {
    if rng.gen_bool(prob) {
        let word = STOP_WORDS[rng.gen_range(0..STOP_WORDS.len())].to_owned();
        let pos = rng.gen_range(0..=tokens.len());
        tokens.insert(pos, word);
    }
}

/// Generate queries, ads, and the impression log for a taxonomy.
pub fn generate_corpus(taxonomy: &Taxonomy, config: &SynthConfig) -> Result<Corpus> {
    config.validate()?;
    let leaves = taxonomy.leaves();
    if leaves.len() < 2 {
        return Err(CmaError::Config("taxonomy needs at least 2 leaves".to_owned()));
    }
    if config.num_ads < leaves.len() {
        return Err(CmaError::Config(format!(
            "num_ads ({}) must cover every leaf ({} leaves)",
            config.num_ads,
            leaves.len()
        )));
    }
    for &leaf in &leaves {
        if taxonomy.node(leaf)?.vocab.is_empty() {
            return Err(CmaError::Config(format!("leaf {leaf} has an empty vocabulary")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "corpus"));
    let node_count = taxonomy.len();

    let mut queries = Vec::with_capacity(config.num_queries);
    let mut query_leaf_pos = Vec::with_capacity(config.num_queries);
    for i in 0..config.num_queries {
        let leaf_pos = rng.gen_range(0..leaves.len());
        let leaf = leaves[leaf_pos];
        let vocab = &taxonomy.node(leaf)?.vocab;
        let mut text = leaf_phrase(&mut rng, vocab, 2, 3);
        maybe_stop_word(&mut rng, &mut text, 0.5);
        maybe_stop_word(&mut rng, &mut text, 0.25);
        queries.push(Document {
            id: format!("q{i:06}"),
            kind: DocKind::Query,
            text,
            components: None,
            top_categories: draw_top_categories(&mut rng, leaf, node_count, config.top_k),
        });
        query_leaf_pos.push(leaf_pos);
    }

    let mut ads = Vec::with_capacity(config.num_ads);
    let mut ads_by_leaf: Vec<Vec<usize>> = vec![Vec::new(); leaves.len()];
    for i in 0..config.num_ads {
        let leaf_pos = i % leaves.len();
        let leaf = leaves[leaf_pos];
        let vocab = &taxonomy.node(leaf)?.vocab;
        let mut title = leaf_phrase(&mut rng, vocab, 3, 5);
        maybe_stop_word(&mut rng, &mut title, 0.4);
        let kw_len = rng.gen_range(1..=3usize).min(title.len());
        let kw_start = rng.gen_range(0..=title.len() - kw_len);
        let keyword = title[kw_start..kw_start + kw_len].to_vec();
        let mut description = title.clone();
        description.extend(leaf_phrase(&mut rng, vocab, 2, 4));
        let display_url = vec![title.iter().take(3).cloned().collect::<String>()];
        let anchor_count = rng.gen_range(0..=3usize);
        let anchor_texts: Vec<Vec<String>> =
            (0..anchor_count).map(|_| leaf_phrase(&mut rng, vocab, 1, 3)).collect();
        ads.push(Document {
            id: format!("a{i:06}"),
            kind: DocKind::Ad,
            text: title.clone(),
            components: Some(AdComponents {
                keyword,
                title,
                description,
                display_url,
                anchor_texts,
            }),
            top_categories: draw_top_categories(&mut rng, leaf, node_count, config.top_k),
        });
        ads_by_leaf[leaf_pos].push(i);
    }

    let zipf = ZipfTable::new(config.num_queries, config.query_zipf_exponent);
    let mut impressions = Vec::with_capacity(config.impression_count);
    for _ in 0..config.impression_count {
        let qi = zipf.sample(&mut rng);
        let q_leaf_pos = query_leaf_pos[qi];
        let cross = rng.gen_bool(config.cross_category_impression_rate);
        let ad_leaf_pos = if cross {
            let mut pos = rng.gen_range(0..leaves.len() - 1);
            if pos >= q_leaf_pos {
                pos += 1;
            }
            pos
        } else {
            q_leaf_pos
        };
        let pool = &ads_by_leaf[ad_leaf_pos];
        let ad_idx = pool[rng.gen_range(0..pool.len())];
        let clicked = rng.gen_bool(if cross { 0.05 } else { 0.2 });
        impressions.push(Impression {
            query_id: queries[qi].id.clone(),
            ad_id: ads[ad_idx].id.clone(),
            clicked,
        });
    }

    Ok(Corpus::new(queries, ads, impressions))
}

// ---------------------------------------------------------------------------
// Corpus file formats
// ---------------------------------------------------------------------------

fn format_categories(cats: &[(CategoryId, f64)]) -> String {
    cats.iter().map(|(id, c)| format!("{id}:{c}")).collect::<Vec<_>>().join(",")
}

fn parse_categories(s: &str) -> Result<Vec<(CategoryId, f64)>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|item| {
            let (id, conf) = item
                .split_once(':')
                .ok_or_else(|| CmaError::Parse(format!("bad category entry {item:?}")))?;
            let id = id
                .parse::<u32>()
                .map_err(|_| CmaError::Parse(format!("bad category id {id:?}")))?;
            let conf = conf
                .parse::<f64>()
                .map_err(|_| CmaError::Parse(format!("bad confidence {conf:?}")))?;
            Ok((CategoryId(id), conf))
        })
        .collect()
}

fn write_document<W: Write>(w: &mut W, doc: &Document) -> Result<()> {
    let kind = match doc.kind {
        DocKind::Query => "query",
        DocKind::Ad => "ad",
    };
    write!(
        w,
        "id={}\tkind={kind}\tcats={}\ttext={}",
        doc.id,
        format_categories(&doc.top_categories),
        doc.text.join(" ")
    )?;
    if let Some(c) = &doc.components {
        let anchors =
            c.anchor_texts.iter().map(|p| p.join(" ")).collect::<Vec<_>>().join("|");
        write!(
            w,
            "\tkeyword={}\ttitle={}\tdescription={}\tdisplayurl={}\tanchors={anchors}",
            c.keyword.join(" "),
            c.title.join(" "),
            c.description.join(" "),
            c.display_url.join(" "),
        )?;
    }
    writeln!(w)?;
    Ok(())
}

fn split_tokens(s: &str) -> Vec<String> {
    s.split(' ').filter(|t| !t.is_empty()).map(str::to_owned).collect()
}

fn parse_document(line: &str, lineno: usize) -> Result<Document> {
    let mut fields: HashMap<&str, &str> = HashMap::new();
    for field in line.split('\t') {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| CmaError::Parse(format!("line {lineno}: field {field:?} lacks '='")))?;
        if fields.insert(key, value).is_some() {
            return Err(CmaError::Parse(format!("line {lineno}: duplicate field {key:?}")));
        }
    }
    let get = |key: &str| {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| CmaError::Parse(format!("line {lineno}: missing field {key:?}")))
    };
    let id = get("id")?.to_owned();
    let kind = match get("kind")? {
        "query" => DocKind::Query,
        "ad" => DocKind::Ad,
        other => return Err(CmaError::Parse(format!("line {lineno}: unknown kind {other:?}"))),
    };
    let top_categories = parse_categories(get("cats")?)?;
    let text = split_tokens(get("text")?);
    let components = match kind {
        DocKind::Query => None,
        DocKind::Ad => {
            let anchors_raw = get("anchors")?;
            let anchor_texts: Vec<Vec<String>> = if anchors_raw.is_empty() {
                Vec::new()
            } else {
                anchors_raw.split('|').map(split_tokens).collect()
            };
            Some(AdComponents {
                keyword: split_tokens(get("keyword")?),
                title: split_tokens(get("title")?),
                description: split_tokens(get("description")?),
                display_url: split_tokens(get("displayurl")?),
                anchor_texts,
            })
        }
    };
    Ok(Document { id, kind, text, components, top_categories })
}

pub fn write_documents<W: Write>(mut w: W, docs: &[Document]) -> Result<()> {
    for doc in docs {
        write_document(&mut w, doc)?;
    }
    Ok(())
}

pub fn read_documents<R: BufRead>(reader: R) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        docs.push(parse_document(&line, lineno + 1)?);
    }
    Ok(docs)
}

pub fn write_impressions<W: Write>(mut w: W, impressions: &[Impression]) -> Result<()> {
    for imp in impressions {
        writeln!(w, "{}\t{}\t{}", imp.query_id, imp.ad_id, u8::from(imp.clicked))?;
    }
    Ok(())
}

pub fn read_impressions<R: BufRead>(reader: R) -> Result<Vec<Impression>> {
    let mut impressions = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(q), Some(a), Some(c)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(CmaError::Parse(format!("impressions line {}: want 3 fields", lineno + 1)));
        };
        let clicked = match c {
            "0" => false,
            "1" => true,
            other => {
                return Err(CmaError::Parse(format!(
                    "impressions line {}: bad clicked flag {other:?}",
                    lineno + 1
                )))
            }
        };
        impressions.push(Impression { query_id: q.to_owned(), ad_id: a.to_owned(), clicked });
    }
    Ok(impressions)
}

pub const TAXONOMY_FILE: &str = "taxonomy.tsv";
pub const QUERIES_FILE: &str = "queries.txt";
pub const ADS_FILE: &str = "ads.txt";
pub const IMPRESSIONS_FILE: &str = "impressions.tsv";

/// Write taxonomy and corpus files into `dir`.
pub fn save_corpus(dir: &Path, taxonomy: &Taxonomy, corpus: &Corpus) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    taxonomy.save(&dir.join(TAXONOMY_FILE))?;
    let queries = std::fs::File::create(dir.join(QUERIES_FILE))?;
    write_documents(std::io::BufWriter::new(queries), &corpus.queries)?;
    let ads = std::fs::File::create(dir.join(ADS_FILE))?;
    write_documents(std::io::BufWriter::new(ads), &corpus.ads)?;
    let imps = std::fs::File::create(dir.join(IMPRESSIONS_FILE))?;
    write_impressions(std::io::BufWriter::new(imps), &corpus.impressions)?;
    Ok(())
}

/// Load taxonomy and corpus files from `dir`.
pub fn load_corpus(dir: &Path) -> Result<(Taxonomy, Corpus)> {
    let taxonomy = Taxonomy::load(&dir.join(TAXONOMY_FILE))?;
    let queries = read_documents(BufReader::new(std::fs::File::open(dir.join(QUERIES_FILE))?))?;
    let ads = read_documents(BufReader::new(std::fs::File::open(dir.join(ADS_FILE))?))?;
    let impressions =
        read_impressions(BufReader::new(std::fs::File::open(dir.join(IMPRESSIONS_FILE))?))?;
    Ok((taxonomy, Corpus::new(queries, ads, impressions)))
}
