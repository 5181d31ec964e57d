//! Pipeline configuration: a flat, sectioned key=value text file.
//!
//! Every field has a default; unknown sections or keys are rejected. One
//! global seed fans out to per-stage seeds via `derive_seed(seed, stage)`,
//! so any stage can be rerun on its own and still reproduce. The resolved
//! config is echoed into every output directory, and its SHA-256 is the
//! config hash recorded in stage manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cma_core::clsm::ClsmConfig;
use cma_core::cma_data::CmaDataConfig;
use cma_core::error::{CmaError, Result};
use cma_core::relevance::GbdtConfig;
use cma_core::seeding::{derive_seed, sha256_hex};
use cma_core::synth::SynthConfig;

/// Environment variable holding the default work directory.
pub const WORK_DIR_ENV: &str = "CMA_WORK_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub threads: usize,

    // [synth]
    pub taxonomy_depth: u32,
    pub branching_factor: u32,
    pub leaf_vocab_size: usize,
    pub num_queries: usize,
    pub num_ads: usize,
    pub query_zipf_exponent: f64,
    pub impression_count: usize,
    pub top_k: usize,
    pub cross_category_impression_rate: f64,

    // [cma_data]
    pub delta: f64,
    pub noise_fraction: f64,
    pub eval_holdout_fraction: f64,

    // [clsm]
    pub window_n: usize,
    pub conv_units: usize,
    pub semantic_dim: usize,
    pub gamma: f64,
    pub negatives: usize,
    pub clsm_learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub use_biases: bool,

    // [gbdt]
    pub num_trees: usize,
    pub max_depth: usize,
    pub gbdt_learning_rate: f64,
    pub min_samples_leaf: usize,

    // [experiment]
    pub noise_fractions: Vec<f64>,
    pub sweep_epochs: usize,
    pub sweep_eval_holdout: f64,
    pub relevance_max_pairs: usize,
    pub relevance_eval_fraction: f64,
    pub include_lca_depth: bool,

    // [paths]
    pub work_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let data = CmaDataConfig::default();
        let clsm = ClsmConfig::default();
        let gbdt = GbdtConfig::default();
        PipelineConfig {
            seed: 1,
            threads: 1,
            taxonomy_depth: synth.taxonomy_depth,
            branching_factor: synth.branching_factor,
            leaf_vocab_size: synth.leaf_vocab_size,
            num_queries: synth.num_queries,
            num_ads: synth.num_ads,
            query_zipf_exponent: synth.query_zipf_exponent,
            impression_count: synth.impression_count,
            top_k: synth.top_k,
            cross_category_impression_rate: synth.cross_category_impression_rate,
            delta: data.delta,
            noise_fraction: data.noise_fraction,
            eval_holdout_fraction: data.eval_holdout_fraction,
            window_n: clsm.window_n,
            conv_units: clsm.conv_units,
            semantic_dim: clsm.semantic_dim,
            gamma: clsm.gamma,
            negatives: clsm.negatives,
            clsm_learning_rate: clsm.learning_rate,
            epochs: clsm.epochs,
            minibatch_size: clsm.minibatch_size,
            use_biases: clsm.use_biases,
            num_trees: gbdt.num_trees,
            max_depth: gbdt.max_depth,
            gbdt_learning_rate: gbdt.learning_rate,
            min_samples_leaf: gbdt.min_samples_leaf,
            noise_fractions: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            sweep_epochs: 8,
            sweep_eval_holdout: 0.04,
            relevance_max_pairs: 12_000,
            relevance_eval_fraction: 0.25,
            include_lca_depth: false,
            work_dir: default_work_dir(),
        }
    }
}

fn default_work_dir() -> PathBuf {
    std::env::var_os(WORK_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("cma-work"))
}

fn parse_list(value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CmaError::Config(format!("bad list element {v:?}")))
        })
        .collect()
}

impl PipelineConfig {
    /// Parse config text over the defaults. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = PipelineConfig::default();
        let mut section = String::new();
        let mut seen: BTreeMap<String, ()> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_owned();
                match section.as_str() {
                    "synth" | "cma_data" | "clsm" | "gbdt" | "experiment" | "paths" => {}
                    other => {
                        return Err(CmaError::Config(format!(
                            "line {}: unknown section [{other}]",
                            lineno + 1
                        )))
                    }
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CmaError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let scoped = format!("{section}.{key}");
            if seen.insert(scoped.clone(), ()).is_some() {
                return Err(CmaError::Config(format!("line {}: duplicate key {key}", lineno + 1)));
            }
            config.apply(&section, key, value).map_err(|e| {
                CmaError::Config(format!("line {}: {e}", lineno + 1))
            })?;
        }
        Ok(config)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse::<T>()
                .map_err(|_| CmaError::Config(format!("bad value {value:?} for {key}")))
        }
        match (section, key) {
            ("", "seed") => self.seed = num(key, value)?,
            ("", "threads") => self.threads = num(key, value)?,
            ("synth", "taxonomy_depth") => self.taxonomy_depth = num(key, value)?,
            ("synth", "branching_factor") => self.branching_factor = num(key, value)?,
            ("synth", "leaf_vocab_size") => self.leaf_vocab_size = num(key, value)?,
            ("synth", "num_queries") => self.num_queries = num(key, value)?,
            ("synth", "num_ads") => self.num_ads = num(key, value)?,
            ("synth", "query_zipf_exponent") => self.query_zipf_exponent = num(key, value)?,
            ("synth", "impression_count") => self.impression_count = num(key, value)?,
            ("synth", "top_k") => self.top_k = num(key, value)?,
            ("synth", "cross_category_impression_rate") => {
                self.cross_category_impression_rate = num(key, value)?
            }
            ("cma_data", "delta") => self.delta = num(key, value)?,
            ("cma_data", "noise_fraction") => self.noise_fraction = num(key, value)?,
            ("cma_data", "eval_holdout_fraction") => {
                self.eval_holdout_fraction = num(key, value)?
            }
            ("clsm", "window_n") => self.window_n = num(key, value)?,
            ("clsm", "conv_units") => self.conv_units = num(key, value)?,
            ("clsm", "semantic_dim") => self.semantic_dim = num(key, value)?,
            ("clsm", "gamma") => self.gamma = num(key, value)?,
            ("clsm", "negatives") => self.negatives = num(key, value)?,
            ("clsm", "learning_rate") => self.clsm_learning_rate = num(key, value)?,
            ("clsm", "epochs") => self.epochs = num(key, value)?,
            ("clsm", "minibatch_size") => self.minibatch_size = num(key, value)?,
            ("clsm", "use_biases") => self.use_biases = num(key, value)?,
            ("gbdt", "num_trees") => self.num_trees = num(key, value)?,
            ("gbdt", "max_depth") => self.max_depth = num(key, value)?,
            ("gbdt", "learning_rate") => self.gbdt_learning_rate = num(key, value)?,
            ("gbdt", "min_samples_leaf") => self.min_samples_leaf = num(key, value)?,
            ("experiment", "noise_fractions") => self.noise_fractions = parse_list(value)?,
            ("experiment", "sweep_epochs") => self.sweep_epochs = num(key, value)?,
            ("experiment", "sweep_eval_holdout") => self.sweep_eval_holdout = num(key, value)?,
            ("experiment", "relevance_max_pairs") => {
                self.relevance_max_pairs = num(key, value)?
            }
            ("experiment", "relevance_eval_fraction") => {
                self.relevance_eval_fraction = num(key, value)?
            }
            ("experiment", "include_lca_depth") => self.include_lca_depth = num(key, value)?,
            ("paths", "work_dir") => self.work_dir = PathBuf::from(value),
            _ => {
                let place = if section.is_empty() {
                    "top level".to_owned()
                } else {
                    format!("section [{section}]")
                };
                return Err(CmaError::Config(format!("unknown key {key:?} in {place}")));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Canonical text form; parsing it reproduces the config exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str(&format!("threads = {}\n", self.threads));
        s.push_str("\n[synth]\n");
        s.push_str(&format!("taxonomy_depth = {}\n", self.taxonomy_depth));
        s.push_str(&format!("branching_factor = {}\n", self.branching_factor));
        s.push_str(&format!("leaf_vocab_size = {}\n", self.leaf_vocab_size));
        s.push_str(&format!("num_queries = {}\n", self.num_queries));
        s.push_str(&format!("num_ads = {}\n", self.num_ads));
        s.push_str(&format!("query_zipf_exponent = {}\n", self.query_zipf_exponent));
        s.push_str(&format!("impression_count = {}\n", self.impression_count));
        s.push_str(&format!("top_k = {}\n", self.top_k));
        s.push_str(&format!(
            "cross_category_impression_rate = {}\n",
            self.cross_category_impression_rate
        ));
        s.push_str("\n[cma_data]\n");
        s.push_str(&format!("delta = {}\n", self.delta));
        s.push_str(&format!("noise_fraction = {}\n", self.noise_fraction));
        s.push_str(&format!("eval_holdout_fraction = {}\n", self.eval_holdout_fraction));
        s.push_str("\n[clsm]\n");
        s.push_str(&format!("window_n = {}\n", self.window_n));
        s.push_str(&format!("conv_units = {}\n", self.conv_units));
        s.push_str(&format!("semantic_dim = {}\n", self.semantic_dim));
        s.push_str(&format!("gamma = {}\n", self.gamma));
        s.push_str(&format!("negatives = {}\n", self.negatives));
        s.push_str(&format!("learning_rate = {}\n", self.clsm_learning_rate));
        s.push_str(&format!("epochs = {}\n", self.epochs));
        s.push_str(&format!("minibatch_size = {}\n", self.minibatch_size));
        s.push_str(&format!("use_biases = {}\n", self.use_biases));
        s.push_str("\n[gbdt]\n");
        s.push_str(&format!("num_trees = {}\n", self.num_trees));
        s.push_str(&format!("max_depth = {}\n", self.max_depth));
        s.push_str(&format!("learning_rate = {}\n", self.gbdt_learning_rate));
        s.push_str(&format!("min_samples_leaf = {}\n", self.min_samples_leaf));
        s.push_str("\n[experiment]\n");
        let fractions: Vec<String> =
            self.noise_fractions.iter().map(|f| f.to_string()).collect();
        s.push_str(&format!("noise_fractions = {}\n", fractions.join(",")));
        s.push_str(&format!("sweep_epochs = {}\n", self.sweep_epochs));
        s.push_str(&format!("sweep_eval_holdout = {}\n", self.sweep_eval_holdout));
        s.push_str(&format!("relevance_max_pairs = {}\n", self.relevance_max_pairs));
        s.push_str(&format!(
            "relevance_eval_fraction = {}\n",
            self.relevance_eval_fraction
        ));
        s.push_str(&format!("include_lca_depth = {}\n", self.include_lca_depth));
        s.push_str("\n[paths]\n");
        s.push_str(&format!("work_dir = {}\n", self.work_dir.display()));
        s
    }

    /// Hash of the canonical text, recorded in every stage manifest.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: derive_seed(self.seed, "synth"),
            taxonomy_depth: self.taxonomy_depth,
            branching_factor: self.branching_factor,
            leaf_vocab_size: self.leaf_vocab_size,
            num_queries: self.num_queries,
            num_ads: self.num_ads,
            query_zipf_exponent: self.query_zipf_exponent,
            impression_count: self.impression_count,
            top_k: self.top_k,
            cross_category_impression_rate: self.cross_category_impression_rate,
        }
    }

    pub fn data_config(&self) -> CmaDataConfig {
        CmaDataConfig {
            delta: self.delta,
            noise_fraction: self.noise_fraction,
            eval_holdout_fraction: self.eval_holdout_fraction,
            seed: derive_seed(self.seed, "pairs"),
        }
    }

    pub fn clsm_config(&self) -> ClsmConfig {
        ClsmConfig {
            trigram_dim: cma_core::textprep::TRIGRAM_DIM,
            window_n: self.window_n,
            conv_units: self.conv_units,
            semantic_dim: self.semantic_dim,
            gamma: self.gamma,
            negatives: self.negatives,
            learning_rate: self.clsm_learning_rate,
            epochs: self.epochs,
            minibatch_size: self.minibatch_size,
            use_biases: self.use_biases,
            seed: derive_seed(self.seed, "clsm"),
        }
    }

    pub fn gbdt_config(&self) -> GbdtConfig {
        GbdtConfig {
            num_trees: self.num_trees,
            max_depth: self.max_depth,
            learning_rate: self.gbdt_learning_rate,
            min_samples_leaf: self.min_samples_leaf,
            seed: derive_seed(self.seed, "gbdt"),
        }
    }

    /// Sweep trainings run a little longer on a larger clean eval; both knobs
    /// live in `[experiment]`.
    pub fn sweep_clsm_config(&self) -> ClsmConfig {
        ClsmConfig { epochs: self.sweep_epochs, ..self.clsm_config() }
    }

    pub fn sweep_data_config(&self) -> CmaDataConfig {
        CmaDataConfig { eval_holdout_fraction: self.sweep_eval_holdout, ..self.data_config() }
    }
}
