use std::io::{BufRead, BufReader};
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use cma_cli::config::PipelineConfig;
use cma_cli::stages;
use cma_core::clsm::{self, ClsmConfig, ClsmModel};
use cma_core::cma_data::{build_positive_set, inject_noise, CmaDataConfig, PairSet};
use cma_core::embed_index::{build_index, score_candidates, CandidateScore, EmbeddingIndex};
use cma_core::error::{CmaError, ErrorKind, Result};
use cma_core::eval::{auc_roc, score_pairs};
use cma_core::relevance::{
    extract_matrix, gbdt_predict, gbdt_train, read_feature_matrix, read_labeled_pairs,
    read_labels, write_feature_matrix, write_labels, FeatureExtractor, FeatureVariant,
    GbdtModel, LabeledPair,
};
use cma_core::synth::load_corpus;
use cma_core::textprep::tokens;

#[derive(Parser)]
#[command(name = "cma", version, about = "Category-match relevance toolkit")]
struct Cli {
    /// Worker threads for parallel sections (embedding/index batches).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic taxonomy, corpus, and impression log.
    Synth {
        /// Pipeline config file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Build the category-match positive pair set from a corpus.
    BuildPairs {
        /// Corpus directory (as written by `synth`).
        #[arg(long)]
        corpus: PathBuf,
        /// Positive threshold on the category similarity.
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
        /// Noisy share of the final positive set.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the category-match model on a pair file.
    TrainCma {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Verify analytic gradients against central finite differences.
    GradCheck {
        #[arg(long, default_value_t = 4)]
        conv_units: usize,
        #[arg(long, default_value_t = 3)]
        semantic_dim: usize,
        #[arg(long, default_value_t = 20)]
        samples: u64,
        #[arg(long, default_value_t = 1e-4)]
        epsilon: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Precompute ad-title embeddings into an index file.
    ExportIndex {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score candidate ads for each query via the embedding index.
    Score {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// One raw query text per line.
        #[arg(long)]
        queries: PathBuf,
        /// One candidate ad id per line.
        #[arg(long)]
        candidates: PathBuf,
        /// Output TSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract one feature representation for labeled query-ad pairs.
    Features {
        /// One of: nocat, binary, derived, cma.
        #[arg(long)]
        variant: String,
        #[arg(long)]
        corpus: PathBuf,
        /// Labeled pair file (query_id, ad_id, label).
        #[arg(long)]
        pairs: PathBuf,
        /// Trained model, required for the cma variant.
        #[arg(long)]
        cma_model: Option<PathBuf>,
        /// Adds the normalized LCA-depth feature to the derived variant.
        #[arg(long, default_value_t = false)]
        include_lca_depth: bool,
        /// Writes <prefix>.features.tsv and <prefix>.labels.tsv.
        #[arg(long)]
        out_prefix: String,
    },
    /// Train the relevance classifier on a feature matrix.
    TrainRel {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Predict probabilities for a feature matrix.
    PredictRel {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// AUC-ROC of scores against labels, or of a model over a pair file.
    EvalAuc {
        /// One score per line (pairs with --labels).
        #[arg(long)]
        scores: Option<PathBuf>,
        /// One 0/1 label per line.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Model + corpus + pairs alternative to score/label files.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Retrain the category-match model per noise fraction and report AUCs.
    NoiseSweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        work_dir: Option<PathBuf>,
        /// Comma-separated fractions, ascending, each in [0, 0.5].
        #[arg(long)]
        fractions: Option<String>,
    },
    /// Train and evaluate all four feature representations.
    CompareFeatures {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        work_dir: Option<PathBuf>,
    },
    /// Run every stage end to end.
    Pipeline {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        work_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_pipeline_config(
    path: &Option<PathBuf>,
    work_dir: &Option<PathBuf>,
    seed: Option<u64>,
) -> Result<PipelineConfig> {
    let mut config = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(dir) = work_dir {
        config.work_dir = dir.clone();
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn write_or_stdout(out: &Option<PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth { config, out_dir } => {
            let config = load_pipeline_config(&config, &None, None)?;
            let manifest = stages::run_synth_stage(&config, &out_dir)?;
            eprintln!(
                "synth: {} artifacts in {} ({})",
                manifest.outputs.len(),
                out_dir.display(),
                if manifest.cache_hit { "cache hit" } else { "generated" }
            );
        }
        Command::BuildPairs { corpus, delta, noise, seed, out } => {
            let (_taxonomy, corpus) = load_corpus(&corpus)?;
            let dc =
                CmaDataConfig { delta, noise_fraction: noise, seed, ..CmaDataConfig::default() };
            dc.validate()?;
            let d_plus = build_positive_set(&corpus.impressions, &corpus, &dc)?;
            let pairs = if noise > 0.0 {
                inject_noise(&d_plus, &corpus.impressions, &corpus, noise, seed)?
            } else {
                d_plus
            };
            pairs.save(&out)?;
            eprintln!("build-pairs: {} rows -> {}", pairs.len(), out.display());
        }
        Command::TrainCma { corpus, pairs, out, config } => {
            let config = load_pipeline_config(&config, &None, None)?;
            let (_taxonomy, corpus) = load_corpus(&corpus)?;
            let pair_set = PairSet::load(&pairs)?;
            let texts = cma_core::cma_data::pair_texts(&pair_set, &corpus)?;
            let outcome = clsm::train(&texts, &config.clsm_config())?;
            outcome.model.save(&out)?;
            eprintln!(
                "train-cma: {} pairs, epoch losses {:?} -> {}",
                texts.len(),
                outcome.epoch_losses,
                out.display()
            );
        }
        Command::GradCheck { conv_units, semantic_dim, samples, epsilon, seed } => {
            let config = ClsmConfig { conv_units, semantic_dim, seed, ..ClsmConfig::default() };
            let mut worst = 0.0f64;
            for sample in 0..samples {
                let report = clsm::grad_check(&config, seed.wrapping_add(sample), epsilon)?;
                println!(
                    "sample {sample}: max relative error {:.3e} over {} coordinates",
                    report.max_rel_error, report.coords_checked
                );
                worst = worst.max(report.max_rel_error);
            }
            println!("worst over {samples} samples: {worst:.3e}");
            if worst >= 1e-3 {
                return Err(CmaError::Training(format!(
                    "gradient check failed: max relative error {worst:.3e}"
                )));
            }
        }
        Command::ExportIndex { model, corpus, out } => {
            let model = ClsmModel::load(&model)?;
            let (_taxonomy, corpus) = load_corpus(&corpus)?;
            let (index, skipped) = build_index(&model, &corpus.ads)?;
            index.save(&out)?;
            for s in &skipped {
                eprintln!("skipped {}: {}", s.ad_id, s.reason);
            }
            eprintln!("export-index: {} rows -> {}", index.len(), out.display());
        }
        Command::Score { index, model, queries, candidates, out } => {
            let index = EmbeddingIndex::load(&index)?;
            let model = ClsmModel::load(&model)?;
            let query_lines: Vec<String> = BufReader::new(std::fs::File::open(&queries)?)
                .lines()
                .collect::<std::io::Result<_>>()?;
            let candidate_ids: Vec<String> = BufReader::new(std::fs::File::open(&candidates)?)
                .lines()
                .collect::<std::io::Result<Vec<_>>>()?
                .into_iter()
                .filter(|l| !l.is_empty())
                .collect();
            let mut output = String::new();
            for (qi, raw) in query_lines.iter().enumerate() {
                let toks = tokens(raw);
                if toks.is_empty() {
                    output.push_str(&format!("{qi}\t-\tERROR:empty-query\n"));
                    continue;
                }
                for (ad_id, outcome) in score_candidates(&index, &model, &toks, &candidate_ids)? {
                    match outcome {
                        CandidateScore::Scored(s) => {
                            output.push_str(&format!("{qi}\t{ad_id}\t{s}\n"))
                        }
                        CandidateScore::UnknownId => {
                            output.push_str(&format!("{qi}\t{ad_id}\tERROR:unknown-id\n"))
                        }
                    }
                }
            }
            write_or_stdout(&out, &output)?;
        }
        Command::Features { variant, corpus, pairs, cma_model, include_lca_depth, out_prefix } => {
            let variant: FeatureVariant = variant.parse()?;
            let (taxonomy, corpus) = load_corpus(&corpus)?;
            let labeled = read_labeled_pairs(BufReader::new(std::fs::File::open(&pairs)?))?;
            let model = match &cma_model {
                Some(path) => Some(ClsmModel::load(path)?),
                None => None,
            };
            let extractor =
                FeatureExtractor::new(variant, &taxonomy, model.as_ref(), include_lca_depth)?;
            let refs: Vec<&LabeledPair> = labeled.iter().collect();
            let (xs, ys) = extract_matrix(&extractor, &refs, &corpus)?;
            let features_path = PathBuf::from(format!("{out_prefix}.features.tsv"));
            let labels_path = PathBuf::from(format!("{out_prefix}.labels.tsv"));
            let file = std::fs::File::create(&features_path)?;
            write_feature_matrix(std::io::BufWriter::new(file), &extractor.schema, &xs)?;
            let file = std::fs::File::create(&labels_path)?;
            write_labels(std::io::BufWriter::new(file), &ys)?;
            eprintln!(
                "features: {} rows x {} -> {} / {}",
                xs.len(),
                extractor.schema.dimension(),
                features_path.display(),
                labels_path.display()
            );
        }
        Command::TrainRel { features, labels, out, config } => {
            let config = load_pipeline_config(&config, &None, None)?;
            let (_, xs) = read_feature_matrix(BufReader::new(std::fs::File::open(&features)?))?;
            let ys = read_labels(BufReader::new(std::fs::File::open(&labels)?))?;
            let model = gbdt_train(&xs, &ys, &config.gbdt_config())?;
            if let Some(warning) = &model.warning {
                eprintln!("warning: {warning}");
            }
            model.save(&out)?;
            eprintln!(
                "train-rel: {} rows, {} trees -> {}",
                xs.len(),
                model.trees.len(),
                out.display()
            );
        }
        Command::PredictRel { model, features, out } => {
            let model = GbdtModel::load(&model)?;
            let (_, xs) = read_feature_matrix(BufReader::new(std::fs::File::open(&features)?))?;
            let mut output = String::new();
            for x in &xs {
                output.push_str(&format!("{}\n", gbdt_predict(&model, x)?));
            }
            write_or_stdout(&out, &output)?;
        }
        Command::EvalAuc { scores, labels, model, corpus, pairs } => {
            let auc = match (&scores, &labels, &model, &corpus, &pairs) {
                (Some(scores), Some(labels), None, None, None) => {
                    let s: Vec<f64> = BufReader::new(std::fs::File::open(scores)?)
                        .lines()
                        .collect::<std::io::Result<Vec<_>>>()?
                        .into_iter()
                        .filter(|l| !l.is_empty())
                        .map(|l| {
                            l.parse::<f64>()
                                .map_err(|_| CmaError::Parse(format!("bad score {l:?}")))
                        })
                        .collect::<Result<_>>()?;
                    let y = read_labels(BufReader::new(std::fs::File::open(labels)?))?;
                    auc_roc(&s, &y)?
                }
                (None, None, Some(model), Some(corpus), Some(pairs)) => {
                    let model = ClsmModel::load(model)?;
                    let (_taxonomy, corpus) = load_corpus(corpus)?;
                    let pair_set = PairSet::load(pairs)?;
                    let (s, y) = score_pairs(&model, &pair_set, &corpus)?;
                    auc_roc(&s, &y)?
                }
                _ => {
                    return Err(CmaError::Config(
                        "pass either --scores with --labels, or --model with --corpus and --pairs"
                            .to_owned(),
                    ))
                }
            };
            println!("auc = {auc}");
        }
        Command::NoiseSweep { config, work_dir, fractions } => {
            let config = load_pipeline_config(&config, &work_dir, None)?;
            let fractions = match fractions {
                Some(raw) => raw
                    .split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|_| CmaError::Config(format!("bad fraction {v:?}")))
                    })
                    .collect::<Result<Vec<f64>>>()?,
                None => config.noise_fractions.clone(),
            };
            let work_dir = config.work_dir.clone();
            stages::run_noise_sweep_stage(&config, &work_dir, &fractions)?;
            let report_path =
                stages::artifact_path(&work_dir, stages::REPORT_DIR, stages::SWEEP_FILE);
            print!("{}", std::fs::read_to_string(report_path)?);
        }
        Command::CompareFeatures { config, work_dir } => {
            let config = load_pipeline_config(&config, &work_dir, None)?;
            let work_dir = config.work_dir.clone();
            stages::run_synth_stage(&config, &work_dir.join(stages::SYNTH_DIR))?;
            stages::run_pairs_stage(&config, &work_dir)?;
            stages::run_train_cma_stage(&config, &work_dir)?;
            stages::run_features_stage(&config, &work_dir)?;
            stages::run_train_rel_stage(&config, &work_dir)?;
            stages::run_compare_stage(&config, &work_dir)?;
            let report_path =
                stages::artifact_path(&work_dir, stages::REPORT_DIR, stages::COMPARISON_FILE);
            print!("{}", std::fs::read_to_string(report_path)?);
        }
        Command::Pipeline { config, work_dir, seed } => {
            let config = load_pipeline_config(&config, &work_dir, seed)?;
            let work_dir = config.work_dir.clone();
            let manifests = stages::run_pipeline(&config, &work_dir)?;
            for m in &manifests {
                eprintln!(
                    "{}: {} ({:.2}s)",
                    m.stage,
                    if m.cache_hit { "cache hit" } else { "ran" },
                    m.wall_seconds
                );
            }
            let report_path =
                stages::artifact_path(&work_dir, stages::REPORT_DIR, stages::COMPARISON_FILE);
            print!("{}", std::fs::read_to_string(report_path)?);
        }
    }
    Ok(())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if cli.threads > 1 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match execute(cli.command) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err.kind() {
                ErrorKind::Validation => 1,
                ErrorKind::Data => 2,
                ErrorKind::Internal => 3,
            };
            std::process::exit(code);
        }
    }
}
