//! Pipeline stages. Each stage reads declared inputs, writes artifacts into
//! its own directory under the work dir, and records a manifest; unchanged
//! stages are cache hits and are not recomputed.

use std::collections::HashSet;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use cma_core::clsm::{self, ClsmModel};
use cma_core::cma_data::{build_positive_set, inject_noise, pair_texts, split, PairSet};
use cma_core::embed_index::build_index;
use cma_core::error::Result;
use cma_core::eval::{auc_roc, run_noise_sweep, ExperimentReport, ReportRow};
use cma_core::relevance::{
    build_labeled_pairs, extract_matrix, gbdt_predict, gbdt_train, read_feature_matrix,
    read_labels, write_feature_matrix, write_labeled_pairs, write_labels, FeatureExtractor,
    FeatureVariant, GbdtModel, LabeledPair,
};
use cma_core::seeding::derive_seed;
use cma_core::synth::{
    build_taxonomy, generate_corpus, load_corpus, save_corpus, Corpus, ADS_FILE,
    IMPRESSIONS_FILE, QUERIES_FILE, TAXONOMY_FILE,
};
use cma_core::taxonomy::Taxonomy;

use crate::config::PipelineConfig;
use crate::manifest::{run_stage, stage_input, Manifest, StageInput};

pub const SYNTH_DIR: &str = "synth";
pub const PAIRS_DIR: &str = "pairs";
pub const CMA_DIR: &str = "cma";
pub const INDEX_DIR: &str = "index";
pub const FEATURES_DIR: &str = "features";
pub const REL_DIR: &str = "rel";
pub const REPORT_DIR: &str = "report";

pub const TRAIN_PAIRS_FILE: &str = "train_pairs.tsv";
pub const EVAL_PAIRS_FILE: &str = "eval_pairs.tsv";
pub const MODEL_FILE: &str = "cma.model";
pub const TRAIN_LOG_FILE: &str = "train_log.tsv";
pub const INDEX_FILE: &str = "ads.index";
pub const SKIPPED_FILE: &str = "skipped.tsv";
pub const LABELED_PAIRS_FILE: &str = "labeled_pairs.tsv";
pub const COMPARISON_FILE: &str = "feature_comparison.tsv";
pub const COMPARISON_TIMINGS_FILE: &str = "feature_comparison_timings.tsv";
pub const SWEEP_FILE: &str = "noise_sweep.tsv";
pub const SWEEP_TIMINGS_FILE: &str = "noise_sweep_timings.tsv";
pub const SUMMARY_FILE: &str = "summary.txt";

pub const VARIANTS: [FeatureVariant; 4] = [
    FeatureVariant::NoCat,
    FeatureVariant::Binary,
    FeatureVariant::Derived,
    FeatureVariant::Cma,
];

fn variant_slug(variant: FeatureVariant) -> &'static str {
    match variant {
        FeatureVariant::NoCat => "nocat",
        FeatureVariant::Binary => "binary",
        FeatureVariant::Derived => "derived",
        FeatureVariant::Cma => "cma",
    }
}

fn synth_inputs(synth_dir: &Path) -> Vec<StageInput> {
    [TAXONOMY_FILE, QUERIES_FILE, ADS_FILE, IMPRESSIONS_FILE]
        .iter()
        .map(|name| stage_input(&format!("synth/{name}"), &synth_dir.join(name)))
        .collect()
}

fn load_world(synth_dir: &Path) -> Result<(Taxonomy, Corpus)> {
    load_corpus(synth_dir)
}

pub fn run_synth_stage(config: &PipelineConfig, out_dir: &Path) -> Result<Manifest> {
    let echo = config.to_text();
    run_stage("synth", out_dir, &config.hash(), &echo, &[], || {
        let sc = config.synth_config();
        let taxonomy = build_taxonomy(&sc)?;
        let corpus = generate_corpus(&taxonomy, &sc)?;
        save_corpus(out_dir, &taxonomy, &corpus)?;
        Ok(vec![
            TAXONOMY_FILE.to_owned(),
            QUERIES_FILE.to_owned(),
            ADS_FILE.to_owned(),
            IMPRESSIONS_FILE.to_owned(),
        ])
    })
}

pub fn run_pairs_stage(config: &PipelineConfig, work_dir: &Path) -> Result<Manifest> {
    let synth_dir = work_dir.join(SYNTH_DIR);
    let out_dir = work_dir.join(PAIRS_DIR);
    run_stage(
        "pairs",
        &out_dir,
        &config.hash(),
        &config.to_text(),
        &synth_inputs(&synth_dir),
        || {
            let (_taxonomy, corpus) = load_world(&synth_dir)?;
            let dc = config.data_config();
            let d_plus = build_positive_set(&corpus.impressions, &corpus, &dc)?;
            let parts = split(&d_plus, &corpus.impressions, &corpus, &dc)?;
            let train = if config.noise_fraction > 0.0 {
                let train_impressions: Vec<_> = corpus
                    .impressions
                    .iter()
                    .filter(|imp| !parts.eval_query_ids.contains(&imp.query_id))
                    .cloned()
                    .collect();
                inject_noise(&parts.train, &train_impressions, &corpus, config.noise_fraction, dc.seed)?
            } else {
                parts.train
            };
            train.save(&out_dir.join(TRAIN_PAIRS_FILE))?;
            parts.eval.save(&out_dir.join(EVAL_PAIRS_FILE))?;
            Ok(vec![TRAIN_PAIRS_FILE.to_owned(), EVAL_PAIRS_FILE.to_owned()])
        },
    )
}

pub fn run_train_cma_stage(config: &PipelineConfig, work_dir: &Path) -> Result<Manifest> {
    let synth_dir = work_dir.join(SYNTH_DIR);
    let pairs_dir = work_dir.join(PAIRS_DIR);
    let out_dir = work_dir.join(CMA_DIR);
    let mut inputs = synth_inputs(&synth_dir);
    inputs.push(stage_input("pairs/train_pairs.tsv", &pairs_dir.join(TRAIN_PAIRS_FILE)));
    run_stage("train-cma", &out_dir, &config.hash(), &config.to_text(), &inputs, || {
        let (_taxonomy, corpus) = load_world(&synth_dir)?;
        let train = PairSet::load(&pairs_dir.join(TRAIN_PAIRS_FILE))?;
        let texts = pair_texts(&train, &corpus)?;
        let outcome = clsm::train(&texts, &config.clsm_config())?;
        outcome.model.save(&out_dir.join(MODEL_FILE))?;
        let mut log = String::from("epoch\tmean_loss\n");
        for (epoch, loss) in outcome.epoch_losses.iter().enumerate() {
            log.push_str(&format!("{epoch}\t{loss}\n"));
        }
        std::fs::write(out_dir.join(TRAIN_LOG_FILE), log)?;
        Ok(vec![MODEL_FILE.to_owned(), TRAIN_LOG_FILE.to_owned()])
    })
}

pub fn run_export_index_stage(config: &PipelineConfig, work_dir: &Path) -> Result<Manifest> {
    let synth_dir = work_dir.join(SYNTH_DIR);
    let cma_dir = work_dir.join(CMA_DIR);
    let out_dir = work_dir.join(INDEX_DIR);
    let inputs = vec![
        stage_input("synth/ads.txt", &synth_dir.join(ADS_FILE)),
        stage_input("cma/cma.model", &cma_dir.join(MODEL_FILE)),
    ];
    run_stage("export-index", &out_dir, &config.hash(), &config.to_text(), &inputs, || {
        let ads = cma_core::synth::read_documents(BufReader::new(std::fs::File::open(
            synth_dir.join(ADS_FILE),
        )?))?;
        let model = ClsmModel::load(&cma_dir.join(MODEL_FILE))?;
        let (index, skipped) = build_index(&model, &ads)?;
        index.save(&out_dir.join(INDEX_FILE))?;
        let mut outputs = vec![INDEX_FILE.to_owned()];
        if !skipped.is_empty() {
            let mut text = String::new();
            for s in &skipped {
                text.push_str(&format!("{}\t{}\n", s.ad_id, s.reason));
            }
            std::fs::write(out_dir.join(SKIPPED_FILE), text)?;
            outputs.push(SKIPPED_FILE.to_owned());
        }
        Ok(outputs)
    })
}

/// Query-disjoint split of the labeled relevance pairs, shared by every
/// variant.
fn split_labeled(
    labeled: &[LabeledPair],
    eval_fraction: f64,
    seed: u64,
) -> (Vec<LabeledPair>, Vec<LabeledPair>) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut query_ids: Vec<&str> = {
        let set: HashSet<&str> = labeled.iter().map(|p| p.query_id.as_str()).collect();
        let mut v: Vec<&str> = set.into_iter().collect();
        v.sort_unstable();
        v
    };
    let mut rng =
        rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, "relevance-split"));
    query_ids.shuffle(&mut rng);
    let eval_count = ((query_ids.len() as f64) * eval_fraction).round().max(1.0) as usize;
    let eval_queries: HashSet<&str> = query_ids[..eval_count.min(query_ids.len())]
        .iter()
        .copied()
        .collect();
    let (eval, train): (Vec<LabeledPair>, Vec<LabeledPair>) = labeled
        .iter()
        .cloned()
        .partition(|p| eval_queries.contains(p.query_id.as_str()));
    (train, eval)
}

fn matrix_names(variant: FeatureVariant) -> [String; 4] {
    let slug = variant_slug(variant);
    [
        format!("{slug}.train.features.tsv"),
        format!("{slug}.train.labels.tsv"),
        format!("{slug}.eval.features.tsv"),
        format!("{slug}.eval.labels.tsv"),
    ]
}

pub fn run_features_stage(config: &PipelineConfig, work_dir: &Path) -> Result<Manifest> {
    let synth_dir = work_dir.join(SYNTH_DIR);
    let cma_dir = work_dir.join(CMA_DIR);
    let out_dir = work_dir.join(FEATURES_DIR);
    let mut inputs = synth_inputs(&synth_dir);
    inputs.push(stage_input("cma/cma.model", &cma_dir.join(MODEL_FILE)));
    run_stage("features", &out_dir, &config.hash(), &config.to_text(), &inputs, || {
        let (taxonomy, corpus) = load_world(&synth_dir)?;
        let model = ClsmModel::load(&cma_dir.join(MODEL_FILE))?;
        let labeled = build_labeled_pairs(
            &corpus,
            &taxonomy,
            config.relevance_max_pairs,
            derive_seed(config.seed, "labeled-pairs"),
        )?;
        let file = std::fs::File::create(out_dir.join(LABELED_PAIRS_FILE))?;
        write_labeled_pairs(std::io::BufWriter::new(file), &labeled)?;

        let (train, eval) =
            split_labeled(&labeled, config.relevance_eval_fraction, config.seed);
        let mut outputs = vec![LABELED_PAIRS_FILE.to_owned()];
        for variant in VARIANTS {
            let cma_ref =
                if variant == FeatureVariant::Cma { Some(&model) } else { None };
            let extractor = FeatureExtractor::new(
                variant,
                &taxonomy,
                cma_ref,
                config.include_lca_depth,
            )?;
            let names = matrix_names(variant);
            for (pairs, feature_name, label_name) in
                [(&train, &names[0], &names[1]), (&eval, &names[2], &names[3])]
            {
                let refs: Vec<&LabeledPair> = pairs.iter().collect();
                let (xs, ys) = extract_matrix(&extractor, &refs, &corpus)?;
                let file = std::fs::File::create(out_dir.join(feature_name))?;
                write_feature_matrix(std::io::BufWriter::new(file), &extractor.schema, &xs)?;
                let file = std::fs::File::create(out_dir.join(label_name))?;
                write_labels(std::io::BufWriter::new(file), &ys)?;
            }
            outputs.extend(names);
        }
        Ok(outputs)
    })
}

pub fn run_train_rel_stage(config: &PipelineConfig, work_dir: &Path) -> Result<Manifest> {
    let features_dir = work_dir.join(FEATURES_DIR);
    let out_dir = work_dir.join(REL_DIR);
    let mut inputs = Vec::new();
    for variant in VARIANTS {
        let names = matrix_names(variant);
        inputs.push(stage_input(
            &format!("features/{}", names[0]),
            &features_dir.join(&names[0]),
        ));
        inputs.push(stage_input(
            &format!("features/{}", names[1]),
            &features_dir.join(&names[1]),
        ));
    }
    run_stage("train-rel", &out_dir, &config.hash(), &config.to_text(), &inputs, || {
        let mut outputs = Vec::new();
        for variant in VARIANTS {
            let names = matrix_names(variant);
            let (_, xs) = read_feature_matrix(BufReader::new(std::fs::File::open(
                features_dir.join(&names[0]),
            )?))?;
            let ys = read_labels(BufReader::new(std::fs::File::open(
                features_dir.join(&names[1]),
            )?))?;
            let model = gbdt_train(&xs, &ys, &config.gbdt_config())?;
            let out_name = format!("{}.gbdt", variant_slug(variant));
            model.save(&out_dir.join(&out_name))?;
            outputs.push(out_name);
        }
        Ok(outputs)
    })
}

pub fn run_compare_stage(config: &PipelineConfig, work_dir: &Path) -> Result<Manifest> {
    let features_dir = work_dir.join(FEATURES_DIR);
    let rel_dir = work_dir.join(REL_DIR);
    let out_dir = work_dir.join(REPORT_DIR);
    let mut inputs = Vec::new();
    for variant in VARIANTS {
        let names = matrix_names(variant);
        inputs.push(stage_input(
            &format!("features/{}", names[2]),
            &features_dir.join(&names[2]),
        ));
        inputs.push(stage_input(
            &format!("features/{}", names[3]),
            &features_dir.join(&names[3]),
        ));
        let model_name = format!("{}.gbdt", variant_slug(variant));
        inputs.push(stage_input(&format!("rel/{model_name}"), &rel_dir.join(&model_name)));
    }
    run_stage("compare-features", &out_dir, &config.hash(), &config.to_text(), &inputs, || {
        let mut report = ExperimentReport {
            seed: config.seed,
            config_summary: format!("feature-comparison config={}", config.hash()),
            ..ExperimentReport::default()
        };
        for variant in VARIANTS {
            let setting = variant.to_string();
            let started = std::time::Instant::now();
            let outcome = (|| -> Result<ReportRow> {
                let names = matrix_names(variant);
                let (_, xs) = read_feature_matrix(BufReader::new(std::fs::File::open(
                    features_dir.join(&names[2]),
                )?))?;
                let ys = read_labels(BufReader::new(std::fs::File::open(
                    features_dir.join(&names[3]),
                )?))?;
                let model = GbdtModel::load(&rel_dir.join(format!(
                    "{}.gbdt",
                    variant_slug(variant)
                )))?;
                let scores: Vec<f64> =
                    xs.iter().map(|x| gbdt_predict(&model, x)).collect::<Result<_>>()?;
                let auc = auc_roc(&scores, &ys)?;
                Ok(ReportRow {
                    setting: setting.clone(),
                    auc,
                    n_pos: ys.iter().filter(|&&l| l == 1).count(),
                    n_neg: ys.iter().filter(|&&l| l == 0).count(),
                    wall_seconds: started.elapsed().as_secs_f64(),
                })
            })();
            match outcome {
                Ok(row) => report.rows.push(row),
                Err(err) => report.failures.push((setting, err.to_string())),
            }
        }
        report.save(
            &out_dir.join(COMPARISON_FILE),
            &out_dir.join(COMPARISON_TIMINGS_FILE),
        )?;
        std::fs::write(out_dir.join(SUMMARY_FILE), summarize(&report))?;
        Ok(vec![
            COMPARISON_FILE.to_owned(),
            COMPARISON_TIMINGS_FILE.to_owned(),
            SUMMARY_FILE.to_owned(),
        ])
    })
}

fn summarize(report: &ExperimentReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("seed = {}\n", report.seed));
    s.push_str(&format!("config = {}\n", report.config_summary));
    for row in &report.rows {
        s.push_str(&format!(
            "{}: auc {} over {} positives / {} negatives\n",
            row.setting, row.auc, row.n_pos, row.n_neg
        ));
    }
    for (setting, message) in &report.failures {
        s.push_str(&format!("{setting}: FAILED {message}\n"));
    }
    s
}

/// The full pipeline: synth → pairs → train-cma → export-index → features →
/// train-rel → compare-features.
pub fn run_pipeline(config: &PipelineConfig, work_dir: &Path) -> Result<Vec<Manifest>> {
    std::fs::create_dir_all(work_dir)?;
    let manifests = vec![
        run_synth_stage(config, &work_dir.join(SYNTH_DIR))?,
        run_pairs_stage(config, work_dir)?,
        run_train_cma_stage(config, work_dir)?,
        run_export_index_stage(config, work_dir)?,
        run_features_stage(config, work_dir)?,
        run_train_rel_stage(config, work_dir)?,
        run_compare_stage(config, work_dir)?,
    ];
    Ok(manifests)
}

/// Noise sweep over the synth artifacts (generated on demand, cache-aware).
pub fn run_noise_sweep_stage(
    config: &PipelineConfig,
    work_dir: &Path,
    fractions: &[f64],
) -> Result<Manifest> {
    run_synth_stage(config, &work_dir.join(SYNTH_DIR))?;
    let synth_dir = work_dir.join(SYNTH_DIR);
    let out_dir = work_dir.join(REPORT_DIR);
    let fractions_key = fractions.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(",");
    let config_hash = format!("{}-sweep-{fractions_key}", config.hash());
    run_stage(
        "noise-sweep",
        &out_dir,
        &config_hash,
        &config.to_text(),
        &synth_inputs(&synth_dir),
        || {
            let (taxonomy, corpus) = load_world(&synth_dir)?;
            let report = run_noise_sweep(
                &taxonomy,
                &corpus,
                fractions,
                &config.sweep_clsm_config(),
                &config.sweep_data_config(),
            )?;
            report.save(&out_dir.join(SWEEP_FILE), &out_dir.join(SWEEP_TIMINGS_FILE))?;
            std::fs::write(out_dir.join(SUMMARY_FILE), summarize(&report))?;
            Ok(vec![
                SWEEP_FILE.to_owned(),
                SWEEP_TIMINGS_FILE.to_owned(),
                SUMMARY_FILE.to_owned(),
            ])
        },
    )
}

/// Resolve a path under the work dir, for callers outside this module.
pub fn artifact_path(work_dir: &Path, dir: &str, file: &str) -> PathBuf {
    work_dir.join(dir).join(file)
}
