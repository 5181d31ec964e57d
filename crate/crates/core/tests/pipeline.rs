//! Cross-module integration: corpus → pairs → training → scoring → reports,
//! at a scale small enough for routine test runs.

use cma_core::clsm::{self, ClsmConfig};
use cma_core::cma_data::{build_positive_set, pair_texts, split, CmaDataConfig};
use cma_core::embed_index::{build_index, score_candidates, CandidateScore, EmbeddingIndex};
use cma_core::eval::{auc_roc, run_feature_comparison, run_noise_sweep, score_pairs};
use cma_core::relevance::{
    build_labeled_pairs, extract_matrix, gbdt_predict, gbdt_train, FeatureExtractor,
    FeatureVariant, FeatureVector, GbdtConfig, LabeledPair,
};
use cma_core::synth::{build_taxonomy, generate_corpus, SynthConfig};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_synth() -> SynthConfig {
    SynthConfig {
        seed: 21,
        taxonomy_depth: 2,
        branching_factor: 3,
        leaf_vocab_size: 24,
        num_queries: 500,
        num_ads: 300,
        query_zipf_exponent: 1.0,
        impression_count: 6_000,
        top_k: 3,
        cross_category_impression_rate: 0.3,
    }
}

fn small_clsm(seed: u64) -> ClsmConfig {
    ClsmConfig {
        conv_units: 24,
        semantic_dim: 12,
        epochs: 4,
        minibatch_size: 128,
        seed,
        ..ClsmConfig::default()
    }
}

#[test]
fn small_end_to_end_run_learns_and_serves() {
    let sc = small_synth();
    let taxonomy = build_taxonomy(&sc).unwrap();
    let corpus = generate_corpus(&taxonomy, &sc).unwrap();

    let dc = CmaDataConfig { eval_holdout_fraction: 0.05, ..CmaDataConfig::default() };
    let d_plus = build_positive_set(&corpus.impressions, &corpus, &dc).unwrap();
    assert!(d_plus.len() > 1_000);
    let parts = split(&d_plus, &corpus.impressions, &corpus, &dc).unwrap();

    let texts = pair_texts(&parts.train, &corpus).unwrap();
    let trained = clsm::train(&texts, &small_clsm(1)).unwrap();
    let (scores, labels) = score_pairs(&trained.model, &parts.eval, &corpus).unwrap();
    let auc = auc_roc(&scores, &labels).unwrap();
    assert!(auc > 0.8, "small-model category-match AUC {auc}");

    // Persist and reload the model; the reloaded copy must score the same
    // files-on-disk path the index uses.
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("cma.model");
    trained.model.save(&model_path).unwrap();
    let loaded = clsm::ClsmModel::load(&model_path).unwrap();

    let (index, skipped) = build_index(&loaded, &corpus.ads).unwrap();
    assert!(skipped.is_empty());
    let index_path = dir.path().join("ads.index");
    index.save(&index_path).unwrap();
    let index = EmbeddingIndex::load(&index_path).unwrap();

    let candidates: Vec<String> = corpus.ads.iter().take(40).map(|a| a.id.clone()).collect();
    let q = &corpus.queries[7];
    let scored = score_candidates(&index, &loaded, &q.text, &candidates).unwrap();
    for (ad_id, outcome) in scored {
        let CandidateScore::Scored(s) = outcome else {
            panic!("all candidates are known")
        };
        let direct = clsm::relevance(&loaded, &q.text, &corpus.ad(&ad_id).unwrap().text).unwrap();
        assert!((s - direct).abs() < 1e-6);
    }
}

#[test]
fn single_fraction_sweep_equals_baseline_and_reruns_identically() {
    let sc = small_synth();
    let taxonomy = build_taxonomy(&sc).unwrap();
    let corpus = generate_corpus(&taxonomy, &sc).unwrap();
    let dc = CmaDataConfig { eval_holdout_fraction: 0.05, ..CmaDataConfig::default() };
    let cc = small_clsm(3);

    let report = run_noise_sweep(&taxonomy, &corpus, &[0.0], &cc, &dc).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert!(report.failures.is_empty());

    // The f=0 row is the plain baseline: same split, same training.
    let d_plus = build_positive_set(&corpus.impressions, &corpus, &dc).unwrap();
    let parts = split(&d_plus, &corpus.impressions, &corpus, &dc).unwrap();
    let texts = pair_texts(&parts.train, &corpus).unwrap();
    let trained = clsm::train(&texts, &cc).unwrap();
    let (scores, labels) = score_pairs(&trained.model, &parts.eval, &corpus).unwrap();
    let baseline_auc = auc_roc(&scores, &labels).unwrap();
    assert_eq!(report.rows[0].auc, baseline_auc);

    // Reruns reproduce row for row.
    let again = run_noise_sweep(&taxonomy, &corpus, &[0.0], &cc, &dc).unwrap();
    assert_eq!(report.rows[0].auc, again.rows[0].auc);
    assert_eq!(report.rows[0].n_pos, again.rows[0].n_pos);

    // Fractions out of order are a config error.
    assert!(run_noise_sweep(&taxonomy, &corpus, &[0.2, 0.1], &cc, &dc).is_err());
    assert!(run_noise_sweep(&taxonomy, &corpus, &[0.6], &cc, &dc).is_err());
}

#[test]
fn shuffled_labels_remove_every_variant_signal() {
    let sc = small_synth();
    let taxonomy = build_taxonomy(&sc).unwrap();
    let corpus = generate_corpus(&taxonomy, &sc).unwrap();
    let labeled = build_labeled_pairs(&corpus, &taxonomy, 2_000, 5).unwrap();

    // Shuffle the labels among the pairs: any residual AUC is chance.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut labels: Vec<_> = labeled.iter().map(|p| p.label).collect();
    labels.shuffle(&mut rng);
    let shuffled: Vec<LabeledPair> = labeled
        .iter()
        .zip(labels)
        .map(|(p, label)| LabeledPair {
            query_id: p.query_id.clone(),
            ad_id: p.ad_id.clone(),
            label,
        })
        .collect();

    let model = clsm::ClsmModel::init(&small_clsm(2)).unwrap();
    let gc = GbdtConfig { num_trees: 40, ..GbdtConfig::default() };
    let report =
        run_feature_comparison(&taxonomy, &corpus, &shuffled, &model, &gc, 0.3).unwrap();
    assert_eq!(report.rows.len(), 4);
    for row in &report.rows {
        assert!(
            (row.auc - 0.5).abs() <= 0.05,
            "{} leaked signal through shuffled labels: {}",
            row.setting,
            row.auc
        );
    }
}

#[test]
fn dropping_the_cma_feature_at_predict_time_is_a_dimension_error() {
    let sc = small_synth();
    let taxonomy = build_taxonomy(&sc).unwrap();
    let corpus = generate_corpus(&taxonomy, &sc).unwrap();
    let labeled = build_labeled_pairs(&corpus, &taxonomy, 600, 5).unwrap();
    let model = clsm::ClsmModel::init(&small_clsm(4)).unwrap();

    let extractor =
        FeatureExtractor::new(FeatureVariant::Cma, &taxonomy, Some(&model), false).unwrap();
    let refs: Vec<&LabeledPair> = labeled.iter().collect();
    let (xs, ys) = extract_matrix(&extractor, &refs, &corpus).unwrap();
    let gbdt = gbdt_train(&xs, &ys, &GbdtConfig { num_trees: 10, ..GbdtConfig::default() })
        .unwrap();

    let mut truncated = xs[0].clone();
    truncated.0.pop(); // drop the trailing cma_score column
    assert!(gbdt_predict(&gbdt, &truncated).is_err());
    assert!(gbdt_predict(&gbdt, &FeatureVector(xs[0].0.clone())).is_ok());
}
