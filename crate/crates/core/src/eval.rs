//! AUC-ROC and the two experiment runners.
//!
//! AUC uses the rank-sum formulation with average ranks for ties — the
//! probability a random positive outranks a random negative, ties counting
//! one half — which matches O(n²) pair counting exactly and runs in
//! O(n log n). The runners reproduce the offline experiment structure: retrain
//! the category-match model across noise fractions, and train one relevance
//! model per feature representation on identical splits.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;
use std::time::Instant;

use crate::clsm::{self, ClsmConfig, ClsmModel};
use crate::cma_data::{
    build_positive_set, inject_noise, pair_texts, split, CmaDataConfig, PairSet,
};
use crate::error::{CmaError, Result};
use crate::relevance::{
    extract_matrix, gbdt_predict, gbdt_train, FeatureExtractor, FeatureVariant,
    GbdtConfig, LabeledPair,
};
use crate::seeding::derive_seed;
use crate::synth::{Corpus, Impression};
use crate::taxonomy::Taxonomy;

/// Rank-sum AUC-ROC with average ranks for tied scores.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(CmaError::Metric(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(CmaError::Metric("scores must be finite".to_owned()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CmaError::Metric(
            "AUC needs at least one positive and one negative".to_owned(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // Walk tie groups, assigning each member the group's average 1-based rank.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let n_pos_f = n_pos as f64;
    Ok((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// Score a pair set with a trained model: cosine of query text and ad title.
pub fn score_pairs(
    model: &ClsmModel,
    pairs: &PairSet,
    corpus: &Corpus,
) -> Result<(Vec<f64>, Vec<u8>)> {
    let mut scores = Vec::with_capacity(pairs.len());
    let mut labels = Vec::with_capacity(pairs.len());
    for row in &pairs.rows {
        let q = corpus.query(&row.query_id)?;
        let a = corpus.ad(&row.ad_id)?;
        scores.push(clsm::relevance(model, &q.text, &a.text)?);
        labels.push(row.label);
    }
    Ok((scores, labels))
}

// ---------------------------------------------------------------------------
// Experiment reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub setting: String,
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Execution metadata; serialized separately from the results so reruns
    /// produce byte-identical result files.
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    /// Per-setting failures that did not stop the run.
    pub failures: Vec<(String, String)>,
    pub seed: u64,
    pub config_summary: String,
}

impl ExperimentReport {
    /// Deterministic result file: metadata comments, a header, one row per
    /// setting. Wall times are excluded (see `write_timings`).
    pub fn write_results<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# seed={}", self.seed)?;
        writeln!(w, "# config={}", self.config_summary)?;
        for (setting, message) in &self.failures {
            writeln!(w, "# failure={setting}\t{}", message.replace(['\n', '\t'], " "))?;
        }
        writeln!(w, "setting\tauc\tn_pos\tn_neg")?;
        for row in &self.rows {
            writeln!(w, "{}\t{}\t{}\t{}", row.setting, row.auc, row.n_pos, row.n_neg)?;
        }
        Ok(())
    }

    /// Execution metadata sidecar (wall-clock seconds per setting).
    pub fn write_timings<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "setting\twall_seconds")?;
        for row in &self.rows {
            writeln!(w, "{}\t{}", row.setting, row.wall_seconds)?;
        }
        Ok(())
    }

    pub fn read_results<R: BufRead>(reader: R) -> Result<Self> {
        let mut report = ExperimentReport::default();
        let mut saw_header = false;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("# ") {
                if let Some(v) = rest.strip_prefix("seed=") {
                    report.seed = v
                        .parse()
                        .map_err(|_| CmaError::Parse(format!("line {}: bad seed", lineno + 1)))?;
                } else if let Some(v) = rest.strip_prefix("config=") {
                    report.config_summary = v.to_owned();
                } else if let Some(v) = rest.strip_prefix("failure=") {
                    let (setting, message) = v.split_once('\t').unwrap_or((v, ""));
                    report.failures.push((setting.to_owned(), message.to_owned()));
                }
                continue;
            }
            if !saw_header {
                saw_header = true; // column header
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(CmaError::Parse(format!("line {}: want 4 columns", lineno + 1)));
            }
            report.rows.push(ReportRow {
                setting: f[0].to_owned(),
                auc: f[1]
                    .parse()
                    .map_err(|_| CmaError::Parse(format!("line {}: bad auc", lineno + 1)))?,
                n_pos: f[2]
                    .parse()
                    .map_err(|_| CmaError::Parse(format!("line {}: bad n_pos", lineno + 1)))?,
                n_neg: f[3]
                    .parse()
                    .map_err(|_| CmaError::Parse(format!("line {}: bad n_neg", lineno + 1)))?,
                wall_seconds: 0.0,
            });
        }
        Ok(report)
    }

    pub fn save(&self, results_path: &Path, timings_path: &Path) -> Result<()> {
        let f = std::fs::File::create(results_path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_results(&mut w)?;
        w.flush()?;
        let f = std::fs::File::create(timings_path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_timings(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(results_path: &Path) -> Result<Self> {
        let f = std::fs::File::open(results_path)?;
        Self::read_results(std::io::BufReader::new(f))
    }
}

// ---------------------------------------------------------------------------
// Noise sweep
// ---------------------------------------------------------------------------

/// Retrain the category-match model per noise fraction and evaluate every
/// model on one shared clean eval split.
///
/// Noise candidates are restricted to impressions whose query stayed on the
/// train side, preserving the query-disjointness of the eval set. Failures in
/// a fraction are recorded and the sweep continues.
pub fn run_noise_sweep(
    taxonomy: &Taxonomy,
    corpus: &Corpus,
    fractions: &[f64],
    clsm_config: &ClsmConfig,
    data_config: &CmaDataConfig,
) -> Result<ExperimentReport> {
    let _ = taxonomy;
    if fractions.windows(2).any(|w| w[0] > w[1]) {
        return Err(CmaError::Config("noise fractions must be sorted ascending".to_owned()));
    }
    if fractions.iter().any(|f| !(0.0..=0.5).contains(f)) {
        return Err(CmaError::Config("noise fractions must lie in [0, 0.5]".to_owned()));
    }

    let d_plus = build_positive_set(&corpus.impressions, corpus, data_config)?;
    let parts = split(&d_plus, &corpus.impressions, corpus, data_config)?;
    let train_impressions: Vec<Impression> = corpus
        .impressions
        .iter()
        .filter(|imp| !parts.eval_query_ids.contains(&imp.query_id))
        .cloned()
        .collect();

    let mut report = ExperimentReport {
        seed: data_config.seed,
        config_summary: format!(
            "noise-sweep fractions={fractions:?} delta={} holdout={}",
            data_config.delta, data_config.eval_holdout_fraction
        ),
        ..ExperimentReport::default()
    };

    for &fraction in fractions {
        let setting = format!("noise={fraction}");
        let started = Instant::now();
        let outcome = (|| -> Result<ReportRow> {
            let noisy = inject_noise(
                &parts.train,
                &train_impressions,
                corpus,
                fraction,
                data_config.seed,
            )?;
            let texts = pair_texts(&noisy, corpus)?;
            let trained = clsm::train(&texts, clsm_config)?;
            let (scores, labels) = score_pairs(&trained.model, &parts.eval, corpus)?;
            let auc = auc_roc(&scores, &labels)?;
            Ok(ReportRow {
                setting: setting.clone(),
                auc,
                n_pos: labels.iter().filter(|&&l| l == 1).count(),
                n_neg: labels.iter().filter(|&&l| l == 0).count(),
                wall_seconds: started.elapsed().as_secs_f64(),
            })
        })();
        match outcome {
            Ok(row) => report.rows.push(row),
            Err(err) => report.failures.push((setting, err.to_string())),
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Feature-representation comparison
// ---------------------------------------------------------------------------

/// Train one GBDT per feature representation on identical query-disjoint
/// splits of the labeled pairs and report each model's eval AUC.
pub fn run_feature_comparison(
    taxonomy: &Taxonomy,
    corpus: &Corpus,
    labeled: &[LabeledPair],
    cma_model: &ClsmModel,
    gbdt_config: &GbdtConfig,
    eval_fraction: f64,
) -> Result<ExperimentReport> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(CmaError::Config("eval_fraction must lie in (0, 1)".to_owned()));
    }
    if labeled.len() < 50 {
        return Err(CmaError::Data(format!("need at least 50 labeled pairs, got {}", labeled.len())));
    }

    // Query-disjoint split shared by all four variants.
    let mut query_ids: Vec<&str> = {
        let set: HashSet<&str> = labeled.iter().map(|p| p.query_id.as_str()).collect();
        let mut v: Vec<&str> = set.into_iter().collect();
        v.sort_unstable();
        v
    };
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(
        gbdt_config.seed,
        "feature-comparison-split",
    ));
    query_ids.shuffle(&mut rng);
    let eval_count = ((query_ids.len() as f64) * eval_fraction).round().max(1.0) as usize;
    let eval_queries: HashSet<&str> = query_ids[..eval_count].iter().copied().collect();

    let (train_pairs, eval_pairs): (Vec<&LabeledPair>, Vec<&LabeledPair>) =
        labeled.iter().partition(|p| !eval_queries.contains(p.query_id.as_str()));
    if train_pairs.is_empty() || eval_pairs.is_empty() {
        return Err(CmaError::Data("labeled-pair split left an empty side".to_owned()));
    }

    let mut report = ExperimentReport {
        seed: gbdt_config.seed,
        config_summary: format!(
            "feature-comparison trees={} depth={} lr={} eval_fraction={eval_fraction}",
            gbdt_config.num_trees, gbdt_config.max_depth, gbdt_config.learning_rate
        ),
        ..ExperimentReport::default()
    };

    for variant in [
        FeatureVariant::NoCat,
        FeatureVariant::Binary,
        FeatureVariant::Derived,
        FeatureVariant::Cma,
    ] {
        let setting = variant.to_string();
        let started = Instant::now();
        let outcome = (|| -> Result<ReportRow> {
            let extractor = FeatureExtractor::new(
                variant,
                taxonomy,
                if variant == FeatureVariant::Cma { Some(cma_model) } else { None },
                false,
            )?;
            let (x_train, y_train) = extract_matrix(&extractor, &train_pairs, corpus)?;
            let (x_eval, y_eval) = extract_matrix(&extractor, &eval_pairs, corpus)?;
            let model = gbdt_train(&x_train, &y_train, gbdt_config)?;
            let scores: Vec<f64> = x_eval
                .iter()
                .map(|x| gbdt_predict(&model, x))
                .collect::<Result<_>>()?;
            let auc = auc_roc(&scores, &y_eval)?;
            Ok(ReportRow {
                setting: setting.clone(),
                auc,
                n_pos: y_eval.iter().filter(|&&l| l == 1).count(),
                n_neg: y_eval.iter().filter(|&&l| l == 0).count(),
                wall_seconds: started.elapsed().as_secs_f64(),
            })
        })();
        match outcome {
            Ok(row) => report.rows.push(row),
            Err(err) => report.failures.push((setting, err.to_string())),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// O(n²) pair-counting oracle: wins plus half-ties over all
    /// positive-negative pairs.
    pub(crate) fn auc_brute_force(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0f64;
        let mut total = 0.0f64;
        for (i, &si) in scores.iter().enumerate() {
            if labels[i] != 1 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] != 0 {
                    continue;
                }
                total += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
        wins / total
    }

    #[test]
    fn perfect_ranking_scores_one() {
        assert_eq!(auc_roc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
    }

    #[test]
    fn all_ties_score_half() {
        assert_eq!(auc_roc(&[0.5, 0.5, 0.5, 0.5], &[1, 0, 1, 0]).unwrap(), 0.5);
    }

    #[test]
    fn mixed_example_matches_pair_counting() {
        // One win and one loss out of two positive-negative pairs.
        let scores = [0.8, 0.6, 0.4];
        let labels = [1, 0, 1];
        assert_eq!(auc_roc(&scores, &labels).unwrap(), 0.5);
        assert_eq!(auc_brute_force(&scores, &labels), 0.5);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(auc_roc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(auc_roc(&[0.1, 0.2], &[0, 0]).is_err());
    }

    #[test]
    fn non_finite_scores_are_rejected() {
        assert!(auc_roc(&[f64::NAN, 0.2], &[1, 0]).is_err());
    }

    #[test]
    fn report_results_round_trip() {
        let report = ExperimentReport {
            rows: vec![
                ReportRow {
                    setting: "noise=0".into(),
                    auc: 0.9123456789012345,
                    n_pos: 100,
                    n_neg: 100,
                    wall_seconds: 1.25,
                },
                ReportRow {
                    setting: "noise=0.1".into(),
                    auc: 0.8877,
                    n_pos: 100,
                    n_neg: 100,
                    wall_seconds: 2.5,
                },
            ],
            failures: vec![("noise=0.5".into(), "insufficient pool".into())],
            seed: 42,
            config_summary: "demo".into(),
        };
        let mut bytes = Vec::new();
        report.write_results(&mut bytes).unwrap();
        let back = ExperimentReport::read_results(std::io::Cursor::new(&bytes)).unwrap();
        assert_eq!(back.seed, report.seed);
        assert_eq!(back.failures, report.failures);
        assert_eq!(back.rows.len(), report.rows.len());
        for (a, b) in back.rows.iter().zip(&report.rows) {
            assert_eq!(a.setting, b.setting);
            assert_eq!(a.auc, b.auc); // f64 survives the text round trip
            assert_eq!(a.n_pos, b.n_pos);
            assert_eq!(a.n_neg, b.n_neg);
        }
    }

    proptest! {
        #[test]
        fn rank_sum_equals_brute_force(
            raw in proptest::collection::vec((0u8..=1, 0i32..=20), 2..120)
        ) {
            // Quantized scores force plenty of ties.
            let labels: Vec<u8> = raw.iter().map(|&(l, _)| l).collect();
            let scores: Vec<f64> = raw.iter().map(|&(_, q)| q as f64 / 10.0).collect();
            let n_pos = labels.iter().filter(|&&l| l == 1).count();
            prop_assume!(n_pos > 0 && n_pos < labels.len());
            let fast = auc_roc(&scores, &labels).unwrap();
            let slow = auc_brute_force(&scores, &labels);
            prop_assert!((fast - slow).abs() < 1e-12);
        }

        #[test]
        fn auc_is_invariant_under_monotone_transforms(
            raw in proptest::collection::vec((0u8..=1, -10i32..=10), 2..80)
        ) {
            let labels: Vec<u8> = raw.iter().map(|&(l, _)| l).collect();
            let scores: Vec<f64> = raw.iter().map(|&(_, q)| q as f64 / 4.0).collect();
            let n_pos = labels.iter().filter(|&&l| l == 1).count();
            prop_assume!(n_pos > 0 && n_pos < labels.len());
            let transformed: Vec<f64> = scores.iter().map(|&s| (2.0 * s).exp() + 3.0).collect();
            let a = auc_roc(&scores, &labels).unwrap();
            let b = auc_roc(&transformed, &labels).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn label_flip_mirrors_auc_without_ties(
            n in 2usize..60, seed in 0u64..1000
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            // Distinct scores: a shuffled ladder.
            let mut scores: Vec<f64> = (0..n).map(|i| i as f64).collect();
            use rand::seq::SliceRandom;
            scores.shuffle(&mut rng);
            let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=1u8)).collect();
            let n_pos = labels.iter().filter(|&&l| l == 1).count();
            prop_assume!(n_pos > 0 && n_pos < n);
            let flipped: Vec<u8> = labels.iter().map(|&l| 1 - l).collect();
            let a = auc_roc(&scores, &labels).unwrap();
            let b = auc_roc(&scores, &flipped).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }
}
