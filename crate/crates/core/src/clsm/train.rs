//! Softmax-posterior training: batch loss, analytic gradients, minibatch SGD.
//!
//! The batch loss is the sum over rows of `-log posterior(positive | query)`
//! with the posterior taken over the positive and J sampled negatives. The
//! gradient is exact: cosine backward into both towers, max-pool routing to
//! argmax positions only (lowest index wins ties), and sparse accumulation so
//! tri-letter columns absent from a batch are never touched.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CmaError, Result};
use crate::seeding::derive_seed;

use super::{ClsmConfig, ClsmModel, TowerActivations};

/// One labeled positive: a query and the ad title it matched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainPair {
    pub query: Vec<String>,
    pub ad: Vec<String>,
}

/// One gradient row: query, its positive document, and J negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GradRow {
    pub query: Vec<String>,
    pub positive: Vec<String>,
    pub negatives: Vec<Vec<String>>,
}

/// Batch gradient, same shapes as the model. Convolution gradients are kept
/// per input column; columns never active in the batch carry no entry.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub wc_cols: HashMap<u32, Vec<f64>>,
    pub bc: Vec<f64>,
    pub ws: Vec<f64>,
    pub bs: Vec<f64>,
}

impl Gradients {
    fn zeros(config: &ClsmConfig) -> Self {
        Gradients {
            wc_cols: HashMap::new(),
            bc: vec![0.0; config.conv_units],
            ws: vec![0.0; config.semantic_dim * config.conv_units],
            bs: vec![0.0; config.semantic_dim],
        }
    }
}

/// Forward activations for the unique documents of a batch, plus the
/// upstream semantic-vector gradient accumulated per document.
struct DocCache {
    index: HashMap<Vec<String>, usize>,
    acts: Vec<TowerActivations>,
    g_y: Vec<Vec<f64>>,
}

impl DocCache {
    fn new() -> Self {
        DocCache { index: HashMap::new(), acts: Vec::new(), g_y: Vec::new() }
    }

    fn intern(&mut self, model: &ClsmModel, tokens: &[String]) -> Result<usize> {
        if let Some(&i) = self.index.get(tokens) {
            return Ok(i);
        }
        let acts = model.forward(tokens)?;
        let l = acts.y.len();
        self.index.insert(tokens.to_vec(), self.acts.len());
        self.acts.push(acts);
        self.g_y.push(vec![0.0; l]);
        Ok(self.acts.len() - 1)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Add `coeff · ∂cos(y_a, y_b)/∂y` into both documents' upstream gradients.
/// The zero-vector convention scores 0 with a zero (sub)gradient.
fn cosine_backward(cache: &mut DocCache, a: usize, b: usize, coeff: f64) {
    let ya = &cache.acts[a].y;
    let yb = &cache.acts[b].y;
    let na = norm(ya);
    let nb = norm(yb);
    if na == 0.0 || nb == 0.0 {
        return;
    }
    let r = dot(ya, yb) / (na * nb);
    let (ga, gb): (Vec<f64>, Vec<f64>) = ya
        .iter()
        .zip(yb)
        .map(|(&xa, &xb)| {
            (
                coeff * (xb / (na * nb) - r * xa / (na * na)),
                coeff * (xa / (na * nb) - r * xb / (nb * nb)),
            )
        })
        .unzip();
    for (g, add) in cache.g_y[a].iter_mut().zip(&ga) {
        *g += add;
    }
    for (g, add) in cache.g_y[b].iter_mut().zip(&gb) {
        *g += add;
    }
}

/// Backpropagate one document's accumulated semantic gradient into the
/// parameter gradients.
fn tower_backward(model: &ClsmModel, acts: &TowerActivations, g_y: &[f64], grads: &mut Gradients) {
    let k = model.config.conv_units;
    let l = model.config.semantic_dim;

    // y = tanh(Ws·v + bs)
    let g_s: Vec<f64> = g_y.iter().zip(&acts.y).map(|(g, y)| g * (1.0 - y * y)).collect();
    for li in 0..l {
        grads.bs[li] += g_s[li];
        let row = &mut grads.ws[li * k..(li + 1) * k];
        for (gw, &vk) in row.iter_mut().zip(&acts.v) {
            *gw += g_s[li] * vk;
        }
    }
    let mut g_v = vec![0.0; k];
    for li in 0..l {
        let row = &model.ws[li * k..(li + 1) * k];
        for (gv, &w) in g_v.iter_mut().zip(row) {
            *gv += w * g_s[li];
        }
    }

    // Max-pool routes each coordinate's gradient to its winning position.
    let mut coords_by_pos: Vec<Vec<usize>> = vec![Vec::new(); acts.h.len()];
    for (ki, &t) in acts.argmax.iter().enumerate() {
        coords_by_pos[t].push(ki);
    }
    for (t, coords) in coords_by_pos.iter().enumerate() {
        if coords.is_empty() {
            continue;
        }
        let h_t = &acts.h[t];
        let g_a: Vec<(usize, f64)> =
            coords.iter().map(|&ki| (ki, g_v[ki] * (1.0 - h_t[ki] * h_t[ki]))).collect();
        for &(ki, ga) in &g_a {
            grads.bc[ki] += ga;
        }
        for &(idx, count) in &acts.slots[t] {
            let col = grads.wc_cols.entry(idx).or_insert_with(|| vec![0.0; k]);
            let c = count as f64;
            for &(ki, ga) in &g_a {
                col[ki] += ga * c;
            }
        }
    }
}

/// Loss and posterior coefficients for one row given its cosine scores.
fn row_loss_and_coeffs(gamma: f64, r_pos: f64, r_negs: &[f64]) -> (f64, f64, Vec<f64>) {
    let m = r_negs.iter().fold(r_pos, |acc, &s| acc.max(s));
    let e_pos = (gamma * (r_pos - m)).exp();
    let e_negs: Vec<f64> = r_negs.iter().map(|&s| (gamma * (s - m)).exp()).collect();
    let z = e_pos + e_negs.iter().sum::<f64>();
    let loss = -(gamma * (r_pos - m) - z.ln());
    let coeff_pos = gamma * (e_pos / z - 1.0);
    let coeff_negs: Vec<f64> = e_negs.iter().map(|&e| gamma * e / z).collect();
    (loss, coeff_pos, coeff_negs)
}

/// Exact gradient of the summed batch loss, plus the loss itself.
pub fn grad(model: &ClsmModel, rows: &[GradRow]) -> Result<(Gradients, f64)> {
    if rows.is_empty() {
        return Err(CmaError::Training("gradient of an empty batch".to_owned()));
    }
    let mut cache = DocCache::new();
    let mut total_loss = 0.0;
    for row in rows {
        let q = cache.intern(model, &row.query)?;
        let pos = cache.intern(model, &row.positive)?;
        let negs: Vec<usize> = row
            .negatives
            .iter()
            .map(|n| cache.intern(model, n))
            .collect::<Result<_>>()?;

        let r_pos = {
            let (yq, yp) = (&cache.acts[q].y, &cache.acts[pos].y);
            super::cosine(yq, yp)
        };
        let r_negs: Vec<f64> =
            negs.iter().map(|&n| super::cosine(&cache.acts[q].y, &cache.acts[n].y)).collect();

        let (loss, coeff_pos, coeff_negs) = row_loss_and_coeffs(model.config.gamma, r_pos, &r_negs);
        total_loss += loss;
        cosine_backward(&mut cache, q, pos, coeff_pos);
        for (&n, &c) in negs.iter().zip(&coeff_negs) {
            cosine_backward(&mut cache, q, n, c);
        }
    }

    let mut grads = Gradients::zeros(&model.config);
    for (acts, g_y) in cache.acts.iter().zip(&cache.g_y) {
        tower_backward(model, acts, g_y, &mut grads);
    }
    Ok((grads, total_loss))
}

/// Summed batch loss only (used by the finite-difference checker).
pub(crate) fn batch_loss(model: &ClsmModel, rows: &[GradRow]) -> Result<f64> {
    let mut cache = DocCache::new();
    let mut total = 0.0;
    for row in rows {
        let q = cache.intern(model, &row.query)?;
        let pos = cache.intern(model, &row.positive)?;
        let r_pos = super::cosine(&cache.acts[q].y, &cache.acts[pos].y);
        let mut r_negs = Vec::with_capacity(row.negatives.len());
        for n in &row.negatives {
            let ni = cache.intern(model, n)?;
            r_negs.push(super::cosine(&cache.acts[q].y, &cache.acts[ni].y));
        }
        total += row_loss_and_coeffs(model.config.gamma, r_pos, &r_negs).0;
    }
    Ok(total)
}

fn apply_update(model: &mut ClsmModel, grads: &Gradients, scale: f64) {
    let k = model.config.conv_units;
    for (&col, g) in &grads.wc_cols {
        let base = col as usize * k;
        for (w, &gv) in model.wc[base..base + k].iter_mut().zip(g) {
            *w -= scale * gv;
        }
    }
    for (w, &gv) in model.ws.iter_mut().zip(&grads.ws) {
        *w -= scale * gv;
    }
    if model.config.use_biases {
        for (w, &gv) in model.bc.iter_mut().zip(&grads.bc) {
            *w -= scale * gv;
        }
        for (w, &gv) in model.bs.iter_mut().zip(&grads.bs) {
            *w -= scale * gv;
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ClsmModel,
    /// Mean row loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Minibatch SGD over category-match positives.
///
/// Each positive's J negatives are ad titles of other rows in the same
/// minibatch, drawn uniformly with replacement. Epoch order, negative draws,
/// and the weight initialization all derive from `config.seed`, so equal
/// inputs produce identical weights.
pub fn train(pairs: &[TrainPair], config: &ClsmConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if pairs.len() < config.minibatch_size {
        return Err(CmaError::Training(format!(
            "need at least {} pairs, got {}",
            config.minibatch_size,
            pairs.len()
        )));
    }
    let mut model = ClsmModel::init(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "clsm-train"));
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for _epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut rows_seen = 0usize;
        for chunk in order.chunks(config.minibatch_size) {
            if chunk.len() < 2 {
                continue; // a lone row has no in-batch negatives
            }
            let rows: Vec<GradRow> = chunk
                .iter()
                .enumerate()
                .map(|(local, &pi)| {
                    let negatives = (0..config.negatives)
                        .map(|_| loop {
                            let j = rng.gen_range(0..chunk.len());
                            if j != local {
                                break pairs[chunk[j]].ad.clone();
                            }
                        })
                        .collect();
                    GradRow {
                        query: pairs[pi].query.clone(),
                        positive: pairs[pi].ad.clone(),
                        negatives,
                    }
                })
                .collect();
            let (grads, loss) = grad(&model, &rows)?;
            apply_update(&mut model, &grads, config.learning_rate / rows.len() as f64);
            loss_sum += loss;
            rows_seen += rows.len();
        }
        epoch_losses.push(loss_sum / rows_seen as f64);
    }
    Ok(TrainOutcome { model, epoch_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textprep::tokens;

    fn tiny_config(seed: u64) -> ClsmConfig {
        ClsmConfig {
            conv_units: 6,
            semantic_dim: 4,
            minibatch_size: 4,
            seed,
            ..ClsmConfig::default()
        }
    }

    fn some_pairs(n: usize) -> Vec<TrainPair> {
        let vocab = ["alpha", "bravo", "carbon", "delta", "echo", "fabric", "grain", "hotel"];
        (0..n)
            .map(|i| TrainPair {
                query: tokens(&format!("{} {}", vocab[i % 8], vocab[(i + 3) % 8])),
                ad: tokens(&format!("{} {} {}", vocab[i % 8], vocab[(i + 1) % 8], vocab[(i + 5) % 8])),
            })
            .collect()
    }

    #[test]
    fn identical_positive_and_negatives_give_log_j_plus_one() {
        let config = tiny_config(5);
        let model = ClsmModel::init(&config).unwrap();
        let doc = tokens("custom shirt printing");
        let row = GradRow {
            query: tokens("shirt printer"),
            positive: doc.clone(),
            negatives: vec![doc.clone(); config.negatives],
        };
        let (grads, loss) = grad(&model, &[row]).unwrap();
        assert_eq!(loss, ((config.negatives + 1) as f64).ln());
        let flat_max = grads
            .wc_cols
            .values()
            .flatten()
            .chain(&grads.bc)
            .chain(&grads.ws)
            .chain(&grads.bs)
            .fold(0.0f64, |m, &g| m.max(g.abs()));
        assert!(flat_max < 1e-10, "cancelled gradient should vanish, max {flat_max}");
    }

    #[test]
    fn untouched_trigram_columns_have_no_gradient() {
        let config = tiny_config(9);
        let model = ClsmModel::init(&config).unwrap();
        let rows = vec![GradRow {
            query: tokens("alpha beta"),
            positive: tokens("gamma beta"),
            negatives: vec![tokens("delta"), tokens("epsilon")],
        }];
        let (grads, _) = grad(&model, &rows).unwrap();
        let mut active: std::collections::HashSet<u32> = std::collections::HashSet::new();
        for text in ["alpha beta", "gamma beta", "delta", "epsilon"] {
            for slot in model.forward(&tokens(text)).unwrap().slots {
                active.extend(slot.iter().map(|&(i, _)| i));
            }
        }
        for col in grads.wc_cols.keys() {
            assert!(active.contains(col), "gradient touched inactive column {col}");
        }
    }

    #[test]
    fn zero_epochs_returns_initialized_model() {
        let config = ClsmConfig { epochs: 0, ..tiny_config(13) };
        let out = train(&some_pairs(8), &config).unwrap();
        assert_eq!(out.model, ClsmModel::init(&config).unwrap());
        assert!(out.epoch_losses.is_empty());
    }

    #[test]
    fn initial_mean_loss_is_near_log_five() {
        // At full default dimensions the initialized model scores every
        // candidate in a row nearly alike, so the posterior sits at 1/(J+1).
        // Evaluate on corpus-shaped pairs, which is what training sees.
        let sc = crate::synth::SynthConfig {
            num_queries: 300,
            num_ads: 200,
            impression_count: 400,
            ..crate::synth::SynthConfig::default()
        };
        let taxonomy = crate::synth::build_taxonomy(&sc).unwrap();
        let corpus = crate::synth::generate_corpus(&taxonomy, &sc).unwrap();
        let config = ClsmConfig::default();
        let model = ClsmModel::init(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<GradRow> = corpus
            .impressions
            .iter()
            .take(200)
            .map(|imp| GradRow {
                query: corpus.query(&imp.query_id).unwrap().text.clone(),
                positive: corpus.ad(&imp.ad_id).unwrap().text.clone(),
                negatives: (0..config.negatives)
                    .map(|_| corpus.ads[rng.gen_range(0..corpus.ads.len())].text.clone())
                    .collect(),
            })
            .collect();
        let loss = batch_loss(&model, &rows).unwrap() / rows.len() as f64;
        assert!((loss - 5.0f64.ln()).abs() < 0.1, "mean init loss {loss}");
    }

    #[test]
    fn training_is_deterministic() {
        let config = tiny_config(23);
        let pairs = some_pairs(32);
        let a = train(&pairs, &config).unwrap();
        let b = train(&pairs, &config).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.epoch_losses, b.epoch_losses);
    }

    #[test]
    fn insufficient_pairs_is_a_training_error() {
        let config = ClsmConfig { minibatch_size: 64, ..tiny_config(1) };
        assert!(train(&some_pairs(10), &config).is_err());
    }

    #[test]
    fn training_reduces_loss_on_separable_data() {
        // Four disjoint vocabularies; matching pairs share a class.
        let classes: [&[&str]; 4] = [
            &["redwood", "timber", "plank", "lumber", "cedar", "oak"],
            &["quartz", "crystal", "gem", "stone", "opal", "jade"],
            &["violin", "cello", "bow", "string", "viola", "fiddle"],
            &["pepper", "basil", "thyme", "clove", "sage", "mint"],
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut pairs = Vec::new();
        for i in 0..96 {
            let class = classes[i % 4];
            let pick = |rng: &mut ChaCha8Rng, n: usize| -> Vec<String> {
                let mut words: Vec<&str> = class.to_vec();
                words.shuffle(rng);
                words.truncate(n);
                words.iter().map(|w| w.to_string()).collect()
            };
            let q = pick(&mut rng, 2);
            let a = pick(&mut rng, 3);
            pairs.push(TrainPair { query: q, ad: a });
        }
        let config = ClsmConfig {
            epochs: 15,
            minibatch_size: 16,
            conv_units: 8,
            semantic_dim: 4,
            seed: 29,
            ..ClsmConfig::default()
        };
        let out = train(&pairs, &config).unwrap();
        let first = out.epoch_losses[0];
        let last = *out.epoch_losses.last().unwrap();
        assert!(last < first - 0.1, "loss should drop: {first} -> {last}");
    }
}
