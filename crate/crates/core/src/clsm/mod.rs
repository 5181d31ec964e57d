//! The convolutional latent semantic model and its training machinery.
//!
//! A text is encoded as per-position tri-letter window slots, pushed through
//! a shared convolution `h_t = tanh(Wc·x_t + bc)`, max-pooled over positions
//! into `v`, and projected to the semantic vector `y = tanh(Ws·v + bs)`.
//! Query-document relevance is the cosine of the two semantic vectors, and
//! training maximizes the softmax posterior of the positive document among
//! sampled negatives.
//!
//! Weights are held in f64 and serialized as f32 little-endian (see [`io`]).
//! The convolution matrix is stored column-major so the sparse tri-letter
//! input touches only contiguous column slices.

mod grad_check;
mod io;
mod train;

pub use grad_check::{grad_check, GradCheckReport};
pub use train::{grad, train, GradRow, Gradients, TrainOutcome, TrainPair};

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CmaError, Result};
use crate::seeding::derive_seed;
use crate::textprep::{window, WindowSlot, TRIGRAM_DIM};

/// Counts calls to [`embed`] / [`ClsmModel::forward`]; lets tests verify that
/// candidate scoring computes exactly one query embedding per call.
static EMBED_CALLS: AtomicU64 = AtomicU64::new(0);

pub fn embed_call_count() -> u64 {
    EMBED_CALLS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClsmConfig {
    pub trigram_dim: usize,
    /// Word window width; must be odd.
    pub window_n: usize,
    /// Convolution units (K).
    pub conv_units: usize,
    /// Semantic dimension (L).
    pub semantic_dim: usize,
    /// Softmax smoothing applied to cosine scores.
    pub gamma: f64,
    /// Negatives sampled per positive (J).
    pub negatives: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    /// When false, bc and bs stay fixed at zero, reproducing the strict
    /// bias-free architecture.
    pub use_biases: bool,
    pub seed: u64,
}

impl Default for ClsmConfig {
    fn default() -> Self {
        ClsmConfig {
            trigram_dim: TRIGRAM_DIM,
            window_n: 3,
            conv_units: 128,
            semantic_dim: 64,
            gamma: 10.0,
            negatives: 4,
            learning_rate: 0.05,
            epochs: 5,
            minibatch_size: 256,
            use_biases: true,
            seed: 1,
        }
    }
}

impl ClsmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trigram_dim != TRIGRAM_DIM {
            return Err(CmaError::Config(format!(
                "trigram_dim must be {TRIGRAM_DIM}, got {}",
                self.trigram_dim
            )));
        }
        if self.window_n == 0 || self.window_n % 2 == 0 {
            return Err(CmaError::Config(format!("window_n must be odd, got {}", self.window_n)));
        }
        if self.conv_units == 0 || self.semantic_dim == 0 {
            return Err(CmaError::Config("model dimensions must be positive".to_owned()));
        }
        if !(self.gamma > 0.0) {
            return Err(CmaError::Config("gamma must be positive".to_owned()));
        }
        if self.negatives == 0 {
            return Err(CmaError::Config("need at least one negative per positive".to_owned()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(CmaError::Config("learning_rate must be positive".to_owned()));
        }
        if self.minibatch_size < 2 {
            return Err(CmaError::Config("minibatch_size must be at least 2".to_owned()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.window_n * self.trigram_dim
    }
}

/// Semantic vector of a text.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClsmModel {
    pub config: ClsmConfig,
    /// Convolution weights, column-major: input coordinate j occupies
    /// `wc[j*K .. (j+1)*K]`.
    pub(crate) wc: Vec<f64>,
    pub(crate) bc: Vec<f64>,
    /// Semantic projection, row-major L × K.
    pub(crate) ws: Vec<f64>,
    pub(crate) bs: Vec<f64>,
}

/// Forward-pass record for one text; retained so training can route
/// gradients back through the max-pool.
#[derive(Debug, Clone)]
pub struct TowerActivations {
    pub slots: Vec<WindowSlot>,
    /// Per-position convolution outputs, each of length K.
    pub h: Vec<Vec<f64>>,
    /// Winning position per coordinate; ties go to the lowest index.
    pub argmax: Vec<usize>,
    pub v: Vec<f64>,
    pub y: Vec<f64>,
}

impl ClsmModel {
    /// Initialize weights uniform in `[-s, s]` with `s = sqrt(6/(fan_in+fan_out))`;
    /// biases start at zero.
    pub fn init(config: &ClsmConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "clsm-init"));
        let k = config.conv_units;
        let l = config.semantic_dim;
        let input_dim = config.input_dim();
        let s_wc = (6.0 / (input_dim + k) as f64).sqrt();
        let s_ws = (6.0 / (k + l) as f64).sqrt();
        let wc = (0..input_dim * k).map(|_| rng.gen_range(-s_wc..=s_wc)).collect();
        let ws = (0..l * k).map(|_| rng.gen_range(-s_ws..=s_ws)).collect();
        Ok(ClsmModel {
            config: config.clone(),
            wc,
            bc: vec![0.0; k],
            ws,
            bs: vec![0.0; l],
        })
    }

    pub(crate) fn from_parts(
        config: ClsmConfig,
        wc: Vec<f64>,
        bc: Vec<f64>,
        ws: Vec<f64>,
        bs: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let k = config.conv_units;
        let l = config.semantic_dim;
        if wc.len() != config.input_dim() * k || bc.len() != k || ws.len() != l * k || bs.len() != l
        {
            return Err(CmaError::Format("weight block sizes inconsistent with header".to_owned()));
        }
        Ok(ClsmModel { config, wc, bc, ws, bs })
    }

    /// Full forward pass with retained activations.
    pub fn forward(&self, tokens: &[String]) -> Result<TowerActivations> {
        if tokens.is_empty() {
            return Err(CmaError::Embedding("cannot embed an empty token list".to_owned()));
        }
        EMBED_CALLS.fetch_add(1, Ordering::Relaxed);
        let k = self.config.conv_units;
        let l = self.config.semantic_dim;
        let seq = window(tokens, self.config.window_n)?;

        let mut h: Vec<Vec<f64>> = Vec::with_capacity(seq.slots.len());
        let mut v = vec![f64::NEG_INFINITY; k];
        let mut argmax = vec![0usize; k];
        for (t, slot) in seq.slots.iter().enumerate() {
            let mut pre = self.bc.clone();
            for &(idx, count) in slot {
                let col = &self.wc[idx as usize * k..(idx as usize + 1) * k];
                let c = count as f64;
                for (p, w) in pre.iter_mut().zip(col) {
                    *p += w * c;
                }
            }
            for p in pre.iter_mut() {
                *p = p.tanh();
            }
            for (ki, &val) in pre.iter().enumerate() {
                if val > v[ki] {
                    v[ki] = val;
                    argmax[ki] = t;
                }
            }
            h.push(pre);
        }

        let mut y = Vec::with_capacity(l);
        for li in 0..l {
            let row = &self.ws[li * k..(li + 1) * k];
            let dot: f64 = row.iter().zip(&v).map(|(w, x)| w * x).sum();
            y.push((self.bs[li] + dot).tanh());
        }
        Ok(TowerActivations { slots: seq.slots, h, argmax, v, y })
    }
}

/// Embed a normalized, nonempty token sequence.
pub fn embed(model: &ClsmModel, tokens: &[String]) -> Result<Embedding> {
    Ok(Embedding(model.forward(tokens)?.y))
}

/// Cosine with the zero-vector convention: either operand zero scores 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// R(q, d): cosine similarity of the two semantic vectors.
pub fn relevance(model: &ClsmModel, q_tokens: &[String], d_tokens: &[String]) -> Result<f64> {
    let yq = embed(model, q_tokens)?;
    let yd = embed(model, d_tokens)?;
    Ok(cosine(&yq.0, &yd.0))
}

/// Softmax posterior of the positive document given the query:
/// `exp(γR⁺) / (exp(γR⁺) + Σ_j exp(γR_j))`, computed with max-subtraction.
pub fn posterior(positive_score: f64, negative_scores: &[f64], gamma: f64) -> f64 {
    let m = negative_scores
        .iter()
        .fold(positive_score, |acc, &s| acc.max(s));
    let pos = (gamma * (positive_score - m)).exp();
    let z: f64 = pos + negative_scores.iter().map(|&s| (gamma * (s - m)).exp()).sum::<f64>();
    pos / z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textprep::tokens;

    pub(crate) fn tiny_config(seed: u64) -> ClsmConfig {
        ClsmConfig {
            conv_units: 6,
            semantic_dim: 4,
            minibatch_size: 4,
            seed,
            ..ClsmConfig::default()
        }
    }

    fn zero_model(config: &ClsmConfig) -> ClsmModel {
        let mut m = ClsmModel::init(config).unwrap();
        m.wc.iter_mut().for_each(|w| *w = 0.0);
        m.ws.iter_mut().for_each(|w| *w = 0.0);
        m
    }

    #[test]
    fn single_token_pool_is_its_only_position() {
        let config = tiny_config(3);
        let model = ClsmModel::init(&config).unwrap();
        let act = model.forward(&tokens("printing")).unwrap();
        assert_eq!(act.h.len(), 1);
        assert_eq!(act.v, act.h[0]);
        assert!(act.argmax.iter().all(|&t| t == 0));
    }

    #[test]
    fn zero_weights_embed_to_zero_and_score_zero() {
        let config = tiny_config(3);
        let model = zero_model(&config);
        let e = embed(&model, &tokens("card printing")).unwrap();
        assert!(e.0.iter().all(|&x| x == 0.0));
        let r = relevance(&model, &tokens("card printing"), &tokens("adelaide")).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn identical_texts_score_one() {
        let config = tiny_config(5);
        let model = ClsmModel::init(&config).unwrap();
        let toks = tokens("custom t shirt printing");
        let r = relevance(&model, &toks, &toks).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relevance_is_symmetric() {
        let config = tiny_config(8);
        let model = ClsmModel::init(&config).unwrap();
        let a = tokens("lower back exercise");
        let b = tokens("back exercise lower back pain");
        let r_ab = relevance(&model, &a, &b).unwrap();
        let r_ba = relevance(&model, &b, &a).unwrap();
        assert_eq!(r_ab, r_ba);
    }

    #[test]
    fn empty_input_is_an_error() {
        let config = tiny_config(1);
        let model = ClsmModel::init(&config).unwrap();
        assert!(embed(&model, &[]).is_err());
    }

    #[test]
    fn cosine_closed_form() {
        assert!((cosine(&[1.0, 0.0], &[1.0, 1.0]) - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn posterior_symmetric_case() {
        let p = posterior(0.3, &[0.3, 0.3, 0.3, 0.3], 10.0);
        assert!((p - 0.2).abs() < 1e-12);
    }

    #[test]
    fn posterior_gamma_zero_is_uniform() {
        let p = posterior(0.9, &[0.1, -0.4, 0.7], 0.0);
        assert!((p - 0.25).abs() < 1e-12);
    }

    #[test]
    fn posterior_matches_direct_softmax_evaluation() {
        // gamma=10, R+=0.9, negatives all 0.1 → 1/(1 + 4·e^(−8))
        let p = posterior(0.9, &[0.1; 4], 10.0);
        let expected = 1.0 / (1.0 + 4.0 * (-8.0f64).exp());
        assert!((p - expected).abs() < 1e-12);
    }

    #[test]
    fn posterior_with_implied_negatives_sums_to_one() {
        let negs = [0.4, -0.2, 0.15];
        let gamma = 7.0;
        let pos = 0.55;
        let p_pos = posterior(pos, &negs, gamma);
        // Each negative's implied probability: swap it into the numerator.
        let mut total = p_pos;
        for i in 0..negs.len() {
            let mut others: Vec<f64> = negs.to_vec();
            others[i] = pos;
            total += posterior(negs[i], &others, gamma);
        }
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn distant_token_swap_only_moves_local_slots() {
        // Swapping two tokens at least window_n apart must leave every
        // position outside both windows with identical h values; oracle is a
        // direct recomputation on the swapped input.
        let config = tiny_config(11);
        let model = ClsmModel::init(&config).unwrap();
        let toks = tokens("alpha beta gamma delta epsilon zeta");
        let mut swapped = toks.clone();
        swapped.swap(0, 4); // distance 4 >= window_n = 3
        let a = model.forward(&toks).unwrap();
        let b = model.forward(&swapped).unwrap();
        let half = (config.window_n - 1) / 2;
        for t in 0..toks.len() {
            let touches_swap = (t as isize - 0).unsigned_abs() <= half
                || (t as isize - 4).unsigned_abs() <= half;
            if !touches_swap {
                assert_eq!(a.h[t], b.h[t], "position {t} should be untouched");
            }
        }
        assert_ne!(a.h[0], b.h[0]);
    }

    #[test]
    fn non_winning_column_perturbation_leaves_output_unchanged() {
        let config = tiny_config(21);
        let mut model = ClsmModel::init(&config).unwrap();
        let toks = tokens("first second");
        let act = model.forward(&toks).unwrap();
        let k = config.conv_units;

        // Find a coordinate whose winner is position 0 and an input column
        // active only at position 1; nudging that column entry (too little to
        // flip the max) must leave v and y unchanged.
        let coord = act.argmax.iter().position(|&t| t == 0).expect("some coord won by pos 0");
        let active0: std::collections::HashSet<u32> =
            act.slots[0].iter().map(|&(i, _)| i).collect();
        let &(col, _) = act.slots[1]
            .iter()
            .find(|&&(i, _)| !active0.contains(&i))
            .expect("position 1 has a private column");
        model.wc[col as usize * k + coord] += 1e-6;
        let after = model.forward(&toks).unwrap();
        assert_eq!(act.v, after.v);
        assert_eq!(act.y, after.y);
    }
}
