//! Finite-difference verification of the analytic gradient.
//!
//! Works on deliberately small models: every bias and projection weight is
//! checked, along with a seeded subset of active convolution columns (and a
//! few inactive ones, whose gradient must be exactly zero). Samples are drawn
//! with wide weights and re-drawn if any max-pool margin is too thin —
//! central differences are meaningless across a pooling switch.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CmaError, Result};
use crate::seeding::derive_seed;

use super::train::{batch_loss, grad, GradRow, Gradients};
use super::{ClsmConfig, ClsmModel};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

#[derive(Debug, Clone, Copy)]
enum Coord {
    Wc(u32, usize),
    Bc(usize),
    Ws(usize),
    Bs(usize),
}

fn read_coord(model: &ClsmModel, c: Coord) -> f64 {
    let k = model.config.conv_units;
    match c {
        Coord::Wc(col, ki) => model.wc[col as usize * k + ki],
        Coord::Bc(ki) => model.bc[ki],
        Coord::Ws(i) => model.ws[i],
        Coord::Bs(li) => model.bs[li],
    }
}

fn write_coord(model: &mut ClsmModel, c: Coord, value: f64) {
    let k = model.config.conv_units;
    match c {
        Coord::Wc(col, ki) => model.wc[col as usize * k + ki] = value,
        Coord::Bc(ki) => model.bc[ki] = value,
        Coord::Ws(i) => model.ws[i] = value,
        Coord::Bs(li) => model.bs[li] = value,
    }
}

fn analytic_coord(grads: &Gradients, c: Coord) -> f64 {
    match c {
        Coord::Wc(col, ki) => grads.wc_cols.get(&col).map_or(0.0, |col_g| col_g[ki]),
        Coord::Bc(ki) => grads.bc[ki],
        Coord::Ws(i) => grads.ws[i],
        Coord::Bs(li) => grads.bs[li],
    }
}

fn random_word(rng: &mut ChaCha8Rng) -> String {
    const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
    let len = rng.gen_range(2..=4);
    (0..len).map(|_| LETTERS[rng.gen_range(0..LETTERS.len())] as char).collect()
}

fn random_text(rng: &mut ChaCha8Rng) -> Vec<String> {
    let words = rng.gen_range(1..=3);
    (0..words).map(|_| random_word(rng)).collect()
}

fn wide_random_model(config: &ClsmConfig, rng: &mut ChaCha8Rng) -> Result<ClsmModel> {
    let mut model = ClsmModel::init(config)?;
    for w in model.wc.iter_mut() {
        *w = rng.gen_range(-0.5..=0.5);
    }
    for w in model.ws.iter_mut() {
        *w = rng.gen_range(-0.5..=0.5);
    }
    for w in model.bc.iter_mut() {
        *w = rng.gen_range(-0.2..=0.2);
    }
    for w in model.bs.iter_mut() {
        *w = rng.gen_range(-0.2..=0.2);
    }
    Ok(model)
}

/// Smallest winner-vs-runner-up gap across all pooled coordinates of all
/// documents in the batch. Single-position documents have no competition.
fn min_pool_margin(model: &ClsmModel, rows: &[GradRow]) -> Result<f64> {
    let mut margin = f64::INFINITY;
    let mut seen: BTreeSet<Vec<String>> = BTreeSet::new();
    for row in rows {
        for text in std::iter::once(&row.query)
            .chain(std::iter::once(&row.positive))
            .chain(row.negatives.iter())
        {
            if !seen.insert(text.clone()) {
                continue;
            }
            let acts = model.forward(text)?;
            if acts.h.len() < 2 {
                continue;
            }
            for ki in 0..model.config.conv_units {
                let winner = acts.v[ki];
                let runner_up = acts
                    .h
                    .iter()
                    .enumerate()
                    .filter(|&(t, _)| t != acts.argmax[ki])
                    .map(|(_, h)| h[ki])
                    .fold(f64::NEG_INFINITY, f64::max);
                margin = margin.min(winner - runner_up);
            }
        }
    }
    Ok(margin)
}

/// Compare the analytic batch gradient to central finite differences on a
/// seeded sample; returns the worst relative error over the checked
/// coordinates.
pub fn grad_check(config: &ClsmConfig, sample_seed: u64, epsilon: f64) -> Result<GradCheckReport> {
    config.validate()?;
    if config.conv_units > 8 || config.semantic_dim > 4 {
        return Err(CmaError::Config(
            "grad_check is limited to K <= 8, L <= 4".to_owned(),
        ));
    }
    if !(epsilon > 0.0) {
        return Err(CmaError::Config("epsilon must be positive".to_owned()));
    }

    // Draw model and sample; retry deterministically while any pooling margin
    // is thin enough for a perturbation to flip an argmax.
    let mut model = None;
    let mut rows = Vec::new();
    for attempt in 0..64u64 {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(sample_seed, &format!("grad-check-{attempt}")));
        let candidate = wide_random_model(config, &mut rng)?;
        let candidate_rows: Vec<GradRow> = (0..2)
            .map(|_| GradRow {
                query: random_text(&mut rng),
                positive: random_text(&mut rng),
                negatives: (0..config.negatives).map(|_| random_text(&mut rng)).collect(),
            })
            .collect();
        if min_pool_margin(&candidate, &candidate_rows)? > 100.0 * epsilon {
            model = Some(candidate);
            rows = candidate_rows;
            break;
        }
    }
    let mut model = model
        .ok_or_else(|| CmaError::Training("could not draw a well-separated sample".to_owned()))?;

    let (grads, _) = grad(&model, &rows)?;
    let coords = collect_coords(&model, &rows, sample_seed)?;

    let mut max_rel_error = 0.0f64;
    for &coord in &coords {
        let original = read_coord(&model, coord);
        write_coord(&mut model, coord, original + epsilon);
        let loss_plus = batch_loss(&model, &rows)?;
        write_coord(&mut model, coord, original - epsilon);
        let loss_minus = batch_loss(&model, &rows)?;
        write_coord(&mut model, coord, original);

        let numeric = (loss_plus - loss_minus) / (2.0 * epsilon);
        let analytic = analytic_coord(&grads, coord);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        max_rel_error = max_rel_error.max(rel);
    }
    Ok(GradCheckReport { max_rel_error, coords_checked: coords.len() })
}

fn collect_coords(model: &ClsmModel, rows: &[GradRow], seed: u64) -> Result<Vec<Coord>> {
    let k = model.config.conv_units;
    let mut active: BTreeSet<u32> = BTreeSet::new();
    for row in rows {
        for text in std::iter::once(&row.query)
            .chain(std::iter::once(&row.positive))
            .chain(row.negatives.iter())
        {
            for slot in model.forward(text)?.slots {
                active.extend(slot.iter().map(|&(i, _)| i));
            }
        }
    }
    // Keep the subset small but always past 200 coordinates in total.
    let col_cap = 72.max(200 / k + 1);
    let mut cols: Vec<u32> = active.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "grad-check-cols"));
    if cols.len() > col_cap {
        cols.shuffle(&mut rng);
        cols.truncate(col_cap);
        cols.sort_unstable();
    }

    let mut coords = Vec::new();
    for &col in &cols {
        for ki in 0..k {
            coords.push(Coord::Wc(col, ki));
        }
    }
    for ki in 0..k {
        coords.push(Coord::Bc(ki));
    }
    for i in 0..model.ws.len() {
        coords.push(Coord::Ws(i));
    }
    for li in 0..model.bs.len() {
        coords.push(Coord::Bs(li));
    }
    // Columns no document touches: both sides must be exactly zero. At least
    // a handful, more if needed to reach 200 checked coordinates.
    let input_dim = model.config.input_dim() as u32;
    let mut inactive_added = 0;
    while inactive_added < 8 || coords.len() < 200 {
        let col = rng.gen_range(0..input_dim);
        if !active.contains(&col) {
            coords.push(Coord::Wc(col, rng.gen_range(0..k)));
            inactive_added += 1;
        }
    }
    Ok(coords)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_config(seed: u64) -> ClsmConfig {
        ClsmConfig {
            conv_units: 3,
            semantic_dim: 2,
            minibatch_size: 2,
            seed,
            ..ClsmConfig::default()
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let report = grad_check(&check_config(1), 7, 1e-4).unwrap();
        assert!(report.coords_checked >= 200, "checked {}", report.coords_checked);
        assert!(report.max_rel_error < 1e-3, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn halving_epsilon_keeps_error_in_the_same_regime() {
        let a = grad_check(&check_config(2), 11, 1e-4).unwrap();
        let b = grad_check(&check_config(2), 11, 5e-5).unwrap();
        let ratio = (a.max_rel_error / b.max_rel_error).max(b.max_rel_error / a.max_rel_error);
        assert!(ratio < 10.0, "errors {} vs {}", a.max_rel_error, b.max_rel_error);
    }

    #[test]
    fn zeroed_projection_gradient_is_caught() {
        // Negative control: discard the Ws block of the analytic gradient and
        // run the same comparison; the mismatch must be glaring.
        let config = check_config(3);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(13, "grad-check-0"));
        let mut model = wide_random_model(&config, &mut rng).unwrap();
        let rows: Vec<GradRow> = (0..2)
            .map(|_| GradRow {
                query: random_text(&mut rng),
                positive: random_text(&mut rng),
                negatives: (0..config.negatives).map(|_| random_text(&mut rng)).collect(),
            })
            .collect();
        let (mut grads, _) = grad(&model, &rows).unwrap();
        grads.ws.iter_mut().for_each(|g| *g = 0.0);

        let epsilon = 1e-4;
        let mut worst = 0.0f64;
        for i in 0..model.ws.len() {
            let coord = Coord::Ws(i);
            let original = read_coord(&model, coord);
            write_coord(&mut model, coord, original + epsilon);
            let lp = batch_loss(&model, &rows).unwrap();
            write_coord(&mut model, coord, original - epsilon);
            let lm = batch_loss(&model, &rows).unwrap();
            write_coord(&mut model, coord, original);
            let numeric = (lp - lm) / (2.0 * epsilon);
            let analytic = analytic_coord(&grads, coord);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst > 1e-1, "tampered gradient slipped through: {worst}");
    }

    #[test]
    fn oversized_dims_are_rejected() {
        let config = ClsmConfig { conv_units: 16, semantic_dim: 8, ..ClsmConfig::default() };
        assert!(grad_check(&config, 1, 1e-4).is_err());
    }
}
