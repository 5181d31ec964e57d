//! Gradient boosted decision trees with logistic loss.
//!
//! Per round a regression tree is fit to the current gradients with exact
//! greedy splits. Split gain is gradient-variance reduction
//! `G_L²/n_L + G_R²/n_R − G²/n` (scale-invariant, so uniformly duplicating
//! rows leaves the learned structure unchanged); leaf values take a Newton
//! step `Σg / (Σh + λ)` with λ = 1. Ties in the split search resolve to the
//! lowest feature index, then the lowest threshold. No sampling anywhere:
//! training is a pure function of the data and config.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{CmaError, Result};

use super::FeatureVector;

const LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtConfig {
    pub num_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            num_trees: 200,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 20,
            seed: 1,
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(CmaError::Config("max_depth must be positive".to_owned()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(CmaError::Config("learning_rate must be positive".to_owned()));
        }
        if self.min_samples_leaf == 0 {
            return Err(CmaError::Config("min_samples_leaf must be positive".to_owned()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegressionTree {
    /// Root at index 0.
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split { feature, threshold, left, right } => {
                    at = if x[*feature] < *threshold { *left } else { *right };
                }
            }
        }
    }

    fn depth_from(&self, at: usize) -> usize {
        match &self.nodes[at] {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => {
                1 + self.depth_from(*left).max(self.depth_from(*right))
            }
        }
    }

    pub fn depth(&self) -> usize {
        self.depth_from(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel {
    pub n_features: usize,
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
    pub warning: Option<String>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

struct TreeBuilder<'a> {
    x: &'a [FeatureVector],
    g: &'a [f64],
    h: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<TreeNode>,
}

impl<'a> TreeBuilder<'a> {
    fn leaf(&mut self, indices: &[usize]) -> usize {
        let g_sum: f64 = indices.iter().map(|&i| self.g[i]).sum();
        let h_sum: f64 = indices.iter().map(|&i| self.h[i]).sum();
        self.nodes.push(TreeNode::Leaf { value: g_sum / (h_sum + LAMBDA) });
        self.nodes.len() - 1
    }

    fn best_split(&self, indices: &[usize]) -> Option<(usize, f64)> {
        let n_features = self.x[indices[0]].0.len();
        let n = indices.len() as f64;

        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = indices.to_vec();
        for feature in 0..n_features {
            // Sort by value with index as tie-breaker for full determinism.
            sorted.sort_unstable_by(|&a, &b| {
                self.x[a].0[feature]
                    .partial_cmp(&self.x[b].0[feature])
                    .expect("finite features")
                    .then(a.cmp(&b))
            });
            // Collapse equal-value runs first: prefix sums over groups keep
            // gains exactly proportional when every row is duplicated, which
            // row-by-row accumulation would not.
            let mut groups: Vec<(f64, f64, usize)> = Vec::new(); // (value, g_sum, count)
            for &i in &sorted {
                let v = self.x[i].0[feature];
                match groups.last_mut() {
                    Some((gv, gs, gc)) if *gv == v => {
                        *gs += self.g[i];
                        *gc += 1;
                    }
                    _ => groups.push((v, self.g[i], 1)),
                }
            }
            let g_total: f64 = {
                let mut acc = 0.0;
                for &(_, gs, _) in &groups {
                    acc += gs;
                }
                acc
            };
            let parent_score = g_total * g_total / n;

            let mut g_left = 0.0f64;
            let mut n_left = 0usize;
            for w in groups.windows(2) {
                g_left += w[0].1;
                n_left += w[0].2;
                let n_right = sorted.len() - n_left;
                if n_left < self.min_leaf || n_right < self.min_leaf {
                    continue;
                }
                let g_right = g_total - g_left;
                let gain = g_left * g_left / n_left as f64
                    + g_right * g_right / n_right as f64
                    - parent_score;
                if gain > 0.0 && best.map_or(true, |(bg, _, _)| gain > bg) {
                    best = Some((gain, feature, (w[0].0 + w[1].0) / 2.0));
                }
            }
        }
        best.map(|(_, feature, threshold)| (feature, threshold))
    }

    fn grow(&mut self, indices: &[usize], depth: usize) -> usize {
        if depth >= self.max_depth || indices.len() < 2 * self.min_leaf {
            return self.leaf(indices);
        }
        let Some((feature, threshold)) = self.best_split(indices) else {
            return self.leaf(indices);
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
            indices.iter().partition(|&&i| self.x[i].0[feature] < threshold);
        let placeholder = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { value: 0.0 });
        let left = self.grow(&left_idx, depth + 1);
        let right = self.grow(&right_idx, depth + 1);
        self.nodes[placeholder] = TreeNode::Split { feature, threshold, left, right };
        placeholder
    }
}

/// Boosted training with logistic loss.
///
/// Degenerate single-class inputs return a base-score-only model carrying a
/// warning instead of failing.
pub fn gbdt_train(x: &[FeatureVector], y: &[u8], config: &GbdtConfig) -> Result<GbdtModel> {
    config.validate()?;
    if x.len() != y.len() {
        return Err(CmaError::Data(format!("{} rows vs {} labels", x.len(), y.len())));
    }
    if x.len() < 2 * config.min_samples_leaf {
        return Err(CmaError::Data(format!(
            "need at least {} rows, got {}",
            2 * config.min_samples_leaf,
            x.len()
        )));
    }
    let n_features = x[0].0.len();
    for (i, row) in x.iter().enumerate() {
        if row.0.len() != n_features {
            return Err(CmaError::Feature(format!(
                "row {i} has {} features, expected {n_features}",
                row.0.len()
            )));
        }
        if row.0.iter().any(|v| !v.is_finite()) {
            return Err(CmaError::Feature(format!("row {i} has a non-finite feature")));
        }
    }

    let positives = y.iter().filter(|&&l| l == 1).count();
    let rate = (positives as f64 / y.len() as f64).clamp(1e-6, 1.0 - 1e-6);
    let base_score = (rate / (1.0 - rate)).ln();
    let mut model = GbdtModel {
        n_features,
        base_score,
        learning_rate: config.learning_rate,
        trees: Vec::with_capacity(config.num_trees),
        warning: None,
    };
    if positives == 0 || positives == y.len() {
        model.warning = Some("degenerate-single-class".to_owned());
        return Ok(model);
    }

    let mut raw: Vec<f64> = vec![base_score; x.len()];
    let all_indices: Vec<usize> = (0..x.len()).collect();
    for _round in 0..config.num_trees {
        let p: Vec<f64> = raw.iter().map(|&f| sigmoid(f)).collect();
        let g: Vec<f64> = y.iter().zip(&p).map(|(&yi, &pi)| yi as f64 - pi).collect();
        let h: Vec<f64> = p.iter().map(|&pi| pi * (1.0 - pi)).collect();

        let mut builder = TreeBuilder {
            x,
            g: &g,
            h: &h,
            max_depth: config.max_depth,
            min_leaf: config.min_samples_leaf,
            nodes: Vec::new(),
        };
        builder.grow(&all_indices, 0);
        let tree = RegressionTree { nodes: builder.nodes };
        for (ri, xi) in raw.iter_mut().zip(x) {
            *ri += config.learning_rate * tree.predict(&xi.0);
        }
        model.trees.push(tree);
    }
    Ok(model)
}

/// Raw additive score before the sigmoid.
pub fn gbdt_predict_raw(model: &GbdtModel, x: &FeatureVector) -> Result<f64> {
    if x.0.len() != model.n_features {
        return Err(CmaError::Feature(format!(
            "vector has {} features, model expects {}",
            x.0.len(),
            model.n_features
        )));
    }
    let tree_sum: f64 = model.trees.iter().map(|t| t.predict(&x.0)).sum();
    Ok(model.base_score + model.learning_rate * tree_sum)
}

/// Predicted probability of the positive class.
pub fn gbdt_predict(model: &GbdtModel, x: &FeatureVector) -> Result<f64> {
    Ok(sigmoid(gbdt_predict_raw(model, x)?))
}

// ---------------------------------------------------------------------------
// S-expression model file
// ---------------------------------------------------------------------------

fn write_node<W: Write>(w: &mut W, tree: &RegressionTree, at: usize) -> Result<()> {
    match &tree.nodes[at] {
        TreeNode::Leaf { value } => write!(w, "(leaf {value})")?,
        TreeNode::Split { feature, threshold, left, right } => {
            write!(w, "(split {feature} {threshold} ")?;
            write_node(w, tree, *left)?;
            write!(w, " ")?;
            write_node(w, tree, *right)?;
            write!(w, ")")?;
        }
    }
    Ok(())
}

impl GbdtModel {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "(gbdt")?;
        writeln!(w, "  (version 1)")?;
        writeln!(w, "  (n_features {})", self.n_features)?;
        writeln!(w, "  (base_score {})", self.base_score)?;
        writeln!(w, "  (learning_rate {})", self.learning_rate)?;
        if let Some(warning) = &self.warning {
            writeln!(w, "  (warning {warning})")?;
        }
        for tree in &self.trees {
            write!(w, "  (tree ")?;
            write_node(&mut w, tree, 0)?;
            writeln!(w, ")")?;
        }
        writeln!(w, ")")?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut reader: R) -> Result<Self> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        let expr = parse_sexpr(&text)?;
        model_from_sexpr(&expr)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Sexpr {
    Atom(String),
    List(Vec<Sexpr>),
}

fn parse_sexpr(text: &str) -> Result<Sexpr> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        match ch {
            '(' | ')' => {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(ch.to_string());
            }
            c if c.is_whitespace() => {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
            }
            c => current.push(c),
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }

    fn parse(tokens: &[String], pos: &mut usize) -> Result<Sexpr> {
        let token = tokens
            .get(*pos)
            .ok_or_else(|| CmaError::Parse("unexpected end of s-expression".to_owned()))?;
        *pos += 1;
        if token == "(" {
            let mut items = Vec::new();
            loop {
                match tokens.get(*pos).map(String::as_str) {
                    Some(")") => {
                        *pos += 1;
                        return Ok(Sexpr::List(items));
                    }
                    Some(_) => items.push(parse(tokens, pos)?),
                    None => return Err(CmaError::Parse("unbalanced s-expression".to_owned())),
                }
            }
        } else if token == ")" {
            Err(CmaError::Parse("unexpected ')'".to_owned()))
        } else {
            Ok(Sexpr::Atom(token.clone()))
        }
    }
    let mut pos = 0;
    let expr = parse(&tokens, &mut pos)?;
    if pos != tokens.len() {
        return Err(CmaError::Parse("trailing tokens after s-expression".to_owned()));
    }
    Ok(expr)
}

fn atom(expr: &Sexpr) -> Result<&str> {
    match expr {
        Sexpr::Atom(s) => Ok(s),
        Sexpr::List(_) => Err(CmaError::Parse("expected atom".to_owned())),
    }
}

fn node_from_sexpr(expr: &Sexpr, nodes: &mut Vec<TreeNode>) -> Result<usize> {
    let Sexpr::List(items) = expr else {
        return Err(CmaError::Parse("tree node must be a list".to_owned()));
    };
    match items.first().map(atom).transpose()? {
        Some("leaf") if items.len() == 2 => {
            let value: f64 = atom(&items[1])?
                .parse()
                .map_err(|_| CmaError::Parse("bad leaf value".to_owned()))?;
            nodes.push(TreeNode::Leaf { value });
            Ok(nodes.len() - 1)
        }
        Some("split") if items.len() == 5 => {
            let feature: usize = atom(&items[1])?
                .parse()
                .map_err(|_| CmaError::Parse("bad split feature".to_owned()))?;
            let threshold: f64 = atom(&items[2])?
                .parse()
                .map_err(|_| CmaError::Parse("bad split threshold".to_owned()))?;
            let placeholder = nodes.len();
            nodes.push(TreeNode::Leaf { value: 0.0 });
            let left = node_from_sexpr(&items[3], nodes)?;
            let right = node_from_sexpr(&items[4], nodes)?;
            nodes[placeholder] = TreeNode::Split { feature, threshold, left, right };
            Ok(placeholder)
        }
        _ => Err(CmaError::Parse("malformed tree node".to_owned())),
    }
}

fn model_from_sexpr(expr: &Sexpr) -> Result<GbdtModel> {
    let Sexpr::List(items) = expr else {
        return Err(CmaError::Parse("model file must hold one list".to_owned()));
    };
    if items.first().map(atom).transpose()? != Some("gbdt") {
        return Err(CmaError::Parse("expected (gbdt ...)".to_owned()));
    }
    let mut model = GbdtModel {
        n_features: 0,
        base_score: 0.0,
        learning_rate: 0.0,
        trees: Vec::new(),
        warning: None,
    };
    for item in &items[1..] {
        let Sexpr::List(fields) = item else {
            return Err(CmaError::Parse("model sections must be lists".to_owned()));
        };
        match fields.first().map(atom).transpose()? {
            Some("version") => {
                if atom(&fields[1])? != "1" {
                    return Err(CmaError::Parse("unsupported gbdt model version".to_owned()));
                }
            }
            Some("n_features") => {
                model.n_features = atom(&fields[1])?
                    .parse()
                    .map_err(|_| CmaError::Parse("bad n_features".to_owned()))?;
            }
            Some("base_score") => {
                model.base_score = atom(&fields[1])?
                    .parse()
                    .map_err(|_| CmaError::Parse("bad base_score".to_owned()))?;
            }
            Some("learning_rate") => {
                model.learning_rate = atom(&fields[1])?
                    .parse()
                    .map_err(|_| CmaError::Parse("bad learning_rate".to_owned()))?;
            }
            Some("warning") => {
                model.warning = Some(atom(&fields[1])?.to_owned());
            }
            Some("tree") if fields.len() == 2 => {
                let mut nodes = Vec::new();
                node_from_sexpr(&fields[1], &mut nodes)?;
                model.trees.push(RegressionTree { nodes });
            }
            other => {
                return Err(CmaError::Parse(format!("unknown model section {other:?}")));
            }
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::auc_roc;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fv(values: &[f64]) -> FeatureVector {
        FeatureVector(values.to_vec())
    }

    fn small_config() -> GbdtConfig {
        GbdtConfig { num_trees: 5, max_depth: 2, min_samples_leaf: 1, ..GbdtConfig::default() }
    }

    #[test]
    fn single_class_returns_base_only_model_with_warning() {
        let x: Vec<FeatureVector> = (0..10).map(|i| fv(&[i as f64])).collect();
        let y = vec![1u8; 10];
        let model = gbdt_train(&x, &y, &small_config()).unwrap();
        assert!(model.trees.is_empty());
        assert!(model.warning.is_some());
        // Predicted probability equals the (clamped) class rate.
        let p = gbdt_predict(&model, &fv(&[3.0])).unwrap();
        assert!(p > 0.999_99);
    }

    #[test]
    fn all_equal_labels_prediction_is_class_rate() {
        // Half and half but no informative feature: every prediction stays at
        // the base rate.
        let x: Vec<FeatureVector> = (0..20).map(|_| fv(&[1.0])).collect();
        let y: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
        let model = gbdt_train(&x, &y, &small_config()).unwrap();
        let p = gbdt_predict(&model, &fv(&[1.0])).unwrap();
        assert!((p - 0.5).abs() < 1e-9);
    }

    /// Exhaustive split-search oracle for one feature: every midpoint between
    /// adjacent distinct values, scored by gradient-variance reduction.
    fn oracle_best_midpoint(xs: &[f64], g: &[f64]) -> f64 {
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
        let total: f64 = g.iter().sum();
        let n = xs.len() as f64;
        let mut best = (f64::NEG_INFINITY, f64::NAN);
        let mut g_left = 0.0;
        for p in 0..order.len() - 1 {
            g_left += g[order[p]];
            let (vl, vr) = (xs[order[p]], xs[order[p + 1]]);
            if vl == vr {
                continue;
            }
            let nl = (p + 1) as f64;
            let nr = n - nl;
            let gr = total - g_left;
            let gain = g_left * g_left / nl + gr * gr / nr - total * total / n;
            if gain > best.0 {
                best = (gain, (vl + vr) / 2.0);
            }
        }
        best.1
    }

    #[test]
    fn separable_1d_data_is_split_inside_the_gap() {
        let mut xs = Vec::new();
        let mut y = Vec::new();
        for i in 0..25 {
            xs.push(-3.0 + 0.08 * i as f64); // negatives in [-3, -1.08]
            y.push(0u8);
        }
        for i in 0..25 {
            xs.push(1.0 + 0.08 * i as f64); // positives in [1, 2.92]
            y.push(1u8);
        }
        let x: Vec<FeatureVector> = xs.iter().map(|&v| fv(&[v])).collect();
        let config = GbdtConfig {
            num_trees: 1,
            max_depth: 1,
            min_samples_leaf: 1,
            ..GbdtConfig::default()
        };
        let model = gbdt_train(&x, &y, &config).unwrap();

        let TreeNode::Split { threshold, .. } = model.trees[0].nodes[0] else {
            panic!("root must split");
        };
        assert!(threshold > -1.08 && threshold < 1.0, "threshold {threshold}");

        // Against the exhaustive oracle on the first round's gradients.
        let p0 = sigmoid(model.base_score);
        let g: Vec<f64> = y.iter().map(|&yi| yi as f64 - p0).collect();
        let oracle = oracle_best_midpoint(&xs, &g);
        assert_eq!(threshold, oracle);

        let scores: Vec<f64> =
            x.iter().map(|xi| gbdt_predict(&model, xi).unwrap()).collect();
        assert_eq!(auc_roc(&scores, &y).unwrap(), 1.0);
    }

    fn strip_structure(t: &RegressionTree) -> Vec<(usize, f64, usize, usize)> {
        t.nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Split { feature, threshold, left, right } => {
                    Some((*feature, *threshold, *left, *right))
                }
                TreeNode::Leaf { .. } => None,
            })
            .collect()
    }

    #[test]
    fn duplicating_rows_leaves_tree_structure_unchanged() {
        // Gains are scale-invariant under uniform duplication, so the tree
        // fit to any fixed gradient vector is structurally identical. Across
        // boosting rounds the λ-regularized leaf values shift slightly under
        // duplication, so the guarantee is per-tree given its gradients;
        // retrain with one tree (several seeds) and compare structures.
        for seed in [5u64, 6, 7, 8] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<FeatureVector> = (0..60)
                .map(|_| fv(&[rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0)]))
                .collect();
            let y: Vec<u8> = x
                .iter()
                .map(|v| u8::from(v.0[0] + 0.3 * v.0[1] > 0.1))
                .collect();
            let config = GbdtConfig {
                num_trees: 1,
                max_depth: 3,
                min_samples_leaf: 1,
                ..GbdtConfig::default()
            };
            let base = gbdt_train(&x, &y, &config).unwrap();

            let mut x2 = x.clone();
            x2.extend(x.iter().cloned());
            let mut y2 = y.clone();
            y2.extend(y.iter().copied());
            let doubled = gbdt_train(&x2, &y2, &config).unwrap();

            assert_eq!(base.trees.len(), doubled.trees.len());
            for (a, b) in base.trees.iter().zip(&doubled.trees) {
                assert_eq!(strip_structure(a), strip_structure(b));
            }
        }
    }

    #[test]
    fn duplication_keeps_first_tree_identical_in_longer_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x: Vec<FeatureVector> = (0..80)
            .map(|_| fv(&[rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0)]))
            .collect();
        let y: Vec<u8> = x.iter().map(|v| u8::from(v.0[0] > 0.0)).collect();
        let config = GbdtConfig {
            num_trees: 6,
            max_depth: 3,
            min_samples_leaf: 1,
            ..GbdtConfig::default()
        };
        let base = gbdt_train(&x, &y, &config).unwrap();
        let mut x2 = x.clone();
        x2.extend(x.iter().cloned());
        let mut y2 = y.clone();
        y2.extend(y.iter().copied());
        let doubled = gbdt_train(&x2, &y2, &config).unwrap();
        assert_eq!(strip_structure(&base.trees[0]), strip_structure(&doubled.trees[0]));
    }

    #[test]
    fn zero_trees_predicts_sigmoid_of_base() {
        let model = GbdtModel {
            n_features: 2,
            base_score: 0.4,
            learning_rate: 0.1,
            trees: Vec::new(),
            warning: None,
        };
        let p = gbdt_predict(&model, &fv(&[0.0, 0.0])).unwrap();
        assert_eq!(p, sigmoid(0.4));
    }

    #[test]
    fn positive_leaf_tree_raises_every_prediction() {
        let base = GbdtModel {
            n_features: 1,
            base_score: -0.2,
            learning_rate: 0.1,
            trees: Vec::new(),
            warning: None,
        };
        let mut boosted = base.clone();
        boosted.trees.push(RegressionTree {
            nodes: vec![
                TreeNode::Split { feature: 0, threshold: 0.5, left: 1, right: 2 },
                TreeNode::Leaf { value: 0.3 },
                TreeNode::Leaf { value: 1.1 },
            ],
        });
        for v in [-5.0, 0.0, 0.49, 0.51, 7.0] {
            let before = gbdt_predict(&base, &fv(&[v])).unwrap();
            let after = gbdt_predict(&boosted, &fv(&[v])).unwrap();
            assert!(after > before);
        }
    }

    #[test]
    fn predictions_ignore_unused_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // Feature 1 is constant in training, so no split can use it.
        let x: Vec<FeatureVector> =
            (0..40).map(|_| fv(&[rng.gen_range(-1.0..1.0), 5.0])).collect();
        let y: Vec<u8> = x.iter().map(|v| u8::from(v.0[0] > 0.0)).collect();
        let model = gbdt_train(&x, &y, &small_config()).unwrap();
        let a = gbdt_predict(&model, &fv(&[0.3, 5.0])).unwrap();
        let b = gbdt_predict(&model, &fv(&[0.3, -999.0])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_mismatch_is_a_feature_error() {
        let x: Vec<FeatureVector> = (0..10).map(|i| fv(&[i as f64, 0.0])).collect();
        let y: Vec<u8> = (0..10).map(|i| (i % 2) as u8).collect();
        let model = gbdt_train(&x, &y, &small_config()).unwrap();
        assert!(gbdt_predict(&model, &fv(&[1.0])).is_err());
    }

    #[test]
    fn monotone_feature_transform_preserves_train_point_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<FeatureVector> = (0..50)
            .map(|_| fv(&[rng.gen_range(-2.0..2.0), rng.gen_range(0.0..4.0)]))
            .collect();
        let y: Vec<u8> = x
            .iter()
            .map(|v| u8::from(v.0[0] > 0.2 * v.0[1] - 0.3))
            .collect();
        let config = GbdtConfig {
            num_trees: 10,
            max_depth: 3,
            min_samples_leaf: 2,
            ..GbdtConfig::default()
        };
        let model_a = gbdt_train(&x, &y, &config).unwrap();

        // Strictly monotone transform of feature 0 in train and test.
        let transform = |v: f64| (v / 2.0).tanh() * 3.0 + 1.0;
        let x_t: Vec<FeatureVector> =
            x.iter().map(|v| fv(&[transform(v.0[0]), v.0[1]])).collect();
        let model_b = gbdt_train(&x_t, &y, &config).unwrap();

        for (orig, trans) in x.iter().zip(&x_t) {
            let a = gbdt_predict(&model_a, orig).unwrap();
            let b = gbdt_predict(&model_b, trans).unwrap();
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn tree_depth_respects_config() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x: Vec<FeatureVector> = (0..80)
            .map(|_| fv(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]))
            .collect();
        let y: Vec<u8> = (0..80).map(|_| rng.gen_range(0..=1) as u8).collect();
        let config = GbdtConfig {
            num_trees: 4,
            max_depth: 2,
            min_samples_leaf: 3,
            ..GbdtConfig::default()
        };
        let model = gbdt_train(&x, &y, &config).unwrap();
        for tree in &model.trees {
            assert!(tree.depth() <= 2);
        }
    }

    #[test]
    fn sexpr_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x: Vec<FeatureVector> = (0..40)
            .map(|_| fv(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]))
            .collect();
        let y: Vec<u8> = x.iter().map(|v| u8::from(v.0[0] * v.0[1] > 0.0)).collect();
        let model = gbdt_train(&x, &y, &small_config()).unwrap();
        let mut bytes = Vec::new();
        model.write_to(&mut bytes).unwrap();
        let back = GbdtModel::read_from(std::io::Cursor::new(&bytes)).unwrap();
        assert_eq!(model, back);
        // Behavioral equality across the round trip.
        for xi in &x {
            assert_eq!(gbdt_predict(&model, xi).unwrap(), gbdt_predict(&back, xi).unwrap());
        }
    }
}
