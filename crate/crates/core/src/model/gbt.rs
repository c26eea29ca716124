use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{class_counts, FeatureMatrix};
use crate::seed;

use rand::Rng;

pub const MODEL_FORMAT: &str = "pddwi-gbt/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// Minimum summed hessian in each child of a split.
    pub min_child_weight: f64,
    /// Fraction of rows drawn (without replacement) for each round.
    pub subsample: f64,
    pub l2_lambda: f64,
    /// Positive-class instance weight; `None` uses negatives / positives.
    pub scale_pos_weight: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_rounds: 200,
            learning_rate: 0.1,
            max_depth: 3,
            min_child_weight: 1.0,
            subsample: 1.0,
            l2_lambda: 1.0,
            scale_pos_weight: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning_rate must be in (0, 1], got {}", self.learning_rate));
        }
        if self.max_depth < 1 {
            return bad("max_depth must be >= 1".into());
        }
        if !(self.min_child_weight >= 0.0) {
            return bad(format!("min_child_weight must be >= 0, got {}", self.min_child_weight));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad(format!("subsample must be in (0, 1], got {}", self.subsample));
        }
        if !(self.l2_lambda >= 0.0) {
            return bad(format!("l2_lambda must be >= 0, got {}", self.l2_lambda));
        }
        if let Some(w) = self.scale_pos_weight {
            if !(w > 0.0 && w.is_finite()) {
                return bad(format!("scale_pos_weight must be > 0, got {w}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { weight: f64 },
}

/// Flat tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { weight } => return weight,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtEnsemble {
    pub format: String,
    /// Column names, in the order tree feature indices refer to.
    pub features: Vec<String>,
    pub config: TrainConfig,
    pub scale_pos_weight: f64,
    pub base_score: f64,
    pub trees: Vec<Tree>,
}

impl GbtEnsemble {
    pub fn margin(&self, row: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    pub fn check(&self) -> Result<()> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Config(format!(
                "unsupported model format {:?}, expected {MODEL_FORMAT:?}",
                self.format
            )));
        }
        for (t, tree) in self.trees.iter().enumerate() {
            for node in &tree.nodes {
                match *node {
                    Node::Split { feature, left, right, threshold } => {
                        if feature >= self.features.len()
                            || left >= tree.nodes.len()
                            || right >= tree.nodes.len()
                            || threshold.is_nan()
                        {
                            return Err(Error::Config(format!("tree {t} has an invalid split")));
                        }
                    }
                    Node::Leaf { weight } if !weight.is_finite() => {
                        return Err(Error::Config(format!("tree {t} has a non-finite leaf")));
                    }
                    Node::Leaf { .. } => {}
                }
            }
        }
        Ok(())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Gradient and hessian of the weighted logistic loss with respect to the
/// margin.
pub fn logistic_grad_hess(margin: f64, label: bool, weight: f64) -> (f64, f64) {
    let p = sigmoid(margin);
    let y = label as u8 as f64;
    (weight * (p - y), weight * p * (1.0 - p))
}

/// `Σ w_i · logloss(y_i, sigmoid(margin_i))`, evaluated stably in the margin.
pub fn weighted_logloss(margins: &[f64], labels: &[bool], weights: &[f64]) -> f64 {
    margins
        .iter()
        .zip(labels)
        .zip(weights)
        .map(|((&m, &y), &w)| {
            // -log sigmoid(m) = softplus(-m), -log(1 - sigmoid(m)) = softplus(m)
            let z = if y { -m } else { m };
            w * (z.max(0.0) + (-z.abs()).exp().ln_1p())
        })
        .sum()
}

/// Negatives over positives.
pub fn compute_scale_pos_weight(labels: &[bool]) -> Result<f64> {
    let (neg, pos) = class_counts(labels);
    if neg == 0 || pos == 0 {
        return Err(Error::SingleClass {
            negatives: neg,
            positives: pos,
        });
    }
    Ok(neg as f64 / pos as f64)
}

struct Grower<'a> {
    columns: &'a [Vec<f64>],
    sorted: &'a [Vec<usize>],
    grad: &'a [f64],
    hess: &'a [f64],
    cfg: &'a TrainConfig,
    nodes: Vec<Node>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn split_threshold(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid > lo {
        mid
    } else {
        hi
    }
}

impl Grower<'_> {
    fn leaf_weight(&self, g: f64, h: f64) -> f64 {
        -self.cfg.learning_rate * g / (h + self.cfg.l2_lambda)
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        let d = h + self.cfg.l2_lambda;
        if d > 0.0 {
            g * g / d
        } else {
            0.0
        }
    }

    fn find_split(&self, member: &[bool], g_total: f64, h_total: f64) -> Option<BestSplit> {
        let parent = self.score(g_total, h_total);
        let mut best: Option<BestSplit> = None;
        for (f, order) in self.sorted.iter().enumerate() {
            let col = &self.columns[f];
            let (mut gl, mut hl) = (0.0, 0.0);
            let mut prev: Option<f64> = None;
            for &r in order.iter().filter(|&&r| member[r]) {
                let v = col[r];
                if let Some(pv) = prev {
                    if v > pv {
                        let (gr, hr) = (g_total - gl, h_total - hl);
                        if hl >= self.cfg.min_child_weight && hr >= self.cfg.min_child_weight {
                            let gain = 0.5 * (self.score(gl, hl) + self.score(gr, hr) - parent);
                            if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                                best = Some(BestSplit {
                                    gain,
                                    feature: f,
                                    threshold: split_threshold(pv, v),
                                });
                            }
                        }
                    }
                }
                gl += self.grad[r];
                hl += self.hess[r];
                prev = Some(v);
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, n: usize) -> usize {
        let g: f64 = rows.iter().map(|&r| self.grad[r]).sum();
        let h: f64 = rows.iter().map(|&r| self.hess[r]).sum();
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            weight: self.leaf_weight(g, h),
        });
        if depth >= self.cfg.max_depth || rows.len() < 2 {
            return id;
        }
        let mut member = vec![false; n];
        for &r in &rows {
            member[r] = true;
        }
        let Some(split) = self.find_split(&member, g, h) else {
            return id;
        };
        let col = &self.columns[split.feature];
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| col[r] < split.threshold);
        let left = self.grow(left_rows, depth + 1, n);
        let right = self.grow(right_rows, depth + 1, n);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

/// Canonical row order: lexicographic on feature values, then label. Makes
/// training independent of the order rows arrive in.
fn canonical_order(x: &FeatureMatrix, labels: &[bool]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.n_rows()).collect();
    order.sort_by(|&a, &b| {
        let ra = x.values.row(a);
        let rb = x.values.row(b);
        ra.iter()
            .zip(rb.iter())
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(labels[a].cmp(&labels[b]))
    });
    order
}

/// Fit a boosted ensemble on a labelled matrix.
pub fn train(x: &FeatureMatrix, cfg: &TrainConfig) -> Result<GbtEnsemble> {
    cfg.check()?;
    let raw_labels = x.labels()?;
    let (neg, pos) = class_counts(raw_labels);
    if neg == 0 || pos == 0 || x.n_rows() < 2 {
        return Err(Error::SingleClass {
            negatives: neg,
            positives: pos,
        });
    }
    if let Some(v) = x.values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite feature value {v}")));
    }

    let order = canonical_order(x, raw_labels);
    let n = order.len();
    let labels: Vec<bool> = order.iter().map(|&i| raw_labels[i]).collect();
    let columns: Vec<Vec<f64>> = (0..x.n_cols())
        .map(|c| order.iter().map(|&i| x.values[[i, c]]).collect())
        .collect();
    let sorted: Vec<Vec<usize>> = columns
        .iter()
        .map(|col| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let spw = match cfg.scale_pos_weight {
        Some(w) => w,
        None => compute_scale_pos_weight(&labels)?,
    };
    let weights: Vec<f64> = labels.iter().map(|&y| if y { spw } else { 1.0 }).collect();
    let prevalence = pos as f64 / n as f64;
    let base_score = (prevalence / (1.0 - prevalence)).ln();

    let mut margins = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut rng = seed::rng(cfg.seed);
    let sample_size = ((cfg.subsample * n as f64).round() as usize).clamp(1, n);
    let mut trees = Vec::with_capacity(cfg.n_rounds);

    for _ in 0..cfg.n_rounds {
        for i in 0..n {
            let (g, h) = logistic_grad_hess(margins[i], labels[i], weights[i]);
            grad[i] = g;
            hess[i] = h;
        }
        let rows: Vec<usize> = if sample_size == n {
            (0..n).collect()
        } else {
            let mut pool: Vec<usize> = (0..n).collect();
            for i in 0..sample_size {
                let j = rng.random_range(i..n);
                pool.swap(i, j);
            }
            pool.truncate(sample_size);
            pool.sort_unstable();
            pool
        };
        let mut grower = Grower {
            columns: &columns,
            sorted: &sorted,
            grad: &grad,
            hess: &hess,
            cfg,
            nodes: Vec::new(),
        };
        grower.grow(rows, 0, n);
        let tree = Tree {
            nodes: grower.nodes,
        };
        let mut row = vec![0.0; columns.len()];
        for (i, m) in margins.iter_mut().enumerate() {
            for (c, col) in columns.iter().enumerate() {
                row[c] = col[i];
            }
            *m += tree.predict(&row);
        }
        trees.push(tree);
    }

    Ok(GbtEnsemble {
        format: MODEL_FORMAT.to_string(),
        features: x.columns.clone(),
        config: cfg.clone(),
        scale_pos_weight: spw,
        base_score,
        trees,
    })
}

/// Probability of the positive class for every row. Columns are matched by
/// name, so `x` may carry extra columns.
pub fn predict_proba(model: &GbtEnsemble, x: &FeatureMatrix) -> Result<Vec<f64>> {
    let x = x.select_columns(&model.features)?;
    Ok(x.values
        .outer_iter()
        .map(|row| sigmoid(model.margin(row.as_slice().expect("row-major"))))
        .collect())
}

/// Weighted training loss after 0, 1, …, `trees.len()` rounds.
pub fn training_loss_curve(model: &GbtEnsemble, x: &FeatureMatrix) -> Result<Vec<f64>> {
    let labels = x.labels()?.to_vec();
    let x = x.select_columns(&model.features)?;
    let weights: Vec<f64> = labels
        .iter()
        .map(|&y| if y { model.scale_pos_weight } else { 1.0 })
        .collect();
    let mut margins = vec![model.base_score; x.n_rows()];
    let mut out = vec![weighted_logloss(&margins, &labels, &weights)];
    for tree in &model.trees {
        for (m, row) in margins.iter_mut().zip(x.values.outer_iter()) {
            *m += tree.predict(row.as_slice().expect("row-major"));
        }
        out.push(weighted_logloss(&margins, &labels, &weights));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn matrix(cols: usize, values: Vec<f64>, labels: Vec<bool>) -> FeatureMatrix {
        let n = labels.len();
        FeatureMatrix::new(
            (0..cols).map(|c| format!("f{c}")).collect(),
            (0..n).map(|i| format!("P{i}")).collect(),
            Array2::from_shape_vec((n, cols), values).unwrap(),
            Some(labels),
        )
        .unwrap()
    }

    #[test]
    fn scale_pos_weight_examples() {
        let mut l = vec![false; 70];
        l.extend(vec![true; 30]);
        assert_eq!(compute_scale_pos_weight(&l).unwrap(), 7.0 / 3.0);
        assert_eq!(compute_scale_pos_weight(&[true, false]).unwrap(), 1.0);
        assert_eq!(compute_scale_pos_weight(&[false, false, false, true]).unwrap(), 3.0);
        assert!(compute_scale_pos_weight(&[false, false]).is_err());
    }

    #[test]
    fn zero_rounds_predicts_prevalence_logit() {
        let x = matrix(1, vec![0.0, 1.0, 2.0, 3.0], vec![false, true, false, true]);
        let cfg = TrainConfig { n_rounds: 0, ..Default::default() };
        let m = train(&x, &cfg).unwrap();
        assert_eq!(m.base_score, 0.0);
        assert!(predict_proba(&m, &x).unwrap().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn huge_min_child_weight_forces_single_leaves() {
        let x = matrix(1, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0], vec![false, false, false, true, true, true]);
        let cfg = TrainConfig { n_rounds: 5, min_child_weight: 1e6, ..Default::default() };
        let m = train(&x, &cfg).unwrap();
        assert!(m.trees.iter().all(|t| t.nodes.len() == 1));
        let p = predict_proba(&m, &x).unwrap();
        assert!(p.iter().all(|&v| v == p[0]));
    }

    #[test]
    fn single_class_and_bad_config_rejected() {
        let x = matrix(1, vec![0.0, 1.0], vec![true, true]);
        assert!(matches!(train(&x, &TrainConfig::default()), Err(Error::SingleClass { .. })));
        let x = matrix(1, vec![0.0, 1.0], vec![false, true]);
        let cfg = TrainConfig { subsample: 0.0, ..Default::default() };
        assert!(matches!(train(&x, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn stump_probabilities_match_leaves() {
        let x = matrix(1, vec![-2.0, -1.0, 1.0, 2.0], vec![false, false, true, true]);
        let cfg = TrainConfig { n_rounds: 1, max_depth: 1, min_child_weight: 0.0, ..Default::default() };
        let m = train(&x, &cfg).unwrap();
        let tree = &m.trees[0];
        assert_eq!(tree.nodes.len(), 3);
        let Node::Split { threshold, left, right, .. } = tree.nodes[0] else { panic!() };
        assert_eq!(threshold, 0.0);
        let (Node::Leaf { weight: wl }, Node::Leaf { weight: wr }) = (&tree.nodes[left], &tree.nodes[right]) else {
            panic!()
        };
        // balanced labels: base 0, g = p - y = ±0.5, h = 0.25 per row
        assert!((wl - -0.1 * 1.0 / 1.5).abs() < 1e-15);
        assert!((wr - 0.1 * 1.0 / 1.5).abs() < 1e-15);
        let p = predict_proba(&m, &x).unwrap();
        assert_eq!(p[0], sigmoid(*wl));
        assert_eq!(p[3], sigmoid(*wr));
    }

    #[test]
    fn split_gain_matches_brute_force() {
        // 4-sample toy set; brute-force the best threshold with the closed-form gain.
        let xs = [0.3, 1.2, 2.5, 4.0];
        let ys = [false, true, false, true];
        let x = matrix(1, xs.to_vec(), ys.to_vec());
        let cfg = TrainConfig { n_rounds: 1, max_depth: 1, min_child_weight: 0.0, ..Default::default() };
        let m = train(&x, &cfg).unwrap();

        let lambda = 1.0;
        let gh: Vec<(f64, f64)> = ys.iter().map(|&y| logistic_grad_hess(0.0, y, 1.0)).collect();
        let (gt, ht) = gh.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        let mut best = (0.0, f64::NAN);
        for cut in 1..4 {
            let (gl, hl) = gh[..cut].iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
            let (gr, hr) = (gt - gl, ht - hl);
            let gain = 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - gt * gt / (ht + lambda));
            if gain > best.0 {
                best = (gain, (xs[cut - 1] + xs[cut]) / 2.0);
            }
        }
        // cuts after the 1st and 3rd sample tie at 0.5 * (0.25/1.25 + 0.25/1.75);
        // the lower threshold wins
        assert!((best.0 - 0.5 * (0.2 + 0.25 / 1.75)).abs() < 1e-12);
        assert_eq!(best.1, 0.75);
        let Node::Split { threshold, .. } = m.trees[0].nodes[0] else { panic!() };
        assert_eq!(threshold, best.1);
    }

    #[test]
    fn depth_is_bounded() {
        let n = 40;
        let values: Vec<f64> = (0..n * 2).map(|i| ((i * 37) % 11) as f64).collect();
        let labels: Vec<bool> = (0..n).map(|i| (i * 7) % 3 == 0).collect();
        let x = matrix(2, values, labels);
        let cfg = TrainConfig { n_rounds: 10, max_depth: 2, min_child_weight: 0.0, ..Default::default() };
        let m = train(&x, &cfg).unwrap();
        assert!(m.trees.iter().all(|t| t.depth() <= 2));
        m.check().unwrap();
    }

    #[test]
    fn schema_mismatch_names_columns() {
        let x = matrix(2, vec![0.0, 1.0, 1.0, 0.0, 2.0, 1.0], vec![false, true, false]);
        let m = train(&x, &TrainConfig { n_rounds: 2, ..Default::default() }).unwrap();
        let narrow = x.select_columns(&["f0".to_string()]).unwrap();
        match predict_proba(&m, &narrow) {
            Err(Error::SchemaMismatch { missing }) => assert_eq!(missing, vec!["f1"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn json_round_trip_is_bit_identical() {
        let values: Vec<f64> = (0..60).map(|i| ((i * 31) % 17) as f64 * 0.137).collect();
        let labels: Vec<bool> = (0..30).map(|i| (i * 5) % 4 == 0).collect();
        let x = matrix(2, values, labels);
        let cfg = TrainConfig { n_rounds: 20, subsample: 0.8, seed: 9, ..Default::default() };
        let m = train(&x, &cfg).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: GbtEnsemble = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        let a = predict_proba(&m, &x).unwrap();
        let b = predict_proba(&back, &x).unwrap();
        assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
    }
}
