//! Random forest of CART trees: Gini splits, bootstrap resampling, a
//! random feature subset per split, majority vote over trees.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::ClassifyError;
use crate::seeding::derive_seed;

/// Forest hyperparameters. Only the tree count is fixed by convention
/// (200); depth is unlimited and each split considers ceil(sqrt(d))
/// features unless overridden.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    /// Features considered per split; `None` means ceil(sqrt(d)).
    pub features_per_split: Option<usize>,
    pub seed: u64,
}

impl ForestParams {
    pub fn new(seed: u64) -> Self {
        ForestParams {
            n_trees: 200,
            max_depth: None,
            features_per_split: None,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        /// Class distribution of the training samples that reached here.
        probs: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
    root: usize,
}

impl Tree {
    fn leaf_probs(&self, x: &[f64]) -> &[f64] {
        let mut i = self.root;
        loop {
            match &self.nodes[i] {
                Node::Leaf { probs } => return probs,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

/// A trained forest. Prediction is a majority vote over the trees; class
/// probabilities are vote shares. Vote ties are broken by a class order
/// shuffled once from the training seed, so the tie rule is deterministic
/// but not biased toward low class indices.
#[derive(Debug, Clone)]
pub struct Forest {
    trees: Vec<Tree>,
    pub n_classes: usize,
    tie_order: Vec<usize>,
}

impl Forest {
    /// Vote shares per class; sums to 1.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut votes = vec![0.0; self.n_classes];
        for tree in &self.trees {
            votes[self.argmax(tree.leaf_probs(x))] += 1.0;
        }
        for v in &mut votes {
            *v /= self.trees.len() as f64;
        }
        votes
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        self.argmax(&self.predict_proba(x))
    }

    fn argmax(&self, scores: &[f64]) -> usize {
        let mut best = self.tie_order[0];
        for &c in &self.tie_order {
            if scores[c] > scores[best] {
                best = c;
            }
        }
        best
    }
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    mtry: usize,
    max_depth: Option<usize>,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn class_counts(&self, idx: &[usize]) -> Vec<f64> {
        let mut counts = vec![0.0; self.n_classes];
        for &i in idx {
            counts[self.y[i]] += 1.0;
        }
        counts
    }

    fn leaf(&mut self, counts: Vec<f64>, n: f64) -> usize {
        let probs = counts.iter().map(|c| c / n).collect();
        self.nodes.push(Node::Leaf { probs });
        self.nodes.len() - 1
    }

    fn grow(&mut self, mut idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let counts = self.class_counts(&idx);
        let n = idx.len() as f64;
        let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
        let at_depth = self.max_depth.is_some_and(|d| depth >= d);
        if pure || at_depth || idx.len() < 2 {
            return self.leaf(counts, n);
        }

        let d = self.x[0].len();
        let features = rand::seq::index::sample(rng, d, self.mtry);
        let parent_gini = gini(&counts, n);
        let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
        for f in features {
            idx.sort_by(|&a, &b| {
                self.x[a][f]
                    .partial_cmp(&self.x[b][f])
                    .expect("finite features")
                    .then(a.cmp(&b))
            });
            let mut left = vec![0.0; self.n_classes];
            let mut right = counts.clone();
            for w in 0..idx.len() - 1 {
                let i = idx[w];
                left[self.y[i]] += 1.0;
                right[self.y[i]] -= 1.0;
                let (lo, hi) = (self.x[i][f], self.x[idx[w + 1]][f]);
                if lo == hi {
                    continue;
                }
                let n_l = (w + 1) as f64;
                let n_r = n - n_l;
                let children = (n_l * gini(&left, n_l) + n_r * gini(&right, n_r)) / n;
                let gain = parent_gini - children;
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, lo + (hi - lo) / 2.0));
                }
            }
        }

        match best {
            Some((gain, feature, threshold)) if gain > 1e-12 => {
                let (l_idx, r_idx): (Vec<usize>, Vec<usize>) = idx
                    .iter()
                    .partition(|&&i| self.x[i][feature] <= threshold);
                let left = self.grow(l_idx, depth + 1, rng);
                let right = self.grow(r_idx, depth + 1, rng);
                self.nodes.push(Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                });
                self.nodes.len() - 1
            }
            _ => self.leaf(counts, n),
        }
    }
}

fn gini(counts: &[f64], n: f64) -> f64 {
    1.0 - counts.iter().map(|c| (c / n) * (c / n)).sum::<f64>()
}

/// Train a forest on a feature matrix and class indices in `0..n_classes`.
///
/// Classes should hold at least 2 samples each for meaningful estimates;
/// this is not enforced so cross-validation folds with singleton classes
/// still train. At least two distinct classes must be present.
pub fn train_forest(
    x: &[Vec<f64>],
    y: &[usize],
    params: &ForestParams,
) -> Result<Forest, ClassifyError> {
    if x.is_empty() {
        return Err(ClassifyError::EmptyTraining);
    }
    if x.len() != y.len() {
        return Err(ClassifyError::ShapeMismatch {
            rows: x.len(),
            labels: y.len(),
        });
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|row| row.len() != d) {
        return Err(ClassifyError::RaggedMatrix);
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ClassifyError::NonFiniteFeature);
    }
    if params.n_trees == 0 {
        return Err(ClassifyError::BadParams("n_trees must be >= 1".into()));
    }
    let n_classes = y.iter().max().unwrap() + 1;
    let distinct = {
        let mut seen = vec![false; n_classes];
        for &c in y {
            seen[c] = true;
        }
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(ClassifyError::SingleClass);
    }

    let mtry = params
        .features_per_split
        .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
        .clamp(1, d);

    let mut trees = Vec::with_capacity(params.n_trees);
    for t in 0..params.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, t as u64));
        let n = x.len();
        let bootstrap: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let mut builder = TreeBuilder {
            x,
            y,
            n_classes,
            mtry,
            max_depth: params.max_depth,
            nodes: Vec::new(),
        };
        let root = builder.grow(bootstrap, 0, &mut rng);
        trees.push(Tree {
            nodes: builder.nodes,
            root,
        });
    }

    let mut tie_order: Vec<usize> = (0..n_classes).collect();
    let mut tie_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(params.seed, 0x7EB8_EA4C_11D3_0F55));
    tie_order.shuffle(&mut tie_rng);

    Ok(Forest {
        trees,
        n_classes,
        tie_order,
    })
}
