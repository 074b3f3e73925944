//! Binary random forest (CART trees, Gini impurity, bootstrap + feature
//! bagging), shared by the action-score calibrators and the raw-pixel
//! target detectors.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Random access to a training matrix without materializing it.
pub trait Dataset: Sync {
    fn n_samples(&self) -> usize;
    fn n_features(&self) -> usize;
    fn value(&self, sample: usize, feature: usize) -> f32;
}

/// Row-major dense matrix.
pub struct DenseDataset<'a> {
    pub rows: &'a [Vec<f32>],
}

impl Dataset for DenseDataset<'_> {
    fn n_samples(&self) -> usize {
        self.rows.len()
    }

    fn n_features(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    fn value(&self, sample: usize, feature: usize) -> f32 {
        self.rows[sample][feature]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Candidate features per split; `None` means ⌈√d⌉.
    pub max_features: Option<usize>,
    /// Draw bootstrap samples half from each class.
    pub balanced: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 8,
            min_samples_split: 2,
            max_features: None,
            balanced: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Node {
    Split { f: u32, th: f32, l: u32, r: u32 },
    Leaf { p: f32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, value: impl Fn(usize) -> f32) -> f32 {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Leaf { p } => return *p,
                Node::Split { f, th, l, r } => {
                    i = if value(*f as usize) <= *th { *l as usize } else { *r as usize };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { l, r, .. } => 1 + go(nodes, *l as usize).max(go(nodes, *r as usize)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

impl RandomForest {
    /// Fits a forest predicting P(label = true).
    pub fn fit(data: &dyn Dataset, labels: &[bool], config: &ForestConfig) -> Self {
        assert_eq!(data.n_samples(), labels.len(), "one label per sample");
        let d = data.n_features();
        let mtry = config
            .max_features
            .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
            .clamp(1, d.max(1));
        let trees = (0..config.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let sample = bootstrap(labels, config.balanced, &mut rng);
                let mut builder = TreeBuilder {
                    data,
                    labels,
                    mtry,
                    max_depth: config.max_depth,
                    min_split: config.min_samples_split.max(2),
                    nodes: Vec::new(),
                };
                builder.grow(sample, 0, &mut rng);
                Tree { nodes: builder.nodes }
            })
            .collect();
        Self { n_features: d, trees }
    }

    /// Mean leaf probability over trees.
    pub fn predict(&self, value: impl Fn(usize) -> f32 + Copy) -> f32 {
        if self.trees.is_empty() {
            return 0.0;
        }
        self.trees.iter().map(|t| t.predict(value)).sum::<f32>() / self.trees.len() as f32
    }

    pub fn predict_row(&self, row: &[f32]) -> f32 {
        self.predict(|f| row[f])
    }
}

fn bootstrap(labels: &[bool], balanced: bool, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = labels.len();
    if n == 0 {
        return Vec::new();
    }
    let pos: Vec<usize> = (0..n).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..n).filter(|&i| !labels[i]).collect();
    if !balanced || pos.is_empty() || neg.is_empty() {
        return (0..n).map(|_| rng.random_range(0..n)).collect();
    }
    let half = n.max(2) / 2;
    let mut out: Vec<usize> = (0..half).map(|_| pos[rng.random_range(0..pos.len())]).collect();
    out.extend((0..n.max(2) - half).map(|_| neg[rng.random_range(0..neg.len())]));
    out
}

struct TreeBuilder<'a> {
    data: &'a dyn Dataset,
    labels: &'a [bool],
    mtry: usize,
    max_depth: usize,
    min_split: usize,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn grow(&mut self, samples: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> u32 {
        let id = self.nodes.len() as u32;
        let n = samples.len();
        let n_pos = samples.iter().filter(|&&i| self.labels[i]).count();
        let p = if n == 0 { 0.0 } else { n_pos as f32 / n as f32 };
        self.nodes.push(Node::Leaf { p });
        if depth >= self.max_depth || n < self.min_split || n_pos == 0 || n_pos == n {
            return id;
        }
        let Some((f, th)) = self.best_split(&samples, n_pos, rng) else {
            return id;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = samples.into_iter().partition(|&i| self.data.value(i, f) <= th);
        let l = self.grow(left, depth + 1, rng);
        let r = self.grow(right, depth + 1, rng);
        self.nodes[id as usize] = Node::Split { f: f as u32, th, l, r };
        id
    }

    fn best_split(&self, samples: &[usize], n_pos: usize, rng: &mut ChaCha8Rng) -> Option<(usize, f32)> {
        let d = self.data.n_features();
        let n = samples.len() as f64;
        let gini = |pos: f64, tot: f64| {
            if tot == 0.0 {
                0.0
            } else {
                let q = pos / tot;
                2.0 * q * (1.0 - q) * tot
            }
        };
        let parent = gini(n_pos as f64, n);
        let mut best: Option<(f64, usize, f32)> = None;
        let mut pairs: Vec<(f32, bool)> = Vec::with_capacity(samples.len());
        for f in sample_indices(rng, d, self.mtry).into_iter() {
            pairs.clear();
            pairs.extend(samples.iter().map(|&i| (self.data.value(i, f), self.labels[i])));
            pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if pairs[0].0 == pairs[pairs.len() - 1].0 {
                continue;
            }
            let mut left_pos = 0usize;
            for k in 0..pairs.len() - 1 {
                if pairs[k].1 {
                    left_pos += 1;
                }
                if pairs[k].0 == pairs[k + 1].0 {
                    continue;
                }
                let nl = (k + 1) as f64;
                let impurity = gini(left_pos as f64, nl) + gini((n_pos - left_pos) as f64, n - nl);
                let gain = parent - impurity;
                if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                    let th = pairs[k].0 + (pairs[k + 1].0 - pairs[k].0) / 2.0;
                    best = Some((gain, f, th));
                }
            }
        }
        best.map(|(_, f, th)| (f, th))
    }
}
