//! CART trees and the two ensembles built from them.
//!
//! One variance-reduction builder serves every use: for binary 0/1 targets
//! the within-node sum of squares is n * p * (1 - p), exactly the Gini
//! impurity, so classification trees and regression trees on boosting
//! residuals share the split search. Splits maximize s_L^2/n_L + s_R^2/n_R
//! over midpoints of consecutive distinct feature values; ties go to the
//! first candidate in feature order, which keeps construction fully
//! deterministic.

use crate::numerics::net::stable_sigmoid;
use crate::numerics::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feat: u32,
        thresh: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub(crate) nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feat,
                    thresh,
                    left,
                    right,
                } => {
                    at = if x[*feat as usize] <= *thresh {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    #[cfg(test)]
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

struct BuildCtx<'a> {
    xs: &'a [Vec<f64>],
    targets: &'a [f64],
    max_depth: Option<usize>,
    max_features: Option<usize>,
    leaf_value: &'a dyn Fn(&[usize]) -> f64,
}

/// Grow a tree on the given row indices. `max_features` samples a feature
/// subset per split from `rng` (forest behavior); `None` searches all.
fn build_tree(
    ctx: &BuildCtx,
    idx: &mut Vec<usize>,
    rng: &mut Option<&mut RngStream>,
) -> Tree {
    let mut nodes = Vec::new();
    grow(ctx, idx, 0, &mut nodes, rng);
    Tree { nodes }
}

fn grow(
    ctx: &BuildCtx,
    idx: &mut [usize],
    depth: usize,
    nodes: &mut Vec<Node>,
    rng: &mut Option<&mut RngStream>,
) -> u32 {
    let id = nodes.len() as u32;
    nodes.push(Node::Leaf { value: 0.0 });

    let n = idx.len();
    let halt = n < 2
        || ctx.max_depth.is_some_and(|d| depth >= d)
        || targets_constant(ctx.targets, idx);
    let split = if halt { None } else { find_split(ctx, idx, rng) };

    match split {
        None => {
            nodes[id as usize] = Node::Leaf {
                value: (ctx.leaf_value)(idx),
            };
        }
        Some((feat, thresh)) => {
            let mid = partition(ctx.xs, idx, feat, thresh);
            // A valid split never produces an empty side, but guard anyway.
            if mid == 0 || mid == n {
                nodes[id as usize] = Node::Leaf {
                    value: (ctx.leaf_value)(idx),
                };
                return id;
            }
            let (l_idx, r_idx) = idx.split_at_mut(mid);
            let left = grow(ctx, l_idx, depth + 1, nodes, rng);
            let right = grow(ctx, r_idx, depth + 1, nodes, rng);
            nodes[id as usize] = Node::Split {
                feat: feat as u32,
                thresh,
                left,
                right,
            };
        }
    }
    id
}

fn targets_constant(targets: &[f64], idx: &[usize]) -> bool {
    let first = targets[idx[0]];
    idx.iter().all(|&i| targets[i] == first)
}

fn find_split(
    ctx: &BuildCtx,
    idx: &[usize],
    rng: &mut Option<&mut RngStream>,
) -> Option<(usize, f64)> {
    let k = ctx.xs[0].len();
    let feats: Vec<usize> = match (ctx.max_features, rng.as_deref_mut()) {
        (Some(m), Some(rng)) if m < k => sample_features(k, m, rng),
        _ => (0..k).collect(),
    };

    let n = idx.len() as f64;
    let total: f64 = idx.iter().map(|&i| ctx.targets[i]).sum();
    let base = total * total / n;
    let mut best: Option<(f64, usize, f64)> = None;
    let mut order: Vec<usize> = idx.to_vec();
    for &feat in &feats {
        order.copy_from_slice(idx);
        order.sort_unstable_by(|&a, &b| {
            ctx.xs[a][feat]
                .partial_cmp(&ctx.xs[b][feat])
                .expect("finite features")
                .then(a.cmp(&b))
        });
        let mut s_l = 0.0;
        for (pos, &i) in order.iter().enumerate().take(order.len() - 1) {
            s_l += ctx.targets[i];
            let here = ctx.xs[i][feat];
            let next = ctx.xs[order[pos + 1]][feat];
            if here == next {
                continue;
            }
            let n_l = (pos + 1) as f64;
            let n_r = n - n_l;
            let s_r = total - s_l;
            let gain = s_l * s_l / n_l + s_r * s_r / n_r - base;
            if gain > 1e-12 && best.map_or(true, |(g, _, _)| gain > g) {
                best = Some((gain, feat, 0.5 * (here + next)));
            }
        }
    }
    best.map(|(_, feat, thresh)| (feat, thresh))
}

/// Partition indices in place by `x[feat] <= thresh` preserving relative
/// order; returns the boundary.
fn partition(xs: &[Vec<f64>], idx: &mut [usize], feat: usize, thresh: f64) -> usize {
    let mut buf: Vec<usize> = Vec::with_capacity(idx.len());
    let mut mid = 0;
    for &i in idx.iter() {
        if xs[i][feat] <= thresh {
            mid += 1;
        }
    }
    buf.extend(idx.iter().copied().filter(|&i| xs[i][feat] <= thresh));
    buf.extend(idx.iter().copied().filter(|&i| xs[i][feat] > thresh));
    idx.copy_from_slice(&buf);
    mid
}

fn sample_features(k: usize, m: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..k).collect();
    for i in 0..m {
        let j = i + rng.below(k - i);
        pool.swap(i, j);
    }
    pool.truncate(m);
    pool.sort_unstable();
    pool
}

pub fn train_classification_tree(
    xs: &[Vec<f64>],
    ys: &[u8],
    max_depth: Option<usize>,
) -> Tree {
    let targets: Vec<f64> = ys.iter().map(|&y| y as f64).collect();
    let leaf = |idx: &[usize]| {
        let s: f64 = idx.iter().map(|&i| targets[i]).sum();
        s / idx.len() as f64
    };
    let ctx = BuildCtx {
        xs,
        targets: &targets,
        max_depth,
        max_features: None,
        leaf_value: &leaf,
    };
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    build_tree(&ctx, &mut idx, &mut None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub(crate) trees: Vec<Tree>,
}

impl Forest {
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let s: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        s / self.trees.len() as f64
    }
}

/// Bootstrap forest: each tree sees a resample of rows and sqrt(k) feature
/// candidates per split; probabilities average across trees.
pub fn train_forest(xs: &[Vec<f64>], ys: &[u8], n_trees: usize, rng: &mut RngStream) -> Forest {
    let n = xs.len();
    let k = xs[0].len();
    let max_features = ((k as f64).sqrt().floor() as usize).max(1);
    let targets: Vec<f64> = ys.iter().map(|&y| y as f64).collect();
    let leaf = |idx: &[usize]| {
        let s: f64 = idx.iter().map(|&i| targets[i]).sum();
        s / idx.len() as f64
    };
    let mut trees = Vec::with_capacity(n_trees);
    for t in 0..n_trees {
        let mut tree_rng = rng.fork(&format!("tree/{t}"));
        let mut idx: Vec<usize> = (0..n).map(|_| tree_rng.below(n)).collect();
        let ctx = BuildCtx {
            xs,
            targets: &targets,
            max_depth: None,
            max_features: Some(max_features),
            leaf_value: &leaf,
        };
        let mut opt = Some(&mut tree_rng);
        trees.push(build_tree(&ctx, &mut idx, &mut opt));
    }
    Forest { trees }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gboost {
    pub(crate) init: f64,
    pub(crate) learning_rate: f64,
    pub(crate) trees: Vec<Tree>,
}

impl Gboost {
    pub fn logit(&self, x: &[f64]) -> f64 {
        let mut f = self.init;
        for t in &self.trees {
            f += self.learning_rate * t.predict(x);
        }
        f
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        stable_sigmoid(self.logit(x))
    }
}

/// Gradient boosting on the logistic loss: trees fit pseudo-residuals
/// y - p, leaves take one Newton step sum(r) / sum(p (1 - p)). Leaf values
/// are clamped to +-15 so separable leaves cannot push logits to infinity.
pub fn train_gboost(
    xs: &[Vec<f64>],
    ys: &[u8],
    rounds: usize,
    learning_rate: f64,
    depth: usize,
) -> Gboost {
    let n = xs.len();
    let pos: f64 = ys.iter().map(|&y| y as f64).sum();
    let p0 = pos / n as f64;
    let init = (p0 / (1.0 - p0)).ln();
    let mut logits = vec![init; n];
    let mut trees = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let probs: Vec<f64> = logits.iter().map(|&f| stable_sigmoid(f)).collect();
        let resid: Vec<f64> = ys
            .iter()
            .zip(&probs)
            .map(|(&y, &p)| y as f64 - p)
            .collect();
        let leaf = |idx: &[usize]| {
            let num: f64 = idx.iter().map(|&i| resid[i]).sum();
            let den: f64 = idx.iter().map(|&i| probs[i] * (1.0 - probs[i])).sum();
            (num / den.max(1e-12)).clamp(-15.0, 15.0)
        };
        let ctx = BuildCtx {
            xs,
            targets: &resid,
            max_depth: Some(depth),
            max_features: None,
            leaf_value: &leaf,
        };
        let mut idx: Vec<usize> = (0..n).collect();
        let tree = build_tree(&ctx, &mut idx, &mut None);
        for (i, x) in xs.iter().enumerate() {
            logits[i] += learning_rate * tree.predict(x);
        }
        trees.push(tree);
    }
    Gboost {
        init,
        learning_rate,
        trees,
    }
}
