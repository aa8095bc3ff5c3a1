//! Regression trees grown leaf-wise on binned data.

use rayon::prelude::*;

use super::binning::BinnedDataset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Split {
        feature: u32,
        /// Rows with `bin ≤ bin` (value bins) go left.
        bin: u8,
        /// Raw-value equivalent: `v ≤ threshold` goes left.
        threshold: f64,
        /// Direction of missing values.
        default_left: bool,
        left: u32,
        right: u32,
    },
    Leaf {
        value: f64,
    },
}

/// A single tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn constant(value: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    /// Output for a raw feature row.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                    ..
                } => {
                    let v = row[feature as usize];
                    let go_left = if v.is_nan() { default_left } else { v <= threshold };
                    i = if go_left { left } else { right } as usize;
                }
            }
        }
    }

    /// Output for row `r` of a binned dataset.
    pub fn predict_binned(&self, data: &BinnedDataset, r: usize) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    bin,
                    default_left,
                    left,
                    right,
                    ..
                } => {
                    let b = data.bins[feature as usize][r];
                    let go_left = if b == 0 { default_left } else { b <= bin };
                    i = if go_left { left } else { right } as usize;
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

/// Growth controls for one tree.
#[derive(Debug, Clone)]
pub struct TreeConfig {
    pub num_leaves: usize,
    pub min_data_in_leaf: usize,
    pub min_sum_hessian: f64,
    pub lambda: f64,
    pub max_depth: Option<usize>,
    /// Multiplier applied to leaf values.
    pub shrinkage: f64,
}

#[derive(Clone, Copy, Default)]
struct Bin {
    g: f64,
    h: f64,
    n: usize,
}

type Histogram = Vec<Vec<Bin>>;

#[derive(Debug, Clone, Copy)]
struct SplitCandidate {
    gain: f64,
    feature: usize,
    bin: u8,
    default_left: bool,
}

struct LeafState {
    node: usize,
    rows: Vec<u32>,
    depth: usize,
    g: f64,
    h: f64,
    hist: Histogram,
    best: Option<SplitCandidate>,
}

fn leaf_gain(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

fn build_hist(data: &BinnedDataset, features: &[usize], rows: &[u32], grad: &[f64], hess: &[f64]) -> Histogram {
    let mut out: Histogram = vec![Vec::new(); data.bins.len()];
    let built: Vec<(usize, Vec<Bin>)> = features
        .par_iter()
        .map(|&f| {
            let n_bins = data.mappers[f].n_value_bins() + 1;
            let mut h = vec![Bin::default(); n_bins];
            let col = &data.bins[f];
            for &r in rows {
                let b = &mut h[col[r as usize] as usize];
                b.g += grad[r as usize];
                b.h += hess[r as usize];
                b.n += 1;
            }
            (f, h)
        })
        .collect();
    for (f, h) in built {
        out[f] = h;
    }
    out
}

fn subtract(parent: &Histogram, child: &Histogram, features: &[usize]) -> Histogram {
    let mut out: Histogram = vec![Vec::new(); parent.len()];
    for &f in features {
        out[f] = parent[f]
            .iter()
            .zip(&child[f])
            .map(|(p, c)| Bin {
                g: p.g - c.g,
                h: p.h - c.h,
                n: p.n - c.n,
            })
            .collect();
    }
    out
}

/// Best split of one feature's histogram. Scans bins in ascending order,
/// missing-right before missing-left; only strictly better gains replace.
fn best_for_feature(hist: &[Bin], f: usize, g: f64, h: f64, n: usize, cfg: &TreeConfig) -> Option<SplitCandidate> {
    let parent = leaf_gain(g, h, cfg.lambda);
    let miss = hist[0];
    let mut best: Option<SplitCandidate> = None;
    let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0usize);
    for b in 1..hist.len().saturating_sub(1) {
        gl += hist[b].g;
        hl += hist[b].h;
        nl += hist[b].n;
        for default_left in [false, true] {
            let (lg, lh, ln) = if default_left {
                (gl + miss.g, hl + miss.h, nl + miss.n)
            } else {
                (gl, hl, nl)
            };
            let (rg, rh, rn) = (g - lg, h - lh, n - ln);
            if ln < cfg.min_data_in_leaf || rn < cfg.min_data_in_leaf {
                continue;
            }
            if lh < cfg.min_sum_hessian || rh < cfg.min_sum_hessian {
                continue;
            }
            let gain = leaf_gain(lg, lh, cfg.lambda) + leaf_gain(rg, rh, cfg.lambda) - parent;
            if gain > 0.0 && best.is_none_or(|c| gain > c.gain) {
                best = Some(SplitCandidate {
                    gain,
                    feature: f,
                    bin: b as u8,
                    default_left,
                });
            }
            if miss.n == 0 {
                break;
            }
        }
    }
    best
}

fn find_best(leaf: &LeafState, features: &[usize], cfg: &TreeConfig) -> Option<SplitCandidate> {
    if cfg.max_depth.is_some_and(|d| leaf.depth >= d) || leaf.rows.len() < 2 * cfg.min_data_in_leaf {
        return None;
    }
    let n = leaf.rows.len();
    let per_feature: Vec<Option<SplitCandidate>> = features
        .par_iter()
        .map(|&f| best_for_feature(&leaf.hist[f], f, leaf.g, leaf.h, n, cfg))
        .collect();
    // Features are in ascending order; keep the first maximum.
    per_feature
        .into_iter()
        .flatten()
        .fold(None, |acc: Option<SplitCandidate>, c| match acc {
            Some(a) if a.gain >= c.gain => Some(a),
            _ => Some(c),
        })
}

/// Grow one tree on the rows in `rows` using the features in `features`
/// (ascending). Leaf values are `−shrinkage · G / (H + λ)`.
pub fn grow_tree(
    data: &BinnedDataset,
    rows: Vec<u32>,
    features: &[usize],
    grad: &[f64],
    hess: &[f64],
    cfg: &TreeConfig,
) -> Tree {
    let (g, h) = rows
        .iter()
        .fold((0.0, 0.0), |(g, h), &r| (g + grad[r as usize], h + hess[r as usize]));
    let hist = build_hist(data, features, &rows, grad, hess);
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut root = LeafState {
        node: 0,
        rows,
        depth: 0,
        g,
        h,
        hist,
        best: None,
    };
    root.best = find_best(&root, features, cfg);
    let mut leaves = vec![root];

    while leaves.len() < cfg.num_leaves {
        // Leaf with the largest gain; ties go to the earliest leaf.
        let pick = leaves
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.best.map(|b| (i, b.gain)))
            .fold(None, |acc: Option<(usize, f64)>, (i, gain)| match acc {
                Some((_, g)) if g >= gain => acc,
                _ => Some((i, gain)),
            });
        let Some((li, _)) = pick else { break };
        let leaf = leaves.swap_remove(li);
        let split = leaf.best.expect("picked leaf has a split");
        let col = &data.bins[split.feature];
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = leaf.rows.iter().partition(|&&r| {
            let b = col[r as usize];
            if b == 0 {
                split.default_left
            } else {
                b <= split.bin
            }
        });
        let sum = |rs: &[u32]| {
            rs.iter()
                .fold((0.0, 0.0), |(g, h), &r| (g + grad[r as usize], h + hess[r as usize]))
        };
        let (lg, lh) = sum(&left_rows);
        let (rg, rh) = (leaf.g - lg, leaf.h - lh);
        let (small_hist, large_hist, left_small) = if left_rows.len() <= right_rows.len() {
            let s = build_hist(data, features, &left_rows, grad, hess);
            let l = subtract(&leaf.hist, &s, features);
            (s, l, true)
        } else {
            let s = build_hist(data, features, &right_rows, grad, hess);
            let l = subtract(&leaf.hist, &s, features);
            (s, l, false)
        };
        let (left_hist, right_hist) = if left_small {
            (small_hist, large_hist)
        } else {
            (large_hist, small_hist)
        };

        let left_node = nodes.len();
        nodes.push(Node::Leaf { value: 0.0 });
        let right_node = nodes.len();
        nodes.push(Node::Leaf { value: 0.0 });
        nodes[leaf.node] = Node::Split {
            feature: split.feature as u32,
            bin: split.bin,
            threshold: data.mappers[split.feature].threshold(split.bin),
            default_left: split.default_left,
            left: left_node as u32,
            right: right_node as u32,
        };
        let mut l = LeafState {
            node: left_node,
            rows: left_rows,
            depth: leaf.depth + 1,
            g: lg,
            h: lh,
            hist: left_hist,
            best: None,
        };
        let mut r = LeafState {
            node: right_node,
            rows: right_rows,
            depth: leaf.depth + 1,
            g: rg,
            h: rh,
            hist: right_hist,
            best: None,
        };
        l.best = find_best(&l, features, cfg);
        r.best = find_best(&r, features, cfg);
        // Keep leaves ordered by node id so tie-breaking is stable.
        leaves.push(l);
        leaves.push(r);
        leaves.sort_by_key(|x| x.node);
    }

    for leaf in &leaves {
        nodes[leaf.node] = Node::Leaf {
            value: -cfg.shrinkage * leaf.g / (leaf.h + cfg.lambda),
        };
    }
    Tree { nodes }
}
