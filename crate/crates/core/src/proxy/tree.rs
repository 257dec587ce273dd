//! Regression trees for the forest and boosting proxies.

use serde::{Deserialize, Serialize};

use crate::rng::RngStream;

const LEAF: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Node {
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    pub value: f64,
}

/// Binary regression tree stored as a flat node array; node 0 is the root.
#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    pub(crate) nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut k = 0usize;
        loop {
            let n = &self.nodes[k];
            if n.feature == LEAF {
                return n.value;
            }
            k = if x[n.feature as usize] <= n.threshold {
                n.left as usize
            } else {
                n.right as usize
            };
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, k: usize) -> usize {
            let n = &t.nodes[k];
            if n.feature == LEAF {
                0
            } else {
                1 + walk(t, n.left as usize).max(walk(t, n.right as usize))
            }
        }
        walk(self, 0)
    }

    pub(crate) fn leaf(value: f64) -> Node {
        Node {
            feature: LEAF,
            threshold: 0.0,
            left: 0,
            right: 0,
            value,
        }
    }

    pub(crate) fn is_leaf(n: &Node) -> bool {
        n.feature == LEAF
    }
}

/// Training rows stored feature-major for fast column scans.
pub(crate) struct Columns {
    pub n_rows: usize,
    pub cols: Vec<Vec<f64>>,
}

impl Columns {
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let p = rows.first().map_or(0, |r| r.len());
        let cols = (0..p)
            .map(|f| rows.iter().map(|r| r[f]).collect())
            .collect();
        Self {
            n_rows: rows.len(),
            cols,
        }
    }

    pub fn n_features(&self) -> usize {
        self.cols.len()
    }

    /// Row indices sorted by each feature's value.
    pub fn sorted_orders(&self) -> Vec<Vec<u32>> {
        self.cols
            .iter()
            .map(|c| {
                let mut idx: Vec<u32> = (0..self.n_rows as u32).collect();
                idx.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]));
                idx
            })
            .collect()
    }
}

/// Split statistics: weight `w` and weighted target sum `s`.
#[derive(Clone, Copy, Default)]
struct Stats {
    w: f64,
    s: f64,
}

impl Stats {
    fn score(&self, lambda: f64) -> f64 {
        if self.w + lambda > 0.0 {
            self.s * self.s / (self.w + lambda)
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy)]
struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Scans rows in ascending feature order and returns the best threshold.
/// Gain is `S_L²/(W_L+λ) + S_R²/(W_R+λ) - S²/(W+λ)`; with λ = 0 it is the
/// reduction in squared error.
fn scan<I: Iterator<Item = (f64, f64, f64)>>(
    sorted: I,
    total: Stats,
    lambda: f64,
    min_leaf: f64,
) -> Option<(f64, f64)> {
    let parent = total.score(lambda);
    let mut left = Stats::default();
    let mut best: Option<(f64, f64)> = None;
    let mut prev: Option<f64> = None;
    for (x, w, y) in sorted {
        if let Some(px) = prev {
            if x > px && left.w >= min_leaf && total.w - left.w >= min_leaf {
                let right = Stats {
                    w: total.w - left.w,
                    s: total.s - left.s,
                };
                let gain = left.score(lambda) + right.score(lambda) - parent;
                if gain > best.map_or(0.0, |b| b.1) {
                    best = Some((0.5 * (px + x), gain));
                }
            }
        }
        left.w += w;
        left.s += w * y;
        prev = Some(x);
    }
    best.filter(|b| b.1 > 1e-12 * parent.abs().max(1e-300))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features tried per split; `None` uses `floor(sqrt(p))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_leaf: 2,
            max_features: None,
            bootstrap: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoostParams {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    pub min_child_weight: f64,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            n_rounds: 100,
            max_depth: 6,
            learning_rate: 0.3,
            lambda: 1.0,
            min_child_weight: 1.0,
        }
    }
}

/// Grows one forest tree on a (possibly bootstrapped) row multiset.
pub(crate) fn grow_forest_tree(
    data: &Columns,
    y: &[f64],
    weights: &[f64],
    params: &ForestParams,
    rng: &mut RngStream,
) -> Tree {
    let p = data.n_features();
    let mtry = params
        .max_features
        .unwrap_or_else(|| (p as f64).sqrt().floor() as usize)
        .clamp(1, p.max(1));
    let rows: Vec<u32> = (0..data.n_rows as u32)
        .filter(|&r| weights[r as usize] > 0.0)
        .collect();
    let mut nodes = Vec::new();
    let mut features: Vec<usize> = (0..p).collect();
    let mut buf: Vec<(f64, f64, f64)> = Vec::with_capacity(rows.len());
    forest_node(
        data,
        y,
        weights,
        params,
        mtry,
        rows,
        0,
        &mut nodes,
        &mut features,
        &mut buf,
        rng,
    );
    Tree { nodes }
}

#[allow(clippy::too_many_arguments)]
fn forest_node(
    data: &Columns,
    y: &[f64],
    weights: &[f64],
    params: &ForestParams,
    mtry: usize,
    rows: Vec<u32>,
    depth: usize,
    nodes: &mut Vec<Node>,
    features: &mut [usize],
    buf: &mut Vec<(f64, f64, f64)>,
    rng: &mut RngStream,
) -> u32 {
    let mut total = Stats::default();
    for &r in &rows {
        total.w += weights[r as usize];
        total.s += weights[r as usize] * y[r as usize];
    }
    let id = nodes.len() as u32;
    nodes.push(Tree::leaf(total.s / total.w));
    let min_leaf = params.min_leaf.max(1) as f64;
    let depth_ok = params.max_depth.is_none_or(|d| depth < d);
    if !depth_ok || total.w < 2.0 * min_leaf || rows.len() < 2 {
        return id;
    }
    // Partial Fisher-Yates: the first `mtry` entries become this node's candidates.
    for k in 0..mtry.min(features.len()) {
        let j = k + rng.index(features.len() - k);
        features.swap(k, j);
    }
    let mut best: Option<Split> = None;
    for &f in features[..mtry].iter() {
        let col = &data.cols[f];
        buf.clear();
        buf.extend(
            rows.iter()
                .map(|&r| (col[r as usize], weights[r as usize], y[r as usize])),
        );
        buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        if let Some((threshold, gain)) = scan(buf.iter().copied(), total, 0.0, min_leaf) {
            if best.is_none_or(|b| gain > b.gain) {
                best = Some(Split {
                    feature: f,
                    threshold,
                    gain,
                });
            }
        }
    }
    let Some(split) = best else { return id };
    let col = &data.cols[split.feature];
    let (left, right): (Vec<u32>, Vec<u32>) = rows
        .iter()
        .partition(|&&r| col[r as usize] <= split.threshold);
    let l = forest_node(
        data,
        y,
        weights,
        params,
        mtry,
        left,
        depth + 1,
        nodes,
        features,
        buf,
        rng,
    );
    let r = forest_node(
        data,
        y,
        weights,
        params,
        mtry,
        right,
        depth + 1,
        nodes,
        features,
        buf,
        rng,
    );
    nodes[id as usize] = Node {
        feature: split.feature as u32,
        threshold: split.threshold,
        left: l,
        right: r,
        value: nodes[id as usize].value,
    };
    id
}

/// Grows one boosting tree on residuals `g`, level by level. Each level makes
/// one pass over every presorted feature column, tracking split statistics
/// for all open nodes at once.
pub(crate) fn grow_boost_tree(
    data: &Columns,
    orders: &[Vec<u32>],
    g: &[f64],
    params: &BoostParams,
) -> Tree {
    const CLOSED: u32 = u32::MAX;
    let n = data.n_rows;
    let leaf_value = |s: Stats| params.learning_rate * s.s / (s.w + params.lambda);
    let mut total = Stats::default();
    for &v in g {
        total.w += 1.0;
        total.s += v;
    }
    let mut nodes = vec![Tree::leaf(leaf_value(total))];
    // Open nodes at the current level, addressed by slot.
    let mut open: Vec<(u32, Stats)> = vec![(0, total)];
    let mut slot_of = vec![0u32; n];
    let mut left = Vec::new();
    let mut prev = Vec::new();
    let mut best: Vec<Option<Split>> = Vec::new();
    for _depth in 0..params.max_depth {
        if open.is_empty() {
            break;
        }
        let k = open.len();
        best.clear();
        best.resize(k, None);
        let parent: Vec<f64> = open.iter().map(|(_, s)| s.score(params.lambda)).collect();
        for (f, order) in orders.iter().enumerate() {
            let col = &data.cols[f];
            left.clear();
            left.resize(k, Stats::default());
            prev.clear();
            prev.resize(k, f64::NAN);
            for &r in order {
                let slot = slot_of[r as usize];
                if slot == CLOSED {
                    continue;
                }
                let slot = slot as usize;
                let x = col[r as usize];
                let l = left[slot];
                let tot = open[slot].1;
                if x > prev[slot]
                    && l.w >= params.min_child_weight
                    && tot.w - l.w >= params.min_child_weight
                {
                    let right = Stats {
                        w: tot.w - l.w,
                        s: tot.s - l.s,
                    };
                    let gain = l.score(params.lambda) + right.score(params.lambda) - parent[slot];
                    if gain > best[slot].map_or(0.0, |b| b.gain) {
                        best[slot] = Some(Split {
                            feature: f,
                            threshold: 0.5 * (prev[slot] + x),
                            gain,
                        });
                    }
                }
                left[slot].w += 1.0;
                left[slot].s += g[r as usize];
                prev[slot] = x;
            }
        }
        // Open children for nodes with a worthwhile split.
        let mut child_slots = vec![(CLOSED, CLOSED); k];
        let mut next: Vec<(u32, Stats)> = Vec::new();
        for (slot, b) in best.iter().enumerate() {
            let accept = b.filter(|b| b.gain > 1e-12 * parent[slot].abs().max(1e-300));
            if let Some(b) = accept {
                let id = open[slot].0 as usize;
                let l = nodes.len() as u32;
                nodes[id].feature = b.feature as u32;
                nodes[id].threshold = b.threshold;
                nodes[id].left = l;
                nodes[id].right = l + 1;
                nodes.push(Tree::leaf(0.0));
                nodes.push(Tree::leaf(0.0));
                child_slots[slot] = (next.len() as u32, next.len() as u32 + 1);
                next.push((l, Stats::default()));
                next.push((l + 1, Stats::default()));
            }
        }
        for r in 0..n {
            let slot = slot_of[r];
            if slot == CLOSED {
                continue;
            }
            let (cl, cr) = child_slots[slot as usize];
            if cl == CLOSED {
                slot_of[r] = CLOSED;
                continue;
            }
            let node = &nodes[open[slot as usize].0 as usize];
            let c = if data.cols[node.feature as usize][r] <= node.threshold {
                cl
            } else {
                cr
            };
            slot_of[r] = c;
            next[c as usize].1.w += 1.0;
            next[c as usize].1.s += g[r];
        }
        for (id, s) in &next {
            nodes[*id as usize].value = leaf_value(*s);
        }
        // Nodes with fewer than two rows cannot split further.
        for r in 0..n {
            let slot = slot_of[r];
            if slot != CLOSED && next[slot as usize].1.w < 2.0 {
                slot_of[r] = CLOSED;
            }
        }
        open = next;
    }
    Tree { nodes }
}
