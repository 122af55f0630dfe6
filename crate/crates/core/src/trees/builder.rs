//! Exact greedy tree growth over presorted per-feature row lists.
//!
//! Every node owns the same contiguous segment in each feature's order list;
//! splitting a node stably partitions that segment in every list.

use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Split, Tree, TreeNode};

const GAIN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub(crate) enum Criterion {
    /// Gini impurity over integer-weighted class counts.
    Gini { n_classes: usize },
    /// Second-order criterion `G^2 / (H + lambda)` with leaf value `G / (H + lambda)`.
    Newton { lambda: f64 },
}

impl Criterion {
    /// Stats layout: `[count, ...]` with class counts (Gini) or `G, H, sum t^2` (Newton).
    fn width(self) -> usize {
        match self {
            Criterion::Gini { n_classes } => 1 + n_classes,
            Criterion::Newton { .. } => 4,
        }
    }

    fn score(self, s: &[f64]) -> f64 {
        match self {
            Criterion::Gini { .. } => {
                if s[0] == 0.0 {
                    0.0
                } else {
                    s[1..].iter().map(|c| c * c).sum::<f64>() / s[0]
                }
            }
            Criterion::Newton { lambda } => {
                let d = s[2] + lambda;
                if d > 0.0 {
                    s[1] * s[1] / d
                } else {
                    0.0
                }
            }
        }
    }

    /// Smallest gain worth splitting on, relative to the node's scale.
    fn min_gain(self, s: &[f64]) -> f64 {
        match self {
            Criterion::Gini { .. } => GAIN_EPS * s[0],
            Criterion::Newton { .. } => GAIN_EPS * s[3],
        }
    }

    fn is_pure(self, s: &[f64]) -> bool {
        match self {
            Criterion::Gini { .. } => s[1..].iter().filter(|&&c| c > 0.0).count() <= 1,
            Criterion::Newton { .. } => false,
        }
    }

    fn leaf_value(self, s: &[f64]) -> Vec<f64> {
        match self {
            Criterion::Gini { .. } => {
                if s[0] == 0.0 {
                    vec![0.0; s.len() - 1]
                } else {
                    s[1..].iter().map(|c| c / s[0]).collect()
                }
            }
            Criterion::Newton { lambda } => {
                let d = s[2] + lambda;
                vec![if d > 0.0 { s[1] / d } else { 0.0 }]
            }
        }
    }
}

/// Per-row training signal.
pub(crate) enum Signal<'a> {
    Classes(&'a [usize]),
    /// Target `t` and hessian `h` per row.
    Newton { t: &'a [f64], h: &'a [f64] },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SplitMode {
    Best,
    /// One uniform random threshold per candidate feature.
    Random,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub criterion: Criterion,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_leaves: Option<usize>,
    /// Candidate features per node; `None` means all.
    pub max_features: Option<usize>,
    pub split_mode: SplitMode,
}

/// Column-major copy of the training features.
pub(crate) struct Columns {
    pub cols: Vec<Vec<f64>>,
    pub n_rows: usize,
}

impl Columns {
    pub fn from_matrix(m: &crate::matrix::Matrix) -> Self {
        Columns {
            cols: (0..m.n_cols()).map(|j| m.column(j)).collect(),
            n_rows: m.n_rows(),
        }
    }
}

/// Row order per feature by `(x, key, index)`, plus a base order by `(key, index)`.
pub(crate) struct Presorted {
    pub by_feature: Vec<Vec<u32>>,
    pub base: Vec<u32>,
}

impl Presorted {
    pub fn new(cols: &Columns, rows: &[u32], key: Option<&[f64]>) -> Self {
        let k = |r: u32| key.map_or(0.0, |k| k[r as usize]);
        let mut base = rows.to_vec();
        base.sort_by(|&a, &b| k(a).total_cmp(&k(b)).then(a.cmp(&b)));
        let by_feature = cols
            .cols
            .iter()
            .map(|c| {
                let mut o = rows.to_vec();
                o.sort_by(|&a, &b| {
                    c[a as usize]
                        .total_cmp(&c[b as usize])
                        .then(k(a).total_cmp(&k(b)))
                        .then(a.cmp(&b))
                });
                o
            })
            .collect();
        Presorted { by_feature, base }
    }

    /// Keeps the rows with non-zero weight, preserving every order.
    pub fn filtered(&self, weights: &[u32]) -> Self {
        let keep = |o: &Vec<u32>| o.iter().copied().filter(|&r| weights[r as usize] > 0).collect();
        Presorted {
            by_feature: self.by_feature.iter().map(keep).collect(),
            base: keep(&self.base),
        }
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
    left: Vec<f64>,
    right: Vec<f64>,
    n_left_rows: usize,
}

struct Pending {
    node: usize,
    start: usize,
    end: usize,
    depth: usize,
    stats: Vec<f64>,
}

struct Grower<'a> {
    cols: &'a Columns,
    /// Row `r`'s contribution to node stats at `[r * width..(r + 1) * width]`.
    row_stats: Vec<f64>,
    params: GrowParams,
    order: Presorted,
    side: Vec<bool>,
    scratch: Vec<u32>,
    nodes: Vec<TreeNode>,
}

impl Grower<'_> {
    #[inline]
    fn add(&self, stats: &mut [f64], row: usize) {
        let w = stats.len();
        for (s, v) in stats.iter_mut().zip(&self.row_stats[row * w..(row + 1) * w]) {
            *s += v;
        }
    }

    fn segment_stats(&self, start: usize, end: usize) -> Vec<f64> {
        let mut s = vec![0.0; self.params.criterion.width()];
        for &r in &self.order.base[start..end] {
            self.add(&mut s, r as usize);
        }
        s
    }

    fn new_node(&mut self, stats: &[f64]) -> usize {
        self.nodes.push(TreeNode {
            split: None,
            value: self.params.criterion.leaf_value(stats),
            n_samples: stats[0] as usize,
        });
        self.nodes.len() - 1
    }

    fn candidate_features(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let p = self.cols.cols.len();
        match self.params.max_features {
            Some(k) if k < p => {
                let mut f = sample(rng, p, k).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..p).collect(),
        }
    }

    fn evaluate(&self, pending: &Pending, rng: &mut ChaCha8Rng) -> Option<Candidate> {
        let crit = self.params.criterion;
        let min_leaf = self.params.min_samples_leaf as f64;
        let s = &pending.stats;
        if self.params.max_depth.is_some_and(|d| pending.depth >= d)
            || s[0] < 2.0 * min_leaf
            || crit.is_pure(s)
        {
            return None;
        }
        let parent_score = crit.score(s);
        let min_gain = crit.min_gain(s);
        let width = crit.width();
        // (feature, threshold, gain, rows on the left) of the best split so far.
        let mut best: Option<(usize, f64, f64, usize)> = None;
        let mut best_left = vec![0.0; width];
        let mut left = vec![0.0; width];
        let mut right = vec![0.0; width];
        for f in self.candidate_features(rng) {
            let col = &self.cols.cols[f];
            let seg = &self.order.by_feature[f][pending.start..pending.end];
            let random_threshold = match self.params.split_mode {
                SplitMode::Best => None,
                SplitMode::Random => {
                    let lo = col[seg[0] as usize];
                    let hi = seg
                        .iter()
                        .rev()
                        .map(|&r| col[r as usize])
                        .find(|v| !v.is_nan())
                        .unwrap_or(lo);
                    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                        continue;
                    }
                    let mut t = rng.random_range(lo..hi);
                    if t >= hi {
                        t = lo;
                    }
                    Some(t)
                }
            };
            left.fill(0.0);
            for k in 0..seg.len() - 1 {
                let r = seg[k] as usize;
                self.add(&mut left, r);
                let (a, b) = (col[r], col[seg[k + 1] as usize]);
                if !(a < b) || !b.is_finite() {
                    continue;
                }
                let threshold = match random_threshold {
                    Some(t) if a <= t && t < b => t,
                    Some(_) => continue,
                    None => {
                        let mid = a + (b - a) / 2.0;
                        if mid < b { mid } else { a }
                    }
                };
                if left[0] < min_leaf || s[0] - left[0] < min_leaf {
                    if random_threshold.is_some() {
                        break;
                    }
                    continue;
                }
                for ((r, p), l) in right.iter_mut().zip(s).zip(&left) {
                    *r = p - l;
                }
                let gain = crit.score(&left) + crit.score(&right) - parent_score;
                if gain > min_gain && best.is_none_or(|b| gain > b.2) {
                    best = Some((f, threshold, gain, k + 1));
                    best_left.copy_from_slice(&left);
                }
                if random_threshold.is_some() {
                    break;
                }
            }
        }
        best.map(|(feature, threshold, gain, n_left_rows)| Candidate {
            feature,
            threshold,
            gain,
            right: s.iter().zip(&best_left).map(|(p, l)| p - l).collect(),
            left: best_left,
            n_left_rows,
        })
    }

    fn split(&mut self, pending: &Pending, c: &Candidate) -> (Pending, Pending) {
        let col = &self.cols.cols[c.feature];
        for &r in &self.order.by_feature[c.feature][pending.start..pending.end] {
            self.side[r as usize] = col[r as usize] <= c.threshold;
        }
        let (start, end) = (pending.start, pending.end);
        let lists = self
            .order
            .by_feature
            .iter_mut()
            .chain(std::iter::once(&mut self.order.base));
        for list in lists {
            self.scratch.clear();
            let mut w = start;
            for i in start..end {
                let r = list[i];
                if self.side[r as usize] {
                    list[w] = r;
                    w += 1;
                } else {
                    self.scratch.push(r);
                }
            }
            list[w..end].copy_from_slice(&self.scratch);
        }
        let mid = start + c.n_left_rows;
        let left = self.new_node(&c.left);
        let right = self.new_node(&c.right);
        self.nodes[pending.node].split = Some(Split {
            feature: c.feature,
            threshold: c.threshold,
            left,
            right,
        });
        (
            Pending {
                node: left,
                start,
                end: mid,
                depth: pending.depth + 1,
                stats: c.left.clone(),
            },
            Pending {
                node: right,
                start: mid,
                end,
                depth: pending.depth + 1,
                stats: c.right.clone(),
            },
        )
    }
}

fn row_stats(signal: &Signal<'_>, weights: &[u32], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; weights.len() * width];
    for (row, s) in out.chunks_exact_mut(width).enumerate() {
        let w = f64::from(weights[row]);
        s[0] = w;
        match signal {
            Signal::Classes(labels) => s[1 + labels[row]] = w,
            Signal::Newton { t, h } => {
                s[1] = w * t[row];
                s[2] = w * h[row];
                s[3] = w * t[row] * t[row];
            }
        }
    }
    out
}

/// Grows one tree on the rows with non-zero weight.
pub(crate) fn grow(
    cols: &Columns,
    signal: &Signal<'_>,
    weights: &[u32],
    order: Presorted,
    params: GrowParams,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let n_present = order.base.len();
    let mut g = Grower {
        cols,
        row_stats: row_stats(signal, weights, params.criterion.width()),
        params,
        order,
        side: vec![false; cols.n_rows],
        scratch: Vec::with_capacity(n_present),
        nodes: Vec::new(),
    };
    let stats = g.segment_stats(0, n_present);
    let root = g.new_node(&stats);
    let root = Pending {
        node: root,
        start: 0,
        end: n_present,
        depth: 0,
        stats,
    };
    match params.max_leaves {
        None => {
            let mut queue = VecDeque::from([root]);
            while let Some(p) = queue.pop_front() {
                if let Some(c) = g.evaluate(&p, rng) {
                    let (l, r) = g.split(&p, &c);
                    queue.push_back(l);
                    queue.push_back(r);
                }
            }
        }
        Some(max_leaves) => {
            let mut frontier: Vec<(Pending, Candidate)> = Vec::new();
            if let Some(c) = g.evaluate(&root, rng) {
                frontier.push((root, c));
            }
            let mut n_leaves = 1;
            while n_leaves < max_leaves && !frontier.is_empty() {
                let mut best = 0;
                for (i, (p, c)) in frontier.iter().enumerate() {
                    let (bp, bc) = &frontier[best];
                    if c.gain > bc.gain || (c.gain == bc.gain && p.node < bp.node) {
                        best = i;
                    }
                }
                let (p, c) = frontier.swap_remove(best);
                let (l, r) = g.split(&p, &c);
                n_leaves += 1;
                for child in [l, r] {
                    if let Some(c) = g.evaluate(&child, rng) {
                        frontier.push((child, c));
                    }
                }
            }
        }
    }
    Tree { nodes: g.nodes }
}
