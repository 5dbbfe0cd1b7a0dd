//! CART classification trees whose answers expose the leaf.
//!
//! Splits minimize weighted Gini impurity over midpoint thresholds; a query
//! goes left iff `value <= threshold`. Leaves are numbered in depth-first
//! (left before right) order and keep the indices of the training rows
//! that reached them.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::signal::Signal;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeParams {
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            min_samples_leaf: 5,
            max_depth: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(Leaf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Leaf {
    pub leaf_id: usize,
    pub label: usize,
    pub confidence: f64,
    pub samples: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeafResponse {
    pub label: usize,
    pub leaf_id: usize,
    pub confidence: f64,
}

/// Per-feature `(low, high]` interval; unbounded sides are infinite.
pub type LeafBox = Vec<(f64, f64)>;

#[derive(Clone, Debug, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    n_features: usize,
    n_classes: usize,
    /// Node index of each leaf, by leaf id.
    leaf_nodes: Vec<usize>,
}

const MIN_GAIN: f64 = 1e-12;

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    data: &'a LabeledDataset,
    params: TreeParams,
    nodes: Vec<Node>,
    leaf_nodes: Vec<usize>,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.data.n_classes()];
        for &i in idx {
            c[self.data.labels()[i]] += 1;
        }
        c
    }

    /// Best `(feature, threshold)` by Gini gain, first found winning ties.
    fn best_split(&self, idx: &[usize], parent: &[usize]) -> Option<(usize, f64)> {
        let n = idx.len();
        let min_leaf = self.params.min_samples_leaf.max(1);
        if n < 2 * min_leaf {
            return None;
        }
        let parent_gini = gini(parent, n);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = idx.to_vec();
        for f in 0..self.data.dim() {
            let value = |i: usize| self.data.rows()[i][f];
            order.sort_by(|&a, &b| value(a).total_cmp(&value(b)).then(a.cmp(&b)));
            let mut left = vec![0; parent.len()];
            let mut right = parent.to_vec();
            for k in 1..n {
                let moved = self.data.labels()[order[k - 1]];
                left[moved] += 1;
                right[moved] -= 1;
                let (lo, hi) = (value(order[k - 1]), value(order[k]));
                if lo == hi || k < min_leaf || n - k < min_leaf {
                    continue;
                }
                let weighted =
                    (k as f64 * gini(&left, k) + (n - k) as f64 * gini(&right, n - k)) / n as f64;
                let gain = parent_gini - weighted;
                if gain > MIN_GAIN && best.is_none_or(|(g, _, _)| gain > g + MIN_GAIN) {
                    best = Some((gain, f, lo + 0.5 * (hi - lo)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&idx);
        let node = self.nodes.len();
        let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let split = if depth_ok && !pure {
            self.best_split(&idx, &counts)
        } else {
            None
        };
        match split {
            Some((feature, threshold)) => {
                self.nodes.push(Node::Split {
                    feature,
                    threshold,
                    left: 0,
                    right: 0,
                });
                let (l, r): (Vec<usize>, Vec<usize>) = idx
                    .into_iter()
                    .partition(|&i| self.data.rows()[i][feature] <= threshold);
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[node] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
            }
            None => {
                // Majority label; ties go to the lowest class index.
                let (label, &top) = counts
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                    .expect("at least one class");
                let confidence = if idx.is_empty() {
                    1.0
                } else {
                    top as f64 / idx.len() as f64
                };
                self.nodes.push(Node::Leaf(Leaf {
                    leaf_id: self.leaf_nodes.len(),
                    label,
                    confidence,
                    samples: idx,
                }));
                self.leaf_nodes.push(node);
            }
        }
        node
    }
}

/// Grows a tree on all rows of `train`.
pub fn train_tree(train: &LabeledDataset, params: TreeParams) -> Result<DecisionTree> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut b = Builder {
        data: train,
        params,
        nodes: Vec::new(),
        leaf_nodes: Vec::new(),
    };
    b.grow((0..train.len()).collect(), 0);
    Ok(DecisionTree {
        nodes: b.nodes,
        n_features: train.dim(),
        n_classes: train.n_classes(),
        leaf_nodes: b.leaf_nodes,
    })
}

impl DecisionTree {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_leaves(&self) -> usize {
        self.leaf_nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn leaf(&self, leaf_id: usize) -> Option<&Leaf> {
        match self.nodes.get(*self.leaf_nodes.get(leaf_id)?) {
            Some(Node::Leaf(l)) => Some(l),
            _ => None,
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Leaf> {
        self.leaf_nodes.iter().map(|&n| match &self.nodes[n] {
            Node::Leaf(l) => l,
            Node::Split { .. } => unreachable!("leaf index points at a split"),
        })
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], n: usize) -> usize {
            match nodes[n] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn predict(&self, q: &Signal) -> Result<LeafResponse> {
        self.predict_slice(q.as_slice())
    }

    pub fn predict_slice(&self, q: &[f64]) -> Result<LeafResponse> {
        if q.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                actual: q.len(),
            });
        }
        let mut n = 0;
        loop {
            match &self.nodes[n] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    n = if q[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
                Node::Leaf(l) => {
                    return Ok(LeafResponse {
                        label: l.label,
                        leaf_id: l.leaf_id,
                        confidence: l.confidence,
                    })
                }
            }
        }
    }

    /// `(low, high]` box of every leaf, indexed by leaf id.
    pub fn leaf_boxes(&self) -> Vec<LeafBox> {
        let mut boxes = vec![Vec::new(); self.n_leaves()];
        let mut stack = vec![(0, vec![(f64::NEG_INFINITY, f64::INFINITY); self.n_features])];
        while let Some((n, bounds)) = stack.pop() {
            match &self.nodes[n] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let mut l = bounds.clone();
                    l[*feature].1 = l[*feature].1.min(*threshold);
                    let mut r = bounds;
                    r[*feature].0 = r[*feature].0.max(*threshold);
                    stack.push((*right, r));
                    stack.push((*left, l));
                }
                Node::Leaf(leaf) => boxes[leaf.leaf_id] = bounds,
            }
        }
        boxes
    }

    /// Leaf boxes with infinite sides replaced by the given ranges.
    pub fn clipped_leaf_boxes(&self, ranges: &[(f64, f64)]) -> Result<Vec<LeafBox>> {
        if ranges.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                actual: ranges.len(),
            });
        }
        Ok(self
            .leaf_boxes()
            .into_iter()
            .map(|b| {
                b.iter()
                    .zip(ranges)
                    .map(|(&(lo, hi), &(rlo, rhi))| (lo.max(rlo), hi.min(rhi)))
                    .collect()
            })
            .collect())
    }

    /// Line-oriented text form:
    ///
    /// ```text
    /// dtree 1 <features> <classes>
    /// <node> split <feature> <threshold> <left> <right>
    /// <node> leaf <leaf_id> <label> <confidence> samples=<i,j,...|->
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = format!("dtree 1 {} {}\n", self.n_features, self.n_classes);
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => writeln!(out, "{i} split {feature} {threshold:?} {left} {right}"),
                Node::Leaf(l) => {
                    let samples = if l.samples.is_empty() {
                        "-".to_string()
                    } else {
                        l.samples
                            .iter()
                            .map(usize::to_string)
                            .collect::<Vec<_>>()
                            .join(",")
                    };
                    writeln!(
                        out,
                        "{i} leaf {} {} {:?} samples={samples}",
                        l.leaf_id, l.label, l.confidence
                    )
                }
            }
            .expect("writing to a String");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Format(format!("tree line {line}: {msg}"));
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| bad(1, "missing header"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 || h[0] != "dtree" || h[1] != "1" {
            return Err(bad(1, "expected `dtree 1 <features> <classes>`"));
        }
        let n_features: usize = h[2].parse().map_err(|_| bad(1, "bad feature count"))?;
        let n_classes: usize = h[3].parse().map_err(|_| bad(1, "bad class count"))?;

        let mut nodes = Vec::new();
        for (ln, line) in lines {
            let ln = ln + 1;
            let t: Vec<&str> = line.split_whitespace().collect();
            let num = |k: usize| -> Result<usize> {
                t.get(k)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad(ln, "bad integer field"))
            };
            let real = |k: usize| -> Result<f64> {
                t.get(k)
                    .and_then(|s| s.parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(ln, "bad real field"))
            };
            if num(0)? != nodes.len() {
                return Err(bad(ln, "node ids must be consecutive from 0"));
            }
            let node = match t.get(1).copied() {
                Some("split") if t.len() == 6 => Node::Split {
                    feature: num(2)?,
                    threshold: real(3)?,
                    left: num(4)?,
                    right: num(5)?,
                },
                Some("leaf") if t.len() == 6 => {
                    let samples = t[5]
                        .strip_prefix("samples=")
                        .ok_or_else(|| bad(ln, "expected samples="))?;
                    let samples = if samples == "-" {
                        Vec::new()
                    } else {
                        samples
                            .split(',')
                            .map(|s| s.parse().map_err(|_| bad(ln, "bad sample index")))
                            .collect::<Result<_>>()?
                    };
                    Node::Leaf(Leaf {
                        leaf_id: num(2)?,
                        label: num(3)?,
                        confidence: real(4)?,
                        samples,
                    })
                }
                _ => return Err(bad(ln, "expected a split or leaf node")),
            };
            nodes.push(node);
        }
        Self::from_nodes(nodes, n_features, n_classes)
    }

    /// Validates structure: a proper binary tree rooted at node 0, features
    /// and labels in range, leaf ids a permutation of `0..leaves`.
    pub fn from_nodes(nodes: Vec<Node>, n_features: usize, n_classes: usize) -> Result<Self> {
        let bad = |msg: &str| Error::Format(format!("invalid tree: {msg}"));
        if nodes.is_empty() {
            return Err(bad("no nodes"));
        }
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![0];
        let mut leaf_nodes = Vec::new();
        while let Some(n) = stack.pop() {
            if std::mem::replace(&mut seen[n], true) {
                return Err(bad("node reached twice"));
            }
            match &nodes[n] {
                Node::Split {
                    feature,
                    left,
                    right,
                    ..
                } => {
                    if *feature >= n_features || *left >= nodes.len() || *right >= nodes.len() {
                        return Err(bad("split refers outside the tree"));
                    }
                    stack.push(*right);
                    stack.push(*left);
                }
                Node::Leaf(l) => {
                    if l.label >= n_classes || !(l.confidence > 0.0 && l.confidence <= 1.0) {
                        return Err(bad("leaf label or confidence out of range"));
                    }
                    leaf_nodes.push((l.leaf_id, n));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(bad("unreachable nodes"));
        }
        leaf_nodes.sort_unstable();
        if leaf_nodes.iter().enumerate().any(|(i, &(id, _))| i != id) {
            return Err(bad("leaf ids must be 0..leaves without gaps"));
        }
        Ok(DecisionTree {
            nodes,
            n_features,
            n_classes,
            leaf_nodes: leaf_nodes.into_iter().map(|(_, n)| n).collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}
