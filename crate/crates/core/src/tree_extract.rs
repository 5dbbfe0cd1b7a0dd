//! Decision-tree extraction through a leaf-revealing oracle.
//!
//! Starting from the centre of the feature ranges, every discovered leaf is
//! explored along each feature axis through its witness point: the line is
//! searched recursively, halving any interval whose end points fall into
//! different leaves until it is shorter than the search resolution. Leaves
//! seen along the way are queued and explored breadth-first. An adapted
//! attacker issues `cover_ratio` innocuous queries before every attack
//! query to dilute a query-ratio monitor.

use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::LabeledDataset;
use crate::dtree::{DecisionTree, LeafBox, LeafResponse, Node};
use crate::error::{Error, Result};
use crate::oracle::{Oracle, OracleSession, QueryPhase};
use crate::rng::RngConfig;
use crate::signal::Signal;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CoverSource {
    RandomUniform,
    /// Rows of leaked training data; the fraction is informational, the
    /// rows themselves are passed to the attack.
    LeakedTraining {
        fraction: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractionConfig {
    /// Search resolution as a fraction of each feature's range.
    pub search_epsilon: f64,
    pub feature_ranges: Vec<(f64, f64)>,
    pub cover_ratio: usize,
    pub cover_source: CoverSource,
    /// Total queries allowed, cover queries included.
    pub query_budget: u64,
    /// Abort once one leaf has accumulated more phantom boundaries than
    /// this; `None` disables the check.
    pub divergence_limit: Option<usize>,
    /// Jitter added to leaked cover rows, as a fraction of each range.
    pub leak_jitter: f64,
    pub rng: RngConfig,
}

impl ExtractionConfig {
    pub fn new(feature_ranges: Vec<(f64, f64)>) -> Self {
        ExtractionConfig {
            search_epsilon: 1e-3,
            feature_ranges,
            cover_ratio: 0,
            cover_source: CoverSource::RandomUniform,
            query_budget: 100_000,
            divergence_limit: Some(64),
            leak_jitter: 0.01,
            rng: RngConfig::new(0, crate::rng::streams::COVER),
        }
    }

    /// Absolute resolution for one feature.
    pub fn epsilon(&self, feature: usize) -> f64 {
        let (lo, hi) = self.feature_ranges[feature];
        self.search_epsilon * (hi - lo)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.search_epsilon > 0.0 && self.search_epsilon < 1.0) {
            return Err(Error::InvalidParameter(
                "search_epsilon must lie in (0, 1)".into(),
            ));
        }
        if self.feature_ranges.is_empty()
            || self
                .feature_ranges
                .iter()
                .any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi))
        {
            return Err(Error::InvalidParameter(
                "feature ranges must be finite with lo <= hi".into(),
            ));
        }
        if self.query_budget == 0 {
            return Err(Error::InvalidParameter(
                "query budget must be positive".into(),
            ));
        }
        if let CoverSource::LeakedTraining { fraction } = self.cover_source {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::InvalidParameter(
                    "leaked fraction must lie in (0, 1]".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Termination {
    Completed,
    Blocked,
    BudgetExhausted,
    RandomizedDivergence,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::Blocked => "blocked",
            Termination::BudgetExhausted => "budget_exhausted",
            Termination::RandomizedDivergence => "randomized_divergence",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractedLeaf {
    pub leaf_id: usize,
    pub label: usize,
    pub confidence: f64,
    pub witness: Vec<f64>,
    /// Reconstructed `(low, high]` extent per feature, clipped to the
    /// assumed ranges. Empty until the leaf is explored.
    pub intervals: LeafBox,
    /// Every per-feature search finished and located the leaf.
    pub complete: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractedModel {
    pub leaves: BTreeMap<usize, ExtractedLeaf>,
    /// All queries issued, cover queries included.
    pub queries_spent: u64,
    pub attack_queries: u64,
    pub cover_queries: u64,
    pub terminated_by: Termination,
    /// Leaf ids seen in more than one separate run along a search line.
    pub phantom_boundaries: usize,
}

impl ExtractedModel {
    pub fn completed_leaves(&self) -> usize {
        self.leaves.values().filter(|l| l.complete).count()
    }

    /// Rebuilds a tree from the complete leaf boxes by recursive axis cuts.
    /// `None` when the boxes do not form a guillotine partition or some
    /// discovered leaf is incomplete.
    pub fn to_tree(&self, cfg: &ExtractionConfig, n_classes: usize) -> Option<DecisionTree> {
        if self.leaves.is_empty() || self.leaves.values().any(|l| !l.complete) {
            return None;
        }
        let leaves: Vec<&ExtractedLeaf> = self.leaves.values().collect();
        let mut nodes = Vec::new();
        let all: Vec<usize> = (0..leaves.len()).collect();
        build_cuts(&leaves, &all, cfg, &mut nodes)?;
        // Renumber leaves in depth-first order.
        let mut next = 0;
        for n in &mut nodes {
            if let Node::Leaf(l) = n {
                l.leaf_id = next;
                next += 1;
            }
        }
        DecisionTree::from_nodes(nodes, cfg.feature_ranges.len(), n_classes).ok()
    }
}

fn build_cuts(
    leaves: &[&ExtractedLeaf],
    set: &[usize],
    cfg: &ExtractionConfig,
    nodes: &mut Vec<Node>,
) -> Option<usize> {
    let id = nodes.len();
    if let [only] = set {
        let l = leaves[*only];
        nodes.push(Node::Leaf(crate::dtree::Leaf {
            leaf_id: l.leaf_id,
            label: l.label,
            confidence: l.confidence,
            samples: Vec::new(),
        }));
        return Some(id);
    }
    for f in 0..cfg.feature_ranges.len() {
        let tol = cfg.epsilon(f);
        let mut cuts: Vec<f64> = set.iter().map(|&i| leaves[i].intervals[f].1).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        for &c in &cuts {
            let (left, right): (Vec<usize>, Vec<usize>) = set
                .iter()
                .partition(|&&i| leaves[i].intervals[f].1 <= c + tol);
            if left.is_empty() || right.is_empty() {
                continue;
            }
            if right.iter().any(|&i| leaves[i].intervals[f].0 < c - tol) {
                continue;
            }
            nodes.push(Node::Split {
                feature: f,
                threshold: c,
                left: 0,
                right: 0,
            });
            let l = build_cuts(leaves, &left, cfg, nodes)?;
            let r = build_cuts(leaves, &right, cfg, nodes)?;
            nodes[id] = Node::Split {
                feature: f,
                threshold: c,
                left: l,
                right: r,
            };
            return Some(id);
        }
    }
    None
}

/// A cover query: uniform over the ranges, or a jittered leaked row.
pub fn make_cover_query(
    cfg: &ExtractionConfig,
    rng: &mut impl Rng,
    leaked: Option<&LabeledDataset>,
) -> Result<Signal> {
    let ranges = &cfg.feature_ranges;
    let values = match cfg.cover_source {
        CoverSource::RandomUniform => ranges
            .iter()
            .map(|&(lo, hi)| {
                if hi > lo {
                    rng.random_range(lo..=hi)
                } else {
                    lo
                }
            })
            .collect(),
        CoverSource::LeakedTraining { .. } => {
            let leaked = leaked
                .filter(|d| !d.is_empty())
                .ok_or(Error::EmptyDataset)?;
            if leaked.dim() != ranges.len() {
                return Err(Error::DimensionMismatch {
                    expected: ranges.len(),
                    actual: leaked.dim(),
                });
            }
            let row = leaked.rows().choose(rng).expect("non-empty");
            row.iter()
                .zip(ranges)
                .map(|(&v, &(lo, hi))| {
                    let span = cfg.leak_jitter * (hi - lo);
                    let j = if span > 0.0 {
                        rng.random_range(-span..=span)
                    } else {
                        0.0
                    };
                    (v + j).clamp(lo, hi)
                })
                .collect()
        }
    };
    Signal::new(values)
}

enum Stop {
    Blocked,
    Budget,
    Divergence,
    Failed(Error),
}

impl From<Error> for Stop {
    fn from(e: Error) -> Self {
        Stop::Failed(e)
    }
}

fn key(point: &[f64]) -> Vec<u64> {
    point.iter().map(|v| v.to_bits()).collect()
}

struct Attacker<'a, O: Oracle<Answer = LeafResponse>> {
    session: &'a mut OracleSession<O>,
    cfg: &'a ExtractionConfig,
    leaked: Option<&'a LabeledDataset>,
    rng: ChaCha8Rng,
    start: u64,
    cache: HashMap<Vec<u64>, LeafResponse>,
    model: ExtractedModel,
    queue: VecDeque<usize>,
    phantoms: HashMap<usize, usize>,
}

impl<O: Oracle<Answer = LeafResponse>> Attacker<'_, O> {
    fn spent(&self) -> u64 {
        self.session.query_count() - self.start
    }

    fn send(&mut self, q: &Signal, phase: QueryPhase) -> Result<LeafResponse, Stop> {
        if self.spent() >= self.cfg.query_budget {
            return Err(Stop::Budget);
        }
        self.session.set_phase(phase);
        match phase {
            QueryPhase::Cover => self.model.cover_queries += 1,
            _ => self.model.attack_queries += 1,
        }
        match self.session.query(q) {
            Ok(r) => Ok(r),
            Err(Error::Blocked) => Err(Stop::Blocked),
            Err(e) => Err(Stop::Failed(e)),
        }
    }

    fn ask(&mut self, point: &[f64]) -> Result<LeafResponse, Stop> {
        let k = key(point);
        if let Some(r) = self.cache.get(&k) {
            return Ok(*r);
        }
        for _ in 0..self.cfg.cover_ratio {
            let cover = make_cover_query(self.cfg, &mut self.rng, self.leaked)?;
            self.send(&cover, QueryPhase::Cover)?;
        }
        let q = Signal::new(point.to_vec())?;
        let r = self.send(&q, QueryPhase::Extraction)?;
        self.cache.insert(k, r);
        self.model.leaves.entry(r.leaf_id).or_insert_with(|| {
            self.queue.push_back(r.leaf_id);
            ExtractedLeaf {
                leaf_id: r.leaf_id,
                label: r.label,
                confidence: r.confidence,
                witness: point.to_vec(),
                intervals: Vec::new(),
                complete: false,
            }
        });
        Ok(r)
    }

    /// Boundaries along `feature` through `base`, as `(position, leaf on
    /// the right)` after the leaf at the low end.
    fn search_line(
        &mut self,
        base: &[f64],
        feature: usize,
    ) -> Result<(usize, Vec<(f64, usize)>), Stop> {
        let (lo, hi) = self.cfg.feature_ranges[feature];
        let eps = self.cfg.epsilon(feature);
        let mut point = base.to_vec();
        let mut at = |this: &mut Self, v: f64| -> Result<usize, Stop> {
            point[feature] = v;
            Ok(this.ask(&point)?.leaf_id)
        };
        let first = at(self, lo)?;
        let last = at(self, hi)?;
        let mut boundaries = Vec::new();
        // Depth-first over intervals, left half first, so boundaries come
        // out in increasing position.
        let mut stack = vec![(lo, first, hi, last)];
        while let Some((a, la, b, lb)) = stack.pop() {
            if la == lb {
                continue;
            }
            if b - a < eps {
                boundaries.push((a + 0.5 * (b - a), lb));
                continue;
            }
            let m = a + 0.5 * (b - a);
            let lm = at(self, m)?;
            stack.push((m, lm, b, lb));
            stack.push((a, la, m, lm));
        }
        Ok((first, boundaries))
    }

    fn explore(&mut self, leaf_id: usize) -> Result<(), Stop> {
        let witness = self.model.leaves[&leaf_id].witness.clone();
        let mut intervals = Vec::with_capacity(witness.len());
        let mut located = true;
        for f in 0..witness.len() {
            let (lo, hi) = self.cfg.feature_ranges[f];
            if hi <= lo {
                intervals.push((lo, hi));
                continue;
            }
            let (first, boundaries) = self.search_line(&witness, f)?;
            // Runs of identical leaves along the line.
            let mut runs = vec![(lo, first)];
            runs.extend(boundaries.iter().copied());
            let mut seen: HashMap<usize, usize> = HashMap::new();
            for &(_, id) in &runs {
                *seen.entry(id).or_default() += 1;
            }
            let phantom: usize = seen.values().map(|c| c - 1).sum();
            if phantom > 0 {
                self.model.phantom_boundaries += phantom;
                let count = self.phantoms.entry(leaf_id).or_default();
                *count += phantom;
                if self
                    .cfg
                    .divergence_limit
                    .is_some_and(|limit| *count > limit)
                {
                    return Err(Stop::Divergence);
                }
            }
            let extent = |k: usize| {
                let start = runs[k].0;
                let end = runs.get(k + 1).map_or(hi, |r| r.0);
                (start, end)
            };
            let own: Vec<usize> = (0..runs.len()).filter(|&k| runs[k].1 == leaf_id).collect();
            let x = witness[f];
            let distance = |k: usize| {
                let (s, e) = extent(k);
                if x < s {
                    s - x
                } else if x > e {
                    x - e
                } else {
                    0.0
                }
            };
            match own
                .into_iter()
                .min_by(|&a, &b| distance(a).total_cmp(&distance(b)))
            {
                Some(k) => intervals.push(extent(k)),
                None => {
                    located = false;
                    intervals.push((f64::NAN, f64::NAN));
                }
            }
        }
        let leaf = self
            .model
            .leaves
            .get_mut(&leaf_id)
            .expect("queued leaves are recorded");
        leaf.intervals = intervals;
        leaf.complete = located;
        Ok(())
    }

    fn run(&mut self) -> Result<(), Stop> {
        let centre: Vec<f64> = self
            .cfg
            .feature_ranges
            .iter()
            .map(|&(lo, hi)| lo + 0.5 * (hi - lo))
            .collect();
        self.ask(&centre)?;
        while let Some(leaf) = self.queue.pop_front() {
            self.explore(leaf)?;
        }
        Ok(())
    }
}

/// Runs the extraction attack. With `cover_ratio > 0` it becomes the
/// adapted attack; `leaked` supplies rows for leaked-data covers.
pub fn extract_tree<O: Oracle<Answer = LeafResponse>>(
    session: &mut OracleSession<O>,
    cfg: &ExtractionConfig,
    leaked: Option<&LabeledDataset>,
) -> Result<ExtractedModel> {
    cfg.validate()?;
    let start = session.query_count();
    let mut attacker = Attacker {
        session,
        cfg,
        leaked,
        rng: cfg.rng.rng(),
        start,
        cache: HashMap::new(),
        model: ExtractedModel {
            leaves: BTreeMap::new(),
            queries_spent: 0,
            attack_queries: 0,
            cover_queries: 0,
            terminated_by: Termination::Completed,
            phantom_boundaries: 0,
        },
        queue: VecDeque::new(),
        phantoms: HashMap::new(),
    };
    let outcome = attacker.run();
    attacker.model.queries_spent = attacker.spent();
    attacker.session.set_phase(QueryPhase::Unspecified);
    attacker.model.terminated_by = match outcome {
        Ok(()) => Termination::Completed,
        Err(Stop::Blocked) => Termination::Blocked,
        Err(Stop::Budget) => Termination::BudgetExhausted,
        Err(Stop::Divergence) => Termination::RandomizedDivergence,
        Err(Stop::Failed(e)) => return Err(e),
    };
    Ok(attacker.model)
}

/// The extraction attack with cover queries; requires `cover_ratio >= 1`.
pub fn adapted_extract<O: Oracle<Answer = LeafResponse>>(
    session: &mut OracleSession<O>,
    cfg: &ExtractionConfig,
    leaked: Option<&LabeledDataset>,
) -> Result<ExtractedModel> {
    if cfg.cover_ratio == 0 {
        return Err(Error::InvalidParameter(
            "adapted attack needs cover_ratio >= 1".into(),
        ));
    }
    extract_tree(session, cfg, leaked)
}

/// Fraction of true leaves whose search completed and whose reconstructed
/// box matches the true box (clipped to the assumed ranges) within the
/// search resolution on every side.
pub fn score_extraction(
    tree: &DecisionTree,
    model: &ExtractedModel,
    cfg: &ExtractionConfig,
) -> Result<f64> {
    let truth = tree.clipped_leaf_boxes(&cfg.feature_ranges)?;
    let matched = truth
        .iter()
        .enumerate()
        .filter(|(id, bx)| {
            model.leaves.get(id).is_some_and(|l| {
                l.complete
                    && l.intervals
                        .iter()
                        .zip(bx.iter())
                        .enumerate()
                        .all(|(f, (got, want))| {
                            let eps = cfg.epsilon(f);
                            (got.0 - want.0).abs() <= eps && (got.1 - want.1).abs() <= eps
                        })
            })
        })
        .count();
    Ok(matched as f64 / truth.len() as f64)
}

/// Fraction of true leaves that were discovered and fully searched,
/// regardless of whether the recovered box is right.
pub fn completed_fraction(tree: &DecisionTree, model: &ExtractedModel) -> f64 {
    let done = model
        .leaves
        .values()
        .filter(|l| l.complete && l.leaf_id < tree.n_leaves())
        .count();
    done as f64 / tree.n_leaves() as f64
}
