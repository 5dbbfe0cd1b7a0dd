//! Stateful security margins for decision trees.
//!
//! Every leaf gets a stripe along each bounded side of its box whose width
//! is calibrated on the leaf's training data: a one-dimensional Gaussian
//! KDE per feature, truncated to the leaf box, puts `alarm_rate` of its mass
//! inside the stripe. Honest queries therefore rarely land there, while a
//! binary search for a boundary keeps probing next to it.
//!
//! The monitor tracks per-leaf counts of all queries and of margin hits
//! and raises an alarm once `phi`, the mean margin ratio over visited
//! leaves, exceeds `tau`.

use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::LabeledDataset;
use crate::dtree::{DecisionTree, LeafBox, LeafResponse};
use crate::error::{Error, Result};
use crate::oracle::{Oracle, QueryContext};
use crate::rng::RngConfig;
use crate::signal::Signal;

const GRID_POINTS: usize = 512;
const MIN_KDE_SAMPLES: usize = 3;

/// Gaussian kernel density estimate with Silverman's bandwidth.
#[derive(Clone, Debug)]
pub struct Kde {
    samples: Vec<f64>,
    bandwidth: f64,
}

impl Kde {
    /// `None` for fewer than two samples. Degenerate spreads get a
    /// bandwidth of `min_bandwidth`.
    pub fn fit(samples: &[f64], min_bandwidth: f64) -> Option<Kde> {
        let n = samples.len();
        if n < 2 {
            return None;
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
        let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
        let bandwidth = (0.9 * spread * (n as f64).powf(-0.2)).max(min_bandwidth);
        Some(Kde {
            samples: sorted,
            bandwidth,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Unnormalized CDF: mean of the kernel CDFs at `x`.
    pub fn cdf(&self, x: f64) -> f64 {
        let h = self.bandwidth * std::f64::consts::SQRT_2;
        self.samples
            .iter()
            .map(|s| 0.5 * libm::erfc((s - x) / h))
            .sum::<f64>()
            / self.samples.len() as f64
    }

    /// Distance from `lo` (or from `hi` when `from_high`) to the point where
    /// the density truncated to `[lo, hi]` has accumulated mass `q`.
    /// Evaluated on a fixed grid with linear interpolation.
    pub fn stripe_width(&self, lo: f64, hi: f64, q: f64, from_high: bool) -> f64 {
        if !(hi > lo) || q <= 0.0 {
            return 0.0;
        }
        let step = (hi - lo) / (GRID_POINTS - 1) as f64;
        let grid: Vec<f64> = (0..GRID_POINTS).map(|i| lo + step * i as f64).collect();
        let raw: Vec<f64> = grid.iter().map(|&x| self.cdf(x)).collect();
        let (base, top) = (raw[0], raw[GRID_POINTS - 1]);
        if top - base <= 0.0 {
            // No mass inside the box: fall back to the uniform quantile.
            return q.min(1.0) * (hi - lo);
        }
        let mass = |i: usize| {
            let f = (raw[i] - base) / (top - base);
            if from_high {
                1.0 - f
            } else {
                f
            }
        };
        let order: Box<dyn Iterator<Item = usize>> = if from_high {
            Box::new((0..GRID_POINTS).rev())
        } else {
            Box::new(0..GRID_POINTS)
        };
        let mut prev: Option<(usize, f64)> = None;
        for i in order {
            let m = mass(i);
            if m >= q {
                let x = match prev {
                    Some((j, pm)) if m > pm => grid[j] + (grid[i] - grid[j]) * (q - pm) / (m - pm),
                    _ => grid[i],
                };
                return if from_high { hi - x } else { x - lo };
            }
            prev = Some((i, m));
        }
        hi - lo
    }
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    match sorted.get(i + 1) {
        Some(next) => sorted[i] + frac * (next - sorted[i]),
        None => sorted[i],
    }
}

/// How `alarm_rate` is shared among the stripes of one leaf.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlarmSplit {
    /// Each bounded side gets the full `alarm_rate`.
    PerSide,
    /// Each of the leaf's `k` bounded sides gets `alarm_rate / k`.
    PerLeaf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarginConfig {
    pub alarm_rate: f64,
    pub split: AlarmSplit,
    /// Box-width fraction used when a leaf has too few samples for a KDE,
    /// as a multiple of the per-side alarm rate.
    pub fallback_scale: f64,
    /// Lower bound on the KDE bandwidth, as a fraction of the feature's
    /// training range.
    pub min_bandwidth: f64,
}

impl Default for MarginConfig {
    fn default() -> Self {
        MarginConfig {
            alarm_rate: 0.05,
            split: AlarmSplit::PerLeaf,
            fallback_scale: 1.0,
            min_bandwidth: 0.01,
        }
    }
}

/// Stripe widths `(low, high)` per leaf and feature.
#[derive(Clone, Debug, PartialEq)]
pub struct SecurityMargin {
    pub alarm_rate: f64,
    boxes: Vec<LeafBox>,
    widths: Vec<Vec<(f64, f64)>>,
}

/// One stripe of the margin dump.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stripe {
    pub leaf_id: usize,
    pub feature: usize,
    pub high_side: bool,
    pub boundary: f64,
    pub width: f64,
}

pub fn build_margins(
    tree: &DecisionTree,
    train: &LabeledDataset,
    cfg: &MarginConfig,
) -> Result<SecurityMargin> {
    if !(cfg.alarm_rate > 0.0 && cfg.alarm_rate < 0.5) {
        return Err(Error::InvalidParameter(
            "alarm_rate must lie in (0, 0.5)".into(),
        ));
    }
    if !(cfg.min_bandwidth >= 0.0 && cfg.min_bandwidth.is_finite()) {
        return Err(Error::InvalidParameter(
            "min_bandwidth must be finite and non-negative".into(),
        ));
    }
    if train.dim() != tree.n_features() {
        return Err(Error::DimensionMismatch {
            expected: tree.n_features(),
            actual: train.dim(),
        });
    }
    let ranges = train.feature_ranges();
    let boxes = tree.leaf_boxes();
    let mut widths = Vec::with_capacity(boxes.len());
    for leaf in tree.leaves() {
        let bx = &boxes[leaf.leaf_id];
        if let Some(&i) = leaf.samples.iter().find(|&&i| i >= train.len()) {
            return Err(Error::InvalidParameter(format!(
                "leaf {} refers to training row {i} outside the dataset",
                leaf.leaf_id
            )));
        }
        let bounded_sides = bx
            .iter()
            .map(|(lo, hi)| usize::from(lo.is_finite()) + usize::from(hi.is_finite()))
            .sum::<usize>();
        if leaf.samples.is_empty() {
            log::warn!(
                "leaf {} has no training samples; its margins are empty",
                leaf.leaf_id
            );
            widths.push(vec![(0.0, 0.0); bx.len()]);
            continue;
        }
        let q = match cfg.split {
            AlarmSplit::PerSide => cfg.alarm_rate,
            AlarmSplit::PerLeaf => cfg.alarm_rate / bounded_sides.max(1) as f64,
        };
        let mut leaf_widths = Vec::with_capacity(bx.len());
        for (f, &(lo, hi)) in bx.iter().enumerate() {
            let (rlo, rhi) = ranges[f];
            let a = if lo.is_finite() { lo } else { rlo.min(hi) };
            let b = if hi.is_finite() { hi } else { rhi.max(lo) };
            let values: Vec<f64> = leaf.samples.iter().map(|&i| train.rows()[i][f]).collect();
            let kde = (values.len() >= MIN_KDE_SAMPLES)
                .then(|| {
                    let floor = (cfg.min_bandwidth * (rhi - rlo)).max(1e-6 * (b - a));
                    Kde::fit(&values, floor.max(f64::MIN_POSITIVE))
                })
                .flatten();
            let side = |finite: bool, from_high: bool| -> f64 {
                if !finite || !(b > a) {
                    return 0.0;
                }
                match &kde {
                    Some(k) => k.stripe_width(a, b, q, from_high),
                    None => (cfg.fallback_scale * q).min(1.0) * (b - a),
                }
            };
            leaf_widths.push((side(lo.is_finite(), false), side(hi.is_finite(), true)));
        }
        widths.push(leaf_widths);
    }
    Ok(SecurityMargin {
        alarm_rate: cfg.alarm_rate,
        boxes,
        widths,
    })
}

impl SecurityMargin {
    pub fn n_leaves(&self) -> usize {
        self.widths.len()
    }

    pub fn widths(&self, leaf_id: usize) -> &[(f64, f64)] {
        &self.widths[leaf_id]
    }

    /// Whether `q`, which the tree routes to `leaf_id`, lies in one of that
    /// leaf's stripes.
    pub fn contains(&self, leaf_id: usize, q: &[f64]) -> bool {
        self.boxes[leaf_id]
            .iter()
            .zip(&self.widths[leaf_id])
            .zip(q)
            .any(|((&(lo, hi), &(wl, wh)), &v)| {
                (wl > 0.0 && v > lo && v <= lo + wl) || (wh > 0.0 && v <= hi && v >= hi - wh)
            })
    }

    pub fn stripes(&self) -> Vec<Stripe> {
        let mut out = Vec::new();
        for (leaf_id, (bx, ws)) in self.boxes.iter().zip(&self.widths).enumerate() {
            for (feature, (&(lo, hi), &(wl, wh))) in bx.iter().zip(ws).enumerate() {
                for (high_side, boundary, width) in [(false, lo, wl), (true, hi, wh)] {
                    if boundary.is_finite() {
                        out.push(Stripe {
                            leaf_id,
                            feature,
                            high_side,
                            boundary,
                            width,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["leaf_id", "feature", "side", "boundary", "width"])?;
        for s in self.stripes() {
            w.write_record([
                s.leaf_id.to_string(),
                s.feature.to_string(),
                if s.high_side { "high" } else { "low" }.to_string(),
                s.boundary.to_string(),
                s.width.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reaction {
    Block,
    RandomResponse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhiAverage {
    /// Mean over leaves that have received at least `min_leaf_queries`.
    VisitedLeaves,
    /// Mean over all leaves; unvisited leaves count as zero.
    AllLeaves,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonitorConfig {
    pub tau: f64,
    pub reaction: Reaction,
    pub average: PhiAverage,
    /// Answered queries required before the alarm may fire.
    pub warmup: u64,
    /// Queries a leaf needs before its ratio enters `phi`.
    pub min_leaf_queries: u64,
    pub rng: RngConfig,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            tau: 0.3,
            reaction: Reaction::Block,
            average: PhiAverage::VisitedLeaves,
            warmup: 0,
            min_leaf_queries: 15,
            rng: RngConfig::new(0, crate::rng::streams::MARGIN),
        }
    }
}

/// Per-deployment counters of the margin monitor.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginState {
    pub cfg: MonitorConfig,
    totals: Vec<u64>,
    margin_hits: Vec<u64>,
    answered: u64,
    /// Answered-query count at which the alarm fired.
    flagged_at: Option<u64>,
    max_phi: f64,
}

impl MarginState {
    pub fn new(n_leaves: usize, cfg: MonitorConfig) -> Self {
        MarginState {
            cfg,
            totals: vec![0; n_leaves],
            margin_hits: vec![0; n_leaves],
            answered: 0,
            flagged_at: None,
            max_phi: 0.0,
        }
    }

    pub fn totals(&self) -> &[u64] {
        &self.totals
    }

    pub fn margin_hits(&self) -> &[u64] {
        &self.margin_hits
    }

    pub fn answered(&self) -> u64 {
        self.answered
    }

    pub fn flagged_at(&self) -> Option<u64> {
        self.flagged_at
    }

    pub fn is_flagged(&self) -> bool {
        self.flagged_at.is_some()
    }

    /// Whether further queries are refused.
    pub fn is_blocked(&self) -> bool {
        self.is_flagged() && self.cfg.reaction == Reaction::Block
    }

    /// Largest `phi` seen after any answered query.
    pub fn max_phi(&self) -> f64 {
        self.max_phi
    }

    pub fn phi(&self) -> f64 {
        phi_of(
            &self.totals,
            &self.margin_hits,
            self.cfg.average,
            self.cfg.min_leaf_queries,
        )
    }

    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "answered={}", self.answered);
        let _ = writeln!(out, "phi={}", self.phi());
        let _ = writeln!(out, "max_phi={}", self.max_phi);
        let _ = writeln!(out, "flagged={}", self.is_flagged());
        let _ = writeln!(out, "blocked={}", self.is_blocked());
        if let Some(at) = self.flagged_at {
            let _ = writeln!(out, "flagged_at={at}");
        }
        for (leaf, (t, m)) in self.totals.iter().zip(&self.margin_hits).enumerate() {
            let _ = writeln!(out, "leaf.{leaf}={m}/{t}");
        }
        out
    }
}

/// Mean margin ratio from raw per-leaf counters over leaves with at least
/// `min_queries` queries (or over all leaves); 0 without queries.
pub fn phi_of(totals: &[u64], margin_hits: &[u64], average: PhiAverage, min_queries: u64) -> f64 {
    let mut sum = 0.0;
    let mut visited = 0usize;
    for (&t, &m) in totals.iter().zip(margin_hits) {
        if t > 0 && t >= min_queries {
            sum += m as f64 / t as f64;
            visited += 1;
        }
    }
    let denom = match average {
        PhiAverage::VisitedLeaves => visited,
        PhiAverage::AllLeaves => totals.len(),
    };
    if denom == 0 {
        0.0
    } else {
        sum / denom as f64
    }
}

/// Answers `q` through the monitor. `index` keys the random responses.
pub fn stateful_predict(
    q: &Signal,
    tree: &DecisionTree,
    margins: &SecurityMargin,
    state: &mut MarginState,
    index: u64,
) -> Result<LeafResponse> {
    if state.is_blocked() {
        return Err(Error::Blocked);
    }
    let truth = tree.predict(q)?;
    let leaf = truth.leaf_id;
    state.totals[leaf] += 1;
    if margins.contains(leaf, q.as_slice()) {
        state.margin_hits[leaf] += 1;
    }
    state.answered += 1;
    let phi = state.phi();
    state.max_phi = state.max_phi.max(phi);
    if state.flagged_at.is_none() && state.answered >= state.cfg.warmup && phi > state.cfg.tau {
        state.flagged_at = Some(state.answered);
    }
    if state.is_flagged() && state.cfg.reaction == Reaction::RandomResponse {
        let key = state.cfg.rng.keyed_u64(index);
        let label = (key % tree.n_classes() as u64) as usize;
        let fake = ((key >> 32) % tree.n_leaves() as u64) as usize;
        let confidence = tree.leaf(fake).map_or(1.0, |l| l.confidence);
        return Ok(LeafResponse {
            label,
            leaf_id: fake,
            confidence,
        });
    }
    Ok(truth)
}

/// A tree deployment guarded by security margins.
#[derive(Clone, Debug)]
pub struct StatefulTree {
    pub tree: DecisionTree,
    pub margins: SecurityMargin,
    pub state: MarginState,
}

impl StatefulTree {
    pub fn new(tree: DecisionTree, margins: SecurityMargin, cfg: MonitorConfig) -> Self {
        let state = MarginState::new(tree.n_leaves(), cfg);
        StatefulTree {
            tree,
            margins,
            state,
        }
    }
}

impl Oracle for StatefulTree {
    type Answer = LeafResponse;

    fn answer(&mut self, query: &Signal, ctx: QueryContext) -> Result<LeafResponse> {
        stateful_predict(query, &self.tree, &self.margins, &mut self.state, ctx.index)
    }
}

/// The undefended tree as an oracle.
#[derive(Clone, Debug)]
pub struct PlainTree(pub DecisionTree);

impl Oracle for PlainTree {
    type Answer = LeafResponse;

    fn answer(&mut self, query: &Signal, _ctx: QueryContext) -> Result<LeafResponse> {
        self.0.predict(query)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::iris;
    use crate::dtree::{train_tree, TreeParams};
    use crate::oracle::{Mode, OracleSession, QueryPhase};
    use proptest::prelude::*;
    use rand::Rng;

    fn one_d(values: &[f64], labels: &[usize]) -> LabeledDataset {
        LabeledDataset::new(
            values
                .iter()
                .map(|&v| Signal::new(vec![v]).unwrap())
                .collect(),
            labels.to_vec(),
            vec!["a".into(), "b".into()],
            vec!["x".into()],
        )
        .unwrap()
    }

    #[test]
    fn uniform_data_stripe_matches_uniform_quantile() {
        // Many evenly spaced samples on [0, 10]: the truncated KDE is close
        // to uniform, whose q-quantile distance from either end is q * 10.
        let samples: Vec<f64> = (0..2000)
            .map(|i| 10.0 * (i as f64 + 0.5) / 2000.0)
            .collect();
        let kde = Kde::fit(&samples, 1e-9).unwrap();
        for q in [0.02, 0.05, 0.1] {
            let low = kde.stripe_width(0.0, 10.0, q, false);
            let high = kde.stripe_width(0.0, 10.0, q, true);
            // Boundary smoothing loses up to half a bandwidth of mass.
            let tol = 0.5 * kde.bandwidth() + 10.0 / 511.0;
            assert!((low - 10.0 * q).abs() < tol, "{low} vs {}", 10.0 * q);
            assert!((high - 10.0 * q).abs() < tol, "{high}");
        }
    }

    #[test]
    fn hugging_samples_give_narrower_stripe() {
        let near: Vec<f64> = (0..50).map(|i| 9.0 + i as f64 / 50.0).collect();
        let far: Vec<f64> = (0..50).map(|i| 1.0 + i as f64 / 50.0).collect();
        let wn = Kde::fit(&near, 1e-9)
            .unwrap()
            .stripe_width(0.0, 10.0, 0.05, true);
        let wf = Kde::fit(&far, 1e-9)
            .unwrap()
            .stripe_width(0.0, 10.0, 0.05, true);
        assert!(wn < wf, "{wn} vs {wf}");
    }

    #[test]
    fn stripe_width_vanishes_with_alarm_rate() {
        let samples = [1.0, 2.0, 2.5, 3.0, 7.0];
        let kde = Kde::fit(&samples, 1e-9).unwrap();
        let mut last = f64::INFINITY;
        for q in [0.1, 0.01, 1e-3, 1e-5, 1e-8] {
            let w = kde.stripe_width(0.0, 10.0, q, false);
            assert!(w <= last);
            last = w;
        }
        assert!(last < 0.05);
        assert_eq!(kde.stripe_width(0.0, 10.0, 0.0, false), 0.0);
    }

    fn iris_guard(cfg: MonitorConfig) -> (DecisionTree, SecurityMargin, StatefulTree) {
        let ds = iris();
        let tree = train_tree(&ds, TreeParams::default()).unwrap();
        let margins = build_margins(&tree, &ds, &MarginConfig::default()).unwrap();
        let guarded = StatefulTree::new(tree.clone(), margins.clone(), cfg);
        (tree, margins, guarded)
    }

    #[test]
    fn stripes_lie_inside_boxes_and_unbounded_sides_are_empty() {
        let (tree, margins, _) = iris_guard(MonitorConfig::default());
        let boxes = tree.leaf_boxes();
        for leaf in 0..tree.n_leaves() {
            for (&(lo, hi), &(wl, wh)) in boxes[leaf].iter().zip(margins.widths(leaf)) {
                assert!(wl >= 0.0 && wh >= 0.0);
                if !lo.is_finite() {
                    assert_eq!(wl, 0.0);
                }
                if !hi.is_finite() {
                    assert_eq!(wh, 0.0);
                }
                if lo.is_finite() && hi.is_finite() {
                    assert!(wl <= hi - lo && wh <= hi - lo);
                }
            }
        }
        assert!(margins.stripes().iter().any(|s| s.width > 0.0));
    }

    #[test]
    fn alarm_rate_must_be_in_range() {
        let ds = iris();
        let tree = train_tree(&ds, TreeParams::default()).unwrap();
        for rate in [0.0, 0.5, -1.0] {
            let cfg = MarginConfig {
                alarm_rate: rate,
                ..MarginConfig::default()
            };
            assert!(build_margins(&tree, &ds, &cfg).is_err());
        }
    }

    #[test]
    fn small_leaves_fall_back_to_box_fraction() {
        let ds = one_d(&[0.0, 1.0, 10.0, 10.5], &[0, 0, 1, 1]);
        let tree = train_tree(
            &ds,
            TreeParams {
                min_samples_leaf: 1,
                max_depth: None,
            },
        )
        .unwrap();
        let m = build_margins(&tree, &ds, &MarginConfig::default()).unwrap();
        // Split at 5.5; the left leaf spans [0, 5.5] of the training range.
        assert!((m.widths(0)[0].1 - 0.05 * 5.5).abs() < 1e-12);
        assert!((m.widths(1)[0].0 - 0.05 * 5.0).abs() < 1e-12);
    }

    #[test]
    fn dead_center_query_keeps_phi_zero() {
        let ds = one_d(&(0..100).map(|i| i as f64).collect::<Vec<_>>(), &[0; 100]);
        let tree = train_tree(&ds, TreeParams::default()).unwrap();
        let m = build_margins(&tree, &ds, &MarginConfig::default()).unwrap();
        let mut state = MarginState::new(1, MonitorConfig::default());
        stateful_predict(&Signal::new(vec![50.0]).unwrap(), &tree, &m, &mut state, 0).unwrap();
        assert_eq!(state.phi(), 0.0);
    }

    #[test]
    fn phi_arithmetic() {
        assert_eq!(phi_of(&[0, 0], &[0, 0], PhiAverage::VisitedLeaves, 1), 0.0);
        assert_eq!(phi_of(&[4, 4], &[2, 0], PhiAverage::VisitedLeaves, 1), 0.25);
        assert_eq!(phi_of(&[3, 5], &[3, 5], PhiAverage::VisitedLeaves, 1), 1.0);
        assert_eq!(
            phi_of(&[4, 0, 0, 0], &[2, 0, 0, 0], PhiAverage::VisitedLeaves, 1),
            0.5
        );
        assert_eq!(
            phi_of(&[4, 0, 0, 0], &[2, 0, 0, 0], PhiAverage::AllLeaves, 1),
            0.125
        );
    }

    fn margin_point(tree: &DecisionTree, m: &SecurityMargin) -> Vec<f64> {
        let s = m.stripes().into_iter().find(|s| s.width > 0.0).unwrap();
        let leaf = tree.leaf(s.leaf_id).unwrap();
        let mut q = iris().rows()[leaf.samples[0]].as_slice().to_vec();
        q[s.feature] = if s.high_side {
            s.boundary - 0.5 * s.width
        } else {
            s.boundary + 0.5 * s.width
        };
        assert_eq!(tree.predict_slice(&q).unwrap().leaf_id, s.leaf_id);
        q
    }

    fn eager() -> MonitorConfig {
        MonitorConfig {
            min_leaf_queries: 1,
            ..MonitorConfig::default()
        }
    }

    #[test]
    fn block_reaction_refuses_after_trigger() {
        let (tree, m, guarded) = iris_guard(eager());
        let q = Signal::new(margin_point(&tree, &m)).unwrap();
        let mut s = OracleSession::open(guarded, Mode::Binary, true);
        // First query lands in a margin: phi = 1 > tau, answered truthfully.
        assert_eq!(s.query(&q).unwrap(), tree.predict(&q).unwrap());
        assert!(matches!(s.query(&q), Err(Error::Blocked)));
        assert_eq!(s.query_count(), 2);
        let state = &s.oracle().state;
        assert_eq!(state.totals().iter().sum::<u64>(), 1);
        assert_eq!(state.flagged_at(), Some(1));
    }

    #[test]
    fn warmup_delays_alarm() {
        let cfg = MonitorConfig {
            warmup: 3,
            ..eager()
        };
        let (tree, m, guarded) = iris_guard(cfg);
        let q = Signal::new(margin_point(&tree, &m)).unwrap();
        let mut s = OracleSession::open(guarded, Mode::Binary, false);
        s.query(&q).unwrap();
        s.query(&q).unwrap();
        assert!(!s.oracle().state.is_flagged());
        s.query(&q).unwrap();
        assert_eq!(s.oracle().state.flagged_at(), Some(3));
    }

    #[test]
    fn random_response_is_keyed_and_in_range() {
        let cfg = MonitorConfig {
            reaction: Reaction::RandomResponse,
            ..eager()
        };
        let (tree, m, guarded) = iris_guard(cfg);
        let q = Signal::new(margin_point(&tree, &m)).unwrap();
        let mut a = guarded.clone();
        let mut b = guarded;
        let mut labels = std::collections::BTreeSet::new();
        for i in 0..200 {
            let ctx = QueryContext {
                index: i,
                phase: QueryPhase::Unspecified,
            };
            let ra = a.answer(&q, ctx).unwrap();
            assert_eq!(ra, b.answer(&q, ctx).unwrap());
            assert!(ra.label < tree.n_classes() && ra.leaf_id < tree.n_leaves());
            assert_eq!(ra.confidence, tree.leaf(ra.leaf_id).unwrap().confidence);
            labels.insert(ra.label);
        }
        assert_eq!(labels.len(), tree.n_classes());
    }

    #[test]
    fn margin_dump_has_bounded_sides_only() {
        let (tree, m, _) = iris_guard(MonitorConfig::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("margins.csv");
        m.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let finite_sides: usize = tree
            .leaf_boxes()
            .iter()
            .flatten()
            .map(|(lo, hi)| usize::from(lo.is_finite()) + usize::from(hi.is_finite()))
            .sum();
        assert_eq!(text.lines().count(), 1 + finite_sides);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        /// Until the alarm fires, answers are those of the bare tree, and
        /// the counters agree with a recount from the query stream.
        #[test]
        fn transparent_until_flagged(seed in 0u64..1000, n in 1usize..200) {
            let (tree, m, mut guarded) = iris_guard(MonitorConfig::default());
            let ranges = iris().feature_ranges().to_vec();
            let mut rng = RngConfig::new(seed, 0).rng();
            let mut totals = vec![0u64; tree.n_leaves()];
            let mut hits = vec![0u64; tree.n_leaves()];
            for i in 0..n {
                let q: Vec<f64> = ranges.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect();
                let q = Signal::new(q).unwrap();
                let flagged_before = guarded.state.is_flagged();
                let ctx = QueryContext { index: i as u64, phase: QueryPhase::Benign };
                match guarded.answer(&q, ctx) {
                    Ok(r) => {
                        let truth = tree.predict(&q).unwrap();
                        if !flagged_before {
                            prop_assert_eq!(r, truth);
                        }
                        totals[truth.leaf_id] += 1;
                        hits[truth.leaf_id] += u64::from(m.contains(truth.leaf_id, q.as_slice()));
                    }
                    Err(Error::Blocked) => prop_assert!(flagged_before),
                    Err(e) => return Err(TestCaseError::fail(e.to_string())),
                }
                let st = &guarded.state;
                prop_assert_eq!(st.totals(), &totals[..]);
                prop_assert_eq!(st.margin_hits(), &hits[..]);
                prop_assert!(st.margin_hits().iter().zip(st.totals()).all(|(m, t)| m <= t));
                let phi = st.phi();
                prop_assert!((0.0..=1.0).contains(&phi));
            }
        }
    }
}
