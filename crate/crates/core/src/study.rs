//! Experiment drivers shared by the command-line harness and the test suites.
//!
//! Repetition `r` (or image `i`) under base seed `s` draws from seed `s + r`
//! on the stream owned by that purpose, so any single run can be regenerated
//! alone.

use std::path::Path;

use rand::seq::SliceRandom;

use crate::dataset::{iris, split_dataset, LabeledDataset, StandIn};
use crate::dtree::{train_tree, DecisionTree, TreeParams};
use crate::error::{Error, Result};
use crate::image::{synth_image, ImageKind};
use crate::margin_guard::{
    build_margins, MarginConfig, MonitorConfig, PlainTree, Reaction, SecurityMargin, StatefulTree,
};
use crate::oracle::{Mode, OracleSession, QueryPhase};
use crate::rng::{streams, RngConfig};
use crate::signal::Signal;
use crate::tree_extract::{
    completed_fraction, extract_tree, score_extraction, ExtractedModel, ExtractionConfig,
};
use crate::watermark::{generate_watermark, Watermark};

/// Tree datasets in the order of the result tables.
pub const TREE_DATASETS: [&str; 5] = [
    "iris",
    "carseats",
    "college",
    "orange-juice",
    "wine-quality",
];

/// Seed of the synthetic stand-in datasets.
pub const DATASET_SEED: u64 = 1000;

/// Default side length of synthetic test images.
pub const DESK_SIDE: usize = 32;

/// Per-pixel watermark strength for a `side × side` image.
pub fn desk_strength(side: usize) -> f64 {
    2.5 * 128.0 / side as f64
}

/// `"iris"` is the bundled Iris data; other names select a synthetic stand-in.
pub fn named_dataset(name: &str, seed: u64) -> Result<LabeledDataset> {
    if name == "iris" {
        return Ok(iris());
    }
    let standin = name.strip_suffix("-synthetic").unwrap_or(name);
    StandIn::from_name(standin)
        .map(|s| s.generate(RngConfig::new(seed, streams::DATASET)))
        .ok_or_else(|| Error::InvalidParameter(format!("unknown dataset {name:?}")))
}

/// One repetition: a 50/50 split, the tree grown on the training half and
/// its security margins.
#[derive(Clone, Debug)]
pub struct TreeRep {
    pub rep: u64,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub tree: DecisionTree,
    pub margins: SecurityMargin,
}

/// Cover-query stream for one repetition.
pub fn cover_rng(seed: u64, rep: u64) -> RngConfig {
    RngConfig::new(seed.wrapping_add(rep), streams::COVER)
}

pub fn tree_rep(
    full: &LabeledDataset,
    seed: u64,
    rep: u64,
    margin: &MarginConfig,
) -> Result<TreeRep> {
    let (train, test) = split_dataset(
        full,
        0.5,
        RngConfig::new(seed.wrapping_add(rep), streams::SPLIT),
    )?;
    let tree = train_tree(&train, TreeParams::default())?;
    let margins = build_margins(&tree, &train, margin)?;
    Ok(TreeRep {
        rep,
        train,
        test,
        tree,
        margins,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HonestReplay {
    pub final_phi: f64,
    pub max_phi: f64,
    pub flagged_at: Option<u64>,
    pub queries: u64,
}

/// Sends the test half, in shuffled order, through the monitor.
pub fn honest_replay(r: &TreeRep, monitor: &MonitorConfig, seed: u64) -> Result<HonestReplay> {
    let mut order: Vec<usize> = (0..r.test.len()).collect();
    order.shuffle(&mut RngConfig::new(seed.wrapping_add(r.rep), streams::REPLAY).rng());
    let guarded = StatefulTree::new(r.tree.clone(), r.margins.clone(), monitor.clone());
    let mut session = OracleSession::open(guarded, Mode::Binary, false);
    session.set_phase(QueryPhase::Benign);
    for &i in &order {
        match session.query(&r.test.rows()[i]) {
            Ok(_) | Err(Error::Blocked) => {}
            Err(e) => return Err(e),
        }
    }
    let state = &session.oracle().state;
    Ok(HonestReplay {
        final_phi: state.phi(),
        max_phi: state.max_phi(),
        flagged_at: state.flagged_at(),
        queries: session.query_count(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreeDefense {
    Undefended,
    Margin(Reaction),
}

impl TreeDefense {
    pub fn name(self) -> &'static str {
        match self {
            TreeDefense::Undefended => "none",
            TreeDefense::Margin(Reaction::Block) => "block",
            TreeDefense::Margin(Reaction::RandomResponse) => "random",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExtractionOutcome {
    pub model: ExtractedModel,
    pub p: f64,
    /// Fraction of true leaves whose search completed, box check aside.
    pub completed: f64,
    pub flagged_at: Option<u64>,
    pub final_phi: Option<f64>,
}

/// Runs the (possibly adapted) extraction attack against one repetition.
pub fn run_extraction(
    r: &TreeRep,
    defense: TreeDefense,
    monitor: &MonitorConfig,
    cfg: &ExtractionConfig,
    leaked: Option<&LabeledDataset>,
) -> Result<ExtractionOutcome> {
    let (model, flagged_at, final_phi) = match defense {
        TreeDefense::Undefended => {
            let mut session = OracleSession::open(PlainTree(r.tree.clone()), Mode::Binary, false);
            (extract_tree(&mut session, cfg, leaked)?, None, None)
        }
        TreeDefense::Margin(reaction) => {
            let monitor = MonitorConfig {
                reaction,
                ..monitor.clone()
            };
            let guarded = StatefulTree::new(r.tree.clone(), r.margins.clone(), monitor);
            let mut session = OracleSession::open(guarded, Mode::Binary, false);
            let model = extract_tree(&mut session, cfg, leaked)?;
            let state = &session.oracle().state;
            (model, state.flagged_at(), Some(state.phi()))
        }
    };
    Ok(ExtractionOutcome {
        p: score_extraction(&r.tree, &model, cfg)?,
        completed: completed_fraction(&r.tree, &model),
        model,
        flagged_at,
        final_phi,
    })
}

/// The first `round(fraction · n)` training rows of a per-repetition
/// permutation; larger fractions extend smaller ones.
pub fn leaked_rows(
    train: &LabeledDataset,
    fraction: f64,
    seed: u64,
    rep: u64,
) -> Result<LabeledDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "leaked fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let mut perm: Vec<usize> = (0..train.len()).collect();
    perm.shuffle(&mut RngConfig::new(seed.wrapping_add(rep), streams::LEAK).rng());
    let k = ((fraction * train.len() as f64).round() as usize).clamp(1, train.len());
    train.subset(&perm[..k])
}

/// Cells of a (ratio × fraction) grid of mean p that break monotonicity.
///
/// `grid[r][f]` holds the mean p for the `r`-th cover ratio and `f`-th
/// leaked fraction, both ascending. Column `f` is a violation when p drops
/// along the ratios within it or against column `f - 1` for some ratio.
pub fn order_violations(grid: &[Vec<f64>]) -> Vec<usize> {
    let columns = grid.first().map_or(0, Vec::len);
    (0..columns)
        .filter(|&f| {
            let by_ratio = grid.windows(2).any(|w| w[1][f] < w[0][f]);
            let by_fraction = f > 0 && grid.iter().any(|row| row[f] < row[f - 1]);
            by_ratio || by_fraction
        })
        .collect()
}

/// Synthetic test images cycling through the three image kinds.
pub fn desk_images(count: usize, side: usize, seed: u64) -> Result<Vec<Signal>> {
    let kinds = [
        ImageKind::Gradient,
        ImageKind::TextureNoise,
        ImageKind::Blobs,
    ];
    (0..count)
        .map(|i| {
            let rng = RngConfig::new(seed.wrapping_add(i as u64), streams::IMAGES);
            Ok(synth_image(side, side, kinds[i % kinds.len()], rng)?.pixels)
        })
        .collect()
}

pub fn desk_watermark(side: usize, seed: u64) -> Result<Watermark> {
    generate_watermark(
        side * side,
        desk_strength(side),
        RngConfig::new(seed, streams::WATERMARK),
    )
}

/// One line of a results CSV. Fields that do not apply stay empty.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    /// Dataset name or image index.
    pub subject: String,
    pub rep: u64,
    pub defense: String,
    pub reaction: String,
    pub cover_ratio: Option<usize>,
    pub cover_source: String,
    pub leaked_fraction: Option<f64>,
    pub delta: Option<f64>,
    pub queries: Option<u64>,
    pub p: Option<f64>,
    pub phi_final: Option<f64>,
    pub psnr: Option<f64>,
    pub removed: Option<bool>,
    pub terminated_by: String,
    pub flagged_at: Option<u64>,
    /// Leaves of the attacked tree.
    pub leaves: Option<usize>,
}

pub const RESULT_COLUMNS: [&str; 17] = [
    "experiment",
    "subject",
    "rep",
    "defense",
    "reaction",
    "cover_ratio",
    "cover_source",
    "leaked_fraction",
    "delta",
    "queries",
    "p",
    "phi_final",
    "psnr",
    "removed",
    "terminated_by",
    "flagged_at",
    "leaves",
];

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

impl ResultRow {
    pub fn fields(&self) -> [String; 17] {
        [
            self.experiment.clone(),
            self.subject.clone(),
            self.rep.to_string(),
            self.defense.clone(),
            self.reaction.clone(),
            opt(&self.cover_ratio),
            self.cover_source.clone(),
            opt(&self.leaked_fraction),
            opt(&self.delta),
            opt(&self.queries),
            opt(&self.p),
            opt(&self.phi_final),
            opt(&self.psnr),
            opt(&self.removed),
            self.terminated_by.clone(),
            opt(&self.flagged_at),
            opt(&self.leaves),
        ]
    }

    pub fn from_fields(f: &csv::StringRecord) -> Result<ResultRow> {
        if f.len() != RESULT_COLUMNS.len() {
            return Err(Error::Format(format!(
                "result row has {} fields, expected {}",
                f.len(),
                RESULT_COLUMNS.len()
            )));
        }
        fn parse<T: std::str::FromStr>(s: &str) -> Result<Option<T>> {
            if s.is_empty() {
                return Ok(None);
            }
            s.parse()
                .map(Some)
                .map_err(|_| Error::Format(format!("bad result field {s:?}")))
        }
        Ok(ResultRow {
            experiment: f[0].to_owned(),
            subject: f[1].to_owned(),
            rep: parse(&f[2])?.unwrap_or(0),
            defense: f[3].to_owned(),
            reaction: f[4].to_owned(),
            cover_ratio: parse(&f[5])?,
            cover_source: f[6].to_owned(),
            leaked_fraction: parse(&f[7])?,
            delta: parse(&f[8])?,
            queries: parse(&f[9])?,
            p: parse(&f[10])?,
            phi_final: parse(&f[11])?,
            psnr: parse(&f[12])?,
            removed: parse(&f[13])?,
            terminated_by: f[14].to_owned(),
            flagged_at: parse(&f[15])?,
            leaves: parse(&f[16])?,
        })
    }
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RESULT_COLUMNS)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    if header.iter().ne(RESULT_COLUMNS) {
        return Err(Error::Format(format!(
            "{}: not a results file",
            path.display()
        )));
    }
    reader
        .records()
        .map(|r| ResultRow::from_fields(&r?))
        .collect()
}
