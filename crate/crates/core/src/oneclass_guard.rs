//! The 1.5-class watermark detector.
//!
//! A kNN one-class model built from plausible distortions of the marked
//! image gates the linear detector: queries far from every plausible
//! variation get a coin flip or a refusal instead of the true decision.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::image::PEAK;
use crate::oracle::{Mode, Oracle, OracleSession, QueryContext, QueryPhase};
use crate::oracle_attack::{bnsa, AttackConfig, AttackResult, StartStrategy};
use crate::rng::RngConfig;
use crate::signal::{check_dims, psnr, squared_distance, Signal};
use crate::watermark::{detect, embed, LinearDetector, Watermark};

const JPEG_BLOCK: usize = 8;

/// One plausible image processing step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Distortion {
    /// The marked image itself.
    Identity,
    /// Additive i.i.d. noise uniform in `[-amplitude, amplitude]`.
    Noise {
        amplitude: f64,
    },
    /// Box filter with an odd window, edges replicated.
    MeanFilter {
        window: usize,
    },
    /// Residuals around each 8×8 block mean quantized with `step`.
    JpegProxy {
        step: f64,
    },
    /// `μ + scale·(p − μ)` with `μ` the image mean.
    Contrast {
        scale: f64,
    },
    Brightness {
        offset: f64,
    },
}

impl Distortion {
    pub fn kind(&self) -> &'static str {
        match self {
            Distortion::Identity => "identity",
            Distortion::Noise { .. } => "noise",
            Distortion::MeanFilter { .. } => "mean_filter",
            Distortion::JpegProxy { .. } => "jpeg",
            Distortion::Contrast { .. } => "contrast",
            Distortion::Brightness { .. } => "brightness",
        }
    }

    pub fn parameter(&self) -> f64 {
        match *self {
            Distortion::Identity => 0.0,
            Distortion::Noise { amplitude } => amplitude,
            Distortion::MeanFilter { window } => window as f64,
            Distortion::JpegProxy { step } => step,
            Distortion::Contrast { scale } => scale,
            Distortion::Brightness { offset } => offset,
        }
    }

    fn from_kind(kind: &str, value: f64) -> Result<Distortion> {
        let bad = |what: &str| {
            Err(Error::InvalidParameter(format!(
                "{kind}: {what}, got {value}"
            )))
        };
        if !value.is_finite() {
            return bad("parameter must be finite");
        }
        Ok(match kind {
            "noise" if value > 0.0 => Distortion::Noise { amplitude: value },
            "noise" => return bad("amplitude must be positive"),
            "mean_filter" if value >= 1.0 && value.fract() == 0.0 && value as usize % 2 == 1 => {
                Distortion::MeanFilter {
                    window: value as usize,
                }
            }
            "mean_filter" => return bad("window must be an odd positive integer"),
            "jpeg" if value > 0.0 => Distortion::JpegProxy { step: value },
            "jpeg" => return bad("step must be positive"),
            "contrast" if value >= 0.0 => Distortion::Contrast { scale: value },
            "contrast" => return bad("scale must be non-negative"),
            "brightness" => Distortion::Brightness { offset: value },
            other => {
                return Err(Error::Format(format!("unknown distortion kind {other:?}")));
            }
        })
    }

    /// Applies the distortion and clips to `[0, 255]`.
    pub fn apply(
        &self,
        x: &Signal,
        width: usize,
        height: usize,
        rng: &mut impl Rng,
    ) -> Result<Signal> {
        check_dims(width * height, x.dim())?;
        let px = x.as_slice();
        let mut out: Vec<f64> = match *self {
            Distortion::Identity => px.to_vec(),
            Distortion::Noise { amplitude } => px
                .iter()
                .map(|p| p + rng.random_range(-amplitude..=amplitude))
                .collect(),
            Distortion::MeanFilter { window } => mean_filter(px, width, height, window),
            Distortion::JpegProxy { step } => block_quantize(px, width, height, step),
            Distortion::Contrast { scale } => {
                let mean = px.iter().sum::<f64>() / px.len() as f64;
                px.iter().map(|p| p + (scale - 1.0) * (p - mean)).collect()
            }
            Distortion::Brightness { offset } => px.iter().map(|p| p + offset).collect(),
        };
        if *self != Distortion::Identity {
            out.iter_mut().for_each(|p| *p = p.clamp(0.0, PEAK));
        }
        Signal::new(out)
    }
}

impl fmt::Display for Distortion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.kind(), self.parameter())
    }
}

fn mean_filter(px: &[f64], width: usize, height: usize, window: usize) -> Vec<f64> {
    let r = (window / 2) as isize;
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, width as isize - 1) as usize;
        let y = y.clamp(0, height as isize - 1) as usize;
        px[y * width + x]
    };
    let area = (window * window) as f64;
    let mut out = Vec::with_capacity(px.len());
    for y in 0..height as isize {
        for x in 0..width as isize {
            let mut sum = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    sum += at(x + dx, y + dy);
                }
            }
            out.push(sum / area);
        }
    }
    out
}

fn block_quantize(px: &[f64], width: usize, height: usize, step: f64) -> Vec<f64> {
    let mut out = px.to_vec();
    for by in (0..height).step_by(JPEG_BLOCK) {
        for bx in (0..width).step_by(JPEG_BLOCK) {
            let ys = by..(by + JPEG_BLOCK).min(height);
            let xs = bx..(bx + JPEG_BLOCK).min(width);
            let idx: Vec<usize> = ys
                .flat_map(|y| xs.clone().map(move |x| y * width + x))
                .collect();
            let mean = idx.iter().map(|&i| px[i]).sum::<f64>() / idx.len() as f64;
            for i in idx {
                out[i] = mean + step * ((px[i] - mean) / step).round();
            }
        }
    }
    out
}

/// An ordered list of distortions, read from `kind = v1, v2, ...` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct Recipe {
    pub steps: Vec<Distortion>,
}

impl Default for Recipe {
    /// Four levels of each of the five distortion kinds.
    fn default() -> Self {
        Recipe::parse(
            "noise = 4, 8, 12, 16\n\
             mean_filter = 3, 5, 7, 9\n\
             jpeg = 8, 16, 32, 64\n\
             contrast = 0.8, 0.9, 1.1, 1.2\n\
             brightness = -20, -10, 10, 20\n",
        )
        .expect("default recipe parses")
    }
}

impl Recipe {
    /// Blank lines and `#` comments are ignored; kinds may repeat.
    pub fn parse(text: &str) -> Result<Recipe> {
        let mut steps = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (kind, values) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("recipe line {}: expected `kind = values`", n + 1))
            })?;
            let kind = kind.trim();
            for v in values.split(',').map(str::trim).filter(|v| !v.is_empty()) {
                let value: f64 = v.parse().map_err(|_| {
                    Error::Format(format!("recipe line {}: bad number {v:?}", n + 1))
                })?;
                steps.push(Distortion::from_kind(kind, value)?);
            }
        }
        Ok(Recipe { steps })
    }

    pub fn load(path: &Path) -> Result<Recipe> {
        Recipe::parse(&fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut kinds: Vec<&str> = Vec::new();
        for s in &self.steps {
            if !kinds.contains(&s.kind()) {
                kinds.push(s.kind());
            }
        }
        kinds
            .into_iter()
            .filter(|k| *k != "identity")
            .map(|k| {
                let values: Vec<String> = self
                    .steps
                    .iter()
                    .filter(|s| s.kind() == k)
                    .map(|s| s.parameter().to_string())
                    .collect();
                format!("{k} = {}\n", values.join(", "))
            })
            .collect()
    }
}

/// Distorted versions of one marked image, with their provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationSet {
    members: Vec<Signal>,
    provenance: Vec<Distortion>,
}

impl VariationSet {
    pub fn new(members: Vec<Signal>, provenance: Vec<Distortion>) -> Result<Self> {
        if members.len() != provenance.len() {
            return Err(Error::InvalidParameter(
                "provenance must describe every member".into(),
            ));
        }
        if let Some(first) = members.first() {
            for m in &members[1..] {
                check_dims(first.dim(), m.dim())?;
            }
        }
        Ok(VariationSet {
            members,
            provenance,
        })
    }

    pub fn members(&self) -> &[Signal] {
        &self.members
    }

    pub fn provenance(&self) -> &[Distortion] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn push(&mut self, member: Signal, distortion: Distortion) -> Result<()> {
        if let Some(first) = self.members.first() {
            check_dims(first.dim(), member.dim())?;
        }
        self.members.push(member);
        self.provenance.push(distortion);
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> VariationSet {
        VariationSet {
            members: indices.iter().map(|&i| self.members[i].clone()).collect(),
            provenance: indices.iter().map(|&i| self.provenance[i]).collect(),
        }
    }
}

/// Applies every recipe step to `marked`.
pub fn make_variations(
    marked: &Signal,
    width: usize,
    height: usize,
    recipe: &Recipe,
    rng: RngConfig,
) -> Result<VariationSet> {
    check_dims(width * height, marked.dim())?;
    if recipe.steps.is_empty() {
        return Err(Error::InvalidParameter(
            "recipe produces no variations".into(),
        ));
    }
    let mut rng = rng.rng();
    let members = recipe
        .steps
        .iter()
        .map(|d| d.apply(marked, width, height, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    VariationSet::new(members, recipe.steps.clone())
}

/// kNN plausibility model: mean distance to the `k` nearest references.
#[derive(Clone, Debug, PartialEq)]
pub struct OneClassModel {
    pub reference: VariationSet,
    pub k: usize,
    pub delta: f64,
}

impl OneClassModel {
    pub fn new(reference: VariationSet, k: usize, delta: f64) -> Result<Self> {
        if k == 0 || k > reference.len() {
            return Err(Error::InvalidParameter(format!(
                "k must lie in 1..={}, got {k}",
                reference.len()
            )));
        }
        if !(delta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must be positive, got {delta}"
            )));
        }
        Ok(OneClassModel {
            reference,
            k,
            delta,
        })
    }

    /// The variations of `marked` plus `marked` itself.
    pub fn for_marked(
        marked: &Signal,
        variations: &VariationSet,
        k: usize,
        delta: f64,
    ) -> Result<Self> {
        let mut reference = variations.clone();
        reference.push(marked.clone(), Distortion::Identity)?;
        OneClassModel::new(reference, k, delta)
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        OneClassModel::new(self.reference.clone(), self.k, delta)
    }

    pub fn is_plausible(&self, q: &Signal) -> Result<bool> {
        Ok(anomaly_distance(q, self)? < self.delta)
    }
}

/// Mean Euclidean distance from `q` to its `k` nearest reference members.
pub fn anomaly_distance(q: &Signal, model: &OneClassModel) -> Result<f64> {
    let members = model.reference.members();
    let k = model.k;
    if k == 0 || k > members.len() {
        return Err(Error::InvalidParameter("k exceeds the model size".into()));
    }
    let mut d2 = Vec::with_capacity(members.len());
    for m in members {
        check_dims(m.dim(), q.dim())?;
        d2.push(squared_distance(q.as_slice(), m.as_slice()));
    }
    d2.select_nth_unstable_by(k - 1, f64::total_cmp);
    let nearest = &mut d2[..k];
    nearest.sort_by(f64::total_cmp);
    Ok(nearest.iter().map(|d| d.sqrt()).sum::<f64>() / k as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GuardReaction {
    /// Fair coin keyed by the query index.
    RandomDecision,
    /// Refuse this and every later query.
    Block,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuardPolicy {
    pub reaction: GuardReaction,
    pub rng: RngConfig,
}

impl Default for GuardPolicy {
    fn default() -> Self {
        GuardPolicy {
            reaction: GuardReaction::RandomDecision,
            rng: RngConfig::new(0, crate::rng::streams::GUARD),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GuardState {
    pub blocked: bool,
    pub plausible: u64,
    pub implausible: u64,
}

/// The gated decision for query number `index`.
pub fn guarded_detect(
    q: &Signal,
    wm: &Watermark,
    model: &OneClassModel,
    policy: &GuardPolicy,
    state: &mut GuardState,
    index: u64,
) -> Result<bool> {
    if state.blocked {
        return Err(Error::Blocked);
    }
    if anomaly_distance(q, model)? < model.delta {
        state.plausible += 1;
        return detect(q, wm);
    }
    state.implausible += 1;
    match policy.reaction {
        GuardReaction::RandomDecision => Ok(policy.rng.keyed_u64(index) & 1 == 1),
        GuardReaction::Block => {
            state.blocked = true;
            Err(Error::Blocked)
        }
    }
}

/// A deployed 1.5-class detector.
#[derive(Clone, Debug)]
pub struct GuardedDetector {
    pub watermark: Watermark,
    pub model: OneClassModel,
    pub policy: GuardPolicy,
    pub state: GuardState,
}

impl GuardedDetector {
    pub fn new(watermark: Watermark, model: OneClassModel, policy: GuardPolicy) -> Self {
        GuardedDetector {
            watermark,
            model,
            policy,
            state: GuardState::default(),
        }
    }
}

impl Oracle for GuardedDetector {
    type Answer = bool;

    fn answer(&mut self, query: &Signal, ctx: QueryContext) -> Result<bool> {
        guarded_detect(
            query,
            &self.watermark,
            &self.model,
            &self.policy,
            &mut self.state,
            ctx.index,
        )
    }
}

/// Held-out distances: `repetitions` random 75/25 splits of the variations;
/// each held-out member is scored against the known part plus `marked`.
pub fn benign_distances(
    marked: &Signal,
    variations: &VariationSet,
    k: usize,
    repetitions: usize,
    rng: RngConfig,
) -> Result<Vec<f64>> {
    let n = variations.len();
    let known = (n * 3 / 4)
        .max(k.saturating_sub(1))
        .min(n.saturating_sub(1));
    if n < 2 || known + 1 < k {
        return Err(Error::InvalidParameter(
            "too few variations for a held-out split".into(),
        ));
    }
    let mut rng = rng.rng();
    let mut out = Vec::with_capacity(repetitions * (n - known));
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..repetitions {
        order.shuffle(&mut rng);
        let model =
            OneClassModel::for_marked(marked, &variations.subset(&order[..known]), k, f64::MAX)?;
        for &i in &order[known..] {
            out.push(anomaly_distance(&variations.members()[i], &model)?);
        }
    }
    Ok(out)
}

/// The bare detector, recording the anomaly distance of gradient queries.
struct GradientProbe<'a> {
    watermark: &'a Watermark,
    model: &'a OneClassModel,
    distances: Vec<f64>,
}

impl Oracle for GradientProbe<'_> {
    type Answer = bool;

    fn answer(&mut self, query: &Signal, ctx: QueryContext) -> Result<bool> {
        if ctx.phase == QueryPhase::Gradient {
            self.distances.push(anomaly_distance(query, self.model)?);
        }
        detect(query, self.watermark)
    }
}

/// Anomaly distances of the gradient queries BNSA issues around its first
/// boundary point, attacking the undefended detector.
pub fn gradient_phase_distances(
    marked: &Signal,
    wm: &Watermark,
    model: &OneClassModel,
    attack: &AttackConfig,
) -> Result<Vec<f64>> {
    let cfg = AttackConfig {
        max_iterations: 1,
        ..attack.clone()
    };
    let probe = GradientProbe {
        watermark: wm,
        model,
        distances: Vec::new(),
    };
    let mut session = OracleSession::open(probe, Mode::Binary, false);
    bnsa(&mut session, marked, &cfg)?;
    Ok(session.into_oracle().distances)
}

/// Per-image comparison of benign and attack distances.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparationRow {
    pub image: usize,
    pub max_benign: f64,
    pub min_attack: f64,
    pub mean_attack: f64,
    pub attack_queries: usize,
}

impl SeparationRow {
    /// A single threshold puts every benign distance below every attack one.
    pub fn separable(&self) -> bool {
        self.attack_queries > 0 && self.max_benign < self.min_attack
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuardSetup {
    pub width: usize,
    pub height: usize,
    pub recipe: Recipe,
    pub k: usize,
    pub policy: GuardPolicy,
    pub attack: AttackConfig,
    /// Held-out splits per image for the benign distances.
    pub benign_repetitions: usize,
    pub variation_rng: RngConfig,
}

impl GuardSetup {
    pub fn new(width: usize, height: usize) -> Self {
        GuardSetup {
            width,
            height,
            recipe: Recipe::default(),
            k: 3,
            policy: GuardPolicy::default(),
            attack: AttackConfig {
                start: StartStrategy::GrayPrefix,
                ..AttackConfig::default()
            },
            benign_repetitions: 50,
            variation_rng: RngConfig::new(0, crate::rng::streams::VARIATIONS),
        }
    }

    fn model_for(&self, index: usize, marked: &Signal) -> Result<(VariationSet, OneClassModel)> {
        let rng = self.variation_rng.substream(index as u64);
        let variations = make_variations(marked, self.width, self.height, &self.recipe, rng)?;
        let model = OneClassModel::for_marked(marked, &variations, self.k, f64::MAX)?;
        Ok((variations, model))
    }
}

pub fn separation_study(
    images: &[Signal],
    wm: &Watermark,
    setup: &GuardSetup,
) -> Result<Vec<SeparationRow>> {
    let mut rows = Vec::with_capacity(images.len());
    for (i, x) in images.iter().enumerate() {
        let marked = embed(x, wm)?;
        let (variations, model) = setup.model_for(i, &marked)?;
        let benign = benign_distances(
            &marked,
            &variations,
            setup.k,
            setup.benign_repetitions,
            setup.variation_rng.substream(1_000_000 + i as u64),
        )?;
        let attack = gradient_phase_distances(&marked, wm, &model, &setup.attack)?;
        rows.push(SeparationRow {
            image: i,
            max_benign: benign.iter().copied().fold(0.0, f64::max),
            min_attack: attack.iter().copied().fold(f64::INFINITY, f64::min),
            mean_attack: attack.iter().sum::<f64>() / attack.len().max(1) as f64,
            attack_queries: attack.len(),
        });
    }
    Ok(rows)
}

/// Outcome of one attack, scored against the unmarked original.
#[derive(Clone, Debug, PartialEq)]
pub struct GuardOutcome {
    pub removed: bool,
    pub psnr: f64,
    pub queries: u64,
}

/// Aggregates over images for one `delta` (infinite for the bare detector).
#[derive(Clone, Debug, PartialEq)]
pub struct GuardSummary {
    pub delta: f64,
    /// `delta / sqrt(N)`.
    pub delta_per_pixel: f64,
    pub removal_rate: f64,
    pub mean_psnr: f64,
    pub psnr_sd: f64,
    pub mean_queries: f64,
    pub benign_fp_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuardEvaluation {
    pub undefended: GuardSummary,
    pub rows: Vec<GuardSummary>,
}

fn outcome(
    original: &Signal,
    marked: &Signal,
    wm: &Watermark,
    result: Result<AttackResult>,
) -> Result<GuardOutcome> {
    let (signal, queries) = match result {
        Ok(r) => (r.final_signal, r.queries_used),
        Err(Error::Blocked) => (marked.clone(), 0),
        Err(e) => return Err(e),
    };
    Ok(GuardOutcome {
        removed: !detect(&signal, wm)?,
        psnr: psnr(original, &signal, PEAK)?
            .finite()
            .unwrap_or(f64::INFINITY),
        queries,
    })
}

fn summarize(delta: f64, dim: usize, outcomes: &[GuardOutcome], benign: &[f64]) -> GuardSummary {
    let n = outcomes.len().max(1) as f64;
    let mean_psnr = outcomes.iter().map(|o| o.psnr).sum::<f64>() / n;
    let var = outcomes
        .iter()
        .map(|o| (o.psnr - mean_psnr).powi(2))
        .sum::<f64>()
        / n;
    GuardSummary {
        delta,
        delta_per_pixel: delta / (dim as f64).sqrt(),
        removal_rate: outcomes.iter().filter(|o| o.removed).count() as f64 / n,
        mean_psnr,
        psnr_sd: var.sqrt(),
        mean_queries: outcomes.iter().map(|o| o.queries as f64).sum::<f64>() / n,
        benign_fp_rate: benign.iter().filter(|&&d| d >= delta).count() as f64
            / benign.len().max(1) as f64,
    }
}

/// BNSA against the bare detector and against the guard at every `delta`.
pub fn evaluate_guard(
    images: &[Signal],
    wm: &Watermark,
    setup: &GuardSetup,
    deltas: &[f64],
) -> Result<GuardEvaluation> {
    if images.is_empty() || deltas.is_empty() {
        return Err(Error::InvalidParameter(
            "need at least one image and one delta".into(),
        ));
    }
    if let Some(d) = deltas.iter().find(|d| !(**d > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "delta must be positive, got {d}"
        )));
    }
    let mut bare = Vec::with_capacity(images.len());
    let mut guarded = vec![Vec::with_capacity(images.len()); deltas.len()];
    let mut benign = Vec::new();
    for (i, x) in images.iter().enumerate() {
        let marked = embed(x, wm)?;
        let (variations, model) = setup.model_for(i, &marked)?;
        benign.extend(benign_distances(
            &marked,
            &variations,
            setup.k,
            setup.benign_repetitions,
            setup.variation_rng.substream(1_000_000 + i as u64),
        )?);
        let attack = AttackConfig {
            rng: setup.attack.rng.substream(i as u64),
            ..setup.attack.clone()
        };
        let mut s = OracleSession::open(LinearDetector::new(wm.clone()), Mode::Binary, false);
        bare.push(outcome(x, &marked, wm, bnsa(&mut s, &marked, &attack))?);
        for (j, &delta) in deltas.iter().enumerate() {
            let policy = GuardPolicy {
                rng: setup.policy.rng.substream(i as u64),
                ..setup.policy
            };
            let detector = GuardedDetector::new(wm.clone(), model.with_delta(delta)?, policy);
            let mut s = OracleSession::open(detector, Mode::Binary, false);
            guarded[j].push(outcome(x, &marked, wm, bnsa(&mut s, &marked, &attack))?);
        }
    }
    let dim = images[0].dim();
    Ok(GuardEvaluation {
        undefended: summarize(f64::INFINITY, dim, &bare, &benign),
        rows: deltas
            .iter()
            .zip(&guarded)
            .map(|(&d, o)| summarize(d, dim, o, &benign))
            .collect(),
    })
}

impl GuardEvaluation {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "delta",
            "delta_per_pixel",
            "removal_rate",
            "mean_psnr",
            "psnr_sd",
            "mean_queries",
            "benign_fp_rate",
        ])?;
        for r in std::iter::once(&self.undefended).chain(&self.rows) {
            w.write_record([
                r.delta.to_string(),
                r.delta_per_pixel.to_string(),
                r.removal_rate.to_string(),
                r.mean_psnr.to_string(),
                r.psnr_sd.to_string(),
                r.mean_queries.to_string(),
                r.benign_fp_rate.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
