mod manifest;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use oraclelab::dataset::{load_csv_dataset, LabeledDataset};
use oraclelab::image::{synth_image, GrayImage, ImageKind, PEAK};
use oraclelab::margin_guard::{MarginConfig, MonitorConfig, Reaction};
use oraclelab::oneclass_guard::{
    evaluate_guard, make_variations, separation_study, GuardPolicy, GuardReaction, GuardSetup,
    GuardedDetector, OneClassModel, Recipe,
};
use oraclelab::oracle::{Mode, OracleSession};
use oraclelab::oracle_attack::{bnsa, write_trace_csv, AttackConfig, StartStrategy};
use oraclelab::rng::streams;
use oraclelab::study::{
    cover_rng, desk_images, desk_strength, honest_replay, leaked_rows, named_dataset,
    run_extraction, tree_rep, write_results, ResultRow, TreeDefense, DATASET_SEED,
};
use oraclelab::tree_extract::{CoverSource, ExtractionConfig};
use oraclelab::watermark::{
    correlate, detect, embed, generate_watermark, LinearDetector, Watermark,
};
use oraclelab::{psnr, RngConfig};

#[derive(Parser, Debug)]
#[command(
    name = "oraclelab",
    version,
    about = "Oracle attacks and stateful defenses for watermark detectors and decision trees"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Embed a watermark into a PGM image (or a synthetic one).
    WmEmbed(WmEmbed),
    /// Run the correlation detector on a PGM image.
    WmDetect(WmDetect),
    /// Remove a watermark with the blind Newton sensitivity attack.
    WmAttack(WmAttack),
    /// Sweep the 1.5-class guard's plausibility threshold over synthetic images.
    WmGuardEval(WmGuardEval),
    /// Train decision trees and their security margins, one per repetition.
    TreeTrain(TreeTrain),
    /// Extract undefended decision trees through their prediction API.
    TreeExtract(TreeExtract),
    /// Evaluate the security-margin defense against honest and attack traffic.
    TreeDefendEval(TreeDefendEval),
    /// Aggregate every results.csv below a directory.
    Report(Report),
}

#[derive(Args, Debug)]
struct Output {
    /// Directory for results and the manifest; created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct DataSource {
    /// Bundled dataset: iris, or a synthetic stand-in (carseats, college,
    /// orange-juice, wine-quality).
    #[arg(long, conflicts_with = "csv", required_unless_present = "csv")]
    dataset: Option<String>,
    /// CSV file with a header row.
    #[arg(long, requires = "label")]
    csv: Option<PathBuf>,
    /// Class column of --csv.
    #[arg(long)]
    label: Option<String>,
    /// Columns of --csv to one-hot encode.
    #[arg(long, value_delimiter = ',')]
    categorical: Vec<String>,
    /// Seed of the synthetic stand-ins.
    #[arg(long, default_value_t = DATASET_SEED)]
    dataset_seed: u64,
}

impl DataSource {
    fn load(&self) -> Result<(String, LabeledDataset)> {
        match (&self.dataset, &self.csv) {
            (Some(name), None) => Ok((name.clone(), named_dataset(name, self.dataset_seed)?)),
            (None, Some(path)) => {
                let label = self.label.as_deref().unwrap_or_default();
                let cats: Vec<&str> = self.categorical.iter().map(String::as_str).collect();
                let ds = load_csv_dataset(path, label, &cats)?;
                let name = path
                    .file_stem()
                    .map_or("csv".into(), |s| s.to_string_lossy().into_owned());
                Ok((name, ds))
            }
            _ => bail!("give either --dataset or --csv"),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Gradient,
    TextureNoise,
    Blobs,
}

impl From<Kind> for ImageKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Gradient => ImageKind::Gradient,
            Kind::TextureNoise => ImageKind::TextureNoise,
            Kind::Blobs => ImageKind::Blobs,
        }
    }
}

#[derive(Args, Debug)]
struct WmEmbed {
    #[command(flatten)]
    output: Output,
    /// Cover image (binary PGM).
    #[arg(long, conflicts_with = "synth", required_unless_present = "synth")]
    image: Option<PathBuf>,
    /// Generate the cover image instead.
    #[arg(long, value_enum)]
    synth: Option<Kind>,
    /// Side length of a synthetic image.
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Reuse an existing watermark sidecar instead of generating one.
    #[arg(long, conflicts_with = "strength")]
    watermark: Option<PathBuf>,
    /// Per-pixel strength of a generated watermark [default: 320/sqrt(pixels)].
    #[arg(long)]
    strength: Option<f64>,
}

#[derive(Args, Debug)]
struct WmDetect {
    #[command(flatten)]
    output: Output,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    watermark: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Start {
    Random,
    Gray,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GuardMode {
    Random,
    Block,
}

impl From<GuardMode> for GuardReaction {
    fn from(m: GuardMode) -> Self {
        match m {
            GuardMode::Random => GuardReaction::RandomDecision,
            GuardMode::Block => GuardReaction::Block,
        }
    }
}

#[derive(Args, Debug)]
struct WmAttack {
    #[command(flatten)]
    output: Output,
    /// Marked image (binary PGM).
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    watermark: PathBuf,
    /// Unmarked original for PSNR; without it PSNR is against --image.
    #[arg(long)]
    original: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Start::Random)]
    start: Start,
    #[arg(long, default_value_t = 10)]
    max_iterations: usize,
    /// Attack the 1.5-class guard with this plausibility threshold.
    #[arg(long)]
    guard_delta: Option<f64>,
    #[arg(long, value_enum, default_value_t = GuardMode::Random)]
    guard_reaction: GuardMode,
    /// Neighbours in the guard's anomaly distance.
    #[arg(long, default_value_t = 3)]
    k: usize,
}

#[derive(Args, Debug)]
struct WmGuardEval {
    #[command(flatten)]
    output: Output,
    #[arg(long, default_value_t = 20)]
    images: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Plausibility thresholds to sweep.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "400,800,1600,3200,100000"
    )]
    deltas: Vec<f64>,
    /// Per-pixel watermark strength [default: 320/size].
    #[arg(long)]
    strength: Option<f64>,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, value_enum, default_value_t = GuardMode::Random)]
    reaction: GuardMode,
    /// Held-out splits per image for the benign distance distribution.
    #[arg(long, default_value_t = 50)]
    benign_reps: usize,
    /// Distortion recipe file; the built-in recipe otherwise.
    #[arg(long)]
    recipe: Option<PathBuf>,
    /// Also write separation.csv (benign vs gradient-phase distances).
    #[arg(long)]
    separation: bool,
}

#[derive(Args, Debug)]
struct TreeTrain {
    #[command(flatten)]
    output: Output,
    #[command(flatten)]
    data: DataSource,
    #[arg(long, default_value_t = 5)]
    repetitions: u64,
    #[arg(long, default_value_t = 0.05)]
    alarm_rate: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Source {
    Random,
    Leaked,
}

#[derive(Args, Debug)]
struct AttackOptions {
    #[arg(long, default_value_t = 100_000)]
    budget: u64,
    /// Search resolution as a fraction of each feature's range.
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    #[arg(long, value_enum, default_value_t = Source::Random)]
    cover_source: Source,
    /// Disable the abort on randomized (inconsistent) answers.
    #[arg(long)]
    no_divergence_check: bool,
}

#[derive(Args, Debug)]
struct TreeExtract {
    #[command(flatten)]
    output: Output,
    #[command(flatten)]
    data: DataSource,
    #[command(flatten)]
    attack: AttackOptions,
    #[arg(long, default_value_t = 5)]
    repetitions: u64,
    #[arg(long, default_value_t = 0)]
    cover_ratio: usize,
    /// Fraction of the training half known to the attacker (leaked covers).
    #[arg(long, default_value_t = 0.5)]
    leaked_fraction: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MarginReaction {
    Block,
    Random,
}

#[derive(Args, Debug)]
struct TreeDefendEval {
    #[command(flatten)]
    output: Output,
    #[command(flatten)]
    data: DataSource,
    #[command(flatten)]
    attack: AttackOptions,
    #[arg(long, default_value_t = 5)]
    repetitions: u64,
    #[arg(long, default_value_t = 0.3)]
    tau: f64,
    #[arg(long, default_value_t = 0.05)]
    alarm_rate: f64,
    /// Leaves need this many queries before they count towards φ.
    #[arg(long, default_value_t = 15)]
    min_leaf_queries: u64,
    #[arg(long, value_enum, default_value_t = MarginReaction::Block)]
    reaction: MarginReaction,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    cover_ratios: Vec<usize>,
    /// Leaked fractions swept with --cover-source leaked.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5")]
    leaked_fractions: Vec<f64>,
    /// Skip the honest replay of the test half.
    #[arg(long)]
    skip_honest: bool,
}

#[derive(Args, Debug)]
struct Report {
    /// Directory searched recursively for results.csv files.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

const RESULTS: &str = "results.csv";

fn prepare(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn finish(
    out: &Output,
    command: &str,
    spec: &impl std::fmt::Debug,
    mut files: Vec<String>,
) -> Result<()> {
    files.insert(0, RESULTS.into());
    manifest::write(&out.out, command, out.seed, spec, &files)?;
    println!(
        "wrote {} and {}",
        out.out.join(RESULTS).display(),
        manifest::MANIFEST
    );
    Ok(())
}

fn default_strength(pixels: usize) -> f64 {
    desk_strength((pixels as f64).sqrt().round() as usize)
}

fn finite(p: oraclelab::Psnr) -> f64 {
    p.finite().unwrap_or(f64::INFINITY)
}

fn wm_embed(a: &WmEmbed) -> Result<()> {
    prepare(&a.output.out)?;
    let mut files = Vec::new();
    let (subject, image) = match (&a.image, a.synth) {
        (Some(path), _) => (path.display().to_string(), GrayImage::read_pgm(path)?),
        (None, Some(kind)) => {
            let img = synth_image(
                a.size,
                a.size,
                kind.into(),
                RngConfig::new(a.output.seed, streams::IMAGES),
            )?;
            img.write_pgm(&a.output.out.join("original.pgm"))?;
            files.push("original.pgm".into());
            (
                kind.to_possible_value()
                    .map_or_else(String::new, |v| v.get_name().to_owned()),
                img,
            )
        }
        (None, None) => bail!("give --image or --synth"),
    };
    let wm = match &a.watermark {
        Some(path) => Watermark::load(path)?,
        None => {
            let strength = a
                .strength
                .unwrap_or_else(|| default_strength(image.pixels.dim()));
            generate_watermark(
                image.pixels.dim(),
                strength,
                RngConfig::new(a.output.seed, streams::WATERMARK),
            )?
        }
    };
    let marked = GrayImage::new(image.width, image.height, embed(&image.pixels, &wm)?)?;
    marked.write_pgm(&a.output.out.join("marked.pgm"))?;
    wm.save(&a.output.out.join("watermark.wm"))?;
    files.extend(["marked.pgm".into(), "watermark.wm".into()]);
    // Score what is on disk: the PGM is rounded to integers.
    let stored = GrayImage::read_pgm(&a.output.out.join("marked.pgm"))?;
    let row = ResultRow {
        experiment: "wm-embed".into(),
        subject,
        psnr: Some(finite(psnr(&image.pixels, &stored.pixels, PEAK)?)),
        removed: Some(!detect(&stored.pixels, &wm)?),
        ..ResultRow::default()
    };
    write_results(&a.output.out.join(RESULTS), &[row])?;
    finish(&a.output, "wm-embed", a, files)
}

fn wm_detect(a: &WmDetect) -> Result<()> {
    prepare(&a.output.out)?;
    let image = GrayImage::read_pgm(&a.image)?;
    let wm = Watermark::load(&a.watermark)?;
    let score = correlate(&image.pixels, &wm)?;
    let present = detect(&image.pixels, &wm)?;
    println!(
        "{}: {} (correlation {score:.3}, threshold {:.3})",
        a.image.display(),
        if present { "present" } else { "absent" },
        wm.threshold()
    );
    let row = ResultRow {
        experiment: "wm-detect".into(),
        subject: a.image.display().to_string(),
        removed: Some(!present),
        ..ResultRow::default()
    };
    write_results(&a.output.out.join(RESULTS), &[row])?;
    finish(&a.output, "wm-detect", a, Vec::new())
}

fn wm_attack(a: &WmAttack) -> Result<()> {
    prepare(&a.output.out)?;
    let image = GrayImage::read_pgm(&a.image)?;
    let wm = Watermark::load(&a.watermark)?;
    let reference = match &a.original {
        Some(path) => GrayImage::read_pgm(path)?.pixels,
        None => image.pixels.clone(),
    };
    let cfg = AttackConfig {
        start: match a.start {
            Start::Random => StartStrategy::RandomDirection,
            Start::Gray => StartStrategy::GrayPrefix,
        },
        max_iterations: a.max_iterations,
        rng: RngConfig::new(a.output.seed, streams::ATTACK),
        ..AttackConfig::default()
    };
    let marked = &image.pixels;
    let result = match a.guard_delta {
        None => {
            let mut s = OracleSession::open(LinearDetector::new(wm.clone()), Mode::Binary, false);
            bnsa(&mut s, marked, &cfg)
        }
        Some(delta) => {
            let variations = make_variations(
                marked,
                image.width,
                image.height,
                &Recipe::default(),
                RngConfig::new(a.output.seed, streams::VARIATIONS),
            )?;
            let model = OneClassModel::for_marked(marked, &variations, a.k, delta)?;
            let policy = GuardPolicy {
                reaction: a.guard_reaction.into(),
                rng: RngConfig::new(a.output.seed, streams::GUARD),
            };
            let mut s = OracleSession::open(
                GuardedDetector::new(wm.clone(), model, policy),
                Mode::Binary,
                false,
            );
            bnsa(&mut s, marked, &cfg)
        }
    };
    let defense = if a.guard_delta.is_some() {
        "1.5-class"
    } else {
        "none"
    };
    let mut files = Vec::new();
    let row = match result {
        Ok(r) => {
            GrayImage::new(image.width, image.height, r.final_signal.clone())?
                .write_pgm(&a.output.out.join("attacked.pgm"))?;
            write_trace_csv(&r.trace, &a.output.out.join("trace.csv"))?;
            files.extend(["attacked.pgm".into(), "trace.csv".into()]);
            let removed = !detect(&r.final_signal, &wm)?;
            info!(
                "{} queries, {} descent iterations",
                r.queries_used, r.iterations
            );
            ResultRow {
                queries: Some(r.queries_used),
                psnr: Some(finite(psnr(&reference, &r.final_signal, PEAK)?)),
                removed: Some(removed),
                terminated_by: "finished".into(),
                ..ResultRow::default()
            }
        }
        Err(oraclelab::Error::Blocked) => ResultRow {
            psnr: Some(finite(psnr(&reference, marked, PEAK)?)),
            removed: Some(false),
            terminated_by: "blocked".into(),
            ..ResultRow::default()
        },
        Err(e) => return Err(e.into()),
    };
    let row = ResultRow {
        experiment: "wm-attack".into(),
        subject: a.image.display().to_string(),
        defense: defense.into(),
        reaction: if a.guard_delta.is_some() {
            format!("{:?}", a.guard_reaction).to_lowercase()
        } else {
            String::new()
        },
        delta: a.guard_delta,
        ..row
    };
    println!(
        "watermark {} after {} queries, PSNR {:.2} dB",
        if row.removed == Some(true) {
            "removed"
        } else {
            "still present"
        },
        row.queries.unwrap_or(0),
        row.psnr.unwrap_or(f64::NAN)
    );
    write_results(&a.output.out.join(RESULTS), &[row])?;
    finish(&a.output, "wm-attack", a, files)
}

fn wm_guard_eval(a: &WmGuardEval) -> Result<()> {
    prepare(&a.output.out)?;
    let seed = a.output.seed;
    let images = desk_images(a.images, a.size, seed)?;
    let strength = a.strength.unwrap_or_else(|| desk_strength(a.size));
    let wm = generate_watermark(
        a.size * a.size,
        strength,
        RngConfig::new(seed, streams::WATERMARK),
    )?;
    let mut setup = GuardSetup::new(a.size, a.size);
    setup.k = a.k;
    setup.benign_repetitions = a.benign_reps;
    setup.variation_rng = RngConfig::new(seed, streams::VARIATIONS);
    setup.attack.rng = RngConfig::new(seed, streams::ATTACK);
    setup.policy = GuardPolicy {
        reaction: a.reaction.into(),
        rng: RngConfig::new(seed, streams::GUARD),
    };
    if let Some(path) = &a.recipe {
        setup.recipe = Recipe::load(path)?;
    }
    let mut files = Vec::new();
    if a.separation {
        let rows = separation_study(&images, &wm, &setup)?;
        let path = a.output.out.join("separation.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record([
            "image",
            "max_benign",
            "min_attack",
            "mean_attack",
            "attack_queries",
            "separable",
        ])?;
        for r in &rows {
            w.write_record([
                r.image.to_string(),
                r.max_benign.to_string(),
                r.min_attack.to_string(),
                r.mean_attack.to_string(),
                r.attack_queries.to_string(),
                r.separable().to_string(),
            ])?;
        }
        w.flush()?;
        let ok = rows.iter().filter(|r| r.separable()).count();
        println!("separable on {ok}/{} images", rows.len());
        files.push("separation.csv".into());
    }
    let ev = evaluate_guard(&images, &wm, &setup, &a.deltas)?;
    ev.write_csv(&a.output.out.join(RESULTS))?;
    println!("{:>10} {:>8} {:>8}", "delta", "removal", "psnr");
    for r in std::iter::once(&ev.undefended).chain(&ev.rows) {
        println!(
            "{:>10} {:>8.2} {:>8.2}",
            r.delta, r.removal_rate, r.mean_psnr
        );
    }
    finish(&a.output, "wm-guard-eval", a, files)
}

fn margin_config(alarm_rate: f64) -> MarginConfig {
    MarginConfig {
        alarm_rate,
        ..MarginConfig::default()
    }
}

fn tree_train(a: &TreeTrain) -> Result<()> {
    prepare(&a.output.out)?;
    let (name, full) = a.data.load()?;
    let mut rows = Vec::new();
    let mut files = Vec::new();
    for rep in 0..a.repetitions {
        let r = tree_rep(&full, a.output.seed, rep, &margin_config(a.alarm_rate))?;
        let tree_file = format!("tree-{rep}.txt");
        let margin_file = format!("margins-{rep}.csv");
        r.tree.save(&a.output.out.join(&tree_file))?;
        r.margins.write_csv(&a.output.out.join(&margin_file))?;
        files.extend([tree_file, margin_file]);
        rows.push(ResultRow {
            experiment: "tree-train".into(),
            subject: name.clone(),
            rep,
            leaves: Some(r.tree.n_leaves()),
            ..ResultRow::default()
        });
    }
    write_results(&a.output.out.join(RESULTS), &rows)?;
    finish(&a.output, "tree-train", a, files)
}

fn extraction_config(
    full: &LabeledDataset,
    o: &AttackOptions,
    seed: u64,
    rep: u64,
    ratio: usize,
    fraction: Option<f64>,
) -> ExtractionConfig {
    ExtractionConfig {
        search_epsilon: o.epsilon,
        cover_ratio: ratio,
        cover_source: match fraction {
            Some(fraction) => CoverSource::LeakedTraining { fraction },
            None => CoverSource::RandomUniform,
        },
        query_budget: o.budget,
        divergence_limit: if o.no_divergence_check {
            None
        } else {
            Some(64)
        },
        rng: cover_rng(seed, rep),
        ..ExtractionConfig::new(full.feature_ranges().to_vec())
    }
}

fn source_name(cfg: &ExtractionConfig) -> &'static str {
    match (cfg.cover_ratio, &cfg.cover_source) {
        (0, _) => "",
        (_, CoverSource::RandomUniform) => "random",
        (_, CoverSource::LeakedTraining { .. }) => "leaked",
    }
}

fn attack_row(
    experiment: &str,
    subject: &str,
    rep: u64,
    defense: TreeDefense,
    cfg: &ExtractionConfig,
    o: &oraclelab::study::ExtractionOutcome,
    leaves: usize,
) -> ResultRow {
    let (defense_name, reaction) = match defense {
        TreeDefense::Undefended => ("none", ""),
        TreeDefense::Margin(r) => (
            "margin",
            match r {
                Reaction::Block => "block",
                Reaction::RandomResponse => "random",
            },
        ),
    };
    ResultRow {
        experiment: experiment.into(),
        subject: subject.into(),
        rep,
        defense: defense_name.into(),
        reaction: reaction.into(),
        cover_ratio: Some(cfg.cover_ratio),
        cover_source: source_name(cfg).into(),
        leaked_fraction: match cfg.cover_source {
            CoverSource::LeakedTraining { fraction } if cfg.cover_ratio > 0 => Some(fraction),
            _ => None,
        },
        queries: Some(o.model.queries_spent),
        p: Some(o.p),
        phi_final: o.final_phi,
        terminated_by: o.model.terminated_by.name().into(),
        flagged_at: o.flagged_at,
        leaves: Some(leaves),
        ..ResultRow::default()
    }
}

fn leaked_for(
    r: &oraclelab::study::TreeRep,
    cfg: &ExtractionConfig,
    seed: u64,
) -> Result<Option<LabeledDataset>> {
    Ok(match cfg.cover_source {
        CoverSource::LeakedTraining { fraction } if cfg.cover_ratio > 0 => {
            Some(leaked_rows(&r.train, fraction, seed, r.rep)?)
        }
        _ => None,
    })
}

fn tree_extract(a: &TreeExtract) -> Result<()> {
    prepare(&a.output.out)?;
    let (name, full) = a.data.load()?;
    let seed = a.output.seed;
    let fraction = matches!(a.attack.cover_source, Source::Leaked).then_some(a.leaked_fraction);
    let mut rows = Vec::new();
    let mut files = Vec::new();
    for rep in 0..a.repetitions {
        let r = tree_rep(&full, seed, rep, &MarginConfig::default())?;
        let cfg = extraction_config(&full, &a.attack, seed, rep, a.cover_ratio, fraction);
        let leaked = leaked_for(&r, &cfg, seed)?;
        let o = run_extraction(
            &r,
            TreeDefense::Undefended,
            &MonitorConfig::default(),
            &cfg,
            leaked.as_ref(),
        )?;
        if let Some(tree) = o.model.to_tree(&cfg, full.n_classes()) {
            let file = format!("extracted-{rep}.txt");
            tree.save(&a.output.out.join(&file))?;
            files.push(file);
        }
        info!(
            "{name} rep {rep}: p {:.2} after {} queries",
            o.p, o.model.queries_spent
        );
        rows.push(attack_row(
            "tree-extract",
            &name,
            rep,
            TreeDefense::Undefended,
            &cfg,
            &o,
            r.tree.n_leaves(),
        ));
    }
    print_rows(&rows);
    write_results(&a.output.out.join(RESULTS), &rows)?;
    finish(&a.output, "tree-extract", a, files)
}

fn tree_defend_eval(a: &TreeDefendEval) -> Result<()> {
    prepare(&a.output.out)?;
    if let Some(f) = a
        .leaked_fractions
        .iter()
        .find(|f| !(**f > 0.0 && **f <= 1.0))
    {
        bail!("leaked fractions must lie in (0, 1], got {f}");
    }
    let (name, full) = a.data.load()?;
    let seed = a.output.seed;
    let reaction = match a.reaction {
        MarginReaction::Block => Reaction::Block,
        MarginReaction::Random => Reaction::RandomResponse,
    };
    let monitor = MonitorConfig {
        tau: a.tau,
        reaction,
        min_leaf_queries: a.min_leaf_queries,
        ..MonitorConfig::default()
    };
    let fractions: Vec<Option<f64>> = match a.attack.cover_source {
        Source::Random => vec![None],
        Source::Leaked => a.leaked_fractions.iter().copied().map(Some).collect(),
    };
    let mut rows = Vec::new();
    for rep in 0..a.repetitions {
        let r = tree_rep(&full, seed, rep, &margin_config(a.alarm_rate))?;
        if !a.skip_honest {
            let h = honest_replay(&r, &monitor, seed)?;
            rows.push(ResultRow {
                experiment: "honest".into(),
                subject: name.clone(),
                rep,
                defense: "margin".into(),
                reaction: format!("{:?}", a.reaction).to_lowercase(),
                queries: Some(h.queries),
                phi_final: Some(h.final_phi),
                flagged_at: h.flagged_at,
                leaves: Some(r.tree.n_leaves()),
                ..ResultRow::default()
            });
        }
        for &ratio in &a.cover_ratios {
            let plans: &[Option<f64>] = if ratio == 0 { &[None] } else { &fractions };
            for &fraction in plans {
                let cfg = extraction_config(&full, &a.attack, seed, rep, ratio, fraction);
                let leaked = leaked_for(&r, &cfg, seed)?;
                let o = run_extraction(
                    &r,
                    TreeDefense::Margin(reaction),
                    &monitor,
                    &cfg,
                    leaked.as_ref(),
                )?;
                rows.push(attack_row(
                    "tree-defend",
                    &name,
                    rep,
                    TreeDefense::Margin(reaction),
                    &cfg,
                    &o,
                    r.tree.n_leaves(),
                ));
            }
        }
    }
    print_rows(&rows);
    write_results(&a.output.out.join(RESULTS), &rows)?;
    finish(&a.output, "tree-defend-eval", a, Vec::new())
}

fn print_rows(rows: &[ResultRow]) {
    for r in rows {
        let f = r.fields();
        println!(
            "{:<12} {:<14} rep {} ratio {:>3} {:<6} frac {:<4} Q {:>8} p {:>5} phi {:>6} {}",
            f[0],
            f[1],
            f[2],
            f[5],
            f[6],
            f[7],
            f[9],
            f[10].get(..4).unwrap_or(&f[10]),
            f[11].get(..5).unwrap_or(&f[11]),
            f[14]
        );
    }
}

fn report(a: &Report) -> Result<()> {
    prepare(&a.out)?;
    let (rows, other) = report::collect(&a.dir)?;
    if rows.is_empty() {
        bail!("no per-run results below {}", a.dir.display());
    }
    for path in &other {
        info!(
            "{} has a different layout; left out of the aggregate",
            path.display()
        );
    }
    let table = report::aggregate(&rows);
    report::write(&a.out.join("report.csv"), &table)?;
    for row in &table {
        let cells: Vec<String> = report::COLUMNS
            .iter()
            .zip(row)
            .skip(2)
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        println!("{} {}: {}", row[0], row[1], cells.join(" "));
    }
    manifest::write(&a.out, "report", 0, a, &["report.csv".into()])?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::WmEmbed(a) => wm_embed(a),
        Command::WmDetect(a) => wm_detect(a),
        Command::WmAttack(a) => wm_attack(a),
        Command::WmGuardEval(a) => wm_guard_eval(a),
        Command::TreeTrain(a) => tree_train(a),
        Command::TreeExtract(a) => tree_extract(a),
        Command::TreeDefendEval(a) => tree_defend_eval(a),
        Command::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
