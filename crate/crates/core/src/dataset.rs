//! Labeled tabular datasets: CSV ingestion, splitting and synthetic stand-ins.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::RngConfig;
use crate::signal::{check_dims, Signal};

/// Rows with class labels and the per-feature value range they span.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    rows: Vec<Signal>,
    labels: Vec<usize>,
    class_names: Vec<String>,
    feature_names: Vec<String>,
    feature_ranges: Vec<(f64, f64)>,
}

impl LabeledDataset {
    pub fn new(
        rows: Vec<Signal>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if rows.len() != labels.len() {
            return Err(Error::Format(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let dim = rows[0].dim();
        check_dims(dim, feature_names.len())?;
        for row in &rows {
            check_dims(dim, row.dim())?;
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Format(format!(
                "label {bad} out of range for {} classes",
                class_names.len()
            )));
        }
        let feature_ranges = compute_ranges(&rows);
        Ok(LabeledDataset {
            rows,
            labels,
            class_names,
            feature_names,
            feature_ranges,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn rows(&self) -> &[Signal] {
        &self.rows
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Per-feature `(min, max)` over the stored rows.
    pub fn feature_ranges(&self) -> &[(f64, f64)] {
        &self.feature_ranges
    }

    /// The rows at `indices`, in that order. Class and feature names are kept.
    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        let rows = indices.iter().map(|&i| self.rows[i].clone()).collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        LabeledDataset::new(
            rows,
            labels,
            self.class_names.clone(),
            self.feature_names.clone(),
        )
    }

    /// Writes the dataset as CSV with the label in the last column named
    /// `label_column`, values formatted with `precision` decimals.
    pub fn write_csv(&self, path: &Path, label_column: &str, precision: usize) -> Result<()> {
        let mut out = std::io::BufWriter::new(File::create(path)?);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(label_column);
        writeln!(out, "{}", header.join(","))?;
        for (row, &label) in self.rows.iter().zip(&self.labels) {
            for v in row.iter() {
                write!(out, "{v:.precision$},")?;
            }
            writeln!(out, "{}", self.class_names[label])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn compute_ranges(rows: &[Signal]) -> Vec<(f64, f64)> {
    let dim = rows[0].dim();
    (0..dim)
        .map(|j| {
            rows.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                    (lo.min(r[j]), hi.max(r[j]))
                })
        })
        .collect()
}

/// Loads a CSV file with a header row. `label_column` names the class column;
/// columns listed in `categorical` are one-hot encoded into `name=level`
/// features (levels in sorted order). Any other non-numeric cell is an error.
pub fn load_csv_dataset(
    path: &Path,
    label_column: &str,
    categorical: &[&str],
) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Format(format!("no label column named {label_column:?}")))?;
    for name in categorical {
        if !headers.iter().any(|h| h == name) {
            return Err(Error::Format(format!(
                "no categorical column named {name:?}"
            )));
        }
    }

    let mut records = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { .. } => {
                Error::Format(format!("{}: ragged row {}", path.display(), i + 2))
            }
            _ => Error::Csv(e),
        })?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }

    // Levels for each categorical column, sorted for a stable encoding.
    let mut levels: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (col, name) in headers.iter().enumerate() {
        if categorical.contains(&name.as_str()) && col != label_idx {
            let set: BTreeSet<&str> = records.iter().map(|r| &r[col]).collect();
            levels.insert(col, set.into_iter().map(str::to_owned).collect());
        }
    }

    let mut feature_names = Vec::new();
    for (col, name) in headers.iter().enumerate() {
        if col == label_idx {
            continue;
        }
        match levels.get(&col) {
            Some(lv) => feature_names.extend(lv.iter().map(|l| format!("{name}={l}"))),
            None => feature_names.push(name.clone()),
        }
    }

    let class_names = sorted_classes(records.iter().map(|r| &r[label_idx]));
    let mut rows = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    for (i, record) in records.iter().enumerate() {
        let mut values = Vec::with_capacity(feature_names.len());
        for (col, cell) in record.iter().enumerate() {
            if col == label_idx {
                continue;
            }
            if let Some(lv) = levels.get(&col) {
                values.extend(lv.iter().map(|l| if l == cell { 1.0 } else { 0.0 }));
                continue;
            }
            let parsed: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    path: path.to_owned(),
                    row: i + 2,
                    column: col + 1,
                    value: cell.to_owned(),
                })?;
            values.push(parsed);
        }
        rows.push(Signal::new(values)?);
        labels.push(
            class_names
                .iter()
                .position(|c| c == &record[label_idx])
                .expect("class collected above"),
        );
    }
    LabeledDataset::new(rows, labels, class_names, feature_names)
}

/// Distinct labels, numerically ordered when every label is a number.
fn sorted_classes<'a>(cells: impl Iterator<Item = &'a str>) -> Vec<String> {
    let set: BTreeSet<&str> = cells.collect();
    let mut classes: Vec<String> = set.into_iter().map(str::to_owned).collect();
    if classes.iter().all(|c| c.parse::<f64>().is_ok()) {
        classes.sort_by(|a, b| {
            a.parse::<f64>()
                .unwrap()
                .total_cmp(&b.parse::<f64>().unwrap())
        });
    }
    classes
}

/// Random partition into `(train, test)` with `round(fraction * n)` training rows.
pub fn split_dataset(
    ds: &LabeledDataset,
    fraction: f64,
    rng: RngConfig,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    if ds.len() < 2 {
        return Err(Error::EmptyDataset);
    }
    let (train_idx, test_idx) = split_indices(ds.len(), fraction, rng);
    Ok((ds.subset(&train_idx)?, ds.subset(&test_idx)?))
}

/// The index partition behind [`split_dataset`]; both halves are sorted.
pub fn split_indices(n: usize, fraction: f64, rng: RngConfig) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng.rng());
    let n_train = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// The Iris data (150 rows, 4 features, 3 classes), bundled with the crate.
pub fn iris() -> LabeledDataset {
    const IRIS: &str = include_str!("../data/iris.csv");
    let mut reader = csv::Reader::from_reader(IRIS.as_bytes());
    let mut rows = Vec::new();
    let mut names = Vec::new();
    for record in reader.records() {
        let record = record.expect("bundled iris is valid csv");
        let values = (0..4)
            .map(|j| record[j].parse().expect("numeric"))
            .collect();
        rows.push(Signal::new(values).expect("finite"));
        names.push(record[4].to_owned());
    }
    let class_names = sorted_classes(names.iter().map(String::as_str));
    let labels = names
        .iter()
        .map(|n| class_names.iter().position(|c| c == n).unwrap())
        .collect();
    let features = ["sepal_length", "sepal_width", "petal_length", "petal_width"];
    LabeledDataset::new(
        rows,
        labels,
        class_names,
        features.iter().map(|s| s.to_string()).collect(),
    )
    .expect("bundled iris is consistent")
}

/// Synthetic stand-ins shaped like the five benchmark datasets
/// (row count, feature count, class structure, one-hot columns).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StandIn {
    Iris,
    Carseats,
    College,
    OrangeJuice,
    WineQuality,
}

impl StandIn {
    pub const ALL: [StandIn; 5] = [
        StandIn::Iris,
        StandIn::Carseats,
        StandIn::College,
        StandIn::OrangeJuice,
        StandIn::WineQuality,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StandIn::Iris => "iris",
            StandIn::Carseats => "carseats",
            StandIn::College => "college",
            StandIn::OrangeJuice => "orange-juice",
            StandIn::WineQuality => "wine-quality",
        }
    }

    pub fn from_name(name: &str) -> Option<StandIn> {
        StandIn::ALL.into_iter().find(|s| s.name() == name)
    }

    fn shape(self) -> StandInShape {
        match self {
            StandIn::Iris => StandInShape {
                samples: 150,
                numeric: 4,
                binary: 0,
                class_weights: &[1.0, 1.0, 1.0],
                label_noise: 0.02,
                focus: 3.0,
            },
            StandIn::Carseats => StandInShape {
                samples: 400,
                numeric: 5,
                binary: 3,
                class_weights: &[1.0, 1.0],
                label_noise: 0.30,
                focus: 1.0,
            },
            StandIn::College => StandInShape {
                samples: 777,
                numeric: 15,
                binary: 2,
                class_weights: &[0.27, 0.73],
                label_noise: 0.24,
                focus: 1.0,
            },
            StandIn::OrangeJuice => StandInShape {
                samples: 1070,
                numeric: 9,
                binary: 2,
                class_weights: &[0.61, 0.39],
                label_noise: 1.6,
                focus: 1.0,
            },
            StandIn::WineQuality => StandInShape {
                samples: 1599,
                numeric: 11,
                binary: 0,
                class_weights: &[0.01, 0.03, 0.43, 0.40, 0.12, 0.01],
                label_noise: 0.65,
                focus: 1.0,
            },
        }
    }

    /// Draws the stand-in dataset. Classes come from thresholding a noisy
    /// latent score, so class overlap (and thus tree size) grows with the
    /// shape's label noise.
    pub fn generate(self, rng: RngConfig) -> LabeledDataset {
        let shape = self.shape();
        let mut rng = rng.rng();
        let d = shape.numeric;
        let weights: Vec<f64> = (0..d)
            .map(|j| (1.0 + j as f64).powf(-shape.focus))
            .collect();
        let norm = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        let centers: Vec<f64> = (0..d).map(|j| 5.0 + 3.0 * j as f64).collect();
        let spreads: Vec<f64> = (0..d).map(|j| 1.0 + 0.5 * (j % 4) as f64).collect();

        let mut latents = Vec::with_capacity(shape.samples);
        let mut scores = Vec::with_capacity(shape.samples);
        for _ in 0..shape.samples {
            let shared: f64 = StandardNormal.sample(&mut rng);
            let u: Vec<f64> = (0..d)
                .map(|_| {
                    let own: f64 = StandardNormal.sample(&mut rng);
                    0.4 * shared + 0.9165 * own
                })
                .collect();
            let noise: f64 = StandardNormal.sample(&mut rng);
            let score = u.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>() / norm
                + shape.label_noise * noise;
            let bins: Vec<f64> = (0..shape.binary)
                .map(|b| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let bias = 0.6 * u[b % d] + z;
                    if bias > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            latents.push((u, bins));
            scores.push(score);
        }

        // Class cut points at the cumulative class-weight quantiles of the score.
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        let total: f64 = shape.class_weights.iter().sum();
        let mut cuts = Vec::new();
        let mut acc = 0.0;
        for w in &shape.class_weights[..shape.class_weights.len() - 1] {
            acc += w / total;
            let pos = ((acc * sorted.len() as f64) as usize).min(sorted.len() - 1);
            cuts.push(sorted[pos]);
        }

        let mut rows = Vec::with_capacity(shape.samples);
        let mut labels = Vec::with_capacity(shape.samples);
        for ((u, bins), score) in latents.into_iter().zip(scores) {
            let mut values: Vec<f64> = u
                .iter()
                .enumerate()
                .map(|(j, v)| {
                    let raw = centers[j] + spreads[j] * v + 0.05 * rng.random::<f64>();
                    (raw * 100.0).round() / 100.0
                })
                .collect();
            values.extend(bins);
            rows.push(Signal::new(values).expect("finite"));
            labels.push(cuts.iter().filter(|&&c| score >= c).count());
        }
        let class_names = (0..shape.class_weights.len())
            .map(|c| format!("c{c}"))
            .collect();
        let mut feature_names: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        feature_names.extend((0..shape.binary).map(|b| format!("flag{b}=yes")));
        LabeledDataset::new(rows, labels, class_names, feature_names)
            .expect("generator is consistent")
    }
}

struct StandInShape {
    samples: usize,
    numeric: usize,
    binary: usize,
    class_weights: &'static [f64],
    label_noise: f64,
    /// Decay exponent of the latent score weights; large values make one
    /// feature dominate the class boundary.
    focus: f64,
}
