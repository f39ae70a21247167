//! Genie-labeled training samples and their on-disk CSV form.
//!
//! A sample is kept only when DR-ML decodes the RE without error; its label is
//! then the cheapest detector whose hard decisions are also error-free.
//!
//! File layout (column order is fixed):
//!
//! ```text
//! #version=1
//! block,re,snr_db,g1,g2,g3,g4,g5,g6,g7,z,d1,d2,d3,d4,d5
//! 0,17,40.0,12.5,...,1,1,1,1,1,1
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::detectors::{detect_all, DetectorId, NUM_DETECTORS};
use crate::error::{Error, Result};
use crate::features::{FeatureVector, FEATURE_NAMES, NUM_FEATURES};
use crate::modem::Constellation;
use crate::numerics::{ComplexMatrix2, ComplexVector2};

pub const DATASET_VERSION: &str = "1";
const HEADER: &str = "block,re,snr_db,g1,g2,g3,g4,g5,g6,g7,z,d1,d2,d3,d4,d5";
const COLUMNS: usize = 3 + NUM_FEATURES + 1 + NUM_DETECTORS;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub block: u64,
    pub re: u64,
    pub snr_db: f64,
    pub features: FeatureVector,
    /// Detector label, 1-based.
    pub label: u8,
    /// Whether detector `d` (index `d − 1`) decoded every bit correctly.
    pub correct: [bool; NUM_DETECTORS],
}

/// Outcome of running the bank with genie bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelOutcome {
    pub correct: [bool; NUM_DETECTORS],
    /// `None` when DR-ML itself is wrong and the RE is excluded.
    pub label: Option<DetectorId>,
}

impl LabelOutcome {
    pub fn from_flags(correct: [bool; NUM_DETECTORS]) -> Self {
        let label = if correct[NUM_DETECTORS - 1] {
            correct
                .iter()
                .position(|&ok| ok)
                .map(|i| DetectorId::ALL[i])
        } else {
            None
        };
        LabelOutcome { correct, label }
    }
}

/// Runs all detectors on one RE and labels it with the cheapest correct one.
pub fn generate_label(
    y: &ComplexVector2,
    h: &ComplexMatrix2,
    sigma2: f64,
    true_bits: &[u8],
    c: &Constellation,
) -> Result<LabelOutcome> {
    if true_bits.len() != 2 * c.bits() {
        return Err(Error::InvalidArgument(format!(
            "expected {} true bits, got {}",
            2 * c.bits(),
            true_bits.len()
        )));
    }
    let bank = detect_all(y, h, sigma2, c)?;
    let mut correct = [false; NUM_DETECTORS];
    for (flag, llr) in correct.iter_mut().zip(bank.iter()) {
        *flag = llr.decisions_match(true_bits);
    }
    Ok(LabelOutcome::from_flags(correct))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn new(samples: Vec<LabeledSample>) -> Self {
        Dataset { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `N_d` for `d = 1..=5`, stored 0-based.
    pub fn class_counts(&self) -> [usize; NUM_DETECTORS] {
        let mut counts = [0; NUM_DETECTORS];
        for s in &self.samples {
            counts[s.label as usize - 1] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Column `i` (0-based feature index).
    pub fn feature_column(&self, i: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.features.0[i]).collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "#version={DATASET_VERSION}")?;
        writeln!(w, "{HEADER}")?;
        for s in &self.samples {
            write!(w, "{},{},{:?}", s.block, s.re, s.snr_db)?;
            for g in s.features.0 {
                write!(w, ",{g:?}")?;
            }
            write!(w, ",{}", s.label)?;
            for ok in s.correct {
                write!(w, ",{}", ok as u8)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "empty file, missing version header"))?;
        let version = first
            .strip_prefix("#version=")
            .ok_or_else(|| Error::parse(path, 1, "missing #version header"))?;
        if version.trim() != DATASET_VERSION {
            return Err(Error::Version {
                found: version.trim().to_string(),
                expected: DATASET_VERSION.to_string(),
            });
        }
        match lines.next() {
            Some((_, h)) if h.trim() == HEADER => {}
            Some((n, _)) => return Err(Error::parse(path, n, "unexpected column header")),
            None => return Err(Error::parse(path, 2, "missing column header")),
        }
        let mut samples = Vec::new();
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            samples.push(parse_row(line).map_err(|msg| Error::parse(path, n, msg))?);
        }
        if !text.is_empty() && !text.ends_with('\n') {
            // the final row was cut short
            let n = text.lines().count();
            return Err(Error::parse(path, n, "truncated row (no trailing newline)"));
        }
        Ok(Dataset { samples })
    }
}

fn parse_row(line: &str) -> std::result::Result<LabeledSample, String> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != COLUMNS {
        return Err(format!("expected {COLUMNS} columns, found {}", fields.len()));
    }
    let int = |i: usize| {
        fields[i]
            .trim()
            .parse::<u64>()
            .map_err(|e| format!("column {}: {e}", i + 1))
    };
    let float = |i: usize| {
        fields[i]
            .trim()
            .parse::<f64>()
            .map_err(|e| format!("column {}: {e}", i + 1))
    };
    let mut features = [0.0; NUM_FEATURES];
    for (j, g) in features.iter_mut().enumerate() {
        *g = float(3 + j)?;
        if !g.is_finite() {
            return Err(format!("{} is not finite", FEATURE_NAMES[j]));
        }
    }
    let label = int(3 + NUM_FEATURES)?;
    if !(1..=NUM_DETECTORS as u64).contains(&label) {
        return Err(format!("label {label} is outside 1..=5"));
    }
    let mut correct = [false; NUM_DETECTORS];
    for (d, flag) in correct.iter_mut().enumerate() {
        *flag = match int(4 + NUM_FEATURES + d)? {
            0 => false,
            1 => true,
            v => return Err(format!("flag d{} must be 0/1, got {v}", d + 1)),
        };
    }
    Ok(LabeledSample {
        block: int(0)?,
        re: int(1)?,
        snr_db: float(2)?,
        features: FeatureVector(features),
        label: label as u8,
        correct,
    })
}

/// Relabels `merge_from` as `merge_to`, then caps every class at `n_max`
/// samples by seeded uniform subsampling. Retained samples keep their order.
pub fn resample_and_merge(
    dataset: &Dataset,
    n_max: usize,
    merge_from: u8,
    merge_to: u8,
    seed: u64,
) -> Result<Dataset> {
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    let mut merged: Vec<LabeledSample> = dataset.samples.clone();
    for s in &mut merged {
        if s.label == merge_from {
            s.label = merge_to;
        }
    }
    let mut keep = vec![true; merged.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for class in 1..=NUM_DETECTORS as u8 {
        let members: Vec<usize> = (0..merged.len()).filter(|&i| merged[i].label == class).collect();
        if members.len() > n_max {
            let chosen = sample(&mut rng, members.len(), n_max);
            let mut drop = vec![true; members.len()];
            for j in chosen.iter() {
                drop[j] = false;
            }
            for (j, &i) in members.iter().enumerate() {
                if drop[j] {
                    keep[i] = false;
                }
            }
        }
    }
    let samples = merged
        .into_iter()
        .zip(keep)
        .filter_map(|(s, k)| k.then_some(s))
        .collect();
    Ok(Dataset { samples })
}

/// Monotone compression applied to every feature before the z-score.
const LOG_FLOOR: f64 = 1e-30;

#[inline]
fn compress(g: f64) -> f64 {
    g.max(LOG_FLOOR).log10()
}

/// Per-feature standardization fitted on training data: `(log10 g − mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    /// Selected features, 0-based indices into `g1..g7`.
    pub features: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(dataset: &Dataset, features: &[usize]) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::InvalidArgument("cannot standardize an empty dataset".into()));
        }
        let n = dataset.len() as f64;
        let mut mean = Vec::with_capacity(features.len());
        let mut std = Vec::with_capacity(features.len());
        for &f in features {
            if f >= NUM_FEATURES {
                return Err(Error::InvalidArgument(format!("feature index {f} out of range")));
            }
            let col: Vec<f64> = dataset.samples.iter().map(|s| compress(s.features.0[f])).collect();
            let m = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let sd = var.sqrt();
            if !(sd > 0.0) || sd < 1e-12 * m.abs().max(1.0) {
                return Err(Error::ZeroVariance(FEATURE_NAMES[f].to_string()));
            }
            mean.push(m);
            std.push(sd);
        }
        Ok(Scaler {
            features: features.to_vec(),
            mean,
            std,
        })
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn transform(&self, g: &FeatureVector) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.transform_into(g, &mut out);
        out
    }

    #[inline]
    pub fn transform_into(&self, g: &FeatureVector, out: &mut [f64]) {
        for (k, &f) in self.features.iter().enumerate() {
            out[k] = (compress(g.0[f]) - self.mean[k]) / self.std[k];
        }
    }
}

/// Inputs and labels ready for the network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingSet {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn apply_scaler(scaler: &Scaler, dataset: &Dataset) -> TrainingSet {
    TrainingSet {
        inputs: dataset.samples.iter().map(|s| scaler.transform(&s.features)).collect(),
        labels: dataset.labels(),
    }
}

/// Fits a scaler on `dataset` and applies it.
pub fn standardize(dataset: &Dataset, features: &[usize]) -> Result<(Scaler, TrainingSet)> {
    let scaler = Scaler::fit(dataset, features)?;
    let set = apply_scaler(&scaler, dataset);
    Ok((scaler, set))
}
