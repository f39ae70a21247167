//! The offline stages that turn a labeled dataset into a deployable
//! selector: merge and resample, rank features, train `θ*`, calibrate margins,
//! retrain to `θ**`.
//!
//! Each stage reprocesses the dataset from the same configuration, so the
//! stages can run as separate commands and still see identical training sets.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::dataset::{apply_scaler, resample_and_merge, Dataset, Scaler, TrainingSet};
use crate::detectors::NUM_DETECTORS;
use crate::error::{Error, Result};
use crate::features::{FEATURE_NAMES, NUM_FEATURES};
use crate::mifs::{self, Ranking};
use crate::mlp::{self, Activation, MlpParams, TrainOptions};
use crate::model::{Model, Stage};
use crate::optim::{BfgsOptions, Trace};
use crate::selection::{self, Margins};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub features: usize,
    pub mifs_beta: f64,
    pub mifs_bins: usize,
    pub n_max: usize,
    /// Class merge `(from, to)`.
    pub merge: Option<(u8, u8)>,
    pub resample_seed: u64,
    pub holdout: f64,
    pub hidden: usize,
    pub activation: Activation,
    pub retrain_activation: Activation,
    pub bfgs: BfgsOptions,
    pub init_seed: u64,
    pub gamma: f64,
    pub grid_step: f64,
    pub warm_start: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            features: 3,
            mifs_beta: mifs::DEFAULT_BETA,
            mifs_bins: mifs::DEFAULT_BINS,
            n_max: 20_000,
            merge: Some((3, 4)),
            resample_seed: 1,
            holdout: 0.1,
            hidden: mlp::DEFAULT_HIDDEN,
            activation: Activation::Sigmoid,
            retrain_activation: Activation::PiecewiseLinear,
            bfgs: BfgsOptions::default(),
            init_seed: 1,
            gamma: selection::DEFAULT_GAMMA,
            grid_step: selection::DEFAULT_GRID_STEP,
            warm_start: true,
        }
    }
}

impl TrainConfig {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let d = TrainConfig::default();
        let merge = match cfg.get_str("merge") {
            None => d.merge,
            Some("none") => None,
            Some(spec) => {
                let parsed = spec
                    .split_once(':')
                    .and_then(|(a, b)| Some((a.trim().parse::<u8>().ok()?, b.trim().parse::<u8>().ok()?)));
                match parsed {
                    Some((a, b)) if (1..=5).contains(&a) && (1..=5).contains(&b) => Some((a, b)),
                    _ => return Err(Error::Config(format!("merge: expected <from>:<to> with classes 1-5, got '{spec}'"))),
                }
            }
        };
        let act = |key: &str, default: Activation| -> Result<Activation> {
            match cfg.get_str(key) {
                None => Ok(default),
                Some(s) => Activation::parse(s).map_err(|e| Error::Config(format!("{key}: {e}"))),
            }
        };
        let out = TrainConfig {
            features: cfg.get("features", d.features)?,
            mifs_beta: cfg.get("mifs_beta", d.mifs_beta)?,
            mifs_bins: cfg.get("mifs_bins", d.mifs_bins)?,
            n_max: cfg.get("n_max", d.n_max)?,
            merge,
            resample_seed: cfg.get("resample_seed", d.resample_seed)?,
            holdout: cfg.get("holdout", d.holdout)?,
            hidden: cfg.get("hidden", d.hidden)?,
            activation: act("activation", d.activation)?,
            retrain_activation: act("retrain_activation", d.retrain_activation)?,
            bfgs: BfgsOptions {
                max_iter: cfg.get("max_iter", d.bfgs.max_iter)?,
                grad_tol: cfg.get("grad_tol", d.bfgs.grad_tol)?,
                ..d.bfgs
            },
            init_seed: cfg.get("init_seed", d.init_seed)?,
            gamma: cfg.get("gamma", d.gamma)?,
            grid_step: cfg.get("grid_step", d.grid_step)?,
            warm_start: cfg.get("warm_start", d.warm_start)?,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.features == 0 || self.features > NUM_FEATURES {
            return bad("features must be between 1 and 7");
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return bad("holdout must be in [0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must be in (0, 1)");
        }
        if self.hidden == 0 || self.n_max == 0 {
            return bad("hidden and n_max must be positive");
        }
        self.bfgs.validate().map_err(|e| Error::Config(e.to_string()))
    }

    fn train_options(&self, activation: Activation) -> TrainOptions {
        TrainOptions {
            hidden: self.hidden,
            outputs: NUM_DETECTORS,
            activation,
            seed: self.init_seed,
            bfgs: self.bfgs.clone(),
        }
    }
}

/// The merged and resampled dataset, split into training and holdout parts.
#[derive(Debug, Clone)]
pub struct Processed {
    pub train: Dataset,
    pub holdout: Dataset,
}

impl Processed {
    pub fn all(&self) -> Dataset {
        let mut samples = self.train.samples.clone();
        samples.extend(self.holdout.samples.iter().cloned());
        Dataset::new(samples)
    }
}

pub fn process(ds: &Dataset, cfg: &TrainConfig) -> Result<Processed> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let (from, to) = cfg.merge.unwrap_or((0, 0));
    let merged = resample_and_merge(ds, cfg.n_max, from, to, cfg.resample_seed)?;
    let n = merged.len();
    let n_hold = (cfg.holdout * n as f64).floor() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.resample_seed ^ 0x5eed_0f_401d));
    let mut is_hold = vec![false; n];
    for &i in &idx[..n_hold] {
        is_hold[i] = true;
    }
    let (mut train, mut holdout) = (Vec::new(), Vec::new());
    for (s, h) in merged.samples.into_iter().zip(is_hold) {
        if h {
            holdout.push(s);
        } else {
            train.push(s);
        }
    }
    if train.is_empty() {
        return Err(Error::InvalidArgument("no training samples left after the holdout split".into()));
    }
    Ok(Processed {
        train: Dataset::new(train),
        holdout: Dataset::new(holdout),
    })
}

pub fn rank(ds: &Dataset, cfg: &TrainConfig) -> Result<Ranking> {
    let columns: Vec<Vec<f64>> = (0..NUM_FEATURES).map(|i| ds.feature_column(i)).collect();
    mifs::mifs_rank(&columns, &ds.labels(), cfg.mifs_beta, cfg.mifs_bins)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub feature: String,
    pub relevance_bits: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub samples: usize,
    pub ranking: Vec<RankedFeature>,
    pub selected: Vec<String>,
}

impl RankReport {
    pub fn new(r: &Ranking, samples: usize, k: usize) -> Self {
        RankReport {
            samples,
            ranking: r
                .order
                .iter()
                .zip(&r.scores)
                .map(|(&f, &score)| RankedFeature {
                    feature: FEATURE_NAMES[f].to_string(),
                    relevance_bits: r.relevance[f],
                    score,
                })
                .collect(),
            selected: r.top(k).iter().map(|&f| FEATURE_NAMES[f].to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: String,
    pub raw_class_counts: [usize; NUM_DETECTORS],
    pub train_class_counts: [usize; NUM_DETECTORS],
    pub train_samples: usize,
    pub holdout_samples: usize,
    pub train_accuracy: f64,
    pub holdout_accuracy: Option<f64>,
    pub trace: Trace,
}

/// Fraction of samples whose argmax matches the label.
pub fn accuracy(params: &MlpParams, act: Activation, set: &TrainingSet) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    let hits = set
        .inputs
        .iter()
        .zip(&set.labels)
        .filter(|(g, &z)| mlp::argmax(&params.forward(act, g).probs) + 1 == z as usize)
        .count();
    hits as f64 / set.len() as f64
}

#[derive(Debug, Clone)]
pub struct FirstStage {
    pub model: Model,
    pub ranking: Ranking,
    pub report: TrainReport,
}

/// Ranks features on the processed data, fits the scaler and trains `θ*`.
pub fn train_first(ds: &Dataset, cfg: &TrainConfig) -> Result<FirstStage> {
    cfg.validate()?;
    let processed = process(ds, cfg)?;
    let ranking = rank(&processed.all(), cfg)?;
    let features = ranking.top(cfg.features);
    let scaler = Scaler::fit(&processed.train, &features)?;
    let train = apply_scaler(&scaler, &processed.train);
    let holdout = apply_scaler(&scaler, &processed.holdout);
    let opts = cfg.train_options(cfg.activation);
    let (params, trace) = mlp::train_quasi_newton(&train, &opts, None)?;
    let report = TrainReport {
        stage: Stage::First.name().into(),
        raw_class_counts: ds.class_counts(),
        train_class_counts: processed.train.class_counts(),
        train_samples: train.len(),
        holdout_samples: holdout.len(),
        train_accuracy: accuracy(&params, opts.activation, &train),
        holdout_accuracy: (!holdout.is_empty()).then(|| accuracy(&params, opts.activation, &holdout)),
        trace,
    };
    let model = Model::new(Stage::First, cfg.activation, params, scaler)?;
    Ok(FirstStage { model, ranking, report })
}

/// The model's own training set, rebuilt from the dataset.
pub fn training_set(model: &Model, ds: &Dataset, cfg: &TrainConfig) -> Result<(TrainingSet, TrainingSet)> {
    let processed = process(ds, cfg)?;
    Ok((
        apply_scaler(&model.scaler, &processed.train),
        apply_scaler(&model.scaler, &processed.holdout),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    /// 1-based class `d` the margin guards against `d + 1`.
    pub d: usize,
    pub delta: f64,
    pub underestimation_rate: f64,
    pub correct_rate: f64,
    pub class_samples: usize,
    pub next_class_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub gamma: f64,
    pub grid_step: f64,
    pub samples: usize,
    pub margins: Vec<MarginReport>,
}

/// Attaches margins calibrated on the training set.
pub fn calibrate(model: &Model, ds: &Dataset, cfg: &TrainConfig) -> Result<(Model, CalibrationReport)> {
    if model.stage != Stage::First {
        return Err(Error::InvalidArgument("margins are calibrated on a first-stage model".into()));
    }
    let (train, _) = training_set(model, ds, cfg)?;
    let outputs = selection::network_outputs(&model.params, model.activation, &train);
    let margins = selection::calibrate_margins(&outputs, &train.labels, cfg.gamma, cfg.grid_step)?;
    let count = |c: usize| train.labels.iter().filter(|&&z| z as usize == c).count();
    let report = CalibrationReport {
        gamma: cfg.gamma,
        grid_step: cfg.grid_step,
        samples: train.len(),
        margins: (1..NUM_DETECTORS)
            .map(|d| MarginReport {
                d,
                delta: margins.get(d),
                underestimation_rate: selection::underestimation_rate(&outputs, &train.labels, d, margins.get(d)),
                correct_rate: selection::correct_rate(&outputs, &train.labels, d, margins.get(d)),
                class_samples: count(d),
                next_class_samples: count(d + 1),
            })
            .collect(),
    };
    let mut out = model.clone();
    out.margins = Some(margins);
    Ok((out, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainReport {
    pub relabeled: usize,
    pub label_counts: [usize; NUM_DETECTORS],
    /// Fraction of training samples where the retrained argmax equals the
    /// first-stage reliable choice.
    pub agreement: f64,
    pub trace: Trace,
}

/// Relabels with the calibrated first-stage model and trains `θ**`.
pub fn retrain(model: &Model, ds: &Dataset, cfg: &TrainConfig) -> Result<(Model, RetrainReport)> {
    let margins: &Margins = match (model.stage, &model.margins) {
        (Stage::First, Some(m)) => m,
        _ => return Err(Error::InvalidArgument("retraining needs a calibrated first-stage model".into())),
    };
    let (train, _) = training_set(model, ds, cfg)?;
    let first_outputs = selection::network_outputs(&model.params, model.activation, &train);
    let reliable: Vec<usize> = first_outputs.iter().map(|r| selection::select_reliable(r, margins)).collect();
    // relabel with the first-stage activation, then train with the deployed one
    let labels = selection::relabel(&first_outputs, &train.labels, margins);
    let relabeled = TrainingSet {
        inputs: train.inputs.clone(),
        labels: labels.clone(),
    };
    let opts = cfg.train_options(cfg.retrain_activation);
    let warm = cfg.warm_start.then_some(&model.params);
    let (params, trace) = mlp::train_quasi_newton(&relabeled, &opts, warm)?;
    let agree = train
        .inputs
        .iter()
        .zip(&reliable)
        .filter(|(g, &d)| mlp::argmax(&params.forward(opts.activation, g).logits) + 1 == d)
        .count();
    let mut label_counts = [0; NUM_DETECTORS];
    for &z in &labels {
        label_counts[z as usize - 1] += 1;
    }
    let report = RetrainReport {
        relabeled: labels.iter().zip(&train.labels).filter(|(a, b)| a != b).count(),
        label_counts,
        agreement: agree as f64 / train.len() as f64,
        trace,
    };
    let out = Model::new(Stage::Retrained, cfg.retrain_activation, params, model.scaler.clone())?;
    Ok((out, report))
}
