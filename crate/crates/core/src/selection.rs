//! Turning network outputs into a detector choice: plain argmax, the
//! margin-guarded reliable rule, margin calibration, relabeling and
//! retraining.

use crate::dataset::TrainingSet;
use crate::error::{Error, Result};
use crate::mlp::{self, Activation, MlpParams, TrainOptions};
use crate::optim::Trace;

pub const DEFAULT_GAMMA: f64 = 0.01;
pub const DEFAULT_GRID_STEP: f64 = 0.001;

/// Margins `δ_1..δ_{D−1}`, stored 0-based; `δ_D = 0` is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct Margins {
    pub delta: Vec<f64>,
    /// Under-estimation threshold the margins were calibrated for.
    pub gamma: f64,
}

impl Margins {
    pub fn new(delta: Vec<f64>, gamma: f64) -> Result<Self> {
        if delta.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return Err(Error::InvalidArgument(format!("margins must lie in [0, 1]: {delta:?}")));
        }
        Ok(Margins { delta, gamma })
    }

    pub fn zeros(classes: usize) -> Self {
        Margins {
            delta: vec![0.0; classes.saturating_sub(1)],
            gamma: 1.0,
        }
    }

    /// `δ_d` for 1-based `d`, zero at and beyond the last class.
    pub fn get(&self, d: usize) -> f64 {
        self.delta.get(d - 1).copied().unwrap_or(0.0)
    }
}

/// 1-based index of the largest output; ties go to the smallest index.
pub fn select_argmax(r: &[f64]) -> usize {
    mlp::argmax(r) + 1
}

/// Smallest `d ≥ start` with `r_d − r_{d+1} > δ_d`, where `r_{D+1} = 0`.
/// Falls through to `D` when nothing qualifies.
fn first_reliable(r: &[f64], margins: &Margins, start: usize) -> usize {
    let last = r.len();
    for d in start..last {
        if r[d - 1] - r[d] > margins.get(d) {
            return d;
        }
    }
    last
}

/// Scans upward from the argmax for the first detector whose lead over the
/// next one exceeds its margin.
pub fn select_reliable(r: &[f64], margins: &Margins) -> usize {
    first_reliable(r, margins, select_argmax(r))
}

/// Same rule as [`select_reliable`], started at the known label `z`.
pub fn relabel_one(r: &[f64], margins: &Margins, z: usize) -> usize {
    first_reliable(r, margins, z)
}

/// Labels `ζ_n` for a whole set, from precomputed outputs.
pub fn relabel(outputs: &[Vec<f64>], labels: &[u8], margins: &Margins) -> Vec<u8> {
    outputs
        .iter()
        .zip(labels)
        .map(|(r, &z)| relabel_one(r, margins, z as usize) as u8)
        .collect()
}

/// Softmax outputs of `params` on every input of `set`.
pub fn network_outputs(params: &MlpParams, act: Activation, set: &TrainingSet) -> Vec<Vec<f64>> {
    set.inputs.iter().map(|g| params.forward(act, g).probs).collect()
}

/// Smallest label above `d` that occurs in `labels`, or `d + 1` when none
/// does. Differs from `d + 1` only when classes were merged away.
pub fn next_class(labels: &[u8], d: usize, classes: usize) -> usize {
    (d + 1..=classes)
        .find(|&c| labels.iter().any(|&z| z as usize == c))
        .unwrap_or(d + 1)
}

/// Fraction `#{n : z_n = next, r_{d,n} − r_{d+1,n} > δ} / N` with `next`
/// from [`next_class`].
pub fn underestimation_rate(outputs: &[Vec<f64>], labels: &[u8], d: usize, delta: f64) -> f64 {
    let next = next_class(labels, d, outputs.first().map_or(d + 1, Vec::len));
    let hits = outputs
        .iter()
        .zip(labels)
        .filter(|(r, &z)| z as usize == next && r[d - 1] - r[d] > delta)
        .count();
    hits as f64 / labels.len() as f64
}

/// Fraction of class-`d` samples with `r_{d,n} − r_{d+1,n} > δ`.
pub fn correct_rate(outputs: &[Vec<f64>], labels: &[u8], d: usize, delta: f64) -> f64 {
    let (hits, total) = outputs
        .iter()
        .zip(labels)
        .filter(|(_, &z)| z as usize == d)
        .fold((0usize, 0usize), |(h, t), (r, _)| (h + usize::from(r[d - 1] - r[d] > delta), t + 1));
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Smallest grid margin per class keeping the under-estimation rate below `gamma`.
pub fn calibrate_margins(outputs: &[Vec<f64>], labels: &[u8], gamma: f64, grid_step: f64) -> Result<Margins> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("gamma must be in (0, 1), got {gamma}")));
    }
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(Error::InvalidArgument(format!("grid step must be in (0, 1], got {grid_step}")));
    }
    if outputs.is_empty() || outputs.len() != labels.len() {
        return Err(Error::InvalidArgument("calibration needs matching non-empty outputs and labels".into()));
    }
    let classes = outputs[0].len();
    let n = labels.len() as f64;
    let steps = (1.0 / grid_step).round() as usize;
    let mut delta = Vec::with_capacity(classes - 1);
    for d in 1..classes {
        let next = next_class(labels, d, classes);
        // gaps of class `next` samples, descending, so "count above δ" is a prefix length
        let mut gaps: Vec<f64> = outputs
            .iter()
            .zip(labels)
            .filter(|(_, &z)| z as usize == next)
            .map(|(r, _)| r[d - 1] - r[d])
            .collect();
        gaps.sort_by(|a, b| b.total_cmp(a));
        let mut chosen = 1.0;
        for k in 0..=steps {
            let grid = (k as f64 * grid_step).min(1.0);
            let above = gaps.partition_point(|&g| g > grid);
            if (above as f64) / n < gamma {
                chosen = grid;
                break;
            }
        }
        delta.push(chosen);
    }
    Margins::new(delta, gamma)
}

#[derive(Debug, Clone)]
pub struct Retrained {
    pub params: MlpParams,
    pub trace: Trace,
    pub labels: Vec<u8>,
}

/// Relabels `set` with `θ*` and `margins`, then trains from `θ*` (or from a
/// fresh initialization when `warm_start` is false).
pub fn retrain(
    set: &TrainingSet,
    first: &MlpParams,
    margins: &Margins,
    opts: &TrainOptions,
    warm_start: bool,
) -> Result<Retrained> {
    let outputs = network_outputs(first, opts.activation, set);
    let labels = relabel(&outputs, &set.labels, margins);
    let relabeled = TrainingSet {
        inputs: set.inputs.clone(),
        labels: labels.clone(),
    };
    let (params, trace) = mlp::train_quasi_newton(&relabeled, opts, warm_start.then_some(first))?;
    Ok(Retrained { params, trace, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const FIG: [f64; 5] = [0.50, 0.45, 0.03, 0.01, 0.01];

    #[test]
    fn argmax_cases() {
        assert_eq!(select_argmax(&[0.7, 0.1, 0.1, 0.05, 0.05]), 1);
        assert_eq!(select_argmax(&[0.2; 5]), 1);
        assert_eq!(select_argmax(&[0.0, 0.0, 0.0, 0.0, 1.0]), 5);
    }

    #[test]
    fn reliable_by_hand() {
        let m = Margins::new(vec![0.1; 4], 0.01).unwrap();
        assert_eq!(select_reliable(&FIG, &m), 2);
        assert_eq!(relabel_one(&FIG, &m, 1), 2);
        assert_eq!(select_reliable(&[0.0, 0.0, 0.0, 0.1, 0.9], &m), 5);
        assert_eq!(select_reliable(&[0.2; 5], &m), 5);
    }

    fn random_probs(rng: &mut ChaCha8Rng) -> Vec<f64> {
        let v: Vec<f64> = (0..5).map(|_| rng.gen::<f64>().powi(3)).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    }

    #[test]
    fn reliable_never_below_argmax_and_zero_margins_reduce() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let zero = Margins::zeros(5);
        for _ in 0..10_000 {
            let r = random_probs(&mut rng);
            let m = Margins::new((0..4).map(|_| rng.gen::<f64>() * 0.5).collect(), 0.01).unwrap();
            let a = select_argmax(&r);
            let s = select_reliable(&r, &m);
            assert!((a..=5).contains(&s));
            assert_eq!(select_reliable(&r, &zero), a);
            let z = rng.gen_range(1..=5);
            assert!(relabel_one(&r, &m, z) >= z);
        }
    }

    #[test]
    fn no_underestimation_means_zero_margin() {
        let outputs = vec![vec![0.1, 0.9, 0.0, 0.0, 0.0]; 10];
        let labels = vec![2; 10];
        let m = calibrate_margins(&outputs, &labels, 0.01, 0.001).unwrap();
        assert_eq!(m.delta, vec![0.0; 4]);
    }

    #[test]
    fn calibration_matches_brute_force_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 20_000;
        let mut outputs = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            if i % 20 == 0 {
                // 5% of samples: class 2 with r1 − r2 in (0.20, 0.30)
                let gap = rng.gen_range(0.2001..0.2999);
                let r2 = (1.0 - gap) / 2.0;
                outputs.push(vec![r2 + gap, r2, 0.0, 0.0, 0.0]);
                labels.push(2);
            } else {
                outputs.push(random_probs(&mut rng));
                labels.push([1, 3, 4, 5][rng.gen_range(0..4)]);
            }
        }
        let m = calibrate_margins(&outputs, &labels, 0.01, 0.001).unwrap();
        for d in 1..5 {
            let mut oracle = 1.0;
            for k in 0..=1000 {
                let delta = k as f64 / 1000.0;
                if underestimation_rate(&outputs, &labels, d, delta) < 0.01 {
                    oracle = delta;
                    break;
                }
            }
            assert!((m.get(d) - oracle).abs() < 1e-12, "d={d} {} vs {oracle}", m.get(d));
            assert!(underestimation_rate(&outputs, &labels, d, m.get(d)) < 0.01);
        }
        assert!(m.get(1) > 0.2 && m.get(1) < 0.3);
    }

    #[test]
    fn gamma_near_one_gives_zero_margins() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let outputs: Vec<Vec<f64>> = (0..1000).map(|_| random_probs(&mut rng)).collect();
        let labels: Vec<u8> = (0..1000).map(|_| rng.gen_range(1..=5)).collect();
        let m = calibrate_margins(&outputs, &labels, 0.999, 0.001).unwrap();
        assert_eq!(m.delta, vec![0.0; 4]);
        assert!(calibrate_margins(&outputs, &labels, 0.0, 0.001).is_err());
        assert!(calibrate_margins(&outputs, &labels, 1.0, 0.001).is_err());
    }
}
