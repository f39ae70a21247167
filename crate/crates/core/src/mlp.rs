//! The selector network: `F` standardized features → `P` sigmoid units →
//! `D` logits → softmax.
//!
//! Parameters live in one flat vector `θ`, laid out as
//! `[w1 (P×F row-major), v1 (P), w2 (D×P row-major), v2 (D)]`, which is what
//! the quasi-Newton optimizer works on.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::TrainingSet;
use crate::error::{Error, Result};
use crate::optim::{self, BfgsOptions, Objective, Trace};

pub const DEFAULT_INPUTS: usize = 3;
pub const DEFAULT_HIDDEN: usize = 8;
pub const DEFAULT_OUTPUTS: usize = 5;

/// Hidden-unit nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Sigmoid,
    /// 32-segment linear interpolation of the sigmoid on `[−8, 8]`.
    PiecewiseLinear,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::PiecewiseLinear => "pwl",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "pwl" | "piecewise-linear" => Ok(Activation::PiecewiseLinear),
            other => Err(Error::InvalidArgument(format!("unknown activation '{other}'"))),
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::PiecewiseLinear => sigmoid_pwl(x),
        }
    }

    /// Derivative; the piecewise mode returns its segment slope.
    #[inline]
    pub fn derivative(self, x: f64, value: f64) -> f64 {
        match self {
            Activation::Sigmoid => value * (1.0 - value),
            Activation::PiecewiseLinear => sigmoid_pwl_slope(x),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const PWL_LIMIT: f64 = 8.0;
const PWL_SEGMENTS_PER_SIDE: usize = 16;
const PWL_STEP: f64 = PWL_LIMIT / PWL_SEGMENTS_PER_SIDE as f64;
const PWL_KNOTS: usize = 2 * PWL_SEGMENTS_PER_SIDE + 1;

fn pwl_table() -> &'static [f64; PWL_KNOTS] {
    static TABLE: OnceLock<[f64; PWL_KNOTS]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0; PWL_KNOTS];
        for (k, v) in t.iter_mut().enumerate() {
            *v = sigmoid(-PWL_LIMIT + k as f64 * PWL_STEP);
        }
        // pin the ends so the curve joins the saturation levels continuously
        t[0] = 0.0;
        t[PWL_KNOTS - 1] = 1.0;
        t[PWL_SEGMENTS_PER_SIDE] = 0.5;
        t
    })
}

#[inline]
fn pwl_segment(x: f64) -> Option<(usize, f64)> {
    if !(x > -PWL_LIMIT && x < PWL_LIMIT) {
        return None;
    }
    let pos = (x + PWL_LIMIT) / PWL_STEP;
    let seg = (pos.floor() as usize).min(PWL_KNOTS - 2);
    Some((seg, pos - seg as f64))
}

/// Piecewise-linear sigmoid: 16 uniform segments per side on `[−8, 8]`,
/// saturating to 0 and 1 outside.
pub fn sigmoid_pwl(x: f64) -> f64 {
    match pwl_segment(x) {
        Some((seg, t)) => {
            let table = pwl_table();
            table[seg] + (table[seg + 1] - table[seg]) * t
        }
        None if x >= PWL_LIMIT => 1.0,
        None if x <= -PWL_LIMIT => 0.0,
        None => 0.5,
    }
}

fn sigmoid_pwl_slope(x: f64) -> f64 {
    match pwl_segment(x) {
        Some((seg, _)) => {
            let table = pwl_table();
            (table[seg + 1] - table[seg]) / PWL_STEP
        }
        None => 0.0,
    }
}

/// Network shape and flattened parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub theta: Vec<f64>,
}

/// Real-operation tally of one forward pass through the affine layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OpCount {
    pub multiplications: u64,
    pub additions: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub ops: OpCount,
}

impl MlpParams {
    pub fn param_count(inputs: usize, hidden: usize, outputs: usize) -> usize {
        hidden * inputs + hidden + outputs * hidden + outputs
    }

    pub fn zeros(inputs: usize, hidden: usize, outputs: usize) -> Self {
        MlpParams {
            inputs,
            hidden,
            outputs,
            theta: vec![0.0; Self::param_count(inputs, hidden, outputs)],
        }
    }

    pub fn from_theta(inputs: usize, hidden: usize, outputs: usize, theta: Vec<f64>) -> Result<Self> {
        let want = Self::param_count(inputs, hidden, outputs);
        if theta.len() != want {
            return Err(Error::InvalidArgument(format!(
                "{inputs}-{hidden}-{outputs} network needs {want} parameters, got {}",
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(MlpParams {
            inputs,
            hidden,
            outputs,
            theta,
        })
    }

    /// Symmetric uniform initialization with `a = sqrt(6 / (fan_in + fan_out))`
    /// per layer; biases start at zero.
    pub fn init(inputs: usize, hidden: usize, outputs: usize, seed: u64) -> Self {
        let mut p = Self::zeros(inputs, hidden, outputs);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a1 = (6.0 / (inputs + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + outputs) as f64).sqrt();
        let (w1, w2) = p.weight_ranges();
        for v in &mut p.theta[w1] {
            *v = rng.gen_range(-a1..=a1);
        }
        for v in &mut p.theta[w2] {
            *v = rng.gen_range(-a2..=a2);
        }
        p
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let v1 = self.hidden * self.inputs;
        let w2 = v1 + self.hidden;
        let v2 = w2 + self.outputs * self.hidden;
        (v1, w2, v2)
    }

    fn weight_ranges(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let (v1, w2, v2) = self.offsets();
        (0..v1, w2..v2)
    }

    pub fn w1(&self, i: usize, j: usize) -> f64 {
        self.theta[i * self.inputs + j]
    }

    pub fn v1(&self, i: usize) -> f64 {
        self.theta[self.offsets().0 + i]
    }

    pub fn w2(&self, d: usize, j: usize) -> f64 {
        self.theta[self.offsets().1 + d * self.hidden + j]
    }

    pub fn v2(&self, d: usize) -> f64 {
        self.theta[self.offsets().2 + d]
    }

    /// Logits only; the deployed selector needs nothing more than their argmax.
    pub fn logits_into(&self, act: Activation, g: &[f64], hidden: &mut [f64], logits: &mut [f64]) -> OpCount {
        debug_assert_eq!(g.len(), self.inputs);
        let (v1, w2, v2) = self.offsets();
        let th = &self.theta;
        let mut ops = OpCount::default();
        for (i, h) in hidden.iter_mut().enumerate().take(self.hidden) {
            let row = &th[i * self.inputs..(i + 1) * self.inputs];
            let mut acc = 0.0;
            for (w, x) in row.iter().zip(g) {
                acc += w * x;
                ops.multiplications += 1;
                ops.additions += 1;
            }
            acc += th[v1 + i];
            ops.additions += 1;
            *h = act.apply(acc);
        }
        for (d, o) in logits.iter_mut().enumerate().take(self.outputs) {
            let row = &th[w2 + d * self.hidden..w2 + (d + 1) * self.hidden];
            let mut acc = 0.0;
            for (w, a) in row.iter().zip(hidden.iter()) {
                acc += w * a;
                ops.multiplications += 1;
                ops.additions += 1;
            }
            acc += th[v2 + d];
            ops.additions += 1;
            *o = acc;
        }
        ops
    }

    pub fn forward(&self, act: Activation, g: &[f64]) -> Forward {
        let mut hidden = vec![0.0; self.hidden];
        let mut logits = vec![0.0; self.outputs];
        let ops = self.logits_into(act, g, &mut hidden, &mut logits);
        let probs = softmax(&logits);
        Forward { logits, probs, ops }
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Smallest index attaining the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Cross-entropy `−Σ_n log r_{z_n}` and its gradient with respect to `θ`.
pub fn cost_and_gradient(
    params: &MlpParams,
    act: Activation,
    set: &TrainingSet,
) -> Result<(f64, Vec<f64>)> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    if let Some(&bad) = set
        .labels
        .iter()
        .find(|&&z| z == 0 || z as usize > params.outputs)
    {
        return Err(Error::InvalidArgument(format!(
            "label {bad} outside 1..={}",
            params.outputs
        )));
    }
    let mut grad = vec![0.0; params.theta.len()];
    let cost = accumulate(params, act, set, &mut grad);
    Ok((cost, grad))
}

fn accumulate(params: &MlpParams, act: Activation, set: &TrainingSet, grad: &mut [f64]) -> f64 {
    let (fi, p, d) = (params.inputs, params.hidden, params.outputs);
    let (ov1, ow2, ov2) = params.offsets();
    let th = &params.theta;
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut pre = vec![0.0; p];
    let mut hid = vec![0.0; p];
    let mut out = vec![0.0; d];
    let mut dh = vec![0.0; p];
    let mut cost = 0.0;
    for (g, &z) in set.inputs.iter().zip(&set.labels) {
        for i in 0..p {
            let row = &th[i * fi..(i + 1) * fi];
            let a = row.iter().zip(g).map(|(w, x)| w * x).sum::<f64>() + th[ov1 + i];
            pre[i] = a;
            hid[i] = act.apply(a);
        }
        let mut max = f64::NEG_INFINITY;
        for k in 0..d {
            let row = &th[ow2 + k * p..ow2 + (k + 1) * p];
            out[k] = row.iter().zip(&hid).map(|(w, h)| w * h).sum::<f64>() + th[ov2 + k];
            max = max.max(out[k]);
        }
        let mut sum = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            sum += *o;
        }
        let t = z as usize - 1;
        // log r_t = (o_t − max) − ln Σ
        cost -= out[t].ln() - sum.ln();
        dh.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..d {
            let delta = out[k] / sum - if k == t { 1.0 } else { 0.0 };
            grad[ov2 + k] += delta;
            let row = ow2 + k * p;
            for j in 0..p {
                grad[row + j] += delta * hid[j];
                dh[j] += delta * th[row + j];
            }
        }
        for j in 0..p {
            let da = dh[j] * act.derivative(pre[j], hid[j]);
            grad[ov1 + j] += da;
            for (i, x) in g.iter().enumerate() {
                grad[j * fi + i] += da * x;
            }
        }
    }
    cost
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub hidden: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub seed: u64,
    pub bfgs: BfgsOptions,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            hidden: DEFAULT_HIDDEN,
            outputs: DEFAULT_OUTPUTS,
            activation: Activation::Sigmoid,
            seed: 1,
            bfgs: BfgsOptions::default(),
        }
    }
}

struct CrossEntropy<'a> {
    shape: (usize, usize, usize),
    act: Activation,
    set: &'a TrainingSet,
}

impl Objective for CrossEntropy<'_> {
    fn dim(&self) -> usize {
        MlpParams::param_count(self.shape.0, self.shape.1, self.shape.2)
    }

    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let params = MlpParams {
            inputs: self.shape.0,
            hidden: self.shape.1,
            outputs: self.shape.2,
            theta: x.to_vec(),
        };
        accumulate(&params, self.act, self.set, grad)
    }
}

/// Full-batch BFGS on the cross-entropy cost, from a fresh initialization or
/// from `warm_start`.
pub fn train_quasi_newton(
    set: &TrainingSet,
    opts: &TrainOptions,
    warm_start: Option<&MlpParams>,
) -> Result<(MlpParams, Trace)> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let inputs = set.inputs[0].len();
    if set.inputs.iter().any(|r| r.len() != inputs) {
        return Err(Error::InvalidArgument("ragged training inputs".into()));
    }
    if let Some(&bad) = set.labels.iter().find(|&&z| z == 0 || z as usize > opts.outputs) {
        return Err(Error::InvalidArgument(format!("label {bad} outside 1..={}", opts.outputs)));
    }
    let start = match warm_start {
        Some(p) => {
            if (p.inputs, p.hidden, p.outputs) != (inputs, opts.hidden, opts.outputs) {
                return Err(Error::InvalidArgument("warm start has a different shape".into()));
            }
            p.clone()
        }
        None => MlpParams::init(inputs, opts.hidden, opts.outputs, opts.seed),
    };
    let objective = CrossEntropy {
        shape: (inputs, opts.hidden, opts.outputs),
        act: opts.activation,
        set,
    };
    let (theta, trace) = optim::minimize(&objective, &start.theta, &opts.bfgs)?;
    Ok((MlpParams::from_theta(inputs, opts.hidden, opts.outputs, theta)?, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_params(rng: &mut ChaCha8Rng, scale: f64) -> MlpParams {
        let mut p = MlpParams::zeros(3, 8, 5);
        for v in &mut p.theta {
            *v = rng.gen_range(-scale..scale);
        }
        p
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize) -> TrainingSet {
        TrainingSet {
            inputs: (0..n)
                .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect(),
            labels: (0..n).map(|_| rng.gen_range(1..=5)).collect(),
        }
    }

    #[test]
    fn pwl_center_and_saturation() {
        assert_eq!(sigmoid_pwl(0.0), 0.5);
        assert_eq!(sigmoid_pwl(9.0), 1.0);
        assert_eq!(sigmoid_pwl(-9.0), 0.0);
        assert_eq!(sigmoid_pwl(8.0), 1.0);
        assert_eq!(sigmoid_pwl(-8.0), 0.0);
    }

    #[test]
    fn pwl_error_budget_on_grid() {
        let mut worst: f64 = 0.0;
        let mut prev = sigmoid_pwl(-8.0);
        for k in 0..=16_000 {
            let x = -8.0 + k as f64 * 1e-3;
            let v = sigmoid_pwl(x);
            worst = worst.max((v - sigmoid(x)).abs());
            // continuity: grid steps never jump
            assert!((v - prev).abs() < 1e-3);
            prev = v;
        }
        assert!(worst <= 0.02, "{worst}");
    }

    #[test]
    fn zero_params_give_uniform_output() {
        let p = MlpParams::zeros(3, 8, 5);
        let f = p.forward(Activation::Sigmoid, &[0.3, -1.0, 2.0]);
        for r in &f.probs {
            assert!((r - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn op_count_of_3_8_5() {
        let p = MlpParams::init(3, 8, 5, 1);
        let f = p.forward(Activation::PiecewiseLinear, &[0.1, 0.2, 0.3]);
        assert_eq!(f.ops.multiplications, 64);
        assert_eq!(f.ops.additions, 77);
        assert_eq!(p.theta.len(), 77);
    }

    #[test]
    fn forward_matches_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let p = random_params(&mut rng, 2.0);
            let g: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let f = p.forward(Activation::Sigmoid, &g);
            // independent route: explicit weight matrices via the named accessors
            let hidden: Vec<f64> = (0..8)
                .map(|i| {
                    let a: f64 = (0..3).map(|j| p.w1(i, j) * g[j]).sum();
                    1.0 / (1.0 + (-(a + p.v1(i))).exp())
                })
                .collect();
            let logits: Vec<f64> = (0..5)
                .map(|d| (0..8).map(|j| p.w2(d, j) * hidden[j]).sum::<f64>() + p.v2(d))
                .collect();
            let z: f64 = logits.iter().map(|v| v.exp()).sum();
            for d in 0..5 {
                assert!((f.logits[d] - logits[d]).abs() < 1e-12);
                assert!((f.probs[d] - logits[d].exp() / z).abs() < 1e-12);
            }
            assert!((f.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_shift_invariant_and_stable() {
        let a = softmax(&[1.0, 2.0, 3.0, -1.0, 0.5]);
        let b = softmax(&[1001.0, 1002.0, 1003.0, 999.0, 1000.5]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let c = softmax(&[1e308, -1e308, 0.0]);
        assert!(c.iter().all(|v| v.is_finite() && *v >= 0.0 && *v <= 1.0));
    }

    #[test]
    fn cost_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let set = random_set(&mut rng, 40);
        let (c, _) = cost_and_gradient(&MlpParams::zeros(3, 8, 5), Activation::Sigmoid, &set).unwrap();
        assert!((c - 40.0 * 5f64.ln()).abs() < 1e-10);

        // saturated logits on the true class
        let mut p = MlpParams::zeros(3, 8, 5);
        let (_, _, v2) = p.offsets();
        p.theta[v2 + 2] = 50.0;
        let one = TrainingSet {
            inputs: vec![vec![0.0; 3]],
            labels: vec![3],
        };
        let (c, _) = cost_and_gradient(&p, Activation::Sigmoid, &one).unwrap();
        assert!(c < 1e-6);

        let bad = TrainingSet {
            inputs: vec![vec![0.0; 3]],
            labels: vec![6],
        };
        assert!(cost_and_gradient(&p, Activation::Sigmoid, &bad).is_err());
    }

    #[test]
    fn argmax_tie_rule() {
        assert_eq!(argmax(&[0.2; 5]), 0);
        assert_eq!(argmax(&[0.0, 0.0, 0.0, 0.0, 1.0]), 4);
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1, 0.0]), 1);
    }

    #[test]
    fn flatten_round_trip_rejects_bad_shapes() {
        let p = MlpParams::init(3, 8, 5, 9);
        let q = MlpParams::from_theta(3, 8, 5, p.theta.clone()).unwrap();
        assert_eq!(p, q);
        assert!(MlpParams::from_theta(3, 8, 5, vec![0.0; 76]).is_err());
        assert!(MlpParams::from_theta(3, 8, 5, vec![f64::NAN; 77]).is_err());
    }

    fn finite_difference_check(act: Activation, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1e-5;
        let mut checked = 0;
        for _ in 0..50 {
            let p = random_params(&mut rng, 1.5);
            let set = random_set(&mut rng, 12);
            if act == Activation::PiecewiseLinear {
                // central differences straddling a knot are not derivatives
                let near_knot = set.inputs.iter().any(|g| {
                    (0..8).any(|i| {
                        let a: f64 = (0..3).map(|j| p.w1(i, j) * g[j]).sum::<f64>() + p.v1(i);
                        let k = (a + 8.0) / 0.5;
                        (k - k.round()).abs() * 0.5 < 1e-4
                    })
                });
                if near_knot {
                    continue;
                }
            }
            checked += 1;
            let (_, grad) = cost_and_gradient(&p, act, &set).unwrap();
            for k in 0..p.theta.len() {
                let mut plus = p.clone();
                plus.theta[k] += h;
                let mut minus = p.clone();
                minus.theta[k] -= h;
                let cp = cost_and_gradient(&plus, act, &set).unwrap().0;
                let cm = cost_and_gradient(&minus, act, &set).unwrap().0;
                let fd = (cp - cm) / (2.0 * h);
                let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-3);
                assert!(rel < 1e-5, "{act:?} param {k}: fd={fd} bp={}", grad[k]);
            }
        }
        assert!(checked >= 40, "only {checked} points checked");
    }

    #[test]
    fn gradient_matches_finite_differences_sigmoid() {
        finite_difference_check(Activation::Sigmoid, 11);
    }

    #[test]
    fn gradient_matches_finite_differences_pwl() {
        finite_difference_check(Activation::PiecewiseLinear, 12);
    }

    fn separable_set(rng: &mut ChaCha8Rng, n: usize) -> TrainingSet {
        let centers = [[3.0, 0.0, 0.0], [-3.0, 3.0, 0.0], [0.0, -3.0, 3.0]];
        let mut set = TrainingSet::default();
        for i in 0..n {
            let c = i % 3;
            set.inputs.push(centers[c].iter().map(|v| v + rng.gen_range(-1.0..1.0)).collect());
            set.labels.push(c as u8 + 1);
        }
        set
    }

    #[test]
    fn separable_clusters_are_learned_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let set = separable_set(&mut rng, 300);
        let opts = TrainOptions {
            outputs: 3,
            ..TrainOptions::default()
        };
        let (p, trace) = train_quasi_newton(&set, &opts, None).unwrap();
        assert!(trace.costs.windows(2).all(|w| w[1] <= w[0]));
        for (g, &z) in set.inputs.iter().zip(&set.labels) {
            let f = p.forward(opts.activation, g);
            assert_eq!(argmax(&f.probs) + 1, z as usize);
        }
    }

    #[test]
    fn training_is_bit_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let set = random_set(&mut rng, 200);
        let opts = TrainOptions {
            activation: Activation::PiecewiseLinear,
            bfgs: BfgsOptions {
                max_iter: 40,
                ..BfgsOptions::default()
            },
            ..TrainOptions::default()
        };
        let (a, ta) = train_quasi_newton(&set, &opts, None).unwrap();
        let (b, tb) = train_quasi_newton(&set, &opts, None).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(ta, tb);
        assert!(ta.costs.windows(2).all(|w| w[1] <= w[0]));
    }
}
