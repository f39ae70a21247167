//! Greedy mutual-information feature ranking (MIFS).
//!
//! Each feature is discretized into equal-frequency bins; mutual information
//! is the plug-in estimate from joint histograms, in bits. At every step the
//! feature maximizing `I(z; g) − β Σ_s I(g; g_s)` over the already selected
//! `g_s` is appended. Constant features carry no information and are placed
//! last, in index order.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 32;
pub const DEFAULT_BETA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    /// Feature indices (0-based), most important first.
    pub order: Vec<usize>,
    /// `I(z; g_i)` in bits, indexed by feature.
    pub relevance: Vec<f64>,
    /// Criterion value at the step each feature was chosen, in `order` order.
    pub scores: Vec<f64>,
}

impl Ranking {
    pub fn top(&self, k: usize) -> Vec<usize> {
        self.order.iter().copied().take(k).collect()
    }
}

/// Equal-frequency bin of every value. Equal values always share a bin.
pub fn equal_frequency_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0; n];
    let mut first_rank = 0;
    for (rank, &i) in order.iter().enumerate() {
        if rank > 0 && values[i] != values[order[rank - 1]] {
            first_rank = rank;
        }
        out[i] = first_rank * bins / n;
    }
    out
}

fn entropy_of_counts<'a>(counts: impl Iterator<Item = &'a usize>, n: f64) -> f64 {
    counts
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Plug-in mutual information of two discrete sequences, in bits.
pub fn mutual_information(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    let n = a.len() as f64;
    let mut pa: BTreeMap<usize, usize> = BTreeMap::new();
    let mut pb: BTreeMap<usize, usize> = BTreeMap::new();
    let mut pab: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *pa.entry(x).or_default() += 1;
        *pb.entry(y).or_default() += 1;
        *pab.entry((x, y)).or_default() += 1;
    }
    let h = entropy_of_counts(pa.values(), n) + entropy_of_counts(pb.values(), n)
        - entropy_of_counts(pab.values(), n);
    h.max(0.0)
}

/// Plug-in entropy of a discrete sequence, in bits.
pub fn entropy(a: &[usize]) -> f64 {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &x in a {
        *counts.entry(x).or_default() += 1;
    }
    entropy_of_counts(counts.values(), a.len() as f64)
}

/// Ranks the feature `columns` against `labels`.
pub fn mifs_rank(columns: &[Vec<f64>], labels: &[u8], beta: f64, bins: usize) -> Result<Ranking> {
    if labels.is_empty() || columns.is_empty() {
        return Err(Error::InvalidArgument("MIFS needs a non-empty dataset".into()));
    }
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    if let Some(bad) = columns.iter().position(|c| c.len() != labels.len()) {
        return Err(Error::InvalidArgument(format!("feature column {bad} has the wrong length")));
    }
    let z: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let binned: Vec<Vec<usize>> = columns.iter().map(|c| equal_frequency_bins(c, bins)).collect();
    let constant: Vec<bool> = binned.iter().map(|b| b.iter().all(|&v| v == b[0])).collect();
    let relevance: Vec<f64> = binned
        .iter()
        .zip(&constant)
        .map(|(b, &k)| if k { 0.0 } else { mutual_information(&z, b) })
        .collect();

    let f = columns.len();
    let mut redundancy = vec![0.0; f];
    let mut remaining: Vec<usize> = (0..f).filter(|&i| !constant[i]).collect();
    let mut order = Vec::with_capacity(f);
    let mut scores = Vec::with_capacity(f);
    while !remaining.is_empty() {
        let (pos, score) = remaining
            .iter()
            .enumerate()
            .map(|(p, &i)| (p, relevance[i] - beta * redundancy[i]))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        let chosen = remaining.remove(pos);
        order.push(chosen);
        scores.push(score);
        for &i in &remaining {
            redundancy[i] += mutual_information(&binned[i], &binned[chosen]);
        }
    }
    for i in (0..f).filter(|&i| constant[i]) {
        order.push(i);
        scores.push(0.0);
    }
    Ok(Ranking {
        order,
        relevance,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(n: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
        (0..n).map(|_| rng.gen_range(1..=4)).collect()
    }

    #[test]
    fn bins_respect_ties_and_counts() {
        let v = [5.0, 1.0, 1.0, 3.0, 2.0, 2.0, 2.0, 9.0];
        let b = equal_frequency_bins(&v, 4);
        assert_eq!(b[1], b[2]);
        assert_eq!(b[4], b[5]);
        assert_eq!(b[5], b[6]);
        assert!(b[1] < b[4] && b[4] < b[3] && b[3] <= b[0] && b[0] <= b[7]);
        assert!(equal_frequency_bins(&[7.0; 10], 32).iter().all(|&x| x == 0));
    }

    #[test]
    fn injective_feature_has_full_information() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = labels(20_000, &mut rng);
        let g: Vec<f64> = z.iter().map(|&l| (l as f64).powi(3) + 0.5).collect();
        let noise: Vec<f64> = z.iter().map(|_| rng.gen()).collect();
        let r = mifs_rank(&[noise, g], &z, 0.5, 32).unwrap();
        let hz = entropy(&z.iter().map(|&l| l as usize).collect::<Vec<_>>());
        assert!((r.relevance[1] - hz).abs() < 1e-12);
        assert_eq!(r.order[0], 1);
    }

    #[test]
    fn independent_feature_has_negligible_information() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = labels(100_000, &mut rng);
        let g: Vec<f64> = z.iter().map(|_| rng.gen()).collect();
        let r = mifs_rank(&[g], &z, 0.5, 32).unwrap();
        assert!(r.relevance[0] < 0.01, "{}", r.relevance[0]);
        assert!(r.relevance[0] >= 0.0);
    }

    #[test]
    fn duplicate_is_penalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = labels(20_000, &mut rng);
        let strong: Vec<f64> = z.iter().map(|&l| l as f64 + rng.gen_range(-0.6..0.6)).collect();
        let weak: Vec<f64> = z.iter().map(|&l| l as f64 + rng.gen_range(-3.0..3.0)).collect();
        let dup = strong.clone();
        let r = mifs_rank(&[strong, weak, dup], &z, 0.5, 32).unwrap();
        assert_eq!(r.relevance[0], r.relevance[2]);
        // by hand: after picking g0, g2's score is I(z;g2) − β·I(g2;g0) = I − β·H(g0) < I(z;g1)
        assert_eq!(r.order, vec![0, 1, 2]);
    }

    #[test]
    fn constant_feature_ranked_last() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = labels(5000, &mut rng);
        let a: Vec<f64> = z.iter().map(|&l| l as f64 + rng.gen::<f64>()).collect();
        let b: Vec<f64> = z.iter().map(|_| rng.gen()).collect();
        let k = vec![1.0; z.len()];
        let r = mifs_rank(&[k.clone(), a, k, b], &z, 0.5, 32).unwrap();
        assert_eq!(&r.order[2..], &[0, 2]);
        assert_eq!(r.relevance[0], 0.0);
        let mut sorted = r.order.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(mifs_rank(&[vec![]], &[], 0.5, 32).is_err());
        assert!(mifs_rank(&[vec![1.0]], &[1], 0.5, 1).is_err());
        assert!(mifs_rank(&[vec![1.0, 2.0]], &[1], 0.5, 8).is_err());
    }
}
