//! The candidate detector bank, ordered by complexity:
//! MMSE soft demapping, ICR-16/32/64 and DR-ML.
//!
//! All detectors return max-log LLRs with the sign convention
//! `L = min ED(bit = 0) − min ED(bit = 1)`, so `L > 0` means the hard bit is 1.
//! EDs are normalized by the noise variance, which makes every LLR invariant
//! to a joint scaling of `(y, H, σ)`.
//!
//! The DR-ML and ICR detectors enumerate symbols of one layer and pair each
//! with the best symbol of the other layer, found by projecting the residual
//! onto the other channel column and slicing. The ICR detectors only enumerate
//! the `K` points nearest to the unbiased MMSE estimate of that layer.

use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::modem::{Constellation, MAX_BITS};
use crate::numerics::{mmse_weights, ComplexMatrix2, ComplexVector2};

/// LLR magnitude bound applied by every detector.
pub const LLR_MAX: f64 = 300.0;
/// Real multiplications per Euclidean-distance evaluation.
pub const ED_MULTIPLICATIONS: u64 = 24;
/// Real additions/subtractions per Euclidean-distance evaluation.
pub const ED_ADDITIONS: u64 = 21;

/// Number of candidate detectors.
pub const NUM_DETECTORS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DetectorId {
    Mmse = 1,
    Icr16 = 2,
    Icr32 = 3,
    Icr64 = 4,
    DrMl = 5,
}

impl DetectorId {
    pub const ALL: [DetectorId; NUM_DETECTORS] = [
        DetectorId::Mmse,
        DetectorId::Icr16,
        DetectorId::Icr32,
        DetectorId::Icr64,
        DetectorId::DrMl,
    ];

    /// 1-based index in complexity order.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(d: usize) -> Result<Self> {
        match d {
            1..=NUM_DETECTORS => Ok(Self::ALL[d - 1]),
            _ => Err(Error::InvalidArgument(format!("detector index {d} is not in 1..=5"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DetectorId::Mmse => "MMSE",
            DetectorId::Icr16 => "ICR-16",
            DetectorId::Icr32 => "ICR-32",
            DetectorId::Icr64 => "ICR-64",
            DetectorId::DrMl => "DR-ML",
        }
    }

    /// EDs spent per layer for `bits` bits per symbol. ICR sizes above the
    /// constellation size collapse onto the full set.
    pub fn ed_per_layer(self, bits: usize) -> usize {
        let full = 1usize << bits;
        match self {
            DetectorId::Mmse => 0,
            DetectorId::Icr16 => 16.min(full),
            DetectorId::Icr32 => 32.min(full),
            DetectorId::Icr64 => 64.min(full),
            DetectorId::DrMl => full,
        }
    }
}

impl fmt::Display for DetectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// LLRs of both layers of one RE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LlrVector {
    bits: usize,
    llr: [[f64; MAX_BITS]; 2],
    clipped: [[bool; MAX_BITS]; 2],
    ed_count: usize,
}

impl LlrVector {
    fn new(bits: usize, ed_count: usize) -> Self {
        LlrVector {
            bits,
            llr: [[0.0; MAX_BITS]; 2],
            clipped: [[false; MAX_BITS]; 2],
            ed_count,
        }
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits
    }

    /// LLRs of layer `t` (0-based).
    pub fn layer(&self, t: usize) -> &[f64] {
        &self.llr[t][..self.bits]
    }

    pub fn get(&self, t: usize, m: usize) -> f64 {
        self.llr[t][m]
    }

    pub fn is_clipped(&self, t: usize, m: usize) -> bool {
        self.clipped[t][m]
    }

    /// EDs evaluated per layer.
    pub fn ed_count(&self) -> usize {
        self.ed_count
    }

    /// All `2·M` LLRs, layer 1 first.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layer(0).iter().chain(self.layer(1)).copied()
    }

    fn set(&mut self, t: usize, m: usize, raw: f64) {
        let (v, clipped) = clip(raw);
        self.llr[t][m] = v;
        self.clipped[t][m] = clipped;
    }

    /// Whether the hard decisions equal `truth` (layer-major, `2·M` bits).
    pub fn decisions_match(&self, truth: &[u8]) -> bool {
        debug_assert_eq!(truth.len(), 2 * self.bits);
        self.iter().zip(truth).all(|(l, &b)| (l > 0.0) as u8 == b)
    }
}

fn clip(raw: f64) -> (f64, bool) {
    if raw > LLR_MAX {
        (LLR_MAX, true)
    } else if raw < -LLR_MAX {
        (-LLR_MAX, true)
    } else if raw.is_nan() {
        (0.0, true)
    } else {
        (raw, false)
    }
}

/// Hard decisions `b = 1` iff `L > 0`, layer 1 first.
pub fn hard_decisions(llr: &LlrVector) -> Vec<u8> {
    llr.iter().map(|l| (l > 0.0) as u8).collect()
}

/// Per-layer pairing geometry: enumerate the symbol on `own`, slice the best
/// symbol on `other`.
#[derive(Debug, Clone, Copy)]
struct LayerPairing {
    y: ComplexVector2,
    own: ComplexVector2,
    other: ComplexVector2,
    proj_y: Complex64,
    proj_own: Complex64,
    inv_sigma2: f64,
}

impl LayerPairing {
    fn new(y: &ComplexVector2, h: &ComplexMatrix2, sigma2: f64, layer: usize) -> Self {
        let own = h.column(layer);
        let other = h.column(1 - layer);
        let e = other.norm_sqr();
        let inv = if e > 0.0 { 1.0 / e } else { 0.0 };
        LayerPairing {
            y: *y,
            own,
            other,
            proj_y: other.dot(y) * inv,
            proj_own: other.dot(&own) * inv,
            inv_sigma2: 1.0 / sigma2,
        }
    }

    /// Normalized ED of `[x, x̂_other(x)]` for candidate point `idx`.
    #[inline]
    fn metric(&self, c: &Constellation, idx: usize) -> f64 {
        let x = c.point(idx);
        let z = self.proj_y - self.proj_own * x;
        let xo = c.point(c.slice(z));
        let r0 = self.y.0[0] - self.own.0[0] * x - self.other.0[0] * xo;
        let r1 = self.y.0[1] - self.own.0[1] * x - self.other.0[1] * xo;
        (r0.norm_sqr() + r1.norm_sqr()) * self.inv_sigma2
    }
}

/// Running per-bit minima over the bit-0 and bit-1 candidate sets.
#[derive(Debug, Clone, Copy)]
struct BitMinima {
    min: [[f64; MAX_BITS]; 2],
}

impl BitMinima {
    fn new() -> Self {
        BitMinima {
            min: [[f64::INFINITY; MAX_BITS]; 2],
        }
    }

    #[inline]
    fn update(&mut self, bits: usize, idx: usize, metric: f64) {
        for m in 0..bits {
            let b = (idx >> (bits - 1 - m)) & 1;
            let slot = &mut self.min[b][m];
            if metric < *slot {
                *slot = metric;
            }
        }
    }

    fn write(&self, out: &mut LlrVector, layer: usize) {
        for m in 0..out.bits {
            let (m0, m1) = (self.min[0][m], self.min[1][m]);
            let raw = match (m0.is_finite(), m1.is_finite()) {
                (true, true) => m0 - m1,
                (true, false) => -f64::INFINITY,
                (false, true) => f64::INFINITY,
                (false, false) => f64::NAN,
            };
            out.set(layer, m, raw);
        }
    }
}

/// `argmin_{x2} ||y − h1·x1 − h2·x2||²` over the constellation.
pub fn conditional_best_x2(
    y: &ComplexVector2,
    h1: &ComplexVector2,
    h2: &ComplexVector2,
    x1: Complex64,
    c: &Constellation,
) -> Result<Complex64> {
    let e = h2.norm_sqr();
    if e == 0.0 {
        return Err(Error::Degenerate("h2 is zero"));
    }
    let residual = y.sub(&h1.scale(x1));
    Ok(c.point(c.slice(h2.dot(&residual) / e)))
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if sigma2 > 0.0 && sigma2.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("noise variance must be positive, got {sigma2}")))
    }
}

/// Dimension-reduced ML: all `2^M` symbols per layer.
pub fn detect_drml(
    y: &ComplexVector2,
    h: &ComplexMatrix2,
    sigma2: f64,
    c: &Constellation,
) -> Result<LlrVector> {
    check_sigma2(sigma2)?;
    let bits = c.bits();
    let mut out = LlrVector::new(bits, c.len());
    for layer in 0..2 {
        let pairing = LayerPairing::new(y, h, sigma2, layer);
        let mut mins = BitMinima::new();
        for idx in 0..c.len() {
            mins.update(bits, idx, pairing.metric(c, idx));
        }
        mins.write(&mut out, layer);
    }
    Ok(out)
}

/// Per-layer linear MMSE front end shared by the soft demapper and the ICR
/// candidate centers.
#[derive(Debug, Clone, Copy)]
struct MmseLayer {
    /// Equalizer output `w_t · y`.
    z: Complex64,
    /// Effective gain `w_t · h_t`.
    gain: Complex64,
    /// Residual interference-plus-noise variance.
    nu2: f64,
}

impl MmseLayer {
    fn compute(y: &ComplexVector2, h: &ComplexMatrix2, sigma2: f64) -> Result<[MmseLayer; 2]> {
        let w = mmse_weights(h, sigma2)?;
        let mut out = [MmseLayer {
            z: Complex64::new(0.0, 0.0),
            gain: Complex64::new(0.0, 0.0),
            nu2: 0.0,
        }; 2];
        for (t, slot) in out.iter_mut().enumerate() {
            let row = w.row(t);
            let apply = |v: &ComplexVector2| row.0[0] * v.0[0] + row.0[1] * v.0[1];
            let interference = apply(&h.column(1 - t));
            *slot = MmseLayer {
                z: apply(y),
                gain: apply(&h.column(t)),
                nu2: interference.norm_sqr() + sigma2 * row.norm_sqr(),
            };
        }
        Ok(out)
    }

    /// Unbiased symbol estimate `z / μ`.
    fn center(&self) -> Complex64 {
        if self.gain.norm_sqr() > 0.0 {
            self.z / self.gain
        } else {
            Complex64::new(0.0, 0.0)
        }
    }
}

/// Scalar max-log demapping of `z = μx + v`, `v ~ CN(0, ν²)`, exploiting that
/// each axis of a square QAM carries its own bits.
fn scalar_soft_demap(layer: &MmseLayer, c: &Constellation, out: &mut LlrVector, t: usize) {
    let bits = c.bits();
    let k = bits / 2;
    let g2 = layer.gain.norm_sqr();
    if g2 == 0.0 || !(layer.nu2 > 0.0) {
        for m in 0..bits {
            out.set(t, m, 0.0);
        }
        return;
    }
    let u = layer.z / layer.gain;
    let scale = g2 / layer.nu2;
    for (axis, coord) in [u.re, u.im].into_iter().enumerate() {
        let mut min = [[f64::INFINITY; MAX_BITS / 2]; 2];
        for (amp, pattern) in c.axis_levels() {
            let d = (coord - amp) * (coord - amp);
            for j in 0..k {
                let b = (pattern >> (k - 1 - j)) & 1;
                if d < min[b][j] {
                    min[b][j] = d;
                }
            }
        }
        for j in 0..k {
            out.set(t, axis * k + j, scale * (min[0][j] - min[1][j]));
        }
    }
}

/// MMSE equalization followed by per-layer max-log soft demapping; no EDs.
pub fn detect_mmse(
    y: &ComplexVector2,
    h: &ComplexMatrix2,
    sigma2: f64,
    c: &Constellation,
) -> Result<LlrVector> {
    check_sigma2(sigma2)?;
    let layers = MmseLayer::compute(y, h, sigma2)?;
    let mut out = LlrVector::new(c.bits(), 0);
    for (t, layer) in layers.iter().enumerate() {
        scalar_soft_demap(layer, c, &mut out, t);
    }
    Ok(out)
}

/// Indices of the `k` points nearest to `center`, ordered by distance and then
/// by index.
fn nearest_points(c: &Constellation, center: Complex64, k: usize) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = c
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| ((center - p).norm_sqr(), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < keyed.len() {
        keyed.select_nth_unstable_by(k, cmp);
        keyed.truncate(k);
    }
    keyed.sort_unstable_by(cmp);
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Initial candidate reduction with `k` candidates per layer.
pub fn detect_icr(
    y: &ComplexVector2,
    h: &ComplexMatrix2,
    sigma2: f64,
    c: &Constellation,
    k: usize,
) -> Result<LlrVector> {
    check_sigma2(sigma2)?;
    if k == 0 || k > c.len() {
        return Err(Error::InvalidArgument(format!(
            "candidate count {k} is outside 1..={}",
            c.len()
        )));
    }
    let layers = MmseLayer::compute(y, h, sigma2)?;
    let bits = c.bits();
    let mut out = LlrVector::new(bits, k);
    for (t, layer) in layers.iter().enumerate() {
        let pairing = LayerPairing::new(y, h, sigma2, t);
        let mut mins = BitMinima::new();
        for idx in nearest_points(c, layer.center(), k) {
            mins.update(bits, idx, pairing.metric(c, idx));
        }
        mins.write(&mut out, t);
    }
    Ok(out)
}

/// Runs one detector by id.
pub fn detect(
    id: DetectorId,
    y: &ComplexVector2,
    h: &ComplexMatrix2,
    sigma2: f64,
    c: &Constellation,
) -> Result<LlrVector> {
    match id {
        DetectorId::Mmse => detect_mmse(y, h, sigma2, c),
        DetectorId::DrMl => detect_drml(y, h, sigma2, c),
        icr => detect_icr(y, h, sigma2, c, icr.ed_per_layer(c.bits())),
    }
}

/// Outputs of all five detectors on one RE.
pub type BankOutput = [LlrVector; NUM_DETECTORS];

/// Runs the whole bank, evaluating each ED once and sharing it between the
/// ICR detectors and DR-ML. Results are identical to calling each detector
/// separately.
pub fn detect_all(
    y: &ComplexVector2,
    h: &ComplexMatrix2,
    sigma2: f64,
    c: &Constellation,
) -> Result<BankOutput> {
    check_sigma2(sigma2)?;
    let bits = c.bits();
    let layers = MmseLayer::compute(y, h, sigma2)?;
    let mut outs = [LlrVector::new(bits, 0); NUM_DETECTORS];
    for (i, id) in DetectorId::ALL.iter().enumerate() {
        outs[i].ed_count = id.ed_per_layer(bits);
    }
    let icr_sizes = [
        DetectorId::Icr16.ed_per_layer(bits),
        DetectorId::Icr32.ed_per_layer(bits),
        DetectorId::Icr64.ed_per_layer(bits),
    ];
    let largest = icr_sizes[2];
    let mut metrics = [0.0f64; 1 << MAX_BITS];
    for (t, layer) in layers.iter().enumerate() {
        scalar_soft_demap(layer, c, &mut outs[0], t);

        let pairing = LayerPairing::new(y, h, sigma2, t);
        let mut full = BitMinima::new();
        for (idx, slot) in metrics.iter_mut().enumerate().take(c.len()) {
            *slot = pairing.metric(c, idx);
            full.update(bits, idx, *slot);
        }
        full.write(&mut outs[4], t);

        let order = nearest_points(c, layer.center(), largest);
        let mut mins = BitMinima::new();
        let mut taken = 0;
        for (slot, &k) in icr_sizes.iter().enumerate() {
            for &idx in &order[taken..k] {
                mins.update(bits, idx, metrics[idx]);
            }
            taken = k;
            mins.write(&mut outs[1 + slot], t);
        }
    }
    Ok(outs)
}
