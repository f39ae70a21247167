//! Per-RE 2×2 Rayleigh channels and the noisy observation model `y = Hx + n`.
//!
//! Randomness is always drawn from generators seeded through [`derive_seed`],
//! so a realization is a pure function of `(seed, block, stream)`. The static
//! and dynamic detector policies therefore see identical channels and noise.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::{ComplexMatrix2, ComplexVector2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelKind {
    /// Independent draw on every RE.
    IidRayleigh,
    /// First-order autoregressive correlation along the RE index.
    CorrelatedRayleigh,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelModel {
    pub kind: ChannelKind,
    /// Coherence in REs; the AR(1) coefficient is `1 − 1/L`, so `L = 1` is i.i.d.
    pub correlation_length: f64,
}

impl ChannelModel {
    pub fn iid() -> Self {
        ChannelModel {
            kind: ChannelKind::IidRayleigh,
            correlation_length: 1.0,
        }
    }

    pub fn correlated(correlation_length: f64) -> Result<Self> {
        if !(correlation_length >= 1.0) || !correlation_length.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "correlation length must be >= 1, got {correlation_length}"
            )));
        }
        Ok(ChannelModel {
            kind: ChannelKind::CorrelatedRayleigh,
            correlation_length,
        })
    }

    /// AR(1) coefficient between adjacent REs.
    pub fn rho(&self) -> f64 {
        match self.kind {
            ChannelKind::IidRayleigh => 0.0,
            ChannelKind::CorrelatedRayleigh => 1.0 - 1.0 / self.correlation_length,
        }
    }
}

/// Independent random streams inside one block.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Stream {
    Channel = 1,
    Bits = 2,
    Noise = 3,
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a list of indices into a base seed.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

/// Generator for one `(seed, block, stream)` triple.
pub fn block_rng(seed: u64, block: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[block, stream as u64]))
}

/// Circularly-symmetric complex Gaussian with variance `var`.
#[inline]
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

fn iid_matrix<R: Rng + ?Sized>(rng: &mut R) -> ComplexMatrix2 {
    let mut m = ComplexMatrix2::zero();
    for e in m.0.iter_mut().flatten() {
        *e = complex_normal(rng, 1.0);
    }
    m
}

/// Draws `res` consecutive channel matrices with unit-variance entries.
pub fn sample_channels_with<R: Rng + ?Sized>(
    model: &ChannelModel,
    res: usize,
    rng: &mut R,
) -> Vec<ComplexMatrix2> {
    let rho = model.rho();
    let innov = (1.0 - rho * rho).sqrt();
    let mut out = Vec::with_capacity(res);
    let mut prev: Option<ComplexMatrix2> = None;
    for _ in 0..res {
        let w = iid_matrix(rng);
        let h = match prev {
            Some(p) if rho > 0.0 => p.scale_re(rho).add(&w.scale_re(innov)),
            _ => w,
        };
        out.push(h);
        prev = Some(h);
    }
    out
}

pub fn sample_channels(model: &ChannelModel, res: usize, seed: u64) -> Result<Vec<ComplexMatrix2>> {
    if res == 0 {
        return Err(Error::InvalidArgument("need at least one RE".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_channels_with(model, res, &mut rng))
}

/// `y = Hx + n` with `n ~ CN(0, σ² I)`; `σ² = 0` is exactly noiseless.
#[inline]
pub fn transmit_with<R: Rng + ?Sized>(
    h: &ComplexMatrix2,
    x: &ComplexVector2,
    sigma2: f64,
    rng: &mut R,
) -> ComplexVector2 {
    let clean = h.mul_vec(x);
    if sigma2 == 0.0 {
        return clean;
    }
    let n = ComplexVector2([complex_normal(rng, sigma2), complex_normal(rng, sigma2)]);
    clean.add(&n)
}

pub fn transmit(h: &ComplexMatrix2, x: &ComplexVector2, sigma2: f64, seed: u64) -> Result<ComplexVector2> {
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidArgument(format!("noise variance must be >= 0, got {sigma2}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(transmit_with(h, x, sigma2, &mut rng))
}

/// Noise variance for a per-layer SNR in dB, assuming unit symbol energy and
/// unit-variance channel taps.
pub fn snr_to_sigma2(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}
