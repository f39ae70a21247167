//! Square QAM with per-axis Gray labeling, and transport-block framing.
//!
//! A point's index *is* its bit pattern read MSB first, so `points()[i]` carries
//! the bits of `i`. The first `M/2` bits select the in-phase level and the rest
//! the quadrature level, each through the recursive 3GPP-style amplitude rule
//! `(1 − 2b₀)(2^{k−1} − (1 − 2b₁)(2^{k−2} − …))`, which is Gray along each axis.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::ComplexVector2;

/// Largest supported bits per symbol.
pub const MAX_BITS: usize = 8;

#[derive(Debug, Clone)]
pub struct Constellation {
    bits: usize,
    levels_per_axis: usize,
    norm: f64,
    points: Vec<Complex64>,
    /// Axis bit pattern → sorted level position.
    pattern_to_pos: Vec<usize>,
    /// Sorted level position → axis bit pattern.
    pos_to_pattern: Vec<usize>,
    /// Axis bit pattern → normalized amplitude.
    amplitude: Vec<f64>,
}

impl Constellation {
    /// Builds the unit-energy square QAM constellation carrying `bits` bits per
    /// symbol (`2`, `4`, `6` or `8`).
    pub fn new(bits: usize) -> Result<Self> {
        if bits < 2 || bits > MAX_BITS || bits % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "modulation order must be one of 2, 4, 6, 8 bits/symbol, got {bits}"
            )));
        }
        let k = bits / 2;
        let levels = 1usize << k;
        // mean energy of PAM {±1, ±3, …} is (L² − 1)/3 per axis
        let norm = (2.0 * ((levels * levels - 1) as f64) / 3.0).sqrt();
        let mut amplitude = vec![0.0; levels];
        for (pattern, amp) in amplitude.iter_mut().enumerate() {
            *amp = axis_amplitude(pattern, k) / norm;
        }
        let mut pos_to_pattern: Vec<usize> = (0..levels).collect();
        pos_to_pattern.sort_by(|&a, &b| amplitude[a].total_cmp(&amplitude[b]));
        let mut pattern_to_pos = vec![0; levels];
        for (pos, &pat) in pos_to_pattern.iter().enumerate() {
            pattern_to_pos[pat] = pos;
        }
        let points = (0..1usize << bits)
            .map(|idx| Complex64::new(amplitude[idx >> k], amplitude[idx & (levels - 1)]))
            .collect();
        Ok(Constellation {
            bits,
            levels_per_axis: levels,
            norm,
            points,
            pattern_to_pos,
            pos_to_pattern,
            amplitude,
        })
    }

    /// Bits per symbol, `M`.
    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    #[inline]
    pub fn point(&self, index: usize) -> Complex64 {
        self.points[index]
    }

    pub fn levels_per_axis(&self) -> usize {
        self.levels_per_axis
    }

    /// Amplitudes of one axis in ascending order together with the axis bit
    /// pattern of each level.
    pub fn axis_levels(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.pos_to_pattern
            .iter()
            .map(move |&pat| (self.amplitude[pat], pat))
    }

    /// Bit `m` (0-based, MSB first) of point `index`.
    #[inline]
    pub fn bit(&self, index: usize, m: usize) -> u8 {
        ((index >> (self.bits - 1 - m)) & 1) as u8
    }

    /// Index of the point carrying `bits` (MSB first).
    pub fn index_of(&self, bits: &[u8]) -> Result<usize> {
        if bits.len() != self.bits {
            return Err(Error::InvalidArgument(format!(
                "expected {} bits, got {}",
                self.bits,
                bits.len()
            )));
        }
        let mut idx = 0usize;
        for &b in bits {
            if b > 1 {
                return Err(Error::InvalidArgument(format!("bit value {b} is not 0/1")));
            }
            idx = (idx << 1) | b as usize;
        }
        Ok(idx)
    }

    pub fn map_bits(&self, bits: &[u8]) -> Result<Complex64> {
        Ok(self.points[self.index_of(bits)?])
    }

    pub fn bits_of(&self, index: usize) -> Vec<u8> {
        (0..self.bits).map(|m| self.bit(index, m)).collect()
    }

    /// Nearest point to `v`; exact ties go to the smallest point index.
    pub fn hard_demap(&self, v: Complex64) -> (Complex64, Vec<u8>) {
        let idx = self.slice(v);
        (self.points[idx], self.bits_of(idx))
    }

    /// Index of the nearest point to `v`, same tie rule as [`hard_demap`].
    ///
    /// [`hard_demap`]: Self::hard_demap
    #[inline]
    pub fn slice(&self, v: Complex64) -> usize {
        let (re0, re1) = self.axis_candidates(v.re);
        let (im0, im1) = self.axis_candidates(v.im);
        let k = self.bits / 2;
        let index = |re: usize, im: usize| {
            (self.pos_to_pattern[re] << k) | self.pos_to_pattern[im]
        };
        let mut best = index(re0, im0);
        if re1.is_none() && im1.is_none() {
            return best;
        }
        let mut best_d = (v - self.points[best]).norm_sqr();
        for re in [Some(re0), re1].into_iter().flatten() {
            for im in [Some(im0), im1].into_iter().flatten() {
                let idx = index(re, im);
                let d = (v - self.points[idx]).norm_sqr();
                if d < best_d || (d == best_d && idx < best) {
                    best = idx;
                    best_d = d;
                }
            }
        }
        best
    }

    /// Nearest sorted level position along one axis, plus the runner-up when
    /// the coordinate sits exactly halfway between two levels.
    #[inline]
    fn axis_candidates(&self, x: f64) -> (usize, Option<usize>) {
        let top = self.levels_per_axis - 1;
        let t = 0.5 * (x * self.norm + top as f64);
        if !(t > 0.0) {
            return (0, None);
        }
        if t >= top as f64 {
            return (top, None);
        }
        let lo = t.floor();
        let frac = t - lo;
        let lo = lo as usize;
        if frac == 0.5 {
            (lo, Some(lo + 1))
        } else if frac < 0.5 {
            (lo, None)
        } else {
            (lo + 1, None)
        }
    }

    /// Sorted level position of an axis bit pattern.
    pub fn axis_position(&self, pattern: usize) -> usize {
        self.pattern_to_pos[pattern]
    }
}

fn axis_amplitude(pattern: usize, k: usize) -> f64 {
    // innermost term first: (1 − 2b_{k−1}), then wrap outwards
    let bit = |j: usize| ((pattern >> (k - 1 - j)) & 1) as f64;
    let mut acc = 1.0 - 2.0 * bit(k - 1);
    for j in (0..k - 1).rev() {
        let scale = (1usize << (k - 1 - j)) as f64;
        acc = (1.0 - 2.0 * bit(j)) * (scale - acc);
    }
    acc
}

/// Bits and symbols of one transport block carried on two MIMO layers.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportBlock {
    bits_per_symbol: usize,
    /// Flattened `R × 2 × M` bit array.
    bits: Vec<u8>,
    symbols: Vec<ComplexVector2>,
}

impl TransportBlock {
    /// Frames `bits` (length `R·2·M`, RE-major then layer then bit) onto symbols.
    pub fn from_bits(c: &Constellation, bits: Vec<u8>) -> Result<Self> {
        let m = c.bits();
        if bits.is_empty() || bits.len() % (2 * m) != 0 {
            return Err(Error::InvalidArgument(format!(
                "block of {} bits is not a whole number of {}-bit REs",
                bits.len(),
                2 * m
            )));
        }
        let symbols = bits
            .chunks(2 * m)
            .map(|re| Ok(ComplexVector2([c.map_bits(&re[..m])?, c.map_bits(&re[m..])?])))
            .collect::<Result<Vec<_>>>()?;
        Ok(TransportBlock {
            bits_per_symbol: m,
            bits,
            symbols,
        })
    }

    pub fn res(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbols(&self) -> &[ComplexVector2] {
        &self.symbols
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// The `2·M` bits carried by RE `n`, layer 1 first.
    pub fn re_bits(&self, n: usize) -> &[u8] {
        let w = 2 * self.bits_per_symbol;
        &self.bits[n * w..(n + 1) * w]
    }
}

/// A block of `res` REs filled with i.i.d. uniform bits.
pub fn random_block(c: &Constellation, res: usize, seed: u64) -> Result<TransportBlock> {
    if res == 0 {
        return Err(Error::InvalidArgument("a block needs at least one RE".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bits = (0..res * 2 * c.bits()).map(|_| rng.gen::<bool>() as u8).collect();
    TransportBlock::from_bits(c, bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQRT2: f64 = std::f64::consts::SQRT_2;

    #[test]
    fn rejects_bad_orders() {
        for m in [0, 1, 3, 5, 7, 9, 10] {
            assert!(Constellation::new(m).is_err(), "M={m}");
        }
    }

    #[test]
    fn qpsk_points() {
        let c = Constellation::new(2).unwrap();
        let expected = [
            Complex64::new(1.0, 1.0),
            Complex64::new(1.0, -1.0),
            Complex64::new(-1.0, 1.0),
            Complex64::new(-1.0, -1.0),
        ];
        for (p, e) in c.points().iter().zip(expected) {
            assert!((p - e / SQRT2).norm() < 1e-15);
        }
        assert_eq!(c.map_bits(&[0, 0]).unwrap(), c.point(0));
    }

    #[test]
    fn sixteen_qam_levels() {
        let c = Constellation::new(4).unwrap();
        let levels: Vec<f64> = c.axis_levels().map(|(a, _)| a * 10f64.sqrt()).collect();
        let expected = [-3.0, -1.0, 1.0, 3.0];
        for (l, e) in levels.iter().zip(expected) {
            assert!((l - e).abs() < 1e-12);
        }
        // 3GPP 16-QAM per-axis labels: 00 → 1, 01 → 3, 10 → −1, 11 → −3
        assert!((c.map_bits(&[0, 0, 0, 0]).unwrap() - Complex64::new(1.0, 1.0) / 10f64.sqrt()).norm() < 1e-15);
        assert!((c.map_bits(&[0, 1, 1, 1]).unwrap() - Complex64::new(3.0, -3.0) / 10f64.sqrt()).norm() < 1e-15);
    }

    #[test]
    fn unit_energy_all_orders() {
        for m in [2, 4, 6, 8] {
            let c = Constellation::new(m).unwrap();
            assert_eq!(c.len(), 1 << m);
            let e: f64 = c.points().iter().map(|p| p.norm_sqr()).sum::<f64>() / c.len() as f64;
            assert!((e - 1.0).abs() < 1e-12, "M={m}: {e}");
        }
    }

    #[test]
    fn gray_adjacency_exhaustive() {
        for m in [2, 4, 6, 8] {
            let c = Constellation::new(m).unwrap();
            let step = 2.0 / c.norm;
            for i in 0..c.len() {
                for j in 0..c.len() {
                    let d = c.point(i) - c.point(j);
                    let horizontal = (d.re.abs() - step).abs() < 1e-9 && d.im.abs() < 1e-9;
                    let vertical = (d.im.abs() - step).abs() < 1e-9 && d.re.abs() < 1e-9;
                    if horizontal || vertical {
                        assert_eq!((i ^ j).count_ones(), 1, "M={m} {i} {j}");
                    }
                }
            }
        }
    }

    #[test]
    fn map_demap_round_trip() {
        for m in [2, 4, 6, 8] {
            let c = Constellation::new(m).unwrap();
            let max_e = c.points().iter().map(|p| p.norm_sqr()).fold(0.0, f64::max);
            for idx in 0..c.len() {
                let bits = c.bits_of(idx);
                let x = c.map_bits(&bits).unwrap();
                assert!(x.norm_sqr() <= max_e);
                let (p, back) = c.hard_demap(x);
                assert_eq!(p, x);
                assert_eq!(back, bits);
            }
        }
        let c = Constellation::new(4).unwrap();
        assert!(c.map_bits(&[0, 1, 0]).is_err());
    }

    #[test]
    fn demap_tie_goes_to_smallest_index() {
        let c = Constellation::new(2).unwrap();
        let (p, bits) = c.hard_demap(Complex64::new(0.0, 0.0));
        assert_eq!(bits, vec![0, 0]);
        assert_eq!(p, c.point(0));
    }

    #[test]
    fn demap_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for m in [2, 4, 6, 8] {
            let c = Constellation::new(m).unwrap();
            for _ in 0..10_000 {
                let v = Complex64::new(rng.gen_range(-1.6..1.6), rng.gen_range(-1.6..1.6));
                let brute = (0..c.len())
                    .min_by(|&a, &b| {
                        (v - c.point(a))
                            .norm_sqr()
                            .total_cmp(&(v - c.point(b)).norm_sqr())
                            .then(a.cmp(&b))
                    })
                    .unwrap();
                assert_eq!(c.slice(v), brute);
            }
        }
    }

    #[test]
    fn random_block_properties() {
        let c = Constellation::new(8).unwrap();
        let a = random_block(&c, 1, 5).unwrap();
        assert_eq!(a.res(), 1);
        assert_eq!(a.symbols().len(), 1);
        assert_eq!(a.bits().len(), 16);

        let a = random_block(&c, 64, 42).unwrap();
        let b = random_block(&c, 64, 42).unwrap();
        assert_eq!(a, b);
        for n in 0..a.res() {
            let bits = a.re_bits(n);
            assert_eq!(a.symbols()[n].0[0], c.map_bits(&bits[..8]).unwrap());
            assert_eq!(a.symbols()[n].0[1], c.map_bits(&bits[8..]).unwrap());
        }
        assert!(random_block(&c, 0, 1).is_err());
    }

    #[test]
    fn bit_frequency_is_balanced() {
        let c = Constellation::new(8).unwrap();
        // 62_500 REs × 16 bits = 10^6 bits
        let blk = random_block(&c, 62_500, 2024).unwrap();
        let n = blk.bits().len() as f64;
        let ones = blk.bits().iter().map(|&b| b as f64).sum::<f64>();
        let sigma = (n * 0.25).sqrt();
        assert!((ones - n / 2.0).abs() < 3.0 * sigma);
    }
}
