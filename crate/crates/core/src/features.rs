//! Candidate features of one RE, computed from the noise-normalized received
//! vector `ȳ = y/σ` and channel `H̄ = H/σ`.

use std::fmt;

use crate::numerics::{hermitian_eigenvalues_2x2, qr_decompose_2x2, ComplexMatrix2, ComplexVector2};

pub const NUM_FEATURES: usize = 7;

/// Below this `|ȳ^H h̄2|²` the y-h ratio is replaced by [`Y_H_RATIO_CAP`].
pub const Y_H_RATIO_FLOOR: f64 = 1e-30;
pub const Y_H_RATIO_CAP: f64 = 1e12;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = ["g1", "g2", "g3", "g4", "g5", "g6", "g7"];

/// `g1..g7`, stored 0-based:
///
/// | idx | feature | definition |
/// |-----|---------|------------|
/// | 0 | g1 | `|r22|²` |
/// | 1 | g2 | `|ȳ^H h̄1|² / |ȳ^H h̄2|²` |
/// | 2 | g3 | λ_min(H̄^H H̄) |
/// | 3 | g4 | λ_max(H̄^H H̄) |
/// | 4 | g5 | `||h̄1||² + ||h̄2||²` |
/// | 5 | g6 | `|r11|²` |
/// | 6 | g7 | `|r12|²` |
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeatureVector(pub [f64; NUM_FEATURES]);

impl FeatureVector {
    /// Feature `g_i` with 1-based `i`.
    pub fn g(&self, i: usize) -> f64 {
        self.0[i - 1]
    }
}

impl fmt::Display for FeatureVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{}={v:.6e}", FEATURE_NAMES[i])?;
        }
        Ok(())
    }
}

pub fn extract_features(y: &ComplexVector2, h: &ComplexMatrix2, sigma2: f64) -> FeatureVector {
    let inv_sigma = 1.0 / sigma2.sqrt();
    let yb = y.scale_re(inv_sigma);
    let hb = h.scale_re(inv_sigma);
    let h1 = hb.column(0);
    let h2 = hb.column(1);

    let (r11, r12, r22) = match qr_decompose_2x2(&hb) {
        Ok(qr) => (qr.r11().norm_sqr(), qr.r12().norm_sqr(), qr.r22().norm_sqr()),
        // zero first column: H̄ = [0, h̄2] has R = [[0, 0], [0, ||h̄2||]] up to ordering
        Err(_) => (0.0, 0.0, h2.norm_sqr()),
    };

    let num = h1.dot(&yb).norm_sqr();
    let den = h2.dot(&yb).norm_sqr();
    let ratio = if den < Y_H_RATIO_FLOOR { Y_H_RATIO_CAP } else { num / den };

    let (lmin, lmax) = hermitian_eigenvalues_2x2(&hb.gram()).unwrap_or((0.0, 0.0));

    FeatureVector([
        r22,
        ratio,
        lmin.max(0.0),
        lmax,
        h1.norm_sqr() + h2.norm_sqr(),
        r11,
        r12,
    ])
}
