//! Fixed-size complex linear algebra for the 2×2 MIMO case.
//!
//! Everything here works on small value types, so the detectors and the
//! feature extractor never allocate. Only what the receiver actually needs is
//! provided: QR factorization, eigenvalues of a Hermitian matrix and the MMSE
//! weight matrix.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// A complex 2-vector, e.g. a received vector or a channel column.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ComplexVector2(pub [Complex64; 2]);

/// A complex 2×2 matrix stored row-major: `m[row][col]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ComplexMatrix2(pub [[Complex64; 2]; 2]);

impl ComplexVector2 {
    pub const ZERO: Self = ComplexVector2([Complex64::new(0.0, 0.0); 2]);

    pub fn new(a: Complex64, b: Complex64) -> Self {
        ComplexVector2([a, b])
    }

    /// Inner product `self^H · other`.
    #[inline]
    pub fn dot(&self, other: &Self) -> Complex64 {
        self.0[0].conj() * other.0[0] + self.0[1].conj() * other.0[1]
    }

    #[inline]
    pub fn norm_sqr(&self) -> f64 {
        self.0[0].norm_sqr() + self.0[1].norm_sqr()
    }

    #[inline]
    pub fn scale(&self, s: Complex64) -> Self {
        ComplexVector2([self.0[0] * s, self.0[1] * s])
    }

    #[inline]
    pub fn scale_re(&self, s: f64) -> Self {
        ComplexVector2([self.0[0] * s, self.0[1] * s])
    }

    #[inline]
    pub fn add(&self, other: &Self) -> Self {
        ComplexVector2([self.0[0] + other.0[0], self.0[1] + other.0[1]])
    }

    #[inline]
    pub fn sub(&self, other: &Self) -> Self {
        ComplexVector2([self.0[0] - other.0[0], self.0[1] - other.0[1]])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl ComplexMatrix2 {
    pub fn identity() -> Self {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        ComplexMatrix2([[one, zero], [zero, one]])
    }

    pub fn zero() -> Self {
        ComplexMatrix2::default()
    }

    /// Builds a matrix from its two columns.
    pub fn from_columns(c1: ComplexVector2, c2: ComplexVector2) -> Self {
        ComplexMatrix2([[c1.0[0], c2.0[0]], [c1.0[1], c2.0[1]]])
    }

    /// Column `j` (0-based).
    #[inline]
    pub fn column(&self, j: usize) -> ComplexVector2 {
        ComplexVector2([self.0[0][j], self.0[1][j]])
    }

    /// Row `i` (0-based) as a vector of the raw entries (no conjugation).
    #[inline]
    pub fn row(&self, i: usize) -> ComplexVector2 {
        ComplexVector2(self.0[i])
    }

    pub fn hermitian(&self) -> Self {
        let m = &self.0;
        ComplexMatrix2([[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]])
    }

    pub fn mul(&self, other: &Self) -> Self {
        let a = &self.0;
        let b = &other.0;
        let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, entry) in row.iter_mut().enumerate() {
                *entry = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        ComplexMatrix2(out)
    }

    #[inline]
    pub fn mul_vec(&self, v: &ComplexVector2) -> ComplexVector2 {
        let m = &self.0;
        ComplexVector2([
            m[0][0] * v.0[0] + m[0][1] * v.0[1],
            m[1][0] * v.0[0] + m[1][1] * v.0[1],
        ])
    }

    pub fn scale_re(&self, s: f64) -> Self {
        let m = &self.0;
        ComplexMatrix2([[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]])
    }

    pub fn add(&self, other: &Self) -> Self {
        let (a, b) = (&self.0, &other.0);
        ComplexMatrix2([
            [a[0][0] + b[0][0], a[0][1] + b[0][1]],
            [a[1][0] + b[1][0], a[1][1] + b[1][1]],
        ])
    }

    pub fn det(&self) -> Complex64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn trace(&self) -> Complex64 {
        self.0[0][0] + self.0[1][1]
    }

    /// Gram matrix `self^H · self`.
    pub fn gram(&self) -> Self {
        self.hermitian().mul(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.0
            .iter()
            .flatten()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d.norm_sqr() == 0.0 || !d.re.is_finite() || !d.im.is_finite() {
            return None;
        }
        let inv = d.inv();
        let m = &self.0;
        Some(ComplexMatrix2([
            [m[1][1] * inv, -m[0][1] * inv],
            [-m[1][0] * inv, m[0][0] * inv],
        ]))
    }
}

/// Result of [`qr_decompose_2x2`]: `H = Q·R` with `Q` unitary and `R` upper
/// triangular with a real, non-negative diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Qr2 {
    pub q: ComplexMatrix2,
    pub r: ComplexMatrix2,
}

impl Qr2 {
    pub fn r11(&self) -> Complex64 {
        self.r.0[0][0]
    }
    pub fn r12(&self) -> Complex64 {
        self.r.0[0][1]
    }
    pub fn r22(&self) -> Complex64 {
        self.r.0[1][1]
    }
}

/// Gram–Schmidt QR of a 2×2 complex matrix.
///
/// A rank-one input is accepted and gives `r22 = 0`; the second column of `Q`
/// is then completed with the unit vector orthogonal to the first. A zero first
/// column has no defined factorization under this convention and is rejected.
pub fn qr_decompose_2x2(h: &ComplexMatrix2) -> Result<Qr2> {
    if !h.is_finite() {
        return Err(Error::NonFinite("qr input"));
    }
    let h1 = h.column(0);
    let h2 = h.column(1);
    let r11 = h1.norm_sqr().sqrt();
    if r11 == 0.0 {
        return Err(Error::Degenerate("first column of H is zero"));
    }
    let q1 = h1.scale_re(1.0 / r11);
    let mut r12 = q1.dot(&h2);
    let mut v = h2.sub(&q1.scale(r12));
    // second Gram–Schmidt pass restores orthogonality when h2 is nearly parallel to h1
    let fix = q1.dot(&v);
    r12 += fix;
    v = v.sub(&q1.scale(fix));
    let r22 = v.norm_sqr().sqrt();
    let q2 = if r22 > 0.0 {
        v.scale_re(1.0 / r22)
    } else {
        ComplexVector2([-q1.0[1].conj(), q1.0[0].conj()])
    };
    let zero = Complex64::new(0.0, 0.0);
    Ok(Qr2 {
        q: ComplexMatrix2::from_columns(q1, q2),
        r: ComplexMatrix2([
            [Complex64::new(r11, 0.0), r12],
            [zero, Complex64::new(r22, 0.0)],
        ]),
    })
}

/// Eigenvalues `(min, max)` of a Hermitian 2×2 matrix, closed form.
///
/// The larger root comes from the trace/discriminant form and the smaller one
/// from `det / max`, which keeps the product identity exact to rounding even
/// for badly conditioned inputs.
pub fn hermitian_eigenvalues_2x2(a: &ComplexMatrix2) -> Result<(f64, f64)> {
    if !a.is_finite() {
        return Err(Error::NonFinite("eigenvalue input"));
    }
    let m = &a.0;
    let tol = 1e-10 * a.max_abs().max(1.0);
    if m[0][0].im.abs() > tol
        || m[1][1].im.abs() > tol
        || (m[0][1] - m[1][0].conj()).norm() > tol
    {
        return Err(Error::NotHermitian);
    }
    let p = m[0][0].re;
    let q = m[1][1].re;
    let b = 0.5 * (m[0][1] + m[1][0].conj());
    let half_tr = 0.5 * (p + q);
    let disc = (0.25 * (p - q) * (p - q) + b.norm_sqr()).sqrt();
    let det = p * q - b.norm_sqr();
    let lambda_max = half_tr + disc;
    let lambda_min = if half_tr > 0.0 && lambda_max != 0.0 {
        det / lambda_max
    } else {
        half_tr - disc
    };
    Ok((lambda_min.min(lambda_max), lambda_max.max(lambda_min)))
}

/// MMSE weights `W = (H^H H + σ² I)^{-1} H^H`; row `t` of `W` equalizes layer `t`.
pub fn mmse_weights(h: &ComplexMatrix2, sigma2: f64) -> Result<ComplexMatrix2> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise variance must be positive, got {sigma2}"
        )));
    }
    let hh = h.hermitian();
    let reg = hh.mul(h).add(&ComplexMatrix2::identity().scale_re(sigma2));
    let inv = reg
        .inverse()
        .ok_or(Error::Degenerate("regularized Gram matrix is singular"))?;
    Ok(inv.mul(&hh))
}
