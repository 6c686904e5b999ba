//! Spectral algebra for symmetric circulant and block-circulant (BCCB) matrices.
//!
//! Everything here works in canonical DFT frequency order `k = 0..p-1`. The
//! real orthonormal eigenbasis `V` of a symmetric circulant is never
//! materialized; `apply_vt_1d` and `apply_v_1d` recombine the real and
//! imaginary parts of one FFT instead. Column `k` of `V` is
//!
//! * `1/√p` for `k = 0`,
//! * `√(2/p)·cos(2πkj/p)` for `0 < k < p/2`,
//! * `(-1)^j/√p` for `k = p/2` (even `p` only),
//! * `√(2/p)·sin(2πkj/p)` for `k > p/2`,
//!
//! so column `k` carries eigenvalue `d_k` and the pair `(k, p-k)` shares one
//! eigenvalue.
//!
//! FFT convention: forward unnormalized, inverse carries `1/n`. All scaling
//! lives in this module.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::fft::Fft2d;

const RESIDUE_TOL: f64 = 1e-10;

/// First row of a symmetric circulant matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymCirc1D {
    first_row: Vec<f64>,
}

impl SymCirc1D {
    /// Requires `p >= 2` and exact symmetry `c_j == c_{p-j}` as stored.
    pub fn new(first_row: Vec<f64>) -> Result<Self> {
        let p = first_row.len();
        if p < 2 {
            return Err(Error::InvalidInput(format!("circulant order {p} < 2")));
        }
        for j in 1..p {
            if first_row[j] != first_row[p - j] {
                return Err(Error::InvalidInput(format!(
                    "first row is not symmetric: c[{j}] = {} but c[{}] = {}",
                    first_row[j],
                    p - j,
                    first_row[p - j]
                )));
            }
        }
        Ok(Self { first_row })
    }

    pub fn first_row(&self) -> &[f64] {
        &self.first_row
    }

    pub fn len(&self) -> usize {
        self.first_row.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_row.is_empty()
    }

    /// Dense `p×p` matrix, `C[i][j] = c[(j - i) mod p]`. Test-scale only.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let p = self.len();
        (0..p)
            .map(|i| (0..p).map(|j| self.first_row[(j + p - i) % p]).collect())
            .collect()
    }
}

/// Real eigenvalues of a symmetric circulant in canonical frequency order.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum1D {
    pub eigenvalues: Vec<f64>,
}

/// Eigenvalues of a symmetric circulant via one length-`p` FFT of its first row.
pub fn eig_sym_circ_1d(c: &SymCirc1D) -> Result<Spectrum1D> {
    let p = c.len();
    let mut buf: Vec<Complex64> = c.first_row.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(p).process(&mut buf);
    let scale = c.first_row.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    check_residue(&buf, scale)?;
    Ok(Spectrum1D {
        eigenvalues: buf.iter().map(|z| z.re).collect(),
    })
}

fn check_residue(buf: &[Complex64], scale: f64) -> Result<()> {
    let residue = buf.iter().fold(0.0_f64, |m, z| m.max(z.im.abs()));
    let tolerance = RESIDUE_TOL * scale;
    if residue > tolerance {
        return Err(Error::ImaginaryResidue { residue, tolerance });
    }
    Ok(())
}

/// `α = V'x` for the real eigenbasis described in the module docs.
pub fn apply_vt_1d(x: &[f64]) -> Vec<f64> {
    let p = x.len();
    if p == 0 {
        return Vec::new();
    }
    let mut beta: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(p).process(&mut beta);
    coefficients_from_fft_1d(&beta)
}

fn coefficients_from_fft_1d(beta: &[Complex64]) -> Vec<f64> {
    let p = beta.len();
    let inv_sqrt_p = 1.0 / (p as f64).sqrt();
    let pair_scale = std::f64::consts::SQRT_2 * inv_sqrt_p;
    (0..p)
        .map(|k| {
            if k == 0 || 2 * k == p {
                beta[k].re * inv_sqrt_p
            } else if 2 * k < p {
                beta[k].re * pair_scale
            } else {
                // sin partner of frequency p-k: Σ x sin(2πkj/p) = -Im β_k
                -beta[k].im * pair_scale
            }
        })
        .collect()
}

/// `x = Vα`, the exact inverse of [`apply_vt_1d`].
pub fn apply_v_1d(alpha: &[f64]) -> Vec<f64> {
    let p = alpha.len();
    if p == 0 {
        return Vec::new();
    }
    let mut buf = hermitian_from_coefficients_1d(alpha);
    FftPlanner::new().plan_fft_inverse(p).process(&mut buf);
    buf.iter().map(|z| z.re).collect()
}

/// Builds the Hermitian spectrum whose unnormalized inverse DFT is `Vα`.
fn hermitian_from_coefficients_1d(alpha: &[f64]) -> Vec<Complex64> {
    let p = alpha.len();
    let inv_sqrt_p = 1.0 / (p as f64).sqrt();
    let half_pair = inv_sqrt_p / std::f64::consts::SQRT_2;
    let mut buf = vec![Complex64::new(0.0, 0.0); p];
    for k in 0..p {
        if k == 0 || 2 * k == p {
            buf[k] = Complex64::new(alpha[k] * inv_sqrt_p, 0.0);
        } else if 2 * k < p {
            // cos at k, sin at p-k: a cosθ + b sin(-θ) with θ = 2πkj/p
            let z = Complex64::new(alpha[k], alpha[p - k]) * half_pair;
            buf[k] = z;
            buf[p - k] = z.conj();
        }
    }
    buf
}

/// Generator of a BCCB matrix: row `l` holds the first row of block `C^(l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BccbGenerator {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl BccbGenerator {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "generator of {} values does not fill {rows}x{cols}",
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for l in 0..rows {
            for m in 0..cols {
                values.push(f(l, m));
            }
        }
        Self { rows, cols, values }
    }

    /// Identity matrix generator (unit impulse at the origin).
    pub fn identity(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |l, m| if l == 0 && m == 0 { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, l: usize, m: usize) -> f64 {
        self.values[l * self.cols + m]
    }

    fn mirror_index(&self, l: usize, m: usize) -> usize {
        ((self.rows - l) % self.rows) * self.cols + (self.cols - m) % self.cols
    }

    /// Exact point symmetry `g[l][m] == g[-l][-m]`, i.e. the BCCB matrix is symmetric.
    pub fn is_symmetric(&self) -> bool {
        (0..self.rows).all(|l| {
            (0..self.cols).all(|m| self.values[l * self.cols + m] == self.values[self.mirror_index(l, m)])
        })
    }

    /// Replaces `g[l][m]` with the mean of itself and `g[-l][-m]`.
    pub fn symmetrize(&mut self) {
        let src = self.values.clone();
        for l in 0..self.rows {
            for m in 0..self.cols {
                let i = l * self.cols + m;
                self.values[i] = 0.5 * (src[i] + src[self.mirror_index(l, m)]);
            }
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Dense `pq×pq` matrix in row-major vec order. Test-scale only.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let (p, q) = (self.rows, self.cols);
        let n = p * q;
        let mut out = vec![vec![0.0; n]; n];
        for a in 0..p {
            for u in 0..q {
                for b in 0..p {
                    for v in 0..q {
                        out[a * q + u][b * q + v] = self.get((b + p - a) % p, (v + q - u) % q);
                    }
                }
            }
        }
        out
    }
}

/// Real eigenvalues `d[k][j]` of a symmetric BCCB matrix, canonical 2D-DFT order.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum2D {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Spectrum2D {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "spectrum of {} values does not fill {rows}x{cols}",
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn constant(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            values: vec![value; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.values[k * self.cols + j]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn trace(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Eigenvalues of the BCCB matrix generated by `g`: one 2D FFT of the generator.
///
/// With the unnormalized forward transform the mean of `d[k][j]` equals
/// `g[0][0]`, the first element of the matrix.
pub fn eig_bccb(g: &BccbGenerator) -> Result<Spectrum2D> {
    let mut fft = Fft2d::new(g.rows, g.cols);
    eig_bccb_with(g, &mut fft)
}

/// [`eig_bccb`] reusing caller-owned FFT plans.
pub fn eig_bccb_with(g: &BccbGenerator, fft: &mut Fft2d) -> Result<Spectrum2D> {
    let buf = fft.forward_real(&g.values);
    let l1: f64 = g.values.iter().map(|v| v.abs()).sum();
    check_residue(&buf, l1)?;
    Ok(Spectrum2D {
        rows: g.rows,
        cols: g.cols,
        values: buf.iter().map(|z| z.re).collect(),
    })
}

/// `(V_p ⊗ V_q)' x` for a row-major `rows×cols` array: [`apply_vt_1d`] along
/// every row, then along every column.
///
/// The Kronecker basis diagonalizes BCCB matrices whose generator is even in
/// each axis separately (`g[l][m] == g[-l][m] == g[l][-m]`), such as
/// separable or radially symmetric kernels. Point-symmetric generators that
/// lack this property (an elliptical kernel with nonzero correlation) are
/// diagonalized by [`paired_vt_2d`] instead.
pub fn apply_vt_2d(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    separable_apply(x, rows, cols, apply_vt_1d)
}

/// `(V_p ⊗ V_q) α`, the inverse of [`apply_vt_2d`].
pub fn apply_v_2d(alpha: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    separable_apply(alpha, rows, cols, apply_v_1d)
}

fn separable_apply(x: &[f64], rows: usize, cols: usize, f: fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    assert_eq!(x.len(), rows * cols, "array does not match {rows}x{cols}");
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        out.extend(f(row));
    }
    let mut column = vec![0.0; rows];
    for m in 0..cols {
        for l in 0..rows {
            column[l] = out[l * cols + m];
        }
        for (l, v) in f(&column).into_iter().enumerate() {
            out[l * cols + m] = v;
        }
    }
    out
}

fn conjugate_index(k: usize, j: usize, rows: usize, cols: usize) -> usize {
    ((rows - k) % rows) * cols + (cols - j) % cols
}

/// Transform into the real orthonormal basis that pairs each 2D frequency
/// `ν = (k, j)` with its conjugate `-ν`.
///
/// For a self-conjugate `ν` the basis vector is `1/√(pq)·cos θ_ν`; otherwise
/// the lower linear index of the pair holds `√(2/pq)·cos θ_ν` and the other
/// holds `√(2/pq)·sin θ_{-ν}`, with `θ_ν = 2π(kl/p + jm/q)`. Every symmetric
/// BCCB matrix is diagonal in this basis with its eigenvalues in canonical
/// order, and for `cols == 1` it is exactly [`apply_vt_1d`].
pub fn paired_vt_2d(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut fft = Fft2d::new(rows, cols);
    paired_vt_2d_with(x, &mut fft)
}

pub fn paired_vt_2d_with(x: &[f64], fft: &mut Fft2d) -> Vec<f64> {
    let beta = fft.forward_real(x);
    paired_coefficients(&beta, fft.rows(), fft.cols())
}

/// Real coefficients in the paired basis from an unnormalized forward 2D FFT.
pub(crate) fn paired_coefficients(beta: &[Complex64], rows: usize, cols: usize) -> Vec<f64> {
    let n = rows * cols;
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let pair_scale = std::f64::consts::SQRT_2 * inv_sqrt_n;
    let mut out = vec![0.0; n];
    for k in 0..rows {
        for j in 0..cols {
            let i = k * cols + j;
            let c = conjugate_index(k, j, rows, cols);
            out[i] = if c == i {
                beta[i].re * inv_sqrt_n
            } else if i < c {
                beta[i].re * pair_scale
            } else {
                -beta[i].im * pair_scale
            };
        }
    }
    out
}

/// Inverse of [`paired_vt_2d`].
pub fn paired_v_2d(alpha: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut fft = Fft2d::new(rows, cols);
    paired_v_2d_with(alpha, &mut fft)
}

pub fn paired_v_2d_with(alpha: &[f64], fft: &mut Fft2d) -> Vec<f64> {
    let (rows, cols) = (fft.rows(), fft.cols());
    let n = rows * cols;
    assert_eq!(alpha.len(), n, "array does not match {rows}x{cols}");
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let half_pair = inv_sqrt_n / std::f64::consts::SQRT_2;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..rows {
        for j in 0..cols {
            let i = k * cols + j;
            let c = conjugate_index(k, j, rows, cols);
            if c == i {
                buf[i] = Complex64::new(alpha[i] * inv_sqrt_n, 0.0);
            } else if i < c {
                let z = Complex64::new(alpha[i], alpha[c]) * half_pair;
                buf[i] = z;
                buf[c] = z.conj();
            }
        }
    }
    fft.inverse(&mut buf);
    buf.iter().map(|z| z.re).collect()
}

/// `𝓒x` for the symmetric BCCB matrix with spectrum `d`, via FFTs.
pub fn bccb_apply(d: &Spectrum2D, x: &[f64]) -> Vec<f64> {
    let mut fft = Fft2d::new(d.rows, d.cols);
    bccb_apply_with(d, x, &mut fft)
}

pub fn bccb_apply_with(d: &Spectrum2D, x: &[f64], fft: &mut Fft2d) -> Vec<f64> {
    let mut buf = fft.forward_real(x);
    for (z, &w) in buf.iter_mut().zip(&d.values) {
        *z *= w;
    }
    fft.inverse_real(&mut buf)
}
