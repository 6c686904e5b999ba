//! Gaussian smoothing kernels `S_h` as BCCB generators, and their spectra `Ω`.
//!
//! Bandwidths are full widths at half maximum in pixels. Kernels are
//! periodized on the grid: each generator entry sums the Gaussian over every
//! periodic image of its offset inside the symmetric window
//! `[-max(n/2, 8σ), max(n/2, 8σ)]`. For narrow kernels this is just the
//! circularly wrapped offset; for wide ones it keeps the spectrum a sampled,
//! aliased Gaussian, hence strictly positive. Every kernel is normalized to
//! unit sum, so `Ω(0,0) = 1`.
//!
//! Axis convention: the first generator index (rows, `ny`) is the `k` offset
//! and pairs with `h1`; the second (columns, `nx`) is `j` and pairs with `h2`.

use serde::{Deserialize, Serialize};

use crate::circulant::{eig_bccb_with, BccbGenerator, Spectrum2D};
use crate::error::{Error, Result};
use crate::fft::Fft2d;
use crate::projector::ImageGrid;

/// `FWHM = 2√(2 ln 2)·σ` for a Gaussian.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / FWHM_PER_SIGMA
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialBandwidth {
    pub fwhm: f64,
}

impl RadialBandwidth {
    pub fn new(fwhm: f64) -> Result<Self> {
        if !(fwhm > 0.0 && fwhm.is_finite()) {
            return Err(Error::InvalidInput(format!("bandwidth {fwhm} must be positive")));
        }
        Ok(Self { fwhm })
    }

    pub fn sigma(&self) -> f64 {
        fwhm_to_sigma(self.fwhm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticalBandwidth {
    pub h1: f64,
    pub h2: f64,
    pub rho: f64,
}

impl EllipticalBandwidth {
    pub fn new(h1: f64, h2: f64, rho: f64) -> Result<Self> {
        if !(h1 > 0.0 && h1.is_finite() && h2 > 0.0 && h2.is_finite()) {
            return Err(Error::InvalidInput(format!("bandwidths ({h1}, {h2}) must be positive")));
        }
        if !(rho.abs() < 1.0) {
            return Err(Error::InvalidInput(format!("correlation {rho} must lie in (-1, 1)")));
        }
        Ok(Self { h1, h2, rho })
    }

    pub fn isotropic(h: RadialBandwidth) -> Self {
        Self {
            h1: h.fwhm,
            h2: h.fwhm,
            rho: 0.0,
        }
    }
}

/// Either kernel family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    Radial(RadialBandwidth),
    Elliptical(EllipticalBandwidth),
}

impl Bandwidth {
    pub fn generator(&self, grid: &ImageGrid) -> BccbGenerator {
        match self {
            Bandwidth::Radial(h) => gaussian_radial(*h, grid),
            Bandwidth::Elliptical(b) => gaussian_elliptical(*b, grid),
        }
    }

    /// Spectrum `Ω`; radial kernels take the separable shortcut.
    pub fn spectrum(&self, grid: &ImageGrid, fft: &mut Fft2d) -> Result<Spectrum2D> {
        match self {
            Bandwidth::Radial(h) => Ok(radial_spectrum(*h, grid)),
            Bandwidth::Elliptical(b) => eig_bccb_with(&gaussian_elliptical(*b, grid), fft),
        }
    }

    /// FWHM of the radially symmetric filter used by negativity reduction:
    /// the geometric mean of the axes for elliptical kernels.
    pub fn radial_equivalent(&self) -> RadialBandwidth {
        match self {
            Bandwidth::Radial(h) => *h,
            Bandwidth::Elliptical(b) => RadialBandwidth {
                fwhm: (b.h1 * b.h2).sqrt(),
            },
        }
    }

    /// `(h1, h2, rho)`; radial kernels report `(h, None, None)`.
    pub fn params(&self) -> (f64, Option<f64>, Option<f64>) {
        match self {
            Bandwidth::Radial(h) => (h.fwhm, None, None),
            Bandwidth::Elliptical(b) => (b.h1, Some(b.h2), Some(b.rho)),
        }
    }
}

/// Which exponent the elliptical kernel uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum KernelForm {
    /// Standard bivariate Gaussian: `exp{-Q/(2(1-ρ²))}` with `σᵢ` from FWHM.
    #[default]
    Standard,
    /// The displayed formula taken literally: `exp{-Q/(1-ρ²)}` with `hᵢ` in
    /// place of `σᵢ` and no FWHM conversion.
    Literal,
}

/// For every index `0..n`, the signed periodic offsets of that index inside the
/// symmetric truncation window.
fn axis_offsets(n: usize, sigma: f64) -> Vec<Vec<f64>> {
    let half = n as f64 / 2.0;
    let window = half.max(8.0 * sigma);
    let images = (window / n as f64).ceil() as i64 + 1;
    (0..n)
        .map(|k| {
            (-images..=images)
                .map(|a| k as f64 + (a * n as i64) as f64)
                .filter(|o| o.abs() <= window)
                .collect()
        })
        .collect()
}

fn gaussian_1d(n: usize, sigma: f64) -> Vec<f64> {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut g: Vec<f64> = axis_offsets(n, sigma)
        .iter()
        .map(|offs| offs.iter().map(|o| (-o * o * inv).exp()).sum())
        .collect();
    for k in 1..n.div_ceil(2) {
        g[n - k] = g[k];
    }
    let total: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= total);
    g
}

/// Radially symmetric Gaussian with the given FWHM.
pub fn gaussian_radial(h: RadialBandwidth, grid: &ImageGrid) -> BccbGenerator {
    let sigma = h.sigma();
    let rows = gaussian_1d(grid.ny, sigma);
    let cols = gaussian_1d(grid.nx, sigma);
    BccbGenerator::from_fn(grid.ny, grid.nx, |l, m| rows[l] * cols[m])
}

/// Spectrum of [`gaussian_radial`] without a 2D FFT: the kernel is separable,
/// so `Ω(k, j) = ω_rows(k)·ω_cols(j)`.
pub fn radial_spectrum(h: RadialBandwidth, grid: &ImageGrid) -> Spectrum2D {
    let sigma = h.sigma();
    let rows = cosine_transform(&gaussian_1d(grid.ny, sigma));
    let cols = cosine_transform(&gaussian_1d(grid.nx, sigma));
    let mut values = Vec::with_capacity(grid.len());
    for r in &rows {
        values.extend(cols.iter().map(|c| r * c));
    }
    Spectrum2D::new(grid.ny, grid.nx, values).expect("dimensions match by construction")
}

/// DFT of an even sequence: `ω_k = Σ_l g_l cos(2πkl/n)`.
fn cosine_transform(g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let step = 2.0 * std::f64::consts::PI / n as f64;
    (0..n)
        .map(|k| {
            g.iter()
                .enumerate()
                .map(|(l, v)| v * (step * ((k * l) % n) as f64).cos())
                .sum()
        })
        .collect()
}

/// Elliptically symmetric Gaussian with parameters `(h1, h2, ρ)`.
pub fn gaussian_elliptical(b: EllipticalBandwidth, grid: &ImageGrid) -> BccbGenerator {
    gaussian_elliptical_form(b, grid, KernelForm::Standard)
}

pub fn gaussian_elliptical_form(b: EllipticalBandwidth, grid: &ImageGrid, form: KernelForm) -> BccbGenerator {
    // The literal form exp{-Q(h)/(1-ρ²)} is the standard one with σᵢ = hᵢ/√2.
    let (s1, s2) = match form {
        KernelForm::Standard => (fwhm_to_sigma(b.h1), fwhm_to_sigma(b.h2)),
        KernelForm::Literal => (b.h1 / std::f64::consts::SQRT_2, b.h2 / std::f64::consts::SQRT_2),
    };
    let rho = b.rho;
    let denom = 2.0 * (1.0 - rho * rho);
    let (a11, a22, a12) = (1.0 / (s1 * s1 * denom), 1.0 / (s2 * s2 * denom), -2.0 * rho / (s1 * s2 * denom));
    let row_offs = axis_offsets(grid.ny, s1);
    let col_offs = axis_offsets(grid.nx, s2);
    let mut g = BccbGenerator::from_fn(grid.ny, grid.nx, |l, m| {
        let mut acc = 0.0;
        for &k in &row_offs[l] {
            for &j in &col_offs[m] {
                acc += (-(a11 * k * k + a22 * j * j + a12 * k * j)).exp();
            }
        }
        acc
    });
    g.symmetrize();
    let total = g.sum();
    BccbGenerator::new(grid.ny, grid.nx, g.values().iter().map(|v| v / total).collect())
        .expect("dimensions match by construction")
}
