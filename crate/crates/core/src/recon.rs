//! Backprojection-filtering pipelines: `λ̂ = S_h (K'K)⁻¹ K'y`, with bandwidths
//! fixed, GCV-selected or oracle-selected, and the optional negativity
//! reduction ("+" methods).

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::circulant::{eig_bccb_with, BccbGenerator, Spectrum2D};
use crate::error::{Error, Result};
use crate::fft::Fft2d;
use crate::gcv::{
    minimize_elliptical_from, minimize_radial, EllipticalBounds, GcvPrecompute, RadialSelection,
};
use crate::harness::OracleProblem;
use crate::kernels::{radial_spectrum, Bandwidth, RadialBandwidth};
use crate::projector::{Image, ImageGrid, KtkModel, Projector, Sinogram, SinogramGeometry, DEFAULT_FLOOR_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    Bpf,
    Bpfe,
    BpfPlus,
    BpfePlus,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Bpf, Method::Bpfe, Method::BpfPlus, Method::BpfePlus];

    pub fn is_elliptical(self) -> bool {
        matches!(self, Method::Bpfe | Method::BpfePlus)
    }

    pub fn reduces_negatives(self) -> bool {
        matches!(self, Method::BpfPlus | Method::BpfePlus)
    }

    /// The method without negativity reduction.
    pub fn base(self) -> Method {
        match self {
            Method::BpfPlus => Method::Bpf,
            Method::BpfePlus => Method::Bpfe,
            m => m,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Bpf => "bpf",
            Method::Bpfe => "bpfe",
            Method::BpfPlus => "bpf+",
            Method::BpfePlus => "bpfe+",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bpf" => Ok(Method::Bpf),
            "bpfe" => Ok(Method::Bpfe),
            "bpf+" | "bpfplus" => Ok(Method::BpfPlus),
            "bpfe+" | "bpfeplus" => Ok(Method::BpfePlus),
            other => Err(Error::InvalidInput(format!(
                "unknown method '{other}' (expected bpf, bpfe, bpf+ or bpfe+)"
            ))),
        }
    }
}

/// How the smoothing bandwidth is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthMode {
    Fixed(Bandwidth),
    Gcv,
    /// Minimize RMSE against this ground truth.
    Oracle(Image),
}

/// Default search box: FWHM from half a pixel to half the shorter side,
/// `|ρ| ≤ 0.95`.
pub fn default_bounds(grid: &ImageGrid) -> EllipticalBounds {
    let hi = 0.5 * grid.nx.min(grid.ny) as f64;
    EllipticalBounds::new((0.5, hi.max(1.0)), 0.95).expect("default bounds are valid")
}

#[derive(Debug, Clone)]
pub struct ReconRequest {
    pub sinogram: Sinogram,
    pub grid: ImageGrid,
    pub method: Method,
    pub bandwidth: BandwidthMode,
    pub bounds: EllipticalBounds,
    pub floor_eps: f64,
}

impl ReconRequest {
    pub fn new(sinogram: Sinogram, grid: ImageGrid, method: Method, bandwidth: BandwidthMode) -> Self {
        Self {
            sinogram,
            grid,
            method,
            bandwidth,
            bounds: default_bounds(&grid),
            floor_eps: DEFAULT_FLOOR_EPS,
        }
    }
}

/// Wall-clock milliseconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub setup_ms: f64,
    pub backproject_ms: f64,
    pub select_ms: f64,
    pub filter_ms: f64,
    pub negativity_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegativityReport {
    pub iterations: usize,
    pub converged: bool,
    /// Negative mass over `‖λ‖₁` of the returned image.
    pub negative_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub floored_count: usize,
    pub boundary_hit: bool,
    pub converged: bool,
    pub zeta: Option<f64>,
    pub c_of_h: Option<f64>,
    pub radial_start: Option<RadialBandwidth>,
    pub oracle_rmse: Option<f64>,
    pub objective_evaluations: usize,
    pub optimizer_iterations: usize,
    /// `(parameters, objective)` for every coarse-grid point of the radial search.
    pub zeta_trace: Vec<(f64, f64)>,
    pub negativity: Option<NegativityReport>,
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconResult {
    pub image: Image,
    pub bandwidth: Bandwidth,
    pub diagnostics: Diagnostics,
}

/// Projector, `K'K` model and FFT workspace for one geometry.
pub struct BpfEngine {
    proj: Projector,
    model: KtkModel,
    fft: Fft2d,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

impl BpfEngine {
    pub fn new(grid: ImageGrid, geom: SinogramGeometry, floor_eps: f64) -> Result<Self> {
        let proj = Projector::new(grid, geom)?;
        let mut fft = Fft2d::new(grid.ny, grid.nx);
        let model = KtkModel::from_projector(&proj, floor_eps, &mut fft)?;
        Ok(Self { proj, model, fft })
    }

    pub fn from_parts(proj: Projector, model: KtkModel) -> Result<Self> {
        let grid = *proj.grid();
        crate::projector::check_spectrum_grid(&model.spectrum, &grid)?;
        Ok(Self {
            proj,
            model,
            fft: Fft2d::new(grid.ny, grid.nx),
        })
    }

    pub fn projector(&self) -> &Projector {
        &self.proj
    }

    pub fn model(&self) -> &KtkModel {
        &self.model
    }

    pub fn grid(&self) -> ImageGrid {
        *self.proj.grid()
    }

    pub fn backproject(&self, y: &Sinogram) -> Result<Image> {
        self.proj.back(y)
    }

    pub fn precompute(&mut self, kty: &Image, y: &Sinogram) -> Result<GcvPrecompute> {
        GcvPrecompute::from_backprojection(kty, y.sum_of_squares(), y.geometry.len(), &self.model, &mut self.fft)
    }

    /// Fourier transform of the unsmoothed least-squares image `(K'K)⁻¹K'y`.
    pub fn ls_spectrum(&mut self, kty: &Image) -> Vec<Complex64> {
        let mut buf = self.fft.forward_real(&kty.values);
        for (i, z) in buf.iter_mut().enumerate() {
            *z /= self.model.effective(i);
        }
        buf
    }

    /// `S_h` applied to an image given by its spectrum.
    pub fn smooth(&mut self, spectrum: &[Complex64], omega: &Spectrum2D) -> Image {
        let mut buf: Vec<Complex64> = spectrum.iter().zip(omega.values()).map(|(z, &w)| z * w).collect();
        Image {
            grid: self.grid(),
            values: self.fft.inverse_real(&mut buf),
        }
    }

    pub fn kernel_spectrum(&mut self, bw: &Bandwidth) -> Result<Spectrum2D> {
        let grid = self.grid();
        bw.spectrum(&grid, &mut self.fft)
    }

    pub fn fft(&mut self) -> &mut Fft2d {
        &mut self.fft
    }
}

/// `S (K'K)⁻¹ K'y` for an arbitrary symmetric kernel generator, fused into
/// one Fourier-domain pass.
pub fn bpf_reconstruct(y: &Sinogram, grid: &ImageGrid, kernel: &BccbGenerator, floor_eps: f64) -> Result<Image> {
    let mut engine = BpfEngine::new(*grid, y.geometry, floor_eps)?;
    let kty = engine.backproject(y)?;
    let omega = eig_bccb_with(kernel, engine.fft())?;
    crate::projector::check_spectrum_grid(&omega, grid)?;
    let ls = engine.ls_spectrum(&kty);
    Ok(engine.smooth(&ls, &omega))
}

pub const NEGATIVITY_MAX_ITER: usize = 50;
pub const NEGATIVITY_TOL: f64 = 1e-6;

/// Spreads negative mass into its neighbourhood with a radially symmetric
/// Gaussian until it is negligible.
///
/// Each step replaces `λ = λ⁺ − λ⁻` by `λ⁺ − G*λ⁻`, which keeps the total
/// activity. It stops once `‖λ⁻‖₁ < 10⁻⁶‖λ‖₁`, then zeroes the remaining
/// negatives and rescales to the original total. After 50 steps without
/// convergence the iterate with the least negative mass is returned as is.
pub fn reduce_negatives(img: &Image, fwhm: RadialBandwidth) -> (Image, NegativityReport) {
    let grid = img.grid;
    let mut fft = Fft2d::new(grid.ny, grid.nx);
    let omega = radial_spectrum(fwhm, &grid);
    reduce_negatives_with(img, &omega, &mut fft)
}

pub fn reduce_negatives_with(img: &Image, omega: &Spectrum2D, fft: &mut Fft2d) -> (Image, NegativityReport) {
    let total: f64 = img.total();
    let mut values = img.values.clone();
    let negative_mass = |v: &[f64]| -> (f64, f64) {
        let mut neg = 0.0;
        let mut l1 = 0.0;
        for &x in v {
            l1 += x.abs();
            if x < 0.0 {
                neg -= x;
            }
        }
        (neg, l1)
    };
    let mut best = values.clone();
    let (mut best_neg, mut best_l1) = negative_mass(&values);
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let (neg, l1) = negative_mass(&values);
        if neg < best_neg * (1.0 - 1e-15) {
            best.clone_from(&values);
            best_neg = neg;
            best_l1 = l1;
        }
        if neg < NEGATIVITY_TOL * l1 || neg == 0.0 {
            converged = true;
            break;
        }
        if iterations == NEGATIVITY_MAX_ITER {
            break;
        }
        iterations += 1;
        let negative: Vec<f64> = values.iter().map(|&x| (-x).max(0.0)).collect();
        let mut buf = fft.forward_real(&negative);
        for (z, &w) in buf.iter_mut().zip(omega.values()) {
            *z *= w;
        }
        let spread = fft.inverse_real(&mut buf);
        for (v, s) in values.iter_mut().zip(spread) {
            *v = v.max(0.0) - s;
        }
    }
    if !converged {
        return (
            Image { grid: img.grid, values: best },
            NegativityReport {
                iterations,
                converged,
                negative_fraction: if best_l1 > 0.0 { best_neg / best_l1 } else { 0.0 },
            },
        );
    }
    if values.iter().any(|&x| x < 0.0) {
        values.iter_mut().for_each(|x| *x = x.max(0.0));
        let kept: f64 = values.iter().sum();
        if kept > 0.0 && total > 0.0 {
            let scale = total / kept;
            values.iter_mut().for_each(|x| *x *= scale);
        }
    }
    (
        Image { grid: img.grid, values },
        NegativityReport {
            iterations,
            converged,
            negative_fraction: 0.0,
        },
    )
}

/// Runs a full request.
pub fn reconstruct(req: &ReconRequest) -> Result<ReconResult> {
    let start = Instant::now();
    let mut engine = BpfEngine::new(req.grid, req.sinogram.geometry, req.floor_eps)?;
    let setup_ms = ms(start);
    let mut result = reconstruct_with(&mut engine, req)?;
    result.diagnostics.timings.setup_ms = setup_ms;
    result.diagnostics.timings.total_ms = ms(start);
    Ok(result)
}

/// [`reconstruct`] with a prepared engine for the request's geometry.
pub fn reconstruct_with(engine: &mut BpfEngine, req: &ReconRequest) -> Result<ReconResult> {
    let start = Instant::now();
    if engine.grid() != req.grid || *engine.projector().geometry() != req.sinogram.geometry {
        return Err(Error::GeometryMismatch("engine was built for a different geometry".into()));
    }
    let mut diag = Diagnostics {
        floored_count: engine.model().floored_count(),
        converged: true,
        ..Diagnostics::default()
    };
    let t = Instant::now();
    let kty = engine.backproject(&req.sinogram)?;
    diag.timings.backproject_ms = ms(t);

    let t = Instant::now();
    let ls = engine.ls_spectrum(&kty);
    let bandwidth = match &req.bandwidth {
        BandwidthMode::Fixed(bw) => *bw,
        BandwidthMode::Gcv => {
            let pre = engine.precompute(&kty, &req.sinogram)?;
            select_gcv(&pre, &req.grid, req.method, req.bounds, &mut diag)?
        }
        BandwidthMode::Oracle(truth) => {
            let mut problem = OracleProblem::new(&ls, truth, req.bounds, true)?;
            let found = problem.search(req.method, &[])?;
            diag.oracle_rmse = Some(found.rmse);
            diag.objective_evaluations = found.evaluations;
            diag.boundary_hit = found.boundary_hit;
            found.bandwidth
        }
    };
    diag.timings.select_ms = ms(t);

    let t = Instant::now();
    let omega = engine.kernel_spectrum(&bandwidth)?;
    let mut image = engine.smooth(&ls, &omega);
    diag.timings.filter_ms = ms(t);

    if req.method.reduces_negatives() {
        let t = Instant::now();
        let radial = radial_spectrum(bandwidth.radial_equivalent(), &req.grid);
        let (reduced, report) = reduce_negatives_with(&image, &radial, engine.fft());
        image = reduced;
        diag.negativity = Some(report);
        diag.timings.negativity_ms = ms(t);
    }
    if image.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("reconstructed image".into()));
    }
    diag.timings.total_ms = ms(start);
    Ok(ReconResult {
        image,
        bandwidth,
        diagnostics: diag,
    })
}

/// GCV selection for `method`'s kernel family, recording diagnostics.
pub fn select_gcv(
    pre: &GcvPrecompute,
    grid: &ImageGrid,
    method: Method,
    bounds: EllipticalBounds,
    diag: &mut Diagnostics,
) -> Result<Bandwidth> {
    let radial = minimize_radial(pre, grid, bounds.h)?;
    diag.zeta_trace = radial_trace(pre, grid, bounds.h)?;
    if !method.is_elliptical() {
        record_radial(diag, &radial);
        return Ok(Bandwidth::Radial(radial.bandwidth));
    }
    let sel = minimize_elliptical_from(pre, grid, bounds, radial)?;
    diag.zeta = Some(sel.objective.zeta);
    diag.c_of_h = Some(sel.objective.c_of_h);
    diag.radial_start = Some(radial.bandwidth);
    diag.boundary_hit = sel.boundary_hit;
    diag.converged = sel.converged;
    diag.optimizer_iterations = sel.iterations;
    Ok(Bandwidth::Elliptical(sel.bandwidth))
}

fn record_radial(diag: &mut Diagnostics, radial: &RadialSelection) {
    diag.zeta = Some(radial.objective.zeta);
    diag.c_of_h = Some(radial.objective.c_of_h);
    diag.boundary_hit = radial.boundary_hit;
}

/// `ζ` on the coarse radial grid, for reporting.
fn radial_trace(pre: &GcvPrecompute, grid: &ImageGrid, range: (f64, f64)) -> Result<Vec<(f64, f64)>> {
    let n = crate::gcv::RADIAL_GRID_POINTS;
    let (a, b) = (range.0.ln(), range.1.ln());
    (0..n)
        .map(|i| {
            let h = (a + (b - a) * i as f64 / (n - 1) as f64).exp();
            let omega = radial_spectrum(RadialBandwidth::new(h)?, grid);
            Ok((h, crate::gcv::zeta(pre, &omega)?.zeta))
        })
        .collect()
}
