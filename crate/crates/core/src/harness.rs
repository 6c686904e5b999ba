//! Simulation study: phantoms, Poisson sinograms, RMSE, oracle bandwidths and
//! the Monte-Carlo experiment runner.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::circulant::{bccb_apply_with, Spectrum2D};
use crate::error::{Error, Result};
use crate::fft::Fft2d;
use crate::gcv::{log_grid_golden, nelder_mead, EllipticalBounds, NM_MAX_ITER, REL_TOL};
use crate::kernels::{radial_spectrum, Bandwidth, EllipticalBandwidth, RadialBandwidth};
use crate::projector::{Image, ImageGrid, Sinogram, SinogramGeometry, DEFAULT_FLOOR_EPS};
use crate::recon::{default_bounds, reduce_negatives_with, select_gcv, BpfEngine, Diagnostics, Method};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PhantomKind {
    /// Ten-ellipse head phantom with the higher-contrast intensities
    /// (1, −0.8, −0.2, −0.2, 0.1, …), clamped at zero.
    SheppLogan,
    /// Indicator of a centered disc; radius in pixels.
    UniformDisc { radius: f64 },
    File(PathBuf),
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "shepp_logan" | "shepp-logan" => Ok(PhantomKind::SheppLogan),
            _ if s.starts_with("uniform_disc") || s.starts_with("uniform-disc") => {
                match s.split_once(':') {
                    None => Ok(PhantomKind::UniformDisc { radius: f64::NAN }),
                    Some((_, r)) => {
                        let radius: f64 = r
                            .parse()
                            .map_err(|_| Error::InvalidInput(format!("bad disc radius '{r}'")))?;
                        Ok(PhantomKind::UniformDisc { radius })
                    }
                }
            }
            _ => match s.strip_prefix("file:") {
                Some(path) => Ok(PhantomKind::File(PathBuf::from(path))),
                None => Err(Error::InvalidInput(format!(
                    "unknown phantom '{s}' (expected shepp_logan, uniform_disc[:RADIUS] or file:PATH)"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub grid: ImageGrid,
}

impl PhantomSpec {
    pub fn new(kind: PhantomKind, grid: ImageGrid) -> Self {
        Self { kind, grid }
    }
}

/// `(intensity, a, b, x0, y0, φ in degrees)` on the `[-1, 1]²` square.
const SHEPP_LOGAN: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

const SUPERSAMPLE: usize = 4;

fn shepp_logan(grid: &ImageGrid) -> Image {
    let mut img = Image::zeros(*grid);
    let (sx, sy) = (2.0 / grid.nx as f64, 2.0 / grid.ny as f64);
    let ellipses: Vec<_> = SHEPP_LOGAN
        .iter()
        .map(|&(v, a, b, x0, y0, phi)| {
            let (s, c) = phi.to_radians().sin_cos();
            (v, a * a, b * b, x0, y0, c, s)
        })
        .collect();
    let inv = 1.0 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let mut acc = 0.0;
            for a in 0..SUPERSAMPLE {
                for b in 0..SUPERSAMPLE {
                    let u = -1.0 + sx * (ix as f64 + (a as f64 + 0.5) / SUPERSAMPLE as f64);
                    // row 0 is the top of the head
                    let v = 1.0 - sy * (iy as f64 + (b as f64 + 0.5) / SUPERSAMPLE as f64);
                    for &(val, a2, b2, x0, y0, c, s) in &ellipses {
                        let (dx, dy) = (u - x0, v - y0);
                        let xr = dx * c + dy * s;
                        let yr = -dx * s + dy * c;
                        if xr * xr / a2 + yr * yr / b2 <= 1.0 {
                            acc += val;
                        }
                    }
                }
            }
            img.values[iy * grid.nx + ix] = (acc * inv).max(0.0);
        }
    }
    img
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<Image> {
    let grid = spec.grid;
    match &spec.kind {
        PhantomKind::SheppLogan => Ok(shepp_logan(&grid)),
        PhantomKind::UniformDisc { radius } => {
            let radius = if radius.is_nan() {
                0.35 * grid.nx.min(grid.ny) as f64 * grid.pixel_size
            } else {
                *radius * grid.pixel_size
            };
            if !(radius > 0.0) {
                return Err(Error::InvalidInput(format!("disc radius {radius} must be positive")));
            }
            let mut img = Image::zeros(grid);
            for iy in 0..grid.ny {
                for ix in 0..grid.nx {
                    let (x, y) = grid.center(ix, iy);
                    img.values[iy * grid.nx + ix] = if x * x + y * y <= radius * radius { 1.0 } else { 0.0 };
                }
            }
            Ok(img)
        }
        PhantomKind::File(path) => {
            let img = crate::io::read_image(path)?;
            if img.grid.nx != grid.nx || img.grid.ny != grid.ny {
                return Err(Error::format(
                    path,
                    format!("phantom is {}x{}, expected {}x{}", img.grid.nx, img.grid.ny, grid.nx, grid.ny),
                ));
            }
            if img.values.iter().any(|&v| v < 0.0) {
                return Err(Error::format(path, "phantom has negative activity"));
            }
            Ok(img)
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of one replicate: `seed ⊕ hash(replicate, Λ)`.
pub fn replicate_seed(seed: u64, replicate: usize, lambda: f64) -> u64 {
    seed ^ splitmix64(splitmix64(lambda.to_bits()) ^ replicate as u64)
}

/// Expected counts `μ = Kλ` rescaled to total `Λ`.
pub fn expected_counts(phantom: &Image, geom: &SinogramGeometry, lambda: f64) -> Result<Sinogram> {
    let mu = crate::projector::radon_forward(phantom, geom)?;
    scale_to_total(mu, lambda)
}

fn scale_to_total(mut mu: Sinogram, lambda: f64) -> Result<Sinogram> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("total counts {lambda} must be positive")));
    }
    let total = mu.total();
    if !(total > 0.0) {
        return Err(Error::ZeroProjection);
    }
    let scale = lambda / total;
    mu.values.iter_mut().for_each(|v| *v = (*v * scale).max(0.0));
    Ok(mu)
}

/// Independent Poisson draws around `mean`. LOR `i` draws from its own ChaCha
/// stream `i` under key `seed`, so the result does not depend on visiting order.
pub fn poisson_sample(mean: &Sinogram, seed: u64) -> Result<Sinogram> {
    let mut out = Vec::with_capacity(mean.values.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (i, &mu) in mean.values.iter().enumerate() {
        if mu <= 0.0 {
            out.push(0.0);
            continue;
        }
        rng.set_stream(i as u64);
        rng.set_word_pos(0);
        let dist = Poisson::new(mu).map_err(|e| Error::InvalidInput(format!("Poisson mean {mu}: {e}")))?;
        out.push(dist.sample(&mut rng));
    }
    Sinogram::new(mean.geometry, out)
}

pub fn simulate_sinogram(phantom: &Image, geom: &SinogramGeometry, lambda: f64, seed: u64) -> Result<Sinogram> {
    poisson_sample(&expected_counts(phantom, geom, lambda)?, seed)
}

/// `‖recon − truth‖/√p` after scaling both to unit total activity.
pub fn rmse(recon: &Image, truth: &Image) -> Result<f64> {
    rmse_with(recon, truth, true)
}

pub fn rmse_with(recon: &Image, truth: &Image, normalize: bool) -> Result<f64> {
    if recon.grid.nx != truth.grid.nx || recon.grid.ny != truth.grid.ny {
        return Err(Error::GeometryMismatch("reconstruction and truth grids differ".into()));
    }
    let (a, b) = if normalize {
        (unit_total_scale(recon)?, unit_total_scale(truth)?)
    } else {
        (1.0, 1.0)
    };
    let ss: f64 = recon
        .values
        .iter()
        .zip(&truth.values)
        .map(|(r, t)| (r * a - t * b).powi(2))
        .sum();
    Ok((ss / recon.values.len() as f64).sqrt())
}

fn unit_total_scale(img: &Image) -> Result<f64> {
    let total = img.total();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "cannot normalize an image with total activity {total}"
        )));
    }
    Ok(1.0 / total)
}

/// Best bandwidth against the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub bandwidth: Bandwidth,
    pub rmse: f64,
    pub evaluations: usize,
    pub boundary_hit: bool,
}

pub const ORACLE_RADIAL_POINTS: usize = 60;
pub const ORACLE_GRID_H: usize = 12;
pub const ORACLE_GRID_RHO: usize = 7;

/// RMSE as a function of the bandwidth for one data set.
///
/// Unsmoothed and "+"-free RMSEs are evaluated in the Fourier domain through
/// Parseval's identity; "+" methods go through the image domain.
pub struct OracleProblem {
    grid: ImageGrid,
    ls: Vec<Complex64>,
    truth_hat: Vec<Complex64>,
    truth: Image,
    bounds: EllipticalBounds,
    fft: Fft2d,
    evaluations: usize,
    cache: HashMap<Method, OracleResult>,
}

impl OracleProblem {
    /// `ls` is the spectrum of the unsmoothed least-squares image.
    pub fn new(ls: &[Complex64], truth: &Image, bounds: EllipticalBounds, normalize: bool) -> Result<Self> {
        let grid = truth.grid;
        if ls.len() != grid.len() {
            return Err(Error::GeometryMismatch("spectrum length differs from truth grid".into()));
        }
        let mut fft = Fft2d::new(grid.ny, grid.nx);
        let ls_scale = if normalize {
            let dc = ls[0].re;
            if !(dc > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "reconstruction has nonpositive total activity {dc}"
                )));
            }
            1.0 / dc
        } else {
            1.0
        };
        let truth_scale = if normalize { unit_total_scale(truth)? } else { 1.0 };
        let truth_norm = Image {
            grid,
            values: truth.values.iter().map(|v| v * truth_scale).collect(),
        };
        let truth_hat = fft.forward_real(&truth_norm.values);
        Ok(Self {
            grid,
            ls: ls.iter().map(|z| z * ls_scale).collect(),
            truth_hat,
            truth: truth_norm,
            bounds,
            fft,
            evaluations: 0,
            cache: HashMap::new(),
        })
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    fn spectrum(&mut self, bw: &Bandwidth) -> Result<Spectrum2D> {
        match bw {
            Bandwidth::Radial(h) => Ok(radial_spectrum(*h, &self.grid)),
            Bandwidth::Elliptical(_) => bw.spectrum(&self.grid, &mut self.fft),
        }
    }

    /// RMSE of `method` at bandwidth `bw`.
    pub fn rmse_at(&mut self, method: Method, bw: &Bandwidth) -> Result<f64> {
        self.evaluations += 1;
        let omega = self.spectrum(bw)?;
        let p = self.grid.len() as f64;
        if !method.reduces_negatives() {
            let ss: f64 = self
                .ls
                .iter()
                .zip(&self.truth_hat)
                .zip(omega.values())
                .map(|((z, t), &w)| (z * w - t).norm_sqr())
                .sum();
            return Ok(ss.sqrt() / p);
        }
        let mut buf: Vec<Complex64> = self.ls.iter().zip(omega.values()).map(|(z, &w)| z * w).collect();
        let img = Image {
            grid: self.grid,
            values: self.fft.inverse_real(&mut buf),
        };
        let radial = radial_spectrum(bw.radial_equivalent(), &self.grid);
        let (reduced, _) = reduce_negatives_with(&img, &radial, &mut self.fft);
        // the normalized LS image already has unit total, which "+" keeps
        rmse_with(&reduced, &self.truth, false)
    }

    /// Oracle bandwidth for `method`. `inject` adds candidate bandwidths
    /// (for instance the GCV choice) that the search must beat. Results are
    /// memoized per method; injected points only count on the first call.
    pub fn search(&mut self, method: Method, inject: &[Bandwidth]) -> Result<OracleResult> {
        if let Some(found) = self.cache.get(&method) {
            return Ok(*found);
        }
        let start = self.evaluations;
        let mut best = match method {
            Method::Bpf | Method::BpfPlus => self.radial_search(method)?,
            Method::Bpfe => {
                let radial = self.search(Method::Bpf, &[])?;
                self.elliptical_grid(method, radial)?
            }
            Method::BpfePlus => {
                let a = self.search(Method::Bpfe, &[])?;
                let b = self.search(Method::BpfPlus, &[])?;
                let ra = self.rmse_at(method, &a.bandwidth)?;
                let rb = self.rmse_at(method, &b.bandwidth)?;
                let (bw, r) = if ra <= rb { (a.bandwidth, ra) } else { (b.bandwidth, rb) };
                OracleResult {
                    bandwidth: bw,
                    rmse: r,
                    evaluations: 0,
                    boundary_hit: false,
                }
            }
        };
        for bw in inject {
            let r = self.rmse_at(method, bw)?;
            if r < best.rmse {
                best.bandwidth = *bw;
                best.rmse = r;
            }
        }
        if method.is_elliptical() {
            best = self.polish(method, best)?;
        }
        best.evaluations = self.evaluations - start;
        self.cache.insert(method, best);
        Ok(best)
    }

    fn radial_search(&mut self, method: Method) -> Result<OracleResult> {
        let (lo, hi) = self.bounds.h;
        let m = log_grid_golden(
            |h| self.rmse_at(method, &Bandwidth::Radial(RadialBandwidth::new(h)?)),
            lo,
            hi,
            ORACLE_RADIAL_POINTS,
            REL_TOL,
        )?;
        Ok(OracleResult {
            bandwidth: Bandwidth::Radial(RadialBandwidth::new(m.x)?),
            rmse: m.fx,
            evaluations: 0,
            boundary_hit: m.boundary_hit,
        })
    }

    fn elliptical_grid(&mut self, method: Method, radial: OracleResult) -> Result<OracleResult> {
        let (lo, hi) = (self.bounds.h.0.ln(), self.bounds.h.1.ln());
        let hs: Vec<f64> = (0..ORACLE_GRID_H)
            .map(|i| (lo + (hi - lo) * i as f64 / (ORACLE_GRID_H - 1) as f64).exp())
            .collect();
        let r_max = self.bounds.rho_max.min(0.9);
        let rhos: Vec<f64> = (0..ORACLE_GRID_RHO)
            .map(|i| -r_max + 2.0 * r_max * i as f64 / (ORACLE_GRID_RHO - 1) as f64)
            .collect();
        let mut best = OracleResult {
            bandwidth: radial.bandwidth,
            rmse: radial.rmse,
            evaluations: 0,
            boundary_hit: radial.boundary_hit,
        };
        for &h1 in &hs {
            for &h2 in &hs {
                for &rho in &rhos {
                    let bw = Bandwidth::Elliptical(EllipticalBandwidth::new(h1, h2, rho)?);
                    let r = self.rmse_at(method, &bw)?;
                    if r < best.rmse {
                        best.bandwidth = bw;
                        best.rmse = r;
                    }
                }
            }
        }
        Ok(best)
    }

    /// Nelder–Mead from the best point so far; never returns anything worse.
    fn polish(&mut self, method: Method, best: OracleResult) -> Result<OracleResult> {
        let b = match best.bandwidth {
            Bandwidth::Radial(h) => EllipticalBandwidth::isotropic(h),
            Bandwidth::Elliptical(b) => b,
        };
        let bounds = self.bounds;
        let to_bw = |x: &[f64; 3]| EllipticalBandwidth::new(x[0].exp(), x[1].exp(), x[2]);
        let m = nelder_mead(
            |x| self.rmse_at(method, &Bandwidth::Elliptical(to_bw(x)?)),
            [b.h1.ln(), b.h2.ln(), b.rho],
            [0.1, 0.1, 0.1],
            |x| bounds.project(x),
            REL_TOL,
            NM_MAX_ITER,
        )?;
        if m.fx < best.rmse {
            let bw = to_bw(&m.x)?;
            return Ok(OracleResult {
                bandwidth: Bandwidth::Elliptical(bw),
                rmse: m.fx,
                evaluations: 0,
                boundary_hit: bounds.on_boundary(&bw),
            });
        }
        Ok(best)
    }
}

/// Oracle bandwidth of `method` for data `y` and ground truth `truth`.
pub fn oracle_bandwidth(
    y: &Sinogram,
    truth: &Image,
    method: Method,
    bounds: EllipticalBounds,
    floor_eps: f64,
) -> Result<OracleResult> {
    let mut engine = BpfEngine::new(truth.grid, y.geometry, floor_eps)?;
    let kty = engine.backproject(y)?;
    let ls = engine.ls_spectrum(&kty);
    OracleProblem::new(&ls, truth, bounds, true)?.search(method, &[])
}

/// Relative L2 gap between the BCCB surrogate and the literal `K'K` applied to
/// `x`, for diagnostics.
pub fn surrogate_discrepancy(engine: &mut BpfEngine, x: &Image) -> Result<f64> {
    let literal = engine.projector().back(&engine.projector().forward(x)?)?;
    let spec = engine.model().spectrum.clone();
    let model = bccb_apply_with(&spec, &x.values, engine.fft());
    let num: f64 = literal.values.iter().zip(&model).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = literal.values.iter().map(|a| a * a).sum();
    Ok((num / den).sqrt())
}

/// Sinogram shapes used in the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeometryPreset {
    /// 64 distance bins × 160 angles.
    Desk,
    /// 128 × 320.
    Full,
    /// `nx` bins × `nx + 1` angles: `n` barely above `p`.
    Supplement129,
    /// `nx` bins × `1.25·nx` angles.
    Supplement160,
}

impl GeometryPreset {
    pub fn geometry_for(self, grid: &ImageGrid) -> Result<SinogramGeometry> {
        let bins = grid.nx.max(grid.ny);
        let (r, theta) = match self {
            GeometryPreset::Desk => (64, 160),
            GeometryPreset::Full => (128, 320),
            GeometryPreset::Supplement129 => (bins, grid.nx + 1),
            GeometryPreset::Supplement160 => (bins, (1.25 * grid.nx as f64).round() as usize),
        };
        SinogramGeometry::new(r, theta, grid.pixel_size)
    }

    /// Grid side the fixed-size presets were designed for.
    pub fn native_grid(self) -> Option<usize> {
        match self {
            GeometryPreset::Desk => Some(64),
            GeometryPreset::Full => Some(128),
            _ => None,
        }
    }
}

impl FromStr for GeometryPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "desk" => Ok(GeometryPreset::Desk),
            "full" => Ok(GeometryPreset::Full),
            "supplement-129" => Ok(GeometryPreset::Supplement129),
            "supplement-160" => Ok(GeometryPreset::Supplement160),
            other => Err(Error::InvalidInput(format!(
                "unknown geometry preset '{other}' (expected desk, full, supplement-129 or supplement-160)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub phantom: PhantomSpec,
    pub geom: SinogramGeometry,
    pub lambdas: Vec<f64>,
    pub n_replicates: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub bounds: EllipticalBounds,
    pub floor_eps: f64,
    /// Compare images at unit total activity.
    pub normalize: bool,
    /// Worker threads; 0 or 1 runs inline.
    pub parallel: usize,
}

impl SimConfig {
    /// 64×64 Shepp–Logan, 64×160 sinogram, 100 replicates, Λ ∈ {10⁴, 10⁵, 10⁶}.
    pub fn desk() -> Self {
        let grid = ImageGrid::new(64, 64, 1.0).expect("valid grid");
        Self {
            phantom: PhantomSpec::new(PhantomKind::SheppLogan, grid),
            geom: GeometryPreset::Desk.geometry_for(&grid).expect("valid geometry"),
            lambdas: vec![1e4, 1e5, 1e6],
            n_replicates: 100,
            seed: 20_240_601,
            methods: Method::ALL.to_vec(),
            bounds: default_bounds(&grid),
            floor_eps: DEFAULT_FLOOR_EPS,
            normalize: true,
            parallel: 1,
        }
    }

    /// 128×128, 128×320 sinogram, nine Λ values log₂-spaced over [10⁴, 10⁶].
    pub fn full() -> Self {
        let grid = ImageGrid::new(128, 128, 1.0).expect("valid grid");
        let lambdas = (0..9).map(|i| 10f64.powf(4.0 + 2.0 * i as f64 / 8.0)).collect();
        Self {
            phantom: PhantomSpec::new(PhantomKind::SheppLogan, grid),
            geom: GeometryPreset::Full.geometry_for(&grid).expect("valid geometry"),
            lambdas,
            n_replicates: 1000,
            bounds: default_bounds(&grid),
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || self.lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidInput("total counts must be positive and finite".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidInput("no methods selected".into()));
        }
        self.geom.check_covers(&self.phantom.grid)
    }
}

/// One row of the experiment output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub lambda: f64,
    pub replicate: usize,
    pub method: Method,
    pub bandwidth: Option<Bandwidth>,
    pub rmse: f64,
    /// `rmse(oracle) / rmse(method)`, at most 1 up to search resolution.
    pub efficiency: f64,
    pub boundary_hit: bool,
    /// The bandwidth optimizer or the negativity reduction stopped early.
    pub nonconverged: bool,
    pub wall_time_ms: f64,
    pub oracle: Option<OracleResult>,
    pub error: Option<String>,
}

impl ExperimentRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey::new(self.lambda, self.replicate, self.method)
    }

    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordKey {
    lambda_bits: u64,
    pub replicate: usize,
    pub method: Method,
}

impl RecordKey {
    pub fn new(lambda: f64, replicate: usize, method: Method) -> Self {
        Self {
            lambda_bits: lambda.to_bits(),
            replicate,
            method,
        }
    }

    pub fn lambda(&self) -> f64 {
        f64::from_bits(self.lambda_bits)
    }
}

/// Setup shared by every replicate of a run.
pub struct ExperimentContext {
    cfg: SimConfig,
    truth: Image,
    base_mean: Sinogram,
    engine_parts: (crate::projector::Projector, crate::projector::KtkModel),
    pub warnings: Vec<String>,
}

impl ExperimentContext {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let truth = make_phantom(&cfg.phantom)?;
        let mut engine = BpfEngine::new(cfg.phantom.grid, cfg.geom, cfg.floor_eps)?;
        let base_mean = engine.projector().forward(&truth)?;
        if !(base_mean.total() > 0.0) {
            return Err(Error::ZeroProjection);
        }
        let mut warnings = vec![];
        let grid = cfg.phantom.grid;
        let n = cfg.geom.len();
        if !cfg.geom.is_well_posed_for(&grid) {
            warnings.push(format!("n = {n} LORs does not exceed p = {} pixels; GCV is undefined", grid.len()));
        } else if (n as f64) < 1.1 * grid.len() as f64 {
            warnings.push(format!(
                "ill-conditioned geometry: n = {n} is barely above p = {}; expect unstable unsmoothed estimates",
                grid.len()
            ));
        }
        let floored = engine.model().floored_count();
        if floored > 0 {
            warnings.push(format!("spectral floor engaged at {floored} frequencies"));
        }
        let gap = surrogate_discrepancy(&mut engine, &truth)?;
        warnings.push(format!("circulant K'K surrogate vs exact on the phantom: relative L2 gap {gap:.3e}"));
        let engine_parts = (engine.projector().clone(), engine.model().clone());
        Ok(Self {
            cfg,
            truth,
            base_mean,
            engine_parts,
            warnings,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn truth(&self) -> &Image {
        &self.truth
    }

    pub fn engine(&self) -> BpfEngine {
        BpfEngine::from_parts(self.engine_parts.0.clone(), self.engine_parts.1.clone())
            .expect("parts come from a valid engine")
    }

    pub fn sinogram(&self, lambda: f64, replicate: usize) -> Result<Sinogram> {
        let mean = scale_to_total(self.base_mean.clone(), lambda)?;
        poisson_sample(&mean, replicate_seed(self.cfg.seed, replicate, lambda))
    }

    /// Every method for one `(Λ, replicate)`; failures become flagged records.
    pub fn run_replicate(&self, engine: &mut BpfEngine, lambda: f64, replicate: usize, methods: &[Method]) -> Vec<ExperimentRecord> {
        match self.try_replicate(engine, lambda, replicate, methods) {
            Ok(records) => records,
            Err(e) => methods
                .iter()
                .map(|&method| ExperimentRecord {
                    lambda,
                    replicate,
                    method,
                    bandwidth: None,
                    rmse: f64::NAN,
                    efficiency: f64::NAN,
                    boundary_hit: false,
                    nonconverged: false,
                    wall_time_ms: 0.0,
                    oracle: None,
                    error: Some(e.to_string()),
                })
                .collect(),
        }
    }

    fn try_replicate(
        &self,
        engine: &mut BpfEngine,
        lambda: f64,
        replicate: usize,
        methods: &[Method],
    ) -> Result<Vec<ExperimentRecord>> {
        let grid = self.cfg.phantom.grid;
        let y = self.sinogram(lambda, replicate)?;
        let t = Instant::now();
        let kty = engine.backproject(&y)?;
        let ls = engine.ls_spectrum(&kty);
        let pre = engine.precompute(&kty, &y)?;
        let shared_ms = t.elapsed().as_secs_f64() * 1e3;
        let mut oracle = OracleProblem::new(&ls, &self.truth, self.cfg.bounds, self.cfg.normalize)?;
        let mut selections: HashMap<bool, (Bandwidth, Diagnostics, f64)> = HashMap::new();
        let mut out = Vec::with_capacity(methods.len());
        for &method in methods {
            let t = Instant::now();
            let elliptical = method.is_elliptical();
            if let Entry::Vacant(slot) = selections.entry(elliptical) {
                let ts = Instant::now();
                let mut diag = Diagnostics::default();
                let bw = select_gcv(&pre, &grid, method.base(), self.cfg.bounds, &mut diag)?;
                slot.insert((bw, diag, ts.elapsed().as_secs_f64() * 1e3));
            }
            let (bw, diag, select_ms) = selections[&elliptical].clone();
            let omega = engine.kernel_spectrum(&bw)?;
            let mut image = engine.smooth(&ls, &omega);
            let mut nonconverged = !diag.converged;
            if method.reduces_negatives() {
                let radial = radial_spectrum(bw.radial_equivalent(), &grid);
                let (reduced, report) = reduce_negatives_with(&image, &radial, engine.fft());
                image = reduced;
                nonconverged |= !report.converged;
            }
            let wall_time_ms = shared_ms + select_ms + t.elapsed().as_secs_f64() * 1e3;
            let r = rmse_with(&image, &self.truth, self.cfg.normalize)?;
            let best = oracle.search(method, &[bw])?;
            out.push(ExperimentRecord {
                lambda,
                replicate,
                method,
                bandwidth: Some(bw),
                rmse: r,
                efficiency: if r > 0.0 { best.rmse / r } else { 1.0 },
                boundary_hit: diag.boundary_hit,
                nonconverged,
                wall_time_ms,
                oracle: Some(best),
                error: None,
            });
        }
        Ok(out)
    }
}

/// Runs every `(Λ, replicate)` not in `skip`, handing each record to
/// `on_record` as soon as its replicate finishes. Returns the new records in
/// `(Λ, replicate, method)` order.
pub fn run_experiment(
    ctx: &ExperimentContext,
    skip: &HashSet<RecordKey>,
    on_record: impl Fn(&ExperimentRecord) -> Result<()> + Sync,
) -> Result<Vec<ExperimentRecord>> {
    let cfg = ctx.config();
    let mut tasks = vec![];
    for &lambda in &cfg.lambdas {
        for replicate in 0..cfg.n_replicates {
            let methods: Vec<Method> = cfg
                .methods
                .iter()
                .copied()
                .filter(|&m| !skip.contains(&RecordKey::new(lambda, replicate, m)))
                .collect();
            if !methods.is_empty() {
                tasks.push((lambda, replicate, methods));
            }
        }
    }
    let sink_error: Mutex<Option<Error>> = Mutex::new(None);
    let run_task = |engine: &mut BpfEngine, (lambda, replicate, methods): &(f64, usize, Vec<Method>)| {
        let records = ctx.run_replicate(engine, *lambda, *replicate, methods);
        for r in &records {
            if let Err(e) = on_record(r) {
                sink_error.lock().expect("sink lock").get_or_insert(e);
            }
        }
        records
    };
    let mut records: Vec<ExperimentRecord> = if cfg.parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.parallel)
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
        pool.install(|| {
            tasks
                .par_iter()
                .map_init(|| ctx.engine(), |engine, task| run_task(engine, task))
                .flatten()
                .collect()
        })
    } else {
        let mut engine = ctx.engine();
        tasks.iter().flat_map(|task| run_task(&mut engine, task)).collect()
    };
    if let Some(e) = sink_error.into_inner().expect("sink lock") {
        return Err(e);
    }
    records.sort_by_key(|r| r.key());
    Ok(records)
}

pub const CSV_HEADER: &str = "lambda,replicate,method,h1,h2,rho,rmse,efficiency,boundary_flag,wall_time_ms";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One CSV line (no newline). Failed records carry `failed` in the flag
/// column and empty numbers.
pub fn record_to_csv(r: &ExperimentRecord) -> String {
    let (h1, h2, rho) = match r.bandwidth {
        Some(bw) => {
            let (a, b, c) = bw.params();
            (Some(a), b, c)
        }
        None => (None, None, None),
    };
    let flag = match (&r.error, r.boundary_hit, r.nonconverged) {
        (Some(_), _, _) => "failed",
        (None, true, true) => "boundary+nonconverged",
        (None, true, false) => "boundary",
        (None, false, true) => "nonconverged",
        (None, false, false) => "none",
    };
    let num = |v: f64| if r.failed() { String::new() } else { v.to_string() };
    format!(
        "{},{},{},{},{},{},{},{},{},{:.3}",
        r.lambda,
        r.replicate,
        r.method,
        fmt_opt(h1),
        fmt_opt(h2),
        fmt_opt(rho),
        num(r.rmse),
        num(r.efficiency),
        flag,
        r.wall_time_ms
    )
}

pub fn record_from_csv(line: &str) -> Result<ExperimentRecord> {
    let bad = |why: &str| Error::InvalidInput(format!("bad experiment row '{line}': {why}"));
    let f: Vec<&str> = line.trim_end().split(',').collect();
    if f.len() != 10 {
        return Err(bad("expected 10 columns"));
    }
    let num = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| bad("number"))
        }
    };
    let lambda = num(f[0])?.ok_or_else(|| bad("lambda"))?;
    let replicate = f[1].parse().map_err(|_| bad("replicate"))?;
    let method: Method = f[2].parse()?;
    let (h1, h2, rho) = (num(f[3])?, num(f[4])?, num(f[5])?);
    let bandwidth = match (h1, h2, rho) {
        (Some(h), None, None) => Some(Bandwidth::Radial(RadialBandwidth::new(h)?)),
        (Some(a), Some(b), Some(c)) => Some(Bandwidth::Elliptical(EllipticalBandwidth::new(a, b, c)?)),
        (None, None, None) => None,
        _ => return Err(bad("bandwidth columns")),
    };
    let failed = f[8] == "failed";
    if !matches!(f[8], "failed" | "none" | "boundary" | "nonconverged" | "boundary+nonconverged") {
        return Err(bad("boundary flag"));
    }
    Ok(ExperimentRecord {
        lambda,
        replicate,
        method,
        bandwidth,
        rmse: num(f[6])?.unwrap_or(f64::NAN),
        efficiency: num(f[7])?.unwrap_or(f64::NAN),
        boundary_hit: f[8].contains("boundary"),
        nonconverged: f[8].contains("nonconverged"),
        wall_time_ms: num(f[9])?.unwrap_or(0.0),
        oracle: None,
        error: failed.then(|| "failed in an earlier run".to_string()),
    })
}

/// Append-only CSV sink that flushes after every record.
pub struct CsvSink {
    writer: Mutex<BufWriter<File>>,
    path: PathBuf,
}

impl CsvSink {
    /// Opens `path`. With `resume`, existing completed rows are kept and
    /// returned; otherwise the file is truncated.
    pub fn open(path: &Path, resume: bool) -> Result<(Self, Vec<ExperimentRecord>)> {
        let mut existing = vec![];
        let has_rows = resume && path.exists();
        if has_rows {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if i == 0 {
                    if line.trim() != CSV_HEADER {
                        return Err(Error::format(path, "header does not match the experiment schema"));
                    }
                    continue;
                }
                if line.trim().is_empty() {
                    continue;
                }
                // torn lines from a crash and failed rows are dropped and redone
                match record_from_csv(&line) {
                    Ok(r) if !r.failed() => existing.push(r),
                    _ => continue,
                }
            }
        }
        let file = if has_rows {
            std::fs::OpenOptions::new().append(true).open(path)
        } else {
            File::create(path)
        }
        .map_err(|e| Error::io(path, e))?;
        let mut writer = BufWriter::new(file);
        if !has_rows {
            writeln!(writer, "{CSV_HEADER}").map_err(|e| Error::io(path, e))?;
            writer.flush().map_err(|e| Error::io(path, e))?;
        } else {
            // rewrite so a torn trailing line cannot merge with new rows
            let mut w = writer;
            w.flush().map_err(|e| Error::io(path, e))?;
            drop(w);
            let mut rewrite = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
            writeln!(rewrite, "{CSV_HEADER}").map_err(|e| Error::io(path, e))?;
            for r in &existing {
                writeln!(rewrite, "{}", record_to_csv(r)).map_err(|e| Error::io(path, e))?;
            }
            rewrite.flush().map_err(|e| Error::io(path, e))?;
            drop(rewrite);
            writer = BufWriter::new(
                std::fs::OpenOptions::new()
                    .append(true)
                    .open(path)
                    .map_err(|e| Error::io(path, e))?,
            );
        }
        Ok((
            Self {
                writer: Mutex::new(writer),
                path: path.to_path_buf(),
            },
            existing,
        ))
    }

    pub fn write(&self, r: &ExperimentRecord) -> Result<()> {
        let mut w = self.writer.lock().expect("csv lock");
        writeln!(w, "{}", record_to_csv(r)).map_err(|e| Error::io(&self.path, e))?;
        w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Keys of rows that completed without failure.
pub fn completed_keys(records: &[ExperimentRecord]) -> HashSet<RecordKey> {
    records.iter().filter(|r| !r.failed()).map(|r| r.key()).collect()
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub lambda: f64,
    pub method: Method,
    pub count: usize,
    pub failed: usize,
    pub boundary_hits: usize,
    pub nonconverged: usize,
    pub rmse: [f64; 3],
    /// oracle / method.
    pub efficiency: [f64; 3],
    /// method / oracle.
    pub relative_rmse: [f64; 3],
    pub h1_median_fwhm: f64,
    pub h1_median_sigma: f64,
}

pub fn summarize(records: &[ExperimentRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(u64, Method), Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.lambda.to_bits(), r.method)).or_default().push(r);
    }
    let quartiles = |mut v: Vec<f64>| -> [f64; 3] {
        v.retain(|x| x.is_finite());
        v.sort_by(f64::total_cmp);
        [quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75)]
    };
    let mut rows: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((bits, method), rs)| {
            let ok: Vec<&&ExperimentRecord> = rs.iter().filter(|r| !r.failed()).collect();
            let h1 = median(&ok.iter().filter_map(|r| r.bandwidth.map(|b| b.params().0)).collect::<Vec<_>>());
            SummaryRow {
                lambda: f64::from_bits(bits),
                method,
                count: ok.len(),
                failed: rs.len() - ok.len(),
                boundary_hits: ok.iter().filter(|r| r.boundary_hit).count(),
                nonconverged: ok.iter().filter(|r| r.nonconverged).count(),
                rmse: quartiles(ok.iter().map(|r| r.rmse).collect()),
                efficiency: quartiles(ok.iter().map(|r| r.efficiency).collect()),
                relative_rmse: quartiles(ok.iter().map(|r| 1.0 / r.efficiency).collect()),
                h1_median_fwhm: h1,
                h1_median_sigma: crate::kernels::fwhm_to_sigma(h1),
            }
        })
        .collect();
    rows.sort_by(|a, b| a.lambda.total_cmp(&b.lambda).then(a.method.cmp(&b.method)));
    rows
}

pub const SUMMARY_HEADER: &str = "lambda,method,count,failed,boundary_hits,nonconverged,rmse_q1,rmse_median,rmse_q3,efficiency_q1,efficiency_median,efficiency_q3,relative_rmse_q1,relative_rmse_median,relative_rmse_q3,h1_median_fwhm,h1_median_sigma";

pub fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    writeln!(w, "{SUMMARY_HEADER}").map_err(io)?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.lambda,
            r.method,
            r.count,
            r.failed,
            r.boundary_hits,
            r.nonconverged,
            r.rmse[0],
            r.rmse[1],
            r.rmse[2],
            r.efficiency[0],
            r.efficiency[1],
            r.efficiency[2],
            r.relative_rmse[0],
            r.relative_rmse[1],
            r.relative_rmse[2],
            r.h1_median_fwhm,
            r.h1_median_sigma
        )
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

impl fmt::Display for SummaryRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "lambda={:<9} {:<6} n={:<4} rmse median={:.4e} efficiency median={:.4} (q1 {:.4}, q3 {:.4}) h1 median={:.3}",
            self.lambda,
            self.method.as_str(),
            self.count,
            self.rmse[1],
            self.efficiency[1],
            self.efficiency[0],
            self.efficiency[2],
            self.h1_median_fwhm
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> ImageGrid {
        ImageGrid::new(n, n, 1.0).unwrap()
    }

    #[test]
    fn disc_phantom_is_an_indicator() {
        let img = make_phantom(&PhantomSpec::new(PhantomKind::UniformDisc { radius: 5.0 }, grid(16))).unwrap();
        for iy in 0..16 {
            for ix in 0..16 {
                let (x, y) = img.grid.center(ix, iy);
                let inside = x * x + y * y <= 25.0;
                assert_eq!(img.get(ix, iy), if inside { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn shepp_logan_is_nonnegative_and_deterministic() {
        let spec = PhantomSpec::new(PhantomKind::SheppLogan, grid(64));
        let a = make_phantom(&spec).unwrap();
        let b = make_phantom(&spec).unwrap();
        assert_eq!(a.values, b.values);
        assert!(a.values.iter().all(|&v| v >= 0.0));
        let max = a.values.iter().cloned().fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
        // the skull rim is brighter than the brain
        assert!(a.get(32, 2) > a.get(32, 32));
    }

    #[test]
    fn phantom_names_parse() {
        assert_eq!("shepp_logan".parse::<PhantomKind>().unwrap(), PhantomKind::SheppLogan);
        assert_eq!(
            "uniform_disc:7.5".parse::<PhantomKind>().unwrap(),
            PhantomKind::UniformDisc { radius: 7.5 }
        );
        assert_eq!(
            "file:/tmp/x.hdr".parse::<PhantomKind>().unwrap(),
            PhantomKind::File("/tmp/x.hdr".into())
        );
        assert!("hoffman".parse::<PhantomKind>().is_err());
    }

    #[test]
    fn poisson_counts_have_the_right_moments() {
        let g = grid(16);
        let geom = SinogramGeometry::new(16, 40, 1.0).unwrap();
        let truth = make_phantom(&PhantomSpec::new(PhantomKind::SheppLogan, g)).unwrap();
        let lambda = 1e5;
        let totals: Vec<f64> = (0..200)
            .map(|r| simulate_sinogram(&truth, &geom, lambda, replicate_seed(3, r, lambda)).unwrap().total())
            .collect();
        let mean = totals.iter().sum::<f64>() / 200.0;
        assert!((mean - lambda).abs() < 4.0 * lambda.sqrt());

        let lambda = 1e6;
        let mu = expected_counts(&truth, &geom, lambda).unwrap();
        let reps = 50;
        let draws: Vec<Sinogram> = (0..reps).map(|r| poisson_sample(&mu, 1000 + r as u64).unwrap()).collect();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..mu.values.len() {
            if mu.values[i] < 1.0 {
                continue;
            }
            let m = draws.iter().map(|d| d.values[i]).sum::<f64>() / reps as f64;
            let v = draws.iter().map(|d| (d.values[i] - m).powi(2)).sum::<f64>() / (reps - 1) as f64;
            num += v;
            den += m;
        }
        let dispersion = num / den;
        assert!((0.9..=1.1).contains(&dispersion), "dispersion {dispersion}");
    }

    #[test]
    fn sampling_is_reproducible_and_order_free() {
        let g = grid(8);
        let geom = SinogramGeometry::new(8, 12, 1.0).unwrap();
        let truth = make_phantom(&PhantomSpec::new(PhantomKind::UniformDisc { radius: 3.0 }, g)).unwrap();
        let a = simulate_sinogram(&truth, &geom, 1e4, 42).unwrap();
        let b = simulate_sinogram(&truth, &geom, 1e4, 42).unwrap();
        assert_eq!(a.values, b.values);
        assert!(a.is_counts());
        // drawing a single LOR alone gives the same value
        let mu = expected_counts(&truth, &geom, 1e4).unwrap();
        let i = 37;
        let mut single = Sinogram::zeros(geom);
        single.values[i] = mu.values[i];
        assert_eq!(poisson_sample(&single, 42).unwrap().values[i], a.values[i]);
        let c = simulate_sinogram(&truth, &geom, 1e4, 43).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn empty_phantom_cannot_be_simulated() {
        let g = grid(8);
        let geom = SinogramGeometry::new(8, 12, 1.0).unwrap();
        assert!(matches!(
            simulate_sinogram(&Image::zeros(g), &geom, 1e4, 1),
            Err(Error::ZeroProjection)
        ));
    }

    #[test]
    fn rmse_basics() {
        let g = grid(8);
        let truth = make_phantom(&PhantomSpec::new(PhantomKind::UniformDisc { radius: 3.0 }, g)).unwrap();
        assert_eq!(rmse(&truth, &truth).unwrap(), 0.0);
        let shifted = Image::new(g, truth.values.iter().map(|v| v + 0.25).collect()).unwrap();
        assert!((rmse_with(&shifted, &truth, false).unwrap() - 0.25).abs() < 1e-15);
        let scaled = Image::new(g, truth.values.iter().map(|v| 7.0 * v).collect()).unwrap();
        assert!(rmse(&scaled, &truth).unwrap() < 1e-15);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }

    #[test]
    fn csv_rows_round_trip() {
        let r = ExperimentRecord {
            lambda: 1e5,
            replicate: 3,
            method: Method::BpfePlus,
            bandwidth: Some(Bandwidth::Elliptical(EllipticalBandwidth::new(3.25, 2.5, -0.125).unwrap())),
            rmse: 1.234e-4,
            efficiency: 0.97,
            boundary_hit: false,
            nonconverged: true,
            wall_time_ms: 12.5,
            oracle: None,
            error: None,
        };
        let line = record_to_csv(&r);
        assert_eq!(line, "100000,3,bpfe+,3.25,2.5,-0.125,0.0001234,0.97,nonconverged,12.500");
        let back = record_from_csv(&line).unwrap();
        assert_eq!(back.key(), r.key());
        assert_eq!(back.bandwidth, r.bandwidth);
        assert_eq!(back.rmse, r.rmse);
        assert!(back.nonconverged && !back.boundary_hit);
    }

    #[test]
    fn presets_map_to_geometries() {
        let g64 = grid(64);
        assert_eq!(GeometryPreset::Desk.geometry_for(&g64).unwrap().len(), 64 * 160);
        let g128 = grid(128);
        let s = GeometryPreset::Supplement129.geometry_for(&g128).unwrap();
        assert_eq!((s.n_dist, s.n_angle), (128, 129));
        let s = GeometryPreset::Supplement160.geometry_for(&g128).unwrap();
        assert_eq!((s.n_dist, s.n_angle), (128, 160));
        assert!("supplement-129".parse::<GeometryPreset>().is_ok());
    }

    fn small_config() -> SimConfig {
        let g = grid(24);
        SimConfig {
            phantom: PhantomSpec::new(PhantomKind::SheppLogan, g),
            geom: SinogramGeometry::new(24, 60, 1.0).unwrap(),
            lambdas: vec![1e4, 1e6],
            n_replicates: 2,
            methods: Method::ALL.to_vec(),
            bounds: default_bounds(&g),
            ..SimConfig::desk()
        }
    }

    #[test]
    fn experiment_produces_full_factorial() {
        let ctx = ExperimentContext::new(small_config()).unwrap();
        let records = run_experiment(&ctx, &HashSet::new(), |_| Ok(())).unwrap();
        assert_eq!(records.len(), 2 * 2 * 4);
        for r in &records {
            assert!(!r.failed(), "{:?}", r.error);
            assert!(r.efficiency > 0.0 && r.efficiency <= 1.0 + 1e-3, "{r:?}");
        }
        let oracle = |m: Method, rep: usize| {
            records
                .iter()
                .find(|r| r.method == m && r.replicate == rep && r.lambda == 1e6)
                .unwrap()
                .oracle
                .unwrap()
                .rmse
        };
        for rep in 0..2 {
            assert!(oracle(Method::Bpfe, rep) <= oracle(Method::Bpf, rep) + 1e-9);
        }
    }

    #[test]
    fn skipped_keys_are_not_rerun() {
        let ctx = ExperimentContext::new(small_config()).unwrap();
        let all = run_experiment(&ctx, &HashSet::new(), |_| Ok(())).unwrap();
        let done = completed_keys(&all);
        let again = run_experiment(&ctx, &done, |_| Ok(())).unwrap();
        assert!(again.is_empty());
    }

    #[test]
    fn parallel_runs_match_serial_runs() {
        let mut cfg = small_config();
        cfg.lambdas = vec![1e5];
        cfg.methods = vec![Method::Bpf, Method::BpfPlus];
        let serial = run_experiment(&ExperimentContext::new(cfg.clone()).unwrap(), &HashSet::new(), |_| Ok(())).unwrap();
        cfg.parallel = 3;
        let parallel = run_experiment(&ExperimentContext::new(cfg).unwrap(), &HashSet::new(), |_| Ok(())).unwrap();
        let strip = |rs: &[ExperimentRecord]| rs.iter().map(|r| {
            let mut line = record_to_csv(r);
            line.truncate(line.rfind(',').unwrap());
            line
        }).collect::<Vec<_>>();
        assert_eq!(strip(&serial), strip(&parallel));
    }

    #[test]
    fn supplement_geometry_warns() {
        let mut cfg = small_config();
        cfg.geom = GeometryPreset::Supplement129.geometry_for(&cfg.phantom.grid).unwrap();
        let ctx = ExperimentContext::new(cfg).unwrap();
        assert!(ctx.warnings.iter().any(|w| w.contains("ill-conditioned")));
    }
}
