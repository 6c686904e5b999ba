//! WebAssembly bindings behind `www/index.html`.
//!
//! Build with `wasm-pack build crates/web --target web --out-dir www/pkg`.
//! The same API is plain Rust on native targets.

use wasm_bindgen::prelude::*;

use tomogcv::gcv::{zeta, GcvPrecompute};
use tomogcv::harness::{make_phantom, replicate_seed, simulate_sinogram, OracleProblem, PhantomKind, PhantomSpec};
use tomogcv::kernels::{radial_spectrum, Bandwidth, RadialBandwidth};
use tomogcv::projector::{Image, ImageGrid, SinogramGeometry, DEFAULT_FLOOR_EPS};
use tomogcv::recon::{default_bounds, reduce_negatives_with, select_gcv, BpfEngine, Diagnostics, Method};
use tomogcv::Complex64;

fn err(e: tomogcv::Error) -> String {
    e.to_string()
}

struct Scan {
    ls: Vec<Complex64>,
    pre: GcvPrecompute,
}

/// One phantom and geometry, with the most recent scan and reconstruction.
#[wasm_bindgen]
pub struct Demo {
    grid: ImageGrid,
    truth: Image,
    engine: BpfEngine,
    scan: Option<Scan>,
    bandwidth: Option<Bandwidth>,
    rmse: f64,
}

#[wasm_bindgen]
impl Demo {
    /// Shepp–Logan on a `size × size` grid, `size` bins × `angles` angles.
    #[wasm_bindgen(constructor)]
    pub fn new(size: usize, angles: usize) -> Result<Demo, String> {
        let grid = ImageGrid::new(size, size, 1.0).map_err(err)?;
        let geom = SinogramGeometry::new(size, angles, 1.0).map_err(err)?;
        let truth = make_phantom(&PhantomSpec::new(PhantomKind::SheppLogan, grid)).map_err(err)?;
        let engine = BpfEngine::new(grid, geom, DEFAULT_FLOOR_EPS).map_err(err)?;
        Ok(Demo {
            grid,
            truth,
            engine,
            scan: None,
            bandwidth: None,
            rmse: f64::NAN,
        })
    }

    pub fn size(&self) -> usize {
        self.grid.nx
    }

    pub fn angles(&self) -> usize {
        self.engine.projector().geometry().n_angle
    }

    /// Row-major phantom values.
    pub fn phantom(&self) -> Vec<f64> {
        self.truth.values.clone()
    }

    /// Draws a Poisson sinogram with `counts` expected events and returns it
    /// distance-major (`r * angles + t`).
    pub fn simulate(&mut self, counts: f64, seed: u32) -> Result<Vec<f64>, String> {
        let geom = *self.engine.projector().geometry();
        let y = simulate_sinogram(&self.truth, &geom, counts, replicate_seed(seed as u64, 0, counts)).map_err(err)?;
        let kty = self.engine.backproject(&y).map_err(err)?;
        let ls = self.engine.ls_spectrum(&kty);
        let pre = self.engine.precompute(&kty, &y).map_err(err)?;
        self.scan = Some(Scan { ls, pre });
        self.bandwidth = None;
        self.rmse = f64::NAN;
        Ok(y.values)
    }

    /// Reconstructs the last scan with `method` (bpf, bpfe, bpf+, bpfe+).
    /// A positive `fwhm` fixes a radial bandwidth; anything else selects it by GCV.
    pub fn reconstruct(&mut self, method: &str, fwhm: f64) -> Result<Vec<f64>, String> {
        let method: Method = method.parse().map_err(err)?;
        let scan = self.scan.as_ref().ok_or("simulate a scan first")?;
        let bw = if fwhm > 0.0 {
            Bandwidth::Radial(RadialBandwidth::new(fwhm).map_err(err)?)
        } else {
            let mut diag = Diagnostics::default();
            select_gcv(&scan.pre, &self.grid, method, default_bounds(&self.grid), &mut diag).map_err(err)?
        };
        let omega = self.engine.kernel_spectrum(&bw).map_err(err)?;
        let ls = scan.ls.clone();
        let mut image = self.engine.smooth(&ls, &omega);
        if method.reduces_negatives() {
            let radial = radial_spectrum(bw.radial_equivalent(), &self.grid);
            image = reduce_negatives_with(&image, &radial, self.engine.fft()).0;
        }
        self.rmse = tomogcv::harness::rmse(&image, &self.truth).map_err(err)?;
        self.bandwidth = Some(bw);
        Ok(image.values)
    }

    /// `[h1, h2, rho]` of the last reconstruction; radial kernels repeat h1 and use rho = 0.
    pub fn bandwidth(&self) -> Vec<f64> {
        match self.bandwidth {
            None => vec![],
            Some(bw) => {
                let (h1, h2, rho) = bw.params();
                vec![h1, h2.unwrap_or(h1), rho.unwrap_or(0.0)]
            }
        }
    }

    /// RMSE of the last reconstruction against the phantom, at unit total activity.
    pub fn rmse(&self) -> f64 {
        self.rmse
    }

    /// GCV objective and true RMSE of BPF over `points` log-spaced radial
    /// bandwidths, flattened as `[h, zeta, rmse, h, zeta, rmse, ...]`.
    pub fn gcv_curve(&mut self, points: usize) -> Result<Vec<f64>, String> {
        let scan = self.scan.as_ref().ok_or("simulate a scan first")?;
        let (lo, hi) = default_bounds(&self.grid).h;
        let mut oracle = OracleProblem::new(&scan.ls, &self.truth, default_bounds(&self.grid), true).map_err(err)?;
        let points = points.max(2);
        let mut out = Vec::with_capacity(3 * points);
        for i in 0..points {
            let h = (lo.ln() + (hi / lo).ln() * i as f64 / (points - 1) as f64).exp();
            let r = RadialBandwidth::new(h).map_err(err)?;
            let z = zeta(&scan.pre, &radial_spectrum(r, &self.grid)).map_err(err)?;
            let e = oracle.rmse_at(Method::Bpf, &Bandwidth::Radial(r)).map_err(err)?;
            out.extend_from_slice(&[h, z.zeta, e]);
        }
        Ok(out)
    }
}
