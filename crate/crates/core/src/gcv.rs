//! Rotation-invariant GCV objective and its minimizers.
//!
//! With `z₁ = D•⁻¹V'K'y` and `z₂'z₂ = y'y − z₁'z₁`,
//!
//! ```text
//! ζ(h) = Σ_ν (1 − ω_ν)² z₁ν² + (1 + c(h))² z₂'z₂,   c(h) = tr Ω_h / (n − p)
//! ```
//!
//! Everything after [`precompute`] is `O(p)` per bandwidth. Frequencies the
//! `K'K` model floors are dropped from `z₁` and from `p`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::circulant::{paired_vt_2d_with, Spectrum2D};
use crate::error::{Error, Result};
use crate::fft::Fft2d;
use crate::kernels::{radial_spectrum, Bandwidth, EllipticalBandwidth, RadialBandwidth};
use crate::projector::{check_spectrum_grid, Image, ImageGrid, KtkModel, Projector, Sinogram, SinogramGeometry, DEFAULT_FLOOR_EPS};

/// Negative `z₂'z₂` down to `-Z2_TOLERANCE·y'y` is round-off and clamps to 0.
pub const Z2_TOLERANCE: f64 = 1e-8;

/// Data-dependent part of `ζ`, computed once per sinogram.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GcvPrecompute {
    /// `z₁` in linear frequency order; zero at floored frequencies.
    pub z1: Vec<f64>,
    pub z2_sq: f64,
    /// Diagonal of `D•` (square roots of the floored `K'K` spectrum).
    pub d_singular: Vec<f64>,
    pub floored: Vec<bool>,
    pub yty: f64,
    pub n: usize,
    pub p: usize,
    pub rows: usize,
    pub cols: usize,
}

impl GcvPrecompute {
    /// Builds the precompute from `K'y` and `y'y`.
    pub fn from_backprojection(kty: &Image, yty: f64, n: usize, model: &KtkModel, fft: &mut Fft2d) -> Result<Self> {
        check_spectrum_grid(&model.spectrum, &kty.grid)?;
        let coeffs = paired_vt_2d_with(&kty.values, fft);
        let floored = model.floored_mask().to_vec();
        let d_singular: Vec<f64> = (0..coeffs.len()).map(|i| model.effective(i).sqrt()).collect();
        let z1: Vec<f64> = coeffs
            .iter()
            .enumerate()
            .map(|(i, &b)| if floored[i] { 0.0 } else { b / d_singular[i] })
            .collect();
        let z1_sq: f64 = z1.iter().map(|v| v * v).sum();
        let mut z2_sq = yty - z1_sq;
        if z2_sq < 0.0 {
            if z2_sq < -Z2_TOLERANCE * yty {
                return Err(Error::NegativeResidual { value: z2_sq, yty });
            }
            z2_sq = 0.0;
        }
        if z1.iter().any(|v| !v.is_finite()) || !z2_sq.is_finite() {
            return Err(Error::NonFinite("GCV precomputation".into()));
        }
        Ok(Self {
            z1,
            z2_sq,
            d_singular,
            floored,
            yty,
            n,
            p: kty.grid.len(),
            rows: kty.grid.ny,
            cols: kty.grid.nx,
        })
    }

    pub fn floored_count(&self) -> usize {
        self.floored.iter().filter(|&&f| f).count()
    }

    /// `p` minus the floored frequencies.
    pub fn p_eff(&self) -> usize {
        self.p - self.floored_count()
    }

    /// `n − p_eff`, rejected when not positive.
    pub fn residual_dof(&self) -> Result<usize> {
        let p = self.p_eff();
        if self.n <= p {
            return Err(Error::DegenerateDof { n: self.n, p });
        }
        Ok(self.n - p)
    }
}

/// `ζ` at one bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GcvObjectiveValue {
    pub bandwidth: Option<Bandwidth>,
    pub zeta: f64,
    pub c_of_h: f64,
}

/// Backprojects `y` and builds the precompute with the default floor.
pub fn precompute(y: &Sinogram, grid: &ImageGrid, geom: &SinogramGeometry) -> Result<GcvPrecompute> {
    let proj = Projector::new(*grid, *geom)?;
    let mut fft = Fft2d::new(grid.ny, grid.nx);
    let model = KtkModel::from_projector(&proj, DEFAULT_FLOOR_EPS, &mut fft)?;
    precompute_with(y, &proj, &model, &mut fft)
}

pub fn precompute_with(y: &Sinogram, proj: &Projector, model: &KtkModel, fft: &mut Fft2d) -> Result<GcvPrecompute> {
    let kty = proj.back(y)?;
    GcvPrecompute::from_backprojection(&kty, y.sum_of_squares(), y.geometry.len(), model, fft)
}

/// `ζ` for the smoothing spectrum `omega`.
pub fn zeta(pre: &GcvPrecompute, omega: &Spectrum2D) -> Result<GcvObjectiveValue> {
    if omega.rows() != pre.rows || omega.cols() != pre.cols {
        return Err(Error::GeometryMismatch(format!(
            "spectrum is {}x{}, precompute is {}x{}",
            omega.rows(),
            omega.cols(),
            pre.rows,
            pre.cols
        )));
    }
    let dof = pre.residual_dof()? as f64;
    let mut fit = 0.0;
    let mut trace = 0.0;
    for ((&w, &z), &fl) in omega.values().iter().zip(&pre.z1).zip(&pre.floored) {
        if fl {
            continue;
        }
        fit += (1.0 - w) * (1.0 - w) * z * z;
        trace += w;
    }
    let c = trace / dof;
    let value = fit + (1.0 + c) * (1.0 + c) * pre.z2_sq;
    if !value.is_finite() {
        return Err(Error::NonFinite("zeta".into()));
    }
    Ok(GcvObjectiveValue {
        bandwidth: None,
        zeta: value,
        c_of_h: c,
    })
}

/// `ζ` as a function of the kernel parameters.
pub struct GcvObjective<'a> {
    pre: &'a GcvPrecompute,
    grid: ImageGrid,
    fft: Fft2d,
    evaluations: usize,
}

impl<'a> GcvObjective<'a> {
    pub fn new(pre: &'a GcvPrecompute, grid: &ImageGrid) -> Result<Self> {
        if grid.ny != pre.rows || grid.nx != pre.cols {
            return Err(Error::GeometryMismatch("grid differs from precompute".into()));
        }
        Ok(Self {
            pre,
            grid: *grid,
            fft: Fft2d::new(grid.ny, grid.nx),
            evaluations: 0,
        })
    }

    pub fn evaluate(&mut self, bw: Bandwidth) -> Result<GcvObjectiveValue> {
        self.evaluations += 1;
        let omega = match bw {
            Bandwidth::Radial(h) => radial_spectrum(h, &self.grid),
            Bandwidth::Elliptical(_) => bw.spectrum(&self.grid, &mut self.fft)?,
        };
        let mut v = zeta(self.pre, &omega)?;
        v.bandwidth = Some(bw);
        Ok(v)
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }
}

/// Result of a bounded one-dimensional search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMin {
    pub x: f64,
    pub fx: f64,
    /// The coarse grid minimum sat on an end of the range.
    pub boundary_hit: bool,
}

/// Log-spaced grid of `points` values over `[lo, hi]`, then golden-section
/// refinement (in `ln x`) between the neighbours of the grid minimum until the
/// bracket is narrower than `rel_tol` relative. Ties go to the smaller `x`.
pub fn log_grid_golden(
    mut f: impl FnMut(f64) -> Result<f64>,
    lo: f64,
    hi: f64,
    points: usize,
    rel_tol: f64,
) -> Result<ScalarMin> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::InvalidInput(format!("search range [{lo}, {hi}] must be positive and increasing")));
    }
    if points < 3 {
        return Err(Error::InvalidInput("search grid needs at least 3 points".into()));
    }
    let (a, b) = (lo.ln(), hi.ln());
    let step = (b - a) / (points - 1) as f64;
    let xs: Vec<f64> = (0..points)
        .map(|i| match i {
            0 => lo,
            _ if i + 1 == points => hi,
            _ => (a + step * i as f64).exp(),
        })
        .collect();
    let mut best = 0;
    let mut fs = Vec::with_capacity(points);
    for (i, &x) in xs.iter().enumerate() {
        let v = f(x)?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("x = {x}")));
        }
        if v < fs.get(best).copied().unwrap_or(f64::INFINITY) {
            best = i;
        }
        fs.push(v);
    }
    if best == 0 || best + 1 == points {
        return Ok(ScalarMin {
            x: xs[best],
            fx: fs[best],
            boundary_hit: true,
        });
    }
    let (mut u, mut v) = (xs[best - 1].ln(), xs[best + 1].ln());
    let mut best_x = xs[best];
    let mut best_f = fs[best];
    let consider = |x: f64, fx: f64, best_x: &mut f64, best_f: &mut f64| {
        if fx < *best_f || (fx == *best_f && x < *best_x) {
            *best_x = x;
            *best_f = fx;
        }
    };
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = v - g * (v - u);
    let mut d = u + g * (v - u);
    let mut fc = f(c.exp())?;
    let mut fd = f(d.exp())?;
    consider(c.exp(), fc, &mut best_x, &mut best_f);
    consider(d.exp(), fd, &mut best_x, &mut best_f);
    // width in ln x approximates relative width in x
    while v - u > rel_tol {
        if fc <= fd {
            v = d;
            d = c;
            fd = fc;
            c = v - g * (v - u);
            fc = f(c.exp())?;
            consider(c.exp(), fc, &mut best_x, &mut best_f);
        } else {
            u = c;
            c = d;
            fc = fd;
            d = u + g * (v - u);
            fd = f(d.exp())?;
            consider(d.exp(), fd, &mut best_x, &mut best_f);
        }
        if !fc.is_finite() || !fd.is_finite() {
            return Err(Error::NonFinite("golden-section step".into()));
        }
    }
    Ok(ScalarMin {
        x: best_x,
        fx: best_f,
        boundary_hit: false,
    })
}

pub const RADIAL_GRID_POINTS: usize = 40;
pub const REL_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialSelection {
    pub bandwidth: RadialBandwidth,
    pub objective: GcvObjectiveValue,
    pub boundary_hit: bool,
}

/// `h_G = argmin ζ(h)` over `h_range` (FWHM in pixels).
pub fn minimize_radial(pre: &GcvPrecompute, grid: &ImageGrid, h_range: (f64, f64)) -> Result<RadialSelection> {
    let mut obj = GcvObjective::new(pre, grid)?;
    let m = log_grid_golden(
        |h| Ok(obj.evaluate(Bandwidth::Radial(RadialBandwidth::new(h)?))?.zeta),
        h_range.0,
        h_range.1,
        RADIAL_GRID_POINTS,
        REL_TOL,
    )?;
    let bandwidth = RadialBandwidth::new(m.x)?;
    Ok(RadialSelection {
        bandwidth,
        objective: obj.evaluate(Bandwidth::Radial(bandwidth))?,
        boundary_hit: m.boundary_hit,
    })
}

/// Box for the elliptical search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticalBounds {
    pub h: (f64, f64),
    pub rho_max: f64,
}

impl EllipticalBounds {
    pub fn new(h: (f64, f64), rho_max: f64) -> Result<Self> {
        if !(h.0 > 0.0 && h.1 > h.0 && h.1.is_finite()) {
            return Err(Error::InvalidInput(format!("bandwidth range [{}, {}] is invalid", h.0, h.1)));
        }
        if !(0.0..=0.95).contains(&rho_max) {
            return Err(Error::InvalidInput(format!("rho bound {rho_max} must lie in [0, 0.95]")));
        }
        Ok(Self { h, rho_max })
    }

    pub fn project(&self, x: &mut [f64; 3]) {
        let (lo, hi) = (self.h.0.ln(), self.h.1.ln());
        x[0] = x[0].clamp(lo, hi);
        x[1] = x[1].clamp(lo, hi);
        x[2] = x[2].clamp(-self.rho_max, self.rho_max);
    }

    pub fn on_boundary(&self, b: &EllipticalBandwidth) -> bool {
        let near = |v: f64, edge: f64| (v - edge).abs() <= 1e-9 * edge.abs().max(1.0);
        near(b.h1, self.h.0) || near(b.h1, self.h.1) || near(b.h2, self.h.0) || near(b.h2, self.h.1)
            || near(b.rho.abs(), self.rho_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticalSelection {
    pub bandwidth: EllipticalBandwidth,
    pub objective: GcvObjectiveValue,
    pub radial: RadialSelection,
    pub converged: bool,
    pub iterations: usize,
    pub boundary_hit: bool,
}

/// Outcome of [`nelder_mead`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexMin {
    pub x: [f64; 3],
    pub fx: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub const NM_MAX_ITER: usize = 500;

/// Nelder–Mead in three dimensions with reflection 1, expansion 2,
/// contraction ½ and shrink ½. Trial points are projected by `project`.
/// Stops when the simplex diameter (max-norm) drops below `tol`.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64; 3]) -> Result<f64>,
    x0: [f64; 3],
    steps: [f64; 3],
    project: impl Fn(&mut [f64; 3]),
    tol: f64,
    max_iter: usize,
) -> Result<SimplexMin> {
    let mut eval = |x: &[f64; 3]| -> Result<f64> {
        let v = f(x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("{x:?}")))
        }
    };
    let mut simplex: Vec<([f64; 3], f64)> = Vec::with_capacity(4);
    let mut start = x0;
    project(&mut start);
    simplex.push((start, eval(&start)?));
    for d in 0..3 {
        let mut x = start;
        x[d] += steps[d];
        project(&mut x);
        if x == start {
            x[d] -= steps[d];
            x[d] -= steps[d];
            project(&mut x);
        }
        let fx = eval(&x)?;
        simplex.push((x, fx));
    }
    let combine = |a: &[f64; 3], b: &[f64; 3], t: f64| -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = a[i] + t * (b[i] - a[i]);
        }
        out
    };
    let diameter = |s: &[([f64; 3], f64)]| -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                for k in 0..3 {
                    d = d.max((s[i].0[k] - s[j].0[k]).abs());
                }
            }
        }
        d
    };
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        // stable sort keeps earlier (older) vertices first on ties
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if diameter(&simplex) < tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut centroid = [0.0; 3];
        for (x, _) in &simplex[..3] {
            for k in 0..3 {
                centroid[k] += x[k] / 3.0;
            }
        }
        let (worst, f_worst) = simplex[3];
        let f_best = simplex[0].1;
        let f_second_worst = simplex[2].1;
        let mut xr = combine(&centroid, &worst, -1.0);
        project(&mut xr);
        let fr = eval(&xr)?;
        if fr < f_best {
            let mut xe = combine(&centroid, &worst, -2.0);
            project(&mut xe);
            let fe = eval(&xe)?;
            simplex[3] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < f_second_worst {
            simplex[3] = (xr, fr);
            continue;
        }
        let (mut xc, outside) = if fr < f_worst {
            (combine(&centroid, &xr, 0.5), true)
        } else {
            (combine(&centroid, &worst, 0.5), false)
        };
        project(&mut xc);
        let fc = eval(&xc)?;
        if (outside && fc <= fr) || (!outside && fc < f_worst) {
            simplex[3] = (xc, fc);
            continue;
        }
        let best = simplex[0].0;
        for v in simplex.iter_mut().skip(1) {
            let mut x = combine(&best, &v.0, 0.5);
            project(&mut x);
            *v = (x, eval(&x)?);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(SimplexMin {
        x: simplex[0].0,
        fx: simplex[0].1,
        iterations,
        converged,
    })
}

/// `(h1, h2, ρ)` minimizing `ζ`, started from the radial minimizer.
///
/// The simplex lives in `(ln h1, ln h2, ρ)` so the diameter test is relative
/// in the bandwidths.
pub fn minimize_elliptical(pre: &GcvPrecompute, grid: &ImageGrid, bounds: EllipticalBounds) -> Result<EllipticalSelection> {
    let radial = minimize_radial(pre, grid, bounds.h)?;
    minimize_elliptical_from(pre, grid, bounds, radial)
}

pub fn minimize_elliptical_from(
    pre: &GcvPrecompute,
    grid: &ImageGrid,
    bounds: EllipticalBounds,
    radial: RadialSelection,
) -> Result<EllipticalSelection> {
    let mut obj = GcvObjective::new(pre, grid)?;
    let to_bw = |x: &[f64; 3]| EllipticalBandwidth::new(x[0].exp(), x[1].exp(), x[2]);
    let h0 = radial.bandwidth.fwhm.ln();
    let m = nelder_mead(
        |x| Ok(obj.evaluate(Bandwidth::Elliptical(to_bw(x)?))?.zeta),
        [h0, h0, 0.0],
        [0.1, 0.1, 0.1],
        |x| bounds.project(x),
        REL_TOL,
        NM_MAX_ITER,
    )?;
    let bandwidth = to_bw(&m.x)?;
    let mut objective = obj.evaluate(Bandwidth::Elliptical(bandwidth))?;
    objective.zeta = m.fx;
    Ok(EllipticalSelection {
        bandwidth,
        objective,
        radial,
        converged: m.converged,
        iterations: m.iterations,
        boundary_hit: bounds.on_boundary(&bandwidth),
    })
}

/// Literal leave-one-out PRESS, `(1/n)Σ_j (k_j'λ̂₋ⱼ − y_j)²` with
/// `λ̂₋ⱼ = S (K₋ⱼ'K₋ⱼ)⁻¹ K₋ⱼ'y₋ⱼ`, for small dense problems.
pub fn press_bruteforce(y: &DVector<f64>, k: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<f64> {
    let (n, p) = k.shape();
    if y.len() != n || s.shape() != (p, p) {
        return Err(Error::InvalidInput(format!(
            "dimensions disagree: y {}, K {n}x{p}, S {:?}",
            y.len(),
            s.shape()
        )));
    }
    if n > 64 {
        return Err(Error::InvalidInput(format!("brute-force PRESS is for n <= 64, got {n}")));
    }
    let mut total = 0.0;
    for j in 0..n {
        let kj = k.clone().remove_row(j);
        let yj = y.clone().remove_row(j);
        let normal = kj.transpose() * &kj;
        let chol = normal
            .cholesky()
            .ok_or_else(|| Error::Singular(format!("K'K without row {j}")))?;
        let lambda = s * chol.solve(&(kj.transpose() * yj));
        let pred = k.row(j).dot(&lambda.transpose());
        total += (pred - y[j]).powi(2);
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circulant::Spectrum2D;

    fn toy_pre(z1: Vec<f64>, z2_sq: f64, n: usize) -> GcvPrecompute {
        let p = z1.len();
        GcvPrecompute {
            yty: z1.iter().map(|v| v * v).sum::<f64>() + z2_sq,
            d_singular: vec![1.0; p],
            floored: vec![false; p],
            z1,
            z2_sq,
            n,
            p,
            rows: 2,
            cols: p / 2,
        }
    }

    #[test]
    fn zeta_without_smoothing() {
        let pre = toy_pre(vec![1.0, -2.0, 0.5, 3.0], 7.0, 10);
        let v = zeta(&pre, &Spectrum2D::constant(2, 2, 1.0)).unwrap();
        let expected = (1.0 + 4.0 / 6.0f64).powi(2) * 7.0;
        assert!((v.zeta - expected).abs() < 1e-12);
        assert!((v.c_of_h - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn zeta_with_total_smoothing_is_yty() {
        let pre = toy_pre(vec![1.0, -2.0, 0.5, 3.0], 7.0, 10);
        let v = zeta(&pre, &Spectrum2D::constant(2, 2, 0.0)).unwrap();
        assert!((v.zeta - pre.yty).abs() < 1e-12);
        assert_eq!(v.c_of_h, 0.0);
    }

    #[test]
    fn square_system_rejected() {
        let pre = toy_pre(vec![1.0; 4], 0.0, 4);
        assert!(matches!(
            zeta(&pre, &Spectrum2D::constant(2, 2, 0.5)),
            Err(Error::DegenerateDof { n: 4, p: 4 })
        ));
    }

    #[test]
    fn floored_frequencies_leave_the_sums() {
        let mut pre = toy_pre(vec![1.0, 2.0, 0.0, 3.0], 1.0, 6);
        pre.floored[2] = true;
        let v = zeta(&pre, &Spectrum2D::new(2, 2, vec![1.0, 0.5, 0.5, 0.0]).unwrap()).unwrap();
        // p_eff = 3, trace over kept frequencies = 1.5
        let c = 1.5 / 3.0;
        let expected = 0.25 * 4.0 + 9.0 + (1.0 + c) * (1.0 + c) * 1.0;
        assert!((v.zeta - expected).abs() < 1e-12);
    }

    #[test]
    fn zeta_is_continuous_in_omega() {
        let pre = toy_pre(vec![1.0, -2.0, 0.5, 3.0], 7.0, 10);
        let base = Spectrum2D::new(2, 2, vec![1.0, 0.6, 0.6, 0.2]).unwrap();
        let z0 = zeta(&pre, &base).unwrap().zeta;
        for delta in [1e-3, 1e-5, 1e-7] {
            let pert = Spectrum2D::new(2, 2, base.values().iter().map(|w| w + delta).collect()).unwrap();
            let z1 = zeta(&pre, &pert).unwrap().zeta;
            assert!((z1 - z0).abs() < 100.0 * delta);
        }
    }

    #[test]
    fn golden_finds_dip() {
        for target in [0.7, 3.3, 12.0, 41.0] {
            let m = log_grid_golden(|x: f64| Ok((x.ln() - f64::ln(target)).powi(2) + 1.0), 0.5, 50.0, 40, 1e-3).unwrap();
            assert!(!m.boundary_hit);
            assert!(((m.x - target) / target).abs() < 1e-3, "{} vs {target}", m.x);
        }
    }

    #[test]
    fn monotone_objective_hits_boundary() {
        let m = log_grid_golden(|x: f64| Ok(-x), 1.0, 20.0, 40, 1e-3).unwrap();
        assert!(m.boundary_hit);
        assert_eq!(m.x, 20.0);
        let m = log_grid_golden(|x: f64| Ok(x), 1.0, 20.0, 40, 1e-3).unwrap();
        assert!(m.boundary_hit);
        assert_eq!(m.x, 1.0);
    }

    #[test]
    fn flat_objective_prefers_small_values() {
        let m = log_grid_golden(|_| Ok(1.0), 1.0, 20.0, 40, 1e-3).unwrap();
        assert_eq!(m.x, 1.0);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let r = log_grid_golden(|x: f64| Ok(if x > 5.0 { f64::NAN } else { x }), 1.0, 20.0, 40, 1e-3);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn nelder_mead_on_quadratic() {
        let m = nelder_mead(
            |x| Ok((x[0] - 1.0).powi(2) + 2.0 * (x[1] + 0.5).powi(2) + 3.0 * (x[2] - 0.2).powi(2) + x[0] * x[2]),
            [0.0, 0.0, 0.0],
            [0.1, 0.1, 0.1],
            |_| {},
            1e-6,
            500,
        )
        .unwrap();
        assert!(m.converged);
        // stationary point of the quadratic
        let a = nalgebra::Matrix3::new(2.0, 0.0, 1.0, 0.0, 4.0, 0.0, 1.0, 0.0, 6.0);
        let b = nalgebra::Vector3::new(2.0, -2.0, 1.2);
        let x = a.lu().solve(&b).unwrap();
        for k in 0..3 {
            assert!((m.x[k] - x[k]).abs() < 1e-5);
        }
    }

    #[test]
    fn nelder_mead_respects_projection() {
        let m = nelder_mead(
            |x| Ok((x[0] - 5.0).powi(2) + x[1].powi(2) + x[2].powi(2)),
            [0.0, 0.0, 0.0],
            [0.1, 0.1, 0.1],
            |x| x[0] = x[0].min(1.0),
            1e-6,
            500,
        )
        .unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn press_hat_matrix_shortcut() {
        // classical LOOCV of least squares: e_j / (1 - H_jj)
        let (n, p) = (9, 3);
        let mut seed = 3u64;
        let mut rnd = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
        };
        let k = DMatrix::from_fn(n, p, |_, _| rnd());
        let y = DVector::from_fn(n, |_, _| rnd());
        let press = press_bruteforce(&y, &k, &DMatrix::identity(p, p)).unwrap();
        let kt = k.transpose();
        let h = &k * (&kt * &k).try_inverse().unwrap() * &kt;
        let resid = &y - &h * &y;
        let shortcut: f64 = (0..n).map(|j| (resid[j] / (1.0 - h[(j, j)])).powi(2)).sum::<f64>() / n as f64;
        assert!((press - shortcut).abs() < 1e-10 * shortcut);
    }

    #[test]
    fn press_on_barely_overdetermined_system() {
        let (n, p) = (4, 3);
        let k = DMatrix::from_fn(n, p, |i, j| ((i * 3 + j * 7) % 5) as f64 + if i == j { 3.0 } else { 0.0 });
        let y = DVector::from_fn(n, |i, _| i as f64);
        let v = press_bruteforce(&y, &k, &DMatrix::identity(p, p)).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn press_reports_singular_systems() {
        let k = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            press_bruteforce(&y, &k, &DMatrix::identity(2, 2)),
            Err(Error::Singular(_))
        ));
    }
}
