mod common;

use common::{dense_v, precompute_dense, Lcg, RotatedModel};
use nalgebra::{DMatrix, DVector};
use tomogcv::circulant::paired_vt_2d;
use tomogcv::fft::Fft2d;
use tomogcv::gcv::{precompute, press_bruteforce, zeta};
use tomogcv::kernels::{gaussian_radial, radial_spectrum, RadialBandwidth};
use tomogcv::projector::{Image, ImageGrid, KtkModel, Projector, Sinogram, SinogramGeometry};

fn dense(rows: Vec<Vec<f64>>) -> DMatrix<f64> {
    let n = rows.len();
    DMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j])
}

#[test]
fn rotated_model_has_constant_leverage() {
    let m = RotatedModel::new(4, 24, 1);
    let h = RadialBandwidth::new(1.7).unwrap();
    let s = dense(gaussian_radial(h, &m.grid).to_dense());
    let ktk = m.k.transpose() * &m.k;
    let q = ktk.try_inverse().unwrap();
    let lev = &m.k * &q * m.k.transpose();
    let lev_h = &m.k * &s * &q * m.k.transpose();
    let trace = radial_spectrum(h, &m.grid).trace();
    for j in 0..24 {
        assert!((lev[(j, j)] - 16.0 / 24.0).abs() < 1e-12);
        assert!((lev_h[(j, j)] - trace / 24.0).abs() < 1e-12);
    }
}

#[test]
fn dense_kernel_is_diagonal_in_the_paired_basis() {
    let grid = ImageGrid::new(4, 4, 1.0).unwrap();
    let v = dense_v(4, 4);
    let h = RadialBandwidth::new(2.2).unwrap();
    let s = dense(gaussian_radial(h, &grid).to_dense());
    let omega = radial_spectrum(h, &grid);
    let diag = v.transpose() * s * &v;
    for a in 0..16 {
        for b in 0..16 {
            let expected = if a == b { omega.values()[a] } else { 0.0 };
            assert!((diag[(a, b)] - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn zeta_equals_n_times_bruteforce_press() {
    for (side, n) in [(2, 6), (3, 12), (4, 24)] {
        let m = RotatedModel::new(side, n, 7 + side as u64);
        let mut rng = Lcg(99 + n as u64);
        let y = DVector::from_fn(n, |_, _| 3.0 + rng.centered());
        let pre = precompute_dense(m.grid, &m.k, &m.d, &y);
        for h in [0.3, 0.9, 1.6, 2.8, 6.0] {
            let h = RadialBandwidth::new(h).unwrap();
            let s = dense(gaussian_radial(h, &m.grid).to_dense());
            let z = zeta(&pre, &radial_spectrum(h, &m.grid)).unwrap().zeta;
            let press = press_bruteforce(&y, &m.k, &s).unwrap();
            let rel = (z - n as f64 * press).abs() / z;
            assert!(rel < 1e-8, "side {side}, n {n}, h {}: zeta {z}, n*PRESS {}", h.fwhm, n as f64 * press);
        }
    }
}

#[test]
fn bruteforce_without_smoothing_matches_hat_shortcut_on_rotated_model() {
    let m = RotatedModel::new(3, 12, 5);
    let mut rng = Lcg(17);
    let y = DVector::from_fn(12, |_, _| rng.centered());
    let press = press_bruteforce(&y, &m.k, &DMatrix::identity(9, 9)).unwrap();
    let kt = m.k.transpose();
    let hat = &m.k * (&kt * &m.k).try_inverse().unwrap() * &kt;
    let r = &y - &hat * &y;
    let shortcut: f64 = (0..12).map(|j| (r[j] / (1.0 - hat[(j, j)])).powi(2)).sum::<f64>() / 12.0;
    assert!((press - shortcut).abs() < 1e-10 * shortcut);
}

#[test]
fn residual_energy_matches_dense_svd() {
    let grid = ImageGrid::new(16, 16, 1.0).unwrap();
    let geom = SinogramGeometry::new(16, 20, 1.0).unwrap();
    let proj = Projector::new(grid, geom).unwrap();
    let mut fft = Fft2d::new(16, 16);
    let model = KtkModel::from_projector(&proj, 1e-6, &mut fft).unwrap();
    let d: Vec<f64> = (0..256).map(|i| model.effective(i).sqrt()).collect();
    let (n, p) = (320, 256);
    let mut rng = Lcg(11);
    let raw = DMatrix::from_fn(n, p, |_, _| rng.centered());
    let w = raw.qr().q();
    let v = dense_v(16, 16);
    let k = &w * DMatrix::from_diagonal(&DVector::from_vec(d.clone())) * v.transpose();
    let y = DVector::from_fn(n, |_, _| 10.0 + rng.centered());
    let pre = precompute_dense(grid, &k, &d, &y);
    let svd = k.clone().svd(true, false);
    let u1 = svd.u.unwrap();
    let proj_y = &u1 * (u1.transpose() * &y);
    let oracle = (&y - proj_y).norm_squared();
    let yty = y.dot(&y);
    assert!((pre.z2_sq - oracle).abs() < 1e-8 * yty, "{} vs {oracle}", pre.z2_sq);
}

#[test]
fn noiseless_data_in_the_model_range_has_no_residual() {
    let m = RotatedModel::new(4, 24, 3);
    let mut rng = Lcg(4);
    let x = DVector::from_fn(16, |_, _| rng.next());
    let y = &m.k * x;
    let pre = precompute_dense(m.grid, &m.k, &m.d, &y);
    assert!(pre.z2_sq <= 1e-6 * y.dot(&y));
}

#[test]
fn zero_data_gives_zero_precompute() {
    let grid = ImageGrid::new(8, 8, 1.0).unwrap();
    let geom = SinogramGeometry::new(8, 12, 1.0).unwrap();
    let pre = precompute(&Sinogram::zeros(geom), &grid, &geom).unwrap();
    assert!(pre.z1.iter().all(|&v| v == 0.0));
    assert_eq!(pre.z2_sq, 0.0);
}

fn noisy_problem() -> (ImageGrid, SinogramGeometry, Sinogram) {
    let grid = ImageGrid::new(16, 16, 1.0).unwrap();
    let geom = SinogramGeometry::new(16, 40, 1.0).unwrap();
    let proj = Projector::new(grid, geom).unwrap();
    let mut img = Image::zeros(grid);
    for iy in 0..16 {
        for ix in 0..16 {
            let (x, y) = grid.center(ix, iy);
            img.values[iy * 16 + ix] = if x * x + y * y < 36.0 { 4.0 } else { 0.5 };
        }
    }
    let mut sino = proj.forward(&img).unwrap();
    let mut rng = Lcg(12);
    for v in sino.values.iter_mut() {
        *v += 2.0 * rng.centered() * v.sqrt();
    }
    (grid, geom, sino)
}

#[test]
fn zeta_scales_quadratically_with_data() {
    let (grid, geom, sino) = noisy_problem();
    let pre = precompute(&sino, &grid, &geom).unwrap();
    let scaled = Sinogram::new(geom, sino.values.iter().map(|v| 3.5 * v).collect()).unwrap();
    let pre_scaled = precompute(&scaled, &grid, &geom).unwrap();
    let hs: Vec<f64> = (0..25).map(|i| 0.5 * 1.15f64.powi(i)).collect();
    let mut argmins = [0usize; 2];
    let mut best = [f64::INFINITY; 2];
    for (i, &h) in hs.iter().enumerate() {
        let omega = radial_spectrum(RadialBandwidth::new(h).unwrap(), &grid);
        let a = zeta(&pre, &omega).unwrap().zeta;
        let b = zeta(&pre_scaled, &omega).unwrap().zeta;
        assert!((b - 3.5 * 3.5 * a).abs() < 1e-9 * b);
        for (slot, v) in [a, b].into_iter().enumerate() {
            if v < best[slot] {
                best[slot] = v;
                argmins[slot] = i;
            }
        }
    }
    assert_eq!(argmins[0], argmins[1]);
}

#[test]
fn c_of_h_is_p_times_kernel_center() {
    let (grid, geom, sino) = noisy_problem();
    let pre = precompute(&sino, &grid, &geom).unwrap();
    assert_eq!(pre.floored_count(), 0);
    for h in [0.7, 2.0, 5.5] {
        let h = RadialBandwidth::new(h).unwrap();
        let c = zeta(&pre, &radial_spectrum(h, &grid)).unwrap().c_of_h;
        let center = gaussian_radial(h, &grid).get(0, 0);
        assert!((c - 256.0 * center / (640.0 - 256.0)).abs() < 1e-12);
    }
}

#[test]
fn paired_transform_of_backprojection_is_consistent() {
    let (grid, geom, sino) = noisy_problem();
    let proj = Projector::new(grid, geom).unwrap();
    let kty = proj.back(&sino).unwrap();
    let pre = precompute(&sino, &grid, &geom).unwrap();
    let coeffs = paired_vt_2d(&kty.values, 16, 16);
    for ((z, d), c) in pre.z1.iter().zip(&pre.d_singular).zip(&coeffs) {
        assert!((z * d - c).abs() < 1e-9 * c.abs().max(1.0));
    }
}
