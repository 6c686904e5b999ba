#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use tomogcv::circulant::{paired_v_2d, Spectrum2D};
use tomogcv::fft::Fft2d;
use tomogcv::gcv::GcvPrecompute;
use tomogcv::projector::{Image, ImageGrid, KtkModel};

pub struct Lcg(pub u64);

impl Lcg {
    pub fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((self.0 >> 11) as f64) / ((1u64 << 53) as f64)
    }

    pub fn centered(&mut self) -> f64 {
        self.next() - 0.5
    }
}

/// Dense paired real eigenbasis: column `ν` is `V e_ν`.
pub fn dense_v(rows: usize, cols: usize) -> DMatrix<f64> {
    let p = rows * cols;
    let mut v = DMatrix::zeros(p, p);
    for nu in 0..p {
        let mut e = vec![0.0; p];
        e[nu] = 1.0;
        let col = paired_v_2d(&e, rows, cols);
        for i in 0..p {
            v[(i, nu)] = col[i];
        }
    }
    v
}

/// Real Fourier basis of length `n`: DC, cos/sin pairs, then Nyquist when `n` is even.
fn real_fourier_column(n: usize, kind: FourierColumn) -> DVector<f64> {
    let nf = n as f64;
    let tau = 2.0 * std::f64::consts::PI;
    DVector::from_fn(n, |j, _| match kind {
        FourierColumn::Dc => 1.0 / nf.sqrt(),
        FourierColumn::Nyquist => (if j % 2 == 0 { 1.0 } else { -1.0 }) / nf.sqrt(),
        FourierColumn::Cos(m) => (2.0 / nf).sqrt() * (tau * (m * j) as f64 / nf).cos(),
        FourierColumn::Sin(m) => (2.0 / nf).sqrt() * (tau * (m * j) as f64 / nf).sin(),
    })
}

#[derive(Clone, Copy)]
enum FourierColumn {
    Dc,
    Nyquist,
    Cos(usize),
    Sin(usize),
}

/// `n × p` block of a real circulant eigenbasis, assigned to the image
/// frequencies so that every `W` cos/sin pair carries two frequencies with
/// equal radial-kernel eigenvalue. Then `diag(W Ω W')` is `tr Ω / n` in every
/// row, which is what makes the rotated model exact.
pub fn rotated_w(rows: usize, cols: usize, n: usize) -> DMatrix<f64> {
    assert_eq!(rows, cols, "swap pairing needs a square grid");
    let p = rows * cols;
    let conj = |i: usize| {
        let (k, j) = (i / cols, i % cols);
        ((rows - k) % rows) * cols + (cols - j) % cols
    };
    let swap = |i: usize| (i % cols) * cols + i / cols;
    let mut assigned = vec![false; p];
    let mut singles = vec![];
    let mut units = vec![];
    for i in 0..p {
        if assigned[i] {
            continue;
        }
        let c = conj(i);
        if c != i {
            units.push((i, c));
            assigned[i] = true;
            assigned[c] = true;
        } else if swap(i) != i && conj(swap(i)) == swap(i) {
            units.push((i, swap(i)));
            assigned[i] = true;
            assigned[swap(i)] = true;
        } else {
            singles.push(i);
            assigned[i] = true;
        }
    }
    let mut single_columns = vec![FourierColumn::Dc];
    if n.is_multiple_of(2) {
        single_columns.push(FourierColumn::Nyquist);
    }
    assert!(singles.len() <= single_columns.len(), "not enough real singles in W");
    assert!(units.len() < n.div_ceil(2), "not enough cos/sin pairs in W");
    let mut w = DMatrix::zeros(n, p);
    for (s, kind) in singles.iter().zip(single_columns) {
        w.set_column(*s, &real_fourier_column(n, kind));
    }
    for (m, &(a, b)) in units.iter().enumerate() {
        w.set_column(a, &real_fourier_column(n, FourierColumn::Cos(m + 1)));
        w.set_column(b, &real_fourier_column(n, FourierColumn::Sin(m + 1)));
    }
    w
}

/// Rotated model `K̃ = W D V'`.
pub struct RotatedModel {
    pub grid: ImageGrid,
    pub k: DMatrix<f64>,
    pub v: DMatrix<f64>,
    /// `D•` in linear frequency order.
    pub d: Vec<f64>,
}

impl RotatedModel {
    pub fn new(side: usize, n: usize, seed: u64) -> Self {
        let grid = ImageGrid::new(side, side, 1.0).unwrap();
        let p = side * side;
        let v = dense_v(side, side);
        let w = rotated_w(side, side, n);
        let mut rng = Lcg(seed);
        let d: Vec<f64> = (0..p).map(|_| 0.5 + 1.5 * rng.next()).collect();
        let k = &w * DMatrix::from_diagonal(&DVector::from_vec(d.clone())) * v.transpose();
        Self { grid, k, v, d }
    }
}

/// Sufficient statistics of a dense `K = W D V'` with known singular values `d`.
pub fn precompute_dense(grid: ImageGrid, k: &DMatrix<f64>, d: &[f64], y: &DVector<f64>) -> GcvPrecompute {
    let kty = k.transpose() * y;
    let img = Image::new(grid, kty.iter().copied().collect()).unwrap();
    let spec = Spectrum2D::new(grid.ny, grid.nx, d.iter().map(|v| v * v).collect()).unwrap();
    let model = KtkModel::new(spec, 0.0).unwrap();
    let mut fft = Fft2d::new(grid.ny, grid.nx);
    GcvPrecompute::from_backprojection(&img, y.dot(y), k.nrows(), &model, &mut fft).unwrap()
}
