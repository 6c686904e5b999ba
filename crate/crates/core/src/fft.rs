//! Thin 2D wrapper over `rustfft`.
//!
//! Forward transforms are unnormalized with kernel `exp(-2πi·kn/N)`; inverse
//! transforms are unnormalized with kernel `exp(+2πi·kn/N)`. Callers that want
//! a true inverse divide by `rows * cols` themselves.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Row-major 2D FFT plans plus a transpose buffer for the column pass.
pub struct Fft2d {
    rows: usize,
    cols: usize,
    fwd_row: Arc<dyn Fft<f64>>,
    inv_row: Arc<dyn Fft<f64>>,
    fwd_col: Arc<dyn Fft<f64>>,
    inv_col: Arc<dyn Fft<f64>>,
    transposed: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Fft2d {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd_row = planner.plan_fft_forward(cols);
        let inv_row = planner.plan_fft_inverse(cols);
        let fwd_col = planner.plan_fft_forward(rows);
        let inv_col = planner.plan_fft_inverse(rows);
        let scratch_len = [&fwd_row, &inv_row, &fwd_col, &inv_col]
            .iter()
            .map(|p| p.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        Self {
            rows,
            cols,
            fwd_row,
            inv_row,
            fwd_col,
            inv_col,
            transposed: vec![Complex64::new(0.0, 0.0); rows * cols],
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn forward(&mut self, data: &mut [Complex64]) {
        let (row, col) = (self.fwd_row.clone(), self.fwd_col.clone());
        self.run(data, &*row, &*col);
    }

    pub fn inverse(&mut self, data: &mut [Complex64]) {
        let (row, col) = (self.inv_row.clone(), self.inv_col.clone());
        self.run(data, &*row, &*col);
    }

    /// Forward transform of a real array.
    pub fn forward_real(&mut self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// Normalized inverse transform, keeping the real part.
    pub fn inverse_real(&mut self, data: &mut [Complex64]) -> Vec<f64> {
        self.inverse(data);
        let scale = 1.0 / (self.rows * self.cols) as f64;
        data.iter().map(|c| c.re * scale).collect()
    }

    fn run(&mut self, data: &mut [Complex64], row: &dyn Fft<f64>, col: &dyn Fft<f64>) {
        assert_eq!(data.len(), self.rows * self.cols, "buffer does not match plan");
        let (rows, cols) = (self.rows, self.cols);
        if cols > 1 {
            row.process_with_scratch(data, &mut self.scratch);
        }
        if rows > 1 {
            for r in 0..rows {
                for c in 0..cols {
                    self.transposed[c * rows + r] = data[r * cols + c];
                }
            }
            col.process_with_scratch(&mut self.transposed, &mut self.scratch);
            for c in 0..cols {
                for r in 0..rows {
                    data[r * cols + c] = self.transposed[c * rows + r];
                }
            }
        }
    }
}

impl std::fmt::Debug for Fft2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2d")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish()
    }
}
