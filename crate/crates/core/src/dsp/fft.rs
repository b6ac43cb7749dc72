use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::Grid;
use crate::{Error, Result};

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Planned zero-padded 2D FFT from a `chirps x samples` block to a
/// Doppler-centred `doppler x range` spectrum.
pub struct Fft2d {
    input: (usize, usize),
    output: (usize, usize),
    range_fft: Arc<dyn Fft<f64>>,
    doppler_fft: Arc<dyn Fft<f64>>,
    slow_window: Vec<f64>,
    fast_window: Vec<f64>,
    window: bool,
    column: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Fft2d {
    pub fn new(input: (usize, usize), pad_to: (usize, usize), window: bool) -> Result<Self> {
        let (rows, cols) = pad_to;
        if !rows.is_power_of_two() || !cols.is_power_of_two() {
            return Err(Error::invalid(format!("FFT sizes {rows}x{cols} must be powers of two")));
        }
        if input.0 == 0 || input.1 == 0 || input.0 > rows || input.1 > cols {
            return Err(Error::invalid(format!(
                "input {}x{} does not fit padded size {rows}x{cols}",
                input.0, input.1
            )));
        }
        let mut planner = FftPlanner::new();
        let range_fft = planner.plan_fft_forward(cols);
        let doppler_fft = planner.plan_fft_forward(rows);
        let scratch_len = range_fft
            .get_inplace_scratch_len()
            .max(doppler_fft.get_inplace_scratch_len());
        Ok(Self {
            input,
            output: pad_to,
            range_fft,
            doppler_fft,
            slow_window: hann(input.0),
            fast_window: hann(input.1),
            window,
            column: vec![Complex64::default(); rows],
            scratch: vec![Complex64::default(); scratch_len],
        })
    }

    pub fn output_shape(&self) -> (usize, usize) {
        self.output
    }

    /// Transforms a row-major `chirps x samples` block.
    pub fn process(&mut self, block: &[Complex64]) -> Result<Grid<Complex64>> {
        let (p, n) = self.input;
        let (rows, cols) = self.output;
        if block.len() != p * n {
            return Err(Error::invalid(format!(
                "FFT input has {} values, expected {p}x{n}",
                block.len()
            )));
        }
        let mut out = Grid::filled(rows, cols, Complex64::default());
        // fast-time FFT; rows >= p stay zero and are the slow-time padding
        for chirp in 0..p {
            let row = out.row_mut(chirp);
            let w_slow = if self.window { self.slow_window[chirp] } else { 1.0 };
            for (i, (dst, src)) in row.iter_mut().zip(&block[chirp * n..(chirp + 1) * n]).enumerate() {
                let w = if self.window { w_slow * self.fast_window[i] } else { 1.0 };
                *dst = src * w;
            }
            self.range_fft.process_with_scratch(row, &mut self.scratch);
        }
        let half = rows / 2;
        let data = out.as_mut_slice();
        for c in 0..cols {
            for (r, v) in self.column.iter_mut().enumerate() {
                *v = if r < p { data[r * cols + c] } else { Complex64::default() };
            }
            self.doppler_fft.process_with_scratch(&mut self.column, &mut self.scratch);
            // centre zero Doppler at row rows/2
            let (lo, hi) = self.column.split_at(rows - half);
            for (k, v) in hi.iter().chain(lo).enumerate() {
                data[k * cols + c] = *v;
            }
        }
        Ok(out)
    }
}

/// One-shot zero-padded 2D FFT with Doppler centring.
///
/// The forward transform is unnormalised, so `sum |X|^2 = rows * cols * sum |x|^2`
/// when no window is applied.
pub fn fft_2d(block: &Grid<Complex64>, pad_to: (usize, usize), window: bool) -> Result<Grid<Complex64>> {
    Fft2d::new(block.shape(), pad_to, window)?.process(block.as_slice())
}

/// Inverse of [`fft_2d`] for the unpadded, unwindowed case.
pub fn ifft_2d(spectrum: &Grid<Complex64>) -> Result<Grid<Complex64>> {
    let (rows, cols) = spectrum.shape();
    if !rows.is_power_of_two() || !cols.is_power_of_two() {
        return Err(Error::invalid("inverse FFT sizes must be powers of two"));
    }
    let mut planner = FftPlanner::new();
    let inv_rows = planner.plan_fft_inverse(rows);
    let inv_cols = planner.plan_fft_inverse(cols);
    let half = rows / 2;
    let mut out = Grid::filled(rows, cols, Complex64::default());
    let mut column = vec![Complex64::default(); rows];
    for c in 0..cols {
        for k in 0..rows {
            column[k] = spectrum[((k + half) % rows, c)];
        }
        inv_rows.process(&mut column);
        for r in 0..rows {
            out[(r, c)] = column[r];
        }
    }
    let scale = 1.0 / (rows * cols) as f64;
    for r in 0..rows {
        let row = out.row_mut(r);
        inv_cols.process(row);
        row.iter_mut().for_each(|z| *z *= scale);
    }
    Ok(out)
}
