//! Feldkamp-type filtered backprojection for the full circular orbit, used
//! as the reference reconstruction.

use std::sync::Arc;

use ndarray::{Array2, Array3, Axis};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::data::{ProjectionStack, Volume};
use crate::error::{Error, Result};
use crate::geometry::{OrbitGeometry, VolumeGrid};
use crate::scalar::Real;
use crate::transforms::backproject_weighted;
use crate::weights::cosine_weight;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RampPadding {
    /// Linear convolution with the band-limited spatial kernel, zero padded
    /// to at least twice the row length.
    Zero,
    /// Circular convolution: the DFT of the row is multiplied by `|ω|`.
    Periodic,
}

/// Spatial Ram-Lak kernel: `h[0] = 1/(4Δ²)`, `h[k odd] = -1/(π k Δ)²`,
/// zero for even `k ≠ 0`.
pub fn ram_lak_kernel(k: i64, spacing: f64) -> f64 {
    if k == 0 {
        1.0 / (4.0 * spacing * spacing)
    } else if k % 2 == 0 {
        0.0
    } else {
        -1.0 / (std::f64::consts::PI * k as f64 * spacing).powi(2)
    }
}

/// Ramp filter for rows of a fixed length and sample spacing.
pub struct RampFilter {
    len: usize,
    padded: usize,
    response: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl RampFilter {
    pub fn new(len: usize, spacing: f64, padding: RampPadding) -> Result<Self> {
        if len < 2 {
            return Err(Error::InvalidArgument(format!("ramp filter needs at least 2 samples, got {len}")));
        }
        let padded = match padding {
            RampPadding::Zero => (2 * len).next_power_of_two(),
            RampPadding::Periodic => len,
        };
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(padded);
        let ifft = planner.plan_fft_inverse(padded);
        let response = match padding {
            RampPadding::Zero => {
                // DFT of the truncated kernel, with the Δ of the convolution sum.
                let mut h: Vec<Complex<f64>> = (0..padded)
                    .map(|i| {
                        let k = if i <= padded / 2 { i as i64 } else { i as i64 - padded as i64 };
                        Complex::new(ram_lak_kernel(k, spacing) * spacing, 0.0)
                    })
                    .collect();
                fft.process(&mut h);
                h.iter().map(|c| c.re).collect()
            }
            RampPadding::Periodic => (0..padded)
                .map(|m| {
                    let m = m.min(padded - m);
                    m as f64 / (padded as f64 * spacing)
                })
                .collect(),
        };
        Ok(RampFilter {
            len,
            padded,
            response,
            fft,
            ifft,
        })
    }

    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.len {
            return Err(Error::ShapeMismatch {
                expected: vec![self.len],
                actual: vec![row.len()],
            });
        }
        let mut buf: Vec<Complex<f64>> = row
            .iter()
            .map(|&v| Complex::new(v, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(self.padded)
            .collect();
        self.fft.process(&mut buf);
        for (b, h) in buf.iter_mut().zip(&self.response) {
            *b *= h;
        }
        self.ifft.process(&mut buf);
        let norm = 1.0 / self.padded as f64;
        Ok(buf[..self.len].iter().map(|c| c.re * norm).collect())
    }
}

/// Ram-Lak filtering of one row with zero padding.
pub fn ramp_filter_row(row: &[f64], spacing: f64) -> Result<Vec<f64>> {
    RampFilter::new(row.len(), spacing, RampPadding::Zero)?.apply(row)
}

/// FDK reconstruction: cosine weighting, row-wise ramp filtering, and
/// backprojection with weight `Δλ R D / (2 U²)` where `U` is the voxel depth
/// along the central ray.
pub fn fdk_reconstruct<T: Real>(p: &ProjectionStack<T>, geom: &OrbitGeometry, grid: &VolumeGrid) -> Result<Volume<T>> {
    if !geom.is_full_circle() {
        return Err(Error::Unsupported("FDK needs a full circular scan".into()));
    }
    if p.n_views() != geom.n_views() {
        return Err(Error::ShapeMismatch {
            expected: vec![geom.n_views(), p.det.n_rows, p.det.n_cols],
            actual: p.data.shape().to_vec(),
        });
    }
    let det = &p.det;
    let d = geom.source_detector_distance;
    let r = geom.source_isocenter_distance;
    let cosw = cosine_weight::<f64>(det, d);
    let cosw = cosw.layer(0);
    let filter = RampFilter::new(det.n_cols, det.spacing[1], RampPadding::Zero)?;
    let filtered: Vec<Array2<T>> = p
        .data
        .outer_iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|img| {
            let mut out = Array2::<T>::zeros(det.shape());
            for (row_idx, mut dst) in out.outer_iter_mut().enumerate() {
                let row: Vec<f64> = (0..det.n_cols)
                    .map(|c| img[[row_idx, c]].f64() * cosw[[row_idx, c]])
                    .collect();
                let q = filter.apply(&row).expect("row length matches");
                dst.iter_mut().zip(q).for_each(|(o, v)| *o = T::of(v));
            }
            out
        })
        .collect();
    let mut data = Array3::<T>::zeros(p.data.raw_dim());
    for (mut dst, src) in data.axis_iter_mut(Axis(0)).zip(filtered) {
        dst.assign(&src);
    }
    let q = ProjectionStack::from_data(det, data)?;
    backproject_weighted(&q, geom, grid, |view, _, depth| 0.5 * view.weight * r * d / (depth * depth))
}
