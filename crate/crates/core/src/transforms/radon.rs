//! Parallel-beam Radon transform on the detector plane and its exact
//! transpose.
//!
//! Both directions share one sparse matrix built from ray samples: for line
//! `(s, μ)` the points `s (cos μ, sin μ) + t (-sin μ, cos μ)` at midpoints of
//! a uniform `t` grid over `[-s_max, s_max]`, step at most half a pixel,
//! bilinear taps merged per pixel.
//! Inner products carry `Δs Δμ` on sinograms and the pixel area on images,
//! which makes the transpose a discretization of `∫ dμ p(x cos μ + y sin μ, μ)`.

use ndarray::{Array2, ArrayView2};

use super::interp::{clip_to_box, Bilinear};
use crate::error::{check_shape, Result};
use crate::geometry::{DetectorGrid, LineGrid};
use crate::scalar::Real;

/// The Radon operator between a detector grid and a line grid, stored as a
/// sparse matrix with one row per line and the bilinear taps of all samples
/// on that line merged per pixel.
#[derive(Clone, Debug)]
pub struct RadonOperator {
    det: DetectorGrid,
    grid: LineGrid,
    dt: f64,
    /// Row `k` occupies `offsets[k]..offsets[k + 1]` of `pixels`/`weights`.
    offsets: Vec<usize>,
    pixels: Vec<u32>,
    /// Tap weights including the step `dt`.
    weights: Vec<f64>,
}

impl RadonOperator {
    pub fn new(det: &DetectorGrid, grid: &LineGrid) -> Self {
        let t_max = grid.s_max();
        let target = 0.5 * det.spacing[0].min(det.spacing[1]);
        let n_t = ((2.0 * t_max / target).ceil() as usize).max(1);
        let dt = 2.0 * t_max / n_t as f64;
        let t_start = -t_max + 0.5 * dt;
        let (rows, cols) = det.shape();
        let (cr, cc) = det.index_of(0.0, 0.0);
        let mut offsets = Vec::with_capacity(grid.n_mu * grid.n_s + 1);
        offsets.push(0);
        let mut pixels = Vec::new();
        let mut weights = Vec::new();
        let mut taps: Vec<(u32, f64)> = Vec::new();
        for j in 0..grid.n_mu {
            let (sm, cm) = grid.mu(j).sin_cos();
            for i in 0..grid.n_s {
                let s = grid.s(i);
                let p0 = [cr + s * sm / det.spacing[0], cc + s * cm / det.spacing[1]];
                let dp = [cm / det.spacing[0], -sm / det.spacing[1]];
                taps.clear();
                if let Some((t0, t1)) = clip_to_box(&p0, &dp, &[rows, cols], -t_max, t_max) {
                    let k0 = ((t0 - t_start) / dt).ceil().max(0.0) as usize;
                    let k1 = (((t1 - t_start) / dt).floor() as isize).min(n_t as isize - 1);
                    for k in k0 as isize..=k1 {
                        let t = t_start + k as f64 * dt;
                        if let Some(b) = Bilinear::new(p0[0] + t * dp[0], p0[1] + t * dp[1], rows, cols) {
                            taps.extend(b.iter().map(|&(r, c, w)| ((r * cols + c) as u32, w * dt)));
                        }
                    }
                }
                taps.sort_unstable_by_key(|t| t.0);
                for &(p, w) in &taps {
                    if pixels.len() > *offsets.last().unwrap() && *pixels.last().unwrap() == p {
                        *weights.last_mut().unwrap() += w;
                    } else {
                        pixels.push(p);
                        weights.push(w);
                    }
                }
                offsets.push(pixels.len());
            }
        }
        RadonOperator {
            det: det.clone(),
            grid: grid.clone(),
            dt,
            offsets,
            pixels,
            weights,
        }
    }

    pub fn step(&self) -> f64 {
        self.dt
    }

    /// Stored nonzeros.
    pub fn nnz(&self) -> usize {
        self.pixels.len()
    }

    fn row(&self, k: usize) -> (&[u32], &[f64]) {
        let r = self.offsets[k]..self.offsets[k + 1];
        (&self.pixels[r.clone()], &self.weights[r])
    }

    /// `A_2d`: line integrals of a detector image.
    pub fn forward<T: Real>(&self, img: &ArrayView2<'_, T>) -> Result<Array2<T>> {
        check_shape(&[self.det.n_rows, self.det.n_cols], img.shape())?;
        let flat: Vec<f64> = img.iter().map(|v| v.f64()).collect();
        let values = (0..self.offsets.len() - 1)
            .map(|k| {
                let (px, w) = self.row(k);
                T::of(px.iter().zip(w).map(|(&p, &w)| w * flat[p as usize]).sum())
            })
            .collect();
        Ok(Array2::from_shape_vec(self.grid.shape(), values).expect("line grid shape"))
    }

    /// `A_2dᵀ`: transpose of [`forward`](Self::forward) under the weighted
    /// inner products.
    pub fn adjoint<T: Real>(&self, sino: &ArrayView2<'_, T>) -> Result<Array2<T>> {
        let (n_mu, n_s) = self.grid.shape();
        check_shape(&[n_mu, n_s], sino.shape())?;
        let scale = self.weight_ratio();
        let mut acc = vec![0.0f64; self.det.n_rows * self.det.n_cols];
        for (k, &y) in sino.iter().enumerate() {
            let y = y.f64();
            if y == 0.0 {
                continue;
            }
            let y = y * scale;
            let (px, w) = self.row(k);
            for (&p, &w) in px.iter().zip(w) {
                acc[p as usize] += w * y;
            }
        }
        Ok(Array2::from_shape_vec(self.det.shape(), acc.into_iter().map(T::of).collect()).expect("detector shape"))
    }

    /// Ratio between the sinogram and image inner-product weights,
    /// `Δs Δμ / (Δx Δy)`. The plain matrix transpose of [`adjoint`](Self::adjoint)
    /// is this factor times [`forward`](Self::forward).
    pub fn weight_ratio(&self) -> f64 {
        self.grid.s_spacing * self.grid.mu_spacing / self.det.pixel_area()
    }
}

/// Parallel-beam Radon transform of one detector image.
pub fn radon2d<T: Real>(img: &ArrayView2<'_, T>, det: &DetectorGrid, grid: &LineGrid) -> Result<Array2<T>> {
    RadonOperator::new(det, grid).forward(img)
}

/// Exact adjoint of [`radon2d`].
pub fn radon2d_adjoint<T: Real>(sino: &ArrayView2<'_, T>, det: &DetectorGrid, grid: &LineGrid) -> Result<Array2<T>> {
    RadonOperator::new(det, grid).adjoint(sino)
}

/// `⟨a, b⟩` with a constant quadrature weight.
pub fn weighted_dot<T: Real>(a: &ArrayView2<'_, T>, b: &ArrayView2<'_, T>, weight: f64) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.f64() * y.f64()).sum::<f64>() * weight
}
