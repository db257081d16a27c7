//! Diagonal weighting operators of the reconstruction chain and smoothing
//! of learned redundancy maps.

use ndarray::{Array2, Array3, ArrayView2, ArrayViewMut2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};
use crate::geometry::{DetectorGrid, LineGrid};
use crate::scalar::Real;

/// Default Gaussian width, in grid bins, applied to learned maps.
pub const DEFAULT_SMOOTHING_SIGMA: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRole {
    /// `D / √(x²+y²+D²)` on the detector.
    Cosine,
    /// `(s²+D²) / D²` on the line grid.
    Sinogram,
    /// The orbit-dependent redundancy weight on the line grid.
    Redundancy,
    /// `x²+y²+D²` on the detector.
    Detector,
}

impl WeightRole {
    pub fn on_line_grid(self) -> bool {
        matches!(self, WeightRole::Sinogram | WeightRole::Redundancy)
    }
}

/// A diagonal weight, either shared by every view (one layer) or given per
/// view.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMap<T> {
    pub role: WeightRole,
    pub trainable: bool,
    /// `(layers, rows, cols)`; `layers == 1` means shared over views.
    pub values: Array3<T>,
}

impl<T: Real> WeightMap<T> {
    pub fn shared(role: WeightRole, values: Array2<T>, trainable: bool) -> Self {
        WeightMap {
            role,
            trainable,
            values: values.insert_axis(Axis(0)),
        }
    }

    pub fn per_view(role: WeightRole, values: Array3<T>, trainable: bool) -> Self {
        WeightMap {
            role,
            trainable,
            values,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.values.len_of(Axis(0))
    }

    pub fn is_shared(&self) -> bool {
        self.n_layers() == 1
    }

    /// `(rows, cols)` of a single layer.
    pub fn plane_shape(&self) -> (usize, usize) {
        let s = self.values.shape();
        (s[1], s[2])
    }

    /// The layer applied to view `view`.
    pub fn layer(&self, view: usize) -> ArrayView2<'_, T> {
        let k = if self.is_shared() { 0 } else { view };
        self.values.index_axis(Axis(0), k)
    }

    pub fn map_values(&self, f: impl Fn(T) -> T) -> Self {
        WeightMap {
            role: self.role,
            trainable: self.trainable,
            values: self.values.mapv(f),
        }
    }

    pub fn cast<U: Real>(&self) -> WeightMap<U> {
        WeightMap {
            role: self.role,
            trainable: self.trainable,
            values: self.values.mapv(|v| U::of(v.f64())),
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|v| v.f64()).sum::<f64>() / self.values.len() as f64
    }

    pub fn mean_abs(&self) -> f64 {
        self.values.iter().map(|v| v.f64().abs()).sum::<f64>() / self.values.len() as f64
    }
}

/// `W_cos(x, y) = D / √(x²+y²+D²)`.
pub fn cosine_weight<T: Real>(det: &DetectorGrid, d: f64) -> WeightMap<T> {
    let v = Array2::from_shape_fn(det.shape(), |(r, c)| {
        let (x, y) = (det.u(c), det.v(r));
        T::of(d / (x * x + y * y + d * d).sqrt())
    });
    WeightMap::shared(WeightRole::Cosine, v, false)
}

/// `W_sino(s, μ) = (s²+D²) / D²`.
pub fn sinogram_weight<T: Real>(grid: &LineGrid, d: f64) -> WeightMap<T> {
    let v = Array2::from_shape_fn(grid.shape(), |(_, i)| {
        let s = grid.s(i);
        T::of((s * s + d * d) / (d * d))
    });
    WeightMap::shared(WeightRole::Sinogram, v, false)
}

/// `W_d(x, y) = x²+y²+D²`.
pub fn detector_weight<T: Real>(det: &DetectorGrid, d: f64) -> WeightMap<T> {
    let v = Array2::from_shape_fn(det.shape(), |(r, c)| {
        let (x, y) = (det.u(c), det.v(r));
        T::of(x * x + y * y + d * d)
    });
    WeightMap::shared(WeightRole::Detector, v, false)
}

/// Multiplies one view's image in place by the matching layer of `map`.
pub fn apply_weight_view<T: Real>(data: &mut ArrayViewMut2<'_, T>, map: &WeightMap<T>, view: usize) -> Result<()> {
    if !map.is_shared() && view >= map.n_layers() {
        return Err(Error::InvalidArgument(format!(
            "view {view} out of range for a {}-layer weight map",
            map.n_layers()
        )));
    }
    let layer = map.layer(view);
    check_shape(layer.shape(), data.shape())?;
    Zip::from(data).and(&layer).for_each(|x, &w| *x *= w);
    Ok(())
}

/// Elementwise product of a `(views, rows, cols)` stack with `map`,
/// broadcasting shared maps over views.
pub fn apply_weight<T: Real>(data: &Array3<T>, map: &WeightMap<T>) -> Result<Array3<T>> {
    let mut out = data.clone();
    if !map.is_shared() && map.n_layers() != data.len_of(Axis(0)) {
        return Err(Error::ShapeMismatch {
            expected: map.values.shape().to_vec(),
            actual: data.shape().to_vec(),
        });
    }
    for (k, mut view) in out.axis_iter_mut(Axis(0)).enumerate() {
        apply_weight_view(&mut view, map, k)?;
    }
    Ok(out)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-0.5 * x * x / (sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

// Half-sample symmetric reflection: -1 -> 0, n -> n-1.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

fn smooth_layer(layer: ArrayView2<'_, f64>, kernel: &[f64]) -> Array2<f64> {
    let (n_mu, n_s) = layer.dim();
    let radius = (kernel.len() / 2) as isize;
    let mut along_s = Array2::<f64>::zeros((n_mu, n_s));
    for j in 0..n_mu {
        for i in 0..n_s {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let src = reflect(i as isize + k as isize - radius, n_s);
                acc += w * layer[[j, src]];
            }
            along_s[[j, i]] = acc;
        }
    }
    // Stepping past μ = π lands on μ - π with the line orientation reversed,
    // i.e. s -> -s.
    let mut out = Array2::<f64>::zeros((n_mu, n_s));
    for j in 0..n_mu {
        for i in 0..n_s {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let idx = j as isize + k as isize - radius;
                let wraps = idx.div_euclid(n_mu as isize);
                let jj = idx.rem_euclid(n_mu as isize) as usize;
                let ii = if wraps % 2 == 0 { i } else { n_s - 1 - i };
                acc += w * along_s[[jj, ii]];
            }
            out[[j, i]] = acc;
        }
    }
    out
}

/// Separable Gaussian smoothing of a line-grid map over `(s, μ)`.
pub fn gaussian_smooth<T: Real>(map: &WeightMap<T>, sigma: f64) -> Result<WeightMap<T>> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be non-negative, got {sigma}")));
    }
    if !map.role.on_line_grid() {
        return Err(Error::InvalidArgument("gaussian smoothing applies to line-grid maps".into()));
    }
    if sigma == 0.0 {
        return Ok(map.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let mut values = map.values.clone();
    for mut layer in values.axis_iter_mut(Axis(0)) {
        let smoothed = smooth_layer(layer.mapv(|v| v.f64()).view(), &kernel);
        Zip::from(&mut layer).and(&smoothed).for_each(|o, &v| *o = T::of(v));
    }
    Ok(WeightMap {
        role: map.role,
        trainable: map.trainable,
        values,
    })
}
