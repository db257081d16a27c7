//! Array containers for volumes, projections and line sinograms.

use ndarray::{Array2, Array3, Axis};

use crate::error::{check_shape, Result};
use crate::geometry::{DetectorGrid, LineGrid, VolumeGrid};
use crate::scalar::Real;

/// One cone-beam detector image, `(rows, cols)`.
pub type DetectorImage<T> = Array2<T>;
/// One view's line sinogram, `(n_mu, n_s)`.
pub type LineSinogram<T> = Array2<T>;
/// One view's filtered projection on the detector grid.
pub type FilteredProjection<T> = Array2<T>;

/// Scalar field on a voxel grid, stored `(z, y, x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    pub grid: VolumeGrid,
    pub data: Array3<T>,
}

impl<T: Real> Volume<T> {
    pub fn zeros(grid: &VolumeGrid) -> Self {
        Volume {
            grid: grid.clone(),
            data: Array3::zeros(grid.shape()),
        }
    }

    pub fn from_data(grid: &VolumeGrid, data: Array3<T>) -> Result<Self> {
        let (z, y, x) = grid.shape();
        check_shape(&[z, y, x], data.shape())?;
        Ok(Volume {
            grid: grid.clone(),
            data,
        })
    }

    pub fn cast<U: Real>(&self) -> Volume<U> {
        Volume {
            grid: self.grid.clone(),
            data: self.data.mapv(|v| U::of(v.f64())),
        }
    }

    /// Elementwise `max(x, 0)`.
    pub fn rectified(&self) -> Self {
        Volume {
            grid: self.grid.clone(),
            data: self.data.mapv(|v| v.max(T::zero())),
        }
    }
}

/// Cone-beam detector images for every view, `(views, rows, cols)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionStack<T> {
    pub det: DetectorGrid,
    pub data: Array3<T>,
}

impl<T: Real> ProjectionStack<T> {
    pub fn zeros(det: &DetectorGrid, n_views: usize) -> Self {
        ProjectionStack {
            det: det.clone(),
            data: Array3::zeros((n_views, det.n_rows, det.n_cols)),
        }
    }

    pub fn from_data(det: &DetectorGrid, data: Array3<T>) -> Result<Self> {
        check_shape(&[det.n_rows, det.n_cols], &data.shape()[1..])?;
        Ok(ProjectionStack { det: det.clone(), data })
    }

    pub fn n_views(&self) -> usize {
        self.data.len_of(Axis(0))
    }

    pub fn cast<U: Real>(&self) -> ProjectionStack<U> {
        ProjectionStack {
            det: self.det.clone(),
            data: self.data.mapv(|v| U::of(v.f64())),
        }
    }
}

/// Grangeat-domain data for every view, `(views, n_mu, n_s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LineSinogramStack<T> {
    pub grid: LineGrid,
    pub data: Array3<T>,
}

impl<T: Real> LineSinogramStack<T> {
    pub fn n_views(&self) -> usize {
        self.data.len_of(Axis(0))
    }
}
