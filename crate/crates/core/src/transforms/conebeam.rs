//! Cone-beam projection and distance-weighted backprojection.

use ndarray::parallel::prelude::*;
use ndarray::{Array2, Array3, Axis};

use super::interp::{clip_to_box, trilinear, Bilinear};
use crate::data::{ProjectionStack, Volume};
use crate::error::{check_shape, Error, Result};
use crate::geometry::{views, DetectorGrid, OrbitGeometry, Vec3, View, VolumeGrid};
use crate::scalar::Real;

/// Ray-driven line integrals from the source through every pixel center,
/// trilinear sampling every half voxel.
pub fn conebeam_forward<T: Real>(vol: &Volume<T>, geom: &OrbitGeometry, det: &DetectorGrid) -> Result<ProjectionStack<T>> {
    geom.validate()?;
    det.validate()?;
    let views = views(geom)?;
    let grid = &vol.grid;
    let data = vol.data.as_standard_layout();
    let flat = data.as_slice().expect("standard layout");
    let dims = grid.shape();
    let d = geom.source_detector_distance;
    let sp = grid.spacing;
    let images: Vec<Array2<T>> = views
        .par_iter()
        .map(|view| {
            let p0 = [
                (view.source.x - grid.origin[0]) / sp,
                (view.source.y - grid.origin[1]) / sp,
                (view.source.z - grid.origin[2]) / sp,
            ];
            Array2::from_shape_fn(det.shape(), |(r, c)| {
                let target = view.detector_point(det.u(c), det.v(r), d);
                let dir = (target - view.source).normalize();
                let dp = [dir.x / sp, dir.y / sp, dir.z / sp];
                let Some((t0, t1)) = clip_to_box(&p0, &dp, &[grid.nx, grid.ny, grid.nz], 0.0, f64::MAX) else {
                    return T::zero();
                };
                let n = ((t1 - t0) / (0.5 * sp)).ceil().max(1.0) as usize;
                let dt = (t1 - t0) / n as f64;
                let mut acc = 0.0;
                for step in 0..n {
                    let t = t0 + (step as f64 + 0.5) * dt;
                    acc += trilinear(flat, dims, p0[2] + t * dp[2], p0[1] + t * dp[1], p0[0] + t * dp[0]);
                }
                T::of(acc * dt)
            })
        })
        .collect();
    stack(det, images)
}

fn stack<T: Real>(det: &DetectorGrid, images: Vec<Array2<T>>) -> Result<ProjectionStack<T>> {
    let mut data = Array3::<T>::zeros((images.len(), det.n_rows, det.n_cols));
    for (mut dst, src) in data.axis_iter_mut(Axis(0)).zip(images) {
        dst.assign(&src);
    }
    ProjectionStack::from_data(det, data)
}

/// Detector footprint of a world point in one view, with the offset
/// `x - a` and the depth `(x - a)·e_w`.
#[inline]
fn footprint(view: &View, det: &DetectorGrid, d: f64, x: &Vec3) -> Option<(Bilinear, Vec3, f64)> {
    let r = x - view.source;
    let depth = r.dot(&view.e_w);
    if depth <= 0.0 {
        return None;
    }
    let m = d / depth;
    let (row, col) = det.index_of(r.dot(&view.e_u) * m, r.dot(&view.e_v) * m);
    Bilinear::new(row, col, det.n_rows, det.n_cols).map(|b| (b, r, depth))
}

#[inline]
fn distance_weight(view: &View, r: &Vec3, _depth: f64) -> f64 {
    view.weight / r.norm_squared()
}

fn check_stack<T: Real>(fp: &ProjectionStack<T>, geom: &OrbitGeometry) -> Result<()> {
    if fp.n_views() != geom.n_views() {
        return Err(Error::ShapeMismatch {
            expected: vec![geom.n_views(), fp.det.n_rows, fp.det.n_cols],
            actual: fp.data.shape().to_vec(),
        });
    }
    Ok(())
}

/// `f(x) = Σ_λ Δλ / |x - a(λ)|² · g^F(proj_λ(x))` with bilinear detector
/// sampling. Voxels projecting off the detector receive nothing from that view.
pub fn conebeam_backproject<T: Real>(fp: &ProjectionStack<T>, geom: &OrbitGeometry, grid: &VolumeGrid) -> Result<Volume<T>> {
    backproject_weighted(fp, geom, grid, distance_weight)
}

/// Voxel-driven backprojection with a caller-supplied per-view weight
/// `weight(view, x - a, depth)`.
pub(crate) fn backproject_weighted<T: Real>(
    fp: &ProjectionStack<T>,
    geom: &OrbitGeometry,
    grid: &VolumeGrid,
    weight: impl Fn(&View, &Vec3, f64) -> f64 + Sync,
) -> Result<Volume<T>> {
    check_stack(fp, geom)?;
    grid.validate()?;
    let views = views(geom)?;
    let det = &fp.det;
    let d = geom.source_detector_distance;
    let mut out = Array3::<T>::zeros(grid.shape());
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(k, mut slice)| {
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    let x = grid.point(k, j, i);
                    let mut acc = 0.0;
                    for (view, img) in views.iter().zip(fp.data.outer_iter()) {
                        if let Some((b, r, depth)) = footprint(view, det, d, &x) {
                            let s: f64 = b.iter().map(|&(r, c, bw)| bw * img[[r, c]].f64()).sum();
                            acc += weight(view, &r, depth) * s;
                        }
                    }
                    slice[[j, i]] = T::of(acc);
                }
            }
        });
    Volume::from_data(grid, out)
}

/// Exact transpose of [`conebeam_backproject`] (plain Euclidean inner
/// products): every voxel splats into its bilinear footprint.
pub fn conebeam_backproject_adjoint<T: Real>(vol: &Volume<T>, geom: &OrbitGeometry, det: &DetectorGrid) -> Result<ProjectionStack<T>> {
    let grid = &vol.grid;
    check_shape(&[grid.nz, grid.ny, grid.nx], vol.data.shape())?;
    let views = views(geom)?;
    let d = geom.source_detector_distance;
    let images: Vec<Array2<T>> = views
        .par_iter()
        .map(|view| {
            let mut acc = Array2::<f64>::zeros(det.shape());
            for ((k, j, i), &v) in vol.data.indexed_iter() {
                if v == T::zero() {
                    continue;
                }
                if let Some((b, r, depth)) = footprint(view, det, d, &grid.point(k, j, i)) {
                    let v = v.f64() * distance_weight(view, &r, depth);
                    for &(r, c, bw) in b.iter() {
                        acc[[r, c]] += bw * v;
                    }
                }
            }
            acc.mapv(T::of)
        })
        .collect();
    stack(det, images)
}
