//! Image-quality metrics and slice export.

use std::path::Path;

use ndarray::{Array2, Array3, ArrayBase, Axis, Data, Dimension, Zip};

use crate::data::Volume;
use crate::error::{check_shape, Error, Result};
use crate::geometry::{LineGrid, VolumeGrid};
use crate::io::write_atomic;
use crate::scalar::Real;

/// Reported PSNR for identical inputs.
pub const PSNR_CAP_DB: f64 = 999.0;

pub fn mse<T: Real, S: Data<Elem = T>, D: Dimension>(x: &ArrayBase<S, D>, reference: &ArrayBase<S, D>) -> Result<f64> {
    check_shape(reference.shape(), x.shape())?;
    if x.is_empty() {
        return Err(Error::InvalidArgument("mse of empty arrays".into()));
    }
    let sum = Zip::from(x).and(reference).fold(0.0, |acc, &a, &b| {
        let d = a.f64() - b.f64();
        acc + d * d
    });
    Ok(sum / x.len() as f64)
}

/// `10 log10(peak² / mse)` with `peak = max(reference)`, capped at
/// [`PSNR_CAP_DB`].
pub fn psnr<T: Real, S: Data<Elem = T>, D: Dimension>(x: &ArrayBase<S, D>, reference: &ArrayBase<S, D>) -> Result<f64> {
    let err = mse(x, reference)?;
    let peak = reference.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
    if err == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / err).log10()).min(PSNR_CAP_DB))
}

/// Pearson correlation over the entries where `mask` is set (all entries
/// without a mask).
pub fn pearson(a: &[f64], b: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    if a.len() != b.len() || mask.is_some_and(|m| m.len() != a.len()) {
        return Err(Error::ShapeMismatch {
            expected: vec![a.len()],
            actual: vec![b.len(), mask.map_or(a.len(), |m| m.len())],
        });
    }
    let pairs: Vec<(f64, f64)> = a
        .iter()
        .zip(b)
        .enumerate()
        .filter(|(i, _)| mask.is_none_or(|m| m[*i]))
        .map(|(_, (&x, &y))| (x, y))
        .collect();
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("correlation over an empty mask".into()));
    }
    let n = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Undefined("correlation with a constant input".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

/// Voxels whose centers lie within `radius` of the isocenter.
pub fn ball_mask(grid: &VolumeGrid, radius: f64) -> Array3<bool> {
    Array3::from_shape_fn(grid.shape(), |(k, j, i)| grid.point(k, j, i).norm() <= radius)
}

/// Line-grid entries with `|cos μ| ≥ threshold`.
pub fn cos_mu_mask(grid: &LineGrid, threshold: f64) -> Array2<bool> {
    Array2::from_shape_fn(grid.shape(), |(j, _)| grid.mu(j).cos().abs() >= threshold)
}

pub fn masked_rmse<T: Real>(x: &Volume<T>, reference: &Volume<T>, mask: &Array3<bool>) -> Result<f64> {
    check_shape(reference.data.shape(), x.data.shape())?;
    check_shape(mask.shape(), x.data.shape())?;
    let (mut sum, mut n) = (0.0, 0usize);
    Zip::from(&x.data).and(&reference.data).and(mask).for_each(|&a, &b, &m| {
        if m {
            let d = a.f64() - b.f64();
            sum += d * d;
            n += 1;
        }
    });
    if n == 0 {
        return Err(Error::InvalidArgument("rmse over an empty mask".into()));
    }
    Ok((sum / n as f64).sqrt())
}

/// One slice of a volume, perpendicular to `axis` (0 = z, 1 = y, 2 = x), as
/// 8-bit gray levels. The window defaults to the slice's min and max.
pub fn slice_gray<T: Real>(vol: &Volume<T>, axis: usize, index: usize, window: Option<(f64, f64)>) -> Result<Array2<u8>> {
    if axis > 2 {
        return Err(Error::InvalidArgument(format!("axis must be 0, 1 or 2, got {axis}")));
    }
    let len = vol.data.len_of(Axis(axis));
    if index >= len {
        return Err(Error::InvalidArgument(format!("slice {index} out of range for axis of length {len}")));
    }
    let slice = vol.data.index_axis(Axis(axis), index).mapv(|v| v.f64());
    let (lo, hi) = window.unwrap_or_else(|| {
        slice
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    });
    if !(hi >= lo) {
        return Err(Error::InvalidArgument(format!("empty display window [{lo}, {hi}]")));
    }
    let width = hi - lo;
    Ok(slice.mapv(|v| {
        if width == 0.0 {
            128
        } else {
            ((v - lo) / width * 255.0).round().clamp(0.0, 255.0) as u8
        }
    }))
}

/// Binary PGM (`P5`) encoding.
pub fn encode_pgm(img: &Array2<u8>) -> Vec<u8> {
    let (rows, cols) = img.dim();
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(img.iter());
    out
}

pub fn export_slice<T: Real>(vol: &Volume<T>, axis: usize, index: usize, path: &Path, window: Option<(f64, f64)>) -> Result<()> {
    write_atomic(path, &encode_pgm(&slice_gray(vol, axis, index, window)?))
}
