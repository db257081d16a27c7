//! Raw array files with JSON sidecars.
//!
//! An array lives in two files: `<path>` holds the C-order little-endian
//! IEEE-754 payload and `<path>.json` describes it. Both are written through
//! a temporary file in the same directory and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array3, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::data::{ProjectionStack, Volume};
use crate::error::{Error, Result};
use crate::geometry::{DetectorGrid, LineGrid, VolumeGrid};
use crate::scalar::{Dtype, Real};
use crate::weights::{WeightMap, WeightRole};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrayRole {
    Volume,
    Projections,
    LineSinograms,
    Weights,
}

/// Contents of `<path>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    /// Sample spacing per axis in mm (radians for angular axes).
    pub spacing: Vec<f64>,
    pub role: ArrayRole,
    pub geometry_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume: Option<VolumeGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<DetectorGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_grid: Option<LineGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_role: Option<WeightRole>,
}

impl Sidecar {
    fn new(shape: &[usize], dtype: Dtype, role: ArrayRole, spacing: Vec<f64>) -> Self {
        Sidecar {
            shape: shape.to_vec(),
            dtype,
            spacing,
            role,
            geometry_hash: None,
            volume: None,
            detector: None,
            line_grid: None,
            weight_role: None,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Writes `bytes` to a temporary sibling of `path` and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    write_atomic(path, &text)
}

pub fn read_json<S: for<'de> Deserialize<'de>>(path: &Path) -> Result<S> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&text).map_err(|e| Error::Format {
        path: path.to_owned(),
        msg: e.to_string(),
    })
}

/// Payload first, then the sidecar, so a present sidecar always describes a
/// complete payload.
pub fn write_array<T: Real>(path: &Path, data: &ArrayD<T>, sidecar: &Sidecar) -> Result<()> {
    if sidecar.shape != data.shape() || sidecar.dtype != T::DTYPE {
        return Err(Error::InvalidArgument(format!(
            "sidecar describes {:?} {:?}, data is {:?} {:?}",
            sidecar.shape,
            sidecar.dtype,
            data.shape(),
            T::DTYPE
        )));
    }
    let mut bytes = Vec::with_capacity(data.len() * T::DTYPE.size());
    for &v in data.iter() {
        v.write_le(&mut bytes);
    }
    write_atomic(path, &bytes)?;
    write_json(&sidecar_path(path), sidecar)
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Err(Error::MissingSidecar(side));
    }
    read_json(&side)
}

fn read_payload(path: &Path, sidecar: &Sidecar) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = sidecar.len() * sidecar.dtype.size();
    if bytes.len() != expected {
        return Err(Error::Format {
            path: path.to_owned(),
            msg: format!("payload has {} bytes, sidecar implies {expected}", bytes.len()),
        });
    }
    Ok(bytes)
}

fn decode<T: Real>(bytes: &[u8], shape: &[usize]) -> ArrayD<T> {
    let values = bytes.chunks_exact(T::DTYPE.size()).map(T::read_le).collect();
    ArrayD::from_shape_vec(IxDyn(shape), values).expect("payload length checked")
}

/// Reads an array whose stored dtype must be `T`.
pub fn read_array<T: Real>(path: &Path) -> Result<(ArrayD<T>, Sidecar)> {
    let sidecar = read_sidecar(path)?;
    if sidecar.dtype != T::DTYPE {
        return Err(Error::Format {
            path: path.to_owned(),
            msg: format!("stored dtype {:?}, requested {:?}", sidecar.dtype, T::DTYPE),
        });
    }
    let bytes = read_payload(path, &sidecar)?;
    Ok((decode(&bytes, &sidecar.shape), sidecar))
}

/// Reads an array of either stored dtype, converting to `T`.
pub fn read_array_as<T: Real>(path: &Path) -> Result<(ArrayD<T>, Sidecar)> {
    let sidecar = read_sidecar(path)?;
    let bytes = read_payload(path, &sidecar)?;
    let data = match sidecar.dtype {
        Dtype::F32 => decode::<f32>(&bytes, &sidecar.shape).mapv(|v| T::of(v as f64)),
        Dtype::F64 => decode::<f64>(&bytes, &sidecar.shape).mapv(T::of),
    };
    Ok((data, sidecar))
}

fn expect_role(path: &Path, sidecar: &Sidecar, role: ArrayRole) -> Result<()> {
    if sidecar.role != role {
        return Err(Error::Format {
            path: path.to_owned(),
            msg: format!("expected a {role:?} array, found {:?}", sidecar.role),
        });
    }
    Ok(())
}

/// Fails when a stored hash exists and differs from `expected`.
pub fn check_geometry_hash(sidecar: &Sidecar, expected: Option<&str>) -> Result<()> {
    match (sidecar.geometry_hash.as_deref(), expected) {
        (Some(found), Some(expected)) if found != expected => Err(Error::GeometryMismatch {
            expected: expected.to_owned(),
            found: found.to_owned(),
        }),
        _ => Ok(()),
    }
}

fn missing(path: &Path, what: &str) -> Error {
    Error::Format {
        path: path.to_owned(),
        msg: format!("sidecar lacks the {what}"),
    }
}

fn into_3d<T>(path: &Path, data: ArrayD<T>) -> Result<Array3<T>> {
    data.into_dimensionality().map_err(|_| Error::Format {
        path: path.to_owned(),
        msg: "expected a 3-axis array".into(),
    })
}

pub fn write_volume<T: Real>(path: &Path, vol: &Volume<T>, geometry_hash: Option<&str>) -> Result<()> {
    let sp = vol.grid.spacing;
    let mut side = Sidecar::new(vol.data.shape(), T::DTYPE, ArrayRole::Volume, vec![sp; 3]);
    side.geometry_hash = geometry_hash.map(str::to_owned);
    side.volume = Some(vol.grid.clone());
    write_array(path, &vol.data.clone().into_dyn(), &side)
}

pub fn read_volume<T: Real>(path: &Path) -> Result<(Volume<T>, Sidecar)> {
    let (data, side) = read_array_as::<T>(path)?;
    expect_role(path, &side, ArrayRole::Volume)?;
    let grid = side.volume.clone().ok_or_else(|| missing(path, "volume grid"))?;
    let vol = Volume::from_data(&grid, into_3d(path, data)?)?;
    Ok((vol, side))
}

pub fn write_projections<T: Real>(path: &Path, p: &ProjectionStack<T>, geometry_hash: Option<&str>) -> Result<()> {
    let sp = p.det.spacing;
    let mut side = Sidecar::new(p.data.shape(), T::DTYPE, ArrayRole::Projections, vec![1.0, sp[0], sp[1]]);
    side.geometry_hash = geometry_hash.map(str::to_owned);
    side.detector = Some(p.det.clone());
    write_array(path, &p.data.clone().into_dyn(), &side)
}

pub fn read_projections<T: Real>(path: &Path, geometry_hash: Option<&str>) -> Result<(ProjectionStack<T>, Sidecar)> {
    let (data, side) = read_array_as::<T>(path)?;
    expect_role(path, &side, ArrayRole::Projections)?;
    check_geometry_hash(&side, geometry_hash)?;
    let det = side.detector.clone().ok_or_else(|| missing(path, "detector grid"))?;
    let p = ProjectionStack::from_data(&det, into_3d(path, data)?)?;
    Ok((p, side))
}

pub fn write_weights<T: Real>(path: &Path, w: &WeightMap<T>, grid: &LineGrid, geometry_hash: Option<&str>) -> Result<()> {
    let mut side = Sidecar::new(
        w.values.shape(),
        T::DTYPE,
        ArrayRole::Weights,
        vec![1.0, grid.mu_spacing, grid.s_spacing],
    );
    side.geometry_hash = geometry_hash.map(str::to_owned);
    side.line_grid = Some(grid.clone());
    side.weight_role = Some(w.role);
    write_array(path, &w.values.clone().into_dyn(), &side)
}

pub fn read_weights<T: Real>(path: &Path, geometry_hash: Option<&str>) -> Result<(WeightMap<T>, Sidecar)> {
    let (data, side) = read_array_as::<T>(path)?;
    expect_role(path, &side, ArrayRole::Weights)?;
    check_geometry_hash(&side, geometry_hash)?;
    let role = side.weight_role.unwrap_or(WeightRole::Redundancy);
    let values = into_3d(path, data)?;
    Ok((WeightMap::per_view(role, values, role == WeightRole::Redundancy), side))
}

/// Writes a small 2D table as CSV with a header row.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut text = header.join(",");
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}
