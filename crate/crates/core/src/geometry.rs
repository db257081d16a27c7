//! Orbit parametrization, detector frames, Radon plane normals and the
//! closed-form redundancy weight of the circular orbit.
//!
//! Conventions: the circular orbit lies in the `z = 0` plane and runs
//! counterclockwise with `λ` measured from the `+x` axis, so
//! `a(λ) = R (cos λ, sin λ, 0)`. Each view carries a detector frame
//! `(e_u, e_v, e_w)` where `e_w` points from the source toward the
//! isocenter and the flat detector sits at distance `D` from the source.
//! Detector coordinates `(x, y)` are measured along `e_u` and `e_v`.

use std::f64::consts::PI;

use nalgebra::Vector3;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::weights::{WeightMap, WeightRole};

pub type Vec3 = Vector3<f64>;

/// Planes whose normal is within this distance of `±z` contain the whole
/// circular orbit.
pub const DEGENERATE_TOL: f64 = 1e-6;

/// Global sign of the redundancy weight. With the discrete operator chain
/// used here this is the sign that makes the analytic-weight reconstruction
/// of a positive object positive; `tests::analytic_sign_gives_positive_mean`
/// in the pipeline module pins it.
pub const REDUNDANCY_SIGN: f64 = -1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Orbit {
    Circular { radius: f64 },
    /// Source positions sampled at each entry of `lambdas`, linearly
    /// interpolated in between.
    Tabulated { positions: Vec<[f64; 3]> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitGeometry {
    #[serde(flatten)]
    pub orbit: Orbit,
    pub lambdas: Vec<f64>,
    pub source_isocenter_distance: f64,
    pub source_detector_distance: f64,
    /// Radius `B` of the object ball.
    pub fov_radius: f64,
    /// Radius `e` of the cone-beam shadow of the object ball on the detector.
    pub detector_fov_radius: f64,
}

/// Cone-beam shadow radius of a centered ball of radius `b` seen from
/// distance `r` on a detector at distance `d`.
pub fn shadow_radius(r: f64, d: f64, b: f64) -> f64 {
    d * b / (r * r - b * b).sqrt()
}

impl OrbitGeometry {
    /// Full-scan circular orbit with `n_views` uniformly spaced views over `[0, 2π)`.
    pub fn circular(radius: f64, sdd: f64, fov_radius: f64, n_views: usize) -> Result<Self> {
        let lambdas = (0..n_views)
            .map(|i| 2.0 * PI * i as f64 / n_views as f64)
            .collect();
        let geom = OrbitGeometry {
            orbit: Orbit::Circular { radius },
            lambdas,
            source_isocenter_distance: radius,
            source_detector_distance: sdd,
            fov_radius,
            detector_fov_radius: shadow_radius(radius, sdd, fov_radius),
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.source_isocenter_distance;
        let d = self.source_detector_distance;
        let b = self.fov_radius;
        let bad = |m: String| Err(Error::InvalidGeometry(m));
        if !(r > 0.0 && d > r) {
            return bad(format!("need D > R > 0, got D={d}, R={r}"));
        }
        if !(b > 0.0 && b < r) {
            return bad(format!("fov radius {b} must lie in (0, {r})"));
        }
        if self.lambdas.is_empty() {
            return bad("no views".into());
        }
        if self.lambdas.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("lambdas must be strictly increasing".into());
        }
        let e = shadow_radius(r, d, b);
        if (self.detector_fov_radius - e).abs() > 1e-6 * e {
            return bad(format!(
                "detector fov radius {} does not match shadow radius {e}",
                self.detector_fov_radius
            ));
        }
        match &self.orbit {
            Orbit::Circular { radius } => {
                if (radius - r).abs() > 1e-9 * r {
                    return bad(format!("circular radius {radius} != source isocenter distance {r}"));
                }
            }
            Orbit::Tabulated { positions } => {
                if positions.len() != self.lambdas.len() {
                    return bad("tabulated positions and lambdas differ in length".into());
                }
                for p in positions {
                    if Vec3::from(*p).norm() <= b {
                        return bad("tabulated source inside the object ball".into());
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_views(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_circular(&self) -> bool {
        matches!(self.orbit, Orbit::Circular { .. })
    }

    /// True for a circular orbit sampled uniformly over a full turn.
    pub fn is_full_circle(&self) -> bool {
        if !self.is_circular() {
            return false;
        }
        let n = self.lambdas.len();
        if n < 2 {
            return false;
        }
        let step = 2.0 * PI / n as f64;
        self.lambdas
            .iter()
            .enumerate()
            .all(|(i, &l)| (l - self.lambdas[0] - step * i as f64).abs() < 1e-9)
    }

    /// Quadrature weight `Δλ` for each view.
    pub fn lambda_weights(&self) -> Vec<f64> {
        let n = self.lambdas.len();
        if self.is_full_circle() {
            return vec![2.0 * PI / n as f64; n];
        }
        if n == 1 {
            return vec![1.0];
        }
        let l = &self.lambdas;
        (0..n)
            .map(|i| {
                let lo = if i == 0 { l[0] } else { 0.5 * (l[i - 1] + l[i]) };
                let hi = if i + 1 == n { l[n - 1] } else { 0.5 * (l[i] + l[i + 1]) };
                hi - lo
            })
            .collect()
    }

    /// SHA-256 of the canonical JSON serialization, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("geometry serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    fn tabulated_segment(&self, lambda: f64) -> Result<(usize, f64)> {
        let l = &self.lambdas;
        let (min, max) = (l[0], l[l.len() - 1]);
        if !(lambda >= min && lambda <= max) {
            return Err(Error::OutOfRange { lambda, min, max });
        }
        if l.len() == 1 {
            return Ok((0, 0.0));
        }
        let i = match l.partition_point(|&x| x <= lambda) {
            0 => 0,
            k => (k - 1).min(l.len() - 2),
        };
        Ok((i, (lambda - l[i]) / (l[i + 1] - l[i])))
    }
}

/// Source position `a(λ)`.
pub fn source_position(geom: &OrbitGeometry, lambda: f64) -> Result<Vec3> {
    match &geom.orbit {
        Orbit::Circular { radius } => Ok(Vec3::new(radius * lambda.cos(), radius * lambda.sin(), 0.0)),
        Orbit::Tabulated { positions } => {
            let (i, t) = geom.tabulated_segment(lambda)?;
            if positions.len() == 1 {
                return Ok(Vec3::from(positions[0]));
            }
            Ok(Vec3::from(positions[i]) * (1.0 - t) + Vec3::from(positions[i + 1]) * t)
        }
    }
}

/// Orbit tangent `a'(λ)`; `λ` is an angle for the circle so `|a'| = R`.
pub fn source_velocity(geom: &OrbitGeometry, lambda: f64) -> Result<Vec3> {
    match &geom.orbit {
        Orbit::Circular { radius } => Ok(Vec3::new(-radius * lambda.sin(), radius * lambda.cos(), 0.0)),
        Orbit::Tabulated { positions } => {
            let (i, _) = geom.tabulated_segment(lambda)?;
            if positions.len() == 1 {
                return Ok(Vec3::zeros());
            }
            let dl = geom.lambdas[i + 1] - geom.lambdas[i];
            Ok((Vec3::from(positions[i + 1]) - Vec3::from(positions[i])) / dl)
        }
    }
}

/// Detector frame at a source position: `e_w` toward the isocenter, `e_v`
/// the projection of `+z`, `e_u = e_w × e_v`.
fn frame_at(source: &Vec3) -> Result<(Vec3, Vec3, Vec3)> {
    let e_w = -source.normalize();
    let z = Vec3::z();
    let v = z - e_w * z.dot(&e_w);
    if v.norm() < 1e-12 {
        return Err(Error::InvalidGeometry("source on the z axis has no detector frame".into()));
    }
    let e_v = v.normalize();
    let e_u = e_w.cross(&e_v);
    Ok((e_u, e_v, e_w))
}

/// Orthonormal detector frame `(e_u, e_v, e_w)` at orbit parameter `λ`.
///
/// For the circular orbit `e_u = (-sin λ, cos λ, 0)`, `e_v = (0, 0, 1)` and
/// `e_w = -(cos λ, sin λ, 0)`.
pub fn detector_frame(geom: &OrbitGeometry, lambda: f64) -> Result<(Vec3, Vec3, Vec3)> {
    match geom.orbit {
        Orbit::Circular { .. } => {
            let (s, c) = lambda.sin_cos();
            Ok((Vec3::new(-s, c, 0.0), Vec3::z(), Vec3::new(-c, -s, 0.0)))
        }
        Orbit::Tabulated { .. } => frame_at(&source_position(geom, lambda)?),
    }
}

/// Unit normal of the plane through `a(λ)` and the detector line
/// `x cos μ + y sin μ = s`.
pub fn plane_normal(geom: &OrbitGeometry, lambda: f64, s: f64, mu: f64) -> Result<Vec3> {
    let (e_u, e_v, e_w) = detector_frame(geom, lambda)?;
    Ok(plane_normal_in_frame(&e_u, &e_v, &e_w, geom.source_detector_distance, s, mu))
}

pub(crate) fn plane_normal_in_frame(e_u: &Vec3, e_v: &Vec3, e_w: &Vec3, d: f64, s: f64, mu: f64) -> Vec3 {
    let (sm, cm) = mu.sin_cos();
    (e_u * (d * cm) + e_v * (d * sm) - e_w * s) / (s * s + d * d).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Intersections {
    Count(u32),
    /// The plane contains the whole orbit.
    Degenerate,
}

/// Number of intersections between the circular orbit and the plane through
/// `a(λ)` orthogonal to `theta`.
pub fn intersection_count(geom: &OrbitGeometry, theta: &Vec3, lambda: f64) -> Result<Intersections> {
    let radius = match geom.orbit {
        Orbit::Circular { radius } => radius,
        Orbit::Tabulated { .. } => {
            return Err(Error::Unsupported("intersection count needs a circular orbit".into()))
        }
    };
    let theta = theta.normalize();
    let in_plane = (theta.x * theta.x + theta.y * theta.y).sqrt();
    if in_plane < DEGENERATE_TOL {
        return Ok(Intersections::Degenerate);
    }
    // Circle points satisfy R (θx cos φ + θy sin φ) = l, whose left side
    // ranges over [-R ρ, R ρ].
    let l = source_position(geom, lambda)?.dot(&theta);
    let reach = radius * in_plane;
    let gap = reach - l.abs();
    if gap < -1e-9 * radius {
        Ok(Intersections::Count(0))
    } else if gap <= 1e-9 * radius {
        Ok(Intersections::Count(1))
    } else {
        Ok(Intersections::Count(2))
    }
}

/// Closed-form redundancy weight for the full circular orbit on a line grid.
///
/// `w(s, μ) = ±(1/4π²) · R D |cos μ| / √(s²+D²) · 1/2 · 1/√(s²+D²)`: the
/// orbit speed projected on the plane normal, one over the two intersections,
/// and the `1/√(s²+D²)` factor that the filter applies before differentiating.
pub fn analytic_redundancy_map<T: Real>(geom: &OrbitGeometry, grid: &LineGrid) -> Result<WeightMap<T>> {
    let radius = match geom.orbit {
        Orbit::Circular { radius } => radius,
        Orbit::Tabulated { .. } => {
            return Err(Error::Unsupported("no closed-form redundancy weight for tabulated orbits".into()))
        }
    };
    if !geom.is_full_circle() {
        return Err(Error::Unsupported("closed-form redundancy weight needs a full circular scan".into()));
    }
    let d = geom.source_detector_distance;
    let scale = REDUNDANCY_SIGN / (4.0 * PI * PI);
    let values = Array2::from_shape_fn((grid.n_mu, grid.n_s), |(j, i)| {
        let s = grid.s(i);
        let mu = grid.mu(j);
        let r2 = s * s + d * d;
        // θ is degenerate only at cos μ = 0, where the weight already vanishes.
        T::of(scale * radius * d * mu.cos().abs() / r2 * 0.5)
    });
    Ok(WeightMap::shared(WeightRole::Redundancy, values, false))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorGrid {
    pub n_rows: usize,
    pub n_cols: usize,
    /// Pixel pitch in mm, `[row, col]`.
    pub spacing: [f64; 2],
    /// Offset of the detector center from the principal point in mm, `[u, v]`.
    #[serde(default)]
    pub principal_point: [f64; 2],
}

impl DetectorGrid {
    pub fn new(n_rows: usize, n_cols: usize, spacing: f64) -> Self {
        DetectorGrid {
            n_rows,
            n_cols,
            spacing: [spacing, spacing],
            principal_point: [0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(Error::InvalidGrid("empty detector".into()));
        }
        if !(self.spacing[0] > 0.0 && self.spacing[1] > 0.0) {
            return Err(Error::InvalidGrid("detector spacing must be positive".into()));
        }
        let (hu, hv) = (self.half_width(), self.half_height());
        if self.principal_point[0].abs() > hu || self.principal_point[1].abs() > hv {
            return Err(Error::InvalidGrid("principal point outside the detector".into()));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    /// Detector `u` coordinate of column `c`.
    #[inline]
    pub fn u(&self, c: usize) -> f64 {
        (c as f64 - 0.5 * (self.n_cols as f64 - 1.0)) * self.spacing[1] + self.principal_point[0]
    }

    /// Detector `v` coordinate of row `r`.
    #[inline]
    pub fn v(&self, r: usize) -> f64 {
        (r as f64 - 0.5 * (self.n_rows as f64 - 1.0)) * self.spacing[0] + self.principal_point[1]
    }

    /// Fractional `(row, col)` index of a detector coordinate.
    #[inline]
    pub fn index_of(&self, u: f64, v: f64) -> (f64, f64) {
        (
            (v - self.principal_point[1]) / self.spacing[0] + 0.5 * (self.n_rows as f64 - 1.0),
            (u - self.principal_point[0]) / self.spacing[1] + 0.5 * (self.n_cols as f64 - 1.0),
        )
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.n_cols as f64 * self.spacing[1]
    }

    pub fn half_height(&self) -> f64 {
        0.5 * self.n_rows as f64 * self.spacing[0]
    }

    pub fn pixel_area(&self) -> f64 {
        self.spacing[0] * self.spacing[1]
    }

    /// Radius of the largest disk about the principal point that fits on the detector.
    pub fn inscribed_radius(&self) -> f64 {
        let [pu, pv] = self.principal_point;
        (self.half_width() - pu.abs()).min(self.half_height() - pv.abs())
    }
}

/// Radial/angular sampling of detector lines, `μ` uniform on `[0, π)` and `s`
/// symmetric about zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineGrid {
    pub n_s: usize,
    pub s_spacing: f64,
    pub n_mu: usize,
    pub mu_spacing: f64,
}

impl LineGrid {
    /// `n_s` samples spanning `[-e, e]` and `n_mu` angles on `[0, π)`.
    pub fn covering(e: f64, n_s: usize, n_mu: usize) -> Self {
        LineGrid {
            n_s,
            s_spacing: 2.0 * e / (n_s.max(2) - 1) as f64,
            n_mu,
            mu_spacing: PI / n_mu as f64,
        }
    }

    /// Default sampling for a detector: 180 angles and the next odd count at
    /// or above the detector diagonal in pixels.
    pub fn for_detector(det: &DetectorGrid, e: f64) -> Self {
        let diag = ((det.n_rows * det.n_rows + det.n_cols * det.n_cols) as f64).sqrt().ceil() as usize;
        let n_s = if diag % 2 == 1 { diag } else { diag + 1 };
        Self::covering(e, n_s, 180)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_s < 3 {
            return Err(Error::InvalidGrid("need at least 3 radial samples".into()));
        }
        if self.n_mu == 0 || !(self.s_spacing > 0.0) {
            return Err(Error::InvalidGrid("empty line grid".into()));
        }
        if (self.mu_spacing * self.n_mu as f64 - PI).abs() > 1e-9 {
            return Err(Error::InvalidGrid("angles must tile [0, π) uniformly".into()));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_mu, self.n_s)
    }

    #[inline]
    pub fn s(&self, i: usize) -> f64 {
        (i as f64 - 0.5 * (self.n_s as f64 - 1.0)) * self.s_spacing
    }

    #[inline]
    pub fn mu(&self, j: usize) -> f64 {
        j as f64 * self.mu_spacing
    }

    pub fn s_max(&self) -> f64 {
        0.5 * (self.n_s as f64 - 1.0) * self.s_spacing
    }

    /// Fractional radial index of `s`.
    #[inline]
    pub fn s_index(&self, s: f64) -> f64 {
        s / self.s_spacing + 0.5 * (self.n_s as f64 - 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeGrid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub spacing: f64,
    /// World coordinates of the center of voxel `(0, 0, 0)`.
    pub origin: [f64; 3],
}

impl VolumeGrid {
    /// Cubic grid of `n³` voxels centered on the isocenter.
    pub fn centered(n: usize, spacing: f64) -> Self {
        let o = -0.5 * (n as f64 - 1.0) * spacing;
        VolumeGrid {
            nx: n,
            ny: n,
            nz: n,
            spacing,
            origin: [o, o, o],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::InvalidGrid("empty volume".into()));
        }
        if !(self.spacing > 0.0) {
            return Err(Error::InvalidGrid("volume spacing must be positive".into()));
        }
        Ok(())
    }

    /// Array shape in `(z, y, x)` order.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.nz, self.ny, self.nx)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn point(&self, k: usize, j: usize, i: usize) -> Vec3 {
        Vec3::new(
            self.origin[0] + i as f64 * self.spacing,
            self.origin[1] + j as f64 * self.spacing,
            self.origin[2] + k as f64 * self.spacing,
        )
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.powi(3)
    }

    /// World-space bounding box of the voxel centers, padded by half a voxel.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let h = 0.5 * self.spacing;
        let lo = Vec3::new(self.origin[0] - h, self.origin[1] - h, self.origin[2] - h);
        let hi = Vec3::new(
            self.origin[0] + (self.nx as f64 - 0.5) * self.spacing,
            self.origin[1] + (self.ny as f64 - 0.5) * self.spacing,
            self.origin[2] + (self.nz as f64 - 0.5) * self.spacing,
        );
        (lo, hi)
    }
}

/// Per-view quantities reused by every projector.
#[derive(Clone, Debug)]
pub struct View {
    pub lambda: f64,
    pub source: Vec3,
    pub e_u: Vec3,
    pub e_v: Vec3,
    pub e_w: Vec3,
    pub weight: f64,
}

impl View {
    /// Pinhole projection of a world point: detector `(u, v)` and the depth
    /// `(x - a)·e_w` along the central ray.
    #[inline]
    pub fn project(&self, x: &Vec3, d: f64) -> (f64, f64, f64) {
        let r = x - self.source;
        let depth = r.dot(&self.e_w);
        let m = d / depth;
        (r.dot(&self.e_u) * m, r.dot(&self.e_v) * m, depth)
    }

    /// World position of detector point `(u, v)`.
    #[inline]
    pub fn detector_point(&self, u: f64, v: f64, d: f64) -> Vec3 {
        self.source + self.e_w * d + self.e_u * u + self.e_v * v
    }
}

pub fn views(geom: &OrbitGeometry) -> Result<Vec<View>> {
    let weights = geom.lambda_weights();
    geom.lambdas
        .iter()
        .zip(weights)
        .map(|(&lambda, weight)| {
            let (e_u, e_v, e_w) = detector_frame(geom, lambda)?;
            Ok(View {
                lambda,
                source: source_position(geom, lambda)?,
                e_u,
                e_v,
                e_w,
                weight,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn table1() -> OrbitGeometry {
        OrbitGeometry::circular(66.0, 199.0, 24.0, 36).unwrap()
    }

    // Counts sign changes of x·θ - l over a dense sampling of the circle.
    fn brute_force_count(geom: &OrbitGeometry, theta: &Vec3, lambda: f64) -> u32 {
        let l = source_position(geom, lambda).unwrap().dot(theta);
        let n = 100_000;
        let f = |k: usize| {
            let phi = 2.0 * PI * k as f64 / n as f64;
            source_position(geom, phi).unwrap().dot(theta) - l
        };
        let mut count = 0;
        let mut touching = 0;
        for k in 0..n {
            let (a, b) = (f(k), f(k + 1));
            if a.abs() < 1e-9 {
                touching += 1;
            } else if a * b < 0.0 {
                count += 1;
            }
        }
        // A tangent point shows up as a zero without a sign change.
        count + touching
    }

    #[test]
    fn source_positions() {
        let g = table1();
        assert_relative_eq!(source_position(&g, 0.0).unwrap(), Vec3::new(66.0, 0.0, 0.0));
        let q = source_position(&g, PI / 2.0).unwrap();
        assert_relative_eq!(q, Vec3::new(0.0, 66.0, 0.0), epsilon = 1e-12);
        let h = source_position(&g, PI).unwrap();
        assert_relative_eq!(h, Vec3::new(-66.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn tabulated_out_of_range() {
        let mut g = table1();
        g.orbit = Orbit::Tabulated {
            positions: g.lambdas.iter().map(|&l| [66.0 * l.cos(), 66.0 * l.sin(), 0.0]).collect(),
        };
        g.validate().unwrap();
        assert!(matches!(source_position(&g, -0.1), Err(Error::OutOfRange { .. })));
        assert!(matches!(source_position(&g, 7.0), Err(Error::OutOfRange { .. })));
        let p = source_position(&g, g.lambdas[3]).unwrap();
        assert_relative_eq!(p, source_position(&table1(), g.lambdas[3]).unwrap(), epsilon = 1e-12);
        // The generic frame reproduces the circular one at the samples.
        let (u, v, w) = detector_frame(&g, g.lambdas[5]).unwrap();
        let (u0, v0, w0) = detector_frame(&table1(), g.lambdas[5]).unwrap();
        assert_relative_eq!(u, u0, epsilon = 1e-12);
        assert_relative_eq!(v, v0, epsilon = 1e-12);
        assert_relative_eq!(w, w0, epsilon = 1e-12);
        assert!(analytic_redundancy_map::<f64>(&g, &LineGrid::covering(10.0, 5, 4)).is_err());
    }

    #[test]
    fn frames() {
        let g = table1();
        let (u, v, w) = detector_frame(&g, 0.0).unwrap();
        assert_relative_eq!(u, Vec3::new(0.0, 1.0, 0.0));
        assert_relative_eq!(v, Vec3::new(0.0, 0.0, 1.0));
        assert_relative_eq!(w, Vec3::new(-1.0, 0.0, 0.0));
        let (u, _, _) = detector_frame(&g, PI / 2.0).unwrap();
        assert_relative_eq!(u, Vec3::new(-1.0, 0.0, 0.0), epsilon = 1e-15);
        for k in 0..20 {
            let (u, v, w) = detector_frame(&g, 0.37 * k as f64).unwrap();
            assert!(u.dot(&w).abs() < 1e-15 && u.dot(&v).abs() < 1e-15 && v.dot(&w).abs() < 1e-15);
            for e in [u, v, w] {
                assert_relative_eq!(e.norm(), 1.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn validation() {
        let mut g = table1();
        g.fov_radius = 70.0;
        assert!(g.validate().is_err());
        let mut g = table1();
        g.source_detector_distance = 50.0;
        assert!(g.validate().is_err());
        let mut g = table1();
        g.lambdas.swap(1, 2);
        assert!(g.validate().is_err());
        let mut g = table1();
        g.detector_fov_radius *= 1.1;
        assert!(g.validate().is_err());
        let json = serde_json::to_string(&table1()).unwrap();
        let back: OrbitGeometry = serde_json::from_str(&json).unwrap();
        assert_eq!(back, table1());
        assert!(json.contains("\"kind\":\"circular\""));
    }

    fn detector_line_points(g: &OrbitGeometry, lambda: f64, s: f64, mu: f64) -> Vec<Vec3> {
        let (e_u, e_v, e_w) = detector_frame(g, lambda).unwrap();
        let d = g.source_detector_distance;
        let a = source_position(g, lambda).unwrap();
        let (sm, cm) = mu.sin_cos();
        (0..10)
            .map(|k| {
                let t = -50.0 + 11.0 * k as f64;
                let (x, y) = (s * cm - t * sm, s * sm + t * cm);
                a + e_w * d + e_u * x + e_v * y
            })
            .collect()
    }

    #[test]
    fn plane_normal_examples() {
        let g = table1();
        let a = source_position(&g, 0.0).unwrap();
        let th = plane_normal(&g, 0.0, 0.0, 0.0).unwrap();
        for p in detector_line_points(&g, 0.0, 0.0, 0.0) {
            assert!(th.dot(&(p - a)).abs() < 1e-9 * (p - a).norm());
        }
        assert_relative_eq!(th, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-15);

        let d = g.source_detector_distance;
        let th = plane_normal(&g, 0.0, d, 0.0).unwrap();
        for p in detector_line_points(&g, 0.0, d, 0.0) {
            assert!(th.dot(&(p - a)).abs() < 1e-9 * (p - a).norm());
        }
        let h = 1.0 / 2f64.sqrt();
        assert_relative_eq!(th, Vec3::new(h, h, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn intersection_examples() {
        let g = table1();
        let x = Vec3::x();
        assert_eq!(intersection_count(&g, &x, 0.0).unwrap(), Intersections::Count(1));
        assert_eq!(brute_force_count(&g, &x, 0.0), 1);
        assert_eq!(intersection_count(&g, &x, PI / 2.0).unwrap(), Intersections::Count(2));
        assert_eq!(brute_force_count(&g, &x, PI / 2.0), 2);
        assert_eq!(intersection_count(&g, &Vec3::z(), 0.3).unwrap(), Intersections::Degenerate);
    }

    #[test]
    fn analytic_map_examples() {
        let g = table1();
        let grid = LineGrid::covering(g.detector_fov_radius, 41, 6);
        let w = analytic_redundancy_map::<f64>(&g, &grid).unwrap();
        let v = w.layer(0);
        // μ = π/2 is sample 3 of 6.
        for i in 0..grid.n_s {
            assert!(v[[3, i]].abs() < 1e-18);
            assert_eq!(v[[0, i]], v[[0, grid.n_s - 1 - i]]);
        }
        // μ = π/3 is sample 2.
        assert_relative_eq!(v[[0, 20]] / v[[2, 20]], 2.0, epsilon = 1e-12);
        // The numeric orbit-speed oracle gives the same ratio.
        let speed = |mu: f64| {
            let th = plane_normal(&g, 0.7, 0.0, mu).unwrap();
            source_velocity(&g, 0.7).unwrap().dot(&th).abs()
        };
        assert_relative_eq!(speed(0.0) / speed(PI / 3.0), 2.0, epsilon = 1e-12);
        assert!(speed(PI / 2.0) < 1e-12);
        assert!(v[[0, 20]] * REDUNDANCY_SIGN > 0.0);
    }

    #[test]
    fn analytic_map_matches_brute_force_for_every_view() {
        let g = table1();
        let grid = LineGrid::covering(g.detector_fov_radius, 31, 24);
        let w = analytic_redundancy_map::<f64>(&g, &grid).unwrap();
        let w = w.layer(0);
        let peak = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let d = g.source_detector_distance;
        for &lambda in &g.lambdas {
            let vel = source_velocity(&g, lambda).unwrap();
            for j in 0..grid.n_mu {
                for i in 0..grid.n_s {
                    let (s, mu) = (grid.s(i), grid.mu(j));
                    let th = plane_normal(&g, lambda, s, mu).unwrap();
                    let inv_n = match intersection_count(&g, &th, lambda).unwrap() {
                        Intersections::Count(n) if n > 0 => 1.0 / n as f64,
                        _ => 0.0,
                    };
                    let brute = REDUNDANCY_SIGN / (4.0 * PI * PI) * vel.dot(&th).abs() * inv_n
                        / (s * s + d * d).sqrt();
                    let got = w[[j, i]];
                    assert!(
                        (got - brute).abs() <= 1e-10 * peak,
                        "λ={lambda} s={s} μ={mu}: {got} vs {brute}"
                    );
                }
            }
        }
    }

    proptest! {
        #[test]
        fn plane_normal_contains_detector_line(
            s in -80.0f64..80.0, mu in 0.0f64..PI, lambda in 0.0f64..(2.0 * PI)
        ) {
            let g = table1();
            let a = source_position(&g, lambda).unwrap();
            let th = plane_normal(&g, lambda, s, mu).unwrap();
            prop_assert!((th.norm() - 1.0).abs() < 1e-14);
            for p in detector_line_points(&g, lambda, s, mu) {
                prop_assert!(th.dot(&(p - a)).abs() <= 1e-9 * (p - a).norm());
            }
        }

        #[test]
        fn generic_planes_cut_twice(
            s in -80.0f64..80.0, mu in 0.0f64..PI, lambda in 0.0f64..(2.0 * PI)
        ) {
            prop_assume!(mu.cos().abs() > 0.05);
            let g = table1();
            let th = plane_normal(&g, lambda, s, mu).unwrap();
            prop_assert_eq!(intersection_count(&g, &th, lambda).unwrap(), Intersections::Count(2));
        }

        #[test]
        fn tangent_planes_touch_once(lambda in 0.0f64..(2.0 * PI), tilt in -1.4f64..1.4) {
            // A plane containing the orbit tangent at a(λ) but tilted out of z = 0.
            let g = table1();
            let radial = source_position(&g, lambda).unwrap().normalize();
            let th = radial * tilt.cos() + Vec3::z() * tilt.sin();
            prop_assert_eq!(intersection_count(&g, &th, lambda).unwrap(), Intersections::Count(1));
        }
    }
}
