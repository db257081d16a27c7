//! Random analytic scenes and their voxelization.
//!
//! Generated scenes hold 5 to 10 primitives. Shape is uniform over sphere,
//! ellipsoid, box and cylinder; half-axes are uniform in
//! `[0.08 B, 0.3 B]`; orientation is a uniformly random rotation; density
//! is uniform on `(0.2, 1.0]`; the center is uniform in the ball that keeps
//! the primitive's bounding sphere inside the object ball of radius `B`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion};
use ndarray::parallel::prelude::*;
use ndarray::{Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Volume;
use crate::error::{Error, Result};
use crate::geometry::{OrbitGeometry, Vec3, VolumeGrid};
use crate::scalar::Real;

pub const MIN_OBJECTS: usize = 5;
pub const MAX_OBJECTS: usize = 10;
const MIN_HALF_AXIS: f64 = 0.08;
const MAX_HALF_AXIS: f64 = 0.3;
const MIN_DENSITY: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Sphere,
    Ellipsoid,
    /// Rectangular box with half-extents `half_axes`.
    Box,
    /// Elliptic cylinder along local `z`: radii `half_axes[0..2]`, half-height `half_axes[2]`.
    Cylinder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub center: [f64; 3],
    pub half_axes: [f64; 3],
    /// Row-major rotation taking local coordinates to world coordinates.
    pub rotation: [[f64; 3]; 3],
    pub density: f64,
}

impl Primitive {
    pub fn sphere(center: [f64; 3], radius: f64, density: f64) -> Self {
        Primitive {
            shape: Shape::Sphere,
            center,
            half_axes: [radius; 3],
            rotation: IDENTITY,
            density,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let r = &self.rotation;
        Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        )
    }

    /// Point in the primitive's local frame.
    #[inline]
    fn local(&self, rot_t: &Matrix3<f64>, p: &Vec3) -> Vec3 {
        rot_t * (p - Vec3::from(self.center))
    }

    #[inline]
    fn contains_local(&self, l: &Vec3) -> bool {
        let [a, b, c] = self.half_axes;
        match self.shape {
            Shape::Sphere | Shape::Ellipsoid => (l.x / a).powi(2) + (l.y / b).powi(2) + (l.z / c).powi(2) <= 1.0,
            Shape::Box => l.x.abs() <= a && l.y.abs() <= b && l.z.abs() <= c,
            Shape::Cylinder => (l.x / a).powi(2) + (l.y / b).powi(2) <= 1.0 && l.z.abs() <= c,
        }
    }

    #[inline]
    fn contains_with(&self, rot_t: &Matrix3<f64>, p: &Vec3) -> bool {
        if self.shape == Shape::Sphere {
            // Rotation invariant by construction.
            let r = self.half_axes[0];
            return (p - Vec3::from(self.center)).norm_squared() <= r * r;
        }
        self.contains_local(&self.local(rot_t, p))
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.contains_with(&self.rotation_matrix().transpose(), p)
    }

    /// Radius of a sphere about `center` enclosing the primitive.
    pub fn bounding_radius(&self) -> f64 {
        let [a, b, c] = self.half_axes;
        match self.shape {
            Shape::Sphere | Shape::Ellipsoid => a.max(b).max(c),
            Shape::Box => (a * a + b * b + c * c).sqrt(),
            Shape::Cylinder => (a.max(b).powi(2) + c * c).sqrt(),
        }
    }
}

const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<Primitive>,
}

// Shoemake's uniform random rotation.
fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let q = Quaternion::new(
        a * (2.0 * PI * u2).sin(),
        a * (2.0 * PI * u2).cos(),
        b * (2.0 * PI * u3).sin(),
        b * (2.0 * PI * u3).cos(),
    );
    let m = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

/// Deterministic random scene inside the object ball of `geom`.
pub fn generate_scene(seed: u64, geom: &OrbitGeometry) -> Result<Scene> {
    let b = geom.fov_radius;
    if !(b > 0.0) {
        return Err(Error::InvalidGeometry("object ball radius must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(MIN_OBJECTS..=MAX_OBJECTS);
    let shapes = [Shape::Sphere, Shape::Ellipsoid, Shape::Box, Shape::Cylinder];
    let mut objects = Vec::with_capacity(count);
    for _ in 0..count {
        let shape = shapes[rng.gen_range(0..shapes.len())];
        let mut axis = || b * rng.gen_range(MIN_HALF_AXIS..MAX_HALF_AXIS);
        let half_axes = match shape {
            Shape::Sphere => [axis(); 3],
            Shape::Cylinder => {
                let r = axis();
                [r, r, axis()]
            }
            _ => [axis(), axis(), axis()],
        };
        let rotation = if shape == Shape::Sphere { IDENTITY } else { random_rotation(&mut rng) };
        let density = 1.0 - rng.gen_range(0.0..(1.0 - MIN_DENSITY));
        let mut obj = Primitive {
            shape,
            center: [0.0; 3],
            half_axes,
            rotation,
            density,
        };
        let reach = b - obj.bounding_radius();
        debug_assert!(reach > 0.0);
        let center = loop {
            let c = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if c.norm_squared() <= 1.0 {
                break c * reach;
            }
        };
        obj.center = [center.x, center.y, center.z];
        objects.push(obj);
    }
    Ok(Scene { objects })
}

/// Voxel-center sampling: each voxel holds the summed density of the
/// primitives containing its center.
pub fn rasterize<T: Real>(scene: &Scene, grid: &VolumeGrid) -> Result<Volume<T>> {
    grid.validate()?;
    let prepared: Vec<(&Primitive, Matrix3<f64>)> = scene
        .objects
        .iter()
        .map(|o| (o, o.rotation_matrix().transpose()))
        .collect();
    let mut data = Array3::<T>::zeros(grid.shape());
    data.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(k, mut slice)| {
            for ((j, i), v) in slice.indexed_iter_mut() {
                let p = grid.point(k, j, i);
                let total: f64 = prepared
                    .iter()
                    .filter(|(o, rt)| o.contains_with(rt, &p))
                    .map(|(o, _)| o.density)
                    .sum();
                *v = T::of(total);
            }
        });
    Volume::from_data(grid, data)
}

/// Centered sphere of the given radius and density.
pub fn sphere_phantom<T: Real>(grid: &VolumeGrid, radius: f64, density: f64, fov_radius: f64) -> Result<Volume<T>> {
    if radius > fov_radius {
        return Err(Error::InvalidArgument(format!(
            "sphere radius {radius} exceeds the object ball radius {fov_radius}"
        )));
    }
    if radius <= 0.0 {
        return Ok(Volume::zeros(grid));
    }
    let scene = Scene {
        objects: vec![Primitive::sphere([0.0; 3], radius, density)],
    };
    rasterize(&scene, grid)
}
