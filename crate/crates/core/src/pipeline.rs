//! The shift-variant filtered backprojection chain
//!
//! `x = ReLU(A_3dᵀ W_d A_2dᵀ D W_red W_sino D A_2d W_cos p)`
//!
//! split into the Grangeat stage (`S = W_sino D A_2d W_cos p`, the radial
//! derivative of the 3D Radon transform on the planes through each source
//! position), the filter stage (`g^F = W_d A_2dᵀ D W_red S`) and the
//! distance-weighted cone-beam backprojection. Views are processed
//! independently so only one view's line sinogram is alive per worker.

use std::path::PathBuf;

use ndarray::{Array3, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FilteredProjection, LineSinogram, LineSinogramStack, ProjectionStack, Volume};
use crate::error::{check_shape, Error, Result};
use crate::geometry::{analytic_redundancy_map, DetectorGrid, LineGrid, OrbitGeometry, VolumeGrid};
use crate::scalar::Real;
use crate::transforms::{conebeam_backproject, diff_s, RadonOperator};
use crate::weights::{apply_weight_view, cosine_weight, detector_weight, sinogram_weight, WeightMap};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    #[default]
    Double,
}

/// Where the redundancy weight comes from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSource {
    #[default]
    Analytic,
    LearnedFile { path: PathBuf },
    Random { seed: u64, scale: f64 },
}

/// Full description of a scan and its reconstruction grids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub geometry: OrbitGeometry,
    pub detector: DetectorGrid,
    pub line_grid: LineGrid,
    pub volume: VolumeGrid,
    #[serde(default)]
    pub w_red: WeightSource,
    #[serde(default)]
    pub precision: Precision,
}

impl PipelineConfig {
    /// Config with the default line grid for the detector.
    pub fn new(geometry: OrbitGeometry, detector: DetectorGrid, volume: VolumeGrid) -> Self {
        let line_grid = LineGrid::for_detector(&detector, geometry.detector_fov_radius);
        PipelineConfig {
            geometry,
            detector,
            line_grid,
            volume,
            w_red: WeightSource::Analytic,
            precision: Precision::Double,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.detector.validate()?;
        self.line_grid.validate()?;
        self.volume.validate()?;
        let e = self.geometry.detector_fov_radius;
        if self.line_grid.s_max() < e * (1.0 - 1e-9) {
            return Err(Error::InvalidGrid(format!(
                "line grid reaches |s| = {} but the detector field of view has radius {e}",
                self.line_grid.s_max()
            )));
        }
        if self.detector.inscribed_radius() < e * (1.0 - 1e-9) {
            return Err(Error::InvalidGrid(format!(
                "detector disk of radius {} cannot hold the field-of-view shadow {e}",
                self.detector.inscribed_radius()
            )));
        }
        let (lo, hi) = self.volume.bounds();
        let reach = lo.x.abs().max(hi.x.abs()).hypot(lo.y.abs().max(hi.y.abs()));
        if reach >= self.geometry.source_isocenter_distance {
            return Err(Error::InvalidGrid("volume grid extends to the source orbit".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization of the scan geometry and grids.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let key = (&self.geometry, &self.detector, &self.line_grid, &self.volume);
        hex::encode(Sha256::digest(serde_json::to_vec(&key).expect("config serializes")))
    }
}

/// Fixed operators of the chain, built once per configuration.
pub struct Pipeline<T> {
    pub cfg: PipelineConfig,
    radon: RadonOperator,
    w_cos: WeightMap<T>,
    w_sino: WeightMap<T>,
    w_d: WeightMap<T>,
}

/// Pre- and post-rectification output.
#[derive(Clone, Debug)]
pub struct Reconstruction<T> {
    /// Before the ReLU.
    pub z: Volume<T>,
    pub x: Volume<T>,
}

impl<T: Real> Pipeline<T> {
    pub fn new(cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.geometry.source_detector_distance;
        Ok(Pipeline {
            radon: RadonOperator::new(&cfg.detector, &cfg.line_grid),
            w_cos: cosine_weight(&cfg.detector, d),
            w_sino: sinogram_weight(&cfg.line_grid, d),
            w_d: detector_weight(&cfg.detector, d),
            cfg: cfg.clone(),
        })
    }

    pub fn radon(&self) -> &RadonOperator {
        &self.radon
    }

    pub fn detector_weight(&self) -> &WeightMap<T> {
        &self.w_d
    }

    pub fn analytic_weights(&self) -> Result<WeightMap<T>> {
        analytic_redundancy_map(&self.cfg.geometry, &self.cfg.line_grid)
    }

    fn check_projections(&self, p: &ProjectionStack<T>) -> Result<()> {
        if p.det != self.cfg.detector {
            return Err(Error::InvalidGrid("projection detector grid differs from the pipeline's".into()));
        }
        check_shape(
            &[self.cfg.geometry.n_views(), self.cfg.detector.n_rows, self.cfg.detector.n_cols],
            p.data.shape(),
        )
    }

    pub fn check_weights(&self, w_red: &WeightMap<T>) -> Result<()> {
        check_shape(&[self.cfg.line_grid.n_mu, self.cfg.line_grid.n_s], &w_red.values.shape()[1..])?;
        if !w_red.is_shared() && w_red.n_layers() != self.cfg.geometry.n_views() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.cfg.geometry.n_views(), self.cfg.line_grid.n_mu, self.cfg.line_grid.n_s],
                actual: w_red.values.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// `S = W_sino D A_2d W_cos p` for one view.
    pub fn grangeat_view(&self, img: &ArrayView2<'_, T>) -> Result<LineSinogram<T>> {
        let mut weighted = img.to_owned();
        apply_weight_view(&mut weighted.view_mut(), &self.w_cos, 0)?;
        let sino = self.radon.forward(&weighted.view())?;
        let mut s = diff_s(&sino.view(), self.cfg.line_grid.s_spacing)?;
        apply_weight_view(&mut s.view_mut(), &self.w_sino, 0)?;
        Ok(s)
    }

    /// `g^F = W_d A_2dᵀ D W_red S` for one view.
    pub fn filter_view(&self, s: &ArrayView2<'_, T>, w_red: &WeightMap<T>, view: usize) -> Result<FilteredProjection<T>> {
        let mut weighted = s.to_owned();
        apply_weight_view(&mut weighted.view_mut(), w_red, view)?;
        let d = diff_s(&weighted.view(), self.cfg.line_grid.s_spacing)?;
        let mut g = self.radon.adjoint(&d.view())?;
        apply_weight_view(&mut g.view_mut(), &self.w_d, 0)?;
        Ok(g)
    }

    pub fn grangeat_stage(&self, p: &ProjectionStack<T>) -> Result<LineSinogramStack<T>> {
        self.check_projections(p)?;
        let views: Vec<_> = p.data.outer_iter().collect();
        let sinos = views
            .par_iter()
            .map(|img| self.grangeat_view(img))
            .collect::<Result<Vec<_>>>()?;
        let (n_mu, n_s) = self.cfg.line_grid.shape();
        let mut data = Array3::<T>::zeros((sinos.len(), n_mu, n_s));
        for (mut dst, src) in data.axis_iter_mut(Axis(0)).zip(sinos) {
            dst.assign(&src);
        }
        Ok(LineSinogramStack {
            grid: self.cfg.line_grid.clone(),
            data,
        })
    }

    pub fn filter_stage(&self, s: &LineSinogramStack<T>, w_red: &WeightMap<T>) -> Result<ProjectionStack<T>> {
        self.check_weights(w_red)?;
        check_shape(
            &[self.cfg.geometry.n_views(), self.cfg.line_grid.n_mu, self.cfg.line_grid.n_s],
            s.data.shape(),
        )?;
        let views: Vec<_> = s.data.outer_iter().enumerate().collect();
        let filtered = views
            .par_iter()
            .map(|(k, sv)| self.filter_view(sv, w_red, *k))
            .collect::<Result<Vec<_>>>()?;
        self.stack_projections(filtered)
    }

    fn stack_projections(&self, views: Vec<FilteredProjection<T>>) -> Result<ProjectionStack<T>> {
        let det = &self.cfg.detector;
        let mut data = Array3::<T>::zeros((views.len(), det.n_rows, det.n_cols));
        for (mut dst, src) in data.axis_iter_mut(Axis(0)).zip(views) {
            dst.assign(&src);
        }
        ProjectionStack::from_data(det, data)
    }

    /// Filtered projections streamed view by view from raw projections.
    pub fn filtered_projections(&self, p: &ProjectionStack<T>, w_red: &WeightMap<T>) -> Result<ProjectionStack<T>> {
        self.check_projections(p)?;
        self.check_weights(w_red)?;
        let views: Vec<_> = p.data.outer_iter().enumerate().collect();
        let filtered = views
            .par_iter()
            .map(|(k, img)| {
                let s = self.grangeat_view(img)?;
                self.filter_view(&s.view(), w_red, *k)
            })
            .collect::<Result<Vec<_>>>()?;
        self.stack_projections(filtered)
    }

    pub fn backproject(&self, g: &ProjectionStack<T>) -> Result<Volume<T>> {
        conebeam_backproject(g, &self.cfg.geometry, &self.cfg.volume)
    }

    /// Pre-rectification volume `z` from already computed Grangeat data.
    pub fn reconstruct_from_sinograms(&self, s: &LineSinogramStack<T>, w_red: &WeightMap<T>) -> Result<Volume<T>> {
        self.backproject(&self.filter_stage(s, w_red)?)
    }

    pub fn reconstruct(&self, p: &ProjectionStack<T>, w_red: &WeightMap<T>) -> Result<Reconstruction<T>> {
        let z = self.backproject(&self.filtered_projections(p, w_red)?)?;
        let x = z.rectified();
        Ok(Reconstruction { z, x })
    }
}

pub fn grangeat_stage<T: Real>(p: &ProjectionStack<T>, cfg: &PipelineConfig) -> Result<LineSinogramStack<T>> {
    Pipeline::new(cfg)?.grangeat_stage(p)
}

pub fn filter_stage<T: Real>(s: &LineSinogramStack<T>, w_red: &WeightMap<T>, cfg: &PipelineConfig) -> Result<ProjectionStack<T>> {
    Pipeline::new(cfg)?.filter_stage(s, w_red)
}

pub fn reconstruct<T: Real>(p: &ProjectionStack<T>, w_red: &WeightMap<T>, cfg: &PipelineConfig) -> Result<Reconstruction<T>> {
    Pipeline::new(cfg)?.reconstruct(p, w_red)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::sphere_phantom;
    use crate::transforms::{conebeam_forward, radon2d};
    use crate::weights::WeightRole;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> PipelineConfig {
        let geom = OrbitGeometry::circular(66.0, 199.0, 12.0, 16).unwrap();
        let det = DetectorGrid::new(32, 32, 2.5);
        PipelineConfig::new(geom, det, VolumeGrid::centered(16, 1.5))
    }

    fn random_stack(cfg: &PipelineConfig, rng: &mut ChaCha8Rng) -> ProjectionStack<f64> {
        let det = &cfg.detector;
        let data = Array3::from_shape_fn((cfg.geometry.n_views(), det.n_rows, det.n_cols), |_| rng.gen_range(-1.0..1.0));
        ProjectionStack::from_data(det, data).unwrap()
    }

    #[test]
    fn config_validation() {
        let cfg = tiny();
        cfg.validate().unwrap();
        let mut small_det = cfg.clone();
        small_det.detector = DetectorGrid::new(8, 8, 2.5);
        assert!(small_det.validate().is_err());
        let mut short_lines = cfg.clone();
        short_lines.line_grid = LineGrid::covering(5.0, 11, 20);
        assert!(short_lines.validate().is_err());
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&json).unwrap(), cfg);
        assert_ne!(cfg.hash(), small_det.hash());
    }

    #[test]
    fn zero_projections_give_zero() {
        let cfg = tiny();
        let pipe = Pipeline::<f64>::new(&cfg).unwrap();
        let p = ProjectionStack::zeros(&cfg.detector, 16);
        let s = pipe.grangeat_stage(&p).unwrap();
        assert!(s.data.iter().all(|&v| v == 0.0));
        let w = pipe.analytic_weights().unwrap();
        let g = pipe.filter_stage(&s, &w).unwrap();
        assert!(g.data.iter().all(|&v| v == 0.0));
        let r = pipe.reconstruct(&p, &w).unwrap();
        assert!(r.x.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grangeat_matches_manual_composition() {
        let cfg = tiny();
        let pipe = Pipeline::<f64>::new(&cfg).unwrap();
        let det = &cfg.detector;
        let p = ProjectionStack::from_data(det, Array3::from_elem((16, 32, 32), 1.0)).unwrap();
        let s = pipe.grangeat_stage(&p).unwrap();
        let d = cfg.geometry.source_detector_distance;
        let grid = &cfg.line_grid;
        let cos = Array2::from_shape_fn(det.shape(), |(r, c)| d / (det.u(c).powi(2) + det.v(r).powi(2) + d * d).sqrt());
        let sino = radon2d(&cos.view(), det, grid).unwrap();
        let ds = crate::transforms::diff_s(&sino.view(), grid.s_spacing).unwrap();
        let manual = Array2::from_shape_fn(grid.shape(), |(j, i)| ds[[j, i]] * (grid.s(i).powi(2) + d * d) / (d * d));
        for k in 0..16 {
            let v = s.data.index_axis(Axis(0), k);
            assert!(v.iter().zip(manual.iter()).all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs().max(1.0)));
        }
        let doubled = ProjectionStack::from_data(det, p.data.mapv(|v| 2.0 * v)).unwrap();
        let s2 = pipe.grangeat_stage(&doubled).unwrap();
        assert!(s2.data.iter().zip(s.data.iter()).all(|(a, b)| (a - 2.0 * b).abs() <= 1e-12 * b.abs().max(1.0)));
    }

    #[test]
    fn filter_is_bilinear() {
        let cfg = tiny();
        let pipe = Pipeline::<f64>::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = pipe.grangeat_stage(&random_stack(&cfg, &mut rng)).unwrap();
        let w = pipe.analytic_weights().unwrap();
        let base = pipe.filter_stage(&s, &w).unwrap();
        let scaled_s = LineSinogramStack { grid: s.grid.clone(), data: s.data.mapv(|v| 3.0 * v) };
        let scaled = pipe.filter_stage(&scaled_s, &w.map_values(|v| -0.5 * v)).unwrap();
        let peak = base.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(scaled.data.iter().zip(base.data.iter()).all(|(a, b)| (a + 1.5 * b).abs() <= 1e-12 * peak));
        let zero = pipe.filter_stage(&s, &w.map_values(|_| 0.0)).unwrap();
        assert!(zero.data.iter().all(|&v| v == 0.0));
        let bad = WeightMap::shared(WeightRole::Redundancy, Array2::<f64>::zeros((3, 3)), true);
        assert!(pipe.filter_stage(&s, &bad).is_err());
    }

    #[test]
    fn superposition_before_rectification() {
        let cfg = tiny();
        let pipe = Pipeline::<f64>::new(&cfg).unwrap();
        let w = pipe.analytic_weights().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (p1, p2) = (random_stack(&cfg, &mut rng), random_stack(&cfg, &mut rng));
        let (a, b) = (0.7, -1.9);
        let combo = ProjectionStack::from_data(&cfg.detector, &p1.data * a + &p2.data * b).unwrap();
        let z1 = pipe.reconstruct(&p1, &w).unwrap().z;
        let z2 = pipe.reconstruct(&p2, &w).unwrap().z;
        let zc = pipe.reconstruct(&combo, &w).unwrap();
        let expected = &z1.data * a + &z2.data * b;
        let scale = expected.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(zc.z.data.iter().zip(expected.iter()).all(|(x, y)| (x - y).abs() <= 1e-10 * scale));
        assert!(zc.x.data.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn analytic_sign_gives_positive_mean() {
        // Fixes REDUNDANCY_SIGN: a positive object must come back positive.
        let geom = OrbitGeometry::circular(66.0, 199.0, 12.0, 36).unwrap();
        let cfg = PipelineConfig::new(geom, DetectorGrid::new(40, 40, 2.0), VolumeGrid::centered(24, 1.0));
        let pipe = Pipeline::<f64>::new(&cfg).unwrap();
        let vol = sphere_phantom::<f64>(&cfg.volume, 6.0, 1.0, 12.0).unwrap();
        let p = conebeam_forward(&vol, &cfg.geometry, &cfg.detector).unwrap();
        let z = pipe.reconstruct(&p, &pipe.analytic_weights().unwrap()).unwrap().z;
        let inside: Vec<f64> = vol
            .data
            .iter()
            .zip(z.data.iter())
            .filter(|(g, _)| **g > 0.0)
            .map(|(_, z)| *z)
            .collect();
        let mean = inside.iter().sum::<f64>() / inside.len() as f64;
        assert!(mean > 0.5, "mean inside the sphere {mean}");
        assert!(z.data.mean().unwrap() > 0.0);
    }
}
