//! File-level steps of the simulate / train / reconstruct workflow.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Volume;
use crate::error::{Error, Result};
use crate::geometry::{DetectorGrid, OrbitGeometry, VolumeGrid};
use crate::io::{read_json, read_projections, read_volume, write_csv, write_json, write_projections, write_volume, write_weights};
use crate::learning::{train, EpochLoss, TrainConfig, TrainOutcome, TrainSample};
use crate::phantom::{generate_scene, rasterize};
use crate::pipeline::{Pipeline, PipelineConfig};
use crate::scalar::Real;
use crate::transforms::conebeam_forward;

pub const DESK_SOURCE_ISOCENTER_MM: f64 = 66.0;
pub const DESK_SOURCE_DETECTOR_MM: f64 = 199.0;
pub const DESK_FOV_RADIUS_MM: f64 = 24.0;
pub const DESK_VIEWS: usize = 90;
pub const DESK_DETECTOR_PIXELS: usize = 64;
pub const DESK_DETECTOR_SPACING_MM: f64 = 2.6;
pub const DESK_VOLUME_VOXELS: usize = 48;
pub const DESK_VOXEL_MM: f64 = 1.0;

/// Scaled-down circular scan used when no configuration is given.
pub fn desk_config() -> PipelineConfig {
    let geom = OrbitGeometry::circular(DESK_SOURCE_ISOCENTER_MM, DESK_SOURCE_DETECTOR_MM, DESK_FOV_RADIUS_MM, DESK_VIEWS)
        .expect("desk geometry is valid");
    PipelineConfig::new(
        geom,
        DetectorGrid::new(DESK_DETECTOR_PIXELS, DESK_DETECTOR_PIXELS, DESK_DETECTOR_SPACING_MM),
        VolumeGrid::centered(DESK_VOLUME_VOXELS, DESK_VOXEL_MM),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub seed: u64,
    /// Relative to the manifest's directory.
    pub volume: PathBuf,
    pub projections: PathBuf,
}

/// Dataset description written by [`generate_dataset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: PipelineConfig,
    pub geometry_hash: String,
    pub samples: Vec<ManifestEntry>,
}

/// Simulates one scene per seed and writes volumes, projections and
/// `manifest.json` into `out_dir`.
pub fn generate_dataset<T: Real>(cfg: &PipelineConfig, seeds: &[u64], out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let hash = cfg.hash();
    let mut samples = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let scene = generate_scene(seed, &cfg.geometry)?;
        let vol = rasterize::<T>(&scene, &cfg.volume)?;
        let p = conebeam_forward(&vol, &cfg.geometry, &cfg.detector)?;
        let entry = ManifestEntry {
            seed,
            volume: PathBuf::from(format!("sample_{seed:04}_volume.raw")),
            projections: PathBuf::from(format!("sample_{seed:04}_projections.raw")),
        };
        write_volume(&out_dir.join(&entry.volume), &vol, Some(&hash))?;
        write_projections(&out_dir.join(&entry.projections), &p, Some(&hash))?;
        log::info!("seed {seed}: {} objects", scene.objects.len());
        samples.push(entry);
    }
    let manifest = Manifest {
        config: cfg.clone(),
        geometry_hash: hash,
        samples,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let manifest: Manifest = read_json(path)?;
    if manifest.config.hash() != manifest.geometry_hash {
        return Err(Error::GeometryMismatch {
            expected: manifest.config.hash(),
            found: manifest.geometry_hash,
        });
    }
    Ok(manifest)
}

/// Loads every sample listed in a manifest, checking geometry hashes.
pub fn load_dataset<T: Real>(path: &Path) -> Result<(Manifest, Vec<TrainSample<T>>)> {
    let manifest = read_manifest(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let hash = Some(manifest.geometry_hash.as_str());
    let samples = manifest
        .samples
        .iter()
        .map(|e| {
            let (projections, _) = read_projections::<T>(&dir.join(&e.projections), hash)?;
            let (ground_truth, side) = read_volume::<T>(&dir.join(&e.volume))?;
            crate::io::check_geometry_hash(&side, hash)?;
            if ground_truth.grid != manifest.config.volume {
                return Err(Error::InvalidGrid(format!("{} is not on the manifest's volume grid", e.volume.display())));
            }
            Ok(TrainSample {
                projections,
                ground_truth,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, samples))
}

/// Output files of [`train_from_manifest`].
#[derive(Clone, Debug)]
pub struct TrainArtifacts {
    pub learned: PathBuf,
    pub smoothed: PathBuf,
    pub history: PathBuf,
}

impl TrainArtifacts {
    pub fn in_dir(dir: &Path) -> Self {
        TrainArtifacts {
            learned: dir.join("w_red_learned.raw"),
            smoothed: dir.join("w_red_smoothed.raw"),
            history: dir.join("loss_history.csv"),
        }
    }
}

pub fn history_rows(history: &[EpochLoss]) -> Vec<Vec<String>> {
    history
        .iter()
        .map(|h| {
            vec![
                h.epoch.to_string(),
                format!("{:e}", h.train_mse),
                h.val_mse.map_or(String::new(), |v| format!("{v:e}")),
            ]
        })
        .collect()
}

pub fn train_from_manifest<T: Real>(manifest_path: &Path, tc: &TrainConfig, out: &TrainArtifacts) -> Result<TrainOutcome<T>> {
    let (manifest, samples) = load_dataset::<T>(manifest_path)?;
    let pipe = Pipeline::<T>::new(&manifest.config)?;
    let outcome = train(&pipe, &samples, tc, None)?;
    let hash = Some(manifest.geometry_hash.as_str());
    write_weights(&out.learned, &outcome.raw, &manifest.config.line_grid, hash)?;
    write_weights(&out.smoothed, &outcome.smoothed, &manifest.config.line_grid, hash)?;
    write_csv(&out.history, &["epoch", "train_mse", "val_mse"], &history_rows(&outcome.history))?;
    Ok(outcome)
}

/// Rasterized ground truth for one seed, without writing anything.
pub fn scene_volume<T: Real>(cfg: &PipelineConfig, seed: u64) -> Result<Volume<T>> {
    rasterize(&generate_scene(seed, &cfg.geometry)?, &cfg.volume)
}
