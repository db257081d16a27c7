use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use svbp::fdk::fdk_reconstruct;
use svbp::learning::{grad_wred, mse_loss, split_dataset};
use svbp::metrics::{ball_mask, cos_mu_mask, masked_rmse, pearson, psnr};
use svbp::phantom::{generate_scene, rasterize, Primitive, Scene};
use svbp::transforms::{
    conebeam_backproject, conebeam_backproject_adjoint, conebeam_forward, diff_s, diff_s_adjoint, radon2d, weighted_dot,
    RadonOperator,
};
use svbp::workflow::{desk_config, generate_dataset, load_dataset, train_from_manifest, TrainArtifacts};
use svbp::{DetectorGrid, LineGrid, OrbitGeometry, Pipeline, PipelineConfig, ProjectionStack, TrainConfig, Volume, VolumeGrid, WeightMap};

type Outcome = Result<String, String>;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn uniform2(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn uniform3(shape: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Array3<f64> {
    Array3::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn adjoint_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let det = DetectorGrid::new(64, 64, 1.0);
    let grid = LineGrid::covering(det.half_width().hypot(det.half_height()), 65, 90);
    let op = RadonOperator::new(&det, &grid);
    let (mut radon_worst, mut diff_worst, mut cone_worst) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let x = uniform2(det.shape(), &mut rng);
        let y = uniform2(grid.shape(), &mut rng);
        let lhs = weighted_dot(&op.forward(&x.view()).unwrap().view(), &y.view(), grid.s_spacing * grid.mu_spacing);
        let rhs = weighted_dot(&x.view(), &op.adjoint(&y.view()).unwrap().view(), det.pixel_area());
        radon_worst = radon_worst.max(rel(lhs, rhs));

        let z = uniform2(grid.shape(), &mut rng);
        let lhs = (&diff_s(&y.view(), grid.s_spacing).unwrap() * &z).sum();
        let rhs = (&y * &diff_s_adjoint(&z.view(), grid.s_spacing).unwrap()).sum();
        diff_worst = diff_worst.max(rel(lhs, rhs));
    }
    let geom = OrbitGeometry::circular(66.0, 199.0, 20.0, 16).unwrap();
    let cdet = DetectorGrid::new(24, 24, 6.0);
    let vgrid = VolumeGrid::centered(32, 1.25);
    for _ in 0..20 {
        let x = Volume::from_data(&vgrid, uniform3(vgrid.shape(), &mut rng)).unwrap();
        let y = ProjectionStack::from_data(&cdet, uniform3((16, 24, 24), &mut rng)).unwrap();
        let lhs = (&conebeam_backproject(&y, &geom, &vgrid).unwrap().data * &x.data).sum();
        let rhs = (&conebeam_backproject_adjoint(&x, &geom, &cdet).unwrap().data * &y.data).sum();
        cone_worst = cone_worst.max(rel(lhs, rhs));
    }
    let msg = format!("worst relative error radon {radon_worst:.1e}, diff_s {diff_worst:.1e}, backprojection {cone_worst:.1e}");
    if radon_worst.max(diff_worst).max(cone_worst) < 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn disk_chords() -> Outcome {
    let det = DetectorGrid::new(256, 256, 1.0);
    let grid = LineGrid::covering(128.0, 257, 180);
    let r = 80.0;
    let img = Array2::from_shape_fn(det.shape(), |(row, col)| f64::from(u8::from(det.u(col).hypot(det.v(row)) <= r)));
    let sino = radon2d(&img.view(), &det, &grid).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for ((_, i), &v) in sino.indexed_iter() {
        let s = grid.s(i);
        let chord = if s.abs() < r { 2.0 * (r * r - s * s).sqrt() } else { 0.0 };
        num += (v - chord) * (v - chord);
        den += chord * chord;
    }
    let err = (num / den).sqrt();
    let msg = format!("relative L2 error {:.3}%", 100.0 * err);
    if err < 0.02 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn gradient_check() -> Outcome {
    let geom = OrbitGeometry::circular(66.0, 199.0, 12.0, 8).unwrap();
    let cfg = PipelineConfig::new(geom, DetectorGrid::new(24, 24, 3.2), VolumeGrid::centered(16, 1.5));
    let pipe = Pipeline::<f64>::new(&cfg).unwrap();
    let gt = rasterize::<f64>(&generate_scene(7, &cfg.geometry).unwrap(), &cfg.volume).unwrap();
    let p = conebeam_forward(&gt, &cfg.geometry, &cfg.detector).unwrap();
    let s = pipe.grangeat_stage(&p).unwrap();
    let analytic = pipe.analytic_weights().unwrap();
    let scale = analytic.mean_abs();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = WeightMap {
        values: analytic.values.mapv(|v| 0.8 * v + rng.gen_range(-0.2..0.2) * scale),
        ..analytic
    };
    let (_, g) = grad_wred(&pipe, &p, &gt, &w).unwrap();
    let gmax = g.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let loss_at = |w: &WeightMap<f64>| mse_loss(&pipe.reconstruct_from_sinograms(&s, w).unwrap().rectified(), &gt).unwrap();
    let (n_mu, n_s) = cfg.line_grid.shape();
    let h = 1e-4 * scale;
    let (mut tested, mut worst) = (0, 0.0f64);
    while tested < 20 {
        let (j, i) = (rng.gen_range(0..n_mu), rng.gen_range(0..n_s));
        let got = g.values[[0, j, i]];
        // Central differences cannot resolve entries far below the largest
        // gradient: their roundoff floor exceeds the tolerance.
        if got.abs() < 1e-3 * gmax {
            continue;
        }
        let mut plus = w.clone();
        plus.values[[0, j, i]] += h;
        let mut minus = w.clone();
        minus.values[[0, j, i]] -= h;
        let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
        worst = worst.max((fd - got).abs() / got.abs());
        tested += 1;
    }
    let msg = format!("worst relative error over 20 entries {worst:.1e}");
    if worst < 1e-4 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn sphere_scene() -> Scene {
    Scene {
        objects: vec![
            Primitive::sphere([0.0, 0.0, 0.0], 12.0, 0.5),
            Primitive::sphere([5.0, -3.0, 2.0], 4.0, 0.5),
            Primitive::sphere([-6.0, 4.0, -5.0], 3.0, 0.3),
        ],
    }
}

fn versus_fdk() -> Outcome {
    let geom = OrbitGeometry::circular(66.0, 199.0, 24.0, 180).unwrap();
    let cfg = PipelineConfig::new(geom, DetectorGrid::new(72, 72, 2.2), VolumeGrid::centered(64, 0.75));
    let gt = rasterize::<f64>(&sphere_scene(), &cfg.volume).unwrap();
    let p = conebeam_forward(&gt, &cfg.geometry, &cfg.detector).unwrap();
    let pipe = Pipeline::<f64>::new(&cfg).unwrap();
    let ours = pipe.reconstruct(&p, &pipe.analytic_weights().unwrap()).unwrap();
    let fdk = fdk_reconstruct(&p, &cfg.geometry, &cfg.volume).unwrap();
    let a = psnr(&ours.x.data, &gt.data).unwrap();
    let b = psnr(&fdk.data, &gt.data).unwrap();
    let msg = format!("PSNR analytic-weight pipeline {a:.2} dB, FDK {b:.2} dB");
    if a >= b - 3.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn learning() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config();
    let seeds: Vec<u64> = (0..10).collect();
    generate_dataset::<f64>(&cfg, &seeds, dir.path()).unwrap();
    let manifest = dir.path().join("manifest.json");
    let tc = TrainConfig::default();
    let outcome = train_from_manifest::<f64>(&manifest, &tc, &TrainArtifacts::in_dir(dir.path())).unwrap();
    let (_, samples) = load_dataset::<f64>(&manifest).unwrap();
    let (_, val) = split_dataset(samples.len(), tc.train_fraction).unwrap();
    let pipe = Pipeline::<f64>::new(&cfg).unwrap();
    let analytic = pipe.analytic_weights().unwrap();
    let val_mse = |w: &WeightMap<f64>| {
        val.iter()
            .map(|&i| mse_loss(&pipe.reconstruct(&samples[i].projections, w).unwrap().x, &samples[i].ground_truth).unwrap())
            .sum::<f64>()
            / val.len() as f64
    };
    let (learned, reference) = (val_mse(&outcome.smoothed), val_mse(&analytic));
    let mask: Vec<bool> = cos_mu_mask(&cfg.line_grid, 0.1).iter().cloned().collect();
    let a: Vec<f64> = outcome.smoothed.values.iter().cloned().collect();
    let b: Vec<f64> = analytic.values.iter().cloned().collect();
    let r = pearson(&a, &b, Some(&mask)).unwrap();
    let first = outcome.history.first().unwrap().train_mse;
    let last = outcome.history.last().unwrap().train_mse;
    let ratio = learned / reference;
    let msg = format!(
        "(a) validation MSE ratio {ratio:.3} (b) Pearson {r:.3} (c) train MSE {first:.3e} -> {last:.3e} over {} epochs",
        outcome.history.len() - 1
    );
    if ratio <= 1.25 && r >= 0.9 && last <= 0.5 * first {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn linearity() -> Outcome {
    let geom = OrbitGeometry::circular(66.0, 199.0, 12.0, 24).unwrap();
    let cfg = PipelineConfig::new(geom, DetectorGrid::new(32, 32, 2.6), VolumeGrid::centered(24, 1.0));
    let pipe = Pipeline::<f64>::new(&cfg).unwrap();
    let w = pipe.analytic_weights().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let shape = (24, 32, 32);
    let (mut worst, mut negatives) = (0.0f64, 0usize);
    for _ in 0..3 {
        let pa = ProjectionStack::from_data(&cfg.detector, uniform3(shape, &mut rng)).unwrap();
        let pb = ProjectionStack::from_data(&cfg.detector, uniform3(shape, &mut rng)).unwrap();
        let (alpha, beta) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let mix = ProjectionStack::from_data(&cfg.detector, &pa.data * alpha + &pb.data * beta).unwrap();
        let za = pipe.reconstruct(&pa, &w).unwrap();
        let zb = pipe.reconstruct(&pb, &w).unwrap();
        let zm = pipe.reconstruct(&mix, &w).unwrap();
        let expected = &za.z.data * alpha + &zb.z.data * beta;
        let peak = expected.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = (&zm.z.data - &expected).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst = worst.max(err / peak);
        negatives += [&za.x, &zb.x, &zm.x].iter().map(|v| v.data.iter().filter(|&&v| v < 0.0).count()).sum::<usize>();
    }
    let msg = format!("superposition error {worst:.1e}, negative outputs {negatives}");
    if worst < 1e-10 && negatives == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn same_bytes(a: &Path, b: &Path, names: &[String]) -> Result<(), String> {
    for name in names {
        if std::fs::read(a.join(name)).unwrap() != std::fs::read(b.join(name)).unwrap() {
            return Err(format!("{name} differs between runs"));
        }
    }
    Ok(())
}

fn determinism() -> Outcome {
    let geom = OrbitGeometry::circular(66.0, 199.0, 12.0, 8).unwrap();
    let cfg = PipelineConfig::new(geom, DetectorGrid::new(24, 24, 3.2), VolumeGrid::centered(16, 1.5));
    let tc = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let runs: Vec<tempfile::TempDir> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            generate_dataset::<f64>(&cfg, &[2, 3, 4, 5, 6], dir.path()).unwrap();
            train_from_manifest::<f64>(&dir.path().join("manifest.json"), &tc, &TrainArtifacts::in_dir(dir.path())).unwrap();
            dir
        })
        .collect();
    let mut names: Vec<String> = std::fs::read_dir(runs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    same_bytes(runs[0].path(), runs[1].path(), &names)?;
    Ok(format!("{} files byte-identical across two runs", names.len()))
}

/// Sum of isotropic Gaussian blobs; smooth, so the error is dominated by
/// view sampling rather than by edge blur.
fn blob_volume(grid: &VolumeGrid) -> Volume<f64> {
    let blobs = [([0.0, 0.0, 0.0], 6.0, 0.6), ([7.0, -4.0, 3.0], 2.0, 0.8), ([-6.0, 6.0, -4.0], 1.5, 1.0), ([2.0, 9.0, 5.0], 2.5, 0.5)];
    let data = Array3::from_shape_fn(grid.shape(), |(k, j, i)| {
        let x = grid.point(k, j, i);
        blobs
            .iter()
            .map(|(c, sigma, a)| {
                let d2 = (x.x - c[0]).powi(2) + (x.y - c[1]).powi(2) + (x.z - c[2]).powi(2);
                a * (-d2 / (2.0 * sigma * sigma)).exp()
            })
            .sum()
    });
    Volume::from_data(grid, data).unwrap()
}

fn view_convergence() -> Outcome {
    let base = desk_config();
    let gt = blob_volume(&base.volume);
    let mask = ball_mask(&base.volume, 20.0);
    let mut errors = Vec::new();
    for n in [45, 90, 180] {
        let g = &base.geometry;
        let geom = OrbitGeometry::circular(g.source_isocenter_distance, g.source_detector_distance, g.fov_radius, n).unwrap();
        let cfg = PipelineConfig::new(geom, base.detector.clone(), base.volume.clone());
        let pipe = Pipeline::<f64>::new(&cfg).unwrap();
        let p = conebeam_forward(&gt, &cfg.geometry, &cfg.detector).unwrap();
        let x = pipe.reconstruct(&p, &pipe.analytic_weights().unwrap()).unwrap().x;
        errors.push(masked_rmse(&x, &gt, &mask).unwrap());
    }
    let msg = format!("masked RMSE 45/90/180 views: {:.6e} {:.6e} {:.6e}", errors[0], errors[1], errors[2]);
    if errors[0] > errors[1] && errors[1] > errors[2] {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 adjoint suite", adjoint_suite),
        ("2 disk chord oracle", disk_chords),
        ("3 gradient vs finite differences", gradient_check),
        ("4 analytic weights vs FDK", versus_fdk),
        ("5 learning convergence", learning),
        ("6 linearity and non-negativity", linearity),
        ("7 determinism", determinism),
        ("8 view-count convergence", view_convergence),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS criterion {name}: {msg} ({secs:.1} s)"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name}: {msg} ({secs:.1} s)")
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
