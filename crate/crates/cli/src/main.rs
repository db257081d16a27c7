use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use svbp::fdk::fdk_reconstruct;
use svbp::io::{read_json, read_projections, read_volume, read_weights, write_csv, write_projections, write_volume, write_weights};
use svbp::learning::TrainConfig;
use svbp::metrics::{ball_mask, export_slice, masked_rmse, mse, psnr};
use svbp::transforms::conebeam_forward;
use svbp::workflow::{desk_config, generate_dataset, train_from_manifest, TrainArtifacts};
use svbp::{Error, Pipeline, PipelineConfig, Precision, Real, Result};

const DEFAULTS: &str = "\
Defaults (override with flags, --geometry, or --config):
  source-isocenter distance R   66 mm
  source-detector distance D    199 mm
  field-of-view radius B        24 mm
  views                         90 over [0, 2pi)
  detector                      64 x 64 pixels at 2.6 mm
  volume                        48^3 voxels at 1.0 mm, centered
  line grid                     n_mu = 180 over [0, pi); n_s = next odd >= detector diagonal in pixels; s in [-e, e]
  precision                     double
  epochs                        10
  learning rate                 5e-5 (Adam, beta1 0.9, beta2 0.999, eps 1e-5)
  one-cycle                     warmup 30% from lr/1 to 10*lr, cosine anneal to lr/100
  redundancy init               uniform(-s0, s0), s0 = mean |analytic map| (1e-3 without one)
  train/validation split        first 80% / last 20% of the manifest
  smoothing sigma               2 grid bins
  seed                          0
  threads                       0 (all cores)

A --config file is JSON with optional \"pipeline\" and \"train\" objects using the
field names of the geometry and training configuration files.";

#[derive(Parser, Debug)]
#[command(name = "svbp", version, about = "Cone-beam reconstruction with a learnable redundancy weight", after_help = DEFAULTS)]
struct Cli {
    /// Worker threads, 0 picks one per core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// JSON file with "pipeline" and/or "train" overrides.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Pipeline configuration JSON (orbit, detector, line grid, volume).
    #[arg(long, global = true)]
    geometry: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    precision: Option<PrecisionArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PrecisionArg {
    Single,
    Double,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate random scenes and their projections and write a manifest.
    GenData {
        /// `a..b` (half-open), `a..=b`, or a comma-separated list.
        #[arg(long, default_value = "0..10")]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cone-beam forward projection of a volume.
    Project {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn the redundancy weight from a manifest.
    Train(TrainArgs),
    /// Reconstruct with the analytic or a learned redundancy weight.
    Reconstruct {
        #[arg(long)]
        projections: PathBuf,
        /// Weight map file; the analytic map is used when absent.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Feldkamp reconstruction.
    Fdk {
        #[arg(long)]
        projections: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// MSE and PSNR of a volume against a reference.
    Compare {
        volume: PathBuf,
        reference: PathBuf,
        /// Also report RMSE inside this radius (mm).
        #[arg(long)]
        mask_radius: Option<f64>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write one slice of a volume as an 8-bit PGM image.
    ExportSlice {
        #[arg(long)]
        volume: PathBuf,
        /// 0 = z, 1 = y, 2 = x.
        #[arg(long, default_value_t = 0)]
        axis: usize,
        /// Defaults to the central slice.
        #[arg(long)]
        index: Option<usize>,
        /// Display window `lo,hi`; min-max of the slice when absent.
        #[arg(long, value_parser = parse_window)]
        window: Option<(f64, f64)>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the analytic redundancy map of the configured orbit.
    WeightsAnalytic {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Directory for the learned map, the smoothed map and the loss CSV.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    peak_factor: Option<f64>,
    #[arg(long)]
    div_factor: Option<f64>,
    #[arg(long)]
    final_div_factor: Option<f64>,
    #[arg(long)]
    warmup_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// One map per view instead of a shared map.
    #[arg(long)]
    per_view: bool,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    pipeline: Option<PipelineConfig>,
    train: Option<TrainConfig>,
}

fn parse_window(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((lo, hi))
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::InvalidArgument(format!("cannot parse seeds '{s}'"));
    let num = |t: &str| t.trim().parse::<u64>().map_err(|_| bad());
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..=") {
        (num(a)?..=num(b)?).collect()
    } else if let Some((a, b)) = s.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else {
        s.split(',').map(num).collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(seeds)
}

struct Context {
    config: ConfigFile,
    pipeline: PipelineConfig,
}

impl Context {
    fn load(cli: &Cli) -> Result<Self> {
        let config: ConfigFile = match &cli.config {
            Some(p) => read_json(p)?,
            None => ConfigFile::default(),
        };
        let mut pipeline = match (&cli.geometry, &config.pipeline) {
            (Some(p), _) => read_json(p)?,
            (None, Some(c)) => c.clone(),
            (None, None) => desk_config(),
        };
        match cli.precision {
            Some(PrecisionArg::Single) => pipeline.precision = Precision::Single,
            Some(PrecisionArg::Double) => pipeline.precision = Precision::Double,
            None => {}
        }
        pipeline.validate()?;
        Ok(Context { config, pipeline })
    }
}

fn gen_data<T: Real>(ctx: &Context, seeds: &str, out: &Path) -> Result<()> {
    let m = generate_dataset::<T>(&ctx.pipeline, &parse_seeds(seeds)?, out)?;
    println!("wrote {} samples and {}", m.samples.len(), out.join("manifest.json").display());
    Ok(())
}

fn project<T: Real>(ctx: &Context, volume: &Path, out: &Path) -> Result<()> {
    let (vol, _) = read_volume::<T>(volume)?;
    let cfg = &ctx.pipeline;
    if vol.grid != cfg.volume {
        return Err(Error::InvalidGrid("volume grid differs from the configured one".into()));
    }
    let p = conebeam_forward(&vol, &cfg.geometry, &cfg.detector)?;
    write_projections(out, &p, Some(&cfg.hash()))
}

fn train_config(ctx: &Context, a: &TrainArgs) -> Result<TrainConfig> {
    let mut tc = ctx.config.train.clone().unwrap_or_default();
    let set = |slot: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut tc.learning_rate, a.lr);
    set(&mut tc.peak_factor, a.peak_factor);
    set(&mut tc.div_factor, a.div_factor);
    set(&mut tc.final_div_factor, a.final_div_factor);
    set(&mut tc.warmup_fraction, a.warmup_fraction);
    set(&mut tc.smoothing_sigma, a.sigma);
    set(&mut tc.train_fraction, a.train_fraction);
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    if let Some(s) = a.seed {
        tc.seed = s;
    }
    if a.per_view {
        tc.per_view = true;
    }
    if a.manifest.is_some() {
        tc.dataset = a.manifest.clone();
    }
    tc.validate()?;
    Ok(tc)
}

fn train<T: Real>(ctx: &Context, a: &TrainArgs) -> Result<()> {
    let tc = train_config(ctx, a)?;
    let manifest = tc
        .dataset
        .clone()
        .ok_or_else(|| Error::InvalidArgument("train needs --manifest or a dataset in the config".into()))?;
    let out = TrainArtifacts::in_dir(&a.out_dir);
    let outcome = train_from_manifest::<T>(&manifest, &tc, &out)?;
    let last = outcome.history.last().expect("history has the initial row");
    println!(
        "epochs={} train_mse={:e} val_mse={} learned={} smoothed={} history={}",
        tc.epochs,
        last.train_mse,
        last.val_mse.map_or("none".into(), |v| format!("{v:e}")),
        out.learned.display(),
        out.smoothed.display(),
        out.history.display()
    );
    Ok(())
}

fn reconstruct<T: Real>(ctx: &Context, projections: &Path, weights: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = &ctx.pipeline;
    let hash = cfg.hash();
    let (p, _) = read_projections::<T>(projections, Some(&hash))?;
    let pipe = Pipeline::<T>::new(cfg)?;
    let w = match weights {
        Some(path) => {
            let (w, side) = read_weights::<T>(path, Some(&hash))?;
            if side.line_grid.as_ref().is_some_and(|g| *g != cfg.line_grid) {
                return Err(Error::InvalidGrid("weight map is on a different line grid".into()));
            }
            w
        }
        None => pipe.analytic_weights()?,
    };
    let r = pipe.reconstruct(&p, &w)?;
    write_volume(out, &r.x, Some(&hash))
}

fn fdk<T: Real>(ctx: &Context, projections: &Path, out: &Path) -> Result<()> {
    let cfg = &ctx.pipeline;
    let hash = cfg.hash();
    let (p, _) = read_projections::<T>(projections, Some(&hash))?;
    let v = fdk_reconstruct(&p, &cfg.geometry, &cfg.volume)?;
    write_volume(out, &v, Some(&hash))
}

fn compare(volume: &Path, reference: &Path, mask_radius: Option<f64>, csv: Option<&Path>) -> Result<()> {
    let (a, _) = read_volume::<f64>(volume)?;
    let (b, _) = read_volume::<f64>(reference)?;
    if a.grid != b.grid {
        return Err(Error::InvalidGrid("volumes are on different grids".into()));
    }
    let err = mse(&a.data, &b.data)?;
    let db = psnr(&a.data, &b.data)?;
    let rmse = mask_radius.map(|r| masked_rmse(&a, &b, &ball_mask(&a.grid, r))).transpose()?;
    let rmse_text = rmse.map_or(String::new(), |v| format!("{v:e}"));
    println!("mse={err:e} psnr_db={db:.4} masked_rmse={}", if rmse_text.is_empty() { "none" } else { &rmse_text });
    if let Some(path) = csv {
        let row = vec![volume.display().to_string(), reference.display().to_string(), format!("{err:e}"), format!("{db:.6}"), rmse_text];
        write_csv(path, &["volume", "reference", "mse", "psnr_db", "masked_rmse"], &[row])?;
    }
    Ok(())
}

fn export(volume: &Path, axis: usize, index: Option<usize>, window: Option<(f64, f64)>, out: &Path) -> Result<()> {
    let (v, _) = read_volume::<f64>(volume)?;
    let len = *v.data.shape().get(axis).ok_or_else(|| Error::InvalidArgument(format!("axis must be 0, 1 or 2, got {axis}")))?;
    export_slice(&v, axis, index.unwrap_or(len / 2), out, window)
}

fn weights_analytic<T: Real>(ctx: &Context, out: &Path) -> Result<()> {
    let cfg = &ctx.pipeline;
    let w = Pipeline::<T>::new(cfg)?.analytic_weights()?;
    write_weights(out, &w, &cfg.line_grid, Some(&cfg.hash()))
}

fn dispatch<T: Real>(cli: &Cli, ctx: &Context) -> Result<()> {
    match &cli.command {
        Command::GenData { seeds, out } => gen_data::<T>(ctx, seeds, out),
        Command::Project { volume, out } => project::<T>(ctx, volume, out),
        Command::Train(a) => train::<T>(ctx, a),
        Command::Reconstruct { projections, weights, out } => reconstruct::<T>(ctx, projections, weights.as_deref(), out),
        Command::Fdk { projections, out } => fdk::<T>(ctx, projections, out),
        Command::Compare { .. } | Command::ExportSlice { .. } => unreachable!("handled without a pipeline"),
        Command::WeightsAnalytic { out } => weights_analytic::<T>(ctx, out),
    }
}

fn run(cli: &Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    match &cli.command {
        Command::Compare { volume, reference, mask_radius, csv } => compare(volume, reference, *mask_radius, csv.as_deref()),
        Command::ExportSlice { volume, axis, index, window, out } => export(volume, *axis, *index, *window, out),
        _ => {
            let ctx = Context::load(cli)?;
            match ctx.pipeline.precision {
                Precision::Single => dispatch::<f32>(cli, &ctx),
                Precision::Double => dispatch::<f64>(cli, &ctx),
            }
        }
    }
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = write!(std::io::stdout(), "{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("error: kind=usage msg={}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: kind={} msg={}", e.kind(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_syntax() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("2..=4").unwrap(), vec![2, 3, 4]);
        assert_eq!(parse_seeds("7, 1,7").unwrap(), vec![7, 1, 7]);
        assert!(matches!(parse_seeds("4..4"), Err(Error::EmptyDataset)));
        assert!(parse_seeds("a..3").is_err());
        assert!(parse_seeds("").is_err());
    }

    #[test]
    fn window_syntax() {
        assert_eq!(parse_window("0, 1.5").unwrap(), (0.0, 1.5));
        assert!(parse_window("1").is_err());
    }
}
