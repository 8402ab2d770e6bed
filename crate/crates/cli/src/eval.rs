use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use lidar_codec::io::{list_clouds, read_cloud, write_kitti_bin};
use lidar_codec::pipeline::default_ladder;
use lidar_codec::surface::{fitted_range_errors, FitConfig, FitErrorStats, ModelKind};
use lidar_codec::synth::synth_dataset;
use lidar_codec::{project, Codec, CompressionLevel, Point3, QualityReport};

use crate::error::CliError;
use crate::{AblateArgs, BenchArgs, ModelChoice, SynthArgs};

/// Clouds of a file or directory in name order. Unreadable frames are
/// logged and skipped.
pub fn load_frames(path: &Path, limit: Option<usize>) -> Result<Vec<Vec<Point3>>, CliError> {
    let paths = if path.is_dir() {
        list_clouds(path)?
    } else {
        vec![path.to_path_buf()]
    };
    let mut frames = Vec::new();
    for p in paths.iter().take(limit.unwrap_or(usize::MAX)) {
        match read_cloud(p) {
            Ok(c) => frames.push(c),
            Err(e) if paths.len() == 1 => return Err(e.into()),
            Err(e) => log::warn!("skipping {}: {e}", p.display()),
        }
    }
    if frames.is_empty() {
        return Err(CliError::Usage(format!("{}: no readable frames", path.display())));
    }
    Ok(frames)
}

fn csv_out(output: &Option<PathBuf>) -> Result<csv::Writer<Box<dyn Write>>, CliError> {
    let sink: Box<dyn Write> = match output {
        Some(p) => Box::new(File::create(p).map_err(|e| CliError::io(p, e))?),
        None => Box::new(io::stdout()),
    };
    Ok(csv::Writer::from_writer(sink))
}

pub fn bench(args: &BenchArgs) -> Result<(), CliError> {
    let frames = load_frames(&args.dataset, args.frames)?;
    let configs: Vec<CompressionLevel> = if args.sweep {
        [0.0, 0.1, 0.4, 1.0]
            .iter()
            .map(|&q| CompressionLevel::custom(0.5, 0.5, 0.3, q))
            .collect()
    } else if args.params.is_empty() {
        default_ladder()
    } else {
        args.params.clone()
    };
    let codec = Codec::default();
    let mut out = csv_out(&args.output)?;
    out.write_record([
        "params",
        "frames",
        "compression_ratio",
        "mae_cm",
        "fitted_mae_cm",
        "unfit_mae_cm",
        "encode_ms",
        "decode_ms",
    ])?;
    for level in &configs {
        let (mut reports, mut enc_ms, mut dec_ms) = (Vec::new(), 0.0, 0.0);
        for (k, cloud) in frames.iter().enumerate() {
            let result = (|| -> Result<_, CliError> {
                let enc = codec.encode(cloud, level)?;
                let bytes = enc.frame.to_bytes();
                let started = Instant::now();
                let rec = codec.reconstruct(&bytes)?;
                let _points = rec.points();
                let dec = started.elapsed().as_secs_f64() * 1e3;
                let q = QualityReport::evaluate(&enc.image, &rec.image, &rec.fitted_mask, cloud.len(), bytes.len())?;
                Ok((q, enc.report.encode_time_ms, dec))
            })();
            match result {
                Ok((q, e, d)) => {
                    reports.push(q);
                    enc_ms += e;
                    dec_ms += d;
                }
                Err(e) => log::warn!("frame {k} at {level}: {e}"),
            }
        }
        let mean = QualityReport::mean(&reports);
        let n = reports.len().max(1) as f64;
        out.write_record([
            level.to_string(),
            reports.len().to_string(),
            format!("{:.4}", mean.compression_ratio),
            format!("{:.4}", mean.overall_mae),
            format!("{:.4}", mean.fitted_mae),
            format!("{:.4}", mean.unfit_mae),
            format!("{:.3}", enc_ms / n),
            format!("{:.3}", dec_ms / n),
        ])?;
        out.flush()?;
    }
    Ok(())
}

pub fn ablate(args: &AblateArgs) -> Result<(), CliError> {
    if args.thresholds.is_empty() {
        return Err(CliError::Usage("no thresholds given".into()));
    }
    let fits = args
        .thresholds
        .iter()
        .map(|&t| FitConfig::with_delta_r(t).map_err(|e| CliError::Usage(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let projection = Codec::default()
        .config
        .projection(&CompressionLevel::custom(args.resolution, args.resolution, 0.3, 0.0))?;
    let images: Vec<_> = load_frames(&args.dataset, args.frames)?
        .iter()
        .map(|c| project(c, &projection).0)
        .collect();
    let models: &[(ModelKind, &str)] = match args.model {
        ModelChoice::Plane => &[(ModelKind::Plane, "plane")],
        ModelChoice::Surface => &[(ModelKind::Surface, "surface")],
        ModelChoice::Both => &[(ModelKind::Plane, "plane"), (ModelKind::Surface, "surface")],
    };
    let mut out = csv_out(&args.output)?;
    let mut header = vec!["model".to_string()];
    header.extend(args.thresholds.iter().map(|t| format!("{t}m")));
    out.write_record(&header)?;
    for &(kind, name) in models {
        let mut row = vec![name.to_string()];
        for (fit, t) in fits.iter().zip(&args.thresholds) {
            let mut stats = FitErrorStats::default();
            for img in &images {
                stats.merge(&fitted_range_errors(img, fit, kind));
            }
            log::info!(
                "{name} Δr={t}: {} of {} points fitted",
                stats.fitted_points,
                stats.occupied_points
            );
            row.push(format!("{:.4}", stats.mae_cm()));
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    fs::create_dir_all(&args.output).map_err(|e| CliError::io(&args.output, e))?;
    for (k, cloud) in synth_dataset(args.seed, args.frames).iter().enumerate() {
        write_kitti_bin(&args.output.join(format!("{k:06}.bin")), cloud)?;
    }
    println!("{}: {} frames", args.output.display(), args.frames);
    Ok(())
}
