use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use lidar_codec::bitstream::{read_container, write_container};
use lidar_codec::io::{list_clouds, read_cloud, write_cloud};
use lidar_codec::pipeline::{default_ladder, EncodeReport};
use lidar_codec::{Codec, CompressionLevel, QualityReport};

use crate::error::CliError;
use crate::{CloudFormat, DecodeArgs, EncodeArgs, LevelArgs};

pub fn resolve_level(args: &LevelArgs) -> Result<CompressionLevel, CliError> {
    let ladder = default_ladder();
    match (args.level, args.params) {
        (_, Some(p)) => Ok(p),
        (Some(k), None) => ladder
            .get(k)
            .copied()
            .ok_or_else(|| CliError::Usage(format!("level {k} outside 0..{}", ladder.len()))),
        (None, None) => Ok(ladder[2]),
    }
}

pub fn extension(format: CloudFormat) -> &'static str {
    match format {
        CloudFormat::Bin => "bin",
        CloudFormat::Xyz => "xyz",
    }
}

fn write_frames(path: &Path, frames: &[Vec<u8>]) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_container(BufWriter::new(file), frames).map_err(|e| CliError::io(path, e))
}

fn encode_one(
    codec: &Codec,
    input: &Path,
    output: &Path,
    level: &CompressionLevel,
    verify: bool,
) -> Result<(EncodeReport, Option<QualityReport>), CliError> {
    let cloud = read_cloud(input)?;
    let enc = codec.encode(&cloud, level)?;
    let bytes = enc.frame.to_bytes();
    write_frames(output, std::slice::from_ref(&bytes))?;
    let quality = if verify {
        let rec = codec.reconstruct(&bytes)?;
        Some(QualityReport::evaluate(
            &enc.image,
            &rec.image,
            &rec.fitted_mask,
            cloud.len(),
            bytes.len(),
        )?)
    } else {
        None
    };
    Ok((enc.report, quality))
}

pub fn encode(args: &EncodeArgs) -> Result<(), CliError> {
    let level = resolve_level(&args.level)?;
    let codec = Codec::default();
    if !args.input.is_dir() {
        let output = args.output.clone().unwrap_or_else(|| args.input.with_extension("rcpcc"));
        let (report, quality) = encode_one(&codec, &args.input, &output, &level, args.verify)?;
        println!(
            "{} -> {}: {} bytes, CR {:.2}, {} surfaces, fitted {:.3}, {:.1} ms at {level}",
            args.input.display(),
            output.display(),
            report.compressed_bytes,
            report.compression_ratio,
            report.surface_count,
            report.fitted_fraction,
            report.encode_time_ms
        );
        if let Some(q) = quality {
            println!("{q}");
        }
        return Ok(());
    }

    let out_dir = args
        .output
        .clone()
        .ok_or_else(|| CliError::Usage("directory input needs -o <directory>".into()))?;
    fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
    let inputs = list_clouds(&args.input)?;
    if args.verify {
        println!("file,{}", QualityReport::CSV_HEADER);
    } else {
        println!("file,bytes,compression_ratio,fitted_fraction,encode_ms");
    }
    let (mut qualities, mut reports) = (Vec::new(), Vec::new());
    for input in &inputs {
        let name = input.file_stem().map(PathBuf::from).unwrap_or_default();
        let output = out_dir.join(name).with_extension("rcpcc");
        let (report, quality) = encode_one(&codec, input, &output, &level, args.verify)?;
        let file = input.file_name().unwrap_or_default().to_string_lossy();
        match quality {
            Some(q) => {
                println!("{file},{}", q.csv_row());
                qualities.push(q);
            }
            None => println!(
                "{file},{},{:.4},{:.4},{:.3}",
                report.compressed_bytes, report.compression_ratio, report.fitted_fraction, report.encode_time_ms
            ),
        }
        reports.push(report);
    }
    if args.verify {
        println!("mean,{}", QualityReport::mean(&qualities).csv_row());
    } else {
        let n = reports.len().max(1) as f64;
        let mean = |f: fn(&EncodeReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        println!(
            "mean,{:.1},{:.4},{:.4},{:.3}",
            mean(|r| r.compressed_bytes as f64),
            mean(|r| r.compression_ratio),
            mean(|r| r.fitted_fraction),
            mean(|r| r.encode_time_ms)
        );
    }
    Ok(())
}

pub fn decode(args: &DecodeArgs) -> Result<(), CliError> {
    let bytes = fs::read(&args.input).map_err(|e| CliError::io(&args.input, e))?;
    let frames = read_container(&bytes[..])?;
    if frames.is_empty() {
        return Err(CliError::Corrupt(format!("{}: no frames", args.input.display())));
    }
    let codec = Codec::default();
    let clouds = frames
        .iter()
        .map(|f| codec.decompress_bytes(f))
        .collect::<Result<Vec<_>, _>>()?;
    let single_file = clouds.len() == 1 && !args.output.as_ref().is_some_and(|o| o.is_dir());
    if single_file {
        let output = args
            .output
            .clone()
            .unwrap_or_else(|| args.input.with_extension(extension(args.format)));
        write_cloud(&output, &clouds[0])?;
        println!("{}: {} points", output.display(), clouds[0].len());
        return Ok(());
    }
    let dir = args.output.clone().unwrap_or_else(|| args.input.with_extension(""));
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    for (k, cloud) in clouds.iter().enumerate() {
        write_cloud(&dir.join(format!("frame_{k:06}.{}", extension(args.format))), cloud)?;
    }
    println!(
        "{}: {} frames, {} points",
        dir.display(),
        clouds.len(),
        clouds.iter().map(Vec::len).sum::<usize>()
    );
    Ok(())
}
