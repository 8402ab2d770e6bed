use std::fs::{self, File};
use std::io::{self, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;

use lidar_codec::abr::{evaluate_qoe, ControllerConfig, QoEParams, SessionLog};
use lidar_codec::io::write_cloud;
use lidar_codec::pipeline::default_ladder;
use lidar_codec::stream::{
    receive_stream, run_session, send_stream, simulate as simulate_sessions, BandwidthTrace, DatasetSource,
    LatencyLog, NetSendConfig, SenderConfig, SessionRun, SimConfig,
};
use lidar_codec::synth::synth_dataset;
use lidar_codec::Codec;

use crate::codec::extension;
use crate::error::CliError;
use crate::eval::load_frames;
use crate::{LatencyArgs, SimulateArgs, StreamRecvArgs, StreamSendArgs};

fn create(path: &Path) -> Result<File, CliError> {
    File::create(path).map_err(|e| CliError::io(path, e))
}

fn write_times(path: &Path, times: impl IntoIterator<Item = (u64, u64)>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["frame", "time_us"])?;
    for (frame, t) in times {
        w.write_record([frame.to_string(), t.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn send(args: &StreamSendArgs) -> Result<(), CliError> {
    let clouds = load_frames(&args.dataset, None)?;
    let frames = args.frames.unwrap_or(clouds.len() as u64);
    let source = DatasetSource::new(clouds, default_ladder(), Codec::default())?;
    let conn = TcpStream::connect(args.connect).map_err(|e| CliError::Io(format!("{}: {e}", args.connect)))?;
    conn.set_nodelay(true)?;
    let config = NetSendConfig {
        fps: args.fps,
        frames,
        fixed_level: args.level,
        controller: (!args.no_strategy).then(ControllerConfig::default),
        queue_cap: None,
    };
    let report = send_stream(source, conn, &config)?;
    if let Some(path) = &args.session_log {
        report.log.write_csv(create(path)?)?;
    }
    if let Some(path) = &args.enqueue_log {
        write_times(path, report.log.records.iter().map(|r| r.frame).zip(report.enqueue_us.iter().copied()))?;
    }
    println!(
        "sent {} frames, {} bytes, mean queue {:.2}, max queue {}{}",
        report.log.len(),
        report.queue.transmitted_bytes,
        report.log.mean_queue(),
        report.log.max_queue(),
        if report.link_closed { ", link closed early" } else { "" }
    );
    Ok(())
}

pub fn recv(args: &StreamRecvArgs) -> Result<(), CliError> {
    let listener = TcpListener::bind(args.listen).map_err(|e| CliError::Io(format!("{}: {e}", args.listen)))?;
    eprintln!("listening on {}", listener.local_addr()?);
    let (conn, peer) = listener.accept()?;
    log::info!("connection from {peer}");
    if let Some(dir) = &args.output {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let codec = Codec::default();
    let mut write_error = None;
    let report = receive_stream(conn, &codec, |frame| {
        if let (Some(dir), None) = (&args.output, &write_error) {
            let path = dir.join(format!("frame_{:06}.{}", frame.ordinal, extension(args.format)));
            if let Err(e) = write_cloud(&path, &frame.points) {
                write_error = Some(e);
            }
        }
    })?;
    if let Some(e) = write_error {
        return Err(e.into());
    }
    if let Some(path) = &args.decode_log {
        write_times(path, report.decoded_us.iter().enumerate().map(|(k, &t)| (k as u64, t)))?;
    }
    println!(
        "received {} frames, {} corrupt, {} bytes skipped",
        report.frames, report.corrupt, report.skipped_bytes
    );
    Ok(())
}

fn summary_line(mode: &str, run: &SessionRun, qoe: f64) {
    println!(
        "{mode:<12} {:>7} {:>8.2} {:>6} {:>14.1}",
        run.log.len(),
        run.log.mean_queue(),
        run.log.max_queue(),
        qoe
    );
}

fn score(log: &SessionLog, params: &QoEParams) -> Result<f64, CliError> {
    if log.is_empty() {
        Ok(0.0)
    } else {
        Ok(evaluate_qoe(log, params)?)
    }
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let trace = match &args.trace {
        Some(path) => BandwidthTrace::read_csv(File::open(path).map_err(|e| CliError::io(path, e))?)
            .map_err(|e| match e {
                lidar_codec::stream::StreamError::Io(e) => CliError::io(path, e),
                e => CliError::Corrupt(format!("{}: {e}", path.display())),
            })?,
        None => BandwidthTrace::drop_and_recover(),
    };
    let clouds = match (&args.dataset, args.synthetic) {
        (Some(dir), _) => load_frames(dir, None)?,
        (None, Some(n)) => synth_dataset(0, n),
        (None, None) => return Err(CliError::Usage("--dataset or --synthetic is required".into())),
    };
    let ladder = default_ladder();
    let qoe = QoEParams::linear(ladder.len(), args.mu);
    qoe.validate()?;
    let mut source = DatasetSource::new(clouds, ladder, Codec::default())?;
    let sender = SenderConfig {
        fps: args.fps,
        duration_s: args.duration,
        tick_s: args.tick,
        ..Default::default()
    };
    if let Some(dir) = &args.output {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    println!("{:<12} {:>7} {:>8} {:>6} {:>14}", "mode", "frames", "mean K", "max K", "QoE");
    if args.no_strategy {
        let run = run_session(
            &trace,
            &mut source,
            &SenderConfig {
                controller: None,
                ..sender
            },
        )?;
        summary_line("fixed", &run, score(&run.log, &qoe)?);
        if let Some(dir) = &args.output {
            run.log.write_csv(create(&dir.join("session_fixed.csv"))?)?;
        }
        return Ok(());
    }
    let report = simulate_sessions(&trace, &mut source, &SimConfig { sender, qoe })?;
    summary_line("strategy", &report.with_strategy, report.qoe_with);
    summary_line("fixed", &report.without_strategy, report.qoe_without);
    if let Some(dir) = &args.output {
        report
            .with_strategy
            .log
            .write_csv(create(&dir.join("session_strategy.csv"))?)?;
        report
            .without_strategy
            .log
            .write_csv(create(&dir.join("session_fixed.csv"))?)?;
    }
    Ok(())
}

pub fn latency(args: &LatencyArgs) -> Result<(), CliError> {
    let read = |path: &Path| -> Result<Vec<u64>, CliError> {
        let file = File::open(path).map_err(|e| CliError::io(path, e))?;
        LatencyLog::read_times(file).map_err(|e| CliError::Corrupt(format!("{}: {e}", path.display())))
    };
    let log = LatencyLog::join(&read(&args.enqueue)?, &read(&args.decode)?);
    match &args.output {
        Some(path) => log.write_csv(create(path)?)?,
        None => log.write_csv(io::stdout())?,
    }
    let stat = |p: f64| log.percentile_ms(p).map_or("n/a".to_string(), |v| format!("{v:.2} ms"));
    let mut err = io::stderr();
    writeln!(
        err,
        "{} frames, p50 {}, p95 {}, max {}",
        log.rows.len(),
        stat(50.0),
        stat(95.0),
        stat(100.0)
    )?;
    Ok(())
}
