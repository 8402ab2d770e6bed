use std::net::{TcpListener, TcpStream};
use std::thread;

use lidar_codec::abr::{Action, ControllerConfig};
use lidar_codec::bitstream::write_container;
use lidar_codec::pipeline::{default_ladder, Codec};
use lidar_codec::stream::{
    receive_stream, run_session, send_stream, BandwidthTrace, DatasetSource, FixedSizeSource, FrameSource,
    LatencyLog, NetSendConfig, SenderConfig,
};
use lidar_codec::synth::synth_dataset;
use lidar_codec::Point3;

fn source(frames: usize) -> DatasetSource {
    DatasetSource::new(synth_dataset(11, frames), default_ladder(), Codec::default()).unwrap()
}

/// Sends `config.frames` frames over a loopback socket and returns what the
/// receiver decoded along with the sender's report.
fn loopback(config: NetSendConfig) -> (lidar_codec::stream::SendReport, Vec<(u64, Vec<Point3>)>, Vec<u64>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let receiver = thread::spawn(move || {
        let (conn, _) = listener.accept().unwrap();
        let mut got = Vec::new();
        let report = receive_stream(conn, &Codec::default(), |f| got.push((f.ordinal, f.points))).unwrap();
        assert_eq!(report.corrupt, 0);
        (got, report.decoded_us)
    });
    let conn = TcpStream::connect(addr).unwrap();
    conn.set_nodelay(true).unwrap();
    let report = send_stream(source(3), conn, &config).unwrap();
    let (got, decoded_us) = receiver.join().unwrap();
    (report, got, decoded_us)
}

#[test]
fn loopback_delivers_what_was_encoded() {
    let config = NetSendConfig {
        fps: 50.0,
        frames: 9,
        fixed_level: 3,
        controller: None,
        queue_cap: None,
    };
    let (report, got, _) = loopback(config);
    assert!(!report.link_closed);
    assert_eq!(got.len(), 9);
    let codec = Codec::default();
    let mut reference = source(3);
    for (ordinal, points) in got {
        let bytes = reference.frame(ordinal, 3).unwrap();
        assert_eq!(points, codec.decompress_bytes(&bytes).unwrap());
    }
}

#[test]
fn loopback_latency_stays_low() {
    let config = NetSendConfig {
        fps: 10.0,
        frames: 40,
        ..Default::default()
    };
    let (report, got, decoded_us) = loopback(config);
    assert_eq!(got.len(), 40);
    let latency = LatencyLog::join(&report.enqueue_us, &decoded_us);
    let p95 = latency.percentile_ms(95.0).unwrap();
    assert!(p95 < 100.0, "p95 latency {p95} ms");
}

#[test]
fn corrupt_frame_and_garbage_cost_exactly_one_frame() {
    let codec = Codec::default();
    let mut src = source(2);
    let frames: Vec<Vec<u8>> = (0..5).map(|k| src.frame(k, 4).unwrap().to_vec()).collect();
    let mut stream = Vec::new();
    for (k, f) in frames.iter().enumerate() {
        let mut f = f.clone();
        if k == 2 {
            f[..4].copy_from_slice(b"XXXX");
        }
        write_container(&mut stream, [&f]).unwrap();
        if k == 3 {
            stream.extend((0..997u32).map(|v| (v.wrapping_mul(2_654_435_761) >> 13) as u8));
        }
    }
    let mut headers = Vec::new();
    let report = receive_stream(&stream[..], &codec, |f| headers.push(f.header)).unwrap();
    assert_eq!(report.frames, 4);
    assert!(report.skipped_bytes >= 997);
    let expected: Vec<_> = [0, 1, 3, 4]
        .iter()
        .map(|&k| codec.reconstruct(&frames[k]).unwrap().header)
        .collect();
    assert_eq!(headers, expected);
}

#[test]
fn failed_attempt_rolls_back_and_is_not_retried_soon() {
    // Level 1 fits the link, level 0 floods it; trend detection is disabled so
    // the overflow is caught by the probation rule.
    let controller = ControllerConfig {
        growth_slope: 1e6,
        ..Default::default()
    };
    let trace = BandwidthTrace::constant(100e3).unwrap();
    let mut src = FixedSizeSource::new(vec![60_000, 6_000, 3_000]);
    let config = SenderConfig {
        duration_s: 60.0,
        fixed_level: 1,
        controller: Some(controller),
        ..Default::default()
    };
    let run = run_session(&trace, &mut src, &config).unwrap();
    let rollbacks: Vec<usize> = run
        .actions
        .iter()
        .enumerate()
        .filter(|(_, a)| **a == Action::Rollback)
        .map(|(t, _)| t)
        .collect();
    let attempts: Vec<usize> = run
        .actions
        .iter()
        .enumerate()
        .filter(|(_, a)| **a == Action::Attempt)
        .map(|(t, _)| t)
        .collect();
    assert!(!rollbacks.is_empty());
    for &r in &rollbacks {
        let before = attempts.iter().rev().find(|&&a| a < r).unwrap();
        assert!(r - before <= controller.probation_window);
        assert_eq!(run.log.records[r + 1].level, 1);
        if let Some(next) = attempts.iter().find(|&&a| a > r) {
            assert!(next - r >= controller.failed_memory, "retried after {} frames", next - r);
        }
    }
}
