use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lidar_codec::io::{read_cloud, read_xyz, write_kitti_bin, write_xyz};
use lidar_codec::synth::synth_dataset;
use lidar_codec::{Codec, CompressionLevel, Point3};

fn lidarc(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lidarc"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("run lidarc")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_frames(dir: &Path, n: usize) {
    fs::create_dir_all(dir).unwrap();
    for (k, cloud) in synth_dataset(3, n).iter().enumerate() {
        write_kitti_bin(&dir.join(format!("{k:06}.bin")), cloud).unwrap();
    }
}

#[test]
fn decode_of_encode_matches_the_library() {
    let tmp = tempfile::tempdir().unwrap();
    write_frames(&tmp.path().join("ds"), 1);
    let o = lidarc(&["encode", "ds/000000.bin", "--params", "0.5,0.5,0.3,0.2", "-o", "f.rcpcc", "--verify"], tmp.path());
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("fitted MAE"));
    let o = lidarc(&["decode", "f.rcpcc", "-o", "out.xyz"], tmp.path());
    assert!(o.status.success(), "{o:?}");

    let cloud = read_cloud(&tmp.path().join("ds/000000.bin")).unwrap();
    let codec = Codec::default();
    let (frame, _) = codec.compress(&cloud, &CompressionLevel::custom(0.5, 0.5, 0.3, 0.2)).unwrap();
    let expected = codec.decompress(&frame).unwrap();
    assert_eq!(read_xyz(&tmp.path().join("out.xyz")).unwrap(), expected);
}

#[test]
fn empty_cloud_gives_a_valid_file_with_zero_ratio() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("empty.bin"), b"").unwrap();
    let o = lidarc(&["encode", "empty.bin", "-o", "e.rcpcc"], tmp.path());
    assert!(o.status.success());
    assert!(stdout(&o).contains("CR 0.00"));
    let o = lidarc(&["decode", "e.rcpcc", "-o", "e.xyz"], tmp.path());
    assert!(o.status.success());
    assert!(read_xyz(&tmp.path().join("e.xyz")).unwrap().is_empty());
}

#[test]
fn directory_input_writes_one_file_per_frame_and_a_mean_row() {
    let tmp = tempfile::tempdir().unwrap();
    write_frames(&tmp.path().join("ds"), 2);
    let o = lidarc(&["encode", "ds", "--level", "4", "-o", "enc", "--verify"], tmp.path());
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("mean,"));
    assert!(tmp.path().join("enc/000000.rcpcc").is_file());
    assert!(tmp.path().join("enc/000001.rcpcc").is_file());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    write_frames(&tmp.path().join("ds"), 1);
    assert_eq!(lidarc(&["frobnicate"], tmp.path()).status.code(), Some(1));
    assert_eq!(lidarc(&["encode", "ds/000000.bin", "--params", "0.5,0.5"], tmp.path()).status.code(), Some(1));
    assert_eq!(lidarc(&["encode", "ds/000000.bin", "--level", "6"], tmp.path()).status.code(), Some(1));
    assert_eq!(lidarc(&["encode", "missing.bin"], tmp.path()).status.code(), Some(2));
    assert_eq!(lidarc(&["decode", "missing.rcpcc"], tmp.path()).status.code(), Some(2));

    fs::write(tmp.path().join("odd.bin"), [0u8; 17]).unwrap();
    assert_eq!(lidarc(&["encode", "odd.bin"], tmp.path()).status.code(), Some(3));
    assert!(lidarc(&["encode", "ds/000000.bin", "-o", "f.rcpcc"], tmp.path()).status.success());
    let bytes = fs::read(tmp.path().join("f.rcpcc")).unwrap();
    fs::write(tmp.path().join("cut.rcpcc"), &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(lidarc(&["decode", "cut.rcpcc"], tmp.path()).status.code(), Some(3));
    let mut flipped = bytes.clone();
    flipped[4 + 50] ^= 0xff;
    fs::write(tmp.path().join("flip.rcpcc"), flipped).unwrap();
    assert_eq!(lidarc(&["decode", "flip.rcpcc"], tmp.path()).status.code(), Some(3));
}

#[test]
fn bench_sweep_rows_are_monotone() {
    let tmp = tempfile::tempdir().unwrap();
    write_frames(&tmp.path().join("ds"), 1);
    let o = lidarc(&["bench", "ds", "--sweep", "-o", "bench.csv"], tmp.path());
    assert!(o.status.success(), "{o:?}");
    let mut r = csv::Reader::from_path(tmp.path().join("bench.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    let cr: Vec<f64> = rows.iter().map(|row| row[2].parse().unwrap()).collect();
    assert!(cr.windows(2).all(|w| w[1] > w[0]), "{cr:?}");
}

/// Points at the pixel centers of a wall `x = 8`, or of a surface whose
/// inverse range is linear in the pixel indices.
fn pixel_center_cloud(planar: bool) -> Vec<Point3> {
    let projection = Codec::default()
        .config
        .projection(&CompressionLevel::custom(0.5, 0.5, 0.3, 0.0))
        .unwrap();
    let mut cloud = Vec::new();
    for j in 4..48 {
        for i in 304..416 {
            let ray = projection.ray(i, j);
            let r = if planar {
                8.0 / ray[0]
            } else {
                1.0 / (0.1 + 1e-4 * i as f64 - 2e-4 * j as f64)
            };
            cloud.push(Point3::new(r * ray[0], r * ray[1], r * ray[2]));
        }
    }
    cloud
}

fn ablate_row(dir: &Path, dataset: &str, model: &str) -> f64 {
    let o = lidarc(&["ablate", dataset, "--model", model, "--thresholds", "0.1"], dir);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "model,0.1m");
    assert_eq!(lines.len(), 2);
    lines[1].split(',').nth(1).unwrap().parse().unwrap()
}

#[test]
fn ablation_is_exact_where_each_model_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir_all(tmp.path().join("wall")).unwrap();
    fs::create_dir_all(tmp.path().join("inverse")).unwrap();
    write_xyz(&tmp.path().join("wall/0.xyz"), &pixel_center_cloud(true)).unwrap();
    write_xyz(&tmp.path().join("inverse/0.xyz"), &pixel_center_cloud(false)).unwrap();

    assert!(ablate_row(tmp.path(), "wall", "plane") < 1e-3);
    assert!(ablate_row(tmp.path(), "inverse", "surface") < 1e-3);
    // A Euclidean plane is not linear in inverse range, so a merged run drifts
    // along the row, but never past Δr.
    let drift = ablate_row(tmp.path(), "wall", "surface");
    assert!(drift > 1e-3 && drift < 10.0, "{drift}");

    let o = lidarc(&["ablate", "wall"], tmp.path());
    let text = stdout(&o);
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "model,0.1m,0.3m,0.5m");
    assert_eq!(lines.len(), 3);
}

#[test]
fn simulate_flat_trace_scores_equal() {
    let tmp = tempfile::tempdir().unwrap();
    write_frames(&tmp.path().join("ds"), 2);
    fs::write(tmp.path().join("flat.csv"), "time_s,rate_bytes_per_s\n0,10000000\n").unwrap();
    let o = lidarc(
        &["simulate", "--trace", "flat.csv", "--dataset", "ds", "--duration", "30", "-o", "sim"],
        tmp.path(),
    );
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    let qoe: Vec<&str> = text.lines().skip(1).map(|l| l.split_whitespace().last().unwrap()).collect();
    assert_eq!(qoe.len(), 2);
    assert_eq!(qoe[0], qoe[1]);
    assert_eq!(
        fs::read(tmp.path().join("sim/session_strategy.csv")).unwrap(),
        fs::read(tmp.path().join("sim/session_fixed.csv")).unwrap()
    );

    fs::write(tmp.path().join("bad.csv"), "time_s,rate_bytes_per_s\n5,abc\n").unwrap();
    let o = lidarc(&["simulate", "--trace", "bad.csv", "--dataset", "ds"], tmp.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn stream_send_and_receive() {
    let tmp = tempfile::tempdir().unwrap();
    write_frames(&tmp.path().join("ds"), 2);
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let recv = Command::new(env!("CARGO_BIN_EXE_lidarc"))
        .args(["stream-recv", "--listen", &addr, "-o", "rx", "--decode-log", "dec.csv"])
        .current_dir(tmp.path())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut sent = None;
    for _ in 0..100 {
        let o = lidarc(
            &["stream-send", "--connect", &addr, "--dataset", "ds", "--frames", "6", "--fps", "20", "--enqueue-log", "enq.csv"],
            tmp.path(),
        );
        if o.status.success() {
            sent = Some(o);
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    assert!(sent.is_some(), "sender never connected");
    let out = recv.wait_with_output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("received 6 frames, 0 corrupt"));
    assert_eq!(fs::read_dir(tmp.path().join("rx")).unwrap().count(), 6);

    let o = lidarc(&["latency", "--enqueue", "enq.csv", "--decode", "dec.csv", "-o", "lat.csv"], tmp.path());
    assert!(o.status.success(), "{o:?}");
    let rows = fs::read_to_string(tmp.path().join("lat.csv")).unwrap();
    assert_eq!(rows.lines().count(), 7);
}
