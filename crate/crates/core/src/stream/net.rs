//! Real byte-stream transport: a paced producer and a writer thread sharing
//! the sender queue, and a resynchronizing receiver.

use std::io::{self, Read, Write};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use crate::abr::{AbrController, ControllerConfig, FrameRecord, SessionLog};
use crate::bitstream::{ContainerReader, FrameHeader};
use crate::pipeline::{Codec, CodecError};
use crate::range_image::Point3;

use super::{FrameSource, QueueStats, QueuedFrame, SenderQueue, StreamError};

/// Microseconds since the UNIX epoch.
pub fn unix_micros() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_micros() as u64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetSendConfig {
    pub fps: f64,
    pub frames: u64,
    pub fixed_level: usize,
    pub controller: Option<ControllerConfig>,
    pub queue_cap: Option<usize>,
}

impl Default for NetSendConfig {
    fn default() -> Self {
        Self {
            fps: 10.0,
            frames: 100,
            fixed_level: 0,
            controller: Some(ControllerConfig::default()),
            queue_cap: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SendReport {
    /// Timestamps are UNIX seconds at enqueue.
    pub log: SessionLog,
    /// Enqueue time of each frame in UNIX microseconds.
    pub enqueue_us: Vec<u64>,
    pub queue: QueueStats,
    /// True when the peer went away before every frame was written.
    pub link_closed: bool,
}

struct Shared {
    queue: Mutex<(SenderQueue, bool)>,
    ready: Condvar,
}

/// Produces `config.frames` frames at `config.fps` and writes them to `out`
/// as length-prefixed frames from a separate thread. A write failure ends
/// the session early with the frames logged so far.
pub fn send_stream<S, W>(mut source: S, out: W, config: &NetSendConfig) -> Result<SendReport, StreamError>
where
    S: FrameSource,
    W: Write + Send + 'static,
{
    if !(config.fps > 0.0) {
        return Err(StreamError::Config("fps must be positive".into()));
    }
    let ladder = source.ladder_size();
    if config.fixed_level >= ladder {
        return Err(StreamError::Config(format!("level {} outside ladder", config.fixed_level)));
    }
    let mut controller = config
        .controller
        .map(|c| AbrController::new(c, ladder, config.fixed_level))
        .transpose()?;

    let shared = Arc::new(Shared {
        queue: Mutex::new((SenderQueue::new(config.queue_cap), false)),
        ready: Condvar::new(),
    });
    let writer = {
        let shared = shared.clone();
        thread::spawn(move || writer_loop(&shared, out))
    };

    let period = Duration::from_secs_f64(1.0 / config.fps);
    let start = Instant::now();
    let mut log = SessionLog::new();
    let mut enqueue_us = Vec::new();
    let mut level = config.fixed_level;
    let mut link_closed = false;
    let mut failure = None;
    for index in 0..config.frames {
        let due = start + period.mul_f64(index as f64);
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            thread::sleep(wait);
        }
        let data = match source.frame(index, level) {
            Ok(d) => d,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        let now_us = unix_micros();
        let frame = QueuedFrame {
            index,
            level,
            data,
            enqueued_at: now_us as f64 * 1e-6,
        };
        let k = {
            let mut guard = shared.queue.lock().unwrap();
            if guard.1 {
                link_closed = true;
                break;
            }
            let k = guard.0.len();
            log.push(FrameRecord {
                frame: index,
                level,
                queue: k,
                bytes: frame.wire_len(),
                timestamp: frame.enqueued_at,
            });
            guard.0.push(frame);
            k
        };
        enqueue_us.push(now_us);
        shared.ready.notify_one();
        if let Some(c) = controller.as_mut() {
            level = c.observe(k);
        }
    }

    {
        let mut guard = shared.queue.lock().unwrap();
        guard.1 = true;
    }
    shared.ready.notify_one();
    let write_result = writer.join().map_err(|_| io::Error::other("writer thread panicked"))?;
    if let Some(e) = failure {
        return Err(e);
    }
    let queue = shared.queue.lock().unwrap().0.stats();
    Ok(SendReport {
        log,
        enqueue_us,
        queue,
        link_closed: link_closed || write_result.is_err(),
    })
}

/// Writes frames until the producer is done and the queue is empty, or the
/// peer fails. The bool in the mutex is set by the producer when it stops
/// and by the writer when the link breaks.
fn writer_loop<W: Write>(shared: &Shared, mut out: W) -> io::Result<()> {
    loop {
        let frame = {
            let mut guard = shared.queue.lock().unwrap();
            loop {
                if let Some(f) = guard.0.pop() {
                    break Some(f);
                }
                if guard.1 {
                    break None;
                }
                guard = shared.ready.wait(guard).unwrap();
            }
        };
        let Some(frame) = frame else {
            return out.flush();
        };
        let result = out
            .write_all(&(frame.data.len() as u32).to_le_bytes())
            .and_then(|_| out.write_all(&frame.data))
            .and_then(|_| out.flush());
        if let Err(e) = result {
            log::warn!("link closed: {e}");
            shared.queue.lock().unwrap().1 = true;
            return Err(e);
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReceivedFrame {
    /// Position among successfully decoded frames.
    pub ordinal: u64,
    pub header: FrameHeader,
    pub points: Vec<Point3>,
    pub decoded_us: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReceiverReport {
    pub frames: u64,
    pub corrupt: u64,
    pub skipped_bytes: u64,
    /// Decode-complete time of each good frame in UNIX microseconds.
    pub decoded_us: Vec<u64>,
}

/// Reads length-prefixed frames until end of stream, decoding each and
/// handing it to `on_frame`. Frames that fail to decode are counted and
/// skipped; scanning resumes at the next plausible frame boundary.
pub fn receive_stream<R: Read>(
    input: R,
    codec: &Codec,
    mut on_frame: impl FnMut(ReceivedFrame),
) -> io::Result<ReceiverReport> {
    let mut reader = ContainerReader::new(input);
    let mut report = ReceiverReport::default();
    while let Some(result) = reader.next_frame(|bytes| -> Result<_, CodecError> {
        let rec = codec.reconstruct(bytes)?;
        Ok((rec.header, rec.points()))
    })? {
        match result {
            Ok((header, points)) => {
                let decoded_us = unix_micros();
                report.decoded_us.push(decoded_us);
                on_frame(ReceivedFrame {
                    ordinal: report.frames,
                    header,
                    points,
                    decoded_us,
                });
                report.frames += 1;
            }
            Err(e) => {
                log::warn!("dropping corrupt frame: {e}");
                report.corrupt += 1;
            }
        }
    }
    report.skipped_bytes = reader.skipped_bytes();
    Ok(report)
}

/// Enqueue-to-decode latency per frame, joined by arrival order (the link
/// is reliable and FIFO).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LatencyLog {
    pub rows: Vec<(u64, u64, u64)>,
}

impl LatencyLog {
    pub fn join(enqueue_us: &[u64], decoded_us: &[u64]) -> Self {
        Self {
            rows: enqueue_us
                .iter()
                .zip(decoded_us)
                .enumerate()
                .map(|(k, (&e, &d))| (k as u64, e, d))
                .collect(),
        }
    }

    pub fn latencies_ms(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|&(_, e, d)| d.saturating_sub(e) as f64 / 1000.0)
            .collect()
    }

    /// Nearest-rank percentile, `p` in `[0, 100]`.
    pub fn percentile_ms(&self, p: f64) -> Option<f64> {
        let mut v = self.latencies_ms();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
        Some(v[rank.min(v.len()) - 1])
    }

    /// CSV with header `frame,enqueue_us,decoded_us,latency_ms`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), StreamError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["frame", "enqueue_us", "decoded_us", "latency_ms"])?;
        for &(f, e, d) in &self.rows {
            let ms = d.saturating_sub(e) as f64 / 1000.0;
            w.write_record([f.to_string(), e.to_string(), d.to_string(), format!("{ms:.3}")])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the `frame,time_us` enqueue or decode log written by the CLI.
    pub fn read_times<R: Read>(input: R) -> Result<Vec<u64>, StreamError> {
        let mut r = csv::Reader::from_reader(input);
        let mut out = Vec::new();
        for row in r.deserialize::<(u64, u64)>() {
            out.push(row?.1);
        }
        Ok(out)
    }
}
