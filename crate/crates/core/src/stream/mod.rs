//! Frame transport: sender queue, bandwidth traces, frame sources, and the
//! simulated and TCP links the controller is closed around.

use std::collections::{HashMap, VecDeque};
use std::io::{Read, Write};
use std::sync::Arc;

use crate::abr::{AbrError, ControllerConfig};
use crate::pipeline::{validate_ladder, Codec, CodecError, CompressionLevel};
use crate::range_image::Point3;

pub mod net;
pub mod sim;

pub use net::{receive_stream, send_stream, LatencyLog, NetSendConfig, ReceivedFrame, ReceiverReport, SendReport};
pub use sim::{run_session, simulate, SessionRun, SimConfig, SimulationReport};

/// Wire overhead per frame: the `u32` length prefix.
pub const PREFIX_LEN: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum StreamError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Abr(#[from] AbrError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Piecewise-constant link rate.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthTrace {
    segments: Vec<(f64, f64)>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct TraceRow {
    time_s: f64,
    rate_bytes_per_s: f64,
}

impl BandwidthTrace {
    /// `(start time in s, rate in bytes/s)` pairs; the first must start at
    /// 0, times strictly increase and rates are positive.
    pub fn new(segments: Vec<(f64, f64)>) -> Result<Self, StreamError> {
        if segments.first().map(|s| s.0) != Some(0.0) {
            return Err(StreamError::Config("trace must start at t = 0".into()));
        }
        if segments.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(StreamError::Config("trace times must strictly increase".into()));
        }
        if segments.iter().any(|s| !(s.1 > 0.0) || !s.0.is_finite()) {
            return Err(StreamError::Config("trace rates must be positive".into()));
        }
        Ok(Self { segments })
    }

    pub fn constant(rate: f64) -> Result<Self, StreamError> {
        Self::new(vec![(0.0, rate)])
    }

    /// 300 KB/s, dropping to 100 KB/s at 55 s, then 130 KB/s at 120 s and
    /// 160 KB/s at 245 s.
    pub fn drop_and_recover() -> Self {
        Self::new(vec![(0.0, 300e3), (55.0, 100e3), (120.0, 130e3), (245.0, 160e3)]).unwrap()
    }

    pub fn segments(&self) -> &[(f64, f64)] {
        &self.segments
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        let k = self.segments.partition_point(|s| s.0 <= t);
        self.segments[k.saturating_sub(1)].1
    }

    /// `∫ rate dt` over `[t0, t1]`.
    pub fn bytes_between(&self, t0: f64, t1: f64) -> f64 {
        if t1 <= t0 {
            return 0.0;
        }
        let mut total = 0.0;
        for (k, &(start, rate)) in self.segments.iter().enumerate() {
            let end = self.segments.get(k + 1).map_or(f64::INFINITY, |s| s.0);
            let lo = start.max(t0);
            let hi = end.min(t1);
            if hi > lo {
                total += rate * (hi - lo);
            }
        }
        total
    }

    /// CSV with header `time_s,rate_bytes_per_s`.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, StreamError> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let rows = r.deserialize().collect::<Result<Vec<TraceRow>, _>>()?;
        Self::new(rows.into_iter().map(|row| (row.time_s, row.rate_bytes_per_s)).collect())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), StreamError> {
        let mut w = csv::Writer::from_writer(out);
        for &(time_s, rate_bytes_per_s) in &self.segments {
            w.serialize(TraceRow { time_s, rate_bytes_per_s })?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct QueuedFrame {
    pub index: u64,
    pub level: usize,
    pub data: Arc<[u8]>,
    /// Enqueue time in the clock of whoever runs the queue.
    pub enqueued_at: f64,
}

impl QueuedFrame {
    /// Bytes on the wire, length prefix included.
    pub fn wire_len(&self) -> usize {
        self.data.len() + PREFIX_LEN
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueueStats {
    pub enqueued_bytes: usize,
    pub transmitted_bytes: usize,
    pub dropped_bytes: usize,
    pub dropped_frames: usize,
}

/// FIFO of encoded frames awaiting transmission. With a cap, the oldest
/// frame not yet on the wire is dropped to make room.
#[derive(Debug, Clone, Default)]
pub struct SenderQueue {
    frames: VecDeque<QueuedFrame>,
    /// Bytes of the head frame already transmitted.
    head_sent: usize,
    pending_bytes: usize,
    cap: Option<usize>,
    stats: QueueStats,
}

impl SenderQueue {
    pub fn new(cap: Option<usize>) -> Self {
        Self {
            cap,
            ..Self::default()
        }
    }

    /// Queue length K in frames.
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Bytes still to transmit.
    pub fn pending_bytes(&self) -> usize {
        self.pending_bytes
    }

    pub fn stats(&self) -> QueueStats {
        self.stats
    }

    pub fn push(&mut self, frame: QueuedFrame) {
        self.stats.enqueued_bytes += frame.wire_len();
        self.pending_bytes += frame.wire_len();
        self.frames.push_back(frame);
        if let Some(cap) = self.cap {
            while self.frames.len() > cap.max(1) {
                let victim = usize::from(self.head_sent > 0);
                let Some(f) = self.frames.remove(victim) else { break };
                self.pending_bytes -= f.wire_len();
                self.stats.dropped_bytes += f.wire_len();
                self.stats.dropped_frames += 1;
            }
        }
    }

    /// Removes the head frame whole, for links that write frames atomically.
    pub fn pop(&mut self) -> Option<QueuedFrame> {
        let f = self.frames.pop_front()?;
        let rest = f.wire_len() - self.head_sent;
        self.pending_bytes -= rest;
        self.stats.transmitted_bytes += rest;
        self.head_sent = 0;
        Some(f)
    }

    /// Sends up to `budget` bytes from the head. Returns the bytes sent and
    /// the frames that finished.
    pub fn transmit(&mut self, mut budget: usize) -> (usize, Vec<QueuedFrame>) {
        let mut sent = 0;
        let mut done = Vec::new();
        while budget > 0 {
            let Some(head) = self.frames.front() else { break };
            let rest = head.wire_len() - self.head_sent;
            if rest <= budget {
                budget -= rest;
                sent += rest;
                self.head_sent = 0;
                done.push(self.frames.pop_front().unwrap());
            } else {
                self.head_sent += budget;
                sent += budget;
                budget = 0;
            }
        }
        self.pending_bytes -= sent;
        self.stats.transmitted_bytes += sent;
        (sent, done)
    }
}

/// Encoded frames by index and level.
pub trait FrameSource {
    fn ladder_size(&self) -> usize;
    fn frame(&mut self, index: u64, level: usize) -> Result<Arc<[u8]>, StreamError>;
}

/// Cycles through a list of clouds, encoding each (cloud, level) pair once.
pub struct DatasetSource {
    clouds: Vec<Vec<Point3>>,
    ladder: Vec<CompressionLevel>,
    codec: Codec,
    cache: HashMap<(usize, usize), Arc<[u8]>>,
}

impl DatasetSource {
    pub fn new(clouds: Vec<Vec<Point3>>, ladder: Vec<CompressionLevel>, codec: Codec) -> Result<Self, StreamError> {
        if clouds.is_empty() {
            return Err(StreamError::Config("dataset has no frames".into()));
        }
        validate_ladder(&ladder)?;
        Ok(Self {
            clouds,
            ladder,
            codec,
            cache: HashMap::new(),
        })
    }

    pub fn clouds(&self) -> &[Vec<Point3>] {
        &self.clouds
    }
}

impl FrameSource for DatasetSource {
    fn ladder_size(&self) -> usize {
        self.ladder.len()
    }

    fn frame(&mut self, index: u64, level: usize) -> Result<Arc<[u8]>, StreamError> {
        let k = (index % self.clouds.len() as u64) as usize;
        let lv = self
            .ladder
            .get(level)
            .ok_or_else(|| StreamError::Config(format!("level {level} outside ladder")))?;
        if let Some(data) = self.cache.get(&(k, level)) {
            return Ok(data.clone());
        }
        let (frame, _) = self.codec.compress(&self.clouds[k], lv)?;
        let data: Arc<[u8]> = frame.to_bytes().into();
        self.cache.insert((k, level), data.clone());
        Ok(data)
    }
}

/// Frames of fixed size per level, filled with zeros. For link tests.
#[derive(Debug, Clone)]
pub struct FixedSizeSource {
    sizes: Vec<usize>,
}

impl FixedSizeSource {
    pub fn new(sizes: Vec<usize>) -> Self {
        Self { sizes }
    }
}

impl FrameSource for FixedSizeSource {
    fn ladder_size(&self) -> usize {
        self.sizes.len()
    }

    fn frame(&mut self, _index: u64, level: usize) -> Result<Arc<[u8]>, StreamError> {
        let n = *self
            .sizes
            .get(level)
            .ok_or_else(|| StreamError::Config(format!("level {level} outside ladder")))?;
        Ok(vec![0u8; n].into())
    }
}

/// Where encoded frames go.
#[derive(Debug, Clone)]
pub enum LinkModel {
    Simulated(BandwidthTrace),
    Socket(std::net::SocketAddr),
}

/// Producer settings shared by both links.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SenderConfig {
    pub fps: f64,
    /// Simulated session length, or wall-clock length for sockets.
    pub duration_s: f64,
    /// Level used without a controller, and the controller's start level.
    pub fixed_level: usize,
    pub controller: Option<ControllerConfig>,
    pub queue_cap: Option<usize>,
    /// Simulation step.
    pub tick_s: f64,
}

impl Default for SenderConfig {
    fn default() -> Self {
        Self {
            fps: 10.0,
            duration_s: 300.0,
            fixed_level: 0,
            controller: Some(ControllerConfig::default()),
            queue_cap: None,
            tick_s: 0.01,
        }
    }
}

/// Runs the producer against either link and returns its session log.
pub fn sender_loop<S: FrameSource + Send + 'static>(
    source: S,
    link: &LinkModel,
    config: &SenderConfig,
) -> Result<crate::abr::SessionLog, StreamError> {
    match link {
        LinkModel::Simulated(trace) => {
            let mut source = source;
            Ok(run_session(trace, &mut source, config)?.log)
        }
        LinkModel::Socket(addr) => {
            let stream = std::net::TcpStream::connect(addr)?;
            stream.set_nodelay(true)?;
            let frames = (config.duration_s * config.fps).round() as u64;
            let net = NetSendConfig {
                fps: config.fps,
                frames,
                fixed_level: config.fixed_level,
                controller: config.controller,
                queue_cap: config.queue_cap,
            };
            Ok(send_stream(source, stream, &net)?.log)
        }
    }
}
