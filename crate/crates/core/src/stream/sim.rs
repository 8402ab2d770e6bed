//! Tick-based link simulation.

use crate::abr::{evaluate_qoe, AbrController, Action, FrameRecord, QoEParams, SessionLog};

use super::{BandwidthTrace, FrameSource, QueueStats, QueuedFrame, SenderConfig, SenderQueue, StreamError};

/// One simulated session.
#[derive(Debug, Clone)]
pub struct SessionRun {
    pub log: SessionLog,
    /// Controller decision per frame; empty for fixed-level runs.
    pub actions: Vec<Action>,
    pub queue: QueueStats,
    /// Frames still queued when the session ended.
    pub backlog_frames: usize,
    /// `(frame index, enqueue time, delivery time)` in seconds.
    pub deliveries: Vec<(u64, f64, f64)>,
    /// Bytes sent in each tick.
    pub sent_per_tick: Vec<usize>,
}

fn ticks_per(interval: f64, tick: f64, what: &str) -> Result<u64, StreamError> {
    let n = interval / tick;
    if !(n.is_finite() && n >= 1.0) || (n - n.round()).abs() > 1e-6 * n {
        return Err(StreamError::Config(format!("{what} must be a whole number of ticks")));
    }
    Ok(n.round() as u64)
}

/// Runs the producer at `config.fps` for `config.duration_s` against a
/// link draining `rate(t)·tick` bytes per tick. Unused link capacity does
/// not carry over while the queue is empty.
///
/// Per frame: K is read before the new frame is enqueued, the frame is
/// encoded at the current level and enqueued, and the controller (if any)
/// observes K to pick the next frame's level.
pub fn run_session<S: FrameSource + ?Sized>(
    trace: &BandwidthTrace,
    source: &mut S,
    config: &SenderConfig,
) -> Result<SessionRun, StreamError> {
    if !(config.fps > 0.0) || !(config.tick_s > 0.0) || !(config.duration_s >= 0.0) {
        return Err(StreamError::Config("fps, tick and duration must be positive".into()));
    }
    let ladder = source.ladder_size();
    if config.fixed_level >= ladder {
        return Err(StreamError::Config(format!("level {} outside ladder", config.fixed_level)));
    }
    let ticks_per_frame = ticks_per(1.0 / config.fps, config.tick_s, "frame interval")?;
    let ticks_per_second = 1.0 / config.tick_s;
    let total_ticks = (config.duration_s * ticks_per_second).round() as u64;

    let mut controller = config
        .controller
        .map(|c| AbrController::new(c, ladder, config.fixed_level))
        .transpose()?;
    let mut queue = SenderQueue::new(config.queue_cap);
    let mut log = SessionLog::new();
    let mut deliveries = Vec::new();
    let mut sent_per_tick = Vec::with_capacity(total_ticks as usize);
    let mut level = config.fixed_level;
    let mut carry = 0.0;
    let mut index = 0u64;

    for tick in 0..total_ticks {
        let t = tick as f64 / ticks_per_second;
        if tick % ticks_per_frame == 0 {
            let k = queue.len();
            let data = source.frame(index, level)?;
            let frame = QueuedFrame {
                index,
                level,
                data,
                enqueued_at: t,
            };
            log.push(FrameRecord {
                frame: index,
                level,
                queue: k,
                bytes: frame.wire_len(),
                timestamp: t,
            });
            queue.push(frame);
            if let Some(c) = controller.as_mut() {
                level = c.observe(k);
            }
            index += 1;
        }
        let budget = trace.rate_at(t + 1e-9) * config.tick_s + carry;
        let whole = budget.floor();
        carry = budget - whole;
        let (sent, done) = queue.transmit(whole as usize);
        sent_per_tick.push(sent);
        let end = t + config.tick_s;
        deliveries.extend(done.into_iter().map(|f| (f.index, f.enqueued_at, end)));
        if queue.is_empty() {
            carry = 0.0;
        }
    }

    Ok(SessionRun {
        log,
        actions: controller.map(|c| c.actions().to_vec()).unwrap_or_default(),
        queue: queue.stats(),
        backlog_frames: queue.len(),
        deliveries,
        sent_per_tick,
    })
}

/// Settings for a with/without-controller comparison.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimConfig {
    pub sender: SenderConfig,
    pub qoe: QoEParams,
}

#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub with_strategy: SessionRun,
    pub without_strategy: SessionRun,
    pub qoe_with: f64,
    pub qoe_without: f64,
}

/// Replays `trace` twice on the same frames: once with the controller,
/// once at the fixed level.
pub fn simulate<S: FrameSource + ?Sized>(
    trace: &BandwidthTrace,
    source: &mut S,
    config: &SimConfig,
) -> Result<SimulationReport, StreamError> {
    config.qoe.validate()?;
    let controller = config.sender.controller.unwrap_or_default();
    let with = SenderConfig {
        controller: Some(controller),
        ..config.sender
    };
    let without = SenderConfig {
        controller: None,
        ..config.sender
    };
    let with_strategy = run_session(trace, source, &with)?;
    let without_strategy = run_session(trace, source, &without)?;
    let score = |run: &SessionRun| -> Result<f64, StreamError> {
        if run.log.is_empty() {
            Ok(0.0)
        } else {
            Ok(evaluate_qoe(&run.log, &config.qoe)?)
        }
    };
    Ok(SimulationReport {
        qoe_with: score(&with_strategy)?,
        qoe_without: score(&without_strategy)?,
        with_strategy,
        without_strategy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::FixedSizeSource;

    fn sizes() -> FixedSizeSource {
        FixedSizeSource::new(vec![20_000, 16_000, 12_000, 7_000, 4_000, 2_000])
    }

    fn cfg(duration_s: f64, controller: bool) -> SenderConfig {
        SenderConfig {
            duration_s,
            controller: controller.then(Default::default),
            ..Default::default()
        }
    }

    #[test]
    fn infinite_bandwidth_keeps_queue_empty() {
        let trace = BandwidthTrace::constant(1e12).unwrap();
        let run = run_session(&trace, &mut sizes(), &cfg(30.0, true)).unwrap();
        assert_eq!(run.log.len(), 300);
        assert!(run.log.records.iter().all(|r| r.queue == 0 && r.level == 0));
        assert_eq!(run.backlog_frames, 0);
    }

    #[test]
    fn starved_link_diverges() {
        let trace = BandwidthTrace::constant(1_000.0).unwrap();
        let run = run_session(&trace, &mut sizes(), &cfg(20.0, false)).unwrap();
        let k: Vec<usize> = run.log.queues().collect();
        assert!(k.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(*k.last().unwrap(), 199);
    }

    #[test]
    fn bytes_are_conserved() {
        let trace = BandwidthTrace::drop_and_recover();
        let run = run_session(&trace, &mut sizes(), &cfg(120.0, true)).unwrap();
        let q = run.queue;
        let pending: usize = q.enqueued_bytes - q.transmitted_bytes - q.dropped_bytes;
        assert_eq!(q.enqueued_bytes, run.log.total_bytes());
        assert_eq!(q.transmitted_bytes, run.sent_per_tick.iter().sum::<usize>());
        assert!(pending < 20_000 * (run.backlog_frames + 1));
    }

    #[test]
    fn link_respects_rate() {
        let trace = BandwidthTrace::drop_and_recover();
        let run = run_session(&trace, &mut sizes(), &cfg(100.0, false)).unwrap();
        let tick = 0.01;
        for (w0, w1) in [(0usize, 100usize), (5000, 6000), (5400, 5600), (0, 10_000)] {
            let sent: usize = run.sent_per_tick[w0..w1].iter().sum();
            let allowed = trace.bytes_between(w0 as f64 * tick, w1 as f64 * tick);
            assert!(sent as f64 <= allowed + 20_004.0, "{w0}..{w1}: {sent} > {allowed}");
        }
    }

    #[test]
    fn flat_high_bandwidth_gives_identical_logs() {
        let trace = BandwidthTrace::constant(10e6).unwrap();
        let sim = SimConfig {
            sender: cfg(60.0, true),
            ..Default::default()
        };
        let r = simulate(&trace, &mut sizes(), &sim).unwrap();
        assert_eq!(r.with_strategy.log, r.without_strategy.log);
        assert_eq!(r.qoe_with, r.qoe_without);
    }

    #[test]
    fn finer_ticks_move_queue_by_at_most_one() {
        let trace = BandwidthTrace::drop_and_recover();
        let coarse = run_session(&trace, &mut sizes(), &cfg(300.0, false)).unwrap();
        let fine_cfg = SenderConfig {
            tick_s: 0.005,
            ..cfg(300.0, false)
        };
        let fine = run_session(&trace, &mut sizes(), &fine_cfg).unwrap();
        assert_eq!(coarse.log.len(), fine.log.len());
        for (a, b) in coarse.log.records.iter().zip(&fine.log.records) {
            assert!(a.queue.abs_diff(b.queue) <= 1, "frame {}: {} vs {}", a.frame, a.queue, b.queue);
        }
    }

    #[test]
    fn rejects_fractional_tick_frames() {
        let trace = BandwidthTrace::constant(1e6).unwrap();
        let bad = SenderConfig {
            tick_s: 0.03,
            ..cfg(1.0, false)
        };
        assert!(run_session(&trace, &mut sizes(), &bad).is_err());
    }
}
