//! Session scoring and the queue-driven level controller.

use std::collections::VecDeque;
use std::io::{Read, Write};

#[derive(Debug, thiserror::Error)]
pub enum AbrError {
    #[error("session log is empty")]
    EmptyLog,
    #[error("frame {frame} uses level {level} outside the quality table")]
    UnknownLevel { frame: u64, level: usize },
    #[error("invalid parameters: {0}")]
    Config(String),
    #[error("frame indices are not contiguous at record {0}")]
    Gap(usize),
    #[error("log csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Weights of the session score.
#[derive(Debug, Clone, PartialEq)]
pub struct QoEParams {
    pub mu: f64,
    /// Score of each level id; strictly decreasing.
    pub quality: Vec<f64>,
}

impl Default for QoEParams {
    /// `q(i) = 25 − 5i` over six levels, `μ = 0.5`.
    fn default() -> Self {
        Self::linear(6, 0.5)
    }
}

impl QoEParams {
    pub fn linear(levels: usize, mu: f64) -> Self {
        Self {
            mu,
            quality: (0..levels).map(|i| 25.0 - 5.0 * i as f64).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), AbrError> {
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(AbrError::Config(format!("mu must be finite and >= 0, got {}", self.mu)));
        }
        if self.quality.is_empty() || self.quality.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(AbrError::Config("quality must be non-empty and strictly decreasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FrameRecord {
    pub frame: u64,
    pub level: usize,
    /// Frames waiting in the sender queue when this frame was enqueued.
    pub queue: usize,
    pub bytes: usize,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionLog {
    pub records: Vec<FrameRecord>,
}

impl SessionLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: FrameRecord) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn levels(&self) -> impl Iterator<Item = usize> + '_ {
        self.records.iter().map(|r| r.level)
    }

    pub fn queues(&self) -> impl Iterator<Item = usize> + '_ {
        self.records.iter().map(|r| r.queue)
    }

    pub fn mean_queue(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.queues().sum::<usize>() as f64 / self.len() as f64
    }

    pub fn max_queue(&self) -> usize {
        self.queues().max().unwrap_or(0)
    }

    pub fn total_bytes(&self) -> usize {
        self.records.iter().map(|r| r.bytes).sum()
    }

    /// Checks that frame indices run `first, first+1, ...`.
    pub fn validate(&self) -> Result<(), AbrError> {
        for (k, w) in self.records.windows(2).enumerate() {
            if w[1].frame != w[0].frame + 1 {
                return Err(AbrError::Gap(k + 1));
            }
        }
        Ok(())
    }

    /// CSV with header `frame,level,queue,bytes,timestamp`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), AbrError> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        if self.records.is_empty() {
            w.write_record(["frame", "level", "queue", "bytes", "timestamp"])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, AbrError> {
        let mut r = csv::Reader::from_reader(input);
        let records = r.deserialize().collect::<Result<Vec<FrameRecord>, _>>()?;
        let log = Self { records };
        log.validate()?;
        Ok(log)
    }
}

/// `Σ q(R_i) − μ·Σ K_i − Σ |q(R_{i+1}) − q(R_i)|`; higher is better.
pub fn evaluate_qoe(log: &SessionLog, params: &QoEParams) -> Result<f64, AbrError> {
    if log.is_empty() {
        return Err(AbrError::EmptyLog);
    }
    let q = |r: &FrameRecord| {
        params
            .quality
            .get(r.level)
            .copied()
            .ok_or(AbrError::UnknownLevel { frame: r.frame, level: r.level })
    };
    let mut quality = 0.0;
    let mut queue = 0.0;
    let mut switching = 0.0;
    let mut prev: Option<f64> = None;
    for r in &log.records {
        let qi = q(r)?;
        quality += qi;
        queue += r.queue as f64;
        if let Some(p) = prev {
            switching += (qi - p).abs();
        }
        prev = Some(qi);
    }
    Ok(quality - params.mu * queue - switching)
}

/// Thresholds and windows of the controller, all in frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    pub k_high: usize,
    pub k_low: usize,
    pub stable_window: usize,
    pub probation_window: usize,
    pub cooldown: usize,
    pub failed_memory: usize,
    /// Queue observations used for trend detection.
    pub history_window: usize,
    /// Least-squares slope (frames per frame) that counts as growth.
    pub growth_slope: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            k_high: 5,
            k_low: 1,
            stable_window: 10,
            probation_window: 10,
            cooldown: 5,
            failed_memory: 30,
            history_window: 5,
            growth_slope: 0.5,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), AbrError> {
        let windows = [
            self.k_high,
            self.k_low,
            self.stable_window,
            self.probation_window,
            self.cooldown,
            self.failed_memory,
        ];
        if windows.contains(&0) {
            return Err(AbrError::Config("thresholds and windows must be positive".into()));
        }
        if self.k_low >= self.k_high {
            return Err(AbrError::Config("k_low must be below k_high".into()));
        }
        if self.history_window < 2 {
            return Err(AbrError::Config("history window needs at least two samples".into()));
        }
        if !(self.growth_slope > 0.0) {
            return Err(AbrError::Config("growth slope must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Probation {
    pub previous_level: usize,
    pub attempted_level: usize,
    pub elapsed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Hold,
    /// Queue pressure: one level coarser.
    Pressure,
    /// Stable queue: one level finer, on probation.
    Attempt,
    /// Attempt overfilled the queue: back to the level before it.
    Rollback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub level: usize,
    /// Frames observed since the last switch.
    pub since_switch: usize,
    /// Consecutive observations at or below `k_low`.
    pub stable: usize,
    pub history: VecDeque<usize>,
    /// Per level, the observation count before which it may not be
    /// attempted again.
    pub failed_until: Vec<u64>,
    pub probation: Option<Probation>,
    pub observed: u64,
}

impl ControllerState {
    pub fn new(level: usize, ladder_size: usize, config: &ControllerConfig) -> Self {
        Self {
            level: level.min(ladder_size.saturating_sub(1)),
            since_switch: config.cooldown,
            stable: 0,
            history: VecDeque::with_capacity(config.history_window),
            failed_until: vec![0; ladder_size],
            probation: None,
            observed: 0,
        }
    }

    pub fn is_failed(&self, level: usize) -> bool {
        self.failed_until.get(level).is_some_and(|&until| self.observed < until)
    }
}

/// Least-squares slope of `ys` against their index.
fn trend(ys: &VecDeque<usize>) -> f64 {
    let n = ys.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<usize>() as f64 / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, &y) in ys.iter().enumerate() {
        let dx = x as f64 - mx;
        sxy += dx * (y as f64 - my);
        sxx += dx * dx;
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// One observation of the queue length. Returns the next state, the level
/// for the next frame and the rule that fired.
///
/// Rules in priority order: rollback of a failed attempt (ignores cooldown),
/// pressure, improvement attempt, hold.
pub fn controller_step(
    state: &ControllerState,
    observed_queue: usize,
    config: &ControllerConfig,
    ladder_size: usize,
) -> (ControllerState, usize, Action) {
    let top = ladder_size.saturating_sub(1);
    let mut s = state.clone();
    s.failed_until.resize(ladder_size, 0);
    s.level = s.level.min(top);
    s.observed += 1;
    s.since_switch = s.since_switch.saturating_add(1);
    if s.history.len() == config.history_window {
        s.history.pop_front();
    }
    s.history.push_back(observed_queue);
    s.stable = if observed_queue <= config.k_low { s.stable + 1 } else { 0 };

    let switch = |s: &mut ControllerState, level: usize| {
        s.level = level;
        s.since_switch = 0;
        s.stable = 0;
    };

    if let Some(mut p) = s.probation {
        p.elapsed += 1;
        if observed_queue > config.k_high {
            s.failed_until[p.attempted_level] = s.observed + config.failed_memory as u64;
            s.probation = None;
            switch(&mut s, p.previous_level.min(top));
            let level = s.level;
            return (s, level, Action::Rollback);
        }
        s.probation = (p.elapsed < config.probation_window).then_some(p);
    }

    let cooled = s.since_switch >= config.cooldown;
    let growing = s.history.len() == config.history_window && trend(&s.history) >= config.growth_slope;
    if cooled && (observed_queue > config.k_high || growing) && s.level < top {
        s.probation = None;
        let next = s.level + 1;
        switch(&mut s, next);
        return (s, next, Action::Pressure);
    }
    if cooled
        && s.probation.is_none()
        && s.stable >= config.stable_window
        && s.level > 0
        && !s.is_failed(s.level - 1)
    {
        let previous_level = s.level;
        let attempted_level = s.level - 1;
        s.probation = Some(Probation {
            previous_level,
            attempted_level,
            elapsed: 0,
        });
        switch(&mut s, attempted_level);
        return (s, attempted_level, Action::Attempt);
    }
    let level = s.level;
    (s, level, Action::Hold)
}

/// Owns a controller state and applies [`controller_step`] to each
/// observation.
#[derive(Debug, Clone)]
pub struct AbrController {
    config: ControllerConfig,
    ladder_size: usize,
    state: ControllerState,
    actions: Vec<Action>,
}

impl AbrController {
    pub fn new(config: ControllerConfig, ladder_size: usize, initial_level: usize) -> Result<Self, AbrError> {
        config.validate()?;
        if ladder_size == 0 {
            return Err(AbrError::Config("empty ladder".into()));
        }
        Ok(Self {
            config,
            ladder_size,
            state: ControllerState::new(initial_level, ladder_size, &config),
            actions: Vec::new(),
        })
    }

    pub fn level(&self) -> usize {
        self.state.level
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    /// Every rule fired so far, one per observation.
    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn observe(&mut self, queue: usize) -> usize {
        let (next, level, action) = controller_step(&self.state, queue, &self.config, self.ladder_size);
        if action != Action::Hold {
            log::debug!("controller {action:?} -> level {level} at queue {queue}");
        }
        self.state = next;
        self.actions.push(action);
        level
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn log_of(levels: &[usize], queues: &[usize]) -> SessionLog {
        SessionLog {
            records: levels
                .iter()
                .zip(queues)
                .enumerate()
                .map(|(k, (&level, &queue))| FrameRecord {
                    frame: k as u64,
                    level,
                    queue,
                    bytes: 100,
                    timestamp: k as f64 * 0.1,
                })
                .collect(),
        }
    }

    #[test]
    fn qoe_examples() {
        let p = QoEParams::default();
        assert_eq!(evaluate_qoe(&log_of(&[0, 0], &[0, 0]), &p).unwrap(), 50.0);
        assert_eq!(evaluate_qoe(&log_of(&[0, 1], &[2, 4]), &p).unwrap(), 37.0);
        assert_eq!(evaluate_qoe(&log_of(&[3; 7], &[0; 7]), &p).unwrap(), 7.0 * 10.0);
        assert!(matches!(evaluate_qoe(&SessionLog::new(), &p), Err(AbrError::EmptyLog)));
        assert!(matches!(
            evaluate_qoe(&log_of(&[6], &[0]), &p),
            Err(AbrError::UnknownLevel { level: 6, .. })
        ));
    }

    #[test]
    fn qoe_params_validation() {
        assert!(QoEParams::default().validate().is_ok());
        assert!(QoEParams { mu: -1.0, ..Default::default() }.validate().is_err());
        assert!(QoEParams { mu: 0.5, quality: vec![1.0, 1.0] }.validate().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let log = log_of(&[0, 1, 1], &[0, 3, 2]);
        let text = log.to_csv_string();
        assert!(text.starts_with("frame,level,queue,bytes,timestamp\n"));
        assert_eq!(SessionLog::read_csv(text.as_bytes()).unwrap(), log);
        let mut gap = log.clone();
        gap.records[2].frame = 7;
        assert!(SessionLog::read_csv(gap.to_csv_string().as_bytes()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ControllerConfig::default().validate().is_ok());
        let bad = ControllerConfig { k_low: 5, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ControllerConfig { cooldown: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn holds_until_stable() {
        let cfg = ControllerConfig::default();
        let mut c = AbrController::new(cfg, 6, 3).unwrap();
        for _ in 0..cfg.stable_window - 1 {
            assert_eq!(c.observe(0), 3);
        }
        assert_eq!(c.observe(0), 2);
        assert_eq!(c.actions().last(), Some(&Action::Attempt));
    }

    #[test]
    fn pressure_raises_level() {
        let cfg = ControllerConfig::default();
        let s = ControllerState::new(2, 6, &cfg);
        let (s, level, action) = controller_step(&s, 8, &cfg, 6);
        assert_eq!((level, action), (3, Action::Pressure));
        // Cooldown blocks the next raise.
        let (_, level, action) = controller_step(&s, 8, &cfg, 6);
        assert_eq!((level, action), (3, Action::Hold));
    }

    #[test]
    fn growth_trend_counts_as_pressure() {
        let cfg = ControllerConfig::default();
        let mut c = AbrController::new(cfg, 6, 0).unwrap();
        let levels: Vec<usize> = [0, 1, 2, 3, 4].iter().map(|&q| c.observe(q)).collect();
        assert_eq!(levels, vec![0, 0, 0, 0, 1]);
    }

    #[test]
    fn rollback_stamps_failure() {
        let cfg = ControllerConfig::default();
        let mut c = AbrController::new(cfg, 6, 3).unwrap();
        for _ in 0..cfg.stable_window {
            c.observe(0);
        }
        assert_eq!(c.level(), 2);
        assert_eq!(c.observe(9), 3);
        assert_eq!(c.actions().last(), Some(&Action::Rollback));
        assert!(c.state().is_failed(2));
        // Stable again, but level 2 is remembered as failed.
        for _ in 0..cfg.failed_memory - 2 {
            assert_eq!(c.observe(0), 3);
        }
        let mut attempted = false;
        for _ in 0..cfg.stable_window {
            attempted |= c.observe(0) == 2;
        }
        assert!(attempted);
    }

    #[test]
    fn probation_ends_quietly() {
        let cfg = ControllerConfig::default();
        let mut c = AbrController::new(cfg, 6, 1).unwrap();
        for _ in 0..cfg.stable_window {
            c.observe(0);
        }
        assert_eq!(c.level(), 0);
        for _ in 0..cfg.probation_window {
            c.observe(1);
        }
        assert_eq!(c.state().probation, None);
        assert_eq!(c.observe(9), 1);
        assert_eq!(c.actions().last(), Some(&Action::Pressure));
    }

    #[test]
    fn nothing_finer_than_zero() {
        let mut c = AbrController::new(ControllerConfig::default(), 6, 0).unwrap();
        for _ in 0..100 {
            assert_eq!(c.observe(0), 0);
        }
    }

    proptest! {
        #[test]
        fn invariants_hold(queues in prop::collection::vec(0usize..30, 1..400), start in 0usize..6) {
            let cfg = ControllerConfig::default();
            let mut c = AbrController::new(cfg, 6, start).unwrap();
            let mut levels = vec![c.level()];
            for &q in &queues {
                levels.push(c.observe(q));
            }
            let mut last_switch: Option<usize> = None;
            let mut failed: Vec<(usize, usize)> = Vec::new();
            for (t, w) in levels.windows(2).enumerate() {
                prop_assert!(w[1] < 6);
                prop_assert!(w[0].abs_diff(w[1]) <= 1);
                if w[0] != w[1] {
                    let action = c.actions()[t];
                    if action != Action::Rollback {
                        if let Some(prev) = last_switch {
                            prop_assert!(t - prev >= cfg.cooldown);
                        }
                    }
                    if action == Action::Rollback {
                        failed.push((w[0], t));
                    }
                    if action == Action::Attempt {
                        for &(lvl, at) in &failed {
                            prop_assert!(!(lvl == w[1] && t - at < cfg.failed_memory));
                        }
                    }
                    last_switch = Some(t);
                }
            }
            let mut again = AbrController::new(cfg, 6, start).unwrap();
            let replay: Vec<usize> = queues.iter().map(|&q| again.observe(q)).collect();
            prop_assert_eq!(&replay[..], &levels[1..]);
        }
    }
}
