//! The stateful occupancy counter: a deterministic finite state machine
//! that debounces per-window event predictions and enforces a cooldown of
//! consecutive no-event windows before re-arming, so a single prolonged
//! activity is never counted twice.

use crate::{Error, EventLabel, Result};

#[derive(Debug, Clone, Copy)]
pub struct CounterConfig {
    /// Consecutive identical predictions required to confirm an event.
    pub event_threshold: u32,
    /// Consecutive no-event predictions required to re-arm after a confirm.
    pub cooldown_period: u32,
    pub clamp_at_zero: bool,
}

impl Default for CounterConfig {
    fn default() -> Self {
        CounterConfig {
            event_threshold: 5,
            cooldown_period: 10,
            clamp_at_zero: true,
        }
    }
}

impl CounterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.event_threshold < 1 {
            return Err(Error::InvalidArg("event_threshold must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    NoEvent,
    Debouncing,
    WaitingForNoEvent,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::NoEvent => "no_event",
            Phase::Debouncing => "debouncing",
            Phase::WaitingForNoEvent => "waiting_for_no_event",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterState {
    pub phase: Phase,
    /// Present iff phase == Debouncing.
    pub buffered_event: Option<EventLabel>,
    pub consecutive_count: u32,
    pub cooldown_progress: u32,
    pub occupancy: i64,
}

impl Default for CounterState {
    fn default() -> Self {
        CounterState {
            phase: Phase::NoEvent,
            buffered_event: None,
            consecutive_count: 0,
            cooldown_progress: 0,
            occupancy: 0,
        }
    }
}

/// Per-window record of the counting fold.
#[derive(Debug, Clone)]
pub struct TraceEntry {
    pub prediction: EventLabel,
    pub phase: Phase,
    pub occupancy: i64,
}

/// The time series of integer occupancy estimates the machine emits.
#[derive(Debug, Clone, Default)]
pub struct OccupancyTrace {
    pub entries: Vec<TraceEntry>,
}

impl OccupancyTrace {
    pub fn occupancies(&self) -> Vec<i64> {
        self.entries.iter().map(|e| e.occupancy).collect()
    }

    pub fn final_occupancy(&self) -> i64 {
        self.entries.last().map_or(0, |e| e.occupancy)
    }

    /// CSV export: window_index, prediction, phase, occupancy.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("window_index,prediction,phase,occupancy\n");
        for (i, e) in self.entries.iter().enumerate() {
            out.push_str(&format!(
                "{i},{},{},{}\n",
                e.prediction.name(),
                e.phase.name(),
                e.occupancy
            ));
        }
        out
    }
}

fn apply_confirm(state: &mut CounterState, event: EventLabel, cfg: &CounterConfig) {
    match event {
        EventLabel::Enter => state.occupancy += 1,
        EventLabel::Exit => {
            state.occupancy -= 1;
            if cfg.clamp_at_zero && state.occupancy < 0 {
                state.occupancy = 0;
            }
        }
        _ => {}
    }
    state.phase = Phase::WaitingForNoEvent;
    state.buffered_event = None;
    state.consecutive_count = 0;
    state.cooldown_progress = 0;
}

/// Advance the machine by one prediction.
pub fn step(state: &CounterState, pred: EventLabel, cfg: &CounterConfig) -> Result<CounterState> {
    cfg.validate()?;
    if matches!(pred, EventLabel::Activity(_)) {
        return Err(Error::InvalidArg(format!(
            "counter: prediction '{}' is not an occupancy event",
            pred.name()
        )));
    }
    let mut next = state.clone();
    match state.phase {
        Phase::NoEvent => {
            if pred != EventLabel::NoEvent {
                if cfg.event_threshold == 1 {
                    apply_confirm(&mut next, pred, cfg);
                } else {
                    next.phase = Phase::Debouncing;
                    next.buffered_event = Some(pred);
                    next.consecutive_count = 1;
                }
            }
        }
        Phase::Debouncing => {
            if Some(pred) == state.buffered_event {
                next.consecutive_count += 1;
                if next.consecutive_count >= cfg.event_threshold {
                    apply_confirm(&mut next, pred, cfg);
                }
            } else {
                // any differing prediction (including no_event) resets the buffer
                next.phase = Phase::NoEvent;
                next.buffered_event = None;
                next.consecutive_count = 0;
            }
        }
        Phase::WaitingForNoEvent => {
            if pred == EventLabel::NoEvent {
                next.cooldown_progress += 1;
                if next.cooldown_progress >= cfg.cooldown_period {
                    next.phase = Phase::NoEvent;
                    next.cooldown_progress = 0;
                }
            } else {
                // a stray event breaks the run of consecutive no_event windows
                next.cooldown_progress = 0;
            }
        }
    }
    Ok(next)
}

/// Fold `step` over a prediction sequence from the initial state.
pub fn run_trace(preds: &[EventLabel], cfg: &CounterConfig) -> Result<OccupancyTrace> {
    run_trace_from(&CounterState::default(), preds, cfg).map(|(t, _)| t)
}

/// Fold from an explicit starting state, returning the end state too.
pub fn run_trace_from(
    start: &CounterState,
    preds: &[EventLabel],
    cfg: &CounterConfig,
) -> Result<(OccupancyTrace, CounterState)> {
    let mut state = start.clone();
    let mut trace = OccupancyTrace::default();
    for &p in preds {
        state = step(&state, p, cfg)?;
        trace.entries.push(TraceEntry {
            prediction: p,
            phase: state.phase,
            occupancy: state.occupancy,
        });
    }
    Ok((trace, state))
}
