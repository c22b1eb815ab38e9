//! Deterministic synthetic CSI generation with exact ground truth.
//!
//! Each scripted enter/exit event injects a localized chirp burst into a
//! noisy per-subcarrier baseline. The two event types occupy disjoint
//! frequency bands (enter chirps up within 2-3.5 Hz, exit chirps down
//! within 4.5-6 Hz), so a window is classifiable on its own regardless of
//! where it falls inside the burst. Both bands sit below the 8 Hz low-pass
//! cutoff used in preprocessing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dsp::{
    apply_lowpass, purify_labels, segment_windows, CsiSeries, FilterMode, FilterSpec,
    LabeledWindow,
};
use crate::{Error, EventLabel, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptEvent {
    pub time_s: f64,
    pub label: EventLabel,
}

/// A timed sequence of enter/exit events for one recording session.
#[derive(Debug, Clone)]
pub struct ScenarioScript {
    pub name: String,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub events: Vec<ScriptEvent>,
    /// Minimum spacing between events so their bursts never overlap.
    pub min_gap_s: f64,
}

/// Half-width of a burst (and of the label span around each event mark).
pub const EVENT_SPAN_S: f64 = 2.0;

impl ScenarioScript {
    pub fn validate(&self) -> Result<()> {
        if self.duration_s <= 0.0 || self.sample_rate_hz <= 0.0 {
            return Err(Error::InvalidArg("script needs positive duration and rate".into()));
        }
        let mut occupancy = 0i64;
        for (i, ev) in self.events.iter().enumerate() {
            match ev.label {
                EventLabel::Enter => occupancy += 1,
                EventLabel::Exit => occupancy -= 1,
                other => {
                    return Err(Error::InvalidArg(format!(
                        "script '{}': event {i} has non-occupancy label {}",
                        self.name,
                        other.name()
                    )))
                }
            }
            if occupancy < 0 {
                return Err(Error::InvalidArg(format!(
                    "script '{}': occupancy goes negative at event {i}",
                    self.name
                )));
            }
            if ev.time_s < EVENT_SPAN_S || ev.time_s > self.duration_s - EVENT_SPAN_S {
                return Err(Error::InvalidArg(format!(
                    "script '{}': event {i} at {} s does not fit the session",
                    self.name, ev.time_s
                )));
            }
            if i > 0 {
                let gap = ev.time_s - self.events[i - 1].time_s;
                if gap < self.min_gap_s {
                    return Err(Error::InvalidArg(format!(
                        "script '{}': events {} and {i} are {gap:.2} s apart, min_gap is {} s",
                        self.name,
                        i - 1,
                        self.min_gap_s
                    )));
                }
            }
        }
        Ok(())
    }

    /// Occupancy after all events: cumulative enters minus exits.
    pub fn final_occupancy(&self) -> i64 {
        self.events
            .iter()
            .map(|e| match e.label {
                EventLabel::Enter => 1,
                EventLabel::Exit => -1,
                _ => 0,
            })
            .sum()
    }

    /// Occupancy as of time `t` (events at exactly `t` included).
    pub fn occupancy_at(&self, t: f64) -> i64 {
        self.events
            .iter()
            .take_while(|e| e.time_s <= t)
            .map(|e| match e.label {
                EventLabel::Enter => 1,
                EventLabel::Exit => -1,
                _ => 0,
            })
            .sum()
    }
}

/// The acquisition-environment signature: an affine amplitude map plus a
/// noise level. Two different profiles produce a measurable domain shift.
#[derive(Debug, Clone)]
pub struct DomainProfile {
    pub name: String,
    /// Mean amplitude of subcarrier 0 before the affine map.
    pub baseline: f64,
    /// Additional baseline per subcarrier index.
    pub subcarrier_slope: f64,
    pub amplitude_scale: f64,
    pub amplitude_offset: f64,
    pub noise_std: f64,
}

impl DomainProfile {
    pub fn source() -> Self {
        DomainProfile {
            name: "source".into(),
            baseline: 10.0,
            subcarrier_slope: 0.05,
            amplitude_scale: 1.0,
            amplitude_offset: 0.0,
            noise_std: 0.08,
        }
    }

    pub fn target() -> Self {
        DomainProfile {
            name: "target".into(),
            baseline: 10.0,
            subcarrier_slope: 0.05,
            amplitude_scale: 1.4,
            amplitude_offset: 2.5,
            noise_std: 0.12,
        }
    }
}

/// Chirp band limits per event type, Hz.
const ENTER_BAND: (f64, f64) = (2.0, 3.5);
const EXIT_BAND: (f64, f64) = (4.5, 6.0);
const BURST_AMPLITUDE: f64 = 1.0;
/// Gaussian envelope width of a burst, seconds.
const ENVELOPE_SIGMA_S: f64 = 1.0;

/// Burst waveform at offset `dt` from the event mark, for one subcarrier.
fn burst_value(label: EventLabel, dt: f64, subcarrier: usize) -> f64 {
    if dt.abs() > EVENT_SPAN_S {
        return 0.0;
    }
    let (band, up) = match label {
        EventLabel::Enter => (ENTER_BAND, true),
        EventLabel::Exit => (EXIT_BAND, false),
        _ => return 0.0,
    };
    // linear chirp across the band over the burst duration
    let rate = (band.1 - band.0) / (2.0 * EVENT_SPAN_S);
    let center = (band.0 + band.1) / 2.0;
    let (f_mid, k) = if up { (center, rate) } else { (center, -rate) };
    // phase = 2*pi * integral of instantaneous frequency f_mid + k*dt
    let phase = std::f64::consts::TAU * (f_mid * dt + 0.5 * k * dt * dt);
    let envelope = (-dt * dt / (2.0 * ENVELOPE_SIGMA_S * ENVELOPE_SIGMA_S)).exp();
    let sc_gain = 1.0 + 0.01 * subcarrier as f64;
    BURST_AMPLITUDE * sc_gain * envelope * phase.sin()
}

/// Render a script under a profile into a CSI series with exact marks.
pub fn generate_series(
    script: &ScenarioScript,
    profile: &DomainProfile,
    n_subcarriers: usize,
    seed: u64,
) -> Result<CsiSeries> {
    script.validate()?;
    if n_subcarriers == 0 {
        return Err(Error::InvalidArg("need at least one subcarrier".into()));
    }
    let fs = script.sample_rate_hz;
    let t_total = (script.duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = if profile.noise_std > 0.0 {
        Some(Normal::new(0.0, profile.noise_std).map_err(|e| Error::InvalidArg(e.to_string()))?)
    } else {
        None
    };
    let mut timestamps = Vec::with_capacity(t_total);
    let mut amplitudes = Vec::with_capacity(t_total);
    for i in 0..t_total {
        let t = i as f64 / fs;
        timestamps.push(t);
        let mut row = Vec::with_capacity(n_subcarriers);
        for c in 0..n_subcarriers {
            let mut v = profile.baseline + profile.subcarrier_slope * c as f64;
            for ev in &script.events {
                v += burst_value(ev.label, t - ev.time_s, c);
            }
            v = profile.amplitude_offset + profile.amplitude_scale * v;
            if let Some(n) = &noise {
                v += n.sample(&mut rng);
            }
            row.push(v);
        }
        amplitudes.push(row);
    }
    Ok(CsiSeries {
        source_id: format!("{}-{}", profile.name, script.name),
        sample_rate_hz: fs,
        timestamps,
        amplitudes,
        event_marks: script.events.iter().map(|e| (e.time_s, e.label)).collect(),
    })
}

/// Windowing and filtering parameters shared by synthetic and real data.
#[derive(Debug, Clone, Copy)]
pub struct PreprocessParams {
    pub filter_order: usize,
    pub cutoff_hz: f64,
    pub window_len: usize,
    pub window_step: usize,
    pub event_span_s: f64,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        PreprocessParams {
            filter_order: 4,
            cutoff_hz: 8.0,
            window_len: 100,
            window_step: 50,
            event_span_s: EVENT_SPAN_S,
        }
    }
}

/// Filter a series, cut it into windows, and label them from its marks.
pub fn preprocess_series(series: &CsiSeries, params: &PreprocessParams) -> Result<Vec<LabeledWindow>> {
    let spec = FilterSpec::new(params.filter_order, params.cutoff_hz, series.sample_rate_hz)?;
    let filtered = apply_lowpass(series, &spec, FilterMode::ZeroPhase)?;
    let windows = segment_windows(&filtered, params.window_len, params.window_step);
    Ok(purify_labels(&windows, &filtered, params.event_span_s))
}

/// One scripted session after preprocessing, with per-window ground truth.
#[derive(Debug, Clone)]
pub struct SessionTruth {
    pub script: ScenarioScript,
    pub windows: Vec<LabeledWindow>,
    /// True occupancy as of each window's end.
    pub window_truth: Vec<i64>,
    pub final_occupancy: i64,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub train: Vec<LabeledWindow>,
    pub val: Vec<LabeledWindow>,
    pub test: Vec<LabeledWindow>,
    /// Ordered window sequences of the test scripts, for counting eval.
    pub test_sessions: Vec<SessionTruth>,
    /// Per-class window counts over the train split (no_event, enter, exit).
    pub train_class_counts: [usize; 3],
}

/// A randomized but valid script: alternating bursts with jittered spacing,
/// occupancy never negative.
pub fn random_script(name: &str, rng: &mut ChaCha8Rng) -> ScenarioScript {
    let n_events = rng.gen_range(2..=4usize);
    let mut events = Vec::with_capacity(n_events);
    let mut t = rng.gen_range(4.0..7.0);
    let mut occupancy = 0i64;
    for _ in 0..n_events {
        let label = if occupancy == 0 || (occupancy < 3 && rng.gen_bool(0.55)) {
            EventLabel::Enter
        } else {
            EventLabel::Exit
        };
        match label {
            EventLabel::Enter => occupancy += 1,
            EventLabel::Exit => occupancy -= 1,
            _ => unreachable!(),
        }
        events.push(ScriptEvent { time_s: t, label });
        t += rng.gen_range(10.5..14.0);
    }
    let duration_s = t - rng.gen_range(10.5..14.0) + rng.gen_range(5.0..8.0);
    ScenarioScript {
        name: name.to_string(),
        duration_s: duration_s.max(events.last().unwrap().time_s + EVENT_SPAN_S + 1.0),
        sample_rate_hz: 100.0,
        events,
        min_gap_s: 10.0,
    }
}

fn session_truth(script: &ScenarioScript, windows: Vec<LabeledWindow>, fs: f64) -> SessionTruth {
    let window_truth = windows
        .iter()
        .map(|lw| {
            let end = (lw.window.start_index + lw.window.len() - 1) as f64 / fs;
            script.occupancy_at(end)
        })
        .collect();
    SessionTruth {
        script: script.clone(),
        final_occupancy: script.final_occupancy(),
        windows,
        window_truth,
    }
}

/// Generate, preprocess, and split `n_scripts` synthetic sessions. Splits
/// are script-level: all windows of one session land in the same split.
pub fn generate_dataset(
    n_scripts: usize,
    profile: &DomainProfile,
    split_ratios: (f64, f64, f64),
    n_subcarriers: usize,
    params: &PreprocessParams,
    seed: u64,
) -> Result<SynthDataset> {
    let (r_train, r_val, r_test) = split_ratios;
    if r_train <= 0.0 || r_val < 0.0 || r_test < 0.0 {
        return Err(Error::InvalidArg("split ratios must be non-negative, train > 0".into()));
    }
    if (r_train + r_val + r_test - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArg(format!(
            "split ratios sum to {}, expected 1",
            r_train + r_val + r_test
        )));
    }
    if n_scripts == 0 {
        return Err(Error::InvalidArg("need at least one script".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sessions = Vec::with_capacity(n_scripts);
    for i in 0..n_scripts {
        let script = random_script(&format!("script{i:03}"), &mut rng);
        let series = generate_series(&script, profile, n_subcarriers, seed ^ (i as u64 + 1))?;
        let labeled = preprocess_series(&series, params)?;
        sessions.push(session_truth(&script, labeled, script.sample_rate_hz));
    }
    // script-level split by position: deterministic and disjoint
    let n_train = ((n_scripts as f64) * r_train).round() as usize;
    let n_val = ((n_scripts as f64) * r_val).round() as usize;
    let n_train = n_train.clamp(1, n_scripts);
    let n_val = n_val.min(n_scripts - n_train);

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let mut test_sessions = Vec::new();
    let mut train_class_counts = [0usize; 3];
    for (i, session) in sessions.into_iter().enumerate() {
        if i < n_train {
            for lw in &session.windows {
                train_class_counts[lw.label.class_index()] += 1;
            }
            train.extend(session.windows);
        } else if i < n_train + n_val {
            val.extend(session.windows);
        } else {
            test.extend(session.windows.iter().cloned());
            test_sessions.push(session);
        }
    }
    Ok(SynthDataset {
        train,
        val,
        test,
        test_sessions,
        train_class_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::Window;

    fn simple_script() -> ScenarioScript {
        ScenarioScript {
            name: "simple".into(),
            duration_s: 20.0,
            sample_rate_hz: 100.0,
            events: vec![ScriptEvent {
                time_s: 5.0,
                label: EventLabel::Enter,
            }],
            min_gap_s: 10.0,
        }
    }

    #[test]
    fn empty_script_is_stationary_noise() {
        let script = ScenarioScript {
            name: "empty".into(),
            duration_s: 10.0,
            sample_rate_hz: 100.0,
            events: vec![],
            min_gap_s: 10.0,
        };
        let profile = DomainProfile::source();
        let s = generate_series(&script, &profile, 4, 1).unwrap();
        assert!(s.event_marks.is_empty());
        assert_eq!(s.len(), 1000);
        let mean: f64 = s.amplitudes.iter().map(|r| r[0]).sum::<f64>() / 1000.0;
        assert!((mean - profile.baseline).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn generation_is_deterministic() {
        let script = simple_script();
        let profile = DomainProfile::source();
        let a = generate_series(&script, &profile, 8, 9).unwrap();
        let b = generate_series(&script, &profile, 8, 9).unwrap();
        assert_eq!(a.amplitudes, b.amplitudes);
        let c = generate_series(&script, &profile, 8, 10).unwrap();
        assert_ne!(a.amplitudes, c.amplitudes);
    }

    #[test]
    fn script_validation_rules() {
        let mut s = simple_script();
        s.events.push(ScriptEvent {
            time_s: 9.0,
            label: EventLabel::Exit,
        });
        assert!(s.validate().is_err(), "min_gap violation accepted");
        let s = ScenarioScript {
            events: vec![ScriptEvent {
                time_s: 5.0,
                label: EventLabel::Exit,
            }],
            ..simple_script()
        };
        assert!(s.validate().is_err(), "negative occupancy accepted");
        let s = ScenarioScript {
            events: vec![ScriptEvent {
                time_s: 19.5,
                label: EventLabel::Enter,
            }],
            ..simple_script()
        };
        assert!(s.validate().is_err(), "event too close to the session end");
    }

    #[test]
    fn single_enter_labels_only_the_span() {
        let script = simple_script();
        let profile = DomainProfile::source();
        let series = generate_series(&script, &profile, 4, 3).unwrap();
        let labeled = preprocess_series(&series, &PreprocessParams::default()).unwrap();
        for lw in &labeled {
            let t_start = lw.window.start_index as f64 / 100.0;
            let t_end = t_start + 0.99;
            let overlaps = t_start <= 7.0 && t_end >= 3.0;
            let expect = if overlaps {
                EventLabel::Enter
            } else {
                EventLabel::NoEvent
            };
            assert_eq!(lw.label, expect, "window at {t_start} s");
        }
    }

    /// DFT band energies of the window's subcarrier-mean, mean removed.
    fn band_energies(w: &Window) -> (f64, f64) {
        let n = w.len();
        let trace: Vec<f64> = w
            .values
            .iter()
            .map(|row| row.iter().sum::<f64>() / row.len() as f64)
            .collect();
        let mean = trace.iter().sum::<f64>() / n as f64;
        let energy_at = |f_hz: f64| {
            let mut re = 0.0;
            let mut im = 0.0;
            for (i, &v) in trace.iter().enumerate() {
                let ang = std::f64::consts::TAU * f_hz * i as f64 / 100.0;
                re += (v - mean) * ang.cos();
                im -= (v - mean) * ang.sin();
            }
            re * re + im * im
        };
        let low = energy_at(2.0) + energy_at(3.0);
        let high = energy_at(5.0) + energy_at(6.0);
        (low, high)
    }

    /// A model-free oracle: the dataset must be classifiable from band
    /// energies alone on clean data, otherwise no model could learn it.
    #[test]
    fn bandpass_detector_classifies_clean_data() {
        let mut profile = DomainProfile::source();
        profile.noise_std = 0.0;
        let params = PreprocessParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut correct = 0usize;
        let mut total = 0usize;
        for i in 0..6 {
            let script = random_script(&format!("oracle{i}"), &mut rng);
            let series = generate_series(&script, &profile, 8, 100 + i).unwrap();
            let labeled = preprocess_series(&series, &params).unwrap();
            for lw in &labeled {
                let (low, high) = band_energies(&lw.window);
                let pred = if low + high < 1e-4 {
                    EventLabel::NoEvent
                } else if low > high {
                    EventLabel::Enter
                } else {
                    EventLabel::Exit
                };
                if pred == lw.label {
                    correct += 1;
                }
                total += 1;
            }
        }
        let acc = correct as f64 / total as f64;
        assert!(acc > 0.95, "detector accuracy {acc} over {total} windows");
    }

    #[test]
    fn domain_profiles_are_trivially_separable() {
        let params = PreprocessParams::default();
        let source = generate_dataset(4, &DomainProfile::source(), (1.0, 0.0, 0.0), 8, &params, 5)
            .unwrap();
        let target = generate_dataset(4, &DomainProfile::target(), (1.0, 0.0, 0.0), 8, &params, 6)
            .unwrap();
        let mean_amp = |w: &Window| {
            w.values.iter().flatten().sum::<f64>() / (w.len() * w.num_subcarriers()) as f64
        };
        // threshold halfway between the two profile means
        let m_src = DomainProfile::source().baseline;
        let p = DomainProfile::target();
        let m_tgt = p.amplitude_offset + p.amplitude_scale * p.baseline;
        let thr = (m_src + m_tgt) / 2.0;
        let mut correct = 0;
        let mut total = 0;
        for lw in &source.train {
            if mean_amp(&lw.window) < thr {
                correct += 1;
            }
            total += 1;
        }
        for lw in &target.train {
            if mean_amp(&lw.window) >= thr {
                correct += 1;
            }
            total += 1;
        }
        let acc = correct as f64 / total as f64;
        assert!(acc > 0.95, "domain separation accuracy {acc}");
    }

    #[test]
    fn dataset_splits_are_script_level_and_counts_reported() {
        let params = PreprocessParams::default();
        let ds = generate_dataset(
            10,
            &DomainProfile::source(),
            (0.8, 0.1, 0.1),
            8,
            &params,
            42,
        )
        .unwrap();
        assert!(!ds.train.is_empty());
        assert_eq!(ds.test_sessions.len(), 1);
        assert_eq!(
            ds.test.len(),
            ds.test_sessions.iter().map(|s| s.windows.len()).sum::<usize>()
        );
        // source ids do not leak across splits
        let train_ids: std::collections::BTreeSet<&str> =
            ds.train.iter().map(|lw| lw.window.source_id.as_str()).collect();
        let test_ids: std::collections::BTreeSet<&str> =
            ds.test.iter().map(|lw| lw.window.source_id.as_str()).collect();
        assert!(train_ids.is_disjoint(&test_ids));
        // all three classes are present in train
        assert!(ds.train_class_counts.iter().all(|&c| c > 0), "{:?}", ds.train_class_counts);
    }

    #[test]
    fn degenerate_ratios_rejected() {
        let params = PreprocessParams::default();
        let p = DomainProfile::source();
        assert!(generate_dataset(4, &p, (0.5, 0.2, 0.2), 4, &params, 1).is_err());
        assert!(generate_dataset(4, &p, (0.0, 0.5, 0.5), 4, &params, 1).is_err());
        assert!(generate_dataset(0, &p, (0.8, 0.1, 0.1), 4, &params, 1).is_err());
    }

    #[test]
    fn ground_truth_occupancy_is_cumulative_and_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..20 {
            let script = random_script(&format!("s{i}"), &mut rng);
            script.validate().unwrap();
            let mut occ = 0i64;
            for ev in &script.events {
                occ += if ev.label == EventLabel::Enter { 1 } else { -1 };
                assert!(occ >= 0);
            }
            assert_eq!(occ, script.final_occupancy());
        }
    }

    #[test]
    fn window_truth_tracks_events() {
        let script = ScenarioScript {
            name: "wt".into(),
            duration_s: 40.0,
            sample_rate_hz: 100.0,
            events: vec![
                ScriptEvent {
                    time_s: 5.0,
                    label: EventLabel::Enter,
                },
                ScriptEvent {
                    time_s: 20.0,
                    label: EventLabel::Enter,
                },
                ScriptEvent {
                    time_s: 33.0,
                    label: EventLabel::Exit,
                },
            ],
            min_gap_s: 10.0,
        };
        let series = generate_series(&script, &DomainProfile::source(), 4, 2).unwrap();
        let labeled = preprocess_series(&series, &PreprocessParams::default()).unwrap();
        let st = session_truth(&script, labeled, 100.0);
        assert_eq!(st.final_occupancy, 1);
        assert_eq!(*st.window_truth.first().unwrap(), 0);
        assert_eq!(*st.window_truth.last().unwrap(), 1);
        assert!(st.window_truth.iter().any(|&o| o == 2));
    }

    #[test]
    fn burst_stays_inside_cutoff_band() {
        // instantaneous frequency never exceeds 6.75 Hz, below the 8 Hz cutoff
        for (label, band) in [
            (EventLabel::Enter, ENTER_BAND),
            (EventLabel::Exit, EXIT_BAND),
        ] {
            let rate = (band.1 - band.0) / (2.0 * EVENT_SPAN_S);
            let f_max = (band.0 + band.1) / 2.0 + rate * EVENT_SPAN_S;
            assert!(f_max <= band.1 + 1e-12);
            assert!(band.1 < 8.0);
            // and the burst vanishes outside the span
            assert_eq!(burst_value(label, EVENT_SPAN_S + 0.01, 0), 0.0);
        }
    }
}
