//! CSI denoising, segmentation, and label purity enforcement.
//!
//! Raw amplitude streams are low-passed with a Butterworth filter realized
//! as cascaded second-order sections, cut into fixed overlapping windows,
//! and labeled from timestamped event marks, keeping only windows with a
//! single consistent event type.

use crate::{Error, EventLabel, Result};

/// A time-indexed matrix of CSI amplitudes: T samples x C subcarriers.
#[derive(Debug, Clone)]
pub struct CsiSeries {
    pub source_id: String,
    pub sample_rate_hz: f64,
    /// Strictly increasing UNIX-epoch seconds, one per packet.
    pub timestamps: Vec<f64>,
    /// Row-major T x C amplitude matrix.
    pub amplitudes: Vec<Vec<f64>>,
    pub event_marks: Vec<(f64, EventLabel)>,
}

impl CsiSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn num_subcarriers(&self) -> usize {
        self.amplitudes.first().map_or(0, |r| r.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.amplitudes.len() != self.timestamps.len() {
            return Err(Error::InvalidArg(format!(
                "series '{}': {} amplitude rows vs {} timestamps",
                self.source_id,
                self.amplitudes.len(),
                self.timestamps.len()
            )));
        }
        let c = self.num_subcarriers();
        if let Some((i, r)) = self
            .amplitudes
            .iter()
            .enumerate()
            .find(|(_, r)| r.len() != c)
        {
            return Err(Error::InvalidArg(format!(
                "series '{}': row {i} has {} subcarriers, expected {c}",
                self.source_id,
                r.len()
            )));
        }
        if self.timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArg(format!(
                "series '{}': timestamps not strictly increasing",
                self.source_id
            )));
        }
        Ok(())
    }
}

/// Low-pass filter design parameters.
#[derive(Debug, Clone, Copy)]
pub struct FilterSpec {
    pub order: usize,
    pub cutoff_hz: f64,
    pub sample_rate_hz: f64,
}

impl FilterSpec {
    pub fn new(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        let spec = FilterSpec {
            order,
            cutoff_hz,
            sample_rate_hz,
        };
        spec.check()?;
        Ok(spec)
    }

    /// Cutoff as a fraction of Nyquist, in (0, 1).
    pub fn normalized_cutoff(&self) -> f64 {
        self.cutoff_hz / (self.sample_rate_hz / 2.0)
    }

    fn check(&self) -> Result<()> {
        if self.order < 2 || self.order % 2 != 0 {
            return Err(Error::InvalidArg(format!(
                "filter order must be even and >= 2, got {}",
                self.order
            )));
        }
        let wn = self.normalized_cutoff();
        if !(wn > 0.0 && wn < 1.0) {
            return Err(Error::InvalidArg(format!(
                "cutoff {} Hz not below Nyquist {} Hz",
                self.cutoff_hz,
                self.sample_rate_hz / 2.0
            )));
        }
        Ok(())
    }
}

/// One biquad: y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2].
#[derive(Debug, Clone, Copy)]
pub struct SosSection {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

/// Cascaded second-order sections of a digital low-pass filter.
#[derive(Debug, Clone)]
pub struct SosFilter {
    pub sections: Vec<SosSection>,
    pub order: usize,
}

impl SosFilter {
    /// Magnitude of the frequency response at `freq_hz` given `fs` Hz.
    pub fn magnitude_at(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * freq_hz / sample_rate_hz;
        let (cw, sw) = (w.cos(), w.sin());
        let (c2w, s2w) = ((2.0 * w).cos(), (2.0 * w).sin());
        let mut mag = 1.0;
        for s in &self.sections {
            // H(e^{jw}) = (b0 + b1 e^{-jw} + b2 e^{-j2w}) / (1 + a1 e^{-jw} + a2 e^{-j2w})
            let nr = s.b0 + s.b1 * cw + s.b2 * c2w;
            let ni = -(s.b1 * sw + s.b2 * s2w);
            let dr = 1.0 + s.a1 * cw + s.a2 * c2w;
            let di = -(s.a1 * sw + s.a2 * s2w);
            mag *= (nr * nr + ni * ni).sqrt() / (dr * dr + di * di).sqrt();
        }
        mag
    }

    /// One causal pass over a single channel, zero initial state
    /// (direct form II transposed per section).
    pub fn filter_forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0f64, 0.0f64);
            for v in y.iter_mut() {
                let xin = *v;
                let out = s.b0 * xin + z1;
                z1 = s.b1 * xin - s.a1 * out + z2;
                z2 = s.b2 * xin - s.a2 * out;
                *v = out;
            }
        }
        y
    }

    /// One causal pass with each section's state preset to its steady-state
    /// response to a constant input equal to the first sample. A constant
    /// signal then passes through with no startup transient, which is what
    /// forward-backward filtering needs at the padded edges.
    pub fn filter_forward_settled(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        let mut level = match x.first() {
            Some(&v) => v,
            None => return y,
        };
        for s in &self.sections {
            let dc = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
            let out_ss = dc * level;
            // solve the DF2T update equations at steady state
            let z2_ss = s.b2 * level - s.a2 * out_ss;
            let mut z1 = (s.b1 + s.b2) * level - (s.a1 + s.a2) * out_ss;
            let mut z2 = z2_ss;
            for v in y.iter_mut() {
                let xin = *v;
                let out = s.b0 * xin + z1;
                z1 = s.b1 * xin - s.a1 * out + z2;
                z2 = s.b2 * xin - s.a2 * out;
                *v = out;
            }
            level = out_ss;
        }
        y
    }

    /// Second-order-section text listing for cross-implementation diffing.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.sections.iter().enumerate() {
            out.push_str(&format!(
                "sos[{i}] b=[{}, {}, {}] a=[1, {}, {}]\n",
                s.b0, s.b1, s.b2, s.a1, s.a2
            ));
        }
        out
    }
}

/// Design a digital Butterworth low-pass filter via the bilinear transform
/// with frequency pre-warping. DC gain is exactly 1 per section.
pub fn design_butterworth(spec: &FilterSpec) -> Result<SosFilter> {
    spec.check()?;
    let n = spec.order;
    let wn = spec.normalized_cutoff();
    // pre-warped analog cutoff for the bilinear transform with T=1
    let warped = 2.0 * (std::f64::consts::PI * wn / 2.0).tan();

    let mut sections = Vec::with_capacity(n / 2);
    for k in 0..n / 2 {
        // Butterworth pole pair angle in the left half-plane
        let theta = std::f64::consts::PI * (2.0 * k as f64 + n as f64 + 1.0) / (2.0 * n as f64);
        let re = warped * theta.cos();
        // analog section: warped^2 / (s^2 + a1s*s + a0s)
        let a1s = -2.0 * re;
        let a0s = warped * warped;
        // bilinear transform s = 2 (1 - z^-1) / (1 + z^-1)
        let d0 = 4.0 + 2.0 * a1s + a0s;
        sections.push(SosSection {
            b0: a0s / d0,
            b1: 2.0 * a0s / d0,
            b2: a0s / d0,
            a1: (2.0 * a0s - 8.0) / d0,
            a2: (4.0 - 2.0 * a1s + a0s) / d0,
        });
    }
    Ok(SosFilter { sections, order: n })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    /// Forward-backward filtering: no group delay; offline default.
    ZeroPhase,
    /// Single forward pass, for streaming use.
    Causal,
}

/// Filter every subcarrier column independently.
pub fn apply_lowpass(series: &CsiSeries, spec: &FilterSpec, mode: FilterMode) -> Result<CsiSeries> {
    series.validate()?;
    let sos = design_butterworth(spec)?;
    let t = series.len();
    let pad = 3 * spec.order;
    if t <= pad {
        return Err(Error::InvalidArg(format!(
            "series '{}' too short for zero-phase filtering: {} <= {}",
            series.source_id, t, pad
        )));
    }
    let c = series.num_subcarriers();
    let mut out = series.clone();
    let mut col = vec![0.0f64; t];
    for ci in 0..c {
        for (ti, row) in series.amplitudes.iter().enumerate() {
            col[ti] = row[ci];
        }
        let filtered = match mode {
            FilterMode::Causal => sos.filter_forward(&col),
            FilterMode::ZeroPhase => filtfilt(&sos, &col, pad),
        };
        for (ti, v) in filtered.into_iter().enumerate() {
            out.amplitudes[ti][ci] = v;
        }
    }
    Ok(out)
}

/// Forward-backward filtering with odd reflection padding at both ends.
fn filtfilt(sos: &SosFilter, x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    debug_assert!(n > pad);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in 1..=pad {
        ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }
    let mut y = sos.filter_forward_settled(&ext);
    y.reverse();
    let mut y = sos.filter_forward_settled(&y);
    y.reverse();
    y[pad..pad + n].to_vec()
}

/// A fixed-length slice of a series: W samples x C subcarriers.
#[derive(Debug, Clone)]
pub struct Window {
    /// Row-major W x C values.
    pub values: Vec<Vec<f64>>,
    pub start_index: usize,
    pub source_id: String,
}

impl Window {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_subcarriers(&self) -> usize {
        self.values.first().map_or(0, |r| r.len())
    }
}

#[derive(Debug, Clone)]
pub struct LabeledWindow {
    pub window: Window,
    pub label: EventLabel,
}

/// Slide a window of `window_len` with step `step`; the trailing partial
/// window is discarded. Count = floor((T - W)/S) + 1.
pub fn segment_windows(series: &CsiSeries, window_len: usize, step: usize) -> Vec<Window> {
    let t = series.len();
    if t < window_len || window_len == 0 || step == 0 {
        return Vec::new();
    }
    let count = (t - window_len) / step + 1;
    (0..count)
        .map(|i| {
            let start = i * step;
            Window {
                values: series.amplitudes[start..start + window_len].to_vec(),
                start_index: start,
                source_id: series.source_id.clone(),
            }
        })
        .collect()
}

/// Label windows from the series' event marks: a window overlapping exactly
/// one event span (mark +- `event_span_s`) gets that label, overlapping no
/// span gets `NoEvent`, overlapping two or more events is discarded.
pub fn purify_labels(
    windows: &[Window],
    series: &CsiSeries,
    event_span_s: f64,
) -> Vec<LabeledWindow> {
    let mut out = Vec::with_capacity(windows.len());
    for w in windows {
        let t_start = series.timestamps[w.start_index];
        let t_end = series.timestamps[w.start_index + w.len() - 1];
        let overlapping: Vec<EventLabel> = series
            .event_marks
            .iter()
            .filter(|(ts, _)| t_start <= ts + event_span_s && t_end >= ts - event_span_s)
            .map(|&(_, l)| l)
            .collect();
        match overlapping.len() {
            0 => out.push(LabeledWindow {
                window: w.clone(),
                label: EventLabel::NoEvent,
            }),
            1 => out.push(LabeledWindow {
                window: w.clone(),
                label: overlapping[0],
            }),
            _ => {} // ambiguous window: discarded
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_series(t: usize, c: usize, fs: f64) -> CsiSeries {
        CsiSeries {
            source_id: "test".into(),
            sample_rate_hz: fs,
            timestamps: (0..t).map(|i| i as f64 / fs).collect(),
            amplitudes: vec![vec![1.0; c]; t],
            event_marks: vec![],
        }
    }

    fn sine_series(freq: f64, t: usize, fs: f64) -> CsiSeries {
        let mut s = flat_series(t, 1, fs);
        for (i, row) in s.amplitudes.iter_mut().enumerate() {
            row[0] = (2.0 * std::f64::consts::PI * freq * i as f64 / fs).sin();
        }
        s
    }

    #[test]
    fn normalized_cutoff_is_0_16() {
        let spec = FilterSpec::new(4, 8.0, 100.0).unwrap();
        assert_eq!(spec.normalized_cutoff(), 0.16);
    }

    #[test]
    fn cutoff_at_or_above_nyquist_rejected() {
        assert!(FilterSpec::new(4, 50.0, 100.0).is_err());
        assert!(FilterSpec::new(4, 60.0, 100.0).is_err());
        assert!(FilterSpec::new(3, 8.0, 100.0).is_err()); // odd order
    }

    #[test]
    fn magnitude_response_dc_cutoff_stopband() {
        let spec = FilterSpec::new(4, 8.0, 100.0).unwrap();
        let sos = design_butterworth(&spec).unwrap();
        let dc = sos.magnitude_at(0.0, 100.0);
        assert!((dc - 1.0).abs() < 1e-12, "DC gain {dc}");
        let at_cut = sos.magnitude_at(8.0, 100.0);
        assert!(
            (at_cut - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3,
            "cutoff gain {at_cut}"
        );
        assert!(sos.magnitude_at(40.0, 100.0) < 0.01);
    }

    #[test]
    fn constant_series_unchanged() {
        let s = flat_series(300, 3, 100.0);
        let spec = FilterSpec::new(4, 8.0, 100.0).unwrap();
        let y = apply_lowpass(&s, &spec, FilterMode::ZeroPhase).unwrap();
        for (row, orig) in y.amplitudes.iter().zip(&s.amplitudes) {
            for (a, b) in row.iter().zip(orig) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn passband_preserved_stopband_attenuated() {
        let spec = FilterSpec::new(4, 8.0, 100.0).unwrap();
        let pass = sine_series(2.0, 1000, 100.0);
        let y = apply_lowpass(&pass, &spec, FilterMode::ZeroPhase).unwrap();
        // compare steady-state peak amplitude away from the edges
        let peak = y.amplitudes[200..800]
            .iter()
            .map(|r| r[0].abs())
            .fold(0.0, f64::max);
        assert!((peak - 1.0).abs() < 0.02, "2 Hz peak {peak}");

        let stop = sine_series(30.0, 1000, 100.0);
        let y = apply_lowpass(&stop, &spec, FilterMode::ZeroPhase).unwrap();
        let peak = y.amplitudes[200..800]
            .iter()
            .map(|r| r[0].abs())
            .fold(0.0, f64::max);
        assert!(peak < 0.05, "30 Hz peak {peak}");
    }

    #[test]
    fn zero_phase_preserves_pulse_symmetry() {
        let fs = 100.0;
        let t = 401;
        let mut s = flat_series(t, 1, fs);
        let center = 200.0;
        for (i, row) in s.amplitudes.iter_mut().enumerate() {
            let d = (i as f64 - center) / 20.0;
            row[0] = (-d * d).exp();
        }
        let spec = FilterSpec::new(4, 8.0, fs).unwrap();
        let y = apply_lowpass(&s, &spec, FilterMode::ZeroPhase).unwrap();
        for off in 1..150 {
            let l = y.amplitudes[200 - off][0];
            let r = y.amplitudes[200 + off][0];
            assert!((l - r).abs() < 1e-6, "asymmetric at +-{off}: {l} vs {r}");
        }
    }

    #[test]
    fn filtering_is_linear() {
        let spec = FilterSpec::new(4, 8.0, 100.0).unwrap();
        let x = sine_series(2.0, 400, 100.0);
        let y = sine_series(5.0, 400, 100.0);
        let (a, b) = (1.7, -0.4);
        let mut combo = x.clone();
        for (i, row) in combo.amplitudes.iter_mut().enumerate() {
            row[0] = a * x.amplitudes[i][0] + b * y.amplitudes[i][0];
        }
        let fx = apply_lowpass(&x, &spec, FilterMode::ZeroPhase).unwrap();
        let fy = apply_lowpass(&y, &spec, FilterMode::ZeroPhase).unwrap();
        let fc = apply_lowpass(&combo, &spec, FilterMode::ZeroPhase).unwrap();
        for i in 0..400 {
            let expect = a * fx.amplitudes[i][0] + b * fy.amplitudes[i][0];
            assert!((fc.amplitudes[i][0] - expect).abs() < 1e-5);
        }
    }

    #[test]
    fn too_short_series_rejected() {
        let s = flat_series(12, 1, 100.0);
        let spec = FilterSpec::new(4, 8.0, 100.0).unwrap();
        assert!(apply_lowpass(&s, &spec, FilterMode::ZeroPhase).is_err());
    }

    #[test]
    fn window_counts() {
        let s = flat_series(200, 2, 100.0);
        assert_eq!(segment_windows(&s, 100, 50).len(), 3);
        let s = flat_series(100, 2, 100.0);
        let w = segment_windows(&s, 100, 50);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].start_index, 0);
        let s = flat_series(99, 2, 100.0);
        assert!(segment_windows(&s, 100, 50).is_empty());
    }

    #[test]
    fn consecutive_windows_overlap_by_step() {
        let mut s = flat_series(250, 1, 100.0);
        for (i, row) in s.amplitudes.iter_mut().enumerate() {
            row[0] = i as f64;
        }
        let w = segment_windows(&s, 100, 50);
        assert_eq!(w.len(), 4);
        // last 50 samples of window i == first 50 samples of window i+1
        for i in 0..w.len() - 1 {
            assert_eq!(w[i].values[50..], w[i + 1].values[..50]);
        }
    }

    #[test]
    fn purify_label_rules() {
        let mut s = flat_series(2000, 1, 100.0);
        s.event_marks = vec![(5.0, EventLabel::Enter), (8.0, EventLabel::Exit)];
        let windows = segment_windows(&s, 100, 50);
        let labeled = purify_labels(&windows, &s, 2.0);
        // window fully inside the enter span [3, 7] but outside exit span [6, 10]:
        // window starting at 4.0 s covers [4.0, 4.99]
        let w4 = labeled
            .iter()
            .find(|lw| lw.window.start_index == 400)
            .unwrap();
        assert_eq!(w4.label, EventLabel::Enter);
        // window at 6.5 s straddles both spans: discarded
        assert!(!labeled.iter().any(|lw| lw.window.start_index == 650));
        // far-away window: no_event
        let w15 = labeled
            .iter()
            .find(|lw| lw.window.start_index == 1500)
            .unwrap();
        assert_eq!(w15.label, EventLabel::NoEvent);
    }
}
