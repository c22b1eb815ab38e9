//! Design the preprocessing low-pass filter and inspect its response.
//!
//! Shows the cascaded biquad sections, the magnitude response at a few
//! probe frequencies, and the zero-phase filtering of a noisy sine.

use csicount::dsp::{apply_lowpass, design_butterworth, CsiSeries, FilterMode, FilterSpec};

fn main() -> csicount::Result<()> {
    let spec = FilterSpec::new(4, 8.0, 100.0)?;
    let filter = design_butterworth(&spec)?;
    println!("{}", filter.describe());

    println!("frequency response:");
    for f in [0.0, 2.0, 5.0, 8.0, 12.0, 20.0, 40.0] {
        let mag = filter.magnitude_at(f, spec.sample_rate_hz);
        println!("  {f:5.1} Hz  |H| = {mag:.4}");
    }

    // a 3 Hz sine polluted with a 30 Hz tone
    let n = 400;
    let series = CsiSeries {
        source_id: "demo".into(),
        sample_rate_hz: 100.0,
        timestamps: (0..n).map(|i| i as f64 / 100.0).collect(),
        amplitudes: (0..n)
            .map(|i| {
                let t = i as f64 / 100.0;
                let clean = (std::f64::consts::TAU * 3.0 * t).sin();
                let tone = 0.5 * (std::f64::consts::TAU * 30.0 * t).sin();
                vec![clean + tone]
            })
            .collect(),
        event_marks: vec![],
    };
    let filtered = apply_lowpass(&series, &spec, FilterMode::ZeroPhase)?;
    let rms = |s: &CsiSeries| {
        (s.amplitudes.iter().map(|r| r[0] * r[0]).sum::<f64>() / s.len() as f64).sqrt()
    };
    let residual: f64 = series
        .amplitudes
        .iter()
        .zip(&filtered.amplitudes)
        .map(|(a, b)| (a[0] - b[0]).powi(2))
        .sum::<f64>()
        / n as f64;
    println!("input rms {:.4}, filtered rms {:.4}", rms(&series), rms(&filtered));
    println!("mean squared change from filtering: {residual:.4}");
    println!("(the 30 Hz tone carries rms 0.354; filtering strips almost exactly that)");
    Ok(())
}
