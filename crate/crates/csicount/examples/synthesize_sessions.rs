//! Generate scripted synthetic CSI sessions with exact ground truth.
//!
//! Prints one random script, the shape of its rendered series, and split
//! statistics of a small preprocessed dataset.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use csicount::synth::{
    generate_dataset, generate_series, random_script, DomainProfile, PreprocessParams,
};

fn main() -> csicount::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let script = random_script("demo", &mut rng);
    println!("script '{}', {:.1} s:", script.name, script.duration_s);
    for ev in &script.events {
        println!("  {:6.2} s  {}", ev.time_s, ev.label.name());
    }
    println!("final occupancy: {}", script.final_occupancy());

    let profile = DomainProfile::source();
    let series = generate_series(&script, &profile, 52, 7)?;
    println!(
        "rendered {} samples x {} subcarriers at {} Hz, {} event marks",
        series.len(),
        series.num_subcarriers(),
        series.sample_rate_hz,
        series.event_marks.len()
    );

    let params = PreprocessParams::default();
    let ds = generate_dataset(10, &profile, (0.8, 0.1, 0.1), 52, &params, 42)?;
    println!(
        "dataset: {} train / {} val / {} test windows, {} test sessions",
        ds.train.len(),
        ds.val.len(),
        ds.test.len(),
        ds.test_sessions.len()
    );
    println!(
        "train class counts: no_event {}, enter {}, exit {}",
        ds.train_class_counts[0], ds.train_class_counts[1], ds.train_class_counts[2]
    );
    Ok(())
}
