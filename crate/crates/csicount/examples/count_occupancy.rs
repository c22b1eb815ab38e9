//! The debounce/cooldown state machine that turns per-window predictions
//! into a stable occupancy count.
//!
//! An event is confirmed only after `event_threshold` consecutive matching
//! predictions; a confirmation starts a cooldown during which no further
//! event can be confirmed, so one physical crossing seen across many
//! windows is counted once.

use csicount::counter::{run_trace, CounterConfig};
use csicount::EventLabel::{Enter, Exit, NoEvent};

fn main() -> csicount::Result<()> {
    let cfg = CounterConfig::default();
    println!(
        "threshold {} consecutive windows, cooldown {} windows\n",
        cfg.event_threshold, cfg.cooldown_period
    );

    let streams = [
        ("clean entry", vec![vec![NoEvent; 3], vec![Enter; 6], vec![NoEvent; 12]].concat()),
        (
            "glitch (4 enters, below threshold)",
            vec![vec![NoEvent; 3], vec![Enter; 4], vec![NoEvent; 12]].concat(),
        ),
        (
            "double burst during cooldown",
            vec![vec![Enter; 5], vec![NoEvent; 3], vec![Enter; 5], vec![NoEvent; 10]].concat(),
        ),
        (
            "entry then exit",
            vec![vec![Enter; 5], vec![NoEvent; 12], vec![Exit; 5], vec![NoEvent; 12]].concat(),
        ),
    ];
    for (name, preds) in streams {
        let trace = run_trace(&preds, &cfg)?;
        let occ: Vec<String> = trace.occupancies().iter().map(|o| o.to_string()).collect();
        println!("{name}:");
        println!("  occupancy over time: {}", occ.join(""));
        println!("  final occupancy: {}\n", trace.final_occupancy());
    }
    Ok(())
}
