//! Device-free WiFi-sensing toolkit for occupancy counting from Channel
//! State Information (CSI).
//!
//! The pipeline is "classify-then-count": a 1D residual encoder is
//! pre-trained with a contrastive objective on unlabeled CSI windows,
//! adapted to new environments with lightweight adapter modules (optionally
//! after adversarial feature alignment), and its per-window event
//! predictions are folded by a debounce/cooldown state machine into a
//! stable occupancy estimate.
//!
//! Modules:
//! - [`ndtensor`]: minimal dense-array engine with reverse-mode autodiff
//! - [`dsp`]: Butterworth denoising, windowing, label purification
//! - [`augment`]: jitter / scale / permutation view generation
//! - [`model`]: the CSI encoder, SE blocks, adapters, and heads
//! - [`loss`]: NT-Xent, cross-entropy, focal, and adversarial losses
//! - [`train`]: Adam, pre-training, fine-tuning, ADDA, k-shot evaluation
//! - [`counter`]: the debounce/cooldown occupancy state machine
//! - [`metrics`]: classification/counting metrics and the generalisation index
//! - [`synth`]: deterministic synthetic CSI generator with ground truth
//! - [`config`] / [`io`]: run configuration, CSV formats, checkpoints

pub mod augment;
pub mod config;
pub mod counter;
pub mod dsp;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod ndtensor;
pub mod synth;
pub mod train;

mod error;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// The categorical outcome of classifying one CSI window.
///
/// The occupancy task uses the three `Enter` / `Exit` / `NoEvent` classes;
/// activity-recognition imports use `Activity(idx)` with a named class set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventLabel {
    NoEvent,
    Enter,
    Exit,
    /// Index into a configured activity class set (e.g. the six WiAR classes).
    Activity(u8),
}

impl EventLabel {
    /// Class index within a `num_classes`-way head. The occupancy set maps
    /// no_event=0, enter=1, exit=2.
    pub fn class_index(self) -> usize {
        match self {
            EventLabel::NoEvent => 0,
            EventLabel::Enter => 1,
            EventLabel::Exit => 2,
            EventLabel::Activity(i) => i as usize,
        }
    }

    pub fn from_class_index(idx: usize, num_classes: usize) -> Result<Self> {
        if idx >= num_classes {
            return Err(Error::InvalidArg(format!(
                "class index {idx} out of range for {num_classes} classes"
            )));
        }
        Ok(match (idx, num_classes) {
            (0, 3) => EventLabel::NoEvent,
            (1, 3) => EventLabel::Enter,
            (2, 3) => EventLabel::Exit,
            (i, _) => EventLabel::Activity(i as u8),
        })
    }

    pub fn name(self) -> String {
        match self {
            EventLabel::NoEvent => "no_event".to_string(),
            EventLabel::Enter => "enter".to_string(),
            EventLabel::Exit => "exit".to_string(),
            EventLabel::Activity(i) => format!("activity_{i}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "no_event" => Ok(EventLabel::NoEvent),
            "enter" => Ok(EventLabel::Enter),
            "exit" => Ok(EventLabel::Exit),
            other => {
                if let Some(idx) = other.strip_prefix("activity_") {
                    let i: u8 = idx
                        .parse()
                        .map_err(|_| Error::InvalidArg(format!("bad label '{other}'")))?;
                    Ok(EventLabel::Activity(i))
                } else {
                    Err(Error::InvalidArg(format!("unknown event label '{other}'")))
                }
            }
        }
    }
}
