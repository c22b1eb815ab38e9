//! Parameter-efficient fine-tuning: adapters-and-head versus a linear probe.
//!
//! Starts from a randomly initialized checkpoint (standing in for a
//! pre-trained one so the example stays fast), fine-tunes on labeled
//! synthetic windows under two masks, and compares trainable footprints
//! and held-out accuracy.

use csicount::io::{Checkpoint, Provenance};
use csicount::metrics::classification_metrics;
use csicount::model::{CsiEncoder, EncoderConfig, MaskMode};
use csicount::synth::{generate_dataset, DomainProfile, PreprocessParams};
use csicount::train::{finetune, linear_probe, predict_windows, TrainConfig};
use csicount::EventLabel;

fn main() -> csicount::Result<()> {
    let params = PreprocessParams::default();
    let ds = generate_dataset(8, &DomainProfile::source(), (0.75, 0.0, 0.25), 16, &params, 21)?;
    println!(
        "{} labeled train windows, {} held-out",
        ds.train.len(),
        ds.test.len()
    );

    let config = EncoderConfig {
        in_channels: 16,
        layer_channels: vec![8, 16, 32],
        blocks_per_layer: 1,
        se_reduction: 4,
        adapter_bottleneck: 4,
        embedding_dim: 32,
        ..EncoderConfig::default()
    };
    let encoder = CsiEncoder::<f32>::new(&config, 5)?;
    let parent = Checkpoint::from_model(&encoder, None, Provenance::default());

    let cfg = TrainConfig {
        epochs: 12,
        batch_size: 32,
        encoder_lr: 1e-3,
        head_lr: 1e-2,
        seed: 5,
        ..TrainConfig::wiflow_preset()
    };
    let labels: Vec<EventLabel> = ds.test.iter().map(|lw| lw.label).collect();
    let windows: Vec<_> = ds.test.iter().map(|lw| lw.window.clone()).collect();

    for (name, outcome) in [
        (
            "adapters_and_head",
            finetune::<f32>(&parent, &ds.train, 3, MaskMode::AdaptersAndHead, &cfg)?,
        ),
        ("linear probe", linear_probe::<f32>(&parent, &ds.train, 3, &cfg)?),
    ] {
        let (enc, head) = outcome.checkpoint.build_model::<f32>()?;
        let preds = predict_windows(&enc, &head.unwrap(), &windows)?;
        let report = classification_metrics(&preds, &labels)?;
        println!(
            "{name:18} trainable {:>6}  final loss {:.4}  held-out accuracy {:.3}",
            outcome.trainable_params,
            outcome.epoch_losses.last().unwrap(),
            report.accuracy
        );
    }
    Ok(())
}
