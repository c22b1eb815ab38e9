//! Contrastive pre-training on unlabeled synthetic windows.
//!
//! Each window yields two augmented views; the NT-Xent objective pulls the
//! views of the same window together in projection space. No labels enter
//! this stage. The projection head is discarded afterwards.

use csicount::augment::AugmentPolicy;
use csicount::dsp::Window;
use csicount::model::{CsiEncoder, EncoderConfig, ProjectionHead};
use csicount::synth::{generate_dataset, DomainProfile, PreprocessParams};
use csicount::train::{pretrain_contrastive, TrainConfig};

fn main() -> csicount::Result<()> {
    let params = PreprocessParams::default();
    let ds = generate_dataset(6, &DomainProfile::source(), (1.0, 0.0, 0.0), 16, &params, 9)?;
    let windows: Vec<Window> = ds.train.into_iter().map(|lw| lw.window).collect();
    println!("pre-training on {} unlabeled windows", windows.len());

    let config = EncoderConfig {
        in_channels: 16,
        layer_channels: vec![8, 16],
        blocks_per_layer: 1,
        se_reduction: 4,
        adapter_bottleneck: 4,
        embedding_dim: 32,
        ..EncoderConfig::default()
    };
    let encoder = CsiEncoder::<f32>::new(&config, 1)?;
    let projection = ProjectionHead::<f32>::new(config.embedding_dim, 16, 1);
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 32,
        encoder_lr: 1e-3,
        temperature: 0.1,
        projection_dim: 16,
        seed: 1,
        ..TrainConfig::pretrain_preset()
    };
    let out = pretrain_contrastive(&encoder, &projection, &windows, &cfg, &AugmentPolicy::default())?;
    for line in &out.epoch_log {
        println!("{line}");
    }
    println!(
        "loss moved {:.4} -> {:.4}; checkpoint stage '{}'",
        out.epoch_losses.first().unwrap(),
        out.epoch_losses.last().unwrap(),
        out.checkpoint.provenance.stage
    );
    Ok(())
}
