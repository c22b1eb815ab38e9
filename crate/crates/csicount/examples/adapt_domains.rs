//! Adversarial domain adaptation between two acquisition environments.
//!
//! The target profile applies an affine amplitude shift and more noise.
//! Before adaptation a freshly trained discriminator tells the domains
//! apart from frozen embeddings almost perfectly; after the adversarial
//! loop the adaptation discriminator scores near chance on held-out
//! windows it never trained on, showing the target encoder has pulled
//! its domain toward the source embedding space.

use csicount::augment::AugmentPolicy;
use csicount::dsp::Window;
use csicount::model::{CsiEncoder, EncoderConfig, ProjectionHead};
use csicount::synth::{generate_dataset, DomainProfile, PreprocessParams};
use csicount::train::{
    adda_adapt, discriminator_accuracy, domain_probe_accuracy, embed_windows,
    pretrain_contrastive, TrainConfig,
};

fn main() -> csicount::Result<()> {
    let params = PreprocessParams::default();
    let unlabeled = |profile: &DomainProfile, seed| -> csicount::Result<Vec<Window>> {
        let ds = generate_dataset(6, profile, (1.0, 0.0, 0.0), 16, &params, seed)?;
        Ok(ds.train.into_iter().map(|lw| lw.window).collect())
    };
    let src = unlabeled(&DomainProfile::source(), 31)?;
    let tgt = unlabeled(&DomainProfile::target(), 32)?;
    println!("{} source windows, {} target windows", src.len(), tgt.len());

    let config = EncoderConfig {
        in_channels: 16,
        layer_channels: vec![8, 16],
        blocks_per_layer: 1,
        se_reduction: 4,
        adapter_bottleneck: 4,
        embedding_dim: 32,
        ..EncoderConfig::default()
    };
    // a brief contrastive pre-training pass so the source encoder's
    // normalization statistics actually describe source data
    let source_encoder = CsiEncoder::<f32>::new(&config, 2)?;
    let projection = ProjectionHead::<f32>::new(config.embedding_dim, 16, 2);
    let pre_cfg = TrainConfig {
        epochs: 3,
        batch_size: 64,
        encoder_lr: 1e-3,
        projection_dim: 16,
        seed: 2,
        ..TrainConfig::pretrain_preset()
    };
    println!("pre-training the source encoder...");
    let pre = pretrain_contrastive(
        &source_encoder,
        &projection,
        &src,
        &pre_cfg,
        &AugmentPolicy::default(),
    )?;
    let source_ckpt = pre.checkpoint;
    let (source_encoder, _) = source_ckpt.build_model::<f32>()?;

    let src_emb = embed_windows(&source_encoder, &src)?;
    let before = domain_probe_accuracy(&src_emb, &embed_windows(&source_encoder, &tgt)?, 77)?;
    println!("fresh domain probe accuracy before adaptation: {before:.3}");

    // hold out the last 20% of each domain from the adversarial loop so
    // the discriminator can be scored on windows it never saw
    let cut_s = src.len() * 4 / 5;
    let cut_t = tgt.len() * 4 / 5;
    let cfg = TrainConfig {
        epochs: 15,
        batch_size: 32,
        encoder_lr: 1e-3,
        head_lr: 1e-3,
        seed: 2,
        ..TrainConfig::default()
    };
    let out = adda_adapt::<f32>(&source_ckpt, &src[..cut_s], &tgt[..cut_t], &cfg)?;
    for line in &out.epoch_log {
        println!("{line}");
    }

    let (target_encoder, _) = out.target_checkpoint.build_model::<f32>()?;
    let after = discriminator_accuracy(
        &out.discriminator,
        &embed_windows(&source_encoder, &src[cut_s..])?,
        &embed_windows(&target_encoder, &tgt[cut_t..])?,
    )?;
    println!("adaptation discriminator held-out accuracy: {after:.3}");
    println!("(source encoder untouched; only the target branch moved)");
    Ok(())
}
