//! The full classify-then-count pipeline on synthetic data, in miniature:
//! generate sessions, contrastively pre-train, fine-tune adapters, classify
//! held-out windows, and fold the predictions into occupancy counts.

use csicount::augment::AugmentPolicy;
use csicount::counter::{run_trace, CounterConfig};
use csicount::dsp::Window;
use csicount::metrics::{classification_metrics, counting_errors};
use csicount::model::{CsiEncoder, EncoderConfig, MaskMode, ProjectionHead};
use csicount::synth::{generate_dataset, DomainProfile, PreprocessParams};
use csicount::train::{finetune, predict_windows, pretrain_contrastive, TrainConfig};
use csicount::EventLabel;

fn main() -> csicount::Result<()> {
    let params = PreprocessParams::default();
    let ds = generate_dataset(24, &DomainProfile::source(), (0.7, 0.1, 0.2), 16, &params, 50)?;
    println!(
        "{} train / {} val / {} test windows, {} test sessions",
        ds.train.len(),
        ds.val.len(),
        ds.test.len(),
        ds.test_sessions.len()
    );

    let config = EncoderConfig {
        in_channels: 16,
        layer_channels: vec![16, 32, 64],
        blocks_per_layer: 1,
        se_reduction: 4,
        adapter_bottleneck: 8,
        embedding_dim: 32,
        ..EncoderConfig::default()
    };
    let encoder = CsiEncoder::<f32>::new(&config, 3)?;
    let projection = ProjectionHead::<f32>::new(config.embedding_dim, 16, 3);
    let unlabeled: Vec<Window> = ds.train.iter().map(|lw| lw.window.clone()).collect();
    let pre_cfg = TrainConfig {
        epochs: 6,
        batch_size: 64,
        encoder_lr: 1e-3,
        projection_dim: 16,
        seed: 3,
        ..TrainConfig::pretrain_preset()
    };
    println!("pre-training...");
    let pre = pretrain_contrastive(&encoder, &projection, &unlabeled, &pre_cfg, &AugmentPolicy::default())?;

    let ft_cfg = TrainConfig {
        epochs: 25,
        batch_size: 32,
        encoder_lr: 1e-3,
        head_lr: 1e-2,
        seed: 3,
        ..TrainConfig::wiflow_preset()
    };
    println!("fine-tuning adapters...");
    let ft = finetune::<f32>(&pre.checkpoint, &ds.train, 3, MaskMode::AdaptersAndHead, &ft_cfg)?;
    println!("trainable parameters: {}", ft.trainable_params);

    let (enc, head) = ft.checkpoint.build_model::<f32>()?;
    let head = head.unwrap();
    let labels: Vec<EventLabel> = ds.test.iter().map(|lw| lw.label).collect();
    let windows: Vec<Window> = ds.test.iter().map(|lw| lw.window.clone()).collect();
    let preds = predict_windows(&enc, &head, &windows)?;
    let report = classification_metrics(&preds, &labels)?;
    println!("held-out window accuracy: {:.3}", report.accuracy);

    let counter_cfg = CounterConfig::default();
    let mut estimates = Vec::new();
    let mut truths = Vec::new();
    for session in &ds.test_sessions {
        let windows: Vec<Window> = session.windows.iter().map(|lw| lw.window.clone()).collect();
        let preds = predict_windows(&enc, &head, &windows)?;
        let trace = run_trace(&preds, &counter_cfg)?;
        println!(
            "session {}: counted {} vs true {}",
            session.script.name,
            trace.final_occupancy(),
            session.final_occupancy
        );
        estimates.push(trace.final_occupancy());
        truths.push(session.final_occupancy);
    }
    let (mae, rmse) = counting_errors(&estimates, &truths)?;
    println!("occupancy mae {mae:.3}, rmse {rmse:.3}");
    Ok(())
}
