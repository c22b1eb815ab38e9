//! Print the encoder's per-layer parameter table and compare the trainable
//! footprint of the fine-tuning strategies.

use csicount::model::{
    count_params, describe, set_trainable, ClassificationHead, CsiEncoder, EncoderConfig, MaskMode,
};

fn main() -> csicount::Result<()> {
    let config = EncoderConfig::default();
    let encoder = CsiEncoder::<f32>::new(&config, 0)?;
    let head = ClassificationHead::<f32>::new(config.embedding_dim, 6, 0);

    let mask = set_trainable(&encoder, Some(&head), MaskMode::Full);
    println!("{}", describe(&encoder, Some(&head), Some(&mask)));

    println!("trainable parameters by strategy (6-class head):");
    for mode in [
        MaskMode::Full,
        MaskMode::AdaptersAndHead,
        MaskMode::FinalBlockAndHead,
        MaskMode::HeadOnly,
    ] {
        let mask = set_trainable(&encoder, Some(&head), mode);
        let counts = count_params(&encoder, Some(&head), Some(&mask));
        println!(
            "  {:22} {:>9} of {} ({:.2}%)",
            mode.name(),
            counts.trainable,
            counts.total,
            100.0 * counts.trainable as f64 / counts.total as f64
        );
    }
    Ok(())
}
