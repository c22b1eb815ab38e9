//! Checkpoint persistence: atomic save, checksummed load, corruption
//! detection, and bit-exact forward behavior after a round trip.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use csicount::io::{Checkpoint, Provenance};
use csicount::model::{ClassificationHead, CsiEncoder, EncoderConfig, Mode};
use csicount::ndtensor::{Graph, Tensor};

fn main() -> csicount::Result<()> {
    let config = EncoderConfig {
        in_channels: 8,
        layer_channels: vec![8, 16],
        blocks_per_layer: 1,
        se_reduction: 4,
        adapter_bottleneck: 4,
        embedding_dim: 16,
        ..EncoderConfig::default()
    };
    let encoder = CsiEncoder::<f32>::new(&config, 4)?;
    let head = ClassificationHead::<f32>::new(config.embedding_dim, 3, 4);
    let ckpt = Checkpoint::from_model(
        &encoder,
        Some(&head),
        Provenance {
            seed: 4,
            epochs: 0,
            dataset_hash: "demo".into(),
            stage: "example".into(),
        },
    );

    let dir = std::env::temp_dir().join("csicount-ckpt-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");
    ckpt.save(&path)?;
    let bytes = std::fs::read(&path)?;
    println!("saved {} blobs, {} bytes", ckpt.blobs.len(), bytes.len());

    let loaded = Checkpoint::load(&path)?;
    let (enc2, head2) = loaded.build_model::<f32>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Tensor::<f32>::from_vec(
        &[1, config.in_channels, config.window_len],
        (0..config.in_channels * config.window_len)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
    )?;
    let g = Graph::inference();
    let a = head.forward(&g, &encoder.forward(&g, &x, Mode::Eval)?)?;
    let b = head2.unwrap().forward(&g, &enc2.forward(&g, &x, Mode::Eval)?)?;
    assert_eq!(a.data_clone(), b.data_clone());
    println!("round-trip forward pass is bit-identical");

    let mut corrupted = bytes.clone();
    corrupted[bytes.len() / 2] ^= 0x01;
    match Checkpoint::from_bytes(&corrupted) {
        Err(e) => println!("single flipped byte rejected: {e}"),
        Ok(_) => panic!("corrupted checkpoint accepted"),
    }
    Ok(())
}
