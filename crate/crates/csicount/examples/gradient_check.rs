//! Verify the reverse-mode gradients of the full encoder numerically.
//!
//! Builds a reduced encoder in double precision, perturbs a sample of
//! elements in every parameter tensor with central differences, and
//! reports the worst relative disagreement with the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use csicount::model::{CsiEncoder, EncoderConfig, Mode};
use csicount::ndtensor::{grad_check_multi, ops, Tensor};

fn main() -> csicount::Result<()> {
    let config = EncoderConfig {
        in_channels: 3,
        window_len: 16,
        layer_channels: vec![4, 6],
        blocks_per_layer: 1,
        se_reduction: 2,
        adapter_bottleneck: 2,
        embedding_dim: 5,
        se_enabled: true,
        adapters_enabled: true,
    };
    let encoder = CsiEncoder::<f64>::new(&config, 11)?;

    // the adapter up-paths initialize to exactly zero, which parks the
    // preceding relu on its kink; nudge them so the check is well-posed
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for (path, t) in encoder.named_params() {
        if path.contains(".adapter.up") {
            let d: Vec<f64> = (0..t.numel()).map(|_| rng.gen_range(-0.2..0.2)).collect();
            t.set_data(d)?;
        }
    }

    let x = Tensor::from_vec(
        &[2, config.in_channels, config.window_len],
        (0..2 * config.in_channels * config.window_len)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
    )?;
    let mut inputs = vec![x.clone()];
    inputs.extend(encoder.named_params().into_iter().map(|(_, t)| t));
    println!(
        "checking {} tensors ({} parameters) plus the input batch",
        inputs.len() - 1,
        encoder.param_count()
    );

    let enc = encoder.clone();
    let err = grad_check_multi(
        move |g| {
            let e = enc.forward(g, &x, Mode::Train)?;
            Ok(ops::sum(g, &e))
        },
        &inputs,
        1e-5,
        8,
    )?;
    println!("max relative gradient error: {err:.3e}");
    assert!(err < 1e-4, "gradient check failed");
    println!("gradients verified");
    Ok(())
}
