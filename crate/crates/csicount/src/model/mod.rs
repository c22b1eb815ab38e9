//! The CSI-ResNet-A model family: encoder, task heads, domain
//! discriminator, and parameter freezing masks.

mod blocks;
mod encoder;
mod layers;

pub use blocks::{Adapter, ResidualBlock, SeBlock};
pub use encoder::{
    set_trainable, ClassificationHead, CsiEncoder, DomainDiscriminator, EncoderConfig, MaskMode,
    ProjectionHead, TrainableMask,
};
pub use layers::{BatchNorm1d, Conv1d, Linear, Mode, TensorKind, TensorVisitor};

use crate::ndtensor::ops::conv_out_len;
use crate::scalar::Scalar;

/// One row of the layer listing.
#[derive(Debug, Clone)]
pub struct LayerRow {
    pub name: String,
    pub output: String,
    pub params: usize,
    pub details: String,
}

fn group_separated(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Per-layer rows in network order, matching the architecture listing used
/// for manual diffing: initial block, residual blocks with their sublayers,
/// then the output head.
pub fn layer_table<T: Scalar>(
    enc: &CsiEncoder<T>,
    head: Option<&ClassificationHead<T>>,
) -> Vec<LayerRow> {
    let cfg = &enc.config;
    let mut rows = Vec::new();
    let dim = |c: usize, l: usize| format!("{c} x {l}");
    let mut len = cfg.window_len;
    rows.push(LayerRow {
        name: "input".into(),
        output: dim(cfg.in_channels, len),
        params: 0,
        details: String::new(),
    });

    len = conv_out_len(len, 7, 2, 3);
    let c0 = cfg.layer_channels[0];
    rows.push(LayerRow {
        name: "conv1 (Conv1d)".into(),
        output: dim(c0, len),
        params: enc.conv1.param_count(),
        details: "k=7, s=2, p=3".into(),
    });
    rows.push(LayerRow {
        name: "bn1 (BatchNorm1d)".into(),
        output: dim(c0, len),
        params: enc.bn1.param_count(),
        details: String::new(),
    });
    rows.push(LayerRow {
        name: "relu (ReLU)".into(),
        output: dim(c0, len),
        params: 0,
        details: String::new(),
    });
    len = conv_out_len(len, 3, 2, 1);
    rows.push(LayerRow {
        name: "pool1 (MaxPool1d)".into(),
        output: dim(c0, len),
        params: 0,
        details: "k=3, s=2, p=1".into(),
    });

    for (li, blocks) in enc.layers.iter().enumerate() {
        let c = cfg.layer_channels[li];
        for (bi, block) in blocks.iter().enumerate() {
            let stride = block.conv1.stride;
            if stride > 1 {
                len = conv_out_len(len, 3, stride, 1);
            }
            let block_name = format!("residual block {}.{}", li + 1, bi + 1);
            rows.push(LayerRow {
                name: block_name.clone(),
                output: dim(c, len),
                params: block.param_count(),
                details: String::new(),
            });
            let mut sub = |name: &str, params: usize, details: &str| {
                rows.push(LayerRow {
                    name: format!("  {name}"),
                    output: dim(c, len),
                    params,
                    details: details.into(),
                });
            };
            sub(
                "conv1",
                block.conv1.param_count(),
                &format!("k=3, s={stride}, p=1"),
            );
            sub("bn1", block.bn1.param_count(), "");
            sub("relu1", 0, "");
            sub("conv2", block.conv2.param_count(), "k=3, s=1, p=1");
            sub("bn2", block.bn2.param_count(), "");
            if let Some(se) = &block.se {
                sub(
                    "squeeze-excitation",
                    se.param_count(),
                    &format!("reduction={}", cfg.se_reduction),
                );
            }
            if let Some(a) = &block.adapter {
                sub(
                    "adapter",
                    a.param_count(),
                    &format!("bottleneck={}", cfg.adapter_bottleneck),
                );
            }
            if let Some((conv, bn)) = &block.shortcut {
                sub(
                    "shortcut",
                    conv.param_count() + bn.param_count(),
                    &format!("k=1, s={stride} + bn"),
                );
            }
            sub("add_shortcut", 0, "");
            sub("relu2", 0, "");
        }
    }

    let c_last = *cfg.layer_channels.last().unwrap();
    rows.push(LayerRow {
        name: "global avg pooling".into(),
        output: dim(c_last, 1),
        params: 0,
        details: String::new(),
    });
    rows.push(LayerRow {
        name: "fully connected".into(),
        output: format!("{}", cfg.embedding_dim),
        params: enc.fc.param_count(),
        details: format!("in={c_last}, out={}", cfg.embedding_dim),
    });
    if let Some(h) = head {
        rows.push(LayerRow {
            name: "classification head".into(),
            output: format!("{}", h.num_classes),
            params: h.param_count(),
            details: format!("in={}, out={}", cfg.embedding_dim, h.num_classes),
        });
    }
    rows
}

#[derive(Debug, Clone, Copy)]
pub struct ParamCounts {
    pub total: usize,
    pub trainable: usize,
}

pub fn count_params<T: Scalar>(
    enc: &CsiEncoder<T>,
    head: Option<&ClassificationHead<T>>,
    mask: Option<&TrainableMask>,
) -> ParamCounts {
    let total = enc.param_count() + head.map_or(0, ClassificationHead::param_count);
    let trainable = match mask {
        Some(m) => m.trainable_count(enc, head),
        None => total,
    };
    ParamCounts { total, trainable }
}

/// Human-readable layer listing with per-row parameter counts and totals.
pub fn describe<T: Scalar>(
    enc: &CsiEncoder<T>,
    head: Option<&ClassificationHead<T>>,
    mask: Option<&TrainableMask>,
) -> String {
    let rows = layer_table(enc, head);
    let mut out = String::new();
    out.push_str(&format!(
        "{:<26} {:>10} {:>12}  {}\n",
        "layer", "output", "params", "details"
    ));
    for r in &rows {
        out.push_str(&format!(
            "{:<26} {:>10} {:>12}  {}\n",
            r.name,
            r.output,
            group_separated(r.params),
            r.details
        ));
    }
    let counts = count_params(enc, head, mask);
    out.push_str(&format!(
        "total parameters      {}\n",
        group_separated(counts.total)
    ));
    out.push_str(&format!(
        "trainable parameters  {}{}\n",
        group_separated(counts.trainable),
        mask.map_or(String::new(), |m| format!("  (mode: {})", m.mode.name()))
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndtensor::{grad_check_multi, ops, Graph, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn default_encoder() -> CsiEncoder<f32> {
        CsiEncoder::new(&EncoderConfig::default(), 7).unwrap()
    }

    fn random_input(b: usize, c: usize, l: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..b * c * l).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(&[b, c, l], data).unwrap()
    }

    #[test]
    fn initial_conv_and_bn_counts() {
        let enc = default_encoder();
        assert_eq!(enc.conv1.param_count(), 23_360);
        assert_eq!(enc.bn1.param_count(), 128);
    }

    #[test]
    fn residual_block_sublayer_counts() {
        let enc = default_encoder();
        let b11 = &enc.layers[0][0];
        assert_eq!(b11.conv1.param_count(), 12_352);
        assert_eq!(b11.conv2.param_count(), 12_352);
        assert_eq!(b11.se.as_ref().unwrap().param_count(), 512);
        assert_eq!(b11.adapter.as_ref().unwrap().param_count(), 2_128);
        assert!(b11.shortcut.is_none());

        let b21 = &enc.layers[1][0];
        assert_eq!(b21.conv1.param_count(), 24_704);
        assert_eq!(b21.conv2.param_count(), 49_280);
        assert_eq!(b21.se.as_ref().unwrap().param_count(), 2_048);
        assert_eq!(b21.adapter.as_ref().unwrap().param_count(), 4_240);
        assert!(b21.shortcut.is_some());

        let b31 = &enc.layers[2][0];
        assert_eq!(b31.conv1.param_count(), 98_560);
        assert_eq!(b31.conv2.param_count(), 196_864);
        assert_eq!(b31.se.as_ref().unwrap().param_count(), 8_192);
        assert_eq!(b31.adapter.as_ref().unwrap().param_count(), 8_464);
    }

    #[test]
    fn block_1_2_total_is_27600() {
        let enc = default_encoder();
        assert_eq!(enc.layers[0][1].param_count(), 27_600);
    }

    #[test]
    fn fc_count_is_32896() {
        let enc = default_encoder();
        assert_eq!(enc.fc.param_count(), 32_896);
    }

    #[test]
    fn head_counts() {
        assert_eq!(ClassificationHead::<f32>::new(128, 3, 0).param_count(), 387);
        assert_eq!(ClassificationHead::<f32>::new(128, 6, 0).param_count(), 774);
    }

    #[test]
    fn trainable_counts_by_mode() {
        let enc = default_encoder();
        let head = ClassificationHead::<f32>::new(128, 6, 1);
        let full = set_trainable(&enc, Some(&head), MaskMode::Full);
        assert_eq!(
            full.trainable_count(&enc, Some(&head)),
            enc.param_count() + 774
        );
        let adapters = set_trainable(&enc, Some(&head), MaskMode::AdaptersAndHead);
        assert_eq!(adapters.trainable_count(&enc, Some(&head)), 30_438);
        let head_only = set_trainable(&enc, Some(&head), MaskMode::HeadOnly);
        assert_eq!(head_only.trainable_count(&enc, Some(&head)), 774);
    }

    #[test]
    fn adapters_mask_covers_exactly_six_adapters() {
        let enc = default_encoder();
        let head = ClassificationHead::<f32>::new(128, 6, 1);
        let mask = set_trainable(&enc, Some(&head), MaskMode::AdaptersAndHead);
        let adapter_paths: Vec<&String> = mask
            .trainable_paths()
            .filter(|p| p.contains(".adapter."))
            .collect();
        // 6 adapters x (down weight, down bias, up weight, up bias)
        assert_eq!(adapter_paths.len(), 24);
        let head_paths: Vec<&String> = mask
            .trainable_paths()
            .filter(|p| p.starts_with("head."))
            .collect();
        assert_eq!(head_paths.len(), 2);
        assert_eq!(mask.trainable_paths().count(), 26);
    }

    #[test]
    fn final_block_mask_selects_last_block() {
        let enc = default_encoder();
        let head = ClassificationHead::<f32>::new(128, 6, 1);
        let mask = set_trainable(&enc, Some(&head), MaskMode::FinalBlockAndHead);
        for p in mask.trainable_paths() {
            assert!(
                p.starts_with("layer3.block2.") || p.starts_with("head."),
                "unexpected trainable path {p}"
            );
        }
        assert_eq!(
            mask.trainable_count(&enc, Some(&head)),
            enc.layers[2][1].param_count() + 774
        );
    }

    #[test]
    fn adapter_is_exact_identity_at_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Adapter::<f32>::new(64, 16, &mut rng);
        let x = random_input(2, 64, 25, 3);
        let y = a.forward(&Graph::inference(), &x).unwrap();
        assert_eq!(x.data_clone(), y.data_clone());
    }

    #[test]
    fn adapter_zero_up_weight_with_bias_broadcasts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Adapter::<f32>::new(4, 2, &mut rng);
        a.up.bias
            .as_ref()
            .unwrap()
            .set_data(vec![1.0, -2.0, 0.5, 0.0])
            .unwrap();
        let x = random_input(1, 4, 3, 9);
        let y = a.forward(&Graph::inference(), &x).unwrap();
        let xd = x.data_clone();
        let yd = y.data_clone();
        let bias = [1.0f32, -2.0, 0.5, 0.0];
        for c in 0..4 {
            for t in 0..3 {
                assert!((yd[c * 3 + t] - (xd[c * 3 + t] + bias[c])).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn se_zero_weights_halve_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let se = SeBlock::<f32>::new(8, 2, &mut rng);
        se.w1.weight.set_data(vec![0.0; se.w1.weight.numel()]).unwrap();
        se.w2.weight.set_data(vec![0.0; se.w2.weight.numel()]).unwrap();
        let x = random_input(2, 8, 5, 1);
        let y = se.forward(&Graph::inference(), &x).unwrap();
        for (a, b) in x.data_clone().iter().zip(y.data_clone()) {
            assert!((a * 0.5 - b).abs() < 1e-7);
        }
    }

    #[test]
    fn se_gate_constant_along_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let se = SeBlock::<f32>::new(8, 4, &mut rng);
        let x = random_input(2, 8, 7, 6);
        let y = se.forward(&Graph::inference(), &x).unwrap();
        let xd = x.data_clone();
        let yd = y.data_clone();
        for bc in 0..16 {
            let base = yd[bc * 7] / xd[bc * 7];
            for t in 1..7 {
                assert!((yd[bc * 7 + t] / xd[bc * 7 + t] - base).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn se_two_channel_hand_case() {
        // GAP = [1, 0]; W1 = [[0.5, 0]], W2 = [[2], [1]]
        // h = relu(0.5) = 0.5; s = sigmoid([1.0, 0.5])
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let se = SeBlock::<f64>::new(2, 2, &mut rng);
        se.w1.weight.set_data(vec![0.5, 0.0]).unwrap();
        se.w2.weight.set_data(vec![2.0, 1.0]).unwrap();
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let y = se.forward(&Graph::inference(), &x).unwrap();
        let s0 = 1.0 / (1.0 + (-1.0f64).exp());
        let yd = y.data_clone();
        assert!((yd[0] - s0).abs() < 1e-12);
        assert!((yd[1] - s0).abs() < 1e-12);
        assert_eq!(yd[2], 0.0);
        assert_eq!(yd[3], 0.0);
    }

    #[test]
    fn se_monotone_gate_under_nonnegative_weights() {
        // with W1, W2 >= 0, raising a channel's mean cannot lower its gate
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let se = SeBlock::<f64>::new(4, 2, &mut rng);
            let w1: Vec<f64> = (0..se.w1.weight.numel()).map(|_| rng.gen_range(0.0..1.0)).collect();
            let w2: Vec<f64> = (0..se.w2.weight.numel()).map(|_| rng.gen_range(0.0..1.0)).collect();
            se.w1.weight.set_data(w1).unwrap();
            se.w2.weight.set_data(w2).unwrap();
            let base: Vec<f64> = (0..4 * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut boosted = base.clone();
            for t in 0..3 {
                boosted[t] += 0.5; // raise channel 0's mean
            }
            let gate = |data: Vec<f64>| {
                let x = Tensor::from_vec(&[1, 4, 3], data.clone()).unwrap();
                let y = se.forward(&Graph::inference(), &x).unwrap();
                y.data_clone()[0] / data[0]
            };
            let g_lo = gate(base.clone());
            let mut with_boost = base;
            for t in 0..3 {
                with_boost[t] += 0.5;
            }
            // evaluate the gate on the same first element for a fair ratio
            let x_hi = Tensor::from_vec(&[1, 4, 3], boosted.clone()).unwrap();
            let y_hi = se.forward(&Graph::inference(), &x_hi).unwrap();
            let g_hi = y_hi.data_clone()[0] / boosted[0];
            assert!(g_hi >= g_lo - 1e-12, "trial {trial}: {g_hi} < {g_lo}");
        }
    }

    #[test]
    fn residual_block_shapes() {
        let enc = default_encoder();
        let g = Graph::inference();
        let x = random_input(1, 64, 25, 0);
        let y = enc.layers[0][0].forward(&g, &x, Mode::Eval).unwrap();
        assert_eq!(y.shape(), vec![1, 64, 25]);
        let y = enc.layers[1][0].forward(&g, &x, Mode::Eval).unwrap();
        assert_eq!(y.shape(), vec![1, 128, 13]);
    }

    #[test]
    fn zeroed_residual_path_reduces_to_shortcut() {
        let cfg = EncoderConfig {
            in_channels: 4,
            window_len: 20,
            layer_channels: vec![4, 8],
            blocks_per_layer: 1,
            se_reduction: 2,
            adapter_bottleneck: 2,
            embedding_dim: 8,
            se_enabled: false,
            adapters_enabled: false,
        };
        let enc = CsiEncoder::<f32>::new(&cfg, 3).unwrap();
        let block = &enc.layers[1][0]; // has a projection shortcut
        for t in [&block.conv2.weight, &block.bn2.gamma] {
            t.set_data(vec![0.0; t.numel()]).unwrap();
        }
        if let Some(b) = &block.conv2.bias {
            b.set_data(vec![0.0; b.numel()]).unwrap();
        }
        block.bn2.beta.set_data(vec![0.0; 8]).unwrap();
        let g = Graph::inference();
        let x = random_input(2, 4, 5, 8);
        let y = block.forward(&g, &x, Mode::Eval).unwrap();
        let (conv, bn) = block.shortcut.as_ref().unwrap();
        let sc = bn
            .forward(&g, &conv.forward(&g, &x).unwrap(), Mode::Eval)
            .unwrap();
        let expect: Vec<f32> = sc.data_clone().iter().map(|v| v.max(0.0)).collect();
        assert_eq!(y.data_clone(), expect);
    }

    #[test]
    fn encoder_output_shape_and_determinism() {
        let enc = default_encoder();
        let g = Graph::inference();
        let x = random_input(3, 52, 100, 21);
        let e1 = enc.forward(&g, &x, Mode::Eval).unwrap();
        assert_eq!(e1.shape(), vec![3, 128]);
        let e2 = enc.forward(&g, &x, Mode::Eval).unwrap();
        assert_eq!(e1.data_clone(), e2.data_clone());
    }

    #[test]
    fn encoder_rejects_wrong_channels() {
        let enc = default_encoder();
        let x = random_input(1, 51, 100, 0);
        assert!(enc.forward(&Graph::inference(), &x, Mode::Eval).is_err());
    }

    #[test]
    fn intermediate_lengths_follow_table() {
        let mut len = 100;
        len = conv_out_len(len, 7, 2, 3);
        assert_eq!(len, 50);
        len = conv_out_len(len, 3, 2, 1);
        assert_eq!(len, 25);
        len = conv_out_len(len, 3, 2, 1);
        assert_eq!(len, 13);
        len = conv_out_len(len, 3, 2, 1);
        assert_eq!(len, 7);
    }

    #[test]
    fn eval_mode_does_not_touch_running_stats() {
        let enc = default_encoder();
        let before = enc.bn1.running_mean.data_clone();
        let x = random_input(2, 52, 100, 13);
        enc.forward(&Graph::inference(), &x, Mode::Eval).unwrap();
        assert_eq!(enc.bn1.running_mean.data_clone(), before);
    }

    #[test]
    fn train_mode_updates_running_stats() {
        let enc = default_encoder();
        let before = enc.bn1.running_mean.data_clone();
        let x = random_input(2, 52, 100, 13);
        enc.forward(&Graph::inference(), &x, Mode::Train).unwrap();
        assert_ne!(enc.bn1.running_mean.data_clone(), before);
    }

    #[test]
    fn projection_and_discriminator_shapes() {
        let proj = ProjectionHead::<f32>::new(128, 64, 2);
        let disc = DomainDiscriminator::<f32>::new(128, 64, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = Tensor::from_vec(
            &[5, 128],
            (0..5 * 128).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let g = Graph::inference();
        assert_eq!(proj.forward(&g, &e).unwrap().shape(), vec![5, 64]);
        assert_eq!(disc.forward(&g, &e).unwrap().shape(), vec![5, 1]);
    }

    #[test]
    fn describe_contains_table_entries() {
        let enc = default_encoder();
        let head = ClassificationHead::<f32>::new(128, 6, 1);
        let mask = set_trainable(&enc, Some(&head), MaskMode::AdaptersAndHead);
        let text = describe(&enc, Some(&head), Some(&mask));
        for needle in ["23,360", "32,896", "2,128", "4,240", "8,464", "30,438"] {
            assert!(text.contains(needle), "missing {needle} in:\n{text}");
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = EncoderConfig::default();
        cfg.se_reduction = 7; // does not divide 64
        assert!(CsiEncoder::<f32>::new(&cfg, 0).is_err());
        let mut cfg = EncoderConfig::default();
        cfg.layer_channels.clear();
        assert!(CsiEncoder::<f32>::new(&cfg, 0).is_err());
    }

    #[test]
    fn plain_resnet_variant_passes_gradient_check() {
        let cfg = EncoderConfig {
            in_channels: 2,
            window_len: 12,
            layer_channels: vec![4, 4],
            blocks_per_layer: 1,
            se_reduction: 2,
            adapter_bottleneck: 2,
            embedding_dim: 3,
            se_enabled: false,
            adapters_enabled: false,
        };
        encoder_grad_check(&cfg, 17);
    }

    #[test]
    fn full_encoder_passes_gradient_check() {
        let cfg = EncoderConfig {
            in_channels: 2,
            window_len: 12,
            layer_channels: vec![4, 6],
            blocks_per_layer: 2,
            se_reduction: 2,
            adapter_bottleneck: 2,
            embedding_dim: 3,
            se_enabled: true,
            adapters_enabled: true,
        };
        encoder_grad_check(&cfg, 23);
    }

    fn encoder_grad_check(cfg: &EncoderConfig, seed: u64) {
        let enc = CsiEncoder::<f64>::new(cfg, seed).unwrap();
        // nudge the zero-initialized adapter up-paths off their relu kink
        for (path, t) in enc.named_params() {
            if path.contains(".adapter.up") {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ t.numel() as u64);
                let d: Vec<f64> = (0..t.numel()).map(|_| rng.gen_range(-0.2..0.2)).collect();
                t.set_data(d).unwrap();
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let x = Tensor::from_vec(
            &[2, cfg.in_channels, cfg.window_len],
            (0..2 * cfg.in_channels * cfg.window_len)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        )
        .unwrap();
        let mut inputs: Vec<Tensor<f64>> = vec![x.clone()];
        inputs.extend(enc.named_params().into_iter().map(|(_, t)| t));
        let enc2 = enc.clone();
        let err = grad_check_multi(
            move |g| {
                let e = enc2.forward(g, &x, Mode::Train)?;
                Ok(ops::sum(g, &e))
            },
            &inputs,
            1e-5,
            6,
        )
        .unwrap();
        assert!(err < 1e-6, "encoder gradient error {err}");
    }
}
