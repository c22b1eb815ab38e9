//! The training loops themselves.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{make_view_pair, AugmentPolicy};
use crate::dsp::{LabeledWindow, Window};
use crate::io::{dataset_hash, Checkpoint, Provenance};
use crate::loss::{
    adda_discriminator_loss, adda_generator_loss, cross_entropy, focal_loss, nt_xent,
    ContrastiveBatch,
};
use crate::metrics::{classification_metrics, MetricReport};
use crate::model::{
    set_trainable, ClassificationHead, CsiEncoder, DomainDiscriminator, MaskMode, Mode,
    ProjectionHead, TrainableMask,
};
use crate::ndtensor::{Graph, Tensor};
use crate::scalar::Scalar;
use crate::train::{LossKind, TrainConfig};
use crate::{Error, EventLabel, Result};

/// Pack windows into a B x C x L batch tensor (windows store L x C rows).
pub fn windows_to_tensor<T: Scalar>(windows: &[&Window]) -> Result<Tensor<T>> {
    if windows.is_empty() {
        return Err(Error::InvalidArg("empty window batch".into()));
    }
    let l = windows[0].len();
    let c = windows[0].num_subcarriers();
    let b = windows.len();
    let mut data = vec![T::zero(); b * c * l];
    for (bi, w) in windows.iter().enumerate() {
        if w.len() != l || w.num_subcarriers() != c {
            return Err(Error::ShapeMismatch(format!(
                "window {bi} is {}x{}, expected {l}x{c}",
                w.len(),
                w.num_subcarriers()
            )));
        }
        for (t, row) in w.values.iter().enumerate() {
            for (ci, &v) in row.iter().enumerate() {
                data[(bi * c + ci) * l + t] = T::from_f64(v);
            }
        }
    }
    Tensor::from_vec(&[b, c, l], data)
}

/// Mark exactly the mask's parameters as gradient-tracked so frozen
/// parameters receive no gradients at all.
fn apply_mask<T: Scalar>(
    encoder: &CsiEncoder<T>,
    head: Option<&ClassificationHead<T>>,
    mask: &TrainableMask,
) {
    for (path, t) in encoder.named_params() {
        t.set_requires_grad(mask.is_trainable(&path));
    }
    if let Some(h) = head {
        for (path, t) in h.named_params() {
            t.set_requires_grad(mask.is_trainable(&path));
        }
    }
}

fn shuffled_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size).map(|c| c.to_vec()).collect()
}

#[derive(Debug)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub epoch_losses: Vec<f64>,
    pub epoch_log: Vec<String>,
}

/// NT-Xent pre-training over augmented view pairs. The projection head is
/// trained alongside the encoder but never serialized into the checkpoint.
pub fn pretrain_contrastive<T: Scalar>(
    encoder: &CsiEncoder<T>,
    projection: &ProjectionHead<T>,
    windows: &[Window],
    cfg: &TrainConfig,
    policy: &AugmentPolicy,
) -> Result<PretrainOutcome> {
    cfg.validate(true)?;
    if windows.len() < cfg.batch_size.min(2) {
        return Err(Error::InvalidArg(format!(
            "pre-training needs at least {} windows, got {}",
            cfg.batch_size.min(2),
            windows.len()
        )));
    }
    policy.validate(windows[0].len())?;
    let mut opt = crate::train::Adam::<T>::new();
    opt.add_params(&encoder.named_params(), cfg.encoder_lr);
    opt.add_params(&projection.named_params(), cfg.encoder_lr);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tau = T::from_f64(cfg.temperature);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut epoch_log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut batches_run = 0usize;
        for batch in shuffled_batches(windows.len(), cfg.batch_size, &mut rng) {
            if batch.len() < 2 {
                continue; // a single pair has no negatives worth training on
            }
            let mut views: Vec<Window> = Vec::with_capacity(2 * batch.len());
            for &i in &batch {
                let (a, b) = make_view_pair(&windows[i], policy, &mut rng);
                views.push(a);
                views.push(b);
            }
            let refs: Vec<&Window> = views.iter().collect();
            let x = windows_to_tensor::<T>(&refs)?;
            let g = Graph::new();
            let e = encoder.forward(&g, &x, Mode::Train)?;
            let z = projection.forward(&g, &e)?;
            let loss = nt_xent(
                &g,
                &ContrastiveBatch {
                    projections: z,
                    temperature: tau,
                },
            )?;
            loss_sum += loss.item().to_f64();
            batches_run += 1;
            g.backward(&loss)?;
            opt.step()?;
            opt.zero_grad();
        }
        let mean = if batches_run > 0 {
            loss_sum / batches_run as f64
        } else {
            0.0
        };
        epoch_losses.push(mean);
        epoch_log.push(format!("epoch={} loss={mean:.6}", epoch + 1));
    }
    let checkpoint = Checkpoint::from_model(
        encoder,
        None,
        Provenance {
            seed: cfg.seed,
            epochs: cfg.epochs,
            dataset_hash: dataset_hash(windows),
            stage: "pretrain".into(),
        },
    );
    Ok(PretrainOutcome {
        checkpoint,
        epoch_losses,
        epoch_log,
    })
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub epoch_losses: Vec<f64>,
    pub epoch_log: Vec<String>,
    pub trainable_params: usize,
}

fn supervised_loss<T: Scalar>(
    g: &Graph<T>,
    logits: &Tensor<T>,
    labels: &[usize],
    kind: LossKind,
) -> Result<Tensor<T>> {
    match kind {
        LossKind::CrossEntropy => cross_entropy(g, logits, labels),
        LossKind::Focal { gamma } => focal_loss(g, logits, labels, T::from_f64(gamma)),
    }
}

/// Supervised fine-tuning from a checkpoint under a trainability mask, with
/// a freshly initialized classification head. Frozen batch-norm layers stay
/// in eval mode, so the backbone (and its running statistics) are
/// bit-unchanged unless the mask is `Full`.
pub fn finetune<T: Scalar>(
    parent: &Checkpoint,
    labeled: &[LabeledWindow],
    num_classes: usize,
    mode: MaskMode,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate(false)?;
    if labeled.is_empty() {
        return Err(Error::InvalidArg("fine-tuning needs labeled windows".into()));
    }
    let (encoder, _) = parent.build_model::<T>()?;
    let head = ClassificationHead::<T>::new(encoder.config.embedding_dim, num_classes, cfg.seed);
    let mask = set_trainable(&encoder, Some(&head), mode);
    apply_mask(&encoder, Some(&head), &mask);
    let fwd_mode = if mode == MaskMode::Full {
        Mode::Train
    } else {
        Mode::Eval
    };

    let mut opt = crate::train::Adam::<T>::new();
    for (path, t) in encoder.named_params() {
        if mask.is_trainable(&path) {
            opt.add_param(&path, &t, cfg.encoder_lr);
        }
    }
    opt.add_params(&head.named_params(), cfg.head_lr);
    let trainable_params = mask.trainable_count(&encoder, Some(&head));

    let labels: Vec<usize> = labeled.iter().map(|lw| lw.label.class_index()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut epoch_losses = Vec::new();
    let mut epoch_log = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut nb = 0usize;
        for batch in shuffled_batches(labeled.len(), cfg.batch_size, &mut rng) {
            let refs: Vec<&Window> = batch.iter().map(|&i| &labeled[i].window).collect();
            let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let x = windows_to_tensor::<T>(&refs)?;
            let g = Graph::new();
            let e = encoder.forward(&g, &x, fwd_mode)?;
            let logits = head.forward(&g, &e)?;
            let loss = supervised_loss(&g, &logits, &batch_labels, cfg.loss)?;
            loss_sum += loss.item().to_f64();
            nb += 1;
            g.backward(&loss)?;
            opt.step()?;
            opt.zero_grad();
        }
        let mean = loss_sum / nb.max(1) as f64;
        epoch_losses.push(mean);
        epoch_log.push(format!("epoch={} loss={mean:.6}", epoch + 1));
    }
    let windows: Vec<Window> = labeled.iter().map(|lw| lw.window.clone()).collect();
    let checkpoint = Checkpoint::from_model(
        &encoder,
        Some(&head),
        Provenance {
            seed: cfg.seed,
            epochs: cfg.epochs,
            dataset_hash: dataset_hash(&windows),
            stage: format!("finetune_{}", mode.name()),
        },
    );
    Ok(TrainOutcome {
        checkpoint,
        epoch_losses,
        epoch_log,
        trainable_params,
    })
}

/// Train only the head on embeddings computed once in eval mode and cached.
pub fn linear_probe<T: Scalar>(
    parent: &Checkpoint,
    labeled: &[LabeledWindow],
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate(false)?;
    if labeled.is_empty() {
        return Err(Error::InvalidArg("probing needs labeled windows".into()));
    }
    let (encoder, _) = parent.build_model::<T>()?;
    let head = ClassificationHead::<T>::new(encoder.config.embedding_dim, num_classes, cfg.seed);
    let mask = set_trainable(&encoder, Some(&head), MaskMode::HeadOnly);
    apply_mask(&encoder, Some(&head), &mask);
    let trainable_params = mask.trainable_count(&encoder, Some(&head));

    // cache eval-mode embeddings once
    let d = encoder.config.embedding_dim;
    let mut cached = vec![T::zero(); labeled.len() * d];
    for (start, chunk) in labeled.chunks(64).enumerate().map(|(i, c)| (i * 64, c)) {
        let refs: Vec<&Window> = chunk.iter().map(|lw| &lw.window).collect();
        let x = windows_to_tensor::<T>(&refs)?;
        let e = encoder.forward(&Graph::inference(), &x, Mode::Eval)?;
        let ed = e.data_clone();
        cached[start * d..(start + chunk.len()) * d].copy_from_slice(&ed);
    }

    let labels: Vec<usize> = labeled.iter().map(|lw| lw.label.class_index()).collect();
    let mut opt = crate::train::Adam::<T>::new();
    opt.add_params(&head.named_params(), cfg.head_lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut epoch_losses = Vec::new();
    let mut epoch_log = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut nb = 0usize;
        for batch in shuffled_batches(labeled.len(), cfg.batch_size, &mut rng) {
            let mut data = Vec::with_capacity(batch.len() * d);
            for &i in &batch {
                data.extend_from_slice(&cached[i * d..(i + 1) * d]);
            }
            let e = Tensor::from_vec(&[batch.len(), d], data)?;
            let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let g = Graph::new();
            let logits = head.forward(&g, &e)?;
            let loss = cross_entropy(&g, &logits, &batch_labels)?;
            loss_sum += loss.item().to_f64();
            nb += 1;
            g.backward(&loss)?;
            opt.step()?;
            opt.zero_grad();
        }
        let mean = loss_sum / nb.max(1) as f64;
        epoch_losses.push(mean);
        epoch_log.push(format!("epoch={} loss={mean:.6}", epoch + 1));
    }
    let windows: Vec<Window> = labeled.iter().map(|lw| lw.window.clone()).collect();
    let checkpoint = Checkpoint::from_model(
        &encoder,
        Some(&head),
        Provenance {
            seed: cfg.seed,
            epochs: cfg.epochs,
            dataset_hash: dataset_hash(&windows),
            stage: "probe".into(),
        },
    );
    Ok(TrainOutcome {
        checkpoint,
        epoch_losses,
        epoch_log,
        trainable_params,
    })
}

/// Batched eval-mode classification of windows.
pub fn predict_windows<T: Scalar>(
    encoder: &CsiEncoder<T>,
    head: &ClassificationHead<T>,
    windows: &[Window],
) -> Result<Vec<EventLabel>> {
    let mut preds = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(64) {
        let refs: Vec<&Window> = chunk.iter().collect();
        let x = windows_to_tensor::<T>(&refs)?;
        let g = Graph::inference();
        let e = encoder.forward(&g, &x, Mode::Eval)?;
        let logits = head.forward(&g, &e)?;
        let ld = logits.data_clone();
        let k = head.num_classes;
        for b in 0..chunk.len() {
            let row = &ld[b * k..(b + 1) * k];
            let arg = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            preds.push(EventLabel::from_class_index(arg, k)?);
        }
    }
    Ok(preds)
}

/// Batched eval-mode embeddings, one row per window.
pub fn embed_windows<T: Scalar>(
    encoder: &CsiEncoder<T>,
    windows: &[Window],
) -> Result<Vec<Vec<f64>>> {
    let d = encoder.config.embedding_dim;
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(64) {
        let refs: Vec<&Window> = chunk.iter().collect();
        let x = windows_to_tensor::<T>(&refs)?;
        let e = encoder.forward(&Graph::inference(), &x, Mode::Eval)?;
        let ed = e.data_clone();
        for b in 0..chunk.len() {
            out.push(ed[b * d..(b + 1) * d].iter().map(|&v| Scalar::to_f64(v)).collect());
        }
    }
    Ok(out)
}

/// Domain accuracy of an existing discriminator over embedding rows
/// (source labeled positive, target negative).
pub fn discriminator_accuracy<T: Scalar>(
    disc: &DomainDiscriminator<T>,
    source: &[Vec<f64>],
    target: &[Vec<f64>],
) -> Result<f64> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::InvalidArg("need embeddings from both domains".into()));
    }
    let g = Graph::inference();
    let mut correct = 0usize;
    for (rows, is_source) in [(source, true), (target, false)] {
        let d = rows[0].len();
        let x = Tensor::from_vec(
            &[rows.len(), d],
            rows.iter().flatten().map(|&v| T::from_f64(v)).collect(),
        )?;
        let logits = disc.forward(&g, &x)?;
        for &v in logits.data_clone().iter() {
            if (Scalar::to_f64(v) > 0.0) == is_source {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / (source.len() + target.len()) as f64)
}

/// How separable two embedding sets are: train a fresh discriminator on
/// the even-indexed rows, report its accuracy on the odd-indexed rows.
/// Near 1.0 means a strong domain gap; near 0.5 means aligned domains.
pub fn domain_probe_accuracy(
    source: &[Vec<f64>],
    target: &[Vec<f64>],
    seed: u64,
) -> Result<f64> {
    if source.len() < 2 || target.len() < 2 {
        return Err(Error::InvalidArg(
            "domain probe needs at least 2 embeddings per domain".into(),
        ));
    }
    let d = source[0].len();
    if target[0].len() != d {
        return Err(Error::ShapeMismatch(format!(
            "embedding dims differ: {d} vs {}",
            target[0].len()
        )));
    }
    let split = |rows: &[Vec<f64>]| -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let train = rows.iter().step_by(2).cloned().collect();
        let held = rows.iter().skip(1).step_by(2).cloned().collect();
        (train, held)
    };
    let (src_train, src_held) = split(source);
    let (tgt_train, tgt_held) = split(target);
    let to_tensor = |rows: &[Vec<f64>]| -> Result<Tensor<f64>> {
        Tensor::from_vec(&[rows.len(), d], rows.concat())
    };
    let disc = DomainDiscriminator::<f64>::new(d, 64, seed);
    let mut opt = crate::train::Adam::<f64>::new();
    opt.add_params(&disc.named_params(), 1e-2);
    let xs = to_tensor(&src_train)?;
    let xt = to_tensor(&tgt_train)?;
    for _ in 0..200 {
        let g = Graph::new();
        let ds = disc.forward(&g, &xs)?;
        let dt = disc.forward(&g, &xt)?;
        let loss = adda_discriminator_loss(&g, &ds, &dt)?;
        g.backward(&loss)?;
        opt.step()?;
        opt.zero_grad();
    }
    let mut correct = 0usize;
    let g = Graph::inference();
    for (rows, is_source) in [(&src_held, true), (&tgt_held, false)] {
        let logits = disc.forward(&g, &to_tensor(rows)?)?;
        for &v in logits.data_clone().iter() {
            // discriminator labels source 1, target 0
            if (v > 0.0) == is_source {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / (src_held.len() + tgt_held.len()) as f64)
}

#[derive(Debug)]
pub struct AddaOutcome<T: Scalar> {
    pub target_checkpoint: Checkpoint,
    /// The adversary at the end of adaptation. Its accuracy on held-out
    /// embeddings is the standard alignment diagnostic: near chance when
    /// the target encoder fools it beyond the training minibatches.
    pub discriminator: DomainDiscriminator<T>,
    pub disc_losses: Vec<f64>,
    pub gen_losses: Vec<f64>,
    pub epoch_log: Vec<String>,
}

/// Adversarial feature alignment: the frozen source encoder defines the
/// reference embedding distribution; the target encoder (initialized from
/// it) is trained so a jointly trained discriminator cannot tell target
/// embeddings from source ones. One discriminator step then one generator
/// step per batch.
pub fn adda_adapt<T: Scalar>(
    source_ckpt: &Checkpoint,
    source_windows: &[Window],
    target_windows: &[Window],
    cfg: &TrainConfig,
) -> Result<AddaOutcome<T>> {
    cfg.validate(false)?;
    if source_windows.is_empty() || target_windows.is_empty() {
        return Err(Error::InvalidArg(
            "adda needs non-empty source and target window sets".into(),
        ));
    }
    let (source, _) = source_ckpt.build_model::<T>()?;
    for (_, t) in source.named_params() {
        t.set_requires_grad(false);
    }
    let (target, _) = source_ckpt.build_model::<T>()?;
    let disc = DomainDiscriminator::<T>::new(source.config.embedding_dim, 64, cfg.seed ^ 0xd15c);

    let mut opt_g = crate::train::Adam::<T>::new();
    opt_g.add_params(&target.named_params(), cfg.encoder_lr);
    let mut opt_d = crate::train::Adam::<T>::new();
    opt_d.add_params(&disc.named_params(), cfg.head_lr);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut disc_losses = Vec::new();
    let mut gen_losses = Vec::new();
    let mut epoch_log = Vec::new();
    for epoch in 0..cfg.epochs {
        let src_batches = shuffled_batches(source_windows.len(), cfg.batch_size, &mut rng);
        let tgt_batches = shuffled_batches(target_windows.len(), cfg.batch_size, &mut rng);
        let mut d_sum = 0.0;
        let mut g_sum = 0.0;
        let mut nb = 0usize;
        for (sb, tb) in src_batches.iter().zip(&tgt_batches) {
            let src_refs: Vec<&Window> = sb.iter().map(|&i| &source_windows[i]).collect();
            let tgt_refs: Vec<&Window> = tb.iter().map(|&i| &target_windows[i]).collect();
            let x_src = windows_to_tensor::<T>(&src_refs)?;
            let x_tgt = windows_to_tensor::<T>(&tgt_refs)?;

            // discriminator step: both embeddings detached
            let e_src = source.forward(&Graph::inference(), &x_src, Mode::Eval)?;
            let e_tgt = target.forward(&Graph::inference(), &x_tgt, Mode::Eval)?;
            let g = Graph::new();
            let d_src = disc.forward(&g, &e_src)?;
            let d_tgt = disc.forward(&g, &e_tgt)?;
            let d_loss = adda_discriminator_loss(&g, &d_src, &d_tgt)?;
            d_sum += d_loss.item().to_f64();
            g.backward(&d_loss)?;
            opt_d.step()?;
            opt_d.zero_grad();

            // generator step: gradients flow into the target encoder only
            let g = Graph::new();
            let e_tgt = target.forward(&g, &x_tgt, Mode::Train)?;
            let d_tgt = disc.forward(&g, &e_tgt)?;
            let g_loss = adda_generator_loss(&g, &d_tgt)?;
            g_sum += g_loss.item().to_f64();
            g.backward(&g_loss)?;
            opt_g.step()?;
            opt_g.zero_grad();
            opt_d.zero_grad(); // drop incidental discriminator gradients
            nb += 1;
        }
        let (dm, gm) = (d_sum / nb.max(1) as f64, g_sum / nb.max(1) as f64);
        disc_losses.push(dm);
        gen_losses.push(gm);
        epoch_log.push(format!(
            "epoch={} disc_loss={dm:.6} gen_loss={gm:.6}",
            epoch + 1
        ));
    }
    let target_checkpoint = Checkpoint::from_model(
        &target,
        None,
        Provenance {
            seed: cfg.seed,
            epochs: cfg.epochs,
            dataset_hash: dataset_hash(target_windows),
            stage: "adda".into(),
        },
    );
    Ok(AddaOutcome {
        target_checkpoint,
        discriminator: disc,
        disc_losses,
        gen_losses,
        epoch_log,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KshotMethod {
    Finetune(MaskMode),
    Probe,
}

#[derive(Debug)]
pub struct KshotOutcome {
    pub runs: Vec<MetricReport>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_weighted_f1: f64,
    pub std_weighted_f1: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Repeatedly sample k labeled windows per class, adapt with the chosen
/// method, and evaluate on the held-out remainder.
pub fn kshot_eval<T: Scalar>(
    parent: &Checkpoint,
    labeled: &[LabeledWindow],
    num_classes: usize,
    k: usize,
    method: KshotMethod,
    cfg: &TrainConfig,
) -> Result<KshotOutcome> {
    if k == 0 {
        return Err(Error::InvalidArg("k must be >= 1".into()));
    }
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, lw) in labeled.iter().enumerate() {
        let c = lw.label.class_index();
        if c >= num_classes {
            return Err(Error::InvalidArg(format!(
                "label {} outside {num_classes}-class head",
                lw.label.name()
            )));
        }
        per_class[c].push(i);
    }
    for (c, idxs) in per_class.iter().enumerate() {
        if idxs.len() < k {
            return Err(Error::InvalidArg(format!(
                "class {c} has {} examples, k-shot needs at least {k}",
                idxs.len()
            )));
        }
    }
    let mut runs = Vec::with_capacity(cfg.repeats);
    for r in 0..cfg.repeats {
        let repeat_seed = cfg.seed.wrapping_add(r as u64).wrapping_mul(0x9e3779b97f4a7c15);
        let mut rng = ChaCha8Rng::seed_from_u64(repeat_seed);
        let mut train_idx = Vec::new();
        for idxs in &per_class {
            let mut pool = idxs.clone();
            pool.shuffle(&mut rng);
            train_idx.extend_from_slice(&pool[..k]);
        }
        train_idx.sort_unstable();
        let train_set: Vec<LabeledWindow> =
            train_idx.iter().map(|&i| labeled[i].clone()).collect();
        let eval_set: Vec<LabeledWindow> = (0..labeled.len())
            .filter(|i| train_idx.binary_search(i).is_err())
            .map(|i| labeled[i].clone())
            .collect();
        if eval_set.is_empty() {
            return Err(Error::InvalidArg(
                "k-shot evaluation has no held-out examples".into(),
            ));
        }
        let run_cfg = TrainConfig {
            seed: repeat_seed,
            ..cfg.clone()
        };
        let outcome = match method {
            KshotMethod::Finetune(mode) => {
                finetune::<T>(parent, &train_set, num_classes, mode, &run_cfg)?
            }
            KshotMethod::Probe => linear_probe::<T>(parent, &train_set, num_classes, &run_cfg)?,
        };
        let (encoder, head) = outcome.checkpoint.build_model::<T>()?;
        let head = head.expect("checkpoint stores the trained head");
        let eval_windows: Vec<Window> = eval_set.iter().map(|lw| lw.window.clone()).collect();
        let preds = predict_windows(&encoder, &head, &eval_windows)?;
        let truth: Vec<EventLabel> = eval_set.iter().map(|lw| lw.label).collect();
        runs.push(classification_metrics(&preds, &truth)?);
    }
    let accs: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
    let f1s: Vec<f64> = runs.iter().map(|r| r.weighted_f1).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&accs);
    let (mean_weighted_f1, std_weighted_f1) = mean_std(&f1s);
    Ok(KshotOutcome {
        runs,
        mean_accuracy,
        std_accuracy,
        mean_weighted_f1,
        std_weighted_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EncoderConfig;
    use rand::Rng;

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            in_channels: 3,
            window_len: 20,
            layer_channels: vec![4, 8],
            blocks_per_layer: 1,
            se_reduction: 2,
            adapter_bottleneck: 2,
            embedding_dim: 8,
            se_enabled: true,
            adapters_enabled: true,
        }
    }

    /// Windows whose class is encoded as a distinct oscillation frequency.
    fn class_window(class: usize, rng: &mut ChaCha8Rng) -> Window {
        let amp = [0.5, 1.5, 3.0][class];
        let phase: f64 = rng.gen_range(-0.3..0.3);
        let values = (0..20)
            .map(|t| {
                (0..3)
                    .map(|c| {
                        let carrier =
                            (std::f64::consts::TAU * 3.0 * t as f64 / 20.0 + phase).sin();
                        amp * carrier * (1.0 + 0.2 * c as f64) + rng.gen_range(-0.05..0.05)
                    })
                    .collect()
            })
            .collect();
        Window {
            values,
            start_index: 0,
            source_id: format!("class{class}"),
        }
    }

    fn labeled_set(per_class: usize, seed: u64) -> Vec<LabeledWindow> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for class in 0..3 {
            for _ in 0..per_class {
                out.push(LabeledWindow {
                    window: class_window(class, &mut rng),
                    label: EventLabel::from_class_index(class, 3).unwrap(),
                });
            }
        }
        out
    }

    fn unlabeled_set(n: usize, seed: u64) -> Vec<Window> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|i| class_window(i % 3, &mut rng)).collect()
    }

    fn init_ckpt(seed: u64) -> Checkpoint {
        let enc = CsiEncoder::<f32>::new(&tiny_cfg(), seed).unwrap();
        Checkpoint::from_model(&enc, None, Provenance::default())
    }

    #[test]
    fn pretrain_zero_epochs_keeps_initialization() {
        let enc = CsiEncoder::<f32>::new(&tiny_cfg(), 1).unwrap();
        let before = Checkpoint::from_model(&enc, None, Provenance::default());
        let proj = ProjectionHead::<f32>::new(8, 4, 2);
        let cfg = TrainConfig {
            epochs: 0,
            batch_size: 4,
            ..Default::default()
        };
        let out = pretrain_contrastive(
            &enc,
            &proj,
            &unlabeled_set(8, 3),
            &cfg,
            &AugmentPolicy::default(),
        )
        .unwrap();
        assert_eq!(out.checkpoint.blobs, before.blobs);
        assert!(out.epoch_losses.is_empty());
    }

    #[test]
    fn pretrain_loss_decreases() {
        let enc = CsiEncoder::<f32>::new(&tiny_cfg(), 1).unwrap();
        let proj = ProjectionHead::<f32>::new(8, 4, 2);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 8,
            encoder_lr: 1e-3,
            ..Default::default()
        };
        let out = pretrain_contrastive(
            &enc,
            &proj,
            &unlabeled_set(24, 3),
            &cfg,
            &AugmentPolicy::default(),
        )
        .unwrap();
        assert_eq!(out.epoch_losses.len(), 5);
        assert!(
            out.epoch_losses[4] < out.epoch_losses[0],
            "losses {:?}",
            out.epoch_losses
        );
    }

    #[test]
    fn pretrain_is_deterministic() {
        let run = || {
            let enc = CsiEncoder::<f32>::new(&tiny_cfg(), 1).unwrap();
            let proj = ProjectionHead::<f32>::new(8, 4, 2);
            let cfg = TrainConfig {
                epochs: 2,
                batch_size: 4,
                ..Default::default()
            };
            pretrain_contrastive(
                &enc,
                &proj,
                &unlabeled_set(8, 3),
                &cfg,
                &AugmentPolicy::default(),
            )
            .unwrap()
            .checkpoint
            .to_bytes()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn pretrain_rejects_tiny_corpus_and_bad_batch() {
        let enc = CsiEncoder::<f32>::new(&tiny_cfg(), 1).unwrap();
        let proj = ProjectionHead::<f32>::new(8, 4, 2);
        let cfg = TrainConfig {
            batch_size: 1,
            ..Default::default()
        };
        assert!(pretrain_contrastive(
            &enc,
            &proj,
            &unlabeled_set(8, 3),
            &cfg,
            &AugmentPolicy::default()
        )
        .is_err());
        let cfg = TrainConfig {
            batch_size: 4,
            ..Default::default()
        };
        assert!(
            pretrain_contrastive(&enc, &proj, &[], &cfg, &AugmentPolicy::default()).is_err()
        );
    }

    #[test]
    fn finetune_leaves_backbone_bit_unchanged() {
        let parent = init_ckpt(5);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 6,
            ..Default::default()
        };
        let out = finetune::<f32>(
            &parent,
            &labeled_set(4, 7),
            3,
            MaskMode::AdaptersAndHead,
            &cfg,
        )
        .unwrap();
        for blob in &parent.blobs {
            if blob.name.contains(".adapter.") {
                continue;
            }
            assert_eq!(
                out.checkpoint.blob(&blob.name).unwrap(),
                blob,
                "backbone blob {} changed",
                blob.name
            );
        }
        // and at least one adapter parameter did move
        assert!(parent
            .blobs
            .iter()
            .filter(|b| b.name.contains(".adapter."))
            .any(|b| out.checkpoint.blob(&b.name).unwrap() != b));
    }

    #[test]
    fn finetune_zero_epochs_keeps_adapters_identity() {
        let parent = init_ckpt(5);
        let cfg = TrainConfig {
            epochs: 0,
            batch_size: 4,
            ..Default::default()
        };
        let out = finetune::<f32>(
            &parent,
            &labeled_set(2, 7),
            3,
            MaskMode::AdaptersAndHead,
            &cfg,
        )
        .unwrap();
        for blob in &parent.blobs {
            assert_eq!(out.checkpoint.blob(&blob.name).unwrap(), blob);
        }
        assert_eq!(out.trainable_params, {
            // 2 adapters of (4 and 8 channels, bottleneck 2) + 3-class head
            let a1 = 4 * 2 + 2 + 2 * 4 + 4;
            let a2 = 8 * 2 + 2 + 2 * 8 + 8;
            a1 + a2 + (8 * 3 + 3)
        });
    }

    #[test]
    fn finetune_rejects_out_of_range_labels() {
        let parent = init_ckpt(5);
        let mut data = labeled_set(2, 7);
        data[0].label = EventLabel::Activity(5);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 8,
            ..Default::default()
        };
        assert!(finetune::<f32>(&parent, &data, 3, MaskMode::AdaptersAndHead, &cfg).is_err());
    }

    #[test]
    fn probe_keeps_encoder_frozen_and_learns_separable_classes() {
        let parent = init_ckpt(9);
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: 16,
            head_lr: 5e-2,
            ..Default::default()
        };
        let train = labeled_set(12, 1);
        let out = linear_probe::<f32>(&parent, &train, 3, &cfg).unwrap();
        assert_eq!(out.trainable_params, 8 * 3 + 3);
        for blob in &parent.blobs {
            assert_eq!(out.checkpoint.blob(&blob.name).unwrap(), blob);
        }
        let (enc, head) = out.checkpoint.build_model::<f32>().unwrap();
        let eval = labeled_set(10, 99);
        let windows: Vec<Window> = eval.iter().map(|lw| lw.window.clone()).collect();
        let preds = predict_windows(&enc, &head.unwrap(), &windows).unwrap();
        let truth: Vec<EventLabel> = eval.iter().map(|lw| lw.label).collect();
        let report = classification_metrics(&preds, &truth).unwrap();
        assert!(report.accuracy > 0.9, "probe accuracy {}", report.accuracy);
    }

    #[test]
    fn adda_smoke_source_unchanged() {
        let parent = init_ckpt(3);
        let src = unlabeled_set(12, 5);
        let tgt: Vec<Window> = unlabeled_set(12, 6)
            .into_iter()
            .map(|mut w| {
                for row in w.values.iter_mut() {
                    for v in row.iter_mut() {
                        *v += 1.5;
                    }
                }
                w
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 6,
            encoder_lr: 1e-4,
            head_lr: 1e-3,
            ..Default::default()
        };
        let before = parent.to_bytes();
        let out = adda_adapt::<f32>(&parent, &src, &tgt, &cfg).unwrap();
        assert_eq!(parent.to_bytes(), before);
        assert_eq!(out.disc_losses.len(), 2);
        assert!(out.disc_losses.iter().chain(&out.gen_losses).all(|l| l.is_finite()));
        // target encoder moved away from the source initialization
        assert!(parent
            .blobs
            .iter()
            .any(|b| out.target_checkpoint.blob(&b.name).map(|nb| nb != b).unwrap_or(false)));
        assert!(adda_adapt::<f32>(&parent, &src, &[], &cfg).is_err());
    }

    #[test]
    fn kshot_produces_one_row_per_repeat() {
        let parent = init_ckpt(2);
        let data = labeled_set(6, 4);
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 6,
            head_lr: 2e-2,
            repeats: 3,
            ..Default::default()
        };
        let out = kshot_eval::<f32>(&parent, &data, 3, 2, KshotMethod::Probe, &cfg).unwrap();
        assert_eq!(out.runs.len(), 3);
        assert!(out.std_accuracy >= 0.0);
        assert!(out.mean_accuracy >= 0.0 && out.mean_accuracy <= 1.0);
    }

    #[test]
    fn kshot_rejects_insufficient_examples() {
        let parent = init_ckpt(2);
        let data = labeled_set(2, 4);
        let cfg = TrainConfig {
            epochs: 1,
            repeats: 1,
            ..Default::default()
        };
        assert!(kshot_eval::<f32>(&parent, &data, 3, 5, KshotMethod::Probe, &cfg).is_err());
        assert!(kshot_eval::<f32>(&parent, &data, 3, 0, KshotMethod::Probe, &cfg).is_err());
        // k consuming every example leaves nothing held out
        assert!(kshot_eval::<f32>(&parent, &data, 3, 2, KshotMethod::Probe, &cfg).is_err());
    }

    #[test]
    fn windows_to_tensor_layout() {
        let w = Window {
            values: vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]],
            start_index: 0,
            source_id: "t".into(),
        };
        let t = windows_to_tensor::<f64>(&[&w]).unwrap();
        assert_eq!(t.shape(), vec![1, 2, 3]);
        // channel 0 then channel 1, each along time
        assert_eq!(t.data_clone(), vec![1.0, 3.0, 5.0, 2.0, 4.0, 6.0]);
    }

    fn gaussian_rows(n: usize, d: usize, mean: f64, seed: u64) -> Vec<Vec<f64>> {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(mean, 1.0).unwrap();
        (0..n)
            .map(|_| (0..d).map(|_| dist.sample(&mut rng)).collect())
            .collect()
    }

    #[test]
    fn domain_probe_separates_offset_clusters() {
        let src = gaussian_rows(40, 8, 0.0, 1);
        let tgt = gaussian_rows(40, 8, 4.0, 2);
        let acc = domain_probe_accuracy(&src, &tgt, 7).unwrap();
        assert!(acc > 0.9, "acc = {acc}");
    }

    #[test]
    fn domain_probe_near_chance_on_identical_distributions() {
        let src = gaussian_rows(60, 8, 0.0, 3);
        let tgt = gaussian_rows(60, 8, 0.0, 4);
        let acc = domain_probe_accuracy(&src, &tgt, 7).unwrap();
        assert!((acc - 0.5).abs() < 0.2, "acc = {acc}");
    }

    #[test]
    fn embed_windows_matches_forward() {
        let cfg = tiny_cfg();
        let enc = CsiEncoder::<f32>::new(&cfg, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = class_window(0, &mut rng);
        let rows = embed_windows(&enc, std::slice::from_ref(&w)).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].len(), cfg.embedding_dim);
        let x = windows_to_tensor::<f32>(&[&w]).unwrap();
        let e = enc.forward(&Graph::inference(), &x, Mode::Eval).unwrap();
        let direct: Vec<f64> = e.data_clone().iter().map(|&v| Scalar::to_f64(v)).collect();
        assert_eq!(rows[0], direct);
    }
}
