//! Pipeline driver. Each subcommand is one stage; all outputs land in a
//! run directory together with the fully-resolved config, so a run can be
//! reproduced from its own artifacts.
//!
//! Run directory layout:
//!   config.toml            resolved configuration
//!   raw/*.csv              synthetic sessions (+ .events.csv sidecars)
//!   splits.csv             script -> train/val/test assignment
//!   filtered/*.csv         low-pass filtered sessions
//!   *.ckpt, *_log.csv      stage checkpoints and epoch logs
//!   counts/, eval_*.csv    counter traces and metric reports

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use csicount::config::RunConfig;
use csicount::counter::run_trace;
use csicount::dsp::{
    apply_lowpass, purify_labels, segment_windows, CsiSeries, FilterMode, FilterSpec,
    LabeledWindow, Window,
};
use csicount::io::{
    atomic_write, read_csi_csv, read_events_csv, write_csi_csv, write_events_csv, Checkpoint,
};
use csicount::metrics::{classification_metrics, counting_errors};
use csicount::model::{describe as describe_model, set_trainable, ClassificationHead, CsiEncoder, ProjectionHead};
use csicount::synth::{generate_series, random_script, DomainProfile};
use csicount::train::{adda_adapt, finetune, linear_probe, predict_windows, pretrain_contrastive};
use csicount::{Error, EventLabel, Result};

#[derive(Parser)]
#[command(name = "csicount", version, about = "WiFi-CSI occupancy counting pipeline")]
struct Cli {
    /// Path to a run config TOML; defaults are used when omitted.
    #[arg(long, global = true, env = "CSICOUNT_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scripted synthetic CSI sessions into a run directory.
    Synth {
        #[arg(long, env = "CSICOUNT_RUN")]
        run: PathBuf,
        /// Domain profile: "source" or "target".
        #[arg(long, default_value = "source")]
        profile: String,
    },
    /// Low-pass filter the raw sessions of a run.
    Preprocess {
        #[arg(long, env = "CSICOUNT_RUN")]
        run: PathBuf,
    },
    /// Contrastive pre-training on the unlabeled train split.
    Pretrain {
        #[arg(long, env = "CSICOUNT_RUN")]
        run: PathBuf,
    },
    /// Supervised fine-tuning under the configured parameter mask.
    Finetune {
        #[arg(long, env = "CSICOUNT_RUN")]
        run: PathBuf,
        /// Parent checkpoint; defaults to <run>/pretrain.ckpt.
        #[arg(long)]
        parent: Option<PathBuf>,
    },
    /// Linear probe: train only the classification head.
    Probe {
        #[arg(long, env = "CSICOUNT_RUN")]
        run: PathBuf,
        #[arg(long)]
        parent: Option<PathBuf>,
    },
    /// Adversarial domain adaptation toward a target-domain run.
    Adda {
        #[arg(long, env = "CSICOUNT_RUN")]
        run: PathBuf,
        /// Run directory holding the (preprocessed) target-domain data.
        #[arg(long)]
        target_run: PathBuf,
        #[arg(long)]
        parent: Option<PathBuf>,
    },
    /// Run the occupancy counter over the test sessions.
    Count {
        #[arg(long, env = "CSICOUNT_RUN")]
        run: PathBuf,
        /// Classifier checkpoint; defaults to <run>/finetune.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Use ground-truth window labels instead of a model.
        #[arg(long)]
        oracle: bool,
    },
    /// Classification metrics of a checkpoint on the test split.
    Eval {
        #[arg(long, env = "CSICOUNT_RUN")]
        run: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print the per-layer parameter table for the configured model.
    Describe,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Synth { run, profile } => cmd_synth(&cfg, &run, &profile),
        Command::Preprocess { run } => cmd_preprocess(&cfg, &run),
        Command::Pretrain { run } => cmd_pretrain(&cfg, &run),
        Command::Finetune { run, parent } => cmd_finetune(&cfg, &run, parent.as_deref()),
        Command::Probe { run, parent } => cmd_probe(&cfg, &run, parent.as_deref()),
        Command::Adda {
            run,
            target_run,
            parent,
        } => cmd_adda(&cfg, &run, &target_run, parent.as_deref()),
        Command::Count {
            run,
            checkpoint,
            oracle,
        } => cmd_count(&cfg, &run, checkpoint.as_deref(), oracle),
        Command::Eval { run, checkpoint } => cmd_eval(&cfg, &run, checkpoint.as_deref()),
        Command::Describe => cmd_describe(&cfg),
    }
}

/// Create the run directory (if needed) and pin the resolved config in it.
fn init_run(cfg: &RunConfig, run: &Path) -> Result<()> {
    std::fs::create_dir_all(run)?;
    cfg.save(&run.join("config.toml"))
}

fn cmd_synth(cfg: &RunConfig, run: &Path, profile: &str) -> Result<()> {
    let profile = match profile {
        "source" => DomainProfile::source(),
        "target" => DomainProfile::target(),
        other => return Err(Error::InvalidArg(format!("unknown profile '{other}'"))),
    };
    init_run(cfg, run)?;
    let raw = run.join("raw");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_scripts;
    let n_train = (((n as f64) * cfg.split_train).round() as usize).clamp(1, n);
    let n_val = (((n as f64) * cfg.split_val).round() as usize).min(n - n_train);
    let mut splits = String::from("script,split\n");
    for i in 0..n {
        let script = random_script(&format!("script{i:03}"), &mut rng);
        let series = generate_series(&script, &profile, cfg.in_channels, cfg.seed ^ (i as u64 + 1))?;
        write_csi_csv(&series, &raw.join(format!("{}.csv", script.name)))?;
        write_events_csv(&series.event_marks, &raw.join(format!("{}.events.csv", script.name)))?;
        let split = if i < n_train {
            "train"
        } else if i < n_train + n_val {
            "val"
        } else {
            "test"
        };
        splits.push_str(&format!("{},{split}\n", script.name));
    }
    atomic_write(&run.join("splits.csv"), splits.as_bytes())?;
    println!("wrote {n} sessions under {}", raw.display());
    Ok(())
}

/// Scripts of one split, with their event sidecars, from a stage directory.
fn load_split(cfg: &RunConfig, run: &Path, stage: &str, split: &str) -> Result<Vec<CsiSeries>> {
    let text = std::fs::read_to_string(run.join("splits.csv"))?;
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let Some((name, s)) = line.split_once(',') else {
            return Err(Error::Parse {
                line: 0,
                msg: format!("bad splits.csv line '{line}'"),
            });
        };
        if s != split {
            continue;
        }
        let dir = run.join(stage);
        let mut series = read_csi_csv(
            &dir.join(format!("{name}.csv")),
            Some(cfg.in_channels),
            cfg.sample_rate_hz,
        )?;
        series.event_marks = read_events_csv(&dir.join(format!("{name}.events.csv")))?;
        out.push(series);
    }
    if out.is_empty() {
        return Err(Error::InvalidArg(format!(
            "run {} has no '{split}' sessions under {stage}/",
            run.display()
        )));
    }
    Ok(out)
}

fn cmd_preprocess(cfg: &RunConfig, run: &Path) -> Result<()> {
    init_run(cfg, run)?;
    let spec = FilterSpec::new(cfg.filter_order, cfg.filter_cutoff_hz, cfg.sample_rate_hz)?;
    let out_dir = run.join("filtered");
    let mut count = 0;
    for split in ["train", "val", "test"] {
        let sessions = match load_split(cfg, run, "raw", split) {
            Ok(s) => s,
            Err(Error::InvalidArg(_)) => continue, // empty split is fine
            Err(e) => return Err(e),
        };
        for series in sessions {
            let filtered = apply_lowpass(&series, &spec, FilterMode::ZeroPhase)?;
            write_csi_csv(&filtered, &out_dir.join(format!("{}.csv", series.source_id)))?;
            write_events_csv(
                &series.event_marks,
                &out_dir.join(format!("{}.events.csv", series.source_id)),
            )?;
            count += 1;
        }
    }
    println!("filtered {count} sessions into {}", out_dir.display());
    Ok(())
}

fn labeled_windows(cfg: &RunConfig, sessions: &[CsiSeries]) -> Vec<LabeledWindow> {
    sessions
        .iter()
        .flat_map(|s| {
            let windows = segment_windows(s, cfg.window_len, cfg.window_step);
            purify_labels(&windows, s, cfg.event_span_s)
        })
        .collect()
}

fn write_epoch_log(path: &Path, lines: &[String]) -> Result<()> {
    atomic_write(path, (lines.join("\n") + "\n").as_bytes())
}

fn cmd_pretrain(cfg: &RunConfig, run: &Path) -> Result<()> {
    init_run(cfg, run)?;
    let sessions = load_split(cfg, run, "filtered", "train")?;
    let windows: Vec<Window> = labeled_windows(cfg, &sessions)
        .into_iter()
        .map(|lw| lw.window)
        .collect();
    let encoder = CsiEncoder::<f32>::new(&cfg.encoder_config(), cfg.seed)?;
    let projection = ProjectionHead::<f32>::new(cfg.embedding_dim, cfg.projection_dim, cfg.seed);
    let mut tc = cfg.train_config()?;
    tc.encoder_lr = cfg.encoder_lr;
    let out = pretrain_contrastive(&encoder, &projection, &windows, &tc, &cfg.augment_policy())?;
    for line in &out.epoch_log {
        println!("{line}");
    }
    out.checkpoint.save(&run.join("pretrain.ckpt"))?;
    write_epoch_log(&run.join("pretrain_log.csv"), &out.epoch_log)?;
    println!("saved {}", run.join("pretrain.ckpt").display());
    Ok(())
}

fn parent_checkpoint(run: &Path, explicit: Option<&Path>, default_name: &str) -> Result<Checkpoint> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => run.join(default_name),
    };
    Checkpoint::load(&path)
}

fn cmd_finetune(cfg: &RunConfig, run: &Path, parent: Option<&Path>) -> Result<()> {
    init_run(cfg, run)?;
    let parent = parent_checkpoint(run, parent, "pretrain.ckpt")?;
    let labeled = labeled_windows(cfg, &load_split(cfg, run, "filtered", "train")?);
    let out = finetune::<f32>(&parent, &labeled, cfg.num_classes, cfg.mask()?, &cfg.train_config()?)?;
    for line in &out.epoch_log {
        println!("{line}");
    }
    println!("trainable parameters: {}", out.trainable_params);
    out.checkpoint.save(&run.join("finetune.ckpt"))?;
    write_epoch_log(&run.join("finetune_log.csv"), &out.epoch_log)?;
    println!("saved {}", run.join("finetune.ckpt").display());
    Ok(())
}

fn cmd_probe(cfg: &RunConfig, run: &Path, parent: Option<&Path>) -> Result<()> {
    init_run(cfg, run)?;
    let parent = parent_checkpoint(run, parent, "pretrain.ckpt")?;
    let labeled = labeled_windows(cfg, &load_split(cfg, run, "filtered", "train")?);
    let out = linear_probe::<f32>(&parent, &labeled, cfg.num_classes, &cfg.train_config()?)?;
    for line in &out.epoch_log {
        println!("{line}");
    }
    println!("trainable parameters: {}", out.trainable_params);
    out.checkpoint.save(&run.join("probe.ckpt"))?;
    write_epoch_log(&run.join("probe_log.csv"), &out.epoch_log)?;
    println!("saved {}", run.join("probe.ckpt").display());
    Ok(())
}

fn cmd_adda(cfg: &RunConfig, run: &Path, target_run: &Path, parent: Option<&Path>) -> Result<()> {
    init_run(cfg, run)?;
    let parent = parent_checkpoint(run, parent, "pretrain.ckpt")?;
    let src: Vec<Window> = labeled_windows(cfg, &load_split(cfg, run, "filtered", "train")?)
        .into_iter()
        .map(|lw| lw.window)
        .collect();
    let tgt: Vec<Window> = labeled_windows(cfg, &load_split(cfg, target_run, "filtered", "train")?)
        .into_iter()
        .map(|lw| lw.window)
        .collect();
    let out = adda_adapt::<f32>(&parent, &src, &tgt, &cfg.train_config()?)?;
    for line in &out.epoch_log {
        println!("{line}");
    }
    out.target_checkpoint.save(&run.join("adda.ckpt"))?;
    write_epoch_log(&run.join("adda_log.csv"), &out.epoch_log)?;
    println!("saved {}", run.join("adda.ckpt").display());
    Ok(())
}

/// True occupancy after the session: cumulative enters minus exits.
fn truth_occupancy(marks: &[(f64, EventLabel)]) -> i64 {
    marks
        .iter()
        .map(|&(_, l)| match l {
            EventLabel::Enter => 1,
            EventLabel::Exit => -1,
            _ => 0,
        })
        .sum()
}

fn cmd_count(cfg: &RunConfig, run: &Path, checkpoint: Option<&Path>, oracle: bool) -> Result<()> {
    init_run(cfg, run)?;
    let sessions = load_split(cfg, run, "filtered", "test")?;
    let model = if oracle {
        None
    } else {
        let ckpt = parent_checkpoint(run, checkpoint, "finetune.ckpt")?;
        let (enc, head) = ckpt.build_model::<f32>()?;
        let head = head.ok_or_else(|| {
            Error::Checkpoint("counting needs a checkpoint with a classification head".into())
        })?;
        Some((enc, head))
    };
    let counts_dir = run.join("counts");
    let mut summary = String::from("script,estimate,truth\n");
    let mut estimates = Vec::new();
    let mut truths = Vec::new();
    for series in &sessions {
        let labeled = labeled_windows(cfg, std::slice::from_ref(series));
        let preds: Vec<EventLabel> = match &model {
            None => labeled.iter().map(|lw| lw.label).collect(),
            Some((enc, head)) => {
                let windows: Vec<Window> = labeled.iter().map(|lw| lw.window.clone()).collect();
                predict_windows(enc, head, &windows)?
            }
        };
        let trace = run_trace(&preds, &cfg.counter_config())?;
        atomic_write(
            &counts_dir.join(format!("{}.trace.csv", series.source_id)),
            trace.to_csv().as_bytes(),
        )?;
        let estimate = trace.final_occupancy();
        let truth = truth_occupancy(&series.event_marks);
        summary.push_str(&format!("{},{estimate},{truth}\n", series.source_id));
        estimates.push(estimate);
        truths.push(truth);
    }
    let (mae, rmse) = counting_errors(&estimates, &truths)?;
    summary.push_str(&format!("_mae,{mae},\n_rmse,{rmse},\n"));
    atomic_write(&run.join("count_summary.csv"), summary.as_bytes())?;
    println!("counted {} sessions: mae={mae:.3} rmse={rmse:.3}", sessions.len());
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, run: &Path, checkpoint: Option<&Path>) -> Result<()> {
    init_run(cfg, run)?;
    let ckpt = parent_checkpoint(run, checkpoint, "finetune.ckpt")?;
    let (enc, head) = ckpt.build_model::<f32>()?;
    let head = head.ok_or_else(|| {
        Error::Checkpoint("evaluation needs a checkpoint with a classification head".into())
    })?;
    let labeled = labeled_windows(cfg, &load_split(cfg, run, "filtered", "test")?);
    let windows: Vec<Window> = labeled.iter().map(|lw| lw.window.clone()).collect();
    let labels: Vec<EventLabel> = labeled.iter().map(|lw| lw.label).collect();
    let preds = predict_windows(&enc, &head, &windows)?;
    let report = classification_metrics(&preds, &labels)?;
    atomic_write(&run.join("eval_metrics.csv"), report.to_csv().as_bytes())?;
    println!("{}", report.to_table());
    Ok(())
}

fn cmd_describe(cfg: &RunConfig) -> Result<()> {
    let encoder = CsiEncoder::<f32>::new(&cfg.encoder_config(), cfg.seed)?;
    let head = ClassificationHead::<f32>::new(cfg.embedding_dim, cfg.num_classes, cfg.seed);
    let mask = set_trainable(&encoder, Some(&head), cfg.mask()?);
    println!("{}", describe_model(&encoder, Some(&head), Some(&mask)));
    Ok(())
}
