use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use freespace::checkpoint::{self, CheckpointMeta};
use freespace::config::{ExperimentConfig, ModelConfig};
use freespace::data::{load_split, Split};
use freespace::evaluation::{evaluate_dataset, EvalConfig, ZoneMode};
use freespace::fusion::Model;
use freespace::harness::{run_ablation, run_robustness, train, write_log, PickMode};
use freespace::report::{render, ReportInput};
use freespace::synthgen::{generate_benchmark, BenchmarkOptions};
use freespace::{Error, Result};

#[derive(Parser)]
#[command(name = "freespace", version, about = "Temporal-fusion free-space segmentation on waterways")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark.
    Generate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Frames per sequence.
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        sequences: Option<usize>,
        /// Square frame size in pixels.
        #[arg(long)]
        size: Option<usize>,
    },
    /// Train on the train split and write a checkpoint plus a JSON-lines log.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (model.ckpt, train_log.jsonl).
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        band_px: Option<usize>,
        /// Report path; the per-frame CSV is written next to it.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Score a checkpoint under reversed order and dropped frames.
    Robustness {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Train and score the full model and each module switched off.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Render PNG charts and markdown tables from a report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        plots: PathBuf,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, value_enum, default_value_t = Zone::Symmetric)]
    zone: Zone,
    #[arg(long, value_enum, default_value_t = Pick::RandomKOfM)]
    pick: Pick,
    /// Seed for the evaluation frame picks.
    #[arg(long, default_value_t = 0)]
    eval_seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Zone {
    Symmetric,
    BelowOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum Pick {
    RandomKOfM,
    FixedLastK,
}

impl EvalArgs {
    fn config(&self, band_px: Option<usize>) -> EvalConfig {
        EvalConfig {
            band_width_px: band_px,
            zone_mode: match self.zone {
                Zone::Symmetric => ZoneMode::Symmetric,
                Zone::BelowOnly => ZoneMode::BelowOnly,
            },
            pick_mode: match self.pick {
                Pick::RandomKOfM => PickMode::RandomKOfM,
                Pick::FixedLastK => PickMode::FixedLastK,
            },
            seed: self.eval_seed,
            ..EvalConfig::default()
        }
    }
}

/// Each flag replaces the config key of the same name.
#[derive(Args)]
struct Overrides {
    /// Start from the desk-scale model instead of the full-size default.
    #[arg(long)]
    tiny: bool,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_prev_pool: Option<usize>,
    #[arg(long)]
    n_prev_pick: Option<usize>,
    #[arg(long)]
    attention_heads: Option<usize>,
    #[arg(long)]
    use_tpe: Option<bool>,
    #[arg(long)]
    use_man: Option<bool>,
    #[arg(long)]
    use_dcn: Option<bool>,
    #[arg(long)]
    use_contour_loss: Option<bool>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    n_c: Option<usize>,
}

impl Overrides {
    fn apply(&self, config: Option<&Path>) -> Result<ExperimentConfig> {
        let mut cfg = match config {
            Some(p) => ExperimentConfig::load(p)?,
            None if self.tiny => ExperimentConfig {
                model: ModelConfig::tiny(),
                ..Default::default()
            },
            None => ExperimentConfig::default(),
        };
        let (m, t) = (&mut cfg.model, &mut cfg.train);
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(t.iterations, self.iterations);
        set!(t.learning_rate, self.learning_rate);
        set!(t.batch_size, self.batch_size);
        set!(t.momentum, self.momentum);
        set!(t.weight_decay, self.weight_decay);
        set!(t.seed, self.seed);
        set!(m.n_prev_pool, self.n_prev_pool);
        set!(m.n_prev_pick, self.n_prev_pick);
        set!(m.attention_heads, self.attention_heads);
        set!(m.use_tpe, self.use_tpe);
        set!(m.use_man, self.use_man);
        set!(m.use_dcn, self.use_dcn);
        set!(m.use_contour_loss, self.use_contour_loss);
        set!(m.beta, self.beta);
        set!(m.n_c, self.n_c);
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.into(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            seed,
            out,
            frames,
            sequences,
            size,
        } => {
            let d = BenchmarkOptions::default();
            let opts = BenchmarkOptions {
                n_frames: frames.unwrap_or(d.n_frames),
                n_sequences: sequences.unwrap_or(d.n_sequences),
                resolution: size.map_or(d.resolution, |s| (s, s)),
                ..d
            };
            let index = generate_benchmark(seed, &out, &opts)?;
            for split in [Split::Train, Split::Val, Split::Test] {
                println!("{split}: {}", index.ids(split).join(" "));
            }
        }
        Command::Train {
            data,
            config,
            out,
            overrides,
        } => {
            let cfg = overrides.apply(config.as_deref())?;
            let seqs = load_split(&data, Split::Train)?;
            let mut model = Model::new(cfg.model.clone(), cfg.train.seed)?;
            let log = train(&mut model, &seqs, &cfg.train, |r| {
                if r.iteration % 50 == 0 || r.iteration + 1 == cfg.train.iterations {
                    eprintln!("iter {:5}  loss {:.5}", r.iteration, r.total);
                }
                Ok(())
            })?;
            create_dir(&out)?;
            let meta = CheckpointMeta {
                train: Some(cfg.train.clone()),
                iterations_done: log.len(),
                final_loss: log.last().map(|r| r.total),
            };
            checkpoint::save(&model, &meta, &out.join("model.ckpt"))?;
            write_log(&out.join("train_log.jsonl"), &log)?;
            println!("{}", out.join("model.ckpt").display());
        }
        Command::Eval {
            ckpt,
            data,
            band_px,
            out,
            eval,
        } => {
            let (model, _) = checkpoint::load(&ckpt)?;
            let seqs = load_split(&data, eval.split)?;
            let report = evaluate_dataset(&model, &seqs, &eval.config(band_px))?;
            println!(
                "miou_selected {:.4}  miou_full {:.4}  frames {}",
                report.miou_selected, report.miou_full, report.frames_evaluated
            );
            let out = out.unwrap_or_else(|| PathBuf::from("report.json"));
            report.save(&out)?;
            let csv = out.with_extension("csv");
            std::fs::write(&csv, report.to_csv()).map_err(|e| Error::Io { path: csv, source: e })?;
        }
        Command::Robustness { ckpt, data, out, eval } => {
            let (model, _) = checkpoint::load(&ckpt)?;
            let seqs = load_split(&data, eval.split)?;
            let table = run_robustness(&model, &seqs, &eval.config(None))?;
            for s in &table.summary {
                println!("{:<14} miou_selected {:.4}  miou_full {:.4}", s.label, s.miou_selected, s.miou_full);
            }
            table.save(&out.unwrap_or_else(|| PathBuf::from("robustness.json")))?;
        }
        Command::Ablate {
            data,
            config,
            out,
            overrides,
            eval,
        } => {
            let cfg = overrides.apply(config.as_deref())?;
            let train_seqs = load_split(&data, Split::Train)?;
            let eval_seqs = load_split(&data, eval.split)?;
            let table = run_ablation(&cfg, &train_seqs, &eval_seqs, &eval.config(None))?;
            for r in &table.rows {
                println!("{:<22} miou_selected {:.4}  miou_full {:.4}", r.name, r.miou_selected, r.miou_full);
            }
            table.save(&out.unwrap_or_else(|| PathBuf::from("ablation.json")))?;
        }
        Command::Report { input, plots } => {
            for p in render(&ReportInput::load(&input)?, &plots)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
