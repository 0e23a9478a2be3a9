//! Trains the tiny configuration on a generated benchmark and evaluates it
//! on the test split.
//!
//! ```text
//! cargo run --release --example train_tiny -- /tmp/bench [iterations] [learning_rate] [seed] [n_prev_pick] [step_every] [gamma_permille]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use freespace::config::{LrSchedule, ModelConfig, TrainConfig};
use freespace::data::{load_split, Split};
use freespace::evaluation::{evaluate_dataset, EvalConfig};
use freespace::fusion::Model;
use freespace::harness::train;

fn main() -> freespace::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let data = PathBuf::from(arg(0, "benchmark"));
    let tc = TrainConfig {
        iterations: arg(1, "300").parse().unwrap(),
        learning_rate: arg(2, "0.01").parse().unwrap(),
        seed: arg(3, "0").parse().unwrap(),
        schedule: match arg(5, "0").parse().unwrap() {
            0 => LrSchedule::Constant,
            every => LrSchedule::Step {
                every,
                gamma_permille: arg(6, "500").parse().unwrap(),
            },
        },
        ..TrainConfig::default()
    };
    let cfg = ModelConfig {
        n_prev_pick: arg(4, "2").parse().unwrap(),
        ..ModelConfig::tiny()
    };
    let train_seqs = load_split(&data, Split::Train)?;
    let test_seqs = load_split(&data, Split::Test)?;
    let mut model = Model::new(cfg, tc.seed)?;
    println!("{} parameters", model.parameter_count());
    let start = Instant::now();
    train(&mut model, &train_seqs, &tc, |r| {
        if r.iteration % 50 == 0 || r.iteration + 1 == tc.iterations {
            println!(
                "iter {:4}  total {:.4}  ce {:.4}  dice {:.4}  con {:.5}  ({:.1}s)",
                r.iteration,
                r.total,
                r.l_ce,
                r.l_dice,
                r.l_con,
                start.elapsed().as_secs_f64()
            );
        }
        Ok(())
    })?;
    let report = evaluate_dataset(&model, &test_seqs, &EvalConfig::default())?;
    println!(
        "test: miou_selected {:.4}  miou_full {:.4}  contour {:.2} px  ({} frames)",
        report.miou_selected,
        report.miou_full,
        report.contour_dist_px.unwrap_or(f64::NAN),
        report.frames_evaluated
    );
    Ok(())
}
