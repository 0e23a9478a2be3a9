//! Trains briefly, scores the test split and the robustness grid, and
//! renders both reports as PNG charts plus markdown tables.
//!
//! ```text
//! cargo run --release --example eval_report -- /tmp/plots
//! ```

use std::path::PathBuf;

use freespace::config::{ModelConfig, TrainConfig};
use freespace::data::{load_split, Split};
use freespace::evaluation::{evaluate_dataset, EvalConfig};
use freespace::fusion::Model;
use freespace::harness::{run_robustness, train};
use freespace::report::{render, ReportInput};
use freespace::synthgen::{generate_benchmark, BenchmarkOptions};

fn main() -> freespace::Result<()> {
    let plots = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "plots".into()));
    let data = std::env::temp_dir().join("freespace-eval-report-example");
    let _ = std::fs::remove_dir_all(&data);
    let opts = BenchmarkOptions {
        n_sequences: 5,
        n_frames: 16,
        resolution: (112, 112),
        ..Default::default()
    };
    generate_benchmark(1, &data, &opts)?;

    let mut model = Model::new(ModelConfig::tiny(), 0)?;
    let tc = TrainConfig {
        iterations: 60,
        learning_rate: 0.01,
        ..Default::default()
    };
    train(&mut model, &load_split(&data, Split::Train)?, &tc, |_| Ok(()))?;

    let test = load_split(&data, Split::Test)?;
    let report = evaluate_dataset(&model, &test, &EvalConfig::default())?;
    let robustness = run_robustness(&model, &test, &EvalConfig::default())?;
    for input in [ReportInput::Eval(report), ReportInput::Robustness(robustness)] {
        for path in render(&input, &plots)? {
            println!("{}", path.display());
        }
    }
    Ok(())
}
