//! Module ablation on a small benchmark: the full model and each module
//! switched off, trained with the same seed.
//!
//! ```text
//! cargo run --release --example ablation -- [iterations=40]
//! ```

use freespace::config::{ExperimentConfig, ModelConfig, TrainConfig};
use freespace::data::{load_split, Split};
use freespace::evaluation::EvalConfig;
use freespace::harness::run_ablation;
use freespace::report::ablation_table;
use freespace::synthgen::{generate_benchmark, BenchmarkOptions};

fn main() -> freespace::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(40);
    let dir = tempfile_dir("freespace-ablation-example");
    let opts = BenchmarkOptions {
        n_sequences: 5,
        n_frames: 12,
        resolution: (112, 112),
        ..Default::default()
    };
    generate_benchmark(0, &dir, &opts)?;
    let cfg = ExperimentConfig {
        model: ModelConfig::tiny(),
        train: TrainConfig {
            iterations,
            learning_rate: 0.01,
            ..Default::default()
        },
    };
    let table = run_ablation(
        &cfg,
        &load_split(&dir, Split::Train)?,
        &load_split(&dir, Split::Test)?,
        &EvalConfig::default(),
    )?;
    print!("{}", ablation_table(&table));
    Ok(())
}

fn tempfile_dir(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}
